use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// How an embedding was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    /// Hyperparameters by name, in insertion order.
    pub hyperparameters: Vec<(String, f64)>,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn new(method: impl Into<String>) -> Self {
        Self {
            method: method.into(),
            hyperparameters: Vec::new(),
            seed: None,
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.hyperparameters.push((name.to_string(), value));
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

/// An n x d reduced representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: DMatrix<f64>,
    pub provenance: Provenance,
}

impl Embedding {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }
}
