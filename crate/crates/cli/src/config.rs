//! Pipeline configuration: one JSON document.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use contrastkit::linear::GcpcaVariant;
use contrastkit::preprocess::{CdeResampling, DimRule, FisherTail};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const SEED_ENV: &str = "CONTRASTKIT_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Cpca,
    Gcpca(GcpcaVariant),
    Ccur,
    Pcpca,
    Clvm,
    Cfpca,
    Cir,
    Clr,
}

impl Method {
    pub fn needs_response(self) -> bool {
        matches!(self, Method::Cir | Method::Clr)
    }

    /// Methods with a contrast strength γ.
    pub fn uses_gamma(self) -> bool {
        matches!(self, Method::Cpca | Method::Pcpca | Method::Cfpca | Method::Cir)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Cpca => f.write_str("cpca"),
            Method::Gcpca(v) => write!(f, "gcpca:{v}"),
            Method::Ccur => f.write_str("ccur"),
            Method::Pcpca => f.write_str("pcpca"),
            Method::Clvm => f.write_str("clvm"),
            Method::Cfpca => f.write_str("cfpca"),
            Method::Cir => f.write_str("cir"),
            Method::Clr => f.write_str("clr"),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "cpca" => Method::Cpca,
            "gcpca" | "gcpca:v1" => Method::Gcpca(GcpcaVariant::V1),
            "gcpca:v2" => Method::Gcpca(GcpcaVariant::V2),
            "gcpca:v3" => Method::Gcpca(GcpcaVariant::V3),
            "ccur" => Method::Ccur,
            "pcpca" => Method::Pcpca,
            "clvm" => Method::Clvm,
            "cfpca" => Method::Cfpca,
            "cir" => Method::Cir,
            "clr" => Method::Clr,
            other => return Err(format!("unknown method `{other}`")),
        })
    }
}

impl Serialize for Method {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

fn default_alpha() -> f64 {
    0.05
}

fn default_replicates() -> usize {
    1000
}

fn default_epsilon() -> f64 {
    0.05
}

fn default_true() -> bool {
    true
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub foreground_path: PathBuf,
    /// One background, or several candidates for background selection.
    pub background_paths: Vec<PathBuf>,
    #[serde(default)]
    pub response_column: Option<String>,
    pub method: Method,
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Absent means the estimated contrastive dimension is used.
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(rename = "B", default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon_cde: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon_bascod: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_true")]
    pub has_header: bool,
    /// How subspace dimensions are chosen for the tests.
    #[serde(default)]
    pub dim_rule: DimRule,
    #[serde(default)]
    pub cde_resampling: CdeResampling,
    #[serde(default)]
    pub bascod_tail: FisherTail,
    /// Shared latent dimension for CLVM; defaults to the background
    /// subspace dimension.
    #[serde(default)]
    pub shared_dim: Option<usize>,
    /// Hash of the document as written (after the seed override), fixed
    /// before relative paths are resolved.
    #[serde(skip)]
    source_hash: Option<String>,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config file, applies the seed override from the environment
    /// and resolves relative paths against the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let Ok(raw) = std::env::var(SEED_ENV) {
            cfg.seed = raw
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{SEED_ENV}=`{raw}` is not an unsigned integer")))?;
        }
        cfg.source_hash = Some(cfg.hash());
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.foreground_path);
        self.background_paths.iter_mut().for_each(fix);
        fix(&mut self.output_dir);
    }

    /// Checks everything that can be checked before touching data.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.background_paths.is_empty() {
            return bad("background_paths needs at least one entry".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.replicates < 100 {
            return bad(format!("B must be at least 100, got {}", self.replicates));
        }
        if !(self.epsilon_cde > 0.0 && self.epsilon_cde < 1.0) {
            return bad(format!("epsilon_cde must lie in (0, 1), got {}", self.epsilon_cde));
        }
        if !(self.epsilon_bascod > 0.0 && self.epsilon_bascod < 0.5) {
            return bad(format!("epsilon_bascod must lie in (0, 0.5), got {}", self.epsilon_bascod));
        }
        if let Some(g) = self.gamma {
            if !(g >= 0.0 && g.is_finite()) {
                return bad(format!("gamma must be finite and >= 0, got {g}"));
            }
            if !self.method.uses_gamma() {
                return bad(format!("method {} takes no gamma", self.method));
            }
        }
        if self.d == Some(0) {
            return bad("d must be at least 1".into());
        }
        if self.method.needs_response() && self.response_column.is_none() {
            return bad(format!("method {} needs response_column", self.method));
        }
        if self.response_column.is_some() && !self.has_header {
            return bad("response_column needs a header row".into());
        }
        match self.dim_rule {
            DimRule::Fixed(0) => return bad("dim_rule fixed dimension must be at least 1".into()),
            DimRule::VarianceThreshold(t) if !(t > 0.0 && t < 1.0) => {
                return bad(format!("variance threshold must lie in (0, 1), got {t}"))
            }
            _ => {}
        }
        Ok(())
    }

    /// SHA-256 of the configuration's JSON encoding. For a loaded config
    /// this is computed before path resolution, so it does not depend on
    /// where the files live.
    pub fn hash(&self) -> String {
        if let Some(h) = &self.source_hash {
            return h.clone();
        }
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
