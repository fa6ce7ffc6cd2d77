//! Contrastive dimension reduction.
//!
//! Finds low-dimensional structure that is enriched in a foreground
//! (case/treatment) dataset relative to a background (control) dataset.
//!
//! * [`linalg`]: dense linear-algebra substrate and subspace geometry.
//! * [`linear`]: contrastive PCA, generalized contrastive PCA, contrastive CUR.
//! * [`model`]: probabilistic contrastive PCA and the contrastive latent variable model.
//! * [`structured`]: functional, inverse-regression and regression variants.
//! * [`preprocess`]: background validity testing and contrastive dimension estimation.
//! * [`synth`]: seeded generators and brute-force oracles.

pub mod embedding;
pub mod error;
pub mod linalg;
pub mod linear;
pub mod model;
pub mod preprocess;
pub mod structured;
pub mod synth;

pub use embedding::{Embedding, Provenance};
pub use error::{CdrError, Result};
pub use linalg::{DataMatrix, EigenPairs, StiefelPoint, SymMatrix};
