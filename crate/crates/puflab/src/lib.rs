//! Desk-scale workbench for bistable-ring PUF families: additive-strength
//! simulation, challenge pipelines, quality metrics, challenge obfuscation,
//! and machine-learning modeling attacks (deep fully connected nets, a
//! single-layer baseline, LDA separability analysis, polynomial-kernel SVM).

pub mod bits;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod lfsr;
pub mod metrics;
pub mod ml;
pub mod obfuscation;
pub mod puf;
pub mod seed;

pub use bits::{BitVec, Challenge};
pub use error::{Error, Result};
