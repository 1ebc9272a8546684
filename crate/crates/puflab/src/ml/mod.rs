//! Learners mounted against CRP corpora: deep fully connected networks, a
//! single-layer baseline, a polynomial-kernel SVM, and LDA separability
//! analysis.

pub mod gradcheck;
pub mod lda;
pub mod mlp;
pub mod svm;

pub use lda::{fit_lda, LdaResult};
pub use mlp::{
    count_biases, count_weights, Activation, MlpConfig, MlpModel, Optimizer, StopReason,
    TrainTrace,
};
pub use svm::{grid_search_svm, train_svm_poly, SvmModel, SvmParams, DEFAULT_SVM_CAP};
