//! Unsupervised sentence simplification by beam search over dependency trees.

pub mod analysis;
pub mod backtranslate;
pub mod decoder;
pub mod fluency;
pub mod metrics;
pub mod similarity;
pub mod treebank;
