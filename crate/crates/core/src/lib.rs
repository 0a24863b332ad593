//! Joint depression classification and explanation generation.
//!
//! A small decoder-only transformer is trained from scratch with a weighted
//! sum of a binary cross-entropy classification loss (on a mean-pooled post
//! representation) and a next-token loss on gold explanations. The crate also
//! ships the evaluation harness, a TF-IDF + linear SVM baseline and a
//! synthetic corpus generator.

pub mod autodiff;
pub mod baselines;
pub mod corpus;
pub mod human_eval;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod report;
pub mod tokenizer;
pub mod training;
