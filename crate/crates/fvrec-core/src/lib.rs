//! Fairness-aware variational autoencoder recommenders for implicit feedback.
//!
//! The crate implements a family of VAE recommenders (`vaerec`, `vaeadv`,
//! `vaegan`, `vaeemp`), a SLIM item-to-item baseline, user-disjoint data
//! preparation for evaluating users absent from training, and a four-metric
//! evaluation suite (NDCG@k, attribute-leakage AUC probe, eligibility-adjusted
//! chi-square, extended Kendall-Tau between group rankings).
//!
//! Everything is built on a small dense f64 kernel in [`numerics`]; training
//! uses hand-derived backpropagation so every gradient can be checked against
//! central finite differences.

pub mod checkpoint;
pub mod dataio;
pub mod error;
pub mod evalmetrics;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod report;
pub mod runcfg;
pub mod slim;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{Mat, RngStream};
pub use runcfg::RunConfig;
