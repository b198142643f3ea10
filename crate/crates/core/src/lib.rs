//! Training and evaluation toolkit for item recommendation from
//! implicit feedback with dot-product factor models: sampling-based SGD
//! trainers, Gramian-based solvers, exact ranking metrics and
//! brute-force retrieval, each fast path checked against a naive oracle.

pub mod als;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod samplers;
pub mod sgd;
