//! Singularity-free output-feedback model reference adaptive control for SISO
//! LTI plants of arbitrary relative degree, with the simulation harness used
//! to exercise it.

pub mod adaptation;
pub mod baseline;
pub mod controller;
pub mod lti;
pub mod matching;
pub mod output;
pub mod poly;
pub mod scenario;
pub mod sim;
pub mod suite;
