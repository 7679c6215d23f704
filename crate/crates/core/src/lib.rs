//! Sparse dynamical decomposition of event-related potentials.
//!
//! The pipeline models an ERP as the output of a bank of discrete harmonic
//! oscillators driven by a sparse set of excitation impulses, recovers those
//! impulses with a lasso solved along the full LARS path, extracts two scalar
//! features from the excitation grid, and classifies subjects with a
//! two-class LDA evaluated under nested leave-one-out cross-validation.
//!
//! Modules follow the processing order:
//!
//! * [`signal`] / [`dataset`] — ingestion, FIR bandpass, epoching, averaging.
//! * [`model`] — oscillator bank, regressor matrices, weighted standardization.
//! * [`solver`] — LARS/lasso path, sparsity-level slicing, debiasing refit.
//! * [`features`] — excitation decomposition and the (F1, F2) features.
//! * [`classify`] — pooled-covariance LDA and channel voting.
//! * [`eval`] — nested LOOCV, repeated K-fold, permutation testing.
//! * [`synth`] — synthetic dataset generator for end-to-end validation.

pub mod classify;
pub mod dataset;
pub mod eval;
pub mod features;
pub mod model;
pub mod oracle;
pub mod signal;
pub mod solver;
pub mod synth;
