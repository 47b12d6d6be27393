//! Mesh-based super-resolution of spectral-element flow fields.
//!
//! A coarse (p=1) element field is lifted to a fine (p=3) field by a graph
//! transformer that reads the query element together with its K nearest
//! neighbor elements as a token sequence, and predicts a residual on top of
//! a KNN inverse-distance interpolation of the coarse field.
//!
//! Pipeline: [`synth`] generates fine snapshots, [`mesh`] coarsens them,
//! [`sampler`] segments and samples query elements, [`tokenizer`] builds
//! normalized samples (with the [`interp`] baseline cached), [`model`] and
//! [`train`] fit the transformer, and [`eval`] super-resolves whole
//! snapshots and compares against the interpolation baseline.

mod binio;
pub mod config;
pub mod error;
pub mod eval;
pub mod interp;
pub mod mesh;
pub mod model;
pub mod neighborhood;
pub mod sampler;
pub mod synth;
pub mod tokenizer;
pub mod train;

pub use error::{Error, FormatError, Result};

/// Number of flow features stored per GLL point.
pub const N_FEATURES: usize = 13;

/// Feature order used by every snapshot, token and target in this crate.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "u_x", "u_y", "P", "T", "Y_H2", "Y_O2", "Y_O", "Y_H", "Y_OH", "Y_HO2", "Y_H2O2", "Y_H2O",
    "Y_N2",
];

pub mod feature {
    pub const U_X: usize = 0;
    pub const U_Y: usize = 1;
    pub const P: usize = 2;
    pub const T: usize = 3;
    pub const Y_H2: usize = 4;
    pub const Y_O2: usize = 5;
    pub const Y_H2O: usize = 11;
    pub const Y_N2: usize = 12;
    /// Mass-fraction features, `Y_H2..=Y_N2`.
    pub const SPECIES: std::ops::RangeInclusive<usize> = 4..=12;
}

/// Polynomial order of the coarse (input) field.
pub const P_COARSE: usize = 1;
/// Polynomial order of the fine (target) field.
pub const P_FINE: usize = 3;
/// Coarse token length: 4 GLL points times 13 features.
pub const TOKEN_DIM: usize = (P_COARSE + 1) * (P_COARSE + 1) * N_FEATURES;
/// Fine element field length: 16 GLL points times 13 features.
pub const FINE_DIM: usize = (P_FINE + 1) * (P_FINE + 1) * N_FEATURES;
