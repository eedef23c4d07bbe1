//! Geometry-aware graph transformers for node classification.
//!
//! The crate bundles a small dense-matrix autodiff engine, κ-stereographic
//! and Stiefel/Grassmann geometry, graph storage and metrics, the
//! GCN + linear-attention ensemble backbone, a Riemannian mixture-of-experts
//! front end, Adam and Riemannian Adam, and the command-line driver.

pub mod backbone;
pub mod cli;
pub mod error;
pub mod graphdata;
pub mod manifolds;
pub mod model;
pub mod moe;
pub mod numerics;
pub mod optim;
pub mod selftest;

pub use error::{GeoError, Result};
