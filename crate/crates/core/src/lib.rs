// Negated float comparisons like `!(x > 0.0)` are used on purpose: they
// reject NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Nested-array TomoSAR elevation imaging toolkit.
//!
//! Sparse baseline layouts (uniform, coprime, nested, custom) are designed in
//! [`geometry`], lifted to covariance-domain manifolds in [`model`], driven
//! with synthetic data from [`simulate`], estimated robustly in
//! [`covariance`], inverted in [`recover`], scored in [`metrics`], and
//! orchestrated end to end by the experiment [`harness`].

pub mod covariance;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod recover;
pub mod simulate;

/// Complex sample type used throughout the toolkit.
pub type C64 = num_complex::Complex64;

pub use error::{Error, Result};
pub use geometry::{
    coprime_array, custom_array, difference_coarray, nested_array, uniform_array, ArrayConfig,
    ArrayKind, CoArray,
};
pub use model::{
    build_steering_matrix, coarray_manifold, khatri_rao_manifold, rayleigh_resolution,
    CoArrayManifold, ElevationGrid, ImagingGeometry, SteeringMatrix,
};
