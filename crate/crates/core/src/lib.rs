//! Elastic-net regularized intensity estimation for planar point patterns.
//!
//! The log-linear Poisson intensity `ρ(s) = exp(β0 + z(s)β)` is fitted by
//! turning the point-process likelihood into a weighted Poisson GLM over
//! grid-quadrature points, then solving the elastic-net penalized problem by
//! cyclic coordinate descent along a decreasing λ path with K-fold
//! cross-validation. Supporting modules build covariates (kernel intensities,
//! line densities, distance fields, interactions), choose kernel bandwidths
//! with a K-means heuristic, simulate Poisson patterns and evaluate fit
//! stability under undersampling.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandwidth;
pub mod covariates;
pub mod design;
pub mod error;
pub mod geom;
pub mod io;
pub mod par;
pub mod penfit;
pub mod pipeline;
pub mod quadrature;
pub mod rng;
pub mod sim_eval;
pub mod smoothing;

pub use design::Design;
pub use error::{Error, Result};
pub use geom::{Point, PointPattern, Raster, Segment, SegmentPattern, Window};
