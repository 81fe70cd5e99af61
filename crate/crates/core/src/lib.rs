//! Retarded, advanced and Feynman inverses of the Klein-Gordon operator
//! `P = d_t^2 + r(t,x) d_t + a(t)` on `R x T_L`, for metrics that approach
//! Minkowski space like `<t>^{-delta}`.
//!
//! The pipeline reduces `P` to `r = 0`, rewrites it as a first-order system
//! `D_t - H(t)`, diagonalizes `H(t)` up to an integrable remainder and builds
//! the inverses from explicit Cauchy evolutions. The [`oracle`] and
//! [`analysis`] modules hold independent checks.

pub mod error;
pub mod grid;
pub mod linalg;
pub mod model;
pub mod system;
pub mod diag;
pub mod evolve;
pub mod propagators;
pub mod oracle;
pub mod analysis;

pub use error::{KgError, Result};
pub use grid::{GridFunction, SpacetimeFunction, SpatialGrid, TimeGrid, C64};
pub use model::{MetricFamily, ModelMetric, ReducedModel};
pub use system::{OperatorMatrix, Sign, TwoComponent};
