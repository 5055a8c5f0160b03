//! Numerical machinery for stable constant-mean-curvature spheres and
//! foliations in asymptotically hyperbolic 3-manifolds.
//!
//! The crate is organised around the exterior chart `(r, θ) ∈ [r₁, ∞) × S²`:
//!
//! * [`s2grid`] — spectral kernel on the unit sphere (Gauss–Legendre ×
//!   equispaced-longitude grid, real spherical-harmonic transforms,
//!   angular differentiation, quadrature),
//! * [`ambient`] — the asymptotically hyperbolic metric family, its
//!   Christoffel symbols and curvature tensors,
//! * [`surface`] — extrinsic and intrinsic geometry of graph spheres
//!   `r(θ) = r̂ + f(θ)`,
//! * [`conformal`] — Möbius transformations, mass-aspect centering and
//!   numerical uniformization of the normalized induced metric,
//! * [`solver`] — Newton solver for `H(ρ) = l`, stability operators,
//!   continuation in the metric family and foliation sweeps,
//! * [`verify`] — every in-scope estimate turned into a residual or a
//!   fitted decay exponent, assembled into a report.

pub mod ambient;
pub mod conformal;
pub mod error;
pub mod s2grid;
pub mod solver;
pub mod surface;
pub mod verify;

pub use error::{Error, Result};
