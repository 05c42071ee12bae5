//! Numerical laboratory for conformal minimal immersions of the Poincaré
//! disk into hyperbolic 3-space.
//!
//! The library solves the Gauss equation `Δʰu = −1 + e²ᵘ + e⁻²ᵘ|φ|²ₕ` for the
//! conformal factor of a minimal disk with polynomial Hopf differential `φ`,
//! classifies when the resulting immersion has shape-operator norm below 1,
//! runs segment-scan experiments probing concavity of the extrinsic curvature
//! and convexity of the solvable set, and reconstructs the surface as a mesh
//! in the hyperboloid model.

pub mod analysis;
pub mod convexity;
pub mod error;
pub mod grid;
pub mod helmholtz;
pub mod immersion;
pub mod io;
pub mod quad_diff;
pub mod solver;

pub use analysis::{
    curvature_report, extrinsic_curvature, intrinsic_curvature, membership, quasicircle_bound,
    shape_norm_field, CurvatureReport, Verdict,
};
pub use error::{Error, Result};
pub use grid::{sup_norm, DiskGrid, ScalarField};
pub use helmholtz::{helmholtz_solve, laplacian_h};
pub use quad_diff::{c0_norm, eval_hnorm, hnorm_sq_field, pairing, QuadDiff};
pub use solver::{
    boundary_value, continuation_solve, linearize, monotone_solve, newton_solve, residual, solve,
    solve_auto, Method, SolveParams, SolveResult,
};
