//! Solvers for `Δʰu = −1 + e²ᵘ + e⁻²ᵘ|φ|²ₕ` on the truncated disk.
//!
//! Three routes to the same discrete solution: a screened monotone iteration
//! descending from the zero supersolution, damped Newton on the residual, and
//! Newton continuation along `s·φ`. All share the algebraic-balance Dirichlet
//! data on the rim, so converged results agree to solver tolerance and the
//! apriori bounds `−½ln(1+λ²) ≤ u ≤ 0` carry over node by node.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DiskGrid, ScalarField};
use crate::helmholtz::{helmholtz_solve, laplacian_h};
use crate::quad_diff::{c0_norm, eval_hnorm, hnorm_sq_field, QuadDiff};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Monotone,
    Newton,
    NewtonContinuation,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolveParams {
    /// Sup norm of the interior residual field demanded for convergence.
    pub tolerance: f64,
    pub max_iters: usize,
    pub method: Method,
    /// Number of uniform steps for [`Method::NewtonContinuation`].
    pub continuation_steps: usize,
}

impl Default for SolveParams {
    fn default() -> Self {
        SolveParams {
            tolerance: 1e-9,
            max_iters: 200,
            method: Method::Newton,
            continuation_steps: 10,
        }
    }
}

/// A converged (or final) state of one solve.
#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Conformal factor, rim ring carrying the algebraic boundary data.
    pub u: ScalarField,
    /// Sup norm of the interior residual at the returned iterate.
    pub residual_norm: f64,
    pub iterations: usize,
    /// Discrete `sup e⁻²ᵘ|φ|ₕ`, the shape-operator norm.
    pub shape_sup: f64,
    pub converged: bool,
}

/// The scalar diagnostics of a [`SolveResult`], the JSON sidecar schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveSummary {
    pub residual_norm: f64,
    pub iterations: usize,
    pub shape_sup: f64,
    pub converged: bool,
}

impl SolveResult {
    pub fn summary(&self) -> SolveSummary {
        SolveSummary {
            residual_norm: self.residual_norm,
            iterations: self.iterations,
            shape_sup: self.shape_sup,
            converged: self.converged,
        }
    }
}

/// `ℱ(u,φ) = Δʰu + 1 − e²ᵘ − e⁻²ᵘ|φ|²ₕ` at interior nodes; rim entries zero.
pub fn residual(u: &ScalarField, phi: &QuadDiff) -> ScalarField {
    residual_with_source(u, &hnorm_sq_field(phi, u.grid()))
}

/// Residual against a precomputed (not necessarily holomorphic) source `f ≥ 0`
/// standing in for `|φ|²ₕ`.
pub fn residual_with_source(u: &ScalarField, source: &ScalarField) -> ScalarField {
    let grid = u.grid();
    let mut out = laplacian_h(u);
    let n_int = grid.n_interior();
    for k in 0..n_int {
        let uu = u.at(k);
        out.values_mut()[k] += 1.0 - (2.0 * uu).exp() - (-2.0 * uu).exp() * source.at(k);
    }
    out
}

fn algebraic_u(q: f64) -> f64 {
    0.5 * (0.5 * (1.0 + (1.0 - 4.0 * q).max(0.0).sqrt())).ln()
}

/// Dirichlet data on the rim: the root of `1 − w − |φ|²ₕ/w = 0`, `w = e²ᵘ`,
/// on the branch through `w = 1`. Rim-only field; zero elsewhere.
pub fn boundary_value(phi: &QuadDiff, grid: &Arc<DiskGrid>) -> Result<ScalarField> {
    let mut out = ScalarField::zeros(grid);
    let mut max_hnorm: f64 = 0.0;
    for idx in grid.rim_range() {
        max_hnorm = max_hnorm.max(eval_hnorm(phi, grid.node_z(idx)));
    }
    if max_hnorm >= 0.5 {
        return Err(Error::RimNormTooLarge { max_hnorm });
    }
    for idx in grid.rim_range() {
        let h = eval_hnorm(phi, grid.node_z(idx));
        out.values_mut()[idx] = algebraic_u(h * h);
    }
    Ok(out)
}

/// Extend the algebraic rim balance inward: default Newton initial guess.
/// The square root is clamped where `|φ|ₕ ≥ 1/2` in the interior.
pub fn algebraic_init(phi: &QuadDiff, grid: &Arc<DiskGrid>) -> ScalarField {
    ScalarField::from_fn(grid, |idx| {
        let h = eval_hnorm(phi, grid.node_z(idx));
        algebraic_u(h * h)
    })
}

/// Zeroth-order coefficient of the linearized operator:
/// `c(z) = 2e²ᵘ(1 − e⁻⁴ᵘ|φ|²ₕ)`, positive exactly on the coercive set.
pub fn linearize(u: &ScalarField, phi: &QuadDiff) -> ScalarField {
    linearize_with_source(u, &hnorm_sq_field(phi, u.grid()))
}

pub fn linearize_with_source(u: &ScalarField, source: &ScalarField) -> ScalarField {
    u.zip_with(source, |uu, q| {
        2.0 * (2.0 * uu).exp() * (1.0 - (-4.0 * uu).exp() * q)
    })
}

/// Smallest λ ∈ (0,1] with `c0 = λ/(1+λ²)`, the tightest guaranteed-regime
/// parameter; clamps to 1 outside `c0 < 1/2`.
pub fn guaranteed_lambda(c0: f64) -> f64 {
    if c0 <= 0.0 {
        0.0
    } else if c0 >= 0.5 {
        1.0
    } else {
        (1.0 - (1.0 - 4.0 * c0 * c0).sqrt()) / (2.0 * c0)
    }
}

/// λ used when checking the apriori box of a converged solve.
pub fn apriori_lambda(c0: f64, shape_sup: f64) -> f64 {
    if c0 < 0.5 {
        guaranteed_lambda(c0)
    } else {
        (shape_sup + 1e-9).min(1.0)
    }
}

fn shape_sup_of(u: &ScalarField, phi: &QuadDiff) -> f64 {
    let grid = u.grid();
    let mut m: f64 = 0.0;
    for idx in 0..grid.n_nodes() {
        m = m.max((-2.0 * u.at(idx)).exp() * eval_hnorm(phi, grid.node_z(idx)));
    }
    m
}

fn finish(u: ScalarField, phi: &QuadDiff, residual_norm: f64, iterations: usize) -> SolveResult {
    let shape_sup = shape_sup_of(&u, phi);
    SolveResult {
        u,
        residual_norm,
        iterations,
        shape_sup,
        converged: true,
    }
}

/// Screened monotone iteration from the zero supersolution.
///
/// The screening constant `M = 2 + 2(1+λ²)‖φ‖²` dominates `|∂G/∂u|` on the
/// order interval `[−½ln(1+λ²), 0]`, which makes the iterates pointwise
/// nonincreasing; guaranteed inside `‖φ‖ < λ/(1+λ²)`, attempted outside.
pub fn monotone_solve(grid: &Arc<DiskGrid>, phi: &QuadDiff, params: &SolveParams) -> Result<SolveResult> {
    let q = hnorm_sq_field(phi, grid);
    let c0 = c0_norm(phi, grid);
    let lambda = if c0 < 0.5 { guaranteed_lambda(c0) } else { 1.0 };
    let m_screen = 2.0 + 2.0 * (1.0 + lambda * lambda) * c0 * c0;
    let bc = boundary_value(phi, grid)?;

    let mut u = bc.clone(); // zero interior, algebraic rim
    let screen = ScalarField::constant(grid, m_screen);
    let mono_slack = params.tolerance.max(1e-9);

    let mut res_norm = f64::INFINITY;
    for k in 0..=params.max_iters {
        let res = residual_with_source(&u, &q);
        res_norm = res.sup_norm_interior();
        if res_norm <= params.tolerance {
            return Ok(finish(u, phi, res_norm, k));
        }
        if k == params.max_iters {
            break;
        }
        let rhs = u.zip_with(&q, |uu, qq| {
            -1.0 + (2.0 * uu).exp() + (-2.0 * uu).exp() * qq - m_screen * uu
        });
        let u_next = helmholtz_solve(&screen, &rhs, &bc)?;
        let mut increase: f64 = f64::NEG_INFINITY;
        for idx in 0..grid.n_nodes() {
            increase = increase.max(u_next.at(idx) - u.at(idx));
        }
        if increase > mono_slack {
            return Err(Error::MonotonicityViolated { increase });
        }
        u = u_next;
    }
    Err(Error::MaxItersExceeded {
        iterations: params.max_iters,
        residual: res_norm,
    })
}

/// Damped Newton on the residual, Dirichlet rim pinned to the algebraic data.
///
/// The warm-start field's rim is overwritten with the boundary data for this
/// `φ`, so warm starts across a family remain consistent.
pub fn newton_solve(
    grid: &Arc<DiskGrid>,
    phi: &QuadDiff,
    params: &SolveParams,
    u_init: &ScalarField,
) -> Result<SolveResult> {
    const MAX_HALVINGS: usize = 30;
    let q = hnorm_sq_field(phi, grid);
    let bc = boundary_value(phi, grid)?;

    let mut u = u_init.clone();
    let rim = grid.rim_range();
    u.values_mut()[rim.clone()].copy_from_slice(&bc.values()[rim]);
    let zero_bc = ScalarField::zeros(grid);

    let mut res = residual_with_source(&u, &q);
    let mut res_norm = res.sup_norm_interior();
    for k in 0..=params.max_iters {
        if res_norm <= params.tolerance {
            return Ok(finish(u, phi, res_norm, k));
        }
        if k == params.max_iters {
            break;
        }
        let c = linearize_with_source(&u, &q);
        let neg_res = res.map(|v| -v);
        let delta = helmholtz_solve(&c, &neg_res, &zero_bc)?;

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let u_try = u.zip_with(&delta, |a, d| a + step * d);
            let res_try = residual_with_source(&u_try, &q);
            let rn_try = res_try.sup_norm_interior();
            if rn_try < res_norm {
                u = u_try;
                res = res_try;
                res_norm = rn_try;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(Error::LineSearchStalled {
                halvings: MAX_HALVINGS,
                residual: res_norm,
            });
        }
    }
    Err(Error::MaxItersExceeded {
        iterations: params.max_iters,
        residual: res_norm,
    })
}

/// Path-following along `s·φ` at `s = 1/S, 2/S, …, 1`, warm-starting Newton
/// from the previous step. On failure reports the largest converged `s`.
pub fn continuation_solve(
    grid: &Arc<DiskGrid>,
    phi: &QuadDiff,
    params: &SolveParams,
) -> Result<SolveResult> {
    let steps = params.continuation_steps.max(1);
    let mut reached = 0.0_f64;
    let mut last: Option<SolveResult> = None;
    for k in 1..=steps {
        let s = k as f64 / steps as f64;
        let phi_s = phi.scale(s);
        let init = match &last {
            Some(r) => r.u.clone(),
            None => algebraic_init(&phi_s, grid),
        };
        match newton_solve(grid, &phi_s, params, &init) {
            Ok(r) => {
                reached = s;
                last = Some(r);
            }
            Err(_) => {
                return Err(Error::ContinuationStalled {
                    reached,
                    partial: last.map(Box::new),
                });
            }
        }
    }
    Ok(last.expect("steps >= 1"))
}

/// Dispatch on the configured method.
pub fn solve(grid: &Arc<DiskGrid>, phi: &QuadDiff, params: &SolveParams) -> Result<SolveResult> {
    match params.method {
        Method::Monotone => monotone_solve(grid, phi, params),
        Method::Newton => newton_solve(grid, phi, params, &algebraic_init(phi, grid)),
        Method::NewtonContinuation => continuation_solve(grid, phi, params),
    }
}

/// Newton inside the guaranteed ball `‖φ‖ < 1/2`, continuation outside or as
/// fallback when Newton leaves the coercive set.
pub fn solve_auto(grid: &Arc<DiskGrid>, phi: &QuadDiff, params: &SolveParams) -> Result<SolveResult> {
    if c0_norm(phi, grid) < 0.5 {
        match newton_solve(grid, phi, params, &algebraic_init(phi, grid)) {
            Ok(r) => return Ok(r),
            Err(e @ Error::RimNormTooLarge { .. }) => return Err(e),
            Err(_) => {}
        }
    }
    continuation_solve(grid, phi, params)
}

/// Discretization-error estimate from one grid refinement: solve on the grid
/// and on the `2×`-refined grid, take the sup difference at coincident nodes.
pub fn estimate_disc_error(
    grid: &Arc<DiskGrid>,
    phi: &QuadDiff,
    params: &SolveParams,
) -> Result<f64> {
    let fine_grid = DiskGrid::new(2 * grid.n_rho(), 2 * grid.n_theta(), grid.rho_max())?;
    let coarse = solve_auto(grid, phi, params)?;
    let fine = solve_auto(&fine_grid, phi, params)?;
    let mut sup: f64 = 0.0;
    for i in 0..=grid.n_rho() {
        for j in 0..grid.n_theta() {
            let a = coarse.u.at(grid.idx(i, j));
            let b = fine.u.at(fine_grid.idx(2 * i, 2 * j));
            sup = sup.max((a - b).abs());
            if i == 0 {
                break;
            }
        }
    }
    Ok(sup)
}
