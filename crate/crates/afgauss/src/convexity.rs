//! Segment-scan experiments along `φ_t = (1−t)φ₀ + tφ₁`: concavity of the
//! extrinsic curvature in `t`, the differential inequality `ü + 4u̇² ≤ 0`,
//! first-variation consistency, ball-bound probes, and segment convexity of
//! the solvable sets.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{membership, membership_of_solve, Verdict, MEMBERSHIP_MARGIN};
use crate::error::{Error, Result};
use crate::grid::{DiskGrid, ScalarField};
use crate::helmholtz::helmholtz_solve;
use crate::quad_diff::{
    eval_hnorm, pairing, rescale_to_c0, rescale_to_c0_at_least, QuadDiff,
};
use crate::solver::{linearize, newton_solve, solve_auto, SolveParams, SolveResult};

/// A family of solves along the segment between two differentials.
#[derive(Debug)]
pub struct SegmentScan {
    pub phi0: QuadDiff,
    pub phi1: QuadDiff,
    pub t: Vec<f64>,
    pub results: Vec<Option<SolveResult>>,
    /// Extrinsic curvature field per converged `t`.
    pub kappa: Vec<Option<ScalarField>>,
    pub failures: Vec<(usize, String)>,
}

impl SegmentScan {
    pub fn n_t(&self) -> usize {
        self.t.len()
    }

    /// Complete means every solve converged with shape norm below 1.
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
            && self
                .results
                .iter()
                .all(|r| r.as_ref().is_some_and(|r| r.converged && r.shape_sup < 1.0))
    }

    pub fn phi_at(&self, j: usize) -> QuadDiff {
        QuadDiff::combine(1.0 - self.t[j], &self.phi0, self.t[j], &self.phi1)
    }

    fn require_complete(&self) -> Result<()> {
        if self.is_complete() {
            Ok(())
        } else {
            Err(Error::ScanIncomplete {
                failed: self.failures.len(),
                total: self.t.len(),
            })
        }
    }
}

/// Conclusions of the concavity checks on one scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvexityReport {
    /// Signed max over nodes and interior t of the centered second difference
    /// of the extrinsic curvature; concavity means this stays ≤ tolerance.
    pub max_second_difference: f64,
    /// Sup over nodes and interior t of `ü + 4u̇²`.
    pub max_ueq_violation: f64,
    /// Sup discrepancy of the first-variation solve at the midpoint.
    pub first_variation_error: f64,
    pub tol: f64,
    pub verdict: bool,
}

fn check_n_t(n_t: usize) -> Result<()> {
    if n_t < 3 || n_t % 2 == 0 {
        return Err(Error::Format(format!("n_t = {n_t} must be odd and >= 3")));
    }
    Ok(())
}

fn solve_one(
    grid: &Arc<DiskGrid>,
    phi_t: &QuadDiff,
    params: &SolveParams,
    warm: Option<&ScalarField>,
) -> std::result::Result<SolveResult, String> {
    if let Some(u0) = warm {
        if let Ok(r) = newton_solve(grid, phi_t, params, u0) {
            return Ok(r);
        }
    }
    solve_auto(grid, phi_t, params).map_err(|e| e.to_string())
}

/// Solve along the segment, warm-starting left to right. Failed slots are
/// recorded and leave the scan partial rather than aborting it.
pub fn segment_scan(
    grid: &Arc<DiskGrid>,
    phi0: &QuadDiff,
    phi1: &QuadDiff,
    n_t: usize,
    params: &SolveParams,
) -> Result<SegmentScan> {
    check_n_t(n_t)?;
    let t: Vec<f64> = (0..n_t).map(|j| j as f64 / (n_t - 1) as f64).collect();
    let mut results: Vec<Option<SolveResult>> = Vec::with_capacity(n_t);
    let mut kappa: Vec<Option<ScalarField>> = Vec::with_capacity(n_t);
    let mut failures = Vec::new();
    let mut warm: Option<ScalarField> = None;
    for j in 0..n_t {
        let phi_t = QuadDiff::combine(1.0 - t[j], phi0, t[j], phi1);
        match solve_one(grid, &phi_t, params, warm.as_ref()) {
            Ok(r) => {
                warm = Some(r.u.clone());
                kappa.push(Some(crate::analysis::extrinsic_curvature(&r.u, &phi_t)));
                results.push(Some(r));
            }
            Err(e) => {
                failures.push((j, e));
                results.push(None);
                kappa.push(None);
            }
        }
    }
    Ok(SegmentScan {
        phi0: phi0.clone(),
        phi1: phi1.clone(),
        t,
        results,
        kappa,
        failures,
    })
}

/// Opt-in parallel mode: independent cold starts per `t`, deterministic
/// output for any thread count.
pub fn segment_scan_parallel(
    grid: &Arc<DiskGrid>,
    phi0: &QuadDiff,
    phi1: &QuadDiff,
    n_t: usize,
    params: &SolveParams,
) -> Result<SegmentScan> {
    check_n_t(n_t)?;
    let t: Vec<f64> = (0..n_t).map(|j| j as f64 / (n_t - 1) as f64).collect();
    let solved: Vec<(Option<SolveResult>, Option<ScalarField>, Option<String>)> = t
        .par_iter()
        .map(|&tj| {
            let phi_t = QuadDiff::combine(1.0 - tj, phi0, tj, phi1);
            match solve_auto(grid, &phi_t, params) {
                Ok(r) => {
                    let k = crate::analysis::extrinsic_curvature(&r.u, &phi_t);
                    (Some(r), Some(k), None)
                }
                Err(e) => (None, None, Some(e.to_string())),
            }
        })
        .collect();
    let mut results = Vec::with_capacity(n_t);
    let mut kappa = Vec::with_capacity(n_t);
    let mut failures = Vec::new();
    for (j, (r, k, err)) in solved.into_iter().enumerate() {
        if let Some(e) = err {
            failures.push((j, e));
        }
        results.push(r);
        kappa.push(k);
    }
    Ok(SegmentScan {
        phi0: phi0.clone(),
        phi1: phi1.clone(),
        t,
        results,
        kappa,
        failures,
    })
}

/// Signed max over nodes and interior `t` of the centered second difference
/// of the extrinsic curvature in `t`.
pub fn kappa_second_difference_max(scan: &SegmentScan) -> Result<f64> {
    scan.require_complete()?;
    let dt = scan.t[1] - scan.t[0];
    let n_nodes = scan.kappa[0].as_ref().unwrap().values().len();
    let mut max = f64::NEG_INFINITY;
    for j in 1..scan.n_t() - 1 {
        let (km, k0, kp) = (
            scan.kappa[j - 1].as_ref().unwrap(),
            scan.kappa[j].as_ref().unwrap(),
            scan.kappa[j + 1].as_ref().unwrap(),
        );
        for idx in 0..n_nodes {
            let dd = (km.at(idx) - 2.0 * k0.at(idx) + kp.at(idx)) / (dt * dt);
            max = max.max(dd);
        }
    }
    Ok(max)
}

/// Sup over nodes and interior `t` of `ü + 4u̇²` by centered differences.
pub fn u_inequality_check(scan: &SegmentScan) -> Result<f64> {
    scan.require_complete()?;
    let dt = scan.t[1] - scan.t[0];
    let n_nodes = scan.results[0].as_ref().unwrap().u.values().len();
    let mut max = f64::NEG_INFINITY;
    for j in 1..scan.n_t() - 1 {
        let um = &scan.results[j - 1].as_ref().unwrap().u;
        let u0 = &scan.results[j].as_ref().unwrap().u;
        let up = &scan.results[j + 1].as_ref().unwrap().u;
        for idx in 0..n_nodes {
            let udot = (up.at(idx) - um.at(idx)) / (2.0 * dt);
            let uddot = (up.at(idx) - 2.0 * u0.at(idx) + um.at(idx)) / (dt * dt);
            max = max.max(uddot + 4.0 * udot * udot);
        }
    }
    Ok(max)
}

/// Solve the linearized first-variation equation at an interior `t` and
/// return the sup discrepancy against the centered difference of `u_t`.
///
/// The rim data is the exact `t`-derivative of the algebraic boundary
/// balance, so the comparison carries only `O(Δt²)` error.
pub fn first_variation_check(scan: &SegmentScan, t_index: usize) -> Result<f64> {
    scan.require_complete()?;
    assert!(
        t_index >= 1 && t_index + 1 < scan.n_t(),
        "t_index must be interior"
    );
    let grid = scan.results[0].as_ref().unwrap().u.grid().clone();
    let dt = scan.t[1] - scan.t[0];
    let phi_t = scan.phi_at(t_index);
    let dphi = QuadDiff::combine(1.0, &scan.phi1, -1.0, &scan.phi0);
    let u_t = &scan.results[t_index].as_ref().unwrap().u;

    let c = linearize(u_t, &phi_t);
    let rhs = ScalarField::from_fn(&grid, |idx| {
        (-2.0 * u_t.at(idx)).exp() * 2.0 * pairing(&phi_t, &dphi, grid.node_z(idx))
    });
    // d/dt of u_bc = ½ln((1+√(1−4q))/2) with q̇ = 2·pairing(φ_t, φ₁−φ₀)
    let mut bc = ScalarField::zeros(&grid);
    for idx in grid.rim_range() {
        let z = grid.node_z(idx);
        let h = eval_hnorm(&phi_t, z);
        let q = h * h;
        let root = 1.0 - 4.0 * q;
        if root <= 0.0 {
            return Err(Error::RimNormTooLarge { max_hnorm: h });
        }
        let w = 0.5 * (1.0 + root.sqrt());
        let qdot = 2.0 * pairing(&phi_t, &dphi, z);
        bc.values_mut()[idx] = -qdot / (2.0 * w * root.sqrt());
    }
    let udot_pde = helmholtz_solve(&c, &rhs, &bc)?;

    let um = &scan.results[t_index - 1].as_ref().unwrap().u;
    let up = &scan.results[t_index + 1].as_ref().unwrap().u;
    let mut sup: f64 = 0.0;
    for idx in 0..grid.n_nodes() {
        let fd = (up.at(idx) - um.at(idx)) / (2.0 * dt);
        sup = sup.max((udot_pde.at(idx) - fd).abs());
    }
    Ok(sup)
}

/// Derivative-free concavity consequence: `κ_{1/2} ≥ ½(κ₀ + κ₁)` pointwise.
/// Returns the max violation `½(κ₀+κ₁) − κ_mid` over nodes.
pub fn midpoint_domination_gap(scan: &SegmentScan) -> Result<f64> {
    scan.require_complete()?;
    let mid = scan.n_t() / 2;
    let k0 = scan.kappa[0].as_ref().unwrap();
    let k1 = scan.kappa[scan.n_t() - 1].as_ref().unwrap();
    let km = scan.kappa[mid].as_ref().unwrap();
    let mut gap = f64::NEG_INFINITY;
    for idx in 0..k0.values().len() {
        gap = gap.max(0.5 * (k0.at(idx) + k1.at(idx)) - km.at(idx));
    }
    Ok(gap)
}

/// Convexity-step ordering: `e⁻⁴ᵘ|φ_t|²ₕ ≤ max(endpoint values)` pointwise.
/// Returns the max excess over nodes and t.
pub fn interior_domination_gap(scan: &SegmentScan) -> Result<f64> {
    scan.require_complete()?;
    let shape_sq = |j: usize| -> ScalarField {
        scan.kappa[j].as_ref().unwrap().map(|k| -k) // e⁻⁴ᵘ|φ|²ₕ = −κ_ext
    };
    let s0 = shape_sq(0);
    let s1 = shape_sq(scan.n_t() - 1);
    let mut gap = f64::NEG_INFINITY;
    for j in 0..scan.n_t() {
        let st = shape_sq(j);
        for idx in 0..st.values().len() {
            gap = gap.max(st.at(idx) - s0.at(idx).max(s1.at(idx)));
        }
    }
    Ok(gap)
}

/// `tol_concavity` default: `1e−6·(1 + max|κ|) + 10·ε_disc`.
pub fn default_concavity_tol(scan: &SegmentScan, eps_disc: f64) -> Result<f64> {
    scan.require_complete()?;
    let mut max_kappa: f64 = 0.0;
    for k in scan.kappa.iter().flatten() {
        max_kappa = max_kappa.max(k.sup_norm());
    }
    Ok(1e-6 * (1.0 + max_kappa) + 10.0 * eps_disc)
}

/// Full concavity verdict for a complete scan: second differences of κ,
/// the differential inequality, and the midpoint first-variation check.
pub fn concavity_check(scan: &SegmentScan, tol: f64) -> Result<ConvexityReport> {
    let max_second_difference = kappa_second_difference_max(scan)?;
    let max_ueq_violation = u_inequality_check(scan)?;
    let first_variation_error = first_variation_check(scan, scan.n_t() / 2)?;
    Ok(ConvexityReport {
        max_second_difference,
        max_ueq_violation,
        first_variation_error,
        tol,
        verdict: max_second_difference <= tol && max_ueq_violation <= tol,
    })
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Deterministic per-sample RNG stream derived from a master seed.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(index.wrapping_add(1))))
}

/// Draw a nonzero degree ≤ 6 differential from the coefficient ball.
pub fn sample_quad_diff(rng: &mut ChaCha8Rng, grid: &DiskGrid) -> QuadDiff {
    loop {
        let phi = QuadDiff::sample_ball(6, rng);
        if crate::quad_diff::c0_norm(&phi, grid) > 1e-8 {
            return phi;
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BallBoundsSample {
    pub index: usize,
    pub inner: Verdict,
    pub outer: Verdict,
}

/// Outcome of [`ball_bounds_probe`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BallBoundsSummary {
    pub lambda: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub inner_radius: f64,
    pub outer_radius: f64,
    pub inner_in: usize,
    pub outer_not_in: usize,
    pub counterexamples: Vec<BallBoundsSample>,
    pub verdict: bool,
}

/// Sample the inclusion sandwich at level λ: differentials rescaled to
/// `0.98·λ/(1+λ²)` must be in, differentials rescaled to `λ` must be out.
pub fn ball_bounds_probe(
    grid: &Arc<DiskGrid>,
    lambda: f64,
    n_samples: usize,
    seed: u64,
    params: &SolveParams,
) -> BallBoundsSummary {
    assert!(lambda > 0.0 && lambda <= 1.0);
    let inner_radius = 0.98 * lambda / (1.0 + lambda * lambda);
    let outer_radius = lambda;
    let samples: Vec<BallBoundsSample> = (0..n_samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = sample_rng(seed, k as u64);
            let phi = sample_quad_diff(&mut rng, grid);
            let inner_phi = rescale_to_c0(&phi, inner_radius, grid).expect("nonzero sample");
            let outer_phi =
                rescale_to_c0_at_least(&phi, outer_radius, grid).expect("nonzero sample");
            BallBoundsSample {
                index: k,
                inner: membership(grid, &inner_phi, lambda, params),
                outer: membership(grid, &outer_phi, lambda, params),
            }
        })
        .collect();
    let inner_in = samples.iter().filter(|s| s.inner.is_in()).count();
    let outer_not_in = samples.iter().filter(|s| s.outer.is_not_in()).count();
    let counterexamples: Vec<BallBoundsSample> = samples
        .into_iter()
        .filter(|s| !(s.inner.is_in() && s.outer.is_not_in()))
        .collect();
    BallBoundsSummary {
        lambda,
        n_samples,
        seed,
        inner_radius,
        outer_radius,
        inner_in,
        outer_not_in,
        verdict: counterexamples.is_empty(),
        counterexamples,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentConvexityPair {
    pub index: usize,
    pub endpoints_in: bool,
    pub interior_violations: usize,
    pub min_interior_margin: f64,
}

/// Outcome of [`segment_convexity_probe`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentConvexitySummary {
    pub lambda: f64,
    pub n_pairs: usize,
    pub n_t: usize,
    pub seed: u64,
    pub endpoint_radius: f64,
    pub violations: usize,
    pub pairs: Vec<SegmentConvexityPair>,
    pub verdict: bool,
}

/// For random endpoint pairs verified inside the level-λ set, scan the
/// segment and demand every interior point stays inside.
pub fn segment_convexity_probe(
    grid: &Arc<DiskGrid>,
    lambda: f64,
    n_pairs: usize,
    n_t: usize,
    seed: u64,
    params: &SolveParams,
) -> Result<SegmentConvexitySummary> {
    assert!(lambda > 0.0 && lambda <= 1.0);
    check_n_t(n_t)?;
    let endpoint_radius = 0.9 * lambda / (1.0 + lambda * lambda);
    let pairs: Vec<SegmentConvexityPair> = (0..n_pairs)
        .into_par_iter()
        .map(|k| {
            let mut rng = sample_rng(seed, 0x5E6_0000 + k as u64);
            let phi0 = rescale_to_c0(&sample_quad_diff(&mut rng, grid), endpoint_radius, grid)
                .expect("nonzero sample");
            let phi1 = rescale_to_c0(&sample_quad_diff(&mut rng, grid), endpoint_radius, grid)
                .expect("nonzero sample");
            let endpoints_in = membership(grid, &phi0, lambda, params).is_in()
                && membership(grid, &phi1, lambda, params).is_in();
            let mut interior_violations = 0;
            let mut min_margin = f64::INFINITY;
            if endpoints_in {
                if let Ok(scan) = segment_scan(grid, &phi0, &phi1, n_t, params) {
                    for j in 1..n_t - 1 {
                        let ok = match &scan.results[j] {
                            Some(r) => {
                                min_margin = min_margin.min(lambda - r.shape_sup);
                                membership_of_solve(grid, &scan.phi_at(j), r, lambda).is_in()
                            }
                            None => false,
                        };
                        if !ok {
                            interior_violations += 1;
                        }
                    }
                } else {
                    interior_violations = n_t - 2;
                }
            }
            SegmentConvexityPair {
                index: k,
                endpoints_in,
                interior_violations,
                min_interior_margin: min_margin,
            }
        })
        .collect();
    let violations = pairs
        .iter()
        .map(|p| p.interior_violations + usize::from(!p.endpoints_in))
        .sum();
    Ok(SegmentConvexitySummary {
        lambda,
        n_pairs,
        n_t,
        seed,
        endpoint_radius,
        violations,
        verdict: violations == 0,
        pairs,
    })
}

/// Margin used by membership verdicts, re-exported for report plumbing.
pub fn membership_margin() -> f64 {
    MEMBERSHIP_MARGIN
}
