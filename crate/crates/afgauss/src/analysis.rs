//! Geometric quantities of a solved pair `(u, φ)`: shape-operator norms,
//! extrinsic/intrinsic curvature, membership verdicts, and the quasicircle
//! dilatation bound.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DiskGrid, ScalarField};
use crate::quad_diff::{c0_norm, eval_hnorm, QuadDiff};
use crate::solver::{solve_auto, SolveParams, SolveResult};

/// Default margin below λ demanded before certifying membership.
pub const MEMBERSHIP_MARGIN: f64 = 1e-6;

/// Membership of a differential in the solvable-with-bound set at some λ.
/// Near the boundary no finite computation decides, so `Unresolved` is a
/// first-class verdict carrying the continuation stall point when one exists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Verdict {
    InU,
    NotInU,
    Unresolved { stall: Option<f64> },
}

impl Verdict {
    pub fn is_in(&self) -> bool {
        matches!(self, Verdict::InU)
    }
    pub fn is_not_in(&self) -> bool {
        matches!(self, Verdict::NotInU)
    }
}

/// Pointwise `e⁻²ᵘ|φ|ₕ`: the shape-operator norm field `‖A‖ = |φ|_g`.
pub fn shape_norm_field(u: &ScalarField, phi: &QuadDiff) -> ScalarField {
    let grid = u.grid().clone();
    ScalarField::from_fn(&grid, |idx| {
        (-2.0 * u.at(idx)).exp() * eval_hnorm(phi, grid.node_z(idx))
    })
}

/// Extrinsic curvature `det A = −(e⁻²ᵘ|φ|ₕ)²`, computed by squaring the
/// shape field so the identity holds exactly.
pub fn extrinsic_curvature(u: &ScalarField, phi: &QuadDiff) -> ScalarField {
    shape_norm_field(u, phi).map(|s| -(s * s))
}

/// Intrinsic curvature `κ = det A − 1`.
pub fn intrinsic_curvature(kappa_ext: &ScalarField) -> ScalarField {
    kappa_ext.map(|k| k - 1.0)
}

/// Upper bound for the dilatation of the boundary curve:
/// `K ≤ sup (1+‖A‖)/(1−‖A‖)`. Requires `sup ‖A‖ < 1`.
pub fn quasicircle_bound(u: &ScalarField, phi: &QuadDiff) -> Result<f64> {
    let s = shape_norm_field(u, phi);
    let sup = s.sup_norm();
    if sup >= 1.0 {
        return Err(Error::NotAlmostFuchsian { shape_sup: sup });
    }
    let mut k: f64 = 1.0;
    for &v in s.values() {
        k = k.max((1.0 + v) / (1.0 - v));
    }
    Ok(k)
}

/// Decide membership at level `λ ∈ (0,1]`.
///
/// `NotInU` is immediate from `‖φ‖ ≥ λ` (no solve); `InU` requires a
/// converged solve with `shape_sup < λ − margin`; everything else is
/// `Unresolved`, tagged with the continuation stall point when one exists.
pub fn membership(
    grid: &Arc<DiskGrid>,
    phi: &QuadDiff,
    lambda: f64,
    params: &SolveParams,
) -> Verdict {
    assert!(lambda > 0.0 && lambda <= 1.0, "lambda must lie in (0,1]");
    if c0_norm(phi, grid) >= lambda {
        return Verdict::NotInU;
    }
    match solve_auto(grid, phi, params) {
        Ok(r) if r.converged && r.shape_sup < lambda - MEMBERSHIP_MARGIN => Verdict::InU,
        Ok(_) => Verdict::Unresolved { stall: None },
        Err(Error::ContinuationStalled { reached, .. }) => Verdict::Unresolved {
            stall: Some(reached),
        },
        Err(_) => Verdict::Unresolved { stall: None },
    }
}

/// Verdict for an already-computed solve, without re-solving.
pub fn membership_of_solve(
    grid: &Arc<DiskGrid>,
    phi: &QuadDiff,
    result: &SolveResult,
    lambda: f64,
) -> Verdict {
    if c0_norm(phi, grid) >= lambda {
        return Verdict::NotInU;
    }
    if result.converged && result.shape_sup < lambda - MEMBERSHIP_MARGIN {
        Verdict::InU
    } else {
        Verdict::Unresolved { stall: None }
    }
}

/// Curvature fields and scalar diagnostics of a solved pair.
#[derive(Debug, Clone)]
pub struct CurvatureReport {
    pub kappa_ext: ScalarField,
    pub kappa_int: ScalarField,
    pub shape_sup: f64,
    /// Present exactly when `shape_sup < 1`.
    pub k_bound: Option<f64>,
    pub membership: Verdict,
}

/// Scalar part of a [`CurvatureReport`], the JSON sidecar schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvatureSummary {
    pub shape_sup: f64,
    pub k_bound: Option<f64>,
    pub membership: Verdict,
    pub kappa_ext_min: f64,
    pub kappa_int_min: f64,
}

pub fn curvature_report(
    grid: &Arc<DiskGrid>,
    result: &SolveResult,
    phi: &QuadDiff,
    lambda: f64,
) -> CurvatureReport {
    let kappa_ext = extrinsic_curvature(&result.u, phi);
    let kappa_int = intrinsic_curvature(&kappa_ext);
    let k_bound = quasicircle_bound(&result.u, phi).ok();
    CurvatureReport {
        kappa_ext,
        kappa_int,
        shape_sup: result.shape_sup,
        k_bound,
        membership: membership_of_solve(grid, phi, result, lambda),
    }
}

impl CurvatureReport {
    pub fn summary(&self) -> CurvatureSummary {
        let min_of = |f: &ScalarField| f.values().iter().cloned().fold(f64::INFINITY, f64::min);
        CurvatureSummary {
            shape_sup: self.shape_sup,
            k_bound: self.k_bound,
            membership: self.membership,
            kappa_ext_min: min_of(&self.kappa_ext),
            kappa_int_min: min_of(&self.kappa_int),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid() -> Arc<DiskGrid> {
        DiskGrid::new(48, 64, 6.0).unwrap()
    }

    #[test]
    fn shape_norm_examples() {
        let g = grid();
        let zero_u = ScalarField::zeros(&g);
        assert_eq!(shape_norm_field(&zero_u, &QuadDiff::zero()).sup_norm(), 0.0);
        let s = shape_norm_field(&zero_u, &QuadDiff::constant(1.0));
        assert_abs_diff_eq!(s.at(0), 0.25, epsilon = 1e-15);
        let u = ScalarField::constant(&g, -0.5 * 2.0_f64.ln());
        let s = shape_norm_field(&u, &QuadDiff::constant(1.0));
        assert_abs_diff_eq!(s.at(0), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn curvature_examples() {
        let g = grid();
        let zero_u = ScalarField::zeros(&g);
        let ke = extrinsic_curvature(&zero_u, &QuadDiff::zero());
        assert_eq!(ke.sup_norm(), 0.0);
        let ki = intrinsic_curvature(&ke);
        for idx in 0..g.n_nodes() {
            assert_eq!(ki.at(idx), -1.0);
        }

        let ke = extrinsic_curvature(&zero_u, &QuadDiff::constant(1.0));
        assert_abs_diff_eq!(ke.at(0), -0.0625, epsilon = 1e-15);
        let ki = intrinsic_curvature(&ke);
        assert_abs_diff_eq!(ki.at(0), -1.0625, epsilon = 1e-15);

        // pointwise identities are exact at the level of construction
        let s = shape_norm_field(&zero_u, &QuadDiff::constant(1.0));
        for idx in 0..g.n_nodes() {
            assert_eq!(ke.at(idx), -(s.at(idx) * s.at(idx)));
            assert_eq!(ki.at(idx), ke.at(idx) - 1.0);
        }
    }

    #[test]
    fn solved_almost_fuchsian_pair_has_admissible_curvature() {
        let g = grid();
        let phi = QuadDiff::constant(1.6);
        let r = solve_auto(&g, &phi, &SolveParams::default()).unwrap();
        let ke = extrinsic_curvature(&r.u, &phi);
        let min = ke.values().iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min > -1.0 && ke.sup_norm() <= 1.0);
        let ki = intrinsic_curvature(&ke);
        let min = ki.values().iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min > -2.0);
    }

    #[test]
    fn quasicircle_examples() {
        let g = grid();
        let zero_u = ScalarField::zeros(&g);
        assert_eq!(quasicircle_bound(&zero_u, &QuadDiff::zero()).unwrap(), 1.0);

        // shape_sup = 1/3 and 0.9 via constant differentials at u = 0
        let k = quasicircle_bound(&zero_u, &QuadDiff::constant(4.0 / 3.0)).unwrap();
        assert_abs_diff_eq!(k, 2.0, epsilon = 1e-12);
        let k = quasicircle_bound(&zero_u, &QuadDiff::constant(3.6)).unwrap();
        assert_abs_diff_eq!(k, 19.0, epsilon = 1e-12);

        match quasicircle_bound(&zero_u, &QuadDiff::constant(8.0)) {
            Err(Error::NotAlmostFuchsian { .. }) => {}
            other => panic!("expected NotAlmostFuchsian, got {other:?}"),
        }
    }

    #[test]
    fn quasicircle_equals_ratio_of_sup_exactly() {
        let g = grid();
        let phi = QuadDiff::constant(1.6);
        let r = solve_auto(&g, &phi, &SolveParams::default()).unwrap();
        let k = quasicircle_bound(&r.u, &phi).unwrap();
        assert_eq!(k, (1.0 + r.shape_sup) / (1.0 - r.shape_sup));
    }

    #[test]
    fn membership_examples() {
        let g = grid();
        let params = SolveParams::default();
        assert!(membership(&g, &QuadDiff::constant(4.0), 1.0, &params).is_not_in());
        assert!(membership(&g, &QuadDiff::constant(1.6), 1.0, &params).is_in());
        assert!(membership(&g, &QuadDiff::zero(), 0.25, &params).is_in());
    }

    #[test]
    fn membership_monotone_in_lambda() {
        let g = grid();
        let params = SolveParams::default();
        let phi = QuadDiff::constant(1.6);
        let r = solve_auto(&g, &phi, &params).unwrap();
        let mut prev_in = false;
        for lambda in [0.25, 0.5, 0.75, 1.0] {
            let v = membership_of_solve(&g, &phi, &r, lambda);
            if prev_in {
                assert!(v.is_in(), "InU must be monotone in lambda");
            }
            prev_in = v.is_in();
        }
        assert!(prev_in);
    }

    #[test]
    fn membership_respects_domination() {
        // ψ = s·φ has |ψ|ₕ ≤ |φ|ₕ everywhere; φ ∈ U₁ forces ψ ∈ U₁
        let g = grid();
        let params = SolveParams::default();
        let phi = QuadDiff::constant(1.6);
        assert!(membership(&g, &phi, 1.0, &params).is_in());
        for s in [0.1, 0.5, 0.9] {
            assert!(membership(&g, &phi.scale(s), 1.0, &params).is_in());
        }
    }

    #[test]
    fn quasicircle_monotone_along_radial_family() {
        let g = grid();
        let params = SolveParams::default();
        let mut prev = 0.0;
        for c in [0.4, 0.8, 1.2, 1.6, 2.0] {
            let phi = QuadDiff::constant(c);
            let r = solve_auto(&g, &phi, &params).unwrap();
            let k = quasicircle_bound(&r.u, &phi).unwrap();
            assert!(k > prev, "K must grow along c·dz²");
            prev = k;
        }
    }
}
