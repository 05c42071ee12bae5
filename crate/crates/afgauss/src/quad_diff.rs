//! Polynomial holomorphic quadratic differentials `φ = p(z) dz²` on the disk.
//!
//! With the curvature −1 normalization of the background metric, the
//! pointwise norm is `|φ|ₕ(z) = |p(z)| (1−|z|²)²/4`; it decays like
//! `sech⁴(ρ/2)` toward the ideal boundary, which is what grounds truncating
//! the disk. The pairing is the real part of the induced hermitian product,
//! the unique bilinear form with `d/dt |φ_t|²ₕ = 2·pairing(φ_t, φ₁−φ₀)`.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::grid::{DiskGrid, ScalarField};

/// `φ = (Σ aₖ zᵏ) dz²` with complex coefficients, lowest degree first.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadDiff {
    coeffs: Vec<Complex64>,
}

impl QuadDiff {
    pub fn new(coeffs: Vec<Complex64>) -> QuadDiff {
        QuadDiff { coeffs }
    }

    pub fn zero() -> QuadDiff {
        QuadDiff { coeffs: vec![] }
    }

    /// `c · dz²`
    pub fn constant(c: f64) -> QuadDiff {
        QuadDiff {
            coeffs: vec![Complex64::new(c, 0.0)],
        }
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.norm_sqr() == 0.0)
    }

    /// Evaluate the polynomial part `p(z)`.
    pub fn eval(&self, z: Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for &a in self.coeffs.iter().rev() {
            acc = acc * z + a;
        }
        acc
    }

    /// Coefficientwise `α·φ₀ + β·φ₁`.
    pub fn combine(alpha: f64, phi0: &QuadDiff, beta: f64, phi1: &QuadDiff) -> QuadDiff {
        let n = phi0.coeffs.len().max(phi1.coeffs.len());
        let get = |c: &[Complex64], k: usize| c.get(k).copied().unwrap_or(Complex64::new(0.0, 0.0));
        QuadDiff {
            coeffs: (0..n)
                .map(|k| alpha * get(&phi0.coeffs, k) + beta * get(&phi1.coeffs, k))
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> QuadDiff {
        QuadDiff {
            coeffs: self.coeffs.iter().map(|&a| s * a).collect(),
        }
    }

    /// Draw coefficients of degree ≤ `max_degree` uniformly from the unit
    /// ball of `C^{d+1}`.
    pub fn sample_ball(max_degree: usize, rng: &mut impl Rng) -> QuadDiff {
        let dim = 2 * (max_degree + 1);
        // uniform in the ball: gaussian direction times U^{1/dim}
        let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
        let radius = rng.gen::<f64>().powf(1.0 / dim as f64);
        for x in v.iter_mut() {
            *x *= radius / norm;
        }
        QuadDiff {
            coeffs: v.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect(),
        }
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller on (0,1] uniforms
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// `|φ|ₕ(z) = |p(z)| (1−|z|²)²/4`.
pub fn eval_hnorm(phi: &QuadDiff, z: Complex64) -> f64 {
    let w = 1.0 - z.norm_sqr();
    phi.eval(z).norm() * w * w / 4.0
}

/// Maximum of [`eval_hnorm`] over the grid nodes.
pub fn c0_norm(phi: &QuadDiff, grid: &DiskGrid) -> f64 {
    let mut m: f64 = 0.0;
    for idx in 0..grid.n_nodes() {
        m = m.max(eval_hnorm(phi, grid.node_z(idx)));
    }
    m
}

/// Real pairing `Re(p(z) q̄(z)) (1−|z|²)⁴/16`; `pairing(φ,φ,z) = |φ|ₕ(z)²`.
pub fn pairing(phi: &QuadDiff, psi: &QuadDiff, z: Complex64) -> f64 {
    let w = 1.0 - z.norm_sqr();
    let w2 = w * w;
    (phi.eval(z) * psi.eval(z).conj()).re * w2 * w2 / 16.0
}

/// The field `|φ|²ₕ` sampled on every node.
pub fn hnorm_sq_field(phi: &QuadDiff, grid: &Arc<DiskGrid>) -> ScalarField {
    ScalarField::from_fn(grid, |idx| {
        let h = eval_hnorm(phi, grid.node_z(idx));
        h * h
    })
}

/// Rescale so that the grid `C⁰` norm equals `target` (up to rounding).
/// Returns `None` for the zero differential.
pub fn rescale_to_c0(phi: &QuadDiff, target: f64, grid: &DiskGrid) -> Option<QuadDiff> {
    let n = c0_norm(phi, grid);
    if n == 0.0 {
        return None;
    }
    Some(phi.scale(target / n))
}

/// Rescale so that the grid `C⁰` norm is `≥ target` in exact float
/// comparison, nudging by ulps if rounding left it just below.
pub fn rescale_to_c0_at_least(phi: &QuadDiff, target: f64, grid: &DiskGrid) -> Option<QuadDiff> {
    let mut out = rescale_to_c0(phi, target, grid)?;
    let mut bump = 1.0 + f64::EPSILON;
    for _ in 0..64 {
        if c0_norm(&out, grid) >= target {
            return Some(out);
        }
        out = out.scale(bump);
        bump += f64::EPSILON;
    }
    None
}

impl Serialize for QuadDiff {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = self.coeffs.iter().map(|c| [c.re, c.im]).collect();
        pairs.serialize(s)
    }
}

impl<'de> Deserialize<'de> for QuadDiff {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let pairs: Vec<[f64; 2]> = Vec::deserialize(d)?;
        if pairs.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return Err(D::Error::custom("non-finite coefficient"));
        }
        Ok(QuadDiff {
            coeffs: pairs
                .into_iter()
                .map(|p| Complex64::new(p[0], p[1]))
                .collect(),
        })
    }
}
