//! Surface reconstruction in the hyperboloid model of hyperbolic 3-space.
//!
//! A solved pair `(u, φ)` determines first and second fundamental forms; the
//! frame system `∂X = E`, `∂E = ΓE + II·N + g·X`, `∂N = −A·E` is integrated
//! through Minkowski space `R^{3,1}` along radial rays after one angular pass
//! around the first ring. Storage order of 4-vectors is `[x1, x2, x3, x0]`
//! with the timelike coordinate last, inner product `x·y − x₀y₀`.
//!
//! The angular coordinate degenerates at the center, so the radial system is
//! integrated in the rescaled variable `Ê₂ = E₂/sinh ρ`, which is regular on
//! the whole ray; node values store `E₂ = sinh(ρ)Ê₂`.
//!
//! Normal orientation: for `φ = dz²` the principal direction along θ = 0 at
//! the center has positive principal curvature. The opposite choice produces
//! the isometric mirror surface.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DiskGrid, ScalarField};
use crate::io::{atomic_write, fmt_f64};
use crate::quad_diff::QuadDiff;

type V4 = [f64; 4];

#[inline]
fn edot(a: &V4, b: &V4) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

// Error-free transforms (Dekker/Knuth). The Minkowski products of frame
// vectors cancel catastrophically at large amplitude (components ~ cosh ρ
// with ⟨X,X⟩ = −1), and a renormalization scalar computed from the plain dot
// injects ~ε·‖X‖² noise into the frame each pass. Compensated dots keep the
// correction coefficients accurate to the scale of the result instead.
#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    const SPLIT: f64 = 134_217_729.0; // 2^27 + 1
    let p = a * b;
    let ca = SPLIT * a;
    let ah = ca - (ca - a);
    let al = a - ah;
    let cb = SPLIT * b;
    let bh = cb - (cb - b);
    let bl = b - bh;
    (p, ((ah * bh - p) + ah * bl + al * bh) + al * bl)
}

/// Minkowski inner product with compensated accumulation.
fn mdot_comp(a: &V4, b: &V4) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for k in 0..4 {
        let x = if k == 3 { -a[k] } else { a[k] };
        let (p, pe) = two_prod(x, b[k]);
        let (t, te) = two_sum(s, p);
        s = t;
        c += pe + te;
    }
    s + c
}

#[inline]
fn axpy(y: &mut V4, a: f64, x: &V4) {
    for k in 0..4 {
        y[k] += a * x[k];
    }
}

#[derive(Clone, Copy, Debug)]
struct FrameState {
    x: V4,
    e1: V4,
    e2: V4,
    n: V4,
}

impl FrameState {
    fn zero() -> FrameState {
        FrameState {
            x: [0.0; 4],
            e1: [0.0; 4],
            e2: [0.0; 4],
            n: [0.0; 4],
        }
    }

    fn saxpy(&mut self, a: f64, d: &FrameState) {
        axpy(&mut self.x, a, &d.x);
        axpy(&mut self.e1, a, &d.e1);
        axpy(&mut self.e2, a, &d.e2);
        axpy(&mut self.n, a, &d.n);
    }
}

fn rk4_step(f: &impl Fn(f64, &FrameState) -> FrameState, t: f64, h: f64, s: &FrameState) -> FrameState {
    let k1 = f(t, s);
    let mut s2 = *s;
    s2.saxpy(h / 2.0, &k1);
    let k2 = f(t + h / 2.0, &s2);
    let mut s3 = *s;
    s3.saxpy(h / 2.0, &k2);
    let k3 = f(t + h / 2.0, &s3);
    let mut s4 = *s;
    s4.saxpy(h, &k3);
    let k4 = f(t + h, &s4);
    let mut out = *s;
    out.saxpy(h / 6.0, &k1);
    out.saxpy(h / 3.0, &k2);
    out.saxpy(h / 3.0, &k3);
    out.saxpy(h / 6.0, &k4);
    out
}

const RENORM_DEADBAND: f64 = 1e-9;

/// Restore the Minkowski constraints by projection, leaving the tangent
/// Gram matrix untouched. Returns the relative drift found beforehand.
fn renormalize(s: &mut FrameState) -> Result<f64> {
    let scale = |v: &V4| edot(v, v).sqrt().max(1e-300);
    let xx = -mdot_comp(&s.x, &s.x);
    if xx <= 0.0 {
        return Err(Error::DriftExceeded { drift: f64::INFINITY });
    }
    let mut drift = (xx - 1.0).abs() / edot(&s.x, &s.x);
    for e in [&s.e1, &s.e2, &s.n] {
        drift = drift.max(mdot_comp(e, &s.x).abs() / (scale(e) * scale(&s.x)));
    }
    drift = drift.max((mdot_comp(&s.n, &s.n) - 1.0).abs() / edot(&s.n, &s.n));

    // Deadband: near the light cone the Minkowski projector has euclidean
    // condition ~‖X‖², so correcting rounding-level drift would inject far
    // more error than it removes. Project only against real drift.
    if drift <= RENORM_DEADBAND {
        return Ok(drift);
    }

    let inv = 1.0 / xx.sqrt();
    for k in 0..4 {
        s.x[k] *= inv;
    }
    for e in [&mut s.e1, &mut s.e2, &mut s.n] {
        let c = mdot_comp(e, &s.x);
        axpy(e, c, &s.x); // projection: e + <e,x>x is x-orthogonal since <x,x> = -1
    }
    // orthogonalize the normal against the tangent plane and renormalize
    let n1 = mdot_comp(&s.e1, &s.e1);
    if n1 > 0.0 {
        let mut t1 = s.e1;
        let inv1 = 1.0 / n1.sqrt();
        for k in 0..4 {
            t1[k] *= inv1;
        }
        let c = mdot_comp(&s.n, &t1);
        axpy(&mut s.n, -c, &t1);
        let mut t2 = s.e2;
        let c = mdot_comp(&s.e2, &t1);
        axpy(&mut t2, -c, &t1);
        let n2 = mdot_comp(&t2, &t2);
        if n2 > 0.0 {
            let inv2 = 1.0 / n2.sqrt();
            for k in 0..4 {
                t2[k] *= inv2;
            }
            let c = mdot_comp(&s.n, &t2);
            axpy(&mut s.n, -c, &t2);
        }
    }
    let nn = mdot_comp(&s.n, &s.n);
    if nn <= 0.0 {
        return Err(Error::DriftExceeded { drift: f64::INFINITY });
    }
    let invn = 1.0 / nn.sqrt();
    for k in 0..4 {
        s.n[k] *= invn;
    }
    Ok(drift)
}

/// Not-a-knot cubic spline on a uniform table. A C² interpolant matters
/// here: piecewise-Lagrange windows leave derivative kinks at every node,
/// which cost the Runge–Kutta sweep an order and get amplified by the
/// hyperbolic growth along rays. Evaluation outside the table clamps to the
/// end cubics.
struct UniformTable {
    x0: f64,
    h: f64,
    vals: Vec<f64>,
    m: Vec<f64>, // second derivatives at the knots
}

impl UniformTable {
    fn new(x0: f64, h: f64, vals: Vec<f64>) -> UniformTable {
        let n = vals.len() - 1; // intervals
        assert!(n >= 3, "spline needs at least 4 points");
        let h2 = h * h;
        let d2 = |i: usize| (vals[i - 1] - 2.0 * vals[i] + vals[i + 1]) / h2;
        let mut m = vec![0.0; n + 1];
        // not-a-knot: third-derivative continuity at the second and
        // second-to-last knots decouples m[1] and m[n-1]
        m[1] = d2(1);
        m[n - 1] = d2(n - 1);
        if n >= 4 {
            // tridiagonal for m[2..=n-2]: m[i-1] + 4 m[i] + m[i+1] = 6 d2(i)
            let len = n - 3;
            let mut diag = vec![4.0; len];
            let mut rhs = vec![0.0; len];
            for k in 0..len {
                let i = k + 2;
                rhs[k] = 6.0 * d2(i);
            }
            rhs[0] -= m[1];
            rhs[len - 1] -= m[n - 1];
            for k in 1..len {
                let w = 1.0 / diag[k - 1];
                diag[k] -= w;
                rhs[k] -= rhs[k - 1] * w;
            }
            m[n - 2] = rhs[len - 1] / diag[len - 1];
            for k in (0..len - 1).rev() {
                m[k + 2] = (rhs[k] - m[k + 3]) / diag[k];
            }
        }
        m[0] = 2.0 * m[1] - m[2];
        m[n] = 2.0 * m[n - 1] - m[n - 2];
        UniformTable { x0, h, vals, m }
    }

    #[inline]
    fn interval(&self, x: f64) -> (usize, f64) {
        let n = self.vals.len() - 1;
        let i = (((x - self.x0) / self.h).floor() as isize).clamp(0, n as isize - 1) as usize;
        (i, x - self.x0 - i as f64 * self.h)
    }

    fn eval(&self, x: f64) -> f64 {
        let (i, t) = self.interval(x);
        let h = self.h;
        let lin = (self.vals[i + 1] - self.vals[i]) / h - h * (2.0 * self.m[i] + self.m[i + 1]) / 6.0;
        self.vals[i] + t * (lin + t * (self.m[i] / 2.0 + t * (self.m[i + 1] - self.m[i]) / (6.0 * h)))
    }

    fn eval_deriv(&self, x: f64) -> f64 {
        let (i, t) = self.interval(x);
        let h = self.h;
        let lin = (self.vals[i + 1] - self.vals[i]) / h - h * (2.0 * self.m[i] + self.m[i + 1]) / 6.0;
        lin + t * (self.m[i] + t * (self.m[i + 1] - self.m[i]) / (2.0 * h))
    }
}

/// Periodic cubic Lagrange interpolation for the angular sweep.
struct PeriodicTable {
    h: f64,
    vals: Vec<f64>,
}

impl PeriodicTable {
    fn eval_both(&self, x: f64) -> (f64, f64) {
        let n = self.vals.len() as isize;
        let k = (x / self.h).floor() as isize;
        let t = x / self.h - (k - 1) as f64;
        let at = |o: isize| self.vals[((k - 1 + o).rem_euclid(n)) as usize];
        let f = [at(0), at(1), at(2), at(3)];
        let l0 = -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0;
        let l1 = t * (t - 2.0) * (t - 3.0) / 2.0;
        let l2 = -t * (t - 1.0) * (t - 3.0) / 2.0;
        let l3 = t * (t - 1.0) * (t - 2.0) / 6.0;
        let d0 = -((t - 2.0) * (t - 3.0) + (t - 1.0) * (t - 3.0) + (t - 1.0) * (t - 2.0)) / 6.0;
        let d1 = ((t - 2.0) * (t - 3.0) + t * (t - 3.0) + t * (t - 2.0)) / 2.0;
        let d2 = -((t - 1.0) * (t - 3.0) + t * (t - 3.0) + t * (t - 1.0)) / 2.0;
        let d3 = ((t - 1.0) * (t - 2.0) + t * (t - 1.0) + t * (t - 2.0)) / 6.0;
        (
            f[0] * l0 + f[1] * l1 + f[2] * l2 + f[3] * l3,
            (f[0] * d0 + f[1] * d1 + f[2] * d2 + f[3] * d3) / self.h,
        )
    }
}

/// Adapted frames and positions realizing the immersion, one per grid node.
#[derive(Debug, Clone)]
pub struct FrameField {
    grid: Arc<DiskGrid>,
    x: Vec<V4>,
    e1: Vec<V4>,
    e2: Vec<V4>,
    n: Vec<V4>,
    /// Largest relative constraint drift seen before any renormalization.
    pub max_drift: f64,
}

impl FrameField {
    pub fn grid(&self) -> &Arc<DiskGrid> {
        &self.grid
    }
    pub fn position(&self, idx: usize) -> V4 {
        self.x[idx]
    }
    pub fn tangent_rho(&self, idx: usize) -> V4 {
        self.e1[idx]
    }
    pub fn tangent_theta(&self, idx: usize) -> V4 {
        self.e2[idx]
    }
    pub fn normal(&self, idx: usize) -> V4 {
        self.n[idx]
    }

    /// Largest relative violation of the Minkowski constraints at the nodes.
    pub fn constraint_violation(&self) -> f64 {
        let scale = |v: &V4| edot(v, v).sqrt().max(1e-300);
        let mut worst: f64 = 0.0;
        for idx in 0..self.grid.n_nodes() {
            let (x, n) = (&self.x[idx], &self.n[idx]);
            worst = worst.max((mdot_comp(x, x) + 1.0).abs() / edot(x, x));
            worst = worst.max((mdot_comp(n, n) - 1.0).abs() / edot(n, n));
            worst = worst.max(mdot_comp(x, n).abs() / (scale(x) * scale(n)));
            for e in [&self.e1[idx], &self.e2[idx]] {
                if edot(e, e) > 0.0 {
                    worst = worst.max(mdot_comp(x, e).abs() / (scale(x) * scale(e)));
                    worst = worst.max(mdot_comp(n, e).abs() / (scale(n) * scale(e)));
                }
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IntegrationParams {
    /// Upper bound on the RK4 substep length (radial and angular).
    pub max_substep: f64,
    /// Lower bound on substeps per grid interval.
    pub min_substeps: usize,
    /// Relative constraint drift tolerated before renormalization.
    pub drift_tol: f64,
}

impl Default for IntegrationParams {
    fn default() -> Self {
        IntegrationParams {
            max_substep: 7e-3,
            min_substeps: 4,
            drift_tol: 1e-6,
        }
    }
}

impl IntegrationParams {
    fn substeps_for(&self, step: f64) -> usize {
        ((step / self.max_substep).ceil() as usize).max(self.min_substeps)
    }
}

/// `II` in the euclidean coordinate basis `(∂x, ∂y)`:
/// `[[Re p, −Im p], [−Im p, −Re p]]`, trace-free since the mean curvature
/// vanishes.
pub fn second_fundamental_form(phi: &QuadDiff, z: Complex64) -> [[f64; 2]; 2] {
    let p = phi.eval(z);
    [[p.re, -p.im], [-p.im, -p.re]]
}

/// Shape operator `A = g⁻¹·II` in the euclidean basis; trace-free with
/// `det A = −(e⁻²ᵘ|φ|ₕ)²` and eigenvalues `±e⁻²ᵘ|φ|ₕ`.
pub fn shape_operator(u: &ScalarField, phi: &QuadDiff, idx: usize) -> [[f64; 2]; 2] {
    let z = u.grid().node_z(idx);
    let w = 1.0 - z.norm_sqr();
    let k = (-2.0 * u.at(idx)).exp() * w * w / 4.0;
    let ii = second_fundamental_form(phi, z);
    [
        [k * ii[0][0], k * ii[0][1]],
        [k * ii[1][0], k * ii[1][1]],
    ]
}

/// `II` components in geodesic polar coordinates at `(ρ, θ)`.
fn ii_polar(phi: &QuadDiff, rho: f64, theta: f64) -> (f64, f64, f64) {
    let t = (rho / 2.0).tanh();
    let z = Complex64::from_polar(t, theta);
    let big_p = phi.eval(z) * Complex64::from_polar(1.0, 2.0 * theta);
    let sech2 = 1.0 - t * t;
    let s4 = sech2 * sech2 / 4.0;
    let v = 0.5 * sech2 * t;
    (s4 * big_p.re, -v * big_p.im, -t * t * big_p.re)
}

struct RayCoeffs {
    theta: f64,
    u: UniformTable,
    /// `u_θ / sinh ρ` sampled on rings 1..n_rho, extrapolated below.
    v: UniformTable,
}

impl RayCoeffs {
    fn radial_rhs(&self, phi: &QuadDiff, rho: f64, s: &FrameState) -> FrameState {
        let u = self.u.eval(rho);
        let u_r = self.u.eval_deriv(rho);
        let vth = self.v.eval(rho);
        let t = (rho / 2.0).tanh();
        let sech2 = 1.0 - t * t;
        let s4 = sech2 * sech2 / 4.0;
        let z = Complex64::from_polar(t, self.theta);
        let big_p = phi.eval(z) * Complex64::from_polar(1.0, 2.0 * self.theta);
        let ii_rr = s4 * big_p.re;
        let ii_rt_sinh = -s4 * big_p.im; // II_ρθ / sinh ρ
        let e2u = (2.0 * u).exp();
        let em2u = (-2.0 * u).exp();

        let mut d = FrameState::zero();
        d.x = s.e1;
        // E₁' = u_ρE₁ − (u_θ/sinh ρ)Ê₂ + II_ρρ N + e²ᵘ X
        axpy(&mut d.e1, u_r, &s.e1);
        axpy(&mut d.e1, -vth, &s.e2);
        axpy(&mut d.e1, ii_rr, &s.n);
        axpy(&mut d.e1, e2u, &s.x);
        // Ê₂' = (u_θ/sinh ρ)E₁ + u_ρÊ₂ + (II_ρθ/sinh ρ) N
        axpy(&mut d.e2, vth, &s.e1);
        axpy(&mut d.e2, u_r, &s.e2);
        axpy(&mut d.e2, ii_rt_sinh, &s.n);
        // N' = −e⁻²ᵘ(II_ρρ E₁ + (II_ρθ/sinh ρ)Ê₂)
        axpy(&mut d.n, -em2u * ii_rr, &s.e1);
        axpy(&mut d.n, -em2u * ii_rt_sinh, &s.e2);
        d
    }
}

struct RingCoeffs {
    rho: f64,
    u: PeriodicTable,
    u_r: PeriodicTable,
}

impl RingCoeffs {
    fn theta_rhs(&self, phi: &QuadDiff, theta: f64, s: &FrameState) -> FrameState {
        let (u, u_th) = self.u.eval_both(theta);
        let (u_r, _) = self.u_r.eval_both(theta);
        let sh = self.rho.sinh();
        let ch = self.rho.cosh();
        let (_, ii_rt, ii_tt) = ii_polar(phi, self.rho, theta);
        let e2u = (2.0 * u).exp();
        let em2u = (-2.0 * u).exp();

        let mut d = FrameState::zero();
        d.x = s.e2;
        // E₁' = u_θE₁ + (coth ρ + u_ρ)E₂ + II_ρθ N
        axpy(&mut d.e1, u_th, &s.e1);
        axpy(&mut d.e1, ch / sh + u_r, &s.e2);
        axpy(&mut d.e1, ii_rt, &s.n);
        // E₂' = (−sinh ρ cosh ρ − sinh²ρ u_ρ)E₁ + u_θE₂ + II_θθ N + e²ᵘ sinh²ρ X
        axpy(&mut d.e2, -sh * ch - sh * sh * u_r, &s.e1);
        axpy(&mut d.e2, u_th, &s.e2);
        axpy(&mut d.e2, ii_tt, &s.n);
        axpy(&mut d.e2, e2u * sh * sh, &s.x);
        // N' = −e⁻²ᵘ(II_ρθ E₁ + (II_θθ/sinh²ρ) E₂)
        axpy(&mut d.n, -em2u * ii_rt, &s.e1);
        axpy(&mut d.n, -em2u * ii_tt / (sh * sh), &s.e2);
        d
    }
}

fn node_u_theta(u: &ScalarField, i: usize, j: usize) -> f64 {
    let g = u.grid();
    let nt = g.n_theta();
    (u.at(g.idx(i, (j + 1) % nt)) - u.at(g.idx(i, (j + nt - 1) % nt))) / (2.0 * g.d_theta())
}

fn ray_coeffs(u: &ScalarField, j: usize) -> RayCoeffs {
    let g = u.grid();
    let nr = g.n_rho();
    let dr = g.d_rho();
    let u_vals: Vec<f64> = (0..=nr).map(|i| u.at(g.idx(i, j))).collect();
    let v_vals: Vec<f64> = (1..=nr)
        .map(|i| node_u_theta(u, i, j) / g.sinh_ring(i))
        .collect();
    RayCoeffs {
        theta: g.theta(j),
        u: UniformTable::new(0.0, dr, u_vals),
        v: UniformTable::new(dr, dr, v_vals),
    }
}

/// Integrate the adapted frame of a converged pair `(u, φ)` over the grid.
pub fn integrate_frame(u: &ScalarField, phi: &QuadDiff) -> Result<FrameField> {
    integrate_frame_with(u, phi, &IntegrationParams::default())
}

pub fn integrate_frame_with(
    u: &ScalarField,
    phi: &QuadDiff,
    params: &IntegrationParams,
) -> Result<FrameField> {
    let grid = u.grid().clone();
    let nr = grid.n_rho();
    let nt = grid.n_theta();
    let dr = grid.d_rho();
    let dt = grid.d_theta();
    let n_nodes = grid.n_nodes();

    let e_u0 = u.at(0).exp();
    let center = FrameState {
        x: [0.0, 0.0, 0.0, 1.0],
        e1: [e_u0, 0.0, 0.0, 0.0],
        e2: [0.0, e_u0, 0.0, 0.0], // Ê₂ limit at the center
        n: [0.0, 0.0, 1.0, 0.0],
    };

    let radial_substeps = params.substeps_for(dr);
    let theta_substeps = params.substeps_for(dt);

    // seed step: center to the first ring along θ = 0, rescaled radial system
    let coeffs0 = ray_coeffs(u, 0);
    let mut state = center;
    let mut max_drift: f64 = 0.0;
    let h = dr / radial_substeps as f64;
    for k in 0..radial_substeps {
        let rho = k as f64 * h;
        state = rk4_step(&|r, s| coeffs0.radial_rhs(phi, r, s), rho, h, &state);
    }
    max_drift = max_drift.max(renormalize(&mut state)?);

    // one angular pass around the first ring, unscaled E₂
    let sinh1 = grid.sinh_ring(1);
    let mut ring_states: Vec<FrameState> = Vec::with_capacity(nt);
    let mut sweep = state;
    for k in 0..4 {
        sweep.e2[k] *= sinh1;
    }
    ring_states.push(sweep);
    let u_ring: Vec<f64> = (0..nt).map(|j| u.at(grid.idx(1, j))).collect();
    let u_r_ring: Vec<f64> = (0..nt)
        .map(|j| (u.at(grid.idx(2, j)) - u.at(0)) / (2.0 * dr))
        .collect();
    let ring = RingCoeffs {
        rho: grid.ring_rho(1),
        u: PeriodicTable {
            h: dt,
            vals: u_ring,
        },
        u_r: PeriodicTable {
            h: dt,
            vals: u_r_ring,
        },
    };
    let ht = dt / theta_substeps as f64;
    for j in 1..nt {
        let mut s = ring_states[j - 1];
        for k in 0..theta_substeps {
            let th = (j - 1) as f64 * dt + k as f64 * ht;
            s = rk4_step(&|t, st| ring.theta_rhs(phi, t, st), th, ht, &s);
        }
        max_drift = max_drift.max(renormalize(&mut s)?);
        ring_states.push(s);
    }

    // radial rays from the first ring outward, data-parallel across θ
    let rays: Vec<Result<(Vec<FrameState>, f64)>> = (0..nt)
        .into_par_iter()
        .map(|j| {
            let coeffs = ray_coeffs(u, j);
            let mut s = ring_states[j];
            let inv = 1.0 / sinh1;
            for k in 0..4 {
                s.e2[k] *= inv; // back to Ê₂
            }
            let mut drift_j: f64 = 0.0;
            let mut out = Vec::with_capacity(nr);
            out.push(scale_e2(&s, sinh1));
            for i in 1..nr {
                let rho_i = grid.ring_rho(i);
                for k in 0..radial_substeps {
                    let rho = rho_i + k as f64 * h;
                    s = rk4_step(&|r, st| coeffs.radial_rhs(phi, r, st), rho, h, &s);
                }
                drift_j = drift_j.max(renormalize(&mut s)?);
                out.push(scale_e2(&s, grid.sinh_ring(i + 1)));
            }
            Ok((out, drift_j))
        })
        .collect();

    let mut x = vec![[0.0; 4]; n_nodes];
    let mut e1 = vec![[0.0; 4]; n_nodes];
    let mut e2 = vec![[0.0; 4]; n_nodes];
    let mut n = vec![[0.0; 4]; n_nodes];
    x[0] = center.x;
    e1[0] = center.e1;
    n[0] = center.n;
    for (j, ray) in rays.into_iter().enumerate() {
        let (states, drift_j) = ray?;
        max_drift = max_drift.max(drift_j);
        for (i, st) in states.iter().enumerate() {
            let idx = grid.idx(i + 1, j);
            x[idx] = st.x;
            e1[idx] = st.e1;
            e2[idx] = st.e2;
            n[idx] = st.n;
        }
    }

    if max_drift > params.drift_tol {
        return Err(Error::DriftExceeded { drift: max_drift });
    }
    Ok(FrameField {
        grid,
        x,
        e1,
        e2,
        n,
        max_drift,
    })
}

fn scale_e2(s: &FrameState, sinh_rho: f64) -> FrameState {
    let mut out = *s;
    for k in 0..4 {
        out.e2[k] *= sinh_rho;
    }
    out
}

/// Max over plaquette-interior nodes of the discrete mixed-partial closure
/// error `‖D_θE₁ − D_ρE₂‖`; route-independence of the integrated frame.
pub fn holonomy_defect(frame: &FrameField) -> f64 {
    let g = &frame.grid;
    let (nr, nt) = (g.n_rho(), g.n_theta());
    let (dr, dt) = (g.d_rho(), g.d_theta());
    let mut worst: f64 = 0.0;
    for i in 2..nr {
        for j in 0..nt {
            let jp = g.idx(i, (j + 1) % nt);
            let jm = g.idx(i, (j + nt - 1) % nt);
            let ip = g.idx(i + 1, j);
            let im = g.idx(i - 1, j);
            let mut defect = 0.0_f64;
            for k in 0..4 {
                let dth_e1 = (frame.e1[jp][k] - frame.e1[jm][k]) / (2.0 * dt);
                let drh_e2 = (frame.e2[ip][k] - frame.e2[im][k]) / (2.0 * dr);
                defect += (dth_e1 - drh_e2) * (dth_e1 - drh_e2);
            }
            worst = worst.max(defect.sqrt());
        }
    }
    worst
}

/// Relative sup error of `Gram(E₁,E₂)` against `e²ᵘh`, normalized per entry
/// by `√(g_aa g_bb)`. The degenerate center is excluded.
pub fn induced_metric_error(frame: &FrameField, u: &ScalarField) -> f64 {
    let g = &frame.grid;
    let mut worst: f64 = 0.0;
    for i in 1..=g.n_rho() {
        for j in 0..g.n_theta() {
            let idx = g.idx(i, j);
            let e2u = (2.0 * u.at(idx)).exp();
            let g_rr = e2u;
            let g_tt = e2u * g.sinh_ring(i) * g.sinh_ring(i);
            let g11 = mdot_comp(&frame.e1[idx], &frame.e1[idx]);
            let g12 = mdot_comp(&frame.e1[idx], &frame.e2[idx]);
            let g22 = mdot_comp(&frame.e2[idx], &frame.e2[idx]);
            worst = worst.max((g11 - g_rr).abs() / g_rr);
            worst = worst.max(g12.abs() / (g_rr * g_tt).sqrt());
            worst = worst.max((g22 - g_tt).abs() / g_tt);
        }
    }
    worst
}

/// Second fundamental form recovered from second differences of the
/// positions projected on the normal, in polar components.
pub fn recovered_ii(frame: &FrameField, i: usize, j: usize) -> (f64, f64, f64) {
    let g = &frame.grid;
    let (nr, nt) = (g.n_rho(), g.n_theta());
    assert!(i >= 1 && i < nr, "ring must be interior");
    let (dr, dt) = (g.d_rho(), g.d_theta());
    let jp = (j + 1) % nt;
    let jm = (j + nt - 1) % nt;
    let at = |ii: usize, jj: usize| &frame.x[g.idx(ii, jj)];
    let n = &frame.n[g.idx(i, j)];

    let mut dd_rr = 0.0;
    let mut dd_rt = 0.0;
    let mut dd_tt = 0.0;
    let x0 = at(i, j);
    for k in 0..4 {
        let rr = (at(i + 1, j)[k] - 2.0 * x0[k] + at(i - 1, j)[k]) / (dr * dr);
        let rt = (at(i + 1, jp)[k] - at(i + 1, jm)[k] - at(i - 1, jp)[k] + at(i - 1, jm)[k])
            / (4.0 * dr * dt);
        let tt = (at(i, jp)[k] - 2.0 * x0[k] + at(i, jm)[k]) / (dt * dt);
        // Minkowski projection on N (signature +++−)
        let sign = if k == 3 { -1.0 } else { 1.0 };
        dd_rr += sign * rr * n[k];
        dd_rt += sign * rt * n[k];
        dd_tt += sign * tt * n[k];
    }
    (dd_rr, dd_rt, dd_tt)
}

/// Round-trip error `sup |φ̂ − φ|ₕ` of the differential recovered from the
/// frame, over rings `1..n_rho−1`.
pub fn hopf_roundtrip_error(frame: &FrameField, phi: &QuadDiff) -> f64 {
    let g = &frame.grid;
    let mut worst: f64 = 0.0;
    for i in 1..g.n_rho() {
        let rho = g.ring_rho(i);
        let t = (rho / 2.0).tanh();
        let sech2 = 1.0 - t * t;
        let s4 = sech2 * sech2 / 4.0;
        let v = 0.5 * sech2 * t;
        for j in 0..g.n_theta() {
            let (ii_rr, ii_rt, _) = recovered_ii(frame, i, j);
            let w_re = ii_rr / s4;
            let w_im = -ii_rt / v;
            let theta = g.theta(j);
            let p_hat = Complex64::new(w_re, w_im) * Complex64::from_polar(1.0, -2.0 * theta);
            let z = g.node_z(g.idx(i, j));
            let err = (p_hat - phi.eval(z)).norm() * sech2 * sech2 / 4.0;
            worst = worst.max(err);
        }
    }
    worst
}

/// The metric pulled back along the normal flow at distance `t`:
/// `g_t = g((cosh t·I + sinh t·A)·, ·same·)` per node, euclidean basis.
pub fn normal_flow_metric(u: &ScalarField, phi: &QuadDiff, t: f64) -> Vec<[[f64; 2]; 2]> {
    let grid = u.grid();
    let (ct, st) = (t.cosh(), t.sinh());
    (0..grid.n_nodes())
        .map(|idx| {
            let z = grid.node_z(idx);
            let w = 1.0 - z.norm_sqr();
            let lam = 4.0 * (2.0 * u.at(idx)).exp() / (w * w);
            let a = shape_operator(u, phi, idx);
            let b = [
                [ct + st * a[0][0], st * a[0][1]],
                [st * a[1][0], ct + st * a[1][1]],
            ];
            // g_t = λ·BᵀB with symmetric B
            [
                [
                    lam * (b[0][0] * b[0][0] + b[1][0] * b[1][0]),
                    lam * (b[0][0] * b[0][1] + b[1][0] * b[1][1]),
                ],
                [
                    lam * (b[0][1] * b[0][0] + b[1][1] * b[1][0]),
                    lam * (b[0][1] * b[0][1] + b[1][1] * b[1][1]),
                ],
            ]
        })
        .collect()
}

/// Positive definiteness of one 2×2 symmetric matrix.
pub fn is_positive_definite(m: &[[f64; 2]; 2]) -> bool {
    m[0][0] > 0.0 && m[0][0] * m[1][1] - m[0][1] * m[1][0] > 0.0
}

/// Triangulated mesh in the Poincaré ball model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshOutput {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

/// Hyperboloid-to-ball projection `v = (x₁,x₂,x₃)/(1+x₀)` plus the grid
/// triangulation: a center fan and two triangles per quad.
pub fn mesh_from_frame(frame: &FrameField) -> MeshOutput {
    let g = &frame.grid;
    let (nr, nt) = (g.n_rho(), g.n_theta());
    let vertices: Vec<[f64; 3]> = (0..g.n_nodes())
        .map(|idx| {
            let x = &frame.x[idx];
            let d = 1.0 + x[3];
            [x[0] / d, x[1] / d, x[2] / d]
        })
        .collect();
    let mut faces = Vec::with_capacity(nt + 2 * nt * (nr - 1));
    for j in 0..nt {
        faces.push([0, g.idx(1, j), g.idx(1, (j + 1) % nt)]);
    }
    for i in 1..nr {
        for j in 0..nt {
            let a = g.idx(i, j);
            let b = g.idx(i, (j + 1) % nt);
            let c = g.idx(i + 1, j);
            let d = g.idx(i + 1, (j + 1) % nt);
            faces.push([a, c, d]);
            faces.push([a, d, b]);
        }
    }
    MeshOutput { vertices, faces }
}

/// Write the mesh as a Wavefront OBJ file (atomic replace).
pub fn export_mesh(frame: &FrameField, path: &Path) -> Result<MeshOutput> {
    let mesh = mesh_from_frame(frame);
    let mut buf = Vec::new();
    for v in &mesh.vertices {
        writeln!(buf, "v {} {} {}", fmt_f64(v[0]), fmt_f64(v[1]), fmt_f64(v[2]))?;
    }
    for f in &mesh.faces {
        writeln!(buf, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    atomic_write(path, &buf)?;
    Ok(mesh)
}

/// Per-node Minkowski coordinates, header `rho,theta,x0,x1,x2,x3` with `x0`
/// the timelike coordinate.
pub fn write_minkowski_csv(frame: &FrameField, w: &mut impl Write) -> Result<()> {
    let g = &frame.grid;
    writeln!(w, "rho,theta,x0,x1,x2,x3")?;
    for idx in 0..g.n_nodes() {
        let x = &frame.x[idx];
        writeln!(
            w,
            "{},{},{},{},{},{}",
            fmt_f64(g.node_rho(idx)),
            fmt_f64(g.node_theta(idx)),
            fmt_f64(x[3]),
            fmt_f64(x[0]),
            fmt_f64(x[1]),
            fmt_f64(x[2])
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{solve_auto, SolveParams};
    use approx::assert_abs_diff_eq;
    #[allow(unused_imports)]
    use crate::quad_diff::eval_hnorm;

    fn plane_frame(nr: usize, nt: usize, rho_max: f64) -> (Arc<DiskGrid>, FrameField) {
        let g = DiskGrid::new(nr, nt, rho_max).unwrap();
        let u = ScalarField::zeros(&g);
        let f = integrate_frame(&u, &QuadDiff::zero()).unwrap();
        (g, f)
    }

    #[test]
    fn ii_matrix_examples() {
        let z0 = Complex64::new(0.0, 0.0);
        assert_eq!(second_fundamental_form(&QuadDiff::zero(), z0), [[0.0, 0.0], [0.0, 0.0]]);
        let ii = second_fundamental_form(&QuadDiff::constant(1.0), z0);
        assert_eq!(ii, [[1.0, 0.0], [0.0, -1.0]]);
        let ii = second_fundamental_form(&QuadDiff::new(vec![Complex64::new(0.0, 1.0)]), z0);
        assert_eq!(ii, [[0.0, -1.0], [-1.0, 0.0]]);
        // trace-free always
        assert_eq!(ii[0][0] + ii[1][1], 0.0);
    }

    #[test]
    fn shape_operator_examples() {
        let g = DiskGrid::new(8, 8, 4.0).unwrap();
        let u = ScalarField::zeros(&g);
        let a = shape_operator(&u, &QuadDiff::zero(), 0);
        assert_eq!(a, [[0.0, 0.0], [0.0, 0.0]]);

        let a = shape_operator(&u, &QuadDiff::constant(1.0), 0);
        assert_eq!(a, [[0.25, 0.0], [0.0, -0.25]]);
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        assert_eq!(det, -0.0625);
        // matches the extrinsic curvature value exactly
        let ke = crate::analysis::extrinsic_curvature(&u, &QuadDiff::constant(1.0));
        assert_eq!(det, ke.at(0));

        // eigenvalues are ±e⁻²ᵘ|φ|ₕ for a generic coefficient
        let phi = QuadDiff::new(vec![Complex64::new(0.6, -0.8)]);
        let a = shape_operator(&u, &phi, 0);
        let disc = ((a[0][0] - a[1][1]) / 2.0).powi(2) + a[0][1] * a[1][0];
        let eig = ((a[0][0] + a[1][1]) / 2.0) + disc.sqrt();
        assert_abs_diff_eq!(eig, eval_hnorm(&phi, Complex64::new(0.0, 0.0)), epsilon = 1e-14);
    }

    #[test]
    fn plane_matches_closed_form() {
        let (g, f) = plane_frame(48, 96, 4.0);
        let mut worst: f64 = 0.0;
        for idx in 0..g.n_nodes() {
            let rho = g.node_rho(idx);
            let th = g.node_theta(idx);
            let exact = [rho.sinh() * th.cos(), rho.sinh() * th.sin(), 0.0, rho.cosh()];
            let x = f.position(idx);
            for k in 0..4 {
                worst = worst.max((x[k] - exact[k]).abs());
            }
        }
        assert!(worst < 1e-6, "plane error {worst:e}");
        assert!(f.constraint_violation() < 1e-8);
    }

    #[test]
    fn induced_metric_and_roundtrip_converge() {
        let params = SolveParams::default();
        let phi = QuadDiff::constant(1.6);
        let mut hopf_errs = Vec::new();
        let mut holonomy = Vec::new();
        for (nr, nt) in [(32, 64), (64, 128)] {
            let g = DiskGrid::new(nr, nt, 4.0).unwrap();
            let r = solve_auto(&g, &phi, &params).unwrap();
            let f = integrate_frame(&r.u, &phi).unwrap();
            hopf_errs.push(hopf_roundtrip_error(&f, &phi));
            holonomy.push(holonomy_defect(&f));
        }
        // the metric error at the nodes is integrator-driven; refine grid
        // and step together from the coarse end where it carries signal
        let tied = IntegrationParams {
            max_substep: f64::INFINITY,
            min_substeps: 1,
            drift_tol: 1e-3,
        };
        let mut metric_errs = Vec::new();
        for (nr, nt) in [(8, 16), (16, 32)] {
            let g = DiskGrid::new(nr, nt, 4.0).unwrap();
            let r = solve_auto(&g, &phi, &params).unwrap();
            let f = integrate_frame_with(&r.u, &phi, &tied).unwrap();
            metric_errs.push(induced_metric_error(&f, &r.u));
        }
        for (name, errs) in [
            ("metric", &metric_errs),
            ("hopf", &hopf_errs),
            ("holonomy", &holonomy),
        ] {
            let order = (errs[0] / errs[1]).log2();
            assert!(order >= 1.8, "{name} order {order} ({errs:?})");
        }
    }

    #[test]
    fn recovered_ii_matches_closed_form() {
        let g = DiskGrid::new(32, 64, 4.0).unwrap();
        let phi = QuadDiff::new(vec![Complex64::new(1.2, 0.0), Complex64::new(0.0, 0.8)]);
        let r = solve_auto(&g, &phi, &SolveParams::default()).unwrap();
        let f = integrate_frame(&r.u, &phi).unwrap();
        // moderate radii: the raw ii comparison has no h-norm weight, so the
        // angular truncation grows with sinh ρ toward the rim
        for (i, j) in [(2, 0), (8, 13), (12, 20), (16, 40)] {
            let (rr, rt, tt) = recovered_ii(&f, i, j);
            let (err, ert, ett) = ii_polar(&phi, g.ring_rho(i), g.theta(j));
            assert_abs_diff_eq!(rr, err, epsilon = 2e-2);
            assert_abs_diff_eq!(rt, ert, epsilon = 2e-2);
            assert_abs_diff_eq!(tt, ett, epsilon = 2e-2);
        }
    }

    #[test]
    fn perturbed_field_breaks_closure() {
        // a non-solution u plateaus the holonomy defect above the
        // discretization floor under refinement
        let phi = QuadDiff::constant(1.6);
        let params = SolveParams::default();
        let mut defects = Vec::new();
        for (nr, nt) in [(24, 48), (48, 96)] {
            let g = DiskGrid::new(nr, nt, 4.0).unwrap();
            let r = solve_auto(&g, &phi, &params).unwrap();
            let bad = ScalarField::from_fn(&g, |idx| {
                r.u.at(idx) + 0.05 * (-g.node_rho(idx)).exp()
            });
            let f = integrate_frame(&bad, &phi).unwrap();
            defects.push(holonomy_defect(&f));
        }
        let order = (defects[0] / defects[1]).log2();
        assert!(order < 1.0, "defect should plateau, got order {order} ({defects:?})");
    }

    #[test]
    fn normal_flow_examples() {
        let g = DiskGrid::new(16, 16, 4.0).unwrap();
        let u = ScalarField::zeros(&g);
        // φ = 0 reproduces cosh²t · g exactly
        for &t in &[-2.0, 0.0, 1.5] {
            let gts = normal_flow_metric(&u, &QuadDiff::zero(), t);
            for (idx, gt) in gts.iter().enumerate() {
                let z = g.node_z(idx);
                let w = 1.0 - z.norm_sqr();
                let lam = 4.0 / (w * w);
                assert_abs_diff_eq!(gt[0][0], t.cosh().powi(2) * lam, epsilon = 1e-9 * lam);
                assert_abs_diff_eq!(gt[1][1], t.cosh().powi(2) * lam, epsilon = 1e-9 * lam);
                assert_eq!(gt[0][1], 0.0);
            }
        }
        // ‖A‖ < 1 keeps the flow metric positive definite
        let phi = QuadDiff::constant(1.6);
        let r = solve_auto(&g, &phi, &SolveParams::default()).unwrap();
        let mut t = -5.0;
        while t <= 5.0 {
            for m in normal_flow_metric(&r.u, &phi, t) {
                assert!(is_positive_definite(&m));
            }
            t += 0.5;
        }
    }

    #[test]
    fn degenerate_direction_at_unit_shape_norm() {
        // synthetic ‖A‖ = 1: the eigenvalue along the unit direction decays
        // like e^{−2t}, degenerating the metric as t grows
        let lam = 1.0;
        let mut prev = f64::INFINITY;
        for t in [0.0_f64, 1.0, 2.0, 4.0] {
            let b_min = t.cosh() - t.sinh();
            let eig = lam * b_min * b_min;
            assert!(eig < prev);
            prev = eig;
        }
        assert!(prev < 4e-4);
    }

    #[test]
    fn mesh_counts_and_ball_containment() {
        let (_g, f) = plane_frame(16, 24, 4.0);
        let mesh = mesh_from_frame(&f);
        assert_eq!(mesh.vertices.len(), 16 * 24 + 1);
        assert_eq!(mesh.faces.len(), 2 * 24 * (16 - 1) + 24);
        for v in &mesh.vertices {
            let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            assert!(r < 1.0);
        }
        // the plane maps to the flat equatorial disk
        for v in &mesh.vertices {
            assert!(v[2].abs() < 1e-9);
        }
    }

    #[test]
    fn unmanaged_drift_is_reported() {
        // one giant step per interval with an impossible drift budget
        let g = DiskGrid::new(8, 8, 3.0).unwrap();
        let phi = QuadDiff::constant(1.6);
        let r = solve_auto(&g, &phi, &SolveParams::default()).unwrap();
        let p = IntegrationParams {
            max_substep: f64::INFINITY,
            min_substeps: 1,
            drift_tol: 1e-14,
        };
        match integrate_frame_with(&r.u, &phi, &p) {
            Err(crate::error::Error::DriftExceeded { .. }) => {}
            other => panic!("expected DriftExceeded, got {:?}", other.map(|f| f.max_drift)),
        }
    }

    #[test]
    fn obj_export_writes_file() {
        let (_, f) = plane_frame(8, 8, 2.0);
        let dir = std::env::temp_dir().join(format!("afgauss-mesh-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("plane.obj");
        let mesh = export_mesh(&f, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), mesh.vertices.len());
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), mesh.faces.len());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
