//! Shared test fixtures: an independent 1-D radial collocation oracle for
//! the conformal-factor equation, and cubic sampling of its solution.
//!
//! The oracle discretizes `u″ + coth(ρ)u′ = −1 + e²ᵘ + e⁻²ᵘ q(ρ)` on a
//! uniform 1-D grid with its own stencil, Newton loop, and tridiagonal
//! solver; it shares no code with the 2-D solver it validates.

#![allow(dead_code)]

/// Radial source `q(ρ) = c² sech⁸(ρ/2)/16` for `φ = c·dz²`.
pub fn radial_source(c: f64, rho: f64) -> f64 {
    let s = 1.0 / (rho / 2.0).cosh();
    c * c * s.powi(8) / 16.0
}

/// Solve the radial profile by damped Newton collocation on `n+1` uniform
/// points over `[0, rho_max]`, natural symmetry condition at the center and
/// the algebraic balance value at the rim.
pub struct RadialOracle {
    pub h: f64,
    pub u: Vec<f64>,
}

impl RadialOracle {
    pub fn solve(c: f64, rho_max: f64, n: usize) -> RadialOracle {
        let h = rho_max / n as f64;
        let q: Vec<f64> = (0..=n).map(|k| radial_source(c, k as f64 * h)).collect();
        let g = |u: f64, q: f64| -1.0 + (2.0 * u).exp() + (-2.0 * u).exp() * q;
        let g_u = |u: f64, q: f64| 2.0 * (2.0 * u).exp() - 2.0 * (-2.0 * u).exp() * q;
        let u_rim = {
            let qr = q[n];
            0.5 * (0.5 * (1.0 + (1.0 - 4.0 * qr).sqrt())).ln()
        };

        let mut u = vec![0.0; n + 1];
        u[n] = u_rim;
        let residual = |u: &[f64]| -> Vec<f64> {
            let mut f = vec![0.0; n + 1];
            f[0] = 4.0 * (u[1] - u[0]) / (h * h) - g(u[0], q[0]);
            for k in 1..n {
                let rho = k as f64 * h;
                let coth = rho.cosh() / rho.sinh();
                f[k] = (u[k + 1] - 2.0 * u[k] + u[k - 1]) / (h * h)
                    + coth * (u[k + 1] - u[k - 1]) / (2.0 * h)
                    - g(u[k], q[k]);
            }
            f[n] = u[n] - u_rim;
            f
        };

        for _ in 0..60 {
            let f = residual(&u);
            let norm = f.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if norm <= 1e-13 {
                break;
            }
            // tridiagonal Jacobian rows
            let mut sub = vec![0.0; n + 1];
            let mut diag = vec![0.0; n + 1];
            let mut sup = vec![0.0; n + 1];
            diag[0] = -4.0 / (h * h) - g_u(u[0], q[0]);
            sup[0] = 4.0 / (h * h);
            for k in 1..n {
                let rho = k as f64 * h;
                let coth = rho.cosh() / rho.sinh();
                sub[k] = 1.0 / (h * h) - coth / (2.0 * h);
                diag[k] = -2.0 / (h * h) - g_u(u[k], q[k]);
                sup[k] = 1.0 / (h * h) + coth / (2.0 * h);
            }
            diag[n] = 1.0;
            let mut rhs: Vec<f64> = f.iter().map(|v| -v).collect();
            thomas(&sub, &diag, &sup, &mut rhs);

            // damped update
            let mut step = 1.0;
            loop {
                let trial: Vec<f64> = u.iter().zip(&rhs).map(|(a, d)| a + step * d).collect();
                let fn_trial = residual(&trial)
                    .iter()
                    .fold(0.0_f64, |m, v| m.max(v.abs()));
                if fn_trial < norm || step < 1e-6 {
                    u = trial;
                    break;
                }
                step *= 0.5;
            }
        }
        RadialOracle { h, u }
    }

    /// Cubic Lagrange sample of the oracle profile at arbitrary `ρ`.
    pub fn at(&self, rho: f64) -> f64 {
        let n = self.u.len() - 1;
        let mut k = (rho / self.h).floor() as isize - 1;
        k = k.clamp(0, n as isize - 3);
        let w = k as usize;
        let t = rho / self.h - w as f64;
        let f = &self.u[w..w + 4];
        let l0 = -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0;
        let l1 = t * (t - 2.0) * (t - 3.0) / 2.0;
        let l2 = -t * (t - 1.0) * (t - 3.0) / 2.0;
        let l3 = t * (t - 1.0) * (t - 2.0) / 6.0;
        f[0] * l0 + f[1] * l1 + f[2] * l2 + f[3] * l3
    }
}

fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut cp = vec![0.0; n];
    cp[0] = sup[0] / diag[0];
    rhs[0] /= diag[0];
    for k in 1..n {
        let m = diag[k] - sub[k] * cp[k - 1];
        cp[k] = sup[k] / m;
        rhs[k] = (rhs[k] - sub[k] * rhs[k - 1]) / m;
    }
    for k in (0..n - 1).rev() {
        rhs[k] -= cp[k] * rhs[k + 1];
    }
}
