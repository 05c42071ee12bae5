//! Geodesic-polar discretization of the Poincaré disk.
//!
//! The disk carries the curvature −1 metric `dρ² + sinh²ρ dθ²`. Nodes are
//! placed at `ρ_i = i·rho_max/n_rho` (i = 1..n_rho) times `θ_j = 2πj/n_theta`,
//! plus one node at the center. The outermost ring is the Dirichlet rim; the
//! center and rings `1..n_rho-1` are the unknowns of every linear solve and
//! occupy a contiguous prefix of the value array.

use std::io::{BufRead, Write};
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::io::fmt_f64;

/// Geodesic-polar grid on the truncated Poincaré disk.
#[derive(Debug)]
pub struct DiskGrid {
    n_rho: usize,
    n_theta: usize,
    rho_max: f64,
    d_rho: f64,
    d_theta: f64,
    ring_rho: Vec<f64>,
    theta: Vec<f64>,
    sinh_ring: Vec<f64>,
    node_rho: Vec<f64>,
    node_theta: Vec<f64>,
    node_z: Vec<Complex64>,
}

impl DiskGrid {
    /// Build a grid with `n_rho` radial rings, `n_theta` angular samples and
    /// truncation radius `rho_max` (hyperbolic length).
    pub fn new(n_rho: usize, n_theta: usize, rho_max: f64) -> Result<Arc<DiskGrid>> {
        if n_rho < 8 {
            return Err(Error::InvalidGrid(format!("n_rho = {n_rho} < 8")));
        }
        if n_theta < 8 {
            return Err(Error::InvalidGrid(format!("n_theta = {n_theta} < 8")));
        }
        if n_theta % 2 != 0 {
            return Err(Error::InvalidGrid(format!("n_theta = {n_theta} is odd")));
        }
        if !(rho_max.is_finite() && rho_max > 0.0) {
            return Err(Error::InvalidGrid(format!("rho_max = {rho_max} must be positive and finite")));
        }

        let d_rho = rho_max / n_rho as f64;
        let d_theta = std::f64::consts::TAU / n_theta as f64;
        let ring_rho: Vec<f64> = (0..=n_rho).map(|i| i as f64 * d_rho).collect();
        let theta: Vec<f64> = (0..n_theta).map(|j| j as f64 * d_theta).collect();
        let sinh_ring: Vec<f64> = ring_rho.iter().map(|r| r.sinh()).collect();

        let n_nodes = 1 + n_rho * n_theta;
        let mut node_rho = Vec::with_capacity(n_nodes);
        let mut node_theta = Vec::with_capacity(n_nodes);
        let mut node_z = Vec::with_capacity(n_nodes);
        node_rho.push(0.0);
        node_theta.push(0.0);
        node_z.push(Complex64::new(0.0, 0.0));
        for i in 1..=n_rho {
            let r = (ring_rho[i] / 2.0).tanh();
            for j in 0..n_theta {
                node_rho.push(ring_rho[i]);
                node_theta.push(theta[j]);
                node_z.push(Complex64::from_polar(r, theta[j]));
            }
        }

        Ok(Arc::new(DiskGrid {
            n_rho,
            n_theta,
            rho_max,
            d_rho,
            d_theta,
            ring_rho,
            theta,
            sinh_ring,
            node_rho,
            node_theta,
            node_z,
        }))
    }

    pub fn n_rho(&self) -> usize {
        self.n_rho
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn rho_max(&self) -> f64 {
        self.rho_max
    }

    pub fn d_rho(&self) -> f64 {
        self.d_rho
    }

    pub fn d_theta(&self) -> f64 {
        self.d_theta
    }

    /// Total node count including the center node.
    pub fn n_nodes(&self) -> usize {
        1 + self.n_rho * self.n_theta
    }

    /// Center plus rings `1..n_rho-1`: the unknowns of a Dirichlet solve.
    /// These occupy indices `0..n_interior()`.
    pub fn n_interior(&self) -> usize {
        1 + (self.n_rho - 1) * self.n_theta
    }

    /// Index of node `(ring i, angle j)`; ring 0 is the center for any `j`.
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        if i == 0 {
            0
        } else {
            1 + (i - 1) * self.n_theta + (j % self.n_theta)
        }
    }

    /// Ring number of a node index (0 = center, `n_rho` = rim).
    #[inline]
    pub fn ring_of(&self, idx: usize) -> usize {
        if idx == 0 {
            0
        } else {
            1 + (idx - 1) / self.n_theta
        }
    }

    pub fn ring_rho(&self, i: usize) -> f64 {
        self.ring_rho[i]
    }

    pub fn sinh_ring(&self, i: usize) -> f64 {
        self.sinh_ring[i]
    }

    pub fn theta(&self, j: usize) -> f64 {
        self.theta[j % self.n_theta]
    }

    #[inline]
    pub fn node_rho(&self, idx: usize) -> f64 {
        self.node_rho[idx]
    }

    #[inline]
    pub fn node_theta(&self, idx: usize) -> f64 {
        self.node_theta[idx]
    }

    /// Euclidean coordinate `z = tanh(ρ/2) e^{iθ}` of a node.
    #[inline]
    pub fn node_z(&self, idx: usize) -> Complex64 {
        self.node_z[idx]
    }

    /// Euclidean radius of the truncation rim, `tanh(rho_max/2) < 1`.
    pub fn boundary_euclidean_radius(&self) -> f64 {
        (self.rho_max / 2.0).tanh()
    }

    /// Node indices of the Dirichlet rim (outermost ring).
    pub fn rim_range(&self) -> std::ops::Range<usize> {
        self.n_interior()..self.n_nodes()
    }

    /// Structural compatibility: same shape and truncation.
    pub fn compatible(&self, other: &DiskGrid) -> bool {
        self.n_rho == other.n_rho
            && self.n_theta == other.n_theta
            && self.rho_max.to_bits() == other.rho_max.to_bits()
    }
}

/// A real-valued function sampled on every node of a [`DiskGrid`].
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<DiskGrid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Arc<DiskGrid>) -> ScalarField {
        ScalarField {
            grid: Arc::clone(grid),
            values: vec![0.0; grid.n_nodes()],
        }
    }

    pub fn constant(grid: &Arc<DiskGrid>, value: f64) -> ScalarField {
        ScalarField {
            grid: Arc::clone(grid),
            values: vec![value; grid.n_nodes()],
        }
    }

    /// Sample `f(node index)` at every node.
    pub fn from_fn(grid: &Arc<DiskGrid>, mut f: impl FnMut(usize) -> f64) -> ScalarField {
        let values = (0..grid.n_nodes()).map(|idx| f(idx)).collect();
        ScalarField {
            grid: Arc::clone(grid),
            values,
        }
    }

    pub fn from_values(grid: &Arc<DiskGrid>, values: Vec<f64>) -> ScalarField {
        assert_eq!(values.len(), grid.n_nodes(), "value count must match grid");
        ScalarField {
            grid: Arc::clone(grid),
            values,
        }
    }

    pub fn grid(&self) -> &Arc<DiskGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        assert_same_grid(self, other);
        ScalarField {
            grid: Arc::clone(&self.grid),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Maximum of |value| over every node.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, &v| m.max(v.abs()))
    }

    /// Maximum of |value| over the interior prefix (center + rings below the rim).
    pub fn sup_norm_interior(&self) -> f64 {
        self.values[..self.grid.n_interior()]
            .iter()
            .fold(0.0, |m, &v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Serialize as CSV: header `rho,theta,value`, the center node first with
    /// `theta = 0`, floats printed with 17 significant digits.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "rho,theta,value")?;
        for idx in 0..self.grid.n_nodes() {
            writeln!(
                w,
                "{},{},{}",
                fmt_f64(self.grid.node_rho(idx)),
                fmt_f64(self.grid.node_theta(idx)),
                fmt_f64(self.values[idx])
            )?;
        }
        Ok(())
    }

    /// Read a field written by [`ScalarField::write_csv`] back onto `grid`,
    /// verifying that the node coordinates match.
    pub fn read_csv(grid: &Arc<DiskGrid>, r: &mut impl BufRead) -> Result<ScalarField> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty CSV".into()))??;
        if header.trim() != "rho,theta,value" {
            return Err(Error::Format(format!("unexpected CSV header: {header}")));
        }
        let mut values = Vec::with_capacity(grid.n_nodes());
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let mut next = |what: &str| -> Result<f64> {
                parts
                    .next()
                    .ok_or_else(|| Error::Format(format!("row {row}: missing {what}")))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("row {row}: bad {what}: {e}")))
            };
            let rho = next("rho")?;
            let theta = next("theta")?;
            let value = next("value")?;
            let idx = values.len();
            if idx >= grid.n_nodes() {
                return Err(Error::Format("more rows than grid nodes".into()));
            }
            if (rho - grid.node_rho(idx)).abs() > 1e-12 || (theta - grid.node_theta(idx)).abs() > 1e-12 {
                return Err(Error::Format(format!(
                    "row {row}: coordinates ({rho}, {theta}) do not match grid node {idx}"
                )));
            }
            values.push(value);
        }
        if values.len() != grid.n_nodes() {
            return Err(Error::Format(format!(
                "expected {} rows, found {}",
                grid.n_nodes(),
                values.len()
            )));
        }
        Ok(ScalarField::from_values(grid, values))
    }
}

pub(crate) fn assert_same_grid(a: &ScalarField, b: &ScalarField) {
    assert!(
        a.grid.compatible(b.grid()),
        "fields live on incompatible grids"
    );
}

/// Maximum of |u| over all nodes.
pub fn sup_norm(u: &ScalarField) -> f64 {
    u.sup_norm()
}
