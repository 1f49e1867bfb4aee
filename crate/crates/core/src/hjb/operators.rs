//! Local pieces of the upwind scheme: jump quadrature, discrete generator,
//! regime update rules and boundary closures.

use crate::error::{Error, Result};
use crate::hjb::grid::{Grid, ValueGrid};
use crate::model::{injection_region_value, ModelParams};

/// Grid, parameters and the precomputed quadrature weights
/// `f((m+½)Δx)·Δx`, `m = 0..=M`.
#[derive(Debug, Clone)]
pub struct Scheme<'a> {
    pub grid: &'a Grid,
    pub params: &'a ModelParams,
    weights: Vec<f64>,
}

/// The three terms of the discrete variational inequality at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViTerms {
    /// `D⁻ₓV − 1`
    pub dividend: f64,
    /// `δ − D⁺ₓV`
    pub injection: f64,
    /// `−L_h V`
    pub continuation: f64,
}

impl ViTerms {
    pub fn min(&self) -> f64 {
        self.dividend.min(self.injection).min(self.continuation)
    }
}

impl<'a> Scheme<'a> {
    pub fn new(grid: &'a Grid, params: &'a ModelParams) -> Self {
        let dx = grid.dx;
        let weights = (0..=grid.m)
            .map(|m| params.claim.density((m as f64 + 0.5) * dx) * dx)
            .collect();
        Scheme { grid, params, weights }
    }

    /// Total density mass seen by the quadrature.
    pub fn quadrature_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `c/Δx`
    #[inline]
    pub fn x_coef(&self) -> f64 {
        self.params.c / self.grid.dx
    }

    /// `a(y_j − b)/Δy`, zero on the baseline row.
    #[inline]
    pub fn y_coef(&self, j: usize) -> f64 {
        self.params.a * (self.grid.ys[j] - self.params.b) / self.grid.dy
    }

    /// Denominator of the continuation fixed point.
    #[inline]
    pub fn diagonal(&self, j: usize) -> f64 {
        self.params.rho + self.grid.ys[j] + self.x_coef() + self.y_coef(j)
    }

    /// Midpoint approximation of `∫ V(x_i − z, y_j + η) dF(z)` on `[0, Z_max]`.
    ///
    /// Targets with negative surplus use the injection identity with
    /// `V(0, y_j + η)`; positive targets sit halfway between two nodes.
    pub fn jump_quadrature(&self, v: &ValueGrid, i: usize, j: usize) -> f64 {
        let g = self.grid;
        let jt = g.jump_row(j);
        let v0 = v.at(g.i0, jt);
        let delta = self.params.delta;
        let mut acc = 0.0;
        for (m, w) in self.weights.iter().enumerate() {
            // x_i − (m+½)Δx lies between nodes i−m−1 and i−m.
            let val = if i > g.i0 + m {
                0.5 * (v.at(i - m - 1, jt) + v.at(i - m, jt))
            } else {
                let x = g.xs[i] - (m as f64 + 0.5) * g.dx;
                injection_region_value(v0, x, delta)
            };
            acc += val * w;
        }
        acc
    }

    /// Injection credit at zero surplus, `∫_0^{v0/δ}(v0 − δz)dF(z)` with
    /// `v0 = V(0, y_j + η)`; closed form when the claim law has one.
    pub fn boundary_integral(&self, v: &ValueGrid, j: usize) -> f64 {
        let g = self.grid;
        let v0 = v.at(g.i0, g.jump_row(j));
        match self.params.claim.injection_integral(v0, self.params.delta) {
            Some(val) => val,
            None => self.jump_quadrature(v, g.i0, j),
        }
    }

    fn check_interior(&self, i: usize, j: usize) -> Result<()> {
        let g = self.grid;
        if i < g.i0 || i + 1 >= g.n_x || j >= g.n_y {
            return Err(Error::IndexOutOfRange { i, j });
        }
        Ok(())
    }

    /// `−L_h V` at an interior node with `x_i ≥ 0`.
    pub fn discrete_generator(&self, v: &ValueGrid, i: usize, j: usize) -> Result<f64> {
        self.check_interior(i, j)?;
        Ok(self.generator_unchecked(v, i, j))
    }

    fn generator_unchecked(&self, v: &ValueGrid, i: usize, j: usize) -> f64 {
        let g = self.grid;
        let y = g.ys[j];
        let vij = v.at(i, j);
        let dxp = (v.at(i + 1, j) - vij) / g.dx;
        let dym = if j > 0 { (vij - v.at(i, j - 1)) / g.dy } else { 0.0 };
        let q = if i == g.i0 {
            self.boundary_integral(v, j)
        } else {
            self.jump_quadrature(v, i, j)
        };
        (self.params.rho + y) * vij - self.params.c * dxp - self.params.a * (self.params.b - y) * dym - y * q
    }

    /// Continuation fixed point at `(i, j)` given its neighbours.
    pub fn continuation_update(&self, v: &ValueGrid, i: usize, j: usize) -> f64 {
        let y = self.grid.ys[j];
        let q = self.jump_quadrature(v, i, j);
        self.continuation_from(v, i, j, y * q)
    }

    #[inline]
    fn continuation_from(&self, v: &ValueGrid, i: usize, j: usize, jump: f64) -> f64 {
        let bj = self.y_coef(j);
        let down = if j > 0 { bj * v.at(i, j - 1) } else { 0.0 };
        (self.x_coef() * v.at(i + 1, j) + down + jump) / self.diagonal(j)
    }

    /// `V_{i−1,j} + Δx`.
    pub fn dividend_update(&self, v: &ValueGrid, i: usize, j: usize) -> Result<f64> {
        if i <= self.grid.i0 || i >= self.grid.n_x {
            return Err(Error::IndexOutOfRange { i, j });
        }
        Ok(v.at(i - 1, j) + self.grid.dx)
    }

    /// Zero-surplus closure: the continuation form with the jump term
    /// replaced by the injection credit.
    pub fn boundary_x0_update(&self, v: &ValueGrid, j: usize) -> Result<f64> {
        if j >= self.grid.n_y {
            return Err(Error::IndexOutOfRange { i: self.grid.i0, j });
        }
        let y = self.grid.ys[j];
        Ok(self.continuation_from(v, self.grid.i0, j, y * self.boundary_integral(v, j)))
    }

    /// Overwrite `x < 0` with `max(0, V_{i0,j} + δ x_i)` on every row.
    pub fn apply_negative_region(&self, v: &mut ValueGrid) {
        let g = self.grid;
        for j in 0..=g.n_y {
            self.apply_negative_row(v, j);
        }
    }

    pub(crate) fn apply_negative_row(&self, v: &mut ValueGrid, j: usize) {
        let g = self.grid;
        let v0 = v.at(g.i0, j);
        for i in 0..g.i0 {
            v.v[[i, j]] = injection_region_value(v0, g.xs[i], self.params.delta);
        }
    }

    /// Top row: `V = x⁺` (the large-intensity limit), negative part via the
    /// injection identity.
    pub fn boundary_ymax(&self, v: &mut ValueGrid) {
        let g = self.grid;
        let top = g.n_y;
        for i in g.i0..g.n_x {
            v.v[[i, top]] = g.xs[i];
        }
        self.apply_negative_row(v, top);
    }

    /// Terms of the discrete VI at a node with `x_i ≥ 0`, `j < n_y`,
    /// `i < n_x − 1`. At the origin the continuation term uses the boundary
    /// closure and the dividend slope looks into the injection region.
    pub fn vi_terms(&self, v: &ValueGrid, i: usize, j: usize) -> Result<ViTerms> {
        self.check_interior(i, j)?;
        let g = self.grid;
        let vij = v.at(i, j);
        let dividend = (vij - v.at(i - 1, j)) / g.dx - 1.0;
        let injection = self.params.delta - (v.at(i + 1, j) - vij) / g.dx;
        let continuation = self.generator_unchecked(v, i, j);
        Ok(ViTerms {
            dividend,
            injection,
            continuation,
        })
    }
}
