use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Requested computational domain. The mesh sizes are derived from the
/// excitation jump and the claim-support truncation so that both land
/// exactly on grid nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    /// Intensity steps per excitation jump. When `eta == 0` this is the
    /// number of intensity intervals instead.
    pub n_eta: usize,
    /// Number of midpoint quadrature intervals covering the claim support.
    #[serde(rename = "M")]
    pub m: usize,
    /// Claim-size truncation.
    pub z_max: f64,
}

impl GridSpec {
    /// Reference discretisation: X in [−5, 4], Y up to 25, n_eta = 8, M = 80, Z_max = 5.
    pub fn baseline() -> Self {
        GridSpec {
            x_min: -5.0,
            x_max: 4.0,
            y_max: 25.0,
            n_eta: 8,
            m: 80,
            z_max: 5.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_min.is_finite() && self.x_min < 0.0) {
            return Err(Error::invalid("x_min", format!("must be < 0, got {}", self.x_min)));
        }
        if !(self.x_max.is_finite() && self.x_max > 0.0) {
            return Err(Error::invalid("x_max", format!("must be > 0, got {}", self.x_max)));
        }
        if !self.y_max.is_finite() {
            return Err(Error::invalid("y_max", "must be finite"));
        }
        if self.n_eta == 0 {
            return Err(Error::invalid("n_eta", "must be >= 1"));
        }
        if self.m == 0 {
            return Err(Error::invalid("M", "must be >= 1"));
        }
        if !(self.z_max.is_finite() && self.z_max > 0.0) {
            return Err(Error::invalid("z_max", format!("must be > 0, got {}", self.z_max)));
        }
        Ok(())
    }
}

/// Uniform mesh over `[x_min, x_max] × [b, y_max]` with `x_{i0} = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub dx: f64,
    pub dy: f64,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub i0: usize,
    /// Number of x nodes.
    pub n_x: usize,
    /// Number of y intervals; y nodes are `0..=n_y`.
    pub n_y: usize,
    /// Row offset of one excitation jump.
    pub jump_rows: usize,
    /// Midpoint quadrature intervals.
    pub m: usize,
}

const ALIGN_EPS: f64 = 1e-9;

impl Grid {
    pub fn build(spec: &GridSpec, p: &ModelParams) -> Result<Grid> {
        spec.validate()?;
        p.validate()?;
        let dx = spec.z_max / (spec.m as f64 + 0.5);
        let (dy, jump_rows) = if p.eta > 0.0 {
            (p.eta / spec.n_eta as f64, spec.n_eta)
        } else {
            ((spec.y_max - p.b) / spec.n_eta as f64, 0)
        };
        if !(spec.y_max > p.b + dy) {
            return Err(Error::invalid(
                "y_max",
                format!("must exceed b + dy = {}, got {}", p.b + dy, spec.y_max),
            ));
        }
        let cells = |len: f64, h: f64| (len / h - ALIGN_EPS).ceil() as usize;
        let i0 = cells(-spec.x_min, dx);
        let right = cells(spec.x_max, dx);
        let n_y = cells(spec.y_max - p.b, dy);
        let n_x = i0 + right + 1;
        let xs = (0..n_x).map(|i| (i as f64 - i0 as f64) * dx).collect();
        let ys = (0..=n_y).map(|j| p.b + j as f64 * dy).collect();
        Ok(Grid {
            dx,
            dy,
            xs,
            ys,
            i0,
            n_x,
            n_y,
            jump_rows,
            m: spec.m,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.xs[0]
    }

    pub fn x_max(&self) -> f64 {
        self.xs[self.n_x - 1]
    }

    pub fn y_max(&self) -> f64 {
        self.ys[self.n_y]
    }

    /// Row reached by one excitation jump from row `j`, clamped to the top.
    #[inline]
    pub fn jump_row(&self, j: usize) -> usize {
        (j + self.jump_rows).min(self.n_y)
    }

    /// Nearest row index for an on-grid intensity.
    pub fn row_of(&self, y: f64) -> Option<usize> {
        let t = (y - self.ys[0]) / self.dy;
        let j = t.round();
        if j < 0.0 || j as usize > self.n_y || (t - j).abs() > 1e-6 {
            None
        } else {
            Some(j as usize)
        }
    }
}

/// `V_{i,j}` on the full grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    pub v: Array2<f64>,
}

impl ValueGrid {
    pub fn zeros(g: &Grid) -> Self {
        ValueGrid {
            v: Array2::zeros((g.n_x, g.n_y + 1)),
        }
    }

    /// `V⁰ = x⁺`.
    pub fn lower_bound(g: &Grid) -> Self {
        ValueGrid {
            v: Array2::from_shape_fn((g.n_x, g.n_y + 1), |(i, _)| g.xs[i].max(0.0)),
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.v[[i, j]]
    }

    /// Bilinear interpolation, clamped to the grid.
    pub fn interpolate(&self, g: &Grid, x: f64, y: f64) -> f64 {
        let (i, tx) = locate(x, g.xs[0], g.dx, g.n_x - 1);
        let (j, ty) = locate(y, g.ys[0], g.dy, g.n_y);
        let v00 = self.v[[i, j]];
        let v10 = self.v[[i + 1, j]];
        let v01 = self.v[[i, j + 1]];
        let v11 = self.v[[i + 1, j + 1]];
        (1.0 - tx) * ((1.0 - ty) * v00 + ty * v01) + tx * ((1.0 - ty) * v10 + ty * v11)
    }

    pub fn is_finite(&self) -> bool {
        self.v.iter().all(|v| v.is_finite())
    }
}

/// Cell index and fractional offset for a uniform axis with `last` intervals.
fn locate(x: f64, start: f64, h: f64, last: usize) -> (usize, f64) {
    let t = ((x - start) / h).clamp(0.0, last as f64);
    let k = (t.floor() as usize).min(last - 1);
    (k, t - k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    Ruin = 0,
    Injection = 1,
    Continuation = 2,
    Dividend = 3,
}

impl Regime {
    pub fn code(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Regime::Ruin => "ruin",
            Regime::Injection => "injection",
            Regime::Continuation => "continuation",
            Regime::Dividend => "dividend",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrid {
    pub regime: Array2<Regime>,
}

impl PolicyGrid {
    pub fn filled(g: &Grid, r: Regime) -> Self {
        PolicyGrid {
            regime: Array2::from_elem((g.n_x, g.n_y + 1), r),
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Regime {
        self.regime[[i, j]]
    }

    pub fn count(&self, r: Regime) -> usize {
        self.regime.iter().filter(|&&q| q == r).count()
    }

    /// Number of nodes whose label differs.
    pub fn diff_count(&self, other: &PolicyGrid) -> usize {
        self.regime
            .iter()
            .zip(other.regime.iter())
            .filter(|(a, b)| a != b)
            .count()
    }
}
