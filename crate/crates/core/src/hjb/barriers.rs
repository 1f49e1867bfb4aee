use std::io::Write;

use crate::hawkes::{BarrierSource, Thresholds};
use crate::hjb::grid::{Grid, PolicyGrid, Regime, ValueGrid};

/// Barrier levels tabulated on the intensity nodes, linearly interpolated
/// in between and held constant outside.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierPolicy {
    pub ys: Vec<f64>,
    pub kappa_star: Vec<f64>,
    pub x_star: Vec<f64>,
    /// Dividend bands `[x_lo, x_hi]` below the outermost barrier, per row.
    pub inner_dividend_zones: Vec<Vec<(f64, f64)>>,
}

impl BarrierPolicy {
    pub fn kappa_at(&self, y: f64) -> f64 {
        interp(&self.ys, &self.kappa_star, y)
    }

    pub fn x_star_at(&self, y: f64) -> f64 {
        interp(&self.ys, &self.x_star, y)
    }

    /// CSV with columns `y,kappa_star,x_star`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "y,kappa_star,x_star")?;
        for k in 0..self.ys.len() {
            writeln!(w, "{},{},{}", self.ys[k], self.kappa_star[k], self.x_star[k])?;
        }
        Ok(())
    }
}

impl BarrierSource for BarrierPolicy {
    fn thresholds(&self, y: f64) -> Thresholds {
        Thresholds {
            x_star: self.x_star_at(y).max(0.0),
            kappa_star: self.kappa_at(y).min(0.0),
        }
    }
}

fn interp(xs: &[f64], vs: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return vs[0];
    }
    if x >= xs[n - 1] {
        return vs[n - 1];
    }
    let h = xs[1] - xs[0];
    let t = (x - xs[0]) / h;
    let k = (t.floor() as usize).min(n - 2);
    let w = t - k as f64;
    (1.0 - w) * vs[k] + w * vs[k + 1]
}

/// `κ*(y_j) = −V_{i0,j}/δ`; `x*(y_j)` is the last non-dividend node before
/// the outermost run of dividend nodes (a dividend node at `x_i` pays down
/// to `x_{i−1}`). A column that is all dividend for `x > 0` gives `x* = 0`.
pub fn extract_barriers(g: &Grid, v: &ValueGrid, policy: &PolicyGrid, delta: f64) -> BarrierPolicy {
    let rows = g.n_y + 1;
    let mut kappa_star = Vec::with_capacity(rows);
    let mut x_star = Vec::with_capacity(rows);
    let mut inner = Vec::with_capacity(rows);
    for j in 0..rows {
        kappa_star.push(-v.at(g.i0, j) / delta);
        let mut start = g.n_x;
        while start > g.i0 + 1 && policy.at(start - 1, j) == Regime::Dividend {
            start -= 1;
        }
        let start = start.max(g.i0 + 1);
        x_star.push(g.xs[start - 1]);

        let mut zones = Vec::new();
        let mut i = g.i0 + 1;
        while i < start - 1 {
            if policy.at(i, j) == Regime::Dividend {
                let lo = i;
                while i < start - 1 && policy.at(i, j) == Regime::Dividend {
                    i += 1;
                }
                zones.push((g.xs[lo - 1], g.xs[i - 1]));
            } else {
                i += 1;
            }
        }
        inner.push(zones);
    }
    BarrierPolicy {
        ys: g.ys.clone(),
        kappa_star,
        x_star,
        inner_dividend_zones: inner,
    }
}
