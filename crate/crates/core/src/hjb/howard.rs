//! Howard policy iteration for the discrete variational inequality.
//!
//! Policy evaluation sweeps the intensity rows upward. Inside a row the
//! regime equations form a bidiagonal chain in `x` (continuation looks
//! right, dividend looks left) which is solved exactly; coupling to other
//! rows goes through the y-advection (row below, already updated) and the
//! jump term (row `j + n_eta`, previous sweep).

use std::io::Write;

use crate::error::{Error, Result};
use crate::hjb::barriers::{extract_barriers, BarrierPolicy};
use crate::hjb::grid::{Grid, PolicyGrid, Regime, ValueGrid};
use crate::hjb::operators::Scheme;
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Sup-norm change that stops policy evaluation.
    pub tol: f64,
    pub max_sweeps: usize,
    pub max_outer: usize,
}

impl SolveOptions {
    /// `tol = 1e-8 · c/ρ`, at most 100 outer iterations.
    pub fn for_params(p: &ModelParams) -> Self {
        SolveOptions {
            tol: 1e-8 * p.c / p.rho,
            max_sweeps: 200_000,
            max_outer: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub grid: Grid,
    pub params: ModelParams,
    pub value: ValueGrid,
    pub policy: PolicyGrid,
    pub outer_iterations: usize,
    /// Nodes whose regime changed at each improvement step.
    pub policy_changes: Vec<usize>,
    pub total_sweeps: usize,
}

impl Solution {
    pub fn value_at(&self, x: f64, y: f64) -> f64 {
        self.value.interpolate(&self.grid, x, y)
    }

    pub fn barriers(&self) -> BarrierPolicy {
        extract_barriers(&self.grid, &self.value, &self.policy, self.params.delta)
    }

    /// CSV with columns `x,y,V`, x varying fastest.
    pub fn write_value_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,y,V")?;
        for j in 0..=self.grid.n_y {
            for i in 0..self.grid.n_x {
                writeln!(w, "{},{},{}", self.grid.xs[i], self.grid.ys[j], self.value.at(i, j))?;
            }
        }
        Ok(())
    }

    /// CSV with columns `x,y,regime`, codes 0 ruin, 1 injection,
    /// 2 continuation, 3 dividend.
    pub fn write_regime_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,y,regime")?;
        for j in 0..=self.grid.n_y {
            for i in 0..self.grid.n_x {
                writeln!(
                    w,
                    "{},{},{}",
                    self.grid.xs[i],
                    self.grid.ys[j],
                    self.policy.at(i, j).code()
                )?;
            }
        }
        Ok(())
    }
}

/// Solve `V = T_π V` for a frozen regime map, starting from `v_init`.
pub fn policy_evaluation(
    scheme: &Scheme<'_>,
    policy: &PolicyGrid,
    v_init: &ValueGrid,
    tol: f64,
    max_iter: usize,
) -> Result<(ValueGrid, usize)> {
    let g = scheme.grid;
    check_policy(g, policy)?;
    let mut v = v_init.clone();
    scheme.boundary_ymax(&mut v);
    let mut rows = RowSystem::new(g.n_x - g.i0);
    let mut change = f64::INFINITY;
    for sweep in 1..=max_iter {
        change = 0.0;
        for j in 0..g.n_y {
            change = change.max(solve_row(scheme, policy, &mut v, j, &mut rows));
        }
        if !change.is_finite() {
            return Err(Error::NonFinite("policy evaluation"));
        }
        if change < tol {
            scheme.apply_negative_region(&mut v);
            return Ok((v, sweep));
        }
    }
    Err(Error::EvaluationNotConverged {
        iterations: max_iter,
        residual: change,
    })
}

fn check_policy(g: &Grid, policy: &PolicyGrid) -> Result<()> {
    let (nx, ny) = policy.regime.dim();
    if nx != g.n_x || ny != g.n_y + 1 {
        return Err(Error::ShapeMismatch {
            expected: g.n_x * (g.n_y + 1),
            actual: nx * ny,
        });
    }
    for j in 0..=g.n_y {
        for i in 0..g.n_x {
            let r = policy.at(i, j);
            let ok = if i < g.i0 {
                matches!(r, Regime::Injection | Regime::Ruin)
            } else if i == g.i0 {
                r == Regime::Continuation
            } else {
                matches!(r, Regime::Continuation | Regime::Dividend) && (i + 1 < g.n_x || r == Regime::Dividend)
            };
            if !ok {
                return Err(Error::invalid(
                    "policy",
                    format!("regime {r} not admissible at node ({i}, {j})"),
                ));
            }
        }
    }
    Ok(())
}

/// Scratch for the per-row bidiagonal solve.
struct RowSystem {
    lower: Vec<f64>,
    upper: Vec<f64>,
    rhs: Vec<f64>,
}

impl RowSystem {
    fn new(n: usize) -> Self {
        RowSystem {
            lower: vec![0.0; n],
            upper: vec![0.0; n],
            rhs: vec![0.0; n],
        }
    }
}

/// Exact solve of row `j` for `i ≥ i0`; returns the sup-norm change.
fn solve_row(scheme: &Scheme<'_>, policy: &PolicyGrid, v: &mut ValueGrid, j: usize, sys: &mut RowSystem) -> f64 {
    let g = scheme.grid;
    let n = g.n_x - g.i0;
    let y = g.ys[j];
    let diag = scheme.diagonal(j);
    let a_x = scheme.x_coef() / diag;
    let b_y = scheme.y_coef(j) / diag;

    for k in 0..n {
        let i = g.i0 + k;
        let down = if j > 0 { b_y * v.at(i, j - 1) } else { 0.0 };
        match policy.at(i, j) {
            Regime::Dividend => {
                sys.lower[k] = -1.0;
                sys.upper[k] = 0.0;
                sys.rhs[k] = g.dx;
            }
            _ if k == 0 => {
                sys.lower[k] = 0.0;
                sys.upper[k] = -a_x;
                sys.rhs[k] = down + y * scheme.boundary_integral(v, j) / diag;
            }
            _ => {
                sys.lower[k] = 0.0;
                sys.upper[k] = -a_x;
                sys.rhs[k] = down + y * scheme.jump_quadrature(v, i, j) / diag;
            }
        }
    }
    // Unit diagonal; forward elimination then back substitution.
    for k in 1..n {
        let l = sys.lower[k];
        if l != 0.0 {
            let den = 1.0 - l * sys.upper[k - 1];
            sys.upper[k] /= den;
            sys.rhs[k] = (sys.rhs[k] - l * sys.rhs[k - 1]) / den;
        }
    }
    let mut change: f64 = 0.0;
    let mut next = 0.0;
    for k in (0..n).rev() {
        let val = if k + 1 < n {
            sys.rhs[k] - sys.upper[k] * next
        } else {
            sys.rhs[k]
        };
        let i = g.i0 + k;
        change = change.max((val - v.at(i, j)).abs());
        v.v[[i, j]] = val;
        next = val;
    }
    // Other rows read V(0, y_j) through the injection identity only, so
    // the x < 0 part can wait until the end of the evaluation.
    change
}

/// Pointwise argmin of the VI terms. Ties within `tie_tol` prefer
/// continuation over dividend.
pub fn improve_policy(scheme: &Scheme<'_>, v: &ValueGrid, tie_tol: f64) -> PolicyGrid {
    let g = scheme.grid;
    let delta = scheme.params.delta;
    let mut pol = PolicyGrid::filled(g, Regime::Continuation);
    for j in 0..=g.n_y {
        let v0 = v.at(g.i0, j);
        for i in 0..g.i0 {
            pol.regime[[i, j]] = if v0 + delta * g.xs[i] > 0.0 {
                Regime::Injection
            } else {
                Regime::Ruin
            };
        }
        for i in g.i0 + 1..g.n_x {
            let r = if i + 1 == g.n_x || j == g.n_y {
                Regime::Dividend
            } else {
                let t = scheme.vi_terms(v, i, j).expect("interior node");
                if t.continuation <= t.dividend + tie_tol {
                    Regime::Continuation
                } else {
                    Regime::Dividend
                }
            };
            pol.regime[[i, j]] = r;
        }
    }
    pol
}

/// Howard iteration from `V⁰ = x⁺`.
pub fn howard_solve(grid: &Grid, params: &ModelParams, opts: &SolveOptions) -> Result<Solution> {
    let scheme = Scheme::new(grid, params);
    let mut v = ValueGrid::lower_bound(grid);
    scheme.boundary_ymax(&mut v);
    scheme.apply_negative_region(&mut v);
    let mut policy = improve_policy(&scheme, &v, opts.tol);
    let mut changes = Vec::new();
    let mut total_sweeps = 0;
    for outer in 1..=opts.max_outer {
        let (nv, sweeps) = policy_evaluation(&scheme, &policy, &v, opts.tol, opts.max_sweeps)?;
        total_sweeps += sweeps;
        v = nv;
        let next = improve_policy(&scheme, &v, opts.tol);
        let changed = next.diff_count(&policy);
        changes.push(changed);
        policy = next;
        if changed == 0 {
            return Ok(Solution {
                grid: grid.clone(),
                params: *params,
                value: v,
                policy,
                outer_iterations: outer,
                policy_changes: changes,
                total_sweeps,
            });
        }
    }
    Err(Error::PolicyNotConverged {
        iterations: opts.max_outer,
        changed: *changes.last().unwrap_or(&0),
    })
}
