//! Monte Carlo values with asymptotic confidence intervals and the
//! PDE / barrier / learned-policy comparison table.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hawkes::{barrier_return, horizon_steps, BarrierSource, RngStream};
use crate::hjb::BarrierPolicy;
use crate::hjb::Solution;
use crate::model::{ModelParams, State};
use crate::neural::Mlp;
use crate::rl::{run_batch, ActionMode, Rollout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicySource {
    PdeBarriers,
    LearnedActor,
}

/// A strategy to evaluate.
#[derive(Clone, Copy)]
pub enum EvalPolicy<'a> {
    Barriers(&'a (dyn BarrierSource + Sync)),
    Actor {
        actor: &'a Mlp,
        sigma_min: f64,
        mode: ActionMode,
        kappa_ref: Option<&'a BarrierPolicy>,
    },
}

impl EvalPolicy<'_> {
    pub fn source(&self) -> PolicySource {
        match self {
            EvalPolicy::Barriers(_) => PolicySource::PdeBarriers,
            EvalPolicy::Actor { .. } => PolicySource::LearnedActor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub h: f64,
    pub horizon_t: f64,
    pub n_paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub x0: f64,
    pub y0: f64,
    pub pde_value: Option<f64>,
    pub mc_mean: f64,
    pub mc_se: f64,
    pub mc_ci95: (f64, f64),
    pub rel_err_pct: Option<f64>,
    pub n_paths: usize,
    pub policy_source: PolicySource,
}

impl EvalRow {
    pub fn ci_contains(&self, v: f64) -> bool {
        self.mc_ci95.0 <= v && v <= self.mc_ci95.1
    }

    pub fn ci_overlaps(&self, lo: f64, hi: f64) -> bool {
        self.mc_ci95.0 <= hi && lo <= self.mc_ci95.1
    }
}

/// Mean, standard error and `mean ± 1.96·SE`.
pub fn mean_ci(xs: &[f64]) -> (f64, f64, (f64, f64)) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let se = (var / n).sqrt();
    (m, se, (m - 1.96 * se, m + 1.96 * se))
}

/// Path `k` from state `s` uses `RngStream(seed, s·2³² + k)` whatever the
/// policy, so two policies that act identically see identical paths.
pub fn mc_value(
    policy: EvalPolicy<'_>,
    p: &ModelParams,
    st: &EvalSettings,
    states: &[State],
    pde_values: Option<&[Option<f64>]>,
) -> Result<Vec<EvalRow>> {
    if st.n_paths < 2 {
        return Err(Error::invalid(
            "n_paths",
            format!("need at least 2, got {}", st.n_paths),
        ));
    }
    if let Some(v) = pde_values {
        if v.len() != states.len() {
            return Err(Error::ShapeMismatch {
                expected: states.len(),
                actual: v.len(),
            });
        }
    }
    p.validate()?;
    let n_steps = horizon_steps(st.h, st.horizon_t)?;
    let mut rows = Vec::with_capacity(states.len());
    for (si, &s0) in states.iter().enumerate() {
        let base = (si as u64) << 32;
        let rets: Vec<f64> = match policy {
            EvalPolicy::Barriers(b) => (0..st.n_paths as u64)
                .into_par_iter()
                .map(|k| {
                    let mut rng = RngStream::new(st.seed, base + k);
                    barrier_return(p, s0, st.h, n_steps, b, &mut rng).map(|r| r.0)
                })
                .collect::<Result<_>>()?,
            EvalPolicy::Actor {
                actor,
                sigma_min,
                mode,
                kappa_ref,
            } => {
                let ro = Rollout {
                    actor,
                    sigma_min,
                    mode,
                    kappa_ref,
                    record: false,
                };
                run_batch(p, &ro, &vec![s0; st.n_paths], st.h, n_steps, st.seed, base)?.returns()
            }
        };
        let (m, se, ci) = mean_ci(&rets);
        let pde = pde_values.and_then(|v| v[si]);
        rows.push(EvalRow {
            x0: s0.x,
            y0: s0.y,
            pde_value: pde,
            mc_mean: m,
            mc_se: se,
            mc_ci95: ci,
            rel_err_pct: pde.map(|v| (m - v) / v * 100.0),
            n_paths: st.n_paths,
            policy_source: policy.source(),
        });
    }
    Ok(rows)
}

/// The nine reference states `x ∈ {0, 0.5, 1} × y ∈ {2, 3, 4}`.
pub fn table_states() -> Vec<State> {
    let mut v = Vec::with_capacity(9);
    for x in [0.0, 0.5, 1.0] {
        for y in [2.0, 3.0, 4.0] {
            v.push(State::new(x, y));
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub x: f64,
    pub y: f64,
    pub pde: f64,
    pub mc_opt: EvalRow,
    pub mc_rl: Option<EvalRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareTable {
    pub rows: Vec<CompareRow>,
}

/// PDE value, Monte Carlo under the PDE barriers and, when an actor is
/// given, Monte Carlo under the learned policy, at each state.
pub fn compare_table(
    sol: &Solution,
    actor: Option<EvalPolicy<'_>>,
    st: &EvalSettings,
    states: &[State],
) -> Result<CompareTable> {
    let p = &sol.params;
    let pde: Vec<Option<f64>> = states.iter().map(|s| Some(sol.value_at(s.x, s.y))).collect();
    let barriers = sol.barriers();
    let opt = mc_value(EvalPolicy::Barriers(&barriers), p, st, states, Some(&pde))?;
    let rl = match actor {
        Some(a) => Some(mc_value(a, p, st, states, Some(&pde))?),
        None => None,
    };
    let rows = opt
        .into_iter()
        .enumerate()
        .map(|(k, o)| CompareRow {
            x: states[k].x,
            y: states[k].y,
            pde: pde[k].expect("always set"),
            mc_opt: o,
            mc_rl: rl.as_ref().map(|r| r[k].clone()),
        })
        .collect();
    Ok(CompareTable { rows })
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(String::new, |x| format!("{x:.digits$}"))
}

impl CompareTable {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>4} {:>3} {:>8} | {:>8} {:>19} {:>8} | {:>8} {:>19} {:>8}",
            "x", "y", "PDE", "MC(Opt)", "95% CI", "rel.err", "MC(RL)", "95% CI", "rel.err"
        );
        for r in &self.rows {
            let o = &r.mc_opt;
            let _ = write!(
                s,
                "{:>4.1} {:>3} {:>8.4} | {:>8.4} [{:>8.4}, {:>8.4}] {:>7.2}%",
                r.x,
                r.y,
                r.pde,
                o.mc_mean,
                o.mc_ci95.0,
                o.mc_ci95.1,
                o.rel_err_pct.unwrap_or(f64::NAN)
            );
            match &r.mc_rl {
                Some(l) => {
                    let _ = writeln!(
                        s,
                        " | {:>8.4} [{:>8.4}, {:>8.4}] {:>7.2}%",
                        l.mc_mean,
                        l.mc_ci95.0,
                        l.mc_ci95.1,
                        l.rel_err_pct.unwrap_or(f64::NAN)
                    );
                }
                None => s.push('\n'),
            }
        }
        s
    }

    /// One row per state; the learned-policy columns are empty without an actor.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "x,y,pde,mc_opt,mc_opt_ci_low,mc_opt_ci_high,mc_opt_rel_err_pct,mc_rl,mc_rl_ci_low,mc_rl_ci_high,mc_rl_rel_err_pct,n_paths"
        )?;
        for r in &self.rows {
            let o = &r.mc_opt;
            let l = r.mc_rl.as_ref();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.x,
                r.y,
                r.pde,
                o.mc_mean,
                o.mc_ci95.0,
                o.mc_ci95.1,
                fmt_opt(o.rel_err_pct, 6),
                fmt_opt(l.map(|e| e.mc_mean), 10),
                fmt_opt(l.map(|e| e.mc_ci95.0), 10),
                fmt_opt(l.map(|e| e.mc_ci95.1), 10),
                fmt_opt(l.and_then(|e| e.rel_err_pct), 6),
                o.n_paths
            )?;
        }
        Ok(())
    }
}
