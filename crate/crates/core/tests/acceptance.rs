//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails. Set `HAWKES_DIVIDEND_NIGHTLY=1` to
//! add the full-size training runs.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use hawkes_dividend::eval::{mc_value, table_states, EvalPolicy, EvalSettings};
use hawkes_dividend::hawkes::{next_claim_time, step, RngStream};
use hawkes_dividend::hjb::{howard_solve, Grid, GridSpec, Regime, Scheme, Solution, SolveOptions};
use hawkes_dividend::model::injection_region_value;
use hawkes_dividend::neural::{GaussianHead, Mlp};
use hawkes_dividend::rl::*;
use hawkes_dividend::{ClaimDist, ModelParams, State};
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

/// PDE column of the published comparison table, in `table_states()` order.
const TABLE_PDE: [f64; 9] = [0.8588, 0.6811, 0.5298, 1.3874, 1.2031, 1.0360, 1.8881, 1.7033, 1.5360];
/// Published Monte Carlo 95% intervals under the optimal barriers.
const TABLE_MC_CI: [(f64, f64); 9] = [
    (0.8023, 0.8805),
    (0.6269, 0.7014),
    (0.4833, 0.5528),
    (1.2987, 1.3838),
    (1.1166, 1.1995),
    (0.9514, 1.0249),
    (1.8257, 1.9089),
    (1.6477, 1.7294),
    (1.4527, 1.5261),
];

struct Report {
    failed: Vec<u32>,
}

impl Report {
    fn record(&mut self, id: u32, name: &str, ok: bool, detail: &str) {
        println!("{} criterion {id}: {name} ({detail})", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed.push(id);
        }
    }
}

fn baseline_solution() -> Solution {
    let p = ModelParams::baseline();
    let g = Grid::build(&GridSpec::baseline(), &p).unwrap();
    howard_solve(&g, &p, &SolveOptions::for_params(&p)).unwrap()
}

fn pde_benchmark(r: &mut Report, sol: &Solution) {
    let mut worst: f64 = 0.0;
    for (s, &want) in table_states().iter().zip(&TABLE_PDE) {
        let v = sol.value_at(s.x, s.y);
        let rel = (v - want) / want;
        println!(
            "    V({}, {}) = {v:.6}  table {want:.4}  rel {:+.3}%",
            s.x,
            s.y,
            100.0 * rel
        );
        worst = worst.max(rel.abs());
    }
    r.record(
        1,
        "PDE benchmark within 1% of the table",
        worst <= 0.01,
        &format!("max |rel err| {:.3}%", 100.0 * worst),
    );
}

/// Nodes with `x > 0` below the top row; `x = 0` carries the boundary closure.
fn interior(sol: &Solution) -> impl Iterator<Item = (usize, usize)> + '_ {
    let g = &sol.grid;
    (0..g.n_y).flat_map(move |j| (g.i0 + 1..g.n_x - 1).map(move |i| (i, j)))
}

fn vi_residual(r: &mut Report, sol: &Solution) {
    let p = &sol.params;
    let tol = 1e-6 * p.c / p.rho;
    let scheme = Scheme::new(&sol.grid, p);
    let (mut worst_min, mut worst_term): (f64, f64) = (0.0, 0.0);
    for (i, j) in interior(sol) {
        let t = scheme.vi_terms(&sol.value, i, j).unwrap();
        worst_min = worst_min.max(t.min().abs());
        worst_term = worst_term.min(t.dividend.min(t.injection).min(t.continuation));
    }
    let ok = worst_min <= tol && worst_term >= -tol;
    r.record(
        2,
        "discrete VI residual",
        ok,
        &format!("max |min term| {worst_min:.2e}, most negative term {worst_term:.2e}, tol {tol:.0e}"),
    );
}

fn analytic_properties(r: &mut Report, sol: &Solution) {
    let (g, p, v) = (&sol.grid, &sol.params, &sol.value);
    let tol = 1e-6 * p.c / p.rho;
    let mut bad = Vec::new();
    for j in 0..=g.n_y {
        let v0 = v.at(g.i0, j);
        for i in 0..g.n_x {
            let x = g.xs[i];
            let vij = v.at(i, j);
            if x < 0.0 {
                if vij != injection_region_value(v0, x, p.delta) {
                    bad.push(format!("negative-region identity at ({x:.3}, {:.2})", g.ys[j]));
                }
                continue;
            }
            let (lo, hi) = p.value_bounds(x);
            if vij < lo - tol || vij > hi + tol {
                bad.push(format!("bounds at ({x:.3}, {:.2})", g.ys[j]));
            }
            if i == g.i0 {
                continue;
            }
            let slope = (vij - v.at(i - 1, j)) / g.dx;
            if slope < 1.0 - tol / g.dx || slope > p.delta + tol / g.dx {
                bad.push(format!("slope {slope:.6} at ({x:.3}, {:.2})", g.ys[j]));
            }
            if j < g.n_y && v.at(i, j + 1) > vij + tol {
                bad.push(format!("increase in y at ({x:.3}, {:.2})", g.ys[j]));
            }
        }
    }
    for b in bad.iter().take(5) {
        println!("    {b}");
    }
    r.record(
        3,
        "analytic properties on the converged grid",
        bad.is_empty(),
        &format!("{} violations", bad.len()),
    );
}

fn ks_distance(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = cdf(x);
            (f - k as f64 / n).abs().max((f - (k + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

fn simulator_law(r: &mut Report) {
    let p = ModelParams::baseline();
    let n = 10_000;
    let crit = 1.628 / (n as f64).sqrt();
    let mut ok = true;
    let mut detail = Vec::new();
    for (k, y) in [2.0, 2.8, 4.0].into_iter().enumerate() {
        let mut rng = RngStream::new(77, k as u64);
        let taus: Vec<f64> = (0..n).map(|_| next_claim_time(&p, y, &mut rng)).collect();
        let d = ks_distance(taus, |t| 1.0 - p.survival_probability(y, t).unwrap());
        ok &= d < crit;
        detail.push(format!("KS(y={y}) {d:.4}"));
    }
    let mut rng = RngStream::new(78, 0);
    let mut s = State::new(0.0, 2.5);
    let mut sum = 0.0;
    let steps = 1_000_000;
    for _ in 0..steps {
        sum += s.y;
        s = step(&p, s, 0.02, 0.0, &mut rng).unwrap().state;
    }
    let mean = sum / steps as f64;
    let target = p.stationary_mean_intensity().unwrap();
    ok &= ((mean - target) / target).abs() <= 0.02;
    detail.push(format!("critical {crit:.4}, mean intensity {mean:.4} vs {target}"));
    r.record(4, "simulator laws", ok, &detail.join(", "));
}

fn mc_consistency(r: &mut Report, sol: &Solution) {
    let states = table_states();
    let pde: Vec<Option<f64>> = states.iter().map(|s| Some(sol.value_at(s.x, s.y))).collect();
    let st = EvalSettings {
        h: 0.02,
        horizon_t: 50.0,
        n_paths: 4096,
        seed: 2024,
    };
    let bar = sol.barriers();
    let rows = mc_value(EvalPolicy::Barriers(&bar), &sol.params, &st, &states, Some(&pde)).unwrap();
    let mut ok = true;
    for (k, row) in rows.iter().enumerate() {
        let (lo, hi) = TABLE_MC_CI[k];
        let overlap = row.ci_overlaps(lo, hi);
        let rel = row.rel_err_pct.unwrap();
        let in_band = (-6.0..=1.0).contains(&rel);
        ok &= overlap && in_band;
        println!(
            "    ({}, {})  MC {:.4} [{:.4}, {:.4}]  table CI [{lo}, {hi}] {}  vs PDE {:.4}: {rel:+.2}% {}",
            row.x0,
            row.y0,
            row.mc_mean,
            row.mc_ci95.0,
            row.mc_ci95.1,
            if overlap { "overlap" } else { "disjoint" },
            row.pde_value.unwrap(),
            if in_band { "" } else { "(outside [-6%, +1%])" }
        );
    }
    r.record(5, "Monte Carlo under PDE barriers", ok, "4096 paths per state");
}

fn fd_check(net: &Mlp, grad: &hawkes_dividend::neural::Gradients, f: &dyn Fn(&Mlp) -> f64) -> f64 {
    let eps = 1e-6;
    let mut num2 = 0.0;
    let mut den2 = 0.0;
    let mut n = net.clone();
    for l in 0..net.weights.len() {
        for (idx, &w) in net.weights[l].indexed_iter() {
            n.weights[l][idx] = w + eps;
            let up = f(&n);
            n.weights[l][idx] = w - eps;
            let dn = f(&n);
            n.weights[l][idx] = w;
            let fd = (up - dn) / (2.0 * eps);
            num2 += (grad.weights[l][idx] - fd).powi(2);
            den2 += fd * fd;
        }
        for (idx, &b) in net.biases[l].indexed_iter() {
            n.biases[l][idx] = b + eps;
            let up = f(&n);
            n.biases[l][idx] = b - eps;
            let dn = f(&n);
            n.biases[l][idx] = b;
            let fd = (up - dn) / (2.0 * eps);
            num2 += (grad.biases[l][idx] - fd).powi(2);
            den2 += fd * fd;
        }
    }
    num2.sqrt() / den2.sqrt().max(1e-12)
}

fn surrogate(actor: &Mlp, batch: &EpisodeBatch, weights: &[f64], ent_w: f64, sigma_min: f64) -> f64 {
    let mut total = 0.0;
    let mut r = 0;
    for e in &batch.episodes {
        for s in &e.steps {
            let head = GaussianHead::from_raw(&actor.forward(&[s.y]).unwrap(), sigma_min);
            total += weights[r] * head.log_prob(s.g1, s.g2) + ent_w * head.entropy();
            r += 1;
        }
    }
    total
}

fn gradient_fd(p: &ModelParams) -> (bool, String) {
    let sigma_min = 1e-3;
    let h = 0.1;
    let gamma = (-p.rho * h).exp();
    let mut worst: f64 = 0.0;
    for cfg in 0..10u64 {
        let mut rng = RngStream::new(500 + cfg, 0);
        let width = rng.random_range(3..8);
        // Random biases keep every ReLU off its kink.
        let mut actor = Mlp::new(&[1, width, width, 4], &mut rng).unwrap();
        let mut critic = Mlp::new(&[2, width, width, 1], &mut rng).unwrap();
        for net in [&mut actor, &mut critic] {
            for b in &mut net.biases {
                b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
            }
        }
        let ent = rng.random_range(0.0..0.1);
        let gs = GradSettings {
            sigma_min,
            entropy_coef: ent,
            freeze_kappa: false,
        };
        let ro = Rollout {
            actor: &actor,
            sigma_min,
            mode: ActionMode::Stochastic,
            kappa_ref: None,
            record: true,
        };
        let starts = vec![State::new(rng.random_range(0.0..2.0), rng.random_range(2.0..4.0)); 3];
        let batch = run_batch(p, &ro, &starts, h, 15, 900 + cfg, 0).unwrap();
        let k = batch.episodes.len() as f64;
        let n_rec = batch.n_steps() as f64;

        // REINFORCE with the leave-one-out baseline.
        let total: f64 = batch.episodes.iter().map(|e| e.ret).sum();
        let mut w = Vec::new();
        for e in &batch.episodes {
            let adv = e.ret - (total - e.ret) / (k - 1.0);
            w.extend(std::iter::repeat_n(adv / k, e.steps.len()));
        }
        let g = reinforce_gradient(&actor, &batch, &gs).unwrap();
        worst = worst.max(fd_check(&actor, &g, &|a| {
            surrogate(a, &batch, &w, ent / n_rec, sigma_min)
        }));

        // Actor-critic: TD advantages for the actor, squared error for the critic.
        let vals: Vec<Vec<f64>> = batch
            .episodes
            .iter()
            .map(|e| {
                e.steps
                    .iter()
                    .map(|s| critic.forward(&[s.x, s.y]).unwrap()[0])
                    .collect()
            })
            .collect();
        let mut w = Vec::new();
        for (e, v) in batch.episodes.iter().zip(&vals) {
            for (i, s) in e.steps.iter().enumerate() {
                let next = v.get(i + 1).copied().unwrap_or(0.0);
                w.push(s.discount * (s.reward + gamma * next - v[i]) / k);
            }
        }
        let (ga, gc) = actor_critic_gradients(&actor, &critic, &batch, &gs, gamma, CriticTarget::FullReturn).unwrap();
        worst = worst.max(fd_check(&actor, &ga, &|a| {
            surrogate(a, &batch, &w, ent / n_rec, sigma_min)
        }));
        let loss = |c: &Mlp| {
            let mut l = 0.0;
            for e in &batch.episodes {
                let mut tail = 0.0;
                for s in e.steps.iter().rev() {
                    tail = s.reward + gamma * tail;
                    l -= 0.5 * (tail - c.forward(&[s.x, s.y]).unwrap()[0]).powi(2) / k;
                }
            }
            l
        };
        worst = worst.max(fd_check(&critic, &gc, &loss));
    }
    (worst < 1e-3, format!("max rel err {worst:.2e} over 10 configurations"))
}

// Three-step toy: each step the events {g1 > 0.3} and {g2 > -0.2} decide
// the reward and the next input, so the expected return is a finite sum.
const TOY_STEPS: usize = 3;

fn toy_outcome(y: f64, a: bool, b: bool) -> (f64, f64) {
    let r = f64::from(a as u8) + 0.5 * f64::from(b as u8) - 0.3 * f64::from((a && b) as u8);
    let y_next = y + if a { 0.7 } else { -0.4 } + if b { 0.2 } else { 0.0 };
    (r, y_next)
}

fn toy_value(actor: &Mlp, y: f64, depth: usize, sigma_min: f64) -> f64 {
    if depth == TOY_STEPS {
        return 0.0;
    }
    let head = GaussianHead::from_raw(&actor.forward(&[y]).unwrap(), sigma_min);
    let pa = 1.0 - Normal::new(head.mu1, head.sigma1).unwrap().cdf(0.3);
    let pb = 1.0 - Normal::new(head.mu2, head.sigma2).unwrap().cdf(-0.2);
    let mut v = 0.0;
    for (a, qa) in [(true, pa), (false, 1.0 - pa)] {
        for (b, qb) in [(true, pb), (false, 1.0 - pb)] {
            let (r, yn) = toy_outcome(y, a, b);
            v += qa * qb * (r + toy_value(actor, yn, depth + 1, sigma_min));
        }
    }
    v
}

fn toy_episode(actor: &Mlp, sigma_min: f64, rng: &mut RngStream) -> Episode {
    let mut y = 2.0;
    let mut steps = Vec::with_capacity(TOY_STEPS);
    let mut ret = 0.0;
    for i in 0..TOY_STEPS {
        let head = GaussianHead::from_raw(&actor.forward(&[y]).unwrap(), sigma_min);
        let (g1, g2) = head.sample(rng);
        let (reward, yn) = toy_outcome(y, g1 > 0.3, g2 > -0.2);
        steps.push(StepRecord {
            t: i as f64,
            x: 0.0,
            y,
            g1,
            g2,
            logp: head.log_prob(g1, g2),
            entropy: head.entropy(),
            reward,
            discount: 1.0,
            discounted_reward: reward,
        });
        ret += reward;
        y = yn;
    }
    Episode {
        steps,
        ret,
        exit: hawkes_dividend::hawkes::ExitKind::HorizonT,
        exit_index: TOY_STEPS,
    }
}

fn toy_unbiasedness() -> (bool, String) {
    let sigma_min = 1e-3;
    let mut rng = RngStream::new(31, 0);
    let actor = Mlp::new(&[1, 5, 4], &mut rng).unwrap();
    let gs = GradSettings {
        sigma_min,
        entropy_coef: 0.0,
        freeze_kappa: false,
    };
    let zero = hawkes_dividend::neural::Gradients::zeros_like(&actor);
    let exact_raw = {
        let mut g = zero.clone();
        let eps = 1e-5;
        let mut n = actor.clone();
        let f = |m: &Mlp| toy_value(m, 2.0, 0, sigma_min);
        for l in 0..actor.weights.len() {
            for (idx, &w) in actor.weights[l].indexed_iter() {
                n.weights[l][idx] = w + eps;
                let up = f(&n);
                n.weights[l][idx] = w - eps;
                g.weights[l][idx] = (up - f(&n)) / (2.0 * eps);
                n.weights[l][idx] = w;
            }
            for (idx, &b) in actor.biases[l].indexed_iter() {
                n.biases[l][idx] = b + eps;
                let up = f(&n);
                n.biases[l][idx] = b - eps;
                g.biases[l][idx] = (up - f(&n)) / (2.0 * eps);
                n.biases[l][idx] = b;
            }
        }
        g
    };
    let exact: Vec<f64> = exact_raw.iter().collect();
    let dim = exact.len();
    let batches = 100_000;
    let mut sum = vec![0.0; dim];
    let mut sum2 = vec![0.0; dim];
    for _ in 0..batches {
        let episodes = (0..4).map(|_| toy_episode(&actor, sigma_min, &mut rng)).collect();
        let g = reinforce_gradient(&actor, &EpisodeBatch { episodes }, &gs).unwrap();
        for (k, v) in g.iter().enumerate() {
            sum[k] += v;
            sum2[k] += v * v;
        }
    }
    let n = batches as f64;
    let mut worst: f64 = 0.0;
    for k in 0..dim {
        let m = sum[k] / n;
        let var = (sum2[k] / n - m * m) * n / (n - 1.0);
        let se = (var / n).sqrt();
        worst = worst.max((m - exact[k]).abs() / se);
    }
    (
        worst <= 3.0,
        format!("max |mean - exact| / SE = {worst:.2} over {dim} coordinates, {batches} batches"),
    )
}

fn gradients(r: &mut Report) {
    let (fd_ok, fd) = gradient_fd(&ModelParams::baseline());
    let (ub_ok, ub) = toy_unbiasedness();
    r.record(6, "gradient correctness", fd_ok && ub_ok, &format!("{fd}; {ub}"));
}

fn train_at(p: &ModelParams, cfg: &TrainConfig) -> TrainOutcome {
    let t0 = Instant::now();
    let out = train(p, cfg, Algo::ActorCritic, None, |_| {}).unwrap();
    println!(
        "    trained from ({}, {}) with K={}, E={} in {:.1}s: final-20 mean return {:.4}",
        cfg.x0,
        cfg.y0,
        cfg.batch_size,
        cfg.epochs,
        t0.elapsed().as_secs_f64(),
        out.final_mean_return(20)
    );
    out
}

fn training(
    r: &mut Report,
    sol: &Solution,
    id: u32,
    label: &str,
    batch: usize,
    epochs: usize,
    tol: f64,
) -> Vec<TrainOutcome> {
    let p = &sol.params;
    let mut outs = Vec::new();
    let mut ok = true;
    let mut detail = Vec::new();
    for x0 in [1.0, 0.0] {
        let cfg = TrainConfig {
            batch_size: batch,
            epochs,
            x0,
            y0: 2.8,
            ..TrainConfig::baseline()
        };
        let out = train_at(p, &cfg);
        let v = sol.value_at(x0, 2.8);
        let rel = (out.final_mean_return(20) - v) / v;
        ok &= out.diverged_at.is_none() && rel.abs() <= tol;
        detail.push(format!(
            "x0={x0}: {:.4} vs PDE {v:.4} ({:+.2}%)",
            out.final_mean_return(20),
            100.0 * rel
        ));
        outs.push(out);
    }
    r.record(id, label, ok, &detail.join(", "));
    outs
}

fn learned_structure(r: &mut Report, outs: &[TrainOutcome]) {
    let ys: Vec<f64> = (0..=40).map(|k| 2.0 + 0.1 * k as f64).collect();
    let mut ok = true;
    let mut detail = Vec::new();
    for (out, x0) in outs.iter().zip([1.0, 0.0]) {
        let b = tabulate_actor(&out.actor, &ys).unwrap();
        let negative = b.kappa_star.iter().all(|&k| k < 0.0);
        let shrinking = b.kappa_star.last().unwrap() > &b.kappa_star[0];
        let finite = b.x_star.iter().all(|x| x.is_finite() && *x >= 0.0);
        ok &= negative && shrinking && finite;
        detail.push(format!(
            "x0={x0}: kappa* {:.3} -> {:.3}, x* {:.3} -> {:.3}",
            b.kappa_star[0],
            b.kappa_star.last().unwrap(),
            b.x_star[0],
            b.x_star.last().unwrap()
        ));
    }
    r.record(8, "learned barrier structure", ok, &detail.join(", "));
}

fn boundary_integral(r: &mut Report) {
    let mut rng = RngStream::new(9, 0);
    let n = 1_000_000;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let v0 = rng.random_range(0.01..20.0);
        let beta = rng.random_range(0.2..10.0);
        let delta = rng.random_range(1.01..5.0);
        let closed = ClaimDist::Exponential { beta }.injection_integral(v0, delta).unwrap();
        let dz = v0 / delta / n as f64;
        let f = |k: usize| {
            let z = k as f64 * dz;
            (v0 - delta * z) * beta * (-beta * z).exp()
        };
        // Composite Simpson with compensated summation.
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for k in 0..=n {
            let w = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let term = w * f(k);
            let t = sum + term;
            comp += if sum.abs() >= term.abs() {
                (sum - t) + term
            } else {
                (term - t) + sum
            };
            sum = t;
        }
        let quad = (sum + comp) * dz / 3.0;
        worst = worst.max((closed - quad).abs());
    }
    r.record(
        9,
        "closed-form boundary integral",
        worst < 1e-9,
        &format!("max abs err {worst:.2e} over 20 triples"),
    );
}

fn main() -> ExitCode {
    let mut r = Report { failed: Vec::new() };
    let t0 = Instant::now();
    let sol = baseline_solution();
    println!(
        "baseline solve: {} outer iterations in {:.1}s, {} dividend / {} continuation nodes",
        sol.outer_iterations,
        t0.elapsed().as_secs_f64(),
        sol.policy.count(Regime::Dividend),
        sol.policy.count(Regime::Continuation)
    );
    pde_benchmark(&mut r, &sol);
    vi_residual(&mut r, &sol);
    analytic_properties(&mut r, &sol);
    simulator_law(&mut r);
    mc_consistency(&mut r, &sol);
    gradients(&mut r);
    let outs = training(
        &mut r,
        &sol,
        7,
        "training outcome, reduced config (K=256, E=60, 10%)",
        256,
        60,
        0.10,
    );
    if std::env::var_os("HAWKES_DIVIDEND_NIGHTLY").is_some() {
        let full = training(
            &mut r,
            &sol,
            7,
            "training outcome, full config (K=2048, E=200, 5%)",
            2048,
            200,
            0.05,
        );
        learned_structure(&mut r, &full);
    } else {
        println!("SKIP criterion 7: full config runs only with HAWKES_DIVIDEND_NIGHTLY set");
        learned_structure(&mut r, &outs);
    }
    boundary_integral(&mut r);
    if r.failed.is_empty() {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {:?}", r.failed);
        ExitCode::FAILURE
    }
}
