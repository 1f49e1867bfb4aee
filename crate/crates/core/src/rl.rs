//! Barrier-policy MDP on the time grid and the two policy-gradient loops.
//!
//! The actor maps the intensity to `(μ₁, s₁, μ₂, s₂)`; raw draws
//! `g ~ N(μ, σ)` become barriers `x* = softplus(g₁)`, `κ* = −softplus(g₂)`.
//! Rewards carry their own `e^{−ρ t}` factor. The critic regresses the
//! undiscounted value `w(x, y)` so that `v̂(t, s) = e^{−ρ t} w(s)`.

use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hawkes::{barrier_action, horizon_steps, step, ExitKind, RngStream, Thresholds};
use crate::hjb::BarrierPolicy;
use crate::model::{ModelParams, State};
use crate::neural::{softplus, GaussianHead, Gradients, Mlp, MlpCheckpoint, Optimizer, OptimizerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticTarget {
    /// `R_i + e^{−ρh} w(s_{i+1})`.
    Td,
    /// Discounted sum of the remaining rewards of the episode.
    FullReturn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    Reinforce,
    ActorCritic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub h: f64,
    #[serde(rename = "horizon_T")]
    pub horizon_t: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub entropy_coef: f64,
    /// Linear decay of the entropy coefficient to 0 over the epochs.
    #[serde(default = "yes")]
    pub entropy_anneal: bool,
    pub sigma_min: f64,
    pub seed: u64,
    pub x0: f64,
    pub y0: f64,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_target")]
    pub critic_target: CriticTarget,
    /// Replace the learned `κ*` by `−V(0, y)/δ` from a PDE solution.
    #[serde(default)]
    pub freeze_kappa: bool,
}

fn yes() -> bool {
    true
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

fn default_target() -> CriticTarget {
    CriticTarget::Td
}

impl TrainConfig {
    /// `h = 1/50`, `T = 50`, `K = 2048`, 200 epochs, learning rates `1e-3`.
    pub fn baseline() -> Self {
        TrainConfig {
            h: 0.02,
            horizon_t: 50.0,
            batch_size: 2048,
            epochs: 200,
            lr_actor: 1e-3,
            lr_critic: 1e-3,
            entropy_coef: 1e-3,
            entropy_anneal: true,
            sigma_min: 1e-3,
            seed: 2024,
            x0: 1.0,
            y0: 2.8,
            hidden: default_hidden(),
            critic_target: CriticTarget::Td,
            freeze_kappa: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        horizon_steps(self.h, self.horizon_t)?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be ≥ 1"));
        }
        for (name, v) in [("lr_actor", self.lr_actor), ("lr_critic", self.lr_critic)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, format!("must be > 0, got {v}")));
            }
        }
        if !(self.entropy_coef >= 0.0) || !self.entropy_coef.is_finite() {
            return Err(Error::invalid("entropy_coef", "must be ≥ 0"));
        }
        if !(self.sigma_min > 0.0) || !self.sigma_min.is_finite() {
            return Err(Error::invalid("sigma_min", "must be > 0"));
        }
        if !self.x0.is_finite() || !self.y0.is_finite() {
            return Err(Error::invalid("x0/y0", "must be finite"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden", "layer widths must be ≥ 1"));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> Result<usize> {
        horizon_steps(self.h, self.horizon_t)
    }

    pub fn actor_sizes(&self) -> Vec<usize> {
        let mut s = vec![1];
        s.extend(&self.hidden);
        s.push(4);
        s
    }

    pub fn critic_sizes(&self) -> Vec<usize> {
        let mut s = vec![2];
        s.extend(&self.hidden);
        s.push(1);
        s
    }

    /// Entropy weight used at `epoch` (0-based).
    pub fn entropy_at(&self, epoch: usize) -> f64 {
        if self.entropy_anneal && self.epochs > 0 {
            self.entropy_coef * (1.0 - epoch as f64 / self.epochs as f64)
        } else {
            self.entropy_coef
        }
    }
}

/// Map raw draws to barrier levels.
#[inline]
pub fn barriers_from_draws(g1: f64, g2: f64) -> Thresholds {
    Thresholds {
        x_star: softplus(g1),
        kappa_star: -softplus(g2),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierSample {
    pub thresholds: Thresholds,
    pub g1: f64,
    pub g2: f64,
    pub logp: f64,
    pub entropy: f64,
}

/// Draw barriers for intensity `y` from the actor.
pub fn sample_barriers<R: Rng + ?Sized>(actor: &Mlp, y: f64, sigma_min: f64, rng: &mut R) -> Result<BarrierSample> {
    let raw = actor.forward(&[y])?;
    let head = GaussianHead::from_raw(&raw, sigma_min);
    let (g1, g2) = head.sample(rng);
    Ok(BarrierSample {
        thresholds: barriers_from_draws(g1, g2),
        g1,
        g2,
        logp: head.log_prob(g1, g2),
        entropy: head.entropy(),
    })
}

/// Barriers implied by the means, tabulated on `ys`.
pub fn tabulate_actor(actor: &Mlp, ys: &[f64]) -> Result<BarrierPolicy> {
    let x = Array2::from_shape_vec((ys.len(), 1), ys.to_vec()).expect("column");
    let out = actor.forward_batch(x.view())?;
    let mut kappa = Vec::with_capacity(ys.len());
    let mut xs = Vec::with_capacity(ys.len());
    for r in 0..ys.len() {
        let th = barriers_from_draws(out[[r, 0]], out[[r, 2]]);
        xs.push(th.x_star);
        kappa.push(th.kappa_star);
    }
    Ok(BarrierPolicy {
        ys: ys.to_vec(),
        kappa_star: kappa,
        x_star: xs,
        inner_dividend_zones: vec![Vec::new(); ys.len()],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    /// Sample `g ~ N(μ, σ)`.
    Stochastic,
    /// Use `g = μ`.
    Deterministic,
}

/// What drives a rollout.
#[derive(Debug, Clone, Copy)]
pub struct Rollout<'a> {
    pub actor: &'a Mlp,
    pub sigma_min: f64,
    pub mode: ActionMode,
    /// When set, `κ*(y)` comes from this table and the second draw is
    /// excluded from the log-density.
    pub kappa_ref: Option<&'a BarrierPolicy>,
    /// Keep per-step records (needed for gradients).
    pub record: bool,
}

/// One decision at grid time `t_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    /// Pre-action surplus and intensity.
    pub x: f64,
    pub y: f64,
    pub g1: f64,
    pub g2: f64,
    pub logp: f64,
    pub entropy: f64,
    /// Undiscounted reward.
    pub reward: f64,
    /// `e^{−ρ t}`.
    pub discount: f64,
    /// `e^{−ρ t} · reward`.
    pub discounted_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub steps: Vec<StepRecord>,
    /// Total discounted reward `G`.
    pub ret: f64,
    pub exit: ExitKind,
    /// Grid index of the exit time.
    pub exit_index: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeBatch {
    pub episodes: Vec<Episode>,
}

impl EpisodeBatch {
    pub fn returns(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.ret).collect()
    }

    pub fn n_steps(&self) -> usize {
        self.episodes.iter().map(|e| e.steps.len()).sum()
    }

    pub fn mean_return(&self) -> f64 {
        mean(&self.returns())
    }

    pub fn mean_entropy(&self) -> f64 {
        let n = self.n_steps();
        if n == 0 {
            return 0.0;
        }
        self.episodes
            .iter()
            .flat_map(|e| &e.steps)
            .map(|s| s.entropy)
            .sum::<f64>()
            / n as f64
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn head_logp(h: &GaussianHead, g1: f64, g2: f64, freeze_kappa: bool) -> f64 {
    if freeze_kappa {
        let z = (g1 - h.mu1) / h.sigma1;
        -0.5 * std::f64::consts::TAU.ln() - h.sigma1.ln() - 0.5 * z * z
    } else {
        h.log_prob(g1, g2)
    }
}

/// Run all paths in lockstep so the actor is evaluated once per time step
/// on a batch. Each path draws from its own stream.
pub fn rollout<R: Rng>(
    p: &ModelParams,
    ro: &Rollout<'_>,
    starts: &[State],
    rngs: &mut [R],
    h: f64,
    n_steps: usize,
) -> Result<EpisodeBatch> {
    if starts.len() != rngs.len() {
        return Err(Error::ShapeMismatch {
            expected: starts.len(),
            actual: rngs.len(),
        });
    }
    let n = starts.len();
    let mut states = starts.to_vec();
    let mut eps: Vec<Episode> = (0..n)
        .map(|_| Episode {
            steps: Vec::new(),
            ret: 0.0,
            exit: ExitKind::HorizonT,
            exit_index: n_steps,
        })
        .collect();
    let mut active: Vec<usize> = (0..n).collect();
    let mut input = Vec::with_capacity(n);
    let freeze = ro.kappa_ref.is_some();
    for i in 0..n_steps {
        if active.is_empty() {
            break;
        }
        let t = i as f64 * h;
        let disc = (-p.rho * t).exp();
        input.clear();
        input.extend(active.iter().map(|&k| states[k].y));
        let x = ArrayView2::from_shape((active.len(), 1), &input).expect("column");
        let out = ro.actor.forward_batch(x)?;
        let mut next_active = Vec::with_capacity(active.len());
        for (r, &k) in active.iter().enumerate() {
            let raw = [out[[r, 0]], out[[r, 1]], out[[r, 2]], out[[r, 3]]];
            let head = GaussianHead::from_raw(&raw, ro.sigma_min);
            let (g1, g2) = match ro.mode {
                ActionMode::Stochastic => head.sample(&mut rngs[k]),
                ActionMode::Deterministic => (head.mu1, head.mu2),
            };
            let s = states[k];
            let mut th = barriers_from_draws(g1, g2);
            if let Some(kr) = ro.kappa_ref {
                th.kappa_star = kr.kappa_at(s.y).min(0.0);
            }
            let act = barrier_action(s.x, th, p.delta);
            let ep = &mut eps[k];
            let dr = disc * act.reward;
            ep.ret += dr;
            if ro.record {
                let logp = head_logp(&head, g1, g2, freeze);
                if !logp.is_finite() {
                    return Err(Error::NonFinite("log-density of sampled barriers"));
                }
                ep.steps.push(StepRecord {
                    t,
                    x: s.x,
                    y: s.y,
                    g1,
                    g2,
                    logp,
                    entropy: head.entropy(),
                    reward: act.reward,
                    discount: disc,
                    discounted_reward: dr,
                });
            }
            if act.ruined {
                ep.exit = ExitKind::Ruin;
                ep.exit_index = i;
                continue;
            }
            let post = State::new(s.x - act.action, s.y);
            states[k] = step(p, post, h, 0.0, &mut rngs[k])?.state;
            next_active.push(k);
        }
        active = next_active;
    }
    Ok(EpisodeBatch { episodes: eps })
}

/// A single episode from `s0`.
pub fn run_episode<R: Rng>(
    p: &ModelParams,
    ro: &Rollout<'_>,
    s0: State,
    h: f64,
    n_steps: usize,
    rng: &mut R,
) -> Result<Episode> {
    let mut b = rollout(p, ro, &[s0], std::slice::from_mut(rng), h, n_steps)?;
    Ok(b.episodes.pop().expect("one episode"))
}

/// Paths `k = 0..n` use `RngStream(seed, stream_base + k)`.
pub fn run_batch(
    p: &ModelParams,
    ro: &Rollout<'_>,
    starts: &[State],
    h: f64,
    n_steps: usize,
    seed: u64,
    stream_base: u64,
) -> Result<EpisodeBatch> {
    let mut rngs: Vec<RngStream> = (0..starts.len() as u64)
        .map(|k| RngStream::new(seed, stream_base + k))
        .collect();
    rollout(p, ro, starts, &mut rngs, h, n_steps)
}

/// Settings shared by the gradient estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradSettings {
    pub sigma_min: f64,
    pub entropy_coef: f64,
    pub freeze_kappa: bool,
}

const CHUNK: usize = 8192;

/// Accumulate `Σ_r out_r · u_r` gradients over many inputs in chunks;
/// `upstream(r, raw)` gives `u_r` from the network output of row `r`.
fn accumulate_rows<F>(net: &Mlp, inputs: &Array2<f64>, g: &mut Gradients, mut upstream: F) -> Result<()>
where
    F: FnMut(usize, &[f64], &mut [f64]),
{
    let n = inputs.nrows();
    let d = net.output_dim();
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let x = inputs.slice(ndarray::s![start..end, ..]);
        let trace = net.forward_trace(x)?;
        let mut u = Array2::zeros((end - start, d));
        for r in 0..end - start {
            let raw = trace.output.row(r);
            let raw = raw.as_slice().expect("contiguous row");
            upstream(start + r, raw, u.row_mut(r).into_slice().expect("contiguous row"));
        }
        net.accumulate_backward(&trace, u.view(), g)?;
        start = end;
    }
    Ok(())
}

fn actor_inputs(batch: &EpisodeBatch) -> Array2<f64> {
    let ys: Vec<f64> = batch
        .episodes
        .iter()
        .flat_map(|e| e.steps.iter().map(|s| s.y))
        .collect();
    Array2::from_shape_vec((ys.len(), 1), ys).expect("column")
}

fn actor_upstream(raw: &[f64], s: &StepRecord, weight: f64, ent_w: f64, gs: &GradSettings, out: &mut [f64]) {
    let lp = GaussianHead::log_prob_grad_raw(raw, gs.sigma_min, s.g1, s.g2);
    let en = GaussianHead::entropy_grad_raw(raw, gs.sigma_min);
    for k in 0..4 {
        out[k] = weight * lp[k] + ent_w * en[k];
    }
    if gs.freeze_kappa {
        out[2] = 0.0;
        out[3] = 0.0;
    }
}

/// Per-record weights folded into one flat vector in episode order.
fn flat_records(batch: &EpisodeBatch) -> Vec<&StepRecord> {
    batch.episodes.iter().flat_map(|e| e.steps.iter()).collect()
}

/// `(1/K) Σ_k (G_k − b_k) Λ_k + c·∇(mean entropy)` with the leave-one-out
/// baseline `b_k = mean_{j≠k} G_j`, i.e. the batch mean rescaled by
/// `K/(K−1)` so the estimator stays unbiased. `K = 1` uses `b = 0`.
pub fn reinforce_gradient(actor: &Mlp, batch: &EpisodeBatch, gs: &GradSettings) -> Result<Gradients> {
    let k = batch.episodes.len();
    if k == 0 {
        return Err(Error::invalid("batch", "empty"));
    }
    let total: f64 = batch.episodes.iter().map(|e| e.ret).sum();
    let adv: Vec<f64> = batch
        .episodes
        .iter()
        .map(|e| {
            if k > 1 {
                e.ret - (total - e.ret) / (k - 1) as f64
            } else {
                e.ret
            }
        })
        .collect();
    let mut weights = Vec::with_capacity(batch.n_steps());
    for (e, a) in batch.episodes.iter().zip(&adv) {
        weights.extend(std::iter::repeat_n(a / k as f64, e.steps.len()));
    }
    let recs = flat_records(batch);
    let ent_w = if recs.is_empty() {
        0.0
    } else {
        gs.entropy_coef / recs.len() as f64
    };
    let mut g = Gradients::zeros_like(actor);
    accumulate_rows(actor, &actor_inputs(batch), &mut g, |r, raw, out| {
        actor_upstream(raw, recs[r], weights[r], ent_w, gs, out)
    })?;
    if !g.is_finite() {
        return Err(Error::NonFinite("policy gradient"));
    }
    Ok(g)
}

pub fn reinforce_update(actor: &mut Mlp, opt: &mut Optimizer, batch: &EpisodeBatch, gs: &GradSettings) -> Result<()> {
    let g = reinforce_gradient(actor, batch, gs)?;
    opt.step(actor, &g)
}

/// Critic values `w(x_i, y_i)` for every record, in episode order.
pub fn critic_values(critic: &Mlp, batch: &EpisodeBatch) -> Result<Vec<f64>> {
    let xs: Vec<f64> = batch
        .episodes
        .iter()
        .flat_map(|e| e.steps.iter().flat_map(|s| [s.x, s.y]))
        .collect();
    let n = xs.len() / 2;
    let x = Array2::from_shape_vec((n, 2), xs).expect("pairs");
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let o = critic.forward_batch(x.slice(ndarray::s![start..end, ..]))?;
        out.extend(o.column(0).iter().copied());
        start = end;
    }
    Ok(out)
}

/// Actor and critic ascent directions.
///
/// Actor: `(1/K) Σ_k Σ_i e^{−ρt_i}(R_i + γ w(s_{i+1}) − w(s_i)) ∇log p_i`
/// with `γ = e^{−ρh}` and `w = 0` after the exit. Critic:
/// `(1/K) Σ_k Σ_i (target_i − w(s_i)) ∇w(s_i)`.
pub fn actor_critic_gradients(
    actor: &Mlp,
    critic: &Mlp,
    batch: &EpisodeBatch,
    gs: &GradSettings,
    gamma: f64,
    target: CriticTarget,
) -> Result<(Gradients, Gradients)> {
    let k = batch.episodes.len();
    if k == 0 {
        return Err(Error::invalid("batch", "empty"));
    }
    let w = critic_values(critic, batch)?;
    let mut adv = Vec::with_capacity(w.len());
    let mut resid = Vec::with_capacity(w.len());
    let mut off = 0;
    for e in &batch.episodes {
        let n = e.steps.len();
        let mut tail = 0.0;
        let mut targets = vec![0.0; n];
        for i in (0..n).rev() {
            let s = &e.steps[i];
            let next = if i + 1 < n { w[off + i + 1] } else { 0.0 };
            tail = s.reward + gamma * tail;
            targets[i] = match target {
                CriticTarget::Td => s.reward + gamma * next,
                CriticTarget::FullReturn => tail,
            };
        }
        for i in 0..n {
            let s = &e.steps[i];
            let next = if i + 1 < n { w[off + i + 1] } else { 0.0 };
            adv.push(s.discount * (s.reward + gamma * next - w[off + i]) / k as f64);
            resid.push((targets[i] - w[off + i]) / k as f64);
        }
        off += n;
    }
    let recs = flat_records(batch);
    let ent_w = if recs.is_empty() {
        0.0
    } else {
        gs.entropy_coef / recs.len() as f64
    };
    let mut ga = Gradients::zeros_like(actor);
    accumulate_rows(actor, &actor_inputs(batch), &mut ga, |r, raw, out| {
        actor_upstream(raw, recs[r], adv[r], ent_w, gs, out)
    })?;
    let xs: Vec<f64> = recs.iter().flat_map(|s| [s.x, s.y]).collect();
    let xc = Array2::from_shape_vec((recs.len(), 2), xs).expect("pairs");
    let mut gc = Gradients::zeros_like(critic);
    accumulate_rows(critic, &xc, &mut gc, |r, _raw, out| out[0] = resid[r])?;
    if !ga.is_finite() || !gc.is_finite() {
        return Err(Error::NonFinite("actor-critic gradient"));
    }
    Ok((ga, gc))
}

#[allow(clippy::too_many_arguments)]
pub fn actor_critic_update(
    actor: &mut Mlp,
    actor_opt: &mut Optimizer,
    critic: &mut Mlp,
    critic_opt: &mut Optimizer,
    batch: &EpisodeBatch,
    gs: &GradSettings,
    gamma: f64,
    target: CriticTarget,
) -> Result<()> {
    let (ga, gc) = actor_critic_gradients(actor, critic, batch, gs, gamma, target)?;
    actor_opt.step(actor, &ga)?;
    critic_opt.step(critic, &gc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    #[serde(rename = "mean_G")]
    pub mean_g: f64,
    #[serde(rename = "std_G")]
    pub std_g: f64,
    pub mean_entropy: f64,
    pub wall_time: f64,
}

/// Networks plus what is needed to act with them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyCheckpoint {
    pub sigma_min: f64,
    #[serde(default)]
    pub freeze_kappa: bool,
    pub actor: MlpCheckpoint,
    #[serde(default)]
    pub critic: Option<MlpCheckpoint>,
}

impl PolicyCheckpoint {
    pub fn new(actor: &Mlp, critic: Option<&Mlp>, sigma_min: f64, freeze_kappa: bool) -> Self {
        PolicyCheckpoint {
            sigma_min,
            freeze_kappa,
            actor: actor.to_checkpoint(),
            critic: critic.map(Mlp::to_checkpoint),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain data serializes")
    }

    /// Parse and check shapes: the actor maps 1 → 4, the critic 2 → 1.
    pub fn from_json(s: &str) -> Result<(Self, Mlp, Option<Mlp>)> {
        let ck: PolicyCheckpoint = serde_json::from_str(s)?;
        if !(ck.sigma_min > 0.0) || !ck.sigma_min.is_finite() {
            return Err(Error::invalid("sigma_min", "must be > 0"));
        }
        let actor = Mlp::from_checkpoint(&ck.actor)?;
        if actor.input_dim() != 1 || actor.output_dim() != 4 {
            return Err(Error::invalid("actor", "expected 1 input and 4 outputs"));
        }
        let critic = match &ck.critic {
            Some(c) => {
                let net = Mlp::from_checkpoint(c)?;
                if net.input_dim() != 2 || net.output_dim() != 1 {
                    return Err(Error::invalid("critic", "expected 2 inputs and 1 output"));
                }
                Some(net)
            }
            None => None,
        };
        Ok((ck, actor, critic))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub actor: Mlp,
    pub critic: Option<Mlp>,
    pub metrics: Vec<EpochMetrics>,
    /// Epoch at which a non-finite update stopped training; the networks
    /// are those from before that update.
    pub diverged_at: Option<usize>,
}

impl TrainOutcome {
    pub fn checkpoint(&self, cfg: &TrainConfig) -> PolicyCheckpoint {
        PolicyCheckpoint::new(&self.actor, self.critic.as_ref(), cfg.sigma_min, cfg.freeze_kappa)
    }

    /// Mean of the per-epoch `mean_G` over the last `n` epochs.
    pub fn final_mean_return(&self, n: usize) -> f64 {
        let m = &self.metrics[self.metrics.len().saturating_sub(n)..];
        mean(&m.iter().map(|e| e.mean_g).collect::<Vec<_>>())
    }
}

/// Epoch `e` uses streams `(e + 1)·2³² + k`; initial weights come from
/// stream 0.
pub fn train<F: FnMut(&EpochMetrics)>(
    p: &ModelParams,
    cfg: &TrainConfig,
    algo: Algo,
    kappa_ref: Option<&BarrierPolicy>,
    mut on_epoch: F,
) -> Result<TrainOutcome> {
    p.validate()?;
    cfg.validate()?;
    if cfg.freeze_kappa && kappa_ref.is_none() {
        return Err(Error::Config("freeze_kappa requires a PDE solution".into()));
    }
    let kappa_ref = if cfg.freeze_kappa { kappa_ref } else { None };
    let n_steps = cfg.n_steps()?;
    let mut init = RngStream::new(cfg.seed, 0);
    let mut actor = Mlp::new(&cfg.actor_sizes(), &mut init)?;
    let mut critic = match algo {
        Algo::ActorCritic => Some(Mlp::new(&cfg.critic_sizes(), &mut init)?),
        Algo::Reinforce => None,
    };
    let mut actor_opt = Optimizer::new(OptimizerConfig::adam(cfg.lr_actor), &actor);
    let mut critic_opt = critic
        .as_ref()
        .map(|c| Optimizer::new(OptimizerConfig::adam(cfg.lr_critic), c));
    let gamma = (-p.rho * cfg.h).exp();
    let starts = vec![State::new(cfg.x0, cfg.y0); cfg.batch_size];
    let clock = Instant::now();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let ro = Rollout {
            actor: &actor,
            sigma_min: cfg.sigma_min,
            mode: ActionMode::Stochastic,
            kappa_ref,
            record: true,
        };
        let batch = run_batch(p, &ro, &starts, cfg.h, n_steps, cfg.seed, (epoch as u64 + 1) << 32)?;
        let rets = batch.returns();
        let m = EpochMetrics {
            epoch,
            mean_g: mean(&rets),
            std_g: std_dev(&rets),
            mean_entropy: batch.mean_entropy(),
            wall_time: clock.elapsed().as_secs_f64(),
        };
        on_epoch(&m);
        metrics.push(m);
        let gs = GradSettings {
            sigma_min: cfg.sigma_min,
            entropy_coef: cfg.entropy_at(epoch),
            freeze_kappa: kappa_ref.is_some(),
        };
        let (mut a_next, mut c_next) = (actor.clone(), critic.clone());
        let res = match (&mut c_next, &mut critic_opt) {
            (Some(c), Some(co)) => actor_critic_update(
                &mut a_next,
                &mut actor_opt,
                c,
                co,
                &batch,
                &gs,
                gamma,
                cfg.critic_target,
            ),
            _ => reinforce_update(&mut a_next, &mut actor_opt, &batch, &gs),
        };
        match res {
            Ok(()) if a_next.is_finite() && c_next.as_ref().is_none_or(Mlp::is_finite) => {
                actor = a_next;
                critic = c_next;
            }
            Ok(()) | Err(Error::NonFinite(_)) => {
                return Ok(TrainOutcome {
                    actor,
                    critic,
                    metrics,
                    diverged_at: Some(epoch),
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(TrainOutcome {
        actor,
        critic,
        metrics,
        diverged_at: None,
    })
}
