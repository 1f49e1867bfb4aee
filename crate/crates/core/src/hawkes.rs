//! Exact simulation of the Hawkes-driven surplus by Ogata thinning.
//!
//! Between claims the intensity decays in closed form; claims are located
//! in continuous time inside each step and only the barrier actions are
//! tied to the time grid.

use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, State};

/// Deterministic random stream keyed by `(seed, stream_id)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        RngStream { seed, stream_id, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// First claim time from intensity `y`. The envelope is the current
/// intensity, valid because the pre-claim intensity never increases.
pub fn next_claim_time<R: Rng + ?Sized>(p: &ModelParams, y: f64, rng: &mut R) -> f64 {
    let mut t = 0.0;
    let mut envelope = y;
    loop {
        let e: f64 = Exp1.sample(rng);
        t += e / envelope;
        let lam = p.decay(y, t);
        let u: f64 = rng.random();
        if u * envelope <= lam {
            return t;
        }
        envelope = lam;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: State,
    pub claims_total: f64,
    pub n_claims: usize,
}

/// Advance `(X, λ)` over one step of length `h`. `net_action` is removed
/// from the surplus (dividends positive, injections negative).
pub fn step<R: Rng + ?Sized>(p: &ModelParams, s: State, h: f64, net_action: f64, rng: &mut R) -> Result<StepOutcome> {
    if !(h > 0.0) {
        return Err(Error::invalid("h", format!("step must be > 0, got {h}")));
    }
    Ok(step_unchecked(p, s, h, net_action, rng))
}

#[inline]
fn step_unchecked<R: Rng + ?Sized>(p: &ModelParams, s: State, h: f64, net_action: f64, rng: &mut R) -> StepOutcome {
    let mut t = 0.0;
    let mut lam = s.y;
    let mut claims = 0.0;
    let mut n = 0;
    loop {
        let tau = next_claim_time(p, lam, rng);
        if t + tau > h {
            lam = p.decay(lam, h - t);
            break;
        }
        t += tau;
        lam = p.decay(lam, tau) + p.eta;
        claims += p.claim.sample(rng);
        n += 1;
    }
    StepOutcome {
        state: State::new(s.x + p.c * h - claims - net_action, lam),
        claims_total: claims,
        n_claims: n,
    }
}

/// Dividend and ruin thresholds in force at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Pay everything above this level (≥ 0).
    pub x_star: f64,
    /// Inject back to zero when surplus is in `[kappa_star, 0)` (≤ 0).
    pub kappa_star: f64,
}

/// Anything that maps an intensity to barrier levels.
pub trait BarrierSource {
    fn thresholds(&self, y: f64) -> Thresholds;
}

impl<F: Fn(f64) -> Thresholds> BarrierSource for F {
    fn thresholds(&self, y: f64) -> Thresholds {
        self(y)
    }
}

/// Constant barriers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedBarriers(pub Thresholds);

impl BarrierSource for FixedBarriers {
    fn thresholds(&self, _y: f64) -> Thresholds {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExitKind {
    Ruin,
    HorizonT,
}

/// Outcome of applying the barrier rule at one grid time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierAction {
    /// Net cash removed (dividend > 0, injection < 0).
    pub action: f64,
    /// Undiscounted reward: dividend, or `δ·X` for an injection.
    pub reward: f64,
    pub ruined: bool,
}

/// Apply thresholds to a pre-action surplus.
pub fn barrier_action(x: f64, th: Thresholds, delta: f64) -> BarrierAction {
    if x < th.kappa_star {
        BarrierAction {
            action: 0.0,
            reward: 0.0,
            ruined: true,
        }
    } else if x < 0.0 {
        BarrierAction {
            action: x,
            reward: delta * x,
            ruined: false,
        }
    } else if x >= th.x_star {
        BarrierAction {
            action: x - th.x_star,
            reward: x - th.x_star,
            ruined: false,
        }
    } else {
        BarrierAction {
            action: 0.0,
            reward: 0.0,
            ruined: false,
        }
    }
}

pub(crate) fn check_thresholds(y: f64, th: Thresholds) -> Result<()> {
    if !(th.x_star >= 0.0 && th.kappa_star <= 0.0) {
        return Err(Error::PolicyContract {
            y,
            x_star: th.x_star,
            kappa_star: th.kappa_star,
        });
    }
    Ok(())
}

/// One controlled path on the grid `t_i = i·h`.
///
/// `surplus[i]` is the post-action surplus at `t_i` (the pre-action value at
/// a ruin exit), `intensity[i]` the intensity at `t_i`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub surplus: Vec<f64>,
    pub intensity: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub discounted_rewards: Vec<f64>,
    pub claim_counts: Vec<usize>,
    pub exit_index: usize,
    pub exit_kind: Option<ExitKind>,
}

impl Trajectory {
    pub fn total_discounted_reward(&self) -> f64 {
        self.discounted_rewards.iter().sum()
    }

    /// CSV with columns `t,X,lambda,action,reward,cum_discounted_reward`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,X,lambda,action,reward,cum_discounted_reward")?;
        let mut cum = 0.0;
        for k in 0..self.times.len() {
            cum += self.discounted_rewards[k];
            writeln!(
                w,
                "{},{},{},{},{},{}",
                self.times[k], self.surplus[k], self.intensity[k], self.actions[k], self.rewards[k], cum
            )?;
        }
        Ok(())
    }
}

/// Number of grid steps in `[0, T]`; `T` must be a multiple of `h`.
pub fn horizon_steps(h: f64, horizon_t: f64) -> Result<usize> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::invalid("h", format!("step must be > 0, got {h}")));
    }
    let n = horizon_t / h;
    let k = n.round();
    if !(k >= 1.0) || (n - k).abs() > 1e-6 * k.max(1.0) {
        return Err(Error::invalid(
            "horizon_T",
            format!("{horizon_t} is not a positive multiple of h = {h}"),
        ));
    }
    Ok(k as usize)
}

/// Simulate a barrier-controlled path. At each grid time the claims of the
/// previous step are already booked, then the thresholds are applied:
/// ruin below `κ*`, injection to zero on `[κ*, 0)`, dividend above `x*`.
pub fn simulate_barrier_trajectory<B: BarrierSource + ?Sized, R: Rng + ?Sized>(
    p: &ModelParams,
    s0: State,
    h: f64,
    horizon_t: f64,
    barriers: &B,
    rng: &mut R,
) -> Result<Trajectory> {
    let n = horizon_steps(h, horizon_t)?;
    let mut traj = Trajectory::default();
    run_barrier_path(p, s0, h, n, barriers, rng, Some(&mut traj))?;
    Ok(traj)
}

/// Discounted return of a barrier-controlled path without recording it.
pub fn barrier_return<B: BarrierSource + ?Sized, R: Rng + ?Sized>(
    p: &ModelParams,
    s0: State,
    h: f64,
    n_steps: usize,
    barriers: &B,
    rng: &mut R,
) -> Result<(f64, ExitKind)> {
    run_barrier_path(p, s0, h, n_steps, barriers, rng, None)
}

fn run_barrier_path<B: BarrierSource + ?Sized, R: Rng + ?Sized>(
    p: &ModelParams,
    s0: State,
    h: f64,
    n_steps: usize,
    barriers: &B,
    rng: &mut R,
    mut record: Option<&mut Trajectory>,
) -> Result<(f64, ExitKind)> {
    let mut s = s0;
    let mut total = 0.0;
    let mut claims = 0;
    for i in 0..=n_steps {
        let t = i as f64 * h;
        let disc = (-p.rho * t).exp();
        if i == n_steps {
            if let Some(tr) = record.as_deref_mut() {
                push(tr, t, s, 0.0, 0.0, 0.0, claims);
                tr.exit_index = i;
                tr.exit_kind = Some(ExitKind::HorizonT);
            }
            return Ok((total, ExitKind::HorizonT));
        }
        let th = barriers.thresholds(s.y);
        check_thresholds(s.y, th)?;
        let act = barrier_action(s.x, th, p.delta);
        if act.ruined {
            if let Some(tr) = record.as_deref_mut() {
                push(tr, t, s, 0.0, 0.0, 0.0, claims);
                tr.exit_index = i;
                tr.exit_kind = Some(ExitKind::Ruin);
            }
            return Ok((total, ExitKind::Ruin));
        }
        total += disc * act.reward;
        let post = State::new(s.x - act.action, s.y);
        if let Some(tr) = record.as_deref_mut() {
            push(tr, t, post, act.action, act.reward, disc * act.reward, claims);
        }
        let out = step_unchecked(p, post, h, 0.0, rng);
        claims = out.n_claims;
        s = out.state;
    }
    unreachable!("loop returns at the horizon")
}

fn push(tr: &mut Trajectory, t: f64, s: State, action: f64, reward: f64, disc_reward: f64, claims: usize) {
    tr.times.push(t);
    tr.surplus.push(s.x);
    tr.intensity.push(s.y);
    tr.actions.push(action);
    tr.rewards.push(reward);
    tr.discounted_rewards.push(disc_reward);
    tr.claim_counts.push(claims);
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        let mut c = RngStream::new(7, 4);
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn poisson_degeneration() {
        let p = ModelParams {
            eta: 0.0,
            ..ModelParams::baseline()
        };
        let mut rng = RngStream::new(1, 0);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| next_claim_time(&p, 2.0, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        // Exp(2): sd 0.5, se 0.5/√n.
        assert!((mean - 0.5).abs() < 3.0 * 0.5 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn survival_law_at_half() {
        let p = ModelParams::baseline();
        let mut rng = RngStream::new(2, 0);
        let n = 100_000;
        let hits = (0..n).filter(|_| next_claim_time(&p, 2.8, &mut rng) >= 0.5).count();
        let q = p.survival_probability(2.8, 0.5).unwrap();
        let se = (q * (1.0 - q) / n as f64).sqrt();
        let phat = hits as f64 / n as f64;
        assert!((phat - q).abs() < 3.0 * se, "phat {phat} q {q}");
    }

    #[test]
    fn deterministic_drift_without_claims() {
        // β → 0 would still produce claims; suppress them with b tiny and no
        // excitation by checking a single short step against the law instead:
        // with claims, X' = X + ch − Σ Y − a.
        let p = ModelParams::baseline();
        let mut rng = RngStream::new(3, 0);
        for _ in 0..200 {
            let s = State::new(1.0, 2.6);
            let out = step(&p, s, 0.02, 0.1, &mut rng).unwrap();
            assert_abs_diff_eq!(out.state.x, 1.0 + 0.02 - out.claims_total - 0.1, epsilon = 1e-12);
            if out.n_claims == 0 {
                assert_abs_diff_eq!(out.state.y, p.decay(2.6, 0.02), epsilon = 1e-15);
                assert_eq!(out.claims_total, 0.0);
            } else {
                assert!(out.state.y > p.b);
                assert!(out.claims_total > 0.0);
            }
        }
        assert!(step(&p, State::new(0.0, 2.0), 0.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn barrier_rules() {
        let th = Thresholds {
            x_star: 1.0,
            kappa_star: -0.5,
        };
        assert_eq!(barrier_action(1.5, th, 1.8).action, 0.5);
        assert_eq!(barrier_action(0.5, th, 1.8).action, 0.0);
        let inj = barrier_action(-0.2, th, 1.8);
        assert_eq!(inj.action, -0.2);
        assert_abs_diff_eq!(inj.reward, -0.36, epsilon = 1e-15);
        assert!(barrier_action(-0.6, th, 1.8).ruined);
        // Exactly at κ* injection is still taken.
        assert!(!barrier_action(-0.5, th, 1.8).ruined);
    }

    #[test]
    fn liquidation_policy_pays_initial_surplus() {
        let p = ModelParams::baseline();
        let pol = FixedBarriers(Thresholds {
            x_star: 0.0,
            kappa_star: 0.0,
        });
        let mut rng = RngStream::new(5, 1);
        let tr = simulate_barrier_trajectory(&p, State::new(1.0, 2.0), 0.02, 50.0, &pol, &mut rng).unwrap();
        assert_abs_diff_eq!(tr.discounted_rewards[0], 1.0, epsilon = 1e-15);
        assert_eq!(tr.surplus[0], 0.0);
        // Every later dividend is the premium skimmed since the previous grid time.
        for k in 1..tr.exit_index {
            if tr.claim_counts[k] == 0 {
                assert_abs_diff_eq!(tr.rewards[k], p.c * 0.02, epsilon = 1e-12);
            }
        }
        if tr.exit_kind == Some(ExitKind::Ruin) {
            assert!(tr.surplus[tr.exit_index] < 0.0);
        }
    }

    #[test]
    fn do_nothing_policy_earns_nothing() {
        let p = ModelParams::baseline();
        let pol = FixedBarriers(Thresholds {
            x_star: f64::INFINITY,
            kappa_star: 0.0,
        });
        let mut rng = RngStream::new(6, 0);
        let tr = simulate_barrier_trajectory(&p, State::new(0.0, 2.0), 0.02, 50.0, &pol, &mut rng).unwrap();
        assert_eq!(tr.total_discounted_reward(), 0.0);
    }

    #[test]
    fn contract_violation_is_reported() {
        let p = ModelParams::baseline();
        let pol = FixedBarriers(Thresholds {
            x_star: -1.0,
            kappa_star: 0.0,
        });
        let mut rng = RngStream::new(6, 0);
        let err = simulate_barrier_trajectory(&p, State::new(0.0, 2.0), 0.02, 1.0, &pol, &mut rng).unwrap_err();
        assert!(matches!(err, Error::PolicyContract { .. }));
        let pol = FixedBarriers(Thresholds {
            x_star: 1.0,
            kappa_star: 0.1,
        });
        assert!(simulate_barrier_trajectory(&p, State::new(0.0, 2.0), 0.02, 1.0, &pol, &mut rng).is_err());
    }

    #[test]
    fn horizon_must_be_multiple() {
        assert_eq!(horizon_steps(0.02, 50.0).unwrap(), 2500);
        assert!(horizon_steps(0.02, 0.03).is_err());
        assert!(horizon_steps(0.0, 1.0).is_err());
    }

    #[test]
    fn csv_dump_columns() {
        let p = ModelParams::baseline();
        let pol = FixedBarriers(Thresholds {
            x_star: 0.5,
            kappa_star: -0.3,
        });
        let mut rng = RngStream::new(8, 0);
        let tr = simulate_barrier_trajectory(&p, State::new(1.0, 2.0), 0.02, 1.0, &pol, &mut rng).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,X,lambda,action,reward,cum_discounted_reward");
        assert_eq!(lines.count(), tr.times.len());
    }
}
