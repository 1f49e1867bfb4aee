//! Model constants and the closed-form quantities of the controlled
//! Hawkes surplus model.
//!
//! Units: rates (`a`, `b`, `eta`, `rho`, intensities) are per unit time,
//! `c` is cash per unit time, claim sizes and surplus are cash, `delta`
//! is dimensionless.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Claim-size law. Only the exponential family is shipped; the solver
/// falls back to quadrature for anything without a closed-form boundary
/// integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClaimDist {
    Exponential {
        /// Rate parameter (1 / mean claim size).
        beta: f64,
    },
}

impl ClaimDist {
    pub fn density(&self, z: f64) -> f64 {
        match *self {
            ClaimDist::Exponential { beta } => {
                if z < 0.0 {
                    0.0
                } else {
                    beta * (-beta * z).exp()
                }
            }
        }
    }

    pub fn cdf(&self, z: f64) -> f64 {
        match *self {
            ClaimDist::Exponential { beta } => {
                if z <= 0.0 {
                    0.0
                } else {
                    -(-beta * z).exp_m1()
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ClaimDist::Exponential { beta } => 1.0 / beta,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ClaimDist::Exponential { beta } => loop {
                let z: f64 = Exp::new(beta).expect("validated rate").sample(rng);
                if z > 0.0 {
                    break z;
                }
            },
        }
    }

    /// Closed form of `∫_0^{v0/δ} (v0 − δ z) dF(z)`, the expected value of
    /// the post-claim injection payoff at zero surplus, when available.
    pub fn injection_integral(&self, v0: f64, delta: f64) -> Option<f64> {
        match *self {
            ClaimDist::Exponential { beta } => {
                if v0 <= 0.0 {
                    return Some(0.0);
                }
                Some(v0 + (delta / beta) * (-beta * v0 / delta).exp_m1())
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ClaimDist::Exponential { beta } => {
                if !(beta.is_finite() && beta > 0.0) {
                    return Err(Error::invalid("beta", format!("must be finite and > 0, got {beta}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Mean-reversion rate of the intensity.
    pub a: f64,
    /// Baseline intensity.
    pub b: f64,
    /// Intensity jump at each claim.
    pub eta: f64,
    /// Discount rate.
    pub rho: f64,
    /// Premium rate.
    pub c: f64,
    /// Proportional cost of injected capital (> 1).
    pub delta: f64,
    pub claim: ClaimDist,
}

impl ModelParams {
    /// The reference parameter set (a=2, b=2, η=0.4, ρ=0.1, c=1, δ=1.8, β=3).
    pub fn baseline() -> Self {
        ModelParams {
            a: 2.0,
            b: 2.0,
            eta: 0.4,
            rho: 0.1,
            c: 1.0,
            delta: 1.8,
            claim: ClaimDist::Exponential { beta: 3.0 },
        }
    }

    pub fn new(a: f64, b: f64, eta: f64, rho: f64, c: f64, delta: f64, claim: ClaimDist) -> Result<Self> {
        let p = ModelParams {
            a,
            b,
            eta,
            rho,
            c,
            delta,
            claim,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(name: &'static str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be finite and > 0, got {v}")))
            }
        }
        positive("a", self.a)?;
        positive("b", self.b)?;
        positive("rho", self.rho)?;
        positive("c", self.c)?;
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::invalid(
                "eta",
                format!("must be finite and >= 0, got {}", self.eta),
            ));
        }
        if !(self.delta.is_finite() && self.delta > 1.0) {
            return Err(Error::invalid(
                "delta",
                format!("must be finite and > 1, got {}", self.delta),
            ));
        }
        self.claim.validate()
    }

    /// Subcritical iff the stationary intensity mean is finite.
    pub fn is_subcritical(&self) -> bool {
        self.a > self.eta
    }

    fn check_intensity(&self, y: f64) -> Result<()> {
        if !(y.is_finite() && y >= self.b) {
            return Err(Error::invalid("y", format!("intensity {y} below baseline {}", self.b)));
        }
        Ok(())
    }

    /// Intensity after `t` time units without a claim, starting from `y`.
    pub fn pre_claim_intensity(&self, y: f64, t: f64) -> Result<f64> {
        self.check_intensity(y)?;
        if !(t >= 0.0) {
            return Err(Error::invalid("t", format!("must be >= 0, got {t}")));
        }
        Ok(self.decay(y, t))
    }

    /// Unchecked closed-form decay `b − (b − y) e^{−a t}`.
    #[inline]
    pub(crate) fn decay(&self, y: f64, t: f64) -> f64 {
        if t.is_infinite() {
            return self.b;
        }
        self.b + (y - self.b) * (-self.a * t).exp()
    }

    /// Integrated pre-claim intensity `∫_0^h λ̃_s ds`.
    #[inline]
    pub(crate) fn compensator(&self, y: f64, h: f64) -> f64 {
        self.b * h - (y - self.b) / self.a * (-self.a * h).exp_m1()
    }

    /// Probability that no claim arrives in `[0, h]` from intensity `y`.
    pub fn survival_probability(&self, y: f64, h: f64) -> Result<f64> {
        self.check_intensity(y)?;
        if !(h >= 0.0) {
            return Err(Error::invalid("h", format!("must be >= 0, got {h}")));
        }
        Ok((-self.compensator(y, h)).exp())
    }

    /// Long-run mean intensity `a b / (a − η)`.
    pub fn stationary_mean_intensity(&self) -> Result<f64> {
        if !self.is_subcritical() {
            return Err(Error::Supercritical {
                a: self.a,
                eta: self.eta,
            });
        }
        Ok(self.a * self.b / (self.a - self.eta))
    }

    /// `(x⁺, x⁺ + c/ρ)`.
    pub fn value_bounds(&self, x: f64) -> (f64, f64) {
        let xp = x.max(0.0);
        (xp, xp + self.c / self.rho)
    }
}

/// Surplus and intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
}

impl State {
    pub fn new(x: f64, y: f64) -> Self {
        State { x, y }
    }
}

/// Value on the negative half-line: inject up to zero when it pays,
/// otherwise accept ruin.
pub fn injection_region_value(v0: f64, x: f64, delta: f64) -> f64 {
    (v0 + delta * x).max(0.0)
}
