use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hjb::grid::{Grid, GridSpec};
use crate::hjb::howard::{howard_solve, Solution, SolveOptions};
use crate::model::{ClaimDist, ModelParams};

/// Parameters that can be varied one at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    A,
    Eta,
    C,
    Beta,
    Rho,
    Delta,
}

impl SweepParam {
    pub fn apply(self, base: &ModelParams, value: f64) -> ModelParams {
        let mut p = *base;
        match self {
            SweepParam::A => p.a = value,
            SweepParam::Eta => p.eta = value,
            SweepParam::C => p.c = value,
            SweepParam::Beta => p.claim = ClaimDist::Exponential { beta: value },
            SweepParam::Rho => p.rho = value,
            SweepParam::Delta => p.delta = value,
        }
        p
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "a" => SweepParam::A,
            "eta" => SweepParam::Eta,
            "c" => SweepParam::C,
            "beta" => SweepParam::Beta,
            "rho" => SweepParam::Rho,
            "delta" => SweepParam::Delta,
            other => {
                return Err(Error::Config(format!(
                    "unknown sweep parameter `{other}` (expected a, eta, c, beta, rho or delta)"
                )))
            }
        })
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SweepParam::A => "a",
            SweepParam::Eta => "eta",
            SweepParam::C => "c",
            SweepParam::Beta => "beta",
            SweepParam::Rho => "rho",
            SweepParam::Delta => "delta",
        };
        f.write_str(s)
    }
}

/// One Howard solve per value, run in parallel; results keep the input order.
pub fn sensitivity_sweep(
    base: &ModelParams,
    spec: &GridSpec,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<Solution>> {
    values
        .par_iter()
        .map(|&val| {
            let p = param.apply(base, val);
            p.validate()?;
            let g = Grid::build(spec, &p)?;
            howard_solve(&g, &p, &SolveOptions::for_params(&p))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_apply() {
        let base = ModelParams::baseline();
        assert_eq!("eta".parse::<SweepParam>().unwrap(), SweepParam::Eta);
        assert!("gamma".parse::<SweepParam>().is_err());
        assert_eq!(SweepParam::Rho.apply(&base, 0.2).rho, 0.2);
        assert_eq!(
            SweepParam::Beta.apply(&base, 4.0).claim,
            ClaimDist::Exponential { beta: 4.0 }
        );
        assert_eq!(SweepParam::Delta.to_string(), "delta");
    }

    #[test]
    fn empty_sweep() {
        let out = sensitivity_sweep(&ModelParams::baseline(), &GridSpec::baseline(), SweepParam::A, &[]).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn invalid_value_propagates() {
        let spec = GridSpec {
            m: 10,
            n_eta: 2,
            y_max: 4.0,
            ..GridSpec::baseline()
        };
        let err = sensitivity_sweep(&ModelParams::baseline(), &spec, SweepParam::Delta, &[0.5]);
        assert!(err.is_err());
    }
}
