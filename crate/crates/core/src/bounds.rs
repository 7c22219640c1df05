//! Confidence scaling factors β.
//!
//! β is always evaluated on the posterior that it scales: after `t` observations the
//! interval is `μ_t ± β σ_t` with β computed from the same `t` data points.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::GpPosterior;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BoundStrategy {
    FixedHeuristic,
    AbbasiYadkori,
    Fiedler,
}

impl fmt::Display for BoundStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundStrategy::FixedHeuristic => "fixed_heuristic",
            BoundStrategy::AbbasiYadkori => "abbasi_yadkori",
            BoundStrategy::Fiedler => "fiedler",
        })
    }
}

impl FromStr for BoundStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "fixed_heuristic" | "fixed" | "heuristic" => Ok(BoundStrategy::FixedHeuristic),
            "abbasi_yadkori" | "ay" => Ok(BoundStrategy::AbbasiYadkori),
            "fiedler" => Ok(BoundStrategy::Fiedler),
            "chowdhury" | "srinivas" | "chowdhury_gopalan" | "information_gain" => Err(Error::Config(format!(
                "bound strategy `{s}` needs the maximum information gain, which has no computable form here; \
                 use `abbasi_yadkori` or `fiedler` (see README, \"Confidence bounds\")"
            ))),
            _ => Err(Error::Config(format!("unknown bound strategy `{s}`"))),
        }
    }
}

impl TryFrom<String> for BoundStrategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BoundStrategy> for String {
    fn from(s: BoundStrategy) -> String {
        s.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSpec {
    pub strategy: BoundStrategy,
    #[serde(default)]
    pub fixed_value: Option<f64>,
    /// Upper bound B on the RKHS norm of the target.
    #[serde(default)]
    pub rkhs_norm_bound: Option<f64>,
    /// Subgaussian constant R of the noise.
    #[serde(default)]
    pub subgaussian_constant: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
}

impl BoundSpec {
    pub fn fixed(value: f64) -> Self {
        BoundSpec {
            strategy: BoundStrategy::FixedHeuristic,
            fixed_value: Some(value),
            rkhs_norm_bound: None,
            subgaussian_constant: None,
            delta: None,
        }
    }

    pub fn abbasi_yadkori(b: f64, r: f64, delta: f64) -> Self {
        Self::rigorous(BoundStrategy::AbbasiYadkori, b, r, delta)
    }

    pub fn fiedler(b: f64, r: f64, delta: f64) -> Self {
        Self::rigorous(BoundStrategy::Fiedler, b, r, delta)
    }

    fn rigorous(strategy: BoundStrategy, b: f64, r: f64, delta: f64) -> Self {
        BoundSpec {
            strategy,
            fixed_value: None,
            rkhs_norm_bound: Some(b),
            subgaussian_constant: Some(r),
            delta: Some(delta),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: Option<f64>| match v {
            Some(v) if v > 0.0 && v.is_finite() => Ok(v),
            Some(v) => Err(Error::Config(format!("{name} must be positive, got {v}"))),
            None => Err(Error::Config(format!("{} bound needs `{name}`", self.strategy))),
        };
        match self.strategy {
            BoundStrategy::FixedHeuristic => {
                positive("fixed_value", self.fixed_value)?;
            }
            BoundStrategy::AbbasiYadkori | BoundStrategy::Fiedler => {
                positive("rkhs_norm_bound", self.rkhs_norm_bound)?;
                positive("subgaussian_constant", self.subgaussian_constant)?;
                let d = positive("delta", self.delta)?;
                if d >= 1.0 {
                    return Err(Error::Config(format!("delta must lie in (0, 1), got {d}")));
                }
            }
        }
        Ok(())
    }

    /// β for the interval `μ_t ± β σ_t` built from `posterior`.
    pub fn beta(&self, posterior: &GpPosterior) -> Result<f64> {
        self.validate()?;
        if self.strategy == BoundStrategy::FixedHeuristic {
            return Ok(self.fixed_value.unwrap_or_default());
        }
        let b = self.rkhs_norm_bound.unwrap_or_default();
        let r = self.subgaussian_constant.unwrap_or_default();
        let delta = self.delta.unwrap_or_default();
        let lambda = posterior.config().noise_variance;
        let log_det = posterior.log_det_scaled();
        let radicand = match self.strategy {
            // 2 ln(det(I + K/λ)^{1/2} / δ)
            BoundStrategy::AbbasiYadkori => log_det + 2.0 * (1.0 / delta).ln(),
            // ln det(λ̄/λ K + λ̄ I) − 2 ln δ with λ̄ = max(1, λ)
            BoundStrategy::Fiedler => {
                let lambda_bar = lambda.max(1.0);
                log_det + posterior.len() as f64 * lambda_bar.ln() - 2.0 * delta.ln()
            }
            BoundStrategy::FixedHeuristic => unreachable!(),
        };
        Ok(b + r / lambda.sqrt() * radicand.max(0.0).sqrt())
    }
}
