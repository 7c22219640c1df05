//! How often does a fixed β leave the true function outside `μ ± βσ`?
//!
//! For each sampled SE function, datasets of noisy evaluations at uniform inputs are
//! fitted with the matching GP, and a dataset counts as a violation if the band misses
//! the target at any point of a check grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{GpConfig, GpPosterior};
use crate::harness::campaign::derive_seed;
use crate::harness::noise::NoiseSpec;
use crate::kernels::{linspace, Domain, Kernel};
use crate::rkhs::sample_se_onb;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundCheckConfig {
    pub seed: u64,
    pub functions: usize,
    pub datasets: usize,
    pub points: usize,
    pub input_range: [f64; 2],
    pub check_range: [f64; 2],
    pub check_points: usize,
    pub length_scale: f64,
    pub terms: usize,
    pub norm: f64,
    pub noise: NoiseSpec,
    pub nominal_noise_variance: f64,
    pub beta: f64,
}

impl Default for BoundCheckConfig {
    fn default() -> Self {
        BoundCheckConfig {
            seed: 0,
            functions: 20,
            datasets: 200,
            points: 100,
            input_range: [0.0, 1.0],
            check_range: [-2.0, 2.0],
            check_points: 500,
            length_scale: 0.2 / 2f64.sqrt(),
            terms: 40,
            norm: 10.0,
            noise: NoiseSpec::normal(0.01),
            nominal_noise_variance: 0.01,
            beta: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckResult {
    /// Violating datasets per function.
    pub violations: Vec<usize>,
    pub datasets: usize,
}

impl BoundCheckResult {
    pub fn mean_violations(&self) -> f64 {
        self.violations.iter().sum::<usize>() as f64 / self.violations.len().max(1) as f64
    }

    /// Sample SD of the per-function violation counts.
    pub fn sd_violations(&self) -> f64 {
        let n = self.violations.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean_violations();
        let ss: f64 = self.violations.iter().map(|&v| (v as f64 - m).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    }

    pub fn violation_fraction(&self) -> f64 {
        let total = self.violations.len() * self.datasets;
        if total == 0 {
            0.0
        } else {
            self.violations.iter().sum::<usize>() as f64 / total as f64
        }
    }
}

pub fn run_bound_check(cfg: &BoundCheckConfig) -> Result<BoundCheckResult> {
    cfg.noise.validate()?;
    if !(cfg.beta > 0.0) || cfg.points == 0 || cfg.check_points < 2 {
        return Err(Error::Config("beta, points and check_points must be positive".into()));
    }
    let domain = Domain::interval(cfg.check_range[0], cfg.check_range[1])?;
    let inputs = Domain::interval(cfg.input_range[0], cfg.input_range[1])?;
    let kernel = Kernel::squared_exponential(cfg.length_scale, 1.0)?;
    let gp = GpConfig::new(kernel, cfg.nominal_noise_variance)?;
    let grid: Vec<Vec<f64>> = linspace(cfg.check_range[0], cfg.check_range[1], cfg.check_points)
        .into_iter()
        .map(|x| vec![x])
        .collect();
    let violations = (0..cfg.functions)
        .into_par_iter()
        .map(|fid| -> Result<usize> {
            let f = sample_se_onb(cfg.length_scale, &domain, cfg.terms, cfg.norm, derive_seed(&[cfg.seed, 1, fid as u64]))?;
            let truth: Vec<f64> = grid.iter().map(|x| f.evaluate(x)).collect();
            let mut count = 0;
            for d in 0..cfg.datasets {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, 2, fid as u64, d as u64]));
                let xs: Vec<Vec<f64>> = (0..cfg.points)
                    .map(|_| vec![rng.random_range(inputs.lower()[0]..inputs.upper()[0])])
                    .collect();
                let ys: Vec<f64> = xs.iter().map(|x| f.evaluate(x) + cfg.noise.sample(&mut rng)).collect();
                let post = GpPosterior::fit(gp, &xs, &ys)?;
                let (means, vars) = post.predict_batch(&grid)?;
                let violated = truth
                    .iter()
                    .zip(means.iter().zip(&vars))
                    .any(|(t, (m, v))| (t - m).abs() > cfg.beta * v.sqrt());
                count += violated as usize;
            }
            Ok(count)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundCheckResult {
        violations,
        datasets: cfg.datasets,
    })
}
