//! Turning a target function into a problem instance: Lipschitz bound, threshold, start point.

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::harness::benchmarks::Benchmark;
use crate::kernels::{linspace, Domain};
use crate::rkhs::RkhsFunction;

pub const LIPSCHITZ_SAFETY_FACTOR: f64 = 1.1;
pub const THRESHOLD_SD_FACTOR: f64 = 0.2;
pub const FINE_GRID_POINTS: usize = 2000;
/// Safety threshold for the Gaussian benchmark, below its 0.4 starting level.
pub const GAUSSIAN10_THRESHOLD: f64 = 0.2;
pub const GAUSSIAN10_START_LEVEL: f64 = 0.4;

/// `1.1 ×` the largest slope between neighbouring points of a sorted 1-d grid.
pub fn lipschitz_from_samples(xs: &[f64], values: &[f64]) -> f64 {
    let slope = xs
        .windows(2)
        .zip(values.windows(2))
        .map(|(x, v)| ((v[1] - v[0]) / (x[1] - x[0])).abs())
        .fold(0.0, f64::max);
    LIPSCHITZ_SAFETY_FACTOR * slope
}

/// `1.1 ×` the largest finite-difference slope (1-d) or gradient norm (multi-d) on a grid
/// with `grid_size` points per dimension.
pub fn estimate_lipschitz<F: Fn(&[f64]) -> f64>(f: F, domain: &Domain, grid_size: usize) -> f64 {
    if domain.dimension() == 1 {
        let xs = linspace(domain.lower()[0], domain.upper()[0], grid_size);
        let values: Vec<f64> = xs.iter().map(|x| f(&[*x])).collect();
        return lipschitz_from_samples(&xs, &values);
    }
    let h = 1e-6 * domain.diameter();
    let mut best: f64 = 0.0;
    for x in domain.grid(grid_size) {
        let mut probe = x.clone();
        let mut norm2 = 0.0;
        for i in 0..x.len() {
            let up = (x[i] + h).min(domain.upper()[i]);
            let down = (x[i] - h).max(domain.lower()[i]);
            probe[i] = up;
            let fu = f(&probe);
            probe[i] = down;
            let fd = f(&probe);
            probe[i] = x[i];
            norm2 += ((fu - fd) / (up - down)).powi(2);
        }
        best = best.max(norm2.sqrt());
    }
    LIPSCHITZ_SAFETY_FACTOR * best
}

/// `mean − 0.2·SD` of the sampled values, SD with the population convention.
pub fn compute_threshold(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    mean - THRESHOLD_SD_FACTOR * var.sqrt()
}

/// Uniform pick from the widest run of grid indices around the (first) argmax with `f ≥ h + E`.
pub fn pick_initial_index<R: Rng + ?Sized>(values: &[f64], h: f64, noise_margin: f64, rng: &mut R) -> Result<usize> {
    let level = h + noise_margin;
    let (argmax, max) = values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
    if !(max >= level) {
        return Err(Error::InstanceRejected(format!(
            "maximum {max} lies below the initial level h + E = {level}"
        )));
    }
    let mut lo = argmax;
    while lo > 0 && values[lo - 1] >= level {
        lo -= 1;
    }
    let mut hi = argmax;
    while hi + 1 < values.len() && values[hi + 1] >= level {
        hi += 1;
    }
    Ok(rng.random_range(lo..=hi))
}

/// `(f(x_rec) − h) / (f* − h)`, not clamped.
pub fn normalized_metric(f_recommended: f64, f_star: f64, h: f64) -> f64 {
    (f_recommended - h) / (f_star - h)
}

/// A 1-d RKHS target prepared for the grid algorithms and LoS-GP-UCB.
#[derive(Clone, Debug)]
pub struct RkhsInstance {
    pub target: RkhsFunction,
    pub domain: Domain,
    pub grid: Vec<Vec<f64>>,
    /// True target values on `grid`.
    pub values: Vec<f64>,
    pub threshold: f64,
    pub lipschitz: f64,
    pub noise_margin: f64,
    pub f_star: f64,
    pub initial_index: usize,
}

impl RkhsInstance {
    pub fn prepare<R: Rng + ?Sized>(
        target: RkhsFunction,
        domain: Domain,
        grid_points: usize,
        noise_margin: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if domain.dimension() != 1 {
            return Err(Error::Config("RKHS instances are one-dimensional".into()));
        }
        if grid_points < 2 {
            return Err(Error::Config("grid needs at least two points".into()));
        }
        let (a, b) = (domain.lower()[0], domain.upper()[0]);
        let fine = linspace(a, b, FINE_GRID_POINTS);
        let fine_values: Vec<f64> = fine.iter().map(|x| target.evaluate(&[*x])).collect();
        let lipschitz = lipschitz_from_samples(&fine, &fine_values);
        if !(lipschitz > 0.0) {
            return Err(Error::InstanceRejected("target is constant; Lipschitz bound is zero".into()));
        }
        let threshold = compute_threshold(&fine_values);
        let grid: Vec<Vec<f64>> = linspace(a, b, grid_points).into_iter().map(|x| vec![x]).collect();
        let values: Vec<f64> = grid.iter().map(|x| target.evaluate(x)).collect();
        let f_star = fine_values.iter().chain(&values).cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(f_star > threshold) {
            return Err(Error::InstanceRejected("maximum equals the threshold".into()));
        }
        let initial_index = pick_initial_index(&values, threshold, noise_margin, rng)?;
        Ok(RkhsInstance {
            target,
            domain,
            grid,
            values,
            threshold,
            lipschitz,
            noise_margin,
            f_star,
            initial_index,
        })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.target.evaluate(x)
    }

    pub fn metric_at(&self, x: &[f64]) -> f64 {
        normalized_metric(self.eval(x), self.f_star, self.threshold)
    }
}

/// Lipschitz bound and threshold of a benchmark, computed once per process.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchmarkSetup {
    pub lipschitz: f64,
    pub threshold: f64,
}

pub fn benchmark_setup(bench: Benchmark) -> BenchmarkSetup {
    static CACHE: [OnceLock<BenchmarkSetup>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    let slot = match bench {
        Benchmark::Camelback2 => 0,
        Benchmark::Hartmann6 => 1,
        Benchmark::Gaussian10 => 2,
    };
    *CACHE[slot].get_or_init(|| compute_benchmark_setup(bench))
}

fn compute_benchmark_setup(bench: Benchmark) -> BenchmarkSetup {
    let domain = bench.domain();
    let f = |x: &[f64]| bench.eval_unchecked(x);
    match bench {
        Benchmark::Gaussian10 => {
            // Radially symmetric: the steepest slope is that of r ↦ exp(−4r²).
            let r_max = domain.diameter() / 2.0;
            let profile = Domain::interval(0.0, r_max).expect("positive radius");
            BenchmarkSetup {
                lipschitz: estimate_lipschitz(|r| (-4.0 * r[0] * r[0]).exp(), &profile, FINE_GRID_POINTS),
                threshold: GAUSSIAN10_THRESHOLD,
            }
        }
        Benchmark::Camelback2 => {
            let values: Vec<f64> = domain.grid(401).iter().map(|x| f(x)).collect();
            BenchmarkSetup {
                lipschitz: estimate_lipschitz(f, &domain, 401),
                threshold: compute_threshold(&values),
            }
        }
        Benchmark::Hartmann6 => {
            let values: Vec<f64> = domain.grid(10).iter().map(|x| f(x)).collect();
            BenchmarkSetup {
                lipschitz: estimate_lipschitz(f, &domain, 10),
                threshold: compute_threshold(&values),
            }
        }
    }
}

/// Random start point: on the 0.4 level set for the Gaussian, else uniform among points with `f ≥ h + E`.
pub fn benchmark_start<R: Rng + ?Sized>(bench: Benchmark, noise_margin: f64, rng: &mut R) -> Result<Vec<f64>> {
    let domain = bench.domain();
    match bench {
        Benchmark::Gaussian10 => {
            let r = ((1.0 / GAUSSIAN10_START_LEVEL).ln() / 4.0).sqrt();
            let dir: Vec<f64> = (0..domain.dimension()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            Ok(dir.iter().map(|v| v * r / norm).collect())
        }
        _ => {
            let level = benchmark_setup(bench).threshold + noise_margin;
            for _ in 0..1_000_000 {
                let x = domain.sample(rng);
                if bench.eval_unchecked(&x) >= level {
                    return Ok(x);
                }
            }
            Err(Error::InstanceRejected(format!("no start point above {level} found for {bench}")))
        }
    }
}
