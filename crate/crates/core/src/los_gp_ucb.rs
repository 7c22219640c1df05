//! GP-UCB restricted to a certified-safe union of balls.
//!
//! Every observation `(x, y)` certifies the closed ball around `x` with radius
//! `max(0, (y − E − h)/L)`. The next query maximizes `μ + βσ` over the union of these
//! balls intersected with the domain box, by projected gradient ascent started from each
//! ball's center and from random points inside it.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::bounds::BoundSpec;
use crate::error::{check_dims, Error, Result};
use crate::gp::{GpConfig, GpPosterior};
use crate::kernels::{distance, Domain};

const PROJECTION_ROUNDS: usize = 20;
const PROJECTION_TOLERANCE: f64 = 1e-10;
const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

#[derive(Clone, Debug, PartialEq)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Clone, Debug)]
pub struct SafeRegion {
    domain: Domain,
    balls: Vec<Ball>,
}

impl SafeRegion {
    /// Region holding only the known-safe starting point (a zero-radius ball).
    pub fn new(domain: Domain, initial: Vec<f64>) -> Result<Self> {
        check_dims(domain.dimension(), initial.len())?;
        if !domain.contains(&initial) {
            return Err(Error::Config("initial safe point lies outside the domain".into()));
        }
        Ok(SafeRegion {
            domain,
            balls: vec![Ball {
                center: initial,
                radius: 0.0,
            }],
        })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn balls(&self) -> &[Ball] {
        &self.balls
    }

    pub fn positive_balls(&self) -> usize {
        self.balls.iter().filter(|b| b.radius > 0.0).count()
    }

    /// Adds the ball certified by observing `y` at `x`.
    pub fn add_observation(&mut self, x: Vec<f64>, y: f64, lipschitz: f64, noise_margin: f64, threshold: f64) -> Result<()> {
        check_dims(self.domain.dimension(), x.len())?;
        if !(lipschitz > 0.0) {
            return Err(Error::InvalidParameter(format!("Lipschitz bound must be positive, got {lipschitz}")));
        }
        if !self.domain.contains(&x) {
            return Err(Error::InvalidParameter("observation lies outside the domain".into()));
        }
        let radius = ((y - noise_margin - threshold) / lipschitz).max(0.0);
        self.balls.push(Ball { center: x, radius });
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.domain.dimension()
            && self.domain.contains(x)
            && self.balls.iter().any(|b| distance(&b.center, x) <= b.radius)
    }

    /// Maps `x` into ball `j` ∩ box by alternating box clipping and radial projection.
    pub fn project(&self, j: usize, x: &[f64]) -> Option<Vec<f64>> {
        let ball = &self.balls[j];
        let mut y = x.to_vec();
        for _ in 0..PROJECTION_ROUNDS {
            let prev = y.clone();
            self.domain.clip(&mut y);
            y = project_to_ball(&ball.center, ball.radius, &y);
            if distance(&prev, &y) < PROJECTION_TOLERANCE {
                break;
            }
        }
        // Clipping towards a center inside the box never increases the distance to it.
        self.domain.clip(&mut y);
        (distance(&ball.center, &y) <= ball.radius && self.domain.contains(&y)).then_some(y)
    }

    /// Uniform draw from ball `j` ∩ box; falls back to the center after repeated rejection.
    fn sample_in_ball<R: Rng + ?Sized>(&self, j: usize, rng: &mut R) -> Vec<f64> {
        let ball = &self.balls[j];
        for _ in 0..1000 {
            let y = sample_ball(&ball.center, ball.radius, rng);
            if self.domain.contains(&y) && distance(&ball.center, &y) <= ball.radius {
                return y;
            }
        }
        ball.center.clone()
    }

    /// Uniform draw from the union of balls ∩ box.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.domain.dimension() as i32;
        let r_max = self.balls.iter().map(|b| b.radius).fold(0.0, f64::max);
        if r_max == 0.0 {
            let j = rng.random_range(0..self.balls.len());
            return self.balls[j].center.clone();
        }
        let weights: Vec<f64> = self.balls.iter().map(|b| (b.radius / r_max).powi(d)).collect();
        let total: f64 = weights.iter().sum();
        for _ in 0..100_000 {
            let mut u = rng.random::<f64>() * total;
            let mut j = weights.len() - 1;
            for (k, w) in weights.iter().enumerate() {
                if u < *w {
                    j = k;
                    break;
                }
                u -= w;
            }
            let ball = &self.balls[j];
            if ball.radius == 0.0 {
                continue;
            }
            let y = sample_ball(&ball.center, ball.radius, rng);
            if !self.domain.contains(&y) || distance(&ball.center, &y) > ball.radius {
                continue;
            }
            let cover = self.balls.iter().filter(|b| distance(&b.center, &y) <= b.radius).count();
            if rng.random::<f64>() * cover as f64 <= 1.0 {
                return y;
            }
        }
        let j = weights
            .iter()
            .enumerate()
            .fold(0, |best, (k, w)| if *w > weights[best] { k } else { best });
        self.balls[j].center.clone()
    }
}

fn sample_ball<R: Rng + ?Sized>(center: &[f64], radius: f64, rng: &mut R) -> Vec<f64> {
    let d = center.len();
    let dir: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = if norm > 0.0 {
        radius * rng.random::<f64>().powf(1.0 / d as f64) / norm
    } else {
        0.0
    };
    center.iter().zip(&dir).map(|(c, v)| c + scale * v).collect()
}

fn project_to_ball(center: &[f64], radius: f64, x: &[f64]) -> Vec<f64> {
    let d = distance(center, x);
    if d <= radius {
        return x.to_vec();
    }
    let mut s = radius / d;
    for _ in 0..64 {
        let y: Vec<f64> = center.iter().zip(x).map(|(c, v)| c + (v - c) * s).collect();
        if distance(center, &y) <= radius {
            return y;
        }
        s *= 1.0 - 1e-12;
    }
    center.to_vec()
}

/// Objective maximized over the safe region.
pub trait Acquisition: Sync {
    fn value(&self, x: &[f64]) -> f64;

    /// Value and exact gradient, when available.
    fn value_and_gradient(&self, _x: &[f64]) -> Option<(f64, Vec<f64>)> {
        None
    }
}

/// `μ(x) + β σ(x)`.
pub struct Ucb<'a> {
    pub posterior: &'a GpPosterior,
    pub beta: f64,
}

impl Acquisition for Ucb<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let (m, v) = self.posterior.predict_unchecked(x);
        m + self.beta * v.sqrt()
    }

    fn value_and_gradient(&self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (m, s, gm, gs) = self.posterior.mean_std_with_grad(x);
        let grad = gm.iter().zip(&gs).map(|(a, b)| a + self.beta * b).collect();
        Some((m + self.beta * s, grad))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientMode {
    /// Central differences, usable with any acquisition.
    FiniteDifference,
    /// The acquisition's own gradient; falls back to differences if it has none.
    Analytic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchConfig {
    pub starts_per_ball: usize,
    pub max_iterations: usize,
    /// Finite-difference step; scaled by the kernel length scale by callers.
    pub fd_step: f64,
    pub gradient: GradientMode,
}

impl SearchConfig {
    pub fn for_length_scale(length_scale: f64) -> Self {
        SearchConfig {
            starts_per_ball: 2,
            max_iterations: 100,
            fd_step: 1e-6 * length_scale,
            gradient: GradientMode::FiniteDifference,
        }
    }

    pub fn with_gradient(mut self, gradient: GradientMode) -> Self {
        self.gradient = gradient;
        self
    }
}

fn value_and_gradient<A: Acquisition + ?Sized>(acq: &A, x: &[f64], cfg: &SearchConfig) -> (f64, Vec<f64>) {
    if cfg.gradient == GradientMode::Analytic {
        if let Some(vg) = acq.value_and_gradient(x) {
            return vg;
        }
    }
    let value = acq.value(x);
    let mut probe = x.to_vec();
    let grad = (0..x.len())
        .map(|i| {
            probe[i] = x[i] + cfg.fd_step;
            let up = acq.value(&probe);
            probe[i] = x[i] - cfg.fd_step;
            let down = acq.value(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * cfg.fd_step)
        })
        .collect();
    (value, grad)
}

/// Projected gradient ascent with Armijo backtracking inside ball `j`.
fn local_ascent<A: Acquisition + ?Sized>(
    region: &SafeRegion,
    j: usize,
    start: Vec<f64>,
    acq: &A,
    cfg: &SearchConfig,
) -> (f64, Vec<f64>) {
    let radius = region.balls[j].radius;
    let mut x = start;
    let (mut fx, mut g) = value_and_gradient(acq, &x, cfg);
    let mut step = f64::NAN;
    for _ in 0..cfg.max_iterations {
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(gnorm > 0.0) || !gnorm.is_finite() {
            break;
        }
        let max_step = 2.0 * radius / gnorm;
        step = if step.is_nan() { max_step } else { (2.0 * step).min(max_step) };
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + step * b).collect();
            if let Some(y) = region.project(j, &trial) {
                let fy = acq.value(&y);
                let ascent: f64 = g.iter().zip(y.iter().zip(&x)).map(|(gi, (yi, xi))| gi * (yi - xi)).sum();
                if fy >= fx + ARMIJO_C * ascent && fy > fx {
                    accepted = Some((y, fy));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((y, fy)) = accepted else { break };
        let moved = distance(&x, &y);
        x = y;
        if moved < PROJECTION_TOLERANCE {
            fx = fy;
            break;
        }
        (fx, g) = value_and_gradient(acq, &x, cfg);
    }
    (fx, x)
}

/// Best point found in the safe region with its acquisition value.
pub fn select_next<A: Acquisition + ?Sized, R: Rng + ?Sized>(
    region: &SafeRegion,
    acq: &A,
    cfg: &SearchConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, f64)> {
    if region.balls.is_empty() {
        return Err(Error::Config("safe region has no balls".into()));
    }
    if cfg.starts_per_ball == 0 {
        return Err(Error::Config("starts_per_ball must be ≥ 1".into()));
    }
    // Random starts are drawn up front so that parallel execution stays deterministic.
    let starts: Vec<Vec<Vec<f64>>> = (0..region.balls.len())
        .map(|j| {
            let ball = &region.balls[j];
            let mut s = vec![ball.center.clone()];
            if ball.radius > 0.0 {
                s.extend((1..cfg.starts_per_ball).map(|_| region.sample_in_ball(j, rng)));
            }
            s
        })
        .collect();
    let results: Vec<(f64, Vec<f64>)> = starts
        .into_par_iter()
        .enumerate()
        .map(|(j, starts)| {
            let mut best: Option<(f64, Vec<f64>)> = None;
            for start in starts {
                let candidate = if region.balls[j].radius > 0.0 {
                    local_ascent(region, j, start, acq, cfg)
                } else {
                    (acq.value(&start), start)
                };
                if best.as_ref().is_none_or(|(bv, _)| candidate.0 > *bv) {
                    best = Some(candidate);
                }
            }
            best.expect("every ball has at least its center as a start")
        })
        .collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for r in results {
        if best.as_ref().is_none_or(|(bv, _)| r.0 > *bv) {
            best = Some(r);
        }
    }
    let (value, x) = best.expect("region is nonempty");
    Ok((x, value))
}

#[derive(Clone, Debug, PartialEq)]
pub struct UcbStepRecord {
    pub step: usize,
    pub x: Vec<f64>,
    pub y: f64,
    /// Balls with positive radius before the query.
    pub safe_set_size: usize,
    pub balls: usize,
    pub acquisition: f64,
    pub beta: f64,
}

/// One LoS-GP-UCB run.
#[derive(Clone, Debug)]
pub struct LosGpUcb {
    region: SafeRegion,
    gp_config: GpConfig,
    bound: BoundSpec,
    search: SearchConfig,
    threshold: f64,
    lipschitz: f64,
    noise_margin: f64,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    posterior: GpPosterior,
}

impl LosGpUcb {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        domain: Domain,
        initial: Vec<f64>,
        threshold: f64,
        lipschitz: f64,
        noise_margin: f64,
        gp_config: GpConfig,
        bound: BoundSpec,
        search: SearchConfig,
    ) -> Result<Self> {
        bound.validate()?;
        if !(lipschitz > 0.0 && lipschitz.is_finite()) {
            return Err(Error::Config(format!("Lipschitz bound must be positive, got {lipschitz}")));
        }
        if !(noise_margin >= 0.0) {
            return Err(Error::Config(format!("noise margin must be nonnegative, got {noise_margin}")));
        }
        Ok(LosGpUcb {
            region: SafeRegion::new(domain, initial)?,
            posterior: GpPosterior::prior(gp_config),
            gp_config,
            bound,
            search,
            threshold,
            lipschitz,
            noise_margin,
            inputs: Vec::new(),
            targets: Vec::new(),
        })
    }

    pub fn region(&self) -> &SafeRegion {
        &self.region
    }

    pub fn posterior(&self) -> &GpPosterior {
        &self.posterior
    }

    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn step<F, R>(&mut self, oracle: F, rng: &mut R) -> Result<UcbStepRecord>
    where
        F: FnOnce(&[f64]) -> Result<f64>,
        R: Rng + ?Sized,
    {
        let beta = self.bound.beta(&self.posterior)?;
        let acq = Ucb {
            posterior: &self.posterior,
            beta,
        };
        let (x, acquisition) = select_next(&self.region, &acq, &self.search, rng)?;
        if !self.region.contains(&x) {
            return Err(Error::Numerical("selected point left the safe region".into()));
        }
        let safe_set_size = self.region.positive_balls();
        let balls = self.region.balls().len();
        let y = oracle(&x)?;
        if !y.is_finite() {
            return Err(Error::Oracle(format!("non-finite observation {y}")));
        }
        self.region
            .add_observation(x.clone(), y, self.lipschitz, self.noise_margin, self.threshold)?;
        self.inputs.push(x.clone());
        self.targets.push(y);
        self.posterior = GpPosterior::fit(self.gp_config, &self.inputs, &self.targets)?;
        Ok(UcbStepRecord {
            step: self.inputs.len(),
            x,
            y,
            safe_set_size,
            balls,
            acquisition,
            beta,
        })
    }

    /// Argmax of the posterior mean over the ball centers and the `candidates` inside the region.
    pub fn recommendation(&self, candidates: &[Vec<f64>]) -> Vec<f64> {
        let mut best: Option<(f64, &Vec<f64>)> = None;
        let inside = candidates.iter().filter(|x| self.region.contains(x));
        for x in self.region.balls().iter().map(|b| &b.center).chain(inside) {
            let m = self.posterior.predict_unchecked(x).0;
            if best.is_none_or(|(bm, _)| m > bm) {
                best = Some((m, x));
            }
        }
        best.map(|(_, x)| x.clone()).expect("region always holds a center")
    }
}
