//! SafeOpt and LoSBO on a finite grid.
//!
//! Each step runs, in order:
//!
//! 1. `C_t = C_{t−1} ∩ Q_{t−1}` (Q is the GP interval from the previous step, ℝ at `t = 1`);
//! 2. for `t ≥ 2`, grow the safe set (confidence-bound cones for SafeOpt, the last
//!    observation's Lipschitz cone for LoSBO);
//! 3. expanders `G_t`, maximizers `M_t`, and the widest interval among them;
//! 4. query, refit, and set `Q_t = μ_t ± β σ_t`.
//!
//! Unbounded interval ends are represented by [`HUGE`].

use crate::bounds::BoundSpec;
use crate::error::{Error, Result};
use crate::gp::{GpConfig, GpPosterior};
use crate::kernels::distance;

pub const HUGE: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    SafeOpt,
    Losbo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Running,
    Stuck,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Running => "running",
            Status::Stuck => "stuck",
        }
    }
}

#[derive(Clone, Debug)]
pub struct GridProblem {
    grid: Vec<Vec<f64>>,
    threshold: f64,
    lipschitz: f64,
    noise_margin: f64,
    initial_safe: Vec<usize>,
}

impl GridProblem {
    pub fn new(
        grid: Vec<Vec<f64>>,
        threshold: f64,
        lipschitz: f64,
        noise_margin: f64,
        initial_safe: Vec<usize>,
    ) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::Config("grid is empty".into()));
        }
        let dim = grid[0].len();
        if grid.iter().any(|x| x.len() != dim) {
            return Err(Error::Config("grid points differ in dimension".into()));
        }
        if initial_safe.is_empty() {
            return Err(Error::Config("initial safe set is empty".into()));
        }
        if let Some(i) = initial_safe.iter().find(|&&i| i >= grid.len()) {
            return Err(Error::Config(format!("initial safe index {i} is outside the grid")));
        }
        if !(lipschitz > 0.0 && lipschitz.is_finite()) {
            return Err(Error::Config(format!("Lipschitz bound must be positive, got {lipschitz}")));
        }
        if !(noise_margin >= 0.0 && noise_margin.is_finite()) {
            return Err(Error::Config(format!("noise margin must be nonnegative, got {noise_margin}")));
        }
        if !threshold.is_finite() {
            return Err(Error::Config("safety threshold must be finite".into()));
        }
        Ok(GridProblem {
            grid,
            threshold,
            lipschitz,
            noise_margin,
            initial_safe,
        })
    }

    pub fn grid(&self) -> &[Vec<f64>] {
        &self.grid
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn noise_margin(&self) -> f64 {
        self.noise_margin
    }

    pub fn initial_safe(&self) -> &[usize] {
        &self.initial_safe
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub index: usize,
    pub x: Vec<f64>,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    /// 1-based iteration number.
    pub step: usize,
    pub index: Option<usize>,
    pub y: Option<f64>,
    pub safe_set_size: usize,
    pub expanders: usize,
    pub maximizers: usize,
    /// β used for `Q_t`; `None` when stuck.
    pub beta: Option<f64>,
    pub status: Status,
}

pub type StepOutcome = StepRecord;

/// Per-run SafeOpt/LoSBO state.
#[derive(Clone, Debug)]
pub struct GridSafeBo {
    problem: GridProblem,
    variant: Variant,
    bound: BoundSpec,
    gp_config: GpConfig,
    lower: Vec<f64>,
    upper: Vec<f64>,
    q_lower: Vec<f64>,
    q_upper: Vec<f64>,
    safe: Vec<bool>,
    expanders: Vec<usize>,
    maximizers: Vec<usize>,
    history: Vec<Observation>,
    means: Vec<f64>,
    status: Status,
    steps: usize,
    inconsistencies: usize,
    variance_clamps: usize,
}

impl GridSafeBo {
    pub fn new(problem: GridProblem, variant: Variant, bound: BoundSpec, gp_config: GpConfig) -> Result<Self> {
        bound.validate()?;
        let n = problem.grid.len();
        let mut lower = vec![-HUGE; n];
        let mut safe = vec![false; n];
        for &i in &problem.initial_safe {
            lower[i] = problem.threshold;
            safe[i] = true;
        }
        Ok(GridSafeBo {
            variant,
            bound,
            gp_config,
            lower,
            upper: vec![HUGE; n],
            q_lower: vec![-HUGE; n],
            q_upper: vec![HUGE; n],
            safe,
            expanders: Vec::new(),
            maximizers: Vec::new(),
            history: Vec::new(),
            means: vec![gp_config.prior_mean; n],
            status: Status::Running,
            steps: 0,
            inconsistencies: 0,
            variance_clamps: 0,
            problem,
        })
    }

    pub fn problem(&self) -> &GridProblem {
        &self.problem
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// The interval `Q` that the next step will intersect with.
    pub fn pending_interval(&self) -> (&[f64], &[f64]) {
        (&self.q_lower, &self.q_upper)
    }

    pub fn safe_mask(&self) -> &[bool] {
        &self.safe
    }

    pub fn safe_indices(&self) -> Vec<usize> {
        mask_to_indices(&self.safe)
    }

    pub fn safe_set_size(&self) -> usize {
        self.safe.iter().filter(|s| **s).count()
    }

    pub fn expanders(&self) -> &[usize] {
        &self.expanders
    }

    pub fn maximizers(&self) -> &[usize] {
        &self.maximizers
    }

    pub fn history(&self) -> &[Observation] {
        &self.history
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Steps where `C_{t−1} ∩ Q_{t−1}` was empty at some grid point; the old interval was kept there.
    pub fn inconsistencies(&self) -> usize {
        self.inconsistencies
    }

    pub fn variance_clamps(&self) -> usize {
        self.variance_clamps
    }

    /// Posterior mean on the grid from the latest fit.
    pub fn posterior_means(&self) -> &[f64] {
        &self.means
    }

    /// Argmax of the posterior mean over the safe set, lowest index on ties.
    pub fn recommendation(&self) -> usize {
        let mut best = None;
        for (i, &m) in self.means.iter().enumerate() {
            if self.safe[i] && best.is_none_or(|(_, bm)| m > bm) {
                best = Some((i, m));
            }
        }
        best.map(|(i, _)| i).unwrap_or(self.problem.initial_safe[0])
    }

    /// Runs one iteration, querying `oracle` at the chosen grid point unless the run is stuck.
    pub fn step<F>(&mut self, oracle: F) -> Result<StepRecord>
    where
        F: FnOnce(&[f64]) -> Result<f64>,
    {
        if self.status == Status::Stuck {
            return Err(Error::InvalidParameter("step called on a stuck run".into()));
        }
        self.steps += 1;
        let t = self.steps;

        let mut inconsistent = false;
        for i in 0..self.lower.len() {
            let lo = self.lower[i].max(self.q_lower[i]);
            let hi = self.upper[i].min(self.q_upper[i]);
            if lo <= hi {
                self.lower[i] = lo;
                self.upper[i] = hi;
            } else {
                inconsistent = true;
            }
        }
        if inconsistent {
            self.inconsistencies += 1;
        }

        let p = &self.problem;
        if t > 1 {
            self.safe = match self.variant {
                Variant::SafeOpt => safeopt_safe_set(&p.grid, &self.safe, &self.lower, p.threshold, p.lipschitz),
                Variant::Losbo => {
                    let last = self.history.last().expect("t > 1 implies one observation");
                    losbo_safe_set(&p.grid, &self.safe, last.index, last.y, p.noise_margin, p.threshold, p.lipschitz)
                }
            };
        }
        self.expanders = expanders(&p.grid, &self.safe, &self.upper, p.threshold, p.lipschitz);
        self.maximizers = maximizers(&self.safe, &self.lower, &self.upper);
        let safe_set_size = self.safe_set_size();

        let Some(index) = select_candidate(&self.expanders, &self.maximizers, &self.lower, &self.upper) else {
            self.status = Status::Stuck;
            return Ok(StepRecord {
                step: t,
                index: None,
                y: None,
                safe_set_size,
                expanders: 0,
                maximizers: 0,
                beta: None,
                status: Status::Stuck,
            });
        };

        let x = self.problem.grid[index].clone();
        let y = oracle(&x)?;
        if !y.is_finite() {
            return Err(Error::Oracle(format!("non-finite observation {y} at step {t}")));
        }
        self.history.push(Observation { index, x, y });

        let xs: Vec<Vec<f64>> = self.history.iter().map(|o| o.x.clone()).collect();
        let ys: Vec<f64> = self.history.iter().map(|o| o.y).collect();
        let gp = GpPosterior::fit(self.gp_config, &xs, &ys)?;
        let beta = self.bound.beta(&gp)?;
        let (means, vars) = gp.predict_batch(&self.problem.grid)?;
        self.variance_clamps += gp.negative_variance_clamps();
        for i in 0..means.len() {
            let width = beta * vars[i].sqrt();
            self.q_lower[i] = means[i] - width;
            self.q_upper[i] = means[i] + width;
        }
        self.means = means;

        Ok(StepRecord {
            step: t,
            index: Some(index),
            y: Some(y),
            safe_set_size,
            expanders: self.expanders.len(),
            maximizers: self.maximizers.len(),
            beta: Some(beta),
            status: Status::Running,
        })
    }
}

fn mask_to_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, s)| **s).map(|(i, _)| i).collect()
}

/// `S ∪ {x' : ∃ x ∈ S, ℓ(x) − L d(x, x') ≥ h}`.
pub fn safeopt_safe_set(grid: &[Vec<f64>], safe: &[bool], lower: &[f64], h: f64, lipschitz: f64) -> Vec<bool> {
    let sources: Vec<usize> = mask_to_indices(safe).into_iter().filter(|&i| lower[i] >= h).collect();
    let mut next = safe.to_vec();
    for (j, x) in grid.iter().enumerate() {
        if next[j] {
            continue;
        }
        next[j] = sources
            .iter()
            .any(|&i| lower[i] - lipschitz * distance(&grid[i], x) >= h);
    }
    next
}

/// `S ∪ {x : y − E − L d(x_last, x) ≥ h}`.
pub fn losbo_safe_set(
    grid: &[Vec<f64>],
    safe: &[bool],
    last_index: usize,
    last_y: f64,
    noise_margin: f64,
    h: f64,
    lipschitz: f64,
) -> Vec<bool> {
    let center = &grid[last_index];
    safe.iter()
        .zip(grid)
        .map(|(&s, x)| s || last_y - noise_margin - lipschitz * distance(center, x) >= h)
        .collect()
}

/// Safe points whose optimistic cone reaches some point outside the safe set.
pub fn expanders(grid: &[Vec<f64>], safe: &[bool], upper: &[f64], h: f64, lipschitz: f64) -> Vec<usize> {
    let outside: Vec<&Vec<f64>> = grid.iter().zip(safe).filter(|(_, s)| !**s).map(|(x, _)| x).collect();
    if outside.is_empty() {
        return Vec::new();
    }
    mask_to_indices(safe)
        .into_iter()
        .filter(|&i| {
            if upper[i] < h {
                return false;
            }
            let d_min = outside
                .iter()
                .map(|x| distance(&grid[i], x))
                .fold(f64::INFINITY, f64::min);
            upper[i] - lipschitz * d_min >= h
        })
        .collect()
}

/// Safe points whose upper bound reaches the best safe lower bound.
pub fn maximizers(safe: &[bool], lower: &[f64], upper: &[f64]) -> Vec<usize> {
    let indices = mask_to_indices(safe);
    let best = indices.iter().map(|&i| lower[i]).fold(f64::NEG_INFINITY, f64::max);
    indices.into_iter().filter(|&i| upper[i] >= best).collect()
}

/// Widest interval over `G ∪ M`, lowest index on ties; `None` if both are empty.
pub fn select_candidate(expanders: &[usize], maximizers: &[usize], lower: &[f64], upper: &[f64]) -> Option<usize> {
    let mut candidates: Vec<usize> = expanders.iter().chain(maximizers).copied().collect();
    candidates.sort_unstable();
    candidates.dedup();
    let mut best: Option<(usize, f64)> = None;
    for i in candidates {
        let w = upper[i] - lower[i];
        if best.is_none_or(|(_, bw)| w > bw) {
            best = Some((i, w));
        }
    }
    best.map(|(i, _)| i)
}
