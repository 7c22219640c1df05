//! Literal enumerations of the SafeOpt/LoSBO set definitions, used as oracles.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safebo_core::bounds::BoundSpec;
use safebo_core::gp::GpConfig;
use safebo_core::grid::{GridProblem, GridSafeBo, Variant};
use safebo_core::kernels::{Domain, Kernel};
use safebo_core::rkhs::sample_pre_rkhs;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, PartialEq)]
pub struct OracleStep {
    pub safe: Vec<usize>,
    pub expanders: Vec<usize>,
    pub maximizers: Vec<usize>,
    pub chosen: Option<usize>,
}

/// One step of the set equations, by enumeration over all pairs.
pub fn brute_force_step(state: &GridSafeBo) -> OracleStep {
    let p = state.problem();
    let grid = p.grid();
    let n = grid.len();
    let (h, l, e) = (p.threshold(), p.lipschitz(), p.noise_margin());
    let (ql, qu) = state.pending_interval();
    let mut lower = state.lower().to_vec();
    let mut upper = state.upper().to_vec();
    for i in 0..n {
        let lo = lower[i].max(ql[i]);
        let hi = upper[i].min(qu[i]);
        if lo <= hi {
            lower[i] = lo;
            upper[i] = hi;
        }
    }
    let prev: Vec<bool> = state.safe_mask().to_vec();
    let t = state.steps() + 1;
    let safe: Vec<bool> = if t == 1 {
        prev.clone()
    } else {
        (0..n)
            .map(|j| {
                prev[j]
                    || match state.variant() {
                        Variant::SafeOpt => {
                            (0..n).any(|i| prev[i] && lower[i] - l * dist(&grid[i], &grid[j]) >= h)
                        }
                        Variant::Losbo => {
                            let last = state.history().last().unwrap();
                            last.y - e - l * dist(&last.x, &grid[j]) >= h
                        }
                    }
            })
            .collect()
    };
    let expanders: Vec<usize> = (0..n)
        .filter(|&s| safe[s] && (0..n).any(|x| !safe[x] && upper[s] - l * dist(&grid[s], &grid[x]) >= h))
        .collect();
    let best_lower = (0..n).filter(|&i| safe[i]).map(|i| lower[i]).fold(f64::NEG_INFINITY, f64::max);
    let maximizers: Vec<usize> = (0..n).filter(|&i| safe[i] && upper[i] >= best_lower).collect();
    let mut chosen: Option<usize> = None;
    for i in 0..n {
        if expanders.contains(&i) || maximizers.contains(&i) {
            let w = upper[i] - lower[i];
            if chosen.is_none_or(|c| w > upper[c] - lower[c]) {
                chosen = Some(i);
            }
        }
    }
    OracleStep {
        safe: (0..n).filter(|&i| safe[i]).collect(),
        expanders,
        maximizers,
        chosen,
    }
}

/// Compares one step of a random 15-point instance against the enumeration.
/// Returns a description of the first mismatch.
pub fn check_random_instance(seed: u64, variant: Variant) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 1 + (seed as usize % 2);
    let domain = Domain::cube(dim, -2.0, 2.0).unwrap();
    let kernel = Kernel::squared_exponential(rng.random_range(0.3..1.0), 1.0).unwrap();
    let f = sample_pre_rkhs(kernel, &domain, 8, rng.random_range(1.0..4.0), seed).unwrap();
    let grid: Vec<Vec<f64>> = (0..15).map(|_| domain.sample(&mut rng)).collect();
    let values: Vec<f64> = grid.iter().map(|x| f.evaluate(x)).collect();
    let start = (0..15).fold(0, |b, i| if values[i] > values[b] { i } else { b });
    let threshold = values[start] - rng.random_range(0.3..1.5);
    let lipschitz = rng.random_range(0.5..3.0);
    let problem = GridProblem::new(grid, threshold, lipschitz, 0.02, vec![start]).unwrap();
    let bound = if rng.random::<bool>() {
        BoundSpec::fixed(rng.random_range(0.5..3.0))
    } else {
        BoundSpec::abbasi_yadkori(rng.random_range(0.5..3.0), 0.01, 0.1)
    };
    let gp = GpConfig::new(kernel, 0.01).unwrap();
    let mut state = GridSafeBo::new(problem, variant, bound, gp).unwrap();
    let warmup = rng.random_range(0..6);
    let mut noise = || rng.random_range(-0.01..=0.01);
    for _ in 0..warmup {
        let eps = noise();
        state.step(|x| Ok(f.evaluate(x) + eps)).map_err(|e| e.to_string())?;
    }
    let expected = brute_force_step(&state);
    let eps = noise();
    let record = state.step(|x| Ok(f.evaluate(x) + eps)).map_err(|e| e.to_string())?;
    let actual = OracleStep {
        safe: state.safe_indices(),
        expanders: state.expanders().to_vec(),
        maximizers: state.maximizers().to_vec(),
        chosen: record.index,
    };
    if actual == expected {
        Ok(())
    } else {
        Err(format!("seed {seed} {variant:?} after {warmup} steps: {actual:?} vs {expected:?}"))
    }
}
