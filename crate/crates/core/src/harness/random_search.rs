//! Safety-constrained random search: uniform draws from the current certified-safe region.

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels::Domain;
use crate::los_gp_ucb::SafeRegion;

#[derive(Clone, Debug)]
pub struct RandomSearch {
    region: SafeRegion,
    threshold: f64,
    lipschitz: f64,
    noise_margin: f64,
    best: Option<(Vec<f64>, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandomStep {
    pub x: Vec<f64>,
    pub y: f64,
    /// Balls with positive radius before the query.
    pub safe_set_size: usize,
}

impl RandomSearch {
    pub fn new(domain: Domain, initial: Vec<f64>, threshold: f64, lipschitz: f64, noise_margin: f64) -> Result<Self> {
        if !(lipschitz > 0.0 && lipschitz.is_finite()) {
            return Err(Error::Config(format!("Lipschitz bound must be positive, got {lipschitz}")));
        }
        Ok(RandomSearch {
            region: SafeRegion::new(domain, initial)?,
            threshold,
            lipschitz,
            noise_margin,
            best: None,
        })
    }

    pub fn region(&self) -> &SafeRegion {
        &self.region
    }

    pub fn step<F, R>(&mut self, oracle: F, rng: &mut R) -> Result<RandomStep>
    where
        F: FnOnce(&[f64]) -> Result<f64>,
        R: Rng + ?Sized,
    {
        let x = self.region.sample_uniform(rng);
        if !self.region.contains(&x) {
            return Err(Error::Numerical("random draw left the safe region".into()));
        }
        let safe_set_size = self.region.positive_balls();
        let y = oracle(&x)?;
        if !y.is_finite() {
            return Err(Error::Oracle(format!("non-finite observation {y}")));
        }
        self.region
            .add_observation(x.clone(), y, self.lipschitz, self.noise_margin, self.threshold)?;
        if self.best.as_ref().is_none_or(|(_, b)| y > *b) {
            self.best = Some((x.clone(), y));
        }
        Ok(RandomStep { x, y, safe_set_size })
    }

    /// Input with the best observed value so far.
    pub fn best_observed(&self) -> Option<&[f64]> {
        self.best.as_ref().map(|(x, _)| x.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(seed: u64, f: impl Fn(&[f64]) -> f64) -> Vec<Vec<f64>> {
        let mut rs = RandomSearch::new(Domain::interval(-2.0, 2.0).unwrap(), vec![0.0], 0.0, 2.0, 0.02).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..20).map(|_| rs.step(|x| Ok(f(x)), &mut rng).unwrap().x).collect()
    }

    #[test]
    fn singleton_region_repeats_its_point() {
        // the observation never clears h + E, so no ball ever gets a positive radius
        assert!(run(0, |_| 0.01).iter().all(|x| x == &vec![0.0]));
    }

    #[test]
    fn deterministic_and_safe() {
        let f = |x: &[f64]| 1.0 - x[0].abs();
        let a = run(3, f);
        assert_eq!(a, run(3, f));
        assert!(a.iter().all(|x| f(x) >= 0.0));
        assert!(a.iter().any(|x| x[0] != 0.0));
    }
}
