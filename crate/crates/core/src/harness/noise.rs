use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Uniform on `[−B_ε, B_ε]`.
    UniformBounded,
    /// Noise-free observations.
    TruncatedNone,
    /// Gaussian with the given variance.
    Normal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// `B_ε` for uniform noise, the variance for normal noise.
    pub magnitude: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::uniform(0.01)
    }
}

impl NoiseSpec {
    pub fn uniform(bound: f64) -> Self {
        NoiseSpec {
            kind: NoiseKind::UniformBounded,
            magnitude: bound,
        }
    }

    pub fn normal(variance: f64) -> Self {
        NoiseSpec {
            kind: NoiseKind::Normal,
            magnitude: variance,
        }
    }

    pub fn none() -> Self {
        NoiseSpec {
            kind: NoiseKind::TruncatedNone,
            magnitude: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            NoiseKind::TruncatedNone => self.magnitude >= 0.0,
            _ => self.magnitude > 0.0 && self.magnitude.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid noise magnitude {}", self.magnitude)))
        }
    }

    /// Subgaussian constant: `B_ε` for uniform noise, the standard deviation for normal noise.
    pub fn subgaussian_constant(&self) -> f64 {
        match self.kind {
            NoiseKind::UniformBounded => self.magnitude,
            NoiseKind::Normal => self.magnitude.sqrt(),
            NoiseKind::TruncatedNone => 0.0,
        }
    }

    /// Almost-sure bound on `|ε|`, if any.
    pub fn bound(&self) -> Option<f64> {
        match self.kind {
            NoiseKind::UniformBounded => Some(self.magnitude),
            NoiseKind::TruncatedNone => Some(0.0),
            NoiseKind::Normal => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            NoiseKind::UniformBounded => rng.random_range(-self.magnitude..=self.magnitude),
            NoiseKind::TruncatedNone => 0.0,
            NoiseKind::Normal => Normal::new(0.0, self.magnitude.sqrt())
                .expect("validated variance")
                .sample(rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_noise_is_bounded() {
        let spec = NoiseSpec::uniform(0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10_000 {
            assert!(spec.sample(&mut rng).abs() <= 0.01);
        }
        assert_eq!(spec.subgaussian_constant(), 0.01);
    }

    #[test]
    fn normal_noise_moments() {
        let spec = NoiseSpec::normal(0.04);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..20_000).map(|_| spec.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.01 && (var - 0.04).abs() < 0.003);
        assert_eq!(spec.bound(), None);
    }

    #[test]
    fn none_is_zero_and_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(NoiseSpec::none().sample(&mut rng), 0.0);
        assert!(NoiseSpec::uniform(0.0).validate().is_err());
        let spec: NoiseSpec = toml::from_str("kind = \"normal\"\nmagnitude = 0.01").unwrap();
        assert_eq!(spec, NoiseSpec::normal(0.01));
    }
}
