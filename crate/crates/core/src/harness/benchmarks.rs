//! Benchmark functions rescaled to take values in `[0, 1]` on their boxes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Domain;

// Six-hump camelback on [−2,2]×[−1,1]: global minimum −1.0316284534898774 (L-BFGS-B from
// 200 starts), maximum 17.2/3 at (±2, ±1) with matching signs.
const CAMELBACK_MIN: f64 = -1.031_628_453_489_877_4;
const CAMELBACK_MAX: f64 = 17.2 / 3.0;

// Negated Hartmann-6 on [0,1]⁶: maximum 3.3223680114155143 (the published optimum),
// minimum 2.8124505439686514e-8 at a corner (2000 L-BFGS-B starts plus all 64 corners).
const HARTMANN_NEG_MIN: f64 = 2.812_450_543_968_651_4e-8;
const HARTMANN_NEG_MAX: f64 = 3.322_368_011_415_514_3;

const HARTMANN_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
const HARTMANN_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];
const HARTMANN_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Benchmark {
    Camelback2,
    Hartmann6,
    Gaussian10,
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Benchmark::Camelback2 => "camelback2",
            Benchmark::Hartmann6 => "hartmann6",
            Benchmark::Gaussian10 => "gaussian10",
        })
    }
}

impl FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "camelback2" | "camelback" => Ok(Benchmark::Camelback2),
            "hartmann6" | "hartmann" => Ok(Benchmark::Hartmann6),
            "gaussian10" | "gaussian" => Ok(Benchmark::Gaussian10),
            _ => Err(Error::Config(format!("unknown benchmark `{s}`"))),
        }
    }
}

impl TryFrom<String> for Benchmark {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Benchmark> for String {
    fn from(b: Benchmark) -> String {
        b.to_string()
    }
}

impl Benchmark {
    pub fn domain(&self) -> Domain {
        match self {
            Benchmark::Camelback2 => Domain::new(vec![-2.0, -1.0], vec![2.0, 1.0]),
            Benchmark::Hartmann6 => Domain::cube(6, 0.0, 1.0),
            Benchmark::Gaussian10 => Domain::cube(10, -1.0, 1.0),
        }
        .expect("benchmark boxes are valid")
    }

    pub fn dimension(&self) -> usize {
        self.domain().dimension()
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let domain = self.domain();
        crate::error::check_dims(domain.dimension(), x.len())?;
        if !domain.contains(x) {
            return Err(Error::InvalidParameter(format!("{x:?} lies outside the {self} box")));
        }
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            Benchmark::Camelback2 => (CAMELBACK_MAX - camelback(x[0], x[1])) / (CAMELBACK_MAX - CAMELBACK_MIN),
            Benchmark::Hartmann6 => (hartmann_negated(x) - HARTMANN_NEG_MIN) / (HARTMANN_NEG_MAX - HARTMANN_NEG_MIN),
            Benchmark::Gaussian10 => (-4.0 * x.iter().map(|v| v * v).sum::<f64>()).exp(),
        }
    }
}

fn camelback(x: f64, y: f64) -> f64 {
    let x2 = x * x;
    (4.0 - 2.1 * x2 + x2 * x2 / 3.0) * x2 + x * y + (-4.0 + 4.0 * y * y) * y * y
}

fn hartmann_negated(x: &[f64]) -> f64 {
    (0..4)
        .map(|i| {
            let e: f64 = (0..6).map(|j| HARTMANN_A[i][j] * (x[j] - HARTMANN_P[i][j]).powi(2)).sum();
            HARTMANN_ALPHA[i] * (-e).exp()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gaussian_values() {
        let g = Benchmark::Gaussian10;
        assert_eq!(g.eval(&[0.0; 10]).unwrap(), 1.0);
        let mut x = [0.0; 10];
        x[3] = 0.5;
        assert!((g.eval(&x).unwrap() - (-1f64).exp()).abs() < 1e-15);
        let r = (2.5f64.ln() / 4.0).sqrt();
        x[3] = r;
        assert!((g.eval(&x).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn camelback_range() {
        let c = Benchmark::Camelback2;
        // global minima of the raw function map to 1
        assert!((c.eval(&[0.0898, -0.7126]).unwrap() - 1.0).abs() < 1e-6);
        assert!((c.eval(&[2.0, 1.0]).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn hartmann_range() {
        let h = Benchmark::Hartmann6;
        let opt = [0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573];
        assert!((h.eval(&opt).unwrap() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn values_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for b in [Benchmark::Camelback2, Benchmark::Hartmann6, Benchmark::Gaussian10] {
            let dom = b.domain();
            for _ in 0..2000 {
                let v = b.eval(&dom.sample(&mut rng)).unwrap();
                assert!((0.0..=1.0 + 1e-12).contains(&v), "{b}: {v}");
            }
        }
    }

    #[test]
    fn rejects_out_of_box() {
        assert!(Benchmark::Camelback2.eval(&[2.5, 0.0]).is_err());
        assert!(Benchmark::Hartmann6.eval(&[0.5; 5]).is_err());
        assert!("branin".parse::<Benchmark>().is_err());
    }
}
