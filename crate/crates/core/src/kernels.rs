//! Stationary covariance functions on box domains in ℝ^d.
//!
//! The squared-exponential kernel uses the convention
//!
//! `k(x, x') = σ² · exp(−‖x − x'‖² / (2ℓ²))`
//!
//! so that `ℓ = 0.2/√2` corresponds to `exp(−25 · r²)`. The orthonormal basis in
//! [`crate::rkhs`] depends on this convention; do not change one without the other.
//!
//! The Matérn-3/2 kernel is `σ² · (1 + √3·r/ℓ) · exp(−√3·r/ℓ)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};

const SQRT_3: f64 = 1.732_050_807_568_877_2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    SquaredExponential,
    Matern32,
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelFamily::SquaredExponential => write!(f, "squared_exponential"),
            KernelFamily::Matern32 => write!(f, "matern32"),
        }
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared_exponential" | "se" => Ok(KernelFamily::SquaredExponential),
            "matern32" | "matern-3/2" => Ok(KernelFamily::Matern32),
            other => Err(Error::Parse(format!("unknown kernel family `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kernel {
    family: KernelFamily,
    length_scale: f64,
    output_variance: f64,
}

impl Kernel {
    pub fn new(family: KernelFamily, length_scale: f64, output_variance: f64) -> Result<Self> {
        if !(length_scale > 0.0 && length_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "length scale must be positive, got {length_scale}"
            )));
        }
        if !(output_variance > 0.0 && output_variance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "output variance must be positive, got {output_variance}"
            )));
        }
        Ok(Kernel {
            family,
            length_scale,
            output_variance,
        })
    }

    pub fn squared_exponential(length_scale: f64, output_variance: f64) -> Result<Self> {
        Self::new(KernelFamily::SquaredExponential, length_scale, output_variance)
    }

    pub fn matern32(length_scale: f64, output_variance: f64) -> Result<Self> {
        Self::new(KernelFamily::Matern32, length_scale, output_variance)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    pub fn output_variance(&self) -> f64 {
        self.output_variance
    }

    /// Same kernel with a different length scale.
    pub fn with_length_scale(&self, length_scale: f64) -> Result<Self> {
        Self::new(self.family, length_scale, self.output_variance)
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dims(x.len(), y.len())?;
        Ok(self.eval_unchecked(x, y))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        self.eval_sq_dist(sq_dist(x, y))
    }

    /// Kernel value as a function of the squared distance.
    #[inline]
    pub fn eval_sq_dist(&self, r2: f64) -> f64 {
        match self.family {
            KernelFamily::SquaredExponential => {
                self.output_variance * (-0.5 * r2 / (self.length_scale * self.length_scale)).exp()
            }
            KernelFamily::Matern32 => {
                let a = SQRT_3 * r2.sqrt() / self.length_scale;
                self.output_variance * (1.0 + a) * (-a).exp()
            }
        }
    }

    /// Gradient of `k(x, z)` with respect to `x`, accumulated as `out += scale · ∇ₓk(x, z)`.
    pub(crate) fn accumulate_grad(&self, x: &[f64], z: &[f64], scale: f64, out: &mut [f64]) {
        let r2 = sq_dist(x, z);
        let ls2 = self.length_scale * self.length_scale;
        let factor = match self.family {
            KernelFamily::SquaredExponential => -self.eval_sq_dist(r2) / ls2,
            KernelFamily::Matern32 => {
                let a = SQRT_3 * r2.sqrt() / self.length_scale;
                -self.output_variance * 3.0 / ls2 * (-a).exp()
            }
        };
        for ((o, xi), zi) in out.iter_mut().zip(x).zip(z) {
            *o += scale * factor * (xi - zi);
        }
    }

    pub fn gram(&self, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        if let Some(first) = points.first() {
            for p in points {
                check_dims(first.len(), p.len())?;
            }
        }
        let n = points.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = self.output_variance;
            for j in 0..i {
                let v = self.eval_unchecked(&points[i], &points[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(k)
    }
}

#[inline]
pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Euclidean distance.
pub fn metric(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(x.len(), y.len())?;
    Ok(distance(x, y))
}

#[inline]
pub(crate) fn distance(x: &[f64], y: &[f64]) -> f64 {
    sq_dist(x, y).sqrt()
}

/// Axis-aligned box `[lower, upper]` in ℝ^d.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dims(lower.len(), upper.len())?;
        if lower.is_empty() {
            return Err(Error::InvalidParameter("domain must have dimension ≥ 1".into()));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "coordinate {i}: lower bound {lo} must be below upper bound {hi}"
                )));
            }
        }
        Ok(Domain { lower, upper })
    }

    pub fn interval(lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower], vec![upper])
    }

    pub fn cube(dimension: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; dimension], vec![upper; dimension])
    }

    pub fn dimension(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dimension()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    pub fn clip(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// Length of the box diagonal.
    pub fn diameter(&self) -> f64 {
        distance(&self.lower, &self.upper)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }

    /// Cartesian grid with `points_per_dim` equally spaced values per coordinate,
    /// endpoints included. The first coordinate varies slowest.
    pub fn grid(&self, points_per_dim: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| linspace(*lo, *hi, points_per_dim))
            .collect();
        let total = axes.iter().map(Vec::len).product::<usize>();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; axes.len()];
        for _ in 0..total {
            out.push(idx.iter().zip(&axes).map(|(i, a)| a[*i]).collect());
            for d in (0..axes.len()).rev() {
                idx[d] += 1;
                if idx[d] < axes[d].len() {
                    break;
                }
                idx[d] = 0;
            }
        }
        out
    }
}

/// `n` equally spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (a + b)],
        _ => {
            let step = (b - a) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { b } else { a + step * i as f64 })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn se() -> Kernel {
        Kernel::squared_exponential(1.0, 1.0).unwrap()
    }

    #[test]
    fn se_values() {
        let k = se();
        assert_eq!(k.eval(&[0.3], &[0.3]).unwrap(), 1.0);
        let v = k.eval(&[0.0], &[2f64.sqrt()]).unwrap();
        assert!((v - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn matern_at_zero() {
        let k = Kernel::matern32(1.0, 1.0).unwrap();
        assert_eq!(k.eval(&[0.0], &[0.0]).unwrap(), 1.0);
        // (1 + √3) e^{−√3} at r = ℓ
        let v = k.eval(&[0.0], &[1.0]).unwrap();
        assert!((v - (1.0 + SQRT_3) * (-SQRT_3).exp()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(Kernel::squared_exponential(0.0, 1.0).is_err());
        assert!(Kernel::matern32(1.0, -1.0).is_err());
        assert!(Kernel::matern32(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            se().eval(&[0.0], &[0.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(metric(&[0.0, 1.0], &[0.0]).is_err());
        assert!(se().gram(&[vec![0.0], vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn gram_examples() {
        let k = Kernel::squared_exponential(1.0, 2.5).unwrap();
        assert_eq!(k.gram(&[]).unwrap().nrows(), 0);
        let g = k.gram(&[vec![1.0]]).unwrap();
        assert_eq!(g[(0, 0)], 2.5);

        let g = se().gram(&[vec![0.4], vec![0.4]]).unwrap();
        assert!(g.iter().all(|v| *v == 1.0));

        let g = se().gram(&[vec![0.0], vec![2f64.sqrt()]]).unwrap();
        let e = (-1f64).exp();
        assert_eq!(g[(0, 0)], 1.0);
        assert!((g[(0, 1)] - e).abs() < 1e-15 && g[(0, 1)] == g[(1, 0)]);
    }

    #[test]
    fn metric_examples() {
        assert_eq!(metric(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
        assert_eq!(metric(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(metric(&[0.0], &[-2.0]).unwrap(), 2.0);
    }

    #[test]
    fn gram_is_psd_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for family in [KernelFamily::SquaredExponential, KernelFamily::Matern32] {
            for trial in 0..50 {
                let var = 0.5 + 2.0 * rng.random::<f64>();
                let k = Kernel::new(family, 0.05 + rng.random::<f64>(), var).unwrap();
                let n = 1 + trial % 20;
                let d = 1 + trial % 3;
                let pts: Vec<Vec<f64>> = (0..n)
                    .map(|_| (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
                    .collect();
                let g = k.gram(&pts).unwrap();
                let eig = SymmetricEigen::new(g).eigenvalues;
                let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
                assert!(min >= -1e-8 * var, "{family}: min eigenvalue {min}");
            }
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let x = [0.3, -0.2];
        let z = [0.1, 0.25];
        for k in [
            Kernel::squared_exponential(0.4, 1.3).unwrap(),
            Kernel::matern32(0.4, 1.3).unwrap(),
        ] {
            let mut g = [0.0; 2];
            k.accumulate_grad(&x, &z, 1.0, &mut g);
            for i in 0..2 {
                let h = 1e-6;
                let mut xp = x;
                let mut xm = x;
                xp[i] += h;
                xm[i] -= h;
                let fd = (k.eval(&xp, &z).unwrap() - k.eval(&xm, &z).unwrap()) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-7, "{:?}: {fd} vs {}", k.family(), g[i]);
            }
        }
    }

    #[test]
    fn grid_and_linspace() {
        let d = Domain::new(vec![0.0, -1.0], vec![1.0, 1.0]).unwrap();
        let g = d.grid(3);
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], vec![0.0, -1.0]);
        assert_eq!(g[8], vec![1.0, 1.0]);
        let l = linspace(-2.0, 2.0, 5);
        assert_eq!(l, vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert!(Domain::interval(1.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn kernel_symmetric_and_bounded(
            a in prop::collection::vec(-3.0f64..3.0, 2),
            b in prop::collection::vec(-3.0f64..3.0, 2),
            ls in 0.05f64..2.0,
            var in 0.1f64..5.0,
            matern in any::<bool>(),
        ) {
            let family = if matern { KernelFamily::Matern32 } else { KernelFamily::SquaredExponential };
            let k = Kernel::new(family, ls, var).unwrap();
            let kab = k.eval(&a, &b).unwrap();
            prop_assert_eq!(kab, k.eval(&b, &a).unwrap());
            prop_assert!(kab <= var && kab >= 0.0);
            prop_assert_eq!(k.eval(&a, &a).unwrap(), var);
        }

        #[test]
        fn metric_triangle_inequality(
            a in prop::collection::vec(-5.0f64..5.0, 3),
            b in prop::collection::vec(-5.0f64..5.0, 3),
            c in prop::collection::vec(-5.0f64..5.0, 3),
        ) {
            let ab = metric(&a, &b).unwrap();
            let bc = metric(&b, &c).unwrap();
            let ac = metric(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
        }
    }
}
