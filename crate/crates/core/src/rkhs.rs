//! Target functions with exactly known RKHS norm.
//!
//! Two constructions are supported:
//!
//! * finite kernel expansions `f = Σ αᵢ k(·, xᵢ)` with `‖f‖² = αᵀKα`, valid for any kernel;
//! * weighted sums of the orthonormal basis of the 1-d Gaussian RKHS,
//!   `eₙ(x) = √((2γ)ⁿ / n!) · xⁿ · exp(−γx²)` with `γ = 1/(2ℓ²)`, where `‖f‖ = ‖w‖₂`.
//!
//! Both can be pinned to a plain-text file so campaigns can replay exact targets.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dims, Error, Result};
use crate::kernels::{Domain, Kernel, KernelFamily};

const MAX_SAMPLE_ATTEMPTS: usize = 10;
const FORMAT_TAG: &str = "safebo-rkhs-v1";

#[derive(Clone, Debug, PartialEq)]
pub enum Representation {
    PreRkhs { centers: Vec<Vec<f64>> },
    SeOnb,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RkhsFunction {
    kernel: Kernel,
    coefficients: Vec<f64>,
    representation: Representation,
    rkhs_norm: f64,
}

impl RkhsFunction {
    /// Kernel expansion with explicit centers and coefficients. The norm is computed.
    pub fn from_expansion(kernel: Kernel, centers: Vec<Vec<f64>>, coefficients: Vec<f64>) -> Result<Self> {
        check_dims(centers.len(), coefficients.len())?;
        if centers.is_empty() {
            return Err(Error::InvalidParameter("expansion needs at least one center".into()));
        }
        let q = quadratic_form(&kernel, &centers, &coefficients)?;
        if !(q > 0.0) {
            return Err(Error::InvalidParameter(format!("expansion has non-positive squared norm {q}")));
        }
        Ok(RkhsFunction {
            kernel,
            coefficients,
            representation: Representation::PreRkhs { centers },
            rkhs_norm: q.sqrt(),
        })
    }

    /// Weighted sum of the first `weights.len()` Gaussian-RKHS basis functions.
    pub fn from_onb_weights(length_scale: f64, weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidParameter("ONB expansion needs at least one term".into()));
        }
        let kernel = Kernel::squared_exponential(length_scale, 1.0)?;
        let norm = l2_norm(&weights);
        if !(norm > 0.0) {
            return Err(Error::InvalidParameter("ONB weights are all zero".into()));
        }
        Ok(RkhsFunction {
            kernel,
            coefficients: weights,
            representation: Representation::SeOnb,
            rkhs_norm: norm,
        })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn representation(&self) -> &Representation {
        &self.representation
    }

    pub fn rkhs_norm(&self) -> f64 {
        self.rkhs_norm
    }

    pub fn dimension(&self) -> usize {
        match &self.representation {
            Representation::PreRkhs { centers } => centers[0].len(),
            Representation::SeOnb => 1,
        }
    }

    /// Recomputes the norm from the stored expansion (quadratic form or ℓ₂ norm).
    pub fn recompute_norm(&self) -> f64 {
        match &self.representation {
            Representation::PreRkhs { centers } => quadratic_form(&self.kernel, centers, &self.coefficients)
                .map(f64::sqrt)
                .unwrap_or(f64::NAN),
            Representation::SeOnb => l2_norm(&self.coefficients),
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        match &self.representation {
            Representation::PreRkhs { centers } => centers
                .iter()
                .zip(&self.coefficients)
                .map(|(c, a)| a * self.kernel.eval_unchecked(c, x))
                .sum(),
            Representation::SeOnb => {
                let gamma = onb_gamma(self.kernel.length_scale());
                onb_sum(gamma, &self.coefficients, x[0])
            }
        }
    }

    pub fn to_text(&self) -> String {
        let kind = match self.representation {
            Representation::PreRkhs { .. } => "pre_rkhs",
            Representation::SeOnb => "se_onb",
        };
        let mut s = format!(
            "{FORMAT_TAG} kind={kind} family={} length_scale={:.16e} output_variance={:.16e} norm={:.16e} dim={} terms={}\n",
            self.kernel.family(),
            self.kernel.length_scale(),
            self.kernel.output_variance(),
            self.rkhs_norm,
            self.dimension(),
            self.coefficients.len(),
        );
        for (i, a) in self.coefficients.iter().enumerate() {
            let _ = write!(s, "{a:.16e}");
            if let Representation::PreRkhs { centers } = &self.representation {
                for c in &centers[i] {
                    let _ = write!(s, " {c:.16e}");
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty function file".into()))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some(FORMAT_TAG) {
            return Err(Error::Parse(format!("missing `{FORMAT_TAG}` header")));
        }
        let mut kind = None;
        let mut family = None;
        let mut length_scale = None;
        let mut variance = None;
        let mut norm = None;
        let mut dim = None;
        let mut terms = None;
        for field in fields {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("malformed header field `{field}`")))?;
            match key {
                "kind" => kind = Some(value.to_string()),
                "family" => family = Some(value.parse::<KernelFamily>()?),
                "length_scale" => length_scale = Some(parse_f64(value)?),
                "output_variance" => variance = Some(parse_f64(value)?),
                "norm" => norm = Some(parse_f64(value)?),
                "dim" => dim = Some(parse_usize(value)?),
                "terms" => terms = Some(parse_usize(value)?),
                other => return Err(Error::Parse(format!("unknown header field `{other}`"))),
            }
        }
        let missing = |name: &str| Error::Parse(format!("header lacks `{name}`"));
        let kind = kind.ok_or_else(|| missing("kind"))?;
        let kernel = Kernel::new(
            family.ok_or_else(|| missing("family"))?,
            length_scale.ok_or_else(|| missing("length_scale"))?,
            variance.ok_or_else(|| missing("output_variance"))?,
        )?;
        let norm = norm.ok_or_else(|| missing("norm"))?;
        let dim = dim.ok_or_else(|| missing("dim"))?;
        let terms = terms.ok_or_else(|| missing("terms"))?;

        let mut coefficients = Vec::with_capacity(terms);
        let mut centers = Vec::with_capacity(terms);
        for line in lines {
            let values = line.split_whitespace().map(parse_f64).collect::<Result<Vec<_>>>()?;
            match kind.as_str() {
                "pre_rkhs" => {
                    check_dims(dim + 1, values.len())?;
                    coefficients.push(values[0]);
                    centers.push(values[1..].to_vec());
                }
                "se_onb" => {
                    check_dims(1, values.len())?;
                    coefficients.push(values[0]);
                }
                other => return Err(Error::Parse(format!("unknown function kind `{other}`"))),
            }
        }
        if coefficients.len() != terms {
            return Err(Error::Parse(format!(
                "header announces {terms} terms, found {}",
                coefficients.len()
            )));
        }
        let representation = match kind.as_str() {
            "pre_rkhs" => Representation::PreRkhs { centers },
            _ => {
                if kernel.family() != KernelFamily::SquaredExponential || kernel.output_variance() != 1.0 {
                    return Err(Error::Parse("se_onb functions need the unit-variance SE kernel".into()));
                }
                Representation::SeOnb
            }
        };
        Ok(RkhsFunction {
            kernel,
            coefficients,
            representation,
            rkhs_norm: norm,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Parse(format!("not a number: `{s}`")))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse().map_err(|_| Error::Parse(format!("not an integer: `{s}`")))
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|w| w * w).sum::<f64>().sqrt()
}

fn quadratic_form(kernel: &Kernel, centers: &[Vec<f64>], alpha: &[f64]) -> Result<f64> {
    let gram = kernel.gram(centers)?;
    let mut q = 0.0;
    for i in 0..alpha.len() {
        for j in 0..alpha.len() {
            q += alpha[i] * alpha[j] * gram[(i, j)];
        }
    }
    Ok(q)
}

/// Draws `num_centers` centers uniformly in `domain` and coefficients uniformly in
/// `[−1, 1]`, then rescales so that `√(αᵀKα) = target_norm`.
pub fn sample_pre_rkhs(
    kernel: Kernel,
    domain: &Domain,
    num_centers: usize,
    target_norm: f64,
    seed: u64,
) -> Result<RkhsFunction> {
    if num_centers == 0 {
        return Err(Error::InvalidParameter("num_centers must be ≥ 1".into()));
    }
    if !(target_norm > 0.0 && target_norm.is_finite()) {
        return Err(Error::InvalidParameter(format!("target norm must be positive, got {target_norm}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_SAMPLE_ATTEMPTS {
        let centers: Vec<Vec<f64>> = (0..num_centers).map(|_| domain.sample(&mut rng)).collect();
        let raw: Vec<f64> = (0..num_centers).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let q = quadratic_form(&kernel, &centers, &raw)?;
        let scale_ref = raw.iter().map(|a| a * a).sum::<f64>() * kernel.output_variance();
        if !(q > 1e-12 * scale_ref) || !q.is_finite() {
            continue;
        }
        let factor = target_norm / q.sqrt();
        let coefficients = raw.iter().map(|a| a * factor).collect();
        return Ok(RkhsFunction {
            kernel,
            coefficients,
            representation: Representation::PreRkhs { centers },
            rkhs_norm: target_norm,
        });
    }
    Err(Error::DegenerateSample {
        seed,
        attempts: MAX_SAMPLE_ATTEMPTS,
    })
}

/// Draws `num_terms` ONB weights uniformly in `[−1, 1]` and rescales them to `‖w‖₂ = target_norm`.
///
/// `domain` must be one-dimensional; it is used to reject term counts whose highest
/// basis function underflows everywhere on the domain.
pub fn sample_se_onb(
    length_scale: f64,
    domain: &Domain,
    num_terms: usize,
    target_norm: f64,
    seed: u64,
) -> Result<RkhsFunction> {
    check_dims(1, domain.dimension())?;
    if num_terms == 0 {
        return Err(Error::InvalidParameter("num_terms must be ≥ 1".into()));
    }
    if !(target_norm > 0.0 && target_norm.is_finite()) {
        return Err(Error::InvalidParameter(format!("target norm must be positive, got {target_norm}")));
    }
    let gamma = onb_gamma(length_scale);
    let n = (num_terms - 1) as f64;
    // |eₙ| grows in |x| up to √(n/(2γ)); take the largest value reachable on the domain.
    let reach = domain.lower()[0].abs().max(domain.upper()[0].abs());
    let x_peak = (n / (2.0 * gamma)).sqrt().min(reach);
    if onb_log_abs(gamma, num_terms - 1, x_peak) < f64::MIN_POSITIVE.ln() {
        return Err(Error::InvalidParameter(format!(
            "{num_terms} ONB terms underflow on the domain; use fewer terms"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_SAMPLE_ATTEMPTS {
        let raw: Vec<f64> = (0..num_terms).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let norm = l2_norm(&raw);
        if norm > 0.0 {
            let weights = raw.iter().map(|w| w * target_norm / norm).collect();
            let mut f = RkhsFunction::from_onb_weights(length_scale, weights)?;
            f.rkhs_norm = target_norm;
            return Ok(f);
        }
    }
    Err(Error::DegenerateSample {
        seed,
        attempts: MAX_SAMPLE_ATTEMPTS,
    })
}

fn onb_gamma(length_scale: f64) -> f64 {
    1.0 / (2.0 * length_scale * length_scale)
}

/// `ln |eₙ(x)|` for `x ≠ 0`.
fn onb_log_abs(gamma: f64, n: usize, x: f64) -> f64 {
    let mut log = -gamma * x * x;
    let step = 0.5 * (2.0 * gamma).ln() + x.abs().ln();
    for k in 1..=n {
        log += step - 0.5 * (k as f64).ln();
    }
    log
}

/// `Σₙ wₙ eₙ(x)`, accumulating each term's magnitude in log space so that neither the
/// Gaussian envelope nor the factorial under- or overflows.
fn onb_sum(gamma: f64, weights: &[f64], x: f64) -> f64 {
    if x == 0.0 {
        return weights[0];
    }
    let step = 0.5 * (2.0 * gamma).ln() + x.abs().ln();
    let negative = x < 0.0;
    let mut log = -gamma * x * x;
    let mut sum = 0.0;
    for (n, w) in weights.iter().enumerate() {
        if n > 0 {
            log += step - 0.5 * (n as f64).ln();
        }
        let mut term = log.exp();
        if negative && n % 2 == 1 {
            term = -term;
        }
        sum += w * term;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn interval() -> Domain {
        Domain::interval(-2.0, 2.0).unwrap()
    }

    #[test]
    fn single_center_is_scaled_kernel_section() {
        let k = Kernel::squared_exponential(0.3, 1.0).unwrap();
        let f = sample_pre_rkhs(k, &interval(), 1, 10.0, 3).unwrap();
        let Representation::PreRkhs { centers } = f.representation() else {
            panic!("wrong representation")
        };
        assert!((f.coefficients()[0].abs() - 10.0).abs() < 1e-12);
        let c = &centers[0];
        // evaluate at the center → α₁ k(x₁, x₁)
        assert!((f.evaluate(c) - f.coefficients()[0]).abs() < 1e-12);
    }

    #[test]
    fn two_center_scaling_factor() {
        // raw α = (1, 1) at {0, √2} with SE ℓ = 1: raw norm² = 2 + 2e^{−1}
        let k = Kernel::squared_exponential(1.0, 1.0).unwrap();
        let f = RkhsFunction::from_expansion(k, vec![vec![0.0], vec![2f64.sqrt()]], vec![1.0, 1.0]).unwrap();
        let raw = 2.0 + 2.0 * (-1f64).exp();
        assert!((f.rkhs_norm() - raw.sqrt()).abs() < 1e-14);
        let factor = 10.0 / raw.sqrt();
        let scaled = RkhsFunction::from_expansion(
            k,
            vec![vec![0.0], vec![2f64.sqrt()]],
            vec![factor, factor],
        )
        .unwrap();
        assert!((scaled.rkhs_norm() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn two_term_expansion_value() {
        let k = Kernel::matern32(0.5, 1.0).unwrap();
        let (a, b) = (vec![0.1], vec![0.6]);
        let f = RkhsFunction::from_expansion(k, vec![a.clone(), b.clone()], vec![1.0, -1.0]).unwrap();
        let expected = k.eval(&a, &a).unwrap() - k.eval(&a, &b).unwrap();
        assert!((f.evaluate(&a) - expected).abs() < 1e-15);
    }

    #[test]
    fn sampled_norms_match_recomputation() {
        let dom = interval();
        for seed in 0..10 {
            let k = Kernel::matern32(0.2, 1.0).unwrap();
            let f = sample_pre_rkhs(k, &dom, 20 + seed as usize, 10.0, seed).unwrap();
            assert!((f.recompute_norm() / 10.0 - 1.0).abs() < 1e-10);
            let g = sample_se_onb(0.2 / 2f64.sqrt(), &dom, 40, 10.0, seed).unwrap();
            assert!((g.recompute_norm() / 10.0 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn onb_single_term() {
        let ls = 0.2 / 2f64.sqrt();
        let f = sample_se_onb(ls, &interval(), 1, 10.0, 11).unwrap();
        let w = f.coefficients()[0];
        assert!((w.abs() - 10.0).abs() < 1e-12);
        assert_eq!(f.evaluate(&[0.0]), w);
        // f(x) = w · exp(−γx²) with γ = 1/(2ℓ²) = 25
        let x = 0.13;
        assert!((f.evaluate(&[x]) - w * (-25.0 * x * x).exp()).abs() < 1e-12);
    }

    #[test]
    fn onb_reproduces_kernel() {
        // Σₙ eₙ(x) eₙ(y) = exp(−γ(x−y)²); truncating at many terms must match closely.
        let ls = 0.2 / 2f64.sqrt();
        let gamma = onb_gamma(ls);
        for (x, y) in [(0.1, 0.15), (-0.4, -0.3), (0.5, 0.45), (-0.2, 0.1)] {
            let mut sum = 0.0;
            for n in 0..150 {
                let mut w = vec![0.0; n + 1];
                w[n] = 1.0;
                sum += onb_sum(gamma, &w, x) * onb_sum(gamma, &w, y);
            }
            let k = (-gamma * (x - y) * (x - y)).exp();
            assert!((sum - k).abs() < 1e-10, "x={x} y={y}: {sum} vs {k}");
        }
    }

    #[test]
    fn onb_term_cap() {
        let dom = Domain::interval(-0.01, 0.01).unwrap();
        assert!(sample_se_onb(0.14, &dom, 2000, 10.0, 0).is_err());
        assert!(sample_se_onb(0.14, &interval(), 40, 10.0, 0).is_ok());
        assert!(sample_se_onb(0.14, &Domain::cube(2, 0.0, 1.0).unwrap(), 4, 1.0, 0).is_err());
    }

    #[test]
    fn invalid_arguments() {
        let k = Kernel::squared_exponential(0.3, 1.0).unwrap();
        assert!(sample_pre_rkhs(k, &interval(), 0, 10.0, 0).is_err());
        assert!(sample_pre_rkhs(k, &interval(), 3, 0.0, 0).is_err());
        assert!(sample_se_onb(0.1, &interval(), 0, 1.0, 0).is_err());
    }

    #[test]
    fn same_seed_same_function() {
        let k = Kernel::squared_exponential(0.3, 1.0).unwrap();
        let a = sample_pre_rkhs(k, &interval(), 30, 10.0, 99).unwrap();
        let b = sample_pre_rkhs(k, &interval(), 30, 10.0, 99).unwrap();
        assert_eq!(a, b);
        let c = sample_pre_rkhs(k, &interval(), 30, 10.0, 100).unwrap();
        assert_ne!(a, c);
    }

    /// Minimum-norm interpolation on a grid lower-bounds the RKHS norm.
    fn interpolant_norm(k: &Kernel, grid: &[Vec<f64>], values: &[f64]) -> f64 {
        let mut gram = k.gram(grid).unwrap();
        for i in 0..grid.len() {
            gram[(i, i)] += 1e-10;
        }
        let y = DVector::from_column_slice(values);
        let chol = gram.cholesky().unwrap();
        let a = chol.solve(&y);
        y.dot(&a).sqrt()
    }

    #[test]
    fn interpolant_norm_lower_bound() {
        let dom = interval();
        let grid: Vec<Vec<f64>> = crate::kernels::linspace(-2.0, 2.0, 100).into_iter().map(|x| vec![x]).collect();
        for seed in 0..10 {
            let ls = 0.2 / 2f64.sqrt();
            let f = sample_se_onb(ls, &dom, 40, 10.0, seed).unwrap();
            let values: Vec<f64> = grid.iter().map(|x| f.evaluate(x)).collect();
            let n = interpolant_norm(f.kernel(), &grid, &values);
            assert!(n <= f.rkhs_norm() + 1e-6, "ONB seed {seed}: {n}");

            let k = Kernel::squared_exponential(0.3, 1.0).unwrap();
            let g = sample_pre_rkhs(k, &dom, 25, 10.0, seed).unwrap();
            let values: Vec<f64> = grid.iter().map(|x| g.evaluate(x)).collect();
            let n = interpolant_norm(g.kernel(), &grid, &values);
            assert!(n <= g.rkhs_norm() + 1e-6, "pre-RKHS seed {seed}: {n}");
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let k = Kernel::matern32(0.2, 1.5).unwrap();
        let f = sample_pre_rkhs(k, &Domain::cube(2, -1.0, 1.0).unwrap(), 7, 3.0, 5).unwrap();
        let g = RkhsFunction::from_text(&f.to_text()).unwrap();
        assert_eq!(f, g);
        let h = sample_se_onb(0.1, &interval(), 12, 10.0, 5).unwrap();
        assert_eq!(h, RkhsFunction::from_text(&h.to_text()).unwrap());
    }

    #[test]
    fn text_rejects_garbage() {
        assert!(RkhsFunction::from_text("").is_err());
        assert!(RkhsFunction::from_text("hello kind=se_onb").is_err());
        let f = sample_se_onb(0.1, &interval(), 3, 1.0, 1).unwrap();
        let text = f.to_text();
        let truncated: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
        assert!(RkhsFunction::from_text(&truncated).is_err());
    }
}
