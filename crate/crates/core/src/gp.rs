//! Exact GP regression with a constant prior mean.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dims, Error, Result};
use crate::kernels::Kernel;

/// Variances down to this value are rounding noise and are clamped silently.
const VARIANCE_TOLERANCE: f64 = -1e-10;
const JITTER: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpConfig {
    pub kernel: Kernel,
    /// Nominal noise variance λ.
    pub noise_variance: f64,
    pub prior_mean: f64,
}

impl GpConfig {
    pub fn new(kernel: Kernel, noise_variance: f64) -> Result<Self> {
        if !(noise_variance > 0.0 && noise_variance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "nominal noise variance must be positive, got {noise_variance}"
            )));
        }
        Ok(GpConfig {
            kernel,
            noise_variance,
            prior_mean: 0.0,
        })
    }

    pub fn with_prior_mean(mut self, prior_mean: f64) -> Self {
        self.prior_mean = prior_mean;
        self
    }
}

/// Posterior given `t` observations; immutable once fitted.
#[derive(Debug)]
pub struct GpPosterior {
    config: GpConfig,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    /// Lower Cholesky factor of `K + λI`.
    chol: DMatrix<f64>,
    /// `(K + λI)⁻¹ (y − m)`.
    weights: DVector<f64>,
    clamped: AtomicUsize,
}

impl Clone for GpPosterior {
    fn clone(&self) -> Self {
        GpPosterior {
            config: self.config,
            inputs: self.inputs.clone(),
            targets: self.targets.clone(),
            chol: self.chol.clone(),
            weights: self.weights.clone(),
            clamped: AtomicUsize::new(self.clamped.load(Ordering::Relaxed)),
        }
    }
}

impl GpPosterior {
    pub fn prior(config: GpConfig) -> Self {
        GpPosterior {
            config,
            inputs: Vec::new(),
            targets: Vec::new(),
            chol: DMatrix::zeros(0, 0),
            weights: DVector::zeros(0),
            clamped: AtomicUsize::new(0),
        }
    }

    pub fn fit(config: GpConfig, inputs: &[Vec<f64>], targets: &[f64]) -> Result<Self> {
        check_dims(inputs.len(), targets.len())?;
        if inputs.is_empty() {
            return Ok(Self::prior(config));
        }
        let dim = inputs[0].len();
        for x in inputs {
            check_dims(dim, x.len())?;
        }
        let mut k = config.kernel.gram(inputs)?;
        for i in 0..inputs.len() {
            k[(i, i)] += config.noise_variance;
        }
        let chol = match k.clone().cholesky() {
            Some(c) => c,
            None => {
                let jitter = JITTER * config.kernel.output_variance();
                for i in 0..inputs.len() {
                    k[(i, i)] += jitter;
                }
                k.cholesky().ok_or_else(|| {
                    Error::Numerical(format!(
                        "Cholesky of K + λI failed for t = {} even with jitter {jitter:e}",
                        inputs.len()
                    ))
                })?
            }
        };
        let centered = DVector::from_iterator(targets.len(), targets.iter().map(|y| y - config.prior_mean));
        let weights = chol.solve(&centered);
        Ok(GpPosterior {
            config,
            inputs: inputs.to_vec(),
            targets: targets.to_vec(),
            chol: chol.unpack(),
            weights,
            clamped: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &GpConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// Number of predictions whose variance came out below the rounding tolerance before clamping.
    pub fn negative_variance_clamps(&self) -> usize {
        self.clamped.load(Ordering::Relaxed)
    }

    fn kernel_vector(&self, x: &[f64]) -> Vec<f64> {
        self.inputs
            .iter()
            .map(|xi| self.config.kernel.eval_unchecked(xi, x))
            .collect()
    }

    /// Solves `L v = b` in place.
    fn forward_substitute(&self, b: &mut [f64]) {
        let n = b.len();
        for i in 0..n {
            let mut s = b[i];
            for j in 0..i {
                s -= self.chol[(i, j)] * b[j];
            }
            b[i] = s / self.chol[(i, i)];
        }
    }

    /// Solves `Lᵀ w = v` in place.
    fn backward_substitute(&self, v: &mut [f64]) {
        let n = v.len();
        for i in (0..n).rev() {
            let mut s = v[i];
            for j in i + 1..n {
                s -= self.chol[(j, i)] * v[j];
            }
            v[i] = s / self.chol[(i, i)];
        }
    }

    fn clamp(&self, var: f64) -> f64 {
        if var >= 0.0 {
            var
        } else {
            if var < VARIANCE_TOLERANCE {
                self.clamped.fetch_add(1, Ordering::Relaxed);
            }
            0.0
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        match self.inputs.first() {
            Some(x0) => check_dims(x0.len(), x.len()),
            None => Ok(()),
        }
    }

    /// Posterior mean and variance at `x`.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.check_point(x)?;
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> (f64, f64) {
        let prior_var = self.config.kernel.eval_unchecked(x, x);
        if self.inputs.is_empty() {
            return (self.config.prior_mean, prior_var);
        }
        let mut v = self.kernel_vector(x);
        let mean = self.config.prior_mean + v.iter().zip(self.weights.iter()).map(|(a, b)| a * b).sum::<f64>();
        self.forward_substitute(&mut v);
        let var = prior_var - v.iter().map(|a| a * a).sum::<f64>();
        (mean, self.clamp(var))
    }

    pub fn mean(&self, x: &[f64]) -> Result<f64> {
        self.predict(x).map(|p| p.0)
    }

    pub fn variance(&self, x: &[f64]) -> Result<f64> {
        self.predict(x).map(|p| p.1)
    }

    /// Means and variances at many points with one triangular solve.
    pub fn predict_batch(&self, points: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        for x in points {
            self.check_point(x)?;
        }
        let t = self.inputs.len();
        let prior: Vec<f64> = points.iter().map(|x| self.config.kernel.eval_unchecked(x, x)).collect();
        if t == 0 {
            return Ok((vec![self.config.prior_mean; points.len()], prior));
        }
        let cross = DMatrix::from_fn(t, points.len(), |i, j| {
            self.config.kernel.eval_unchecked(&self.inputs[i], &points[j])
        });
        let means = cross.tr_mul(&self.weights);
        let v = self
            .chol
            .solve_lower_triangular(&cross)
            .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
        let mut vars = Vec::with_capacity(points.len());
        for (j, p) in prior.iter().enumerate() {
            let col = v.column(j);
            vars.push(self.clamp(p - col.dot(&col)));
        }
        let means = means.iter().map(|m| m + self.config.prior_mean).collect();
        Ok((means, vars))
    }

    /// `ln det(I + K/λ)`, zero for the empty posterior.
    pub fn log_det_scaled(&self) -> f64 {
        let t = self.inputs.len();
        let diag: f64 = (0..t).map(|i| self.chol[(i, i)].ln()).sum();
        2.0 * diag - t as f64 * self.config.noise_variance.ln()
    }

    /// Mean, standard deviation and their gradients at `x`.
    pub(crate) fn mean_std_with_grad(&self, x: &[f64]) -> (f64, f64, Vec<f64>, Vec<f64>) {
        let d = x.len();
        let prior_var = self.config.kernel.eval_unchecked(x, x);
        let mut grad_mean = vec![0.0; d];
        let mut grad_std = vec![0.0; d];
        if self.inputs.is_empty() {
            return (self.config.prior_mean, prior_var.sqrt(), grad_mean, grad_std);
        }
        let k = self.kernel_vector(x);
        let mean = self.config.prior_mean + k.iter().zip(self.weights.iter()).map(|(a, b)| a * b).sum::<f64>();
        let mut v = k;
        self.forward_substitute(&mut v);
        let var = self.clamp(prior_var - v.iter().map(|a| a * a).sum::<f64>());
        let std = var.sqrt();
        // ∇σ² = −2 Σᵢ [(K+λI)⁻¹k]ᵢ ∇k(x, xᵢ) for stationary kernels.
        let mut w = v;
        self.backward_substitute(&mut w);
        let mut grad_var = vec![0.0; d];
        for (i, xi) in self.inputs.iter().enumerate() {
            self.config.kernel.accumulate_grad(x, xi, self.weights[i], &mut grad_mean);
            self.config.kernel.accumulate_grad(x, xi, -2.0 * w[i], &mut grad_var);
        }
        if std > 1e-12 {
            for (g, gv) in grad_std.iter_mut().zip(&grad_var) {
                *g = gv / (2.0 * std);
            }
        }
        (mean, std, grad_mean, grad_std)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelFamily;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn config(lambda: f64) -> GpConfig {
        GpConfig::new(Kernel::squared_exponential(1.0, 1.0).unwrap(), lambda).unwrap()
    }

    /// μ = m + kᵀ(K+λI)⁻¹(y−m), σ² = k(x,x) − kᵀ(K+λI)⁻¹k with an explicit inverse.
    fn dense_oracle(cfg: &GpConfig, xs: &[Vec<f64>], ys: &[f64], x: &[f64]) -> (f64, f64) {
        let mut k = cfg.kernel.gram(xs).unwrap();
        for i in 0..xs.len() {
            k[(i, i)] += cfg.noise_variance;
        }
        let inv = k.try_inverse().unwrap();
        let kx = DVector::from_iterator(xs.len(), xs.iter().map(|xi| cfg.kernel.eval(xi, x).unwrap()));
        let y = DVector::from_iterator(ys.len(), ys.iter().map(|v| v - cfg.prior_mean));
        let mean = cfg.prior_mean + (kx.transpose() * &inv * y)[(0, 0)];
        let var = cfg.kernel.eval(x, x).unwrap() - (kx.transpose() * &inv * &kx)[(0, 0)];
        (mean, var)
    }

    fn random_instance(rng: &mut ChaCha8Rng, t: usize, dim: usize) -> (GpConfig, Vec<Vec<f64>>, Vec<f64>) {
        let family = if rng.random::<bool>() {
            KernelFamily::SquaredExponential
        } else {
            KernelFamily::Matern32
        };
        let kernel = Kernel::new(family, rng.random_range(0.2..2.0), rng.random_range(0.5..2.0)).unwrap();
        let cfg = GpConfig::new(kernel, rng.random_range(0.01..1.0))
            .unwrap()
            .with_prior_mean(rng.random_range(-1.0..1.0));
        let xs = (0..t)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let ys = (0..t).map(|_| rng.random_range(-3.0..3.0)).collect();
        (cfg, xs, ys)
    }

    #[test]
    fn empty_posterior_is_prior() {
        let cfg = config(0.1).with_prior_mean(0.5);
        let gp = GpPosterior::fit(cfg, &[], &[]).unwrap();
        assert_eq!(gp.predict(&[0.3]).unwrap(), (0.5, 1.0));
        assert_eq!(gp.log_det_scaled(), 0.0);
    }

    #[test]
    fn one_point_closed_form() {
        let gp = GpPosterior::fit(config(1.0), &[vec![0.0]], &[2.0]).unwrap();
        let (m, v) = gp.predict(&[0.0]).unwrap();
        assert!((m - 1.0).abs() < 1e-15);
        assert!((v - 0.5).abs() < 1e-15);
        assert!((gp.log_det_scaled() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn far_field_reverts_to_prior() {
        let cfg = config(0.01).with_prior_mean(-0.7);
        let gp = GpPosterior::fit(cfg, &[vec![0.0], vec![0.5]], &[3.0, -2.0]).unwrap();
        assert!((gp.mean(&[50.0]).unwrap() + 0.7).abs() < 1e-6);
    }

    #[test]
    fn matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let t = rng.random_range(1..=30);
            let dim = rng.random_range(1..=3);
            let (cfg, xs, ys) = random_instance(&mut rng, t, dim);
            let gp = GpPosterior::fit(cfg, &xs, &ys).unwrap();
            let mut probes = xs.clone();
            probes.push((0..dim).map(|_| rng.random_range(-2.0..2.0)).collect());
            let (bm, bv) = gp.predict_batch(&probes).unwrap();
            for (j, x) in probes.iter().enumerate() {
                let (om, ov) = dense_oracle(&cfg, &xs, &ys, x);
                let (m, v) = gp.predict(x).unwrap();
                assert!((m - om).abs() < 1e-8, "mean {m} vs {om}");
                assert!((v - ov.max(0.0)).abs() < 1e-8, "var {v} vs {ov}");
                assert!((bm[j] - m).abs() < 1e-12 && (bv[j] - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn log_det_matches_dense_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let t = rng.random_range(1..=20);
            let (cfg, xs, ys) = random_instance(&mut rng, t, 2);
            let gp = GpPosterior::fit(cfg, &xs, &ys).unwrap();
            let k = cfg.kernel.gram(&xs).unwrap() / cfg.noise_variance + DMatrix::identity(t, t);
            let oracle = k.determinant().ln();
            assert!((gp.log_det_scaled() - oracle).abs() <= 1e-8 * oracle.abs().max(1.0));
        }
    }

    #[test]
    fn factor_reconstructs_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (cfg, xs, ys) = random_instance(&mut rng, 25, 2);
        let gp = GpPosterior::fit(cfg, &xs, &ys).unwrap();
        let l = gp.cholesky_factor();
        let mut k = cfg.kernel.gram(&xs).unwrap();
        for i in 0..xs.len() {
            k[(i, i)] += cfg.noise_variance;
        }
        assert!((l * l.transpose() - &k).norm() <= 1e-8 * k.norm());
    }

    #[test]
    fn more_data_never_increases_variance_or_decreases_log_det() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..30 {
            let (cfg, xs, ys) = random_instance(&mut rng, 12, 1);
            let probes: Vec<Vec<f64>> = crate::kernels::linspace(-2.0, 2.0, 41).into_iter().map(|x| vec![x]).collect();
            let mut prev_var = GpPosterior::prior(cfg).predict_batch(&probes).unwrap().1;
            let mut prev_ld = 0.0;
            for t in 1..=xs.len() {
                let gp = GpPosterior::fit(cfg, &xs[..t], &ys[..t]).unwrap();
                let var = gp.predict_batch(&probes).unwrap().1;
                for (a, b) in var.iter().zip(&prev_var) {
                    assert!(*a <= b + 1e-9);
                }
                assert!(gp.log_det_scaled() >= prev_ld - 1e-12);
                prev_var = var;
                prev_ld = gp.log_det_scaled();
            }
        }
    }

    #[test]
    fn interpolates_in_the_noise_free_limit() {
        let xs: Vec<Vec<f64>> = [-1.0, -0.3, 0.4, 1.2].iter().map(|x| vec![*x]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (2.0 * x[0]).sin()).collect();
        let gp = GpPosterior::fit(config(1e-8), &xs, &ys).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert!((gp.mean(x).unwrap() - y).abs() < 1e-3);
        }
    }

    #[test]
    fn duplicate_inputs_fit() {
        let xs = vec![vec![0.1]; 10];
        let gp = GpPosterior::fit(config(1e-6), &xs, &[1.0; 10]).unwrap();
        assert!(gp.variance(&[0.1]).unwrap() >= 0.0);
    }

    #[test]
    fn rejects_mismatched_data() {
        assert!(GpPosterior::fit(config(0.1), &[vec![0.0]], &[]).is_err());
        assert!(GpPosterior::fit(config(0.1), &[vec![0.0], vec![0.0, 1.0]], &[1.0, 2.0]).is_err());
        assert!(GpConfig::new(Kernel::squared_exponential(1.0, 1.0).unwrap(), 0.0).is_err());
        let gp = GpPosterior::fit(config(0.1), &[vec![0.0]], &[1.0]).unwrap();
        assert!(gp.predict(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (cfg, xs, ys) = random_instance(&mut rng, 8, 2);
            let gp = GpPosterior::fit(cfg, &xs, &ys).unwrap();
            let x = vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let (m, s, gm, gs) = gp.mean_std_with_grad(&x);
            let (pm, pv) = gp.predict(&x).unwrap();
            assert!((m - pm).abs() < 1e-12 && (s - pv.sqrt()).abs() < 1e-12);
            let h = 1e-6;
            for i in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let (mp, vp) = gp.predict(&xp).unwrap();
                let (mm, vm) = gp.predict(&xm).unwrap();
                assert!((gm[i] - (mp - mm) / (2.0 * h)).abs() < 1e-5);
                assert!((gs[i] - (vp.sqrt() - vm.sqrt()) / (2.0 * h)).abs() < 1e-5);
            }
        }
    }
}
