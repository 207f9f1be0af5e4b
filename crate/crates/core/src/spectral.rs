//! Spectral-mixture kernel parameterizations.
//!
//! A kernel is represented by a symmetric Gaussian-mixture spectral density
//! with diagonal per-component covariances. The induced stationary kernel is
//! recovered in closed form; with weights on the simplex it satisfies
//! `k(0) = 1`, matching unit-variance targets.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::{DataSummary, Dataset};
use crate::error::{Error, Result};
use crate::qmc::ScrambledHalton;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// One point in kernel space: a symmetric spectral GMM with `n` components.
///
/// Components are kept in a canonical order (sorted by mean vector, then
/// scales, then weight) so serialization and caching are deterministic; all
/// kernel quantities are invariant to the order regardless.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralMixtureParams {
    n: usize,
    weights: Vec<f64>,
    /// Component mean frequencies, one row (length `dim`) per component.
    means: Vec<Vec<f64>>,
    /// Component scales (standard deviations), same layout as `means`.
    scales: Vec<Vec<f64>>,
}

impl SpectralMixtureParams {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, scales: Vec<Vec<f64>>) -> Result<Self> {
        let n = weights.len();
        if n == 0 {
            return Err(Error::InvalidParams("at least one component required".into()));
        }
        if means.len() != n || scales.len() != n {
            return Err(Error::InvalidParams(format!(
                "component count mismatch: {} weights, {} means, {} scales",
                n,
                means.len(),
                scales.len()
            )));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::InvalidParams("zero-dimensional components".into()));
        }
        if means.iter().any(|m| m.len() != dim) || scales.iter().any(|s| s.len() != dim) {
            return Err(Error::InvalidParams("ragged component matrices".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidParams("weights must be strictly positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParams(format!("weights sum to {total}, expected 1")));
        }
        if scales.iter().flatten().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidParams("scales must be strictly positive".into()));
        }
        if means.iter().flatten().any(|m| !m.is_finite()) {
            return Err(Error::InvalidParams("non-finite mean".into()));
        }
        let mut params = SpectralMixtureParams { n, weights, means, scales };
        params.canonicalize();
        Ok(params)
    }

    fn canonicalize(&mut self) {
        let mut order: Vec<usize> = (0..self.n).collect();
        order.sort_by(|&a, &b| {
            let key_a = (&self.means[a], &self.scales[a], self.weights[a]);
            let key_b = (&self.means[b], &self.scales[b], self.weights[b]);
            lex_cmp(key_a.0, key_b.0)
                .then_with(|| lex_cmp(key_a.1, key_b.1))
                .then_with(|| key_a.2.total_cmp(&key_b.2))
        });
        self.weights = order.iter().map(|&i| self.weights[i]).collect();
        self.means = order.iter().map(|&i| self.means[i].clone()).collect();
        self.scales = order.iter().map(|&i| self.scales[i].clone()).collect();
    }

    pub fn component_count(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn scales(&self) -> &[Vec<f64>] {
        &self.scales
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        let ord = x.total_cmp(y);
        if ord != std::cmp::Ordering::Equal {
            return ord;
        }
    }
    std::cmp::Ordering::Equal
}

impl<'de> Deserialize<'de> for SpectralMixtureParams {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        struct Raw {
            #[allow(dead_code)]
            n: usize,
            weights: Vec<f64>,
            means: Vec<Vec<f64>>,
            scales: Vec<Vec<f64>>,
        }
        let raw = Raw::deserialize(deserializer)?;
        SpectralMixtureParams::new(raw.weights, raw.means, raw.scales)
            .map_err(serde::de::Error::custom)
    }
}

/// Hyperprior over [`SpectralMixtureParams`], configured from data summaries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HyperPrior {
    /// Maximum number of mixture components `N`.
    pub max_components: usize,
    /// Dirichlet concentration over component weights.
    pub dirichlet_alpha: f64,
    /// Std dev of the zero-mean Gaussian over mean frequencies, per dimension.
    pub mean_sd: Vec<f64>,
    /// Location of the log-normal over scales, per dimension.
    pub scale_log_mean: Vec<f64>,
    /// Scale of the log-normal over scales (shared across dimensions).
    pub scale_log_sd: f64,
}

impl HyperPrior {
    /// Data-driven heuristics: mean frequencies get std dev `F_s / 5` so
    /// negligible mass lies above the identifiable frequency; scales are
    /// log-normal with location `ln(1 / window)` and scale `ln sqrt(2)`.
    pub fn from_summary(max_components: usize, dirichlet_alpha: f64, summary: &DataSummary) -> Result<Self> {
        let prior = HyperPrior {
            max_components,
            dirichlet_alpha,
            mean_sd: summary.nyquist.iter().map(|f| f / 5.0).collect(),
            scale_log_mean: summary.window.iter().map(|w| (1.0 / w).ln()).collect(),
            scale_log_sd: 2.0f64.sqrt().ln(),
        };
        prior.validate()?;
        Ok(prior)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_components == 0 {
            return Err(Error::InvalidParams("max_components must be positive".into()));
        }
        if !(self.dirichlet_alpha > 0.0) {
            return Err(Error::InvalidParams("dirichlet_alpha must be positive".into()));
        }
        if self.mean_sd.is_empty() || self.mean_sd.len() != self.scale_log_mean.len() {
            return Err(Error::InvalidParams("inconsistent prior dimensions".into()));
        }
        if self.mean_sd.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParams("mean_sd must be positive and finite".into()));
        }
        if self.scale_log_mean.iter().any(|m| !m.is_finite()) || !(self.scale_log_sd > 0.0) {
            return Err(Error::InvalidParams("invalid log-normal scale prior".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mean_sd.len()
    }

    fn validate_point(&self, theta: &SpectralMixtureParams) -> Result<()> {
        if theta.component_count() > self.max_components {
            return Err(Error::InvalidParams(format!(
                "{} components exceeds prior maximum {}",
                theta.component_count(),
                self.max_components
            )));
        }
        if theta.dim() != self.dim() {
            return Err(Error::InvalidParams(format!(
                "dimension mismatch: point has {}, prior has {}",
                theta.dim(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Global observation-noise model shared by every likelihood evaluation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseModel {
    pub variance: f64,
}

impl NoiseModel {
    pub fn new(variance: f64) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(Error::InvalidParams(format!("noise variance must be positive, got {variance}")));
        }
        Ok(NoiseModel { variance })
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel { variance: 0.01 }
    }
}

/// Draws `count` parameterizations from the hyperprior.
pub fn sample_prior(
    prior: &HyperPrior,
    rng: &mut impl Rng,
    count: usize,
) -> Result<Vec<SpectralMixtureParams>> {
    prior.validate()?;
    (0..count)
        .map(|_| {
            let n = rng.gen_range(1..=prior.max_components);
            sample_prior_with_n(prior, n, rng)
        })
        .collect()
}

/// Draws one parameterization with a fixed component count.
pub fn sample_prior_with_n(
    prior: &HyperPrior,
    n: usize,
    rng: &mut impl Rng,
) -> Result<SpectralMixtureParams> {
    let dim = prior.dim();
    let gamma = Gamma::new(prior.dirichlet_alpha, 1.0)
        .map_err(|e| Error::InvalidParams(e.to_string()))?;
    let weights = loop {
        let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && draws.iter().all(|g| *g > 0.0) {
            break draws.iter().map(|g| g / total).collect::<Vec<f64>>();
        }
    };
    let mut means = Vec::with_capacity(n);
    let mut scales = Vec::with_capacity(n);
    for _ in 0..n {
        let mut mean = Vec::with_capacity(dim);
        let mut scale = Vec::with_capacity(dim);
        for d in 0..dim {
            let normal = Normal::new(0.0, prior.mean_sd[d]).unwrap();
            mean.push(normal.sample(rng));
            let lognormal = LogNormal::new(prior.scale_log_mean[d], prior.scale_log_sd).unwrap();
            scale.push(lognormal.sample(rng));
        }
        means.push(mean);
        scales.push(scale);
    }
    SpectralMixtureParams::new(weights, means, scales)
}

/// Draws `count` parameterizations with low-discrepancy continuous
/// coordinates: a scrambled Halton stream feeds inverse CDFs for the weight
/// sticks (Beta), means (Normal), and scales (LogNormal). The discrete
/// component count falls back to pseudo-random draws.
pub fn sample_prior_qmc(
    prior: &HyperPrior,
    rng: &mut impl Rng,
    count: usize,
) -> Result<Vec<SpectralMixtureParams>> {
    use statrs::distribution::{Beta, ContinuousCDF, Normal as SNormal};

    prior.validate()?;
    let n_max = prior.max_components;
    let dim = prior.dim();
    // Blocks: n-1 weight sticks, n*dim means, n*dim scales.
    let qmc_dim = (n_max - 1) + 2 * n_max * dim;
    let mut halton = ScrambledHalton::new(qmc_dim.max(1), rng);
    let unit_normal = SNormal::new(0.0, 1.0).unwrap();

    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let n = rng.gen_range(1..=n_max);
        let point = halton.next_point();
        let (stick_block, rest) = point.split_at(n_max - 1);
        let (mean_block, scale_block) = rest.split_at(n_max * dim);

        // Stick-breaking over Beta marginals reproduces a symmetric Dirichlet.
        let mut weights = Vec::with_capacity(n);
        let mut remaining = 1.0;
        for i in 0..n {
            if i + 1 == n {
                weights.push(remaining);
            } else {
                let beta = Beta::new(
                    prior.dirichlet_alpha,
                    prior.dirichlet_alpha * (n - 1 - i) as f64,
                )
                .map_err(|e| Error::InvalidParams(e.to_string()))?;
                let v = beta.inverse_cdf(stick_block[i]).clamp(1e-12, 1.0 - 1e-12);
                weights.push(v * remaining);
                remaining *= 1.0 - v;
            }
        }

        let mut means = Vec::with_capacity(n);
        let mut scales = Vec::with_capacity(n);
        for j in 0..n {
            let mut mean = Vec::with_capacity(dim);
            let mut scale = Vec::with_capacity(dim);
            for d in 0..dim {
                let u_mean = mean_block[j * dim + d];
                mean.push(unit_normal.inverse_cdf(u_mean) * prior.mean_sd[d]);
                let u_scale = scale_block[j * dim + d];
                let log_scale = prior.scale_log_mean[d] + prior.scale_log_sd * unit_normal.inverse_cdf(u_scale);
                scale.push(log_scale.exp());
            }
            means.push(mean);
            scales.push(scale);
        }
        samples.push(SpectralMixtureParams::new(weights, means, scales)?);
    }
    Ok(samples)
}

/// Log-density of the generative model at `theta` (diagnostics only; the
/// quadrature itself needs prior samples, not densities).
pub fn prior_log_density(prior: &HyperPrior, theta: &SpectralMixtureParams) -> Result<f64> {
    prior.validate()?;
    prior.validate_point(theta)?;
    let n = theta.component_count();
    let alpha = prior.dirichlet_alpha;

    // Uniform over {1..N}.
    let mut log_density = -(prior.max_components as f64).ln();

    // Symmetric Dirichlet.
    log_density += ln_gamma(n as f64 * alpha) - n as f64 * ln_gamma(alpha);
    log_density += (alpha - 1.0) * theta.weights().iter().map(|w| w.ln()).sum::<f64>();

    let half_ln_two_pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    for j in 0..n {
        for d in 0..theta.dim() {
            let sd = prior.mean_sd[d];
            let m = theta.means()[j][d];
            log_density += -half_ln_two_pi - sd.ln() - m * m / (2.0 * sd * sd);

            let s = theta.scales()[j][d];
            let centered = s.ln() - prior.scale_log_mean[d];
            log_density += -s.ln()
                - prior.scale_log_sd.ln()
                - half_ln_two_pi
                - centered * centered / (2.0 * prior.scale_log_sd * prior.scale_log_sd);
        }
    }
    Ok(log_density)
}

/// Value of the symmetrized spectral density at frequency `omega`.
pub fn spectral_density(theta: &SpectralMixtureParams, omega: &[f64]) -> f64 {
    assert_eq!(omega.len(), theta.dim());
    let mut total = 0.0;
    for j in 0..theta.component_count() {
        let mut pos = 1.0;
        let mut neg = 1.0;
        for d in 0..theta.dim() {
            let sd = theta.scales()[j][d];
            let m = theta.means()[j][d];
            pos *= gaussian_pdf(omega[d], m, sd);
            neg *= gaussian_pdf(omega[d], -m, sd);
        }
        total += 0.5 * theta.weights()[j] * (pos + neg);
    }
    total
}

fn gaussian_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// Stationary kernel value at separation `rho`: the Fourier transform of the
/// symmetrized spectral GMM, evaluated in closed form. The density reflects
/// whole mean vectors about the origin, so the oscillation depends on the
/// frequency-separation dot product (not a per-dimension cosine product).
pub fn kernel_eval(theta: &SpectralMixtureParams, rho: &[f64]) -> f64 {
    assert_eq!(rho.len(), theta.dim());
    let mut total = 0.0;
    for j in 0..theta.component_count() {
        let mut envelope_exponent = 0.0;
        let mut phase = 0.0;
        for d in 0..theta.dim() {
            let sd = theta.scales()[j][d];
            let r = rho[d];
            envelope_exponent += sd * sd * r * r;
            phase += theta.means()[j][d] * r;
        }
        total += theta.weights()[j]
            * (-2.0 * std::f64::consts::PI.powi(2) * envelope_exponent).exp()
            * (TWO_PI * phase).cos();
    }
    total
}

/// Kernel Gram matrix between two input sets. With `add_noise` (valid when
/// `x1` and `x2` are the same set) the noise variance is added on the
/// diagonal.
pub fn gram_matrix(
    theta: &SpectralMixtureParams,
    x1: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    noise: &NoiseModel,
    add_noise: bool,
) -> DMatrix<f64> {
    let mut rho = vec![0.0; theta.dim()];
    let mut gram = DMatrix::zeros(x1.nrows(), x2.nrows());
    for i in 0..x1.nrows() {
        for j in 0..x2.nrows() {
            for d in 0..theta.dim() {
                rho[d] = x1[(i, d)] - x2[(j, d)];
            }
            gram[(i, j)] = kernel_eval(theta, &rho);
        }
    }
    if add_noise {
        debug_assert_eq!(x1.nrows(), x2.nrows());
        for i in 0..gram.nrows().min(gram.ncols()) {
            gram[(i, i)] += noise.variance;
        }
    }
    gram
}

/// Noisy training Gram `K + sigma_n^2 I`.
pub fn gram_train(theta: &SpectralMixtureParams, train: &Dataset, noise: &NoiseModel) -> DMatrix<f64> {
    gram_matrix(theta, &train.inputs, &train.inputs, noise, true)
}

/// Cross Gram between test and training inputs (no noise).
pub fn gram_cross(theta: &SpectralMixtureParams, test: &DMatrix<f64>, train: &Dataset) -> DMatrix<f64> {
    gram_matrix(theta, test, &train.inputs, &NoiseModel::default(), false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_summary() -> DataSummary {
        DataSummary {
            nyquist: vec![50.0],
            window: vec![1.0],
            count: 101,
        }
    }

    fn single_component(mean: f64, scale: f64) -> SpectralMixtureParams {
        SpectralMixtureParams::new(vec![1.0], vec![vec![mean]], vec![vec![scale]]).unwrap()
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(SpectralMixtureParams::new(vec![], vec![], vec![]).is_err());
        assert!(SpectralMixtureParams::new(vec![0.6, 0.6], vec![vec![0.0]; 2], vec![vec![1.0]; 2]).is_err());
        assert!(SpectralMixtureParams::new(vec![1.0], vec![vec![0.0]], vec![vec![-1.0]]).is_err());
        assert!(SpectralMixtureParams::new(vec![-0.5, 1.5], vec![vec![0.0]; 2], vec![vec![1.0]; 2]).is_err());
    }

    #[test]
    fn canonical_order_is_applied_on_construction() {
        let a = SpectralMixtureParams::new(
            vec![0.3, 0.7],
            vec![vec![2.0], vec![-1.0]],
            vec![vec![1.0], vec![0.5]],
        )
        .unwrap();
        let b = SpectralMixtureParams::new(
            vec![0.7, 0.3],
            vec![vec![-1.0], vec![2.0]],
            vec![vec![0.5], vec![1.0]],
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.means()[0][0], -1.0);
    }

    #[test]
    fn serialization_round_trips() {
        let theta = SpectralMixtureParams::new(
            vec![0.25, 0.75],
            vec![vec![0.1, -3.0], vec![2.0, 0.5]],
            vec![vec![1.5, 0.2], vec![0.9, 4.0]],
        )
        .unwrap();
        let json = serde_json::to_string(&theta).unwrap();
        assert!(json.contains("\"n\":2"));
        let back: SpectralMixtureParams = serde_json::from_str(&json).unwrap();
        assert_eq!(theta, back);
    }

    #[test]
    fn prior_with_one_component_is_degenerate() {
        let prior = HyperPrior::from_summary(1, 1.0, &toy_summary()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for theta in sample_prior(&prior, &mut rng, 50).unwrap() {
            assert_eq!(theta.component_count(), 1);
            assert_eq!(theta.weights(), &[1.0]);
        }
    }

    #[test]
    fn prior_component_counts_are_uniform() {
        let prior = HyperPrior::from_summary(5, 1.0, &toy_summary()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n_samples = 100_000;
        let samples = sample_prior(&prior, &mut rng, n_samples).unwrap();
        let se = (0.2f64 * 0.8 / n_samples as f64).sqrt();
        for n in 1..=5 {
            let freq = samples.iter().filter(|t| t.component_count() == n).count() as f64
                / n_samples as f64;
            assert!((freq - 0.2).abs() < 3.0 * se, "count {n}: freq {freq}");
        }
    }

    #[test]
    fn prior_mean_coordinates_have_expected_spread() {
        let prior = HyperPrior::from_summary(5, 1.0, &toy_summary()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples = sample_prior(&prior, &mut rng, 40_000).unwrap();
        // Pool every component's coordinate: the canonical component order is
        // sorted, so any single position is a biased order statistic.
        let coords: Vec<f64> = samples
            .iter()
            .flat_map(|t| t.means().iter().map(|m| m[0]))
            .collect();
        let n = coords.len() as f64;
        let mean = coords.iter().sum::<f64>() / n;
        let sd = (coords.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        let expected = 10.0; // F_s / 5
        let se = expected / (2.0 * n).sqrt();
        assert!((sd - expected).abs() < 3.0 * se, "sd {sd} vs {expected}");
    }

    #[test]
    fn qmc_samples_satisfy_invariants_and_match_marginals() {
        let prior = HyperPrior::from_summary(4, 1.0, &toy_summary()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples = sample_prior_qmc(&prior, &mut rng, 20_000).unwrap();
        for theta in &samples {
            let total: f64 = theta.weights().iter().sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
            assert!(theta.scales().iter().flatten().all(|s| *s > 0.0));
        }
        // Mean-coordinate spread should match the prior sd as for MC sampling.
        let coords: Vec<f64> = samples
            .iter()
            .flat_map(|t| t.means().iter().map(|m| m[0]))
            .collect();
        let n = coords.len() as f64;
        let mean = coords.iter().sum::<f64>() / n;
        let sd = (coords.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd - 10.0).abs() < 0.5, "sd {sd}");
    }

    #[test]
    fn prior_log_density_matches_statrs_factors() {
        use statrs::distribution::{Continuous, LogNormal as SLogNormal, Normal as SNormal};
        let prior = HyperPrior::from_summary(3, 1.0, &toy_summary()).unwrap();
        let theta = single_component(4.0, 0.7);
        let got = prior_log_density(&prior, &theta).unwrap();
        let expected = -(3f64.ln())
            + SNormal::new(0.0, 10.0).unwrap().ln_pdf(4.0)
            + SLogNormal::new(0.0, 2.0f64.sqrt().ln()).unwrap().ln_pdf(0.7);
        assert_relative_eq!(got, expected, epsilon = 1e-10);
    }

    #[test]
    fn dirichlet_term_vanishes_for_single_component_unit_alpha() {
        let prior = HyperPrior::from_summary(1, 1.0, &toy_summary()).unwrap();
        let theta = single_component(0.0, 1.0);
        // With N=1 the uniform term is ln(1)=0 too, so only the Normal and
        // LogNormal factors remain.
        use statrs::distribution::{Continuous, LogNormal as SLogNormal, Normal as SNormal};
        let expected = SNormal::new(0.0, 10.0).unwrap().ln_pdf(0.0)
            + SLogNormal::new(0.0, 2.0f64.sqrt().ln()).unwrap().ln_pdf(1.0);
        assert_relative_eq!(prior_log_density(&prior, &theta).unwrap(), expected, epsilon = 1e-10);
    }

    #[test]
    fn doubling_a_scale_shifts_only_the_lognormal_term() {
        let prior = HyperPrior::from_summary(2, 1.0, &toy_summary()).unwrap();
        let base = single_component(1.0, 0.5);
        let doubled = single_component(1.0, 1.0);
        let tau = prior.scale_log_sd;
        // Analytic difference of the two LogNormal log-pdfs.
        let ln_pdf = |s: f64| {
            let c = s.ln() - 0.0;
            -s.ln() - tau.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - c * c / (2.0 * tau * tau)
        };
        let expected_delta = ln_pdf(1.0) - ln_pdf(0.5);
        let delta = prior_log_density(&prior, &doubled).unwrap()
            - prior_log_density(&prior, &base).unwrap();
        assert_relative_eq!(delta, expected_delta, epsilon = 1e-10);
    }

    #[test]
    fn spectral_density_is_symmetric_and_normalized() {
        let theta = SpectralMixtureParams::new(
            vec![0.4, 0.6],
            vec![vec![1.5], vec![-0.3]],
            vec![vec![0.8], vec![0.4]],
        )
        .unwrap();
        for omega in [0.1, 0.9, 2.4, -1.7] {
            assert_relative_eq!(
                spectral_density(&theta, &[omega]),
                spectral_density(&theta, &[-omega]),
                epsilon = 1e-14
            );
        }
        // Trapezoid integral over a wide grid.
        let (lo, hi, steps) = (-30.0, 30.0, 60_000);
        let h = (hi - lo) / steps as f64;
        let mut integral = 0.0;
        for i in 0..=steps {
            let omega = lo + i as f64 * h;
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            integral += w * spectral_density(&theta, &[omega]) * h;
        }
        assert_abs_diff_eq!(integral, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn standard_normal_density_at_origin() {
        let theta = single_component(0.0, 1.0);
        assert_relative_eq!(
            spectral_density(&theta, &[0.0]),
            1.0 / (2.0 * std::f64::consts::PI).sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn kernel_at_zero_separation_is_one() {
        let theta = SpectralMixtureParams::new(
            vec![0.2, 0.5, 0.3],
            vec![vec![1.0, 2.0], vec![0.0, -1.0], vec![3.0, 0.5]],
            vec![vec![0.5, 1.0], vec![2.0, 0.1], vec![1.0, 1.0]],
        )
        .unwrap();
        assert_relative_eq!(kernel_eval(&theta, &[0.0, 0.0]), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_mean_component_reduces_to_rbf() {
        let theta = single_component(0.0, 0.7);
        for rho in [0.05, 0.3, 1.2] {
            let expected = (-2.0 * std::f64::consts::PI.powi(2) * 0.49 * rho * rho).exp();
            assert_relative_eq!(kernel_eval(&theta, &[rho]), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn gram_of_single_point_with_noise() {
        let theta = single_component(1.0, 1.0);
        let x = DMatrix::from_row_slice(1, 1, &[0.3]);
        let noise = NoiseModel::new(0.01).unwrap();
        let gram = gram_matrix(&theta, &x, &x, &noise, true);
        assert_relative_eq!(gram[(0, 0)], 1.01, epsilon = 1e-12);
    }

    #[test]
    fn noisy_gram_eigenvalues_stay_above_noise_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let prior = HyperPrior::from_summary(3, 1.0, &toy_summary()).unwrap();
        let theta = &sample_prior(&prior, &mut rng, 1).unwrap()[0];
        let x = DMatrix::from_fn(10, 1, |_, _| rng.gen::<f64>());
        let noise = NoiseModel::new(0.01).unwrap();
        let gram = gram_matrix(theta, &x, &x, &noise, true);
        assert_relative_eq!(gram[(3, 7)], gram[(7, 3)], epsilon = 1e-14);
        let min_eig = crate::linalg::min_symmetric_eigenvalue(&gram);
        assert!(min_eig >= 0.01 - 1e-8, "min eigenvalue {min_eig}");
    }

    proptest::proptest! {
        #[test]
        fn kernel_is_even_and_bounded(
            mean in -20.0f64..20.0,
            scale in 0.05f64..5.0,
            w in 0.05f64..0.95,
            rho in -3.0f64..3.0,
        ) {
            let theta = SpectralMixtureParams::new(
                vec![w, 1.0 - w],
                vec![vec![mean], vec![-0.5 * mean]],
                vec![vec![scale], vec![scale * 2.0]],
            ).unwrap();
            let k_pos = kernel_eval(&theta, &[rho]);
            let k_neg = kernel_eval(&theta, &[-rho]);
            proptest::prop_assert!((k_pos - k_neg).abs() < 1e-12);
            proptest::prop_assert!(k_pos.abs() <= 1.0 + 1e-12);
        }

        #[test]
        fn prior_samples_satisfy_invariants(seed in 0u64..1000) {
            let prior = HyperPrior::from_summary(5, 1.0, &DataSummary {
                nyquist: vec![50.0, 10.0],
                window: vec![1.0, 0.8],
                count: 50,
            }).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for theta in sample_prior(&prior, &mut rng, 5).unwrap() {
                let total: f64 = theta.weights().iter().sum();
                proptest::prop_assert!((total - 1.0).abs() < 1e-9);
                proptest::prop_assert!(theta.weights().iter().all(|w| *w > 0.0));
                proptest::prop_assert!(theta.scales().iter().flatten().all(|s| *s > 0.0));
                proptest::prop_assert!(theta.component_count() >= 1 && theta.component_count() <= 5);
            }
        }
    }
}
