//! Square-root-warped Bayesian quadrature over kernel space.
//!
//! Likelihood observations are rescaled by their maximum (so the largest
//! shifted likelihood is exactly 1), offset by `epsilon`, and mapped through
//! `z = sqrt(2(L - epsilon))`. A GP over `z` with the hyper-kernel then gives
//! closed-form moments for the evidence integral once the kernel integrals
//! against the prior are estimated by (quasi) Monte Carlo.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hyperkernel::{
    build_stack, gram_from_stacks, kernel_from_stacks, HyperKernelParams, ParamStack,
    SURROGATE_NOISE_VARIANCE,
};
use crate::linalg::{cholesky_with_jitter, JitteredCholesky};
use crate::spectral::{sample_prior_qmc, HyperPrior, SpectralMixtureParams};

/// Fraction of the smallest shifted likelihood used as the warp offset.
pub const DEFAULT_EPSILON_FACTOR: f64 = 0.8;

/// Row-block size for the pairwise double-integral accumulation.
const DOUBLE_INTEGRAL_BLOCK: usize = 256;

/// The warped surrogate conditioned on all evaluated kernels.
pub struct SurrogateState {
    thetas: Vec<SpectralMixtureParams>,
    stacks: Vec<ParamStack>,
    log_likelihoods: Vec<f64>,
    shared_log_shift: f64,
    likelihoods: DVector<f64>,
    epsilon: f64,
    z: DVector<f64>,
    hyper: HyperKernelParams,
    chol: JitteredCholesky,
    /// `K^{-1} z`.
    beta: DVector<f64>,
}

impl SurrogateState {
    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn thetas(&self) -> &[SpectralMixtureParams] {
        &self.thetas
    }

    pub fn log_likelihoods(&self) -> &[f64] {
        &self.log_likelihoods
    }

    pub fn shared_log_shift(&self) -> f64 {
        self.shared_log_shift
    }

    /// Shifted-scale likelihoods (maximum exactly 1).
    pub fn likelihoods(&self) -> &DVector<f64> {
        &self.likelihoods
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn z(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn hyper(&self) -> &HyperKernelParams {
        &self.hyper
    }

    pub(crate) fn chol(&self) -> &JitteredCholesky {
        &self.chol
    }

    pub(crate) fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub(crate) fn stacks(&self) -> &[ParamStack] {
        &self.stacks
    }

    /// Covariances `kappa(theta, Theta_i)` against the observation set.
    pub(crate) fn cross_from_stack(&self, stack: &ParamStack) -> DVector<f64> {
        DVector::from_fn(self.len(), |i, _| {
            kernel_from_stacks(stack, &self.stacks[i], &self.hyper)
        })
    }

    /// Posterior mean and variance of the unwarped surrogate at `theta`.
    pub fn surrogate_mean_var(&self, theta: &SpectralMixtureParams) -> (f64, f64) {
        let stack = build_stack(theta, self.hyper.symmetrize);
        let cross = self.cross_from_stack(&stack);
        let mean = cross.dot(&self.beta);
        let solved = self.chol.solve_vec(&cross);
        let prior_var = self.hyper.output_scale * self.hyper.output_scale;
        let var = (prior_var - cross.dot(&solved)).max(0.0);
        (mean, var)
    }

    /// Linearized moments of the likelihood surrogate at `theta`:
    /// mean `epsilon + mu^2/2` and variance `mu^2 Sigma`.
    pub fn warped_moments(&self, theta: &SpectralMixtureParams) -> (f64, f64) {
        let (mu, var) = self.surrogate_mean_var(theta);
        (self.epsilon + 0.5 * mu * mu, mu * mu * var)
    }

    /// Linearized cross-covariance matrix of the likelihood surrogate over a
    /// set of points, `K[i,j] = mu_i Sigma_ij mu_j`, plus the warped means.
    pub fn warped_cross_cov(&self, thetas: &[SpectralMixtureParams]) -> (Vec<f64>, DMatrix<f64>) {
        let stacks: Vec<ParamStack> = thetas
            .iter()
            .map(|t| build_stack(t, self.hyper.symmetrize))
            .collect();
        let cross = gram_from_stacks(&stacks, &self.stacks, &self.hyper); // b x h
        let prior = gram_from_stacks(&stacks, &stacks, &self.hyper); // b x b
        let mu = &cross * &self.beta;
        let solved = self.chol.solve_mat(&cross.transpose()); // h x b
        let sigma = prior - &cross * solved;
        let means: Vec<f64> = mu.iter().map(|m| self.epsilon + 0.5 * m * m).collect();
        let mut cov = DMatrix::zeros(thetas.len(), thetas.len());
        for i in 0..thetas.len() {
            for j in 0..thetas.len() {
                cov[(i, j)] = mu[i] * sigma[(i, j)] * mu[j];
            }
        }
        (means, cov)
    }
}

/// Builds the surrogate from raw log-likelihoods with the default offset.
pub fn make_surrogate(
    thetas: Vec<SpectralMixtureParams>,
    log_likelihoods: &[f64],
    hyper: HyperKernelParams,
) -> Result<SurrogateState> {
    make_surrogate_with(thetas, log_likelihoods, hyper, DEFAULT_EPSILON_FACTOR)
}

/// Shift, shifted likelihoods, offset, and warped observations for a set of
/// raw log-likelihoods. Shared by the surrogate builder and the
/// hyperparameter refresh (the warped values do not depend on the kernel).
pub fn warped_observations(
    log_likelihoods: &[f64],
    epsilon_factor: f64,
) -> Result<(f64, DVector<f64>, f64, DVector<f64>)> {
    if log_likelihoods.is_empty() {
        return Err(Error::InvalidParams("no likelihood observations".into()));
    }
    if !(0.0..1.0).contains(&epsilon_factor) {
        return Err(Error::InvalidParams(format!(
            "epsilon factor must lie in [0, 1), got {epsilon_factor}"
        )));
    }
    if log_likelihoods.iter().any(|l| l.is_nan()) {
        return Err(Error::DegenerateSurrogate("NaN log-likelihood".into()));
    }
    let shared_log_shift = log_likelihoods.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !shared_log_shift.is_finite() {
        return Err(Error::DegenerateSurrogate(
            "all log-likelihoods are -inf; increase the evaluation budget".into(),
        ));
    }
    let likelihoods = DVector::from_iterator(
        log_likelihoods.len(),
        log_likelihoods.iter().map(|l| (l - shared_log_shift).exp()),
    );
    let min_l = likelihoods.min();
    let epsilon = epsilon_factor * min_l;
    let z = likelihoods.map(|l| (2.0 * (l - epsilon)).sqrt());
    Ok((shared_log_shift, likelihoods, epsilon, z))
}

/// Builds the surrogate with an explicit epsilon factor in `[0, 1)`.
pub fn make_surrogate_with(
    thetas: Vec<SpectralMixtureParams>,
    log_likelihoods: &[f64],
    hyper: HyperKernelParams,
    epsilon_factor: f64,
) -> Result<SurrogateState> {
    hyper.validate()?;
    if thetas.is_empty() || thetas.len() != log_likelihoods.len() {
        return Err(Error::InvalidParams(format!(
            "{} locations vs {} likelihoods",
            thetas.len(),
            log_likelihoods.len()
        )));
    }
    let (shared_log_shift, likelihoods, epsilon, z) =
        warped_observations(log_likelihoods, epsilon_factor)?;

    let stacks: Vec<ParamStack> = thetas.iter().map(|t| build_stack(t, hyper.symmetrize)).collect();
    let mut gram = gram_from_stacks(&stacks, &stacks, &hyper);
    for i in 0..gram.nrows() {
        gram[(i, i)] += SURROGATE_NOISE_VARIANCE;
    }
    let chol = cholesky_with_jitter(&gram)?;
    let beta = chol.solve_vec(&z);

    Ok(SurrogateState {
        thetas,
        stacks,
        log_likelihoods: log_likelihoods.to_vec(),
        shared_log_shift,
        likelihoods,
        epsilon,
        z,
        hyper,
        chol,
        beta,
    })
}

/// Monte-Carlo estimates of the kernel integrals against the prior, shared by
/// the evidence posterior and the acquisition within one round.
pub struct McIntegralCache {
    samples: Vec<SpectralMixtureParams>,
    sample_stacks: Vec<ParamStack>,
    /// `m x h` cross kernel between samples and observations.
    kernel_cross: DMatrix<f64>,
    /// `(1/m) sum_s kappa_{s Theta}^T kappa_{s Theta}`.
    single_integral: DMatrix<f64>,
    /// `(1/m^2) sum_{s,t} kappa(s,t) kappa_{s Theta}^T kappa_{t Theta}`.
    double_integral: DMatrix<f64>,
}

impl McIntegralCache {
    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[SpectralMixtureParams] {
        &self.samples
    }

    pub(crate) fn sample_stacks(&self) -> &[ParamStack] {
        &self.sample_stacks
    }

    pub fn kernel_cross(&self) -> &DMatrix<f64> {
        &self.kernel_cross
    }

    pub fn single_integral(&self) -> &DMatrix<f64> {
        &self.single_integral
    }

    pub fn double_integral(&self) -> &DMatrix<f64> {
        &self.double_integral
    }
}

/// Draws `m` quasi-random prior samples and accumulates the kernel-integral
/// matrices against the surrogate's observation set.
pub fn build_mc_cache(
    state: &SurrogateState,
    prior: &HyperPrior,
    m: usize,
    rng: &mut impl Rng,
) -> Result<McIntegralCache> {
    if m < 2 {
        return Err(Error::InvalidParams("need at least 2 MC samples".into()));
    }
    let h = state.len();
    let samples = sample_prior_qmc(prior, rng, m)?;
    let sample_stacks: Vec<ParamStack> = samples
        .iter()
        .map(|t| build_stack(t, state.hyper.symmetrize))
        .collect();

    let kernel_cross = gram_from_stacks(&sample_stacks, state.stacks(), &state.hyper); // m x h
    let single_integral = kernel_cross.tr_mul(&kernel_cross) / m as f64;

    // Blocked pairwise accumulation keeps memory at O(block * m).
    let mut double_integral = DMatrix::zeros(h, h);
    let mut block_start = 0;
    while block_start < m {
        let block_len = DOUBLE_INTEGRAL_BLOCK.min(m - block_start);
        let mut w_block = vec![0.0; block_len * m];
        w_block
            .par_chunks_mut(m)
            .enumerate()
            .for_each(|(local, row)| {
                let s = block_start + local;
                for (t, v) in row.iter_mut().enumerate() {
                    *v = kernel_from_stacks(&sample_stacks[s], &sample_stacks[t], &state.hyper);
                }
            });
        let w = DMatrix::from_row_slice(block_len, m, &w_block);
        let c_block = kernel_cross.rows(block_start, block_len).into_owned();
        double_integral += c_block.tr_mul(&(w * &kernel_cross));
        block_start += block_len;
    }
    double_integral /= (m * m) as f64;

    Ok(McIntegralCache {
        samples,
        sample_stacks,
        kernel_cross,
        single_integral,
        double_integral,
    })
}

/// Quadrature weights `Q = K^{-1} S K^{-1}`; `S` is the single integral.
#[derive(Debug, Clone)]
pub struct QuadratureArtifacts {
    pub q: DMatrix<f64>,
}

pub fn quadrature_weights(state: &SurrogateState, cache: &McIntegralCache) -> QuadratureArtifacts {
    let x = state.chol.solve_mat(cache.single_integral());
    let q_raw = state.chol.solve_mat(&x.transpose());
    let q = (&q_raw + q_raw.transpose()) * 0.5;
    QuadratureArtifacts { q }
}

/// Gaussian posterior over the evidence integral, on the shifted scale.
#[derive(Debug, Clone, Serialize)]
pub struct EvidenceEstimate {
    /// Posterior mean of the integral of the shifted likelihood.
    pub mean: f64,
    /// Posterior variance, clipped at zero.
    pub variance: f64,
    /// Pre-clip variance, kept for diagnostics.
    pub raw_variance: f64,
    /// Add to `ln(mean)` to recover the unshifted log-evidence.
    pub shared_log_shift: f64,
}

impl EvidenceEstimate {
    /// Log-evidence on the original (unshifted) scale.
    pub fn log_mean(&self) -> f64 {
        self.mean.ln() + self.shared_log_shift
    }

    /// Delta-method standard deviation of the log-evidence.
    pub fn log_sd(&self) -> f64 {
        self.variance.sqrt() / self.mean
    }
}

pub fn evidence_moments(
    state: &SurrogateState,
    cache: &McIntegralCache,
    artifacts: &QuadratureArtifacts,
) -> EvidenceEstimate {
    let z = state.z();
    let mean = state.epsilon + 0.5 * z.dot(&(&artifacts.q * z));

    let beta = state.beta();
    let s_beta = cache.single_integral() * beta;
    let raw_variance = beta.dot(&(cache.double_integral() * beta))
        - s_beta.dot(&state.chol.solve_vec(&s_beta));
    EvidenceEstimate {
        mean,
        variance: raw_variance.max(0.0),
        raw_variance,
        shared_log_shift: state.shared_log_shift,
    }
}

/// Integral posterior mean for a warped numerator that reuses the evidence
/// quadrature weights: inputs are `p(y|theta_i) * L_i` on the shifted scale.
pub fn numerator_weights_reuse(
    state: &SurrogateState,
    artifacts: &QuadratureArtifacts,
    per_test_products: &[f64],
) -> f64 {
    debug_assert_eq!(per_test_products.len(), state.len());
    let z_star = DVector::from_iterator(
        per_test_products.len(),
        per_test_products
            .iter()
            .map(|p| (2.0 * (p.max(state.epsilon) - state.epsilon)).sqrt()),
    );
    state.epsilon + 0.5 * z_star.dot(&(&artifacts.q * &z_star))
}
