//! Exact Gaussian-process regression for a fixed kernel parameterization:
//! Cholesky-based log marginal likelihood and predictive posteriors.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::Result;
use crate::linalg::{cholesky_with_jitter, JitteredCholesky};
use crate::spectral::{gram_matrix, gram_train, NoiseModel, SpectralMixtureParams};

/// Whether predictions describe the latent function or noisy observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictMode {
    Latent,
    /// Adds the observation-noise variance on the predictive diagonal; used
    /// for held-out log-likelihoods.
    Observation,
}

/// Gaussian predictive posterior over a set of test points.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianPosterior {
    pub fn empty() -> Self {
        GaussianPosterior {
            mean: DVector::zeros(0),
            covariance: DMatrix::zeros(0, 0),
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn variances(&self) -> DVector<f64> {
        self.covariance.diagonal()
    }
}

/// A GP conditioned on a training set for one kernel parameterization.
/// Holds the factorized noisy Gram so repeated predictions are cheap.
pub struct FittedGp<'a> {
    theta: &'a SpectralMixtureParams,
    train: &'a Dataset,
    noise: NoiseModel,
    chol: JitteredCholesky,
    /// `K^{-1} y`.
    alpha: DVector<f64>,
}

impl<'a> FittedGp<'a> {
    pub fn fit(theta: &'a SpectralMixtureParams, train: &'a Dataset, noise: NoiseModel) -> Result<Self> {
        let gram = gram_train(theta, train, &noise);
        let chol = cholesky_with_jitter(&gram)?;
        let alpha = chol.solve_vec(&train.targets);
        Ok(FittedGp {
            theta,
            train,
            noise,
            chol,
            alpha,
        })
    }

    /// GP evidence: `-1/2 y^T K^{-1} y - 1/2 log|K| - n/2 log 2pi`.
    pub fn log_marginal(&self) -> f64 {
        let n = self.train.len() as f64;
        let fit = self.train.targets.dot(&self.alpha);
        -0.5 * fit - 0.5 * self.chol.log_det() - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }

    /// Full predictive posterior at `test_inputs`.
    pub fn predict(&self, test_inputs: &DMatrix<f64>, mode: PredictMode) -> GaussianPosterior {
        let m = test_inputs.nrows();
        if m == 0 {
            return GaussianPosterior::empty();
        }
        let cross = gram_matrix(self.theta, test_inputs, &self.train.inputs, &self.noise, false);
        let prior = gram_matrix(self.theta, test_inputs, test_inputs, &self.noise, false);
        let mean = &cross * &self.alpha;
        let solved = self.chol.solve_mat(&cross.transpose());
        let mut covariance = prior - &cross * solved;
        for i in 0..m {
            if mode == PredictMode::Observation {
                covariance[(i, i)] += self.noise.variance;
            }
            // Numerical cleanup: tiny negative diagonals are clipped to zero.
            if covariance[(i, i)] < 0.0 && covariance[(i, i)] > -1e-9 {
                covariance[(i, i)] = 0.0;
            }
        }
        GaussianPosterior { mean, covariance }
    }

    /// Per-point predictive means and variances (the diagonal path used for
    /// the marginalized mixture; stationarity makes the prior diagonal 1).
    pub fn predict_marginals(&self, test_inputs: &DMatrix<f64>, mode: PredictMode) -> (DVector<f64>, DVector<f64>) {
        let m = test_inputs.nrows();
        let cross = gram_matrix(self.theta, test_inputs, &self.train.inputs, &self.noise, false);
        let mean = &cross * &self.alpha;
        let solved = self.chol.solve_mat(&cross.transpose());
        let mut var = DVector::zeros(m);
        for i in 0..m {
            let reduction = cross.row(i).transpose().dot(&solved.column(i).into_owned());
            let mut v: f64 = 1.0 - reduction;
            if mode == PredictMode::Observation {
                v += self.noise.variance;
            }
            var[i] = v.max(0.0);
        }
        (mean, var)
    }
}

/// GP evidence for one parameterization.
pub fn log_marginal_likelihood(
    theta: &SpectralMixtureParams,
    train: &Dataset,
    noise: NoiseModel,
) -> Result<f64> {
    Ok(FittedGp::fit(theta, train, noise)?.log_marginal())
}

/// Predictive posterior for one parameterization.
pub fn predictive_posterior(
    theta: &SpectralMixtureParams,
    train: &Dataset,
    test_inputs: &DMatrix<f64>,
    noise: NoiseModel,
    mode: PredictMode,
) -> Result<GaussianPosterior> {
    Ok(FittedGp::fit(theta, train, noise)?.predict(test_inputs, mode))
}

/// Log-density of a scalar Gaussian.
pub fn gaussian_log_density(y: f64, mean: f64, variance: f64) -> f64 {
    let v = variance.max(1e-300);
    -0.5 * ((y - mean) * (y - mean) / v + v.ln() + (2.0 * std::f64::consts::PI).ln())
}

/// Draws noisy targets from the GP prior with kernel `theta` at the given
/// inputs; handy for synthetic benchmarks.
pub fn sample_targets(
    theta: &SpectralMixtureParams,
    inputs: &DMatrix<f64>,
    noise: NoiseModel,
    rng: &mut impl rand::Rng,
) -> Result<DVector<f64>> {
    use rand_distr::{Distribution, StandardNormal};
    let gram = gram_matrix(theta, inputs, inputs, &noise, false);
    let chol = cholesky_with_jitter(&gram)?;
    let white = DVector::from_fn(inputs.nrows(), |_, _| StandardNormal.sample(rng));
    let latent = chol.chol.l() * white;
    let sd = noise.variance.sqrt();
    Ok(DVector::from_fn(inputs.nrows(), |i, _| {
        let eps: f64 = StandardNormal.sample(rng);
        latent[i] + sd * eps
    }))
}
