//! Marginalized predictive posterior and evaluation metrics.
//!
//! The evidence-weighted predictive at each test point is a signed Gaussian
//! mixture: one component per pair of evaluated kernels, built from the
//! pointwise product of their predictive densities, weighted by
//! `Q_ij z_i z_j` and the product's mass. Normalizing the signed weights to
//! sum to one absorbs the warp offset, which distributes proportionally over
//! the pairs; with a single evaluated kernel the mixture collapses exactly to
//! that kernel's GP predictive.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{Dataset, NormalizationRecord};
use crate::error::{Error, Result};
use crate::gp::{FittedGp, GaussianPosterior, PredictMode};
use crate::linalg::pairwise_sum;
use crate::quadrature::{QuadratureArtifacts, SurrogateState};
use crate::spectral::NoiseModel;

/// Density floor applied before logarithms; signed mixtures can dip
/// nonpositive in the tails.
pub const DENSITY_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy)]
pub struct MixtureComponent {
    /// Normalized signed weight.
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

/// Signed Gaussian mixture for one test point; weights sum to 1.
#[derive(Debug, Clone)]
pub struct PointMixture {
    pub components: Vec<MixtureComponent>,
    /// Total signed mass before normalization (numerator of the ratio).
    pub normalizer: f64,
}

impl PointMixture {
    pub fn density(&self, y: f64) -> f64 {
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                let z = (y - c.mean) / c.variance.sqrt();
                c.weight * (-0.5 * z * z).exp() / (c.variance * 2.0 * std::f64::consts::PI).sqrt()
            })
            .collect();
        pairwise_sum(&terms)
    }

    /// First two moments of the signed mixture; the variance is clamped at
    /// zero (negative quadrature weights can push it below in pathologies).
    pub fn moments(&self) -> (f64, f64) {
        let mean: f64 = pairwise_sum(
            &self.components.iter().map(|c| c.weight * c.mean).collect::<Vec<_>>(),
        );
        let second: f64 = pairwise_sum(
            &self
                .components
                .iter()
                .map(|c| c.weight * (c.variance + c.mean * c.mean))
                .collect::<Vec<_>>(),
        );
        (mean, (second - mean * mean).max(0.0))
    }
}

/// Marginalized predictive over all test points.
#[derive(Debug, Clone)]
pub struct PredictiveMixture {
    pub points: Vec<PointMixture>,
    /// Pairs dropped by the low-weight truncation, summed over points.
    pub truncated_components: usize,
}

/// Metrics on held-out data, in normalized target units.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub test_log_likelihood: f64,
    /// Test points whose mixture density was floored before the log.
    pub floored_points: usize,
}

impl Metrics {
    /// Maps normalized-unit metrics back to raw target units: RMSE scales by
    /// the target scale, the log-likelihood shifts by `-k ln(scale)`.
    pub fn denormalized(&self, record: &NormalizationRecord, test_count: usize) -> Metrics {
        Metrics {
            rmse: self.rmse * record.target_scale,
            test_log_likelihood: self.test_log_likelihood
                - test_count as f64 * record.target_scale.ln(),
            floored_points: self.floored_points,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MixtureOptions {
    /// Pairs with `|weight| < threshold * max |weight|` are dropped.
    pub truncation_threshold: f64,
}

impl Default for MixtureOptions {
    fn default() -> Self {
        MixtureOptions {
            truncation_threshold: 1e-12,
        }
    }
}

/// Gaussian product-pair component: mass, mean, and variance of
/// `sqrt(N_i * N_j)` for two scalar Gaussians.
fn pair_component(mu_i: f64, var_i: f64, mu_j: f64, var_j: f64) -> (f64, f64, f64) {
    let var_sum = var_i + var_j;
    let variance = 2.0 * var_i * var_j / var_sum;
    let mean = (mu_i * var_j + mu_j * var_i) / var_sum;
    let delta = mu_i - mu_j;
    let mass = (2.0 * (var_i * var_j).sqrt() / var_sum).sqrt()
        * (-delta * delta / (4.0 * var_sum)).exp();
    (mass, mean, variance)
}

/// Assembles the per-test-point predictive mixtures from per-kernel GP
/// posteriors and the shared quadrature weights.
pub fn predictive_posterior_marginalized(
    state: &SurrogateState,
    artifacts: &QuadratureArtifacts,
    train: &Dataset,
    test_inputs: &DMatrix<f64>,
    noise: NoiseModel,
    options: &MixtureOptions,
) -> Result<PredictiveMixture> {
    let h = state.len();
    let n_test = test_inputs.nrows();

    // Per-kernel predictive marginals, in observation mode (the mixture is
    // used for held-out log-likelihoods).
    let marginals: Vec<(DVector<f64>, DVector<f64>)> = state
        .thetas()
        .par_iter()
        .map(|theta| {
            let gp = FittedGp::fit(theta, train, noise)?;
            Ok(gp.predict_marginals(test_inputs, PredictMode::Observation))
        })
        .collect::<Result<_>>()?;

    let z = state.z();
    let q = &artifacts.q;

    let points: Vec<Result<(PointMixture, usize)>> = (0..n_test)
        .into_par_iter()
        .map(|pt| {
            let mut weights: Vec<f64> = Vec::with_capacity(h * (h + 1) / 2);
            let mut comps: Vec<(f64, f64)> = Vec::with_capacity(h * (h + 1) / 2);
            for i in 0..h {
                let (mu_i, var_i) = (marginals[i].0[pt], marginals[i].1[pt]);
                for j in i..h {
                    let (mu_j, var_j) = (marginals[j].0[pt], marginals[j].1[pt]);
                    let (mass, mean, variance) = pair_component(mu_i, var_i, mu_j, var_j);
                    let sym = if i == j { 1.0 } else { 2.0 };
                    let w = sym * q[(i, j)] * z[i] * z[j] * mass;
                    weights.push(w);
                    comps.push((mean, variance));
                }
            }
            let max_abs = weights.iter().fold(0.0f64, |a, w| a.max(w.abs()));
            if !(max_abs > 0.0) || !max_abs.is_finite() {
                return Err(Error::DegenerateSurrogate(
                    "all predictive mixture weights vanished; increase the likelihood evaluation budget"
                        .into(),
                ));
            }
            let cutoff = options.truncation_threshold * max_abs;
            let mut kept_weights = Vec::new();
            let mut kept = Vec::new();
            let mut truncated = 0usize;
            for (w, (mean, variance)) in weights.iter().zip(&comps) {
                if w.abs() >= cutoff {
                    kept_weights.push(*w);
                    kept.push((*mean, *variance));
                } else {
                    truncated += 1;
                }
            }
            let normalizer = pairwise_sum(&kept_weights);
            if !(normalizer > 0.0) || !normalizer.is_finite() {
                return Err(Error::DegenerateSurrogate(format!(
                    "predictive mixture normalizer {normalizer} at test point {pt}; increase the likelihood evaluation budget"
                )));
            }
            let components: Vec<MixtureComponent> = kept_weights
                .iter()
                .zip(&kept)
                .map(|(w, (mean, variance))| MixtureComponent {
                    weight: w / normalizer,
                    mean: *mean,
                    variance: *variance,
                })
                .collect();
            Ok((
                PointMixture {
                    components,
                    normalizer,
                },
                truncated,
            ))
        })
        .collect();

    let mut mixture = PredictiveMixture {
        points: Vec::with_capacity(n_test),
        truncated_components: 0,
    };
    for entry in points {
        let (point, truncated) = entry?;
        mixture.truncated_components += truncated;
        mixture.points.push(point);
    }
    Ok(mixture)
}

/// Collapses each point's mixture to its first two moments; the covariance is
/// diagonal.
pub fn moment_matched(pm: &PredictiveMixture) -> GaussianPosterior {
    let n = pm.points.len();
    let mut mean = DVector::zeros(n);
    let mut covariance = DMatrix::zeros(n, n);
    for (i, point) in pm.points.iter().enumerate() {
        let (m, v) = point.moments();
        mean[i] = m;
        covariance[(i, i)] = v;
    }
    GaussianPosterior { mean, covariance }
}

/// RMSE of the mixture means and total log-density of the targets.
pub fn metrics(pm: &PredictiveMixture, test_targets: &DVector<f64>) -> Metrics {
    assert_eq!(pm.points.len(), test_targets.len());
    let mut floored = 0usize;
    let sq_errors: Vec<f64> = pm
        .points
        .iter()
        .zip(test_targets.iter())
        .map(|(point, y)| {
            let (mean, _) = point.moments();
            (mean - y) * (mean - y)
        })
        .collect();
    let log_densities: Vec<f64> = pm
        .points
        .iter()
        .zip(test_targets.iter())
        .map(|(point, y)| {
            let d = point.density(*y);
            if d < DENSITY_FLOOR {
                floored += 1;
            }
            d.max(DENSITY_FLOOR).ln()
        })
        .collect();
    Metrics {
        rmse: (pairwise_sum(&sq_errors) / pm.points.len() as f64).sqrt(),
        test_log_likelihood: pairwise_sum(&log_densities),
        floored_points: floored,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::data::DataSummary;
    use crate::gp::gaussian_log_density;
    use crate::hyperkernel::HyperKernelParams;
    use crate::quadrature::{build_mc_cache, make_surrogate, quadrature_weights};
    use crate::spectral::{sample_prior, HyperPrior};

    fn toy_prior() -> HyperPrior {
        HyperPrior::from_summary(
            3,
            1.0,
            &DataSummary {
                nyquist: vec![5.0],
                window: vec![1.0],
                count: 20,
            },
        )
        .unwrap()
    }

    fn toy_train(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Dataset::new(
            DMatrix::from_fn(n, 1, |_, _| rng.gen::<f64>()),
            DVector::from_fn(n, |_, _| rng.gen::<f64>() * 2.0 - 1.0),
        )
    }

    fn build_fixture(
        h: usize,
        seed: u64,
    ) -> (SurrogateState, QuadratureArtifacts, Dataset, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prior = toy_prior();
        let train = toy_train(12, seed + 1);
        let noise = NoiseModel::default();
        let thetas = sample_prior(&prior, &mut rng, h).unwrap();
        let logl: Vec<f64> = thetas
            .iter()
            .map(|t| crate::gp::log_marginal_likelihood(t, &train, noise).unwrap())
            .collect();
        let state = make_surrogate(thetas, &logl, HyperKernelParams::default()).unwrap();
        let cache = build_mc_cache(&state, &prior, 128, &mut rng).unwrap();
        let artifacts = quadrature_weights(&state, &cache);
        let test = DMatrix::from_fn(4, 1, |i, _| 0.1 + 0.25 * i as f64);
        (state, artifacts, train, test)
    }

    #[test]
    fn single_kernel_collapses_to_its_gp_predictive() {
        let (state, artifacts, train, test) = build_fixture(1, 0);
        let noise = NoiseModel::default();
        let pm = predictive_posterior_marginalized(
            &state,
            &artifacts,
            &train,
            &test,
            noise,
            &MixtureOptions::default(),
        )
        .unwrap();
        let gp = FittedGp::fit(&state.thetas()[0], &train, noise).unwrap();
        let (mean, var) = gp.predict_marginals(&test, PredictMode::Observation);
        for (pt, point) in pm.points.iter().enumerate() {
            assert_eq!(point.components.len(), 1);
            assert_relative_eq!(point.components[0].weight, 1.0, epsilon = 1e-12);
            assert_relative_eq!(point.components[0].mean, mean[pt], epsilon = 1e-12);
            assert_relative_eq!(point.components[0].variance, var[pt], epsilon = 1e-12);
            for y in [-1.0, 0.0, 0.7] {
                assert_relative_eq!(
                    point.density(y),
                    gaussian_log_density(y, mean[pt], var[pt]).exp(),
                    max_relative = 1e-10
                );
            }
        }
    }

    #[test]
    fn duplicated_kernel_matches_single_kernel() {
        let (state1, artifacts1, train, test) = build_fixture(1, 3);
        let noise = NoiseModel::default();
        let pm1 = predictive_posterior_marginalized(
            &state1,
            &artifacts1,
            &train,
            &test,
            noise,
            &MixtureOptions::default(),
        )
        .unwrap();

        // Same kernel twice with the same likelihood.
        let theta = state1.thetas()[0].clone();
        let logl = state1.log_likelihoods()[0];
        let state2 = make_surrogate(
            vec![theta.clone(), theta],
            &[logl, logl],
            *state1.hyper(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cache2 = build_mc_cache(&state2, &toy_prior(), 128, &mut rng).unwrap();
        let artifacts2 = quadrature_weights(&state2, &cache2);
        let pm2 = predictive_posterior_marginalized(
            &state2,
            &artifacts2,
            &train,
            &test,
            noise,
            &MixtureOptions::default(),
        )
        .unwrap();
        for (p1, p2) in pm1.points.iter().zip(&pm2.points) {
            for y in [-0.5, 0.2, 1.3] {
                assert_relative_eq!(p1.density(y), p2.density(y), max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn densities_integrate_to_one() {
        let (state, artifacts, train, test) = build_fixture(6, 5);
        let pm = predictive_posterior_marginalized(
            &state,
            &artifacts,
            &train,
            &test,
            NoiseModel::default(),
            &MixtureOptions::default(),
        )
        .unwrap();
        for point in &pm.points {
            let (mean, var) = point.moments();
            let sd = var.sqrt().max(1e-3);
            let (lo, hi, steps) = (mean - 10.0 * sd, mean + 10.0 * sd, 4000);
            let hstep = (hi - lo) / steps as f64;
            let mut integral = 0.0;
            for i in 0..=steps {
                let y = lo + i as f64 * hstep;
                let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
                integral += w * point.density(y) * hstep;
            }
            assert_abs_diff_eq!(integral, 1.0, epsilon = 1e-3);
        }
    }

    #[test]
    fn normalized_weights_sum_to_one() {
        let (state, artifacts, train, test) = build_fixture(5, 6);
        let pm = predictive_posterior_marginalized(
            &state,
            &artifacts,
            &train,
            &test,
            NoiseModel::default(),
            &MixtureOptions::default(),
        )
        .unwrap();
        for point in &pm.points {
            let total: f64 = point.components.iter().map(|c| c.weight).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
            assert!(point.components.iter().all(|c| c.variance > 0.0));
            assert!(point.normalizer > 0.0);
        }
    }

    #[test]
    fn moment_matching_identities() {
        // Single component: identity.
        let single = PointMixture {
            components: vec![MixtureComponent {
                weight: 1.0,
                mean: 0.3,
                variance: 0.5,
            }],
            normalizer: 1.0,
        };
        let (m, v) = single.moments();
        assert_relative_eq!(m, 0.3, epsilon = 1e-14);
        assert_relative_eq!(v, 0.5, epsilon = 1e-14);

        // Equal-weight components at +-a with variance s^2.
        let a = 1.3;
        let s2 = 0.4;
        let two = PointMixture {
            components: vec![
                MixtureComponent { weight: 0.5, mean: a, variance: s2 },
                MixtureComponent { weight: 0.5, mean: -a, variance: s2 },
            ],
            normalizer: 1.0,
        };
        let (m2, v2) = two.moments();
        assert_abs_diff_eq!(m2, 0.0, epsilon = 1e-14);
        assert_relative_eq!(v2, s2 + a * a, epsilon = 1e-12);
    }

    #[test]
    fn moment_matching_agrees_with_sampling_oracle() {
        let mix = PointMixture {
            components: vec![
                MixtureComponent { weight: 0.2, mean: -1.0, variance: 0.3 },
                MixtureComponent { weight: 0.5, mean: 0.4, variance: 1.2 },
                MixtureComponent { weight: 0.3, mean: 2.0, variance: 0.05 },
            ],
            normalizer: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let u: f64 = rng.gen();
            let comp = if u < 0.2 {
                &mix.components[0]
            } else if u < 0.7 {
                &mix.components[1]
            } else {
                &mix.components[2]
            };
            let noise: f64 =
                rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
            let draw = comp.mean + comp.variance.sqrt() * noise;
            sum += draw;
            sum_sq += draw * draw;
        }
        let sample_mean = sum / n as f64;
        let sample_var = sum_sq / n as f64 - sample_mean * sample_mean;
        let (m, v) = mix.moments();
        let se_mean = (v / n as f64).sqrt();
        assert!((m - sample_mean).abs() < 3.0 * se_mean);
        // SE of the variance estimate is ~ var * sqrt(2/n) for near-Gaussian;
        // the mixture has heavier structure, allow 5x.
        assert!((v - sample_var).abs() < 5.0 * v * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn metrics_on_analytic_cases() {
        // Near-point-mass predictions at the targets.
        let targets = DVector::from_column_slice(&[0.1, -0.4, 0.9]);
        let sharp = PredictiveMixture {
            points: targets
                .iter()
                .map(|y| PointMixture {
                    components: vec![MixtureComponent {
                        weight: 1.0,
                        mean: *y,
                        variance: 1e-12,
                    }],
                    normalizer: 1.0,
                })
                .collect(),
            truncated_components: 0,
        };
        let m = metrics(&sharp, &targets);
        assert_abs_diff_eq!(m.rmse, 0.0, epsilon = 1e-9);
        assert!(m.test_log_likelihood > 30.0);

        // Standard normal mixture, zero targets.
        let k = 5;
        let std_normal = PredictiveMixture {
            points: (0..k)
                .map(|_| PointMixture {
                    components: vec![MixtureComponent {
                        weight: 1.0,
                        mean: 0.0,
                        variance: 1.0,
                    }],
                    normalizer: 1.0,
                })
                .collect(),
            truncated_components: 0,
        };
        let zeros = DVector::zeros(k);
        let m2 = metrics(&std_normal, &zeros);
        assert_relative_eq!(
            m2.test_log_likelihood,
            -(k as f64) * 0.5 * (2.0 * std::f64::consts::PI).ln(),
            epsilon = 1e-12
        );

        // Random case against a hand computation.
        let pm = PredictiveMixture {
            points: vec![PointMixture {
                components: vec![
                    MixtureComponent { weight: 0.6, mean: 0.2, variance: 0.5 },
                    MixtureComponent { weight: 0.4, mean: -0.3, variance: 1.5 },
                ],
                normalizer: 1.0,
            }],
            truncated_components: 0,
        };
        let y = DVector::from_column_slice(&[0.35]);
        let hand_density = 0.6 * gaussian_log_density(0.35, 0.2, 0.5).exp()
            + 0.4 * gaussian_log_density(0.35, -0.3, 1.5).exp();
        let hand_mean = 0.6 * 0.2 + 0.4 * (-0.3);
        let m3 = metrics(&pm, &y);
        assert_relative_eq!(m3.test_log_likelihood, hand_density.ln(), epsilon = 1e-12);
        assert_relative_eq!(m3.rmse, (0.35f64 - hand_mean).abs(), epsilon = 1e-12);
    }

    #[test]
    fn metrics_are_order_invariant() {
        let (state, artifacts, train, test) = build_fixture(4, 8);
        let pm = predictive_posterior_marginalized(
            &state,
            &artifacts,
            &train,
            &test,
            NoiseModel::default(),
            &MixtureOptions::default(),
        )
        .unwrap();
        let targets = DVector::from_column_slice(&[0.0, 0.5, -0.5, 1.0]);
        let base = metrics(&pm, &targets);

        let order = [2usize, 0, 3, 1];
        let pm_perm = PredictiveMixture {
            points: order.iter().map(|&i| pm.points[i].clone()).collect(),
            truncated_components: pm.truncated_components,
        };
        let targets_perm = DVector::from_fn(4, |i, _| targets[order[i]]);
        let perm = metrics(&pm_perm, &targets_perm);
        assert_relative_eq!(base.rmse, perm.rmse, epsilon = 1e-12);
        assert_relative_eq!(base.test_log_likelihood, perm.test_log_likelihood, epsilon = 1e-12);
    }

    #[test]
    fn denormalized_metrics_transform_consistently() {
        let record = NormalizationRecord {
            input_offset: vec![0.0],
            input_scale: vec![1.0],
            target_offset: 5.0,
            target_scale: 2.5,
        };
        let m = Metrics {
            rmse: 0.4,
            test_log_likelihood: -3.0,
            floored_points: 0,
        };
        let raw = m.denormalized(&record, 7);
        assert_relative_eq!(raw.rmse, 1.0, epsilon = 1e-12);
        assert_relative_eq!(raw.test_log_likelihood, -3.0 - 7.0 * 2.5f64.ln(), epsilon = 1e-12);
    }
}
