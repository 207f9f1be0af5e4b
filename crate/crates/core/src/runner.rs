//! End-to-end orchestration: data pipeline, active kernel selection under a
//! budget, marginalized prediction, and report files.
//!
//! Every random decision derives from the single config seed through the
//! [`crate::seeding`] scheme, and all parallel sections commit results in
//! candidate order, so a configuration reproduces its metrics bitwise.

use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    optimize_acquisition, optimize_uncertainty_batch, param_bounds, theta_from_unconstrained,
    theta_to_unconstrained, AcquisitionContext, AcquisitionOptions,
};
use crate::data::{load_csv, normalize, split, summarize, Dataset, NormalizationRecord, TargetColumn};
use crate::error::{Error, Result, StageExt};
use crate::gp::{log_marginal_likelihood, FittedGp, PredictMode};
use crate::hyperkernel::{optimize_hypers, HyperKernelParams};
use crate::inference::{
    metrics, moment_matched, predictive_posterior_marginalized, Metrics, MixtureOptions,
    PredictiveMixture,
};
use crate::optimize::{minimize_bounded_fd, Bounds, OptimizeOptions};
use crate::quadrature::{
    build_mc_cache, evidence_moments, make_surrogate_with, quadrature_weights, warped_observations,
    SurrogateState,
};
use crate::seeding::{derive_seed, streams};
use crate::spectral::{sample_prior, sample_prior_with_n, HyperPrior, NoiseModel, SpectralMixtureParams};

/// Stopping rule: either a cap on likelihood evaluations or a wall-clock
/// deadline checked at batch boundaries (a batch in flight completes).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Evaluations(usize),
    WallClockSecs(f64),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum AcquisitionMode {
    /// Expected information gain about the evidence integral.
    Info,
    /// Posterior variance of the linearized integrand.
    Uncertainty,
    /// Fresh prior draws.
    Random,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub target: TargetColumn,
    #[serde(default = "defaults::test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::max_components")]
    pub max_components: usize,
    #[serde(default = "defaults::dirichlet_alpha")]
    pub dirichlet_alpha: f64,
    #[serde(default = "defaults::initial_evaluations")]
    pub initial_evaluations: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    /// Hyperparameters are re-optimized every this many batches.
    #[serde(default = "defaults::hyper_opt_period")]
    pub hyper_opt_period: usize,
    pub budget: Budget,
    #[serde(default = "defaults::mc_samples")]
    pub mc_samples: usize,
    #[serde(default = "defaults::noise_variance")]
    pub noise_variance: f64,
    #[serde(default = "defaults::acquisition")]
    pub acquisition: AcquisitionMode,
    #[serde(default = "defaults::exponent")]
    pub exponent: u8,
    #[serde(default)]
    pub symmetrize_mmd: bool,
    #[serde(default = "defaults::epsilon_factor")]
    pub epsilon_factor: f64,
    #[serde(default = "defaults::truncation_threshold")]
    pub truncation_threshold: f64,
    #[serde(default = "defaults::hyper_restarts")]
    pub hyper_restarts: usize,
    #[serde(default = "defaults::acq_restarts")]
    pub acq_restarts: usize,
    #[serde(default = "defaults::acq_max_iters")]
    pub acq_max_iters: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Worker threads; `None` uses the process default. Results do not
    /// depend on this.
    #[serde(default)]
    pub threads: Option<usize>,
}

mod defaults {
    pub fn test_fraction() -> f64 {
        0.1
    }
    pub fn max_components() -> usize {
        5
    }
    pub fn dirichlet_alpha() -> f64 {
        1.0
    }
    pub fn initial_evaluations() -> usize {
        20
    }
    pub fn batch_size() -> usize {
        20
    }
    pub fn hyper_opt_period() -> usize {
        5
    }
    pub fn mc_samples() -> usize {
        1000
    }
    pub fn noise_variance() -> f64 {
        0.01
    }
    pub fn acquisition() -> super::AcquisitionMode {
        super::AcquisitionMode::Info
    }
    pub fn exponent() -> u8 {
        1
    }
    pub fn epsilon_factor() -> f64 {
        0.8
    }
    pub fn truncation_threshold() -> f64 {
        1e-12
    }
    pub fn hyper_restarts() -> usize {
        3
    }
    pub fn acq_restarts() -> usize {
        8
    }
    pub fn acq_max_iters() -> usize {
        25
    }
}

impl RunConfig {
    /// A config with every tunable at its default, pointing at `dataset`.
    pub fn new(dataset: PathBuf, target: TargetColumn, budget: Budget) -> Self {
        RunConfig {
            dataset,
            target,
            test_fraction: defaults::test_fraction(),
            seed: 0,
            max_components: defaults::max_components(),
            dirichlet_alpha: defaults::dirichlet_alpha(),
            initial_evaluations: defaults::initial_evaluations(),
            batch_size: defaults::batch_size(),
            hyper_opt_period: defaults::hyper_opt_period(),
            budget,
            mc_samples: defaults::mc_samples(),
            noise_variance: defaults::noise_variance(),
            acquisition: defaults::acquisition(),
            exponent: defaults::exponent(),
            symmetrize_mmd: false,
            epsilon_factor: defaults::epsilon_factor(),
            truncation_threshold: defaults::truncation_threshold(),
            hyper_restarts: defaults::hyper_restarts(),
            acq_restarts: defaults::acq_restarts(),
            acq_max_iters: defaults::acq_max_iters(),
            output_dir: None,
            threads: None,
        }
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.as_os_str().is_empty() {
            return Err(Error::InvalidConfig("dataset path is empty".into()));
        }
        for (name, value) in [
            ("max_components", self.max_components),
            ("initial_evaluations", self.initial_evaluations),
            ("batch_size", self.batch_size),
            ("hyper_opt_period", self.hyper_opt_period),
            ("mc_samples", self.mc_samples),
            ("hyper_restarts", self.hyper_restarts),
            ("acq_restarts", self.acq_restarts),
            ("acq_max_iters", self.acq_max_iters),
        ] {
            if value == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if let Budget::Evaluations(max) = self.budget {
            if max < self.initial_evaluations {
                return Err(Error::InvalidConfig(format!(
                    "evaluation budget {max} is below the initial design size {}",
                    self.initial_evaluations
                )));
            }
        }
        if let Budget::WallClockSecs(secs) = self.budget {
            if !(secs > 0.0) {
                return Err(Error::InvalidConfig("wall-clock budget must be positive".into()));
            }
        }
        if !(self.noise_variance > 0.0) {
            return Err(Error::InvalidConfig("noise variance must be positive".into()));
        }
        Ok(())
    }

    fn hyper_base(&self) -> HyperKernelParams {
        HyperKernelParams {
            exponent: self.exponent,
            symmetrize: self.symmetrize_mmd,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvidenceTraceEntry {
    pub round: usize,
    pub h: usize,
    pub log_evidence_mean: f64,
    pub evidence_variance: f64,
    pub hyper: HyperKernelParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcquisitionTraceEntry {
    pub round: usize,
    pub chosen_n_values: Vec<usize>,
    /// Joint acquisition value; absent for random batches.
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TimingBreakdown {
    pub likelihood_secs: f64,
    pub surrogate_secs: f64,
    pub acquisition_secs: f64,
    pub prediction_secs: f64,
    pub total_secs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub normalization: NormalizationRecord,
    pub final_hyper: HyperKernelParams,
    pub evidence_trace: Vec<EvidenceTraceEntry>,
    pub acquisition_trace: Vec<AcquisitionTraceEntry>,
    /// Metrics in normalized target units.
    pub metrics: Metrics,
    /// Metrics mapped back to raw target units.
    pub metrics_denormalized: Metrics,
    pub log_evidence: f64,
    pub evaluations: usize,
    pub rounds: usize,
    pub truncated_components: usize,
    pub timing: TimingBreakdown,
}

/// Evaluates a batch of kernel likelihoods in parallel, committing results in
/// candidate order.
fn batch_log_likelihoods(
    thetas: &[SpectralMixtureParams],
    train: &Dataset,
    noise: NoiseModel,
) -> Result<Vec<f64>> {
    thetas
        .par_iter()
        .map(|theta| log_marginal_likelihood(theta, train, noise))
        .collect()
}

struct Pipeline {
    train: Dataset,
    test: Dataset,
    record: NormalizationRecord,
    prior: HyperPrior,
    noise: NoiseModel,
}

fn prepare_pipeline(config: &RunConfig) -> Result<Pipeline> {
    let raw = load_csv(&config.dataset, &config.target).stage("data")?;
    let (normalized, record) = normalize(&raw).stage("data")?;
    let (train, test) = split(
        &normalized,
        config.test_fraction,
        derive_seed(config.seed, streams::SPLIT, 0),
    )
    .stage("data")?;
    let summary = summarize(&train).stage("data")?;
    let prior = HyperPrior::from_summary(config.max_components, config.dirichlet_alpha, &summary)
        .stage("prior")?;
    let noise = NoiseModel::new(config.noise_variance).stage("prior")?;
    Ok(Pipeline {
        train,
        test,
        record,
        prior,
        noise,
    })
}

fn configure_threads(config: &RunConfig) {
    if let Some(threads) = config.threads {
        // Ignore failure: the global pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
}

/// Manifest plus the in-memory predictive mixture, for callers that need the
/// full per-point densities (diagnostics, verification harnesses).
pub struct RunArtifacts {
    pub manifest: RunManifest,
    pub mixture: PredictiveMixture,
}

/// Runs the full learning-and-prediction pipeline under the configured
/// budget and writes report files when an output directory is set.
pub fn run(config: &RunConfig) -> Result<RunManifest> {
    Ok(run_with_artifacts(config)?.manifest)
}

/// As [`run`], returning the predictive mixture alongside the manifest.
pub fn run_with_artifacts(config: &RunConfig) -> Result<RunArtifacts> {
    config.validate().stage("config")?;
    configure_threads(config);
    let total_start = Instant::now();
    let mut timing = TimingBreakdown::default();

    let pipeline = prepare_pipeline(config)?;
    let Pipeline {
        train,
        test,
        record,
        prior,
        noise,
    } = pipeline;

    // Initial design.
    let like_start = Instant::now();
    let mut rng_init = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, streams::INITIAL_DESIGN, 0));
    let mut thetas = sample_prior(&prior, &mut rng_init, config.initial_evaluations).stage("prior")?;
    let mut log_likelihoods = batch_log_likelihoods(&thetas, &train, noise).stage("likelihood")?;
    timing.likelihood_secs += like_start.elapsed().as_secs_f64();

    let mut hyper = config.hyper_base();
    let mut evidence_trace = Vec::new();
    let mut acquisition_trace = Vec::new();
    let deadline = match config.budget {
        Budget::WallClockSecs(secs) => Some(total_start + std::time::Duration::from_secs_f64(secs)),
        Budget::Evaluations(_) => None,
    };

    let mut rounds = 0usize;
    let (state, artifacts) = loop {
        // Surrogate refresh (hyperparameters on schedule, then state/cache).
        let surr_start = Instant::now();
        if rounds % config.hyper_opt_period == 0 && thetas.len() >= 2 {
            let (_, _, _, z) = warped_observations(&log_likelihoods, config.epsilon_factor)
                .stage("surrogate")?;
            let mut rng_hyper =
                ChaCha8Rng::seed_from_u64(derive_seed(config.seed, streams::HYPER_OPT, rounds as u64));
            let (fitted, _) = optimize_hypers(&thetas, &z, &hyper, config.hyper_restarts, &mut rng_hyper)
                .stage("surrogate")?;
            hyper = fitted;
        }
        let state = make_surrogate_with(thetas.clone(), &log_likelihoods, hyper, config.epsilon_factor)
            .stage("surrogate")?;
        let mut rng_mc =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, streams::MC_CACHE, rounds as u64));
        let cache = build_mc_cache(&state, &prior, config.mc_samples, &mut rng_mc).stage("surrogate")?;
        let artifacts = quadrature_weights(&state, &cache);
        let evidence = evidence_moments(&state, &cache, &artifacts);
        evidence_trace.push(EvidenceTraceEntry {
            round: rounds,
            h: state.len(),
            log_evidence_mean: evidence.log_mean(),
            evidence_variance: evidence.variance,
            hyper,
        });
        timing.surrogate_secs += surr_start.elapsed().as_secs_f64();

        // Budget check: may another batch start?
        let another = match config.budget {
            Budget::Evaluations(max) => thetas.len() + config.batch_size <= max,
            Budget::WallClockSecs(_) => Instant::now() < deadline.unwrap(),
        };
        if !another {
            break (state, artifacts);
        }

        // Select the next batch.
        let acq_start = Instant::now();
        let acq_seed = derive_seed(config.seed, streams::ACQUISITION, rounds as u64);
        let opts = AcquisitionOptions {
            restarts: config.acq_restarts,
            max_iters: config.acq_max_iters,
            ..Default::default()
        };
        let (batch, entry) = match config.acquisition {
            AcquisitionMode::Info => {
                let ctx = AcquisitionContext::new(&state, &cache, &artifacts, config.batch_size)
                    .stage("acquisition")?;
                let chosen = optimize_acquisition(&ctx, &prior, &opts, acq_seed).stage("acquisition")?;
                let entry = AcquisitionTraceEntry {
                    round: rounds,
                    chosen_n_values: chosen.component_counts.clone(),
                    alpha: Some(chosen.alpha),
                };
                (chosen.batch, entry)
            }
            AcquisitionMode::Uncertainty => {
                let ctx = AcquisitionContext::new(&state, &cache, &artifacts, config.batch_size)
                    .stage("acquisition")?;
                let chosen =
                    optimize_uncertainty_batch(&ctx, &prior, &opts, acq_seed).stage("acquisition")?;
                let entry = AcquisitionTraceEntry {
                    round: rounds,
                    chosen_n_values: chosen.component_counts.clone(),
                    alpha: Some(chosen.alpha),
                };
                (chosen.batch, entry)
            }
            AcquisitionMode::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    config.seed,
                    streams::RANDOM_BATCH,
                    rounds as u64,
                ));
                let batch = sample_prior(&prior, &mut rng, config.batch_size).stage("acquisition")?;
                let entry = AcquisitionTraceEntry {
                    round: rounds,
                    chosen_n_values: batch.iter().map(|t| t.component_count()).collect(),
                    alpha: None,
                };
                (batch, entry)
            }
        };
        acquisition_trace.push(entry);
        timing.acquisition_secs += acq_start.elapsed().as_secs_f64();

        // Evaluate the batch.
        let like_start = Instant::now();
        let batch_logl = batch_log_likelihoods(&batch, &train, noise).stage("likelihood")?;
        timing.likelihood_secs += like_start.elapsed().as_secs_f64();
        thetas.extend(batch);
        log_likelihoods.extend(batch_logl);
        rounds += 1;
    };

    // Marginalized prediction and metrics.
    let pred_start = Instant::now();
    let mixture_opts = MixtureOptions {
        truncation_threshold: config.truncation_threshold,
    };
    let mixture = predictive_posterior_marginalized(
        &state,
        &artifacts,
        &train,
        &test.inputs,
        noise,
        &mixture_opts,
    )
    .stage("inference")?;
    let run_metrics = metrics(&mixture, &test.targets);
    let metrics_denormalized = run_metrics.denormalized(&record, test.len());
    timing.prediction_secs += pred_start.elapsed().as_secs_f64();
    timing.total_secs = total_start.elapsed().as_secs_f64();

    let manifest = RunManifest {
        config: config.clone(),
        normalization: record,
        final_hyper: hyper,
        log_evidence: evidence_trace.last().map(|e| e.log_evidence_mean).unwrap_or(f64::NAN),
        evidence_trace,
        acquisition_trace,
        metrics: run_metrics,
        metrics_denormalized,
        evaluations: thetas.len(),
        rounds,
        truncated_components: mixture.truncated_components,
        timing,
    };

    if let Some(dir) = &config.output_dir {
        write_outputs(dir, &manifest, &state, &mixture, &test).stage("output")?;
    }
    Ok(RunArtifacts { manifest, mixture })
}

fn write_outputs(
    dir: &std::path::Path,
    manifest: &RunManifest,
    state: &SurrogateState,
    mixture: &PredictiveMixture,
    test: &Dataset,
) -> Result<()> {
    let io_err = |source: std::io::Error| Error::Io {
        path: dir.to_path_buf(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(io_err)?;

    let manifest_json =
        serde_json::to_string_pretty(manifest).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), manifest_json).map_err(io_err)?;

    // Per-round evidence and acquisition entries as JSON lines.
    let mut trace = String::new();
    for entry in &manifest.evidence_trace {
        let mut value = serde_json::to_value(entry).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        value["kind"] = "evidence".into();
        trace.push_str(&value.to_string());
        trace.push('\n');
    }
    for entry in &manifest.acquisition_trace {
        let mut value = serde_json::to_value(entry).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        value["kind"] = "acquisition".into();
        trace.push_str(&value.to_string());
        trace.push('\n');
    }
    std::fs::write(dir.join("trace.jsonl"), trace).map_err(io_err)?;

    let posterior = moment_matched(mixture);
    let mut predictions = String::from("test_index,mixture_mean,mixture_variance,density_at_target\n");
    for (i, point) in mixture.points.iter().enumerate() {
        predictions.push_str(&format!(
            "{},{},{},{}\n",
            i,
            posterior.mean[i],
            posterior.covariance[(i, i)],
            point.density(test.targets[i]),
        ));
    }
    std::fs::write(dir.join("predictions.csv"), predictions).map_err(io_err)?;

    #[derive(Serialize)]
    struct SampleRecord<'a> {
        theta: &'a SpectralMixtureParams,
        log_likelihood: f64,
    }
    let samples: Vec<SampleRecord> = state
        .thetas()
        .iter()
        .zip(state.log_likelihoods())
        .map(|(theta, ll)| SampleRecord {
            theta,
            log_likelihood: *ll,
        })
        .collect();
    let samples_json =
        serde_json::to_string_pretty(&samples).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    std::fs::write(dir.join("samples.json"), samples_json).map_err(io_err)?;
    Ok(())
}

/// Options for the gradient-trained single-kernel baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineOptions {
    pub mixtures: usize,
    #[serde(default = "baseline_defaults::restarts")]
    pub restarts: usize,
    #[serde(default = "baseline_defaults::max_iters")]
    pub max_iters: usize,
    /// Warm start; also used by fixed-point tests.
    #[serde(default)]
    pub init: Option<(SpectralMixtureParams, f64)>,
}

mod baseline_defaults {
    pub fn restarts() -> usize {
        5
    }
    pub fn max_iters() -> usize {
        60
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineReport {
    pub metrics: Metrics,
    pub metrics_denormalized: Metrics,
    pub theta: SpectralMixtureParams,
    pub noise_variance: f64,
    pub train_log_marginal: f64,
    pub warning: Option<String>,
}

/// Trains one spectral-mixture kernel (weights, means, scales, noise) by
/// quasi-Newton ascent on the training marginal likelihood with restarts from
/// the prior, then reports its single-kernel GP metrics.
pub fn run_mle_sm_baseline(config: &RunConfig, options: &BaselineOptions) -> Result<BaselineReport> {
    config.validate().stage("config")?;
    if options.mixtures == 0 {
        return Err(Error::InvalidConfig("baseline mixture count must be positive".into()));
    }
    configure_threads(config);
    let Pipeline {
        train,
        test,
        record,
        prior,
        noise: _,
    } = prepare_pipeline(config)?;

    let n = options.mixtures;
    let d = prior.dim();
    let theta_dim = crate::acquisition::param_dim(n, d);
    let theta_bounds = param_bounds(&prior, n);
    let mut lower = theta_bounds.lower.clone();
    let mut upper = theta_bounds.upper.clone();
    lower.push((1e-6f64).ln());
    upper.push(4.0f64.ln());
    let bounds = Bounds::new(lower, upper);

    let objective = |x: &[f64]| -> f64 {
        let noise_var = x[theta_dim].exp();
        match (
            theta_from_unconstrained(n, d, &x[..theta_dim]),
            NoiseModel::new(noise_var),
        ) {
            (Ok(theta), Ok(noise)) => match log_marginal_likelihood(&theta, &train, noise) {
                Ok(lml) => -lml,
                Err(_) => f64::INFINITY,
            },
            _ => f64::INFINITY,
        }
    };

    let opt_options = OptimizeOptions {
        max_iters: options.max_iters,
        tol: 1e-6,
        ..Default::default()
    };

    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some((theta, noise_var)) = &options.init {
        if theta.component_count() != n {
            return Err(Error::InvalidConfig(format!(
                "baseline init has {} components, expected {n}",
                theta.component_count()
            )));
        }
        let mut x = theta_to_unconstrained(theta);
        x.push(noise_var.ln());
        starts.push(x);
    }
    for r in 0..options.restarts {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, streams::BASELINE, r as u64));
        let theta = sample_prior_with_n(&prior, n, &mut rng).stage("baseline")?;
        let mut x = theta_to_unconstrained(&theta);
        x.push(config.noise_variance.ln());
        starts.push(x);
    }

    let results: Vec<(f64, Vec<f64>, bool)> = starts
        .par_iter()
        .map(|x0| {
            let res = minimize_bounded_fd(objective, x0, &bounds, 1e-5, &opt_options);
            (res.value, res.x, res.converged)
        })
        .collect();

    let mut best: Option<&(f64, Vec<f64>, bool)> = None;
    for r in &results {
        if r.0.is_finite() && best.map_or(true, |b| r.0 < b.0) {
            best = Some(r);
        }
    }
    let (neg_lml, x, converged) = best
        .ok_or_else(|| Error::DegenerateSurrogate("no baseline restart converged to a finite value".into()))
        .stage("baseline")?;
    let warning = if *converged {
        None
    } else {
        Some("optimizer stopped before reaching tolerance; reporting best iterate".to_string())
    };

    let theta = theta_from_unconstrained(n, d, &x[..theta_dim]).stage("baseline")?;
    let fitted_noise = NoiseModel::new(x[theta_dim].exp()).stage("baseline")?;
    let gp = FittedGp::fit(&theta, &train, fitted_noise).stage("baseline")?;
    let (mean, var) = gp.predict_marginals(&test.inputs, PredictMode::Observation);

    // Single-Gaussian metrics per test point.
    let sq: Vec<f64> = (0..test.len())
        .map(|i| (mean[i] - test.targets[i]) * (mean[i] - test.targets[i]))
        .collect();
    let ll: Vec<f64> = (0..test.len())
        .map(|i| crate::gp::gaussian_log_density(test.targets[i], mean[i], var[i]))
        .collect();
    let base_metrics = Metrics {
        rmse: (crate::linalg::pairwise_sum(&sq) / test.len() as f64).sqrt(),
        test_log_likelihood: crate::linalg::pairwise_sum(&ll),
        floored_points: 0,
    };
    let metrics_denormalized = base_metrics.denormalized(&record, test.len());

    Ok(BaselineReport {
        metrics: base_metrics,
        metrics_denormalized,
        theta,
        noise_variance: fitted_noise.variance,
        train_log_marginal: -neg_lml,
        warning,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityCell {
    pub mc_samples: usize,
    pub mean: f64,
    pub sem: f64,
    pub log_mean: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub observations: usize,
    pub cells: Vec<SensitivityCell>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityTable {
    pub rows: Vec<SensitivityRow>,
    pub repeats: usize,
}

impl SensitivityTable {
    /// Plain-text table: rows = observation counts, columns = sample counts.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if self.rows.is_empty() {
            return out;
        }
        out.push_str("h \\ m    ");
        for cell in &self.rows[0].cells {
            out.push_str(&format!("{:>24}", cell.mc_samples));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("{:<9}", row.observations));
            for cell in &row.cells {
                out.push_str(&format!("{:>15.6e} ± {:<7.1e}", cell.mean, cell.sem));
            }
            out.push('\n');
        }
        out
    }
}

/// Shared-likelihood sensitivity study: for each observation count, evaluate
/// likelihoods once, then estimate the evidence with each Monte Carlo sample
/// count several times under fresh quasi-random streams.
pub fn run_mc_sensitivity(
    config: &RunConfig,
    m_grid: &[usize],
    h_grid: &[usize],
    repeats: usize,
) -> Result<SensitivityTable> {
    config.validate().stage("config")?;
    if repeats == 0 || m_grid.is_empty() || h_grid.is_empty() {
        return Err(Error::InvalidConfig("empty sensitivity grid".into()));
    }
    configure_threads(config);
    let Pipeline {
        train,
        prior,
        noise,
        ..
    } = prepare_pipeline(config)?;

    let mut rows = Vec::new();
    for (hi, &h) in h_grid.iter().enumerate() {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, streams::SENSITIVITY, hi as u64));
        let thetas = sample_prior(&prior, &mut rng, h).stage("sensitivity")?;
        let logl = batch_log_likelihoods(&thetas, &train, noise).stage("likelihood")?;

        let mut hyper = config.hyper_base();
        if h >= 2 {
            let (_, _, _, z) =
                warped_observations(&logl, config.epsilon_factor).stage("surrogate")?;
            let (fitted, _) =
                optimize_hypers(&thetas, &z, &hyper, config.hyper_restarts, &mut rng)
                    .stage("surrogate")?;
            hyper = fitted;
        }
        let state = make_surrogate_with(thetas, &logl, hyper, config.epsilon_factor)
            .stage("surrogate")?;

        let mut cells = Vec::new();
        for (mi, &m) in m_grid.iter().enumerate() {
            let mut values = Vec::with_capacity(repeats);
            for rep in 0..repeats {
                let stream = (1 + hi) as u64 * 1_000_000 + (mi as u64) * 1_000 + rep as u64;
                let mut rng_mc = ChaCha8Rng::seed_from_u64(derive_seed(
                    config.seed,
                    streams::SENSITIVITY,
                    stream,
                ));
                let cache = build_mc_cache(&state, &prior, m, &mut rng_mc).stage("surrogate")?;
                let artifacts = quadrature_weights(&state, &cache);
                values.push(evidence_moments(&state, &cache, &artifacts).mean);
            }
            let mean = values.iter().sum::<f64>() / repeats as f64;
            let sem = if repeats > 1 {
                (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (repeats as f64 - 1.0))
                    .sqrt()
                    / (repeats as f64).sqrt()
            } else {
                0.0
            };
            cells.push(SensitivityCell {
                mc_samples: m,
                mean,
                sem,
                log_mean: mean.ln() + state.shared_log_shift(),
                values,
            });
        }
        rows.push(SensitivityRow {
            observations: h,
            cells,
        });
    }
    Ok(SensitivityTable { rows, repeats })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationArm {
    pub label: String,
    pub rmse_per_seed: Vec<f64>,
    pub ll_per_seed: Vec<f64>,
    pub rmse_mean: f64,
    pub rmse_sd: f64,
    pub ll_mean: f64,
    pub ll_sd: f64,
}

fn summarize_arm(label: &str, rmse: Vec<f64>, ll: Vec<f64>) -> AblationArm {
    let n = rmse.len() as f64;
    let rmse_mean = rmse.iter().sum::<f64>() / n;
    let ll_mean = ll.iter().sum::<f64>() / n;
    let sd = |xs: &[f64], mean: f64| {
        if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        }
    };
    AblationArm {
        label: label.to_string(),
        rmse_sd: sd(&rmse, rmse_mean),
        ll_sd: sd(&ll, ll_mean),
        rmse_per_seed: rmse,
        ll_per_seed: ll,
        rmse_mean,
        ll_mean,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub arms: Vec<AblationArm>,
    pub seeds: Vec<u64>,
}

impl AblationReport {
    pub fn render(&self) -> String {
        let mut out = String::from(format!(
            "{:<14}{:>12}{:>12}{:>14}{:>12}\n",
            "arm", "rmse", "±sd", "log-lik", "±sd"
        ));
        for arm in &self.arms {
            out.push_str(&format!(
                "{:<14}{:>12.4}{:>12.4}{:>14.3}{:>12.3}\n",
                arm.label, arm.rmse_mean, arm.rmse_sd, arm.ll_mean, arm.ll_sd
            ));
        }
        out
    }
}

/// Runs the three acquisition modes (and optionally the gradient-trained
/// baseline) over a list of seeds and aggregates test metrics.
pub fn run_ablation(
    config: &RunConfig,
    seeds: &[u64],
    baseline_mixtures: Option<usize>,
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one seed".into()));
    }
    let modes = [
        (AcquisitionMode::Info, "info"),
        (AcquisitionMode::Uncertainty, "uncertainty"),
        (AcquisitionMode::Random, "random"),
    ];
    let mut arms = Vec::new();
    for (mode, label) in modes {
        let mut rmse = Vec::with_capacity(seeds.len());
        let mut ll = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut cfg = config.clone();
            cfg.acquisition = mode;
            cfg.seed = seed;
            cfg.output_dir = config
                .output_dir
                .as_ref()
                .map(|d| d.join(format!("{label}-seed{seed}")));
            let manifest = run(&cfg)?;
            rmse.push(manifest.metrics.rmse);
            ll.push(manifest.metrics.test_log_likelihood);
        }
        arms.push(summarize_arm(label, rmse, ll));
    }
    if let Some(mixtures) = baseline_mixtures {
        let mut rmse = Vec::with_capacity(seeds.len());
        let mut ll = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut cfg = config.clone();
            cfg.seed = seed;
            let report = run_mle_sm_baseline(
                &cfg,
                &BaselineOptions {
                    mixtures,
                    restarts: baseline_defaults::restarts(),
                    max_iters: baseline_defaults::max_iters(),
                    init: None,
                },
            )?;
            rmse.push(report.metrics.rmse);
            ll.push(report.metrics.test_log_likelihood);
        }
        arms.push(summarize_arm("sm-baseline", rmse, ll));
    }
    Ok(AblationReport {
        arms,
        seeds: seeds.to_vec(),
    })
}
