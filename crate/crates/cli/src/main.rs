//! Command-line front end: orchestrates runs, the gradient-trained kernel
//! baseline, the Monte-Carlo sensitivity study, and the acquisition ablation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use specmix::data::TargetColumn;
use specmix::runner::{
    run, run_ablation, run_mc_sensitivity, run_mle_sm_baseline, AcquisitionMode, BaselineOptions,
    Budget, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "specmix",
    about = "Gaussian-process regression marginalized over spectral-mixture kernels via warped Bayesian quadrature",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full learning-and-prediction pipeline under a budget.
    Run(RunArgs),
    /// Single spectral-mixture kernel trained by gradient ascent on the
    /// marginal likelihood.
    BaselineSm(BaselineArgs),
    /// Evidence sensitivity to the number of Monte Carlo samples.
    McSensitivity(SensitivityArgs),
    /// All acquisition modes (and optionally the baseline) over several
    /// seeds, with aggregated metrics.
    Ablation(AblationArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Info,
    Uncertainty,
    Random,
}

impl From<ModeArg> for AcquisitionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Info => AcquisitionMode::Info,
            ModeArg::Uncertainty => AcquisitionMode::Uncertainty,
            ModeArg::Random => AcquisitionMode::Random,
        }
    }
}

/// Flags shared by every subcommand. A JSON config file may supply any field;
/// command-line flags take precedence.
#[derive(Args)]
struct CommonArgs {
    /// JSON configuration file (same schema as the manifest's config echo).
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV dataset path.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Target column by header name.
    #[arg(long, conflicts_with = "target_index")]
    target: Option<String>,
    /// Target column by 0-based index.
    #[arg(long)]
    target_index: Option<usize>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum number of mixture components in the prior.
    #[arg(long)]
    max_components: Option<usize>,
    /// Dirichlet concentration over component weights.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    init_evals: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Re-optimize surrogate hyperparameters every this many batches.
    #[arg(long)]
    hyper_opt_period: Option<usize>,
    /// Budget as a likelihood-evaluation cap.
    #[arg(long, conflicts_with = "time_budget_secs")]
    max_evals: Option<usize>,
    /// Budget as wall-clock seconds (batches in flight complete).
    #[arg(long)]
    time_budget_secs: Option<f64>,
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long)]
    noise_variance: Option<f64>,
    #[arg(long, value_enum)]
    acquisition: Option<ModeArg>,
    /// Hyper-kernel exponent (1 or 2).
    #[arg(long)]
    q: Option<u8>,
    /// Reflect spectral components about the origin inside the discrepancy.
    #[arg(long)]
    symmetrize_mmd: bool,
    #[arg(long)]
    epsilon_factor: Option<f64>,
    #[arg(long)]
    truncation_threshold: Option<f64>,
    #[arg(long)]
    hyper_restarts: Option<usize>,
    #[arg(long)]
    acq_restarts: Option<usize>,
    #[arg(long)]
    acq_max_iters: Option<usize>,
    /// Directory for manifest.json, predictions.csv, trace.jsonl, samples.json.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

impl CommonArgs {
    fn build_config(&self) -> Result<RunConfig, String> {
        let mut config = match &self.config {
            Some(path) => RunConfig::from_json_file(path).map_err(|e| e.to_string())?,
            None => {
                let data = self.data.clone().ok_or("--data (or --config) is required")?;
                let target = self.target_from_flags().ok_or(
                    "--target or --target-index (or --config) is required",
                )?;
                let budget = self
                    .budget_from_flags()
                    .ok_or("--max-evals or --time-budget-secs (or --config) is required")?;
                RunConfig::new(data, target, budget)
            }
        };
        if let Some(data) = &self.data {
            config.dataset = data.clone();
        }
        if let Some(target) = self.target_from_flags() {
            config.target = target;
        }
        if let Some(budget) = self.budget_from_flags() {
            config.budget = budget;
        }
        macro_rules! override_field {
            ($field:ident) => {
                if let Some(value) = self.$field {
                    config.$field = value;
                }
            };
        }
        override_field!(test_fraction);
        override_field!(seed);
        override_field!(max_components);
        override_field!(batch_size);
        override_field!(hyper_opt_period);
        override_field!(mc_samples);
        override_field!(noise_variance);
        override_field!(epsilon_factor);
        override_field!(truncation_threshold);
        override_field!(hyper_restarts);
        override_field!(acq_restarts);
        override_field!(acq_max_iters);
        if let Some(alpha) = self.alpha {
            config.dirichlet_alpha = alpha;
        }
        if let Some(init) = self.init_evals {
            config.initial_evaluations = init;
        }
        if let Some(mode) = self.acquisition {
            config.acquisition = mode.into();
        }
        if let Some(q) = self.q {
            config.exponent = q;
        }
        if self.symmetrize_mmd {
            config.symmetrize_mmd = true;
        }
        if let Some(dir) = &self.out_dir {
            config.output_dir = Some(dir.clone());
        }
        if let Some(threads) = self.threads {
            config.threads = Some(threads);
        }
        Ok(config)
    }

    fn target_from_flags(&self) -> Option<TargetColumn> {
        if let Some(name) = &self.target {
            Some(TargetColumn::Name(name.clone()))
        } else {
            self.target_index.map(TargetColumn::Index)
        }
    }

    fn budget_from_flags(&self) -> Option<Budget> {
        if let Some(evals) = self.max_evals {
            Some(Budget::Evaluations(evals))
        } else {
            self.time_budget_secs.map(Budget::WallClockSecs)
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Component count of the single trained kernel.
    #[arg(long)]
    mixtures: usize,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, default_value_t = 60)]
    baseline_max_iters: usize,
}

#[derive(Args)]
struct SensitivityArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated likelihood-observation counts (table rows).
    #[arg(long, value_delimiter = ',', default_value = "100,500,1000")]
    h_grid: Vec<usize>,
    /// Comma-separated Monte-Carlo sample counts (table columns).
    #[arg(long, value_delimiter = ',', default_value = "100,1000,10000")]
    m_grid: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
}

#[derive(Args)]
struct AblationArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of seeds; runs use seed, seed+1, ...
    #[arg(long, default_value_t = 10)]
    seeds: usize,
    /// Include the gradient-trained kernel baseline with this many mixtures.
    #[arg(long)]
    baseline_mixtures: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Run(args) => {
            let config = args.common.build_config()?;
            let manifest = run(&config).map_err(|e| e.to_string())?;
            println!(
                "evaluations: {} ({} rounds)",
                manifest.evaluations, manifest.rounds
            );
            println!("log evidence: {:.6}", manifest.log_evidence);
            println!(
                "test rmse: {:.6}  test log-likelihood: {:.6} (normalized units)",
                manifest.metrics.rmse, manifest.metrics.test_log_likelihood
            );
            println!(
                "test rmse: {:.6}  test log-likelihood: {:.6} (raw units)",
                manifest.metrics_denormalized.rmse,
                manifest.metrics_denormalized.test_log_likelihood
            );
            if let Some(dir) = &config.output_dir {
                println!("reports written to {}", dir.display());
            }
            Ok(())
        }
        Command::BaselineSm(args) => {
            let config = args.common.build_config()?;
            let report = run_mle_sm_baseline(
                &config,
                &BaselineOptions {
                    mixtures: args.mixtures,
                    restarts: args.restarts,
                    max_iters: args.baseline_max_iters,
                    init: None,
                },
            )
            .map_err(|e| e.to_string())?;
            if let Some(warning) = &report.warning {
                eprintln!("warning: {warning}");
            }
            println!("train log marginal: {:.6}", report.train_log_marginal);
            println!("fitted noise variance: {:.6e}", report.noise_variance);
            println!(
                "test rmse: {:.6}  test log-likelihood: {:.6} (normalized units)",
                report.metrics.rmse, report.metrics.test_log_likelihood
            );
            if let Some(dir) = &config.output_dir {
                std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
                let json = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
                std::fs::write(dir.join("baseline.json"), json).map_err(|e| e.to_string())?;
                println!("report written to {}", dir.join("baseline.json").display());
            }
            Ok(())
        }
        Command::McSensitivity(args) => {
            let config = args.common.build_config()?;
            let table = run_mc_sensitivity(&config, &args.m_grid, &args.h_grid, args.repeats)
                .map_err(|e| e.to_string())?;
            print!("{}", table.render());
            if let Some(dir) = &config.output_dir {
                std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
                let json = serde_json::to_string_pretty(&table).map_err(|e| e.to_string())?;
                std::fs::write(dir.join("sensitivity.json"), json).map_err(|e| e.to_string())?;
                println!("table written to {}", dir.join("sensitivity.json").display());
            }
            Ok(())
        }
        Command::Ablation(args) => {
            let config = args.common.build_config()?;
            let seeds: Vec<u64> = (0..args.seeds as u64).map(|i| config.seed + i).collect();
            let report = run_ablation(&config, &seeds, args.baseline_mixtures)
                .map_err(|e| e.to_string())?;
            print!("{}", report.render());
            if let Some(dir) = &config.output_dir {
                std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
                let json = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
                std::fs::write(dir.join("ablation.json"), json).map_err(|e| e.to_string())?;
                println!("report written to {}", dir.join("ablation.json").display());
            }
            Ok(())
        }
    }
}
