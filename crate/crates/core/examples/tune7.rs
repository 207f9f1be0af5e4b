// One-seed rehearsal of the ablation fixture at higher true frequencies.
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specmix::data::{Dataset, TargetColumn};
use specmix::gp::sample_targets;
use specmix::runner::*;
use specmix::spectral::{NoiseModel, SpectralMixtureParams};
use std::io::Write;

fn write_csv(d: &Dataset, path: &std::path::Path) {
    let mut f = std::fs::File::create(path).unwrap();
    writeln!(f, "x,y").unwrap();
    for i in 0..d.len() {
        writeln!(f, "{},{}", d.inputs[(i, 0)], d.targets[i]).unwrap();
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0);
    let fixture: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0);
    let (means, scales): (Vec<Vec<f64>>, Vec<Vec<f64>>) = match fixture {
        0 => (vec![vec![5.0], vec![12.0]], vec![vec![0.5], vec![0.8]]),
        1 => (vec![vec![8.0], vec![21.0]], vec![vec![0.7], vec![1.2]]),
        2 => (vec![vec![13.0], vec![31.0]], vec![vec![0.8], vec![1.5]]),
        _ => (vec![vec![3.0], vec![8.0]], vec![vec![0.5], vec![1.0]]),
    };
    let truth = SpectralMixtureParams::new(vec![0.6, 0.4], means, scales).unwrap();
    let noise = NoiseModel::new(0.01).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7000 + seed);
    let inputs = DMatrix::from_fn(250, 1, |_, _| rng.gen::<f64>());
    let targets = sample_targets(&truth, &inputs, noise, &mut rng).unwrap();
    let data = Dataset::new(inputs, targets);
    let dir = std::env::temp_dir().join(format!("tune7-{fixture}-{seed}"));
    std::fs::create_dir_all(&dir).unwrap();
    let csv = dir.join("data.csv");
    write_csv(&data, &csv);

    let mut cfg = RunConfig::new(csv.clone(), TargetColumn::Name("y".into()), Budget::Evaluations(200));
    cfg.test_fraction = 0.2;
    cfg.seed = seed;
    cfg.mc_samples = 500;
    cfg.acq_restarts = 2;
    cfg.acq_max_iters = 10;
    cfg.hyper_restarts = 2;

    let t0 = std::time::Instant::now();
    let mut info_cfg = cfg.clone();
    info_cfg.acquisition = AcquisitionMode::Info;
    let info = run(&info_cfg).unwrap();
    let t_info = t0.elapsed();

    let t0 = std::time::Instant::now();
    let mut rand_cfg = cfg.clone();
    rand_cfg.acquisition = AcquisitionMode::Random;
    let random = run(&rand_cfg).unwrap();
    let t_rand = t0.elapsed();

    let t0 = std::time::Instant::now();
    let baseline = run_mle_sm_baseline(&cfg, &BaselineOptions { mixtures: 2, restarts: 4, max_iters: 40, init: None }).unwrap();
    let t_base = t0.elapsed();

    println!(
        "fixture {fixture} seed {seed}: info {:.4} ({:.0?}; lik {:.1}s surr {:.1}s acq {:.1}s pred {:.1}s) | random {:.4} ({:.0?}) | sm {:.4} ({:.0?})",
        info.metrics.rmse, t_info,
        info.timing.likelihood_secs, info.timing.surrogate_secs, info.timing.acquisition_secs, info.timing.prediction_secs,
        random.metrics.rmse, t_rand,
        baseline.metrics.rmse, t_base
    );
}
