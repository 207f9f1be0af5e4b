//! Shared fixtures for the criterion benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use specmix::data::DataSummary;
use specmix::hyperkernel::HyperKernelParams;
use specmix::quadrature::{make_surrogate, SurrogateState};
use specmix::spectral::{sample_prior, HyperPrior, SpectralMixtureParams};

/// A one-dimensional prior resembling a normalized 100-point grid dataset.
pub fn bench_prior(max_components: usize) -> HyperPrior {
    HyperPrior::from_summary(
        max_components,
        1.0,
        &DataSummary {
            nyquist: vec![50.0],
            window: vec![1.0],
            count: 100,
        },
    )
    .expect("valid prior")
}

/// Deterministic prior draws.
pub fn bench_thetas(count: usize, seed: u64) -> Vec<SpectralMixtureParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_prior(&bench_prior(5), &mut rng, count).expect("sampling from a valid prior")
}

/// A surrogate over `h` prior draws with synthetic log-likelihoods.
pub fn bench_state(h: usize, seed: u64) -> SurrogateState {
    let thetas = bench_thetas(h, seed);
    let logl: Vec<f64> = (0..h).map(|i| -20.0 - (i as f64 * 0.37).sin() * 3.0).collect();
    let hyper = HyperKernelParams {
        length_scale: 8.0,
        ..Default::default()
    };
    make_surrogate(thetas, &logl, hyper).expect("surrogate build")
}
