//! Shared fixtures and independent oracles for the integration suites.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use specmix::data::{DataSummary, Dataset};
use specmix::gp::sample_targets;
use specmix::spectral::{spectral_density, NoiseModel, SpectralMixtureParams};

/// Numerical Fourier transform of the symmetrized spectral density: the
/// independent oracle for the closed-form stationary kernel. Each component's
/// per-dimension integral is evaluated by trapezoid quadrature in complex
/// arithmetic over `mean ± 8 sd`; factorization over dimensions and the
/// origin reflection are exact algebra of the density, not of the kernel.
pub fn fourier_kernel_oracle(theta: &SpectralMixtureParams, rho: &[f64]) -> f64 {
    let steps = 4000usize;
    let mut total = (0.0, 0.0);
    for j in 0..theta.component_count() {
        let mut plus = (1.0, 0.0);
        let mut minus = (1.0, 0.0);
        for d in 0..theta.dim() {
            let m = theta.means()[j][d];
            let sd = theta.scales()[j][d];
            plus = complex_mul(plus, gaussian_fourier_1d(m, sd, rho[d], steps));
            minus = complex_mul(minus, gaussian_fourier_1d(-m, sd, rho[d], steps));
        }
        let w = theta.weights()[j];
        total.0 += 0.5 * w * (plus.0 + minus.0);
        total.1 += 0.5 * w * (plus.1 + minus.1);
    }
    // The reflection makes the transform real; the residual imaginary part is
    // quadrature noise.
    total.0
}

fn complex_mul(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

/// `int exp(2 pi i rho w) N(w; m, sd^2) dw` by trapezoid quadrature.
fn gaussian_fourier_1d(mean: f64, sd: f64, rho: f64, steps: usize) -> (f64, f64) {
    let lo = mean - 8.0 * sd;
    let hi = mean + 8.0 * sd;
    let h = (hi - lo) / steps as f64;
    let norm = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
    let mut re = 0.0;
    let mut im = 0.0;
    for i in 0..=steps {
        let w = lo + i as f64 * h;
        let weight = if i == 0 || i == steps { 0.5 } else { 1.0 };
        let z = (w - mean) / sd;
        let density = norm * (-0.5 * z * z).exp();
        let phase = 2.0 * std::f64::consts::PI * rho * w;
        re += weight * density * phase.cos() * h;
        im += weight * density * phase.sin() * h;
    }
    (re, im)
}

/// Verifies the oracle against the symmetrized density itself (sanity check
/// used by the acceptance suite's setup assertions).
pub fn density_is_symmetric(theta: &SpectralMixtureParams, omega: &[f64]) -> bool {
    let neg: Vec<f64> = omega.iter().map(|w| -w).collect();
    (spectral_density(theta, omega) - spectral_density(theta, &neg)).abs() < 1e-12
}

/// `DataSummary` for a synthetic normalized 1-D grid of `count` points.
pub fn grid_summary(count: usize) -> DataSummary {
    let gap = 1.0 / (count as f64 - 1.0);
    DataSummary {
        nyquist: vec![0.5 / gap],
        window: vec![1.0],
        count,
    }
}

/// Random inputs in `[0, 1]^dim` plus GP targets from a known kernel.
pub fn synthetic_dataset(
    theta: &SpectralMixtureParams,
    n: usize,
    dim: usize,
    noise: NoiseModel,
    seed: u64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = DMatrix::from_fn(n, dim, |_, _| rng.gen::<f64>());
    let targets = sample_targets(theta, &inputs, noise, &mut rng).expect("GP sampling");
    Dataset::new(inputs, targets)
}

/// Writes a dataset to a headered CSV for runner-level tests.
pub fn write_csv(dataset: &Dataset, path: &std::path::Path) {
    use std::io::Write;
    let mut f = std::fs::File::create(path).expect("create csv");
    let dim = dataset.dim;
    let header: Vec<String> = (0..dim).map(|d| format!("x{d}")).chain(["y".to_string()]).collect();
    writeln!(f, "{}", header.join(",")).unwrap();
    for i in 0..dataset.len() {
        let mut row: Vec<String> = (0..dim).map(|d| dataset.inputs[(i, d)].to_string()).collect();
        row.push(dataset.targets[i].to_string());
        writeln!(f, "{}", row.join(",")).unwrap();
    }
}

/// Mean and standard error of a slice.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[allow(dead_code)]
fn keep_imports(_: DVector<f64>) {}
