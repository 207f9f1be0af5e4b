//! Batch selection by expected information gain about the evidence integral.
//!
//! Under the linearized warp, the (Monte-Carlo discretized) integral and the
//! unwarped surrogate values at any candidate batch are jointly Gaussian, so
//! the mutual information between them is an entropy difference of Gaussian
//! conditionals. Batches are built greedily: slot `k` maximizes the joint
//! information of the already-chosen points plus the candidate, which by the
//! entropy chain rule equals conditioning on fantasized mean observations.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hyperkernel::{build_stack, gram_from_stacks, kernel_from_stacks, ParamStack, SURROGATE_NOISE_VARIANCE};
use crate::linalg::cholesky_with_jitter;
use crate::optimize::{minimize_bounded_fd, Bounds, OptimizeOptions};
use crate::quadrature::{evidence_moments, McIntegralCache, QuadratureArtifacts, SurrogateState};
use crate::seeding::{derive_seed, streams};
use crate::spectral::{sample_prior_with_n, HyperPrior, SpectralMixtureParams};

/// Variance floor below which the integral counts as determined and the
/// acquisition is defined to be zero.
pub const VARIANCE_FLOOR: f64 = 1e-14;

/// Everything the acquisition needs, built against one surrogate snapshot.
pub struct AcquisitionContext<'a> {
    pub state: &'a SurrogateState,
    pub cache: &'a McIntegralCache,
    pub artifacts: &'a QuadratureArtifacts,
    pub batch_size: usize,
    /// Linearized variance of the integral estimate.
    var_z: f64,
    /// `K^{-1} S beta`, the observation-side factor of cov(z*, Z).
    gamma: DVector<f64>,
}

impl<'a> AcquisitionContext<'a> {
    pub fn new(
        state: &'a SurrogateState,
        cache: &'a McIntegralCache,
        artifacts: &'a QuadratureArtifacts,
        batch_size: usize,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidParams("batch size must be positive".into()));
        }
        let est = evidence_moments(state, cache, artifacts);
        let s_beta = cache.single_integral() * state.beta();
        let gamma = state.chol().solve_vec(&s_beta);
        Ok(AcquisitionContext {
            state,
            cache,
            artifacts,
            batch_size,
            var_z: est.variance,
            gamma,
        })
    }

    pub fn integral_variance(&self) -> f64 {
        self.var_z
    }

    /// Joint covariance pieces for a set of points (prior block, observation
    /// cross block, integral cross vector).
    fn joint_blocks(&self, stacks: &[ParamStack]) -> (DMatrix<f64>, DVector<f64>) {
        let b = stacks.len();
        let h = self.state.len();
        let m = self.cache.sample_count();
        let hyper = self.state.hyper();

        let obs_cross = gram_from_stacks(stacks, self.state.stacks(), hyper); // b x h
        let prior = gram_from_stacks(stacks, stacks, hyper); // b x b
        let solved = self.state.chol().solve_mat(&obs_cross.transpose()); // h x b
        let mut cov = prior - &obs_cross * &solved;
        for i in 0..b {
            cov[(i, i)] += SURROGATE_NOISE_VARIANCE;
        }

        // cov(z*_i, Z) = (1/m) (kappa(cand_i, samples) C) beta - a_i^T gamma.
        let sample_cross = gram_from_stacks(stacks, self.cache.sample_stacks(), hyper); // b x m
        let t = (&sample_cross * self.cache.kernel_cross()) / m as f64; // b x h
        let mut c = &t * self.state.beta();
        c -= &obs_cross * &self.gamma;
        let _ = h;
        (cov, c)
    }
}

/// Expected entropy reduction of the integral estimate from observing the
/// candidate batch jointly. Nonnegative up to numerics.
pub fn acquisition_value(ctx: &AcquisitionContext, candidates: &[SpectralMixtureParams]) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::InvalidParams("empty candidate batch".into()));
    }
    let stacks: Vec<ParamStack> = candidates
        .iter()
        .map(|t| build_stack(t, ctx.state.hyper().symmetrize))
        .collect();
    alpha_from_blocks(ctx, &stacks)
}

fn alpha_from_blocks(ctx: &AcquisitionContext, stacks: &[ParamStack]) -> Result<f64> {
    if ctx.var_z < VARIANCE_FLOOR {
        return Ok(0.0);
    }
    let (cov, c) = ctx.joint_blocks(stacks);
    let marginal = cholesky_with_jitter(&cov)?;
    let conditional_mat = &cov - (&c * c.transpose()) / ctx.var_z;
    let conditional = cholesky_with_jitter(&conditional_mat)?;
    Ok(0.5 * (marginal.log_det() - conditional.log_det()))
}

/// Posterior variance of the linearized integrand; the uncertainty-sampling
/// ablation score. Vanishes both at observed points and far from all data
/// (where the posterior mean of the square-root surrogate is zero).
pub fn uncertainty_sampling_value(ctx: &AcquisitionContext, theta: &SpectralMixtureParams) -> f64 {
    ctx.state.warped_moments(theta).1
}

/// One slot of the greedy batch search: covariance blocks of the already
/// chosen points are cached, candidates only pay for their own rows.
struct SlotEvaluator<'c, 'a> {
    ctx: &'c AcquisitionContext<'a>,
    chosen_stacks: Vec<ParamStack>,
    /// Joint covariance of the chosen block (with surrogate noise).
    chosen_cov: DMatrix<f64>,
    /// Integral cross-covariances of the chosen block.
    chosen_c: DVector<f64>,
    /// Observation cross rows of the chosen block.
    chosen_obs_cross: DMatrix<f64>,
    /// `K^{-1} chosen_obs_cross^T`.
    chosen_solved: DMatrix<f64>,
}

impl<'c, 'a> SlotEvaluator<'c, 'a> {
    fn new(ctx: &'c AcquisitionContext<'a>, chosen: &[SpectralMixtureParams]) -> Self {
        let hyper = ctx.state.hyper();
        let chosen_stacks: Vec<ParamStack> =
            chosen.iter().map(|t| build_stack(t, hyper.symmetrize)).collect();
        let (chosen_cov, chosen_c) = if chosen.is_empty() {
            (DMatrix::zeros(0, 0), DVector::zeros(0))
        } else {
            ctx.joint_blocks(&chosen_stacks)
        };
        let chosen_obs_cross = gram_from_stacks(&chosen_stacks, ctx.state.stacks(), hyper);
        let chosen_solved = ctx.state.chol().solve_mat(&chosen_obs_cross.transpose());
        SlotEvaluator {
            ctx,
            chosen_stacks,
            chosen_cov,
            chosen_c,
            chosen_obs_cross,
            chosen_solved,
        }
    }

    /// Joint acquisition of chosen + candidate.
    fn alpha_with(&self, cand_stack: &ParamStack) -> f64 {
        let ctx = self.ctx;
        if ctx.var_z < VARIANCE_FLOOR {
            return 0.0;
        }
        let hyper = ctx.state.hyper();
        let k = self.chosen_stacks.len();
        let h = ctx.state.len();
        let m = ctx.cache.sample_count();

        let obs_cross = DVector::from_fn(h, |i, _| {
            kernel_from_stacks(cand_stack, &ctx.state.stacks()[i], hyper)
        });
        let solved = ctx.state.chol().solve_vec(&obs_cross);
        let prior_var = hyper.output_scale * hyper.output_scale;
        let own_var = prior_var - obs_cross.dot(&solved) + SURROGATE_NOISE_VARIANCE;

        let sample_cross = DVector::from_fn(m, |s, _| {
            kernel_from_stacks(cand_stack, &ctx.cache.sample_stacks()[s], hyper)
        });
        let t = ctx.cache.kernel_cross().tr_mul(&sample_cross) / m as f64; // h
        let cand_c = t.dot(ctx.state.beta()) - obs_cross.dot(&ctx.gamma);

        // Assemble the (k+1) x (k+1) joint.
        let mut cov = DMatrix::zeros(k + 1, k + 1);
        cov.view_mut((0, 0), (k, k)).copy_from(&self.chosen_cov);
        for i in 0..k {
            let prior_ij = kernel_from_stacks(&self.chosen_stacks[i], cand_stack, hyper);
            let reduction = self.chosen_obs_cross.row(i).transpose().dot(&solved);
            let v = prior_ij - reduction;
            cov[(i, k)] = v;
            cov[(k, i)] = v;
        }
        let _ = &self.chosen_solved;
        cov[(k, k)] = own_var;
        let mut c = DVector::zeros(k + 1);
        c.rows_mut(0, k).copy_from(&self.chosen_c);
        c[k] = cand_c;

        let marginal = match cholesky_with_jitter(&cov) {
            Ok(f) => f,
            Err(_) => return f64::NEG_INFINITY,
        };
        let conditional_mat = &cov - (&c * c.transpose()) / ctx.var_z;
        match cholesky_with_jitter(&conditional_mat) {
            Ok(f) => 0.5 * (marginal.log_det() - f.log_det()),
            Err(_) => f64::NEG_INFINITY,
        }
    }
}

/// Unconstrained parameterization of a fixed-`n` candidate: weight logits
/// with the first pinned to zero, raw means, log scales.
pub(crate) fn theta_to_unconstrained(theta: &SpectralMixtureParams) -> Vec<f64> {
    let n = theta.component_count();
    let d = theta.dim();
    let mut x = Vec::with_capacity(param_dim(n, d));
    let w0 = theta.weights()[0];
    for i in 1..n {
        x.push((theta.weights()[i] / w0).ln());
    }
    for j in 0..n {
        for dd in 0..d {
            x.push(theta.means()[j][dd]);
        }
    }
    for j in 0..n {
        for dd in 0..d {
            x.push(theta.scales()[j][dd].ln());
        }
    }
    x
}

pub(crate) fn theta_from_unconstrained(n: usize, d: usize, x: &[f64]) -> Result<SpectralMixtureParams> {
    debug_assert_eq!(x.len(), param_dim(n, d));
    let mut logits = Vec::with_capacity(n);
    logits.push(0.0);
    logits.extend_from_slice(&x[..n - 1]);
    let max_logit = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max_logit).exp()).collect();
    let total: f64 = exps.iter().sum();
    let weights: Vec<f64> = exps.iter().map(|e| e / total).collect();

    let mean_block = &x[n - 1..n - 1 + n * d];
    let scale_block = &x[n - 1 + n * d..];
    let means: Vec<Vec<f64>> = (0..n).map(|j| mean_block[j * d..(j + 1) * d].to_vec()).collect();
    let scales: Vec<Vec<f64>> = (0..n)
        .map(|j| scale_block[j * d..(j + 1) * d].iter().map(|s| s.exp()).collect())
        .collect();
    SpectralMixtureParams::new(weights, means, scales)
}

pub(crate) fn param_dim(n: usize, d: usize) -> usize {
    (n - 1) + 2 * n * d
}

/// Box constraints in the unconstrained space, wide enough to cover
/// essentially all prior mass.
pub(crate) fn param_bounds(prior: &HyperPrior, n: usize) -> Bounds {
    let d = prior.dim();
    let mut lower = Vec::with_capacity(param_dim(n, d));
    let mut upper = Vec::with_capacity(param_dim(n, d));
    for _ in 1..n {
        lower.push(-12.0);
        upper.push(12.0);
    }
    for _ in 0..n {
        for dd in 0..d {
            lower.push(-8.0 * prior.mean_sd[dd]);
            upper.push(8.0 * prior.mean_sd[dd]);
        }
    }
    for _ in 0..n {
        for dd in 0..d {
            lower.push(prior.scale_log_mean[dd] - 8.0 * prior.scale_log_sd);
            upper.push(prior.scale_log_mean[dd] + 8.0 * prior.scale_log_sd);
        }
    }
    Bounds::new(lower, upper)
}

/// Options for the batch search.
#[derive(Debug, Clone)]
pub struct AcquisitionOptions {
    /// Restart initializations per component count.
    pub restarts: usize,
    pub max_iters: usize,
    /// Central finite-difference step in the unconstrained space.
    pub fd_step: f64,
}

impl Default for AcquisitionOptions {
    fn default() -> Self {
        AcquisitionOptions {
            restarts: 8,
            max_iters: 25,
            fd_step: 1e-4,
        }
    }
}

/// Result of a batch search.
pub struct ChosenBatch {
    pub batch: Vec<SpectralMixtureParams>,
    /// Joint acquisition value of the full batch.
    pub alpha: f64,
    pub component_counts: Vec<usize>,
}

/// Greedy information-gain batch: each slot enumerates component counts,
/// optimizes the continuous coordinates from prior restarts, and keeps the
/// best candidate; ties break toward fewer components.
pub fn optimize_acquisition(
    ctx: &AcquisitionContext,
    prior: &HyperPrior,
    opts: &AcquisitionOptions,
    seed: u64,
) -> Result<ChosenBatch> {
    greedy_batch(ctx, prior, opts, seed, &|evaluator, stack| evaluator.alpha_with(stack))
}

/// Greedy uncertainty-sampling batch (ablation mode): slots maximize the
/// linearized integrand variance conditioned on previously chosen points.
pub fn optimize_uncertainty_batch(
    ctx: &AcquisitionContext,
    prior: &HyperPrior,
    opts: &AcquisitionOptions,
    seed: u64,
) -> Result<ChosenBatch> {
    greedy_batch(ctx, prior, opts, seed, &|evaluator, stack| {
        evaluator.conditional_integrand_variance(stack)
    })
}

impl<'c, 'a> SlotEvaluator<'c, 'a> {
    /// `mu(theta)^2 * Var(z(theta) | observations, chosen fantasies)`.
    fn conditional_integrand_variance(&self, cand_stack: &ParamStack) -> f64 {
        let ctx = self.ctx;
        let hyper = ctx.state.hyper();
        let h = ctx.state.len();
        let k = self.chosen_stacks.len();

        let obs_cross = DVector::from_fn(h, |i, _| {
            kernel_from_stacks(cand_stack, &ctx.state.stacks()[i], hyper)
        });
        let solved = ctx.state.chol().solve_vec(&obs_cross);
        let mu = obs_cross.dot(ctx.state.beta());
        let prior_var = hyper.output_scale * hyper.output_scale;
        let mut var = prior_var - obs_cross.dot(&solved);
        if k > 0 {
            // Condition on the chosen block (fantasized observations change
            // covariances only).
            let cross_chosen = DVector::from_fn(k, |i, _| {
                let prior_ij = kernel_from_stacks(&self.chosen_stacks[i], cand_stack, hyper);
                prior_ij - self.chosen_obs_cross.row(i).transpose().dot(&solved)
            });
            if let Ok(chol) = cholesky_with_jitter(&self.chosen_cov) {
                var -= cross_chosen.dot(&chol.solve_vec(&cross_chosen));
            }
        }
        mu * mu * var.max(0.0)
    }
}

fn greedy_batch(
    ctx: &AcquisitionContext,
    prior: &HyperPrior,
    opts: &AcquisitionOptions,
    seed: u64,
    score: &(dyn Fn(&SlotEvaluator, &ParamStack) -> f64 + Sync),
) -> Result<ChosenBatch> {
    let d = prior.dim();
    let opt_options = OptimizeOptions {
        max_iters: opts.max_iters,
        tol: 1e-7,
        ..Default::default()
    };

    let mut chosen: Vec<SpectralMixtureParams> = Vec::with_capacity(ctx.batch_size);
    let mut component_counts = Vec::with_capacity(ctx.batch_size);
    for slot in 0..ctx.batch_size {
        let evaluator = SlotEvaluator::new(ctx, &chosen);

        // Seeds are drawn up front so parallel execution stays deterministic.
        let tasks: Vec<(usize, u64)> = (1..=prior.max_components)
            .flat_map(|n| {
                (0..opts.restarts.max(1)).map(move |r| {
                    (n, derive_seed(seed, streams::ACQUISITION, (slot * 1024 + n * 64 + r) as u64))
                })
            })
            .collect();

        let results: Vec<(usize, f64, SpectralMixtureParams)> = tasks
            .par_iter()
            .map(|(n, task_seed)| {
                let mut rng = ChaCha8Rng::seed_from_u64(*task_seed);
                let init = sample_prior_with_n(prior, *n, &mut rng)
                    .expect("prior sampling cannot fail for validated priors");
                let x0 = theta_to_unconstrained(&init);
                let bounds = param_bounds(prior, *n);
                let objective = |x: &[f64]| -> f64 {
                    match theta_from_unconstrained(*n, d, x) {
                        Ok(theta) => {
                            let stack = build_stack(&theta, ctx.state.hyper().symmetrize);
                            -score(&evaluator, &stack)
                        }
                        Err(_) => f64::INFINITY,
                    }
                };
                let res = minimize_bounded_fd(objective, &x0, &bounds, opts.fd_step, &opt_options);
                let theta = theta_from_unconstrained(*n, d, &res.x)
                    .unwrap_or_else(|_| init.clone());
                (*n, -res.value, theta)
            })
            .collect();

        // Best across counts and restarts; strict improvement keeps ties on
        // the smaller component count (tasks are ordered by n).
        let mut best: Option<(usize, f64, &SpectralMixtureParams)> = None;
        for (n, value, theta) in &results {
            if value.is_finite() && best.map_or(true, |(_, bv, _)| *value > bv) {
                best = Some((*n, *value, theta));
            }
        }
        let (n, _, theta) = best.ok_or_else(|| {
            Error::DegenerateSurrogate("acquisition optimization produced no finite value".into())
        })?;
        chosen.push(theta.clone());
        component_counts.push(n);
    }

    let alpha = acquisition_value(ctx, &chosen)?;
    Ok(ChosenBatch {
        batch: chosen,
        alpha,
        component_counts,
    })
}
