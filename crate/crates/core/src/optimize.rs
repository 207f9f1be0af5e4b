//! Box-constrained quasi-Newton minimization.
//!
//! A projected L-BFGS: search directions come from the standard two-loop
//! recursion, trial points are clamped to the box inside an Armijo
//! backtracking line search, and convergence is measured by the norm of the
//! projected gradient step. This covers every optimization task in the crate
//! (surrogate hyperparameters, acquisition candidates, the gradient-trained
//! mixture-kernel baseline), all of which are small and dense.

/// Inclusive box constraints, one interval per coordinate.
#[derive(Debug, Clone)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        assert!(lower.iter().zip(&upper).all(|(l, u)| l <= u));
        Bounds { lower, upper }
    }

    /// Same interval for every coordinate.
    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Self {
        Bounds::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for ((xi, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *xi = xi.clamp(*lo, *hi);
        }
    }

    pub fn clamped(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        self.clamp(&mut out);
        out
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeOptions {
    pub max_iters: usize,
    /// Convergence threshold on the infinity norm of the projected gradient
    /// step `P(x - g) - x`.
    pub tol: f64,
    /// L-BFGS history length.
    pub memory: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    pub max_line_search: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            max_iters: 100,
            tol: 1e-6,
            memory: 8,
            armijo: 1e-4,
            max_line_search: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub x: Vec<f64>,
    pub value: f64,
    /// Infinity norm of the projected gradient step at the solution.
    pub projected_gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn projected_gradient_norm(x: &[f64], grad: &[f64], bounds: &Bounds) -> f64 {
    let mut norm: f64 = 0.0;
    for i in 0..x.len() {
        let stepped = (x[i] - grad[i]).clamp(bounds.lower[i], bounds.upper[i]);
        norm = norm.max((stepped - x[i]).abs());
    }
    norm
}

/// Minimizes `f` (returning value and gradient) over the box.
pub fn minimize_bounded<F>(
    mut f: F,
    x0: &[f64],
    bounds: &Bounds,
    opts: &OptimizeOptions,
) -> OptimizeResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let dim = x0.len();
    let mut x = bounds.clamped(x0);
    let (mut value, mut grad) = f(&x);
    let mut history: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new(); // (s, y, 1/sᵀy)

    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..opts.max_iters {
        let pg = projected_gradient_norm(&x, &grad, bounds);
        if pg < opts.tol || !value.is_finite() {
            converged = pg < opts.tol;
            break;
        }
        iterations += 1;

        // Two-loop recursion for d = -H g.
        let mut d: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut alphas = vec![0.0; history.len()];
        for (idx, (s, y, rho)) in history.iter().enumerate().rev() {
            let alpha = rho * dot(s, &d);
            alphas[idx] = alpha;
            for i in 0..dim {
                d[i] -= alpha * y[i];
            }
        }
        if let Some((s, y, _)) = history.last() {
            let gamma = dot(s, y) / dot(y, y).max(1e-300);
            for di in d.iter_mut() {
                *di *= gamma;
            }
        }
        for (idx, (s, y, rho)) in history.iter().enumerate() {
            let beta = rho * dot(y, &d);
            for i in 0..dim {
                d[i] += (alphas[idx] - beta) * s[i];
            }
        }

        // If the quasi-Newton direction stalls the line search, retry once
        // along steepest descent before giving up.
        let steepest: Vec<f64> = grad.iter().map(|g| -g).collect();
        let directions: [&Vec<f64>; 2] = if dot(&d, &grad) < 0.0 {
            [&d, &steepest]
        } else {
            [&steepest, &steepest]
        };
        let mut accepted = false;
        'directions: for (attempt, dir) in directions.iter().enumerate() {
            if attempt == 1 {
                history.clear();
            }
            // Armijo test along the projected path at a given step size;
            // returns the trial point and its value/gradient when accepted.
            let mut probe = |step: f64, value: f64| -> Option<(Vec<f64>, f64, Vec<f64>)> {
                let mut trial: Vec<f64> = (0..dim).map(|i| x[i] + step * dir[i]).collect();
                bounds.clamp(&mut trial);
                let actual_step: Vec<f64> = (0..dim).map(|i| trial[i] - x[i]).collect();
                if actual_step.iter().all(|s| *s == 0.0) {
                    return None;
                }
                let (trial_value, trial_grad) = f(&trial);
                let decrease = opts.armijo * dot(&grad, &actual_step);
                if trial_value.is_finite() && trial_value <= value + decrease.min(0.0) {
                    Some((trial, trial_value, trial_grad))
                } else {
                    None
                }
            };

            // Backtrack from the unit step.
            let mut step = 1.0;
            let mut found = None;
            for ls in 0..opts.max_line_search {
                if let Some(hit) = probe(step, value) {
                    // The unit step accepting immediately can mean the
                    // direction is far too short (stale curvature); expand
                    // while the value keeps dropping.
                    let mut best = hit;
                    if ls == 0 {
                        let mut t = 2.0 * step;
                        for _ in 0..20 {
                            match probe(t, best.1) {
                                Some(better) => {
                                    best = better;
                                    t *= 2.0;
                                }
                                None => break,
                            }
                        }
                    }
                    found = Some(best);
                    break;
                }
                step *= 0.5;
            }

            if let Some((trial, trial_value, trial_grad)) = found {
                let s: Vec<f64> = (0..dim).map(|i| trial[i] - x[i]).collect();
                let y: Vec<f64> = (0..dim).map(|i| trial_grad[i] - grad[i]).collect();
                let sy = dot(&s, &y);
                let scale = dot(&s, &s).sqrt() * dot(&y, &y).sqrt();
                if sy > 1e-10 * scale {
                    if history.len() == opts.memory {
                        history.remove(0);
                    }
                    history.push((s, y, 1.0 / sy));
                }
                x = trial;
                value = trial_value;
                grad = trial_grad;
                accepted = true;
                break 'directions;
            }
            if attempt == 0 && std::ptr::eq(*dir, &steepest) {
                // Already tried steepest descent first; no second attempt.
                break;
            }
        }
        if !accepted {
            break;
        }
    }

    let pg = projected_gradient_norm(&x, &grad, bounds);
    OptimizeResult {
        x,
        value,
        projected_gradient_norm: pg,
        iterations,
        converged: converged || pg < opts.tol,
    }
}

/// Minimizes a value-only objective using central finite differences.
pub fn minimize_bounded_fd<F>(
    mut f: F,
    x0: &[f64],
    bounds: &Bounds,
    fd_step: f64,
    opts: &OptimizeOptions,
) -> OptimizeResult
where
    F: FnMut(&[f64]) -> f64,
{
    minimize_bounded(
        |x| {
            let value = f(x);
            let grad = central_difference(&mut f, x, fd_step);
            (value, grad)
        },
        x0,
        bounds,
        opts,
    )
}

/// Central finite-difference gradient with a fixed step.
pub fn central_difference<F>(f: &mut F, x: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = f(&probe);
        probe[i] = orig - step;
        let minus = f(&probe);
        probe[i] = orig;
        grad[i] = (plus - minus) / (2.0 * step);
    }
    grad
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
