//! Quasi-maximum-likelihood estimation over the parameter box, or over the
//! sub-box of a support `m` whose complement is frozen at zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AcxError, Result};
use crate::likelihood::{self, DEFAULT_FD_EPS};
use crate::model::{ModelSpec, ParamSpace, Theta};
use crate::optim::{self, BfgsOptions, SimplexOptions};
use crate::simulate::Sample;

/// Default number of optimizer starts.
pub const DEFAULT_STARTS: usize = 5;

/// Stream used for uniform start draws, kept apart from simulation streams.
const START_STREAM: u64 = 0x5354_4152;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: Theta,
    pub loglik: f64,
    pub deviance: f64,
    pub converged: bool,
    pub active_bounds: Vec<usize>,
    pub frozen: Vec<usize>,
    #[serde(default)]
    pub n_starts_used: usize,
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub starts: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Extra initial points tried before the midpoint and uniform starts,
    /// e.g. the estimate of a nested submodel. Projected onto the sub-box.
    pub warm_starts: Vec<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            starts: DEFAULT_STARTS,
            seed: 0,
            max_iter: 500,
            warm_starts: Vec::new(),
        }
    }
}

impl FitOptions {
    pub fn new(starts: usize, seed: u64) -> Self {
        Self {
            starts,
            seed,
            ..Self::default()
        }
    }
}

/// `max(1e−4, n^{−1/2})`.
pub fn activity_tolerance(n: usize) -> f64 {
    (1.0 / (n as f64).sqrt()).max(1e-4)
}

/// Free components of `theta` within the activity tolerance of a bound.
pub fn active_bounds(space: &ParamSpace, theta: &[f64], frozen: &[usize], n: usize) -> Vec<usize> {
    let tol = activity_tolerance(n);
    (0..theta.len())
        .filter(|i| !frozen.contains(i))
        .filter(|&i| {
            (theta[i] - space.lo()[i]).abs() <= tol || (space.hi()[i] - theta[i]).abs() <= tol
        })
        .collect()
}

/// The default first start: box midpoint, with the variance intercept moved
/// to at least `10 · h_floor`.
pub fn midpoint_start(spec: &ModelSpec, space: &ParamSpace) -> Vec<f64> {
    let mut x = space.midpoint();
    if let Some(k) = spec.variance_intercept() {
        x[k] = x[k].max(10.0 * space.h_floor()).min(space.hi()[k]);
    }
    x
}

/// Pull an inadmissible point towards `anchor` until it becomes admissible.
fn shrink_to_admissible(spec: &ModelSpec, x: &mut [f64], anchor: &[f64]) {
    for _ in 0..60 {
        if spec.is_admissible(x) {
            return;
        }
        for (v, a) in x.iter_mut().zip(anchor) {
            *v = a + 0.5 * (*v - a);
        }
    }
}

fn fit_impl(
    spec: &ModelSpec,
    space: &ParamSpace,
    sample: &Sample,
    frozen: &[usize],
    opts: &FitOptions,
) -> Result<FitResult> {
    let d = spec.dim();
    let n = sample.n();
    if space.dim() != d {
        return Err(AcxError::DimensionMismatch {
            what: "parameter space".into(),
            expected: d,
            got: space.dim(),
        });
    }
    if sample.d_x() != spec.d_x() {
        return Err(AcxError::DimensionMismatch {
            what: "sample covariate dimension".into(),
            expected: spec.d_x(),
            got: sample.d_x(),
        });
    }
    if n <= d {
        return Err(AcxError::InvalidArgument(format!(
            "sample size {n} must exceed the parameter dimension {d}"
        )));
    }
    let mut frozen: Vec<usize> = frozen.to_vec();
    frozen.sort_unstable();
    frozen.dedup();
    let sub = space.freeze_at_zero(&frozen)?;
    let (lo, hi) = (sub.lo(), sub.hi());
    let h_floor = sub.h_floor();

    let objective = |th: &[f64]| -> f64 {
        if !spec.is_admissible(th) {
            return f64::INFINITY;
        }
        match likelihood::deviance_raw(spec, h_floor, th, sample) {
            Ok(v) => 0.5 * v,
            Err(_) => f64::INFINITY,
        }
    };

    let mid = midpoint_start(spec, &sub);
    let mut starts: Vec<Vec<f64>> = Vec::new();
    for w in &opts.warm_starts {
        if w.len() != d {
            return Err(AcxError::DimensionMismatch {
                what: "warm start".into(),
                expected: d,
                got: w.len(),
            });
        }
        let mut x = w.clone();
        sub.project(&mut x);
        shrink_to_admissible(spec, &mut x, &mid);
        starts.push(x);
    }
    let mut first = mid.clone();
    let origin: Vec<f64> = lo
        .iter()
        .zip(hi)
        .map(|(l, h)| 0.0f64.clamp(*l, *h))
        .collect();
    shrink_to_admissible(spec, &mut first, &origin);
    starts.push(first);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(START_STREAM);
    for _ in 1..opts.starts.max(1) {
        let mut x: Vec<f64> = (0..d)
            .map(|i| {
                if lo[i] < hi[i] {
                    rng.random_range(lo[i]..=hi[i])
                } else {
                    lo[i]
                }
            })
            .collect();
        shrink_to_admissible(spec, &mut x, &mid);
        starts.push(x);
    }

    let bfgs = BfgsOptions {
        max_iter: opts.max_iter,
        pg_tol: 1e-5 * n as f64,
        fd_eps: DEFAULT_FD_EPS,
    };
    let simplex = SimplexOptions {
        max_evals: 400 * (d + 1) * (d + 1),
        diam_tol: 1e-8,
    };

    let mut best: Option<optim::Outcome> = None;
    let mut used = 0usize;
    for x0 in &starts {
        let mut out = optim::projected_bfgs(objective, x0, lo, hi, &bfgs);
        if out.failed {
            let from = if out.f.is_finite() {
                out.x.clone()
            } else {
                x0.clone()
            };
            let nm = optim::nelder_mead_box(objective, &from, lo, hi, &simplex);
            if nm.f <= out.f || !out.f.is_finite() {
                out = nm;
            }
        }
        if !out.f.is_finite() {
            continue;
        }
        used += 1;
        let better = match &best {
            None => true,
            Some(b) => out.f < b.f,
        };
        if better {
            best = Some(out);
        }
    }
    let best = best.ok_or(AcxError::AllStartsFailed)?;
    let mut theta = best.x;
    for &i in &frozen {
        theta[i] = 0.0;
    }
    let loglik = -best.f;
    Ok(FitResult {
        active_bounds: active_bounds(space, &theta, &frozen, n),
        theta_hat: Theta(theta),
        loglik,
        deviance: -2.0 * loglik,
        converged: best.converged,
        frozen,
        n_starts_used: used,
    })
}

/// QMLE over the box with the components in `frozen` pinned at zero.
pub fn fit_qmle(
    spec: &ModelSpec,
    space: &ParamSpace,
    sample: &Sample,
    frozen: &[usize],
    starts: usize,
    seed: u64,
) -> Result<FitResult> {
    fit_impl(spec, space, sample, frozen, &FitOptions::new(starts, seed))
}

/// [`fit_qmle`] with full control over the optimizer options.
pub fn fit_qmle_with(
    spec: &ModelSpec,
    space: &ParamSpace,
    sample: &Sample,
    frozen: &[usize],
    opts: &FitOptions,
) -> Result<FitResult> {
    fit_impl(spec, space, sample, frozen, opts)
}

/// Complement of the support `m` in `0..d`.
pub fn complement(d: usize, support: &[usize]) -> Vec<usize> {
    (0..d).filter(|i| !support.contains(i)).collect()
}

/// QMLE over `Θ_m`: components outside `support` are frozen at zero.
pub fn fit_submodel(
    spec: &ModelSpec,
    space: &ParamSpace,
    sample: &Sample,
    support: &[usize],
    opts: &FitOptions,
) -> Result<FitResult> {
    let d = spec.dim();
    if let Some(&i) = support.iter().find(|&&i| i >= d) {
        return Err(AcxError::DimensionMismatch {
            what: "support index".into(),
            expected: d,
            got: i,
        });
    }
    fit_impl(spec, space, sample, &complement(d, support), opts)
}
