//! Wald tests of `H₀: Γθ = ϑ₀`, with χ² critical values in the interior case
//! and Monte Carlo cone-projected critical values when the null puts
//! constrained components on the boundary.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::asymptotics::{self, Cone, ConeProjector, SandwichEstimate};
use crate::error::{AcxError, Result};
use crate::estimate::{self, FitResult, DEFAULT_STARTS};
use crate::model::{ModelSpec, ParamSpace};
use crate::simulate::Sample;

/// Default number of Monte Carlo draws for a test decision.
pub const DEFAULT_TEST_DRAWS: usize = 10_000;

/// Default number of Monte Carlo draws for a reported critical value.
pub const DEFAULT_REPORT_DRAWS: usize = 100_000;

/// Minimum number of Monte Carlo draws accepted.
pub const MIN_DRAWS: usize = 1000;

/// Draws are generated in fixed-size chunks, chunk `c` from stream `c`, so
/// results do not depend on the thread count.
const CHUNK: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaldMethod {
    Chisq,
    ConeMc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldResult {
    #[serde(rename = "W_n")]
    pub w_n: f64,
    pub d0: usize,
    pub method: WaldMethod,
    pub critical_value: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub mc_draws: usize,
    pub reject: bool,
    /// False when the unrestricted fit did not converge.
    pub reliable: bool,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(AcxError::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

/// `Γ Σ Γ'`, failing when `Γ` is not of full row rank or the product is not
/// positive definite.
fn restricted_covariance(
    gamma: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let (d0, d) = gamma.shape();
    if d0 == 0 || d0 > d {
        return Err(AcxError::RankDeficient(format!(
            "Gamma has {d0} rows for dimension {d}"
        )));
    }
    if sigma.shape() != (d, d) {
        return Err(AcxError::DimensionMismatch {
            what: "Sigma".into(),
            expected: d,
            got: sigma.nrows(),
        });
    }
    let sv = gamma.clone().svd(false, false).singular_values;
    let top = sv.max();
    if !(sv.min() > 1e-12 * top.max(f64::MIN_POSITIVE) && top > 0.0) {
        return Err(AcxError::RankDeficient(
            "Gamma is not of full row rank".into(),
        ));
    }
    let m = gamma * sigma * gamma.transpose();
    let m = (&m + m.transpose()) * 0.5;
    Cholesky::new(m)
        .ok_or_else(|| AcxError::RankDeficient("Gamma Sigma Gamma' is not invertible".into()))
}

/// `W_n = n (Γθ̂ − ϑ₀)'(ΓΣΓ')⁻¹(Γθ̂ − ϑ₀)`.
pub fn wald_statistic(
    gamma: &DMatrix<f64>,
    theta_hat: &[f64],
    v0: &[f64],
    sigma: &DMatrix<f64>,
    n: usize,
) -> Result<f64> {
    let (d0, d) = gamma.shape();
    if theta_hat.len() != d {
        return Err(AcxError::DimensionMismatch {
            what: "theta_hat".into(),
            expected: d,
            got: theta_hat.len(),
        });
    }
    if v0.len() != d0 {
        return Err(AcxError::DimensionMismatch {
            what: "null value".into(),
            expected: d0,
            got: v0.len(),
        });
    }
    let chol = restricted_covariance(gamma, sigma)?;
    let r = gamma * DVector::from_column_slice(theta_hat) - DVector::from_column_slice(v0);
    let w = n as f64 * r.dot(&chol.solve(&r));
    Ok(w.max(0.0))
}

/// `(1 − α)` quantile of `χ²_{d0}`.
pub fn critical_value_chisq(d0: usize, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if d0 == 0 {
        return Err(AcxError::InvalidArgument("d0 must be at least 1".into()));
    }
    let chi = ChiSquared::new(d0 as f64).map_err(|e| AcxError::InvalidArgument(e.to_string()))?;
    Ok(chi.inverse_cdf(1.0 - alpha))
}

/// Upper tail `P(χ²_{d0} ≥ w)`.
pub fn p_value_chisq(w: f64, d0: usize) -> Result<f64> {
    let chi = ChiSquared::new(d0 as f64).map_err(|e| AcxError::InvalidArgument(e.to_string()))?;
    Ok(chi.sf(w).clamp(0.0, 1.0))
}

/// Sorted Monte Carlo sample of `T = (ΓZ^C)'(ΓΣΓ')⁻¹(ΓZ^C)`, `Z ~ N(0, Σ)`,
/// `Z^C` the `F`-metric projection of `Z` onto `cone`.
pub fn cone_mc_sample(
    gamma: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    f: &DMatrix<f64>,
    cone: &Cone,
    draws: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if draws < MIN_DRAWS {
        return Err(AcxError::InvalidArgument(format!(
            "at least {MIN_DRAWS} Monte Carlo draws are required, got {draws}"
        )));
    }
    let d = sigma.nrows();
    if cone.dim() != d || gamma.ncols() != d {
        return Err(AcxError::DimensionMismatch {
            what: "cone / Gamma".into(),
            expected: d,
            got: cone.dim(),
        });
    }
    let chol = restricted_covariance(gamma, sigma)?;
    let projector = ConeProjector::new(f, cone)?;
    // Σ = QΛQ' ⇒ Z = Q Λ^{1/2} ξ; tiny negative eigenvalues from noise are clipped.
    let eig = SymmetricEigen::new((sigma + sigma.transpose()) * 0.5);
    let root =
        &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));

    let chunks = draws.div_ceil(CHUNK);
    let mut out: Vec<f64> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let len = CHUNK.min(draws - c * CHUNK);
            let mut vals = Vec::with_capacity(len);
            for _ in 0..len {
                let xi = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
                let z = &root * xi;
                let zc = DVector::from_vec(projector.project(z.as_slice()));
                let gz = gamma * zc;
                vals.push(gz.dot(&chol.solve(&gz)));
            }
            vals.into_iter()
        })
        .collect();
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Empirical `(1 − α)` quantile with the "higher" rule: order statistic
/// `N − ⌈αN⌉` (0-based). Then `W > q ⇔ #{T ≥ W} < αN`.
pub fn upper_quantile(sorted: &[f64], alpha: f64) -> f64 {
    let n = sorted.len();
    let k = ((alpha * n as f64).ceil() as usize).clamp(1, n);
    sorted[n - k]
}

/// Share of the Monte Carlo sample at or above `w`.
pub fn empirical_p_value(sorted: &[f64], w: f64) -> f64 {
    let below = sorted.partition_point(|t| *t < w);
    (sorted.len() - below) as f64 / sorted.len() as f64
}

pub fn critical_value_cone_mc(
    gamma: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    f: &DMatrix<f64>,
    cone: &Cone,
    alpha: f64,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(upper_quantile(
        &cone_mc_sample(gamma, sigma, f, cone, draws, seed)?,
        alpha,
    ))
}

/// Rows of `Γ` that select a single constrained component whose null value
/// equals one of its bounds.
pub fn default_null_activity(space: &ParamSpace, gamma: &DMatrix<f64>, v0: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    for r in 0..gamma.nrows() {
        let nz: Vec<usize> = (0..gamma.ncols())
            .filter(|&j| gamma[(r, j)] != 0.0)
            .collect();
        if let [i] = nz[..] {
            let value = v0[r] / gamma[(r, i)];
            let at_bound = value == space.lo()[i] || value == space.hi()[i];
            if space.constrained()[i] && at_bound && !out.contains(&i) {
                out.push(i);
            }
        }
    }
    out.sort_unstable();
    out
}

/// Cone for the null: each active component is sign-constrained away from
/// the bound named by `Γθ = ϑ₀` (or, if it is not pinned by a selector row,
/// from the bound nearer to `theta_ref`).
pub fn null_cone(
    space: &ParamSpace,
    theta_ref: &[f64],
    gamma: &DMatrix<f64>,
    v0: &[f64],
    activity: &[usize],
) -> Result<Cone> {
    let mut reference = theta_ref.to_vec();
    for r in 0..gamma.nrows() {
        let nz: Vec<usize> = (0..gamma.ncols())
            .filter(|&j| gamma[(r, j)] != 0.0)
            .collect();
        if let [i] = nz[..] {
            reference[i] = v0[r] / gamma[(r, i)];
        }
    }
    asymptotics::build_cone(space, &crate::model::Theta(reference), activity)
}

/// Decision from a fitted model and its sandwich estimate.
#[allow(clippy::too_many_arguments)]
pub fn wald_test(
    fit: &FitResult,
    sandwich: &SandwichEstimate,
    n: usize,
    gamma: &DMatrix<f64>,
    v0: &[f64],
    cone: &Cone,
    alpha: f64,
    draws: usize,
    seed: u64,
) -> Result<WaldResult> {
    check_alpha(alpha)?;
    let w_n = wald_statistic(gamma, fit.theta_hat.as_slice(), v0, &sandwich.sigma, n)?;
    let d0 = gamma.nrows();
    let (method, critical_value, p_value, mc_draws) = if cone.is_free() {
        (
            WaldMethod::Chisq,
            critical_value_chisq(d0, alpha)?,
            p_value_chisq(w_n, d0)?,
            0,
        )
    } else {
        let sample = cone_mc_sample(gamma, &sandwich.sigma, &sandwich.f, cone, draws, seed)?;
        (
            WaldMethod::ConeMc,
            upper_quantile(&sample, alpha),
            empirical_p_value(&sample, w_n),
            draws,
        )
    };
    Ok(WaldResult {
        w_n,
        d0,
        method,
        critical_value,
        p_value,
        alpha,
        mc_draws,
        reject: w_n > critical_value,
        reliable: fit.converged,
    })
}

/// Fit the unrestricted model, estimate `Σ̂`, and test `Γθ = ϑ₀`.
///
/// `null_activity = None` uses [`default_null_activity`]; an empty activity
/// set gives the χ² test.
#[allow(clippy::too_many_arguments)]
pub fn significance_test(
    spec: &ModelSpec,
    space: &ParamSpace,
    sample: &Sample,
    gamma: &DMatrix<f64>,
    v0: &[f64],
    alpha: f64,
    null_activity: Option<&[usize]>,
    draws: usize,
    seed: u64,
) -> Result<WaldResult> {
    check_alpha(alpha)?;
    if gamma.nrows() == 0 {
        return Err(AcxError::RankDeficient("Gamma has no rows".into()));
    }
    if gamma.ncols() != spec.dim() || v0.len() != gamma.nrows() {
        return Err(AcxError::DimensionMismatch {
            what: "Gamma / null value".into(),
            expected: spec.dim(),
            got: gamma.ncols(),
        });
    }
    let fit = estimate::fit_qmle(spec, space, sample, &[], DEFAULT_STARTS, seed)?;
    let sandwich = asymptotics::estimate_sandwich(spec, space, sample, &fit.theta_hat)?;
    let activity = match null_activity {
        Some(a) => a.to_vec(),
        None => default_null_activity(space, gamma, v0),
    };
    let cone = null_cone(space, fit.theta_hat.as_slice(), gamma, v0, &activity)?;
    wald_test(
        &fit,
        &sandwich,
        sample.n(),
        gamma,
        v0,
        &cone,
        alpha,
        draws,
        seed,
    )
}

/// Selector matrix whose rows pick the listed components.
pub fn selector(d: usize, components: &[usize]) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(components.len(), d);
    for (r, &i) in components.iter().enumerate() {
        g[(r, i)] = 1.0;
    }
    g
}
