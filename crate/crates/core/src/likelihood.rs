//! Truncated Gaussian quasi-log-likelihood and its numerical derivatives.
//!
//! `L̂_n(θ) = −½ Σ_t q̂_t(θ)` with `q̂_t = (Y_t − f̂_t)²/Ĥ_t + log Ĥ_t`, where
//! `f̂_t` and `Ĥ_t` run the family recursion with every pre-sample value
//! (response, covariate and innovation) replaced by zero. `Ĥ_t` is floored at
//! `h_floor` before it is used.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{AcxError, Result};
use crate::model::{Family, ModelSpec, ParamSpace, Theta};
use crate::numdiff::{self, Step};
use crate::simulate::Sample;

/// Relative step of first-order finite differences.
pub const DEFAULT_FD_EPS: f64 = 1e-6;

/// Relative step of the outer difference when differencing scores into a Hessian.
pub const HESSIAN_FD_EPS: f64 = 1e-4;

/// Per-observation terms of the truncated likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodState {
    pub fhat: Vec<f64>,
    pub hhat: Vec<f64>,
    pub qhat: Vec<f64>,
    pub loglik: f64,
}

impl LikelihoodState {
    /// `−2 L̂_n = Σ q̂_t`.
    pub fn deviance(&self) -> f64 {
        -2.0 * self.loglik
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "fhat", "hhat", "qhat"])?;
        for t in 0..self.qhat.len() {
            wtr.write_record([
                (t + 1).to_string(),
                format!("{:e}", self.fhat[t]),
                format!("{:e}", self.hhat[t]),
                format!("{:e}", self.qhat[t]),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Run the truncated recursion and hand `(t, f̂_t, Ĥ_t)` to `sink`, with `Ĥ_t`
/// already floored. `t` is zero-based.
#[inline]
fn recursion<S>(
    spec: &ModelSpec,
    th: &[f64],
    sample: &Sample,
    h_floor: f64,
    mut sink: S,
) -> Result<()>
where
    S: FnMut(usize, f64, f64) -> Result<()>,
{
    let y = sample.y();
    let x = sample.x();
    let d_x = spec.d_x();
    let n = y.len();
    match spec.family() {
        Family::FdarX { q } => {
            let (phi0, phi1, a0, a1) = (th[0], th[1], th[2], th[3]);
            let (psi, beta) = (&th[4..4 + q], &th[4 + q..4 + 2 * q]);
            // Skip lags whose mean and variance coefficients are both zero.
            let last_lag = (1..=q)
                .rev()
                .find(|&i| psi[i - 1] != 0.0 || beta[i - 1] != 0.0)
                .unwrap_or(0);
            for t in 0..n {
                let yl = if t >= 1 { y[t - 1] } else { 0.0 };
                let mut f = phi0 + phi1 * yl;
                let mut h = a0 + a1 * yl * yl;
                for i in 1..=last_lag.min(t) {
                    let xv = x[t - i];
                    f += psi[i - 1] * xv;
                    h += beta[i - 1] * xv * xv;
                }
                sink(t, f, h.max(h_floor))?;
            }
        }
        Family::ArchX { lags } => {
            let a0 = th[0];
            let phi = &th[1..1 + lags];
            let gamma = &th[1 + lags..];
            for t in 0..n {
                let mut h = a0;
                for k in 1..=lags.min(t) {
                    h += phi[k - 1] * y[t - k] * y[t - k];
                    let row = &x[(t - k) * d_x..(t - k + 1) * d_x];
                    for (g, xv) in gamma[(k - 1) * d_x..k * d_x].iter().zip(row) {
                        h += g * xv;
                    }
                }
                sink(t, 0.0, h.max(h_floor))?;
            }
        }
        Family::ArxGarch11 => {
            let (a, c0, c1, dd) = (th[0], th[1], th[2], th[3]);
            let gamma = &th[4..];
            let mut sigma2 = c0 / (1.0 - dd);
            let mut eps_prev = 0.0;
            for t in 0..n {
                let mut f = 0.0;
                if t >= 1 {
                    sigma2 = c0 + c1 * eps_prev * eps_prev + dd * sigma2;
                    f = a * y[t - 1];
                    let row = &x[(t - 1) * d_x..t * d_x];
                    for (g, xv) in gamma.iter().zip(row) {
                        f += g * xv;
                    }
                }
                eps_prev = y[t] - f;
                sink(t, f, sigma2.max(h_floor))?;
            }
        }
        Family::Armax { p, q, s } => {
            let alpha = &th[..p];
            let beta = &th[p..p + q];
            let gamma = &th[p + q..];
            let mut resid = vec![0.0; n];
            for t in 0..n {
                let mut f = 0.0;
                for i in 1..=p.min(t) {
                    f += alpha[i - 1] * y[t - i];
                }
                for i in 1..=q.min(t) {
                    f += beta[i - 1] * resid[t - i];
                }
                for k in 1..=s.min(t) {
                    let row = &x[(t - k) * d_x..(t - k + 1) * d_x];
                    for (g, xv) in gamma[(k - 1) * d_x..k * d_x].iter().zip(row) {
                        f += g * xv;
                    }
                }
                resid[t] = y[t] - f;
                sink(t, f, 1.0f64.max(h_floor))?;
            }
        }
    }
    Ok(())
}

#[inline]
fn q_term(y: f64, f: f64, h: f64, t: usize) -> Result<f64> {
    let e = y - f;
    let q = e * e / h + h.ln();
    if q.is_finite() {
        Ok(q)
    } else {
        Err(AcxError::NonFinite { t: t + 1 })
    }
}

/// `Σ_t q̂_t(θ)` without allocating; no box check.
pub(crate) fn deviance_raw(
    spec: &ModelSpec,
    h_floor: f64,
    th: &[f64],
    sample: &Sample,
) -> Result<f64> {
    let y = sample.y();
    let mut total = 0.0;
    recursion(spec, th, sample, h_floor, |t, f, h| {
        total += q_term(y[t], f, h, t)?;
        Ok(())
    })?;
    Ok(total)
}

/// Per-observation `q̂_t(θ)`; no box check.
pub(crate) fn qhat_raw(
    spec: &ModelSpec,
    h_floor: f64,
    th: &[f64],
    sample: &Sample,
) -> Result<Vec<f64>> {
    let y = sample.y();
    let mut out = Vec::with_capacity(y.len());
    recursion(spec, th, sample, h_floor, |t, f, h| {
        out.push(q_term(y[t], f, h, t)?);
        Ok(())
    })?;
    Ok(out)
}

fn check_inputs(
    spec: &ModelSpec,
    space: &ParamSpace,
    theta: &Theta,
    sample: &Sample,
) -> Result<()> {
    let d = spec.dim();
    for (what, got) in [("parameter space", space.dim()), ("theta", theta.len())] {
        if got != d {
            return Err(AcxError::DimensionMismatch {
                what: what.into(),
                expected: d,
                got,
            });
        }
    }
    if sample.d_x() != spec.d_x() {
        return Err(AcxError::DimensionMismatch {
            what: "sample covariate dimension".into(),
            expected: spec.d_x(),
            got: sample.d_x(),
        });
    }
    if !space.contains(theta.as_slice()) {
        return Err(AcxError::InvalidArgument(
            "theta lies outside the parameter box".into(),
        ));
    }
    Ok(())
}

/// Evaluate `L̂_n(θ)` with every per-observation term.
pub fn eval_loglik(
    spec: &ModelSpec,
    space: &ParamSpace,
    theta: &Theta,
    sample: &Sample,
) -> Result<LikelihoodState> {
    check_inputs(spec, space, theta, sample)?;
    let n = sample.n();
    let y = sample.y();
    let (mut fhat, mut hhat, mut qhat) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    recursion(
        spec,
        theta.as_slice(),
        sample,
        space.h_floor(),
        |t, f, h| {
            fhat.push(f);
            hhat.push(h);
            qhat.push(q_term(y[t], f, h, t)?);
            Ok(())
        },
    )?;
    let loglik = -0.5 * qhat.iter().sum::<f64>();
    Ok(LikelihoodState {
        fhat,
        hhat,
        qhat,
        loglik,
    })
}

/// `−2 L̂_n(θ) = Σ_t q̂_t(θ)`.
pub fn deviance(
    spec: &ModelSpec,
    space: &ParamSpace,
    theta: &Theta,
    sample: &Sample,
) -> Result<f64> {
    check_inputs(spec, space, theta, sample)?;
    deviance_raw(spec, space.h_floor(), theta.as_slice(), sample)
}

fn all_steps(
    space: &ParamSpace,
    theta: &Theta,
    eps: f64,
    reserve: Option<&[f64]>,
) -> Result<Vec<Option<Step>>> {
    numdiff::plan_steps(
        theta.as_slice(),
        space.lo(),
        space.hi(),
        &vec![true; space.dim()],
        eps,
        reserve,
    )
}

/// Finite-difference gradient of `L̂_n` with relative step `eps`, one-sided
/// at active bounds.
pub fn score_fd(
    spec: &ModelSpec,
    space: &ParamSpace,
    theta: &Theta,
    sample: &Sample,
    eps: f64,
) -> Result<Vec<f64>> {
    check_inputs(spec, space, theta, sample)?;
    let plan = all_steps(space, theta, eps, None)?;
    let hf = space.h_floor();
    numdiff::gradient(
        |th| Ok(-0.5 * deviance_raw(spec, hf, th, sample)?),
        theta.as_slice(),
        &plan,
    )
}

/// `n × d` matrix whose row `t` is the finite-difference gradient of `q̂_t`.
pub fn per_obs_scores(
    spec: &ModelSpec,
    space: &ParamSpace,
    theta: &Theta,
    sample: &Sample,
    eps: f64,
) -> Result<DMatrix<f64>> {
    check_inputs(spec, space, theta, sample)?;
    let plan = all_steps(space, theta, eps, None)?;
    let hf = space.h_floor();
    let jac = numdiff::jacobian(
        |th| qhat_raw(spec, hf, th, sample),
        theta.as_slice(),
        sample.n(),
        &plan,
    )?;
    Ok(DMatrix::from_fn(sample.n(), spec.dim(), |t, i| jac[t][i]))
}

/// Finite-difference Hessian of the deviance `Σ_t q̂_t`.
#[derive(Debug, Clone)]
pub struct HessianFd {
    /// Raw (unsymmetrized) difference of scores; column `i` differences along `θ_i`.
    pub raw: DMatrix<f64>,
    /// `‖raw − rawᵀ‖_F / ‖raw‖_F`.
    pub asymmetry: f64,
}

impl HessianFd {
    pub fn symmetrized(&self) -> DMatrix<f64> {
        (&self.raw + self.raw.transpose()) * 0.5
    }
}

/// Hessian of `Σ_t q̂_t` as the outer difference (relative step `outer_eps`)
/// of inner finite-difference scores (relative step `inner_eps`). The inner
/// step plan is fixed at `theta` so every shifted evaluation uses the same
/// stencil.
pub fn deviance_hessian_fd(
    spec: &ModelSpec,
    space: &ParamSpace,
    theta: &Theta,
    sample: &Sample,
    inner_eps: f64,
    outer_eps: f64,
) -> Result<HessianFd> {
    check_inputs(spec, space, theta, sample)?;
    let inner = all_steps(space, theta, inner_eps, None)?;
    let reserve: Vec<f64> = inner.iter().map(|s| s.map_or(0.0, |s| s.h)).collect();
    let outer = all_steps(space, theta, outer_eps, Some(&reserve))?;
    let hf = space.h_floor();
    let d = spec.dim();
    let jac = numdiff::jacobian(
        |th| numdiff::gradient(|u| deviance_raw(spec, hf, u, sample), th, &inner),
        theta.as_slice(),
        d,
        &outer,
    )?;
    let raw = DMatrix::from_fn(d, d, |k, i| jac[k][i]);
    let norm = raw.norm();
    let asymmetry = if norm > 0.0 {
        (&raw - raw.transpose()).norm() / norm
    } else {
        0.0
    };
    Ok(HessianFd { raw, asymmetry })
}
