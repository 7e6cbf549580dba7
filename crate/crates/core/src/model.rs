//! Model families, parameter spaces and stationarity checks.
//!
//! Every family is an affine causal recursion
//!
//! ```text
//! Y_t = M_θ(Y_{t-1}, …; X_{t-1}, …) ξ_t + f_θ(Y_{t-1}, …; X_{t-1}, …)
//! ```
//!
//! with conditional variance `H_θ = M_θ²`. Parameter layouts:
//!
//! | family          | layout                                              | d                 |
//! |-----------------|-----------------------------------------------------|-------------------|
//! | `Armax(p,q,s)`  | α₁..α_p, β₁..β_q, γ₁..γ_s (each `d_x` wide)         | p + q + s·d_x     |
//! | `ArchX(Q)`      | α₀, φ₁..φ_Q, γ₁..γ_Q (each `d_x` wide)              | 1 + Q + Q·d_x     |
//! | `ArxGarch11`    | a, c₀, c₁, d, γ (`d_x` wide)                        | 4 + d_x           |
//! | `FdarX(q)`      | φ₀, φ₁, α₀, α₁, ψ₁..ψ_q, β₁..β_q                    | 4 + 2q            |

use serde::{Deserialize, Serialize};

use crate::error::{AcxError, Result};

/// Default truncation length of the ARMAX ψ-weight expansion.
pub const DEFAULT_PSI_TERMS: usize = 100;

/// Default lower bound for the conditional variance.
pub const DEFAULT_H_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Linear ARMAX with unit conditional variance.
    Armax { p: usize, q: usize, s: usize },
    /// ARCH-X with finite lag order: zero mean, variance linear in Y² and X.
    ArchX { lags: usize },
    /// ARX(1) mean with a GARCH(1,1) variance.
    ArxGarch11,
    /// Double autoregression with a single covariate in mean and variance.
    FdarX { q: usize },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Armax { .. } => "armax",
            Family::ArchX { .. } => "archx",
            Family::ArxGarch11 => "arx_garch11",
            Family::FdarX { .. } => "fdarx",
        }
    }

    pub fn orders(&self) -> Vec<usize> {
        match *self {
            Family::Armax { p, q, s } => vec![p, q, s],
            Family::ArchX { lags } => vec![lags],
            Family::ArxGarch11 => Vec::new(),
            Family::FdarX { q } => vec![q],
        }
    }

    pub fn from_parts(name: &str, orders: &[usize]) -> Result<Self> {
        let want = |k: usize| -> Result<()> {
            if orders.len() == k {
                Ok(())
            } else {
                Err(AcxError::InvalidSpec(format!(
                    "family '{name}' takes {k} orders, got {}",
                    orders.len()
                )))
            }
        };
        match name {
            "armax" => {
                want(3)?;
                Ok(Family::Armax {
                    p: orders[0],
                    q: orders[1],
                    s: orders[2],
                })
            }
            "archx" => {
                want(1)?;
                Ok(Family::ArchX { lags: orders[0] })
            }
            "arx_garch11" => {
                want(0)?;
                Ok(Family::ArxGarch11)
            }
            "fdarx" => {
                want(1)?;
                Ok(Family::FdarX { q: orders[0] })
            }
            other => Err(AcxError::InvalidSpec(format!("unknown family '{other}'"))),
        }
    }
}

/// A model family together with its covariate dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    family: Family,
    d_x: usize,
}

impl ModelSpec {
    pub fn new(family: Family, d_x: usize) -> Result<Self> {
        match family {
            Family::Armax { s, .. } if s > 0 && d_x == 0 => Err(AcxError::InvalidSpec(
                "ARMAX with covariate lags needs d_x >= 1".into(),
            )),
            Family::ArchX { .. } | Family::ArxGarch11 if d_x == 0 => Err(AcxError::InvalidSpec(
                format!("{} needs d_x >= 1", family.name()),
            )),
            Family::FdarX { .. } if d_x != 1 => Err(AcxError::InvalidSpec(
                "FDAR-X takes a single covariate (d_x = 1)".into(),
            )),
            _ => Ok(Self { family, d_x }),
        }
    }

    pub fn armax(p: usize, q: usize, s: usize, d_x: usize) -> Result<Self> {
        Self::new(Family::Armax { p, q, s }, d_x)
    }

    pub fn arch_x(lags: usize, d_x: usize) -> Result<Self> {
        Self::new(Family::ArchX { lags }, d_x)
    }

    pub fn arx_garch11(d_x: usize) -> Result<Self> {
        Self::new(Family::ArxGarch11, d_x)
    }

    pub fn fdarx(q: usize) -> Self {
        Self {
            family: Family::FdarX { q },
            d_x: 1,
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn d_x(&self) -> usize {
        self.d_x
    }

    /// Total parameter dimension.
    pub fn dim(&self) -> usize {
        match self.family {
            Family::Armax { p, q, s } => p + q + s * self.d_x,
            Family::ArchX { lags } => 1 + lags + lags * self.d_x,
            Family::ArxGarch11 => 4 + self.d_x,
            Family::FdarX { q } => 4 + 2 * q,
        }
    }

    fn gamma_name(&self, lag: Option<usize>, j: usize) -> String {
        match (lag, self.d_x) {
            (Some(k), 1) => format!("gamma{k}"),
            (Some(k), _) => format!("gamma{k}_{}", j + 1),
            (None, 1) => "gamma".to_string(),
            (None, _) => format!("gamma_{}", j + 1),
        }
    }

    /// Ordered component names.
    pub fn layout(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim());
        match self.family {
            Family::Armax { p, q, s } => {
                names.extend((1..=p).map(|i| format!("alpha{i}")));
                names.extend((1..=q).map(|i| format!("beta{i}")));
                for k in 1..=s {
                    for j in 0..self.d_x {
                        names.push(self.gamma_name(Some(k), j));
                    }
                }
            }
            Family::ArchX { lags } => {
                names.push("alpha0".into());
                names.extend((1..=lags).map(|i| format!("phi{i}")));
                for k in 1..=lags {
                    for j in 0..self.d_x {
                        names.push(self.gamma_name(Some(k), j));
                    }
                }
            }
            Family::ArxGarch11 => {
                names.extend(["a", "c0", "c1", "d"].map(String::from));
                for j in 0..self.d_x {
                    names.push(self.gamma_name(None, j));
                }
            }
            Family::FdarX { q } => {
                names.extend(["phi0", "phi1", "alpha0", "alpha1"].map(String::from));
                names.extend((1..=q).map(|i| format!("psi{i}")));
                names.extend((1..=q).map(|i| format!("beta{i}")));
            }
        }
        names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.layout().iter().position(|n| n == name)
    }

    /// Index of the variance intercept, if the family estimates one.
    pub fn variance_intercept(&self) -> Option<usize> {
        match self.family {
            Family::Armax { .. } => None,
            Family::ArchX { .. } => Some(0),
            Family::ArxGarch11 => Some(1),
            Family::FdarX { .. } => Some(2),
        }
    }

    /// Indices of variance slope coefficients, which must be non-negative.
    pub fn variance_coefficients(&self) -> Vec<usize> {
        match self.family {
            Family::Armax { .. } => Vec::new(),
            Family::ArchX { .. } => (1..self.dim()).collect(),
            Family::ArxGarch11 => vec![2, 3],
            Family::FdarX { q } => std::iter::once(3).chain(4 + q..4 + 2 * q).collect(),
        }
    }

    /// Hard feasibility of a parameter beyond its box: invertibility of the
    /// moving-average polynomial for ARMAX and `c₁ + d < 1` for ARX-GARCH.
    pub fn is_admissible(&self, theta: &[f64]) -> bool {
        match self.family {
            Family::Armax { p, q, .. } => theta[..p + q].iter().map(|v| v.abs()).sum::<f64>() < 1.0,
            Family::ArxGarch11 => theta[2] + theta[3] < 1.0 && theta[3] < 1.0,
            _ => true,
        }
    }

    fn check_dim(&self, got: usize, what: &str) -> Result<()> {
        if got == self.dim() {
            Ok(())
        } else {
            Err(AcxError::DimensionMismatch {
                what: what.to_string(),
                expected: self.dim(),
                got,
            })
        }
    }
}

/// A parameter vector in model units, ordered as [`ModelSpec::layout`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Theta(pub Vec<f64>);

impl Theta {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<f64>> for Theta {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl std::ops::Index<usize> for Theta {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Box bounds with boundary metadata.
///
/// A component is *constrained* when the true value may sit on one of its
/// endpoints; only constrained components may contribute half-lines to the
/// limiting cone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    lo: Vec<f64>,
    hi: Vec<f64>,
    constrained: Vec<bool>,
    h_floor: f64,
}

impl ParamSpace {
    pub fn new(
        spec: &ModelSpec,
        lo: Vec<f64>,
        hi: Vec<f64>,
        constrained: Vec<bool>,
        h_floor: f64,
    ) -> Result<Self> {
        spec.check_dim(lo.len(), "lower bounds")?;
        spec.check_dim(hi.len(), "upper bounds")?;
        spec.check_dim(constrained.len(), "constrained flags")?;
        if !(h_floor > 0.0 && h_floor.is_finite()) {
            return Err(AcxError::InvalidSpace(format!(
                "h_floor must be positive and finite, got {h_floor}"
            )));
        }
        let names = spec.layout();
        for i in 0..lo.len() {
            if !(lo[i].is_finite() && hi[i].is_finite()) || lo[i] > hi[i] {
                return Err(AcxError::InvalidSpace(format!(
                    "bounds for {} are not an interval: [{}, {}]",
                    names[i], lo[i], hi[i]
                )));
            }
        }
        match spec.family() {
            Family::ArchX { .. } | Family::FdarX { .. } => {
                let i = spec.variance_intercept().unwrap();
                if lo[i] < h_floor {
                    return Err(AcxError::InvalidSpace(format!(
                        "lower bound of {} ({}) is below h_floor ({h_floor})",
                        names[i], lo[i]
                    )));
                }
            }
            Family::ArxGarch11 => {
                if lo[1] <= 0.0 {
                    return Err(AcxError::InvalidSpace(
                        "c0 must be bounded away from 0".into(),
                    ));
                }
                if hi[3] >= 1.0 {
                    return Err(AcxError::InvalidSpace(
                        "upper bound of d must be < 1".into(),
                    ));
                }
            }
            Family::Armax { .. } => {}
        }
        for i in spec.variance_coefficients() {
            if lo[i] < 0.0 {
                return Err(AcxError::InvalidSpace(format!(
                    "variance coefficient {} must have lower bound >= 0",
                    names[i]
                )));
            }
        }
        Ok(Self {
            lo,
            hi,
            constrained,
            h_floor,
        })
    }

    /// Bounds used when none are supplied.
    pub fn default_for(spec: &ModelSpec) -> Self {
        let d = spec.dim();
        let (mut lo, mut hi, mut constrained) = (vec![0.0; d], vec![0.0; d], vec![false; d]);
        let mut set = |i: usize, l: f64, h: f64, c: bool| {
            lo[i] = l;
            hi[i] = h;
            constrained[i] = c;
        };
        match spec.family() {
            Family::Armax { p, q, .. } => {
                for i in 0..p + q {
                    set(i, -0.99, 0.99, false);
                }
                for i in p + q..d {
                    set(i, -10.0, 10.0, false);
                }
            }
            Family::ArchX { lags } => {
                set(0, 1e-4, 10.0, false);
                for i in 1..=lags {
                    set(i, 0.0, 0.99, true);
                }
                for i in 1 + lags..d {
                    set(i, 0.0, 10.0, true);
                }
            }
            Family::ArxGarch11 => {
                set(0, -0.99, 0.99, false);
                set(1, 1e-4, 10.0, false);
                set(2, 0.0, 0.99, true);
                set(3, 0.0, 0.98, true);
                for i in 4..d {
                    set(i, -10.0, 10.0, false);
                }
            }
            Family::FdarX { q } => {
                set(0, -2.0, 2.0, false);
                set(1, -0.99, 0.99, false);
                set(2, 1e-4, 5.0, false);
                set(3, 0.0, 0.99, true);
                for i in 4..4 + 2 * q {
                    set(i, 0.0, 2.0, true);
                }
            }
        }
        Self {
            lo,
            hi,
            constrained,
            h_floor: DEFAULT_H_FLOOR,
        }
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn constrained(&self) -> &[bool] {
        &self.constrained
    }

    pub fn h_floor(&self) -> f64 {
        self.h_floor
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    /// Clamp every component into its interval.
    pub fn project(&self, theta: &mut [f64]) {
        for (i, v) in theta.iter_mut().enumerate() {
            *v = v.clamp(self.lo[i], self.hi[i]);
        }
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }

    /// A copy whose components in `frozen` are pinned to zero.
    pub fn freeze_at_zero(&self, frozen: &[usize]) -> Result<Self> {
        let mut out = self.clone();
        for &i in frozen {
            if i >= self.dim() {
                return Err(AcxError::DimensionMismatch {
                    what: "frozen component index".into(),
                    expected: self.dim(),
                    got: i,
                });
            }
            if self.lo[i] > 0.0 || self.hi[i] < 0.0 {
                return Err(AcxError::InfeasibleFreeze { component: i });
            }
            out.lo[i] = 0.0;
            out.hi[i] = 0.0;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub component: usize,
    pub name: String,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Validation {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

/// Check `theta` against the closed box of `space`.
pub fn validate_theta(spec: &ModelSpec, space: &ParamSpace, theta: &Theta) -> Result<Validation> {
    spec.check_dim(space.dim(), "parameter space")?;
    spec.check_dim(theta.len(), "theta")?;
    let names = spec.layout();
    let violations: Vec<Violation> = theta
        .0
        .iter()
        .enumerate()
        .filter(|(i, v)| !(space.lo[*i] <= **v && **v <= space.hi[*i]))
        .map(|(i, v)| Violation {
            component: i,
            name: names[i].clone(),
            value: *v,
            lo: space.lo[i],
            hi: space.hi[i],
        })
        .collect();
    Ok(Validation {
        valid: violations.is_empty(),
        violations,
    })
}

/// Truncated ψ-weight expansion of an ARMAX parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiWeights {
    /// `A(L)/B(L) = 1 - Σ phi[k-1] L^k`.
    pub phi: Vec<f64>,
    /// `C(L)/B(L) = Σ varphi[k-1] L^k`, one row of length `d_x` per lag.
    pub varphi: Vec<Vec<f64>>,
}

impl PsiWeights {
    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }
}

/// Expand `A_θ(L)/B_θ(L)` and `C_θ(L)/B_θ(L)` by polynomial long division.
///
/// `theta` is laid out as `(α₁..α_p, β₁..β_q, γ₁..γ_s)` with each γ block
/// `d_x` wide.
pub fn armax_psi_weights(
    theta: &[f64],
    p: usize,
    q: usize,
    s: usize,
    d_x: usize,
    k_terms: usize,
) -> Result<PsiWeights> {
    if k_terms == 0 {
        return Err(AcxError::InvalidArgument(
            "truncation length must be >= 1".into(),
        ));
    }
    let d = p + q + s * d_x;
    if theta.len() != d {
        return Err(AcxError::DimensionMismatch {
            what: "ARMAX theta".into(),
            expected: d,
            got: theta.len(),
        });
    }
    let alpha = &theta[..p];
    let beta = &theta[p..p + q];
    let gamma = &theta[p + q..];
    let l1: f64 = alpha.iter().chain(beta).map(|v| v.abs()).sum();
    if l1 >= 1.0 {
        return Err(AcxError::NonInvertible(l1));
    }

    // a = A/B with a_0 = 1; c = C/B with c_0 = 0.
    let mut a = vec![0.0; k_terms + 1];
    let mut c = vec![vec![0.0; d_x]; k_terms + 1];
    a[0] = 1.0;
    for k in 1..=k_terms {
        let mut ak = if k <= p { -alpha[k - 1] } else { 0.0 };
        let mut ck = if k <= s {
            gamma[(k - 1) * d_x..k * d_x].to_vec()
        } else {
            vec![0.0; d_x]
        };
        for j in 1..=q.min(k) {
            ak -= beta[j - 1] * a[k - j];
            for (cv, prev) in ck.iter_mut().zip(&c[k - j]) {
                *cv -= beta[j - 1] * prev;
            }
        }
        a[k] = ak;
        c[k] = ck;
    }
    Ok(PsiWeights {
        phi: a[1..].iter().map(|v| -v).collect(),
        varphi: c.into_iter().skip(1).collect(),
    })
}

/// Result of a stationarity check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StationarityMargin {
    /// `1 −` the family's contraction sum; positive means θ ∈ Θ(r).
    pub value: f64,
    /// False when `r > 2` and the noise moment ‖ξ₀‖_r was not supplied,
    /// in which case ‖ξ₀‖_r = 1 was assumed.
    pub moment_verified: bool,
}

impl StationarityMargin {
    pub fn is_stationary(&self) -> bool {
        self.value > 0.0
    }
}

/// Contraction margin of `theta` for moment order `r`.
///
/// `alpha_g` is the Lipschitz coefficient of the covariate recursion, placed
/// at lag one (AR(1) covariates). `xi_norm` is ‖ξ₀‖_r; it defaults to 1,
/// which is exact for `r = 2` and an upper bound for `r < 2`.
pub fn stationarity_margin(
    spec: &ModelSpec,
    theta: &Theta,
    alpha_g: f64,
    r: f64,
    xi_norm: Option<f64>,
) -> Result<StationarityMargin> {
    spec.check_dim(theta.len(), "theta")?;
    if !(r >= 1.0) || !r.is_finite() {
        return Err(AcxError::UnsupportedOrder {
            r,
            reason: "moment order must be >= 1".into(),
        });
    }
    if !(0.0..1.0).contains(&alpha_g) {
        return Err(AcxError::InvalidArgument(format!(
            "covariate Lipschitz coefficient must lie in [0, 1), got {alpha_g}"
        )));
    }
    if let Some(m) = xi_norm {
        if !(m > 0.0 && m.is_finite()) {
            return Err(AcxError::InvalidArgument(format!(
                "invalid noise moment {m}"
            )));
        }
    }
    let moment_verified = xi_norm.is_some() || r <= 2.0;
    let xi = xi_norm.unwrap_or(1.0);
    let th = theta.as_slice();

    let contraction = match spec.family() {
        Family::Armax { p, q, s } => {
            let w = armax_psi_weights(th, p, q, s, spec.d_x(), DEFAULT_PSI_TERMS)?;
            w.phi
                .iter()
                .enumerate()
                .map(|(k, phi)| {
                    if k == 0 {
                        alpha_g.max(phi.abs())
                    } else {
                        phi.abs()
                    }
                })
                .sum::<f64>()
        }
        Family::ArchX { lags } => {
            let y_coef = &th[1..1 + lags];
            let lag_sum = match y_coef.split_first() {
                Some((first, rest)) => {
                    alpha_g.max(first.abs()) + rest.iter().map(|v| v.abs()).sum::<f64>()
                }
                None => alpha_g,
            };
            xi * xi * lag_sum
        }
        Family::ArxGarch11 => {
            let (a, c1, d) = (th[0].abs(), th[2], th[3]);
            if d >= 1.0 {
                return Err(AcxError::InvalidArgument(
                    "GARCH persistence d must be < 1".into(),
                ));
            }
            alpha_g.max(a + c1 * xi) + c1 / (1.0 - d) * (d + a) * xi
        }
        Family::FdarX { .. } => alpha_g.max(th[1].abs() + xi * th[3].max(0.0).sqrt()),
    };
    Ok(StationarityMargin {
        value: 1.0 - contraction,
        moment_verified,
    })
}

/// JSON document describing a model and its parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub family: String,
    #[serde(default)]
    pub orders: Vec<usize>,
    pub d_x: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constrained: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_floor: Option<f64>,
}

impl ModelDoc {
    pub fn from_model(spec: &ModelSpec, space: &ParamSpace) -> Self {
        Self {
            family: spec.family().name().to_string(),
            orders: spec.family().orders(),
            d_x: spec.d_x(),
            lo: Some(space.lo.clone()),
            hi: Some(space.hi.clone()),
            constrained: Some(space.constrained.clone()),
            h_floor: Some(space.h_floor),
        }
    }

    /// Build the spec and space; missing bound fields fall back to
    /// [`ParamSpace::default_for`].
    pub fn into_model(&self) -> Result<(ModelSpec, ParamSpace)> {
        let spec = ModelSpec::new(Family::from_parts(&self.family, &self.orders)?, self.d_x)?;
        let default = ParamSpace::default_for(&spec);
        let space = ParamSpace::new(
            &spec,
            self.lo.clone().unwrap_or_else(|| default.lo.clone()),
            self.hi.clone().unwrap_or_else(|| default.hi.clone()),
            self.constrained
                .clone()
                .unwrap_or_else(|| default.constrained.clone()),
            self.h_floor.unwrap_or(default.h_floor),
        )?;
        Ok((spec, space))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn s0_space() -> (ModelSpec, ParamSpace) {
        let spec = ModelSpec::fdarx(1);
        let space = ParamSpace::new(
            &spec,
            vec![-2.0, -0.99, 1e-4, 0.0, 0.0, 0.0],
            vec![2.0, 0.99, 5.0, 0.99, 2.0, 2.0],
            vec![false, false, false, true, true, true],
            1e-8,
        )
        .unwrap();
        (spec, space)
    }

    #[test]
    fn dims_follow_family_formulas() {
        assert_eq!(ModelSpec::armax(2, 1, 3, 2).unwrap().dim(), 2 + 1 + 6);
        assert_eq!(ModelSpec::arch_x(3, 2).unwrap().dim(), 1 + 3 + 6);
        assert_eq!(ModelSpec::arx_garch11(3).unwrap().dim(), 7);
        assert_eq!(ModelSpec::fdarx(2).dim(), 8);
        for spec in [
            ModelSpec::armax(2, 1, 3, 2).unwrap(),
            ModelSpec::arch_x(3, 2).unwrap(),
            ModelSpec::arx_garch11(3).unwrap(),
            ModelSpec::fdarx(4),
        ] {
            assert_eq!(spec.layout().len(), spec.dim());
        }
    }

    #[test]
    fn covariate_free_cases() {
        assert_eq!(ModelSpec::armax(1, 1, 0, 0).unwrap().dim(), 2);
        assert!(ModelSpec::armax(1, 1, 1, 0).is_err());
        assert!(ModelSpec::arch_x(1, 0).is_err());
        assert!(ModelSpec::new(Family::FdarX { q: 1 }, 2).is_err());
        assert_eq!(
            ModelSpec::fdarx(0).layout(),
            ["phi0", "phi1", "alpha0", "alpha1"]
        );
    }

    #[test]
    fn validate_scenario_s0() {
        let (spec, space) = s0_space();
        let v =
            validate_theta(&spec, &space, &Theta(vec![0.15, -0.2, 0.4, 0.3, 0.0, 0.0])).unwrap();
        assert!(v.valid);
        let at_lo = validate_theta(&spec, &space, &Theta(space.lo().to_vec())).unwrap();
        assert!(at_lo.valid);
        let bad =
            validate_theta(&spec, &space, &Theta(vec![0.15, -0.2, -0.1, 0.3, 0.0, 0.0])).unwrap();
        assert!(!bad.valid);
        assert_eq!(bad.violations.len(), 1);
        assert_eq!(bad.violations[0].name, "alpha0");
    }

    #[test]
    fn validate_dimension_mismatch() {
        let (spec, space) = s0_space();
        assert!(matches!(
            validate_theta(&spec, &space, &Theta(vec![0.0; 5])),
            Err(AcxError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn space_invariants_enforced() {
        let spec = ModelSpec::fdarx(1);
        let mut lo = vec![-2.0, -0.99, 1e-4, 0.0, 0.0, 0.0];
        let hi = vec![2.0, 0.99, 5.0, 0.99, 2.0, 2.0];
        let c = vec![false; 6];
        lo[2] = 1e-10;
        assert!(ParamSpace::new(&spec, lo.clone(), hi.clone(), c.clone(), 1e-8).is_err());
        lo[2] = 1e-4;
        lo[5] = -0.1;
        assert!(ParamSpace::new(&spec, lo.clone(), hi.clone(), c.clone(), 1e-8).is_err());
        lo[5] = 0.0;
        assert!(ParamSpace::new(&spec, lo.clone(), hi.clone(), c.clone(), 0.0).is_err());
        lo[0] = 3.0;
        assert!(ParamSpace::new(&spec, lo, hi, c, 1e-8).is_err());
        for spec in [
            ModelSpec::armax(2, 1, 1, 1).unwrap(),
            ModelSpec::arch_x(2, 2).unwrap(),
            ModelSpec::arx_garch11(2).unwrap(),
            ModelSpec::fdarx(3),
        ] {
            let d = ParamSpace::default_for(&spec);
            ParamSpace::new(
                &spec,
                d.lo.clone(),
                d.hi.clone(),
                d.constrained.clone(),
                d.h_floor,
            )
            .unwrap();
        }
    }

    #[test]
    fn psi_weights_pure_ar() {
        // B(L) = 1 → weights are the raw coefficients.
        let w = armax_psi_weights(&[0.3, -0.2, 0.5, 0.25], 2, 0, 2, 1, 5).unwrap();
        assert_eq!(w.phi, vec![0.3, -0.2, 0.0, 0.0, 0.0]);
        assert_eq!(
            w.varphi.iter().map(|r| r[0]).collect::<Vec<_>>(),
            vec![0.5, 0.25, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn psi_weights_pure_ma() {
        // 1/(1 + 0.5L) = 1 − 0.5L + 0.25L² − 0.125L³.
        let w = armax_psi_weights(&[0.5], 0, 1, 0, 0, 3).unwrap();
        assert_abs_diff_eq!(w.phi[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w.phi[1], -0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(w.phi[2], 0.125, epsilon = 1e-15);
    }

    #[test]
    fn psi_weights_remultiply() {
        let (alpha, beta, gamma) = (0.3, 0.2, 0.4);
        let w = armax_psi_weights(&[alpha, beta, gamma], 1, 1, 1, 1, 4).unwrap();
        // (1 − Σφ_k L^k)(1 + βL) must equal 1 − αL on the first K coefficients.
        let mut a = vec![1.0];
        a.extend(w.phi.iter().map(|v| -v));
        let want = [1.0, -alpha, 0.0, 0.0, 0.0];
        for k in 0..=4 {
            let got = a[k] + if k >= 1 { beta * a[k - 1] } else { 0.0 };
            assert_abs_diff_eq!(got, want[k], epsilon = 1e-12);
        }
        let c: Vec<f64> = std::iter::once(0.0)
            .chain(w.varphi.iter().map(|r| r[0]))
            .collect();
        let want_c = [0.0, gamma, 0.0, 0.0, 0.0];
        for k in 0..=4 {
            let got = c[k] + if k >= 1 { beta * c[k - 1] } else { 0.0 };
            assert_abs_diff_eq!(got, want_c[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn psi_weights_errors() {
        assert!(matches!(
            armax_psi_weights(&[0.6, 0.5], 1, 1, 0, 0, 10),
            Err(AcxError::NonInvertible(_))
        ));
        assert!(armax_psi_weights(&[0.1], 1, 0, 0, 0, 0).is_err());
    }

    #[test]
    fn margins_by_hand() {
        let spec = ModelSpec::fdarx(1);
        let m = stationarity_margin(
            &spec,
            &Theta(vec![0.15, -0.2, 0.4, 0.3, 0.0, 0.0]),
            0.5,
            2.0,
            None,
        )
        .unwrap();
        assert_abs_diff_eq!(m.value, 1.0 - (0.2 + 0.3f64.sqrt()), epsilon = 1e-12);
        assert_abs_diff_eq!(m.value, 0.2523, epsilon = 1e-4);
        assert!(m.moment_verified);

        let spec2 = ModelSpec::fdarx(2);
        let s1 = Theta(vec![0.6, 0.45, 0.5, 0.15, 1.0, 0.7, 0.6, 0.35]);
        let m = stationarity_margin(&spec2, &s1, 0.5, 2.0, None).unwrap();
        assert_abs_diff_eq!(m.value, 0.1627, epsilon = 1e-4);

        let armax = ModelSpec::armax(2, 1, 1, 1).unwrap();
        let m = stationarity_margin(&armax, &Theta(vec![0.0; 4]), 0.3, 2.0, None).unwrap();
        assert_abs_diff_eq!(m.value, 0.7, epsilon = 1e-15);
    }

    #[test]
    fn margin_garch_and_archx() {
        let g = ModelSpec::arx_garch11(1).unwrap();
        let th = Theta(vec![0.2, 0.1, 0.1, 0.8, 0.5]);
        let m = stationarity_margin(&g, &th, 0.5, 2.0, None).unwrap();
        let want = 1.0 - (0.5f64.max(0.2 + 0.1) + 0.1 / 0.2 * (0.8 + 0.2));
        assert_abs_diff_eq!(m.value, want, epsilon = 1e-12);

        let a = ModelSpec::arch_x(2, 1).unwrap();
        let th = Theta(vec![0.5, 0.3, 0.2, 0.1, 0.1]);
        let m = stationarity_margin(&a, &th, 0.4, 2.0, None).unwrap();
        assert_abs_diff_eq!(m.value, 1.0 - (0.4 + 0.2), epsilon = 1e-12);
    }

    #[test]
    fn margin_moment_flag_and_errors() {
        let spec = ModelSpec::fdarx(1);
        let th = Theta(vec![0.15, -0.2, 0.4, 0.3, 0.0, 0.0]);
        let m = stationarity_margin(&spec, &th, 0.5, 4.0, None).unwrap();
        assert!(!m.moment_verified);
        let m4 = stationarity_margin(&spec, &th, 0.5, 4.0, Some(3f64.powf(0.25))).unwrap();
        assert!(m4.moment_verified);
        assert!(m4.value < m.value);
        assert!(stationarity_margin(&spec, &th, 0.5, 0.5, None).is_err());
        assert!(stationarity_margin(&spec, &th, 1.0, 2.0, None).is_err());
    }

    #[test]
    fn model_doc_roundtrip() {
        let (spec, space) = s0_space();
        let doc = ModelDoc::from_model(&spec, &space);
        let json = serde_json::to_string(&doc).unwrap();
        for key in [
            "family",
            "orders",
            "d_x",
            "lo",
            "hi",
            "constrained",
            "h_floor",
        ] {
            assert!(
                json.contains(&format!("\"{key}\"")),
                "{key} missing in {json}"
            );
        }
        let back: ModelDoc = serde_json::from_str(&json).unwrap();
        let (spec2, space2) = back.into_model().unwrap();
        assert_eq!(spec, spec2);
        assert_eq!(space, space2);

        let minimal: ModelDoc =
            serde_json::from_str(r#"{"family":"archx","orders":[2],"d_x":1}"#).unwrap();
        let (spec3, space3) = minimal.into_model().unwrap();
        assert_eq!(spec3.dim(), 5);
        assert_eq!(space3, ParamSpace::default_for(&spec3));
    }

    #[test]
    fn freeze_requires_zero_inside() {
        let (_, space) = s0_space();
        let f = space.freeze_at_zero(&[4, 5]).unwrap();
        assert_eq!(f.lo()[4], 0.0);
        assert_eq!(f.hi()[5], 0.0);
        assert!(matches!(
            space.freeze_at_zero(&[2]),
            Err(AcxError::InfeasibleFreeze { component: 2 })
        ));
    }
}
