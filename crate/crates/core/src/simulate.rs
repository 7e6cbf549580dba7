//! Seeded simulation of covariate and response paths.
//!
//! Randomness comes from ChaCha8 streams: a `(seed, stream_id)` pair fully
//! determines every draw, independently of how many other streams are in use.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{AcxError, Result};
use crate::model::{Family, ModelSpec, Theta};

/// Default number of discarded initial steps.
pub const DEFAULT_BURN_IN: usize = 500;

/// Observed response series and aligned covariates.
///
/// Row `t` of `x` is `X_t`; it enters the conditional mean and variance of
/// `Y_{t+1}`, never of `Y_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    y: Vec<f64>,
    x: Vec<f64>,
    d_x: usize,
}

impl Sample {
    /// Build from a response vector and a row-major `n × d_x` covariate buffer.
    pub fn new(y: Vec<f64>, x: Vec<f64>, d_x: usize) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(AcxError::Data(
                "a sample needs at least one observation".into(),
            ));
        }
        if x.len() != n * d_x {
            return Err(AcxError::Data(format!(
                "covariate buffer has {} entries, expected {n} x {d_x}",
                x.len()
            )));
        }
        if let Some(t) = y.iter().position(|v| !v.is_finite()) {
            return Err(AcxError::Data(format!(
                "non-finite response at t = {}",
                t + 1
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(AcxError::Data(format!(
                "non-finite covariate at t = {}",
                i / d_x.max(1) + 1
            )));
        }
        Ok(Self { y, x, d_x })
    }

    /// Build from per-time covariate rows.
    pub fn from_rows(y: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        let d_x = rows.first().map_or(0, |r| r.len());
        if rows.len() != y.len() || rows.iter().any(|r| r.len() != d_x) {
            return Err(AcxError::Data(
                "covariate rows are not rectangular or misaligned".into(),
            ));
        }
        Self::new(y, rows.concat(), d_x)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d_x(&self) -> usize {
        self.d_x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Row-major covariate buffer.
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn x_row(&self, t: usize) -> &[f64] {
        &self.x[t * self.d_x..(t + 1) * self.d_x]
    }

    /// Copy with covariate columns reordered: new column `j` is old column `perm[j]`.
    pub fn permute_columns(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.d_x {
            return Err(AcxError::DimensionMismatch {
                what: "column permutation".into(),
                expected: self.d_x,
                got: perm.len(),
            });
        }
        let mut x = Vec::with_capacity(self.x.len());
        for t in 0..self.n() {
            let row = self.x_row(t);
            x.extend(perm.iter().map(|&j| row[j]));
        }
        Self::new(self.y.clone(), x, self.d_x)
    }

    /// Stable 64-bit digest of the sample contents.
    pub fn digest(&self) -> u64 {
        // FNV-1a over the raw bit patterns; stable across runs and platforms.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(self.d_x as u64);
        for v in self.y.iter().chain(&self.x) {
            eat(v.to_bits());
        }
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string(), "y".to_string()];
        header.extend((1..=self.d_x).map(|j| format!("x{j}")));
        wtr.write_record(&header)?;
        for t in 0..self.n() {
            let mut rec = vec![(t + 1).to_string(), format!("{:e}", self.y[t])];
            rec.extend(self.x_row(t).iter().map(|v| format!("{v:e}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        if header.len() < 2 || &header[0] != "t" || &header[1] != "y" {
            return Err(AcxError::Data(
                "sample CSV header must start with t,y".into(),
            ));
        }
        let d_x = header.len() - 2;
        for (j, name) in header.iter().skip(2).enumerate() {
            if name != format!("x{}", j + 1) {
                return Err(AcxError::Data(format!(
                    "unexpected covariate column '{name}'"
                )));
            }
        }
        let (mut y, mut x) = (Vec::new(), Vec::new());
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != d_x + 2 {
                return Err(AcxError::Data(format!(
                    "row {} has {} fields",
                    line + 1,
                    rec.len()
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| AcxError::Data(format!("row {}: {e}", line + 1)))
            };
            y.push(parse(&rec[1])?);
            for j in 0..d_x {
                x.push(parse(&rec[j + 2])?);
            }
        }
        Self::new(y, x, d_x)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLaw {
    #[default]
    Normal,
    /// Student-t with `df > 2` degrees of freedom, rescaled to unit variance.
    StudentT { df: f64 },
}

/// Noise law plus the counter-based stream that generates it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub law: NoiseLaw,
    pub seed: u64,
    pub stream_id: u64,
}

impl NoiseConfig {
    pub fn normal(seed: u64, stream_id: u64) -> Self {
        Self {
            law: NoiseLaw::Normal,
            seed,
            stream_id,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// `n` draws with mean 0 and variance 1.
    pub fn draw(&self, n: usize) -> Result<Vec<f64>> {
        draw_law(self.law, &mut self.rng(), n)
    }
}

pub(crate) fn draw_law<R: Rng>(law: NoiseLaw, rng: &mut R, n: usize) -> Result<Vec<f64>> {
    match law {
        NoiseLaw::Normal => Ok((0..n).map(|_| StandardNormal.sample(rng)).collect()),
        NoiseLaw::StudentT { df } => {
            if !(df > 2.0) {
                return Err(AcxError::InvalidArgument(format!(
                    "Student-t noise needs df > 2 for unit variance, got {df}"
                )));
            }
            let t = StudentT::new(df).map_err(|e| AcxError::InvalidArgument(e.to_string()))?;
            let scale = ((df - 2.0) / df).sqrt();
            Ok((0..n).map(|_| scale * t.sample(rng)).collect())
        }
    }
}

/// Deterministic AR(1) recursion `X_t = φ₀ + φ₁X_{t−1} + η_t` from `x0`.
///
/// Returns `X_1..X_n` for `n = innovations.len()`.
pub fn ar1_path(phi0: f64, phi1: f64, x0: f64, innovations: &[f64]) -> Vec<f64> {
    let mut prev = x0;
    innovations
        .iter()
        .map(|eta| {
            prev = phi0 + phi1 * prev + eta;
            prev
        })
        .collect()
}

/// Stationary AR(1) covariate path `X_1..X_n`, with `X_0` drawn from
/// `N(φ₀/(1−φ₁), 1/(1−φ₁²))`.
pub fn simulate_covariates(
    n: usize,
    phi0: f64,
    phi1: f64,
    noise: &NoiseConfig,
) -> Result<Vec<f64>> {
    simulate_covariate_matrix(n, 1, phi0, phi1, noise)
}

/// `d_x` independent stationary AR(1) columns, returned row-major.
pub fn simulate_covariate_matrix(
    n: usize,
    d_x: usize,
    phi0: f64,
    phi1: f64,
    noise: &NoiseConfig,
) -> Result<Vec<f64>> {
    if !(phi1.abs() < 1.0) {
        return Err(AcxError::InvalidArgument(format!(
            "AR(1) covariate needs |phi1| < 1, got {phi1}"
        )));
    }
    let mut rng = noise.rng();
    let mean = phi0 / (1.0 - phi1);
    let sd = (1.0 / (1.0 - phi1 * phi1)).sqrt();
    let mut out = vec![0.0; n * d_x];
    for j in 0..d_x {
        // X_0 uses the stationary law regardless of the innovation law.
        let z: f64 = StandardNormal.sample(&mut rng);
        let eta = draw_law(noise.law, &mut rng, n)?;
        for (t, v) in ar1_path(phi0, phi1, mean + sd * z, &eta)
            .into_iter()
            .enumerate()
        {
            out[t * d_x + j] = v;
        }
    }
    Ok(out)
}

/// Simulate `n + burn_in` steps of the family recursion from zero initial
/// conditions and keep the last `n`.
///
/// `x` is the row-major covariate path of length `(n + burn_in) · d_x`.
pub fn simulate_response(
    spec: &ModelSpec,
    theta: &Theta,
    x: &[f64],
    n: usize,
    burn_in: usize,
    noise: &NoiseConfig,
) -> Result<Sample> {
    let xi = noise.draw(n + burn_in)?;
    simulate_response_with_noise(spec, theta, x, &xi, burn_in)
}

/// As [`simulate_response`] with the innovation sequence supplied; the
/// retained length is `xi.len() − burn_in`.
pub fn simulate_response_with_noise(
    spec: &ModelSpec,
    theta: &Theta,
    x: &[f64],
    xi: &[f64],
    burn_in: usize,
) -> Result<Sample> {
    let th = theta.as_slice();
    let d = spec.dim();
    if th.len() != d {
        return Err(AcxError::DimensionMismatch {
            what: "theta".into(),
            expected: d,
            got: th.len(),
        });
    }
    let total = xi.len();
    if total <= burn_in {
        return Err(AcxError::InvalidArgument(
            "nothing left after burn-in".into(),
        ));
    }
    let d_x = spec.d_x();
    if x.len() != total * d_x {
        return Err(AcxError::DimensionMismatch {
            what: "covariate path length".into(),
            expected: total * d_x,
            got: x.len(),
        });
    }
    let xr = |s: usize, j: usize| x[s * d_x + j];
    let mut y = vec![0.0; total];
    let sqrt_var = |h: f64, step: usize| -> Result<f64> {
        if h >= 0.0 && h.is_finite() {
            Ok(h.sqrt())
        } else {
            Err(AcxError::Simulation {
                step: step + 1,
                reason: format!("conditional variance {h} is not a non-negative number"),
            })
        }
    };

    match spec.family() {
        Family::FdarX { q } => {
            let (phi0, phi1, a0, a1) = (th[0], th[1], th[2], th[3]);
            let (psi, beta) = (&th[4..4 + q], &th[4 + q..4 + 2 * q]);
            for t in 0..total {
                let yl = if t >= 1 { y[t - 1] } else { 0.0 };
                let mut f = phi0 + phi1 * yl;
                let mut h = a0 + a1 * yl * yl;
                for i in 1..=q.min(t) {
                    let xv = xr(t - i, 0);
                    f += psi[i - 1] * xv;
                    h += beta[i - 1] * xv * xv;
                }
                y[t] = f + xi[t] * sqrt_var(h, t)?;
            }
        }
        Family::ArchX { lags } => {
            let a0 = th[0];
            let phi = &th[1..1 + lags];
            let gamma = &th[1 + lags..];
            for t in 0..total {
                let mut h = a0;
                for k in 1..=lags.min(t) {
                    h += phi[k - 1] * y[t - k] * y[t - k];
                    for j in 0..d_x {
                        h += gamma[(k - 1) * d_x + j] * xr(t - k, j);
                    }
                }
                y[t] = xi[t] * sqrt_var(h, t)?;
            }
        }
        Family::ArxGarch11 => {
            let (a, c0, c1, dd) = (th[0], th[1], th[2], th[3]);
            let gamma = &th[4..];
            if !(dd < 1.0) {
                return Err(AcxError::InvalidArgument(
                    "GARCH persistence d must be < 1".into(),
                ));
            }
            let mut sigma2 = c0 / (1.0 - dd);
            let mut eps_prev = 0.0;
            for t in 0..total {
                if t >= 1 {
                    sigma2 = c0 + c1 * eps_prev * eps_prev + dd * sigma2;
                }
                let mut f = 0.0;
                if t >= 1 {
                    f = a * y[t - 1];
                    for j in 0..d_x {
                        f += gamma[j] * xr(t - 1, j);
                    }
                }
                let eps = xi[t] * sqrt_var(sigma2, t)?;
                y[t] = f + eps;
                eps_prev = eps;
            }
        }
        Family::Armax { p, q, s } => {
            let alpha = &th[..p];
            let beta = &th[p..p + q];
            let gamma = &th[p + q..];
            for t in 0..total {
                let mut v = xi[t];
                for i in 1..=p.min(t) {
                    v += alpha[i - 1] * y[t - i];
                }
                for i in 1..=q.min(t) {
                    v += beta[i - 1] * xi[t - i];
                }
                for k in 1..=s.min(t) {
                    for j in 0..d_x {
                        v += gamma[(k - 1) * d_x + j] * xr(t - k, j);
                    }
                }
                y[t] = v;
            }
        }
    }
    if let Some(t) = y.iter().position(|v| !v.is_finite()) {
        return Err(AcxError::Simulation {
            step: t + 1,
            reason: "response diverged".into(),
        });
    }
    Sample::new(y[burn_in..].to_vec(), x[burn_in * d_x..].to_vec(), d_x)
}
