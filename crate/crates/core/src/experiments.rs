//! Replicated simulation studies: estimation accuracy with the covariate
//! significance test, and order-selection frequencies.
//!
//! Every replication draws from its own RNG streams, derived from the
//! scenario seed and the sample size, so results are identical for any thread
//! count and any execution order.

use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics;
use crate::error::{AcxError, Result};
use crate::estimate::{self, FitOptions, DEFAULT_STARTS};
use crate::inference::{self, WaldMethod, DEFAULT_TEST_DRAWS};
use crate::model::{validate_theta, Family, ModelDoc, ModelSpec, ParamSpace, Theta};
use crate::select::{self, FitCache, PenaltySchedule};
use crate::simulate::{self, NoiseConfig, NoiseLaw, Sample, DEFAULT_BURN_IN};

/// Streams per replication: covariates, response noise, optimizer starts,
/// Monte Carlo null.
const STREAMS_PER_REP: u64 = 8;
const STREAM_COVARIATES: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_STARTS: u64 = 2;
const STREAM_MC: u64 = 3;

fn default_alpha() -> f64 {
    0.05
}

fn default_draws() -> usize {
    DEFAULT_TEST_DRAWS
}

fn default_covariate_ar() -> [f64; 2] {
    [0.5, 0.5]
}

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

fn default_starts() -> usize {
    DEFAULT_STARTS
}

fn default_selection_starts() -> usize {
    2
}

/// Hypothesis `Γθ = ϑ₀`. Either `gamma` rows or `components` (selector rows)
/// must be given; `v0` defaults to zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v0: Option<Vec<f64>>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// `None` derives the boundary structure from the null itself.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null_activity: Option<Vec<usize>>,
    #[serde(default = "default_draws")]
    pub draws: usize,
}

impl TestConfig {
    pub fn gamma_matrix(&self, d: usize) -> Result<DMatrix<f64>> {
        match &self.gamma {
            Some(rows) => {
                if rows.is_empty() || rows.iter().any(|r| r.len() != d) {
                    return Err(AcxError::Config(format!(
                        "every Gamma row must have {d} entries"
                    )));
                }
                Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
            }
            None => {
                if self.components.is_empty() {
                    return Err(AcxError::Config(
                        "a test needs `components` or `gamma`".into(),
                    ));
                }
                if let Some(&i) = self.components.iter().find(|&&i| i >= d) {
                    return Err(AcxError::Config(format!(
                        "test component {i} is out of range for dimension {d}"
                    )));
                }
                Ok(inference::selector(d, &self.components))
            }
        }
    }

    pub fn null_value(&self, d0: usize) -> Result<Vec<f64>> {
        match &self.v0 {
            Some(v) if v.len() == d0 => Ok(v.clone()),
            Some(v) => Err(AcxError::Config(format!(
                "v0 has {} entries, expected {d0}",
                v.len()
            ))),
            None => Ok(vec![0.0; d0]),
        }
    }
}

/// Order selection over FDAR-X(q) for `q = 0..=q_max`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub q_max: usize,
    pub penalties: Vec<PenaltySchedule>,
    /// Defaults to the order of the data-generating model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_order: Option<usize>,
    #[serde(default = "default_selection_starts")]
    pub starts: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub id: String,
    /// Data-generating model; also the fitted model in estimation studies.
    pub model: ModelDoc,
    pub theta: Vec<f64>,
    /// `(φ₀, φ₁)` of the AR(1) covariates.
    #[serde(default = "default_covariate_ar")]
    pub covariate_ar: [f64; 2],
    pub sample_sizes: Vec<usize>,
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub noise: NoiseLaw,
    #[serde(default = "default_starts")]
    pub starts: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<TestConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionConfig>,
}

/// A config file holds one scenario or a list of them.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConfigFile {
    Many { scenarios: Vec<ScenarioConfig> },
    One(ScenarioConfig),
}

impl ConfigFile {
    pub fn into_scenarios(self) -> Vec<ScenarioConfig> {
        match self {
            Self::Many { scenarios } => scenarios,
            Self::One(s) => vec![s],
        }
    }
}

pub fn load_config(path: &Path) -> Result<Vec<ScenarioConfig>> {
    let text = fs::read_to_string(path)?;
    let file: ConfigFile = serde_json::from_str(&text)
        .map_err(|e| AcxError::Config(format!("{}: {e}", path.display())))?;
    let scenarios = file.into_scenarios();
    if scenarios.is_empty() {
        return Err(AcxError::Config("the config lists no scenarios".into()));
    }
    Ok(scenarios)
}

/// Validated, ready-to-run form of a scenario.
struct Prepared {
    spec: ModelSpec,
    space: ParamSpace,
    theta: Theta,
}

impl ScenarioConfig {
    fn prepare(&self) -> Result<Prepared> {
        let cfg = |e: AcxError| AcxError::Config(format!("scenario {}: {e}", self.id));
        let (spec, space) = self.model.into_model().map_err(cfg)?;
        let theta = Theta(self.theta.clone());
        let v = validate_theta(&spec, &space, &theta).map_err(cfg)?;
        if !v.valid {
            return Err(AcxError::Config(format!(
                "scenario {}: theta violates the parameter box at {:?}",
                self.id,
                v.violations
                    .iter()
                    .map(|x| x.name.clone())
                    .collect::<Vec<_>>()
            )));
        }
        if self.reps == 0 {
            return Err(AcxError::Config(format!(
                "scenario {}: reps must be at least 1",
                self.id
            )));
        }
        if self.sample_sizes.is_empty() {
            return Err(AcxError::Config(format!(
                "scenario {}: no sample sizes",
                self.id
            )));
        }
        if let Some(&n) = self.sample_sizes.iter().find(|&&n| n <= spec.dim()) {
            return Err(AcxError::Config(format!(
                "scenario {}: n = {n} does not exceed the dimension {}",
                self.id,
                spec.dim()
            )));
        }
        if !(self.covariate_ar[1].abs() < 1.0) {
            return Err(AcxError::Config(format!(
                "scenario {}: covariate AR(1) must be stationary",
                self.id
            )));
        }
        if let Some(t) = &self.test {
            let g = t.gamma_matrix(spec.dim()).map_err(cfg)?;
            t.null_value(g.nrows()).map_err(cfg)?;
            if !(t.alpha > 0.0 && t.alpha < 1.0) {
                return Err(AcxError::Config(format!(
                    "scenario {}: alpha must lie in (0, 1)",
                    self.id
                )));
            }
            if t.draws < inference::MIN_DRAWS {
                return Err(AcxError::Config(format!(
                    "scenario {}: at least {} Monte Carlo draws are required",
                    self.id,
                    inference::MIN_DRAWS
                )));
            }
        }
        Ok(Prepared { spec, space, theta })
    }

    pub fn with_reps(mut self, reps: usize) -> Self {
        self.reps = reps;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_sample_sizes(mut self, sizes: Vec<usize>) -> Self {
        self.sample_sizes = sizes;
        self
    }
}

fn fdarx1(id: &str, theta: [f64; 6], seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        id: id.into(),
        model: ModelDoc {
            family: "fdarx".into(),
            orders: vec![1],
            d_x: 1,
            lo: None,
            hi: None,
            constrained: None,
            h_floor: None,
        },
        theta: theta.to_vec(),
        covariate_ar: default_covariate_ar(),
        sample_sizes: vec![500, 1000],
        reps: 200,
        seed,
        burn_in: DEFAULT_BURN_IN,
        noise: NoiseLaw::Normal,
        starts: DEFAULT_STARTS,
        test: Some(TestConfig {
            components: vec![4, 5],
            gamma: None,
            v0: None,
            alpha: 0.05,
            null_activity: None,
            draws: DEFAULT_TEST_DRAWS,
        }),
        selection: None,
    }
}

fn fdarx2(id: &str, theta: [f64; 8], seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        id: id.into(),
        model: ModelDoc {
            family: "fdarx".into(),
            orders: vec![2],
            d_x: 1,
            lo: None,
            hi: None,
            constrained: None,
            h_floor: None,
        },
        theta: theta.to_vec(),
        covariate_ar: default_covariate_ar(),
        sample_sizes: (4..=40).map(|k| 25 * k).collect(),
        reps: 100,
        seed,
        burn_in: DEFAULT_BURN_IN,
        noise: NoiseLaw::Normal,
        starts: DEFAULT_STARTS,
        test: None,
        selection: Some(SelectionConfig {
            q_max: 9,
            penalties: vec![
                PenaltySchedule::Bic,
                PenaltySchedule::Hqc { c: 2.0 },
                PenaltySchedule::Hqc { c: 3.5 },
                PenaltySchedule::Hqc { c: 5.0 },
            ],
            true_order: None,
            starts: default_selection_starts(),
        }),
    }
}

/// The simulation scenarios of the reference study. Ids: `s0`, `s1`,
/// `s0_prime`, `s1_prime` (estimation and testing, FDAR-X(1)) and `s1_star`,
/// `s2_star` (order selection, FDAR-X(2) truth).
pub fn builtin_scenarios() -> Vec<ScenarioConfig> {
    vec![
        fdarx1("s0", [0.15, -0.2, 0.4, 0.3, 0.0, 0.0], 101),
        fdarx1("s1", [0.15, -0.2, 0.4, 0.3, 0.08, 0.0], 102),
        fdarx1("s0_prime", [1.0, 0.4, 0.5, 0.2, 0.0, 0.0], 103),
        fdarx1("s1_prime", [1.0, 0.4, 0.5, 0.2, 0.07, 0.07], 104),
        fdarx2("s1_star", [0.6, 0.45, 0.5, 0.15, 1.0, 0.7, 0.6, 0.35], 201),
        fdarx2("s2_star", [0.15, 0.4, 0.5, 0.2, 0.1, 0.1, 0.03, 0.3], 202),
    ]
}

pub fn builtin_scenario(id: &str) -> Result<ScenarioConfig> {
    builtin_scenarios()
        .into_iter()
        .find(|s| s.id == id)
        .ok_or_else(|| AcxError::Config(format!("unknown scenario {id:?}")))
}

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `(scenario seed, n)` cell.
pub fn cell_seed(master: u64, n: usize) -> u64 {
    splitmix64(master ^ splitmix64(n as u64))
}

fn stream(rep: usize, purpose: u64) -> u64 {
    rep as u64 * STREAMS_PER_REP + purpose
}

/// Covariates and response for replication `rep` of a cell.
pub fn simulate_replication(cfg: &ScenarioConfig, n: usize, rep: usize) -> Result<Sample> {
    let p = cfg.prepare()?;
    simulate_prepared(cfg, &p, n, rep)
}

fn simulate_prepared(cfg: &ScenarioConfig, p: &Prepared, n: usize, rep: usize) -> Result<Sample> {
    let seed = cell_seed(cfg.seed, n);
    let total = n + cfg.burn_in;
    let cov = NoiseConfig {
        law: NoiseLaw::Normal,
        seed,
        stream_id: stream(rep, STREAM_COVARIATES),
    };
    let x = simulate::simulate_covariate_matrix(
        total,
        p.spec.d_x(),
        cfg.covariate_ar[0],
        cfg.covariate_ar[1],
        &cov,
    )?;
    let noise = NoiseConfig {
        law: cfg.noise,
        seed,
        stream_id: stream(rep, STREAM_NOISE),
    };
    simulate::simulate_response(&p.spec, &p.theta, &x, n, cfg.burn_in, &noise)
}

fn derived_seed(cfg: &ScenarioConfig, n: usize, rep: usize, purpose: u64) -> u64 {
    splitmix64(cell_seed(cfg.seed, n) ^ stream(rep, purpose))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Estimation,
    Selection,
}

/// Outcome of one estimation replication.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub scenario: String,
    pub n: usize,
    pub rep: usize,
    pub ok: bool,
    pub converged: bool,
    pub theta_hat: Vec<f64>,
    pub w_n: Option<f64>,
    pub reject: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationCell {
    pub scenario: String,
    pub n: usize,
    pub reps: usize,
    pub n_fail: usize,
    pub n_unconverged: usize,
    pub names: Vec<String>,
    pub truth: Vec<f64>,
    pub mean: Vec<f64>,
    /// Unscaled root mean squared error against `truth`.
    pub rmse: Vec<f64>,
    pub rejection_rate: Option<f64>,
    pub n_tests: usize,
    pub test_method: Option<WaldMethod>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionCell {
    pub scenario: String,
    pub n: usize,
    pub penalty: String,
    pub reps: usize,
    pub n_fail: usize,
    pub true_order: usize,
    pub avg_order: f64,
    /// Share of successful replications selecting `true_order`.
    pub freq: f64,
    /// `order_counts[q]` replications selected order `q`.
    pub order_counts: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub cells: Vec<CellTiming>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellTiming {
    pub scenario: String,
    pub n: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: StudyKind,
    pub scenarios: Vec<ScenarioConfig>,
    #[serde(default)]
    pub estimation: Vec<EstimationCell>,
    #[serde(default)]
    pub selection: Vec<SelectionCell>,
    /// Per-replication estimates; written to `estimates.csv`.
    #[serde(skip)]
    pub records: Vec<ReplicationRecord>,
    /// Wall-clock; written to `timing.json` so `report.json` stays
    /// reproducible byte for byte.
    #[serde(skip)]
    pub timing: Timing,
}

impl ExperimentReport {
    /// Every replication of every cell failed.
    pub fn all_failed(&self) -> bool {
        let est = self.estimation.iter().map(|c| (c.reps, c.n_fail));
        let sel = self.selection.iter().map(|c| (c.reps, c.n_fail));
        let mut cells = est.chain(sel).peekable();
        cells.peek().is_some() && cells.all(|(reps, fail)| reps == fail)
    }
}

fn run_estimation_rep(
    cfg: &ScenarioConfig,
    p: &Prepared,
    n: usize,
    rep: usize,
) -> ReplicationRecord {
    let mut rec = ReplicationRecord {
        scenario: cfg.id.clone(),
        n,
        rep,
        ok: false,
        converged: false,
        theta_hat: Vec::new(),
        w_n: None,
        reject: None,
        error: None,
    };
    let sample = match simulate_prepared(cfg, p, n, rep) {
        Ok(s) => s,
        Err(e) => {
            rec.error = Some(e.to_string());
            return rec;
        }
    };
    let opts = FitOptions::new(cfg.starts, derived_seed(cfg, n, rep, STREAM_STARTS));
    let fit = match estimate::fit_qmle_with(&p.spec, &p.space, &sample, &[], &opts) {
        Ok(f) => f,
        Err(e) => {
            rec.error = Some(e.to_string());
            return rec;
        }
    };
    rec.ok = true;
    rec.converged = fit.converged;
    rec.theta_hat = fit.theta_hat.0.clone();
    if let Some(t) = &cfg.test {
        let outcome = (|| -> Result<inference::WaldResult> {
            let gamma = t.gamma_matrix(p.spec.dim())?;
            let v0 = t.null_value(gamma.nrows())?;
            let sandwich =
                asymptotics::estimate_sandwich(&p.spec, &p.space, &sample, &fit.theta_hat)?;
            let activity = match &t.null_activity {
                Some(a) => a.clone(),
                None => inference::default_null_activity(&p.space, &gamma, &v0),
            };
            let cone =
                inference::null_cone(&p.space, fit.theta_hat.as_slice(), &gamma, &v0, &activity)?;
            let mc_seed = derived_seed(cfg, n, rep, STREAM_MC);
            inference::wald_test(
                &fit, &sandwich, n, &gamma, &v0, &cone, t.alpha, t.draws, mc_seed,
            )
        })();
        match outcome {
            Ok(w) => {
                rec.w_n = Some(w.w_n);
                rec.reject = Some(w.reject);
            }
            Err(e) => rec.error = Some(format!("test: {e}")),
        }
    }
    rec
}

fn summarize_estimation(
    cfg: &ScenarioConfig,
    p: &Prepared,
    n: usize,
    recs: &[ReplicationRecord],
) -> EstimationCell {
    let d = p.spec.dim();
    let ok: Vec<&ReplicationRecord> = recs.iter().filter(|r| r.ok).collect();
    let m = ok.len() as f64;
    let (mut mean, mut rmse) = (vec![f64::NAN; d], vec![f64::NAN; d]);
    if !ok.is_empty() {
        for i in 0..d {
            mean[i] = ok.iter().map(|r| r.theta_hat[i]).sum::<f64>() / m;
            let mse = ok
                .iter()
                .map(|r| (r.theta_hat[i] - p.theta.0[i]).powi(2))
                .sum::<f64>()
                / m;
            rmse[i] = mse.sqrt();
        }
    }
    let tested: Vec<bool> = recs.iter().filter_map(|r| r.reject).collect();
    let test_method = cfg.test.as_ref().and_then(|t| {
        let gamma = t.gamma_matrix(d).ok()?;
        let v0 = t.null_value(gamma.nrows()).ok()?;
        let activity = t
            .null_activity
            .clone()
            .unwrap_or_else(|| inference::default_null_activity(&p.space, &gamma, &v0));
        Some(if activity.is_empty() {
            WaldMethod::Chisq
        } else {
            WaldMethod::ConeMc
        })
    });
    EstimationCell {
        scenario: cfg.id.clone(),
        n,
        reps: recs.len(),
        n_fail: recs.len() - ok.len(),
        n_unconverged: ok.iter().filter(|r| !r.converged).count(),
        names: p.spec.layout(),
        truth: p.theta.0.clone(),
        mean,
        rmse,
        rejection_rate: (!tested.is_empty())
            .then(|| tested.iter().filter(|r| **r).count() as f64 / tested.len() as f64),
        n_tests: tested.len(),
        test_method,
        seed: cell_seed(cfg.seed, n),
    }
}

/// Simulate, fit and (optionally) test every replication of every
/// `(scenario, n)` cell.
pub fn run_estimation_study(configs: &[ScenarioConfig]) -> Result<ExperimentReport> {
    let prepared: Vec<Prepared> = configs.iter().map(|c| c.prepare()).collect::<Result<_>>()?;
    let start = Instant::now();
    let mut report = ExperimentReport {
        kind: StudyKind::Estimation,
        scenarios: configs.to_vec(),
        estimation: Vec::new(),
        selection: Vec::new(),
        records: Vec::new(),
        timing: Timing::default(),
    };
    for (cfg, p) in configs.iter().zip(&prepared) {
        for &n in &cfg.sample_sizes {
            let t0 = Instant::now();
            let recs: Vec<ReplicationRecord> = (0..cfg.reps)
                .into_par_iter()
                .map(|rep| run_estimation_rep(cfg, p, n, rep))
                .collect();
            report
                .estimation
                .push(summarize_estimation(cfg, p, n, &recs));
            report.records.extend(recs);
            report.timing.cells.push(CellTiming {
                scenario: cfg.id.clone(),
                n,
                seconds: t0.elapsed().as_secs_f64(),
            });
        }
    }
    report.timing.total_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Chosen order per penalty for one replication, `None` if it failed.
fn run_selection_rep(
    cfg: &ScenarioConfig,
    p: &Prepared,
    sel: &SelectionConfig,
    fit_spec: &ModelSpec,
    fit_space: &ParamSpace,
    n: usize,
    rep: usize,
) -> Option<Vec<usize>> {
    let sample = simulate_prepared(cfg, p, n, rep).ok()?;
    let collection = select::fdarx_order_supports(sel.q_max);
    let opts = FitOptions::new(sel.starts, derived_seed(cfg, n, rep, STREAM_STARTS));
    let mut cache = FitCache::new();
    let entries =
        select::fit_collection(fit_spec, fit_space, &sample, &collection, &opts, &mut cache)
            .ok()?;
    sel.penalties
        .iter()
        .map(|pen| {
            select::select_from_table(&entries, pen, n)
                .ok()
                .map(|r| r.chosen)
        })
        .collect()
}

/// For each `(n, replication)`: simulate from the scenario model, fit the
/// FDAR-X order collection once, and record the order chosen by each penalty.
pub fn run_selection_study(configs: &[ScenarioConfig]) -> Result<ExperimentReport> {
    let prepared: Vec<Prepared> = configs.iter().map(|c| c.prepare()).collect::<Result<_>>()?;
    let start = Instant::now();
    let mut report = ExperimentReport {
        kind: StudyKind::Selection,
        scenarios: configs.to_vec(),
        estimation: Vec::new(),
        selection: Vec::new(),
        records: Vec::new(),
        timing: Timing::default(),
    };
    for (cfg, p) in configs.iter().zip(&prepared) {
        let sel = cfg.selection.as_ref().ok_or_else(|| {
            AcxError::Config(format!("scenario {} has no selection block", cfg.id))
        })?;
        if sel.penalties.is_empty() {
            return Err(AcxError::Config(format!(
                "scenario {}: no penalties listed",
                cfg.id
            )));
        }
        let truth_q = match p.spec.family() {
            Family::FdarX { q } => q,
            other => {
                return Err(AcxError::Config(format!(
                    "scenario {}: order selection needs an fdarx model, got {}",
                    cfg.id,
                    other.name()
                )))
            }
        };
        if sel.q_max < truth_q {
            return Err(AcxError::Config(format!(
                "scenario {}: q_max = {} is below the true order {truth_q}",
                cfg.id, sel.q_max
            )));
        }
        let true_order = sel.true_order.unwrap_or(truth_q);
        let fit_spec = ModelSpec::fdarx(sel.q_max);
        let fit_space = ParamSpace::default_for(&fit_spec);
        if let Some(&n) = cfg.sample_sizes.iter().find(|&&n| n <= fit_spec.dim()) {
            return Err(AcxError::Config(format!(
                "scenario {}: n = {n} does not exceed the largest candidate dimension {}",
                cfg.id,
                fit_spec.dim()
            )));
        }
        for &n in &cfg.sample_sizes {
            let t0 = Instant::now();
            let chosen: Vec<Option<Vec<usize>>> = (0..cfg.reps)
                .into_par_iter()
                .map(|rep| run_selection_rep(cfg, p, sel, &fit_spec, &fit_space, n, rep))
                .collect();
            for (k, pen) in sel.penalties.iter().enumerate() {
                let orders: Vec<usize> = chosen.iter().flatten().map(|v| v[k]).collect();
                let mut counts = vec![0usize; sel.q_max + 1];
                for &q in &orders {
                    counts[q] += 1;
                }
                let m = orders.len();
                report.selection.push(SelectionCell {
                    scenario: cfg.id.clone(),
                    n,
                    penalty: pen.label(),
                    reps: cfg.reps,
                    n_fail: cfg.reps - m,
                    true_order,
                    avg_order: if m > 0 {
                        orders.iter().sum::<usize>() as f64 / m as f64
                    } else {
                        f64::NAN
                    },
                    freq: if m > 0 {
                        counts.get(true_order).copied().unwrap_or(0) as f64 / m as f64
                    } else {
                        f64::NAN
                    },
                    order_counts: counts,
                    seed: cell_seed(cfg.seed, n),
                });
            }
            report.timing.cells.push(CellTiming {
                scenario: cfg.id.clone(),
                n,
                seconds: t0.elapsed().as_secs_f64(),
            });
        }
    }
    report.timing.total_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        "NaN".into()
    }
}

/// Wide Table-1 layout:
/// `scenario,n,reps,n_fail,rejection_rate,mean_<name>…,rmse_<name>…`.
pub fn write_table1<W: std::io::Write>(cells: &[EstimationCell], w: W) -> Result<()> {
    let mut names: Vec<String> = Vec::new();
    for c in cells {
        for name in &c.names {
            if !names.contains(name) {
                names.push(name.clone());
            }
        }
    }
    let mut wtr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = ["scenario", "n", "reps", "n_fail", "rejection_rate"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(names.iter().map(|n| format!("mean_{n}")));
    header.extend(names.iter().map(|n| format!("rmse_{n}")));
    wtr.write_record(&header)?;
    for c in cells {
        let mut row = vec![
            c.scenario.clone(),
            c.n.to_string(),
            c.reps.to_string(),
            c.n_fail.to_string(),
            c.rejection_rate.map_or_else(String::new, fmt_num),
        ];
        for values in [&c.mean, &c.rmse] {
            for name in &names {
                row.push(
                    c.names
                        .iter()
                        .position(|x| x == name)
                        .map_or_else(String::new, |i| fmt_num(values[i])),
                );
            }
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// `n,penalty,avg_order,freq`.
pub fn write_selection_csv<W: std::io::Write>(cells: &[&SelectionCell], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["n", "penalty", "avg_order", "freq"])?;
    for c in cells {
        wtr.write_record([
            c.n.to_string(),
            c.penalty.clone(),
            fmt_num(c.avg_order),
            fmt_num(c.freq),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Per-replication estimates: `scenario,n,rep,ok,converged,<names…>,W_n,reject`.
pub fn write_estimates_csv<W: std::io::Write>(report: &ExperimentReport, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let names = report
        .estimation
        .first()
        .map(|c| c.names.clone())
        .unwrap_or_default();
    let mut header: Vec<String> = ["scenario", "n", "rep", "ok", "converged"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(names.iter().cloned());
    header.extend(["W_n".to_string(), "reject".to_string()]);
    wtr.write_record(&header)?;
    for r in &report.records {
        let mut row = vec![
            r.scenario.clone(),
            r.n.to_string(),
            r.rep.to_string(),
            r.ok.to_string(),
            r.converged.to_string(),
        ];
        for i in 0..names.len() {
            row.push(
                r.theta_hat
                    .get(i)
                    .map_or_else(String::new, |v| format!("{v:.10}")),
            );
        }
        row.push(r.w_n.map_or_else(String::new, |v| format!("{v:.10}")));
        row.push(r.reject.map_or_else(String::new, |v| v.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Write `report.json`, `timing.json` and the CSV tables under `out_dir`.
/// Selection frequencies go to `selection.csv`, one per scenario directory
/// when the report spans several scenarios.
pub fn write_outputs(report: &ExperimentReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(report)? + "\n",
    )?;
    fs::write(
        out_dir.join("timing.json"),
        serde_json::to_string_pretty(&report.timing)? + "\n",
    )?;
    match report.kind {
        StudyKind::Estimation => {
            write_table1(
                &report.estimation,
                fs::File::create(out_dir.join("table1.csv"))?,
            )?;
            write_estimates_csv(report, fs::File::create(out_dir.join("estimates.csv"))?)?;
        }
        StudyKind::Selection => {
            let mut ids: Vec<&str> = Vec::new();
            for c in &report.selection {
                if !ids.contains(&c.scenario.as_str()) {
                    ids.push(&c.scenario);
                }
            }
            for id in &ids {
                let cells: Vec<&SelectionCell> = report
                    .selection
                    .iter()
                    .filter(|c| c.scenario == *id)
                    .collect();
                let dir = if ids.len() == 1 {
                    out_dir.to_path_buf()
                } else {
                    out_dir.join(id)
                };
                fs::create_dir_all(&dir)?;
                write_selection_csv(&cells, fs::File::create(dir.join("selection.csv"))?)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_estimation() -> ScenarioConfig {
        let mut c = builtin_scenario("s1_prime")
            .unwrap()
            .with_reps(3)
            .with_sample_sizes(vec![80])
            .with_seed(5);
        c.starts = 1;
        c.test.as_mut().unwrap().draws = 1000;
        c
    }

    #[test]
    fn builtins_are_valid() {
        for s in builtin_scenarios() {
            s.prepare().unwrap();
        }
        assert!(builtin_scenario("nope").is_err());
    }

    #[test]
    fn config_round_trip_and_defaults() {
        let one = r#"{"id":"x","model":{"family":"fdarx","orders":[1],"d_x":1},
                      "theta":[0.1,0.2,0.5,0.1,0,0],"sample_sizes":[100],"reps":2}"#;
        let s = match serde_json::from_str::<ConfigFile>(one).unwrap() {
            ConfigFile::One(s) => s,
            _ => panic!("expected a single scenario"),
        };
        assert_eq!(s.covariate_ar, [0.5, 0.5]);
        assert_eq!(s.burn_in, DEFAULT_BURN_IN);
        assert_eq!(s.starts, DEFAULT_STARTS);
        let many = serde_json::json!({ "scenarios": builtin_scenarios() });
        let back: ConfigFile = serde_json::from_value(many).unwrap();
        assert_eq!(back.into_scenarios().len(), 6);
    }

    #[test]
    fn config_errors() {
        let mut bad = tiny_estimation();
        bad.reps = 0;
        assert!(matches!(
            run_estimation_study(&[bad]),
            Err(AcxError::Config(_))
        ));
        let mut bad = tiny_estimation();
        bad.theta[2] = -1.0;
        assert!(matches!(
            run_estimation_study(&[bad]),
            Err(AcxError::Config(_))
        ));
        let mut bad = tiny_estimation();
        bad.test.as_mut().unwrap().components = vec![9];
        assert!(matches!(
            run_estimation_study(&[bad]),
            Err(AcxError::Config(_))
        ));
        let bad = tiny_estimation();
        assert!(matches!(
            run_selection_study(&[bad]),
            Err(AcxError::Config(_))
        ));
    }

    #[test]
    fn smoke_single_replication() {
        let mut c = builtin_scenario("s0")
            .unwrap()
            .with_reps(1)
            .with_sample_sizes(vec![50]);
        c.starts = 1;
        c.test.as_mut().unwrap().draws = 1000;
        let r = run_estimation_study(&[c]).unwrap();
        let cell = &r.estimation[0];
        assert!(cell.n_fail <= 1);
        if cell.n_fail == 0 {
            assert!(cell.mean.iter().chain(&cell.rmse).all(|v| v.is_finite()));
        }
    }

    #[test]
    fn estimation_is_deterministic() {
        let a = run_estimation_study(&[tiny_estimation()]).unwrap();
        let b = run_estimation_study(&[tiny_estimation()]).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert_eq!(a.estimation[0].test_method, Some(WaldMethod::ConeMc));
        assert!(a.estimation[0].rmse.iter().all(|v| *v >= 0.0));
        assert!(!a.all_failed());
    }

    #[test]
    fn selection_single_cell() {
        let mut c = builtin_scenario("s1_star")
            .unwrap()
            .with_reps(1)
            .with_sample_sizes(vec![200]);
        c.selection.as_mut().unwrap().q_max = 3;
        c.selection.as_mut().unwrap().starts = 1;
        let r = run_selection_study(&[c]).unwrap();
        assert_eq!(r.selection.len(), 4);
        for cell in &r.selection {
            assert_eq!(cell.order_counts.iter().sum::<usize>() + cell.n_fail, 1);
            assert!((0.0..=1.0).contains(&cell.freq));
        }
    }

    #[test]
    fn replications_do_not_depend_on_each_other() {
        let c = tiny_estimation();
        let a = simulate_replication(&c, 80, 2).unwrap();
        let b = simulate_replication(&c.clone().with_reps(50), 80, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(simulate_replication(&c, 80, 1).unwrap(), a);
    }

    #[test]
    fn all_failed_needs_every_cell_dead() {
        let mut r = run_estimation_study(&[tiny_estimation().with_reps(1)]).unwrap();
        assert!(!r.all_failed());
        r.estimation[0].n_fail = r.estimation[0].reps;
        assert!(r.all_failed());
        r.estimation.clear();
        assert!(!r.all_failed());
    }
}
