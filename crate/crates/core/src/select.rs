//! Penalized model selection `Ĉ_n(m) = −2L̂_n(θ̂(m)) + κ_n|m|` over an
//! explicit, finite collection of supports.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{AcxError, Result};
use crate::estimate::{self, FitOptions, FitResult};
use crate::model::{Family, ModelSpec, ParamSpace};
use crate::simulate::Sample;

/// Penalty schedule `κ_n`.
#[derive(Clone)]
pub enum PenaltySchedule {
    /// `κ_n = log n`.
    Bic,
    /// `κ_n = c · log log n`.
    Hqc { c: f64 },
    /// A user-supplied schedule, labelled for reports.
    Custom {
        label: String,
        kappa: Arc<dyn Fn(usize) -> f64 + Send + Sync>,
    },
}

impl PenaltySchedule {
    pub fn hqc(c: f64) -> Result<Self> {
        if c > 0.0 && c.is_finite() {
            Ok(Self::Hqc { c })
        } else {
            Err(AcxError::InvalidArgument(format!(
                "HQC constant must be positive, got {c}"
            )))
        }
    }

    pub fn custom<F>(label: impl Into<String>, kappa: F) -> Self
    where
        F: Fn(usize) -> f64 + Send + Sync + 'static,
    {
        Self::Custom {
            label: label.into(),
            kappa: Arc::new(kappa),
        }
    }

    /// `"bic"`, `"hqc"` (c = 2) or `"hqc(<c>)"`.
    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        if t == "bic" {
            return Ok(Self::Bic);
        }
        if t == "hqc" {
            return Self::hqc(2.0);
        }
        if let Some(inner) = t.strip_prefix("hqc(").and_then(|r| r.strip_suffix(')')) {
            let c: f64 = inner
                .trim()
                .parse()
                .map_err(|_| AcxError::Config(format!("cannot read HQC constant in {s:?}")))?;
            return Self::hqc(c);
        }
        Err(AcxError::Config(format!(
            "unknown penalty {s:?} (expected bic or hqc(c))"
        )))
    }

    pub fn kappa(&self, n: usize) -> f64 {
        let n = n as f64;
        match self {
            Self::Bic => n.ln(),
            Self::Hqc { c } => c * n.ln().ln(),
            Self::Custom { kappa, .. } => kappa(n as usize),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Bic => "bic".into(),
            Self::Hqc { c } => format!("hqc({c})"),
            Self::Custom { label, .. } => label.clone(),
        }
    }
}

impl fmt::Debug for PenaltySchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl fmt::Display for PenaltySchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl Serialize for PenaltySchedule {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for PenaltySchedule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Self::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// `deviance + κ_n · dim`.
pub fn criterion(deviance: f64, kappa_n: f64, dim: usize) -> f64 {
    deviance + kappa_n * dim as f64
}

/// One member of the collection: a support inside a common parameter layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub support: Vec<usize>,
}

/// Order collection `q = 0..=q_max` embedded in FDAR-X(q_max): order `q`
/// keeps `(φ₀, φ₁, α₀, α₁)` plus `ψ_1..ψ_q` and `β_1..β_q`.
pub fn fdarx_order_supports(q_max: usize) -> Vec<Candidate> {
    (0..=q_max)
        .map(|q| {
            let mut support: Vec<usize> = (0..4).collect();
            support.extend((0..q).map(|i| 4 + i));
            support.extend((0..q).map(|i| 4 + q_max + i));
            Candidate {
                id: format!("q={q}"),
                support,
            }
        })
        .collect()
}

/// A fitted collection entry; `fit` is `None` when the fit hard-failed.
#[derive(Debug, Clone, Serialize)]
pub struct FitEntry {
    pub candidate: Candidate,
    pub fit: Option<FitResult>,
    pub error: Option<String>,
}

impl FitEntry {
    pub fn dim(&self) -> usize {
        self.candidate.support.len()
    }
}

/// Memo of submodel fits keyed by (sample digest, support).
#[derive(Debug, Default)]
pub struct FitCache {
    map: HashMap<(u64, Vec<usize>), FitResult>,
}

impl FitCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn normalized(support: &[usize]) -> Vec<usize> {
    let mut s = support.to_vec();
    s.sort_unstable();
    s.dedup();
    s
}

/// Fit every candidate, smallest supports first. Each fit is warm-started
/// from the best fitted candidate whose support it contains, so deviance is
/// non-increasing along nested chains.
pub fn fit_collection(
    spec: &ModelSpec,
    space: &ParamSpace,
    sample: &Sample,
    collection: &[Candidate],
    opts: &FitOptions,
    cache: &mut FitCache,
) -> Result<Vec<FitEntry>> {
    if collection.is_empty() {
        return Err(AcxError::InvalidArgument(
            "the model collection is empty".into(),
        ));
    }
    let digest = sample.digest();
    let mut order: Vec<usize> = (0..collection.len()).collect();
    order.sort_by_key(|&i| {
        (
            collection[i].support.len(),
            normalized(&collection[i].support),
        )
    });
    let mut entries: Vec<Option<FitEntry>> = vec![None; collection.len()];
    for &i in &order {
        let cand = &collection[i];
        let support = normalized(&cand.support);
        let key = (digest, support.clone());
        let outcome = if let Some(hit) = cache.map.get(&key) {
            Ok(hit.clone())
        } else {
            let mut o = opts.clone();
            let nested_best = entries
                .iter()
                .flatten()
                .filter_map(|e| e.fit.as_ref().map(|f| (e, f)))
                .filter(|(e, _)| e.candidate.support.iter().all(|j| support.contains(j)))
                .min_by(|a, b| a.1.deviance.total_cmp(&b.1.deviance));
            if let Some((_, f)) = nested_best {
                o.warm_starts.push(f.theta_hat.0.clone());
            }
            let r = estimate::fit_submodel(spec, space, sample, &support, &o);
            if let Ok(fit) = &r {
                cache.map.insert(key, fit.clone());
            }
            r
        };
        entries[i] = Some(match outcome {
            Ok(fit) => FitEntry {
                candidate: cand.clone(),
                fit: Some(fit),
                error: None,
            },
            Err(e) => FitEntry {
                candidate: cand.clone(),
                fit: None,
                error: Some(e.to_string()),
            },
        });
    }
    Ok(entries
        .into_iter()
        .map(|e| e.expect("every candidate visited"))
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectionRow {
    pub m_id: String,
    pub support: Vec<usize>,
    pub dim: usize,
    pub deviance: Option<f64>,
    pub criterion: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectionResult {
    /// Index of the chosen candidate in `table` (collection order).
    pub chosen: usize,
    pub table: Vec<SelectionRow>,
    pub penalty: PenaltySchedule,
    pub kappa_n: f64,
}

impl SelectionResult {
    pub fn chosen_row(&self) -> &SelectionRow {
        &self.table[self.chosen]
    }

    /// CSV with columns `m_id,support,dim,deviance,criterion,chosen`;
    /// supports are space-separated component indices.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["m_id", "support", "dim", "deviance", "criterion", "chosen"])?;
        for (i, row) in self.table.iter().enumerate() {
            let support: Vec<String> = row.support.iter().map(|v| v.to_string()).collect();
            let num = |v: Option<f64>| v.map_or_else(|| "NaN".to_string(), |v| format!("{v:.10}"));
            wtr.write_record([
                row.m_id.clone(),
                support.join(" "),
                row.dim.to_string(),
                num(row.deviance),
                num(row.criterion),
                (i == self.chosen).to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Apply a penalty to a fitted table. Ties go to the smaller `|m|`, then to
/// the lexicographically smaller support.
pub fn select_from_table(
    entries: &[FitEntry],
    penalty: &PenaltySchedule,
    n: usize,
) -> Result<SelectionResult> {
    let kappa_n = penalty.kappa(n);
    let table: Vec<SelectionRow> = entries
        .iter()
        .map(|e| {
            let deviance = e.fit.as_ref().map(|f| f.deviance);
            SelectionRow {
                m_id: e.candidate.id.clone(),
                support: normalized(&e.candidate.support),
                dim: e.dim(),
                deviance,
                criterion: deviance.map(|d| criterion(d, kappa_n, e.dim())),
                error: e.error.clone(),
            }
        })
        .collect();
    let chosen = (0..table.len())
        .filter(|&i| table[i].criterion.is_some_and(f64::is_finite))
        .min_by(|&a, &b| {
            let (ra, rb) = (&table[a], &table[b]);
            ra.criterion
                .unwrap()
                .total_cmp(&rb.criterion.unwrap())
                .then(ra.dim.cmp(&rb.dim))
                .then(ra.support.cmp(&rb.support))
        })
        .ok_or(AcxError::AllModelsFailed)?;
    Ok(SelectionResult {
        chosen,
        table,
        penalty: penalty.clone(),
        kappa_n,
    })
}

/// Fit the collection and return the penalized argmin with its audit table.
pub fn select_model(
    spec: &ModelSpec,
    space: &ParamSpace,
    sample: &Sample,
    collection: &[Candidate],
    penalty: &PenaltySchedule,
    opts: &FitOptions,
) -> Result<SelectionResult> {
    let mut cache = FitCache::new();
    let entries = fit_collection(spec, space, sample, collection, opts, &mut cache)?;
    select_from_table(&entries, penalty, sample.n())
}

/// Order collection for an FDAR-X(q_max) layout, checked against `spec`.
pub fn fdarx_collection(spec: &ModelSpec) -> Result<Vec<Candidate>> {
    match spec.family() {
        Family::FdarX { q } => Ok(fdarx_order_supports(q)),
        other => Err(AcxError::InvalidSpec(format!(
            "order collections are defined for fdarx layouts, got {}",
            other.name()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Theta;
    use crate::simulate::{simulate_covariates, simulate_response, NoiseConfig};

    #[test]
    fn penalties() {
        assert_eq!(criterion(5.0, 0.0, 4), 5.0);
        let bic = PenaltySchedule::Bic;
        assert!((criterion(200.0, bic.kappa(1000), 3) - 220.723).abs() < 1e-3);
        // 2·log(log 1000) = 3.865289…
        let hqc2 = PenaltySchedule::hqc(2.0).unwrap().kappa(1000);
        assert!((hqc2 - 3.865_289_467_8).abs() < 1e-9);
        assert!((hqc2 - 3.8663).abs() < 2e-3);
        assert!(PenaltySchedule::hqc(0.0).is_err());
        for label in ["bic", "hqc(3.5)", "hqc(5)"] {
            assert_eq!(PenaltySchedule::parse(label).unwrap().label(), label);
        }
        assert_eq!(PenaltySchedule::parse("HQC").unwrap().label(), "hqc(2)");
        assert!(PenaltySchedule::parse("aic").is_err());
        let c = PenaltySchedule::custom("two", |_| 2.0);
        assert_eq!(c.kappa(10), 2.0);
        // Built-ins grow with n and stay o(n).
        for p in [PenaltySchedule::Bic, PenaltySchedule::hqc(3.5).unwrap()] {
            let mut prev = p.kappa(16);
            for n in [64, 100, 1000, 100_000] {
                assert!(p.kappa(n) > prev && p.kappa(n) / (n as f64) < 0.1);
                prev = p.kappa(n);
            }
        }
    }

    #[test]
    fn order_supports() {
        let c = fdarx_order_supports(3);
        assert_eq!(c.len(), 4);
        assert_eq!(c[0].support, vec![0, 1, 2, 3]);
        assert_eq!(c[2].support, vec![0, 1, 2, 3, 4, 5, 7, 8]);
        assert_eq!(c[2].id, "q=2");
        assert!(fdarx_collection(&ModelSpec::arx_garch11(1).unwrap()).is_err());
    }

    fn tie_entry(id: &str, support: Vec<usize>, deviance: f64) -> FitEntry {
        FitEntry {
            candidate: Candidate {
                id: id.into(),
                support: support.clone(),
            },
            fit: Some(FitResult {
                theta_hat: Theta(vec![0.0; 4]),
                loglik: -deviance / 2.0,
                deviance,
                converged: true,
                active_bounds: vec![],
                frozen: vec![],
                n_starts_used: 1,
            }),
            error: None,
        }
    }

    #[test]
    fn tie_break_and_failures() {
        let entries = vec![
            tie_entry("b", vec![0, 2], 10.0),
            tie_entry("a", vec![0, 1], 10.0),
            tie_entry("c", vec![0], 12.0),
            FitEntry {
                candidate: Candidate {
                    id: "bad".into(),
                    support: vec![3],
                },
                fit: None,
                error: Some("boom".into()),
            },
        ];
        let zero = PenaltySchedule::custom("zero", |_| 0.0);
        let r = select_from_table(&entries, &zero, 100).unwrap();
        assert_eq!(r.chosen_row().m_id, "a");
        let big = PenaltySchedule::custom("big", |_| 5.0);
        assert_eq!(
            select_from_table(&entries, &big, 100)
                .unwrap()
                .chosen_row()
                .m_id,
            "c"
        );
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("m_id,support,dim,deviance,criterion,chosen\n"));
        assert!(text.contains("bad,3,1,NaN,NaN,false"));
        assert!(select_from_table(&entries[3..], &zero, 100).is_err());
    }

    #[test]
    fn nested_chain_and_penalty_monotonicity() {
        let truth = ModelSpec::fdarx(2);
        let th = Theta(vec![0.15, 0.4, 0.5, 0.2, 0.1, 0.1, 0.03, 0.3]);
        let x = simulate_covariates(1000, 0.5, 0.5, &NoiseConfig::normal(41, 0)).unwrap();
        let s = simulate_response(&truth, &th, &x, 500, 500, &NoiseConfig::normal(41, 1)).unwrap();
        let spec = ModelSpec::fdarx(4);
        let space = ParamSpace::default_for(&spec);
        let coll = fdarx_order_supports(4);
        let mut cache = FitCache::new();
        let entries =
            fit_collection(&spec, &space, &s, &coll, &FitOptions::new(1, 0), &mut cache).unwrap();
        assert_eq!(cache.len(), 5);
        let dev: Vec<f64> = entries
            .iter()
            .map(|e| e.fit.as_ref().unwrap().deviance)
            .collect();
        for w in dev.windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "{dev:?}");
        }
        let mut prev = usize::MAX;
        for k in [0.0, 1.0, 3.0, 6.0, 10.0, 50.0] {
            let r = select_from_table(&entries, &PenaltySchedule::custom("k", move |_| k), s.n())
                .unwrap();
            assert!(r.chosen_row().dim <= prev);
            prev = r.chosen_row().dim;
        }
        // A second pass is served entirely from the cache.
        let again =
            fit_collection(&spec, &space, &s, &coll, &FitOptions::new(1, 0), &mut cache).unwrap();
        assert_eq!(cache.len(), 5);
        assert_eq!(again[2].fit, entries[2].fit);
    }

    #[test]
    fn singleton_collection() {
        let spec = ModelSpec::fdarx(1);
        let space = ParamSpace::default_for(&spec);
        let x = simulate_covariates(700, 0.5, 0.5, &NoiseConfig::normal(1, 0)).unwrap();
        let s = simulate_response(
            &spec,
            &Theta(vec![0.15, -0.2, 0.4, 0.3, 0.0, 0.0]),
            &x,
            200,
            500,
            &NoiseConfig::normal(1, 1),
        )
        .unwrap();
        let coll = vec![Candidate {
            id: "only".into(),
            support: vec![0, 1, 2, 3],
        }];
        let r = select_model(
            &spec,
            &space,
            &s,
            &coll,
            &PenaltySchedule::Bic,
            &FitOptions::new(1, 0),
        )
        .unwrap();
        assert_eq!(r.chosen, 0);
    }
}
