//! `acx` command-line front end.
//!
//! Exit codes: 0 on success, 2 on a configuration or usage error, 3 when every
//! replication of a study failed, 1 on any other error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use acx::experiments::{self, ExperimentReport, ScenarioConfig};
use acx::inference;
use acx::likelihood;
use acx::model::{ModelDoc, ModelSpec, ParamSpace};
use acx::select::{self, FitCache, PenaltySchedule};
use acx::simulate::Sample;
use acx::{estimate, AcxError};
use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "acx",
    version,
    about = "Simulation, QMLE, boundary-aware Wald tests and order selection"
)]
struct Cli {
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one replication of a scenario and write it as CSV.
    Simulate(SimulateArgs),
    /// Fit a model to a CSV sample by Gaussian QMLE.
    Fit(FitArgs),
    /// Wald test of `Γθ = ϑ₀` with a boundary-aware critical value.
    Test(TestArgs),
    /// Penalized order selection over FDAR-X(0..=q_max).
    Select(SelectArgs),
    /// Replicated simulation studies.
    #[command(subcommand)]
    Study(StudyCommand),
}

#[derive(Args)]
struct ModelArgs {
    /// Model: a JSON model file, or `fdarx:q`, `armax:p,q,s`, `archx:q`, `arx_garch11`.
    #[arg(long)]
    model: String,
    /// Covariate dimension for the shorthand forms.
    #[arg(long, default_value_t = 1)]
    d_x: usize,
}

impl ModelArgs {
    fn resolve(&self) -> anyhow::Result<(ModelSpec, ParamSpace)> {
        Ok(parse_model(&self.model, self.d_x)?.into_model()?)
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Built-in scenario id (s0, s1, s0_prime, s1_prime, s1_star, s2_star).
    #[arg(long, conflicts_with_all = ["config", "model"])]
    scenario: Option<String>,
    /// Scenario JSON file; the first scenario is used.
    #[arg(long, conflicts_with = "model")]
    config: Option<PathBuf>,
    /// Ad hoc model instead of a scenario; requires --theta.
    #[arg(long, requires = "theta")]
    model: Option<String>,
    #[arg(long, default_value_t = 1)]
    d_x: usize,
    /// Comma-separated parameter vector for --model.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Option<Vec<f64>>,
    #[arg(long)]
    n: usize,
    /// Replication index; selects the RNG streams.
    #[arg(long, default_value_t = 0)]
    rep: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// CSV with columns t, y, x1..x_d.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = estimate::DEFAULT_STARTS)]
    starts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the fit as JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the fitted recursion (t, fhat, hhat, qhat) as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: PathBuf,
    /// Tested components (0-based); Γ is the matching selector.
    #[arg(long, value_delimiter = ',', required = true)]
    components: Vec<usize>,
    /// Null values, one per component; zeros by default.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    v0: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Components held at a bound under the null; `none` forces the χ² test.
    /// Derived from the null when omitted.
    #[arg(long)]
    null_activity: Option<String>,
    #[arg(long, default_value_t = inference::DEFAULT_TEST_DRAWS)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 9)]
    q_max: usize,
    /// `bic`, `hqc` or `hqc(c)`; repeatable.
    #[arg(long = "penalty", default_value = "bic")]
    penalties: Vec<String>,
    #[arg(long, default_value_t = 2)]
    starts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum StudyCommand {
    /// Parameter estimation and covariate significance test.
    Estimation(StudyArgs),
    /// Order-selection frequencies.
    Selection(StudyArgs),
}

#[derive(Args)]
struct StudyArgs {
    /// Built-in scenario ids; repeatable.
    #[arg(long = "scenario", conflicts_with = "config")]
    scenarios: Vec<String>,
    /// JSON file with one scenario or `{"scenarios": [...]}`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the number of replications.
    #[arg(long)]
    reps: Option<usize>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the sample sizes.
    #[arg(long, value_delimiter = ',')]
    sample_sizes: Option<Vec<usize>>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_model(s: &str, d_x: usize) -> anyhow::Result<ModelDoc> {
    let path = Path::new(s);
    if path.is_file() {
        let text = fs::read_to_string(path)?;
        return serde_json::from_str(&text)
            .map_err(|e| AcxError::Config(format!("{}: {e}", path.display())).into());
    }
    let (family, orders) = s.split_once(':').unwrap_or((s, ""));
    let orders = orders
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| AcxError::Config(format!("bad model orders in {s:?}")))?;
    Ok(ModelDoc {
        family: family.to_string(),
        orders,
        d_x,
        lo: None,
        hi: None,
        constrained: None,
        h_floor: None,
    })
}

fn write_json(value: &serde_json::Value, out: Option<&Path>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn load_sample(path: &Path) -> anyhow::Result<Sample> {
    Sample::load_csv(path).with_context(|| format!("reading {}", path.display()))
}

fn simulate(args: SimulateArgs) -> anyhow::Result<ExitCode> {
    let mut cfg = if let Some(id) = &args.scenario {
        experiments::builtin_scenario(id)?
    } else if let Some(path) = &args.config {
        experiments::load_config(path)?.remove(0)
    } else if let Some(model) = &args.model {
        let mut base = experiments::builtin_scenario("s0")?;
        base.id = "custom".into();
        base.model = parse_model(model, args.d_x)?;
        base.theta = args.theta.clone().unwrap_or_default();
        base.test = None;
        base
    } else {
        return Err(AcxError::Config("give --scenario, --config or --model".into()).into());
    };
    cfg.sample_sizes = vec![args.n];
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let sample = experiments::simulate_replication(&cfg, args.n, args.rep)?;
    sample.save_csv(&args.out)?;
    Ok(ExitCode::SUCCESS)
}

fn fit(args: FitArgs) -> anyhow::Result<ExitCode> {
    let (spec, space) = args.model.resolve()?;
    let sample = load_sample(&args.data)?;
    let fit = estimate::fit_qmle(&spec, &space, &sample, &[], args.starts, args.seed)?;
    if let Some(trace) = &args.trace {
        let state = likelihood::eval_loglik(&spec, &space, &fit.theta_hat, &sample)?;
        state.write_csv(fs::File::create(trace)?)?;
    }
    let doc = serde_json::json!({
        "model": ModelDoc::from_model(&spec, &space),
        "names": spec.layout(),
        "n": sample.n(),
        "fit": fit,
    });
    write_json(&doc, args.out.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn test(args: TestArgs) -> anyhow::Result<ExitCode> {
    let (spec, space) = args.model.resolve()?;
    let sample = load_sample(&args.data)?;
    let d = spec.dim();
    if let Some(&i) = args.components.iter().find(|&&i| i >= d) {
        bail!(AcxError::Config(format!(
            "component {i} is out of range for dimension {d}"
        )));
    }
    let gamma = inference::selector(d, &args.components);
    let v0 = args
        .v0
        .clone()
        .unwrap_or_else(|| vec![0.0; args.components.len()]);
    if v0.len() != args.components.len() {
        bail!(AcxError::Config(
            "--v0 needs one value per component".into()
        ));
    }
    let activity: Option<Vec<usize>> = match args.null_activity.as_deref() {
        None => None,
        Some("none") | Some("") => Some(Vec::new()),
        Some(list) => Some(
            list.split(',')
                .map(|t| t.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|_| AcxError::Config(format!("bad --null-activity {list:?}")))?,
        ),
    };
    let result = inference::significance_test(
        &spec,
        &space,
        &sample,
        &gamma,
        &v0,
        args.alpha,
        activity.as_deref(),
        args.draws,
        args.seed,
    )?;
    write_json(&serde_json::to_value(&result)?, args.out.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn select_cmd(args: SelectArgs) -> anyhow::Result<ExitCode> {
    let sample = load_sample(&args.data)?;
    if sample.d_x() != 1 {
        bail!(AcxError::Config(
            "order selection uses a single covariate".into()
        ));
    }
    let penalties = args
        .penalties
        .iter()
        .map(|p| PenaltySchedule::parse(p))
        .collect::<Result<Vec<_>, _>>()?;
    let spec = ModelSpec::fdarx(args.q_max);
    let space = ParamSpace::default_for(&spec);
    let collection = select::fdarx_order_supports(args.q_max);
    let opts = estimate::FitOptions::new(args.starts, args.seed);
    let entries = select::fit_collection(
        &spec,
        &space,
        &sample,
        &collection,
        &opts,
        &mut FitCache::new(),
    )?;
    fs::create_dir_all(&args.out_dir)?;
    let mut summary = Vec::new();
    for pen in &penalties {
        let result = select::select_from_table(&entries, pen, sample.n())?;
        let stem: String = pen
            .label()
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '.' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        let file = args
            .out_dir
            .join(format!("selection_{}.csv", stem.trim_end_matches('_')));
        result.write_csv(fs::File::create(&file)?)?;
        summary.push(serde_json::json!({
            "penalty": pen.label(),
            "kappa_n": result.kappa_n,
            "chosen": result.chosen_row().m_id,
            "table": file.file_name().map(|f| f.to_string_lossy().into_owned()),
        }));
    }
    write_json(
        &serde_json::Value::from(summary.clone()),
        Some(&args.out_dir.join("selection.json")),
    )?;
    write_json(&serde_json::Value::from(summary.clone()), None)?;
    Ok(ExitCode::SUCCESS)
}

fn study_configs(args: &StudyArgs) -> anyhow::Result<Vec<ScenarioConfig>> {
    let mut configs = if let Some(path) = &args.config {
        experiments::load_config(path)?
    } else if !args.scenarios.is_empty() {
        args.scenarios
            .iter()
            .map(|id| experiments::builtin_scenario(id))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        return Err(AcxError::Config("give --scenario or --config".into()).into());
    };
    for c in &mut configs {
        if let Some(r) = args.reps {
            c.reps = r;
        }
        if let Some(s) = args.seed {
            c.seed = s;
        }
        if let Some(sizes) = &args.sample_sizes {
            c.sample_sizes = sizes.clone();
        }
    }
    Ok(configs)
}

fn finish_study(report: ExperimentReport, out_dir: &Path) -> anyhow::Result<ExitCode> {
    experiments::write_outputs(&report, out_dir)?;
    eprintln!(
        "wrote {} ({:.1} s)",
        out_dir.display(),
        report.timing.total_seconds
    );
    if report.all_failed() {
        eprintln!("every replication failed");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!(AcxError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()?;
    }
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Test(a) => test(a),
        Command::Select(a) => select_cmd(a),
        Command::Study(StudyCommand::Estimation(a)) => {
            let report = experiments::run_estimation_study(&study_configs(&a)?)?;
            finish_study(report, &a.out_dir)
        }
        Command::Study(StudyCommand::Selection(a)) => {
            let report = experiments::run_selection_study(&study_configs(&a)?)?;
            finish_study(report, &a.out_dir)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = matches!(
                e.downcast_ref::<AcxError>(),
                Some(AcxError::Config(_) | AcxError::InvalidSpec(_) | AcxError::InvalidSpace(_))
            );
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}
