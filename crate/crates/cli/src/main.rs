//! `catimpute` command-line interface.
//!
//! Exit codes: 0 on success, 1 for invalid input or usage, 2 for failures
//! while computing.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use catimpute::bootstrap::{bootstrap_variance, BootstrapConfig};
use catimpute::estimators::{
    aac_estimators, ac_estimators, acc_estimators, cc_estimators, ht_proportions, tilde_estimators,
};
use catimpute::harness::{
    masked_replicate, replicate_streams, run_point_study, run_variance_study, StudyConfig, StudyReport,
};
use catimpute::popgen::generate_population;
use catimpute::survey::{load_dataset, write_dataset};
use catimpute::{
    Error, ImputationOutcome, Method, Parameter, PopulationSpec, ProportionTable, RngStream, Schema, SurveyDataset,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "catimpute",
    version,
    about = "Hot-deck imputation and variance estimation for categorical survey data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a finite population from a class specification.
    Popgen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Impute the missing items of a dataset.
    Impute(ImputeArgs),
    /// Rescaling-bootstrap variance and percentile intervals for a masked sample.
    BootstrapVar(BootstrapArgs),
    /// Point estimators applied to a dataset as it stands.
    Estimate {
        #[command(flatten)]
        input: InputArgs,
        /// Estimators to report; defaults to `ht` for complete data and all
        /// missing-data estimators otherwise.
        #[arg(long = "estimator", value_enum)]
        estimators: Vec<EstimatorArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo study of point estimators.
    SimulatePoints(StudyArgs),
    /// Monte Carlo study of the bootstrap variance estimator.
    SimulateVariance(StudyArgs),
}

#[derive(Args)]
struct InputArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Schema file; defaults to `<in>.schema.toml` when present.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Overrides the population size of the schema.
    #[arg(long)]
    population_size: Option<u64>,
}

#[derive(Args)]
struct ImputeArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    #[command(flatten)]
    input: InputArgs,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-unit imputation records and diagnostics.
    #[arg(long)]
    flags_out: Option<PathBuf>,
    /// Write `*_imputed` columns in the output CSV.
    #[arg(long)]
    emit_flags: bool,
    /// Random seed; drawn from the clock and logged when absent.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    stream: u64,
}

#[derive(Args)]
struct BootstrapArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    replicates: usize,
    /// Tail probability of each percentile interval; repeatable.
    #[arg(long = "alpha", default_values_t = [0.025, 0.05])]
    alphas: Vec<f64>,
    /// Resample size; the sample size when absent.
    #[arg(long)]
    n_prime: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    stream: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    config: PathBuf,
    /// `.json` writes the full report, anything else long-format CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; overrides the config file.
    #[arg(long)]
    threads: Option<usize>,
    /// Write the masked sample of one Monte Carlo replicate.
    #[arg(long, requires = "mask_replicate")]
    mask_out: Option<PathBuf>,
    #[arg(long, requires = "mask_out")]
    mask_replicate: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Rhdi,
    Jhdi,
    Bhdi,
    Jhdi3,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Rhdi => Method::Rhdi,
            MethodArg::Jhdi => Method::Jhdi,
            MethodArg::Bhdi => Method::Bhdi,
            MethodArg::Jhdi3 => Method::Jhdi3,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EstimatorArg {
    Ht,
    Cc,
    Acc,
    Ac,
    Aac,
    Tilde,
}

impl EstimatorArg {
    fn name(self) -> &'static str {
        match self {
            EstimatorArg::Ht => "ht",
            EstimatorArg::Cc => "cc",
            EstimatorArg::Acc => "acc",
            EstimatorArg::Ac => "ac",
            EstimatorArg::Aac => "aac",
            EstimatorArg::Tilde => "tilde",
        }
    }

    fn compute(self, data: &SurveyDataset) -> catimpute::Result<ProportionTable> {
        match self {
            EstimatorArg::Ht => ht_proportions(data),
            EstimatorArg::Cc => cc_estimators(data),
            EstimatorArg::Acc => acc_estimators(data),
            EstimatorArg::Ac => ac_estimators(data),
            EstimatorArg::Aac => aac_estimators(data),
            EstimatorArg::Tilde => tilde_estimators(data),
        }
    }
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn resolve_seed(seed: Option<u64>) -> u64 {
    let seed = seed.unwrap_or_else(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_nanos() as u64)
    });
    info!("seed {seed}");
    seed
}

fn load(args: &InputArgs) -> Result<SurveyDataset, Failure> {
    if !args.input.exists() {
        return Err(Error::InputNotFound(args.input.display().to_string()).into());
    }
    let mut schema = match &args.schema {
        Some(path) => Schema::read(path)?,
        None => {
            let sidecar = Schema::sidecar_path(&args.input);
            if sidecar.exists() {
                Schema::read(&sidecar)?
            } else {
                Schema::default()
            }
        }
    };
    if args.population_size.is_some() {
        schema.population_size = args.population_size;
    }
    if schema.population_size.is_none() {
        return Err(Failure::Validation(format!(
            "population size unknown for {}: pass --population-size or a schema",
            args.input.display()
        )));
    }
    let data = load_dataset(&args.input, &schema)?;
    info!("read {} units from {}", data.len(), args.input.display());
    Ok(data)
}

fn emit(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

fn popgen(spec: &Path, out: &Path) -> Outcome {
    let spec = PopulationSpec::read(spec)?;
    let population = generate_population(&spec)?;
    write_dataset(out, &population, false)?;
    info!("wrote {} units to {}", population.len(), out.display());
    Ok(())
}

/// One line per imputed value, fallback and balancing residual.
fn flags_csv(outcome: &ImputationOutcome) -> String {
    let mut w = csv_writer();
    for v in &outcome.imputed {
        w.write_record([
            "imputed",
            &v.id.to_string(),
            &v.class.to_string(),
            v.item.name(),
            &v.value.to_string(),
        ])
        .unwrap();
    }
    for f in &outcome.fallbacks {
        w.write_record(["fallback", "", &f.class.to_string(), &f.quantity, f.source.name()])
            .unwrap();
    }
    for r in &outcome.residuals {
        w.write_record([
            "residual",
            "",
            &r.class.to_string(),
            r.kind.name(),
            &r.max_residual.to_string(),
        ])
        .unwrap();
        for q in &r.dropped {
            w.write_record(["dropped", "", &r.class.to_string(), r.kind.name(), &q.to_string()])
                .unwrap();
        }
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["record", "id", "class", "item", "value"]).unwrap();
    w
}

fn impute(args: &ImputeArgs) -> Outcome {
    let data = load(&args.input)?;
    let method = Method::from(args.method);
    let seed = resolve_seed(args.seed);
    info!("method {method}, stream {}", args.stream);
    let outcome = method.run(&data, RngStream::new(seed, args.stream))?;
    info!(
        "imputed {} values, {} fallbacks",
        outcome.imputed.len(),
        outcome.fallbacks.len()
    );
    match &args.out {
        Some(path) => write_dataset(path, &outcome.data, args.emit_flags)?,
        None => emit(None, &catimpute::survey::dataset_to_csv(&outcome.data, args.emit_flags))?,
    }
    if let Some(path) = &args.flags_out {
        std::fs::write(path, flags_csv(&outcome))?;
    }
    Ok(())
}

fn bootstrap(args: &BootstrapArgs) -> Outcome {
    let data = load(&args.input)?;
    let seed = resolve_seed(args.seed);
    let config = BootstrapConfig {
        n_prime: args.n_prime,
        replicates: args.replicates,
        alphas: args.alphas.clone(),
    };
    let result = bootstrap_variance(&data, &config, RngStream::new(seed, args.stream))?;
    if result.unreliable {
        log::warn!(
            "{} of {} replicates dropped; variance flagged unreliable",
            result.dropped,
            result.replicates
        );
    }
    emit(args.out.as_deref(), &to_json(&result))
}

#[derive(Serialize)]
struct TableOutput {
    estimator: &'static str,
    joint: Vec<Vec<f64>>,
    marginal_x: Vec<f64>,
    marginal_y: Vec<f64>,
    /// Present for 2x2 tables; an undefined odds ratio is `null`.
    parameters: Option<BTreeMap<&'static str, Option<f64>>>,
}

fn table_output(estimator: &'static str, t: &ProportionTable) -> TableOutput {
    let two_by_two = t.k() == 2 && t.l() == 2;
    TableOutput {
        estimator,
        joint: (0..t.k())
            .map(|a| (0..t.l()).map(|b| t.joint(a, b)).collect())
            .collect(),
        marginal_x: t.marginals_x().to_vec(),
        marginal_y: t.marginals_y().to_vec(),
        parameters: two_by_two.then(|| Parameter::ALL.iter().map(|&p| (p.name(), p.value(t).ok())).collect()),
    }
}

fn estimate(input: &InputArgs, estimators: &[EstimatorArg], out: Option<&Path>) -> Outcome {
    let data = load(input)?;
    let chosen = if !estimators.is_empty() {
        estimators.to_vec()
    } else if data.is_complete() {
        vec![EstimatorArg::Ht]
    } else {
        use EstimatorArg::*;
        vec![Cc, Acc, Ac, Aac, Tilde]
    };
    let tables = chosen
        .iter()
        .map(|e| Ok(table_output(e.name(), &e.compute(&data)?)))
        .collect::<Result<Vec<_>, Failure>>()?;
    emit(out, &to_json(&tables))
}

fn study(args: &StudyArgs, variance: bool) -> Outcome {
    let mut config = StudyConfig::read(&args.config)?;
    if args.threads.is_some() {
        config.threads = args.threads;
        config.validate()?;
    }
    if variance && config.bootstrap.is_none() {
        return Err(Failure::Validation(format!(
            "{}: simulate-variance needs a [bootstrap] section",
            args.config.display()
        )));
    }
    info!("seed {}", config.seed);
    if let (Some(path), Some(b)) = (&args.mask_out, args.mask_replicate) {
        if b >= config.replicates as u64 {
            return Err(Failure::Validation(format!(
                "mask replicate {b} outside 0..{}",
                config.replicates
            )));
        }
        let spec = config.spec();
        let population = generate_population(&spec)?;
        let streams = replicate_streams(config.seed, 0, b);
        let masked = masked_replicate(&population, &spec, config.sample_size, &streams)?;
        write_dataset(path, &masked.data, false)?;
        info!(
            "replicate {b} masked sample written to {}; impute with --seed {} --stream {}",
            path.display(),
            streams.imputation.seed,
            streams.imputation.stream
        );
    }
    let report: StudyReport = if variance {
        run_variance_study(&config)?
    } else {
        run_point_study(&config)?
    };
    let json = args
        .out
        .as_ref()
        .is_some_and(|p| p.extension().is_some_and(|e| e == "json"));
    emit(
        args.out.as_deref(),
        &if json { report.to_json() + "\n" } else { report.to_csv() },
    )
}

fn run(cli: Cli) -> Outcome {
    match &cli.command {
        Command::Popgen { spec, out } => popgen(spec, out),
        Command::Impute(args) => impute(args),
        Command::BootstrapVar(args) => bootstrap(args),
        Command::Estimate { input, estimators, out } => estimate(input, estimators, out.as_deref()),
        Command::SimulatePoints(args) => study(args, false),
        Command::SimulateVariance(args) => study(args, true),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
