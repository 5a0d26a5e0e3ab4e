//! Monte Carlo studies of the estimators: repeated sampling from a
//! synthetic population, nonresponse, estimation or imputation, and
//! aggregation into relative bias and relative efficiency.
//!
//! Replicate `b` draws everything from streams derived from
//! `(seed, b)` only, and aggregation runs over results held in replicate
//! order, so a report does not depend on the number of threads.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_variance, sample_variance, BootstrapConfig};
use crate::design::{generate_response, srswor, MaskedSample, RngStream};
use crate::error::{Error, Result};
use crate::estimators::{
    aac_estimators, ac_estimators, acc_estimators, cc_estimators, ht_proportions, imputed_proportions, Parameter,
    ProportionTable,
};
use crate::imputation::Method;
use crate::popgen::{generate_population, PopulationSpec};
use crate::survey::{read_to_string, SurveyDataset};

/// Estimators computed directly from the incomplete sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectEstimator {
    Cc,
    Acc,
    Ac,
    Aac,
}

impl DirectEstimator {
    pub fn compute(self, data: &SurveyDataset) -> Result<ProportionTable> {
        match self {
            DirectEstimator::Cc => cc_estimators(data),
            DirectEstimator::Acc => acc_estimators(data),
            DirectEstimator::Ac => ac_estimators(data),
            DirectEstimator::Aac => aac_estimators(data),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    Direct(DirectEstimator),
    Imputed(Method),
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Direct(DirectEstimator::Cc) => "CC",
            Estimator::Direct(DirectEstimator::Acc) => "ACC",
            Estimator::Direct(DirectEstimator::Ac) => "AC",
            Estimator::Direct(DirectEstimator::Aac) => "AAC",
            Estimator::Imputed(Method::Rhdi) => "RHDI",
            Estimator::Imputed(Method::Jhdi) => "JHDI",
            Estimator::Imputed(Method::Bhdi) => "BHDI",
            Estimator::Imputed(Method::Jhdi3) => "JHDI3",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let direct = match s.to_ascii_lowercase().as_str() {
            "cc" => Some(DirectEstimator::Cc),
            "acc" => Some(DirectEstimator::Acc),
            "ac" => Some(DirectEstimator::Ac),
            "aac" => Some(DirectEstimator::Aac),
            _ => None,
        };
        match direct {
            Some(d) => Ok(Estimator::Direct(d)),
            None => s.parse().map(Estimator::Imputed),
        }
    }
}

/// Settings of the variance study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceSettings {
    /// Bootstrap replicates per sample.
    pub replicates: usize,
    #[serde(default)]
    pub n_prime: Option<usize>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    /// Size of the independent run approximating the true variance.
    #[serde(default = "default_truth_replicates")]
    pub truth_replicates: usize,
    #[serde(default = "default_variance_method")]
    pub method: Method,
}

fn default_alphas() -> Vec<f64> {
    vec![0.025, 0.05]
}

fn default_truth_replicates() -> usize {
    20_000
}

fn default_variance_method() -> Method {
    Method::Bhdi
}

fn default_estimators() -> Vec<DirectEstimator> {
    vec![
        DirectEstimator::Cc,
        DirectEstimator::Acc,
        DirectEstimator::Ac,
        DirectEstimator::Aac,
    ]
}

fn default_methods() -> Vec<Method> {
    vec![Method::Rhdi, Method::Jhdi, Method::Bhdi]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    /// The reference five-class population when absent.
    #[serde(default)]
    pub population: Option<PopulationSpec>,
    pub sample_size: usize,
    /// Monte Carlo replicates `B`.
    pub replicates: usize,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<DirectEstimator>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    pub seed: u64,
    /// Worker threads; the rayon default when absent.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub bootstrap: Option<VarianceSettings>,
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_toml(&read_to_string(path)?)
    }

    pub fn spec(&self) -> PopulationSpec {
        self.population.clone().unwrap_or_else(PopulationSpec::reference)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::TooFewReplicates(format!(
                "{} Monte Carlo replicates, need at least 2",
                self.replicates
            )));
        }
        let spec = self.spec();
        spec.validate()?;
        if self.sample_size == 0 || self.sample_size as u64 > spec.population_size() {
            return Err(Error::SampleSize {
                n: self.sample_size,
                population: spec.population_size() as usize,
            });
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidConfig("threads must be positive".into()));
        }
        if self.methods.contains(&Method::Jhdi3) {
            return Err(Error::InvalidConfig("jhdi3 needs a third item; studies use two".into()));
        }
        if let Some(b) = &self.bootstrap {
            if b.truth_replicates < 2 {
                return Err(Error::TooFewReplicates("truth_replicates must be at least 2".into()));
            }
            if b.method == Method::Jhdi3 {
                return Err(Error::InvalidConfig("jhdi3 needs a third item; studies use two".into()));
            }
            self.bootstrap_config()?.validate()?;
        }
        Ok(())
    }

    fn bootstrap_config(&self) -> Result<BootstrapConfig> {
        let b = self
            .bootstrap
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("missing [bootstrap] section".into()))?;
        Ok(BootstrapConfig {
            n_prime: b.n_prime,
            replicates: b.replicates,
            alphas: b.alphas.clone(),
        })
    }

    /// Estimators of the point study in report order; AAC is always present.
    pub fn estimator_list(&self) -> Vec<Estimator> {
        let mut out: Vec<Estimator> = self.estimators.iter().map(|&e| Estimator::Direct(e)).collect();
        if !self.estimators.contains(&DirectEstimator::Aac) {
            out.push(Estimator::Direct(DirectEstimator::Aac));
        }
        out.extend(self.methods.iter().map(|&m| Estimator::Imputed(m)));
        out
    }

    fn run_in_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        match self.threads {
            None => Ok(f()),
            Some(t) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build()
                    .map_err(|e| Error::InvalidConfig(e.to_string()))?;
                Ok(pool.install(f))
            }
        }
    }
}

/// Streams used by one Monte Carlo replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplicateStreams {
    pub sample: RngStream,
    pub response: RngStream,
    pub imputation: RngStream,
    pub bootstrap: RngStream,
}

/// Family 0 drives the main run, family 1 the independent truth run.
pub fn replicate_streams(seed: u64, family: u64, replicate: u64) -> ReplicateStreams {
    let base = RngStream::new(seed, family).substream(replicate);
    ReplicateStreams {
        sample: base.substream(1),
        response: base.substream(2),
        imputation: base.substream(3),
        bootstrap: base.substream(4),
    }
}

/// Draws the sample and masks it for one replicate.
pub fn masked_replicate(
    population: &SurveyDataset,
    spec: &PopulationSpec,
    n: usize,
    streams: &ReplicateStreams,
) -> Result<MaskedSample> {
    let sample = srswor(population, n, &mut streams.sample.rng())?;
    generate_response(&sample, spec, &mut streams.response.rng())
}

/// `100 (mean - truth) / truth`.
pub fn relative_bias(estimates: &[f64], truth: f64) -> Result<f64> {
    if truth == 0.0 {
        return Err(Error::Undefined("relative bias with zero truth"));
    }
    if estimates.is_empty() {
        return Err(Error::Undefined("relative bias of no estimates"));
    }
    let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
    Ok(100.0 * (mean - truth) / truth)
}

/// `100 mse_baseline / mse`.
pub fn relative_efficiency(mse_baseline: f64, mse: f64) -> Result<f64> {
    if mse == 0.0 {
        return Err(Error::Undefined("relative efficiency with zero MSE"));
    }
    Ok(100.0 * mse_baseline / mse)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterValue {
    pub parameter: Parameter,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointRow {
    pub estimator: String,
    pub parameter: Parameter,
    pub mean: f64,
    pub mse: f64,
    /// Percent relative bias.
    pub rb: Option<f64>,
    /// Percent relative efficiency against AAC.
    pub re: Option<f64>,
    pub used: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRates {
    pub alpha: f64,
    /// Percent of intervals lying above the truth.
    pub lower: f64,
    /// Percent of intervals lying below the truth.
    pub upper: f64,
    pub two_sided: f64,
    pub intervals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceRow {
    pub parameter: Parameter,
    pub true_variance: f64,
    pub mean_variance: f64,
    /// Percent relative bias of the bootstrap variance.
    pub rb: Option<f64>,
    pub rates: Vec<ErrorRates>,
    pub used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub study: String,
    pub seed: u64,
    pub sample_size: usize,
    pub replicates: usize,
    pub truth: Vec<ParameterValue>,
    pub points: Vec<PointRow>,
    pub variance: Vec<VarianceRow>,
    pub truth_replicates: Option<usize>,
    pub bootstrap_replicates: Option<usize>,
    /// Replicates dropped inside the bootstrap, summed over samples.
    pub bootstrap_dropped: usize,
    /// Samples whose bootstrap variance was flagged unreliable.
    pub unreliable_samples: usize,
}

impl StudyReport {
    pub fn point(&self, estimator: &str, parameter: Parameter) -> Option<&PointRow> {
        self.points
            .iter()
            .find(|r| r.estimator == estimator && r.parameter == parameter)
    }

    pub fn variance_row(&self, parameter: Parameter) -> Option<&VarianceRow> {
        self.variance.iter().find(|r| r.parameter == parameter)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Long-format CSV: one line per estimator and parameter for the point
    /// study, one per parameter and alpha for the variance study.
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v}"));
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.variance.is_empty() {
            w.write_record(["estimator", "parameter", "rb", "re", "mean", "mse", "used", "excluded"])
                .unwrap();
            for r in &self.points {
                w.write_record([
                    r.estimator.clone(),
                    r.parameter.name().to_string(),
                    fmt(r.rb),
                    fmt(r.re),
                    format!("{}", r.mean),
                    format!("{}", r.mse),
                    r.used.to_string(),
                    r.excluded.to_string(),
                ])
                .unwrap();
            }
        } else {
            w.write_record([
                "parameter",
                "rb",
                "true_variance",
                "mean_variance",
                "alpha",
                "lower",
                "upper",
                "two_sided",
                "intervals",
            ])
            .unwrap();
            for r in &self.variance {
                for e in &r.rates {
                    w.write_record([
                        r.parameter.name().to_string(),
                        fmt(r.rb),
                        format!("{}", r.true_variance),
                        format!("{}", r.mean_variance),
                        format!("{}", e.alpha),
                        format!("{}", e.lower),
                        format!("{}", e.upper),
                        format!("{}", e.two_sided),
                        e.intervals.to_string(),
                    ])
                    .unwrap();
                }
            }
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

type Values = [Option<f64>; 4];

fn parameter_values(table: Result<ProportionTable>) -> Values {
    match table {
        Ok(t) => Parameter::ALL.map(|p| p.value(&t).ok().filter(|v| v.is_finite())),
        Err(_) => [None; 4],
    }
}

/// All point estimates of one replicate, in `estimators` order.
pub fn point_replicate(
    population: &SurveyDataset,
    spec: &PopulationSpec,
    n: usize,
    estimators: &[Estimator],
    streams: &ReplicateStreams,
) -> Result<Vec<Values>> {
    let masked = masked_replicate(population, spec, n, streams)?;
    Ok(estimators
        .iter()
        .map(|e| match e {
            Estimator::Direct(d) => parameter_values(d.compute(&masked.data)),
            Estimator::Imputed(m) => parameter_values(
                m.run(&masked.data, streams.imputation)
                    .and_then(|o| imputed_proportions(&o.data)),
            ),
        })
        .collect())
}

fn truth_values(population: &SurveyDataset) -> Result<Vec<ParameterValue>> {
    let table = ht_proportions(population)?;
    Parameter::ALL
        .iter()
        .map(|&p| {
            Ok(ParameterValue {
                parameter: p,
                value: p.value(&table)?,
            })
        })
        .collect()
}

fn empty_report(study: &str, config: &StudyConfig, truth: Vec<ParameterValue>) -> StudyReport {
    StudyReport {
        study: study.into(),
        seed: config.seed,
        sample_size: config.sample_size,
        replicates: config.replicates,
        truth,
        points: Vec::new(),
        variance: Vec::new(),
        truth_replicates: None,
        bootstrap_replicates: None,
        bootstrap_dropped: 0,
        unreliable_samples: 0,
    }
}

pub fn run_point_study(config: &StudyConfig) -> Result<StudyReport> {
    config.validate()?;
    let spec = config.spec();
    let population = generate_population(&spec)?;
    let truth = truth_values(&population)?;
    let estimators = config.estimator_list();
    let n = config.sample_size;
    let results: Vec<Vec<Values>> = config.run_in_pool(|| {
        (0..config.replicates as u64)
            .into_par_iter()
            .map(|b| {
                point_replicate(
                    &population,
                    &spec,
                    n,
                    &estimators,
                    &replicate_streams(config.seed, 0, b),
                )
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let column = |e: usize, j: usize| -> Vec<f64> { results.iter().filter_map(|r| r[e][j]).collect() };
    let mse = |vals: &[f64], t: f64| vals.iter().map(|v| (v - t).powi(2)).sum::<f64>() / vals.len() as f64;
    let aac = estimators
        .iter()
        .position(|e| *e == Estimator::Direct(DirectEstimator::Aac))
        .unwrap();

    let mut report = empty_report("points", config, truth.clone());
    for (e, est) in estimators.iter().enumerate() {
        for (j, pv) in truth.iter().enumerate() {
            let vals = column(e, j);
            let base = column(aac, j);
            let used = vals.len();
            let (mean, m) = if used == 0 {
                (f64::NAN, f64::NAN)
            } else {
                (vals.iter().sum::<f64>() / used as f64, mse(&vals, pv.value))
            };
            let re = if used == 0 || base.is_empty() {
                None
            } else {
                relative_efficiency(mse(&base, pv.value), m).ok()
            };
            report.points.push(PointRow {
                estimator: est.name().into(),
                parameter: pv.parameter,
                mean,
                mse: m,
                rb: relative_bias(&vals, pv.value).ok(),
                re,
                used,
                excluded: config.replicates - used,
            });
        }
    }
    Ok(report)
}

struct VarianceReplicate {
    variances: [Option<f64>; 4],
    /// `intervals[j][a]` for parameter `j` and alpha `a`.
    intervals: Vec<Vec<Option<(f64, f64)>>>,
    dropped: usize,
    unreliable: bool,
}

fn imputed_values(
    population: &SurveyDataset,
    spec: &PopulationSpec,
    n: usize,
    method: Method,
    streams: &ReplicateStreams,
) -> Result<(MaskedSample, Values)> {
    let masked = masked_replicate(population, spec, n, streams)?;
    let values = parameter_values(
        method
            .run(&masked.data, streams.imputation)
            .and_then(|o| imputed_proportions(&o.data)),
    );
    Ok((masked, values))
}

pub fn run_variance_study(config: &StudyConfig) -> Result<StudyReport> {
    config.validate()?;
    let settings = config
        .bootstrap
        .clone()
        .ok_or_else(|| Error::InvalidConfig("missing [bootstrap] section".into()))?;
    let boot = config.bootstrap_config()?;
    let spec = config.spec();
    let population = generate_population(&spec)?;
    let truth = truth_values(&population)?;
    let n = config.sample_size;
    let method = settings.method;

    let (main, truth_run) = config.run_in_pool(|| {
        let main = (0..config.replicates as u64)
            .into_par_iter()
            .map(|b| {
                let streams = replicate_streams(config.seed, 0, b);
                let (masked, _) = imputed_values(&population, &spec, n, method, &streams)?;
                let (variances, intervals, dropped, unreliable) =
                    match bootstrap_variance(&masked.data, &boot, streams.bootstrap) {
                        Ok(r) => (
                            std::array::from_fn(|j| r.parameters[j].variance),
                            r.parameters
                                .iter()
                                .map(|p| {
                                    boot.alphas
                                        .iter()
                                        .map(|&a| p.intervals.iter().find(|i| i.alpha == a).map(|i| (i.lower, i.upper)))
                                        .collect()
                                })
                                .collect(),
                            r.dropped,
                            r.unreliable,
                        ),
                        Err(_) => ([None; 4], vec![vec![None; boot.alphas.len()]; 4], boot.replicates, true),
                    };
                Ok(VarianceReplicate {
                    variances,
                    intervals,
                    dropped,
                    unreliable,
                })
            })
            .collect::<Result<Vec<_>>>();
        let truth_run = (0..settings.truth_replicates as u64)
            .into_par_iter()
            .map(|r| imputed_values(&population, &spec, n, method, &replicate_streams(config.seed, 1, r)).map(|x| x.1))
            .collect::<Result<Vec<_>>>();
        (main, truth_run)
    })?;
    let (main, truth_run) = (main?, truth_run?);

    let mut report = empty_report("variance", config, truth.clone());
    report.truth_replicates = Some(settings.truth_replicates);
    report.bootstrap_replicates = Some(boot.replicates);
    report.bootstrap_dropped = main.iter().map(|r| r.dropped).sum();
    report.unreliable_samples = main.iter().filter(|r| r.unreliable).count();
    for (j, pv) in truth.iter().enumerate() {
        let mc: Vec<f64> = truth_run.iter().filter_map(|v| v[j]).collect();
        let true_variance = sample_variance(&mc).unwrap_or(f64::NAN);
        let vhat: Vec<f64> = main.iter().filter_map(|r| r.variances[j]).collect();
        let mean_variance = if vhat.is_empty() {
            f64::NAN
        } else {
            vhat.iter().sum::<f64>() / vhat.len() as f64
        };
        let rates = boot
            .alphas
            .iter()
            .enumerate()
            .map(|(a, &alpha)| {
                let cis: Vec<(f64, f64)> = main.iter().filter_map(|r| r.intervals[j][a]).collect();
                let count = cis.len().max(1) as f64;
                let lower = 100.0 * cis.iter().filter(|ci| pv.value < ci.0).count() as f64 / count;
                let upper = 100.0 * cis.iter().filter(|ci| pv.value > ci.1).count() as f64 / count;
                ErrorRates {
                    alpha,
                    lower,
                    upper,
                    two_sided: lower + upper,
                    intervals: cis.len(),
                }
            })
            .collect();
        report.variance.push(VarianceRow {
            parameter: pv.parameter,
            true_variance,
            mean_variance,
            rb: relative_bias(&vhat, true_variance).ok().filter(|v| v.is_finite()),
            rates,
            used: vhat.len(),
        });
    }
    Ok(report)
}
