//! Rescaled bootstrap variance estimation for imputed estimators.
//!
//! Replicates resample the units with replacement and rescale the weights
//! with a finite-population correction. Each replicate re-evaluates the
//! closed-form conditional expectations of the imputed estimators
//! ([`tilde_from_estimates`]) instead of imputing again, so no replicate
//! consumes randomness beyond the resampling itself.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::RngStream;
use crate::error::{Error, Result};
use crate::estimators::{tilde_from_estimates, CellEstimates, Parameter, TallyLayout};
use crate::survey::SurveyDataset;

/// Share of dropped replicates above which a variance is flagged.
pub const UNRELIABLE_DROP_SHARE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    /// Resample size `n'`; the sample size when absent.
    #[serde(default)]
    pub n_prime: Option<usize>,
    /// Number of replicates `C`.
    pub replicates: usize,
    /// Tail probabilities of the percentile intervals.
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
}

fn default_alphas() -> Vec<f64> {
    vec![0.025, 0.05]
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::TooFewReplicates(format!(
                "{} bootstrap replicates, need at least 2",
                self.replicates
            )));
        }
        if self.n_prime == Some(0) {
            return Err(Error::InvalidConfig("n_prime must be positive".into()));
        }
        for &a in &self.alphas {
            if !(a > 0.0 && a < 0.5) {
                return Err(Error::InvalidConfig(format!("alpha {a} outside (0, 0.5)")));
            }
            percentile_ranks(self.replicates, a)?;
        }
        Ok(())
    }
}

/// `C_r = n' (1 - n/N) / (n - 1)`.
pub fn rescale_constant(n: usize, n_prime: usize, population_size: u64) -> Result<f64> {
    if n < 2 {
        return Err(Error::NotSrswor(format!("sample size {n} < 2")));
    }
    Ok(n_prime as f64 * (1.0 - n as f64 / population_size as f64) / (n as f64 - 1.0))
}

/// `w*_i = w_i {1 + sqrt(C_r) (n m*_i / n' - 1)}`; negative values are kept.
pub fn rescaled_weights(
    weights: &[f64],
    multiplicities: &[u32],
    n_prime: usize,
    population_size: u64,
) -> Result<Vec<f64>> {
    let n = weights.len();
    let root = rescale_constant(n, n_prime, population_size)?.sqrt();
    Ok(weights
        .iter()
        .zip(multiplicities)
        .map(|(&w, &m)| w * (1.0 + root * (n as f64 * m as f64 / n_prime as f64 - 1.0)))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RwyReplicate {
    pub multiplicities: Vec<u32>,
    pub weights: Vec<f64>,
}

fn check_srswor(data: &SurveyDataset) -> Result<()> {
    let n = data.len();
    if n < 2 {
        return Err(Error::NotSrswor(format!("sample size {n} < 2")));
    }
    let expect = data.population_size() as f64 / n as f64;
    if let Some(u) = data.units().iter().find(|u| (u.weight - expect).abs() > 1e-9 * expect) {
        return Err(Error::NotSrswor(format!(
            "unit {} has weight {} but N/n = {expect}",
            u.id, u.weight
        )));
    }
    Ok(())
}

fn draw_replicate<R: Rng + ?Sized>(
    weights: &[f64],
    n_prime: usize,
    population_size: u64,
    rng: &mut R,
) -> Result<RwyReplicate> {
    let n = weights.len();
    let mut multiplicities = vec![0u32; n];
    for _ in 0..n_prime {
        multiplicities[rng.gen_range(0..n)] += 1;
    }
    let weights = rescaled_weights(weights, &multiplicities, n_prime, population_size)?;
    Ok(RwyReplicate {
        multiplicities,
        weights,
    })
}

/// One replicate: `n'` uniform draws with replacement, then rescaled weights.
pub fn rwy_weights<R: Rng + ?Sized>(data: &SurveyDataset, n_prime: Option<usize>, rng: &mut R) -> Result<RwyReplicate> {
    check_srswor(data)?;
    draw_replicate(
        &data.weights(),
        n_prime.unwrap_or(data.len()),
        data.population_size(),
        rng,
    )
}

/// 1-based ranks `(ceil(alpha B), floor((1 - alpha) B))`.
pub fn percentile_ranks(b: usize, alpha: f64) -> Result<(usize, usize)> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} outside (0, 0.5)")));
    }
    if alpha * (b as f64) < 1.0 - 1e-9 {
        return Err(Error::TooFewReplicates(format!(
            "{b} replicates, need at least 1/alpha = {}",
            1.0 / alpha
        )));
    }
    // the products are integral in exact arithmetic for the usual B and alpha
    let lo = (alpha * b as f64 - 1e-9).ceil() as usize;
    let hi = ((1.0 - alpha) * b as f64 + 1e-9).floor() as usize;
    if lo < 1 || hi < lo || hi > b {
        return Err(Error::TooFewReplicates(format!(
            "{b} replicates cannot give a percentile interval at alpha {alpha}"
        )));
    }
    Ok((lo, hi))
}

/// Percentile interval from replicate statistics.
pub fn percentile_ci(stats: &[f64], alpha: f64) -> Result<(f64, f64)> {
    let (lo, hi) = percentile_ranks(stats.len(), alpha)?;
    let mut sorted = stats.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((sorted[lo - 1], sorted[hi - 1]))
}

/// Sample variance with divisor `C - 1`.
pub fn sample_variance(stats: &[f64]) -> Result<f64> {
    let c = stats.len();
    if c < 2 {
        return Err(Error::TooFewReplicates(format!("{c} replicate statistics")));
    }
    let mean = stats.iter().sum::<f64>() / c as f64;
    Ok(stats.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (c as f64 - 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Interval {
    pub alpha: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterVariance {
    pub parameter: Parameter,
    /// Tilde estimate on the original weights.
    pub estimate: f64,
    /// Absent when fewer than two replicates produced the statistic.
    pub variance: Option<f64>,
    /// Only levels the usable replicate count supports.
    pub intervals: Vec<Interval>,
    /// Replicates contributing to this parameter.
    pub used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult {
    pub replicates: usize,
    pub n_prime: usize,
    /// Replicates whose estimates could not be formed.
    pub dropped: usize,
    /// Replicates that kept their proportions but had an undefined odds ratio.
    pub odds_ratio_excluded: usize,
    pub unreliable: bool,
    pub parameters: Vec<ParameterVariance>,
}

fn tilde_stats(layout: &TallyLayout, weights: &[f64], population_size: u64) -> Option<[Option<f64>; 4]> {
    let est = CellEstimates::from_tally(&layout.tally(weights));
    let table = tilde_from_estimates(&est, population_size).ok()?;
    Some(Parameter::ALL.map(|p| p.value(&table).ok().filter(|v| v.is_finite())))
}

/// Bootstrap variances and percentile intervals of the tilde estimators of
/// `p1.`, `p.1`, `p11` and the odds ratio. Replicate `c` draws from
/// `stream.substream(c)`, so results do not depend on scheduling.
pub fn bootstrap_variance(
    data: &SurveyDataset,
    config: &BootstrapConfig,
    stream: RngStream,
) -> Result<BootstrapResult> {
    config.validate()?;
    check_srswor(data)?;
    if data.k() != 2 || data.l() != 2 {
        return Err(Error::NotTwoByTwo {
            k: data.k() as u32,
            l: data.l() as u32,
        });
    }
    let layout = TallyLayout::new(data);
    let weights = data.weights();
    let n_prime = config.n_prime.unwrap_or(data.len());
    let big_n = data.population_size();
    let full = tilde_from_estimates(&CellEstimates::from_tally(&layout.tally(&weights)), big_n)?;

    let reps: Vec<Option<[Option<f64>; 4]>> = (0..config.replicates as u64)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream.substream(c).rng();
            let rep = draw_replicate(&weights, n_prime, big_n, &mut rng).expect("validated sample");
            tilde_stats(&layout, &rep.weights, big_n)
        })
        .collect();
    summarize(&reps, &full, config, n_prime)
}

fn summarize(
    reps: &[Option<[Option<f64>; 4]>],
    full: &crate::estimators::ProportionTable,
    config: &BootstrapConfig,
    n_prime: usize,
) -> Result<BootstrapResult> {
    let dropped = reps.iter().filter(|r| r.is_none()).count();
    let kept: Vec<&[Option<f64>; 4]> = reps.iter().flatten().collect();
    let odds_ratio_excluded = kept.iter().filter(|r| r[3].is_none()).count();
    let mut parameters = Vec::with_capacity(4);
    for (j, p) in Parameter::ALL.into_iter().enumerate() {
        let stats: Vec<f64> = kept.iter().filter_map(|r| r[j]).collect();
        let variance = sample_variance(&stats).ok();
        let intervals = config
            .alphas
            .iter()
            .filter_map(|&alpha| {
                let (lower, upper) = percentile_ci(&stats, alpha).ok()?;
                Some(Interval { alpha, lower, upper })
            })
            .collect();
        let estimate = p.value(full).unwrap_or(f64::NAN);
        parameters.push(ParameterVariance {
            parameter: p,
            estimate,
            variance,
            intervals,
            used: stats.len(),
        });
    }
    Ok(BootstrapResult {
        replicates: reps.len(),
        n_prime,
        dropped,
        odds_ratio_excluded,
        unreliable: dropped as f64 > UNRELIABLE_DROP_SHARE * reps.len() as f64,
        parameters,
    })
}
