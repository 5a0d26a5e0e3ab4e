//! Point estimators of marginal and joint proportions.
//!
//! Every estimator here is a function of per-class weighted counts: the
//! complete-case table of `rr` units, the `x` counts of `rm` units, the `y`
//! counts of `mr` units and the `mm` mass. [`Tally`] collects them in one
//! pass, which also lets the bootstrap re-evaluate the deterministic
//! (tilde) estimators under replicate weights without touching the units.
//!
//! Class-level conditional and cell estimates can have empty denominators.
//! They are resolved by a fixed ladder, recorded as a [`Source`]:
//! class conditional, then class marginal, then respondents pooled over all
//! classes, then uniform. Reaching the uniform rung for a quantity that is
//! actually multiplied by nonrespondent mass is an error
//! ([`Error::NoDonorInformation`]).

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::popgen::{cell_probabilities, odds_ratio, CellProbabilities, PopulationSpec};
use crate::survey::SurveyDataset;

/// Denominator of a proportion table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scale {
    /// Divided by the known population size `N`.
    OfN,
    /// Divided by an estimated respondent total.
    OfNhat,
}

/// `K x L` joint proportions with marginals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProportionTable {
    k: usize,
    l: usize,
    joint: Vec<f64>,
    marginal_x: Vec<f64>,
    marginal_y: Vec<f64>,
    scale: Scale,
}

impl ProportionTable {
    /// Marginals are the row and column sums of `joint` (row-major `k*L + l`).
    pub fn from_joint(k: usize, l: usize, joint: Vec<f64>, scale: Scale) -> Self {
        assert_eq!(joint.len(), k * l);
        let mut marginal_x = vec![0.0; k];
        let mut marginal_y = vec![0.0; l];
        for a in 0..k {
            for b in 0..l {
                marginal_x[a] += joint[a * l + b];
            }
        }
        for b in 0..l {
            for a in 0..k {
                marginal_y[b] += joint[a * l + b];
            }
        }
        Self {
            k,
            l,
            joint,
            marginal_x,
            marginal_y,
            scale,
        }
    }

    /// For estimator families whose marginal estimators are not sums of
    /// their joint estimator (available-case families).
    pub fn with_margins(
        k: usize,
        l: usize,
        joint: Vec<f64>,
        marginal_x: Vec<f64>,
        marginal_y: Vec<f64>,
        scale: Scale,
    ) -> Self {
        assert_eq!(joint.len(), k * l);
        assert_eq!(marginal_x.len(), k);
        assert_eq!(marginal_y.len(), l);
        Self {
            k,
            l,
            joint,
            marginal_x,
            marginal_y,
            scale,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn joint(&self, k: usize, l: usize) -> f64 {
        self.joint[k * self.l + l]
    }

    pub fn joint_cells(&self) -> &[f64] {
        &self.joint
    }

    pub fn marginal_x(&self, k: usize) -> f64 {
        self.marginal_x[k]
    }

    pub fn marginal_y(&self, l: usize) -> f64 {
        self.marginal_y[l]
    }

    pub fn marginals_x(&self) -> &[f64] {
        &self.marginal_x
    }

    pub fn marginals_y(&self) -> &[f64] {
        &self.marginal_y
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    /// Largest gap between a stored marginal and the corresponding joint sum.
    pub fn margin_gap(&self) -> f64 {
        let derived = Self::from_joint(self.k, self.l, self.joint.clone(), self.scale);
        let gx = self
            .marginal_x
            .iter()
            .zip(&derived.marginal_x)
            .map(|(a, b)| (a - b).abs());
        let gy = self
            .marginal_y
            .iter()
            .zip(&derived.marginal_y)
            .map(|(a, b)| (a - b).abs());
        gx.chain(gy).fold(0.0, f64::max)
    }

    pub fn cells_2x2(&self) -> Result<CellProbabilities> {
        if self.k != 2 || self.l != 2 {
            return Err(Error::NotTwoByTwo {
                k: self.k as u32,
                l: self.l as u32,
            });
        }
        Ok(CellProbabilities {
            p00: self.joint(0, 0),
            p01: self.joint(0, 1),
            p10: self.joint(1, 0),
            p11: self.joint(1, 1),
        })
    }
}

/// Scalar parameters of a 2x2 table reported by the studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Parameter {
    #[serde(rename = "p1.")]
    P1Dot,
    #[serde(rename = "p.1")]
    PDot1,
    #[serde(rename = "p11")]
    P11,
    #[serde(rename = "OR")]
    OddsRatio,
}

impl Parameter {
    pub const ALL: [Parameter; 4] = [Parameter::P1Dot, Parameter::PDot1, Parameter::P11, Parameter::OddsRatio];

    pub fn name(self) -> &'static str {
        match self {
            Parameter::P1Dot => "p1.",
            Parameter::PDot1 => "p.1",
            Parameter::P11 => "p11",
            Parameter::OddsRatio => "OR",
        }
    }

    /// Value of the parameter in `table`; the odds ratio uses the joint cells.
    pub fn value(self, table: &ProportionTable) -> Result<f64> {
        match self {
            Parameter::P1Dot => Ok(table.marginal_x(1)),
            Parameter::PDot1 => Ok(table.marginal_y(1)),
            Parameter::P11 => Ok(table.joint(1, 1)),
            Parameter::OddsRatio => or_plugin(table),
        }
    }
}

/// Plug-in odds ratio from the joint cells of a 2x2 table.
pub fn or_plugin(table: &ProportionTable) -> Result<f64> {
    odds_ratio(&table.cells_2x2()?)
}

/// Weighted counts of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTally {
    /// `rr` units by `(x, y)`, row-major.
    pub rr: Vec<f64>,
    /// `rm` units by `x`.
    pub rm: Vec<f64>,
    /// `mr` units by `y`.
    pub mr: Vec<f64>,
    pub mm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tally {
    pub k: usize,
    pub l: usize,
    pub classes: BTreeMap<u32, ClassTally>,
}

impl Tally {
    /// Tallies the `x`/`y` items of `data` under `weights` (one per unit).
    pub fn new(data: &SurveyDataset, weights: &[f64]) -> Self {
        TallyLayout::new(data).tally(weights)
    }

    pub fn of(data: &SurveyDataset) -> Self {
        Self::new(data, &data.weights())
    }
}

/// Where each unit's weight lands in a [`Tally`]; lets repeated tallies
/// under different weights skip the pattern logic.
#[derive(Debug, Clone)]
pub struct TallyLayout {
    k: usize,
    l: usize,
    classes: Vec<u32>,
    slots: Vec<usize>,
}

impl TallyLayout {
    pub fn new(data: &SurveyDataset) -> Self {
        let (k, l) = (data.k(), data.l());
        let classes = data.classes();
        let block = k * l + k + l + 1;
        let slots = data
            .units()
            .iter()
            .map(|u| {
                let base = classes.binary_search(&u.class).expect("class listed") * block;
                base + match (u.x, u.y) {
                    (Some(a), Some(b)) => a as usize * l + b as usize,
                    (Some(a), None) => k * l + a as usize,
                    (None, Some(b)) => k * l + k + b as usize,
                    (None, None) => k * l + k + l,
                }
            })
            .collect();
        Self { k, l, classes, slots }
    }

    pub fn tally(&self, weights: &[f64]) -> Tally {
        assert_eq!(weights.len(), self.slots.len());
        let (k, l) = (self.k, self.l);
        let block = k * l + k + l + 1;
        let mut flat = vec![0.0; block * self.classes.len()];
        for (&s, &w) in self.slots.iter().zip(weights) {
            flat[s] += w;
        }
        let classes = self
            .classes
            .iter()
            .zip(flat.chunks_exact(block))
            .map(|(&g, b)| {
                let t = ClassTally {
                    rr: b[..k * l].to_vec(),
                    rm: b[k * l..k * l + k].to_vec(),
                    mr: b[k * l + k..k * l + k + l].to_vec(),
                    mm: b[k * l + k + l],
                };
                (g, t)
            })
            .collect();
        Tally { k, l, classes }
    }
}

/// Weight totals of a class by response pattern.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PatternTotals {
    pub all: f64,
    pub rr: f64,
    pub rm: f64,
    pub mr: f64,
    pub mm: f64,
    /// Respondents to `x`: `rr + rm`.
    pub r_dot: f64,
    /// Respondents to `y`: `rr + mr`.
    pub dot_r: f64,
}

impl PatternTotals {
    fn of(t: &ClassTally) -> Self {
        let rr: f64 = t.rr.iter().sum();
        let rm: f64 = t.rm.iter().sum();
        let mr: f64 = t.mr.iter().sum();
        Self {
            all: rr + rm + mr + t.mm,
            rr,
            rm,
            mr,
            mm: t.mm,
            r_dot: rr + rm,
            dot_r: rr + mr,
        }
    }
}

/// Which rung of the fallback ladder produced a distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Source {
    Class,
    ClassMarginal,
    Pooled,
    Uniform,
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::Class => "class",
            Source::ClassMarginal => "class_marginal",
            Source::Pooled => "pooled",
            Source::Uniform => "uniform",
        }
    }
}

/// A resolved probability distribution and its provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Law {
    pub probs: Vec<f64>,
    pub source: Source,
}

impl Law {
    fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
            source: Source::Uniform,
        }
    }
}

pub(crate) fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = v.iter().sum();
    if total == 0.0 || !total.is_finite() {
        None
    } else {
        Some(v.iter().map(|a| a / total).collect())
    }
}

fn ladder(candidates: [(Option<Vec<f64>>, Source); 4], n: usize) -> Law {
    candidates
        .into_iter()
        .find_map(|(p, source)| p.map(|probs| Law { probs, source }))
        .unwrap_or_else(|| Law::uniform(n))
}

fn row_sums(t: &[f64], k: usize, l: usize) -> Vec<f64> {
    (0..k).map(|a| t[a * l..(a + 1) * l].iter().sum()).collect()
}

fn col_sums(t: &[f64], k: usize, l: usize) -> Vec<f64> {
    (0..l).map(|b| (0..k).map(|a| t[a * l + b]).sum()).collect()
}

fn row(t: &[f64], l: usize, a: usize) -> Vec<f64> {
    t[a * l..(a + 1) * l].to_vec()
}

fn col(t: &[f64], k: usize, l: usize, b: usize) -> Vec<f64> {
    (0..k).map(|a| t[a * l + b]).collect()
}

/// Class-level cell, marginal and conditional estimates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassEstimates {
    pub class: u32,
    pub totals: PatternTotals,
    /// `p_{kl,cc}`, row-major.
    pub joint_cc: Law,
    pub x_cc: Law,
    pub y_cc: Law,
    pub x_ac: Law,
    pub y_ac: Law,
    /// `x_given_y[l]` is the law of `x` given `y = l` among complete cases.
    pub x_given_y: Vec<Law>,
    /// `y_given_x[k]` is the law of `y` given `x = k` among complete cases.
    pub y_given_x: Vec<Law>,
    /// Weighted `mr` counts by `y`.
    pub mr_by_y: Vec<f64>,
    /// Weighted `rm` counts by `x`.
    pub rm_by_x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FallbackFlag {
    pub class: u32,
    pub quantity: String,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellEstimates {
    pub k: usize,
    pub l: usize,
    pub classes: BTreeMap<u32, ClassEstimates>,
}

impl CellEstimates {
    pub fn from_tally(tally: &Tally) -> Self {
        let (k, l) = (tally.k, tally.l);
        let mut pooled_rr = vec![0.0; k * l];
        let mut pooled_xac = vec![0.0; k];
        let mut pooled_yac = vec![0.0; l];
        for t in tally.classes.values() {
            for (p, v) in pooled_rr.iter_mut().zip(&t.rr) {
                *p += v;
            }
            let rs = row_sums(&t.rr, k, l);
            let cs = col_sums(&t.rr, k, l);
            for a in 0..k {
                pooled_xac[a] += rs[a] + t.rm[a];
            }
            for b in 0..l {
                pooled_yac[b] += cs[b] + t.mr[b];
            }
        }
        let pooled_x = normalized(&row_sums(&pooled_rr, k, l));
        let pooled_y = normalized(&col_sums(&pooled_rr, k, l));

        let classes = tally
            .classes
            .iter()
            .map(|(&g, t)| {
                let rs = row_sums(&t.rr, k, l);
                let cs = col_sums(&t.rr, k, l);
                let class_x = normalized(&rs);
                let class_y = normalized(&cs);
                let joint_cc = ladder(
                    [
                        (normalized(&t.rr), Source::Class),
                        (None, Source::ClassMarginal),
                        (normalized(&pooled_rr), Source::Pooled),
                        (None, Source::Pooled),
                    ],
                    k * l,
                );
                let x_cc = ladder(
                    [
                        (class_x.clone(), Source::Class),
                        (None, Source::ClassMarginal),
                        (pooled_x.clone(), Source::Pooled),
                        (None, Source::Pooled),
                    ],
                    k,
                );
                let y_cc = ladder(
                    [
                        (class_y.clone(), Source::Class),
                        (None, Source::ClassMarginal),
                        (pooled_y.clone(), Source::Pooled),
                        (None, Source::Pooled),
                    ],
                    l,
                );
                let xac: Vec<f64> = (0..k).map(|a| rs[a] + t.rm[a]).collect();
                let yac: Vec<f64> = (0..l).map(|b| cs[b] + t.mr[b]).collect();
                let x_ac = ladder(
                    [
                        (normalized(&xac), Source::Class),
                        (None, Source::ClassMarginal),
                        (normalized(&pooled_xac), Source::Pooled),
                        (None, Source::Pooled),
                    ],
                    k,
                );
                let y_ac = ladder(
                    [
                        (normalized(&yac), Source::Class),
                        (None, Source::ClassMarginal),
                        (normalized(&pooled_yac), Source::Pooled),
                        (None, Source::Pooled),
                    ],
                    l,
                );
                let x_given_y = (0..l)
                    .map(|b| {
                        ladder(
                            [
                                (normalized(&col(&t.rr, k, l, b)), Source::Class),
                                (class_x.clone(), Source::ClassMarginal),
                                (normalized(&col(&pooled_rr, k, l, b)), Source::Pooled),
                                (pooled_x.clone(), Source::Pooled),
                            ],
                            k,
                        )
                    })
                    .collect();
                let y_given_x = (0..k)
                    .map(|a| {
                        ladder(
                            [
                                (normalized(&row(&t.rr, l, a)), Source::Class),
                                (class_y.clone(), Source::ClassMarginal),
                                (normalized(&row(&pooled_rr, l, a)), Source::Pooled),
                                (pooled_y.clone(), Source::Pooled),
                            ],
                            l,
                        )
                    })
                    .collect();
                let est = ClassEstimates {
                    class: g,
                    totals: PatternTotals::of(t),
                    joint_cc,
                    x_cc,
                    y_cc,
                    x_ac,
                    y_ac,
                    x_given_y,
                    y_given_x,
                    mr_by_y: t.mr.clone(),
                    rm_by_x: t.rm.clone(),
                };
                (g, est)
            })
            .collect();
        Self { k, l, classes }
    }

    /// Every resolved quantity that did not come from its own class.
    pub fn fallbacks(&self) -> Vec<FallbackFlag> {
        let mut out = Vec::new();
        for (&g, c) in &self.classes {
            let mut push = |quantity: String, law: &Law| {
                if law.source != Source::Class {
                    out.push(FallbackFlag {
                        class: g,
                        quantity,
                        source: law.source,
                    });
                }
            };
            push("p_kl_cc".into(), &c.joint_cc);
            push("p_k_cc".into(), &c.x_cc);
            push("p_l_cc".into(), &c.y_cc);
            push("p_k_ac".into(), &c.x_ac);
            push("p_l_ac".into(), &c.y_ac);
            for (b, law) in c.x_given_y.iter().enumerate() {
                push(format!("p_k|l={b}"), law);
            }
            for (a, law) in c.y_given_x.iter().enumerate() {
                push(format!("p_l|k={a}"), law);
            }
        }
        out
    }
}

impl ClassEstimates {
    /// Fails when a conditional or cell law used for the class's
    /// nonrespondents bottomed out at the uniform rung.
    pub fn check_joint_laws(&self) -> Result<()> {
        let bottomed = |law: &Law| law.source == Source::Uniform;
        let bad = (self.totals.mm != 0.0 && (bottomed(&self.joint_cc) || bottomed(&self.x_cc) || bottomed(&self.y_cc)))
            || self
                .mr_by_y
                .iter()
                .zip(&self.x_given_y)
                .any(|(&m, law)| m != 0.0 && bottomed(law))
            || self
                .rm_by_x
                .iter()
                .zip(&self.y_given_x)
                .any(|(&m, law)| m != 0.0 && bottomed(law));
        if bad {
            Err(Error::NoDonorInformation { class: self.class })
        } else {
            Ok(())
        }
    }

    /// As [`check_joint_laws`](Self::check_joint_laws) for marginal
    /// (available-case) imputation.
    pub fn check_marginal_laws(&self) -> Result<()> {
        let bottomed = |law: &Law| law.source == Source::Uniform;
        let bad = (self.totals.mm != 0.0 && bottomed(&self.joint_cc))
            || (self.totals.mr != 0.0 && bottomed(&self.x_ac))
            || (self.totals.rm != 0.0 && bottomed(&self.y_ac));
        if bad {
            Err(Error::NoDonorInformation { class: self.class })
        } else {
            Ok(())
        }
    }
}

pub fn cell_estimates(data: &SurveyDataset) -> CellEstimates {
    CellEstimates::from_tally(&Tally::of(data))
}

pub fn cell_estimates_with_weights(data: &SurveyDataset, weights: &[f64]) -> CellEstimates {
    CellEstimates::from_tally(&Tally::new(data, weights))
}

fn require_complete(data: &SurveyDataset) -> Result<()> {
    match data.units().iter().find(|u| u.x.is_none() || u.y.is_none()) {
        Some(u) => Err(Error::MissingValue { id: u.id }),
        None => Ok(()),
    }
}

/// Horvitz-Thompson proportions of a fully observed sample.
pub fn ht_proportions(data: &SurveyDataset) -> Result<ProportionTable> {
    require_complete(data)?;
    let (k, l) = (data.k(), data.l());
    let n = data.population_size() as f64;
    let mut joint = vec![0.0; k * l];
    for u in data.units() {
        if let (Some(a), Some(b)) = (u.x, u.y) {
            joint[a as usize * l + b as usize] += u.weight;
        }
    }
    joint.iter_mut().for_each(|v| *v /= n);
    Ok(ProportionTable::from_joint(k, l, joint, Scale::OfN))
}

/// Proportions of an imputed (completed) dataset; identical to
/// [`ht_proportions`] on the filled-in values.
pub fn imputed_proportions(completed: &SurveyDataset) -> Result<ProportionTable> {
    ht_proportions(completed)
}

fn pooled_rr(tally: &Tally) -> Vec<f64> {
    let mut p = vec![0.0; tally.k * tally.l];
    for t in tally.classes.values() {
        for (a, v) in p.iter_mut().zip(&t.rr) {
            *a += v;
        }
    }
    p
}

/// Complete-case estimators.
pub fn cc_estimators(data: &SurveyDataset) -> Result<ProportionTable> {
    let tally = Tally::of(data);
    let rr = pooled_rr(&tally);
    let joint = normalized(&rr).ok_or(Error::ZeroDenominator("no complete cases"))?;
    Ok(ProportionTable::from_joint(tally.k, tally.l, joint, Scale::OfNhat))
}

fn adjusted_joint(est: &CellEstimates, n: f64) -> Vec<f64> {
    let mut joint = vec![0.0; est.k * est.l];
    for c in est.classes.values() {
        for (j, p) in joint.iter_mut().zip(&c.joint_cc.probs) {
            *j += c.totals.all * p;
        }
    }
    joint.iter_mut().for_each(|v| *v /= n);
    joint
}

/// Adjusted complete-case estimators: class complete-case estimates
/// weighted by estimated class sizes, over the true `N`.
pub fn acc_estimators(data: &SurveyDataset) -> Result<ProportionTable> {
    let tally = Tally::of(data);
    if pooled_rr(&tally).iter().sum::<f64>() == 0.0 {
        return Err(Error::ZeroDenominator("no complete cases"));
    }
    let est = CellEstimates::from_tally(&tally);
    let joint = adjusted_joint(&est, data.population_size() as f64);
    Ok(ProportionTable::from_joint(est.k, est.l, joint, Scale::OfN))
}

/// Available-case estimators. The joint estimator is the complete-case one.
pub fn ac_estimators(data: &SurveyDataset) -> Result<ProportionTable> {
    let tally = Tally::of(data);
    let (k, l) = (tally.k, tally.l);
    let joint = normalized(&pooled_rr(&tally)).ok_or(Error::ZeroDenominator("no complete cases"))?;
    let mut xs = vec![0.0; k];
    let mut ys = vec![0.0; l];
    for t in tally.classes.values() {
        let rs = row_sums(&t.rr, k, l);
        let cs = col_sums(&t.rr, k, l);
        for a in 0..k {
            xs[a] += rs[a] + t.rm[a];
        }
        for b in 0..l {
            ys[b] += cs[b] + t.mr[b];
        }
    }
    let mx = normalized(&xs).ok_or(Error::ZeroDenominator("no respondents to x"))?;
    let my = normalized(&ys).ok_or(Error::ZeroDenominator("no respondents to y"))?;
    Ok(ProportionTable::with_margins(k, l, joint, mx, my, Scale::OfNhat))
}

/// Adjusted available-case estimators.
pub fn aac_estimators(data: &SurveyDataset) -> Result<ProportionTable> {
    let tally = Tally::of(data);
    let ac = ac_estimators(data)?;
    let est = CellEstimates::from_tally(&tally);
    let n = data.population_size() as f64;
    let joint = adjusted_joint(&est, n);
    let mut mx = vec![0.0; est.k];
    let mut my = vec![0.0; est.l];
    for c in est.classes.values() {
        for (m, p) in mx.iter_mut().zip(&c.x_ac.probs) {
            *m += c.totals.all * p;
        }
        for (m, p) in my.iter_mut().zip(&c.y_ac.probs) {
            *m += c.totals.all * p;
        }
    }
    mx.iter_mut().chain(my.iter_mut()).for_each(|v| *v /= n);
    debug_assert_eq!(ac.k(), est.k);
    Ok(ProportionTable::with_margins(est.k, est.l, joint, mx, my, Scale::OfN))
}

/// Expectation of the joint-imputation estimators over the imputation
/// mechanism, given the sample and response sets. Marginals follow their own
/// closed forms; they coincide with the joint sums.
pub fn tilde_from_estimates(est: &CellEstimates, population_size: u64) -> Result<ProportionTable> {
    let (k, l) = (est.k, est.l);
    let n = population_size as f64;
    let mut joint = vec![0.0; k * l];
    let mut mx = vec![0.0; k];
    let mut my = vec![0.0; l];
    for c in est.classes.values() {
        c.check_joint_laws()?;
        let t = &c.totals;
        for a in 0..k {
            // N_mr * p_{k.,mr} and the mr part of the joint
            let mut mr_part = 0.0;
            for b in 0..l {
                mr_part += c.mr_by_y[b] * c.x_given_y[b].probs[a];
            }
            mx[a] += t.r_dot * c.x_ac.probs[a] + mr_part + t.mm * c.x_cc.probs[a];
        }
        for b in 0..l {
            let mut rm_part = 0.0;
            for a in 0..k {
                rm_part += c.rm_by_x[a] * c.y_given_x[a].probs[b];
            }
            my[b] += t.dot_r * c.y_ac.probs[b] + rm_part + t.mm * c.y_cc.probs[b];
        }
        for a in 0..k {
            for b in 0..l {
                joint[a * l + b] += (t.rr + t.mm) * c.joint_cc.probs[a * l + b]
                    + c.mr_by_y[b] * c.x_given_y[b].probs[a]
                    + c.rm_by_x[a] * c.y_given_x[a].probs[b];
            }
        }
    }
    for v in joint.iter_mut().chain(mx.iter_mut()).chain(my.iter_mut()) {
        *v /= n;
    }
    Ok(ProportionTable::with_margins(k, l, joint, mx, my, Scale::OfN))
}

pub fn tilde_estimators(data: &SurveyDataset) -> Result<ProportionTable> {
    tilde_from_estimates(&cell_estimates(data), data.population_size())
}

/// Tilde estimators with the sampling weights replaced by `weights`.
pub fn tilde_with_weights(data: &SurveyDataset, weights: &[f64]) -> Result<ProportionTable> {
    tilde_from_estimates(&cell_estimates_with_weights(data, weights), data.population_size())
}

/// Values of the binary-item parameters `p_{k.}`, `p_{.l}`, `p_{kl}`, or of
/// their biases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinaryParameters {
    pub marginal_x: [f64; 2],
    pub marginal_y: [f64; 2],
    pub joint: [[f64; 2]; 2],
}

impl BinaryParameters {
    fn from_cells(c: &CellProbabilities) -> Self {
        Self {
            marginal_x: [c.p00 + c.p01, c.p10 + c.p11],
            marginal_y: [c.p00 + c.p10, c.p01 + c.p11],
            joint: [[c.p00, c.p01], [c.p10, c.p11]],
        }
    }

    pub fn p1dot(&self) -> f64 {
        self.marginal_x[1]
    }

    pub fn pdot1(&self) -> f64 {
        self.marginal_y[1]
    }

    pub fn p11(&self) -> f64 {
        self.joint[1][1]
    }
}

struct ClassView {
    size: f64,
    params: BinaryParameters,
    phi: [f64; 4],
}

fn class_views(spec: &PopulationSpec) -> Result<Vec<ClassView>> {
    spec.validate()?;
    spec.classes
        .iter()
        .map(|c| {
            Ok(ClassView {
                size: c.size as f64,
                params: BinaryParameters::from_cells(&cell_probabilities(c.p1dot, c.pdot1, c.p11)?),
                phi: c.phi,
            })
        })
        .collect()
}

/// Exact population parameters of a spec.
pub fn population_parameters(spec: &PopulationSpec) -> Result<BinaryParameters> {
    Ok(BinaryParameters::from_cells(&spec.population_cells()?))
}

/// Asymptotic bias of a respondent-based estimator whose response
/// propensity in class `g` is `propensity(phi_g)`.
fn propensity_bias(
    views: &[ClassView],
    truth: f64,
    value: impl Fn(&BinaryParameters) -> f64,
    propensity: impl Fn(&[f64; 4]) -> f64,
) -> f64 {
    let n: f64 = views.iter().map(|v| v.size).sum();
    let mean_phi = views.iter().map(|v| v.size * propensity(&v.phi)).sum::<f64>() / n;
    let num: f64 = views
        .iter()
        .map(|v| v.size * (propensity(&v.phi) - mean_phi) * (value(&v.params) - truth))
        .sum();
    let den: f64 = views.iter().map(|v| v.size * propensity(&v.phi)).sum();
    num / den
}

fn bias_with(
    spec: &PopulationSpec,
    x_prop: impl Fn(&[f64; 4]) -> f64 + Copy,
    y_prop: impl Fn(&[f64; 4]) -> f64 + Copy,
    joint_prop: impl Fn(&[f64; 4]) -> f64 + Copy,
) -> Result<BinaryParameters> {
    let views = class_views(spec)?;
    let truth = population_parameters(spec)?;
    let mut out = BinaryParameters {
        marginal_x: [0.0; 2],
        marginal_y: [0.0; 2],
        joint: [[0.0; 2]; 2],
    };
    for i in 0..2 {
        out.marginal_x[i] = propensity_bias(&views, truth.marginal_x[i], |p| p.marginal_x[i], x_prop);
        out.marginal_y[i] = propensity_bias(&views, truth.marginal_y[i], |p| p.marginal_y[i], y_prop);
        for j in 0..2 {
            out.joint[i][j] = propensity_bias(&views, truth.joint[i][j], |p| p.joint[i][j], joint_prop);
        }
    }
    Ok(out)
}

/// Asymptotic bias of the complete-case estimators.
pub fn bias_cc(spec: &PopulationSpec) -> Result<BinaryParameters> {
    let rr = |p: &[f64; 4]| p[0];
    bias_with(spec, rr, rr, rr)
}

/// Asymptotic bias of the available-case estimators.
pub fn bias_ac(spec: &PopulationSpec) -> Result<BinaryParameters> {
    bias_with(spec, |p| p[0] + p[1], |p| p[0] + p[2], |p| p[0])
}

/// Asymptotic bias of the imputed estimators under marginal random hot-deck
/// imputation with a common donor for `mm` units. Marginals are unbiased.
pub fn bias_rhdi(spec: &PopulationSpec) -> Result<BinaryParameters> {
    let views = class_views(spec)?;
    let n: f64 = views.iter().map(|v| v.size).sum();
    let mut out = BinaryParameters {
        marginal_x: [0.0; 2],
        marginal_y: [0.0; 2],
        joint: [[0.0; 2]; 2],
    };
    for i in 0..2 {
        for j in 0..2 {
            out.joint[i][j] = -views
                .iter()
                .map(|v| {
                    let p = &v.params;
                    v.size * (v.phi[1] + v.phi[2]) * (p.joint[i][j] - p.marginal_x[i] * p.marginal_y[j])
                })
                .sum::<f64>()
                / n;
        }
    }
    Ok(out)
}
