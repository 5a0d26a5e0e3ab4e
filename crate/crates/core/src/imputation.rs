//! Hot-deck imputation: marginal (RHDI), joint (JHDI), balanced joint
//! (BHDI) and three-item joint imputation.
//!
//! Values are drawn at the category level. Drawing a donor with probability
//! proportional to its weight and copying its category has the same law as
//! drawing the category from the weighted respondent distribution, so donor
//! records are never tracked.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cube::{balanced_select, BalancingProblem, Constraint, Priority};
use crate::design::RngStream;
use crate::error::{Error, Result};
use crate::estimators::{cell_estimates, normalized, CellEstimates, ClassEstimates, FallbackFlag, Source};
use crate::survey::{SurveyDataset, Unit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rhdi,
    Jhdi,
    Bhdi,
    Jhdi3,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Rhdi => "rhdi",
            Method::Jhdi => "jhdi",
            Method::Bhdi => "bhdi",
            Method::Jhdi3 => "jhdi3",
        }
    }

    pub fn run(self, data: &SurveyDataset, stream: RngStream) -> Result<ImputationOutcome> {
        match self {
            Method::Rhdi => rhdi(data, stream),
            Method::Jhdi => jhdi(data, stream),
            Method::Bhdi => bhdi(data, stream),
            Method::Jhdi3 => jhdi3(data, stream),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rhdi" => Ok(Method::Rhdi),
            "jhdi" => Ok(Method::Jhdi),
            "bhdi" => Ok(Method::Bhdi),
            "jhdi3" => Ok(Method::Jhdi3),
            other => Err(Error::InvalidConfig(format!("unknown imputation method '{other}'"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Item {
    X,
    Y,
    Z,
}

impl Item {
    pub fn name(self) -> &'static str {
        match self {
            Item::X => "x",
            Item::Y => "y",
            Item::Z => "z",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ImputedValue {
    pub id: u64,
    pub class: u32,
    pub item: Item,
    pub value: u32,
}

/// Nonrespondent groups of a class that are imputed together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PopulationKind {
    /// `x` missing, `y` observed.
    Mr,
    /// `x` observed, `y` missing.
    Rm,
    Mm,
}

impl PopulationKind {
    pub fn name(self) -> &'static str {
        match self {
            PopulationKind::Mr => "mr",
            PopulationKind::Rm => "rm",
            PopulationKind::Mm => "mm",
        }
    }

    fn tag(self) -> u64 {
        match self {
            PopulationKind::Mr => 1,
            PopulationKind::Rm => 2,
            PopulationKind::Mm => 3,
        }
    }
}

/// Balancing residual of one cell population after selection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationResidual {
    pub class: u32,
    pub kind: PopulationKind,
    /// `max_q |sum_selected pi^-1 t_q - sum_all t_q|`.
    pub max_residual: f64,
    /// Balance columns suppressed in landing, as 1-based `q`.
    pub dropped: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ImputationOutcome {
    pub data: SurveyDataset,
    pub imputed: Vec<ImputedValue>,
    /// BHDI only.
    pub residuals: Vec<PopulationResidual>,
    pub fallbacks: Vec<FallbackFlag>,
}

/// 1-based `q` of cell `(k, l)`: `q = k L + l + 1`.
pub fn q_index(k: usize, l: usize, big_l: usize) -> usize {
    k * big_l + l + 1
}

/// Inverse of [`q_index`].
pub fn cell_of_q(q: usize, big_l: usize) -> (usize, usize) {
    ((q - 1) / big_l, (q - 1) % big_l)
}

/// Draws an index from `probs` by inversion of one uniform.
pub(crate) fn draw<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

fn population_stream(stream: RngStream, class: u32, kind: PopulationKind) -> RngStream {
    stream.substream(class as u64 * 8 + kind.tag())
}

struct Imputer {
    units: Vec<Unit>,
    imputed: Vec<ImputedValue>,
}

impl Imputer {
    fn new(data: &SurveyDataset) -> Self {
        Self {
            units: data.units().to_vec(),
            imputed: Vec::new(),
        }
    }

    fn set(&mut self, i: usize, item: Item, value: u32) {
        let u = &mut self.units[i];
        match item {
            Item::X => {
                u.x = Some(value);
                u.imputed.x = true;
            }
            Item::Y => {
                u.y = Some(value);
                u.imputed.y = true;
            }
            Item::Z => {
                u.z = Some(Some(value));
                u.imputed.z = true;
            }
        }
        self.imputed.push(ImputedValue {
            id: u.id,
            class: u.class,
            item,
            value,
        });
    }

    fn finish(
        mut self,
        data: &SurveyDataset,
        residuals: Vec<PopulationResidual>,
        fallbacks: Vec<FallbackFlag>,
    ) -> Result<ImputationOutcome> {
        self.imputed.sort_by_key(|v| (v.id, v.item));
        Ok(ImputationOutcome {
            data: data.with_units(self.units)?,
            imputed: self.imputed,
            residuals,
            fallbacks,
        })
    }
}

/// Unit indices of each two-item nonresponse group, by class.
fn groups(data: &SurveyDataset, class: u32, kind: PopulationKind) -> Vec<usize> {
    data.units()
        .iter()
        .enumerate()
        .filter(|(_, u)| u.class == class)
        .filter(|(_, u)| match kind {
            PopulationKind::Mr => u.x.is_none() && u.y.is_some(),
            PopulationKind::Rm => u.x.is_some() && u.y.is_none(),
            PopulationKind::Mm => u.x.is_none() && u.y.is_none(),
        })
        .map(|(i, _)| i)
        .collect()
}

/// `mm` units get a joint draw from the class complete-case table under both
/// RHDI and JHDI.
fn impute_mm(data: &SurveyDataset, c: &ClassEstimates, stream: RngStream, out: &mut Imputer) {
    let mut rng = population_stream(stream, c.class, PopulationKind::Mm).rng();
    let l = c.y_cc.probs.len();
    for i in groups(data, c.class, PopulationKind::Mm) {
        let cell = draw(&c.joint_cc.probs, &mut rng);
        out.set(i, Item::X, (cell / l) as u32);
        out.set(i, Item::Y, (cell % l) as u32);
    }
}

/// Marginal random hot-deck imputation: single-item nonrespondents draw from
/// the class available-case marginal, `mm` units share one donor cell.
pub fn rhdi(data: &SurveyDataset, stream: RngStream) -> Result<ImputationOutcome> {
    let est = cell_estimates(data);
    let mut out = Imputer::new(data);
    for c in est.classes.values() {
        c.check_marginal_laws()?;
        let mut rng = population_stream(stream, c.class, PopulationKind::Mr).rng();
        for i in groups(data, c.class, PopulationKind::Mr) {
            out.set(i, Item::X, draw(&c.x_ac.probs, &mut rng) as u32);
        }
        let mut rng = population_stream(stream, c.class, PopulationKind::Rm).rng();
        for i in groups(data, c.class, PopulationKind::Rm) {
            out.set(i, Item::Y, draw(&c.y_ac.probs, &mut rng) as u32);
        }
        impute_mm(data, c, stream, &mut out);
    }
    out.finish(data, Vec::new(), est.fallbacks())
}

/// Joint random hot-deck imputation: draws from complete-case conditionals
/// given the observed item.
pub fn jhdi(data: &SurveyDataset, stream: RngStream) -> Result<ImputationOutcome> {
    let est = cell_estimates(data);
    let mut out = Imputer::new(data);
    for c in est.classes.values() {
        c.check_joint_laws()?;
        let mut rng = population_stream(stream, c.class, PopulationKind::Mr).rng();
        for i in groups(data, c.class, PopulationKind::Mr) {
            let y = data.units()[i].y.unwrap() as usize;
            out.set(i, Item::X, draw(&c.x_given_y[y].probs, &mut rng) as u32);
        }
        let mut rng = population_stream(stream, c.class, PopulationKind::Rm).rng();
        for i in groups(data, c.class, PopulationKind::Rm) {
            let x = data.units()[i].x.unwrap() as usize;
            out.set(i, Item::Y, draw(&c.y_given_x[x].probs, &mut rng) as u32);
        }
        impute_mm(data, c, stream, &mut out);
    }
    out.finish(data, Vec::new(), est.fallbacks())
}

/// One candidate imputed value for one nonrespondent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    /// Row (nonrespondent) within the population.
    pub row: usize,
    pub x: u32,
    pub y: u32,
    pub pi: f64,
    /// 0-based position of the single nonzero entry of `t` (`q - 1`).
    pub t_index: usize,
    /// That entry, `w_i * pi`.
    pub t_value: f64,
}

/// Cells of one `(class, kind)` group: `width` candidate cells per row,
/// stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellPopulation {
    pub class: u32,
    pub kind: PopulationKind,
    /// Dataset indices of the nonrespondents.
    pub rows: Vec<usize>,
    pub row_ids: Vec<u64>,
    pub width: usize,
    pub cells: Vec<Cell>,
    pub k: usize,
    pub l: usize,
}

impl CellPopulation {
    pub fn row_cells(&self, row: usize) -> &[Cell] {
        &self.cells[row * self.width..(row + 1) * self.width]
    }

    /// Dense balancing vector `t` of length `K L` for a cell.
    pub fn t_vector(&self, cell: &Cell) -> Vec<f64> {
        let mut t = vec![0.0; self.k * self.l];
        t[cell.t_index] = cell.t_value;
        t
    }

    /// `sum over all cells of t`, the balancing target.
    pub fn t_total(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.k * self.l];
        for c in &self.cells {
            t[c.t_index] += c.t_value;
        }
        t
    }

    /// Row-indicator constraints first (never dropped), then one balance
    /// column per `q`, dropped from the highest `q` down.
    pub fn balancing_problem(&self, weights: &[f64]) -> Result<BalancingProblem> {
        let pi = self.cells.iter().map(|c| c.pi).collect();
        let mut constraints: Vec<Constraint> = (0..self.rows.len())
            .map(|r| Constraint {
                coefficients: (r * self.width..(r + 1) * self.width).map(|m| (m, 1.0)).collect(),
                priority: Priority::Required,
            })
            .collect();
        let mut columns = vec![Vec::new(); self.k * self.l];
        for (m, c) in self.cells.iter().enumerate() {
            // pi^-1 t is w on the cell's coordinate, and undefined (never selected) when pi = 0
            if c.pi > 0.0 {
                columns[c.t_index].push((m, weights[c.row]));
            }
        }
        constraints.extend(columns.into_iter().enumerate().map(|(q0, coefficients)| Constraint {
            coefficients,
            priority: Priority::Droppable(q0 as u32 + 1),
        }));
        Ok(BalancingProblem::new(pi, constraints)?)
    }
}

fn build_population(data: &SurveyDataset, c: &ClassEstimates, kind: PopulationKind) -> Option<CellPopulation> {
    let rows = groups(data, c.class, kind);
    if rows.is_empty() {
        return None;
    }
    let (k, l) = (data.k(), data.l());
    let width = match kind {
        PopulationKind::Mr => k,
        PopulationKind::Rm => l,
        PopulationKind::Mm => k * l,
    };
    let mut cells = Vec::with_capacity(rows.len() * width);
    for (r, &i) in rows.iter().enumerate() {
        let u = &data.units()[i];
        for j in 0..width {
            let (x, y, pi) = match kind {
                PopulationKind::Mr => {
                    let y = u.y.unwrap() as usize;
                    (j, y, c.x_given_y[y].probs[j])
                }
                PopulationKind::Rm => {
                    let x = u.x.unwrap() as usize;
                    (x, j, c.y_given_x[x].probs[j])
                }
                PopulationKind::Mm => (j / l, j % l, c.joint_cc.probs[j]),
            };
            cells.push(Cell {
                row: r,
                x: x as u32,
                y: y as u32,
                pi,
                t_index: q_index(x, y, l) - 1,
                t_value: u.weight * pi,
            });
        }
    }
    Some(CellPopulation {
        class: c.class,
        kind,
        row_ids: rows.iter().map(|&i| data.units()[i].id).collect(),
        rows,
        width,
        cells,
        k,
        l,
    })
}

fn populations_from(data: &SurveyDataset, est: &CellEstimates) -> Result<Vec<CellPopulation>> {
    let mut out = Vec::new();
    for c in est.classes.values() {
        c.check_joint_laws()?;
        for kind in [PopulationKind::Mr, PopulationKind::Rm, PopulationKind::Mm] {
            out.extend(build_population(data, c, kind));
        }
    }
    Ok(out)
}

/// One cell population per nonempty `(class, kind)`, with selection
/// probabilities from the complete-case conditional and joint estimates.
pub fn build_cell_populations(data: &SurveyDataset) -> Result<Vec<CellPopulation>> {
    populations_from(data, &cell_estimates(data))
}

/// Balanced joint hot-deck imputation: each cell population is sampled by
/// the cube method so that exactly one cell per row is selected and the
/// selected `pi^-1 t` reproduce the `t` totals, up to reported residuals.
pub fn bhdi(data: &SurveyDataset, stream: RngStream) -> Result<ImputationOutcome> {
    let est = cell_estimates(data);
    let pops = populations_from(data, &est)?;
    let mut out = Imputer::new(data);
    let mut residuals = Vec::with_capacity(pops.len());
    for pop in &pops {
        let weights: Vec<f64> = pop.rows.iter().map(|&i| data.units()[i].weight).collect();
        let problem = pop.balancing_problem(&weights)?;
        let mut rng = population_stream(stream, pop.class, pop.kind).rng();
        let sel = balanced_select(&problem, &mut rng)?;
        let n_rows = pop.rows.len();
        for (r, &i) in pop.rows.iter().enumerate() {
            let chosen = pop
                .row_cells(r)
                .iter()
                .zip(&sel.selected[r * pop.width..(r + 1) * pop.width])
                .find(|(_, &s)| s)
                .map(|(c, _)| *c)
                .expect("one cell per row");
            match pop.kind {
                PopulationKind::Mr => out.set(i, Item::X, chosen.x),
                PopulationKind::Rm => out.set(i, Item::Y, chosen.y),
                PopulationKind::Mm => {
                    out.set(i, Item::X, chosen.x);
                    out.set(i, Item::Y, chosen.y);
                }
            }
        }
        residuals.push(PopulationResidual {
            class: pop.class,
            kind: pop.kind,
            max_residual: sel.residuals[n_rows..].iter().copied().fold(0.0, f64::max),
            dropped: sel.dropped.iter().map(|&p| p - n_rows + 1).collect(),
        });
    }
    out.finish(data, residuals, est.fallbacks())
}

/// Weighted `rrr` counts of one class, indexed `(x L + y) Q + z`.
fn rrr_table(data: &SurveyDataset, class: Option<u32>, k: usize, l: usize, q: usize) -> Vec<f64> {
    let mut t = vec![0.0; k * l * q];
    for u in data.units() {
        if class.is_some_and(|g| g != u.class) {
            continue;
        }
        if let (Some(a), Some(b), Some(Some(c))) = (u.x, u.y, u.z) {
            t[(a as usize * l + b as usize) * q + c as usize] += u.weight;
        }
    }
    t
}

/// Law over full cells `(x, y, z)` restricted to those agreeing with the
/// observed items; drawing a cell and keeping its missing components draws
/// from the conditional law of the missing items.
fn restricted(table: &[f64], l: usize, q: usize, obs: [Option<u32>; 3]) -> Option<Vec<f64>> {
    let v: Vec<f64> = table
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let cell = [(i / q / l) as u32, (i / q % l) as u32, (i % q) as u32];
            if cell.iter().zip(obs).all(|(c, o)| o.is_none_or(|o| o == *c)) {
                w
            } else {
                0.0
            }
        })
        .collect();
    normalized(&v)
}

/// Joint hot-deck imputation of three items: every incomplete pattern draws
/// its missing items from the class `rrr` law conditional on its observed
/// items.
pub fn jhdi3(data: &SurveyDataset, stream: RngStream) -> Result<ImputationOutcome> {
    let q = data.categories().q.ok_or(Error::NoThirdItem)? as usize;
    let (k, l) = (data.k(), data.l());
    let pooled = rrr_table(data, None, k, l, q);
    let mut out = Imputer::new(data);
    let mut fallbacks = Vec::new();
    let mut classes: Vec<u32> = data.units().iter().map(|u| u.class).collect();
    classes.sort_unstable();
    classes.dedup();
    for g in classes {
        let table = rrr_table(data, Some(g), k, l, q);
        let mut rngs: Vec<_> = (0..8u64).map(|p| stream.substream(g as u64 * 8 + p).rng()).collect();
        for (i, u) in data.units().iter().enumerate().filter(|(_, u)| u.class == g) {
            let z = u.z.ok_or(Error::NoThirdItem)?;
            let obs = [u.x, u.y, z];
            let pattern = obs
                .iter()
                .enumerate()
                .fold(0usize, |p, (j, o)| p | ((o.is_none() as usize) << j));
            if pattern == 0 {
                continue;
            }
            let none = [None; 3];
            let ladder = [
                (restricted(&table, l, q, obs), Source::Class),
                (restricted(&table, l, q, none), Source::ClassMarginal),
                (restricted(&pooled, l, q, obs), Source::Pooled),
                (restricted(&pooled, l, q, none), Source::Pooled),
            ];
            let (probs, source) = ladder
                .into_iter()
                .find_map(|(p, s)| p.map(|p| (p, s)))
                .ok_or(Error::NoDonorInformation { class: g })?;
            if source != Source::Class {
                let describe = |o: Option<u32>| o.map_or("*".to_string(), |v| v.to_string());
                fallbacks.push(FallbackFlag {
                    class: g,
                    quantity: format!("x,y,z|{},{},{}", describe(obs[0]), describe(obs[1]), describe(obs[2])),
                    source,
                });
            }
            let cell = draw(&probs, &mut rngs[pattern]);
            let values = [(cell / q / l) as u32, (cell / q % l) as u32, (cell % q) as u32];
            for (j, item) in [Item::X, Item::Y, Item::Z].into_iter().enumerate() {
                if obs[j].is_none() {
                    out.set(i, item, values[j]);
                }
            }
        }
    }
    fallbacks.sort_by(|a, b| (a.class, &a.quantity).cmp(&(b.class, &b.quantity)));
    fallbacks.dedup();
    out.finish(data, Vec::new(), fallbacks)
}
