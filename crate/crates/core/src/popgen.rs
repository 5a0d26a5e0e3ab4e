//! Synthetic finite populations of two binary items built from per-class
//! marginal and joint proportions, with per-class response mechanisms.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survey::{read_to_string, Categories, SurveyDataset, Unit};

/// Pattern probabilities `(rr, rm, mr, mm)` of one class.
pub type Mechanism = [f64; 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub size: u64,
    pub p1dot: f64,
    pub pdot1: f64,
    pub p11: f64,
    /// `[phi_rr, phi_rm, phi_mr, phi_mm]`.
    pub phi: Mechanism,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    #[serde(rename = "class")]
    pub classes: Vec<ClassSpec>,
}

impl PopulationSpec {
    /// The five-class population of the reference simulation, N = 20,000.
    pub fn reference() -> Self {
        let row = |p: f64, p11: f64, phi: Mechanism| ClassSpec {
            size: 4000,
            p1dot: p,
            pdot1: p,
            p11,
            phi,
        };
        Self {
            classes: vec![
                row(0.50, 0.20, [0.10, 0.20, 0.20, 0.50]),
                row(0.55, 0.30, [0.20, 0.20, 0.20, 0.40]),
                row(0.60, 0.40, [0.30, 0.25, 0.25, 0.20]),
                row(0.65, 0.50, [0.40, 0.20, 0.20, 0.20]),
                row(0.70, 0.60, [0.50, 0.20, 0.20, 0.10]),
            ],
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_toml(&read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::InvalidSpec("no classes".into()));
        }
        for (g, c) in self.classes.iter().enumerate() {
            let g = g + 1;
            if c.size == 0 {
                return Err(Error::InvalidSpec(format!("class {g}: size must be positive")));
            }
            for (name, v) in [("p1dot", c.p1dot), ("pdot1", c.pdot1), ("p11", c.p11)] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidSpec(format!("class {g}: {name}={v} outside [0, 1]")));
                }
            }
            if c.phi.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidSpec(format!("class {g}: phi outside [0, 1]")));
            }
            let total: f64 = c.phi.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidSpec(format!("class {g}: phi sums to {total}, not 1")));
            }
            cell_probabilities(c.p1dot, c.pdot1, c.p11)?;
        }
        Ok(())
    }

    pub fn population_size(&self) -> u64 {
        self.classes.iter().map(|c| c.size).sum()
    }

    /// Mechanism of a 1-based class label.
    pub fn mechanism(&self, class: u32) -> Option<&Mechanism> {
        (class as usize)
            .checked_sub(1)
            .and_then(|g| self.classes.get(g))
            .map(|c| &c.phi)
    }

    /// Population-level cell probabilities, size-weighted over classes.
    pub fn population_cells(&self) -> Result<CellProbabilities> {
        let n = self.population_size() as f64;
        let mut acc = [0.0; 4];
        for c in &self.classes {
            let cells = cell_probabilities(c.p1dot, c.pdot1, c.p11)?;
            for (a, v) in acc.iter_mut().zip(cells.as_array()) {
                *a += c.size as f64 * v;
            }
        }
        Ok(CellProbabilities {
            p00: acc[0] / n,
            p01: acc[1] / n,
            p10: acc[2] / n,
            p11: acc[3] / n,
        })
    }
}

/// A 2x2 table of probabilities or proportions; `pxy` is the cell `x`, `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellProbabilities {
    pub p00: f64,
    pub p01: f64,
    pub p10: f64,
    pub p11: f64,
}

impl CellProbabilities {
    /// Cells in the order `(00, 01, 10, 11)`.
    pub fn as_array(&self) -> [f64; 4] {
        [self.p00, self.p01, self.p10, self.p11]
    }

    pub fn p1dot(&self) -> f64 {
        self.p10 + self.p11
    }

    pub fn pdot1(&self) -> f64 {
        self.p01 + self.p11
    }
}

pub fn cell_probabilities(p1dot: f64, pdot1: f64, p11: f64) -> Result<CellProbabilities> {
    const TOL: f64 = 1e-12;
    let lower = (p1dot + pdot1 - 1.0).max(0.0);
    let upper = p1dot.min(pdot1);
    if p11 < lower - TOL || p11 > upper + TOL {
        return Err(Error::InfeasibleJointProportion { p11, lower, upper });
    }
    let clamp = |v: f64| if v.abs() < TOL { 0.0 } else { v };
    Ok(CellProbabilities {
        p00: clamp(1.0 - p1dot - pdot1 + p11),
        p01: clamp(pdot1 - p11),
        p10: clamp(p1dot - p11),
        p11,
    })
}

pub fn odds_ratio(table: &CellProbabilities) -> Result<f64> {
    let den = table.p10 * table.p01;
    if den == 0.0 {
        return Err(Error::OddsRatioUndefined);
    }
    Ok(table.p11 * table.p00 / den)
}

/// Splits `total` into integer counts proportional to `probs` by the
/// largest-remainder rule. Ties go to the earlier cell.
pub fn largest_remainder(total: u64, probs: &[f64]) -> Vec<u64> {
    let exact: Vec<f64> = probs.iter().map(|p| total as f64 * p).collect();
    let mut counts: Vec<u64> = exact
        .iter()
        .map(|&e| {
            let r = e.round();
            if (e - r).abs() < 1e-9 {
                r as u64
            } else {
                e.floor() as u64
            }
        })
        .collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut left = total.saturating_sub(assigned);
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Builds the fully observed population with weight 1 per unit. Units are
/// laid out class by class, cells in the order `(1,1), (1,0), (0,1), (0,0)`.
pub fn generate_population(spec: &PopulationSpec) -> Result<SurveyDataset> {
    spec.validate()?;
    let mut units = Vec::with_capacity(spec.population_size() as usize);
    let mut id = 1u64;
    for (g, c) in spec.classes.iter().enumerate() {
        let cells = cell_probabilities(c.p1dot, c.pdot1, c.p11)?;
        let layout = [
            (1, 1, cells.p11),
            (1, 0, cells.p10),
            (0, 1, cells.p01),
            (0, 0, cells.p00),
        ];
        let probs: Vec<f64> = layout.iter().map(|t| t.2).collect();
        let counts = largest_remainder(c.size, &probs);
        for (&(x, y, _), &count) in layout.iter().zip(&counts) {
            for _ in 0..count {
                units.push(Unit::new(id, 1.0, g as u32 + 1, Some(x), Some(y)));
                id += 1;
            }
        }
    }
    SurveyDataset::new(units, spec.population_size(), Categories { k: 2, l: 2, q: None })
}
