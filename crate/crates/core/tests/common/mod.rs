//! Direct-summation oracles and random fixtures shared by the integration
//! tests and the acceptance target. Nothing here goes through the tallies
//! or fallback ladders of the library.

#![allow(dead_code)]

use catimpute::survey::{Categories, SurveyDataset, Unit};
use rand::Rng;

pub struct Table {
    pub k: usize,
    pub l: usize,
    pub joint: Vec<Vec<f64>>,
    pub mx: Vec<f64>,
    pub my: Vec<f64>,
}

fn sum<'a>(units: impl Iterator<Item = &'a Unit>) -> f64 {
    units.map(|u| u.weight).sum()
}

fn eq(a: Option<u32>, b: usize) -> bool {
    a == Some(b as u32)
}

fn classes(d: &SurveyDataset) -> Vec<u32> {
    let mut c: Vec<u32> = d.units().iter().map(|u| u.class).collect();
    c.sort();
    c.dedup();
    c
}

fn in_class(d: &SurveyDataset, g: u32) -> impl Iterator<Item = &Unit> {
    d.units().iter().filter(move |u| u.class == g)
}

fn rr(u: &Unit) -> bool {
    u.x.is_some() && u.y.is_some()
}

pub fn ht(d: &SurveyDataset) -> Table {
    let n = d.population_size() as f64;
    let (k, l) = (d.k(), d.l());
    let joint = (0..k)
        .map(|a| {
            (0..l)
                .map(|b| sum(d.units().iter().filter(|u| eq(u.x, a) && eq(u.y, b))) / n)
                .collect()
        })
        .collect();
    let mx = (0..k)
        .map(|a| sum(d.units().iter().filter(|u| eq(u.x, a))) / n)
        .collect();
    let my = (0..l)
        .map(|b| sum(d.units().iter().filter(|u| eq(u.y, b))) / n)
        .collect();
    Table { k, l, joint, mx, my }
}

pub fn cc(d: &SurveyDataset) -> Table {
    let (k, l) = (d.k(), d.l());
    let den = sum(d.units().iter().filter(|u| rr(u)));
    let joint: Vec<Vec<f64>> = (0..k)
        .map(|a| {
            (0..l)
                .map(|b| sum(d.units().iter().filter(|u| eq(u.x, a) && eq(u.y, b))) / den)
                .collect()
        })
        .collect();
    let mx = (0..k)
        .map(|a| sum(d.units().iter().filter(|u| rr(u) && eq(u.x, a))) / den)
        .collect();
    let my = (0..l)
        .map(|b| sum(d.units().iter().filter(|u| rr(u) && eq(u.y, b))) / den)
        .collect();
    Table { k, l, joint, mx, my }
}

pub fn ac(d: &SurveyDataset) -> Table {
    let mut t = cc(d);
    let rx = sum(d.units().iter().filter(|u| u.x.is_some()));
    let ry = sum(d.units().iter().filter(|u| u.y.is_some()));
    t.mx = (0..t.k)
        .map(|a| sum(d.units().iter().filter(|u| eq(u.x, a))) / rx)
        .collect();
    t.my = (0..t.l)
        .map(|b| sum(d.units().iter().filter(|u| eq(u.y, b))) / ry)
        .collect();
    t
}

/// Class complete-case proportion of cell `(a, b)`.
fn class_cc(d: &SurveyDataset, g: u32, a: usize, b: usize) -> f64 {
    sum(in_class(d, g).filter(|u| eq(u.x, a) && eq(u.y, b))) / sum(in_class(d, g).filter(|u| rr(u)))
}

pub fn acc(d: &SurveyDataset) -> Table {
    let n = d.population_size() as f64;
    let (k, l) = (d.k(), d.l());
    let mut joint = vec![vec![0.0; l]; k];
    for g in classes(d) {
        let ng = sum(in_class(d, g));
        for a in 0..k {
            for b in 0..l {
                joint[a][b] += ng * class_cc(d, g, a, b) / n;
            }
        }
    }
    let mx = (0..k).map(|a| joint[a].iter().sum()).collect();
    let my = (0..l).map(|b| joint.iter().map(|r| r[b]).sum()).collect();
    Table { k, l, joint, mx, my }
}

pub fn aac(d: &SurveyDataset) -> Table {
    let n = d.population_size() as f64;
    let mut t = acc(d);
    t.mx = vec![0.0; t.k];
    t.my = vec![0.0; t.l];
    for g in classes(d) {
        let ng = sum(in_class(d, g));
        let rx = sum(in_class(d, g).filter(|u| u.x.is_some()));
        let ry = sum(in_class(d, g).filter(|u| u.y.is_some()));
        for a in 0..t.k {
            t.mx[a] += ng * sum(in_class(d, g).filter(|u| eq(u.x, a))) / rx / n;
        }
        for b in 0..t.l {
            t.my[b] += ng * sum(in_class(d, g).filter(|u| eq(u.y, b))) / ry / n;
        }
    }
    t
}

/// `p_{k|l}` among class complete cases.
fn x_given_y(d: &SurveyDataset, g: u32, a: usize, b: usize) -> f64 {
    sum(in_class(d, g).filter(|u| eq(u.x, a) && eq(u.y, b))) / sum(in_class(d, g).filter(|u| rr(u) && eq(u.y, b)))
}

fn y_given_x(d: &SurveyDataset, g: u32, a: usize, b: usize) -> f64 {
    sum(in_class(d, g).filter(|u| eq(u.x, a) && eq(u.y, b))) / sum(in_class(d, g).filter(|u| rr(u) && eq(u.x, a)))
}

/// Expected imputed proportions under joint imputation, unit by unit.
pub fn tilde(d: &SurveyDataset) -> Table {
    let n = d.population_size() as f64;
    let (k, l) = (d.k(), d.l());
    let mut joint = vec![vec![0.0; l]; k];
    let mut mx = vec![0.0; k];
    let mut my = vec![0.0; l];
    for u in d.units() {
        let g = u.class;
        let w = u.weight / n;
        for a in 0..k {
            for b in 0..l {
                let p = match (u.x, u.y) {
                    (Some(x), Some(y)) => (x as usize == a && y as usize == b) as u8 as f64,
                    (None, Some(y)) => (y as usize == b) as u8 as f64 * x_given_y(d, g, a, b),
                    (Some(x), None) => (x as usize == a) as u8 as f64 * y_given_x(d, g, a, b),
                    (None, None) => class_cc(d, g, a, b),
                };
                joint[a][b] += w * p;
            }
        }
        for a in 0..k {
            mx[a] += w * match u.x {
                Some(x) => (x as usize == a) as u8 as f64,
                None => match u.y {
                    Some(y) => x_given_y(d, g, a, y as usize),
                    None => (0..l).map(|b| class_cc(d, g, a, b)).sum(),
                },
            };
        }
        for b in 0..l {
            my[b] += w * match u.y {
                Some(y) => (y as usize == b) as u8 as f64,
                None => match u.x {
                    Some(x) => y_given_x(d, g, x as usize, b),
                    None => (0..k).map(|a| class_cc(d, g, a, b)).sum(),
                },
            };
        }
    }
    Table { k, l, joint, mx, my }
}

/// A random dataset of at most 20 units in which every class has a complete
/// case in every cell, so no estimate needs a fallback.
pub fn random_fixture<R: Rng>(rng: &mut R, complete: bool) -> SurveyDataset {
    let k = rng.gen_range(2..=3usize);
    let l = rng.gen_range(2..=3usize);
    let max_g = (14 / (k * l)).clamp(1, 3);
    let g = rng.gen_range(1..=max_g) as u32;
    let mut units = Vec::new();
    let mut id = 0u64;
    let weight = |rng: &mut R| 1.0 + rng.gen::<f64>() * 19.0;
    for class in 1..=g {
        for a in 0..k as u32 {
            for b in 0..l as u32 {
                id += 1;
                units.push(Unit::new(id, weight(rng), class, Some(a), Some(b)));
            }
        }
    }
    while units.len() < 20 && rng.gen_bool(0.9) {
        id += 1;
        let class = rng.gen_range(1..=g);
        let x = if complete || rng.gen_bool(0.6) {
            Some(rng.gen_range(0..k as u32))
        } else {
            None
        };
        let y = if complete || rng.gen_bool(0.6) {
            Some(rng.gen_range(0..l as u32))
        } else {
            None
        };
        units.push(Unit::new(id, weight(rng), class, x, y));
    }
    let total: f64 = units.iter().map(|u| u.weight).sum();
    let n = total.ceil() as u64 + rng.gen_range(0..50);
    SurveyDataset::new(
        units,
        n,
        Categories {
            k: k as u32,
            l: l as u32,
            q: None,
        },
    )
    .unwrap()
}

/// Largest absolute difference between a library table and an oracle table.
pub fn gap(t: &catimpute::ProportionTable, o: &Table) -> f64 {
    let mut m: f64 = 0.0;
    for a in 0..o.k {
        for b in 0..o.l {
            m = m.max((t.joint(a, b) - o.joint[a][b]).abs());
        }
        m = m.max((t.marginal_x(a) - o.mx[a]).abs());
    }
    for b in 0..o.l {
        m = m.max((t.marginal_y(b) - o.my[b]).abs());
    }
    m
}

/// Worst gap over every estimator family on one fixture.
pub fn worst_gap(d: &SurveyDataset) -> f64 {
    use catimpute::estimators::*;
    let masked = [
        gap(&cc_estimators(d).unwrap(), &cc(d)),
        gap(&acc_estimators(d).unwrap(), &acc(d)),
        gap(&ac_estimators(d).unwrap(), &ac(d)),
        gap(&aac_estimators(d).unwrap(), &aac(d)),
        gap(&tilde_estimators(d).unwrap(), &tilde(d)),
    ];
    masked.into_iter().fold(0.0, f64::max)
}

/// Gap of the full-data estimator on a complete fixture.
pub fn ht_gap(d: &SurveyDataset) -> f64 {
    gap(&catimpute::estimators::ht_proportions(d).unwrap(), &ht(d))
}
