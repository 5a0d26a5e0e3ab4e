//! Balanced selection by the cube method.
//!
//! The flight phase walks `v` from `pi` towards a vertex of `[0,1]^M` along
//! directions in the kernel of the active constraints, so every balance
//! functional `sum_m v_m a_{m,p}` stays fixed and `E[v] = pi`. Directions
//! are found on a small leading subset of the free coordinates (one more
//! coordinate than the constraints it touches), which keeps each step cheap
//! for sparse constraint matrices. When no direction is left the landing
//! phase suppresses droppable constraints, highest rank first, and flies
//! again until the vector is integral.

use std::collections::VecDeque;

use rand::Rng;
use thiserror::Error;

const INTEGRAL_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CubeError {
    #[error("invalid balancing problem: {0}")]
    InvalidProblem(String),
    #[error("required balancing constraints cannot be met: {0} coordinates left non-integral")]
    RequiredUnsatisfiable(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Priority {
    /// Never suppressed.
    Required,
    /// Suppressed in landing, highest rank first.
    Droppable(u32),
}

/// One balancing column, stored sparsely as `(coordinate, coefficient)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coefficients: Vec<(usize, f64)>,
    pub priority: Priority,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalancingProblem {
    pi: Vec<f64>,
    constraints: Vec<Constraint>,
    by_coordinate: Vec<Vec<(usize, f64)>>,
}

impl BalancingProblem {
    pub fn new(pi: Vec<f64>, constraints: Vec<Constraint>) -> Result<Self, CubeError> {
        if pi.is_empty() {
            return Err(CubeError::InvalidProblem("no coordinates".into()));
        }
        if let Some(m) = pi.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(CubeError::InvalidProblem(format!("pi[{m}] = {} outside [0, 1]", pi[m])));
        }
        let mut by_coordinate = vec![Vec::new(); pi.len()];
        for (p, c) in constraints.iter().enumerate() {
            for &(m, a) in &c.coefficients {
                if m >= pi.len() {
                    return Err(CubeError::InvalidProblem(format!(
                        "constraint {p} refers to coordinate {m}"
                    )));
                }
                if !a.is_finite() {
                    return Err(CubeError::InvalidProblem(format!(
                        "constraint {p} has a non-finite coefficient"
                    )));
                }
                if a != 0.0 {
                    by_coordinate[m].push((p, a));
                }
            }
        }
        Ok(Self {
            pi,
            constraints,
            by_coordinate,
        })
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    /// `sum_m v_m a_{m,p}` for constraint `p`.
    pub fn balance(&self, p: usize, v: &[f64]) -> f64 {
        self.constraints[p].coefficients.iter().map(|&(m, a)| v[m] * a).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionState {
    pub v: Vec<f64>,
    /// `active[p]` is false once constraint `p` has been suppressed.
    pub active: Vec<bool>,
}

impl SelectionState {
    pub fn is_integral(&self, m: usize) -> bool {
        self.v[m] == 0.0 || self.v[m] == 1.0
    }

    pub fn non_integral(&self) -> usize {
        (0..self.v.len()).filter(|&m| !self.is_integral(m)).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub selected: Vec<bool>,
    /// `|sum_selected a_{m,p} - sum_m pi_m a_{m,p}|` for each constraint.
    pub residuals: Vec<f64>,
    /// Suppressed constraints in the order they were dropped.
    pub dropped: Vec<usize>,
}

impl Selection {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

fn snap(x: f64) -> f64 {
    if x.abs() < INTEGRAL_TOL {
        0.0
    } else if (1.0 - x).abs() < INTEGRAL_TOL {
        1.0
    } else {
        x
    }
}

/// A nonzero vector `u` with `A u = 0` for the dense row-major `rows x cols`
/// matrix `a`, or `None` when the columns are independent.
fn null_vector(a: &mut [f64], rows: usize, cols: usize) -> Option<Vec<f64>> {
    for r in 0..rows {
        let row = &mut a[r * cols..(r + 1) * cols];
        let scale = row.iter().fold(0.0f64, |s, x| s.max(x.abs()));
        if scale > 0.0 {
            row.iter_mut().for_each(|x| *x /= scale);
        }
    }
    let mut pivot_cols = Vec::with_capacity(rows);
    let mut rank = 0;
    for c in 0..cols {
        if rank == rows {
            break;
        }
        let (best, size) = (rank..rows)
            .map(|r| (r, a[r * cols + c].abs()))
            .fold((rank, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if size <= PIVOT_TOL {
            continue;
        }
        if best != rank {
            for j in 0..cols {
                a.swap(best * cols + j, rank * cols + j);
            }
        }
        let p = a[rank * cols + c];
        for j in 0..cols {
            a[rank * cols + j] /= p;
        }
        for r in 0..rows {
            if r != rank {
                let f = a[r * cols + c];
                if f != 0.0 {
                    for j in 0..cols {
                        a[r * cols + j] -= f * a[rank * cols + j];
                    }
                }
            }
        }
        pivot_cols.push(c);
        rank += 1;
    }
    let free = (0..cols).find(|c| !pivot_cols.contains(c))?;
    let mut u = vec![0.0; cols];
    u[free] = 1.0;
    for (r, &c) in pivot_cols.iter().enumerate() {
        u[c] = -a[r * cols + free];
    }
    let norm = u.iter().fold(0.0f64, |s, x| s.max(x.abs()));
    u.iter_mut().for_each(|x| *x /= norm);
    Some(u)
}

fn fly<R: Rng + ?Sized>(problem: &BalancingProblem, state: &mut SelectionState, rng: &mut R) {
    let mut free: VecDeque<usize> = (0..state.v.len()).filter(|&m| !state.is_integral(m)).collect();
    let mut stamp = vec![usize::MAX; problem.constraints.len()];
    let mut step = 0usize;
    loop {
        while free.front().is_some_and(|&m| state.is_integral(m)) {
            free.pop_front();
        }
        if free.is_empty() {
            return;
        }
        // grow the subset until it has more coordinates than touched constraints
        let mut subset = Vec::new();
        let mut touched = Vec::new();
        let mut scanned = 0;
        for &m in free.iter() {
            scanned += 1;
            if state.is_integral(m) {
                continue;
            }
            subset.push(m);
            for &(p, _) in &problem.by_coordinate[m] {
                if state.active[p] && stamp[p] != step {
                    stamp[p] = step;
                    touched.push(p);
                }
            }
            if subset.len() > touched.len() {
                break;
            }
        }
        step += 1;
        let (rows, cols) = (touched.len(), subset.len());
        let mut a = vec![0.0; rows * cols];
        let row_of: std::collections::HashMap<usize, usize> =
            touched.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        for (j, &m) in subset.iter().enumerate() {
            for &(p, coef) in &problem.by_coordinate[m] {
                if let Some(&i) = row_of.get(&p) {
                    a[i * cols + j] += coef;
                }
            }
        }
        let Some(u) = null_vector(&mut a, rows, cols) else {
            // the whole free set admits no direction
            debug_assert_eq!(scanned, free.len());
            return;
        };
        let (mut l1, mut l2) = (f64::INFINITY, f64::INFINITY);
        for (&m, &d) in subset.iter().zip(&u) {
            let v = state.v[m];
            if d > 0.0 {
                l1 = l1.min((1.0 - v) / d);
                l2 = l2.min(v / d);
            } else if d < 0.0 {
                l1 = l1.min(v / -d);
                l2 = l2.min((1.0 - v) / -d);
            }
        }
        let lambda = if rng.gen::<f64>() < l2 / (l1 + l2) { l1 } else { -l2 };
        for (&m, &d) in subset.iter().zip(&u) {
            state.v[m] = snap(state.v[m] + lambda * d);
        }
        // the step zeroes at least one coordinate of the subset; make sure it is
        // recognised as integral even when rounding leaves it just outside the band
        let hit = subset
            .iter()
            .zip(&u)
            .filter(|&(_, &d)| d != 0.0)
            .map(|(&m, _)| m)
            .min_by(|&x, &y| {
                let dx = state.v[x].min(1.0 - state.v[x]);
                let dy = state.v[y].min(1.0 - state.v[y]);
                dx.partial_cmp(&dy).unwrap()
            })
            .expect("nonzero direction");
        state.v[hit] = state.v[hit].round();
        // drop integral coordinates from the scanned prefix
        let prefix: Vec<usize> = free.drain(..scanned).filter(|&m| !state.is_integral(m)).collect();
        for m in prefix.into_iter().rev() {
            free.push_front(m);
        }
    }
}

pub fn flight_phase<R: Rng + ?Sized>(problem: &BalancingProblem, rng: &mut R) -> SelectionState {
    let mut state = SelectionState {
        v: problem.pi.iter().map(|&p| snap(p)).collect(),
        active: vec![true; problem.constraints.len()],
    };
    fly(problem, &mut state, rng);
    state
}

pub fn landing_phase<R: Rng + ?Sized>(
    problem: &BalancingProblem,
    mut state: SelectionState,
    rng: &mut R,
) -> Result<Selection, CubeError> {
    let mut dropped = Vec::new();
    while state.non_integral() > 0 {
        let next = (0..problem.constraints.len())
            .filter(|&p| state.active[p])
            .filter_map(|p| match problem.constraints[p].priority {
                Priority::Droppable(rank) => Some((rank, p)),
                Priority::Required => None,
            })
            .max();
        let Some((_, p)) = next else {
            return Err(CubeError::RequiredUnsatisfiable(state.non_integral()));
        };
        state.active[p] = false;
        dropped.push(p);
        fly(problem, &mut state, rng);
    }
    let selected: Vec<bool> = state.v.iter().map(|&x| x == 1.0).collect();
    let sel: Vec<f64> = selected.iter().map(|&s| s as u8 as f64).collect();
    let residuals = (0..problem.constraints.len())
        .map(|p| (problem.balance(p, &sel) - problem.balance(p, &problem.pi)).abs())
        .collect();
    Ok(Selection {
        selected,
        residuals,
        dropped,
    })
}

pub fn balanced_select<R: Rng + ?Sized>(problem: &BalancingProblem, rng: &mut R) -> Result<Selection, CubeError> {
    let state = flight_phase(problem, rng);
    landing_phase(problem, state, rng)
}
