//! Derivative-free minimization of f_n over a box: a coarse grid scan
//! followed by compass search with step halving from the best grid basins.

use rayon::prelude::*;
use serde::Serialize;

use crate::domain::{self, BoxDomain};
use crate::error::{bail, Result};
use crate::estimator::EstimatorSnapshot;

pub const GRID_PER_DIM: usize = 32;
pub const MAX_STARTS: usize = 4;
pub const MIN_BUDGET: usize = 100;
/// Evaluations reserved for local refinement on top of the grid scan.
const REFINE_MARGIN: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizationResult {
    pub theta_n: f64,
    pub minimizers: Vec<Vec<f64>>,
    pub evaluations: usize,
    pub tolerance_achieved: f64,
    pub converged: bool,
}

struct Counted<'a, F> {
    f: &'a F,
    used: usize,
}

impl<F: Fn(&[f64]) -> f64> Counted<'_, F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.used += 1;
        (self.f)(x)
    }
}

struct LocalRun {
    x: Vec<f64>,
    value: f64,
    step: f64,
    converged: bool,
}

fn compass_search<F: Fn(&[f64]) -> f64>(
    f: &mut Counted<'_, F>,
    domain: &BoxDomain,
    start: Vec<f64>,
    start_value: f64,
    step: f64,
    tol: f64,
    allowance: usize,
) -> LocalRun {
    let limit = f.used + allowance;
    let (mut x, mut value, mut step) = (start, start_value, step);
    let mut trial = x.clone();
    while step >= tol {
        let mut best: Option<(Vec<f64>, f64)> = None;
        let mut exhausted = false;
        'poll: for k in 0..x.len() {
            for sign in [-1.0, 1.0] {
                trial.copy_from_slice(&x);
                trial[k] = (x[k] + sign * step).clamp(domain.lo[k], domain.hi[k]);
                if trial[k] == x[k] {
                    continue;
                }
                if f.used >= limit {
                    exhausted = true;
                    break 'poll;
                }
                let v = f.eval(&trial);
                if v < best.as_ref().map_or(value, |b| b.1) {
                    best = Some((trial.clone(), v));
                }
            }
        }
        match best {
            Some((bx, bv)) => {
                x = bx;
                value = bv;
            }
            None if exhausted => return LocalRun { x, value, step, converged: false },
            None => step *= 0.5,
        }
        if exhausted {
            return LocalRun { x, value, step, converged: false };
        }
    }
    LocalRun { x, value, step, converged: true }
}

/// Indices of grid points no larger than any axis neighbour, best first.
fn grid_local_minima(values: &[f64], per_dim: usize, dim: usize) -> Vec<usize> {
    let mut minima: Vec<usize> = (0..values.len())
        .filter(|&i| {
            let mut stride = 1;
            for _ in 0..dim {
                let coord = (i / stride) % per_dim;
                if coord > 0 && values[i - stride] < values[i] {
                    return false;
                }
                if coord + 1 < per_dim && values[i + stride] < values[i] {
                    return false;
                }
                stride *= per_dim;
            }
            true
        })
        .collect();
    minima.sort_by(|a, b| values[*a].total_cmp(&values[*b]).then(a.cmp(b)));
    minima
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
}

/// Minimizes `objective` over `domain`. Each refinement start receives an
/// equal, fixed share of the budget left after the grid scan, so a larger
/// budget only ever extends every local search.
pub fn minimize<F>(objective: &F, domain: &BoxDomain, budget: usize, tol: f64) -> Result<OptimizationResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    domain.validate()?;
    if !(tol > 0.0) {
        bail!(Input, "tolerance must be positive, got {tol}");
    }
    let dim = domain.dim();
    let grid_size = GRID_PER_DIM.pow(dim as u32);
    let needed = MIN_BUDGET.max(grid_size + REFINE_MARGIN);
    if budget < needed {
        bail!(Input, "budget {budget} is below the minimum {needed} for a {dim}-dimensional box");
    }
    let grid = domain.grid(GRID_PER_DIM);
    let values: Vec<f64> = grid.par_iter().map(|x| objective(x)).collect();
    let mut counted = Counted { f: objective, used: grid.len() };

    let starts: Vec<usize> = grid_local_minima(&values, GRID_PER_DIM, dim).into_iter().take(MAX_STARTS).collect();
    let allowance = (budget - grid.len()) / starts.len();
    let spacing = domain.widths().iter().fold(f64::INFINITY, |m, w| m.min(*w)) / (GRID_PER_DIM - 1) as f64;
    let mut runs: Vec<LocalRun> = starts
        .iter()
        .map(|&i| compass_search(&mut counted, domain, grid[i].clone(), values[i], spacing, tol, allowance))
        .collect();
    // The grid optimum itself stays a candidate.
    let gi = (0..values.len()).min_by(|a, b| values[*a].total_cmp(&values[*b])).expect("nonempty grid");
    runs.push(LocalRun { x: grid[gi].clone(), value: values[gi], step: spacing, converged: false });

    let best = runs.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
    let mut near: Vec<&LocalRun> = runs.iter().filter(|r| r.value <= best + tol).collect();
    near.sort_by(|a, b| a.value.total_cmp(&b.value).then_with(|| lexicographic(&a.x, &b.x)));
    let mut kept: Vec<&LocalRun> = Vec::new();
    for r in near {
        let dup = kept.iter().any(|k| k.x.iter().zip(&r.x).all(|(a, b)| (a - b).abs() <= 2.0 * tol));
        if !dup {
            kept.push(r);
        }
    }
    let best_run_converged = runs[..runs.len() - 1].iter().filter(|r| r.value == best).any(|r| r.converged);
    let step_achieved = kept.iter().filter(|r| r.value == best).map(|r| r.step).fold(f64::INFINITY, f64::min);
    let gap = kept.iter().map(|r| r.value - best).fold(0.0, f64::max);
    let mut minimizers: Vec<Vec<f64>> = kept.iter().map(|r| r.x.clone()).collect();
    minimizers.sort_by(|a, b| lexicographic(a, b));
    Ok(OptimizationResult {
        theta_n: best,
        minimizers,
        evaluations: counted.used,
        tolerance_achieved: step_achieved.max(gap),
        converged: best_run_converged,
    })
}

/// ϑ_n = min over 𝒳 of f_n.
pub fn minimize_snapshot(snapshot: &EstimatorSnapshot, budget: usize, tol: f64) -> Result<OptimizationResult> {
    if snapshot.n() == 0 {
        bail!(Input, "f_n needs at least one sample");
    }
    let domain = snapshot.problem().domain().clone();
    minimize(&|x: &[f64]| snapshot.value_unchecked(x), &domain, budget, tol)
}

/// min over a finite set of f_n.
pub fn inf_over_set(snapshot: &EstimatorSnapshot, points: &[Vec<f64>]) -> Result<f64> {
    if points.is_empty() {
        bail!(Input, "inf_over_set needs at least one point");
    }
    let mut best = f64::INFINITY;
    for x in points {
        best = best.min(snapshot.evaluate_fn(x)?);
    }
    Ok(best)
}

/// Minimum of `objective` over a `per_dim`-per-axis grid: the oracle the
/// optimizer is checked against.
pub fn grid_minimum<F: Fn(&[f64]) -> f64 + Sync>(objective: &F, domain: &BoxDomain, per_dim: usize) -> f64 {
    let axes: Vec<Vec<f64>> = domain.lo.iter().zip(&domain.hi).map(|(l, h)| domain::linspace(*l, *h, per_dim)).collect();
    domain::tensor(&axes).par_iter().map(|x| objective(x)).reduce(|| f64::INFINITY, f64::min)
}
