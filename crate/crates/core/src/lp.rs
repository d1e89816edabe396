//! Small dense linear programs backing the nonnegative feasibility and cone
//! interior decisions.
//!
//! Columns `a_j` are given as `k`-vectors; the system is `sum_j a_j x_j = a_0`.

use microlp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem, Variable};
use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

pub(crate) fn matrix(columns: &[Vec<f64>], rows: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, columns.len(), |i, j| columns[j][i])
}

pub(crate) fn residual(columns: &[Vec<f64>], target: &[f64], x: &[f64]) -> Vec<f64> {
    target
        .iter()
        .enumerate()
        .map(|(i, t)| t - columns.iter().zip(x).map(|(c, v)| c[i] * v).sum::<f64>())
        .collect()
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[derive(Debug, Clone)]
pub(crate) struct Feasibility {
    /// Nonnegative solution when the system is feasible.
    pub solution: Option<Vec<f64>>,
    /// `a_0 - A x` at the L1-closest nonnegative point.
    pub deficit: Vec<f64>,
    /// Minimal L1 residual.
    pub l1_residual: f64,
}

fn lp_error(e: microlp::Error) -> Error {
    Error::Lp(e.to_string())
}

/// Adds `A x + s_plus - s_minus = target` with all variables nonnegative and
/// returns the slack variables.
fn add_slacked_equalities(
    problem: &mut Problem,
    columns: &[Vec<f64>],
    target: &[f64],
    xs: &[Variable],
    slack_cost: f64,
) -> Vec<(Variable, Variable)> {
    let slacks: Vec<(Variable, Variable)> = (0..target.len())
        .map(|_| {
            (
                problem.add_var(slack_cost, (0.0, f64::INFINITY)),
                problem.add_var(slack_cost, (0.0, f64::INFINITY)),
            )
        })
        .collect();
    for (i, t) in target.iter().enumerate() {
        let mut expr = LinearExpr::empty();
        for (x, c) in xs.iter().zip(columns) {
            if c[i] != 0.0 {
                expr.add(*x, c[i]);
            }
        }
        expr.add(slacks[i].0, 1.0);
        expr.add(slacks[i].1, -1.0);
        problem.add_constraint(expr, ComparisonOp::Eq, *t);
    }
    slacks
}

/// Least-squares refit of a nonnegative LP vertex on its support. Keeps the
/// refit when it stays nonnegative and lowers the residual.
fn polish(columns: &[Vec<f64>], target: &[f64], x: Vec<f64>) -> Vec<f64> {
    let support: Vec<usize> = (0..x.len()).filter(|&j| x[j] > 0.0).collect();
    if support.is_empty() {
        return x;
    }
    let sub: Vec<Vec<f64>> = support.iter().map(|&j| columns[j].clone()).collect();
    let a = matrix(&sub, target.len());
    let b = DVector::from_column_slice(target);
    let Ok(fit) = a.svd(true, true).solve(&b, 1e-13) else {
        return x;
    };
    let mut refit = vec![0.0; x.len()];
    for (pos, &j) in support.iter().enumerate() {
        if fit[pos] < -1e-12 {
            return x;
        }
        refit[j] = fit[pos].max(0.0);
    }
    if max_abs(&residual(columns, target, &refit)) <= max_abs(&residual(columns, target, &x)) {
        refit
    } else {
        x
    }
}

/// Decides whether `sum_j a_j x_j = a_0` has a solution `x >= 0`: the minimal
/// L1 residual over nonnegative `x` must not exceed `tol`.
pub(crate) fn nonnegative_solution(columns: &[Vec<f64>], target: &[f64], tol: f64) -> Result<Feasibility> {
    let mut problem = Problem::new(OptimizationDirection::Minimize);
    let xs: Vec<Variable> = columns
        .iter()
        .map(|_| problem.add_var(0.0, (0.0, f64::INFINITY)))
        .collect();
    let slacks = add_slacked_equalities(&mut problem, columns, target, &xs, 1.0);
    let solution = problem.solve().map_err(lp_error)?;
    let solution = solution
        .solution()
        .ok_or_else(|| Error::Lp("solve interrupted".into()))?;
    let x: Vec<f64> = xs.iter().map(|v| solution.var_value(*v).max(0.0)).collect();
    let deficit: Vec<f64> = slacks
        .iter()
        .map(|(p, m)| solution.var_value(*p) - solution.var_value(*m))
        .collect();
    let l1_residual = solution.objective().max(0.0);
    if l1_residual > tol {
        return Ok(Feasibility {
            solution: None,
            deficit,
            l1_residual,
        });
    }
    let x = polish(columns, target, x);
    let deficit = residual(columns, target, &x);
    Ok(Feasibility {
        solution: Some(x),
        l1_residual: deficit.iter().map(|d| d.abs()).sum(),
        deficit,
    })
}

/// Maximizes `min_j x_j` over nonnegative solutions, with the minimum capped
/// at `cap`. The equalities are imposed exactly first; only if that is
/// numerically infeasible an L1 slack of `tol` is granted. Returns `None` when
/// no nonnegative solution exists.
pub(crate) fn max_min_coefficient(columns: &[Vec<f64>], target: &[f64], tol: f64, cap: f64) -> Result<Option<(f64, Vec<f64>)>> {
    let feas = nonnegative_solution(columns, target, tol)?;
    if feas.solution.is_none() {
        return Ok(None);
    }
    match max_min_with_slack(columns, target, 0.0, cap)? {
        Some(found) => Ok(Some(found)),
        None => max_min_with_slack(columns, target, tol, cap),
    }
}

fn max_min_with_slack(columns: &[Vec<f64>], target: &[f64], slack: f64, cap: f64) -> Result<Option<(f64, Vec<f64>)>> {
    let mut problem = Problem::new(OptimizationDirection::Maximize);
    let t = problem.add_var(1.0, (0.0, cap));
    let xs: Vec<Variable> = columns
        .iter()
        .map(|_| problem.add_var(0.0, (0.0, f64::INFINITY)))
        .collect();
    let slacks = add_slacked_equalities(&mut problem, columns, target, &xs, 0.0);
    let budget: LinearExpr = slacks.iter().flat_map(|(p, m)| [(*p, 1.0), (*m, 1.0)]).collect();
    problem.add_constraint(budget, ComparisonOp::Le, slack);
    for x in &xs {
        problem.add_constraint([(*x, 1.0), (t, -1.0)], ComparisonOp::Ge, 0.0);
    }
    let solution = match problem.solve() {
        Ok(s) => s,
        Err(microlp::Error::Infeasible) => return Ok(None),
        Err(e) => return Err(lp_error(e)),
    };
    let solution = solution
        .solution()
        .ok_or_else(|| Error::Lp("solve interrupted".into()))?;
    let x: Vec<f64> = xs.iter().map(|v| solution.var_value(*v).max(0.0)).collect();
    Ok(Some((solution.var_value(t), x)))
}
