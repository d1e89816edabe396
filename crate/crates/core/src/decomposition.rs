//! Regularity testing and the optional Doob decomposition `f = M - g`.
//!
//! For each step `m` and parent atom `A` of level `m-1` the increment
//! `g_m - g_{m-1}` restricted to the children of `A` must solve the moment
//! system `sum_j a_j xi_j = a_0` with `a_j = (P_i(A_j | A))_i` and
//! `a_0 = (f_{m-1}(A) - E^{P_i}{f_m | A})_i`, `xi >= 0`. The process is
//! regular iff every such cell is feasible.

use serde::{Deserialize, Serialize};

use crate::conditional::RandomVariable;
use crate::cone::{self, ConeSystem};
use crate::filtration::AtomId;
use crate::lp;
use crate::measures::MeasureFamily;
use crate::process::{classify, one_step_expectation, stop, AdaptedProcess, Classification};
use crate::{Error, Exec, Result, Tolerances};

/// Tolerance on the martingale identities of a computed decomposition.
pub const MARTINGALE_TOL: f64 = 1e-10;

/// How a feasible cell's increment was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionRule {
    /// `a_0 = c (1, ..., 1)`: the predictable increment `xi_j = c` (the
    /// classical Doob choice).
    Predictable,
    /// Basic solution `z_r` of the cone solver.
    BasicSolution,
    /// Vertex of the feasibility linear program.
    LpVertex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Feasible { xi: Vec<f64>, rule: SolutionRule },
    Infeasible { deficit: Vec<f64>, l1_residual: f64 },
    /// Some `a_0` component is negative: the supermartingale inequality itself
    /// fails here.
    NotSupermartingale { measures: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// Step `m` (the children live on level `m`).
    pub level: usize,
    pub parent: AtomId,
    /// Level-`m` indices of the children.
    pub children: Vec<usize>,
    /// `a_j`, one per child.
    pub vectors: Vec<Vec<f64>>,
    /// `a_0`
    pub target: Vec<f64>,
    #[serde(flatten)]
    pub status: CellStatus,
}

impl Cell {
    pub fn is_feasible(&self) -> bool {
        matches!(self.status, CellStatus::Feasible { .. })
    }

    pub fn system(&self) -> ConeSystem {
        ConeSystem {
            vectors: self.vectors.clone(),
            target: self.target.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub regular: bool,
    pub supermartingale: bool,
    pub cells: Vec<Cell>,
}

impl RegularityReport {
    /// `(level, parent index)` of every cell that is not feasible.
    pub fn failing_cells(&self) -> Vec<(usize, usize)> {
        self.cells
            .iter()
            .filter(|c| !c.is_feasible())
            .map(|c| (c.level, c.parent.index))
            .collect()
    }

    pub fn cell(&self, level: usize, parent: usize) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.level == level && c.parent.index == parent)
    }
}

/// Moment system of one cell.
pub fn cell_system(family: &MeasureFamily, f: &AdaptedProcess, m: usize, parent: usize) -> (Vec<usize>, Vec<Vec<f64>>, Vec<f64>) {
    let tree = family.tree();
    let children = tree.children(m - 1, parent).to_vec();
    let vectors = children
        .iter()
        .map(|&j| (0..family.k()).map(|i| family.transition(i, m, j)).collect())
        .collect();
    let target = (0..family.k())
        .map(|i| {
            let e: f64 = children
                .iter()
                .map(|&j| family.transition(i, m, j) * f.levels[m][j])
                .sum();
            f.levels[m - 1][parent] - e
        })
        .collect();
    (children, vectors, target)
}

/// Decides one cell. The returned increment, when feasible, is chosen by the
/// first applicable rule: predictable (equal target components), the cone
/// solver's `z_r`, the LP vertex.
pub fn solve_cell(vectors: &[Vec<f64>], target: &[f64], tol: &Tolerances) -> Result<CellStatus> {
    let negative: Vec<usize> = (0..target.len()).filter(|&i| target[i] < -tol.inequality).collect();
    if !negative.is_empty() {
        return Ok(CellStatus::NotSupermartingale { measures: negative });
    }
    let target: Vec<f64> = target.iter().map(|t| t.max(0.0)).collect();
    let c = target[0];
    if target.iter().all(|t| (t - c).abs() <= tol.identity * (1.0 + c.abs())) {
        return Ok(CellStatus::Feasible {
            xi: vec![c; vectors.len()],
            rule: SolutionRule::Predictable,
        });
    }
    let system = ConeSystem {
        vectors: vectors.to_vec(),
        target: target.clone(),
    };
    if let Ok(family) = cone::solve(&system, tol) {
        let z = family.basic_solutions[0].clone();
        if system.residual(&z) <= tol.residual {
            return Ok(CellStatus::Feasible {
                xi: z,
                rule: SolutionRule::BasicSolution,
            });
        }
    }
    let feas = lp::nonnegative_solution(vectors, &target, tol.inequality)?;
    Ok(match feas.solution {
        Some(xi) => CellStatus::Feasible {
            xi,
            rule: SolutionRule::LpVertex,
        },
        None => CellStatus::Infeasible {
            deficit: feas.deficit,
            l1_residual: feas.l1_residual,
        },
    })
}

/// Builds and decides every cell; cells are solved through `exec` and listed
/// by step, then parent index.
pub fn test_regularity(family: &MeasureFamily, f: &AdaptedProcess, tol: &Tolerances, exec: Exec) -> Result<RegularityReport> {
    f.check_shape(family.tree())?;
    let tree = family.tree();
    let keys: Vec<(usize, usize)> = (1..=tree.depth())
        .flat_map(|m| (0..tree.atom_count(m - 1)).map(move |s| (m, s)))
        .collect();
    let cells = exec.map(&keys, |&(m, s)| -> Result<Cell> {
        let (children, vectors, target) = cell_system(family, f, m, s);
        let status = solve_cell(&vectors, &target, tol)?;
        Ok(Cell {
            level: m,
            parent: AtomId::new(m - 1, s),
            children,
            vectors,
            target,
            status,
        })
    });
    let cells = cells.into_iter().collect::<Result<Vec<_>>>()?;
    let supermartingale = !cells
        .iter()
        .any(|c| matches!(c.status, CellStatus::NotSupermartingale { .. }));
    Ok(RegularityReport {
        regular: cells.iter().all(Cell::is_feasible),
        supermartingale,
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionalDecomposition {
    /// `M = f + g`
    pub martingale_part: AdaptedProcess,
    /// `g_m - g_{m-1}` on level-`m` atoms (level 0 is zero).
    pub increments: AdaptedProcess,
    /// `g`, non-decreasing along every path, `g_0 = 0`.
    pub cumulative: AdaptedProcess,
    /// Deterministic stopping levels `tau_s = s`.
    pub schedule: Vec<usize>,
    /// For each `tau_s`: the stopped pair `(stop(f, s), stop(g, s))` sums to a
    /// martingale.
    pub stopped_verified: Vec<bool>,
    /// Largest `|E^{P_i}{M_m | F_{m-1}} - M_{m-1}|` over measures and atoms.
    pub martingale_error: f64,
    pub rules: Vec<(usize, usize, SolutionRule)>,
}

/// Largest one-step martingale defect of `p` over all vertex measures.
pub fn martingale_defect(family: &MeasureFamily, p: &AdaptedProcess) -> f64 {
    let mut worst = 0.0f64;
    for m in 1..=family.depth() {
        for i in 0..family.k() {
            let e = one_step_expectation(family, i, p, m);
            for (a, b) in e.iter().zip(&p.levels[m - 1]) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

/// Increments and their running sums from a fully feasible report.
fn assemble(family: &MeasureFamily, report: &RegularityReport) -> (AdaptedProcess, AdaptedProcess) {
    let tree = family.tree();
    let mut increments = AdaptedProcess::zeros(tree);
    for cell in &report.cells {
        if let CellStatus::Feasible { xi, .. } = &cell.status {
            for (&j, x) in cell.children.iter().zip(xi) {
                increments.levels[cell.level][j] = *x;
            }
        }
    }
    let mut cumulative = AdaptedProcess::zeros(tree);
    for m in 1..=tree.depth() {
        for s in 0..tree.atom_count(m) {
            cumulative.levels[m][s] = cumulative.levels[m - 1][tree.parent(m, s)] + increments.levels[m][s];
        }
    }
    (increments, cumulative)
}

/// Optional Doob decomposition of a regular supermartingale.
pub fn decompose(family: &MeasureFamily, f: &AdaptedProcess, tol: &Tolerances, exec: Exec) -> Result<OptionalDecomposition> {
    let report = test_regularity(family, f, tol, exec)?;
    if !report.regular {
        return Err(Error::NotRegular {
            cells: report.failing_cells(),
            report: Box::new(report),
        });
    }
    decompose_from_report(family, f, &report)
}

pub fn decompose_from_report(family: &MeasureFamily, f: &AdaptedProcess, report: &RegularityReport) -> Result<OptionalDecomposition> {
    let tree = family.tree();
    let (increments, cumulative) = assemble(family, report);
    let martingale_part = f.add(&cumulative);
    let martingale_error = martingale_defect(family, &martingale_part);
    let scale = 1.0 + martingale_part.levels.iter().flatten().fold(0.0f64, |a, x| a.max(x.abs()));
    if martingale_error > MARTINGALE_TOL * scale {
        return Err(Error::Degenerate(format!(
            "martingale part fails verification (defect {martingale_error:e})"
        )));
    }
    let schedule: Vec<usize> = (1..=tree.depth()).collect();
    let stopped_verified = schedule
        .iter()
        .map(|&s| -> Result<bool> {
            let stopped = stop(tree, f, s)?.add(&stop(tree, &cumulative, s)?);
            Ok(martingale_defect(family, &stopped) <= MARTINGALE_TOL * scale)
        })
        .collect::<Result<Vec<_>>>()?;
    let rules = report
        .cells
        .iter()
        .filter_map(|c| match c.status {
            CellStatus::Feasible { rule, .. } => Some((c.level, c.parent.index, rule)),
            _ => None,
        })
        .collect();
    Ok(OptionalDecomposition {
        martingale_part,
        increments,
        cumulative,
        schedule,
        stopped_verified,
        martingale_error,
        rules,
    })
}

/// `Psi^j_m = dg_m - E^{P_j}{dg_m | F_{m-1}}` with `dg_m = g_m - g_{m-1}`.
///
/// Verifies `E^{P_j}{Psi^j_m | F_{m-1}} = 0` and
/// `dg_m = f_{m-1} - E^{P_j}{f_m | F_{m-1}} + Psi^j_m` on every atom.
pub fn psi_residuals(family: &MeasureFamily, f: &AdaptedProcess, decomposition: &OptionalDecomposition, j: usize) -> Result<AdaptedProcess> {
    family.check_measure(j)?;
    let tree = family.tree();
    let dg = &decomposition.increments;
    let mut psi = AdaptedProcess::zeros(tree);
    let scale = 1.0 + f.levels.iter().flatten().fold(0.0f64, |a, x| a.max(x.abs()));
    let check = 1e-12 * scale;
    for m in 1..=tree.depth() {
        let e_dg = one_step_expectation(family, j, dg, m);
        let e_f = one_step_expectation(family, j, f, m);
        for s in 0..tree.atom_count(m) {
            let p = tree.parent(m, s);
            psi.levels[m][s] = dg.levels[m][s] - e_dg[p];
            let drift = f.levels[m - 1][p] - e_f[p];
            let gap = (dg.levels[m][s] - drift - psi.levels[m][s]).abs();
            if gap > check {
                return Err(Error::Degenerate(format!(
                    "increment identity fails on {} by {gap:e}",
                    AtomId::new(m, s)
                )));
            }
        }
        let centred = one_step_expectation(family, j, &psi, m);
        if let Some((s, v)) = centred.iter().enumerate().find(|(_, v)| v.abs() > check) {
            return Err(Error::Degenerate(format!(
                "Psi is not centred on {}: {v:e}",
                AtomId::new(m - 1, s)
            )));
        }
    }
    Ok(psi)
}

/// `f_m = max_i E^{P_i}{xi | F_m}`
pub fn sup_process(family: &MeasureFamily, xi: &RandomVariable) -> Result<AdaptedProcess> {
    let tree = family.tree();
    let levels = (0..=tree.depth())
        .map(|n| crate::conditional::sup_cond_exp(family, xi, n).map(|v| v.values))
        .collect::<Result<Vec<_>>>()?;
    Ok(AdaptedProcess { levels })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqualMeansVerdict {
    /// `E^{P_i} xi` per measure.
    pub expectations: Vec<f64>,
    pub expectations_equal: bool,
    /// The sup-process admits a decomposition.
    pub regular: bool,
    /// The sup-process is itself a martingale (decomposition with `g = 0`).
    pub martingale: bool,
    pub failing_cells: Vec<(usize, usize)>,
    pub condition_b: bool,
    /// `expectations_equal == regular`.
    pub iff_holds: bool,
    /// Regular implies equal expectations (holds without condition B).
    pub necessity_holds: bool,
}

/// Compares "all `E^{P_i} xi` coincide" with regularity of the sup-process.
pub fn equal_means_check(family: &MeasureFamily, xi: &RandomVariable, tol: &Tolerances, exec: Exec) -> Result<EqualMeansVerdict> {
    if xi.len() != family.tree().leaf_count() {
        return Err(Error::Shape("random variable length does not match the leaves".into()));
    }
    if xi.values().iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::Precondition("the random variable must be nonnegative".into()));
    }
    let f = sup_process(family, xi)?;
    let expectations: Vec<f64> = (0..family.k())
        .map(|i| crate::conditional::cond_exp(family, i, xi, 0).map(|v| v.values[0]))
        .collect::<Result<_>>()?;
    let top = expectations.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let expectations_equal = expectations
        .iter()
        .all(|e| (top - e) <= tol.inequality * (1.0 + top.abs()));
    let report = test_regularity(family, &f, tol, exec)?;
    let martingale = classify(family, &f, tol)?.classification == Classification::Martingale;
    let regular = report.regular;
    Ok(EqualMeansVerdict {
        expectations,
        expectations_equal,
        regular,
        martingale,
        failing_cells: report.failing_cells(),
        condition_b: family.check_condition_b(tol).passed,
        iff_holds: expectations_equal == regular,
        necessity_holds: !regular || expectations_equal,
    })
}
