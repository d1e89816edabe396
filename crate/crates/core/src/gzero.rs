//! Normalized densities (`E^{P_i} xi = 1` for every measure) and the local
//! regular supermartingales generated from them.

use serde::{Deserialize, Serialize};

use crate::conditional::{AdaptedValues, RandomVariable};
use crate::cone::{self, ConeSystem, SolutionFamily};
use crate::decomposition::{decompose, martingale_defect, test_regularity, OptionalDecomposition, MARTINGALE_TOL};
use crate::filtration::AtomId;
use crate::measures::MeasureFamily;
use crate::process::{classify, AdaptedProcess, Classification};
use crate::{Error, Exec, Result, Tolerances};

/// Tolerance on the moment identities `sum_j P_i(A_j) xi_j = 1`.
pub const MOMENT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Index into the basic solutions, or `None` for the unit element.
    pub basic_solution: Option<usize>,
    pub gamma: Option<Vec<f64>>,
}

/// A nonnegative `F_n`-measurable variable with unit expectation under every
/// measure of the family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GZeroElement {
    pub level: usize,
    pub values: Vec<f64>,
    pub provenance: Option<Provenance>,
}

impl GZeroElement {
    pub fn new(family: &MeasureFamily, level: usize, values: Vec<f64>) -> Result<Self> {
        let e = Self {
            level,
            values,
            provenance: None,
        };
        e.validate(family)?;
        Ok(e)
    }

    /// Largest `|sum_j P_i(A_j) xi_j - 1|` over the measures.
    pub fn moment_error(&self, family: &MeasureFamily) -> f64 {
        (0..family.k())
            .map(|i| {
                let s: f64 = family
                    .level_probabilities(i, self.level)
                    .iter()
                    .zip(&self.values)
                    .map(|(p, x)| p * x)
                    .sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn validate(&self, family: &MeasureFamily) -> Result<()> {
        family.check_level(self.level)?;
        if self.values.len() != family.tree().atom_count(self.level) {
            return Err(Error::Shape(format!(
                "{} values for {} atoms of level {}",
                self.values.len(),
                family.tree().atom_count(self.level),
                self.level
            )));
        }
        if let Some(x) = self.values.iter().find(|x| !(**x >= 0.0)) {
            return Err(Error::Precondition(format!("density has negative value {x}")));
        }
        let err = self.moment_error(family);
        if err > MOMENT_TOL {
            return Err(Error::Precondition(format!(
                "expectations differ from 1 by up to {err:e}"
            )));
        }
        Ok(())
    }

    pub fn to_random_variable(&self, family: &MeasureFamily) -> RandomVariable {
        AdaptedValues::new(self.level, self.values.clone()).lift(family.tree())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GZeroFamily {
    pub level: usize,
    pub system: ConeSystem,
    pub rank: usize,
    /// Absent when the target is not strictly inside the cone of any basis.
    pub solutions: Option<SolutionFamily>,
    pub failure: Option<String>,
    /// The unit element first, then one element per basic solution.
    pub elements: Vec<GZeroElement>,
}

/// Moment system `sum_j P_i(A^n_j) xi_j = 1` of level `n` and its solutions.
pub fn solve_g0(family: &MeasureFamily, level: usize, tol: &Tolerances) -> Result<GZeroFamily> {
    family.check_level(level)?;
    let count = family.tree().atom_count(level);
    let vectors: Vec<Vec<f64>> = (0..count)
        .map(|j| (0..family.k()).map(|i| family.prob(i, level, j)).collect())
        .collect();
    let system = ConeSystem::new(vectors, vec![1.0; family.k()])?;
    let rank = system.rank(tol);
    let mut elements = vec![GZeroElement::new(family, level, vec![1.0; count])?];
    let (solutions, failure) = match cone::solve(&system, tol) {
        Ok(sol) => {
            for (n, z) in sol.basic_solutions.iter().enumerate() {
                let mut e = GZeroElement::new(family, level, z.clone())?;
                e.provenance = Some(Provenance {
                    basic_solution: Some(n),
                    gamma: None,
                });
                elements.push(e);
            }
            (Some(sol), None)
        }
        Err(Error::ConeMembership(msg)) => (None, Some(msg)),
        Err(e) => return Err(e),
    };
    elements[0].provenance = Some(Provenance {
        basic_solution: None,
        gamma: None,
    });
    Ok(GZeroFamily {
        level,
        system,
        rank,
        solutions,
        failure,
        elements,
    })
}

/// Element obtained from mixing weights over the basic solutions.
pub fn g0_from_weights(family: &MeasureFamily, g0: &GZeroFamily, gamma: &[f64], tol: &Tolerances) -> Result<GZeroElement> {
    let sol = g0
        .solutions
        .as_ref()
        .ok_or_else(|| Error::ConeMembership(g0.failure.clone().unwrap_or_default()))?;
    let z = cone::combine(sol, gamma, tol)?;
    let mut e = GZeroElement::new(family, g0.level, z.values)?;
    e.provenance = Some(Provenance {
        basic_solution: None,
        gamma: Some(gamma.to_vec()),
    });
    Ok(e)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityMartingale {
    /// `M_m = E^{P_1}{xi | F_m}`
    pub process: AdaptedProcess,
    /// Largest `|E^{P_i}{xi|F_m} - E^{P_1}{xi|F_m}|`.
    pub deviation: f64,
    pub measure_independent: bool,
    /// `M` is a martingale under every measure of the family.
    pub martingale: bool,
    pub condition_b: bool,
}

/// Conditional expectations of a normalized density; reports how far they
/// depend on the measure.
pub fn martingale_from_xi(family: &MeasureFamily, xi: &GZeroElement, tol: &Tolerances) -> Result<DensityMartingale> {
    xi.validate(family)?;
    let tree = family.tree();
    let rv = xi.to_random_variable(family);
    let per_measure: Vec<AdaptedProcess> = (0..family.k())
        .map(|i| AdaptedProcess::conditional_expectations(tree, family.leaf_probabilities(i), &rv))
        .collect();
    let deviation = per_measure[1..]
        .iter()
        .map(|p| p.max_abs_diff(&per_measure[0]))
        .fold(0.0, f64::max);
    let process = per_measure.into_iter().next().expect("k >= 1");
    let martingale = classify(family, &process, tol)?.classification == Classification::Martingale
        && martingale_defect(family, &process) <= MARTINGALE_TOL;
    Ok(DensityMartingale {
        process,
        measure_independent: deviation <= MOMENT_TOL,
        deviation,
        martingale,
        condition_b: family.check_condition_b(tol).passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    /// `h_m = f_m E^{P_1}{xi | F_m}`
    pub process: AdaptedProcess,
    /// `(f_{m-1} - f_m) E^{P_1}{xi | F_m}`
    pub increments: AdaptedProcess,
    /// `h` plus the running sum of the increments.
    pub martingale_part: AdaptedProcess,
    /// One-step martingale defect of `martingale_part`.
    pub formula_defect: f64,
    pub decomposition: OptionalDecomposition,
}

/// Checks that `f` never increases from an atom to its children.
pub fn check_nonincreasing(family: &MeasureFamily, f: &AdaptedProcess, tol: &Tolerances) -> Result<()> {
    f.check_shape(family.tree())?;
    let tree = family.tree();
    for m in 1..=tree.depth() {
        for s in 0..tree.atom_count(m) {
            let p = tree.parent(m, s);
            if f.levels[m][s] > f.levels[m - 1][p] + tol.inequality {
                return Err(Error::Precondition(format!(
                    "process increases on {}: {} > {} on its parent",
                    AtomId::new(m, s),
                    f.levels[m][s],
                    f.levels[m - 1][p]
                )));
            }
        }
    }
    Ok(())
}

/// `h_m = f_m E{xi | F_m}` for a pathwise nonincreasing `f`, together with its
/// explicit increments and a solver decomposition.
pub fn local_regular_generator(
    family: &MeasureFamily,
    f: &AdaptedProcess,
    xi: &GZeroElement,
    tol: &Tolerances,
    exec: Exec,
) -> Result<Generator> {
    check_nonincreasing(family, f, tol)?;
    xi.validate(family)?;
    let tree = family.tree();
    let density = AdaptedProcess::conditional_expectations(tree, family.leaf_probabilities(0), &xi.to_random_variable(family));
    let mut process = AdaptedProcess::zeros(tree);
    let mut increments = AdaptedProcess::zeros(tree);
    for m in 0..=tree.depth() {
        for s in 0..tree.atom_count(m) {
            process.levels[m][s] = f.levels[m][s] * density.levels[m][s];
            if m > 0 {
                let p = tree.parent(m, s);
                increments.levels[m][s] = (f.levels[m - 1][p] - f.levels[m][s]) * density.levels[m][s];
            }
        }
    }
    let mut martingale_part = process.clone();
    let mut running = AdaptedProcess::zeros(tree);
    for m in 1..=tree.depth() {
        for s in 0..tree.atom_count(m) {
            running.levels[m][s] = running.levels[m - 1][tree.parent(m, s)] + increments.levels[m][s];
            martingale_part.levels[m][s] += running.levels[m][s];
        }
    }
    let formula_defect = martingale_defect(family, &martingale_part);
    let decomposition = decompose(family, &process, tol, exec)?;
    Ok(Generator {
        process,
        increments,
        martingale_part,
        formula_defect,
        decomposition,
    })
}

/// `sum_i C_i h_i` with `C_i >= 0`; fails with the regularity report when the
/// combination is not regular.
pub fn class_k_combination(
    family: &MeasureFamily,
    terms: &[(f64, AdaptedProcess)],
    tol: &Tolerances,
    exec: Exec,
) -> Result<AdaptedProcess> {
    if terms.is_empty() {
        return Err(Error::Precondition("no terms".into()));
    }
    let mut total = AdaptedProcess::zeros(family.tree());
    for (c, h) in terms {
        if !(*c >= 0.0) {
            return Err(Error::Precondition(format!("coefficient {c} is negative")));
        }
        h.check_shape(family.tree())?;
        total = total.add(&h.scale(*c));
    }
    let report = test_regularity(family, &total, tol, exec)?;
    if !report.regular {
        return Err(Error::NotRegular {
            cells: report.failing_cells(),
            report: Box::new(report),
        });
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representation {
    /// `(f_N + g_N) / f_0` on the leaves.
    pub xi: GZeroElement,
    /// `f_0 E^{P}{xi | F_m}`
    pub martingale: AdaptedProcess,
    /// `-g`, nonincreasing.
    pub nonincreasing: AdaptedProcess,
    pub reconstruction_error: f64,
    pub moment_error: f64,
}

/// Writes a nonnegative regular supermartingale as `f_0 E{xi|F_m} - g_m`.
pub fn theorem12_representation(family: &MeasureFamily, f: &AdaptedProcess, tol: &Tolerances, exec: Exec) -> Result<Representation> {
    f.check_shape(family.tree())?;
    let f0 = f.levels[0][0];
    if f0 == 0.0 {
        return Err(Error::Degenerate("f_0 = 0".into()));
    }
    if f.min_value() < -tol.inequality {
        return Err(Error::Precondition("process must be nonnegative".into()));
    }
    let d = decompose(family, f, tol, exec)?;
    let n = family.depth();
    let values: Vec<f64> = d.martingale_part.levels[n].iter().map(|x| x / f0).collect();
    let xi = GZeroElement {
        level: n,
        values,
        provenance: None,
    };
    let moment_error = xi.moment_error(family);
    xi.validate(family)?;
    let tree = family.tree();
    let martingale = AdaptedProcess::conditional_expectations(tree, family.leaf_probabilities(0), &xi.to_random_variable(family))
        .scale(f0);
    let nonincreasing = d.cumulative.scale(-1.0);
    let reconstruction_error = martingale.add(&nonincreasing).max_abs_diff(f);
    if reconstruction_error > MARTINGALE_TOL * (1.0 + f0.abs()) {
        return Err(Error::Degenerate(format!(
            "representation does not reproduce the process (error {reconstruction_error:e})"
        )));
    }
    Ok(Representation {
        xi,
        martingale,
        nonincreasing,
        reconstruction_error,
        moment_error,
    })
}
