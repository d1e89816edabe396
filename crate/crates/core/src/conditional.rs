//! Conditional expectations on atomic filtrations.
//!
//! On an atom `A` of level `n`, `E^P{xi | F_n} = sum_{e in A} P(e) xi(e) / P(A)`.
//! Besides the single-measure form this module provides the mixture form (two
//! independent routes), the upper envelope over the family and the density
//! kernel that converts conditional expectations between measures.

use serde::{Deserialize, Serialize};

use crate::filtration::{AtomId, FiltrationTree};
use crate::measures::MeasureFamily;
use crate::{Error, Result, Tolerances};

/// One real value per leaf atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RandomVariable(pub Vec<f64>);

/// One real value per atom of a fixed level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptedValues {
    pub level: usize,
    pub values: Vec<f64>,
}

impl RandomVariable {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn constant(tree: &FiltrationTree, c: f64) -> Self {
        Self(vec![c; tree.leaf_count()])
    }

    /// Indicator of an atom.
    pub fn indicator(tree: &FiltrationTree, atom: AtomId) -> Result<Self> {
        let mut v = vec![0.0; tree.leaf_count()];
        for leaf in tree.leaves_of(atom)? {
            v[leaf] = 1.0;
        }
        Ok(Self(v))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mul(&self, other: &RandomVariable) -> RandomVariable {
        RandomVariable(self.0.iter().zip(&other.0).map(|(a, b)| a * b).collect())
    }

    /// Leafwise maximum of several variables.
    pub fn max_of(vars: &[RandomVariable]) -> RandomVariable {
        let mut out = vars[0].0.clone();
        for v in &vars[1..] {
            for (o, x) in out.iter_mut().zip(&v.0) {
                *o = o.max(*x);
            }
        }
        RandomVariable(out)
    }
}

impl AdaptedValues {
    pub fn new(level: usize, values: Vec<f64>) -> Self {
        Self { level, values }
    }

    /// Extends a level-`n` slice to the leaves (constant on each atom).
    pub fn lift(&self, tree: &FiltrationTree) -> RandomVariable {
        RandomVariable(
            tree.ancestor_map(self.level)
                .iter()
                .map(|&a| self.values[a])
                .collect(),
        )
    }

    pub fn max_abs_diff(&self, other: &AdaptedValues) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_variable(family: &MeasureFamily, xi: &RandomVariable) -> Result<()> {
    if xi.len() != family.tree().leaf_count() {
        return Err(Error::Shape(format!(
            "random variable has {} values, tree has {} leaves",
            xi.len(),
            family.tree().leaf_count()
        )));
    }
    Ok(())
}

/// Conditional expectation under an arbitrary leaf measure (not necessarily
/// normalized, strictly positive).
pub fn cond_exp_leaf_measure(
    tree: &FiltrationTree,
    leaf_measure: &[f64],
    xi: &RandomVariable,
    level: usize,
) -> AdaptedValues {
    let count = tree.atom_count(level);
    let mut num = vec![0.0; count];
    let mut den = vec![0.0; count];
    for ((&a, p), x) in tree.ancestor_map(level).iter().zip(leaf_measure).zip(&xi.0) {
        num[a] += p * x;
        den[a] += p;
    }
    AdaptedValues::new(level, num.iter().zip(&den).map(|(n, d)| n / d).collect())
}

pub fn cond_exp(
    family: &MeasureFamily,
    measure: usize,
    xi: &RandomVariable,
    level: usize,
) -> Result<AdaptedValues> {
    family.check_measure(measure)?;
    family.check_level(level)?;
    check_variable(family, xi)?;
    Ok(cond_exp_leaf_measure(
        family.tree(),
        family.leaf_probabilities(measure),
        xi,
        level,
    ))
}

/// Conditional expectation under `Q = sum_i alpha_i P_i`.
///
/// Computed directly from the mixed leaf measure and, independently, from the
/// vertex conditional expectations weighted by `alpha_i E^{P_1}{dP_i/dP_1|F_n}`.
/// The two routes must agree to `tol.identity` (relative).
pub fn cond_exp_mixture(
    family: &MeasureFamily,
    weights: &[f64],
    xi: &RandomVariable,
    level: usize,
    tol: &Tolerances,
) -> Result<AdaptedValues> {
    family.validate_weights(weights, tol)?;
    family.check_level(level)?;
    check_variable(family, xi)?;
    let direct = cond_exp_leaf_measure(family.tree(), &family.mixture_unchecked(weights), xi, level);

    let count = family.tree().atom_count(level);
    let mut num = vec![0.0; count];
    let mut den = vec![0.0; count];
    for (i, &alpha) in weights.iter().enumerate() {
        if alpha == 0.0 {
            continue;
        }
        let density = family.rn_conditional(i, 0, level)?;
        let vertex = cond_exp(family, i, xi, level)?;
        for s in 0..count {
            num[s] += alpha * density[s] * vertex.values[s];
            den[s] += alpha * density[s];
        }
    }
    for s in 0..count {
        let via_ratio = num[s] / den[s];
        let d = direct.values[s];
        if (via_ratio - d).abs() > tol.identity * (1.0 + d.abs()) {
            return Err(Error::Degenerate(format!(
                "mixture routes disagree on {}: {d} vs {via_ratio}",
                AtomId::new(level, s)
            )));
        }
    }
    Ok(direct)
}

/// Atomwise maximum over the vertex measures of `E^{P_i}{xi | F_n}`; equals the
/// supremum over all mixtures.
pub fn sup_cond_exp(family: &MeasureFamily, xi: &RandomVariable, level: usize) -> Result<AdaptedValues> {
    family.check_level(level)?;
    check_variable(family, xi)?;
    let mut best = cond_exp(family, 0, xi, level)?;
    for i in 1..family.k() {
        let v = cond_exp(family, i, xi, level)?;
        for (b, x) in best.values.iter_mut().zip(v.values) {
            *b = b.max(x);
        }
    }
    Ok(best)
}

/// Density `phi_n = (dP_target/dP_base) / E^{P_base}{dP_target/dP_base | F_n}`,
/// which satisfies `E^{P_target}{eta|F_n} = E^{P_base}{eta phi_n | F_n}`.
pub fn measure_change_kernel(
    family: &MeasureFamily,
    target: usize,
    base: usize,
    level: usize,
) -> Result<RandomVariable> {
    let coarse = family.rn_conditional(target, base, level)?;
    let tree = family.tree();
    let pt = family.leaf_probabilities(target);
    let pb = family.leaf_probabilities(base);
    Ok(RandomVariable(
        tree.ancestor_map(level)
            .iter()
            .enumerate()
            .map(|(leaf, &a)| (pt[leaf] / pb[leaf]) / coarse[a])
            .collect(),
    ))
}
