//! Finite families of equivalent measures on the leaves of a filtration tree.

use serde::{Deserialize, Serialize};

use crate::filtration::{AtomId, FiltrationTree};
use crate::{Error, Result, Tolerances};

/// `k` strictly positive probability measures given on the leaf atoms.
///
/// Probabilities of coarser atoms are sums over descendant leaves and are
/// cached at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureFamily {
    tree: FiltrationTree,
    leaf: Vec<Vec<f64>>,
    /// `atom[i][n][s] = P_i(A^n_s)`
    atom: Vec<Vec<Vec<f64>>>,
}

/// Bounds `l <= dQ1/dQ2 <= L` over the family and the derived constants of the
/// mixture bound for supermartingale deficits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceBounds {
    pub l: f64,
    #[serde(rename = "L")]
    pub upper: f64,
    /// Largest admissible mixing weight `L / (1 + L)`.
    pub eps_bar: f64,
    /// Deficit factor `l / (1 + L)`.
    pub theorem1_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominationViolation {
    /// Dominated measure (0-based).
    pub measure: usize,
    pub parent: AtomId,
    pub child: AtomId,
    /// `P_i(child) / P_i(parent)`
    pub ratio: f64,
    /// `P_{i0}(child) / P_{i0}(parent)`
    pub candidate_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    /// Candidate dominating measure (0-based).
    pub i0: usize,
    pub passed: bool,
    pub violations: Vec<DominationViolation>,
}

/// Outcome of the one-step domination check (condition B).
///
/// Parents range over levels `1..depth`; the root transition is not
/// constrained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionBReport {
    pub passed: bool,
    /// First candidate without violations.
    pub i0: Option<usize>,
    pub candidates: Vec<CandidateReport>,
}

impl MeasureFamily {
    pub fn new(tree: FiltrationTree, leaf_probabilities: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_tolerances(tree, leaf_probabilities, &Tolerances::default())
    }

    pub fn with_tolerances(
        tree: FiltrationTree,
        leaf_probabilities: Vec<Vec<f64>>,
        tol: &Tolerances,
    ) -> Result<Self> {
        if leaf_probabilities.is_empty() {
            return Err(Error::Measures("at least one measure is required".into()));
        }
        let leaves = tree.leaf_count();
        for (i, row) in leaf_probabilities.iter().enumerate() {
            if row.len() != leaves {
                return Err(Error::Measures(format!(
                    "measure {i} has {} leaf probabilities, tree has {leaves} leaves",
                    row.len()
                )));
            }
            if let Some((leaf, &value)) = row.iter().enumerate().find(|(_, p)| !(**p > 0.0) || !p.is_finite()) {
                return Err(Error::Equivalence {
                    measure: i,
                    leaf,
                    value,
                });
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > tol.input {
                return Err(Error::Measures(format!("measure {i} sums to {total}")));
            }
        }
        let atom = leaf_probabilities.iter().map(|row| tree.aggregate(row)).collect();
        Ok(Self {
            tree,
            leaf: leaf_probabilities,
            atom,
        })
    }

    pub fn k(&self) -> usize {
        self.leaf.len()
    }

    pub fn tree(&self) -> &FiltrationTree {
        &self.tree
    }

    pub fn depth(&self) -> usize {
        self.tree.depth()
    }

    pub fn leaf_probabilities(&self, measure: usize) -> &[f64] {
        &self.leaf[measure]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.leaf
    }

    /// `P_i` of every atom on one level.
    pub fn level_probabilities(&self, measure: usize, level: usize) -> &[f64] {
        &self.atom[measure][level]
    }

    /// `P_i(A^n_s)` without bounds checks beyond slice indexing.
    #[inline]
    pub fn prob(&self, measure: usize, level: usize, index: usize) -> f64 {
        self.atom[measure][level][index]
    }

    /// `P_i(child | parent)` for the level-`level` atom `child`.
    #[inline]
    pub fn transition(&self, measure: usize, level: usize, child: usize) -> f64 {
        let parent = self.tree.parent(level, child);
        self.atom[measure][level][child] / self.atom[measure][level - 1][parent]
    }

    pub fn check_measure(&self, measure: usize) -> Result<()> {
        if measure >= self.k() {
            return Err(Error::Index(format!(
                "measure {measure} out of range (family has {})",
                self.k()
            )));
        }
        Ok(())
    }

    pub fn check_level(&self, level: usize) -> Result<()> {
        if level > self.depth() {
            return Err(Error::Index(format!(
                "level {level} out of range 0..={}",
                self.depth()
            )));
        }
        Ok(())
    }

    pub fn atom_probability(&self, measure: usize, atom: AtomId) -> Result<f64> {
        self.check_measure(measure)?;
        if !self.tree.contains(atom) {
            return Err(Error::UnknownAtom(atom));
        }
        Ok(self.atom[measure][atom.level][atom.index])
    }

    pub fn equivalence_bounds(&self) -> EquivalenceBounds {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for a in &self.leaf {
            for b in &self.leaf {
                for (pa, pb) in a.iter().zip(b) {
                    let r = pa / pb;
                    lo = lo.min(r);
                    hi = hi.max(r);
                }
            }
        }
        EquivalenceBounds {
            l: lo,
            upper: hi,
            eps_bar: hi / (1.0 + hi),
            theorem1_factor: lo / (1.0 + hi),
        }
    }

    /// Literal one-step domination check for every candidate `i0`.
    pub fn check_condition_b(&self, tol: &Tolerances) -> ConditionBReport {
        let depth = self.depth();
        let candidates: Vec<CandidateReport> = (0..self.k())
            .map(|i0| {
                let mut violations = Vec::new();
                for n in 1..depth {
                    for s in 0..self.tree.atom_count(n) {
                        for &j in self.tree.children(n, s) {
                            let cand = self.transition(i0, n + 1, j);
                            for i in 0..self.k() {
                                let r = self.transition(i, n + 1, j);
                                if r > cand + tol.identity {
                                    violations.push(DominationViolation {
                                        measure: i,
                                        parent: AtomId::new(n, s),
                                        child: AtomId::new(n + 1, j),
                                        ratio: r,
                                        candidate_ratio: cand,
                                    });
                                }
                            }
                        }
                    }
                }
                CandidateReport {
                    i0,
                    passed: violations.is_empty(),
                    violations,
                }
            })
            .collect();
        let i0 = candidates.iter().find(|c| c.passed).map(|c| c.i0);
        ConditionBReport {
            passed: i0.is_some(),
            i0,
            candidates,
        }
    }

    pub fn validate_weights(&self, weights: &[f64], tol: &Tolerances) -> Result<()> {
        if weights.len() != self.k() {
            return Err(Error::Weights(format!(
                "{} weights for {} measures",
                weights.len(),
                self.k()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0)) {
            return Err(Error::Weights(format!("negative weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > tol.input {
            return Err(Error::Weights(format!("weights sum to {total}")));
        }
        Ok(())
    }

    /// Leafwise convex combination `sum_i alpha_i P_i`.
    pub fn mixture(&self, weights: &[f64]) -> Result<Vec<f64>> {
        self.validate_weights(weights, &Tolerances::default())?;
        Ok(self.mixture_unchecked(weights))
    }

    pub(crate) fn mixture_unchecked(&self, weights: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.tree.leaf_count()];
        for (w, row) in weights.iter().zip(&self.leaf) {
            if *w == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(row) {
                *o += w * p;
            }
        }
        out
    }

    /// Values of `E^{P_base}{dP_target/dP_base | F_level}` on the level's atoms,
    /// i.e. `P_target(A) / P_base(A)`.
    pub fn rn_conditional(&self, target: usize, base: usize, level: usize) -> Result<Vec<f64>> {
        self.check_measure(target)?;
        self.check_measure(base)?;
        self.check_level(level)?;
        Ok(self.atom[target][level]
            .iter()
            .zip(&self.atom[base][level])
            .map(|(a, b)| a / b)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_abs_diff_eq;

    #[test]
    fn d1_atom_probabilities() {
        let fam = fixtures::d1();
        assert_eq!(fam.atom_probability(0, AtomId::new(1, 0)).unwrap(), 0.5);
        assert_abs_diff_eq!(fam.atom_probability(1, AtomId::new(1, 0)).unwrap(), 0.5, epsilon = 1e-15);
        for i in 0..2 {
            assert_abs_diff_eq!(fam.atom_probability(i, AtomId::ROOT).unwrap(), 1.0, epsilon = 1e-15);
        }
        assert!(matches!(
            fam.atom_probability(0, AtomId::new(2, 7)),
            Err(Error::UnknownAtom(_))
        ));
    }

    #[test]
    fn d1_equivalence_bounds() {
        let b = fixtures::d1().equivalence_bounds();
        assert_abs_diff_eq!(b.l, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(b.upper, 1.25, epsilon = 1e-12);
        assert_abs_diff_eq!(b.eps_bar, 1.25 / 2.25, epsilon = 1e-12);
        assert_abs_diff_eq!(b.theorem1_factor, 0.8 / 2.25, epsilon = 1e-12);
    }

    #[test]
    fn single_and_identical_measures_have_unit_bounds() {
        let tree = FiltrationTree::build(&[2, 2]).unwrap();
        let one = MeasureFamily::new(tree.clone(), vec![vec![0.25; 4]]).unwrap();
        let b = one.equivalence_bounds();
        assert_eq!((b.l, b.upper, b.eps_bar), (1.0, 1.0, 0.5));
        let row = vec![0.1, 0.2, 0.3, 0.4];
        let two = MeasureFamily::new(tree, vec![row.clone(), row]).unwrap();
        let b = two.equivalence_bounds();
        assert_eq!((b.l, b.upper), (1.0, 1.0));
    }

    #[test]
    fn nonpositive_leaf_is_an_equivalence_error() {
        let tree = FiltrationTree::build(&[2]).unwrap();
        assert!(matches!(
            MeasureFamily::new(tree.clone(), vec![vec![1.0, 0.0]]),
            Err(Error::Equivalence { measure: 0, leaf: 1, .. })
        ));
        assert!(matches!(
            MeasureFamily::new(tree, vec![vec![0.5, 0.6]]),
            Err(Error::Measures(_))
        ));
    }

    #[test]
    fn d1_condition_b_violations() {
        let fam = fixtures::d1();
        let report = fam.check_condition_b(&Tolerances::default());
        assert!(!report.passed);
        let cand2 = &report.candidates[1];
        // child C1 of B1 holds (0.5 <= 0.6); child C2 fails (0.5 > 0.4)
        let v = cand2
            .violations
            .iter()
            .find(|v| v.parent == AtomId::new(1, 0))
            .unwrap();
        assert_eq!((v.measure, v.child), (0, AtomId::new(2, 1)));
        assert_abs_diff_eq!(v.ratio, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(v.candidate_ratio, 0.4, epsilon = 1e-12);
        assert!(!cand2.violations.iter().any(|v| v.child == AtomId::new(2, 0)));
    }

    #[test]
    fn identical_measures_pass_condition_b_with_every_candidate() {
        let tree = FiltrationTree::build(&[2, 3]).unwrap();
        let row: Vec<f64> = (1..=6).map(|x| x as f64 / 21.0).collect();
        let fam = MeasureFamily::new(tree, vec![row.clone(), row.clone(), row]).unwrap();
        let report = fam.check_condition_b(&Tolerances::default());
        assert!(report.passed);
        assert!(report.candidates.iter().all(|c| c.passed));
        assert_eq!(report.i0, Some(0));
    }

    #[test]
    fn mixture_cases() {
        let fam = fixtures::d1();
        assert_eq!(fam.mixture(&[1.0, 0.0]).unwrap(), fam.leaf_probabilities(0));
        let m = fam.mixture(&[0.5, 0.5]).unwrap();
        for (a, b) in m.iter().zip([0.275, 0.225, 0.275, 0.225]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert!(matches!(fam.mixture(&[0.3, 0.8]), Err(Error::Weights(_))));
        assert!(matches!(fam.mixture(&[1.5, -0.5]), Err(Error::Weights(_))));
    }

    #[test]
    fn rn_conditional_values() {
        let fam = fixtures::d1();
        assert_eq!(fam.rn_conditional(1, 0, 0).unwrap(), vec![1.0]);
        let v = fam.rn_conditional(1, 0, 1).unwrap();
        assert_abs_diff_eq!(v[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], 1.0, epsilon = 1e-12);
        let v = fam.rn_conditional(1, 0, 2).unwrap();
        for (a, b) in v.iter().zip([1.2, 0.8, 1.2, 0.8]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn rn_ratio_identity_on_d1() {
        let fam = fixtures::d1();
        let fine = fam.rn_conditional(1, 0, 2).unwrap();
        let coarse = fam.rn_conditional(1, 0, 1).unwrap();
        // atom C1: P2(C1) P1(B1) / (P2(B1) P1(C1)) = 0.3*0.5/(0.5*0.25)
        let formula = 0.3 * 0.5 / (0.5 * 0.25);
        assert_abs_diff_eq!(fine[0] / coarse[0], formula, epsilon = 1e-12);
        assert_abs_diff_eq!(formula, 1.2, epsilon = 1e-12);
    }
}
