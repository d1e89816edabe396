//! Adapted processes on a filtration tree and their classification relative
//! to a measure family.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditional::{cond_exp_leaf_measure, RandomVariable};
use crate::filtration::{AtomId, FiltrationTree};
use crate::measures::MeasureFamily;
use crate::{Error, Exec, Result, Tolerances};

/// Values of an adapted process: `levels[m][s] = f_m(A^m_s)`.
///
/// Serializes as an array of arrays aligned with the tree levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AdaptedProcess {
    pub levels: Vec<Vec<f64>>,
}

impl AdaptedProcess {
    pub fn new(tree: &FiltrationTree, levels: Vec<Vec<f64>>) -> Result<Self> {
        let p = Self { levels };
        p.check_shape(tree)?;
        Ok(p)
    }

    pub fn constant(tree: &FiltrationTree, c: f64) -> Self {
        Self {
            levels: (0..=tree.depth()).map(|n| vec![c; tree.atom_count(n)]).collect(),
        }
    }

    pub fn zeros(tree: &FiltrationTree) -> Self {
        Self::constant(tree, 0.0)
    }

    /// `m -> E^{P}{xi | F_m}` for the given leaf measure.
    pub fn conditional_expectations(tree: &FiltrationTree, leaf_measure: &[f64], xi: &RandomVariable) -> Self {
        Self {
            levels: (0..=tree.depth())
                .map(|n| cond_exp_leaf_measure(tree, leaf_measure, xi, n).values)
                .collect(),
        }
    }

    pub fn check_shape(&self, tree: &FiltrationTree) -> Result<()> {
        if self.levels.len() != tree.depth() + 1 {
            return Err(Error::Shape(format!(
                "process has {} levels, tree has {}",
                self.levels.len(),
                tree.depth() + 1
            )));
        }
        for (n, slice) in self.levels.iter().enumerate() {
            if slice.len() != tree.atom_count(n) {
                return Err(Error::Shape(format!(
                    "level {n} has {} values, tree has {} atoms",
                    slice.len(),
                    tree.atom_count(n)
                )));
            }
            if let Some(v) = slice.iter().find(|v| !v.is_finite()) {
                return Err(Error::Shape(format!("level {n} contains non-finite value {v}")));
            }
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, m: usize) -> &[f64] {
        &self.levels[m]
    }

    /// Last slice as a random variable (the leaves are the deepest atoms).
    pub fn terminal(&self) -> RandomVariable {
        RandomVariable(self.levels[self.depth()].clone())
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            levels: self
                .levels
                .iter()
                .zip(&other.levels)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect())
                .collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            levels: self.levels.iter().map(|s| s.iter().map(|x| c * x).collect()).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.levels
            .iter()
            .zip(&other.levels)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.levels.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `E^{P_i}{f_m | F_{m-1}}` on the level-`(m-1)` atoms.
pub fn one_step_expectation(family: &MeasureFamily, measure: usize, f: &AdaptedProcess, m: usize) -> Vec<f64> {
    let tree = family.tree();
    (0..tree.atom_count(m - 1))
        .map(|s| {
            tree.children(m - 1, s)
                .iter()
                .map(|&j| family.transition(measure, m, j) * f.levels[m][j])
                .sum()
        })
        .collect()
}

/// One-step expectation under an arbitrary (strictly positive) leaf measure.
pub fn one_step_expectation_leaf(tree: &FiltrationTree, leaf_measure: &[f64], f: &AdaptedProcess, m: usize) -> Vec<f64> {
    let probs = tree.aggregate(leaf_measure);
    (0..tree.atom_count(m - 1))
        .map(|s| {
            tree.children(m - 1, s)
                .iter()
                .map(|&j| probs[m][j] * f.levels[m][j])
                .sum::<f64>()
                / probs[m - 1][s]
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Martingale,
    Supermartingale,
    Neither,
}

/// First atom where `E^{P_i}{f_m | F_{m-1}} <= f_{m-1}` fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub measure: usize,
    pub level: usize,
    pub parent: AtomId,
    /// `E^{P_i}{f_m | parent}`
    pub lhs: f64,
    /// `f_{m-1}(parent)`
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyReport {
    pub classification: Classification,
    pub witness: Option<Witness>,
    /// First atom where equality fails (present for supermartingales).
    pub strict_witness: Option<Witness>,
    /// Verdict of the independent multi-step recomputation, when it was run
    /// (trees of depth at most 3).
    pub multistep: Option<Classification>,
}

impl ClassifyReport {
    pub fn is_supermartingale(&self) -> bool {
        self.classification != Classification::Neither
    }

    pub fn is_martingale(&self) -> bool {
        self.classification == Classification::Martingale
    }
}

fn classify_with(
    depth: usize,
    k: usize,
    f: &AdaptedProcess,
    tol: f64,
    expectation: impl Fn(usize, usize) -> Vec<f64>,
) -> (Classification, Option<Witness>, Option<Witness>) {
    let mut witness = None;
    let mut strict = None;
    for m in 1..=depth {
        for i in 0..k {
            let e = expectation(i, m);
            for (s, (&lhs, &rhs)) in e.iter().zip(&f.levels[m - 1]).enumerate() {
                let w = || Witness {
                    measure: i,
                    level: m,
                    parent: AtomId::new(m - 1, s),
                    lhs,
                    rhs,
                };
                if lhs > rhs + tol && witness.is_none() {
                    witness = Some(w());
                }
                if lhs < rhs - tol && strict.is_none() {
                    strict = Some(w());
                }
            }
        }
    }
    let class = if witness.is_some() {
        Classification::Neither
    } else if strict.is_some() {
        Classification::Supermartingale
    } else {
        Classification::Martingale
    };
    (class, witness, strict)
}

/// Direct check of `E^{P_i}{f_m | F_n} <= f_n` for every pair `n < m`, lifting
/// `f_m` to the leaves and conditioning from there.
fn classify_multistep(family: &MeasureFamily, f: &AdaptedProcess, tol: f64) -> Classification {
    let tree = family.tree();
    let mut strict = false;
    for m in 1..=tree.depth() {
        let lifted = RandomVariable(tree.ancestor_map(m).iter().map(|&a| f.levels[m][a]).collect());
        for n in 0..m {
            for i in 0..family.k() {
                let e = cond_exp_leaf_measure(tree, family.leaf_probabilities(i), &lifted, n);
                for (lhs, rhs) in e.values.iter().zip(&f.levels[n]) {
                    if *lhs > rhs + tol {
                        return Classification::Neither;
                    }
                    if *lhs < rhs - tol {
                        strict = true;
                    }
                }
            }
        }
    }
    if strict {
        Classification::Supermartingale
    } else {
        Classification::Martingale
    }
}

/// Classifies `f` relative to the family. Inequalities pass when
/// `lhs <= rhs + tol.inequality`.
pub fn classify(family: &MeasureFamily, f: &AdaptedProcess, tol: &Tolerances) -> Result<ClassifyReport> {
    f.check_shape(family.tree())?;
    let (classification, witness, strict_witness) =
        classify_with(family.depth(), family.k(), f, tol.inequality, |i, m| {
            one_step_expectation(family, i, f, m)
        });
    let multistep = (family.depth() <= 3).then(|| classify_multistep(family, f, tol.inequality));
    Ok(ClassifyReport {
        classification,
        witness,
        strict_witness,
        multistep,
    })
}

/// Classification under a single arbitrary leaf measure (e.g. a mixture).
pub fn classify_under(tree: &FiltrationTree, leaf_measure: &[f64], f: &AdaptedProcess, tol: &Tolerances) -> Result<Classification> {
    f.check_shape(tree)?;
    Ok(classify_with(tree.depth(), 1, f, tol.inequality, |_, m| {
        one_step_expectation_leaf(tree, leaf_measure, f, m)
    })
    .0)
}

/// The process stopped at the deterministic time `k`.
pub fn stop(tree: &FiltrationTree, f: &AdaptedProcess, k: usize) -> Result<AdaptedProcess> {
    f.check_shape(tree)?;
    if k > tree.depth() {
        return Err(Error::StopLevel {
            level: k,
            depth: tree.depth(),
        });
    }
    let mut levels = f.levels.clone();
    for m in k + 1..=tree.depth() {
        for s in 0..tree.atom_count(m) {
            levels[m][s] = levels[m - 1][tree.parent(m, s)];
        }
    }
    Ok(AdaptedProcess { levels })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Theorem1Status {
    Verified,
    Violated { trial: usize, atom: AtomId, deficit: f64, bound: f64 },
    Untestable { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub status: Theorem1Status,
    pub factor: f64,
    pub eps_bar: f64,
    pub trials: usize,
    pub seed: u64,
    /// Smallest `deficit - factor * phi` over all sampled measures and atoms.
    pub min_margin: Option<f64>,
}

/// Draws a random point of the simplex (normalized exponentials).
pub fn random_simplex_point<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

/// Samples `Q = (1 - alpha) P_1 + alpha P'` with `alpha` in `[0, eps_bar]` and
/// `P'` a random element of the family's hull, and checks
/// `f_{m0-1} - E^Q{f_{m0} | F_{m0-1}} >= l/(1+L) * phi` on every atom.
pub fn theorem1_bound_check(
    family: &MeasureFamily,
    f: &AdaptedProcess,
    m0: usize,
    phi: &[f64],
    trials: usize,
    seed: u64,
    exec: Exec,
    tol: &Tolerances,
) -> Result<Theorem1Report> {
    f.check_shape(family.tree())?;
    let bounds = family.equivalence_bounds();
    let report = |status, min_margin| Theorem1Report {
        status,
        factor: bounds.theorem1_factor,
        eps_bar: bounds.eps_bar,
        trials,
        seed,
        min_margin,
    };
    let untestable = |reason: String| Ok(report(Theorem1Status::Untestable { reason }, None));
    if m0 == 0 || m0 > family.depth() {
        return untestable(format!("m0 = {m0} outside 1..={}", family.depth()));
    }
    let tree = family.tree();
    if phi.len() != tree.atom_count(m0 - 1) {
        return untestable(format!("phi has {} values, level {} has {} atoms", phi.len(), m0 - 1, tree.atom_count(m0 - 1)));
    }
    if phi.iter().any(|p| !(*p >= 0.0)) {
        return untestable("phi has negative entries".into());
    }
    if !classify(family, f, tol)?.is_supermartingale() {
        return untestable("process is not a supermartingale".into());
    }
    let base = one_step_expectation(family, 0, f, m0);
    for (s, ((prev, e), p)) in f.levels[m0 - 1].iter().zip(&base).zip(phi).enumerate() {
        if prev - e < p - tol.inequality {
            return untestable(format!(
                "deficit under the first measure on {} is {} < phi = {p}",
                AtomId::new(m0 - 1, s),
                prev - e
            ));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<(f64, Vec<f64>)> = (0..trials)
        .map(|_| {
            let alpha = rng.random::<f64>() * bounds.eps_bar;
            (alpha, random_simplex_point(&mut rng, family.k()))
        })
        .collect();
    let margins: Vec<Vec<f64>> = exec.map(&draws, |(alpha, weights)| {
        let other = family.mixture_unchecked(weights);
        let q: Vec<f64> = family
            .leaf_probabilities(0)
            .iter()
            .zip(&other)
            .map(|(p1, p2)| (1.0 - alpha) * p1 + alpha * p2)
            .collect();
        let e = one_step_expectation_leaf(tree, &q, f, m0);
        f.levels[m0 - 1]
            .iter()
            .zip(&e)
            .zip(phi)
            .map(|((prev, e), p)| prev - e - bounds.theorem1_factor * p)
            .collect()
    });
    let mut min_margin = f64::INFINITY;
    let mut status = Theorem1Status::Verified;
    for (t, row) in margins.iter().enumerate() {
        for (s, &margin) in row.iter().enumerate() {
            min_margin = min_margin.min(margin);
            if margin < -tol.inequality && status == Theorem1Status::Verified {
                let bound = bounds.theorem1_factor * phi[s];
                status = Theorem1Status::Violated {
                    trial: t,
                    atom: AtomId::new(m0 - 1, s),
                    deficit: margin + bound,
                    bound,
                };
            }
        }
    }
    Ok(report(status, min_margin.is_finite().then_some(min_margin)))
}
