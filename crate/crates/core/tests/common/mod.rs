//! Brute-force oracles shared by the integration tests. Everything here works
//! from leaf probabilities and explicit sums, never through the library's
//! conditional expectation routines.
#![allow(dead_code)]

use optdoob::filtration::FiltrationTree;
use optdoob::measures::MeasureFamily;
use optdoob::process::AdaptedProcess;

/// `E^Q{x | F_m}` on the level-`m` atoms for a leaf measure `q` and a leaf
/// variable `x`.
pub fn leaf_cond_exp(tree: &FiltrationTree, q: &[f64], x: &[f64], m: usize) -> Vec<f64> {
    let mut num = vec![0.0; tree.atom_count(m)];
    let mut den = vec![0.0; tree.atom_count(m)];
    for leaf in 0..tree.leaf_count() {
        let a = tree.ancestor(m, leaf);
        num[a] += q[leaf] * x[leaf];
        den[a] += q[leaf];
    }
    num.iter().zip(&den).map(|(x, y)| x / y).collect()
}

/// Level-`n` values of an adapted process spread onto the leaves.
pub fn lift(tree: &FiltrationTree, values: &[f64], n: usize) -> Vec<f64> {
    (0..tree.leaf_count()).map(|leaf| values[tree.ancestor(n, leaf)]).collect()
}

/// `E^{P_i}{f_n | F_m}` on the level-`m` atoms.
pub fn multistep_expectation(family: &MeasureFamily, i: usize, f: &AdaptedProcess, n: usize, m: usize) -> Vec<f64> {
    let tree = family.tree();
    leaf_cond_exp(tree, family.leaf_probabilities(i), &lift(tree, &f.levels[n], n), m)
}

/// Worst violation of `E^{P_i}{f_n|F_m} <= f_m` and worst `|E^{P_i}{f_n|F_m} - f_m|`
/// over all measures and all pairs `m < n`.
pub fn multistep_gaps(family: &MeasureFamily, f: &AdaptedProcess) -> (f64, f64) {
    let depth = family.depth();
    let mut excess = f64::NEG_INFINITY;
    let mut gap = 0.0f64;
    for i in 0..family.k() {
        for n in 1..=depth {
            for m in 0..n {
                for (e, v) in multistep_expectation(family, i, f, n, m).iter().zip(&f.levels[m]) {
                    excess = excess.max(e - v);
                    gap = gap.max((e - v).abs());
                }
            }
        }
    }
    (excess, gap)
}

/// `Q(A)` for every atom of level `m`.
pub fn atom_mass(tree: &FiltrationTree, q: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; tree.atom_count(m)];
    for leaf in 0..tree.leaf_count() {
        out[tree.ancestor(m, leaf)] += q[leaf];
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatticeVerdict {
    /// A lattice point solves the system exactly (to rounding).
    Exact,
    /// Some lattice point is within the rounding threshold, none exact.
    Near,
    None,
}

/// Lattice search for `sum_j a_j xi_j = a0`, `xi >= 0`, with `xi_j` on the grid
/// `step * N`. `Near` uses the threshold `(step / 2) * max_i sum_j a_ij`: any
/// nonnegative solution rounds coordinatewise to a lattice point within it, so
/// a feasible system is never reported as `None`.
///
/// The vectors must be nonnegative; partial sums above `a0 + thr` are pruned
/// and the last coordinate is found by rounding instead of enumeration.
pub fn lattice_search(vectors: &[Vec<f64>], target: &[f64], step: f64) -> LatticeVerdict {
    let k = target.len();
    let thr = 0.5 * step * (0..k).map(|i| vectors.iter().map(|a| a[i]).sum::<f64>()).fold(0.0, f64::max);
    if target.iter().any(|t| *t < -thr) {
        return LatticeVerdict::None;
    }
    let mut best = f64::INFINITY;
    let mut partial = vec![0.0; k];
    if search(vectors, target, step, thr, 0, &mut partial, &mut best) {
        LatticeVerdict::Exact
    } else if best <= thr {
        LatticeVerdict::Near
    } else {
        LatticeVerdict::None
    }
}

const EXACT: f64 = 1e-12;

fn search(vectors: &[Vec<f64>], target: &[f64], step: f64, thr: f64, j: usize, partial: &mut [f64], best: &mut f64) -> bool {
    let k = target.len();
    let a = &vectors[j];
    if j + 1 == vectors.len() {
        let resid = |n: f64| -> f64 {
            (0..k)
                .map(|i| (target[i] - partial[i] - a[i] * n * step).abs())
                .fold(0.0, f64::max)
        };
        let mut candidates = vec![0.0];
        for i in 0..k {
            if a[i] > 0.0 {
                let ideal = ((target[i] - partial[i]) / a[i] / step).max(0.0);
                candidates.push(ideal.floor());
                candidates.push(ideal.ceil());
            }
        }
        for n in candidates {
            *best = best.min(resid(n));
            if *best <= EXACT {
                return true;
            }
        }
        return false;
    }
    let mut n = 0usize;
    loop {
        let x = n as f64 * step;
        if (0..k).any(|i| partial[i] + a[i] * x > target[i] + thr) {
            return false;
        }
        for i in 0..k {
            partial[i] += a[i] * x;
        }
        let found = search(vectors, target, step, thr, j + 1, partial, best);
        for i in 0..k {
            partial[i] -= a[i] * x;
        }
        if found {
            return true;
        }
        if a.iter().all(|v| *v == 0.0) {
            // A zero vector never changes the sums; one value suffices.
            return false;
        }
        n += 1;
    }
}

/// Uniform tree with the given per-level branching and measures given by
/// conditional transitions (`transitions[i][n - 1]` lists `P_i(A^n_j | parent)`).
pub fn family(branching: &[usize], transitions: &[Vec<Vec<f64>>]) -> MeasureFamily {
    let tree = FiltrationTree::build(branching).unwrap();
    optdoob::fixtures::family_from_transitions(tree, transitions).unwrap()
}
