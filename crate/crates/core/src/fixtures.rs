//! Ready-made instances: the two-level binary example, random instances for
//! property checks, and the power-density family on `[0, 1)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditional::RandomVariable;
use crate::filtration::FiltrationTree;
use crate::measures::MeasureFamily;
use crate::process::AdaptedProcess;
use crate::{Error, Result};

/// Binary tree of depth 2 with `P_1` uniform and `P_2 = (0.3, 0.2, 0.3, 0.2)`.
pub fn d1() -> MeasureFamily {
    let tree = FiltrationTree::build(&[2, 2]).expect("valid tree");
    MeasureFamily::new(tree, vec![vec![0.25; 4], vec![0.3, 0.2, 0.3, 0.2]]).expect("valid family")
}

/// `f_0 = 1`, `f_1 = (1, 1)`, `f_2 = (0.8, 1.0, 0.9, 1.0)` on [`d1`].
pub fn d1_supermartingale() -> AdaptedProcess {
    AdaptedProcess {
        levels: vec![vec![1.0], vec![1.0, 1.0], vec![0.8, 1.0, 0.9, 1.0]],
    }
}

/// `f_m = max_i E^{P_i}{chi_{C_1} | F_m}` on [`d1`].
pub fn d1_sup_indicator() -> AdaptedProcess {
    AdaptedProcess {
        levels: vec![vec![0.3], vec![0.6, 0.0], vec![1.0, 0.0, 0.0, 0.0]],
    }
}

/// Family from conditional transition probabilities:
/// `transitions[i][n - 1][j] = P_i(A^n_j | parent)` for every level `n >= 1`.
pub fn family_from_transitions(tree: FiltrationTree, transitions: &[Vec<Vec<f64>>]) -> Result<MeasureFamily> {
    let rows = transitions
        .iter()
        .map(|t| {
            if t.len() != tree.depth() {
                return Err(Error::Shape("one transition vector per level is required".into()));
            }
            let mut probs = vec![1.0];
            for n in 1..=tree.depth() {
                if t[n - 1].len() != tree.atom_count(n) {
                    return Err(Error::Shape(format!("level {n} needs {} transitions", tree.atom_count(n))));
                }
                probs = (0..tree.atom_count(n))
                    .map(|j| probs[tree.parent(n, j)] * t[n - 1][j])
                    .collect();
            }
            Ok(probs)
        })
        .collect::<Result<Vec<_>>>()?;
    MeasureFamily::new(tree, rows)
}

pub fn random_tree<R: Rng>(rng: &mut R, max_depth: usize, max_branch: usize) -> FiltrationTree {
    let depth = rng.random_range(1..=max_depth);
    let mut counts = Vec::with_capacity(depth);
    let mut atoms = 1;
    for _ in 0..depth {
        let level: Vec<usize> = (0..atoms).map(|_| rng.random_range(1..=max_branch)).collect();
        atoms = level.iter().sum();
        counts.push(level);
    }
    FiltrationTree::from_child_counts(counts).expect("random tree is valid")
}

/// Random conditional transitions on every atom, weights bounded away from 0.
pub fn random_transitions<R: Rng>(rng: &mut R, tree: &FiltrationTree) -> Vec<Vec<f64>> {
    (1..=tree.depth())
        .map(|n| {
            let mut t = vec![0.0; tree.atom_count(n)];
            for s in 0..tree.atom_count(n - 1) {
                let kids = tree.children(n - 1, s);
                let w: Vec<f64> = kids.iter().map(|_| 0.2 + rng.random::<f64>()).collect();
                let total: f64 = w.iter().sum();
                for (&j, x) in kids.iter().zip(&w) {
                    t[j] = x / total;
                }
            }
            t
        })
        .collect()
}

pub fn random_family_with<R: Rng>(rng: &mut R, max_depth: usize, max_branch: usize, max_k: usize) -> MeasureFamily {
    let tree = random_tree(rng, max_depth, max_branch);
    let k = rng.random_range(1..=max_k);
    let transitions: Vec<Vec<Vec<f64>>> = (0..k).map(|_| random_transitions(rng, &tree)).collect();
    family_from_transitions(tree, &transitions).expect("random family is valid")
}

/// Random tree (depth and branching bounded) with up to `max_k` random measures.
pub fn random_family(seed: u64, max_depth: usize, max_branch: usize, max_k: usize) -> MeasureFamily {
    random_family_with(&mut ChaCha8Rng::seed_from_u64(seed), max_depth, max_branch, max_k)
}

/// Random family whose measures differ only in the root transition; all
/// deeper conditional transitions are shared, so the one-step domination
/// condition holds for every candidate.
pub fn random_dominated_family_with<R: Rng>(rng: &mut R, max_depth: usize, max_branch: usize, max_k: usize) -> MeasureFamily {
    let tree = random_tree(rng, max_depth, max_branch);
    let k = rng.random_range(1..=max_k);
    let shared = random_transitions(rng, &tree);
    let transitions: Vec<Vec<Vec<f64>>> = (0..k)
        .map(|_| {
            let mut t = shared.clone();
            t[0] = random_transitions(rng, &tree)[0].clone();
            t
        })
        .collect();
    family_from_transitions(tree, &transitions).expect("random family is valid")
}

pub fn random_variable(seed: u64, len: usize, lo: f64, hi: f64) -> RandomVariable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_variable_with(&mut rng, len, lo, hi)
}

pub fn random_variable_with<R: Rng>(rng: &mut R, len: usize, lo: f64, hi: f64) -> RandomVariable {
    RandomVariable((0..len).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect())
}

pub fn random_process(seed: u64, tree: &FiltrationTree, lo: f64, hi: f64) -> AdaptedProcess {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AdaptedProcess {
        levels: (0..=tree.depth())
            .map(|n| (0..tree.atom_count(n)).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect())
            .collect(),
    }
}

/// Backward construction `f_{m-1} = max_i E^{P_i}{f_m | F_{m-1}} + slack`;
/// about a third of the seeds get a perturbation that may break the
/// supermartingale property.
pub fn random_supermartingale_candidate(seed: u64, family: &MeasureFamily) -> AdaptedProcess {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let tree = family.tree();
    let depth = tree.depth();
    let mut levels: Vec<Vec<f64>> = vec![Vec::new(); depth + 1];
    levels[depth] = (0..tree.leaf_count()).map(|_| rng.random::<f64>()).collect();
    for m in (1..=depth).rev() {
        levels[m - 1] = (0..tree.atom_count(m - 1))
            .map(|s| {
                let top = (0..family.k())
                    .map(|i| {
                        tree.children(m - 1, s)
                            .iter()
                            .map(|&j| family.transition(i, m, j) * levels[m][j])
                            .sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                let slack = if rng.random_bool(0.5) { 0.0 } else { 0.2 * rng.random::<f64>() };
                top + slack
            })
            .collect();
    }
    if rng.random_bool(1.0 / 3.0) {
        let m = rng.random_range(0..depth);
        let s = rng.random_range(0..tree.atom_count(m));
        levels[m][s] -= 0.1 * rng.random::<f64>();
    }
    AdaptedProcess { levels }
}

/// Orthogonal projection of `v` onto the kernel of the `rows x cols` matrix.
pub fn project_to_kernel(mat: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let pinv = mat.clone().pseudo_inverse(1e-12).expect("pseudoinverse exists");
    let v = DVector::from_column_slice(v);
    let u = &v - pinv * (mat * &v);
    u.iter().copied().collect()
}

/// Regular supermartingale by construction: at each cell the children get
/// `f_{m-1} - gbar_j + u_j` with `gbar >= 0` and `u` annihilated by every
/// conditional transition vector, so `gbar` solves the cell system.
///
/// `f_0` is chosen so the process stays nonnegative when `nonnegative` is set.
pub fn random_regular_supermartingale_with<R: Rng>(rng: &mut R, family: &MeasureFamily, nonnegative: bool) -> AdaptedProcess {
    let tree = family.tree();
    let depth = tree.depth();
    let mut levels: Vec<Vec<f64>> = (0..=depth).map(|n| vec![0.0; tree.atom_count(n)]).collect();
    for m in 1..=depth {
        for s in 0..tree.atom_count(m - 1) {
            let kids = tree.children(m - 1, s);
            let mat = DMatrix::from_fn(family.k(), kids.len(), |i, c| family.transition(i, m, kids[c]));
            let raw: Vec<f64> = kids.iter().map(|_| rng.random::<f64>() - 0.5).collect();
            let u = project_to_kernel(&mat, &raw);
            let drift = rng.random_bool(0.3);
            for (c, &j) in kids.iter().enumerate() {
                let gbar = if drift { 0.0 } else { 0.3 * rng.random::<f64>() * rng.random_range(0..2) as f64 };
                levels[m][j] = levels[m - 1][s] - gbar + u[c];
            }
        }
    }
    if nonnegative {
        let low = levels.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        let shift = 0.1 + rng.random::<f64>() - low.min(0.0);
        levels.iter_mut().flatten().for_each(|x| *x += shift);
    } else {
        let shift = rng.random::<f64>();
        levels.iter_mut().flatten().for_each(|x| *x += shift);
    }
    AdaptedProcess { levels }
}

/// Nonnegative leaf variable with `E^{P_i} xi = 1` for every measure:
/// `1 + t u` with `u` in the kernel of the leaf probability matrix.
pub fn random_normalized_variable_with<R: Rng>(rng: &mut R, family: &MeasureFamily) -> RandomVariable {
    let leaves = family.tree().leaf_count();
    let mat = DMatrix::from_fn(family.k(), leaves, |i, e| family.leaf_probabilities(i)[e]);
    let raw: Vec<f64> = (0..leaves).map(|_| rng.random::<f64>() - 0.5).collect();
    let u = project_to_kernel(&mat, &raw);
    let low = u.iter().copied().fold(0.0f64, f64::min);
    let floor = 0.5 * rng.random::<f64>();
    let t = if low < -1e-12 { (1.0 - floor) / -low } else { 0.0 };
    RandomVariable(u.iter().map(|x| (1.0 + t * x).max(0.0)).collect())
}

/// Tail handling of a truncated partition of `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TailMode {
    /// Cover `[0, x_last)` only and rescale each measure by its mass there.
    #[default]
    Renormalize,
    /// Add the tail atom `[x_last, 1)`; no rescaling is needed.
    Merge,
}

/// Measures with densities `i x^{i-1}` on `[0, 1)`, `i = 1..k`, restricted to
/// a finite partition refined by halving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerDensitySpec {
    pub k: usize,
    /// `0 = x_0 < x_1 < ... < x_p < 1`
    pub partition_points: Vec<f64>,
    /// Level 1 is the partition; each further level halves every interval.
    pub depth: usize,
    #[serde(default)]
    pub tail: TailMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerDensityInstance {
    pub spec: PowerDensitySpec,
    pub family: MeasureFamily,
    /// Leaf intervals `[a, b)`.
    pub leaf_intervals: Vec<(f64, f64)>,
    /// Mass of the covered region under each measure (the rescaling constant).
    pub normalization: Vec<f64>,
}

/// `P_i([a, b)) = b^i - a^i` (measure index `i` is 1-based here).
pub fn interval_mass(i: usize, a: f64, b: f64) -> f64 {
    b.powi(i as i32) - a.powi(i as i32)
}

pub fn build_power_density_instance(spec: &PowerDensitySpec) -> Result<PowerDensityInstance> {
    let pts = &spec.partition_points;
    if spec.k == 0 {
        return Err(Error::Degenerate("k must be at least 1".into()));
    }
    if spec.depth == 0 {
        return Err(Error::Degenerate("depth must be at least 1".into()));
    }
    if pts.first() != Some(&0.0) {
        return Err(Error::Degenerate("partition must start at 0".into()));
    }
    if pts.windows(2).any(|w| !(w[0] < w[1])) || pts.iter().any(|x| !(*x < 1.0)) {
        return Err(Error::Degenerate("partition points must increase strictly and stay below 1".into()));
    }
    let mut level1: Vec<(f64, f64)> = pts.windows(2).map(|w| (w[0], w[1])).collect();
    let last = *pts.last().expect("nonempty");
    let covered = match spec.tail {
        TailMode::Merge => {
            level1.push((last, 1.0));
            1.0
        }
        TailMode::Renormalize => last,
    };
    if level1.is_empty() {
        return Err(Error::Degenerate("partition covers no interval".into()));
    }
    let mut counts = vec![vec![level1.len()]];
    let mut intervals = level1;
    for _ in 1..spec.depth {
        counts.push(vec![2; intervals.len()]);
        intervals = intervals
            .iter()
            .flat_map(|&(a, b)| {
                let mid = 0.5 * (a + b);
                [(a, mid), (mid, b)]
            })
            .collect();
    }
    let tree = FiltrationTree::from_child_counts(counts)?;
    let normalization: Vec<f64> = (1..=spec.k).map(|i| interval_mass(i, 0.0, covered)).collect();
    let rows: Vec<Vec<f64>> = (1..=spec.k)
        .map(|i| {
            intervals
                .iter()
                .map(|&(a, b)| interval_mass(i, a, b) / normalization[i - 1])
                .collect()
        })
        .collect();
    let family = MeasureFamily::new(tree, rows)?;
    Ok(PowerDensityInstance {
        spec: spec.clone(),
        family,
        leaf_intervals: intervals,
        normalization,
    })
}
