//! Acceptance run: one PASS/FAIL line per criterion, each checked against
//! brute-force oracles from `common`. Exits non-zero when any criterion fails.

mod common;

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{atom_mass, leaf_cond_exp, lift, multistep_gaps, LatticeVerdict};
use optdoob::conditional::{cond_exp_mixture, measure_change_kernel, sup_cond_exp, RandomVariable};
use optdoob::cone::{self, ConeSystem};
use optdoob::decomposition::{decompose, test_regularity, CellStatus, SolutionRule};
use optdoob::fixtures::{self, PowerDensitySpec, TailMode};
use optdoob::gzero::theorem12_representation;
use optdoob::harness::{verify_lemmas, HarnessConfig};
use optdoob::measures::MeasureFamily;
use optdoob::process::{classify, random_simplex_point, theorem1_bound_check, AdaptedProcess, Classification, Theorem1Status};
use optdoob::{Error, Exec, Tolerances};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn tol() -> Tolerances {
    Tolerances::default()
}

fn random_instances(base: u64, count: u64) -> Vec<MeasureFamily> {
    (0..count).map(|s| fixtures::random_family(base + s, 3, 4, 3)).collect()
}

fn max_of(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(0.0, f64::max)
}

/// Ratio of conditioned densities between a level and a coarser level:
/// conditional expectations of `dP_i/dP_l` versus the atom probability formula.
fn ratio_identity() -> Verdict {
    let start = Instant::now();
    let fams = random_instances(1000, 100);
    let worst = max_of(Exec::default().map(&fams, |fam| {
        let tree = fam.tree();
        let mut worst = 0.0f64;
        for i in 0..fam.k() {
            for l in 0..fam.k() {
                let (pi, pl) = (fam.leaf_probabilities(i), fam.leaf_probabilities(l));
                let rho: Vec<f64> = pi.iter().zip(pl).map(|(a, b)| a / b).collect();
                let direct: Vec<Vec<f64>> = (0..=fam.depth()).map(|n| leaf_cond_exp(tree, pl, &rho, n)).collect();
                let formula: Vec<Vec<f64>> = (0..=fam.depth()).map(|n| fam.rn_conditional(i, l, n).unwrap()).collect();
                for big in 0..=fam.depth() {
                    for n in 0..=big {
                        for s in 0..tree.atom_count(big) {
                            let j = ancestor_at(fam, big, s, n);
                            let a = direct[big][s] / direct[n][j];
                            let b = formula[big][s] / formula[n][j];
                            worst = worst.max((a - b).abs());
                        }
                    }
                }
            }
        }
        worst
    }));
    let elapsed = start.elapsed();
    verdict(
        worst <= 1e-12 && elapsed < Duration::from_secs(5),
        format!("100 instances, worst |direct - formula| = {worst:.1e} (<= 1e-12), {:.2} s (< 5 s)", elapsed.as_secs_f64()),
    )
}

fn ancestor_at(fam: &MeasureFamily, level: usize, s: usize, n: usize) -> usize {
    let mut idx = s;
    for m in (n + 1..=level).rev() {
        idx = fam.tree().parent(m, idx);
    }
    idx
}

/// Mixture conditional expectations stay below the vertex maximum, which is
/// attained at a vertex.
fn sup_equals_max() -> Verdict {
    let fams = random_instances(1000, 100);
    let seeds: Vec<usize> = (0..fams.len()).collect();
    let worst = max_of(Exec::default().map(&seeds, |&idx| {
        let fam = &fams[idx];
        let tree = fam.tree();
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + idx as u64);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let w = random_simplex_point(&mut rng, fam.k());
            let xi = fixtures::random_variable_with(&mut rng, tree.leaf_count(), -1.0, 1.0);
            let q: Vec<f64> = (0..tree.leaf_count())
                .map(|e| (0..fam.k()).map(|i| w[i] * fam.leaf_probabilities(i)[e]).sum())
                .collect();
            for n in 0..=fam.depth() {
                let lib = cond_exp_mixture(fam, &w, &xi, n, &tol()).unwrap().values;
                let oracle = leaf_cond_exp(tree, &q, &xi.0, n);
                let sup = sup_cond_exp(fam, &xi, n).unwrap().values;
                let vertices: Vec<Vec<f64>> = (0..fam.k()).map(|i| leaf_cond_exp(tree, fam.leaf_probabilities(i), &xi.0, n)).collect();
                for s in 0..sup.len() {
                    let top = vertices.iter().map(|v| v[s]).fold(f64::NEG_INFINITY, f64::max);
                    worst = worst
                        .max((lib[s] - oracle[s]).abs())
                        .max(oracle[s] - sup[s])
                        .max((sup[s] - top).abs());
                }
            }
        }
        worst
    }));
    verdict(
        worst <= 1e-12,
        format!("100 instances x 100 mixtures, worst violation {worst:.1e} (<= 1e-12)"),
    )
}

/// `E^{P_i}{eta|F_n} = E^{P_l}{eta phi_n|F_n}` for every `(i, l, n)`.
fn measure_change() -> Verdict {
    let fams = random_instances(1000, 100);
    let seeds: Vec<usize> = (0..fams.len()).collect();
    let worst = max_of(Exec::default().map(&seeds, |&idx| {
        let fam = &fams[idx];
        let tree = fam.tree();
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + idx as u64);
        let etas: Vec<Vec<f64>> = (0..20)
            .map(|_| fixtures::random_variable_with(&mut rng, tree.leaf_count(), -1.0, 1.0).0)
            .collect();
        let mut worst = 0.0f64;
        for i in 0..fam.k() {
            for l in 0..fam.k() {
                let (pi, pl) = (fam.leaf_probabilities(i), fam.leaf_probabilities(l));
                for n in 0..=fam.depth() {
                    let phi = measure_change_kernel(fam, i, l, n).unwrap().0;
                    let (mi, ml) = (atom_mass(tree, pi, n), atom_mass(tree, pl, n));
                    for e in 0..tree.leaf_count() {
                        let a = tree.ancestor(n, e);
                        let expected = (pi[e] / pl[e]) / (mi[a] / ml[a]);
                        worst = worst.max((phi[e] - expected).abs());
                    }
                    for eta in &etas {
                        let lhs = leaf_cond_exp(tree, pi, eta, n);
                        let weighted: Vec<f64> = eta.iter().zip(&phi).map(|(a, b)| a * b).collect();
                        let rhs = leaf_cond_exp(tree, pl, &weighted, n);
                        worst = worst.max(max_of(lhs.iter().zip(&rhs).map(|(a, b)| (a - b).abs())));
                    }
                }
            }
        }
        worst
    }));
    verdict(worst <= 1e-12, format!("100 instances, all (i, l, n), worst error {worst:.1e} (<= 1e-12)"))
}

/// Supermartingale by backward induction with strictly positive slack:
/// `f_{m-1} = max_i E^{P_i}{f_m|F_{m-1}} + slack`.
fn slack_supermartingale(fam: &MeasureFamily, rng: &mut ChaCha8Rng) -> AdaptedProcess {
    let tree = fam.tree();
    let depth = fam.depth();
    let mut levels = vec![Vec::new(); depth + 1];
    levels[depth] = (0..tree.leaf_count()).map(|_| rng.random::<f64>()).collect();
    for m in (1..=depth).rev() {
        let up = lift(tree, &levels[m], m);
        let conds: Vec<Vec<f64>> = (0..fam.k()).map(|i| leaf_cond_exp(tree, fam.leaf_probabilities(i), &up, m - 1)).collect();
        levels[m - 1] = (0..tree.atom_count(m - 1))
            .map(|s| conds.iter().map(|c| c[s]).fold(f64::NEG_INFINITY, f64::max) + 0.01 + 0.2 * rng.random::<f64>())
            .collect();
    }
    AdaptedProcess { levels }
}

/// The deficit under measures close to `P_1` keeps a fixed fraction of the
/// deficit under `P_1`.
fn deficit_bound() -> Verdict {
    let fams = random_instances(4000, 100);
    let seeds: Vec<usize> = (0..fams.len()).collect();
    let results = Exec::default().map(&seeds, |&idx| {
        let fam = &fams[idx];
        let tree = fam.tree();
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + idx as u64);
        let f = slack_supermartingale(fam, &mut rng);
        let m0 = rng.random_range(1..=fam.depth());
        let up = lift(tree, &f.levels[m0], m0);
        let p1 = fam.leaf_probabilities(0);
        let phi: Vec<f64> = f.levels[m0 - 1]
            .iter()
            .zip(leaf_cond_exp(tree, p1, &up, m0 - 1))
            .map(|(a, e)| (a - e).max(0.0))
            .collect();
        // l and L from the leaf ratios; ratios on coarser atoms lie between them.
        let mut big_l = 0.0f64;
        for a in 0..fam.k() {
            for b in 0..fam.k() {
                for e in 0..tree.leaf_count() {
                    big_l = big_l.max(fam.leaf_probabilities(a)[e] / fam.leaf_probabilities(b)[e]);
                }
            }
        }
        let small_l = 1.0 / big_l;
        let (factor, eps_bar) = (small_l / (1.0 + big_l), big_l / (1.0 + big_l));
        let bounds = fam.equivalence_bounds();
        let bound_error = (bounds.theorem1_factor - factor).abs().max((bounds.eps_bar - eps_bar).abs());
        let mut worst_margin = f64::INFINITY;
        for _ in 0..200 {
            let alpha = eps_bar * rng.random::<f64>();
            let w = random_simplex_point(&mut rng, fam.k());
            let q: Vec<f64> = (0..tree.leaf_count())
                .map(|e| (1.0 - alpha) * p1[e] + alpha * (0..fam.k()).map(|i| w[i] * fam.leaf_probabilities(i)[e]).sum::<f64>())
                .collect();
            let e = leaf_cond_exp(tree, &q, &up, m0 - 1);
            for s in 0..phi.len() {
                worst_margin = worst_margin.min(f.levels[m0 - 1][s] - e[s] - factor * phi[s]);
            }
        }
        let lib = theorem1_bound_check(fam, &f, m0, &phi, 200, 4000 + idx as u64, Exec::Sequential, &tol()).unwrap();
        (worst_margin, bound_error, lib.status == Theorem1Status::Verified)
    });
    let margin = results.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let bound_error = max_of(results.iter().map(|r| r.1));
    let lib_ok = results.iter().all(|r| r.2);
    verdict(
        margin >= -1e-9 && bound_error <= 1e-12 && lib_ok,
        format!(
            "100 instances x 200 measures, min(deficit - factor*phi) = {margin:.3e} (>= -1e-9), \
             bounds error {bound_error:.1e}, library check verified on all: {lib_ok}"
        ),
    )
}

/// Checks one decomposition; returns the worst of the identity, sign and
/// martingale errors.
fn decomposition_errors(fam: &MeasureFamily, f: &AdaptedProcess) -> Result<f64, String> {
    let d = decompose(fam, f, &tol(), Exec::Sequential).map_err(|e| e.to_string())?;
    let tree = fam.tree();
    let mut worst = d.martingale_part.max_abs_diff(&f.add(&d.cumulative));
    worst = worst.max(max_of(d.cumulative.levels[0].iter().map(|x| x.abs())));
    for m in 1..=fam.depth() {
        for s in 0..tree.atom_count(m) {
            let inc = d.increments.levels[m][s];
            worst = worst.max(-inc);
            let step = d.cumulative.levels[m][s] - d.cumulative.levels[m - 1][tree.parent(m, s)];
            worst = worst.max((step - inc).abs());
        }
    }
    let (_, gap) = multistep_gaps(fam, &d.martingale_part);
    worst = worst.max(gap);
    if classify(fam, &d.martingale_part, &tol()).unwrap().classification != Classification::Martingale {
        return Err("martingale part not classified as a martingale".into());
    }
    Ok(worst)
}

fn decomposition() -> Verdict {
    let fams = random_instances(5000, 100);
    let seeds: Vec<usize> = (0..fams.len()).collect();
    let results = Exec::default().map(&seeds, |&idx| -> Result<(f64, usize), String> {
        let fam = &fams[idx];
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + idx as u64);
        let mut procs = vec![
            fixtures::random_regular_supermartingale_with(&mut rng, fam, true),
            fixtures::random_regular_supermartingale_with(&mut rng, fam, false),
        ];
        let candidate = fixtures::random_supermartingale_candidate(5000 + idx as u64, fam);
        if test_regularity(fam, &candidate, &tol(), Exec::Sequential).unwrap().regular {
            procs.push(candidate);
        }
        let mut worst = 0.0f64;
        for f in &procs {
            worst = worst.max(decomposition_errors(fam, f)?);
        }
        Ok((worst, procs.len()))
    });
    let mut worst = 0.0f64;
    let mut count = 0;
    for r in &results {
        match r {
            Ok((w, c)) => {
                worst = worst.max(*w);
                count += c;
            }
            Err(e) => return verdict(false, format!("decomposition failed: {e}")),
        }
    }

    // A single measure: the increments must be the classical Doob drift.
    let singles: Vec<u64> = (0..100).collect();
    let classical = Exec::default().map(&singles, |&s| -> Result<(f64, bool), String> {
        let fam = fixtures::random_family(5500 + s, 3, 4, 1);
        let tree = fam.tree();
        let f = fixtures::random_supermartingale_candidate(5500 + s, &fam);
        if !classify(&fam, &f, &tol()).unwrap().is_supermartingale() {
            return Ok((0.0, true));
        }
        let d = decompose(&fam, &f, &tol(), Exec::Sequential).map_err(|e| e.to_string())?;
        let p = fam.leaf_probabilities(0);
        let mut worst = decomposition_errors(&fam, &f)?;
        for m in 1..=fam.depth() {
            let e = leaf_cond_exp(tree, p, &lift(tree, &f.levels[m], m), m - 1);
            for s in 0..tree.atom_count(m) {
                let parent = tree.parent(m, s);
                let drift = f.levels[m - 1][parent] - e[parent];
                worst = worst.max((d.increments.levels[m][s] - drift).abs());
            }
        }
        let predictable = d.rules.iter().all(|r| r.2 == SolutionRule::Predictable);
        Ok((worst, predictable))
    });
    let mut single_worst = 0.0f64;
    let mut predictable = true;
    for r in &classical {
        match r {
            Ok((w, p)) => {
                single_worst = single_worst.max(*w);
                predictable &= p;
            }
            Err(e) => return verdict(false, format!("single-measure decomposition failed: {e}")),
        }
    }
    verdict(
        worst <= 1e-10 && single_worst <= 1e-13 && predictable,
        format!(
            "{count} regular processes, worst error {worst:.1e} (<= 1e-10); \
             single measure: worst |dg - classical drift| = {single_worst:.1e}, predictable rule everywhere: {predictable}"
        ),
    )
}

/// Conditional distributions on `c` children with entries in `{2/8, ..., 6/8}`.
fn transition_catalog(c: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; c];
    fn rec(j: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        let c = cur.len();
        if j + 1 == c {
            if left >= 2 {
                cur[j] = left;
                out.push(cur.iter().map(|x| *x as f64 / 8.0).collect());
            }
            return;
        }
        for v in 2..=left {
            cur[j] = v;
            rec(j + 1, left - v, cur, out);
        }
    }
    rec(0, 8, &mut cur, &mut out);
    out
}

#[derive(Default, Clone, Copy)]
struct LatticeTally {
    cells: usize,
    feasible: usize,
    infeasible: usize,
    soft: usize,
    hard: usize,
    not_super: usize,
}

impl LatticeTally {
    fn merge(mut self, o: LatticeTally) -> Self {
        self.cells += o.cells;
        self.feasible += o.feasible;
        self.infeasible += o.infeasible;
        self.soft += o.soft;
        self.hard += o.hard;
        self.not_super += o.not_super;
        self
    }
}

/// Exhaustive depth-2 instances: root split evenly, then `c <= 3` children
/// under each level-1 atom with transitions from the catalog. The process is
/// `f_0 = f_1 = p` except the children of the first level-1 atom, which range
/// over the 1/8 grid; that cell is compared with the lattice search.
fn lattice_agreement() -> Verdict {
    let step = 1.0 / 64.0;
    let mut tasks: Vec<(usize, Vec<Vec<f64>>, usize)> = Vec::new();
    for c in 1..=3 {
        let cat = transition_catalog(c);
        for a in 0..cat.len() {
            for b in a..cat.len() {
                let measures = if a == b { vec![cat[a].clone()] } else { vec![cat[a].clone(), cat[b].clone()] };
                for p in 0..=8 {
                    tasks.push((c, measures.clone(), p));
                }
            }
        }
    }
    let results = Exec::default().map(&tasks, |(c, ts, p)| {
        let c = *c;
        let transitions: Vec<Vec<Vec<f64>>> = ts
            .iter()
            .map(|t| vec![vec![0.5, 0.5], t.iter().chain(t.iter()).copied().collect()])
            .collect();
        let fam = common::family(&[2, c], &transitions);
        let p = *p as f64 / 8.0;
        let vectors: Vec<Vec<f64>> = (0..c).map(|j| ts.iter().map(|t| t[j]).collect()).collect();
        let mut tally = LatticeTally::default();
        let mut cache: HashMap<Vec<i64>, LatticeVerdict> = HashMap::new();
        let total = 9usize.pow(c as u32);
        for code in 0..total {
            let values: Vec<f64> = (0..c).map(|j| ((code / 9usize.pow(j as u32)) % 9) as f64 / 8.0).collect();
            let mut leaves = values.clone();
            leaves.extend(std::iter::repeat_n(p, c));
            let f = AdaptedProcess {
                levels: vec![vec![p], vec![p, p], leaves],
            };
            let target: Vec<f64> = ts
                .iter()
                .map(|t| p - t.iter().zip(&values).map(|(a, v)| a * v).sum::<f64>())
                .collect();
            let report = test_regularity(&fam, &f, &tol(), Exec::Sequential).unwrap();
            let cell = report.cell(2, 0).unwrap();
            tally.cells += 1;
            let negative = target.iter().any(|t| *t < 0.0);
            if negative {
                tally.not_super += 1;
                if !matches!(cell.status, CellStatus::NotSupermartingale { .. }) {
                    tally.hard += 1;
                }
                continue;
            }
            let key: Vec<i64> = target.iter().map(|t| (t * 4096.0).round() as i64).collect();
            let oracle = *cache
                .entry(key)
                .or_insert_with(|| common::lattice_search(&vectors, &target, step));
            match &cell.status {
                CellStatus::Feasible { xi, .. } => {
                    tally.feasible += 1;
                    let resid = max_of((0..ts.len()).map(|i| {
                        (target[i] - (0..c).map(|j| vectors[j][i] * xi[j]).sum::<f64>()).abs()
                    }));
                    if xi.iter().any(|x| *x < -1e-12) || resid > 1e-9 || oracle == LatticeVerdict::None {
                        tally.hard += 1;
                    }
                }
                CellStatus::Infeasible { .. } => {
                    tally.infeasible += 1;
                    match oracle {
                        LatticeVerdict::Exact => tally.hard += 1,
                        LatticeVerdict::Near => tally.soft += 1,
                        LatticeVerdict::None => {}
                    }
                }
                CellStatus::NotSupermartingale { .. } => tally.hard += 1,
            }
        }
        tally
    });
    let t = results.into_iter().fold(LatticeTally::default(), LatticeTally::merge);
    verdict(
        t.hard == 0,
        format!(
            "{} cells ({} feasible, {} infeasible, {} not supermartingales), {} within one lattice step, {} hard disagreements",
            t.cells, t.feasible, t.infeasible, t.not_super, t.soft, t.hard
        ),
    )
}

enum IffOutcome {
    Agree,
    Disagree(String),
}

/// `(all expectations equal, sup-process decomposes with g = 0)` for one variable.
fn iff_truths(fam: &MeasureFamily, xi: &RandomVariable) -> Result<(bool, bool), String> {
    let tree = fam.tree();
    let means: Vec<f64> = (0..fam.k())
        .map(|i| fam.leaf_probabilities(i).iter().zip(&xi.0).map(|(p, x)| p * x).sum())
        .collect();
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
    let equal = hi - lo <= 1e-9 * (1.0 + hi.abs());
    let sup = AdaptedProcess {
        levels: (0..=fam.depth())
            .map(|n| {
                (0..fam.k())
                    .map(|i| leaf_cond_exp(tree, fam.leaf_probabilities(i), &xi.0, n))
                    .reduce(|a, b| a.iter().zip(&b).map(|(x, y)| x.max(*y)).collect())
                    .unwrap()
            })
            .collect(),
    };
    let zero_g = match decompose(fam, &sup, &tol(), Exec::Sequential) {
        Ok(d) => max_of(d.cumulative.levels.iter().flatten().map(|x| x.abs())) <= 1e-9,
        Err(Error::NotRegular { .. }) => false,
        Err(e) => return Err(e.to_string()),
    };
    Ok((equal, zero_g))
}

fn iff_draws(fam: &MeasureFamily, rng: &mut ChaCha8Rng) -> Vec<RandomVariable> {
    (0..50)
        .map(|t| {
            if t % 2 == 0 {
                fixtures::random_variable_with(rng, fam.tree().leaf_count(), 0.0, 1.0)
            } else {
                fixtures::random_normalized_variable_with(rng, fam)
            }
        })
        .collect()
}

/// On families satisfying condition B (the theorem's hypothesis): equal
/// expectations iff the sup-process decomposes with `g = 0`. Elsewhere only
/// the necessity direction is asserted; sufficiency counts are reported.
fn equal_means_iff() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7000);
    let dominated: Vec<MeasureFamily> = (0..30)
        .map(|_| fixtures::random_dominated_family_with(&mut rng, 3, 3, 3))
        .collect();
    let seeds: Vec<usize> = (0..dominated.len()).collect();
    let b_results = Exec::default().map(&seeds, |&idx| -> Result<IffOutcome, String> {
        let fam = &dominated[idx];
        if !fam.check_condition_b(&tol()).passed {
            return Ok(IffOutcome::Disagree(format!("instance {idx} does not satisfy condition B")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7100 + idx as u64);
        for (t, xi) in iff_draws(fam, &mut rng).iter().enumerate() {
            let (equal, zero_g) = iff_truths(fam, xi)?;
            if equal != zero_g {
                return Ok(IffOutcome::Disagree(format!("instance {idx}, variable {t}: equal = {equal}, g = 0 feasible = {zero_g}")));
            }
        }
        Ok(IffOutcome::Agree)
    });
    let mut equal_count = 0;
    let general: Vec<u64> = (0..30).collect();
    let g_results = Exec::default().map(&general, |&s| -> Result<(usize, usize, usize), String> {
        let fam = fixtures::random_family(7500 + s, 3, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7600 + s);
        let (mut necessity_failures, mut equal, mut sufficiency_failures) = (0, 0, 0);
        for xi in iff_draws(&fam, &mut rng) {
            let (e, z) = iff_truths(&fam, &xi)?;
            if z && !e {
                necessity_failures += 1;
            }
            if e {
                equal += 1;
                if !z {
                    sufficiency_failures += 1;
                }
            }
        }
        Ok((necessity_failures, equal, sufficiency_failures))
    });
    for r in &b_results {
        match r {
            Ok(IffOutcome::Agree) => {}
            Ok(IffOutcome::Disagree(msg)) => return verdict(false, msg.clone()),
            Err(e) => return verdict(false, e.clone()),
        }
    }
    let (mut necessity, mut sufficiency) = (0, 0);
    for r in &g_results {
        match r {
            Ok((n, e, s)) => {
                necessity += n;
                equal_count += e;
                sufficiency += s;
            }
            Err(e) => return verdict(false, e.clone()),
        }
    }
    verdict(
        necessity == 0,
        format!(
            "30 condition-B families x 50 variables: iff holds on all; 30 general families: \
             necessity failures {necessity}, sufficiency failures {sufficiency} of {equal_count} equal-mean variables (reported only)"
        ),
    )
}

fn rank(columns: &[Vec<f64>]) -> usize {
    let rows = columns[0].len();
    let mat = DMatrix::from_fn(rows, columns.len(), |i, j| columns[j][i]);
    let sv = mat.singular_values();
    let top = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|s| **s > 1e-10 * top).count()
}

fn residual(vectors: &[Vec<f64>], target: &[f64], x: &[f64]) -> f64 {
    max_of((0..target.len()).map(|i| (target[i] - vectors.iter().zip(x).map(|(a, v)| a[i] * v).sum::<f64>()).abs()))
}

fn positive_system(rng: &mut ChaCha8Rng, k: usize, m: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let vectors: Vec<Vec<f64>> = (0..m).map(|_| (0..k).map(|_| 0.05 + rng.random::<f64>()).collect()).collect();
    let x0: Vec<f64> = (0..m).map(|_| 0.1 + rng.random::<f64>()).collect();
    let target = (0..k).map(|i| vectors.iter().zip(&x0).map(|(a, x)| a[i] * x).sum()).collect();
    (vectors, target)
}

fn cone_solver() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8000);
    let mut worst_resid = 0.0f64;
    let mut negative = 0.0f64;
    let mut dependent = 0;
    for _ in 0..200 {
        let k = rng.random_range(1..=3);
        let m = rng.random_range(k + 1..=6);
        let (vectors, target) = positive_system(&mut rng, k, m);
        let system = ConeSystem::new(vectors.clone(), target.clone()).unwrap();
        let fam = match cone::solve(&system, &tol()) {
            Ok(f) => f,
            Err(e) => return verdict(false, format!("solver failed on an interior target: {e}")),
        };
        for z in &fam.basic_solutions {
            worst_resid = worst_resid.max(residual(&vectors, &target, z));
            negative = negative.max(-z.iter().copied().fold(f64::INFINITY, f64::min));
        }
        if rank(&fam.basic_solutions) != fam.basic_solutions.len() || fam.basic_solutions.len() != m - rank(&vectors) + 1 {
            dependent += 1;
        }
    }

    // Completeness: strictly positive solutions of 2 x m systems, sampled by
    // rejection, are affine combinations of the basic solutions.
    let mut samples = 0;
    let mut worst_repro = 0.0f64;
    let mut failures = Vec::new();
    while samples < 1000 {
        let m = rng.random_range(2..=5);
        let (vectors, target) = positive_system(&mut rng, 2, m);
        let system = ConeSystem::new(vectors.clone(), target.clone()).unwrap();
        let fam = cone::solve(&system, &tol()).unwrap();
        let box_top = 2.0 * max_of(target.iter().copied()) / vectors.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        let pivot = DMatrix::from_fn(2, 2, |i, j| vectors[j][i]);
        let Some(inv) = pivot.try_inverse() else { continue };
        let mut taken = 0;
        for _ in 0..2000 {
            if taken == 20 || samples == 1000 {
                break;
            }
            let mut x = vec![0.0; m];
            for v in x.iter_mut().skip(2) {
                *v = box_top * rng.random::<f64>();
            }
            let rest = DVector::from_fn(2, |i, _| target[i] - (2..m).map(|j| vectors[j][i] * x[j]).sum::<f64>());
            let head = &inv * rest;
            x[0] = head[0];
            x[1] = head[1];
            if x.iter().any(|v| *v <= 1e-9) {
                continue;
            }
            taken += 1;
            samples += 1;
            let z = &fam.basic_solutions;
            let mat = DMatrix::from_fn(m + 1, z.len(), |r, c| if r < m { z[c][r] } else { 1.0 });
            let rhs = DVector::from_fn(m + 1, |r, _| if r < m { x[r] } else { 1.0 });
            let gamma = mat.svd(true, true).solve(&rhs, 1e-12).unwrap();
            match cone::combine(&fam, gamma.as_slice(), &tol()) {
                Ok(comb) if comb.strictly_positive => {
                    worst_repro = worst_repro.max(max_of(comb.values.iter().zip(&x).map(|(a, b)| (a - b).abs())));
                }
                Ok(_) => failures.push("combination not strictly positive".to_string()),
                Err(e) => failures.push(e.to_string()),
            }
            if m == 2 {
                break;
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst_resid <= 1e-10
            && negative <= 1e-12
            && dependent == 0
            && failures.is_empty()
            && worst_repro <= 1e-9
            && elapsed < Duration::from_secs(10),
        format!(
            "200 systems: worst residual {worst_resid:.1e} (<= 1e-10), {dependent} dependent or incomplete bases; \
             {samples} positive solutions of 2 x m systems, {} not reproduced, worst error {worst_repro:.1e}; {:.2} s (< 10 s)",
            failures.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn representation() -> Verdict {
    let fams = random_instances(9000, 100);
    let seeds: Vec<usize> = (0..fams.len()).collect();
    let results = Exec::default().map(&seeds, |&idx| -> Result<(f64, f64), String> {
        let fam = &fams[idx];
        let tree = fam.tree();
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + idx as u64);
        let f = fixtures::random_regular_supermartingale_with(&mut rng, fam, true);
        if !test_regularity(fam, &f, &tol(), Exec::Sequential).unwrap().regular {
            return Err(format!("instance {idx}: constructed process is not regular"));
        }
        let rep = theorem12_representation(fam, &f, &tol(), Exec::Sequential).map_err(|e| e.to_string())?;
        let f0 = f.levels[0][0];
        let xi = rep.xi.to_random_variable(fam).0;
        let mut worst = 0.0f64;
        for m in 0..=fam.depth() {
            let paths: Vec<Vec<f64>> = (0..fam.k()).map(|i| leaf_cond_exp(tree, fam.leaf_probabilities(i), &xi, m)).collect();
            for s in 0..tree.atom_count(m) {
                let rebuilt = f0 * paths[0][s] + rep.nonincreasing.levels[m][s];
                worst = worst.max((rebuilt - f.levels[m][s]).abs());
                // the density martingale does not depend on the measure
                for p in &paths[1..] {
                    worst = worst.max(f0 * (p[s] - paths[0][s]).abs());
                }
                if m > 0 {
                    let up = rep.nonincreasing.levels[m - 1][tree.parent(m, s)];
                    worst = worst.max(rep.nonincreasing.levels[m][s] - up);
                }
            }
        }
        worst = worst.max(max_of(rep.nonincreasing.levels[0].iter().map(|x| x.abs())));
        let mut g0 = -rep.xi.values.iter().copied().fold(0.0f64, f64::min);
        for i in 0..fam.k() {
            let mean: f64 = fam.leaf_probabilities(i).iter().zip(&xi).map(|(p, x)| p * x).sum();
            g0 = g0.max((mean - 1.0).abs());
        }
        Ok((worst, g0))
    });
    let (mut worst, mut g0) = (0.0f64, 0.0f64);
    for r in &results {
        match r {
            Ok((w, g)) => {
                worst = worst.max(*w);
                g0 = g0.max(*g);
            }
            Err(e) => return verdict(false, e.clone()),
        }
    }
    verdict(
        worst <= 1e-10 && g0 <= 1e-10,
        format!("100 regular nonnegative instances: worst reconstruction error {worst:.1e} (<= 1e-10), worst density invariant error {g0:.1e}"),
    )
}

fn determinism() -> Verdict {
    let power = fixtures::build_power_density_instance(&PowerDensitySpec {
        k: 3,
        partition_points: vec![0.0, 0.5, 0.75],
        depth: 2,
        tail: TailMode::Renormalize,
    })
    .unwrap()
    .family;
    let instances = [("d1", fixtures::d1()), ("power-density", power), ("random", fixtures::random_family(10_000, 3, 3, 3))];
    let config = HarnessConfig {
        seed: 42,
        ..HarnessConfig::default()
    };
    for (name, fam) in &instances {
        let run = |exec| verify_lemmas(fam, config, &tol(), exec).unwrap().to_json().unwrap();
        let first = run(Exec::default());
        if first != run(Exec::default()) {
            return verdict(false, format!("{name}: repeated runs differ"));
        }
        if first != run(Exec::Sequential) {
            return verdict(false, format!("{name}: sequential and default execution differ"));
        }
    }
    verdict(true, "3 instances, seed 42: repeated and sequential runs give byte-identical JSON".into())
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("ratio identity", ratio_identity),
        ("sup equals vertex max", sup_equals_max),
        ("measure change", measure_change),
        ("deficit bound", deficit_bound),
        ("decomposition", decomposition),
        ("lattice oracle agreement", lattice_agreement),
        ("equal means iff sup-process martingale", equal_means_iff),
        ("cone solver", cone_solver),
        ("density representation round trip", representation),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (n, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        if !v.pass {
            failed += 1;
        }
        println!(
            "{} {:>2} {name}: {} [{:.2} s]",
            if v.pass { "PASS" } else { "FAIL" },
            n + 1,
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
