//! Lemma and theorem verification harness.
//!
//! Every check evaluates a conclusion on one measure family, either exactly
//! (formula identities over all atoms) or on seeded random inputs. Checks whose
//! hypothesis includes the one-step domination condition are asserted only
//! when that condition holds; otherwise the conclusion is still evaluated and
//! reported as a fact about the instance.
//!
//! All random inputs are drawn sequentially from per-check ChaCha streams of
//! the configured seed before any (possibly parallel) evaluation, so reports
//! are byte-identical across runs and execution modes.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditional::{cond_exp_leaf_measure, cond_exp_mixture, measure_change_kernel, AdaptedValues, RandomVariable};
use crate::cone::{self, rank_of, ConeSystem};
use crate::decomposition::{
    decompose, decompose_from_report, martingale_defect, psi_residuals, sup_process, test_regularity,
    equal_means_check, EqualMeansVerdict, MARTINGALE_TOL,
};
use crate::filtration::AtomId;
use crate::fixtures::{
    project_to_kernel, random_normalized_variable_with, random_regular_supermartingale_with,
    random_supermartingale_candidate, random_variable_with,
};
use crate::gzero::{
    class_k_combination, local_regular_generator, martingale_from_xi, solve_g0, GZeroElement, GZeroFamily, MOMENT_TOL,
};
use crate::measures::{ConditionBReport, EquivalenceBounds, MeasureFamily};
use crate::process::{
    classify, one_step_expectation, random_simplex_point, theorem1_bound_check, AdaptedProcess, Classification,
    Theorem1Status,
};
use crate::{Error, Exec, Result, Tolerances};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub seed: u64,
    /// Random inputs (variables, processes, systems) per check.
    pub trials: usize,
    /// Sampled mixtures per process in the deficit bound check.
    pub mixtures: usize,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 100,
            mixtures: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    None,
    ConditionB,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// The hypothesis does not hold on this instance; the conclusion was
    /// evaluated anyway.
    HypothesisFails { conclusion_holds: bool },
    Skipped { reason: String },
}

impl CheckStatus {
    pub fn label(&self) -> String {
        match self {
            CheckStatus::Pass => "pass".into(),
            CheckStatus::Fail => "FAIL".into(),
            CheckStatus::HypothesisFails { conclusion_holds } => format!(
                "hypothesis fails; conclusion evaluated: {}",
                if *conclusion_holds { "holds" } else { "fails" }
            ),
            CheckStatus::Skipped { reason } => format!("skipped: {reason}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub statement: String,
    pub hypothesis: Hypothesis,
    #[serde(flatten)]
    pub status: CheckStatus,
    pub cases: usize,
    pub worst_error: f64,
    pub detail: Option<String>,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.status == CheckStatus::Pass
    }

    pub fn failed(&self) -> bool {
        self.status == CheckStatus::Fail
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub k: usize,
    pub depth: usize,
    pub atoms_per_level: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessReport {
    pub config: HarnessConfig,
    pub instance: InstanceSummary,
    pub equivalence: EquivalenceBounds,
    pub condition_b: bool,
    pub condition_b_index: Option<usize>,
    pub checks: Vec<Check>,
}

impl HarnessReport {
    pub fn any_failed(&self) -> bool {
        self.checks.iter().any(Check::failed)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "seed {}, {} trials; k = {}, depth {}, atoms per level {:?}; condition B: {}",
            self.config.seed,
            self.config.trials,
            self.instance.k,
            self.instance.depth,
            self.instance.atoms_per_level,
            match self.condition_b_index {
                Some(i) => format!("holds with index {}", i + 1),
                None => "fails".into(),
            }
        );
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        for c in &self.checks {
            let _ = write!(
                out,
                "{:<width$}  {}  [{} cases, worst error {:.2e}]",
                c.name,
                c.status.label(),
                c.cases,
                c.worst_error
            );
            if let Some(d) = &c.detail {
                let _ = write!(out, "  {d}");
            }
            out.push('\n');
        }
        out
    }
}

/// Accumulates errors of individual cases; the first case exceeding its
/// allowance is kept as the failure description.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub cases: usize,
    pub worst_error: f64,
    pub failure: Option<String>,
}

impl Outcome {
    pub fn holds(&self) -> bool {
        self.failure.is_none()
    }

    fn record(&mut self, err: f64, allowed: f64, what: impl FnOnce() -> String) {
        self.cases += 1;
        if err > self.worst_error || err.is_nan() {
            self.worst_error = err;
        }
        if !(err <= allowed) && self.failure.is_none() {
            self.failure = Some(format!("{} (error {err:.3e})", what()));
        }
    }

    fn fail(&mut self, what: String) {
        self.cases += 1;
        if self.failure.is_none() {
            self.failure = Some(what);
        }
    }

    fn merge(&mut self, other: Outcome) {
        self.cases += other.cases;
        if other.worst_error > self.worst_error || other.worst_error.is_nan() {
            self.worst_error = other.worst_error;
        }
        if self.failure.is_none() {
            self.failure = other.failure;
        }
    }
}

fn relative(x: f64) -> f64 {
    1.0 + x.abs()
}

fn max_abs(levels: &AdaptedProcess) -> f64 {
    levels.levels.iter().flatten().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Per-instance state shared by all checks.
pub struct Checker<'a> {
    family: &'a MeasureFamily,
    tol: Tolerances,
    exec: Exec,
    config: HarnessConfig,
    condition_b: ConditionBReport,
    /// `kernels[l][i][n]`: `(dP_i/dP_l) / E^{P_l}{dP_i/dP_l | F_n}` on the leaves.
    kernels: Vec<Vec<Vec<RandomVariable>>>,
}

impl<'a> Checker<'a> {
    pub fn new(family: &'a MeasureFamily, config: HarnessConfig, tol: Tolerances, exec: Exec) -> Result<Self> {
        let k = family.k();
        let kernels = (0..k)
            .map(|l| {
                (0..k)
                    .map(|i| {
                        (0..=family.depth())
                            .map(|n| measure_change_kernel(family, i, l, n))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            family,
            tol,
            exec,
            config,
            condition_b: family.check_condition_b(&tol),
            kernels,
        })
    }

    pub fn condition_b(&self) -> &ConditionBReport {
        &self.condition_b
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(stream);
        rng
    }

    fn leaves(&self) -> usize {
        self.family.tree().leaf_count()
    }

    fn depth(&self) -> usize {
        self.family.depth()
    }

    fn ce(&self, measure: usize, xi: &RandomVariable, level: usize) -> Vec<f64> {
        cond_exp_leaf_measure(self.family.tree(), self.family.leaf_probabilities(measure), xi, level).values
    }

    fn ce_under(&self, leaf_measure: &[f64], xi: &RandomVariable, level: usize) -> Vec<f64> {
        cond_exp_leaf_measure(self.family.tree(), leaf_measure, xi, level).values
    }

    fn sup(&self, xi: &RandomVariable, level: usize) -> Vec<f64> {
        (0..self.family.k())
            .map(|i| self.ce(i, xi, level))
            .reduce(|a, b| a.iter().zip(&b).map(|(x, y)| x.max(*y)).collect())
            .expect("k >= 1")
    }

    fn lift(&self, level: usize, values: Vec<f64>) -> RandomVariable {
        AdaptedValues::new(level, values).lift(self.family.tree())
    }

    fn ancestor(&self, level: usize, index: usize, target: usize) -> usize {
        let mut idx = index;
        for m in (target + 1..=level).rev() {
            idx = self.family.tree().parent(m, idx);
        }
        idx
    }

    /// Evaluates `f` on every input through the executor and merges the
    /// outcomes in input order; errors count as failed cases.
    fn run<T: Sync>(&self, inputs: &[T], f: impl Fn(&T) -> Result<Outcome> + Sync + Send) -> Outcome {
        let parts = self.exec.map(inputs, |x| match f(x) {
            Ok(o) => o,
            Err(e) => {
                let mut o = Outcome::default();
                o.fail(format!("error: {e}"));
                o
            }
        });
        let mut total = Outcome::default();
        for p in parts {
            total.merge(p);
        }
        total
    }

    fn finish(&self, name: &str, statement: &str, hypothesis: Hypothesis, outcome: Outcome) -> Check {
        let gated_off = hypothesis == Hypothesis::ConditionB && !self.condition_b.passed;
        let status = if outcome.cases == 0 {
            CheckStatus::Skipped {
                reason: "no applicable cases on this instance".into(),
            }
        } else if gated_off {
            CheckStatus::HypothesisFails {
                conclusion_holds: outcome.holds(),
            }
        } else if outcome.holds() {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        };
        Check {
            name: name.into(),
            statement: statement.into(),
            hypothesis,
            status,
            cases: outcome.cases,
            worst_error: outcome.worst_error,
            detail: outcome.failure,
        }
    }

    /// For "there is an index `i0` such that ..." conclusions: the index from
    /// the condition report when it holds, otherwise the first candidate that
    /// satisfies the conclusion (or the first candidate's outcome when none does).
    fn existential(&self, eval: impl Fn(usize) -> Outcome) -> Outcome {
        if let Some(i0) = self.condition_b.i0 {
            return eval(i0);
        }
        let outcomes: Vec<Outcome> = (0..self.family.k()).map(&eval).collect();
        outcomes
            .iter()
            .find(|o| o.holds())
            .cloned()
            .unwrap_or_else(|| outcomes[0].clone())
    }

    fn pairs(&self) -> Vec<(usize, usize)> {
        let k = self.family.k();
        (0..k).flat_map(|i| (0..k).map(move |l| (i, l))).collect()
    }

    /// Ratio of conditioned densities on an atom of a finer level against its
    /// ancestor, computed from conditional expectations and from probabilities.
    pub fn rn_ratio_identity(&self) -> Check {
        let fam = self.family;
        let outcome = self.run(&self.pairs(), |&(i, l)| {
            let mut out = Outcome::default();
            let ratio = RandomVariable(
                fam.leaf_probabilities(i)
                    .iter()
                    .zip(fam.leaf_probabilities(l))
                    .map(|(a, b)| a / b)
                    .collect(),
            );
            let cond: Vec<Vec<f64>> = (0..=self.depth()).map(|n| self.ce(l, &ratio, n)).collect();
            for big in 1..=self.depth() {
                for n in 0..big {
                    for s in 0..fam.tree().atom_count(big) {
                        let j = self.ancestor(big, s, n);
                        let direct = cond[big][s] / cond[n][j];
                        let formula = fam.prob(i, big, s) * fam.prob(l, n, j) / (fam.prob(i, n, j) * fam.prob(l, big, s));
                        out.record((direct - formula).abs(), self.tol.identity * relative(formula), || {
                            format!("measures ({}, {}) on {} over level {n}", i + 1, l + 1, AtomId::new(big, s))
                        });
                    }
                }
            }
            Ok(out)
        });
        self.finish(
            "rn_ratio_identity",
            "E^{P_l}{dP_i/dP_l|F_N} / E^{P_l}{dP_i/dP_l|F_n} = P_i(E)P_l(F) / (P_i(F)P_l(E))",
            Hypothesis::None,
            outcome,
        )
    }

    /// The conditioned density ratio of every measure is dominated by that of
    /// the distinguished measure, for levels `1 <= n < N`.
    pub fn rn_ratio_domination(&self) -> Check {
        let fam = self.family;
        let ratio = |i: usize, l: usize, big: usize, s: usize, n: usize, j: usize| {
            fam.prob(i, big, s) * fam.prob(l, n, j) / (fam.prob(i, n, j) * fam.prob(l, big, s))
        };
        let outcome = self.existential(|i0| {
            let mut out = Outcome::default();
            for (i, l) in self.pairs() {
                for big in 2..=self.depth() {
                    for n in 1..big {
                        for s in 0..fam.tree().atom_count(big) {
                            let j = self.ancestor(big, s, n);
                            let (r, top) = (ratio(i, l, big, s, n, j), ratio(i0, l, big, s, n, j));
                            out.record((r - top).max(0.0), self.tol.identity * relative(top), || {
                                format!(
                                    "measure {} exceeds measure {} under base {} on {} over level {n}",
                                    i + 1,
                                    i0 + 1,
                                    l + 1,
                                    AtomId::new(big, s)
                                )
                            });
                        }
                    }
                }
            }
            out
        });
        self.finish(
            "rn_ratio_domination",
            "conditioned density ratios are dominated by those of P_{i0} for 1 <= n < N",
            Hypothesis::ConditionB,
            outcome,
        )
    }

    /// `(dP_i/dP_l) / E^{P_l}{dP_i/dP_l|F_n}` is dominated leafwise by the same
    /// quantity for `P_{i0}`, for `n >= 1`.
    pub fn density_ratio_domination(&self) -> Check {
        let outcome = self.existential(|i0| {
            let mut out = Outcome::default();
            for (i, l) in self.pairs() {
                for n in 1..=self.depth() {
                    let (a, b) = (&self.kernels[l][i][n].0, &self.kernels[l][i0][n].0);
                    for (e, (x, y)) in a.iter().zip(b).enumerate() {
                        out.record((x - y).max(0.0), self.tol.identity * relative(*y), || {
                            format!("measure {} exceeds measure {} under base {} on leaf {e} at level {n}", i + 1, i0 + 1, l + 1)
                        });
                    }
                }
            }
            out
        });
        self.finish(
            "density_ratio_domination",
            "(dP_i/dP_l) / E^{P_l}{dP_i/dP_l|F_n} <= the same for P_{i0}, n >= 1",
            Hypothesis::ConditionB,
            outcome,
        )
    }

    /// Mixture conditional expectations never exceed the vertex maximum, and the
    /// maximum is attained at a vertex.
    pub fn sup_equals_vertex_max(&self) -> Check {
        let k = self.family.k();
        let mut rng = self.rng(4);
        let draws: Vec<(RandomVariable, Vec<f64>)> = (0..self.config.trials)
            .map(|_| (random_variable_with(&mut rng, self.leaves(), -1.0, 1.0), random_simplex_point(&mut rng, k)))
            .collect();
        let outcome = self.run(&draws, |(xi, w)| {
            let mut out = Outcome::default();
            for n in 0..=self.depth() {
                let sup = self.sup(xi, n);
                let mix = cond_exp_mixture(self.family, w, xi, n, &self.tol)?.values;
                let vertices = (0..k)
                    .map(|i| {
                        let mut e = vec![0.0; k];
                        e[i] = 1.0;
                        cond_exp_mixture(self.family, &e, xi, n, &self.tol).map(|v| v.values)
                    })
                    .collect::<Result<Vec<_>>>()?;
                for s in 0..sup.len() {
                    out.record((mix[s] - sup[s]).max(0.0), self.tol.identity * relative(sup[s]), || {
                        format!("mixture exceeds the maximum on {}", AtomId::new(n, s))
                    });
                    let best = vertices.iter().map(|v| v[s]).fold(f64::NEG_INFINITY, f64::max);
                    out.record((best - sup[s]).abs(), self.tol.identity * relative(sup[s]), || {
                        format!("vertex maximum not attained on {}", AtomId::new(n, s))
                    });
                }
            }
            Ok(out)
        });
        self.finish(
            "sup_equals_vertex_max",
            "sup_{Q in M} E^Q{xi|F_n} = max_i E^{P_i}{xi|F_n}",
            Hypothesis::None,
            outcome,
        )
    }

    /// `E^Q{max_j f_j | G} >= max_j E^Q{f_j | G}` for nonnegative `f_j`.
    pub fn max_convexity(&self) -> Check {
        let mut rng = self.rng(5);
        let draws: Vec<(Vec<RandomVariable>, Vec<f64>)> = (0..self.config.trials)
            .map(|_| {
                let count = rng.random_range(2..=4);
                let fs = (0..count).map(|_| random_variable_with(&mut rng, self.leaves(), 0.0, 1.0)).collect();
                (fs, random_simplex_point(&mut rng, self.family.k()))
            })
            .collect();
        let outcome = self.run(&draws, |(fs, w)| {
            let mut out = Outcome::default();
            let q = self.family.mixture(w)?;
            let top = RandomVariable::max_of(fs);
            for n in 0..=self.depth() {
                let lhs = self.ce_under(&q, &top, n);
                let rhs = fs
                    .iter()
                    .map(|f| self.ce_under(&q, f, n))
                    .reduce(|a, b| a.iter().zip(&b).map(|(x, y)| x.max(*y)).collect())
                    .expect("at least two variables");
                for s in 0..lhs.len() {
                    out.record((rhs[s] - lhs[s]).max(0.0), self.tol.identity * relative(lhs[s]), || {
                        format!("conditional maximum below maximum of conditionals on {}", AtomId::new(n, s))
                    });
                }
            }
            Ok(out)
        });
        self.finish(
            "max_convexity",
            "E^P{max_j f_j|G} >= max_j E^P{f_j|G}",
            Hypothesis::None,
            outcome,
        )
    }

    /// `E^{P_i}{eta|F_n} = E^{P_l}{eta phi_n^{P_i}|F_n}`.
    pub fn measure_change(&self) -> Check {
        let mut rng = self.rng(6);
        let draws: Vec<RandomVariable> = (0..self.config.trials)
            .map(|_| random_variable_with(&mut rng, self.leaves(), -1.0, 1.0))
            .collect();
        let outcome = self.run(&draws, |eta| {
            let mut out = Outcome::default();
            for (i, l) in self.pairs() {
                for n in 0..=self.depth() {
                    let a = self.ce(i, eta, n);
                    let b = self.ce(l, &eta.mul(&self.kernels[l][i][n]), n);
                    for s in 0..a.len() {
                        out.record((a[s] - b[s]).abs(), self.tol.identity * relative(a[s]), || {
                            format!("measures ({}, {}) on {}", i + 1, l + 1, AtomId::new(n, s))
                        });
                    }
                }
            }
            Ok(out)
        });
        self.finish(
            "measure_change",
            "E^{P_i}{eta|F_n} = E^{P_l}{eta phi_n^{P_i}|F_n}",
            Hypothesis::None,
            outcome,
        )
    }

    fn nonnegative_draws(&self, stream: u64) -> Vec<RandomVariable> {
        let mut rng = self.rng(stream);
        (0..self.config.trials)
            .map(|_| random_variable_with(&mut rng, self.leaves(), 0.0, 1.0))
            .collect()
    }

    /// `E^{P_l}{max_i E^{P_i}{xi|F_n}|F_m} = max_i E^{P_l}{xi phi_n^{P_i}|F_m}`, `n > m`.
    pub fn max_tower(&self) -> Check {
        let k = self.family.k();
        let outcome = self.run(&self.nonnegative_draws(7), |xi| {
            let mut out = Outcome::default();
            for n in 1..=self.depth() {
                let sup_n = self.lift(n, self.sup(xi, n));
                for l in 0..k {
                    for m in 0..n {
                        let lhs = self.ce(l, &sup_n, m);
                        let rhs = (0..k)
                            .map(|i| self.ce(l, &xi.mul(&self.kernels[l][i][n]), m))
                            .reduce(|a, b| a.iter().zip(&b).map(|(x, y)| x.max(*y)).collect())
                            .expect("k >= 1");
                        for s in 0..lhs.len() {
                            out.record((lhs[s] - rhs[s]).abs(), self.tol.identity * relative(rhs[s]), || {
                                format!("base {} on {} with n = {n}", l + 1, AtomId::new(m, s))
                            });
                        }
                    }
                }
            }
            Ok(out)
        });
        self.finish(
            "max_tower",
            "E^{P_l}{max_i E^{P_i}{xi|F_n}|F_m} = max_i E^{P_l}{xi phi_n^{P_i}|F_m}, n > m",
            Hypothesis::ConditionB,
            outcome,
        )
    }

    /// `E^{P_l}{xi max_i phi_n^{P_i}|F_n} = max_i E^{P_l}{xi phi_n^{P_i}|F_n}`, `n >= 1`.
    pub fn max_swap(&self) -> Check {
        let k = self.family.k();
        let outcome = self.run(&self.nonnegative_draws(8), |xi| {
            let mut out = Outcome::default();
            for n in 1..=self.depth() {
                for l in 0..k {
                    let top = RandomVariable::max_of(&(0..k).map(|i| self.kernels[l][i][n].clone()).collect::<Vec<_>>());
                    let lhs = self.ce(l, &xi.mul(&top), n);
                    let rhs = (0..k)
                        .map(|i| self.ce(l, &xi.mul(&self.kernels[l][i][n]), n))
                        .reduce(|a, b| a.iter().zip(&b).map(|(x, y)| x.max(*y)).collect())
                        .expect("k >= 1");
                    for s in 0..lhs.len() {
                        out.record((lhs[s] - rhs[s]).abs(), self.tol.identity * relative(rhs[s]), || {
                            format!("base {} on {}", l + 1, AtomId::new(n, s))
                        });
                    }
                }
            }
            Ok(out)
        });
        self.finish(
            "max_swap",
            "E^{P_l}{xi max_i phi_n^{P_i}|F_n} = max_i E^{P_l}{xi phi_n^{P_i}|F_n}, n >= 1",
            Hypothesis::ConditionB,
            outcome,
        )
    }

    /// `E^{P_l}{max_i E^{P_i}{xi|F_n}|F_m} <= max_i E^{P_i}{xi|F_m}` for `xi >= 0`.
    pub fn sup_supermartingale_vertices(&self) -> Check {
        let outcome = self.run(&self.nonnegative_draws(9), |xi| {
            let mut out = Outcome::default();
            let sups: Vec<Vec<f64>> = (0..=self.depth()).map(|n| self.sup(xi, n)).collect();
            for n in 1..=self.depth() {
                let lifted = self.lift(n, sups[n].clone());
                for l in 0..self.family.k() {
                    for m in 0..n {
                        let lhs = self.ce(l, &lifted, m);
                        for s in 0..lhs.len() {
                            out.record((lhs[s] - sups[m][s]).max(0.0), self.tol.identity * relative(sups[m][s]), || {
                                format!("measure {} on {} with n = {n}", l + 1, AtomId::new(m, s))
                            });
                        }
                    }
                }
            }
            Ok(out)
        });
        self.finish(
            "sup_supermartingale_vertices",
            "E^{P_l}{max_i E^{P_i}{xi|F_n}|F_m} <= max_i E^{P_i}{xi|F_m}, xi >= 0, n > m",
            Hypothesis::ConditionB,
            outcome,
        )
    }

    /// `E^Q{sup_P E^P{xi|F_n}|F_m} <= sup_P E^P{xi|F_m}` for sampled mixtures `Q`.
    pub fn sup_supermartingale_mixtures(&self) -> Check {
        let mut rng = self.rng(10);
        let draws: Vec<(RandomVariable, Vec<f64>)> = (0..self.config.trials)
            .map(|_| {
                (
                    random_variable_with(&mut rng, self.leaves(), -1.0, 1.0),
                    random_simplex_point(&mut rng, self.family.k()),
                )
            })
            .collect();
        let outcome = self.run(&draws, |(xi, w)| {
            let mut out = Outcome::default();
            let q = self.family.mixture(w)?;
            let sups: Vec<Vec<f64>> = (0..=self.depth()).map(|n| self.sup(xi, n)).collect();
            for n in 1..=self.depth() {
                let lifted = self.lift(n, sups[n].clone());
                for m in 0..n {
                    let lhs = self.ce_under(&q, &lifted, m);
                    for s in 0..lhs.len() {
                        out.record((lhs[s] - sups[m][s]).max(0.0), self.tol.identity * relative(sups[m][s]), || {
                            format!("{} with n = {n}", AtomId::new(m, s))
                        });
                    }
                }
            }
            Ok(out)
        });
        self.finish(
            "sup_supermartingale_mixtures",
            "E^Q{sup_P E^P{xi|F_n}|F_m} <= sup_P E^P{xi|F_m}, Q in M, n > m",
            Hypothesis::ConditionB,
            outcome,
        )
    }

    /// With all `E^{P_i} xi` equal, the sup-process is a martingale under
    /// every measure.
    pub fn sup_martingale_equal_means(&self) -> Check {
        let mut rng = self.rng(11);
        let draws: Vec<RandomVariable> = (0..self.config.trials)
            .map(|_| random_normalized_variable_with(&mut rng, self.family))
            .collect();
        let outcome = self.run(&draws, |xi| {
            let mut out = Outcome::default();
            let means: Vec<f64> = (0..self.family.k()).map(|i| self.ce(i, xi, 0)[0]).collect();
            let spread = means.iter().fold(0.0f64, |a, m| a.max((m - means[0]).abs()));
            if spread > MOMENT_TOL {
                return Ok(out);
            }
            let f = sup_process(self.family, xi)?;
            out.record(martingale_defect(self.family, &f), MARTINGALE_TOL * relative(max_abs(&f)), || {
                "sup-process is not a martingale".into()
            });
            Ok(out)
        });
        self.finish(
            "sup_martingale_equal_means",
            "E^{P_i} xi all equal => sup_P E^P{xi|F_m} is a martingale under every P",
            Hypothesis::ConditionB,
            outcome,
        )
    }

    fn regular_processes(&self, stream: u64, nonnegative: bool) -> Vec<AdaptedProcess> {
        let mut rng = self.rng(stream);
        (0..self.config.trials)
            .map(|_| random_regular_supermartingale_with(&mut rng, self.family, nonnegative))
            .collect()
    }

    /// Deficit of a supermartingale under measures near `P_1` is at least
    /// `l/(1+L)` times the deficit bound under `P_1`.
    pub fn mixture_deficit_bound(&self) -> Check {
        let processes = self.regular_processes(12, false);
        let inputs: Vec<(u64, &AdaptedProcess)> = processes
            .iter()
            .enumerate()
            .map(|(t, f)| (self.config.seed.wrapping_add(t as u64), f))
            .collect();
        let outcome = self.run(&inputs, |&(seed, f)| {
            let mut out = Outcome::default();
            for m0 in 1..=self.depth() {
                let e = one_step_expectation(self.family, 0, f, m0);
                let phi: Vec<f64> = f.levels[m0 - 1].iter().zip(&e).map(|(a, b)| (a - b).max(0.0)).collect();
                let report = theorem1_bound_check(self.family, f, m0, &phi, self.config.mixtures, seed, Exec::Sequential, &self.tol)?;
                match report.status {
                    Theorem1Status::Verified => {
                        let margin = report.min_margin.unwrap_or(0.0);
                        out.record((-margin).max(0.0), self.tol.inequality, || format!("step {m0}"));
                    }
                    Theorem1Status::Violated { trial, atom, deficit, bound } => {
                        out.fail(format!("step {m0}, sample {trial}, {atom}: deficit {deficit} < bound {bound}"));
                    }
                    Theorem1Status::Untestable { .. } => {}
                }
            }
            Ok(out)
        });
        self.finish(
            "mixture_deficit_bound",
            "f_{m0-1} - E^Q{f_{m0}|F_{m0-1}} >= l/(1+L) phi for Q = (1-a)P_1 + aP', a <= L/(1+L)",
            Hypothesis::None,
            outcome,
        )
    }

    /// `f + g` of a decomposition satisfies the tower property under sampled
    /// mixtures once its terminal expectations equal `f_0`.
    pub fn martingale_tower(&self) -> Check {
        let processes = self.regular_processes(13, false);
        let mut rng = self.rng(113);
        let inputs: Vec<(&AdaptedProcess, Vec<f64>)> = processes
            .iter()
            .map(|f| (f, random_simplex_point(&mut rng, self.family.k())))
            .collect();
        let outcome = self.run(&inputs, |(f, w)| {
            let mut out = Outcome::default();
            let d = decompose(self.family, f, &self.tol, Exec::Sequential)?;
            let m = &d.martingale_part;
            let scale = relative(max_abs(m));
            let n = self.depth();
            let terminal = m.terminal();
            let equal = (0..self.family.k()).all(|i| (self.ce(i, &terminal, 0)[0] - f.levels[0][0]).abs() <= MARTINGALE_TOL * scale);
            if !equal {
                return Ok(out);
            }
            let q = self.family.mixture(w)?;
            for top in 1..=n {
                let lifted = self.lift(top, m.levels[top].clone());
                for lower in 0..top {
                    let e = self.ce_under(&q, &lifted, lower);
                    for s in 0..e.len() {
                        out.record((e[s] - m.levels[lower][s]).abs(), MARTINGALE_TOL * scale, || {
                            format!("E^Q{{M_{top}|F_{lower}}} on {}", AtomId::new(lower, s))
                        });
                    }
                }
            }
            Ok(out)
        });
        self.finish(
            "martingale_tower",
            "E^P{f_m + g_m|F_k} = f_k + g_k for k <= m and P in M",
            Hypothesis::None,
            outcome,
        )
    }

    /// Cell feasibility, existence of the decomposition and the martingale
    /// property of `f + g` agree.
    pub fn regularity_criterion(&self) -> Check {
        let mut rng = self.rng(14);
        let inputs: Vec<(AdaptedProcess, bool)> = (0..self.config.trials)
            .map(|t| {
                if t % 2 == 0 {
                    (random_regular_supermartingale_with(&mut rng, self.family, false), true)
                } else {
                    (random_supermartingale_candidate(rng.random(), self.family), false)
                }
            })
            .collect();
        let outcome = self.run(&inputs, |(f, constructed)| {
            let mut out = Outcome::default();
            let class = classify(self.family, f, &self.tol)?;
            let report = test_regularity(self.family, f, &self.tol, Exec::Sequential)?;
            if report.supermartingale != class.is_supermartingale() {
                out.fail("cell signs disagree with the supermartingale classification".into());
                return Ok(out);
            }
            if !report.supermartingale {
                return Ok(out);
            }
            if *constructed && !report.regular {
                out.fail(format!("regular by construction but cells {:?} are infeasible", report.failing_cells()));
                return Ok(out);
            }
            if !report.regular {
                out.record(0.0, 0.0, String::new);
                return Ok(out);
            }
            let d = match decompose_from_report(self.family, f, &report) {
                Ok(d) => d,
                Err(e) => {
                    out.fail(format!("feasible cells but no decomposition: {e}"));
                    return Ok(out);
                }
            };
            let low = d.increments.min_value();
            if low < -self.tol.inequality {
                out.fail(format!("negative increment {low}"));
            }
            let mclass = classify(self.family, &d.martingale_part, &self.tol)?.classification;
            if mclass != Classification::Martingale {
                out.fail(format!("f + g classified as {mclass:?}"));
            }
            out.record(d.martingale_error, MARTINGALE_TOL * relative(max_abs(&d.martingale_part)), || {
                "martingale part defect".into()
            });
            Ok(out)
        });
        self.finish(
            "regularity_criterion",
            "regular <=> nonnegative increments solving every cell system <=> f + g is a martingale",
            Hypothesis::None,
            outcome,
        )
    }

    /// `dg_m = f_{m-1} - E^{P_j}{f_m|F_{m-1}} + Psi^j_m` with centred `Psi^j`.
    pub fn increment_structure(&self) -> Check {
        let processes = self.regular_processes(15, false);
        let outcome = self.run(&processes, |f| {
            let mut out = Outcome::default();
            let d = decompose(self.family, f, &self.tol, Exec::Sequential)?;
            let scale = relative(max_abs(f));
            for j in 0..self.family.k() {
                let psi = psi_residuals(self.family, f, &d, j)?;
                for m in 1..=self.depth() {
                    let e = one_step_expectation(self.family, j, &psi, m);
                    let worst = e.iter().fold(0.0f64, |a, x| a.max(x.abs()));
                    out.record(worst, 1e-12 * scale, || format!("Psi under measure {} at step {m}", j + 1));
                }
            }
            Ok(out)
        });
        self.finish(
            "increment_structure",
            "g_m - g_{m-1} = f_{m-1} - E^{P_j}{f_m|F_{m-1}} + Psi^j_m, E^{P_j}{Psi^j_m|F_{m-1}} = 0",
            Hypothesis::None,
            outcome,
        )
    }

    /// Regularity of the sup-process versus equal expectations: necessity
    /// (asserted unconditionally) and the full equivalence (gated).
    pub fn sup_regularity(&self) -> [Check; 2] {
        let mut rng = self.rng(16);
        let draws: Vec<RandomVariable> = (0..self.config.trials)
            .map(|t| {
                if t % 2 == 0 {
                    random_variable_with(&mut rng, self.leaves(), 0.0, 1.0)
                } else {
                    random_normalized_variable_with(&mut rng, self.family)
                }
            })
            .collect();
        let verdicts: Vec<Result<EqualMeansVerdict>> = self
            .exec
            .map(&draws, |xi| equal_means_check(self.family, xi, &self.tol, Exec::Sequential));
        let mut necessity = Outcome::default();
        let mut iff = Outcome::default();
        for (t, v) in verdicts.iter().enumerate() {
            match v {
                Ok(v) => {
                    necessity.record(if v.necessity_holds { 0.0 } else { 1.0 }, 0.0, || {
                        format!("draw {t}: regular but expectations {:?} differ", v.expectations)
                    });
                    iff.record(if v.iff_holds { 0.0 } else { 1.0 }, 0.0, || {
                        format!(
                            "draw {t}: expectations equal = {}, regular = {}",
                            v.expectations_equal, v.regular
                        )
                    });
                }
                Err(e) => {
                    necessity.fail(format!("draw {t}: error: {e}"));
                    iff.fail(format!("draw {t}: error: {e}"));
                }
            }
        }
        [
            self.finish(
                "sup_regularity_necessity",
                "sup_P E^P{xi|F_m} regular => all E^{P_i} xi equal",
                Hypothesis::None,
                necessity,
            ),
            self.finish(
                "sup_regularity_iff",
                "sup_P E^P{xi|F_m} regular <=> all E^{P_i} xi equal",
                Hypothesis::ConditionB,
                iff,
            ),
        ]
    }

    fn g0_families(&self) -> Result<Vec<GZeroFamily>> {
        (0..=self.depth()).map(|n| solve_g0(self.family, n, &self.tol)).collect()
    }

    /// Random convex combination of the known elements of a random level.
    fn random_g0_element<R: Rng>(&self, rng: &mut R, families: &[GZeroFamily]) -> Result<GZeroElement> {
        let g0 = &families[rng.random_range(0..families.len())];
        let w = random_simplex_point(rng, g0.elements.len());
        let mut values = vec![0.0; g0.elements[0].values.len()];
        for (c, e) in w.iter().zip(&g0.elements) {
            for (v, x) in values.iter_mut().zip(&e.values) {
                *v += c * x;
            }
        }
        GZeroElement::new(self.family, g0.level, values)
    }

    /// `E^P{xi|F_m}` of a normalized density is the same process for every
    /// measure and is a martingale.
    pub fn density_martingale(&self) -> Check {
        let outcome = (|| -> Result<Outcome> {
            let families = self.g0_families()?;
            let mut rng = self.rng(17);
            let draws = (0..self.config.trials)
                .map(|_| self.random_g0_element(&mut rng, &families))
                .collect::<Result<Vec<_>>>()?;
            Ok(self.run(&draws, |xi| {
                let mut out = Outcome::default();
                let dm = martingale_from_xi(self.family, xi, &self.tol)?;
                out.record(dm.deviation, MOMENT_TOL, || format!("level-{} density depends on the measure", xi.level));
                let defect = martingale_defect(self.family, &dm.process);
                out.record(defect, MARTINGALE_TOL * relative(max_abs(&dm.process)), || {
                    format!("level-{} density process is not a martingale", xi.level)
                });
                Ok(out)
            }))
        })()
        .unwrap_or_else(|e| {
            let mut o = Outcome::default();
            o.fail(format!("error: {e}"));
            o
        });
        self.finish(
            "density_martingale",
            "xi >= 0, E^P xi = 1 for all P => E^P{xi|F_m} is one martingale for all P",
            Hypothesis::ConditionB,
            outcome,
        )
    }

    /// `f_m E{xi|F_m}` with `f` nonincreasing is regular with increments
    /// `(f_{m-1} - f_m) E{xi|F_m}`; nonnegative combinations stay regular.
    pub fn generator_class_k(&self) -> Check {
        let outcome = (|| -> Result<Outcome> {
            let families = self.g0_families()?;
            let tree = self.family.tree();
            let mut rng = self.rng(18);
            let mut draws = Vec::with_capacity(self.config.trials);
            for _ in 0..self.config.trials {
                let mut levels: Vec<Vec<f64>> = vec![vec![0.5 + rng.random::<f64>()]];
                for m in 1..=tree.depth() {
                    let row = (0..tree.atom_count(m))
                        .map(|s| levels[m - 1][tree.parent(m, s)] * (0.5 + 0.5 * rng.random::<f64>()))
                        .collect();
                    levels.push(row);
                }
                let xi = self.random_g0_element(&mut rng, &families)?;
                let other = self.random_g0_element(&mut rng, &families)?;
                let c = [rng.random::<f64>() * 2.0, rng.random::<f64>() * 2.0];
                draws.push((AdaptedProcess { levels }, xi, other, c));
            }
            Ok(self.run(&draws, |(f, xi, other, c)| {
                let mut out = Outcome::default();
                let g = match local_regular_generator(self.family, f, xi, &self.tol, Exec::Sequential) {
                    Ok(g) => g,
                    Err(Error::NotRegular { cells, .. }) => {
                        out.fail(format!("generator is not regular at {cells:?}"));
                        return Ok(out);
                    }
                    Err(e) => return Err(e),
                };
                let scale = relative(max_abs(&g.martingale_part));
                out.record(g.formula_defect, MARTINGALE_TOL * scale, || "explicit increments do not give a martingale".into());
                let density = martingale_from_xi(self.family, other, &self.tol)?.process;
                match class_k_combination(self.family, &[(c[0], g.process.clone()), (c[1], density)], &self.tol, Exec::Sequential) {
                    Ok(_) => out.record(0.0, 0.0, String::new),
                    Err(Error::NotRegular { cells, .. }) => out.fail(format!("combination is not regular at {cells:?}")),
                    Err(e) => return Err(e),
                }
                Ok(out)
            }))
        })()
        .unwrap_or_else(|e| {
            let mut o = Outcome::default();
            o.fail(format!("error: {e}"));
            o
        });
        self.finish(
            "generator_class_k",
            "f nonincreasing, xi normalized => f_m E^P{xi|F_m} and nonnegative sums are regular",
            Hypothesis::ConditionB,
            outcome,
        )
    }

    /// A nonnegative regular supermartingale is `f_0 E{xi|F_m}` minus a
    /// nondecreasing process with `xi` normalized.
    pub fn representation(&self) -> Check {
        let processes = self.regular_processes(19, true);
        let outcome = self.run(&processes, |f| {
            let mut out = Outcome::default();
            let r = crate::gzero::theorem12_representation(self.family, f, &self.tol, Exec::Sequential)?;
            out.record(r.reconstruction_error, MARTINGALE_TOL * relative(f.levels[0][0]), || "reconstruction".into());
            out.record(r.moment_error, MOMENT_TOL, || "moment identities of xi".into());
            Ok(out)
        });
        self.finish(
            "representation",
            "f >= 0 regular => f = f_0 E^P{xi|F_m} - g with xi normalized, g nondecreasing",
            Hypothesis::None,
            outcome,
        )
    }

    /// Basic solutions of moment systems solve the system, are linearly
    /// independent, and reproduce sampled strictly positive solutions.
    pub fn cone_solution_family(&self) -> Check {
        let mut rng = self.rng(20);
        let mut systems: Vec<(ConeSystem, Vec<f64>)> = Vec::new();
        for n in 0..=self.depth() {
            let count = self.family.tree().atom_count(n);
            let vectors = (0..count)
                .map(|j| (0..self.family.k()).map(|i| self.family.prob(i, n, j)).collect())
                .collect();
            if let Ok(system) = ConeSystem::new(vectors, vec![1.0; self.family.k()]) {
                systems.push((system, vec![1.0; count]));
            }
        }
        while systems.len() < self.config.trials.max(systems.len()) {
            let k = rng.random_range(1..=3);
            let m = rng.random_range(k..=5);
            let vectors: Vec<Vec<f64>> = (0..m).map(|_| (0..k).map(|_| 0.1 + 0.9 * rng.random::<f64>()).collect()).collect();
            let x: Vec<f64> = (0..m).map(|_| 0.2 + 0.8 * rng.random::<f64>()).collect();
            let target = (0..k).map(|i| vectors.iter().zip(&x).map(|(v, c)| v[i] * c).sum()).collect();
            systems.push((ConeSystem::new(vectors, target).expect("random system is valid"), x));
        }
        let inputs: Vec<(ConeSystem, Vec<f64>, Vec<Vec<f64>>)> = systems
            .into_iter()
            .map(|(system, x0)| {
                let mat = DMatrix::from_fn(system.k(), system.m(), |i, j| system.vectors[j][i]);
                let points = (0..5)
                    .map(|_| {
                        let raw: Vec<f64> = (0..system.m()).map(|_| rng.random::<f64>() - 0.5).collect();
                        let u = project_to_kernel(&mat, &raw);
                        let room = x0
                            .iter()
                            .zip(&u)
                            .filter(|(_, d)| **d < -1e-12)
                            .map(|(x, d)| x / -d)
                            .fold(f64::INFINITY, f64::min);
                        let t = if room.is_finite() { 0.9 * room * rng.random::<f64>() } else { rng.random::<f64>() };
                        x0.iter().zip(&u).map(|(x, d)| x + t * d).collect()
                    })
                    .collect();
                (system, x0, points)
            })
            .collect();
        let outcome = self.run(&inputs, |(system, _, points)| {
            let mut out = Outcome::default();
            let sol = match cone::solve(system, &self.tol) {
                Ok(s) => s,
                Err(Error::ConeMembership(_)) => return Ok(out),
                Err(e) => return Err(e),
            };
            for (n, z) in sol.basic_solutions.iter().enumerate() {
                out.record(system.residual(z), self.tol.residual, || format!("basic solution {n} residual"));
            }
            let rank = rank_of(&sol.basic_solutions, system.m(), &self.tol);
            if rank != sol.basic_solutions.len() {
                out.fail(format!("{} basic solutions span rank {rank}", sol.basic_solutions.len()));
            }
            for x in points {
                if x.iter().any(|v| *v <= 0.0) {
                    continue;
                }
                let gamma = cone::weights_for(&sol, x);
                let z = cone::combine(&sol, &gamma, &self.tol)?;
                let err = z.values.iter().zip(x).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
                let scale = relative(x.iter().fold(0.0f64, |a, v| a.max(v.abs())));
                out.record(err, 1e-9 * scale, || "positive solution not reproduced".into());
            }
            Ok(out)
        });
        self.finish(
            "cone_solution_family",
            "basic solutions are independent and combine to every strictly positive solution",
            Hypothesis::None,
            outcome,
        )
    }

    pub fn all(&self) -> Vec<Check> {
        let [necessity, iff] = self.sup_regularity();
        vec![
            self.rn_ratio_identity(),
            self.rn_ratio_domination(),
            self.density_ratio_domination(),
            self.sup_equals_vertex_max(),
            self.max_convexity(),
            self.measure_change(),
            self.max_tower(),
            self.max_swap(),
            self.sup_supermartingale_vertices(),
            self.sup_supermartingale_mixtures(),
            self.sup_martingale_equal_means(),
            self.mixture_deficit_bound(),
            self.martingale_tower(),
            self.regularity_criterion(),
            self.increment_structure(),
            necessity,
            iff,
            self.density_martingale(),
            self.generator_class_k(),
            self.representation(),
            self.cone_solution_family(),
        ]
    }
}

/// Runs every check on one family.
pub fn verify_lemmas(family: &MeasureFamily, config: HarnessConfig, tol: &Tolerances, exec: Exec) -> Result<HarnessReport> {
    let checker = Checker::new(family, config, *tol, exec)?;
    let tree = family.tree();
    Ok(HarnessReport {
        config,
        instance: InstanceSummary {
            k: family.k(),
            depth: tree.depth(),
            atoms_per_level: (0..=tree.depth()).map(|n| tree.atom_count(n)).collect(),
        },
        equivalence: family.equivalence_bounds(),
        condition_b: checker.condition_b().passed,
        condition_b_index: checker.condition_b().i0,
        checks: checker.all(),
    })
}
