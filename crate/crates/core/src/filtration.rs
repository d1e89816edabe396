//! Finite atomic filtration trees.
//!
//! Level `n` of a tree is a partition of the sample space into atoms
//! `A^n_0, A^n_1, ...`. Every atom of level `n < depth` is the disjoint union of
//! its children at level `n + 1`; level 0 is the single atom `Omega`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Atom identity: level and 0-based position within the level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AtomId {
    pub level: usize,
    pub index: usize,
}

impl AtomId {
    pub const ROOT: AtomId = AtomId { level: 0, index: 0 };

    pub fn new(level: usize, index: usize) -> Self {
        Self { level, index }
    }
}

impl fmt::Display for AtomId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "A^{}_{}", self.level, self.index + 1)
    }
}

/// Raw JSON form of a tree. It may be malformed; [`check_condition_a`] reports
/// on it and [`FiltrationTree::try_from`] accepts only well-formed input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSpec {
    pub depth: usize,
    /// Atom count per level, `levels[0] == 1`.
    pub levels: Vec<usize>,
    /// `children[n][s]` lists the level-`n+1` positions inside atom `(n, s)`.
    pub children: Vec<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClauseResult {
    pub clause: String,
    pub level: Option<usize>,
    pub passed: bool,
    pub detail: String,
}

/// Clause-by-clause outcome of a structural condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: String,
    pub passed: bool,
    pub clauses: Vec<ClauseResult>,
}

impl ConditionReport {
    pub fn failed_clauses(&self) -> impl Iterator<Item = &ClauseResult> {
        self.clauses.iter().filter(|c| !c.passed)
    }

    /// Names of the failing clauses, deduplicated, in report order.
    pub fn failed_clause_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = Vec::new();
        for c in self.failed_clauses() {
            if !names.contains(&c.clause.as_str()) {
                names.push(&c.clause);
            }
        }
        names
    }
}

pub const CLAUSE_MINIMAL: &str = "minimal sigma-algebra";
pub const CLAUSE_ROOT: &str = "trivial root";
pub const CLAUSE_SHAPE: &str = "shape";
pub const CLAUSE_REFINEMENT: &str = "refinement";
pub const CLAUSE_DISJOINT: &str = "disjoint children";
pub const CLAUSE_COVERING: &str = "covering";

/// Checks every clause of condition A on a possibly malformed tree.
///
/// Malformed structure is reported, never returned as an error.
pub fn check_condition_a(spec: &TreeSpec) -> ConditionReport {
    let mut clauses = vec![ClauseResult {
        clause: CLAUSE_MINIMAL.into(),
        level: None,
        passed: true,
        detail: "vacuously satisfied at finite depth".into(),
    }];

    let root_ok = spec.levels.first() == Some(&1);
    clauses.push(ClauseResult {
        clause: CLAUSE_ROOT.into(),
        level: Some(0),
        passed: root_ok,
        detail: if root_ok {
            "level 0 is the single atom Omega".into()
        } else {
            format!("level 0 has {:?} atoms", spec.levels.first())
        },
    });

    let mut shape_problems = Vec::new();
    if spec.depth == 0 {
        shape_problems.push("depth must be at least 1".to_string());
    }
    if spec.levels.len() != spec.depth + 1 {
        shape_problems.push(format!(
            "{} level counts for depth {}",
            spec.levels.len(),
            spec.depth
        ));
    }
    if spec.children.len() != spec.depth {
        shape_problems.push(format!(
            "{} children tables for depth {}",
            spec.children.len(),
            spec.depth
        ));
    }
    for (n, table) in spec.children.iter().enumerate() {
        if let Some(&count) = spec.levels.get(n) {
            if table.len() != count {
                shape_problems.push(format!(
                    "level {n}: {} children lists for {count} atoms",
                    table.len()
                ));
            }
        }
    }
    clauses.push(ClauseResult {
        clause: CLAUSE_SHAPE.into(),
        level: None,
        passed: shape_problems.is_empty(),
        detail: if shape_problems.is_empty() {
            "level counts and children tables agree".into()
        } else {
            shape_problems.join("; ")
        },
    });

    let levels_checked = spec.children.len().min(spec.levels.len().saturating_sub(1));
    for n in 0..levels_checked {
        let next = spec.levels[n + 1];
        let table = &spec.children[n];

        let mut refinement = Vec::new();
        for (s, kids) in table.iter().enumerate() {
            if kids.is_empty() {
                refinement.push(format!("{} has no children", AtomId::new(n, s)));
            }
            for &j in kids {
                if j >= next {
                    refinement.push(format!(
                        "{} lists child {j} but level {} has {next} atoms",
                        AtomId::new(n, s),
                        n + 1
                    ));
                }
            }
        }
        clauses.push(ClauseResult {
            clause: CLAUSE_REFINEMENT.into(),
            level: Some(n),
            passed: refinement.is_empty(),
            detail: if refinement.is_empty() {
                format!("every level-{n} atom is a union of level-{} atoms", n + 1)
            } else {
                refinement.join("; ")
            },
        });

        let mut owner: Vec<Option<usize>> = vec![None; next];
        let mut overlaps = Vec::new();
        for (s, kids) in table.iter().enumerate() {
            for &j in kids.iter().filter(|&&j| j < next) {
                match owner[j] {
                    Some(prev) => overlaps.push(format!(
                        "child {} claimed by {} and {}",
                        AtomId::new(n + 1, j),
                        AtomId::new(n, prev),
                        AtomId::new(n, s)
                    )),
                    None => owner[j] = Some(s),
                }
            }
        }
        clauses.push(ClauseResult {
            clause: CLAUSE_DISJOINT.into(),
            level: Some(n),
            passed: overlaps.is_empty(),
            detail: if overlaps.is_empty() {
                "index sets I^n_s are pairwise disjoint".into()
            } else {
                overlaps.join("; ")
            },
        });

        let missing: Vec<String> = owner
            .iter()
            .enumerate()
            .filter(|(_, o)| o.is_none())
            .map(|(j, _)| AtomId::new(n + 1, j).to_string())
            .collect();
        clauses.push(ClauseResult {
            clause: CLAUSE_COVERING.into(),
            level: Some(n),
            passed: missing.is_empty(),
            detail: if missing.is_empty() {
                format!("level-{} atoms cover Omega", n + 1)
            } else {
                format!("not covered: {}", missing.join(", "))
            },
        });
    }

    ConditionReport {
        condition: "A".into(),
        passed: clauses.iter().all(|c| c.passed),
        clauses,
    }
}

/// A validated filtration tree. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FiltrationTree {
    counts: Vec<usize>,
    children: Vec<Vec<Vec<usize>>>,
    parents: Vec<Vec<usize>>,
    /// `ancestors[n][leaf]`: position of the level-`n` atom containing the leaf.
    ancestors: Vec<Vec<usize>>,
}

impl FiltrationTree {
    /// Uniform tree: every atom of level `n` has `branching[n]` children,
    /// numbered left to right.
    pub fn build(branching: &[usize]) -> Result<Self> {
        if branching.is_empty() {
            return Err(Error::Tree("branching list is empty".into()));
        }
        if let Some(n) = branching.iter().position(|&b| b == 0) {
            return Err(Error::Tree(format!("zero child count at level {n}")));
        }
        let mut counts = vec![1usize];
        let mut per_atom = Vec::with_capacity(branching.len());
        for &b in branching {
            let atoms = *counts.last().unwrap();
            per_atom.push(vec![b; atoms]);
            counts.push(atoms * b);
        }
        Self::from_child_counts(per_atom)
    }

    /// Tree from explicit per-atom child counts, `counts[n][s]` children for
    /// atom `(n, s)`, numbered left to right.
    pub fn from_child_counts(counts: Vec<Vec<usize>>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Tree("no levels given".into()));
        }
        let mut levels = vec![1usize];
        let mut children = Vec::with_capacity(counts.len());
        for (n, level) in counts.iter().enumerate() {
            if level.len() != levels[n] {
                return Err(Error::Tree(format!(
                    "level {n} has {} atoms but {} child counts were given",
                    levels[n],
                    level.len()
                )));
            }
            let mut next = 0usize;
            let mut table = Vec::with_capacity(level.len());
            for (s, &c) in level.iter().enumerate() {
                if c == 0 {
                    return Err(Error::Tree(format!("zero child count for {}", AtomId::new(n, s))));
                }
                table.push((next..next + c).collect());
                next += c;
            }
            children.push(table);
            levels.push(next);
        }
        Self::try_from(TreeSpec {
            depth: counts.len(),
            levels,
            children,
        })
    }

    pub fn depth(&self) -> usize {
        self.children.len()
    }

    pub fn atom_count(&self, level: usize) -> usize {
        self.counts[level]
    }

    pub fn leaf_count(&self) -> usize {
        *self.counts.last().unwrap()
    }

    pub fn atoms(&self, level: usize) -> impl Iterator<Item = AtomId> {
        (0..self.counts[level]).map(move |i| AtomId::new(level, i))
    }

    pub fn contains(&self, atom: AtomId) -> bool {
        atom.level < self.counts.len() && atom.index < self.counts[atom.level]
    }

    /// Child positions (at `level + 1`) of a non-leaf atom.
    pub fn children(&self, level: usize, index: usize) -> &[usize] {
        &self.children[level][index]
    }

    pub fn children_of(&self, atom: AtomId) -> Result<&[usize]> {
        if !self.contains(atom) || atom.level >= self.depth() {
            return Err(Error::UnknownAtom(atom));
        }
        Ok(&self.children[atom.level][atom.index])
    }

    /// Parent position (at `level - 1`) of an atom on level `>= 1`.
    pub fn parent(&self, level: usize, index: usize) -> usize {
        self.parents[level][index]
    }

    pub fn parent_of(&self, atom: AtomId) -> Result<Option<AtomId>> {
        if !self.contains(atom) {
            return Err(Error::UnknownAtom(atom));
        }
        Ok((atom.level > 0).then(|| AtomId::new(atom.level - 1, self.parents[atom.level][atom.index])))
    }

    /// Position of the level-`level` atom that contains leaf `leaf`.
    pub fn ancestor(&self, level: usize, leaf: usize) -> usize {
        self.ancestors[level][leaf]
    }

    /// Leaf-to-ancestor map for one level.
    pub fn ancestor_map(&self, level: usize) -> &[usize] {
        &self.ancestors[level]
    }

    /// Leaves contained in an atom, in increasing order.
    pub fn leaves_of(&self, atom: AtomId) -> Result<Vec<usize>> {
        if !self.contains(atom) {
            return Err(Error::UnknownAtom(atom));
        }
        Ok(self.ancestors[atom.level]
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == atom.index)
            .map(|(leaf, _)| leaf)
            .collect())
    }

    /// Sums an additive leaf weight up the children maps: entry `[n][s]` is the
    /// weight of atom `(n, s)`.
    pub fn aggregate(&self, leaf_weights: &[f64]) -> Vec<Vec<f64>> {
        let depth = self.depth();
        let mut out: Vec<Vec<f64>> = self.counts.iter().map(|&c| vec![0.0; c]).collect();
        out[depth].copy_from_slice(leaf_weights);
        for n in (0..depth).rev() {
            for s in 0..self.counts[n] {
                out[n][s] = self.children[n][s].iter().map(|&j| out[n + 1][j]).sum();
            }
        }
        out
    }

    pub fn check_condition_a(&self) -> ConditionReport {
        check_condition_a(&self.to_spec())
    }

    pub fn to_spec(&self) -> TreeSpec {
        TreeSpec {
            depth: self.depth(),
            levels: self.counts.clone(),
            children: self.children.clone(),
        }
    }
}

impl TryFrom<TreeSpec> for FiltrationTree {
    type Error = Error;

    fn try_from(spec: TreeSpec) -> Result<Self> {
        let report = check_condition_a(&spec);
        if !report.passed {
            let failed: Vec<String> = report
                .failed_clauses()
                .map(|c| format!("{} ({})", c.clause, c.detail))
                .collect();
            return Err(Error::ConditionA(failed.join("; ")));
        }
        let depth = spec.depth;
        let mut parents = vec![Vec::new(); depth + 1];
        for n in 0..depth {
            let mut p = vec![0usize; spec.levels[n + 1]];
            for (s, kids) in spec.children[n].iter().enumerate() {
                for &j in kids {
                    p[j] = s;
                }
            }
            parents[n + 1] = p;
        }
        let leaves = spec.levels[depth];
        let mut ancestors = vec![Vec::new(); depth + 1];
        ancestors[depth] = (0..leaves).collect();
        for n in (0..depth).rev() {
            ancestors[n] = ancestors[n + 1].iter().map(|&a| parents[n + 1][a]).collect();
        }
        Ok(Self {
            counts: spec.levels,
            children: spec.children,
            parents,
            ancestors,
        })
    }
}

impl Serialize for FiltrationTree {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_spec().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FiltrationTree {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let spec = TreeSpec::deserialize(deserializer)?;
        FiltrationTree::try_from(spec).map_err(serde::de::Error::custom)
    }
}
