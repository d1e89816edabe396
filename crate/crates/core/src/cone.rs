//! Nonnegative and strictly positive solutions of moment systems
//! `sum_j a_j x_j = a_0` with nonnegative `a_j` in `R^k`.
//!
//! A basis of `r = rank{a_j}` vectors is fixed, its dual vectors `f_l`
//! (`<f_l, a_{b_m}> = delta_lm`) give basis coordinates, and every other vector
//! `a_i` yields one extra basic solution by moving along `a_i` as far as
//! nonnegativity allows (`y_i*`). Convex combinations of the basic solutions
//! whose weights satisfy the positivity margins parameterize all strictly
//! positive solutions.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::lp::{self, matrix, max_abs, residual};
use crate::{Error, Result, Tolerances};

/// Largest number of basis candidates inspected before giving up.
const MAX_BASIS_CANDIDATES: usize = 250_000;
/// Safety margin kept below the largest admissible step in the homogeneous
/// construction.
const STEP_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeSystem {
    /// Moment vectors `a_1..a_m`, each of length `k`.
    #[serde(rename = "a")]
    pub vectors: Vec<Vec<f64>>,
    #[serde(rename = "a0")]
    pub target: Vec<f64>,
}

impl ConeSystem {
    pub fn new(vectors: Vec<Vec<f64>>, target: Vec<f64>) -> Result<Self> {
        let s = Self { vectors, target };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vectors.is_empty() {
            return Err(Error::Shape("moment system needs at least one vector".into()));
        }
        let k = self.target.len();
        if k == 0 {
            return Err(Error::Shape("moment vectors must be nonempty".into()));
        }
        for (j, a) in self.vectors.iter().enumerate() {
            if a.len() != k {
                return Err(Error::Shape(format!("vector {j} has length {}, target has {k}", a.len())));
            }
            if let Some(x) = a.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
                return Err(Error::Shape(format!("vector {j} has entry {x}; moment vectors must be nonnegative")));
            }
        }
        if self.target.iter().any(|x| !x.is_finite()) {
            return Err(Error::Shape("target has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.target.len()
    }

    pub fn m(&self) -> usize {
        self.vectors.len()
    }

    pub fn rank(&self, tol: &Tolerances) -> usize {
        rank_of(&self.vectors, self.k(), tol)
    }

    pub fn residual(&self, x: &[f64]) -> f64 {
        max_abs(&residual(&self.vectors, &self.target, x))
    }
}

pub(crate) fn rank_of(columns: &[Vec<f64>], rows: usize, tol: &Tolerances) -> usize {
    if columns.is_empty() {
        return 0;
    }
    let sv = matrix(columns, rows).singular_values();
    let top = sv.max();
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > tol.rank * top).count()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    Interior,
    Boundary,
    Outside,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipReport {
    pub membership: Membership,
    /// Coefficients `alpha_j >= 0` with `sum_j alpha_j a_j = a_0` (strictly
    /// positive for interior points).
    pub certificate: Option<Vec<f64>>,
    /// Optimal value of `max min_j alpha_j` (capped at 1).
    pub min_coefficient: Option<f64>,
    pub residual: Option<f64>,
}

/// Decides whether `a_0 = sum_j alpha_j a_j` with all `alpha_j > 0`, by
/// maximizing the smallest coefficient.
pub fn cone_membership(system: &ConeSystem, tol: &Tolerances) -> Result<MembershipReport> {
    system.validate()?;
    match lp::max_min_coefficient(&system.vectors, &system.target, tol.inequality, 1.0)? {
        None => Ok(MembershipReport {
            membership: Membership::Outside,
            certificate: None,
            min_coefficient: None,
            residual: None,
        }),
        Some((t, alpha)) => {
            let interior = t > 10.0 * tol.inequality;
            let res = system.residual(&alpha);
            Ok(MembershipReport {
                membership: if interior { Membership::Interior } else { Membership::Boundary },
                certificate: Some(alpha),
                min_coefficient: Some(t),
                residual: Some(res),
            })
        }
    }
}

/// Nonnegative solution of the system, if one exists (L1 residual at most
/// `tol.inequality`).
pub fn nonnegative_solution(system: &ConeSystem, tol: &Tolerances) -> Result<Option<Vec<f64>>> {
    system.validate()?;
    Ok(lp::nonnegative_solution(&system.vectors, &system.target, tol.inequality)?.solution)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualBasis {
    /// `f_1..f_r`, biorthogonal to the basis.
    pub duals: Vec<Vec<f64>>,
    /// `f_{r+1}..f_k`: orthonormal basis of the orthogonal complement of the
    /// basis span.
    pub complement: Vec<Vec<f64>>,
}

/// Dual vectors of a linearly independent family: the rows of the
/// pseudoinverse `(A^T A)^{-1} A^T`, completed by an orthonormal basis of the
/// annihilator.
pub fn dual_basis(basis: &[Vec<f64>], tol: &Tolerances) -> Result<DualBasis> {
    let Some(k) = basis.first().map(Vec::len) else {
        return Err(Error::Shape("empty basis".into()));
    };
    if basis.iter().any(|a| a.len() != k) {
        return Err(Error::Shape("basis vectors have different lengths".into()));
    }
    for index in 0..basis.len() {
        if rank_of(&basis[..=index], k, tol) <= index {
            return Err(Error::Singular { index });
        }
    }
    let a = matrix(basis, k);
    let gram = a.transpose() * &a;
    let inv = gram
        .try_inverse()
        .ok_or(Error::Singular { index: basis.len() - 1 })?;
    let pinv: DMatrix<f64> = inv * a.transpose();
    let duals: Vec<Vec<f64>> = (0..basis.len())
        .map(|l| pinv.row(l).iter().copied().collect())
        .collect();

    // Orthonormal basis of span(basis), then Gram-Schmidt on unit vectors.
    let mut ortho: Vec<Vec<f64>> = Vec::new();
    let push_if_new = |v: &[f64], ortho: &mut Vec<Vec<f64>>| -> Option<Vec<f64>> {
        let mut w = v.to_vec();
        for _ in 0..2 {
            for q in ortho.iter() {
                let c = dot(&w, q);
                w.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
            }
        }
        let norm = dot(&w, &w).sqrt();
        (norm > 1e-8).then(|| {
            w.iter_mut().for_each(|x| *x /= norm);
            ortho.push(w.clone());
            w
        })
    };
    for b in basis {
        push_if_new(b, &mut ortho);
    }
    let mut complement = Vec::new();
    for i in 0..k {
        if ortho.len() == k {
            break;
        }
        let mut e = vec![0.0; k];
        e[i] = 1.0;
        if let Some(w) = push_if_new(&e, &mut ortho) {
            complement.push(w);
        }
    }

    for (l, f) in duals.iter().enumerate() {
        for (j, a) in basis.iter().enumerate() {
            let expected = if l == j { 1.0 } else { 0.0 };
            let got = dot(f, a);
            if (got - expected).abs() > 1e-10 {
                return Err(Error::Degenerate(format!(
                    "dual basis is ill-conditioned: <f_{l}, a_{j}> = {got}"
                )));
            }
        }
    }
    Ok(DualBasis { duals, complement })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `y* = min_{l in K_i} <a_0, f_l> / <a_i, f_l>`
    MinRatio,
    /// `K_i` is empty and `y* = 1` (flagged: the step is not scaled to `a_0`).
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonBasisVector {
    pub index: usize,
    /// Basis coordinates `<a_i, f_l>`, `l = 1..r`.
    pub coordinates: Vec<f64>,
    /// Dual indices with positive coordinate.
    pub k_set: Vec<usize>,
    pub y_star: f64,
    pub rule: StepRule,
}

/// Positivity margin `<a_0, f_l> - sum_i gamma_i y_i* <a_i, f_l> > 0` for one
/// dual index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaConstraint {
    pub l: usize,
    pub constant: f64,
    /// One coefficient `y_i* <a_i, f_l>` per non-basis vector, in order.
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFamily {
    pub system: ConeSystem,
    pub rank: usize,
    pub basis_indices: Vec<usize>,
    pub duals: DualBasis,
    /// `<a_0, f_l>`, the basis coordinates of the target.
    pub target_coordinates: Vec<f64>,
    pub non_basis: Vec<NonBasisVector>,
    /// `z_r` first, then one `z_i` per non-basis vector.
    pub basic_solutions: Vec<Vec<f64>>,
    pub gamma_constraints: Vec<GammaConstraint>,
    /// Non-basis indices that took the `y* = 1` branch.
    pub unit_step_indices: Vec<usize>,
    /// Summability of `sum_i a_i gamma_i y_i*` (automatic for finite systems).
    pub series_condition: String,
}

/// Visits the `r`-subsets of `0..m` in lexicographic order until `visit`
/// returns `true` or the cap is hit.
fn for_each_subset(m: usize, r: usize, cap: usize, mut visit: impl FnMut(&[usize]) -> bool) -> bool {
    if r == 0 || r > m {
        return false;
    }
    let mut idx: Vec<usize> = (0..r).collect();
    let mut seen = 0;
    loop {
        if visit(&idx) {
            return true;
        }
        seen += 1;
        if seen >= cap {
            return false;
        }
        let mut p = r;
        loop {
            if p == 0 {
                return false;
            }
            p -= 1;
            if idx[p] < m - r + p {
                break;
            }
            if p == 0 {
                return false;
            }
        }
        idx[p] += 1;
        for q in p + 1..r {
            idx[q] = idx[q - 1] + 1;
        }
    }
}

/// Lexicographically first full-rank `r`-subset in whose open simplicial cone
/// the target lies.
fn choose_basis(system: &ConeSystem, r: usize, tol: &Tolerances) -> Result<(Vec<usize>, DualBasis, Vec<f64>)> {
    let k = system.k();
    let mut found = None;
    let mut any_full_rank = false;
    for_each_subset(system.m(), r, MAX_BASIS_CANDIDATES, |idx| {
        let cols: Vec<Vec<f64>> = idx.iter().map(|&j| system.vectors[j].clone()).collect();
        if rank_of(&cols, k, tol) < r {
            return false;
        }
        any_full_rank = true;
        let Ok(duals) = dual_basis(&cols, tol) else {
            return false;
        };
        let coords: Vec<f64> = duals.duals.iter().map(|f| dot(&system.target, f)).collect();
        let in_span = max_abs(&residual(&cols, &system.target, &coords)) <= tol.residual.max(1e-12 * max_abs(&system.target));
        if in_span && coords.iter().all(|c| *c > tol.identity) {
            found = Some((idx.to_vec(), duals, coords));
            true
        } else {
            false
        }
    });
    found.ok_or_else(|| {
        Error::ConeMembership(if any_full_rank {
            "no basis of the moment vectors has the target strictly inside its cone".into()
        } else {
            "no full-rank basis found".into()
        })
    })
}

/// Builds the solution family for a target strictly inside the cone of some
/// basis.
pub fn solve(system: &ConeSystem, tol: &Tolerances) -> Result<SolutionFamily> {
    system.validate()?;
    let r = system.rank(tol);
    if r == 0 {
        return Err(Error::ConeMembership("all moment vectors vanish".into()));
    }
    let (basis_indices, duals, target_coordinates) = choose_basis(system, r, tol)?;
    let m = system.m();
    let mut z_r = vec![0.0; m];
    for (pos, &b) in basis_indices.iter().enumerate() {
        z_r[b] = target_coordinates[pos];
    }
    let mut basic_solutions = vec![z_r];
    let mut non_basis = Vec::new();
    let mut unit_step_indices = Vec::new();
    for i in (0..m).filter(|i| !basis_indices.contains(i)) {
        let a_i = &system.vectors[i];
        let coordinates: Vec<f64> = duals.duals.iter().map(|f| dot(a_i, f)).collect();
        let k_set: Vec<usize> = (0..r).filter(|&l| coordinates[l] > tol.identity).collect();
        let (y_star, rule) = if k_set.is_empty() {
            unit_step_indices.push(i);
            (1.0, StepRule::Unit)
        } else {
            let y = k_set
                .iter()
                .map(|&l| target_coordinates[l] / coordinates[l])
                .fold(f64::INFINITY, f64::min);
            (y, StepRule::MinRatio)
        };
        let mut z = vec![0.0; m];
        for (pos, &b) in basis_indices.iter().enumerate() {
            let v = target_coordinates[pos] - coordinates[pos] * y_star;
            z[b] = if v.abs() <= 1e-12 * (1.0 + target_coordinates[pos].abs()) { 0.0 } else { v };
        }
        z[i] = y_star;
        basic_solutions.push(z);
        non_basis.push(NonBasisVector {
            index: i,
            coordinates,
            k_set,
            y_star,
            rule,
        });
    }
    for (n, z) in basic_solutions.iter().enumerate() {
        let res = system.residual(z);
        if res > tol.residual || z.iter().any(|x| *x < 0.0) {
            return Err(Error::Degenerate(format!(
                "basic solution {n} fails verification (residual {res:e})"
            )));
        }
    }
    let gamma_constraints = (0..r)
        .map(|l| GammaConstraint {
            l,
            constant: target_coordinates[l],
            coefficients: non_basis.iter().map(|nb| nb.y_star * nb.coordinates[l]).collect(),
        })
        .collect();
    Ok(SolutionFamily {
        system: system.clone(),
        rank: r,
        basis_indices,
        duals,
        target_coordinates,
        non_basis,
        basic_solutions,
        gamma_constraints,
        unit_step_indices,
        series_condition: "finite system: trivially satisfied".into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Combination {
    pub values: Vec<f64>,
    pub strictly_positive: bool,
    pub residual: f64,
    /// Positivity margins, one per dual index.
    pub margins: Vec<f64>,
}

/// `z = sum gamma_n z_n` over the basic solutions (`gamma[0]` weights `z_r`).
///
/// Requires `sum gamma = 1` and nonnegative non-basis weights; every margin of
/// the positivity constraints must be positive. A zero non-basis weight is
/// accepted but the result is then not strictly positive.
pub fn combine(family: &SolutionFamily, gamma: &[f64], tol: &Tolerances) -> Result<Combination> {
    let count = family.basic_solutions.len();
    if gamma.len() != count {
        return Err(Error::Shape(format!("{} weights for {count} basic solutions", gamma.len())));
    }
    let total: f64 = gamma.iter().sum();
    if (total - 1.0).abs() > tol.input {
        return Err(Error::Weights(format!("weights sum to {total}")));
    }
    if let Some(g) = gamma[1..].iter().find(|g| !(**g >= 0.0)) {
        return Err(Error::Weights(format!("non-basis weight {g} is negative")));
    }
    let margins: Vec<f64> = family
        .gamma_constraints
        .iter()
        .map(|c| c.constant - c.coefficients.iter().zip(&gamma[1..]).map(|(a, g)| a * g).sum::<f64>())
        .collect();
    if let Some((l, &margin)) = margins
        .iter()
        .enumerate()
        .find(|(_, m)| **m <= 1e-12 * (1.0 + family.gamma_constraints[0].constant.abs()))
    {
        return Err(Error::Ap4Violation { l, margin });
    }
    let mut values = vec![0.0; family.system.m()];
    for (g, z) in gamma.iter().zip(&family.basic_solutions) {
        for (v, x) in values.iter_mut().zip(z) {
            *v += g * x;
        }
    }
    let residual = family.system.residual(&values);
    Ok(Combination {
        strictly_positive: values.iter().all(|v| *v > 0.0),
        values,
        residual,
        margins,
    })
}

/// Weights reproducing a given solution: `gamma_i = x_i / y_i*` on the
/// non-basis positions and `gamma_r = 1 - sum_i gamma_i`.
pub fn weights_for(family: &SolutionFamily, x: &[f64]) -> Vec<f64> {
    let tail: Vec<f64> = family.non_basis.iter().map(|nb| x[nb.index] / nb.y_star).collect();
    let mut gamma = vec![1.0 - tail.iter().sum::<f64>()];
    gamma.extend(tail);
    gamma
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousSolution {
    /// Kernel vector, `max |u_j| = 1`, first largest entry positive.
    pub u: Vec<f64>,
    pub rank: usize,
    /// Step used in `1 - t u >= 0`.
    pub t: f64,
    /// `(1 - t u) / c` when `sum_j a_j = c a_0`.
    pub xi: Option<Vec<f64>>,
    pub scale: Option<f64>,
}

/// A bounded nonzero solution of `sum_j a_j u_j = 0` and, when the vectors sum
/// to a multiple of the target, the positive solution `(1 - t u)/c`.
pub fn homogeneous_solution(vectors: &[Vec<f64>], target: Option<&[f64]>, tol: &Tolerances) -> Result<HomogeneousSolution> {
    let Some(k) = vectors.first().map(Vec::len) else {
        return Err(Error::Shape("no vectors".into()));
    };
    let m = vectors.len();
    let r = rank_of(vectors, k, tol);
    if r == m {
        return Err(Error::NoKernel { rank: r });
    }
    let mut basis: Vec<usize> = Vec::new();
    for j in 0..m {
        let mut trial: Vec<Vec<f64>> = basis.iter().map(|&b| vectors[b].clone()).collect();
        trial.push(vectors[j].clone());
        if rank_of(&trial, k, tol) == trial.len() {
            basis.push(j);
        }
    }
    let cols: Vec<Vec<f64>> = basis.iter().map(|&b| vectors[b].clone()).collect();
    let mut u = vec![0.0; m];
    let i = (0..m).find(|j| !basis.contains(j)).expect("kernel exists");
    u[i] = 1.0;
    if !cols.is_empty() {
        let duals = dual_basis(&cols, tol)?;
        for (pos, &b) in basis.iter().enumerate() {
            u[b] = -dot(&vectors[i], &duals.duals[pos]);
        }
    }
    let top = u.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let lead = u.iter().position(|x| x.abs() == top).expect("nonzero");
    let sign = u[lead].signum();
    u.iter_mut().for_each(|x| *x *= sign / top);

    let t_max = 1.0 / u.iter().fold(0.0f64, |a, x| a.max(*x));
    let t = t_max - STEP_MARGIN;
    let (xi, scale) = match target {
        None => (None, None),
        Some(a0) => {
            let sum: Vec<f64> = (0..k).map(|row| vectors.iter().map(|a| a[row]).sum()).collect();
            let c = dot(&sum, a0) / dot(a0, a0);
            let parallel = sum.iter().zip(a0).all(|(s, a)| (s - c * a).abs() <= tol.residual * (1.0 + s.abs()));
            if parallel && c > 0.0 {
                (Some(u.iter().map(|x| (1.0 - t * x) / c).collect()), Some(c))
            } else {
                (None, None)
            }
        }
    };
    Ok(HomogeneousSolution { u, rank: r, t, xi, scale })
}
