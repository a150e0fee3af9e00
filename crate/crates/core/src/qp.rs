//! Exact solver for small dense strictly convex QPs
//!
//! ```text
//! minimize   ½ zᵀ H z + fᵀ z
//! subject to G z ≤ e
//! ```
//!
//! The solver enumerates every candidate active set `S` with `|S| ≤ n_z`,
//! solves the equality-constrained KKT system for each, and keeps the primal
//! and dual feasible candidate with the smallest objective. For a strictly
//! convex problem that candidate is the global optimum. The enumeration is
//! exponential in `m`, which is fine inside the validity envelope
//! (`n_z ≤ 6`, `m ≤ 16`).

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

pub const MAX_VARIABLES: usize = 6;
pub const MAX_CONSTRAINTS: usize = 16;

/// Multipliers down to this value are accepted as nonnegative.
pub const MULTIPLIER_TOL: f64 = 1e-10;
const FEASIBILITY_TOL: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-12;
/// Reciprocal condition floor for the Schur complement of a candidate set.
const RCOND_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub g: DMatrix<f64>,
    pub e: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// Indices of the constraints in the optimal active set, ascending.
    pub active_set: Vec<usize>,
    /// One multiplier per constraint; zero outside the active set.
    pub multipliers: DVector<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
}

impl QpProblem {
    /// Builds a problem and checks its invariants.
    pub fn new(h: DMatrix<f64>, f: DVector<f64>, g: DMatrix<f64>, e: DVector<f64>) -> Result<Self> {
        let p = Self { h, f, g, e };
        p.validate()?;
        Ok(p)
    }

    /// An unconstrained problem.
    pub fn unconstrained(h: DMatrix<f64>, f: DVector<f64>) -> Result<Self> {
        let n = f.len();
        Self::new(h, f, DMatrix::zeros(0, n), DVector::zeros(0))
    }

    pub fn n_z(&self) -> usize {
        self.f.len()
    }

    pub fn m(&self) -> usize {
        self.e.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.f.dot(z)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.f.len();
        if self.h.nrows() != n || self.h.ncols() != n {
            return Err(Error::InvalidProblem(format!(
                "H is {}x{}, expected {n}x{n}",
                self.h.nrows(),
                self.h.ncols()
            )));
        }
        if self.g.ncols() != n || self.g.nrows() != self.e.len() {
            return Err(Error::InvalidProblem(format!(
                "G is {}x{}, expected {}x{n}",
                self.g.nrows(),
                self.g.ncols(),
                self.e.len()
            )));
        }
        if n == 0 || n > MAX_VARIABLES || self.e.len() > MAX_CONSTRAINTS {
            return Err(Error::InvalidProblem(format!(
                "size n_z = {n}, m = {} outside 1..={MAX_VARIABLES} x 0..={MAX_CONSTRAINTS}",
                self.e.len()
            )));
        }
        let finite = self.h.iter().chain(self.f.iter()).chain(self.g.iter()).chain(self.e.iter());
        if finite.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem("non-finite entry".into()));
        }
        let scale = self.h.amax().max(1.0);
        if (&self.h - self.h.transpose()).amax() > SYMMETRY_TOL * scale {
            return Err(Error::InvalidProblem("H is not symmetric".into()));
        }
        if Cholesky::new(self.h.clone()).is_none() {
            return Err(Error::InvalidProblem("H is not positive definite".into()));
        }
        Ok(())
    }
}

struct Candidate {
    z: DVector<f64>,
    lambda: DVector<f64>,
    active: Vec<usize>,
    objective: f64,
}

/// Solves a strictly convex QP by exhaustive active-set enumeration.
///
/// Ties between candidates with equal objective go to the smallest active
/// set, then the lexicographically lowest one.
pub fn solve_qp(p: &QpProblem) -> Result<QpSolution> {
    p.validate()?;
    let n = p.n_z();
    let m = p.m();
    let chol = Cholesky::new(p.h.clone()).ok_or(Error::IllConditioned)?;
    let h_inv_f = chol.solve(&p.f);
    // Columns of H⁻¹Gᵀ, reused by every subset.
    let h_inv_gt = chol.solve(&p.g.transpose());

    let mut best: Option<Candidate> = None;
    let mut solved_any = false;

    for size in 0..=n.min(m) {
        for subset in Combinations::new(m, size) {
            let Some((z, lambda_s)) = solve_equality_kkt(p, &h_inv_f, &h_inv_gt, &subset) else {
                continue;
            };
            solved_any = true;
            if lambda_s.iter().any(|&l| l < -MULTIPLIER_TOL) {
                continue;
            }
            if !primal_feasible(p, &z) {
                continue;
            }
            let objective = p.objective(&z);
            let better = match &best {
                None => true,
                Some(b) => objective < b.objective - 1e-12 * (1.0 + b.objective.abs()),
            };
            if better {
                let mut lambda = DVector::zeros(m);
                for (k, &i) in subset.iter().enumerate() {
                    lambda[i] = lambda_s[k].max(0.0);
                }
                best = Some(Candidate {
                    z,
                    lambda,
                    active: subset,
                    objective,
                });
            }
        }
    }

    match best {
        Some(c) => {
            let kkt_residual = check_kkt(p, &c.z, &c.active);
            Ok(QpSolution {
                z: c.z,
                active_set: c.active,
                multipliers: c.lambda,
                objective: c.objective,
                kkt_residual,
            })
        }
        None if !solved_any => Err(Error::IllConditioned),
        None => {
            if farkas_certificate(p).is_some() {
                Err(Error::Infeasible)
            } else {
                Err(Error::IllConditioned)
            }
        }
    }
}

fn primal_feasible(p: &QpProblem, z: &DVector<f64>) -> bool {
    let gz = &p.g * z;
    (0..p.m()).all(|i| {
        let row_scale = (p.g.row(i).abs() * z.abs())[0] + p.e[i].abs();
        gz[i] <= p.e[i] + FEASIBILITY_TOL * (1.0 + row_scale)
    })
}

/// Solves `H z + f + G_Sᵀ λ = 0`, `G_S z = e_S` through the Schur complement.
/// Returns `None` when the rows of `G_S` are numerically dependent.
fn solve_equality_kkt(
    p: &QpProblem,
    h_inv_f: &DVector<f64>,
    h_inv_gt: &DMatrix<f64>,
    subset: &[usize],
) -> Option<(DVector<f64>, DVector<f64>)> {
    if subset.is_empty() {
        return Some((-h_inv_f, DVector::zeros(0)));
    }
    let k = subset.len();
    let g_s = p.g.select_rows(subset);
    let w = h_inv_gt.select_columns(subset);
    let schur = &g_s * &w;
    let schur_chol = Cholesky::new(schur.clone())?;
    let diag = schur_chol.l_dirty().diagonal();
    let (dmin, dmax) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v.abs()), hi.max(v.abs())));
    if dmax == 0.0 || (dmin / dmax).powi(2) < RCOND_FLOOR {
        return None;
    }
    let e_s = DVector::from_iterator(k, subset.iter().map(|&i| p.e[i]));
    let rhs = -(e_s + &g_s * h_inv_f);
    let lambda = schur_chol.solve(&rhs);
    let z = -(h_inv_f + &w * &lambda);
    if z.iter().chain(lambda.iter()).any(|v| !v.is_finite()) {
        return None;
    }
    Some((z, lambda))
}

/// KKT residual of `z` with the given active set.
///
/// The multipliers are recovered by least squares on the active rows. The
/// result is the largest of the stationarity residual, the primal
/// infeasibility, the magnitude of any negative multiplier and the slack of
/// any active row.
pub fn check_kkt(p: &QpProblem, z: &DVector<f64>, active: &[usize]) -> f64 {
    let grad = &p.h * z + &p.f;
    let gz = &p.g * z;
    let infeasibility = (0..p.m()).map(|i| (gz[i] - p.e[i]).max(0.0)).fold(0.0, f64::max);
    if active.is_empty() {
        return grad.amax().max(infeasibility);
    }
    let g_a = p.g.select_rows(active);
    let svd = g_a.transpose().svd(true, true);
    let lambda = match svd.solve(&(-&grad), 1e-14) {
        Ok(l) => l,
        Err(_) => return f64::INFINITY,
    };
    let stationarity = (grad + g_a.transpose() * &lambda).amax();
    let negative = lambda.iter().map(|&l| (-l).max(0.0)).fold(0.0, f64::max);
    let complementarity = active
        .iter()
        .map(|&i| (gz[i] - p.e[i]).abs())
        .fold(0.0, f64::max);
    stationarity.max(infeasibility).max(negative).max(complementarity)
}

/// Searches for `λ ≥ 0` with `Gᵀλ = 0`, `Σλ = 1` and `eᵀλ < 0`, which proves
/// `{z : G z ≤ e}` empty. Vertices of that polytope have at most `n_z + 1`
/// nonzeros, so enumerating supports of that size is exhaustive.
pub fn farkas_certificate(p: &QpProblem) -> Option<DVector<f64>> {
    let n = p.n_z();
    let m = p.m();
    let mut a = DMatrix::zeros(n + 1, m);
    a.view_mut((0, 0), (n, m)).copy_from(&p.g.transpose());
    a.row_mut(n).fill(1.0);
    let mut b = DVector::zeros(n + 1);
    b[n] = 1.0;
    let e_scale = p.e.amax().max(1.0);
    for size in 1..=m.min(n + 1) {
        for subset in Combinations::new(m, size) {
            let a_s = a.select_columns(&subset);
            let svd = a_s.clone().svd(true, true);
            let smax = svd.singular_values.max();
            let smin = svd.singular_values.min();
            if smax == 0.0 || smin / smax < 1e-10 {
                continue;
            }
            let Ok(lambda_s) = svd.solve(&b, 1e-14) else {
                continue;
            };
            if (&a_s * &lambda_s - &b).amax() > 1e-9 {
                continue;
            }
            if lambda_s.iter().any(|&l| l < -1e-12) {
                continue;
            }
            let value: f64 = subset.iter().zip(lambda_s.iter()).map(|(&i, &l)| p.e[i] * l).sum();
            if value < -1e-9 * e_scale {
                let mut lambda = DVector::zeros(m);
                for (k, &i) in subset.iter().enumerate() {
                    lambda[i] = lambda_s[k].max(0.0);
                }
                return Some(lambda);
            }
        }
    }
    None
}

/// Lexicographic k-subsets of `0..n`.
struct Combinations {
    n: usize,
    idx: Vec<usize>,
    done: bool,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Self {
            n,
            idx: (0..k).collect(),
            done: k > n,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.idx.clone();
        let k = self.idx.len();
        let mut i = k;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.idx[i] < self.n - k + i {
                self.idx[i] += 1;
                for j in i + 1..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}
