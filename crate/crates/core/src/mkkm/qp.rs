//! Projected-gradient solver for the localized weight problem
//!
//! ```text
//! minimise  Σ_m θ_mᵀ Q_m θ_m
//! s.t.      Σ_m Θ_im = 1, Θ_im ≥ 0   for every row i,
//! ```
//!
//! where θ_m is column m of the N×M matrix Θ and each Q_m is symmetric PSD.
//! Steps use a Barzilai–Borwein trial length followed by Armijo backtracking
//! along the projection arc, so every accepted iterate lowers the objective.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const MAX_ITER: usize = 10_000;
pub const KKT_TOL: f64 = 1e-6;

const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-12;
const MAX_STEP: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    pub max_iter: usize,
    pub kkt_tol: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions {
            max_iter: MAX_ITER,
            kkt_tol: KKT_TOL,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub theta: DMatrix<f64>,
    pub objective: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Euclidean projection of `v` onto the probability simplex.
pub fn project_simplex(v: &mut [f64]) {
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - tau).max(0.0);
    }
}

fn project_rows(theta: &mut DMatrix<f64>) {
    let m = theta.ncols();
    let mut row = vec![0.0; m];
    for i in 0..theta.nrows() {
        for (j, r) in row.iter_mut().enumerate() {
            *r = theta[(i, j)];
        }
        project_simplex(&mut row);
        for (j, &r) in row.iter().enumerate() {
            theta[(i, j)] = r;
        }
    }
}

/// Column m of the result is 2 Q_m θ_m.
fn gradient(q: &[DMatrix<f64>], theta: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(theta.nrows(), theta.ncols());
    for (m, qm) in q.iter().enumerate() {
        let col: DVector<f64> = qm * theta.column(m);
        g.set_column(m, &(col * 2.0));
    }
    g
}

/// f(Θ) = ½ ⟨Θ, ∇f(Θ)⟩ for a homogeneous quadratic.
fn objective(theta: &DMatrix<f64>, grad: &DMatrix<f64>) -> f64 {
    0.5 * theta.dot(grad)
}

/// ‖Θ − P(Θ − ∇f)‖_∞, zero exactly at a KKT point.
pub fn kkt_residual(theta: &DMatrix<f64>, grad: &DMatrix<f64>) -> f64 {
    let mut probe = theta - grad;
    project_rows(&mut probe);
    (theta - probe).amax()
}

pub fn solve(q: &[DMatrix<f64>], start: &DMatrix<f64>, options: QpOptions) -> Result<QpSolution> {
    let mut theta = start.clone();
    project_rows(&mut theta);
    let mut grad = gradient(q, &theta);
    let mut f = objective(&theta, &grad);
    // First trial step from the largest diagonal entry; later steps are BB lengths.
    let diag_max = q
        .iter()
        .flat_map(|qm| qm.diagonal().iter().copied().collect::<Vec<_>>())
        .fold(0.0f64, f64::max);
    let mut step = if diag_max > 0.0 { 0.5 / diag_max } else { 1.0 };
    let mut residual = kkt_residual(&theta, &grad);
    let mut iterations = 0;
    while residual > options.kkt_tol {
        if iterations >= options.max_iter {
            return Err(Error::QpFailed { iterations, residual });
        }
        iterations += 1;
        let mut alpha = step;
        let (candidate, cand_grad, cand_f) = loop {
            let mut cand = &theta - &grad * alpha;
            project_rows(&mut cand);
            let cg = gradient(q, &cand);
            let cf = objective(&cand, &cg);
            let decrease = grad.dot(&(&cand - &theta));
            if cf <= f + ARMIJO * decrease || alpha <= MIN_STEP {
                break (cand, cg, cf);
            }
            alpha *= 0.5;
        };
        let s = &candidate - &theta;
        let y = &cand_grad - &grad;
        let sy = s.dot(&y);
        step = if sy > 0.0 { (s.norm_squared() / sy).clamp(MIN_STEP, MAX_STEP) } else { MAX_STEP.min(alpha * 4.0) };
        if cand_f <= f {
            theta = candidate;
            grad = cand_grad;
            f = cand_f;
        } else {
            // Backtracking bottomed out without any decrease.
            return Err(Error::QpFailed { iterations, residual });
        }
        residual = kkt_residual(&theta, &grad);
    }
    Ok(QpSolution {
        theta,
        objective: f,
        residual,
        iterations,
    })
}
