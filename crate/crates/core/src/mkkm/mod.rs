//! Kernel k-means by spectral relaxation and (localized) multiple kernel k-means.
//!
//! For a kernel Δ the relaxed problem `max tr(HᵀΔH) s.t. HᵀH = I` is solved by
//! the top-k eigenvectors of Δ; a hard partition is read off by k-means on the
//! unit-normalised rows of H. With several kernels the combined kernel is
//!
//! * global:    Δ_θ = Σ_m θ_m² Δ_m,            θ on the simplex;
//! * localized: Δ_Θ = Σ_m (θ_m θ_mᵀ) ∘ Δ_m,    every row of Θ on the simplex;
//!
//! and H and the weights are optimised alternately. Both half-steps increase
//! `tr(HᵀΔH) − tr(Δ)`.

pub mod qp;

use nalgebra::DMatrix;

use crate::cluster::kmeans;
use crate::data::{check_aligned, KernelMatrix, Partition, WeightState};
use crate::error::{Error, Result};
use crate::linalg;

pub use qp::{QpOptions, QpSolution};

pub const DEFAULT_MAX_ALTERNATIONS: usize = 20;
pub const DEFAULT_TOL: f64 = 1e-8;
/// Kernels whose residual trace is at or below this share the weight.
const ZERO_COST_TOL: f64 = 1e-12;
const NEGATIVE_COST_TOL: f64 = -1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MkkmMode {
    Global,
    Localized,
}

impl std::fmt::Display for MkkmMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MkkmMode::Global => "global",
            MkkmMode::Localized => "localized",
        })
    }
}

/// Orthonormal top-k eigenvectors of a kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedEmbedding {
    pub h: DMatrix<f64>,
    /// Top-k eigenvalues, largest first.
    pub eigenvalues: Vec<f64>,
}

impl RelaxedEmbedding {
    pub fn k(&self) -> usize {
        self.h.ncols()
    }

    /// Rows scaled to unit norm; zero rows stay zero.
    pub fn normalized_rows(&self) -> DMatrix<f64> {
        let mut rows = self.h.clone();
        for mut row in rows.row_iter_mut() {
            let norm = row.norm();
            if norm > 1e-12 {
                row /= norm;
            }
        }
        rows
    }
}

pub fn relaxed_embedding(kernel: &DMatrix<f64>, k: usize) -> Result<RelaxedEmbedding> {
    let n = kernel.nrows();
    if k < 1 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    let eig = linalg::symmetric_eigen(kernel)?;
    Ok(RelaxedEmbedding {
        h: eig.vectors.columns(0, k).clone_owned(),
        eigenvalues: eig.values[..k].to_vec(),
    })
}

fn partition_from_embedding(embedding: &RelaxedEmbedding, k: usize, seed: u64) -> Result<Partition> {
    Ok(kmeans(&embedding.normalized_rows(), k, seed, kmeans::DEFAULT_RESTARTS)?.partition)
}

/// Kernel k-means on a single kernel via its top-k eigenvectors.
pub fn kernel_kmeans(kernel: &KernelMatrix, k: usize, seed: u64) -> Result<(Partition, RelaxedEmbedding)> {
    let n = kernel.n();
    if k < 2 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    let embedding = relaxed_embedding(kernel.entries(), k)?;
    let partition = partition_from_embedding(&embedding, k, seed)?;
    Ok((partition, embedding))
}

fn check_kernels(kernels: &[KernelMatrix]) -> Result<()> {
    let first = kernels
        .first()
        .ok_or_else(|| Error::InvalidParameter("at least one kernel is required".into()))?;
    for other in &kernels[1..] {
        if other.n() != first.n() {
            return Err(Error::LengthMismatch {
                expected: first.n(),
                found: other.n(),
            });
        }
        check_aligned(first.ids(), other.ids())?;
    }
    Ok(())
}

fn check_simplex(row: &[f64]) -> Result<()> {
    let sum: f64 = row.iter().sum();
    if row.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidParameter(format!("weights {row:?} are not on the simplex")));
    }
    Ok(())
}

/// Δ_θ = Σ_m θ_m² Δ_m.
pub fn combine_kernels_global(kernels: &[KernelMatrix], theta: &[f64]) -> Result<KernelMatrix> {
    check_kernels(kernels)?;
    if theta.len() != kernels.len() {
        return Err(Error::LengthMismatch {
            expected: kernels.len(),
            found: theta.len(),
        });
    }
    check_simplex(theta)?;
    let n = kernels[0].n();
    let mut combined = DMatrix::zeros(n, n);
    for (kernel, &w) in kernels.iter().zip(theta) {
        if w > 0.0 {
            combined += kernel.entries() * (w * w);
        }
    }
    Ok(KernelMatrix::from_trusted(combined, kernels[0].ids().to_vec()))
}

/// Δ_Θ = Σ_m (θ_m θ_mᵀ) ∘ Δ_m with θ_m the m-th column of Θ.
pub fn combine_kernels_localized(kernels: &[KernelMatrix], theta: &DMatrix<f64>) -> Result<KernelMatrix> {
    check_kernels(kernels)?;
    let n = kernels[0].n();
    if theta.shape() != (n, kernels.len()) {
        return Err(Error::LengthMismatch {
            expected: n * kernels.len(),
            found: theta.len(),
        });
    }
    for i in 0..n {
        let row: Vec<f64> = theta.row(i).iter().copied().collect();
        check_simplex(&row)?;
    }
    let mut combined = DMatrix::zeros(n, n);
    for (m, kernel) in kernels.iter().enumerate() {
        let w = theta.column(m);
        let d = kernel.entries();
        for j in 0..n {
            let wj = w[j];
            if wj == 0.0 {
                continue;
            }
            for i in 0..n {
                combined[(i, j)] += w[i] * wj * d[(i, j)];
            }
        }
    }
    Ok(KernelMatrix::from_trusted(combined, kernels[0].ids().to_vec()))
}

/// tr(HᵀΔH) − tr(Δ), the quantity maximised by multiple kernel k-means.
pub fn objective(kernel: &DMatrix<f64>, embedding: &RelaxedEmbedding) -> f64 {
    linalg::quadratic_trace(&embedding.h, kernel) - kernel.trace()
}

fn check_embedding(kernels: &[KernelMatrix], embedding: &RelaxedEmbedding) -> Result<()> {
    if embedding.h.nrows() != kernels[0].n() {
        return Err(Error::LengthMismatch {
            expected: kernels[0].n(),
            found: embedding.h.nrows(),
        });
    }
    Ok(())
}

/// Minimises Σ_m θ_m² a_m over the simplex, a_m = tr(Δ_m) − tr(HᵀΔ_mH).
///
/// The minimiser is θ_m ∝ 1/a_m; kernels with a_m ≈ 0 fit the embedding
/// exactly and split all of the weight between them.
pub fn update_weights_global(kernels: &[KernelMatrix], embedding: &RelaxedEmbedding) -> Result<Vec<f64>> {
    check_kernels(kernels)?;
    check_embedding(kernels, embedding)?;
    let costs: Vec<f64> = kernels
        .iter()
        .map(|k| k.entries().trace() - linalg::quadratic_trace(&embedding.h, k.entries()))
        .collect();
    global_weights_from_costs(&costs)
}

pub(crate) fn global_weights_from_costs(costs: &[f64]) -> Result<Vec<f64>> {
    if let Some((kernel, &residual)) = costs.iter().enumerate().find(|(_, &a)| a < NEGATIVE_COST_TOL) {
        return Err(Error::InvalidEmbedding { kernel, residual });
    }
    let zero: Vec<bool> = costs.iter().map(|&a| a <= ZERO_COST_TOL).collect();
    let n_zero = zero.iter().filter(|&&z| z).count();
    if n_zero > 0 {
        return Ok(zero.iter().map(|&z| if z { 1.0 / n_zero as f64 } else { 0.0 }).collect());
    }
    let inverse: Vec<f64> = costs.iter().map(|a| 1.0 / a).collect();
    let total: f64 = inverse.iter().sum();
    Ok(inverse.iter().map(|v| v / total).collect())
}

/// Q_m = Δ_m ∘ (I − HHᵀ).
fn localized_costs(kernels: &[KernelMatrix], embedding: &RelaxedEmbedding) -> Vec<DMatrix<f64>> {
    let h = &embedding.h;
    let mut residual = -(h * h.transpose());
    for i in 0..residual.nrows() {
        residual[(i, i)] += 1.0;
    }
    kernels.iter().map(|k| k.entries().component_mul(&residual)).collect()
}

/// Solves the per-observation simplex QP for Θ, warm-started at `prev`.
pub fn update_weights_localized(
    kernels: &[KernelMatrix],
    embedding: &RelaxedEmbedding,
    prev: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    Ok(update_weights_localized_with(kernels, embedding, prev, QpOptions::default())?.theta)
}

pub fn update_weights_localized_with(
    kernels: &[KernelMatrix],
    embedding: &RelaxedEmbedding,
    prev: &DMatrix<f64>,
    options: QpOptions,
) -> Result<QpSolution> {
    check_kernels(kernels)?;
    check_embedding(kernels, embedding)?;
    let n = kernels[0].n();
    if prev.shape() != (n, kernels.len()) {
        return Err(Error::LengthMismatch {
            expected: n * kernels.len(),
            found: prev.len(),
        });
    }
    let q = localized_costs(kernels, embedding);
    qp::solve(&q, prev, options)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MkkmParams {
    pub max_alternations: usize,
    pub tol: f64,
}

impl Default for MkkmParams {
    fn default() -> Self {
        MkkmParams {
            max_alternations: DEFAULT_MAX_ALTERNATIONS,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MkkmResult {
    pub weights: WeightState,
    pub partition: Partition,
    pub embedding: RelaxedEmbedding,
    /// Objective after every half-step (eigen step, weight step, ...).
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// Combined kernel under the final weights.
    pub kernel: KernelMatrix,
}

fn combine(kernels: &[KernelMatrix], weights: &WeightState) -> Result<KernelMatrix> {
    match weights {
        WeightState::Global(theta) => combine_kernels_global(kernels, theta),
        WeightState::Localized(theta) => combine_kernels_localized(kernels, theta),
    }
}

/// Alternates eigen steps and weight steps from uniform weights.
pub fn mkkm(kernels: &[KernelMatrix], k: usize, mode: MkkmMode, seed: u64, params: MkkmParams) -> Result<MkkmResult> {
    check_kernels(kernels)?;
    let n = kernels[0].n();
    if k < 2 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    let m = kernels.len();
    let mut weights = match mode {
        MkkmMode::Global => WeightState::uniform_global(m),
        MkkmMode::Localized => WeightState::uniform_localized(n, m),
    };
    let mut combined = combine(kernels, &weights)?;
    let mut embedding = relaxed_embedding(combined.entries(), k)?;
    let mut current = objective(combined.entries(), &embedding);
    let mut trace = vec![current];
    let mut converged = false;
    for _ in 0..params.max_alternations {
        weights = match &weights {
            WeightState::Global(_) => WeightState::Global(update_weights_global(kernels, &embedding)?),
            WeightState::Localized(prev) => {
                WeightState::Localized(update_weights_localized(kernels, &embedding, prev)?)
            }
        };
        combined = combine(kernels, &weights)?;
        trace.push(objective(combined.entries(), &embedding));
        embedding = relaxed_embedding(combined.entries(), k)?;
        let next = objective(combined.entries(), &embedding);
        trace.push(next);
        let change = (next - current).abs();
        current = next;
        if change < params.tol {
            converged = true;
            break;
        }
    }
    let partition = partition_from_embedding(&embedding, k, seed)?;
    Ok(MkkmResult {
        weights,
        partition,
        embedding,
        objective_trace: trace,
        converged,
        kernel: combined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{coclustering_of, validate_kernel};
    use crate::metrics::ari;

    fn block_kernel(sizes: &[usize]) -> (KernelMatrix, Partition) {
        let labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &s)| std::iter::repeat_n(c, s)).collect();
        let p = Partition::new(labels, sizes.len()).unwrap();
        (validate_kernel(coclustering_of(&p), None).unwrap(), p)
    }

    fn emb(h: DMatrix<f64>) -> RelaxedEmbedding {
        RelaxedEmbedding { eigenvalues: vec![0.0; h.ncols()], h }
    }

    #[test]
    fn ideal_blocks_are_recovered() {
        let (k, truth) = block_kernel(&[3, 3]);
        let (p, e) = kernel_kmeans(&k, 2, 1).unwrap();
        assert_eq!(ari(&p, &truth).unwrap(), 1.0);
        assert!((e.eigenvalues[0] - 3.0).abs() < 1e-12 && (e.eigenvalues[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn identity_kernel_does_not_fail() {
        let k = validate_kernel(DMatrix::identity(4, 4), None).unwrap();
        let (p, _) = kernel_kmeans(&k, 2, 0).unwrap();
        assert_eq!(p.len(), 4);
        assert!(kernel_kmeans(&k, 5, 0).is_err());
    }

    #[test]
    fn global_combination_examples() {
        let (a, _) = block_kernel(&[2, 2]);
        let b = validate_kernel(DMatrix::identity(4, 4), None).unwrap();
        assert_eq!(combine_kernels_global(&[a.clone()], &[1.0]).unwrap().entries(), a.entries());
        let half = combine_kernels_global(&[a.clone(), a.clone()], &[0.5, 0.5]).unwrap();
        assert_eq!(half.entries(), &(a.entries() * 0.5));
        assert_eq!(combine_kernels_global(&[a.clone(), b], &[1.0, 0.0]).unwrap().entries(), a.entries());
        assert!(combine_kernels_global(&[a.clone()], &[0.5]).is_err());
    }

    #[test]
    fn localized_combination_examples() {
        let (a, _) = block_kernel(&[2, 2]);
        let (b, _) = block_kernel(&[1, 3]);
        let pick_b = DMatrix::from_fn(4, 2, |_, j| if j == 1 { 1.0 } else { 0.0 });
        assert_eq!(combine_kernels_localized(&[a.clone(), b.clone()], &pick_b).unwrap().entries(), b.entries());
        let half = DMatrix::from_element(4, 2, 0.5);
        let c = combine_kernels_localized(&[a.clone(), a.clone()], &half).unwrap();
        assert_eq!(c.entries(), &(a.entries() * 0.5));
        let split = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.5, 0.5, 0.5, 0.5]);
        let c = combine_kernels_localized(&[a.clone(), a.clone()], &split).unwrap();
        assert_eq!(c.entries()[(0, 1)], 0.0);
        let bad = DMatrix::from_element(4, 2, 0.4);
        assert!(combine_kernels_localized(&[a.clone(), a], &bad).is_err());
    }

    #[test]
    fn global_weights_from_residuals() {
        assert_eq!(global_weights_from_costs(&[1.0, 1.0]).unwrap(), vec![0.5, 0.5]);
        let w = global_weights_from_costs(&[1.0, 3.0]).unwrap();
        // Grid oracle on θ² + 3(1 − θ)².
        let grid_best = (0..=100_000)
            .map(|i| i as f64 / 100_000.0)
            .min_by(|a, b| (a * a + 3.0 * (1.0 - a).powi(2)).total_cmp(&(b * b + 3.0 * (1.0 - b).powi(2))))
            .unwrap();
        assert!((w[0] - grid_best).abs() < 1e-4 && (w[0] - 0.75).abs() < 1e-15);
        assert_eq!(global_weights_from_costs(&[0.0, 5.0]).unwrap(), vec![1.0, 0.0]);
        assert!(matches!(global_weights_from_costs(&[-1.0, 1.0]), Err(Error::InvalidEmbedding { .. })));
    }

    #[test]
    fn identical_kernels_get_uniform_local_weights() {
        let (a, _) = block_kernel(&[3, 2, 3]);
        let kernels = vec![a.clone(), a.clone(), a];
        let e = emb(relaxed_embedding(kernels[0].entries(), 2).unwrap().h);
        let prev = DMatrix::from_element(8, 3, 1.0 / 3.0);
        let theta = update_weights_localized(&kernels, &e, &prev).unwrap();
        assert!(theta.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-9));
    }

    #[test]
    fn single_kernel_mkkm_reduces_to_kernel_kmeans() {
        let (k, _) = block_kernel(&[4, 3, 5]);
        for mode in [MkkmMode::Global, MkkmMode::Localized] {
            let r = mkkm(&[k.clone()], 3, mode, 17, MkkmParams::default()).unwrap();
            let (p, e) = kernel_kmeans(&k, 3, 17).unwrap();
            assert_eq!(r.partition, p);
            assert_eq!(r.embedding, e);
            assert_eq!(r.weights.mean_weights(), vec![1.0]);
        }
    }
}
