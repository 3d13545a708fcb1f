//! Kernel learning integrative clustering.
//!
//! Each dataset is summarised by a consensus matrix, the consensus matrices
//! are fused by multiple kernel k-means for every candidate number of
//! clusters, and the candidate with the largest average silhouette (measured
//! in the feature space of the fused kernel) is returned.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::consensus::{consensus_matrix, ConsensusConfig};
use crate::data::{check_aligned, Dataset, KernelMatrix, Partition, WeightState};
use crate::error::{Error, Result};
use crate::metrics::average_silhouette;
use crate::mkkm::{mkkm, MkkmMode, MkkmParams, MkkmResult};
use crate::seed;

#[derive(Debug, Clone)]
pub struct KlicParams {
    /// Candidate cluster counts, each at least 2.
    pub k_candidates: Vec<usize>,
    pub mode: MkkmMode,
    pub seed: u64,
    pub mkkm: MkkmParams,
}

impl KlicParams {
    /// Candidates 2..=k_max.
    pub fn up_to(k_max: usize, mode: MkkmMode, seed: u64) -> Result<Self> {
        if k_max < 2 {
            return Err(Error::InvalidK { k: k_max, n: 0 });
        }
        Ok(KlicParams {
            k_candidates: (2..=k_max).collect(),
            mode,
            seed,
            mkkm: MkkmParams::default(),
        })
    }

    /// A single fixed cluster count.
    pub fn fixed(k: usize, mode: MkkmMode, seed: u64) -> Self {
        KlicParams {
            k_candidates: vec![k],
            mode,
            seed,
            mkkm: MkkmParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct KlicResult {
    pub best_k: usize,
    pub weights: WeightState,
    pub partition: Partition,
    pub silhouettes: BTreeMap<usize, f64>,
    pub per_k: BTreeMap<usize, MkkmResult>,
}

/// Computes one consensus matrix per dataset (dataset `m` clustered into
/// `dataset_k[m]` groups) and runs [`klic_from_kernels`].
pub fn klic(datasets: &[Dataset], dataset_k: &[usize], cc: &ConsensusConfig, params: &KlicParams) -> Result<KlicResult> {
    let kernels = consensus_kernels(datasets, dataset_k, cc)?;
    klic_from_kernels(&kernels, params)
}

/// Consensus matrices for aligned datasets, dataset `m` seeded by `derive(cc.seed, [m])`.
pub fn consensus_kernels(datasets: &[Dataset], dataset_k: &[usize], cc: &ConsensusConfig) -> Result<Vec<KernelMatrix>> {
    let Some(first) = datasets.first() else {
        return Err(Error::InvalidParameter("at least one dataset is required".into()));
    };
    if dataset_k.len() != datasets.len() {
        return Err(Error::LengthMismatch {
            expected: datasets.len(),
            found: dataset_k.len(),
        });
    }
    for d in &datasets[1..] {
        check_aligned(first.ids(), d.ids())?;
    }
    datasets
        .par_iter()
        .zip(dataset_k)
        .enumerate()
        .map(|(m, (d, &k))| {
            let config = cc.with_k(k).with_seed(seed::derive(cc.seed, &[m as u64]));
            Ok(consensus_matrix(d, &config)?.kernel)
        })
        .collect()
}

/// Multiple kernel k-means over the candidate cluster counts with
/// silhouette-based selection; ties go to the smaller count.
pub fn klic_from_kernels(kernels: &[KernelMatrix], params: &KlicParams) -> Result<KlicResult> {
    let Some(first) = kernels.first() else {
        return Err(Error::InvalidParameter("at least one kernel is required".into()));
    };
    let n = first.n();
    for k in &kernels[1..] {
        check_aligned(first.ids(), k.ids())?;
    }
    for k in kernels {
        crate::data::check_symmetric(k.entries())?;
    }
    let mut ks = params.k_candidates.clone();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        return Err(Error::InvalidParameter("no candidate cluster counts".into()));
    }
    if let Some(&bad) = ks.iter().find(|&&k| k < 2 || k > n) {
        return Err(Error::InvalidK { k: bad, n });
    }
    let runs: Vec<(usize, MkkmResult, f64)> = ks
        .par_iter()
        .map(|&k| {
            let result = mkkm(kernels, k, params.mode, seed::derive(params.seed, &[k as u64]), params.mkkm)?;
            let silhouette = average_silhouette(&result.partition, &result.kernel.induced_distances())?;
            Ok((k, result, silhouette))
        })
        .collect::<Result<_>>()?;
    let mut best: Option<(usize, f64)> = None;
    for (k, _, s) in &runs {
        if best.is_none_or(|(_, b)| *s > b) {
            best = Some((*k, *s));
        }
    }
    let (best_k, _) = best.expect("non-empty candidates");
    let silhouettes = runs.iter().map(|(k, _, s)| (*k, *s)).collect();
    let per_k: BTreeMap<usize, MkkmResult> = runs.into_iter().map(|(k, r, _)| (k, r)).collect();
    let chosen = &per_k[&best_k];
    Ok(KlicResult {
        best_k,
        weights: chosen.weights.clone(),
        partition: chosen.partition.clone(),
        silhouettes,
        per_k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{coclustering_of, validate_kernel};
    use crate::metrics::ari;
    use nalgebra::DMatrix;

    fn three_blocks() -> (KernelMatrix, Partition) {
        let labels: Vec<usize> = (0..30).map(|i| i / 10).collect();
        let p = Partition::new(labels, 3).unwrap();
        (validate_kernel(coclustering_of(&p), None).unwrap(), p)
    }

    #[test]
    fn duplicated_ideal_kernel() {
        let (k, truth) = three_blocks();
        let params = KlicParams::up_to(5, MkkmMode::Localized, 3).unwrap();
        let r = klic_from_kernels(&[k.clone(), k], &params).unwrap();
        assert_eq!(r.best_k, 3);
        assert_eq!(ari(&r.partition, &truth).unwrap(), 1.0);
        let WeightState::Localized(theta) = &r.weights else { panic!("localized") };
        assert!(theta.iter().all(|&w| (w - 0.5).abs() < 1e-6));
        assert!(r.silhouettes.values().all(|s| (-1.0..=1.0).contains(s)));
    }

    #[test]
    fn constant_kernel_is_harmless() {
        let (k, truth) = three_blocks();
        let ones = validate_kernel(DMatrix::from_element(30, 30, 1.0), None).unwrap();
        let params = KlicParams::up_to(5, MkkmMode::Localized, 3).unwrap();
        let r = klic_from_kernels(&[k, ones], &params).unwrap();
        assert_eq!(ari(&r.partition, &truth).unwrap(), 1.0);
    }

    #[test]
    fn mismatched_ids_rejected() {
        let (k, _) = three_blocks();
        let ids: Vec<String> = (0..30).map(|i| format!("x{i}")).collect();
        let other = validate_kernel(k.entries().clone(), Some(ids)).unwrap();
        let params = KlicParams::up_to(3, MkkmMode::Global, 0).unwrap();
        assert!(matches!(klic_from_kernels(&[k, other], &params), Err(Error::IdMismatch { .. })));
    }

    #[test]
    fn k_max_below_two_rejected() {
        assert!(KlicParams::up_to(1, MkkmMode::Global, 0).is_err());
    }
}
