//! Cluster-of-clusters analysis.
//!
//! Per-dataset partitions are one-hot encoded into a matrix of clusters
//! (items as rows), consensus clustering is run on its rows, and the final
//! partition comes from average-linkage clustering of `1 − consensus`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::cluster::{cut_dendrogram, hclust_average};
use crate::consensus::{consensus_from_values, ConsensusConfig, ConsensusMatrix};
use crate::data::{check_aligned, Partition};
use crate::error::{Error, Result};
use crate::metrics::average_silhouette;

#[derive(Debug, Clone, PartialEq)]
pub struct MocMatrix {
    /// N×K binary matrix, K = Σ_m K_m.
    pub entries: DMatrix<f64>,
    /// (dataset index, cluster index within that dataset) per column.
    pub column_labels: Vec<(usize, usize)>,
    pub ids: Vec<String>,
}

impl MocMatrix {
    /// Column headers of the form `m<dataset>_k<cluster>`, both one-based.
    pub fn column_names(&self) -> Vec<String> {
        self.column_labels
            .iter()
            .map(|(m, k)| format!("m{}_k{}", m + 1, k + 1))
            .collect()
    }
}

pub fn build_moc(partitions: &[Partition], ids: &[String]) -> Result<MocMatrix> {
    if partitions.is_empty() {
        return Err(Error::InvalidParameter("no partitions to combine".into()));
    }
    let n = ids.len();
    for p in partitions {
        if p.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: p.len(),
            });
        }
    }
    let column_labels: Vec<(usize, usize)> = partitions
        .iter()
        .enumerate()
        .flat_map(|(m, p)| (0..p.k()).map(move |k| (m, k)))
        .collect();
    let mut entries = DMatrix::zeros(n, column_labels.len());
    let mut offset = 0;
    for p in partitions {
        for (i, &l) in p.labels().iter().enumerate() {
            entries[(i, offset + l)] = 1.0;
        }
        offset += p.k();
    }
    Ok(MocMatrix {
        entries,
        column_labels,
        ids: ids.to_vec(),
    })
}

/// Builds the MOC from partitions that each carry their own id order.
pub fn build_moc_aligned(labelled: &[(Vec<String>, Partition)]) -> Result<MocMatrix> {
    let Some((ids, _)) = labelled.first() else {
        return Err(Error::InvalidParameter("no partitions to combine".into()));
    };
    for (other, _) in &labelled[1..] {
        check_aligned(ids, other)?;
    }
    let partitions: Vec<Partition> = labelled.iter().map(|(_, p)| p.clone()).collect();
    build_moc(&partitions, ids)
}

#[derive(Debug, Clone)]
pub struct CocaResult {
    pub partition: Partition,
    pub consensus: ConsensusMatrix,
}

fn one_minus(c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = c.nrows();
    DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { (1.0 - c[(i, j)]).max(0.0) })
}

/// Runs consensus clustering on the MOC rows with `k_bar` clusters and cuts
/// the average-linkage tree of `1 − consensus` into `k_bar` groups.
pub fn coca(moc: &MocMatrix, k_bar: usize, cc: &ConsensusConfig) -> Result<CocaResult> {
    let n = moc.entries.nrows();
    if k_bar < 2 || k_bar > n {
        return Err(Error::InvalidK { k: k_bar, n });
    }
    let consensus = consensus_from_values(&moc.entries, moc.ids.clone(), &cc.with_k(k_bar))?;
    let dendrogram = hclust_average(&one_minus(consensus.kernel.entries()))?;
    let partition = cut_dendrogram(&dendrogram, k_bar)?;
    Ok(CocaResult { partition, consensus })
}

#[derive(Debug, Clone)]
pub struct KbarSelection {
    pub k_bar: usize,
    pub partition: Partition,
    pub silhouettes: BTreeMap<usize, f64>,
}

/// Runs [`coca`] for each candidate and keeps the one with the largest
/// average silhouette on `1 − consensus`; ties go to the smaller count.
pub fn select_kbar_silhouette(moc: &MocMatrix, k_range: &[usize], cc: &ConsensusConfig) -> Result<KbarSelection> {
    if k_range.is_empty() {
        return Err(Error::InvalidParameter("empty cluster-count range".into()));
    }
    let mut ks = k_range.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut silhouettes = BTreeMap::new();
    let mut best: Option<(usize, f64, Partition)> = None;
    for k in ks {
        let result = coca(moc, k, cc)?;
        let s = average_silhouette(&result.partition, &one_minus(result.consensus.kernel.entries()))?;
        silhouettes.insert(k, s);
        if best.as_ref().is_none_or(|b| s > b.1) {
            best = Some((k, s, result.partition));
        }
    }
    let (k_bar, _, partition) = best.expect("non-empty range");
    Ok(KbarSelection {
        k_bar,
        partition,
        silhouettes,
    })
}
