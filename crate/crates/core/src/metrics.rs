//! Partition agreement and cluster quality scores.

use nalgebra::DMatrix;

use crate::cluster::{cophenetic_distances, hclust_average};
use crate::data::{KernelMatrix, Partition};
use crate::error::{Error, Result};

/// Cross-tabulation of two partitions over the same items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub total: u64,
}

impl ContingencyTable {
    pub fn new(p1: &Partition, p2: &Partition) -> Result<Self> {
        if p1.len() != p2.len() {
            return Err(Error::LengthMismatch {
                expected: p1.len(),
                found: p2.len(),
            });
        }
        let mut counts = vec![vec![0u64; p2.k()]; p1.k()];
        for (&a, &b) in p1.labels().iter().zip(p2.labels()) {
            counts[a][b] += 1;
        }
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..p2.k()).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        Ok(ContingencyTable {
            counts,
            row_sums,
            col_sums,
            total: p1.len() as u64,
        })
    }
}

fn choose2(x: u64) -> f64 {
    (x as f64) * (x.saturating_sub(1) as f64) / 2.0
}

/// Hubert–Arabie adjusted Rand index.
pub fn ari(p1: &Partition, p2: &Partition) -> Result<f64> {
    let t = ContingencyTable::new(p1, p2)?;
    let index: f64 = t.counts.iter().flatten().map(|&c| choose2(c)).sum();
    let a: f64 = t.row_sums.iter().map(|&c| choose2(c)).sum();
    let b: f64 = t.col_sums.iter().map(|&c| choose2(c)).sum();
    let pairs = choose2(t.total);
    if pairs == 0.0 {
        return Ok(1.0);
    }
    let expected = a * b / pairs;
    let max_index = 0.5 * (a + b);
    let denominator = max_index - expected;
    if denominator == 0.0 {
        // Both partitions trivial (all-one-cluster or all-singletons) in the same way.
        return Ok(if index == max_index { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / denominator)
}

/// Mean silhouette width of `partition` under `dissimilarity`.
///
/// Items in singleton clusters score 0.
pub fn average_silhouette(partition: &Partition, dissimilarity: &DMatrix<f64>) -> Result<f64> {
    let n = partition.len();
    if dissimilarity.nrows() != n || dissimilarity.ncols() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: dissimilarity.nrows(),
        });
    }
    let sizes = partition.cluster_sizes();
    let occupied = sizes.iter().filter(|&&s| s > 0).count();
    if occupied < 2 {
        return Err(Error::InvalidK { k: occupied, n });
    }
    let labels = partition.labels();
    let k = partition.k();
    let mut sums = vec![0.0; k];
    let mut total = 0.0;
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[labels[j]] += dissimilarity[(i, j)];
            }
        }
        let own = labels[i];
        if sizes[own] <= 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Pearson correlation between 1 − Δ and the cophenetic distances of its
/// average-linkage dendrogram, over pairs i < j.
pub fn cophenetic_correlation(kernel: &KernelMatrix) -> Result<f64> {
    let k = kernel.entries();
    let n = k.nrows();
    let d = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { (1.0 - k[(i, j)]).max(0.0) });
    let eta = cophenetic_distances(&hclust_average(&d)?);
    let mut xs = Vec::with_capacity(n * (n - 1) / 2);
    let mut ys = Vec::with_capacity(xs.capacity());
    for j in 0..n {
        for i in 0..j {
            xs.push(d[(i, j)]);
            ys.push(eta[(i, j)]);
        }
    }
    pearson(&xs, &ys).ok_or_else(|| Error::Degenerate("dissimilarities have zero variance".into()))
}

pub(crate) fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
