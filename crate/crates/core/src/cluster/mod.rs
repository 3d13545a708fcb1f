//! Base clusterers used inside resampling and for final partitions.

pub mod hclust;
pub mod kmeans;

use std::fmt;

use nalgebra::DMatrix;

pub use hclust::{cophenetic_distances, cut_dendrogram, hclust, hclust_average, Dendrogram, Linkage, Merge};
pub use kmeans::{kmeans, kmeans_with, KMeansParams, KMeansResult};

use crate::data::Partition;
use crate::error::Result;

/// Anything that splits the rows of a matrix into `k` clusters given a seed.
pub trait BaseClusterer: Send + Sync + fmt::Debug {
    fn cluster(&self, data: &DMatrix<f64>, k: usize, seed: u64) -> Result<Partition>;
}

/// k-means with Euclidean distance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KMeansClusterer {
    pub params: KMeansParams,
}

impl BaseClusterer for KMeansClusterer {
    fn cluster(&self, data: &DMatrix<f64>, k: usize, seed: u64) -> Result<Partition> {
        Ok(kmeans_with(data, k, seed, self.params)?.partition)
    }
}

/// Hierarchical clustering of Euclidean distances between rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HierarchicalClusterer {
    pub linkage: Linkage,
}

impl BaseClusterer for HierarchicalClusterer {
    fn cluster(&self, data: &DMatrix<f64>, k: usize, _seed: u64) -> Result<Partition> {
        let d = euclidean_distances(data);
        cut_dendrogram(&hclust(&d, self.linkage)?, k)
    }
}

/// Wraps a plain function as a clusterer.
pub struct FnClusterer<F>(pub F);

impl<F> fmt::Debug for FnClusterer<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnClusterer")
    }
}

impl<F> BaseClusterer for FnClusterer<F>
where
    F: Fn(&DMatrix<f64>, usize, u64) -> Result<Partition> + Send + Sync,
{
    fn cluster(&self, data: &DMatrix<f64>, k: usize, seed: u64) -> Result<Partition> {
        (self.0)(data, k, seed)
    }
}

pub fn euclidean_distances(data: &DMatrix<f64>) -> DMatrix<f64> {
    let n = data.nrows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (data.row(i) - data.row(j)).norm();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hierarchical_clusterer_splits_separated_groups() {
        let data = DMatrix::from_row_slice(4, 1, &[0.0, 0.2, 5.0, 5.1]);
        let p = HierarchicalClusterer::default().cluster(&data, 2, 0).unwrap();
        assert_eq!(p.labels(), &[0, 0, 1, 1]);
    }
}
