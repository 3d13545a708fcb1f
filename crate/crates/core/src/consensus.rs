//! Resampling-based consensus clustering.
//!
//! Each of `H` iterations draws `ceil(p·N)` items without replacement (and
//! optionally a subset of features), clusters them with the base clusterer,
//! and adds the resulting co-clustering indicator to a running count. The
//! consensus entry for a pair is the number of times they were clustered
//! together divided by the number of times they were sampled together.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::index;
use rayon::prelude::*;

use crate::cluster::{BaseClusterer, KMeansClusterer};
use crate::data::{Dataset, KernelMatrix, Partition};
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_EPSILON: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct ConsensusConfig {
    pub n_resamples: usize,
    pub item_fraction: f64,
    pub feature_fraction: f64,
    pub k: usize,
    pub base_clusterer: Arc<dyn BaseClusterer>,
    pub seed: u64,
}

impl ConsensusConfig {
    /// k-means base clusterer, 80% of items, all features.
    pub fn new(k: usize, n_resamples: usize, seed: u64) -> Self {
        ConsensusConfig {
            n_resamples,
            item_fraction: 0.8,
            feature_fraction: 1.0,
            k,
            base_clusterer: Arc::new(KMeansClusterer::default()),
            seed,
        }
    }

    pub fn with_k(&self, k: usize) -> Self {
        ConsensusConfig { k, ..self.clone() }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ConsensusConfig { seed, ..self.clone() }
    }

    pub fn items_per_resample(&self, n: usize) -> usize {
        ((self.item_fraction * n as f64).ceil() as usize).min(n)
    }

    fn features_per_resample(&self, p: usize) -> usize {
        ((self.feature_fraction * p as f64).ceil() as usize).clamp(1, p)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.n_resamples == 0 {
            return Err(Error::InvalidParameter("at least one resample is required".into()));
        }
        for (name, f) in [("item_fraction", self.item_fraction), ("feature_fraction", self.feature_fraction)] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidParameter(format!("{name} must lie in (0, 1], got {f}")));
            }
        }
        if self.k < 1 || self.items_per_resample(n) < self.k {
            return Err(Error::InvalidK {
                k: self.k,
                n: self.items_per_resample(n),
            });
        }
        Ok(())
    }
}

/// Binary co-clustering indicator of one (possibly subsampled) clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct CoClusteringMatrix {
    pub entries: DMatrix<u8>,
    pub included: Vec<bool>,
}

/// Co-clustering matrix of `partition`, restricted to `included` items.
pub fn coclustering_matrix(partition: &Partition, included: &[bool]) -> Result<CoClusteringMatrix> {
    let n = partition.len();
    if included.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: included.len(),
        });
    }
    let l = partition.labels();
    let entries = DMatrix::from_fn(n, n, |i, j| u8::from(included[i] && included[j] && l[i] == l[j]));
    Ok(CoClusteringMatrix {
        entries,
        included: included.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusMatrix {
    pub kernel: KernelMatrix,
    /// Number of resamples in which each pair was drawn together.
    pub pair_counts: DMatrix<u32>,
    pub k: usize,
    /// `c` such that the kernel is `(R + c·I) / (1 + c)` for the raw ratio
    /// matrix `R`; zero when `R` is already positive semidefinite.
    pub spectral_shift: f64,
}

impl ConsensusMatrix {
    /// The elementwise ratio of co-clustering to co-sampling counts.
    pub fn raw_ratio(&self) -> DMatrix<f64> {
        let c = self.spectral_shift;
        let n = self.kernel.n();
        self.kernel.entries() * (1.0 + c) - DMatrix::<f64>::identity(n, n) * c
    }
}

/// Pairs are co-sampled different numbers of times, so the ratio matrix can
/// have negative eigenvalues. Adding `c·I` lifts the spectrum without moving
/// eigenvectors and dividing by `1 + c` restores the unit diagonal.
fn shift_spectrum(ratio: DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let lambda = crate::linalg::min_eigenvalue(&ratio);
    if lambda >= crate::data::PSD_TOL {
        return Ok((ratio, 0.0));
    }
    let c = -lambda;
    let n = ratio.nrows();
    let shifted = (ratio + DMatrix::<f64>::identity(n, n) * c) / (1.0 + c);
    Ok((shifted, c))
}

struct Tally {
    together: Vec<u32>,
    sampled: Vec<u32>,
}

impl Tally {
    fn zeros(n: usize) -> Self {
        Tally {
            together: vec![0; n * n],
            sampled: vec![0; n * n],
        }
    }

    fn merge(mut self, other: Tally) -> Tally {
        for (a, b) in self.together.iter_mut().zip(other.together) {
            *a += b;
        }
        for (a, b) in self.sampled.iter_mut().zip(other.sampled) {
            *a += b;
        }
        self
    }
}

/// Runs consensus clustering on the rows of `data`.
pub fn consensus_matrix(data: &Dataset, config: &ConsensusConfig) -> Result<ConsensusMatrix> {
    consensus_from_values(data.values(), data.ids().to_vec(), config)
}

pub(crate) fn consensus_from_values(
    values: &DMatrix<f64>,
    ids: Vec<String>,
    config: &ConsensusConfig,
) -> Result<ConsensusMatrix> {
    let (n, p) = values.shape();
    config.validate(n)?;
    let n_items = config.items_per_resample(n);
    let n_features = config.features_per_resample(p);

    let run = |h: usize| -> Result<(Vec<usize>, Partition)> {
        let mut rng = seed::rng(seed::derive(config.seed, &[h as u64, 0]));
        let mut items = index::sample(&mut rng, n, n_items).into_vec();
        items.sort_unstable();
        let mut features: Vec<usize> = if n_features < p {
            index::sample(&mut rng, p, n_features).into_vec()
        } else {
            (0..p).collect()
        };
        features.sort_unstable();
        let sub = values.select_rows(&items).select_columns(&features);
        let partition = config
            .base_clusterer
            .cluster(&sub, config.k, seed::derive(config.seed, &[h as u64, 1]))?;
        if partition.len() != items.len() {
            return Err(Error::LengthMismatch {
                expected: items.len(),
                found: partition.len(),
            });
        }
        Ok((items, partition))
    };

    // Integer accumulation makes the reduction order-independent.
    let tally = (0..config.n_resamples)
        .into_par_iter()
        .try_fold(
            || Tally::zeros(n),
            |mut tally, h| -> Result<Tally> {
                let (items, partition) = run(h)?;
                let labels = partition.labels();
                for (a, &i) in items.iter().enumerate() {
                    for (b, &j) in items.iter().enumerate() {
                        tally.sampled[j * n + i] += 1;
                        if labels[a] == labels[b] {
                            tally.together[j * n + i] += 1;
                        }
                    }
                }
                Ok(tally)
            },
        )
        .try_reduce(|| Tally::zeros(n), |a, b| Ok(a.merge(b)))?;

    for j in 0..n {
        for i in 0..=j {
            if tally.sampled[j * n + i] == 0 {
                return Err(Error::InsufficientCoverage { i, j });
            }
        }
    }
    let entries = DMatrix::from_fn(n, n, |i, j| {
        f64::from(tally.together[j * n + i]) / f64::from(tally.sampled[j * n + i])
    });
    let pair_counts = DMatrix::from_column_slice(n, n, &tally.sampled);
    let (entries, spectral_shift) = shift_spectrum(entries)?;
    let kernel = crate::data::validate_kernel(entries, Some(ids))?;
    Ok(ConsensusMatrix {
        kernel,
        pair_counts,
        k: config.k,
        spectral_shift,
    })
}

/// Fraction of off-diagonal entries outside `(epsilon, 1 − epsilon)`.
pub fn stability_fraction(matrix: &ConsensusMatrix, epsilon: f64) -> f64 {
    let c = &matrix.raw_ratio();
    let n = c.nrows();
    if n < 2 {
        return 1.0;
    }
    let mut stable = 0usize;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                let v = c[(i, j)];
                if v <= epsilon || v >= 1.0 - epsilon {
                    stable += 1;
                }
            }
        }
    }
    stable as f64 / (n * (n - 1)) as f64
}

/// Picks the k whose consensus matrix has the largest share of near-binary
/// entries; ties go to the smaller k.
pub fn select_k_monti(consensus_per_k: &BTreeMap<usize, ConsensusMatrix>, epsilon: f64) -> Result<usize> {
    if consensus_per_k.is_empty() {
        return Err(Error::InvalidParameter("no candidate cluster counts".into()));
    }
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::InvalidParameter(format!("epsilon must lie in (0, 0.5), got {epsilon}")));
    }
    let mut best = (0usize, f64::NEG_INFINITY);
    for (&k, m) in consensus_per_k {
        let score = stability_fraction(m, epsilon);
        if score > best.1 {
            best = (k, score);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::FnClusterer;
    use rand::Rng;

    #[test]
    fn coclustering_definition() {
        let p = Partition::from_labels(&[1, 1, 2]);
        let all = coclustering_matrix(&p, &[true, true, true]).unwrap();
        assert_eq!(all.entries, DMatrix::from_row_slice(3, 3, &[1, 1, 0, 1, 1, 0, 0, 0, 1]));
        let sub = coclustering_matrix(&p, &[true, false, true]).unwrap();
        assert_eq!(sub.entries, DMatrix::from_row_slice(3, 3, &[1, 0, 0, 0, 0, 0, 0, 0, 1]));
        let same = coclustering_matrix(&Partition::from_labels(&[4, 4, 4]), &[true; 3]).unwrap();
        assert!(same.entries.iter().all(|&v| v == 1));
        assert!(coclustering_matrix(&p, &[true]).is_err());
    }

    fn two_blobs(n_half: usize, sep: f64) -> Dataset {
        let values = DMatrix::from_fn(2 * n_half, 2, |i, j| {
            let base = if i < n_half { 0.0 } else { sep };
            base + 0.05 * (((i * 31 + j * 17) % 13) as f64 - 6.0) / 6.0
        });
        Dataset::with_default_ids("blobs", values).unwrap()
    }

    #[test]
    fn single_full_resample_equals_coclustering() {
        let data = two_blobs(5, 10.0);
        let mut cfg = ConsensusConfig::new(2, 1, 3);
        cfg.item_fraction = 1.0;
        let c = consensus_matrix(&data, &cfg).unwrap();
        let truth = Partition::from_labels(&[0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
        let cc = coclustering_matrix(&truth, &[true; 10]).unwrap();
        assert_eq!(c.kernel.entries(), &cc.entries.map(f64::from));
    }

    #[test]
    fn separated_clusters_are_stable() {
        let data = two_blobs(15, 10.0);
        let c = consensus_matrix(&data, &ConsensusConfig::new(2, 100, 11)).unwrap();
        assert!(c.kernel.entries().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn random_labels_give_one_half() {
        let data = two_blobs(5, 1.0);
        let random = FnClusterer(|x: &DMatrix<f64>, k: usize, s: u64| {
            let mut rng = seed::rng(s);
            let labels: Vec<usize> = (0..x.nrows()).map(|_| rng.random_range(0..k)).collect();
            Partition::new(labels, k)
        });
        let mut cfg = ConsensusConfig::new(2, 2000, 5);
        cfg.base_clusterer = Arc::new(random);
        let c = consensus_matrix(&data, &cfg).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                if i != j {
                    assert!((c.raw_ratio()[(i, j)] - 0.5).abs() < 0.05);
                }
            }
        }
    }

    #[test]
    fn uneven_coverage_is_repaired() {
        // Overlapping noisy blobs with few resamples give a ratio matrix
        // with negative eigenvalues.
        let data = two_blobs(15, 0.5);
        let c = consensus_matrix(&data, &ConsensusConfig::new(3, 10, 2)).unwrap();
        assert!(c.spectral_shift > 0.0);
        let raw = c.raw_ratio();
        assert!(crate::linalg::min_eigenvalue(&raw) < crate::data::PSD_TOL);
        assert!((crate::linalg::min_eigenvalue(c.kernel.entries())).abs() < 1e-8);
        for i in 0..30 {
            assert!((c.kernel.entries()[(i, i)] - 1.0).abs() < 1e-12);
            for j in 0..30 {
                assert!(c.pair_counts[(i, j)] >= 1);
                assert!((0.0..=1.0).contains(&c.kernel.entries()[(i, j)]));
            }
        }
    }

    #[test]
    fn zero_coverage_is_an_error() {
        let data = two_blobs(5, 10.0);
        let mut cfg = ConsensusConfig::new(2, 1, 0);
        cfg.item_fraction = 0.5;
        assert!(matches!(consensus_matrix(&data, &cfg), Err(Error::InsufficientCoverage { .. })));
    }

    #[test]
    fn config_validation() {
        let mut cfg = ConsensusConfig::new(2, 10, 0);
        cfg.item_fraction = 0.0;
        assert!(cfg.validate(10).is_err());
        cfg.item_fraction = 0.1;
        assert!(cfg.validate(10).is_err());
        assert!(ConsensusConfig::new(2, 0, 0).validate(10).is_err());
    }

    fn consensus_with(entries: DMatrix<f64>, k: usize) -> ConsensusMatrix {
        let n = entries.nrows();
        ConsensusMatrix {
            kernel: KernelMatrix::from_trusted(entries, crate::data::default_ids(n)),
            pair_counts: DMatrix::from_element(n, n, 1),
            k,
            spectral_shift: 0.0,
        }
    }

    #[test]
    fn monti_prefers_binary_and_smaller_k() {
        let binary = crate::data::coclustering_of(&Partition::from_labels(&[0, 0, 1, 1, 1]));
        let mut fuzzy = binary.clone();
        // 6 of 20 off-diagonal entries (30%) set to 0.5.
        for (i, j) in [(0, 2), (0, 3), (1, 4)] {
            fuzzy[(i, j)] = 0.5;
            fuzzy[(j, i)] = 0.5;
        }
        let map: BTreeMap<_, _> = [(2, consensus_with(binary.clone(), 2)), (3, consensus_with(fuzzy, 3))].into();
        assert_eq!(select_k_monti(&map, 0.1).unwrap(), 2);
        let tie: BTreeMap<_, _> = [(3, consensus_with(binary.clone(), 3)), (2, consensus_with(binary, 2))].into();
        assert_eq!(select_k_monti(&tie, 0.1).unwrap(), 2);
        assert!(select_k_monti(&BTreeMap::new(), 0.1).is_err());
    }
}
