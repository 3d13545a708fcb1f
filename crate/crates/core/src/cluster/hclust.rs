//! Agglomerative hierarchical clustering on a dissimilarity matrix.
//!
//! Node numbering follows the usual convention: leaves are `0..n`, and the
//! `t`-th merge creates node `n + t`.

use nalgebra::DMatrix;

use crate::data::Partition;
use crate::error::{Error, Result};

/// Cluster-to-cluster distance update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Linkage {
    /// UPGMA: mean pairwise dissimilarity between members.
    #[default]
    Average,
    Complete,
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    merges: Vec<Merge>,
    n_leaves: usize,
}

impl Dendrogram {
    /// Builds a dendrogram from an explicit merge list, checking that heights
    /// are non-decreasing and every node is used exactly once.
    pub fn from_merges(n_leaves: usize, merges: Vec<Merge>) -> Result<Self> {
        if n_leaves == 0 || merges.len() + 1 != n_leaves {
            return Err(Error::InvalidParameter(format!(
                "{} merges cannot join {n_leaves} leaves",
                merges.len()
            )));
        }
        let mut used = vec![false; 2 * n_leaves - 1];
        let mut last = f64::NEG_INFINITY;
        for (t, m) in merges.iter().enumerate() {
            let limit = n_leaves + t;
            if m.left >= limit || m.right >= limit || m.left == m.right || used[m.left] || used[m.right] {
                return Err(Error::InvalidParameter(format!("merge {t} reuses or references an unknown node")));
            }
            if !(m.height >= last && m.height >= 0.0) {
                return Err(Error::InvalidParameter(format!("merge {t} has decreasing height")));
            }
            used[m.left] = true;
            used[m.right] = true;
            last = m.height;
        }
        Ok(Dendrogram { merges, n_leaves })
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }
}

fn check_dissimilarity(d: &DMatrix<f64>) -> Result<()> {
    crate::data::check_symmetric(d)?;
    crate::data::check_finite(d)?;
    for j in 0..d.ncols() {
        for i in 0..d.nrows() {
            if d[(i, j)] < 0.0 {
                return Err(Error::NegativeEntry { i, j, value: d[(i, j)] });
            }
        }
    }
    Ok(())
}

/// Average-linkage (UPGMA) clustering.
pub fn hclust_average(dissimilarity: &DMatrix<f64>) -> Result<Dendrogram> {
    hclust(dissimilarity, Linkage::Average)
}

/// Naive O(n³) agglomeration. Among equally close pairs the one with the
/// lexicographically smallest (slot, slot) index merges first; a merged
/// cluster occupies the lower of its two slots.
pub fn hclust(dissimilarity: &DMatrix<f64>, linkage: Linkage) -> Result<Dendrogram> {
    check_dissimilarity(dissimilarity)?;
    let n = dissimilarity.nrows();
    if n == 0 {
        return Err(Error::TooFewObservations { min: 1, found: 0 });
    }
    let mut dist = dissimilarity.clone();
    let mut active = vec![true; n];
    let mut node = (0..n).collect::<Vec<_>>();
    let mut size = vec![1usize; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    let mut last = 0.0f64;
    for t in 0..n.saturating_sub(1) {
        let mut best = (usize::MAX, usize::MAX, f64::INFINITY);
        for i in (0..n).filter(|&i| active[i]) {
            for j in ((i + 1)..n).filter(|&j| active[j]) {
                if dist[(i, j)] < best.2 {
                    best = (i, j, dist[(i, j)]);
                }
            }
        }
        let (a, b, h) = best;
        // Average linkage is monotone; clamp away rounding below the last height.
        let height = h.max(last);
        last = height;
        merges.push(Merge {
            left: node[a].min(node[b]),
            right: node[a].max(node[b]),
            height,
        });
        let (sa, sb) = (size[a] as f64, size[b] as f64);
        for c in (0..n).filter(|&c| active[c] && c != a && c != b) {
            let (da, db) = (dist[(a, c)], dist[(b, c)]);
            let merged = match linkage {
                Linkage::Average => (sa * da + sb * db) / (sa + sb),
                Linkage::Complete => da.max(db),
                Linkage::Single => da.min(db),
            };
            dist[(a, c)] = merged;
            dist[(c, a)] = merged;
        }
        active[b] = false;
        size[a] += size[b];
        node[a] = n + t;
    }
    Ok(Dendrogram { merges, n_leaves: n })
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> usize {
        let (ra, rb) = (self.find(a), self.find(b));
        self.parent[rb] = ra;
        ra
    }
}

/// Partition obtained by undoing the `k − 1` last (highest) merges.
pub fn cut_dendrogram(dendrogram: &Dendrogram, k: usize) -> Result<Partition> {
    let n = dendrogram.n_leaves;
    if k < 1 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    // Nodes n.. map onto the leaf that represents them in the union-find.
    let mut uf = UnionFind::new(n);
    let mut representative: Vec<usize> = (0..n).collect();
    for m in &dendrogram.merges[..n - k] {
        let root = uf.union(representative[m.left], representative[m.right]);
        representative.push(root);
    }
    let roots: Vec<usize> = (0..n).map(|i| uf.find(i)).collect();
    let mut p = Partition::from_labels(&roots);
    debug_assert_eq!(p.k(), k);
    p = Partition::new(p.labels().to_vec(), k)?;
    Ok(p)
}

/// Matrix of merge heights at which each pair of leaves first joins.
pub fn cophenetic_distances(dendrogram: &Dendrogram) -> DMatrix<f64> {
    let n = dendrogram.n_leaves;
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut eta = DMatrix::zeros(n, n);
    for m in &dendrogram.merges {
        let left = std::mem::take(&mut members[m.left]);
        let right = std::mem::take(&mut members[m.right]);
        for &i in &left {
            for &j in &right {
                eta[(i, j)] = m.height;
                eta[(j, i)] = m.height;
            }
        }
        let mut joined = left;
        joined.extend(right);
        members.push(joined);
    }
    eta
}

/// True if `d(i,k) ≤ max(d(i,j), d(j,k))` holds for every triple.
pub fn is_ultrametric(d: &DMatrix<f64>, tol: f64) -> bool {
    let n = d.nrows();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if d[(i, k)] > d[(i, j)].max(d[(j, k)]) + tol {
                    return false;
                }
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_point(d12: f64, d13: f64, d23: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[0.0, d12, d13, d12, 0.0, d23, d13, d23, 0.0])
    }

    #[test]
    fn equal_far_distances() {
        let dg = hclust_average(&three_point(1.0, 5.0, 5.0)).unwrap();
        let m = dg.merges();
        assert_eq!((m[0].left, m[0].right, m[0].height), (0, 1, 1.0));
        assert_eq!(m[1].height, 5.0);
    }

    #[test]
    fn average_of_unequal_distances() {
        let dg = hclust_average(&three_point(1.0, 2.0, 4.0)).unwrap();
        let m = dg.merges();
        assert_eq!((m[0].left, m[0].right, m[0].height), (0, 1, 1.0));
        assert_eq!((m[1].left, m[1].right, m[1].height), (2, 3, 3.0));
        assert_eq!(cut_dendrogram(&dg, 2).unwrap().labels(), &[0, 0, 1]);
        let eta = cophenetic_distances(&dg);
        assert_eq!(eta, three_point(1.0, 3.0, 3.0));
    }

    #[test]
    fn zero_dissimilarity_merges_at_zero() {
        let dg = hclust_average(&DMatrix::zeros(3, 3)).unwrap();
        assert!(dg.merges().iter().all(|m| m.height == 0.0));
    }

    #[test]
    fn cut_extremes() {
        let dg = hclust_average(&three_point(1.0, 2.0, 4.0)).unwrap();
        assert_eq!(cut_dendrogram(&dg, 1).unwrap().labels(), &[0, 0, 0]);
        assert_eq!(cut_dendrogram(&dg, 3).unwrap().labels(), &[0, 1, 2]);
        assert!(cut_dendrogram(&dg, 0).is_err());
        assert!(cut_dendrogram(&dg, 4).is_err());
    }

    #[test]
    fn single_merge_height() {
        let d = DMatrix::from_row_slice(2, 2, &[0.0, 0.7, 0.7, 0.0]);
        let eta = cophenetic_distances(&hclust_average(&d).unwrap());
        assert_eq!(eta[(0, 1)], 0.7);
    }

    #[test]
    fn rejects_bad_dissimilarity() {
        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(hclust_average(&asym).is_err());
        let neg = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0]);
        assert!(matches!(hclust_average(&neg), Err(Error::NegativeEntry { .. })));
    }

    #[test]
    fn from_merges_validates_structure() {
        let ok = vec![
            Merge { left: 0, right: 1, height: 1.0 },
            Merge { left: 3, right: 2, height: 3.0 },
        ];
        assert!(Dendrogram::from_merges(3, ok).is_ok());
        let reused = vec![
            Merge { left: 0, right: 1, height: 1.0 },
            Merge { left: 0, right: 2, height: 3.0 },
        ];
        assert!(Dendrogram::from_merges(3, reused).is_err());
        let decreasing = vec![
            Merge { left: 0, right: 1, height: 2.0 },
            Merge { left: 3, right: 2, height: 1.0 },
        ];
        assert!(Dendrogram::from_merges(3, decreasing).is_err());
    }

    #[test]
    fn complete_and_single_linkage() {
        let d = three_point(1.0, 2.0, 4.0);
        assert_eq!(hclust(&d, Linkage::Complete).unwrap().merges()[1].height, 4.0);
        assert_eq!(hclust(&d, Linkage::Single).unwrap().merges()[1].height, 2.0);
    }
}
