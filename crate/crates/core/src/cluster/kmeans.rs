//! Lloyd's k-means with k-means++ seeding and best-of-restarts selection.

use nalgebra::DMatrix;
use rand::Rng;

use crate::data::Partition;
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_RESTARTS: usize = 10;
pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub partition: Partition,
    /// K×P, row `c` is the centroid of cluster `c`.
    pub centroids: DMatrix<f64>,
    /// Sum of squared distances from each point to its centroid.
    pub inertia: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansParams {
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            restarts: DEFAULT_RESTARTS,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Runs `restarts` seeded k-means++/Lloyd runs and keeps the lowest inertia.
pub fn kmeans(data: &DMatrix<f64>, k: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    kmeans_with(
        data,
        k,
        seed,
        KMeansParams {
            restarts,
            ..KMeansParams::default()
        },
    )
}

pub fn kmeans_with(data: &DMatrix<f64>, k: usize, seed: u64, params: KMeansParams) -> Result<KMeansResult> {
    let n = data.nrows();
    if k < 2 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    if params.restarts == 0 {
        return Err(Error::InvalidParameter("k-means needs at least one restart".into()));
    }
    crate::data::check_finite(data)?;
    let points = Points::new(data);
    let mut best: Option<Run> = None;
    for r in 0..params.restarts {
        let run = lloyd(&points, k, seed::derive(seed, &[r as u64]), params.max_iter);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    Ok(finish(&points, best, k))
}

/// Row-major copy of the data for cache-friendly distance loops.
struct Points {
    n: usize,
    p: usize,
    rows: Vec<f64>,
}

impl Points {
    fn new(data: &DMatrix<f64>) -> Self {
        let (n, p) = data.shape();
        let mut rows = Vec::with_capacity(n * p);
        for i in 0..n {
            rows.extend(data.row(i).iter());
        }
        Points { n, p, rows }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.p..(i + 1) * self.p]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

struct Run {
    labels: Vec<usize>,
    centroids: Vec<f64>,
    inertia: f64,
    iterations: usize,
}

fn plus_plus_init(points: &Points, k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let (n, p) = (points.n, points.p);
    let mut centroids = Vec::with_capacity(k * p);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(points.row(first));
    let mut closest: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(first))).collect();
    for _ in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in closest.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // Fewer distinct points than clusters.
            rng.random_range(0..n)
        };
        let c = points.row(pick);
        centroids.extend_from_slice(c);
        for (i, d) in closest.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), c));
        }
    }
    centroids
}

fn assign(points: &Points, centroids: &[f64], k: usize, labels: &mut [usize], dists: &mut [f64]) -> bool {
    let p = points.p;
    let mut changed = false;
    for i in 0..points.n {
        let x = points.row(i);
        let (mut best, mut best_d) = (0, f64::INFINITY);
        for c in 0..k {
            let d = sq_dist(x, &centroids[c * p..(c + 1) * p]);
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        if labels[i] != best {
            labels[i] = best;
            changed = true;
        }
        dists[i] = best_d;
    }
    changed
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(points: &Points, k: usize, labels: &mut [usize], dists: &mut [f64]) -> bool {
    let mut repaired = false;
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return repaired;
        };
        let donor = (0..points.n)
            .filter(|&i| sizes[labels[i]] > 1)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if dists[b] >= dists[i] => Some(b),
                _ => Some(i),
            })
            .expect("k <= n guarantees a cluster with two members");
        labels[donor] = empty;
        dists[donor] = 0.0;
        repaired = true;
    }
}

fn update_centroids(points: &Points, labels: &[usize], k: usize) -> Vec<f64> {
    let p = points.p;
    let mut sums = vec![0.0; k * p];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, x) in sums[l * p..(l + 1) * p].iter_mut().zip(points.row(i)) {
            *s += x;
        }
    }
    for c in 0..k {
        let inv = 1.0 / counts[c].max(1) as f64;
        for s in &mut sums[c * p..(c + 1) * p] {
            *s *= inv;
        }
    }
    sums
}

fn inertia_of(points: &Points, labels: &[usize], centroids: &[f64]) -> f64 {
    let p = points.p;
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(points.row(i), &centroids[l * p..(l + 1) * p]))
        .sum()
}

fn lloyd(points: &Points, k: usize, seed: u64, max_iter: usize) -> Run {
    let mut rng = seed::rng(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut labels = vec![usize::MAX; points.n];
    let mut dists = vec![0.0; points.n];
    let mut iterations = 0;
    let mut previous = f64::INFINITY;
    while iterations < max_iter {
        iterations += 1;
        let changed = assign(points, &centroids, k, &mut labels, &mut dists);
        let repaired = repair_empty(points, k, &mut labels, &mut dists);
        if !changed && !repaired && iterations > 1 {
            break;
        }
        centroids = update_centroids(points, &labels, k);
        let inertia = inertia_of(points, &labels, &centroids);
        debug_assert!(
            inertia <= previous * (1.0 + 1e-12) + 1e-12,
            "k-means inertia increased: {previous} -> {inertia}"
        );
        previous = inertia;
    }
    let inertia = inertia_of(points, &labels, &centroids);
    Run {
        labels,
        centroids,
        inertia,
        iterations,
    }
}

/// Relabels to first-appearance order and packages the result.
fn finish(points: &Points, run: Run, k: usize) -> KMeansResult {
    let p = points.p;
    let mut order = vec![usize::MAX; k];
    let mut next = 0;
    for &l in &run.labels {
        if order[l] == usize::MAX {
            order[l] = next;
            next += 1;
        }
    }
    for slot in order.iter_mut().filter(|s| **s == usize::MAX) {
        *slot = next;
        next += 1;
    }
    let labels: Vec<usize> = run.labels.iter().map(|&l| order[l]).collect();
    let mut centroids = DMatrix::zeros(k, p);
    for (old, &new) in order.iter().enumerate() {
        for j in 0..p {
            centroids[(new, j)] = run.centroids[old * p + j];
        }
    }
    KMeansResult {
        partition: Partition::new(labels, k).expect("labels below k"),
        centroids,
        inertia: run.inertia,
        iterations: run.iterations,
    }
}
