//! Property checks shared by the property tests and the acceptance suite.
//!
//! Each check takes a generated case and returns `Err` with a description
//! when the property does not hold.

#![allow(dead_code)]

use std::sync::Arc;

use klic::cluster::{cophenetic_distances, hclust, FnClusterer, Linkage};
use klic::consensus::{consensus_matrix, ConsensusConfig};
use klic::data::{coclustering_of, validate_kernel, Dataset, KernelMatrix, Partition};
use klic::metrics::ari;
use klic::mkkm::{
    combine_kernels_global, combine_kernels_localized, kernel_kmeans, mkkm, objective, relaxed_embedding,
    update_weights_global, update_weights_localized, MkkmMode, MkkmParams, RelaxedEmbedding,
};
use klic::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

pub type Check = std::result::Result<(), TestCaseError>;

fn fail(msg: String) -> Check {
    Err(TestCaseError::fail(msg))
}

// ---------- strategies ----------

/// Random N×P data matrix with entries in [-3, 3].
pub fn data_matrix(n: std::ops::RangeInclusive<usize>, p: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = DMatrix<f64>> {
    (n, p).prop_flat_map(|(n, p)| {
        prop::collection::vec(-3.0f64..3.0, n * p).prop_map(move |v| DMatrix::from_row_slice(n, p, &v))
    })
}

/// Random PSD kernel `AAᵀ` of size n with rank at most r.
pub fn psd_kernel(n: usize, r: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, n * r).prop_map(move |v| {
        let a = DMatrix::from_row_slice(n, r, &v);
        let k = &a * a.transpose();
        (&k + k.transpose()) * 0.5
    })
}

pub fn kernels(n: usize, m: usize) -> impl Strategy<Value = Vec<DMatrix<f64>>> {
    prop::collection::vec(psd_kernel(n, n.min(4)), m)
}

pub fn labels(n: usize, max_k: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..max_k, n)
}

#[derive(Debug, Clone)]
pub struct ConsensusCase {
    pub data: DMatrix<f64>,
    pub k: usize,
    pub n_resamples: usize,
    pub item_fraction: f64,
    pub random_base: bool,
    pub seed: u64,
}

pub fn consensus_case() -> impl Strategy<Value = ConsensusCase> {
    (data_matrix(6..=20, 1..=3), 2usize..=4, 1usize..=25, 0.5f64..=1.0, any::<bool>(), any::<u64>()).prop_map(
        |(data, k, n_resamples, item_fraction, random_base, seed)| ConsensusCase {
            data,
            k,
            n_resamples,
            item_fraction,
            random_base,
            seed,
        },
    )
}

// ---------- oracles ----------

/// ARI from the four pair counts, enumerating every pair.
pub fn pair_counting_ari(a: &[usize], b: &[usize]) -> Option<f64> {
    let (mut ss, mut sd, mut ds, mut dd) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => ss += 1.0,
                (true, false) => sd += 1.0,
                (false, true) => ds += 1.0,
                (false, false) => dd += 1.0,
            }
        }
    }
    let denom = (ss + sd) * (sd + dd) + (ss + ds) * (ds + dd);
    (denom != 0.0).then(|| 2.0 * (ss * dd - sd * ds) / denom)
}

/// Minimum of Σ θ_m² a_m over a simplex grid with spacing 1/steps.
pub fn simplex_grid_min(costs: &[f64], steps: usize) -> f64 {
    let f = |theta: &[f64]| theta.iter().zip(costs).map(|(t, a)| t * t * a).sum::<f64>();
    match costs.len() {
        1 => f(&[1.0]),
        2 => (0..=steps)
            .map(|i| {
                let t = i as f64 / steps as f64;
                f(&[t, 1.0 - t])
            })
            .fold(f64::INFINITY, f64::min),
        3 => {
            let mut best = f64::INFINITY;
            for i in 0..=steps {
                for j in 0..=steps - i {
                    let (t1, t2) = (i as f64 / steps as f64, j as f64 / steps as f64);
                    best = best.min(f(&[t1, t2, 1.0 - t1 - t2]));
                }
            }
            best
        }
        _ => unimplemented!("grid oracle supports up to three kernels"),
    }
}

/// Minimises tᵀQ₁t + (1 − t)ᵀQ₂(1 − t) over the box [0,1]^N by exact cyclic
/// coordinate minimisation; returns the minimiser.
pub fn box_qp_coordinate_descent(q1: &DMatrix<f64>, q2: &DMatrix<f64>, sweeps: usize) -> Vec<f64> {
    let n = q1.nrows();
    let mut t = vec![0.5; n];
    for _ in 0..sweeps {
        for i in 0..n {
            // f as a function of t_i: c2 t_i² + c1 t_i + const.
            let c2 = q1[(i, i)] + q2[(i, i)];
            let mut c1 = 0.0;
            for j in 0..n {
                if j != i {
                    c1 += 2.0 * q1[(i, j)] * t[j] - 2.0 * q2[(i, j)] * (1.0 - t[j]);
                }
            }
            c1 -= 2.0 * q2[(i, i)];
            t[i] = if c2 > 0.0 {
                (-c1 / (2.0 * c2)).clamp(0.0, 1.0)
            } else if c1 > 0.0 {
                0.0
            } else {
                1.0
            };
        }
    }
    t
}

pub fn localized_cost(q: &[DMatrix<f64>], theta: &DMatrix<f64>) -> f64 {
    q.iter()
        .enumerate()
        .map(|(m, qm)| {
            let col = theta.column(m);
            (col.transpose() * qm * col)[(0, 0)]
        })
        .sum()
}

pub fn residual_projector(h: &DMatrix<f64>) -> DMatrix<f64> {
    let n = h.nrows();
    DMatrix::identity(n, n) - h * h.transpose()
}

/// d(i,k) ≤ max(d(i,j), d(j,k)) for all triples.
pub fn ultrametric_violation(d: &DMatrix<f64>) -> f64 {
    let n = d.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                worst = worst.max(d[(i, k)] - d[(i, j)].max(d[(j, k)]));
            }
        }
    }
    worst
}

fn trusted(m: DMatrix<f64>) -> Result<KernelMatrix, TestCaseError> {
    validate_kernel(m, None).map_err(|e| TestCaseError::fail(format!("generated kernel rejected: {e}")))
}

// ---------- checks ----------

/// (a) consensus matrices are valid kernels with entries in [0,1] and unit diagonal.
pub fn check_consensus_is_kernel(case: ConsensusCase) -> Check {
    let n = case.data.nrows();
    prop_assume!(((case.item_fraction * n as f64).ceil() as usize) >= case.k);
    let data = Dataset::with_default_ids("x", case.data.clone()).unwrap();
    let mut cfg = ConsensusConfig::new(case.k, case.n_resamples, case.seed);
    cfg.item_fraction = case.item_fraction;
    if case.random_base {
        cfg.base_clusterer = Arc::new(FnClusterer(|x: &DMatrix<f64>, k: usize, s: u64| {
            let mut state = s;
            let labels = (0..x.nrows())
                .map(|_| {
                    state = klic::seed::derive(state, &[1]);
                    (state % k as u64) as usize
                })
                .collect();
            Partition::new(labels, k)
        }));
    }
    let c = match consensus_matrix(&data, &cfg) {
        Ok(c) => c,
        Err(Error::InsufficientCoverage { .. }) => return Err(TestCaseError::reject("uncovered pair")),
        Err(e) => return fail(format!("consensus failed: {e}")),
    };
    let entries = c.kernel.entries();
    for i in 0..n {
        if (entries[(i, i)] - 1.0).abs() > 1e-12 {
            return fail(format!("diagonal entry {i} is {}", entries[(i, i)]));
        }
        for j in 0..n {
            let v = entries[(i, j)];
            if !(0.0..=1.0).contains(&v) || v != entries[(j, i)] {
                return fail(format!("entry ({i},{j}) = {v}"));
            }
        }
    }
    validate_kernel(entries.clone(), None).map_err(|e| TestCaseError::fail(format!("not a kernel: {e}")))?;
    Ok(())
}

/// (b) ARI agrees with the pair-counting oracle.
pub fn check_ari_oracle((a, b): (Vec<usize>, Vec<usize>)) -> Check {
    let Some(expected) = pair_counting_ari(&a, &b) else {
        return Err(TestCaseError::reject("degenerate pair counts"));
    };
    let got = ari(&Partition::from_labels(&a), &Partition::from_labels(&b)).unwrap();
    if (got - expected).abs() > 1e-12 {
        return fail(format!("ari {got} vs oracle {expected}"));
    }
    Ok(())
}

/// (c) global weights reach the simplex grid minimum.
pub fn check_global_weights((ks, probe, k): (Vec<DMatrix<f64>>, DMatrix<f64>, usize)) -> Check {
    let kernels: Vec<KernelMatrix> = ks.into_iter().map(trusted).collect::<Result<_, _>>()?;
    let emb = relaxed_embedding(&probe, k).unwrap();
    let theta = match update_weights_global(&kernels, &emb) {
        Ok(t) => t,
        Err(Error::InvalidEmbedding { .. }) => return Err(TestCaseError::reject("negative cost")),
        Err(e) => return fail(e.to_string()),
    };
    let cost_of = |t: &[f64]| -objective(combine_kernels_global(&kernels, t).unwrap().entries(), &emb);
    let costs: Vec<f64> = (0..kernels.len())
        .map(|m| {
            let mut e = vec![0.0; kernels.len()];
            e[m] = 1.0;
            cost_of(&e)
        })
        .collect();
    let grid = simplex_grid_min(&costs, 200);
    let got = cost_of(&theta);
    if got > grid + 1e-3 || got < grid - 1e-3 - 1e-9 * grid.abs() {
        return fail(format!("cost {got} vs grid {grid} (costs {costs:?}, θ {theta:?})"));
    }
    Ok(())
}

/// (d) localized weights reach the box-QP minimum for two kernels.
pub fn check_localized_weights((ks, probe, k): (Vec<DMatrix<f64>>, DMatrix<f64>, usize)) -> Check {
    let n = probe.nrows();
    let kernels: Vec<KernelMatrix> = ks.into_iter().map(trusted).collect::<Result<_, _>>()?;
    let emb = relaxed_embedding(&probe, k).unwrap();
    let prev = DMatrix::from_element(n, 2, 0.5);
    let theta = update_weights_localized(&kernels, &emb, &prev).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let r = residual_projector(&emb.h);
    let q: Vec<DMatrix<f64>> = kernels.iter().map(|km| km.entries().component_mul(&r)).collect();
    let t = box_qp_coordinate_descent(&q[0], &q[1], 20_000);
    let oracle_theta = DMatrix::from_fn(n, 2, |i, j| if j == 0 { t[i] } else { 1.0 - t[i] });
    let oracle = localized_cost(&q, &oracle_theta);
    // Cost through the library's combination path.
    let got = -objective(combine_kernels_localized(&kernels, &theta).unwrap().entries(), &emb);
    if (got - oracle).abs() > 1e-3 {
        return fail(format!("cost {got} vs oracle {oracle}"));
    }
    Ok(())
}

/// (e) the objective trace never decreases.
pub fn check_trace_monotone((ks, k, localized, seed): (Vec<DMatrix<f64>>, usize, bool, u64)) -> Check {
    let kernels: Vec<KernelMatrix> = ks.into_iter().map(trusted).collect::<Result<_, _>>()?;
    let mode = if localized { MkkmMode::Localized } else { MkkmMode::Global };
    let r = match mkkm(&kernels, k, mode, seed, MkkmParams::default()) {
        Ok(r) => r,
        Err(Error::InvalidEmbedding { .. }) => return Err(TestCaseError::reject("negative cost")),
        Err(e) => return fail(e.to_string()),
    };
    for w in r.objective_trace.windows(2) {
        if w[1] < w[0] - 1e-9 {
            return fail(format!("trace decreased: {:?}", r.objective_trace));
        }
    }
    Ok(())
}

/// (f) tr(HᵀΔH) equals the sum of the top-k eigenvalues.
pub fn check_trace_identity((kernel, k): (DMatrix<f64>, usize)) -> Check {
    let RelaxedEmbedding { h, eigenvalues } = relaxed_embedding(&kernel, k).unwrap();
    let lhs = (h.transpose() * &kernel * &h).trace();
    let rhs: f64 = eigenvalues.iter().sum();
    let scale = lhs.abs().max(rhs.abs()).max(1e-300);
    if (lhs - rhs).abs() > 1e-8 * scale && (lhs - rhs).abs() > 1e-12 {
        return fail(format!("tr = {lhs}, Σλ = {rhs}"));
    }
    let gram = h.transpose() * &h;
    if (gram - DMatrix::identity(k, k)).amax() > 1e-8 {
        return fail("columns of H are not orthonormal".into());
    }
    Ok(())
}

/// (g) cophenetic distances are ultrametric for every linkage.
pub fn check_cophenetic_ultrametric(points: DMatrix<f64>) -> Check {
    let n = points.nrows();
    let d = DMatrix::from_fn(n, n, |i, j| (points.row(i) - points.row(j)).norm());
    for linkage in [Linkage::Average, Linkage::Complete, Linkage::Single] {
        let eta = cophenetic_distances(&hclust(&d, linkage).unwrap());
        let v = ultrametric_violation(&eta);
        if v > 1e-12 {
            return fail(format!("{linkage:?}: violation {v}"));
        }
    }
    Ok(())
}

/// (h) kernel k-means recovers shuffled ideal block kernels.
pub fn check_block_recovery((sizes, perm_seed, seed): (Vec<usize>, u64, u64)) -> Check {
    let mut labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &s)| std::iter::repeat_n(c, s)).collect();
    // Fisher–Yates with a counter-based stream.
    for i in (1..labels.len()).rev() {
        let j = (klic::seed::derive(perm_seed, &[i as u64]) % (i as u64 + 1)) as usize;
        labels.swap(i, j);
    }
    let truth = Partition::new(labels, sizes.len()).unwrap();
    let kernel = validate_kernel(coclustering_of(&truth), None).unwrap();
    let (p, _) = kernel_kmeans(&kernel, sizes.len(), seed).unwrap();
    let a = ari(&p, &truth).unwrap();
    if a != 1.0 {
        return fail(format!("ARI {a} for sizes {sizes:?}"));
    }
    Ok(())
}

// ---------- strategies per check ----------

pub fn ari_case() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (2usize..=50, 1usize..=6, 1usize..=6).prop_flat_map(|(n, ka, kb)| (labels(n, ka), labels(n, kb)))
}

pub fn global_case() -> impl Strategy<Value = (Vec<DMatrix<f64>>, DMatrix<f64>, usize)> {
    (3usize..=8, 1usize..=3)
        .prop_flat_map(|(n, m)| (kernels(n, m), psd_kernel(n, n), 1..n))
}

pub fn localized_case() -> impl Strategy<Value = (Vec<DMatrix<f64>>, DMatrix<f64>, usize)> {
    (2usize..=10).prop_flat_map(|n| (kernels(n, 2), psd_kernel(n, n), 1..n))
}

pub fn trace_case() -> impl Strategy<Value = (Vec<DMatrix<f64>>, usize, bool, u64)> {
    (4usize..=12, 1usize..=3).prop_flat_map(|(n, m)| (kernels(n, m), 2..=n.min(4), any::<bool>(), any::<u64>()))
}

pub fn identity_case() -> impl Strategy<Value = (DMatrix<f64>, usize)> {
    (2usize..=50).prop_flat_map(|n| (psd_kernel(n, n.min(8)), 1..=n))
}

pub fn block_case() -> impl Strategy<Value = (Vec<usize>, u64, u64)> {
    (prop::collection::vec(1usize..=12, 2..=6), any::<u64>(), any::<u64>())
}

/// Runs one check through proptest with a fixed seed; returns the failure
/// message if any.
pub fn run_check<S: Strategy>(
    cases: u32,
    strategy: S,
    check: impl Fn(S::Value) -> Check,
) -> std::result::Result<(), String> {
    let config = Config {
        cases,
        max_global_rejects: cases * 20,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, proptest::test_runner::TestRng::deterministic_rng(config_rng()));
    runner.run(&strategy, check).map_err(|e| e.to_string())
}

fn config_rng() -> proptest::test_runner::RngAlgorithm {
    proptest::test_runner::RngAlgorithm::ChaCha
}

pub const PROPERTY_CASES: &[(&str, u32)] = &[
    ("consensus matrices are kernels", 64),
    ("ari matches pair counting", 200),
    ("global weights match grid", 64),
    ("localized weights match box QP", 64),
    ("objective trace monotone", 64),
    ("trace identity", 64),
    ("cophenetic ultrametric", 64),
    ("block kernels recovered", 64),
];

/// Runs every property; one entry per property.
pub fn run_all_properties() -> Vec<(&'static str, std::result::Result<(), String>)> {
    let c = |i: usize| PROPERTY_CASES[i].1;
    vec![
        (PROPERTY_CASES[0].0, run_check(c(0), consensus_case(), check_consensus_is_kernel)),
        (PROPERTY_CASES[1].0, run_check(c(1), ari_case(), check_ari_oracle)),
        (PROPERTY_CASES[2].0, run_check(c(2), global_case(), check_global_weights)),
        (PROPERTY_CASES[3].0, run_check(c(3), localized_case(), check_localized_weights)),
        (PROPERTY_CASES[4].0, run_check(c(4), trace_case(), check_trace_monotone)),
        (PROPERTY_CASES[5].0, run_check(c(5), identity_case(), check_trace_identity)),
        (PROPERTY_CASES[6].0, run_check(c(6), data_matrix(2..=15, 1..=3), check_cophenetic_ultrametric)),
        (PROPERTY_CASES[7].0, run_check(c(7), block_case(), check_block_recovery)),
    ]
}
