//! Declarative experiment runner.
//!
//! An experiment generates (or loads) datasets for each replicate, computes
//! one consensus kernel per dataset, runs every requested method on every
//! subset of datasets, and scores the result against a truth partition.
//!
//! Seeds are split with [`seed::derive`]:
//!
//! | stream                               | path                            |
//! |--------------------------------------|---------------------------------|
//! | synthetic data, replicate `r`        | `[r, 0]`                        |
//! | consensus kernel of dataset `d`      | `[r, 1, fnv1a(d)]`              |
//! | method `m` on subset `s`             | `[r, 2, fnv1a(s), m]`           |
//!
//! so any single replicate, dataset or subset reproduces on its own.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{cut_dendrogram, hclust_average};
use crate::coca::{build_moc, coca, select_kbar_silhouette};
use crate::consensus::{consensus_matrix, ConsensusConfig};
use crate::data::{check_aligned, load_dataset, CsvLayout, Dataset, KernelMatrix, Partition};
use crate::error::{Error, Result};
use crate::io::write_rows;
use crate::klic::{klic_from_kernels, KlicParams};
use crate::metrics::ari;
use crate::mkkm::{kernel_kmeans, MkkmMode};
use crate::seed;
use crate::simgen::{self, DatasetSpec, Scenario, ScenarioSpec};

pub const SCHEMA_VERSION: u32 = 1;

pub const DESK_REPLICATES: usize = 10;
pub const DESK_RESAMPLES: usize = 100;
pub const PAPER_REPLICATES: usize = 100;
pub const PAPER_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    KlicGlobal,
    KlicLocalized,
    Coca,
    KernelKmeansSingle,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::KlicGlobal,
        Method::KlicLocalized,
        Method::Coca,
        Method::KernelKmeansSingle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::KlicGlobal => "klic_global",
            Method::KlicLocalized => "klic_localized",
            Method::Coca => "coca",
            Method::KernelKmeansSingle => "kernel_kmeans_single",
        }
    }

    fn code(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// A group of datasets analysed together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsetConfig {
    pub datasets: Vec<String>,
    /// Fixed cluster count; defaults to the cluster count of the truth.
    #[serde(default)]
    pub k: Option<usize>,
    /// Select the cluster count by silhouette over `2..=k_max` instead.
    #[serde(default)]
    pub k_max: Option<usize>,
    /// Dataset whose truth scores this subset; defaults to the first one.
    #[serde(default)]
    pub truth: Option<String>,
    /// Label in the output files; defaults to the dataset names joined by `+`.
    #[serde(default)]
    pub label: Option<String>,
}

impl SubsetConfig {
    pub fn of(datasets: &[&str]) -> Self {
        SubsetConfig {
            datasets: datasets.iter().map(|d| d.to_string()).collect(),
            k: None,
            k_max: None,
            truth: None,
            label: None,
        }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.datasets.join("+"))
    }
}

/// A dataset read from disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub name: String,
    pub path: PathBuf,
    /// Cluster count for the consensus step.
    pub k: usize,
    /// Optional label file; scores subsets that name this dataset as truth.
    #[serde(default)]
    pub truth: Option<PathBuf>,
    /// Label column in the truth file; defaults to the first after the ids.
    #[serde(default)]
    pub truth_column: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// One of `similar`, `noise`, `nested`.
    #[serde(default)]
    pub preset: Option<String>,
    /// A fully specified synthetic scenario (instead of a preset).
    #[serde(default)]
    pub scenario: Option<ScenarioBody>,
    /// Datasets read from CSV files (instead of synthetic data).
    #[serde(default)]
    pub inputs: Vec<InputConfig>,
    #[serde(default = "default_true")]
    pub has_header: bool,
    #[serde(default = "default_true")]
    pub id_column: bool,
    #[serde(default)]
    pub n_obs: Option<usize>,
    /// Per-dataset separation overrides for synthetic data.
    #[serde(default)]
    pub separations: BTreeMap<String, f64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_resamples")]
    pub n_resamples: usize,
    #[serde(default = "default_item_fraction")]
    pub item_fraction: f64,
    #[serde(default = "default_feature_fraction")]
    pub feature_fraction: f64,
    /// Per-dataset cluster counts for the consensus step (synthetic data
    /// defaults to the generating cluster count).
    #[serde(default)]
    pub dataset_k: BTreeMap<String, usize>,
    pub methods: Vec<Method>,
    pub subsets: Vec<SubsetConfig>,
    #[serde(default)]
    pub seed: u64,
    /// Adds wall-clock seconds to results.csv; outputs are then no longer
    /// reproducible byte for byte.
    #[serde(default)]
    pub record_timings: bool,
    /// Replaces replicates, resamples and N by the full-size values.
    #[serde(default)]
    pub paper_scale: bool,
    #[serde(default)]
    pub plot_data: bool,
    /// Maximum number of replicates in flight; 0 uses every core.
    #[serde(default)]
    pub jobs: usize,
}

/// Scenario table of a config file; the seed comes from the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioBody {
    pub scenario: Scenario,
    pub n_obs: usize,
    pub datasets: Vec<DatasetSpec>,
}

fn default_true() -> bool {
    true
}
fn default_replicates() -> usize {
    DESK_REPLICATES
}
fn default_resamples() -> usize {
    DESK_RESAMPLES
}
fn default_item_fraction() -> f64 {
    0.8
}
fn default_feature_fraction() -> f64 {
    1.0
}

enum Source {
    Synthetic(ScenarioSpec),
    Files(Vec<InputConfig>),
}

impl ExperimentConfig {
    /// A preset experiment at desk scale with default subsets.
    pub fn for_preset(preset: &str, methods: Vec<Method>, subsets: Vec<SubsetConfig>, seed: u64) -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            preset: Some(preset.to_string()),
            scenario: None,
            inputs: Vec::new(),
            has_header: true,
            id_column: true,
            n_obs: None,
            separations: BTreeMap::new(),
            replicates: DESK_REPLICATES,
            n_resamples: DESK_RESAMPLES,
            item_fraction: 0.8,
            feature_fraction: 1.0,
            dataset_k: BTreeMap::new(),
            methods,
            subsets,
            seed,
            record_timings: false,
            paper_scale: false,
            plot_data: false,
            jobs: 0,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses a config file; relative input paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for input in &mut config.inputs {
            input.path = base.join(&input.path);
            if let Some(t) = &mut input.truth {
                *t = base.join(&*t);
            }
        }
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn effective_replicates(&self) -> usize {
        if self.paper_scale {
            PAPER_REPLICATES
        } else {
            self.replicates
        }
    }

    pub fn effective_resamples(&self) -> usize {
        if self.paper_scale {
            PAPER_RESAMPLES
        } else {
            self.n_resamples
        }
    }

    fn source(&self) -> Result<Source> {
        let chosen = [self.preset.is_some(), self.scenario.is_some(), !self.inputs.is_empty()];
        if chosen.iter().filter(|&&c| c).count() != 1 {
            return Err(Error::Config("exactly one of preset, scenario or inputs must be given".into()));
        }
        if !self.inputs.is_empty() {
            return Ok(Source::Files(self.inputs.clone()));
        }
        let mut spec = match (&self.preset, &self.scenario) {
            (Some(name), _) => simgen::preset(name, simgen::DEFAULT_N_OBS, self.seed)?,
            (_, Some(body)) => ScenarioSpec {
                scenario: body.scenario,
                n_obs: body.n_obs,
                datasets: body.datasets.clone(),
                seed: self.seed,
            },
            _ => unreachable!(),
        };
        if let Some(n) = self.n_obs {
            spec.n_obs = n;
        }
        if self.paper_scale {
            spec.n_obs = simgen::PAPER_N_OBS;
        }
        for (name, &s) in &self.separations {
            let Some(d) = spec.datasets.iter_mut().find(|d| &d.name == name) else {
                return Err(Error::Config(format!("separation given for unknown dataset {name:?}")));
            };
            d.separation = s;
        }
        spec.validate()?;
        Ok(Source::Synthetic(spec))
    }

    fn dataset_names(&self, source: &Source) -> Vec<String> {
        match source {
            Source::Synthetic(spec) => spec.datasets.iter().map(|d| d.name.clone()).collect(),
            Source::Files(inputs) => inputs.iter().map(|i| i.name.clone()).collect(),
        }
    }

    /// Checks everything that can be checked without running a replicate.
    pub fn validate(&self) -> Result<()> {
        self.plan().map(|_| ())
    }

    fn plan(&self) -> Result<Plan> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.effective_replicates() == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods requested".into()));
        }
        let methods: BTreeSet<Method> = self.methods.iter().copied().collect();
        if methods.len() != self.methods.len() {
            return Err(Error::Config("methods listed more than once".into()));
        }
        if self.subsets.is_empty() {
            return Err(Error::Config("no subsets requested".into()));
        }
        let source = self.source()?;
        let names = self.dataset_names(&source);
        if names.iter().collect::<BTreeSet<_>>().len() != names.len() {
            return Err(Error::Config("dataset names must be unique".into()));
        }
        let mut cluster_counts: BTreeMap<String, usize> = match &source {
            Source::Synthetic(spec) => spec.datasets.iter().map(|d| (d.name.clone(), d.n_clusters)).collect(),
            Source::Files(inputs) => {
                for input in inputs {
                    if !input.path.is_file() {
                        return Err(Error::Config(format!("input file {} does not exist", input.path.display())));
                    }
                    if let Some(t) = input.truth.as_ref().filter(|t| !t.is_file()) {
                        return Err(Error::Config(format!("truth file {} does not exist", t.display())));
                    }
                }
                inputs.iter().map(|i| (i.name.clone(), i.k)).collect()
            }
        };
        for (name, &k) in &self.dataset_k {
            match cluster_counts.get_mut(name) {
                Some(slot) => *slot = k,
                None => return Err(Error::Config(format!("dataset_k given for unknown dataset {name:?}"))),
            }
        }
        let has_truth = |name: &str| match &source {
            Source::Synthetic(_) => true,
            Source::Files(inputs) => inputs.iter().any(|i| i.name == name && i.truth.is_some()),
        };
        let mut subsets = Vec::new();
        let mut labels = BTreeSet::new();
        for s in &self.subsets {
            if s.datasets.is_empty() {
                return Err(Error::Config("empty subset".into()));
            }
            for d in &s.datasets {
                if !names.contains(d) {
                    return Err(Error::Config(format!("subset names unknown dataset {d:?}")));
                }
            }
            if s.datasets.iter().collect::<BTreeSet<_>>().len() != s.datasets.len() {
                return Err(Error::Config(format!("subset {} repeats a dataset", s.label())));
            }
            let truth = s.truth.clone().unwrap_or_else(|| s.datasets[0].clone());
            if !names.contains(&truth) || !has_truth(&truth) {
                return Err(Error::Config(format!("subset {}: no truth available for {truth:?}", s.label())));
            }
            let choice = match (s.k, s.k_max) {
                (Some(_), Some(_)) => {
                    return Err(Error::Config(format!("subset {}: give k or k_max, not both", s.label())))
                }
                (Some(k), None) => KChoice::Fixed(k),
                (None, Some(k_max)) => KChoice::UpTo(k_max),
                (None, None) => match &source {
                    Source::Synthetic(spec) => KChoice::Fixed(spec.dataset(&truth).expect("checked").n_clusters),
                    Source::Files(_) => KChoice::Fixed(cluster_counts[&truth]),
                },
            };
            match choice {
                KChoice::Fixed(k) if k < 2 => return Err(Error::InvalidK { k, n: 0 }),
                KChoice::UpTo(k) if k < 2 => return Err(Error::InvalidK { k, n: 0 }),
                _ => {}
            }
            let label = s.label();
            if !labels.insert(label.clone()) {
                return Err(Error::Config(format!("duplicate subset label {label:?}")));
            }
            subsets.push(PlannedSubset {
                label,
                datasets: s.datasets.clone(),
                truth,
                k: choice,
            });
        }
        let used: BTreeSet<String> = subsets.iter().flat_map(|s| s.datasets.iter().cloned()).collect();
        let consensus = ConsensusConfig {
            n_resamples: self.effective_resamples(),
            item_fraction: self.item_fraction,
            feature_fraction: self.feature_fraction,
            ..ConsensusConfig::new(2, 1, 0)
        };
        if consensus.n_resamples == 0 {
            return Err(Error::Config("n_resamples must be at least 1".into()));
        }
        for (name, f) in [("item_fraction", self.item_fraction), ("feature_fraction", self.feature_fraction)] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {f}")));
            }
        }
        Ok(Plan {
            source,
            cluster_counts,
            used,
            subsets,
            methods: self.methods.clone(),
            consensus,
        })
    }
}

#[derive(Debug, Clone, Copy)]
enum KChoice {
    Fixed(usize),
    UpTo(usize),
}

struct PlannedSubset {
    label: String,
    datasets: Vec<String>,
    truth: String,
    k: KChoice,
}

struct Plan {
    source: Source,
    cluster_counts: BTreeMap<String, usize>,
    used: BTreeSet<String>,
    subsets: Vec<PlannedSubset>,
    methods: Vec<Method>,
    consensus: ConsensusConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub replicate: usize,
    pub method: Method,
    pub subset: String,
    pub selected_k: Option<usize>,
    pub ari: Option<f64>,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightRow {
    pub replicate: usize,
    pub method: Method,
    pub subset: String,
    pub kernel: String,
    pub mean_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub subset: String,
    pub median_ari: f64,
    pub q1: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    pub replicate: usize,
    pub method: Option<Method>,
    pub subset: Option<String>,
    pub code: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentReport {
    pub results: Vec<ResultRow>,
    pub weights: Vec<WeightRow>,
    pub summary: Vec<SummaryRow>,
    pub errors: Vec<ErrorRow>,
}

impl ExperimentReport {
    pub fn failed(&self) -> bool {
        !self.errors.is_empty()
    }

    /// ARIs of one method on one subset, in replicate order.
    pub fn aris(&self, method: Method, subset: &str) -> Vec<f64> {
        self.results
            .iter()
            .filter(|r| r.method == method && r.subset == subset)
            .filter_map(|r| r.ari)
            .collect()
    }

    /// Mean weight of `kernel` per replicate.
    pub fn mean_weights(&self, method: Method, subset: &str, kernel: &str) -> Vec<(usize, f64)> {
        self.weights
            .iter()
            .filter(|w| w.method == method && w.subset == subset && w.kernel == kernel)
            .map(|w| (w.replicate, w.mean_weight))
            .collect()
    }

    pub fn summary_for(&self, method: Method, subset: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.method == method && s.subset == subset)
    }
}

/// Quantile with linear interpolation between order statistics
/// (`(n − 1)·p` positioning); `values` need not be sorted.
pub fn quantile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&p) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

struct ReplicateData {
    datasets: HashMap<String, Dataset>,
    truths: HashMap<String, Partition>,
}

fn load_replicate(plan: &Plan, config: &ExperimentConfig, replicate: usize) -> Result<ReplicateData> {
    let mut datasets = HashMap::new();
    let mut truths = HashMap::new();
    match &plan.source {
        Source::Synthetic(spec) => {
            let data_seed = seed::derive(config.seed, &[replicate as u64, 0]);
            let generated: Vec<_> = spec
                .datasets
                .par_iter()
                .map(|d| simgen::generate_one(d, spec.n_obs, data_seed))
                .collect::<Result<_>>()?;
            for (d, g) in spec.datasets.iter().zip(generated) {
                datasets.insert(d.name.clone(), g.dataset);
                truths.insert(d.name.clone(), g.truth);
            }
        }
        Source::Files(inputs) => {
            let layout = CsvLayout {
                has_header: config.has_header,
                id_column: config.id_column,
            };
            let mut first_ids: Option<Vec<String>> = None;
            for input in inputs {
                let mut d = load_dataset(&input.path, layout)?;
                d = Dataset::new(input.name.clone(), d.values().clone(), d.ids().to_vec())?;
                match &first_ids {
                    Some(ids) => check_aligned(ids, d.ids())?,
                    None => first_ids = Some(d.ids().to_vec()),
                }
                if let Some(t) = &input.truth {
                    let (ids, p) = crate::io::read_label_column(t, input.truth_column.as_deref())?;
                    check_aligned(d.ids(), &ids)?;
                    truths.insert(input.name.clone(), p);
                }
                datasets.insert(input.name.clone(), d);
            }
        }
    }
    Ok(ReplicateData { datasets, truths })
}

struct Outcome {
    selected_k: usize,
    partition: Partition,
    weights: Vec<(String, f64)>,
}

/// Cluster-per-dataset partitions for COCA: average-linkage cut of each
/// consensus matrix at the dataset's cluster count.
fn consensus_partition(kernel: &KernelMatrix, k: usize) -> Result<Partition> {
    let c = kernel.entries();
    let n = c.nrows();
    let d = nalgebra::DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { (1.0 - c[(i, j)]).max(0.0) });
    cut_dendrogram(&hclust_average(&d)?, k)
}

fn run_method(
    plan: &Plan,
    subset: &PlannedSubset,
    method: Method,
    kernels: &HashMap<String, KernelMatrix>,
    seed: u64,
) -> Result<Outcome> {
    let selected: Vec<KernelMatrix> = subset.datasets.iter().map(|d| kernels[d].clone()).collect();
    match method {
        Method::KlicGlobal | Method::KlicLocalized => {
            let mode = if method == Method::KlicGlobal {
                MkkmMode::Global
            } else {
                MkkmMode::Localized
            };
            let params = match subset.k {
                KChoice::Fixed(k) => KlicParams::fixed(k, mode, seed),
                KChoice::UpTo(k_max) => KlicParams::up_to(k_max, mode, seed)?,
            };
            let r = klic_from_kernels(&selected, &params)?;
            let w = r.weights.mean_weights();
            Ok(Outcome {
                selected_k: r.best_k,
                partition: r.partition,
                weights: subset.datasets.iter().cloned().zip(w).collect(),
            })
        }
        Method::Coca => {
            let partitions: Vec<Partition> = subset
                .datasets
                .iter()
                .map(|d| consensus_partition(&kernels[d], plan.cluster_counts[d]))
                .collect::<Result<_>>()?;
            let moc = build_moc(&partitions, selected[0].ids())?;
            let cc = plan.consensus.with_seed(seed);
            let (k, partition) = match subset.k {
                KChoice::Fixed(k) => (k, coca(&moc, k, &cc)?.partition),
                KChoice::UpTo(k_max) => {
                    let ks: Vec<usize> = (2..=k_max).collect();
                    let sel = select_kbar_silhouette(&moc, &ks, &cc)?;
                    (sel.k_bar, sel.partition)
                }
            };
            Ok(Outcome {
                selected_k: k,
                partition,
                weights: Vec::new(),
            })
        }
        Method::KernelKmeansSingle => {
            let n = selected[0].n();
            let mut sum = nalgebra::DMatrix::zeros(n, n);
            for k in &selected {
                sum += k.entries();
            }
            let avg = KernelMatrix::from_trusted(sum / selected.len() as f64, selected[0].ids().to_vec());
            let k = match subset.k {
                KChoice::Fixed(k) => k,
                KChoice::UpTo(k_max) => {
                    let params = KlicParams::up_to(k_max, MkkmMode::Global, seed)?;
                    klic_from_kernels(std::slice::from_ref(&avg), &params)?.best_k
                }
            };
            let (partition, _) = kernel_kmeans(&avg, k, seed)?;
            Ok(Outcome {
                selected_k: k,
                partition,
                weights: Vec::new(),
            })
        }
    }
}

struct ReplicateOutput {
    results: Vec<ResultRow>,
    weights: Vec<WeightRow>,
    errors: Vec<ErrorRow>,
}

fn error_row(replicate: usize, method: Option<Method>, subset: Option<String>, e: &Error) -> ErrorRow {
    ErrorRow {
        replicate,
        method,
        subset,
        code: e.code(),
        message: e.to_string(),
    }
}

fn run_replicate(plan: &Plan, config: &ExperimentConfig, replicate: usize) -> ReplicateOutput {
    let mut out = ReplicateOutput {
        results: Vec::new(),
        weights: Vec::new(),
        errors: Vec::new(),
    };
    let blank_rows = |out: &mut ReplicateOutput| {
        for s in &plan.subsets {
            for &m in &plan.methods {
                out.results.push(ResultRow {
                    replicate,
                    method: m,
                    subset: s.label.clone(),
                    selected_k: None,
                    ari: None,
                    seconds: None,
                });
            }
        }
    };
    let data = match load_replicate(plan, config, replicate) {
        Ok(d) => d,
        Err(e) => {
            out.errors.push(error_row(replicate, None, None, &e));
            blank_rows(&mut out);
            return out;
        }
    };
    let used: Vec<&String> = plan.used.iter().collect();
    let kernels: Vec<(String, Result<KernelMatrix>)> = used
        .par_iter()
        .map(|&name| {
            let cc = plan
                .consensus
                .with_k(plan.cluster_counts[name])
                .with_seed(seed::derive(config.seed, &[replicate as u64, 1, seed::fnv1a(name.as_bytes())]));
            (name.clone(), consensus_matrix(&data.datasets[name], &cc).map(|c| c.kernel))
        })
        .collect();
    let mut kernel_map = HashMap::new();
    let mut failed_kernels = false;
    for (name, k) in kernels {
        match k {
            Ok(k) => {
                kernel_map.insert(name, k);
            }
            Err(e) => {
                failed_kernels = true;
                out.errors.push(error_row(replicate, None, Some(name), &e));
            }
        }
    }
    if failed_kernels {
        blank_rows(&mut out);
        return out;
    }
    let jobs: Vec<(&PlannedSubset, Method)> = plan
        .subsets
        .iter()
        .flat_map(|s| plan.methods.iter().map(move |&m| (s, m)))
        .collect();
    let outcomes: Vec<(Result<Outcome>, f64)> = jobs
        .par_iter()
        .map(|&(s, m)| {
            let start = Instant::now();
            let seed = seed::derive(
                config.seed,
                &[replicate as u64, 2, seed::fnv1a(s.label.as_bytes()), m.code()],
            );
            let outcome = run_method(plan, s, m, &kernel_map, seed);
            (outcome, start.elapsed().as_secs_f64())
        })
        .collect();
    for ((s, m), (outcome, seconds)) in jobs.into_iter().zip(outcomes) {
        let seconds = config.record_timings.then_some(seconds);
        let scored = outcome.and_then(|o| ari(&o.partition, &data.truths[&s.truth]).map(|a| (o, a)));
        match scored {
            Ok((o, a)) => {
                out.results.push(ResultRow {
                    replicate,
                    method: m,
                    subset: s.label.clone(),
                    selected_k: Some(o.selected_k),
                    ari: Some(a),
                    seconds,
                });
                out.weights.extend(o.weights.into_iter().map(|(kernel, w)| WeightRow {
                    replicate,
                    method: m,
                    subset: s.label.clone(),
                    kernel,
                    mean_weight: w,
                }));
            }
            Err(e) => {
                out.errors.push(error_row(replicate, Some(m), Some(s.label.clone()), &e));
                out.results.push(ResultRow {
                    replicate,
                    method: m,
                    subset: s.label.clone(),
                    selected_k: None,
                    ari: None,
                    seconds,
                });
            }
        }
    }
    out
}

fn summarise(results: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Method, String), Vec<f64>> = BTreeMap::new();
    for r in results {
        let entry = groups.entry((r.method, r.subset.clone())).or_default();
        if let Some(a) = r.ari {
            entry.push(a);
        }
    }
    groups
        .into_iter()
        .map(|((method, subset), aris)| SummaryRow {
            method,
            subset,
            median_ari: median(&aris).unwrap_or(f64::NAN),
            q1: quantile(&aris, 0.25).unwrap_or(f64::NAN),
            q3: quantile(&aris, 0.75).unwrap_or(f64::NAN),
        })
        .collect()
}

/// Runs every replicate and returns the sorted report. Configuration
/// problems fail before any replicate starts; failures inside a replicate
/// are recorded in [`ExperimentReport::errors`].
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let plan = config.plan()?;
    let replicates = config.effective_replicates();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let outputs: Vec<ReplicateOutput> =
        pool.install(|| (0..replicates).into_par_iter().map(|r| run_replicate(&plan, config, r)).collect());
    let mut report = ExperimentReport::default();
    for o in outputs {
        report.results.extend(o.results);
        report.weights.extend(o.weights);
        report.errors.extend(o.errors);
    }
    report
        .results
        .sort_by(|a, b| (a.replicate, a.method, &a.subset).cmp(&(b.replicate, b.method, &b.subset)));
    report.weights.sort_by(|a, b| {
        (a.replicate, a.method, &a.subset, &a.kernel).cmp(&(b.replicate, b.method, &b.subset, &b.kernel))
    });
    report
        .errors
        .sort_by(|a, b| (a.replicate, a.method, &a.subset).cmp(&(b.replicate, b.method, &b.subset)));
    report.summary = summarise(&report.results);
    Ok(report)
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NA".to_string()
    } else {
        v.to_string()
    }
}

/// Writes results.csv, weights.csv, summary.csv and errors.csv (plus
/// plot_data.csv when requested) into `out_dir`, then re-reads results.csv
/// and checks that the summary recomputes to the same numbers.
pub fn write_report(report: &ExperimentReport, out_dir: &Path, plot_data: bool) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results_path = out_dir.join("results.csv");
    write_rows(
        &results_path,
        &["replicate", "method", "subset", "selected_k", "ari", "seconds"],
        report.results.iter().map(|r| {
            vec![
                r.replicate.to_string(),
                r.method.to_string(),
                r.subset.clone(),
                fmt_opt(r.selected_k),
                fmt_opt(r.ari),
                fmt_opt(r.seconds),
            ]
        }),
    )?;
    write_rows(
        &out_dir.join("weights.csv"),
        &["replicate", "method", "subset", "kernel", "mean_weight"],
        report.weights.iter().map(|w| {
            vec![
                w.replicate.to_string(),
                w.method.to_string(),
                w.subset.clone(),
                w.kernel.clone(),
                w.mean_weight.to_string(),
            ]
        }),
    )?;
    let summary_rows = |summary: &[SummaryRow]| -> Vec<Vec<String>> {
        summary
            .iter()
            .map(|s| {
                vec![
                    s.method.to_string(),
                    s.subset.clone(),
                    fmt_f64(s.median_ari),
                    fmt_f64(s.q1),
                    fmt_f64(s.q3),
                ]
            })
            .collect()
    };
    let summary_path = out_dir.join("summary.csv");
    write_rows(&summary_path, &["method", "subset", "median_ari", "q1", "q3"], summary_rows(&report.summary))?;
    write_rows(
        &out_dir.join("errors.csv"),
        &["replicate", "method", "subset", "code", "message"],
        report.errors.iter().map(|e| {
            vec![
                e.replicate.to_string(),
                fmt_opt(e.method),
                e.subset.clone().unwrap_or_else(|| "NA".into()),
                e.code.to_string(),
                e.message.clone(),
            ]
        }),
    )?;
    if plot_data {
        let mut rows = Vec::new();
        for r in &report.results {
            let base = [r.replicate.to_string(), r.method.to_string(), r.subset.clone()];
            rows.push([base.to_vec(), vec!["ari".into(), fmt_opt(r.ari)]].concat());
            rows.push([base.to_vec(), vec!["selected_k".into(), fmt_opt(r.selected_k)]].concat());
        }
        for w in &report.weights {
            rows.push(vec![
                w.replicate.to_string(),
                w.method.to_string(),
                w.subset.clone(),
                format!("weight:{}", w.kernel),
                w.mean_weight.to_string(),
            ]);
        }
        write_rows(
            &out_dir.join("plot_data.csv"),
            &["replicate", "method", "subset", "variable", "value"],
            rows,
        )?;
    }
    check_summary(&results_path, &summary_path)
}

/// Recomputes summary.csv from results.csv and compares the files.
pub fn check_summary(results_path: &Path, summary_path: &Path) -> Result<()> {
    let read = |path: &Path| -> Result<Vec<csv::StringRecord>> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        reader.records().collect::<std::result::Result<_, _>>().map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    };
    let mut rows = Vec::new();
    for r in read(results_path)? {
        let method: Method = r[1].parse()?;
        let ari = match &r[4] {
            "NA" => None,
            a => Some(a.parse::<f64>().map_err(|e| Error::Csv {
                path: results_path.to_path_buf(),
                message: e.to_string(),
            })?),
        };
        rows.push(ResultRow {
            replicate: 0,
            method,
            subset: r[2].to_string(),
            selected_k: None,
            ari,
            seconds: None,
        });
    }
    let recomputed: Vec<Vec<String>> = summarise(&rows)
        .iter()
        .map(|s| {
            vec![
                s.method.to_string(),
                s.subset.clone(),
                fmt_f64(s.median_ari),
                fmt_f64(s.q1),
                fmt_f64(s.q3),
            ]
        })
        .collect();
    let written: Vec<Vec<String>> = read(summary_path)?
        .iter()
        .map(|r| r.iter().map(str::to_string).collect())
        .collect();
    if recomputed != written {
        return Err(Error::Degenerate("summary.csv does not match results.csv".into()));
    }
    Ok(())
}
