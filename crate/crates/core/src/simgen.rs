//! Synthetic datasets with known cluster structure.
//!
//! An observation in cluster `c ∈ {1..K}` is drawn from a bivariate normal
//! with mean `(c·s, c·s)` and identity covariance. Rows come in cluster-block
//! order, so every dataset generated for the same `N` shares its ids and the
//! truth of a 3-cluster dataset is the 6-cluster truth with pairs merged.
//!
//! Normal deviates come from `rand_distr::StandardNormal` (ziggurat) driven by
//! ChaCha8, both pinned through `Cargo.lock`.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{default_ids, Dataset, Partition};
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_N_OBS: usize = 150;
pub const PAPER_N_OBS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Similar,
    NoiseLevels,
    Nested,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub n_clusters: usize,
    pub separation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub n_obs: usize,
    pub datasets: Vec<DatasetSpec>,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::InvalidParameter("scenario has no datasets".into()));
        }
        for d in &self.datasets {
            if d.n_clusters == 0 || self.n_obs % d.n_clusters != 0 || self.n_obs / d.n_clusters < 1 {
                return Err(Error::InvalidParameter(format!(
                    "dataset {}: {} observations cannot form {} equal clusters",
                    d.name, self.n_obs, d.n_clusters
                )));
            }
            if !(d.separation >= 0.0 && d.separation.is_finite()) {
                return Err(Error::InvalidParameter(format!("dataset {}: separation must be >= 0", d.name)));
            }
        }
        if self.n_obs < 2 {
            return Err(Error::TooFewObservations { min: 2, found: self.n_obs });
        }
        if self.scenario == Scenario::Nested {
            let has = |k| self.datasets.iter().any(|d| d.n_clusters == k);
            if !(has(6) && has(3)) || self.datasets.iter().any(|d| d.n_clusters != 6 && d.n_clusters != 3) {
                return Err(Error::InvalidParameter(
                    "nested scenario needs 6-cluster and 3-cluster datasets only".into(),
                ));
            }
        }
        let mut names: Vec<&str> = self.datasets.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter("dataset names must be unique".into()));
        }
        Ok(())
    }

    pub fn dataset(&self, name: &str) -> Option<&DatasetSpec> {
        self.datasets.iter().find(|d| d.name == name)
    }
}

/// Named preset scenarios at `n_obs` observations.
pub fn preset(name: &str, n_obs: usize, seed: u64) -> Result<ScenarioSpec> {
    let spec = |name: &str, n_clusters, separation| DatasetSpec {
        name: name.to_string(),
        n_clusters,
        separation,
    };
    let (scenario, datasets) = match name {
        "similar" => (Scenario::Similar, ["A", "B", "C", "D", "E"].iter().map(|n| spec(n, 3, 2.0)).collect()),
        "noise" => (
            Scenario::NoiseLevels,
            [("0", 0.0), ("1", 1.0), ("2", 2.0), ("3", 3.0)].iter().map(|&(n, s)| spec(n, 6, s)).collect(),
        ),
        "nested" => (Scenario::Nested, vec![spec("6", 6, 2.0), spec("3", 3, 2.0), spec("6*", 6, 4.0)]),
        other => return Err(Error::InvalidParameter(format!("unknown preset {other:?}"))),
    };
    let spec = ScenarioSpec {
        scenario,
        n_obs,
        datasets,
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub dataset: Dataset,
    pub truth: Partition,
}

/// Draws one dataset; the stream is keyed by the dataset name.
pub fn generate_one(spec: &DatasetSpec, n_obs: usize, master_seed: u64) -> Result<GeneratedDataset> {
    let k = spec.n_clusters;
    if k == 0 || n_obs % k != 0 {
        return Err(Error::InvalidParameter(format!("{n_obs} observations cannot form {k} equal clusters")));
    }
    let per_cluster = n_obs / k;
    let mut rng = seed::rng(seed::derive(master_seed, &[seed::fnv1a(spec.name.as_bytes())]));
    let labels: Vec<usize> = (0..n_obs).map(|i| i / per_cluster).collect();
    let mut values = DMatrix::zeros(n_obs, 2);
    for (i, &c) in labels.iter().enumerate() {
        let mean = (c + 1) as f64 * spec.separation;
        for j in 0..2 {
            let z: f64 = StandardNormal.sample(&mut rng);
            values[(i, j)] = mean + z;
        }
    }
    Ok(GeneratedDataset {
        dataset: Dataset::new(spec.name.clone(), values, default_ids(n_obs))?,
        truth: Partition::new(labels, k)?,
    })
}

pub fn generate(spec: &ScenarioSpec) -> Result<Vec<GeneratedDataset>> {
    spec.validate()?;
    spec.datasets.iter().map(|d| generate_one(d, spec.n_obs, spec.seed)).collect()
}
