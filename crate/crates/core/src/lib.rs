//! Integrative clustering of multiple datasets.
//!
//! Two strategies are provided:
//!
//! * **COCA** (cluster-of-clusters analysis): cluster each dataset, one-hot
//!   encode the cluster memberships, and run consensus clustering on the
//!   resulting matrix of clusters.
//! * **KLIC** (kernel learning integrative clustering): treat the consensus
//!   matrix of each dataset as a kernel and fuse the kernels with (localized)
//!   multiple kernel k-means, learning how much each dataset contributes.
//!
//! Supporting modules cover base clusterers, evaluation metrics, a synthetic
//! data generator and a reproducible experiment runner.

pub mod cluster;
pub mod coca;
pub mod consensus;
pub mod data;
pub mod error;
pub mod experiment;
pub mod io;
pub mod klic;
mod linalg;
pub mod metrics;
pub mod mkkm;
pub mod seed;
pub mod simgen;

pub use data::{load_dataset, validate_kernel, CsvLayout, Dataset, KernelMatrix, Partition, WeightState};
pub use error::{Error, Result};
