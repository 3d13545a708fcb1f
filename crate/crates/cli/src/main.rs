//! `klic` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use klic::coca::{build_moc_aligned, coca, select_kbar_silhouette};
use klic::consensus::{consensus_matrix, ConsensusConfig};
use klic::data::{load_dataset, validate_kernel, CsvLayout, KernelMatrix};
use klic::experiment::{run_experiment, write_report, ExperimentConfig};
use klic::io;
use klic::klic::{consensus_kernels, klic_from_kernels, KlicParams};
use klic::metrics::{ari, average_silhouette, cophenetic_correlation};
use klic::mkkm::MkkmMode;
use klic::simgen;

#[derive(Parser)]
#[command(name = "klic", version, about = "Integrative clustering with KLIC and COCA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the subcommands that produce files.
#[derive(Args, Clone)]
struct Common {
    /// Master seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone, Copy)]
struct Layout {
    /// Input CSV files have no header row.
    #[arg(long)]
    no_header: bool,
    /// Input CSV files have no leading id column.
    #[arg(long)]
    no_id_column: bool,
}

impl Layout {
    fn csv(self) -> CsvLayout {
        CsvLayout {
            has_header: !self.no_header,
            id_column: !self.no_id_column,
        }
    }
}

#[derive(Args, Clone, Copy)]
struct Resampling {
    /// Number of resamples H [default: 100].
    #[arg(long)]
    resamples: Option<usize>,
    /// Fraction of items drawn per resample [default: 0.8].
    #[arg(long)]
    item_fraction: Option<f64>,
    /// Fraction of features drawn per resample [default: 1.0].
    #[arg(long)]
    feature_fraction: Option<f64>,
}

impl Resampling {
    /// Flags win over the settings file, which wins over the defaults.
    fn config(self, k: usize, seed: u64, file: &Settings) -> ConsensusConfig {
        let h = self.resamples.or(file.n_resamples).unwrap_or(klic::experiment::DESK_RESAMPLES);
        let mut cc = ConsensusConfig::new(k, h, seed);
        if let Some(p) = self.item_fraction.or(file.item_fraction) {
            cc.item_fraction = p;
        }
        if let Some(q) = self.feature_fraction.or(file.feature_fraction) {
            cc.feature_fraction = q;
        }
        cc
    }
}

/// `--config` file for `simgen`, `consensus` and `coca`.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct Settings {
    seed: Option<u64>,
    preset: Option<String>,
    n_obs: Option<usize>,
    n_resamples: Option<usize>,
    item_fraction: Option<f64>,
    feature_fraction: Option<f64>,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn settings(common: &Common) -> Result<(Settings, u64)> {
    let file: Settings = match &common.config {
        Some(path) => read_toml(path)?,
        None => Settings::default(),
    };
    let seed = common.seed.or(file.seed).unwrap_or(0);
    Ok((file, seed))
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario: one CSV per dataset plus truth.csv.
    Simgen {
        #[command(flatten)]
        common: Common,
        /// Preset name: similar, noise or nested [default: similar].
        #[arg(long)]
        preset: Option<String>,
        /// Number of observations (defaults to the desk-scale size).
        #[arg(long)]
        n_obs: Option<usize>,
        /// Use the full-size number of observations.
        #[arg(long)]
        paper_scale: bool,
    },
    /// Consensus clustering of one dataset; writes consensus.csv and pair_counts.csv.
    Consensus {
        #[command(flatten)]
        common: Common,
        /// Input data CSV.
        #[arg(long)]
        data: PathBuf,
        /// Number of clusters for the base clusterer.
        #[arg(long)]
        k: usize,
        #[command(flatten)]
        resampling: Resampling,
        #[command(flatten)]
        layout: Layout,
    },
    /// Cluster-of-clusters analysis of per-dataset label files.
    Coca {
        #[command(flatten)]
        common: Common,
        /// Label files (`id,label`), one per dataset.
        #[arg(long = "labels", required = true)]
        labels: Vec<PathBuf>,
        /// Fixed number of final clusters.
        #[arg(long, conflicts_with = "k_max")]
        k: Option<usize>,
        /// Choose the number of clusters in 2..=k_max by silhouette.
        #[arg(long)]
        k_max: Option<usize>,
        #[command(flatten)]
        resampling: Resampling,
    },
    /// Kernel learning integrative clustering; writes labels.csv, weights.csv, silhouettes.csv.
    Klic(KlicArgs),
    /// Run a simulation experiment described by --config.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Full-size replicates, resamples and observations.
        #[arg(long)]
        paper_scale: bool,
        /// Also write long-format plot_data.csv.
        #[arg(long)]
        plot_data: bool,
        /// Maximum number of worker threads (0 = all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Evaluation metrics.
    #[command(subcommand)]
    Metrics(MetricsCommand),
}

#[derive(Args)]
struct KlicArgs {
    #[command(flatten)]
    common: Common,
    /// Data CSV files (one consensus kernel per file).
    #[arg(long = "data")]
    data: Vec<PathBuf>,
    /// Cluster count for the consensus step of each data file, comma separated.
    #[arg(long, value_delimiter = ',')]
    dataset_k: Vec<usize>,
    /// Precomputed kernel CSVs (square, ids in header and first column).
    #[arg(long = "kernel")]
    kernels: Vec<PathBuf>,
    /// Largest candidate cluster count.
    #[arg(long, conflicts_with = "k")]
    k_max: Option<usize>,
    /// Fixed cluster count.
    #[arg(long)]
    k: Option<usize>,
    /// Weighting: localized or global.
    #[arg(long)]
    mode: Option<String>,
    #[command(flatten)]
    resampling: Resampling,
    #[command(flatten)]
    layout: Layout,
}

#[derive(Subcommand)]
enum MetricsCommand {
    /// Adjusted Rand index between two label files.
    Ari {
        /// First label file (`id,label`).
        a: PathBuf,
        /// Second label file with the same ids.
        b: PathBuf,
    },
    /// Cophenetic correlation of a kernel CSV.
    Cophenetic {
        /// Square kernel CSV with ids in the header and first column.
        kernel: PathBuf,
    },
    /// Average silhouette of a label file under a dissimilarity CSV.
    Silhouette {
        /// Label file (`id,label`).
        labels: PathBuf,
        /// Square dissimilarity CSV with matching ids.
        dissimilarity: PathBuf,
    },
}

/// `klic --config` file.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct KlicFile {
    #[serde(default)]
    mode: Option<String>,
    #[serde(default)]
    k: Option<usize>,
    #[serde(default)]
    k_max: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    n_resamples: Option<usize>,
    #[serde(default)]
    item_fraction: Option<f64>,
    #[serde(default)]
    feature_fraction: Option<f64>,
    #[serde(default = "yes")]
    has_header: bool,
    #[serde(default = "yes")]
    id_column: bool,
    #[serde(default)]
    inputs: Vec<KlicInput>,
    #[serde(default)]
    kernels: Vec<KernelInput>,
}

fn yes() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KlicInput {
    path: PathBuf,
    k: usize,
    #[serde(default)]
    name: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelInput {
    path: PathBuf,
    #[serde(default)]
    name: Option<String>,
}

fn out_dir(common: &Common) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "input".into(), |s| s.to_string_lossy().into_owned())
}

/// File name for a dataset name such as `6*`.
fn file_name(name: &str) -> String {
    let safe: String = name
        .chars()
        .flat_map(|c| match c {
            '*' => "star".chars().collect::<Vec<_>>(),
            c if c.is_ascii_alphanumeric() || c == '-' || c == '_' => vec![c],
            _ => vec!['_'],
        })
        .collect();
    format!("{safe}.csv")
}

fn simgen_cmd(common: &Common, preset: Option<&str>, n_obs: Option<usize>, paper_scale: bool) -> Result<()> {
    let (file, seed) = settings(common)?;
    let n = if paper_scale {
        simgen::PAPER_N_OBS
    } else {
        n_obs.or(file.n_obs).unwrap_or(simgen::DEFAULT_N_OBS)
    };
    let preset = preset.or(file.preset.as_deref()).unwrap_or("similar");
    let spec = simgen::preset(preset, n, seed)?;
    let generated = simgen::generate(&spec)?;
    let out = out_dir(common);
    let ids = generated[0].dataset.ids().to_vec();
    for (d, g) in spec.datasets.iter().zip(&generated) {
        io::write_table(
            &out.join(file_name(&d.name)),
            &ids,
            &["x1".to_string(), "x2".to_string()],
            g.dataset.values(),
        )?;
    }
    let mut header = vec!["id"];
    header.extend(spec.datasets.iter().map(|d| d.name.as_str()));
    let rows = (0..n).map(|i| {
        let mut row = vec![ids[i].clone()];
        row.extend(generated.iter().map(|g| (g.truth.labels()[i] + 1).to_string()));
        row
    });
    io::write_rows(&out.join("truth.csv"), &header, rows)?;
    Ok(())
}

fn consensus_cmd(common: &Common, data: &Path, k: usize, resampling: Resampling, layout: Layout) -> Result<()> {
    let dataset = load_dataset(data, layout.csv())?;
    let (file, seed) = settings(common)?;
    let c = consensus_matrix(&dataset, &resampling.config(k, seed, &file))?;
    let out = out_dir(common);
    io::write_square_matrix(&out.join("consensus.csv"), dataset.ids(), c.kernel.entries())?;
    io::write_square_matrix(&out.join("pair_counts.csv"), dataset.ids(), &c.pair_counts)?;
    Ok(())
}

fn coca_cmd(common: &Common, labels: &[PathBuf], k: Option<usize>, k_max: Option<usize>, resampling: Resampling) -> Result<()> {
    let labelled = labels
        .iter()
        .map(|p| io::read_labels(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let moc = build_moc_aligned(&labelled)?;
    let out = out_dir(common);
    let (file, seed) = settings(common)?;
    let cc = resampling.config(2, seed, &file);
    io::write_table(&out.join("moc.csv"), &moc.ids, &moc.column_names(), &moc.entries)?;
    let partition = match (k, k_max) {
        (Some(k), None) => {
            let r = coca(&moc, k, &cc)?;
            io::write_square_matrix(&out.join("consensus.csv"), &moc.ids, r.consensus.kernel.entries())?;
            r.partition
        }
        (None, Some(k_max)) => {
            if k_max < 2 {
                bail!("--k-max must be at least 2");
            }
            let ks: Vec<usize> = (2..=k_max).collect();
            let sel = select_kbar_silhouette(&moc, &ks, &cc)?;
            io::write_rows(
                &out.join("silhouettes.csv"),
                &["k", "silhouette"],
                sel.silhouettes.iter().map(|(k, s)| vec![k.to_string(), s.to_string()]),
            )?;
            sel.partition
        }
        _ => bail!("give exactly one of --k or --k-max"),
    };
    io::write_labels(&out.join("labels.csv"), &moc.ids, &partition)?;
    Ok(())
}

fn parse_mode(mode: Option<&str>) -> Result<MkkmMode> {
    match mode.unwrap_or("localized") {
        "localized" => Ok(MkkmMode::Localized),
        "global" => Ok(MkkmMode::Global),
        other => bail!("unknown mode {other:?} (expected localized or global)"),
    }
}

fn klic_cmd(args: &KlicArgs) -> Result<()> {
    let file = match &args.common.config {
        Some(path) => {
            let mut f: KlicFile = read_toml(path)?;
            let base = path.parent().unwrap_or(Path::new(""));
            for i in &mut f.inputs {
                i.path = base.join(&i.path);
            }
            for k in &mut f.kernels {
                k.path = base.join(&k.path);
            }
            f
        }
        None => KlicFile {
            has_header: true,
            id_column: true,
            ..KlicFile::default()
        },
    };
    let seed = args.common.seed.or(file.seed).unwrap_or(0);
    let mode = parse_mode(args.mode.as_deref().or(file.mode.as_deref()))?;
    let layout = if args.common.config.is_some() {
        CsvLayout {
            has_header: file.has_header && !args.layout.no_header,
            id_column: file.id_column && !args.layout.no_id_column,
        }
    } else {
        args.layout.csv()
    };
    let cc = args.resampling.config(
        2,
        seed,
        &Settings {
            n_resamples: file.n_resamples,
            item_fraction: file.item_fraction,
            feature_fraction: file.feature_fraction,
            ..Settings::default()
        },
    );

    let mut inputs: Vec<(String, PathBuf, usize)> = file
        .inputs
        .iter()
        .map(|i| (i.name.clone().unwrap_or_else(|| stem(&i.path)), i.path.clone(), i.k))
        .collect();
    if !args.data.is_empty() {
        if args.dataset_k.len() != args.data.len() {
            bail!("--dataset-k needs one value per --data file");
        }
        inputs.extend(args.data.iter().zip(&args.dataset_k).map(|(p, &k)| (stem(p), p.clone(), k)));
    }
    let mut names: Vec<String> = inputs.iter().map(|(n, _, _)| n.clone()).collect();
    let datasets = inputs
        .iter()
        .map(|(name, path, _)| {
            let d = load_dataset(path, layout).with_context(|| format!("reading {}", path.display()))?;
            Ok(klic::Dataset::new(name.clone(), d.values().clone(), d.ids().to_vec())?)
        })
        .collect::<Result<Vec<_>>>()?;
    let dataset_k: Vec<usize> = inputs.iter().map(|(_, _, k)| *k).collect();
    let mut kernels: Vec<KernelMatrix> =
        if datasets.is_empty() { Vec::new() } else { consensus_kernels(&datasets, &dataset_k, &cc)? };

    let mut kernel_inputs: Vec<(String, PathBuf)> =
        file.kernels.iter().map(|k| (k.name.clone().unwrap_or_else(|| stem(&k.path)), k.path.clone())).collect();
    kernel_inputs.extend(args.kernels.iter().map(|p| (stem(p), p.clone())));
    for (name, path) in kernel_inputs {
        let (ids, m) = io::read_square_matrix(&path).with_context(|| format!("reading {}", path.display()))?;
        kernels.push(validate_kernel(m, Some(ids)).with_context(|| format!("kernel {}", path.display()))?);
        names.push(name);
    }
    if kernels.is_empty() {
        bail!("no inputs: give --data/--kernel or a --config with inputs");
    }

    let params = match (args.k.or(file.k), args.k_max.or(file.k_max)) {
        (Some(k), None) => KlicParams::fixed(k, mode, seed),
        (None, Some(k_max)) => KlicParams::up_to(k_max, mode, seed)?,
        (None, None) => KlicParams::up_to(6, mode, seed)?,
        (Some(_), Some(_)) => bail!("give k or k_max, not both"),
    };
    let result = klic_from_kernels(&kernels, &params)?;
    let out = out_dir(&args.common);
    let ids = kernels[0].ids().to_vec();
    io::write_labels(&out.join("labels.csv"), &ids, &result.partition)?;
    io::write_weights(&out.join("weights.csv"), &ids, &names, &result.weights)?;
    io::write_rows(
        &out.join("silhouettes.csv"),
        &["k", "silhouette"],
        result.silhouettes.iter().map(|(k, s)| vec![k.to_string(), s.to_string()]),
    )?;
    println!("best k: {}", result.best_k);
    Ok(())
}

fn experiment_cmd(common: &Common, paper_scale: bool, plot_data: bool, jobs: Option<usize>) -> Result<ExitCode> {
    let Some(path) = &common.config else {
        bail!("experiment needs --config <file>");
    };
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    config.paper_scale |= paper_scale;
    config.plot_data |= plot_data;
    if let Some(j) = jobs {
        config.jobs = j;
    }
    let report = run_experiment(&config)?;
    write_report(&report, &out_dir(common), config.plot_data)?;
    if report.failed() {
        eprintln!("{} run(s) failed; see errors.csv", report.errors.len());
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn metrics_cmd(cmd: &MetricsCommand) -> Result<()> {
    match cmd {
        MetricsCommand::Ari { a, b } => {
            let (ids_a, pa) = io::read_labels(a)?;
            let (ids_b, pb) = io::read_labels(b)?;
            klic::data::check_aligned(&ids_a, &ids_b)?;
            println!("{}", ari(&pa, &pb)?);
        }
        MetricsCommand::Cophenetic { kernel } => {
            let (ids, m) = io::read_square_matrix(kernel)?;
            println!("{}", cophenetic_correlation(&validate_kernel(m, Some(ids))?)?);
        }
        MetricsCommand::Silhouette { labels, dissimilarity } => {
            let (ids, p) = io::read_labels(labels)?;
            let (d_ids, d) = io::read_square_matrix(dissimilarity)?;
            klic::data::check_aligned(&ids, &d_ids)?;
            println!("{}", average_silhouette(&p, &d)?);
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Simgen {
            common,
            preset,
            n_obs,
            paper_scale,
        } => simgen_cmd(common, preset.as_deref(), *n_obs, *paper_scale)?,
        Command::Consensus {
            common,
            data,
            k,
            resampling,
            layout,
        } => consensus_cmd(common, data, *k, *resampling, *layout)?,
        Command::Coca {
            common,
            labels,
            k,
            k_max,
            resampling,
        } => coca_cmd(common, labels, *k, *k_max, *resampling)?,
        Command::Klic(args) => klic_cmd(args)?,
        Command::Experiment {
            common,
            paper_scale,
            plot_data,
            jobs,
        } => return experiment_cmd(common, *paper_scale, *plot_data, *jobs),
        Command::Metrics(m) => metrics_cmd(m)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
