//! Command-line front end. Exit codes: 0 on success, 1 for usage errors
//! (bad flags, malformed parameter values, invalid plans), 2 for failures
//! during execution (missing files, degenerate data, broken containers).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::clustering::{elbow_k, kmeans, match_states, ElbowResult};
use crate::connectivity::{
    lower_triangle, mtd_fc, phase_sync_fc, randcon_fc_direct, sliding_window_fc, FcMethod,
    FcParams,
};
use crate::convolution::{sample_gaussian_bank, Padding};
use crate::error::Error;
use crate::harness::plan::{ExperimentPlan, MetricKind};
use crate::harness::realdata::{realdata_pipeline, write_outcome, RealDataConfig};
use crate::harness::run::{crop_truth, kernel_size_study, run_plan};
use crate::harness::{preset, PRESET_NAMES};
use crate::metrics;
use crate::seed::derive_seed;
use crate::simulate::{generate_dataset, read_dataset, write_dataset, SimulationSpec};
use crate::timeseries::{load_csv, load_fc_series, save_fc_series, zscore_rows, CsvLayout};

#[derive(Parser)]
#[command(
    name = "randcon",
    version,
    about = "Dynamic functional connectivity via random convolutions, with baselines, \
             simulation, state clustering and experiment sweeps",
    arg_required_else_help = true
)]
struct Cli {
    /// Override the seed of whatever the subcommand runs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = auto). Falls back to RANDCON_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-subject dataset with known state dynamics.
    Simulate {
        /// Directory for manifest.json plus per-subject signal/label CSVs.
        #[arg(short, long)]
        out: PathBuf,
        /// Take the simulation settings from a named plan preset's base
        /// spec instead of the individual flags (`list` prints the names).
        #[arg(long, conflicts_with_all = ["states", "rois", "timepoints", "noise",
            "groups", "subjects_per_group", "gamma_shape", "gamma_scale"])]
        preset: Option<String>,
        #[arg(long, default_value_t = 4)]
        states: usize,
        #[arg(long, default_value_t = 90)]
        rois: usize,
        #[arg(long, default_value_t = 1200)]
        timepoints: usize,
        /// Observation noise standard deviation.
        #[arg(long, default_value_t = 0.6)]
        noise: f64,
        #[arg(long, default_value_t = 30)]
        groups: usize,
        #[arg(long, default_value_t = 20)]
        subjects_per_group: usize,
        #[arg(long, default_value_t = 10.0)]
        gamma_shape: f64,
        #[arg(long, default_value_t = 5.0)]
        gamma_scale: f64,
    },
    /// Estimate a dynamic connectivity series from one signal CSV.
    Estimate {
        /// Signal CSV (equivalently -i/--input).
        #[arg(value_name = "INPUT", required_unless_present = "input", conflicts_with = "input")]
        input_pos: Option<PathBuf>,
        #[arg(short, long)]
        input: Option<PathBuf>,
        /// Output container file (.fcs).
        #[arg(short, long)]
        out: PathBuf,
        /// randcon | sliding-window | mtd | phase-sync.
        #[arg(short, long, default_value = "randcon")]
        method: String,
        /// Kernel/window width in samples (mtd averages width-1 derivative
        /// frames, which lands it on the same frame grid).
        #[arg(long, default_value_t = 3)]
        width: usize,
        /// Window step; windowed methods only.
        #[arg(long, default_value_t = 1)]
        stride: usize,
        /// Bank size for randcon.
        #[arg(long, default_value_t = 40)]
        kernels: usize,
        /// same | valid (randcon only).
        #[arg(long, default_value = "same")]
        padding: String,
        /// rois-in-rows | rois-in-columns.
        #[arg(long, default_value = "rois-in-rows")]
        layout: String,
        /// Z-score each region over time before estimation.
        #[arg(long)]
        zscore: bool,
    },
    /// Cluster pooled connectivity frames into recurring states.
    Cluster {
        /// Connectivity containers, pooled in the order given.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Directory for clustering.json, centroids.csv, assignments.csv.
        #[arg(short, long)]
        out: PathBuf,
        /// Number of states; omit to select one from the inertia elbow.
        #[arg(long)]
        states: Option<usize>,
        #[arg(long, default_value_t = 2)]
        elbow_min: usize,
        #[arg(long, default_value_t = 8)]
        elbow_max: usize,
        #[arg(long, default_value_t = 100)]
        restarts: usize,
        #[arg(long, default_value_t = 20)]
        iters: usize,
    },
    /// Score clustered states against a simulated dataset's ground truth.
    Evaluate {
        /// Dataset directory written by `simulate`.
        #[arg(long)]
        dataset: PathBuf,
        /// Clustering directory written by `cluster`.
        #[arg(long)]
        clusters: PathBuf,
        /// Output file (evaluation.json).
        #[arg(short, long)]
        out: PathBuf,
        /// Comma-separated list of group-level metrics.
        #[arg(long, default_value = "ari,overlap-ratio,state-mse,state-cosine,sojourn-kl")]
        metrics: String,
    },
    /// Run an experiment plan (or a named preset) and write results tables.
    Sweep {
        /// Plan file (.toml or .json).
        #[arg(short, long, conflicts_with = "preset")]
        plan: Option<PathBuf>,
        /// Built-in plan name; see `--preset list`.
        #[arg(long)]
        preset: Option<String>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Compare kernel widths under valid padding (dwell/pattern metrics only).
    KernelStudy {
        #[arg(short, long, conflicts_with = "preset")]
        plan: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Full pipeline on recorded series: estimate, pool, cluster, summarize.
    Realdata {
        /// One signal CSV per subject; the file stem names the subject.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value = "randcon")]
        method: String,
        #[arg(long, default_value_t = 3)]
        width: usize,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, default_value_t = 2048)]
        kernels: usize,
        /// Skip per-region z-scoring.
        #[arg(long)]
        no_zscore: bool,
        /// Fix the state count instead of selecting it from the elbow.
        #[arg(long)]
        states: Option<usize>,
        #[arg(long, default_value_t = 2)]
        k_min: usize,
        #[arg(long, default_value_t = 8)]
        k_max: usize,
        /// Project pooled frames to this many components before clustering.
        #[arg(long)]
        pca: Option<usize>,
        /// CSV of `subject,group` pairs (two groups) for between-group tests.
        #[arg(long)]
        covariate: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        restarts: usize,
        #[arg(long, default_value_t = 20)]
        iters: usize,
        #[arg(long, default_value = "rois-in-rows")]
        layout: String,
    },
    /// Summarize a results table into per-metric tables and charts.
    Report {
        /// results.csv from `sweep` or `kernel-study`.
        #[arg(long)]
        results: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Also render SVG line charts.
        #[arg(long)]
        svg: bool,
    },
}

struct CliFailure {
    code: i32,
    message: String,
}

impl From<Error> for CliFailure {
    fn from(e: Error) -> Self {
        CliFailure { code: 2, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> CliFailure {
    CliFailure { code: 1, message: message.into() }
}

type CliResult<T> = std::result::Result<T, CliFailure>;

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    init_threads(cli.threads);
    match dispatch(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

/// Sizes the global worker pool: flag first, then RANDCON_THREADS, else the
/// library default. 0 also means the default.
fn init_threads(flag: Option<usize>) {
    let n = flag.or_else(|| {
        std::env::var("RANDCON_THREADS").ok().and_then(|v| v.parse().ok())
    });
    if let Some(n) = n {
        if n > 0 {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                eprintln!("warning: thread pool already initialized: {e}");
            }
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate {
            out,
            preset,
            states,
            rois,
            timepoints,
            noise,
            groups,
            subjects_per_group,
            gamma_shape,
            gamma_scale,
        } => {
            if wants_preset_list(preset.as_deref()) {
                return Ok(());
            }
            let spec = match preset.as_deref() {
                Some(name) => {
                    let base = crate::harness::preset(name).map_err(|e| usage(e.to_string()))?.base;
                    SimulationSpec { seed: cli.seed.unwrap_or(base.seed), ..base }
                }
                None => SimulationSpec {
                    n_states: states,
                    n_rois: rois,
                    n_timepoints: timepoints,
                    gamma_shape,
                    gamma_scale,
                    noise_sigma: noise,
                    n_groups: groups,
                    subjects_per_group,
                    seed: cli.seed.unwrap_or(42),
                },
            };
            spec.validate().map_err(|e| usage(e.to_string()))?;
            let dataset = generate_dataset(&spec)?;
            let manifest = write_dataset(&dataset, &out)?;
            println!("{}", manifest.display());
            Ok(())
        }
        Command::Estimate {
            input_pos,
            input,
            out,
            method,
            width,
            stride,
            kernels,
            padding,
            layout,
            zscore,
        } => {
            let input = input_pos.or(input).expect("clap requires one input form");
            let method = FcMethod::from_str(&method).map_err(|e| usage(e.to_string()))?;
            let padding = Padding::from_str(&padding).map_err(|e| usage(e.to_string()))?;
            let layout = parse_layout(&layout)?;
            if width < 2 {
                return Err(usage(format!("width must be at least 2, got {width}")));
            }
            if stride == 0 {
                return Err(usage("stride must be at least 1"));
            }
            let ts = load_csv(&input, layout)?;
            let ts = if zscore {
                let (z, constant) = zscore_rows(&ts);
                if !constant.is_empty() {
                    eprintln!("warning: {} constant region(s) left unscaled", constant.len());
                }
                z
            } else {
                ts
            };
            let fcs = match method {
                FcMethod::RandCon => {
                    let seed = derive_seed(cli.seed.unwrap_or(7), "bank", 0);
                    let bank = sample_gaussian_bank(kernels, width, seed)?;
                    randcon_fc_direct(&ts, &bank, padding)?
                }
                FcMethod::SlidingWindow => sliding_window_fc(&ts, width, stride)?,
                FcMethod::Mtd => mtd_fc(&ts, width - 1, stride)?,
                FcMethod::PhaseSync => phase_sync_fc(&ts)?,
            };
            if fcs.degenerate_pairs() > 0 {
                eprintln!(
                    "warning: {} degenerate correlation(s) were zeroed",
                    fcs.degenerate_pairs()
                );
            }
            save_fc_series(&fcs, &out)?;
            println!("{} ({} frames)", out.display(), fcs.n_frames());
            Ok(())
        }
        Command::Cluster { inputs, out, states, elbow_min, elbow_max, restarts, iters } => {
            cluster_cmd(&inputs, &out, states, (elbow_min, elbow_max), restarts, iters, cli.seed)
        }
        Command::Evaluate { dataset, clusters, out, metrics } => {
            let kinds = parse_metric_list(&metrics)?;
            evaluate_cmd(&dataset, &clusters, &out, &kinds)
        }
        Command::Sweep { plan, preset, out } => {
            if wants_preset_list(preset.as_deref()) {
                return Ok(());
            }
            let plan = load_plan(plan.as_deref(), preset.as_deref(), cli.seed)?;
            let manifest = run_plan(&plan, &out)?;
            report_failures(&manifest.failures);
            println!("{}", out.join("manifest.json").display());
            Ok(())
        }
        Command::KernelStudy { plan, preset, out } => {
            if wants_preset_list(preset.as_deref()) {
                return Ok(());
            }
            let plan = load_plan(plan.as_deref(), preset.as_deref(), cli.seed)?;
            let manifest = kernel_size_study(&plan, &out)
                .map_err(|e| match e {
                    // Off-contract study plans are usage errors.
                    Error::Parameter(_) => usage(e.to_string()),
                    other => other.into(),
                })?;
            report_failures(&manifest.failures);
            println!("{}", out.join("manifest.json").display());
            Ok(())
        }
        Command::Realdata {
            inputs,
            out,
            method,
            width,
            stride,
            kernels,
            no_zscore,
            states,
            k_min,
            k_max,
            pca,
            covariate,
            restarts,
            iters,
            layout,
        } => {
            let config = RealDataConfig {
                method: FcMethod::from_str(&method).map_err(|e| usage(e.to_string()))?,
                width,
                stride,
                kernel_count: kernels,
                zscore: !no_zscore,
                k_range: (k_min, k_max),
                fixed_k: states,
                pca_dim: pca,
                n_restarts: restarts,
                max_iters: iters,
                seed: cli.seed.unwrap_or(7),
            };
            config.validate().map_err(|e| usage(e.to_string()))?;
            let layout = parse_layout(&layout)?;
            let covariate = covariate.as_deref().map(load_covariate).transpose()?;
            let mut subjects = Vec::with_capacity(inputs.len());
            for path in &inputs {
                let name = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| usage(format!("cannot name subject from {}", path.display())))?;
                subjects.push((name.to_string(), load_csv(path, layout)?));
            }
            let outcome = realdata_pipeline(&subjects, &config, covariate.as_ref())?;
            write_outcome(&outcome, &out)?;
            println!("{}", out.join("outcome.json").display());
            Ok(())
        }
        Command::Report { results, out, svg } => {
            crate::report::report(&results, &out, svg)?;
            println!("{}", out.display());
            Ok(())
        }
    }
}

fn parse_layout(s: &str) -> CliResult<CsvLayout> {
    match s {
        "rois-in-rows" => Ok(CsvLayout::RoisInRows),
        "rois-in-columns" => Ok(CsvLayout::RoisInColumns),
        other => Err(usage(format!(
            "unknown layout {other:?}, expected rois-in-rows|rois-in-columns"
        ))),
    }
}

fn parse_metric_list(s: &str) -> CliResult<Vec<MetricKind>> {
    let mut kinds = Vec::new();
    for token in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let kind = MetricKind::from_str(token).map_err(|e| usage(e.to_string()))?;
        if kind.is_per_subject() {
            return Err(usage(format!(
                "'{token}' is a per-subject metric; it needs the connectivity series, use `sweep`"
            )));
        }
        if !kinds.contains(&kind) {
            kinds.push(kind);
        }
    }
    if kinds.is_empty() {
        return Err(usage("no metrics requested"));
    }
    Ok(kinds)
}

fn load_plan(
    plan: Option<&Path>,
    preset_name: Option<&str>,
    seed: Option<u64>,
) -> CliResult<ExperimentPlan> {
    let mut plan = match (plan, preset_name) {
        // A missing or malformed plan file is caught before any compute, so
        // it is a usage error, not a runtime failure.
        (Some(path), None) => ExperimentPlan::load(path).map_err(|e| usage(e.to_string()))?,
        (None, Some(name)) => preset(name).map_err(|e| usage(e.to_string()))?,
        (None, None) => return Err(usage("one of --plan or --preset is required")),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    if let Some(s) = seed {
        plan.seed = s;
    }
    plan.validate().map_err(|e| usage(e.to_string()))?;
    Ok(plan)
}

/// `--preset list` prints the catalog instead of running anything.
fn wants_preset_list(preset: Option<&str>) -> bool {
    if preset == Some("list") {
        println!("{}", PRESET_NAMES.join("\n"));
        true
    } else {
        false
    }
}

fn report_failures(failures: &[crate::harness::run::CellFailure]) {
    for f in failures {
        eprintln!("warning: cell {} failed: {}", f.cell, f.error);
    }
}

/// `subject,group` rows; a leading `subject,group` header line is skipped.
fn load_covariate(path: &Path) -> CliResult<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.eq_ignore_ascii_case("subject,group")) {
            continue;
        }
        let (subject, group) = line.split_once(',').ok_or_else(|| {
            usage(format!("{}:{}: expected `subject,group`", path.display(), i + 1))
        })?;
        if map.insert(subject.trim().to_string(), group.trim().to_string()).is_some() {
            return Err(usage(format!(
                "{}:{}: duplicate subject '{}'",
                path.display(),
                i + 1,
                subject.trim()
            )));
        }
    }
    if map.is_empty() {
        return Err(usage(format!("{} lists no subjects", path.display())));
    }
    Ok(map)
}

// ---------------------------------------------------------------------------
// cluster: pool containers, fit, persist the model.

#[derive(Serialize, Deserialize)]
struct ClusterInputDoc {
    file: String,
    method: FcMethod,
    n_frames: usize,
    n_rois: usize,
    params: FcParams,
}

#[derive(Serialize, Deserialize)]
struct ClusteringDoc {
    n_states: usize,
    db_index: f64,
    inertia: f64,
    n_restarts: usize,
    winning_restart: usize,
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    elbow: Option<ElbowResult>,
    inputs: Vec<ClusterInputDoc>,
}

fn cluster_cmd(
    inputs: &[PathBuf],
    out: &Path,
    states: Option<usize>,
    elbow_range: (usize, usize),
    restarts: usize,
    iters: usize,
    seed: Option<u64>,
) -> CliResult<()> {
    if let Some(m) = states {
        if m < 2 {
            return Err(usage(format!("need at least 2 states, got {m}")));
        }
    }
    let seed = seed.unwrap_or(7);
    let mut docs = Vec::with_capacity(inputs.len());
    let mut parts: Vec<Array2<f64>> = Vec::with_capacity(inputs.len());
    let mut n_rois = None;
    for path in inputs {
        let fcs = load_fc_series(path)?;
        if let Some(n) = n_rois {
            if fcs.n_rois() != n {
                return Err(usage(format!(
                    "{} has {} regions, previous inputs had {n}",
                    path.display(),
                    fcs.n_rois()
                )));
            }
        } else {
            n_rois = Some(fcs.n_rois());
        }
        docs.push(ClusterInputDoc {
            file: path
                .file_name()
                .and_then(|s| s.to_str())
                .unwrap_or("input")
                .to_string(),
            method: fcs.method(),
            n_frames: fcs.n_frames(),
            n_rois: fcs.n_rois(),
            params: fcs.params().clone(),
        });
        parts.push(fcs.lower_triangles());
    }
    let views: Vec<_> = parts.iter().map(|a| a.view()).collect();
    let pooled = ndarray::concatenate(Axis(0), &views)
        .map_err(|e| Error::dim(format!("pooling failed: {e}")))?;
    drop(views);
    drop(parts);

    let (m, elbow) = match states {
        Some(m) => (m, None),
        None => {
            let (lo, hi) = elbow_range;
            let result = elbow_k(pooled.view(), lo, hi, derive_seed(seed, "elbow", 0))
                .map_err(|e| match e {
                    Error::Parameter(_) => usage(e.to_string()),
                    other => other.into(),
                })?;
            (result.selected_k, Some(result))
        }
    };
    let cluster = kmeans(pooled.view(), m, restarts, iters, derive_seed(seed, "cluster", 0))?;

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let centroids_path = out.join("centroids.csv");
    {
        let file = std::fs::File::create(&centroids_path).map_err(|e| Error::io(&centroids_path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        for row in cluster.centroids.rows() {
            let rec: Vec<f64> = row.iter().copied().collect();
            writer.serialize(rec).map_err(|e| Error::format(e.to_string()))?;
        }
        writer.flush().map_err(|e| Error::io(&centroids_path, e))?;
    }
    let assignments_path = out.join("assignments.csv");
    {
        let file =
            std::fs::File::create(&assignments_path).map_err(|e| Error::io(&assignments_path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        writer
            .write_record(["input_index", "file", "frame", "label"])
            .map_err(|e| Error::format(e.to_string()))?;
        let mut offset = 0;
        for (idx, doc) in docs.iter().enumerate() {
            for frame in 0..doc.n_frames {
                writer
                    .write_record([
                        &idx.to_string(),
                        &doc.file,
                        &frame.to_string(),
                        &cluster.labels[offset + frame].to_string(),
                    ])
                    .map_err(|e| Error::format(e.to_string()))?;
            }
            offset += doc.n_frames;
        }
        writer.flush().map_err(|e| Error::io(&assignments_path, e))?;
    }
    let doc = ClusteringDoc {
        n_states: m,
        db_index: cluster.db_index,
        inertia: cluster.inertia,
        n_restarts: cluster.n_restarts,
        winning_restart: cluster.winning_restart,
        seed: cluster.seed,
        elbow,
        inputs: docs,
    };
    let doc_path = out.join("clustering.json");
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::format(e.to_string()))?;
    std::fs::write(&doc_path, text + "\n").map_err(|e| Error::io(&doc_path, e))?;
    println!("{}", doc_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate: clustered states vs simulated ground truth.

#[derive(Serialize)]
struct Evaluation {
    metrics: BTreeMap<String, f64>,
    permutation: Vec<usize>,
    n_subjects: usize,
    n_frames_total: usize,
}

/// Frame grid of a recorded series, reconstructed from its stored
/// parameters: full-length series map one to one, windowed ones take the
/// window-center label.
fn input_truth(doc: &ClusterInputDoc, labels: &[usize]) -> crate::error::Result<Vec<usize>> {
    if doc.n_frames == labels.len() {
        return Ok(labels.to_vec());
    }
    let width = doc
        .params
        .width
        .or(doc.params.avg_window.map(|a| a + 1))
        .ok_or_else(|| {
            Error::format(format!("input {} records no window geometry", doc.file))
        })?;
    let stride = doc.params.stride.unwrap_or(1);
    let last = (doc.n_frames - 1) * stride + width;
    if last > labels.len() {
        return Err(Error::dim(format!(
            "input {}: {} frames of width {width} stride {stride} exceed {} time points",
            doc.file,
            doc.n_frames,
            labels.len()
        )));
    }
    Ok(crop_truth(labels, doc.n_frames, width, stride))
}

fn evaluate_cmd(
    dataset_dir: &Path,
    clusters_dir: &Path,
    out: &Path,
    kinds: &[MetricKind],
) -> CliResult<()> {
    let dataset = read_dataset(dataset_dir)?;
    let doc_path = clusters_dir.join("clustering.json");
    let text = std::fs::read_to_string(&doc_path).map_err(|e| Error::io(&doc_path, e))?;
    let doc: ClusteringDoc = serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("{}: {e}", doc_path.display())))?;
    if doc.inputs.len() != dataset.subjects().len() {
        return Err(usage(format!(
            "clustering pooled {} inputs but the dataset has {} subjects",
            doc.inputs.len(),
            dataset.subjects().len()
        )));
    }

    let centroids_path = clusters_dir.join("centroids.csv");
    let centroids = read_matrix(&centroids_path, doc.n_states)?;
    let labels = read_assignments(&clusters_dir.join("assignments.csv"))?;
    let total: usize = doc.inputs.iter().map(|d| d.n_frames).sum();
    if labels.len() != total {
        return Err(CliFailure::from(Error::format(format!(
            "assignments list {} frames, inputs sum to {total}",
            labels.len()
        ))));
    }

    // Ground truth on each input's frame grid, in pooling order.
    let mut truth_per_input = Vec::with_capacity(doc.inputs.len());
    for (input, subject) in doc.inputs.iter().zip(dataset.subjects()) {
        truth_per_input.push(input_truth(input, subject.labels.labels())?);
    }
    let pooled_truth: Vec<usize> = truth_per_input.iter().flatten().copied().collect();

    let spec = dataset.spec();
    let d = spec.n_rois * (spec.n_rois - 1) / 2;
    let mut truth_vectors = Array2::zeros((spec.n_states, d));
    for (i, fc) in dataset.pattern_fcs().iter().enumerate() {
        let v = lower_triangle(fc.view());
        truth_vectors.row_mut(i).assign(&ndarray::ArrayView1::from(&v[..]));
    }
    let matching = match_states(centroids.view(), truth_vectors.view())?;

    let mut results = BTreeMap::new();
    for kind in kinds {
        let value = match kind {
            MetricKind::Ari => metrics::ari(&labels, &pooled_truth)?,
            MetricKind::OverlapRatio => metrics::overlap_ratio(&labels, &pooled_truth, &matching)?,
            MetricKind::StateMse => {
                let pairs =
                    metrics::matched_pairs(centroids.view(), truth_vectors.view(), &matching)?;
                metrics::state_mse(&pairs)?
            }
            MetricKind::StateCosine => {
                let pairs =
                    metrics::matched_pairs(centroids.view(), truth_vectors.view(), &matching)?;
                metrics::state_cosine(&pairs)?
            }
            MetricKind::SojournKl => {
                let mut totals = 0.0;
                let mut offset = 0;
                for truth in &truth_per_input {
                    let slice = &labels[offset..offset + truth.len()];
                    offset += truth.len();
                    let mapped: Vec<usize> =
                        slice.iter().map(|&l| matching.permutation[l]).collect();
                    totals += metrics::sojourn_kl(&mapped, truth, spec.n_states)?;
                }
                totals / truth_per_input.len() as f64
            }
            MetricKind::FcVariability | MetricKind::CentroidSimilarity => {
                unreachable!("rejected while parsing the metric list")
            }
        };
        results.insert(kind.as_str().to_string(), value);
    }

    let evaluation = Evaluation {
        metrics: results,
        permutation: matching.permutation.clone(),
        n_subjects: dataset.subjects().len(),
        n_frames_total: total,
    };
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let text =
        serde_json::to_string_pretty(&evaluation).map_err(|e| Error::format(e.to_string()))?;
    std::fs::write(out, text + "\n").map_err(|e| Error::io(out, e))?;
    println!("{}", out.display());
    Ok(())
}

fn read_matrix(path: &Path, expected_rows: usize) -> CliResult<Array2<f64>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(e.to_string()))?;
        let mut row = Vec::with_capacity(record.len());
        for (j, cell) in record.iter().enumerate() {
            row.push(cell.parse::<f64>().map_err(|_| Error::ParseCell {
                row: i + 1,
                col: j + 1,
                reason: format!("{cell:?} is not a number"),
            })?);
        }
        rows.push(row);
    }
    if rows.len() != expected_rows {
        return Err(CliFailure::from(Error::dim(format!(
            "{} has {} rows, expected {expected_rows}",
            path.display(),
            rows.len()
        ))));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(CliFailure::from(Error::dim(format!("{} is ragged", path.display()))));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((expected_rows, d), flat)
        .map_err(|e| CliFailure::from(Error::dim(e.to_string())))
}

fn read_assignments(path: &Path) -> CliResult<Vec<usize>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(e.to_string()))?;
        let cell = record
            .get(3)
            .ok_or_else(|| Error::format(format!("{}: row {} has no label", path.display(), i + 2)))?;
        labels.push(cell.parse::<usize>().map_err(|_| Error::ParseCell {
            row: i + 2,
            col: 4,
            reason: format!("{cell:?} is not a state label"),
        })?);
    }
    Ok(labels)
}
