//! Plan execution: dataset generation, per-method FC estimation, per-group
//! clustering, metric evaluation, and deterministic artifact emission.
//!
//! Every cell (sweep value x group x method) derives its own seed chain from
//! the plan's master seed, so any cell can be re-run in isolation and the
//! whole output tree is byte-identical across reruns and thread counts. A
//! failing cell is recorded in the manifest and the run continues.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::clustering::{kmeans, match_states};
use crate::connectivity::{
    lower_triangle, mtd_fc, phase_sync_fc, randcon_fc_direct, sliding_window_fc, FcMethod,
    FcSeries,
};
use crate::convolution::{sample_gaussian_bank, KernelBank, Padding};
use crate::error::{Error, Result};
use crate::harness::plan::{EstimatorParams, ExperimentPlan, MetricKind, Sweep};
use crate::metrics;
use crate::seed::derive_seed;
use crate::simulate::{
    add_noise, generate_state_patterns, generate_subject, pattern_seed, SimulatedSubject,
    SimulationSpec, StatePattern,
};
use crate::timeseries::RoiTimeSeries;

/// One row of the long-format results table. `subject` is empty for
/// group-level metrics and the global subject index for per-subject ones.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct ResultRow {
    pub sweep_parameter: String,
    pub sweep_value: String,
    pub group: usize,
    pub subject: String,
    pub method: String,
    pub metric: String,
    pub value: f64,
}

/// A cell that failed and why; the rest of the run is unaffected.
#[derive(Debug, Clone, Serialize)]
pub struct CellFailure {
    pub cell: String,
    pub error: String,
}

/// Execution record: the resolved plan, every derived stage seed, content
/// hashes of every emitted file, failures, and degenerate-correlation
/// counters. Wall-clock timings are kept out of the serialized form so a
/// re-run writes a byte-identical tree.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub plan: ExperimentPlan,
    pub seeds: BTreeMap<String, u64>,
    pub outputs: BTreeMap<String, String>,
    pub failures: Vec<CellFailure>,
    pub degenerate_events: BTreeMap<String, u64>,
    #[serde(skip)]
    pub stage_seconds: BTreeMap<String, f64>,
}

impl RunManifest {
    fn new(plan: ExperimentPlan) -> RunManifest {
        RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            plan,
            seeds: BTreeMap::new(),
            outputs: BTreeMap::new(),
            failures: Vec::new(),
            degenerate_events: BTreeMap::new(),
            stage_seconds: BTreeMap::new(),
        }
    }

    /// Absolute path of the serialized manifest inside `out_dir`.
    pub fn path_in(out_dir: &Path) -> PathBuf {
        out_dir.join("manifest.json")
    }
}

pub(crate) fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::format(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Runs every cell of the plan and writes `results.csv`, `summary.json` and
/// `manifest.json` into `out_dir`.
pub fn run_plan(plan: &ExperimentPlan, out_dir: &Path) -> Result<RunManifest> {
    plan.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    // The manifest's plan keeps output_dir as authored: baking in the
    // resolved absolute path would make otherwise-identical runs into
    // different directories produce different manifests.
    let mut manifest = RunManifest::new(plan.clone());
    let mut rows: Vec<ResultRow> = Vec::new();

    let master = plan.seed;
    let param = plan.sweep.parameter_name();
    let shared_dataset = plan.sweep.is_estimator_sweep() || plan.sweep.is_noise_sweep();

    for vi in 0..plan.sweep.len() {
        let started = Instant::now();
        let label = plan.sweep.value_label(vi);
        let spec_v = plan.sweep.apply_to_spec(&plan.base, vi);
        let est_v = plan.sweep.apply_to_estimator(&plan.estimator, vi);

        // Estimator and noise sweeps share one dataset; data-parameter
        // sweeps regenerate per value.
        let dataset_index = if shared_dataset { 0 } else { vi as u64 };
        let dataset_seed = derive_seed(master, "dataset", dataset_index);
        manifest.seeds.insert(format!("dataset/{dataset_index}"), dataset_seed);

        // Noise sweeps generate clean signals once and add per-level noise.
        let noise = if plan.sweep.is_noise_sweep() {
            let noise_seed = derive_seed(master, "noise", vi as u64);
            manifest.seeds.insert(format!("noise/{label}"), noise_seed);
            Some((spec_v.noise_sigma, noise_seed))
        } else {
            None
        };
        let mut gen_spec = spec_v.clone();
        gen_spec.seed = dataset_seed;
        if noise.is_some() {
            gen_spec.noise_sigma = 0.0;
        }

        let patterns = match generate_state_patterns(&gen_spec, pattern_seed(gen_spec.seed)) {
            Ok(p) => p,
            Err(e) => {
                manifest.failures.push(CellFailure {
                    cell: format!("{param}={label}"),
                    error: e.to_string(),
                });
                continue;
            }
        };
        let truth_vectors = match pattern_matrix(&patterns, gen_spec.n_rois) {
            Ok(v) => v,
            Err(e) => {
                manifest.failures.push(CellFailure {
                    cell: format!("{param}={label}"),
                    error: e.to_string(),
                });
                continue;
            }
        };

        for g in 0..gen_spec.n_groups {
            let subjects = match generate_group(&gen_spec, &patterns, g, noise) {
                Ok(s) => s,
                Err(e) => {
                    manifest.failures.push(CellFailure {
                        cell: format!("{param}={label}/group{g}"),
                        error: e.to_string(),
                    });
                    continue;
                }
            };
            let value_seed = derive_seed(master, "value", vi as u64);
            let group_seed = derive_seed(value_seed, "group", g as u64);
            for &method in &plan.methods {
                let cell = format!("{param}={label}/group{g}/{method}");
                let cell_seed = derive_seed(group_seed, method.as_str(), 0);
                manifest.seeds.insert(format!("cell/{cell}"), cell_seed);
                match run_cell(plan, &spec_v, &est_v, method, &subjects, &truth_vectors, cell_seed)
                {
                    Ok(output) => {
                        if output.degenerate_pairs > 0 {
                            manifest
                                .degenerate_events
                                .insert(cell.clone(), output.degenerate_pairs);
                        }
                        for (metric, subject, value) in output.values {
                            rows.push(ResultRow {
                                sweep_parameter: param.to_string(),
                                sweep_value: label.clone(),
                                group: g,
                                subject,
                                method: method.as_str().to_string(),
                                metric: metric.as_str().to_string(),
                                value,
                            });
                        }
                    }
                    Err(e) => {
                        manifest.failures.push(CellFailure { cell, error: e.to_string() });
                    }
                }
            }
        }
        let seconds = started.elapsed().as_secs_f64();
        eprintln!("[{}] {param}={label}: {seconds:.1}s", plan.name);
        manifest.stage_seconds.insert(format!("value/{label}"), seconds);
    }

    let results_path = out_dir.join("results.csv");
    write_results_csv(&results_path, &rows)?;
    manifest.outputs.insert("results.csv".into(), sha256_file(&results_path)?);

    let summary_path = out_dir.join("summary.json");
    write_json(&summary_path, &summarize(plan, &rows, manifest.failures.len()))?;
    manifest.outputs.insert("summary.json".into(), sha256_file(&summary_path)?);

    write_json(&RunManifest::path_in(out_dir), &manifest)?;
    Ok(manifest)
}

/// Variant of [`run_plan`] for the kernel-width comparison: widths 4..9,
/// valid padding (no zero-filled borders), randcon and sliding-window only.
/// Frame counts differ across widths, so label-sequence agreement metrics
/// (ARI, overlap) are rejected up front; dwell and pattern metrics remain.
pub fn kernel_size_study(plan: &ExperimentPlan, out_dir: &Path) -> Result<RunManifest> {
    let Sweep::KernelWidth(widths) = &plan.sweep else {
        return Err(Error::param("kernel-size study sweeps kernel-width"));
    };
    if let Some(w) = widths.iter().find(|w| !(4..=9).contains(*w)) {
        return Err(Error::param(format!("width {w} outside the 4..9 study range")));
    }
    if let Some(m) = plan
        .methods
        .iter()
        .find(|m| !matches!(m, FcMethod::RandCon | FcMethod::SlidingWindow))
    {
        return Err(Error::param(format!(
            "kernel-size study compares randcon and sliding-window only, got '{m}'"
        )));
    }
    if let Some(m) = plan.metrics.iter().find(|m| m.is_time_axis_comparison()) {
        return Err(Error::param(format!(
            "'{m}' compares label sequences across differing frame counts; use dwell or pattern metrics in the kernel-size study"
        )));
    }
    if plan.estimator.padding != Padding::Valid {
        return Err(Error::param("kernel-size study requires valid padding"));
    }
    run_plan(plan, out_dir)
}

/// Lower-triangle vectors of the ground-truth state FC patterns, one row per
/// state.
fn pattern_matrix(patterns: &[StatePattern], n_rois: usize) -> Result<Array2<f64>> {
    let d = n_rois * (n_rois - 1) / 2;
    let mut out = Array2::zeros((patterns.len(), d));
    for (i, p) in patterns.iter().enumerate() {
        let fc = p.implied_fc(n_rois)?;
        let v = lower_triangle(fc.view());
        out.row_mut(i).assign(&ndarray::ArrayView1::from(&v[..]));
    }
    Ok(out)
}

/// Generates one group's subjects; for noise sweeps the subjects come out of
/// the shared clean dataset plus per-subject derived noise.
fn generate_group(
    spec: &SimulationSpec,
    patterns: &[StatePattern],
    group: usize,
    noise: Option<(f64, u64)>,
) -> Result<Vec<SimulatedSubject>> {
    let start = group * spec.subjects_per_group;
    let indices: Vec<usize> = (start..start + spec.subjects_per_group).collect();
    indices
        .into_par_iter()
        .map(|idx| {
            let mut subject = generate_subject(spec, patterns, idx)?;
            if let Some((sigma, noise_seed)) = noise {
                let s = derive_seed(noise_seed, "subject", idx as u64);
                subject.series = add_noise(&subject.series, sigma, s)?;
            }
            Ok(subject)
        })
        .collect()
}

fn estimate_fc(
    method: FcMethod,
    ts: &RoiTimeSeries,
    est: &EstimatorParams,
    bank: Option<&KernelBank>,
) -> Result<FcSeries> {
    match method {
        FcMethod::RandCon => {
            randcon_fc_direct(ts, bank.expect("bank prepared for randcon"), est.padding)
        }
        FcMethod::SlidingWindow => sliding_window_fc(ts, est.width, est.stride),
        // One window of W samples spans W-1 derivative frames, so averaging
        // W-1 of them lands MTD on the sliding-window frame grid.
        FcMethod::Mtd => mtd_fc(ts, est.width - 1, est.stride),
        FcMethod::PhaseSync => phase_sync_fc(ts),
    }
}

/// Frame count each method must produce for a T-point series.
fn expected_frames(method: FcMethod, t: usize, est: &EstimatorParams) -> usize {
    match method {
        FcMethod::RandCon => match est.padding {
            Padding::Same => t,
            Padding::Valid => t - est.width + 1,
        },
        FcMethod::SlidingWindow | FcMethod::Mtd => (t - est.width) / est.stride + 1,
        FcMethod::PhaseSync => t,
    }
}

/// Ground-truth label per frame. Full-length methods keep the sequence;
/// windowed grids take the label at each window's center.
pub(crate) fn crop_truth(labels: &[usize], n_frames: usize, width: usize, stride: usize) -> Vec<usize> {
    if n_frames == labels.len() {
        return labels.to_vec();
    }
    let offset = (width - 1) / 2;
    (0..n_frames).map(|i| labels[i * stride + offset]).collect()
}

struct CellOutput {
    /// (metric, subject column, value) in plan metric order.
    values: Vec<(MetricKind, String, f64)>,
    degenerate_pairs: u64,
}

fn run_cell(
    plan: &ExperimentPlan,
    spec: &SimulationSpec,
    est: &EstimatorParams,
    method: FcMethod,
    subjects: &[SimulatedSubject],
    truth_vectors: &Array2<f64>,
    cell_seed: u64,
) -> Result<CellOutput> {
    let m = spec.n_states;
    let t = spec.n_timepoints;
    let n_frames = expected_frames(method, t, est);
    let bank = if method == FcMethod::RandCon {
        Some(sample_gaussian_bank(est.kernel_count, est.width, derive_seed(cell_seed, "bank", 0))?)
    } else {
        None
    };

    let mut pooled: Vec<Array2<f64>> = Vec::with_capacity(subjects.len());
    let mut truth_frames: Vec<Vec<usize>> = Vec::with_capacity(subjects.len());
    let mut per_subject: Vec<(MetricKind, String, f64)> = Vec::new();
    let mut degenerate_pairs = 0u64;

    // Subjects run sequentially; estimation itself parallelizes internally,
    // which keeps the peak memory at one full FC series.
    for subject in subjects {
        let fcs = estimate_fc(method, &subject.series, est, bank.as_ref())?;
        if fcs.n_frames() != n_frames {
            return Err(Error::dim(format!(
                "{method} produced {} frames, expected {n_frames}",
                fcs.n_frames()
            )));
        }
        degenerate_pairs += fcs.degenerate_pairs();
        for &metric in &plan.metrics {
            let value = match metric {
                MetricKind::FcVariability => Some(metrics::fc_variability(&fcs)?),
                MetricKind::CentroidSimilarity => Some(metrics::centroid_similarity(&fcs)?),
                _ => None,
            };
            if let Some(v) = value {
                per_subject.push((metric, subject.subject_index.to_string(), v));
            }
        }
        pooled.push(fcs.lower_triangles());
        truth_frames.push(crop_truth(subject.labels.labels(), n_frames, est.width, est.stride));
    }

    let views: Vec<_> = pooled.iter().map(|a| a.view()).collect();
    let samples = ndarray::concatenate(Axis(0), &views)
        .map_err(|e| Error::dim(format!("pooling failed: {e}")))?;
    drop(views);
    let pooled_truth: Vec<usize> = truth_frames.iter().flatten().copied().collect();

    let cluster = kmeans(
        samples.view(),
        m,
        plan.clustering.n_restarts,
        plan.clustering.max_iters,
        derive_seed(cell_seed, "cluster", 0),
    )?;
    let matching = match_states(cluster.centroids.view(), truth_vectors.view())?;

    let mut values: Vec<(MetricKind, String, f64)> = Vec::new();
    for &metric in &plan.metrics {
        if metric.is_per_subject() {
            values.extend(per_subject.iter().filter(|(k, _, _)| *k == metric).cloned());
            continue;
        }
        let value = match metric {
            MetricKind::Ari => metrics::ari(&cluster.labels, &pooled_truth)?,
            MetricKind::OverlapRatio => {
                metrics::overlap_ratio(&cluster.labels, &pooled_truth, &matching)?
            }
            MetricKind::StateMse => {
                let pairs =
                    metrics::matched_pairs(cluster.centroids.view(), truth_vectors.view(), &matching)?;
                metrics::state_mse(&pairs)?
            }
            MetricKind::StateCosine => {
                let pairs =
                    metrics::matched_pairs(cluster.centroids.view(), truth_vectors.view(), &matching)?;
                metrics::state_cosine(&pairs)?
            }
            MetricKind::SojournKl => {
                // Runs must not cross subject boundaries: evaluate per
                // subject on matched labels, then average.
                let mut total = 0.0;
                for (s, truth) in truth_frames.iter().enumerate() {
                    let slice = &cluster.labels[s * n_frames..(s + 1) * n_frames];
                    let mapped: Vec<usize> =
                        slice.iter().map(|&l| matching.permutation[l]).collect();
                    total += metrics::sojourn_kl(&mapped, truth, m)?;
                }
                total / subjects.len() as f64
            }
            MetricKind::FcVariability | MetricKind::CentroidSimilarity => unreachable!(),
        };
        values.push((metric, String::new(), value));
    }
    Ok(CellOutput { values, degenerate_pairs })
}

fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    for row in rows {
        writer.serialize(row).map_err(|e| Error::format(e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SummaryEntry {
    mean: f64,
    sd: f64,
    n: usize,
}

#[derive(Debug, Serialize)]
struct ValueSummary {
    value: String,
    methods: BTreeMap<String, BTreeMap<String, SummaryEntry>>,
}

#[derive(Debug, Serialize)]
struct Summary {
    plan: String,
    sweep_parameter: String,
    values: Vec<ValueSummary>,
    n_failures: usize,
}

/// Mean and population standard deviation per (value, method, metric), in
/// sweep order.
fn summarize(plan: &ExperimentPlan, rows: &[ResultRow], n_failures: usize) -> Summary {
    let mut values = Vec::new();
    for vi in 0..plan.sweep.len() {
        let label = plan.sweep.value_label(vi);
        let mut methods: BTreeMap<String, BTreeMap<String, SummaryEntry>> = BTreeMap::new();
        let mut grouped: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
        for row in rows.iter().filter(|r| r.sweep_value == label) {
            grouped
                .entry((row.method.clone(), row.metric.clone()))
                .or_default()
                .push(row.value);
        }
        for ((method, metric), vals) in grouped {
            let n = vals.len();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            methods
                .entry(method)
                .or_default()
                .insert(metric, SummaryEntry { mean, sd: var.sqrt(), n });
        }
        values.push(ValueSummary { value: label, methods });
    }
    Summary {
        plan: plan.name.clone(),
        sweep_parameter: plan.sweep.parameter_name().to_string(),
        values,
        n_failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::plan::preset;

    #[test]
    fn crop_truth_centers_windows() {
        let labels: Vec<usize> = (0..10).collect();
        // Full-length grid passes through.
        assert_eq!(crop_truth(&labels, 10, 3, 1), labels);
        // Width 3, stride 1: 8 frames, offset 1.
        assert_eq!(crop_truth(&labels, 8, 3, 1), (1..9).collect::<Vec<_>>());
        // Width 4: offset 1.
        assert_eq!(crop_truth(&labels, 7, 4, 1), (1..8).collect::<Vec<_>>());
        // Stride 2: every other window.
        assert_eq!(crop_truth(&labels, 4, 3, 2), vec![1, 3, 5, 7]);
    }

    #[test]
    fn smoke_plan_runs_and_is_deterministic() {
        let plan = preset("desk-smoke").unwrap();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let manifest_a = run_plan(&plan, dir_a.path()).unwrap();
        let manifest_b = run_plan(&plan, dir_b.path()).unwrap();
        assert!(manifest_a.failures.is_empty(), "{:?}", manifest_a.failures);

        // Row accounting: values x groups x methods x group-level metrics.
        let text = std::fs::read_to_string(dir_a.path().join("results.csv")).unwrap();
        let rows = text.lines().count() - 1;
        assert_eq!(rows, 1 * 2 * 2 * 2);

        // Same seeds, fresh directory: byte-identical outputs.
        assert_eq!(manifest_a.outputs, manifest_b.outputs);
        for name in ["results.csv", "summary.json", "manifest.json"] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between reruns");
        }
    }

    #[test]
    fn kernel_study_rejects_off_contract_plans() {
        let good = preset("desk-kernel-size").unwrap();

        let mut widths = good.clone();
        widths.sweep = Sweep::KernelWidth(vec![3, 4]);
        let dir = tempfile::tempdir().unwrap();
        assert!(kernel_size_study(&widths, dir.path()).is_err());

        let mut methods = good.clone();
        methods.methods = vec![FcMethod::RandCon, FcMethod::Mtd];
        assert!(kernel_size_study(&methods, dir.path()).is_err());

        let mut metrics = good.clone();
        metrics.metrics = vec![MetricKind::Ari];
        assert!(kernel_size_study(&metrics, dir.path()).is_err());

        let mut padding = good.clone();
        padding.estimator.padding = Padding::Same;
        assert!(kernel_size_study(&padding, dir.path()).is_err());

        let mut sweep = good;
        sweep.sweep = Sweep::NoiseSigma(vec![0.5]);
        assert!(kernel_size_study(&sweep, dir.path()).is_err());
    }
}
