//! End-to-end pipeline for recorded (non-simulated) multi-subject series:
//! estimate per-subject dynamic FC, pool the frames, pick a state count by
//! the inertia elbow (or use a fixed one), cluster, and report per-subject
//! occupancy, dwell and variability summaries. With a two-valued covariate
//! the per-subject summaries are compared between groups.
//!
//! Without ground truth there is no state matching: cluster indices are
//! arbitrary but deterministic for a given seed, and the reported state
//! patterns are the mean connectivity of the frames assigned to each
//! cluster, which lives in the original correlation space even when the
//! clustering itself ran on a reduced projection.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::clustering::{elbow_k, kmeans, project_principal, ElbowResult};
use crate::connectivity::{
    mtd_fc, phase_sync_fc, randcon_fc_direct, sliding_window_fc, FcMethod, FcSeries,
};
use crate::convolution::{sample_gaussian_bank, Padding};
use crate::error::{Error, Result};
use crate::harness::run::sha256_file;
use crate::metrics::{
    self, centroid_similarity, fc_variability, mann_whitney, Alternative, TestOutcome,
};
use crate::seed::derive_seed;
use crate::timeseries::{zscore_rows, RoiTimeSeries};

/// Analysis settings. Defaults follow the recorded-series protocol: width-3
/// kernels, a large bank, valid padding (no zero-padded borders leaking into
/// the state frames) and per-region normalization before estimation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RealDataConfig {
    pub method: FcMethod,
    pub width: usize,
    pub stride: usize,
    pub kernel_count: usize,
    /// Z-score each region over time before estimation.
    pub zscore: bool,
    /// Candidate state counts for the elbow selection, inclusive.
    pub k_range: (usize, usize),
    /// Skip the elbow and use this state count directly.
    pub fixed_k: Option<usize>,
    /// Project pooled frames to this many components before clustering.
    /// The reported state patterns still average the original frames.
    pub pca_dim: Option<usize>,
    pub n_restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for RealDataConfig {
    fn default() -> Self {
        RealDataConfig {
            method: FcMethod::RandCon,
            width: 3,
            stride: 1,
            kernel_count: 2048,
            zscore: true,
            k_range: (2, 8),
            fixed_k: None,
            pca_dim: None,
            n_restarts: 100,
            max_iters: 20,
            seed: 7,
        }
    }
}

impl RealDataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 2 {
            return Err(Error::param(format!("width must be at least 2, got {}", self.width)));
        }
        if self.stride == 0 {
            return Err(Error::param("stride must be at least 1"));
        }
        if self.method == FcMethod::RandCon && self.kernel_count < 2 {
            return Err(Error::param("need at least 2 kernels"));
        }
        match self.fixed_k {
            Some(k) if k < 2 => {
                return Err(Error::param(format!("fixed state count must be at least 2, got {k}")))
            }
            Some(_) => {}
            None => {
                let (lo, hi) = self.k_range;
                if lo < 2 || hi < lo + 2 {
                    return Err(Error::param(format!(
                        "elbow selection needs k range [lo >= 2, hi >= lo + 2], got [{lo}, {hi}]"
                    )));
                }
            }
        }
        if self.n_restarts == 0 || self.max_iters == 0 {
            return Err(Error::param("restarts and iterations must both be at least 1"));
        }
        if let Some(d) = self.pca_dim {
            if d == 0 {
                return Err(Error::param("projection dimension must be at least 1"));
            }
        }
        Ok(())
    }
}

/// Occupancy and dynamics summaries for one subject.
#[derive(Debug, Clone, Serialize)]
pub struct SubjectMetrics {
    pub subject: String,
    /// Fraction of frames in each state; sums to 1.
    pub fraction_of_time: Vec<f64>,
    /// Mean run length per state (0 for states the subject never entered).
    pub mean_dwell: Vec<f64>,
    pub visited: Vec<bool>,
    pub fc_variability: f64,
    pub centroid_similarity: f64,
}

/// One between-group test. `degenerate` marks rows where a group had fewer
/// than two usable values, in which case statistic and p are NaN.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub group_a: String,
    pub group_b: String,
    pub n_a: usize,
    pub n_b: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RealDataOutcome {
    pub selected_k: usize,
    /// Present when the state count came from the elbow rather than
    /// `fixed_k`.
    pub elbow: Option<ElbowResult>,
    /// Mean connectivity matrix of the frames in each state, unit diagonal.
    /// Serialized separately as one CSV per state, not as JSON.
    #[serde(skip)]
    pub state_patterns: Vec<Array2<f64>>,
    pub subject_metrics: Vec<SubjectMetrics>,
    pub comparison: Option<Vec<ComparisonRow>>,
    pub frames_per_subject: Vec<(String, usize)>,
    /// Degenerate correlation pairs encountered during estimation, summed
    /// over subjects.
    pub degenerate_pairs: u64,
}

fn estimate(config: &RealDataConfig, ts: &RoiTimeSeries) -> Result<FcSeries> {
    match config.method {
        FcMethod::RandCon => {
            let bank = sample_gaussian_bank(
                config.kernel_count,
                config.width,
                derive_seed(config.seed, "bank", 0),
            )?;
            randcon_fc_direct(ts, &bank, Padding::Valid)
        }
        FcMethod::SlidingWindow => sliding_window_fc(ts, config.width, config.stride),
        FcMethod::Mtd => mtd_fc(ts, config.width - 1, config.stride),
        FcMethod::PhaseSync => phase_sync_fc(ts),
    }
}

/// Rebuilds a symmetric matrix with unit diagonal from a lower-triangle
/// vector in row-major (i > j) order.
fn devectorize(v: ArrayView2<'_, f64>, row: usize, n: usize) -> Array2<f64> {
    let mut out = Array2::from_elem((n, n), 1.0);
    let mut idx = 0;
    for i in 1..n {
        for j in 0..i {
            out[[i, j]] = v[[row, idx]];
            out[[j, i]] = v[[row, idx]];
            idx += 1;
        }
    }
    out
}

/// Runs the full pipeline over named subjects. `covariate` maps subject
/// names to group labels; when given, it must cover every subject and take
/// exactly two distinct values.
pub fn realdata_pipeline(
    subjects: &[(String, RoiTimeSeries)],
    config: &RealDataConfig,
    covariate: Option<&BTreeMap<String, String>>,
) -> Result<RealDataOutcome> {
    config.validate()?;
    if subjects.is_empty() {
        return Err(Error::param("no subjects"));
    }
    let n_rois = subjects[0].1.n_rois();
    for (name, ts) in subjects {
        if ts.n_rois() != n_rois {
            return Err(Error::dim(format!(
                "subject '{name}' has {} regions, expected {n_rois}",
                ts.n_rois()
            )));
        }
    }
    {
        let mut names: Vec<&str> = subjects.iter().map(|(n, _)| n.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::param(format!("duplicate subject name '{}'", w[0])));
        }
    }

    let mut pooled_parts: Vec<Array2<f64>> = Vec::with_capacity(subjects.len());
    let mut frames_per_subject = Vec::with_capacity(subjects.len());
    let mut variability = Vec::with_capacity(subjects.len());
    let mut similarity = Vec::with_capacity(subjects.len());
    let mut degenerate_pairs = 0u64;
    for (name, ts) in subjects {
        let series = if config.zscore {
            let (z, constant) = zscore_rows(ts);
            if !constant.is_empty() {
                eprintln!(
                    "warning: subject '{name}' has {} constant region(s), left unscaled",
                    constant.len()
                );
            }
            z
        } else {
            ts.clone()
        };
        let fcs = estimate(config, &series)?;
        degenerate_pairs += fcs.degenerate_pairs();
        variability.push(fc_variability(&fcs)?);
        similarity.push(centroid_similarity(&fcs)?);
        frames_per_subject.push((name.clone(), fcs.n_frames()));
        pooled_parts.push(fcs.lower_triangles());
    }

    let views: Vec<_> = pooled_parts.iter().map(|a| a.view()).collect();
    let pooled = ndarray::concatenate(Axis(0), &views)
        .map_err(|e| Error::dim(format!("pooling failed: {e}")))?;
    drop(views);
    drop(pooled_parts);

    // Clustering may run on a reduced projection; state patterns always
    // average the original frames.
    let clustering_input = match config.pca_dim {
        Some(d) => project_principal(pooled.view(), d, derive_seed(config.seed, "pca", 0))?,
        None => pooled.clone(),
    };

    let (selected_k, elbow) = match config.fixed_k {
        Some(k) => (k, None),
        None => {
            let (lo, hi) = config.k_range;
            let result = elbow_k(clustering_input.view(), lo, hi, derive_seed(config.seed, "elbow", 0))?;
            (result.selected_k, Some(result))
        }
    };
    let cluster = kmeans(
        clustering_input.view(),
        selected_k,
        config.n_restarts,
        config.max_iters,
        derive_seed(config.seed, "cluster", 0),
    )?;

    let mut state_patterns = Vec::with_capacity(selected_k);
    for state in 0..selected_k {
        let members: Vec<usize> =
            (0..pooled.nrows()).filter(|&i| cluster.labels[i] == state).collect();
        if members.is_empty() {
            return Err(Error::degenerate(format!(
                "state {state} has no frames; rerun with a smaller state count"
            )));
        }
        let mut mean = Array2::zeros((1, pooled.ncols()));
        for &i in &members {
            mean.row_mut(0).scaled_add(1.0, &pooled.row(i));
        }
        mean.mapv_inplace(|v| v / members.len() as f64);
        state_patterns.push(devectorize(mean.view(), 0, n_rois));
    }

    let mut subject_metrics = Vec::with_capacity(subjects.len());
    let mut offset = 0;
    for (i, (name, frames)) in frames_per_subject.iter().enumerate() {
        let slice = &cluster.labels[offset..offset + frames];
        offset += frames;
        let (mean_dwell, visited) = metrics::mean_dwell_time(slice, selected_k)?;
        subject_metrics.push(SubjectMetrics {
            subject: name.clone(),
            fraction_of_time: metrics::fraction_of_time(slice, selected_k)?,
            mean_dwell,
            visited,
            fc_variability: variability[i],
            centroid_similarity: similarity[i],
        });
    }

    let comparison = match covariate {
        Some(map) => Some(compare_groups(&subject_metrics, map, selected_k)?),
        None => None,
    };

    Ok(RealDataOutcome {
        selected_k,
        elbow,
        state_patterns,
        subject_metrics,
        comparison,
        frames_per_subject,
        degenerate_pairs,
    })
}

/// Splits subjects by a two-valued covariate and Mann-Whitney-tests every
/// per-subject summary between the groups. Group order is lexicographic.
fn compare_groups(
    subjects: &[SubjectMetrics],
    covariate: &BTreeMap<String, String>,
    k: usize,
) -> Result<Vec<ComparisonRow>> {
    let mut groups: BTreeMap<&str, Vec<&SubjectMetrics>> = BTreeMap::new();
    for s in subjects {
        let label = covariate
            .get(&s.subject)
            .ok_or_else(|| Error::param(format!("subject '{}' missing from covariate table", s.subject)))?;
        groups.entry(label.as_str()).or_default().push(s);
    }
    if groups.len() != 2 {
        return Err(Error::param(format!(
            "group comparison needs exactly 2 covariate values, got {}",
            groups.len()
        )));
    }
    let mut iter = groups.into_iter();
    let (name_a, group_a) = iter.next().expect("two groups");
    let (name_b, group_b) = iter.next().expect("two groups");

    // (metric name, per-subject extractor; NaN marks a value to drop).
    let mut extractors: Vec<(String, Box<dyn Fn(&SubjectMetrics) -> f64>)> = vec![
        ("fc-variability".into(), Box::new(|s: &SubjectMetrics| s.fc_variability)),
        ("centroid-similarity".into(), Box::new(|s: &SubjectMetrics| s.centroid_similarity)),
    ];
    for state in 0..k {
        extractors.push((
            format!("fraction-of-time/state{state}"),
            Box::new(move |s: &SubjectMetrics| s.fraction_of_time[state]),
        ));
        extractors.push((
            format!("mean-dwell/state{state}"),
            Box::new(move |s: &SubjectMetrics| {
                if s.visited[state] {
                    s.mean_dwell[state]
                } else {
                    f64::NAN
                }
            }),
        ));
    }

    let mut rows = Vec::with_capacity(extractors.len());
    for (metric, extract) in extractors {
        let a: Vec<f64> = group_a.iter().map(|s| extract(s)).filter(|v| v.is_finite()).collect();
        let b: Vec<f64> = group_b.iter().map(|s| extract(s)).filter(|v| v.is_finite()).collect();
        let outcome = if a.len() < 2 || b.len() < 2 {
            TestOutcome { statistic: f64::NAN, p_value: f64::NAN, degenerate: true }
        } else {
            mann_whitney(&a, &b, Alternative::TwoSided)?
        };
        rows.push(ComparisonRow {
            metric,
            group_a: name_a.to_string(),
            group_b: name_b.to_string(),
            n_a: a.len(),
            n_b: b.len(),
            statistic: outcome.statistic,
            p_value: outcome.p_value,
            degenerate: outcome.degenerate,
        });
    }
    Ok(rows)
}

/// Serializes the outcome into `out_dir` and returns file-name to sha256
/// mappings: `outcome.json` (everything but the patterns), one
/// `state_<i>.csv` per pattern, and `subject_metrics.csv`.
pub fn write_outcome(outcome: &RealDataOutcome, out_dir: &Path) -> Result<BTreeMap<String, String>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut hashes = BTreeMap::new();

    #[derive(Serialize)]
    struct Slim<'a> {
        selected_k: usize,
        elbow: &'a Option<ElbowResult>,
        comparison: &'a Option<Vec<ComparisonRow>>,
        frames_per_subject: &'a [(String, usize)],
        degenerate_pairs: u64,
        n_states_written: usize,
    }
    let path = out_dir.join("outcome.json");
    let slim = Slim {
        selected_k: outcome.selected_k,
        elbow: &outcome.elbow,
        comparison: &outcome.comparison,
        frames_per_subject: &outcome.frames_per_subject,
        degenerate_pairs: outcome.degenerate_pairs,
        n_states_written: outcome.state_patterns.len(),
    };
    let text = serde_json::to_string_pretty(&slim).map_err(|e| Error::format(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    hashes.insert("outcome.json".to_string(), sha256_file(&path)?);

    for (i, pattern) in outcome.state_patterns.iter().enumerate() {
        let name = format!("state_{i}.csv");
        let path = out_dir.join(&name);
        let mut text = String::new();
        for row in pattern.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        hashes.insert(name.clone(), sha256_file(&path)?);
    }

    let path = out_dir.join("subject_metrics.csv");
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    writer
        .write_record(["subject", "state", "fraction_of_time", "mean_dwell", "visited", "fc_variability", "centroid_similarity"])
        .map_err(|e| Error::format(e.to_string()))?;
    for s in &outcome.subject_metrics {
        for state in 0..outcome.selected_k {
            writer
                .write_record([
                    s.subject.as_str(),
                    &state.to_string(),
                    &format!("{:.9}", s.fraction_of_time[state]),
                    &format!("{:.9}", s.mean_dwell[state]),
                    &s.visited[state].to_string(),
                    &format!("{:.9}", s.fc_variability),
                    &format!("{:.9}", s.centroid_similarity),
                ])
                .map_err(|e| Error::format(e.to_string()))?;
        }
    }
    writer.flush().map_err(|e| Error::io(&path, e))?;
    drop(writer);
    hashes.insert("subject_metrics.csv".to_string(), sha256_file(&path)?);
    Ok(hashes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{generate_state_patterns, generate_subject, pattern_seed, SimulationSpec};

    fn toy_subjects(n: usize, seed: u64) -> Vec<(String, RoiTimeSeries)> {
        let spec = SimulationSpec {
            n_states: 3,
            n_rois: 20,
            n_timepoints: 150,
            noise_sigma: 0.4,
            n_groups: 1,
            subjects_per_group: n,
            seed,
            ..SimulationSpec::default()
        };
        let patterns = generate_state_patterns(&spec, pattern_seed(spec.seed)).unwrap();
        (0..n)
            .map(|i| {
                let s = generate_subject(&spec, &patterns, i).unwrap();
                (format!("sub-{i:02}"), s.series)
            })
            .collect()
    }

    #[test]
    fn pipeline_recovers_structure_and_is_deterministic() {
        let subjects = toy_subjects(4, 11);
        let config = RealDataConfig {
            kernel_count: 64,
            fixed_k: Some(3),
            n_restarts: 10,
            max_iters: 20,
            ..RealDataConfig::default()
        };
        let a = realdata_pipeline(&subjects, &config, None).unwrap();
        let b = realdata_pipeline(&subjects, &config, None).unwrap();

        assert_eq!(a.selected_k, 3);
        assert!(a.elbow.is_none());
        assert_eq!(a.state_patterns.len(), 3);
        // Valid padding with width 3 trims two frames.
        assert!(a.frames_per_subject.iter().all(|(_, f)| *f == 148));
        for s in &a.subject_metrics {
            let total: f64 = s.fraction_of_time.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(s.fc_variability > 0.0);
        }
        for p in &a.state_patterns {
            assert_eq!(p.dim(), (20, 20));
            for i in 0..20 {
                assert_eq!(p[[i, i]], 1.0);
                for j in 0..i {
                    assert_eq!(p[[i, j]], p[[j, i]]);
                    assert!(p[[i, j]].abs() <= 1.0 + 1e-12);
                }
            }
        }
        // Same config, same subjects: identical labels and patterns.
        assert_eq!(a.frames_per_subject, b.frames_per_subject);
        for (pa, pb) in a.state_patterns.iter().zip(&b.state_patterns) {
            assert_eq!(pa, pb);
        }
    }

    #[test]
    fn elbow_path_and_pca_path_run() {
        let subjects = toy_subjects(3, 13);
        let config = RealDataConfig {
            kernel_count: 32,
            k_range: (2, 5),
            pca_dim: Some(10),
            n_restarts: 5,
            max_iters: 15,
            ..RealDataConfig::default()
        };
        let out = realdata_pipeline(&subjects, &config, None).unwrap();
        assert!(out.elbow.is_some());
        assert!((2..=5).contains(&out.selected_k));
        // Patterns are full-size even though clustering saw 10 dimensions.
        assert!(out.state_patterns.iter().all(|p| p.dim() == (20, 20)));
    }

    #[test]
    fn covariate_comparison_produces_rows() {
        let subjects = toy_subjects(6, 17);
        let config = RealDataConfig {
            kernel_count: 32,
            fixed_k: Some(2),
            n_restarts: 5,
            max_iters: 15,
            ..RealDataConfig::default()
        };
        let mut covariate = BTreeMap::new();
        for (i, (name, _)) in subjects.iter().enumerate() {
            covariate.insert(name.clone(), if i % 2 == 0 { "patient" } else { "control" }.to_string());
        }
        let out = realdata_pipeline(&subjects, &config, Some(&covariate)).unwrap();
        let rows = out.comparison.unwrap();
        // 2 scalar metrics + 2 per-state metrics x 2 states.
        assert_eq!(rows.len(), 2 + 2 * 2);
        for row in &rows {
            assert_eq!(row.group_a, "control");
            assert_eq!(row.group_b, "patient");
            if !row.degenerate {
                assert!(row.p_value > 0.0 && row.p_value <= 1.0);
            }
        }

        // Covariate gaps and non-binary covariates are parameter errors.
        let mut missing = covariate.clone();
        missing.remove("sub-03");
        assert!(realdata_pipeline(&subjects, &config, Some(&missing)).is_err());
        let mut triple = covariate.clone();
        triple.insert("sub-00".into(), "third".into());
        assert!(realdata_pipeline(&subjects, &config, Some(&triple)).is_err());
    }

    #[test]
    fn config_validation_rejects_bad_settings() {
        let base = RealDataConfig::default();
        let bad = |f: fn(&mut RealDataConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.width = 1));
        assert!(bad(|c| c.stride = 0));
        assert!(bad(|c| c.kernel_count = 1));
        assert!(bad(|c| c.fixed_k = Some(1)));
        assert!(bad(|c| c.k_range = (2, 3)));
        assert!(bad(|c| c.k_range = (1, 8)));
        assert!(bad(|c| c.n_restarts = 0));
        assert!(bad(|c| c.pca_dim = Some(0)));
        assert!(base.validate().is_ok());
    }

    #[test]
    fn outcome_files_round_trip_hashes() {
        let subjects = toy_subjects(3, 19);
        let config = RealDataConfig {
            kernel_count: 32,
            fixed_k: Some(2),
            n_restarts: 5,
            max_iters: 10,
            ..RealDataConfig::default()
        };
        let out = realdata_pipeline(&subjects, &config, None).unwrap();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let hashes_a = write_outcome(&out, dir_a.path()).unwrap();
        let hashes_b = write_outcome(&out, dir_b.path()).unwrap();
        assert_eq!(hashes_a, hashes_b);
        assert!(hashes_a.contains_key("outcome.json"));
        assert!(hashes_a.contains_key("state_0.csv"));
        assert!(hashes_a.contains_key("state_1.csv"));
        assert!(hashes_a.contains_key("subject_metrics.csv"));
    }
}
