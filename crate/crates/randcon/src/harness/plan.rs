//! Experiment plans: what to sweep, which estimators to run, how to cluster,
//! and which metrics to report. Plans load from TOML or JSON and ship as
//! named presets covering the full-scale study grids (`paper-*`) and
//! minutes-scale reductions (`desk-*`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::connectivity::FcMethod;
use crate::convolution::Padding;
use crate::error::{Error, Result};
use crate::simulate::SimulationSpec;

/// The swept parameter and its value grid. Exactly one parameter varies per
/// plan; everything else comes from the base spec and estimator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "parameter", content = "values", rename_all = "kebab-case")]
pub enum Sweep {
    NoiseSigma(Vec<f64>),
    NRois(Vec<usize>),
    NTimepoints(Vec<usize>),
    NStates(Vec<usize>),
    GammaScale(Vec<f64>),
    KernelCount(Vec<usize>),
    KernelWidth(Vec<usize>),
}

impl Sweep {
    pub fn parameter_name(&self) -> &'static str {
        match self {
            Sweep::NoiseSigma(_) => "noise-sigma",
            Sweep::NRois(_) => "n-rois",
            Sweep::NTimepoints(_) => "n-timepoints",
            Sweep::NStates(_) => "n-states",
            Sweep::GammaScale(_) => "gamma-scale",
            Sweep::KernelCount(_) => "kernel-count",
            Sweep::KernelWidth(_) => "kernel-width",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Sweep::NoiseSigma(v) | Sweep::GammaScale(v) => v.len(),
            Sweep::NRois(v)
            | Sweep::NTimepoints(v)
            | Sweep::NStates(v)
            | Sweep::KernelCount(v)
            | Sweep::KernelWidth(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Display label of the i-th swept value, used as the results CSV key.
    pub fn value_label(&self, i: usize) -> String {
        match self {
            Sweep::NoiseSigma(v) | Sweep::GammaScale(v) => v[i].to_string(),
            Sweep::NRois(v)
            | Sweep::NTimepoints(v)
            | Sweep::NStates(v)
            | Sweep::KernelCount(v)
            | Sweep::KernelWidth(v) => v[i].to_string(),
        }
    }

    /// Estimator sweeps reuse one dataset generated from the base spec;
    /// data-parameter sweeps regenerate per value.
    pub fn is_estimator_sweep(&self) -> bool {
        matches!(self, Sweep::KernelCount(_) | Sweep::KernelWidth(_))
    }

    /// Noise sweeps also reuse one dataset: a single clean (sigma = 0)
    /// generation receives per-level noise, so levels differ only in noise.
    pub fn is_noise_sweep(&self) -> bool {
        matches!(self, Sweep::NoiseSigma(_))
    }

    /// Base spec with the i-th swept value applied (estimator sweeps leave
    /// the spec untouched).
    pub fn apply_to_spec(&self, base: &SimulationSpec, i: usize) -> SimulationSpec {
        let mut spec = base.clone();
        match self {
            Sweep::NoiseSigma(v) => spec.noise_sigma = v[i],
            Sweep::NRois(v) => spec.n_rois = v[i],
            Sweep::NTimepoints(v) => spec.n_timepoints = v[i],
            Sweep::NStates(v) => spec.n_states = v[i],
            Sweep::GammaScale(v) => spec.gamma_scale = v[i],
            Sweep::KernelCount(_) | Sweep::KernelWidth(_) => {}
        }
        spec
    }

    /// Estimator parameters with the i-th swept value applied.
    pub fn apply_to_estimator(&self, base: &EstimatorParams, i: usize) -> EstimatorParams {
        let mut params = base.clone();
        match self {
            Sweep::KernelCount(v) => params.kernel_count = v[i],
            Sweep::KernelWidth(v) => params.width = v[i],
            _ => {}
        }
        params
    }
}

/// FC estimator settings shared by all methods in a plan. `width` doubles as
/// the sliding-window length, the convolution kernel width, and (minus one,
/// to land on the same frame grid) the MTD moving-average window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorParams {
    pub width: usize,
    pub stride: usize,
    pub kernel_count: usize,
    pub padding: Padding,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        EstimatorParams { width: 3, stride: 1, kernel_count: 40, padding: Padding::Same }
    }
}

/// K-means protocol: restart count and the Lloyd iteration cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringParams {
    pub n_restarts: usize,
    pub max_iters: usize,
}

impl Default for ClusteringParams {
    fn default() -> Self {
        ClusteringParams { n_restarts: 100, max_iters: 20 }
    }
}

/// A metric the harness can evaluate per cell. Group-level metrics yield one
/// row per (value, group, method); per-subject metrics yield one row per
/// subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    Ari,
    OverlapRatio,
    StateMse,
    StateCosine,
    SojournKl,
    FcVariability,
    CentroidSimilarity,
}

impl MetricKind {
    pub const ALL: [MetricKind; 7] = [
        MetricKind::Ari,
        MetricKind::OverlapRatio,
        MetricKind::StateMse,
        MetricKind::StateCosine,
        MetricKind::SojournKl,
        MetricKind::FcVariability,
        MetricKind::CentroidSimilarity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Ari => "ari",
            MetricKind::OverlapRatio => "overlap-ratio",
            MetricKind::StateMse => "state-mse",
            MetricKind::StateCosine => "state-cosine",
            MetricKind::SojournKl => "sojourn-kl",
            MetricKind::FcVariability => "fc-variability",
            MetricKind::CentroidSimilarity => "centroid-similarity",
        }
    }

    /// Per-subject metrics are reported per subject instead of per group.
    pub fn is_per_subject(self) -> bool {
        matches!(self, MetricKind::FcVariability | MetricKind::CentroidSimilarity)
    }

    /// Metrics that compare label sequences on the frame axis; excluded from
    /// the kernel-size study where frame counts differ across widths.
    pub fn is_time_axis_comparison(self) -> bool {
        matches!(self, MetricKind::Ari | MetricKind::OverlapRatio)
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricKind::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::param(format!("unknown metric '{s}'")))
    }
}

/// A full experiment: base simulation, one swept parameter, the methods to
/// compare, estimator and clustering settings, and the metrics to report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub name: String,
    #[serde(default)]
    pub base: SimulationSpec,
    pub sweep: Sweep,
    pub methods: Vec<FcMethod>,
    #[serde(default)]
    pub estimator: EstimatorParams,
    pub metrics: Vec<MetricKind>,
    #[serde(default)]
    pub clustering: ClusteringParams,
    /// Master seed; every stage seed is derived from it. The base spec's own
    /// seed is ignored inside plans.
    pub seed: u64,
    /// Default output directory; a CLI `--out` overrides it. The resolved
    /// directory is recorded in the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<std::path::PathBuf>,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::param("plan has no name"));
        }
        if self.sweep.is_empty() {
            return Err(Error::param("sweep has no values"));
        }
        if self.methods.is_empty() {
            return Err(Error::param("plan selects no methods"));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(Error::param(format!("method '{m}' listed twice")));
            }
        }
        if self.metrics.is_empty() {
            return Err(Error::param("plan selects no metrics"));
        }
        for (i, m) in self.metrics.iter().enumerate() {
            if self.metrics[..i].contains(m) {
                return Err(Error::param(format!("metric '{m}' listed twice")));
            }
        }
        if self.clustering.n_restarts == 0 || self.clustering.max_iters == 0 {
            return Err(Error::param("clustering needs at least 1 restart and 1 iteration"));
        }
        // Every swept value must produce a valid simulation and estimator.
        for i in 0..self.sweep.len() {
            let spec = self.sweep.apply_to_spec(&self.base, i);
            spec.validate().map_err(|e| {
                Error::param(format!(
                    "sweep value {} yields an invalid simulation: {e}",
                    self.sweep.value_label(i)
                ))
            })?;
            let est = self.sweep.apply_to_estimator(&self.estimator, i);
            if est.width < 2 {
                return Err(Error::param(format!(
                    "window/kernel width must be at least 2, got {}",
                    est.width
                )));
            }
            if est.width >= spec.n_timepoints {
                return Err(Error::param(format!(
                    "width {} does not fit into {} time points",
                    est.width, spec.n_timepoints
                )));
            }
            if est.stride == 0 {
                return Err(Error::param("stride must be at least 1"));
            }
            // Full-length estimators have no frame grid to stride over, so
            // a stride would silently desynchronize truth alignment.
            if est.stride > 1
                && self
                    .methods
                    .iter()
                    .any(|m| matches!(m, FcMethod::RandCon | FcMethod::PhaseSync))
            {
                return Err(Error::param(
                    "stride above 1 only applies to windowed methods; drop randcon/phase-sync or use stride 1",
                ));
            }
            if est.kernel_count < 2 {
                return Err(Error::param(format!(
                    "kernel count must be at least 2, got {}",
                    est.kernel_count
                )));
            }
        }
        Ok(())
    }

    /// Loads a plan from TOML (`.toml`) or JSON (anything else).
    pub fn load(path: impl AsRef<Path>) -> Result<ExperimentPlan> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: ExperimentPlan = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::format(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text)
                .map_err(|e| Error::format(format!("{}: {e}", path.display())))?
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = if path.extension().is_some_and(|e| e == "toml") {
            toml::to_string_pretty(self).map_err(|e| Error::format(e.to_string()))?
        } else {
            serde_json::to_string_pretty(self).map_err(|e| Error::format(e.to_string()))?
        };
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub const PRESET_NAMES: [&str; 12] = [
    "paper-noise",
    "paper-roi",
    "paper-tr",
    "paper-states",
    "paper-scale-param",
    "paper-kernel-count",
    "paper-kernel-size",
    "desk-methods",
    "desk-noise",
    "desk-kernel-count",
    "desk-kernel-size",
    "desk-smoke",
];

fn full_scale_base() -> SimulationSpec {
    SimulationSpec::default()
}

/// Desk-scale base: minutes, not hours. 4 states over 30 ROIs, 400 time
/// points, 10 groups of 5 subjects.
fn desk_base() -> SimulationSpec {
    SimulationSpec {
        n_rois: 30,
        n_timepoints: 400,
        n_groups: 10,
        subjects_per_group: 5,
        ..SimulationSpec::default()
    }
}

const ALL_METHODS: [FcMethod; 4] =
    [FcMethod::RandCon, FcMethod::SlidingWindow, FcMethod::Mtd, FcMethod::PhaseSync];

const TIME_AND_SPACE_METRICS: [MetricKind; 4] = [
    MetricKind::Ari,
    MetricKind::OverlapRatio,
    MetricKind::StateMse,
    MetricKind::StateCosine,
];

fn kernel_size_metrics() -> Vec<MetricKind> {
    vec![MetricKind::SojournKl, MetricKind::StateCosine, MetricKind::StateMse]
}

/// Builds a named preset plan. `paper-*` presets reproduce the full study
/// grids (hours of compute); `desk-*` presets shrink the data so the same
/// comparisons finish in minutes.
pub fn preset(name: &str) -> Result<ExperimentPlan> {
    let plan = match name {
        "paper-noise" => ExperimentPlan {
            name: name.into(),
            base: full_scale_base(),
            sweep: Sweep::NoiseSigma(vec![0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]),
            methods: ALL_METHODS.to_vec(),
            estimator: EstimatorParams::default(),
            metrics: TIME_AND_SPACE_METRICS.to_vec(),
            clustering: ClusteringParams::default(),
            seed: 42,
            output_dir: None,
        },
        "paper-roi" => ExperimentPlan {
            name: name.into(),
            base: full_scale_base(),
            sweep: Sweep::NRois(vec![30, 60, 90, 120]),
            methods: ALL_METHODS.to_vec(),
            estimator: EstimatorParams::default(),
            metrics: vec![MetricKind::Ari, MetricKind::StateCosine],
            clustering: ClusteringParams::default(),
            seed: 42,
            output_dir: None,
        },
        "paper-tr" => ExperimentPlan {
            name: name.into(),
            base: full_scale_base(),
            sweep: Sweep::NTimepoints(vec![400, 600, 800, 1000, 1200]),
            methods: ALL_METHODS.to_vec(),
            estimator: EstimatorParams::default(),
            metrics: vec![MetricKind::Ari, MetricKind::StateCosine],
            clustering: ClusteringParams::default(),
            seed: 42,
            output_dir: None,
        },
        "paper-states" => ExperimentPlan {
            name: name.into(),
            base: full_scale_base(),
            sweep: Sweep::NStates(vec![4, 6, 8]),
            methods: ALL_METHODS.to_vec(),
            estimator: EstimatorParams::default(),
            metrics: vec![MetricKind::Ari, MetricKind::StateCosine],
            clustering: ClusteringParams::default(),
            seed: 42,
            output_dir: None,
        },
        "paper-scale-param" => ExperimentPlan {
            name: name.into(),
            base: full_scale_base(),
            sweep: Sweep::GammaScale(vec![1.0, 3.0, 5.0, 7.0]),
            methods: ALL_METHODS.to_vec(),
            estimator: EstimatorParams::default(),
            metrics: vec![MetricKind::Ari, MetricKind::StateCosine],
            clustering: ClusteringParams::default(),
            seed: 42,
            output_dir: None,
        },
        "paper-kernel-count" => ExperimentPlan {
            name: name.into(),
            base: full_scale_base(),
            sweep: Sweep::KernelCount(vec![5, 10, 20, 40, 80, 160]),
            methods: vec![FcMethod::RandCon],
            estimator: EstimatorParams::default(),
            metrics: vec![MetricKind::Ari, MetricKind::StateCosine],
            clustering: ClusteringParams::default(),
            seed: 42,
            output_dir: None,
        },
        "paper-kernel-size" => ExperimentPlan {
            name: name.into(),
            base: full_scale_base(),
            sweep: Sweep::KernelWidth(vec![4, 5, 6, 7, 8, 9]),
            methods: vec![FcMethod::RandCon, FcMethod::SlidingWindow],
            estimator: EstimatorParams { padding: Padding::Valid, ..EstimatorParams::default() },
            metrics: kernel_size_metrics(),
            clustering: ClusteringParams::default(),
            seed: 42,
            output_dir: None,
        },
        "desk-methods" => ExperimentPlan {
            name: name.into(),
            base: desk_base(),
            sweep: Sweep::NoiseSigma(vec![0.6]),
            methods: ALL_METHODS.to_vec(),
            estimator: EstimatorParams::default(),
            metrics: TIME_AND_SPACE_METRICS.to_vec(),
            clustering: ClusteringParams::default(),
            seed: 42,
            output_dir: None,
        },
        "desk-noise" => ExperimentPlan {
            name: name.into(),
            base: desk_base(),
            sweep: Sweep::NoiseSigma(vec![0.4, 0.7, 1.0]),
            methods: ALL_METHODS.to_vec(),
            estimator: EstimatorParams::default(),
            metrics: TIME_AND_SPACE_METRICS.to_vec(),
            clustering: ClusteringParams::default(),
            seed: 42,
            output_dir: None,
        },
        "desk-kernel-count" => ExperimentPlan {
            name: name.into(),
            base: SimulationSpec { noise_sigma: 1.6, ..desk_base() },
            sweep: Sweep::KernelCount(vec![5, 20, 80]),
            methods: vec![FcMethod::RandCon],
            estimator: EstimatorParams::default(),
            metrics: vec![MetricKind::Ari, MetricKind::StateCosine],
            clustering: ClusteringParams::default(),
            seed: 42,
            output_dir: None,
        },
        "desk-kernel-size" => ExperimentPlan {
            name: name.into(),
            base: SimulationSpec { n_groups: 4, ..desk_base() },
            sweep: Sweep::KernelWidth(vec![4, 6, 9]),
            methods: vec![FcMethod::RandCon, FcMethod::SlidingWindow],
            estimator: EstimatorParams { padding: Padding::Valid, ..EstimatorParams::default() },
            metrics: kernel_size_metrics(),
            clustering: ClusteringParams::default(),
            seed: 42,
            output_dir: None,
        },
        "desk-smoke" => ExperimentPlan {
            name: name.into(),
            base: SimulationSpec {
                n_states: 3,
                n_rois: 20,
                n_timepoints: 120,
                n_groups: 2,
                subjects_per_group: 2,
                ..SimulationSpec::default()
            },
            sweep: Sweep::NoiseSigma(vec![0.6]),
            methods: vec![FcMethod::RandCon, FcMethod::SlidingWindow],
            estimator: EstimatorParams { kernel_count: 8, ..EstimatorParams::default() },
            metrics: vec![MetricKind::Ari, MetricKind::StateCosine],
            clustering: ClusteringParams { n_restarts: 10, max_iters: 10 },
            seed: 42,
            output_dir: None,
        },
        other => {
            return Err(Error::param(format!(
                "unknown preset '{other}' (available: {})",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    plan.validate()?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_is_valid() {
        for name in PRESET_NAMES {
            let plan = preset(name).unwrap_or_else(|e| panic!("preset {name}: {e}"));
            assert_eq!(plan.name, name);
            plan.validate().unwrap();
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn paper_grids_match_the_protocol() {
        let noise = preset("paper-noise").unwrap();
        assert_eq!(noise.sweep, Sweep::NoiseSigma(vec![0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]));
        assert_eq!(noise.base.n_groups, 30);
        assert_eq!(noise.base.subjects_per_group, 20);
        assert_eq!(noise.estimator.kernel_count, 40);
        assert_eq!(noise.clustering.n_restarts, 100);
        assert_eq!(noise.clustering.max_iters, 20);

        assert_eq!(preset("paper-roi").unwrap().sweep, Sweep::NRois(vec![30, 60, 90, 120]));
        assert_eq!(
            preset("paper-tr").unwrap().sweep,
            Sweep::NTimepoints(vec![400, 600, 800, 1000, 1200])
        );
        assert_eq!(preset("paper-states").unwrap().sweep, Sweep::NStates(vec![4, 6, 8]));
        assert_eq!(
            preset("paper-scale-param").unwrap().sweep,
            Sweep::GammaScale(vec![1.0, 3.0, 5.0, 7.0])
        );
        assert_eq!(
            preset("paper-kernel-count").unwrap().sweep,
            Sweep::KernelCount(vec![5, 10, 20, 40, 80, 160])
        );
        let ks = preset("paper-kernel-size").unwrap();
        assert_eq!(ks.sweep, Sweep::KernelWidth(vec![4, 5, 6, 7, 8, 9]));
        assert_eq!(ks.estimator.padding, Padding::Valid);
        assert!(!ks.metrics.iter().any(|m| m.is_time_axis_comparison()));
    }

    #[test]
    fn plan_round_trips_through_toml_and_json() {
        let plan = preset("desk-smoke").unwrap();
        let dir = tempfile::tempdir().unwrap();
        for name in ["plan.toml", "plan.json"] {
            let path = dir.path().join(name);
            plan.save(&path).unwrap();
            let loaded = ExperimentPlan::load(&path).unwrap();
            assert_eq!(loaded, plan, "{name}");
        }
        assert!(ExperimentPlan::load(dir.path().join("missing.toml")).is_err());
    }

    #[test]
    fn validation_rejects_bad_plans() {
        let mut plan = preset("desk-smoke").unwrap();
        plan.methods.clear();
        assert!(plan.validate().is_err());

        let mut plan = preset("desk-smoke").unwrap();
        plan.methods = vec![FcMethod::RandCon, FcMethod::RandCon];
        assert!(plan.validate().is_err());

        let mut plan = preset("desk-smoke").unwrap();
        plan.sweep = Sweep::NRois(vec![35]); // not a multiple of the subnetwork size
        assert!(plan.validate().is_err());

        let mut plan = preset("desk-smoke").unwrap();
        plan.estimator.width = 1;
        assert!(plan.validate().is_err());

        let mut plan = preset("desk-smoke").unwrap();
        plan.metrics.clear();
        assert!(plan.validate().is_err());
    }

    #[test]
    fn unknown_method_in_plan_file_fails_before_compute() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.json");
        let mut text = serde_json::to_string(&preset("desk-smoke").unwrap()).unwrap();
        text = text.replace("\"randcon\"", "\"randconn\"");
        std::fs::write(&path, text).unwrap();
        let err = ExperimentPlan::load(&path).unwrap_err();
        assert!(err.to_string().contains("randconn") || err.to_string().contains("unknown"));
    }
}
