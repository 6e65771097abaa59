//! Ground-truth simulator.
//!
//! Subjects are generated from a hidden Markov process: `M` connectivity
//! states over `N` ROIs (grouped into consecutive subnetworks of 10), state
//! dwell times drawn from a Gamma distribution, and BOLD-like signals built
//! from shared latent factors so every state has a known connectivity matrix
//! with entries in `{-1, 0, +1}`.
//!
//! Each subnetwork of a state carries a latent factor id and a sign. At time
//! `t` in state `s`, one standard normal value is drawn per factor and ROI
//! `i` takes `sign(subnet(i)) * z(factor(subnet(i)))`; i.i.d. Gaussian noise
//! is added on top. Two subnetworks are perfectly correlated
//! (anti-correlated) when they share a factor with equal (opposite) signs,
//! and uncorrelated when their factors differ.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from};
use crate::timeseries::{load_csv, save_csv, CsvLayout, RoiTimeSeries};

/// ROIs per subnetwork; `n_rois` must be a multiple of this.
pub const SUBNETWORK_SIZE: usize = 10;

/// Everything that defines a simulated dataset. `Default` mirrors the
/// reference protocol: 4 states over 90 ROIs, 1200 time points, Gamma(10, 5)
/// dwell times, noise sigma 0.6, and 30 groups of 20 subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationSpec {
    pub n_states: usize,
    pub n_rois: usize,
    pub n_timepoints: usize,
    pub gamma_shape: f64,
    pub gamma_scale: f64,
    pub noise_sigma: f64,
    pub n_groups: usize,
    pub subjects_per_group: usize,
    pub seed: u64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        SimulationSpec {
            n_states: 4,
            n_rois: 90,
            n_timepoints: 1200,
            gamma_shape: 10.0,
            gamma_scale: 5.0,
            noise_sigma: 0.6,
            n_groups: 30,
            subjects_per_group: 20,
            seed: 42,
        }
    }
}

impl SimulationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_states < 2 {
            return Err(Error::param(format!("need at least 2 states, got {}", self.n_states)));
        }
        if self.n_rois % SUBNETWORK_SIZE != 0 {
            return Err(Error::param(format!(
                "ROI count {} is not a multiple of the subnetwork size {SUBNETWORK_SIZE}",
                self.n_rois
            )));
        }
        if self.n_rois / SUBNETWORK_SIZE < 2 {
            return Err(Error::param(format!(
                "need at least 2 subnetworks ({} ROIs), got {} ROIs",
                2 * SUBNETWORK_SIZE,
                self.n_rois
            )));
        }
        if self.n_timepoints < 2 {
            return Err(Error::param("need at least 2 time points"));
        }
        if !(self.gamma_shape.is_finite() && self.gamma_shape > 0.0) {
            return Err(Error::param(format!("gamma shape must be positive, got {}", self.gamma_shape)));
        }
        if !(self.gamma_scale.is_finite() && self.gamma_scale > 0.0) {
            return Err(Error::param(format!("gamma scale must be positive, got {}", self.gamma_scale)));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::param(format!("noise sigma must be non-negative, got {}", self.noise_sigma)));
        }
        if self.n_groups == 0 || self.subjects_per_group == 0 {
            return Err(Error::param("need at least one group with at least one subject"));
        }
        Ok(())
    }

    pub fn n_subjects(&self) -> usize {
        self.n_groups * self.subjects_per_group
    }

    pub fn n_subnetworks(&self) -> usize {
        self.n_rois / SUBNETWORK_SIZE
    }
}

/// Latent-factor layout of one state: per subnetwork, which factor drives it
/// and with which sign.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatePattern {
    factor_ids: Vec<usize>,
    signs: Vec<i8>,
}

impl StatePattern {
    pub fn new(factor_ids: Vec<usize>, signs: Vec<i8>) -> Result<Self> {
        if factor_ids.is_empty() || factor_ids.len() != signs.len() {
            return Err(Error::dim("factor ids and signs must be non-empty and equally long"));
        }
        if signs.iter().any(|s| *s != 1 && *s != -1) {
            return Err(Error::param("signs must be +1 or -1"));
        }
        Ok(StatePattern { factor_ids, signs })
    }

    pub fn n_subnetworks(&self) -> usize {
        self.factor_ids.len()
    }

    pub fn factor_ids(&self) -> &[usize] {
        &self.factor_ids
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    /// Number of factor draws needed per time point.
    pub fn n_factors(&self) -> usize {
        self.factor_ids.iter().max().copied().unwrap_or(0) + 1
    }

    /// The connectivity matrix this pattern implies: entries in
    /// `{-1, 0, +1}`, unit diagonal, +1 within a subnetwork, the sign
    /// product between subnetworks sharing a factor, 0 otherwise.
    pub fn implied_fc(&self, n_rois: usize) -> Result<Array2<f64>> {
        if n_rois != self.n_subnetworks() * SUBNETWORK_SIZE {
            return Err(Error::dim(format!(
                "pattern covers {} subnetworks ({} ROIs), asked for {n_rois} ROIs",
                self.n_subnetworks(),
                self.n_subnetworks() * SUBNETWORK_SIZE
            )));
        }
        let mut fc = Array2::zeros((n_rois, n_rois));
        for i in 0..n_rois {
            let bi = i / SUBNETWORK_SIZE;
            for j in 0..n_rois {
                let bj = j / SUBNETWORK_SIZE;
                fc[[i, j]] = if self.factor_ids[bi] == self.factor_ids[bj] {
                    f64::from(self.signs[bi] * self.signs[bj])
                } else {
                    0.0
                };
            }
        }
        Ok(fc)
    }
}

/// Hidden state labels for one subject, 0-based, one per time point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSequence {
    labels: Vec<usize>,
    n_states: usize,
}

impl StateSequence {
    pub fn new(labels: Vec<usize>, n_states: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::dim("state sequence must be non-empty"));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= n_states) {
            return Err(Error::param(format!("label {bad} out of range for {n_states} states")));
        }
        Ok(StateSequence { labels, n_states })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Samples `M` pairwise-distinct state patterns (distinct in their implied
/// connectivity). Factor counts are drawn so that shared factors, opposite
/// signs and disjoint factors are all reachable, i.e. every relation value
/// in `{-1, 0, +1}` can occur between subnetworks.
pub fn generate_state_patterns(spec: &SimulationSpec, seed: u64) -> Result<Vec<StatePattern>> {
    spec.validate()?;
    let b = spec.n_subnetworks();
    let m = spec.n_states;
    let mut rng = rng_from(seed);
    let mut patterns: Vec<StatePattern> = Vec::with_capacity(m);
    let mut implied: Vec<Array2<f64>> = Vec::with_capacity(m);
    let max_attempts = 200 * m;
    let mut attempts = 0;
    while patterns.len() < m {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::degenerate(format!(
                "could not sample {m} distinct state patterns over {b} subnetworks in {max_attempts} attempts"
            )));
        }
        let n_factors = if b == 2 { rng.random_range(1..=2) } else { rng.random_range(2..b) };
        let factor_ids: Vec<usize> = (0..b).map(|_| rng.random_range(0..n_factors)).collect();
        let signs: Vec<i8> = (0..b).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        let candidate = StatePattern { factor_ids, signs };
        let fc = candidate.implied_fc(spec.n_rois)?;
        if implied.iter().any(|seen| seen == &fc) {
            continue;
        }
        implied.push(fc);
        patterns.push(candidate);
    }
    Ok(patterns)
}

/// Rounds a raw Gamma draw to a dwell length: round half up, floor at 1.
#[inline]
fn round_dwell(raw: f64) -> usize {
    (raw + 0.5).floor().max(1.0) as usize
}

/// Draws `count` dwell lengths exactly as the sequence generator does.
pub fn sample_dwells(count: usize, shape: f64, scale: f64, seed: u64) -> Result<Vec<usize>> {
    if !(shape.is_finite() && shape > 0.0 && scale.is_finite() && scale > 0.0) {
        return Err(Error::param("gamma shape and scale must be positive"));
    }
    let gamma = Gamma::new(shape, scale).map_err(|e| Error::param(e.to_string()))?;
    let mut rng = rng_from(seed);
    Ok((0..count).map(|_| round_dwell(gamma.sample(&mut rng))).collect())
}

/// Markov state sequence: uniform initial state, Gamma dwell lengths
/// (rounded half up, at least 1), uniform jumps among the other `M - 1`
/// states. The final dwell is truncated at `T`.
pub fn generate_state_sequence(spec: &SimulationSpec, seed: u64) -> Result<StateSequence> {
    spec.validate()?;
    let m = spec.n_states;
    let t = spec.n_timepoints;
    let gamma =
        Gamma::new(spec.gamma_shape, spec.gamma_scale).map_err(|e| Error::param(e.to_string()))?;
    let mut rng = rng_from(seed);
    let mut labels = Vec::with_capacity(t);
    let mut current = rng.random_range(0..m);
    while labels.len() < t {
        let dwell = round_dwell(gamma.sample(&mut rng));
        let take = dwell.min(t - labels.len());
        labels.extend(std::iter::repeat_n(current, take));
        if labels.len() < t {
            let step = rng.random_range(0..m - 1);
            current = if step >= current { step + 1 } else { step };
        }
    }
    StateSequence::new(labels, m)
}

/// Adds i.i.d. `N(0, sigma^2)` noise to every sample. `sigma = 0` returns
/// the input unchanged.
pub fn add_noise(ts: &RoiTimeSeries, sigma: f64, seed: u64) -> Result<RoiTimeSeries> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::param(format!("noise sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(ts.clone());
    }
    let mut rng = rng_from(seed);
    let mut values = ts.values().to_owned();
    for v in values.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += sigma * z;
    }
    RoiTimeSeries::new(values, ts.roi_labels().to_vec(), ts.sampling_period())
}

/// Builds one subject's signal from patterns and a state sequence: per time
/// point one standard normal draw per latent factor of the active state,
/// ROI value `sign * draw`, then additive noise at `spec.noise_sigma`.
pub fn synthesize_bold(
    patterns: &[StatePattern],
    sequence: &StateSequence,
    spec: &SimulationSpec,
    seed: u64,
) -> Result<RoiTimeSeries> {
    spec.validate()?;
    if patterns.len() != spec.n_states || sequence.n_states() != spec.n_states {
        return Err(Error::dim(format!(
            "{} patterns / {} sequence states for a {}-state spec",
            patterns.len(),
            sequence.n_states(),
            spec.n_states
        )));
    }
    if sequence.len() != spec.n_timepoints {
        return Err(Error::dim(format!(
            "sequence length {} does not match spec length {}",
            sequence.len(),
            spec.n_timepoints
        )));
    }
    let b = spec.n_subnetworks();
    if patterns.iter().any(|p| p.n_subnetworks() != b) {
        return Err(Error::dim("pattern subnetwork count does not match spec"));
    }

    let n = spec.n_rois;
    let t = spec.n_timepoints;
    let mut values = Array2::zeros((n, t));
    let mut rng = rng_from(derive_seed(seed, "signal", 0));
    let mut draws = Vec::new();
    for (ti, &state) in sequence.labels().iter().enumerate() {
        let pattern = &patterns[state];
        draws.clear();
        draws.extend((0..pattern.n_factors()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        for i in 0..n {
            let subnet = i / SUBNETWORK_SIZE;
            values[[i, ti]] =
                f64::from(pattern.signs()[subnet]) * draws[pattern.factor_ids()[subnet]];
        }
    }
    let clean = RoiTimeSeries::from_values(values)?;
    add_noise(&clean, spec.noise_sigma, derive_seed(seed, "noise", 0))
}

/// One generated subject: signal, ground-truth labels, provenance.
#[derive(Debug, Clone)]
pub struct SimulatedSubject {
    pub subject_index: usize,
    pub group_index: usize,
    pub series: RoiTimeSeries,
    pub labels: StateSequence,
}

/// A full simulated dataset: shared patterns, all subjects in group order.
#[derive(Debug, Clone)]
pub struct Dataset {
    spec: SimulationSpec,
    patterns: Vec<StatePattern>,
    subjects: Vec<SimulatedSubject>,
}

impl Dataset {
    pub fn spec(&self) -> &SimulationSpec {
        &self.spec
    }

    pub fn patterns(&self) -> &[StatePattern] {
        &self.patterns
    }

    /// Implied connectivity matrix of every state, in state order.
    pub fn pattern_fcs(&self) -> Vec<Array2<f64>> {
        self.patterns
            .iter()
            .map(|p| p.implied_fc(self.spec.n_rois).expect("patterns match spec"))
            .collect()
    }

    pub fn subjects(&self) -> &[SimulatedSubject] {
        &self.subjects
    }

    /// The subjects of group `g` (consecutive block partition).
    pub fn group(&self, g: usize) -> &[SimulatedSubject] {
        let spg = self.spec.subjects_per_group;
        &self.subjects[g * spg..(g + 1) * spg]
    }

    pub fn n_groups(&self) -> usize {
        self.spec.n_groups
    }
}

/// Seed for subject `i`, pinned as `dataset seed XOR subject index`.
pub fn subject_seed(spec_seed: u64, subject_index: usize) -> u64 {
    spec_seed ^ subject_index as u64
}

/// Seed the shared pattern set is sampled from.
pub fn pattern_seed(spec_seed: u64) -> u64 {
    derive_seed(spec_seed, "patterns", 0)
}

/// Generates one subject against a shared pattern set. Used by
/// [`generate_dataset`] and by streaming pipelines that avoid materializing
/// every subject at once; both produce bit-identical subjects.
pub fn generate_subject(
    spec: &SimulationSpec,
    patterns: &[StatePattern],
    subject_index: usize,
) -> Result<SimulatedSubject> {
    if subject_index >= spec.n_subjects() {
        return Err(Error::param(format!(
            "subject index {subject_index} out of range for {} subjects",
            spec.n_subjects()
        )));
    }
    let s = subject_seed(spec.seed, subject_index);
    let labels = generate_state_sequence(spec, derive_seed(s, "sequence", 0))?;
    let series = synthesize_bold(patterns, &labels, spec, derive_seed(s, "bold", 0))?;
    Ok(SimulatedSubject {
        subject_index,
        group_index: subject_index / spec.subjects_per_group,
        series,
        labels,
    })
}

/// Generates the full dataset: one shared pattern set, then every subject
/// from its own derived seed (parallel, order-independent).
pub fn generate_dataset(spec: &SimulationSpec) -> Result<Dataset> {
    spec.validate()?;
    let patterns = generate_state_patterns(spec, pattern_seed(spec.seed))?;
    let subjects: Vec<SimulatedSubject> = (0..spec.n_subjects())
        .into_par_iter()
        .map(|i| generate_subject(spec, &patterns, i))
        .collect::<Result<_>>()?;
    Ok(Dataset { spec: spec.clone(), patterns, subjects })
}

// ---------------------------------------------------------------------------
// On-disk dataset layout: manifest.json + per-subject signal and label CSVs.

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    spec: SimulationSpec,
    patterns: Vec<StatePattern>,
    subjects: Vec<SubjectEntry>,
}

#[derive(Serialize, Deserialize)]
struct SubjectEntry {
    subject_index: usize,
    group_index: usize,
    seed: u64,
    series_csv: String,
    labels_csv: String,
}

/// Writes `manifest.json`, one signal CSV and one label CSV per subject.
/// Returns the manifest path.
pub fn write_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<std::path::PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(dataset.subjects.len());
    for subject in &dataset.subjects {
        let series_csv = format!("subject_{:04}.csv", subject.subject_index);
        let labels_csv = format!("labels_{:04}.csv", subject.subject_index);
        save_csv(&subject.series, dir.join(&series_csv))?;
        let mut text = String::from("state\n");
        for l in subject.labels.labels() {
            text.push_str(&l.to_string());
            text.push('\n');
        }
        let labels_path = dir.join(&labels_csv);
        fs::write(&labels_path, text).map_err(|e| Error::io(&labels_path, e))?;
        entries.push(SubjectEntry {
            subject_index: subject.subject_index,
            group_index: subject.group_index,
            seed: subject_seed(dataset.spec.seed, subject.subject_index),
            series_csv,
            labels_csv,
        });
    }
    let manifest = DatasetManifest {
        spec: dataset.spec.clone(),
        patterns: dataset.patterns.clone(),
        subjects: entries,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::format(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Reads a dataset written by [`write_dataset`]. Signals and labels
/// round-trip exactly.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(format!("{}: {e}", manifest_path.display())))?;
    manifest.spec.validate()?;
    if manifest.patterns.len() != manifest.spec.n_states {
        return Err(Error::format(format!(
            "manifest has {} patterns for {} states",
            manifest.patterns.len(),
            manifest.spec.n_states
        )));
    }
    let mut subjects = Vec::with_capacity(manifest.subjects.len());
    for entry in &manifest.subjects {
        let series = load_csv(dir.join(&entry.series_csv), CsvLayout::RoisInRows)?;
        let label_path = dir.join(&entry.labels_csv);
        let raw = fs::read_to_string(&label_path).map_err(|e| Error::io(&label_path, e))?;
        let mut labels = Vec::new();
        for (i, line) in raw.lines().enumerate() {
            let line = line.trim();
            if i == 0 && line == "state" {
                continue;
            }
            if line.is_empty() {
                continue;
            }
            labels.push(line.parse::<usize>().map_err(|_| Error::ParseCell {
                row: i + 1,
                col: 1,
                reason: format!("{line:?} is not a state label"),
            })?);
        }
        if series.n_rois() != manifest.spec.n_rois
            || series.n_timepoints() != manifest.spec.n_timepoints
            || labels.len() != manifest.spec.n_timepoints
        {
            return Err(Error::dim(format!(
                "subject {} does not match the manifest spec",
                entry.subject_index
            )));
        }
        subjects.push(SimulatedSubject {
            subject_index: entry.subject_index,
            group_index: entry.group_index,
            series,
            labels: StateSequence::new(labels, manifest.spec.n_states)?,
        });
    }
    Ok(Dataset { spec: manifest.spec, patterns: manifest.patterns, subjects })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_spec() -> SimulationSpec {
        SimulationSpec {
            n_states: 4,
            n_rois: 30,
            n_timepoints: 200,
            noise_sigma: 0.0,
            n_groups: 2,
            subjects_per_group: 2,
            seed: 7,
            ..SimulationSpec::default()
        }
    }

    #[test]
    fn spec_validation_catches_bad_parameters() {
        let base = desk_spec();
        for broken in [
            SimulationSpec { n_states: 1, ..base.clone() },
            SimulationSpec { n_rois: 25, ..base.clone() },
            SimulationSpec { n_rois: 10, ..base.clone() },
            SimulationSpec { n_timepoints: 1, ..base.clone() },
            SimulationSpec { gamma_shape: 0.0, ..base.clone() },
            SimulationSpec { gamma_scale: -1.0, ..base.clone() },
            SimulationSpec { noise_sigma: -0.1, ..base.clone() },
            SimulationSpec { n_groups: 0, ..base.clone() },
        ] {
            assert!(broken.validate().is_err(), "{broken:?} should be invalid");
        }
        assert!(base.validate().is_ok());
    }

    #[test]
    fn patterns_are_distinct_with_valid_entries() {
        let spec = SimulationSpec { n_rois: 90, n_states: 6, ..desk_spec() };
        let patterns = generate_state_patterns(&spec, 3).unwrap();
        assert_eq!(patterns.len(), 6);
        let fcs: Vec<Array2<f64>> = patterns.iter().map(|p| p.implied_fc(90).unwrap()).collect();
        for (i, fc) in fcs.iter().enumerate() {
            for v in fc.iter() {
                assert!(*v == -1.0 || *v == 0.0 || *v == 1.0);
            }
            for d in 0..90 {
                assert_eq!(fc[[d, d]], 1.0);
            }
            for other in fcs.iter().skip(i + 1) {
                assert_ne!(fc, other);
            }
        }
        // Deterministic under the seed, different across seeds.
        let again = generate_state_patterns(&spec, 3).unwrap();
        assert_eq!(patterns, again);
        let other = generate_state_patterns(&spec, 4).unwrap();
        assert_ne!(patterns, other);
        // All three relation values occur somewhere in the batch.
        let mut seen = std::collections::BTreeSet::new();
        for fc in &fcs {
            for i in 0..90 {
                for j in 0..i {
                    seen.insert(fc[[i, j]] as i8);
                }
            }
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![-1, 0, 1]);
    }

    #[test]
    fn single_subnetwork_is_rejected() {
        let spec = SimulationSpec { n_rois: 10, ..desk_spec() };
        assert!(matches!(generate_state_patterns(&spec, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn dwell_rounding_is_half_up_with_floor_one() {
        for (raw, want) in
            [(0.2, 1), (0.5, 1), (0.51, 1), (1.49, 1), (1.5, 2), (2.49, 2), (2.5, 3), (49.5, 50)]
        {
            assert_eq!(round_dwell(raw), want, "raw {raw}");
        }
    }

    #[test]
    fn dwell_sample_matches_gamma_moments() {
        let dwells = sample_dwells(10_000, 10.0, 5.0, 11).unwrap();
        let mean = dwells.iter().sum::<usize>() as f64 / dwells.len() as f64;
        assert!((mean - 50.0).abs() < 2.0, "mean dwell {mean}");
        assert!(dwells.iter().all(|&d| d >= 1));
    }

    #[test]
    fn sequences_cover_t_without_self_transitions() {
        let spec = desk_spec();
        let seq = generate_state_sequence(&spec, 5).unwrap();
        assert_eq!(seq.len(), 200);
        assert!(seq.labels().iter().all(|&l| l < 4));

        // Runs never glue two equal states together.
        let mut prev = None;
        for run in runs_of(seq.labels()) {
            assert_ne!(Some(run.0), prev);
            prev = Some(run.0);
        }

        // Two states alternate strictly.
        let two = SimulationSpec { n_states: 2, ..desk_spec() };
        let seq = generate_state_sequence(&two, 9).unwrap();
        let r: Vec<(usize, usize)> = runs_of(seq.labels());
        for pair in r.windows(2) {
            assert_ne!(pair[0].0, pair[1].0);
        }
    }

    fn runs_of(labels: &[usize]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=labels.len() {
            if i == labels.len() || labels[i] != labels[start] {
                out.push((labels[start], i - start));
                start = i;
            }
        }
        out
    }

    #[test]
    fn noiseless_segments_realize_the_implied_correlations() {
        let spec = desk_spec();
        let patterns = generate_state_patterns(&spec, pattern_seed(spec.seed)).unwrap();
        let subject = generate_subject(&spec, &patterns, 0).unwrap();
        let x = subject.series.values();
        let mut checked = 0;
        let mut offset = 0;
        for (state, len) in runs_of(subject.labels.labels()) {
            if len >= 3 {
                let fc = patterns[state].implied_fc(spec.n_rois).unwrap();
                for (i, j) in [(0usize, 1usize), (0, 10), (0, 20), (10, 25), (5, 29)] {
                    let a = x.slice(ndarray::s![i, offset..offset + len]);
                    let b = x.slice(ndarray::s![j, offset..offset + len]);
                    let implied = fc[[i, j]];
                    if implied != 0.0 {
                        let r = pearson(&a.to_vec(), &b.to_vec());
                        assert!(
                            (r - implied).abs() < 1e-9,
                            "state {state} pair ({i},{j}): corr {r} vs implied {implied}"
                        );
                        checked += 1;
                    }
                }
            }
            offset += len;
        }
        assert!(checked > 0, "no correlated pairs checked");
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut num = 0.0;
        let mut da = 0.0;
        let mut db = 0.0;
        for (x, y) in a.iter().zip(b) {
            num += (x - ma) * (y - mb);
            da += (x - ma) * (x - ma);
            db += (y - mb) * (y - mb);
        }
        num / (da.sqrt() * db.sqrt())
    }

    #[test]
    fn noise_changes_values_with_advertised_moments() {
        let spec = SimulationSpec { n_timepoints: 400, ..desk_spec() };
        let patterns = generate_state_patterns(&spec, pattern_seed(spec.seed)).unwrap();
        let clean = generate_subject(&spec, &patterns, 0).unwrap().series;
        assert_eq!(add_noise(&clean, 0.0, 1).unwrap().values(), clean.values());
        let noisy = add_noise(&clean, 0.8, 1).unwrap();
        let diffs: Vec<f64> = noisy
            .values()
            .iter()
            .zip(clean.values().iter())
            .map(|(a, b)| a - b)
            .collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "noise mean {mean}");
        assert!((var.sqrt() - 0.8).abs() < 0.02, "noise sd {}", var.sqrt());
        assert!(add_noise(&clean, -1.0, 1).is_err());
    }

    #[test]
    fn dataset_generation_is_deterministic_and_partitioned() {
        let spec = desk_spec();
        let a = generate_dataset(&spec).unwrap();
        let b = generate_dataset(&spec).unwrap();
        assert_eq!(a.subjects().len(), 4);
        for (x, y) in a.subjects().iter().zip(b.subjects()) {
            assert_eq!(x.series.values(), y.series.values());
            assert_eq!(x.labels, y.labels);
        }
        assert_eq!(a.group(0).len(), 2);
        assert_eq!(a.group(1)[0].subject_index, 2);
        assert_eq!(a.group(1)[0].group_index, 1);

        // Lazy regeneration of one subject matches the dataset path bit for bit.
        let patterns = generate_state_patterns(&spec, pattern_seed(spec.seed)).unwrap();
        let solo = generate_subject(&spec, &patterns, 3).unwrap();
        assert_eq!(solo.series.values(), a.subjects()[3].series.values());
        assert_eq!(solo.labels, a.subjects()[3].labels);

        // A different master seed changes the data.
        let other = generate_dataset(&SimulationSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(other.subjects()[0].series.values(), a.subjects()[0].series.values());
    }

    #[test]
    fn dataset_round_trips_through_disk() {
        let spec = SimulationSpec { n_timepoints: 50, ..desk_spec() };
        let dataset = generate_dataset(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(&dataset, dir.path()).unwrap();
        assert!(manifest.ends_with("manifest.json"));
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.spec(), dataset.spec());
        assert_eq!(back.patterns(), dataset.patterns());
        for (x, y) in back.subjects().iter().zip(dataset.subjects()) {
            assert_eq!(x.series.values(), y.series.values());
            assert_eq!(x.labels, y.labels);
            assert_eq!(x.group_index, y.group_index);
        }
    }
}
