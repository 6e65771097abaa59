//! Full recovery scorecard for one simulated group: cluster the pooled
//! frames, match states, then report agreement along the time axis (ARI,
//! overlap), pattern space (MSE, cosine) and dwell structure (sojourn KL).
//!
//!     cargo run -p randcon --example evaluate_recovery

use ndarray::{Array2, Axis};
use randcon::clustering::{kmeans, match_states};
use randcon::connectivity::{lower_triangle, randcon_fc_direct};
use randcon::convolution::{sample_gaussian_bank, Padding};
use randcon::metrics::{ari, matched_pairs, overlap_ratio, sojourn_kl, state_cosine, state_mse};
use randcon::simulate::{generate_dataset, SimulationSpec};

fn main() -> anyhow::Result<()> {
    let spec = SimulationSpec {
        n_states: 4,
        n_rois: 30,
        n_timepoints: 400,
        noise_sigma: 0.6,
        n_groups: 1,
        subjects_per_group: 5,
        ..SimulationSpec::default()
    };
    let dataset = generate_dataset(&spec)?;
    let bank = sample_gaussian_bank(40, 3, 7)?;

    let mut parts = Vec::new();
    let mut truth_labels: Vec<usize> = Vec::new();
    for subject in dataset.subjects() {
        parts.push(randcon_fc_direct(&subject.series, &bank, Padding::Same)?.lower_triangles());
        truth_labels.extend_from_slice(subject.labels.labels());
    }
    let views: Vec<_> = parts.iter().map(|a| a.view()).collect();
    let pooled = ndarray::concatenate(Axis(0), &views)?;

    let result = kmeans(pooled.view(), spec.n_states, 20, 20, 7)?;

    let d = spec.n_rois * (spec.n_rois - 1) / 2;
    let mut truth = Array2::zeros((spec.n_states, d));
    for (i, fc) in dataset.pattern_fcs().iter().enumerate() {
        truth.row_mut(i).assign(&ndarray::ArrayView1::from(&lower_triangle(fc.view())[..]));
    }
    let matching = match_states(result.centroids.view(), truth.view())?;
    let pairs = matched_pairs(result.centroids.view(), truth.view(), &matching)?;

    println!("adjusted rand index   {:+.4}", ari(&result.labels, &truth_labels)?);
    println!("overlap ratio          {:.4}", overlap_ratio(&result.labels, &truth_labels, &matching)?);
    println!("state pattern MSE      {:.4}", state_mse(&pairs)?);
    println!("state pattern cosine   {:.4}", state_cosine(&pairs)?);

    // Dwell-time distributions compare per subject so runs cannot straddle
    // subject boundaries; average the per-subject divergences.
    let t = spec.n_timepoints;
    let mut kl = 0.0;
    for (s, subject) in dataset.subjects().iter().enumerate() {
        let slice = &result.labels[s * t..(s + 1) * t];
        let mapped: Vec<usize> = slice.iter().map(|&l| matching.permutation[l]).collect();
        kl += sojourn_kl(&mapped, subject.labels.labels(), spec.n_states)?;
    }
    println!("sojourn KL             {:.4}", kl / dataset.subjects().len() as f64);
    Ok(())
}
