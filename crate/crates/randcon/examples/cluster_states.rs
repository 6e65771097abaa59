//! Pool per-subject connectivity frames, cluster them into recurring
//! states, and match the recovered centroids to the generating patterns.
//!
//!     cargo run -p randcon --example cluster_states

use ndarray::{Array2, Axis};
use randcon::clustering::{kmeans, match_states};
use randcon::connectivity::{lower_triangle, randcon_fc_direct};
use randcon::convolution::{sample_gaussian_bank, Padding};
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
    for subject in dataset.subjects() {
        parts.push(randcon_fc_direct(&subject.series, &bank, Padding::Same)?.lower_triangles());
    }
    let views: Vec<_> = parts.iter().map(|a| a.view()).collect();
    let pooled = ndarray::concatenate(Axis(0), &views)?;
    println!("pooled {} frames of dimension {}", pooled.nrows(), pooled.ncols());

    let result = kmeans(pooled.view(), spec.n_states, 20, 20, 7)?;
    println!(
        "winning restart {} of {}: Davies-Bouldin {:.3}, inertia {:.1}",
        result.winning_restart, result.n_restarts, result.db_index, result.inertia
    );

    // Truth patterns as lower-triangle vectors, then optimal assignment.
    let d = spec.n_rois * (spec.n_rois - 1) / 2;
    let mut truth = Array2::zeros((spec.n_states, d));
    for (i, fc) in dataset.pattern_fcs().iter().enumerate() {
        truth.row_mut(i).assign(&ndarray::ArrayView1::from(&lower_triangle(fc.view())[..]));
    }
    let matching = match_states(result.centroids.view(), truth.view())?;
    println!(
        "cluster -> state permutation {:?}, total distance {:.2}",
        matching.permutation, matching.total_distance
    );
    Ok(())
}
