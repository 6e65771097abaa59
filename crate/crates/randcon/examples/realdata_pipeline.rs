//! The recorded-series pipeline end to end: per-subject estimation with a
//! large kernel bank, elbow selection of the state count, pooled clustering,
//! per-subject summaries, and a between-group comparison on a covariate.
//! Simulated subjects stand in for recordings here.
//!
//!     cargo run -p randcon --example realdata_pipeline

use std::collections::BTreeMap;

use randcon::harness::realdata::write_outcome;
use randcon::harness::{realdata_pipeline, RealDataConfig};
use randcon::simulate::{generate_dataset, SimulationSpec};

fn main() -> anyhow::Result<()> {
    let spec = SimulationSpec {
        n_states: 3,
        n_rois: 20,
        n_timepoints: 300,
        noise_sigma: 0.5,
        n_groups: 1,
        subjects_per_group: 8,
        ..SimulationSpec::default()
    };
    let dataset = generate_dataset(&spec)?;
    let subjects: Vec<(String, _)> = dataset
        .subjects()
        .iter()
        .map(|s| (format!("sub-{:02}", s.subject_index), s.series.clone()))
        .collect();

    // A fake two-group covariate, as a clinical table would provide.
    let covariate: BTreeMap<String, String> = subjects
        .iter()
        .enumerate()
        .map(|(i, (name, _))| {
            (name.clone(), if i % 2 == 0 { "patient" } else { "control" }.to_string())
        })
        .collect();

    let config = RealDataConfig {
        kernel_count: 256,
        k_range: (2, 6),
        n_restarts: 20,
        max_iters: 20,
        ..RealDataConfig::default()
    };
    let outcome = realdata_pipeline(&subjects, &config, Some(&covariate))?;

    println!("elbow selected k = {}", outcome.selected_k);
    if let Some(elbow) = &outcome.elbow {
        for (k, inertia) in &elbow.inertias {
            println!("  k {k}: inertia {inertia:.1}");
        }
    }
    for s in &outcome.subject_metrics {
        println!(
            "{}: occupancy {:?}, variability {:.4}",
            s.subject,
            s.fraction_of_time.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
            s.fc_variability
        );
    }
    if let Some(rows) = &outcome.comparison {
        println!("patient vs control (Mann-Whitney, two-sided):");
        for row in rows {
            println!("  {:28} U {:6.1}  p {:.3}", row.metric, row.statistic, row.p_value);
        }
    }

    let out = std::path::Path::new("target/example-output/realdata_pipeline");
    write_outcome(&outcome, out)?;
    println!("written to {}", out.display());
    Ok(())
}
