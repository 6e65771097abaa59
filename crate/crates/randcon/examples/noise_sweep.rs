//! Sweep observation noise and compare methods on state recovery. The same
//! clean signals are reused at every noise level, so the curve isolates the
//! effect of noise from sampling variation.
//!
//!     cargo run -p randcon --example noise_sweep

use std::collections::BTreeMap;

use randcon::connectivity::FcMethod;
use randcon::harness::plan::{ClusteringParams, EstimatorParams, Sweep};
use randcon::harness::{run_plan, ExperimentPlan, MetricKind};
use randcon::simulate::SimulationSpec;

fn main() -> anyhow::Result<()> {
    let plan = ExperimentPlan {
        name: "example-noise".into(),
        base: SimulationSpec {
            n_rois: 30,
            n_timepoints: 300,
            n_groups: 6,
            subjects_per_group: 3,
            ..SimulationSpec::default()
        },
        sweep: Sweep::NoiseSigma(vec![0.4, 0.8]),
        methods: vec![FcMethod::RandCon, FcMethod::SlidingWindow],
        estimator: EstimatorParams::default(),
        metrics: vec![MetricKind::Ari, MetricKind::StateCosine],
        clustering: ClusteringParams { n_restarts: 20, max_iters: 20 },
        seed: 42,
        output_dir: None,
    };
    let out = std::path::Path::new("target/example-output/noise_sweep");
    let manifest = run_plan(&plan, out)?;
    assert!(manifest.failures.is_empty());

    // Aggregate the long-format table into mean ARI per (noise, method).
    let mut reader = csv::Reader::from_path(out.join("results.csv"))?;
    let mut cells: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for row in reader.deserialize() {
        let row: randcon::harness::ResultRow = row?;
        if row.metric == "ari" {
            cells.entry((row.sweep_value, row.method)).or_default().push(row.value);
        }
    }
    println!("mean ARI over {} groups:", plan.base.n_groups);
    for ((noise, method), values) in cells {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        println!("  noise {noise}: {method:15} {mean:.3}");
    }
    println!("full table: {}", out.join("results.csv").display());
    Ok(())
}
