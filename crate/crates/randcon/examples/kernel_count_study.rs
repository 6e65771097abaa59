//! How many random kernels are enough? Sweep the bank size under heavy
//! noise; recovery should improve (then saturate) as the count grows.
//!
//!     cargo run -p randcon --example kernel_count_study

use std::collections::BTreeMap;

use randcon::connectivity::FcMethod;
use randcon::harness::plan::{ClusteringParams, EstimatorParams, Sweep};
use randcon::harness::{run_plan, ExperimentPlan, MetricKind};
use randcon::simulate::SimulationSpec;

fn main() -> anyhow::Result<()> {
    let plan = ExperimentPlan {
        name: "example-kernel-count".into(),
        base: SimulationSpec {
            n_rois: 30,
            n_timepoints: 300,
            noise_sigma: 1.6,
            n_groups: 6,
            subjects_per_group: 3,
            ..SimulationSpec::default()
        },
        sweep: Sweep::KernelCount(vec![5, 20, 80]),
        methods: vec![FcMethod::RandCon],
        estimator: EstimatorParams::default(),
        metrics: vec![MetricKind::Ari],
        clustering: ClusteringParams { n_restarts: 20, max_iters: 20 },
        seed: 42,
        output_dir: None,
    };
    let out = std::path::Path::new("target/example-output/kernel_count_study");
    let manifest = run_plan(&plan, out)?;
    assert!(manifest.failures.is_empty());

    let mut reader = csv::Reader::from_path(out.join("results.csv"))?;
    let mut by_count: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for row in reader.deserialize() {
        let row: randcon::harness::ResultRow = row?;
        by_count.entry(row.sweep_value.parse()?).or_default().push(row.value);
    }
    println!("mean ARI under heavy noise (sigma 1.6):");
    for (count, values) in by_count {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        println!("  {count:3} kernels: {mean:.3}");
    }
    Ok(())
}
