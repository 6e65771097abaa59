//! Kernel width comparison. Widths change the frame count under valid
//! padding, so label-sequence agreement is meaningless across widths; the
//! study scores dwell structure (sojourn KL) and pattern recovery instead.
//!
//!     cargo run -p randcon --example kernel_size_study

use std::collections::BTreeMap;

use randcon::connectivity::FcMethod;
use randcon::convolution::Padding;
use randcon::harness::plan::{ClusteringParams, EstimatorParams, Sweep};
use randcon::harness::{kernel_size_study, ExperimentPlan, MetricKind};
use randcon::simulate::SimulationSpec;

fn main() -> anyhow::Result<()> {
    let plan = ExperimentPlan {
        name: "example-kernel-size".into(),
        base: SimulationSpec {
            n_rois: 30,
            n_timepoints: 300,
            n_groups: 4,
            subjects_per_group: 3,
            ..SimulationSpec::default()
        },
        sweep: Sweep::KernelWidth(vec![4, 6, 9]),
        methods: vec![FcMethod::RandCon, FcMethod::SlidingWindow],
        estimator: EstimatorParams { padding: Padding::Valid, ..EstimatorParams::default() },
        metrics: vec![MetricKind::SojournKl, MetricKind::StateCosine],
        clustering: ClusteringParams { n_restarts: 20, max_iters: 20 },
        seed: 42,
        output_dir: None,
    };
    let out = std::path::Path::new("target/example-output/kernel_size_study");
    let manifest = kernel_size_study(&plan, out)?;
    assert!(manifest.failures.is_empty());

    let mut reader = csv::Reader::from_path(out.join("results.csv"))?;
    let mut cells: BTreeMap<(usize, String, String), Vec<f64>> = BTreeMap::new();
    for row in reader.deserialize() {
        let row: randcon::harness::ResultRow = row?;
        cells
            .entry((row.sweep_value.parse()?, row.method, row.metric))
            .or_default()
            .push(row.value);
    }
    for ((width, method, metric), values) in cells {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        println!("width {width}: {method:15} {metric:13} {mean:.4}");
    }
    Ok(())
}
