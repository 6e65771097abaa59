//! Estimate dynamic connectivity for one subject with all four methods and
//! compare their frame grids.
//!
//!     cargo run -p randcon --example estimate_methods

use randcon::connectivity::{mtd_fc, phase_sync_fc, randcon_fc_direct, sliding_window_fc};
use randcon::convolution::{sample_gaussian_bank, Padding};
use randcon::simulate::{generate_dataset, SimulationSpec};

fn main() -> anyhow::Result<()> {
    let spec = SimulationSpec {
        n_states: 3,
        n_rois: 20,
        n_timepoints: 200,
        n_groups: 1,
        subjects_per_group: 1,
        ..SimulationSpec::default()
    };
    let dataset = generate_dataset(&spec)?;
    let ts = &dataset.subjects()[0].series;

    let width = 3;
    let bank = sample_gaussian_bank(40, width, 7)?;
    let series = [
        ("randcon (same padding)", randcon_fc_direct(ts, &bank, Padding::Same)?),
        ("randcon (valid padding)", randcon_fc_direct(ts, &bank, Padding::Valid)?),
        ("sliding-window", sliding_window_fc(ts, width, 1)?),
        ("mtd", mtd_fc(ts, width - 1, 1)?),
        ("phase-sync", phase_sync_fc(ts)?),
    ];

    println!("{} regions, {} time points, width {width}", spec.n_rois, spec.n_timepoints);
    for (label, fcs) in &series {
        // Every frame is a symmetric correlation-like matrix; show one
        // connection's trajectory summary.
        let values = fcs.values();
        let pair: Vec<f64> = (0..fcs.n_frames()).map(|t| values[[t, 0, 1]]).collect();
        let mean = pair.iter().sum::<f64>() / pair.len() as f64;
        println!(
            "{label:24} {:4} frames, conn(0,1) mean {mean:+.3}, degenerate pairs {}",
            fcs.n_frames(),
            fcs.degenerate_pairs()
        );
    }
    Ok(())
}
