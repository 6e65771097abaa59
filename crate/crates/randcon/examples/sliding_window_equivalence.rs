//! The random-convolution estimator contains sliding-window correlation as
//! a special case: with the one-hot kernel bank (one unit impulse per lag)
//! and valid padding, the K kernel responses at a frame are exactly the W
//! samples of that window, so the Pearson correlation over kernels equals
//! the windowed Pearson correlation.
//!
//!     cargo run -p randcon --example sliding_window_equivalence

use randcon::connectivity::{randcon_fc_direct, sliding_window_fc};
use randcon::convolution::{one_hot_bank, Padding};
use randcon::simulate::{generate_dataset, SimulationSpec};

fn main() -> anyhow::Result<()> {
    let spec = SimulationSpec {
        n_states: 3,
        n_rois: 20,
        n_timepoints: 160,
        n_groups: 1,
        subjects_per_group: 1,
        ..SimulationSpec::default()
    };
    let dataset = generate_dataset(&spec)?;
    let ts = &dataset.subjects()[0].series;

    for width in [3usize, 5, 9] {
        let bank = one_hot_bank(width)?;
        let from_kernels = randcon_fc_direct(ts, &bank, Padding::Valid)?;
        let from_windows = sliding_window_fc(ts, width, 1)?;
        assert_eq!(from_kernels.n_frames(), from_windows.n_frames());

        let a = from_kernels.values();
        let b = from_windows.values();
        let max_diff = a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        println!(
            "width {width}: {} frames, max |difference| = {max_diff:.2e}",
            from_windows.n_frames()
        );
    }
    Ok(())
}
