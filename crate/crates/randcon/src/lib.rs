//! Dynamic functional connectivity from random convolutions.
//!
//! Sliding-window correlation, the default way to track time-varying
//! coupling between regions of a multivariate time series, forces a choice
//! of window length and blurs everything shorter than it. The estimator at
//! the center of this crate avoids the window: each region's signal is
//! convolved with a bank of `K` random Gaussian kernels, and the coupling of
//! two regions at time `t` is the Pearson correlation of their
//! `K`-dimensional feature vectors at that time point. With the one-hot
//! (identity) bank this reduces exactly to sliding-window correlation, which
//! the test suite pins down to the last bit; with random kernels it reacts
//! to state changes at single-sample resolution.
//!
//! The crate ships everything needed to study such estimators end to end:
//!
//! - [`timeseries`]: region-by-time containers, CSV input/output, z-scoring.
//! - [`convolution`]: kernel banks (random Gaussian, one-hot) and same/valid
//!   padded convolution.
//! - [`connectivity`]: the random-convolution estimator plus sliding-window,
//!   multiplication-of-temporal-derivatives and phase-synchronization
//!   baselines, all returning frame-by-frame connectivity series.
//! - [`simulate`]: a hidden-Markov ground-truth generator with subnetwork
//!   block structure, Gamma dwell times and known state patterns.
//! - [`clustering`]: seeded k-means with restarts, Davies-Bouldin selection,
//!   an inertia-elbow state-count heuristic, optimal state matching and PCA
//!   projection.
//! - [`metrics`]: partition agreement (adjusted Rand, overlap), centroid
//!   error (MSE, cosine), dwell-distribution divergence, per-subject
//!   connectivity statistics and rank tests.
//! - [`harness`]: declarative experiment plans (swept parameter, methods,
//!   metrics), named presets, a deterministic parallel runner, and a
//!   pipeline for recorded (non-simulated) series.
//! - [`report`]: per-metric summary tables with significance stars and
//!   deterministic SVG charts.
//!
//! Every run is reproducible: all randomness flows from explicit seeds
//! through labeled derivations ([`seed::derive_seed`]), parallel reductions
//! are order-independent, and outputs carry no timestamps, so repeated runs
//! of the same plan are byte-identical regardless of thread count.
//!
//! # Example
//!
//! Estimate connectivity and recover states from a simulated dataset:
//!
//! ```
//! use randcon::simulate::{generate_dataset, SimulationSpec};
//! use randcon::convolution::{sample_gaussian_bank, Padding};
//! use randcon::connectivity::randcon_fc_direct;
//! use randcon::clustering::kmeans;
//!
//! # fn main() -> randcon::Result<()> {
//! let spec = SimulationSpec {
//!     n_states: 3,
//!     n_rois: 20,
//!     n_timepoints: 200,
//!     n_groups: 1,
//!     subjects_per_group: 2,
//!     ..SimulationSpec::default()
//! };
//! let dataset = generate_dataset(&spec)?;
//! let bank = sample_gaussian_bank(16, 3, 7)?;
//! let frames: Vec<_> = dataset
//!     .subjects()
//!     .iter()
//!     .map(|s| randcon_fc_direct(&s.series, &bank, Padding::Same))
//!     .collect::<randcon::Result<_>>()?;
//! let mats: Vec<_> = frames.iter().map(|f| f.lower_triangles()).collect();
//! let views: Vec<_> = mats.iter().map(|m| m.view()).collect();
//! let pooled = ndarray::concatenate(ndarray::Axis(0), &views).expect("consistent widths");
//! let states = kmeans(pooled.view(), 3, 20, 15, 7)?;
//! assert_eq!(states.centroids.nrows(), 3);
//! # Ok(())
//! # }
//! ```
//!
//! Runnable walkthroughs of each capability live in `examples/`
//! (`cargo run --release -p randcon --example sliding_window_equivalence`,
//! `... --example noise_sweep`, and so on), and the `randcon` binary exposes
//! the same pipeline as subcommands (`simulate`, `estimate`, `cluster`,
//! `evaluate`, `sweep`, `kernel-study`, `realdata`, `report`).

pub mod cli;
pub mod clustering;
pub mod connectivity;
pub mod convolution;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod report;
pub mod seed;
pub mod simulate;
pub mod timeseries;

pub use error::{Error, Result};
