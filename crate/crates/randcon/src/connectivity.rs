//! Dynamic functional connectivity estimators.
//!
//! Four estimators produce an [`FcSeries`] (time-indexed stack of `N x N`
//! matrices) from an ROI time series:
//!
//! * [`randcon_fc`] / [`randcon_fc_direct`]: Pearson correlation across the
//!   `K` kernel responses of each ROI pair at every time point.
//! * [`sliding_window_fc`]: Pearson correlation over a moving window.
//! * [`mtd_fc`]: smoothed product of normalized temporal derivatives.
//! * [`phase_sync_fc`]: cosine of instantaneous phase differences.
//!
//! With the one-hot bank of width `W` and valid padding, the random
//! convolution estimator reproduces sliding-window correlation exactly: the
//! kernel responses at frame `t` are the raw window samples, so the Pearson
//! statistics coincide term for term.
//!
//! Correlation-style outputs stay inside `[-1, 1]` up to float dust and carry
//! a unit diagonal. A pair whose inputs have zero variance at some frame is
//! mapped to 0 there (never NaN) and counted in
//! [`FcSeries::degenerate_pairs`].

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::convolution::{kernel_response, window_start, FeatureTensor, KernelBank, Padding};
use crate::error::{Error, Result};
use crate::timeseries::RoiTimeSeries;

/// Estimator tags. String forms (`randcon`, `sliding-window`, `mtd`,
/// `phase-sync`) are shared by files, CLI flags and result tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FcMethod {
    #[serde(rename = "randcon")]
    RandCon,
    #[serde(rename = "sliding-window")]
    SlidingWindow,
    #[serde(rename = "mtd")]
    Mtd,
    #[serde(rename = "phase-sync")]
    PhaseSync,
}

impl FcMethod {
    pub const ALL: [FcMethod; 4] =
        [FcMethod::RandCon, FcMethod::SlidingWindow, FcMethod::Mtd, FcMethod::PhaseSync];

    pub fn as_str(self) -> &'static str {
        match self {
            FcMethod::RandCon => "randcon",
            FcMethod::SlidingWindow => "sliding-window",
            FcMethod::Mtd => "mtd",
            FcMethod::PhaseSync => "phase-sync",
        }
    }
}

impl std::fmt::Display for FcMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FcMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "randcon" => Ok(FcMethod::RandCon),
            "sliding-window" => Ok(FcMethod::SlidingWindow),
            "mtd" => Ok(FcMethod::Mtd),
            "phase-sync" => Ok(FcMethod::PhaseSync),
            other => Err(Error::param(format!(
                "unknown method {other:?}, expected randcon|sliding-window|mtd|phase-sync"
            ))),
        }
    }
}

/// Estimation parameters recorded alongside a series. Only fields relevant
/// to the producing method are set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FcParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<Padding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// One connectivity matrix. Always square, finite and symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct FcMatrix {
    values: Array2<f64>,
    method: FcMethod,
}

impl FcMatrix {
    pub fn new(values: Array2<f64>, method: FcMethod) -> Result<Self> {
        let (r, c) = values.dim();
        if r != c || r < 2 {
            return Err(Error::dim(format!("connectivity matrix must be square with N >= 2, got {r}x{c}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("non-finite connectivity value"));
        }
        for i in 0..r {
            for j in 0..i {
                if (values[[i, j]] - values[[j, i]]).abs() > 1e-12 {
                    return Err(Error::param(format!(
                        "asymmetric connectivity at ({i},{j}): {} vs {}",
                        values[[i, j]],
                        values[[j, i]]
                    )));
                }
            }
        }
        Ok(FcMatrix { values, method })
    }

    pub fn n_rois(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn method(&self) -> FcMethod {
        self.method
    }
}

/// Time-ordered stack of connectivity matrices from one estimator run.
#[derive(Debug, Clone, PartialEq)]
pub struct FcSeries {
    values: Array3<f64>,
    method: FcMethod,
    params: FcParams,
    degenerate_pairs: u64,
}

impl FcSeries {
    pub(crate) fn from_parts(
        values: Array3<f64>,
        method: FcMethod,
        params: FcParams,
        degenerate_pairs: u64,
    ) -> Self {
        FcSeries { values, method, params, degenerate_pairs }
    }

    pub fn n_frames(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn n_rois(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn values(&self) -> ArrayView3<'_, f64> {
        self.values.view()
    }

    pub fn frame(&self, t: usize) -> ArrayView2<'_, f64> {
        self.values.slice(s![t, .., ..])
    }

    pub fn frame_matrix(&self, t: usize) -> FcMatrix {
        FcMatrix { values: self.frame(t).to_owned(), method: self.method }
    }

    pub fn method(&self) -> FcMethod {
        self.method
    }

    pub fn params(&self) -> &FcParams {
        &self.params
    }

    /// Number of (pair, frame) occurrences that were zeroed because one side
    /// had no variance.
    pub fn degenerate_pairs(&self) -> u64 {
        self.degenerate_pairs
    }

    /// Strictly-lower-triangle vectors of every frame, one row per frame.
    pub fn lower_triangles(&self) -> Array2<f64> {
        let d = self.n_rois() * (self.n_rois() - 1) / 2;
        let mut out = Array2::zeros((self.n_frames(), d));
        for t in 0..self.n_frames() {
            let frame = self.frame(t);
            let mut col = 0;
            for m in 1..self.n_rois() {
                for n in 0..m {
                    out[[t, col]] = frame[[m, n]];
                    col += 1;
                }
            }
        }
        out
    }
}

/// Strictly-lower-triangle vector of a connectivity matrix, row-major:
/// `[z(1,0), z(2,0), z(2,1), z(3,0), ...]` in 0-based indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriVector {
    values: Vec<f64>,
    n: usize,
}

impl LowerTriVector {
    /// Wraps a vector, inferring `N` from the triangular length
    /// `N (N - 1) / 2`.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let len = values.len();
        let n = ((1.0 + (1.0 + 8.0 * len as f64).sqrt()) / 2.0).round() as usize;
        if n < 2 || n * (n - 1) / 2 != len {
            return Err(Error::dim(format!("length {len} is not N(N-1)/2 for any N >= 2")));
        }
        Ok(LowerTriVector { values, n })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_rois(&self) -> usize {
        self.n
    }
}

/// Flattens the strictly lower triangle of a square matrix in row-major
/// order.
pub fn lower_triangle(values: ArrayView2<'_, f64>) -> Vec<f64> {
    let n = values.nrows();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for m in 1..n {
        for j in 0..m {
            out.push(values[[m, j]]);
        }
    }
    out
}

/// Extracts the strictly lower triangle of a connectivity matrix.
pub fn vectorize_lower(fc: &FcMatrix) -> LowerTriVector {
    LowerTriVector { values: lower_triangle(fc.values()), n: fc.n_rois() }
}

/// Rebuilds the symmetric matrix (unit diagonal) from a lower-triangle
/// vector.
pub fn devectorize_lower(v: &LowerTriVector, method: FcMethod) -> Result<FcMatrix> {
    let n = v.n;
    let mut values = Array2::zeros((n, n));
    let mut idx = 0;
    for m in 0..n {
        values[[m, m]] = 1.0;
        for j in 0..m {
            values[[m, j]] = v.values[idx];
            values[[j, m]] = v.values[idx];
            idx += 1;
        }
    }
    FcMatrix::new(values, method)
}

// ---------------------------------------------------------------------------
// Shared Pearson machinery.

/// Pearson correlation between all row pairs of an `N x L` block. Returns
/// the matrix (unit diagonal, exactly symmetric) and the count of zeroed
/// pairs. Rows with zero centered sum of squares are degenerate: every pair
/// they participate in maps to 0.
fn pearson_rows(data: ArrayView2<'_, f64>) -> (Array2<f64>, u64) {
    let (n, l) = data.dim();
    let mut centered = data.to_owned();
    let mut norms = vec![0.0f64; n];
    let mut degenerate = vec![false; n];
    for (i, mut row) in centered.rows_mut().into_iter().enumerate() {
        let mean = row.sum() / l as f64;
        row.mapv_inplace(|v| v - mean);
        let ss = row.iter().map(|v| v * v).sum::<f64>();
        if ss == 0.0 {
            degenerate[i] = true;
        } else {
            norms[i] = ss.sqrt();
        }
    }
    let mut z = centered.dot(&centered.t());
    let mut zeroed = 0u64;
    for m in 0..n {
        z[[m, m]] = 1.0;
        for j in 0..m {
            let v = if degenerate[m] || degenerate[j] {
                zeroed += 1;
                0.0
            } else {
                z[[m, j]] / (norms[m] * norms[j])
            };
            z[[m, j]] = v;
            z[[j, m]] = v;
        }
    }
    (z, zeroed)
}

/// Assembles per-frame results (computed in parallel, collected in frame
/// order) into a series.
fn collect_frames(
    frames: Vec<(Array2<f64>, u64)>,
    n: usize,
    method: FcMethod,
    params: FcParams,
) -> FcSeries {
    let t = frames.len();
    let mut values = Array3::zeros((t, n, n));
    let mut degenerate_pairs = 0u64;
    for (i, (frame, zeroed)) in frames.into_iter().enumerate() {
        values.slice_mut(s![i, .., ..]).assign(&frame);
        degenerate_pairs += zeroed;
    }
    FcSeries { values, method, params, degenerate_pairs }
}

// ---------------------------------------------------------------------------
// Estimators.

/// Random-convolution connectivity from a precomputed feature tensor: at
/// every frame, Pearson correlation across the `K` kernel responses of each
/// ROI pair.
pub fn randcon_fc(features: &FeatureTensor) -> Result<FcSeries> {
    let k = features.k_count();
    if k < 2 {
        return Err(Error::param(format!(
            "correlation across kernels needs at least 2 kernels, got {k}"
        )));
    }
    let n = features.n_rois();
    if n < 2 {
        return Err(Error::dim(format!("need at least 2 ROIs, got {n}")));
    }
    let t_out = features.n_frames();
    let vals = features.values();
    let frames: Vec<(Array2<f64>, u64)> = (0..t_out)
        .into_par_iter()
        .map(|t| {
            // N x K block of kernel responses at frame t.
            let mut block = Array2::zeros((n, k));
            for roi in 0..n {
                for kk in 0..k {
                    block[[roi, kk]] = vals[[kk, roi, t]];
                }
            }
            pearson_rows(block.view())
        })
        .collect();

    let params = FcParams {
        kernel_count: Some(k),
        padding: Some(features.padding()),
        ..FcParams::default()
    };
    Ok(collect_frames(frames, n, FcMethod::RandCon, params))
}

/// Random-convolution connectivity straight from the signal, computing each
/// frame's kernel responses on the fly instead of materializing the full
/// `K x N x T'` tensor. Bit-identical to `randcon_fc(&convolve(...))`; use
/// this for large `K`.
pub fn randcon_fc_direct(
    ts: &RoiTimeSeries,
    bank: &KernelBank,
    padding: Padding,
) -> Result<FcSeries> {
    let k = bank.len();
    if k < 2 {
        return Err(Error::param(format!(
            "correlation across kernels needs at least 2 kernels, got {k}"
        )));
    }
    let n = ts.n_rois();
    let width = bank.width();
    let t_out = padding.output_len(ts.n_timepoints(), width)?;
    let x = ts.values();

    let frames: Vec<(Array2<f64>, u64)> = (0..t_out)
        .into_par_iter()
        .map(|t| {
            let start = window_start(padding, t, width);
            let mut block = Array2::zeros((n, k));
            for roi in 0..n {
                let row = x.row(roi);
                let row = row.as_slice().expect("row of standard-layout matrix");
                for (kk, kernel) in bank.kernels().iter().enumerate() {
                    block[[roi, kk]] = kernel_response(row, start, kernel.weights());
                }
            }
            pearson_rows(block.view())
        })
        .collect();

    let params = FcParams {
        width: Some(width),
        kernel_count: Some(k),
        padding: Some(padding),
        seed: bank.seed(),
        ..FcParams::default()
    };
    Ok(collect_frames(frames, n, FcMethod::RandCon, params))
}

/// Sliding-window Pearson correlation: one frame per window start
/// `0, stride, 2*stride, ...` while the window fits, each frame correlating
/// the raw samples inside the window.
pub fn sliding_window_fc(ts: &RoiTimeSeries, width: usize, stride: usize) -> Result<FcSeries> {
    if width < 2 {
        return Err(Error::param(format!("window width must be at least 2, got {width}")));
    }
    if stride == 0 {
        return Err(Error::param("stride must be at least 1"));
    }
    let t = ts.n_timepoints();
    if width > t {
        return Err(Error::dim(format!("window width {width} exceeds series length {t}")));
    }
    let n = ts.n_rois();
    let x = ts.values();
    let starts: Vec<usize> = (0..=t - width).step_by(stride).collect();
    let frames: Vec<(Array2<f64>, u64)> = starts
        .par_iter()
        .map(|&s0| pearson_rows(x.slice(s![.., s0..s0 + width])))
        .collect();

    let params = FcParams { width: Some(width), stride: Some(stride), ..FcParams::default() };
    Ok(collect_frames(frames, n, FcMethod::SlidingWindow, params))
}

/// Product of normalized temporal derivatives, smoothed with a simple moving
/// average.
///
/// The raw coupling at derivative index `j` is
/// `M[j](m,n) = (dx_m[j]/sigma_m) * (dx_n[j]/sigma_n)` where `dx[j] =
/// x[j+1] - x[j]` and `sigma` is the population standard deviation of the
/// ROI's whole derivative series. The output frame at start `i` averages
/// `M[i..i+avg_window]`; with `avg_window = 1` the output is the raw
/// coupling series. Passing `avg_window = width - 1` makes the output grid
/// coincide with the sliding-window grid for windows of `width` points,
/// since a window of `width` samples spans exactly `width - 1` derivatives.
///
/// Entries are unbounded and the diagonal is not constrained to 1 (it is the
/// smoothed squared normalized derivative, hence non-negative).
pub fn mtd_fc(ts: &RoiTimeSeries, avg_window: usize, stride: usize) -> Result<FcSeries> {
    let t = ts.n_timepoints();
    if t < 3 {
        return Err(Error::dim(format!("need at least 3 time points for derivatives, got {t}")));
    }
    if avg_window == 0 {
        return Err(Error::param("averaging window must be at least 1"));
    }
    if stride == 0 {
        return Err(Error::param("stride must be at least 1"));
    }
    let n_deriv = t - 1;
    if avg_window > n_deriv {
        return Err(Error::dim(format!(
            "averaging window {avg_window} exceeds derivative series length {n_deriv}"
        )));
    }
    let n = ts.n_rois();
    let x = ts.values();

    // Normalized derivatives; a constant ROI has sigma = 0 and is flagged.
    let mut nd = Array2::zeros((n, n_deriv));
    let mut degenerate = vec![false; n];
    for roi in 0..n {
        let row = x.row(roi);
        for j in 0..n_deriv {
            nd[[roi, j]] = row[j + 1] - row[j];
        }
        let mut drow = nd.row_mut(roi);
        let mean = drow.sum() / n_deriv as f64;
        let var = drow.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n_deriv as f64;
        if var == 0.0 {
            degenerate[roi] = true;
            drow.fill(0.0);
        } else {
            let sd = var.sqrt();
            drow.mapv_inplace(|v| v / sd);
        }
    }
    let degenerate_per_frame: u64 = {
        let bad = degenerate.iter().filter(|&&d| d).count() as u64;
        let nn = n as u64;
        // Unordered pairs with at least one degenerate member.
        bad * (nn - 1) - bad * bad.saturating_sub(1) / 2
    };

    let starts: Vec<usize> = (0..=n_deriv - avg_window).step_by(stride).collect();
    let frames: Vec<(Array2<f64>, u64)> = starts
        .par_iter()
        .map(|&s0| {
            let win = nd.slice(s![.., s0..s0 + avg_window]);
            let mut m = win.dot(&win.t());
            m.mapv_inplace(|v| v / avg_window as f64);
            // Exact symmetry and zeroed degenerate rows/columns.
            for a in 0..n {
                for b in 0..a {
                    let v = if degenerate[a] || degenerate[b] { 0.0 } else { m[[a, b]] };
                    m[[a, b]] = v;
                    m[[b, a]] = v;
                }
                if degenerate[a] {
                    m[[a, a]] = 0.0;
                }
            }
            (m, degenerate_per_frame)
        })
        .collect();

    let params = FcParams { avg_window: Some(avg_window), stride: Some(stride), ..FcParams::default() };
    Ok(collect_frames(frames, n, FcMethod::Mtd, params))
}

/// Phase synchronization: the analytic signal of every ROI via the FFT
/// (negative frequencies zeroed, positive doubled, DC and Nyquist kept),
/// instantaneous phase from its argument, and frame `t` entries
/// `cos(phi_m(t) - phi_n(t))`. One frame per input sample.
pub fn phase_sync_fc(ts: &RoiTimeSeries) -> Result<FcSeries> {
    let t = ts.n_timepoints();
    if t < 8 {
        return Err(Error::dim(format!("need at least 8 time points for phase estimation, got {t}")));
    }
    let n = ts.n_rois();
    let x = ts.values();

    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(t);
    let inverse = planner.plan_fft_inverse(t);

    // cos/sin of each ROI's phase, so frames need no trig of their own:
    // cos(a - b) = cos a cos b + sin a sin b.
    let mut phase_cos = Array2::zeros((n, t));
    let mut phase_sin = Array2::zeros((n, t));
    let mut degenerate = vec![false; n];
    let rows: Vec<(Vec<f64>, Vec<f64>, bool)> = (0..n)
        .into_par_iter()
        .map(|roi| {
            let row = x.row(roi);
            if row.iter().all(|&v| v == 0.0) {
                return (vec![0.0; t], vec![0.0; t], true);
            }
            let mut buf: Vec<Complex64> = row.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            forward.process(&mut buf);
            // Analytic-signal filter.
            let half = t / 2;
            for (i, v) in buf.iter_mut().enumerate() {
                if i == 0 || (t % 2 == 0 && i == half) {
                    // keep DC and Nyquist
                } else if i < (t + 1) / 2 || (t % 2 == 0 && i < half) {
                    *v *= 2.0;
                } else {
                    *v = Complex64::new(0.0, 0.0);
                }
            }
            inverse.process(&mut buf);
            let scale = 1.0 / t as f64;
            let mut cs = Vec::with_capacity(t);
            let mut sn = Vec::with_capacity(t);
            for v in &buf {
                let phi = (v.im * scale).atan2(v.re * scale);
                cs.push(phi.cos());
                sn.push(phi.sin());
            }
            (cs, sn, false)
        })
        .collect();
    for (roi, (cs, sn, degen)) in rows.into_iter().enumerate() {
        for ti in 0..t {
            phase_cos[[roi, ti]] = cs[ti];
            phase_sin[[roi, ti]] = sn[ti];
        }
        degenerate[roi] = degen;
    }

    let frames: Vec<(Array2<f64>, u64)> = (0..t)
        .into_par_iter()
        .map(|ti| {
            let mut z = Array2::zeros((n, n));
            let mut zeroed = 0u64;
            for m in 0..n {
                z[[m, m]] = 1.0;
                for j in 0..m {
                    let v = if degenerate[m] || degenerate[j] {
                        zeroed += 1;
                        0.0
                    } else {
                        phase_cos[[m, ti]] * phase_cos[[j, ti]]
                            + phase_sin[[m, ti]] * phase_sin[[j, ti]]
                    };
                    z[[m, j]] = v;
                    z[[j, m]] = v;
                }
            }
            (z, zeroed)
        })
        .collect();

    Ok(collect_frames(frames, n, FcMethod::PhaseSync, FcParams::default()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convolution::{convolve, one_hot_bank, sample_gaussian_bank, Kernel};
    use crate::seed::rng_from;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_ts(n: usize, t: usize, seed: u64) -> RoiTimeSeries {
        let mut rng = rng_from(seed);
        let values: Vec<f64> = (0..n * t).map(|_| rng.sample(StandardNormal)).collect();
        RoiTimeSeries::from_values(Array2::from_shape_vec((n, t), values).unwrap()).unwrap()
    }

    #[test]
    fn one_hot_valid_randcon_equals_sliding_window() {
        for (seed, n, t, w) in [(1u64, 3usize, 24usize, 3usize), (2, 5, 40, 2), (3, 4, 31, 7)] {
            let ts = random_ts(n, t, seed);
            let bank = one_hot_bank(w).unwrap();
            let features = convolve(&ts, &bank, Padding::Valid).unwrap();
            let rc = randcon_fc(&features).unwrap();
            let sw = sliding_window_fc(&ts, w, 1).unwrap();
            assert_eq!(rc.n_frames(), sw.n_frames());
            let max = rc
                .values()
                .iter()
                .zip(sw.values().iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max < 1e-14, "max deviation {max}");
        }
    }

    #[test]
    fn direct_randcon_is_bit_identical_to_tensor_path() {
        let ts = random_ts(4, 30, 9);
        for padding in [Padding::Same, Padding::Valid] {
            let bank = sample_gaussian_bank(7, 5, 11).unwrap();
            let via_tensor = randcon_fc(&convolve(&ts, &bank, padding).unwrap()).unwrap();
            let direct = randcon_fc_direct(&ts, &bank, padding).unwrap();
            assert_eq!(via_tensor.n_frames(), direct.n_frames());
            for (a, b) in via_tensor.values().iter().zip(direct.values().iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn correlation_outputs_stay_bounded_with_unit_diagonal() {
        let ts = random_ts(6, 50, 4);
        let bank = sample_gaussian_bank(12, 4, 5).unwrap();
        let series = [
            randcon_fc_direct(&ts, &bank, Padding::Same).unwrap(),
            sliding_window_fc(&ts, 5, 2).unwrap(),
            phase_sync_fc(&ts).unwrap(),
        ];
        for fcs in &series {
            for t in 0..fcs.n_frames() {
                let f = fcs.frame(t);
                for m in 0..fcs.n_rois() {
                    assert_eq!(f[[m, m]], 1.0);
                    for j in 0..fcs.n_rois() {
                        assert!(f[[m, j]].abs() <= 1.0 + 1e-12, "{} out of range", f[[m, j]]);
                        assert_eq!(f[[m, j]].to_bits(), f[[j, m]].to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn window_count_follows_stride() {
        let ts = random_ts(3, 1200, 8);
        assert_eq!(sliding_window_fc(&ts, 3, 1).unwrap().n_frames(), 1198);
        assert_eq!(sliding_window_fc(&ts, 100, 50).unwrap().n_frames(), 23);
        assert!(sliding_window_fc(&ts, 1201, 1).is_err());
        assert!(sliding_window_fc(&ts, 1, 1).is_err());
        assert!(sliding_window_fc(&ts, 3, 0).is_err());
    }

    #[test]
    fn constant_roi_pairs_are_zeroed_and_counted() {
        let mut values = random_ts(4, 20, 3).values().to_owned();
        values.row_mut(2).fill(7.5);
        let ts = RoiTimeSeries::from_values(values).unwrap();
        let fcs = sliding_window_fc(&ts, 5, 1).unwrap();
        // ROI 2 participates in 3 pairs, zeroed at every one of 16 frames.
        assert_eq!(fcs.degenerate_pairs(), 3 * 16);
        for t in 0..fcs.n_frames() {
            let f = fcs.frame(t);
            for j in 0..4 {
                if j != 2 {
                    assert_eq!(f[[2, j]], 0.0);
                    assert_eq!(f[[j, 2]], 0.0);
                }
            }
            assert_eq!(f[[2, 2]], 1.0);
        }
    }

    #[test]
    fn randcon_rejects_single_kernel_banks() {
        let ts = random_ts(3, 20, 1);
        let bank = KernelBank::custom(vec![Kernel::new(vec![1.0, 2.0]).unwrap()]).unwrap();
        assert!(randcon_fc_direct(&ts, &bank, Padding::Same).is_err());
        let features = convolve(&ts, &bank, Padding::Same).unwrap();
        assert!(randcon_fc(&features).is_err());
    }

    #[test]
    fn kernel_order_does_not_change_randcon() {
        let ts = random_ts(4, 25, 6);
        let bank = sample_gaussian_bank(9, 3, 2).unwrap();
        let mut reordered: Vec<Kernel> = bank.kernels().to_vec();
        reordered.reverse();
        let swapped = KernelBank::custom(reordered).unwrap();
        let a = randcon_fc_direct(&ts, &bank, Padding::Same).unwrap();
        let b = randcon_fc_direct(&ts, &swapped, Padding::Same).unwrap();
        for (x, y) in a.values().iter().zip(b.values().iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn pearson_outputs_ignore_positive_rescaling() {
        let ts = random_ts(4, 40, 12);
        let scaled =
            RoiTimeSeries::from_values(ts.values().to_owned().mapv(|v| v * 3.25)).unwrap();
        let bank = sample_gaussian_bank(10, 3, 3).unwrap();
        let pairs = [
            (
                randcon_fc_direct(&ts, &bank, Padding::Same).unwrap(),
                randcon_fc_direct(&scaled, &bank, Padding::Same).unwrap(),
            ),
            (
                sliding_window_fc(&ts, 6, 1).unwrap(),
                sliding_window_fc(&scaled, 6, 1).unwrap(),
            ),
        ];
        for (a, b) in &pairs {
            for (x, y) in a.values().iter().zip(b.values().iter()) {
                assert!((x - y).abs() < 1e-10);
            }
        }
        // Sliding-window correlation additionally ignores per-ROI shifts.
        let shifted =
            RoiTimeSeries::from_values(ts.values().to_owned().mapv(|v| v * 2.0 - 11.0)).unwrap();
        let a = sliding_window_fc(&ts, 6, 1).unwrap();
        let b = sliding_window_fc(&shifted, 6, 1).unwrap();
        for (x, y) in a.values().iter().zip(b.values().iter()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn mtd_grid_and_raw_series() {
        let ts = random_ts(3, 50, 7);
        // avg_window 1: raw coupling series, one frame per derivative.
        let raw = mtd_fc(&ts, 1, 1).unwrap();
        assert_eq!(raw.n_frames(), 49);
        // avg_window W-1 matches the sliding-window grid for width W.
        let smoothed = mtd_fc(&ts, 4, 1).unwrap();
        let sw = sliding_window_fc(&ts, 5, 1).unwrap();
        assert_eq!(smoothed.n_frames(), sw.n_frames());
        // Hand-check: smoothed frame 0 is the mean of raw frames 0..4.
        for a in 0..3 {
            for b in 0..3 {
                let mean = (0..4).map(|j| raw.frame(j)[[a, b]]).sum::<f64>() / 4.0;
                assert!((smoothed.frame(0)[[a, b]] - mean).abs() < 1e-12);
            }
        }
        assert!(mtd_fc(&ts, 50, 1).is_err());
        assert!(mtd_fc(&ts, 0, 1).is_err());
    }

    #[test]
    fn mtd_self_coupling_is_nonnegative_and_averages_near_one() {
        let ts = random_ts(2, 2000, 15);
        let raw = mtd_fc(&ts, 1, 1).unwrap();
        let mut mean = 0.0;
        for t in 0..raw.n_frames() {
            let v = raw.frame(t)[[0, 0]];
            assert!(v >= 0.0);
            mean += v;
        }
        mean /= raw.n_frames() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean self-coupling {mean}");
    }

    #[test]
    fn mtd_sign_tracks_derivative_agreement() {
        // Second ROI is the negated first: derivatives are opposed, so the
        // cross-coupling is non-positive everywhere.
        let base = random_ts(2, 60, 21);
        let mut values = base.values().to_owned();
        let first = values.row(0).to_owned();
        values.row_mut(1).assign(&first.mapv(|v| -v));
        let ts = RoiTimeSeries::from_values(values).unwrap();
        let raw = mtd_fc(&ts, 1, 1).unwrap();
        for t in 0..raw.n_frames() {
            assert!(raw.frame(t)[[0, 1]] <= 0.0);
        }
    }

    #[test]
    fn mtd_constant_roi_is_zeroed() {
        let mut values = random_ts(3, 30, 2).values().to_owned();
        values.row_mut(1).fill(4.0);
        let ts = RoiTimeSeries::from_values(values).unwrap();
        let fcs = mtd_fc(&ts, 2, 1).unwrap();
        assert_eq!(fcs.degenerate_pairs(), 2 * fcs.n_frames() as u64);
        for t in 0..fcs.n_frames() {
            assert_eq!(fcs.frame(t)[[1, 0]], 0.0);
            assert_eq!(fcs.frame(t)[[1, 1]], 0.0);
            assert_eq!(fcs.frame(t)[[1, 2]], 0.0);
        }
    }

    #[test]
    fn phase_sync_recovers_designed_phase_relations() {
        let t = 256;
        let cycles = 6.0;
        let wave: Vec<f64> =
            (0..t).map(|i| (2.0 * std::f64::consts::PI * cycles * i as f64 / t as f64).sin()).collect();
        let neg: Vec<f64> = wave.iter().map(|v| -v).collect();
        let mut values = Vec::new();
        values.extend_from_slice(&wave);
        values.extend_from_slice(&wave);
        values.extend_from_slice(&neg);
        let ts =
            RoiTimeSeries::from_values(Array2::from_shape_vec((3, t), values).unwrap()).unwrap();
        let fcs = phase_sync_fc(&ts).unwrap();
        assert_eq!(fcs.n_frames(), t);
        for ti in 0..t {
            let f = fcs.frame(ti);
            assert!((f[[0, 1]] - 1.0).abs() < 1e-9, "identical signals at {ti}: {}", f[[0, 1]]);
            assert!((f[[0, 2]] + 1.0).abs() < 1e-9, "negated signals at {ti}: {}", f[[0, 2]]);
        }
    }

    #[test]
    fn phase_sync_flags_all_zero_rois() {
        let mut values = random_ts(3, 32, 5).values().to_owned();
        values.row_mut(0).fill(0.0);
        let ts = RoiTimeSeries::from_values(values).unwrap();
        let fcs = phase_sync_fc(&ts).unwrap();
        assert_eq!(fcs.degenerate_pairs(), 2 * 32);
        for ti in 0..32 {
            assert_eq!(fcs.frame(ti)[[0, 1]], 0.0);
            assert_eq!(fcs.frame(ti)[[0, 0]], 1.0);
        }
        let short = random_ts(2, 7, 1);
        assert!(phase_sync_fc(&short).is_err());
    }

    #[test]
    fn vectorize_order_and_round_trip() {
        let m = FcMatrix::new(
            ndarray::array![[1.0, 0.2, 0.3], [0.2, 1.0, 0.4], [0.3, 0.4, 1.0]],
            FcMethod::SlidingWindow,
        )
        .unwrap();
        let v = vectorize_lower(&m);
        assert_eq!(v.values(), &[0.2, 0.3, 0.4]);
        assert_eq!(v.n_rois(), 3);
        let back = devectorize_lower(&v, FcMethod::SlidingWindow).unwrap();
        assert_eq!(back.values(), m.values());

        assert!(LowerTriVector::new(vec![0.1, 0.2]).is_err());
        assert!(LowerTriVector::new(vec![]).is_err());
        assert!(LowerTriVector::new(vec![0.1; 6]).is_ok());
    }

    #[test]
    fn asymmetric_matrices_are_rejected() {
        let bad = FcMatrix::new(
            ndarray::array![[1.0, 0.5], [0.4, 1.0]],
            FcMethod::RandCon,
        );
        assert!(bad.is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn sliding_window_equivalence_random(seed in 0u64..1000, n in 2usize..6, w in 2usize..7) {
            let t = w + 17;
            let ts = random_ts(n, t, seed);
            let bank = one_hot_bank(w).unwrap();
            let rc = randcon_fc(&convolve(&ts, &bank, Padding::Valid).unwrap()).unwrap();
            let sw = sliding_window_fc(&ts, w, 1).unwrap();
            for (a, b) in rc.values().iter().zip(sw.values().iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
