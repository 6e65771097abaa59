//! Random convolution kernels and temporal feature extraction.
//!
//! A [`KernelBank`] holds `K` kernels of shared width `W`. Convolving an
//! `N x T` time series with a bank yields a [`FeatureTensor`] of shape
//! `K x N x T'`: for kernel `C_k` and ROI `n`,
//!
//! ```text
//! y_k(n, t) = sum_w x_n(t + w) * C_k(w)
//! ```
//!
//! i.e. a sliding dot product without kernel reversal. `same` padding
//! zero-extends the signal by `floor((W-1)/2)` on the left and
//! `ceil((W-1)/2)` on the right so `T' = T`; `valid` keeps only fully
//! supported positions, `T' = T - W + 1`.

use ndarray::{Array3, ArrayView3};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::seed::rng_from;
use crate::timeseries::RoiTimeSeries;

/// One convolution kernel: a finite weight vector of width >= 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    weights: Vec<f64>,
}

impl Kernel {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::param("kernel width must be at least 1"));
        }
        if let Some(bad) = weights.iter().find(|w| !w.is_finite()) {
            return Err(Error::param(format!("non-finite kernel weight {bad}")));
        }
        Ok(Kernel { weights })
    }

    pub fn width(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// How a bank's weights came to be. Gaussian banks are regenerated from
/// their seed on load; custom banks persist explicit weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BankKind {
    Gaussian,
    OneHot,
    Custom,
}

/// A set of kernels with a common width.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    kernels: Vec<Kernel>,
    kind: BankKind,
    seed: Option<u64>,
}

impl KernelBank {
    /// Bank from explicit weights. All kernels must share one width.
    pub fn custom(kernels: Vec<Kernel>) -> Result<Self> {
        let first = kernels
            .first()
            .ok_or_else(|| Error::param("kernel bank must contain at least one kernel"))?;
        let w = first.width();
        if kernels.iter().any(|k| k.width() != w) {
            return Err(Error::dim("all kernels in a bank must share one width"));
        }
        Ok(KernelBank { kernels, kind: BankKind::Custom, seed: None })
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.kernels[0].width()
    }

    pub fn kind(&self) -> BankKind {
        self.kind
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// JSON description. Gaussian and one-hot banks serialize their recipe
    /// (seed / width); custom banks serialize explicit weights.
    pub fn to_json(&self) -> String {
        let spec = match self.kind {
            BankKind::Gaussian => BankSpec::Gaussian {
                seed: self.seed.unwrap_or(0),
                kernel_count: self.len(),
                width: self.width(),
            },
            BankKind::OneHot => BankSpec::OneHot { width: self.width() },
            BankKind::Custom => BankSpec::Custom {
                weights: self.kernels.iter().map(|k| k.weights.clone()).collect(),
            },
        };
        serde_json::to_string_pretty(&spec).expect("bank spec serializes")
    }

    /// Rebuilds a bank from [`KernelBank::to_json`] output. Regeneration is
    /// deterministic, so a gaussian bank round-trips to bit-identical weights.
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: BankSpec = serde_json::from_str(text).map_err(|e| Error::format(e.to_string()))?;
        match spec {
            BankSpec::Gaussian { seed, kernel_count, width } => {
                sample_gaussian_bank(kernel_count, width, seed)
            }
            BankSpec::OneHot { width } => one_hot_bank(width),
            BankSpec::Custom { weights } => {
                let kernels = weights.into_iter().map(Kernel::new).collect::<Result<_>>()?;
                KernelBank::custom(kernels)
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        KernelBank::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum BankSpec {
    Gaussian { seed: u64, kernel_count: usize, width: usize },
    OneHot { width: usize },
    Custom { weights: Vec<Vec<f64>> },
}

/// Samples `kernel_count` kernels of `width` i.i.d. standard normal weights.
/// Kernel `k` draws from its own substream seeded `seed ^ k`, so the bank is
/// identical no matter how generation is scheduled.
pub fn sample_gaussian_bank(kernel_count: usize, width: usize, seed: u64) -> Result<KernelBank> {
    if kernel_count == 0 {
        return Err(Error::param("kernel count must be at least 1"));
    }
    if width == 0 {
        return Err(Error::param("kernel width must be at least 1"));
    }
    let kernels = (0..kernel_count)
        .map(|k| {
            let mut rng = rng_from(seed ^ k as u64);
            let weights = (0..width).map(|_| rng.sample(StandardNormal)).collect();
            Kernel { weights }
        })
        .collect();
    Ok(KernelBank { kernels, kind: BankKind::Gaussian, seed: Some(seed) })
}

/// The deterministic bank that makes random-convolution connectivity
/// coincide with sliding-window correlation: `K = width` kernels where
/// kernel `k` is 1 at position `k` and 0 elsewhere.
pub fn one_hot_bank(width: usize) -> Result<KernelBank> {
    if width == 0 {
        return Err(Error::param("kernel width must be at least 1"));
    }
    let kernels = (0..width)
        .map(|k| {
            let mut weights = vec![0.0; width];
            weights[k] = 1.0;
            Kernel { weights }
        })
        .collect();
    Ok(KernelBank { kernels, kind: BankKind::OneHot, seed: None })
}

/// Boundary handling for [`convolve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero-extend so the output keeps the input length.
    Same,
    /// Keep only fully supported positions (`T' = T - W + 1`).
    Valid,
}

impl Padding {
    pub fn output_len(self, t: usize, width: usize) -> Result<usize> {
        match self {
            Padding::Same => Ok(t),
            Padding::Valid => {
                if t < width {
                    Err(Error::dim(format!(
                        "series length {t} shorter than kernel width {width} under valid padding"
                    )))
                } else {
                    Ok(t - width + 1)
                }
            }
        }
    }
}

impl std::fmt::Display for Padding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Padding::Same => "same",
            Padding::Valid => "valid",
        })
    }
}

impl std::str::FromStr for Padding {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "same" => Ok(Padding::Same),
            "valid" => Ok(Padding::Valid),
            other => Err(Error::param(format!("unknown padding {other:?}, expected same|valid"))),
        }
    }
}

/// Convolution features: `K x N x T'` responses plus the geometry that
/// produced them.
#[derive(Debug, Clone)]
pub struct FeatureTensor {
    values: Array3<f64>,
    padding: Padding,
    source_t: usize,
}

impl FeatureTensor {
    pub fn k_count(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn n_rois(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn n_frames(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn values(&self) -> ArrayView3<'_, f64> {
        self.values.view()
    }

    pub fn padding(&self) -> Padding {
        self.padding
    }

    /// Length of the time series the features were computed from.
    pub fn source_t(&self) -> usize {
        self.source_t
    }
}

/// Dot product of `weights` against `row` starting at (possibly negative)
/// `start`; positions outside the signal contribute zero. Shared by every
/// convolution path so alternative evaluation orders cannot drift apart.
#[inline]
pub(crate) fn kernel_response(row: &[f64], start: isize, weights: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (w, &c) in weights.iter().enumerate() {
        let src = start + w as isize;
        if src >= 0 && (src as usize) < row.len() {
            acc += row[src as usize] * c;
        }
    }
    acc
}

/// Offset of the first kernel tap relative to the output position under the
/// given padding.
#[inline]
pub(crate) fn window_start(padding: Padding, t: usize, width: usize) -> isize {
    match padding {
        Padding::Same => t as isize - ((width - 1) / 2) as isize,
        Padding::Valid => t as isize,
    }
}

/// Applies every kernel in the bank to every ROI signal.
pub fn convolve(ts: &RoiTimeSeries, bank: &KernelBank, padding: Padding) -> Result<FeatureTensor> {
    let n = ts.n_rois();
    let t = ts.n_timepoints();
    let width = bank.width();
    let t_out = padding.output_len(t, width)?;
    let k_count = bank.len();

    let x = ts.values();
    let mut values = Array3::zeros((k_count, n, t_out));
    values
        .as_slice_mut()
        .expect("freshly allocated tensor is contiguous")
        .par_chunks_mut(n * t_out)
        .enumerate()
        .for_each(|(k, block)| {
            let weights = bank.kernels[k].weights();
            for roi in 0..n {
                let row = x.row(roi);
                let row = row.as_slice().expect("row of standard-layout matrix");
                let out = &mut block[roi * t_out..(roi + 1) * t_out];
                for (ti, slot) in out.iter_mut().enumerate() {
                    *slot = kernel_response(row, window_start(padding, ti, width), weights);
                }
            }
        });

    Ok(FeatureTensor { values, padding, source_t: t })
}
