//! ROI time-series containers and the formats they travel in.
//!
//! The core type is [`RoiTimeSeries`]: an `N x T` matrix of ROI signals with
//! one label per ROI. CSV is the text interchange format (auto-detected
//! header row and label column); estimated connectivity series use a small
//! binary container, see [`save_fc_series`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::connectivity::{FcMethod, FcParams, FcSeries};
use crate::error::{Error, Result};

/// Multivariate signal: one row per region of interest, one column per time
/// point. Values are always finite; labels are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiTimeSeries {
    values: Array2<f64>,
    roi_labels: Vec<String>,
    sampling_period: Option<f64>,
}

impl RoiTimeSeries {
    /// Builds a series, validating shape, finiteness and labels.
    pub fn new(
        values: Array2<f64>,
        roi_labels: Vec<String>,
        sampling_period: Option<f64>,
    ) -> Result<Self> {
        let (n, t) = values.dim();
        if n < 2 {
            return Err(Error::dim(format!("need at least 2 ROIs, got {n}")));
        }
        if t < 2 {
            return Err(Error::dim(format!("need at least 2 time points, got {t}")));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::param(format!("non-finite value {bad} in time series")));
        }
        if roi_labels.len() != n {
            return Err(Error::dim(format!(
                "{} labels for {} ROIs",
                roi_labels.len(),
                n
            )));
        }
        for (i, a) in roi_labels.iter().enumerate() {
            if roi_labels[..i].contains(a) {
                return Err(Error::param(format!("duplicate ROI label {a:?}")));
            }
        }
        if let Some(p) = sampling_period {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::param(format!("sampling period must be positive, got {p}")));
            }
        }
        Ok(RoiTimeSeries { values, roi_labels, sampling_period })
    }

    /// Builds a series with generated labels `roi_0, roi_1, ...`.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        let labels = (0..values.nrows()).map(|i| format!("roi_{i}")).collect();
        RoiTimeSeries::new(values, labels, None)
    }

    pub fn n_rois(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_timepoints(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn row(&self, roi: usize) -> ArrayView1<'_, f64> {
        self.values.row(roi)
    }

    pub fn roi_labels(&self) -> &[String] {
        &self.roi_labels
    }

    pub fn sampling_period(&self) -> Option<f64> {
        self.sampling_period
    }
}

/// A cohort of subjects recorded under one condition. All subjects share the
/// same ROI count and scan length.
#[derive(Debug, Clone)]
pub struct SubjectGroup {
    group_id: String,
    subjects: Vec<RoiTimeSeries>,
}

impl SubjectGroup {
    pub fn new(group_id: impl Into<String>, subjects: Vec<RoiTimeSeries>) -> Result<Self> {
        let group_id = group_id.into();
        let first = subjects
            .first()
            .ok_or_else(|| Error::dim(format!("group {group_id:?} has no subjects")))?;
        let (n, t) = (first.n_rois(), first.n_timepoints());
        for (i, s) in subjects.iter().enumerate() {
            if s.n_rois() != n || s.n_timepoints() != t {
                return Err(Error::dim(format!(
                    "subject {i} in group {group_id:?} is {}x{}, expected {n}x{t}",
                    s.n_rois(),
                    s.n_timepoints()
                )));
            }
        }
        Ok(SubjectGroup { group_id, subjects })
    }

    pub fn group_id(&self) -> &str {
        &self.group_id
    }

    pub fn subjects(&self) -> &[RoiTimeSeries] {
        &self.subjects
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }
}

/// Orientation of a CSV table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CsvLayout {
    /// Each CSV row is one ROI (columns are time points).
    RoisInRows,
    /// Each CSV column is one ROI (rows are time points).
    RoisInColumns,
}

/// Reads a numeric CSV into a time series.
///
/// A leading header row and a leading label column are both detected by
/// attempting numeric parses: a row/column containing any non-numeric entry
/// beyond the corner cell is treated as labels. ROI labels are taken from the
/// label column under [`CsvLayout::RoisInRows`] and from the header row under
/// [`CsvLayout::RoisInColumns`]; when absent they are generated as `roi_i`.
/// Decimal separator is `.`; errors name 1-based file coordinates.
pub fn load_csv(path: impl AsRef<Path>, layout: CsvLayout) -> Result<RoiTimeSeries> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(BufReader::new(file));

    let mut rows: Vec<Vec<String>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(format!("row {}: {e}", i + 1)))?;
        rows.push(record.iter().map(|s| s.trim().to_string()).collect());
    }
    if rows.is_empty() {
        return Err(Error::format(format!("{}: empty file", path.display())));
    }
    let width = rows[0].len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(Error::RaggedRow { row: i + 1, expected: width, found: r.len() });
        }
    }

    let numeric = |s: &str| s.parse::<f64>().is_ok();
    // Header row: some cell past the corner fails to parse.
    let header_row = width >= 2 && rows[0][1..].iter().any(|c| !numeric(c));
    let data_start = usize::from(header_row);
    if rows.len() <= data_start {
        return Err(Error::format(format!("{}: no data rows", path.display())));
    }
    // Label column: some first cell of a data row fails to parse.
    let label_col = rows[data_start..].iter().any(|r| !numeric(&r[0]));
    let col_start = usize::from(label_col);
    if width <= col_start {
        return Err(Error::format(format!("{}: no data columns", path.display())));
    }

    let n_rows = rows.len() - data_start;
    let n_cols = width - col_start;
    let mut values = Array2::zeros((n_rows, n_cols));
    for (i, row) in rows[data_start..].iter().enumerate() {
        for (j, cell) in row[col_start..].iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::ParseCell {
                row: data_start + i + 1,
                col: col_start + j + 1,
                reason: format!("{cell:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::ParseCell {
                    row: data_start + i + 1,
                    col: col_start + j + 1,
                    reason: format!("non-finite value {cell:?}"),
                });
            }
            values[[i, j]] = v;
        }
    }

    let (values, labels) = match layout {
        CsvLayout::RoisInRows => {
            let labels = if label_col {
                rows[data_start..].iter().map(|r| r[0].clone()).collect()
            } else {
                (0..n_rows).map(|i| format!("roi_{i}")).collect()
            };
            (values, labels)
        }
        CsvLayout::RoisInColumns => {
            let labels = if header_row {
                rows[0][col_start..].iter().map(String::clone).collect()
            } else {
                (0..n_cols).map(|i| format!("roi_{i}")).collect()
            };
            (values.reversed_axes().as_standard_layout().into_owned(), labels)
        }
    };
    RoiTimeSeries::new(values, labels, None)
}

/// Writes the canonical CSV form: one row per ROI, label column first, no
/// header row. Floats use shortest round-trip formatting, so
/// `load_csv(save_csv(ts))` reproduces `ts.values()` exactly. The sampling
/// period is not representable in CSV and is dropped.
pub fn save_csv(ts: &RoiTimeSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for (label, row) in ts.roi_labels.iter().zip(ts.values.rows()) {
        let mut record = Vec::with_capacity(ts.n_timepoints() + 1);
        record.push(label.clone());
        record.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&record).map_err(|e| Error::format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Centers and scales each ROI to mean 0 and population standard deviation 1
/// (variance computed with divisor `T`). Constant rows cannot be scaled; they
/// are mapped to all zeros and their indices returned alongside the result.
pub fn zscore_rows(ts: &RoiTimeSeries) -> (RoiTimeSeries, Vec<usize>) {
    let t = ts.n_timepoints() as f64;
    let mut values = ts.values.clone();
    let mut constant = Vec::new();
    for (i, mut row) in values.rows_mut().into_iter().enumerate() {
        let mean = row.sum() / t;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t;
        if var == 0.0 {
            row.fill(0.0);
            constant.push(i);
        } else {
            let sd = var.sqrt();
            row.mapv_inplace(|v| (v - mean) / sd);
        }
    }
    let out = RoiTimeSeries {
        values,
        roi_labels: ts.roi_labels.clone(),
        sampling_period: ts.sampling_period,
    };
    (out, constant)
}

// ---------------------------------------------------------------------------
// Binary container for estimated connectivity series.
//
// Layout: magic "RCFC" | u32 LE version | u32 LE header length | JSON header
// | payload. The payload is every frame in time order, row-major, f64 LE.
// JSON carries shape, method tag and estimation parameters; the payload
// round-trips bit-exactly.

const MAGIC: &[u8; 4] = b"RCFC";
const CONTAINER_VERSION: u32 = 1;
const MAX_HEADER_LEN: u32 = 1 << 24;

#[derive(Serialize, Deserialize)]
struct ContainerHeader {
    shape: [usize; 3],
    method: FcMethod,
    params: FcParams,
    degenerate_pairs: u64,
}

/// Serializes a connectivity series to the binary container format.
pub fn save_fc_series(fcs: &FcSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if fcs.n_frames() == 0 {
        return Err(Error::dim("refusing to write empty connectivity series"));
    }
    let header = ContainerHeader {
        shape: [fcs.n_frames(), fcs.n_rois(), fcs.n_rois()],
        method: fcs.method(),
        params: fcs.params().clone(),
        degenerate_pairs: fcs.degenerate_pairs(),
    };
    let header_bytes = serde_json::to_vec(&header).map_err(|e| Error::format(e.to_string()))?;

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&CONTAINER_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&header_bytes).map_err(io)?;
    for v in fcs.values().iter() {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

/// Reads a connectivity series written by [`save_fc_series`]. Fails on a bad
/// magic number, an unsupported version, or a payload whose length disagrees
/// with the declared shape.
pub fn load_fc_series(path: impl AsRef<Path>) -> Result<FcSeries> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path, e);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::format(format!("{}: bad magic number", path.display())));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(io)?;
    let version = u32::from_le_bytes(word);
    if version != CONTAINER_VERSION {
        return Err(Error::Version { found: version, supported: CONTAINER_VERSION });
    }
    r.read_exact(&mut word).map_err(io)?;
    let header_len = u32::from_le_bytes(word);
    if header_len > MAX_HEADER_LEN {
        return Err(Error::format(format!("{}: header length {header_len} out of range", path.display())));
    }
    let mut header_bytes = vec![0u8; header_len as usize];
    r.read_exact(&mut header_bytes).map_err(io)?;
    let header: ContainerHeader =
        serde_json::from_slice(&header_bytes).map_err(|e| Error::format(format!("{}: {e}", path.display())))?;

    let [t, n, n2] = header.shape;
    if n != n2 || t == 0 || n == 0 {
        return Err(Error::format(format!("{}: invalid shape {:?}", path.display(), header.shape)));
    }
    let count = t * n * n;
    let mut payload = vec![0u8; count * 8];
    r.read_exact(&mut payload)
        .map_err(|_| Error::format(format!("{}: truncated payload", path.display())))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(io)? != 0 {
        return Err(Error::format(format!("{}: trailing bytes after payload", path.display())));
    }

    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let values = ndarray::Array3::from_shape_vec((t, n, n), values)
        .map_err(|e| Error::format(e.to_string()))?;
    Ok(FcSeries::from_parts(values, header.method, header.params, header.degenerate_pairs))
}
