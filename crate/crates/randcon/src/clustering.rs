//! State clustering.
//!
//! [`kmeans`] runs restarted Lloyd iterations with k-means++ seeding and
//! picks the restart with the lowest Davies-Bouldin index. Restarts draw
//! from per-restart substreams of one seed, so results are identical no
//! matter how restarts are scheduled. [`elbow_k`] selects a cluster count
//! from the inertia curve, [`match_states`] aligns estimated centroids with
//! ground-truth patterns by minimum-cost assignment.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_stream};

/// Outcome of a clustering run: the winning restart's model plus the
/// selection bookkeeping.
#[derive(Debug, Clone)]
pub struct ClusterResult {
    /// `m x d` cluster centers.
    pub centroids: Array2<f64>,
    /// Cluster index per sample, each `< m`.
    pub labels: Vec<usize>,
    /// Davies-Bouldin index of the winning restart (lower is better).
    pub db_index: f64,
    /// Sum of squared distances to assigned centroids.
    pub inertia: f64,
    /// Restarts executed.
    pub n_restarts: usize,
    /// Index of the restart that won.
    pub winning_restart: usize,
    /// Seed the restart substreams were derived from.
    pub seed: u64,
}

#[inline]
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Contiguous row views of the sample matrix.
struct Rows<'a> {
    rows: Vec<&'a [f64]>,
    d: usize,
}

impl<'a> Rows<'a> {
    fn new<S: ndarray::Data<Elem = f64>>(samples: &'a ndarray::ArrayBase<S, ndarray::Ix2>) -> Rows<'a> {
        let d = samples.ncols();
        let rows = samples
            .rows()
            .into_iter()
            .map(|r| r.to_slice().expect("standard-layout samples"))
            .collect();
        Rows { rows, d }
    }

    fn len(&self) -> usize {
        self.rows.len()
    }
}

struct SingleRun {
    centroids: Array2<f64>,
    labels: Vec<usize>,
    inertia: f64,
    /// Inertia after every assignment step, for monotonicity checks.
    #[cfg_attr(not(test), allow(dead_code))]
    inertia_trace: Vec<f64>,
}

/// Nearest-centroid assignment; ties go to the lowest centroid index.
fn assign(samples: &Rows<'_>, centroids: &Array2<f64>) -> (Vec<usize>, f64) {
    let m = centroids.nrows();
    let pairs: Vec<(usize, f64)> = samples
        .rows
        .par_iter()
        .map(|row| {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..m {
                let d = dist2(row, centroids.row(c).to_slice().expect("contiguous centroid"));
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            (best, best_d)
        })
        .collect();
    let mut labels = Vec::with_capacity(samples.len());
    let mut inertia = 0.0;
    for (l, d) in pairs {
        labels.push(l);
        inertia += d;
    }
    (labels, inertia)
}

/// Cluster means. An empty cluster is re-seeded to the sample farthest from
/// its currently assigned centroid (ties to the smallest sample index), one
/// empty cluster at a time.
fn means_with_reseed(samples: &Rows<'_>, labels: &[usize], m: usize) -> Array2<f64> {
    let d = samples.d;
    let mut sums = Array2::<f64>::zeros((m, d));
    let mut counts = vec![0usize; m];
    for (row, &l) in samples.rows.iter().zip(labels) {
        counts[l] += 1;
        let mut target = sums.row_mut(l);
        for (slot, v) in target.iter_mut().zip(*row) {
            *slot += v;
        }
    }
    for c in 0..m {
        if counts[c] > 0 {
            let inv = 1.0 / counts[c] as f64;
            sums.row_mut(c).mapv_inplace(|v| v * inv);
        }
    }
    let empties: Vec<usize> = (0..m).filter(|&c| counts[c] == 0).collect();
    if !empties.is_empty() {
        // Distance of each sample to its own (non-empty) cluster mean.
        let mut far: Vec<f64> = samples
            .rows
            .iter()
            .zip(labels)
            .map(|(row, &l)| {
                if counts[l] == 0 {
                    0.0
                } else {
                    dist2(row, sums.row(l).to_slice().expect("contiguous centroid"))
                }
            })
            .collect();
        for c in empties {
            let mut pick = 0usize;
            let mut best = -1.0;
            for (i, &f) in far.iter().enumerate() {
                if f > best {
                    best = f;
                    pick = i;
                }
            }
            for (slot, v) in sums.row_mut(c).iter_mut().zip(samples.rows[pick]) {
                *slot = *v;
            }
            far[pick] = -2.0; // a donor serves at most one empty cluster
        }
    }
    sums
}

/// k-means++ seeding.
fn seed_centroids(samples: &Rows<'_>, m: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Array2<f64> {
    let s = samples.len();
    let mut centroids = Array2::zeros((m, samples.d));
    let first = rng.random_range(0..s);
    centroids.row_mut(0).assign(&ndarray::ArrayView1::from(samples.rows[first]));
    let mut d2: Vec<f64> = samples.rows.iter().map(|r| dist2(r, samples.rows[first])).collect();
    for c in 1..m {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = s - 1;
            for (i, &w) in d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..s)
        };
        centroids.row_mut(c).assign(&ndarray::ArrayView1::from(samples.rows[pick]));
        for (slot, row) in d2.iter_mut().zip(&samples.rows) {
            let d = dist2(row, samples.rows[pick]);
            if d < *slot {
                *slot = d;
            }
        }
    }
    centroids
}

/// One restart: k-means++ then Lloyd iterations capped at `max_iters`,
/// stopping early when labels stabilize. The returned state is
/// self-consistent (labels assigned against the returned centroids).
fn kmeans_single(
    samples: &Rows<'_>,
    m: usize,
    max_iters: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> SingleRun {
    let mut centroids = seed_centroids(samples, m, rng);
    let (mut labels, mut inertia) = assign(samples, &centroids);
    let mut trace = vec![inertia];
    for _ in 0..max_iters {
        centroids = means_with_reseed(samples, &labels, m);
        let (new_labels, new_inertia) = assign(samples, &centroids);
        trace.push(new_inertia);
        let stable = new_labels == labels;
        labels = new_labels;
        inertia = new_inertia;
        if stable {
            break;
        }
    }
    SingleRun { centroids, labels, inertia, inertia_trace: trace }
}

fn validate_samples(samples: ArrayView2<'_, f64>) -> Result<()> {
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("non-finite sample value"));
    }
    Ok(())
}

/// Restarted k-means. Every restart draws from substream `r` of `seed`; the
/// winner is the restart with the smallest Davies-Bouldin index (ties to the
/// earliest restart), so the outcome is reproducible and independent of
/// scheduling.
pub fn kmeans(
    samples: ArrayView2<'_, f64>,
    m: usize,
    n_restarts: usize,
    max_iters: usize,
    seed: u64,
) -> Result<ClusterResult> {
    let s = samples.nrows();
    if m < 2 {
        return Err(Error::param(format!("need at least 2 clusters, got {m}")));
    }
    if s < m {
        return Err(Error::dim(format!("{s} samples cannot fill {m} clusters")));
    }
    if n_restarts == 0 || max_iters == 0 {
        return Err(Error::param("restarts and iterations must both be at least 1"));
    }
    validate_samples(samples)?;
    // Borrows when the input is already row-major; copies only otherwise.
    let standard = samples.as_standard_layout();
    let rows = Rows::new(&standard);
    let first = rows.rows[0];
    if rows.rows.iter().all(|r| *r == first) {
        return Err(Error::degenerate("all samples are identical, nothing to cluster"));
    }

    let runs: Vec<(usize, SingleRun, f64)> = (0..n_restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_stream(seed, r as u64);
            let run = kmeans_single(&rows, m, max_iters, &mut rng);
            let db = davies_bouldin(standard.view(), &run.labels, run.centroids.view())
                .unwrap_or(f64::INFINITY);
            (r, run, db)
        })
        .collect();

    let mut best: Option<(usize, SingleRun, f64)> = None;
    for (r, run, db) in runs {
        let better = match &best {
            None => true,
            Some((br, _, bdb)) => db < *bdb || (db == *bdb && r < *br),
        };
        if better {
            best = Some((r, run, db));
        }
    }
    let (winning_restart, run, db_index) = best.expect("at least one restart");
    if !db_index.is_finite() {
        return Err(Error::degenerate(
            "every restart produced a degenerate clustering (coincident centroids or a single non-empty cluster)",
        ));
    }
    Ok(ClusterResult {
        centroids: run.centroids,
        labels: run.labels,
        db_index,
        inertia: run.inertia,
        n_restarts,
        winning_restart,
        seed,
    })
}

/// Davies-Bouldin index: the mean over clusters of the worst
/// `(s_i + s_j) / d_ij` ratio, where `s_i` is the mean member-to-centroid
/// distance and `d_ij` the centroid separation. Empty clusters are excluded;
/// fewer than two non-empty clusters or coincident centroids are errors.
pub fn davies_bouldin(
    samples: ArrayView2<'_, f64>,
    labels: &[usize],
    centroids: ArrayView2<'_, f64>,
) -> Result<f64> {
    let s = samples.nrows();
    let m = centroids.nrows();
    if labels.len() != s {
        return Err(Error::dim(format!("{} labels for {s} samples", labels.len())));
    }
    if samples.ncols() != centroids.ncols() {
        return Err(Error::dim("sample and centroid dimensions differ"));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= m) {
        return Err(Error::param(format!("label {bad} out of range for {m} clusters")));
    }

    let mut counts = vec![0usize; m];
    let mut scatter = vec![0.0f64; m];
    for (row, &l) in samples.rows().into_iter().zip(labels) {
        let c = centroids.row(l);
        let d = row.iter().zip(c.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        scatter[l] += d;
        counts[l] += 1;
    }
    let live: Vec<usize> = (0..m).filter(|&c| counts[c] > 0).collect();
    if live.len() < 2 {
        return Err(Error::degenerate(format!(
            "davies-bouldin needs at least 2 non-empty clusters, got {}",
            live.len()
        )));
    }
    for &c in &live {
        scatter[c] /= counts[c] as f64;
    }

    let mut total = 0.0;
    for &i in &live {
        let mut worst = f64::NEG_INFINITY;
        for &j in &live {
            if i == j {
                continue;
            }
            let d = centroids
                .row(i)
                .iter()
                .zip(centroids.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if d == 0.0 {
                return Err(Error::degenerate(format!("coincident centroids {i} and {j}")));
            }
            let ratio = (scatter[i] + scatter[j]) / d;
            if ratio > worst {
                worst = ratio;
            }
        }
        total += worst;
    }
    Ok(total / live.len() as f64)
}

/// Inertia curve and elbow selection outcome.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ElbowResult {
    /// The k at maximum perpendicular distance from the chord joining the
    /// curve's endpoints (ties to the smallest k).
    pub selected_k: usize,
    /// `(k, best inertia over restarts)` for every candidate k.
    pub inertias: Vec<(usize, f64)>,
    /// False when the inertia curve increased somewhere (a fit failure
    /// signal); the selection still proceeds.
    pub monotonic: bool,
}

const ELBOW_RESTARTS: usize = 10;
const ELBOW_MAX_ITERS: usize = 50;

/// Picks a cluster count from the elbow of the inertia curve over
/// `k_min..=k_max`. Each k is fitted with restarted Lloyd runs (best inertia
/// kept) on substreams derived from `seed` and `k`.
pub fn elbow_k(
    samples: ArrayView2<'_, f64>,
    k_min: usize,
    k_max: usize,
    seed: u64,
) -> Result<ElbowResult> {
    if k_min < 2 || k_max < k_min + 2 {
        return Err(Error::param(format!(
            "need k_min >= 2 and k_max >= k_min + 2, got {k_min}..{k_max}"
        )));
    }
    if k_max > samples.nrows() {
        return Err(Error::dim(format!(
            "k_max {k_max} exceeds sample count {}",
            samples.nrows()
        )));
    }
    validate_samples(samples)?;
    let standard = samples.as_standard_layout();
    let rows = Rows::new(&standard);

    let inertias: Vec<(usize, f64)> = (k_min..=k_max)
        .map(|k| {
            let base = derive_seed(seed, "elbow", k as u64);
            let best = (0..ELBOW_RESTARTS)
                .into_par_iter()
                .map(|r| {
                    let mut rng = rng_stream(base, r as u64);
                    kmeans_single(&rows, k, ELBOW_MAX_ITERS, &mut rng).inertia
                })
                .reduce(|| f64::INFINITY, f64::min);
            (k, best)
        })
        .collect();

    let monotonic = inertias.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-9);
    let (x1, y1) = (k_min as f64, inertias.first().expect("non-empty curve").1);
    let (x2, y2) = (k_max as f64, inertias.last().expect("non-empty curve").1);
    let chord = ((y2 - y1).powi(2) + (x2 - x1).powi(2)).sqrt();
    let mut selected_k = k_min;
    let mut best_dist = f64::NEG_INFINITY;
    for &(k, inertia) in &inertias {
        let num = ((y2 - y1) * k as f64 - (x2 - x1) * inertia + x2 * y1 - y2 * x1).abs();
        let dist = num / chord;
        if dist > best_dist {
            best_dist = dist;
            selected_k = k;
        }
    }
    Ok(ElbowResult { selected_k, inertias, monotonic })
}

/// Alignment of estimated centroids to reference patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatching {
    /// `permutation[estimated_state] = reference_state`.
    pub permutation: Vec<usize>,
    /// Sum of Euclidean distances over matched pairs.
    pub total_distance: f64,
}

/// Minimum-cost perfect assignment (shortest augmenting paths with
/// potentials, O(n^3)). Returns row -> column and the total cost.
fn lap_min(cost: &Array2<f64>) -> (Vec<usize>, f64) {
    let n = cost.nrows();
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            perm[p[j] - 1] = j - 1;
        }
    }
    let total = perm.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
    (perm, total)
}

/// Optimal assignment that is lexicographically smallest among all
/// assignments attaining the optimal cost: fix rows in order, trying columns
/// ascending and keeping the first choice that still reaches the optimum.
fn lex_min_assignment(cost: &Array2<f64>) -> (Vec<usize>, f64) {
    let n = cost.nrows();
    let (_, best_total) = lap_min(cost);
    let tol = 1e-9 * (1.0 + best_total.abs());
    let mut perm = vec![0usize; n];
    let mut used = vec![false; n];
    let mut prefix = 0.0;
    for i in 0..n {
        let free: Vec<usize> = (0..n).filter(|&j| !used[j]).collect();
        let mut chosen = None;
        for &j in &free {
            let rest_total = if i + 1 == n {
                0.0
            } else {
                let rest: Vec<usize> = free.iter().copied().filter(|&c| c != j).collect();
                let mut sub = Array2::zeros((n - i - 1, rest.len()));
                for (ri, row) in (i + 1..n).enumerate() {
                    for (ci, &col) in rest.iter().enumerate() {
                        sub[[ri, ci]] = cost[[row, col]];
                    }
                }
                lap_min(&sub).1
            };
            if prefix + cost[[i, j]] + rest_total <= best_total + tol {
                chosen = Some(j);
                break;
            }
        }
        let j = chosen.expect("some column completes an optimal assignment");
        perm[i] = j;
        used[j] = true;
        prefix += cost[[i, j]];
    }
    let total = perm.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
    (perm, total)
}

/// Matches estimated centroids to reference patterns by minimizing the total
/// Euclidean distance over one-to-one assignments. Exact ties resolve to the
/// lexicographically smallest permutation (so all-equal costs yield the
/// identity).
pub fn match_states(
    estimated: ArrayView2<'_, f64>,
    truth: ArrayView2<'_, f64>,
) -> Result<StateMatching> {
    let (m, d) = estimated.dim();
    if truth.dim() != (m, d) {
        return Err(Error::dim(format!(
            "estimated {m}x{d} vs truth {}x{} state matrices",
            truth.nrows(),
            truth.ncols()
        )));
    }
    if m == 0 {
        return Err(Error::dim("no states to match"));
    }
    let mut cost = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            let d2: f64 = estimated
                .row(i)
                .iter()
                .zip(truth.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            cost[[i, j]] = d2.sqrt();
        }
    }
    let (permutation, total_distance) = lex_min_assignment(&cost);
    Ok(StateMatching { permutation, total_distance })
}

/// Orthonormalizes columns in place (modified Gram-Schmidt); returns false
/// when a column collapses to zero norm.
fn orthonormalize(q: &mut Array2<f64>) -> bool {
    let (_, k) = q.dim();
    for j in 0..k {
        for i in 0..j {
            let dot = q.column(i).dot(&q.column(j));
            let qi = q.column(i).to_owned();
            q.column_mut(j).zip_mut_with(&qi, |a, b| *a -= dot * b);
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        if norm <= 1e-300 {
            return false;
        }
        q.column_mut(j).mapv_inplace(|v| v / norm);
    }
    true
}

/// Variance-preserving linear projection onto the leading `dim` principal
/// directions (seeded subspace iteration on the centered data). Offered as
/// optional preprocessing before clustering very wide vectors.
pub fn project_principal(
    samples: ArrayView2<'_, f64>,
    dim: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    let (s, d) = samples.dim();
    if dim == 0 || dim > d.min(s) {
        return Err(Error::param(format!(
            "projection dimension {dim} out of range for {s}x{d} samples"
        )));
    }
    validate_samples(samples)?;
    let mut x = samples.to_owned();
    let mean = x.mean_axis(ndarray::Axis(0)).expect("non-empty samples");
    for mut row in x.rows_mut() {
        row.zip_mut_with(&mean, |a, b| *a -= b);
    }

    let mut rng = rng_stream(seed, 0);
    let mut q = Array2::from_shape_fn((d, dim), |_| rng.sample::<f64, _>(StandardNormal));
    if !orthonormalize(&mut q) {
        return Err(Error::degenerate("projection basis collapsed"));
    }
    for _ in 0..30 {
        let z = x.t().dot(&x.dot(&q));
        q = z;
        if !orthonormalize(&mut q) {
            return Err(Error::degenerate("projection basis collapsed"));
        }
    }
    Ok(x.dot(&q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn blobs(centers: &[(f64, f64)], per: usize, sigma: f64, seed: u64) -> Array2<f64> {
        use rand::Rng;
        let mut rng = rng_stream(seed, 0);
        let mut out = Array2::zeros((centers.len() * per, 2));
        let mut i = 0;
        for &(cx, cy) in centers {
            for _ in 0..per {
                out[[i, 0]] = cx + sigma * rng.sample::<f64, _>(StandardNormal);
                out[[i, 1]] = cy + sigma * rng.sample::<f64, _>(StandardNormal);
                i += 1;
            }
        }
        out
    }

    #[test]
    fn two_point_masses_cluster_exactly() {
        let mut data = Array2::zeros((20, 2));
        for i in 10..20 {
            data[[i, 0]] = 10.0;
            data[[i, 1]] = 10.0;
        }
        let result = kmeans(data.view(), 2, 5, 10, 1).unwrap();
        assert_eq!(result.inertia, 0.0);
        assert_eq!(result.db_index, 0.0);
        let l0 = result.labels[0];
        assert!(result.labels[..10].iter().all(|&l| l == l0));
        assert!(result.labels[10..].iter().all(|&l| l != l0));
        for c in 0..2 {
            let row = result.centroids.row(c);
            assert!(
                (row[0] == 0.0 && row[1] == 0.0) || (row[0] == 10.0 && row[1] == 10.0),
                "unexpected centroid {row}"
            );
        }
    }

    #[test]
    fn davies_bouldin_hand_example() {
        // 1-D clusters {0,2} and {10,12}: s = (1,1), centroid gap 10, DB = 0.2.
        let samples = array![[0.0], [2.0], [10.0], [12.0]];
        let centroids = array![[1.0], [11.0]];
        let db = davies_bouldin(samples.view(), &[0, 0, 1, 1], centroids.view()).unwrap();
        assert!((db - 0.2).abs() < 1e-12, "db {db}");
    }

    #[test]
    fn davies_bouldin_degenerate_inputs() {
        let samples = array![[0.0], [2.0], [10.0], [12.0]];
        let coincident = array![[1.0], [1.0]];
        assert!(matches!(
            davies_bouldin(samples.view(), &[0, 0, 1, 1], coincident.view()),
            Err(Error::Degenerate(_))
        ));
        let centroids = array![[6.0], [99.0]];
        assert!(matches!(
            davies_bouldin(samples.view(), &[0, 0, 0, 0], centroids.view()),
            Err(Error::Degenerate(_))
        ));
        assert!(davies_bouldin(samples.view(), &[0, 0, 0, 5], centroids.view()).is_err());
    }

    #[test]
    fn kmeans_validates_inputs() {
        let data = blobs(&[(0.0, 0.0), (10.0, 10.0)], 10, 0.5, 3);
        assert!(kmeans(data.view(), 1, 5, 10, 0).is_err());
        assert!(kmeans(data.view(), 21, 5, 10, 0).is_err());
        assert!(kmeans(data.view(), 2, 0, 10, 0).is_err());
        assert!(kmeans(data.view(), 2, 5, 0, 0).is_err());
        let same = Array2::from_elem((8, 3), 1.5);
        assert!(matches!(kmeans(same.view(), 2, 5, 10, 0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn converged_centroids_are_cluster_means_and_db_recomputes() {
        let data = blobs(&[(0.0, 0.0), (8.0, 0.0), (0.0, 8.0)], 30, 0.4, 7);
        let result = kmeans(data.view(), 3, 20, 50, 11).unwrap();
        let mut sums = Array2::<f64>::zeros((3, 2));
        let mut counts = [0usize; 3];
        for (i, &l) in result.labels.iter().enumerate() {
            counts[l] += 1;
            sums[[l, 0]] += data[[i, 0]];
            sums[[l, 1]] += data[[i, 1]];
        }
        for c in 0..3 {
            assert!(counts[c] > 0);
            for j in 0..2 {
                let mean = sums[[c, j]] / counts[c] as f64;
                assert!((mean - result.centroids[[c, j]]).abs() < 1e-9);
            }
        }
        let db = davies_bouldin(data.view(), &result.labels, result.centroids.view()).unwrap();
        assert!((db - result.db_index).abs() < 1e-9);
        let inertia: f64 = data
            .rows()
            .into_iter()
            .zip(&result.labels)
            .map(|(r, &l)| dist2(r.to_slice().unwrap(), result.centroids.row(l).to_slice().unwrap()))
            .sum();
        assert!((inertia - result.inertia).abs() < 1e-9 * (1.0 + inertia));
    }

    #[test]
    fn winner_is_the_lowest_db_restart_and_runs_are_reproducible() {
        let data = blobs(&[(0.0, 0.0), (6.0, 1.0), (3.0, 7.0)], 25, 1.2, 5);
        let result = kmeans(data.view(), 3, 8, 15, 21).unwrap();
        let again = kmeans(data.view(), 3, 8, 15, 21).unwrap();
        assert_eq!(result.labels, again.labels);
        assert_eq!(result.centroids, again.centroids);
        assert_eq!(result.winning_restart, again.winning_restart);

        // Replay each restart by hand; the winner must be the (db, index) min.
        let owned = data.clone();
        let rows = Rows::new(&owned);
        let mut best: Option<(usize, f64)> = None;
        for r in 0..8 {
            let mut rng = rng_stream(21, r as u64);
            let run = kmeans_single(&rows, 3, 15, &mut rng);
            let db = davies_bouldin(data.view(), &run.labels, run.centroids.view())
                .unwrap_or(f64::INFINITY);
            if best.map_or(true, |(_, bd)| db < bd) {
                best = Some((r, db));
            }
        }
        let (br, bdb) = best.unwrap();
        assert_eq!(result.winning_restart, br);
        assert!((result.db_index - bdb).abs() < 1e-12);
    }

    #[test]
    fn lloyd_inertia_is_monotone_non_increasing() {
        let data = blobs(&[(0.0, 0.0), (2.0, 1.0), (4.0, 4.0), (1.0, 5.0)], 40, 1.5, 13);
        let rows_owner = data.clone();
        let rows = Rows::new(&rows_owner);
        for r in 0..6 {
            let mut rng = rng_stream(99, r);
            let run = kmeans_single(&rows, 4, 40, &mut rng);
            for w in run.inertia_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9 * (1.0 + w[0]), "trace step {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn empty_cluster_reseeds_to_farthest_sample() {
        // Two tight far blobs plus a lone outlier; force 3 clusters with a
        // label assignment that leaves cluster 2 empty.
        let data = array![
            [0.0, 0.0],
            [0.1, 0.0],
            [10.0, 10.0],
            [10.1, 10.0],
            [50.0, 50.0],
        ];
        let labels = vec![0, 0, 1, 1, 1];
        let rows_owner = data.clone();
        let rows = Rows::new(&rows_owner);
        let centroids = means_with_reseed(&rows, &labels, 3);
        // The outlier is farthest from cluster 1's mean, so it seeds cluster 2.
        assert_eq!(centroids.row(2).to_vec(), vec![50.0, 50.0]);
    }

    #[test]
    fn sample_order_does_not_change_the_recovered_model() {
        // On separable data every restart converges to the same optimum, so
        // permuting samples must not move the centroids or the DB index.
        let data = blobs(&[(0.0, 0.0), (9.0, 0.0), (0.0, 9.0)], 20, 0.3, 17);
        let result = kmeans(data.view(), 3, 10, 30, 3).unwrap();
        let mut shuffled = data.clone();
        let perm: Vec<usize> = (0..60).rev().collect();
        for (to, &from) in perm.iter().enumerate() {
            shuffled.row_mut(to).assign(&data.row(from));
        }
        let other = kmeans(shuffled.view(), 3, 10, 30, 3).unwrap();
        assert!((result.db_index - other.db_index).abs() < 1e-9);
        let mut a: Vec<Vec<i64>> = result
            .centroids
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| (v * 1e6).round() as i64).collect())
            .collect();
        let mut b: Vec<Vec<i64>> = other
            .centroids
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| (v * 1e6).round() as i64).collect())
            .collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn elbow_finds_four_blobs() {
        let data = blobs(&[(0.0, 0.0), (10.0, 0.0), (0.0, 10.0), (10.0, 10.0)], 50, 0.3, 29);
        let result = elbow_k(data.view(), 2, 8, 4).unwrap();
        assert_eq!(result.selected_k, 4, "curve: {:?}", result.inertias);
        assert!(result.monotonic);
        assert_eq!(result.inertias.len(), 7);
        assert!(elbow_k(data.view(), 1, 8, 4).is_err());
        assert!(elbow_k(data.view(), 5, 6, 4).is_err());
        assert!(elbow_k(data.view(), 2, 500, 4).is_err());
    }

    #[test]
    fn match_states_identity_and_tie_rule() {
        let truth = array![[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]];
        let m = match_states(truth.view(), truth.view()).unwrap();
        assert_eq!(m.permutation, vec![0, 1, 2]);
        assert!(m.total_distance.abs() < 1e-12);

        // All-equal costs: identity by the lexicographic tie rule.
        let flat_est = Array2::from_elem((4, 3), 1.0);
        let flat_truth = Array2::from_elem((4, 3), 2.0);
        let m = match_states(flat_est.view(), flat_truth.view()).unwrap();
        assert_eq!(m.permutation, vec![0, 1, 2, 3]);

        let wrong = Array2::from_elem((3, 4), 0.0);
        assert!(match_states(truth.view(), wrong.view()).is_err());
    }

    #[test]
    fn match_states_agrees_with_factorial_brute_force() {
        use rand::Rng;
        let mut rng = rng_stream(123, 0);
        for case in 0..100 {
            let m = 2 + case % 6; // 2..=7
            let d = 3;
            let est = Array2::from_shape_fn((m, d), |_| rng.random::<f64>() * 10.0);
            let truth = Array2::from_shape_fn((m, d), |_| rng.random::<f64>() * 10.0);
            let got = match_states(est.view(), truth.view()).unwrap();

            // Brute force in lexicographic order keeps the first strict
            // improvement, hence the lex-smallest optimal permutation.
            let mut perm: Vec<usize> = (0..m).collect();
            let mut best_perm = perm.clone();
            let mut best = f64::INFINITY;
            loop {
                let total: f64 = perm
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| {
                        est.row(i)
                            .iter()
                            .zip(truth.row(j).iter())
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .sum();
                if total < best - 1e-12 {
                    best = total;
                    best_perm = perm.clone();
                }
                if !next_permutation(&mut perm) {
                    break;
                }
            }
            assert_eq!(got.permutation, best_perm, "case {case}");
            assert!((got.total_distance - best).abs() < 1e-9, "case {case}");
        }
    }

    fn next_permutation(perm: &mut [usize]) -> bool {
        let n = perm.len();
        if n < 2 {
            return false;
        }
        let mut i = n - 1;
        while i > 0 && perm[i - 1] >= perm[i] {
            i -= 1;
        }
        if i == 0 {
            return false;
        }
        let mut j = n - 1;
        while perm[j] <= perm[i - 1] {
            j -= 1;
        }
        perm.swap(i - 1, j);
        perm[i..].reverse();
        true
    }

    #[test]
    fn principal_projection_preserves_low_rank_geometry() {
        use rand::Rng;
        // Points on a random 3-dim subspace of R^10.
        let mut rng = rng_stream(5, 0);
        let basis = Array2::from_shape_fn((3, 10), |_| rng.sample::<f64, _>(StandardNormal));
        let coords = Array2::from_shape_fn((40, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let data = coords.dot(&basis);
        let projected = project_principal(data.view(), 3, 9).unwrap();
        assert_eq!(projected.dim(), (40, 3));
        for a in 0..40 {
            for b in 0..a {
                let orig = dist2(
                    data.row(a).to_slice().unwrap(),
                    data.row(b).to_slice().unwrap(),
                )
                .sqrt();
                let proj = dist2(
                    projected.row(a).to_slice().unwrap(),
                    projected.row(b).to_slice().unwrap(),
                )
                .sqrt();
                assert!((orig - proj).abs() < 1e-6 * (1.0 + orig), "pair ({a},{b})");
            }
        }
        assert!(project_principal(data.view(), 0, 9).is_err());
        assert!(project_principal(data.view(), 11, 9).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn matching_is_a_bijection(seed in 0u64..500, m in 2usize..7) {
            use rand::Rng;
            let mut rng = rng_stream(seed, 0);
            let est = Array2::from_shape_fn((m, 4), |_| rng.random::<f64>());
            let truth = Array2::from_shape_fn((m, 4), |_| rng.random::<f64>());
            let got = match_states(est.view(), truth.view()).unwrap();
            let mut seen = vec![false; m];
            for &j in &got.permutation {
                prop_assert!(j < m && !seen[j]);
                seen[j] = true;
            }
        }
    }
}
