//! Critical Points Layer (CPL) and its weighted variant (WCPL).
//!
//! Selection works purely on indices: the column-wise argmax of a feature
//! matrix `F_S` nominates the *critical points*, their summed column maxima
//! give each point a score, and the score-sorted index list is resized to a
//! fixed output count with nearest-neighbour resizing. The selected rows are
//! then gathered from an input feature matrix `F_I` (usually `F_I = F_S`).
//!
//! Everything here is deterministic:
//!
//! * argmax ties go to the smallest row index,
//! * unique indices keep first-occurrence order,
//! * the score sort is stable.
//!
//! With these rules the selection is exactly invariant to row permutations
//! whenever column maxima are attained uniquely and scores are pairwise
//! distinct.
//!
//! Two baseline samplers, uniform random and farthest point sampling, live in
//! this module too so that they can be swapped in for CPL.

use std::collections::HashMap;

use num_traits::Float;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CplError {
    #[error("feature matrix must have at least one row and one column (got {rows}x{cols})")]
    EmptyMatrix { rows: usize, cols: usize },
    #[error("feature matrix data length {len} does not match shape {rows}x{cols}")]
    ShapeMismatch { rows: usize, cols: usize, len: usize },
    #[error("non-finite feature value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("index {index} out of range for {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },
    #[error("output count must be at least 1")]
    ZeroOutputCount,
    #[error("cannot draw {k} of {n} points without replacement")]
    TooManySamples { k: usize, n: usize },
}

/// Dense row-major `n x d` matrix of finite reals; row `i` is the feature
/// vector of point `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Float> FeatureMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, CplError> {
        FeatureView::new(rows, cols, &data)?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, CplError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(CplError::ShapeMismatch {
                    rows: rows.len(),
                    cols,
                    len: data.len() + row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn view(&self) -> FeatureView<'_, T> {
        FeatureView {
            rows: self.rows,
            cols: self.cols,
            data: &self.data,
        }
    }
}

/// Borrowed counterpart of [`FeatureMatrix`], used to run selection over a
/// slice of a larger buffer (one cloud inside a batch) without copying.
#[derive(Debug, Clone, Copy)]
pub struct FeatureView<'a, T = f64> {
    rows: usize,
    cols: usize,
    data: &'a [T],
}

impl<'a, T: Float> FeatureView<'a, T> {
    pub fn new(rows: usize, cols: usize, data: &'a [T]) -> Result<Self, CplError> {
        if rows == 0 || cols == 0 {
            return Err(CplError::EmptyMatrix { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(CplError::ShapeMismatch {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(CplError::NonFinite {
                row: pos / cols,
                col: pos % cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &'a [T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SelectionMode {
    /// Every critical point counts once.
    Cpl,
    /// Critical points are repeated by the number of columns they win.
    Wcpl,
}

/// Full trace of one selection, kept for diagnostics and tests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalSelection<T = f64> {
    pub mode: SelectionMode,
    /// Column maxima of `F_S`.
    pub f_max: Vec<T>,
    /// Row attaining each column maximum.
    pub idx: Vec<usize>,
    /// Distinct critical indices, first-occurrence order.
    pub uidx: Vec<usize>,
    /// Summed column maxima per critical index.
    pub f_s: Vec<T>,
    /// Number of columns won per critical index.
    pub fr: Vec<usize>,
    /// `uidx` reordered by ascending score.
    pub ordered: Vec<usize>,
    pub sorted_f_s: Vec<T>,
    pub sorted_fr: Vec<usize>,
    /// `ordered` with each entry repeated `sorted_fr` times (WCPL only).
    pub midx: Option<Vec<usize>>,
    /// Output indices, length `k`.
    pub resized: Vec<usize>,
}

impl<T> CriticalSelection<T> {
    pub fn critical_count(&self) -> usize {
        self.uidx.len()
    }
}

/// Column maxima and the smallest row index attaining each of them.
pub fn column_max_argmax<T: Float>(fs: FeatureView<'_, T>) -> (Vec<T>, Vec<usize>) {
    let mut f_max = fs.row(0).to_vec();
    let mut idx = vec![0usize; fs.cols()];
    for r in 1..fs.rows() {
        for (c, &v) in fs.row(r).iter().enumerate() {
            if v > f_max[c] {
                f_max[c] = v;
                idx[c] = r;
            }
        }
    }
    (f_max, idx)
}

/// Collapse `idx` to its distinct entries, summing the column maxima and
/// counting the columns that each distinct row wins.
pub fn aggregate_unique<T: Float>(f_max: &[T], idx: &[usize]) -> (Vec<usize>, Vec<T>, Vec<usize>) {
    debug_assert_eq!(f_max.len(), idx.len());
    let mut slot: HashMap<usize, usize> = HashMap::with_capacity(idx.len());
    let mut uidx = Vec::new();
    let mut f_s = Vec::new();
    let mut fr = Vec::new();
    for (&row, &value) in idx.iter().zip(f_max) {
        let j = *slot.entry(row).or_insert_with(|| {
            uidx.push(row);
            f_s.push(T::zero());
            fr.push(0);
            uidx.len() - 1
        });
        f_s[j] = f_s[j] + value;
        fr[j] += 1;
    }
    (uidx, f_s, fr)
}

/// Stable ascending sort of the three aligned arrays by score.
pub fn sort_by_score<T: Float>(
    uidx: &[usize],
    f_s: &[T],
    fr: &[usize],
) -> (Vec<usize>, Vec<T>, Vec<usize>) {
    let mut order: Vec<usize> = (0..uidx.len()).collect();
    // scores are finite, so partial_cmp never fails
    order.sort_by(|&a, &b| f_s[a].partial_cmp(&f_s[b]).expect("finite scores"));
    (
        order.iter().map(|&j| uidx[j]).collect(),
        order.iter().map(|&j| f_s[j]).collect(),
        order.iter().map(|&j| fr[j]).collect(),
    )
}

/// Nearest-neighbour resize of an integer array:
/// `out[i] = src[min(m - 1, floor(i * m / k))]`.
///
/// Up-samples by repetition when `k > m` and decimates evenly when `k < m`.
pub fn nn_resize(src: &[usize], k: usize) -> Vec<usize> {
    assert!(!src.is_empty(), "nn_resize needs a non-empty source");
    let m = src.len() as u128;
    (0..k as u128)
        .map(|i| {
            let j = ((i * m) / k as u128).min(m - 1);
            src[j as usize]
        })
        .collect()
}

/// Repeat `ordered[j]` exactly `counts[j]` times.
pub fn weighted_expand(ordered: &[usize], counts: &[usize]) -> Vec<usize> {
    debug_assert_eq!(ordered.len(), counts.len());
    let mut out = Vec::with_capacity(counts.iter().sum());
    for (&i, &c) in ordered.iter().zip(counts) {
        out.extend(std::iter::repeat(i).take(c));
    }
    out
}

/// Run the whole selection pipeline on `F_S` and return `k` output indices
/// along with every intermediate array.
pub fn cpl_select<T: Float>(
    fs: FeatureView<'_, T>,
    k: usize,
    mode: SelectionMode,
) -> Result<CriticalSelection<T>, CplError> {
    if k == 0 {
        return Err(CplError::ZeroOutputCount);
    }
    let (f_max, idx) = column_max_argmax(fs);
    let (uidx, f_s, fr) = aggregate_unique(&f_max, &idx);
    let (ordered, sorted_f_s, sorted_fr) = sort_by_score(&uidx, &f_s, &fr);
    let (midx, resized) = match mode {
        SelectionMode::Cpl => (None, nn_resize(&ordered, k)),
        SelectionMode::Wcpl => {
            let midx = weighted_expand(&ordered, &sorted_fr);
            let resized = nn_resize(&midx, k);
            (Some(midx), resized)
        }
    };
    Ok(CriticalSelection {
        mode,
        f_max,
        idx,
        uidx,
        f_s,
        fr,
        ordered,
        sorted_f_s,
        sorted_fr,
        midx,
        resized,
    })
}

/// Point collection: row `i` of the result is row `indices[i]` of `fi`.
pub fn gather_rows<T: Float>(
    fi: FeatureView<'_, T>,
    indices: &[usize],
) -> Result<FeatureMatrix<T>, CplError> {
    if indices.is_empty() {
        return Err(CplError::ZeroOutputCount);
    }
    let mut data = Vec::with_capacity(indices.len() * fi.cols());
    for &i in indices {
        if i >= fi.rows() {
            return Err(CplError::IndexOutOfRange {
                index: i,
                rows: fi.rows(),
            });
        }
        data.extend_from_slice(fi.row(i));
    }
    Ok(FeatureMatrix {
        rows: indices.len(),
        cols: fi.cols(),
        data,
    })
}

/// Column maxima of the gathered matrix.
pub fn output_max<T: Float>(fo: FeatureView<'_, T>) -> Vec<T> {
    column_max_argmax(fo).0
}

/// `k` distinct indices in `0..n` drawn uniformly from a ChaCha8 stream
/// seeded with `seed`.
pub fn downsample_random(n: usize, k: usize, seed: u64) -> Result<Vec<usize>, CplError> {
    if k == 0 {
        return Err(CplError::ZeroOutputCount);
    }
    if k > n {
        return Err(CplError::TooManySamples { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, n, k).into_vec())
}

/// Greedy farthest point sampling starting from point 0. Distance ties go to
/// the smallest index.
pub fn downsample_fps(points: &[[f64; 3]], k: usize) -> Result<Vec<usize>, CplError> {
    let n = points.len();
    if k == 0 {
        return Err(CplError::ZeroOutputCount);
    }
    if k > n {
        return Err(CplError::TooManySamples { k, n });
    }
    let mut chosen = Vec::with_capacity(k);
    let mut dist = vec![f64::INFINITY; n];
    let mut current = 0usize;
    for _ in 0..k {
        chosen.push(current);
        let p = points[current];
        dist[current] = f64::NEG_INFINITY;
        let mut best = f64::NEG_INFINITY;
        let mut best_i = current;
        for (i, q) in points.iter().enumerate() {
            if dist[i] == f64::NEG_INFINITY {
                continue;
            }
            let dx = q[0] - p[0];
            let dy = q[1] - p[1];
            let dz = q[2] - p[2];
            let d2 = dx * dx + dy * dy + dz * dz;
            if d2 < dist[i] {
                dist[i] = d2;
            }
            if dist[i] > best {
                best = dist[i];
                best_i = i;
            }
        }
        current = best_i;
    }
    Ok(chosen)
}
