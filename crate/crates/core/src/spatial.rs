//! Spatial weight matrices and train/validation/test splits.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

mod kmeans;

pub use kmeans::{kmeans, KMeansResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpatialError {
    #[error("need {needed} < n = {n} (neighbour count must be below the unit count)")]
    TooFewUnits { needed: usize, n: usize },
    #[error("neighbour count must be at least 1")]
    ZeroNeighbors,
    #[error("coordinate of unit {0} is not finite")]
    NonFiniteCoordinate(usize),
    #[error("all points coincide; the distance threshold is undefined")]
    DegenerateGeometry,
    #[error("invalid weight entry ({i}, {j}) = {w}: {reason}")]
    InvalidEntry {
        i: usize,
        j: usize,
        w: f64,
        reason: &'static str,
    },
    #[error("split fractions must be positive and sum to 1 (got {0:?})")]
    BadFractions([f64; 3]),
    #[error("split part `{0}` is empty")]
    EmptyPart(&'static str),
    #[error("need n >= K >= 3 for a spatial split (n = {n}, K = {k})")]
    BadClusterCount { n: usize, k: usize },
    #[error("k-means left an empty cluster after {0} repair attempts")]
    Clustering(usize),
}

/// Sparse nonnegative `n × n` weights with zero diagonal, stored by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialWeights {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
    row_normalized: bool,
    max_neighbors: usize,
}

impl SpatialWeights {
    /// Builds from `(i, j, w)` triples (0-based); zero weights are dropped.
    pub fn from_triplets(
        n: usize,
        triples: impl IntoIterator<Item = (usize, usize, f64)>,
        row_normalized: bool,
    ) -> Result<Self, SpatialError> {
        let mut rows = vec![Vec::new(); n];
        for (i, j, w) in triples {
            let bad = |reason| SpatialError::InvalidEntry { i, j, w, reason };
            if i >= n || j >= n {
                return Err(bad("index out of range"));
            }
            if !w.is_finite() || !(0.0..=1.0).contains(&w) {
                return Err(bad("weights must lie in [0, 1]"));
            }
            if i == j && w != 0.0 {
                return Err(bad("diagonal must be zero"));
            }
            if w != 0.0 {
                rows[i].push((j, w));
            }
        }
        for (i, row) in rows.iter_mut().enumerate() {
            row.sort_by_key(|(j, _)| *j);
            if let Some(w) = row.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(SpatialError::InvalidEntry {
                    i,
                    j: w[0].0,
                    w: w[1].1,
                    reason: "duplicate entry",
                });
            }
        }
        Ok(Self::from_rows(n, rows, row_normalized))
    }

    fn from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>, row_normalized: bool) -> Self {
        let max_neighbors = rows.iter().map(Vec::len).max().unwrap_or(0);
        Self {
            n,
            rows,
            row_normalized,
            max_neighbors,
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::from_rows(n, vec![Vec::new(); n], false)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row_normalized(&self) -> bool {
        self.row_normalized
    }

    pub fn max_neighbors(&self) -> usize {
        self.max_neighbors
    }

    /// Nonzero entries of row `i` sorted by column.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by_key(&j, |(c, _)| *c)
            .map(|k| self.rows[i][k].1)
            .unwrap_or(0.0)
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |(j, w)| (i, *j, *w)))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for (i, j, w) in self.triplets() {
            d[(i, j)] = w;
        }
        d
    }

    /// `W · y` for an `n × q` matrix.
    pub fn apply(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(y.nrows(), self.n, "W·Y dimension mismatch");
        let mut out = DMatrix::zeros(self.n, y.ncols());
        for (i, row) in self.rows.iter().enumerate() {
            for (j, w) in row {
                for c in 0..y.ncols() {
                    out[(i, c)] += w * y[(*j, c)];
                }
            }
        }
        out
    }

    /// Dense block `W[rows, cols]`.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |a, b| self.get(rows[a], cols[b]))
    }

    /// Re-checks the structural assumptions: entries in `[0, 1]`, zero
    /// diagonal and the recorded neighbour maximum.
    pub fn check_invariants(&self) -> bool {
        let entries_ok = self
            .triplets()
            .all(|(i, j, w)| i != j && w > 0.0 && w <= 1.0);
        let max = self.rows.iter().map(Vec::len).max().unwrap_or(0);
        entries_ok && max == self.max_neighbors
    }
}

fn check_coords(coords: &[[f64; 2]]) -> Result<(), SpatialError> {
    match coords
        .iter()
        .position(|c| !c[0].is_finite() || !c[1].is_finite())
    {
        Some(i) => Err(SpatialError::NonFiniteCoordinate(i)),
        None => Ok(()),
    }
}

fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn normalize_rows(rows: &mut [Vec<(usize, f64)>]) {
    for row in rows.iter_mut() {
        let total: f64 = row.iter().map(|(_, w)| w).sum();
        if total > 0.0 {
            for (_, w) in row.iter_mut() {
                *w /= total;
            }
        }
    }
}

/// Unit weight on each unit's `k` nearest neighbours (ties by index),
/// optionally row-normalised.
pub fn knn_weights(
    coords: &[[f64; 2]],
    k: usize,
    normalize: bool,
) -> Result<SpatialWeights, SpatialError> {
    let n = coords.len();
    if k == 0 {
        return Err(SpatialError::ZeroNeighbors);
    }
    if k >= n {
        return Err(SpatialError::TooFewUnits { needed: k, n });
    }
    check_coords(coords)?;
    let mut rows = Vec::with_capacity(n);
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        order.clear();
        order.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (dist(&coords[i], &coords[j]), j)),
        );
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut row: Vec<(usize, f64)> = order[..k].iter().map(|&(_, j)| (j, 1.0)).collect();
        row.sort_by_key(|(j, _)| *j);
        rows.push(row);
    }
    if normalize {
        normalize_rows(&mut rows);
    }
    Ok(SpatialWeights::from_rows(n, rows, normalize))
}

/// Smallest pairwise distance `τ` such that every unit has at least
/// `min_neighbors` others strictly closer than `τ`.
pub fn inverse_distance_threshold(
    coords: &[[f64; 2]],
    min_neighbors: usize,
) -> Result<f64, SpatialError> {
    let n = coords.len();
    if min_neighbors == 0 {
        return Err(SpatialError::ZeroNeighbors);
    }
    if min_neighbors >= n {
        return Err(SpatialError::TooFewUnits {
            needed: min_neighbors,
            n,
        });
    }
    check_coords(coords)?;
    let mut all = Vec::with_capacity(n * (n - 1) / 2);
    let mut kth_max = 0.0f64;
    let mut d_i = Vec::with_capacity(n);
    for i in 0..n {
        d_i.clear();
        for j in 0..n {
            if j != i {
                let d = dist(&coords[i], &coords[j]);
                d_i.push(d);
                if j > i {
                    all.push(d);
                }
            }
        }
        d_i.sort_by(f64::total_cmp);
        kth_max = kth_max.max(d_i[min_neighbors - 1]);
    }
    let above = all
        .iter()
        .copied()
        .filter(|d| *d > kth_max)
        .min_by(f64::total_cmp);
    match above {
        Some(t) => Ok(t),
        None if kth_max > 0.0 => Ok(kth_max.next_up()),
        None => Err(SpatialError::DegenerateGeometry),
    }
}

/// `W_ij = 1 / (1 + d_ij)` for `d_ij < τ`, `i ≠ j`.
pub fn inverse_distance_weights(
    coords: &[[f64; 2]],
    min_neighbors: usize,
    normalize: bool,
) -> Result<SpatialWeights, SpatialError> {
    let tau = inverse_distance_threshold(coords, min_neighbors)?;
    let n = coords.len();
    let mut rows: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .filter_map(|j| {
                    let d = dist(&coords[i], &coords[j]);
                    (d < tau).then(|| (j, 1.0 / (1.0 + d)))
                })
                .collect()
        })
        .collect();
    if normalize {
        normalize_rows(&mut rows);
    }
    Ok(SpatialWeights::from_rows(n, rows, normalize))
}

/// How to build a weight matrix from coordinates; applied to whichever
/// subset of units a fit or prediction needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSpec {
    Knn { k: usize, normalize: bool },
    InverseDistance { min_neighbors: usize, normalize: bool },
}

impl Default for WeightSpec {
    fn default() -> Self {
        WeightSpec::Knn {
            k: 8,
            normalize: true,
        }
    }
}

impl WeightSpec {
    pub fn build(&self, coords: &[[f64; 2]]) -> Result<SpatialWeights, SpatialError> {
        match *self {
            WeightSpec::Knn { k, normalize } => knn_weights(coords, k, normalize),
            WeightSpec::InverseDistance {
                min_neighbors,
                normalize,
            } => inverse_distance_weights(coords, min_neighbors, normalize),
        }
    }

    pub fn build_subset(
        &self,
        coords: &[[f64; 2]],
        units: &[usize],
    ) -> Result<SpatialWeights, SpatialError> {
        let sub: Vec<[f64; 2]> = units.iter().map(|&i| coords[i]).collect();
        self.build(&sub)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Ordinary,
    Spatial,
}

/// Disjoint train/validation/test index sets (0-based, sorted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub kind: SplitKind,
    pub seed: u64,
}

impl SplitPlan {
    pub fn n(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    /// True when the three parts are nonempty, disjoint and cover `0..n`.
    pub fn is_partition(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.validation).chain(&self.test) {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        !self.train.is_empty()
            && !self.validation.is_empty()
            && !self.test.is_empty()
            && seen.into_iter().all(|s| s)
    }
}

pub const DEFAULT_SPLIT_FRACTIONS: [f64; 3] = [0.5, 0.25, 0.25];

/// Uniformly random partition with sizes `round(n·f_val)`, `round(n·f_test)`
/// and the remainder for training.
pub fn split_ordinary(n: usize, fractions: [f64; 3], seed: u64) -> Result<SplitPlan, SpatialError> {
    if fractions.iter().any(|f| !(*f > 0.0))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(SpatialError::BadFractions(fractions));
    }
    let n_val = (n as f64 * fractions[1]).round() as usize;
    let n_test = (n as f64 * fractions[2]).round() as usize;
    if n_val == 0 {
        return Err(SpatialError::EmptyPart("validation"));
    }
    if n_test == 0 {
        return Err(SpatialError::EmptyPart("test"));
    }
    if n_val + n_test >= n {
        return Err(SpatialError::EmptyPart("train"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut validation = idx[..n_val].to_vec();
    let mut test = idx[n_val..n_val + n_test].to_vec();
    let mut train = idx[n_val + n_test..].to_vec();
    validation.sort_unstable();
    test.sort_unstable();
    train.sort_unstable();
    Ok(SplitPlan {
        train,
        validation,
        test,
        kind: SplitKind::Ordinary,
        seed,
    })
}

/// K-means on the coordinates; two distinct clusters drawn uniformly at
/// random become validation and test, the rest is training.
pub fn split_spatial(coords: &[[f64; 2]], k: usize, seed: u64) -> Result<SplitPlan, SpatialError> {
    let n = coords.len();
    if k < 3 || n < k {
        return Err(SpatialError::BadClusterCount { n, k });
    }
    check_coords(coords)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clusters = kmeans(coords, k, &mut rng)?;
    let val_cluster = rng.random_range(0..k);
    let mut test_cluster = rng.random_range(0..k - 1);
    if test_cluster >= val_cluster {
        test_cluster += 1;
    }
    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (i, &c) in clusters.labels.iter().enumerate() {
        if c == val_cluster {
            validation.push(i);
        } else if c == test_cluster {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    Ok(SplitPlan {
        train,
        validation,
        test,
        kind: SplitKind::Spatial,
        seed,
    })
}
