//! Cluster-quality metrics and the clustering utilities they need.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{shape_err, DiceError, Result};
use crate::linalg::{dot, norm, DenseMatrix};
use crate::rng::RngStream;

pub const DEFAULT_KNN: usize = 20;
const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITER: usize = 300;

/// Points with one class label each.
#[derive(Clone, Debug)]
pub struct LabeledEmbedding {
    points: DenseMatrix,
    labels: Vec<usize>,
}

impl LabeledEmbedding {
    pub fn new(points: DenseMatrix, labels: Vec<usize>) -> Result<Self> {
        if points.rows() != labels.len() {
            return Err(shape_err("embedding labels", points.rows(), labels.len()));
        }
        if points.rows() < 2 {
            return Err(DiceError::InvalidArgument("need at least two labelled points".into()));
        }
        if !points.is_finite() {
            return Err(DiceError::NonFinite("embedding"));
        }
        Ok(Self { points, labels })
    }

    pub fn points(&self) -> &DenseMatrix {
        &self.points
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn label_ids(&self) -> (Vec<usize>, usize) {
        let mut map = BTreeMap::new();
        let ids = self
            .labels
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect();
        (ids, map.len())
    }
}

/// Mean silhouette under cosine distance `1 − cos(x, y)`. Points alone in
/// their cluster score 0.
pub fn cosine_silhouette(le: &LabeledEmbedding) -> Result<f64> {
    let (ids, c) = le.label_ids();
    if c < 2 {
        return Err(DiceError::InvalidArgument("silhouette needs at least two distinct labels".into()));
    }
    let (n, k) = le.points.shape();
    let mut unit = le.points.clone();
    for i in 0..n {
        let r = unit.row_mut(i);
        let len = norm(r);
        if len == 0.0 {
            return Err(DiceError::InvalidArgument(format!("row {i} has zero norm")));
        }
        r.iter_mut().for_each(|v| *v /= len);
    }
    // Σ_j (1 − x̂_i·x̂_j) over a cluster is |C| − x̂_i·S_C with S_C the sum of
    // its unit vectors.
    let mut sums = DenseMatrix::zeros(c, k);
    let mut sizes = vec![0usize; c];
    for i in 0..n {
        sizes[ids[i]] += 1;
        for (s, v) in sums.row_mut(ids[i]).iter_mut().zip(unit.row(i)) {
            *s += v;
        }
    }
    let total: f64 = (0..n)
        .map(|i| {
            let own = ids[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let x = unit.row(i);
            let a = ((sizes[own] as f64 - dot(x, sums.row(own))) / (sizes[own] - 1) as f64).max(0.0);
            let b = (0..c)
                .filter(|&o| o != own)
                .map(|o| (sizes[o] as f64 - dot(x, sums.row(o))) / sizes[o] as f64)
                .fold(f64::INFINITY, f64::min)
                .max(0.0);
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .sum();
    Ok(total / n as f64)
}

fn comb2(x: usize) -> f64 {
    (x as f64) * (x as f64 - 1.0) / 2.0
}

/// Adjusted Rand index between two partitions of the same points.
pub fn ari(labels_a: &[usize], labels_b: &[usize]) -> Result<f64> {
    if labels_a.len() != labels_b.len() {
        return Err(shape_err("ari labels", labels_a.len(), labels_b.len()));
    }
    let n = labels_a.len();
    if n < 2 {
        return Err(DiceError::InvalidArgument("ari needs at least two points".into()));
    }
    let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut rows: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cols: BTreeMap<usize, usize> = BTreeMap::new();
    for (&a, &b) in labels_a.iter().zip(labels_b) {
        *table.entry((a, b)).or_default() += 1;
        *rows.entry(a).or_default() += 1;
        *cols.entry(b).or_default() += 1;
    }
    let index: f64 = table.values().map(|&v| comb2(v)).sum();
    let sa: f64 = rows.values().map(|&v| comb2(v)).sum();
    let sb: f64 = cols.values().map(|&v| comb2(v)).sum();
    let expected = sa * sb / comb2(n);
    let max = 0.5 * (sa + sb);
    if max == expected {
        // Both partitions trivial in the same way (all singletons or one block).
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KnnMetric {
    Euclidean,
    Cosine,
}

/// Exact neighbor lists, self excluded, nearest first.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborGraph {
    pub indices: Vec<Vec<usize>>,
    pub distances: Vec<Vec<f64>>,
}

/// Brute-force `k_nn` nearest neighbors of every row; ties go to the lower
/// index.
pub fn knn_graph(points: &DenseMatrix, k_nn: usize, metric: KnnMetric) -> Result<NeighborGraph> {
    let n = points.rows();
    if k_nn == 0 || k_nn >= n {
        return Err(DiceError::InvalidArgument(format!("k_nn={k_nn} must lie in 1..{n}")));
    }
    let norms: Vec<f64> = (0..n).map(|i| norm(points.row(i))).collect();
    if metric == KnnMetric::Cosine && norms.contains(&0.0) {
        return Err(DiceError::InvalidArgument("cosine neighbors of a zero vector".into()));
    }
    let dist = |i: usize, j: usize| -> f64 {
        let (a, b) = (points.row(i), points.row(j));
        match metric {
            KnnMetric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            KnnMetric::Cosine => 1.0 - dot(a, b) / (norms[i] * norms[j]),
        }
    };
    let lists: Vec<(Vec<usize>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (dist(i, j), j)).collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            cand.select_nth_unstable_by(k_nn - 1, cmp);
            cand.truncate(k_nn);
            cand.sort_by(cmp);
            cand.into_iter().map(|(d, j)| (j, d)).unzip()
        })
        .collect();
    let (indices, distances) = lists.into_iter().unzip();
    Ok(NeighborGraph { indices, distances })
}

/// Mean inverse Simpson index of label fractions among each point's `k_nn`
/// Euclidean neighbors.
pub fn clisi(le: &LabeledEmbedding, k_nn: usize) -> Result<f64> {
    let g = knn_graph(&le.points, k_nn, KnnMetric::Euclidean)?;
    let (ids, c) = le.label_ids();
    let mut counts = vec![0usize; c];
    let mut total = 0.0;
    for nb in &g.indices {
        counts.iter_mut().for_each(|v| *v = 0);
        for &j in nb {
            counts[ids[j]] += 1;
        }
        let simpson: f64 = counts.iter().map(|&v| (v as f64 / k_nn as f64).powi(2)).sum();
        total += 1.0 / simpson;
    }
    Ok(total / le.points.rows() as f64)
}

#[derive(Clone, Debug)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    pub centers: DenseMatrix,
    /// Within-cluster sum of squares.
    pub wcss: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus_init(points: &DenseMatrix, k: usize, stream: &mut RngStream) -> DenseMatrix {
    let n = points.rows();
    let mut centers = DenseMatrix::zeros(k, points.cols());
    centers.row_mut(0).copy_from_slice(points.row(stream.below(n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), centers.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let r = stream.uniform() * total;
            let mut acc = 0.0;
            d2.iter()
                .position(|&d| {
                    acc += d;
                    acc > r
                })
                .unwrap_or(n - 1)
        } else {
            stream.below(n)
        };
        centers.row_mut(c).copy_from_slice(points.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), centers.row(c)));
        }
    }
    centers
}

/// Moves every non-empty cluster's center to its mean; returns cluster sizes.
fn update_centers(points: &DenseMatrix, labels: &[usize], centers: &mut DenseMatrix) -> Vec<usize> {
    let mut sums = DenseMatrix::zeros(centers.rows(), points.cols());
    let mut sizes = vec![0usize; centers.rows()];
    for (i, &l) in labels.iter().enumerate() {
        sizes[l] += 1;
        for (s, v) in sums.row_mut(l).iter_mut().zip(points.row(i)) {
            *s += v;
        }
    }
    for (c, &size) in sizes.iter().enumerate() {
        if size > 0 {
            let inv = 1.0 / size as f64;
            for (dst, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                *dst = s * inv;
            }
        }
    }
    sizes
}

fn lloyd(points: &DenseMatrix, mut centers: DenseMatrix) -> KMeansFit {
    let n = points.rows();
    let k = centers.rows();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, l) in labels.iter_mut().enumerate() {
            let best = (0..k)
                .map(|c| (sq_dist(points.row(i), centers.row(c)), c))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .unwrap()
                .1;
            if *l != best {
                *l = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let sizes = update_centers(points, &labels, &mut centers);
        // Empty clusters restart at the point farthest from its center. When
        // every point sits on its center there is nothing to split.
        for c in (0..k).filter(|&c| sizes[c] == 0) {
            let (d, far) = (0..n)
                .map(|i| (sq_dist(points.row(i), centers.row(labels[i])), i))
                .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
                .unwrap();
            if d == 0.0 {
                break;
            }
            let row = points.row(far).to_vec();
            centers.row_mut(c).copy_from_slice(&row);
            labels[far] = c;
        }
    }
    update_centers(points, &labels, &mut centers);
    let wcss = (0..n).map(|i| sq_dist(points.row(i), centers.row(labels[i]))).sum();
    KMeansFit { labels, centers, wcss }
}

/// Best of ten k-means++ initialized Lloyd runs by within-cluster sum of
/// squares.
pub fn kmeans_fit(points: &DenseMatrix, k: usize, stream: &mut RngStream) -> Result<KMeansFit> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(DiceError::InvalidArgument(format!("k-means needs 1 ≤ K ≤ n, got K={k} n={n}")));
    }
    if !points.is_finite() {
        return Err(DiceError::NonFinite("k-means input"));
    }
    let mut best: Option<KMeansFit> = None;
    for r in 0..KMEANS_RESTARTS {
        let mut s = stream.split(r as u64);
        let fit = lloyd(points, plus_plus_init(points, k, &mut s));
        if best.as_ref().is_none_or(|b| fit.wcss < b.wcss) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Cluster labels from [`kmeans_fit`].
pub fn kmeans(points: &DenseMatrix, k: usize, stream: &mut RngStream) -> Result<Vec<usize>> {
    Ok(kmeans_fit(points, k, stream)?.labels)
}
