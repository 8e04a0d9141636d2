//! K-means, spectral and average-linkage agglomerative clustering over
//! representation rows. All methods use Euclidean distance and return labels
//! renumbered in order of first appearance.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::numerics::{squared_distance, sym_eigen, Matrix};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMethod {
    KMeans,
    Spectral,
    Agglomerative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
    /// Within-cluster sum of squared distances of the input rows to their
    /// cluster means.
    pub inertia: f64,
}

impl ClusterAssignment {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == cluster)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

pub const KMEANS_MAX_ITER: usize = 300;
pub const KMEANS_TOL: f64 = 1e-9;
pub const KMEANS_RESTARTS: usize = 10;

pub fn cluster(x: &Matrix, k: usize, method: ClusterMethod, seed: u64) -> Result<ClusterAssignment> {
    if k == 0 || k > x.rows() {
        return Err(Error::invalid(format!(
            "cluster count {k} outside 1..={}",
            x.rows()
        )));
    }
    let labels = match method {
        ClusterMethod::KMeans => kmeans(x, k, seed).labels,
        ClusterMethod::Spectral => spectral(x, k, seed)?,
        ClusterMethod::Agglomerative => agglomerative(x, k),
    };
    let labels = canonical_labels(&labels);
    let inertia = within_scatter(x, &labels, k);
    Ok(ClusterAssignment { labels, k, inertia })
}

fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

fn centroids(x: &Matrix, labels: &[usize], k: usize) -> Matrix {
    let mut c = Matrix::zeros(k, x.cols());
    let mut counts = vec![0usize; k];
    for (r, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (dst, v) in c.row_mut(l).iter_mut().zip(x.row(r)) {
            *dst += v;
        }
    }
    for (l, &n) in counts.iter().enumerate() {
        if n > 0 {
            c.row_mut(l).iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    c
}

fn within_scatter(x: &Matrix, labels: &[usize], k: usize) -> f64 {
    let c = centroids(x, labels, k);
    labels
        .iter()
        .enumerate()
        .map(|(r, &l)| squared_distance(x.row(r), c.row(l)))
        .sum()
}

/// Result of one seeded k-means run, including the inertia after every
/// Lloyd iteration.
#[derive(Debug, Clone)]
pub struct KMeansRun {
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub trace: Vec<f64>,
}

/// Best of [`KMEANS_RESTARTS`] k-means++ runs; ties go to the earliest run.
pub fn kmeans(x: &Matrix, k: usize, seed: u64) -> KMeansRun {
    let mut best: Option<KMeansRun> = None;
    for restart in 0..KMEANS_RESTARTS {
        let run = kmeans_single(x, k, rng::derive(seed, restart as u64));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    best.expect("at least one restart")
}

fn nearest(row: &[f64], centers: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centers.rows() {
        let d = squared_distance(row, centers.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seeds(x: &Matrix, k: usize, g: &mut rng::Rng) -> Matrix {
    let n = x.rows();
    let mut chosen = vec![g.random_range(0..n)];
    let mut dist: Vec<f64> = (0..n).map(|r| squared_distance(x.row(r), x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let target = g.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (r, &d) in dist.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc >= target {
                    pick = Some(r);
                    break;
                }
            }
            pick.unwrap_or_else(|| dist.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            (0..n).find(|r| !chosen.contains(r)).unwrap_or(0)
        };
        chosen.push(next);
        for (r, d) in dist.iter_mut().enumerate() {
            *d = d.min(squared_distance(x.row(r), x.row(next)));
        }
    }
    x.select_rows(&chosen)
}

pub fn kmeans_single(x: &Matrix, k: usize, seed: u64) -> KMeansRun {
    let n = x.rows();
    let mut g = rng::seeded(seed);
    let mut centers = plus_plus_seeds(x, k, &mut g);
    let mut labels = vec![0usize; n];
    let mut trace = Vec::new();
    let mut prev = f64::INFINITY;
    for _ in 0..KMEANS_MAX_ITER {
        for (r, l) in labels.iter_mut().enumerate() {
            *l = nearest(x.row(r), &centers).0;
        }
        repair_empty(x, &mut labels, &centers, k);
        centers = centroids(x, &labels, k);
        let inertia = labels
            .iter()
            .enumerate()
            .map(|(r, &l)| squared_distance(x.row(r), centers.row(l)))
            .sum::<f64>();
        trace.push(inertia);
        let done = (prev - inertia).abs() < KMEANS_TOL;
        prev = inertia;
        if done {
            break;
        }
    }
    KMeansRun {
        labels,
        inertia: prev,
        trace,
    }
}

/// Give every empty cluster the point farthest from its current centre,
/// taken from a cluster that can spare it. Ties go to the lowest row.
fn repair_empty(x: &Matrix, labels: &mut [usize], centers: &Matrix, k: usize) {
    let mut sizes = vec![0usize; k];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let mut pick: Option<(usize, f64)> = None;
        for (r, &l) in labels.iter().enumerate() {
            if sizes[l] < 2 {
                continue;
            }
            let d = squared_distance(x.row(r), centers.row(l));
            if pick.is_none_or(|(_, best)| d > best) {
                pick = Some((r, d));
            }
        }
        if let Some((r, _)) = pick {
            sizes[labels[r]] -= 1;
            labels[r] = empty;
            sizes[empty] = 1;
        }
    }
}

fn pairwise_sq(x: &Matrix) -> Vec<f64> {
    let n = x.rows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = squared_distance(x.row(i), x.row(j));
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// RBF width for the spectral affinity: one over the median squared pairwise
/// distance, or 1 when that median is zero.
pub fn spectral_gamma(x: &Matrix) -> f64 {
    let n = x.rows();
    let mut sq: Vec<f64> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            sq.push(squared_distance(x.row(i), x.row(j)));
        }
    }
    if sq.is_empty() {
        return 1.0;
    }
    sq.sort_by(f64::total_cmp);
    let mid = sq.len() / 2;
    let median = if sq.len().is_multiple_of(2) {
        0.5 * (sq[mid - 1] + sq[mid])
    } else {
        sq[mid]
    };
    if median > 0.0 {
        1.0 / median
    } else {
        1.0
    }
}

/// Normalised spectral embedding (rows of the `k` smallest eigenvectors of
/// the symmetric normalised Laplacian, unit length).
pub fn spectral_embedding(x: &Matrix, k: usize) -> Result<Matrix> {
    let n = x.rows();
    let gamma = spectral_gamma(x);
    let sq = pairwise_sq(x);
    let w = Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { (-gamma * sq[i * n + j]).exp() });
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = w.row(i).iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    // L = I - D^-1/2 W D^-1/2, so its smallest eigenvectors are the largest
    // of the normalised affinity.
    let m = Matrix::from_fn(n, n, |i, j| inv_sqrt_deg[i] * w[(i, j)] * inv_sqrt_deg[j]);
    let eig = sym_eigen(&m, k)?;
    let mut emb = eig.vectors;
    for r in 0..n {
        let row = emb.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Ok(emb)
}

fn spectral(x: &Matrix, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 1 {
        return Ok(vec![0; x.rows()]);
    }
    let emb = spectral_embedding(x, k)?;
    Ok(kmeans(&emb, k, seed).labels)
}

/// Average linkage on Euclidean distance, merged until `k` clusters remain.
/// Distance ties merge the pair with the smallest `(i, j)`, where clusters
/// are indexed by their smallest member row.
fn agglomerative(x: &Matrix, k: usize) -> Vec<usize> {
    let n = x.rows();
    let sq = pairwise_sq(x);
    // Active clusters stay ordered by smallest member; merging `j` into
    // `i < j` keeps that order.
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut dist: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| sq[i * n + j].sqrt()).collect())
        .collect();
    while members.len() > k {
        let c = members.len();
        let mut best = (0, 1, f64::INFINITY);
        for i in 0..c {
            for j in (i + 1)..c {
                if dist[i][j] < best.2 {
                    best = (i, j, dist[i][j]);
                }
            }
        }
        let (i, j, _) = best;
        let (ni, nj) = (members[i].len() as f64, members[j].len() as f64);
        for t in 0..c {
            if t != i && t != j {
                let merged = (ni * dist[i][t] + nj * dist[j][t]) / (ni + nj);
                dist[i][t] = merged;
                dist[t][i] = merged;
            }
        }
        let moved = members.remove(j);
        members[i].extend(moved);
        dist.remove(j);
        for row in dist.iter_mut() {
            row.remove(j);
        }
    }
    let mut labels = vec![0; n];
    for (l, group) in members.iter().enumerate() {
        for &r in group {
            labels[r] = l;
        }
    }
    labels
}

/// Adjusted Rand index between two labelings of the same rows.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must have equal length");
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let choose2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().flatten().map(|&v| choose2(v)).sum();
    let sum_a: f64 = table.iter().map(|row| choose2(row.iter().sum())).sum();
    let sum_b: f64 = (0..kb).map(|j| choose2(table.iter().map(|row| row[j]).sum())).sum();
    let total = choose2(n as u64);
    if total == 0.0 {
        return 1.0;
    }
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < 1e-300 {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(per: usize, centers: &[(f64, f64)], seed: u64) -> (Matrix, Vec<usize>) {
        let mut g = rng::seeded(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for (c, &(cx, cy)) in centers.iter().enumerate() {
            for _ in 0..per {
                rows.push(vec![cx + noise.sample(&mut g), cy + noise.sample(&mut g)]);
                truth.push(c);
            }
        }
        (Matrix::from_rows(&rows).unwrap(), truth)
    }

    const ALL: [ClusterMethod; 3] = [ClusterMethod::KMeans, ClusterMethod::Spectral, ClusterMethod::Agglomerative];

    #[test]
    fn separated_blobs_recovered_by_every_method() {
        let (x, truth) = blobs(15, &[(0.0, 0.0), (10.0, 10.0)], 4);
        for m in ALL {
            let a = cluster(&x, 2, m, 7).unwrap();
            assert_eq!(adjusted_rand_index(&a.labels, &truth), 1.0, "{m:?}");
        }
    }

    #[test]
    fn singleton_and_single_cluster() {
        let (x, _) = blobs(4, &[(0.0, 0.0), (5.0, 0.0)], 1);
        for m in ALL {
            let a = cluster(&x, x.rows(), m, 3).unwrap();
            let mut seen = a.labels.clone();
            seen.sort();
            assert_eq!(seen, (0..x.rows()).collect::<Vec<_>>(), "{m:?}");

            let one = cluster(&x, 1, m, 3).unwrap();
            assert!(one.labels.iter().all(|&l| l == 0));
        }
        let one = cluster(&x, 1, ClusterMethod::KMeans, 3).unwrap();
        let xc = x.centered();
        let scatter: f64 = xc.values().iter().map(|v| v * v).sum();
        assert!((one.inertia - scatter).abs() < 1e-9);
    }

    #[test]
    fn out_of_range_k() {
        let (x, _) = blobs(2, &[(0.0, 0.0)], 1);
        assert!(cluster(&x, 0, ClusterMethod::KMeans, 0).is_err());
        assert!(cluster(&x, 3, ClusterMethod::KMeans, 0).is_err());
    }

    #[test]
    fn identical_rows_still_fill_k_clusters() {
        let x = Matrix::from_fn(6, 2, |_, _| 1.5);
        for m in ALL {
            let a = cluster(&x, 3, m, 0).unwrap();
            assert!(a.sizes().iter().all(|&s| s > 0), "{m:?}: {:?}", a.labels);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let (x, _) = blobs(10, &[(0.0, 0.0), (2.0, 0.0), (1.0, 2.0)], 8);
        for m in ALL {
            assert_eq!(cluster(&x, 3, m, 5).unwrap(), cluster(&x, 3, m, 5).unwrap());
        }
    }

    #[test]
    fn inertia_trace_non_increasing() {
        let (x, _) = blobs(20, &[(0.0, 0.0), (1.0, 0.0), (0.5, 1.0), (3.0, 3.0)], 2);
        for seed in 0..20 {
            let run = kmeans_single(&x, 4, seed);
            for w in run.trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12 * w[0].max(1.0));
            }
        }
    }

    #[test]
    fn agglomerative_tie_break_smallest_pair() {
        // Equidistant points on a line: first merge must be rows (0, 1).
        let x = Matrix::from_fn(4, 1, |r, _| r as f64);
        let a = cluster(&x, 3, ClusterMethod::Agglomerative, 0).unwrap();
        assert_eq!(a.labels, vec![0, 0, 1, 2]);
    }

    #[test]
    fn ari_is_permutation_invariant() {
        let a = [0, 0, 1, 1, 2, 2];
        let b = [2, 2, 0, 0, 1, 1];
        assert_eq!(adjusted_rand_index(&a, &b), 1.0);
        let c = [0, 1, 0, 1, 0, 1];
        assert!(adjusted_rand_index(&a, &c) < 0.5);
    }
}
