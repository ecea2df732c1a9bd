//! Seeded Lloyd k-means with k-means++ initialisation.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::util::seeded_rng;

pub(crate) fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest row of `centroids` to `point`; lowest index wins ties.
pub(crate) fn nearest(point: ArrayView1<f64>, centroids: ArrayView2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.rows().into_iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct KMeansParams {
    pub k: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

/// Clusters the rows of `points` into `k` centroids. Requires `k <= rows`.
///
/// Empty clusters are re-seeded at the point farthest from its assigned
/// centroid (lowest index on ties).
pub(crate) fn kmeans(points: ArrayView2<f64>, params: KMeansParams) -> Array2<f64> {
    let n = points.nrows();
    let k = params.k;
    assert!(k >= 1 && k <= n, "k-means needs 1 <= k <= n");
    let mut centroids = init_plus_plus(points, k, params.seed);
    let mut assign = vec![0usize; n];
    let mut dist = vec![0.0f64; n];

    for _ in 0..params.max_iters {
        for (i, p) in points.rows().into_iter().enumerate() {
            let (c, d) = nearest(p, centroids.view());
            assign[i] = c;
            dist[i] = d;
        }
        let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; k];
        for (i, p) in points.rows().into_iter().enumerate() {
            sums.row_mut(assign[i]).scaled_add(1.0, &p);
            counts[assign[i]] += 1;
        }
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                sums.row_mut(c).mapv_inplace(|v| v / counts[c] as f64);
                continue;
            }
            let mut far = None::<(usize, f64)>;
            for i in 0..n {
                if !taken[i] && far.is_none_or(|(_, d)| dist[i] > d) {
                    far = Some((i, dist[i]));
                }
            }
            let (i, _) = far.unwrap_or((0, 0.0));
            taken[i] = true;
            dist[i] = 0.0;
            sums.row_mut(c).assign(&points.row(i));
        }
        let movement = centroids
            .rows()
            .into_iter()
            .zip(sums.rows())
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = sums;
        if movement < params.tol {
            break;
        }
    }
    centroids
}

fn init_plus_plus(points: ArrayView2<f64>, k: usize, seed: u64) -> Array2<f64> {
    let n = points.nrows();
    let mut rng = seeded_rng(seed);
    let mut centroids = Array2::zeros((k, points.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut d2: Vec<f64> = points
        .rows()
        .into_iter()
        .map(|p| squared_distance(p, points.row(first)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            // Rounding can leave `acc` just short of `target`.
            chosen.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("total > 0"))
        } else {
            0
        };
        centroids.row_mut(c).assign(&points.row(pick));
        for (i, p) in points.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(p, points.row(pick)));
        }
    }
    centroids
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn params(k: usize) -> KMeansParams {
        KMeansParams {
            k,
            max_iters: 100,
            tol: 1e-6,
            seed: 3,
        }
    }

    #[test]
    fn two_points_two_clusters() {
        let pts = array![[0.0, 0.0], [10.0, 10.0]];
        let c = kmeans(pts.view(), params(2));
        let mut rows: Vec<Vec<f64>> = c.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert_eq!(rows, vec![vec![0.0, 0.0], vec![10.0, 10.0]]);
    }

    #[test]
    fn identical_points_fill_every_centroid() {
        let pts = array![[1.5, -2.0], [1.5, -2.0], [1.5, -2.0]];
        let c = kmeans(pts.view(), params(2));
        for row in c.rows() {
            assert_eq!(row.to_vec(), vec![1.5, -2.0]);
        }
    }

    #[test]
    fn nearest_prefers_lowest_index_on_tie() {
        let cents = array![[1.0], [-1.0], [1.0]];
        assert_eq!(nearest(array![0.0].view(), cents.view()).0, 0);
        assert_eq!(nearest(array![2.0].view(), cents.view()).0, 0);
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let mut pts = Vec::new();
        for i in 0..20 {
            let jitter = (i as f64) * 0.01;
            pts.extend([jitter, 0.0]);
            pts.extend([100.0 + jitter, 0.0]);
            pts.extend([0.0, 100.0 + jitter]);
        }
        let pts = Array2::from_shape_vec((60, 2), pts).unwrap();
        let c = kmeans(pts.view(), params(3));
        let mut xs: Vec<(i64, i64)> = c
            .rows()
            .into_iter()
            .map(|r| (r[0].round() as i64, r[1].round() as i64))
            .collect();
        xs.sort();
        assert_eq!(xs, vec![(0, 0), (0, 100), (100, 0)]);
    }
}
