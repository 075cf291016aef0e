use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ClusterError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KMeansParams {
    pub restarts: usize,
    pub max_iters: usize,
    /// Lloyd iterations stop once no centroid moves farther than this.
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iters: 100,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Array2<f64>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
}

pub(crate) fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// k-means++ seeded Lloyd's algorithm, keeping the lowest-inertia restart.
pub fn kmeans(z: &Array2<f64>, m: usize, params: &KMeansParams, seed: u64) -> Result<KMeansResult, ClusterError> {
    let n = z.nrows();
    if m == 0 || params.restarts == 0 || params.max_iters == 0 || !(params.tol >= 0.0) {
        return Err(ClusterError::Params(
            "k-means needs m, restarts and max_iters positive and tol >= 0".into(),
        ));
    }
    if m > n {
        return Err(ClusterError::TooFewPoints { n, m });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..params.restarts {
        let run = lloyd(z, plus_plus(z, m, &mut rng), params);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn plus_plus<R: Rng>(z: &Array2<f64>, m: usize, rng: &mut R) -> Array2<f64> {
    let n = z.nrows();
    let mut centroids = Array2::zeros((m, z.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&z.row(first));
    let mut d2: Vec<f64> = z.rows().into_iter().map(|r| sq_dist(r, z.row(first))).collect();
    for c in 1..m {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&z.row(pick));
        for (i, r) in z.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, z.row(pick)));
        }
    }
    centroids
}

fn assign(z: &Array2<f64>, centroids: &Array2<f64>) -> (Vec<usize>, Vec<f64>) {
    z.rows().into_iter().map(|r| nearest(r, centroids)).unzip()
}

fn lloyd(z: &Array2<f64>, mut centroids: Array2<f64>, params: &KMeansParams) -> KMeansResult {
    let m = centroids.nrows();
    for _ in 0..params.max_iters {
        let (labels, dists) = assign(z, &centroids);
        let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; m];
        for (row, &l) in z.rows().into_iter().zip(&labels) {
            sums.row_mut(l).scaled_add(1.0, &row);
            counts[l] += 1;
        }
        let mut taken = vec![false; z.nrows()];
        let mut next = centroids.clone();
        for j in 0..m {
            if counts[j] > 0 {
                next.row_mut(j).assign(&(&sums.row(j) / counts[j] as f64));
            } else {
                // reseed to the point worst served by its centroid
                let far = (0..z.nrows())
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("m <= n leaves a free point");
                taken[far] = true;
                next.row_mut(j).assign(&z.row(far));
            }
        }
        let shift = next
            .rows()
            .into_iter()
            .zip(centroids.rows())
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift <= params.tol {
            break;
        }
    }
    let (assignments, dists) = assign(z, &centroids);
    KMeansResult {
        centroids,
        assignments,
        inertia: dists.iter().sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn one_point_per_cluster() {
        let z = array![[0.0, 0.0], [3.0, 1.0], [-2.0, 5.0]];
        let r = kmeans(&z, 3, &KMeansParams::default(), 1).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut rows: Vec<Vec<f64>> = r.centroids.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(rows, vec![vec![-2.0, 5.0], vec![0.0, 0.0], vec![3.0, 1.0]]);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let z = array![[1.0, 2.0], [3.0, 4.0], [5.0, 0.0]];
        let r = kmeans(&z, 1, &KMeansParams::default(), 4).unwrap();
        let mean = z.mean_axis(ndarray::Axis(0)).unwrap();
        for (a, b) in r.centroids.row(0).iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn too_many_clusters() {
        let z = array![[1.0], [2.0]];
        assert!(matches!(
            kmeans(&z, 3, &KMeansParams::default(), 0),
            Err(ClusterError::TooFewPoints { n: 2, m: 3 })
        ));
    }

    #[test]
    fn separated_blobs_are_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let centers = [[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]];
        let mut z = Array2::zeros((150, 2));
        let mut truth = Vec::new();
        for i in 0..150 {
            let c = i % 3;
            truth.push(c);
            z[[i, 0]] = centers[c][0] + noise.sample(&mut rng);
            z[[i, 1]] = centers[c][1] + noise.sample(&mut rng);
        }
        let r = kmeans(&z, 3, &KMeansParams::default(), 11).unwrap();
        for c in 0..3 {
            let labels: std::collections::BTreeSet<usize> =
                (0..150).filter(|&i| truth[i] == c).map(|i| r.assignments[i]).collect();
            assert_eq!(labels.len(), 1);
        }
        let a = kmeans(&z, 3, &KMeansParams::default(), 11).unwrap();
        assert_eq!(a, r);
    }

    #[test]
    fn duplicate_points_do_not_panic() {
        let z = array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [2.0, 2.0]];
        let r = kmeans(&z, 3, &KMeansParams::default(), 2).unwrap();
        assert_eq!(r.assignments.len(), 4);
        assert!(r.inertia.abs() < 1e-12);
    }
}
