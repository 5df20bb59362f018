//! Seeded k-means++ with Lloyd iterations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Embedding;
use crate::error::{Error, Result};

const MAX_ITER: usize = 300;
const TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    /// Row-major `k × dims`.
    pub centers: Vec<f64>,
    /// Inertia after each assignment step.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
    pub reseeded: usize,
}

impl KMeansResult {
    pub fn inertia(&self) -> f64 {
        self.inertia_trace.last().copied().unwrap_or(0.0)
    }
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Clusters `points` into `k` groups. An empty cluster is re-seeded at the
/// point farthest from its current center.
pub fn kmeans(points: &Embedding, k: usize, seed: u64) -> Result<KMeansResult> {
    let n = points.len();
    let dims = points.dims;
    if k == 0 || k > n {
        return Err(Error::Config(format!("k = {k} must lie in [1, {n}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centers = Vec::with_capacity(k * dims);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(points.point(first));
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| sq(points.point(i), points.point(first)))
        .collect();
    for _ in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.extend_from_slice(points.point(pick));
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq(points.point(i), points.point(pick)));
        }
    }

    let mut labels = vec![0usize; n];
    let mut inertia_trace = Vec::new();
    let mut reseeded = 0;
    let mut iterations = 0;
    loop {
        let mut inertia = 0.0;
        for (i, label) in labels.iter_mut().enumerate() {
            let p = points.point(i);
            let (best, dist) = (0..k)
                .map(|c| (c, sq(p, &centers[c * dims..(c + 1) * dims])))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            *label = best;
            inertia += dist;
        }
        inertia_trace.push(inertia);
        if iterations == MAX_ITER {
            break;
        }
        iterations += 1;

        let mut sums = vec![0.0; k * dims];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums[l * dims..(l + 1) * dims]
                .iter_mut()
                .zip(points.point(i))
            {
                *s += v;
            }
        }
        let mut moved = 0.0f64;
        let mut taken = vec![false; n];
        for c in 0..k {
            let new: Vec<f64> = if counts[c] > 0 {
                sums[c * dims..(c + 1) * dims]
                    .iter()
                    .map(|s| s / counts[c] as f64)
                    .collect()
            } else {
                reseeded += 1;
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| {
                        let da = sq(
                            points.point(a),
                            &centers[labels[a] * dims..(labels[a] + 1) * dims],
                        );
                        let db = sq(
                            points.point(b),
                            &centers[labels[b] * dims..(labels[b] + 1) * dims],
                        );
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .unwrap_or(0);
                taken[far] = true;
                points.point(far).to_vec()
            };
            moved = moved.max(sq(&new, &centers[c * dims..(c + 1) * dims]).sqrt());
            centers[c * dims..(c + 1) * dims].copy_from_slice(&new);
        }
        if moved < TOL {
            break;
        }
    }
    Ok(KMeansResult {
        labels,
        centers,
        inertia_trace,
        iterations,
        reseeded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points_two_clusters() {
        let e = Embedding {
            dims: 1,
            points: vec![0.0, 10.0],
        };
        let r = kmeans(&e, 2, 7).unwrap();
        let mut c = r.centers.clone();
        c.sort_by(f64::total_cmp);
        assert_eq!(c, vec![0.0, 10.0]);
        assert_eq!(r.inertia(), 0.0);
        assert_ne!(r.labels[0], r.labels[1]);
    }

    #[test]
    fn k_equals_n() {
        let e = Embedding {
            dims: 2,
            points: vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 5.0, 5.0],
        };
        let r = kmeans(&e, 4, 1).unwrap();
        assert_eq!(r.inertia(), 0.0);
        let mut l = r.labels.clone();
        l.sort_unstable();
        assert_eq!(l, vec![0, 1, 2, 3]);
        assert!(kmeans(&e, 5, 1).is_err());
    }

    #[test]
    fn duplicate_points_keep_clusters_filled() {
        let e = Embedding {
            dims: 1,
            points: vec![1.0, 1.0, 1.0, 2.0],
        };
        let r = kmeans(&e, 3, 0).unwrap();
        for w in r.inertia_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }
}
