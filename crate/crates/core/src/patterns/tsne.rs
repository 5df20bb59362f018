//! Exact t-SNE with per-point bandwidth calibration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DayMatrix, Embedding};
use crate::error::{Error, Result};

/// Iteration at which momentum rises and early exaggeration ends.
const SWITCH_ITER: usize = 250;
const MOMENTUM_EARLY: f64 = 0.5;
const MOMENTUM_LATE: f64 = 0.8;
const MIN_GAIN: f64 = 0.01;
const CHECKPOINT_EVERY: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneParams {
    pub perplexity: f64,
    pub early_exaggeration: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 60.0,
            early_exaggeration: 12.0,
            learning_rate: 200.0,
            iterations: 1000,
            seed: 0,
        }
    }
}

/// KL divergence at checkpoints, measured against the unexaggerated P.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TsneTrace {
    pub checkpoints: Vec<(usize, f64)>,
    pub kl_after_exaggeration: f64,
    pub kl_final: f64,
    /// Row-major D × D joint affinities.
    pub affinities: Vec<f64>,
    pub degenerate: bool,
}

fn squared_distances(rows: &[&[f64]]) -> Vec<f64> {
    let n = rows.len();
    let mut d = vec![0.0; n * n];
    d.par_chunks_mut(n).enumerate().for_each(|(i, out)| {
        for (j, o) in out.iter_mut().enumerate() {
            *o = rows[i]
                .iter()
                .zip(rows[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
        }
    });
    d
}

/// Conditional affinities of row `i` at precision `beta`, and their entropy.
fn conditional_row(dist: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let dmin = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, (o, &dj)) in out.iter_mut().zip(dist).enumerate() {
        *o = if j == i {
            0.0
        } else {
            (-beta * (dj - dmin)).exp()
        };
        sum += *o;
    }
    let mut h = 0.0;
    for (j, o) in out.iter_mut().enumerate() {
        *o /= sum;
        if *o > 0.0 && j != i {
            h -= *o * o.ln();
        }
    }
    h
}

/// Symmetrized joint affinities `μ_ij = (p_{j|i} + p_{i|j}) / 2D` with each
/// conditional row calibrated to the target perplexity by bisection on its
/// precision. Returns the row-major matrix and whether the input was
/// degenerate (all rows identical).
pub fn joint_affinities(rows: &[&[f64]], perplexity: f64) -> (Vec<f64>, bool) {
    let n = rows.len();
    let dist = squared_distances(rows);
    let degenerate = dist.iter().all(|&v| v == 0.0);
    if degenerate {
        log::warn!("all {n} observation rows are identical; using uniform affinities");
    }
    let target = perplexity.ln();
    let mut cond = vec![0.0; n * n];
    cond.par_chunks_mut(n).enumerate().for_each(|(i, out)| {
        let drow = &dist[i * n..(i + 1) * n];
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut beta = 1.0;
        // Scale the initial precision to the typical distance.
        let mean: f64 = drow.iter().sum::<f64>() / (n.max(2) - 1) as f64;
        if mean > 0.0 {
            beta = 1.0 / mean;
        }
        for _ in 0..200 {
            let h = conditional_row(drow, i, beta, out);
            let diff = h - target;
            if diff.abs() < 1e-10 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() {
                    0.5 * (beta + hi)
                } else {
                    beta * 2.0
                };
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
        conditional_row(drow, i, beta, out);
    });
    let mut p = vec![0.0; n * n];
    let denom = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / denom;
        }
    }
    (p, degenerate)
}

/// `Σ p log(p / q)` over entries with `p > 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b.max(f64::MIN_POSITIVE)).ln())
        .sum()
}

/// Student-t joint affinities of a 2-D layout, plus the unnormalized kernel.
fn low_dim_affinities(y: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut num = vec![0.0; n * n];
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = y[2 * i] - y[2 * j];
            let dy = y[2 * i + 1] - y[2 * j + 1];
            let k = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = k;
            num[j * n + i] = k;
            total += 2.0 * k;
        }
    }
    let q = num.iter().map(|k| k / total).collect();
    (q, num)
}

/// Embeds each day into two dimensions.
pub fn tsne_embed(days: &DayMatrix, params: &TsneParams) -> Result<(Embedding, TsneTrace)> {
    let n = days.n_days();
    if n < 5 {
        return Err(Error::Contract(format!(
            "t-SNE needs at least 5 days, got {n}"
        )));
    }
    if !(params.perplexity > 0.0 && params.perplexity < n as f64) {
        return Err(Error::Config(format!(
            "perplexity {} must be positive and below the day count {n}",
            params.perplexity
        )));
    }
    if params.iterations < SWITCH_ITER {
        return Err(Error::Config(format!(
            "t-SNE needs at least {SWITCH_ITER} iterations"
        )));
    }
    let rows: Vec<&[f64]> = (0..n).map(|d| days.row(d)).collect();
    let (p, degenerate) = joint_affinities(&rows, params.perplexity);

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let normal = Normal::new(0.0, 1e-2).expect("valid normal");
    let mut y: Vec<f64> = (0..2 * n).map(|_| normal.sample(&mut rng)).collect();
    let mut update = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let mut grad = vec![0.0; 2 * n];
    let mut trace = TsneTrace {
        degenerate,
        ..Default::default()
    };

    for it in 0..params.iterations {
        let exaggeration = if it < SWITCH_ITER {
            params.early_exaggeration
        } else {
            1.0
        };
        let momentum = if it < SWITCH_ITER {
            MOMENTUM_EARLY
        } else {
            MOMENTUM_LATE
        };
        let (q, num) = low_dim_affinities(&y, n);
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = (exaggeration * p[i * n + j] - q[i * n + j]) * num[i * n + j];
                gx += w * (y[2 * i] - y[2 * j]);
                gy += w * (y[2 * i + 1] - y[2 * j + 1]);
            }
            grad[2 * i] = 4.0 * gx;
            grad[2 * i + 1] = 4.0 * gy;
        }
        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (update[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(MIN_GAIN)
            };
            update[k] = momentum * update[k] - params.learning_rate * gains[k] * grad[k];
            y[k] += update[k];
        }
        let (mx, my) = (0..n).fold((0.0, 0.0), |(a, b), i| (a + y[2 * i], b + y[2 * i + 1]));
        for i in 0..n {
            y[2 * i] -= mx / n as f64;
            y[2 * i + 1] -= my / n as f64;
        }
        let done = it + 1;
        if done % CHECKPOINT_EVERY == 0 || done == SWITCH_ITER || done == params.iterations {
            let (q, _) = low_dim_affinities(&y, n);
            let kl = kl_divergence(&p, &q);
            if done == SWITCH_ITER {
                trace.kl_after_exaggeration = kl;
            }
            if trace.checkpoints.last().map(|c| c.0) != Some(done) {
                trace.checkpoints.push((done, kl));
            }
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged {
            epoch: params.iterations,
            reason: "t-SNE layout became non-finite".into(),
        });
    }
    trace.kl_final = trace.checkpoints.last().map(|c| c.1).unwrap_or(0.0);
    trace.affinities = p;
    Ok((Embedding { dims: 2, points: y }, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_identical_rows() {
        let a = [1.0, 2.0];
        let (p, degenerate) = joint_affinities(&[&a, &a], 1.5);
        assert!(degenerate);
        assert!((p[1] - 0.5).abs() < 1e-12 && (p[2] - 0.5).abs() < 1e-12);
        assert_eq!(p[0], 0.0);
    }

    #[test]
    fn kl_of_identical_is_zero() {
        let p = [0.0, 0.25, 0.25, 0.0, 0.25, 0.25];
        assert_eq!(kl_divergence(&p, &p), 0.0);
    }

    #[test]
    fn affinities_calibrated_and_normalized() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![i as f64, (i * i % 7) as f64])
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let (p, _) = joint_affinities(&refs, 5.0);
        let total: f64 = p.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        for i in 0..20 {
            for j in 0..20 {
                assert!((p[i * 20 + j] - p[j * 20 + i]).abs() < 1e-15);
            }
        }
        // Each conditional row hits the perplexity.
        let dist = squared_distances(&refs);
        let mut out = vec![0.0; 20];
        let mut lo = 0.0;
        let mut hi = 1e6;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if conditional_row(&dist[..20], 0, mid, &mut out) > 5.0f64.ln() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let h = conditional_row(&dist[..20], 0, lo, &mut out);
        assert!((h.exp() - 5.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_params() {
        let days = DayMatrix::new(
            (1..=4)
                .map(|d| chrono::NaiveDate::from_ymd_opt(2024, 1, d).unwrap())
                .collect(),
            1,
            1,
            vec![1.0, 2.0, 3.0, 4.0],
        )
        .unwrap();
        assert!(tsne_embed(&days, &TsneParams::default()).is_err());
    }
}
