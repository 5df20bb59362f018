//! Lawson–Hanson active-set NNLS on the normal equations.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActiveSetOptions {
    /// Defaults to three times the column count.
    pub max_iterations: Option<usize>,
    pub time_budget: Option<Duration>,
    /// Dual feasibility tolerance, relative to `max(1, ‖Bᵀy‖∞)`.
    pub tol: f64,
}

impl Default for ActiveSetOptions {
    fn default() -> Self {
        Self {
            max_iterations: None,
            time_budget: None,
            tol: 1e-12,
        }
    }
}

/// Largest violation of the NNLS optimality conditions at `q`:
/// negativity, a nonzero gradient on a positive coordinate, or a negative
/// gradient on a zero coordinate. The gradient is `Bᵀ(Bq − y)`.
pub fn kkt_residual(b: &CsrMatrix, y: &[f64], q: &[f64]) -> f64 {
    let r: Vec<f64> = b.matvec(q).iter().zip(y).map(|(a, c)| a - c).collect();
    let g = b.matvec_transpose(&r);
    q.iter()
        .zip(&g)
        .map(|(&qi, &gi)| {
            if qi < 0.0 {
                -qi
            } else if qi > 0.0 {
                gi.abs()
            } else {
                (-gi).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

pub fn exact_nnls_dense(b: &DMatrix<f64>, y: &[f64], opts: &ActiveSetOptions) -> Result<Vec<f64>> {
    let sparse = CsrMatrix::from_dense(b.nrows(), b.ncols(), b.transpose().as_slice());
    exact_nnls(&sparse, y, opts)
}

struct Deadline(Option<Instant>);

impl Deadline {
    fn passed(&self) -> bool {
        self.0.is_some_and(|d| Instant::now() >= d)
    }
}

/// Exact NNLS by the Lawson–Hanson active-set method. The Gram matrix is
/// formed sparsely; each passive-set solve is a dense Cholesky factorization.
pub fn exact_nnls(b: &CsrMatrix, y: &[f64], opts: &ActiveSetOptions) -> Result<Vec<f64>> {
    let (m, n) = b.shape();
    if y.len() != m {
        return Err(Error::Shape {
            context: "observation vector",
            expected: (m, 1),
            actual: (y.len(), 1),
        });
    }
    let deadline = Deadline(opts.time_budget.map(|d| Instant::now() + d));
    let max_iter = opts.max_iterations.unwrap_or(3 * n.max(1));
    let out_of_time = |iterations: usize, best: &[f64]| Error::NotConverged {
        iterations,
        reason: "time budget exceeded".into(),
        best: best.to_vec(),
    };

    let bt = b.transpose();
    let bty = bt.matvec(y);
    if deadline.passed() {
        return Err(out_of_time(0, &vec![0.0; n]));
    }
    let gram = bt.matmul(b)?;
    if deadline.passed() {
        return Err(out_of_time(0, &vec![0.0; n]));
    }
    let scale = bty.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let tol = opts.tol * scale;

    let mut x = vec![0.0; n];
    let mut passive = vec![false; n];
    let mut iterations = 0;
    loop {
        // w = Bᵀy − Gx
        let gx = gram.matvec(&x);
        let w: Vec<f64> = bty.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let next = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&a, &b| w[a].total_cmp(&w[b]).then(b.cmp(&a)));
        let Some(j) = next else {
            return Ok(x);
        };
        passive[j] = true;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::NotConverged {
                    iterations,
                    reason: format!("iteration cap {max_iter} reached"),
                    best: x,
                });
            }
            if deadline.passed() {
                return Err(out_of_time(iterations, &x));
            }
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let z = solve_passive(&gram, &bty, &idx);
            if deadline.passed() {
                return Err(out_of_time(iterations, &x));
            }
            if z.iter().all(|&v| v > 0.0) {
                for (&i, &v) in idx.iter().zip(&z) {
                    x[i] = v;
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            let mut blocking = usize::MAX;
            for (&i, &v) in idx.iter().zip(&z) {
                if v <= 0.0 {
                    let a = x[i] / (x[i] - v);
                    if a < alpha {
                        alpha = a;
                        blocking = i;
                    }
                }
            }
            let xmax = x.iter().fold(0.0f64, |a, &v| a.max(v));
            for (&i, &v) in idx.iter().zip(&z) {
                x[i] += alpha * (v - x[i]);
                if i == blocking || x[i] <= 1e-15 * xmax {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
            if idx.iter().all(|&i| !passive[i]) {
                break;
            }
        }
    }
}

fn solve_passive(gram: &CsrMatrix, bty: &[f64], idx: &[usize]) -> Vec<f64> {
    let p = idx.len();
    let mut pos = vec![usize::MAX; gram.ncols()];
    for (k, &i) in idx.iter().enumerate() {
        pos[i] = k;
    }
    let mut g = DMatrix::<f64>::zeros(p, p);
    for (r, &i) in idx.iter().enumerate() {
        let (cols, vals) = gram.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            if pos[c] != usize::MAX {
                g[(r, pos[c])] = v;
            }
        }
    }
    let rhs = DVector::from_iterator(p, idx.iter().map(|&i| bty[i]));
    if let Some(ch) = g.clone().cholesky() {
        return ch.solve(&rhs).iter().copied().collect();
    }
    // Rank-deficient passive set: least-norm solution through the SVD.
    g.svd(true, true)
        .solve(&rhs, 1e-12)
        .map(|v| v.iter().copied().collect())
        .unwrap_or_else(|_| vec![0.0; p])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_clips() {
        let b = CsrMatrix::identity(3);
        let q = exact_nnls(&b, &[1.0, -2.0, 3.0], &ActiveSetOptions::default()).unwrap();
        assert_eq!(q, vec![1.0, 0.0, 3.0]);
    }

    #[test]
    fn one_dimensional_projection() {
        let b = CsrMatrix::from_dense(1, 1, &[2.0]);
        let q = exact_nnls(&b, &[-4.0], &ActiveSetOptions::default()).unwrap();
        assert_eq!(q, vec![0.0]);
        let q = exact_nnls(&b, &[4.0], &ActiveSetOptions::default()).unwrap();
        assert!((q[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dense_wrapper_matches() {
        let dense = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let q = exact_nnls_dense(&dense, &[1.0, 2.0, 3.0], &ActiveSetOptions::default()).unwrap();
        assert!((q[0] - 1.0).abs() < 1e-9 && (q[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn zero_budget_fails_with_best() {
        let b = CsrMatrix::identity(4);
        let opts = ActiveSetOptions {
            time_budget: Some(Duration::ZERO),
            ..Default::default()
        };
        match exact_nnls(&b, &[1.0; 4], &opts) {
            Err(Error::NotConverged { best, .. }) => assert_eq!(best.len(), 4),
            other => panic!("expected failure, got {other:?}"),
        }
    }
}
