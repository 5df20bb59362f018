//! Solver timing on random nonnegative systems.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{exact_nnls, objective, spgd_nnls, ActiveSetOptions, SpgdConfig, StepRule};
use crate::error::{Error, Result};
use crate::sparse::{CooMatrix, CsrMatrix};
use crate::svg;

/// Random diagonally dominant nonnegative `n × n` system.
///
/// Diagonal entries are U(1, 2); each row gets `off_diag` further entries in
/// random columns, each U(0, 1) / `off_diag`, so every row's off-diagonal sum
/// stays below its diagonal. `off_diag = n − 1` gives a dense matrix. The
/// right-hand side is `B q_true` plus Gaussian-like noise, with about a third
/// of `q_true` zero so that some constraints are active.
pub fn random_sparse_system(n: usize, off_diag: usize, seed: u64) -> (CsrMatrix, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let off_diag = off_diag.min(n.saturating_sub(1));
    let mut coo = CooMatrix::with_capacity(n, n, n * (off_diag + 1));
    for r in 0..n {
        coo.push(r, r, rng.random_range(1.0..2.0));
        if off_diag + 1 == n {
            for c in (0..n).filter(|&c| c != r) {
                coo.push(r, c, rng.random::<f64>() / off_diag as f64);
            }
        } else {
            let mut cols = std::collections::BTreeSet::new();
            while cols.len() < off_diag {
                let c = rng.random_range(0..n);
                if c != r {
                    cols.insert(c);
                }
            }
            for c in cols {
                coo.push(r, c, rng.random::<f64>() / off_diag.max(1) as f64);
            }
        }
    }
    let b = coo.to_csr();
    let q: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random::<f64>() < 1.0 / 3.0 {
                0.0
            } else {
                rng.random_range(0.0..10.0)
            }
        })
        .collect();
    let mut y = b.matvec(&q);
    for v in &mut y {
        let noise: f64 = (0..4).map(|_| rng.random::<f64>() - 0.5).sum();
        *v += noise;
    }
    (b, y)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub n: usize,
    pub method: String,
    pub seconds: f64,
    pub objective: Option<f64>,
    pub completed: bool,
}

/// Times SPGD, full-batch projected gradient and the active-set solver on
/// one random system per size. The active-set run gets `active_budget`
/// (unbounded when `None`).
pub fn benchmark_solvers(
    dims: &[usize],
    off_diag: usize,
    seed: u64,
    spgd: &SpgdConfig,
    active_budget: Option<Duration>,
) -> Result<Vec<BenchmarkRow>> {
    let mut rows = Vec::new();
    for &n in dims {
        let (b, y) = random_sparse_system(n, off_diag, seed ^ n as u64);

        let t = Instant::now();
        let (q, _) = spgd_nnls(&b, &y, spgd)?;
        rows.push(BenchmarkRow {
            n,
            method: "spgd".into(),
            seconds: t.elapsed().as_secs_f64(),
            objective: Some(objective(&b, &y, &q)),
            completed: true,
        });

        // ‖B‖² ≤ ‖B‖₁‖B‖∞ gives a safe fixed step.
        let max_row = (0..b.nrows())
            .map(|r| b.row(r).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let max_col = b.column_sums().into_iter().fold(0.0, f64::max);
        let pg = SpgdConfig {
            batch_size: b.nrows().max(1),
            learning_rate: 1.0 / (max_row * max_col).max(f64::MIN_POSITIVE),
            step: StepRule::Fixed,
            ..spgd.clone()
        };
        let t = Instant::now();
        let (q, _) = spgd_nnls(&b, &y, &pg)?;
        rows.push(BenchmarkRow {
            n,
            method: "projected_gradient".into(),
            seconds: t.elapsed().as_secs_f64(),
            objective: Some(objective(&b, &y, &q)),
            completed: true,
        });

        let t = Instant::now();
        let opts = ActiveSetOptions {
            time_budget: active_budget,
            ..Default::default()
        };
        let (objective, completed) = match exact_nnls(&b, &y, &opts) {
            Ok(q) => (Some(objective(&b, &y, &q)), true),
            Err(Error::NotConverged { .. }) => (None, false),
            Err(e) => return Err(e),
        };
        rows.push(BenchmarkRow {
            n,
            method: "active_set".into(),
            seconds: t.elapsed().as_secs_f64(),
            objective,
            completed,
        });
    }
    Ok(rows)
}

/// Writes `benchmark.csv` and `benchmark.svg` into `dir`.
pub fn save_benchmark(dir: &Path, rows: &[BenchmarkRow]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("benchmark.csv"))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let mut methods: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
    methods.dedup();
    methods.sort_unstable();
    methods.dedup();
    let series: Vec<svg::Series<'_>> = methods
        .iter()
        .map(|m| svg::Series {
            name: m,
            points: rows
                .iter()
                .filter(|r| r.method == *m)
                .map(|r| (r.n as f64, r.seconds.max(1e-6)))
                .collect(),
        })
        .collect();
    svg::save(
        &dir.join("benchmark.svg"),
        &svg::line_chart("Solver wall time", "n", "seconds", &series, svg::Scale::Log),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn system_is_diagonally_dominant() {
        let (b, y) = random_sparse_system(50, 5, 1);
        assert_eq!(b.shape(), (50, 50));
        assert_eq!(y.len(), 50);
        for r in 0..50 {
            let (cols, vals) = b.row(r);
            assert_eq!(cols.len(), 6);
            let diag = b.get(r, r);
            let off: f64 = vals.iter().sum::<f64>() - diag;
            assert!(diag >= 1.0 && off < 1.0);
        }
        let (dense, _) = random_sparse_system(10, 9, 1);
        assert_eq!(dense.nnz(), 100);
    }

    #[test]
    fn small_benchmark_has_all_methods() {
        let cfg = SpgdConfig {
            epochs: 5,
            batch_size: 16,
            ..Default::default()
        };
        let rows = benchmark_solvers(&[100], 5, 3, &cfg, None).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.completed));
        let dir = tempfile::tempdir().unwrap();
        save_benchmark(dir.path(), &rows).unwrap();
        assert!(dir.path().join("benchmark.svg").exists());
    }
}
