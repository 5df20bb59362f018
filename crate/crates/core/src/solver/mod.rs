//! Nonnegative least squares: stochastic projected gradient descent and an
//! exact active-set baseline.

mod active_set;
mod bench;

pub use active_set::{exact_nnls, exact_nnls_dense, kkt_residual, ActiveSetOptions};
pub use bench::{benchmark_solvers, random_sparse_system, save_benchmark, BenchmarkRow};

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

pub const ADAGRAD_EPS: f64 = 1e-10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    #[default]
    Zero,
    Constant(f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    #[default]
    Adagrad,
    /// `q -= η g`, used for full-batch projected gradient runs.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpgdConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub init: InitPolicy,
    pub step: StepRule,
    /// Stop once the objective changes by less than 1e-6 (relative) over
    /// ten epochs.
    pub early_stop: bool,
}

impl Default for SpgdConfig {
    fn default() -> Self {
        Self {
            batch_size: 8192,
            learning_rate: 5.0,
            epochs: 300,
            seed: 0,
            init: InitPolicy::Zero,
            step: StepRule::Adagrad,
            early_stop: false,
        }
    }
}

impl SpgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if let InitPolicy::Constant(c) = self.init {
            if !(c >= 0.0) {
                return Err(Error::Config(format!(
                    "initial value {c} must be nonnegative"
                )));
            }
        }
        Ok(())
    }
}

/// Accumulated squared gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct AdagradState {
    pub g2: Vec<f64>,
    pub eps: f64,
}

impl AdagradState {
    pub fn new(n: usize) -> Self {
        Self {
            g2: vec![0.0; n],
            eps: ADAGRAD_EPS,
        }
    }

    #[inline]
    fn update(&mut self, i: usize, q: f64, g: f64, eta: f64) -> f64 {
        self.g2[i] += g * g;
        q - eta * g / (self.g2[i].sqrt() + self.eps)
    }
}

/// One Adagrad update (no projection).
pub fn adagrad_step(q: &[f64], g: &[f64], eta: f64, state: &mut AdagradState) -> Vec<f64> {
    assert_eq!(q.len(), g.len());
    assert_eq!(q.len(), state.g2.len());
    q.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (&qi, &gi))| state.update(i, qi, gi, eta))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub initial_objective: f64,
    /// `‖Bq − y‖²` after each epoch.
    pub objective_trace: Vec<f64>,
    /// `‖Bq − y‖` at the returned iterate.
    pub final_residual: f64,
    pub epochs_run: usize,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub early_stopped: bool,
    pub config: SpgdConfig,
    pub rows: usize,
    pub cols: usize,
    /// Upstream DAR mass dropped past the horizon, if known.
    pub dropped_fraction: Option<f64>,
    pub fifo_repairs: Option<usize>,
    pub truncated_costs: Option<usize>,
}

impl SolveReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

pub fn objective(b: &CsrMatrix, y: &[f64], q: &[f64]) -> f64 {
    b.matvec(q)
        .iter()
        .zip(y)
        .map(|(bq, yi)| (bq - yi).powi(2))
        .sum()
}

/// Minimizes `‖Bq − y‖²` over `q ≥ 0` by mini-batch projected gradient with
/// per-coordinate Adagrad steps. Rows are reshuffled every epoch.
pub fn spgd_nnls(b: &CsrMatrix, y: &[f64], config: &SpgdConfig) -> Result<(Vec<f64>, SolveReport)> {
    config.validate()?;
    let (m, n) = b.shape();
    if y.len() != m {
        return Err(Error::Shape {
            context: "observation vector",
            expected: (m, 1),
            actual: (y.len(), 1),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("observations must be finite".into()));
    }
    let start = Instant::now();
    let mut q = match config.init {
        InitPolicy::Zero => vec![0.0; n],
        InitPolicy::Constant(c) => vec![c; n],
    };
    let mut state = AdagradState::new(n);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..m).collect();
    let mut grad = vec![0.0; n];
    let mut touched = vec![false; n];
    let mut touched_idx: Vec<usize> = Vec::new();
    let mut residuals = Vec::with_capacity(config.batch_size.min(m));

    let mut report = SolveReport {
        initial_objective: objective(b, y, &q),
        config: config.clone(),
        rows: m,
        cols: n,
        ..Default::default()
    };

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            residuals.clear();
            residuals.extend(chunk.iter().map(|&r| b.row_dot(r, &q) - y[r]));
            for (&r, &res) in chunk.iter().zip(&residuals) {
                let (cols, vals) = b.row(r);
                for (&c, &v) in cols.iter().zip(vals) {
                    if !touched[c] {
                        touched[c] = true;
                        touched_idx.push(c);
                    }
                    grad[c] += v * res;
                }
            }
            for &c in &touched_idx {
                let g = grad[c];
                let next = match config.step {
                    StepRule::Adagrad => state.update(c, q[c], g, config.learning_rate),
                    StepRule::Fixed => q[c] - config.learning_rate * g,
                };
                if !next.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        reason: format!(
                            "non-finite iterate at coordinate {c} (gradient {g}); learning rate {} is likely too large",
                            config.learning_rate
                        ),
                    });
                }
                q[c] = next.max(0.0);
                grad[c] = 0.0;
                touched[c] = false;
            }
            touched_idx.clear();
            report.iterations += 1;
        }
        let f = objective(b, y, &q);
        if !f.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: "objective is not finite".into(),
            });
        }
        report.objective_trace.push(f);
        report.epochs_run = epoch + 1;
        if config.early_stop && report.objective_trace.len() > 10 {
            let t = &report.objective_trace;
            let prev = t[t.len() - 11];
            if (prev - f).abs() <= 1e-6 * prev.abs().max(f64::MIN_POSITIVE) {
                report.early_stopped = true;
                break;
            }
        }
    }
    report.final_residual = report.objective_trace.last().copied().unwrap_or(0.0).sqrt();
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((q, report))
}
