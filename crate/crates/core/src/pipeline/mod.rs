//! Multi-day estimation driver: ingest, DAR, clustering, route choice,
//! assembly, per-day solves and evaluation.
//!
//! Per-day work runs on a bounded rayon pool. DAR and assignment matrices are
//! cached under the output directory together with a fingerprint of their
//! inputs, so re-running a later stage reuses them.

pub mod config;
pub mod metrics;
pub mod report;

use std::collections::{BTreeMap, HashMap};
use std::hash::{DefaultHasher, Hash, Hasher};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{parse_overrides, EmbeddingMethod, PipelineConfig};
pub use metrics::{
    dar_stability, evaluate_r2, histogram, truth_accuracy, DarStability, TruthAccuracy,
};

use crate::assemble::{
    assemble_assignment, capacity_exceedances, restrict_observed, AssignmentMatrix, ObservedSystem,
    TensorLayout,
};
use crate::choice::{
    pattern_mean_costs, route_choice_matrix, save_portions, ChoiceModel, Logit, PathCosts,
    PatternConditions, RouteChoiceMatrix,
};
use crate::error::{Error, Result};
use crate::ingest::{self, day_matrix, dedup_sensors, impute, parse_many, Kind, ObservationTable};
use crate::network::{enumerate_paths, incidence, Network, PathSet};
use crate::patterns::{
    composite_patterns, kmeans, pca_embed, tsne_embed, DayMatrix, Embedding, PatternRegistry,
    TsneParams,
};
use crate::solver::{spgd_nnls, SolveReport};
use crate::sparse::CsrMatrix;
use crate::timeflow::{build_dar, DarMatrix, DarStats, SpeedField, TimeGrid};

/// Pipeline stages in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Dar,
    Cluster,
    Choice,
    Assemble,
    Estimate,
    Evaluate,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Dar => "dar",
            Stage::Cluster => "cluster",
            Stage::Choice => "choice",
            Stage::Assemble => "assemble",
            Stage::Estimate => "estimate",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

/// Cleaned inputs shared by every later stage.
pub struct Prepared {
    pub network: Network,
    pub grid: TimeGrid,
    pub paths: PathSet,
    pub incidence: CsrMatrix,
    pub layout: TensorLayout,
    /// Dates with both counts and speeds after imputation, ascending.
    pub dates: Vec<NaiveDate>,
    pub counts: ObservationTable,
    pub speeds: ObservationTable,
    /// One speed field per date.
    pub fields: Vec<SpeedField>,
    /// Observed link ids entering the least-squares fit.
    pub observed: Vec<String>,
    pub rejected_rows: usize,
    pub imputed_cells: usize,
    pub dropped_dates: Vec<NaiveDate>,
}

/// Portions and mean costs for one composite pattern.
pub struct PatternChoice {
    pub portions: Vec<f64>,
    pub costs: PathCosts,
    pub route_choice: RouteChoiceMatrix,
}

pub struct DayEstimate {
    pub date: NaiveDate,
    pub pattern_id: usize,
    /// Demand indexed `h·|K| + od`.
    pub q: Vec<f64>,
    pub report: SolveReport,
    pub r2: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DayQuality {
    pub date: NaiveDate,
    pub pattern_id: usize,
    pub r2: Option<f64>,
    pub final_residual: f64,
    pub dar_distance: f64,
    pub dropped_fraction: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CrossvalRow {
    pub date: NaiveDate,
    pub r2_estimated_dar: Option<f64>,
    pub r2_true_dar: Option<f64>,
}

/// Contents of `metrics.json`.
#[derive(Clone, Debug, Serialize)]
pub struct QualityReport {
    pub days: Vec<DayQuality>,
    pub mean_r2: Option<f64>,
    pub patterns: usize,
    pub outlier_days: usize,
    pub rejected_rows: usize,
    pub imputed_cells: usize,
    pub dropped_dates: Vec<NaiveDate>,
    pub capacity_exceedances: usize,
    pub crossval: Vec<CrossvalRow>,
    pub truth: Option<TruthAccuracy>,
}

/// Everything produced by [`Pipeline::run`].
pub struct RunOutcome {
    pub prepared: Prepared,
    pub registry: Option<PatternRegistry>,
    pub estimates: Vec<DayEstimate>,
    pub quality: Option<QualityReport>,
}

#[derive(Serialize, Deserialize, PartialEq)]
struct CacheKey {
    key: String,
    dropped_fraction: f64,
    fifo_repairs: usize,
}

fn fingerprint(parts: &[&dyn Fn(&mut DefaultHasher)]) -> String {
    let mut h = DefaultHasher::new();
    for p in parts {
        p(&mut h);
    }
    format!("{:016x}", h.finish())
}

fn hash_f64s(h: &mut DefaultHasher, xs: &[f64]) {
    for x in xs {
        x.to_bits().hash(h);
    }
}

fn read_key(path: &Path) -> Option<CacheKey> {
    serde_json::from_str(&std::fs::read_to_string(path).ok()?).ok()
}

pub struct Pipeline {
    config: PipelineConfig,
    pool: rayon::ThreadPool,
}

impl Pipeline {
    /// Validates the configuration; nothing is read or computed yet.
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.run.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        Ok(Self { config, pool })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn out(&self, sub: &str) -> Result<PathBuf> {
        let dir = self.config.output.dir.join(sub);
        std::fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    /// Runs every stage up to and including `until`.
    pub fn run(&self, until: Stage) -> Result<RunOutcome> {
        let prepared = self.ingest().map_err(|e| e.in_stage("ingest", None))?;
        let mut outcome = RunOutcome {
            prepared,
            registry: None,
            estimates: Vec::new(),
            quality: None,
        };
        if until == Stage::Ingest {
            return Ok(outcome);
        }
        let p = &outcome.prepared;
        let dars = if until == Stage::Dar || until >= Stage::Assemble {
            Some(self.dars(p)?)
        } else {
            None
        };
        if until == Stage::Dar {
            return Ok(outcome);
        }
        let registry = self.cluster(p).map_err(|e| e.in_stage("cluster", None))?;
        if until == Stage::Cluster {
            outcome.registry = Some(registry);
            return Ok(outcome);
        }
        let choices = self.choice(p, &registry)?;
        if until == Stage::Choice {
            outcome.registry = Some(registry);
            return Ok(outcome);
        }
        let dars = dars.expect("DAR stage ran");
        let bs = self.assemble(p, &dars, &registry, &choices)?;
        if until == Stage::Assemble {
            outcome.registry = Some(registry);
            return Ok(outcome);
        }
        let estimates = self.estimate(p, &registry, &bs, &dars, &choices)?;
        if until >= Stage::Evaluate {
            let q = self
                .evaluate(p, &registry, &dars, &choices, &bs, &estimates)
                .map_err(|e| e.in_stage("evaluate", None))?;
            outcome.quality = Some(q);
        }
        if until >= Stage::Report {
            report::build_report(&self.config.output.dir, &self.config.report)
                .map_err(|e| e.in_stage("report", None))?;
        }
        outcome.registry = Some(registry);
        outcome.estimates = estimates;
        Ok(outcome)
    }

    /// Parses, deduplicates and imputes both inputs, then enumerates paths.
    pub fn ingest(&self) -> Result<Prepared> {
        let cfg = &self.config;
        let network = Network::load(&cfg.input.network)?;
        let grid = cfg.grid;
        let sensor_map = cfg
            .input
            .sensor_map
            .as_deref()
            .map(ingest::load_sensor_map)
            .transpose()?;
        let n = grid.n_intervals;
        let counts = parse_many(
            &cfg.input.counts,
            Kind::Count,
            &network,
            sensor_map.as_ref(),
            n,
        )?;
        let speeds = parse_many(
            &cfg.input.speeds,
            Kind::Speed,
            &network,
            sensor_map.as_ref(),
            n,
        )?;
        let dir = self.out("ingest")?;
        {
            let mut w = csv::Writer::from_path(dir.join("rejected.csv"))?;
            w.write_record(["file", "line", "reason"])?;
            for r in counts.rejected.iter().chain(&speeds.rejected) {
                w.write_record([
                    r.file.display().to_string(),
                    r.line.to_string(),
                    r.reason.clone(),
                ])?;
            }
            w.flush()?;
        }
        let rejected_rows = counts.rejected.len() + speeds.rejected.len();
        let count_table = dedup_sensors(Kind::Count, n, &counts.records);
        let speed_table = dedup_sensors(Kind::Speed, n, &speeds.records);
        if count_table.dates.is_empty() || speed_table.dates.is_empty() {
            return Err(Error::Contract("no usable count or speed records".into()));
        }
        let (count_table, count_log) = impute(&count_table, &cfg.impute)?;
        let (speed_table, speed_log) = impute(&speed_table, &cfg.impute)?;
        count_log.save_csv(&dir.join("imputed_counts.csv"), &network)?;
        speed_log.save_csv(&dir.join("imputed_speeds.csv"), &network)?;

        let dates: Vec<NaiveDate> = count_table
            .dates
            .iter()
            .filter(|d| speed_table.date_index(**d).is_some())
            .copied()
            .collect();
        if dates.is_empty() {
            return Err(Error::Contract("no date has both counts and speeds".into()));
        }
        let mut dropped_dates: Vec<NaiveDate> = count_log.dropped_dates.clone();
        dropped_dates.extend(&speed_log.dropped_dates);
        dropped_dates.extend(
            count_table
                .dates
                .iter()
                .chain(&speed_table.dates)
                .filter(|d| !dates.contains(d)),
        );
        dropped_dates.sort_unstable();
        dropped_dates.dedup();
        let counts = count_table.select_dates(&dates);
        let speeds = speed_table.select_dates(&dates);
        counts.save_csv(&dir.join("counts_clean.csv"), &network)?;
        speeds.save_csv(&dir.join("speeds_clean.csv"), &network)?;

        let observed: Vec<String> = if cfg.observed.links.is_empty() {
            counts
                .links
                .iter()
                .map(|&a| network.link(a).id.clone())
                .collect()
        } else {
            for id in &cfg.observed.links {
                let a = network.link_index(id)?;
                if counts.links.binary_search(&a).is_err() {
                    return Err(Error::Config(format!(
                        "observed link `{id}` has no count data"
                    )));
                }
            }
            cfg.observed.links.clone()
        };

        let paths = enumerate_paths(&network, cfg.paths.k, &network.freeflow_weights())?;
        std::fs::write(
            self.config.output.dir.join("paths.json"),
            serde_json::to_string_pretty(&paths.to_json(&network))?,
        )?;
        let fields = dates
            .iter()
            .map(|&d| speeds.speed_field(d, &network, grid))
            .collect::<Result<Vec<_>>>()?;
        let layout = TensorLayout::new(n, network.num_links(), network.num_ods(), paths.len());
        info!(
            "ingested {} days, {} count links, {} speed links, {} paths",
            dates.len(),
            counts.links.len(),
            speeds.links.len(),
            paths.len()
        );
        Ok(Prepared {
            incidence: incidence(&paths, &network),
            network,
            grid,
            paths,
            layout,
            dates,
            counts,
            speeds,
            fields,
            observed,
            rejected_rows,
            imputed_cells: count_log.cells.len() + speed_log.cells.len(),
            dropped_dates,
        })
    }

    fn dar_key(&self, p: &Prepared, d: usize) -> String {
        let paths = p.paths.to_json(&p.network).to_string();
        let opts = format!("{:?}", self.config.dar);
        fingerprint(&[
            &|h| paths.hash(h),
            &|h| opts.hash(h),
            &|h| hash_f64s(h, &[p.grid.interval_s, p.grid.start_offset_s]),
            &|h| hash_f64s(h, p.fields[d].as_slice()),
        ])
    }

    /// Builds (or loads from cache) the DAR matrix of every day.
    pub fn dars(&self, p: &Prepared) -> Result<Vec<(DarMatrix, DarStats)>> {
        let dir = self.out("dar")?;
        let cache = self.config.run.cache;
        self.pool.install(|| {
            p.dates
                .par_iter()
                .enumerate()
                .map(|(d, date)| {
                    let run = || -> Result<(DarMatrix, DarStats)> {
                        let key = self.dar_key(p, d);
                        let file = dir.join(format!("{date}.coo"));
                        let key_file = dir.join(format!("{date}.key"));
                        if cache {
                            if let Some(k) = read_key(&key_file).filter(|k| k.key == key) {
                                if let Ok(m) = DarMatrix::load(&file) {
                                    let stats = DarStats {
                                        dropped_fraction: k.dropped_fraction,
                                        fifo_repairs: k.fifo_repairs,
                                    };
                                    return Ok((m, stats));
                                }
                            }
                        }
                        let (m, stats) = build_dar(
                            &p.paths,
                            &p.network,
                            &p.fields[d],
                            &self.config.dar,
                            Some(date.to_string()),
                        )?;
                        if stats.fifo_repairs > 0 {
                            warn!(
                                "{date}: {} FIFO repairs in DAR construction",
                                stats.fifo_repairs
                            );
                        }
                        m.save(&file)?;
                        let k = CacheKey {
                            key,
                            dropped_fraction: stats.dropped_fraction,
                            fifo_repairs: stats.fifo_repairs,
                        };
                        std::fs::write(&key_file, serde_json::to_string(&k)?)?;
                        Ok((m, stats))
                    };
                    run().map_err(|e| e.in_stage("dar", Some(date.to_string())))
                })
                .collect()
        })
    }

    fn embed(
        &self,
        stem: &str,
        m: &DayMatrix,
        params: &TsneParams,
        k: usize,
    ) -> Result<Vec<usize>> {
        let n = m.n_days();
        let k = k.min(n);
        if k < self
            .config
            .patterns
            .count_clusters
            .max(self.config.patterns.speed_clusters)
        {
            warn!("{stem}: only {n} days, clustering into {k} groups");
        }
        if k <= 1 {
            return Ok(vec![0; n]);
        }
        let dir = self.out("patterns")?;
        let embedding: Embedding = match self.config.patterns.embedding {
            EmbeddingMethod::Tsne if n >= 5 => {
                let mut params = params.clone();
                let cap = (n - 1) as f64 / 3.0;
                if params.perplexity > cap {
                    warn!(
                        "{stem}: perplexity {} too large for {n} days, using {cap}",
                        params.perplexity
                    );
                    params.perplexity = cap;
                }
                let (e, trace) = tsne_embed(m, &params)?;
                info!("{stem}: t-SNE KL {}", trace.kl_final);
                e
            }
            method => {
                if method == EmbeddingMethod::Tsne {
                    warn!("{stem}: {n} days is too few for t-SNE, using PCA");
                }
                pca_embed(m, 2.min(n).min(m.width()))?.embedding
            }
        };
        embedding.save_csv(&dir.join(format!("{stem}_embedding.csv")), &m.dates)?;
        embedding.save_svgs(&dir, stem, &m.dates)?;
        Ok(kmeans(&embedding, k, self.config.run.seed)?.labels)
    }

    /// Clusters days on counts and on speeds, then forms composite patterns.
    pub fn cluster(&self, p: &Prepared) -> Result<PatternRegistry> {
        let pc = &self.config.patterns;
        let cm = day_matrix(&p.counts)?;
        let sm = day_matrix(&p.speeds)?;
        let u = self.embed("counts", &cm, &pc.count_tsne, pc.count_clusters)?;
        let v = self.embed("speeds", &sm, &pc.speed_tsne, pc.speed_clusters)?;
        let reg = composite_patterns(&u, &v)?;
        let dir = self.out("patterns")?;
        reg.save_days(&dir.join("days.csv"), &p.dates)?;
        reg.save_occupancy(&dir.join("occupancy.csv"))?;
        let outliers = reg.patterns.iter().filter(|p| p.is_outlier()).count();
        info!(
            "{} composite patterns ({outliers} outlier days)",
            reg.patterns.len()
        );
        Ok(reg)
    }

    /// Logit portions per pattern from the pattern's mean path costs.
    pub fn choice(&self, p: &Prepared, reg: &PatternRegistry) -> Result<Vec<PatternChoice>> {
        let model = Logit {
            theta: self.config.choice.theta,
        };
        let choices: Vec<PatternChoice> = self.pool.install(|| {
            reg.patterns
                .par_iter()
                .enumerate()
                .map(|(id, pat)| {
                    let run = || -> Result<PatternChoice> {
                        let days: Vec<&SpeedField> =
                            pat.days.iter().map(|&d| &p.fields[d]).collect();
                        let costs = pattern_mean_costs(
                            &days,
                            &p.paths,
                            &p.network,
                            self.config.dar.travel,
                        )?;
                        let portions = model.portions(&PatternConditions {
                            network: &p.network,
                            paths: &p.paths,
                            days: &days,
                            costs: &costs,
                        })?;
                        let route_choice = route_choice_matrix(&portions, &p.paths, &p.layout)?;
                        Ok(PatternChoice {
                            portions,
                            costs,
                            route_choice,
                        })
                    };
                    run().map_err(|e| e.in_stage("choice", Some(format!("pattern {id}"))))
                })
                .collect::<Result<_>>()
        })?;
        let rows: Vec<(String, Vec<f64>)> = choices
            .iter()
            .enumerate()
            .map(|(id, c)| (id.to_string(), c.portions.clone()))
            .collect();
        save_portions(
            &self.config.output.dir.join("portions.csv"),
            &rows,
            &p.paths,
            &p.network,
        )
        .map_err(|e| e.in_stage("choice", None))?;
        Ok(choices)
    }

    /// Builds (or loads from cache) each day's assignment matrix.
    pub fn assemble(
        &self,
        p: &Prepared,
        dars: &[(DarMatrix, DarStats)],
        reg: &PatternRegistry,
        choices: &[PatternChoice],
    ) -> Result<Vec<AssignmentMatrix>> {
        let dir = self.out("assign")?;
        let dar_dir = self.out("dar")?;
        let cache = self.config.run.cache;
        self.pool.install(|| {
            p.dates
                .par_iter()
                .enumerate()
                .map(|(d, date)| {
                    let run = || -> Result<AssignmentMatrix> {
                        let pid = reg.labels[d].pattern_id;
                        let dar_key = read_key(&dar_dir.join(format!("{date}.key")))
                            .map(|k| k.key)
                            .unwrap_or_else(|| self.dar_key(p, d));
                        let portions = &choices[pid].portions;
                        let key = fingerprint(&[&|h| dar_key.hash(h), &|h| hash_f64s(h, portions)]);
                        let file = dir.join(format!("{date}.coo"));
                        let key_file = dir.join(format!("{date}.key"));
                        if cache && read_key(&key_file).is_some_and(|k| k.key == key) {
                            if let Ok(b) = AssignmentMatrix::load(&file) {
                                if b.layout == p.layout {
                                    return Ok(b);
                                }
                            }
                        }
                        let b = assemble_assignment(
                            &p.incidence,
                            &dars[d].0,
                            &choices[pid].route_choice,
                            &p.layout,
                        )?;
                        b.save(&file, Some(&date.to_string()))?;
                        let k = CacheKey {
                            key,
                            dropped_fraction: dars[d].1.dropped_fraction,
                            fifo_repairs: dars[d].1.fifo_repairs,
                        };
                        std::fs::write(&key_file, serde_json::to_string(&k)?)?;
                        Ok(b)
                    };
                    run().map_err(|e| e.in_stage("assemble", Some(date.to_string())))
                })
                .collect()
        })
    }

    fn observed_system(
        &self,
        p: &Prepared,
        b: &AssignmentMatrix,
        d: usize,
    ) -> Result<ObservedSystem> {
        let mut x = vec![f64::NAN; p.layout.link_len()];
        for (l, &a) in p.counts.links.iter().enumerate() {
            for (h, &v) in p.counts.series(d, l).iter().enumerate() {
                x[p.layout.link_index(h, a)] = v;
            }
        }
        let sys = restrict_observed(b, &x, &p.observed, &p.network)?;
        if !sys.is_solvable() {
            return Err(Error::Contract("no observed rows to fit".into()));
        }
        Ok(sys)
    }

    /// Solves every day and writes `od_estimates/<date>.csv` and the solve
    /// reports.
    pub fn estimate(
        &self,
        p: &Prepared,
        reg: &PatternRegistry,
        bs: &[AssignmentMatrix],
        dars: &[(DarMatrix, DarStats)],
        choices: &[PatternChoice],
    ) -> Result<Vec<DayEstimate>> {
        let est_dir = self.out("od_estimates")?;
        let rep_dir = self.out("solve_reports")?;
        self.pool.install(|| {
            p.dates
                .par_iter()
                .enumerate()
                .map(|(d, date)| {
                    let run = || -> Result<DayEstimate> {
                        let pid = reg.labels[d].pattern_id;
                        let sys = self.observed_system(p, &bs[d], d)?;
                        let (q, mut report) = spgd_nnls(&sys.matrix, &sys.y, &self.config.solver)?;
                        report.dropped_fraction = Some(dars[d].1.dropped_fraction);
                        report.fifo_repairs = Some(dars[d].1.fifo_repairs);
                        report.truncated_costs =
                            Some(choices[pid].costs.truncated.iter().filter(|t| **t).count());
                        report.save(&rep_dir.join(format!("{date}.json")))?;
                        write_estimate(
                            &est_dir.join(format!("{date}.csv")),
                            &p.network,
                            &p.layout,
                            &q,
                        )?;
                        let r2 = evaluate_r2(&sys.y, &sys.matrix.matvec(&q))?;
                        Ok(DayEstimate {
                            date: *date,
                            pattern_id: pid,
                            q,
                            report,
                            r2,
                        })
                    };
                    run().map_err(|e| e.in_stage("estimate", Some(date.to_string())))
                })
                .collect()
        })
    }

    /// Fit, DAR stability, capacity and (when configured) cross-validation
    /// and ground-truth metrics. Writes `metrics.json`.
    pub fn evaluate(
        &self,
        p: &Prepared,
        reg: &PatternRegistry,
        dars: &[(DarMatrix, DarStats)],
        choices: &[PatternChoice],
        bs: &[AssignmentMatrix],
        estimates: &[DayEstimate],
    ) -> Result<QualityReport> {
        let dir = self.out("metrics")?;
        let mats: Vec<&CsrMatrix> = dars.iter().map(|(m, _)| &m.matrix).collect();
        let stability = dar_stability(&mats)?;
        metrics::save_histogram(
            &dir,
            "dar_distance",
            "DAR distance to the mean",
            &histogram(&stability.distances, 20),
        )?;

        let mut capacity = csv::Writer::from_path(dir.join("capacity.csv"))?;
        capacity.write_record(["date", "link_id", "interval", "flow_vph", "capacity_vph"])?;
        let mut n_exceed = 0;
        for (e, b) in estimates.iter().zip(bs) {
            let flows = b.matrix.matvec(&e.q);
            for c in capacity_exceedances(&p.network, &p.layout, &flows, p.grid.interval_s) {
                n_exceed += 1;
                capacity.write_record([
                    e.date.to_string(),
                    p.network.link(c.link).id.clone(),
                    c.interval.to_string(),
                    c.flow_vph.to_string(),
                    c.capacity_vph.to_string(),
                ])?;
            }
        }
        capacity.flush()?;

        let crossval = self.crossval(p, reg, choices, estimates)?;

        let truth = match &self.config.input.truth {
            Some(path) => {
                let table = load_truth(path, &p.network, &p.layout)?;
                let mut t_all = Vec::new();
                let mut e_all = Vec::new();
                for e in estimates {
                    if let Some(t) = table.get(&e.date) {
                        t_all.extend_from_slice(t);
                        e_all.extend_from_slice(&e.q);
                    }
                }
                Some(truth_accuracy(&t_all, &e_all, 10.0, 0.1)?)
            }
            None => None,
        };

        let days: Vec<DayQuality> = estimates
            .iter()
            .enumerate()
            .map(|(d, e)| DayQuality {
                date: e.date,
                pattern_id: e.pattern_id,
                r2: e.r2,
                final_residual: e.report.final_residual,
                dar_distance: stability.distances[d],
                dropped_fraction: e.report.dropped_fraction,
            })
            .collect();
        let r2s: Vec<f64> = days.iter().filter_map(|d| d.r2).collect();
        let report = QualityReport {
            mean_r2: (!r2s.is_empty()).then(|| r2s.iter().sum::<f64>() / r2s.len() as f64),
            days,
            patterns: reg.patterns.len(),
            outlier_days: reg.patterns.iter().filter(|p| p.is_outlier()).count(),
            rejected_rows: p.rejected_rows,
            imputed_cells: p.imputed_cells,
            dropped_dates: p.dropped_dates.clone(),
            capacity_exceedances: n_exceed,
            crossval,
            truth,
        };
        std::fs::write(
            self.config.output.dir.join("metrics.json"),
            serde_json::to_string_pretty(&report)?,
        )?;
        Ok(report)
    }

    /// For each holdout date, replaces its DAR with one built from the mean
    /// speeds of the remaining days and refits.
    fn crossval(
        &self,
        p: &Prepared,
        reg: &PatternRegistry,
        choices: &[PatternChoice],
        estimates: &[DayEstimate],
    ) -> Result<Vec<CrossvalRow>> {
        let holdout = &self.config.crossval.holdout;
        if holdout.is_empty() {
            return Ok(Vec::new());
        }
        let train: Vec<&SpeedField> = p
            .dates
            .iter()
            .zip(&p.fields)
            .filter(|(d, _)| !holdout.contains(d))
            .map(|(_, f)| f)
            .collect();
        if train.is_empty() {
            return Err(Error::Config(
                "cross-validation leaves no training days".into(),
            ));
        }
        let mean = SpeedField::mean(&p.network, &train)?;
        let (mean_dar, _) = build_dar(
            &p.paths,
            &p.network,
            &mean,
            &self.config.dar,
            Some("mean".into()),
        )?;
        let mut rows = Vec::new();
        for date in holdout {
            let Some(d) = p.dates.iter().position(|x| x == date) else {
                warn!("holdout date {date} is not in the data");
                continue;
            };
            let pid = reg.labels[d].pattern_id;
            let b = assemble_assignment(
                &p.incidence,
                &mean_dar,
                &choices[pid].route_choice,
                &p.layout,
            )?;
            let sys = self.observed_system(p, &b, d)?;
            let (q, _) = spgd_nnls(&sys.matrix, &sys.y, &self.config.solver)?;
            rows.push(CrossvalRow {
                date: *date,
                r2_estimated_dar: evaluate_r2(&sys.y, &sys.matrix.matvec(&q))?,
                r2_true_dar: estimates[d].r2,
            });
        }
        Ok(rows)
    }
}

/// `od,interval,vehicles` rows in OD-major order.
pub fn write_estimate(
    path: &Path,
    network: &Network,
    layout: &TensorLayout,
    q: &[f64],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["od", "interval", "vehicles"])?;
    for od in 0..layout.n_ods {
        let label = network.od_label(od);
        for h in 0..layout.n_intervals {
            w.write_record([
                label.clone(),
                h.to_string(),
                format!("{}", q[layout.od_index(h, od)]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads an `od,interval,vehicles` file back into a demand vector.
pub fn read_estimate(path: &Path, network: &Network, layout: &TensorLayout) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut q = vec![0.0; layout.od_len()];
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = || Error::parse(path, format!("line {}: malformed estimate row", i + 2));
        let od = rec
            .get(0)
            .and_then(|s| network.od_index(s))
            .ok_or_else(bad)?;
        let h: usize = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let v: f64 = rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        if h >= layout.n_intervals {
            return Err(bad());
        }
        q[layout.od_index(h, od)] = v;
    }
    Ok(q)
}

/// Known demand per date from a `date,od,interval,vehicles` file.
pub fn load_truth(
    path: &Path,
    network: &Network,
    layout: &TensorLayout,
) -> Result<BTreeMap<NaiveDate, Vec<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out: BTreeMap<NaiveDate, Vec<f64>> = BTreeMap::new();
    let mut od_cache: HashMap<String, usize> = HashMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = || Error::parse(path, format!("line {}: malformed truth row", i + 2));
        let date: NaiveDate = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let label = rec.get(1).ok_or_else(bad)?;
        let od = match od_cache.get(label) {
            Some(&od) => od,
            None => {
                let od = network.od_index(label).ok_or_else(bad)?;
                od_cache.insert(label.to_string(), od);
                od
            }
        };
        let h: usize = rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let v: f64 = rec.get(3).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        if h >= layout.n_intervals {
            return Err(bad());
        }
        out.entry(date)
            .or_insert_with(|| vec![0.0; layout.od_len()])[layout.od_index(h, od)] = v;
    }
    Ok(out)
}
