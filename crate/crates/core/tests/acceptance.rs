//! Acceptance suite. Runs without the libtest harness so the PASS/FAIL lines
//! always reach stdout; exits nonzero if any criterion fails.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dode::assemble::{assemble_assignment, TensorLayout};
use dode::choice::{logit_portions, route_choice_matrix};
use dode::ingest::{dedup_sensors, impute, ImputeMethod, ImputeOptions, Kind, Record};
use dode::network::incidence;
use dode::oracle::{
    make_dataset, make_scenario, random_speed_field, simulate, write_dataset, SimInput, SimMode,
    Template,
};
use dode::patterns::{kmeans, tsne_embed, DayMatrix, TsneParams};
use dode::pipeline::{Pipeline, PipelineConfig, Stage};
use dode::solver::{
    exact_nnls, kkt_residual, objective, random_sparse_system, spgd_nnls, ActiveSetOptions,
    SpgdConfig,
};
use dode::sparse::{CooMatrix, CsrMatrix};
use dode::timeflow::{build_dar, trace_trajectory, DarMatrix, DarOptions, TravelModel};
use dode::Error;

type Outcome = (bool, String);
type Check = (&'static str, fn() -> Outcome);

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

fn synthetic_config(
    dir: &Path,
    template: Template,
    days: usize,
    start: NaiveDate,
    seed: u64,
) -> PipelineConfig {
    let ds = make_dataset(template, days, start, 10.0, seed).unwrap();
    write_dataset(dir, &ds, None, SimMode::Deterministic, seed).unwrap();
    let cfg = PipelineConfig::synthetic(template, ds.grid, days);
    let path = dir.join("config.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    PipelineConfig::load(&path, &[]).unwrap()
}

fn synthetic_recovery() -> Outcome {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = synthetic_config(
        dir.path(),
        Template::NineZoneCorridor,
        30,
        date(2024, 3, 4),
        1,
    );
    let links = cfg.input.network.clone();
    let outcome = Pipeline::new(cfg).unwrap().run(Stage::Evaluate).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    let q = outcome.quality.unwrap();
    let truth = q.truth.unwrap();
    let r2 = q.mean_r2.unwrap_or(f64::NAN);
    let n_links = dode::network::Network::load(&links).unwrap().num_links();
    let ok = r2 >= 0.95
        && truth.within_tolerance == truth.entries
        && truth.entries > 0
        && elapsed <= 600.0;
    (
        ok,
        format!(
            "{n_links} links, {} days, mean R2 {r2:.6}, {}/{} entries with q*>10 within 10% (worst {:.2}%), {elapsed:.0} s",
            outcome.estimates.len(),
            truth.within_tolerance,
            truth.entries,
            100.0 * truth.worst_relative_error
        ),
    )
}

fn dar_oracle_equivalence() -> Outcome {
    let s = make_scenario(Template::Diamond, 1).unwrap();
    let grid = s.grid;
    let n = grid.n_intervals;
    let layout = TensorLayout::new(n, s.network.num_links(), s.network.num_ods(), s.paths.len());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut entries, mut bad, mut worst) = (0usize, 0usize, 0.0f64);
    let (mut slices, mut worst_sum) = (0usize, 0.0f64);
    for field_no in 0..20 {
        let field = random_speed_field(&s.network, grid, 15.0, 70.0, &mut rng).unwrap();
        let (dar, _) =
            build_dar(&s.paths, &s.network, &field, &DarOptions::default(), None).unwrap();
        let demand = vec![1.0; n * s.network.num_ods()];
        let portions = vec![0.5; n * s.paths.len()];
        // 2·10⁴ vehicles per OD and interval, so 10⁴ per path.
        let sim = simulate(
            &SimInput {
                network: &s.network,
                paths: &s.paths,
                speed: &field,
                demand: &demand,
                portions: &portions,
                multiplier: 2e4,
                travel: TravelModel::Integrated,
            },
            SimMode::Deterministic,
            field_no,
        )
        .unwrap();
        let emp: DarMatrix = sim.empirical_dar(grid.interval_s);
        for r in 0..layout.link_len() {
            for c in 0..layout.path_len() {
                let a = dar.matrix.get(r, c);
                let e = emp.matrix.get(r, c);
                let m = sim.departures[c] as f64;
                // Evenly spaced departures quantize shares at 1/M.
                let se = (a * (1.0 - a) / m).sqrt().max(1.0 / m);
                entries += 1;
                let ratio = (a - e).abs() / se;
                worst = worst.max(ratio);
                if ratio > 3.0 {
                    bad += 1;
                }
            }
        }
        for (k, path) in s.paths.paths().iter().enumerate() {
            for h1 in 0..n {
                let last = trace_trajectory(
                    k,
                    &path.links,
                    grid.start(h1) + grid.interval_s,
                    &field,
                    &s.network,
                    TravelModel::Integrated,
                )
                .unwrap();
                for (pos, &link) in path.links.iter().enumerate() {
                    if last.arrivals[pos] < grid.horizon() {
                        slices += 1;
                        worst_sum = worst_sum.max((dar.slice_sum(k, link, h1) - 1.0).abs());
                    }
                }
            }
        }
    }
    let ok = bad == 0 && worst_sum <= 1e-9 && slices > 0;
    (
        ok,
        format!(
            "{bad}/{entries} entries beyond 3 SE (worst {worst:.2} SE); {slices} contained slices, max |sum-1| {worst_sum:.1e}"
        ),
    )
}

fn dense_system(n: usize, seed: u64) -> (CsrMatrix, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
    let b = CsrMatrix::from_dense(n, n, &b);
    let q: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random::<f64>() < 0.3 {
                0.0
            } else {
                rng.random_range(0.0..10.0)
            }
        })
        .collect();
    let y = b
        .matvec(&q)
        .into_iter()
        .map(|v| v + rng.random_range(-0.5..0.5))
        .collect();
    (b, y)
}

fn solver_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_gap, mut worst_kkt, mut fails) = (0.0f64, 0.0f64, 0usize);
    let mut worst_raw = 0.0f64;
    for i in 0..50u64 {
        let n = rng.random_range(20..=200);
        let (b, y) = dense_system(n, 100 + i);
        let exact = exact_nnls(&b, &y, &ActiveSetOptions::default()).unwrap();
        let kkt = kkt_residual(&b, &y, &exact);
        let cfg = SpgdConfig {
            batch_size: 64,
            learning_rate: 5.0,
            epochs: 300,
            seed: i,
            ..Default::default()
        };
        let (q, report) = spgd_nnls(&b, &y, &cfg).unwrap();
        let f_star = objective(&b, &y, &exact);
        let f = objective(&b, &y, &q);
        // Share of the achievable decrease from q0 still missing.
        let gap = (f - f_star) / (report.initial_objective - f_star);
        worst_raw = worst_raw.max(f / f_star - 1.0);
        worst_gap = worst_gap.max(gap);
        worst_kkt = worst_kkt.max(kkt);
        if gap > 1e-3 || kkt > 1e-8 {
            fails += 1;
        }
    }
    (
        fails == 0,
        format!("50 systems, worst gap {worst_gap:.2e} (f/f*-1 up to {worst_raw:.2e}), worst active-set KKT {worst_kkt:.1e}"),
    )
}

fn solver_scaling() -> Outcome {
    let n = 6000;
    let (b, y) = random_sparse_system(n, 5, 4);
    let cfg = SpgdConfig {
        batch_size: 1024,
        epochs: 300,
        seed: 4,
        ..Default::default()
    };
    let t = Instant::now();
    let (q, _) = spgd_nnls(&b, &y, &cfg).unwrap();
    let spgd_s = t.elapsed().as_secs_f64();
    let f = objective(&b, &y, &q);
    let budget = Duration::from_secs_f64(10.0 * spgd_s);
    let t = Instant::now();
    let opts = ActiveSetOptions {
        time_budget: Some(budget),
        ..Default::default()
    };
    let exceeded = matches!(exact_nnls(&b, &y, &opts), Err(Error::NotConverged { .. }));
    let active_s = t.elapsed().as_secs_f64();
    (
        spgd_s <= 60.0 && exceeded,
        format!(
            "n={n}: SPGD {spgd_s:.2} s (objective {f:.3e}); active set {} its {:.1} s budget ({active_s:.1} s)",
            if exceeded { "exceeded" } else { "finished within" },
            budget.as_secs_f64()
        ),
    )
}

fn clustering_sanity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dims = 288;
    let centers: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..dims).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
    let mut truth = Vec::new();
    let mut values = Vec::new();
    for d in 0..90 {
        let c = d % 3;
        truth.push(c);
        values.extend(centers[c].iter().map(|m| m + rng.sample(normal)));
    }
    let dates = (0..90)
        .map(|i| date(2024, 1, 1) + chrono::Days::new(i))
        .collect();
    let days = DayMatrix::new(dates, dims, 1, values).unwrap();
    let params = TsneParams {
        perplexity: 20.0,
        learning_rate: 50.0,
        seed: 5,
        ..Default::default()
    };
    let (emb, trace) = tsne_embed(&days, &params).unwrap();
    let labels = kmeans(&emb, 3, 5).unwrap().labels;
    let ari = common::adjusted_rand_index(&truth, &labels);
    let p_sum: f64 = trace.affinities.iter().sum();
    let kl_ok = trace
        .checkpoints
        .iter()
        .all(|&(_, kl)| kl.is_finite() && kl >= 0.0)
        && trace.kl_final.is_finite()
        && trace.kl_final >= 0.0;
    (
        ari >= 0.9 && (p_sum - 1.0).abs() <= 1e-9 && kl_ok,
        format!(
            "ARI {ari:.4}, affinity sum - 1 = {:.1e}, final KL {:.4} over {} checkpoints",
            p_sum - 1.0,
            trace.kl_final,
            trace.checkpoints.len()
        ),
    )
}

fn route_choice() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let k = rng.random_range(1..=8);
        let costs: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..5000.0)).collect();
        let theta = rng.random_range(1e-4..1.0);
        let sum: f64 = logit_portions(&costs, theta).iter().sum();
        worst = worst.max((sum - 1.0).abs());
    }
    let p = logit_portions(&[100.0, 200.0], 0.01)[0];
    let reference = common::binary_logit(0.01, 100.0, 200.0);
    (
        worst <= 1e-12 && (p - 0.73106).abs() <= 1e-5 && (p - reference).abs() <= 1e-12,
        format!("max |sum-1| {worst:.1e} over 10^4 vectors; P(100 vs 200) = {p:.6}"),
    )
}

fn assembly_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let templates = [
        Template::TwoLink,
        Template::Diamond,
        Template::NineZoneCorridor,
    ];
    let scenarios: Vec<_> = templates
        .iter()
        .map(|&t| make_scenario(t, 7).unwrap())
        .collect();
    let mut worst = 0.0f64;
    let mut largest = 0;
    for _ in 0..20 {
        let s = &scenarios[rng.random_range(0..scenarios.len())];
        let (na, nk, nod) = (s.network.num_links(), s.paths.len(), s.network.num_ods());
        let max_n = 1000 / (na + nk + nod);
        let n = rng.random_range(1..=max_n);
        largest = largest.max(n * (na + nk + nod));
        let layout = TensorLayout::new(n, na, nod, nk);
        let (rows, mids, cols) = (layout.link_len(), layout.path_len(), layout.od_len());

        let mut rho = vec![0.0; rows * mids];
        let mut coo = CooMatrix::new(rows, mids);
        for r in 0..rows {
            for p in 0..mids {
                if rng.random::<f64>() < 0.3 {
                    let v = rng.random::<f64>();
                    rho[r * mids + p] = v;
                    coo.push(r, p, v);
                }
            }
        }
        let dar = DarMatrix {
            layout,
            interval_s: 300.0,
            day: None,
            matrix: coo.to_csr(),
        };
        let mut portions = vec![0.0; mids];
        for h in 0..n {
            for od in 0..nod {
                let range = s.paths.od_range(od);
                let w: Vec<f64> = range.clone().map(|_| rng.random_range(0.01..1.0)).collect();
                let total: f64 = w.iter().sum();
                for (k, wk) in range.zip(w) {
                    portions[h * nk + k] = wk / total;
                }
            }
        }
        let rc = route_choice_matrix(&portions, &s.paths, &layout).unwrap();
        let b = assemble_assignment(&incidence(&s.paths, &s.network), &dar, &rc, &layout).unwrap();

        let mut pr = vec![0.0; mids * cols];
        for h in 0..n {
            for k in 0..nk {
                pr[(h * nk + k) * cols + h * nod + s.paths.path(k).od] = portions[h * nk + k];
            }
        }
        let mask = |r: usize, p: usize| s.paths.path(p % nk).links.contains(&(r % na));
        let dense = common::dense_triple_product(rows, mids, cols, mask, &rho, &pr);
        let sparse = b.matrix.to_dense();
        for (x, y) in dense.iter().zip(&sparse) {
            worst = worst.max((x - y).abs());
        }
    }
    (
        worst <= 1e-10,
        format!("20 fixtures up to {largest} total dimensions, max |diff| {worst:.1e}"),
    )
}

fn imputation() -> Outcome {
    let rec = |link: usize, day: u32, h: usize, v: Option<f64>| Record {
        sensor: None,
        link,
        date: date(2024, 3, day),
        interval: h,
        value: v,
    };
    // 9:55 reads 60 mph, 10:00 is missing, 10:05 reads 70 mph.
    let mut records: Vec<Record> = (0..288).map(|h| rec(0, 1, h, Some(60.0))).collect();
    records[120].value = None;
    records[121].value = Some(70.0);
    let t = dedup_sensors(Kind::Speed, 288, &records);
    let (filled, log) = impute(&t, &ImputeOptions::default()).unwrap();
    let time_ok = filled.get(0, 0, 120) == 65.0
        && log.cells.len() == 1
        && log.cells[0].method == ImputeMethod::TimeNeighbor
        && filled.missing_count() == 0;

    // One link dark all day between two full days.
    let mut records = Vec::new();
    for (day, v) in [(1, 40.0), (3, 60.0)] {
        for h in 0..288 {
            records.push(rec(0, day, h, Some(v)));
            records.push(rec(1, day, h, Some(v)));
        }
    }
    for h in 0..288 {
        records.push(rec(0, 2, h, None));
        records.push(rec(1, 2, h, Some(55.0)));
    }
    let t = dedup_sensors(Kind::Speed, 288, &records);
    let (filled, log) = impute(&t, &ImputeOptions::default()).unwrap();
    let day_ok = (0..288).all(|h| filled.get(1, 0, h) == 50.0)
        && log.cells.len() == 288
        && log
            .cells
            .iter()
            .all(|c| c.method == ImputeMethod::DayNeighbor)
        && filled.missing_count() == 0;
    (
        time_ok && day_ok,
        format!(
            "time-neighbor fill {}, day-neighbor fill {}",
            filled_word(time_ok),
            filled_word(day_ok)
        ),
    )
}

fn filled_word(ok: bool) -> &'static str {
    if ok {
        "exact"
    } else {
        "wrong"
    }
}

fn od_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir.join("od_estimates"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synthetic_config(dir.path(), Template::Diamond, 7, date(2024, 3, 4), 9);
    let mut outs = Vec::new();
    for run in ["a", "b"] {
        let mut c = cfg.clone();
        c.output.dir = dir.path().join(run);
        Pipeline::new(c).unwrap().run(Stage::Estimate).unwrap();
        outs.push(od_files(&dir.path().join(run)));
    }
    let ok = !outs[0].is_empty() && outs[0] == outs[1];
    (
        ok,
        format!("{} OD estimate files compared byte for byte", outs[0].len()),
    )
}

fn main() {
    // Honor `cargo test -- <filter>` loosely: run everything unless the
    // filter names something else.
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    if filter.as_deref().is_some_and(|f| !"acceptance".contains(f)) {
        return;
    }
    let criteria: [Check; 9] = [
        ("synthetic recovery", synthetic_recovery),
        ("DAR-oracle equivalence", dar_oracle_equivalence),
        ("solver correctness", solver_correctness),
        ("solver scaling", solver_scaling),
        ("clustering sanity", clustering_sanity),
        ("route choice", route_choice),
        ("assembly equivalence", assembly_equivalence),
        ("imputation", imputation),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (ok, detail) = check();
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {} {name}: {} ({detail})",
            i + 1,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
