//! Vehicle-level FIFO simulator and synthetic scenarios for verification.
//!
//! Vehicles do not interact: each one follows its path through the
//! exogenous speed field. Counts are tallied at link tails per arrival
//! interval, which is exactly what the assignment model predicts.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::assemble::TensorLayout;
use crate::choice::{pattern_mean_costs, ChoiceModel, Logit, PatternConditions};
use crate::error::{Error, Result};
use crate::ingest::{write_records, Kind, Record};
use crate::network::{build_network, enumerate_paths, LinkSpec, Network, PathSet, ZoneSpec};
use crate::sparse::CooMatrix;
use crate::timeflow::{trace_trajectory, DarMatrix, SpeedField, TimeGrid, TravelModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Template {
    TwoLink,
    Diamond,
    NineZoneCorridor,
}

impl FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-link" => Ok(Template::TwoLink),
            "diamond" => Ok(Template::Diamond),
            "nine-zone-corridor" => Ok(Template::NineZoneCorridor),
            other => Err(Error::Config(format!(
                "unknown scenario template `{other}` (expected two-link, diamond or nine-zone-corridor)"
            ))),
        }
    }
}

impl Template {
    pub fn name(self) -> &'static str {
        match self {
            Template::TwoLink => "two-link",
            Template::Diamond => "diamond",
            Template::NineZoneCorridor => "nine-zone-corridor",
        }
    }

    /// Grid used by the template.
    pub fn grid(self) -> TimeGrid {
        match self {
            Template::TwoLink | Template::Diamond => TimeGrid {
                interval_s: 300.0,
                n_intervals: 36,
                start_offset_s: 6.0 * 3600.0,
            },
            Template::NineZoneCorridor => TimeGrid {
                interval_s: 300.0,
                n_intervals: 288,
                start_offset_s: 0.0,
            },
        }
    }

    /// Paths enumerated per OD pair.
    pub fn k_paths(self) -> usize {
        match self {
            Template::TwoLink => 1,
            Template::Diamond => 2,
            Template::NineZoneCorridor => 2,
        }
    }
}

/// One synthetic day with known demand.
#[derive(Clone, Debug)]
pub struct SyntheticScenario {
    pub template: Template,
    pub network: Network,
    pub grid: TimeGrid,
    pub paths: PathSet,
    pub date: NaiveDate,
    /// True OD demand, vehicles per interval, indexed `h·|K| + od`.
    pub demand: Vec<f64>,
    /// Path portions indexed `h·Π + k`.
    pub portions: Vec<f64>,
    pub speed: SpeedField,
    /// Vehicles simulated per unit of demand.
    pub multiplier: f64,
    pub theta: f64,
}

impl SyntheticScenario {
    pub fn layout(&self) -> TensorLayout {
        TensorLayout::new(
            self.grid.n_intervals,
            self.network.num_links(),
            self.network.num_ods(),
            self.paths.len(),
        )
    }

    pub fn simulate(&self, mode: SimMode, seed: u64) -> Result<SimOutput> {
        simulate(
            &SimInput {
                network: &self.network,
                paths: &self.paths,
                speed: &self.speed,
                demand: &self.demand,
                portions: &self.portions,
                multiplier: self.multiplier,
                travel: TravelModel::Integrated,
            },
            mode,
            seed,
        )
    }
}

fn link(id: &str, tail: &str, head: &str, miles: f64, mph: f64, cap: f64) -> LinkSpec {
    LinkSpec {
        id: id.into(),
        tail: tail.into(),
        head: head.into(),
        length_miles: miles,
        freeflow_mph: mph,
        capacity_vph: Some(cap),
    }
}

fn zone(id: &str, origin: &str, destination: &str) -> ZoneSpec {
    ZoneSpec {
        id: id.into(),
        origin_node: origin.into(),
        destination_node: destination.into(),
    }
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Zones of the corridor template, south to north along each corridor.
const WEST: [&str; 4] = ["W1", "W2", "W3", "W4"];
const EAST: [&str; 4] = ["E1", "E2", "E3", "E4"];

/// Two parallel north–south corridors merging at downtown `T`, joined by a
/// two-way connector at their southern ends. Every zone has its own on- and
/// off-ramp; each mainline segment carries two detector links.
fn corridor_network() -> Result<Network> {
    let mut nodes = vec!["T".to_string()];
    let mut links = Vec::new();
    let mut zones = Vec::new();
    // Segment lengths from zone 1 (north) southwards.
    let seg_miles = [2.4, 2.0, 2.6, 2.2];
    for (prefix, names, speed) in [("w", WEST, 65.0), ("e", EAST, 60.0)] {
        for (i, z) in names.iter().enumerate() {
            nodes.push(z.to_string());
            let north = if i == 0 {
                "T".to_string()
            } else {
                names[i - 1].to_string()
            };
            let mid = format!("{prefix}m{}", i + 1);
            nodes.push(mid.clone());
            let half = seg_miles[i] / 2.0;
            let id = |dir: &str, part: usize| format!("{prefix}{}{dir}{part}", i + 1);
            // Northbound: zone node -> mid -> north node.
            links.push(link(&id("n", 1), z, &mid, half, speed, 4000.0));
            links.push(link(&id("n", 2), &mid, &north, half, speed, 4000.0));
            // Southbound: north node -> mid -> zone node.
            links.push(link(&id("s", 1), &north, &mid, half, speed, 4000.0));
            links.push(link(&id("s", 2), &mid, z, half, speed, 4000.0));
        }
    }
    links.push(link("xwe", "W4", "E4", 3.5, 50.0, 1800.0));
    links.push(link("xew", "E4", "W4", 3.5, 50.0, 1800.0));
    for z in std::iter::once("T").chain(WEST).chain(EAST) {
        let (o, d) = (format!("o{z}"), format!("d{z}"));
        nodes.push(o.clone());
        nodes.push(d.clone());
        links.push(link(&format!("on{z}"), &o, z, 0.4, 40.0, 1500.0));
        links.push(link(&format!("off{z}"), z, &d, 0.4, 40.0, 1500.0));
        zones.push(zone(z, &o, &d));
    }
    // Commute pairs to and from downtown plus a few cross-corridor pairs.
    let mut ods = Vec::new();
    for z in WEST.iter().chain(&EAST) {
        ods.push((z.to_string(), "T".to_string()));
        ods.push(("T".to_string(), z.to_string()));
    }
    for (a, b) in [("W4", "E2"), ("E4", "W2"), ("W3", "W1"), ("E1", "E3")] {
        ods.push((a.to_string(), b.to_string()));
    }
    build_network(nodes, links, zones, Some(ods))
}

fn template_network(template: Template) -> Result<Network> {
    match template {
        Template::TwoLink => build_network(
            strings(&["a", "b", "c"]),
            vec![
                link("l1", "a", "b", 2.0, 60.0, 3000.0),
                link("l2", "b", "c", 3.0, 60.0, 3000.0),
            ],
            vec![zone("A", "a", "a"), zone("C", "c", "c")],
            Some(vec![("A".into(), "C".into())]),
        ),
        Template::Diamond => build_network(
            strings(&["o", "u", "l", "d"]),
            vec![
                link("ou", "o", "u", 3.0, 60.0, 3000.0),
                link("ud", "u", "d", 3.0, 60.0, 3000.0),
                link("ol", "o", "l", 3.5, 60.0, 3000.0),
                link("ld", "l", "d", 3.5, 60.0, 3000.0),
            ],
            vec![zone("O", "o", "o"), zone("D", "d", "d")],
            Some(vec![("O".into(), "D".into())]),
        ),
        Template::NineZoneCorridor => corridor_network(),
    }
}

fn bump(hour: f64, center: f64, width: f64) -> f64 {
    (-0.5 * ((hour - center) / width).powi(2)).exp()
}

/// Time-of-day profile in [0, 1]: morning and evening peaks on weekdays,
/// one flat midday hump on weekends.
fn day_profile(hour: f64, weekend: bool, inbound: bool) -> f64 {
    let daytime = bump(hour, 13.0, 4.5);
    if weekend {
        return 0.45 * daytime;
    }
    let (am, pm) = if inbound { (1.0, 0.45) } else { (0.45, 1.0) };
    (am * bump(hour, 7.75, 1.0) + pm * bump(hour, 17.25, 1.2) + 0.3 * daytime).min(1.2)
}

/// Per-OD peak demand (vehicles per 5 minutes) and whether it is a morning
/// (inbound) flow.
fn od_shape(network: &Network, od: usize, template: Template) -> (f64, bool) {
    match template {
        Template::TwoLink | Template::Diamond => (60.0, true),
        Template::NineZoneCorridor => {
            let p = network.od_pairs()[od];
            let o = &network.zones()[p.origin].id;
            let d = &network.zones()[p.destination].id;
            let far = |z: &str| z.ends_with('3') || z.ends_with('4');
            if d == "T" {
                (if far(o) { 45.0 } else { 35.0 }, true)
            } else if o == "T" {
                (if far(d) { 40.0 } else { 30.0 }, false)
            } else {
                (22.0, o.starts_with('W'))
            }
        }
    }
}

fn synth_speed(
    network: &Network,
    grid: TimeGrid,
    weekend: bool,
    severity: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SpeedField> {
    let n = grid.n_intervals;
    let noise = Normal::new(0.0, 0.02).expect("valid normal");
    let mut mph = Vec::with_capacity(network.num_links() * n);
    for l in network.links() {
        // Inbound mainline links slow in the morning, outbound in the evening.
        let inbound = l.id.contains('n') && !l.id.starts_with("on");
        let depth = if l.id.starts_with("on") || l.id.starts_with("off") {
            0.15
        } else if l.id.starts_with('x') {
            0.2
        } else {
            0.45
        };
        let link_factor = rng.random_range(0.7..1.3);
        for h in 0..n {
            let hour = (grid.start_offset_s + grid.start(h) + 0.5 * grid.interval_s) / 3600.0;
            let load = day_profile(hour, weekend, inbound).min(1.0);
            let slow = (depth * link_factor * severity * load * load).min(0.8);
            let v = l.freeflow_mph * (1.0 - slow) * (1.0 + noise.sample(rng));
            mph.push(v.clamp(5.0, l.freeflow_mph * 1.1));
        }
    }
    SpeedField::new(network, grid, mph)
}

fn synth_demand(
    network: &Network,
    grid: TimeGrid,
    template: Template,
    weekend: bool,
    level: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let k = network.num_ods();
    let mut q = vec![0.0; grid.n_intervals * k];
    let jitter = Normal::new(0.0, 0.04).expect("valid normal");
    for od in 0..k {
        let (peak, inbound) = od_shape(network, od, template);
        let od_level = level * (1.0 + jitter.sample(rng));
        for h in 0..grid.n_intervals {
            let hour = (grid.start_offset_s + grid.start(h) + 0.5 * grid.interval_s) / 3600.0;
            let base = match template {
                Template::TwoLink | Template::Diamond => 0.35 + 0.65 * bump(hour, 8.0, 0.75),
                Template::NineZoneCorridor => day_profile(hour, weekend, inbound),
            };
            q[h * k + od] = (peak * od_level * base * (1.0 + jitter.sample(rng)))
                .round()
                .max(0.0);
        }
    }
    q
}

/// Logit portions on the day's own path costs.
fn regime_portions(
    network: &Network,
    paths: &PathSet,
    days: &[&SpeedField],
    theta: f64,
) -> Result<Vec<f64>> {
    let costs = pattern_mean_costs(days, paths, network, TravelModel::Integrated)?;
    Logit { theta }.portions(&PatternConditions {
        network,
        paths,
        days,
        costs: &costs,
    })
}

/// A multi-day synthetic dataset sharing one network and path set.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub template: Template,
    pub network: Network,
    pub grid: TimeGrid,
    pub paths: PathSet,
    pub days: Vec<SyntheticScenario>,
}

pub const DEFAULT_THETA: f64 = 0.01;

/// Builds `n_days` consecutive days starting at `start`. Weekdays get
/// double-peaked demand and congestion; weekends are lighter. Route portions
/// are Logit on the mean path costs of the day type.
pub fn make_dataset(
    template: Template,
    n_days: usize,
    start: NaiveDate,
    multiplier: f64,
    seed: u64,
) -> Result<SyntheticDataset> {
    let network = template_network(template)?;
    let grid = template.grid();
    grid.validate()?;
    let paths = enumerate_paths(&network, template.k_paths(), &network.freeflow_weights())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drawn = Vec::with_capacity(n_days);
    for i in 0..n_days {
        let date = start + chrono::Days::new(i as u64);
        let weekend = matches!(date.weekday(), Weekday::Sat | Weekday::Sun);
        let severity = if weekend {
            rng.random_range(0.2..0.5)
        } else {
            rng.random_range(0.6..1.4)
        };
        let level = if weekend {
            rng.random_range(0.8..1.0)
        } else {
            rng.random_range(0.9..1.1)
        };
        let speed = synth_speed(&network, grid, weekend, severity, &mut rng)?;
        let demand = synth_demand(&network, grid, template, weekend, level, &mut rng);
        drawn.push((date, weekend, speed, demand));
    }
    // Travelers pick routes by the typical costs of the day type, so portions
    // are shared by all weekdays and by all weekend days.
    let mut regime = [None, None];
    for (slot, weekend) in regime.iter_mut().zip([false, true]) {
        let fields: Vec<&SpeedField> = drawn
            .iter()
            .filter(|d| d.1 == weekend)
            .map(|d| &d.2)
            .collect();
        if !fields.is_empty() {
            *slot = Some(regime_portions(&network, &paths, &fields, DEFAULT_THETA)?);
        }
    }
    let mut days = Vec::with_capacity(n_days);
    for (date, weekend, speed, demand) in drawn {
        days.push(SyntheticScenario {
            template,
            network: network.clone(),
            grid,
            paths: paths.clone(),
            date,
            demand,
            portions: regime[usize::from(weekend)]
                .clone()
                .expect("regime has days"),
            speed,
            multiplier,
            theta: DEFAULT_THETA,
        });
    }
    Ok(SyntheticDataset {
        template,
        network,
        grid,
        paths,
        days,
    })
}

/// A single weekday of the template.
pub fn make_scenario(template: Template, seed: u64) -> Result<SyntheticScenario> {
    let start = NaiveDate::from_ymd_opt(2024, 3, 4).expect("valid date");
    let mut ds = make_dataset(template, 1, start, 1.0, seed)?;
    Ok(ds.days.remove(0))
}

/// Random speeds in `[lo, hi]` mph, independent per (link, interval).
pub fn random_speed_field(
    network: &Network,
    grid: TimeGrid,
    lo: f64,
    hi: f64,
    rng: &mut impl Rng,
) -> Result<SpeedField> {
    let mph = (0..network.num_links() * grid.n_intervals)
        .map(|_| rng.random_range(lo..hi))
        .collect();
    SpeedField::new(network, grid, mph)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SimMode {
    /// Each path's vehicles leave at evenly spaced times; paths get
    /// largest-remainder shares of the OD's vehicles.
    #[default]
    Deterministic,
    /// Uniform random departure times and independent path draws.
    Stochastic,
}

pub struct SimInput<'a> {
    pub network: &'a Network,
    pub paths: &'a PathSet,
    pub speed: &'a SpeedField,
    pub demand: &'a [f64],
    pub portions: &'a [f64],
    pub multiplier: f64,
    pub travel: TravelModel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOutput {
    pub layout: TensorLayout,
    pub multiplier: f64,
    /// Vehicles reaching each link tail, indexed `h·|A| + a`.
    pub counts: Vec<f64>,
    /// Vehicles departing on each path, indexed `h·Π + k`.
    pub departures: Vec<u64>,
    /// Crossings keyed by (link tensor row, path tensor column).
    pub tallies: BTreeMap<(usize, usize), u64>,
    pub vehicles: u64,
    pub truncated: u64,
}

impl SimOutput {
    /// Counts per unit of demand.
    pub fn flows(&self) -> Vec<f64> {
        self.counts.iter().map(|c| c / self.multiplier).collect()
    }

    /// Share of each (path, departure interval) cohort seen at each link tail
    /// per arrival interval.
    pub fn empirical_dar(&self, interval_s: f64) -> DarMatrix {
        let mut coo = CooMatrix::new(self.layout.link_len(), self.layout.path_len());
        for (&(r, c), &n) in &self.tallies {
            coo.push(r, c, n as f64 / self.departures[c] as f64);
        }
        DarMatrix {
            layout: self.layout,
            interval_s,
            day: None,
            matrix: coo.to_csr(),
        }
    }
}

/// Splits `n` vehicles by `shares` with largest-remainder rounding.
pub fn largest_remainder(n: u64, shares: &[f64]) -> Vec<u64> {
    let total: f64 = shares.iter().sum();
    if total <= 0.0 || shares.is_empty() {
        return vec![0; shares.len()];
    }
    let exact: Vec<f64> = shares.iter().map(|s| n as f64 * s / total).collect();
    let mut out: Vec<u64> = exact.iter().map(|e| e.floor() as u64).collect();
    let mut left = n - out.iter().sum::<u64>().min(n);
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

struct BlockTally {
    counts: Vec<(usize, u64)>,
    departures: Vec<(usize, u64)>,
    tallies: Vec<((usize, usize), u64)>,
    truncated: u64,
}

/// Spawns `⌈q·M⌉` vehicles per (OD, interval), routes them and tallies
/// tail-of-link crossings by arrival interval.
pub fn simulate(input: &SimInput<'_>, mode: SimMode, seed: u64) -> Result<SimOutput> {
    let grid = *input.speed.grid();
    let layout = TensorLayout::new(
        grid.n_intervals,
        input.network.num_links(),
        input.network.num_ods(),
        input.paths.len(),
    );
    if input.demand.len() != layout.od_len() || input.portions.len() != layout.path_len() {
        return Err(Error::Shape {
            context: "simulation inputs",
            expected: (layout.od_len(), layout.path_len()),
            actual: (input.demand.len(), input.portions.len()),
        });
    }
    if let Some(i) = input.demand.iter().position(|q| !(*q >= 0.0)) {
        return Err(Error::Contract(format!("demand entry {i} is negative")));
    }
    if !(input.multiplier > 0.0) {
        return Err(Error::Config("vehicle multiplier must be positive".into()));
    }
    let horizon = grid.horizon();
    let dh = grid.interval_s;
    let blocks: Vec<(usize, usize)> = (0..grid.n_intervals)
        .flat_map(|h| (0..layout.n_ods).map(move |od| (h, od)))
        .filter(|&(h, od)| {
            input.demand[layout.od_index(h, od)] > 0.0 && !input.paths.od_range(od).is_empty()
        })
        .collect();

    let parts: Vec<BlockTally> = blocks
        .par_iter()
        .enumerate()
        .map(|(b, &(h, od))| -> Result<BlockTally> {
            let q = input.demand[layout.od_index(h, od)];
            let n = (q * input.multiplier - 1e-9).ceil().max(0.0) as u64;
            let range = input.paths.od_range(od);
            let shares: Vec<f64> = range
                .clone()
                .map(|k| input.portions[layout.path_index(h, k)])
                .collect();
            let t0 = grid.start(h);
            let mut departures: Vec<(usize, f64)> = Vec::with_capacity(n as usize);
            match mode {
                SimMode::Deterministic => {
                    for (k, nk) in range.clone().zip(largest_remainder(n, &shares)) {
                        for j in 0..nk {
                            departures.push((k, t0 + (j as f64 + 0.5) * dh / nk as f64));
                        }
                    }
                }
                SimMode::Stochastic => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(b as u64);
                    let total: f64 = shares.iter().sum();
                    for _ in 0..n {
                        let mut u = rng.random::<f64>() * total;
                        let mut k = range.end - 1;
                        for (i, s) in shares.iter().enumerate() {
                            if u < *s {
                                k = range.start + i;
                                break;
                            }
                            u -= s;
                        }
                        departures.push((k, t0 + rng.random::<f64>() * dh));
                    }
                }
            }
            let mut counts: BTreeMap<usize, u64> = BTreeMap::new();
            let mut deps: BTreeMap<usize, u64> = BTreeMap::new();
            let mut tallies: BTreeMap<(usize, usize), u64> = BTreeMap::new();
            let mut truncated = 0;
            for (k, t) in departures {
                let col = layout.path_index(h, k);
                *deps.entry(col).or_default() += 1;
                let path = input.paths.path(k);
                let tr =
                    trace_trajectory(k, &path.links, t, input.speed, input.network, input.travel)?;
                truncated += u64::from(tr.truncated);
                for (&a, &arr) in path.links.iter().zip(&tr.arrivals) {
                    if arr >= horizon {
                        break;
                    }
                    let h2 = grid.interval_of(arr).expect("inside horizon");
                    let row = layout.link_index(h2, a);
                    *counts.entry(row).or_default() += 1;
                    *tallies.entry((row, col)).or_default() += 1;
                }
            }
            Ok(BlockTally {
                counts: counts.into_iter().collect(),
                departures: deps.into_iter().collect(),
                tallies: tallies.into_iter().collect(),
                truncated,
            })
        })
        .collect::<Result<_>>()?;

    let mut out = SimOutput {
        layout,
        multiplier: input.multiplier,
        counts: vec![0.0; layout.link_len()],
        departures: vec![0; layout.path_len()],
        tallies: BTreeMap::new(),
        vehicles: 0,
        truncated: 0,
    };
    for p in parts {
        for (r, c) in p.counts {
            out.counts[r] += c as f64;
        }
        for (c, n) in p.departures {
            out.departures[c] += n;
            out.vehicles += n;
        }
        for (key, n) in p.tallies {
            *out.tallies.entry(key).or_default() += n;
        }
        out.truncated += p.truncated;
    }
    Ok(out)
}

/// File names written by [`write_dataset`].
pub const NETWORK_FILE: &str = "network.json";
pub const COUNTS_FILE: &str = "counts.csv";
pub const SPEEDS_FILE: &str = "speeds.csv";
pub const TRUTH_FILE: &str = "truth_od.csv";

/// Simulates every day and writes the network, count and speed CSVs in the
/// ingest schema, plus the true OD demand. Counts are divided by the vehicle
/// multiplier. Returns the per-day simulation outputs.
pub fn write_dataset(
    dir: &Path,
    ds: &SyntheticDataset,
    observed: Option<&[String]>,
    mode: SimMode,
    seed: u64,
) -> Result<Vec<SimOutput>> {
    std::fs::create_dir_all(dir)?;
    ds.network.save(&dir.join(NETWORK_FILE))?;
    let observed: Vec<usize> = match observed {
        Some(ids) => ids
            .iter()
            .map(|id| ds.network.link_index(id))
            .collect::<Result<_>>()?,
        None => (0..ds.network.num_links()).collect(),
    };
    let sims: Vec<SimOutput> = ds
        .days
        .iter()
        .enumerate()
        .map(|(i, day)| day.simulate(mode, seed.wrapping_add(i as u64)))
        .collect::<Result<_>>()?;
    let n = ds.grid.n_intervals;
    let mut counts = Vec::new();
    let mut speeds = Vec::new();
    let mut truth = csv::Writer::from_path(dir.join(TRUTH_FILE))?;
    truth.write_record(["date", "od", "interval", "vehicles"])?;
    for (day, sim) in ds.days.iter().zip(&sims) {
        let layout = sim.layout;
        let flows = sim.flows();
        for &a in &observed {
            for h in 0..n {
                counts.push(Record {
                    sensor: None,
                    link: a,
                    date: day.date,
                    interval: h,
                    value: Some(flows[layout.link_index(h, a)]),
                });
            }
        }
        for a in 0..ds.network.num_links() {
            for h in 0..n {
                speeds.push(Record {
                    sensor: None,
                    link: a,
                    date: day.date,
                    interval: h,
                    value: Some(day.speed.speed(a, h)),
                });
            }
        }
        for h in 0..n {
            for od in 0..layout.n_ods {
                truth.write_record([
                    day.date.to_string(),
                    ds.network.od_label(od),
                    h.to_string(),
                    day.demand[layout.od_index(h, od)].to_string(),
                ])?;
            }
        }
    }
    truth.flush()?;
    write_records(&dir.join(COUNTS_FILE), Kind::Count, &counts, &ds.network)?;
    write_records(&dir.join(SPEEDS_FILE), Kind::Speed, &speeds, &ds.network)?;
    Ok(sims)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_parse() {
        assert_eq!("diamond".parse::<Template>().unwrap(), Template::Diamond);
        assert!(matches!("grid".parse::<Template>(), Err(Error::Config(_))));
    }

    #[test]
    fn template_shapes() {
        let s = make_scenario(Template::TwoLink, 1).unwrap();
        assert_eq!((s.network.num_ods(), s.paths.len()), (1, 1));
        let s = make_scenario(Template::Diamond, 1).unwrap();
        assert_eq!((s.network.num_ods(), s.paths.len()), (1, 2));
        let s = make_scenario(Template::NineZoneCorridor, 1).unwrap();
        assert_eq!(s.network.zones().len(), 9);
        assert!(
            (45..=60).contains(&s.network.num_links()),
            "{}",
            s.network.num_links()
        );
        assert_eq!(s.grid.n_intervals, 288);
        assert_eq!(s.grid.interval_s, 300.0);
        assert!(s.demand.iter().all(|q| *q >= 0.0 && q.fract() == 0.0));
    }

    #[test]
    fn largest_remainder_exact() {
        assert_eq!(largest_remainder(100, &[0.5, 0.5]), vec![50, 50]);
        assert_eq!(largest_remainder(10, &[0.33, 0.33, 0.34]), vec![3, 3, 4]);
        assert_eq!(largest_remainder(1, &[0.5, 0.5]), vec![1, 0]);
        assert_eq!(largest_remainder(7, &[1.0]), vec![7]);
    }

    #[test]
    fn one_vehicle_one_link() {
        let net = build_network(
            strings(&["a", "b"]),
            vec![link("l1", "a", "b", 2.0, 60.0, 3000.0)],
            vec![zone("A", "a", "a"), zone("B", "b", "b")],
            Some(vec![("A".into(), "B".into())]),
        )
        .unwrap();
        let paths = PathSet::from_paths(&net, vec![vec![vec![0]]]).unwrap();
        let grid = TimeGrid::new(300.0, 2).unwrap();
        // 2 miles at 120 mph is 60 s.
        let speed = SpeedField::constant(&net, grid, 120.0).unwrap();
        let sim = simulate(
            &SimInput {
                network: &net,
                paths: &paths,
                speed: &speed,
                demand: &[1.0, 0.0],
                portions: &[1.0, 1.0],
                multiplier: 1.0,
                travel: TravelModel::Integrated,
            },
            SimMode::Deterministic,
            0,
        )
        .unwrap();
        assert_eq!(sim.counts, vec![1.0, 0.0]);
        assert_eq!(sim.vehicles, 1);
    }

    #[test]
    fn stochastic_is_seeded() {
        let s = make_scenario(Template::Diamond, 3).unwrap();
        let a = s.simulate(SimMode::Stochastic, 9).unwrap();
        let b = s.simulate(SimMode::Stochastic, 9).unwrap();
        assert_eq!(a, b);
    }
}
