//! Time discretization, speed-driven travel times, trajectory tracing and
//! dynamic assignment ratio (DAR) construction.
//!
//! Speeds are piecewise constant per (link, interval). A vehicle advances
//! along a link analytically inside each interval, so traversal maps are
//! continuous and strictly increasing in entry time and the FIFO property
//! holds by construction. Past the end of the horizon vehicles continue at
//! free-flow speed.

use std::collections::BTreeMap;
use std::path::Path as FsPath;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assemble::TensorLayout;
use crate::error::{Error, Result};
use crate::network::{Network, PathSet};
use crate::sparse::{CooMatrix, CsrMatrix};

/// Minimum arrival gap enforced when repairing non-FIFO boundary arrivals.
pub const FIFO_REPAIR_GAP: f64 = 1e-6;

/// Equal-length intervals covering (part of) one day.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    /// Interval length ΔH in seconds.
    pub interval_s: f64,
    pub n_intervals: usize,
    /// Offset of interval 0 from midnight, seconds.
    #[serde(default)]
    pub start_offset_s: f64,
}

impl TimeGrid {
    pub fn new(interval_s: f64, n_intervals: usize) -> Result<Self> {
        Self::with_offset(interval_s, n_intervals, 0.0)
    }

    pub fn with_offset(interval_s: f64, n_intervals: usize, start_offset_s: f64) -> Result<Self> {
        let grid = TimeGrid {
            interval_s,
            n_intervals,
            start_offset_s,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.interval_s > 0.0 && self.interval_s.is_finite()) {
            return Err(Error::Config(format!(
                "interval length {} must be positive",
                self.interval_s
            )));
        }
        if self.n_intervals == 0 {
            return Err(Error::Config("grid needs at least one interval".into()));
        }
        if self.horizon() + self.start_offset_s > 86_400.0 + 1e-9 || self.start_offset_s < 0.0 {
            return Err(Error::Config(format!(
                "grid of {} x {} s starting at {} s does not fit in one day",
                self.n_intervals, self.interval_s, self.start_offset_s
            )));
        }
        Ok(())
    }

    /// End of the last interval, seconds from grid start.
    pub fn horizon(&self) -> f64 {
        self.n_intervals as f64 * self.interval_s
    }

    pub fn start(&self, h: usize) -> f64 {
        h as f64 * self.interval_s
    }

    /// Interval containing `t`, or `None` outside `[0, horizon)`.
    pub fn interval_of(&self, t: f64) -> Option<usize> {
        if t < 0.0 || t >= self.horizon() || t.is_nan() {
            return None;
        }
        Some(((t / self.interval_s).floor() as usize).min(self.n_intervals - 1))
    }
}

/// How link traversal times are derived from interval speeds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TravelModel {
    /// Advance position analytically through interval speed changes.
    #[default]
    Integrated,
    /// Length divided by the speed of the interval in which the link is
    /// entered. Can violate FIFO when speeds jump.
    Snapshot,
}

/// Speeds in mph for every (link, interval) of one day.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedField {
    grid: TimeGrid,
    n_links: usize,
    /// `mph[a * N + h]`
    mph: Vec<f64>,
    freeflow: Vec<f64>,
}

impl SpeedField {
    /// `mph` is link-major: entry `a * N + h`.
    pub fn new(network: &Network, grid: TimeGrid, mph: Vec<f64>) -> Result<Self> {
        let n_links = network.num_links();
        if mph.len() != n_links * grid.n_intervals {
            return Err(Error::Shape {
                context: "speed field",
                expected: (n_links, grid.n_intervals),
                actual: (mph.len() / grid.n_intervals.max(1), grid.n_intervals),
            });
        }
        if let Some(i) = mph.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Contract(format!(
                "speed {} mph on link `{}` interval {} must be positive",
                mph[i],
                network.link(i / grid.n_intervals).id,
                i % grid.n_intervals
            )));
        }
        Ok(Self {
            grid,
            n_links,
            mph,
            freeflow: network.links().iter().map(|l| l.freeflow_mph).collect(),
        })
    }

    pub fn constant(network: &Network, grid: TimeGrid, mph: f64) -> Result<Self> {
        Self::new(
            network,
            grid,
            vec![mph; network.num_links() * grid.n_intervals],
        )
    }

    pub fn freeflow(network: &Network, grid: TimeGrid) -> Result<Self> {
        let mph = network
            .links()
            .iter()
            .flat_map(|l| std::iter::repeat_n(l.freeflow_mph, grid.n_intervals))
            .collect();
        Self::new(network, grid, mph)
    }

    /// Entrywise arithmetic mean of several days' speeds.
    pub fn mean(network: &Network, fields: &[&SpeedField]) -> Result<Self> {
        let first = fields
            .first()
            .ok_or_else(|| Error::Contract("mean of zero speed fields".into()))?;
        let mut acc = vec![0.0; first.mph.len()];
        for f in fields {
            if f.mph.len() != acc.len() {
                return Err(Error::Contract("speed fields differ in shape".into()));
            }
            for (a, v) in acc.iter_mut().zip(&f.mph) {
                *a += v;
            }
        }
        let n = fields.len() as f64;
        acc.iter_mut().for_each(|v| *v /= n);
        Self::new(network, first.grid, acc)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_links(&self) -> usize {
        self.n_links
    }

    pub fn speed(&self, link: usize, h: usize) -> f64 {
        self.mph[link * self.grid.n_intervals + h]
    }

    pub fn link_speeds(&self, link: usize) -> &[f64] {
        let n = self.grid.n_intervals;
        &self.mph[link * n..(link + 1) * n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.mph
    }
}

/// Snapshot travel time of `link` for a vehicle entering at `t`: length over
/// the speed of the interval containing `t`, in seconds.
pub fn link_travel_time(field: &SpeedField, network: &Network, link: usize, t: f64) -> Result<f64> {
    let h = field.grid.interval_of(t).ok_or(Error::OutOfRange {
        t,
        horizon: field.grid.horizon(),
    })?;
    Ok(network.link(link).length_miles / field.speed(link, h) * 3600.0)
}

/// Time at which a vehicle entering `link` at `t_enter` reaches its head.
pub fn traverse(
    field: &SpeedField,
    network: &Network,
    link: usize,
    t_enter: f64,
    model: TravelModel,
) -> f64 {
    let length = network.link(link).length_miles;
    let horizon = field.grid.horizon();
    let ff = field.freeflow[link] / 3600.0;
    if model == TravelModel::Snapshot {
        return match field.grid.interval_of(t_enter) {
            Some(h) => t_enter + length / (field.speed(link, h) / 3600.0),
            None => t_enter + length / ff,
        };
    }
    let dh = field.grid.interval_s;
    let mut t = t_enter;
    let mut remaining = length;
    let mut h = match field.grid.interval_of(t) {
        Some(h) => h,
        None if t >= horizon => return t + remaining / ff,
        None => 0,
    };
    loop {
        let v = field.speed(link, h) / 3600.0;
        let end = (h + 1) as f64 * dh;
        let need = remaining / v;
        if t + need <= end {
            return t + need;
        }
        remaining -= v * (end - t);
        t = end;
        h += 1;
        if h >= field.grid.n_intervals {
            return t + remaining / ff;
        }
    }
}

/// Inverse of [`traverse`] under [`TravelModel::Integrated`]: the entry time
/// at which a vehicle reaches the head of `link` at `t_exit`.
pub fn traverse_back(field: &SpeedField, network: &Network, link: usize, t_exit: f64) -> f64 {
    let length = network.link(link).length_miles;
    let horizon = field.grid.horizon();
    let dh = field.grid.interval_s;
    let ff = field.freeflow[link] / 3600.0;
    let mut t = t_exit;
    let mut remaining = length;
    if t > horizon {
        let span = t - horizon;
        if remaining / ff <= span {
            return t - remaining / ff;
        }
        remaining -= ff * span;
        t = horizon;
    }
    // Interval containing the instant just before `t`.
    let mut h =
        ((t / dh).ceil() as isize - 1).clamp(0, field.grid.n_intervals as isize - 1) as usize;
    loop {
        let v = field.speed(link, h) / 3600.0;
        let start = h as f64 * dh;
        if h == 0 {
            return t - remaining / v;
        }
        let span = t - start;
        if remaining / v <= span {
            return t - remaining / v;
        }
        remaining -= v * span;
        t = start;
        h -= 1;
    }
}

/// A vehicle trajectory along one path.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub path: usize,
    pub depart: f64,
    /// Arrival time at the tail of each link on the path; `arrivals[0]` is the
    /// departure time.
    pub arrivals: Vec<f64>,
    /// Arrival time at the head of the last link.
    pub exit: f64,
    /// The vehicle is still on the path at the end of the horizon.
    pub truncated: bool,
    /// Position on the path of the last link entered before the horizon ends.
    pub last_in_horizon: Option<usize>,
}

impl Trajectory {
    pub fn travel_time(&self) -> f64 {
        self.exit - self.depart
    }
}

/// Traces a vehicle departing at `depart` along `links`.
pub fn trace_trajectory(
    path: usize,
    links: &[usize],
    depart: f64,
    field: &SpeedField,
    network: &Network,
    model: TravelModel,
) -> Result<Trajectory> {
    let horizon = field.grid.horizon();
    if !(0.0..=horizon).contains(&depart) {
        return Err(Error::OutOfRange { t: depart, horizon });
    }
    let mut arrivals = Vec::with_capacity(links.len());
    let mut t = depart;
    for &a in links {
        arrivals.push(t);
        t = traverse(field, network, a, t, model);
    }
    let last_in_horizon = arrivals.iter().rposition(|&x| x < horizon);
    Ok(Trajectory {
        path,
        depart,
        arrivals,
        exit: t,
        truncated: t > horizon,
        last_in_horizon,
    })
}

/// How DAR entries are measured from traced trajectories.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DarMethod {
    /// Exact share of uniformly spread departures reaching each arrival
    /// interval, obtained by inverting the arrival map at interval
    /// boundaries. Requires [`TravelModel::Integrated`].
    #[default]
    Exact,
    /// Linear interpolation between the trajectories leaving at the two ends
    /// of each departure interval.
    Boundary,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FifoPolicy {
    /// Clamp out-of-order boundary arrivals and count the repair.
    #[default]
    Repair,
    /// Fail on the first out-of-order arrival.
    Strict,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DarOptions {
    #[serde(default)]
    pub method: DarMethod,
    #[serde(default)]
    pub travel: TravelModel,
    #[serde(default)]
    pub fifo: FifoPolicy,
}

/// Sparse DAR matrix ρ of shape (N·|A|) × (N·Π) plus its layout metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct DarMatrix {
    pub layout: TensorLayout,
    pub interval_s: f64,
    pub day: Option<String>,
    pub matrix: CsrMatrix,
}

/// Side information from DAR construction.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DarStats {
    /// Mean over (path, link, departure interval) slices of the share whose
    /// arrival falls after the horizon.
    pub dropped_fraction: f64,
    pub fifo_repairs: usize,
}

impl DarMatrix {
    pub fn get(&self, path: usize, link: usize, h1: usize, h2: usize) -> f64 {
        self.matrix.get(
            self.layout.link_index(h2, link),
            self.layout.path_index(h1, path),
        )
    }

    /// Σ over arrival intervals of ρ(h1, ·) for one (path, link).
    pub fn slice_sum(&self, path: usize, link: usize, h1: usize) -> f64 {
        (0..self.layout.n_intervals)
            .map(|h2| self.get(path, link, h1, h2))
            .sum()
    }

    fn header(&self) -> BTreeMap<String, String> {
        let mut h = BTreeMap::new();
        h.insert("kind".into(), "dar".into());
        h.insert("n_intervals".into(), self.layout.n_intervals.to_string());
        h.insert("n_links".into(), self.layout.n_links.to_string());
        h.insert("n_paths".into(), self.layout.n_paths.to_string());
        h.insert("n_ods".into(), self.layout.n_ods.to_string());
        h.insert("interval_s".into(), self.interval_s.to_string());
        h.insert("day".into(), self.day.clone().unwrap_or_else(|| "-".into()));
        h
    }

    pub fn save(&self, path: &FsPath) -> Result<()> {
        self.matrix.write_triplets(path, &self.header())
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        let (matrix, header) = CsrMatrix::read_triplets(path)?;
        let field = |key: &str| -> Result<&String> {
            header
                .get(key)
                .ok_or_else(|| Error::parse(path, format!("missing header `{key}`")))
        };
        let num = |key: &str| -> Result<usize> {
            field(key)?
                .parse()
                .map_err(|_| Error::parse(path, format!("bad header `{key}`")))
        };
        let layout = TensorLayout::new(
            num("n_intervals")?,
            num("n_links")?,
            num("n_ods")?,
            num("n_paths")?,
        );
        if matrix.shape() != (layout.link_len(), layout.path_len()) {
            return Err(Error::parse(path, "matrix shape disagrees with header"));
        }
        let interval_s = field("interval_s")?
            .parse()
            .map_err(|_| Error::parse(path, "bad header `interval_s`"))?;
        let day = field("day")?;
        Ok(Self {
            layout,
            interval_s,
            day: (day != "-").then(|| day.clone()),
            matrix,
        })
    }
}

/// Trace boundary departures t = 0, ΔH, ..., NΔH along one path.
fn boundary_arrivals(
    links: &[usize],
    field: &SpeedField,
    network: &Network,
    model: TravelModel,
) -> Vec<Vec<f64>> {
    let n = field.grid.n_intervals;
    (0..=n)
        .map(|j| {
            let mut t = field.grid.start(j);
            links
                .iter()
                .map(|&a| {
                    let at = t;
                    t = traverse(field, network, a, t, model);
                    at
                })
                .collect()
        })
        .collect()
}

struct PathDar {
    triplets: Vec<(usize, usize, f64)>,
    dropped: f64,
    slices: usize,
    repairs: usize,
}

fn path_dar(
    k: usize,
    links: &[usize],
    layout: &TensorLayout,
    field: &SpeedField,
    network: &Network,
    options: &DarOptions,
) -> Result<PathDar> {
    let grid = field.grid;
    let n = grid.n_intervals;
    let dh = grid.interval_s;
    let mut arr = boundary_arrivals(links, field, network, options.travel);
    let mut repairs = 0;
    for i in 0..links.len() {
        for j in 0..n {
            let (earlier, later) = (arr[j][i], arr[j + 1][i]);
            if later < earlier + FIFO_REPAIR_GAP {
                match options.fifo {
                    FifoPolicy::Strict => {
                        return Err(Error::Fifo {
                            path: k,
                            interval: j,
                            link_pos: i,
                            earlier,
                            later,
                        })
                    }
                    FifoPolicy::Repair => {
                        arr[j + 1][i] = earlier + FIFO_REPAIR_GAP;
                        repairs += 1;
                    }
                }
            }
        }
    }

    let mut out = PathDar {
        triplets: Vec::new(),
        dropped: 0.0,
        slices: 0,
        repairs,
    };
    let mut shares: Vec<(usize, f64)> = Vec::new();
    for h1 in 0..n {
        let (t_start, t_end) = (grid.start(h1), grid.start(h1 + 1));
        for (i, &a) in links.iter().enumerate() {
            let (s, e) = (arr[h1][i], arr[h1 + 1][i]);
            shares.clear();
            if i == 0 {
                shares.push((h1, 1.0));
            } else {
                let first = (s / dh).floor() as usize;
                let mut h2 = first;
                match options.method {
                    DarMethod::Boundary => {
                        let width = e - s;
                        while h2 < n && (h2 as f64) * dh < e {
                            let lo = s.max(h2 as f64 * dh);
                            let hi = e.min((h2 + 1) as f64 * dh);
                            if hi > lo {
                                shares.push((h2, (hi - lo) / width));
                            }
                            h2 += 1;
                        }
                    }
                    DarMethod::Exact => {
                        // Departure time whose arrival at this link's tail is `b`.
                        let invert = |b: f64| -> f64 {
                            let mut t = b;
                            for &l in links[..i].iter().rev() {
                                t = traverse_back(field, network, l, t);
                            }
                            t.clamp(t_start, t_end)
                        };
                        let mut lower = t_start;
                        while h2 < n && (h2 as f64) * dh < e {
                            let boundary = (h2 + 1) as f64 * dh;
                            let upper = if boundary >= e {
                                t_end
                            } else {
                                invert(boundary).max(lower)
                            };
                            if upper > lower {
                                shares.push((h2, (upper - lower) / dh));
                            }
                            lower = upper;
                            h2 += 1;
                        }
                    }
                }
            }
            let kept: f64 = shares.iter().map(|&(_, v)| v).sum();
            out.dropped += (1.0 - kept).max(0.0);
            out.slices += 1;
            let col = layout.path_index(h1, k);
            for &(h2, v) in &shares {
                if v > 0.0 {
                    out.triplets
                        .push((layout.link_index(h2, a), col, v.min(1.0)));
                }
            }
        }
    }
    Ok(out)
}

/// Builds the DAR matrix for one day.
///
/// Work is split over paths; each path contributes a disjoint set of
/// columns, merged in path order.
pub fn build_dar(
    paths: &PathSet,
    network: &Network,
    field: &SpeedField,
    options: &DarOptions,
    day: Option<String>,
) -> Result<(DarMatrix, DarStats)> {
    if options.method == DarMethod::Exact && options.travel != TravelModel::Integrated {
        return Err(Error::Config(
            "exact DAR construction requires the integrated travel model".into(),
        ));
    }
    if field.n_links() != network.num_links() {
        return Err(Error::Contract("speed field does not match network".into()));
    }
    let grid = *field.grid();
    let layout = TensorLayout::new(
        grid.n_intervals,
        network.num_links(),
        network.num_ods(),
        paths.len(),
    );
    let per_path: Vec<PathDar> = paths
        .paths()
        .par_iter()
        .enumerate()
        .map(|(k, p)| path_dar(k, &p.links, &layout, field, network, options))
        .collect::<Result<_>>()?;

    let nnz = per_path.iter().map(|p| p.triplets.len()).sum();
    let mut coo = CooMatrix::with_capacity(layout.link_len(), layout.path_len(), nnz);
    let (mut dropped, mut slices, mut repairs) = (0.0, 0usize, 0usize);
    for p in per_path {
        for (r, c, v) in p.triplets {
            coo.push(r, c, v);
        }
        dropped += p.dropped;
        slices += p.slices;
        repairs += p.repairs;
    }
    let stats = DarStats {
        dropped_fraction: if slices > 0 {
            dropped / slices as f64
        } else {
            0.0
        },
        fifo_repairs: repairs,
    };
    if repairs > 0 {
        warn!(
            "DAR {}: repaired {repairs} non-FIFO boundary arrivals",
            day.as_deref().unwrap_or("-")
        );
    }
    debug!(
        "DAR {}: {} entries, {:.4} of slice mass beyond horizon",
        day.as_deref().unwrap_or("-"),
        nnz,
        stats.dropped_fraction
    );
    Ok((
        DarMatrix {
            layout,
            interval_s: grid.interval_s,
            day,
            matrix: coo.to_csr(),
        },
        stats,
    ))
}
