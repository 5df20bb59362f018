//! Count and speed CSV ingestion, sensor deduplication and imputation.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Network;
use crate::patterns::DayMatrix;
use crate::timeflow::{SpeedField, TimeGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Count,
    Speed,
}

impl Kind {
    pub fn value_column(self) -> &'static str {
        match self {
            Kind::Count => "count",
            Kind::Speed => "mph",
        }
    }
}

/// One parsed input row. `value` is `None` for an explicit missing marker.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub sensor: Option<String>,
    pub link: usize,
    pub date: NaiveDate,
    pub interval: usize,
    pub value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejected {
    pub file: PathBuf,
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct Parsed {
    pub records: Vec<Record>,
    pub rejected: Vec<Rejected>,
}

/// `sensor_id → link_id` pairs.
pub fn load_sensor_map(path: &Path) -> Result<HashMap<String, String>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut map = HashMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        match (rec.get(0), rec.get(1)) {
            (Some(s), Some(l)) if !s.is_empty() && !l.is_empty() => {
                map.insert(s.to_string(), l.to_string());
            }
            _ => {
                return Err(Error::parse(
                    path,
                    format!("line {}: expected sensor_id,link_id", i + 2),
                ))
            }
        }
    }
    Ok(map)
}

fn parse_value(s: &str) -> std::result::Result<Option<f64>, String> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    let v: f64 = s.parse().map_err(|_| format!("bad value `{s}`"))?;
    if !v.is_finite() || v < 0.0 {
        return Err(format!("value {v} must be finite and nonnegative"));
    }
    Ok(Some(v))
}

/// Reads one observation CSV. The first column is `link_id`, or
/// `sensor_id` resolved through `sensor_map`. Bad rows are collected rather
/// than aborting the file.
pub fn parse_observations(
    path: &Path,
    kind: Kind,
    network: &Network,
    sensor_map: Option<&HashMap<String, String>>,
    n_intervals: usize,
) -> Result<Parsed> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    let by_sensor = match header.get(0) {
        Some("sensor_id") => true,
        Some("link_id") => false,
        other => {
            return Err(Error::parse(
                path,
                format!("first column must be link_id or sensor_id, found {other:?}"),
            ))
        }
    };
    if header.len() != 4 || header.get(3) != Some(kind.value_column()) {
        return Err(Error::parse(
            path,
            format!("expected columns id,date,interval,{}", kind.value_column()),
        ));
    }
    if by_sensor && sensor_map.is_none() {
        return Err(Error::Config(format!(
            "{} is keyed by sensor but no sensor map was given",
            path.display()
        )));
    }
    let mut out = Parsed::default();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let reject = |reason: String| Rejected {
            file: path.to_path_buf(),
            line,
            reason,
        };
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                out.rejected.push(reject(e.to_string()));
                continue;
            }
        };
        if rec.len() != 4 {
            out.rejected
                .push(reject(format!("expected 4 fields, found {}", rec.len())));
            continue;
        }
        let id = &rec[0];
        let (sensor, link_id) = if by_sensor {
            match sensor_map.and_then(|m| m.get(id)) {
                Some(l) => (Some(id.to_string()), l.as_str()),
                None => {
                    log::warn!(
                        "{}:{line}: sensor `{id}` has no link mapping",
                        path.display()
                    );
                    out.rejected
                        .push(reject(format!("sensor `{id}` has no link mapping")));
                    continue;
                }
            }
        } else {
            (None, id)
        };
        let Ok(link) = network.link_index(link_id) else {
            out.rejected
                .push(reject(format!("unknown link `{link_id}`")));
            continue;
        };
        let Ok(date) = rec[1].parse::<NaiveDate>() else {
            out.rejected.push(reject(format!("bad date `{}`", &rec[1])));
            continue;
        };
        let interval = match rec[2].parse::<usize>() {
            Ok(h) if h < n_intervals => h,
            _ => {
                out.rejected.push(reject(format!(
                    "interval `{}` outside [0, {n_intervals})",
                    &rec[2]
                )));
                continue;
            }
        };
        match parse_value(&rec[3]) {
            Ok(value) => out.records.push(Record {
                sensor,
                link,
                date,
                interval,
                value,
            }),
            Err(reason) => out.rejected.push(reject(reason)),
        }
    }
    if !out.rejected.is_empty() {
        log::warn!(
            "{}: rejected {} malformed rows",
            path.display(),
            out.rejected.len()
        );
    }
    Ok(out)
}

/// Parses several files in parallel and concatenates them in input order.
pub fn parse_many(
    paths: &[PathBuf],
    kind: Kind,
    network: &Network,
    sensor_map: Option<&HashMap<String, String>>,
    n_intervals: usize,
) -> Result<Parsed> {
    let parts: Vec<Parsed> = paths
        .par_iter()
        .map(|p| parse_observations(p, kind, network, sensor_map, n_intervals))
        .collect::<Result<_>>()?;
    let mut all = Parsed::default();
    for p in parts {
        all.records.extend(p.records);
        all.rejected.extend(p.rejected);
    }
    Ok(all)
}

/// Dense (date, link, interval) cube; missing cells are NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationTable {
    pub kind: Kind,
    pub n_intervals: usize,
    /// Observed network link indices, ascending.
    pub links: Vec<usize>,
    /// Ascending.
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

impl ObservationTable {
    fn idx(&self, d: usize, l: usize, h: usize) -> usize {
        (d * self.links.len() + l) * self.n_intervals + h
    }

    pub fn get(&self, d: usize, l: usize, h: usize) -> f64 {
        self.values[self.idx(d, l, h)]
    }

    pub fn series(&self, d: usize, l: usize) -> &[f64] {
        let s = self.idx(d, l, 0);
        &self.values[s..s + self.n_intervals]
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_nan()).count()
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// One record per present cell, for re-ingestion or export.
    pub fn to_records(&self) -> Vec<Record> {
        let mut out = Vec::new();
        for (d, &date) in self.dates.iter().enumerate() {
            for (l, &link) in self.links.iter().enumerate() {
                for (h, &v) in self.series(d, l).iter().enumerate() {
                    if !v.is_nan() {
                        out.push(Record {
                            sensor: None,
                            link,
                            date,
                            interval: h,
                            value: Some(v),
                        });
                    }
                }
            }
        }
        out
    }

    pub fn select_dates(&self, keep: &[NaiveDate]) -> ObservationTable {
        let mut t = ObservationTable {
            kind: self.kind,
            n_intervals: self.n_intervals,
            links: self.links.clone(),
            dates: Vec::new(),
            values: Vec::new(),
        };
        for (d, date) in self.dates.iter().enumerate() {
            if keep.contains(date) {
                t.dates.push(*date);
                let s = self.idx(d, 0, 0);
                t.values
                    .extend_from_slice(&self.values[s..s + self.links.len() * self.n_intervals]);
            }
        }
        t
    }

    /// Writes `link_id,date,interval,<count|mph>` rows.
    pub fn save_csv(&self, path: &Path, network: &Network) -> Result<()> {
        write_records(path, self.kind, &self.to_records(), network)
    }

    /// Observed values for `date` ordered interval-major over `self.links`,
    /// matching the rows of the observed least-squares system.
    pub fn observation_vector(&self, date: NaiveDate) -> Option<Vec<f64>> {
        let d = self.date_index(date)?;
        let mut y = Vec::with_capacity(self.n_intervals * self.links.len());
        for h in 0..self.n_intervals {
            for l in 0..self.links.len() {
                y.push(self.get(d, l, h));
            }
        }
        Some(y)
    }

    /// Speed field for one date. Links without speed data run at free-flow
    /// speed.
    pub fn speed_field(
        &self,
        date: NaiveDate,
        network: &Network,
        grid: TimeGrid,
    ) -> Result<SpeedField> {
        if self.kind != Kind::Speed {
            return Err(Error::Contract(
                "speed field requested from a count table".into(),
            ));
        }
        let d = self.date_index(date).ok_or_else(|| Error::Lookup {
            kind: "date",
            id: date.to_string(),
        })?;
        let n = grid.n_intervals;
        let mut mph = Vec::with_capacity(network.num_links() * n);
        for a in 0..network.num_links() {
            match self.links.binary_search(&a) {
                Ok(l) => mph.extend(self.series(d, l).iter().map(|&v| {
                    if v > 0.0 {
                        v
                    } else {
                        network.link(a).freeflow_mph
                    }
                })),
                Err(_) => mph.extend(std::iter::repeat_n(network.link(a).freeflow_mph, n)),
            }
        }
        SpeedField::new(network, grid, mph)
    }
}

/// Links in `network` that have no column in `table`.
pub fn unobserved_links(table: &ObservationTable, network: &Network) -> Vec<usize> {
    (0..network.num_links())
        .filter(|a| table.links.binary_search(a).is_err())
        .collect()
}

pub fn write_records(path: &Path, kind: Kind, records: &[Record], network: &Network) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["link_id", "date", "interval", kind.value_column()])?;
    for r in records {
        w.write_record([
            network.link(r.link).id.clone(),
            r.date.to_string(),
            r.interval.to_string(),
            r.value.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Averages co-located sensors into one value per (link, date, interval).
/// Cells whose only records are missing markers stay missing.
pub fn dedup_sensors(kind: Kind, n_intervals: usize, records: &[Record]) -> ObservationTable {
    let mut links: Vec<usize> = records.iter().map(|r| r.link).collect();
    links.sort_unstable();
    links.dedup();
    let mut dates: Vec<NaiveDate> = records.iter().map(|r| r.date).collect();
    dates.sort_unstable();
    dates.dedup();
    let cells = dates.len() * links.len() * n_intervals;
    let mut sum = vec![0.0; cells];
    let mut count = vec![0u32; cells];
    for r in records {
        let d = dates.binary_search(&r.date).unwrap();
        let l = links.binary_search(&r.link).unwrap();
        let i = (d * links.len() + l) * n_intervals + r.interval;
        if let Some(v) = r.value {
            sum[i] += v;
            count[i] += 1;
        }
    }
    let values = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
        .collect();
    ObservationTable {
        kind,
        n_intervals,
        links,
        dates,
        values,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputeMethod {
    /// Linear interpolation between the observed neighbors in time.
    TimeNeighbor,
    /// Mean of the same interval on the adjacent calendar dates.
    DayNeighbor,
    /// Copy of the nearest observed value on the same day (runs touching the
    /// start or end of the day).
    NearestValue,
    /// Same interval on the nearest date that has it.
    NearestDay,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImputedCell {
    pub link: usize,
    pub date: NaiveDate,
    pub interval: usize,
    pub value: f64,
    pub method: ImputeMethod,
    /// (date, interval) of the source cells.
    pub sources: Vec<(NaiveDate, usize)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImputationLog {
    pub cells: Vec<ImputedCell>,
    pub dropped_dates: Vec<NaiveDate>,
}

impl ImputationLog {
    pub fn save_csv(&self, path: &Path, network: &Network) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["link_id", "date", "interval", "value", "method", "sources"])?;
        for c in &self.cells {
            let method = match c.method {
                ImputeMethod::TimeNeighbor => "time_neighbor",
                ImputeMethod::DayNeighbor => "day_neighbor",
                ImputeMethod::NearestValue => "nearest_value",
                ImputeMethod::NearestDay => "nearest_day",
            };
            let sources: Vec<String> = c.sources.iter().map(|(d, h)| format!("{d}@{h}")).collect();
            w.write_record([
                network.link(c.link).id.clone(),
                c.date.to_string(),
                c.interval.to_string(),
                c.value.to_string(),
                method.to_string(),
                sources.join(" "),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputeOptions {
    /// Longest run (in intervals) filled by time interpolation.
    pub max_time_gap: usize,
    /// Dates whose share of missing cells exceeds this are dropped.
    pub drop_fraction: f64,
}

impl Default for ImputeOptions {
    fn default() -> Self {
        Self {
            max_time_gap: 6,
            drop_fraction: 0.5,
        }
    }
}

/// Fills every missing cell. Short interior gaps are interpolated in time;
/// longer gaps take the mean of the adjacent calendar dates. Dates with too
/// many missing cells are removed first.
pub fn impute(
    table: &ObservationTable,
    opts: &ImputeOptions,
) -> Result<(ObservationTable, ImputationLog)> {
    let mut log_out = ImputationLog::default();
    let per_date = table.links.len() * table.n_intervals;
    let mut keep = Vec::new();
    for (d, &date) in table.dates.iter().enumerate() {
        let missing = table.values[d * per_date..(d + 1) * per_date]
            .iter()
            .filter(|v| v.is_nan())
            .count();
        if per_date > 0 && missing as f64 / per_date as f64 > opts.drop_fraction {
            log::warn!(
                "dropping {date} for {:?}: {missing} of {per_date} cells missing",
                table.kind
            );
            log_out.dropped_dates.push(date);
        } else {
            keep.push(date);
        }
    }
    let src = table.select_dates(&keep);
    let mut out = src.clone();
    let n = src.n_intervals;
    let date_at = |d: usize| src.dates[d];

    for d in 0..src.dates.len() {
        for l in 0..src.links.len() {
            let series = src.series(d, l);
            let mut h = 0;
            while h < n {
                if !series[h].is_nan() {
                    h += 1;
                    continue;
                }
                let s = h;
                while h < n && series[h].is_nan() {
                    h += 1;
                }
                let e = h;
                let interior = s > 0 && e < n;
                for t in s..e {
                    let cell = if interior && e - s <= opts.max_time_gap {
                        time_neighbor(series, s, e, t, date_at(d))
                    } else {
                        day_neighbor(&src, d, l, t)
                            .or_else(|| {
                                interior.then(|| time_neighbor(series, s, e, t, date_at(d)))
                            })
                            .or_else(|| nearest_value(series, s, e, t, date_at(d)))
                            .or_else(|| nearest_day(&src, d, l, t))
                            .ok_or_else(|| {
                                Error::Contract(format!(
                                    "no data anywhere for link {} interval {t}",
                                    src.links[l]
                                ))
                            })?
                    };
                    let (value, method, sources) = cell;
                    let i = out.idx(d, l, t);
                    out.values[i] = value;
                    log_out.cells.push(ImputedCell {
                        link: src.links[l],
                        date: date_at(d),
                        interval: t,
                        value,
                        method,
                        sources,
                    });
                }
            }
        }
    }
    if !log_out.cells.is_empty() {
        let mut by_method: BTreeMap<String, usize> = BTreeMap::new();
        for c in &log_out.cells {
            *by_method.entry(format!("{:?}", c.method)).or_default() += 1;
        }
        log::info!(
            "{:?}: imputed {} cells {by_method:?}",
            table.kind,
            log_out.cells.len()
        );
    }
    Ok((out, log_out))
}

type Fill = (f64, ImputeMethod, Vec<(NaiveDate, usize)>);

fn time_neighbor(series: &[f64], s: usize, e: usize, t: usize, date: NaiveDate) -> Fill {
    let (a, b) = (series[s - 1], series[e]);
    let w = (t + 1 - s) as f64 / (e + 1 - s) as f64;
    (
        a + w * (b - a),
        ImputeMethod::TimeNeighbor,
        vec![(date, s - 1), (date, e)],
    )
}

fn day_neighbor(src: &ObservationTable, d: usize, l: usize, t: usize) -> Option<Fill> {
    let date = src.dates[d];
    let mut vals = Vec::new();
    let mut sources = Vec::new();
    for nd in [date.pred_opt(), date.succ_opt()].into_iter().flatten() {
        if let Some(di) = src.date_index(nd) {
            let v = src.get(di, l, t);
            if !v.is_nan() {
                vals.push(v);
                sources.push((nd, t));
            }
        }
    }
    if vals.is_empty() {
        return None;
    }
    Some((
        vals.iter().sum::<f64>() / vals.len() as f64,
        ImputeMethod::DayNeighbor,
        sources,
    ))
}

fn nearest_value(series: &[f64], s: usize, e: usize, t: usize, date: NaiveDate) -> Option<Fill> {
    let before = (s > 0).then(|| s - 1);
    let after = (e < series.len()).then_some(e);
    let pick = match (before, after) {
        (Some(b), Some(a)) => {
            if t - b <= a - t {
                b
            } else {
                a
            }
        }
        (Some(b), None) => b,
        (None, Some(a)) => a,
        (None, None) => return None,
    };
    Some((series[pick], ImputeMethod::NearestValue, vec![(date, pick)]))
}

fn nearest_day(src: &ObservationTable, d: usize, l: usize, t: usize) -> Option<Fill> {
    let n = src.dates.len();
    for off in 1..n {
        for cand in [d.checked_sub(off), (d + off < n).then_some(d + off)]
            .into_iter()
            .flatten()
        {
            let v = src.get(cand, l, t);
            if !v.is_nan() {
                return Some((v, ImputeMethod::NearestDay, vec![(src.dates[cand], t)]));
            }
        }
    }
    None
}

/// Rows ordered by date; column `h * O + o` for observed link `o`.
pub fn day_matrix(table: &ObservationTable) -> Result<DayMatrix> {
    let o = table.links.len();
    let n = table.n_intervals;
    let mut values = Vec::with_capacity(table.values.len());
    for d in 0..table.dates.len() {
        for h in 0..n {
            for l in 0..o {
                values.push(table.get(d, l, h));
            }
        }
    }
    DayMatrix::new(table.dates.clone(), n, o, values)
}

/// Inverse of [`day_matrix`].
pub fn table_from_day_matrix(
    kind: Kind,
    links: Vec<usize>,
    m: &DayMatrix,
) -> Result<ObservationTable> {
    if links.len() != m.n_locations {
        return Err(Error::Structural(format!(
            "day matrix has {} locations but {} links were given",
            m.n_locations,
            links.len()
        )));
    }
    let mut t = ObservationTable {
        kind,
        n_intervals: m.n_intervals,
        links,
        dates: m.dates.clone(),
        values: vec![f64::NAN; m.values.len()],
    };
    for d in 0..m.n_days() {
        for h in 0..m.n_intervals {
            for l in 0..m.n_locations {
                let i = t.idx(d, l, h);
                t.values[i] = m.get(d, h, l);
            }
        }
    }
    Ok(t)
}

/// Day matrix over several tables sharing dates (e.g. counts and speeds).
/// Fails when tables disagree on their date sets.
pub fn joint_day_matrix(tables: &[&ObservationTable]) -> Result<DayMatrix> {
    let first = tables
        .first()
        .ok_or_else(|| Error::Contract("no tables given".into()))?;
    if tables
        .iter()
        .any(|t| t.dates != first.dates || t.n_intervals != first.n_intervals)
    {
        return Err(Error::Structural(
            "tables cover different dates or grids".into(),
        ));
    }
    let o: usize = tables.iter().map(|t| t.links.len()).sum();
    let mut values = Vec::with_capacity(first.dates.len() * first.n_intervals * o);
    for d in 0..first.dates.len() {
        for h in 0..first.n_intervals {
            for t in tables {
                for l in 0..t.links.len() {
                    values.push(t.get(d, l, h));
                }
            }
        }
    }
    DayMatrix::new(first.dates.clone(), first.n_intervals, o, values)
}
