//! Aggregations of per-day OD estimates: weekday/weekend profiles, monthly
//! totals, OD groups, correlation between OD pairs and holiday effects.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::Serialize;

use super::config::ReportConfig;
use crate::error::{Error, Result};
use crate::svg;

/// Estimates loaded back from `od_estimates/`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EstimateSet {
    pub dates: Vec<NaiveDate>,
    pub ods: Vec<String>,
    pub n_intervals: usize,
    /// `[date][od][interval]`, flattened.
    pub values: Vec<f64>,
}

impl EstimateSet {
    pub fn get(&self, d: usize, od: usize, h: usize) -> f64 {
        self.values[(d * self.ods.len() + od) * self.n_intervals + h]
    }

    pub fn daily_total(&self, d: usize, od: usize) -> f64 {
        (0..self.n_intervals).map(|h| self.get(d, od, h)).sum()
    }

    /// Reads every `<date>.csv` in `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let mut files: Vec<(NaiveDate, std::path::PathBuf)> = Vec::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("csv") {
                continue;
            }
            if let Some(date) = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse().ok())
            {
                files.push((date, path));
            }
        }
        files.sort();
        if files.is_empty() {
            return Err(Error::Contract(format!(
                "no OD estimates found in {}",
                dir.display()
            )));
        }
        let mut set = EstimateSet::default();
        for (date, path) in files {
            let mut per_od: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
            let mut order: Vec<String> = Vec::new();
            let mut r = csv::Reader::from_path(&path)?;
            for (i, rec) in r.records().enumerate() {
                let rec = rec?;
                let bad = || Error::parse(&path, format!("line {}: malformed estimate row", i + 2));
                let od = rec.get(0).ok_or_else(bad)?.to_string();
                let h: usize = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
                let v: f64 = rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
                if !per_od.contains_key(&od) {
                    order.push(od.clone());
                }
                per_od.entry(od).or_default().push((h, v));
            }
            let n = per_od
                .values()
                .flat_map(|v| v.iter().map(|p| p.0 + 1))
                .max()
                .unwrap_or(0);
            if set.dates.is_empty() {
                set.ods = order.clone();
                set.n_intervals = n;
            } else if order != set.ods || n != set.n_intervals {
                return Err(Error::parse(
                    &path,
                    "OD pairs or intervals differ from earlier days",
                ));
            }
            for od in &set.ods {
                let mut row = vec![0.0; n];
                for &(h, v) in &per_od[od] {
                    row[h] = v;
                }
                set.values.extend(row);
            }
            set.dates.push(date);
        }
        Ok(set)
    }
}

fn is_weekend(d: NaiveDate) -> bool {
    matches!(d.weekday(), Weekday::Sat | Weekday::Sun)
}

/// Pearson correlation; `None` when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len());
    if n < 2 {
        return None;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma).powi(2);
        sbb += (b[i] - mb).powi(2);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

#[derive(Clone, Debug, Serialize)]
pub struct HolidayRow {
    pub date: NaiveDate,
    pub total: f64,
    /// Mean total over non-holiday days with the same weekday.
    pub baseline: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReportSummary {
    pub days: usize,
    pub weekday_days: usize,
    pub weekend_days: usize,
    pub holidays: Vec<HolidayRow>,
}

fn mean_profile(set: &EstimateSet, days: &[usize], od: usize) -> Vec<f64> {
    let mut out = vec![0.0; set.n_intervals];
    if days.is_empty() {
        return out;
    }
    for &d in days {
        for (h, o) in out.iter_mut().enumerate() {
            *o += set.get(d, od, h);
        }
    }
    out.iter_mut().for_each(|v| *v /= days.len() as f64);
    out
}

/// Writes the aggregate tables and charts under `<out>/report/`.
pub fn build_report(out: &Path, cfg: &ReportConfig) -> Result<ReportSummary> {
    let set = EstimateSet::load(&out.join("od_estimates"))?;
    let dir = out.join("report");
    std::fs::create_dir_all(&dir)?;
    let n = set.n_intervals;
    let all: Vec<usize> = (0..set.dates.len()).collect();
    let (weekend, weekday): (Vec<usize>, Vec<usize>) =
        all.iter().partition(|&&d| is_weekend(set.dates[d]));

    // Weekday and weekend mean profiles per OD.
    let mut w = csv::Writer::from_path(dir.join("profiles.csv"))?;
    w.write_record(["od", "interval", "weekday", "weekend", "all"])?;
    let mut total_wd = vec![0.0; n];
    let mut total_we = vec![0.0; n];
    let mut heat = Vec::with_capacity(set.ods.len() * n);
    for (od, label) in set.ods.iter().enumerate() {
        let wd = mean_profile(&set, &weekday, od);
        let we = mean_profile(&set, &weekend, od);
        let al = mean_profile(&set, &all, od);
        for h in 0..n {
            w.write_record([
                label.clone(),
                h.to_string(),
                wd[h].to_string(),
                we[h].to_string(),
                al[h].to_string(),
            ])?;
            total_wd[h] += wd[h];
            total_we[h] += we[h];
        }
        heat.extend(al);
    }
    w.flush()?;
    let mut series = Vec::new();
    if !weekday.is_empty() {
        series.push(svg::Series {
            name: "weekday",
            points: total_wd
                .iter()
                .enumerate()
                .map(|(h, v)| (h as f64, *v))
                .collect(),
        });
    }
    if !weekend.is_empty() {
        series.push(svg::Series {
            name: "weekend",
            points: total_we
                .iter()
                .enumerate()
                .map(|(h, v)| (h as f64, *v))
                .collect(),
        });
    }
    svg::save(
        &dir.join("profiles.svg"),
        &svg::line_chart(
            "Mean total demand",
            "interval",
            "vehicles",
            &series,
            svg::Scale::Linear,
        ),
    )?;
    svg::save(
        &dir.join("od_heatmap.svg"),
        &svg::heatmap(
            "Mean demand by OD and interval",
            set.ods.len(),
            n,
            &heat,
            &set.ods,
        ),
    )?;

    // Mean daily total per OD and month.
    let mut months: BTreeMap<(i32, u32), Vec<usize>> = BTreeMap::new();
    for (d, date) in set.dates.iter().enumerate() {
        months
            .entry((date.year(), date.month()))
            .or_default()
            .push(d);
    }
    let mut w = csv::Writer::from_path(dir.join("monthly.csv"))?;
    w.write_record(["month", "od", "days", "mean_daily_vehicles"])?;
    for ((y, m), days) in &months {
        for (od, label) in set.ods.iter().enumerate() {
            let mean =
                days.iter().map(|&d| set.daily_total(d, od)).sum::<f64>() / days.len() as f64;
            w.write_record([
                format!("{y}-{m:02}"),
                label.clone(),
                days.len().to_string(),
                mean.to_string(),
            ])?;
        }
    }
    w.flush()?;

    // OD groups.
    if !cfg.od_groups.is_empty() {
        let mut w = csv::Writer::from_path(dir.join("groups.csv"))?;
        w.write_record(["group", "interval", "weekday", "weekend"])?;
        let mut labels = Vec::new();
        let mut heat = Vec::new();
        for (name, members) in &cfg.od_groups {
            let idx: Vec<usize> = members
                .iter()
                .map(|m| {
                    set.ods
                        .iter()
                        .position(|o| o == m)
                        .ok_or_else(|| Error::Lookup {
                            kind: "od pair",
                            id: m.clone(),
                        })
                })
                .collect::<Result<_>>()?;
            let mut wd = vec![0.0; n];
            let mut we = vec![0.0; n];
            for &od in &idx {
                for (acc, v) in wd.iter_mut().zip(mean_profile(&set, &weekday, od)) {
                    *acc += v;
                }
                for (acc, v) in we.iter_mut().zip(mean_profile(&set, &weekend, od)) {
                    *acc += v;
                }
            }
            for h in 0..n {
                w.write_record([
                    name.clone(),
                    h.to_string(),
                    wd[h].to_string(),
                    we[h].to_string(),
                ])?;
            }
            labels.push(name.clone());
            heat.extend(wd);
        }
        w.flush()?;
        svg::save(
            &dir.join("groups_heatmap.svg"),
            &svg::heatmap(
                "Weekday demand by OD group",
                labels.len(),
                n,
                &heat,
                &labels,
            ),
        )?;
    }

    // Day-to-day correlation of OD daily totals.
    let k = set.ods.len();
    let totals: Vec<Vec<f64>> = (0..k)
        .map(|od| all.iter().map(|&d| set.daily_total(d, od)).collect())
        .collect();
    let mut corr = vec![f64::NAN; k * k];
    let mut w = csv::Writer::from_path(dir.join("od_correlation.csv"))?;
    w.write_record(["od_a", "od_b", "pearson"])?;
    for a in 0..k {
        for b in 0..k {
            let r = pearson(&totals[a], &totals[b]);
            corr[a * k + b] = r.unwrap_or(f64::NAN);
            w.write_record([
                set.ods[a].clone(),
                set.ods[b].clone(),
                r.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    svg::save(
        &dir.join("od_correlation.svg"),
        &svg::heatmap("Correlation of OD daily totals", k, k, &corr, &set.ods),
    )?;
    // Same, over the mean time-of-day profiles.
    let profiles: Vec<Vec<f64>> = (0..k).map(|od| mean_profile(&set, &all, od)).collect();
    let mut w = csv::Writer::from_path(dir.join("od_profile_correlation.csv"))?;
    w.write_record(["od_a", "od_b", "pearson"])?;
    for a in 0..k {
        for b in 0..k {
            let r = pearson(&profiles[a], &profiles[b]);
            corr[a * k + b] = r.unwrap_or(f64::NAN);
            w.write_record([
                set.ods[a].clone(),
                set.ods[b].clone(),
                r.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    svg::save(
        &dir.join("od_profile_correlation.svg"),
        &svg::heatmap(
            "Correlation of OD time-of-day profiles",
            k,
            k,
            &corr,
            &set.ods,
        ),
    )?;

    // Holidays against same-weekday baselines.
    let day_total = |d: usize| (0..k).map(|od| set.daily_total(d, od)).sum::<f64>();
    let mut holidays = Vec::new();
    for h in &cfg.holidays {
        let Some(d) = set.dates.iter().position(|x| x == h) else {
            continue;
        };
        let peers: Vec<usize> = all
            .iter()
            .copied()
            .filter(|&e| {
                set.dates[e].weekday() == h.weekday() && !cfg.holidays.contains(&set.dates[e])
            })
            .collect();
        let baseline = (!peers.is_empty())
            .then(|| peers.iter().map(|&e| day_total(e)).sum::<f64>() / peers.len() as f64);
        holidays.push(HolidayRow {
            date: *h,
            total: day_total(d),
            baseline,
        });
    }
    let mut w = csv::Writer::from_path(dir.join("holidays.csv"))?;
    w.write_record(["date", "total", "baseline"])?;
    for row in &holidays {
        w.write_record([
            row.date.to_string(),
            row.total.to_string(),
            row.baseline.map(|b| b.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;

    let summary = ReportSummary {
        days: set.dates.len(),
        weekday_days: weekday.len(),
        weekend_days: weekend.len(),
        holidays,
    };
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, date: &str, rows: &[(&str, usize, f64)]) {
        let mut w = csv::Writer::from_path(dir.join(format!("{date}.csv"))).unwrap();
        w.write_record(["od", "interval", "vehicles"]).unwrap();
        for (od, h, v) in rows {
            w.write_record([od.to_string(), h.to_string(), v.to_string()])
                .unwrap();
        }
        w.flush().unwrap();
    }

    #[test]
    fn pearson_basics() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), None);
    }

    #[test]
    fn weekday_weekend_split() {
        let tmp = tempfile::tempdir().unwrap();
        let est = tmp.path().join("od_estimates");
        std::fs::create_dir_all(&est).unwrap();
        // 2024-03-08 is a Friday, 2024-03-09 a Saturday.
        write(
            &est,
            "2024-03-08",
            &[
                ("A->B", 0, 10.0),
                ("A->B", 1, 20.0),
                ("B->A", 0, 1.0),
                ("B->A", 1, 2.0),
            ],
        );
        write(
            &est,
            "2024-03-09",
            &[
                ("A->B", 0, 4.0),
                ("A->B", 1, 6.0),
                ("B->A", 0, 0.0),
                ("B->A", 1, 1.0),
            ],
        );
        let mut cfg = ReportConfig::default();
        cfg.od_groups
            .insert("all".into(), vec!["A->B".into(), "B->A".into()]);
        cfg.holidays
            .push(NaiveDate::from_ymd_opt(2024, 3, 8).unwrap());
        let s = build_report(tmp.path(), &cfg).unwrap();
        assert_eq!((s.days, s.weekday_days, s.weekend_days), (2, 1, 1));
        assert_eq!(s.holidays[0].total, 33.0);
        assert_eq!(s.holidays[0].baseline, None);
        let profiles = std::fs::read_to_string(tmp.path().join("report/profiles.csv")).unwrap();
        assert!(profiles.contains("A->B,1,20,6,13"));
        let groups = std::fs::read_to_string(tmp.path().join("report/groups.csv")).unwrap();
        assert!(groups.contains("all,0,11,4"));
    }

    #[test]
    fn unknown_group_member() {
        let tmp = tempfile::tempdir().unwrap();
        let est = tmp.path().join("od_estimates");
        std::fs::create_dir_all(&est).unwrap();
        write(&est, "2024-03-08", &[("A->B", 0, 1.0)]);
        let mut cfg = ReportConfig::default();
        cfg.od_groups.insert("g".into(), vec!["X->Y".into()]);
        assert!(build_report(tmp.path(), &cfg).is_err());
    }
}
