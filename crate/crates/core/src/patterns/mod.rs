//! Day-level traffic patterns: embeddings, clustering and composite labels.

mod kmeans;
mod pca;
mod tsne;

pub use kmeans::{kmeans, KMeansResult};
pub use pca::{pca_embed, PcaResult};
pub use tsne::{joint_affinities, kl_divergence, tsne_embed, TsneParams, TsneTrace};

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate};

use crate::error::{Error, Result};
use crate::svg;

/// One row per day, each the concatenated per-interval observations.
/// Column `h * n_locations + o` holds location `o` at interval `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct DayMatrix {
    pub dates: Vec<NaiveDate>,
    pub n_intervals: usize,
    pub n_locations: usize,
    /// Row-major, `dates.len() × (n_intervals · n_locations)`.
    pub values: Vec<f64>,
}

impl DayMatrix {
    pub fn new(
        dates: Vec<NaiveDate>,
        n_intervals: usize,
        n_locations: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        let width = n_intervals * n_locations;
        if values.len() != dates.len() * width {
            return Err(Error::Shape {
                context: "day matrix",
                expected: (dates.len(), width),
                actual: (values.len() / width.max(1), width),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract(
                "day matrix has missing or non-finite entries".into(),
            ));
        }
        Ok(Self {
            dates,
            n_intervals,
            n_locations,
            values,
        })
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn width(&self) -> usize {
        self.n_intervals * self.n_locations
    }

    pub fn row(&self, d: usize) -> &[f64] {
        let w = self.width();
        &self.values[d * w..(d + 1) * w]
    }

    pub fn get(&self, d: usize, h: usize, o: usize) -> f64 {
        self.values[d * self.width() + h * self.n_locations + o]
    }

    pub fn weekday(&self, d: usize) -> u32 {
        self.dates[d].weekday().num_days_from_monday()
    }

    pub fn month(&self, d: usize) -> u32 {
        self.dates[d].month()
    }

    pub fn year(&self, d: usize) -> i32 {
        self.dates[d].year()
    }
}

/// Row-major points in a low-dimensional space.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub dims: usize,
    pub points: Vec<f64>,
}

impl Embedding {
    pub fn len(&self) -> usize {
        self.points.len() / self.dims.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dims..(i + 1) * self.dims]
    }

    pub fn save_csv(&self, path: &Path, dates: &[NaiveDate]) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["date".to_string()];
        let axes = ["x", "y", "z"];
        for d in 0..self.dims {
            header.push(
                axes.get(d)
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| format!("c{d}")),
            );
        }
        w.write_record(&header)?;
        for (i, date) in dates.iter().enumerate().take(self.len()) {
            let mut rec = vec![date.to_string()];
            rec.extend(self.point(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Scatter plots colored by year, month and weekday.
    pub fn save_svgs(&self, dir: &Path, stem: &str, dates: &[NaiveDate]) -> Result<()> {
        let pts: Vec<(f64, f64)> = (0..self.len())
            .map(|i| {
                let p = self.point(i);
                (p[0], p.get(1).copied().unwrap_or(0.0))
            })
            .collect();
        let years: Vec<i32> = {
            let mut y: Vec<i32> = dates.iter().map(|d| d.year()).collect();
            y.sort_unstable();
            y.dedup();
            y
        };
        let by_year: Vec<usize> = dates
            .iter()
            .map(|d| years.binary_search(&d.year()).unwrap())
            .collect();
        let by_month: Vec<usize> = dates.iter().map(|d| d.month0() as usize).collect();
        let by_weekday: Vec<usize> = dates
            .iter()
            .map(|d| d.weekday().num_days_from_monday() as usize)
            .collect();
        let months = [
            "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec",
        ];
        let days = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"];
        let to_strings = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        svg::save(
            &dir.join(format!("{stem}_year.svg")),
            &svg::scatter(
                &format!("{stem} by year"),
                &pts,
                &by_year,
                &years.iter().map(|y| y.to_string()).collect::<Vec<_>>(),
            ),
        )?;
        svg::save(
            &dir.join(format!("{stem}_month.svg")),
            &svg::scatter(
                &format!("{stem} by month"),
                &pts,
                &by_month,
                &to_strings(&months),
            ),
        )?;
        svg::save(
            &dir.join(format!("{stem}_weekday.svg")),
            &svg::scatter(
                &format!("{stem} by weekday"),
                &pts,
                &by_weekday,
                &to_strings(&days),
            ),
        )
    }
}

/// Count and speed cluster of one day plus its composite pattern id.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatternLabel {
    pub count_cluster: usize,
    pub speed_cluster: usize,
    pub pattern_id: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pattern {
    pub count_cluster: usize,
    pub speed_cluster: usize,
    pub days: Vec<usize>,
}

impl Pattern {
    /// Singleton patterns are treated as outliers.
    pub fn is_outlier(&self) -> bool {
        self.days.len() == 1
    }
}

/// Nonempty composite patterns, ordered by (count cluster, speed cluster).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatternRegistry {
    pub labels: Vec<PatternLabel>,
    pub patterns: Vec<Pattern>,
}

pub fn composite_patterns(
    count_labels: &[usize],
    speed_labels: &[usize],
) -> Result<PatternRegistry> {
    if count_labels.len() != speed_labels.len() {
        return Err(Error::Shape {
            context: "pattern labels",
            expected: (count_labels.len(), 1),
            actual: (speed_labels.len(), 1),
        });
    }
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (d, (&u, &v)) in count_labels.iter().zip(speed_labels).enumerate() {
        groups.entry((u, v)).or_default().push(d);
    }
    let mut labels = vec![
        PatternLabel {
            count_cluster: 0,
            speed_cluster: 0,
            pattern_id: 0
        };
        count_labels.len()
    ];
    let mut patterns = Vec::with_capacity(groups.len());
    for (id, ((u, v), days)) in groups.into_iter().enumerate() {
        for &d in &days {
            labels[d] = PatternLabel {
                count_cluster: u,
                speed_cluster: v,
                pattern_id: id,
            };
        }
        patterns.push(Pattern {
            count_cluster: u,
            speed_cluster: v,
            days,
        });
    }
    Ok(PatternRegistry { labels, patterns })
}

impl PatternRegistry {
    /// Per-day CSV: date, count_cluster, speed_cluster, pattern_id, outlier_flag.
    pub fn save_days(&self, path: &Path, dates: &[NaiveDate]) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "date",
            "count_cluster",
            "speed_cluster",
            "pattern_id",
            "outlier_flag",
        ])?;
        for (l, date) in self.labels.iter().zip(dates) {
            let outlier = self.patterns[l.pattern_id].is_outlier();
            w.write_record([
                date.to_string(),
                l.count_cluster.to_string(),
                l.speed_cluster.to_string(),
                l.pattern_id.to_string(),
                u8::from(outlier).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Occupancy histogram: pattern_id, count_cluster, speed_cluster, days.
    pub fn save_occupancy(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["pattern_id", "count_cluster", "speed_cluster", "days"])?;
        for (id, p) in self.patterns.iter().enumerate() {
            w.write_record([
                id.to_string(),
                p.count_cluster.to_string(),
                p.speed_cluster.to_string(),
                p.days.len().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads back a per-day CSV written by [`PatternRegistry::save_days`].
    pub fn load_days(path: &Path) -> Result<(Vec<NaiveDate>, Self)> {
        let mut r = csv::Reader::from_path(path)?;
        let mut dates = Vec::new();
        let mut u = Vec::new();
        let mut v = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = || Error::parse(path, format!("line {}: malformed pattern row", i + 2));
            dates.push(rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?);
            u.push(rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?);
            v.push(rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(bad)?);
        }
        Ok((dates, composite_patterns(&u, &v)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pattern() {
        let reg = composite_patterns(&[0, 0, 0], &[0, 0, 0]).unwrap();
        assert_eq!(reg.patterns.len(), 1);
        assert_eq!(reg.patterns[0].days, vec![0, 1, 2]);
        assert!(!reg.patterns[0].is_outlier());
    }

    #[test]
    fn singletons_flagged() {
        let reg = composite_patterns(&[0, 1], &[0, 1]).unwrap();
        assert_eq!(reg.patterns.len(), 2);
        assert!(reg.patterns.iter().all(Pattern::is_outlier));
        assert_eq!(reg.labels[1].pattern_id, 1);
    }

    #[test]
    fn empty_composites_absent() {
        let reg = composite_patterns(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap();
        assert_eq!(reg.patterns.len(), 2);
        assert!(composite_patterns(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn registry_round_trip() {
        let dates: Vec<NaiveDate> = (1..=4)
            .map(|d| NaiveDate::from_ymd_opt(2024, 1, d).unwrap())
            .collect();
        let reg = composite_patterns(&[0, 1, 0, 2], &[1, 1, 1, 0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("days.csv");
        reg.save_days(&p, &dates).unwrap();
        let (d2, reg2) = PatternRegistry::load_days(&p).unwrap();
        assert_eq!(d2, dates);
        assert_eq!(reg2, reg);
    }
}
