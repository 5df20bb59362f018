//! Pattern-conditioned route choice.

use std::io::Write;
use std::path::Path as FsPath;

use crate::assemble::TensorLayout;
use crate::error::{Error, Result};
use crate::network::{Network, PathSet};
use crate::sparse::{CooMatrix, CsrMatrix};
use crate::timeflow::{trace_trajectory, SpeedField, TravelModel};

/// Mean path travel times for one pattern, indexed `h * Π + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathCosts {
    pub n_intervals: usize,
    pub n_paths: usize,
    pub costs: Vec<f64>,
    /// Set when any day's trajectory for this (interval, path) ran past the
    /// end of the horizon.
    pub truncated: Vec<bool>,
}

impl PathCosts {
    pub fn get(&self, h: usize, k: usize) -> f64 {
        self.costs[h * self.n_paths + k]
    }
}

/// Everything a choice model may condition on.
pub struct PatternConditions<'a> {
    pub network: &'a Network,
    pub paths: &'a PathSet,
    pub days: &'a [&'a SpeedField],
    pub costs: &'a PathCosts,
}

/// Maps pattern conditions to path portions indexed `h * Π + k`.
pub trait ChoiceModel: Sync {
    fn portions(&self, conditions: &PatternConditions<'_>) -> Result<Vec<f64>>;
}

/// Multinomial Logit on mean path travel time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Logit {
    pub theta: f64,
}

impl Default for Logit {
    fn default() -> Self {
        Self { theta: 0.01 }
    }
}

impl ChoiceModel for Logit {
    fn portions(&self, c: &PatternConditions<'_>) -> Result<Vec<f64>> {
        if !(self.theta > 0.0) {
            return Err(Error::Config(format!(
                "logit theta {} must be positive",
                self.theta
            )));
        }
        let n_paths = c.costs.n_paths;
        let mut out = vec![0.0; c.costs.costs.len()];
        for h in 0..c.costs.n_intervals {
            for od in 0..c.paths.num_ods() {
                let range = c.paths.od_range(od);
                if range.is_empty() {
                    continue;
                }
                let base = h * n_paths;
                let p = logit_portions(
                    &c.costs.costs[base + range.start..base + range.end],
                    self.theta,
                );
                out[base + range.start..base + range.end].copy_from_slice(&p);
            }
        }
        Ok(out)
    }
}

/// Softmax of `-theta * cost` with max-subtraction.
pub fn logit_portions(costs: &[f64], theta: f64) -> Vec<f64> {
    let utilities: Vec<f64> = costs.iter().map(|c| -theta * c).collect();
    let max = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = utilities.iter().map(|u| (u - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Path travel time for a departure at the middle of each interval, averaged
/// over the pattern's days.
pub fn pattern_mean_costs(
    days: &[&SpeedField],
    paths: &PathSet,
    network: &Network,
    model: TravelModel,
) -> Result<PathCosts> {
    let first = days
        .first()
        .ok_or_else(|| Error::Contract("pattern has no days".into()))?;
    let grid = *first.grid();
    if days.iter().any(|d| d.grid() != &grid) {
        return Err(Error::Contract(
            "pattern days use different time grids".into(),
        ));
    }
    let n_paths = paths.len();
    let mut costs = vec![0.0; grid.n_intervals * n_paths];
    let mut truncated = vec![false; costs.len()];
    for h in 0..grid.n_intervals {
        let depart = grid.start(h) + 0.5 * grid.interval_s;
        for (k, path) in paths.paths().iter().enumerate() {
            let i = h * n_paths + k;
            for day in days {
                let tr = trace_trajectory(k, &path.links, depart, day, network, model)?;
                costs[i] += tr.travel_time();
                truncated[i] |= tr.truncated;
            }
            costs[i] /= days.len() as f64;
        }
    }
    Ok(PathCosts {
        n_intervals: grid.n_intervals,
        n_paths,
        costs,
        truncated,
    })
}

/// Route-choice matrix of shape (N·Π) × (N·|K|).
#[derive(Clone, Debug, PartialEq)]
pub struct RouteChoiceMatrix {
    pub matrix: CsrMatrix,
}

/// Places each portion at row `h·Π + k`, column `h·|K| + od`.
pub fn route_choice_matrix(
    portions: &[f64],
    paths: &PathSet,
    layout: &TensorLayout,
) -> Result<RouteChoiceMatrix> {
    if portions.len() != layout.path_len()
        || paths.len() != layout.n_paths
        || paths.num_ods() != layout.n_ods
    {
        return Err(Error::Shape {
            context: "route-choice portions",
            expected: (layout.path_len(), layout.n_ods),
            actual: (portions.len(), paths.num_ods()),
        });
    }
    let mut coo = CooMatrix::with_capacity(layout.path_len(), layout.od_len(), portions.len());
    for h in 0..layout.n_intervals {
        for od in 0..layout.n_ods {
            let range = paths.od_range(od);
            if range.is_empty() {
                continue;
            }
            let mut sum = 0.0;
            for k in range {
                let p = portions[layout.path_index(h, k)];
                if !(p >= 0.0) {
                    return Err(Error::Assembly(format!(
                        "portion {p} for path {k} interval {h} is negative"
                    )));
                }
                sum += p;
                if p > 0.0 {
                    coo.push(layout.path_index(h, k), layout.od_index(h, od), p);
                }
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Assembly(format!(
                    "portions for OD {od} interval {h} sum to {sum}"
                )));
            }
        }
    }
    Ok(RouteChoiceMatrix {
        matrix: coo.to_csr(),
    })
}

/// Appends `(pattern_id, od, path, interval, portion)` rows.
pub fn write_portions<W: Write>(
    out: &mut csv::Writer<W>,
    pattern_id: &str,
    portions: &[f64],
    paths: &PathSet,
    network: &Network,
) -> Result<()> {
    let n_paths = paths.len();
    for (i, p) in portions.iter().enumerate() {
        let (h, k) = (i / n_paths, i % n_paths);
        let od = paths.path(k).od;
        out.write_record([
            pattern_id.to_string(),
            network.od_label(od),
            k.to_string(),
            h.to_string(),
            p.to_string(),
        ])?;
    }
    Ok(())
}

pub fn save_portions(
    path: &FsPath,
    rows: &[(String, Vec<f64>)],
    paths: &PathSet,
    network: &Network,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["pattern_id", "od", "path", "interval", "portion"])?;
    for (id, p) in rows {
        write_portions(&mut w, id, p, paths, network)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_network, LinkSpec, ZoneSpec};
    use crate::timeflow::TimeGrid;

    fn two_link() -> Network {
        let link = |id: &str, t: &str, h: &str| LinkSpec {
            id: id.into(),
            tail: t.into(),
            head: h.into(),
            length_miles: 5.0,
            freeflow_mph: 60.0,
            capacity_vph: None,
        };
        build_network(
            vec!["a".into(), "b".into(), "c".into()],
            vec![link("l1", "a", "b"), link("l2", "b", "c")],
            vec![
                ZoneSpec {
                    id: "A".into(),
                    origin_node: "a".into(),
                    destination_node: "a".into(),
                },
                ZoneSpec {
                    id: "C".into(),
                    origin_node: "c".into(),
                    destination_node: "c".into(),
                },
            ],
            Some(vec![("A".into(), "C".into())]),
        )
        .unwrap()
    }

    #[test]
    fn logit_values() {
        assert_eq!(logit_portions(&[50.0, 50.0], 0.01), vec![0.5, 0.5]);
        assert_eq!(logit_portions(&[123.0], 0.01), vec![1.0]);
        let p = logit_portions(&[100.0, 200.0], 0.01);
        let expected = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((p[0] - expected).abs() < 1e-12);
        assert!((p[0] - 0.73106).abs() < 1e-5);
        // Huge costs stay finite.
        let p = logit_portions(&[1e6, 1e6 + 100.0], 0.01);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn mean_costs_constant_and_averaged() {
        let net = two_link();
        let paths = PathSet::from_paths(&net, vec![vec![vec![0, 1]]]).unwrap();
        let grid = TimeGrid::new(300.0, 4).unwrap();
        let day = SpeedField::constant(&net, grid, 60.0).unwrap();
        let c = pattern_mean_costs(&[&day], &paths, &net, TravelModel::Integrated).unwrap();
        for h in 0..4 {
            assert!((c.get(h, 0) - 600.0).abs() < 1e-9);
        }
        // 500 s and 700 s paths average to 600 s.
        let fast = SpeedField::constant(&net, grid, 72.0).unwrap();
        let slow = SpeedField::constant(&net, grid, 3600.0 * 10.0 / 700.0).unwrap();
        let c = pattern_mean_costs(&[&fast, &slow], &paths, &net, TravelModel::Integrated).unwrap();
        assert!((c.get(0, 0) - 600.0).abs() < 1e-9);
        assert!(c.truncated[c.n_paths * 3]);
        assert!(pattern_mean_costs(&[], &paths, &net, TravelModel::Integrated).is_err());
    }

    #[test]
    fn choice_matrix_blocks() {
        let net = two_link();
        let paths = PathSet::from_paths(&net, vec![vec![vec![0, 1]]]).unwrap();
        let layout = TensorLayout::new(1, 2, 1, 1);
        let m = route_choice_matrix(&[1.0], &paths, &layout).unwrap();
        assert_eq!(m.matrix.to_dense(), vec![1.0]);
        let bad = route_choice_matrix(&[0.9], &paths, &layout);
        assert!(matches!(bad, Err(Error::Assembly(_))));
    }
}
