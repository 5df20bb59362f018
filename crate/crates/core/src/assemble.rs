//! Tensor vectorization and the assignment matrix `B = (δ ∘ ρ) P`.

use std::collections::BTreeMap;
use std::path::Path as FsPath;

use crate::choice::RouteChoiceMatrix;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::sparse::CsrMatrix;
use crate::timeflow::DarMatrix;

/// Index arithmetic for the vectorized OD, path and link tensors.
///
/// Every vector is interval-major: entry `h * dim + i` holds element `i` of
/// interval `h` (intervals and elements both 0-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorLayout {
    pub n_intervals: usize,
    pub n_links: usize,
    pub n_ods: usize,
    pub n_paths: usize,
}

impl TensorLayout {
    pub fn new(n_intervals: usize, n_links: usize, n_ods: usize, n_paths: usize) -> Self {
        Self {
            n_intervals,
            n_links,
            n_ods,
            n_paths,
        }
    }

    pub fn od_index(&self, h: usize, od: usize) -> usize {
        h * self.n_ods + od
    }

    pub fn path_index(&self, h: usize, k: usize) -> usize {
        h * self.n_paths + k
    }

    pub fn link_index(&self, h: usize, a: usize) -> usize {
        h * self.n_links + a
    }

    /// `(interval, od)` of an OD-tensor entry.
    pub fn decode_od(&self, i: usize) -> (usize, usize) {
        (i / self.n_ods, i % self.n_ods)
    }

    pub fn decode_path(&self, i: usize) -> (usize, usize) {
        (i / self.n_paths, i % self.n_paths)
    }

    pub fn decode_link(&self, i: usize) -> (usize, usize) {
        (i / self.n_links, i % self.n_links)
    }

    pub fn od_len(&self) -> usize {
        self.n_intervals * self.n_ods
    }

    pub fn path_len(&self) -> usize {
        self.n_intervals * self.n_paths
    }

    pub fn link_len(&self) -> usize {
        self.n_intervals * self.n_links
    }
}

/// Assignment matrix of shape (N·|A|) × (N·|K|).
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentMatrix {
    pub layout: TensorLayout,
    pub matrix: CsrMatrix,
}

impl AssignmentMatrix {
    pub fn save(&self, path: &FsPath, day: Option<&str>) -> Result<()> {
        let mut h = BTreeMap::new();
        h.insert("kind".into(), "assignment".into());
        h.insert("n_intervals".into(), self.layout.n_intervals.to_string());
        h.insert("n_links".into(), self.layout.n_links.to_string());
        h.insert("n_ods".into(), self.layout.n_ods.to_string());
        h.insert("n_paths".into(), self.layout.n_paths.to_string());
        h.insert("day".into(), day.unwrap_or("-").to_string());
        self.matrix.write_triplets(path, &h)
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        let (matrix, header) = CsrMatrix::read_triplets(path)?;
        let num = |key: &str| -> Result<usize> {
            header
                .get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::parse(path, format!("missing header `{key}`")))
        };
        let layout = TensorLayout::new(
            num("n_intervals")?,
            num("n_links")?,
            num("n_ods")?,
            num("n_paths")?,
        );
        if matrix.shape() != (layout.link_len(), layout.od_len()) {
            return Err(Error::parse(path, "matrix shape disagrees with header"));
        }
        Ok(Self { layout, matrix })
    }
}

fn check_shape(
    context: &'static str,
    expected: (usize, usize),
    actual: (usize, usize),
) -> Result<()> {
    if expected != actual {
        return Err(Error::Shape {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

/// Composes `B = (δ ∘ ρ) P` by masking the DAR with the incidence pattern
/// and multiplying by the route-choice matrix.
pub fn assemble_assignment(
    incidence: &CsrMatrix,
    dar: &DarMatrix,
    route_choice: &RouteChoiceMatrix,
    layout: &TensorLayout,
) -> Result<AssignmentMatrix> {
    check_shape(
        "incidence",
        (layout.n_links, layout.n_paths),
        incidence.shape(),
    )?;
    check_shape(
        "DAR",
        (layout.link_len(), layout.path_len()),
        dar.matrix.shape(),
    )?;
    check_shape(
        "route choice",
        (layout.path_len(), layout.od_len()),
        route_choice.matrix.shape(),
    )?;
    let masked = dar.matrix.filter(|r, c, _| {
        let (_, a) = layout.decode_link(r);
        let (_, k) = layout.decode_path(c);
        incidence.get(a, k) != 0.0
    });
    let matrix = masked.matmul(&route_choice.matrix)?;
    Ok(AssignmentMatrix {
        layout: *layout,
        matrix,
    })
}

/// Link flows `x = B q` for a nonnegative demand vector.
pub fn forward_flow(b: &AssignmentMatrix, q: &[f64]) -> Result<Vec<f64>> {
    if q.len() != b.matrix.ncols() {
        return Err(Error::Shape {
            context: "demand vector",
            expected: (b.matrix.ncols(), 1),
            actual: (q.len(), 1),
        });
    }
    if let Some(i) = q.iter().position(|v| !(*v >= 0.0)) {
        let (h, od) = b.layout.decode_od(i);
        return Err(Error::Contract(format!(
            "demand for OD {od} interval {h} is {} (must be nonnegative)",
            q[i]
        )));
    }
    Ok(b.matrix.matvec(q))
}

/// The least-squares system restricted to observed (link, interval) rows.
#[derive(Clone, Debug)]
pub struct ObservedSystem {
    pub matrix: CsrMatrix,
    pub y: Vec<f64>,
    /// Row of the full link tensor behind each retained row.
    pub rows: Vec<usize>,
    pub links: Vec<usize>,
}

impl ObservedSystem {
    /// False when no rows were retained.
    pub fn is_solvable(&self) -> bool {
        !self.rows.is_empty()
    }
}

/// Keeps rows for the observed link ids, interval-major.
pub fn restrict_observed(
    b: &AssignmentMatrix,
    x: &[f64],
    observed: &[String],
    network: &Network,
) -> Result<ObservedSystem> {
    if x.len() != b.matrix.nrows() {
        return Err(Error::Shape {
            context: "link flow vector",
            expected: (b.matrix.nrows(), 1),
            actual: (x.len(), 1),
        });
    }
    let mut links = observed
        .iter()
        .map(|id| network.link_index(id))
        .collect::<Result<Vec<_>>>()?;
    links.sort_unstable();
    links.dedup();
    let layout = b.layout;
    let rows: Vec<usize> = (0..layout.n_intervals)
        .flat_map(|h| links.iter().map(move |&a| layout.link_index(h, a)))
        .collect();
    Ok(ObservedSystem {
        matrix: b.matrix.select_rows(&rows),
        y: rows.iter().map(|&r| x[r]).collect(),
        rows,
        links,
    })
}

/// A (link, interval) whose estimated hourly flow exceeds the link capacity.
#[derive(Clone, Debug, PartialEq)]
pub struct CapacityExceedance {
    pub link: usize,
    pub interval: usize,
    pub flow_vph: f64,
    pub capacity_vph: f64,
}

/// Post-hoc capacity report; capacities are not enforced during estimation.
pub fn capacity_exceedances(
    network: &Network,
    layout: &TensorLayout,
    flows: &[f64],
    interval_s: f64,
) -> Vec<CapacityExceedance> {
    let mut out = Vec::new();
    for (i, &x) in flows.iter().enumerate() {
        let (h, a) = layout.decode_link(i);
        if let Some(cap) = network.link(a).capacity_vph {
            let vph = x * 3600.0 / interval_s;
            if vph > cap {
                out.push(CapacityExceedance {
                    link: a,
                    interval: h,
                    flow_vph: vph,
                    capacity_vph: cap,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choice::route_choice_matrix;
    use crate::network::{build_network, incidence, LinkSpec, PathSet, ZoneSpec};
    use crate::sparse::CooMatrix;

    fn chain(n: usize) -> Network {
        let nodes = (0..=n).map(|i| format!("n{i}")).collect();
        let links = (0..n)
            .map(|i| LinkSpec {
                id: format!("l{i}"),
                tail: format!("n{i}"),
                head: format!("n{}", i + 1),
                length_miles: 1.0,
                freeflow_mph: 60.0,
                capacity_vph: Some(1000.0),
            })
            .collect();
        build_network(
            nodes,
            links,
            vec![
                ZoneSpec {
                    id: "A".into(),
                    origin_node: "n0".into(),
                    destination_node: "n0".into(),
                },
                ZoneSpec {
                    id: "B".into(),
                    origin_node: format!("n{n}"),
                    destination_node: format!("n{n}"),
                },
            ],
            Some(vec![("A".into(), "B".into())]),
        )
        .unwrap()
    }

    fn dar_from(layout: TensorLayout, entries: &[(usize, usize, f64)]) -> DarMatrix {
        let mut coo = CooMatrix::new(layout.link_len(), layout.path_len());
        for &(r, c, v) in entries {
            coo.push(r, c, v);
        }
        DarMatrix {
            layout,
            interval_s: 300.0,
            day: None,
            matrix: coo.to_csr(),
        }
    }

    #[test]
    fn layout_bijective() {
        let l = TensorLayout::new(5, 7, 3, 4);
        for i in 0..l.link_len() {
            let (h, a) = l.decode_link(i);
            assert_eq!(l.link_index(h, a), i);
        }
        for i in 0..l.od_len() {
            let (h, od) = l.decode_od(i);
            assert_eq!(l.od_index(h, od), i);
        }
        for i in 0..l.path_len() {
            let (h, k) = l.decode_path(i);
            assert_eq!(l.path_index(h, k), i);
        }
    }

    #[test]
    fn identity_chain() {
        let net = chain(1);
        let paths = PathSet::from_paths(&net, vec![vec![vec![0]]]).unwrap();
        let layout = TensorLayout::new(1, 1, 1, 1);
        let dar = dar_from(layout, &[(0, 0, 1.0)]);
        let rc = route_choice_matrix(&[1.0], &paths, &layout).unwrap();
        let b = assemble_assignment(&incidence(&paths, &net), &dar, &rc, &layout).unwrap();
        assert_eq!(b.matrix.to_dense(), vec![1.0]);
        assert_eq!(forward_flow(&b, &[0.0]).unwrap(), vec![0.0]);
        assert_eq!(forward_flow(&b, &[100.0]).unwrap(), vec![100.0]);
        assert!(matches!(forward_flow(&b, &[-1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn half_split_second_link() {
        let net = chain(2);
        let paths = PathSet::from_paths(&net, vec![vec![vec![0, 1]]]).unwrap();
        let layout = TensorLayout::new(2, 2, 1, 1);
        // link 0: ρ(h,h)=1; link 1: ρ(0,0)=ρ(0,1)=0.5, ρ(1,1)=0.5 (rest dropped).
        let dar = dar_from(
            layout,
            &[
                (layout.link_index(0, 0), layout.path_index(0, 0), 1.0),
                (layout.link_index(1, 0), layout.path_index(1, 0), 1.0),
                (layout.link_index(0, 1), layout.path_index(0, 0), 0.5),
                (layout.link_index(1, 1), layout.path_index(0, 0), 0.5),
                (layout.link_index(1, 1), layout.path_index(1, 0), 0.5),
            ],
        );
        let rc = route_choice_matrix(&[1.0, 1.0], &paths, &layout).unwrap();
        let b = assemble_assignment(&incidence(&paths, &net), &dar, &rc, &layout).unwrap();
        assert_eq!(
            b.matrix.get(layout.link_index(0, 1), layout.od_index(0, 0)),
            0.5
        );
        assert_eq!(
            b.matrix.get(layout.link_index(1, 1), layout.od_index(0, 0)),
            0.5
        );
        assert_eq!(
            b.matrix.get(layout.link_index(0, 1), layout.od_index(1, 0)),
            0.0
        );
    }

    #[test]
    fn shape_mismatch_reports_shapes() {
        let net = chain(1);
        let paths = PathSet::from_paths(&net, vec![vec![vec![0]]]).unwrap();
        let layout = TensorLayout::new(2, 1, 1, 1);
        let wrong = TensorLayout::new(3, 1, 1, 1);
        let dar = dar_from(wrong, &[]);
        let rc = route_choice_matrix(&[1.0, 1.0], &paths, &layout).unwrap();
        match assemble_assignment(&incidence(&paths, &net), &dar, &rc, &layout) {
            Err(Error::Shape {
                expected, actual, ..
            }) => {
                assert_eq!(expected, (2, 2));
                assert_eq!(actual, (3, 3));
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn restrict_rows() {
        let net = chain(2);
        let layout = TensorLayout::new(3, 2, 1, 1);
        let b = AssignmentMatrix {
            layout,
            matrix: CsrMatrix::from_dense(6, 3, &[1.0; 18]),
        };
        let x: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let all = restrict_observed(&b, &x, &["l0".into(), "l1".into()], &net).unwrap();
        assert_eq!(all.matrix.shape(), (6, 3));
        assert_eq!(all.y, x);
        let none = restrict_observed(&b, &x, &[], &net).unwrap();
        assert!(!none.is_solvable());
        assert_eq!(none.matrix.nrows(), 0);
        let half = restrict_observed(&b, &x, &["l1".into()], &net).unwrap();
        assert_eq!(half.matrix.nrows(), 3);
        assert_eq!(half.y, vec![1.0, 3.0, 5.0]);
        assert!(matches!(
            restrict_observed(&b, &x, &["nope".into()], &net),
            Err(Error::Lookup { .. })
        ));
    }

    #[test]
    fn capacity_report() {
        let net = chain(1);
        let layout = TensorLayout::new(2, 1, 1, 1);
        // 100 vehicles per 300 s = 1200 vph > 1000.
        let ex = capacity_exceedances(&net, &layout, &[50.0, 100.0], 300.0);
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].interval, 1);
        assert!((ex[0].flow_vph - 1200.0).abs() < 1e-9);
    }
}
