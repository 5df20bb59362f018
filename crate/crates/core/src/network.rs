//! Road network, zones, OD pairs and enumerated path sets.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fs;
use std::ops::Range;
use std::path::Path as FsPath;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{CooMatrix, CsrMatrix};

/// Link record as it appears in the network file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub id: String,
    pub tail: String,
    pub head: String,
    pub length_miles: f64,
    pub freeflow_mph: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity_vph: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoneSpec {
    pub id: String,
    pub origin_node: String,
    pub destination_node: String,
}

/// On-disk network description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub nodes: Vec<String>,
    pub links: Vec<LinkSpec>,
    pub zones: Vec<ZoneSpec>,
    /// Restricts estimation to these (origin zone, destination zone) pairs.
    /// All ordered pairs of distinct zones when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub od_pairs: Option<Vec<(String, String)>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Link {
    pub id: String,
    pub tail: usize,
    pub head: usize,
    pub length_miles: f64,
    pub freeflow_mph: f64,
    pub capacity_vph: Option<f64>,
}

impl Link {
    /// Free-flow traversal time in seconds.
    pub fn freeflow_time(&self) -> f64 {
        self.length_miles / self.freeflow_mph * 3600.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Zone {
    pub id: String,
    pub origin: usize,
    pub destination: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct OdPair {
    /// Zone index of the origin.
    pub origin: usize,
    /// Zone index of the destination.
    pub destination: usize,
}

/// Validated directed road network. Immutable after construction.
#[derive(Clone, Debug)]
pub struct Network {
    nodes: Vec<String>,
    node_index: HashMap<String, usize>,
    links: Vec<Link>,
    link_index: HashMap<String, usize>,
    zones: Vec<Zone>,
    zone_index: HashMap<String, usize>,
    od_pairs: Vec<OdPair>,
    out_links: Vec<Vec<usize>>,
}

fn index_unique(ids: &[&str], kind: &'static str) -> Result<HashMap<String, usize>> {
    let mut map = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if map.insert(id.to_string(), i).is_some() {
            return Err(Error::Duplicate {
                kind,
                id: id.to_string(),
            });
        }
    }
    Ok(map)
}

/// Validates raw records and builds the adjacency used by path search.
pub fn build_network(
    nodes: Vec<String>,
    links: Vec<LinkSpec>,
    zones: Vec<ZoneSpec>,
    od_pairs: Option<Vec<(String, String)>>,
) -> Result<Network> {
    let node_index = index_unique(
        &nodes.iter().map(String::as_str).collect::<Vec<_>>(),
        "node",
    )?;
    let link_index = index_unique(
        &links.iter().map(|l| l.id.as_str()).collect::<Vec<_>>(),
        "link",
    )?;
    let zone_index = index_unique(
        &zones.iter().map(|z| z.id.as_str()).collect::<Vec<_>>(),
        "zone",
    )?;

    let node_of = |id: &str, what: &str| -> Result<usize> {
        node_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::Structural(format!("{what} references unknown node `{id}`")))
    };

    let mut built_links = Vec::with_capacity(links.len());
    for spec in links {
        let tail = node_of(&spec.tail, &format!("link `{}` tail", spec.id))?;
        let head = node_of(&spec.head, &format!("link `{}` head", spec.id))?;
        if !(spec.length_miles > 0.0 && spec.length_miles.is_finite()) {
            return Err(Error::Structural(format!(
                "link `{}` has non-positive length {}",
                spec.id, spec.length_miles
            )));
        }
        if !(spec.freeflow_mph > 0.0 && spec.freeflow_mph.is_finite()) {
            return Err(Error::Structural(format!(
                "link `{}` has non-positive free-flow speed {}",
                spec.id, spec.freeflow_mph
            )));
        }
        if tail == head {
            return Err(Error::Structural(format!(
                "link `{}` is a self-loop",
                spec.id
            )));
        }
        built_links.push(Link {
            id: spec.id,
            tail,
            head,
            length_miles: spec.length_miles,
            freeflow_mph: spec.freeflow_mph,
            capacity_vph: spec.capacity_vph,
        });
    }

    let mut built_zones = Vec::with_capacity(zones.len());
    for spec in zones {
        let origin = node_of(&spec.origin_node, &format!("zone `{}` origin", spec.id))?;
        let destination = node_of(
            &spec.destination_node,
            &format!("zone `{}` destination", spec.id),
        )?;
        built_zones.push(Zone {
            id: spec.id,
            origin,
            destination,
        });
    }

    let od_pairs = match od_pairs {
        Some(pairs) => {
            let mut seen = HashSet::new();
            let mut out = Vec::with_capacity(pairs.len());
            for (o, d) in pairs {
                let zone = |id: &str| {
                    zone_index.get(id).copied().ok_or_else(|| Error::Lookup {
                        kind: "zone",
                        id: id.to_string(),
                    })
                };
                let pair = OdPair {
                    origin: zone(&o)?,
                    destination: zone(&d)?,
                };
                if !seen.insert(pair) {
                    return Err(Error::Duplicate {
                        kind: "od pair",
                        id: format!("{o}->{d}"),
                    });
                }
                out.push(pair);
            }
            out
        }
        None => (0..built_zones.len())
            .flat_map(|o| {
                (0..built_zones.len())
                    .filter(move |&d| d != o)
                    .map(move |d| OdPair {
                        origin: o,
                        destination: d,
                    })
            })
            .collect(),
    };

    let mut out_links = vec![Vec::new(); nodes.len()];
    for (i, l) in built_links.iter().enumerate() {
        out_links[l.tail].push(i);
    }

    Ok(Network {
        nodes,
        node_index,
        links: built_links,
        link_index,
        zones: built_zones,
        zone_index,
        od_pairs,
        out_links,
    })
}

impl Network {
    pub fn from_file_spec(spec: NetworkFile) -> Result<Self> {
        build_network(spec.nodes, spec.links, spec.zones, spec.od_pairs)
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let spec: NetworkFile =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        Self::from_file_spec(spec)
    }

    pub fn to_file_spec(&self) -> NetworkFile {
        NetworkFile {
            nodes: self.nodes.clone(),
            links: self
                .links
                .iter()
                .map(|l| LinkSpec {
                    id: l.id.clone(),
                    tail: self.nodes[l.tail].clone(),
                    head: self.nodes[l.head].clone(),
                    length_miles: l.length_miles,
                    freeflow_mph: l.freeflow_mph,
                    capacity_vph: l.capacity_vph,
                })
                .collect(),
            zones: self
                .zones
                .iter()
                .map(|z| ZoneSpec {
                    id: z.id.clone(),
                    origin_node: self.nodes[z.origin].clone(),
                    destination_node: self.nodes[z.destination].clone(),
                })
                .collect(),
            od_pairs: Some(
                self.od_pairs
                    .iter()
                    .map(|od| {
                        (
                            self.zones[od.origin].id.clone(),
                            self.zones[od.destination].id.clone(),
                        )
                    })
                    .collect(),
            ),
        }
    }

    pub fn save(&self, path: &FsPath) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(&self.to_file_spec())?)?;
        Ok(())
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, idx: usize) -> &Link {
        &self.links[idx]
    }

    pub fn zones(&self) -> &[Zone] {
        &self.zones
    }

    pub fn od_pairs(&self) -> &[OdPair] {
        &self.od_pairs
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn num_ods(&self) -> usize {
        self.od_pairs.len()
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.node_index.get(id).copied()
    }

    pub fn link_index(&self, id: &str) -> Result<usize> {
        self.link_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::Lookup {
                kind: "link",
                id: id.to_string(),
            })
    }

    pub fn zone_index(&self, id: &str) -> Option<usize> {
        self.zone_index.get(id).copied()
    }

    pub fn out_links(&self, node: usize) -> &[usize] {
        &self.out_links[node]
    }

    /// Label `origin->destination` for an OD pair.
    pub fn od_label(&self, od: usize) -> String {
        let pair = self.od_pairs[od];
        format!(
            "{}->{}",
            self.zones[pair.origin].id, self.zones[pair.destination].id
        )
    }

    pub fn od_index(&self, label: &str) -> Option<usize> {
        (0..self.od_pairs.len()).find(|&i| self.od_label(i) == label)
    }

    /// Free-flow travel time of every link in seconds; the default path weight.
    pub fn freeflow_weights(&self) -> Vec<f64> {
        self.links.iter().map(Link::freeflow_time).collect()
    }
}

/// One enumerated path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Path {
    pub od: usize,
    pub links: Vec<usize>,
}

/// Paths for every OD pair, stored contiguously so a global path index runs
/// over `0..len()` grouped by OD.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSet {
    paths: Vec<Path>,
    od_ranges: Vec<Range<usize>>,
}

impl PathSet {
    /// Builds and validates a path set from per-OD link sequences.
    pub fn from_paths(network: &Network, per_od: Vec<Vec<Vec<usize>>>) -> Result<Self> {
        if per_od.len() != network.num_ods() {
            return Err(Error::Structural(format!(
                "path set covers {} OD pairs, network has {}",
                per_od.len(),
                network.num_ods()
            )));
        }
        let mut paths = Vec::new();
        let mut od_ranges = Vec::with_capacity(per_od.len());
        for (od, list) in per_od.into_iter().enumerate() {
            let start = paths.len();
            for links in list {
                paths.push(Path { od, links });
            }
            od_ranges.push(start..paths.len());
        }
        let set = PathSet { paths, od_ranges };
        set.validate(network)?;
        Ok(set)
    }

    /// Checks chain connectivity, OD endpoints and uniqueness.
    pub fn validate(&self, network: &Network) -> Result<()> {
        for (od, range) in self.od_ranges.iter().enumerate() {
            let pair = network.od_pairs()[od];
            let origin = network.zones()[pair.origin].origin;
            let dest = network.zones()[pair.destination].destination;
            let mut seen = HashSet::new();
            for k in range.clone() {
                let path = &self.paths[k];
                let label = || format!("path {k} of OD {}", network.od_label(od));
                if path.links.is_empty() {
                    return Err(Error::Structural(format!("{} is empty", label())));
                }
                if let Some(&bad) = path.links.iter().find(|&&l| l >= network.num_links()) {
                    return Err(Error::Structural(format!(
                        "{} references link index {bad}",
                        label()
                    )));
                }
                let first = network.link(path.links[0]);
                let last = network.link(*path.links.last().unwrap());
                if first.tail != origin || last.head != dest {
                    return Err(Error::Structural(format!(
                        "{} does not join the OD origin and destination",
                        label()
                    )));
                }
                for w in path.links.windows(2) {
                    if network.link(w[0]).head != network.link(w[1]).tail {
                        return Err(Error::Structural(format!(
                            "{} breaks between links `{}` and `{}`",
                            label(),
                            network.link(w[0]).id,
                            network.link(w[1]).id
                        )));
                    }
                }
                if !seen.insert(&path.links) {
                    return Err(Error::Duplicate {
                        kind: "path",
                        id: label(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn path(&self, k: usize) -> &Path {
        &self.paths[k]
    }

    /// Global path indices belonging to an OD pair.
    pub fn od_range(&self, od: usize) -> Range<usize> {
        self.od_ranges[od].clone()
    }

    pub fn num_ods(&self) -> usize {
        self.od_ranges.len()
    }

    /// Link count of the longest path.
    pub fn max_len(&self) -> usize {
        self.paths.iter().map(|p| p.links.len()).max().unwrap_or(0)
    }

    pub fn to_json(&self, network: &Network) -> serde_json::Value {
        let paths: Vec<_> = self
            .paths
            .iter()
            .map(|p| {
                serde_json::json!({
                    "od": network.od_label(p.od),
                    "links": p.links.iter().map(|&l| network.link(l).id.clone()).collect::<Vec<_>>(),
                })
            })
            .collect();
        serde_json::json!({ "paths": paths })
    }

    pub fn from_json(network: &Network, value: &serde_json::Value) -> Result<Self> {
        let bad = |m: &str| Error::Structural(format!("path set json: {m}"));
        let mut per_od = vec![Vec::new(); network.num_ods()];
        let entries = value["paths"]
            .as_array()
            .ok_or_else(|| bad("missing `paths`"))?;
        for entry in entries {
            let od_label = entry["od"].as_str().ok_or_else(|| bad("missing `od`"))?;
            let od = network.od_index(od_label).ok_or_else(|| Error::Lookup {
                kind: "od pair",
                id: od_label.to_string(),
            })?;
            let links = entry["links"]
                .as_array()
                .ok_or_else(|| bad("missing `links`"))?
                .iter()
                .map(|v| {
                    v.as_str()
                        .ok_or_else(|| bad("link id not a string"))
                        .and_then(|id| network.link_index(id))
                })
                .collect::<Result<Vec<_>>>()?;
            per_od[od].push(links);
        }
        Self::from_paths(network, per_od)
    }
}

/// Cost comparison treating sums that differ only by rounding as ties.
fn cost_cmp(a: f64, b: f64) -> Ordering {
    let scale = a.abs().max(b.abs()).max(1.0);
    if (a - b).abs() <= 1e-9 * scale {
        Ordering::Equal
    } else {
        a.total_cmp(&b)
    }
}

/// Orders paths by weight, then by their link-id sequence.
pub fn path_order(network: &Network, a: (f64, &[usize]), b: (f64, &[usize])) -> Ordering {
    cost_cmp(a.0, b.0).then_with(|| {
        let ia = a.1.iter().map(|&l| network.link(l).id.as_str());
        let ib = b.1.iter().map(|&l| network.link(l).id.as_str());
        ia.cmp(ib)
    })
}

pub fn path_weight(links: &[usize], weights: &[f64]) -> f64 {
    links.iter().map(|&l| weights[l]).sum()
}

#[derive(PartialEq)]
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra from `source` to `target` avoiding banned nodes and links.
fn shortest_path(
    network: &Network,
    source: usize,
    target: usize,
    weights: &[f64],
    banned_nodes: &[bool],
    banned_links: &HashSet<usize>,
) -> Option<Vec<usize>> {
    let n = network.nodes.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred: Vec<Option<usize>> = vec![None; n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapEntry {
        dist: 0.0,
        node: source,
    });
    while let Some(HeapEntry { dist: d, node }) = heap.pop() {
        if d > dist[node] {
            continue;
        }
        if node == target {
            break;
        }
        for &l in network.out_links(node) {
            if banned_links.contains(&l) {
                continue;
            }
            let head = network.link(l).head;
            if banned_nodes[head] {
                continue;
            }
            let nd = d + weights[l];
            if nd < dist[head] {
                dist[head] = nd;
                pred[head] = Some(l);
                heap.push(HeapEntry {
                    dist: nd,
                    node: head,
                });
            }
        }
    }
    if !dist[target].is_finite() {
        return None;
    }
    let mut links = Vec::new();
    let mut node = target;
    while node != source {
        let l = pred[node]?;
        links.push(l);
        node = network.link(l).tail;
    }
    links.reverse();
    Some(links)
}

/// Up to `k` loop-free paths from `source` to `target` in nondecreasing
/// weight order (Yen's algorithm).
pub fn k_shortest_paths(
    network: &Network,
    source: usize,
    target: usize,
    k: usize,
    weights: &[f64],
) -> Vec<Vec<usize>> {
    if k == 0 || source == target {
        return Vec::new();
    }
    let no_nodes = vec![false; network.nodes.len()];
    let Some(first) = shortest_path(network, source, target, weights, &no_nodes, &HashSet::new())
    else {
        return Vec::new();
    };
    let mut accepted: Vec<Vec<usize>> = vec![first];
    let mut candidates: Vec<(f64, Vec<usize>)> = Vec::new();
    let mut known: HashSet<Vec<usize>> = accepted.iter().cloned().collect();

    while accepted.len() < k {
        let prev = accepted.last().unwrap().clone();
        let node_seq: Vec<usize> = std::iter::once(source)
            .chain(prev.iter().map(|&l| network.link(l).head))
            .collect();
        for i in 0..prev.len() {
            let spur = node_seq[i];
            let root = &prev[..i];
            let mut banned_links = HashSet::new();
            for p in &accepted {
                if p.len() > i && &p[..i] == root {
                    banned_links.insert(p[i]);
                }
            }
            let mut banned_nodes = vec![false; network.nodes.len()];
            for &n in &node_seq[..i] {
                banned_nodes[n] = true;
            }
            if let Some(tail) =
                shortest_path(network, spur, target, weights, &banned_nodes, &banned_links)
            {
                let mut full = root.to_vec();
                full.extend(tail);
                if known.insert(full.clone()) {
                    candidates.push((path_weight(&full, weights), full));
                }
            }
        }
        if candidates.is_empty() {
            break;
        }
        let best = (0..candidates.len())
            .min_by(|&a, &b| {
                path_order(
                    network,
                    (candidates[a].0, &candidates[a].1),
                    (candidates[b].0, &candidates[b].1),
                )
            })
            .unwrap();
        accepted.push(candidates.swap_remove(best).1);
    }
    // Dijkstra ignores link ids, so equal-weight paths can arrive out of order.
    accepted.sort_by(|a, b| {
        path_order(
            network,
            (path_weight(a, weights), a),
            (path_weight(b, weights), b),
        )
    });
    accepted
}

/// Enumerates up to `k` paths for every OD pair of the network.
///
/// OD pairs with no connecting path keep an empty path set and are logged.
pub fn enumerate_paths(network: &Network, k: usize, weights: &[f64]) -> Result<PathSet> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    if weights.len() != network.num_links() || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Config(
            "path weights must be nonnegative, one per link".into(),
        ));
    }
    let mut per_od = Vec::with_capacity(network.num_ods());
    for (od, pair) in network.od_pairs().iter().enumerate() {
        let source = network.zones()[pair.origin].origin;
        let target = network.zones()[pair.destination].destination;
        let paths = k_shortest_paths(network, source, target, k, weights);
        if paths.is_empty() {
            warn!(
                "OD {} has no connecting path; its demand is fixed at zero",
                network.od_label(od)
            );
        }
        per_od.push(paths);
    }
    PathSet::from_paths(network, per_od)
}

/// Link/path incidence matrix δ with shape |A| × Π.
pub fn incidence(paths: &PathSet, network: &Network) -> CsrMatrix {
    let nnz = paths.paths().iter().map(|p| p.links.len()).sum();
    let mut coo = CooMatrix::with_capacity(network.num_links(), paths.len(), nnz);
    for (k, p) in paths.paths().iter().enumerate() {
        for &a in &p.links {
            coo.push(a, k, 1.0);
        }
    }
    coo.to_csr()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link(id: &str, tail: &str, head: &str, len: f64) -> LinkSpec {
        LinkSpec {
            id: id.into(),
            tail: tail.into(),
            head: head.into(),
            length_miles: len,
            freeflow_mph: 60.0,
            capacity_vph: None,
        }
    }

    fn zone(id: &str, o: &str, d: &str) -> ZoneSpec {
        ZoneSpec {
            id: id.into(),
            origin_node: o.into(),
            destination_node: d.into(),
        }
    }

    fn nodes(ids: &[&str]) -> Vec<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    fn diamond() -> Network {
        build_network(
            nodes(&["o", "u", "l", "d"]),
            vec![
                link("a", "o", "u", 1.0),
                link("b", "u", "d", 1.0),
                link("c", "o", "l", 1.5),
                link("e", "l", "d", 1.5),
            ],
            vec![zone("Z1", "o", "o"), zone("Z2", "d", "d")],
            Some(vec![("Z1".into(), "Z2".into())]),
        )
        .unwrap()
    }

    #[test]
    fn minimal_graph() {
        let net = build_network(
            nodes(&["a", "b"]),
            vec![link("l", "a", "b", 1.0)],
            vec![zone("Z1", "a", "a"), zone("Z2", "b", "b")],
            None,
        )
        .unwrap();
        assert_eq!(net.num_links(), 1);
        assert_eq!(net.num_ods(), 2);
    }

    #[test]
    fn dangling_endpoint_names_link() {
        let err = build_network(
            nodes(&["a", "b"]),
            vec![link("l7", "a", "X", 1.0)],
            vec![],
            None,
        )
        .unwrap_err();
        match err {
            Error::Structural(msg) => assert!(msg.contains("l7") && msg.contains("X"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_link_id() {
        let err = build_network(
            nodes(&["a", "b"]),
            vec![link("l", "a", "b", 1.0), link("l", "b", "a", 1.0)],
            vec![],
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Duplicate { kind: "link", .. }));
    }

    #[test]
    fn nonpositive_length_rejected() {
        let err = build_network(
            nodes(&["a", "b"]),
            vec![link("l", "a", "b", 0.0)],
            vec![],
            None,
        );
        assert!(matches!(err, Err(Error::Structural(_))));
    }

    #[test]
    fn diamond_both_routes_shorter_first() {
        let net = diamond();
        let paths = enumerate_paths(&net, 2, &net.freeflow_weights()).unwrap();
        assert_eq!(paths.len(), 2);
        assert_eq!(paths.path(0).links, vec![0, 1]);
        assert_eq!(paths.path(1).links, vec![2, 3]);
    }

    #[test]
    fn chain_has_single_path() {
        let net = build_network(
            nodes(&["a", "b", "c"]),
            vec![link("x", "a", "b", 1.0), link("y", "b", "c", 1.0)],
            vec![zone("Z1", "a", "a"), zone("Z2", "c", "c")],
            Some(vec![("Z1".into(), "Z2".into())]),
        )
        .unwrap();
        let paths = enumerate_paths(&net, 3, &net.freeflow_weights()).unwrap();
        assert_eq!(paths.len(), 1);
    }

    #[test]
    fn unreachable_od_keeps_empty_set() {
        let net = build_network(
            nodes(&["a", "b"]),
            vec![link("x", "a", "b", 1.0)],
            vec![zone("Z1", "a", "a"), zone("Z2", "b", "b")],
            None,
        )
        .unwrap();
        let paths = enumerate_paths(&net, 2, &net.freeflow_weights()).unwrap();
        assert_eq!(paths.num_ods(), 2);
        assert_eq!(paths.od_range(0).len(), 1);
        assert_eq!(paths.od_range(1).len(), 0);
    }

    #[test]
    fn equal_weights_break_ties_by_link_ids() {
        let net = build_network(
            nodes(&["o", "u", "l", "d"]),
            vec![
                link("z1", "o", "u", 1.0),
                link("z2", "u", "d", 1.0),
                link("a1", "o", "l", 1.0),
                link("a2", "l", "d", 1.0),
            ],
            vec![zone("Z1", "o", "o"), zone("Z2", "d", "d")],
            Some(vec![("Z1".into(), "Z2".into())]),
        )
        .unwrap();
        let paths = enumerate_paths(&net, 2, &net.freeflow_weights()).unwrap();
        assert_eq!(paths.path(0).links, vec![2, 3]);
        assert_eq!(paths.path(1).links, vec![0, 1]);
    }

    #[test]
    fn broken_chain_rejected() {
        let net = diamond();
        let err = PathSet::from_paths(&net, vec![vec![vec![0, 3]]]).unwrap_err();
        assert!(matches!(err, Error::Structural(_)));
        let err = PathSet::from_paths(&net, vec![vec![vec![0, 1], vec![0, 1]]]).unwrap_err();
        assert!(matches!(err, Error::Duplicate { .. }));
    }

    #[test]
    fn incidence_columns() {
        let net = diamond();
        let paths = enumerate_paths(&net, 2, &net.freeflow_weights()).unwrap();
        let delta = incidence(&paths, &net);
        assert_eq!(delta.shape(), (4, 2));
        for (k, p) in paths.paths().iter().enumerate() {
            let support: HashSet<usize> = (0..4).filter(|&a| delta.get(a, k) == 1.0).collect();
            assert_eq!(support, p.links.iter().copied().collect());
        }
        assert_eq!(delta.column_sums(), vec![2.0, 2.0]);
    }

    #[test]
    fn empty_path_set_incidence() {
        let net = build_network(
            nodes(&["a", "b"]),
            vec![link("x", "a", "b", 1.0)],
            vec![zone("Z1", "b", "b"), zone("Z2", "a", "a")],
            Some(vec![("Z1".into(), "Z2".into())]),
        )
        .unwrap();
        let paths = enumerate_paths(&net, 1, &net.freeflow_weights()).unwrap();
        let delta = incidence(&paths, &net);
        assert_eq!(delta.shape(), (1, 0));
        assert_eq!(delta.nnz(), 0);
    }

    #[test]
    fn path_set_json_round_trip() {
        let net = diamond();
        let paths = enumerate_paths(&net, 2, &net.freeflow_weights()).unwrap();
        let back = PathSet::from_json(&net, &paths.to_json(&net)).unwrap();
        assert_eq!(back, paths);
    }
}
