//! Water network graph model: nodes, links, JSON I/O, validation and
//! hydraulic-distance queries.
//!
//! Flow on an edge is positive in the `from -> to` direction.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Junction,
    Tank,
    Reservoir,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Pipe,
    Pump,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkStatus {
    #[default]
    Open,
    Closed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    pub elevation_z: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_demand: Option<f64>,
    #[serde(default)]
    pub measured: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tank_area: Option<f64>,
    /// Initial water level above the tank floor, meters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_head: Option<f64>,
}

impl Node {
    pub fn junction(id: &str, elevation: f64, demand: f64) -> Self {
        Node {
            id: id.to_string(),
            kind: NodeKind::Junction,
            elevation_z: elevation,
            base_demand: Some(demand),
            measured: true,
            tank_area: None,
            init_level: None,
            fixed_head: None,
        }
    }

    pub fn reservoir(id: &str, head: f64) -> Self {
        Node {
            id: id.to_string(),
            kind: NodeKind::Reservoir,
            elevation_z: head,
            base_demand: None,
            measured: false,
            tank_area: None,
            init_level: None,
            fixed_head: Some(head),
        }
    }

    pub fn tank(id: &str, elevation: f64, area: f64, level: f64) -> Self {
        Node {
            id: id.to_string(),
            kind: NodeKind::Tank,
            elevation_z: elevation,
            base_demand: None,
            measured: true,
            tank_area: Some(area),
            init_level: Some(level),
            fixed_head: None,
        }
    }

    pub fn demand(&self) -> f64 {
        match self.kind {
            NodeKind::Junction => self.base_demand.unwrap_or(0.0),
            _ => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub id: String,
    pub from: String,
    pub to: String,
    pub kind: EdgeKind,
    #[serde(rename = "length_L", default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    #[serde(rename = "diameter_D", default, skip_serializing_if = "Option::is_none")]
    pub diameter: Option<f64>,
    #[serde(rename = "roughness_C", default, skip_serializing_if = "Option::is_none")]
    pub roughness: Option<f64>,
    #[serde(
        rename = "pump_shutoff_head_h0",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub shutoff_head: Option<f64>,
    #[serde(
        rename = "pump_curve_coeff_r",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub curve_coeff: Option<f64>,
    #[serde(default)]
    pub status: LinkStatus,
}

impl Edge {
    pub fn pipe(id: &str, from: &str, to: &str, length: f64, diameter: f64, roughness: f64) -> Self {
        Edge {
            id: id.to_string(),
            from: from.to_string(),
            to: to.to_string(),
            kind: EdgeKind::Pipe,
            length: Some(length),
            diameter: Some(diameter),
            roughness: Some(roughness),
            shutoff_head: None,
            curve_coeff: None,
            status: LinkStatus::Open,
        }
    }

    pub fn pump(id: &str, from: &str, to: &str, shutoff_head: f64, curve_coeff: f64) -> Self {
        Edge {
            id: id.to_string(),
            from: from.to_string(),
            to: to.to_string(),
            kind: EdgeKind::Pump,
            length: None,
            diameter: None,
            roughness: None,
            shutoff_head: Some(shutoff_head),
            curve_coeff: Some(curve_coeff),
            status: LinkStatus::Open,
        }
    }

    /// Pipe length used for hydraulic distance; pumps count as zero.
    pub fn distance_weight(&self) -> f64 {
        match self.kind {
            EdgeKind::Pipe => self.length.unwrap_or(0.0),
            EdgeKind::Pump => 0.0,
        }
    }
}

/// Serialized form of a network file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

/// Validated, immutable water network.
#[derive(Clone, Debug)]
pub struct NetworkGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    node_index: HashMap<String, usize>,
    edge_index: HashMap<String, usize>,
    endpoints: Vec<(usize, usize)>,
    incident: Vec<Vec<usize>>,
    neighbors: Vec<Vec<usize>>,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
}

impl NetworkGraph {
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self> {
        let mut node_index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if node_index.insert(n.id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate node id `{}`", n.id)));
            }
            validate_node(n)?;
        }
        let mut edge_index = HashMap::with_capacity(edges.len());
        let mut endpoints = Vec::with_capacity(edges.len());
        for (k, e) in edges.iter().enumerate() {
            if edge_index.insert(e.id.clone(), k).is_some() {
                return Err(Error::Validation(format!("duplicate edge id `{}`", e.id)));
            }
            let from = *node_index.get(&e.from).ok_or_else(|| {
                Error::Validation(format!("edge `{}` references missing node `{}`", e.id, e.from))
            })?;
            let to = *node_index.get(&e.to).ok_or_else(|| {
                Error::Validation(format!("edge `{}` references missing node `{}`", e.id, e.to))
            })?;
            if from == to {
                return Err(Error::Validation(format!(
                    "edge `{}` connects node `{}` to itself",
                    e.id, e.from
                )));
            }
            validate_edge(e)?;
            endpoints.push((from, to));
        }

        let n = nodes.len();
        let mut incident = vec![Vec::new(); n];
        let mut out_edges = vec![Vec::new(); n];
        let mut in_edges = vec![Vec::new(); n];
        let mut neighbors = vec![Vec::new(); n];
        for (k, &(a, b)) in endpoints.iter().enumerate() {
            incident[a].push(k);
            incident[b].push(k);
            out_edges[a].push(k);
            in_edges[b].push(k);
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }

        let g = NetworkGraph {
            nodes,
            edges,
            node_index,
            edge_index,
            endpoints,
            incident,
            neighbors,
            out_edges,
            in_edges,
        };
        g.check_adjacency()?;
        g.check_connected()?;
        Ok(g)
    }

    pub fn from_file_struct(file: NetworkFile) -> Result<Self> {
        Self::new(file.nodes, file.edges)
    }

    pub fn from_json_str(text: &str, context: &str) -> Result<Self> {
        let file: NetworkFile =
            serde_json::from_str(text).map_err(|e| Error::parse(context, e))?;
        Self::from_file_struct(file)
    }

    pub fn to_file_struct(&self) -> NetworkFile {
        NetworkFile {
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file_struct()).expect("network serializes")
    }

    fn check_adjacency(&self) -> Result<()> {
        for (k, &(a, b)) in self.endpoints.iter().enumerate() {
            let ok = self.incident[a].contains(&k)
                && self.incident[b].contains(&k)
                && self.neighbors[a].binary_search(&b).is_ok()
                && self.neighbors[b].binary_search(&a).is_ok();
            if !ok {
                return Err(Error::Validation(format!(
                    "adjacency inconsistent for edge `{}`",
                    self.edges[k].id
                )));
            }
        }
        for (i, list) in self.neighbors.iter().enumerate() {
            for &j in list {
                if self.neighbors[j].binary_search(&i).is_err() {
                    return Err(Error::Validation(format!(
                        "adjacency not symmetric between `{}` and `{}`",
                        self.nodes[i].id, self.nodes[j].id
                    )));
                }
            }
        }
        Ok(())
    }

    fn check_connected(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Validation("network has no nodes".into()));
        }
        let comp = self.components();
        if let Some(first_other) = comp.iter().position(|&c| c != comp[0]) {
            // name the lexicographically smallest node of a component not containing node 0
            let c = comp[first_other];
            let name = (0..self.nodes.len())
                .filter(|&i| comp[i] == c)
                .map(|i| self.nodes[i].id.as_str())
                .min()
                .unwrap_or_default();
            return Err(Error::Validation(format!(
                "disconnected component containing node {name}"
            )));
        }
        Ok(())
    }

    fn components(&self) -> Vec<usize> {
        let n = self.nodes.len();
        let mut comp = vec![usize::MAX; n];
        let mut next = 0;
        for s in 0..n {
            if comp[s] != usize::MAX {
                continue;
            }
            let mut stack = vec![s];
            comp[s] = next;
            while let Some(u) = stack.pop() {
                for &v in &self.neighbors[u] {
                    if comp[v] == usize::MAX {
                        comp[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, i: usize) -> &Node {
        &self.nodes[i]
    }

    pub fn edge(&self, k: usize) -> &Edge {
        &self.edges[k]
    }

    pub fn node_idx(&self, id: &str) -> Result<usize> {
        self.node_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    pub fn edge_idx(&self, id: &str) -> Result<usize> {
        self.edge_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownEdge(id.to_string()))
    }

    /// `(from, to)` node indices of edge `k`.
    pub fn endpoints(&self, k: usize) -> (usize, usize) {
        self.endpoints[k]
    }

    pub fn incident_edges(&self, i: usize) -> &[usize] {
        &self.incident[i]
    }

    pub fn out_edges(&self, i: usize) -> &[usize] {
        &self.out_edges[i]
    }

    pub fn in_edges(&self, i: usize) -> &[usize] {
        &self.in_edges[i]
    }

    /// Undirected neighbors, sorted by index, without duplicates.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn nodes_of_kind(&self, kind: NodeKind) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].kind == kind)
            .collect()
    }

    pub fn edges_of_kind(&self, kind: EdgeKind) -> Vec<usize> {
        (0..self.edges.len())
            .filter(|&k| self.edges[k].kind == kind)
            .collect()
    }

    /// Copy with every pipe roughness scaled by `factor`.
    pub fn with_roughness_scaled(&self, factor: f64) -> NetworkGraph {
        let mut g = self.clone();
        for e in &mut g.edges {
            if let Some(c) = e.roughness.as_mut() {
                *c *= factor;
            }
        }
        g
    }

    /// Copy with the `measured` flag replaced per node.
    pub fn with_measured(&self, measured: &[bool]) -> NetworkGraph {
        let mut g = self.clone();
        for (n, &m) in g.nodes.iter_mut().zip(measured) {
            n.measured = m;
        }
        g
    }

    /// Single-source hydraulic distances (pipe length, pumps weigh 0).
    pub fn distances_from(&self, source: usize) -> Vec<f64> {
        let n = self.nodes.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(HeapItem {
            dist: 0.0,
            node: source,
        });
        while let Some(HeapItem { dist: d, node: u }) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &k in &self.incident[u] {
                let (a, b) = self.endpoints[k];
                let v = if a == u { b } else { a };
                let nd = d + self.edges[k].distance_weight();
                if nd < dist[v] {
                    dist[v] = nd;
                    heap.push(HeapItem { dist: nd, node: v });
                }
            }
        }
        dist
    }

    pub fn hydraulic_distance(&self, i: &str, j: &str) -> Result<f64> {
        let a = self.node_idx(i)?;
        let b = self.node_idx(j)?;
        let d = self.distances_from(a)[b];
        if d.is_finite() {
            Ok(d)
        } else {
            Err(Error::Unreachable {
                from: i.to_string(),
                to: j.to_string(),
            })
        }
    }

    /// Shortest path by hydraulic distance as node indices. Among equal-length
    /// routes the one whose id sequence is lexicographically smallest wins.
    pub fn shortest_path_indices(&self, source: usize, target: usize) -> Option<Vec<usize>> {
        let to_target = self.distances_from(target);
        if !to_target[source].is_finite() {
            return None;
        }
        let mut path = vec![source];
        let mut visited = vec![false; self.nodes.len()];
        visited[source] = true;
        let mut u = source;
        while u != target {
            let mut best: Option<usize> = None;
            for &k in &self.incident[u] {
                let (a, b) = self.endpoints[k];
                let v = if a == u { b } else { a };
                if visited[v] {
                    continue;
                }
                let via = self.edges[k].distance_weight() + to_target[v];
                let tol = 1e-9 * to_target[u].max(1.0);
                if (via - to_target[u]).abs() <= tol {
                    best = match best {
                        Some(c) if self.nodes[c].id <= self.nodes[v].id => Some(c),
                        _ => Some(v),
                    };
                }
            }
            let v = best?;
            visited[v] = true;
            path.push(v);
            u = v;
        }
        Some(path)
    }

    pub fn shortest_hydraulic_path(&self, i: &str, j: &str) -> Result<Vec<String>> {
        let a = self.node_idx(i)?;
        let b = self.node_idx(j)?;
        let path = self.shortest_path_indices(a, b).ok_or_else(|| Error::Unreachable {
            from: i.to_string(),
            to: j.to_string(),
        })?;
        Ok(path.into_iter().map(|k| self.nodes[k].id.clone()).collect())
    }

    /// Human-readable invariant report used by `net validate`.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let count = |k| self.nodes.iter().filter(|n| n.kind == k).count();
        let _ = writeln!(
            s,
            "nodes: {} ({} junctions, {} tanks, {} reservoirs)",
            self.nodes.len(),
            count(NodeKind::Junction),
            count(NodeKind::Tank),
            count(NodeKind::Reservoir)
        );
        let pumps = self.edges.iter().filter(|e| e.kind == EdgeKind::Pump).count();
        let _ = writeln!(
            s,
            "edges: {} ({} pipes, {} pumps)",
            self.edges.len(),
            self.edges.len() - pumps,
            pumps
        );
        let measured = self.nodes.iter().filter(|n| n.measured).count();
        let _ = writeln!(s, "measured nodes: {measured}");
        let _ = writeln!(s, "unique ids: ok");
        let _ = writeln!(s, "edge endpoints: ok");
        let _ = writeln!(s, "parameter ranges: ok");
        let _ = writeln!(s, "adjacency consistency: ok");
        let _ = write!(s, "connectivity: ok");
        s
    }
}

fn validate_node(n: &Node) -> Result<()> {
    let bad = |what: &str| Err(Error::Validation(format!("node `{}`: {what}", n.id)));
    if n.id.is_empty() {
        return Err(Error::Validation("empty node id".into()));
    }
    if !n.elevation_z.is_finite() {
        return bad("elevation must be finite");
    }
    match n.kind {
        NodeKind::Junction => {
            let d = n.base_demand.unwrap_or(0.0);
            if !(d >= 0.0 && d.is_finite()) {
                return bad("base_demand must be >= 0");
            }
        }
        NodeKind::Tank => match n.tank_area {
            Some(a) if a > 0.0 && a.is_finite() => {
                if let Some(l) = n.init_level {
                    if !(l.is_finite() && l >= 0.0) {
                        return bad("init_level must be >= 0");
                    }
                }
            }
            _ => return bad("tank_area must be > 0"),
        },
        NodeKind::Reservoir => match n.fixed_head {
            Some(h) if h.is_finite() => {}
            _ => return bad("reservoir requires a finite fixed_head"),
        },
    }
    Ok(())
}

fn validate_edge(e: &Edge) -> Result<()> {
    let bad = |what: &str| Err(Error::Validation(format!("edge `{}`: {what}", e.id)));
    match e.kind {
        EdgeKind::Pipe => {
            match e.length {
                Some(l) if l > 0.0 && l.is_finite() => {}
                _ => return bad("length_L must be > 0"),
            }
            match e.diameter {
                Some(d) if d > 0.0 && d.is_finite() => {}
                _ => return bad("diameter_D must be > 0"),
            }
            match e.roughness {
                Some(c) if (50.0..=160.0).contains(&c) => {}
                _ => return bad("roughness_C must lie in [50, 160]"),
            }
        }
        EdgeKind::Pump => {
            match e.shutoff_head {
                Some(h) if h > 0.0 && h.is_finite() => {}
                _ => return bad("pump_shutoff_head_h0 must be > 0"),
            }
            match e.curve_coeff {
                Some(r) if r > 0.0 && r.is_finite() => {}
                _ => return bad("pump_curve_coeff_r must be > 0"),
            }
        }
    }
    Ok(())
}

pub fn load_network(path: impl AsRef<Path>) -> Result<NetworkGraph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    NetworkGraph::from_json_str(&text, &path.display().to_string())
}

pub fn save_network(g: &NetworkGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    crate::io::write_atomic(path, g.to_json().as_bytes())
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem {
    dist: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph() -> NetworkGraph {
        NetworkGraph::new(
            vec![
                Node::reservoir("A", 50.0),
                Node::junction("B", 0.0, 0.01),
                Node::junction("C", 0.0, 0.01),
            ],
            vec![
                Edge::pipe("p1", "A", "B", 100.0, 0.3, 100.0),
                Edge::pipe("p2", "B", "C", 200.0, 0.3, 100.0),
            ],
        )
        .unwrap()
    }

    fn triangle() -> NetworkGraph {
        NetworkGraph::new(
            vec![
                Node::reservoir("A", 50.0),
                Node::junction("B", 0.0, 0.0),
                Node::junction("C", 0.0, 0.0),
            ],
            vec![
                Edge::pipe("ab", "A", "B", 100.0, 0.3, 100.0),
                Edge::pipe("bc", "B", "C", 100.0, 0.3, 100.0),
                Edge::pipe("ac", "A", "C", 250.0, 0.3, 100.0),
            ],
        )
        .unwrap()
    }

    /// Length of the shortest simple path by exhaustive DFS.
    fn brute_force_distance(g: &NetworkGraph, s: usize, t: usize) -> f64 {
        fn dfs(g: &NetworkGraph, u: usize, t: usize, acc: f64, seen: &mut Vec<bool>, best: &mut f64) {
            if u == t {
                *best = best.min(acc);
                return;
            }
            for &k in g.incident_edges(u) {
                let (a, b) = g.endpoints(k);
                let v = if a == u { b } else { a };
                if !seen[v] {
                    seen[v] = true;
                    dfs(g, v, t, acc + g.edge(k).distance_weight(), seen, best);
                    seen[v] = false;
                }
            }
        }
        let mut seen = vec![false; g.node_count()];
        seen[s] = true;
        let mut best = f64::INFINITY;
        dfs(g, s, t, 0.0, &mut seen, &mut best);
        best
    }

    #[test]
    fn path_distance_sums_lengths() {
        let g = path_graph();
        assert_eq!(g.hydraulic_distance("A", "C").unwrap(), 300.0);
        assert_eq!(g.hydraulic_distance("A", "A").unwrap(), 0.0);
        assert_eq!(g.shortest_hydraulic_path("A", "C").unwrap(), ["A", "B", "C"]);
        assert_eq!(g.shortest_hydraulic_path("B", "B").unwrap(), ["B"]);
    }

    #[test]
    fn triangle_takes_two_hop_route() {
        let g = triangle();
        let (a, c) = (g.node_idx("A").unwrap(), g.node_idx("C").unwrap());
        let oracle = brute_force_distance(&g, a, c);
        assert_eq!(oracle, 200.0);
        assert_eq!(g.hydraulic_distance("A", "C").unwrap(), oracle);
    }

    #[test]
    fn equal_routes_break_ties_lexicographically() {
        // S -> {M, N} -> T, both routes 200 m; enumerated: [S,M,T] < [S,N,T]
        let g = NetworkGraph::new(
            vec![
                Node::reservoir("S", 50.0),
                Node::junction("N", 0.0, 0.0),
                Node::junction("M", 0.0, 0.0),
                Node::junction("T", 0.0, 0.0),
            ],
            vec![
                Edge::pipe("sn", "S", "N", 100.0, 0.3, 100.0),
                Edge::pipe("nt", "N", "T", 100.0, 0.3, 100.0),
                Edge::pipe("sm", "S", "M", 100.0, 0.3, 100.0),
                Edge::pipe("mt", "M", "T", 100.0, 0.3, 100.0),
            ],
        )
        .unwrap();
        let routes = [vec!["S", "M", "T"], vec!["S", "N", "T"]];
        let expected = routes.iter().min().unwrap();
        assert_eq!(&g.shortest_hydraulic_path("S", "T").unwrap(), expected);
    }

    #[test]
    fn pumps_weigh_nothing() {
        let g = NetworkGraph::new(
            vec![
                Node::reservoir("R", 10.0),
                Node::junction("J1", 0.0, 0.0),
                Node::junction("J2", 0.0, 0.0),
            ],
            vec![
                Edge::pump("pu", "R", "J1", 40.0, 1000.0),
                Edge::pipe("p", "J1", "J2", 150.0, 0.3, 100.0),
            ],
        )
        .unwrap();
        assert_eq!(g.hydraulic_distance("R", "J2").unwrap(), 150.0);
    }

    #[test]
    fn rejects_duplicates_and_missing_endpoints() {
        let dup = NetworkGraph::new(
            vec![Node::reservoir("A", 1.0), Node::junction("A", 0.0, 0.0)],
            vec![],
        );
        assert!(matches!(dup, Err(Error::Validation(m)) if m.contains("duplicate")));

        let missing = NetworkGraph::new(
            vec![Node::reservoir("A", 1.0)],
            vec![Edge::pipe("p", "A", "X", 1.0, 0.1, 100.0)],
        );
        assert!(matches!(missing, Err(Error::Validation(m)) if m.contains("`X`")));
    }

    #[test]
    fn rejects_disconnected_and_bad_ranges() {
        let r = NetworkGraph::new(
            vec![
                Node::reservoir("A", 1.0),
                Node::junction("B", 0.0, 0.0),
                Node::junction("J7", 0.0, 0.0),
            ],
            vec![Edge::pipe("p", "A", "B", 1.0, 0.1, 100.0)],
        );
        assert!(matches!(r, Err(Error::Validation(m)) if m.contains("disconnected component containing node J7")));

        let rough = NetworkGraph::new(
            vec![Node::reservoir("A", 1.0), Node::junction("B", 0.0, 0.0)],
            vec![Edge::pipe("p", "A", "B", 1.0, 0.1, 200.0)],
        );
        assert!(matches!(rough, Err(Error::Validation(m)) if m.contains("roughness_C")));

        let neg = NetworkGraph::new(
            vec![Node::reservoir("A", 1.0), Node::junction("B", 0.0, -1.0)],
            vec![Edge::pipe("p", "A", "B", 1.0, 0.1, 100.0)],
        );
        assert!(neg.is_err());
    }

    #[test]
    fn unknown_json_keys_rejected() {
        let text = r#"{"nodes":[{"id":"A","kind":"reservoir","elevation_z":1,"fixed_head":1,"color":"red"}],"edges":[]}"#;
        let err = NetworkGraph::from_json_str(text, "inline").unwrap_err();
        assert!(err.to_string().contains("color"), "{err}");
        assert!(err.to_string().contains("line"), "{err}");
    }

    #[test]
    fn json_round_trip() {
        let g = triangle();
        let back = NetworkGraph::from_json_str(&g.to_json(), "rt").unwrap();
        assert_eq!(back.nodes(), g.nodes());
        assert_eq!(back.edges(), g.edges());
    }
}
