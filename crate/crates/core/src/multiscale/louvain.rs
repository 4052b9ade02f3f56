//! Louvain modularity clustering on the unweighted network topology.

use std::collections::BTreeMap;

use serde_json::{Map, Value};

use crate::network::NetworkGraph;

#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    pub node_ids: Vec<String>,
    /// Cluster index per node, in graph node order.
    pub assignment: Vec<usize>,
    pub count: usize,
    pub modularity: f64,
}

impl Clustering {
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.count];
        for (i, &c) in self.assignment.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    /// `{node_id: cluster, ..., "modularity": Q}`
    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        for (id, &c) in self.node_ids.iter().zip(&self.assignment) {
            m.insert(id.clone(), Value::from(c));
        }
        m.insert("modularity".into(), Value::from(self.modularity));
        Value::Object(m)
    }
}

pub fn louvain(g: &NetworkGraph) -> Clustering {
    let ids: Vec<String> = g.nodes().iter().map(|n| n.id.clone()).collect();
    let adj: Vec<Vec<usize>> = (0..g.node_count()).map(|i| g.neighbors(i).to_vec()).collect();
    louvain_adjacency(&ids, &adj)
}

/// Newman–Girvan modularity of `assignment` on a simple undirected graph.
pub fn modularity(adj: &[Vec<usize>], assignment: &[usize]) -> f64 {
    let two_m: f64 = adj.iter().map(|a| a.len() as f64).sum();
    if two_m == 0.0 {
        return 0.0;
    }
    let k = assignment.iter().max().map_or(0, |m| m + 1);
    let mut inside = vec![0.0; k];
    let mut tot = vec![0.0; k];
    for (i, nb) in adj.iter().enumerate() {
        tot[assignment[i]] += nb.len() as f64;
        for &j in nb {
            if assignment[j] == assignment[i] {
                inside[assignment[i]] += 1.0;
            }
        }
    }
    inside
        .iter()
        .zip(&tot)
        .map(|(a, t)| a / two_m - (t / two_m).powi(2))
        .sum()
}

/// Weighted graph used between aggregation levels. `self_w[i]` counts
/// internal edge weight twice, as in the adjacency-matrix diagonal.
struct Level {
    adj: Vec<BTreeMap<usize, f64>>,
    self_w: Vec<f64>,
}

impl Level {
    fn degree(&self, i: usize) -> f64 {
        self.adj[i].values().sum::<f64>() + self.self_w[i]
    }
}

/// One local-move phase. Returns the community of every level node and
/// whether anything moved.
fn local_moves(level: &Level, order: &[usize], two_m: f64) -> (Vec<usize>, bool) {
    let n = level.adj.len();
    let mut comm: Vec<usize> = (0..n).collect();
    let deg: Vec<f64> = (0..n).map(|i| level.degree(i)).collect();
    let mut tot = deg.clone();
    let mut moved_any = false;
    loop {
        let mut moved = false;
        for &i in order {
            let own = comm[i];
            tot[own] -= deg[i];
            let mut links: BTreeMap<usize, f64> = BTreeMap::new();
            links.insert(own, 0.0);
            for (&j, &w) in &level.adj[i] {
                *links.entry(comm[j]).or_insert(0.0) += w;
            }
            let gain = |c: usize, kin: f64| kin - tot[c] * deg[i] / two_m;
            let mut best = own;
            let mut best_gain = gain(own, links[&own]);
            for (&c, &kin) in &links {
                let gc = gain(c, kin);
                if gc > best_gain + 1e-12 {
                    best = c;
                    best_gain = gc;
                }
            }
            tot[best] += deg[i];
            if best != own {
                comm[i] = best;
                moved = true;
                moved_any = true;
            }
        }
        if !moved {
            break;
        }
    }
    (comm, moved_any)
}

/// Louvain on an adjacency list; nodes are visited in lexicographic id order.
pub fn louvain_adjacency(ids: &[String], adj: &[Vec<usize>]) -> Clustering {
    let n = ids.len();
    let two_m: f64 = adj.iter().map(|a| a.len() as f64).sum();
    let mut node_comm: Vec<usize> = (0..n).collect();
    if two_m > 0.0 {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
        let mut level = Level {
            adj: adj
                .iter()
                .map(|nb| nb.iter().map(|&j| (j, 1.0)).collect())
                .collect(),
            self_w: vec![0.0; n],
        };
        loop {
            let (comm, moved) = local_moves(&level, &order, two_m);
            if !moved {
                break;
            }
            // Relabel communities by first appearance in visit order.
            let mut relabel = vec![usize::MAX; level.adj.len()];
            let mut next = 0;
            for &i in &order {
                if relabel[comm[i]] == usize::MAX {
                    relabel[comm[i]] = next;
                    next += 1;
                }
            }
            for c in node_comm.iter_mut() {
                *c = relabel[comm[*c]];
            }
            let mut agg = Level {
                adj: vec![BTreeMap::new(); next],
                self_w: vec![0.0; next],
            };
            for (i, nb) in level.adj.iter().enumerate() {
                let ci = relabel[comm[i]];
                agg.self_w[ci] += level.self_w[i];
                for (&j, &w) in nb {
                    let cj = relabel[comm[j]];
                    if ci == cj {
                        agg.self_w[ci] += w;
                    } else {
                        *agg.adj[ci].entry(cj).or_insert(0.0) += w;
                    }
                }
            }
            order = (0..next).collect();
            level = agg;
        }
    }
    let assignment = split_disconnected(adj, &node_comm, ids);
    let modularity = modularity(adj, &assignment);
    let count = assignment.iter().max().map_or(0, |m| m + 1);
    Clustering {
        node_ids: ids.to_vec(),
        assignment,
        count,
        modularity,
    }
}

/// Splits communities that are not connected into their components and
/// renumbers by first appearance in lexicographic node order.
fn split_disconnected(adj: &[Vec<usize>], comm: &[usize], ids: &[String]) -> Vec<usize> {
    let n = adj.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    let mut out = vec![usize::MAX; n];
    let mut next = 0;
    for &s in &order {
        if out[s] != usize::MAX {
            continue;
        }
        out[s] = next;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if out[v] == usize::MAX && comm[v] == comm[s] {
                    out[v] = next;
                    stack.push(v);
                }
            }
        }
        next += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, edges: &[(usize, usize)]) -> (Vec<String>, Vec<Vec<usize>>) {
        let ids = (0..n).map(|i| format!("N{i}")).collect();
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
        }
        (ids, adj)
    }

    /// Every set partition as a restricted growth string.
    fn all_partitions(n: usize) -> Vec<Vec<usize>> {
        fn rec(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
            if prefix.len() == n {
                out.push(prefix.clone());
                return;
            }
            let m = prefix.iter().max().map_or(0, |m| m + 1);
            for c in 0..=m {
                prefix.push(c);
                rec(prefix, n, out);
                prefix.pop();
            }
        }
        let mut out = Vec::new();
        rec(&mut Vec::new(), n, &mut out);
        out
    }

    /// Direct evaluation of Q = (1/2m) Σ_ij [A_ij − k_i k_j / 2m] δ(c_i, c_j).
    fn q_dense(adj: &[Vec<usize>], part: &[usize]) -> f64 {
        let n = adj.len();
        let two_m: f64 = adj.iter().map(|a| a.len() as f64).sum();
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                if part[i] == part[j] {
                    let a = if adj[i].contains(&j) { 1.0 } else { 0.0 };
                    q += a - adj[i].len() as f64 * adj[j].len() as f64 / two_m;
                }
            }
        }
        q / two_m
    }

    fn brute_force_best(adj: &[Vec<usize>]) -> (Vec<usize>, f64) {
        let mut best = (Vec::new(), f64::NEG_INFINITY);
        for p in all_partitions(adj.len()) {
            let q = q_dense(adj, &p);
            if q > best.1 + 1e-12 {
                best = (p, q);
            }
        }
        best
    }

    #[test]
    fn single_node() {
        let (ids, adj) = graph(1, &[]);
        let c = louvain_adjacency(&ids, &adj);
        assert_eq!(c.count, 1);
        assert_eq!(c.modularity, 0.0);
    }

    #[test]
    fn dumbbell_splits_into_cliques() {
        let mut edges = Vec::new();
        for base in [0, 4] {
            for a in 0..4 {
                for b in a + 1..4 {
                    edges.push((base + a, base + b));
                }
            }
        }
        edges.push((3, 4));
        let (ids, adj) = graph(8, &edges);
        let (best, q_best) = brute_force_best(&adj);
        assert_eq!(best, vec![0, 0, 0, 0, 1, 1, 1, 1]);
        let c = louvain_adjacency(&ids, &adj);
        assert_eq!(c.assignment, best);
        assert!((c.modularity - q_best).abs() < 1e-12);
        assert!((c.modularity - q_dense(&adj, &c.assignment)).abs() < 1e-12);
    }

    #[test]
    fn complete_graph_stays_whole() {
        let (ids, adj) = graph(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        let (best, q_best) = brute_force_best(&adj);
        assert_eq!(best, vec![0; 4]);
        let c = louvain_adjacency(&ids, &adj);
        assert_eq!(c.assignment, vec![0; 4]);
        assert!((c.modularity - q_best).abs() < 1e-12);
        assert!(c.modularity.abs() < 1e-12);
    }

    #[test]
    fn ring_of_cliques_partitions_and_beats_singletons() {
        let mut edges = Vec::new();
        for k in 0..5 {
            let b = 3 * k;
            edges.extend([(b, b + 1), (b + 1, b + 2), (b, b + 2), (b + 2, (b + 3) % 15)]);
        }
        let (ids, adj) = graph(15, &edges);
        let c = louvain_adjacency(&ids, &adj);
        assert_eq!(c.assignment.len(), 15);
        let singletons: Vec<usize> = (0..15).collect();
        assert!(c.modularity >= modularity(&adj, &singletons));
        assert_eq!(c.count, 5);
        for m in c.members() {
            assert!(!m.is_empty());
        }
        assert_eq!(louvain_adjacency(&ids, &adj), c);
    }

    #[test]
    fn json_export() {
        let (ids, adj) = graph(2, &[(0, 1)]);
        let v = louvain_adjacency(&ids, &adj).to_json();
        assert_eq!(v["N0"], 0);
        assert_eq!(v["N1"], 0);
        assert_eq!(v["modularity"], 0.0);
    }
}
