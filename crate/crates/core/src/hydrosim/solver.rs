//! Demand-driven steady-state solver.
//!
//! Newton iteration on the joint (flow, head) system with the flows
//! eliminated, so each step solves a symmetric positive-definite system in
//! the unknown junction heads (the gradient formulation used by EPANET).
//! Pipe conductances come from dQ/dh of the Hazen–Williams law with
//! `|Q|^0.852` floored at 1e-6.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::features::{hw_resistance, HW_EXPONENT};
use crate::network::{EdgeKind, LinkStatus, NetworkGraph, NodeKind};

pub const MASS_TOLERANCE: f64 = 1e-6;
pub const ENERGY_TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 200;
const FLOW_POWER_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct HydraulicState {
    /// Total head per node, meters.
    pub head: Vec<f64>,
    /// Signed flow per edge, m3/s, positive from -> to.
    pub flow: Vec<f64>,
    /// Nodal demand, m3/s.
    pub demand: Vec<f64>,
    pub iterations: usize,
}

impl HydraulicState {
    pub fn pressure(&self, g: &NetworkGraph, i: usize) -> f64 {
        self.head[i] - g.node(i).elevation_z
    }

    /// `Σ inflow − Σ outflow − demand` at node `i`.
    pub fn mass_residual(&self, g: &NetworkGraph, i: usize) -> f64 {
        let inflow: f64 = g.in_edges(i).iter().map(|&k| self.flow[k]).sum();
        let outflow: f64 = g.out_edges(i).iter().map(|&k| self.flow[k]).sum();
        inflow - outflow - self.demand[i]
    }
}

/// Boundary conditions for one steady-state solve.
#[derive(Clone, Debug)]
pub struct SolveInput<'a> {
    pub demand: &'a [f64],
    /// One entry per pump, in edge order.
    pub pump_open: &'a [bool],
    /// Current tank levels (meters above the floor), one per tank in node order.
    /// `None` uses each tank's `init_level`.
    pub tank_levels: Option<&'a [f64]>,
}

pub fn solve_steady_state(
    g: &NetworkGraph,
    demand: &[f64],
    pump_open: &[bool],
) -> Result<HydraulicState> {
    solve(
        g,
        &SolveInput {
            demand,
            pump_open,
            tank_levels: None,
        },
    )
}

#[derive(Clone, Copy, PartialEq)]
enum LinkModel {
    Inactive,
    Pipe { resistance: f64 },
    Pump { h0: f64, r: f64 },
}

impl LinkModel {
    /// Head loss from -> to and its derivative with respect to flow.
    fn loss_and_slope(self, q: f64) -> (f64, f64) {
        match self {
            LinkModel::Inactive => (0.0, 1.0),
            LinkModel::Pipe { resistance } => {
                let aq = q.abs();
                let loss = resistance * aq.powf(HW_EXPONENT) * q.signum();
                let slope =
                    HW_EXPONENT * resistance * aq.powf(HW_EXPONENT - 1.0).max(FLOW_POWER_FLOOR);
                (if q == 0.0 { 0.0 } else { loss }, slope)
            }
            LinkModel::Pump { h0, r } => {
                let loss = -(h0 - r * q * q.abs());
                let slope = (2.0 * r * q.abs()).max(2.0 * r * FLOW_POWER_FLOOR);
                (loss, slope)
            }
        }
    }
}

pub fn fixed_heads(g: &NetworkGraph, tank_levels: Option<&[f64]>) -> Result<Vec<Option<f64>>> {
    let tanks = g.nodes_of_kind(NodeKind::Tank);
    if let Some(levels) = tank_levels {
        if levels.len() != tanks.len() {
            return Err(Error::Dimension(format!(
                "{} tank levels for {} tanks",
                levels.len(),
                tanks.len()
            )));
        }
    }
    let mut out = vec![None; g.node_count()];
    for (i, n) in g.nodes().iter().enumerate() {
        out[i] = match n.kind {
            NodeKind::Junction => None,
            NodeKind::Reservoir => n.fixed_head,
            NodeKind::Tank => {
                let t = tanks.binary_search(&i).expect("tank indexed");
                let level = tank_levels
                    .map(|l| l[t])
                    .unwrap_or_else(|| n.init_level.unwrap_or(0.0));
                Some(n.elevation_z + level)
            }
        };
    }
    Ok(out)
}

pub fn solve(g: &NetworkGraph, input: &SolveInput<'_>) -> Result<HydraulicState> {
    let n = g.node_count();
    let m = g.edge_count();
    if input.demand.len() != n {
        return Err(Error::Dimension(format!(
            "{} demands for {} nodes",
            input.demand.len(),
            n
        )));
    }
    let pumps = g.edges_of_kind(EdgeKind::Pump);
    if input.pump_open.len() != pumps.len() {
        return Err(Error::Dimension(format!(
            "{} pump states for {} pumps",
            input.pump_open.len(),
            pumps.len()
        )));
    }
    if input.demand.iter().any(|&d| !(d >= 0.0 && d.is_finite())) {
        return Err(Error::InvalidArgument("demands must be finite and >= 0".into()));
    }
    let fixed = fixed_heads(g, input.tank_levels)?;
    if fixed.iter().all(Option::is_none) {
        return Err(Error::InvalidArgument(
            "network needs at least one reservoir or tank".into(),
        ));
    }

    let mut models: Vec<LinkModel> = g
        .edges()
        .iter()
        .enumerate()
        .map(|(k, e)| {
            if e.status == LinkStatus::Closed {
                return LinkModel::Inactive;
            }
            match e.kind {
                EdgeKind::Pipe => LinkModel::Pipe {
                    resistance: hw_resistance(
                        e.length.unwrap_or(0.0),
                        e.diameter.unwrap_or(1.0),
                        e.roughness.unwrap_or(100.0),
                    ),
                },
                EdgeKind::Pump => {
                    let p = pumps.binary_search(&k).expect("pump indexed");
                    if input.pump_open[p] {
                        LinkModel::Pump {
                            h0: e.shutoff_head.unwrap_or(0.0),
                            r: e.curve_coeff.unwrap_or(1.0),
                        }
                    } else {
                        LinkModel::Inactive
                    }
                }
            }
        })
        .collect();

    check_isolation(g, &fixed, &models)?;

    // unknown-head numbering
    let mut unknown = vec![usize::MAX; n];
    let mut unknowns = Vec::new();
    for i in 0..n {
        if fixed[i].is_none() {
            unknown[i] = unknowns.len();
            unknowns.push(i);
        }
    }
    let nu = unknowns.len();

    let ref_head = fixed.iter().flatten().cloned().fold(f64::MIN, f64::max);
    let mut head: Vec<f64> = fixed.iter().map(|h| h.unwrap_or(ref_head)).collect();
    let mut flow: Vec<f64> = g
        .edges()
        .iter()
        .zip(&models)
        .map(|(e, model)| match *model {
            LinkModel::Inactive => 0.0,
            LinkModel::Pipe { .. } => {
                let d = e.diameter.unwrap_or(0.1);
                0.25 * std::f64::consts::PI * d * d * 0.3
            }
            LinkModel::Pump { h0, r } => (h0 / (2.0 * r)).sqrt(),
        })
        .collect();

    let mut p = vec![0.0; m];
    let mut y = vec![0.0; m];
    let mut mass_res = f64::INFINITY;
    let mut energy_res = f64::INFINITY;

    for iter in 1..=MAX_ITERATIONS {
        for k in 0..m {
            if models[k] == LinkModel::Inactive {
                p[k] = 0.0;
                y[k] = 0.0;
                continue;
            }
            let (loss, slope) = models[k].loss_and_slope(flow[k]);
            p[k] = 1.0 / slope;
            y[k] = flow[k] - p[k] * loss;
        }

        if nu > 0 {
            let mut a = DMatrix::<f64>::zeros(nu, nu);
            let mut b = DVector::<f64>::zeros(nu);
            for &i in &unknowns {
                b[unknown[i]] -= input.demand[i];
            }
            for k in 0..m {
                if models[k] == LinkModel::Inactive {
                    continue;
                }
                let (from, to) = g.endpoints(k);
                let (uf, ut) = (unknown[from], unknown[to]);
                if uf != usize::MAX {
                    a[(uf, uf)] += p[k];
                    b[uf] -= y[k];
                    match fixed[to] {
                        Some(h) => b[uf] += p[k] * h,
                        None => a[(uf, ut)] -= p[k],
                    }
                }
                if ut != usize::MAX {
                    a[(ut, ut)] += p[k];
                    b[ut] += y[k];
                    match fixed[from] {
                        Some(h) => b[ut] += p[k] * h,
                        None => a[(ut, uf)] -= p[k],
                    }
                }
            }
            let sol = a
                .cholesky()
                .map(|c| c.solve(&b))
                .ok_or_else(|| Error::Isolated(unknowns.iter().map(|&i| g.node(i).id.clone()).collect()))?;
            for (u, &i) in unknowns.iter().enumerate() {
                head[i] = sol[u];
            }
        }

        let mut reopened = false;
        for k in 0..m {
            if models[k] == LinkModel::Inactive {
                flow[k] = 0.0;
                continue;
            }
            let (from, to) = g.endpoints(k);
            flow[k] = y[k] + p[k] * (head[from] - head[to]);
            if let LinkModel::Pump { .. } = models[k] {
                // check valve: a pump that cannot overcome the head rise stops
                if flow[k] < 0.0 {
                    models[k] = LinkModel::Inactive;
                    flow[k] = 0.0;
                    reopened = true;
                }
            }
        }
        if reopened {
            check_isolation(g, &fixed, &models)?;
            continue;
        }

        let state_demand = input.demand;
        mass_res = unknowns
            .iter()
            .map(|&i| {
                let inflow: f64 = g.in_edges(i).iter().map(|&k| flow[k]).sum();
                let outflow: f64 = g.out_edges(i).iter().map(|&k| flow[k]).sum();
                (inflow - outflow - state_demand[i]).abs()
            })
            .fold(0.0, f64::max);
        energy_res = (0..m)
            .filter(|&k| models[k] != LinkModel::Inactive)
            .map(|k| {
                let (from, to) = g.endpoints(k);
                (models[k].loss_and_slope(flow[k]).0 - (head[from] - head[to])).abs()
            })
            .fold(0.0, f64::max);
        if mass_res < MASS_TOLERANCE && energy_res < ENERGY_TOLERANCE {
            let mut demand = input.demand.to_vec();
            for (i, node) in g.nodes().iter().enumerate() {
                if node.kind != NodeKind::Junction {
                    demand[i] = 0.0;
                }
            }
            return Ok(HydraulicState {
                head,
                flow,
                demand,
                iterations: iter,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITERATIONS,
        mass_residual: mass_res,
        energy_residual: energy_res,
    })
}

fn check_isolation(g: &NetworkGraph, fixed: &[Option<f64>], models: &[LinkModel]) -> Result<()> {
    let n = g.node_count();
    let mut seen = vec![false; n];
    let mut stack: Vec<usize> = (0..n).filter(|&i| fixed[i].is_some()).collect();
    for &i in &stack {
        seen[i] = true;
    }
    while let Some(u) = stack.pop() {
        for &k in g.incident_edges(u) {
            if models[k] == LinkModel::Inactive {
                continue;
            }
            let (a, b) = g.endpoints(k);
            let v = if a == u { b } else { a };
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    let mut isolated: Vec<String> = (0..n)
        .filter(|&i| !seen[i])
        .map(|i| g.node(i).id.clone())
        .collect();
    if isolated.is_empty() {
        Ok(())
    } else {
        isolated.sort();
        Err(Error::Isolated(isolated))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::head_loss;
    use crate::network::{Edge, Node};

    fn demands(g: &NetworkGraph) -> Vec<f64> {
        g.nodes().iter().map(|n| n.demand()).collect()
    }

    #[test]
    fn zero_demand_is_static() {
        let g = NetworkGraph::new(
            vec![
                Node::reservoir("R", 60.0),
                Node::junction("J1", 10.0, 0.0),
                Node::junction("J2", 12.0, 0.0),
                Node::junction("J3", 5.0, 0.0),
            ],
            vec![
                Edge::pipe("p1", "R", "J1", 500.0, 0.3, 110.0),
                Edge::pipe("p2", "J1", "J2", 400.0, 0.2, 100.0),
                Edge::pipe("p3", "J2", "J3", 300.0, 0.2, 100.0),
                Edge::pipe("p4", "J3", "J1", 350.0, 0.2, 90.0),
            ],
        )
        .unwrap();
        let s = solve_steady_state(&g, &[0.0; 4], &[]).unwrap();
        for &q in &s.flow {
            assert!(q.abs() < 1e-6, "{q}");
        }
        for &h in &s.head {
            assert!((h - 60.0).abs() < 1e-6, "{h}");
        }
    }

    #[test]
    fn single_pipe_carries_demand() {
        let d = 0.03;
        let g = NetworkGraph::new(
            vec![Node::reservoir("R", 50.0), Node::junction("J", 0.0, d)],
            vec![Edge::pipe("p", "R", "J", 800.0, 0.25, 120.0)],
        )
        .unwrap();
        let s = solve_steady_state(&g, &demands(&g), &[]).unwrap();
        assert!((s.flow[0] - d).abs() < 1e-9);
        let expected = 50.0 - head_loss(d, 800.0, 0.25, 120.0);
        assert!((s.head[1] - expected).abs() < 1e-8, "{} vs {expected}", s.head[1]);
    }

    #[test]
    fn parallel_pipes_split_evenly() {
        let g = NetworkGraph::new(
            vec![Node::reservoir("R", 50.0), Node::junction("J", 0.0, 0.04)],
            vec![
                Edge::pipe("a", "R", "J", 600.0, 0.2, 100.0),
                Edge::pipe("b", "R", "J", 600.0, 0.2, 100.0),
            ],
        )
        .unwrap();
        let s = solve_steady_state(&g, &demands(&g), &[]).unwrap();
        assert!((s.flow[0] - 0.02).abs() < 1e-9);
        assert!((s.flow[1] - 0.02).abs() < 1e-9);
    }

    /// Slow nodal relaxation: sweep junctions, bisect each head until the
    /// local continuity equation closes, repeat until nothing moves.
    fn relaxation_oracle(g: &NetworkGraph, demand: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let fixed = fixed_heads(g, None).unwrap();
        let top = fixed.iter().flatten().cloned().fold(f64::MIN, f64::max);
        let mut head: Vec<f64> = fixed.iter().map(|h| h.unwrap_or(top)).collect();
        let pipe_flow = |k: usize, dh: f64| {
            let e = g.edge(k);
            let r = hw_resistance(e.length.unwrap(), e.diameter.unwrap(), e.roughness.unwrap());
            dh.signum() * (dh.abs() / r).powf(1.0 / HW_EXPONENT)
        };
        for _ in 0..20_000 {
            let mut moved = 0.0f64;
            for i in 0..g.node_count() {
                if fixed[i].is_some() {
                    continue;
                }
                let balance = |h: f64, head: &[f64]| {
                    let mut s = -demand[i];
                    for &k in g.incident_edges(i) {
                        let (a, b) = g.endpoints(k);
                        let other = if a == i { b } else { a };
                        s += pipe_flow(k, head[other] - h);
                    }
                    s
                };
                let (mut lo, mut hi) = (head[i] - 200.0, top + 1.0);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if balance(mid, &head) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let new = 0.5 * (lo + hi);
                moved = moved.max((new - head[i]).abs());
                head[i] = new;
            }
            if moved < 1e-12 {
                break;
            }
        }
        let flow = (0..g.edge_count())
            .map(|k| {
                let (a, b) = g.endpoints(k);
                pipe_flow(k, head[a] - head[b])
            })
            .collect();
        (head, flow)
    }

    #[test]
    fn y_network_matches_relaxation_oracle() {
        let g = NetworkGraph::new(
            vec![
                Node::reservoir("R", 70.0),
                Node::junction("Hub", 20.0, 0.0),
                Node::junction("Left", 15.0, 0.025),
                Node::junction("Right", 18.0, 0.015),
            ],
            vec![
                Edge::pipe("trunk", "R", "Hub", 1200.0, 0.3, 120.0),
                Edge::pipe("l", "Hub", "Left", 700.0, 0.2, 100.0),
                Edge::pipe("r", "Hub", "Right", 900.0, 0.15, 110.0),
            ],
        )
        .unwrap();
        let d = demands(&g);
        let s = solve_steady_state(&g, &d, &[]).unwrap();
        let (h, q) = relaxation_oracle(&g, &d);
        for i in 0..4 {
            assert!((s.head[i] - h[i]).abs() < 1e-5, "head {i}: {} vs {}", s.head[i], h[i]);
        }
        for k in 0..3 {
            assert!((s.flow[k] - q[k]).abs() < 1e-5, "flow {k}");
        }
    }

    #[test]
    fn looped_network_matches_relaxation_oracle() {
        let g = NetworkGraph::new(
            vec![
                Node::reservoir("R", 65.0),
                Node::junction("A", 10.0, 0.01),
                Node::junction("B", 12.0, 0.02),
                Node::junction("C", 8.0, 0.015),
                Node::junction("D", 9.0, 0.01),
            ],
            vec![
                Edge::pipe("ra", "R", "A", 900.0, 0.35, 120.0),
                Edge::pipe("ab", "A", "B", 500.0, 0.2, 100.0),
                Edge::pipe("ac", "A", "C", 600.0, 0.2, 100.0),
                Edge::pipe("bd", "B", "D", 450.0, 0.15, 90.0),
                Edge::pipe("cd", "C", "D", 550.0, 0.15, 95.0),
                Edge::pipe("bc", "B", "C", 400.0, 0.1, 80.0),
            ],
        )
        .unwrap();
        let d = demands(&g);
        let s = solve_steady_state(&g, &d, &[]).unwrap();
        let (h, q) = relaxation_oracle(&g, &d);
        for i in 0..g.node_count() {
            assert!((s.head[i] - h[i]).abs() < 1e-5, "head {i}");
        }
        for k in 0..g.edge_count() {
            assert!((s.flow[k] - q[k]).abs() < 1e-5, "flow {k}");
        }
    }

    #[test]
    fn pump_curve_and_closure() {
        let g = NetworkGraph::new(
            vec![
                Node::reservoir("R", 10.0),
                Node::junction("J", 5.0, 0.02),
                Node::tank("T", 30.0, 50.0, 3.0),
            ],
            vec![
                Edge::pump("pu", "R", "J", 45.0, 20_000.0),
                Edge::pipe("jt", "J", "T", 300.0, 0.2, 100.0),
            ],
        )
        .unwrap();
        let d = demands(&g);
        let on = solve_steady_state(&g, &d, &[true]).unwrap();
        let q = on.flow[0];
        let gain = 45.0 - 20_000.0 * q * q;
        assert!((on.head[1] - on.head[0] - gain).abs() < 1e-6);
        let off = solve_steady_state(&g, &d, &[false]).unwrap();
        assert_eq!(off.flow[0], 0.0);
        assert!((off.flow[1] + 0.02).abs() < 1e-9);
    }

    #[test]
    fn closed_pump_isolating_subnet_is_named() {
        let g = NetworkGraph::new(
            vec![
                Node::reservoir("R", 10.0),
                Node::junction("J1", 5.0, 0.01),
                Node::junction("J2", 5.0, 0.01),
            ],
            vec![
                Edge::pump("pu", "R", "J1", 45.0, 20_000.0),
                Edge::pipe("p", "J1", "J2", 300.0, 0.2, 100.0),
            ],
        )
        .unwrap();
        let err = solve_steady_state(&g, &demands(&g), &[false]).unwrap_err();
        assert!(matches!(&err, Error::Isolated(ids) if ids == &["J1", "J2"]), "{err}");
    }

    #[test]
    fn demand_increase_never_raises_own_head() {
        let base = vec![
            Node::reservoir("R", 65.0),
            Node::junction("A", 10.0, 0.01),
            Node::junction("B", 12.0, 0.02),
            Node::junction("C", 8.0, 0.015),
        ];
        let edges = vec![
            Edge::pipe("ra", "R", "A", 900.0, 0.3, 120.0),
            Edge::pipe("ab", "A", "B", 500.0, 0.2, 100.0),
            Edge::pipe("bc", "B", "C", 450.0, 0.15, 90.0),
            Edge::pipe("ac", "A", "C", 550.0, 0.15, 95.0),
        ];
        let g = NetworkGraph::new(base, edges).unwrap();
        for target in 1..4 {
            let mut prev = f64::INFINITY;
            for step in 0..10 {
                let mut d = demands(&g);
                d[target] = 0.005 * step as f64;
                let s = solve_steady_state(&g, &d, &[]).unwrap();
                assert!(s.head[target] <= prev + 1e-9);
                prev = s.head[target];
            }
        }
    }
}
