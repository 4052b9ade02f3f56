//! Cyber-physical attack injection and sensor-outage masking.
//!
//! Sensor attacks only touch recorded values. Physical attacks re-simulate
//! the network from the attack onset, so ground truth changes too; nodes
//! whose head moves by more than [`LABEL_HEAD_THRESHOLD`] against the clean
//! run are labeled inside the window. Inject physical attacks before sensor
//! attacks: re-simulation re-records every step from the onset.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::series::{simulate_range, Overrides, ScadaSeries};
use crate::error::{Error, Result};
use crate::network::{EdgeKind, NetworkGraph, NodeKind};
use crate::rng;

pub const LABEL_HEAD_THRESHOLD: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    SensorOffset,
    SensorReplay,
    PumpShutdown,
    FlowManipulation,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] = [
        AttackKind::SensorOffset,
        AttackKind::SensorReplay,
        AttackKind::PumpShutdown,
        AttackKind::FlowManipulation,
    ];

    pub fn is_physical(self) -> bool {
        matches!(self, AttackKind::PumpShutdown | AttackKind::FlowManipulation)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Node id (pressure or level sensor, demand node) or edge id (flow
    /// sensor, pump).
    pub target: String,
    pub start: usize,
    pub duration: usize,
    /// Offset fraction for `sensor_offset`, demand multiplier for
    /// `flow_manipulation`; ignored otherwise.
    #[serde(default)]
    pub magnitude: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Sensor {
    Pressure(usize),
    Flow(usize),
    Level(usize),
}

fn resolve_sensor(s: &ScadaSeries, g: &NetworkGraph, target: &str) -> Result<(Sensor, Vec<usize>)> {
    if let Ok(i) = g.node_idx(target) {
        return match g.node(i).kind {
            NodeKind::Junction => {
                let col = s
                    .pressure_ids
                    .iter()
                    .position(|id| id == target)
                    .filter(|_| !s.is_masked(target))
                    .ok_or_else(|| Error::Attack(format!("node `{target}` has no active pressure sensor")))?;
                Ok((Sensor::Pressure(col), vec![i]))
            }
            NodeKind::Tank => {
                let col = s.tank_ids.iter().position(|id| id == target).expect("tank column");
                Ok((Sensor::Level(col), vec![i]))
            }
            NodeKind::Reservoir => Err(Error::Attack(format!(
                "reservoir `{target}` carries no sensor"
            ))),
        };
    }
    let k = g
        .edge_idx(target)
        .map_err(|_| Error::Attack(format!("unknown target `{target}`")))?;
    let col = s
        .flow_ids
        .iter()
        .position(|id| id == target)
        .ok_or_else(|| Error::Attack(format!("edge `{target}` has no flow sensor")))?;
    let (a, b) = g.endpoints(k);
    Ok((Sensor::Flow(col), vec![a, b]))
}

fn column<'a>(s: &'a mut ScadaSeries, sensor: Sensor, t: usize) -> &'a mut f64 {
    match sensor {
        Sensor::Pressure(c) => &mut s.pressures[t][c],
        Sensor::Flow(c) => &mut s.flows[t][c],
        Sensor::Level(c) => &mut s.tank_levels[t][c],
    }
}

pub fn inject_attack(s: &ScadaSeries, g: &NetworkGraph, spec: &AttackSpec) -> Result<ScadaSeries> {
    let end = spec.start + spec.duration;
    if end > s.len() {
        return Err(Error::Attack(format!(
            "window [{}, {end}) exceeds series length {}",
            spec.start,
            s.len()
        )));
    }
    if matches!(spec.kind, AttackKind::SensorOffset | AttackKind::FlowManipulation)
        && !(spec.magnitude > 0.0 && spec.magnitude.is_finite())
    {
        return Err(Error::Attack("magnitude must be > 0".into()));
    }
    if spec.kind == AttackKind::SensorReplay && spec.start < spec.duration {
        return Err(Error::Attack(format!(
            "replay window of {} steps before step {} extends before t=0",
            spec.duration, spec.start
        )));
    }

    let mut out = s.clone();
    let labeled: Vec<usize>;
    match spec.kind {
        AttackKind::SensorOffset | AttackKind::SensorReplay => {
            let (sensor, nodes) = resolve_sensor(s, g, &spec.target)?;
            if spec.duration == 0 {
                return Ok(out);
            }
            for t in spec.start..end {
                let value = if spec.kind == AttackKind::SensorOffset {
                    *column(&mut out, sensor, t) * (1.0 + spec.magnitude)
                } else {
                    *column(&mut out, sensor, t - spec.duration)
                };
                *column(&mut out, sensor, t) = value;
            }
            labeled = nodes;
        }
        AttackKind::PumpShutdown | AttackKind::FlowManipulation => {
            let mut overrides = Overrides {
                window: (spec.start, end),
                ..Default::default()
            };
            let target_node = if spec.kind == AttackKind::PumpShutdown {
                let k = g
                    .edge_idx(&spec.target)
                    .map_err(|_| Error::Attack(format!("pump `{}` not found", spec.target)))?;
                if g.edge(k).kind != EdgeKind::Pump {
                    return Err(Error::Attack(format!("`{}` is not a pump", spec.target)));
                }
                let pumps = g.edges_of_kind(EdgeKind::Pump);
                overrides.closed_pump = pumps.iter().position(|&p| p == k);
                g.endpoints(k).1
            } else {
                let i = g
                    .node_idx(&spec.target)
                    .map_err(|_| Error::Attack(format!("node `{}` not found", spec.target)))?;
                if g.node(i).kind != NodeKind::Junction {
                    return Err(Error::Attack(format!(
                        "`{}` is not a junction; flow manipulation scales junction demand",
                        spec.target
                    )));
                }
                overrides.demand_scale = Some((i, spec.magnitude));
                i
            };
            if spec.duration == 0 {
                return Ok(out);
            }
            let levels = s.truth.levels[spec.start].clone();
            simulate_range(g, &mut out, spec.start, s.len(), levels, &overrides)?;
            let mut nodes = vec![target_node];
            for t in spec.start..end {
                for i in 0..g.node_count() {
                    if (out.truth.heads[t][i] - s.truth.heads[t][i]).abs() > LABEL_HEAD_THRESHOLD {
                        out.labels[t][i] = 1;
                    }
                }
            }
            nodes.dedup();
            labeled = nodes;
        }
    }
    for t in spec.start..end {
        for &i in &labeled {
            out.labels[t][i] = 1;
        }
    }
    out.attack_log.push(spec.clone());
    Ok(out)
}

/// Mark `⌊fraction · #pressure sensors⌋` uniformly chosen sensors as
/// unmeasured for the whole series.
pub fn mask_sensors(s: &ScadaSeries, fraction: f64, seed: u64) -> Result<ScadaSeries> {
    if !(0.0..=0.5).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "mask fraction {fraction} outside [0, 0.5]"
        )));
    }
    let available: Vec<&String> = s.pressure_ids.iter().filter(|id| !s.is_masked(id)).collect();
    let count = (fraction * s.pressure_ids.len() as f64 + 1e-9).floor() as usize;
    let count = count.min(available.len());
    let mut out = s.clone();
    let mut r = rng::seeded(seed);
    let mut chosen: Vec<usize> = index::sample(&mut r, available.len(), count).into_vec();
    chosen.sort_unstable();
    out.masked.extend(chosen.into_iter().map(|c| available[c].clone()));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hydrosim::generate_series;
    use crate::network::{Edge, Node};

    fn net() -> NetworkGraph {
        NetworkGraph::new(
            vec![
                Node::reservoir("R", 15.0),
                Node::junction("J1", 10.0, 0.005),
                Node::junction("J2", 12.0, 0.01),
                Node::junction("J3", 8.0, 0.01),
                Node::tank("T", 45.0, 400.0, 5.0),
            ],
            vec![
                Edge::pump("PU", "R", "J1", 60.0, 8000.0),
                Edge::pipe("p12", "J1", "J2", 500.0, 0.2, 100.0),
                Edge::pipe("p23", "J2", "J3", 450.0, 0.2, 100.0),
                Edge::pipe("p13", "J1", "J3", 600.0, 0.15, 95.0),
                Edge::pipe("p3t", "J3", "T", 300.0, 0.2, 110.0),
            ],
        )
        .unwrap()
    }

    fn series() -> ScadaSeries {
        let pattern: Vec<f64> = (0..24).map(|h| 0.8 + 0.02 * h as f64).collect();
        generate_series(&net(), &pattern, 2, 0.01, 11).unwrap()
    }

    fn spec(kind: AttackKind, target: &str, start: usize, duration: usize, magnitude: f64) -> AttackSpec {
        AttackSpec {
            kind,
            target: target.into(),
            start,
            duration,
            magnitude,
        }
    }

    #[test]
    fn offset_scales_exactly_the_window() {
        let g = net();
        let s = series();
        let a = inject_attack(&s, &g, &spec(AttackKind::SensorOffset, "J2", 10, 5, 0.1)).unwrap();
        let col = s.pressure_ids.iter().position(|id| id == "J2").unwrap();
        for t in 0..s.len() {
            for c in 0..s.pressure_ids.len() {
                let expected = if c == col && (10..15).contains(&t) {
                    s.pressures[t][c] * 1.1
                } else {
                    s.pressures[t][c]
                };
                assert_eq!(a.pressures[t][c], expected);
            }
        }
        assert_eq!(a.flows, s.flows);
        assert_eq!(a.truth, s.truth);
        let j2 = g.node_idx("J2").unwrap();
        for t in 0..s.len() {
            for i in 0..g.node_count() {
                let y = u8::from(i == j2 && (10..15).contains(&t));
                assert_eq!(a.labels[t][i], y);
            }
        }
    }

    #[test]
    fn replay_copies_preceding_window() {
        let g = net();
        let s = series();
        let a = inject_attack(&s, &g, &spec(AttackKind::SensorReplay, "p23", 20, 6, 0.0)).unwrap();
        let k = g.edge_idx("p23").unwrap();
        for t in 20..26 {
            assert_eq!(a.flows[t][k], s.flows[t - 6][k]);
        }
        assert_eq!(a.flows[26], s.flows[26]);
        assert_eq!(a.truth, s.truth);
        let err = inject_attack(&s, &g, &spec(AttackKind::SensorReplay, "p23", 3, 6, 0.0));
        assert!(err.is_err());
    }

    #[test]
    fn pump_shutdown_labels_counterfactual_head_changes() {
        let g = net();
        let s = series();
        let a = inject_attack(&s, &g, &spec(AttackKind::PumpShutdown, "PU", 12, 4, 0.0)).unwrap();
        assert_ne!(a.truth.heads[12], s.truth.heads[12]);
        for t in 12..16 {
            assert!(!a.pump_status[t][0]);
            assert_eq!(a.truth.flows[t][0], 0.0);
            for i in 0..g.node_count() {
                let moved = (a.truth.heads[t][i] - s.truth.heads[t][i]).abs() > 0.01;
                let target = i == g.node_idx("J1").unwrap();
                assert_eq!(a.labels[t][i] == 1, moved || target, "t={t} node={i}");
            }
        }
        for t in (0..12).chain(16..s.len()) {
            assert!(a.labels[t].iter().all(|&y| y == 0));
        }
        assert_eq!(a.truth.heads[..12], s.truth.heads[..12]);
    }

    #[test]
    fn flow_manipulation_scales_demand() {
        let g = net();
        let s = series();
        let a = inject_attack(&s, &g, &spec(AttackKind::FlowManipulation, "J2", 5, 3, 2.0)).unwrap();
        let j2 = g.node_idx("J2").unwrap();
        for t in 5..8 {
            assert!((a.truth.demands[t][j2] - 2.0 * s.truth.demands[t][j2]).abs() < 1e-15);
            assert_eq!(a.labels[t][j2], 1);
        }
        assert_eq!(a.truth.demands[8][j2], s.truth.demands[8][j2]);
    }

    #[test]
    fn zero_duration_is_identity() {
        let g = net();
        let s = series();
        for kind in AttackKind::ALL {
            let target = match kind {
                AttackKind::PumpShutdown => "PU",
                _ => "J2",
            };
            let a = inject_attack(&s, &g, &spec(kind, target, 10, 0, 1.5)).unwrap();
            assert_eq!(a, s);
        }
    }

    #[test]
    fn kind_mismatch_rejected() {
        let g = net();
        let s = series();
        assert!(inject_attack(&s, &g, &spec(AttackKind::PumpShutdown, "p12", 1, 2, 0.0)).is_err());
        assert!(inject_attack(&s, &g, &spec(AttackKind::FlowManipulation, "T", 1, 2, 2.0)).is_err());
        assert!(inject_attack(&s, &g, &spec(AttackKind::SensorOffset, "R", 1, 2, 0.1)).is_err());
        assert!(inject_attack(&s, &g, &spec(AttackKind::SensorOffset, "J2", 40, 20, 0.1)).is_err());
    }

    #[test]
    fn masking_counts_and_determinism() {
        let s = series();
        assert_eq!(mask_sensors(&s, 0.0, 1).unwrap(), s);
        let mut wide = s.clone();
        wide.pressure_ids = (0..20).map(|i| format!("S{i}")).collect();
        let m = mask_sensors(&wide, 0.10, 4).unwrap();
        assert_eq!(m.masked.len(), 2);
        assert_eq!(mask_sensors(&wide, 0.10, 4).unwrap().masked, m.masked);
        assert!(mask_sensors(&wide, 0.6, 4).is_err());
    }
}
