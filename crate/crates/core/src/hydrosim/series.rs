//! Synthetic SCADA time series: hourly steady-state solves with
//! quasi-static tank integration, recorded with relative sensor noise.

use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::attack::AttackSpec;
use super::solver::{solve, HydraulicState, SolveInput};
use crate::error::{Error, Result};
use crate::io::{csv_bytes, fmt_f64, parse_f64, read_csv, read_json, write_atomic, write_json};
use crate::network::{EdgeKind, NetworkGraph, NodeKind};
use crate::rng;

pub const DEFAULT_TIMESTEP: f64 = 3600.0;
pub const TANK_MAX_LEVEL: f64 = 10.0;

/// Noise-free hydraulic state per timestep.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    pub heads: Vec<Vec<f64>>,
    pub flows: Vec<Vec<f64>>,
    pub demands: Vec<Vec<f64>>,
    pub levels: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScadaSeries {
    pub timestep: f64,
    pub seed: u64,
    pub noise_std: f64,
    /// 24 hourly demand multipliers used to generate the series.
    pub pattern: Vec<f64>,
    pub node_ids: Vec<String>,
    /// Junctions carrying a pressure sensor.
    pub pressure_ids: Vec<String>,
    pub pressures: Vec<Vec<f64>>,
    pub flow_ids: Vec<String>,
    pub flows: Vec<Vec<f64>>,
    pub tank_ids: Vec<String>,
    pub tank_levels: Vec<Vec<f64>>,
    pub pump_ids: Vec<String>,
    pub pump_status: Vec<Vec<bool>>,
    /// Per time, per node (network order) attack labels.
    pub labels: Vec<Vec<u8>>,
    pub attack_log: Vec<AttackSpec>,
    /// Pressure sensors treated as unmeasured.
    pub masked: Vec<String>,
    pub truth: GroundTruth,
}

/// Metadata sidecar persisted next to the CSV files.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeriesMeta {
    timestep: f64,
    seed: u64,
    noise_std: f64,
    pattern: Vec<f64>,
    start_time: String,
    masked_sensors: Vec<String>,
}

pub const START_TIME: &str = "2020-01-01T00:00:00";

impl ScadaSeries {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn is_masked(&self, id: &str) -> bool {
        self.masked.iter().any(|m| m == id)
    }

    /// Network-level ground truth: 1 when any node is labeled.
    pub fn network_labels(&self) -> Vec<u8> {
        self.labels
            .iter()
            .map(|row| u8::from(row.iter().any(|&y| y != 0)))
            .collect()
    }

    pub fn timestamp(&self, t: usize) -> String {
        let start = NaiveDateTime::parse_from_str(START_TIME, "%Y-%m-%dT%H:%M:%S")
            .unwrap_or_else(|_| NaiveDate::default().and_hms_opt(0, 0, 0).unwrap());
        let at = start + Duration::milliseconds((t as f64 * self.timestep * 1000.0).round() as i64);
        at.format("%Y-%m-%dT%H:%M:%S").to_string()
    }

    /// Nominal demand (base × pattern) for every node at step `t`.
    pub fn nominal_demand(&self, g: &NetworkGraph, t: usize) -> Vec<f64> {
        let mult = self.pattern_multiplier(t);
        g.nodes().iter().map(|n| n.demand() * mult).collect()
    }

    pub fn pattern_multiplier(&self, t: usize) -> f64 {
        let hours = t as f64 * self.timestep / 3600.0;
        let hour = (hours.floor() as usize) % self.pattern.len().max(1);
        self.pattern.get(hour).copied().unwrap_or(1.0)
    }

    /// Re-derive recorded sensor values at step `t` from ground truth and
    /// the seeded noise stream.
    pub(crate) fn record_step(&mut self, g: &NetworkGraph, t: usize) {
        let mut r = rng::seeded(rng::derive(self.seed, t as u64));
        let sd = self.noise_std;
        let mut noisy = |v: f64| {
            let z: f64 = StandardNormal.sample(&mut r);
            v * (1.0 + sd * z)
        };
        let heads = &self.truth.heads[t];
        let pressures = self
            .pressure_ids
            .iter()
            .map(|id| {
                let i = g.node_idx(id).expect("sensor node");
                noisy(heads[i] - g.node(i).elevation_z)
            })
            .collect();
        let flows = self
            .flow_ids
            .iter()
            .map(|id| noisy(self.truth.flows[t][g.edge_idx(id).expect("sensor edge")]))
            .collect();
        let levels = self.truth.levels[t].iter().map(|&l| noisy(l)).collect();
        self.pressures[t] = pressures;
        self.flows[t] = flows;
        self.tank_levels[t] = levels;
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let ts: Vec<String> = (0..self.len()).map(|t| self.timestamp(t)).collect();
        let write_f = |name: &str, ids: &[String], m: &[Vec<f64>]| -> Result<()> {
            let header = header(ids);
            let rows = m.iter().enumerate().map(|(t, row)| {
                std::iter::once(ts[t].clone()).chain(row.iter().map(|&v| fmt_f64(v)))
            });
            write_atomic(&dir.join(name), &csv_bytes(&header, rows)?)
        };
        write_f("pressures.csv", &self.pressure_ids, &self.pressures)?;
        write_f("flows.csv", &self.flow_ids, &self.flows)?;
        write_f("tank_levels.csv", &self.tank_ids, &self.tank_levels)?;
        let edge_ids: Vec<String> = self.flow_ids.clone();
        write_f("truth_heads.csv", &self.node_ids, &self.truth.heads)?;
        write_f("truth_flows.csv", &edge_ids, &self.truth.flows)?;
        write_f("truth_demands.csv", &self.node_ids, &self.truth.demands)?;
        write_f("truth_levels.csv", &self.tank_ids, &self.truth.levels)?;
        let write_b = |name: &str, ids: &[String], rows: Vec<Vec<u8>>| -> Result<()> {
            let header = header(ids);
            let rows = rows.into_iter().enumerate().map(|(t, row)| {
                std::iter::once(ts[t].clone()).chain(row.into_iter().map(|v| v.to_string()))
            });
            write_atomic(&dir.join(name), &csv_bytes(&header, rows)?)
        };
        let pumps = self
            .pump_status
            .iter()
            .map(|r| r.iter().map(|&b| u8::from(b)).collect())
            .collect();
        write_b("pump_status.csv", &self.pump_ids, pumps)?;
        write_b("labels.csv", &self.node_ids, self.labels.clone())?;
        write_json(&dir.join("attack_log.json"), &self.attack_log)?;
        write_json(
            &dir.join("series.json"),
            &SeriesMeta {
                timestep: self.timestep,
                seed: self.seed,
                noise_std: self.noise_std,
                pattern: self.pattern.clone(),
                start_time: START_TIME.to_string(),
                masked_sensors: self.masked.clone(),
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: SeriesMeta = read_json(&dir.join("series.json"))?;
        let attack_log: Vec<AttackSpec> = read_json(&dir.join("attack_log.json"))?;
        let (pressure_ids, pressures) = read_matrix(&dir.join("pressures.csv"))?;
        let (flow_ids, flows) = read_matrix(&dir.join("flows.csv"))?;
        let (tank_ids, tank_levels) = read_matrix(&dir.join("tank_levels.csv"))?;
        let (node_ids, heads) = read_matrix(&dir.join("truth_heads.csv"))?;
        let (_, tflows) = read_matrix(&dir.join("truth_flows.csv"))?;
        let (_, demands) = read_matrix(&dir.join("truth_demands.csv"))?;
        let (_, levels) = read_matrix(&dir.join("truth_levels.csv"))?;
        let (pump_ids, pumps) = read_matrix(&dir.join("pump_status.csv"))?;
        let (label_ids, labels) = read_matrix(&dir.join("labels.csv"))?;
        if label_ids != node_ids {
            return Err(Error::parse("labels.csv", "node columns differ from truth_heads.csv"));
        }
        let t = labels.len();
        for (name, len) in [
            ("pressures.csv", pressures.len()),
            ("flows.csv", flows.len()),
            ("tank_levels.csv", tank_levels.len()),
            ("pump_status.csv", pumps.len()),
            ("truth_heads.csv", heads.len()),
        ] {
            if len != t {
                return Err(Error::parse(name, format!("{len} rows, expected {t}")));
            }
        }
        Ok(ScadaSeries {
            timestep: meta.timestep,
            seed: meta.seed,
            noise_std: meta.noise_std,
            pattern: meta.pattern,
            node_ids,
            pressure_ids,
            pressures,
            flow_ids,
            flows,
            tank_ids,
            tank_levels,
            pump_ids,
            pump_status: pumps
                .into_iter()
                .map(|r| r.into_iter().map(|v| v != 0.0).collect())
                .collect(),
            labels: labels
                .into_iter()
                .map(|r| r.into_iter().map(|v| u8::from(v != 0.0)).collect())
                .collect(),
            attack_log,
            masked: meta.masked_sensors,
            truth: GroundTruth {
                heads,
                flows: tflows,
                demands,
                levels,
            },
        })
    }
}

fn header(ids: &[String]) -> Vec<String> {
    std::iter::once("timestamp".to_string())
        .chain(ids.iter().cloned())
        .collect()
}

fn read_matrix(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let (header, rows) = read_csv(path)?;
    let ctx = path.display().to_string();
    let ids = header.into_iter().skip(1).collect::<Vec<_>>();
    let mut out = Vec::with_capacity(rows.len());
    for (r, row) in rows.into_iter().enumerate() {
        if row.len() != ids.len() + 1 {
            return Err(Error::parse(&ctx, format!("row {} has {} fields", r + 2, row.len())));
        }
        out.push(
            row[1..]
                .iter()
                .map(|s| parse_f64(s, &format!("{ctx} row {}", r + 2)))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok((ids, out))
}

/// Boundary-condition overrides applied to a window during re-simulation.
#[derive(Clone, Debug, Default)]
pub(crate) struct Overrides {
    pub window: (usize, usize),
    pub closed_pump: Option<usize>,
    pub demand_scale: Option<(usize, f64)>,
}

/// Run the hourly simulation for steps `from..to`, starting from the given
/// tank levels, writing ground truth into `series`.
pub(crate) fn simulate_range(
    g: &NetworkGraph,
    series: &mut ScadaSeries,
    from: usize,
    to: usize,
    start_levels: Vec<f64>,
    overrides: &Overrides,
) -> Result<()> {
    let tanks = g.nodes_of_kind(NodeKind::Tank);
    let pumps = g.edges_of_kind(EdgeKind::Pump);
    let mut levels = start_levels;
    for t in from..to {
        let in_window = t >= overrides.window.0 && t < overrides.window.1;
        let mut demand = series.nominal_demand(g, t);
        let mut pump_open = vec![true; pumps.len()];
        if in_window {
            if let Some(p) = overrides.closed_pump {
                pump_open[p] = false;
            }
            if let Some((node, scale)) = overrides.demand_scale {
                demand[node] *= scale;
            }
        }
        let state = solve(
            g,
            &SolveInput {
                demand: &demand,
                pump_open: &pump_open,
                tank_levels: Some(&levels),
            },
        )
        .map_err(|e| Error::AtTimestep {
            step: t,
            source: Box::new(e),
        })?;
        series.truth.levels[t] = levels.clone();
        series.pump_status[t] = pump_open;
        store_state(series, t, &state);
        levels = integrate_tanks(g, &tanks, &levels, &state, series.timestep, t);
        series.record_step(g, t);
    }
    Ok(())
}

fn store_state(series: &mut ScadaSeries, t: usize, state: &HydraulicState) {
    series.truth.heads[t] = state.head.clone();
    series.truth.flows[t] = state.flow.clone();
    series.truth.demands[t] = state.demand.clone();
}

fn integrate_tanks(
    g: &NetworkGraph,
    tanks: &[usize],
    levels: &[f64],
    state: &HydraulicState,
    dt: f64,
    t: usize,
) -> Vec<f64> {
    tanks
        .iter()
        .zip(levels)
        .map(|(&i, &level)| {
            let inflow: f64 = g.in_edges(i).iter().map(|&k| state.flow[k]).sum::<f64>()
                - g.out_edges(i).iter().map(|&k| state.flow[k]).sum::<f64>();
            let area = g.node(i).tank_area.unwrap_or(1.0);
            let next = level + inflow * dt / area;
            if next > TANK_MAX_LEVEL {
                log::warn!("tank {} overflows at step {t}; level clamped", g.node(i).id);
            }
            next.clamp(0.0, TANK_MAX_LEVEL)
        })
        .collect()
}

/// Empty series skeleton with sensor layout taken from the network.
fn skeleton(g: &NetworkGraph, steps: usize, pattern: &[f64], noise_std: f64, seed: u64) -> ScadaSeries {
    let pressure_ids: Vec<String> = g
        .nodes()
        .iter()
        .filter(|n| n.kind == NodeKind::Junction && n.measured)
        .map(|n| n.id.clone())
        .collect();
    let tanks = g.nodes_of_kind(NodeKind::Tank);
    let pumps = g.edges_of_kind(EdgeKind::Pump);
    ScadaSeries {
        timestep: DEFAULT_TIMESTEP,
        seed,
        noise_std,
        pattern: pattern.to_vec(),
        node_ids: g.nodes().iter().map(|n| n.id.clone()).collect(),
        pressures: vec![vec![0.0; pressure_ids.len()]; steps],
        pressure_ids,
        flow_ids: g.edges().iter().map(|e| e.id.clone()).collect(),
        flows: vec![vec![0.0; g.edge_count()]; steps],
        tank_ids: tanks.iter().map(|&i| g.node(i).id.clone()).collect(),
        tank_levels: vec![vec![0.0; tanks.len()]; steps],
        pump_ids: pumps.iter().map(|&k| g.edge(k).id.clone()).collect(),
        pump_status: vec![vec![true; pumps.len()]; steps],
        labels: vec![vec![0; g.node_count()]; steps],
        attack_log: Vec::new(),
        masked: Vec::new(),
        truth: GroundTruth {
            heads: vec![Vec::new(); steps],
            flows: vec![Vec::new(); steps],
            demands: vec![Vec::new(); steps],
            levels: vec![Vec::new(); steps],
        },
    }
}

pub fn generate_series(
    g: &NetworkGraph,
    pattern: &[f64],
    days: usize,
    noise_std: f64,
    seed: u64,
) -> Result<ScadaSeries> {
    if pattern.len() != 24 || pattern.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
        return Err(Error::InvalidArgument(
            "demand pattern needs 24 positive multipliers".into(),
        ));
    }
    if !(0.0..=0.1).contains(&noise_std) {
        return Err(Error::InvalidArgument(format!(
            "noise_std {noise_std} outside [0, 0.1]"
        )));
    }
    let steps = days * 24;
    let mut series = skeleton(g, steps, pattern, noise_std, seed);
    let levels = g
        .nodes_of_kind(NodeKind::Tank)
        .iter()
        .map(|&i| g.node(i).init_level.unwrap_or(0.0))
        .collect();
    simulate_range(g, &mut series, 0, steps, levels, &Overrides {
        window: (0, 0),
        ..Default::default()
    })?;
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Edge, Node};

    fn small_net() -> NetworkGraph {
        NetworkGraph::new(
            vec![
                Node::reservoir("R", 60.0),
                Node::junction("A", 10.0, 0.01),
                Node::junction("B", 12.0, 0.015),
                Node::junction("C", 8.0, 0.01),
                Node::tank("T", 40.0, 300.0, 4.0),
            ],
            vec![
                Edge::pipe("ra", "R", "A", 800.0, 0.3, 120.0),
                Edge::pipe("ab", "A", "B", 500.0, 0.2, 100.0),
                Edge::pipe("bc", "B", "C", 450.0, 0.2, 100.0),
                Edge::pipe("ac", "A", "C", 600.0, 0.15, 95.0),
                Edge::pipe("ct", "C", "T", 300.0, 0.2, 110.0),
            ],
        )
        .unwrap()
    }

    fn daily() -> Vec<f64> {
        (0..24)
            .map(|h| 1.0 + 0.4 * (2.0 * std::f64::consts::PI * (h as f64 - 6.0) / 24.0).sin())
            .collect()
    }

    #[test]
    fn noise_free_recordings_conserve_mass() {
        let g = small_net();
        let s = generate_series(&g, &daily(), 2, 0.0, 1).unwrap();
        for t in 0..s.len() {
            let demand = s.nominal_demand(&g, t);
            for i in g.nodes_of_kind(NodeKind::Junction) {
                let inflow: f64 = g.in_edges(i).iter().map(|&k| s.flows[t][k]).sum();
                let outflow: f64 = g.out_edges(i).iter().map(|&k| s.flows[t][k]).sum();
                assert!((inflow - outflow - demand[i]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let g = small_net();
        let a = generate_series(&g, &daily(), 1, 0.02, 7).unwrap();
        let b = generate_series(&g, &daily(), 1, 0.02, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_series(&g, &daily(), 1, 0.02, 8).unwrap();
        assert_ne!(a.pressures, c.pressures);
    }

    #[test]
    fn flat_pattern_without_tanks_is_time_invariant() {
        let g = NetworkGraph::new(
            vec![
                Node::reservoir("R", 60.0),
                Node::junction("A", 10.0, 0.01),
                Node::junction("B", 12.0, 0.015),
            ],
            vec![
                Edge::pipe("ra", "R", "A", 800.0, 0.3, 120.0),
                Edge::pipe("ab", "A", "B", 500.0, 0.2, 100.0),
            ],
        )
        .unwrap();
        let s = generate_series(&g, &[1.0; 24], 2, 0.0, 3).unwrap();
        for t in 1..s.len() {
            assert_eq!(s.pressures[t], s.pressures[0]);
            assert_eq!(s.flows[t], s.flows[0]);
        }
    }

    #[test]
    fn tank_level_integrates_net_inflow() {
        let g = small_net();
        let s = generate_series(&g, &daily(), 1, 0.0, 1).unwrap();
        let tank = g.node_idx("T").unwrap();
        let k = g.edge_idx("ct").unwrap();
        for t in 0..s.len() - 1 {
            let expected = (s.truth.levels[t][0] + s.truth.flows[t][k] * 3600.0 / 300.0).clamp(0.0, 10.0);
            assert!((s.truth.levels[t + 1][0] - expected).abs() < 1e-12);
            assert!((s.truth.heads[t][tank] - 40.0 - s.truth.levels[t][0]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let g = small_net();
        assert!(generate_series(&g, &[1.0; 23], 1, 0.0, 1).is_err());
        assert!(generate_series(&g, &[1.0; 24], 1, 0.2, 1).is_err());
        let mut p = [1.0; 24];
        p[3] = 0.0;
        assert!(generate_series(&g, &p, 1, 0.0, 1).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let g = small_net();
        let s = generate_series(&g, &daily(), 1, 0.01, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        let back = ScadaSeries::load(dir.path()).unwrap();
        assert_eq!(back, s);
        let text = std::fs::read_to_string(dir.path().join("pressures.csv")).unwrap();
        assert!(text.starts_with("timestamp,A,B,C\n2020-01-01T00:00:00,"));
    }
}
