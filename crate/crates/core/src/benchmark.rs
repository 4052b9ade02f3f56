//! Synthetic 30-node benchmark: network fixture, attack scenario generator
//! and train/validation/test splits.

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::features::{assemble_features, Feature, FeatureConfig, FeatureTensor};
use crate::hydrosim::{generate_series, inject_attack, solve_steady_state, AttackKind, AttackSpec, ScadaSeries};
use crate::model::ModelConfig;
use crate::network::{Edge, EdgeKind, NetworkGraph, Node, NodeKind};
use crate::rng;
use crate::training::TrainConfig;

const ROWS: usize = 4;
const COLS: usize = 7;

/// Junctions without a pressure sensor.
const UNMEASURED: [&str; 5] = ["J0_3", "J1_5", "J2_1", "J2_4", "J3_2"];

fn jid(r: usize, c: usize) -> String {
    format!("J{r}_{c}")
}

/// Reservoir, two pumps, one tank and a 4×7 looped junction grid (30 nodes).
pub fn benchmark_network() -> NetworkGraph {
    let mut nodes = vec![Node::reservoir("R1", 40.0)];
    for r in 0..ROWS {
        for c in 0..COLS {
            let elevation = 10.0 + 1.5 * c as f64 + 2.0 * ((r * 7 + c * 3) % 5) as f64;
            let demand = 0.004 + 0.001 * ((r * 5 + c * 2) % 4) as f64;
            let mut j = Node::junction(&jid(r, c), elevation, demand);
            j.measured = !UNMEASURED.contains(&j.id.as_str());
            nodes.push(j);
        }
    }
    nodes.push(Node::tank("T1", 48.0, 4000.0, 5.0));

    let mut edges = vec![
        Edge::pump("P1", "R1", &jid(0, 0), 50.0, 2500.0),
        Edge::pump("P2", "R1", &jid(3, 0), 50.0, 2500.0),
    ];
    let mut k = 0;
    let mut pipe = |edges: &mut Vec<Edge>, a: String, b: String, length: f64, diameter: f64, c: f64| {
        k += 1;
        edges.push(Edge::pipe(&format!("L{k}"), &a, &b, length, diameter, c));
    };
    for r in 0..ROWS {
        for c in 0..COLS - 1 {
            let d = if r == 0 || r == ROWS - 1 { 0.25 } else { 0.15 };
            let rough = 100.0 + 5.0 * ((r + 2 * c) % 5) as f64;
            pipe(&mut edges, jid(r, c), jid(r, c + 1), 350.0 + 25.0 * ((r + c) % 3) as f64, d, rough);
        }
    }
    for c in (0..COLS).step_by(2) {
        for r in 0..ROWS - 1 {
            pipe(&mut edges, jid(r, c), jid(r + 1, c), 300.0, 0.15, 110.0);
        }
    }
    pipe(&mut edges, jid(1, COLS - 1), "T1".to_string(), 200.0, 0.25, 120.0);
    NetworkGraph::new(nodes, edges).expect("benchmark network is valid")
}

/// Smooth diurnal demand multipliers with morning and evening peaks.
pub fn daily_pattern() -> Vec<f64> {
    use std::f64::consts::PI;
    (0..24)
        .map(|h| {
            let x = h as f64;
            1.0 + 0.3 * (2.0 * PI * (x - 6.0) / 24.0).sin() + 0.1 * (4.0 * PI * (x - 3.0) / 24.0).sin()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub days: usize,
    pub noise_std: f64,
    pub train_per_kind: usize,
    pub val_per_kind: usize,
    pub test_per_kind: usize,
    /// Attack-free series used to calibrate thresholds.
    pub clean_val: usize,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            days: 2,
            noise_std: 0.005,
            train_per_kind: 8,
            val_per_kind: 3,
            test_per_kind: 5,
            clean_val: 2,
            seed: 2024,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub split: Split,
    pub kind: AttackKind,
    pub index: usize,
    pub seed: u64,
    pub spec: AttackSpec,
    pub series: ScadaSeries,
}

#[derive(Clone, Debug)]
pub struct Benchmark {
    pub config: BenchmarkConfig,
    pub g: NetworkGraph,
    pub train: Vec<Scenario>,
    pub val: Vec<Scenario>,
    pub test: Vec<Scenario>,
    pub clean: Vec<ScadaSeries>,
}

/// Minimum nominal flow on a pipe whose meter can be attacked, m³/s.
pub const MIN_ATTACK_FLOW: f64 = 0.01;

/// Pipes carrying at least `MIN_ATTACK_FLOW` at base demand with both pumps
/// running. A relative offset on a near-stagnant cross-connection stays
/// below the sensor noise.
pub fn attackable_meters(g: &NetworkGraph) -> Vec<String> {
    let demand: Vec<f64> = g.nodes().iter().map(|n| n.demand()).collect();
    let pumps = vec![true; g.edges_of_kind(EdgeKind::Pump).len()];
    let state = solve_steady_state(g, &demand, &pumps).expect("benchmark network solves");
    g.edges_of_kind(EdgeKind::Pipe)
        .into_iter()
        .filter(|&k| state.flow[k].abs() >= MIN_ATTACK_FLOW)
        .map(|k| g.edge(k).id.clone())
        .collect()
}

/// Draw one attack of `kind` for a series of `steps` hourly steps.
pub fn random_attack(g: &NetworkGraph, kind: AttackKind, steps: usize, seed: u64) -> AttackSpec {
    let mut r = rng::seeded(seed);
    // replays last half a day so the replayed values are out of phase
    let duration = if kind == AttackKind::SensorReplay { 12 } else { r.random_range(8..=14) };
    let start = r.random_range(30..steps - duration - 2);
    let pipes = attackable_meters(g);
    let (target, magnitude) = match kind {
        AttackKind::SensorOffset => (pipes.choose(&mut r).expect("pipes").clone(), r.random_range(0.2..0.4)),
        AttackKind::SensorReplay => (pipes.choose(&mut r).expect("pipes").clone(), 0.0),
        AttackKind::PumpShutdown => {
            let pumps = g.edges_of_kind(EdgeKind::Pump);
            (g.edge(*pumps.choose(&mut r).expect("pumps")).id.clone(), 0.0)
        }
        AttackKind::FlowManipulation => {
            let j = g.nodes_of_kind(NodeKind::Junction);
            (g.node(*j.choose(&mut r).expect("junctions")).id.clone(), r.random_range(6.0..10.0))
        }
    };
    AttackSpec {
        kind,
        target,
        start,
        duration,
        magnitude,
    }
}

fn scenario(g: &NetworkGraph, cfg: &BenchmarkConfig, split: Split, kind: AttackKind, index: usize) -> Result<Scenario> {
    let kind_no = AttackKind::ALL.iter().position(|&k| k == kind).expect("known kind") as u64;
    let seed = rng::derive(cfg.seed, split.stream() * 10_000 + kind_no * 100 + index as u64);
    let clean = generate_series(g, &daily_pattern(), cfg.days, cfg.noise_std, seed)?;
    let spec = random_attack(g, kind, clean.len(), rng::derive(seed, 1));
    let series = inject_attack(&clean, g, &spec)?;
    Ok(Scenario {
        split,
        kind,
        index,
        seed,
        spec,
        series,
    })
}

pub fn build(cfg: &BenchmarkConfig) -> Result<Benchmark> {
    let g = benchmark_network();
    let split = |split: Split, per_kind: usize| -> Result<Vec<Scenario>> {
        let mut out = Vec::new();
        for kind in AttackKind::ALL {
            for i in 0..per_kind {
                out.push(scenario(&g, cfg, split, kind, i)?);
            }
        }
        Ok(out)
    };
    let train = split(Split::Train, cfg.train_per_kind)?;
    let val = split(Split::Val, cfg.val_per_kind)?;
    let test = split(Split::Test, cfg.test_per_kind)?;
    let clean = (0..cfg.clean_val)
        .map(|i| generate_series(&g, &daily_pattern(), cfg.days, cfg.noise_std, rng::derive(cfg.seed, 90_000 + i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Benchmark {
        config: cfg.clone(),
        g,
        train,
        val,
        test,
        clean,
    })
}

/// Training settings sized for a single CPU core: a 12-hour window, h = 8
/// and a higher initial rate than the library default.
pub fn train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        eta0: 1e-2,
        epochs_e: 40,
        seed,
        model: ModelConfig {
            window: 12,
            lstm_hidden: 8,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

/// Feature tensor where only the conservation residuals separate attacked
/// from normal nodes: raw and temporal columns are uniform noise, and an
/// attacked node carries `φ_mass = 1`, `φ_energy = 0.5`. Every 20 steps a
/// new junction is attacked for 8 steps.
pub fn separable_dataset(g: &NetworkGraph, steps: usize, seed: u64) -> FeatureTensor {
    let mut r = rng::seeded(seed);
    let junctions = g.nodes_of_kind(NodeKind::Junction);
    let mut x = FeatureTensor::zeros(steps, g.node_count(), FeatureConfig::default());
    x.node_ids = g.nodes().iter().map(|n| n.id.clone()).collect();
    let mut target = None;
    for t in 0..steps {
        if t % 20 == 6 {
            target = junctions.choose(&mut r).copied();
        } else if t % 20 == 14 {
            target = None;
        }
        for i in 0..g.node_count() {
            let y = u8::from(target == Some(i));
            x.labels[t][i] = y;
            let v = x.get_mut(t, i);
            for f in v.iter_mut().take(Feature::PhiMass as usize) {
                *f = r.random_range(-1.0..1.0);
            }
            v[Feature::PhiMass as usize] = if y == 1 { 1.0 } else { 0.0 };
            v[Feature::PhiEnergy as usize] = if y == 1 { 0.5 } else { 0.0 };
        }
    }
    x
}

pub fn featurize<'a>(
    series: impl IntoIterator<Item = &'a ScadaSeries>,
    g: &NetworkGraph,
    cfg: &FeatureConfig,
) -> Result<Vec<FeatureTensor>> {
    series.into_iter().map(|s| assemble_features(s, g, cfg)).collect()
}

pub fn series_of(scenarios: &[Scenario]) -> Vec<&ScadaSeries> {
    scenarios.iter().map(|s| &s.series).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_shape() {
        let g = benchmark_network();
        assert_eq!(g.node_count(), 30);
        assert_eq!(g.nodes_of_kind(NodeKind::Reservoir).len(), 1);
        assert_eq!(g.nodes_of_kind(NodeKind::Tank).len(), 1);
        assert_eq!(g.edges_of_kind(EdgeKind::Pump).len(), 2);
        let pattern = daily_pattern();
        assert_eq!(pattern.len(), 24);
        assert!(pattern.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn fixture_file_matches_builder() {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/net30.json");
        let text = std::fs::read_to_string(path).unwrap();
        let g = NetworkGraph::from_json_str(&text, "net30.json").unwrap();
        assert_eq!(g.to_json(), benchmark_network().to_json());
    }

    #[test]
    fn pressures_are_positive_with_either_pump() {
        let g = benchmark_network();
        let demand: Vec<f64> = g.nodes().iter().map(|n| n.demand() * 1.4).collect();
        for status in [[true, true], [true, false], [false, true]] {
            let st = solve_steady_state(&g, &demand, &status).unwrap();
            for i in g.nodes_of_kind(NodeKind::Junction) {
                assert!(st.pressure(&g, i) > 2.0, "{} at {:?}", g.node(i).id, status);
            }
        }
    }

    #[test]
    fn scenarios_are_deterministic() {
        let cfg = BenchmarkConfig {
            train_per_kind: 1,
            val_per_kind: 0,
            test_per_kind: 0,
            clean_val: 0,
            ..Default::default()
        };
        let a = build(&cfg).unwrap();
        let b = build(&cfg).unwrap();
        assert_eq!(a.train.len(), 4);
        for (x, y) in a.train.iter().zip(&b.train) {
            assert_eq!(x.series, y.series);
            assert!(x.series.network_labels().iter().any(|&l| l == 1));
        }
    }
}
