//! Conservation-law violation features and per-node feature vectors.
//!
//! Every node gets an 8-entry vector per timestep, see [`Feature`]. Nodes
//! without an active sensor are filled by distance-softmax interpolation
//! over the measured nodes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hydrosim::{AttackSpec, ScadaSeries};
use crate::io::{csv_bytes, fmt_f64, parse_f64, read_csv, read_json, write_atomic, write_json};
use crate::network::{EdgeKind, LinkStatus, NetworkGraph, NodeKind};

pub const HW_COEFFICIENT: f64 = 10.67;
pub const HW_EXPONENT: f64 = 1.852;
pub const HW_DIAMETER_EXPONENT: f64 = 4.87;
pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_SIGMA: f64 = 2.0;
pub const DEFAULT_WINDOW: usize = 24;
pub const NUM_FEATURES: usize = 8;

/// Feature layout. The index of each variant is its column.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feature {
    Pressure = 0,
    NetFlow = 1,
    TankLevel = 2,
    RollingMean = 3,
    RollingStd = 4,
    LagDiff = 5,
    PhiMass = 6,
    PhiEnergy = 7,
}

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "pressure",
    "net_flow",
    "tank_level",
    "rolling_mean",
    "rolling_std",
    "lag1_diff",
    "phi_mass",
    "phi_energy",
];

/// Attribution groups over the feature layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    Raw,
    Temporal,
    PhiMass,
    PhiEnergy,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 4] = [
        FeatureGroup::PhiMass,
        FeatureGroup::PhiEnergy,
        FeatureGroup::Raw,
        FeatureGroup::Temporal,
    ];

    pub fn of(feature: usize) -> FeatureGroup {
        match feature {
            0..=2 => FeatureGroup::Raw,
            3..=5 => FeatureGroup::Temporal,
            6 => FeatureGroup::PhiMass,
            _ => FeatureGroup::PhiEnergy,
        }
    }
}

/// `R` in `h_L = R·|Q|^1.852`.
pub fn hw_resistance(length: f64, diameter: f64, roughness: f64) -> f64 {
    HW_COEFFICIENT * length / (roughness.powf(HW_EXPONENT) * diameter.powf(HW_DIAMETER_EXPONENT))
}

/// Hazen–Williams head loss in meters, signed like `q`.
pub fn head_loss(q: f64, length: f64, diameter: f64, roughness: f64) -> f64 {
    if q == 0.0 {
        return 0.0;
    }
    hw_resistance(length, diameter, roughness) * q.abs().powf(HW_EXPONENT) * q.signum()
}

/// Inflow and outflow totals at node `i`, resolving direction by the sign
/// of each edge flow.
pub fn directed_totals(g: &NetworkGraph, flows: &[f64], i: usize) -> (f64, f64) {
    let (mut inflow, mut outflow) = (0.0, 0.0);
    for &k in g.in_edges(i) {
        let q = flows[k];
        if q >= 0.0 {
            inflow += q;
        } else {
            outflow -= q;
        }
    }
    for &k in g.out_edges(i) {
        let q = flows[k];
        if q >= 0.0 {
            outflow += q;
        } else {
            inflow -= q;
        }
    }
    (inflow, outflow)
}

/// Mass-balance violation at a junction:
/// `|Σin − Σout − D| / (Σin + ε)`, or the raw residual when `normalize` is off.
/// Tanks and reservoirs return 0 (storage absorbs the balance).
pub fn mass_violation(
    g: &NetworkGraph,
    flows: &[f64],
    demand_estimate: f64,
    i: usize,
    eps: f64,
    normalize: bool,
) -> f64 {
    if g.node(i).kind != NodeKind::Junction {
        return 0.0;
    }
    let (inflow, outflow) = directed_totals(g, flows, i);
    let residual = (inflow - outflow - demand_estimate).abs();
    if normalize {
        residual / (inflow + eps)
    } else {
        residual
    }
}

/// Energy-gradient violation on a pipe with heads `h_from`, `h_to` and flow
/// `q` (positive from -> to), using roughness scaled by `roughness_factor`.
pub fn energy_violation(
    g: &NetworkGraph,
    edge: usize,
    h_from: f64,
    h_to: f64,
    q: f64,
    roughness_factor: f64,
    normalize: bool,
) -> Result<f64> {
    let e = g.edge(edge);
    if e.kind != EdgeKind::Pipe {
        return Err(Error::InvalidArgument(format!("`{}` is not a pipe", e.id)));
    }
    if h_from <= 0.0 && h_to <= 0.0 {
        return Err(Error::NonPhysical(format!(
            "both heads on `{}` are non-positive ({h_from}, {h_to})",
            e.id
        )));
    }
    // Orienting i -> j along the flow flips both terms, so the magnitude is
    // the same in edge orientation.
    let hl = head_loss(
        q,
        e.length.unwrap_or(0.0),
        e.diameter.unwrap_or(1.0),
        e.roughness.unwrap_or(100.0) * roughness_factor,
    );
    let numerator = (h_from - h_to - hl).abs();
    Ok(if normalize {
        numerator / h_from.max(h_to)
    } else {
        numerator
    })
}

/// Maximum violation over incident open pipes whose endpoint heads are
/// both known; 0 when there is none.
pub fn node_energy_violation(
    g: &NetworkGraph,
    heads: &[Option<f64>],
    flows: &[f64],
    i: usize,
    roughness_factor: f64,
    normalize: bool,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for &k in g.incident_edges(i) {
        let e = g.edge(k);
        if e.kind != EdgeKind::Pipe || e.status == LinkStatus::Closed {
            continue;
        }
        let (a, b) = g.endpoints(k);
        if let (Some(ha), Some(hb)) = (heads[a], heads[b]) {
            worst = worst.max(energy_violation(g, k, ha, hb, flows[k], roughness_factor, normalize)?);
        }
    }
    Ok(worst)
}

/// Softmax weights `exp(−d/σ) / Σ exp(−d/σ)` over `distances`, evaluated
/// with the minimum distance factored out.
pub fn distance_softmax(distances: &[f64], sigma: f64) -> Vec<f64> {
    let dmin = distances.iter().cloned().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = distances.iter().map(|&d| (-(d - dmin) / sigma).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureToggles {
    pub phi_mass: bool,
    pub phi_energy: bool,
    /// Divide residuals by the inflow / head scale; off gives raw residuals.
    pub normalize: bool,
    /// Fill unmeasured nodes by interpolation; off fills them with zeros.
    pub interpolate: bool,
}

impl Default for FeatureToggles {
    fn default() -> Self {
        FeatureToggles {
            phi_mass: true,
            phi_energy: true,
            normalize: true,
            interpolate: true,
        }
    }
}

impl FeatureToggles {
    /// Parse a comma-separated ablation list such as `phi_mass,normalize`.
    pub fn from_ablations(list: &str) -> Result<Self> {
        let mut t = FeatureToggles::default();
        for flag in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match flag {
                "phi_mass" => t.phi_mass = false,
                "phi_energy" => t.phi_energy = false,
                "phi" | "both_phi" => {
                    t.phi_mass = false;
                    t.phi_energy = false;
                }
                "normalize" | "normalization" => t.normalize = false,
                "interpolate" | "interpolation" => t.interpolate = false,
                other => {
                    return Err(Error::InvalidArgument(format!("unknown ablation flag `{other}`")))
                }
            }
        }
        Ok(t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub window: usize,
    pub epsilon: f64,
    pub sigma: f64,
    pub toggles: FeatureToggles,
    /// Relative roughness error δ: features use `C·(1+δ)`.
    pub roughness_delta: f64,
    /// Relative demand-estimation error: `D̂ = D·(1+err)`.
    pub demand_error: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            window: DEFAULT_WINDOW,
            epsilon: DEFAULT_EPSILON,
            sigma: DEFAULT_SIGMA,
            toggles: FeatureToggles::default(),
            roughness_delta: 0.0,
            demand_error: 0.0,
        }
    }
}

/// Time × node × feature array with its labels and provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor {
    pub steps: usize,
    pub nodes: usize,
    values: Vec<f64>,
    pub measured_mask: Vec<bool>,
    pub config: FeatureConfig,
    pub node_ids: Vec<String>,
    /// Per time, per node attack labels carried over from the series.
    pub labels: Vec<Vec<u8>>,
    pub attack_log: Vec<AttackSpec>,
    pub timestep: f64,
}

impl FeatureTensor {
    pub fn zeros(steps: usize, nodes: usize, config: FeatureConfig) -> Self {
        FeatureTensor {
            steps,
            nodes,
            values: vec![0.0; steps * nodes * NUM_FEATURES],
            measured_mask: vec![true; nodes],
            config,
            node_ids: (0..nodes).map(|i| format!("n{i}")).collect(),
            labels: vec![vec![0; nodes]; steps],
            attack_log: Vec::new(),
            timestep: crate::hydrosim::DEFAULT_TIMESTEP,
        }
    }

    #[inline]
    pub fn get(&self, t: usize, i: usize) -> &[f64] {
        let o = (t * self.nodes + i) * NUM_FEATURES;
        &self.values[o..o + NUM_FEATURES]
    }

    #[inline]
    pub fn get_mut(&mut self, t: usize, i: usize) -> &mut [f64] {
        let o = (t * self.nodes + i) * NUM_FEATURES;
        &mut self.values[o..o + NUM_FEATURES]
    }

    /// All node vectors at step `t`, row-major `nodes × F`.
    pub fn frame(&self, t: usize) -> &[f64] {
        let o = t * self.nodes * NUM_FEATURES;
        &self.values[o..o + self.nodes * NUM_FEATURES]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn network_labels(&self) -> Vec<u8> {
        self.labels
            .iter()
            .map(|row| u8::from(row.iter().any(|&y| y != 0)))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut header: Vec<String> = vec!["time".into(), "node".into()];
        header.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
        header.push("label".into());
        let rows = (0..self.steps).flat_map(|t| {
            (0..self.nodes).map(move |i| {
                let mut row = vec![t.to_string(), self.node_ids[i].clone()];
                row.extend(self.get(t, i).iter().map(|&v| fmt_f64(v)));
                row.push(self.labels[t][i].to_string());
                row
            })
        });
        write_atomic(path, &csv_bytes(&header, rows)?)?;
        write_json(&meta_path(path), &FeatureMeta::from(self))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta: FeatureMeta = read_json(&meta_path(path))?;
        let (header, rows) = read_csv(path)?;
        if header.len() != NUM_FEATURES + 3 {
            return Err(Error::parse(path.display().to_string(), "unexpected column count"));
        }
        let nodes = meta.node_ids.len();
        let steps = meta.steps;
        if rows.len() != steps * nodes {
            return Err(Error::parse(
                path.display().to_string(),
                format!("{} rows, expected {}", rows.len(), steps * nodes),
            ));
        }
        let mut out = FeatureTensor::zeros(steps, nodes, meta.config.clone());
        out.node_ids = meta.node_ids;
        out.measured_mask = meta.measured_mask;
        out.attack_log = meta.attack_log;
        out.timestep = meta.timestep;
        let ctx = path.display().to_string();
        for (r, row) in rows.iter().enumerate() {
            let (t, i) = (r / nodes, r % nodes);
            if row[1] != out.node_ids[i] {
                return Err(Error::parse(&ctx, format!("row {}: expected node {}", r + 2, out.node_ids[i])));
            }
            for f in 0..NUM_FEATURES {
                out.get_mut(t, i)[f] = parse_f64(&row[2 + f], &ctx)?;
            }
            out.labels[t][i] = u8::from(parse_f64(&row[2 + NUM_FEATURES], &ctx)? != 0.0);
        }
        Ok(out)
    }
}

fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    p.into()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureMeta {
    layout: Vec<String>,
    steps: usize,
    node_ids: Vec<String>,
    measured_mask: Vec<bool>,
    config: FeatureConfig,
    timestep: f64,
    attack_log: Vec<AttackSpec>,
}

impl From<&FeatureTensor> for FeatureMeta {
    fn from(t: &FeatureTensor) -> Self {
        FeatureMeta {
            layout: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            steps: t.steps,
            node_ids: t.node_ids.clone(),
            measured_mask: t.measured_mask.clone(),
            config: t.config.clone(),
            timestep: t.timestep,
            attack_log: t.attack_log.clone(),
        }
    }
}

/// Which nodes count as measured for this series: junctions with an
/// unmasked pressure sensor, plus tanks and reservoirs flagged measured.
pub fn measured_mask(series: &ScadaSeries, g: &NetworkGraph) -> Vec<bool> {
    g.nodes()
        .iter()
        .map(|n| match n.kind {
            NodeKind::Junction => series.pressure_ids.contains(&n.id) && !series.is_masked(&n.id),
            _ => n.measured,
        })
        .collect()
}

/// Interpolation weights for unmeasured node `j`: `(measured node, weight)`.
/// Sources are measured junctions only; a tank or reservoir vector has a
/// different meaning in the pressure and level columns.
pub fn interpolation_weights(
    g: &NetworkGraph,
    measured: &[bool],
    j: usize,
    sigma: f64,
) -> Result<Vec<(usize, f64)>> {
    let dist = g.distances_from(j);
    let sources: Vec<usize> = (0..g.node_count())
        .filter(|&i| measured[i] && i != j && dist[i].is_finite() && g.node(i).kind == NodeKind::Junction)
        .collect();
    if sources.is_empty() {
        return Err(Error::Undefined(format!(
            "no measured junction reachable from `{}`",
            g.node(j).id
        )));
    }
    let d: Vec<f64> = sources.iter().map(|&i| dist[i]).collect();
    Ok(sources.into_iter().zip(distance_softmax(&d, sigma)).collect())
}

/// Interpolated feature vector of unmeasured node `j` at step `t`.
pub fn interpolate_unmeasured(
    tensor: &FeatureTensor,
    g: &NetworkGraph,
    j: usize,
    t: usize,
) -> Result<[f64; NUM_FEATURES]> {
    let weights = interpolation_weights(g, &tensor.measured_mask, j, tensor.config.sigma)?;
    Ok(mix(tensor, t, &weights))
}

fn mix(tensor: &FeatureTensor, t: usize, weights: &[(usize, f64)]) -> [f64; NUM_FEATURES] {
    let mut out = [0.0; NUM_FEATURES];
    for &(i, w) in weights {
        for (o, &v) in out.iter_mut().zip(tensor.get(t, i)) {
            *o += w * v;
        }
    }
    out
}

/// Build the full feature tensor for a series.
pub fn assemble_features(series: &ScadaSeries, g: &NetworkGraph, cfg: &FeatureConfig) -> Result<FeatureTensor> {
    let steps = series.len();
    if cfg.window == 0 || steps < cfg.window {
        return Err(Error::InvalidArgument(format!(
            "series of {steps} steps shorter than window {}",
            cfg.window
        )));
    }
    let n = g.node_count();
    let measured = measured_mask(series, g);
    let factor = 1.0 + cfg.roughness_delta;
    let toggles = cfg.toggles;

    let pressure_col: Vec<Option<usize>> = g
        .nodes()
        .iter()
        .map(|node| series.pressure_ids.iter().position(|id| *id == node.id))
        .collect();
    let tank_col: Vec<Option<usize>> = g
        .nodes()
        .iter()
        .map(|node| series.tank_ids.iter().position(|id| *id == node.id))
        .collect();
    let flow_col: Vec<usize> = g
        .edges()
        .iter()
        .map(|e| {
            series
                .flow_ids
                .iter()
                .position(|id| *id == e.id)
                .ok_or_else(|| Error::InvalidArgument(format!("no flow sensor for edge `{}`", e.id)))
        })
        .collect::<Result<_>>()?;

    // observed pressure head per node and time (None when unavailable)
    let observed = |t: usize, i: usize| -> Option<f64> {
        let node = g.node(i);
        match node.kind {
            NodeKind::Reservoir => Some(node.fixed_head.unwrap_or(node.elevation_z) - node.elevation_z),
            NodeKind::Tank => tank_col[i].map(|c| series.tank_levels[t][c]),
            NodeKind::Junction => {
                if measured[i] {
                    pressure_col[i].map(|c| series.pressures[t][c])
                } else {
                    None
                }
            }
        }
    };

    let mut out = FeatureTensor::zeros(steps, n, cfg.clone());
    out.measured_mask = measured.clone();
    out.node_ids = g.nodes().iter().map(|x| x.id.clone()).collect();
    out.labels = series.labels.clone();
    out.attack_log = series.attack_log.clone();
    out.timestep = series.timestep;

    let mut pressure_hist: Vec<Vec<f64>> = vec![Vec::with_capacity(steps); n];
    for t in 0..steps {
        let flows: Vec<f64> = flow_col.iter().map(|&c| series.flows[t][c]).collect();
        let demand_nominal = series.nominal_demand(g, t);
        let heads: Vec<Option<f64>> = (0..n)
            .map(|i| observed(t, i).map(|p| p + g.node(i).elevation_z))
            .collect();
        for i in 0..n {
            if !measured[i] {
                continue;
            }
            let p = observed(t, i).unwrap_or(0.0);
            pressure_hist[i].push(p);
            let hist = &pressure_hist[i];
            let lo = hist.len().saturating_sub(cfg.window);
            let win = &hist[lo..];
            let mean = win.iter().sum::<f64>() / win.len() as f64;
            let var = win.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / win.len() as f64;
            let lag = if hist.len() >= 2 { p - hist[hist.len() - 2] } else { 0.0 };
            let (inflow, outflow) = directed_totals(g, &flows, i);
            let level = tank_col[i].map(|c| series.tank_levels[t][c]).unwrap_or(0.0);
            let phi_m = mass_violation(
                g,
                &flows,
                demand_nominal[i] * (1.0 + cfg.demand_error),
                i,
                cfg.epsilon,
                toggles.normalize,
            );
            let phi_e = node_energy_violation(g, &heads, &flows, i, factor, toggles.normalize)?;
            let v = out.get_mut(t, i);
            v[Feature::Pressure as usize] = p;
            v[Feature::NetFlow as usize] = inflow - outflow;
            v[Feature::TankLevel as usize] = level;
            v[Feature::RollingMean as usize] = mean;
            v[Feature::RollingStd as usize] = var.sqrt();
            v[Feature::LagDiff as usize] = lag;
            v[Feature::PhiMass as usize] = if toggles.phi_mass { phi_m } else { 0.0 };
            v[Feature::PhiEnergy as usize] = if toggles.phi_energy { phi_e } else { 0.0 };
        }
    }

    if toggles.interpolate {
        for j in (0..n).filter(|&j| !measured[j]) {
            let weights = interpolation_weights(g, &measured, j, cfg.sigma)?;
            for t in 0..steps {
                let v = mix(&out, t, &weights);
                out.get_mut(t, j).copy_from_slice(&v);
            }
        }
    }
    Ok(out)
}
