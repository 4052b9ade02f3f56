//! Subcommand implementations.

use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use serde::Serialize;

use pgat::benchmark::daily_pattern;
use pgat::eval::explain::{
    attack_source, explain_attack, integrated_gradients, normal_feature_means, window_at, AttackExplanation, GroupShare,
    IgResult,
};
use pgat::eval::metrics::network_alarm;
use pgat::eval::report::Report;
use pgat::eval::sweep::{
    ablation_run, evaluate_point, outage_sweep, roughness_sweep, Ablation, AblationData, SweepOptions, SweepResult,
};
use pgat::features::{assemble_features, FeatureConfig, FeatureGroup, FeatureTensor, FeatureToggles, FEATURE_NAMES};
use pgat::hydrosim::{generate_series, inject_attack, mask_sensors, AttackSpec, ScadaSeries};
use pgat::io::{csv_bytes, fmt_f64, read_json, write_atomic, write_json};
use pgat::model::{Checkpoint, Model};
use pgat::training::{save_history, train, TrainConfig};
use pgat::{load_network, save_network, NetworkGraph};

use crate::config::{config_hash, Provenance, RunConfig};
use crate::{
    AttackArgs, Axis, Command, DetectArgs, EvaluateArgs, ExplainArgs, FeaturizeArgs, NetCommand, SimulateArgs,
    SweepArgs, TrainArgs,
};

/// A problem with the invocation itself; maps to exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub struct Context {
    pub seed: Option<u64>,
    pub cfg: RunConfig,
}

impl Context {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn sweep_options(&self) -> SweepOptions {
        SweepOptions {
            tau: self.cfg.eval.tau,
            sustain: self.cfg.eval.sustain,
            n_resamples: self.cfg.eval.n_resamples,
            seed: self.seed(),
        }
    }

    fn train_config(&self) -> TrainConfig {
        let mut c = self.cfg.train.clone();
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c
    }
}

pub fn dispatch(ctx: &Context, cmd: Command) -> Result<()> {
    match cmd {
        Command::Net(NetCommand::Validate { file }) => net_validate(&file),
        Command::Simulate(a) => simulate(ctx, a),
        Command::Attack(a) => attack(ctx, a),
        Command::Featurize(a) => featurize(ctx, a),
        Command::Train(a) => train_cmd(ctx, a),
        Command::Detect(a) => detect(ctx, a),
        Command::Evaluate(a) => evaluate(ctx, a),
        Command::Sweep(a) => sweep(ctx, a),
        Command::Explain(a) => explain(ctx, a),
    }
}

const NETWORK_FILE: &str = "network.json";
const SERIES_META: &str = "series.json";

fn net_validate(file: &Path) -> Result<()> {
    let g = load_network(file)?;
    println!("{}", g.summary());
    Ok(())
}

fn save_series_dir(s: &ScadaSeries, g: &NetworkGraph, dir: &Path) -> Result<()> {
    s.save(dir)?;
    save_network(g, dir.join(NETWORK_FILE))?;
    Ok(())
}

/// A series directory and its network: `--net` when given, else the copy
/// stored beside the series.
fn load_series_dir(dir: &Path, net: Option<&Path>) -> Result<(ScadaSeries, NetworkGraph)> {
    if !dir.join(SERIES_META).is_file() {
        return Err(usage(format!("{} is not a series directory", dir.display())));
    }
    let g = load_network(net.map_or_else(|| dir.join(NETWORK_FILE), Path::to_path_buf))?;
    let s = ScadaSeries::load(dir)?;
    if s.node_ids.len() != g.node_count() {
        return Err(usage(format!(
            "series in {} has {} nodes, network has {}",
            dir.display(),
            s.node_ids.len(),
            g.node_count()
        )));
    }
    Ok((s, g))
}

/// `path` itself when it is a series directory, else its series
/// subdirectories in name order.
fn series_dirs(path: &Path) -> Result<Vec<PathBuf>> {
    if path.join(SERIES_META).is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = std::fs::read_dir(path).with_context(|| format!("reading {}", path.display()))?;
    let mut dirs = Vec::new();
    for e in entries {
        let p = e.with_context(|| format!("reading {}", path.display()))?.path();
        if p.join(SERIES_META).is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(usage(format!("no series found under {}", path.display())));
    }
    Ok(dirs)
}

/// Every series under `path`, sharing one network.
fn load_collection(path: &Path, net: Option<&Path>) -> Result<(Vec<ScadaSeries>, NetworkGraph)> {
    let mut out = Vec::new();
    let mut graph = None;
    for d in series_dirs(path)? {
        let (s, g) = load_series_dir(&d, net)?;
        match &graph {
            None => graph = Some(g),
            Some(first) if first.to_json() != g.to_json() => {
                return Err(usage(format!("{} uses a different network", d.display())));
            }
            Some(_) => {}
        }
        out.push(s);
    }
    Ok((out, graph.expect("at least one series")))
}

fn simulate(ctx: &Context, a: SimulateArgs) -> Result<()> {
    let g = load_network(&a.net)?;
    let pattern: Vec<f64> = match &a.pattern {
        Some(p) => read_json(p)?,
        None => daily_pattern(),
    };
    if a.days == 0 {
        return Err(usage("--days must be at least 1"));
    }
    let seed = ctx.seed();
    let s = generate_series(&g, &pattern, a.days, a.noise, seed)?;
    save_series_dir(&s, &g, &a.out)?;
    #[derive(Serialize)]
    struct Settings<'a> {
        network: &'a str,
        days: usize,
        noise: f64,
        pattern: &'a [f64],
    }
    let hash = config_hash(&Settings {
        network: &g.to_json(),
        days: a.days,
        noise: a.noise,
        pattern: &pattern,
    });
    Provenance::new("simulate", seed, hash).write_dir(&a.out)?;
    log::info!("simulated {} steps into {}", s.len(), a.out.display());
    Ok(())
}

fn read_scenario(path: &Path) -> Result<Vec<AttackSpec>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let specs = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|s| vec![s])
    };
    specs.with_context(|| format!("parsing attack scenario {}", path.display()))
}

fn attack(ctx: &Context, a: AttackArgs) -> Result<()> {
    let mut specs = read_scenario(&a.scenario)?;
    if specs.is_empty() {
        return Err(usage(format!("{} holds no attacks", a.scenario.display())));
    }
    let (mut s, g) = load_series_dir(&a.input, a.net.as_deref())?;
    // physical attacks re-solve the hydraulics, so they go before sensor tampering
    specs.sort_by_key(|x| !x.kind.is_physical());
    for spec in &specs {
        s = inject_attack(&s, &g, spec).with_context(|| format!("injecting attack on `{}`", spec.target))?;
    }
    save_series_dir(&s, &g, &a.out)?;
    Provenance::new("attack", ctx.seed(), config_hash(&specs)).write_dir(&a.out)?;
    Ok(())
}

fn featurize(ctx: &Context, a: FeaturizeArgs) -> Result<()> {
    let (s, g) = load_series_dir(&a.input, a.net.as_deref())?;
    let mut cfg = ctx.cfg.features.clone();
    if let Some(w) = a.window {
        cfg.window = w;
    }
    if let Some(list) = &a.ablate {
        cfg.toggles = FeatureToggles::from_ablations(list)?;
    }
    if let Some(d) = a.delta_roughness {
        cfg.roughness_delta = d;
    }
    let s = match a.mask_fraction {
        Some(f) => mask_sensors(&s, f, ctx.seed())?,
        None => s,
    };
    let x = assemble_features(&s, &g, &cfg)?;
    x.save(&a.out)?;
    #[derive(Serialize)]
    struct Settings<'a> {
        features: &'a FeatureConfig,
        mask_fraction: Option<f64>,
    }
    let hash = config_hash(&Settings {
        features: &cfg,
        mask_fraction: a.mask_fraction,
    });
    Provenance::new("featurize", ctx.seed(), hash).write_beside(&a.out)?;
    Ok(())
}

fn load_tensors(paths: &[PathBuf]) -> Result<Vec<FeatureTensor>> {
    paths
        .iter()
        .map(|p| FeatureTensor::load(p).with_context(|| format!("loading features {}", p.display())))
        .collect()
}

fn history_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".history.csv");
    p.into()
}

fn train_cmd(ctx: &Context, a: TrainArgs) -> Result<()> {
    let g = load_network(&a.net)?;
    let tr = load_tensors(&a.features)?;
    let val = if a.val.is_empty() { tr.clone() } else { load_tensors(&a.val)? };
    let first = &tr[0].config;
    if tr.iter().chain(&val).any(|x| x.config.toggles != first.toggles) {
        return Err(usage("feature tensors were built with different ablation toggles"));
    }
    let mut cfg = ctx.train_config();
    if let Some(e) = a.epochs {
        cfg.epochs_e = e;
    }
    let out = train(&tr, &val, &g, &cfg)?;
    let hash = config_hash(&cfg);
    Checkpoint::new(out.params, cfg.seed, hash).save(&a.out)?;
    save_history(&history_path(&a.out), &out.history)?;
    match (&out.best_epoch, &out.best_val) {
        (Some(e), Some(m)) => println!("best epoch {e}, validation F1 {:.4}", m.f1),
        _ => println!("trained {} epochs", out.history.len()),
    }
    Ok(())
}

fn load_model(path: &Path, g: &NetworkGraph) -> Result<(Checkpoint, Model)> {
    let ckpt = Checkpoint::load(path)?;
    let model = Model::new(ckpt.params.clone(), g)?;
    Ok((ckpt, model))
}

fn detect(ctx: &Context, a: DetectArgs) -> Result<()> {
    let g = load_network(&a.net)?;
    let (ckpt, model) = load_model(&a.checkpoint, &g)?;
    let x = FeatureTensor::load(&a.features)?;
    let tau = a.tau.unwrap_or(ctx.cfg.eval.tau);
    let scores = model.score_series(&x)?;
    let alarms = network_alarm(&scores, tau);
    let labels = x.network_labels();
    let header: Vec<String> = ["time", "max_score", "top_node", "alarm", "label", "lambda_micro", "lambda_meso", "lambda_macro"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows = scores.iter().enumerate().map(|(t, b)| {
        let (top, max) = b
            .final_scores
            .iter()
            .enumerate()
            .max_by(|p, q| p.1.total_cmp(q.1))
            .map(|(i, &v)| (i, v))
            .unwrap_or((0, 0.0));
        vec![
            t.to_string(),
            fmt_f64(max),
            x.node_ids[top].clone(),
            alarms[t].to_string(),
            labels[t].to_string(),
            fmt_f64(b.lambda[0]),
            fmt_f64(b.lambda[1]),
            fmt_f64(b.lambda[2]),
        ]
    });
    write_atomic(&a.out, &csv_bytes(&header, rows)?)?;
    #[derive(Serialize)]
    struct Settings<'a> {
        checkpoint: &'a str,
        tau: f64,
    }
    let hash = config_hash(&Settings {
        checkpoint: &ckpt.config_hash,
        tau,
    });
    Provenance::new("detect", ckpt.seed, hash).write_beside(&a.out)?;
    let raised = alarms.iter().filter(|&&v| v == 1).count();
    println!("{raised} of {} steps above tau {tau}", alarms.len());
    Ok(())
}

/// Feature settings for scoring with a checkpoint: the run configuration
/// with the toggles the model was trained on.
fn scoring_features(ctx: &Context, ckpt: &Checkpoint) -> FeatureConfig {
    FeatureConfig {
        toggles: ckpt.params.config.features,
        ..ctx.cfg.features.clone()
    }
}

fn featurize_all(series: &[ScadaSeries], g: &NetworkGraph, cfg: &FeatureConfig) -> Result<Vec<FeatureTensor>> {
    Ok(series.iter().map(|s| assemble_features(s, g, cfg)).collect::<pgat::Result<Vec<_>>>()?)
}

/// Step whose window is attributed for an attack: its last active step.
fn attack_step(spec: &AttackSpec, steps: usize) -> Option<usize> {
    let end = (spec.start + spec.duration).min(steps);
    (end > spec.start).then(|| end - 1)
}

fn mean_shares(results: &[IgResult]) -> Vec<GroupShare> {
    if results.is_empty() {
        return Vec::new();
    }
    FeatureGroup::ALL
        .iter()
        .map(|&group| GroupShare {
            group,
            share: results.iter().map(|r| r.share(group)).sum::<f64>() / results.len() as f64,
        })
        .collect()
}

fn evaluate(ctx: &Context, a: EvaluateArgs) -> Result<()> {
    let (series, g) = load_collection(&a.data, a.net.as_deref())?;
    let (ckpt, model) = load_model(&a.checkpoint, &g)?;
    let fcfg = scoring_features(ctx, &ckpt);
    let tensors = featurize_all(&series, &g, &fcfg)?;
    let opts = ctx.sweep_options();
    let point = evaluate_point(&model, &tensors, "evaluate", 0.0, &opts)?;

    let baseline = normal_feature_means(&tensors).ok();
    let mut rhos = Vec::new();
    let mut igs = Vec::new();
    for x in &tensors {
        for (k, spec) in x.attack_log.iter().enumerate() {
            let Some(t) = attack_step(spec, x.steps) else { continue };
            if let Some(r) = explain_attack(&model, x, &g, k)?.spearman_rho {
                rhos.push(r);
            }
            if let Some(base) = &baseline {
                let target = attack_source(&g, spec)?;
                igs.push(integrated_gradients(&model, &window_at(&model, x, t), base, target, ctx.cfg.eval.ig_steps)?);
            }
        }
    }

    #[derive(Serialize)]
    struct Settings<'a> {
        checkpoint: &'a str,
        features: &'a FeatureConfig,
        eval: &'a crate::config::EvalConfig,
    }
    let hash = config_hash(&Settings {
        checkpoint: &ckpt.config_hash,
        features: &fcfg,
        eval: &ctx.cfg.eval,
    });
    let mut report = Report::new(ctx.seed(), hash, point.metrics.clone(), point.ci.clone());
    report.spearman_rho = (!rhos.is_empty()).then(|| rhos.iter().sum::<f64>() / rhos.len() as f64);
    report.ig_shares = mean_shares(&igs);
    write_json(&a.report, &report)?;
    println!(
        "F1 {:.4} [{:.4}, {:.4}], precision {:.4}, recall {:.4}, detected {}/{}",
        point.metrics.f1,
        point.ci.lo,
        point.ci.hi,
        point.metrics.precision,
        point.metrics.recall,
        point.metrics.detected,
        point.metrics.detected + point.metrics.undetected
    );
    Ok(())
}

fn sweep(ctx: &Context, a: SweepArgs) -> Result<()> {
    let (series, g) = load_collection(&a.data, a.net.as_deref())?;
    let refs: Vec<&ScadaSeries> = series.iter().collect();
    let opts = ctx.sweep_options();
    let need_ckpt = || -> Result<(Checkpoint, Model)> {
        let p = a
            .checkpoint
            .as_deref()
            .ok_or_else(|| usage("--checkpoint is required for this axis"))?;
        load_model(p, &g)
    };
    let values = |default: &[f64]| if a.values.is_empty() { default.to_vec() } else { a.values.clone() };

    #[derive(Serialize)]
    struct Settings<'a> {
        axis: &'a str,
        checkpoint: Option<&'a str>,
        values: &'a [f64],
        mask_seeds: &'a [u64],
        variants: &'a [String],
        features: &'a FeatureConfig,
        train: Option<&'a TrainConfig>,
        eval: &'a crate::config::EvalConfig,
    }
    let (result, hash): (SweepResult, String) = match a.axis {
        Axis::Roughness => {
            let (ckpt, model) = need_ckpt()?;
            let fcfg = scoring_features(ctx, &ckpt);
            let clean = match &a.clean {
                Some(p) => load_collection(p, a.net.as_deref())?.0,
                None => Vec::new(),
            };
            let clean_refs: Vec<&ScadaSeries> = clean.iter().collect();
            let deltas = values(&ctx.cfg.sweep.deltas);
            let r = roughness_sweep(&model, &g, &refs, &clean_refs, &fcfg, &deltas, &opts)?;
            let h = config_hash(&Settings {
                axis: "roughness",
                checkpoint: Some(&ckpt.config_hash),
                values: &deltas,
                mask_seeds: &[],
                variants: &[],
                features: &fcfg,
                train: None,
                eval: &ctx.cfg.eval,
            });
            (r, h)
        }
        Axis::Outage => {
            let (ckpt, model) = need_ckpt()?;
            let fcfg = scoring_features(ctx, &ckpt);
            let fractions = values(&ctx.cfg.sweep.fractions);
            let seeds = if a.mask_seeds.is_empty() { ctx.cfg.sweep.mask_seeds.clone() } else { a.mask_seeds.clone() };
            let r = outage_sweep(&model, &g, &refs, &fcfg, &fractions, &seeds, &opts)?;
            let h = config_hash(&Settings {
                axis: "outage",
                checkpoint: Some(&ckpt.config_hash),
                values: &fractions,
                mask_seeds: &seeds,
                variants: &[],
                features: &fcfg,
                train: None,
                eval: &ctx.cfg.eval,
            });
            (r, h)
        }
        Axis::Ablation => {
            let train_dir = a.train.as_deref().ok_or_else(|| usage("--train is required for the ablation axis"))?;
            let (train_s, tg) = load_collection(train_dir, a.net.as_deref())?;
            if tg.to_json() != g.to_json() {
                return Err(usage("training and evaluation series use different networks"));
            }
            let val_s = match &a.val {
                Some(p) => load_collection(p, a.net.as_deref())?.0,
                None => train_s.clone(),
            };
            let names = if a.variants.is_empty() { ctx.cfg.sweep.variants.clone() } else { a.variants.clone() };
            let variants = names.iter().map(|n| Ablation::parse(n)).collect::<pgat::Result<Vec<_>>>()?;
            let tr: Vec<&ScadaSeries> = train_s.iter().collect();
            let va: Vec<&ScadaSeries> = val_s.iter().collect();
            let cfg = ctx.train_config();
            let data = AblationData {
                train: &tr,
                val: &va,
                test: &refs,
            };
            let r = ablation_run(&g, &data, &ctx.cfg.features, &cfg, &variants, &opts)?;
            let h = config_hash(&Settings {
                axis: "ablation",
                checkpoint: None,
                values: &[],
                mask_seeds: &[],
                variants: &names,
                features: &ctx.cfg.features,
                train: Some(&cfg),
                eval: &ctx.cfg.eval,
            });
            (r, h)
        }
    };
    let reference = result
        .points
        .iter()
        .find(|p| p.setting == result.reference)
        .expect("reference point present");
    let mut report = Report::new(ctx.seed(), hash, reference.metrics.clone(), reference.ci.clone());
    report.cohens_d = result.effect_size_cohens_d;
    report.spearman_rho = result.spearman_rho;
    for p in &result.points {
        let base = p.baseline.as_ref().map(|b| format!(", baseline F1 {:.4}", b.f1)).unwrap_or_default();
        println!("{:>16}  F1 {:.4} [{:.4}, {:.4}]{base}", p.setting, p.metrics.f1, p.ci.lo, p.ci.hi);
    }
    report.sweep_points = result.points;
    write_json(&a.report, &report)?;
    Ok(())
}

fn explain(ctx: &Context, a: ExplainArgs) -> Result<()> {
    let (s, g) = load_series_dir(&a.data, a.net.as_deref())?;
    let (ckpt, model) = load_model(&a.checkpoint, &g)?;
    let fcfg = scoring_features(ctx, &ckpt);
    let x = assemble_features(&s, &g, &fcfg)?;
    if a.attack >= x.attack_log.len() {
        return Err(usage(format!(
            "--attack {} out of range; the series logs {} attack(s)",
            a.attack,
            x.attack_log.len()
        )));
    }
    let ex: AttackExplanation = explain_attack(&model, &x, &g, a.attack)?;
    let spec = &x.attack_log[a.attack];
    let t = attack_step(spec, x.steps).ok_or_else(|| usage("attack window lies outside the series"))?;
    let target = attack_source(&g, spec)?;
    let baseline = normal_feature_means(std::slice::from_ref(&x))?;
    let steps = a.steps.unwrap_or(ctx.cfg.eval.ig_steps);
    let window = window_at(&model, &x, t);
    let ig = integrated_gradients(&model, &window, &baseline, target, steps)?;

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let header = |cols: &[&str]| cols.iter().map(|s| s.to_string()).collect::<Vec<_>>();

    let rows = g.edges().iter().enumerate().map(|(k, e)| {
        vec![
            e.id.clone(),
            e.from.clone(),
            e.to.clone(),
            fmt_f64(ex.edge_attention[k]),
            fmt_f64(ex.reference[k]),
        ]
    });
    write_atomic(
        &a.out.join("attention_edges.csv"),
        &csv_bytes(&header(&["edge", "from", "to", "attention", "path_reference"]), rows)?,
    )?;

    let first = model.window_range(t).start;
    let n = model.nodes();
    let rows = ig.attributions.iter().enumerate().flat_map(|(w, frame)| {
        let ids = &x.node_ids;
        (0..n).flat_map(move |i| {
            FEATURE_NAMES.iter().enumerate().map(move |(f, name)| {
                vec![
                    (first + w).to_string(),
                    ids[i].clone(),
                    name.to_string(),
                    fmt_f64(frame[i * FEATURE_NAMES.len() + f]),
                ]
            })
        })
    });
    write_atomic(
        &a.out.join("attribution.csv"),
        &csv_bytes(&header(&["time", "node", "feature", "attribution"]), rows)?,
    )?;

    let scores = model.score_series(&x)?;
    let mut cols = vec!["time".to_string(), "label".to_string()];
    cols.extend(x.node_ids.iter().cloned());
    let labels = x.network_labels();
    let rows = scores.iter().enumerate().map(|(t, b)| {
        let mut r = vec![t.to_string(), labels[t].to_string()];
        r.extend(b.final_scores.iter().map(|&v| fmt_f64(v)));
        r
    });
    write_atomic(&a.out.join("scores.csv"), &csv_bytes(&cols, rows)?)?;

    #[derive(Serialize)]
    struct Summary<'a> {
        tool_version: &'a str,
        seed: u64,
        config_hash: String,
        attack: &'a AttackSpec,
        source: &'a str,
        attention_path_spearman: Option<f64>,
        ig_time: usize,
        ig_target: &'a str,
        ig_steps: usize,
        score: f64,
        baseline_score: f64,
        completeness_gap: f64,
        feature_totals: Vec<(&'a str, f64)>,
        group_shares: &'a [GroupShare],
    }
    #[derive(Serialize)]
    struct Settings<'a> {
        checkpoint: &'a str,
        features: &'a FeatureConfig,
        attack: usize,
        steps: usize,
    }
    let summary = Summary {
        tool_version: env!("CARGO_PKG_VERSION"),
        seed: ctx.seed(),
        config_hash: config_hash(&Settings {
            checkpoint: &ckpt.config_hash,
            features: &fcfg,
            attack: a.attack,
            steps,
        }),
        attack: spec,
        source: &ex.source,
        attention_path_spearman: ex.spearman_rho,
        ig_time: t,
        ig_target: &g.node(target).id,
        ig_steps: steps,
        score: ig.score,
        baseline_score: ig.baseline_score,
        completeness_gap: ig.completeness_gap,
        feature_totals: FEATURE_NAMES.iter().copied().zip(ig.feature_totals).collect(),
        group_shares: &ig.group_shares,
    };
    write_json(&a.out.join("explain.json"), &summary)?;
    println!(
        "attention-path rho {}, physics attribution share {:.3}, completeness gap {:.2e}",
        ex.spearman_rho.map_or("n/a".into(), |r| format!("{r:.3}")),
        ig.physics_share(),
        ig.completeness_gap
    );
    Ok(())
}
