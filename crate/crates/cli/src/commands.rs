use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Child, Command};
use std::time::Instant;

use clap::Args;
use serde_json::json;

use homomorph_core::agents::{evaluate_policy, metrics_csv, parse_metrics_csv, train_policy as train_one, Agent, AgentConfig, EpisodeRecord};
use homomorph_core::analysis::{
    aggregate_curves, curves_csv, dump_grid_cells, dump_grid_samples, dump_nav_samples, plot_curves, plot_latent_map,
    report_csv, report_markdown, runs_from_records, summarize, LatentDump, Metric,
};
use homomorph_core::dataset;
use homomorph_core::envs::{EnvConfig, GridWorldConfig};
use homomorph_core::homoverify::{
    check_proposition2, mirror_quotient, quotient, verify_lifting, HomomorphismMap, Prop2Instance, TabularMdp,
};
use homomorph_core::nets::{Checkpoint, ModelBundle};
use homomorph_core::pipeline::{
    collect_transitions, run_pipeline, stage_fingerprints, ExperimentConfig, RunManifest, StageRecord, StageStatus,
    CONFIG_FILE, MANIFEST_FILE,
};
use homomorph_core::repr::{train_representation, Baseline};
use homomorph_core::{rng, Error, Result};

use crate::{AgentKind, ConfigArgs, EnvPreset, OUTPUT_ROOT_ENV};

/// Tolerances reported by `verify-homomorphism`.
const LIFT_TOL: f64 = 1e-10;
const PROP2_TOL: f64 = 1e-6;
const PROP2_FD_TOL: f64 = 1e-4;

/// Places relative output paths under `$HOMOMORPH_OUTPUT_ROOT` when set.
pub fn output_path(p: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if p.is_relative() && !root.is_empty() => PathBuf::from(root).join(p),
        _ => p.to_path_buf(),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn env_override(preset: EnvPreset) -> String {
    let table = match preset {
        EnvPreset::Grid6 => r#"{ kind = "grid", grid_n = 6, n_actions = 4 }"#,
        EnvPreset::Grid14 => r#"{ kind = "grid", grid_n = 14, n_actions = 8 }"#,
        EnvPreset::Nav => r#"{ kind = "nav" }"#,
    };
    format!("env={table}")
}

/// Config file (or defaults), then flag-derived overrides, then `--set`.
fn resolve(args: &ConfigArgs, flags: Vec<String>) -> Result<ExperimentConfig> {
    let text = match &args.config {
        Some(p) => read(p)?,
        None => String::new(),
    };
    let overrides: Vec<String> = flags.into_iter().chain(args.set.iter().cloned()).collect();
    ExperimentConfig::from_toml_with_overrides(&text, &overrides)
}

fn env_flags(env: Option<EnvPreset>) -> Vec<String> {
    env.map(env_override).into_iter().collect()
}

/// Single-stage manifest for the standalone subcommands.
fn finish(out: &Path, config: &ExperimentConfig, stage: usize, mut outputs: Vec<String>, started: Instant) -> Result<()> {
    write(&out.join(CONFIG_FILE), config.to_toml()?)?;
    let fps = stage_fingerprints(config)?;
    let wall = started.elapsed().as_secs_f64();
    outputs.sort();
    let manifest = RunManifest {
        name: config.name.clone(),
        config_path: CONFIG_FILE.into(),
        config_fingerprint: homomorph_core::pipeline::fingerprint(config)?,
        code_version: env!("CARGO_PKG_VERSION").into(),
        stages: vec![StageRecord {
            name: homomorph_core::pipeline::STAGES[stage].into(),
            fingerprint: fps[stage].clone(),
            status: StageStatus::Ran,
            outputs,
            wall_clock_s: wall,
            error: None,
        }],
        wall_clock_s: wall,
    };
    write(&out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")
}

pub fn collect(args: &ConfigArgs, env: Option<EnvPreset>, n: Option<usize>, seed: Option<u64>, out: &Path) -> Result<()> {
    let started = Instant::now();
    let mut flags = env_flags(env);
    flags.extend(n.map(|n| format!("data.n_transitions={n}")));
    flags.extend(seed.map(|s| format!("data.seed={s}")));
    let c = resolve(args, flags)?;
    let out = output_path(out);
    let data = collect_transitions(&c.env, c.data.n_transitions, c.data.seed)?;
    let header = dataset::save(&out, &c.env.build()?.name(), &data)?;
    println!("collected {} transitions into {}", header.count, out.display());
    finish(&out, &c, 0, vec!["header.json".into(), "transitions.bin".into()], started)
}

pub fn train_repr(args: &ConfigArgs, data: &Path, baseline: Option<String>, epochs: Option<usize>, out: &Path) -> Result<()> {
    let started = Instant::now();
    let mut flags = Vec::new();
    if let Some(b) = baseline {
        let b: Baseline = b.parse()?;
        flags.push(format!("repr.baseline=\"{}\"", b.name()));
    }
    flags.extend(epochs.map(|e| format!("repr.epochs={e}")));
    let c = resolve(args, flags)?;
    let out = output_path(out);
    let (header, transitions) = dataset::load(data)?;
    log::info!("training {} on {} transitions from {}", c.repr.baseline, header.count, header.env);
    let outcome = train_representation(&c.repr, &transitions)?;
    let fp = stage_fingerprints(&c)?[1].clone();
    outcome.checkpoint(&fp, &c.repr)?.save(&out.join("representation.ckpt"))?;
    write(&out.join("curve.csv"), outcome.curve_csv())?;
    if let Some(last) = outcome.curve.last() {
        println!("final losses: {:?}", last.losses);
    }
    finish(&out, &c, 1, vec!["representation.ckpt".into(), "curve.csv".into()], started)
}

pub struct PolicyOpts {
    pub env: Option<EnvPreset>,
    pub agent: Option<AgentKind>,
    pub seeds: Option<u64>,
    pub episodes: Option<usize>,
    pub steps: Option<usize>,
}

fn policy_flags(args: &ConfigArgs, opts: &PolicyOpts) -> Result<Vec<String>> {
    let mut flags = env_flags(opts.env);
    if let Some(n) = opts.seeds {
        if n == 0 {
            return Err(Error::Config("--seeds must be positive".into()));
        }
        let list: Vec<String> = (0..n).map(|s| s.to_string()).collect();
        flags.push(format!("seeds=[{}]", list.join(",")));
        flags.push(format!("analysis.best_k={}", n.min(3)));
    }
    if let Some(e) = opts.episodes {
        flags.push(format!("policy.budget={{ max_episodes = {e} }}"));
    }
    if let Some(s) = opts.steps {
        flags.push(format!("policy.budget={{ max_steps = {s} }}"));
    }
    if let Some(kind) = opts.agent {
        let current = resolve(args, flags.clone())?;
        let same = matches!((kind, &current.agent), (AgentKind::Td3, AgentConfig::Td3(_)) | (AgentKind::Dqn, AgentConfig::Dqn(_)));
        if !same {
            let name = match kind {
                AgentKind::Td3 => "td3",
                AgentKind::Dqn => "dqn",
            };
            flags.push(format!("agent={{ kind = \"{name}\" }}"));
        }
    }
    Ok(flags)
}

fn load_bundle(path: &Path) -> Result<ModelBundle> {
    ModelBundle::from_checkpoint(&Checkpoint::load(path)?)
}

pub fn train_policy(args: &ConfigArgs, opts: &PolicyOpts, repr: &Path, out: &Path, worker_seed: Option<u64>) -> Result<()> {
    let started = Instant::now();
    let c = resolve(args, policy_flags(args, opts)?)?;
    let out = output_path(out);
    let fp = stage_fingerprints(&c)?[2].clone();
    if let Some(seed) = worker_seed {
        let bundle = load_bundle(repr)?;
        let outcome = train_one(&c.env, &bundle, &c.agent, c.policy.budget, seed)?;
        write(&out.join("metrics.csv"), metrics_csv(&outcome.records))?;
        outcome.agent.to_checkpoint(&fp, &c.agent, &bundle)?.save(&out.join("policy.ckpt"))?;
        log::info!("seed {seed}: {} episodes, {} env steps", outcome.records.len(), outcome.env_steps);
        return Ok(());
    }

    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let out = out.canonicalize().map_err(|e| Error::io(&out, e))?;
    let repr = repr.canonicalize().map_err(|e| Error::io(repr, e))?;
    write(&out.join(CONFIG_FILE), c.to_toml()?)?;
    let exe = std::env::current_exe().map_err(|e| Error::io("current executable", e))?;
    let children: Vec<(u64, Child)> = c
        .seeds
        .iter()
        .map(|&seed| {
            Command::new(&exe)
                .arg("train-policy")
                .arg("--config")
                .arg(out.join(CONFIG_FILE))
                .arg("--repr-checkpoint")
                .arg(&repr)
                .arg("--out")
                .arg(out.join(format!("seed-{seed}")))
                .arg("--worker-seed")
                .arg(seed.to_string())
                .env_remove(OUTPUT_ROOT_ENV)
                .spawn()
                .map(|child| (seed, child))
                .map_err(|e| Error::io(&exe, e))
        })
        .collect::<Result<_>>()?;

    let mut failures = Vec::new();
    for (seed, mut child) in children {
        let status = child.wait().map_err(|e| Error::io(&exe, e))?;
        if !status.success() {
            failures.push(format!("seed {seed} exited with {status}"));
        }
    }
    if !failures.is_empty() {
        return Err(Error::Stage { stage: "train_policy".into(), message: failures.join("; ") });
    }

    let mut records = Vec::new();
    let mut outputs = vec!["metrics.csv".to_string()];
    for &seed in &c.seeds {
        let dir = format!("seed-{seed}");
        records.extend(parse_metrics_csv(&read(&out.join(&dir).join("metrics.csv"))?)?);
        outputs.push(format!("{dir}/metrics.csv"));
        outputs.push(format!("{dir}/policy.ckpt"));
    }
    write(&out.join("metrics.csv"), metrics_csv(&records))?;
    print_summary(&format!("{}", c.agent.name()), &c, &records)?;
    finish(&out, &c, 2, outputs, started)
}

fn print_summary(label: &str, c: &ExperimentConfig, records: &[EpisodeRecord]) -> Result<()> {
    let k = c.analysis.best_k.min(c.seeds.len());
    let rows = summarize(label, &c.env.build()?.name(), records, c.analysis.final_window, Some(k))?;
    print!("{}", report_markdown(&rows));
    Ok(())
}

pub fn eval(args: &ConfigArgs, env: Option<EnvPreset>, repr: &Path, policies: &[PathBuf], episodes: Option<usize>, out: &Path) -> Result<()> {
    let started = Instant::now();
    let mut flags = env_flags(env);
    flags.extend(episodes.map(|e| format!("policy.eval_episodes={e}")));
    let c = resolve(args, flags)?;
    let out = output_path(out);
    let bundle = load_bundle(repr)?;
    let mut records = Vec::new();
    for (i, path) in policies.iter().enumerate() {
        let (mut agent, _) = Agent::from_checkpoint(&Checkpoint::load(path)?)?;
        records.extend(evaluate_policy(&c.env, &bundle, &mut agent, c.policy.eval_episodes, i as u64)?);
    }
    write(&out.join("metrics.csv"), metrics_csv(&records))?;
    let rows = summarize("greedy", &c.env.build()?.name(), &records, c.policy.eval_episodes, None)?;
    print!("{}", report_markdown(&rows));
    finish(&out, &c, 3, vec!["metrics.csv".into()], started)
}

fn labelled(spec: &str) -> Result<(String, Vec<EpisodeRecord>)> {
    let (label, path) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("`{spec}` is not label=path")))?;
    Ok((label.to_string(), parse_metrics_csv(&read(Path::new(path))?)?))
}

pub fn plot(
    args: &ConfigArgs,
    env: Option<EnvPreset>,
    dump: Option<&Path>,
    repr: Option<&Path>,
    components: usize,
    metrics: &[String],
    out: &Path,
) -> Result<()> {
    let started = Instant::now();
    let mut flags = env_flags(env);
    flags.push(format!("analysis.components={components}"));
    let c = resolve(args, flags)?;
    let out = output_path(out);
    let mut outputs = Vec::new();
    let mut emit = |name: &str, body: &str| -> Result<()> {
        write(&out.join(name), body)?;
        outputs.push(name.to_string());
        Ok(())
    };

    let dump = match (dump, repr) {
        (Some(p), _) => Some(LatentDump::from_csv(&read(p)?)?),
        (None, Some(r)) => {
            let bundle = load_bundle(r)?;
            let seed = rng::derive_seed(c.data.seed, "analysis.dump");
            let n = c.analysis.dump_samples;
            Some(match &c.env {
                EnvConfig::Grid(g) if n == 0 => dump_grid_cells(&bundle, g)?,
                EnvConfig::Grid(g) => dump_grid_samples(&bundle, g, n, seed)?,
                EnvConfig::Nav(nav) => dump_nav_samples(&bundle, nav, n.max(1), seed)?,
            })
        }
        (None, None) => None,
    };
    if let Some(dump) = dump {
        let map = plot_latent_map(&dump, c.analysis.components)?;
        emit("latent_dump.csv", &dump.to_csv()?)?;
        emit("latent_map.svg", &map.svg)?;
        emit("latent_map.csv", &map.csv)?;
        println!("explained variance ratio: {:?}", map.pca.explained_ratio);
        for w in &map.pca.warnings {
            println!("warning: {w}");
        }
    }

    if !metrics.is_empty() {
        for (metric, stem, y) in [(Metric::Steps, "curves_steps", "avg steps"), (Metric::Success, "curves_success", "success ratio")] {
            let mut curves = Vec::new();
            for spec in metrics {
                let (label, records) = labelled(spec)?;
                let runs = runs_from_records(&records, metric, c.analysis.smoothing_window);
                let k = c.analysis.best_k.min(runs.len());
                curves.push((label, aggregate_curves(&runs, k, c.analysis.final_window, metric)?));
            }
            emit(&format!("{stem}.svg"), &plot_curves(&curves, y))?;
            emit(&format!("{stem}.csv"), &curves_csv(&curves))?;
        }
    }
    if outputs.is_empty() {
        return Err(Error::Config("nothing to plot: give --dump, --repr-checkpoint or --metrics".into()));
    }
    println!("wrote {} files to {}", outputs.len(), out.display());
    finish(&out, &c, 4, outputs, started)
}

pub fn report(metrics: &[String], env_name: &str, window: usize, best_k: Option<usize>, out: Option<&Path>) -> Result<()> {
    let mut rows = Vec::new();
    for spec in metrics {
        let (label, records) = labelled(spec)?;
        rows.extend(summarize(&label, env_name, &records, window, best_k)?);
    }
    let md = report_markdown(&rows);
    print!("{md}");
    if let Some(out) = out {
        let out = output_path(out);
        write(&out.join("report.md"), &md)?;
        write(&out.join("report.csv"), report_csv(&rows))?;
    }
    Ok(())
}

#[derive(Args)]
pub struct VerifyArgs {
    /// Source MDP in the tabular text format.
    #[arg(long, requires = "map", conflicts_with = "mirror")]
    mdp: Option<PathBuf>,
    /// State and action maps in the text format.
    #[arg(long)]
    map: Option<PathBuf>,
    /// Image MDP; built as the quotient under the map when omitted.
    #[arg(long = "abstract")]
    abstract_mdp: Option<PathBuf>,
    /// Use the built-in mirror quotient of an N x N grid.
    #[arg(long, value_name = "N")]
    mirror: Option<usize>,
    #[arg(long, default_value_t = 4)]
    mirror_actions: usize,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    /// Also check the latent policy-gradient identity on this many random instances.
    #[arg(long, value_name = "INSTANCES")]
    prop2: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the JSON record here instead of stdout.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn max_index(v: &[usize]) -> usize {
    v.iter().max().map_or(0, |m| m + 1)
}

pub fn verify(args: &VerifyArgs) -> Result<()> {
    let mut record = serde_json::Map::new();
    let mut passed = true;
    let source = match (&args.mdp, &args.map, args.mirror) {
        (Some(m), Some(h), _) => {
            let mdp = TabularMdp::from_text(&read(m)?)?;
            let map = HomomorphismMap::from_text(&read(h)?)?;
            let abs = match &args.abstract_mdp {
                Some(p) => TabularMdp::from_text(&read(p)?)?,
                None => quotient(&mdp, &map, max_index(&map.f), max_index(&map.g))?,
            };
            Some((mdp, abs, map))
        }
        (_, _, Some(n)) => {
            let q = mirror_quotient(GridWorldConfig::new(n, args.mirror_actions), args.gamma)?;
            Some((q.mdp, q.abstract_mdp, q.map))
        }
        _ => None,
    };
    if source.is_none() && args.prop2.is_none() {
        return Err(Error::Config("give --mdp and --map, --mirror N, or --prop2 N".into()));
    }

    if let Some((mdp, abs, map)) = source {
        let check = verify_lifting(&mdp, &abs, &map)?;
        let h = &check.homomorphism;
        println!("states {} -> {}, actions {} -> {}", mdp.n_states, abs.n_states, mdp.n_actions, abs.n_actions);
        println!("transition commutes: {}", h.transition_ok);
        println!("reward commutes:     {}", h.reward_ok);
        for v in h.violations.iter().take(10) {
            println!("  violation: {v:?}");
        }
        if h.violations.len() > 10 {
            println!("  ... {} more", h.violations.len() - 10);
        }
        println!("max |V_lifted - V*|: {:.3e}", check.max_value_gap);
        let ok = check.optimal_within(LIFT_TOL);
        println!("lifted policy optimal (tol {LIFT_TOL:e}): {ok}");
        passed &= ok;
        record.insert(
            "homomorphism".into(),
            json!({
                "transition_ok": h.transition_ok,
                "reward_ok": h.reward_ok,
                "violations": h.violations,
                "max_value_gap": check.max_value_gap,
                "lifted_policy": check.lifted,
                "optimal": ok,
            }),
        );
    }

    if let Some(count) = args.prop2 {
        let mut r = rng::seeded(args.seed, "verify.prop2");
        let (mut worst, mut worst_fd) = (0.0f64, 0.0f64);
        for _ in 0..count {
            let report = check_proposition2(&Prop2Instance::random(&mut r, 10, 4, args.gamma))?;
            worst = worst.max(report.max_rel_err);
            worst_fd = worst_fd.max(report.fd_max_rel_err);
        }
        let ok = worst < PROP2_TOL && worst_fd < PROP2_FD_TOL;
        println!("policy-gradient identity over {count} instances: max rel err {worst:.3e}, vs finite differences {worst_fd:.3e}: {ok}");
        passed &= ok;
        record.insert("prop2".into(), json!({ "instances": count, "max_rel_err": worst, "fd_max_rel_err": worst_fd, "passed": ok }));
    }

    record.insert("passed".into(), passed.into());
    let text = serde_json::to_string_pretty(&serde_json::Value::Object(record))?;
    match &args.json {
        Some(p) => write(&output_path(p), text + "\n")?,
        None => println!("{text}"),
    }
    if passed {
        Ok(())
    } else {
        Err(Error::Stage { stage: "verify-homomorphism".into(), message: "verification failed".into() })
    }
}

pub fn run(args: &ConfigArgs, out: Option<PathBuf>) -> Result<()> {
    let flags = out.iter().map(|o| format!("output_dir={:?}", o.display().to_string())).collect();
    let mut c = resolve(args, flags)?;
    c.output_dir = output_path(&c.output_dir);
    let manifest = run_pipeline(&c)?;
    for s in &manifest.stages {
        println!("{:<13} {:?} {:>8.1}s", s.name, s.status, s.wall_clock_s);
    }
    println!("manifest: {}", c.output_dir.join(MANIFEST_FILE).display());
    Ok(())
}
