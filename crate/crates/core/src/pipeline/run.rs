//! Staged, resumable experiment execution.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::collect::collect_transitions;
use super::config::ExperimentConfig;
use super::fingerprint::{fingerprint, stage_fingerprint};
use crate::agents::{evaluate_policy, metrics_csv, parse_metrics_csv, train_policy, Agent, EpisodeRecord};
use crate::analysis::{
    aggregate_curves, curves_csv, dump_grid_cells, dump_grid_samples, dump_nav_samples, mean_pairwise_distance,
    neighborhood_consistency, plot_curves, plot_latent_map, random_control, report_csv, report_markdown,
    runs_from_records, summarize, LatentDump, Metric,
};
use crate::dataset;
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::nets::{Checkpoint, ModelBundle};
use crate::repr::train_representation;
use crate::rng;

pub const STAGES: [&str; 5] = ["collect", "train_repr", "train_policy", "eval", "analysis"];
pub const MANIFEST_FILE: &str = "manifest.json";
const STAGE_FILE: &str = "stage.json";
pub const CONFIG_FILE: &str = "config.toml";
/// Draws averaged for the random-latent structure control.
const CONTROL_DRAWS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ran,
    Skipped,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub fingerprint: String,
    pub status: StageStatus,
    /// Paths relative to the run directory.
    pub outputs: Vec<String>,
    pub wall_clock_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    /// Resolved configuration, relative to the run directory.
    pub config_path: String,
    pub config_fingerprint: String,
    pub code_version: String,
    pub stages: Vec<StageRecord>,
    pub wall_clock_s: f64,
}

impl RunManifest {
    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Serialize, Deserialize)]
struct StageMarker {
    fingerprint: String,
    outputs: Vec<String>,
}

pub(crate) fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Fingerprints of every stage, each chained on its inputs.
pub fn stage_fingerprints(config: &ExperimentConfig) -> Result<Vec<String>> {
    let collect = stage_fingerprint("collect", &[], &serde_json::json!({ "env": config.env, "data": config.data }))?;
    let repr = stage_fingerprint("train_repr", &[&collect], &config.repr)?;
    let policy = stage_fingerprint(
        "train_policy",
        &[&repr],
        &serde_json::json!({ "env": config.env, "agent": config.agent, "budget": config.policy.budget, "seeds": config.seeds }),
    )?;
    let eval = stage_fingerprint("eval", &[&policy], &config.policy.eval_episodes)?;
    let analysis = stage_fingerprint("analysis", &[&repr, &policy], &config.analysis)?;
    Ok(vec![collect, repr, policy, eval, analysis])
}

struct Ctx<'a> {
    config: &'a ExperimentConfig,
    dir: &'a Path,
}

impl Ctx<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn dataset_dir(&self) -> PathBuf {
        self.path("collect/dataset")
    }

    fn bundle(&self) -> Result<ModelBundle> {
        ModelBundle::from_checkpoint(&Checkpoint::load(&self.path("train_repr/representation.ckpt"))?)
    }

    fn training_metrics(&self) -> Result<Vec<EpisodeRecord>> {
        parse_metrics_csv(&read(&self.path("train_policy/metrics.csv"))?)
    }

    fn run_stage(&self, index: usize, fp: &str) -> Result<Vec<String>> {
        match STAGES[index] {
            "collect" => self.collect(),
            "train_repr" => self.train_repr(fp),
            "train_policy" => self.train_policy(fp),
            "eval" => self.eval(),
            _ => self.analysis(),
        }
    }

    fn collect(&self) -> Result<Vec<String>> {
        let c = self.config;
        let data = collect_transitions(&c.env, c.data.n_transitions, c.data.seed)?;
        let name = c.env.build()?.name();
        let dir = self.dataset_dir();
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        dataset::save(&dir, &name, &data)?;
        Ok(vec!["collect/dataset/header.json".into(), "collect/dataset/transitions.bin".into()])
    }

    fn train_repr(&self, fp: &str) -> Result<Vec<String>> {
        let (_, data) = dataset::load(&self.dataset_dir())?;
        let outcome = train_representation(&self.config.repr, &data)?;
        outcome.checkpoint(fp, &self.config.repr)?.save(&self.path("train_repr/representation.ckpt"))?;
        write(&self.path("train_repr/curve.csv"), outcome.curve_csv())?;
        Ok(vec!["train_repr/representation.ckpt".into(), "train_repr/curve.csv".into()])
    }

    fn train_policy(&self, fp: &str) -> Result<Vec<String>> {
        let c = self.config;
        let bundle = self.bundle()?;
        let results = train_seeds(&c.env, &bundle, c, &c.seeds)?;
        let mut outputs = vec!["train_policy/metrics.csv".to_string()];
        let mut records = Vec::new();
        for (seed, (agent, seed_records)) in c.seeds.iter().zip(results) {
            let rel = format!("train_policy/seed-{seed}.ckpt");
            agent.to_checkpoint(fp, &c.agent, &bundle)?.save(&self.path(&rel))?;
            outputs.push(rel);
            records.extend(seed_records);
        }
        write(&self.path("train_policy/metrics.csv"), metrics_csv(&records))?;
        Ok(outputs)
    }

    fn eval(&self) -> Result<Vec<String>> {
        let c = self.config;
        let bundle = self.bundle()?;
        let mut records = Vec::new();
        for &seed in &c.seeds {
            let ck = Checkpoint::load(&self.path(&format!("train_policy/seed-{seed}.ckpt")))?;
            let (mut agent, _) = Agent::from_checkpoint(&ck)?;
            records.extend(evaluate_policy(&c.env, &bundle, &mut agent, c.policy.eval_episodes, seed)?);
        }
        write(&self.path("eval/metrics.csv"), metrics_csv(&records))?;
        Ok(vec!["eval/metrics.csv".into()])
    }

    fn analysis(&self) -> Result<Vec<String>> {
        let c = self.config;
        let a = &c.analysis;
        let bundle = self.bundle()?;
        let seed = rng::derive_seed(c.data.seed, "analysis.dump");
        let dump: LatentDump = match &c.env {
            EnvConfig::Grid(g) if a.dump_samples == 0 => dump_grid_cells(&bundle, g)?,
            EnvConfig::Grid(g) => dump_grid_samples(&bundle, g, a.dump_samples, seed)?,
            EnvConfig::Nav(n) => dump_nav_samples(&bundle, n, a.dump_samples.max(1), seed)?,
        };
        let map = plot_latent_map(&dump, a.components)?;
        let mut outputs = Vec::new();
        let mut emit = |rel: &str, body: &str| -> Result<()> {
            write(&self.path(rel), body)?;
            outputs.push(rel.to_string());
            Ok(())
        };
        emit("analysis/latent_dump.csv", &dump.to_csv()?)?;
        emit("analysis/latent_map.svg", &map.svg)?;
        emit("analysis/latent_map.csv", &map.csv)?;

        let mut structure = serde_json::json!({
            "explained_ratio": map.pca.explained_ratio,
            "pca_warnings": map.pca.warnings,
            "mean_pairwise_distance": mean_pairwise_distance(&dump.latents()),
        });
        if let EnvConfig::Grid(g) = &c.env {
            let cells_dump = dump_grid_cells(&bundle, g)?;
            let cells = cells_dump.cells().expect("grid dump has cells");
            let score = neighborhood_consistency(&cells, &cells_dump.latents())?;
            let mut control_rng = rng::seeded(seed, "analysis.control");
            structure["neighborhood_consistency"] = serde_json::to_value(score)?;
            structure["random_control"] = random_control(&cells, bundle.state_dim(), CONTROL_DRAWS, &mut control_rng)?.into();
            structure["cell_mean_pairwise_distance"] = mean_pairwise_distance(&cells_dump.latents()).into();
        }
        emit("analysis/structure.json", &(serde_json::to_string_pretty(&structure)? + "\n"))?;

        let records = self.training_metrics()?;
        let label = format!("{}+{}", c.repr.baseline, c.agent.name());
        let mut curves = Vec::new();
        for metric in [Metric::Steps, Metric::Success] {
            let runs = runs_from_records(&records, metric, a.smoothing_window);
            curves.push((metric, aggregate_curves(&runs, a.best_k.min(runs.len()), a.final_window, metric)?));
        }
        let steps_curves = vec![(label.clone(), curves[0].1.clone())];
        let success_curves = vec![(label.clone(), curves[1].1.clone())];
        emit("analysis/curves_steps.svg", &plot_curves(&steps_curves, "avg steps"))?;
        emit("analysis/curves_steps.csv", &curves_csv(&steps_curves))?;
        emit("analysis/curves_success.svg", &plot_curves(&success_curves, "success ratio"))?;
        emit("analysis/curves_success.csv", &curves_csv(&success_curves))?;

        let env_name = c.env.build()?.name();
        let mut rows = summarize(&label, &env_name, &records, a.final_window, Some(a.best_k.min(c.seeds.len())))?;
        let eval = parse_metrics_csv(&read(&self.path("eval/metrics.csv"))?)?;
        rows.extend(summarize(&format!("{label} (greedy)"), &env_name, &eval, c.policy.eval_episodes, None)?);
        emit("analysis/report.md", &report_markdown(&rows))?;
        emit("analysis/report.csv", &report_csv(&rows))?;
        Ok(outputs)
    }
}

/// Trains one agent per seed, each on its own thread, and returns the
/// results in seed order.
pub fn train_seeds(
    env: &EnvConfig,
    bundle: &ModelBundle,
    config: &ExperimentConfig,
    seeds: &[u64],
) -> Result<Vec<(Agent, Vec<EpisodeRecord>)>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                scope.spawn(move || {
                    let out = train_policy(env, bundle, &config.agent, config.policy.budget, seed)?;
                    log::info!("seed {seed}: {} episodes, {} env steps", out.records.len(), out.env_steps);
                    Ok((out.agent, out.records))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("policy thread panicked")).collect()
    })
}

fn stage_complete(dir: &Path, stage: &str, fp: &str) -> Option<Vec<String>> {
    let marker: StageMarker = serde_json::from_str(&fs::read_to_string(dir.join(stage).join(STAGE_FILE)).ok()?).ok()?;
    (marker.fingerprint == fp && marker.outputs.iter().all(|o| dir.join(o).exists())).then_some(marker.outputs)
}

/// Runs every stage in order, skipping stages whose recorded fingerprint
/// matches and whose outputs are present. A failing stage stops the run;
/// the manifest written so far records the failure.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<RunManifest> {
    run_pipeline_in(config, &config.output_dir)
}

pub fn run_pipeline_in(config: &ExperimentConfig, dir: &Path) -> Result<RunManifest> {
    config.validate()?;
    let started = Instant::now();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join(CONFIG_FILE), config.to_toml()?)?;
    let fps = stage_fingerprints(config)?;
    let mut manifest = RunManifest {
        name: config.name.clone(),
        config_path: CONFIG_FILE.to_string(),
        config_fingerprint: fingerprint(config)?,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        stages: Vec::new(),
        wall_clock_s: 0.0,
    };
    let ctx = Ctx { config, dir };
    for (i, stage) in STAGES.iter().enumerate() {
        let t = Instant::now();
        let marker_rel = format!("{stage}/{STAGE_FILE}");
        if let Some(mut outputs) = stage_complete(dir, stage, &fps[i]) {
            outputs.push(marker_rel);
            log::info!("stage {stage}: up to date, skipped");
            manifest.stages.push(StageRecord {
                name: stage.to_string(),
                fingerprint: fps[i].clone(),
                status: StageStatus::Skipped,
                outputs,
                wall_clock_s: 0.0,
                error: None,
            });
            continue;
        }
        log::info!("stage {stage}: running");
        let _ = fs::remove_file(dir.join(stage).join(STAGE_FILE));
        match ctx.run_stage(i, &fps[i]) {
            Ok(mut outputs) => {
                let marker = StageMarker { fingerprint: fps[i].clone(), outputs: outputs.clone() };
                write(&dir.join(&marker_rel), serde_json::to_string_pretty(&marker)?)?;
                outputs.push(marker_rel);
                manifest.stages.push(StageRecord {
                    name: stage.to_string(),
                    fingerprint: fps[i].clone(),
                    status: StageStatus::Ran,
                    outputs,
                    wall_clock_s: t.elapsed().as_secs_f64(),
                    error: None,
                });
            }
            Err(e) => {
                manifest.stages.push(StageRecord {
                    name: stage.to_string(),
                    fingerprint: fps[i].clone(),
                    status: StageStatus::Failed,
                    outputs: vec![],
                    wall_clock_s: t.elapsed().as_secs_f64(),
                    error: Some(e.to_string()),
                });
                manifest.wall_clock_s = started.elapsed().as_secs_f64();
                write(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
                return Err(Error::Stage { stage: stage.to_string(), message: e.to_string() });
            }
        }
    }
    manifest.wall_clock_s = started.elapsed().as_secs_f64();
    write(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}
