use homomorph_core::pipeline::{run_pipeline_in, ExperimentConfig, RunManifest, StageStatus, STAGES};
use homomorph_core::Error;

const TINY: &str = r#"
name = "tiny"
seeds = [0, 1]

[env]
kind = "grid"
grid_n = 3
image_size = 9
max_steps = 12

[data]
n_transitions = 128

[repr]
epochs = 2
batch_size = 32
hidden = [16]

[repr.encoder]
height = 9
width = 9
convs = []
hidden = [16]
latent_dim = 10

[agent]
kind = "td3"
warmup_steps = 20
batch_size = 16

[policy]
eval_episodes = 2

[policy.budget]
max_episodes = 3

[analysis]
dump_samples = 0
best_k = 1
smoothing_window = 2
final_window = 2
"#;

fn statuses(m: &RunManifest) -> Vec<StageStatus> {
    m.stages.iter().map(|s| s.status).collect()
}

#[test]
fn resumes_and_reruns_only_downstream_stages() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig::from_toml(TINY).unwrap();
    let first = run_pipeline_in(&config, dir.path()).unwrap();
    assert_eq!(statuses(&first), vec![StageStatus::Ran; STAGES.len()]);
    for stage in &first.stages {
        for out in &stage.outputs {
            assert!(dir.path().join(out).exists(), "{out}");
        }
    }
    assert!(dir.path().join("analysis/latent_map.svg").exists());
    assert_eq!(RunManifest::load(dir.path()).unwrap(), first);

    let again = run_pipeline_in(&config, dir.path()).unwrap();
    assert_eq!(statuses(&again), vec![StageStatus::Skipped; STAGES.len()]);

    let edited = ExperimentConfig::from_toml_with_overrides(TINY, &["agent.lr_actor=0.001".into()]).unwrap();
    let partial = run_pipeline_in(&edited, dir.path()).unwrap();
    use StageStatus::*;
    assert_eq!(statuses(&partial), vec![Skipped, Skipped, Ran, Ran, Ran]);
    assert_ne!(partial.config_fingerprint, first.config_fingerprint);
}

#[test]
fn failing_stage_leaves_partial_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::from_toml(TINY).unwrap();
    // An encoder sized for the wrong image passes validation but fails training.
    if let Some(enc) = config.repr.encoder.as_mut() {
        enc.height = 8;
        enc.width = 8;
    }
    let err = run_pipeline_in(&config, dir.path()).unwrap_err();
    assert!(matches!(err, Error::Stage { ref stage, .. } if stage == "train_repr"), "{err}");
    let manifest = RunManifest::load(dir.path()).unwrap();
    assert_eq!(statuses(&manifest), vec![StageStatus::Ran, StageStatus::Failed]);
    assert!(manifest.stages[1].error.is_some());
}

#[test]
fn every_artifact_is_listed_in_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig::from_toml(TINY).unwrap();
    let m = run_pipeline_in(&config, dir.path()).unwrap();
    let mut listed: Vec<String> = m.stages.iter().flat_map(|s| s.outputs.clone()).collect();
    listed.push(m.config_path.clone());
    listed.push("manifest.json".into());
    let mut stack = vec![dir.path().to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir.path()).unwrap().to_string_lossy().replace('\\', "/");
                assert!(listed.contains(&rel), "{rel} not in manifest");
            }
        }
    }
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let config = ExperimentConfig::from_toml(TINY).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline_in(&config, a.path()).unwrap();
    run_pipeline_in(&config, b.path()).unwrap();
    std::fs::remove_file(b.path().join("train_policy/stage.json")).unwrap();
    std::fs::remove_dir_all(b.path().join("eval")).unwrap();
    run_pipeline_in(&config, b.path()).unwrap();
    for f in ["train_policy/metrics.csv", "eval/metrics.csv", "analysis/report.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}
