//! Latent dumps: encoded states with their ground truth, for plots and scores.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::envs::grid::Cell;
use crate::envs::{ContinuousNav, ContinuousNavConfig, Environment, GridWorld, GridWorldConfig};
use crate::error::{Error, Result};
use crate::nets::ModelBundle;
use crate::types::{one_hot_index, LatentState, Observation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpRow {
    /// True state: `[row, col]` on grids, `[x, y, heading]` in navigation.
    pub position: Vec<f64>,
    pub latent: Vec<f64>,
    pub reward: f64,
    /// Latent action of every discrete action, when an action encoder exists.
    pub actions: Vec<Vec<f64>>,
    /// Predicted latent displacement of every discrete action.
    pub deltas: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatentDump {
    pub rows: Vec<DumpRow>,
}

impl LatentDump {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn latents(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.latent.clone()).collect()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.reward).collect()
    }

    /// Grid cells, if every position is a `[row, col]` pair.
    pub fn cells(&self) -> Option<Vec<Cell>> {
        self.rows
            .iter()
            .map(|r| match r.position[..] {
                [a, b] if a >= 0.0 && b >= 0.0 && a.fract() == 0.0 && b.fract() == 0.0 => Some((a as usize, b as usize)),
                _ => None,
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let Some(first) = self.rows.first() else { return Ok(()) };
        let dims = |r: &DumpRow| (r.position.len(), r.latent.len(), r.actions.len(), r.deltas.len());
        if self.rows.iter().any(|r| dims(r) != dims(first)) {
            return Err(Error::Shape("latent dump rows differ in shape".into()));
        }
        Ok(())
    }

    /// CSV with columns `pos_*`, `s_*`, `reward`, `a{k}_*`, `d{k}_*`.
    pub fn to_csv(&self) -> Result<String> {
        self.validate()?;
        let mut out = String::new();
        let Some(first) = self.rows.first() else {
            out.push_str("reward\n");
            return Ok(out);
        };
        let mut header: Vec<String> = (0..first.position.len()).map(|i| format!("pos_{i}")).collect();
        header.extend((0..first.latent.len()).map(|i| format!("s_{i}")));
        header.push("reward".into());
        for (prefix, group) in [("a", &first.actions), ("d", &first.deltas)] {
            for (k, v) in group.iter().enumerate() {
                header.extend((0..v.len()).map(|j| format!("{prefix}{k}_{j}")));
            }
        }
        out.push_str(&header.join(","));
        out.push('\n');
        for r in &self.rows {
            let mut fields: Vec<String> = r.position.iter().chain(&r.latent).map(|v| v.to_string()).collect();
            fields.push(r.reward.to_string());
            fields.extend(r.actions.iter().chain(&r.deltas).flatten().map(|v| v.to_string()));
            writeln!(out, "{}", fields.join(",")).expect("string write");
        }
        Ok(out)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| Error::format("latent dump", "missing header"))?.split(',').collect();
        let count = |p: &str| header.iter().filter(|h| h.starts_with(p)).count();
        let (n_pos, n_lat) = (count("pos_"), count("s_"));
        let group = |p: char| {
            let mut sizes: Vec<usize> = Vec::new();
            for h in &header {
                let Some(rest) = h.strip_prefix(p) else { continue };
                let Some((k, _)) = rest.split_once('_') else { continue };
                let Ok(k) = k.parse::<usize>() else { continue };
                if sizes.len() <= k {
                    sizes.resize(k + 1, 0);
                }
                sizes[k] += 1;
            }
            sizes
        };
        let (a_sizes, d_sizes) = (group('a'), group('d'));
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let values: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse().map_err(|_| Error::format("latent dump", format!("row {}: bad number `{v}`", i + 1))))
                .collect::<Result<_>>()?;
            if values.len() != header.len() {
                return Err(Error::format("latent dump", format!("row {} has {} fields", i + 1, values.len())));
            }
            let mut it = values.into_iter();
            let mut take = |n: usize| (&mut it).take(n).collect::<Vec<f64>>();
            let position = take(n_pos);
            let latent = take(n_lat);
            let reward = take(1)[0];
            let actions = a_sizes.iter().map(|&n| take(n)).collect();
            let deltas = d_sizes.iter().map(|&n| take(n)).collect();
            rows.push(DumpRow { position, latent, reward, actions, deltas });
        }
        Ok(Self { rows })
    }
}

fn row_for(bundle: &ModelBundle, o: &Observation, position: Vec<f64>, reward: f64) -> Result<DumpRow> {
    let s: LatentState = bundle.encode_one(o)?;
    let k = bundle.spec.n_actions;
    let mut actions = Vec::new();
    let mut deltas = Vec::with_capacity(k);
    for a in 0..k {
        let model_action = if bundle.action_encoder.is_some() {
            let latent = bundle.encode_action(&s, crate::types::DiscreteAction::new(a, k)?)?.into_inner();
            actions.push(latent.clone());
            latent
        } else {
            one_hot_index(a, k)?
        };
        deltas.push(bundle.transition_delta(&s, &model_action)?);
    }
    Ok(DumpRow { position, latent: s.0, reward, actions, deltas })
}

/// Every grid cell once, without distractors.
pub fn dump_grid_cells(bundle: &ModelBundle, config: &GridWorldConfig) -> Result<LatentDump> {
    let world = GridWorld::new(config.clone())?;
    let rows = world
        .cells()
        .into_iter()
        .map(|cell| row_for(bundle, &world.observe_cell(cell), vec![cell.0 as f64, cell.1 as f64], world.reward_at(cell)))
        .collect::<Result<_>>()?;
    Ok(LatentDump { rows })
}

/// `n` episode start states (random agent cell and distractors).
pub fn dump_grid_samples(bundle: &ModelBundle, config: &GridWorldConfig, n: usize, seed: u64) -> Result<LatentDump> {
    let mut world = GridWorld::new(GridWorldConfig { seed, ..config.clone() })?;
    let rows = (0..n)
        .map(|_| {
            let o = world.reset();
            let cell = world.state().agent_cell;
            row_for(bundle, &o, vec![cell.0 as f64, cell.1 as f64], world.reward_at(cell))
        })
        .collect::<Result<_>>()?;
    Ok(LatentDump { rows })
}

/// `n` navigation start poses; the reward column is the distance shaping
/// term at that pose.
pub fn dump_nav_samples(bundle: &ModelBundle, config: &ContinuousNavConfig, n: usize, seed: u64) -> Result<LatentDump> {
    let mut env = ContinuousNav::new(ContinuousNavConfig { seed, ..config.clone() })?;
    let rows = (0..n)
        .map(|_| {
            let o = env.reset();
            let st = env.state().clone();
            let reward = -config.eta * env.goal_distance();
            row_for(bundle, &o, vec![st.position.0, st.position.1, st.heading], reward)
        })
        .collect::<Result<_>>()?;
    Ok(LatentDump { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{BundleSpec, ConvSpec, EncoderSpec};

    fn small_bundle(image: usize, n_actions: usize, with_psi: bool) -> ModelBundle {
        let encoder = EncoderSpec {
            height: image,
            width: image,
            convs: vec![ConvSpec { filters: 4, kernel: 3, stride: 2 }],
            hidden: vec![8],
            latent_dim: 3,
        };
        let spec = BundleSpec {
            encoder,
            n_actions,
            action_dim: 2,
            hidden: vec![8],
            use_action_encoder: with_psi,
            state_free_action_encoder: false,
        };
        ModelBundle::new(spec, 1).unwrap()
    }

    #[test]
    fn grid_dump_shapes_and_csv_round_trip() {
        let config = GridWorldConfig { grid_n: 3, image_size: 12, ..Default::default() };
        let dump = dump_grid_cells(&small_bundle(12, 4, true), &config).unwrap();
        assert_eq!(dump.len(), 9);
        assert_eq!(dump.cells().unwrap()[5], (1, 2));
        assert_eq!(dump.rows[0].actions.len(), 4);
        assert_eq!(dump.rows[0].deltas[0].len(), 3);
        assert_eq!(dump.rows[8].reward, 1.0);
        let csv = dump.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 10);
        assert_eq!(LatentDump::from_csv(&csv).unwrap(), dump);
    }

    #[test]
    fn dump_without_action_encoder() {
        let config = GridWorldConfig { grid_n: 3, image_size: 12, n_distractors: 1, ..Default::default() };
        let dump = dump_grid_samples(&small_bundle(12, 4, false), &config, 7, 3).unwrap();
        assert_eq!(dump.len(), 7);
        assert!(dump.rows[0].actions.is_empty());
        assert_eq!(LatentDump::from_csv(&dump.to_csv().unwrap()).unwrap(), dump);
    }

    #[test]
    fn nav_dump() {
        let config = ContinuousNavConfig { image_size: 16, ..Default::default() };
        let dump = dump_nav_samples(&small_bundle(16, 3, true), &config, 5, 0).unwrap();
        assert_eq!(dump.rows[0].position.len(), 3);
        assert!(dump.cells().is_none());
        assert!(dump.rewards().iter().all(|r| *r <= 0.0));
    }
}
