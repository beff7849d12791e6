//! How well latent distances reflect grid adjacency.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::envs::grid::{manhattan, Cell};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodScore {
    pub score: f64,
    /// No usable distance scale (collapsed latents or missing pair types);
    /// `score` is then 0.
    pub degenerate: bool,
    pub adjacent_pairs: usize,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Fraction of 4-adjacent cell pairs whose latent distance is below the
/// median latent distance of non-adjacent pairs. Rows sharing a cell are
/// not paired.
pub fn neighborhood_consistency(cells: &[Cell], latents: &[Vec<f64>]) -> Result<NeighborhoodScore> {
    if cells.len() != latents.len() {
        return Err(Error::Shape(format!("{} cells for {} latent rows", cells.len(), latents.len())));
    }
    let mut adjacent = Vec::new();
    let mut other = Vec::new();
    for i in 0..cells.len() {
        for j in i + 1..cells.len() {
            match manhattan(cells[i], cells[j]) {
                0 => {}
                1 => adjacent.push(dist(&latents[i], &latents[j])),
                _ => other.push(dist(&latents[i], &latents[j])),
            }
        }
    }
    let degenerate = NeighborhoodScore { score: 0.0, degenerate: true, adjacent_pairs: adjacent.len() };
    if adjacent.is_empty() || other.is_empty() {
        return Ok(degenerate);
    }
    other.sort_by(f64::total_cmp);
    let mid = other.len() / 2;
    let median = if other.len() % 2 == 1 { other[mid] } else { 0.5 * (other[mid - 1] + other[mid]) };
    if !(median > 0.0) {
        log::warn!("neighborhood consistency undefined on a collapsed latent dump; reporting 0");
        return Ok(degenerate);
    }
    let below = adjacent.iter().filter(|&&d| d < median).count();
    Ok(NeighborhoodScore { score: below as f64 / adjacent.len() as f64, degenerate: false, adjacent_pairs: adjacent.len() })
}

/// Mean score of i.i.d. standard Gaussian latents over `draws` draws.
pub fn random_control(cells: &[Cell], dim: usize, draws: usize, rng: &mut Rng) -> Result<f64> {
    if draws == 0 {
        return Err(Error::Config("random control needs at least one draw".into()));
    }
    let mut total = 0.0;
    for _ in 0..draws {
        let latents: Vec<Vec<f64>> = cells.iter().map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect()).collect();
        total += neighborhood_consistency(cells, &latents)?.score;
    }
    Ok(total / draws as f64)
}

/// Mean Euclidean distance over all row pairs.
pub fn mean_pairwise_distance(latents: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..latents.len() {
        for j in i + 1..latents.len() {
            total += dist(&latents[i], &latents[j]);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}
