//! Principal component analysis through the covariance eigendecomposition.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues at or below this fraction of the largest count as zero.
const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// One unit-length direction per retained component.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    /// Retained variance over total variance, per component.
    pub explained_ratio: Vec<f64>,
    pub projected: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

impl Pca {
    pub fn project(&self, row: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(row.iter().zip(&self.mean)).map(|(w, (x, m))| w * (x - m)).sum())
            .collect()
    }

    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &z) in self.components.iter().zip(coords) {
            for (o, w) in out.iter_mut().zip(c) {
                *o += z * w;
            }
        }
        out
    }
}

/// Mean-centred PCA keeping up to `n_components` directions. Each direction
/// is signed so that its largest-magnitude loading is positive. Fewer
/// components are returned, with a warning, when the data has lower rank.
pub fn pca_project(rows: &[Vec<f64>], n_components: usize) -> Result<Pca> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("PCA rows differ in length".into()));
    }
    let mut warnings = Vec::new();
    if n == 0 || d == 0 {
        warnings.push("PCA on an empty dump".to_string());
        return Ok(Pca { mean: vec![0.0; d], components: vec![], explained_variance: vec![], explained_ratio: vec![], projected: vec![vec![]; n], warnings });
    }
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let centred = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let cov = centred.transpose() * &centred / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let largest = eig.eigenvalues[order[0]].max(0.0);
    let mut components = Vec::new();
    let mut explained_variance = Vec::new();
    for &i in order.iter().take(n_components) {
        let value = eig.eigenvalues[i];
        if largest <= 0.0 || value <= RANK_TOLERANCE * largest {
            break;
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        let pivot = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        explained_variance.push(value);
    }
    if largest <= 0.0 {
        warnings.push("latent dump has zero variance (collapsed representation)".to_string());
    } else if components.len() < n_components {
        warnings.push(format!("data has rank {} < {n_components} requested components", components.len()));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let explained_ratio = explained_variance.iter().map(|v| if total > 0.0 { v / total } else { 0.0 }).collect();
    let mut pca = Pca { mean, components, explained_variance, explained_ratio, projected: vec![], warnings };
    pca.projected = rows.iter().map(|r| pca.project(r)).collect();
    Ok(pca)
}

#[cfg(test)]
mod tests {
    use rand::Rng as _;

    use super::*;
    use crate::rng;

    #[test]
    fn planted_plane() {
        let mut r = rng::seeded(1, "pca");
        let u: Vec<f64> = (0..10).map(|i| (i as f64 * 0.3).sin()).collect();
        let v: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).cos()).collect();
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let (a, b): (f64, f64) = (r.random_range(-3.0..3.0), r.random_range(-1.0..1.0));
                (0..10).map(|j| a * u[j] + b * v[j] + 0.5).collect()
            })
            .collect();
        let pca = pca_project(&rows, 3).unwrap();
        assert_eq!(pca.components.len(), 2, "{:?}", pca.explained_variance);
        assert!(pca.explained_ratio.iter().sum::<f64>() >= 0.999);
        assert!(!pca.warnings.is_empty());
    }

    #[test]
    fn collapsed_dump_warns() {
        let rows = vec![vec![1.0, 2.0, 3.0]; 20];
        let pca = pca_project(&rows, 2).unwrap();
        assert!(pca.components.is_empty());
        assert!(pca.warnings[0].contains("zero variance"));
        assert!(pca.projected.iter().all(Vec::is_empty));
    }

    #[test]
    fn full_reconstruction_and_sign_convention() {
        let mut r = rng::seeded(2, "pca");
        let rows: Vec<Vec<f64>> = (0..50).map(|_| (0..4).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let pca = pca_project(&rows, 4).unwrap();
        assert_eq!(pca.components.len(), 4);
        for (row, z) in rows.iter().zip(&pca.projected) {
            for (a, b) in row.iter().zip(pca.reconstruct(z)) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        for c in &pca.components {
            let pivot = c.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            assert!(pivot > 0.0);
            assert!((c.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(pca.explained_variance.windows(2).all(|w| w[0] >= w[1]));
    }
}
