//! Central finite-difference check of the representation gradient.

use super::losses::{batch_states, evaluate_detached, BundleGrad, LossOptions};
use crate::error::Result;
use crate::nets::ModelBundle;
use crate::types::{Observation, Transition};

/// Gradient entries smaller than this are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a kink of the loss.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn checked_fraction(&self) -> f64 {
        self.checked as f64 / (self.checked + self.skipped).max(1) as f64
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the analytic gradient of the weighted total with central
/// differences of step `h` over every parameter of every network.
///
/// The decoder term is differenced with its latent-state input held at the
/// unperturbed encoder output, matching the stopped gradient on that path.
pub fn check_gradient(
    bundle: &ModelBundle,
    batch: &[Transition],
    negatives: &[Observation],
    options: &LossOptions,
    h: f64,
) -> Result<GradCheckReport> {
    let mut grad = BundleGrad::zeros(bundle);
    let states = batch_states(bundle, batch)?;
    let base = evaluate_detached(bundle, batch, negatives, options, Some(&mut grad), Some(states.view()))?;
    let analytic: Vec<Vec<f64>> = grad.slices().into_iter().map(<[f64]>::to_vec).collect();
    let mut probe = bundle.clone();
    let mut report = GradCheckReport { max_rel_err: 0.0, checked: 0, skipped: 0 };
    for (net, g) in analytic.iter().enumerate() {
        for (j, &analytic_j) in g.iter().enumerate() {
            let original = probe.networks()[net].1.data()[j];
            let mut at = |value: f64| -> Result<_> {
                probe.networks_mut()[net].1.data_mut()[j] = value;
                evaluate_detached(&probe, batch, negatives, options, None, Some(states.view()))
            };
            let (plus, minus) = (at(original + h)?, at(original - h)?);
            probe.networks_mut()[net].1.data_mut()[j] = original;
            if plus.signature != base.signature || minus.signature != base.signature {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus.losses.total - minus.losses.total) / (2.0 * h);
            report.max_rel_err = report.max_rel_err.max(relative_error(analytic_j, numeric));
            report.checked += 1;
        }
    }
    Ok(report)
}
