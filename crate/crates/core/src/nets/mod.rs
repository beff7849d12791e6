//! fp64 neural substrate with hand-written backpropagation, plus the
//! representation and policy architectures built on it.

mod adam;
mod bundle;
pub mod checkpoint;
mod conv;
mod dense;
mod encoder;
mod params;
pub mod policy;

use ndarray::{Array2, ArrayView2};

pub use adam::{Adam, AdamConfig};
pub use bundle::{BundleSpec, ModelBundle, CHECKPOINT_KIND};
pub use checkpoint::Checkpoint;
pub use conv::{Conv2d, FeatureMap};
pub use dense::{Activation, Dense, Mlp, MlpCache, MlpSpec};
pub use encoder::{ConvSpec, Encoder, EncoderCache, EncoderSpec};
pub use params::{ParamBuilder, ParamVector, TensorSpec};

/// Row-wise softmax, shifted by the row maximum for stability.
pub fn softmax_rows(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Horizontal concatenation of two row-aligned matrices.
pub fn concat_cols(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    ndarray::concatenate![ndarray::Axis(1), a, b]
}
