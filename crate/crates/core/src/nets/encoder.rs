use std::hash::Hasher;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::conv::{Conv2d, FeatureMap};
use super::dense::{hash_positive, Activation, Dense};
use super::params::{ParamBuilder, ParamVector};
use crate::error::{Error, Result};
use crate::types::Observation;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Architecture of the observation encoder: ReLU convolutions, ReLU fully
/// connected layers, then a linear projection to the latent state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub height: usize,
    pub width: usize,
    pub convs: Vec<ConvSpec>,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
}

impl EncoderSpec {
    /// 32 filters 3x3 then 64 filters 5x5 (both stride 2, unpadded),
    /// FC 64 and FC 32, linear output.
    pub fn standard(image_size: usize, latent_dim: usize) -> Self {
        Self {
            height: image_size,
            width: image_size,
            convs: vec![
                ConvSpec { filters: 32, kernel: 3, stride: 2 },
                ConvSpec { filters: 64, kernel: 5, stride: 2 },
            ],
            hidden: vec![64, 32],
            latent_dim,
        }
    }

    /// Spatial sizes after each convolution, or an error if a kernel does not fit.
    pub fn geometry(&self) -> Result<Vec<(usize, usize)>> {
        let mut sizes = vec![(self.height, self.width)];
        for (i, c) in self.convs.iter().enumerate() {
            let (h, w) = *sizes.last().unwrap();
            if h < c.kernel || w < c.kernel || c.stride == 0 {
                return Err(Error::Shape(format!("conv layer {i} ({}x{}) does not fit a {h}x{w} input", c.kernel, c.kernel)));
            }
            sizes.push(((h - c.kernel) / c.stride + 1, (w - c.kernel) / c.stride + 1));
        }
        Ok(sizes)
    }

    pub fn flatten_dim(&self) -> Result<usize> {
        let (h, w) = *self.geometry()?.last().unwrap();
        let c = self.convs.last().map_or(Observation::CHANNELS, |c| c.filters);
        Ok(h * w * c)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    spec: EncoderSpec,
    params: ParamVector,
    convs: Vec<Conv2d>,
    dense: Vec<Dense>,
}

/// Intermediate values of a batched encoder pass.
pub struct EncoderCache {
    n: usize,
    /// Inputs to each convolution (the image first, then ReLU outputs).
    conv_inputs: Vec<FeatureMap>,
    conv_cols: Vec<Array2<f64>>,
    /// Inputs to each dense layer followed by the final output.
    dense_acts: Vec<Array2<f64>>,
}

impl EncoderCache {
    pub fn output(&self) -> &Array2<f64> {
        self.dense_acts.last().expect("encoder output")
    }

    pub fn hash_gates(&self, hasher: &mut impl Hasher) {
        for map in &self.conv_inputs[1..] {
            hash_positive(&map.data, hasher);
        }
        for act in &self.dense_acts[1..self.dense_acts.len() - 1] {
            hash_positive(act, hasher);
        }
    }
}

impl Encoder {
    pub fn new(spec: EncoderSpec, seed: u64) -> Result<Self> {
        let mut builder = ParamBuilder::new(seed);
        let (convs, dense) = Self::declare(&spec, &mut builder)?;
        Ok(Self { spec, params: builder.finish(), convs, dense })
    }

    pub fn from_params(spec: EncoderSpec, params: ParamVector) -> Result<Self> {
        let mut builder = ParamBuilder::new(params.init_seed());
        let (convs, dense) = Self::declare(&spec, &mut builder)?;
        if !builder.finish().same_layout(&params) {
            return Err(Error::Shape("encoder parameters do not match the architecture".into()));
        }
        Ok(Self { spec, params, convs, dense })
    }

    fn declare(spec: &EncoderSpec, builder: &mut ParamBuilder) -> Result<(Vec<Conv2d>, Vec<Dense>)> {
        let flat = spec.flatten_dim()?;
        let mut in_c = Observation::CHANNELS;
        let convs = spec
            .convs
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let conv = Conv2d::declare(builder, &format!("conv{i}"), in_c, c.filters, c.kernel, c.stride);
                in_c = c.filters;
                conv
            })
            .collect();
        let mut widths = vec![flat];
        widths.extend(&spec.hidden);
        widths.push(spec.latent_dim);
        let dense = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::declare(builder, &format!("fc{i}"), w[0], w[1]))
            .collect();
        Ok((convs, dense))
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.latent_dim
    }

    fn input_map(&self, observations: &[&Observation]) -> Result<FeatureMap> {
        let (h, w) = (self.spec.height, self.spec.width);
        let mut data = Vec::with_capacity(observations.len() * h * w * 3);
        for obs in observations {
            if obs.height() != h || obs.width() != w {
                return Err(Error::Shape(format!(
                    "encoder expects {h}x{w} observations, got {}x{}",
                    obs.height(),
                    obs.width()
                )));
            }
            data.extend(obs.pixels().iter().map(|&p| f64::from(p) / 255.0));
        }
        let data = Array2::from_shape_vec((observations.len() * h * w, 3), data).expect("image layout");
        Ok(FeatureMap { n: observations.len(), height: h, width: w, data })
    }

    pub fn forward(&self, observations: &[&Observation]) -> Result<Array2<f64>> {
        Ok(self.forward_cached(observations)?.dense_acts.pop().expect("output"))
    }

    pub fn forward_cached(&self, observations: &[&Observation]) -> Result<EncoderCache> {
        let p = self.params.data();
        let n = observations.len();
        let mut conv_inputs = vec![self.input_map(observations)?];
        let mut conv_cols = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let (mut y, cols) = conv.forward(p, conv_inputs.last().unwrap());
            Activation::Relu.apply(&mut y.data);
            conv_cols.push(cols);
            conv_inputs.push(y);
        }
        let last = conv_inputs.last().unwrap();
        let flat_dim = last.height * last.width * last.channels();
        let flat = last
            .data
            .view()
            .into_shape_with_order((n, flat_dim))
            .expect("channels-last maps flatten per image")
            .to_owned();
        let mut dense_acts = vec![flat];
        for (i, layer) in self.dense.iter().enumerate() {
            let mut h = layer.forward(p, dense_acts[i].view());
            if i + 1 < self.dense.len() {
                Activation::Relu.apply(&mut h);
            }
            dense_acts.push(h);
        }
        Ok(EncoderCache { n, conv_inputs, conv_cols, dense_acts })
    }

    /// Accumulates parameter gradients for `d(loss)/d(latent)` = `d_out`.
    pub fn backward(&self, cache: &EncoderCache, d_out: ArrayView2<f64>, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len());
        let p = self.params.data();
        let mut delta = d_out.to_owned();
        for i in (0..self.dense.len()).rev() {
            if i + 1 < self.dense.len() {
                Activation::Relu.backprop(&cache.dense_acts[i + 1], &mut delta);
            }
            delta = self.dense[i]
                .backward(p, cache.dense_acts[i].view(), delta.view(), grad, true)
                .expect("input gradient");
        }
        if self.convs.is_empty() {
            return;
        }
        let last = cache.conv_inputs.last().unwrap();
        let mut delta = delta
            .into_shape_with_order((cache.n * last.height * last.width, last.channels()))
            .expect("unflatten");
        for i in (0..self.convs.len()).rev() {
            Activation::Relu.backprop(&cache.conv_inputs[i + 1].data, &mut delta);
            let input = &cache.conv_inputs[i];
            let size = (i > 0).then_some((cache.n, input.height, input.width));
            match self.convs[i].backward(p, &cache.conv_cols[i], &delta, grad, size) {
                Some(d) => delta = d,
                None => break,
            }
        }
    }
}
