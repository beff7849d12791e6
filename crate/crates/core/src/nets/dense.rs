use std::hash::Hasher;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use serde::{Deserialize, Serialize};

use super::params::{ParamBuilder, ParamVector};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => x.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => x.mapv_inplace(f64::tanh),
        }
    }

    /// Turns `d(loss)/d(output)` into `d(loss)/d(pre-activation)` in place,
    /// given the activation output `y`.
    pub fn backprop(self, y: &Array2<f64>, dy: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => dy.zip_mut_with(y, |d, &v| {
                if v <= 0.0 {
                    *d = 0.0;
                }
            }),
            Activation::Tanh => dy.zip_mut_with(y, |d, &v| *d *= 1.0 - v * v),
        }
    }
}

/// A fully connected layer `y = x W + b` with `W` stored `(inputs, outputs)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    w: usize,
    b: usize,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    /// Declares the layer with fan-in uniform initialisation.
    pub fn declare(builder: &mut ParamBuilder, name: &str, inputs: usize, outputs: usize) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let w = builder.uniform(format!("{name}.weight"), &[inputs, outputs], bound);
        let b = builder.uniform(format!("{name}.bias"), &[outputs], bound);
        Self { w, b, inputs, outputs }
    }

    pub fn weight<'a>(&self, p: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.inputs, self.outputs), &p[self.w..self.w + self.inputs * self.outputs])
            .expect("weight layout")
    }

    pub fn bias<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.b..self.b + self.outputs]
    }

    pub fn forward(&self, p: &[f64], x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight(p));
        let bias = self.bias(p);
        for mut row in y.rows_mut() {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `d/dx` if asked.
    pub fn backward(
        &self,
        p: &[f64],
        x: ArrayView2<f64>,
        dy: ArrayView2<f64>,
        grad: &mut [f64],
        want_dx: bool,
    ) -> Option<Array2<f64>> {
        let (w_grad, b_grad) = grad[self.w..].split_at_mut(self.b - self.w);
        let mut dw = ArrayViewMut2::from_shape((self.inputs, self.outputs), &mut w_grad[..self.inputs * self.outputs])
            .expect("weight layout");
        general_mat_mul(1.0, &x.t(), &dy, 1.0, &mut dw);
        for (g, s) in b_grad[..self.outputs].iter_mut().zip(dy.sum_axis(Axis(0)).iter()) {
            *g += s;
        }
        want_dx.then(|| dy.dot(&self.weight(p).t()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub inputs: usize,
    pub hidden: Vec<usize>,
    pub outputs: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl MlpSpec {
    pub fn new(inputs: usize, hidden: &[usize], outputs: usize, output_activation: Activation) -> Self {
        Self {
            inputs,
            hidden: hidden.to_vec(),
            outputs,
            hidden_activation: Activation::Relu,
            output_activation,
        }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.inputs];
        w.extend(&self.hidden);
        w.push(self.outputs);
        w
    }
}

/// A multilayer perceptron with ReLU hidden layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    params: ParamVector,
    layers: Vec<Dense>,
}

/// Activations recorded by [`Mlp::forward_cached`]; `acts[0]` is the input.
#[derive(Clone, Debug)]
pub struct MlpCache {
    acts: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("cache holds the input at least")
    }

    /// Feeds the on/off state of every hidden ReLU into `hasher`.
    pub fn hash_gates(&self, hasher: &mut impl Hasher) {
        for act in &self.acts[1..self.acts.len() - 1] {
            hash_positive(act, hasher);
        }
    }
}

pub(crate) fn hash_positive(a: &Array2<f64>, hasher: &mut impl Hasher) {
    let mut word = 0u64;
    for (i, v) in a.iter().enumerate() {
        if *v > 0.0 {
            word |= 1 << (i % 64);
        }
        if i % 64 == 63 {
            hasher.write_u64(word);
            word = 0;
        }
    }
    hasher.write_u64(word);
}

impl Mlp {
    pub fn new(spec: MlpSpec, seed: u64) -> Self {
        let mut builder = ParamBuilder::new(seed);
        let layers = Self::declare(&spec, &mut builder);
        Self { spec, params: builder.finish(), layers }
    }

    /// Rebuilds a network around stored parameters, checking the layout.
    pub fn from_params(spec: MlpSpec, params: ParamVector) -> Result<Self> {
        let mut builder = ParamBuilder::new(params.init_seed());
        let layers = Self::declare(&spec, &mut builder);
        if !builder.finish().same_layout(&params) {
            return Err(Error::Shape("parameter layout does not match the network spec".into()));
        }
        Ok(Self { spec, params, layers })
    }

    fn declare(spec: &MlpSpec, builder: &mut ParamBuilder) -> Vec<Dense> {
        spec.widths()
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::declare(builder, &format!("fc{i}"), w[0], w[1]))
            .collect()
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.spec.output_activation
        } else {
            self.spec.hidden_activation
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let p = self.params.data();
        let mut h = self.layers[0].forward(p, x);
        self.activation(0).apply(&mut h);
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            h = layer.forward(p, h.view());
            self.activation(i).apply(&mut h);
        }
        h
    }

    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        self.forward(view).into_raw_vec_and_offset().0
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> MlpCache {
        let p = self.params.data();
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut h = layer.forward(p, acts[i].view());
            self.activation(i).apply(&mut h);
            acts.push(h);
        }
        MlpCache { acts }
    }

    /// Backpropagates `d_out` through the cached pass, accumulating into
    /// `grad`, and returns the gradient with respect to the input.
    pub fn backward(&self, cache: &MlpCache, d_out: ArrayView2<f64>, grad: &mut [f64]) -> Array2<f64> {
        self.backward_inner(cache, d_out, grad, true).expect("input gradient requested")
    }

    /// As [`Mlp::backward`] without computing the input gradient.
    pub fn backward_params(&self, cache: &MlpCache, d_out: ArrayView2<f64>, grad: &mut [f64]) {
        self.backward_inner(cache, d_out, grad, false);
    }

    /// Input gradient only; `grad` is left untouched.
    pub fn input_gradient(&self, cache: &MlpCache, d_out: ArrayView2<f64>) -> Array2<f64> {
        let p = self.params.data();
        let mut delta = d_out.to_owned();
        for i in (0..self.layers.len()).rev() {
            self.activation(i).backprop(&cache.acts[i + 1], &mut delta);
            delta = delta.dot(&self.layers[i].weight(p).t());
        }
        delta
    }

    fn backward_inner(
        &self,
        cache: &MlpCache,
        d_out: ArrayView2<f64>,
        grad: &mut [f64],
        want_dx: bool,
    ) -> Option<Array2<f64>> {
        assert_eq!(grad.len(), self.params.len());
        let p = self.params.data();
        let mut delta = d_out.to_owned();
        for i in (0..self.layers.len()).rev() {
            self.activation(i).backprop(&cache.acts[i + 1], &mut delta);
            let need = i > 0 || want_dx;
            match self.layers[i].backward(p, cache.acts[i].view(), delta.view(), grad, need) {
                Some(d) => delta = d,
                None => return None,
            }
        }
        Some(delta)
    }
}
