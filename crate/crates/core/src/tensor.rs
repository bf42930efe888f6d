//! Small dense feed-forward networks with hand-written reverse-mode
//! gradients and an Adam optimizer.
//!
//! Both the projection encoder and the mutual-information critics are
//! [`DenseNet`]s. Everything runs in `f64`; matrices are row-major
//! `ndarray` buffers with one sample per row.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("shape mismatch at layer {layer}: expected {expected} columns, got {got}")]
    Shape {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("layer {layer} expects input width {expected} but previous layer emits {got}")]
    Chain {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("network has no layers")]
    NoLayers,
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite value in {block}")]
    NonFinite { block: String },
    #[error("forward cache does not belong to this network or input ({0})")]
    StaleCache(&'static str),
    #[error("parameter block count mismatch: {params} parameter blocks, {grads} gradient blocks")]
    BlockCount { params: usize, grads: usize },
    #[error("block {block} has {params} parameters but {grads} gradients")]
    BlockLen {
        block: usize,
        params: usize,
        grads: usize,
    },
}

pub type Result<T, E = KernelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
        }
    }

    /// Multiplies `grad` in place by the activation derivative, expressed
    /// in terms of the activation output `out`.
    fn backprop(self, out: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => grad.zip_mut_with(out, |g, &o| {
                if o <= 0.0 {
                    *g = 0.0;
                }
            }),
            Activation::Tanh => grad.zip_mut_with(out, |g, &o| *g *= 1.0 - o * o),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// One affine map followed by an elementwise activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `d_out × d_in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Self {
        assert_eq!(weight.nrows(), bias.len(), "bias length must equal d_out");
        Self {
            weight,
            bias,
            activation,
        }
    }

    /// Glorot-uniform weights in ±√(6/(d_in+d_out)), zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        d_in: usize,
        d_out: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (d_in + d_out) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((d_out, d_in), || rng.random_range(-limit..=limit));
        Self::new(weight, Array1::zeros(d_out), activation)
    }

    pub fn d_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

/// Activations recorded by [`DenseNet::forward_cached`]; `outputs[k]` is
/// the post-activation output of layer `k`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Array2<f64>,
    outputs: Vec<Array2<f64>>,
    dims: Vec<usize>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("cache always holds at least one layer")
    }

    pub fn input(&self) -> &Array2<f64> {
        &self.input
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    /// Gradient with respect to the network input, same shape as the input batch.
    pub input: Array2<f64>,
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.extend(g.weight.iter().copied());
            out.extend(g.bias.iter().copied());
        }
        out
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for g in &self.layers {
            out.push(g.weight.as_slice().expect("gradients are standard layout"));
            out.push(g.bias.as_slice().expect("gradients are standard layout"));
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|g| g.weight.iter().chain(g.bias.iter()).map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Accumulates `scale * other` into `self`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.scaled_add(scale, &b.weight);
            a.bias.scaled_add(scale, &b.bias);
        }
        self.input.scaled_add(scale, &other.input);
    }
}

impl DenseNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(KernelError::NoLayers);
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[1].d_in() != pair[0].d_out() {
                return Err(KernelError::Chain {
                    layer: k + 1,
                    expected: pair[1].d_in(),
                    got: pair[0].d_out(),
                });
            }
        }
        Ok(Self { layers })
    }

    /// Multilayer perceptron over `dims = [d_in, h1, ..., d_out]` with
    /// `hidden` activations and an `output` activation on the last layer.
    pub fn mlp<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(KernelError::NoLayers);
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let act = if k == last { output } else { hidden };
                Layer::glorot(w[0], w[1], act, rng)
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn d_out(&self) -> usize {
        self.layers[self.layers.len() - 1].d_out()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    fn dims(&self) -> Vec<usize> {
        std::iter::once(self.d_in())
            .chain(self.layers.iter().map(Layer::d_out))
            .collect()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.nrows() == 0 {
            return Err(KernelError::EmptyInput);
        }
        if x.ncols() != self.d_in() {
            return Err(KernelError::Shape {
                layer: 0,
                expected: self.d_in(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    fn affine(layer: &Layer, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&layer.weight.t());
        z += &layer.bias;
        layer.activation.apply(&mut z);
        z
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut h = Self::affine(&self.layers[0], &x);
        for layer in &self.layers[1..] {
            h = Self::affine(layer, &h.view());
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(&x)?;
        let mut outputs: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let h = if k == 0 {
                Self::affine(layer, &x)
            } else {
                Self::affine(layer, &outputs[k - 1].view())
            };
            outputs.push(h);
        }
        Ok(ForwardCache {
            input: x.to_owned(),
            outputs,
            dims: self.dims(),
        })
    }

    /// Reverse pass for a loss whose gradient with respect to the network
    /// output is `upstream`.
    pub fn backward(&self, cache: &ForwardCache, upstream: ArrayView2<f64>) -> Result<Gradients> {
        if cache.dims != self.dims() {
            return Err(KernelError::StaleCache("layer dimensions differ"));
        }
        if upstream.dim() != cache.output().dim() {
            return Err(KernelError::StaleCache("upstream gradient shape differs from cached output"));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.to_owned();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            layer.activation.backprop(&cache.outputs[k], &mut delta);
            let input = if k == 0 {
                cache.input.view()
            } else {
                cache.outputs[k - 1].view()
            };
            let weight = delta.t().dot(&input).as_standard_layout().into_owned();
            let bias = delta.sum_axis(Axis(0));
            let next = delta.dot(&layer.weight);
            grads.push(LayerGrad { weight, bias });
            delta = next;
        }
        grads.reverse();
        Ok(Gradients {
            layers: grads,
            input: delta,
        })
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weight.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length");
        let mut offset = 0;
        for l in &mut self.layers {
            for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *v = flat[offset];
                offset += 1;
            }
        }
    }

    /// Parameter blocks in the order `layer0.weight, layer0.bias, layer1.weight, ...`.
    pub fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("parameters are standard layout"));
            out.push(l.bias.as_slice_mut().expect("parameters are standard layout"));
        }
        out
    }

    pub fn block_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|k| [format!("layer{k}.weight"), format!("layer{k}.bias")])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub hyper: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(hyper: AdamConfig) -> Self {
        Self {
            hyper,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// One bias-corrected Adam update over matching parameter/gradient
    /// blocks. Nothing is written if any gradient is non-finite.
    pub fn step_blocks(
        &mut self,
        params: &mut [&mut [f64]],
        grads: &[&[f64]],
        names: &[String],
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(KernelError::BlockCount {
                params: params.len(),
                grads: grads.len(),
            });
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(KernelError::BlockLen {
                    block: k,
                    params: p.len(),
                    grads: g.len(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                let block = names.get(k).cloned().unwrap_or_else(|| format!("block{k}"));
                return Err(KernelError::NonFinite { block });
            }
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != grads.len() || self.m.iter().zip(grads).any(|(m, g)| m.len() != g.len()) {
            return Err(KernelError::BlockCount {
                params: self.m.len(),
                grads: grads.len(),
            });
        }

        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.hyper;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (k, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], grads[k]);
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = if c1 > 0.0 { m[i] / c1 } else { m[i] };
                let v_hat = if c2 > 0.0 { v[i] / c2 } else { v[i] };
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients) -> Result<()> {
        let names = net.block_names();
        let grad_blocks = grads.blocks();
        let mut blocks = net.param_blocks_mut();
        self.step_blocks(&mut blocks, &grad_blocks, &names)
    }
}

/// `log((1/n) Σ exp(v_i))`, stable for large magnitudes.
pub fn logmeanexp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(KernelError::EmptyInput);
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(KernelError::NonFinite {
            block: "logmeanexp input".into(),
        });
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = v.iter().map(|x| (x - max).exp()).sum();
    Ok(max + (sum / v.len() as f64).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(w: Array2<f64>, b: Array1<f64>, act: Activation) -> DenseNet {
        DenseNet::new(vec![Layer::new(w, b, act)]).unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = single(Array2::eye(2), Array1::zeros(2), Activation::Identity);
        let out = net.forward(array![[3.0, -1.0]].view()).unwrap();
        assert_eq!(out, array![[3.0, -1.0]]);
    }

    #[test]
    fn scalar_affine() {
        let net = single(array![[2.0]], array![1.0], Activation::Identity);
        assert_eq!(net.forward(array![[3.0]].view()).unwrap(), array![[7.0]]);
    }

    #[test]
    fn shape_error_names_layer() {
        let net = single(Array2::eye(2), Array1::zeros(2), Activation::Identity);
        let err = net.forward(array![[1.0, 2.0, 3.0]].view()).unwrap_err();
        assert_eq!(
            err,
            KernelError::Shape {
                layer: 0,
                expected: 2,
                got: 3
            }
        );
    }

    #[test]
    fn unchained_layers_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Layer::glorot(3, 4, Activation::Relu, &mut rng);
        let b = Layer::glorot(5, 1, Activation::Identity, &mut rng);
        assert!(matches!(
            DenseNet::new(vec![a, b]),
            Err(KernelError::Chain { layer: 1, .. })
        ));
    }

    #[test]
    fn sum_loss_bias_gradient_is_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::mlp(&[3, 4], Activation::Identity, Activation::Identity, &mut rng).unwrap();
        let x = array![[0.5, -1.0, 2.0]];
        let cache = net.forward_cached(x.view()).unwrap();
        let g = net.backward(&cache, Array2::ones((1, 4)).view()).unwrap();
        assert_eq!(g.layers[0].bias, Array1::<f64>::ones(4));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = DenseNet::mlp(&[3, 5, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i as f64 - j as f64) * 0.3);
        let cache = net.forward_cached(x.view()).unwrap();
        let g = net.backward(&cache, Array2::zeros((4, 2)).view()).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
        assert!(g.input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cache_from_other_network_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DenseNet::mlp(&[2, 3, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let b = DenseNet::mlp(&[2, 4, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let cache = a.forward_cached(array![[1.0, 2.0]].view()).unwrap();
        assert!(matches!(
            b.backward(&cache, array![[1.0]].view()),
            Err(KernelError::StaleCache(_))
        ));
        assert!(matches!(
            a.backward(&cache, array![[1.0], [2.0]].view()),
            Err(KernelError::StaleCache(_))
        ));
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = Layer::glorot(512, 64, Activation::Identity, &mut rng);
        let limit = (6.0f64 / 576.0).sqrt();
        assert!(l.weight.iter().all(|w| w.abs() <= limit));
        assert!(l.bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = vec![1.5, -2.0];
        let mut state = AdamState::new(AdamConfig::default());
        state
            .step_blocks(&mut [p.as_mut_slice()], &[&[0.0, 0.0]], &[])
            .unwrap();
        assert_eq!(p, vec![1.5, -2.0]);
        assert_eq!(state.steps(), 1);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut p = vec![0.0];
        let mut state = AdamState::new(AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        });
        state.step_blocks(&mut [p.as_mut_slice()], &[&[0.5]], &[]).unwrap();
        let expected = -0.1 * (0.5 / (0.5 + 1e-8));
        assert!((p[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut theta = vec![1.0];
        let mut state = AdamState::new(AdamConfig::with_lr(0.1));
        for _ in 0..100 {
            let g = 2.0 * theta[0];
            state.step_blocks(&mut [theta.as_mut_slice()], &[&[g]], &[]).unwrap();
        }
        assert!(theta[0].abs() < 0.05, "theta = {}", theta[0]);
        assert_eq!(state.steps(), 100);
        assert!(state.second_moments()[0][0] >= 0.0);
    }

    #[test]
    fn adam_rejects_non_finite_and_names_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = DenseNet::mlp(&[2, 2, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let before = net.clone();
        let cache = net.forward_cached(array![[1.0, 1.0]].view()).unwrap();
        let mut g = net.backward(&cache, array![[1.0]].view()).unwrap();
        g.layers[1].bias[0] = f64::NAN;
        let mut state = AdamState::new(AdamConfig::default());
        let err = state.step(&mut net, &g).unwrap_err();
        assert_eq!(
            err,
            KernelError::NonFinite {
                block: "layer1.bias".into()
            }
        );
        assert_eq!(net, before);
        assert_eq!(state.steps(), 0);
    }

    #[test]
    fn logmeanexp_cases() {
        assert_eq!(logmeanexp(&[2.5, 2.5, 2.5]).unwrap(), 2.5);
        assert_eq!(logmeanexp(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(logmeanexp(&[1000.0, 1000.0]).unwrap(), 1000.0);
        assert_eq!(logmeanexp(&[]), Err(KernelError::EmptyInput));
    }
}
