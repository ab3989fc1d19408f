//! Multilayer perceptrons with exact reverse-mode gradients.
//!
//! Layers compute `y = act(x W + b)` on row-major batches, with `W` stored
//! as `in_dim x out_dim` and `b` as `1 x out_dim`.

use rand::Rng as _;

use super::tensor::Tensor2;
use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;

/// Slope used for the default leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Identity,
}

impl Activation {
    pub fn leaky() -> Self {
        Activation::LeakyRelu(LEAKY_SLOPE)
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative evaluated at the pre-activation `x`; the kink at 0 takes the left slope.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn code(self) -> (u8, f64) {
        match self {
            Activation::Relu => (0, 0.0),
            Activation::LeakyRelu(s) => (1, s),
            Activation::Identity => (2, 0.0),
        }
    }

    pub(crate) fn from_code(code: u8, slope: f64) -> Result<Self> {
        match code {
            0 => Ok(Activation::Relu),
            1 if slope > 0.0 && slope < 1.0 => Ok(Activation::LeakyRelu(slope)),
            1 => Err(Error::InvalidInput(format!("leaky slope {slope} outside (0,1)"))),
            2 => Ok(Activation::Identity),
            _ => Err(Error::InvalidInput(format!("unknown activation code {code}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor2,
    pub bias: Tensor2,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

/// Parameter gradients, one `(d_weight, d_bias)` pair per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<(Tensor2, Tensor2)>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        MlpGrads {
            layers: params
                .layers
                .iter()
                .map(|l| {
                    (
                        Tensor2::zeros(l.weight.rows(), l.weight.cols()),
                        Tensor2::zeros(1, l.bias.cols()),
                    )
                })
                .collect(),
        }
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|(w, b)| [w.data(), b.data()])
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &MlpGrads, scale: f64) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in w.data_mut().iter_mut().zip(ow.data()) {
                *x += scale * y;
            }
            for (x, y) in b.data_mut().iter_mut().zip(ob.data()) {
                *x += scale * y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.blocks().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Activations saved by a batch forward pass for use in `backward_cached`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Tensor2>,
    pre: Vec<Tensor2>,
}

/// Reusable buffers for single-vector forward/backward, used by the projection loop.
#[derive(Debug, Clone, Default)]
pub struct VecTape {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
    grad_a: Vec<f64>,
    grad_b: Vec<f64>,
}

impl MlpParams {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return shape_err("an MLP needs at least one layer");
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.rows() != 1 || l.bias.cols() != l.out_dim() {
                return shape_err(format!(
                    "layer {i}: bias is {}x{}, expected 1x{}",
                    l.bias.rows(),
                    l.bias.cols(),
                    l.out_dim()
                ));
            }
            if let Activation::LeakyRelu(s) = l.activation {
                if !(s > 0.0 && s < 1.0) {
                    return Err(Error::InvalidInput(format!("layer {i}: leaky slope {s}")));
                }
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return shape_err(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                ));
            }
        }
        Ok(MlpParams { layers })
    }

    /// Uniform Glorot initialisation with zero biases. `dims` lists every
    /// width from input to output; hidden layers use `hidden`, the last `output`.
    pub fn init(dims: &[usize], hidden: Activation, output: Activation, rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 {
            return shape_err("need at least input and output widths");
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (dims[i], dims[i + 1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-limit..=limit))
                    .collect();
                Layer {
                    weight: Tensor2::from_vec(fan_in, fan_out, data).expect("sized"),
                    bias: Tensor2::zeros(1, fan_out),
                    activation: if i + 1 == n { output } else { hidden },
                }
            })
            .collect();
        MlpParams::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.data().len())
            .sum()
    }

    /// Parameter blocks in a fixed order: weight then bias for each layer.
    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.data()])
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.data_mut(), l.bias.data_mut()])
    }

    /// FNV-1a over the bit patterns of every parameter.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.blocks().flatten() {
            for byte in v.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    pub fn forward(&self, input: &Tensor2) -> Result<Tensor2> {
        self.check_input(input)?;
        let mut x = input.clone();
        for layer in &self.layers {
            let mut out = affine(&x, layer);
            for v in out.data_mut() {
                *v = layer.activation.apply(*v);
            }
            x = out;
        }
        Ok(x)
    }

    pub fn forward_cached(&self, input: &Tensor2) -> Result<(Tensor2, ForwardCache)> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let z = affine(&x, layer);
            let mut out = z.clone();
            for v in out.data_mut() {
                *v = layer.activation.apply(*v);
            }
            inputs.push(x);
            pre.push(z);
            x = out;
        }
        Ok((x, ForwardCache { inputs, pre }))
    }

    /// Gradients of `sum(upstream ⊙ forward(input))` with respect to the
    /// parameters and the input.
    pub fn backward(&self, input: &Tensor2, upstream: &Tensor2) -> Result<(MlpGrads, Tensor2)> {
        let (_, cache) = self.forward_cached(input)?;
        self.backward_cached(&cache, upstream)
    }

    pub fn backward_cached(&self, cache: &ForwardCache, upstream: &Tensor2) -> Result<(MlpGrads, Tensor2)> {
        let batch = cache.inputs[0].rows();
        if upstream.rows() != batch || upstream.cols() != self.output_dim() {
            return shape_err(format!(
                "upstream gradient is {}x{}, expected {}x{}",
                upstream.rows(),
                upstream.cols(),
                batch,
                self.output_dim()
            ));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut d_out = upstream.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let (n_in, n_out) = (layer.in_dim(), layer.out_dim());
            let pre = &cache.pre[l];
            let x = &cache.inputs[l];
            for (g, z) in d_out.data_mut().iter_mut().zip(pre.data()) {
                *g *= layer.activation.derivative(*z);
            }
            let mut dw = Tensor2::zeros(n_in, n_out);
            let mut db = Tensor2::zeros(1, n_out);
            let mut dx = Tensor2::zeros(batch, n_in);
            let w = layer.weight.data();
            for r in 0..batch {
                let g = d_out.row(r);
                let xr = x.row(r);
                for (b, gv) in db.data_mut().iter_mut().zip(g) {
                    *b += gv;
                }
                let dwd = dw.data_mut();
                for (k, &xv) in xr.iter().enumerate() {
                    if xv != 0.0 {
                        let dst = &mut dwd[k * n_out..(k + 1) * n_out];
                        for (d, gv) in dst.iter_mut().zip(g) {
                            *d += xv * gv;
                        }
                    }
                }
                let dxr = dx.row_mut(r);
                for (k, d) in dxr.iter_mut().enumerate() {
                    let wr = &w[k * n_out..(k + 1) * n_out];
                    *d = wr.iter().zip(g).map(|(a, b)| a * b).sum();
                }
            }
            grads.push((dw, db));
            d_out = dx;
        }
        grads.reverse();
        Ok((MlpGrads { layers: grads }, d_out))
    }

    /// Single-vector forward pass that records what `input_grad_vec` needs.
    pub fn forward_vec<'t>(&self, input: &[f64], tape: &'t mut VecTape) -> Result<&'t [f64]> {
        if input.len() != self.input_dim() {
            return shape_err(format!(
                "input has {} values, network expects {}",
                input.len(),
                self.input_dim()
            ));
        }
        let n = self.layers.len();
        tape.inputs.resize_with(n, Vec::new);
        tape.pre.resize_with(n, Vec::new);
        tape.inputs[0].clear();
        tape.inputs[0].extend_from_slice(input);
        for (l, layer) in self.layers.iter().enumerate() {
            let n_out = layer.out_dim();
            let pre = &mut tape.pre[l];
            pre.clear();
            pre.extend_from_slice(layer.bias.data());
            let w = layer.weight.data();
            for (k, &xv) in tape.inputs[l].iter().enumerate() {
                let wr = &w[k * n_out..(k + 1) * n_out];
                for (p, wv) in pre.iter_mut().zip(wr) {
                    *p += xv * wv;
                }
            }
            let act = layer.activation;
            if l + 1 < n {
                let next = &mut tape.inputs[l + 1];
                next.clear();
                next.extend(tape.pre[l].iter().map(|&z| act.apply(z)));
            } else {
                tape.output.clear();
                tape.output.extend(tape.pre[l].iter().map(|&z| act.apply(z)));
            }
        }
        Ok(&tape.output)
    }

    /// Gradient of `upstream · output` with respect to the input of the last
    /// `forward_vec` call recorded in `tape`.
    pub fn input_grad_vec(&self, tape: &mut VecTape, upstream: &[f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.output_dim() || tape.pre.len() != self.layers.len() {
            return shape_err("upstream gradient does not match the recorded forward pass");
        }
        tape.grad_a.clear();
        tape.grad_a.extend_from_slice(upstream);
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let n_out = layer.out_dim();
            for (g, &z) in tape.grad_a.iter_mut().zip(&tape.pre[l]) {
                *g *= layer.activation.derivative(z);
            }
            let w = layer.weight.data();
            tape.grad_b.clear();
            tape.grad_b.extend((0..layer.in_dim()).map(|k| {
                let wr = &w[k * n_out..(k + 1) * n_out];
                wr.iter().zip(&tape.grad_a).map(|(a, b)| a * b).sum::<f64>()
            }));
            std::mem::swap(&mut tape.grad_a, &mut tape.grad_b);
        }
        Ok(tape.grad_a.clone())
    }

    fn check_input(&self, input: &Tensor2) -> Result<()> {
        if input.cols() != self.input_dim() {
            return shape_err(format!(
                "input has {} columns, network expects {}",
                input.cols(),
                self.input_dim()
            ));
        }
        Ok(())
    }
}

fn affine(x: &Tensor2, layer: &Layer) -> Tensor2 {
    let n_out = layer.out_dim();
    let w = layer.weight.data();
    let mut out = Tensor2::zeros(x.rows(), n_out);
    for r in 0..x.rows() {
        let dst = out.row_mut(r);
        dst.copy_from_slice(layer.bias.data());
        for (k, &xv) in x.row(r).iter().enumerate() {
            if xv != 0.0 {
                let wr = &w[k * n_out..(k + 1) * n_out];
                for (d, wv) in dst.iter_mut().zip(wr) {
                    *d += xv * wv;
                }
            }
        }
    }
    out
}
