use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    LeakyRelu(f64),
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu(s) if z <= 0.0 => s * z,
            _ => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu(s) if z <= 0.0 => s,
            _ => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

/// One affine layer. `weights` is `out_dim x in_dim`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn affine(&self, x: &[f64]) -> Vec<f64> {
        let n = self.spec.in_dim;
        self.weights
            .chunks_exact(n)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }
}

/// Dense regression network: affine layers with LeakyReLU between them and
/// a linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
    rng_seed: u64,
}

/// Per-layer parameter gradients, shaped like the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(m: &Mlp) -> Self {
        Self {
            weights: m
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            bias: m.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        let pairs = self
            .weights
            .iter_mut()
            .zip(&other.weights)
            .chain(self.bias.iter_mut().zip(&other.bias));
        for (dst, src) in pairs {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += scale * s);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.bias)
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Mse,
    Mae,
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(LossMode::Mse),
            "mae" => Ok(LossMode::Mae),
            _ => Err(Error::Argument(format!("unknown loss `{s}` (mse|mae)"))),
        }
    }
}

pub fn loss(pred: &[f64], target: &[f64], mode: LossMode) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::shape(format!(
            "prediction has {} scores, target {}",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len() as f64;
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| match mode {
            LossMode::Mse => (p - t) * (p - t),
            LossMode::Mae => (p - t).abs(),
        })
        .sum();
    Ok(total / n)
}

fn loss_grad(pred: &[f64], target: &[f64], mode: LossMode) -> Vec<f64> {
    let n = pred.len() as f64;
    pred.iter()
        .zip(target)
        .map(|(p, t)| match mode {
            LossMode::Mse => 2.0 * (p - t) / n,
            LossMode::Mae => {
                let d = p - t;
                if d > 0.0 {
                    1.0 / n
                } else if d < 0.0 {
                    -1.0 / n
                } else {
                    0.0
                }
            }
        })
        .collect()
}

impl Mlp {
    /// Build from explicit layer specs with seeded Glorot-uniform weights and
    /// zero biases.
    pub fn from_specs(specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::shape("network needs at least one layer"));
        }
        for (i, s) in specs.iter().enumerate() {
            if s.in_dim == 0 || s.out_dim == 0 {
                return Err(Error::shape(format!("layer {i} has a zero dimension")));
            }
            if let Activation::LeakyRelu(slope) = s.activation {
                if !slope.is_finite() {
                    return Err(Error::Argument(format!("layer {i}: non-finite slope")));
                }
            }
        }
        if let Some(i) = specs.windows(2).position(|w| w[0].out_dim != w[1].in_dim) {
            return Err(Error::shape(format!(
                "layer {} emits {} values but layer {} expects {}",
                i,
                specs[i].out_dim,
                i + 1,
                specs[i + 1].in_dim
            )));
        }
        if specs.last().map(|s| s.activation) != Some(Activation::Identity) {
            return Err(Error::shape("final layer must be linear"));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .into_iter()
            .map(|spec| {
                let limit = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
                let weights = (0..spec.in_dim * spec.out_dim)
                    .map(|_| rng.gen_range(-limit..=limit))
                    .collect();
                Layer {
                    spec,
                    weights,
                    bias: vec![0.0; spec.out_dim],
                }
            })
            .collect();
        Ok(Self {
            layers,
            rng_seed: seed,
        })
    }

    /// `dims = [input, hidden..., output]`; hidden layers use LeakyReLU.
    pub fn new(dims: &[usize], slope: f64, seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::shape("need at least input and output dims"));
        }
        let last = dims.len() - 2;
        let specs = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerSpec {
                in_dim: w[0],
                out_dim: w[1],
                activation: if i == last {
                    Activation::Identity
                } else {
                    Activation::LeakyRelu(slope)
                },
            })
            .collect();
        Self::from_specs(specs, seed)
    }

    /// The head-avatar predictor stack: input -> 512 -> 256 -> 128 -> 64 -> exits.
    pub fn avatar_preset(input_dim: usize, exits: usize, seed: u64) -> Result<Self> {
        Self::new(
            &[input_dim, 512, 256, 128, 64, exits],
            DEFAULT_LEAKY_SLOPE,
            seed,
        )
    }

    pub(crate) fn from_parts(layers: Vec<Layer>, rng_seed: u64) -> Self {
        Self { layers, rng_seed }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.out_dim
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        for layer in &self.layers {
            let act = layer.spec.activation;
            a = layer.affine(&a).into_iter().map(|z| act.apply(z)).collect();
        }
        Ok(a)
    }

    /// Loss on one example and the exact gradient of that loss with respect
    /// to every weight and bias.
    pub fn backward(&self, x: &[f64], target: &[f64], mode: LossMode) -> Result<(f64, Gradients)> {
        self.check_input(x)?;
        if target.len() != self.output_dim() {
            return Err(Error::shape(format!(
                "target has {} scores, model emits {}",
                target.len(),
                self.output_dim()
            )));
        }
        // inputs[i] feeds layer i; pre[i] is its pre-activation
        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        inputs.push(x.to_vec());
        for layer in &self.layers {
            let z = layer.affine(inputs.last().expect("non-empty"));
            let act = layer.spec.activation;
            inputs.push(z.iter().map(|&v| act.apply(v)).collect());
            pre.push(z);
        }
        let out = inputs.last().expect("non-empty");
        let value = loss(out, target, mode)?;

        let mut grads = Gradients::zeros_like(self);
        let mut delta = loss_grad(out, target, mode);
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let act = layer.spec.activation;
            delta
                .iter_mut()
                .zip(&pre[li])
                .for_each(|(d, &z)| *d *= act.derivative(z));
            let input = &inputs[li];
            let n = layer.spec.in_dim;
            for (o, &d) in delta.iter().enumerate() {
                let row = &mut grads.weights[li][o * n..(o + 1) * n];
                row.iter_mut().zip(input).for_each(|(g, &v)| *g = d * v);
                grads.bias[li][o] = d;
            }
            if li > 0 {
                let mut prev = vec![0.0; n];
                for (row, &d) in layer.weights.chunks_exact(n).zip(&delta) {
                    prev.iter_mut().zip(row).for_each(|(p, w)| *p += w * d);
                }
                delta = prev;
            }
        }
        Ok((value, grads))
    }

    /// Mean loss and mean gradient over a batch of `(input, target)` pairs.
    pub fn batch_gradient<'a>(
        &self,
        batch: impl IntoIterator<Item = (&'a [f64], &'a [f64])>,
        mode: LossMode,
    ) -> Result<(f64, Gradients)> {
        let mut acc = Gradients::zeros_like(self);
        let mut total = 0.0;
        let mut count = 0usize;
        for (x, t) in batch {
            let (l, g) = self.backward(x, t, mode)?;
            total += l;
            acc.add_scaled(&g, 1.0);
            count += 1;
        }
        if count == 0 {
            return Err(Error::Argument("empty batch".into()));
        }
        let inv = 1.0 / count as f64;
        let mut mean = Gradients::zeros_like(self);
        mean.add_scaled(&acc, inv);
        Ok((total * inv, mean))
    }

    pub(crate) fn apply_step(&mut self, grads: &Gradients, lr: f64) {
        for (li, layer) in self.layers.iter_mut().enumerate() {
            layer
                .weights
                .iter_mut()
                .zip(&grads.weights[li])
                .for_each(|(w, g)| *w -= lr * g);
            layer
                .bias
                .iter_mut()
                .zip(&grads.bias[li])
                .for_each(|(b, g)| *b -= lr * g);
        }
    }
}
