use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::numerics::{dot, Matrix, Rng};

// Every distinct parameter state gets a fresh stamp; tapes record it so a
// backward pass against modified or foreign parameters is caught.
static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

/// What the network applies after its last linear layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputHead {
    Identity,
    /// Row-wise `z / ‖z‖₂`, so downstream cosine costs see unit vectors.
    L2Normalize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// `N(0, 2 / fan_in)` weights, zero biases.
    HeNormal,
    Zeros,
}

/// One affine layer, `out = input · weightᵀ + bias`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `fan_out × fan_in`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Fully connected ReLU network.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    layers: Vec<Linear>,
    head: OutputHead,
    #[serde(skip, default = "fresh_stamp")]
    stamp: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.sizes == other.sizes && self.layers == other.layers && self.head == other.head
    }
}

/// Builds a network with layer widths `sizes` (input first, output last).
pub fn init_mlp(rng: &mut Rng, sizes: &[usize], scheme: InitScheme, head: OutputHead) -> Result<Mlp> {
    if sizes.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "an MLP needs at least input and output sizes, got {sizes:?}"
        )));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidArgument(format!("layer sizes must be >= 1, got {sizes:?}")));
    }
    let layers = sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weight = match scheme {
                InitScheme::HeNormal => {
                    let std = (2.0 / fan_in as f64).sqrt();
                    rng.standard_normal(fan_out, fan_in).map(|m| m.scale(std))
                }
                InitScheme::Zeros => Ok(Matrix::zeros(fan_out, fan_in)),
            }?;
            Ok(Linear {
                weight,
                bias: vec![0.0; fan_out],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Mlp {
        sizes: sizes.to_vec(),
        layers,
        head,
        stamp: fresh_stamp(),
    })
}

/// Intermediates recorded by [`Mlp::forward`] for the matching backward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    stamp: u64,
    /// Input to each linear layer (post-ReLU for hidden layers).
    inputs: Vec<Matrix>,
    /// Pre-activation of each hidden layer.
    pre_acts: Vec<Matrix>,
    /// Final linear output before the head.
    logits: Matrix,
    /// Row norms of `logits` when the head normalizes.
    norms: Vec<f64>,
}

impl Tape {
    pub fn batch_size(&self) -> usize {
        self.logits.rows()
    }

    /// Which hidden units were active, layer by layer in row-major order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.pre_acts.iter().flat_map(|m| m.data().iter().map(|&v| v > 0.0)).collect()
    }
}

/// Parameter-shaped gradient (or update) for an [`Mlp`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Linear>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Linear {
                    weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(dim_err("Gradients::add_assign", "layer count differs"));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.add_assign(&b.weight)?;
            if a.bias.len() != b.bias.len() {
                return Err(dim_err("Gradients::add_assign", "bias length differs"));
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight.data_mut().iter_mut().for_each(|v| *v *= s);
            l.bias.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Flattened in parameter order: each layer's weight (row-major), then its bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weight.data().len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max_abs(&self) -> f64 {
        self.to_flat().iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

impl Mlp {
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn head(&self) -> OutputHead {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("sizes has at least two entries")
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.data().len() + l.bias.len()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(dim_err(
                "Mlp::set_params_flat",
                format!("expected {} values, got {}", self.num_params(), flat.len()),
            ));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Mlp parameters"));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let n = l.weight.data().len();
            l.weight.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
            let n = l.bias.len();
            l.bias.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        self.stamp = fresh_stamp();
        Ok(())
    }

    /// A network of the given shape holding `flat` in [`Mlp::params_flat`] order.
    pub fn from_params(sizes: &[usize], head: OutputHead, flat: &[f64]) -> Result<Mlp> {
        let mut net = init_mlp(&mut Rng::new(0), sizes, InitScheme::Zeros, head)?;
        net.set_params_flat(flat)?;
        Ok(net)
    }

    /// Mutable access to the raw layers. Invalidates outstanding tapes.
    pub fn layers_mut(&mut self) -> &mut [Linear] {
        self.stamp = fresh_stamp();
        &mut self.layers
    }

    /// Inference without recording a tape.
    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        self.forward(input).map(|(out, _)| out)
    }

    pub fn forward(&self, input: &Matrix) -> Result<(Matrix, Tape)> {
        if input.cols() != self.input_dim() {
            return Err(dim_err(
                "Mlp::forward",
                format!("input has {} columns, network expects {}", input.cols(), self.input_dim()),
            ));
        }
        let n_layers = self.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre_acts = Vec::with_capacity(n_layers - 1);
        let mut h = input.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut z = h.matmul_t(&layer.weight)?;
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            inputs.push(h);
            if idx + 1 < n_layers {
                let a = z.map(|v| v.max(0.0));
                pre_acts.push(z);
                h = a;
            } else {
                h = z;
            }
        }
        let logits = h;
        let (out, norms) = match self.head {
            OutputHead::Identity => (logits.clone(), Vec::new()),
            OutputHead::L2Normalize => {
                let norms: Vec<f64> = logits.row_iter().map(|r| dot(r, r).sqrt()).collect();
                let mut out = logits.clone();
                for (r, &n) in norms.iter().enumerate() {
                    if n > 0.0 {
                        out.row_mut(r).iter_mut().for_each(|v| *v /= n);
                    }
                }
                (out, norms)
            }
        };
        if !out.is_finite() {
            return Err(Error::NonFinite("Mlp::forward output"));
        }
        Ok((
            out,
            Tape {
                stamp: self.stamp,
                inputs,
                pre_acts,
                logits,
                norms,
            },
        ))
    }

    /// Reverse-mode pass. Returns parameter gradients and the gradient with
    /// respect to the forward input.
    pub fn backward(&self, tape: &Tape, output_grad: &Matrix) -> Result<(Gradients, Matrix)> {
        if tape.stamp != self.stamp {
            return Err(Error::StaleTape(
                "parameters changed (or a different network) since the forward pass".into(),
            ));
        }
        if output_grad.shape() != tape.logits.shape() {
            return Err(dim_err(
                "Mlp::backward",
                format!("output grad {:?} vs output {:?}", output_grad.shape(), tape.logits.shape()),
            ));
        }
        let mut grad = match self.head {
            OutputHead::Identity => output_grad.clone(),
            OutputHead::L2Normalize => {
                // d(z/|z|) = (I - n nᵀ) g / |z|
                let mut g = output_grad.clone();
                for (r, &norm) in tape.norms.iter().enumerate() {
                    if norm == 0.0 {
                        continue;
                    }
                    let z = tape.logits.row(r);
                    let gz = g.row_mut(r);
                    let proj = dot(z, gz) / (norm * norm);
                    for (gv, zv) in gz.iter_mut().zip(z) {
                        *gv = (*gv - proj * zv) / norm;
                    }
                }
                g
            }
        };
        let mut grads = Gradients {
            layers: Vec::with_capacity(self.layers.len()),
        };
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            let input = &tape.inputs[idx];
            let weight_grad = grad.t_matmul(input)?;
            let bias_grad = grad.col_sums();
            let mut input_grad = grad.matmul(&layer.weight)?;
            if idx > 0 {
                let pre = &tape.pre_acts[idx - 1];
                for (g, &p) in input_grad.data_mut().iter_mut().zip(pre.data()) {
                    if p <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            grads.layers.push(Linear {
                weight: weight_grad,
                bias: bias_grad,
            });
            grad = input_grad;
        }
        grads.layers.reverse();
        Ok((grads, grad))
    }

    /// `params += alpha · delta`
    pub fn apply_update(&mut self, delta: &Gradients, alpha: f64) -> Result<()> {
        if delta.layers.len() != self.layers.len() {
            return Err(dim_err("Mlp::apply_update", "layer count differs"));
        }
        for (l, d) in self.layers.iter_mut().zip(&delta.layers) {
            l.weight.axpy(alpha, &d.weight)?;
            for (b, g) in l.bias.iter_mut().zip(&d.bias) {
                *b += alpha * g;
            }
        }
        self.stamp = fresh_stamp();
        Ok(())
    }
}
