use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::glorot_uniform;
use super::tensor::{matvec_acc, matvec_t_acc, outer_acc, Tensor};
use super::{Gradients, Parameters};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// First derivative, given the pre-activation and its output.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    #[inline]
    pub fn second_derivative(self, a: f64) -> f64 {
        match self {
            Activation::Linear | Activation::Relu => 0.0,
            Activation::Tanh => -2.0 * a * (1.0 - a * a),
        }
    }
}

/// Fully connected layer `y = act(W x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    weight: Tensor,
    bias: Tensor,
    activation: Activation,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Vec<f64>,
    pre: Vec<f64>,
    out: Vec<f64>,
}

/// Forward-mode companion of [`DenseCache`]: also carries the directional
/// derivative of each quantity along a fixed input direction.
#[derive(Debug, Clone)]
pub struct DenseTangentCache {
    base: DenseCache,
    d_input: Vec<f64>,
    d_pre: Vec<f64>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let w = glorot_uniform(rng, inputs, outputs, inputs * outputs);
        Self {
            weight: Tensor::new(vec![outputs, inputs], w).expect("shape by construction"),
            bias: Tensor::zeros(vec![outputs]),
            activation,
        }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::ShapeMismatch {
                layer: "dense".into(),
                expected: weight.shape().first().copied().unwrap_or(0),
                found: bias.len(),
            });
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    fn check_input(&self, x: &[f64], name: &str) -> Result<()> {
        if x.len() != self.inputs() {
            return Err(Error::ShapeMismatch {
                layer: name.to_string(),
                expected: self.inputs(),
                found: x.len(),
            });
        }
        Ok(())
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.bias.data().to_vec();
        matvec_acc(self.weight.data(), self.inputs(), x, &mut z);
        z
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, DenseCache)> {
        self.check_input(x, "dense")?;
        let pre = self.affine(x);
        let out: Vec<f64> = pre.iter().map(|&z| self.activation.apply(z)).collect();
        Ok((
            out.clone(),
            DenseCache {
                input: x.to_vec(),
                pre,
                out,
            },
        ))
    }

    /// Applies the layer without keeping a cache.
    pub fn infer(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.affine(x);
        for v in &mut z {
            *v = self.activation.apply(*v);
        }
        z
    }

    /// Accumulates parameter gradients into `grad` (layout: weights, then bias)
    /// and returns the gradient with respect to the input.
    pub fn backward(&self, cache: &DenseCache, grad_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let n_in = self.inputs();
        let gz: Vec<f64> = grad_out
            .iter()
            .zip(cache.pre.iter().zip(&cache.out))
            .map(|(g, (&z, &a))| g * self.activation.derivative(z, a))
            .collect();
        let (gw, gb) = grad.split_at_mut(self.weight.len());
        outer_acc(gw, n_in, &gz, &cache.input);
        for (b, g) in gb.iter_mut().zip(&gz) {
            *b += g;
        }
        let mut gx = vec![0.0; n_in];
        matvec_t_acc(self.weight.data(), n_in, &gz, &mut gx);
        gx
    }

    pub fn forward_tangent(&self, x: &[f64], dx: &[f64]) -> Result<(Vec<f64>, Vec<f64>, DenseTangentCache)> {
        self.check_input(x, "dense")?;
        self.check_input(dx, "dense (tangent)")?;
        let pre = self.affine(x);
        let mut d_pre = vec![0.0; self.outputs()];
        matvec_acc(self.weight.data(), self.inputs(), dx, &mut d_pre);
        let out: Vec<f64> = pre.iter().map(|&z| self.activation.apply(z)).collect();
        let d_out: Vec<f64> = d_pre
            .iter()
            .zip(pre.iter().zip(&out))
            .map(|(dz, (&z, &a))| self.activation.derivative(z, a) * dz)
            .collect();
        let cache = DenseTangentCache {
            base: DenseCache {
                input: x.to_vec(),
                pre,
                out: out.clone(),
            },
            d_input: dx.to_vec(),
            d_pre,
        };
        Ok((out, d_out, cache))
    }

    /// Reverse pass through [`Dense::forward_tangent`]: given gradients of a
    /// loss with respect to the output and its tangent, accumulates parameter
    /// gradients and returns gradients for the input and input tangent.
    pub fn backward_tangent(
        &self,
        cache: &DenseTangentCache,
        grad_out: &[f64],
        grad_d_out: &[f64],
        grad: &mut [f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let n_in = self.inputs();
        let base = &cache.base;
        let mut gz = vec![0.0; self.outputs()];
        let mut gdz = vec![0.0; self.outputs()];
        for k in 0..self.outputs() {
            let (z, a) = (base.pre[k], base.out[k]);
            let s1 = self.activation.derivative(z, a);
            let s2 = self.activation.second_derivative(a);
            gz[k] = grad_out[k] * s1 + grad_d_out[k] * s2 * cache.d_pre[k];
            gdz[k] = grad_d_out[k] * s1;
        }
        let (gw, gb) = grad.split_at_mut(self.weight.len());
        outer_acc(gw, n_in, &gz, &base.input);
        outer_acc(gw, n_in, &gdz, &cache.d_input);
        for (b, g) in gb.iter_mut().zip(&gz) {
            *b += g;
        }
        let mut gx = vec![0.0; n_in];
        let mut gdx = vec![0.0; n_in];
        matvec_t_acc(self.weight.data(), n_in, &gz, &mut gx);
        matvec_t_acc(self.weight.data(), n_in, &gdz, &mut gdx);
        (gx, gdx)
    }
}

impl Parameters for Dense {
    fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.weight.data());
        out.extend_from_slice(self.bias.data());
    }

    fn read_params(&mut self, src: &mut &[f64]) {
        let (w, rest) = src.split_at(self.weight.len());
        let (b, rest) = rest.split_at(self.bias.len());
        self.weight.data_mut().copy_from_slice(w);
        self.bias.data_mut().copy_from_slice(b);
        *src = rest;
    }
}

/// Stack of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    layers: Vec<DenseCache>,
}

#[derive(Debug, Clone)]
pub struct MlpTangentCache {
    layers: Vec<DenseTangentCache>,
}

impl Mlp {
    /// `sizes` lists the widths from input to output; hidden layers use
    /// `hidden`, the last layer uses `output`.
    pub fn new(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut impl Rng) -> Self {
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                Dense::new(sizes[i], sizes[i + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::ShapeMismatch {
                    layer: format!("dense[{}]", i + 1),
                    expected: w[0].outputs(),
                    found: w[1].inputs(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, Dense::outputs)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.inputs() {
            return Err(Error::ShapeMismatch {
                layer: "dense[0]".into(),
                expected: self.inputs(),
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for layer in &self.layers {
            let (out, cache) = layer.forward(&h)?;
            caches.push(cache);
            h = out;
        }
        Ok((h, MlpCache { layers: caches }))
    }

    pub fn infer(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.layers.iter().fold(x.to_vec(), |h, l| l.infer(&h)))
    }

    pub fn backward_into(&self, cache: &MlpCache, grad_out: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        self.check_cache(cache.layers.len())?;
        self.check_grad(grad)?;
        let mut slices = split_params(&self.layers, grad);
        let mut g = grad_out.to_vec();
        for ((layer, c), slot) in self.layers.iter().zip(&cache.layers).zip(&mut slices).rev() {
            g = layer.backward(c, &g, slot);
        }
        Ok(g)
    }

    pub fn backward(&self, cache: &MlpCache, grad_out: &[f64]) -> Result<Gradients> {
        let mut params = vec![0.0; self.n_params()];
        let input = self.backward_into(cache, grad_out, &mut params)?;
        Ok(Gradients { params, input })
    }

    /// Forward pass that also propagates the directional derivative `dx`.
    pub fn forward_tangent(&self, x: &[f64], dx: &[f64]) -> Result<(Vec<f64>, Vec<f64>, MlpTangentCache)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let (mut h, mut dh) = (x.to_vec(), dx.to_vec());
        for layer in &self.layers {
            let (out, d_out, cache) = layer.forward_tangent(&h, &dh)?;
            caches.push(cache);
            h = out;
            dh = d_out;
        }
        Ok((h, dh, MlpTangentCache { layers: caches }))
    }

    pub fn backward_tangent_into(
        &self,
        cache: &MlpTangentCache,
        grad_out: &[f64],
        grad_d_out: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        self.check_cache(cache.layers.len())?;
        self.check_grad(grad)?;
        let mut slices = split_params(&self.layers, grad);
        let (mut g, mut gd) = (grad_out.to_vec(), grad_d_out.to_vec());
        for ((layer, c), slot) in self.layers.iter().zip(&cache.layers).zip(&mut slices).rev() {
            (g, gd) = layer.backward_tangent(c, &g, &gd, slot);
        }
        Ok(())
    }

    fn check_cache(&self, n: usize) -> Result<()> {
        if n != self.layers.len() {
            return Err(Error::Missing(format!(
                "forward cache: {n} layer(s) cached for a {}-layer model",
                self.layers.len()
            )));
        }
        Ok(())
    }

    fn check_grad(&self, grad: &[f64]) -> Result<()> {
        if grad.len() != self.n_params() {
            return Err(Error::ShapeMismatch {
                layer: "gradient buffer".into(),
                expected: self.n_params(),
                found: grad.len(),
            });
        }
        Ok(())
    }
}

fn split_params<'a>(layers: &[Dense], mut grad: &'a mut [f64]) -> Vec<&'a mut [f64]> {
    let mut out = Vec::with_capacity(layers.len());
    for layer in layers {
        let (head, tail) = grad.split_at_mut(layer.n_params());
        out.push(head);
        grad = tail;
    }
    out
}

impl Parameters for Mlp {
    fn n_params(&self) -> usize {
        self.layers.iter().map(Parameters::n_params).sum()
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            l.write_params(out);
        }
    }

    fn read_params(&mut self, src: &mut &[f64]) {
        for l in &mut self.layers {
            l.read_params(src);
        }
    }
}
