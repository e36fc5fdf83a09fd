use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::glorot_uniform;
use super::tensor::{matvec_acc, matvec_t_acc, outer_acc, Tensor};
use super::Parameters;
use crate::error::{Error, Result};

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Single-direction LSTM with input, forget, cell and output gates.
///
/// Gate rows are stacked in the order `i, f, g, o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    input_weight: Tensor,
    recurrent_weight: Tensor,
    bias: Tensor,
}

/// Per-step activations kept for backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmCache {
    steps: usize,
    inputs: Vec<f64>,
    gates: Vec<f64>,
    cells: Vec<f64>,
    cell_tanh: Vec<f64>,
    hidden: Vec<f64>,
}

impl Lstm {
    pub fn new(inputs: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let w = glorot_uniform(rng, inputs, 4 * hidden, 4 * hidden * inputs);
        let u = glorot_uniform(rng, hidden, 4 * hidden, 4 * hidden * hidden);
        let mut b = vec![0.0; 4 * hidden];
        // Forget gate starts open.
        b[hidden..2 * hidden].fill(1.0);
        Self {
            input_weight: Tensor::new(vec![4 * hidden, inputs], w).expect("shape"),
            recurrent_weight: Tensor::new(vec![4 * hidden, hidden], u).expect("shape"),
            bias: Tensor::new(vec![4 * hidden], b).expect("shape"),
        }
    }

    pub fn inputs(&self) -> usize {
        self.input_weight.shape()[1]
    }

    pub fn hidden(&self) -> usize {
        self.recurrent_weight.shape()[1]
    }

    /// Runs `steps` frames of a row-major `steps x inputs` sequence from a
    /// zero initial state. Returns the `steps x hidden` hidden states.
    pub fn forward(&self, xs: &[f64], steps: usize) -> Result<(Vec<f64>, LstmCache)> {
        let (n_in, h) = (self.inputs(), self.hidden());
        if steps == 0 {
            return Err(Error::Empty("sequence".into()));
        }
        if xs.len() != steps * n_in {
            return Err(Error::ShapeMismatch {
                layer: "lstm input".into(),
                expected: steps * n_in,
                found: xs.len(),
            });
        }
        let mut gates = vec![0.0; steps * 4 * h];
        let mut cells = vec![0.0; steps * h];
        let mut cell_tanh = vec![0.0; steps * h];
        let mut hidden = vec![0.0; steps * h];
        let zeros = vec![0.0; h];
        for t in 0..steps {
            let x = &xs[t * n_in..(t + 1) * n_in];
            let z = &mut gates[t * 4 * h..(t + 1) * 4 * h];
            z.copy_from_slice(self.bias.data());
            matvec_acc(self.input_weight.data(), n_in, x, z);
            let (h_prev, c_prev) = if t == 0 {
                (&zeros[..], &zeros[..])
            } else {
                (&hidden[(t - 1) * h..t * h], &cells[(t - 1) * h..t * h])
            };
            matvec_acc(self.recurrent_weight.data(), h, h_prev, z);
            let mut c_new = vec![0.0; h];
            for k in 0..h {
                let i = sigmoid(z[k]);
                let f = sigmoid(z[h + k]);
                let g = z[2 * h + k].tanh();
                let o = sigmoid(z[3 * h + k]);
                z[k] = i;
                z[h + k] = f;
                z[2 * h + k] = g;
                z[3 * h + k] = o;
                c_new[k] = f * c_prev[k] + i * g;
            }
            for k in 0..h {
                let tc = c_new[k].tanh();
                cell_tanh[t * h + k] = tc;
                hidden[t * h + k] = z[3 * h + k] * tc;
            }
            cells[t * h..(t + 1) * h].copy_from_slice(&c_new);
        }
        let cache = LstmCache {
            steps,
            inputs: xs.to_vec(),
            gates,
            cells,
            cell_tanh,
            hidden: hidden.clone(),
        };
        Ok((hidden, cache))
    }

    /// Backpropagation through time. `d_hidden` is the loss gradient for each
    /// step's hidden state; parameter gradients are accumulated into `grad`
    /// (layout: input weights, recurrent weights, bias). Returns input gradients.
    pub fn backward(&self, cache: &LstmCache, d_hidden: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        let (n_in, h, steps) = (self.inputs(), self.hidden(), cache.steps);
        if d_hidden.len() != steps * h || cache.hidden.len() != steps * h {
            return Err(Error::Missing("LSTM cache matching this layer".into()));
        }
        let (gw, rest) = grad.split_at_mut(self.input_weight.len());
        let (gu, gb) = rest.split_at_mut(self.recurrent_weight.len());
        let mut dxs = vec![0.0; steps * n_in];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        let zeros = vec![0.0; h];
        for t in (0..steps).rev() {
            let gate = &cache.gates[t * 4 * h..(t + 1) * 4 * h];
            let (h_prev, c_prev) = if t == 0 {
                (&zeros[..], &zeros[..])
            } else {
                (&cache.hidden[(t - 1) * h..t * h], &cache.cells[(t - 1) * h..t * h])
            };
            for k in 0..h {
                let (i, f, g, o) = (gate[k], gate[h + k], gate[2 * h + k], gate[3 * h + k]);
                let tc = cache.cell_tanh[t * h + k];
                let dh = d_hidden[t * h + k] + dh_next[k];
                let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
                dz[k] = dc * g * i * (1.0 - i);
                dz[h + k] = dc * c_prev[k] * f * (1.0 - f);
                dz[2 * h + k] = dc * i * (1.0 - g * g);
                dz[3 * h + k] = dh * tc * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            let x = &cache.inputs[t * n_in..(t + 1) * n_in];
            outer_acc(gw, n_in, &dz, x);
            outer_acc(gu, h, &dz, h_prev);
            for (b, d) in gb.iter_mut().zip(&dz) {
                *b += d;
            }
            matvec_t_acc(self.input_weight.data(), n_in, &dz, &mut dxs[t * n_in..(t + 1) * n_in]);
            dh_next.fill(0.0);
            matvec_t_acc(self.recurrent_weight.data(), h, &dz, &mut dh_next);
        }
        Ok(dxs)
    }
}

impl Parameters for Lstm {
    fn n_params(&self) -> usize {
        self.input_weight.len() + self.recurrent_weight.len() + self.bias.len()
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.input_weight.data());
        out.extend_from_slice(self.recurrent_weight.data());
        out.extend_from_slice(self.bias.data());
    }

    fn read_params(&mut self, src: &mut &[f64]) {
        for t in [&mut self.input_weight, &mut self.recurrent_weight, &mut self.bias] {
            let (head, tail) = src.split_at(t.len());
            t.data_mut().copy_from_slice(head);
            *src = tail;
        }
    }
}
