//! Fully connected tanh networks over a flat parameter vector.
//!
//! Layout, layer by layer: weights `W_l` (out × in, row-major) followed by
//! bias `b_l` when biases are enabled. Hidden layers apply tanh; the output
//! layer is affine.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub sizes: Vec<usize>,
    pub bias: bool,
}

impl Layout {
    pub fn new(input: usize, hidden: &[usize], output: usize, bias: bool) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Layout { sizes, bias }
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    /// `(weight offset, bias offset)` of layer `l`.
    pub fn offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for k in 0..l {
            off += self.layer_params(k);
        }
        (off, off + self.sizes[l] * self.sizes[l + 1])
    }

    fn layer_params(&self, l: usize) -> usize {
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        i * o + if self.bias { o } else { 0 }
    }

    pub fn param_count(&self) -> usize {
        (0..self.n_layers()).map(|l| self.layer_params(l)).sum()
    }
}

/// Pre-activation inputs of every layer, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    /// `acts[0]` is the input; `acts[l]` the (post-tanh) input to layer `l`.
    acts: Vec<Vec<f64>>,
}

pub fn forward(layout: &Layout, params: &[f64], x: &[f64]) -> Result<(Vec<f64>, Cache)> {
    if x.len() != layout.input_dim() {
        return Err(Error::Shape { expected: layout.input_dim(), got: x.len(), context: "network input" });
    }
    let mut acts = Vec::with_capacity(layout.n_layers());
    let mut cur = x.to_vec();
    for l in 0..layout.n_layers() {
        let (n_in, n_out) = (layout.sizes[l], layout.sizes[l + 1]);
        let (w, b) = layout.offsets(l);
        let mut next = vec![0.0; n_out];
        for (o, slot) in next.iter_mut().enumerate() {
            let row = &params[w + o * n_in..w + (o + 1) * n_in];
            let mut z: f64 = row.iter().zip(&cur).map(|(a, b)| a * b).sum();
            if layout.bias {
                z += params[b + o];
            }
            *slot = z;
        }
        if l + 1 < layout.n_layers() {
            next.iter_mut().for_each(|z| *z = z.tanh());
        }
        acts.push(cur);
        cur = next;
    }
    Ok((cur, Cache { acts }))
}

/// Accumulates `grad += d(out · d_out)/d(params)`.
pub fn backward(layout: &Layout, params: &[f64], cache: &Cache, d_out: &[f64], grad: &mut [f64]) {
    let mut delta = d_out.to_vec();
    for l in (0..layout.n_layers()).rev() {
        let (n_in, n_out) = (layout.sizes[l], layout.sizes[l + 1]);
        let (w, b) = layout.offsets(l);
        let input = &cache.acts[l];
        for o in 0..n_out {
            let d = delta[o];
            if d == 0.0 {
                continue;
            }
            let g = &mut grad[w + o * n_in..w + (o + 1) * n_in];
            for (gi, xi) in g.iter_mut().zip(input) {
                *gi += d * xi;
            }
            if layout.bias {
                grad[b + o] += d;
            }
        }
        if l == 0 {
            break;
        }
        // Back through W_l, then through tanh of layer l-1: d tanh = 1 - a².
        let mut prev = vec![0.0; n_in];
        for o in 0..n_out {
            let d = delta[o];
            if d == 0.0 {
                continue;
            }
            let row = &params[w + o * n_in..w + (o + 1) * n_in];
            for (p, wi) in prev.iter_mut().zip(row) {
                *p += d * wi;
            }
        }
        for (p, a) in prev.iter_mut().zip(input) {
            *p *= 1.0 - a * a;
        }
        delta = prev;
    }
}
