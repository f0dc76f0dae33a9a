//! Small dense-tensor toolkit behind the recurrent classifiers: named
//! parameter sets, the Adam optimizer, losses and the LSTM/GRU cells with
//! hand-written backpropagation through time.

pub mod recurrent;

use ndarray::{Array2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// An ordered list of named 2-D tensors. Vectors are stored as `1×n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub names: Vec<String>,
    pub tensors: Vec<Array2<f64>>,
}

impl Params {
    pub fn new() -> Self {
        Params {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Array2<f64>) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn zeros_like(&self) -> Params {
        Params {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Array2::zeros(t.raw_dim()))
                .collect(),
        }
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Array2::len).sum()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.mapv_inplace(|x| x * factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Rescales so the global L2 norm is at most `max_norm`. Returns the norm
    /// before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm.is_finite() {
            self.scale(max_norm / norm);
        }
        norm
    }

    /// Hex SHA-256 over names, shapes and little-endian values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.names.iter().zip(&self.tensors) {
            h.update(name.as_bytes());
            h.update((t.nrows() as u64).to_le_bytes());
            h.update((t.ncols() as u64).to_le_bytes());
            for x in t.iter() {
                h.update(x.to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }

    pub fn layout(&self) -> Vec<TensorInfo> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| TensorInfo {
                name: n.clone(),
                shape: [t.nrows(), t.ncols()],
            })
            .collect()
    }

    /// Values of every tensor, concatenated in order, as little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.count() * 8);
        for t in &self.tensors {
            for x in t.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(layout: &[TensorInfo], bytes: &[u8]) -> Result<Params> {
        let expected: usize = layout
            .iter()
            .map(|t| t.shape[0] * t.shape[1])
            .sum::<usize>()
            * 8;
        if bytes.len() != expected {
            return Err(Error::Checkpoint(format!(
                "weight blob has {} bytes, layout needs {expected}",
                bytes.len()
            )));
        }
        let mut params = Params::new();
        let mut chunks = bytes.chunks_exact(8);
        for info in layout {
            let n = info.shape[0] * info.shape[1];
            let data: Vec<f64> = chunks
                .by_ref()
                .take(n)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Array2::from_shape_vec((info.shape[0], info.shape[1]), data)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            params.push(info.name.clone(), t);
        }
        Ok(params)
    }
}

impl Default for Params {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: [usize; 2],
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Params,
    v: Params,
    t: i32,
}

impl Adam {
    pub fn new(params: &Params, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params) {
        self.t += 1;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (((p, g), m), v) in params
            .tensors
            .iter_mut()
            .zip(&grads.tensors)
            .zip(&mut self.m.tensors)
            .zip(&mut self.v.tensors)
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let update = lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                *p -= update;
            });
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean loss over the batch and its gradient with respect to the logits.
///
/// One output column means binary cross-entropy on a sigmoid; more columns
/// mean softmax cross-entropy.
pub fn loss_and_grad(logits: &Array2<f64>, targets: &[usize]) -> (f64, Array2<f64>) {
    let (b, c) = logits.dim();
    assert_eq!(b, targets.len());
    let mut grad = Array2::zeros((b, c));
    let mut total = 0.0;
    let inv = 1.0 / b as f64;
    for (i, &y) in targets.iter().enumerate() {
        if c == 1 {
            let z = logits[[i, 0]];
            let y = y as f64;
            total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
            grad[[i, 0]] = (sigmoid(z) - y) * inv;
        } else {
            let row = logits.row(i);
            let max = row.fold(f64::NEG_INFINITY, |a, &x| a.max(x));
            let sum: f64 = row.iter().map(|&x| (x - max).exp()).sum();
            let lse = max + sum.ln();
            total += lse - row[y];
            for j in 0..c {
                let p = (row[j] - lse).exp();
                grad[[i, j]] = (p - if j == y { 1.0 } else { 0.0 }) * inv;
            }
        }
    }
    (total * inv, grad)
}

/// Loss only, for evaluation passes.
pub fn loss(logits: &Array2<f64>, targets: &[usize]) -> f64 {
    loss_and_grad(logits, targets).0
}

/// Inverted-dropout mask with keep probability `1 - p`, already scaled.
pub fn dropout_mask<R: Rng>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Array2<f64> {
    if p >= 1.0 {
        return Array2::zeros((rows, cols));
    }
    let keep = 1.0 - p;
    let scale = 1.0 / keep;
    Array2::from_shape_fn((rows, cols), |_| {
        if rng.random::<f64>() < keep {
            scale
        } else {
            0.0
        }
    })
}
