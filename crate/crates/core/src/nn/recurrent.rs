//! Single recurrent layers (LSTM and GRU) over length-masked batches.
//!
//! Row `b` of a batch is only updated at steps `t < lengths[b]`; afterwards
//! its state is carried unchanged, so the state after the last step is the
//! state at each sequence's true length. Both cells use one bias vector per
//! gate.
//!
//! Weight layout: `w_ih` is `(G·H)×in`, `w_hh` is `(G·H)×H`, `bias` is
//! `1×(G·H)` with gate blocks in the order (i, f, g, o) for LSTM and
//! (r, z, n) for GRU.

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Gru,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }

    /// Scalars in one layer with the given input width and hidden size.
    pub fn layer_params(self, input: usize, hidden: usize) -> usize {
        self.gates() * ((input + hidden) * hidden + hidden)
    }
}

pub struct LayerWeights<'a> {
    pub w_ih: &'a Array2<f64>,
    pub w_hh: &'a Array2<f64>,
    pub bias: &'a Array2<f64>,
}

/// Everything the backward pass needs from one forward pass.
pub struct LayerTrace {
    kind: CellKind,
    lengths: Vec<usize>,
    xs: Vec<Array2<f64>>,
    /// States h_0 ..= h_T.
    pub hs: Vec<Array2<f64>>,
    /// LSTM cell states c_0 ..= c_T.
    cs: Vec<Array2<f64>>,
    /// Activated gates per step, `B×(G·H)`.
    acts: Vec<Array2<f64>>,
    /// LSTM: tanh(c_t). GRU: W_hn · h_{t-1}.
    aux: Vec<Array2<f64>>,
}

impl LayerTrace {
    pub fn final_state(&self) -> &Array2<f64> {
        self.hs.last().expect("at least the initial state")
    }

    /// Per-step outputs h_1 ..= h_T, the input sequence for a stacked layer.
    pub fn outputs(&self) -> Vec<Array2<f64>> {
        self.hs[1..].to_vec()
    }
}

fn active(lengths: &[usize], t: usize) -> impl Iterator<Item = (usize, bool)> + '_ {
    lengths.iter().map(move |&l| t < l).enumerate()
}

/// Runs the layer over `xs` (one `B×in` matrix per step).
pub fn forward(
    kind: CellKind,
    w: &LayerWeights<'_>,
    xs: Vec<Array2<f64>>,
    lengths: &[usize],
) -> LayerTrace {
    let hidden = w.w_hh.ncols();
    let batch = lengths.len();
    let steps = xs.len();
    let h0 = Array2::<f64>::zeros((batch, hidden));
    let mut trace = LayerTrace {
        kind,
        lengths: lengths.to_vec(),
        hs: Vec::with_capacity(steps + 1),
        cs: Vec::new(),
        acts: Vec::with_capacity(steps),
        aux: Vec::with_capacity(steps),
        xs: Vec::new(),
    };
    trace.hs.push(h0.clone());
    if kind == CellKind::Lstm {
        trace.cs.push(h0);
    }
    for (t, x) in xs.iter().enumerate() {
        let h = trace.hs.last().unwrap();
        let xw = x.dot(&w.w_ih.t());
        let hw = h.dot(&w.w_hh.t());
        let bias = w.bias.row(0);
        match kind {
            CellKind::Lstm => {
                let c = trace.cs.last().unwrap();
                let mut a = xw + &hw;
                a += &bias;
                let mut h_new = h.clone();
                let mut c_new = c.clone();
                let mut tc = Array2::<f64>::zeros((batch, hidden));
                for (b, on) in active(lengths, t) {
                    let mut row = a.row_mut(b);
                    for j in 0..hidden {
                        row[j] = sigmoid(row[j]);
                        row[hidden + j] = sigmoid(row[hidden + j]);
                        row[2 * hidden + j] = row[2 * hidden + j].tanh();
                        row[3 * hidden + j] = sigmoid(row[3 * hidden + j]);
                    }
                    if !on {
                        continue;
                    }
                    for j in 0..hidden {
                        let (i, f, g, o) = (
                            row[j],
                            row[hidden + j],
                            row[2 * hidden + j],
                            row[3 * hidden + j],
                        );
                        let cn = f * c[[b, j]] + i * g;
                        let tcn = cn.tanh();
                        c_new[[b, j]] = cn;
                        tc[[b, j]] = tcn;
                        h_new[[b, j]] = o * tcn;
                    }
                }
                trace.acts.push(a);
                trace.aux.push(tc);
                trace.cs.push(c_new);
                trace.hs.push(h_new);
            }
            CellKind::Gru => {
                let mut a = xw;
                let hn = hw.slice(s![.., 2 * hidden..]).to_owned();
                let mut h_new = h.clone();
                for (b, on) in active(lengths, t) {
                    let mut row = a.row_mut(b);
                    for j in 0..hidden {
                        let r = sigmoid(row[j] + hw[[b, j]] + bias[j]);
                        let z = sigmoid(row[hidden + j] + hw[[b, hidden + j]] + bias[hidden + j]);
                        let n =
                            (row[2 * hidden + j] + r * hn[[b, j]] + bias[2 * hidden + j]).tanh();
                        row[j] = r;
                        row[hidden + j] = z;
                        row[2 * hidden + j] = n;
                        if on {
                            h_new[[b, j]] = (1.0 - z) * n + z * h[[b, j]];
                        }
                    }
                }
                trace.acts.push(a);
                trace.aux.push(hn);
                trace.hs.push(h_new);
            }
        }
    }
    trace.xs = xs;
    trace
}

/// Gradient accumulators for one layer, shaped like its weights.
pub struct LayerGrads<'a> {
    pub w_ih: &'a mut Array2<f64>,
    pub w_hh: &'a mut Array2<f64>,
    pub bias: &'a mut Array2<f64>,
}

/// Backpropagates through time.
///
/// `d_outputs` holds the loss gradient with respect to each step's output
/// (from a stacked layer above); `d_final` is the gradient with respect to the
/// final state. Returns the gradient with respect to every input step.
pub fn backward(
    trace: &LayerTrace,
    w: &LayerWeights<'_>,
    d_outputs: Option<&[Array2<f64>]>,
    d_final: &Array2<f64>,
    grads: &mut LayerGrads<'_>,
) -> Vec<Array2<f64>> {
    let hidden = w.w_hh.ncols();
    let gh = trace.kind.gates() * hidden;
    let batch = trace.lengths.len();
    let steps = trace.xs.len();
    let mut dxs = vec![Array2::<f64>::zeros((0, 0)); steps];
    let mut dh = d_final.clone();
    let mut dc = Array2::<f64>::zeros((batch, hidden));
    for t in (0..steps).rev() {
        if let Some(d) = d_outputs {
            dh += &d[t];
        }
        let h_prev = &trace.hs[t];
        let act = &trace.acts[t];
        let mut da = Array2::<f64>::zeros((batch, gh));
        // GRU only: gradient on W_hh · h differs from da in the n block.
        let mut dhw = Array2::<f64>::zeros((batch, gh));
        let mut dh_prev = dh.clone();
        match trace.kind {
            CellKind::Lstm => {
                let c_prev = &trace.cs[t];
                let tc = &trace.aux[t];
                for (b, on) in active(&trace.lengths, t) {
                    if !on {
                        continue;
                    }
                    for j in 0..hidden {
                        let (i, f, g, o) = (
                            act[[b, j]],
                            act[[b, hidden + j]],
                            act[[b, 2 * hidden + j]],
                            act[[b, 3 * hidden + j]],
                        );
                        let dhj = dh[[b, j]];
                        let tcj = tc[[b, j]];
                        let dcj = dc[[b, j]] + dhj * o * (1.0 - tcj * tcj);
                        da[[b, j]] = dcj * g * i * (1.0 - i);
                        da[[b, hidden + j]] = dcj * c_prev[[b, j]] * f * (1.0 - f);
                        da[[b, 2 * hidden + j]] = dcj * i * (1.0 - g * g);
                        da[[b, 3 * hidden + j]] = dhj * tcj * o * (1.0 - o);
                        dc[[b, j]] = dcj * f;
                    }
                }
            }
            CellKind::Gru => {
                let hn = &trace.aux[t];
                for (b, on) in active(&trace.lengths, t) {
                    if !on {
                        continue;
                    }
                    for j in 0..hidden {
                        let (r, z, n) =
                            (act[[b, j]], act[[b, hidden + j]], act[[b, 2 * hidden + j]]);
                        let dhj = dh[[b, j]];
                        let dan = dhj * (1.0 - z) * (1.0 - n * n);
                        let daz = dhj * (h_prev[[b, j]] - n) * z * (1.0 - z);
                        let dar = dan * hn[[b, j]] * r * (1.0 - r);
                        da[[b, j]] = dar;
                        da[[b, hidden + j]] = daz;
                        da[[b, 2 * hidden + j]] = dan;
                        dhw[[b, j]] = dar;
                        dhw[[b, hidden + j]] = daz;
                        dhw[[b, 2 * hidden + j]] = dan * r;
                    }
                }
            }
        }
        let dhw_ref: ArrayView2<f64> = match trace.kind {
            CellKind::Lstm => da.view(),
            CellKind::Gru => dhw.view(),
        };
        *grads.w_ih += &da.t().dot(&trace.xs[t]);
        *grads.w_hh += &dhw_ref.t().dot(h_prev);
        *grads.bias += &da.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dh_rec = dhw_ref.dot(w.w_hh);
        for (b, on) in active(&trace.lengths, t) {
            if !on {
                continue;
            }
            for j in 0..hidden {
                dh_prev[[b, j]] = match trace.kind {
                    CellKind::Lstm => dh_rec[[b, j]],
                    CellKind::Gru => dh_rec[[b, j]] + dh[[b, j]] * act[[b, hidden + j]],
                };
            }
        }
        dxs[t] = da.dot(w.w_ih);
        dh = dh_prev;
    }
    dxs
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-0.8..0.8))
    }

    /// Scalar objective: weighted sum of the final state.
    fn objective(
        kind: CellKind,
        w_ih: &Array2<f64>,
        w_hh: &Array2<f64>,
        bias: &Array2<f64>,
        xs: &[Array2<f64>],
        lengths: &[usize],
        probe: &Array2<f64>,
    ) -> f64 {
        let w = LayerWeights { w_ih, w_hh, bias };
        let tr = forward(kind, &w, xs.to_vec(), lengths);
        (tr.final_state() * probe).sum()
    }

    fn check(kind: CellKind) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (input, hidden, batch, steps) = (3, 4, 3, 5);
        let g = kind.gates();
        let w_ih = rand_mat(&mut rng, g * hidden, input);
        let w_hh = rand_mat(&mut rng, g * hidden, hidden);
        let bias = rand_mat(&mut rng, 1, g * hidden);
        let xs: Vec<_> = (0..steps)
            .map(|_| rand_mat(&mut rng, batch, input))
            .collect();
        let lengths = [5, 2, 0];
        let probe = rand_mat(&mut rng, batch, hidden);

        let w = LayerWeights {
            w_ih: &w_ih,
            w_hh: &w_hh,
            bias: &bias,
        };
        let tr = forward(kind, &w, xs.clone(), &lengths);
        let (mut gi, mut gh, mut gb) = (
            Array2::zeros(w_ih.raw_dim()),
            Array2::zeros(w_hh.raw_dim()),
            Array2::zeros(bias.raw_dim()),
        );
        let dxs = backward(
            &tr,
            &w,
            None,
            &probe,
            &mut LayerGrads {
                w_ih: &mut gi,
                w_hh: &mut gh,
                bias: &mut gb,
            },
        );

        let eps = 1e-6;
        let numeric = |f: &dyn Fn(f64) -> f64| (f(eps) - f(-eps)) / (2.0 * eps);
        for (analytic, which) in [(&gi, 0), (&gh, 1), (&gb, 2)] {
            for idx in 0..analytic.len() {
                let (r, c) = (idx / analytic.ncols(), idx % analytic.ncols());
                let num = numeric(&|d| {
                    let (mut a, mut b, mut bb) = (w_ih.clone(), w_hh.clone(), bias.clone());
                    match which {
                        0 => a[[r, c]] += d,
                        1 => b[[r, c]] += d,
                        _ => bb[[r, c]] += d,
                    }
                    objective(kind, &a, &b, &bb, &xs, &lengths, &probe)
                });
                assert!(
                    (num - analytic[[r, c]]).abs() < 1e-7,
                    "{kind:?} tensor {which} [{r},{c}]: {num} vs {}",
                    analytic[[r, c]]
                );
            }
        }
        for t in 0..steps {
            for b in 0..batch {
                for j in 0..input {
                    let num = numeric(&|d| {
                        let mut xs2 = xs.clone();
                        xs2[t][[b, j]] += d;
                        objective(kind, &w_ih, &w_hh, &bias, &xs2, &lengths, &probe)
                    });
                    assert!(
                        (num - dxs[t][[b, j]]).abs() < 1e-7,
                        "{kind:?} dx[{t}][{b},{j}]"
                    );
                }
            }
        }
        // Zero-length row never leaves the initial state.
        assert!(tr.final_state().row(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_gradients_match_finite_differences() {
        check(CellKind::Lstm);
    }

    #[test]
    fn gru_gradients_match_finite_differences() {
        check(CellKind::Gru);
    }

    #[test]
    fn parameter_formula() {
        assert_eq!(
            CellKind::Lstm.layer_params(200, 16),
            4 * ((200 + 16) * 16 + 16)
        );
        assert_eq!(
            CellKind::Gru.layer_params(768, 256),
            3 * ((768 + 256) * 256 + 256)
        );
    }
}
