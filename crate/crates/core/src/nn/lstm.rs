//! Canonical LSTM layer (no peepholes), batched over samples.
//!
//! Gates are packed in the order input, forget, cell candidate, output along
//! the `4h` axis. Input weights are stored `input x 4h` and recurrent weights
//! `hidden x 4h`, so a batch row times the weight matrix gives the gate
//! pre-activations.

use rand::Rng;

use super::matrix::{gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, Matrix};
use super::DropoutMask;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub input_size: usize,
    pub hidden_size: usize,
    /// Input weights, `input x 4h`.
    pub w: Matrix,
    /// Recurrent weights, `hidden x 4h`.
    pub u: Matrix,
    /// Bias, `1 x 4h`.
    pub b: Matrix,
}

/// Activations saved by a training forward pass.
#[derive(Debug, Clone)]
pub struct LstmCache {
    inputs: Vec<Matrix>,
    /// Post-activation gates per step, `batch x 4h`.
    gates: Vec<Matrix>,
    cells: Vec<Matrix>,
    tanh_cells: Vec<Matrix>,
    hidden: Vec<Matrix>,
}

#[derive(Debug, Clone)]
pub struct LstmGrads {
    pub w: Matrix,
    pub u: Matrix,
    pub b: Matrix,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LstmLayer {
    /// Uniform init in `+-1/sqrt(fan_in)` for both weight blocks, zero bias
    /// except a forget-gate bias of +1.
    pub fn new<R: Rng + ?Sized>(input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let h4 = 4 * hidden_size;
        let wa = 1.0 / (input_size as f64).sqrt();
        let ua = 1.0 / (hidden_size as f64).sqrt();
        let w = Matrix::from_fn(input_size, h4, |_, _| rng.random_range(-wa..=wa));
        let u = Matrix::from_fn(hidden_size, h4, |_, _| rng.random_range(-ua..=ua));
        let b = Matrix::from_fn(1, h4, |_, c| if (hidden_size..2 * hidden_size).contains(&c) { 1.0 } else { 0.0 });
        Self { input_size, hidden_size, w, u, b }
    }

    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        Self {
            input_size,
            hidden_size,
            w: Matrix::zeros(input_size, 4 * hidden_size),
            u: Matrix::zeros(hidden_size, 4 * hidden_size),
            b: Matrix::zeros(1, 4 * hidden_size),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.w.len() + self.u.len() + self.b.len()
    }

    /// Runs the recurrence over a time-major batch (`steps` matrices of
    /// `batch x input`) from zero initial state. Returns the hidden state at
    /// every step and, when requested, the cache needed by [`backward`](Self::backward).
    pub fn forward_batch(&self, seq: &[Matrix], keep_cache: bool) -> Result<(Vec<Matrix>, Option<LstmCache>)> {
        let batch = seq.first().map_or(0, Matrix::rows);
        for (t, x) in seq.iter().enumerate() {
            if x.shape() != (batch, self.input_size) {
                return Err(Error::Structural(format!(
                    "LSTM input at step {t} is {}x{} but the layer expects {batch}x{}",
                    x.rows(),
                    x.cols(),
                    self.input_size
                )));
            }
        }
        let h = self.hidden_size;
        let mut hidden = Vec::with_capacity(seq.len());
        let mut cache = keep_cache.then(|| LstmCache {
            inputs: seq.to_vec(),
            gates: Vec::with_capacity(seq.len()),
            cells: Vec::with_capacity(seq.len()),
            tanh_cells: Vec::with_capacity(seq.len()),
            hidden: Vec::new(),
        });
        let mut h_prev = Matrix::zeros(batch, h);
        let mut c_prev = Matrix::zeros(batch, h);
        for x in seq {
            let mut g = Matrix::zeros(batch, 4 * h);
            g.add_row_broadcast(self.b.as_slice());
            gemm_acc(&mut g, x, &self.w);
            gemm_acc(&mut g, &h_prev, &self.u);
            let mut c = Matrix::zeros(batch, h);
            let mut tc = Matrix::zeros(batch, h);
            let mut h_next = Matrix::zeros(batch, h);
            for s in 0..batch {
                let gr = g.row_mut(s);
                for v in &mut gr[..2 * h] {
                    *v = sigmoid(*v);
                }
                for v in &mut gr[2 * h..3 * h] {
                    *v = v.tanh();
                }
                for v in &mut gr[3 * h..] {
                    *v = sigmoid(*v);
                }
                let cp = c_prev.row(s);
                let cr = c.row_mut(s);
                for j in 0..h {
                    cr[j] = gr[h + j] * cp[j] + gr[j] * gr[2 * h + j];
                }
                let tr = tc.row_mut(s);
                for j in 0..h {
                    tr[j] = cr[j].tanh();
                }
                let hr = h_next.row_mut(s);
                for j in 0..h {
                    hr[j] = gr[3 * h + j] * tr[j];
                }
            }
            hidden.push(h_next.clone());
            h_prev = h_next;
            if let Some(cache) = cache.as_mut() {
                cache.gates.push(g);
                cache.cells.push(c.clone());
                cache.tanh_cells.push(tc);
            }
            c_prev = c;
        }
        if let Some(cache) = cache.as_mut() {
            cache.hidden = hidden.clone();
        }
        Ok((hidden, cache))
    }

    /// Backpropagation through time. `d_hidden[t]` is the loss gradient with
    /// respect to the hidden output at step `t`. Returns parameter gradients
    /// and the gradient with respect to each input step.
    pub fn backward(&self, cache: &LstmCache, d_hidden: &[Matrix]) -> Result<(LstmGrads, Vec<Matrix>)> {
        let steps = cache.inputs.len();
        if d_hidden.len() != steps {
            return Err(Error::Structural(format!(
                "LSTM backward got {} gradient steps for a {steps}-step forward pass",
                d_hidden.len()
            )));
        }
        let h = self.hidden_size;
        let batch = cache.inputs.first().map_or(0, Matrix::rows);
        let mut grads = LstmGrads {
            w: Matrix::zeros(self.input_size, 4 * h),
            u: Matrix::zeros(h, 4 * h),
            b: Matrix::zeros(1, 4 * h),
        };
        let mut d_inputs = vec![Matrix::zeros(batch, self.input_size); steps];
        let mut dh_next = Matrix::zeros(batch, h);
        let mut dc_next = Matrix::zeros(batch, h);
        let zeros = Matrix::zeros(batch, h);
        let mut dg = Matrix::zeros(batch, 4 * h);
        for t in (0..steps).rev() {
            let gates = &cache.gates[t];
            let tc = &cache.tanh_cells[t];
            let c_prev = if t > 0 { &cache.cells[t - 1] } else { &zeros };
            let dh_in = &d_hidden[t];
            for s in 0..batch {
                let gr = gates.row(s);
                let tr = tc.row(s);
                let cp = c_prev.row(s);
                let dhr = dh_in.row(s);
                let dhn = dh_next.row(s);
                let dcn = dc_next.row_mut(s);
                let dgr = dg.row_mut(s);
                for j in 0..h {
                    let (i, f, g, o) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                    let dh = dhr[j] + dhn[j];
                    let dc = dh * o * (1.0 - tr[j] * tr[j]) + dcn[j];
                    dgr[j] = dc * g * i * (1.0 - i);
                    dgr[h + j] = dc * cp[j] * f * (1.0 - f);
                    dgr[2 * h + j] = dc * i * (1.0 - g * g);
                    dgr[3 * h + j] = dh * tr[j] * o * (1.0 - o);
                    dcn[j] = dc * f;
                }
            }
            gemm_at_b_acc(&mut grads.w, &cache.inputs[t], &dg);
            if t > 0 {
                gemm_at_b_acc(&mut grads.u, &cache.hidden[t - 1], &dg);
            }
            for s in 0..batch {
                super::matrix::axpy(1.0, dg.row(s), grads.b.as_mut_slice());
            }
            gemm_a_bt_acc(&mut d_inputs[t], &dg, &self.w);
            dh_next.fill(0.0);
            gemm_a_bt_acc(&mut dh_next, &dg, &self.u);
        }
        Ok((grads, d_inputs))
    }
}

/// Single-sequence forward pass: `sequence` is `steps x input`; the optional
/// mask multiplies the output at every step (the same mask for all steps).
pub fn lstm_forward(layer: &LstmLayer, sequence: &Matrix, mask: Option<&DropoutMask>) -> Result<(Matrix, LstmCache)> {
    if sequence.cols() != layer.input_size {
        return Err(Error::Structural(format!(
            "sequence is {}x{} but the layer expects {} input features",
            sequence.rows(),
            sequence.cols(),
            layer.input_size
        )));
    }
    if let Some(m) = mask {
        if m.len() != layer.hidden_size {
            return Err(Error::Structural(format!(
                "dropout mask has {} units but the layer has {} hidden units",
                m.len(),
                layer.hidden_size
            )));
        }
    }
    let steps: Vec<Matrix> = (0..sequence.rows())
        .map(|t| Matrix::from_vec(1, layer.input_size, sequence.row(t).to_vec()))
        .collect::<Result<_>>()?;
    let (hidden, cache) = layer.forward_batch(&steps, true)?;
    let mut out = Matrix::zeros(sequence.rows(), layer.hidden_size);
    for (t, h) in hidden.iter().enumerate() {
        let row = match mask {
            Some(m) => m.apply(h.row(0))?,
            None => h.row(0).to_vec(),
        };
        out.row_mut(t).copy_from_slice(&row);
    }
    Ok((out, cache.expect("cache requested")))
}
