//! The forecasting network: an LSTM stack with optional additive shortcuts,
//! the last step's features fed through `[FC -> tanh -> dropout]` blocks, and
//! a linear readout with one output per forecast step.

use rand::Rng;

use super::dense::Dense;
use super::lstm::{LstmCache, LstmLayer};
use super::matrix::Matrix;
use super::DropoutMask;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Input channels per time step: past motion and (lead) wave elevation.
pub const INPUT_CHANNELS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureSpec {
    pub num_lstm_layers: usize,
    pub lstm_hidden: usize,
    pub num_fc_blocks: usize,
    pub fc_width: usize,
    pub dropout_p: f64,
    /// Forecast length `m`, the width of the readout.
    pub horizon: usize,
    /// Add each LSTM layer's input to its output (layers after the first).
    pub lstm_shortcuts: bool,
    /// Apply dropout to LSTM layer outputs as well as to FC blocks.
    pub lstm_dropout: bool,
}

impl ArchitectureSpec {
    /// Two LSTM layers of 200 units, five FC blocks of 80 units, tanh,
    /// dropout 0.315, shortcuts on.
    pub fn reference(horizon: usize) -> Self {
        Self {
            num_lstm_layers: 2,
            lstm_hidden: 200,
            num_fc_blocks: 5,
            fc_width: 80,
            dropout_p: 0.315,
            horizon,
            lstm_shortcuts: true,
            lstm_dropout: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_lstm_layers == 0 || self.lstm_hidden == 0 {
            return Err(Error::Structural("the network needs at least one LSTM layer with hidden units".into()));
        }
        if self.num_fc_blocks > 0 && self.fc_width == 0 {
            return Err(Error::Structural("FC blocks need a positive width".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Structural("forecast horizon must be at least 1".into()));
        }
        super::dropout::check_probability(self.dropout_p)
    }

    fn feature_width(&self) -> usize {
        if self.num_fc_blocks > 0 {
            self.fc_width
        } else {
            self.lstm_hidden
        }
    }

    /// Closed-form parameter count.
    pub fn parameter_count(&self) -> usize {
        let h = self.lstm_hidden;
        let lstm: usize = (0..self.num_lstm_layers)
            .map(|k| {
                let i = if k == 0 { INPUT_CHANNELS } else { h };
                4 * h * (i + h + 1)
            })
            .sum();
        let mut fc = 0;
        let mut width = h;
        for _ in 0..self.num_fc_blocks {
            fc += (width + 1) * self.fc_width;
            width = self.fc_width;
        }
        lstm + fc + (self.feature_width() + 1) * self.horizon
    }
}

/// Dropout masks for one sample: one per LSTM layer (held fixed over the
/// sequence) and one per FC block.
#[derive(Debug, Clone)]
pub struct SampleMasks {
    pub lstm: Vec<DropoutMask>,
    pub fc: Vec<DropoutMask>,
}

impl SampleMasks {
    pub fn sample<R: Rng + ?Sized>(arch: &ArchitectureSpec, rng: &mut R) -> Result<Self> {
        let lstm = if arch.lstm_dropout {
            (0..arch.num_lstm_layers)
                .map(|_| DropoutMask::sample(arch.lstm_hidden, arch.dropout_p, rng))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let fc = (0..arch.num_fc_blocks)
            .map(|_| DropoutMask::sample(arch.fc_width, arch.dropout_p, rng))
            .collect::<Result<_>>()?;
        Ok(Self { lstm, fc })
    }
}

/// Masks for a whole batch, one row per sample.
#[derive(Debug, Clone)]
pub struct BatchMasks {
    pub lstm: Vec<Matrix>,
    pub fc: Vec<Matrix>,
}

impl BatchMasks {
    pub fn stack(samples: &[SampleMasks]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::Structural("no masks to stack".into()))?;
        let stack_layer = |pick: &dyn Fn(&SampleMasks) -> &DropoutMask, width: usize| -> Result<Matrix> {
            let mut m = Matrix::zeros(samples.len(), width);
            for (s, masks) in samples.iter().enumerate() {
                let v = pick(masks).values();
                if v.len() != width {
                    return Err(Error::Structural(format!("mask width {} differs from {width}", v.len())));
                }
                m.row_mut(s).copy_from_slice(v);
            }
            Ok(m)
        };
        let lstm = (0..first.lstm.len())
            .map(|k| stack_layer(&|m: &SampleMasks| &m.lstm[k], first.lstm[k].len()))
            .collect::<Result<_>>()?;
        let fc = (0..first.fc.len())
            .map(|k| stack_layer(&|m: &SampleMasks| &m.fc[k], first.fc[k].len()))
            .collect::<Result<_>>()?;
        Ok(Self { lstm, fc })
    }

    pub fn sample<R: Rng + ?Sized>(arch: &ArchitectureSpec, batch: usize, rng: &mut R) -> Result<Self> {
        let rows = (0..batch).map(|_| SampleMasks::sample(arch, rng)).collect::<Result<Vec<_>>>()?;
        Self::stack(&rows)
    }
}

/// Parameter gradients in the order of [`Network::parameters`].
#[derive(Debug, Clone)]
pub struct Gradients(pub Vec<Matrix>);

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients(net.parameters().iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect())
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().for_each(|g| g.scale(factor));
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|g| g.as_slice().iter().all(|&v| v == 0.0))
    }
}

#[derive(Debug, Clone)]
struct ForwardCache {
    lstm: Vec<LstmCache>,
    masks: Option<BatchMasks>,
    /// Input of each FC block, then the readout input last.
    fc_inputs: Vec<Matrix>,
    /// tanh output of each FC block before dropout.
    fc_activations: Vec<Matrix>,
    steps: usize,
    batch: usize,
}

#[derive(Debug, Clone)]
pub struct Network {
    arch: ArchitectureSpec,
    lstm: Vec<LstmLayer>,
    fc: Vec<Dense>,
    head: Dense,
    cache: Option<ForwardCache>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.lstm == other.lstm && self.fc == other.fc && self.head == other.head
    }
}

fn mul_rows(m: &mut Matrix, mask: &Matrix) {
    for (v, k) in m.as_mut_slice().iter_mut().zip(mask.as_slice()) {
        *v *= k;
    }
}

impl Network {
    pub fn new<R: Rng + ?Sized>(arch: &ArchitectureSpec, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let h = arch.lstm_hidden;
        let lstm = (0..arch.num_lstm_layers)
            .map(|k| LstmLayer::new(if k == 0 { INPUT_CHANNELS } else { h }, h, rng))
            .collect();
        let mut width = h;
        let mut fc = Vec::with_capacity(arch.num_fc_blocks);
        for _ in 0..arch.num_fc_blocks {
            fc.push(Dense::new(width, arch.fc_width, rng));
            width = arch.fc_width;
        }
        let head = Dense::new(width, arch.horizon, rng);
        Ok(Self { arch: arch.clone(), lstm, fc, head, cache: None })
    }

    /// Seeded construction.
    pub fn with_seed(arch: &ArchitectureSpec, seed: u64) -> Result<Self> {
        Self::new(arch, &mut rng::stream(seed, Purpose::Init))
    }

    pub fn arch(&self) -> &ArchitectureSpec {
        &self.arch
    }

    pub fn parameters(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for l in &self.lstm {
            out.extend([&l.w, &l.u, &l.b]);
        }
        for d in &self.fc {
            out.extend([&d.w, &d.b]);
        }
        out.extend([&self.head.w, &self.head.b]);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for l in &mut self.lstm {
            out.extend([&mut l.w, &mut l.u, &mut l.b]);
        }
        for d in &mut self.fc {
            out.extend([&mut d.w, &mut d.b]);
        }
        out.extend([&mut self.head.w, &mut self.head.b]);
        out
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for k in 0..self.lstm.len() {
            out.extend(["w", "u", "b"].map(|t| format!("lstm{k}.{t}")));
        }
        for j in 0..self.fc.len() {
            out.extend(["w", "b"].map(|t| format!("fc{j}.{t}")));
        }
        out.extend(["head.w".to_string(), "head.b".to_string()]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    fn check_masks(&self, masks: &BatchMasks, batch: usize) -> Result<()> {
        let expect_lstm = if self.arch.lstm_dropout { self.arch.num_lstm_layers } else { 0 };
        if masks.lstm.len() != expect_lstm || masks.fc.len() != self.arch.num_fc_blocks {
            return Err(Error::Structural(format!(
                "masks cover {} LSTM layers and {} FC blocks; the network needs {expect_lstm} and {}",
                masks.lstm.len(),
                masks.fc.len(),
                self.arch.num_fc_blocks
            )));
        }
        for m in &masks.lstm {
            m.ensure_shape(batch, self.arch.lstm_hidden, "LSTM dropout mask")?;
        }
        for m in &masks.fc {
            m.ensure_shape(batch, self.arch.fc_width, "FC dropout mask")?;
        }
        Ok(())
    }

    fn forward_impl(&self, input: &[Matrix], masks: Option<&BatchMasks>, keep: bool) -> Result<(Matrix, Option<ForwardCache>)> {
        let batch = input.first().map(Matrix::rows).ok_or_else(|| Error::Structural("empty input sequence".into()))?;
        for (t, x) in input.iter().enumerate() {
            if x.shape() != (batch, INPUT_CHANNELS) {
                return Err(Error::Structural(format!(
                    "input step {t} is {}x{}, expected {batch}x{INPUT_CHANNELS}",
                    x.rows(),
                    x.cols()
                )));
            }
        }
        if let Some(m) = masks {
            self.check_masks(m, batch)?;
        }
        let mut lstm_caches = Vec::new();
        let mut seq: Vec<Matrix> = input.to_vec();
        for (k, layer) in self.lstm.iter().enumerate() {
            let (mut hidden, cache) = layer.forward_batch(&seq, keep)?;
            if let Some(mask) = masks.and_then(|m| m.lstm.get(k)) {
                hidden.iter_mut().for_each(|h| mul_rows(h, mask));
            }
            if self.arch.lstm_shortcuts && k > 0 {
                for (h, s) in hidden.iter_mut().zip(&seq) {
                    h.add_assign(s);
                }
            }
            lstm_caches.extend(cache);
            seq = hidden;
        }
        let mut z = seq.pop().expect("non-empty sequence");
        let mut fc_inputs = Vec::new();
        let mut fc_activations = Vec::new();
        for (j, block) in self.fc.iter().enumerate() {
            let mut a = block.forward(&z);
            a.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());
            let mut out = a.clone();
            if let Some(mask) = masks.map(|m| &m.fc[j]) {
                mul_rows(&mut out, mask);
            }
            if keep {
                fc_inputs.push(z);
                fc_activations.push(a);
            }
            z = out;
        }
        let y = self.head.forward(&z);
        y.ensure_finite("network output")?;
        let cache = keep.then(|| {
            fc_inputs.push(z);
            ForwardCache {
                lstm: lstm_caches,
                masks: masks.cloned(),
                fc_inputs,
                fc_activations,
                steps: input.len(),
                batch,
            }
        });
        Ok((y, cache))
    }

    /// Inference on a time-major batch (`steps` matrices of `batch x 2`).
    /// Without masks every dropout layer is the identity.
    pub fn forward(&self, input: &[Matrix], masks: Option<&BatchMasks>) -> Result<Matrix> {
        Ok(self.forward_impl(input, masks, false)?.0)
    }

    /// Forward pass that keeps the activations for a following [`backward`](Self::backward).
    pub fn forward_train(&mut self, input: &[Matrix], masks: Option<&BatchMasks>) -> Result<Matrix> {
        let (y, cache) = self.forward_impl(input, masks, true)?;
        self.cache = cache;
        Ok(y)
    }

    /// Gradients of all parameters given the loss gradient with respect to the
    /// output of the preceding [`forward_train`](Self::forward_train). Consumes
    /// the cached activations; the dropout masks of that pass are reused.
    pub fn backward(&mut self, d_out: &Matrix) -> Result<Gradients> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Usage("backward called without a preceding training forward pass".into()))?;
        d_out.ensure_shape(cache.batch, self.arch.horizon, "output gradient")?;
        let mut lstm_grads = Vec::with_capacity(self.lstm.len());
        let mut fc_grads = Vec::with_capacity(self.fc.len());

        let head_input = cache.fc_inputs.last().expect("readout input");
        let (hw, hb, mut dz) = self.head.backward(head_input, d_out);
        for j in (0..self.fc.len()).rev() {
            if let Some(masks) = &cache.masks {
                mul_rows(&mut dz, &masks.fc[j]);
            }
            let act = &cache.fc_activations[j];
            for (d, a) in dz.as_mut_slice().iter_mut().zip(act.as_slice()) {
                *d *= 1.0 - a * a;
            }
            let (w, b, dx) = self.fc[j].backward(&cache.fc_inputs[j], &dz);
            fc_grads.push((w, b));
            dz = dx;
        }
        fc_grads.reverse();

        let h = self.arch.lstm_hidden;
        let mut d_seq = vec![Matrix::zeros(cache.batch, h); cache.steps];
        d_seq[cache.steps - 1] = dz;
        for k in (0..self.lstm.len()).rev() {
            let mut d_hidden = d_seq.clone();
            if let Some(mask) = cache.masks.as_ref().and_then(|m| m.lstm.get(k)) {
                d_hidden.iter_mut().for_each(|d| mul_rows(d, mask));
            }
            let (g, d_input) = self.lstm[k].backward(&cache.lstm[k], &d_hidden)?;
            lstm_grads.push(g);
            if k > 0 {
                if self.arch.lstm_shortcuts {
                    for (d, di) in d_seq.iter_mut().zip(&d_input) {
                        d.add_assign(di);
                    }
                } else {
                    d_seq = d_input;
                }
            }
        }
        lstm_grads.reverse();

        let mut out = Vec::new();
        for g in lstm_grads {
            out.extend([g.w, g.u, g.b]);
        }
        for (w, b) in fc_grads {
            out.extend([w, b]);
        }
        out.extend([hw, hb]);
        Ok(Gradients(out))
    }

    /// Drops any cached activations.
    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Packs per-sample `steps x 2` windows into a time-major batch.
pub fn time_major(samples: &[&Matrix]) -> Result<Vec<Matrix>> {
    let first = samples.first().ok_or_else(|| Error::Structural("empty batch".into()))?;
    let steps = first.rows();
    for (i, s) in samples.iter().enumerate() {
        if s.shape() != (steps, INPUT_CHANNELS) {
            return Err(Error::Structural(format!(
                "sample {i} is {}x{}, expected {steps}x{INPUT_CHANNELS}",
                s.rows(),
                s.cols()
            )));
        }
    }
    Ok((0..steps)
        .map(|t| {
            let mut m = Matrix::zeros(samples.len(), INPUT_CHANNELS);
            for (s, sample) in samples.iter().enumerate() {
                m.row_mut(s).copy_from_slice(sample.row(t));
            }
            m
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ArchitectureSpec {
        ArchitectureSpec {
            num_lstm_layers: 2,
            lstm_hidden: 4,
            num_fc_blocks: 2,
            fc_width: 3,
            dropout_p: 0.3,
            horizon: 5,
            lstm_shortcuts: true,
            lstm_dropout: true,
        }
    }

    fn input(batch: usize, steps: usize) -> Vec<Matrix> {
        (0..steps).map(|t| Matrix::from_fn(batch, 2, |s, c| ((t * 3 + s * 5 + c) as f64 * 0.7).sin())).collect()
    }

    #[test]
    fn reference_architecture_counts() {
        let arch = ArchitectureSpec::reference(20);
        let net = Network::with_seed(&arch, 0).unwrap();
        assert_eq!(net.parameter_count(), arch.parameter_count());
        // By hand: 4*200*(2+200+1) + 4*200*(200+200+1) + 201*80 + 4*81*80 + 81*20
        assert_eq!(arch.parameter_count(), 162_400 + 320_800 + 16_080 + 25_920 + 1_620);
        let y = net.forward(&input(1, 6), None).unwrap();
        assert_eq!(y.shape(), (1, 20));
    }

    #[test]
    fn no_fc_blocks_reads_lstm_features_directly() {
        let arch = ArchitectureSpec { num_fc_blocks: 0, ..tiny() };
        let net = Network::with_seed(&arch, 1).unwrap();
        assert_eq!(net.head.input_size(), 4);
        assert_eq!(net.forward(&input(2, 3), None).unwrap().shape(), (2, 5));
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradients() {
        let arch = tiny();
        let mut net = Network::with_seed(&arch, 2).unwrap();
        let masks = BatchMasks::sample(&arch, 2, &mut rng::stream(0, Purpose::TrainDropout)).unwrap();
        net.forward_train(&input(2, 6), Some(&masks)).unwrap();
        let g = net.backward(&Matrix::zeros(2, 5)).unwrap();
        assert!(g.is_zero());
        assert_eq!(g.0.len(), net.parameters().len());
    }

    #[test]
    fn backward_without_forward_is_usage_error() {
        let mut net = Network::with_seed(&tiny(), 3).unwrap();
        assert!(matches!(net.backward(&Matrix::zeros(1, 5)), Err(Error::Usage(_))));
        net.forward_train(&input(1, 4), None).unwrap();
        net.backward(&Matrix::zeros(1, 5)).unwrap();
        assert!(matches!(net.backward(&Matrix::zeros(1, 5)), Err(Error::Usage(_))));
    }

    #[test]
    fn wrong_input_width_is_structural() {
        let net = Network::with_seed(&tiny(), 4).unwrap();
        let bad = vec![Matrix::zeros(1, 3); 4];
        assert!(matches!(net.forward(&bad, None), Err(Error::Structural(_))));
    }

    #[test]
    fn batch_rows_are_independent() {
        let arch = tiny();
        let net = Network::with_seed(&arch, 5).unwrap();
        let batch = input(3, 6);
        let masks = BatchMasks::sample(&arch, 3, &mut rng::stream(1, Purpose::TrainDropout)).unwrap();
        let y = net.forward(&batch, Some(&masks)).unwrap();
        for s in 0..3 {
            let single: Vec<Matrix> = batch.iter().map(|m| Matrix::from_vec(1, 2, m.row(s).to_vec()).unwrap()).collect();
            let one = BatchMasks {
                lstm: masks.lstm.iter().map(|m| Matrix::from_vec(1, 4, m.row(s).to_vec()).unwrap()).collect(),
                fc: masks.fc.iter().map(|m| Matrix::from_vec(1, 3, m.row(s).to_vec()).unwrap()).collect(),
            };
            let ys = net.forward(&single, Some(&one)).unwrap();
            for j in 0..5 {
                assert!((ys[(0, j)] - y[(s, j)]).abs() < 1e-14);
            }
        }
    }
}
