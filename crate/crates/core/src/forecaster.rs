//! Training loop, cross-validation folds and checkpoints.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{compute_norm, window_case, FoldLayout, NormalizationConstants, WindowSpec, WindowedSample};
use crate::error::{Error, Result};
use crate::nn::{mse_grad, time_major, AdamConfig, AdamState, ArchitectureSpec, BatchMasks, Gradients, Matrix, Network, StepDecay};
use crate::record::TimeSeriesRecord;
use crate::rng::{stream, Purpose, RNG_ALGORITHM};
use crate::uncertainty::mean_explained_variance;

/// Magic prefix of checkpoint files.
pub const CHECKPOINT_MAGIC: &[u8; 5] = b"WMCK1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Rows per forward pass when no gradient is needed.
const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
    /// Gradients of a mini-batch are accumulated over slices of at most this
    /// many samples, which bounds the memory held by the backward pass.
    pub micro_batch: usize,
    pub schedule: StepDecay,
    pub adam: AdamConfig,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            max_epochs: 200,
            batch_size: 2048,
            patience: 20,
            min_delta: 0.0,
            seed: 0,
            micro_batch: 128,
            schedule: StepDecay::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.batch_size == 0 || self.patience == 0 || self.micro_batch == 0 {
            return Err(Error::Config("max_epochs, batch_size, patience and micro_batch must be >= 1".into()));
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::Config(format!("min_delta must be >= 0 (got {})", self.min_delta)));
        }
        Ok(())
    }
}

/// A freshly initialized network for the given architecture.
pub fn build_model(arch: &ArchitectureSpec, seed: u64) -> Result<Network> {
    Network::with_seed(arch, seed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_mse: f64,
    pub val_mse: f64,
    pub val_ev: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingCurve {
    pub records: Vec<EpochRecord>,
}

impl TrainingCurve {
    pub const CSV_HEADER: &'static str = "epoch,lr,train_mse,val_mse,val_ev";

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            writeln!(out, "{},{},{},{},{}", r.epoch, r.lr, r.train_mse, r.val_mse, r.val_ev)?;
        }
        Ok(())
    }

    pub fn read_csv<R: std::io::BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != Self::CSV_HEADER {
            return Err(Error::Format(format!("unexpected training curve header {header:?}")));
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let f: Vec<&str> = line.trim().split(',').collect();
            let bad = || Error::Format(format!("training curve row {}: {line:?}", i + 1));
            if f.len() != 5 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            records.push(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                lr: num(f[1])?,
                train_mse: num(f[2])?,
                val_mse: num(f[3])?,
                val_ev: num(f[4])?,
            });
        }
        Ok(TrainingCurve { records })
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().min_by(|a, b| a.val_mse.total_cmp(&b.val_mse))
    }
}

/// Training metadata stored with a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainMeta {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub fold_id: Option<usize>,
    pub rng_algorithm: String,
    pub noise_level: f64,
    pub seed: u64,
}

/// Result of [`fit`]: the network restored to its best validation epoch.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub network: Network,
    pub curve: TrainingCurve,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Deterministic predictions for many samples, one row per sample.
pub fn predict_samples(net: &Network, samples: &[WindowedSample]) -> Result<Matrix> {
    let m = net.arch().horizon;
    let mut data = Vec::with_capacity(samples.len() * m);
    for chunk in samples.chunks(EVAL_CHUNK) {
        let xs: Vec<&Matrix> = chunk.iter().map(|s| &s.x).collect();
        data.extend_from_slice(net.forward(&time_major(&xs)?, None)?.as_slice());
    }
    Matrix::from_vec(samples.len(), m, data)
}

/// Targets stacked into a `samples x m` matrix.
pub fn target_matrix(samples: &[WindowedSample]) -> Result<Matrix> {
    let m = samples.first().map_or(0, |s| s.y.len());
    let data: Vec<f64> = samples.iter().flat_map(|s| s.y.iter().copied()).collect();
    Matrix::from_vec(samples.len(), m, data)
}

/// Mean squared error and column-averaged explained variance with dropout off.
pub fn evaluate(net: &Network, samples: &[WindowedSample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty sample set".into()));
    }
    let pred = predict_samples(net, samples)?;
    let truth = target_matrix(samples)?;
    let mse = crate::nn::mse(&pred, &truth);
    Ok((mse, mean_explained_variance(&truth, &pred)?))
}

/// Mini-batch Adam with the step-decay schedule and early stopping on the
/// validation MSE. Validation runs with dropout disabled. Training inputs
/// receive fresh Gaussian noise of standard deviation `noise_level` each epoch.
pub fn fit(
    mut net: Network,
    train: &[WindowedSample],
    val: &[WindowedSample],
    spec: &TrainSpec,
    noise_level: f64,
) -> Result<FitOutcome> {
    spec.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data(format!(
            "training needs non-empty training and validation sets (got {} and {})",
            train.len(),
            val.len()
        )));
    }
    if !(noise_level >= 0.0) || !noise_level.is_finite() {
        return Err(Error::Domain(format!("noise level must be finite and >= 0 (got {noise_level})")));
    }
    let arch = net.arch().clone();
    let names = net.parameter_names();
    let shapes: Vec<(usize, usize)> = net.parameters().iter().map(|p| p.shape()).collect();
    let mut adam = AdamState::new(shapes, spec.adam);
    let mut shuffle_rng = stream(spec.seed, Purpose::Shuffle);
    let mut dropout_rng = stream(spec.seed, Purpose::TrainDropout);
    let mut noise_rng = stream(spec.seed, Purpose::Noise);
    let use_masks = arch.dropout_p > 0.0;

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = TrainingCurve::default();
    let mut best: Option<(f64, usize, Network)> = None;
    let mut since_best = 0;
    let mut epochs_run = 0;

    for epoch in 0..spec.max_epochs {
        let lr = spec.schedule.lr(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(spec.batch_size).enumerate() {
            let mut grads = Gradients::zeros_like(&net);
            let mut batch_loss = 0.0;
            for slice in batch.chunks(spec.micro_batch) {
                let mut xs: Vec<Matrix> = slice.iter().map(|&i| train[i].x.clone()).collect();
                if noise_level > 0.0 {
                    for x in &mut xs {
                        for v in x.as_mut_slice() {
                            let z: f64 = StandardNormal.sample(&mut noise_rng);
                            *v += noise_level * z;
                        }
                    }
                }
                let refs: Vec<&Matrix> = xs.iter().collect();
                let input = time_major(&refs)?;
                let target = Matrix::from_vec(slice.len(), arch.horizon, slice.iter().flat_map(|&i| train[i].y.iter().copied()).collect())?;
                let masks = if use_masks { Some(BatchMasks::sample(&arch, slice.len(), &mut dropout_rng)?) } else { None };
                let pred = net.forward_train(&input, masks.as_ref())?;
                let sq: f64 = pred.as_slice().iter().zip(target.as_slice()).map(|(p, t)| (p - t) * (p - t)).sum();
                batch_loss += sq;
                let mut d_out = mse_grad(&pred, &target);
                d_out.scale(slice.len() as f64 / batch.len() as f64);
                grads.add_assign(&net.backward(&d_out)?);
            }
            let batch_mse = batch_loss / (batch.len() * arch.horizon) as f64;
            if !batch_mse.is_finite() {
                return Err(Error::Numeric(format!("non-finite training loss at epoch {epoch}, batch {batch_idx}")));
            }
            loss_sum += batch_loss;
            let mut params = net.parameters_mut();
            adam.update(&mut params, &grads.0, &names, lr).map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, batch {batch_idx}: {msg}")),
                other => other,
            })?;
        }
        let train_mse = loss_sum / (train.len() * arch.horizon) as f64;
        let (val_mse, val_ev) = evaluate(&net, val)?;
        if !val_mse.is_finite() {
            return Err(Error::Numeric(format!("non-finite validation loss at epoch {epoch}")));
        }
        curve.records.push(EpochRecord { epoch, lr, train_mse, val_mse, val_ev });
        epochs_run = epoch + 1;
        log::info!("epoch {epoch}: lr {lr:e} train {train_mse:.5} val {val_mse:.5} ev {val_ev:.4}");

        let improved = best.as_ref().is_none_or(|(b, _, _)| val_mse < b - spec.min_delta);
        if improved {
            best = Some((val_mse, epoch, net.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= spec.patience {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    let (best_val_loss, best_epoch, network) = best.expect("at least one epoch");
    Ok(FitOutcome { network, curve, epochs_run, best_epoch, best_val_loss })
}

fn lookup<'a>(records: &'a [TimeSeriesRecord], id: &str) -> Result<&'a TimeSeriesRecord> {
    records
        .iter()
        .find(|r| r.case_id == id)
        .ok_or_else(|| Error::Data(format!("case {id} named in the fold layout is missing")))
}

/// Normalization constants over every cross-validation case; test cases are excluded.
pub fn fold_norm(records: &[TimeSeriesRecord], layout: &FoldLayout) -> Result<NormalizationConstants> {
    let cv: Vec<&TimeSeriesRecord> = layout.cv_cases().into_iter().map(|id| lookup(records, id)).collect::<Result<_>>()?;
    compute_norm(&cv)
}

/// Windows all listed cases with one set of constants.
pub fn window_cases(
    records: &[TimeSeriesRecord],
    ids: &[&str],
    window: &WindowSpec,
    norm: &NormalizationConstants,
) -> Result<Vec<WindowedSample>> {
    let mut out = Vec::new();
    for id in ids {
        out.extend(window_case(lookup(records, id)?, window, norm)?);
    }
    Ok(out)
}

/// Trains on every fold but `fold_index` and validates on that fold.
pub fn train_fold(
    records: &[TimeSeriesRecord],
    layout: &FoldLayout,
    fold_index: usize,
    arch: &ArchitectureSpec,
    spec: &TrainSpec,
    window: &WindowSpec,
    noise_level: f64,
) -> Result<(ModelCheckpoint, TrainingCurve)> {
    if fold_index >= layout.num_folds() {
        return Err(Error::Config(format!("fold {fold_index} outside [0, {})", layout.num_folds())));
    }
    if arch.horizon != window.m {
        return Err(Error::Structural(format!("network horizon {} differs from window m = {}", arch.horizon, window.m)));
    }
    let norm = fold_norm(records, layout)?;
    let train_ids = layout.training_cases(fold_index);
    let val_ids: Vec<&str> = layout.validation_cases(fold_index).iter().map(String::as_str).collect();
    let train = window_cases(records, &train_ids, window, &norm)?;
    let val = window_cases(records, &val_ids, window, &norm)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data(format!("fold {fold_index} produced no training or validation windows")));
    }
    let net = build_model(arch, spec.seed)?;
    let outcome = fit(net, &train, &val, spec, noise_level)?;
    let checkpoint = ModelCheckpoint {
        window: *window,
        norm,
        meta: TrainMeta {
            epochs_run: outcome.epochs_run,
            best_epoch: outcome.best_epoch,
            best_val_loss: outcome.best_val_loss,
            fold_id: Some(fold_index),
            rng_algorithm: RNG_ALGORITHM.to_string(),
            noise_level,
            seed: spec.seed,
        },
        network: outcome.network,
    };
    Ok((checkpoint, outcome.curve))
}

/// Trained weights plus everything needed to apply them to raw records.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub window: WindowSpec,
    pub norm: NormalizationConstants,
    pub meta: TrainMeta,
    pub network: Network,
}

impl ModelCheckpoint {
    pub fn arch(&self) -> &ArchitectureSpec {
        self.network.arch()
    }

    /// Single forward pass with dropout off; normalized units unless `denormalize`.
    pub fn predict(&self, x: &Matrix, denormalize: bool) -> Result<Vec<f64>> {
        x.ensure_shape(self.window.n, 2, "input window")?;
        x.ensure_finite("input window")?;
        let y = self.network.forward(&time_major(&[x])?, None)?.into_vec();
        Ok(if denormalize { y.into_iter().map(|v| self.norm.denormalize_motion(v)).collect() } else { y })
    }

    fn header(&self) -> String {
        let a = self.arch();
        let m = &self.meta;
        let mut h = String::new();
        let mut kv = |k: &str, v: String| {
            h.push_str(k);
            h.push('=');
            h.push_str(&v);
            h.push('\n');
        };
        kv("arch.num_lstm_layers", a.num_lstm_layers.to_string());
        kv("arch.lstm_hidden", a.lstm_hidden.to_string());
        kv("arch.num_fc_blocks", a.num_fc_blocks.to_string());
        kv("arch.fc_width", a.fc_width.to_string());
        kv("arch.dropout_p", a.dropout_p.to_string());
        kv("arch.horizon", a.horizon.to_string());
        kv("arch.lstm_shortcuts", a.lstm_shortcuts.to_string());
        kv("arch.lstm_dropout", a.lstm_dropout.to_string());
        kv("window.m", self.window.m.to_string());
        kv("window.n", self.window.n.to_string());
        kv("window.w", self.window.w.to_string());
        kv("norm.mean_motion", self.norm.mean_motion.to_string());
        kv("norm.std_motion", self.norm.std_motion.to_string());
        kv("norm.mean_wave", self.norm.mean_wave.to_string());
        kv("norm.std_wave", self.norm.std_wave.to_string());
        kv("meta.epochs_run", m.epochs_run.to_string());
        kv("meta.best_epoch", m.best_epoch.to_string());
        kv("meta.best_val_loss", m.best_val_loss.to_string());
        kv("meta.fold_id", m.fold_id.map_or_else(|| "none".to_string(), |f| f.to_string()));
        kv("meta.rng_algorithm", m.rng_algorithm.clone());
        kv("meta.noise_level", m.noise_level.to_string());
        kv("meta.seed", m.seed.to_string());
        for (name, p) in self.network.parameter_names().iter().zip(self.network.parameters()) {
            kv("tensor", format!("{name} {} {}", p.rows(), p.cols()));
        }
        h
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let header = self.header();
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(header.len() as u64).to_le_bytes())?;
        out.write_all(header.as_bytes())?;
        for p in self.network.parameters() {
            for v in p.as_slice() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let truncated = || Error::Format("truncated checkpoint".into());
        let mut magic = [0u8; 5];
        input.read_exact(&mut magic).map_err(|_| truncated())?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let mut word = [0u8; 4];
        input.read_exact(&mut word).map_err(|_| truncated())?;
        let version = u32::from_le_bytes(word);
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion { found: version, supported: CHECKPOINT_VERSION });
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len).map_err(|_| truncated())?;
        let len = u64::from_le_bytes(len);
        if len > 1 << 24 {
            return Err(Error::Format(format!("checkpoint header of {len} bytes is implausibly large")));
        }
        let mut header = vec![0u8; len as usize];
        input.read_exact(&mut header).map_err(|_| truncated())?;
        let header = String::from_utf8(header).map_err(|_| Error::Format("checkpoint header is not UTF-8".into()))?;

        let mut fields = std::collections::HashMap::new();
        let mut tensors = Vec::new();
        for line in header.lines() {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format(format!("malformed header line {line:?}")))?;
            if k == "tensor" {
                let parts: Vec<&str> = v.split_whitespace().collect();
                let parsed = match parts.as_slice() {
                    [name, r, c] => r.parse::<usize>().ok().zip(c.parse::<usize>().ok()).map(|(r, c)| (name.to_string(), r, c)),
                    _ => None,
                };
                tensors.push(parsed.ok_or_else(|| Error::Format(format!("malformed tensor entry {v:?}")))?);
            } else if fields.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Format(format!("duplicate header key {k}")));
            }
        }
        fn get<T: std::str::FromStr>(fields: &std::collections::HashMap<String, String>, key: &str) -> Result<T> {
            let raw = fields.get(key).ok_or_else(|| Error::Format(format!("checkpoint header lacks {key}")))?;
            raw.parse().map_err(|_| Error::Format(format!("checkpoint header {key} = {raw:?} is invalid")))
        }
        let arch = ArchitectureSpec {
            num_lstm_layers: get(&fields, "arch.num_lstm_layers")?,
            lstm_hidden: get(&fields, "arch.lstm_hidden")?,
            num_fc_blocks: get(&fields, "arch.num_fc_blocks")?,
            fc_width: get(&fields, "arch.fc_width")?,
            dropout_p: get(&fields, "arch.dropout_p")?,
            horizon: get(&fields, "arch.horizon")?,
            lstm_shortcuts: get(&fields, "arch.lstm_shortcuts")?,
            lstm_dropout: get(&fields, "arch.lstm_dropout")?,
        };
        let window = WindowSpec::new(get(&fields, "window.m")?, get(&fields, "window.n")?, get(&fields, "window.w")?)?;
        let norm = NormalizationConstants {
            mean_motion: get(&fields, "norm.mean_motion")?,
            std_motion: get(&fields, "norm.std_motion")?,
            mean_wave: get(&fields, "norm.mean_wave")?,
            std_wave: get(&fields, "norm.std_wave")?,
        };
        norm.validate()?;
        let fold_raw: String = get(&fields, "meta.fold_id")?;
        let fold_id = if fold_raw == "none" {
            None
        } else {
            Some(fold_raw.parse().map_err(|_| Error::Format(format!("checkpoint header meta.fold_id = {fold_raw:?} is invalid")))?)
        };
        let meta = TrainMeta {
            epochs_run: get(&fields, "meta.epochs_run")?,
            best_epoch: get(&fields, "meta.best_epoch")?,
            best_val_loss: get(&fields, "meta.best_val_loss")?,
            fold_id,
            rng_algorithm: get(&fields, "meta.rng_algorithm")?,
            noise_level: get(&fields, "meta.noise_level")?,
            seed: get(&fields, "meta.seed")?,
        };
        if arch.horizon != window.m {
            return Err(Error::Structural(format!("checkpoint horizon {} differs from window m = {}", arch.horizon, window.m)));
        }

        let mut network = Network::with_seed(&arch, 0)?;
        let names = network.parameter_names();
        if tensors.len() != names.len() {
            return Err(Error::Structural(format!("checkpoint lists {} tensors, architecture has {}", tensors.len(), names.len())));
        }
        for ((name, rows, cols), (expected, p)) in tensors.iter().zip(names.iter().zip(network.parameters_mut())) {
            if name != expected || (*rows, *cols) != p.shape() {
                return Err(Error::Structural(format!(
                    "tensor {name} {rows}x{cols} does not match {expected} {}x{}",
                    p.rows(),
                    p.cols()
                )));
            }
            let mut buf = [0u8; 8];
            for v in p.as_mut_slice() {
                input.read_exact(&mut buf).map_err(|_| truncated())?;
                *v = f64::from_le_bytes(buf);
            }
        }
        let mut rest = [0u8; 1];
        if input.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after checkpoint payload".into()));
        }
        Ok(ModelCheckpoint { window, norm, meta, network })
    }
}

/// Single deterministic forward pass of a checkpoint.
pub fn predict_deterministic(checkpoint: &ModelCheckpoint, x: &Matrix, denormalize: bool) -> Result<Vec<f64>> {
    checkpoint.predict(x, denormalize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SampleOrigin;
    use std::sync::Arc;

    fn small_arch(m: usize, p: f64) -> ArchitectureSpec {
        ArchitectureSpec {
            num_lstm_layers: 2,
            lstm_hidden: 8,
            num_fc_blocks: 2,
            fc_width: 6,
            dropout_p: p,
            horizon: m,
            lstm_shortcuts: true,
            lstm_dropout: true,
        }
    }

    fn checkpoint(seed: u64) -> ModelCheckpoint {
        let arch = small_arch(3, 0.2);
        ModelCheckpoint {
            window: WindowSpec::for_horizon(3).unwrap(),
            norm: NormalizationConstants { mean_motion: 0.1, std_motion: 1.3, mean_wave: -0.02, std_wave: 2.9 },
            meta: TrainMeta {
                epochs_run: 12,
                best_epoch: 7,
                best_val_loss: 0.012345678901234,
                fold_id: Some(1),
                rng_algorithm: RNG_ALGORITHM.into(),
                noise_level: 0.2,
                seed,
            },
            network: build_model(&arch, seed).unwrap(),
        }
    }

    fn sine_samples(count: usize, n: usize, m: usize) -> Vec<WindowedSample> {
        let id: Arc<str> = Arc::from("s");
        (0..count)
            .map(|k| {
                let phase = k as f64 * 0.37;
                let x = Matrix::from_fn(n, 2, |t, c| ((t as f64) * 0.4 + phase + c as f64).sin());
                let y = (0..m).map(|j| ((n + j) as f64 * 0.4 + phase).sin()).collect();
                WindowedSample { x, y, origin: SampleOrigin { case_id: Arc::clone(&id), anchor: k } }
            })
            .collect()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let ck = checkpoint(5);
        let bytes = ck.to_bytes();
        let back = ModelCheckpoint::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn tampered_checkpoints_rejected() {
        let bytes = checkpoint(5).to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(ModelCheckpoint::read_from(bad.as_slice()), Err(Error::Format(_))));
        let mut ver = bytes.clone();
        ver[5] = 9;
        assert!(matches!(ModelCheckpoint::read_from(ver.as_slice()), Err(Error::UnsupportedVersion { found: 9, supported: 1 })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(ModelCheckpoint::read_from(extra.as_slice()), Err(Error::Format(_))));
        assert!(ModelCheckpoint::read_from(&bytes[..bytes.len() - 1]).is_err());
        let needle = b"tensor=lstm0.w 2 32";
        let shape_start = bytes.windows(needle.len()).position(|w| w == needle).unwrap();
        let mut wrong = bytes.clone();
        wrong[shape_start + "tensor=lstm0.w ".len()] = b'3';
        assert!(matches!(ModelCheckpoint::read_from(wrong.as_slice()), Err(Error::Structural(_))));
    }

    #[test]
    fn deterministic_prediction_survives_reload() {
        let ck = checkpoint(9);
        let x = Matrix::from_fn(9, 2, |r, c| (r as f64 - c as f64) * 0.1);
        let a = predict_deterministic(&ck, &x, false).unwrap();
        assert_eq!(a, predict_deterministic(&ck, &x, false).unwrap());
        let back = ModelCheckpoint::read_from(ck.to_bytes().as_slice()).unwrap();
        assert_eq!(back.predict(&x, false).unwrap(), a);
        let raw = ck.predict(&x, true).unwrap();
        for (r, v) in raw.iter().zip(&a) {
            assert!((r - ck.norm.denormalize_motion(*v)).abs() < 1e-15);
        }
        assert!(matches!(ck.predict(&Matrix::zeros(8, 2), false), Err(Error::Structural(_))));
    }

    #[test]
    fn curve_csv_round_trip() {
        let curve = TrainingCurve {
            records: vec![
                EpochRecord { epoch: 0, lr: 0.01, train_mse: 0.5, val_mse: 0.4, val_ev: 0.6 },
                EpochRecord { epoch: 1, lr: 0.01, train_mse: 0.25, val_mse: 0.3, val_ev: 0.7 },
            ],
        };
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        assert_eq!(TrainingCurve::read_csv(buf.as_slice()).unwrap(), curve);
        assert_eq!(curve.best().unwrap().epoch, 1);
    }

    #[test]
    fn early_stopping_keeps_best_epoch() {
        let data = sine_samples(40, 6, 2);
        let spec = TrainSpec { max_epochs: 200, batch_size: 8, patience: 3, seed: 1, ..TrainSpec::default() };
        let net = build_model(&small_arch(2, 0.0), 1).unwrap();
        let out = fit(net, &data[..30], &data[30..], &spec, 0.0).unwrap();
        assert!(out.epochs_run <= out.best_epoch + 1 + spec.patience);
        assert!(out.curve.records.iter().all(|r| r.val_mse.is_finite()));
        let (val_mse, _) = evaluate(&out.network, &data[30..]).unwrap();
        assert_eq!(val_mse, out.best_val_loss);
        assert_eq!(out.curve.best().unwrap().epoch, out.best_epoch);
    }

    #[test]
    fn training_is_reproducible() {
        let data = sine_samples(24, 5, 2);
        let spec = TrainSpec { max_epochs: 4, batch_size: 5, micro_batch: 2, seed: 3, ..TrainSpec::default() };
        let run = || fit(build_model(&small_arch(2, 0.3), 3).unwrap(), &data[..16], &data[16..], &spec, 0.2).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.network, b.network);
        assert_eq!(a.curve, b.curve);
    }

    #[test]
    fn micro_batching_matches_whole_batch() {
        let data = sine_samples(12, 5, 2);
        let base = TrainSpec { max_epochs: 2, batch_size: 12, seed: 4, ..TrainSpec::default() };
        let whole = fit(build_model(&small_arch(2, 0.0), 4).unwrap(), &data[..8], &data[8..], &base, 0.0).unwrap();
        let split = TrainSpec { micro_batch: 3, ..base };
        let parts = fit(build_model(&small_arch(2, 0.0), 4).unwrap(), &data[..8], &data[8..], &split, 0.0).unwrap();
        for (a, b) in whole.network.parameters().iter().zip(parts.network.parameters()) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_sets_rejected() {
        let data = sine_samples(4, 5, 2);
        let net = build_model(&small_arch(2, 0.0), 1).unwrap();
        assert!(matches!(fit(net, &data, &[], &TrainSpec::default(), 0.0), Err(Error::Data(_))));
    }
}
