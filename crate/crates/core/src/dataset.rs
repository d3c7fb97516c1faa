//! Windowed input/output pairs, normalization, fold layout and observation noise.
//!
//! A sample anchored at index `p` carries the motion history
//! `x[p-n..p]`, the wave elevation shifted forward by the wave lag,
//! `eta[p-n+w..p+w]`, and the target `x[p..p+m]`. Both inputs are stacked
//! into an `n x 2` matrix (column 0 motion, column 1 wave).

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::ops::RangeInclusive;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::record::{TimeSeriesRecord, ETA, HEAVE};
use crate::rng::{stream, Purpose};

/// Magic prefix of the binary sample container.
pub const SAMPLES_MAGIC: &[u8; 5] = b"WMDS1";

/// Window geometry: horizon `m`, history length `n` and wave lag `w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub m: usize,
    pub n: usize,
    pub w: usize,
}

impl WindowSpec {
    pub fn new(m: usize, n: usize, w: usize) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::Config(format!("window needs m >= 1 and n >= 1 (got m = {m}, n = {n})")));
        }
        if n < m {
            log::warn!("time window n = {n} is shorter than the horizon m = {m}");
        }
        Ok(WindowSpec { m, n, w })
    }

    /// Defaults for a horizon: `n = 3m`, `w = m`.
    pub fn for_horizon(m: usize) -> Result<Self> {
        Self::new(m, 3 * m, m)
    }

    /// Scaled variant used by configuration (`n = n_factor * m`, `w = w_factor * m`).
    pub fn scaled(m: usize, n_factor: usize, w_factor: usize) -> Result<Self> {
        Self::new(m, n_factor * m, w_factor * m)
    }

    /// Admissible anchors for a record of `len` samples, or `None` if it is too short.
    pub fn anchors(&self, len: usize) -> Option<RangeInclusive<usize>> {
        let lead = self.m.max(self.w);
        if len < self.n + lead {
            return None;
        }
        Some(self.n..=len - lead)
    }

    pub fn sample_count(&self, len: usize) -> usize {
        self.anchors(len).map_or(0, |r| r.count())
    }
}

/// Per-channel mean and standard deviation used for standardization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationConstants {
    pub mean_motion: f64,
    pub std_motion: f64,
    pub mean_wave: f64,
    pub std_wave: f64,
}

impl NormalizationConstants {
    pub fn validate(&self) -> Result<()> {
        let all = [self.mean_motion, self.std_motion, self.mean_wave, self.std_wave];
        if all.iter().any(|v| !v.is_finite()) || self.std_motion <= 0.0 || self.std_wave <= 0.0 {
            return Err(Error::Config(format!("invalid normalization constants {self:?}")));
        }
        Ok(())
    }

    /// The identity transform; handy for tests and raw exports.
    pub fn identity() -> Self {
        NormalizationConstants { mean_motion: 0.0, std_motion: 1.0, mean_wave: 0.0, std_wave: 1.0 }
    }

    pub fn normalize_motion(&self, v: f64) -> f64 {
        (v - self.mean_motion) / self.std_motion
    }

    pub fn denormalize_motion(&self, v: f64) -> f64 {
        v * self.std_motion + self.mean_motion
    }

    pub fn normalize_wave(&self, v: f64) -> f64 {
        (v - self.mean_wave) / self.std_wave
    }

    pub fn denormalize_wave(&self, v: f64) -> f64 {
        v * self.std_wave + self.mean_wave
    }
}

fn pooled_stats<'a>(series: impl Iterator<Item = &'a [f64]> + Clone) -> (f64, f64, usize) {
    let count: usize = series.clone().map(<[f64]>::len).sum();
    let mean = series.clone().flatten().sum::<f64>() / count as f64;
    let var = series.flatten().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64;
    (mean, var.sqrt(), count)
}

/// Pooled per-channel statistics (population standard deviation) over all records.
///
/// Pass only training and validation cases; test cases must not leak in.
pub fn compute_norm(records: &[&TimeSeriesRecord]) -> Result<NormalizationConstants> {
    if records.is_empty() {
        return Err(Error::Config("normalization needs at least one record".into()));
    }
    let motion: Vec<&[f64]> = records.iter().map(|r| r.channel(HEAVE)).collect::<Result<_>>()?;
    let wave: Vec<&[f64]> = records.iter().map(|r| r.channel(ETA)).collect::<Result<_>>()?;
    let (mean_motion, std_motion, _) = pooled_stats(motion.iter().copied());
    let (mean_wave, std_wave, _) = pooled_stats(wave.iter().copied());
    for (name, s) in [(HEAVE, std_motion), (ETA, std_wave)] {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Config(format!("channel {name} has zero variance over the training pool")));
        }
    }
    Ok(NormalizationConstants { mean_motion, std_motion, mean_wave, std_wave })
}

/// Where a sample came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleOrigin {
    pub case_id: Arc<str>,
    pub anchor: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSample {
    /// `n x 2`: normalized motion history and lagged wave.
    pub x: Matrix,
    /// Normalized future motion, length `m`.
    pub y: Vec<f64>,
    pub origin: SampleOrigin,
}

impl WindowedSample {
    /// Target in raw (physical) units.
    pub fn y_raw(&self, norm: &NormalizationConstants) -> Vec<f64> {
        self.y.iter().map(|&v| norm.denormalize_motion(v)).collect()
    }
}

/// One sample per admissible anchor, stride 1.
///
/// A record shorter than `n + max(m, w)` gives an empty list and a warning.
pub fn window_case(record: &TimeSeriesRecord, spec: &WindowSpec, norm: &NormalizationConstants) -> Result<Vec<WindowedSample>> {
    norm.validate()?;
    let motion = record.channel(HEAVE)?;
    let wave = record.channel(ETA)?;
    let Some(anchors) = spec.anchors(record.len()) else {
        log::warn!(
            "case {} has {} samples, fewer than n + max(m, w) = {}; no windows produced",
            record.case_id,
            record.len(),
            spec.n + spec.m.max(spec.w)
        );
        return Ok(Vec::new());
    };
    let motion: Vec<f64> = motion.iter().map(|&v| norm.normalize_motion(v)).collect();
    let wave: Vec<f64> = wave.iter().map(|&v| norm.normalize_wave(v)).collect();
    let case_id: Arc<str> = Arc::from(record.case_id.as_str());
    let (n, w, m) = (spec.n, spec.w, spec.m);
    let samples = anchors
        .map(|p| {
            let mut data = Vec::with_capacity(2 * n);
            for j in 0..n {
                data.push(motion[p - n + j]);
                data.push(wave[p - n + w + j]);
            }
            WindowedSample {
                x: Matrix::from_vec(n, 2, data).expect("window shape"),
                y: motion[p..p + m].to_vec(),
                origin: SampleOrigin { case_id: Arc::clone(&case_id), anchor: p },
            }
        })
        .collect();
    Ok(samples)
}

/// Adds i.i.d. Gaussian noise of standard deviation `level` (normalized units) to
/// both input columns. Targets are left untouched.
pub fn inject_noise(samples: &[WindowedSample], level: f64, seed: u64) -> Result<Vec<WindowedSample>> {
    if !(level >= 0.0) || !level.is_finite() {
        return Err(Error::Domain(format!("noise level must be finite and >= 0 (got {level})")));
    }
    let mut out = samples.to_vec();
    if level == 0.0 {
        return Ok(out);
    }
    let mut rng = stream(seed, Purpose::Noise);
    for s in &mut out {
        for v in s.x.as_mut_slice() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += level * z;
        }
    }
    Ok(out)
}

/// A case identifier plus the sea state it was generated from.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseInfo {
    pub id: String,
    pub hs: f64,
    pub tp: f64,
}

impl CaseInfo {
    pub fn new(id: impl Into<String>, hs: f64, tp: f64) -> Self {
        CaseInfo { id: id.into(), hs, tp }
    }

    fn tag(&self) -> (u64, u64) {
        (self.hs.to_bits(), self.tp.to_bits())
    }
}

/// Cross-validation folds plus the held-out test cases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldLayout {
    pub folds: Vec<Vec<String>>,
    pub test_cases: Vec<String>,
}

impl FoldLayout {
    pub fn num_folds(&self) -> usize {
        self.folds.len()
    }

    pub fn validation_cases(&self, fold: usize) -> &[String] {
        &self.folds[fold]
    }

    pub fn training_cases(&self, fold: usize) -> Vec<&str> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != fold)
            .flat_map(|(_, ids)| ids.iter().map(String::as_str))
            .collect()
    }

    /// Every case that takes part in cross-validation (training or validation).
    pub fn cv_cases(&self) -> Vec<&str> {
        self.folds.iter().flatten().map(String::as_str).collect()
    }

    /// Fold index of a case, or `None` for test cases and unknown ids.
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.folds.iter().position(|f| f.iter().any(|c| c == id))
    }

    pub fn write_manifest<W: Write>(&self, mut out: W) -> Result<()> {
        for (k, ids) in self.folds.iter().enumerate() {
            writeln!(out, "fold{k} {}", ids.join(" "))?;
        }
        writeln!(out, "test {}", self.test_cases.join(" "))?;
        Ok(())
    }
}

/// Splits cases into `num_folds` folds of two plus two held-out test cases.
///
/// The two test cases are the ones whose sea state appears exactly once. The
/// remaining cases must come from exactly two sea states with `num_folds`
/// realizations each; every fold receives one realization of each.
pub fn build_folds(cases: &[CaseInfo], num_folds: usize) -> Result<FoldLayout> {
    if num_folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds (got {num_folds})")));
    }
    let expected = 2 * num_folds + 2;
    if cases.len() != expected {
        return Err(Error::Config(format!(
            "{num_folds} folds need {expected} cases ({} for cross-validation, 2 for testing), got {}",
            2 * num_folds,
            cases.len()
        )));
    }
    let mut seen = HashSet::new();
    for c in cases {
        if !seen.insert(c.id.as_str()) {
            return Err(Error::Config(format!("duplicate case id {}", c.id)));
        }
    }

    let mut groups: BTreeMap<(u64, u64), Vec<&CaseInfo>> = BTreeMap::new();
    for c in cases {
        groups.entry(c.tag()).or_default().push(c);
    }
    let (singles, shared): (Vec<_>, Vec<_>) = groups.into_values().partition(|g| g.len() == 1);
    if singles.len() != 2 {
        return Err(Error::Config(format!(
            "expected exactly 2 test cases with a sea state of their own, found {}",
            singles.len()
        )));
    }
    if shared.len() != 2 || shared.iter().any(|g| g.len() != num_folds) {
        return Err(Error::Config(format!(
            "cross-validation cases must come from 2 sea states with {num_folds} cases each"
        )));
    }

    let mut folds = vec![Vec::with_capacity(2); num_folds];
    for group in shared {
        let mut ids: Vec<&str> = group.iter().map(|c| c.id.as_str()).collect();
        ids.sort_unstable();
        for (k, id) in ids.into_iter().enumerate() {
            folds[k % num_folds].push(id.to_string());
        }
    }
    let mut test_cases: Vec<String> = singles.into_iter().map(|g| g[0].id.clone()).collect();
    test_cases.sort();
    Ok(FoldLayout { folds, test_cases })
}

/// Samples with their window geometry and normalization, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub spec: WindowSpec,
    pub norm: NormalizationConstants,
    pub samples: Vec<WindowedSample>,
}

impl SampleSet {
    /// Little-endian binary container.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let ids = self.case_ids();
        out.write_all(SAMPLES_MAGIC)?;
        for v in [self.spec.m, self.spec.n, self.spec.w] {
            out.write_all(&u32::try_from(v).map_err(|_| Error::Format("window size exceeds u32".into()))?.to_le_bytes())?;
        }
        out.write_all(&(self.samples.len() as u64).to_le_bytes())?;
        for v in [self.norm.mean_motion, self.norm.std_motion, self.norm.mean_wave, self.norm.std_wave] {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&(ids.len() as u32).to_le_bytes())?;
        for id in &ids {
            out.write_all(&(id.len() as u32).to_le_bytes())?;
            out.write_all(id.as_bytes())?;
        }
        for s in &self.samples {
            self.check_sample(s)?;
            let idx = ids.iter().position(|id| **id == *s.origin.case_id).expect("id table") as u32;
            out.write_all(&idx.to_le_bytes())?;
            out.write_all(&(s.origin.anchor as u64).to_le_bytes())?;
            for v in s.x.as_slice().iter().chain(&s.y) {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 5];
        input.read_exact(&mut magic).map_err(|_| Error::Format("truncated sample container".into()))?;
        if &magic != SAMPLES_MAGIC {
            return Err(Error::Format("not a sample container (bad magic)".into()));
        }
        let m = read_u32(&mut input)? as usize;
        let n = read_u32(&mut input)? as usize;
        let w = read_u32(&mut input)? as usize;
        let spec = WindowSpec::new(m, n, w)?;
        let count = read_u64(&mut input)? as usize;
        let norm = NormalizationConstants {
            mean_motion: read_f64(&mut input)?,
            std_motion: read_f64(&mut input)?,
            mean_wave: read_f64(&mut input)?,
            std_wave: read_f64(&mut input)?,
        };
        norm.validate()?;
        let n_ids = read_u32(&mut input)? as usize;
        let mut ids: Vec<Arc<str>> = Vec::with_capacity(n_ids);
        for _ in 0..n_ids {
            let len = read_u32(&mut input)? as usize;
            let mut buf = vec![0u8; len];
            input.read_exact(&mut buf).map_err(|_| Error::Format("truncated case id".into()))?;
            let id = String::from_utf8(buf).map_err(|_| Error::Format("case id is not UTF-8".into()))?;
            ids.push(Arc::from(id));
        }
        let mut samples = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let idx = read_u32(&mut input)? as usize;
            let case_id = ids.get(idx).cloned().ok_or_else(|| Error::Format(format!("case index {idx} out of range")))?;
            let anchor = read_u64(&mut input)? as usize;
            let x = (0..2 * n).map(|_| read_f64(&mut input)).collect::<Result<Vec<_>>>()?;
            let y = (0..m).map(|_| read_f64(&mut input)).collect::<Result<Vec<_>>>()?;
            samples.push(WindowedSample { x: Matrix::from_vec(n, 2, x)?, y, origin: SampleOrigin { case_id, anchor } });
        }
        let mut rest = [0u8; 1];
        if input.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after sample container".into()));
        }
        Ok(SampleSet { spec, norm, samples })
    }

    /// Debug export: one row per sample, `case_id,anchor,x_motion_0..,x_wave_0..,y_0..`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let (n, m) = (self.spec.n, self.spec.m);
        let mut header = vec!["case_id".to_string(), "anchor".to_string()];
        header.extend((0..n).map(|j| format!("x_motion_{j}")));
        header.extend((0..n).map(|j| format!("x_wave_{j}")));
        header.extend((0..m).map(|j| format!("y_{j}")));
        writeln!(out, "{}", header.join(","))?;
        for s in &self.samples {
            self.check_sample(s)?;
            let mut row = vec![s.origin.case_id.to_string(), s.origin.anchor.to_string()];
            row.extend(s.x.column(0).iter().map(f64::to_string));
            row.extend(s.x.column(1).iter().map(f64::to_string));
            row.extend(s.y.iter().map(f64::to_string));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    fn case_ids(&self) -> Vec<Arc<str>> {
        let mut ids: Vec<Arc<str>> = Vec::new();
        for s in &self.samples {
            if !ids.iter().any(|id| *id == s.origin.case_id) {
                ids.push(Arc::clone(&s.origin.case_id));
            }
        }
        ids
    }

    fn check_sample(&self, s: &WindowedSample) -> Result<()> {
        s.x.ensure_shape(self.spec.n, 2, "sample input")?;
        if s.y.len() != self.spec.m {
            return Err(Error::Structural(format!("sample target has {} values, expected {}", s.y.len(), self.spec.m)));
        }
        Ok(())
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Format("truncated sample container".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::Format("truncated sample container".into()))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    read_u64(r).map(f64::from_bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_record(id: &str, len: usize) -> TimeSeriesRecord {
        TimeSeriesRecord::new(id, 0.0, 0.775)
            .unwrap()
            .with_channel(ETA, (0..len).map(|i| i as f64 * 0.5 - 3.0).collect())
            .unwrap()
            .with_channel(HEAVE, (0..len).map(|i| (i as f64 * 0.3).sin()).collect())
            .unwrap()
    }

    #[test]
    fn defaults_follow_horizon() {
        let s = WindowSpec::for_horizon(20).unwrap();
        assert_eq!((s.m, s.n, s.w), (20, 60, 20));
    }

    #[test]
    fn anchor_range_for_hundred_samples() {
        let spec = WindowSpec::new(20, 60, 20).unwrap();
        let rec = ramp_record("c", 100);
        let samples = window_case(&rec, &spec, &NormalizationConstants::identity()).unwrap();
        assert_eq!(samples.len(), 21);
        assert_eq!(samples.first().unwrap().origin.anchor, 60);
        assert_eq!(samples.last().unwrap().origin.anchor, 80);
    }

    #[test]
    fn count_formula_with_long_wave_lag() {
        // L - n - m + 1 - max(0, w - m)
        for (l, m, n, w) in [(100, 20, 60, 20), (100, 5, 10, 30), (50, 10, 10, 0), (41, 20, 20, 20)] {
            let spec = WindowSpec::new(m, n, w).unwrap();
            let expected = (l as i64 - n as i64 - m as i64 + 1 - (w as i64 - m as i64).max(0)).max(0) as usize;
            assert_eq!(spec.sample_count(l), expected, "L={l} m={m} n={n} w={w}");
        }
    }

    #[test]
    fn short_record_gives_no_windows() {
        let spec = WindowSpec::new(20, 60, 20).unwrap();
        let rec = ramp_record("c", 79);
        assert!(window_case(&rec, &spec, &NormalizationConstants::identity()).unwrap().is_empty());
    }

    #[test]
    fn constant_record_windows_are_constant() {
        let rec = TimeSeriesRecord::new("c", 0.0, 1.0)
            .unwrap()
            .with_channel(ETA, vec![2.0; 40])
            .unwrap()
            .with_channel(HEAVE, vec![-1.0; 40])
            .unwrap();
        let norm = NormalizationConstants { mean_motion: 0.5, std_motion: 2.0, mean_wave: 1.0, std_wave: 4.0 };
        let spec = WindowSpec::for_horizon(5).unwrap();
        for s in window_case(&rec, &spec, &norm).unwrap() {
            assert!(s.x.column(0).iter().all(|&v| v == -0.75));
            assert!(s.x.column(1).iter().all(|&v| v == 0.25));
            assert!(s.y.iter().all(|&v| v == -0.75));
        }
    }

    #[test]
    fn two_point_population_std() {
        let rec = TimeSeriesRecord::new("c", 0.0, 1.0)
            .unwrap()
            .with_channel(ETA, [1.0, 3.0].repeat(10))
            .unwrap()
            .with_channel(HEAVE, [1.0, 3.0].repeat(10))
            .unwrap();
        let norm = compute_norm(&[&rec]).unwrap();
        assert!((norm.mean_wave - 2.0).abs() < 1e-15 && (norm.std_wave - 1.0).abs() < 1e-15);
        assert!((norm.mean_motion - 2.0).abs() < 1e-15 && (norm.std_motion - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_variance_is_config_error() {
        let rec = TimeSeriesRecord::new("c", 0.0, 1.0)
            .unwrap()
            .with_channel(ETA, vec![1.0, 2.0, 3.0])
            .unwrap()
            .with_channel(HEAVE, vec![0.5; 3])
            .unwrap();
        assert!(matches!(compute_norm(&[&rec]), Err(Error::Config(_))));
        assert!(matches!(compute_norm(&[]), Err(Error::Config(_))));
    }

    #[test]
    fn standardized_pool_has_zero_mean_unit_std() {
        let a = ramp_record("a", 300);
        let b = ramp_record("b", 170);
        let norm = compute_norm(&[&a, &b]).unwrap();
        for ch in [ETA, HEAVE] {
            let vals: Vec<f64> = [&a, &b]
                .iter()
                .flat_map(|r| r.channel(ch).unwrap().iter().copied())
                .map(|v| if ch == ETA { norm.normalize_wave(v) } else { norm.normalize_motion(v) })
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
            assert!(mean.abs() < 1e-9 && (std - 1.0).abs() < 1e-9, "{ch}: {mean} {std}");
        }
    }

    #[test]
    fn noise_touches_inputs_only() {
        let rec = ramp_record("c", 400);
        let spec = WindowSpec::for_horizon(10).unwrap();
        let clean = window_case(&rec, &spec, &NormalizationConstants::identity()).unwrap();
        assert_eq!(inject_noise(&clean, 0.0, 3).unwrap(), clean);
        let noisy = inject_noise(&clean, 0.2, 3).unwrap();
        for col in 0..2 {
            let diffs: Vec<f64> = clean
                .iter()
                .zip(&noisy)
                .flat_map(|(c, n)| c.x.column(col).into_iter().zip(n.x.column(col)).map(|(a, b)| b - a))
                .collect();
            assert!(diffs.len() >= 10_000);
            let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
            let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt();
            assert!((std / 0.2 - 1.0).abs() < 0.05, "column {col}: std {std}");
        }
        assert!(clean.iter().zip(&noisy).all(|(c, n)| c.y == n.y));
        assert!(matches!(inject_noise(&clean, -0.1, 3), Err(Error::Domain(_))));
    }

    fn reference_cases() -> Vec<CaseInfo> {
        let mut cases = Vec::new();
        for i in 0..8 {
            cases.push(CaseInfo::new(format!("case{:02}", 2 * i + 1), 17.4, 15.9));
            cases.push(CaseInfo::new(format!("case{:02}", 2 * i + 2), 12.5, 13.5));
        }
        cases.push(CaseInfo::new("case17", 15.0, 14.7));
        cases.push(CaseInfo::new("case18", 13.5, 15.2));
        cases
    }

    #[test]
    fn eighteen_cases_make_eight_folds() {
        let layout = build_folds(&reference_cases(), 8).unwrap();
        assert_eq!(layout.num_folds(), 8);
        assert!(layout.folds.iter().all(|f| f.len() == 2));
        assert_eq!(layout.test_cases, vec!["case17", "case18"]);
        let mut all: Vec<&str> = layout.cv_cases();
        all.extend(layout.test_cases.iter().map(String::as_str));
        let unique: HashSet<&str> = all.iter().copied().collect();
        assert_eq!(unique.len(), 18);
        // Each fold holds one realization of each training sea state.
        assert_eq!(layout.folds[0], vec!["case02", "case01"]);
        assert_eq!(layout.training_cases(0).len(), 14);
        assert_eq!(layout.fold_of("case05"), Some(2));
        assert_eq!(layout.fold_of("case17"), None);
    }

    #[test]
    fn fold_errors() {
        let mut dup = reference_cases();
        dup[1].id = "case01".into();
        assert!(matches!(build_folds(&dup, 8), Err(Error::Config(_))));
        let mut short = reference_cases();
        short.pop();
        assert!(matches!(build_folds(&short, 8), Err(Error::Config(_))));
        // A test sea state that repeats a training one.
        let mut leaky = reference_cases();
        leaky[17].hs = 17.4;
        leaky[17].tp = 15.9;
        assert!(build_folds(&leaky, 8).is_err());
    }

    #[test]
    fn binary_round_trip_and_tampering() {
        let spec = WindowSpec::for_horizon(4).unwrap();
        let norm = NormalizationConstants { mean_motion: 0.1, std_motion: 0.7, mean_wave: -0.2, std_wave: 2.5 };
        let mut samples = window_case(&ramp_record("a", 30), &spec, &norm).unwrap();
        samples.extend(window_case(&ramp_record("b", 25), &spec, &norm).unwrap());
        let set = SampleSet { spec, norm, samples };
        let mut bytes = Vec::new();
        set.write_binary(&mut bytes).unwrap();
        assert_eq!(SampleSet::read_binary(bytes.as_slice()).unwrap(), set);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(SampleSet::read_binary(bad.as_slice()), Err(Error::Format(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(SampleSet::read_binary(long.as_slice()), Err(Error::Format(_))));
        assert!(SampleSet::read_binary(&bytes[..bytes.len() - 3]).is_err());

        let mut csv = Vec::new();
        set.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), set.samples.len() + 1);
        assert!(text.starts_with("case_id,anchor,x_motion_0"));
    }
}
