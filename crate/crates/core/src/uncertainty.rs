//! Monte-Carlo dropout inference and the statistics built on it.
//!
//! A predictive distribution is obtained by running the trained network `B`
//! times with dropout active and independent masks per replica. Mean and
//! variance use the population convention (divisor `B`).

use std::io::{Read, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::{NormalizationConstants, WindowedSample};
use crate::error::{Error, Result};
use crate::forecaster::ModelCheckpoint;
use crate::nn::{time_major, BatchMasks, Matrix, Network, SampleMasks};
use crate::rng::replica_stream;

/// Magic prefix of the binary replica container.
pub const REPLICAS_MAGIC: &[u8; 5] = b"WMMC1";
/// Default confidence level of the intervals.
pub const DEFAULT_LEVEL: f64 = 0.9;
/// Default number of replicas.
pub const DEFAULT_REPLICAS: usize = 500;
/// Minimum replica count for moment diagnostics.
pub const MIN_MOMENT_REPLICAS: usize = 30;
/// Moment bounds of the normality screen.
pub const SKEW_BOUND: f64 = 0.5;
pub const EXCESS_KURTOSIS_BOUND: f64 = 1.0;
/// Spacing-curve lags below this are checked for stationarity.
pub const SPACING_CHECK_LAGS: usize = 10;
pub const SPACING_CV_LIMIT: f64 = 0.5;

const REPLICA_CHUNK: usize = 128;

/// Two-sided standard normal quantile for a confidence level, e.g. 1.645 for 0.9.
pub fn z_for_level(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("confidence level must lie in (0, 1), got {level}")));
    }
    Ok(Normal::standard().inverse_cdf(0.5 + level / 2.0))
}

fn population_var(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64
}

/// `1 - Var[y - y*] / Var[y]`.
pub fn explained_variance(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() || y_true.len() < 2 {
        return Err(Error::Structural(format!(
            "explained variance needs two equal-length series of at least 2 values (got {} and {})",
            y_true.len(),
            y_pred.len()
        )));
    }
    let var_y = population_var(y_true);
    if var_y == 0.0 {
        return Err(Error::UndefinedScore("target has zero variance".into()));
    }
    let resid: Vec<f64> = y_true.iter().zip(y_pred).map(|(a, b)| a - b).collect();
    Ok(1.0 - population_var(&resid) / var_y)
}

/// Explained variance of each output column across rows, averaged uniformly
/// over the columns (horizon points).
pub fn mean_explained_variance(truth: &Matrix, pred: &Matrix) -> Result<f64> {
    pred.ensure_shape(truth.rows(), truth.cols(), "predictions")?;
    let mut total = 0.0;
    for c in 0..truth.cols() {
        total += explained_variance(&truth.column(c), &pred.column(c))?;
    }
    Ok(total / truth.cols() as f64)
}

/// Replica outputs and their per-point summary.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    /// `B x m`, one row per replica.
    pub replicas: Matrix,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub level: f64,
    pub z: f64,
    pub seed: u64,
}

/// Column means and deviations from them. Deviations are taken relative to
/// the first replica before averaging, so identical replicas give exactly
/// zero deviations.
fn center(replicas: &Matrix) -> (Vec<f64>, Matrix) {
    let (b, m) = replicas.shape();
    let first = replicas.row(0).to_vec();
    let mut centered = Matrix::zeros(b, m);
    let mut shift = vec![0.0; m];
    for r in 0..b {
        for ((d, v), (acc, y0)) in centered.row_mut(r).iter_mut().zip(replicas.row(r)).zip(shift.iter_mut().zip(&first)) {
            *d = v - y0;
            *acc += *d;
        }
    }
    shift.iter_mut().for_each(|v| *v /= b as f64);
    for r in 0..b {
        for (d, s) in centered.row_mut(r).iter_mut().zip(&shift) {
            *d -= s;
        }
    }
    let mean = first.iter().zip(&shift).map(|(y0, s)| y0 + s).collect();
    (mean, centered)
}

impl PredictiveDistribution {
    pub fn from_replicas(replicas: Matrix, level: f64, seed: u64) -> Result<Self> {
        let b = replicas.rows();
        if b < 2 {
            return Err(Error::Domain(format!("need at least 2 replicas, got {b}")));
        }
        for r in 0..b {
            if replicas.row(r).iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("replica {r} produced a non-finite output")));
            }
        }
        let z = z_for_level(level)?;
        let (mean, centered) = center(&replicas);
        let mut var = vec![0.0; replicas.cols()];
        for r in 0..b {
            for (acc, d) in var.iter_mut().zip(centered.row(r)) {
                *acc += d * d;
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / b as f64).sqrt()).collect();
        let ci_lower = mean.iter().zip(&std).map(|(mu, s)| mu - z * s).collect();
        let ci_upper = mean.iter().zip(&std).map(|(mu, s)| mu + z * s).collect();
        Ok(PredictiveDistribution { replicas, mean, std, ci_lower, ci_upper, level, z, seed })
    }

    pub fn b(&self) -> usize {
        self.replicas.rows()
    }

    pub fn horizon(&self) -> usize {
        self.replicas.cols()
    }

    /// Same distribution with a different confidence level.
    pub fn with_level(&self, level: f64) -> Result<Self> {
        Self::from_replicas(self.replicas.clone(), level, self.seed)
    }

    /// Converts normalized replicas into physical motion units.
    pub fn denormalized(&self, norm: &NormalizationConstants) -> Result<Self> {
        let mut raw = self.replicas.clone();
        raw.as_mut_slice().iter_mut().for_each(|v| *v = norm.denormalize_motion(*v));
        Self::from_replicas(raw, self.level, self.seed)
    }

    /// `point,mean,std,ci_lo,ci_hi`
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "point,mean,std,ci_lo,ci_hi")?;
        for i in 0..self.horizon() {
            writeln!(out, "{i},{},{},{},{}", self.mean[i], self.std[i], self.ci_lower[i], self.ci_upper[i])?;
        }
        Ok(())
    }

    /// Binary replica matrix: magic, `b`, `m`, seed, then row-major f64 values.
    pub fn write_replicas<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(REPLICAS_MAGIC)?;
        for v in [self.b() as u64, self.horizon() as u64, self.seed] {
            out.write_all(&v.to_le_bytes())?;
        }
        for v in self.replicas.as_slice() {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_replicas<R: Read>(mut input: R, level: f64) -> Result<Self> {
        let mut magic = [0u8; 5];
        input.read_exact(&mut magic).map_err(|_| Error::Format("truncated replica container".into()))?;
        if &magic != REPLICAS_MAGIC {
            return Err(Error::Format("not a replica container (bad magic)".into()));
        }
        let mut word = [0u8; 8];
        let mut next = |input: &mut R| -> Result<u64> {
            input.read_exact(&mut word).map_err(|_| Error::Format("truncated replica container".into()))?;
            Ok(u64::from_le_bytes(word))
        };
        let b = next(&mut input)? as usize;
        let m = next(&mut input)? as usize;
        let seed = next(&mut input)?;
        let data = (0..b * m).map(|_| next(&mut input).map(f64::from_bits)).collect::<Result<Vec<_>>>()?;
        let mut rest = [0u8; 1];
        if input.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after replica container".into()));
        }
        Self::from_replicas(Matrix::from_vec(b, m, data)?, level, seed)
    }
}

/// Runs `b` dropout-active passes over one input. Replica `i` draws its masks
/// from its own stream, so the result does not depend on chunking or threads.
pub fn mc_replicas(net: &Network, x: &Matrix, b: usize, seed: u64) -> Result<Matrix> {
    if b < 2 {
        return Err(Error::Domain(format!("need at least 2 replicas, got {b}")));
    }
    let arch = net.arch();
    let m = arch.horizon;
    let chunks: Vec<(usize, usize)> = (0..b).step_by(REPLICA_CHUNK).map(|s| (s, (s + REPLICA_CHUNK).min(b))).collect();
    let outputs = chunks
        .par_iter()
        .map(|&(start, end)| -> Result<Matrix> {
            let masks = (start..end)
                .map(|i| SampleMasks::sample(arch, &mut replica_stream(seed, i)))
                .collect::<Result<Vec<_>>>()?;
            let masks = BatchMasks::stack(&masks)?;
            let copies: Vec<&Matrix> = vec![x; end - start];
            net.forward(&time_major(&copies)?, Some(&masks))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut data = Vec::with_capacity(b * m);
    for o in outputs {
        data.extend_from_slice(o.as_slice());
    }
    Matrix::from_vec(b, m, data)
}

/// Monte-Carlo dropout prediction in normalized units.
pub fn mc_predict(checkpoint: &ModelCheckpoint, x: &Matrix, b: usize, seed: u64, level: f64) -> Result<PredictiveDistribution> {
    x.ensure_shape(checkpoint.window.n, 2, "input window")?;
    x.ensure_finite("input window")?;
    let replicas = mc_replicas(&checkpoint.network, x, b, seed)?;
    PredictiveDistribution::from_replicas(replicas, level, seed)
}

/// Ensemble covariance between horizon points and the derived diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSummary {
    pub cov: Matrix,
    /// Each row divided by its diagonal term; degenerate rows are left at zero.
    pub normalized: Matrix,
    pub degenerate_rows: Vec<usize>,
    /// Mean covariance at each lag `l = j - i`.
    pub spacing_curve: Vec<f64>,
    /// Coefficient of variation of the covariance entries at each lag.
    pub spacing_cv: Vec<f64>,
}

impl CovarianceSummary {
    pub fn max_asymmetry(&self) -> f64 {
        let m = self.cov.rows();
        let mut worst: f64 = 0.0;
        for i in 0..m {
            for j in 0..m {
                worst = worst.max((self.cov[(i, j)] - self.cov[(j, i)]).abs());
            }
        }
        worst
    }

    /// Smallest and largest eigenvalue of the covariance matrix.
    pub fn eigen_range(&self) -> (f64, f64) {
        let m = self.cov.rows();
        let dm = DMatrix::from_row_slice(m, m, self.cov.as_slice());
        let eig = SymmetricEigen::new(dm).eigenvalues;
        let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Positive semidefinite up to `1e-8` of the largest eigenvalue.
    pub fn is_psd(&self) -> bool {
        let (lo, hi) = self.eigen_range();
        lo >= -1e-8 * hi.abs()
    }

    /// Lags below [`SPACING_CHECK_LAGS`] whose covariance varies too much
    /// along the diagonal to be called a function of the spacing alone.
    pub fn flagged_lags(&self) -> Vec<usize> {
        self.spacing_cv
            .iter()
            .enumerate()
            .take(SPACING_CHECK_LAGS)
            .filter(|(_, cv)| **cv > SPACING_CV_LIMIT)
            .map(|(l, _)| l)
            .collect()
    }

    /// Oscillation period of the spacing curve in samples, if it has one.
    pub fn dominant_period(&self) -> Option<f64> {
        dominant_period(&self.spacing_curve)
    }

    pub fn write_matrix_csv<W: Write>(matrix: &Matrix, mut out: W) -> Result<()> {
        let header: Vec<String> = (0..matrix.cols()).map(|j| format!("p{j}")).collect();
        writeln!(out, "point,{}", header.join(","))?;
        for i in 0..matrix.rows() {
            let row: Vec<String> = matrix.row(i).iter().map(f64::to_string).collect();
            writeln!(out, "{i},{}", row.join(","))?;
        }
        Ok(())
    }

    /// `lag,cov,cv,flagged`
    pub fn write_spacing_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "lag,cov,cv,flagged")?;
        let flagged = self.flagged_lags();
        for (l, (c, cv)) in self.spacing_curve.iter().zip(&self.spacing_cv).enumerate() {
            writeln!(out, "{l},{c},{cv},{}", u8::from(flagged.contains(&l)))?;
        }
        Ok(())
    }
}

/// `COV_ij` over the replicas with divisor `B`.
pub fn ensemble_covariance(dist: &PredictiveDistribution) -> Result<CovarianceSummary> {
    let b = dist.b();
    if b < 2 {
        return Err(Error::Domain(format!("need at least 2 replicas, got {b}")));
    }
    let m = dist.horizon();
    let (_, centered) = center(&dist.replicas);
    let mut cov = Matrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let mut acc = 0.0;
            for r in 0..b {
                acc += centered[(r, i)] * centered[(r, j)];
            }
            let v = acc / b as f64;
            cov.row_mut(i)[j] = v;
            cov.row_mut(j)[i] = v;
        }
    }
    let mut normalized = Matrix::zeros(m, m);
    let mut degenerate_rows = Vec::new();
    for i in 0..m {
        let d = cov[(i, i)];
        if d > 0.0 {
            for j in 0..m {
                normalized.row_mut(i)[j] = cov[(i, j)] / d;
            }
        } else {
            degenerate_rows.push(i);
        }
    }
    let mut spacing_curve = Vec::with_capacity(m);
    let mut spacing_cv = Vec::with_capacity(m);
    for l in 0..m {
        let vals: Vec<f64> = (0..m - l).map(|i| cov[(i, i + l)]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = population_var(&vals).sqrt();
        spacing_curve.push(mean);
        spacing_cv.push(if mean != 0.0 { sd / mean.abs() } else if sd == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(CovarianceSummary { cov, normalized, degenerate_rows, spacing_curve, spacing_cv })
}

fn parabolic_vertex(c: &[f64], i: usize) -> f64 {
    let (a, b, d) = (c[i - 1], c[i], c[i + 1]);
    let denom = a - 2.0 * b + d;
    if denom == 0.0 {
        i as f64
    } else {
        i as f64 + 0.5 * (a - d) / denom
    }
}

/// Period of a decaying oscillation: position of the first maximum after the
/// first minimum, or twice the first minimum when no later maximum exists.
pub fn dominant_period(curve: &[f64]) -> Option<f64> {
    let n = curve.len();
    if n < 3 {
        return None;
    }
    let trough = (1..n - 1).find(|&i| curve[i] < curve[i - 1] && curve[i] <= curve[i + 1])?;
    match (trough + 1..n - 1).find(|&i| curve[i] > curve[i - 1] && curve[i] >= curve[i + 1]) {
        Some(peak) => Some(parabolic_vertex(curve, peak)),
        None => Some(2.0 * parabolic_vertex(curve, trough)),
    }
}

/// Fraction of (sample, horizon point) pairs whose true value lies inside the interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageReport {
    pub level: f64,
    pub pairs: usize,
    pub covered: usize,
}

impl CoverageReport {
    pub fn fraction(&self) -> f64 {
        self.covered as f64 / self.pairs as f64
    }
}

/// Replica seed used for the `index`-th evaluated sample.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn ci_coverage(checkpoint: &ModelCheckpoint, samples: &[WindowedSample], b: usize, level: f64, seed: u64) -> Result<CoverageReport> {
    if samples.is_empty() {
        return Err(Error::Data("coverage needs at least one test sample".into()));
    }
    let mut report = CoverageReport { level, pairs: 0, covered: 0 };
    for (k, s) in samples.iter().enumerate() {
        let dist = mc_predict(checkpoint, &s.x, b, sample_seed(seed, k), level)?;
        report.covered += count_covered(&dist, &s.y);
        report.pairs += s.y.len();
    }
    Ok(report)
}

/// Number of truth values inside `[ci_lower, ci_upper]`.
pub fn count_covered(dist: &PredictiveDistribution, truth: &[f64]) -> usize {
    truth
        .iter()
        .enumerate()
        .filter(|&(i, &y)| dist.ci_lower[i] <= y && y <= dist.ci_upper[i])
        .count()
}

/// Sample moments of one horizon point across replicas.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSummary {
    pub point: usize,
    pub b: usize,
    pub mean: f64,
    pub std: f64,
    /// `None` when the replicas have no spread.
    pub skewness: Option<f64>,
    pub excess_kurtosis: Option<f64>,
    /// `(lower edge, upper edge, count)`
    pub histogram: Vec<(f64, f64, usize)>,
}

impl MomentSummary {
    pub fn passes_screen(&self) -> bool {
        matches!((self.skewness, self.excess_kurtosis), (Some(s), Some(k)) if s.abs() < SKEW_BOUND && k.abs() < EXCESS_KURTOSIS_BOUND)
    }

    pub const CSV_HEADER: &'static str = "point,b,mean,std,skewness,excess_kurtosis";

    pub fn csv_row(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| x.to_string());
        format!("{},{},{},{},{},{}", self.point, self.b, self.mean, self.std, fmt(self.skewness), fmt(self.excess_kurtosis))
    }
}

/// Population moments of a set of values.
pub fn moments(values: &[f64], point: usize, bins: usize) -> MomentSummary {
    let n = values.len() as f64;
    let (means, centered) = center(&Matrix::from_vec(values.len(), 1, values.to_vec()).expect("column shape"));
    let mean = means[0];
    let dev = centered.as_slice();
    let m2 = dev.iter().map(|d| d.powi(2)).sum::<f64>() / n;
    let m3 = dev.iter().map(|d| d.powi(3)).sum::<f64>() / n;
    let m4 = dev.iter().map(|d| d.powi(4)).sum::<f64>() / n;
    let (skewness, excess_kurtosis) = if m2 > 0.0 { (Some(m3 / m2.powf(1.5)), Some(m4 / (m2 * m2) - 3.0)) } else { (None, None) };
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let histogram = if hi > lo {
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for v in values {
            let k = (((v - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        counts.into_iter().enumerate().map(|(k, c)| (lo + k as f64 * width, lo + (k + 1) as f64 * width, c)).collect()
    } else {
        vec![(lo, hi, values.len())]
    };
    MomentSummary { point, b: values.len(), mean, std: m2.sqrt(), skewness, excess_kurtosis, histogram }
}

pub fn gaussianity_report(dist: &PredictiveDistribution, point: usize, bins: usize) -> Result<MomentSummary> {
    if dist.b() < MIN_MOMENT_REPLICAS {
        return Err(Error::Domain(format!("moment diagnostics need at least {MIN_MOMENT_REPLICAS} replicas, got {}", dist.b())));
    }
    if point >= dist.horizon() {
        return Err(Error::Index(format!("horizon point {point} outside [0, {})", dist.horizon())));
    }
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    Ok(moments(&dist.replicas.column(point), point, bins))
}

/// Fraction of horizon points passing the moment screen.
pub fn normality_pass_fraction(dist: &PredictiveDistribution) -> Result<f64> {
    let mut pass = 0;
    for p in 0..dist.horizon() {
        pass += usize::from(gaussianity_report(dist, p, 1)?.passes_screen());
    }
    Ok(pass as f64 / dist.horizon() as f64)
}
