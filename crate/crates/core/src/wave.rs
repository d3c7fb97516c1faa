//! JONSWAP sea states: spectral density, random-phase synthesis of wave
//! elevation records, and Welch spectral estimation for checking them.

use std::f64::consts::PI;

use rand::Rng as _;
use rustfft::{num_complex::Complex64, FftPlanner};

use crate::error::{Error, Result};
use crate::record::{TimeSeriesRecord, ETA};
use crate::rng::{self, Purpose};

/// Peak-shape width below the peak frequency.
pub const TAU_BELOW_PEAK: f64 = 0.09;
/// Peak-shape width above the peak frequency.
pub const TAU_ABOVE_PEAK: f64 = 0.07;
pub const DEFAULT_GAMMA: f64 = 2.4;
/// Prototype sampling rate of 1.29 Hz.
pub const DEFAULT_DT: f64 = 0.775;
pub const DEFAULT_DURATION: f64 = 1800.0;
pub const DEFAULT_COMPONENTS: usize = 1024;
/// Default band edges as multiples of the peak frequency.
pub const DEFAULT_BAND: (f64, f64) = (0.4, 4.0);

/// Parameters that fully determine one irregular wave realization.
#[derive(Debug, Clone, PartialEq)]
pub struct SeaStateSpec {
    /// Significant wave height (m).
    pub hs: f64,
    /// Spectral peak period (s).
    pub tp: f64,
    pub gamma: f64,
    pub n_components: usize,
    /// Lower band edge (rad/s).
    pub omega_min: f64,
    /// Upper band edge (rad/s).
    pub omega_max: f64,
    pub seed: u64,
    pub dt: f64,
    pub duration: f64,
}

impl SeaStateSpec {
    /// A sea state with default discretization: band `[0.4 wp, 4 wp]`,
    /// 1024 components, 1.29 Hz sampling over 30 minutes.
    pub fn new(hs: f64, tp: f64) -> Self {
        let wp = 2.0 * PI / tp;
        Self {
            hs,
            tp,
            gamma: DEFAULT_GAMMA,
            n_components: DEFAULT_COMPONENTS,
            omega_min: DEFAULT_BAND.0 * wp,
            omega_max: DEFAULT_BAND.1 * wp,
            seed: 0,
            dt: DEFAULT_DT,
            duration: DEFAULT_DURATION,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_duration(mut self, duration: f64) -> Self {
        self.duration = duration;
        self
    }

    pub fn omega_p(&self) -> f64 {
        2.0 * PI / self.tp
    }

    /// Number of samples in a synthesized record, `floor(duration / dt)`.
    pub fn sample_count(&self) -> usize {
        sample_count(self.duration, self.dt)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("tp", self.tp)?;
        positive("gamma", self.gamma)?;
        positive("dt", self.dt)?;
        positive("duration", self.duration)?;
        // hs = 0 is accepted and yields a flat sea.
        if !(self.hs >= 0.0) || !self.hs.is_finite() {
            return Err(Error::Config(format!("hs must be non-negative and finite, got {}", self.hs)));
        }
        if self.n_components < 2 {
            return Err(Error::Config(format!("need at least 2 wave components, got {}", self.n_components)));
        }
        if !(self.omega_min > 0.0 && self.omega_min < self.omega_max) {
            return Err(Error::Config(format!(
                "frequency band must satisfy 0 < omega_min < omega_max, got [{}, {}]",
                self.omega_min, self.omega_max
            )));
        }
        let nyquist = PI / self.dt;
        if self.omega_max >= nyquist {
            return Err(Error::Config(format!(
                "omega_max {} rad/s is not below the Nyquist frequency {nyquist} rad/s",
                self.omega_max
            )));
        }
        let wp = self.omega_p();
        if wp < self.omega_min || wp > self.omega_max {
            return Err(Error::Config(format!(
                "peak frequency {wp} rad/s lies outside the band [{}, {}]",
                self.omega_min, self.omega_max
            )));
        }
        if self.sample_count() < 2 {
            return Err(Error::Config("duration shorter than two samples".into()));
        }
        Ok(())
    }
}

pub(crate) fn sample_count(duration: f64, dt: f64) -> usize {
    // Guard against 1799.9999... from inexact division.
    (duration / dt * (1.0 + 1e-12)).floor() as usize
}

/// A sampled spectral density curve.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumCurve {
    omegas: Vec<f64>,
    densities: Vec<f64>,
}

impl SpectrumCurve {
    pub fn new(omegas: Vec<f64>, densities: Vec<f64>) -> Result<Self> {
        if omegas.len() != densities.len() {
            return Err(Error::Data(format!(
                "spectrum has {} frequencies but {} densities",
                omegas.len(),
                densities.len()
            )));
        }
        if omegas.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Data("spectrum frequencies must be strictly increasing".into()));
        }
        if densities.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::Data("spectral densities must be non-negative".into()));
        }
        Ok(Self { omegas, densities })
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    /// Trapezoid integral over the whole grid.
    pub fn integral(&self) -> f64 {
        self.omegas
            .windows(2)
            .zip(self.densities.windows(2))
            .map(|(w, d)| 0.5 * (w[1] - w[0]) * (d[0] + d[1]))
            .sum()
    }

    /// Index of the largest density.
    pub fn peak_index(&self) -> usize {
        self.densities
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best })
            .0
    }

    pub fn peak_omega(&self) -> f64 {
        self.omegas[self.peak_index()]
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "omega,density")?;
        for (w, d) in self.omegas.iter().zip(&self.densities) {
            writeln!(out, "{w},{d}")?;
        }
        Ok(())
    }
}

/// A JONSWAP spectrum with its normalization constant resolved.
///
/// The scale factor is chosen so that the density integrates to `hs^2 / 16`
/// over the configured band.
#[derive(Debug, Clone)]
pub struct Jonswap {
    hs: f64,
    omega_p: f64,
    gamma: f64,
    alpha: f64,
}

impl Jonswap {
    pub fn from_spec(spec: &SeaStateSpec) -> Result<Self> {
        spec.validate()?;
        let omega_p = spec.omega_p();
        let shape = |w: f64| unscaled_shape(w, omega_p, spec.gamma);
        // The peak-width switch makes the curvature jump at omega_p, so integrate each side separately.
        let area = simpson(shape, spec.omega_min, omega_p, 4096) + simpson(shape, omega_p, spec.omega_max, 4096);
        Ok(Self { hs: spec.hs, omega_p, gamma: spec.gamma, alpha: 1.0 / (16.0 * area) })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn omega_p(&self) -> f64 {
        self.omega_p
    }

    pub fn density(&self, omega: f64) -> Result<f64> {
        if !(omega > 0.0) {
            return Err(Error::Domain(format!("spectral density needs omega > 0, got {omega}")));
        }
        Ok(self.alpha * self.hs * self.hs * unscaled_shape(omega, self.omega_p, self.gamma))
    }

    /// Evaluates the density on a grid; non-positive frequencies map to zero.
    pub fn curve(&self, omegas: &[f64]) -> Result<SpectrumCurve> {
        let densities = omegas.iter().map(|&w| self.density(w).unwrap_or(0.0)).collect();
        SpectrumCurve::new(omegas.to_vec(), densities)
    }
}

/// JONSWAP density `S(omega)` for a sea state (see [`Jonswap`]).
pub fn jonswap_density(spec: &SeaStateSpec, omega: f64) -> Result<f64> {
    if !(omega > 0.0) {
        return Err(Error::Domain(format!("spectral density needs omega > 0, got {omega}")));
    }
    Jonswap::from_spec(spec)?.density(omega)
}

fn unscaled_shape(omega: f64, omega_p: f64, gamma: f64) -> f64 {
    let tau = if omega > omega_p { TAU_ABOVE_PEAK } else { TAU_BELOW_PEAK };
    let r = omega / omega_p;
    let peak = (-(omega - omega_p).powi(2) / (2.0 * tau * tau * omega_p * omega_p)).exp();
    omega.powi(-5) * omega_p.powi(4) * (-1.25 * r.powi(-4)).exp() * gamma.powf(peak)
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for i in 1..n {
        let weight = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += weight * f(a + i as f64 * h);
    }
    sum * h / 3.0
}

/// Frequencies, amplitudes and phases of the sinusoidal components.
#[derive(Debug, Clone)]
pub struct WaveComponents {
    pub omegas: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub phases: Vec<f64>,
}

impl WaveComponents {
    pub fn from_spec(spec: &SeaStateSpec) -> Result<Self> {
        let spectrum = Jonswap::from_spec(spec)?;
        let n = spec.n_components;
        let d_omega = (spec.omega_max - spec.omega_min) / n as f64;
        let omegas: Vec<f64> = (0..n).map(|i| spec.omega_min + (i as f64 + 0.5) * d_omega).collect();
        let amplitudes = omegas
            .iter()
            .map(|&w| spectrum.density(w).map(|s| (2.0 * s * d_omega).sqrt()))
            .collect::<Result<Vec<_>>>()?;
        let mut rng = rng::stream(spec.seed, Purpose::WavePhases);
        let phases = (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        Ok(Self { omegas, amplitudes, phases })
    }

    /// Variance of the component sum, `sum(amplitude^2) / 2`.
    pub fn variance(&self) -> f64 {
        self.amplitudes.iter().map(|a| a * a / 2.0).sum()
    }

    pub fn elevation(&self, t: f64) -> f64 {
        self.omegas
            .iter()
            .zip(&self.amplitudes)
            .zip(&self.phases)
            .map(|((w, a), e)| a * (w * t + e).cos())
            .sum()
    }
}

/// Synthesizes the elevation record `eta(t) = sum zeta_i cos(omega_i t + eps_i)`
/// sampled at `dt` from `t = 0` for `floor(duration / dt)` samples.
pub fn synthesize_wave(spec: &SeaStateSpec) -> Result<TimeSeriesRecord> {
    let components = WaveComponents::from_spec(spec)?;
    let eta = (0..spec.sample_count()).map(|k| components.elevation(k as f64 * spec.dt)).collect();
    TimeSeriesRecord::new(format!("seed{}", spec.seed), 0.0, spec.dt)?.with_channel(ETA, eta)
}

/// Welch estimate of the one-sided spectral density of a channel, in units of
/// `channel^2 * s` per rad/s, so that its integral approximates the channel variance.
///
/// Segments are Hann-windowed and mean-removed; `overlap` is the fraction of
/// each segment shared with the next.
pub fn estimate_psd(record: &TimeSeriesRecord, channel: &str, segment_length: usize, overlap: f64) -> Result<SpectrumCurve> {
    let x = record.channel(channel)?;
    welch(x, record.dt, segment_length, overlap)
}

pub(crate) fn welch(x: &[f64], dt: f64, segment_length: usize, overlap: f64) -> Result<SpectrumCurve> {
    if segment_length < 4 || segment_length > x.len() {
        return Err(Error::Config(format!(
            "segment length {segment_length} must lie in [4, {}]",
            x.len()
        )));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Config(format!("overlap must lie in [0, 1), got {overlap}")));
    }
    let step = ((segment_length as f64) * (1.0 - overlap)).round() as usize;
    if step == 0 {
        return Err(Error::Config(format!("overlap {overlap} leaves no advance between segments")));
    }
    let segments = (x.len() - segment_length) / step + 1;
    let window: Vec<f64> = (0..segment_length)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / segment_length as f64).cos())
        .collect();
    let window_power: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(segment_length);
    let bins = segment_length / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut buf = vec![Complex64::new(0.0, 0.0); segment_length];
    for s in 0..segments {
        let seg = &x[s * step..s * step + segment_length];
        let mean = seg.iter().sum::<f64>() / segment_length as f64;
        for ((b, v), w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex64::new((v - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
    }
    let d_omega = 2.0 * PI / (segment_length as f64 * dt);
    // Two-sided density per Hz is dt |X|^2 / sum(w^2); fold to one side and convert to rad/s.
    let scale = dt / (window_power * segments as f64 * 2.0 * PI);
    let densities = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let one_sided = if k == 0 || (segment_length % 2 == 0 && k == bins - 1) { 1.0 } else { 2.0 };
            a * scale * one_sided
        })
        .collect();
    let omegas = (0..bins).map(|k| k as f64 * d_omega).collect();
    SpectrumCurve::new(omegas, densities)
}
