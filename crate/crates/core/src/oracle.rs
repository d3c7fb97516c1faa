//! Synthetic platform response: a one-degree-of-freedom heave oscillator
//! driven by the wave elevation. It stands in for basin measurements and is
//! the ground truth for training and evaluation.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex64, FftPlanner};

use crate::error::{Error, Result};
use crate::record::{TimeSeriesRecord, ETA, HEAVE};
use crate::wave::{synthesize_wave, SeaStateSpec};

/// Leading transient removed from every case, in seconds.
pub const DEFAULT_TRIM_SECONDS: f64 = 120.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseMode {
    /// Keep the complex transfer function (causal oscillator response).
    MinimumPhase,
    /// Use only its magnitude.
    ZeroPhase,
}

impl PhaseMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PhaseMode::MinimumPhase => "minimum-phase",
            PhaseMode::ZeroPhase => "zero-phase",
        }
    }
}

impl std::str::FromStr for PhaseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minimum-phase" => Ok(PhaseMode::MinimumPhase),
            "zero-phase" => Ok(PhaseMode::ZeroPhase),
            other => Err(Error::Config(format!("unknown phase mode '{other}' (minimum-phase | zero-phase)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSpec {
    /// Heave natural period (s).
    pub natural_period: f64,
    /// Fraction of critical damping.
    pub damping_ratio: f64,
    /// Low-frequency response amplitude ratio.
    pub rao_scale: f64,
    pub phase_mode: PhaseMode,
    /// Cubic stiffness coefficient; zero selects the linear frequency-domain path.
    pub nonlinearity: f64,
}

impl Default for OracleSpec {
    fn default() -> Self {
        Self {
            natural_period: 19.0,
            damping_ratio: 0.08,
            rao_scale: 0.6,
            phase_mode: PhaseMode::MinimumPhase,
            nonlinearity: 0.0,
        }
    }
}

impl OracleSpec {
    pub fn omega_n(&self) -> f64 {
        2.0 * PI / self.natural_period
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.natural_period > 0.0 && self.natural_period.is_finite()) {
            return Err(Error::Config(format!("natural_period must be positive, got {}", self.natural_period)));
        }
        if !(self.damping_ratio > 0.0 && self.damping_ratio < 1.0) {
            return Err(Error::Config(format!("damping_ratio must lie in (0, 1), got {}", self.damping_ratio)));
        }
        if !(self.rao_scale > 0.0 && self.rao_scale.is_finite()) {
            return Err(Error::Config(format!("rao_scale must be positive, got {}", self.rao_scale)));
        }
        if !(self.nonlinearity >= 0.0 && self.nonlinearity.is_finite()) {
            return Err(Error::Config(format!("nonlinearity must be non-negative, got {}", self.nonlinearity)));
        }
        Ok(())
    }

    /// `H(omega) = rao * wn^2 / (wn^2 - omega^2 + 2i zeta wn omega)`; negative
    /// frequencies give the complex conjugate.
    pub fn transfer(&self, omega: f64) -> Complex64 {
        let wn = self.omega_n();
        let h = Complex64::new(self.rao_scale * wn * wn, 0.0)
            / Complex64::new(wn * wn - omega * omega, 2.0 * self.damping_ratio * wn * omega);
        match self.phase_mode {
            PhaseMode::MinimumPhase => h,
            PhaseMode::ZeroPhase => Complex64::new(h.norm(), 0.0),
        }
    }
}

/// Adds a `heave` channel computed from the record's `eta` channel.
pub fn simulate_heave(wave: &TimeSeriesRecord, spec: &OracleSpec) -> Result<TimeSeriesRecord> {
    spec.validate()?;
    let eta = wave.channel(ETA)?;
    let heave = if spec.nonlinearity == 0.0 {
        linear_response(eta, wave.dt, spec)
    } else {
        duffing_response(eta, wave.dt, spec)?
    };
    let mut out = wave.clone();
    out.set_channel(HEAVE, heave)?;
    Ok(out)
}

fn linear_response(eta: &[f64], dt: f64, spec: &OracleSpec) -> Vec<f64> {
    let len = eta.len();
    // Twice the record keeps the oscillator's ringing from wrapping onto the head.
    let n = (2 * len).next_power_of_two();
    let mut buf: Vec<Complex64> = eta.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let d_omega = 2.0 * PI / (n as f64 * dt);
    for (k, b) in buf.iter_mut().enumerate() {
        let signed = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        *b *= spec.transfer(signed * d_omega);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.truncate(len);
    buf.into_iter().map(|c| c.re / n as f64).collect()
}

/// Fixed-step RK4 on `x'' + 2 zeta wn x' + wn^2 (x + c x^3) = wn^2 rao eta(t)`,
/// starting at rest, with `eta` linearly interpolated at half steps.
fn duffing_response(eta: &[f64], dt: f64, spec: &OracleSpec) -> Result<Vec<f64>> {
    let wn = spec.omega_n();
    let wn2 = wn * wn;
    let damping = 2.0 * spec.damping_ratio * wn;
    let c = spec.nonlinearity;
    let accel = |x: f64, v: f64, forcing: f64| -damping * v - wn2 * (x + c * x * x * x) + wn2 * spec.rao_scale * forcing;

    let mut out = Vec::with_capacity(eta.len());
    let (mut x, mut v) = (0.0f64, 0.0f64);
    out.push(x);
    for k in 0..eta.len() - 1 {
        let f0 = eta[k];
        let f1 = eta[k + 1];
        let fh = 0.5 * (f0 + f1);
        let (k1x, k1v) = (v, accel(x, v, f0));
        let (k2x, k2v) = (v + 0.5 * dt * k1v, accel(x + 0.5 * dt * k1x, v + 0.5 * dt * k1v, fh));
        let (k3x, k3v) = (v + 0.5 * dt * k2v, accel(x + 0.5 * dt * k2x, v + 0.5 * dt * k2v, fh));
        let (k4x, k4v) = (v + dt * k3v, accel(x + dt * k3x, v + dt * k3v, f1));
        x += dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        v += dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        if !x.is_finite() || !v.is_finite() {
            return Err(Error::Numeric(format!(
                "heave integration diverged at step {} (t = {})",
                k + 1,
                (k + 1) as f64 * dt
            )));
        }
        out.push(x);
    }
    Ok(out)
}

/// Synthesizes a wave, simulates heave and drops the leading `trim_seconds`
/// (rounded down to whole samples) from both channels.
pub fn make_case(sea: &SeaStateSpec, oracle: &OracleSpec, trim_seconds: f64) -> Result<TimeSeriesRecord> {
    if !(trim_seconds >= 0.0) || trim_seconds >= sea.duration {
        return Err(Error::Config(format!(
            "trim of {trim_seconds} s must be non-negative and shorter than the {} s record",
            sea.duration
        )));
    }
    let wave = synthesize_wave(sea)?;
    let mut case = simulate_heave(&wave, oracle)?;
    let trim = trim_samples(trim_seconds, sea.dt);
    if trim > 0 {
        case.trim_head(trim)?;
    }
    Ok(case)
}

pub fn trim_samples(trim_seconds: f64, dt: f64) -> usize {
    crate::wave::sample_count(trim_seconds, dt)
}
