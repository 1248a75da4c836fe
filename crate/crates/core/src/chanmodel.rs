//! Tapped-delay-line channel representation, path-loss reference models, and
//! application of a synthetic channel to a transmit frame.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::LinkGeometry;
use crate::scalar::{Real, SPEED_OF_LIGHT};

/// Thermal noise density at 290 K, dBm/Hz.
pub const THERMAL_NOISE_DBM_HZ: f64 = -174.0;

/// Taps closer than this (seconds) are merged by complex addition.
pub const TAP_MERGE_TOLERANCE_S: f64 = 1e-12;

pub fn wavelength<T: Real>(freq_hz: T) -> T {
    T::lit(SPEED_OF_LIGHT) / freq_hz
}

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelTap<T> {
    /// Linear amplitude gain.
    pub amplitude: T,
    /// Radians.
    pub phase: T,
    /// Seconds.
    pub delay: T,
}

impl<T: Real> ChannelTap<T> {
    pub fn new(amplitude: T, phase: T, delay: T) -> Self {
        Self {
            amplitude,
            phase,
            delay,
        }
    }

    pub fn from_complex(gain: Complex<T>, delay: T) -> Self {
        Self::new(gain.norm(), wrap_phase(gain.arg()), delay)
    }

    pub fn gain(&self) -> Complex<T> {
        Complex::from_polar(self.amplitude, self.phase)
    }

    pub fn power_db(&self) -> T {
        (self.amplitude * self.amplitude).to_db()
    }
}

fn wrap_phase<T: Real>(phase: T) -> T {
    let two_pi = T::lit(2.0 * PI);
    let w = phase % two_pi;
    if w < T::zero() {
        w + two_pi
    } else {
        w
    }
}

/// A delay-sorted set of taps at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization<T> {
    pub taps: Vec<ChannelTap<T>>,
    pub time_ns: i64,
}

impl<T: Real> ChannelRealization<T> {
    /// Validates, sorts by delay, and merges coincident taps.
    pub fn new(mut taps: Vec<ChannelTap<T>>, time_ns: i64) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::invalid("channel needs at least one tap"));
        }
        if let Some(t) = taps
            .iter()
            .find(|t| !(t.amplitude >= T::zero()) || !(t.delay >= T::zero()) || !t.phase.is_finite())
        {
            return Err(Error::invalid(format!(
                "tap with amplitude {} delay {} phase {} violates amplitude >= 0, delay >= 0",
                t.amplitude, t.delay, t.phase
            )));
        }
        taps.sort_by(|a, b| a.delay.cmp_finite(&b.delay));
        let tol = T::lit(TAP_MERGE_TOLERANCE_S);
        let mut merged: Vec<ChannelTap<T>> = Vec::with_capacity(taps.len());
        for tap in taps {
            match merged.last_mut() {
                Some(prev) if tap.delay - prev.delay <= tol => {
                    *prev = ChannelTap::from_complex(prev.gain() + tap.gain(), prev.delay);
                }
                _ => merged.push(tap),
            }
        }
        Ok(Self {
            taps: merged,
            time_ns,
        })
    }

    /// Sum of tap powers (linear).
    pub fn total_power(&self) -> T {
        self.taps.iter().map(|t| t.amplitude * t.amplitude).sum()
    }

    /// Channel loss implied by the total tap power, dB.
    pub fn path_loss_db(&self) -> T {
        -self.total_power().to_db()
    }

    /// Scales every tap by `db` (power).
    pub fn scale_db(&mut self, db: T) {
        let k = T::from_db(db).sqrt();
        for t in &mut self.taps {
            t.amplitude = t.amplitude * k;
        }
    }

    pub fn to_tap_table(&self) -> Vec<TapRecord> {
        self.taps
            .iter()
            .map(|t| TapRecord {
                delay_ns: t.delay.as_f64() * 1e9,
                gain_db: t.power_db().as_f64(),
                phase_rad: t.phase.as_f64(),
            })
            .collect()
    }

    pub fn from_tap_table(table: &[TapRecord], time_ns: i64) -> Result<Self> {
        let taps = table
            .iter()
            .map(|r| {
                ChannelTap::new(
                    T::from_db(T::lit(r.gain_db)).sqrt(),
                    T::lit(r.phase_rad),
                    T::lit(r.delay_ns * 1e-9),
                )
            })
            .collect();
        Self::new(taps, time_ns)
    }
}

/// Tap-table row for ground-truth files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TapRecord {
    pub delay_ns: f64,
    /// Power gain, dB.
    pub gain_db: f64,
    pub phase_rad: f64,
}

pub fn write_tap_table<T: Real>(path: &Path, realization: &ChannelRealization<T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &realization.to_tap_table())
        .map_err(|e| Error::malformed(path, e))
}

pub fn read_tap_table<T: Real>(path: &Path) -> Result<ChannelRealization<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let table: Vec<TapRecord> =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::malformed(path, e))?;
    ChannelRealization::from_tap_table(&table, 0).map_err(|e| Error::malformed(path, e))
}

/// Polarization used by the Fresnel ground-reflection option.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarization {
    Horizontal,
    Vertical,
}

/// Ground reflection coefficient: either fixed, or from ground electrical
/// properties via Fresnel's equations at the geometric grazing angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reflection<T> {
    Coefficient(Complex<T>),
    Fresnel {
        relative_permittivity: T,
        conductivity_s_per_m: T,
        polarization: Polarization,
    },
}

impl<T: Real> Default for Reflection<T> {
    fn default() -> Self {
        Reflection::Coefficient(Complex::new(-T::one(), T::zero()))
    }
}

impl<T: Real> Reflection<T> {
    /// Coefficient at `grazing_angle` (radians) for wavelength `lambda`.
    pub fn coefficient(&self, grazing_angle: T, lambda: T) -> Complex<T> {
        match *self {
            Reflection::Coefficient(g) => g,
            Reflection::Fresnel {
                relative_permittivity,
                conductivity_s_per_m,
                polarization,
            } => {
                let eps = Complex::new(
                    relative_permittivity,
                    -T::lit(60.0) * conductivity_s_per_m * lambda,
                );
                let (s, c) = grazing_angle.sin_cos();
                let root = (eps - Complex::new(c * c, T::zero())).sqrt();
                let s = Complex::new(s, T::zero());
                match polarization {
                    Polarization::Horizontal => (s - root) / (s + root),
                    Polarization::Vertical => (eps * s - root) / (eps * s + root),
                }
            }
        }
    }
}

/// Log-distance model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogDistanceParams<T> {
    /// Path-loss exponent.
    pub eta: T,
    /// Loss at the reference distance, dB.
    pub pl0_db: T,
    /// Reference distance, meters.
    pub d0: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathLossKind<T> {
    FreeSpace,
    FlatEarthTwoRay { reflection: Reflection<T> },
    LogDistance(LogDistanceParams<T>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLossModelParams<T> {
    pub kind: PathLossKind<T>,
    /// Carrier wavelength, meters.
    pub wavelength: T,
    /// Altitude of the reflecting ground plane; antenna heights are measured
    /// from it.
    pub ground_altitude: T,
}

impl<T: Real> PathLossModelParams<T> {
    pub fn new(kind: PathLossKind<T>, wavelength: T) -> Self {
        Self {
            kind,
            wavelength,
            ground_altitude: T::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength > T::zero()) {
            return Err(Error::invalid("wavelength must be positive"));
        }
        if let PathLossKind::LogDistance(p) = self.kind {
            if !(p.d0 > T::zero()) || !(p.eta > T::zero()) || !p.pl0_db.is_finite() {
                return Err(Error::invalid("log-distance model needs d0 > 0, eta > 0"));
            }
        }
        if let PathLossKind::FlatEarthTwoRay {
            reflection: Reflection::Coefficient(g),
        } = self.kind
        {
            if g.norm() > T::one() + T::lit(1e-12) {
                return Err(Error::invalid("reflection coefficient magnitude exceeds 1"));
            }
        }
        Ok(())
    }
}

/// Free-space loss `20·log10(4πd/λ)`, dB.
pub fn fspl<T: Real>(d: T, lambda: T) -> Result<T> {
    if !(d > T::zero()) || !(lambda > T::zero()) {
        return Err(Error::invalid(format!(
            "free-space loss needs d > 0 and lambda > 0 (got {d}, {lambda})"
        )));
    }
    Ok(T::lit(20.0) * (T::lit(4.0 * PI) * d / lambda).log10())
}

/// Direct and ground-reflected path lengths over a flat earth.
pub fn two_ray_lengths<T: Real>(d: T, h_t: T, h_r: T) -> (T, T) {
    ((d * d + (h_t - h_r).powi(2)).sqrt(), (d * d + (h_t + h_r).powi(2)).sqrt())
}

/// Flat-earth two-ray loss with complex ground reflection `gamma`, dB.
pub fn fe2r_pl<T: Real>(d: T, h_t: T, h_r: T, lambda: T, gamma: Complex<T>) -> Result<T> {
    if !(d > T::zero()) {
        return Err(Error::invalid(format!("two-ray loss needs d > 0 (got {d})")));
    }
    if !(h_t >= T::zero()) || !(h_r >= T::zero()) || !(lambda > T::zero()) {
        return Err(Error::invalid("two-ray loss needs h_t, h_r >= 0 and lambda > 0"));
    }
    let (l_d, l_r) = two_ray_lengths(d, h_t, h_r);
    let k = T::lit(2.0 * PI) / lambda;
    let direct = Complex::from_polar(T::one() / l_d, -k * l_d);
    let reflected = gamma * Complex::from_polar(T::one() / l_r, -k * l_r);
    let field = (direct + reflected).norm() * lambda / T::lit(4.0 * PI);
    Ok(-T::lit(20.0) * field.log10())
}

/// `PL₀ + 10·η·log10(d/d₀)`, dB.
pub fn log_distance_pl<T: Real>(d: T, params: &LogDistanceParams<T>) -> Result<T> {
    if !(d >= params.d0) {
        return Err(Error::invalid(format!(
            "log-distance loss needs d >= d0 (got {d} < {})",
            params.d0
        )));
    }
    Ok(params.pl0_db + T::lit(10.0) * params.eta * (d / params.d0).log10())
}

/// `tx_power - pl + tx_gain + rx_gain`, dBm.
pub fn received_power<T: Real>(tx_power_dbm: T, pl_db: T, tx_gain_dbi: T, rx_gain_dbi: T) -> T {
    tx_power_dbm - pl_db + tx_gain_dbi + rx_gain_dbi
}

fn path_phase<T: Real>(length: T, lambda: T) -> T {
    // Reduce the path length modulo one wavelength before scaling so the
    // phase stays accurate at kilometre ranges.
    let frac = (length % lambda) / lambda;
    wrap_phase(-T::lit(2.0 * PI) * frac)
}

/// Builds the deterministic channel for one link geometry.
///
/// Tap 0 is the direct path (delay `l_d/c`, gain from the chosen loss model).
/// The two-ray kind adds the ground reflection as tap 1 with gain
/// `|Γ|·λ/(4π·l_r)`. `extra_mpcs` carry absolute delays and are merged in.
pub fn synth_channel<T: Real>(
    geometry: &LinkGeometry<T>,
    params: &PathLossModelParams<T>,
    extra_mpcs: &[ChannelTap<T>],
) -> Result<ChannelRealization<T>> {
    params.validate()?;
    if !(geometry.distance > T::zero()) {
        return Err(Error::invalid("channel synthesis needs a nonzero link distance"));
    }
    let c = T::lit(SPEED_OF_LIGHT);
    let lambda = params.wavelength;
    let mut taps = Vec::with_capacity(2 + extra_mpcs.len());
    match params.kind {
        PathLossKind::FreeSpace => {
            let l_d = geometry.distance;
            let amp = T::from_db(-fspl(l_d, lambda)?).sqrt();
            taps.push(ChannelTap::new(amp, path_phase(l_d, lambda), l_d / c));
        }
        PathLossKind::LogDistance(p) => {
            let l_d = geometry.distance;
            let amp = T::from_db(-log_distance_pl(l_d, &p)?).sqrt();
            taps.push(ChannelTap::new(amp, path_phase(l_d, lambda), l_d / c));
        }
        PathLossKind::FlatEarthTwoRay { reflection } => {
            let h_t = (geometry.tx_alt - params.ground_altitude).max(T::zero());
            let h_r = (geometry.rx_alt - params.ground_altitude).max(T::zero());
            let d = geometry.ground_distance;
            let (l_d, l_r) = two_ray_lengths(d, h_t, h_r);
            let grazing = (h_t + h_r).atan2(d);
            let gamma = reflection.coefficient(grazing, lambda);
            let free = lambda / T::lit(4.0 * PI);
            taps.push(ChannelTap::new(free / l_d, path_phase(l_d, lambda), l_d / c));
            taps.push(ChannelTap::new(
                gamma.norm() * free / l_r,
                wrap_phase(path_phase(l_r, lambda) + gamma.arg()),
                l_r / c,
            ));
        }
    }
    taps.extend_from_slice(extra_mpcs);
    ChannelRealization::new(taps, geometry.time_ns)
}

/// Receiver-side impairments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpairmentSpec<T> {
    /// AWGN density in dBm/Hz; `None` disables noise.
    pub noise_psd_dbm_hz: Option<T>,
    /// Residual carrier frequency offset, Hz.
    pub cfo_hz: T,
    /// Extra cyclic delay applied to every tap, samples.
    pub timing_offset_samples: usize,
}

impl<T: Real> Default for ImpairmentSpec<T> {
    fn default() -> Self {
        Self {
            noise_psd_dbm_hz: None,
            cfo_hz: T::zero(),
            timing_offset_samples: 0,
        }
    }
}

impl<T: Real> ImpairmentSpec<T> {
    pub fn validate(&self, chip_rate_hz: T) -> Result<()> {
        if let Some(psd) = self.noise_psd_dbm_hz {
            if !psd.is_finite() {
                return Err(Error::invalid("noise density must be finite"));
            }
        }
        if !(self.cfo_hz.abs() < chip_rate_hz / T::lit(100.0)) {
            return Err(Error::invalid(format!(
                "residual CFO {} Hz not below chip rate / 100",
                self.cfo_hz
            )));
        }
        Ok(())
    }
}

/// Noise power per complex sample (mW) for a density over `bandwidth_hz`.
pub fn noise_power_mw<T: Real>(psd_dbm_hz: T, bandwidth_hz: T) -> T {
    T::from_db(psd_dbm_hz + bandwidth_hz.to_db())
}

/// Passes `frame` through `realization`.
///
/// The frame is one period of a continuously repeated transmission, so tap
/// delays (quantized to the nearest sample) wrap cyclically. Sample units are
/// √mW: a sample of magnitude 1 carries 0 dBm. CFO is applied as
/// `e^{j2π·cfo·n/fs}`, then complex AWGN is drawn from a ChaCha stream seeded
/// with `seed`.
pub fn apply_channel<T: Real>(
    frame: &[Complex<T>],
    realization: &ChannelRealization<T>,
    impairments: &ImpairmentSpec<T>,
    sample_rate: T,
    seed: u64,
) -> Result<Vec<Complex<T>>> {
    if !(sample_rate > T::zero()) {
        return Err(Error::invalid("sample rate must be positive"));
    }
    let n = frame.len();
    let mut out = vec![Complex::new(T::zero(), T::zero()); n];
    for tap in &realization.taps {
        let shift = (tap.delay * sample_rate).round().to_usize().unwrap_or(usize::MAX)
            .saturating_add(impairments.timing_offset_samples);
        if shift >= n {
            return Err(Error::OutOfRange(format!(
                "tap delay {} s ({shift} samples) exceeds the {n}-sample frame",
                tap.delay
            )));
        }
        let g = tap.gain();
        for (i, y) in out.iter_mut().enumerate() {
            *y = *y + g * frame[(i + n - shift) % n];
        }
    }

    if impairments.cfo_hz != T::zero() {
        let step = 2.0 * PI * impairments.cfo_hz.as_f64() / sample_rate.as_f64();
        for (i, y) in out.iter_mut().enumerate() {
            let (s, c) = (step * i as f64).sin_cos();
            *y = *y * Complex::new(T::lit(c), T::lit(s));
        }
    }

    if let Some(psd) = impairments.noise_psd_dbm_hz {
        let sigma = (noise_power_mw(psd, sample_rate) / T::lit(2.0)).sqrt().as_f64();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for y in out.iter_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *y = *y + Complex::new(T::lit(re * sigma), T::lit(im * sigma));
        }
    }
    Ok(out)
}
