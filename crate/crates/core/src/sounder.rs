//! Receive-side processing: trimming, frequency alignment, coherent
//! correlation against the known m-sequence, CIR extraction and PDP.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::waveform::CorrelatorReference;

/// Floor applied when converting zero power to dB.
const MIN_POWER_DB: f64 = -300.0;

/// One contiguous receive capture.
#[derive(Debug, Clone, PartialEq)]
pub struct IqSnapshot<T> {
    pub samples: Vec<Complex<T>>,
    pub sample_rate: T,
    pub center_freq: T,
    /// Timestamp of the first sample.
    pub time_ns: i64,
}

impl<T: Real> IqSnapshot<T> {
    pub fn new(samples: Vec<Complex<T>>, sample_rate: T, center_freq: T, time_ns: i64) -> Self {
        Self {
            samples,
            sample_rate,
            center_freq,
            time_ns,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    fn sample_time_ns(&self, n: usize) -> i64 {
        self.time_ns + (n as f64 * 1e9 / self.sample_rate.as_f64()).round() as i64
    }
}

/// Half-open measurement interval `[start_ns, end_ns)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start_ns: i64,
    pub end_ns: i64,
}

impl TimeWindow {
    pub fn contains(&self, t: i64) -> bool {
        t >= self.start_ns && t < self.end_ns
    }
}

/// Drops samples outside `window`, keeps whole sequence periods only, and
/// removes the DC offset.
pub fn preprocess<T: Real>(
    snapshot: &IqSnapshot<T>,
    window: TimeWindow,
    period_len: usize,
) -> Result<IqSnapshot<T>> {
    if period_len == 0 {
        return Err(Error::invalid("period length must be nonzero"));
    }
    if !snapshot.is_finite() {
        return Err(Error::invalid(format!(
            "snapshot at {} ns contains non-finite samples",
            snapshot.time_ns
        )));
    }
    let n = snapshot.len();
    let first = (0..n).find(|&i| window.contains(snapshot.sample_time_ns(i)));
    let Some(first) = first else {
        return Err(Error::OutOfRange(format!(
            "snapshot at {} ns does not overlap window [{}, {})",
            snapshot.time_ns, window.start_ns, window.end_ns
        )));
    };
    let last = (first..n)
        .take_while(|&i| window.contains(snapshot.sample_time_ns(i)))
        .last()
        .unwrap_or(first);
    let kept = last + 1 - first;
    let whole = kept / period_len * period_len;
    if whole == 0 {
        return Err(Error::OutOfRange(format!(
            "snapshot at {} ns keeps {kept} samples inside the window, less than one period",
            snapshot.time_ns
        )));
    }
    let mut samples = snapshot.samples[first..first + whole].to_vec();
    let scale = T::one() / T::lit(whole as f64);
    let mean = samples
        .iter()
        .fold(Complex::new(T::zero(), T::zero()), |acc, &z| acc + z)
        * scale;
    for z in &mut samples {
        *z = *z - mean;
    }
    Ok(IqSnapshot {
        samples,
        sample_rate: snapshot.sample_rate,
        center_freq: snapshot.center_freq,
        time_ns: snapshot.sample_time_ns(first),
    })
}

/// Multiplies by `e^{-j2π·cfo·n/fs}`.
pub fn derotate<T: Real>(snapshot: &IqSnapshot<T>, cfo_hz: T) -> IqSnapshot<T> {
    if cfo_hz == T::zero() {
        return snapshot.clone();
    }
    let step = -2.0 * PI * cfo_hz.as_f64() / snapshot.sample_rate.as_f64();
    let samples = snapshot
        .samples
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let (s, c) = (step * i as f64).sin_cos();
            z * Complex::new(T::lit(c), T::lit(s))
        })
        .collect();
    IqSnapshot {
        samples,
        ..snapshot.clone()
    }
}

/// Complex correlation over one period of lags.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationProfile<T> {
    /// Normalized so a unit tap at lag `k` yields `values[k] = 1`.
    pub values: Vec<Complex<T>>,
    pub sample_rate: T,
    pub repeats: usize,
    pub gain_db: T,
    pub time_ns: i64,
}

impl<T: Real> CorrelationProfile<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn powers(&self) -> Vec<T> {
        self.values.iter().map(|z| z.norm_sqr()).collect()
    }
}

/// Frequency-domain circular correlator for one reference period.
#[derive(Clone)]
pub struct Correlator<T: Real> {
    reference: CorrelatorReference<T>,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    reference_spectrum_conj: Vec<Complex<T>>,
}

impl<T: Real> std::fmt::Debug for Correlator<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Correlator")
            .field("period_len", &self.period_len())
            .field("repeats", &self.reference.repeats)
            .finish()
    }
}

impl<T: Real> Correlator<T> {
    pub fn new(reference: CorrelatorReference<T>) -> Self {
        let n = reference.period_len();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let mut spectrum: Vec<Complex<T>> = reference
            .period
            .iter()
            .map(|&r| Complex::new(r, T::zero()))
            .collect();
        forward.process(&mut spectrum);
        // Reference energy and the inverse FFT's factor of n fold into one scale.
        let energy: T = reference.period.iter().map(|&r| r * r).sum();
        let scale = T::one() / (energy * T::lit(n as f64));
        for z in &mut spectrum {
            *z = z.conj() * scale;
        }
        Self {
            reference,
            forward,
            inverse,
            reference_spectrum_conj: spectrum,
        }
    }

    pub fn reference(&self) -> &CorrelatorReference<T> {
        &self.reference
    }

    pub fn period_len(&self) -> usize {
        self.reference.period_len()
    }

    /// Circular correlation of one period-length block with the reference:
    /// `c[k] = Σ_m y[(m + k) mod L]·s[m] / Σ s²`.
    pub fn correlate_block(&self, block: &[Complex<T>]) -> Vec<Complex<T>> {
        debug_assert_eq!(block.len(), self.period_len());
        let mut buf = block.to_vec();
        self.forward.process(&mut buf);
        for (z, r) in buf.iter_mut().zip(&self.reference_spectrum_conj) {
            *z = *z * *r;
        }
        self.inverse.process(&mut buf);
        buf
    }

    /// Coherent average of the first `repeats` periods, then correlation.
    pub fn correlate(
        &self,
        snapshot: &IqSnapshot<T>,
        repeats: usize,
    ) -> Result<CorrelationProfile<T>> {
        let n = self.period_len();
        if repeats == 0 {
            return Err(Error::invalid("correlation needs at least one period"));
        }
        if snapshot.len() < n * repeats {
            return Err(Error::invalid(format!(
                "snapshot of {} samples shorter than {repeats} periods of {n}",
                snapshot.len()
            )));
        }
        let mut acc = vec![Complex::new(T::zero(), T::zero()); n];
        for r in 0..repeats {
            for (a, &y) in acc.iter_mut().zip(&snapshot.samples[r * n..(r + 1) * n]) {
                *a = *a + y;
            }
        }
        let inv = T::one() / T::lit(repeats as f64);
        for a in &mut acc {
            *a = *a * inv;
        }
        Ok(CorrelationProfile {
            values: self.correlate_block(&acc),
            sample_rate: snapshot.sample_rate,
            repeats,
            gain_db: crate::waveform::processing_gain_db(self.reference.sequence_len, repeats),
            time_ns: snapshot.time_ns,
        })
    }
}

/// See [`Correlator::correlate`].
pub fn correlate<T: Real>(
    snapshot: &IqSnapshot<T>,
    reference: &CorrelatorReference<T>,
    repeats: usize,
) -> Result<CorrelationProfile<T>> {
    Correlator::new(reference.clone()).correlate(snapshot, repeats)
}

fn median<T: Real>(values: &[T]) -> T {
    let mut v = values.to_vec();
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, |a, b| a.cmp_finite(b));
    *m
}

fn power_to_db<T: Real>(p: T) -> T {
    if p > T::zero() {
        p.to_db()
    } else {
        T::lit(MIN_POWER_DB)
    }
}

/// Residual CFO from the mean phase rotation of the correlation peak between
/// successive periods. Unambiguous within `±1/(2·T_period)`.
pub fn estimate_cfo<T: Real>(
    correlator: &Correlator<T>,
    snapshot: &IqSnapshot<T>,
    detection_db: T,
) -> Result<T> {
    let n = correlator.period_len();
    let periods = snapshot.len() / n;
    if periods < 2 {
        return Err(Error::invalid(format!(
            "CFO estimation needs two periods, snapshot holds {periods}"
        )));
    }
    let blocks: Vec<Vec<Complex<T>>> = (0..periods)
        .map(|p| correlator.correlate_block(&snapshot.samples[p * n..(p + 1) * n]))
        .collect();
    let mut energy = vec![T::zero(); n];
    for b in &blocks {
        for (e, z) in energy.iter_mut().zip(b) {
            *e = *e + z.norm_sqr();
        }
    }
    let (peak, &peak_energy) = energy
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp_finite(b.1))
        .expect("nonempty profile");
    let floor = median(&energy);
    if !(peak_energy > floor * T::from_db(detection_db)) || !(peak_energy > T::zero()) {
        return Err(Error::NoSignal(format!(
            "no correlation peak {detection_db} dB above the noise floor for CFO estimation"
        )));
    }
    let rotation = blocks
        .windows(2)
        .fold(Complex::new(T::zero(), T::zero()), |acc, w| {
            acc + w[1][peak] * w[0][peak].conj()
        });
    let period_s = T::lit(n as f64) / snapshot.sample_rate;
    Ok(rotation.arg() / (T::lit(2.0 * PI) * period_s))
}

/// Extraction thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirConfig<T> {
    /// MPCs weaker than the DPC by more than this are discarded.
    pub threshold_db: T,
    /// MPCs must also clear the noise floor by this margin.
    pub noise_guard_db: T,
    /// The DPC must clear the noise floor by this margin.
    pub detection_db: T,
    /// DPC is the earliest peak within this margin of the strongest one.
    pub dpc_window_db: T,
}

impl<T: Real> Default for CirConfig<T> {
    fn default() -> Self {
        Self {
            threshold_db: T::lit(20.0),
            noise_guard_db: T::lit(6.0),
            detection_db: T::lit(13.0),
            dpc_window_db: T::lit(3.0),
        }
    }
}

/// Absolute calibration for converting correlator power to path gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget<T> {
    pub tx_power_dbm: T,
    /// TX + RX antenna gain toward each other, dB.
    pub antenna_correction_db: T,
}

impl<T: Real> Default for LinkBudget<T> {
    fn default() -> Self {
        Self {
            tx_power_dbm: T::zero(),
            antenna_correction_db: T::zero(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CirTap<T> {
    /// Profile lag (absolute, modulo one period).
    pub lag: usize,
    /// Delay after the DPC, seconds.
    pub delay: T,
    pub gain: Complex<T>,
    /// `10·log10|gain|²`, i.e. received power in dBm for √mW samples.
    pub power_db: T,
    /// Power relative to the DPC.
    pub rel_power_db: T,
    /// Channel gain after removing TX power and antenna gains.
    pub abs_gain_db: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CirEstimate<T> {
    pub time_ns: i64,
    /// Sorted by delay; the DPC sits at `dpc_index`.
    pub taps: Vec<CirTap<T>>,
    pub dpc_index: usize,
    /// Median correlator power, dB.
    pub noise_floor_db: T,
    pub correlation_gain_db: T,
    pub budget: LinkBudget<T>,
    pub profile_len: usize,
    pub sample_rate: T,
}

impl<T: Real> CirEstimate<T> {
    pub fn dpc(&self) -> &CirTap<T> {
        &self.taps[self.dpc_index]
    }

    /// Sum of retained tap powers (linear).
    pub fn total_power(&self) -> T {
        self.taps.iter().map(|t| t.gain.norm_sqr()).sum()
    }
}

fn is_local_max<T: Real>(p: &[T], k: usize) -> bool {
    let n = p.len();
    if n == 1 {
        return true;
    }
    let prev = p[(k + n - 1) % n];
    let next = p[(k + 1) % n];
    p[k] > prev && p[k] >= next
}

/// Signed cyclic offset of `k` from `origin` in `(-n/2, n/2]`.
fn signed_offset(k: usize, origin: usize, n: usize) -> i64 {
    let d = ((k + n - origin) % n) as i64;
    if d > (n / 2) as i64 {
        d - n as i64
    } else {
        d
    }
}

/// Locates the DPC and keeps the peaks that satisfy both the relative
/// threshold and the noise guard.
pub fn extract_cir<T: Real>(
    profile: &CorrelationProfile<T>,
    config: &CirConfig<T>,
    budget: &LinkBudget<T>,
) -> Result<CirEstimate<T>> {
    let n = profile.len();
    if n == 0 {
        return Err(Error::invalid("empty correlation profile"));
    }
    let p = profile.powers();
    let floor = median(&p);
    let (kmax, &pmax) = p
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp_finite(b.1))
        .expect("nonempty");
    if !(pmax > T::zero()) || !(pmax > floor * T::from_db(config.detection_db)) {
        return Err(Error::NoSignal(format!(
            "strongest peak {:.1} dB is not {} dB above the noise floor {:.1} dB",
            power_to_db(pmax),
            config.detection_db,
            power_to_db(floor)
        )));
    }

    let peaks: Vec<usize> = (0..n).filter(|&k| is_local_max(&p, k)).collect();
    let dpc_floor = pmax * T::from_db(-config.dpc_window_db);
    let dpc_lag = peaks
        .iter()
        .copied()
        .filter(|&k| p[k] >= dpc_floor)
        .min_by_key(|&k| signed_offset(k, kmax, n))
        .unwrap_or(kmax);
    let p_dpc = p[dpc_lag];

    let rel_floor = p_dpc * T::from_db(-config.threshold_db);
    let noise_floor = floor * T::from_db(config.noise_guard_db);
    let mut lags: Vec<usize> = peaks
        .into_iter()
        .filter(|&k| k == dpc_lag || (p[k] >= rel_floor && p[k] >= noise_floor))
        .collect();
    lags.sort_by_key(|&k| (k + n - dpc_lag) % n);

    let dpc_db = power_to_db(p_dpc);
    let taps = lags
        .into_iter()
        .map(|k| {
            let power_db = power_to_db(p[k]);
            let offset = (k + n - dpc_lag) % n;
            CirTap {
                lag: k,
                delay: T::lit(offset as f64) / profile.sample_rate,
                gain: profile.values[k],
                power_db,
                rel_power_db: power_db - dpc_db,
                abs_gain_db: power_db - budget.antenna_correction_db - budget.tx_power_dbm,
            }
        })
        .collect();

    Ok(CirEstimate {
        time_ns: profile.time_ns,
        taps,
        dpc_index: 0,
        noise_floor_db: power_to_db(floor),
        correlation_gain_db: profile.gain_db,
        budget: *budget,
        profile_len: n,
        sample_rate: profile.sample_rate,
    })
}

/// Instantaneous power delay profile, delay-referenced to the DPC.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerDelayProfile<T> {
    /// Bin delays, seconds; spacing `1/sample_rate`.
    pub delays: Vec<T>,
    /// Power per bin, dB.
    pub power_db: Vec<T>,
    pub time_ns: i64,
}

impl<T: Real> PowerDelayProfile<T> {
    /// Full profile rotated so the DPC lag lands in bin 0.
    pub fn from_profile(profile: &CorrelationProfile<T>, dpc_lag: usize) -> Self {
        let n = profile.len();
        let p = profile.powers();
        let bins = 0..n;
        Self {
            delays: bins
                .clone()
                .map(|b| T::lit(b as f64) / profile.sample_rate)
                .collect(),
            power_db: bins.map(|b| power_to_db(p[(b + dpc_lag) % n])).collect(),
            time_ns: profile.time_ns,
        }
    }
}

/// PDP from an extracted CIR: retained taps at their bins, the noise floor
/// elsewhere.
pub fn compute_pdp<T: Real>(cir: &CirEstimate<T>) -> PowerDelayProfile<T> {
    let n = cir.profile_len.max(1);
    let mut power_db = vec![cir.noise_floor_db; n];
    let dpc_lag = cir.dpc().lag;
    for t in &cir.taps {
        power_db[(t.lag + n - dpc_lag) % n] = t.power_db;
    }
    PowerDelayProfile {
        delays: (0..n).map(|b| T::lit(b as f64) / cir.sample_rate).collect(),
        power_db,
        time_ns: cir.time_ns,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chanmodel::{apply_channel, ChannelRealization, ChannelTap, ImpairmentSpec};
    use crate::waveform::{build_frame, generate_mseq, reference_correlator, MSequenceSpec};
    use approx::assert_abs_diff_eq;

    const FS: f64 = 50e6;

    fn reference(repeats: usize) -> CorrelatorReference<f64> {
        let seq = generate_mseq(&MSequenceSpec::default()).unwrap();
        reference_correlator(&seq, repeats).unwrap()
    }

    fn frame(periods: usize) -> Vec<Complex<f64>> {
        let seq = generate_mseq(&MSequenceSpec::default()).unwrap();
        build_frame::<f64>(&seq, periods, 1).unwrap().to_iq(1.0)
    }

    fn channel(taps: &[(f64, f64)]) -> ChannelRealization<f64> {
        ChannelRealization::new(
            taps.iter()
                .map(|&(db, ns)| ChannelTap::new(10f64.powf(db / 20.0), 0.0, ns * 1e-9))
                .collect(),
            0,
        )
        .unwrap()
    }

    fn snapshot(ch: &ChannelRealization<f64>, imp: &ImpairmentSpec<f64>, seed: u64) -> IqSnapshot<f64> {
        let rx = apply_channel(&frame(20), ch, imp, FS, seed).unwrap();
        IqSnapshot::new(rx, FS, 3.5e9, 0)
    }

    /// Noise density giving `snr_db` per sample for the given total tap power.
    fn psd_for_snr(ch: &ChannelRealization<f64>, snr_db: f64) -> f64 {
        ch.total_power().to_db() - snr_db - FS.to_db()
    }

    #[test]
    fn preprocess_full_window_keeps_length() {
        let s = IqSnapshot::new(frame(20), FS, 3.5e9, 1_000);
        let w = TimeWindow { start_ns: 0, end_ns: 1_000_000_000 };
        let out = preprocess(&s, w, 4095).unwrap();
        assert_eq!(out.len(), 81_900);
    }

    #[test]
    fn preprocess_removes_dc() {
        let s = IqSnapshot::new(vec![Complex::new(2.5, -1.0); 8190], FS, 3.5e9, 0);
        let w = TimeWindow { start_ns: 0, end_ns: i64::MAX };
        let out = preprocess(&s, w, 4095).unwrap();
        assert!(out.samples.iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn preprocess_truncates_to_whole_periods() {
        // 81,900 samples span 1,638,000 ns; cut the window at 1,000,000 ns,
        // i.e. after 50,000 samples -> 12 whole periods (49,140 samples).
        let s = IqSnapshot::new(frame(20), FS, 3.5e9, 0);
        let w = TimeWindow { start_ns: 0, end_ns: 1_000_000 };
        assert_eq!(preprocess(&s, w, 4095).unwrap().len(), 12 * 4095);
        // Window starting mid-snapshot.
        let w = TimeWindow { start_ns: 1_000_000, end_ns: i64::MAX };
        let out = preprocess(&s, w, 4095).unwrap();
        assert_eq!(out.len(), 7 * 4095);
        assert_eq!(out.time_ns, 1_000_000);
        let outside = TimeWindow { start_ns: 10_000_000, end_ns: 20_000_000 };
        assert!(preprocess(&s, outside, 4095).is_err());
    }

    #[test]
    fn identity_channel_peak_to_sidelobe() {
        let s = IqSnapshot::new(frame(8), FS, 3.5e9, 0);
        let prof = correlate(&s, &reference(8), 8).unwrap();
        let p = prof.powers();
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-9);
        let side = p[1..].iter().cloned().fold(0.0, f64::max);
        assert_abs_diff_eq!((p[0] / side).to_db(), 72.245, epsilon = 0.01);
    }

    #[test]
    fn two_tap_peaks() {
        let ch = channel(&[(0.0, 0.0), (-6.0, 100.0)]);
        let prof = correlate(&snapshot(&ch, &ImpairmentSpec::default(), 0), &reference(8), 8).unwrap();
        let p = prof.powers();
        assert_abs_diff_eq!((p[0] / p[5]).to_db(), 6.0, epsilon = 0.2);
        let cir = extract_cir(&prof, &CirConfig::default(), &LinkBudget::default()).unwrap();
        assert_eq!(cir.taps.iter().map(|t| t.lag).collect::<Vec<_>>(), vec![0, 5]);
    }

    #[test]
    fn equal_taps_give_equal_peaks() {
        let ch = channel(&[(0.0, 0.0), (0.0, 200.0)]);
        let prof = correlate(&snapshot(&ch, &ImpairmentSpec::default(), 0), &reference(8), 8).unwrap();
        let p = prof.powers();
        assert_abs_diff_eq!((p[0] / p[10]).to_db(), 0.0, epsilon = 0.2);
        // Equal strength: the earlier one is the DPC.
        let cir = extract_cir(&prof, &CirConfig::default(), &LinkBudget::default()).unwrap();
        assert_eq!(cir.dpc().lag, 0);
    }

    #[test]
    fn awgn_only_stays_below_guard() {
        let zero = vec![Complex::new(0.0, 0.0); 81_900];
        let ch = channel(&[(0.0, 0.0)]);
        let corr = Correlator::new(reference(8));
        for seed in 0..20 {
            let imp = ImpairmentSpec { noise_psd_dbm_hz: Some(-150.0), ..Default::default() };
            let rx = apply_channel(&zero, &ch, &imp, FS, seed).unwrap();
            let prof = corr.correlate(&IqSnapshot::new(rx, FS, 3.5e9, 0), 8).unwrap();
            let p = prof.powers();
            let floor = median(&p);
            let max = p.iter().cloned().fold(0.0, f64::max);
            assert!((max / floor).to_db() < 13.0, "seed {seed}: {}", (max / floor).to_db());
            assert!(matches!(
                extract_cir(&prof, &CirConfig::default(), &LinkBudget::default()),
                Err(Error::NoSignal(_))
            ));
        }
    }

    #[test]
    fn threshold_rule() {
        let ch = channel(&[(0.0, 0.0), (-6.0, 100.0), (-15.0, 400.0), (-25.0, 1000.0)]);
        let prof = correlate(&snapshot(&ch, &ImpairmentSpec::default(), 0), &reference(8), 8).unwrap();
        let cir = extract_cir(&prof, &CirConfig::default(), &LinkBudget::default()).unwrap();
        assert_eq!(cir.taps.len(), 3);
        let relaxed = CirConfig { threshold_db: 30.0, ..CirConfig::default() };
        let cir = extract_cir(&prof, &relaxed, &LinkBudget::default()).unwrap();
        assert_eq!(cir.taps.len(), 4);
        assert_abs_diff_eq!(cir.taps[3].rel_power_db, -25.0, epsilon = 0.1);
        assert_abs_diff_eq!(cir.taps[3].delay, 1e-6, epsilon = 1e-15);
    }

    #[test]
    fn single_tap_loopback() {
        let ch = channel(&[(0.0, 260.0)]);
        let prof = correlate(&snapshot(&ch, &ImpairmentSpec::default(), 0), &reference(8), 8).unwrap();
        let cir = extract_cir(&prof, &CirConfig::default(), &LinkBudget::default()).unwrap();
        assert_eq!(cir.taps.len(), 1);
        assert_eq!(cir.taps[0].lag, 13);
        assert_eq!(cir.taps[0].delay, 0.0);
    }

    #[test]
    fn dpc_found_across_wraparound() {
        // Direct path just before the period boundary, a stronger-by-2 dB
        // reflection after it.
        let ch = channel(&[(-2.0, 0.0), (0.0, 140.0)]);
        let imp = ImpairmentSpec { timing_offset_samples: 4090, ..Default::default() };
        let prof = correlate(&snapshot(&ch, &imp, 0), &reference(8), 8).unwrap();
        let cir = extract_cir(&prof, &CirConfig::default(), &LinkBudget::default()).unwrap();
        assert_eq!(cir.dpc().lag, 4090);
        assert_eq!(cir.taps.len(), 2);
        assert_eq!(cir.taps[1].lag, (4090 + 7) % 4095);
        assert_abs_diff_eq!(cir.taps[1].delay, 140e-9, epsilon = 1e-15);
        assert_abs_diff_eq!(cir.taps[1].rel_power_db, 2.0, epsilon = 0.01);
    }

    #[test]
    fn absolute_gain_uses_budget() {
        let ch = channel(&[(-80.0, 0.0)]);
        let tx_dbm = 30.0;
        let sig = {
            let seq = generate_mseq(&MSequenceSpec::default()).unwrap();
            build_frame::<f64>(&seq, 20, 1).unwrap().to_iq(10f64.powf(tx_dbm / 20.0))
        };
        let rx = apply_channel(&sig, &ch, &ImpairmentSpec::default(), FS, 0).unwrap();
        let prof = correlate(&IqSnapshot::new(rx, FS, 3.5e9, 0), &reference(8), 8).unwrap();
        let budget = LinkBudget { tx_power_dbm: tx_dbm, antenna_correction_db: 4.0 };
        let cir = extract_cir(&prof, &CirConfig::default(), &budget).unwrap();
        assert_abs_diff_eq!(cir.taps[0].power_db, -50.0, epsilon = 1e-6);
        assert_abs_diff_eq!(cir.taps[0].abs_gain_db, -84.0, epsilon = 1e-6);
    }

    #[test]
    fn cfo_estimates() {
        let ch = channel(&[(0.0, 0.0), (-6.0, 100.0)]);
        let corr = Correlator::new(reference(8));
        let psd = psd_for_snr(&ch, 20.0);
        for (cfo, expected, tol) in [(0.0, 0.0, 0.1), (100.0, 100.0, 1.0), (7000.0, -5210.0, 1.0)] {
            let imp = ImpairmentSpec { noise_psd_dbm_hz: Some(psd), cfo_hz: cfo, timing_offset_samples: 0 };
            let s = snapshot(&ch, &imp, 11);
            let est = estimate_cfo(&corr, &s, 13.0).unwrap();
            assert_abs_diff_eq!(est, expected, epsilon = tol);
        }
    }

    #[test]
    fn cfo_needs_two_periods_and_signal() {
        let corr = Correlator::new(reference(1));
        let one = IqSnapshot::new(frame(1), FS, 3.5e9, 0);
        assert!(estimate_cfo(&corr, &one, 13.0).is_err());
        let silent = IqSnapshot::new(vec![Complex::new(0.0, 0.0); 8190], FS, 3.5e9, 0);
        assert!(matches!(estimate_cfo(&corr, &silent, 13.0), Err(Error::NoSignal(_))));
    }

    #[test]
    fn derotation() {
        let s = IqSnapshot::new(frame(2), FS, 3.5e9, 0);
        assert_eq!(derotate(&s, 0.0), s);
        let ch = channel(&[(0.0, 0.0)]);
        let imp = ImpairmentSpec { cfo_hz: 100.0, ..Default::default() };
        let rotated = IqSnapshot::new(apply_channel(&s.samples, &ch, &imp, FS, 0).unwrap(), FS, 3.5e9, 0);
        let back = derotate(&rotated, 100.0);
        for (a, b) in back.samples.iter().zip(&s.samples) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn residual_cfo_after_alignment_is_below_1_hz() {
        let ch = channel(&[(0.0, 0.0), (-6.0, 100.0)]);
        let corr = Correlator::new(reference(8));
        let imp = ImpairmentSpec { noise_psd_dbm_hz: Some(psd_for_snr(&ch, 20.0)), cfo_hz: 100.0, timing_offset_samples: 0 };
        let s = snapshot(&ch, &imp, 3);
        let aligned = derotate(&s, estimate_cfo(&corr, &s, 13.0).unwrap());
        let residual = estimate_cfo(&corr, &aligned, 13.0).unwrap();
        assert!(residual.abs() < 1.0, "residual {residual}");
    }

    #[test]
    fn pdp_views_agree() {
        let ch = channel(&[(0.0, 0.0), (-6.0, 100.0)]);
        let imp = ImpairmentSpec { timing_offset_samples: 17, ..Default::default() };
        let prof = correlate(&snapshot(&ch, &imp, 0), &reference(8), 8).unwrap();
        let cir = extract_cir(&prof, &CirConfig::default(), &LinkBudget::default()).unwrap();
        let from_cir = compute_pdp(&cir);
        let full = PowerDelayProfile::from_profile(&prof, cir.dpc().lag);
        // Off-peak correlation of the other tap shifts each peak by ~1/L.
        assert_abs_diff_eq!(full.power_db[0], 0.0, epsilon = 0.01);
        assert_eq!(from_cir.delays.len(), 4095);
        assert_abs_diff_eq!(from_cir.delays[1] - from_cir.delays[0], 20e-9, epsilon = 1e-18);
        for t in &cir.taps {
            let bin = (t.delay * FS).round() as usize;
            assert_eq!(from_cir.power_db[bin], t.power_db);
            assert_eq!(full.power_db[bin], t.power_db);
        }
        assert!(full.power_db.iter().all(|p| p.is_finite()));
    }
}
