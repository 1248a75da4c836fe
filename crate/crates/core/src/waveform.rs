//! m-sequence sounding waveform.
//!
//! A Fibonacci LFSR produces the maximal-length binary sequence; bits are
//! mapped to bipolar chips (`0 -> +1`, `1 -> -1`) so the periodic
//! autocorrelation is exactly `L` at lag zero and `-1` elsewhere.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Register length used when nothing else is configured (L = 4095).
pub const DEFAULT_DEGREE: u32 = 12;

/// Default chip rate: one chip per 20 ns.
pub const DEFAULT_CHIP_RATE_HZ: f64 = 50.0e6;

/// Largest number of coherently averaged periods the correlator accepts.
pub const MAX_CORRELATOR_REPEATS: usize = 20;

const MIN_DEGREE: u32 = 2;
const MAX_DEGREE: u32 = 31;

/// Primitive feedback taps (register positions, 1-based) per degree.
pub fn default_taps(degree: u32) -> Option<&'static [u32]> {
    let taps: &'static [u32] = match degree {
        2 => &[2, 1],
        3 => &[3, 2],
        4 => &[4, 3],
        5 => &[5, 3],
        6 => &[6, 5],
        7 => &[7, 6],
        8 => &[8, 6, 5, 4],
        9 => &[9, 5],
        10 => &[10, 7],
        11 => &[11, 9],
        12 => &[12, 6, 4, 1],
        13 => &[13, 4, 3, 1],
        14 => &[14, 5, 3, 1],
        15 => &[15, 14],
        16 => &[16, 15, 13, 4],
        17 => &[17, 14],
        18 => &[18, 11],
        19 => &[19, 6, 2, 1],
        20 => &[20, 17],
        _ => return None,
    };
    Some(taps)
}

/// LFSR parameters of an m-sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MSequenceSpec {
    pub degree: u32,
    pub taps: Vec<u32>,
    pub seed: u32,
}

impl MSequenceSpec {
    pub fn new(degree: u32, taps: impl Into<Vec<u32>>, seed: u32) -> Self {
        Self {
            degree,
            taps: taps.into(),
            seed,
        }
    }

    /// Spec with the tabulated primitive taps for `degree` and seed 1.
    pub fn with_default_taps(degree: u32) -> Result<Self> {
        let taps = default_taps(degree).ok_or_else(|| {
            Error::InvalidSequence(format!("no default taps tabulated for degree {degree}"))
        })?;
        Ok(Self::new(degree, taps.to_vec(), 1))
    }

    /// Sequence period `2^degree - 1`.
    pub fn period(&self) -> usize {
        (1usize << self.degree) - 1
    }

    /// Checks degree, seed and tap ranges (not primitivity).
    pub fn validate(&self) -> Result<()> {
        if !(MIN_DEGREE..=MAX_DEGREE).contains(&self.degree) {
            return Err(Error::InvalidSequence(format!(
                "degree {} outside {MIN_DEGREE}..={MAX_DEGREE}",
                self.degree
            )));
        }
        if self.seed == 0 {
            return Err(Error::InvalidSequence("seed must be nonzero".into()));
        }
        if u64::from(self.seed) >> self.degree != 0 {
            return Err(Error::InvalidSequence(format!(
                "seed {:#x} does not fit a {}-bit register",
                self.seed, self.degree
            )));
        }
        if self.taps.is_empty() {
            return Err(Error::InvalidSequence("no feedback taps".into()));
        }
        if let Some(t) = self.taps.iter().find(|&&t| t == 0 || t > self.degree) {
            return Err(Error::InvalidSequence(format!(
                "tap {t} outside register positions 1..={}",
                self.degree
            )));
        }
        Ok(())
    }
}

impl Default for MSequenceSpec {
    fn default() -> Self {
        Self::with_default_taps(DEFAULT_DEGREE).expect("default degree is tabulated")
    }
}

/// Fibonacci shift register. Position `p` lives in bit `p - 1`; the output is
/// position `degree` and the feedback enters at position 1.
#[derive(Debug, Clone)]
struct Lfsr {
    state: u32,
    tap_mask: u32,
    reg_mask: u32,
    out_bit: u32,
}

impl Lfsr {
    fn new(spec: &MSequenceSpec) -> Self {
        let tap_mask = spec.taps.iter().fold(0u32, |m, &t| m | (1 << (t - 1)));
        let reg_mask = ((1u64 << spec.degree) - 1) as u32;
        Self {
            state: spec.seed,
            tap_mask,
            reg_mask,
            out_bit: spec.degree - 1,
        }
    }

    fn step(&mut self) -> u8 {
        let out = ((self.state >> self.out_bit) & 1) as u8;
        let fb = (self.state & self.tap_mask).count_ones() & 1;
        self.state = ((self.state << 1) | fb) & self.reg_mask;
        out
    }
}

/// One period of a validated m-sequence, stored as bipolar chips.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MSequence {
    spec: MSequenceSpec,
    chips: Vec<i8>,
}

impl MSequence {
    pub fn spec(&self) -> &MSequenceSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.chips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chips.is_empty()
    }

    /// Bipolar chips, each exactly `+1` or `-1`.
    pub fn chips(&self) -> &[i8] {
        &self.chips
    }

    pub fn to_real<T: Real>(&self) -> Vec<T> {
        self.chips.iter().map(|&c| T::lit(f64::from(c))).collect()
    }

    /// Periodic autocorrelation at every lag, in exact integer arithmetic.
    pub fn periodic_autocorrelation(&self) -> Vec<i64> {
        let n = self.chips.len();
        (0..n)
            .map(|lag| {
                (0..n)
                    .map(|i| i64::from(self.chips[i]) * i64::from(self.chips[(i + lag) % n]))
                    .sum()
            })
            .collect()
    }

    /// `count(+1) - count(-1)`.
    pub fn balance(&self) -> i64 {
        self.chips.iter().map(|&c| i64::from(c)).sum()
    }
}

/// Runs the LFSR for one full period and checks it is maximal.
pub fn generate_mseq(spec: &MSequenceSpec) -> Result<MSequence> {
    spec.validate()?;
    let period = spec.period();
    let mut lfsr = Lfsr::new(spec);
    let mut chips = Vec::with_capacity(period);
    for step in 1..=period {
        let bit = lfsr.step();
        chips.push(if bit == 0 { 1 } else { -1 });
        if lfsr.state == spec.seed && step < period {
            return Err(Error::InvalidSequence(format!(
                "taps {:?} are not primitive for degree {}: period {} < {}",
                spec.taps, spec.degree, step, period
            )));
        }
    }
    if lfsr.state != spec.seed {
        return Err(Error::InvalidSequence(format!(
            "taps {:?} are not primitive for degree {}: register does not return to its seed after {} steps",
            spec.taps, spec.degree, period
        )));
    }
    Ok(MSequence {
        spec: spec.clone(),
        chips,
    })
}

/// A transmit frame made of `repeats` back-to-back sequence periods.
#[derive(Debug, Clone, PartialEq)]
pub struct SoundingFrame<T> {
    pub spec: MSequenceSpec,
    /// One period of chips (±1, no pulse shaping).
    pub chips: Vec<T>,
    /// Seconds per chip.
    pub chip_duration: T,
    pub repeats: usize,
    pub samples_per_chip: usize,
}

impl<T: Real> SoundingFrame<T> {
    pub fn sequence_len(&self) -> usize {
        self.chips.len()
    }

    pub fn sample_count(&self) -> usize {
        self.chips.len() * self.repeats * self.samples_per_chip
    }

    pub fn sample_rate(&self) -> T {
        T::lit(self.samples_per_chip as f64) / self.chip_duration
    }

    /// Samples of one period (chips held for `samples_per_chip` samples).
    pub fn period_samples(&self) -> Vec<T> {
        self.chips
            .iter()
            .flat_map(|&c| std::iter::repeat_n(c, self.samples_per_chip))
            .collect()
    }

    pub fn samples(&self) -> Vec<T> {
        let period = self.period_samples();
        let mut out = Vec::with_capacity(self.sample_count());
        for _ in 0..self.repeats {
            out.extend_from_slice(&period);
        }
        out
    }

    /// Frame as complex baseband with amplitude `scale` on the I rail.
    pub fn to_iq(&self, scale: T) -> Vec<Complex<T>> {
        self.samples()
            .into_iter()
            .map(|s| Complex::new(s * scale, T::zero()))
            .collect()
    }
}

/// Builds a frame at the default 50 MHz chip rate.
pub fn build_frame<T: Real>(
    seq: &MSequence,
    repeats: usize,
    samples_per_chip: usize,
) -> Result<SoundingFrame<T>> {
    build_frame_at(seq, repeats, samples_per_chip, T::lit(DEFAULT_CHIP_RATE_HZ))
}

pub fn build_frame_at<T: Real>(
    seq: &MSequence,
    repeats: usize,
    samples_per_chip: usize,
    chip_rate_hz: T,
) -> Result<SoundingFrame<T>> {
    if repeats < 1 {
        return Err(Error::invalid("frame needs at least one repeat"));
    }
    if samples_per_chip < 1 {
        return Err(Error::invalid("samples_per_chip must be at least 1"));
    }
    if !(chip_rate_hz > T::zero()) {
        return Err(Error::invalid("chip rate must be positive"));
    }
    Ok(SoundingFrame {
        spec: seq.spec.clone(),
        chips: seq.to_real(),
        chip_duration: T::one() / chip_rate_hz,
        repeats,
        samples_per_chip,
    })
}

/// Known transmitted sequence as used by the receive correlator.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatorReference<T> {
    pub spec: MSequenceSpec,
    /// One period at the sample rate (chips held `samples_per_chip` times).
    pub period: Vec<T>,
    pub sequence_len: usize,
    pub samples_per_chip: usize,
    pub repeats: usize,
}

impl<T: Real> CorrelatorReference<T> {
    pub fn new(seq: &MSequence, repeats: usize, samples_per_chip: usize) -> Result<Self> {
        if !(1..=MAX_CORRELATOR_REPEATS).contains(&repeats) {
            return Err(Error::invalid(format!(
                "correlator repeats {repeats} outside 1..={MAX_CORRELATOR_REPEATS}"
            )));
        }
        let frame = build_frame::<T>(seq, 1, samples_per_chip)?;
        Ok(Self {
            spec: seq.spec.clone(),
            period: frame.period_samples(),
            sequence_len: seq.len(),
            samples_per_chip,
            repeats,
        })
    }

    /// Samples per sequence period.
    pub fn period_len(&self) -> usize {
        self.period.len()
    }

    /// The reference repeated `repeats` times back to back.
    pub fn repeated(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.period.len() * self.repeats);
        for _ in 0..self.repeats {
            out.extend_from_slice(&self.period);
        }
        out
    }

    pub fn processing_gain_db(&self) -> T {
        processing_gain_db(self.sequence_len, self.repeats)
    }
}

/// Reference for `repeats` coherently averaged periods at one sample per chip.
pub fn reference_correlator<T: Real>(
    seq: &MSequence,
    repeats: usize,
) -> Result<CorrelatorReference<T>> {
    CorrelatorReference::new(seq, repeats, 1)
}

/// `10·log10(L·R)`.
pub fn processing_gain_db<T: Real>(sequence_len: usize, repeats: usize) -> T {
    T::lit((sequence_len * repeats) as f64).to_db()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn default_seq() -> MSequence {
        generate_mseq(&MSequenceSpec::default()).unwrap()
    }

    #[test]
    fn degree_12_has_length_4095() {
        assert_eq!(default_seq().len(), 4095);
    }

    #[test]
    fn degree_2_hand_enumeration() {
        let seq = generate_mseq(&MSequenceSpec::new(2, vec![2, 1], 0b01)).unwrap();
        // Register 01 -> 11 -> 10 -> 01 emits bits 0, 1, 1.
        assert_eq!(seq.chips(), &[1, -1, -1]);
        assert_eq!(seq.periodic_autocorrelation(), vec![3, -1, -1]);
    }

    #[test]
    fn degree_12_is_balanced() {
        assert_eq!(default_seq().balance().abs(), 1);
    }

    #[test]
    fn every_tabulated_degree_is_maximal() {
        for degree in 2..=16 {
            let seq = generate_mseq(&MSequenceSpec::with_default_taps(degree).unwrap()).unwrap();
            assert_eq!(seq.len(), (1 << degree) - 1, "degree {degree}");
        }
    }

    #[test]
    fn rejects_zero_seed() {
        let err = generate_mseq(&MSequenceSpec::new(4, vec![4, 3], 0)).unwrap_err();
        assert!(err.to_string().contains("seed"));
    }

    #[test]
    fn rejects_non_primitive_taps() {
        // x^4 + x^2 + 1 is reducible; its longest cycle is 6.
        let err = generate_mseq(&MSequenceSpec::new(4, vec![4, 2], 1)).unwrap_err();
        assert!(err.to_string().contains("not primitive"), "{err}");
        // Without the top tap the register is not invertible.
        let err = generate_mseq(&MSequenceSpec::new(4, vec![3], 1)).unwrap_err();
        assert!(err.to_string().contains("not primitive"), "{err}");
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(generate_mseq(&MSequenceSpec::new(1, vec![1], 1)).is_err());
        assert!(generate_mseq(&MSequenceSpec::new(4, vec![5], 1)).is_err());
        assert!(generate_mseq(&MSequenceSpec::new(4, vec![4, 3], 16)).is_err());
        assert!(generate_mseq(&MSequenceSpec::new(4, vec![], 1)).is_err());
    }

    #[test]
    fn frame_sizes() {
        let seq = default_seq();
        assert_eq!(build_frame::<f64>(&seq, 8, 1).unwrap().sample_count(), 32_760);
        let snap = build_frame::<f64>(&seq, 20, 1).unwrap();
        assert_eq!(snap.sample_count(), 81_900);
        assert_eq!(snap.samples().len(), 81_900);
        assert!(build_frame::<f64>(&seq, 0, 1).is_err());
    }

    #[test]
    fn oversampled_frame_duplicates_chips() {
        let seq = generate_mseq(&MSequenceSpec::new(2, vec![2, 1], 1)).unwrap();
        let frame = build_frame::<f64>(&seq, 2, 2).unwrap();
        assert_eq!(frame.sample_count(), 12);
        assert_eq!(
            frame.samples(),
            vec![1.0, 1.0, -1.0, -1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0]
        );
        assert_abs_diff_eq!(frame.sample_rate(), 100e6, epsilon = 1e-3);
    }

    #[test]
    fn processing_gains() {
        let seq = default_seq();
        let gain = |r| reference_correlator::<f64>(&seq, r).unwrap().processing_gain_db();
        assert_abs_diff_eq!(gain(1), 36.12, epsilon = 0.005);
        assert_abs_diff_eq!(gain(4), 42.14, epsilon = 0.005);
        assert_abs_diff_eq!(gain(8), 45.15, epsilon = 0.005);
        assert!(reference_correlator::<f64>(&seq, 0).is_err());
        assert!(reference_correlator::<f64>(&seq, 21).is_err());
    }

    #[test]
    fn repeated_reference_peaks_every_period() {
        let seq = generate_mseq(&MSequenceSpec::with_default_taps(7).unwrap()).unwrap();
        let reference = reference_correlator::<f64>(&seq, 3).unwrap();
        let frame = reference.repeated();
        let period = &reference.period;
        let n = period.len();
        let peaks: Vec<usize> = (0..=frame.len() - n)
            .filter(|&lag| {
                let c: f64 = (0..n).map(|i| frame[lag + i] * period[i]).sum();
                c == n as f64
            })
            .collect();
        assert_eq!(peaks, vec![0, n, 2 * n]);
    }
}
