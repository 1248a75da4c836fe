//! Compares a processed record against the channel that was injected.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::{delay_moments, PowerMode};
use crate::sounder::{extract_cir, CirEstimate, CorrelationProfile, LinkBudget};

use super::process::{process_campaign, CirLine, ProcessConfig, ResultRow};
use super::record::{MeasurementRecord, TruthRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayTolerances {
    /// Allowed tap delay error, bins.
    pub delay_bins: usize,
    pub rel_power_db: f64,
    pub path_loss_db: f64,
    pub sigma_tau_ns: f64,
    /// Relative σ_τ tolerance; the larger of the two applies.
    pub sigma_tau_rel: f64,
}

impl Default for ReplayTolerances {
    fn default() -> Self {
        Self {
            delay_bins: 0,
            rel_power_db: 0.5,
            path_loss_db: 0.5,
            sigma_tau_ns: 1.0,
            sigma_tau_rel: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub index: usize,
    pub time_ns: i64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub snapshots: usize,
    pub matched: usize,
    pub divergences: Vec<Divergence>,
}

impl ReplayReport {
    pub fn passed(&self) -> bool {
        self.divergences.is_empty()
    }

    pub fn first_divergence(&self) -> Option<&Divergence> {
        self.divergences.first()
    }
}

/// The CIR the receiver should see for `truth`: taps quantized to the sample
/// grid exactly as the channel simulator does, summed coherently per bin and
/// passed through the same extraction rule on a noise-free profile.
pub fn expected_cir(
    truth: &TruthRecord,
    period_len: usize,
    sample_rate: f64,
    config: &ProcessConfig,
) -> Result<CirEstimate<f64>> {
    let mut values = vec![Complex::new(0.0, 0.0); period_len];
    for tap in &truth.taps {
        let shift = (tap.delay_ns * 1e-9 * sample_rate).round() as usize + truth.timing_offset_samples;
        let amp = 10f64.powf(tap.gain_db / 20.0);
        values[shift % period_len] += Complex::from_polar(amp, tap.phase_rad);
    }
    let profile = CorrelationProfile {
        values,
        sample_rate,
        repeats: 1,
        gain_db: 0.0,
        time_ns: truth.time_ns,
    };
    extract_cir(&profile, &config.cir, &LinkBudget::default())
}

fn compare(
    expected: &CirEstimate<f64>,
    row: &ResultRow,
    cir: &CirLine,
    mode: PowerMode,
    tol: &ReplayTolerances,
) -> Option<String> {
    let bin_ns = 1e9 / expected.sample_rate;
    if expected.taps.len() != cir.taps.len() {
        return Some(format!(
            "recovered {} taps, expected {}",
            cir.taps.len(),
            expected.taps.len()
        ));
    }
    for (k, (e, r)) in expected.taps.iter().zip(&cir.taps).enumerate() {
        let de = (e.delay * 1e9 - r.delay_ns).abs();
        if de > tol.delay_bins as f64 * bin_ns + 1e-6 {
            return Some(format!("tap {k} delay {} ns, expected {} ns", r.delay_ns, e.delay * 1e9));
        }
        if (e.rel_power_db - r.rel_power_db).abs() > tol.rel_power_db {
            return Some(format!(
                "tap {k} relative power {:.2} dB, expected {:.2} dB",
                r.rel_power_db, e.rel_power_db
            ));
        }
    }
    let received = match mode {
        PowerMode::TotalRetained => expected.total_power(),
        PowerMode::DirectOnly => expected.dpc().gain.norm_sqr(),
    };
    let pl = -10.0 * received.log10();
    if (pl - row.pl_db).abs() > tol.path_loss_db {
        return Some(format!("path loss {:.2} dB, expected {pl:.2} dB", row.pl_db));
    }
    let delays: Vec<f64> = expected.taps.iter().map(|t| t.delay).collect();
    let powers: Vec<f64> = expected.taps.iter().map(|t| t.gain.norm_sqr()).collect();
    let sigma = delay_moments(&delays, &powers).ok()?.1 * 1e9;
    let allowed = tol.sigma_tau_ns.max(tol.sigma_tau_rel * sigma);
    if (sigma - row.sigma_tau_ns).abs() > allowed {
        return Some(format!("sigma_tau {:.2} ns, expected {sigma:.2} ns", row.sigma_tau_ns));
    }
    None
}

/// Processes `record` and checks every snapshot against `truth`.
///
/// Snapshots that cannot be processed count as divergences; nothing here
/// aborts on a per-snapshot failure.
pub fn replay_check(
    record: &MeasurementRecord,
    truth: &[TruthRecord],
    config: &ProcessConfig,
    tol: &ReplayTolerances,
) -> Result<ReplayReport> {
    let config = ProcessConfig { keep_going: true, ..config.clone() };
    let results = process_campaign(record, &config)?;
    let period_len = ((1usize << record.meta.waveform.degree) - 1) * record.meta.samples_per_chip;
    let mut divergences = Vec::new();
    let mut matched = 0;
    for (position, t) in truth.iter().enumerate() {
        let found = results.cirs.iter().position(|c| c.time_ns == t.time_ns);
        let reason = match found {
            None => {
                let why = results
                    .summary
                    .failures
                    .iter()
                    .find(|f| f.time_ns == t.time_ns)
                    .map(|f| f.error.clone())
                    .unwrap_or_else(|| "snapshot missing from record".into());
                Some(why)
            }
            Some(k) => {
                let expected = expected_cir(t, period_len, record.meta.sample_rate_hz, &config)?;
                compare(&expected, &results.rows[k], &results.cirs[k], config.power_mode, tol)
            }
        };
        match reason {
            None => matched += 1,
            Some(reason) => divergences.push(Divergence {
                index: position,
                time_ns: t.time_ns,
                reason,
            }),
        }
    }
    Ok(ReplayReport {
        snapshots: truth.len(),
        matched,
        divergences,
    })
}
