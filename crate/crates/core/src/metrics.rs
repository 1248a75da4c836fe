//! Channel characteristics derived from CIR estimates: delay moments,
//! coherence bandwidth, per-snapshot path loss and the log-distance fit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::sounder::CirEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelaySpreadResult<T> {
    /// RMS delay spread, seconds.
    pub sigma_tau: T,
    /// Mean excess delay, seconds.
    pub mean_excess_delay: T,
    /// `1/σ_τ`; absent when σ_τ is zero.
    pub coherence_bandwidth: Option<T>,
    pub time_ns: i64,
    pub distance: Option<T>,
}

/// `(τ̄, σ_τ)` of a power-weighted delay set.
///
/// σ_τ is the central moment `√(Σp(τ−τ̄)²/Σp)`, evaluated directly rather
/// than as `E[τ²] − τ̄²` to avoid cancellation.
pub fn delay_moments<T: Real>(delays: &[T], powers: &[T]) -> Result<(T, T)> {
    if delays.is_empty() || delays.len() != powers.len() {
        return Err(Error::invalid(format!(
            "delay moments need matching nonempty inputs ({} delays, {} powers)",
            delays.len(),
            powers.len()
        )));
    }
    if powers.iter().any(|p| !(*p >= T::zero()) || !p.is_finite()) {
        return Err(Error::invalid("tap powers must be finite and nonnegative"));
    }
    let total: T = powers.iter().copied().sum();
    if !(total > T::zero()) {
        return Err(Error::invalid("total tap power is zero"));
    }
    let mean = delays.iter().zip(powers).map(|(&t, &p)| p * t).sum::<T>() / total;
    let var = delays
        .iter()
        .zip(powers)
        .map(|(&t, &p)| p * (t - mean) * (t - mean))
        .sum::<T>()
        / total;
    Ok((mean, var.sqrt()))
}

fn cir_moments<T: Real>(cir: &CirEstimate<T>) -> Result<(T, T)> {
    let delays: Vec<T> = cir.taps.iter().map(|t| t.delay).collect();
    let powers: Vec<T> = cir.taps.iter().map(|t| t.gain.norm_sqr()).collect();
    delay_moments(&delays, &powers)
}

/// `1/σ_τ`, or `None` when σ_τ is zero.
pub fn coherence_bandwidth<T: Real>(sigma_tau: T) -> Option<T> {
    (sigma_tau > T::zero()).then(|| T::one() / sigma_tau)
}

/// Delay statistics over the retained (thresholded) taps.
pub fn rms_delay_spread<T: Real>(cir: &CirEstimate<T>) -> Result<DelaySpreadResult<T>> {
    let (mean, sigma) = cir_moments(cir)?;
    Ok(DelaySpreadResult {
        sigma_tau: sigma,
        mean_excess_delay: mean,
        coherence_bandwidth: coherence_bandwidth(sigma),
        time_ns: cir.time_ns,
        distance: None,
    })
}

pub fn mean_excess_delay<T: Real>(cir: &CirEstimate<T>) -> Result<T> {
    cir_moments(cir).map(|(m, _)| m)
}

/// Which received power a path-loss sample is computed from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerMode {
    /// DPC plus all retained MPCs.
    #[default]
    TotalRetained,
    DirectOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossSample<T> {
    pub distance: T,
    pub pl_db: T,
    pub time_ns: i64,
}

/// `PL = P_tx + G_tx + G_rx − P_rx`, with `P_rx` taken from the CIR.
pub fn path_loss_from_cir<T: Real>(
    cir: &CirEstimate<T>,
    distance: T,
    tx_power_dbm: T,
    antenna_correction_db: T,
    mode: PowerMode,
) -> Result<PathLossSample<T>> {
    if !tx_power_dbm.is_finite() || !antenna_correction_db.is_finite() {
        return Err(Error::invalid(
            "path loss needs a finite TX power and antenna correction",
        ));
    }
    if cir.taps.is_empty() {
        return Err(Error::invalid("CIR has no taps"));
    }
    let rx = match mode {
        PowerMode::TotalRetained => cir.total_power(),
        PowerMode::DirectOnly => cir.dpc().gain.norm_sqr(),
    };
    if !(rx > T::zero()) {
        return Err(Error::invalid("CIR carries no power"));
    }
    Ok(PathLossSample {
        distance,
        pl_db: tx_power_dbm + antenna_correction_db - rx.to_db(),
        time_ns: cir.time_ns,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossFit<T> {
    pub eta: T,
    pub pl0_db: T,
    pub d0: T,
    /// Population standard deviation of the fit residuals, dB.
    pub sigma_zeta_db: T,
    pub samples: usize,
}

impl<T: Real> PathLossFit<T> {
    pub fn predict(&self, d: T) -> T {
        self.pl0_db + T::lit(10.0) * self.eta * (d / self.d0).log10()
    }
}

/// Ordinary least squares of `pl` against `10·log10(d/d₀)`.
pub fn fit_path_loss<T: Real>(samples: &[PathLossSample<T>], d0: T) -> Result<PathLossFit<T>> {
    if !(d0 > T::zero()) {
        return Err(Error::invalid("reference distance must be positive"));
    }
    if samples.len() < 2 {
        return Err(Error::invalid(format!(
            "path-loss fit needs at least two samples, got {}",
            samples.len()
        )));
    }
    for s in samples {
        if !(s.distance > T::zero()) || !s.pl_db.is_finite() {
            return Err(Error::invalid(format!(
                "invalid path-loss sample at {} ns (d = {}, pl = {})",
                s.time_ns, s.distance, s.pl_db
            )));
        }
    }
    let n = T::lit(samples.len() as f64);
    let xs: Vec<T> = samples
        .iter()
        .map(|s| T::lit(10.0) * (s.distance / d0).log10())
        .collect();
    let x_mean = xs.iter().copied().sum::<T>() / n;
    let y_mean = samples.iter().map(|s| s.pl_db).sum::<T>() / n;
    let sxx: T = xs.iter().map(|&x| (x - x_mean) * (x - x_mean)).sum();
    let sxy: T = xs
        .iter()
        .zip(samples)
        .map(|(&x, s)| (x - x_mean) * (s.pl_db - y_mean))
        .sum();
    let spread = xs
        .iter()
        .fold(T::zero(), |m, &x| m.max((x - x_mean).abs()));
    if !(spread > T::lit(1e-12)) {
        return Err(Error::invalid("all path-loss samples share one distance"));
    }
    let eta = sxy / sxx;
    let pl0 = y_mean - eta * x_mean;
    let rss: T = xs
        .iter()
        .zip(samples)
        .map(|(&x, s)| {
            let r = s.pl_db - pl0 - eta * x;
            r * r
        })
        .sum();
    Ok(PathLossFit {
        eta,
        pl0_db: pl0,
        d0,
        sigma_zeta_db: (rss / n).sqrt(),
        samples: samples.len(),
    })
}

/// Descriptive statistics of σ_τ across a campaign. `std` is the population
/// standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CampaignStats<T> {
    pub mean: T,
    pub std: T,
    pub median: T,
    pub min: T,
    pub max: T,
    pub count: usize,
}

pub fn campaign_stats<T: Real>(results: &[DelaySpreadResult<T>]) -> Result<CampaignStats<T>> {
    let values: Vec<T> = results.iter().map(|r| r.sigma_tau).collect();
    describe(&values)
}

/// Mean, population std, median (middle pair averaged), min and max.
pub fn describe<T: Real>(values: &[T]) -> Result<CampaignStats<T>> {
    if values.is_empty() {
        return Err(Error::invalid("statistics of an empty set"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.cmp_finite(b));
    let n = sorted.len();
    let mean = sorted.iter().copied().sum::<T>() / T::lit(n as f64);
    let var = sorted.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / T::lit(n as f64);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / T::lit(2.0)
    };
    Ok(CampaignStats {
        mean,
        std: var.sqrt(),
        median,
        min: sorted[0],
        max: sorted[n - 1],
        count: n,
    })
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn taps() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((0.0f64..2e-6, 1e-6f64..1.0), 1..12)
    }

    proptest! {
        #[test]
        fn spread_invariant_under_scaling_and_translation(t in taps(), k in 1e-3f64..1e3, shift in 0.0f64..1e-6) {
            let (d, p): (Vec<f64>, Vec<f64>) = t.into_iter().unzip();
            let (_, s0) = delay_moments(&d, &p).unwrap();
            let ps: Vec<f64> = p.iter().map(|x| x * k).collect();
            let ds: Vec<f64> = d.iter().map(|x| x + shift).collect();
            let (_, s1) = delay_moments(&ds, &ps).unwrap();
            prop_assert!((s0 - s1).abs() <= 1e-12 + 1e-9 * s0);
        }

        #[test]
        fn spread_bounded_by_half_range(t in taps()) {
            let (d, p): (Vec<f64>, Vec<f64>) = t.into_iter().unzip();
            let (m, s) = delay_moments(&d, &p).unwrap();
            let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(s >= 0.0);
            prop_assert!(s <= (hi - lo) / 2.0 * (1.0 + 1e-12) + 1e-18);
            prop_assert!(m >= lo - 1e-18 && m <= hi + 1e-18);
        }

        #[test]
        fn coherence_times_spread_is_one(s in 1e-10f64..1e-5) {
            prop_assert!((coherence_bandwidth(s).unwrap() * s - 1.0).abs() <= f64::EPSILON);
        }

        #[test]
        fn stats_ordered(v in prop::collection::vec(0.0f64..1e-6, 1..50)) {
            let s = describe(&v).unwrap();
            prop_assert!(s.min <= s.median && s.median <= s.max);
            prop_assert!(s.std >= 0.0);
        }

        #[test]
        fn noiseless_fit_consistent(eta in 1.0f64..5.0, pl0 in 20.0f64..60.0, d0 in 0.5f64..10.0) {
            let samples: Vec<_> = (0..20).map(|i| {
                let d = d0 * (1.0 + i as f64 * 7.3);
                PathLossSample { distance: d, pl_db: pl0 + 10.0 * eta * (d / d0).log10(), time_ns: i }
            }).collect();
            let fit = fit_path_loss(&samples, d0).unwrap();
            prop_assert!((fit.eta - eta).abs() < 1e-9);
            prop_assert!((fit.pl0_db - pl0).abs() < 1e-8);
        }
    }
}
