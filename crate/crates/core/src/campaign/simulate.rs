use std::path::{Path, PathBuf};

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::chanmodel::{
    apply_channel, synth_channel, wavelength, ChannelTap, ImpairmentSpec, PathLossModelParams,
};
use crate::error::{Error, Result};
use crate::geometry::{antenna_correction, link_geometry, AntennaPattern, FlightLog, GeoFix};
use crate::waveform::{build_frame_at, generate_mseq};

use super::record::{IqMetadata, RecordWriter, TruthRecord, WaveformMeta};
use super::scenario::{CampaignScenario, TimingSpec};

/// Per-snapshot seed, decorrelated from neighbouring indices.
pub fn snapshot_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SimulationSummary {
    pub dir: PathBuf,
    pub snapshots: usize,
    pub iq_bytes: u64,
}

struct Simulator<'a> {
    scenario: &'a CampaignScenario,
    frame: Vec<Complex<f64>>,
    params: PathLossModelParams<f64>,
    tx_pattern: AntennaPattern<f64>,
    rx_pattern: AntennaPattern<f64>,
}

impl<'a> Simulator<'a> {
    fn new(scenario: &'a CampaignScenario) -> Result<Self> {
        scenario.validate()?;
        let seq = generate_mseq(&scenario.waveform)?;
        let frame = build_frame_at::<f64>(&seq, scenario.periods_per_snapshot, 1, scenario.chip_rate_hz)?;
        let amplitude = 10f64.powf(scenario.tx_power_dbm / 20.0);
        let mut params =
            PathLossModelParams::new(scenario.channel, wavelength(scenario.center_freq_hz));
        params.ground_altitude = scenario.ground_alt_m;
        params.validate()?;
        Ok(Self {
            scenario,
            frame: frame.to_iq(amplitude),
            params,
            tx_pattern: scenario.tx_antenna.load()?,
            rx_pattern: scenario.rx_antenna.load()?,
        })
    }

    fn snapshot(&self, index: usize) -> Result<(Vec<Complex<f32>>, TruthRecord)> {
        let s = self.scenario;
        let t = s.snapshot_time_ns(index);
        let geom = link_geometry(&s.tx_fix(t), &s.rx_fix(t))?;
        let mut rng = ChaCha8Rng::seed_from_u64(snapshot_seed(s.seed, index));

        let direct = synth_channel(&geom, &self.params, &[])?;
        let d0 = direct.taps[0];
        let extra: Vec<ChannelTap<f64>> = s
            .extra_paths
            .iter()
            .map(|p| {
                ChannelTap::new(
                    d0.amplitude * 10f64.powf(p.rel_gain_db / 20.0),
                    p.phase_rad,
                    d0.delay + p.excess_delay_ns * 1e-9,
                )
            })
            .collect();
        let mut channel = synth_channel(&geom, &self.params, &extra)?;
        let shadowing = if s.shadowing_db > 0.0 {
            Normal::new(0.0, s.shadowing_db)
                .expect("validated std")
                .sample(&mut rng)
        } else {
            0.0
        };
        channel.scale_db(-shadowing);
        let timing = match s.timing {
            TimingSpec::Fixed { samples } => samples,
            TimingSpec::Random { max_samples } => rng.random_range(0..max_samples),
        };
        let correction = antenna_correction(&geom, &self.tx_pattern, &self.rx_pattern);

        let truth = TruthRecord {
            index,
            time_ns: t,
            distance_m: geom.distance,
            ground_distance_m: geom.ground_distance,
            path_loss_db: channel.path_loss_db(),
            shadowing_db: shadowing,
            antenna_correction_db: correction,
            timing_offset_samples: timing,
            taps: channel.to_tap_table(),
        };

        let mut received = channel;
        received.scale_db(correction);
        let rx_power_mw = 10f64.powf(s.tx_power_dbm / 10.0) * received.total_power();
        let impairments = ImpairmentSpec {
            noise_psd_dbm_hz: s.noise_psd(rx_power_mw),
            cfo_hz: s.cfo_hz,
            timing_offset_samples: timing,
        };
        impairments.validate(s.chip_rate_hz)?;
        let samples = apply_channel(&self.frame, &received, &impairments, s.sample_rate_hz(), rng.random())?;
        let iq = samples
            .iter()
            .map(|z| Complex::new(z.re as f32, z.im as f32))
            .collect();
        Ok((iq, truth))
    }

    fn flight_logs(&self) -> Result<(FlightLog<f64>, FlightLog<f64>)> {
        let s = self.scenario;
        let step = (s.log_period_ms * 1e6).round().max(1.0) as i64;
        let end = s.start_time_ns + s.duration_ns();
        let mut times: Vec<i64> = (0..).map(|k| s.start_time_ns + k * step).take_while(|&t| t <= end).collect();
        if *times.last().expect("start time is always logged") != end {
            times.push(end);
        }
        // A single fix cannot be interpolated; pad a zero-length flight.
        if times.len() == 1 {
            times.push(end + step);
        }
        let tx: Vec<GeoFix<f64>> = times.iter().map(|&t| s.tx_fix(t)).collect();
        let rx: Vec<GeoFix<f64>> = times.iter().map(|&t| s.rx_fix(t)).collect();
        Ok((FlightLog::new(tx)?, FlightLog::new(rx)?))
    }
}

/// Simulates the flight into a record directory at `out`.
///
/// Snapshots are generated in parallel batches of `batch` (default: twice the
/// worker count) and written in order, so the output is independent of the
/// thread count.
pub fn simulate_campaign(
    scenario: &CampaignScenario,
    out: &Path,
    batch: Option<usize>,
) -> Result<SimulationSummary> {
    let sim = Simulator::new(scenario)?;
    let indices = scenario.snapshot_indices();
    let batch = batch.unwrap_or_else(|| 2 * rayon::current_num_threads()).max(1);
    let mut writer = RecordWriter::create(out, scenario.snapshot_len())?;
    let mut truth = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch) {
        let produced: Vec<_> = chunk
            .par_iter()
            .map(|&i| sim.snapshot(i))
            .collect::<Result<_>>()?;
        for (iq, t) in produced {
            writer.write_snapshot(&iq)?;
            truth.push(t);
        }
        log::info!("simulated {}/{} snapshots", truth.len(), indices.len());
    }

    let meta = IqMetadata {
        sample_rate_hz: scenario.sample_rate_hz(),
        center_freq_hz: scenario.center_freq_hz,
        snapshot_len: scenario.snapshot_len(),
        snapshot_period_ms: scenario.snapshot_period_ms * scenario.decimate as f64,
        start_time_ns: scenario.start_time_ns,
        waveform: WaveformMeta {
            degree: scenario.waveform.degree,
            taps: scenario.waveform.taps.clone(),
            seed: scenario.waveform.seed,
            repeats: scenario.repeats,
        },
        samples_per_chip: 1,
        tx_power_dbm: scenario.tx_power_dbm,
        seed: scenario.seed,
        snapshot_count: indices.len(),
        snapshot_times_ns: indices.iter().map(|&i| scenario.snapshot_time_ns(i)).collect(),
    };
    let (tx_log, rx_log) = sim.flight_logs()?;
    let dir = writer.finish(&meta, &tx_log, &rx_log, Some(&truth), Some(scenario))?;
    let iq_bytes = std::fs::metadata(dir.join(super::record::IQ_FILE))
        .map_err(|e| Error::io(&dir, e))?
        .len();
    Ok(SimulationSummary {
        dir,
        snapshots: indices.len(),
        iq_bytes,
    })
}
