use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{antenna_correction, link_geometry, AntennaPattern};
use crate::metrics::{
    describe, fit_path_loss, path_loss_from_cir, rms_delay_spread, CampaignStats, PathLossFit,
    PathLossSample, PowerMode,
};
use crate::sounder::{
    derotate, estimate_cfo, extract_cir, preprocess, CirConfig, CirEstimate, Correlator,
    IqSnapshot, LinkBudget, TimeWindow,
};
use crate::waveform::{generate_mseq, CorrelatorReference, MSequenceSpec};

use super::record::MeasurementRecord;
use super::scenario::AntennaSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProcessConfig {
    pub cir: CirConfig<f64>,
    /// Correlator repeats; the record's value when absent.
    pub repeats: Option<usize>,
    pub power_mode: PowerMode,
    /// Path-loss reference distance, meters.
    pub d0_m: f64,
    pub window: Option<TimeWindow>,
    pub estimate_cfo: bool,
    /// Antennas; taken from the record's scenario when absent.
    pub tx_antenna: Option<AntennaSpec>,
    pub rx_antenna: Option<AntennaSpec>,
    /// Record malformed snapshots as failures instead of aborting.
    pub keep_going: bool,
    /// Snapshots in flight at once; twice the worker count when absent.
    pub batch: Option<usize>,
}

impl Default for ProcessConfig {
    fn default() -> Self {
        Self {
            cir: CirConfig::default(),
            repeats: None,
            power_mode: PowerMode::TotalRetained,
            d0_m: 1.0,
            window: None,
            estimate_cfo: true,
            tx_antenna: None,
            rx_antenna: None,
            keep_going: false,
            batch: None,
        }
    }
}

/// One row of the results table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub time_ns: i64,
    pub distance_m: f64,
    pub pl_db: f64,
    pub sigma_tau_ns: f64,
    pub med_ns: f64,
    pub num_taps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CirTapLine {
    pub lag: usize,
    pub delay_ns: f64,
    pub power_db: f64,
    pub rel_power_db: f64,
    pub abs_gain_db: f64,
    pub phase_rad: f64,
}

/// One line of `cirs.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CirLine {
    pub index: usize,
    pub time_ns: i64,
    pub distance_m: f64,
    pub cfo_hz: f64,
    pub noise_floor_db: f64,
    pub correlation_gain_db: f64,
    pub taps: Vec<CirTapLine>,
}

impl CirLine {
    fn new(index: usize, distance_m: f64, cfo_hz: f64, cir: &CirEstimate<f64>) -> Self {
        Self {
            index,
            time_ns: cir.time_ns,
            distance_m,
            cfo_hz,
            noise_floor_db: cir.noise_floor_db,
            correlation_gain_db: cir.correlation_gain_db,
            taps: cir
                .taps
                .iter()
                .map(|t| CirTapLine {
                    lag: t.lag,
                    delay_ns: t.delay * 1e9,
                    power_db: t.power_db,
                    rel_power_db: t.rel_power_db,
                    abs_gain_db: t.abs_gain_db,
                    phase_rad: t.gain.arg(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotFailure {
    pub index: usize,
    pub time_ns: i64,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsNs {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl From<CampaignStats<f64>> for StatsNs {
    fn from(s: CampaignStats<f64>) -> Self {
        Self {
            mean: s.mean * 1e9,
            std: s.std * 1e9,
            median: s.median * 1e9,
            min: s.min * 1e9,
            max: s.max * 1e9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub snapshots: usize,
    pub processed: usize,
    pub excluded_no_signal: usize,
    pub failed: usize,
    pub fit: Option<PathLossFit<f64>>,
    /// σ_τ statistics, ns (population std).
    pub sigma_tau_ns: Option<StatsNs>,
    pub mean_excess_delay_ns: Option<StatsNs>,
    pub seed: u64,
    pub config: ProcessConfig,
    pub failures: Vec<SnapshotFailure>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignResults {
    /// Sorted by time.
    pub rows: Vec<ResultRow>,
    pub cirs: Vec<CirLine>,
    pub summary: CampaignSummary,
}

enum Outcome {
    Ok(ResultRow, CirLine),
    NoSignal(SnapshotFailure),
    Failed(SnapshotFailure, Error),
}

struct Pipeline {
    correlator: Correlator<f64>,
    repeats: usize,
    period_len: usize,
    sample_rate: f64,
    center_freq: f64,
    tx_power_dbm: f64,
    tx_pattern: AntennaPattern<f64>,
    rx_pattern: AntennaPattern<f64>,
}

impl Pipeline {
    fn new(record: &MeasurementRecord, config: &ProcessConfig) -> Result<Self> {
        let m = &record.meta;
        let spec = MSequenceSpec::new(m.waveform.degree, m.waveform.taps.clone(), m.waveform.seed);
        let seq = generate_mseq(&spec)?;
        let repeats = config.repeats.unwrap_or(m.waveform.repeats);
        let reference = CorrelatorReference::new(&seq, repeats, m.samples_per_chip)?;
        let antenna = |explicit: &Option<AntennaSpec>, pick: fn(&super::CampaignScenario) -> &AntennaSpec| {
            let spec = explicit
                .clone()
                .or_else(|| record.scenario.as_ref().map(|s| pick(s).relative_to(&record.dir)))
                .unwrap_or_default();
            spec.load()
        };
        Ok(Self {
            period_len: reference.period_len(),
            correlator: Correlator::new(reference),
            repeats,
            sample_rate: m.sample_rate_hz,
            center_freq: m.center_freq_hz,
            tx_power_dbm: m.tx_power_dbm,
            tx_pattern: antenna(&config.tx_antenna, |s| &s.tx_antenna)?,
            rx_pattern: antenna(&config.rx_antenna, |s| &s.rx_antenna)?,
        })
    }

    fn run(
        &self,
        record: &MeasurementRecord,
        config: &ProcessConfig,
        index: usize,
        iq: &[Complex<f32>],
    ) -> Result<(ResultRow, CirLine)> {
        let t = record.meta.snapshot_times_ns[index];
        let geom = link_geometry(&record.tx_log.at(t)?, &record.rx_log.at(t)?)?;
        let correction = antenna_correction(&geom, &self.tx_pattern, &self.rx_pattern);

        let samples = iq.iter().map(|z| Complex::new(z.re as f64, z.im as f64)).collect();
        let snap = IqSnapshot::new(samples, self.sample_rate, self.center_freq, t);
        let span_ns = (snap.len() as f64 * 1e9 / self.sample_rate).ceil() as i64;
        let window = config.window.unwrap_or(TimeWindow { start_ns: t, end_ns: t + span_ns + 1 });
        let pre = preprocess(&snap, window, self.period_len)?;
        let cfo = if config.estimate_cfo {
            estimate_cfo(&self.correlator, &pre, config.cir.detection_db)?
        } else {
            0.0
        };
        let aligned = derotate(&pre, cfo);
        let profile = self.correlator.correlate(&aligned, self.repeats)?;
        let budget = LinkBudget { tx_power_dbm: self.tx_power_dbm, antenna_correction_db: correction };
        let cir = extract_cir(&profile, &config.cir, &budget)?;
        let ds = rms_delay_spread(&cir)?;
        let pl = path_loss_from_cir(&cir, geom.distance, self.tx_power_dbm, correction, config.power_mode)?;
        let row = ResultRow {
            time_ns: t,
            distance_m: geom.distance,
            pl_db: pl.pl_db,
            sigma_tau_ns: ds.sigma_tau * 1e9,
            med_ns: ds.mean_excess_delay * 1e9,
            num_taps: cir.taps.len(),
        };
        Ok((row, CirLine::new(index, geom.distance, cfo, &cir)))
    }
}

/// Runs preprocess, CFO alignment, correlation, CIR extraction and metrics
/// on every snapshot, then fits the path-loss model over the survivors.
///
/// Snapshots without a detectable signal are excluded and counted. Other
/// per-snapshot errors abort unless `keep_going` is set.
pub fn process_campaign(record: &MeasurementRecord, config: &ProcessConfig) -> Result<CampaignResults> {
    let pipeline = Pipeline::new(record, config)?;
    let mut reader = record.reader()?;
    let batch = config.batch.unwrap_or_else(|| 2 * rayon::current_num_threads()).max(1);
    let indices: Vec<usize> = (0..record.len()).collect();

    let mut rows = Vec::new();
    let mut cirs = Vec::new();
    let mut failures = Vec::new();
    let (mut no_signal, mut failed) = (0, 0);
    for chunk in indices.chunks(batch) {
        let loaded = chunk
            .iter()
            .map(|&i| reader.read_snapshot(i).map(|iq| (i, iq)))
            .collect::<Result<Vec<_>>>()?;
        let outcomes: Vec<Outcome> = loaded
            .par_iter()
            .map(|(i, iq)| {
                let failure = |e: &Error| SnapshotFailure {
                    index: *i,
                    time_ns: record.meta.snapshot_times_ns[*i],
                    error: e.to_string(),
                };
                match pipeline.run(record, config, *i, iq) {
                    Ok((row, cir)) => Outcome::Ok(row, cir),
                    Err(e @ Error::NoSignal(_)) => Outcome::NoSignal(failure(&e)),
                    Err(e) => Outcome::Failed(failure(&e), e),
                }
            })
            .collect();
        for o in outcomes {
            match o {
                Outcome::Ok(row, cir) => {
                    rows.push(row);
                    cirs.push(cir);
                }
                Outcome::NoSignal(f) => {
                    log::warn!("snapshot {} excluded: {}", f.index, f.error);
                    no_signal += 1;
                    failures.push(f);
                }
                Outcome::Failed(f, e) => {
                    if !config.keep_going {
                        return Err(e);
                    }
                    log::error!("snapshot {} failed: {}", f.index, f.error);
                    failed += 1;
                    failures.push(f);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by_key(|&k| (rows[k].time_ns, cirs[k].index));
    let rows: Vec<ResultRow> = order.iter().map(|&k| rows[k]).collect();
    let cirs: Vec<CirLine> = order.iter().map(|&k| cirs[k].clone()).collect();
    let summary = summarize(&rows, record.len(), no_signal, failed, failures, record.meta.seed, config)?;
    Ok(CampaignResults { rows, cirs, summary })
}

fn summarize(
    rows: &[ResultRow],
    snapshots: usize,
    excluded_no_signal: usize,
    failed: usize,
    failures: Vec<SnapshotFailure>,
    seed: u64,
    config: &ProcessConfig,
) -> Result<CampaignSummary> {
    let samples: Vec<PathLossSample<f64>> = rows
        .iter()
        .map(|r| PathLossSample { distance: r.distance_m, pl_db: r.pl_db, time_ns: r.time_ns })
        .collect();
    let distinct = samples.windows(2).any(|w| w[0].distance != w[1].distance);
    let fit = if samples.len() >= 2 && distinct {
        Some(fit_path_loss(&samples, config.d0_m)?)
    } else {
        None
    };
    let stats = |f: fn(&ResultRow) -> f64| {
        let v: Vec<f64> = rows.iter().map(|r| f(r) * 1e-9).collect();
        describe(&v).ok().map(StatsNs::from)
    };
    Ok(CampaignSummary {
        snapshots,
        processed: rows.len(),
        excluded_no_signal,
        failed,
        fit,
        sigma_tau_ns: stats(|r| r.sigma_tau_ns),
        mean_excess_delay_ns: stats(|r| r.med_ns),
        seed,
        config: config.clone(),
        failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    #[default]
    Csv,
    Json,
}

pub const RESULTS_CSV: &str = "results.csv";
pub const RESULTS_JSON: &str = "results.json";
pub const CIRS_FILE: &str = "cirs.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    if rows.is_empty() {
        w.write_record(["time_ns", "distance_m", "pl_db", "sigma_tau_ns", "med_ns", "num_taps"])
            .map_err(|e| Error::malformed(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| Error::malformed(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile { path: path.to_path_buf() },
        _ => Error::io(path, e),
    })?;
    csv::Reader::from_reader(file)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::malformed(path, e))
}

/// Reads a results table from a file, or from a `process` output directory
/// (CSV preferred over JSON).
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let file = if path.is_dir() {
        let csv = path.join(RESULTS_CSV);
        if csv.exists() {
            csv
        } else {
            path.join(RESULTS_JSON)
        }
    } else {
        path.to_path_buf()
    };
    if file.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(&file).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile { path: file.clone() },
            _ => Error::io(&file, e),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::malformed(&file, e))
    } else {
        read_results_csv(&file)
    }
}

pub fn read_cirs(path: &Path) -> Result<Vec<CirLine>> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile { path: path.to_path_buf() },
        _ => Error::io(path, e),
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::malformed(path, format!("line {}: {e}", n + 1)))
        })
        .collect()
}

/// Writes the results table, CIR lines and summary into `dir`.
pub fn write_campaign_results(dir: &Path, results: &CampaignResults, format: TableFormat) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    match format {
        TableFormat::Csv => write_results_csv(&dir.join(RESULTS_CSV), &results.rows)?,
        TableFormat::Json => {
            let p = dir.join(RESULTS_JSON);
            let text = serde_json::to_string_pretty(&results.rows).expect("rows serialize");
            std::fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))?;
        }
    }
    let p = dir.join(CIRS_FILE);
    let file = File::create(&p).map_err(|e| Error::io(&p, e))?;
    let mut w = BufWriter::new(file);
    for c in &results.cirs {
        writeln!(w, "{}", serde_json::to_string(c).expect("cir serializes")).map_err(|e| Error::io(&p, e))?;
    }
    w.flush().map_err(|e| Error::io(&p, e))?;
    let p = dir.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&results.summary).expect("summary serializes");
    std::fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))
}
