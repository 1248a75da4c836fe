//! On-disk measurement record.
//!
//! A record directory holds:
//! - `iq.cf32`: little-endian interleaved `f32` I/Q, fixed snapshot stride
//! - `iq.json`: sidecar metadata
//! - `tx_log.csv`, `rx_log.csv`: flight logs
//! - `truth.jsonl`: injected channel per snapshot (simulated records only)
//! - `scenario.json`: the scenario that produced it (simulated records only)

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::chanmodel::TapRecord;
use crate::error::{Error, Result};
use crate::geometry::FlightLog;

use super::scenario::CampaignScenario;

pub const IQ_FILE: &str = "iq.cf32";
pub const META_FILE: &str = "iq.json";
pub const TX_LOG_FILE: &str = "tx_log.csv";
pub const RX_LOG_FILE: &str = "rx_log.csv";
pub const TRUTH_FILE: &str = "truth.jsonl";
pub const SCENARIO_FILE: &str = "scenario.json";

const BYTES_PER_SAMPLE: u64 = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaveformMeta {
    pub degree: u32,
    pub taps: Vec<u32>,
    pub seed: u32,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqMetadata {
    pub sample_rate_hz: f64,
    pub center_freq_hz: f64,
    pub snapshot_len: usize,
    pub snapshot_period_ms: f64,
    pub start_time_ns: i64,
    pub waveform: WaveformMeta,
    pub samples_per_chip: usize,
    pub tx_power_dbm: f64,
    pub seed: u64,
    pub snapshot_count: usize,
    pub snapshot_times_ns: Vec<i64>,
}

impl IqMetadata {
    fn check(&self, path: &Path) -> Result<()> {
        if self.snapshot_times_ns.len() != self.snapshot_count {
            return Err(Error::malformed(
                path,
                format!(
                    "snapshot_count {} but {} snapshot times",
                    self.snapshot_count,
                    self.snapshot_times_ns.len()
                ),
            ));
        }
        if !(self.sample_rate_hz > 0.0) || self.snapshot_len == 0 {
            return Err(Error::malformed(path, "sample rate and snapshot length must be positive"));
        }
        Ok(())
    }
}

/// Injected channel for one snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub index: usize,
    pub time_ns: i64,
    pub distance_m: f64,
    pub ground_distance_m: f64,
    /// Channel loss including shadowing, excluding antenna gains.
    pub path_loss_db: f64,
    pub shadowing_db: f64,
    pub antenna_correction_db: f64,
    pub timing_offset_samples: usize,
    /// Channel taps with absolute propagation delays.
    pub taps: Vec<TapRecord>,
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthRecord>> {
    let file = open(path)?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::malformed(path, format!("line {}: {e}", n + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_truth(path: &Path, truth: &[TruthRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in truth {
        let line = serde_json::to_string(t).expect("truth serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn encode_cf32(samples: &[Complex<f32>]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(samples.len() * BYTES_PER_SAMPLE as usize);
    for z in samples {
        buf.extend_from_slice(&z.re.to_le_bytes());
        buf.extend_from_slice(&z.im.to_le_bytes());
    }
    buf
}

fn decode_cf32(bytes: &[u8]) -> Vec<Complex<f32>> {
    bytes
        .chunks_exact(BYTES_PER_SAMPLE as usize)
        .map(|c| {
            Complex::new(
                f32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                f32::from_le_bytes([c[4], c[5], c[6], c[7]]),
            )
        })
        .collect()
}

/// Writes a standalone interleaved `f32` I/Q file.
pub fn write_cf32(path: &Path, samples: &[Complex<f32>]) -> Result<()> {
    std::fs::write(path, encode_cf32(samples)).map_err(|e| Error::io(path, e))
}

pub fn read_cf32(path: &Path) -> Result<Vec<Complex<f32>>> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile { path: path.to_path_buf() },
        _ => Error::io(path, e),
    })?;
    if bytes.len() % BYTES_PER_SAMPLE as usize != 0 {
        return Err(Error::malformed(path, "length is not a whole number of samples"));
    }
    Ok(decode_cf32(&bytes))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile { path: path.to_path_buf() },
        _ => Error::io(path, e),
    })
}

/// Streams snapshots into a new record directory.
pub struct RecordWriter {
    dir: PathBuf,
    iq: BufWriter<File>,
    snapshot_len: usize,
    written: usize,
}

impl RecordWriter {
    pub fn create(dir: &Path, snapshot_len: usize) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(IQ_FILE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            iq: BufWriter::with_capacity(1 << 20, file),
            snapshot_len,
            written: 0,
        })
    }

    pub fn write_snapshot(&mut self, samples: &[Complex<f32>]) -> Result<()> {
        if samples.len() != self.snapshot_len {
            return Err(Error::invalid(format!(
                "snapshot of {} samples, record stride is {}",
                samples.len(),
                self.snapshot_len
            )));
        }
        let path = self.dir.join(IQ_FILE);
        self.iq.write_all(&encode_cf32(samples)).map_err(|e| Error::io(&path, e))?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }

    /// Flushes the IQ stream and writes sidecar, flight logs and optional
    /// truth and scenario files.
    pub fn finish(
        mut self,
        meta: &IqMetadata,
        tx_log: &FlightLog<f64>,
        rx_log: &FlightLog<f64>,
        truth: Option<&[TruthRecord]>,
        scenario: Option<&CampaignScenario>,
    ) -> Result<PathBuf> {
        let iq_path = self.dir.join(IQ_FILE);
        self.iq.flush().map_err(|e| Error::io(&iq_path, e))?;
        if meta.snapshot_count != self.written || meta.snapshot_len != self.snapshot_len {
            return Err(Error::invalid(format!(
                "metadata describes {} x {} samples, wrote {} x {}",
                meta.snapshot_count, meta.snapshot_len, self.written, self.snapshot_len
            )));
        }
        let meta_path = self.dir.join(META_FILE);
        let text = serde_json::to_string_pretty(meta).expect("metadata serializes");
        std::fs::write(&meta_path, text + "\n").map_err(|e| Error::io(&meta_path, e))?;
        tx_log.write_csv(&self.dir.join(TX_LOG_FILE))?;
        rx_log.write_csv(&self.dir.join(RX_LOG_FILE))?;
        if let Some(t) = truth {
            write_truth(&self.dir.join(TRUTH_FILE), t)?;
        }
        if let Some(s) = scenario {
            s.write_json(&self.dir.join(SCENARIO_FILE))?;
        }
        Ok(self.dir)
    }
}

/// A complete record opened for reading.
#[derive(Debug, Clone)]
pub struct MeasurementRecord {
    pub dir: PathBuf,
    pub meta: IqMetadata,
    pub tx_log: FlightLog<f64>,
    pub rx_log: FlightLog<f64>,
    pub scenario: Option<CampaignScenario>,
}

impl MeasurementRecord {
    /// Opens `dir`, failing with the name of the first missing required file.
    pub fn open(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let mut text = String::new();
        open(&meta_path)?
            .read_to_string(&mut text)
            .map_err(|e| Error::io(&meta_path, e))?;
        let meta: IqMetadata =
            serde_json::from_str(&text).map_err(|e| Error::malformed(&meta_path, e))?;
        meta.check(&meta_path)?;

        let iq_path = dir.join(IQ_FILE);
        let size = open(&iq_path)?
            .metadata()
            .map_err(|e| Error::io(&iq_path, e))?
            .len();
        let expected = meta.snapshot_count as u64 * meta.snapshot_len as u64 * BYTES_PER_SAMPLE;
        if size != expected {
            return Err(Error::malformed(
                &iq_path,
                format!("{size} bytes, metadata implies {expected}"),
            ));
        }

        let tx_log = FlightLog::read_csv(&dir.join(TX_LOG_FILE))?;
        let rx_log = FlightLog::read_csv(&dir.join(RX_LOG_FILE))?;
        let scenario_path = dir.join(SCENARIO_FILE);
        let scenario = if scenario_path.exists() {
            Some(CampaignScenario::read_json(&scenario_path)?)
        } else {
            None
        };
        let record = Self {
            dir: dir.to_path_buf(),
            meta,
            tx_log,
            rx_log,
            scenario,
        };
        for &t in &record.meta.snapshot_times_ns {
            record.tx_log.at(t)?;
            record.rx_log.at(t)?;
        }
        Ok(record)
    }

    pub fn len(&self) -> usize {
        self.meta.snapshot_count
    }

    pub fn is_empty(&self) -> bool {
        self.meta.snapshot_count == 0
    }

    pub fn reader(&self) -> Result<IqReader> {
        IqReader::open(&self.dir.join(IQ_FILE), self.meta.snapshot_len)
    }

    pub fn truth(&self) -> Result<Vec<TruthRecord>> {
        read_truth(&self.dir.join(TRUTH_FILE))
    }
}

/// Random-access snapshot reader.
#[derive(Debug)]
pub struct IqReader {
    path: PathBuf,
    file: File,
    snapshot_len: usize,
}

impl IqReader {
    pub fn open(path: &Path, snapshot_len: usize) -> Result<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            file: open(path)?,
            snapshot_len,
        })
    }

    pub fn read_snapshot(&mut self, index: usize) -> Result<Vec<Complex<f32>>> {
        let stride = self.snapshot_len as u64 * BYTES_PER_SAMPLE;
        self.file
            .seek(SeekFrom::Start(index as u64 * stride))
            .map_err(|e| Error::io(&self.path, e))?;
        let mut buf = vec![0u8; stride as usize];
        self.file.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::malformed(&self.path, format!("snapshot {index} truncated"))
            } else {
                Error::io(&self.path, e)
            }
        })?;
        Ok(decode_cf32(&buf))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GeoFix;

    fn meta(count: usize, len: usize) -> IqMetadata {
        IqMetadata {
            sample_rate_hz: 50e6,
            center_freq_hz: 3.5e9,
            snapshot_len: len,
            snapshot_period_ms: 100.0,
            start_time_ns: 0,
            waveform: WaveformMeta { degree: 12, taps: vec![12, 6, 4, 1], seed: 1, repeats: 8 },
            samples_per_chip: 1,
            tx_power_dbm: 30.0,
            seed: 0,
            snapshot_count: count,
            snapshot_times_ns: (0..count as i64).map(|i| i * 100_000_000).collect(),
        }
    }

    fn log() -> FlightLog<f64> {
        FlightLog::new(vec![
            GeoFix::new(0, 40.0, 29.0, 100.0),
            GeoFix::new(1_000_000_000, 40.0, 29.001, 100.0),
        ])
        .unwrap()
    }

    #[test]
    fn round_trip_and_random_access() {
        let dir = tempfile::tempdir().unwrap();
        let snaps: Vec<Vec<Complex<f32>>> = (0..3)
            .map(|k| (0..16).map(|i| Complex::new(i as f32 + k as f32 * 0.5, -(i as f32))).collect())
            .collect();
        let mut w = RecordWriter::create(dir.path(), 16).unwrap();
        for s in &snaps {
            w.write_snapshot(s).unwrap();
        }
        assert!(w.write_snapshot(&snaps[0][..8]).is_err());
        w.finish(&meta(3, 16), &log(), &log(), None, None).unwrap();

        let rec = MeasurementRecord::open(dir.path()).unwrap();
        assert_eq!(rec.meta, meta(3, 16));
        assert_eq!(rec.tx_log, log());
        assert_eq!(std::fs::metadata(dir.path().join(IQ_FILE)).unwrap().len(), 3 * 16 * 8);
        let mut r = rec.reader().unwrap();
        assert_eq!(r.read_snapshot(2).unwrap(), snaps[2]);
        assert_eq!(r.read_snapshot(0).unwrap(), snaps[0]);
        assert!(r.read_snapshot(3).is_err());
    }

    #[test]
    fn missing_files_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let w = RecordWriter::create(dir.path(), 4).unwrap();
        w.finish(&meta(0, 4), &log(), &log(), None, None).unwrap();
        assert!(MeasurementRecord::open(dir.path()).unwrap().is_empty());
        std::fs::remove_file(dir.path().join(TX_LOG_FILE)).unwrap();
        let err = MeasurementRecord::open(dir.path()).unwrap_err();
        assert!(matches!(&err, Error::MissingFile { path } if path.ends_with(TX_LOG_FILE)));
        assert!(err.to_string().contains(TX_LOG_FILE));
    }

    #[test]
    fn truncated_payload_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = RecordWriter::create(dir.path(), 4).unwrap();
        w.write_snapshot(&[Complex::new(1.0, 0.0); 4]).unwrap();
        w.finish(&meta(1, 4), &log(), &log(), None, None).unwrap();
        let f = std::fs::OpenOptions::new().write(true).open(dir.path().join(IQ_FILE)).unwrap();
        f.set_len(20).unwrap();
        assert!(matches!(MeasurementRecord::open(dir.path()), Err(Error::Malformed { .. })));
    }

    #[test]
    fn truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(TRUTH_FILE);
        let t = vec![TruthRecord {
            index: 4,
            time_ns: 7,
            distance_m: 100.0,
            ground_distance_m: 99.0,
            path_loss_db: 80.0,
            shadowing_db: 0.5,
            antenna_correction_db: 3.0,
            timing_offset_samples: 12,
            taps: vec![TapRecord { delay_ns: 333.5, gain_db: -80.0, phase_rad: 0.25 }],
        }];
        write_truth(&p, &t).unwrap();
        assert_eq!(read_truth(&p).unwrap(), t);
    }
}
