//! Plot-ready CSV bundles: path loss against distance with reference models,
//! delay spread against distance, and long-format PDP triples.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use num_complex::Complex;
use serde::Serialize;

use crate::chanmodel::{fe2r_pl, fspl, wavelength};
use crate::error::{Error, Result};
use crate::geometry::link_geometry;
use crate::metrics::PathLossFit;

use super::process::{CirLine, ResultRow};
use super::record::MeasurementRecord;

pub const PL_REPORT: &str = "pl_report.csv";
pub const SIGMA_REPORT: &str = "sigma_report.csv";
pub const PDP_REPORT: &str = "pdp_report.csv";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlReportRow {
    pub distance_m: f64,
    pub pl_meas_db: f64,
    pub pl_fit_db: Option<f64>,
    pub pl_fspl_db: f64,
    pub pl_fe2r_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SigmaReportRow {
    pub distance_m: f64,
    pub sigma_tau_ns: f64,
    pub med_ns: f64,
    pub num_taps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PdpReportRow {
    pub distance_m: f64,
    pub delay_ns: f64,
    pub power_db: f64,
    pub rel_power_db: f64,
}

/// Reference columns use the record's flight logs for geometry and a
/// perfectly reflecting ground (Γ = −1) for the two-ray curve.
pub fn pl_report(
    record: &MeasurementRecord,
    rows: &[ResultRow],
    fit: Option<&PathLossFit<f64>>,
) -> Result<Vec<PlReportRow>> {
    let lambda = wavelength(record.meta.center_freq_hz);
    let ground = record.scenario.as_ref().map_or(0.0, |s| s.ground_alt_m);
    rows.iter()
        .map(|r| {
            let g = link_geometry(&record.tx_log.at(r.time_ns)?, &record.rx_log.at(r.time_ns)?)?;
            let h_t = (g.tx_alt - ground).max(0.0);
            let h_r = (g.rx_alt - ground).max(0.0);
            Ok(PlReportRow {
                distance_m: r.distance_m,
                pl_meas_db: r.pl_db,
                pl_fit_db: fit.map(|f| f.predict(r.distance_m)),
                pl_fspl_db: fspl(r.distance_m, lambda)?,
                pl_fe2r_db: fe2r_pl(g.ground_distance, h_t, h_r, lambda, Complex::new(-1.0, 0.0))?,
            })
        })
        .collect()
}

pub fn sigma_report(rows: &[ResultRow]) -> Vec<SigmaReportRow> {
    rows.iter()
        .map(|r| SigmaReportRow {
            distance_m: r.distance_m,
            sigma_tau_ns: r.sigma_tau_ns,
            med_ns: r.med_ns,
            num_taps: r.num_taps,
        })
        .collect()
}

pub fn pdp_report(cirs: &[CirLine]) -> Vec<PdpReportRow> {
    cirs.iter()
        .flat_map(|c| {
            c.taps.iter().map(move |t| PdpReportRow {
                distance_m: c.distance_m,
                delay_ns: t.delay_ns,
                power_db: t.power_db,
                rel_power_db: t.rel_power_db,
            })
        })
        .collect()
}

/// Writes `rows` under an explicit header so empty tables still carry one.
pub fn write_table<R: Serialize>(path: &Path, header: &[&str], rows: &[R]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(file));
    w.write_record(header).map_err(|e| Error::malformed(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::malformed(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_reports(
    dir: &Path,
    record: &MeasurementRecord,
    rows: &[ResultRow],
    cirs: &[CirLine],
    fit: Option<&PathLossFit<f64>>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_table(
        &dir.join(PL_REPORT),
        &["distance_m", "pl_meas_db", "pl_fit_db", "pl_fspl_db", "pl_fe2r_db"],
        &pl_report(record, rows, fit)?,
    )?;
    write_table(
        &dir.join(SIGMA_REPORT),
        &["distance_m", "sigma_tau_ns", "med_ns", "num_taps"],
        &sigma_report(rows),
    )?;
    write_table(
        &dir.join(PDP_REPORT),
        &["distance_m", "delay_ns", "power_db", "rel_power_db"],
        &pdp_report(cirs),
    )
}
