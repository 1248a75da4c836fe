use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use num_complex::Complex;
use serde::Serialize;
use sha2::{Digest, Sha256};
use sounder_core::campaign::process::SUMMARY_FILE;
use sounder_core::campaign::record::{write_cf32, IQ_FILE};
use sounder_core::campaign::scenario::{AntennaSpec, TimingSpec};
use sounder_core::campaign::{
    build_scenario, process_campaign, read_cirs, read_results, simulate_campaign,
    write_campaign_results, write_reports, MeasurementRecord, NoiseSpec, ProcessConfig,
    TableFormat,
};
use sounder_core::chanmodel::{LogDistanceParams, PathLossKind, Reflection};
use sounder_core::metrics::{fit_path_loss, PathLossFit, PathLossSample, PowerMode};
use sounder_core::sounder::CirConfig;
use sounder_core::waveform::{
    build_frame_at, default_taps, generate_mseq, CorrelatorReference, MSequenceSpec,
    DEFAULT_CHIP_RATE_HZ, DEFAULT_DEGREE,
};

use crate::config::{pick, FileConfig, Resolved};
use crate::{ChannelArg, Cli, Command, FitArgs, Format, ProcessArgs, ReportArgs, SimulateArgs, WaveformArgs};

const CENTER_FREQ_HZ: f64 = 3.5e9;
const CHECKSUM_FILE: &str = "iq.sha256";
const FIT_FILE: &str = "fit.json";

/// Global settings after layering flags over the config file.
struct Globals {
    file: FileConfig,
    seed: u64,
    out: PathBuf,
    format: TableFormat,
    decimate: usize,
    keep_going: bool,
}

impl Globals {
    fn resolve(cli: &Cli) -> Result<Self> {
        let file = FileConfig::load(cli.config.as_deref())?;
        let format = cli.format.map(|f| match f {
            Format::Csv => TableFormat::Csv,
            Format::Json => TableFormat::Json,
        });
        Ok(Self {
            seed: pick(cli.seed, file.seed.or(file.scenario.seed), 0),
            out: pick(cli.out.clone(), file.out.clone(), PathBuf::from("out")),
            format: pick(format, file.format, TableFormat::Csv),
            decimate: pick(cli.decimate, file.decimate.or(file.scenario.decimate), 1),
            keep_going: cli.keep_going || file.keep_going.unwrap_or(false),
            file,
        })
    }

    fn resolved<S: Serialize>(&self, command: &'static str, settings: S) -> Resolved<S> {
        Resolved {
            command,
            seed: self.seed,
            out: self.out.clone(),
            format: self.format,
            decimate: self.decimate,
            keep_going: self.keep_going,
            settings,
        }
    }
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let g = Globals::resolve(&cli)?;
    match &cli.command {
        Command::GenWaveform(a) => gen_waveform(&g, a),
        Command::Simulate(a) => simulate(&g, a),
        Command::Process(a) => process(&g, a),
        Command::Fit(a) => fit(&g, a),
        Command::Report(a) => report(&g, a),
    }
}

#[derive(Debug, Serialize)]
struct WaveformSidecar {
    sample_rate_hz: f64,
    center_freq_hz: f64,
    sequence_len: usize,
    periods: usize,
    frame_len: usize,
    degree: u32,
    taps: Vec<u32>,
    lfsr_seed: u32,
    repeats: usize,
    processing_gain_db: f64,
    seed: u64,
}

fn gen_waveform(g: &Globals, a: &WaveformArgs) -> Result<ExitCode> {
    let w = &g.file.waveform;
    let degree = pick(a.degree, w.degree, DEFAULT_DEGREE);
    let taps = match a.taps.clone().or_else(|| w.taps.clone()) {
        Some(t) => t,
        None => default_taps(degree)
            .with_context(|| format!("no default taps for degree {degree}; pass --taps"))?
            .to_vec(),
    };
    let lfsr_seed = pick(a.lfsr_seed, w.lfsr_seed, 1);
    let repeats = pick(a.repeats, w.repeats, 8);
    let periods = pick(a.periods, w.periods, 20);

    let seq = generate_mseq(&MSequenceSpec::new(degree, taps.clone(), lfsr_seed))?;
    let reference = CorrelatorReference::<f64>::new(&seq, repeats, 1)?;
    let frame = build_frame_at::<f32>(&seq, periods, 1, DEFAULT_CHIP_RATE_HZ as f32)?;
    let iq: Vec<Complex<f32>> = frame.to_iq(1.0);

    let sidecar = WaveformSidecar {
        sample_rate_hz: DEFAULT_CHIP_RATE_HZ,
        center_freq_hz: CENTER_FREQ_HZ,
        sequence_len: seq.len(),
        periods,
        frame_len: iq.len(),
        degree,
        taps,
        lfsr_seed,
        repeats,
        processing_gain_db: reference.processing_gain_db(),
        seed: g.seed,
    };
    std::fs::create_dir_all(&g.out)
        .with_context(|| format!("{}: cannot create output directory", g.out.display()))?;
    write_cf32(&g.out.join("waveform.cf32"), &iq)?;
    write_json(&g.out.join("waveform.json"), &sidecar)?;
    g.resolved("gen-waveform", &sidecar).write()?;

    println!("sequence length {}", sidecar.sequence_len);
    println!("processing gain {:.2} dB ({} repeats)", sidecar.processing_gain_db, repeats);
    println!("wrote {} samples to {}", iq.len(), g.out.join("waveform.cf32").display());
    Ok(ExitCode::SUCCESS)
}

fn simulate(g: &Globals, a: &SimulateArgs) -> Result<ExitCode> {
    let preset = a
        .preset
        .or(g.file.preset)
        .context("a preset is required (--preset a2a|a2g or \"preset\" in the config file)")?;
    let mut o = g.file.scenario.clone();
    o.seed = Some(g.seed);
    o.decimate = Some(g.decimate);
    o.speed_mps = a.speed_mps.or(o.speed_mps);
    o.track_length_m = a.track_length_m.or(o.track_length_m);
    o.snapshot_period_ms = a.snapshot_period_ms.or(o.snapshot_period_ms);
    o.tx_power_dbm = a.tx_power_dbm.or(o.tx_power_dbm);
    o.cfo_hz = a.cfo_hz.or(o.cfo_hz);
    o.shadowing_db = a.shadowing_db.or(o.shadowing_db);
    o.repeats = a.repeats.or(o.repeats);
    if let Some(c) = a.channel {
        o.channel = Some(match c {
            ChannelArg::FreeSpace => PathLossKind::FreeSpace,
            ChannelArg::Fe2r => PathLossKind::FlatEarthTwoRay { reflection: Reflection::default() },
            ChannelArg::LogDistance => {
                PathLossKind::LogDistance(LogDistanceParams { eta: a.eta, pl0_db: a.pl0_db, d0: 1.0 })
            }
        });
    }
    if a.no_noise {
        o.noise = Some(NoiseSpec::None);
    } else if let Some(snr_db) = a.snr_db {
        o.noise = Some(NoiseSpec::Snr { snr_db });
    } else if let Some(noise_figure_db) = a.noise_figure_db {
        o.noise = Some(NoiseSpec::Thermal { noise_figure_db });
    }
    if let Some(samples) = a.timing_offset_samples {
        o.timing = Some(TimingSpec::Fixed { samples });
    }
    if let Some(p) = &a.tx_antenna {
        o.tx_antenna = Some(AntennaSpec::Pattern { path: absolute(p)? });
    }
    if let Some(p) = &a.rx_antenna {
        o.rx_antenna = Some(AntennaSpec::Pattern { path: absolute(p)? });
    }

    let scenario = build_scenario(preset, &o)?;
    let summary = simulate_campaign(&scenario, &g.out, None)?;
    let digest = sha256_file(&g.out.join(IQ_FILE))?;
    std::fs::write(g.out.join(CHECKSUM_FILE), format!("{digest}  {IQ_FILE}\n"))
        .with_context(|| format!("{}: write failed", g.out.join(CHECKSUM_FILE).display()))?;
    g.resolved("simulate", &scenario).write()?;

    println!("snapshots {}", summary.snapshots);
    println!("iq bytes {}", summary.iq_bytes);
    println!("sha256 {digest}");
    println!("record {}", summary.dir.display());
    Ok(ExitCode::SUCCESS)
}

fn process(g: &Globals, a: &ProcessArgs) -> Result<ExitCode> {
    let record = MeasurementRecord::open(&a.record)?;
    let p = &g.file.process;
    let defaults = CirConfig::<f64>::default();
    let config = ProcessConfig {
        cir: CirConfig {
            threshold_db: pick(a.threshold_db, p.threshold_db, defaults.threshold_db),
            noise_guard_db: pick(a.noise_guard_db, p.noise_guard_db, defaults.noise_guard_db),
            detection_db: pick(a.detection_db, p.detection_db, defaults.detection_db),
            ..defaults
        },
        repeats: a.repeats.or(p.repeats),
        power_mode: if a.direct_only {
            PowerMode::DirectOnly
        } else {
            p.power_mode.unwrap_or_default()
        },
        d0_m: pick(a.d0_m, p.d0_m, 1.0),
        estimate_cfo: !a.no_cfo && p.estimate_cfo.unwrap_or(true),
        keep_going: g.keep_going,
        ..ProcessConfig::default()
    };

    let results = process_campaign(&record, &config)?;
    write_campaign_results(&g.out, &results, g.format)?;
    g.resolved("process", &config).write()?;

    let s = &results.summary;
    println!("processed {} of {} snapshots", s.processed, s.snapshots);
    if let Some(f) = &s.fit {
        print_fit(f);
    }
    if let Some(st) = &s.sigma_tau_ns {
        println!("sigma_tau mean {:.2} ns, median {:.2} ns", st.mean, st.median);
    }
    println!("summary {}", g.out.join(SUMMARY_FILE).display());

    let dropped = s.excluded_no_signal + s.failed;
    if dropped > 0 {
        eprintln!(
            "{} snapshots without a detectable signal, {} failed (see {})",
            s.excluded_no_signal,
            s.failed,
            g.out.join(SUMMARY_FILE).display()
        );
        if !g.keep_going {
            eprintln!("rerun with --keep-going to accept a partial campaign");
            return Ok(ExitCode::FAILURE);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn fit(g: &Globals, a: &FitArgs) -> Result<ExitCode> {
    let rows = read_results(&a.results)?;
    let d0 = pick(a.d0_m, g.file.process.d0_m, 1.0);
    let samples: Vec<_> = rows
        .iter()
        .map(|r| PathLossSample { distance: r.distance_m, pl_db: r.pl_db, time_ns: r.time_ns })
        .collect();
    let fit = fit_path_loss(&samples, d0)?;
    std::fs::create_dir_all(&g.out)
        .with_context(|| format!("{}: cannot create output directory", g.out.display()))?;
    write_json(&g.out.join(FIT_FILE), &fit)?;
    g.resolved("fit", serde_json::json!({ "results": a.results, "d0_m": d0 })).write()?;
    print_fit(&fit);
    Ok(ExitCode::SUCCESS)
}

fn report(g: &Globals, a: &ReportArgs) -> Result<ExitCode> {
    let record = MeasurementRecord::open(&a.record)?;
    let rows = read_results(&a.results)?;
    let cirs_path = if a.results.is_dir() {
        a.results.join(sounder_core::campaign::process::CIRS_FILE)
    } else {
        a.results
            .parent()
            .unwrap_or(Path::new("."))
            .join(sounder_core::campaign::process::CIRS_FILE)
    };
    let cirs = read_cirs(&cirs_path)?;
    let d0 = g.file.process.d0_m.unwrap_or(1.0);
    let samples: Vec<_> = rows
        .iter()
        .map(|r| PathLossSample { distance: r.distance_m, pl_db: r.pl_db, time_ns: r.time_ns })
        .collect();
    // Too few rows to fit still yields the measured and reference columns.
    let fit = fit_path_loss(&samples, d0).ok();
    write_reports(&g.out, &record, &rows, &cirs, fit.as_ref())?;
    g.resolved("report", serde_json::json!({ "record": a.record, "results": a.results }))
        .write()?;
    println!("wrote reports for {} rows to {}", rows.len(), g.out.display());
    Ok(ExitCode::SUCCESS)
}

fn print_fit(f: &PathLossFit<f64>) {
    println!("eta {:.4}", f.eta);
    println!("pl0 {:.2} dB at d0 {} m", f.pl0_db, f.d0);
    println!("sigma_zeta {:.2} dB", f.sigma_zeta_db);
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("{}: write failed", path.display()))
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("{}: bad path", p.display()))
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).with_context(|| format!("{}: cannot open", path.display()))?;
    let mut h = Sha256::new();
    std::io::copy(&mut f, &mut h).with_context(|| format!("{}: read failed", path.display()))?;
    Ok(hex::encode(h.finalize()))
}
