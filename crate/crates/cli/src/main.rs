mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "chansound", version, about = "Correlation channel sounder for A2A/A2G drone links")]
pub struct Cli {
    /// Master RNG seed (recorded in every output).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Results table format.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Keep every Nth snapshot when simulating.
    #[arg(long, global = true)]
    pub decimate: Option<usize>,
    /// Summarize per-snapshot failures instead of aborting.
    #[arg(long, global = true)]
    pub keep_going: bool,
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the sounding frame and its sidecar.
    GenWaveform(WaveformArgs),
    /// Synthesize a measurement flight into a record directory.
    Simulate(SimulateArgs),
    /// Extract CIRs and metrics from a record.
    Process(ProcessArgs),
    /// Fit the log-distance model to a results table.
    Fit(FitArgs),
    /// Write plot-ready CSV bundles.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct WaveformArgs {
    #[arg(long)]
    pub degree: Option<u32>,
    /// Feedback taps, comma separated (defaults to the tabulated set).
    #[arg(long, value_delimiter = ',')]
    pub taps: Option<Vec<u32>>,
    /// Initial LFSR state.
    #[arg(long)]
    pub lfsr_seed: Option<u32>,
    /// Correlator repeats the gain line refers to.
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Sequence periods written to the frame.
    #[arg(long)]
    pub periods: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ChannelArg {
    FreeSpace,
    Fe2r,
    LogDistance,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<sounder_core::campaign::Preset>,
    #[arg(long, value_enum)]
    pub channel: Option<ChannelArg>,
    /// Path-loss exponent for the log-distance channel.
    #[arg(long, default_value_t = 2.0)]
    pub eta: f64,
    /// Intercept at 1 m for the log-distance channel.
    #[arg(long, default_value_t = 43.33)]
    pub pl0_db: f64,
    #[arg(long)]
    pub speed_mps: Option<f64>,
    #[arg(long)]
    pub track_length_m: Option<f64>,
    #[arg(long)]
    pub snapshot_period_ms: Option<f64>,
    #[arg(long)]
    pub tx_power_dbm: Option<f64>,
    /// Per-sample SNR; replaces the thermal noise model.
    #[arg(long, conflicts_with_all = ["noise_figure_db", "no_noise"])]
    pub snr_db: Option<f64>,
    #[arg(long, conflicts_with = "no_noise")]
    pub noise_figure_db: Option<f64>,
    #[arg(long)]
    pub no_noise: bool,
    #[arg(long)]
    pub cfo_hz: Option<f64>,
    /// Fixed capture timing offset instead of a random one.
    #[arg(long)]
    pub timing_offset_samples: Option<usize>,
    #[arg(long)]
    pub shadowing_db: Option<f64>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// TX antenna pattern CSV.
    #[arg(long)]
    pub tx_antenna: Option<PathBuf>,
    /// RX antenna pattern CSV.
    #[arg(long)]
    pub rx_antenna: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProcessArgs {
    /// Record directory produced by `simulate`.
    #[arg(long)]
    pub record: PathBuf,
    #[arg(long)]
    pub threshold_db: Option<f64>,
    #[arg(long)]
    pub noise_guard_db: Option<f64>,
    #[arg(long)]
    pub detection_db: Option<f64>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Use only the direct-path power for path loss.
    #[arg(long)]
    pub direct_only: bool,
    /// Skip CFO estimation.
    #[arg(long)]
    pub no_cfo: bool,
    #[arg(long)]
    pub d0_m: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Results table, or a directory holding one.
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub d0_m: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub record: PathBuf,
    /// Output directory of `process`.
    #[arg(long)]
    pub results: PathBuf,
}

fn parse_preset(s: &str) -> Result<sounder_core::campaign::Preset, String> {
    s.parse().map_err(|e: sounder_core::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
