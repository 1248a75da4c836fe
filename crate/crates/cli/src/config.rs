//! Layered run configuration: built-in defaults, then an optional JSON
//! config file, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sounder_core::campaign::{Preset, ScenarioOverrides, TableFormat};
use sounder_core::metrics::PowerMode;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveformLayer {
    pub degree: Option<u32>,
    pub taps: Option<Vec<u32>>,
    pub lfsr_seed: Option<u32>,
    pub repeats: Option<usize>,
    pub periods: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessLayer {
    pub threshold_db: Option<f64>,
    pub noise_guard_db: Option<f64>,
    pub detection_db: Option<f64>,
    pub repeats: Option<usize>,
    pub power_mode: Option<PowerMode>,
    pub estimate_cfo: Option<bool>,
    pub d0_m: Option<f64>,
}

/// Contents of a `--config` file. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<TableFormat>,
    pub decimate: Option<usize>,
    pub keep_going: Option<bool>,
    pub preset: Option<Preset>,
    pub scenario: ScenarioOverrides,
    pub waveform: WaveformLayer,
    pub process: ProcessLayer,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("{}: cannot read config file", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("{}: invalid config file", path.display()))
    }
}

/// First present value wins; callers list flag, then file, then default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Fully resolved settings every command echoes to `config.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved<S: Serialize> {
    pub command: &'static str,
    pub seed: u64,
    pub out: PathBuf,
    pub format: TableFormat,
    pub decimate: usize,
    pub keep_going: bool,
    pub settings: S,
}

impl<S: Serialize> Resolved<S> {
    pub fn write(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out)
            .with_context(|| format!("{}: cannot create output directory", self.out.display()))?;
        let path = self.out.join("config.json");
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("{}: write failed", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        assert_eq!(pick(Some(1), Some(2), 3), 1);
        assert_eq!(pick(None, Some(2), 3), 2);
        assert_eq!(pick(None, None, 3), 3);
    }

    #[test]
    fn file_layers_parse() {
        let c: FileConfig = serde_json::from_str(
            r#"{"seed": 4, "preset": "a2g", "scenario": {"speed_mps": 6.0}, "process": {"threshold_db": 30}}"#,
        )
        .unwrap();
        assert_eq!(c.seed, Some(4));
        assert_eq!(c.preset, Some(Preset::A2g));
        assert_eq!(c.scenario.speed_mps, Some(6.0));
        assert_eq!(c.process.threshold_db, Some(30.0));
        assert!(serde_json::from_str::<FileConfig>(r#"{"sede": 4}"#).is_err());
    }
}
