use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chanmodel::{PathLossKind, Reflection, THERMAL_NOISE_DBM_HZ};
use crate::error::{Error, Result};
use crate::geometry::{ecef_from_geodetic, fix_from_enu, AntennaPattern, GeoFix};
use crate::waveform::{MSequenceSpec, DEFAULT_CHIP_RATE_HZ};

/// Test-site reference point; only the relative geometry matters.
pub const SITE_LAT_DEG: f64 = 40.786;
pub const SITE_LON_DEG: f64 = 29.450;

/// 2023-10-01T00:00:00Z, an arbitrary but realistic epoch.
pub const DEFAULT_START_NS: i64 = 1_696_118_400_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    A2a,
    A2g,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a2a" => Ok(Preset::A2a),
            "a2g" => Ok(Preset::A2g),
            other => Err(Error::invalid(format!("unknown preset {other:?} (expected a2a or a2g)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RxMode {
    AirborneStatic,
    GroundMast,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub alt_m: f64,
}

impl Waypoint {
    fn fix(&self, time_ns: i64) -> GeoFix<f64> {
        GeoFix::new(time_ns, self.lat_deg, self.lon_deg, self.alt_m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    None,
    /// kTB floor plus receiver noise figure.
    Thermal { noise_figure_db: f64 },
    /// Per-sample SNR relative to each snapshot's received power.
    Snr { snr_db: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimingSpec {
    /// Same capture offset for every snapshot, samples.
    Fixed { samples: usize },
    /// Uniform offset in `0..max_samples`, drawn per snapshot.
    Random { max_samples: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AntennaSpec {
    Isotropic { gain_dbi: f64 },
    /// Pattern CSV (`az_deg,el_deg,gain_dbi`).
    Pattern { path: PathBuf },
}

impl Default for AntennaSpec {
    fn default() -> Self {
        AntennaSpec::Isotropic { gain_dbi: 0.0 }
    }
}

impl AntennaSpec {
    pub fn load(&self) -> Result<AntennaPattern<f64>> {
        match self {
            AntennaSpec::Isotropic { gain_dbi } => Ok(AntennaPattern::isotropic(*gain_dbi)),
            AntennaSpec::Pattern { path } => AntennaPattern::read_csv(path),
        }
    }

    /// Resolves a relative pattern path against `base`.
    pub fn relative_to(&self, base: &Path) -> Self {
        match self {
            AntennaSpec::Pattern { path } if path.is_relative() => AntennaSpec::Pattern {
                path: base.join(path),
            },
            other => other.clone(),
        }
    }
}

/// Additional specular path relative to the direct ray.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtraPath {
    pub excess_delay_ns: f64,
    pub rel_gain_db: f64,
    #[serde(default)]
    pub phase_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignScenario {
    pub preset: Preset,
    pub rx_mode: RxMode,
    pub rx: Waypoint,
    /// Terrain height used as the reflecting plane, meters.
    pub ground_alt_m: f64,
    pub tx_waypoints: Vec<Waypoint>,
    pub speed_mps: f64,
    pub start_time_ns: i64,
    pub snapshot_period_ms: f64,
    pub log_period_ms: f64,
    pub center_freq_hz: f64,
    pub chip_rate_hz: f64,
    pub waveform: MSequenceSpec,
    /// Sequence periods captured per snapshot.
    pub periods_per_snapshot: usize,
    /// Periods coherently averaged by the correlator.
    pub repeats: usize,
    pub tx_power_dbm: f64,
    pub channel: PathLossKind<f64>,
    pub noise: NoiseSpec,
    pub cfo_hz: f64,
    pub timing: TimingSpec,
    pub tx_antenna: AntennaSpec,
    pub rx_antenna: AntennaSpec,
    pub extra_paths: Vec<ExtraPath>,
    /// Log-normal shadowing standard deviation, dB.
    pub shadowing_db: f64,
    /// Keep every Nth snapshot.
    pub decimate: usize,
    pub seed: u64,
}

/// Scalar fields that may be changed on top of a preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioOverrides {
    pub speed_mps: Option<f64>,
    pub track_length_m: Option<f64>,
    pub initial_separation_m: Option<f64>,
    pub tx_alt_m: Option<f64>,
    pub rx_alt_m: Option<f64>,
    pub snapshot_period_ms: Option<f64>,
    pub tx_power_dbm: Option<f64>,
    pub channel: Option<PathLossKind<f64>>,
    pub noise: Option<NoiseSpec>,
    pub cfo_hz: Option<f64>,
    pub timing: Option<TimingSpec>,
    pub tx_antenna: Option<AntennaSpec>,
    pub rx_antenna: Option<AntennaSpec>,
    pub extra_paths: Option<Vec<ExtraPath>>,
    pub shadowing_db: Option<f64>,
    pub repeats: Option<usize>,
    pub decimate: Option<usize>,
    pub seed: Option<u64>,
}

/// Builds a preset flight.
///
/// Both presets fly the TX from 85 m east of the RX along a 1 km straight
/// eastward track at 3 m/s and 100 m altitude. `a2a` holds the RX static at
/// 100 m; `a2g` puts it on a 3 m mast.
pub fn build_scenario(preset: Preset, overrides: &ScenarioOverrides) -> Result<CampaignScenario> {
    let o = overrides;
    let (rx_mode, rx_alt_default) = match preset {
        Preset::A2a => (RxMode::AirborneStatic, 100.0),
        Preset::A2g => (RxMode::GroundMast, 3.0),
    };
    let rx_alt = o.rx_alt_m.unwrap_or(rx_alt_default);
    let tx_alt = o.tx_alt_m.unwrap_or(100.0);
    let start = o.initial_separation_m.unwrap_or(85.0);
    let length = o.track_length_m.unwrap_or(1000.0);
    if !(length >= 0.0) || !(start >= 0.0) {
        return Err(Error::invalid("track length and separation must be nonnegative"));
    }

    let ground = GeoFix::new(0, SITE_LAT_DEG, SITE_LON_DEG, 0.0);
    let waypoint = |east: f64, alt: f64| {
        let f = fix_from_enu(&ground, [east, 0.0, 0.0]);
        Waypoint { lat_deg: f.lat_deg, lon_deg: f.lon_deg, alt_m: alt }
    };
    let rx = Waypoint { lat_deg: SITE_LAT_DEG, lon_deg: SITE_LON_DEG, alt_m: rx_alt };
    let mut tx_waypoints = vec![waypoint(start, tx_alt)];
    if length > 0.0 {
        tx_waypoints.push(waypoint(start + length, tx_alt));
    }

    let scenario = CampaignScenario {
        preset,
        rx_mode,
        rx,
        ground_alt_m: 0.0,
        tx_waypoints,
        speed_mps: o.speed_mps.unwrap_or(3.0),
        start_time_ns: DEFAULT_START_NS,
        snapshot_period_ms: o.snapshot_period_ms.unwrap_or(100.0),
        log_period_ms: 200.0,
        center_freq_hz: 3.5e9,
        chip_rate_hz: DEFAULT_CHIP_RATE_HZ,
        waveform: MSequenceSpec::default(),
        periods_per_snapshot: 20,
        repeats: o.repeats.unwrap_or(8),
        tx_power_dbm: o.tx_power_dbm.unwrap_or(30.0),
        channel: o.channel.clone().unwrap_or(PathLossKind::FlatEarthTwoRay {
            reflection: Reflection::default(),
        }),
        noise: o.noise.unwrap_or(NoiseSpec::Thermal { noise_figure_db: 5.0 }),
        cfo_hz: o.cfo_hz.unwrap_or(35.0),
        timing: o.timing.unwrap_or(TimingSpec::Random { max_samples: 4095 }),
        tx_antenna: o.tx_antenna.clone().unwrap_or_default(),
        rx_antenna: o.rx_antenna.clone().unwrap_or_default(),
        extra_paths: o.extra_paths.clone().unwrap_or_default(),
        shadowing_db: o.shadowing_db.unwrap_or(0.0),
        decimate: o.decimate.unwrap_or(1),
        seed: o.seed.unwrap_or(0),
    };
    scenario.validate()?;
    Ok(scenario)
}

impl CampaignScenario {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{what} must be positive, got {v}")))
            }
        };
        positive(self.speed_mps, "speed")?;
        positive(self.snapshot_period_ms, "snapshot period")?;
        positive(self.log_period_ms, "log period")?;
        positive(self.center_freq_hz, "center frequency")?;
        positive(self.chip_rate_hz, "chip rate")?;
        if self.tx_waypoints.is_empty() {
            return Err(Error::invalid("trajectory needs at least one waypoint"));
        }
        for w in self.tx_waypoints.iter().chain(std::iter::once(&self.rx)) {
            w.fix(0).validate()?;
        }
        if self.decimate == 0 {
            return Err(Error::invalid("decimation factor must be at least 1"));
        }
        if !(1..=self.periods_per_snapshot).contains(&self.repeats) {
            return Err(Error::invalid(format!(
                "repeats {} must lie in 1..={} periods per snapshot",
                self.repeats, self.periods_per_snapshot
            )));
        }
        if self.periods_per_snapshot < 2 {
            return Err(Error::invalid("snapshots need at least two periods for CFO tracking"));
        }
        if !(self.shadowing_db >= 0.0) {
            return Err(Error::invalid("shadowing std must be nonnegative"));
        }
        if let NoiseSpec::Thermal { noise_figure_db } = self.noise {
            if !noise_figure_db.is_finite() {
                return Err(Error::invalid("noise figure must be finite"));
            }
        }
        if !(self.cfo_hz.abs() < self.chip_rate_hz / 100.0) {
            return Err(Error::invalid(format!("CFO {} Hz too large", self.cfo_hz)));
        }
        if let TimingSpec::Random { max_samples: 0 } = self.timing {
            return Err(Error::invalid("random timing range must be nonzero"));
        }
        self.waveform.validate()?;
        Ok(())
    }

    /// Total trajectory length along the waypoints, meters.
    pub fn track_length(&self) -> f64 {
        self.tx_waypoints
            .windows(2)
            .map(|w| {
                ecef_from_geodetic(&w[1].fix(0))
                    .sub(ecef_from_geodetic(&w[0].fix(0)))
                    .norm()
            })
            .sum()
    }

    pub fn duration_ns(&self) -> i64 {
        (self.track_length() / self.speed_mps * 1e9).round() as i64
    }

    pub fn snapshot_period_ns(&self) -> i64 {
        (self.snapshot_period_ms * 1e6).round() as i64
    }

    /// Number of snapshots over the flight before decimation.
    pub fn full_snapshot_count(&self) -> usize {
        (self.duration_ns() / self.snapshot_period_ns()) as usize + 1
    }

    /// Indices (into the full-rate sequence) that are simulated.
    pub fn snapshot_indices(&self) -> Vec<usize> {
        (0..self.full_snapshot_count()).step_by(self.decimate).collect()
    }

    pub fn snapshot_time_ns(&self, index: usize) -> i64 {
        self.start_time_ns + index as i64 * self.snapshot_period_ns()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.chip_rate_hz
    }

    pub fn snapshot_len(&self) -> usize {
        self.waveform.period() * self.periods_per_snapshot
    }

    pub fn rx_fix(&self, time_ns: i64) -> GeoFix<f64> {
        self.rx.fix(time_ns)
    }

    /// TX position at time `t` under constant speed along the waypoints.
    pub fn tx_fix(&self, time_ns: i64) -> GeoFix<f64> {
        let mut remaining = (time_ns - self.start_time_ns).max(0) as f64 * 1e-9 * self.speed_mps;
        for w in self.tx_waypoints.windows(2) {
            let a = ecef_from_geodetic(&w[0].fix(0));
            let b = ecef_from_geodetic(&w[1].fix(0));
            let leg = b.sub(a).norm();
            if remaining <= leg && leg > 0.0 {
                let p = a.add(b.sub(a).scale(remaining / leg));
                let (lat, lon, alt) = crate::geometry::geodetic_from_ecef(p);
                return GeoFix::new(time_ns, lat, lon, alt);
            }
            remaining -= leg;
        }
        self.tx_waypoints[self.tx_waypoints.len() - 1].fix(time_ns)
    }

    /// Noise density for a snapshot with total received power `rx_power_mw`.
    pub fn noise_psd(&self, rx_power_mw: f64) -> Option<f64> {
        match self.noise {
            NoiseSpec::None => None,
            NoiseSpec::Thermal { noise_figure_db } => Some(THERMAL_NOISE_DBM_HZ + noise_figure_db),
            NoiseSpec::Snr { snr_db } => {
                Some(10.0 * rx_power_mw.log10() - snr_db - 10.0 * self.sample_rate_hz().log10())
            }
        }
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile { path: path.to_path_buf() },
            _ => Error::io(path, e),
        })?;
        let s: Self = serde_json::from_str(&text).map_err(|e| Error::malformed(path, e))?;
        s.validate()?;
        Ok(s)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("scenario serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
