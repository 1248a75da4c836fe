//! Correlation channel sounder for air-to-air and air-to-ground drone links.
//!
//! The numerical modules are generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, which is what the campaign
//! pipeline and the CLI use.

pub mod campaign;
pub mod chanmodel;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod scalar;
pub mod sounder;
pub mod waveform;

pub use error::{Error, Result};
pub use scalar::{Real, SPEED_OF_LIGHT};

pub type Tap = chanmodel::ChannelTap<f64>;
pub type Realization = chanmodel::ChannelRealization<f64>;
pub type PathLossModel = chanmodel::PathLossModelParams<f64>;
pub type Impairments = chanmodel::ImpairmentSpec<f64>;
pub type Fix = geometry::GeoFix<f64>;
pub type Geometry = geometry::LinkGeometry<f64>;
pub type Track = geometry::FlightLog<f64>;
pub type Pattern = geometry::AntennaPattern<f64>;
pub type Frame = waveform::SoundingFrame<f64>;
pub type Reference = waveform::CorrelatorReference<f64>;
pub type Snapshot = sounder::IqSnapshot<f64>;
pub type Profile = sounder::CorrelationProfile<f64>;
pub type Cir = sounder::CirEstimate<f64>;
pub type Pdp = sounder::PowerDelayProfile<f64>;
pub type DelaySpread = metrics::DelaySpreadResult<f64>;
pub type PathLossFit = metrics::PathLossFit<f64>;
pub type Stats = metrics::CampaignStats<f64>;
