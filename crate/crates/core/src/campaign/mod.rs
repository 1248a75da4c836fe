//! Scenario definition, synthetic flights, on-disk records and the batch
//! processing pipeline. Everything here is concrete on `f64`.

pub mod process;
pub mod record;
pub mod replay;
pub mod report;
pub mod scenario;
pub mod simulate;

pub use process::{
    process_campaign, read_cirs, read_results, write_campaign_results, CirLine, CampaignResults, CampaignSummary, ProcessConfig,
    ResultRow, TableFormat,
};
pub use record::{IqMetadata, MeasurementRecord, TruthRecord};
pub use replay::{replay_check, ReplayReport, ReplayTolerances};
pub use report::write_reports;
pub use scenario::{build_scenario, CampaignScenario, NoiseSpec, Preset, ScenarioOverrides};
pub use simulate::{simulate_campaign, SimulationSummary};
