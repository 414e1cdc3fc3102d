//! Campaign orchestration: configuration, parallel runs and reports.

mod campaign;
mod config;
mod report;

pub use campaign::{
    repeated_phase, run_campaign, run_case, run_seed, splitmix64, CampaignRecord, CellRecord, GridRecord, RefinementRecord,
    RunOutcome, Execution, TOOL_VERSION,
};
pub use config::{load_config, parse_config, CampaignConfig, DynamicsSource, Format, OutputConfig, RefineConfig};
pub use report::{emit_grid, parse_csv, render, render_ansi, render_csv};
