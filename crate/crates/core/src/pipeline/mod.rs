//! Batch orchestration: seasons and windows, clustering, per-cluster
//! fitting, trend diagnostics, risk aggregation and report emission.

pub mod cluster;
pub mod config;
pub mod report;
pub mod run;
pub mod seasons;
pub mod svg;
pub mod trend;

pub use cluster::{kmeans_clusters, ClusterAssignment};
pub use config::PipelineConfig;
pub use run::{
    fit_cluster_window, fit_margins_whole, fit_stage, load_fits, load_run, prepare_run,
    risk_aggregate, risk_stage, run_full, write_margins_csv, ClusterWindowFit, RiskSummary,
    RunOutput,
};
pub use seasons::{decadal_windows, season_of, summer_seasons, SeasonPanel, WindowSpec};
pub use trend::{quantile_trend, TrendFit};
