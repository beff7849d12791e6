//! Latent maps, learning curves, structure scores and comparison tables.

pub mod curves;
pub mod dump;
pub mod pca;
pub mod plot;
pub mod report;
pub mod structure;

pub use curves::{
    aggregate_curves, moving_average, runs_from_records, split_by_seed, steps_to_threshold, summarize_run, CurveSet,
    Metric, Run, RunSummary,
};
pub use dump::{dump_grid_cells, dump_grid_samples, dump_nav_samples, DumpRow, LatentDump};
pub use pca::{pca_project, Pca};
pub use plot::{curves_csv, plot_curves, plot_latent_map, LatentMap};
pub use report::{report_csv, report_markdown, summarize, ReportRow};
pub use structure::{mean_pairwise_distance, neighborhood_consistency, random_control, NeighborhoodScore};
