//! Declarative experiments: configs, seeded runs, metrics files, solve
//! summaries, sweeps and plots.

pub mod config;
pub mod metrics;
pub mod plot;
pub mod runner;
pub mod summary;
pub mod sweep;

pub use config::{AgentSection, ExperimentConfig, ResolvedConfig, RunPlan, RunSection};
pub use metrics::{read_metrics_file, MetricsRecord, METRICS_COLUMNS};
pub use plot::plot_dir;
pub use runner::{run_experiment, run_experiment_pairs, run_single, RunOutput};
pub use summary::{episodes_to_solve, nearest_rank, summarize, SolveResult, SolveSummary};
pub use sweep::{expand_grid, plan_sweep, sweep};
