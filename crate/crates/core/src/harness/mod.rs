//! Experiment plumbing: TOML configs, the training loop, learning-rate
//! sweeps across a scale ladder, collapse runs, cross-scale denoising and
//! the emitted artifacts.

mod config;
mod denoise;
mod output;
mod train;

pub use config::{
    budget_warning, estimate_seconds, Cadence, ExperimentConfig, Log2Range, ModelConfig, OptimizerConfig,
    OutputConfig, SweepConfig, DEFAULT_FLOPS, SCHEMA_VERSION,
};
pub use denoise::{denoise_compare, emit_denoise, DenoiseReport};
pub use output::{
    emit_all, emit_csv, emit_final_csv, emit_svg, final_mse_chart, fmt_f64, load_model, save_model, trace_chart,
    write_pgm, Chart, Series, FINAL_COLUMNS, TRACE_COLUMNS,
};
pub use train::{
    cell_data, collapse_experiment, lr_sweep, relative_spread, train, train_cell, Cell, CellResult, Source,
    SweepResult, TrainOutput, BLOWUP_FACTOR, UNSTABLE_FACTOR,
};
