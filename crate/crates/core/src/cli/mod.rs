//! Declarative runs: a TOML config selects a mode, the runner sweeps its
//! points over a worker pool and writes a canonical CSV plus a JSON report.

mod args;
mod config;
mod output;
mod runner;

pub use args::{execute, Cli, Command, RunArgs};
pub use config::{
    AnalysisSection, DmrgSection, EvolutionSection, GridSection, Mode, ModelSection, NoiseSection, OutputSection,
    PointRates, RunConfig,
};
pub use output::{read_rows, sort_rows, write_rows, CsvRow, PointKey, RowBase, CSV_COLUMNS};
pub use runner::{
    run, BoundaryReport, ConsistencyReport, FidelityPoint, FidelityReport, FidelitySeries, PairCrossing, ResidualEntry,
    ResidualRatio, RunOptions, RunSummary, SweepReport, CONFIG_FILE,
};
