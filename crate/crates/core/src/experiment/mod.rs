//! Network construction, training, learning-rate sweeps and result tables.

pub mod aggregate;
pub mod network;
pub mod records;
pub mod sweep;
pub mod train;

pub use aggregate::{aggregate_table, format_table, summarize_group, Cell, RowKey, Table, TableRow};
pub use network::{
    build_network, BnBgnOrder, ForwardPass, HiddenLayer, InitScheme, LayerTap, Network,
    NetworkConfig,
};
pub use records::{read_run_records, write_run_records, RUN_RECORDS_HEADER};
pub use sweep::{log_grid, run_one, summarize, sweep, LrGrid, Summary, SweepPlan, SweepResult};
pub use train::{
    evaluate, run_id, train, train_step, OptimizerKind, RunRecord, RunStatus, TrainOptions,
    DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS,
};
