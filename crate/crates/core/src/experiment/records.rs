//! Run-record persistence.

use std::path::Path;

use crate::error::{Error, Result};
use crate::experiment::train::RunRecord;

pub const RUN_RECORDS_HEADER: &str =
    "run_id,activation,bn,bgn,depth,width,lr,seed,epochs,batch_size,status,test_accuracy,train_loss,wall_time_s";

/// Writes records to `path`, sorted by `(run_id, lr, seed)`.
pub fn write_run_records(path: impl AsRef<Path>, records: &[RunRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        a.run_id
            .cmp(&b.run_id)
            .then(a.lr.total_cmp(&b.lr))
            .then(a.seed.cmp(&b.seed))
    });
    crate::telemetry::write_rows(path, RUN_RECORDS_HEADER, sorted)
}

pub fn read_run_records(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<RunRecord>, _>>()
        .map_err(|e| Error::csv(path, e))
}
