//! Per-layer gradient and weight-change statistics, with CSV export.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::network::Network;
use crate::nn::batchnorm::Mode;
use crate::tape::Tape;
use crate::tensor::Tensor;

pub const GRADIENT_HEADER: &str = "run_id,phase,layer_index,delta_norm,weight_grad_norm,bgn_factor";
pub const WEIGHT_CHANGE_HEADER: &str = "run_id,layer_index,mean_abs_change";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    AtInit,
    PostTraining,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub run_id: String,
    pub phase: Phase,
    /// 1-based, input side first.
    pub layer_index: usize,
    /// Norm of the pre-activation gradient. With BGN this is the gradient
    /// leaving the BGN node.
    pub delta_norm: f64,
    pub weight_grad_norm: f64,
    /// `‖g‖ / κ` for the gradient entering the layer's BGN node.
    pub bgn_factor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightChangeRecord {
    pub run_id: String,
    pub layer_index: usize,
    pub mean_abs_change: f64,
}

/// One forward and backward pass in train mode on `(x, y)`, without any
/// parameter or running-statistic update. Returns one record per hidden layer.
pub fn snapshot_gradient_norms(
    network: &Network,
    x: &Tensor,
    y: &Tensor,
    phase: Phase,
    run_id: &str,
) -> Result<Vec<TelemetryRecord>> {
    let mut tape = Tape::new();
    let pass = network.forward(&mut tape, x, Mode::Train)?;
    let loss = tape.softmax_cross_entropy(pass.logits, y)?;
    let grads = tape.backward(loss)?;
    pass.layers
        .iter()
        .map(|tap| {
            let delta = grads
                .wrt(tap.slot)
                .ok_or_else(|| Error::Usage(format!("no gradient for layer {}", tap.layer)))?;
            let weight = grads
                .param(tap.weight_id)
                .ok_or_else(|| Error::Usage(format!("no weight gradient for layer {}", tap.layer)))?;
            let bgn_factor = grads
                .bgn_trace()
                .iter()
                .find(|t| t.layer == Some(tap.layer))
                .map(|t| t.factor);
            Ok(TelemetryRecord {
                run_id: run_id.to_string(),
                phase,
                layer_index: tap.layer,
                delta_norm: delta.l2_norm(),
                weight_grad_norm: weight.l2_norm(),
                bgn_factor,
            })
        })
        .collect()
}

/// Mean absolute elementwise change of each hidden weight matrix.
pub fn weight_change(before: &[Tensor], after: &[Tensor], run_id: &str) -> Result<Vec<WeightChangeRecord>> {
    if before.len() != after.len() {
        return Err(Error::Usage(format!(
            "architecture mismatch: {} layers before, {} after",
            before.len(),
            after.len()
        )));
    }
    before
        .iter()
        .zip(after)
        .enumerate()
        .map(|(k, (b, a))| {
            let diff = a.sub(b)?;
            let total: f64 = diff.data().iter().map(|v| v.abs()).sum();
            Ok(WeightChangeRecord {
                run_id: run_id.to_string(),
                layer_index: k + 1,
                mean_abs_change: total / diff.len() as f64,
            })
        })
        .collect()
}

/// Writes `header` and then one serialized row per item, LF terminated.
pub(crate) fn write_rows<T: Serialize>(
    path: &Path,
    header: &str,
    rows: impl IntoIterator<Item = T>,
) -> Result<()> {
    let mut file = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    writeln!(file, "{header}").map_err(|e| Error::io(path, e))?;
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file);
    for row in rows {
        writer.serialize(row).map_err(|e| Error::csv(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::csv(path, e))
}

/// Rows are sorted by `(run_id, phase, layer_index)`.
pub fn write_gradient_csv(path: impl AsRef<Path>, records: &[TelemetryRecord]) -> Result<()> {
    let mut sorted: Vec<&TelemetryRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.run_id, a.phase, a.layer_index).cmp(&(&b.run_id, b.phase, b.layer_index))
    });
    write_rows(path.as_ref(), GRADIENT_HEADER, sorted)
}

pub fn read_gradient_csv(path: impl AsRef<Path>) -> Result<Vec<TelemetryRecord>> {
    read_rows(path.as_ref())
}

/// Rows are sorted by `(run_id, layer_index)`.
pub fn write_weight_change_csv(path: impl AsRef<Path>, records: &[WeightChangeRecord]) -> Result<()> {
    let mut sorted: Vec<&WeightChangeRecord> = records.iter().collect();
    sorted.sort_by(|a, b| (&a.run_id, a.layer_index).cmp(&(&b.run_id, b.layer_index)));
    write_rows(path.as_ref(), WEIGHT_CHANGE_HEADER, sorted)
}

pub fn read_weight_change_csv(path: impl AsRef<Path>) -> Result<Vec<WeightChangeRecord>> {
    read_rows(path.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(run: &str, phase: Phase, layer: usize, factor: Option<f64>) -> TelemetryRecord {
        TelemetryRecord {
            run_id: run.into(),
            phase,
            layer_index: layer,
            delta_norm: 0.1 + layer as f64,
            weight_grad_norm: 1.0 / 3.0,
            bgn_factor: factor,
        }
    }

    #[test]
    fn weight_change_arithmetic() {
        let before = vec![Tensor::zeros([2, 2]), Tensor::full([2, 2], 1.0)];
        let mut after = before.clone();
        after[0].data_mut()[3] = 0.5;
        let out = weight_change(&before, &after, "r").unwrap();
        assert_eq!(out[0].mean_abs_change, 0.125);
        assert_eq!(out[1].mean_abs_change, 0.0);
        assert_eq!((out[0].layer_index, out[1].layer_index), (1, 2));
        assert!(weight_change(&before, &after[..1], "r").is_err());
        let wrong = vec![Tensor::zeros([2, 2]), Tensor::zeros([3, 2])];
        assert!(weight_change(&before, &wrong, "r").is_err());
    }

    #[test]
    fn gradient_csv_contract() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        let records = vec![
            rec("b", Phase::AtInit, 1, None),
            rec("a", Phase::PostTraining, 1, Some(0.25)),
            rec("a", Phase::AtInit, 2, Some(1e-30)),
            rec("a", Phase::AtInit, 1, Some(2.5)),
        ];
        write_gradient_csv(&path, &records).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains('\r'));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], GRADIENT_HEADER);
        assert_eq!(lines[1], "a,at-init,1,1.1,0.3333333333333333,2.5");
        assert_eq!(lines[4], "b,at-init,1,1.1,0.3333333333333333,");
        let back = read_gradient_csv(&path).unwrap();
        let expected = vec![
            records[3].clone(),
            records[2].clone(),
            records[1].clone(),
            records[0].clone(),
        ];
        assert_eq!(back, expected);
    }

    #[test]
    fn empty_exports_are_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let g = dir.path().join("g.csv");
        let w = dir.path().join("w.csv");
        write_gradient_csv(&g, &[]).unwrap();
        write_weight_change_csv(&w, &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&g).unwrap(), format!("{GRADIENT_HEADER}\n"));
        assert_eq!(std::fs::read_to_string(&w).unwrap(), format!("{WEIGHT_CHANGE_HEADER}\n"));
        assert!(read_gradient_csv(&g).unwrap().is_empty());
    }

    #[test]
    fn weight_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        let records = vec![
            WeightChangeRecord { run_id: "x".into(), layer_index: 2, mean_abs_change: 0.1 + 0.2 },
            WeightChangeRecord { run_id: "x".into(), layer_index: 1, mean_abs_change: 1e-300 },
        ];
        write_weight_change_csv(&path, &records).unwrap();
        let back = read_weight_change_csv(&path).unwrap();
        assert_eq!(back, vec![records[1].clone(), records[0].clone()]);
    }

    #[test]
    fn unwritable_path_names_the_file() {
        let err = write_weight_change_csv("/nonexistent-dir/w.csv", &[]).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/w.csv"));
    }
}
