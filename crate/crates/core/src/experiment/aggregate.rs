//! Accuracy tables from stored run records.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::experiment::sweep::{summarize, Summary};
use crate::experiment::train::RunRecord;
use crate::nn::ActivationKind;

/// One table row: activation, BN flag, BGN flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowKey {
    pub activation: ActivationKind,
    pub bn: bool,
    pub bgn: bool,
}

/// The twelve rows in table order: ReLU, sigmoid, tanh, each with
/// BN off/on and BGN off/on.
pub fn table_row_keys() -> Vec<RowKey> {
    let mut keys = Vec::with_capacity(12);
    for activation in [ActivationKind::Relu, ActivationKind::Sigmoid, ActivationKind::Tanh] {
        for bn in [false, true] {
            for bgn in [false, true] {
                keys.push(RowKey { activation, bn, bgn });
            }
        }
    }
    keys
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    /// Learning rate whose runs make up the cell.
    pub lr: f64,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub key: RowKey,
    /// One entry per depth column; `None` where that group has no records.
    pub cells: Vec<Option<Cell>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub depths: Vec<usize>,
    pub rows: Vec<TableRow>,
}

/// Summarizes one (activation, BN, BGN, depth) group.
///
/// A sweep stores exploratory runs for every learning rate plus the
/// confirmation runs at the winner, so the winner is the learning rate with
/// the most records. Ties go to the higher mean accuracy.
pub fn summarize_group(records: &[&RunRecord]) -> Option<Cell> {
    let mut by_lr: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in records {
        by_lr.entry(r.lr.to_bits()).or_default().push(r.test_accuracy);
    }
    by_lr
        .into_iter()
        .filter_map(|(bits, accs)| summarize(&accs).map(|s| (f64::from_bits(bits), s)))
        .max_by(|(la, a), (lb, b)| {
            a.n.cmp(&b.n)
                .then(a.mean.total_cmp(&b.mean))
                .then(lb.total_cmp(la))
        })
        .map(|(lr, summary)| Cell { lr, summary })
}

/// Builds the table. Rows with no records at any depth are omitted with a
/// warning; records with non-standard activations are ignored.
pub fn aggregate_table(records: &[RunRecord]) -> Table {
    let mut depths: Vec<usize> = records.iter().map(|r| r.depth).collect();
    depths.sort_unstable();
    depths.dedup();

    let mut groups: BTreeMap<(RowKey, usize), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        let key = RowKey {
            activation: r.activation,
            bn: r.bn,
            bgn: r.bgn,
        };
        groups.entry((key, r.depth)).or_default().push(r);
    }

    let mut rows = Vec::new();
    for key in table_row_keys() {
        let cells: Vec<Option<Cell>> = depths
            .iter()
            .map(|&d| groups.get(&(key, d)).and_then(|g| summarize_group(g)))
            .collect();
        if cells.iter().all(Option::is_none) {
            log::warn!(
                "no records for {} bn={} bgn={}; row omitted",
                key.activation,
                key.bn,
                key.bgn
            );
            continue;
        }
        rows.push(TableRow { key, cells });
    }
    Table { depths, rows }
}

/// Plain-text rendering, one row per line.
pub fn format_table(table: &Table) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<8} {:<5} {:<5}", "act", "bn", "bgn");
    for d in &table.depths {
        let _ = write!(out, " {:>15}", format!("{d} layers"));
    }
    out.push('\n');
    for row in &table.rows {
        let _ = write!(
            out,
            "{:<8} {:<5} {:<5}",
            row.key.activation.to_string(),
            row.key.bn,
            row.key.bgn
        );
        for cell in &row.cells {
            let text = match cell {
                Some(c) => match c.summary.std {
                    Some(s) => format!("{:.3} ± {:.3}", c.summary.mean, s),
                    None => format!("{:.3}", c.summary.mean),
                },
                None => "-".to_string(),
            };
            let _ = write!(out, " {text:>15}");
        }
        out.push('\n');
    }
    out
}
