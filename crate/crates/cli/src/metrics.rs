//! Per-epoch metrics rows and their CSV form.

use std::fmt::Write as _;

pub const HEADER_COMMENT: &str = "# modenorm metrics v1";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    /// `train`, `test`, or `abort` for the diagnostic row of a failed run.
    pub split: String,
    pub loss: f64,
    pub error_rate: f64,
    pub gate_usage: Vec<f64>,
}

/// Header comment, column names, then one line per row. Floats use the
/// shortest representation that round-trips.
pub fn to_csv(rows: &[MetricsRow], modes: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{HEADER_COMMENT}");
    s.push_str("epoch,split,loss,error_rate");
    for k in 1..=modes {
        let _ = write!(s, ",gate_usage_{k}");
    }
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{},{},{},{}", r.epoch, r.split, r.loss, r.error_rate);
        for k in 0..modes {
            let _ = write!(s, ",{}", r.gate_usage.get(k).copied().unwrap_or(f64::NAN));
        }
        s.push('\n');
    }
    s
}
