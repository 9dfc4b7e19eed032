//! Batch-size × mode-count grid of training runs with per-cell medians.

use std::fmt::Write as _;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::train::cmd_train;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub batch_sizes: Vec<usize>,
    pub modes: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            batch_sizes: vec![32, 128, 512],
            modes: vec![1, 2, 4, 6],
            seeds: (0..5).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub batch_size: usize,
    pub modes: usize,
    pub seed: u64,
    /// `NaN` when the run failed.
    pub test_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellMedian {
    pub batch_size: usize,
    pub modes: usize,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub medians: Vec<CellMedian>,
}

/// Median of the finite values; `NaN` if there are none.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn cell_dir(batch_size: usize, modes: usize, seed: u64) -> String {
    format!("N{batch_size}_K{modes}_seed{seed}")
}

/// Run every cell with `cmd_train`, each writing into its own directory
/// under `base.out`. Failed cells are logged and recorded as `NaN`.
pub fn run_sweep(base: &RunConfig, grid: &SweepGrid) -> Result<SweepOutput> {
    if grid.batch_sizes.is_empty() || grid.modes.is_empty() || grid.seeds.is_empty() {
        return Err(CliError::Validation("sweep grid must be non-empty in every axis".into()));
    }
    let mut rows = Vec::new();
    for &batch_size in &grid.batch_sizes {
        for &modes in &grid.modes {
            for &seed in &grid.seeds {
                let cfg = RunConfig {
                    batch_size,
                    modes,
                    seed,
                    out: base.out.join(cell_dir(batch_size, modes, seed)),
                    ..base.clone()
                };
                let test_error = match cmd_train(&cfg) {
                    Ok(out) => out.final_test_error(),
                    Err(e) => {
                        log::error!("sweep cell N={batch_size} K={modes} seed={seed} failed: {e}");
                        f64::NAN
                    }
                };
                log::info!("sweep cell N={batch_size} K={modes} seed={seed}: test error {test_error}");
                rows.push(SweepRow {
                    batch_size,
                    modes,
                    seed,
                    test_error,
                });
            }
        }
    }
    let mut medians = Vec::new();
    for &batch_size in &grid.batch_sizes {
        for &modes in &grid.modes {
            let errs: Vec<f64> = rows
                .iter()
                .filter(|r| r.batch_size == batch_size && r.modes == modes)
                .map(|r| r.test_error)
                .collect();
            medians.push(CellMedian {
                batch_size,
                modes,
                median: median(&errs),
            });
        }
    }
    Ok(SweepOutput { rows, medians })
}

impl SweepOutput {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("# modenorm sweep v1\nkind,batch_size,modes,seed,test_error\n");
        for r in &self.rows {
            let _ = writeln!(s, "run,{},{},{},{}", r.batch_size, r.modes, r.seed, r.test_error);
        }
        for m in &self.medians {
            let _ = writeln!(s, "median,{},{},,{}", m.batch_size, m.modes, m.median);
        }
        s
    }

    pub fn median_of(&self, batch_size: usize, modes: usize) -> Option<f64> {
        self.medians
            .iter()
            .find(|m| m.batch_size == batch_size && m.modes == modes)
            .map(|m| m.median)
    }

    /// For a batch size: the `K > 1` cell with the lowest median, if any.
    pub fn best_multi_mode(&self, batch_size: usize) -> Option<&CellMedian> {
        self.medians
            .iter()
            .filter(|m| m.batch_size == batch_size && m.modes > 1 && m.median.is_finite())
            .min_by(|a, b| a.median.total_cmp(&b.median).then(a.modes.cmp(&b.modes)))
    }

    /// Per batch size: the median error of each K and whether the best
    /// `K > 1` cell is at least as good as `K = 1`.
    pub fn trend_report(&self) -> String {
        let mut s = String::new();
        let mut sizes: Vec<usize> = self.medians.iter().map(|m| m.batch_size).collect();
        sizes.dedup();
        for n in sizes {
            let cells: Vec<String> = self
                .medians
                .iter()
                .filter(|m| m.batch_size == n)
                .map(|m| format!("K={}: {:.4}", m.modes, m.median))
                .collect();
            let _ = write!(s, "N={n}: {}", cells.join(", "));
            match (self.median_of(n, 1), self.best_multi_mode(n)) {
                (Some(single), Some(best)) => {
                    let verdict = if best.median <= single { "<=" } else { ">" };
                    let _ = writeln!(s, " | best K>1 (K={}) {:.4} {verdict} K=1 {:.4}", best.modes, best.median, single);
                }
                _ => s.push('\n'),
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[f64::NAN, 1.0]), 1.0);
        assert!(median(&[f64::NAN]).is_nan());
    }

    #[test]
    fn csv_and_trend() {
        let out = SweepOutput {
            rows: vec![
                SweepRow { batch_size: 8, modes: 1, seed: 0, test_error: 0.5 },
                SweepRow { batch_size: 8, modes: 2, seed: 0, test_error: 0.25 },
            ],
            medians: vec![
                CellMedian { batch_size: 8, modes: 1, median: 0.5 },
                CellMedian { batch_size: 8, modes: 2, median: 0.25 },
            ],
        };
        let csv = out.to_csv();
        assert!(csv.contains("run,8,2,0,0.25\n"));
        assert!(csv.ends_with("median,8,2,,0.25\n"));
        assert_eq!(out.best_multi_mode(8).unwrap().modes, 2);
        assert!(out.trend_report().contains("best K>1 (K=2) 0.2500 <= K=1 0.5000"));
    }
}
