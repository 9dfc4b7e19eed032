//! Gate assignments, purity against known mixture components, and the
//! per-mode gate listing.

use std::fmt::Write as _;

use modenorm::gating::GateMatrix;

/// Per-sample mode weights (`N` rows of `K`). Channel gates (`N·C` rows)
/// are averaged over each sample's channels.
pub fn sample_gates(gates: &GateMatrix, samples: usize) -> Vec<Vec<f64>> {
    let k = gates.modes();
    let per = gates.rows() / samples.max(1);
    (0..samples)
        .map(|i| {
            let mut acc = vec![0.0; k];
            for r in i * per..(i + 1) * per {
                for (a, g) in acc.iter_mut().zip(gates.row(r)) {
                    *a += g;
                }
            }
            acc.iter().map(|a| a / per as f64).collect()
        })
        .collect()
}

/// Argmax per row; the first index wins ties.
pub fn assignments(weights: &[Vec<f64>]) -> Vec<usize> {
    weights
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &g)| if g > best.1 { (k, g) } else { best })
                .0
        })
        .collect()
}

/// Mean gate mass per mode.
pub fn usage(weights: &[Vec<f64>], modes: usize) -> Vec<f64> {
    let mut acc = vec![0.0; modes];
    for row in weights {
        for (a, g) in acc.iter_mut().zip(row) {
            *a += g;
        }
    }
    acc.iter().map(|a| a / weights.len().max(1) as f64).collect()
}

/// Accuracy of the best one-to-one matching between gate indices and true
/// components, by exhaustive search over matchings.
pub fn purity(assigned: &[usize], modes: usize, truth: &[usize], components: usize) -> f64 {
    let mut counts = vec![vec![0usize; components]; modes];
    for (&a, &t) in assigned.iter().zip(truth) {
        counts[a][t] += 1;
    }
    fn best(counts: &[Vec<usize>], k: usize, used: &mut Vec<bool>) -> usize {
        if k == counts.len() {
            return 0;
        }
        let mut top = best(counts, k + 1, used);
        for m in 0..used.len() {
            if !used[m] {
                used[m] = true;
                top = top.max(counts[k][m] + best(counts, k + 1, used));
                used[m] = false;
            }
        }
        top
    }
    let matched = best(&counts, 0, &mut vec![false; components]);
    matched as f64 / assigned.len().max(1) as f64
}

/// Listing for one gated layer: per mode, usage and the `top_p` samples with
/// the largest gate value.
pub fn layer_report(layer: usize, weights: &[Vec<f64>], top_p: usize, purity: Option<f64>) -> String {
    let modes = weights.first().map_or(0, Vec::len);
    let use_ = usage(weights, modes);
    let mut s = String::new();
    let _ = writeln!(s, "layer {layer}");
    for k in 0..modes {
        let mut idx: Vec<usize> = (0..weights.len()).collect();
        idx.sort_by(|&a, &b| weights[b][k].total_cmp(&weights[a][k]).then(a.cmp(&b)));
        idx.truncate(top_p);
        let list: Vec<String> = idx.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "  mode {}: usage {:.6} top [{}]", k + 1, use_[k], list.join(", "));
    }
    if let Some(p) = purity {
        let _ = writeln!(s, "  purity {p:.6}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use modenorm::Tensor;

    #[test]
    fn uniform_gates_give_chance_purity() {
        let weights = vec![vec![0.5, 0.5]; 10];
        let truth = [0, 0, 0, 1, 1, 1, 1, 1, 1, 1];
        assert_eq!(purity(&assignments(&weights), 2, &truth, 2), 0.7);
    }

    #[test]
    fn aligned_hard_gates_are_pure() {
        let truth = [0, 1, 1, 0, 2];
        // Gate labels are a permutation of the truth.
        let assigned: Vec<usize> = truth.iter().map(|t| (t + 1) % 3).collect();
        assert_eq!(purity(&assigned, 3, &truth, 3), 1.0);
    }

    #[test]
    fn more_gates_than_components() {
        let truth = [0, 0, 1, 1];
        assert_eq!(purity(&[0, 1, 2, 3], 4, &truth, 2), 0.5);
        assert_eq!(purity(&[5, 5, 1, 1], 6, &truth, 2), 1.0);
    }

    #[test]
    fn channel_gates_average_per_sample() {
        let g = GateMatrix::new(Tensor::new(&[4, 2], vec![1.0, 0.0, 0.5, 0.5, 0.0, 1.0, 0.0, 1.0]).unwrap()).unwrap();
        let w = sample_gates(&g, 2);
        assert_eq!(w, vec![vec![0.75, 0.25], vec![0.0, 1.0]]);
        assert_eq!(assignments(&w), vec![0, 1]);
        assert_eq!(usage(&w, 2), vec![0.375, 0.625]);
        let text = layer_report(0, &w, 1, Some(1.0));
        assert!(text.contains("mode 1: usage 0.375000 top [0]"));
        assert!(text.contains("purity 1.000000"));
    }
}
