//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use esr_core::dataset::ClassLabel;
use esr_core::evaluation::{BinaryCounts, MetricSet};
use esr_core::nn::{Conv2d, Dense, Layer, Network, Tensor};

/// Averaged surface counts, rows predicted, columns actual
/// (Ia, Ia+IIb, Ia+IIIb, IIb, IIIb).
pub const PUBLISHED_SURFACE: [[f64; 5]; 5] = [
    [51.8, 3.5, 0.5, 0.8, 0.0],
    [3.8, 13.0, 0.9, 2.2, 0.2],
    [0.3, 0.1, 1.5, 0.1, 0.0],
    [1.0, 3.0, 0.1, 12.3, 0.0],
    [0.1, 0.4, 0.0, 0.6, 8.8],
];

pub const PUBLISHED_SECTION: [[f64; 5]; 5] = [
    [37.8, 2.1, 0.5, 0.4, 0.1],
    [1.4, 4.6, 0.5, 1.8, 0.7],
    [0.6, 0.8, 5.2, 0.1, 0.6],
    [0.0, 1.2, 0.1, 6.2, 0.5],
    [0.3, 0.3, 0.7, 0.5, 3.9],
];

/// Metric definitions written out from the complementary counts.
pub fn brute_metrics(c: &BinaryCounts) -> MetricSet {
    let positives = c.tp + c.fn_;
    let negatives = c.tn + c.fp;
    let called_pos = c.tp + c.fp;
    let called_neg = c.tn + c.fn_;
    let all = positives + negatives;
    let sens = (positives != 0.0).then(|| 100.0 - 100.0 * c.fn_ / positives);
    let spec = (negatives != 0.0).then(|| 100.0 - 100.0 * c.fp / negatives);
    MetricSet {
        accuracy: (all != 0.0).then(|| 100.0 - 100.0 * (c.fp + c.fn_) / all),
        auroc: None,
        sensitivity: sens,
        specificity: spec,
        ppv: (called_pos != 0.0).then(|| 100.0 - 100.0 * c.fp / called_pos),
        npv: (called_neg != 0.0).then(|| 100.0 - 100.0 * c.fn_ / called_neg),
        fpr: (negatives != 0.0).then(|| 100.0 * c.fp / negatives),
        fnr: (positives != 0.0).then(|| 100.0 * c.fn_ / positives),
    }
}

pub fn metrics_close(a: &MetricSet, b: &MetricSet, tol: f64) -> bool {
    a.values().iter().zip(b.values().iter()).all(|(x, y)| match (x, y) {
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        (None, None) => true,
        _ => false,
    })
}

/// Exhaustive positive–negative pair counting, ties ½.
pub fn brute_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// One 3×3 convolution (two maps, zero padding) feeding the pooled head.
pub struct TinyFixture {
    pub network: Network,
    pub input: [[f32; 4]; 4],
    pub kernels: [[[f32; 3]; 3]; 2],
    pub conv_bias: [f32; 2],
    pub head: [[f32; 2]; 5],
}

pub fn tiny_fixture() -> TinyFixture {
    let input = [[1.0, 0.0, 2.0, 1.0], [0.0, 1.0, 1.0, 0.0], [2.0, 1.0, 0.0, 1.0], [1.0, 0.0, 1.0, 2.0]];
    let kernels = [
        [[1.0, 1.0, 1.0], [1.0, 1.0, 1.0], [1.0, 1.0, 1.0]],
        [[0.0, 0.5, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 0.25]],
    ];
    let conv_bias = [0.0, 2.0];
    let head = [[0.5, 1.0], [-1.0, 0.25], [0.0, 0.0], [2.0, -3.0], [0.1, 0.1]];
    let mut conv = Conv2d::new(1, 2, 3, 1, 1, true);
    conv.weight.value = kernels.iter().flatten().flatten().copied().collect();
    conv.bias.as_mut().unwrap().value = conv_bias.to_vec();
    let mut dense = Dense::new(2, 5);
    dense.weight.value = head.iter().flatten().copied().collect();
    dense.bias.value = vec![0.0; 5];
    let network = Network::new(1, vec![Layer::Conv(conv)], dense);
    TinyFixture { network, input, kernels, conv_bias, head }
}

impl TinyFixture {
    pub fn tensor(&self) -> Tensor {
        Tensor::from_vec(1, 1, 4, 4, self.input.iter().flatten().copied().collect())
    }

    /// Direct zero-padded correlation.
    pub fn feature(&self, k: usize, r: usize, c: usize) -> f64 {
        let mut s = self.conv_bias[k] as f64;
        for dr in 0..3 {
            for dc in 0..3 {
                let (ir, ic) = (r as i64 + dr as i64 - 1, c as i64 + dc as i64 - 1);
                if (0..4).contains(&ir) && (0..4).contains(&ic) {
                    s += self.kernels[k][dr][dc] as f64 * self.input[ir as usize][ic as usize] as f64;
                }
            }
        }
        s
    }

    /// α_k = W[c,k]/16, map = ReLU(Σ α_k A^k), divided by its maximum.
    pub fn expected_map(&self, class: ClassLabel) -> Vec<f64> {
        let w = self.head[class.index()];
        let alpha = [w[0] as f64 / 16.0, w[1] as f64 / 16.0];
        let raw: Vec<f64> = (0..16)
            .map(|i| (alpha[0] * self.feature(0, i / 4, i % 4) + alpha[1] * self.feature(1, i / 4, i % 4)).max(0.0))
            .collect();
        let max = raw.iter().cloned().fold(0.0, f64::max);
        raw.iter().map(|v| if max > 0.0 { v / max } else { 0.0 }).collect()
    }
}
