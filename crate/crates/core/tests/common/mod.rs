//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use qkcv::attention::Variant;
use qkcv::numeric::Tensor;

/// Naive per-element evaluation of QKCV attention on `[B, L, H, D]` inputs.
///
/// `g` is the raw combiner output (before any sigmoid); `None` means vanilla.
/// Returns `(output [B,L,H,D], scores [B,H,L,L], logits [B,H,L,L])` as flat
/// row-major vectors.
pub fn naive_qkcv(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    g: Option<&Tensor>,
    variant: Variant,
    causal: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let s = q.shape();
    let (b, l, h, d) = (s[0], s[1], s[2], s[3]);
    let lk = k.shape()[1];
    let divisor = match variant {
        Variant::V3 => (2.0 * d as f64).sqrt(),
        _ => (d as f64).sqrt(),
    };
    let key = |bi: usize, j: usize, hi: usize, di: usize| -> f64 {
        let kv = k.get(&[bi, j, hi, di]);
        match (variant, g) {
            (Variant::Vanilla, _) | (_, None) => kv,
            (Variant::V1, Some(g)) => kv * g.get(&[bi, j, hi, di]),
            (Variant::V2, Some(g)) => kv / (1.0 + (-g.get(&[bi, j, hi, di])).exp()),
            (Variant::V3, Some(g)) => kv + g.get(&[bi, j, hi, di]),
        }
    };
    let mut out = vec![0.0; b * l * h * d];
    let mut scores = vec![0.0; b * h * l * lk];
    let mut logits = vec![0.0; b * h * l * lk];
    for bi in 0..b {
        for hi in 0..h {
            for i in 0..l {
                let mut row = vec![0.0; lk];
                for (j, r) in row.iter_mut().enumerate() {
                    if causal && j > i {
                        *r = f64::NEG_INFINITY;
                        continue;
                    }
                    let mut acc = 0.0;
                    for di in 0..d {
                        acc += q.get(&[bi, i, hi, di]) * key(bi, j, hi, di);
                    }
                    *r = acc / divisor;
                }
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                let base = ((bi * h + hi) * l + i) * lk;
                for j in 0..lk {
                    scores[base + j] = exps[j] / total;
                    logits[base + j] = row[j];
                }
                for di in 0..d {
                    let mut acc = 0.0;
                    for j in 0..lk {
                        acc += scores[base + j] * v.get(&[bi, j, hi, di]);
                    }
                    out[((bi * l + i) * h + hi) * d + di] = acc;
                }
            }
        }
    }
    (out, scores, logits)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| if x == y { 0.0 } else { (x - y).abs() })
        .fold(0.0, f64::max)
}
