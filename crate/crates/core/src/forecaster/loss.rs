use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{Tensor, Var};

/// Mean over `B·L` positions of `Σ_q pinball_q(y − ŷ_q)`.
///
/// `pred` is `[B, L, Q]`, `y` is `[B, L]`.
pub fn quantile_loss<'t>(pred: Var<'t>, y: Var<'t>, quantiles: &[f64]) -> Result<Var<'t>> {
    if let Some(q) = quantiles.iter().find(|&&q| !(q > 0.0 && q < 1.0)) {
        return Err(Error::Contract(format!("quantile {q} outside (0, 1)")));
    }
    let ps = pred.shape();
    let ys = y.shape();
    if ps.len() != 3 || ys.len() != 2 || ps[..2] != ys[..] || ps[2] != quantiles.len() {
        return Err(Error::dim(
            "quantile_loss",
            format!("pred {:?}, target {:?}, {} quantiles", ps, ys, quantiles.len()),
        ));
    }
    let tape = pred.tape();
    let q = tape.constant(Tensor::vector(quantiles.to_vec())?);
    let d = y.reshape(&[ys[0], ys[1], 1])?.broadcast_to(&ps)?.sub(pred)?;
    // q·d + (−d)₊ equals q·d for d ≥ 0 and (q − 1)·d otherwise
    let pinball = d.mul(q)?.add(d.scale(-1.0)?.relu()?)?;
    pinball.sum(2)?.mean_all()
}

pub fn pinball(q: f64, y: f64, yhat: f64) -> f64 {
    let d = y - yhat;
    if d >= 0.0 {
        q * d
    } else {
        (q - 1.0) * d
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub wpe: f64,
    pub p50: f64,
    pub p90: f64,
    pub mae: f64,
}

/// Running sums behind [`MetricsReport`], so splits can be reduced batch by batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricSums {
    pub abs_err: f64,
    pub pinball50: f64,
    pub pinball90: f64,
    pub abs_y: f64,
    pub count: usize,
}

impl MetricSums {
    pub fn push(&mut self, p50: f64, p90: f64, y: f64) {
        self.abs_err += (p50 - y).abs();
        self.pinball50 += pinball(0.5, y, p50);
        self.pinball90 += pinball(0.9, y, p90);
        self.abs_y += y.abs();
        self.count += 1;
    }

    pub fn report(&self) -> Result<MetricsReport> {
        if self.count == 0 {
            return Err(Error::Contract("metrics over zero points".into()));
        }
        if self.abs_y == 0.0 {
            return Err(Error::UndefinedMetric(
                "all targets are zero, so Σ|y| = 0 and WPE/P50/P90 are undefined".into(),
            ));
        }
        Ok(MetricsReport {
            wpe: self.abs_err / self.abs_y,
            p50: 2.0 * self.pinball50 / self.abs_y,
            p90: 2.0 * self.pinball90 / self.abs_y,
            mae: self.abs_err / self.count as f64,
        })
    }
}

/// WPE = Σ|ŷ₅₀ − y| / Σ|y|; Pq = 2·Σ pinball_q / Σ|y|; MAE = mean |ŷ₅₀ − y|.
pub fn metrics(pred_p50: &Tensor, pred_p90: &Tensor, y: &Tensor) -> Result<MetricsReport> {
    if pred_p50.shape() != y.shape() || pred_p90.shape() != y.shape() {
        return Err(Error::dim(
            "metrics",
            format!(
                "p50 {:?}, p90 {:?}, y {:?}",
                pred_p50.shape(),
                pred_p90.shape(),
                y.shape()
            ),
        ));
    }
    let mut sums = MetricSums::default();
    for ((&a, &b), &t) in pred_p50.data().iter().zip(pred_p90.data()).zip(y.data()) {
        sums.push(a, b, t);
    }
    sums.report()
}
