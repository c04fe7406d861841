use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore};
use crate::numeric::{Tape, Tensor};

use super::data::WindowSet;
use super::loss::{quantile_loss, MetricSums, MetricsReport};
use super::model::Forecaster;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Early-stopping patience, in validation evaluations.
    pub patience: usize,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            max_steps: 1000,
            batch_size: 64,
            seed: 0,
            patience: 5,
            eval_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and ≥ 0", self.lr)));
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.patience == 0 {
            return Err(Error::Config("batch_size, eval_every and patience must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct History {
    pub train_loss: Vec<f64>,
    /// `(step, validation P50)` at each evaluation.
    pub val_p50: Vec<(usize, f64)>,
    /// Step whose parameters were returned.
    pub best_step: Option<usize>,
}

/// Adam (β₁ = 0.9, β₂ = 0.999, ε = 1e-8) over a subset of parameters.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    ids: Vec<ParamId>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, store: &ParamStore, ids: &[ParamId]) -> Self {
        let zeros = |id: &ParamId| vec![0.0; store.get(*id).numel()];
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            ids: ids.to_vec(),
            m: ids.iter().map(zeros).collect(),
            v: ids.iter().map(zeros).collect(),
        }
    }

    /// Bytes held in optimizer state (two moment buffers per trainable scalar).
    pub fn state_bytes(&self) -> usize {
        self.m.iter().chain(&self.v).map(|b| b.len() * 8).sum()
    }

    /// `grads[i]` belongs to the i-th parameter passed to [`Adam::new`].
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, &id) in self.ids.iter().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let data = store.data_mut(id);
            for (i, &g) in grads[k].data().iter().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Train every parameter.
pub fn train(
    mut model: Forecaster,
    train_set: &WindowSet,
    val_set: Option<&WindowSet>,
    cfg: &TrainConfig,
) -> Result<(Forecaster, History)> {
    let all = vec![true; model.params.len()];
    let history = train_subset(&mut model, train_set, val_set, cfg, &all)?;
    Ok((model, history))
}

/// Train the parameters flagged in `trainable` (indexed by [`ParamId`]).
/// Frozen parameters are recorded as constants and never receive a
/// gradient buffer; if one does, the run aborts with an internal error.
pub fn train_subset(
    model: &mut Forecaster,
    train_set: &WindowSet,
    val_set: Option<&WindowSet>,
    cfg: &TrainConfig,
    trainable: &[bool],
) -> Result<History> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    if trainable.len() != model.params.len() {
        return Err(Error::Internal("trainable mask does not cover every parameter".into()));
    }
    let ids: Vec<ParamId> = model.params.ids().filter(|id| trainable[id.index()]).collect();
    let mut history = History::default();
    if ids.is_empty() {
        return Ok(history);
    }
    let mut adam = Adam::new(cfg.lr, &model.params, &ids);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = train_set.len();
    let bs = cfg.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut best: Option<(f64, ParamStore)> = None;
    let mut stale = 0;
    let mut last_finite = f64::NAN;

    for step in 0..cfg.max_steps {
        if cursor + bs > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let batch = train_set.batch(&order[cursor..cursor + bs])?;
        cursor += bs;

        let diverged = |e: Error| match e {
            Error::NonFinite { .. } => Error::Diverged {
                step,
                last_finite_loss: last_finite,
            },
            other => other,
        };
        let (loss, grads) = {
            let tape = Tape::new();
            let p = model.params.bind(&tape, |id| trainable[id.index()]);
            let out = model
                .forward(&p, tape.constant(batch.history), &batch.statics, Some(&mut rng))
                .map_err(diverged)?;
            let loss = quantile_loss(out.pred, tape.constant(batch.future), &model.config.quantiles)
                .map_err(diverged)?;
            let grads = tape.backward(loss)?;
            for id in model.params.ids() {
                if !trainable[id.index()] && grads.materialized(p.get(id)) {
                    return Err(Error::Internal(format!(
                        "gradient materialized for frozen parameter `{}`",
                        model.params.name(id)
                    )));
                }
            }
            let g: Vec<Tensor> = ids.iter().map(|&id| grads.get_or_zeros(p.get(id))).collect();
            (loss.value().item()?, g)
        };
        if !loss.is_finite() || grads.iter().any(|g| g.data().iter().any(|x| !x.is_finite())) {
            return Err(Error::Diverged {
                step,
                last_finite_loss: last_finite,
            });
        }
        last_finite = loss;
        history.train_loss.push(loss);
        adam.step(&mut model.params, &grads);

        let Some(val) = val_set else { continue };
        if (step + 1) % cfg.eval_every != 0 && step + 1 != cfg.max_steps {
            continue;
        }
        let score = evaluate(model, val)?.p50;
        history.val_p50.push((step, score));
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, model.params.clone()));
            history.best_step = Some(step);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    } else if !history.train_loss.is_empty() {
        history.best_step = Some(history.train_loss.len() - 1);
    }
    Ok(history)
}

/// Raw-scale predictions for a split.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    /// `[n_windows, L_out, Q]`
    pub values: Tensor,
    /// `[n_windows, L_out]`
    pub target: Tensor,
}

pub const EVAL_CHUNK: usize = 256;

/// Forward pass without gradients, denormalized to raw units.
pub fn predict(model: &Forecaster, set: &WindowSet) -> Result<Predictions> {
    if set.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty split".into()));
    }
    let (h, q) = (set.horizon, model.config.quantiles.len());
    let mut values = Vec::with_capacity(set.len() * h * q);
    let mut target = Vec::with_capacity(set.len() * h);
    let all: Vec<usize> = (0..set.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let batch = set.batch(chunk)?;
        let tape = Tape::new();
        let p = model.params.bind_frozen(&tape);
        let out = model.forward(&p, tape.constant(batch.history), &batch.statics, None)?;
        let pred = out.pred.value();
        for (b, &i) in chunk.iter().enumerate() {
            let (loc, scale) = (batch.loc[b], batch.scale[b]);
            values.extend(pred.data()[b * h * q..][..h * q].iter().map(|v| v * scale + loc));
            target.extend_from_slice(&set.windows[i].future);
        }
    }
    Ok(Predictions {
        values: Tensor::new(vec![set.len(), h, q], values)?,
        target: Tensor::new(vec![set.len(), h], target)?,
    })
}

impl Predictions {
    /// Slice out one quantile as `[n_windows, L_out]`.
    pub fn quantile(&self, index: usize) -> Tensor {
        let s = self.values.shape();
        let q = s[2];
        let data = self.values.data().iter().skip(index).step_by(q).copied().collect();
        Tensor::new(vec![s[0], s[1]], data).expect("quantile slice is well-formed")
    }
}

pub fn evaluate(model: &Forecaster, set: &WindowSet) -> Result<MetricsReport> {
    let i50 = model.config.median_index().ok_or_else(|| Error::Config("no 0.5 quantile".into()))?;
    let i90 = model
        .config
        .quantile_index(0.9)
        .ok_or_else(|| Error::Config("P90 needs a 0.9 quantile head".into()))?;
    let pred = predict(model, set)?;
    let q = model.config.quantiles.len();
    let mut sums = MetricSums::default();
    for (row, &y) in pred.values.data().chunks(q).zip(pred.target.data()) {
        sums.push(row[i50], row[i90], y);
    }
    sums.report()
}
