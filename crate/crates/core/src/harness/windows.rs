//! Chronological splits and stride-1 sliding windows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecaster::{Window, WindowSet};

use super::dataset::Dataset;

/// Split boundaries in time steps: train targets lie in `[0, train_end)`,
/// validation targets in `[train_end, val_end)`, test targets in
/// `[val_end, T)`. Validation and test windows may read up to `L_in` steps
/// of earlier history.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Boundaries {
    pub train_end: usize,
    pub val_end: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
    /// Entity segments too short to yield a window, per split.
    pub skipped: [usize; 3],
}

impl Boundaries {
    /// Target range `[lo, hi)` of a split for a series of length `len`.
    pub fn target_range(&self, split: Split, len: usize) -> (usize, usize) {
        match split {
            Split::Train => (0, self.train_end),
            Split::Val => (self.train_end, self.val_end),
            Split::Test => (self.val_end, len),
        }
    }
}

/// Number of windows a segment of `len` steps yields.
pub fn window_count(len: usize, input_len: usize, horizon: usize) -> usize {
    (len + 1).saturating_sub(input_len + horizon)
}

pub fn split_and_window(
    data: &Dataset,
    input_len: usize,
    horizon: usize,
    bounds: Boundaries,
) -> Result<Splits> {
    let t = data.len();
    if input_len == 0 || horizon == 0 {
        return Err(Error::Config("input_len and horizon must be positive".into()));
    }
    if bounds.train_end == 0 || bounds.train_end > bounds.val_end || bounds.val_end > t {
        return Err(Error::Config(format!(
            "boundaries {}/{} invalid for series of length {t}",
            bounds.train_end, bounds.val_end
        )));
    }
    let mut sets: [Vec<Window>; 3] = Default::default();
    let mut skipped = [0; 3];
    for e in &data.entities {
        let train = &e.values[..bounds.train_end];
        let mean = train.iter().sum::<f64>() / train.len() as f64;
        let var = train.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / train.len() as f64;
        let scale = if var.sqrt() > 1e-8 { var.sqrt() } else { 1.0 };
        for (k, split) in [Split::Train, Split::Val, Split::Test].into_iter().enumerate() {
            let (lo, hi) = bounds.target_range(split, t);
            let seg_start = if split == Split::Train { 0 } else { lo.saturating_sub(input_len) };
            let n = window_count(hi - seg_start, input_len, horizon);
            if n == 0 {
                if hi > lo {
                    skipped[k] += 1;
                }
                continue;
            }
            for s in seg_start..seg_start + n {
                sets[k].push(Window {
                    entity_id: e.id.clone(),
                    start: s,
                    history: e.values[s..s + input_len].to_vec(),
                    future: e.values[s + input_len..s + input_len + horizon].to_vec(),
                    statics: e.statics.clone(),
                    loc: mean,
                    scale,
                });
            }
        }
    }
    let [train, val, test] = sets;
    Ok(Splits {
        train: WindowSet::new(input_len, horizon, train)?,
        val: WindowSet::new(input_len, horizon, val)?,
        test: WindowSet::new(input_len, horizon, test)?,
        skipped,
    })
}

/// Windows whose targets fall outside their split's target range.
pub fn leakage_violations(splits: &Splits, bounds: Boundaries, len: usize) -> usize {
    [(Split::Train, &splits.train), (Split::Val, &splits.val), (Split::Test, &splits.test)]
        .iter()
        .map(|(split, set)| {
            let (lo, hi) = bounds.target_range(*split, len);
            set.windows
                .iter()
                .filter(|w| {
                    let first = w.start + set.input_len;
                    first < lo || first + set.horizon > hi
                })
                .count()
        })
        .sum()
}
