use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// One training example in raw (un-normalized) units.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub entity_id: String,
    /// Index of the first history step in the entity's series.
    pub start: usize,
    pub history: Vec<f64>,
    pub future: Vec<f64>,
    pub statics: Vec<usize>,
    /// Per-entity normalization fitted on the training split.
    pub loc: f64,
    pub scale: f64,
}

/// Windows of one split, in canonical (entity id, time) order.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSet {
    pub input_len: usize,
    pub horizon: usize,
    pub windows: Vec<Window>,
}

/// A normalized minibatch.
#[derive(Clone, Debug)]
pub struct ForecastBatch {
    /// `[B, L_in]`
    pub history: Tensor,
    /// `B × F` category codes.
    pub statics: Vec<Vec<usize>>,
    /// `[B, L_out]`
    pub future: Tensor,
    pub loc: Vec<f64>,
    pub scale: Vec<f64>,
}

impl WindowSet {
    pub fn new(input_len: usize, horizon: usize, windows: Vec<Window>) -> Result<Self> {
        for w in &windows {
            if w.history.len() != input_len || w.future.len() != horizon {
                return Err(Error::Data(format!(
                    "window for `{}` at {} has lengths {}/{}, expected {input_len}/{horizon}",
                    w.entity_id,
                    w.start,
                    w.history.len(),
                    w.future.len()
                )));
            }
            if !(w.scale > 0.0) || !w.loc.is_finite() {
                return Err(Error::Data(format!("bad normalization for `{}`", w.entity_id)));
            }
        }
        Ok(WindowSet {
            input_len,
            horizon,
            windows,
        })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Result<ForecastBatch> {
        if indices.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let b = indices.len();
        let mut history = Vec::with_capacity(b * self.input_len);
        let mut future = Vec::with_capacity(b * self.horizon);
        let mut statics = Vec::with_capacity(b);
        let (mut loc, mut scale) = (Vec::with_capacity(b), Vec::with_capacity(b));
        for &i in indices {
            let w = &self.windows[i];
            history.extend(w.history.iter().map(|v| (v - w.loc) / w.scale));
            future.extend(w.future.iter().map(|v| (v - w.loc) / w.scale));
            statics.push(w.statics.clone());
            loc.push(w.loc);
            scale.push(w.scale);
        }
        Ok(ForecastBatch {
            history: Tensor::new(vec![b, self.input_len], history)?,
            statics,
            future: Tensor::new(vec![b, self.horizon], future)?,
            loc,
            scale,
        })
    }
}
