//! Heatmap and tensor exports for trained models.

use std::path::Path;

use crate::attention::ScoreMatrix;
use crate::csvio::{read_heatmap, write_heatmap};
use crate::error::{Error, Result};
use crate::forecaster::{Forecaster, WindowSet};
use crate::numeric::Tape;

/// Files produced by an export, as `(file name, contents)`.
pub type Files = Vec<(String, Vec<u8>)>;

/// The last window of each entity, in entity order, at most `limit` of them
/// (`0` = no limit).
pub fn one_window_per_entity(set: &WindowSet, limit: usize) -> Vec<usize> {
    let mut picked: Vec<usize> = Vec::new();
    for (i, w) in set.windows.iter().enumerate() {
        match picked.last() {
            Some(&j) if set.windows[j].entity_id == w.entity_id => *picked.last_mut().unwrap() = i,
            _ => picked.push(i),
        }
    }
    if limit > 0 {
        picked.truncate(limit);
    }
    picked
}

/// Per layer: a wide heatmap (`attention_layer{i}.csv`, one row per sample,
/// columns = flattened `[H, N, N]` weights), the long-format score tensor
/// (`scores_layer{i}.csv`) and, for QKCV layers, the modulation tensor
/// (`modulation_layer{i}.csv`). With an encoder, also the static embedding
/// heatmap (`static_embedding.csv`).
pub fn export_attention(model: &Forecaster, set: &WindowSet, limit: usize) -> Result<Files> {
    let picked = one_window_per_entity(set, limit);
    if picked.is_empty() {
        return Err(Error::Contract("no windows to export".into()));
    }
    let labels: Vec<String> = picked.iter().map(|&i| set.windows[i].entity_id.clone()).collect();
    let batch = set.batch(&picked)?;
    let tape = Tape::new();
    let p = model.params.bind_frozen(&tape);
    let out = model.forward(&p, tape.constant(batch.history), &batch.statics, None)?;
    let mut files = Files::new();
    for (layer, att) in out.attention.iter().enumerate() {
        let scores = ScoreMatrix::new((*att.scores.value()).clone(), model.config.causal_mask, 1e-6)?;
        let per_sample = scores.values.numel() / picked.len();
        let rows: Vec<Vec<f64>> = scores.values.data().chunks(per_sample).map(|r| r.to_vec()).collect();
        let mut buf = Vec::new();
        write_heatmap(&mut buf, &labels, "s", &rows)?;
        files.push((format!("attention_layer{layer}.csv"), buf));
        let mut buf = Vec::new();
        scores.write_csv(&mut buf)?;
        files.push((format!("scores_layer{layer}.csv"), buf));
        if let Some(m) = att.modulation {
            let mut buf = Vec::new();
            crate::attention::Modulation {
                mode: model
                    .config
                    .variant
                    .modulation_mode()
                    .ok_or_else(|| Error::Internal("modulation without a QKCV variant".into()))?,
                values: (*m.value()).clone(),
            }
            .write_csv(&mut buf)?;
            files.push((format!("modulation_layer{layer}.csv"), buf));
        }
    }
    if let Some(c) = out.c_entity {
        let c = c.value();
        let e = c.shape()[1];
        let rows: Vec<Vec<f64>> = c.data().chunks(e).map(|r| r.to_vec()).collect();
        let mut buf = Vec::new();
        write_heatmap(&mut buf, &labels, "e", &rows)?;
        files.push(("static_embedding.csv".into(), buf));
    }
    Ok(files)
}

/// Re-read an attention heatmap and check every length-`n_keys` run of
/// weights sums to 1 within `tol`. Returns the largest deviation.
pub fn validate_attention_heatmap(path: &Path, n_keys: usize, tol: f64) -> Result<f64> {
    let (_, rows) = read_heatmap(path)?;
    let mut worst: f64 = 0.0;
    for (r, row) in rows.iter().enumerate() {
        if n_keys == 0 || row.len() % n_keys != 0 {
            return Err(Error::Data(format!("{}: row {r} is not a whole number of score rows", path.display())));
        }
        for chunk in row.chunks(n_keys) {
            worst = worst.max((chunk.iter().sum::<f64>() - 1.0).abs());
        }
    }
    if worst > tol {
        return Err(Error::Contract(format!(
            "{}: attention row deviates from 1 by {worst:e}",
            path.display()
        )));
    }
    Ok(worst)
}
