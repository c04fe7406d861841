//! CSV helpers shared by every exporter.
//!
//! Floats are written in scientific notation with 17 significant digits,
//! which round-trips every `f64` exactly.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn writer_to_path(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(csv::Writer::from_path(path)?)
}

/// Wide heatmap table: one row per sample, one column per dimension.
pub fn write_heatmap<W: Write>(
    out: W,
    row_labels: &[String],
    column_prefix: &str,
    rows: &[Vec<f64>],
) -> Result<()> {
    let width = rows.first().map_or(0, |r| r.len());
    if rows.len() != row_labels.len() || rows.iter().any(|r| r.len() != width) {
        return Err(Error::Internal("ragged heatmap rows".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["sample".to_string(), "entity_id".to_string()];
    header.extend((0..width).map(|d| format!("{column_prefix}{d}")));
    w.write_record(&header)?;
    for (i, (label, row)) in row_labels.iter().zip(rows).enumerate() {
        let mut rec = vec![i.to_string(), label.clone()];
        rec.extend(row.iter().map(|&v| fmt_f64(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Read back a heatmap written by [`write_heatmap`].
pub fn read_heatmap(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let mut labels = Vec::new();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        labels.push(rec.get(1).unwrap_or_default().to_string());
        let row = rec
            .iter()
            .skip(2)
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::Data(format!("{}: bad number `{s}`: {e}", path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((labels, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 123456789.123456789] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(fmt_f64(0.2), "2.0000000000000001e-1");
    }
}
