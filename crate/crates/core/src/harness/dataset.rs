//! Panel datasets and CSV ingestion.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::csvio::fmt_f64;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Daily,
    Weekly,
}

impl Frequency {
    pub fn step(self) -> Duration {
        match self {
            Frequency::Daily => Duration::days(1),
            Frequency::Weekly => Duration::days(7),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntitySeries {
    pub id: String,
    pub statics: Vec<usize>,
    pub values: Vec<f64>,
}

/// Sorted category labels per static variable. A label's code is its
/// position; unseen labels map to the reserved code `len()`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub variables: Vec<(String, Vec<String>)>,
}

impl Vocabulary {
    pub fn names(&self) -> Vec<String> {
        self.variables.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.variables.iter().map(|(_, v)| v.len()).collect()
    }

    pub fn encode(&self, var: usize, label: &str) -> usize {
        let labels = &self.variables[var].1;
        labels.binary_search_by(|l| l.as_str().cmp(label)).unwrap_or(labels.len())
    }

    pub fn decode(&self, var: usize, code: usize) -> &str {
        self.variables[var].1.get(code).map_or("<unknown>", |s| s.as_str())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Regular panel: every entity has a value at every time step.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub frequency: Frequency,
    /// Date of step 0, when known.
    pub start: Option<NaiveDate>,
    pub vocabulary: Vocabulary,
    /// Sorted by id.
    pub entities: Vec<EntitySeries>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.entities.first().map_or(0, |e| e.values.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn date(&self, step: usize) -> NaiveDate {
        let start = self.start.unwrap_or(NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date"));
        start + self.frequency.step() * step as i32
    }

    /// Write in the long format read by [`load_csv`].
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["entity_id".to_string(), "date".to_string(), "target".to_string()];
        header.extend(self.vocabulary.names());
        w.write_record(&header)?;
        for e in &self.entities {
            let labels: Vec<String> = e
                .statics
                .iter()
                .enumerate()
                .map(|(f, &c)| self.vocabulary.decode(f, c).to_string())
                .collect();
            for (t, v) in e.values.iter().enumerate() {
                let mut rec = vec![e.id.clone(), self.date(t).to_string(), fmt_f64(*v)];
                rec.extend(labels.iter().cloned());
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSchema {
    pub entity_column: String,
    pub time_column: String,
    pub frequency: Frequency,
    pub target_column: String,
    pub static_columns: Vec<String>,
    /// Declared cardinalities; empty means "take them from the data".
    pub cardinalities: Vec<usize>,
}

impl Default for DatasetSchema {
    fn default() -> Self {
        DatasetSchema {
            entity_column: "entity_id".into(),
            time_column: "date".into(),
            frequency: Frequency::Daily,
            target_column: "target".into(),
            static_columns: Vec::new(),
            cardinalities: Vec::new(),
        }
    }
}

struct Raw {
    statics: Vec<String>,
    first_row: usize,
    points: BTreeMap<NaiveDate, (f64, usize)>,
}

/// Load a long-format CSV into a regular panel.
///
/// Gaps inside a series take the last observed value; steps before an
/// entity's first observation are 0. With `vocabulary`, category labels are
/// encoded against it (unseen labels get the reserved code); otherwise a
/// sorted vocabulary is built from the file.
pub fn load_csv(
    path: &Path,
    schema: &DatasetSchema,
    vocabulary: Option<&Vocabulary>,
) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("{}: unknown column `{name}`", path.display())))
    };
    let ent_col = column(&schema.entity_column)?;
    let time_col = column(&schema.time_column)?;
    let target_col = column(&schema.target_column)?;
    let static_cols = schema
        .static_columns
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;
    if !schema.cardinalities.is_empty() && schema.cardinalities.len() != static_cols.len() {
        return Err(Error::Schema("cardinalities must match static_columns".into()));
    }

    let mut raw: HashMap<String, Raw> = HashMap::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |c: usize| rec.get(c).unwrap_or("").trim();
        let entity = field(ent_col).to_string();
        let date = NaiveDate::parse_from_str(field(time_col), "%Y-%m-%d").map_err(|e| {
            Error::Data(format!("line {line}: bad date `{}`: {e}", field(time_col)))
        })?;
        let statics: Vec<String> = static_cols.iter().map(|&c| field(c).to_string()).collect();
        let target = field(target_col);
        let entry = raw.entry(entity.clone()).or_insert_with(|| Raw {
            statics: statics.clone(),
            first_row: line,
            points: BTreeMap::new(),
        });
        if entry.statics != statics {
            return Err(Error::Data(format!(
                "line {line}: static values of `{entity}` differ from line {}",
                entry.first_row
            )));
        }
        if target.is_empty() {
            continue;
        }
        let value: f64 = target
            .parse()
            .map_err(|e| Error::Data(format!("line {line}: bad target `{target}`: {e}")))?;
        if !value.is_finite() {
            return Err(Error::Data(format!("line {line}: non-finite target")));
        }
        if let Some(&(_, prev)) = entry.points.get(&date) {
            return Err(Error::Data(format!(
                "duplicate ({entity}, {date}) on lines {prev} and {line}"
            )));
        }
        entry.points.insert(date, (value, line));
    }
    let origin = raw.values().filter_map(|r| r.points.keys().next()).min().copied();
    let last = raw.values().filter_map(|r| r.points.keys().next_back()).max().copied();
    let (Some(origin), Some(last)) = (origin, last) else {
        return Err(Error::Data(format!("{}: no observations", path.display())));
    };
    let step = schema.frequency.step().num_days();
    let index = |d: NaiveDate, line: usize| -> Result<usize> {
        let days = (d - origin).num_days();
        if days % step != 0 {
            return Err(Error::Data(format!(
                "line {line}: {d} is off the {:?} grid starting {origin}",
                schema.frequency
            )));
        }
        Ok((days / step) as usize)
    };
    let len = ((last - origin).num_days() / step) as usize + 1;

    let vocabulary = match vocabulary {
        Some(v) => {
            if v.variables.len() != static_cols.len() {
                return Err(Error::Schema("vocabulary does not match static_columns".into()));
            }
            v.clone()
        }
        None => Vocabulary {
            variables: schema
                .static_columns
                .iter()
                .enumerate()
                .map(|(f, name)| {
                    let mut labels: Vec<String> = raw.values().map(|r| r.statics[f].clone()).collect();
                    labels.sort();
                    labels.dedup();
                    (name.clone(), labels)
                })
                .collect(),
        },
    };
    if !schema.cardinalities.is_empty() {
        for (f, (&declared, (name, labels))) in
            schema.cardinalities.iter().zip(&vocabulary.variables).enumerate()
        {
            if labels.len() > declared {
                return Err(Error::Schema(format!(
                    "variable {f} `{name}` has {} categories, declared {declared}",
                    labels.len()
                )));
            }
        }
    }

    let mut ids: Vec<&String> = raw.keys().collect();
    ids.sort();
    let mut entities = Vec::with_capacity(ids.len());
    for id in ids {
        let r = &raw[id];
        let mut values = vec![0.0; len];
        let mut observed = vec![false; len];
        for (&d, &(v, line)) in &r.points {
            let t = index(d, line)?;
            values[t] = v;
            observed[t] = true;
        }
        let mut seen = false;
        for t in 0..len {
            if observed[t] {
                seen = true;
            } else if seen {
                values[t] = values[t - 1];
            }
        }
        let statics = r
            .statics
            .iter()
            .enumerate()
            .map(|(f, s)| vocabulary.encode(f, s))
            .collect();
        entities.push(EntitySeries {
            id: id.clone(),
            statics,
            values,
        });
    }
    Ok(Dataset {
        frequency: schema.frequency,
        start: Some(origin),
        vocabulary,
        entities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str, freq: Frequency) -> Result<Dataset> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, text).unwrap();
        let schema = DatasetSchema {
            frequency: freq,
            static_columns: vec!["kind".into()],
            ..Default::default()
        };
        load_csv(&path, &schema, None)
    }

    #[test]
    fn weekly_gap_is_forward_filled() {
        let d = load(
            "entity_id,date,target,kind\na,2021-01-04,5,x\na,2021-01-18,7,x\n",
            Frequency::Weekly,
        )
        .unwrap();
        assert_eq!(d.entities[0].values, vec![5.0, 5.0, 7.0]);
    }

    #[test]
    fn late_entity_gets_leading_zeros() {
        let d = load(
            "entity_id,date,target,kind\n\
             a,2021-01-01,1,x\na,2021-01-02,2,x\na,2021-01-03,3,x\na,2021-01-04,4,x\n\
             b,2021-01-04,9,y\n",
            Frequency::Daily,
        )
        .unwrap();
        assert_eq!(d.entities[1].values, vec![0.0, 0.0, 0.0, 9.0]);
        assert_eq!(d.entities[1].statics, vec![1]);
    }

    #[test]
    fn duplicates_report_lines() {
        let err = load(
            "entity_id,date,target,kind\na,2021-01-01,1,x\na,2021-01-01,2,x\n",
            Frequency::Daily,
        )
        .unwrap_err();
        assert!(err.to_string().contains("lines 2 and 3"), "{err}");
    }

    #[test]
    fn unknown_label_maps_to_reserved_code() {
        let v = Vocabulary {
            variables: vec![("kind".into(), vec!["x".into(), "y".into()])],
        };
        assert_eq!(v.encode(0, "y"), 1);
        assert_eq!(v.encode(0, "zzz"), 2);
    }
}
