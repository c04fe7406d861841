//! Synthetic panel where category membership is the only cross-entity signal.

use std::f64::consts::PI;
use std::io::Write;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::csvio::fmt_f64;
use crate::error::{Error, Result};

use super::dataset::{Dataset, EntitySeries, Frequency, Vocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Categories per static variable.
    pub n_categories: Vec<usize>,
    /// Whether each variable drives the series; the rest are noise.
    pub informative: Vec<bool>,
    pub n_entities: usize,
    pub length: usize,
    pub base_range: (f64, f64),
    pub amplitude_range: (f64, f64),
    /// Candidate seasonal periods (even); each category draws one.
    pub periods: Vec<usize>,
    pub slope_range: (f64, f64),
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_categories: vec![8],
            informative: vec![true],
            n_entities: 64,
            length: 200,
            base_range: (20.0, 60.0),
            amplitude_range: (5.0, 20.0),
            periods: vec![8, 12, 16, 24, 32, 48],
            slope_range: (-0.05, 0.05),
            noise_sigma: 3.0,
            seed: 0,
        }
    }
}

/// Generator parameters for one category of one variable.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CategoryParams {
    pub variable: String,
    pub category: usize,
    pub informative: bool,
    pub base: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub period: usize,
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub truth: Vec<CategoryParams>,
    /// Per-entity trend slope, in dataset entity order.
    pub slopes: Vec<f64>,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_categories.is_empty() || self.n_categories.len() != self.informative.len() {
            return bad("n_categories and informative must be non-empty and aligned".into());
        }
        if self.n_categories.contains(&0) {
            return bad("every variable needs at least one category".into());
        }
        let most = *self.n_categories.iter().max().unwrap_or(&1);
        if self.n_entities < 2 * most {
            return bad(format!(
                "{} entities cannot cover {most} categories twice",
                self.n_entities
            ));
        }
        if self.length < 2 {
            return bad("series length must be at least 2".into());
        }
        if self.periods.is_empty() || self.periods.iter().any(|&p| p < 2 || p % 2 != 0) {
            return bad(format!("periods {:?} must be even and ≥ 2", self.periods));
        }
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b;
        if !ordered(self.base_range) || !ordered(self.amplitude_range) || !ordered(self.slope_range) {
            return bad("ranges must be finite with lo ≤ hi".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be finite and ≥ 0".into());
        }
        Ok(())
    }

    pub fn variable_names(&self) -> Vec<String> {
        (0..self.n_categories.len()).map(|f| format!("static_{f}")).collect()
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// `y_t = Σ_informative (base_c + amp_c·sin(2π(t + phase_c)/period_c)) + slope_e·t + ε_t`,
/// clipped at zero and rounded.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let names = spec.variable_names();
    let mut truth = Vec::new();
    for (f, (&k, &informative)) in spec.n_categories.iter().zip(&spec.informative).enumerate() {
        for c in 0..k {
            let period = *spec.periods.choose(&mut rng).expect("periods validated non-empty");
            truth.push(CategoryParams {
                variable: names[f].clone(),
                category: c,
                informative,
                base: draw(&mut rng, spec.base_range),
                amplitude: draw(&mut rng, spec.amplitude_range),
                phase: rng.random_range(0..period) as f64,
                period,
            });
        }
    }
    let offsets: Vec<usize> = spec
        .n_categories
        .iter()
        .scan(0, |acc, &k| {
            let o = *acc;
            *acc += k;
            Some(o)
        })
        .collect();
    // round-robin keeps every category represented; later variables are
    // shuffled so they carry no information about earlier ones
    let codes: Vec<Vec<usize>> = spec
        .n_categories
        .iter()
        .enumerate()
        .map(|(f, &k)| {
            let mut col: Vec<usize> = (0..spec.n_entities).map(|e| e % k).collect();
            if f > 0 {
                col.shuffle(&mut rng);
            }
            col
        })
        .collect();
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let width = spec.n_entities.to_string().len().max(3);
    let mut entities = Vec::with_capacity(spec.n_entities);
    let mut slopes = Vec::with_capacity(spec.n_entities);
    for e in 0..spec.n_entities {
        let slope = draw(&mut rng, spec.slope_range);
        let statics: Vec<usize> = codes.iter().map(|col| col[e]).collect();
        let values = (0..spec.length)
            .map(|t| {
                let mut y = slope * t as f64;
                for (f, &c) in statics.iter().enumerate() {
                    let p = &truth[offsets[f] + c];
                    if p.informative {
                        y += p.base
                            + p.amplitude * (2.0 * PI * (t as f64 + p.phase) / p.period as f64).sin();
                    }
                }
                if spec.noise_sigma > 0.0 {
                    y += noise.sample(&mut rng);
                }
                y.max(0.0).round()
            })
            .collect();
        entities.push(EntitySeries {
            id: format!("entity_{e:0width$}"),
            statics,
            values,
        });
        slopes.push(slope);
    }
    let vocabulary = Vocabulary {
        variables: names
            .iter()
            .zip(&spec.n_categories)
            .map(|(n, &k)| (n.clone(), (0..k).map(|c| category_label(n, c)).collect()))
            .collect(),
    };
    Ok(SyntheticData {
        dataset: Dataset {
            frequency: Frequency::Daily,
            start: None,
            vocabulary,
            entities,
        },
        truth,
        slopes,
    })
}

/// Label whose lexical order matches the code order.
pub fn category_label(variable: &str, code: usize) -> String {
    format!("{variable}_{code:04}")
}

pub fn write_truth_csv<W: Write>(truth: &[CategoryParams], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variable", "category", "informative", "base", "amplitude", "phase", "period"])?;
    for p in truth {
        w.write_record([
            p.variable.clone(),
            p.category.to_string(),
            p.informative.to_string(),
            fmt_f64(p.base),
            fmt_f64(p.amplitude),
            fmt_f64(p.phase),
            p.period.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
