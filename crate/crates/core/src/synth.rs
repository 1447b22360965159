//! Deterministic synthetic stand-in for an image-editing MOS dataset.
//!
//! Each record carries a feature vector (the collapsed original image,
//! edited image and instruction) and three MOS labels. Labels follow
//! `lo + (hi - lo) * sigmoid(w_d . x + b_d)` plus Gaussian annotator noise,
//! clamped and rounded to two decimals. Out-of-distribution records have
//! their features shifted by `shift * u` for a fixed unit vector `u`.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::codec::{DigitTriple, Dimension, ScoreRange};
use crate::defvalue::LabeledSample;
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{stream, stream_rng};

/// Norm of each label weight vector.
pub const WEIGHT_NORM: f64 = 3.0;

pub const TRAIN_FILE: &str = "train.jsonl";
pub const VAL_IN_FILE: &str = "val_in.jsonl";
pub const VAL_OUT_FILE: &str = "val_out.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    In,
    Out,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::In => "in",
            Split::Out => "out",
        })
    }
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mos_visual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mos_edit: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mos_pres: Option<f64>,
    pub split: Split,
}

impl SampleRecord {
    pub fn mos(&self, dimension: Dimension) -> Option<f64> {
        match dimension {
            Dimension::Visual => self.mos_visual,
            Dimension::Editing => self.mos_edit,
            Dimension::Preservation => self.mos_pres,
        }
    }

    /// Ground-truth digits for `dimension`, checked against `range`.
    pub fn target(&self, dimension: Dimension, range: ScoreRange) -> Result<DigitTriple> {
        let v = self
            .mos(dimension)
            .ok_or_else(|| Error::Config(format!("record {} has no {dimension} label", self.id)))?;
        let t = DigitTriple::quantize(v)?;
        if !range.contains(t) {
            return Err(Error::domain(format!(
                "record {}: {dimension} score {v} outside [{}, {}]",
                self.id,
                range.lo(),
                range.hi()
            )));
        }
        Ok(t)
    }
}

/// Converts records into (features, digits) pairs for one dimension.
pub fn labeled(records: &[SampleRecord], dimension: Dimension, range: ScoreRange) -> Result<Vec<LabeledSample>> {
    records
        .iter()
        .map(|r| {
            Ok(LabeledSample {
                features: r.features.clone(),
                target: r.target(dimension, range)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub n_train: usize,
    pub n_val_in: usize,
    pub n_val_out: usize,
    pub noise_std: f64,
    pub shift: f64,
    pub feature_dim: usize,
    pub range: ScoreRange,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            seed: 0,
            n_train: 2000,
            n_val_in: 500,
            n_val_out: 500,
            noise_std: 0.15,
            shift: 0.5,
            feature_dim: 16,
            range: ScoreRange::default(),
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_val_in == 0 || self.n_val_out == 0 {
            return Err(Error::Config("split sizes must be at least 1".into()));
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(Error::Config(format!("noise std {} must be >= 0", self.noise_std)));
        }
        if !self.shift.is_finite() {
            return Err(Error::Config("shift must be finite".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature dimension must be at least 1".into()));
        }
        Ok(())
    }
}

/// The seeded label heads and the shift direction.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorWeights {
    pub w: [Vec<f64>; 3],
    pub b: [f64; 3],
    pub shift_dir: Vec<f64>,
}

fn unit_vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

impl GeneratorWeights {
    pub fn from_seed(seed: u64, feature_dim: usize) -> Self {
        let mut rng = stream_rng(seed, stream::GEN_WEIGHTS, 0);
        let w = [0, 1, 2].map(|_| {
            unit_vector(&mut rng, feature_dim)
                .into_iter()
                .map(|x| WEIGHT_NORM * x)
                .collect::<Vec<_>>()
        });
        let b = [0, 1, 2].map(|_| rng.random_range(-0.5..0.5));
        let shift_dir = unit_vector(&mut rng, feature_dim);
        GeneratorWeights { w, b, shift_dir }
    }

    /// Noise-free latent score of `features` on dimension index `d`.
    pub fn latent(&self, d: usize, features: &[f64], range: ScoreRange) -> f64 {
        let z: f64 = self.w[d].iter().zip(features).map(|(w, x)| w * x).sum::<f64>() + self.b[d];
        range.lo() + (range.hi() - range.lo()) / (1.0 + (-z).exp())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<SampleRecord>,
    pub val_in: Vec<SampleRecord>,
    pub val_out: Vec<SampleRecord>,
}

/// Generates all three splits. Record `i` (counted across splits in the
/// order train, val-in, val-out) draws from its own seeded stream, so records
/// can be produced in parallel.
pub fn generate(spec: &GeneratorSpec) -> Result<Dataset> {
    spec.validate()?;
    let weights = GeneratorWeights::from_seed(spec.seed, spec.feature_dim);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let make = |prefix: &str, offset: usize, n: usize, split: Split| -> Result<Vec<SampleRecord>> {
        par::map_range(n, |i| {
            let mut rng = stream_rng(spec.seed, stream::GEN_RECORD, (offset + i) as u64);
            let mut features: Vec<f64> = (0..spec.feature_dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
            if split == Split::Out {
                for (x, u) in features.iter_mut().zip(&weights.shift_dir) {
                    *x += spec.shift * u;
                }
            }
            let mut mos = [0.0; 3];
            for (d, m) in mos.iter_mut().enumerate() {
                let noisy = weights.latent(d, &features, spec.range) + noise.sample(&mut rng);
                let clamped = noisy.clamp(spec.range.lo(), spec.range.hi());
                *m = DigitTriple::quantize(clamped)?.value();
            }
            Ok(SampleRecord {
                id: format!("{prefix}-{i:06}"),
                features,
                mos_visual: Some(mos[0]),
                mos_edit: Some(mos[1]),
                mos_pres: Some(mos[2]),
                split,
            })
        })
        .into_iter()
        .collect()
    };
    Ok(Dataset {
        train: make("train", 0, spec.n_train, Split::In)?,
        val_in: make("val-in", spec.n_train, spec.n_val_in, Split::In)?,
        val_out: make("val-out", spec.n_train + spec.n_val_in, spec.n_val_out, Split::Out)?,
    })
}

pub fn write_jsonl(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<SampleRecord>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord =
            serde_json::from_str(&line).map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if rec.features.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config(format!(
                "{}:{}: non-finite feature",
                path.display(),
                i + 1
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

impl Dataset {
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        write_jsonl(&dir.join(TRAIN_FILE), &self.train)?;
        write_jsonl(&dir.join(VAL_IN_FILE), &self.val_in)?;
        write_jsonl(&dir.join(VAL_OUT_FILE), &self.val_out)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        Ok(Dataset {
            train: read_jsonl(&dir.join(TRAIN_FILE))?,
            val_in: read_jsonl(&dir.join(VAL_IN_FILE))?,
            val_out: read_jsonl(&dir.join(VAL_OUT_FILE))?,
        })
    }
}
