//! Feedback-driven search over metric definitions: score a definition,
//! record it, ask the proposer for the next one, and keep the best.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::defvalue::{v_d_aggregate, LabeledSample};
use crate::error::{Error, Result};
use crate::optimizer::DefinitionProposer;
use crate::rng::{stream, stream_rng};
use crate::scorer::ScorerParams;

/// One scored definition. Serializes to `{iter, definition, v_d, n_samples, ts}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub iter: usize,
    pub definition: String,
    pub v_d: f64,
    pub n_samples: usize,
    pub ts: DateTime<Utc>,
}

/// Scores a definition; returns `(v_d, n_samples)`.
pub trait DefinitionEvaluator {
    fn evaluate(&mut self, definition: &str) -> Result<(f64, usize)>;
}

/// Evaluates definitions by their definition value under a fixed scorer and
/// a fixed sample subset.
#[derive(Debug, Clone)]
pub struct ScorerEvaluator<'a> {
    pub params: &'a ScorerParams,
    pub samples: Vec<LabeledSample>,
}

impl DefinitionEvaluator for ScorerEvaluator<'_> {
    fn evaluate(&mut self, definition: &str) -> Result<(f64, usize)> {
        let v = v_d_aggregate(&self.samples, self.params, definition)?;
        Ok((v.v, v.n_samples))
    }
}

/// Picks `k` samples once per run (all of them if `k` is at least the
/// count), preserving their original order.
pub fn choose_subset(samples: &[LabeledSample], k: usize, seed: u64) -> Vec<LabeledSample> {
    if k >= samples.len() {
        return samples.to_vec();
    }
    let mut rng = stream_rng(seed, stream::SUBSET, 0);
    let mut idx = sample(&mut rng, samples.len(), k).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| samples[i].clone()).collect()
}

/// Append-only JSON Lines history, flushed after every record so an
/// interrupted run leaves a valid prefix.
#[derive(Debug)]
pub struct HistoryWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl HistoryWriter {
    /// Creates or truncates the file.
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).write(true).truncate(true).open(&path)?;
        Ok(HistoryWriter {
            path,
            out: BufWriter::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &TrialRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

/// Record with the largest `v_d`; the earliest wins ties.
pub fn select_best(history: &[TrialRecord]) -> Option<&TrialRecord> {
    history.iter().fold(None, |best: Option<&TrialRecord>, r| match best {
        Some(b) if b.v_d >= r.v_d => Some(b),
        _ => Some(r),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdmpoOutcome {
    pub best: TrialRecord,
    pub history: Vec<TrialRecord>,
}

/// Runs `budget` proposal rounds after scoring `initial`. Every record is
/// written to `writer` (when given) before the next proposal is requested,
/// so errors leave the completed trials on disk.
pub fn run_fdmpo(
    initial: &str,
    evaluator: &mut dyn DefinitionEvaluator,
    proposer: &mut dyn DefinitionProposer,
    budget: usize,
    mut writer: Option<&mut HistoryWriter>,
    clock: &mut dyn FnMut() -> DateTime<Utc>,
) -> Result<FdmpoOutcome> {
    let mut history: Vec<TrialRecord> = Vec::with_capacity(budget + 1);
    let mut definition = initial.trim().to_string();
    for iter in 0..=budget {
        if iter > 0 {
            definition = proposer.propose_next(&history)?.trim().to_string();
        }
        if definition.is_empty() {
            return Err(Error::Protocol(format!("empty definition at iteration {iter}")));
        }
        let (v_d, n_samples) = evaluator.evaluate(&definition)?;
        let record = TrialRecord {
            iter,
            definition: std::mem::take(&mut definition),
            v_d,
            n_samples,
            ts: clock(),
        };
        if let Some(w) = writer.as_deref_mut() {
            w.append(&record)?;
        }
        history.push(record);
    }
    let best = select_best(&history).cloned().expect("history holds the initial trial");
    Ok(FdmpoOutcome { best, history })
}

pub fn read_history(path: impl AsRef<Path>) -> Result<Vec<TrialRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    validate_history(&out)?;
    Ok(out)
}

/// Iterations must run 0, 1, 2, ... and every definition must be non-empty.
pub fn validate_history(history: &[TrialRecord]) -> Result<()> {
    for (i, r) in history.iter().enumerate() {
        if r.iter != i {
            return Err(Error::Config(format!("history record {i} has iteration {}", r.iter)));
        }
        if r.definition.trim().is_empty() {
            return Err(Error::Config(format!("history record {i} has an empty definition")));
        }
    }
    Ok(())
}

/// `iter,v_d` CSV for plotting the search trajectory.
pub fn write_trajectory_csv(path: impl AsRef<Path>, history: &[TrialRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "iter,v_d")?;
    for r in history {
        writeln!(out, "{},{}", r.iter, r.v_d)?;
    }
    out.flush()?;
    Ok(())
}
