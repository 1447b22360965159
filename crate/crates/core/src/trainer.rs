//! Seeded mini-batch training of the scorer.
//!
//! The objective per sample is cross-entropy on the pattern tokens plus,
//! depending on [`LossKind`], either the distance loss on the digit
//! positions (`tdrl`) or plain cross-entropy against the ground-truth digit
//! token (`ce-only`). Gradients are backpropagated by hand through the
//! per-position heads and the tanh trunk, averaged over the batch in a fixed
//! order and applied with Adam under a warmup-cosine learning rate.

use std::f64::consts::PI;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::codec::{Dimension, ScoreRange};
use crate::defvalue::LabeledSample;
use crate::error::{Error, Result};
use crate::metrics;
use crate::par;
use crate::rng::{stream, stream_rng};
use crate::scorer::{
    digit_logits, digit_token, embed_prompt, head_index, log_softmax_at, prefix_len, softmax_in_place, target_tokens,
    token_digit, DecodeMode, DigitDistribution, PromptEmbedding, ScorerDims, ScorerParams, DIGIT_0, TEMPLATE_LEN,
    VOCAB_SIZE,
};
use crate::tdrl;

/// Tuned for the small scorer: 30 epochs of 16 steps barely move at 1e-4.
pub const DEFAULT_LEARNING_RATE: f64 = 1e-2;
pub const DEFAULT_BATCH_SIZE: usize = 128;
pub const DEFAULT_WARMUP_RATIO: f64 = 0.03;
pub const DEFAULT_EPOCHS: usize = 30;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Samples per work unit when computing batch gradients. Fixed so that the
/// reduction tree does not depend on the thread count.
const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Tdrl,
    CeOnly,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tdrl" => Ok(LossKind::Tdrl),
            "ce-only" | "ce_only" => Ok(LossKind::CeOnly),
            other => Err(Error::Config(format!(
                "unknown loss {other:?} (expected tdrl or ce-only)"
            ))),
        }
    }
}

/// Which terms enter the optimized objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Objective {
    pub digit_score: bool,
    pub digit_ce: bool,
}

impl Objective {
    pub fn new(loss: LossKind, ce_includes_digits: bool) -> Self {
        match loss {
            LossKind::Tdrl => Objective {
                digit_score: true,
                digit_ce: ce_includes_digits,
            },
            LossKind::CeOnly => Objective {
                digit_score: false,
                digit_ce: true,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub ce_includes_digits: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_ratio: f64,
    pub seed: u64,
    pub dimension: Dimension,
    pub hidden: usize,
    pub embed_dim: usize,
    pub decode: DecodeMode,
    pub range: ScoreRange,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Tdrl,
            ce_includes_digits: false,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: DEFAULT_LEARNING_RATE,
            warmup_ratio: DEFAULT_WARMUP_RATIO,
            seed: 0,
            dimension: Dimension::Visual,
            hidden: crate::scorer::DEFAULT_HIDDEN,
            embed_dim: crate::scorer::DEFAULT_EMBED_DIM,
            decode: DecodeMode::Greedy,
            range: ScoreRange::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.warmup_ratio) {
            return Err(Error::Config(format!(
                "warmup ratio {} not in [0, 0.5)",
                self.warmup_ratio
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning rate {} must be > 0",
                self.learning_rate
            )));
        }
        if self.hidden == 0 || self.embed_dim == 0 {
            return Err(Error::Config("hidden width and embedding size must be positive".into()));
        }
        Ok(())
    }

    pub fn objective(&self) -> Objective {
        Objective::new(self.loss, self.ce_includes_digits)
    }
}

/// Learning rate at `step` of `total_steps`: a linear ramp from 0 over the
/// first `ceil(warmup_ratio * total_steps)` steps, then a half cosine from the
/// base rate down to 0 at the final step.
pub fn lr_at(step: usize, total_steps: usize, base: f64, warmup_ratio: f64) -> f64 {
    let warmup = (warmup_ratio * total_steps as f64).ceil() as usize;
    if step < warmup {
        return base * step as f64 / warmup as f64;
    }
    let span = total_steps.saturating_sub(1).saturating_sub(warmup);
    if span == 0 {
        return base;
    }
    let progress = ((step - warmup) as f64 / span as f64).min(1.0);
    base * 0.5 * (1.0 + (PI * progress).cos())
}

/// Loss components of one sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SampleLoss {
    pub ce_pattern: f64,
    pub ce_digits: f64,
    pub l_score: f64,
    pub objective: f64,
}

impl SampleLoss {
    fn add(&mut self, o: &SampleLoss) {
        self.ce_pattern += o.ce_pattern;
        self.ce_digits += o.ce_digits;
        self.l_score += o.l_score;
        self.objective += o.objective;
    }
}

fn add_into(acc: &mut ScorerParams, other: &ScorerParams) {
    for (a, b) in acc.buffers_mut().into_iter().zip(other.buffers()) {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    }
}

/// Adds the gradient of one sample's objective into `grad` (a
/// parameter-shaped accumulator) and returns its loss components.
pub fn accumulate_sample_gradient(
    params: &ScorerParams,
    prompt: &PromptEmbedding,
    sample: &LabeledSample,
    objective: Objective,
    grad: &mut ScorerParams,
) -> Result<SampleLoss> {
    let d = params.dims;
    let hdim = d.hidden;
    let n_in = d.input_dim();
    let digits = sample.target.digits();
    let targets = target_tokens(sample.target);
    let mut loss = SampleLoss::default();

    for plen in 0..=3 {
        let x = params.input_vector(prompt, &sample.features, &digits[..plen])?;
        let h = params.hidden(&x);
        let mut dh = vec![0.0; hdim];
        for pos in (1..TEMPLATE_LEN).filter(|&p| prefix_len(p) == plen) {
            let head = head_index(pos);
            let z = params.head_logits(head, &h);
            let target = targets[pos];
            let mut dz = [0.0; VOCAB_SIZE];
            let full_ce = |dz: &mut [f64; VOCAB_SIZE]| {
                let mut p = z;
                softmax_in_place(&mut p);
                for v in 0..VOCAB_SIZE {
                    dz[v] += p[v] - if v == target { 1.0 } else { 0.0 };
                }
                -log_softmax_at(&z, target)
            };
            match token_digit(target) {
                None => {
                    loss.ce_pattern += full_ce(&mut dz);
                }
                Some(g_t) => {
                    let t = plen;
                    let dist = DigitDistribution::from_logits(digit_logits(&z));
                    let weight = crate::codec::POSITION_WEIGHTS[t];
                    let mean = tdrl::expected_distance(&dist, g_t);
                    loss.l_score += weight * mean;
                    if objective.digit_score {
                        for k in 0..10 {
                            let dist_k = (k as f64 - g_t as f64).abs();
                            dz[DIGIT_0 + k] += weight * dist.probs()[k] * (dist_k - mean);
                        }
                    }
                    if objective.digit_ce {
                        debug_assert_eq!(target, digit_token(g_t));
                        loss.ce_digits += full_ce(&mut dz);
                    }
                }
            }
            let w_base = head * VOCAB_SIZE * hdim;
            for v in 0..VOCAB_SIZE {
                if dz[v] == 0.0 {
                    continue;
                }
                grad.b_out[head * VOCAB_SIZE + v] += dz[v];
                let row = w_base + v * hdim;
                for j in 0..hdim {
                    grad.w_out[row + j] += dz[v] * h[j];
                    dh[j] += dz[v] * params.w_out[row + j];
                }
            }
        }
        for j in 0..hdim {
            let da = dh[j] * (1.0 - h[j] * h[j]);
            if da == 0.0 {
                continue;
            }
            grad.b1[j] += da;
            let row = &mut grad.w1[j * n_in..(j + 1) * n_in];
            row.iter_mut().zip(&x).for_each(|(g, xi)| *g += da * xi);
        }
    }
    loss.objective = loss.ce_pattern
        + if objective.digit_ce { loss.ce_digits } else { 0.0 }
        + if objective.digit_score { loss.l_score } else { 0.0 };
    Ok(loss)
}

/// Summed gradient and summed losses over `batch`, reduced in fixed order.
pub fn batch_gradient(
    params: &ScorerParams,
    prompt: &PromptEmbedding,
    batch: &[&LabeledSample],
    objective: Objective,
) -> Result<(ScorerParams, Vec<SampleLoss>)> {
    let chunks: Vec<&[&LabeledSample]> = batch.chunks(GRAD_CHUNK).collect();
    let partials = par::map_collect(&chunks, |chunk| -> Result<(ScorerParams, Vec<SampleLoss>)> {
        let mut g = ScorerParams::zeros(params.dims);
        let losses = chunk
            .iter()
            .map(|s| accumulate_sample_gradient(params, prompt, s, objective, &mut g))
            .collect::<Result<Vec<_>>>()?;
        Ok((g, losses))
    });
    let mut total = ScorerParams::zeros(params.dims);
    let mut losses = Vec::with_capacity(batch.len());
    for part in partials {
        let (g, l) = part?;
        add_into(&mut total, &g);
        losses.extend(l);
    }
    Ok((total, losses))
}

/// Adam moment estimates over the flattened parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    m: ScorerParams,
    v: ScorerParams,
    step: i32,
}

impl Adam {
    pub fn new(dims: ScorerDims) -> Self {
        Adam {
            m: ScorerParams::zeros(dims),
            v: ScorerParams::zeros(dims),
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut ScorerParams, grad: &ScorerParams, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        let bufs = params
            .buffers_mut()
            .into_iter()
            .zip(grad.buffers())
            .zip(self.m.buffers_mut())
            .zip(self.v.buffers_mut());
        for (((p, g), m), v) in bufs {
            for i in 0..p.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub l_tdrl: f64,
    pub l_ce: f64,
    pub l_score: f64,
    /// Mean of the optimized objective (equals `l_tdrl` for plain tdrl).
    pub objective: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOut {
    pub n: usize,
    pub mae: f64,
    pub srcc: Option<f64>,
    pub plcc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub dimension: Dimension,
    pub loss: LossKind,
    pub epochs: Vec<EpochStats>,
    pub held_out: Option<HeldOut>,
    pub held_out_ood: Option<HeldOut>,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    pub fn l_tdrl(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.l_tdrl).collect()
    }
}

/// Training inputs for one dimension.
#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub train: Vec<LabeledSample>,
    pub val_in: Vec<LabeledSample>,
    pub val_out: Vec<LabeledSample>,
}

/// Decodes every sample and returns the numeric predictions.
pub fn predict(
    params: &ScorerParams,
    prompt: &PromptEmbedding,
    samples: &[LabeledSample],
    mode: DecodeMode,
    range: ScoreRange,
    dimension: Dimension,
) -> Result<Vec<f64>> {
    par::map_collect(samples, |s| {
        params
            .decode_score(prompt, &s.features, mode, range, dimension)
            .map(|sc| sc.value())
    })
    .into_iter()
    .collect()
}

/// MAE, SRCC and PLCC of decoded predictions against the labels.
pub fn evaluate(
    params: &ScorerParams,
    prompt: &PromptEmbedding,
    samples: &[LabeledSample],
    mode: DecodeMode,
    range: ScoreRange,
    dimension: Dimension,
) -> Result<HeldOut> {
    let pred = predict(params, prompt, samples, mode, range, dimension)?;
    let truth: Vec<f64> = samples.iter().map(|s| s.target.value()).collect();
    let mae = metrics::mae(&pred, &truth)?;
    let (srcc, plcc) = if samples.len() >= 2 {
        let c = metrics::Correlation::compute(&pred, &truth)?;
        (c.srcc, c.plcc)
    } else {
        (None, None)
    };
    Ok(HeldOut {
        n: samples.len(),
        mae,
        srcc,
        plcc,
    })
}

pub fn train(
    data: &TrainData,
    config: &TrainConfig,
    definition: &str,
    init: Option<ScorerParams>,
) -> Result<(ScorerParams, TrainReport)> {
    train_with_progress(data, config, definition, init, |_| {})
}

/// Trains from `init` (or a fresh seeded initialization) and calls
/// `progress` after every epoch.
pub fn train_with_progress(
    data: &TrainData,
    config: &TrainConfig,
    definition: &str,
    init: Option<ScorerParams>,
    mut progress: impl FnMut(&EpochStats),
) -> Result<(ScorerParams, TrainReport)> {
    config.validate()?;
    let started = Instant::now();
    let first = data
        .train
        .first()
        .ok_or_else(|| Error::domain("training set is empty"))?;
    let dims = ScorerDims {
        embed_dim: config.embed_dim,
        feature_dim: first.features.len(),
        hidden: config.hidden,
    };
    let mut params = match init {
        Some(p) => {
            if p.dims != dims {
                return Err(Error::shape(format!(
                    "initial parameters have dims {:?}, training expects {dims:?}",
                    p.dims
                )));
            }
            p
        }
        None => ScorerParams::init(dims, config.seed),
    };
    let prompt = embed_prompt(definition, dims.embed_dim);
    let objective = config.objective();
    let n = data.train.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let mut adam = Adam::new(dims);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut step = 0;

    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut stream_rng(config.seed, stream::SHUFFLE, epoch as u64));
        let mut sum = SampleLoss::default();
        let mut lr = 0.0;
        for (batch_idx, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&LabeledSample> = idx.iter().map(|&i| &data.train[i]).collect();
            let (mut grad, losses) = batch_gradient(&params, &prompt, &batch, objective)?;
            let mut batch_sum = SampleLoss::default();
            losses.iter().for_each(|l| batch_sum.add(l));
            if !batch_sum.objective.is_finite() || !batch_sum.l_score.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: batch_idx,
                });
            }
            sum.add(&batch_sum);
            let scale = 1.0 / batch.len() as f64;
            grad.buffers_mut()
                .into_iter()
                .for_each(|b| b.iter_mut().for_each(|g| *g *= scale));
            lr = lr_at(step, total_steps, config.learning_rate, config.warmup_ratio);
            adam.update(&mut params, &grad, lr);
            step += 1;
        }
        let nf = n as f64;
        let l_ce = (sum.ce_pattern + if objective.digit_ce { sum.ce_digits } else { 0.0 }) / nf;
        let l_score = sum.l_score / nf;
        let stats = EpochStats {
            epoch,
            l_tdrl: l_ce + l_score,
            l_ce,
            l_score,
            objective: sum.objective / nf,
            learning_rate: lr,
        };
        progress(&stats);
        epochs.push(stats);
    }
    if !params.is_finite() {
        return Err(Error::NonFinite {
            epoch: config.epochs.saturating_sub(1),
            batch: steps_per_epoch.saturating_sub(1),
        });
    }

    let held = |samples: &[LabeledSample]| -> Result<Option<HeldOut>> {
        if samples.is_empty() {
            return Ok(None);
        }
        evaluate(&params, &prompt, samples, config.decode, config.range, config.dimension).map(Some)
    };
    let held_out = held(&data.val_in)?;
    let held_out_ood = held(&data.val_out)?;
    let report = TrainReport {
        dimension: config.dimension,
        loss: config.loss,
        epochs,
        held_out,
        held_out_ood,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok((params, report))
}

/// Elementwise mean of two prediction lists.
pub fn ensemble_average(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "cannot average {} and {} predictions",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x + y) / 2.0).collect())
}
