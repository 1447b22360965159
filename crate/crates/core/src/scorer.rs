//! A one-hidden-layer autoregressive scorer over a 15-token vocabulary.
//!
//! The scorer emits the fixed sequence
//! `BOS "score" ":" D0 "." D1 D2 EOS`, one output head per predicted
//! position. Its trunk sees the prompt embedding, the sample features and the
//! digits already emitted (one-hot, zero for positions not yet reached), so
//! the distribution at digit position `t` depends on `g_<t` only.

use std::fs;
use std::io::Write;
use std::path::Path;

use fnv::FnvHasher;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::hash::Hasher;

use crate::codec::{DigitTriple, Dimension, Score, ScoreRange};
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

pub const VOCAB_SIZE: usize = 15;
pub const BOS: usize = 0;
pub const WORD_SCORE: usize = 1;
pub const COLON: usize = 2;
pub const DOT: usize = 3;
/// First digit token; `DIGIT_0 + k` encodes digit `k`.
pub const DIGIT_0: usize = 4;
pub const EOS: usize = 14;
pub const DIGIT_TOKENS: std::ops::Range<usize> = DIGIT_0..DIGIT_0 + 10;

/// Length of the output template including BOS.
pub const TEMPLATE_LEN: usize = 8;
/// Number of predicted positions (everything after BOS).
pub const N_HEADS: usize = TEMPLATE_LEN - 1;
/// Sequence indices of the three digit tokens, ones place first.
pub const DIGIT_POSITIONS: [usize; 3] = [3, 5, 6];
/// Sequence indices of the non-numerical tokens that are predicted.
pub const PATTERN_POSITIONS: [usize; 4] = [1, 2, 4, 7];
/// Width of the teacher-forced prefix input: three 10-slot one-hot groups.
pub const PREFIX_WIDTH: usize = 30;

pub const DEFAULT_EMBED_DIM: usize = 64;
pub const DEFAULT_HIDDEN: usize = 32;

const TOKEN_NAMES: [&str; VOCAB_SIZE] = [
    "<bos>", "score", ":", ".", "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "<eos>",
];

pub fn token_name(token: usize) -> &'static str {
    TOKEN_NAMES[token]
}

pub fn digit_token(digit: u8) -> usize {
    DIGIT_0 + digit as usize
}

pub fn token_digit(token: usize) -> Option<u8> {
    DIGIT_TOKENS.contains(&token).then(|| (token - DIGIT_0) as u8)
}

/// Target token sequence for a ground-truth triple.
pub fn target_tokens(g: DigitTriple) -> [usize; TEMPLATE_LEN] {
    let [a, b, c] = g.digits();
    [
        BOS,
        WORD_SCORE,
        COLON,
        digit_token(a),
        DOT,
        digit_token(b),
        digit_token(c),
        EOS,
    ]
}

/// Number of digit tokens preceding sequence index `position`.
pub fn prefix_len(position: usize) -> usize {
    DIGIT_POSITIONS.iter().filter(|&&p| p < position).count()
}

/// Output head index for a predicted sequence position.
pub fn head_index(position: usize) -> usize {
    debug_assert!((1..TEMPLATE_LEN).contains(&position));
    position - 1
}

/// Hashed character-trigram embedding of a metric-definition text.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbedding(Vec<f64>);

impl PromptEmbedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Counts every window of three consecutive characters into `dim` buckets
/// (FNV-1a 64 of the window's UTF-8 bytes, modulo `dim`) and L2-normalizes.
/// Texts shorter than three characters map to the zero vector.
pub fn embed_prompt(text: &str, dim: usize) -> PromptEmbedding {
    let mut counts = vec![0.0f64; dim];
    let chars: Vec<char> = text.chars().collect();
    let mut buf = [0u8; 12];
    for window in chars.windows(3) {
        let mut len = 0;
        for c in window {
            len += c.encode_utf8(&mut buf[len..]).len();
        }
        let mut hasher = FnvHasher::default();
        hasher.write(&buf[..len]);
        counts[(hasher.finish() % dim as u64) as usize] += 1.0;
    }
    let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm > 0.0 {
        counts.iter_mut().for_each(|c| *c /= norm);
    }
    PromptEmbedding(counts)
}

/// Probabilities over the ten digits at one position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DigitDistribution([f64; 10]);

impl DigitDistribution {
    pub const NORMALIZATION_TOL: f64 = 1e-9;

    pub fn new(p: [f64; 10]) -> Result<Self> {
        if let Some(k) = p.iter().position(|&x| !x.is_finite() || x < 0.0) {
            return Err(Error::domain(format!("probability of digit {k} is {}", p[k])));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > Self::NORMALIZATION_TOL {
            return Err(Error::domain(format!("digit probabilities sum to {sum}")));
        }
        Ok(DigitDistribution(p))
    }

    pub fn uniform() -> Self {
        DigitDistribution([0.1; 10])
    }

    pub fn point_mass(digit: u8) -> Self {
        let mut p = [0.0; 10];
        p[digit as usize] = 1.0;
        DigitDistribution(p)
    }

    pub fn from_logits(logits: &[f64; 10]) -> Self {
        let mut p = *logits;
        softmax_in_place(&mut p);
        DigitDistribution(p)
    }

    pub fn probs(&self) -> &[f64; 10] {
        &self.0
    }

    pub fn prob(&self, digit: u8) -> f64 {
        self.0[digit as usize]
    }

    /// Most probable digit; ties go to the lowest digit.
    pub fn argmax(&self) -> u8 {
        let mut best = 0;
        for k in 1..10 {
            if self.0[k] > self.0[best] {
                best = k;
            }
        }
        best as u8
    }

    pub fn expectation(&self) -> f64 {
        self.0.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }
}

/// Numerically stable softmax.
pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// `log softmax(z)[index]`.
pub fn log_softmax_at(z: &[f64], index: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z[index] - lse
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerDims {
    pub embed_dim: usize,
    pub feature_dim: usize,
    pub hidden: usize,
}

impl ScorerDims {
    pub fn new(feature_dim: usize) -> Self {
        ScorerDims {
            embed_dim: DEFAULT_EMBED_DIM,
            feature_dim,
            hidden: DEFAULT_HIDDEN,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.embed_dim + self.feature_dim + PREFIX_WIDTH
    }

    pub fn param_count(&self) -> usize {
        self.hidden * self.input_dim() + self.hidden + N_HEADS * VOCAB_SIZE * (self.hidden + 1)
    }
}

/// Trunk and head weights, all row-major.
///
/// * `w1`: `hidden × input_dim`, `b1`: `hidden`
/// * `w_out`: `N_HEADS × VOCAB_SIZE × hidden`, `b_out`: `N_HEADS × VOCAB_SIZE`
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    pub dims: ScorerDims,
    pub seed: u64,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

/// Logits for every predicted position, indexed by [`head_index`].
pub type PositionLogits = [[f64; VOCAB_SIZE]; N_HEADS];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Expected,
}

impl std::str::FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(DecodeMode::Greedy),
            "expected" => Ok(DecodeMode::Expected),
            other => Err(Error::Config(format!("unknown decode mode {other:?}"))),
        }
    }
}

impl ScorerParams {
    pub fn zeros(dims: ScorerDims) -> Self {
        ScorerParams {
            dims,
            seed: 0,
            w1: vec![0.0; dims.hidden * dims.input_dim()],
            b1: vec![0.0; dims.hidden],
            w_out: vec![0.0; N_HEADS * VOCAB_SIZE * dims.hidden],
            b_out: vec![0.0; N_HEADS * VOCAB_SIZE],
        }
    }

    /// Uniform in `±0.5/sqrt(fan_in)` for each layer, drawn from SplitMix64.
    pub fn init(dims: ScorerDims, seed: u64) -> Self {
        let mut p = Self::zeros(dims);
        p.seed = seed;
        let mut rng = stream_rng(seed, stream::INIT, 0);
        let trunk = 0.5 / (dims.input_dim() as f64).sqrt();
        let head = 0.5 / (dims.hidden as f64).sqrt();
        for (buf, bound) in [
            (&mut p.w1, trunk),
            (&mut p.b1, trunk),
            (&mut p.w_out, head),
            (&mut p.b_out, head),
        ] {
            buf.iter_mut().for_each(|w| *w = rng.random_range(-bound..=bound));
        }
        p
    }

    /// Flat views of all parameter buffers in a fixed order.
    pub fn buffers(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w_out, &self.b_out]
    }

    pub fn buffers_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w_out, &mut self.b_out]
    }

    pub fn is_finite(&self) -> bool {
        self.buffers().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Concatenates prompt, features and the prefix one-hots.
    pub fn input_vector(&self, prompt: &PromptEmbedding, features: &[f64], prefix: &[u8]) -> Result<Vec<f64>> {
        let d = self.dims;
        if prompt.dim() != d.embed_dim {
            return Err(Error::shape(format!(
                "prompt embedding has {} components, model expects {}",
                prompt.dim(),
                d.embed_dim
            )));
        }
        if features.len() != d.feature_dim {
            return Err(Error::shape(format!(
                "feature vector has {} components, model expects {}",
                features.len(),
                d.feature_dim
            )));
        }
        if prefix.len() > 3 || prefix.iter().any(|&g| g > 9) {
            return Err(Error::shape(format!("invalid digit prefix {prefix:?}")));
        }
        let mut x = Vec::with_capacity(d.input_dim());
        x.extend_from_slice(prompt.as_slice());
        x.extend_from_slice(features);
        x.resize(d.input_dim(), 0.0);
        let base = d.embed_dim + d.feature_dim;
        for (t, &g) in prefix.iter().enumerate() {
            x[base + 10 * t + g as usize] = 1.0;
        }
        Ok(x)
    }

    /// `tanh(W1 x + b1)`.
    pub fn hidden(&self, input: &[f64]) -> Vec<f64> {
        let n = self.dims.input_dim();
        self.w1
            .chunks_exact(n)
            .zip(&self.b1)
            .map(|(row, b)| (dot(row, input) + b).tanh())
            .collect()
    }

    /// Logits of output head `head` given hidden activations.
    pub fn head_logits(&self, head: usize, hidden: &[f64]) -> [f64; VOCAB_SIZE] {
        let h = self.dims.hidden;
        let mut out = [0.0; VOCAB_SIZE];
        for (v, o) in out.iter_mut().enumerate() {
            let row = (head * VOCAB_SIZE + v) * h;
            *o = dot(&self.w_out[row..row + h], hidden) + self.b_out[head * VOCAB_SIZE + v];
        }
        out
    }

    /// Logits at all predicted positions for one prefix.
    pub fn forward_logits(&self, prompt: &PromptEmbedding, features: &[f64], prefix: &[u8]) -> Result<PositionLogits> {
        let h = self.hidden(&self.input_vector(prompt, features, prefix)?);
        let mut out = [[0.0; VOCAB_SIZE]; N_HEADS];
        for (head, o) in out.iter_mut().enumerate() {
            *o = self.head_logits(head, &h);
        }
        Ok(out)
    }

    /// Digit-restricted distribution at digit position `t` given `prefix`
    /// (which must have length `t`).
    pub fn digit_distribution_at(
        &self,
        prompt: &PromptEmbedding,
        features: &[f64],
        prefix: &[u8],
    ) -> Result<DigitDistribution> {
        let t = prefix.len();
        if t > 2 {
            return Err(Error::shape(format!("digit prefix of length {t} has no next digit")));
        }
        let h = self.hidden(&self.input_vector(prompt, features, prefix)?);
        let logits = self.head_logits(head_index(DIGIT_POSITIONS[t]), &h);
        Ok(DigitDistribution::from_logits(digit_logits(&logits)))
    }

    /// Teacher-forced distributions `P(. | g_<t)` for `t = 0, 1, 2`.
    pub fn digit_distributions(
        &self,
        prompt: &PromptEmbedding,
        features: &[f64],
        g: DigitTriple,
    ) -> Result<[DigitDistribution; 3]> {
        let d = g.digits();
        Ok([
            self.digit_distribution_at(prompt, features, &d[..0])?,
            self.digit_distribution_at(prompt, features, &d[..1])?,
            self.digit_distribution_at(prompt, features, &d[..2])?,
        ])
    }

    /// Decodes a score. Greedy takes the argmax digit at each position;
    /// expected takes `sum_k k p_k` at each position under the greedy prefix,
    /// combines them in hundredths, rounds half away from zero and clamps to
    /// `range`. Pattern tokens come from the template.
    pub fn decode_score(
        &self,
        prompt: &PromptEmbedding,
        features: &[f64],
        mode: DecodeMode,
        range: ScoreRange,
        dimension: Dimension,
    ) -> Result<Score> {
        let mut prefix = Vec::with_capacity(3);
        let mut expected = [0.0; 3];
        for e in expected.iter_mut() {
            let dist = self.digit_distribution_at(prompt, features, &prefix)?;
            *e = dist.expectation();
            prefix.push(dist.argmax());
        }
        let triple = match mode {
            DecodeMode::Greedy => DigitTriple::new(prefix[0], prefix[1], prefix[2])?,
            DecodeMode::Expected => {
                let cents = 100.0 * expected[0] + 10.0 * expected[1] + expected[2];
                DigitTriple::from_cents(range.clamp_cents(cents.round() as u16))?
            }
        };
        Ok(Score::new(triple, dimension))
    }
}

/// The ten digit-token logits out of a full vocabulary row.
pub fn digit_logits(logits: &[f64; VOCAB_SIZE]) -> &[f64; 10] {
    logits[DIGIT_TOKENS].try_into().expect("ten digit tokens")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub const CHECKPOINT_FORMAT: &str = "ieqa-scorer";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON checkpoint: dimensions, seed, optional conditioning metadata and the
/// row-major weight arrays of [`ScorerParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub embed_dim: usize,
    pub feature_dim: usize,
    pub hidden: usize,
    pub vocab_size: usize,
    pub heads: usize,
    pub seed: u64,
    #[serde(default)]
    pub dimension: Option<Dimension>,
    #[serde(default)]
    pub definition: Option<String>,
    pub score_min: f64,
    pub score_max: f64,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

impl Checkpoint {
    pub fn new(
        params: &ScorerParams,
        dimension: Option<Dimension>,
        definition: Option<String>,
        range: ScoreRange,
    ) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            embed_dim: params.dims.embed_dim,
            feature_dim: params.dims.feature_dim,
            hidden: params.dims.hidden,
            vocab_size: VOCAB_SIZE,
            heads: N_HEADS,
            seed: params.seed,
            dimension,
            definition,
            score_min: range.lo(),
            score_max: range.hi(),
            w1: params.w1.clone(),
            b1: params.b1.clone(),
            w_out: params.w_out.clone(),
            b_out: params.b_out.clone(),
        }
    }

    pub fn params(&self) -> Result<ScorerParams> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        if self.vocab_size != VOCAB_SIZE || self.heads != N_HEADS {
            return Err(Error::shape("checkpoint vocabulary or head count differs"));
        }
        let dims = ScorerDims {
            embed_dim: self.embed_dim,
            feature_dim: self.feature_dim,
            hidden: self.hidden,
        };
        let expect = ScorerParams::zeros(dims);
        for (name, got, want) in [
            ("w1", self.w1.len(), expect.w1.len()),
            ("b1", self.b1.len(), expect.b1.len()),
            ("w_out", self.w_out.len(), expect.w_out.len()),
            ("b_out", self.b_out.len(), expect.b_out.len()),
        ] {
            if got != want {
                return Err(Error::shape(format!(
                    "checkpoint {name} has {got} entries, expected {want}"
                )));
            }
        }
        let params = ScorerParams {
            dims,
            seed: self.seed,
            w1: self.w1.clone(),
            b1: self.b1.clone(),
            w_out: self.w_out.clone(),
            b_out: self.b_out.clone(),
        };
        if !params.is_finite() {
            return Err(Error::domain("checkpoint contains non-finite weights"));
        }
        Ok(params)
    }

    pub fn range(&self) -> Result<ScoreRange> {
        ScoreRange::new(self.score_min, self.score_max)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        serde_json::to_writer(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
