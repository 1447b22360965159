//! Independent reference implementations used to cross-check the library.
//! Nothing here calls into the code under test except plain data accessors.

#![allow(dead_code)]

pub mod checks;

use ieqa_core::scorer::{PromptEmbedding, ScorerParams};
use ieqa_core::trainer::Objective;
use ieqa_core::DigitTriple;
use rand::Rng;
use rand_xoshiro::SplitMix64;

pub const VOCAB: usize = 15;
pub const FIRST_DIGIT_TOKEN: usize = 4;

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Norm-wise relative error `||a - b|| / max(||a||, ||b||)` of one gradient
/// row, the usual gradient-check measure: entries that are tiny next to the
/// rest of the row cannot blow it up through finite-difference roundoff.
pub fn row_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Expected absolute digit distance, weighted 1, 0.1, 0.01, straight from
/// the definition.
pub fn l_score_from_logits(logits: &[[f64; 10]; 3], g: [u8; 3]) -> f64 {
    let mut total = 0.0;
    for t in 0..3 {
        let p = softmax(&logits[t]);
        let mut inner = 0.0;
        for k in 0..10 {
            inner += p[k] * (k as f64 - g[t] as f64).abs();
        }
        total += 10f64.powi(-(t as i32)) * inner;
    }
    total
}

pub fn random_logits(rng: &mut SplitMix64, scale: f64) -> [[f64; 10]; 3] {
    let mut z = [[0.0; 10]; 3];
    for row in z.iter_mut() {
        for v in row.iter_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
    z
}

/// Hand-rolled FNV-1a 64 character-trigram embedding.
pub fn embed(text: &str, dim: usize) -> Vec<f64> {
    let chars: Vec<char> = text.chars().collect();
    let mut v = vec![0.0; dim];
    if chars.len() >= 3 {
        for i in 0..chars.len() - 2 {
            let s: String = chars[i..i + 3].iter().collect();
            let mut h: u64 = 0xcbf2_9ce4_8422_2325;
            for b in s.bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
            v[(h % dim as u64) as usize] += 1.0;
        }
    }
    let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in &mut v {
            *x /= n;
        }
    }
    v
}

/// Input layout: prompt, features, then 3 blocks of 10 one-hot slots.
pub fn input(prompt: &[f64], features: &[f64], prefix: &[u8]) -> Vec<f64> {
    let mut x = prompt.to_vec();
    x.extend_from_slice(features);
    let base = x.len();
    x.extend(std::iter::repeat_n(0.0, 30));
    for (t, &d) in prefix.iter().enumerate() {
        x[base + 10 * t + d as usize] = 1.0;
    }
    x
}

/// Logits of all 7 heads by explicit loops over the row-major buffers.
pub fn forward(p: &ScorerParams, x: &[f64]) -> Vec<Vec<f64>> {
    let hdim = p.dims.hidden;
    let n = x.len();
    let mut h = vec![0.0; hdim];
    for j in 0..hdim {
        let mut a = p.b1[j];
        for i in 0..n {
            a += p.w1[j * n + i] * x[i];
        }
        h[j] = a.tanh();
    }
    let mut out = vec![vec![0.0; VOCAB]; 7];
    for head in 0..7 {
        for v in 0..VOCAB {
            let mut a = p.b_out[head * VOCAB + v];
            for j in 0..hdim {
                a += p.w_out[(head * VOCAB + v) * hdim + j] * h[j];
            }
            out[head][v] = a;
        }
    }
    out
}

fn neg_log_softmax(z: &[f64], i: usize) -> f64 {
    -softmax(z)[i].ln()
}

/// One sample's training objective rebuilt from the template definition:
/// positions 1..=7 carry "score", ":", D0, ".", D1, D2, EOS and see the digit
/// prefix generated before them.
pub fn objective(p: &ScorerParams, prompt: &[f64], features: &[f64], g: DigitTriple, obj: Objective) -> f64 {
    let d = g.digits();
    // (head, prefix length, target token, digit index if a digit)
    let layout: [(usize, usize, usize, Option<usize>); 7] = [
        (0, 0, 1, None),
        (1, 0, 2, None),
        (2, 0, FIRST_DIGIT_TOKEN + d[0] as usize, Some(0)),
        (3, 1, 3, None),
        (4, 1, FIRST_DIGIT_TOKEN + d[1] as usize, Some(1)),
        (5, 2, FIRST_DIGIT_TOKEN + d[2] as usize, Some(2)),
        (6, 3, 14, None),
    ];
    let mut total = 0.0;
    for (head, plen, target, digit) in layout {
        let z = forward(p, &input(prompt, features, &d[..plen]))[head].clone();
        match digit {
            None => total += neg_log_softmax(&z, target),
            Some(t) => {
                if obj.digit_score {
                    let pd = softmax(&z[FIRST_DIGIT_TOKEN..FIRST_DIGIT_TOKEN + 10]);
                    let e: f64 = (0..10).map(|k| pd[k] * (k as f64 - d[t] as f64).abs()).sum();
                    total += 10f64.powi(-(t as i32)) * e;
                }
                if obj.digit_ce {
                    total += neg_log_softmax(&z, target);
                }
            }
        }
    }
    total
}

pub fn prompt_vec(e: &PromptEmbedding) -> Vec<f64> {
    e.as_slice().to_vec()
}

/// Average ranks by counting: `1 + #less + (#equal - 1) / 2`.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|a| {
            let less = x.iter().filter(|b| *b < a).count() as f64;
            let equal = x.iter().filter(|b| *b == a).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

/// Pearson via the direct covariance formula.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n;
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n;
    cov / (vx * vy).sqrt()
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

/// Seeded vector of length 2..=8; with `ties`, values come from a 4-point
/// grid so repeats are common.
pub fn random_vector(rng: &mut SplitMix64, len: usize, ties: bool) -> Vec<f64> {
    (0..len)
        .map(|_| {
            if ties {
                rng.random_range(0..4) as f64
            } else {
                rng.random_range(-10.0..10.0)
            }
        })
        .collect()
}
