//! Definition value: how confidently the scorer, prompted with a metric
//! definition, reproduces ground-truth digits under teacher forcing.

use serde::{Deserialize, Serialize};

use crate::codec::{DigitTriple, POSITION_WEIGHTS};
use crate::error::{Error, Result};
use crate::par;
use crate::scorer::{embed_prompt, ScorerParams};

/// `1 + 0.1 + 0.01`, reached when every ground-truth digit has probability 1.
pub const V_D_MAX: f64 = 1.11;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefinitionValue {
    pub v: f64,
    pub n_samples: usize,
}

/// Features plus the ground-truth digits of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub target: DigitTriple,
}

/// `P0 + 0.1 P1 + 0.01 P2` for the ground-truth digit probabilities.
pub fn v_d_single(gt_probs: [f64; 3]) -> Result<f64> {
    if let Some(t) = gt_probs.iter().position(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::domain(format!(
            "probability {} at digit position {t} is outside [0, 1]",
            gt_probs[t]
        )));
    }
    Ok(gt_probs.iter().zip(POSITION_WEIGHTS).map(|(p, w)| p * w).sum())
}

/// Mean definition value over `samples` for the given definition text.
/// Samples are scored in parallel and reduced in slice order.
pub fn v_d_aggregate(samples: &[LabeledSample], params: &ScorerParams, definition: &str) -> Result<DefinitionValue> {
    if samples.is_empty() {
        return Err(Error::domain("definition value needs at least one sample"));
    }
    let prompt = embed_prompt(definition, params.dims.embed_dim);
    let per_sample = par::map_collect(samples, |s| -> Result<f64> {
        let dists = params.digit_distributions(&prompt, &s.features, s.target)?;
        let probs = [0, 1, 2].map(|t| dists[t].prob(s.target.digit(t)));
        v_d_single(probs)
    });
    let mut sum = 0.0;
    for v in per_sample {
        sum += v?;
    }
    Ok(DefinitionValue {
        v: sum / samples.len() as f64,
        n_samples: samples.len(),
    })
}
