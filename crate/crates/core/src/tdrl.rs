//! Token-decoupled distance regression loss.
//!
//! Pattern tokens are trained with cross-entropy; the three digit positions
//! are trained with the expected absolute digit distance
//! `sum_t 10^-t sum_k p_t(k) |k - g_t|`, where `p_t` is the digit-restricted
//! distribution conditioned on the ground-truth prefix.

use serde::Serialize;

use crate::codec::{DigitTriple, POSITION_WEIGHTS};
use crate::error::{Error, Result};
use crate::scorer::DigitDistribution;

/// Upper bound of the distance loss: `9 * (1 + 0.1 + 0.01)`.
pub const L_SCORE_MAX: f64 = 9.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TdrlBreakdown {
    pub l_ce: f64,
    pub l_score: f64,
    pub l_tdrl: f64,
    /// Weighted distance term of each digit position.
    pub score_terms: [f64; 3],
}

/// Distance part of the loss with its per-position terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoreLoss {
    pub total: f64,
    pub terms: [f64; 3],
}

/// Negative sum of the ground-truth log-probabilities at pattern positions.
pub fn l_ce(pattern_logprobs: &[f64]) -> Result<f64> {
    if let Some((i, lp)) = pattern_logprobs
        .iter()
        .enumerate()
        .find(|(_, lp)| !lp.is_finite() || **lp > 0.0)
    {
        return Err(Error::domain(format!(
            "log-probability {lp} at pattern position {i} is not in (-inf, 0]"
        )));
    }
    Ok(pattern_logprobs.iter().map(|lp| -lp).sum())
}

fn abs_distance(k: usize, g: u8) -> f64 {
    (k as f64 - g as f64).abs()
}

/// `sum_k p(k) |k - g|` at one position, before the decimal weight.
pub fn expected_distance(dist: &DigitDistribution, g: u8) -> f64 {
    dist.probs()
        .iter()
        .enumerate()
        .map(|(k, p)| p * abs_distance(k, g))
        .sum()
}

pub fn l_score(dists: &[DigitDistribution; 3], g: DigitTriple) -> ScoreLoss {
    let mut terms = [0.0; 3];
    for t in 0..3 {
        terms[t] = POSITION_WEIGHTS[t] * expected_distance(&dists[t], g.digit(t));
    }
    ScoreLoss {
        total: terms.iter().sum(),
        terms,
    }
}

/// Validating variant over raw probability rows, as read from user input.
pub fn l_score_checked(probs: &[[f64; 10]; 3], g: DigitTriple) -> Result<ScoreLoss> {
    let dists = checked_distributions(probs)?;
    Ok(l_score(&dists, g))
}

/// Validates three probability rows, naming the offending position.
pub fn checked_distributions(probs: &[[f64; 10]; 3]) -> Result<[DigitDistribution; 3]> {
    let check = |t: usize| {
        DigitDistribution::new(probs[t]).map_err(|e| match e {
            Error::Domain(msg) => Error::Domain(format!("digit position {t}: {msg}")),
            other => other,
        })
    };
    Ok([check(0)?, check(1)?, check(2)?])
}

/// Gradient of the distance loss with respect to the digit distributions'
/// softmax logits: `10^-t p_k (|k - g_t| - sum_j p_j |j - g_t|)`.
pub fn l_score_grad_from_dists(dists: &[DigitDistribution; 3], g: DigitTriple) -> [[f64; 10]; 3] {
    let mut grad = [[0.0; 10]; 3];
    for t in 0..3 {
        let gt = g.digit(t);
        let mean = expected_distance(&dists[t], gt);
        for (k, out) in grad[t].iter_mut().enumerate() {
            *out = POSITION_WEIGHTS[t] * dists[t].probs()[k] * (abs_distance(k, gt) - mean);
        }
    }
    grad
}

/// Gradient of the distance loss with respect to the 3 x 10 digit logits.
pub fn l_score_grad(digit_logits: &[[f64; 10]; 3], g: DigitTriple) -> [[f64; 10]; 3] {
    let dists = digit_logits.map(|z| DigitDistribution::from_logits(&z));
    l_score_grad_from_dists(&dists, g)
}

pub fn l_tdrl(pattern_logprobs: &[f64], dists: &[DigitDistribution; 3], g: DigitTriple) -> Result<TdrlBreakdown> {
    let ce = l_ce(pattern_logprobs)?;
    let score = l_score(dists, g);
    Ok(TdrlBreakdown {
        l_ce: ce,
        l_score: score.total,
        l_tdrl: ce + score.total,
        score_terms: score.terms,
    })
}

/// Arithmetic mean of per-sample breakdowns, summed in slice order.
pub fn mean_breakdown(samples: &[TdrlBreakdown]) -> Result<TdrlBreakdown> {
    if samples.is_empty() {
        return Err(Error::domain("cannot average an empty batch"));
    }
    let n = samples.len() as f64;
    let mut acc = TdrlBreakdown {
        l_ce: 0.0,
        l_score: 0.0,
        l_tdrl: 0.0,
        score_terms: [0.0; 3],
    };
    for s in samples {
        acc.l_ce += s.l_ce;
        acc.l_score += s.l_score;
        for t in 0..3 {
            acc.score_terms[t] += s.score_terms[t];
        }
    }
    acc.l_ce /= n;
    acc.l_score /= n;
    acc.score_terms.iter_mut().for_each(|v| *v /= n);
    acc.l_tdrl = acc.l_ce + acc.l_score;
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(a: u8, b: u8, c: u8) -> DigitTriple {
        DigitTriple::new(a, b, c).unwrap()
    }

    fn point(g: DigitTriple) -> [DigitDistribution; 3] {
        g.digits().map(DigitDistribution::point_mass)
    }

    #[test]
    fn ce_examples() {
        assert_eq!(l_ce(&[0.0; 4]).unwrap(), 0.0);
        let lp = (1.0f64 / 15.0).ln();
        assert!((l_ce(&[lp; 4]).unwrap() - 10.832_200_804_408_84).abs() < 1e-9);
        assert!((l_ce(&[0.5f64.ln(), 0.0, 0.0, 0.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(matches!(l_ce(&[0.1, 0.0, 0.0, 0.0]), Err(Error::Domain(_))));
        assert!(l_ce(&[f64::NAN]).is_err());
    }

    #[test]
    fn score_examples() {
        let gt = g(4, 2, 0);
        assert_eq!(l_score(&point(gt), gt).total, 0.0);
        let uniform = [DigitDistribution::uniform(); 3];
        let s = l_score(&uniform, gt);
        assert!((s.total - 2.855).abs() < 1e-12);
        assert!((s.terms[0] - 2.5).abs() < 1e-12);
        assert!((s.terms[1] - 0.31).abs() < 1e-12);
        assert!((s.terms[2] - 0.045).abs() < 1e-12);
        let mut off = point(gt);
        off[0] = DigitDistribution::point_mass(5);
        assert_eq!(l_score(&off, gt).total, 1.0);
    }

    #[test]
    fn unnormalized_rows_are_rejected_with_position() {
        let mut rows = [[0.1; 10]; 3];
        rows[2][0] = 0.5;
        match l_score_checked(&rows, g(1, 1, 1)) {
            Err(Error::Domain(msg)) => assert!(msg.contains("position 2"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn grad_examples() {
        let gt = g(4, 2, 0);
        let grad = l_score_grad(&[[0.0; 10]; 3], gt);
        assert!((grad[0][9] - 0.25).abs() < 1e-15);
        for row in &grad {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
        let mut logits = [[0.0; 10]; 3];
        for t in 0..3 {
            logits[t][gt.digit(t) as usize] = 60.0;
        }
        assert!(l_score_grad(&logits, gt).iter().flatten().all(|v| v.abs() < 1e-20));
    }

    #[test]
    fn tdrl_examples() {
        let gt = g(4, 2, 0);
        assert_eq!(l_tdrl(&[0.0; 4], &point(gt), gt).unwrap().l_tdrl, 0.0);
        let b = l_tdrl(&[0.0; 4], &[DigitDistribution::uniform(); 3], gt).unwrap();
        assert!((b.l_tdrl - 2.855).abs() < 1e-12);
        let lp = (1.0f64 / 15.0).ln();
        let b = l_tdrl(&[lp; 4], &point(gt), gt).unwrap();
        assert!((b.l_tdrl - 4.0 * 15f64.ln()).abs() < 1e-12);
        assert_eq!(b.l_tdrl, b.l_ce + b.l_score);
    }

    #[test]
    fn batch_mean() {
        let gt = g(4, 2, 0);
        let a = l_tdrl(&[0.0; 4], &[DigitDistribution::uniform(); 3], gt).unwrap();
        let b = l_tdrl(&[-1.0, 0.0, 0.0, 0.0], &point(gt), gt).unwrap();
        let m = mean_breakdown(&[a, b]).unwrap();
        assert!((m.l_score - 2.855 / 2.0).abs() < 1e-12);
        assert_eq!(m.l_ce, 0.5);
        assert_eq!(m.l_tdrl, m.l_ce + m.l_score);
        assert!(mean_breakdown(&[]).is_err());
    }

    fn arb_dist() -> impl Strategy<Value = DigitDistribution> {
        prop::array::uniform10(0.0f64..1.0).prop_filter_map("nonzero mass", |w| {
            let s: f64 = w.iter().sum();
            (s > 1e-6).then(|| DigitDistribution::new(w.map(|x| x / s)).unwrap())
        })
    }

    proptest! {
        #[test]
        fn moving_mass_closer_reduces_loss_exactly(
            d in arb_dist(), gt in 0u8..10, a in 0usize..10, b in 0usize..10, frac in 0.01f64..1.0, t in 0usize..3
        ) {
            let da = (a as f64 - gt as f64).abs();
            let db = (b as f64 - gt as f64).abs();
            prop_assume!(db < da && d.probs()[a] > 1e-6);
            let eps = d.probs()[a] * frac;
            let mut moved = *d.probs();
            moved[a] -= eps;
            moved[b] += eps;
            let moved = DigitDistribution::new(moved).unwrap();
            let mut digits = [0u8; 3];
            digits[t] = gt;
            let truth = DigitTriple::new(digits[0], digits[1], digits[2]).unwrap();
            let mut before = [DigitDistribution::point_mass(0); 3];
            before[t] = d;
            let mut after = before;
            after[t] = moved;
            let drop = l_score(&before, truth).total - l_score(&after, truth).total;
            let expected = POSITION_WEIGHTS[t] * eps * (da - db);
            prop_assert!(drop > 0.0);
            prop_assert!((drop - expected).abs() < 1e-12);
        }

        #[test]
        fn position_weights_are_hierarchical(d in arb_dist(), gt in 0u8..10, t in 0usize..2) {
            let mut at_t = [DigitDistribution::point_mass(gt); 3];
            at_t[t] = d;
            let mut at_next = [DigitDistribution::point_mass(gt); 3];
            at_next[t + 1] = d;
            let truth = DigitTriple::new(gt, gt, gt).unwrap();
            let hi = l_score(&at_t, truth).total;
            let lo = l_score(&at_next, truth).total;
            prop_assert!((hi - 10.0 * lo).abs() < 1e-12);
        }

        #[test]
        fn loss_is_bounded(d0 in arb_dist(), d1 in arb_dist(), d2 in arb_dist(), a in 0u8..10, b in 0u8..10, c in 0u8..10) {
            let s = l_score(&[d0, d1, d2], DigitTriple::new(a, b, c).unwrap());
            prop_assert!(s.total >= 0.0 && s.total <= L_SCORE_MAX + 1e-12);
            for t in 0..3 {
                prop_assert!(s.terms[t] >= 0.0 && s.terms[t] <= 9.0 * POSITION_WEIGHTS[t] + 1e-12);
            }
        }
    }
}
