//! Finite-difference gradient checks shared by the gradient tests and the
//! acceptance run. Each returns the worst relative error it saw.

use ieqa_core::defvalue::LabeledSample;
use ieqa_core::scorer::{embed_prompt, ScorerDims, ScorerParams};
use ieqa_core::tdrl::l_score_grad;
use ieqa_core::trainer::{accumulate_sample_gradient, Objective};
use ieqa_core::DigitTriple;
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

pub const STEP: f64 = 1e-5;
const PROMPT: &str = "Judge sharpness and artifacts.";

pub fn random_triple(rng: &mut SplitMix64) -> DigitTriple {
    DigitTriple::from_cents(rng.random_range(0..1000)).unwrap()
}

/// Analytic digit-logit gradient against central differences of the
/// reference loss on `sets` seeded logit sets. Also asserts that every row
/// sums to zero.
pub fn l_score_grad_worst(seed: u64, sets: usize) -> f64 {
    let mut rng = SplitMix64::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..sets {
        let z = super::random_logits(&mut rng, 3.0);
        let g = random_triple(&mut rng);
        let analytic = l_score_grad(&z, g);
        for t in 0..3 {
            let row_sum: f64 = analytic[t].iter().sum();
            assert!(row_sum.abs() < 1e-12, "row {t} sums to {row_sum}");
            let mut fd = [0.0; 10];
            for (k, slot) in fd.iter_mut().enumerate() {
                let (mut up, mut down) = (z, z);
                up[t][k] += STEP;
                down[t][k] -= STEP;
                *slot = (super::l_score_from_logits(&up, g.digits()) - super::l_score_from_logits(&down, g.digits()))
                    / (2.0 * STEP);
            }
            worst = worst.max(super::row_rel_err(&analytic[t], &fd));
        }
    }
    worst
}

pub fn miniature(seed: u64) -> (ScorerParams, Vec<f64>, LabeledSample) {
    let dims = ScorerDims {
        embed_dim: 8,
        feature_dim: 4,
        hidden: 4,
    };
    // larger weights than the default init so every term has curvature
    let mut p = ScorerParams::init(dims, seed);
    let mut rng = SplitMix64::seed_from_u64(seed ^ 0xabc);
    for b in p.buffers_mut() {
        b.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
    }
    let prompt = super::embed(PROMPT, 8);
    let sample = LabeledSample {
        features: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
        target: random_triple(&mut rng),
    };
    (p, prompt, sample)
}

/// Backprop through the miniature scorer against central differences of
/// the reference objective, every parameter, three seeds. Also asserts the
/// loss itself matches the reference.
pub fn full_model_worst(objective: Objective) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..3 {
        let (p, prompt_v, sample) = miniature(seed);
        let prompt = embed_prompt(PROMPT, 8);
        assert_eq!(super::prompt_vec(&prompt), prompt_v);
        let mut grad = ScorerParams::zeros(p.dims);
        let loss = accumulate_sample_gradient(&p, &prompt, &sample, objective, &mut grad).unwrap();
        let oracle = super::objective(&p, &prompt_v, &sample.features, sample.target, objective);
        assert!((loss.objective - oracle).abs() < 1e-12 * oracle.max(1.0));

        for b in 0..4 {
            for i in 0..p.buffers()[b].len() {
                let mut up = p.clone();
                up.buffers_mut()[b][i] += STEP;
                let mut down = p.clone();
                down.buffers_mut()[b][i] -= STEP;
                let fd = (super::objective(&up, &prompt_v, &sample.features, sample.target, objective)
                    - super::objective(&down, &prompt_v, &sample.features, sample.target, objective))
                    / (2.0 * STEP);
                worst = worst.max(super::rel_err(grad.buffers()[b][i], fd, 1e-6));
            }
        }
    }
    worst
}
