mod support;

use ieqa_core::scorer::embed_prompt;
use ieqa_core::trainer::{LossKind, Objective};
use support::checks;

#[test]
fn l_score_grad_matches_central_differences() {
    let worst = checks::l_score_grad_worst(11, 100);
    assert!(worst < 1e-5, "worst relative error {worst:e}");
}

#[test]
fn full_model_gradient_tdrl() {
    let worst = checks::full_model_worst(Objective::new(LossKind::Tdrl, false));
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

#[test]
fn full_model_gradient_tdrl_with_digit_ce() {
    let worst = checks::full_model_worst(Objective::new(LossKind::Tdrl, true));
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

#[test]
fn full_model_gradient_ce_only() {
    let worst = checks::full_model_worst(Objective::new(LossKind::CeOnly, false));
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

#[test]
fn forward_matches_naive_loops() {
    for seed in 0..5 {
        let (p, prompt_v, sample) = checks::miniature(seed);
        let prompt = embed_prompt("Judge sharpness and artifacts.", 8);
        let d = sample.target.digits();
        for plen in 0..=3 {
            let lib = p.forward_logits(&prompt, &sample.features, &d[..plen]).unwrap();
            let naive = support::forward(&p, &support::input(&prompt_v, &sample.features, &d[..plen]));
            for head in 0..7 {
                for v in 0..15 {
                    assert!((lib[head][v] - naive[head][v]).abs() < 1e-12);
                }
            }
        }
        // teacher-forced digit distributions equal a softmax over the digit slots
        let dists = p.digit_distributions(&prompt, &sample.features, sample.target).unwrap();
        for (t, head) in [(0, 2), (1, 4), (2, 5)] {
            let z = support::forward(&p, &support::input(&prompt_v, &sample.features, &d[..t]));
            let want = support::softmax(&z[head][4..14]);
            for k in 0..10 {
                assert!((dists[t].probs()[k] - want[k]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn embedding_matches_hand_rolled_fnv() {
    for text in [
        "",
        "ab",
        "abc",
        "Rate the visual quality of the edited image.",
        "Über-scharf: ñandú 画像の品質",
        "aaaaaaa",
    ] {
        for dim in [1, 7, 64] {
            assert_eq!(
                embed_prompt(text, dim).as_slice(),
                support::embed(text, dim).as_slice(),
                "{text:?} dim {dim}"
            );
        }
    }
}
