//! Gradient correctness of the model stack.
//!
//! The numeric side of every check is central finite differences over
//! objective values only; the tabular checks additionally pin the gradient
//! against a hand-derived closed form coded straight from the softmax rule.

use unlearn_lab::gradcheck::{check_gradient, random_coords};
use unlearn_lab::model::{
    grad, DiffModel, ModelConfig, ModelParams, NllObjective, Objective, SeqRowGrad,
    SequenceScorer, TabularLm,
};
use unlearn_lab::vocab::{Region, TokenSeq};

fn small_model(seed: u64) -> ModelParams {
    let cfg = ModelConfig {
        vocab_size: 12,
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        context: 10,
        tied_output: false,
    };
    ModelParams::init(cfg, seed).unwrap()
}

fn qa_seq(ids: &[u32], qlen: usize, k: usize) -> TokenSeq {
    TokenSeq::with_question_len(ids.to_vec(), qlen, k).unwrap()
}

#[test]
fn constant_objective_has_zero_gradient() {
    struct Constant;
    impl Objective for Constant {
        fn eval(
            &self,
            _scorer: &dyn SequenceScorer,
        ) -> unlearn_lab::Result<(f64, Vec<SeqRowGrad>)> {
            Ok((4.25, Vec::new()))
        }
    }
    let model = small_model(0);
    let g = grad(&model, &Constant).unwrap();
    assert!(g.iter().all(|&x| x == 0.0));
}

#[test]
fn nll_gradient_matches_finite_differences_on_transformer() {
    let mut model = small_model(0);
    let obj = NllObjective {
        seqs: vec![qa_seq(&[4, 7, 5, 9], 2, 12), qa_seq(&[6, 4, 11, 8, 5], 2, 12)],
        region: Region::Answer,
    };
    let coords = random_coords(model.num_params(), 120, 1);
    let res = check_gradient(&mut model, &obj, &coords, 1e-5).unwrap();
    assert!(
        res.max_rel_err < 1e-4,
        "max rel err {} at coord {}",
        res.max_rel_err,
        res.worst_coord
    );
}

#[test]
fn nll_gradient_matches_finite_differences_with_tied_output() {
    let cfg = ModelConfig {
        vocab_size: 10,
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        context: 8,
        tied_output: true,
    };
    let mut model = ModelParams::init(cfg, 3).unwrap();
    let obj = NllObjective {
        seqs: vec![qa_seq(&[4, 7, 5], 1, 10)],
        region: Region::All,
    };
    let coords = random_coords(model.num_params(), 120, 2);
    let res = check_gradient(&mut model, &obj, &coords, 1e-5).unwrap();
    assert!(res.max_rel_err < 1e-4, "max rel err {}", res.max_rel_err);
}

/// Closed-form bigram gradient of a sequence log-probability: for each scored
/// position with context row c and target y, d log p / d logits[c][j] is
/// 1[j = y] − softmax(logits[c])[j].
fn tabular_closed_form_seq_grad(lm: &TabularLm, seq: &TokenSeq, region: Region) -> Vec<f64> {
    let k = lm.vocab_size();
    let table = lm.prob_table();
    let mut g = vec![0.0; (k + 1) * k];
    for t in seq.region_range(region) {
        let ctx = if t == 0 { k } else { seq.ids()[t - 1] as usize };
        let y = seq.ids()[t] as usize;
        for j in 0..k {
            // negative because the objective below is the NLL
            let indicator = if j == y { 1.0 } else { 0.0 };
            g[ctx * k + j] -= indicator - table[[ctx, j]];
        }
    }
    g
}

#[test]
fn tabular_gradient_matches_hand_derived_softmax_form() {
    let k = 6;
    let logits: Vec<f64> = (0..(k + 1) * k).map(|i| ((i * 37 % 17) as f64) * 0.21 - 1.3).collect();
    let lm = TabularLm::from_logits(k, logits).unwrap();
    let seq = qa_seq(&[2, 5, 1, 3], 1, k);
    let obj = NllObjective { seqs: vec![seq.clone()], region: Region::Answer };
    let (_, analytic) = lm.value_and_grad(&obj).unwrap();
    let expected = tabular_closed_form_seq_grad(&lm, &seq, Region::Answer);
    for (a, e) in analytic.iter().zip(&expected) {
        assert!((a - e).abs() < 1e-12, "analytic {a} vs closed form {e}");
    }
}

#[test]
fn tabular_gradient_matches_finite_differences() {
    let k = 5;
    let logits: Vec<f64> = (0..(k + 1) * k).map(|i| ((i * 13 % 11) as f64) * 0.3 - 1.0).collect();
    let mut lm = TabularLm::from_logits(k, logits).unwrap();
    let obj = NllObjective {
        seqs: vec![qa_seq(&[2, 4, 1], 1, k)],
        region: Region::Answer,
    };
    let coords: Vec<usize> = (0..lm.num_params()).collect();
    let res = check_gradient(&mut lm, &obj, &coords, 1e-5).unwrap();
    assert!(res.max_rel_err < 1e-6, "max rel err {}", res.max_rel_err);
}

#[test]
fn non_finite_loss_reports_numeric_error() {
    struct Bad;
    impl Objective for Bad {
        fn eval(
            &self,
            _scorer: &dyn SequenceScorer,
        ) -> unlearn_lab::Result<(f64, Vec<SeqRowGrad>)> {
            Ok((f64::NAN, Vec::new()))
        }
    }
    let model = small_model(0);
    match model.value_and_grad(&Bad) {
        Err(unlearn_lab::Error::Numeric { .. }) => {}
        other => panic!("expected numeric error, got {other:?}"),
    }
}
