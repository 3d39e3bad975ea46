//! Named finite-difference verification cases: one per differentiable
//! tape primitive, plus the composite training losses, each run at several
//! seeds in both precisions.
//!
//! A case passes when the worst relative error over all inputs, elements,
//! and seeds stays within the precision's tolerance (1e-6 for f64, 1e-4
//! for f32, matching the step sizes the checker uses).

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

use crate::autodiff::fdcheck::{check_gradients, FdInput, FdSettings};
use crate::autodiff::{Real, Tape, TapeResult, ValueId};
use crate::contrastive::{
    build_affinity_targets, loss_image_action, loss_text_image, loss_triple, similarity_logits,
    ContrastiveResult,
};
use crate::losses::{
    action_loss, goal_progress_loss, goal_progress_targets, object_loss, total_loss, LossResult,
};
use crate::world::episode::mix_seeds;

/// Every case in the suite, primitives first. `kl_div_probs` and
/// `cosine_similarity` are public conveniences built on the same recorded
/// steps but with their own gradient paths worth pinning.
pub const CASE_NAMES: [&str; 33] = [
    "matmul",
    "transpose",
    "add",
    "add_row",
    "mul",
    "scale",
    "sum_all",
    "embed_lookup",
    "conv1d",
    "mean_rows",
    "l2_normalize_rows",
    "softmax_rows",
    "masked_softmax_rows",
    "layer_norm_rows",
    "gelu",
    "sigmoid",
    "clamp",
    "div_by_scalar",
    "cross_entropy_probs",
    "kl_div_probs",
    "mse_weighted",
    "concat_rows",
    "concat_cols",
    "slice_rows",
    "slice_cols",
    "cosine_similarity",
    "image_action_alignment",
    "text_image_alignment",
    "triple_blend",
    "action_cross_entropy",
    "object_cross_entropy",
    "goal_progress_mse",
    "supervised_total",
];

/// Cases after this index compose several primitives into a training loss.
pub const PRIMITIVE_CASES: usize = 26;

pub const SUITE_SEEDS: u64 = 10;

const CASE_TAG: u64 = 0x4744_5355_4954_4500;

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: &'static str,
    pub precision: &'static str,
    pub seeds: u64,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CaseResult {
    pub fn line(&self) -> String {
        format!(
            "{:<24} {:>3}  max rel err {:>12.3e}  tol {:>7.0e}  {}",
            self.name,
            self.precision,
            self.max_rel_error,
            self.tolerance,
            if self.passed { "ok" } else { "FAIL" }
        )
    }
}

/// Runs every case at [`SUITE_SEEDS`] seeds in f64 and f32. The result
/// list holds two entries per case, f64 first.
pub fn run_gradient_suite() -> TapeResult<Vec<CaseResult>> {
    let mut out = Vec::with_capacity(CASE_NAMES.len() * 2);
    for (index, &name) in CASE_NAMES.iter().enumerate() {
        out.push(run_case::<f64>(index, name, "f64", FdSettings::for_f64())?);
        out.push(run_case::<f32>(index, name, "f32", FdSettings::for_f32())?);
    }
    Ok(out)
}

fn run_case<F: Real>(
    index: usize,
    name: &'static str,
    precision: &'static str,
    settings: FdSettings,
) -> TapeResult<CaseResult> {
    // Zero tolerance turns the checker's failure list into a full error
    // report, so the maximum is over every element, not just the bad ones.
    let probe = FdSettings { step: settings.step, tolerance: 0.0 };
    let mut max_rel_error = 0.0f64;
    for seed in 0..SUITE_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seeds(CASE_TAG ^ index as u64, seed));
        for failure in case_errors::<F>(name, &mut rng, &probe)? {
            max_rel_error = max_rel_error.max(failure.error);
        }
    }
    Ok(CaseResult {
        name,
        precision,
        seeds: SUITE_SEEDS,
        max_rel_error,
        tolerance: settings.tolerance,
        passed: max_rel_error <= settings.tolerance,
    })
}

// ── input sampling ──

fn draw<F: Real>(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<F> {
    (0..n).map(|_| F::from_f64(rng.random_range(lo..hi))).collect()
}

fn draw_f64(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Values bounded away from zero, so row norms stay well conditioned.
fn draw_signed<F: Real>(rng: &mut ChaCha8Rng, n: usize) -> Vec<F> {
    (0..n)
        .map(|_| {
            let magnitude = rng.random_range(0.5..1.5);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            F::from_f64(sign * magnitude)
        })
        .collect()
}

/// Values kept clear of the clamp boundaries, where the derivative jumps
/// and a finite difference straddling the kink would be meaningless.
fn draw_off_kink<F: Real>(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64, margin: f64) -> Vec<F> {
    (0..n)
        .map(|_| loop {
            let v: f64 = rng.random_range(-2.0..2.0);
            if (v - lo).abs() > margin && (v - hi).abs() > margin {
                break F::from_f64(v);
            }
        })
        .collect()
}

fn prob_rows(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(r * c);
    for _ in 0..r {
        let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        out.extend(raw.iter().map(|v| v / sum));
    }
    out
}

fn to_f<F: Real>(v: &[f64]) -> Vec<F> {
    v.iter().map(|&x| F::from_f64(x)).collect()
}

// ── readouts ──

/// Elementwise product with fixed random weights, summed. Breaks the
/// permutation invariance a bare sum would have, so misrouted gradients
/// cannot cancel.
fn readout<F: Real>(tape: &mut Tape<F>, y: ValueId, w: &[f64]) -> TapeResult<ValueId> {
    let shape = tape.shape(y).to_vec();
    let n = tape.numel(y);
    let c = tape.constant(to_f::<F>(&w[..n]), &shape)?;
    let p = tape.mul(y, c)?;
    tape.sum_all(p)
}

fn tapeify_c<T>(r: ContrastiveResult<T>) -> TapeResult<T> {
    r.map_err(|e| match e {
        crate::contrastive::ContrastiveError::Tape(t) => t,
        other => panic!("contrastive case rejected fixed inputs: {other}"),
    })
}

fn tapeify_l<T>(r: LossResult<T>) -> TapeResult<T> {
    r.map_err(|e| match e {
        crate::losses::LossError::Tape(t) => t,
        other => panic!("loss case rejected fixed inputs: {other}"),
    })
}

// ── the cases ──

type Failures = Vec<crate::autodiff::fdcheck::FdFailure>;

fn case_errors<F: Real>(name: &str, rng: &mut ChaCha8Rng, probe: &FdSettings) -> TapeResult<Failures> {
    match name {
        "matmul" => {
            let a = FdInput::new("a", draw::<F>(rng, 12, -1.5, 1.5), &[3, 4]);
            let b = FdInput::new("b", draw::<F>(rng, 8, -1.5, 1.5), &[4, 2]);
            let w = draw_f64(rng, 6, -1.0, 1.0);
            check_gradients(&[a, b], probe, move |tape, xs| {
                let y = tape.matmul(xs[0], xs[1])?;
                readout(tape, y, &w)
            })
        }
        "transpose" => {
            let x = FdInput::new("x", draw::<F>(rng, 12, -1.5, 1.5), &[3, 4]);
            let w = draw_f64(rng, 12, -1.0, 1.0);
            check_gradients(&[x], probe, move |tape, xs| {
                let y = tape.transpose(xs[0])?;
                readout(tape, y, &w)
            })
        }
        "add" => {
            let a = FdInput::new("a", draw::<F>(rng, 12, -1.5, 1.5), &[3, 4]);
            let b = FdInput::new("b", draw::<F>(rng, 12, -1.5, 1.5), &[3, 4]);
            let w = draw_f64(rng, 12, -1.0, 1.0);
            check_gradients(&[a, b], probe, move |tape, xs| {
                let y = tape.add(xs[0], xs[1])?;
                readout(tape, y, &w)
            })
        }
        "add_row" => {
            let m = FdInput::new("m", draw::<F>(rng, 12, -1.5, 1.5), &[3, 4]);
            let row = FdInput::new("row", draw::<F>(rng, 4, -1.5, 1.5), &[1, 4]);
            let w = draw_f64(rng, 12, -1.0, 1.0);
            check_gradients(&[m, row], probe, move |tape, xs| {
                let y = tape.add_row(xs[0], xs[1])?;
                readout(tape, y, &w)
            })
        }
        "mul" => {
            let a = FdInput::new("a", draw::<F>(rng, 12, -1.5, 1.5), &[3, 4]);
            let b = FdInput::new("b", draw::<F>(rng, 12, -1.5, 1.5), &[3, 4]);
            let w = draw_f64(rng, 12, -1.0, 1.0);
            check_gradients(&[a, b], probe, move |tape, xs| {
                let y = tape.mul(xs[0], xs[1])?;
                readout(tape, y, &w)
            })
        }
        "scale" => {
            let x = FdInput::new("x", draw::<F>(rng, 12, -1.5, 1.5), &[3, 4]);
            let w = draw_f64(rng, 12, -1.0, 1.0);
            check_gradients(&[x], probe, move |tape, xs| {
                let y = tape.scale(xs[0], F::from_f64(1.7))?;
                readout(tape, y, &w)
            })
        }
        "sum_all" => {
            let x = FdInput::new("x", draw::<F>(rng, 12, -1.5, 1.5), &[3, 4]);
            check_gradients(&[x], probe, |tape, xs| tape.sum_all(xs[0]))
        }
        "embed_lookup" => {
            // Index 2 repeats, so its row's gradient must accumulate.
            let table = FdInput::new("table", draw::<F>(rng, 15, -1.5, 1.5), &[5, 3]);
            let w = draw_f64(rng, 12, -1.0, 1.0);
            check_gradients(&[table], probe, move |tape, xs| {
                let y = tape.embed_lookup(xs[0], &[2, 0, 4, 2])?;
                readout(tape, y, &w)
            })
        }
        "conv1d" => {
            let input = FdInput::new("input", draw::<F>(rng, 18, -1.5, 1.5), &[6, 3]);
            let kernel = FdInput::new("kernel", draw::<F>(rng, 12, -1.0, 1.0), &[6, 2]);
            let bias = FdInput::new("bias", draw::<F>(rng, 2, -0.5, 0.5), &[1, 2]);
            let w = draw_f64(rng, 10, -1.0, 1.0);
            check_gradients(&[input, kernel, bias], probe, move |tape, xs| {
                let y = tape.conv1d(xs[0], xs[1], xs[2], 2)?;
                readout(tape, y, &w)
            })
        }
        "mean_rows" => {
            let x = FdInput::new("x", draw::<F>(rng, 12, -1.5, 1.5), &[3, 4]);
            let w = draw_f64(rng, 4, -1.0, 1.0);
            check_gradients(&[x], probe, move |tape, xs| {
                let y = tape.mean_rows(xs[0])?;
                readout(tape, y, &w)
            })
        }
        "l2_normalize_rows" => {
            let x = FdInput::new("x", draw_signed::<F>(rng, 12), &[3, 4]);
            let w = draw_f64(rng, 12, -1.0, 1.0);
            check_gradients(&[x], probe, move |tape, xs| {
                let y = tape.l2_normalize_rows(xs[0])?;
                readout(tape, y, &w)
            })
        }
        "softmax_rows" => {
            let x = FdInput::new("x", draw::<F>(rng, 12, -1.5, 1.5), &[3, 4]);
            let w = draw_f64(rng, 12, -1.0, 1.0);
            check_gradients(&[x], probe, move |tape, xs| {
                let y = tape.softmax_rows(xs[0])?;
                readout(tape, y, &w)
            })
        }
        "masked_softmax_rows" => {
            // Full row, partial row, and a single-survivor row whose
            // output is constant.
            let allow = Arc::new(vec![
                true, true, true, true, true, //
                false, true, false, true, true, //
                false, false, true, false, false,
            ]);
            let x = FdInput::new("x", draw::<F>(rng, 15, -1.5, 1.5), &[3, 5]);
            let w = draw_f64(rng, 15, -1.0, 1.0);
            check_gradients(&[x], probe, move |tape, xs| {
                let y = tape.masked_softmax_rows(xs[0], Arc::clone(&allow))?;
                readout(tape, y, &w)
            })
        }
        "layer_norm_rows" => {
            let x = FdInput::new("x", draw::<F>(rng, 18, -1.5, 1.5), &[3, 6]);
            let gamma = FdInput::new("gamma", draw::<F>(rng, 6, 0.5, 1.5), &[1, 6]);
            let beta = FdInput::new("beta", draw::<F>(rng, 6, -0.5, 0.5), &[1, 6]);
            let w = draw_f64(rng, 18, -1.0, 1.0);
            check_gradients(&[x, gamma, beta], probe, move |tape, xs| {
                let y = tape.layer_norm_rows(xs[0], xs[1], xs[2])?;
                readout(tape, y, &w)
            })
        }
        "gelu" => {
            let x = FdInput::new("x", draw::<F>(rng, 12, -2.0, 2.0), &[3, 4]);
            let w = draw_f64(rng, 12, -1.0, 1.0);
            check_gradients(&[x], probe, move |tape, xs| {
                let y = tape.gelu(xs[0])?;
                readout(tape, y, &w)
            })
        }
        "sigmoid" => {
            let x = FdInput::new("x", draw::<F>(rng, 12, -2.0, 2.0), &[3, 4]);
            let w = draw_f64(rng, 12, -1.0, 1.0);
            check_gradients(&[x], probe, move |tape, xs| {
                let y = tape.sigmoid(xs[0])?;
                readout(tape, y, &w)
            })
        }
        "clamp" => {
            let margin = probe.step * 4.0;
            let x = FdInput::new("x", draw_off_kink::<F>(rng, 12, -0.9, 0.9, margin), &[3, 4]);
            let w = draw_f64(rng, 12, -1.0, 1.0);
            check_gradients(&[x], probe, move |tape, xs| {
                let y = tape.clamp(xs[0], F::from_f64(-0.9), F::from_f64(0.9))?;
                readout(tape, y, &w)
            })
        }
        "div_by_scalar" => {
            let x = FdInput::new("x", draw::<F>(rng, 12, -1.5, 1.5), &[3, 4]);
            let s = FdInput::new("s", draw::<F>(rng, 1, 0.7, 1.8), &[1]);
            let w = draw_f64(rng, 12, -1.0, 1.0);
            check_gradients(&[x, s], probe, move |tape, xs| {
                let y = tape.div_by_scalar(xs[0], xs[1])?;
                readout(tape, y, &w)
            })
        }
        "cross_entropy_probs" => {
            let logits = FdInput::new("logits", draw::<F>(rng, 12, -1.5, 1.5), &[3, 4]);
            let targets = prob_rows(rng, 3, 4);
            // One zero-weight row: its logits must get exactly no gradient.
            let weights = vec![0.5, 0.0, 0.3];
            check_gradients(&[logits], probe, move |tape, xs| {
                tape.cross_entropy_probs(xs[0], &to_f::<F>(&targets), &to_f::<F>(&weights))
            })
        }
        "kl_div_probs" => {
            let logits = FdInput::new("logits", draw::<F>(rng, 12, -1.5, 1.5), &[3, 4]);
            let targets = prob_rows(rng, 3, 4);
            let weights = vec![0.5, 0.0, 0.3];
            check_gradients(&[logits], probe, move |tape, xs| {
                tape.kl_div_probs(xs[0], &to_f::<F>(&targets), &to_f::<F>(&weights))
            })
        }
        "mse_weighted" => {
            let pred = FdInput::new("pred", draw::<F>(rng, 5, -1.5, 1.5), &[5, 1]);
            let targets = draw_f64(rng, 5, -1.0, 1.0);
            let weights = vec![0.25, 0.25, 0.0, 0.25, 0.25];
            check_gradients(&[pred], probe, move |tape, xs| {
                tape.mse_weighted(xs[0], &to_f::<F>(&targets), &to_f::<F>(&weights))
            })
        }
        "concat_rows" => {
            let a = FdInput::new("a", draw::<F>(rng, 6, -1.5, 1.5), &[2, 3]);
            let b = FdInput::new("b", draw::<F>(rng, 9, -1.5, 1.5), &[3, 3]);
            let w = draw_f64(rng, 15, -1.0, 1.0);
            check_gradients(&[a, b], probe, move |tape, xs| {
                let y = tape.concat_rows(&[xs[0], xs[1]])?;
                readout(tape, y, &w)
            })
        }
        "concat_cols" => {
            let a = FdInput::new("a", draw::<F>(rng, 6, -1.5, 1.5), &[3, 2]);
            let b = FdInput::new("b", draw::<F>(rng, 9, -1.5, 1.5), &[3, 3]);
            let w = draw_f64(rng, 15, -1.0, 1.0);
            check_gradients(&[a, b], probe, move |tape, xs| {
                let y = tape.concat_cols(&[xs[0], xs[1]])?;
                readout(tape, y, &w)
            })
        }
        "slice_rows" => {
            let x = FdInput::new("x", draw::<F>(rng, 12, -1.5, 1.5), &[4, 3]);
            let w = draw_f64(rng, 6, -1.0, 1.0);
            check_gradients(&[x], probe, move |tape, xs| {
                let y = tape.slice_rows(xs[0], 1, 2)?;
                readout(tape, y, &w)
            })
        }
        "slice_cols" => {
            let x = FdInput::new("x", draw::<F>(rng, 15, -1.5, 1.5), &[3, 5]);
            let w = draw_f64(rng, 9, -1.0, 1.0);
            check_gradients(&[x], probe, move |tape, xs| {
                let y = tape.slice_cols(xs[0], 1, 3)?;
                readout(tape, y, &w)
            })
        }
        "cosine_similarity" => {
            let a = FdInput::new("a", draw_signed::<F>(rng, 12), &[3, 4]);
            let b = FdInput::new("b", draw_signed::<F>(rng, 12), &[3, 4]);
            let w = draw_f64(rng, 9, -1.0, 1.0);
            check_gradients(&[a, b], probe, move |tape, xs| {
                let y = tape.cosine_similarity(xs[0], xs[1])?;
                readout(tape, y, &w)
            })
        }
        "image_action_alignment" => {
            // Action 0 repeats: exercises the renormalized-column path.
            let targets = build_affinity_targets(&[0, 1, 0, 2]).expect("valid ids");
            let pairs = FdInput::new("pairs", draw_signed::<F>(rng, 24), &[4, 6]);
            let actions = FdInput::new("actions", draw_signed::<F>(rng, 18), &[3, 6]);
            let tau = FdInput::new("tau", draw::<F>(rng, 1, 1.0, 2.0), &[1]);
            check_gradients(&[pairs, actions, tau], probe, move |tape, xs| {
                let p = tape.l2_normalize_rows(xs[0])?;
                let a = tape.l2_normalize_rows(xs[1])?;
                let logits = similarity_logits(tape, p, a, xs[2])?;
                tapeify_c(loss_image_action(tape, logits, &targets))
            })
        }
        "text_image_alignment" => {
            let text = FdInput::new("text", draw_signed::<F>(rng, 15), &[3, 5]);
            let seq = FdInput::new("seq", draw_signed::<F>(rng, 15), &[3, 5]);
            let tau = FdInput::new("tau", draw::<F>(rng, 1, 1.0, 2.0), &[1]);
            check_gradients(&[text, seq, tau], probe, move |tape, xs| {
                let t = tape.l2_normalize_rows(xs[0])?;
                let s = tape.l2_normalize_rows(xs[1])?;
                tapeify_c(loss_text_image(tape, t, s, xs[2]))
            })
        }
        "triple_blend" => {
            let targets = build_affinity_targets(&[3, 1, 3, 0]).expect("valid ids");
            let text = FdInput::new("text", draw_signed::<F>(rng, 15), &[3, 5]);
            let seq = FdInput::new("seq", draw_signed::<F>(rng, 15), &[3, 5]);
            let pairs = FdInput::new("pairs", draw_signed::<F>(rng, 20), &[4, 5]);
            let actions = FdInput::new("actions", draw_signed::<F>(rng, 15), &[3, 5]);
            let tau_ti = FdInput::new("tau_ti", draw::<F>(rng, 1, 1.0, 2.0), &[1]);
            let tau_ia = FdInput::new("tau_ia", draw::<F>(rng, 1, 1.0, 2.0), &[1]);
            check_gradients(&[text, seq, pairs, actions, tau_ti, tau_ia], probe, move |tape, xs| {
                let t = tape.l2_normalize_rows(xs[0])?;
                let s = tape.l2_normalize_rows(xs[1])?;
                let l_ti = tapeify_c(loss_text_image(tape, t, s, xs[4]))?;
                let p = tape.l2_normalize_rows(xs[2])?;
                let a = tape.l2_normalize_rows(xs[3])?;
                let ia_logits = similarity_logits(tape, p, a, xs[5])?;
                let l_ia = tapeify_c(loss_image_action(tape, ia_logits, &targets))?;
                tapeify_c(loss_triple(tape, l_ti, l_ia, F::from_f64(0.8)))
            })
        }
        "action_cross_entropy" => {
            let logits = FdInput::new("logits", draw::<F>(rng, 3 * 14, -1.5, 1.5), &[3, 14]);
            check_gradients(&[logits], probe, move |tape, xs| {
                tapeify_l(action_loss(tape, xs[0], &[1, 12, 5], &[false, false, true]))
            })
        }
        "object_cross_entropy" => {
            let logits = FdInput::new("logits", draw::<F>(rng, 2 * 85, -1.5, 1.5), &[2, 85]);
            check_gradients(&[logits], probe, move |tape, xs| {
                tapeify_l(object_loss(tape, xs[0], &[0, 44], &[false, false]))
            })
        }
        "goal_progress_mse" => {
            let pred = FdInput::new("pred", draw::<F>(rng, 4, 0.05, 0.95), &[4, 1]);
            check_gradients(&[pred], probe, move |tape, xs| {
                let targets = tapeify_l(goal_progress_targets::<F>(4))?;
                tapeify_l(goal_progress_loss(tape, xs[0], &targets, &[false, false, false, true]))
            })
        }
        "supervised_total" => {
            let action = FdInput::new("action_logits", draw::<F>(rng, 3 * 14, -1.5, 1.5), &[3, 14]);
            let object = FdInput::new("object_logits", draw::<F>(rng, 3 * 85, -1.5, 1.5), &[3, 85]);
            let pred = FdInput::new("progress", draw::<F>(rng, 3, 0.05, 0.95), &[3, 1]);
            check_gradients(&[action, object, pred], probe, move |tape, xs| {
                let pad = [false, false, false];
                let l_a = tapeify_l(action_loss(tape, xs[0], &[0, 3, 12], &pad))?;
                let l_o = tapeify_l(object_loss(tape, xs[1], &[7, 0, 84], &pad))?;
                let targets = tapeify_l(goal_progress_targets::<F>(3))?;
                let l_gp = tapeify_l(goal_progress_loss(tape, xs[2], &targets, &pad))?;
                total_loss(tape, l_a, l_o, l_gp, F::from_f64(0.1), F::from_f64(0.1))
            })
        }
        other => panic!("unknown gradient case {other}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_names_are_unique() {
        let mut names = CASE_NAMES.to_vec();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), CASE_NAMES.len());
        assert!(PRIMITIVE_CASES < CASE_NAMES.len());
    }

    #[test]
    fn single_case_passes_both_precisions() {
        let r64 = run_case::<f64>(0, "matmul", "f64", FdSettings::for_f64()).unwrap();
        assert!(r64.passed, "{}", r64.line());
        assert!(r64.max_rel_error > 0.0, "probe should report nonzero errors");
        let r32 = run_case::<f32>(0, "matmul", "f32", FdSettings::for_f32()).unwrap();
        assert!(r32.passed, "{}", r32.line());
    }

    #[test]
    fn whole_suite_passes_both_precisions() {
        let results = run_gradient_suite().unwrap();
        assert_eq!(results.len(), CASE_NAMES.len() * 2);
        for r in &results {
            assert!(r.passed, "{}", r.line());
            assert_eq!(r.seeds, SUITE_SEEDS);
        }
    }

    #[test]
    fn composite_case_runs_in_f64() {
        let r = run_case::<f64>(28, "triple_blend", "f64", FdSettings::for_f64()).unwrap();
        assert!(r.passed, "{}", r.line());
    }
}
