//! Contrastive pre-alignment objectives.
//!
//! Pair stage: frame-pair representations against the unique actions of the
//! mini-batch, with a ground-truth affinity matrix Q and a symmetric KL
//! objective over both softmax directions. Triple stage adds instruction
//! text against mean-pooled frame sequences, weighted by `alpha`.

use thiserror::Error;

use crate::autodiff::{Real, Tape, TapeError, TapeResult, ValueId};

pub const TAU_INIT: f32 = 0.07;
pub const TAU_MIN: f32 = 0.01;
pub const TAU_MAX: f32 = 100.0;

#[derive(Debug, Error)]
pub enum ContrastiveError {
    #[error("contrastive batch needs at least 2 items, got {0}")]
    BatchTooSmall(usize),
    #[error("action id {id} at position {position} outside the action space")]
    BadActionId { id: usize, position: usize },
    #[error("alpha {0} outside [0, 1]")]
    AlphaOutOfRange(f64),
    #[error(transparent)]
    Tape(#[from] TapeError),
}

pub type ContrastiveResult<T> = Result<T, ContrastiveError>;

/// Ground-truth matching matrix for a pair batch: rows are frame pairs,
/// columns are the batch's unique actions in first-occurrence order.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityTargets {
    pub unique_actions: Vec<usize>,
    /// N × U, row-major; each row one-hot.
    pub q: Vec<f32>,
    pub n: usize,
    pub u: usize,
    /// Per row, the target column index (the row's action's position in
    /// `unique_actions`).
    pub target_cols: Vec<usize>,
}

pub fn build_affinity_targets(action_ids: &[usize]) -> ContrastiveResult<AffinityTargets> {
    let n = action_ids.len();
    if n < 2 {
        return Err(ContrastiveError::BatchTooSmall(n));
    }
    let mut unique_actions: Vec<usize> = Vec::new();
    let mut target_cols = Vec::with_capacity(n);
    for (position, &id) in action_ids.iter().enumerate() {
        if id >= 14 {
            return Err(ContrastiveError::BadActionId { id, position });
        }
        let col = match unique_actions.iter().position(|&a| a == id) {
            Some(c) => c,
            None => {
                unique_actions.push(id);
                unique_actions.len() - 1
            }
        };
        target_cols.push(col);
    }
    let u = unique_actions.len();
    let mut q = vec![0.0; n * u];
    for (row, &col) in target_cols.iter().enumerate() {
        q[row * u + col] = 1.0;
    }
    Ok(AffinityTargets { unique_actions, q, n, u, target_cols })
}

/// Temperature-scaled cosine-similarity logits: entry (i, j) is
/// `rows_i · cols_j / tau`. Inputs must already be unit rows, so the dot
/// product is the cosine.
pub fn similarity_logits<F: Real>(
    tape: &mut Tape<F>,
    rows: ValueId,
    cols: ValueId,
    tau: ValueId,
) -> TapeResult<ValueId> {
    let cols_t = tape.transpose(cols)?;
    let sims = tape.matmul(rows, cols_t)?;
    tape.div_by_scalar(sims, tau)
}

/// Image↔action alignment loss: KL(Q_row ‖ row-softmax) averaged over rows,
/// plus KL(Q_col ‖ column-softmax) averaged over columns, halved. Columns
/// of Q with several positives (the same action for several frame pairs)
/// are renormalized to distributions before the KL.
pub fn loss_image_action<F: Real>(
    tape: &mut Tape<F>,
    logits: ValueId,
    targets: &AffinityTargets,
) -> ContrastiveResult<ValueId> {
    let (n, u) = (targets.n, targets.u);
    let shape = tape.shape(logits).to_vec();
    if shape != [n, u] {
        return Err(TapeError::ShapeMismatch { op: "loss_image_action", left: shape, right: vec![n, u] }.into());
    }
    let q: Vec<F> = targets.q.iter().map(|&v| F::from_f64(v as f64)).collect();
    let row_weights = vec![F::from_f64(1.0 / n as f64); n];
    let row_term = tape.kl_div_probs(logits, &q, &row_weights)?;

    // Column direction: transpose and renormalize each Q column.
    let mut qt = vec![F::zero(); u * n];
    for j in 0..u {
        let mut col_sum = F::zero();
        for i in 0..n {
            col_sum = col_sum + q[i * u + j];
        }
        assert!(col_sum > F::zero(), "affinity column {j} has no positive entry");
        for i in 0..n {
            qt[j * n + i] = q[i * u + j] / col_sum;
        }
    }
    let logits_t = tape.transpose(logits)?;
    let col_weights = vec![F::from_f64(1.0 / u as f64); u];
    let col_term = tape.kl_div_probs(logits_t, &qt, &col_weights)?;

    let sum = tape.add(row_term, col_term)?;
    Ok(tape.scale(sum, F::from_f64(0.5))?)
}

/// Text↔image-sequence alignment loss: symmetric cross-entropy against the
/// diagonal of the B × B similarity matrix, halved.
pub fn loss_text_image<F: Real>(
    tape: &mut Tape<F>,
    text_reps: ValueId,
    seq_reps: ValueId,
    tau: ValueId,
) -> ContrastiveResult<ValueId> {
    let b = tape.shape(text_reps)[0];
    if b < 2 {
        return Err(ContrastiveError::BatchTooSmall(b));
    }
    if tape.shape(seq_reps)[0] != b {
        return Err(TapeError::ShapeMismatch {
            op: "loss_text_image",
            left: tape.shape(text_reps).to_vec(),
            right: tape.shape(seq_reps).to_vec(),
        }
        .into());
    }
    let logits = similarity_logits(tape, text_reps, seq_reps, tau)?;
    let mut diagonal = vec![F::zero(); b * b];
    for i in 0..b {
        diagonal[i * b + i] = F::one();
    }
    let weights = vec![F::from_f64(1.0 / b as f64); b];
    let t2i = tape.cross_entropy_probs(logits, &diagonal, &weights)?;
    let logits_t = tape.transpose(logits)?;
    let i2t = tape.cross_entropy_probs(logits_t, &diagonal, &weights)?;
    let sum = tape.add(t2i, i2t)?;
    Ok(tape.scale(sum, F::from_f64(0.5))?)
}

/// Triple-stage total: `(1 − alpha) · l_ti + alpha · l_ia`.
pub fn loss_triple<F: Real>(
    tape: &mut Tape<F>,
    l_ti: ValueId,
    l_ia: ValueId,
    alpha: F,
) -> ContrastiveResult<ValueId> {
    if !(0.0..=1.0).contains(&alpha.as_f64()) {
        return Err(ContrastiveError::AlphaOutOfRange(alpha.as_f64()));
    }
    let ti = tape.scale(l_ti, F::one() - alpha)?;
    let ia = tape.scale(l_ia, alpha)?;
    Ok(tape.add(ti, ia)?)
}

/// Projection applied after every optimizer step.
pub fn clamp_temperature(tau: f32) -> f32 {
    tau.clamp(TAU_MIN, TAU_MAX)
}

/// Same projection for a log-space temperature parameter. The bounds sit
/// one millionth inside log(TAU_MIN)/log(TAU_MAX) so the exponentiated
/// value stays inside [TAU_MIN, TAU_MAX] despite f32 rounding.
pub fn clamp_log_temperature(theta: f32) -> f32 {
    theta.clamp(TAU_MIN.ln() + 1e-6, TAU_MAX.ln() - 1e-6)
}

/// Fraction of rows whose argmax column equals the target column. Ties
/// break toward the lowest index.
pub fn matching_accuracy(logits: &[f32], rows: usize, cols: usize, target_cols: &[usize]) -> f64 {
    assert_eq!(logits.len(), rows * cols);
    assert_eq!(target_cols.len(), rows);
    let mut hits = 0usize;
    for i in 0..rows {
        let row = &logits[i * cols..(i + 1) * cols];
        let mut best = 0usize;
        for j in 1..cols {
            if row[j] > row[best] {
                best = j;
            }
        }
        if best == target_cols[i] {
            hits += 1;
        }
    }
    hits as f64 / rows as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_rows(tape: &mut Tape<f32>, raw: Vec<f32>, r: usize, d: usize) -> ValueId {
        let x = tape.constant(raw, &[r, d]).unwrap();
        tape.l2_normalize_rows(x).unwrap()
    }

    #[test]
    fn affinity_example_matches_definition() {
        let t = build_affinity_targets(&[2, 5, 2, 7]).unwrap();
        assert_eq!(t.unique_actions, [2, 5, 7]);
        assert_eq!(t.q, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(t.target_cols, [0, 1, 0, 2]);
    }

    #[test]
    fn affinity_all_equal_and_all_distinct() {
        let same = build_affinity_targets(&[4, 4, 4]).unwrap();
        assert_eq!(same.u, 1);
        assert_eq!(same.q, [1.0, 1.0, 1.0]);
        let distinct = build_affinity_targets(&[1, 0, 3]).unwrap();
        assert_eq!(distinct.u, 3);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(distinct.q[i * 3 + j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn affinity_rejects_tiny_or_invalid_batches() {
        assert!(matches!(build_affinity_targets(&[]), Err(ContrastiveError::BatchTooSmall(0))));
        assert!(matches!(build_affinity_targets(&[3]), Err(ContrastiveError::BatchTooSmall(1))));
        assert!(matches!(
            build_affinity_targets(&[3, 14]),
            Err(ContrastiveError::BadActionId { id: 14, position: 1 })
        ));
    }

    #[test]
    fn similarity_of_identical_and_orthogonal_vectors() {
        let mut tape = Tape::<f32>::new();
        let rows = tape.constant(vec![1.0, 0.0], &[1, 2]).unwrap();
        let cols = tape.constant(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
        let tau = tape.scalar_constant(1.0);
        let s = similarity_logits(&mut tape, rows, cols, tau).unwrap();
        assert_eq!(tape.data(s), &[1.0, 0.0]);
        let tau_small = tape.scalar_constant(0.07);
        let s2 = similarity_logits(&mut tape, rows, cols, tau_small).unwrap();
        assert!((tape.data(s2)[0] - 14.2857).abs() < 1e-3);
    }

    #[test]
    fn perfect_alignment_loss_vanishes() {
        let mut tape = Tape::new();
        let targets = build_affinity_targets(&[0, 1, 2]).unwrap();
        let logits = tape
            .constant(
                vec![50.0, 0.0, 0.0, 0.0, 50.0, 0.0, 0.0, 0.0, 50.0],
                &[3, 3],
            )
            .unwrap();
        let loss = loss_image_action(&mut tape, logits, &targets).unwrap();
        assert!(tape.data(loss)[0] < 1e-3);
    }

    #[test]
    fn uniform_predictions_give_ln3() {
        let mut tape = Tape::new();
        let targets = build_affinity_targets(&[0, 1, 2]).unwrap();
        let logits = tape.constant(vec![0.0; 9], &[3, 3]).unwrap();
        let loss = loss_image_action(&mut tape, logits, &targets).unwrap();
        assert!((tape.data(loss)[0] - 3f32.ln()).abs() < 1e-6);
    }

    #[test]
    fn one_hot_kl_equals_cross_entropy_to_1e9() {
        let mut tape = Tape::new();
        let logits_data = vec![0.3, -0.8, 1.2, 0.1, 0.9, -0.5, -1.1, 0.4, 0.0];
        let targets = build_affinity_targets(&[5, 0, 9]).unwrap();
        let logits = tape.constant(logits_data.clone(), &[3, 3]).unwrap();
        let kl_loss = loss_image_action(&mut tape, logits, &targets).unwrap();

        // Cross-entropy reconstruction of the same objective.
        let logits2 = tape.constant(logits_data, &[3, 3]).unwrap();
        let rw = vec![1.0 / 3.0; 3];
        let row = tape.cross_entropy_probs(logits2, &targets.q, &rw).unwrap();
        let lt = tape.transpose(logits2).unwrap();
        let mut qt = vec![0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                qt[j * 3 + i] = targets.q[i * 3 + j];
            }
        }
        let col = tape.cross_entropy_probs(lt, &qt, &rw).unwrap();
        let sum = tape.add(row, col).unwrap();
        let ce_loss = tape.scale(sum, 0.5).unwrap();

        let diff = (tape.data(kl_loss)[0] as f64 - tape.data(ce_loss)[0] as f64).abs();
        assert!(diff < 1e-9, "KL and CE disagree by {diff}");
    }

    #[test]
    fn text_image_strong_diagonal_and_uniform_cases() {
        let mut tape = Tape::new();
        let text = unit_rows(&mut tape, vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        let tau = tape.scalar_constant(0.01);
        let loss = loss_text_image(&mut tape, text, text, tau).unwrap();
        assert!(tape.data(loss)[0] < 1e-3, "strong diagonal should be near zero");

        // Identical reps make every similarity equal: softmax is uniform.
        let same = unit_rows(&mut tape, vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0], 3, 2);
        let tau1 = tape.scalar_constant(1.0);
        let uni = loss_text_image(&mut tape, same, same, tau1).unwrap();
        assert!((tape.data(uni)[0] - 3f32.ln()).abs() < 1e-6);
    }

    #[test]
    fn text_image_rejects_singletons() {
        let mut tape = Tape::new();
        let one = unit_rows(&mut tape, vec![1.0, 0.0], 1, 2);
        let tau = tape.scalar_constant(1.0);
        assert!(matches!(
            loss_text_image(&mut tape, one, one, tau),
            Err(ContrastiveError::BatchTooSmall(1))
        ));
    }

    #[test]
    fn triple_weighting_matches_the_paper_arithmetic() {
        let mut tape = Tape::<f32>::new();
        let l_ti = tape.scalar_constant(1.0);
        let l_ia = tape.scalar_constant(2.0);
        let total = loss_triple(&mut tape, l_ti, l_ia, 0.8).unwrap();
        assert!((tape.data(total)[0] - 1.8).abs() < 1e-6);
        let only_ti = loss_triple(&mut tape, l_ti, l_ia, 0.0).unwrap();
        assert_eq!(tape.data(only_ti)[0], 1.0);
        let only_ia = loss_triple(&mut tape, l_ti, l_ia, 1.0).unwrap();
        assert_eq!(tape.data(only_ia)[0], 2.0);
        assert!(matches!(
            loss_triple(&mut tape, l_ti, l_ia, 1.5),
            Err(ContrastiveError::AlphaOutOfRange(_))
        ));
    }

    #[test]
    fn temperature_clamp_thresholds() {
        assert_eq!(clamp_temperature(150.0), 100.0);
        assert_eq!(clamp_temperature(0.001), 0.01);
        assert_eq!(clamp_temperature(0.07), 0.07);
        assert_eq!(TAU_INIT, 0.07);
        let hi = (clamp_log_temperature(10.0) as f64).exp();
        let lo = (clamp_log_temperature(-10.0) as f64).exp();
        assert!(hi <= 100.0 && hi > 99.99, "{hi}");
        assert!(lo >= 0.01 && lo < 0.0101, "{lo}");
        assert_eq!(clamp_log_temperature(TAU_INIT.ln()), TAU_INIT.ln());
    }

    #[test]
    fn matching_accuracy_counts_and_tie_breaks() {
        // Row 0 hits, row 1 misses, row 2 ties between columns 0 and 2 and
        // resolves to 0.
        let logits = vec![0.9, 0.1, 0.0, 0.2, 0.1, 0.7, 0.5, 0.1, 0.5];
        let acc = matching_accuracy(&logits, 3, 3, &[0, 1, 0]);
        assert!((acc - 2.0 / 3.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn softmax_directions_normalize_for_any_tau(
            seed in 0u64..500,
            tau in 0.01f32..100.0,
        ) {
            use rand::prelude::*;
            use rand_chacha::ChaCha8Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, u, d) = (5, 3, 8);
            let mut tape = Tape::new();
            let rows = unit_rows(&mut tape, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect(), n, d);
            let cols = unit_rows(&mut tape, (0..u * d).map(|_| rng.random_range(-1.0..1.0)).collect(), u, d);
            let tau_v = tape.scalar_constant(tau);
            let logits = similarity_logits(&mut tape, rows, cols, tau_v).unwrap();
            let p_rows = tape.softmax_rows(logits).unwrap();
            for i in 0..n {
                let sum: f32 = tape.data(p_rows)[i * u..(i + 1) * u].iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-6);
            }
            let logits_t = tape.transpose(logits).unwrap();
            let p_cols = tape.softmax_rows(logits_t).unwrap();
            for j in 0..u {
                let sum: f32 = tape.data(p_cols)[j * n..(j + 1) * n].iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn positive_scaling_before_normalization_leaves_losses_unchanged(
            seed in 0u64..500,
            factor in 0.1f32..10.0,
        ) {
            use rand::prelude::*;
            use rand_chacha::ChaCha8Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (b, d) = (3, 6);
            let text_raw: Vec<f32> = (0..b * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let seq_raw: Vec<f32> = (0..b * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let eval = |scale: f32| {
                let mut tape = Tape::new();
                let t = unit_rows(&mut tape, text_raw.iter().map(|v| v * scale).collect(), b, d);
                let s = unit_rows(&mut tape, seq_raw.iter().map(|v| v * scale).collect(), b, d);
                let tau = tape.scalar_constant(0.5);
                let loss = loss_text_image(&mut tape, t, s, tau).unwrap();
                tape.data(loss)[0]
            };
            prop_assert!((eval(1.0) - eval(factor)).abs() < 1e-5);
        }

        #[test]
        fn halving_tau_sharpens_the_argmax(
            seed in 0u64..500,
            tau in 0.02f32..50.0,
        ) {
            use rand::prelude::*;
            use rand_chacha::ChaCha8Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sims: Vec<f32> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let max = sims.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            // Skip near-uniform rows where sharpening has nothing to bite.
            prop_assume!(sims.iter().filter(|&&v| (v - max).abs() < 1e-3).count() == 1);
            let argmax_prob = |t: f32| {
                let exps: Vec<f64> = sims.iter().map(|&v| ((v - max) as f64 / t as f64).exp()).collect();
                let denom: f64 = exps.iter().sum();
                exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / denom
            };
            prop_assert!(argmax_prob(tau / 2.0) > argmax_prob(tau));
        }
    }
}
