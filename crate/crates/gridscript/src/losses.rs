//! Supervised end-to-end objectives: pad-masked action and object
//! cross-entropy, goal-progress regression, and their weighted total.
//!
//! Every loss is a per-position mean over non-pad positions, so its scale
//! does not depend on episode length.

use thiserror::Error;

use crate::autodiff::{Real, Tape, TapeError, TapeResult, ValueId};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("every position is padded; nothing to supervise")]
    AllPadded,
    #[error("{what} length {got} does not match sequence length {want}")]
    LengthMismatch { what: &'static str, got: usize, want: usize },
    #[error("target id {id} at position {position} out of range (bound {bound})")]
    TargetOutOfRange { id: usize, position: usize, bound: usize },
    #[error("goal-progress needs n >= 1")]
    EmptySequence,
    #[error(transparent)]
    Tape(#[from] TapeError),
}

pub type LossResult<T> = Result<T, LossError>;

fn check_targets(
    what: &'static str,
    targets: &[usize],
    pad_mask: &[bool],
    n: usize,
    classes: usize,
) -> LossResult<usize> {
    if targets.len() != n {
        return Err(LossError::LengthMismatch { what, got: targets.len(), want: n });
    }
    if pad_mask.len() != n {
        return Err(LossError::LengthMismatch { what: "pad mask", got: pad_mask.len(), want: n });
    }
    for (position, &id) in targets.iter().enumerate() {
        if id >= classes {
            return Err(LossError::TargetOutOfRange { id, position, bound: classes });
        }
    }
    let live = pad_mask.iter().filter(|&&p| !p).count();
    if live == 0 {
        return Err(LossError::AllPadded);
    }
    Ok(live)
}

/// Mean cross-entropy of `logits` rows against integer targets over the
/// non-pad positions. Pad rows get weight zero, so their logits cannot
/// move the loss or the gradient.
fn masked_class_loss<F: Real>(
    tape: &mut Tape<F>,
    what: &'static str,
    logits: ValueId,
    targets: &[usize],
    pad_mask: &[bool],
) -> LossResult<ValueId> {
    let shape = tape.shape(logits).to_vec();
    let (n, classes) = (shape[0], shape[1]);
    let live = check_targets(what, targets, pad_mask, n, classes)?;
    let mut one_hot = vec![F::zero(); n * classes];
    let mut weights = vec![F::zero(); n];
    let w = F::from_f64(1.0 / live as f64);
    for i in 0..n {
        one_hot[i * classes + targets[i]] = F::one();
        if !pad_mask[i] {
            weights[i] = w;
        }
    }
    Ok(tape.cross_entropy_probs(logits, &one_hot, &weights)?)
}

/// Action objective over the 14-way logits (12 classes + stop + pad, with
/// pad positions masked out of the mean).
pub fn action_loss<F: Real>(
    tape: &mut Tape<F>,
    logits: ValueId,
    targets: &[usize],
    pad_mask: &[bool],
) -> LossResult<ValueId> {
    masked_class_loss(tape, "action targets", logits, targets, pad_mask)
}

/// Object objective over the 85-way logits (84 classes + NoObject).
pub fn object_loss<F: Real>(
    tape: &mut Tape<F>,
    logits: ValueId,
    targets: &[usize],
    pad_mask: &[bool],
) -> LossResult<ValueId> {
    masked_class_loss(tape, "object targets", logits, targets, pad_mask)
}

/// Fractional task-completion targets: position i of n gets (i+1)/n, so
/// the last step is exactly 1.
pub fn goal_progress_targets<F: Real>(n: usize) -> LossResult<Vec<F>> {
    if n == 0 {
        return Err(LossError::EmptySequence);
    }
    Ok((0..n).map(|i| F::from_f64((i + 1) as f64 / n as f64)).collect())
}

/// Mean squared error between predicted and target progress over non-pad
/// positions.
pub fn goal_progress_loss<F: Real>(
    tape: &mut Tape<F>,
    pred: ValueId,
    targets: &[F],
    pad_mask: &[bool],
) -> LossResult<ValueId> {
    let n = tape.numel(pred);
    if targets.len() != n {
        return Err(LossError::LengthMismatch { what: "progress targets", got: targets.len(), want: n });
    }
    if pad_mask.len() != n {
        return Err(LossError::LengthMismatch { what: "pad mask", got: pad_mask.len(), want: n });
    }
    let live = pad_mask.iter().filter(|&&p| !p).count();
    if live == 0 {
        return Err(LossError::AllPadded);
    }
    let w = F::from_f64(1.0 / live as f64);
    let weights: Vec<F> = pad_mask.iter().map(|&p| if p { F::zero() } else { w }).collect();
    Ok(tape.mse_weighted(pred, targets, &weights)?)
}

/// Weighted total: `l_action + aux_object · l_object + aux_gp · l_gp`.
pub fn total_loss<F: Real>(
    tape: &mut Tape<F>,
    l_action: ValueId,
    l_object: ValueId,
    l_gp: ValueId,
    aux_object: F,
    aux_gp: F,
) -> TapeResult<ValueId> {
    let obj = tape.scale(l_object, aux_object)?;
    let gp = tape.scale(l_gp, aux_gp)?;
    let partial = tape.add(l_action, obj)?;
    tape.add(partial, gp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn logits_const(tape: &mut Tape<f32>, data: Vec<f32>, n: usize, c: usize) -> ValueId {
        tape.constant(data, &[n, c]).unwrap()
    }

    #[test]
    fn uniform_action_logits_cost_ln14() {
        let mut tape = Tape::new();
        let logits = logits_const(&mut tape, vec![0.0; 3 * 14], 3, 14);
        let loss = action_loss(&mut tape, logits, &[0, 5, 12], &[false; 3]).unwrap();
        assert!((tape.data(loss)[0] - 14f32.ln()).abs() < 1e-6);
    }

    #[test]
    fn uniform_object_logits_cost_ln85() {
        let mut tape = Tape::new();
        let logits = logits_const(&mut tape, vec![0.0; 2 * 85], 2, 85);
        let loss = object_loss(&mut tape, logits, &[84, 0], &[false; 2]).unwrap();
        assert!((tape.data(loss)[0] - 85f32.ln()).abs() < 1e-6);
    }

    #[test]
    fn peaked_logits_cost_nearly_nothing() {
        let mut tape = Tape::new();
        let mut data = vec![0.0; 2 * 14];
        data[3] = 60.0;
        data[14 + 12] = 60.0;
        let logits = logits_const(&mut tape, data, 2, 14);
        let loss = action_loss(&mut tape, logits, &[3, 12], &[false; 2]).unwrap();
        assert!(tape.data(loss)[0] < 1e-3);
    }

    #[test]
    fn pad_positions_cannot_move_the_action_loss() {
        let mut tape = Tape::new();
        let base = vec![0.4, -0.2, 1.0, 0.0, 0.3, 0.9, -0.7, 0.1, 0.0, 0.2, 0.5, -0.1, 0.8, -0.3];
        let mut two = base.clone();
        two.extend((0..14).map(|i| if i % 2 == 0 { 1e3 } else { -1e3 }));
        let l1 = logits_const(&mut tape, base, 1, 14);
        let l2 = logits_const(&mut tape, two, 2, 14);
        let loss1 = action_loss(&mut tape, l1, &[2], &[false]).unwrap();
        let loss2 = action_loss(&mut tape, l2, &[2, 13], &[false, true]).unwrap();
        assert_eq!(tape.data(loss1)[0], tape.data(loss2)[0]);
    }

    #[test]
    fn all_padded_is_an_error() {
        let mut tape = Tape::new();
        let logits = logits_const(&mut tape, vec![0.0; 14], 1, 14);
        assert!(matches!(
            action_loss(&mut tape, logits, &[0], &[true]),
            Err(LossError::AllPadded)
        ));
    }

    #[test]
    fn target_out_of_range_names_the_position() {
        let mut tape = Tape::new();
        let logits = logits_const(&mut tape, vec![0.0; 2 * 14], 2, 14);
        assert!(matches!(
            action_loss(&mut tape, logits, &[0, 14], &[false, false]),
            Err(LossError::TargetOutOfRange { id: 14, position: 1, bound: 14 })
        ));
    }

    #[test]
    fn progress_targets_for_four_steps() {
        assert_eq!(goal_progress_targets::<f32>(4).unwrap(), vec![0.25, 0.5, 0.75, 1.0]);
        assert_eq!(goal_progress_targets::<f32>(1).unwrap(), vec![1.0]);
        assert!(goal_progress_targets::<f32>(0).is_err());
    }

    #[test]
    fn progress_loss_matches_hand_arithmetic() {
        let mut tape = Tape::<f32>::new();
        let pred = tape.constant(vec![0.0, 0.0], &[2, 1]).unwrap();
        let loss = goal_progress_loss(&mut tape, pred, &[0.5, 1.0], &[false, false]).unwrap();
        assert!((tape.data(loss)[0] - 0.625).abs() < 1e-6);

        let exact = tape.constant(vec![0.5, 1.0], &[2, 1]).unwrap();
        let zero = goal_progress_loss(&mut tape, exact, &[0.5, 1.0], &[false, false]).unwrap();
        assert_eq!(tape.data(zero)[0], 0.0);
    }

    #[test]
    fn progress_loss_ignores_pad_positions_exactly() {
        let mut tape = Tape::new();
        let a = tape.constant(vec![0.1, 0.9], &[2, 1]).unwrap();
        let b = tape.constant(vec![0.1, 0.9, 1e3], &[3, 1]).unwrap();
        let la = goal_progress_loss(&mut tape, a, &[0.5, 1.0], &[false, false]).unwrap();
        let lb = goal_progress_loss(&mut tape, b, &[0.5, 1.0, 0.0], &[false, false, true]).unwrap();
        assert_eq!(tape.data(la)[0], tape.data(lb)[0]);
    }

    #[test]
    fn total_combines_with_default_weights() {
        let mut tape = Tape::<f32>::new();
        let a = tape.scalar_constant(1.0);
        let o = tape.scalar_constant(2.0);
        let g = tape.scalar_constant(3.0);
        let total = total_loss(&mut tape, a, o, g, 0.1, 0.1).unwrap();
        assert!((tape.data(total)[0] - 1.5).abs() < 1e-6);
        let only_action = total_loss(&mut tape, a, o, g, 0.0, 0.0).unwrap();
        assert_eq!(tape.data(only_action)[0], 1.0);
    }

    #[test]
    fn losses_backpropagate_to_logits() {
        let mut tape = Tape::new();
        let logits = tape.leaf(vec![0.2; 2 * 14], &[2, 14], true).unwrap();
        let loss = action_loss(&mut tape, logits, &[1, 12], &[false, false]).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(logits).unwrap();
        assert!(g.iter().any(|&v| v != 0.0));
        // Gradient rows sum to zero: softmax minus one-hot.
        for i in 0..2 {
            let s: f32 = g[i * 14..(i + 1) * 14].iter().sum();
            assert!(s.abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn losses_are_nonnegative_and_pad_invariant(
            seed in 0u64..300,
            n in 1usize..8,
            pads in 0usize..4,
        ) {
            use rand::prelude::*;
            use rand_chacha::ChaCha8Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let total = n + pads;
            let mut tape = Tape::new();
            let live_logits: Vec<f32> = (0..n * 14).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut padded_logits = live_logits.clone();
            padded_logits.extend((0..pads * 14).map(|_| rng.random_range(-1e3..1e3)));
            let mut targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..14)).collect();
            let mut mask = vec![false; n];
            let l_live = tape.constant(live_logits, &[n, 14]).unwrap();
            let loss_live = action_loss(&mut tape, l_live, &targets, &mask).unwrap();
            prop_assert!(tape.data(loss_live)[0] >= 0.0);

            targets.extend((0..pads).map(|_| rng.random_range(0..14)));
            mask.extend(std::iter::repeat(true).take(pads));
            let l_pad = tape.constant(padded_logits, &[total, 14]).unwrap();
            let loss_pad = action_loss(&mut tape, l_pad, &targets, &mask).unwrap();
            prop_assert_eq!(tape.data(loss_live)[0], tape.data(loss_pad)[0]);
        }
    }
}
