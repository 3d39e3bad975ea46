//! Sequence metrics: token accuracy and macro-averaged F1.
//!
//! Positions whose target is the pad id do not exist for scoring. The pad
//! class itself is never tracked, so a stray pad prediction at a live
//! position scores as a plain miss. Macro-F1 uses 2TP / (2TP + FP + FN)
//! per class and averages only classes that occur somewhere.

/// Fraction of non-pad positions predicted exactly. Empty input scores 0.
pub fn token_accuracy(pred: &[usize], target: &[usize], pad_id: usize) -> f64 {
    assert_eq!(pred.len(), target.len(), "prediction and target lengths differ");
    let mut live = 0usize;
    let mut hits = 0usize;
    for (&p, &t) in pred.iter().zip(target) {
        if t == pad_id {
            continue;
        }
        live += 1;
        if p == t {
            hits += 1;
        }
    }
    if live == 0 {
        0.0
    } else {
        hits as f64 / live as f64
    }
}

/// Macro-F1 over classes `0..num_classes`, skipping pad positions and
/// classes with no true or predicted instances. Single pass over the data;
/// per-class F1 in ascending class order.
pub fn macro_f1(pred: &[usize], target: &[usize], num_classes: usize, pad_id: usize) -> f64 {
    assert_eq!(pred.len(), target.len(), "prediction and target lengths differ");
    let mut tp = vec![0u64; num_classes];
    let mut fp = vec![0u64; num_classes];
    let mut fnn = vec![0u64; num_classes];
    for (&p, &t) in pred.iter().zip(target) {
        if t == pad_id {
            continue;
        }
        debug_assert!(t < num_classes, "target class {t} out of range");
        if p == t {
            tp[t] += 1;
        } else {
            fnn[t] += 1;
            if p < num_classes {
                fp[p] += 1;
            }
        }
    }
    let mut sum = 0.0f64;
    let mut kept = 0usize;
    for c in 0..num_classes {
        if tp[c] == 0 && fp[c] == 0 && fnn[c] == 0 {
            continue;
        }
        sum += 2.0 * tp[c] as f64 / (2.0 * tp[c] as f64 + fp[c] as f64 + fnn[c] as f64);
        kept += 1;
    }
    if kept == 0 {
        0.0
    } else {
        sum / kept as f64
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    const PAD: usize = 13;

    #[test]
    fn perfect_predictions_score_one() {
        let t = vec![0, 5, 12, 3];
        assert_eq!(token_accuracy(&t, &t, PAD), 1.0);
        assert_eq!(macro_f1(&t, &t, 13, PAD), 1.0);
    }

    #[test]
    fn hand_worked_macro_f1() {
        // Class 0: tp 1 fn 1 -> 2/3. Class 1: tp 1 fp 2 -> 1/2.
        // Class 2: fn 1 -> 0. Mean of three present classes: 7/18.
        let target = vec![0, 0, 1, 2];
        let pred = vec![0, 1, 1, 1];
        let got = macro_f1(&pred, &target, 13, PAD);
        assert!((got - 7.0 / 18.0).abs() < 1e-15, "{got}");
        assert_eq!(token_accuracy(&pred, &target, PAD), 0.5);
    }

    #[test]
    fn pad_positions_are_invisible() {
        let target = vec![4, PAD, PAD, 7];
        let pred_a = vec![4, 0, 1, 7];
        let pred_b = vec![4, 9, 9, 7];
        assert_eq!(token_accuracy(&pred_a, &target, PAD), 1.0);
        assert_eq!(macro_f1(&pred_a, &target, 13, PAD), macro_f1(&pred_b, &target, 13, PAD));
    }

    #[test]
    fn pad_predictions_at_live_positions_are_plain_misses() {
        let target = vec![4, 4];
        let pred = vec![PAD, 4];
        assert_eq!(token_accuracy(&pred, &target, 14), 0.5);
        // Class 4: tp 1, fn 1 -> 2/3; pad class contributes nothing.
        assert!((macro_f1(&pred, &target, 13, PAD) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn absent_classes_do_not_dilute_the_average() {
        let target = vec![0, 0];
        let pred = vec![0, 0];
        assert_eq!(macro_f1(&pred, &target, 13, PAD), 1.0, "twelve absent classes are skipped");
    }

    #[test]
    fn all_wrong_scores_zero() {
        let target = vec![1, 1, 1];
        let pred = vec![2, 2, 2];
        assert_eq!(token_accuracy(&pred, &target, PAD), 0.0);
        assert_eq!(macro_f1(&pred, &target, 13, PAD), 0.0);
    }

    proptest! {
        #[test]
        fn scores_stay_in_unit_interval(
            pairs in proptest::collection::vec((0usize..14, 0usize..14), 1..64)
        ) {
            let (pred, target): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let acc = token_accuracy(&pred, &target, PAD);
            let f1 = macro_f1(&pred, &target, 13, PAD);
            prop_assert!((0.0..=1.0).contains(&acc));
            prop_assert!((0.0..=1.0).contains(&f1));
            if target.iter().any(|&t| t != PAD) {
                let exact = pred.iter().zip(&target).all(|(p, t)| t == &PAD || p == t);
                prop_assert_eq!(acc == 1.0, exact);
                if exact {
                    prop_assert_eq!(f1, 1.0);
                }
            }
        }
    }
}
