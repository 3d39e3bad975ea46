//! Held-out evaluation passes. Each episode is scored on its own
//! recording-off tape, so evaluations run in parallel without touching
//! optimizer state, and sequential and parallel execution produce the
//! same numbers in the same order.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::config::Config;
use crate::contrastive::{matching_accuracy, similarity_logits};
use crate::exec::{map_items, ExecMode};
use crate::metrics::{macro_f1, token_accuracy};
use crate::model::{pair_index, rollout_inputs, Model, PairBatch};
use crate::params::{Bindings, ParamGroup};
use crate::world::episode::Episode;
use crate::world::vocab::{NUM_ACTIONS, PAD_ACTION};

use super::{HarnessError, HarnessResult};

/// Inference tape: nothing recorded, every parameter frozen.
fn inference_tape(model: &Model) -> HarnessResult<(Tape<f32>, Bindings)> {
    let mut tape = Tape::new();
    tape.set_recording(false);
    let b = model.store.bind(&mut tape, &ParamGroup::ALL)?;
    Ok((tape, b))
}

fn argmax_row(row: &[f32]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Per-position argmax classes of an `n×c` logits matrix.
fn argmax_rows(data: &[f32], c: usize) -> Vec<usize> {
    data.chunks_exact(c).map(argmax_row).collect()
}

// ── contrastive probes ──

/// Accuracy of a matching probe together with the accuracy a uniform
/// random guesser would get on the same item sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchEval {
    pub accuracy: f64,
    pub chance: f64,
    pub items: usize,
}

/// Chunk-shuffle seed. Fixed, so the probe is a pure function of the
/// episode list.
const EVAL_SHUFFLE_TAG: u64 = 0x4556_414c_5348_5546;

/// Frame-pair to action matching over every usable pair, in fixed chunks.
/// The pool is shuffled (fixed seed) before chunking so every chunk mixes
/// episodes and action classes; chance for a chunk is 1/U, its
/// unique-action count.
pub fn eval_pair_accuracy(
    model: &Model,
    episodes: &[Episode],
    chunk: usize,
    mode: ExecMode,
) -> HarnessResult<MatchEval> {
    let mut pool = pair_index(episodes, None);
    if pool.len() < 2 {
        return Err(HarnessError::PoolTooSmall { got: pool.len(), want: 2 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(EVAL_SHUFFLE_TAG);
    pool.shuffle(&mut rng);
    let chunks: Vec<Vec<(usize, usize)>> = pool
        .chunks(chunk.max(2))
        .filter(|c| c.len() >= 2)
        .map(|c| c.to_vec())
        .collect();
    let scored = map_items(mode, chunks, |items| -> HarnessResult<(usize, f64, usize)> {
        let mut batch = PairBatch::new();
        for &(e, t) in &items {
            batch.push(&episodes[e], t);
        }
        let (mut tape, b) = inference_tape(model)?;
        let fwd = model.pair_forward(&mut tape, &b, &batch)?;
        let n = fwd.targets.n;
        let acc = matching_accuracy(tape.data(fwd.logits), n, fwd.targets.u, &fwd.targets.target_cols);
        let hits = (acc * n as f64).round() as usize;
        Ok((hits, n as f64 / fwd.targets.u as f64, n))
    });
    let mut hits = 0;
    let mut chance_mass = 0.0;
    let mut items = 0;
    for r in scored {
        let (h, c, n) = r?;
        hits += h;
        chance_mass += c;
        items += n;
    }
    Ok(MatchEval {
        accuracy: hits as f64 / items as f64,
        chance: chance_mass / items as f64,
        items,
    })
}

/// Instruction to frame-sequence matching in groups of `group` episodes;
/// a hit is the diagonal argmax. Chance is 1/group. Trailing episodes
/// that do not fill a group are dropped.
pub fn eval_t2i_accuracy(
    model: &Model,
    episodes: &[Episode],
    group: usize,
    cap: usize,
    mode: ExecMode,
) -> HarnessResult<MatchEval> {
    assert!(group >= 2, "matching needs at least two candidates");
    if episodes.len() < group {
        return Err(HarnessError::PoolTooSmall { got: episodes.len(), want: group });
    }
    let groups: Vec<Vec<&Episode>> = episodes.chunks_exact(group).map(|c| c.iter().collect()).collect();
    let diag: Vec<usize> = (0..group).collect();
    let scored = map_items(mode, groups, |eps| -> HarnessResult<usize> {
        let (mut tape, b) = inference_tape(model)?;
        let (text, visual) = model.sequence_reps(&mut tape, &b, &eps, cap)?;
        let tau = model.tau_value(&mut tape, &b, model.tau_ti)?;
        let logits = similarity_logits(&mut tape, text, visual, tau)?;
        let acc = matching_accuracy(tape.data(logits), group, group, &diag);
        Ok((acc * group as f64).round() as usize)
    });
    let mut hits = 0;
    let mut items = 0;
    for r in scored {
        hits += r?;
        items += group;
    }
    Ok(MatchEval {
        accuracy: hits as f64 / items as f64,
        chance: 1.0 / group as f64,
        items,
    })
}

// ── supervised scoring ──

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub loss_total: f64,
    pub loss_action: f64,
    pub loss_object: f64,
    pub loss_gp: f64,
    pub episodes: usize,
}

/// Teacher-forced scoring: ground-truth action inputs, per-position
/// argmax predictions pooled over the whole corpus.
pub fn eval_teacher_forced(
    model: &Model,
    cfg: &Config,
    episodes: &[Episode],
    mode: ExecMode,
) -> HarnessResult<EvalSummary> {
    if episodes.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    let items: Vec<&Episode> = episodes.iter().collect();
    let aux_o = cfg.model.aux_object_weight as f32;
    let aux_gp = cfg.model.aux_gp_weight as f32;
    let map_enabled = cfg.model.map_enabled;
    type PerEpisode = (Vec<usize>, Vec<usize>, [f64; 4]);
    let scored = map_items(mode, items, move |ep| -> HarnessResult<PerEpisode> {
        let (mut tape, b) = inference_tape(model)?;
        let fwd = model.episode_forward(&mut tape, &b, ep, &ep.actions, map_enabled)?;
        let losses = model.episode_losses(&mut tape, &fwd, ep, aux_o, aux_gp)?;
        let preds = argmax_rows(tape.data(fwd.action_logits), NUM_ACTIONS);
        let values = [
            tape.data(losses.total)[0] as f64,
            tape.data(losses.action)[0] as f64,
            tape.data(losses.object)[0] as f64,
            tape.data(losses.goal_progress)[0] as f64,
        ];
        Ok((preds, ep.actions.clone(), values))
    });
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    let mut sums = [0.0f64; 4];
    let mut count = 0usize;
    for r in scored {
        let (p, g, values) = r?;
        preds.extend(p);
        golds.extend(g);
        for (s, v) in sums.iter_mut().zip(values) {
            *s += v;
        }
        count += 1;
    }
    Ok(EvalSummary {
        accuracy: token_accuracy(&preds, &golds, PAD_ACTION),
        macro_f1: macro_f1(&preds, &golds, NUM_ACTIONS, PAD_ACTION),
        loss_total: sums[0] / count as f64,
        loss_action: sums[1] / count as f64,
        loss_object: sums[2] / count as f64,
        loss_gp: sums[3] / count as f64,
        episodes: count,
    })
}

// ── open-loop decoding ──

/// Predicts the action stream one position at a time: position t is read
/// with the predicted prefix as action input and pad beyond it, which the
/// causal mask keeps invisible. Observations come from the expert
/// transcript.
pub fn rollout_episode(model: &Model, cfg: &Config, ep: &Episode) -> HarnessResult<Vec<usize>> {
    let n = ep.len();
    let mut preds: Vec<usize> = Vec::with_capacity(n);
    for t in 0..n {
        let stream = rollout_inputs(&preds, n);
        let (mut tape, b) = inference_tape(model)?;
        let fwd = model.episode_forward(&mut tape, &b, ep, &stream, cfg.model.map_enabled)?;
        let row = &tape.data(fwd.action_logits)[t * NUM_ACTIONS..(t + 1) * NUM_ACTIONS];
        preds.push(argmax_row(row));
    }
    Ok(preds)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutEval {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Fraction of episodes whose whole predicted stream matches the
    /// expert's.
    pub exact: f64,
    pub episodes: usize,
}

pub fn eval_rollout(
    model: &Model,
    cfg: &Config,
    episodes: &[Episode],
    mode: ExecMode,
) -> HarnessResult<RolloutEval> {
    if episodes.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    let items: Vec<&Episode> = episodes.iter().collect();
    let scored = map_items(mode, items, |ep| -> HarnessResult<(Vec<usize>, Vec<usize>)> {
        let preds = rollout_episode(model, cfg, ep)?;
        Ok((preds, ep.actions.clone()))
    });
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    let mut exact = 0usize;
    let mut count = 0usize;
    for r in scored {
        let (p, g) = r?;
        if p == g {
            exact += 1;
        }
        preds.extend(p);
        golds.extend(g);
        count += 1;
    }
    Ok(RolloutEval {
        accuracy: token_accuracy(&preds, &golds, PAD_ACTION),
        macro_f1: macro_f1(&preds, &golds, NUM_ACTIONS, PAD_ACTION),
        exact: exact as f64 / count as f64,
        episodes: count,
    })
}

#[cfg(test)]
mod tests {
    use crate::world::episode::generate_episode;
    use crate::world::vocab::Vocab;

    use super::*;

    fn small_config() -> Config {
        let mut cfg = Config::default();
        cfg.model.d = 32;
        cfg.model.fusion_layers = 1;
        cfg.model.fusion_heads = 2;
        cfg.world.object_count = 6;
        cfg
    }

    fn sample_episodes(cfg: &Config, count: usize) -> Vec<Episode> {
        let vocab = Vocab::build();
        let gen = cfg.gen_config();
        (0..count as u64)
            .map(|i| generate_episode(&gen, &vocab, 11 + i, 900 + i).unwrap())
            .collect()
    }

    #[test]
    fn argmax_breaks_ties_toward_lowest() {
        assert_eq!(argmax_row(&[0.5, 0.1, 0.5]), 0);
        assert_eq!(argmax_rows(&[0.0, 1.0, 2.0, 0.0, 0.0, 0.0], 3), vec![2, 0]);
    }

    #[test]
    fn sequential_and_parallel_evals_agree_exactly() {
        let cfg = small_config();
        let episodes = sample_episodes(&cfg, 6);
        let model = Model::build(&cfg, Vocab::build().size());
        let seq = eval_teacher_forced(&model, &cfg, &episodes, ExecMode::Sequential).unwrap();
        let par = eval_teacher_forced(&model, &cfg, &episodes, ExecMode::Parallel).unwrap();
        assert_eq!(seq, par);
        let ps = eval_pair_accuracy(&model, &episodes, 16, ExecMode::Sequential).unwrap();
        let pp = eval_pair_accuracy(&model, &episodes, 16, ExecMode::Parallel).unwrap();
        assert_eq!(ps, pp);
        let ts = eval_t2i_accuracy(&model, &episodes, 3, cfg.model.seq_cap, ExecMode::Sequential).unwrap();
        let tp = eval_t2i_accuracy(&model, &episodes, 3, cfg.model.seq_cap, ExecMode::Parallel).unwrap();
        assert_eq!(ts, tp);
    }

    #[test]
    fn rollout_stream_has_episode_length_and_valid_ids() {
        let cfg = small_config();
        let episodes = sample_episodes(&cfg, 2);
        let model = Model::build(&cfg, Vocab::build().size());
        let preds = rollout_episode(&model, &cfg, &episodes[0]).unwrap();
        assert_eq!(preds.len(), episodes[0].len());
        assert!(preds.iter().all(|&a| a < NUM_ACTIONS));
        let ev = eval_rollout(&model, &cfg, &episodes, ExecMode::Sequential).unwrap();
        assert!(ev.accuracy >= 0.0 && ev.accuracy <= 1.0);
        assert_eq!(ev.episodes, 2);
    }

    #[test]
    fn pair_probe_reports_sane_chance() {
        let cfg = small_config();
        let episodes = sample_episodes(&cfg, 4);
        let model = Model::build(&cfg, Vocab::build().size());
        let ev = eval_pair_accuracy(&model, &episodes, 64, ExecMode::Sequential).unwrap();
        // A chunk's chance 1/U is at least 1/12 (motor actions only).
        assert!(ev.chance >= 1.0 / 12.0 && ev.chance <= 1.0);
        assert!(ev.items >= 2);
    }

    #[test]
    fn empty_or_tiny_inputs_are_named_errors() {
        let cfg = small_config();
        let model = Model::build(&cfg, Vocab::build().size());
        assert!(matches!(
            eval_teacher_forced(&model, &cfg, &[], ExecMode::Sequential),
            Err(HarnessError::EmptyDataset)
        ));
        let one = sample_episodes(&cfg, 1);
        assert!(matches!(
            eval_t2i_accuracy(&model, &one, 3, cfg.model.seq_cap, ExecMode::Sequential),
            Err(HarnessError::PoolTooSmall { want: 3, .. })
        ));
    }
}
