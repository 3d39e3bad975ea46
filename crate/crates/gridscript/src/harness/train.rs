//! Stage training loops. Every random decision comes from a per-step
//! generator derived from (run seed, absolute step number), so a resumed
//! run replays the exact batch sequence the uninterrupted run would have
//! seen, and two runs with one seed produce byte-identical metrics.

use std::path::Path;

use rand::prelude::*;
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::checkpoint::{self, Checkpoint};
use crate::config::{Config, Stage};
use crate::contrastive::{clamp_log_temperature, matching_accuracy};
use crate::metrics::token_accuracy;
use crate::model::{pair_index, Model, PairBatch};
use crate::optim::Optimizer;
use crate::world::dataset::Split;
use crate::world::episode::{mix_seeds, Episode};
use crate::world::vocab::{Vocab, NUM_ACTIONS, PAD_ACTION};

use super::csv::MetricsRow;
use super::eval::{eval_pair_accuracy, eval_t2i_accuracy, eval_teacher_forced};
use super::{HarnessError, HarnessResult};

const STEP_TAG: u64 = 0x5354_4550_5447_0000;

/// Sampling generator for one training step. Depends only on the run seed
/// and the absolute step number, never on how the process got there.
pub fn per_step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seeds(seed, STEP_TAG ^ step))
}

/// Matching-probe chunk size used for pair-stage evaluation rows.
pub const EVAL_PAIR_CHUNK: usize = 64;
/// Candidate-set size for instruction-to-sequence matching probes.
pub const T2I_GROUP: usize = 3;

pub struct TrainOutput {
    pub model: Model,
    pub rows: Vec<MetricsRow>,
    pub checkpoint: Checkpoint,
    pub final_step: u64,
}

/// Runs the configured stage from `step0` (0, or the checkpoint's step on
/// resume) up to `run.steps`. `evals` are scored at the eval cadence and
/// on the final step.
pub fn run_training(
    cfg: &Config,
    train: &[Episode],
    evals: &[(Split, Vec<Episode>)],
    init_from: Option<&Path>,
    resume_from: Option<&Path>,
) -> HarnessResult<TrainOutput> {
    if train.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    let vocab = Vocab::build();
    let mut model = Model::build(cfg, vocab.size());
    let mut opt = Optimizer::new(cfg.run.optimizer, cfg.learning_rate(), &model.store);
    let mut step0 = 0u64;

    if let Some(path) = resume_from {
        let ckpt = checkpoint::load(path)?;
        ckpt.verify_hash(&cfg.identity_hash())?;
        if ckpt.stage != cfg.run.stage {
            return Err(HarnessError::StageMismatch { run: cfg.run.stage, found: ckpt.stage });
        }
        ckpt.install(&mut model.store)?;
        opt.load_state(&model.store, &ckpt.opt_state)?;
        step0 = ckpt.step;
    } else if let Some(path) = init_from {
        // Parameters only: a later stage starts its own step count and
        // optimizer from scratch.
        let ckpt = checkpoint::load(path)?;
        ckpt.verify_hash(&cfg.identity_hash())?;
        ckpt.install(&mut model.store)?;
    }

    let mut rows = Vec::new();
    match cfg.run.stage {
        Stage::Pair => run_pair_stage(cfg, &mut model, &mut opt, train, evals, step0, &mut rows)?,
        Stage::Triple => run_triple_stage(cfg, &mut model, &mut opt, train, evals, step0, &mut rows)?,
        Stage::E2e => run_e2e_stage(cfg, &mut model, &mut opt, train, evals, step0, &mut rows)?,
    }

    let final_step = step0.max(cfg.run.steps as u64);
    let opt_state = opt.state_tensors(&model.store);
    let checkpoint =
        Checkpoint::from_store(cfg.run.stage, final_step, cfg.identity_hash(), &model.store, opt_state);
    Ok(TrainOutput { model, rows, checkpoint, final_step })
}

fn read_taus(model: &Model) -> (f64, f64) {
    (
        (model.store.get(model.tau_ia).data[0] as f64).exp(),
        (model.store.get(model.tau_ti).data[0] as f64).exp(),
    )
}

/// Projects both log-temperature parameters back into the clamp range
/// after an optimizer step.
fn clamp_taus(model: &mut Model) {
    for id in [model.tau_ia, model.tau_ti] {
        let p = model.store.get_mut(id);
        p.data[0] = clamp_log_temperature(p.data[0]);
    }
}

fn eval_due(cfg: &Config, step: u64, target: u64) -> bool {
    step == target || (cfg.run.eval_every > 0 && step % cfg.run.eval_every as u64 == 0)
}

fn run_pair_stage(
    cfg: &Config,
    model: &mut Model,
    opt: &mut Optimizer,
    train: &[Episode],
    evals: &[(Split, Vec<Episode>)],
    step0: u64,
    rows: &mut Vec<MetricsRow>,
) -> HarnessResult<()> {
    let pool = pair_index(train, None);
    if pool.len() < 2 {
        return Err(HarnessError::PoolTooSmall { got: pool.len(), want: 2 });
    }
    let batch_size = cfg.batch_size().max(2);
    let frozen = cfg.freeze_groups();
    let target = cfg.run.steps as u64;
    for step in (step0 + 1)..=target {
        let mut rng = per_step_rng(cfg.run.seed, step);
        let mut batch = PairBatch::new();
        for _ in 0..batch_size {
            let (e, t) = pool[rng.random_range(0..pool.len())];
            batch.push(&train[e], t);
        }
        let mut tape = Tape::new();
        let b = model.store.bind(&mut tape, &frozen)?;
        let fwd = model.pair_forward(&mut tape, &b, &batch)?;
        tape.backward(fwd.loss)?;
        let grads = b.grads(&tape);
        opt.step(&mut model.store, &grads)?;
        clamp_taus(model);

        let loss = tape.data(fwd.loss)[0] as f64;
        let acc = matching_accuracy(
            tape.data(fwd.logits),
            fwd.targets.n,
            fwd.targets.u,
            &fwd.targets.target_cols,
        );
        let (tau_ia, tau_ti) = read_taus(model);
        let mut row = MetricsRow::blank(step, "train", Stage::Pair);
        row.loss_total = Some(loss);
        row.loss_ia = Some(loss);
        row.accuracy = Some(acc);
        row.tau_ia = Some(tau_ia);
        row.tau_ti = Some(tau_ti);
        rows.push(row);

        if eval_due(cfg, step, target) {
            for (split, episodes) in evals {
                let probe = eval_pair_accuracy(model, episodes, EVAL_PAIR_CHUNK, cfg.exec_mode())?;
                let mut row = MetricsRow::blank(step, split.as_str(), Stage::Pair);
                row.accuracy = Some(probe.accuracy);
                row.tau_ia = Some(tau_ia);
                row.tau_ti = Some(tau_ti);
                rows.push(row);
            }
        }
    }
    Ok(())
}

fn run_triple_stage(
    cfg: &Config,
    model: &mut Model,
    opt: &mut Optimizer,
    train: &[Episode],
    evals: &[(Split, Vec<Episode>)],
    step0: u64,
    rows: &mut Vec<MetricsRow>,
) -> HarnessResult<()> {
    if train.len() < 2 {
        return Err(HarnessError::PoolTooSmall { got: train.len(), want: 2 });
    }
    // Distinct episodes per batch: the text-image objective treats the
    // diagonal as the one correct match, which duplicates would break.
    let batch_size = cfg.batch_size().min(train.len()).max(2);
    let alpha = cfg.model.triple_alpha as f32;
    let cap = cfg.model.seq_cap;
    let frozen = cfg.freeze_groups();
    let target = cfg.run.steps as u64;
    let diag: Vec<usize> = (0..batch_size).collect();
    for step in (step0 + 1)..=target {
        let mut rng = per_step_rng(cfg.run.seed, step);
        let picks = sample(&mut rng, train.len(), batch_size);
        let episodes: Vec<&Episode> = picks.iter().map(|i| &train[i]).collect();
        let mut tape = Tape::new();
        let b = model.store.bind(&mut tape, &frozen)?;
        let fwd = model.triple_forward(&mut tape, &b, &episodes, cap, alpha)?;
        tape.backward(fwd.loss)?;
        let grads = b.grads(&tape);
        opt.step(&mut model.store, &grads)?;
        clamp_taus(model);

        let acc = matching_accuracy(tape.data(fwd.ti_logits), batch_size, batch_size, &diag);
        let (tau_ia, tau_ti) = read_taus(model);
        let mut row = MetricsRow::blank(step, "train", Stage::Triple);
        row.loss_total = Some(tape.data(fwd.loss)[0] as f64);
        row.loss_ti = Some(tape.data(fwd.l_ti)[0] as f64);
        row.loss_ia = Some(tape.data(fwd.l_ia)[0] as f64);
        row.accuracy = Some(acc);
        row.tau_ia = Some(tau_ia);
        row.tau_ti = Some(tau_ti);
        rows.push(row);

        if eval_due(cfg, step, target) {
            for (split, episodes) in evals {
                let probe = eval_t2i_accuracy(model, episodes, T2I_GROUP, cap, cfg.exec_mode())?;
                let mut row = MetricsRow::blank(step, split.as_str(), Stage::Triple);
                row.accuracy = Some(probe.accuracy);
                row.tau_ia = Some(tau_ia);
                row.tau_ti = Some(tau_ti);
                rows.push(row);
            }
        }
    }
    Ok(())
}

fn run_e2e_stage(
    cfg: &Config,
    model: &mut Model,
    opt: &mut Optimizer,
    train: &[Episode],
    evals: &[(Split, Vec<Episode>)],
    step0: u64,
    rows: &mut Vec<MetricsRow>,
) -> HarnessResult<()> {
    let batch_size = cfg.batch_size().min(train.len());
    let aux_o = cfg.model.aux_object_weight as f32;
    let aux_gp = cfg.model.aux_gp_weight as f32;
    let map_enabled = cfg.model.map_enabled;
    let frozen = cfg.freeze_groups();
    let target = cfg.run.steps as u64;
    for step in (step0 + 1)..=target {
        let mut rng = per_step_rng(cfg.run.seed, step);
        let picks = sample(&mut rng, train.len(), batch_size);
        let mut tape = Tape::new();
        let b = model.store.bind(&mut tape, &frozen)?;
        let mut totals = Vec::with_capacity(batch_size);
        let mut sums = [0.0f64; 4];
        let mut preds = Vec::new();
        let mut golds = Vec::new();
        for i in picks.iter() {
            let ep = &train[i];
            let fwd = model.episode_forward(&mut tape, &b, ep, &ep.actions, map_enabled)?;
            let losses = model.episode_losses(&mut tape, &fwd, ep, aux_o, aux_gp)?;
            sums[0] += tape.data(losses.total)[0] as f64;
            sums[1] += tape.data(losses.action)[0] as f64;
            sums[2] += tape.data(losses.object)[0] as f64;
            sums[3] += tape.data(losses.goal_progress)[0] as f64;
            for (t, row) in tape.data(fwd.action_logits).chunks_exact(NUM_ACTIONS).enumerate() {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = j;
                    }
                }
                preds.push(best);
                golds.push(ep.actions[t]);
            }
            totals.push(losses.total);
        }
        let mut batch_loss = totals[0];
        for &t in &totals[1..] {
            batch_loss = tape.add(batch_loss, t)?;
        }
        let batch_loss = tape.scale(batch_loss, 1.0 / totals.len() as f32)?;
        tape.backward(batch_loss)?;
        let grads = b.grads(&tape);
        opt.step(&mut model.store, &grads)?;
        clamp_taus(model);

        let (tau_ia, tau_ti) = read_taus(model);
        let n = totals.len() as f64;
        let mut row = MetricsRow::blank(step, "train", Stage::E2e);
        row.loss_total = Some(tape.data(batch_loss)[0] as f64);
        row.loss_action = Some(sums[1] / n);
        row.loss_object = Some(sums[2] / n);
        row.loss_gp = Some(sums[3] / n);
        row.accuracy = Some(token_accuracy(&preds, &golds, PAD_ACTION));
        row.tau_ia = Some(tau_ia);
        row.tau_ti = Some(tau_ti);
        rows.push(row);

        if eval_due(cfg, step, target) {
            for (split, episodes) in evals {
                let summary = eval_teacher_forced(model, cfg, episodes, cfg.exec_mode())?;
                let mut row = MetricsRow::blank(step, split.as_str(), Stage::E2e);
                row.loss_total = Some(summary.loss_total);
                row.loss_action = Some(summary.loss_action);
                row.loss_object = Some(summary.loss_object);
                row.loss_gp = Some(summary.loss_gp);
                row.accuracy = Some(summary.accuracy);
                row.macro_f1 = Some(summary.macro_f1);
                row.tau_ia = Some(tau_ia);
                row.tau_ti = Some(tau_ti);
                rows.push(row);
            }
        }
    }
    Ok(())
}

// ── map ablation ──

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationCell {
    pub map_enabled: bool,
    pub split: &'static str,
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Trains the supervised stage twice, with and without the map stream,
/// and scores both on the seen and unseen splits: four cells.
pub fn run_map_ablation(
    cfg: &Config,
    train: &[Episode],
    seen: &[Episode],
    unseen: &[Episode],
) -> HarnessResult<Vec<AblationCell>> {
    let mut cells = Vec::with_capacity(4);
    for map_enabled in [true, false] {
        let mut variant = cfg.clone();
        variant.run.stage = Stage::E2e;
        variant.model.map_enabled = map_enabled;
        let out = run_training(&variant, train, &[], None, None)?;
        for (split, episodes) in [(Split::ValidSeen, seen), (Split::ValidUnseen, unseen)] {
            let summary = eval_teacher_forced(&out.model, &variant, episodes, variant.exec_mode())?;
            cells.push(AblationCell {
                map_enabled,
                split: split.as_str(),
                accuracy: summary.accuracy,
                macro_f1: summary.macro_f1,
            });
        }
    }
    Ok(cells)
}
