//! The full model: encoders, two learned temperatures, and the fusion
//! stack registered in one parameter store, plus the forward passes each
//! training stage needs.
//!
//! Batch forwards run per episode on a shared tape (episodes vary in
//! length, so there is no cross-episode padding anywhere). The action
//! input stream is whatever the caller supplies: ground truth for teacher
//! forcing, a predicted prefix padded with the pad id for rollouts. The
//! temporal mask hides slot t and beyond from position t either way.

use thiserror::Error;

use crate::autodiff::{Tape, TapeError, TapeResult, ValueId};
use crate::config::Config;
use crate::contrastive::{
    build_affinity_targets, loss_image_action, loss_text_image, loss_triple, similarity_logits,
    AffinityTargets, ContrastiveError, TAU_INIT,
};
use crate::encoders::{EncoderConfig, Encoders};
use crate::fusion::{build_causal_mask, Fusion, FusionConfig, FusionError, TokenLayout};
use crate::losses::{
    action_loss, goal_progress_loss, goal_progress_targets, object_loss, total_loss, LossError,
};
use crate::params::{Bindings, Init, ParamGroup, ParamId, ParamStore};
use crate::world::episode::Episode;
use crate::world::render::FRAME_LEN;
use crate::world::vocab::{NUM_ACTIONS, NUM_MOTOR_ACTIONS, NUM_OBJECT_CLASSES, PAD_ACTION};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Contrastive(#[from] ContrastiveError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("episode {id} carries {got}-float frames, the model expects {want}")]
    FrameWidth { id: String, got: usize, want: usize },
    #[error("no usable frame pairs in this batch")]
    NoPairs,
}

pub type ModelResult<T> = Result<T, ModelError>;

pub struct Model {
    pub store: ParamStore,
    pub encoders: Encoders,
    pub fusion: Fusion,
    pub tau_ia: ParamId,
    pub tau_ti: ParamId,
}

impl Model {
    pub fn build(cfg: &Config, vocab_size: usize) -> Model {
        Model::build_seeded(cfg, vocab_size, cfg.run.seed)
    }

    /// Same architecture, explicit init seed (for multi-init evaluations).
    pub fn build_seeded(cfg: &Config, vocab_size: usize, seed: u64) -> Model {
        let mut store = ParamStore::new(seed);
        let encoders = Encoders::register(
            &mut store,
            EncoderConfig {
                d: cfg.model.d,
                vocab_size,
                frame_feature_len: FRAME_LEN,
                map_channels: cfg.world.map_channels,
                map_extent: cfg.world.extent,
                num_actions: NUM_ACTIONS,
                num_objects: NUM_OBJECT_CLASSES,
            },
        );
        // Temperatures are stored as log values so gradient steps act
        // multiplicatively; a direct parameter blows past the clamp range
        // in a single step (the gradient carries a 1/tau^2 factor).
        let tau_ia = store
            .add("temp.image_action", &[1], ParamGroup::Temperature, Init::Const(TAU_INIT.ln()))
            .expect("fresh store");
        let tau_ti = store
            .add("temp.text_image", &[1], ParamGroup::Temperature, Init::Const(TAU_INIT.ln()))
            .expect("fresh store");
        let fusion = Fusion::register(
            &mut store,
            FusionConfig {
                d: cfg.model.d,
                layers: cfg.model.fusion_layers,
                heads: cfg.model.fusion_heads,
                num_actions: NUM_ACTIONS,
                num_objects: NUM_OBJECT_CLASSES,
            },
        );
        Model { store, encoders, fusion, tau_ia, tau_ti }
    }

    fn check_frames(&self, ep: &Episode) -> ModelResult<()> {
        let want = self.encoders.cfg.frame_feature_len;
        match ep.frames.iter().find(|f| f.len() != want) {
            Some(f) => Err(ModelError::FrameWidth { id: ep.id.clone(), got: f.len(), want }),
            None => Ok(()),
        }
    }

    /// Temperature value from its log parameter: exp(theta) computed as
    /// the exact identity sigmoid(theta) / (1 - sigmoid(theta)), which
    /// keeps the graph inside existing differentiable ops.
    pub fn tau_value(&self, tape: &mut Tape<f32>, b: &Bindings, id: ParamId) -> TapeResult<ValueId> {
        let theta = b.value(id);
        let sig = tape.sigmoid(theta)?;
        let one = tape.constant(vec![1.0], &[1])?;
        let neg = tape.scale(sig, -1.0)?;
        let den = tape.add(one, neg)?;
        tape.div_by_scalar(sig, den)
    }
}

// ── frame-pair alignment ──

/// A batch of (frame t, frame t+1, action t) training items, flattened.
pub struct PairBatch {
    pub obs_t: Vec<f32>,
    pub obs_t1: Vec<f32>,
    pub action_ids: Vec<usize>,
    pub count: usize,
}

impl PairBatch {
    pub fn new() -> PairBatch {
        PairBatch { obs_t: Vec::new(), obs_t1: Vec::new(), action_ids: Vec::new(), count: 0 }
    }

    pub fn push(&mut self, ep: &Episode, t: usize) {
        self.obs_t.extend_from_slice(&ep.frames[t]);
        self.obs_t1.extend_from_slice(&ep.frames[t + 1]);
        self.action_ids.push(ep.actions[t]);
        self.count += 1;
    }
}

impl Default for PairBatch {
    fn default() -> Self {
        Self::new()
    }
}

/// All (episode, t) items usable for frame-pair alignment: motor actions
/// only, both frames inside `cap` when given.
pub fn pair_index(episodes: &[Episode], cap: Option<usize>) -> Vec<(usize, usize)> {
    let mut items = Vec::new();
    for (e, ep) in episodes.iter().enumerate() {
        let horizon = cap.map_or(ep.len(), |c| c.min(ep.len()));
        for t in 0..horizon.saturating_sub(1) {
            if ep.actions[t] < NUM_MOTOR_ACTIONS {
                items.push((e, t));
            }
        }
    }
    items
}

pub struct PairForward {
    pub loss: ValueId,
    pub logits: ValueId,
    pub targets: AffinityTargets,
}

impl Model {
    /// Frame-pair to action alignment loss over one batch.
    pub fn pair_forward(
        &self,
        tape: &mut Tape<f32>,
        b: &Bindings,
        batch: &PairBatch,
    ) -> ModelResult<PairForward> {
        if batch.count < 2 {
            return Err(ModelError::NoPairs);
        }
        let targets = build_affinity_targets(&batch.action_ids)?;
        let e_t = self.encoders.encode_frames(tape, b, batch.obs_t.clone(), batch.count)?;
        let e_t1 = self.encoders.encode_frames(tape, b, batch.obs_t1.clone(), batch.count)?;
        let pairs = self.encoders.fuse_frame_pairs(tape, b, e_t, e_t1)?;
        let actions = self.encoders.embed_actions(tape, b, &targets.unique_actions)?;
        let tau = self.tau_value(tape, b, self.tau_ia)?;
        let logits = similarity_logits(tape, pairs, actions, tau)?;
        let loss = loss_image_action(tape, logits, &targets)?;
        Ok(PairForward { loss, logits, targets })
    }

    /// Sequence-level text and visual representations for a set of
    /// episodes: unit rows, one per episode. Frames beyond `cap` are
    /// ignored.
    pub fn sequence_reps(
        &self,
        tape: &mut Tape<f32>,
        b: &Bindings,
        episodes: &[&Episode],
        cap: usize,
    ) -> ModelResult<(ValueId, ValueId)> {
        let mut text_rows = Vec::with_capacity(episodes.len());
        let mut visual_rows = Vec::with_capacity(episodes.len());
        for ep in episodes {
            self.check_frames(ep)?;
            let (_, text_rep) = self.encoders.encode_text(tape, b, &ep.tokens)?;
            text_rows.push(text_rep);
            let k = cap.min(ep.len());
            let mut obs = Vec::with_capacity(k * FRAME_LEN);
            for f in &ep.frames[..k] {
                obs.extend_from_slice(f);
            }
            let frames = self.encoders.encode_frames(tape, b, obs, k)?;
            let mean = tape.mean_rows(frames)?;
            visual_rows.push(tape.l2_normalize_rows(mean)?);
        }
        let text = tape.concat_rows(&text_rows)?;
        let visual = tape.concat_rows(&visual_rows)?;
        Ok((text, visual))
    }
}

pub struct TripleForward {
    pub loss: ValueId,
    pub l_ti: ValueId,
    pub l_ia: ValueId,
    pub ti_logits: ValueId,
    pub ia: PairForward,
}

impl Model {
    /// Sequence-level objective: text-image contrast over whole episodes
    /// blended with the frame-pair alignment over every pair the batch
    /// contains.
    pub fn triple_forward(
        &self,
        tape: &mut Tape<f32>,
        b: &Bindings,
        episodes: &[&Episode],
        cap: usize,
        alpha: f32,
    ) -> ModelResult<TripleForward> {
        let (text, visual) = self.sequence_reps(tape, b, episodes, cap)?;
        let tau_ti = self.tau_value(tape, b, self.tau_ti)?;
        let ti_logits = similarity_logits(tape, text, visual, tau_ti)?;
        let l_ti = loss_text_image(tape, text, visual, tau_ti)?;

        let owned: Vec<Episode> = episodes.iter().map(|e| (*e).clone()).collect();
        let mut batch = PairBatch::new();
        for (e, t) in pair_index(&owned, Some(cap)) {
            batch.push(&owned[e], t);
        }
        if batch.count < 2 {
            return Err(ModelError::NoPairs);
        }
        let ia = self.pair_forward(tape, b, &batch)?;
        let loss = loss_triple(tape, l_ti, ia.loss, alpha)?;
        Ok(TripleForward { loss, l_ti, l_ia: ia.loss, ti_logits, ia })
    }
}

// ── supervised stage ──

pub struct EpisodeForward {
    pub action_logits: ValueId,
    pub object_logits: ValueId,
    pub goal_progress: ValueId,
    pub layout: TokenLayout,
}

pub struct EpisodeLosses {
    pub total: ValueId,
    pub action: ValueId,
    pub object: ValueId,
    pub goal_progress: ValueId,
}

impl Model {
    /// Full fusion forward for one episode. `actions_in` is the action
    /// input stream (length n); position t of the output never sees
    /// entries at t or later.
    pub fn episode_forward(
        &self,
        tape: &mut Tape<f32>,
        b: &Bindings,
        ep: &Episode,
        actions_in: &[usize],
        map_enabled: bool,
    ) -> ModelResult<EpisodeForward> {
        self.check_frames(ep)?;
        let n = ep.len();
        assert_eq!(actions_in.len(), n, "action input stream must cover every step");
        let (per_token, _) = self.encoders.encode_text(tape, b, &ep.tokens)?;
        let mut obs = Vec::with_capacity(n * FRAME_LEN);
        for f in &ep.frames {
            obs.extend_from_slice(f);
        }
        let frames = self.encoders.encode_frames(tape, b, obs, n)?;
        let actions = self.encoders.embed_actions(tape, b, actions_in)?;
        let maps = if map_enabled {
            let mut grids = Vec::with_capacity(n * ep.maps[0].len());
            for m in &ep.maps {
                grids.extend_from_slice(m);
            }
            Some(self.encoders.encode_maps(tape, b, grids, n)?)
        } else {
            None
        };
        let encoded = self.fusion.apply_encodings(tape, b, per_token, frames, actions, maps)?;
        let layout = TokenLayout { m: ep.tokens.len(), n, with_map: map_enabled };
        let mask = build_causal_mask(layout);
        let fused = self.fusion.fuse(tape, b, encoded, &mask)?;
        let visual = self.fusion.slice_visual(tape, fused, layout.m, layout.n)?;
        let (action_logits, object_logits, goal_progress) = self.fusion.predict_heads(tape, b, visual)?;
        Ok(EpisodeForward { action_logits, object_logits, goal_progress, layout })
    }

    /// Supervised losses for one episode under teacher forcing. Expert
    /// transcripts contain no pad steps, so every position is live.
    pub fn episode_losses(
        &self,
        tape: &mut Tape<f32>,
        fwd: &EpisodeForward,
        ep: &Episode,
        aux_object: f32,
        aux_gp: f32,
    ) -> ModelResult<EpisodeLosses> {
        let n = ep.len();
        let pad_mask = vec![false; n];
        let action = action_loss(tape, fwd.action_logits, &ep.actions, &pad_mask)?;
        let object = object_loss(tape, fwd.object_logits, &ep.object_labels, &pad_mask)?;
        let gp_targets = goal_progress_targets(n)?;
        let goal_progress = goal_progress_loss(tape, fwd.goal_progress, &gp_targets, &pad_mask)?;
        let total = total_loss(tape, action, object, goal_progress, aux_object, aux_gp)?;
        Ok(EpisodeLosses { total, action, object, goal_progress })
    }
}

/// Action input stream for open-loop decoding: the predicted prefix, then
/// pad ids that the mask keeps invisible to the positions being read.
pub fn rollout_inputs(predicted: &[usize], n: usize) -> Vec<usize> {
    let mut stream = Vec::with_capacity(n);
    stream.extend_from_slice(&predicted[..predicted.len().min(n)]);
    stream.resize(n, PAD_ACTION);
    stream
}
