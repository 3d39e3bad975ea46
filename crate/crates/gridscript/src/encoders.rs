//! Modality encoders: instruction text, ego-centric frames, discrete
//! actions, and semantic maps, all ending in a shared embedding width `d`.
//!
//! These are small trainable stand-ins for large pretrained backbones; the
//! freeze/fine-tune distinction is expressed per parameter group by the
//! optimizer, not by the encoder code.

use crate::autodiff::{Tape, TapeResult, ValueId};
use crate::params::{Bindings, Init, ParamGroup, ParamId, ParamStore};

/// Embedding-space dimensions shared by every module downstream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub d: usize,
    pub vocab_size: usize,
    pub frame_feature_len: usize,
    pub map_channels: usize,
    pub map_extent: usize,
    /// 12 motor/interaction classes + stop + pad.
    pub num_actions: usize,
    /// 84 object classes + NoObject.
    pub num_objects: usize,
}

pub struct Encoders {
    pub cfg: EncoderConfig,
    text_embed: ParamId,
    text_w: ParamId,
    text_b: ParamId,
    frame_w1: ParamId,
    frame_b1: ParamId,
    frame_w2: ParamId,
    frame_b2: ParamId,
    pair_kernel: ParamId,
    pair_bias: ParamId,
    action_embed: ParamId,
    map_w: ParamId,
    map_b: ParamId,
}

/// Bias init limit. Nonzero so that an all-zero observation still produces
/// a non-degenerate (normalizable) encoding through the bias path.
const BIAS_LIMIT: f32 = 0.05;

impl Encoders {
    pub fn register(store: &mut ParamStore, cfg: EncoderConfig) -> Self {
        assert_eq!(cfg.num_actions, 14, "action space is 12 classes + stop + pad");
        assert_eq!(cfg.num_objects, 85, "object space is 84 classes + NoObject");
        let d = cfg.d;
        let map_in = cfg.map_channels * cfg.map_extent * cfg.map_extent;
        let add = |s: &mut ParamStore, name: &str, shape: &[usize], g, init| {
            s.add(name, shape, g, init).expect("encoder parameter names are unique")
        };
        Encoders {
            cfg,
            text_embed: add(store, "text.embed", &[cfg.vocab_size, d], ParamGroup::Text, Init::FanIn),
            text_w: add(store, "text.proj.w", &[d, d], ParamGroup::Text, Init::FanIn),
            text_b: add(store, "text.proj.b", &[1, d], ParamGroup::Text, Init::Uniform(BIAS_LIMIT)),
            frame_w1: add(store, "frame.l1.w", &[cfg.frame_feature_len, d], ParamGroup::Frame, Init::FanIn),
            frame_b1: add(store, "frame.l1.b", &[1, d], ParamGroup::Frame, Init::Uniform(BIAS_LIMIT)),
            frame_w2: add(store, "frame.l2.w", &[d, d], ParamGroup::Frame, Init::FanIn),
            frame_b2: add(store, "frame.l2.b", &[1, d], ParamGroup::Frame, Init::Uniform(BIAS_LIMIT)),
            pair_kernel: add(store, "pair.conv.w", &[2 * d, d], ParamGroup::Frame, Init::FanIn),
            pair_bias: add(store, "pair.conv.b", &[1, d], ParamGroup::Frame, Init::Uniform(BIAS_LIMIT)),
            action_embed: add(store, "action.embed", &[cfg.num_actions, d], ParamGroup::Action, Init::FanIn),
            map_w: add(store, "map.proj.w", &[map_in, d], ParamGroup::Map, Init::FanIn),
            map_b: add(store, "map.proj.b", &[1, d], ParamGroup::Map, Init::Uniform(BIAS_LIMIT)),
        }
    }

    /// Per-token encodings (`m × d`) plus the mean-pooled, L2-normalized
    /// sequence representation. Mean pooling makes the sequence rep
    /// invariant to token order.
    pub fn encode_text(
        &self,
        tape: &mut Tape<f32>,
        b: &Bindings,
        tokens: &[usize],
    ) -> TapeResult<(ValueId, ValueId)> {
        let embedded = tape.embed_lookup(b.value(self.text_embed), tokens)?;
        let projected = tape.matmul(embedded, b.value(self.text_w))?;
        let per_token = tape.add_row(projected, b.value(self.text_b))?;
        let mean = tape.mean_rows(per_token)?;
        let sequence_rep = tape.l2_normalize_rows(mean)?;
        Ok((per_token, sequence_rep))
    }

    /// Encode a batch of observations (`count × frame_feature_len`,
    /// row-major) to unit-norm rows (`count × d`).
    pub fn encode_frames(
        &self,
        tape: &mut Tape<f32>,
        b: &Bindings,
        obs: Vec<f32>,
        count: usize,
    ) -> TapeResult<ValueId> {
        let x = tape.constant(obs, &[count, self.cfg.frame_feature_len])?;
        let h = tape.matmul(x, b.value(self.frame_w1))?;
        let h = tape.add_row(h, b.value(self.frame_b1))?;
        let h = tape.gelu(h)?;
        let e = tape.matmul(h, b.value(self.frame_w2))?;
        let e = tape.add_row(e, b.value(self.frame_b2))?;
        tape.l2_normalize_rows(e)
    }

    /// Embedding-table rows for a sequence of action ids, L2-normalized.
    pub fn embed_actions(&self, tape: &mut Tape<f32>, b: &Bindings, ids: &[usize]) -> TapeResult<ValueId> {
        let rows = tape.embed_lookup(b.value(self.action_embed), ids)?;
        tape.l2_normalize_rows(rows)
    }

    /// Frame-pair fusion f(e_t, e_t+1): the two embeddings stacked as a
    /// length-2 temporal sequence, convolved with kernel width 2 (one
    /// output step, d channels), average-pooled over the singleton temporal
    /// axis, L2-normalized. Width 2 sees both frames jointly, so the result
    /// is order-aware.
    pub fn fuse_frame_pair(
        &self,
        tape: &mut Tape<f32>,
        b: &Bindings,
        e_t: ValueId,
        e_t1: ValueId,
    ) -> TapeResult<ValueId> {
        let stacked = tape.concat_rows(&[e_t, e_t1])?;
        let conv = tape.conv1d(stacked, b.value(self.pair_kernel), b.value(self.pair_bias), 2)?;
        let pooled = tape.mean_rows(conv)?;
        tape.l2_normalize_rows(pooled)
    }

    /// Batched form of [`Encoders::fuse_frame_pair`]: row i fuses
    /// `e_t[i]` with `e_t1[i]`. A width-2 convolution over a length-2
    /// sequence is exactly an affine map on the concatenated pair, so this
    /// shares the kernel and bias with the single-pair path.
    pub fn fuse_frame_pairs(
        &self,
        tape: &mut Tape<f32>,
        b: &Bindings,
        e_t: ValueId,
        e_t1: ValueId,
    ) -> TapeResult<ValueId> {
        let pairs = tape.concat_cols(&[e_t, e_t1])?;
        let conv = tape.matmul(pairs, b.value(self.pair_kernel))?;
        let with_bias = tape.add_row(conv, b.value(self.pair_bias))?;
        tape.l2_normalize_rows(with_bias)
    }

    /// Encode a batch of semantic-map grids (each flattened to
    /// `map_channels · extent²`): affine map then GELU. Map encodings feed
    /// the fusion stage only, so they are not normalized.
    pub fn encode_maps(
        &self,
        tape: &mut Tape<f32>,
        b: &Bindings,
        grids: Vec<f32>,
        count: usize,
    ) -> TapeResult<ValueId> {
        let map_in = self.cfg.map_channels * self.cfg.map_extent * self.cfg.map_extent;
        let x = tape.constant(grids, &[count, map_in])?;
        let h = tape.matmul(x, b.value(self.map_w))?;
        let h = tape.add_row(h, b.value(self.map_b))?;
        tape.gelu(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            d: 16,
            vocab_size: 30,
            frame_feature_len: 40,
            map_channels: 3,
            map_extent: 4,
            num_actions: 14,
            num_objects: 85,
        }
    }

    fn setup() -> (ParamStore, Encoders) {
        let mut store = ParamStore::new(42);
        let enc = Encoders::register(&mut store, small_cfg());
        (store, enc)
    }

    fn norm(v: &[f32]) -> f32 {
        v.iter().map(|x| x * x).sum::<f32>().sqrt()
    }

    #[test]
    fn repeated_token_sequence_rep_is_that_tokens_encoding() {
        let (store, enc) = setup();
        let mut tape = Tape::new();
        let b = store.bind(&mut tape, &[]).unwrap();
        let (_, rep) = enc.encode_text(&mut tape, &b, &[5, 5, 5]).unwrap();
        let (_, single) = enc.encode_text(&mut tape, &b, &[5]).unwrap();
        for (a, c) in tape.data(rep).iter().zip(tape.data(single)) {
            assert!((a - c).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_token_list_is_an_error() {
        let (store, enc) = setup();
        let mut tape = Tape::new();
        let b = store.bind(&mut tape, &[]).unwrap();
        assert!(enc.encode_text(&mut tape, &b, &[]).is_err());
    }

    #[test]
    fn out_of_vocab_token_reports_position() {
        let (store, enc) = setup();
        let mut tape = Tape::new();
        let b = store.bind(&mut tape, &[]).unwrap();
        let err = enc.encode_text(&mut tape, &b, &[1, 2, 30]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("position 2"), "unexpected error: {msg}");
    }

    #[test]
    fn sequence_rep_is_token_order_invariant() {
        let (store, enc) = setup();
        let mut tape = Tape::new();
        let b = store.bind(&mut tape, &[]).unwrap();
        let (_, rep_a) = enc.encode_text(&mut tape, &b, &[3, 7, 11, 2]).unwrap();
        let (_, rep_b) = enc.encode_text(&mut tape, &b, &[11, 2, 3, 7]).unwrap();
        for (x, y) in tape.data(rep_a).iter().zip(tape.data(rep_b)) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_observation_encodes_to_a_unit_vector() {
        let (store, enc) = setup();
        let mut tape = Tape::new();
        let b = store.bind(&mut tape, &[]).unwrap();
        let e = enc.encode_frames(&mut tape, &b, vec![0.0; 40], 1).unwrap();
        assert!((norm(tape.data(e)) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn single_feature_difference_changes_the_encoding() {
        let (store, enc) = setup();
        let mut tape = Tape::new();
        let b = store.bind(&mut tape, &[]).unwrap();
        let mut obs = vec![0.0; 80];
        obs[40 + 13] = 1.0;
        let e = enc.encode_frames(&mut tape, &b, obs, 2).unwrap();
        let d = tape.data(e);
        assert_ne!(&d[..16], &d[16..]);
    }

    #[test]
    fn action_rows_are_unit_norm_and_pairwise_distinct() {
        let (store, enc) = setup();
        let mut tape = Tape::new();
        let b = store.bind(&mut tape, &[]).unwrap();
        let ids: Vec<usize> = (0..14).collect();
        let rows = tape_rows(&mut tape, &b, &enc, &ids);
        for i in 0..14 {
            assert!((norm(&rows[i]) - 1.0).abs() < 1e-6);
            for j in (i + 1)..14 {
                assert_ne!(rows[i], rows[j], "rows {i} and {j} collide at init");
            }
        }
    }

    fn tape_rows(tape: &mut Tape<f32>, b: &Bindings, enc: &Encoders, ids: &[usize]) -> Vec<Vec<f32>> {
        let e = enc.embed_actions(tape, b, ids).unwrap();
        let d = enc.cfg.d;
        tape.data(e).chunks(d).map(|c| c.to_vec()).collect()
    }

    #[test]
    fn action_id_out_of_range_is_an_error() {
        let (store, enc) = setup();
        let mut tape = Tape::new();
        let b = store.bind(&mut tape, &[]).unwrap();
        assert!(enc.embed_actions(&mut tape, &b, &[14]).is_err());
    }

    #[test]
    fn pair_fusion_is_order_sensitive_and_unit_norm() {
        let (store, enc) = setup();
        let mut tape = Tape::new();
        let b = store.bind(&mut tape, &[]).unwrap();
        let mut obs = vec![0.0; 80];
        obs[2] = 1.0;
        obs[40 + 7] = 1.0;
        let e = enc.encode_frames(&mut tape, &b, obs, 2).unwrap();
        let u = tape.slice_rows(e, 0, 1).unwrap();
        let v = tape.slice_rows(e, 1, 1).unwrap();
        let uv = enc.fuse_frame_pair(&mut tape, &b, u, v).unwrap();
        let vu = enc.fuse_frame_pair(&mut tape, &b, v, u).unwrap();
        let vv = enc.fuse_frame_pair(&mut tape, &b, v, v).unwrap();
        assert!((norm(tape.data(uv)) - 1.0).abs() < 1e-6);
        assert_ne!(tape.data(uv), tape.data(vu));
        assert_ne!(tape.data(uv), tape.data(vv));
    }

    #[test]
    fn batched_pair_fusion_matches_single_path() {
        let (store, enc) = setup();
        let mut tape = Tape::new();
        let b = store.bind(&mut tape, &[]).unwrap();
        let mut obs = vec![0.0; 160];
        for (i, slot) in [3usize, 19, 44, 71].into_iter().enumerate() {
            obs[i * 40 % 160 + slot % 40] = 1.0;
        }
        let e = tape_frames(&mut tape, &b, &enc, obs, 4);
        let e_t = tape.slice_rows(e, 0, 2).unwrap();
        let e_t1 = tape.slice_rows(e, 2, 2).unwrap();
        let batch = enc.fuse_frame_pairs(&mut tape, &b, e_t, e_t1).unwrap();
        for i in 0..2 {
            let a = tape.slice_rows(e, i, 1).unwrap();
            let c = tape.slice_rows(e, i + 2, 1).unwrap();
            let single = enc.fuse_frame_pair(&mut tape, &b, a, c).unwrap();
            let got = &tape.data(batch)[i * 16..(i + 1) * 16];
            for (x, y) in got.iter().zip(tape.data(single)) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    fn tape_frames(tape: &mut Tape<f32>, b: &Bindings, enc: &Encoders, obs: Vec<f32>, n: usize) -> ValueId {
        enc.encode_frames(tape, b, obs, n).unwrap()
    }

    #[test]
    fn zero_map_is_gelu_of_bias_and_scaling_is_nonlinear() {
        let (store, enc) = setup();
        let mut tape = Tape::new();
        let b = store.bind(&mut tape, &[]).unwrap();
        let zero = enc.encode_maps(&mut tape, &b, vec![0.0; 48], 1).unwrap();
        let bias = store.by_name("map.proj.b").unwrap().data.clone();
        for (out, bv) in tape.data(zero).iter().zip(&bias) {
            let c0 = 0.7978845608028654f32;
            let g = 0.5 * bv * (1.0 + (c0 * (bv + 0.044715 * bv * bv * bv)).tanh());
            assert!((out - g).abs() < 1e-6);
        }
        let grid: Vec<f32> = (0..48).map(|i| ((i * 7 % 5) as f32) * 0.3 - 0.5).collect();
        let doubled: Vec<f32> = grid.iter().map(|v| v * 2.0).collect();
        let e1 = enc.encode_maps(&mut tape, &b, grid, 1).unwrap();
        let e2 = enc.encode_maps(&mut tape, &b, doubled, 1).unwrap();
        let twice: Vec<f32> = tape.data(e1).iter().map(|v| v * 2.0).collect();
        assert_ne!(tape.data(e2), twice.as_slice());
    }

    #[test]
    fn fixed_seed_encodings_are_bit_identical_across_runs() {
        let run = || {
            let (store, enc) = setup();
            let mut tape = Tape::new();
            let b = store.bind(&mut tape, &[]).unwrap();
            let (_, rep) = enc.encode_text(&mut tape, &b, &[1, 4, 9]).unwrap();
            tape.data(rep).to_vec()
        };
        assert_eq!(run(), run());
    }
}
