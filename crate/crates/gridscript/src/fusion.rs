//! Causal multimodal fusion: modal-type + sinusoidal position encodings,
//! masked multi-headed attention layers, visual-token slicing, and the
//! three output heads.
//!
//! Token layout is `[L; I; A; M]`: m language tokens, then n frames, n
//! actions, n maps. With maps disabled the M block is dropped entirely and
//! the layout is `[L; I; A]`.

use std::sync::Arc;

use thiserror::Error;

use crate::autodiff::{Tape, TapeError, TapeResult, ValueId};
use crate::params::{Bindings, Init, ParamGroup, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    pub d: usize,
    /// Encoder depth: applications of LN(MA(F)) + F.
    pub layers: usize,
    pub heads: usize,
    pub num_actions: usize,
    pub num_objects: usize,
}

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("temporal blocks disagree in length: frames {frames}, actions {actions}, maps {maps:?}")]
    TemporalLengthMismatch { frames: usize, actions: usize, maps: Option<usize> },
    #[error("need at least one step, got n = 0")]
    EmptySequence,
    #[error(transparent)]
    Tape(#[from] TapeError),
}

pub type FusionResult<T> = Result<T, FusionError>;

/// Modality order in the token sequence and the modal-type table.
const MODAL_L: usize = 0;
const MODAL_I: usize = 1;
const MODAL_A: usize = 2;
const MODAL_M: usize = 3;

struct LayerIds {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln_g: ParamId,
    ln_b: ParamId,
}

pub struct Fusion {
    pub cfg: FusionConfig,
    modal_type: ParamId,
    layers: Vec<LayerIds>,
    head_action_w: ParamId,
    head_action_b: ParamId,
    head_object_w: ParamId,
    head_object_b: ParamId,
    head_gp_w: ParamId,
    head_gp_b: ParamId,
}

impl Fusion {
    pub fn register(store: &mut ParamStore, cfg: FusionConfig) -> Self {
        assert!(cfg.d % cfg.heads.max(1) == 0, "d must divide evenly into heads");
        let d = cfg.d;
        let add = |s: &mut ParamStore, name: String, shape: &[usize], g, init| {
            s.add(&name, shape, g, init).expect("fusion parameter names are unique")
        };
        let layers = (0..cfg.layers)
            .map(|l| LayerIds {
                wq: add(store, format!("fusion.l{l}.wq"), &[d, d], ParamGroup::Fusion, Init::FanIn),
                bq: add(store, format!("fusion.l{l}.bq"), &[1, d], ParamGroup::Fusion, Init::Const(0.0)),
                wk: add(store, format!("fusion.l{l}.wk"), &[d, d], ParamGroup::Fusion, Init::FanIn),
                bk: add(store, format!("fusion.l{l}.bk"), &[1, d], ParamGroup::Fusion, Init::Const(0.0)),
                wv: add(store, format!("fusion.l{l}.wv"), &[d, d], ParamGroup::Fusion, Init::FanIn),
                bv: add(store, format!("fusion.l{l}.bv"), &[1, d], ParamGroup::Fusion, Init::Const(0.0)),
                wo: add(store, format!("fusion.l{l}.wo"), &[d, d], ParamGroup::Fusion, Init::FanIn),
                bo: add(store, format!("fusion.l{l}.bo"), &[1, d], ParamGroup::Fusion, Init::Const(0.0)),
                ln_g: add(store, format!("fusion.l{l}.ln.g"), &[1, d], ParamGroup::Fusion, Init::Const(1.0)),
                ln_b: add(store, format!("fusion.l{l}.ln.b"), &[1, d], ParamGroup::Fusion, Init::Const(0.0)),
            })
            .collect();
        Fusion {
            modal_type: add(store, "fusion.modal_type".into(), &[4, d], ParamGroup::Fusion, Init::FanIn),
            layers,
            head_action_w: add(store, "heads.action.w".into(), &[d, cfg.num_actions], ParamGroup::Heads, Init::FanIn),
            head_action_b: add(store, "heads.action.b".into(), &[1, cfg.num_actions], ParamGroup::Heads, Init::Const(0.0)),
            head_object_w: add(store, "heads.object.w".into(), &[d, cfg.num_objects], ParamGroup::Heads, Init::FanIn),
            head_object_b: add(store, "heads.object.b".into(), &[1, cfg.num_objects], ParamGroup::Heads, Init::Const(0.0)),
            head_gp_w: add(store, "heads.gp.w".into(), &[d, 1], ParamGroup::Heads, Init::FanIn),
            head_gp_b: add(store, "heads.gp.b".into(), &[1, 1], ParamGroup::Heads, Init::Const(0.0)),
            cfg,
        }
    }

    /// Add modal-type and sinusoidal position encodings to each block and
    /// concatenate `[L; I; A; M]` (M omitted when `f_m` is `None`).
    /// Language positions run 0..m−1; each temporal block restarts at 0.
    pub fn apply_encodings(
        &self,
        tape: &mut Tape<f32>,
        b: &Bindings,
        f_l: ValueId,
        f_i: ValueId,
        f_a: ValueId,
        f_m: Option<ValueId>,
    ) -> FusionResult<ValueId> {
        let n = tape.shape(f_i)[0];
        let n_a = tape.shape(f_a)[0];
        let n_m = f_m.map(|m| tape.shape(m)[0]);
        if n_a != n || n_m.is_some_and(|nm| nm != n) {
            return Err(FusionError::TemporalLengthMismatch { frames: n, actions: n_a, maps: n_m });
        }
        if n == 0 {
            return Err(FusionError::EmptySequence);
        }
        let m = tape.shape(f_l)[0];
        let d = self.cfg.d;
        let types = b.value(self.modal_type);

        let encode_block = |tape: &mut Tape<f32>, block: ValueId, modal: usize, count: usize| -> TapeResult<ValueId> {
            let type_row = tape.slice_rows(types, modal, 1)?;
            let typed = tape.add_row(block, type_row)?;
            let pos = tape.constant(sinusoidal_positions(count, d), &[count, d])?;
            tape.add(typed, pos)
        };

        let l = encode_block(tape, f_l, MODAL_L, m)?;
        let i = encode_block(tape, f_i, MODAL_I, n)?;
        let a = encode_block(tape, f_a, MODAL_A, n)?;
        let mut parts = vec![l, i, a];
        if let Some(fm) = f_m {
            parts.push(encode_block(tape, fm, MODAL_M, n)?);
        }
        Ok(tape.concat_rows(&parts)?)
    }

    /// One forward pass through the `layers`-deep encoder:
    /// `F_l = LN(MA(F_{l−1})) + F_{l−1}`. Zero layers is the identity.
    pub fn fuse(
        &self,
        tape: &mut Tape<f32>,
        b: &Bindings,
        encoded: ValueId,
        mask: &Arc<Vec<bool>>,
    ) -> TapeResult<ValueId> {
        let t = tape.shape(encoded)[0];
        assert_eq!(mask.len(), t * t, "mask size must match token count");
        let mut f = encoded;
        for layer in &self.layers {
            let attended = self.attention(tape, b, layer, f, mask)?;
            let normed = tape.layer_norm_rows(attended, b.value(layer.ln_g), b.value(layer.ln_b))?;
            f = tape.add(normed, f)?;
        }
        Ok(f)
    }

    fn attention(
        &self,
        tape: &mut Tape<f32>,
        b: &Bindings,
        layer: &LayerIds,
        x: ValueId,
        mask: &Arc<Vec<bool>>,
    ) -> TapeResult<ValueId> {
        let heads = self.cfg.heads;
        let dh = self.cfg.d / heads;
        let q = tape.matmul(x, b.value(layer.wq))?;
        let q = tape.add_row(q, b.value(layer.bq))?;
        let k = tape.matmul(x, b.value(layer.wk))?;
        let k = tape.add_row(k, b.value(layer.bk))?;
        let v = tape.matmul(x, b.value(layer.wv))?;
        let v = tape.add_row(v, b.value(layer.bv))?;
        let scale = 1.0 / (dh as f32).sqrt();
        let mut head_outputs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let kht = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kht)?;
            let scores = tape.scale(scores, scale)?;
            let probs = tape.masked_softmax_rows(scores, mask.clone())?;
            head_outputs.push(tape.matmul(probs, vh)?);
        }
        let concat = tape.concat_cols(&head_outputs)?;
        let out = tape.matmul(concat, b.value(layer.wo))?;
        tape.add_row(out, b.value(layer.bo))
    }

    /// Rows `[m, m+n)`: the fused visual tokens feeding the heads.
    pub fn slice_visual(&self, tape: &mut Tape<f32>, fused: ValueId, m: usize, n: usize) -> TapeResult<ValueId> {
        tape.slice_rows(fused, m, n)
    }

    /// Row-wise affine heads. Goal progress is squashed through a logistic
    /// so predictions live in (0, 1) like their targets.
    pub fn predict_heads(
        &self,
        tape: &mut Tape<f32>,
        b: &Bindings,
        visual: ValueId,
    ) -> TapeResult<(ValueId, ValueId, ValueId)> {
        let act = tape.matmul(visual, b.value(self.head_action_w))?;
        let act = tape.add_row(act, b.value(self.head_action_b))?;
        let obj = tape.matmul(visual, b.value(self.head_object_w))?;
        let obj = tape.add_row(obj, b.value(self.head_object_b))?;
        let gp = tape.matmul(visual, b.value(self.head_gp_w))?;
        let gp = tape.add_row(gp, b.value(self.head_gp_b))?;
        let gp = tape.sigmoid(gp)?;
        Ok((act, obj, gp))
    }
}

/// Standard sinusoidal table: even dims sin(pos / 10000^(i/d)), odd dims
/// cos of the same argument. Position 0 is [0, 1, 0, 1, …].
pub fn sinusoidal_positions(count: usize, d: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; count * d];
    for pos in 0..count {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            out[pos * d + i] = if i % 2 == 0 { angle.sin() as f32 } else { angle.cos() as f32 };
        }
    }
    out
}

/// Token index ranges for the `[L; I; A; M]` layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenLayout {
    pub m: usize,
    pub n: usize,
    pub with_map: bool,
}

impl TokenLayout {
    pub fn total(&self) -> usize {
        self.m + self.n * if self.with_map { 3 } else { 2 }
    }

    pub fn frame(&self, t: usize) -> usize {
        self.m + t
    }

    pub fn action(&self, t: usize) -> usize {
        self.m + self.n + t
    }

    pub fn map(&self, t: usize) -> usize {
        assert!(self.with_map);
        self.m + 2 * self.n + t
    }

    /// Human-readable token label, for the mask dump.
    pub fn label(&self, idx: usize) -> String {
        if idx < self.m {
            format!("L{idx}")
        } else if idx < self.m + self.n {
            format!("I{}", idx - self.m)
        } else if idx < self.m + 2 * self.n {
            format!("A{}", idx - self.m - self.n)
        } else {
            format!("M{}", idx - self.m - 2 * self.n)
        }
    }
}

/// Attention rules: language attends only language; a temporal token at
/// step t attends all language, frames and maps at steps ≤ t, and actions
/// at steps strictly before t. The strict bound keeps the action being
/// predicted at step t invisible to its own visual token.
pub fn build_causal_mask(layout: TokenLayout) -> Arc<Vec<bool>> {
    let (m, n) = (layout.m, layout.n);
    let t_total = layout.total();
    let mut allow = vec![false; t_total * t_total];

    // Step index of each temporal token; None for language.
    let step_of = |idx: usize| -> Option<usize> {
        if idx < m {
            None
        } else {
            Some((idx - m) % n)
        }
    };
    let is_action = |idx: usize| idx >= m + n && idx < m + 2 * n;

    for row in 0..t_total {
        match step_of(row) {
            None => {
                for col in 0..m {
                    allow[row * t_total + col] = true;
                }
            }
            Some(t) => {
                for col in 0..t_total {
                    let ok = match step_of(col) {
                        None => true,
                        Some(s) => {
                            if is_action(col) {
                                s < t
                            } else {
                                s <= t
                            }
                        }
                    };
                    allow[row * t_total + col] = ok;
                }
            }
        }
    }
    Arc::new(allow)
}

/// Text rendering of the mask for auditing: one row per token, `1` where
/// attention is allowed, `.` where blocked.
pub fn mask_to_text(mask: &[bool], layout: TokenLayout) -> String {
    let t = layout.total();
    assert_eq!(mask.len(), t * t);
    let labels: Vec<String> = (0..t).map(|i| layout.label(i)).collect();
    let width = labels.iter().map(|l| l.len()).max().unwrap_or(2) + 1;
    let mut out = String::new();
    out.push_str(&" ".repeat(width));
    for l in &labels {
        out.push_str(&format!("{l:>width$}"));
    }
    out.push('\n');
    for (i, l) in labels.iter().enumerate() {
        out.push_str(&format!("{l:>width$}"));
        for j in 0..t {
            let c = if mask[i * t + j] { "1" } else { "." };
            out.push_str(&format!("{c:>width$}"));
        }
        out.push('\n');
    }
    out
}
