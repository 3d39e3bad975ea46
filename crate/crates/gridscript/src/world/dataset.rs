//! Dataset files: one JSON episode per line, sparse where it counts.
//!
//! Frames and maps are binary, so records store set-bit indices (full
//! per-step for frames, newly-set deltas for the monotone maps). Every
//! record carries the schema version; readers reject anything they cannot
//! prove well-formed, naming the line and byte offset.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::episode::{generate_episode, mix_seeds, Episode, GenConfig};
use super::vocab::{Vocab, NUM_ACTIONS, NUM_OBJECT_CLASSES};
use crate::exec::{map_items, ExecMode};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line} (byte offset {offset}): invalid JSON")]
    Json {
        path: PathBuf,
        line: usize,
        offset: u64,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path} line {line} (byte offset {offset}): schema version {got}, this build reads {want}")]
    Schema { path: PathBuf, line: usize, offset: u64, got: u32, want: u32 },
    #[error("{path} line {line} (byte offset {offset}): {reason}")]
    Malformed { path: PathBuf, line: usize, offset: u64, reason: String },
}

#[derive(Serialize, Deserialize)]
struct Record {
    schema: u32,
    id: String,
    layout_seed: u64,
    episode_seed: u64,
    instruction: String,
    tokens: Vec<usize>,
    actions: Vec<usize>,
    objects: Vec<usize>,
    frame_len: usize,
    /// Per step: sorted indices of the bits set in that frame.
    frames: Vec<Vec<u32>>,
    /// [channels, extent, extent].
    map_shape: [usize; 3],
    /// Per step: indices newly set since the previous step's map.
    map_deltas: Vec<Vec<u32>>,
}

fn sparse(dense: &[f32]) -> Vec<u32> {
    dense
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(i, _)| i as u32)
        .collect()
}

fn to_record(ep: &Episode) -> Record {
    let frame_len = ep.frames.first().map_or(0, Vec::len);
    let map_total = ep.maps.first().map_or(0, Vec::len);
    let record_map_shape = infer_map_shape(map_total);
    let mut prev: Vec<f32> = vec![0.0; map_total];
    let mut map_deltas = Vec::with_capacity(ep.maps.len());
    for m in &ep.maps {
        let delta: Vec<u32> = m
            .iter()
            .zip(&prev)
            .enumerate()
            .filter(|(_, (&now, &before))| now != 0.0 && before == 0.0)
            .map(|(i, _)| i as u32)
            .collect();
        map_deltas.push(delta);
        prev.copy_from_slice(m);
    }
    Record {
        schema: SCHEMA_VERSION,
        id: ep.id.clone(),
        layout_seed: ep.layout_seed,
        episode_seed: ep.episode_seed,
        instruction: ep.instruction.clone(),
        tokens: ep.tokens.clone(),
        actions: ep.actions.clone(),
        objects: ep.object_labels.clone(),
        frame_len,
        frames: ep.frames.iter().map(|f| sparse(f)).collect(),
        map_shape: record_map_shape,
        map_deltas,
    }
}

/// Maps are channels x 8 x 8 everywhere in this crate.
fn infer_map_shape(total: usize) -> [usize; 3] {
    let extent = super::GRID_EXTENT;
    [total / (extent * extent), extent, extent]
}

pub fn write_dataset(path: &Path, episodes: &[Episode]) -> Result<(), DatasetError> {
    let io_err = |source| DatasetError::Io { path: path.to_path_buf(), source };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    for ep in episodes {
        let line = serde_json::to_string(&to_record(ep)).expect("records serialize");
        writeln!(w, "{line}").map_err(|e| DatasetError::Io { path: path.to_path_buf(), source: e })?;
    }
    w.flush().map_err(|e| DatasetError::Io { path: path.to_path_buf(), source: e })
}

pub fn read_dataset(path: &Path) -> Result<Vec<Episode>, DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    let reader = BufReader::new(file);
    let mut episodes = Vec::new();
    let mut offset = 0u64;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
        let line_no = idx + 1;
        let this_offset = offset;
        offset += line.len() as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|source| DatasetError::Json {
            path: path.to_path_buf(),
            line: line_no,
            offset: this_offset,
            source,
        })?;
        episodes.push(from_record(record, path, line_no, this_offset)?);
    }
    Ok(episodes)
}

fn from_record(r: Record, path: &Path, line: usize, offset: u64) -> Result<Episode, DatasetError> {
    let fail = |reason: String| DatasetError::Malformed {
        path: path.to_path_buf(),
        line,
        offset,
        reason,
    };
    if r.schema != SCHEMA_VERSION {
        return Err(DatasetError::Schema {
            path: path.to_path_buf(),
            line,
            offset,
            got: r.schema,
            want: SCHEMA_VERSION,
        });
    }
    let n = r.actions.len();
    if n == 0 {
        return Err(fail("empty transcript".into()));
    }
    for (what, len) in [("objects", r.objects.len()), ("frames", r.frames.len()), ("map_deltas", r.map_deltas.len())] {
        if len != n {
            return Err(fail(format!("{what} has {len} steps but actions has {n}")));
        }
    }
    if let Some(&bad) = r.actions.iter().find(|&&a| a >= NUM_ACTIONS) {
        return Err(fail(format!("action id {bad} out of range")));
    }
    if let Some(&bad) = r.objects.iter().find(|&&c| c >= NUM_OBJECT_CLASSES) {
        return Err(fail(format!("object class {bad} out of range")));
    }
    let mut frames = Vec::with_capacity(n);
    for (t, idxs) in r.frames.iter().enumerate() {
        let mut dense = vec![0.0f32; r.frame_len];
        for &i in idxs {
            let i = i as usize;
            if i >= r.frame_len {
                return Err(fail(format!("frame {t} index {i} out of range {}", r.frame_len)));
            }
            dense[i] = 1.0;
        }
        frames.push(dense);
    }
    let map_total = r.map_shape.iter().product::<usize>();
    let mut maps = Vec::with_capacity(n);
    let mut map = vec![0.0f32; map_total];
    for (t, delta) in r.map_deltas.iter().enumerate() {
        for &i in delta {
            let i = i as usize;
            if i >= map_total {
                return Err(fail(format!("map delta {t} index {i} out of range {map_total}")));
            }
            map[i] = 1.0;
        }
        maps.push(map.clone());
    }
    Ok(Episode {
        id: r.id,
        layout_seed: r.layout_seed,
        episode_seed: r.episode_seed,
        instruction: r.instruction,
        tokens: r.tokens,
        actions: r.actions,
        object_labels: r.objects,
        frames,
        maps,
    })
}

// ── splits ──

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    ValidSeen,
    ValidUnseen,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::ValidSeen, Split::ValidUnseen];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::ValidSeen => "valid_seen",
            Split::ValidUnseen => "valid_unseen",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|sp| sp.as_str() == s)
    }

    /// valid_seen reuses the training layouts with fresh starts and tasks;
    /// valid_unseen draws from a disjoint layout block.
    fn blocks(self) -> (u64, u64) {
        match self {
            Split::Train => (0, 0),
            Split::ValidSeen => (0, 1_000_000),
            Split::ValidUnseen => (1_000_000, 2_000_000),
        }
    }
}

const LAYOUT_TAG: u64 = 0x4c41_594f_5554_0000;
const EPISODE_TAG: u64 = 0x4550_4953_4f44_0000;

pub fn layout_seed_for(base_seed: u64, split: Split, index: u64, num_layouts: u64) -> u64 {
    let (layout_block, _) = split.blocks();
    mix_seeds(base_seed, LAYOUT_TAG ^ (layout_block + index % num_layouts))
}

pub fn episode_seed_for(base_seed: u64, split: Split, index: u64) -> u64 {
    let (_, episode_block) = split.blocks();
    mix_seeds(base_seed, EPISODE_TAG ^ (episode_block + index))
}

/// Generates `count` episodes for a split. Unsolvable seeds are skipped,
/// so the result is a deterministic function of the arguments in either
/// execution mode.
pub fn generate_split(
    cfg: &GenConfig,
    vocab: &Vocab,
    base_seed: u64,
    split: Split,
    count: usize,
    num_layouts: u64,
    mode: ExecMode,
) -> Vec<Episode> {
    let mut episodes: Vec<Episode> = Vec::with_capacity(count);
    let mut next_index = 0u64;
    while episodes.len() < count {
        let need = count - episodes.len();
        let wave_len = (need + need / 4 + 1) as u64;
        let wave: Vec<u64> = (next_index..next_index + wave_len).collect();
        next_index += wave_len;
        let generated = map_items(mode, wave, |i| {
            let layout_seed = layout_seed_for(base_seed, split, i, num_layouts);
            let episode_seed = episode_seed_for(base_seed, split, i);
            generate_episode(cfg, vocab, layout_seed, episode_seed).ok()
        });
        episodes.extend(generated.into_iter().flatten());
    }
    episodes.truncate(count);
    episodes
}
