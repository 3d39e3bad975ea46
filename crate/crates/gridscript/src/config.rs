//! Run configuration: a TOML file, dotted-path overrides, validation, and
//! the identity hash that ties checkpoints to compatible configs.
//!
//! The hash covers only the [model] and [world] sections: those determine
//! tensor shapes and data semantics. [run] holds schedule knobs that may
//! change freely between runs of the same model lineage.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::exec::ExecMode;
use crate::params::ParamGroup;
use crate::world::episode::GenConfig;
use crate::world::WorldConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config does not parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("bad --set {entry:?}: {reason}")]
    BadOverride { entry: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pair,
    Triple,
    E2e,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pair => "pair",
            Stage::Triple => "triple",
            Stage::E2e => "e2e",
        }
    }

    pub fn default_batch(self) -> usize {
        match self {
            Stage::Pair => 64,
            Stage::Triple => 3,
            Stage::E2e => 4,
        }
    }

    /// Adam's update magnitude is set by its own moment estimates, so one rate
    /// serves every stage; plain SGD needs stage-sized steps.
    pub fn default_learning_rate(self, optimizer: OptimizerKind) -> f64 {
        match optimizer {
            OptimizerKind::Adam => 1e-3,
            OptimizerKind::Sgd => match self {
                Stage::Pair => 0.1,
                Stage::Triple => 0.1,
                Stage::E2e => 0.3,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub stage: Stage,
    pub steps: usize,
    /// None resolves to the stage default at use sites.
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub optimizer: OptimizerKind,
    pub freeze: Vec<String>,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub exec: String,
    pub data_dir: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 7,
            stage: Stage::E2e,
            steps: 300,
            batch_size: None,
            learning_rate: None,
            optimizer: OptimizerKind::Sgd,
            freeze: Vec::new(),
            eval_every: 50,
            eval_episodes: 64,
            exec: "parallel".into(),
            data_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d: usize,
    pub fusion_layers: usize,
    pub fusion_heads: usize,
    pub triple_alpha: f64,
    pub aux_object_weight: f64,
    pub aux_gp_weight: f64,
    /// Frame/action prefix length cap for sequence-level pretraining.
    pub seq_cap: usize,
    pub map_enabled: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            d: 64,
            fusion_layers: 2,
            fusion_heads: 4,
            triple_alpha: 0.8,
            aux_object_weight: 0.1,
            aux_gp_weight: 0.1,
            seq_cap: 21,
            map_enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSection {
    pub extent: usize,
    pub object_count: usize,
    pub map_channels: usize,
    pub num_layouts: u64,
    pub max_subgoals: usize,
    pub max_len: usize,
}

impl Default for WorldSection {
    fn default() -> Self {
        WorldSection {
            extent: 8,
            object_count: 10,
            map_channels: 13,
            num_layouts: 8,
            max_subgoals: 2,
            max_len: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub run: RunSection,
    pub model: ModelSection,
    pub world: WorldSection,
}

impl Config {
    /// Loads the file (or defaults when None), applies `--set` overrides in
    /// order, then validates.
    pub fn load(path: Option<&Path>, sets: &[String]) -> Result<Config, ConfigError> {
        let mut table: toml::Table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|source| ConfigError::Io { path: p.to_path_buf(), source })?;
                text.parse()?
            }
            None => toml::Table::new(),
        };
        for entry in sets {
            apply_set(&mut table, entry)?;
        }
        let config: Config = table.try_into()?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        let m = &self.model;
        if m.d == 0 || m.fusion_heads == 0 || m.d % m.fusion_heads != 0 {
            return fail(format!("model.d ({}) must be a positive multiple of model.fusion_heads ({})", m.d, m.fusion_heads));
        }
        if !(0.0..=1.0).contains(&m.triple_alpha) {
            return fail(format!("model.triple_alpha ({}) must lie in [0, 1]", m.triple_alpha));
        }
        if m.seq_cap < 2 {
            return fail("model.seq_cap must be at least 2".into());
        }
        let w = &self.world;
        if w.extent < 2 || w.object_count >= w.extent * w.extent {
            return fail("world.object_count must leave empty cells".into());
        }
        if w.map_channels < 2 {
            return fail("world.map_channels needs an observed channel plus class channels".into());
        }
        if w.num_layouts == 0 || w.max_subgoals == 0 || w.max_len < 4 {
            return fail("world.num_layouts, max_subgoals, and max_len must be positive (max_len >= 4)".into());
        }
        let r = &self.run;
        if r.steps == 0 || r.eval_every == 0 || r.eval_episodes == 0 {
            return fail("run.steps, run.eval_every, and run.eval_episodes must be positive".into());
        }
        if r.batch_size == Some(0) {
            return fail("run.batch_size must be positive".into());
        }
        if let Some(lr) = r.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return fail(format!("run.learning_rate ({lr}) must be positive and finite"));
            }
        }
        if ExecMode::parse(&r.exec).is_none() {
            return fail(format!("run.exec ({}) must be sequential or parallel", r.exec));
        }
        for name in &r.freeze {
            if ParamGroup::parse(name).is_none() {
                return fail(format!("run.freeze entry {name:?} is not a parameter group"));
            }
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.run.batch_size.unwrap_or_else(|| self.run.stage.default_batch())
    }

    pub fn learning_rate(&self) -> f64 {
        self.run
            .learning_rate
            .unwrap_or_else(|| self.run.stage.default_learning_rate(self.run.optimizer))
    }

    pub fn exec_mode(&self) -> ExecMode {
        ExecMode::parse(&self.run.exec).expect("validated")
    }

    pub fn freeze_groups(&self) -> Vec<ParamGroup> {
        self.run.freeze.iter().map(|n| ParamGroup::parse(n).expect("validated")).collect()
    }

    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            world: WorldConfig { extent: self.world.extent, object_count: self.world.object_count },
            map_channels: self.world.map_channels,
            max_subgoals: self.world.max_subgoals,
            max_len: self.world.max_len,
        }
    }

    /// TOML dump with stage-dependent options resolved to concrete values.
    pub fn resolved_toml(&self) -> String {
        let mut resolved = self.clone();
        resolved.run.batch_size = Some(self.batch_size());
        resolved.run.learning_rate = Some(self.learning_rate());
        toml::to_string_pretty(&resolved).expect("config serializes")
    }

    /// Hex sha256 over everything that determines parameter-store shape:
    /// the architecture widths and the [world] section (input sizes).
    /// Loss weights and sequence caps are run knobs, not identity, so a
    /// checkpoint can warm-start a run that changes them.
    pub fn identity_hash(&self) -> String {
        #[derive(Serialize)]
        struct Identity<'a> {
            d: usize,
            fusion_layers: usize,
            fusion_heads: usize,
            world: &'a WorldSection,
        }
        let id = Identity {
            d: self.model.d,
            fusion_layers: self.model.fusion_layers,
            fusion_heads: self.model.fusion_heads,
            world: &self.world,
        };
        let text = toml::to_string(&id).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            write!(hex, "{byte:02x}").expect("hex");
        }
        hex
    }
}

/// Applies one `section.key=value` override. The value parses as any TOML
/// literal (numbers, bools, arrays, quoted strings); anything that does not
/// parse is taken as a bare string.
fn apply_set(table: &mut toml::Table, entry: &str) -> Result<(), ConfigError> {
    let bad = |reason: &str| ConfigError::BadOverride { entry: entry.into(), reason: reason.into() };
    let (path, raw) = entry.split_once('=').ok_or_else(|| bad("expected key=value"))?;
    let (path, raw) = (path.trim(), raw.trim());
    if path.is_empty() {
        return Err(bad("empty key path"));
    }
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("just inserted"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let segments: Vec<&str> = path.split('.').collect();
    let mut cursor = table;
    for seg in &segments[..segments.len() - 1] {
        cursor = cursor
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| bad("path crosses a non-table value"))?;
    }
    cursor.insert(segments[segments.len() - 1].to_string(), value);
    Ok(())
}
