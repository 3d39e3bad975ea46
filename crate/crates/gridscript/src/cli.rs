//! Command-line front end. Every failure path returns an error whose
//! Display is a single line; `main` turns that into a nonzero exit.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{Config, Stage};
use crate::fusion::{build_causal_mask, mask_to_text, TokenLayout};
use crate::harness::csv::{write_rows, MetricsRow};
use crate::harness::eval::{eval_rollout, eval_teacher_forced};
use crate::harness::gradsuite::run_gradient_suite;
use crate::harness::train::{run_map_ablation, run_training};
use crate::model::Model;
use crate::world::dataset::{generate_split, read_dataset, write_dataset, Split};
use crate::world::episode::Episode;
use crate::world::vocab::Vocab;

/// Environment variable naming the default episode-file directory.
pub const DATA_DIR_ENV: &str = "GRIDSCRIPT_DATA_DIR";

#[derive(Parser)]
#[command(name = "gridscript", version, about = "Multimodal action-transcript model on a synthetic gridworld")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file; built-in defaults apply when omitted.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set run.steps=200. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Episode-file directory. Falls back to run.data_dir, then
    /// $GRIDSCRIPT_DATA_DIR, then ./data.
    #[arg(long, value_name = "DIR")]
    data_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<Config> {
        Ok(Config::load(self.config.as_deref(), &self.sets)?)
    }

    fn data_dir(&self, cfg: &Config) -> PathBuf {
        if let Some(dir) = &self.data_dir {
            return dir.clone();
        }
        if let Some(dir) = &cfg.run.data_dir {
            return PathBuf::from(dir);
        }
        match std::env::var(DATA_DIR_ENV) {
            Ok(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => PathBuf::from("data"),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate dataset splits as line-delimited episode files.
    Gen {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Episodes per split (default: 256 train, 64 per validation split).
        #[arg(long)]
        count: Option<usize>,
        /// Split to generate: train, valid_seen, valid_unseen, or all.
        #[arg(long, default_value = "all")]
        split: String,
        /// Base seed; split-specific seed blocks are derived from it.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Contrastive pretraining; run.stage must be pair or triple.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Supervised training of the fusion model (stage e2e).
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Train with and without the map stream and report both.
        #[arg(long)]
        map_ablation: bool,
    },
    /// Teacher-forced evaluation of a checkpoint on each split file.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint to evaluate.
        #[arg(long, value_name = "FILE")]
        ckpt: PathBuf,
        /// Directory for metrics.csv and resolved.toml.
        #[arg(long, default_value = "out", value_name = "DIR")]
        out_dir: PathBuf,
    },
    /// Open-loop rollout evaluation: predicted actions are fed back,
    /// frames and maps replayed from the recorded trajectory.
    Rollout {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_name = "FILE")]
        ckpt: PathBuf,
        #[arg(long, default_value = "out", value_name = "DIR")]
        out_dir: PathBuf,
    },
    /// Print the fusion attention mask for a given token layout.
    InspectMask {
        /// Instruction token count.
        #[arg(long)]
        m: usize,
        /// Timestep count.
        #[arg(long)]
        n: usize,
        /// Drop the map-token stream from the layout.
        #[arg(long)]
        no_map: bool,
    },
    /// Run the finite-difference gradient suite over every op and loss.
    GradCheck,
}

#[derive(Args)]
struct RunArgs {
    /// Directory for metrics.csv, resolved.toml, and model.ckpt.
    #[arg(long, default_value = "out", value_name = "DIR")]
    out_dir: PathBuf,
    /// Warm-start parameters from a checkpoint (fresh step count).
    #[arg(long, value_name = "FILE")]
    init: Option<PathBuf>,
    /// Resume a run: restores parameters, optimizer state, and step.
    #[arg(long, value_name = "FILE", conflicts_with = "init")]
    resume: Option<PathBuf>,
}

pub fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Gen { cfg, count, split, seed } => cmd_gen(&cfg, count, &split, seed),
        Command::Pretrain { cfg, run } => cmd_train(&cfg, &run, false),
        Command::Train { cfg, run, map_ablation } => {
            if map_ablation {
                cmd_ablation(&cfg, &run)
            } else {
                cmd_train(&cfg, &run, true)
            }
        }
        Command::Eval { cfg, ckpt, out_dir } => cmd_eval(&cfg, &ckpt, &out_dir, false),
        Command::Rollout { cfg, ckpt, out_dir } => cmd_eval(&cfg, &ckpt, &out_dir, true),
        Command::InspectMask { m, n, no_map } => cmd_inspect_mask(m, n, !no_map),
        Command::GradCheck => cmd_grad_check(),
    }
}

// ── shared plumbing ──

fn split_path(data_dir: &Path, split: Split) -> PathBuf {
    data_dir.join(format!("{}.jsonl", split.as_str()))
}

fn load_split(data_dir: &Path, split: Split) -> Result<Vec<Episode>> {
    let path = split_path(data_dir, split);
    read_dataset(&path).with_context(|| format!("reading {} (run `gen` first?)", path.display()))
}

/// Validation splits whose files exist, capped to run.eval_episodes.
fn load_eval_splits(data_dir: &Path, cfg: &Config) -> Result<Vec<(Split, Vec<Episode>)>> {
    let mut evals = Vec::new();
    for split in [Split::ValidSeen, Split::ValidUnseen] {
        if split_path(data_dir, split).exists() {
            let mut episodes = load_split(data_dir, split)?;
            episodes.truncate(cfg.run.eval_episodes);
            evals.push((split, episodes));
        }
    }
    Ok(evals)
}

fn write_run_dir(out_dir: &Path, cfg: &Config, rows: &[MetricsRow], ckpt: Option<&Checkpoint>) -> Result<()> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    std::fs::write(out_dir.join("resolved.toml"), cfg.resolved_toml())
        .with_context(|| format!("writing {}", out_dir.join("resolved.toml").display()))?;
    write_rows(&out_dir.join("metrics.csv"), rows)?;
    if let Some(ckpt) = ckpt {
        checkpoint::save(&out_dir.join("model.ckpt"), ckpt)?;
    }
    Ok(())
}

fn load_model(cfg: &Config, path: &Path) -> Result<(Model, Checkpoint)> {
    let ckpt = checkpoint::load(path)?;
    ckpt.verify_hash(&cfg.identity_hash())?;
    let mut model = Model::build(cfg, Vocab::build().size());
    ckpt.install(&mut model.store)?;
    Ok((model, ckpt))
}

// ── subcommands ──

fn cmd_gen(args: &ConfigArgs, count: Option<usize>, split: &str, seed: Option<u64>) -> Result<()> {
    let mut cfg = args.resolve()?;
    if let Some(seed) = seed {
        cfg.run.seed = seed;
    }
    let splits: Vec<Split> = if split == "all" {
        vec![Split::Train, Split::ValidSeen, Split::ValidUnseen]
    } else {
        match Split::parse(split) {
            Some(s) => vec![s],
            None => bail!("unknown split {split:?}; expected train, valid_seen, valid_unseen, or all"),
        }
    };
    let data_dir = args.data_dir(&cfg);
    std::fs::create_dir_all(&data_dir)
        .with_context(|| format!("creating {}", data_dir.display()))?;
    let gen = cfg.gen_config();
    let vocab = Vocab::build();
    for s in splits {
        let n = count.unwrap_or(match s {
            Split::Train => 256,
            _ => 64,
        });
        let episodes =
            generate_split(&gen, &vocab, cfg.run.seed, s, n, cfg.world.num_layouts, cfg.exec_mode());
        let path = split_path(&data_dir, s);
        write_dataset(&path, &episodes)?;
        println!("wrote {} episodes to {}", episodes.len(), path.display());
    }
    std::fs::write(data_dir.join("resolved.toml"), cfg.resolved_toml())
        .with_context(|| format!("writing {}", data_dir.join("resolved.toml").display()))?;
    Ok(())
}

fn cmd_train(args: &ConfigArgs, run: &RunArgs, e2e: bool) -> Result<()> {
    let mut cfg = args.resolve()?;
    if e2e {
        cfg.run.stage = Stage::E2e;
    } else if cfg.run.stage == Stage::E2e {
        bail!("pretrain needs run.stage pair or triple; use `train` for the e2e stage");
    }
    let data_dir = args.data_dir(&cfg);
    let train = load_split(&data_dir, Split::Train)?;
    let evals = load_eval_splits(&data_dir, &cfg)?;
    let out = run_training(&cfg, &train, &evals, run.init.as_deref(), run.resume.as_deref())?;
    write_run_dir(&run.out_dir, &cfg, &out.rows, Some(&out.checkpoint))?;
    let last_train = out.rows.iter().rev().find(|r| r.split == "train");
    let loss = last_train.and_then(|r| r.loss_total).unwrap_or(f64::NAN);
    println!(
        "stage {} done at step {}: train loss {loss:.4}; artifacts in {}",
        cfg.run.stage.as_str(),
        out.final_step,
        run.out_dir.display()
    );
    for row in out.rows.iter().filter(|r| r.step == out.final_step && r.split != "train") {
        if let Some(acc) = row.accuracy {
            println!("  {}: accuracy {acc:.4}", row.split);
        }
    }
    Ok(())
}

fn cmd_ablation(args: &ConfigArgs, run: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let data_dir = args.data_dir(&cfg);
    let train = load_split(&data_dir, Split::Train)?;
    let mut seen = load_split(&data_dir, Split::ValidSeen)?;
    let mut unseen = load_split(&data_dir, Split::ValidUnseen)?;
    seen.truncate(cfg.run.eval_episodes);
    unseen.truncate(cfg.run.eval_episodes);
    let cells = run_map_ablation(&cfg, &train, &seen, &unseen)?;
    std::fs::create_dir_all(&run.out_dir)
        .with_context(|| format!("creating {}", run.out_dir.display()))?;
    let mut csv = String::from("map_enabled,split,accuracy,macro_f1\n");
    for c in &cells {
        csv.push_str(&format!("{},{},{},{}\n", c.map_enabled, c.split, c.accuracy, c.macro_f1));
    }
    let path = run.out_dir.join("ablation.csv");
    std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    std::fs::write(run.out_dir.join("resolved.toml"), cfg.resolved_toml())?;
    println!("map ablation (accuracy / macro-F1):");
    println!("{:<10} {:>22} {:>22}", "", "valid_seen", "valid_unseen");
    for enabled in [true, false] {
        let row: Vec<String> = ["valid_seen", "valid_unseen"]
            .iter()
            .map(|split| {
                let c = cells
                    .iter()
                    .find(|c| c.map_enabled == enabled && c.split == *split)
                    .expect("ablation cell");
                format!("{:.4} / {:.4}", c.accuracy, c.macro_f1)
            })
            .collect();
        let label = if enabled { "with map" } else { "no map" };
        println!("{label:<10} {:>22} {:>22}", row[0], row[1]);
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_eval(args: &ConfigArgs, ckpt_path: &Path, out_dir: &Path, rollout: bool) -> Result<()> {
    let cfg = args.resolve()?;
    let (model, ckpt) = load_model(&cfg, ckpt_path)?;
    let data_dir = args.data_dir(&cfg);
    let mut rows = Vec::new();
    let mut any = false;
    for split in [Split::Train, Split::ValidSeen, Split::ValidUnseen] {
        if !split_path(&data_dir, split).exists() {
            continue;
        }
        any = true;
        let mut episodes = load_split(&data_dir, split)?;
        episodes.truncate(cfg.run.eval_episodes);
        let mut row = MetricsRow::blank(ckpt.step, split.as_str(), ckpt.stage);
        if rollout {
            let r = eval_rollout(&model, &cfg, &episodes, cfg.exec_mode())?;
            row.accuracy = Some(r.accuracy);
            row.macro_f1 = Some(r.macro_f1);
            println!(
                "{}: rollout accuracy {:.4}, macro-F1 {:.4}, exact sequences {:.4} ({} episodes)",
                split.as_str(),
                r.accuracy,
                r.macro_f1,
                r.exact,
                r.episodes
            );
        } else {
            let s = eval_teacher_forced(&model, &cfg, &episodes, cfg.exec_mode())?;
            row.loss_total = Some(s.loss_total);
            row.loss_action = Some(s.loss_action);
            row.loss_object = Some(s.loss_object);
            row.loss_gp = Some(s.loss_gp);
            row.accuracy = Some(s.accuracy);
            row.macro_f1 = Some(s.macro_f1);
            println!(
                "{}: accuracy {:.4}, macro-F1 {:.4}, loss {:.4} ({} episodes)",
                split.as_str(),
                s.accuracy,
                s.macro_f1,
                s.loss_total,
                s.episodes
            );
        }
        rows.push(row);
    }
    if !any {
        bail!("no split files found under {} (run `gen` first?)", data_dir.display());
    }
    write_run_dir(out_dir, &cfg, &rows, None)?;
    Ok(())
}

fn cmd_inspect_mask(m: usize, n: usize, with_map: bool) -> Result<()> {
    if m == 0 || n == 0 {
        bail!("mask layout needs m >= 1 and n >= 1");
    }
    let layout = TokenLayout { m, n, with_map };
    let mask = build_causal_mask(layout);
    print!("{}", mask_to_text(&mask, layout));
    Ok(())
}

fn cmd_grad_check() -> Result<()> {
    let results = run_gradient_suite()?;
    let mut failed = 0;
    for r in &results {
        println!("{}", r.line());
        if !r.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        bail!("{failed} of {} gradient checks failed", results.len());
    }
    println!("all {} gradient checks passed", results.len());
    Ok(())
}
