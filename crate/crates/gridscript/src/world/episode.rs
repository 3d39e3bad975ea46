//! Episode generation: sample a task, plan it, narrate it, replay it.
//!
//! An episode couples a templated instruction with the expert transcript
//! that satisfies it: per-step frames, accumulated maps, action ids ending
//! in the stop id, and per-step object labels. Everything is a pure
//! function of (config, layout seed, episode seed).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::plan::{plan_subgoal, SubGoal};
use super::render::{accumulate_map, map_len, render_frame};
use super::vocab::{object_class, object_name, Vocab, VocabError, NO_OBJECT, STOP_ACTION};
use super::{Action, World, WorldConfig};

#[derive(Debug, Clone, Copy)]
pub struct GenConfig {
    pub world: WorldConfig,
    pub map_channels: usize,
    pub max_subgoals: usize,
    /// Hard cap on transcript length including the stop step.
    pub max_len: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { world: WorldConfig::default(), map_channels: 13, max_subgoals: 2, max_len: 24 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: String,
    pub layout_seed: u64,
    pub episode_seed: u64,
    pub instruction: String,
    pub tokens: Vec<usize>,
    /// Length n transcripts: the last action is always the stop id.
    pub actions: Vec<usize>,
    pub object_labels: Vec<usize>,
    pub frames: Vec<Vec<f32>>,
    pub maps: Vec<Vec<f32>>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("no solvable task found for layout {layout_seed} episode {episode_seed} after {attempts} attempts")]
    NoSolvableTask { layout_seed: u64, episode_seed: u64, attempts: usize },
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

/// splitmix64 over both seeds; stable across runs and platforms.
pub fn mix_seeds(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn world_and_rng(cfg: &GenConfig, layout_seed: u64, episode_seed: u64) -> (World, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seeds(layout_seed, episode_seed));
    let world = World::generate(&cfg.world, layout_seed, &mut rng);
    (world, rng)
}

/// The world as it stands before the first action of this episode.
pub fn initial_world(cfg: &GenConfig, layout_seed: u64, episode_seed: u64) -> World {
    world_and_rng(cfg, layout_seed, episode_seed).0
}

/// Deterministically ordered sub-goals compatible with the current world
/// and the goals already chosen: objects in placement order, goal kinds in
/// a fixed order per object.
fn enumerate_options(world: &World, chosen: &[SubGoal]) -> Vec<SubGoal> {
    let used = |class: usize| chosen.iter().any(|g| g.subject() == class);
    let mut options = Vec::new();
    for o in &world.objects {
        let caps = object_class(o.class);
        if world.held.is_none() && caps.pickupable && !used(o.class) {
            options.push(SubGoal::Pickup { class: o.class });
        }
        if world.held.is_some() && !used(o.class) {
            options.push(SubGoal::PutNear { landmark: o.class });
        }
        if caps.openable && !used(o.class) && !o.open {
            options.push(SubGoal::Open { class: o.class });
        }
        if caps.openable && o.open {
            options.push(SubGoal::Close { class: o.class });
        }
        if caps.toggleable && !used(o.class) && !o.on {
            options.push(SubGoal::ToggleOn { class: o.class });
        }
        if caps.toggleable && o.on {
            options.push(SubGoal::ToggleOff { class: o.class });
        }
        if caps.sliceable && !used(o.class) && !o.sliced {
            options.push(SubGoal::Slice { class: o.class });
        }
    }
    options
}

struct Task {
    goals: Vec<SubGoal>,
    steps: Vec<(Action, usize)>,
}

/// One sampling attempt: pick goals greedily, planning each against the
/// evolving world; any planner rejection fails the whole attempt.
fn try_task(cfg: &GenConfig, world0: &World, rng: &mut ChaCha8Rng) -> Option<Task> {
    let mut world = world0.clone();
    let want = rng.random_range(1..=cfg.max_subgoals);
    let mut goals = Vec::new();
    let mut steps: Vec<(Action, usize)> = Vec::new();
    for _slot in 0..want {
        let options = enumerate_options(&world, &goals);
        if options.is_empty() {
            break;
        }
        let goal = options[rng.random_range(0..options.len())];
        let mut trial = world.clone();
        let planned = plan_subgoal(&mut trial, goal).ok()?;
        if steps.len() + planned.len() + 1 > cfg.max_len {
            break;
        }
        world = trial;
        goals.push(goal);
        steps.extend(planned);
    }
    if goals.is_empty() {
        return None;
    }
    Some(Task { goals, steps })
}

/// Two surface forms per goal kind keep the text distribution from being
/// a pure lookup table while staying inside the fixed vocabulary.
fn phrase(goal: &SubGoal, variant: bool) -> String {
    let the = |c: usize| format!("the {}", object_name(c));
    match *goal {
        SubGoal::Pickup { class } => {
            if variant { format!("grab {}", the(class)) } else { format!("pick up {}", the(class)) }
        }
        SubGoal::PutNear { landmark } => {
            if variant {
                format!("put it by {}", the(landmark))
            } else {
                format!("put it near {}", the(landmark))
            }
        }
        SubGoal::Open { class } => {
            if variant { format!("pull open {}", the(class)) } else { format!("open {}", the(class)) }
        }
        SubGoal::Close { class } => {
            if variant { format!("shut {}", the(class)) } else { format!("close {}", the(class)) }
        }
        SubGoal::ToggleOn { class } => {
            if variant { format!("switch on {}", the(class)) } else { format!("turn on {}", the(class)) }
        }
        SubGoal::ToggleOff { class } => {
            if variant { format!("switch off {}", the(class)) } else { format!("turn off {}", the(class)) }
        }
        SubGoal::Slice { class } => {
            if variant { format!("cut {}", the(class)) } else { format!("slice {}", the(class)) }
        }
    }
}

/// Goal summary sentence, the goal marker, then one sentence per sub-goal.
fn narrate(goals: &[SubGoal], rng: &mut ChaCha8Rng) -> String {
    let summary: Vec<String> = goals.iter().map(|g| phrase(g, rng.random_bool(0.5))).collect();
    let mut text = format!("{} . <<goal>>", summary.join(" and "));
    for g in goals {
        let connective = if rng.random_bool(0.5) { "then" } else { "go and" };
        text.push_str(&format!(" {} {} .", connective, phrase(g, rng.random_bool(0.5))));
    }
    text
}

/// Re-simulates the transcript from the initial world, rendering the
/// pre-action frame and cumulative map at every step plus the stop step.
fn observe(world0: &World, actions: &[Action], channels: usize) -> (Vec<Vec<f32>>, Vec<Vec<f32>>) {
    let mut world = world0.clone();
    let mut map = vec![0.0f32; map_len(channels, world.extent)];
    let mut frames = Vec::with_capacity(actions.len() + 1);
    let mut maps = Vec::with_capacity(actions.len() + 1);
    for &a in actions {
        frames.push(render_frame(&world));
        accumulate_map(&mut map, channels, &world);
        maps.push(map.clone());
        world.step(a).expect("planned transcript replays cleanly");
    }
    frames.push(render_frame(&world));
    accumulate_map(&mut map, channels, &world);
    maps.push(map.clone());
    (frames, maps)
}

const TASK_ATTEMPTS: usize = 32;

pub fn generate_episode(
    cfg: &GenConfig,
    vocab: &Vocab,
    layout_seed: u64,
    episode_seed: u64,
) -> Result<Episode, GenError> {
    let (world0, mut rng) = world_and_rng(cfg, layout_seed, episode_seed);
    for _ in 0..TASK_ATTEMPTS {
        let Some(task) = try_task(cfg, &world0, &mut rng) else { continue };
        let instruction = narrate(&task.goals, &mut rng);
        let tokens = vocab.tokenize(&instruction)?;
        let motor: Vec<Action> = task.steps.iter().map(|s| s.0).collect();
        let (frames, maps) = observe(&world0, &motor, cfg.map_channels);
        let mut actions: Vec<usize> = motor.iter().map(|a| a.id()).collect();
        actions.push(STOP_ACTION);
        let mut object_labels: Vec<usize> = task.steps.iter().map(|s| s.1).collect();
        object_labels.push(NO_OBJECT);
        return Ok(Episode {
            id: format!("L{layout_seed:08x}-E{episode_seed:08x}"),
            layout_seed,
            episode_seed,
            instruction,
            tokens,
            actions,
            object_labels,
            frames,
            maps,
        });
    }
    Err(GenError::NoSolvableTask { layout_seed, episode_seed, attempts: TASK_ATTEMPTS })
}
