//! Deterministic 8x8 gridworld: state, action simulator, layout generation.
//!
//! The world is fully observable to the simulator but agents only see a
//! narrow window ahead (see `render`). Cells hold at most one object.
//! Movement is blocked by objects and walls; interactions target the cell
//! directly ahead and require the camera pitch to match the object's
//! elevation.

pub mod dataset;
pub mod episode;
pub mod plan;
pub mod render;
pub mod vocab;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use vocab::object_class;

pub const GRID_EXTENT: usize = 8;
pub const VIEW_DEPTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    MoveAhead,
    RotateLeft,
    RotateRight,
    LookUp,
    LookDown,
    Pickup,
    Put,
    Open,
    Close,
    ToggleOn,
    ToggleOff,
    Slice,
}

impl Action {
    pub const ALL: [Action; vocab::NUM_MOTOR_ACTIONS] = [
        Action::MoveAhead,
        Action::RotateLeft,
        Action::RotateRight,
        Action::LookUp,
        Action::LookDown,
        Action::Pickup,
        Action::Put,
        Action::Open,
        Action::Close,
        Action::ToggleOn,
        Action::ToggleOff,
        Action::Slice,
    ];

    pub fn id(self) -> usize {
        Action::ALL.iter().position(|&a| a == self).expect("listed")
    }

    pub fn from_id(id: usize) -> Option<Action> {
        Action::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        vocab::ACTION_NAMES[self.id()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    /// Unit forward vector; y grows southward.
    pub fn forward(self) -> (i32, i32) {
        match self {
            Heading::North => (0, -1),
            Heading::East => (1, 0),
            Heading::South => (0, 1),
            Heading::West => (-1, 0),
        }
    }

    /// Unit vector to the agent's right.
    pub fn right(self) -> (i32, i32) {
        match self {
            Heading::North => (1, 0),
            Heading::East => (0, 1),
            Heading::South => (-1, 0),
            Heading::West => (0, -1),
        }
    }

    pub fn left_of(self) -> Heading {
        match self {
            Heading::North => Heading::West,
            Heading::West => Heading::South,
            Heading::South => Heading::East,
            Heading::East => Heading::North,
        }
    }

    pub fn right_of(self) -> Heading {
        match self {
            Heading::North => Heading::East,
            Heading::East => Heading::South,
            Heading::South => Heading::West,
            Heading::West => Heading::North,
        }
    }

    pub const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    pub fn index(self) -> usize {
        Heading::ALL.iter().position(|&h| h == self).expect("listed")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Obj {
    pub class: usize,
    pub x: usize,
    pub y: usize,
    /// Camera pitch required to interact: -1 low, 0 level, 1 high.
    pub elevation: i8,
    pub open: bool,
    pub on: bool,
    pub sliced: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pose {
    pub x: usize,
    pub y: usize,
    pub heading: Heading,
    pub pitch: i8,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StepError {
    #[error("MoveAhead blocked: {reason}")]
    MoveBlocked { reason: &'static str },
    #[error("pitch already at limit {limit}")]
    PitchLimit { limit: i8 },
    #[error("{action} requires pitch {want} but camera is at {got}")]
    PitchMismatch { action: &'static str, want: i8, got: i8 },
    #[error("no object in the cell ahead for {action}")]
    NothingAhead { action: &'static str },
    #[error("{name} does not support {action}")]
    Unsupported { action: &'static str, name: &'static str },
    #[error("{action} rejected: {reason}")]
    BadState { action: &'static str, reason: &'static str },
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub extent: usize,
    pub objects: Vec<Obj>,
    pub agent: Pose,
    pub held: Option<usize>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WorldConfig {
    pub extent: usize,
    pub object_count: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig { extent: GRID_EXTENT, object_count: 10 }
    }
}

impl World {
    /// Object placement depends only on `layout_seed`; the agent start pose
    /// comes from `pose_rng` so one layout hosts many distinct episodes.
    pub fn generate(cfg: &WorldConfig, layout_seed: u64, pose_rng: &mut ChaCha8Rng) -> World {
        assert!(cfg.object_count < cfg.extent * cfg.extent, "objects must leave empty cells");
        let mut rng = ChaCha8Rng::seed_from_u64(layout_seed);
        let mut classes: Vec<usize> = (1..vocab::NUM_OBJECT_CLASSES).collect();
        classes.shuffle(&mut rng);
        let mut cells: Vec<(usize, usize)> =
            (0..cfg.extent * cfg.extent).map(|i| (i % cfg.extent, i / cfg.extent)).collect();
        cells.shuffle(&mut rng);
        let objects: Vec<Obj> = classes
            .iter()
            .zip(&cells)
            .take(cfg.object_count)
            .map(|(&class, &(x, y))| Obj {
                class,
                x,
                y,
                elevation: rng.random_range(-1..=1),
                open: false,
                on: false,
                sliced: false,
            })
            .collect();
        let free: Vec<(usize, usize)> =
            cells[cfg.object_count..].iter().copied().collect();
        let (x, y) = free[pose_rng.random_range(0..free.len())];
        let heading = Heading::ALL[pose_rng.random_range(0..4)];
        World { extent: cfg.extent, objects, agent: Pose { x, y, heading, pitch: 0 }, held: None }
    }

    pub fn in_bounds(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.extent && (y as usize) < self.extent
    }

    pub fn object_index_at(&self, x: usize, y: usize) -> Option<usize> {
        self.objects.iter().position(|o| o.x == x && o.y == y)
    }

    pub fn object_at(&self, x: usize, y: usize) -> Option<&Obj> {
        self.object_index_at(x, y).map(|i| &self.objects[i])
    }

    /// Cell directly ahead of the agent, or None when facing the wall.
    pub fn ahead_cell(&self) -> Option<(usize, usize)> {
        let (dx, dy) = self.agent.heading.forward();
        let x = self.agent.x as i32 + dx;
        let y = self.agent.y as i32 + dy;
        self.in_bounds(x, y).then_some((x as usize, y as usize))
    }

    fn interaction_target(&self, action: &'static str) -> Result<usize, StepError> {
        let (x, y) = self.ahead_cell().ok_or(StepError::NothingAhead { action })?;
        let idx = self.object_index_at(x, y).ok_or(StepError::NothingAhead { action })?;
        let want = self.objects[idx].elevation;
        let got = self.agent.pitch;
        if want != got {
            return Err(StepError::PitchMismatch { action, want, got });
        }
        Ok(idx)
    }

    /// Applies one action, mutating the world, or explains why it is invalid.
    pub fn step(&mut self, action: Action) -> Result<(), StepError> {
        match action {
            Action::MoveAhead => {
                if self.agent.pitch != 0 {
                    return Err(StepError::MoveBlocked { reason: "camera not level" });
                }
                let (x, y) = self
                    .ahead_cell()
                    .ok_or(StepError::MoveBlocked { reason: "wall ahead" })?;
                if self.object_at(x, y).is_some() {
                    return Err(StepError::MoveBlocked { reason: "object ahead" });
                }
                self.agent.x = x;
                self.agent.y = y;
                Ok(())
            }
            Action::RotateLeft => {
                self.agent.heading = self.agent.heading.left_of();
                Ok(())
            }
            Action::RotateRight => {
                self.agent.heading = self.agent.heading.right_of();
                Ok(())
            }
            Action::LookUp => {
                if self.agent.pitch >= 1 {
                    return Err(StepError::PitchLimit { limit: 1 });
                }
                self.agent.pitch += 1;
                Ok(())
            }
            Action::LookDown => {
                if self.agent.pitch <= -1 {
                    return Err(StepError::PitchLimit { limit: -1 });
                }
                self.agent.pitch -= 1;
                Ok(())
            }
            Action::Pickup => {
                if self.held.is_some() {
                    return Err(StepError::BadState { action: "Pickup", reason: "already holding an object" });
                }
                let idx = self.interaction_target("Pickup")?;
                let class = self.objects[idx].class;
                if !object_class(class).pickupable {
                    return Err(StepError::Unsupported { action: "Pickup", name: vocab::object_name(class) });
                }
                self.objects.swap_remove(idx);
                self.held = Some(class);
                Ok(())
            }
            Action::Put => {
                let class = self.held.ok_or(StepError::BadState { action: "Put", reason: "not holding anything" })?;
                if self.agent.pitch != 0 {
                    return Err(StepError::PitchMismatch { action: "Put", want: 0, got: self.agent.pitch });
                }
                let (x, y) = self.ahead_cell().ok_or(StepError::NothingAhead { action: "Put" })?;
                if self.object_at(x, y).is_some() {
                    return Err(StepError::BadState { action: "Put", reason: "cell ahead is occupied" });
                }
                self.objects.push(Obj { class, x, y, elevation: 0, open: false, on: false, sliced: false });
                self.held = None;
                Ok(())
            }
            Action::Open => self.flag_interaction("Open", |c| c.openable, |o| {
                if o.open { Err("already open") } else { o.open = true; Ok(()) }
            }),
            Action::Close => self.flag_interaction("Close", |c| c.openable, |o| {
                if o.open { o.open = false; Ok(()) } else { Err("already closed") }
            }),
            Action::ToggleOn => self.flag_interaction("ToggleOn", |c| c.toggleable, |o| {
                if o.on { Err("already on") } else { o.on = true; Ok(()) }
            }),
            Action::ToggleOff => self.flag_interaction("ToggleOff", |c| c.toggleable, |o| {
                if o.on { o.on = false; Ok(()) } else { Err("already off") }
            }),
            Action::Slice => self.flag_interaction("Slice", |c| c.sliceable, |o| {
                if o.sliced { Err("already sliced") } else { o.sliced = true; Ok(()) }
            }),
        }
    }

    fn flag_interaction(
        &mut self,
        action: &'static str,
        supported: impl Fn(&vocab::ObjectClass) -> bool,
        apply: impl FnOnce(&mut Obj) -> Result<(), &'static str>,
    ) -> Result<(), StepError> {
        let idx = self.interaction_target(action)?;
        let class = self.objects[idx].class;
        if !supported(object_class(class)) {
            return Err(StepError::Unsupported { action, name: vocab::object_name(class) });
        }
        apply(&mut self.objects[idx]).map_err(|reason| StepError::BadState { action, reason })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_world(agent: Pose) -> World {
        World { extent: GRID_EXTENT, objects: Vec::new(), agent, held: None }
    }

    fn pose(x: usize, y: usize, heading: Heading) -> Pose {
        Pose { x, y, heading, pitch: 0 }
    }

    #[test]
    fn rotation_cycles_through_headings_and_back() {
        let mut w = empty_world(pose(4, 4, Heading::North));
        for _ in 0..4 {
            w.step(Action::RotateLeft).unwrap();
        }
        assert_eq!(w.agent.heading, Heading::North);
        w.step(Action::RotateRight).unwrap();
        assert_eq!(w.agent.heading, Heading::East);
    }

    #[test]
    fn walls_objects_and_pitch_block_movement() {
        let mut w = empty_world(pose(0, 0, Heading::North));
        assert_eq!(w.step(Action::MoveAhead), Err(StepError::MoveBlocked { reason: "wall ahead" }));
        w.agent = pose(4, 4, Heading::East);
        w.objects.push(Obj { class: 45, x: 5, y: 4, elevation: 0, open: false, on: false, sliced: false });
        assert_eq!(w.step(Action::MoveAhead), Err(StepError::MoveBlocked { reason: "object ahead" }));
        w.agent = pose(2, 2, Heading::North);
        w.step(Action::LookUp).unwrap();
        assert_eq!(w.step(Action::MoveAhead), Err(StepError::MoveBlocked { reason: "camera not level" }));
        w.step(Action::LookDown).unwrap();
        w.step(Action::MoveAhead).unwrap();
        assert_eq!((w.agent.x, w.agent.y), (2, 1));
    }

    #[test]
    fn pitch_saturates_at_one_step_each_way() {
        let mut w = empty_world(pose(4, 4, Heading::North));
        w.step(Action::LookUp).unwrap();
        assert_eq!(w.step(Action::LookUp), Err(StepError::PitchLimit { limit: 1 }));
        w.step(Action::LookDown).unwrap();
        w.step(Action::LookDown).unwrap();
        assert_eq!(w.step(Action::LookDown), Err(StepError::PitchLimit { limit: -1 }));
    }

    #[test]
    fn pickup_requires_matching_pitch_and_capability() {
        // Class 45 is a mug (pickupable); class 13 is a cabinet (not).
        let mut w = empty_world(pose(4, 4, Heading::East));
        w.objects.push(Obj { class: 45, x: 5, y: 4, elevation: 1, open: false, on: false, sliced: false });
        assert_eq!(
            w.step(Action::Pickup),
            Err(StepError::PitchMismatch { action: "Pickup", want: 1, got: 0 })
        );
        w.step(Action::LookUp).unwrap();
        w.step(Action::Pickup).unwrap();
        assert_eq!(w.held, Some(45));
        assert!(w.objects.is_empty());

        let mut w = empty_world(pose(4, 4, Heading::East));
        w.objects.push(Obj { class: 13, x: 5, y: 4, elevation: 0, open: false, on: false, sliced: false });
        assert!(matches!(w.step(Action::Pickup), Err(StepError::Unsupported { action: "Pickup", .. })));
    }

    #[test]
    fn put_places_held_object_in_empty_cell_ahead() {
        let mut w = empty_world(pose(4, 4, Heading::South));
        assert!(matches!(w.step(Action::Put), Err(StepError::BadState { action: "Put", .. })));
        w.held = Some(22);
        w.step(Action::Put).unwrap();
        assert_eq!(w.held, None);
        let placed = w.object_at(4, 5).unwrap();
        assert_eq!((placed.class, placed.elevation), (22, 0));
    }

    #[test]
    fn open_close_and_toggle_track_state() {
        // Class 44 is a microwave: openable and toggleable.
        let mut w = empty_world(pose(4, 4, Heading::West));
        w.objects.push(Obj { class: 44, x: 3, y: 4, elevation: 0, open: false, on: false, sliced: false });
        assert!(matches!(w.step(Action::Close), Err(StepError::BadState { .. })));
        w.step(Action::Open).unwrap();
        assert!(matches!(w.step(Action::Open), Err(StepError::BadState { .. })));
        w.step(Action::Close).unwrap();
        w.step(Action::ToggleOn).unwrap();
        assert!(w.object_at(3, 4).unwrap().on);
        w.step(Action::ToggleOff).unwrap();
        assert!(!w.object_at(3, 4).unwrap().on);
        assert!(matches!(w.step(Action::Slice), Err(StepError::Unsupported { .. })));
    }

    #[test]
    fn generation_is_layout_deterministic_and_collision_free() {
        let cfg = WorldConfig::default();
        let mut pose_rng = ChaCha8Rng::seed_from_u64(9);
        let a = World::generate(&cfg, 123, &mut pose_rng);
        let mut pose_rng = ChaCha8Rng::seed_from_u64(9);
        let b = World::generate(&cfg, 123, &mut pose_rng);
        assert_eq!(a, b);
        assert_eq!(a.objects.len(), cfg.object_count);
        for (i, o) in a.objects.iter().enumerate() {
            assert!(o.x < cfg.extent && o.y < cfg.extent);
            for p in &a.objects[i + 1..] {
                assert!((o.x, o.y) != (p.x, p.y), "two objects share a cell");
                assert_ne!(o.class, p.class, "classes are sampled without replacement");
            }
        }
        assert!(a.object_at(a.agent.x, a.agent.y).is_none(), "agent starts on an empty cell");

        let mut other_rng = ChaCha8Rng::seed_from_u64(10);
        let c = World::generate(&cfg, 123, &mut other_rng);
        assert_eq!(a.objects, c.objects, "layout ignores the pose rng");
    }

    #[test]
    fn action_ids_match_name_table() {
        for (i, a) in Action::ALL.iter().enumerate() {
            assert_eq!(a.id(), i);
            assert_eq!(Action::from_id(i), Some(*a));
            assert_eq!(a.name(), vocab::ACTION_NAMES[i]);
        }
        assert_eq!(Action::from_id(vocab::STOP_ACTION), None);
    }
}
