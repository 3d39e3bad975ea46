//! Egocentric frame features and the accumulated semantic map.
//!
//! A frame is a fixed-width binary vector describing the 3x3 window of
//! cells directly ahead of the agent plus proprioception (camera pitch,
//! held object). The map is a channel-major occupancy grid accumulated
//! over everything observed so far; bits are only ever set, never cleared.

use super::vocab::{NUM_OBJECT_CLASSES, NO_OBJECT};
use super::{World, VIEW_DEPTH};

/// Per-cell block: wall flag, 84 class one-hots, open/on/sliced flags.
pub const CELL_FEATURES: usize = 1 + (NUM_OBJECT_CLASSES - 1) + 3;
pub const WINDOW_CELLS: usize = VIEW_DEPTH * 3;
/// 9 * 88 window cells + 3 pitch one-hots + 85 held-class one-hots.
pub const FRAME_LEN: usize = WINDOW_CELLS * CELL_FEATURES + 3 + NUM_OBJECT_CLASSES;

const _: () = assert!(FRAME_LEN == 880);

/// Window cells in scan order: depth 1..=3 ahead, each row left to right.
/// Out-of-bounds cells are reported as walls.
fn window_cells(world: &World) -> [Option<(usize, usize)>; WINDOW_CELLS] {
    let (fx, fy) = world.agent.heading.forward();
    let (rx, ry) = world.agent.heading.right();
    let mut cells = [None; WINDOW_CELLS];
    for depth in 1..=VIEW_DEPTH as i32 {
        for (slot, side) in (-1..=1).enumerate() {
            let x = world.agent.x as i32 + fx * depth + rx * side;
            let y = world.agent.y as i32 + fy * depth + ry * side;
            if world.in_bounds(x, y) {
                cells[(depth as usize - 1) * 3 + slot] = Some((x as usize, y as usize));
            }
        }
    }
    cells
}

pub fn render_frame(world: &World) -> Vec<f32> {
    let mut frame = vec![0.0f32; FRAME_LEN];
    for (i, cell) in window_cells(world).iter().enumerate() {
        let base = i * CELL_FEATURES;
        match *cell {
            None => frame[base] = 1.0,
            Some((x, y)) => {
                if let Some(o) = world.object_at(x, y) {
                    frame[base + o.class] = 1.0;
                    if o.open {
                        frame[base + CELL_FEATURES - 3] = 1.0;
                    }
                    if o.on {
                        frame[base + CELL_FEATURES - 2] = 1.0;
                    }
                    if o.sliced {
                        frame[base + CELL_FEATURES - 1] = 1.0;
                    }
                }
            }
        }
    }
    let pitch_base = WINDOW_CELLS * CELL_FEATURES;
    frame[pitch_base + (world.agent.pitch + 1) as usize] = 1.0;
    let held_base = pitch_base + 3;
    frame[held_base + world.held.unwrap_or(NO_OBJECT)] = 1.0;
    frame
}

/// Number of f32 entries in a map with `channels` channels.
pub fn map_len(channels: usize, extent: usize) -> usize {
    channels * extent * extent
}

/// Channel for an object class: classes fold onto `channels - 1` slots so
/// small-channel maps stay informative and 85-channel maps are lossless.
pub fn map_channel(class: usize, channels: usize) -> usize {
    assert!(class >= 1 && class < NUM_OBJECT_CLASSES);
    assert!(channels >= 2, "need an observed channel plus at least one class channel");
    1 + (class - 1) % (channels - 1)
}

/// Marks everything inside the current view window: channel 0 for
/// observed cells, the class channel for visible objects. Monotone.
pub fn accumulate_map(map: &mut [f32], channels: usize, world: &World) {
    let area = world.extent * world.extent;
    assert_eq!(map.len(), map_len(channels, world.extent));
    for cell in window_cells(world).iter().flatten() {
        let (x, y) = *cell;
        map[y * world.extent + x] = 1.0;
        if let Some(o) = world.object_at(x, y) {
            map[map_channel(o.class, channels) * area + y * world.extent + x] = 1.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Action, Heading, Obj, Pose, GRID_EXTENT};
    use super::*;

    fn world_with(objects: Vec<Obj>, agent: Pose) -> World {
        World { extent: GRID_EXTENT, objects, agent, held: None }
    }

    fn obj(class: usize, x: usize, y: usize) -> Obj {
        Obj { class, x, y, elevation: 0, open: false, on: false, sliced: false }
    }

    #[test]
    fn frame_is_binary_and_fixed_width() {
        let w = world_with(vec![obj(45, 4, 2)], Pose { x: 4, y: 4, heading: Heading::North, pitch: 0 });
        let f = render_frame(&w);
        assert_eq!(f.len(), FRAME_LEN);
        assert!(f.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn corner_view_marks_out_of_bounds_cells_as_walls() {
        // Facing north from (0, 0): the whole window is outside the grid.
        let w = world_with(vec![], Pose { x: 0, y: 0, heading: Heading::North, pitch: 0 });
        let f = render_frame(&w);
        for cell in 0..WINDOW_CELLS {
            assert_eq!(f[cell * CELL_FEATURES], 1.0, "cell {cell} should be a wall");
        }
    }

    #[test]
    fn object_appears_in_the_expected_window_slot() {
        // Facing north, the cell two ahead and one right is depth 2, slot 2.
        let w = world_with(
            vec![Obj { class: 7, x: 5, y: 2, elevation: 0, open: true, on: false, sliced: false }],
            Pose { x: 4, y: 4, heading: Heading::North, pitch: 0 },
        );
        let f = render_frame(&w);
        let base = (1 * 3 + 2) * CELL_FEATURES;
        assert_eq!(f[base + 7], 1.0, "class one-hot");
        assert_eq!(f[base + CELL_FEATURES - 3], 1.0, "open flag");
        let hits: usize = f[..WINDOW_CELLS * CELL_FEATURES].iter().map(|&v| v as usize).sum();
        assert_eq!(hits, 2, "only that object's class bit and open flag are set");
    }

    #[test]
    fn window_follows_heading() {
        let objects = vec![obj(10, 6, 4)];
        let mut w = world_with(objects, Pose { x: 4, y: 4, heading: Heading::North, pitch: 0 });
        let north = render_frame(&w);
        assert!(north[..WINDOW_CELLS * CELL_FEATURES].iter().all(|&v| v == 0.0));
        w.agent.heading = Heading::East;
        let east = render_frame(&w);
        let base = (1 * 3 + 1) * CELL_FEATURES;
        assert_eq!(east[base + 10], 1.0, "two cells ahead, centered");
    }

    #[test]
    fn pitch_and_held_one_hots_track_state() {
        let mut w = world_with(vec![], Pose { x: 4, y: 4, heading: Heading::South, pitch: 0 });
        let pitch_base = WINDOW_CELLS * CELL_FEATURES;
        let f = render_frame(&w);
        assert_eq!(f[pitch_base + 1], 1.0);
        assert_eq!(f[pitch_base + 3 + NO_OBJECT], 1.0, "empty hand is its own one-hot");
        w.step(Action::LookUp).unwrap();
        w.held = Some(33);
        let f = render_frame(&w);
        assert_eq!(f[pitch_base + 2], 1.0);
        assert_eq!(f[pitch_base + 3 + 33], 1.0);
        assert_eq!(f[pitch_base + 3 + NO_OBJECT], 0.0);
    }

    #[test]
    fn map_accumulation_is_monotone_over_a_walk() {
        let mut w = world_with(vec![obj(3, 2, 2), obj(20, 5, 5)], Pose {
            x: 4,
            y: 4,
            heading: Heading::North,
            pitch: 0,
        });
        let channels = 13;
        let mut map = vec![0.0f32; map_len(channels, w.extent)];
        let mut prev = map.clone();
        let walk = [Action::MoveAhead, Action::RotateLeft, Action::MoveAhead, Action::RotateLeft, Action::MoveAhead];
        accumulate_map(&mut map, channels, &w);
        for a in walk {
            w.step(a).unwrap();
            accumulate_map(&mut map, channels, &w);
            for (new, old) in map.iter().zip(&prev) {
                assert!(new >= old, "observed bits never clear");
            }
            prev.copy_from_slice(&map);
        }
        assert!(map.iter().any(|&v| v == 1.0));
    }

    #[test]
    fn small_maps_fold_classes_onto_shared_channels() {
        assert_eq!(map_channel(1, 13), map_channel(13, 13), "classes 12 apart collide at 13 channels");
        assert_ne!(map_channel(1, 13), map_channel(2, 13));
        for class in 1..NUM_OBJECT_CLASSES {
            assert_eq!(map_channel(class, NUM_OBJECT_CLASSES), class, "85 channels are lossless");
        }
    }

    #[test]
    fn full_sweep_with_lossless_channels_recovers_every_object() {
        // Oracle: posing the agent at every cell and heading must observe
        // the entire grid, and each object's true cell in its own channel.
        let objects = vec![obj(1, 0, 0), obj(42, 3, 6), obj(84, 7, 7), obj(17, 2, 5)];
        let mut w = world_with(objects.clone(), Pose { x: 4, y: 4, heading: Heading::North, pitch: 0 });
        let channels = NUM_OBJECT_CLASSES;
        let area = w.extent * w.extent;
        let mut map = vec![0.0f32; map_len(channels, w.extent)];
        for x in 0..w.extent {
            for y in 0..w.extent {
                for heading in Heading::ALL {
                    w.agent = Pose { x, y, heading, pitch: 0 };
                    accumulate_map(&mut map, channels, &w);
                }
            }
        }
        for idx in 0..area {
            assert_eq!(map[idx], 1.0, "cell {idx} observed");
        }
        for o in &objects {
            assert_eq!(map[o.class * area + o.y * w.extent + o.x], 1.0);
        }
        let marked: usize = map[area..].iter().map(|&v| v as usize).sum();
        assert_eq!(marked, objects.len(), "no spurious class marks");
    }
}
