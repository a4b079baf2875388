//! Non-identity scene attributes: background, lighting, motion, scale,
//! occlusion, and start position.

use rand::Rng;
use serde::{Deserialize, Serialize};

use idsprite_core::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BgColor {
    Blue,
    Yellow,
    Gray,
    Purple,
}

impl BgColor {
    pub const ALL: [BgColor; 4] = [BgColor::Blue, BgColor::Yellow, BgColor::Gray, BgColor::Purple];

    pub fn rgb(&self) -> [f64; 3] {
        match self {
            BgColor::Blue => [0.55, 0.65, 0.90],
            BgColor::Yellow => [0.92, 0.88, 0.55],
            BgColor::Gray => [0.60, 0.60, 0.60],
            BgColor::Purple => [0.62, 0.50, 0.80],
        }
    }

    pub fn word(&self) -> &'static str {
        match self {
            BgColor::Blue => "blue",
            BgColor::Yellow => "yellow",
            BgColor::Gray => "gray",
            BgColor::Purple => "purple",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Motion {
    Left,
    Right,
    Up,
    Down,
    Rotate,
    Still,
}

impl Motion {
    pub const ALL: [Motion; 6] =
        [Motion::Left, Motion::Right, Motion::Up, Motion::Down, Motion::Rotate, Motion::Still];

    /// Translation in pixels per frame; rotation and stillness do not
    /// translate.
    pub fn velocity(&self) -> (f64, f64) {
        match self {
            Motion::Left => (-2.0, 0.0),
            Motion::Right => (2.0, 0.0),
            Motion::Up => (0.0, -2.0),
            Motion::Down => (0.0, 2.0),
            Motion::Rotate | Motion::Still => (0.0, 0.0),
        }
    }

    pub fn phrase(&self) -> &'static str {
        match self {
            Motion::Left => "moving left",
            Motion::Right => "moving right",
            Motion::Up => "moving up",
            Motion::Down => "moving down",
            Motion::Rotate => "spinning",
            Motion::Still => "resting",
        }
    }

    /// Deterministically different motion, used for conflicting captions.
    pub fn contradiction(&self) -> Motion {
        match self {
            Motion::Left => Motion::Right,
            Motion::Right => Motion::Left,
            Motion::Up => Motion::Down,
            Motion::Down => Motion::Up,
            Motion::Rotate => Motion::Still,
            Motion::Still => Motion::Rotate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Occlusion {
    None,
    Bar,
    Corner,
}

/// The two scale values scenes are sampled from; "small" vs "large" in
/// captions splits at 0.55.
pub const SCALE_SMALL: f64 = 0.42;
pub const SCALE_LARGE: f64 = 0.72;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub background: BgColor,
    pub lighting_gain: f64,
    pub motion: Motion,
    pub sprite_scale: f64,
    pub occlusion: Occlusion,
    pub start_position: (f64, f64),
}

impl SceneSpec {
    pub fn background_color(&self) -> [f64; 3] {
        self.background.rgb()
    }

    pub fn scale_word(&self) -> &'static str {
        if self.sprite_scale < 0.55 {
            "small"
        } else {
            "large"
        }
    }
}

/// Sprite radius in pixels for a scale value in a given frame geometry.
pub fn sprite_radius(scale: f64, h: usize, w: usize) -> f64 {
    scale * h.min(w) as f64 / 4.0
}

/// Outer extent of the sprite including the anti-aliasing margin.
pub fn sprite_outer_radius(scale: f64, h: usize, w: usize) -> f64 {
    sprite_radius(scale, h, w) + 1.0
}

/// Deterministic scene draw for an h x w world. Start positions keep the
/// whole sprite inside the frame on frame 0.
pub fn sample_scene(seed: u64, label: &str, indices: &[u64], h: usize, w: usize) -> SceneSpec {
    let mut r = rng::stream(seed, label, indices);
    let background = BgColor::ALL[r.gen_range(0..BgColor::ALL.len())];
    let lighting_gain = r.gen_range(0.5..=1.5);
    let motion = Motion::ALL[r.gen_range(0..Motion::ALL.len())];
    let sprite_scale = if r.gen_bool(0.5) { SCALE_SMALL } else { SCALE_LARGE };
    let occlusion = {
        let u: f64 = r.gen_range(0.0..1.0);
        if u < 0.8 {
            Occlusion::None
        } else if u < 0.9 {
            Occlusion::Bar
        } else {
            Occlusion::Corner
        }
    };
    let pad = sprite_outer_radius(sprite_scale, h, w);
    let x = r.gen_range(pad..=(w as f64 - 1.0 - pad));
    let y = r.gen_range(pad..=(h as f64 - 1.0 - pad));
    SceneSpec {
        background,
        lighting_gain,
        motion,
        sprite_scale,
        occlusion,
        start_position: (x, y),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_deterministic_and_in_range() {
        for i in 0..50u64 {
            let a = sample_scene(9, "test/scene", &[i], 32, 32);
            let b = sample_scene(9, "test/scene", &[i], 32, 32);
            assert_eq!(a, b);
            assert!((0.5..=1.5).contains(&a.lighting_gain));
            assert!((0.3..=0.8).contains(&a.sprite_scale));
            let pad = sprite_outer_radius(a.sprite_scale, 32, 32);
            assert!(a.start_position.0 >= pad && a.start_position.0 <= 31.0 - pad);
            assert!(a.start_position.1 >= pad && a.start_position.1 <= 31.0 - pad);
        }
    }

    #[test]
    fn translational_motions_move_at_least_one_pixel_per_frame() {
        for m in Motion::ALL {
            let (vx, vy) = m.velocity();
            let speed = (vx * vx + vy * vy).sqrt();
            match m {
                Motion::Still | Motion::Rotate => assert_eq!(speed, 0.0),
                _ => assert!(speed >= 1.0),
            }
        }
    }
}
