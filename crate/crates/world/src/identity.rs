//! Identity-defining attributes: shape, base color, marking. The identity id
//! is the index of the attribute combination, so id -> attributes is
//! injective by construction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use idsprite_core::rng;

use crate::WorldError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    Circle,
    Triangle,
    Square,
    Star,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Circle, Shape::Triangle, Shape::Square, Shape::Star];

    pub fn word(&self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Triangle => "triangle",
            Shape::Square => "square",
            Shape::Star => "star",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColorName {
    Red,
    Green,
    Blue,
}

impl ColorName {
    pub const ALL: [ColorName; 3] = [ColorName::Red, ColorName::Green, ColorName::Blue];

    pub fn rgb(&self) -> [f64; 3] {
        match self {
            ColorName::Red => [0.85, 0.15, 0.15],
            ColorName::Green => [0.10, 0.70, 0.20],
            ColorName::Blue => [0.15, 0.25, 0.80],
        }
    }

    pub fn word(&self) -> &'static str {
        match self {
            ColorName::Red => "red",
            ColorName::Green => "green",
            ColorName::Blue => "blue",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Marking {
    Stripe,
    Dot,
    Ring,
    None,
}

impl Marking {
    pub const ALL: [Marking; 4] = [Marking::Stripe, Marking::Dot, Marking::Ring, Marking::None];

    /// Adjective for captions; `None` contributes no word.
    pub fn word(&self) -> Option<&'static str> {
        match self {
            Marking::Stripe => Some("striped"),
            Marking::Dot => Some("dotted"),
            Marking::Ring => Some("ringed"),
            Marking::None => None,
        }
    }
}

pub const IDENTITY_SPACE: usize = Shape::ALL.len() * ColorName::ALL.len() * Marking::ALL.len();

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentitySpec {
    pub identity_id: u32,
    pub shape: Shape,
    pub color: ColorName,
    pub marking: Marking,
    pub base_color: [f64; 3],
}

impl IdentitySpec {
    fn from_combo(index: usize) -> Self {
        assert!(index < IDENTITY_SPACE);
        let marking = Marking::ALL[index % 4];
        let color = ColorName::ALL[(index / 4) % 3];
        let shape = Shape::ALL[index / 12];
        IdentitySpec {
            identity_id: index as u32,
            shape,
            color,
            marking,
            base_color: color.rgb(),
        }
    }
}

/// Deterministic draw of one identity; the id is the attribute-combination
/// index, so equal tuples always get equal ids.
pub fn sample_identity(seed: u64) -> IdentitySpec {
    let mut r = rng::stream(seed, "world/identity", &[]);
    IdentitySpec::from_combo(r.gen_range(0..IDENTITY_SPACE))
}

/// Allocate `n` distinct identities for a corpus, rejecting requests larger
/// than the attribute space.
pub fn allocate_identities(n: usize, seed: u64) -> Result<Vec<IdentitySpec>, WorldError> {
    if n > IDENTITY_SPACE {
        return Err(WorldError::AttributeSpaceExhausted {
            requested: n,
            available: IDENTITY_SPACE,
        });
    }
    let mut order: Vec<usize> = (0..IDENTITY_SPACE).collect();
    let mut r = rng::stream(seed, "world/identity-deck", &[]);
    // Fisher-Yates
    for i in (1..order.len()).rev() {
        let j = r.gen_range(0..=i);
        order.swap(i, j);
    }
    Ok(order[..n].iter().map(|&i| IdentitySpec::from_combo(i)).collect())
}
