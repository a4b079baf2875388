//! Templated caption generation. Captions name a configurable subset of
//! identity and scene attributes; a conflict spec deliberately contradicts
//! one non-identity attribute so text and reference image disagree.

use serde::{Deserialize, Serialize};

use crate::identity::IdentitySpec;
use crate::scene::{BgColor, SceneSpec};

/// Which attributes the caption mentions. Motion and background are always
/// named; identity words and the size word are optional so corpora can
/// control which stream carries identity information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionStyle {
    pub include_identity: bool,
    pub include_scale: bool,
}

impl CaptionStyle {
    /// Identity flows only through reference crops; size is described.
    pub const SCENE_ONLY: CaptionStyle =
        CaptionStyle { include_identity: false, include_scale: true };
    /// Full identity description, used where text must identify the sprite.
    pub const WITH_IDENTITY: CaptionStyle =
        CaptionStyle { include_identity: true, include_scale: false };
}

/// Non-identity attribute a conflicting caption lies about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConflictAttr {
    SpriteScale,
    Background,
    Motion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictSpec {
    pub attribute: ConflictAttr,
}

fn next_background(b: BgColor) -> BgColor {
    let i = BgColor::ALL.iter().position(|&x| x == b).unwrap();
    BgColor::ALL[(i + 1) % BgColor::ALL.len()]
}

/// Deterministic template sentence. With a conflict, the named attribute
/// value contradicts the scene that was actually rendered.
pub fn caption(
    identity: &IdentitySpec,
    scene: &SceneSpec,
    style: CaptionStyle,
    conflict: Option<ConflictSpec>,
) -> String {
    let scale_word = match conflict {
        Some(ConflictSpec { attribute: ConflictAttr::SpriteScale }) => {
            if scene.scale_word() == "small" {
                "large"
            } else {
                "small"
            }
        }
        _ => scene.scale_word(),
    };
    let bg_word = match conflict {
        Some(ConflictSpec { attribute: ConflictAttr::Background }) => {
            next_background(scene.background).word()
        }
        _ => scene.background.word(),
    };
    let motion_phrase = match conflict {
        Some(ConflictSpec { attribute: ConflictAttr::Motion }) => {
            scene.motion.contradiction().phrase()
        }
        _ => scene.motion.phrase(),
    };

    let mut words: Vec<&str> = vec!["a"];
    if style.include_scale {
        words.push(scale_word);
    }
    if style.include_identity {
        words.push(identity.color.word());
        if let Some(m) = identity.marking.word() {
            words.push(m);
        }
        words.push(identity.shape.word());
    } else {
        words.push("sprite");
    }
    words.push(motion_phrase);
    words.push("on a");
    words.push(bg_word);
    words.push("background");
    words.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::{ColorName, Marking, Shape};
    use crate::scene::{Motion, Occlusion};

    fn fixture() -> (IdentitySpec, SceneSpec) {
        let id = IdentitySpec {
            identity_id: 0,
            shape: Shape::Circle,
            color: ColorName::Red,
            marking: Marking::Stripe,
            base_color: ColorName::Red.rgb(),
        };
        let sc = SceneSpec {
            background: BgColor::Blue,
            lighting_gain: 1.0,
            motion: Motion::Right,
            sprite_scale: 0.42,
            occlusion: Occlusion::None,
            start_position: (16.0, 16.0),
        };
        (id, sc)
    }

    #[test]
    fn identity_template_reads_naturally() {
        let (id, sc) = fixture();
        let text = caption(&id, &sc, CaptionStyle::WITH_IDENTITY, None);
        assert_eq!(text, "a red striped circle moving right on a blue background");
        assert_eq!(text, caption(&id, &sc, CaptionStyle::WITH_IDENTITY, None));
    }

    #[test]
    fn scene_only_template_never_names_identity_words() {
        let (id, sc) = fixture();
        let text = caption(&id, &sc, CaptionStyle::SCENE_ONLY, None);
        assert_eq!(text, "a small sprite moving right on a blue background");
        for w in ["red", "striped", "circle"] {
            assert!(!text.contains(w));
        }
    }

    #[test]
    fn scale_conflict_contradicts_the_rendered_scene() {
        let (id, sc) = fixture();
        let honest = caption(&id, &sc, CaptionStyle::SCENE_ONLY, None);
        let lying = caption(
            &id,
            &sc,
            CaptionStyle::SCENE_ONLY,
            Some(ConflictSpec { attribute: ConflictAttr::SpriteScale }),
        );
        assert!(honest.contains("small") && !honest.contains("large"));
        assert!(lying.contains("large") && !lying.contains("small"));
        assert_eq!(sc.scale_word(), "small");
    }

    #[test]
    fn background_and_motion_conflicts_swap_exactly_one_phrase() {
        let (id, sc) = fixture();
        let bg = caption(
            &id,
            &sc,
            CaptionStyle::SCENE_ONLY,
            Some(ConflictSpec { attribute: ConflictAttr::Background }),
        );
        assert_eq!(bg, "a small sprite moving right on a yellow background");
        let mv = caption(
            &id,
            &sc,
            CaptionStyle::SCENE_ONLY,
            Some(ConflictSpec { attribute: ConflictAttr::Motion }),
        );
        assert_eq!(mv, "a small sprite moving left on a blue background");
    }

    #[test]
    fn unmarked_identities_drop_the_marking_adjective() {
        let (mut id, sc) = fixture();
        id.marking = Marking::None;
        let text = caption(&id, &sc, CaptionStyle::WITH_IDENTITY, None);
        assert_eq!(text, "a red circle moving right on a blue background");
    }
}
