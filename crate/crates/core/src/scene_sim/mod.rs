//! Deterministic synthetic GUI environment.
//!
//! A [`GuiScene`] is a flat-shaded layout of panels and widgets. Executing an
//! [`ActionScript`] against it yields a [`GeneratedSample`]: the rendered frames,
//! the keylog recorded while the action ran, the ground-truth caption and the
//! ground-truth before/after keyframes.
//!
//! Everything here is a pure function of its inputs. Two calls with the same
//! scene, script and frame count produce bit-identical samples.

mod action;
mod keylog;
mod layout;
mod render;
mod template;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::Frame;
use crate::geometry::{Point, Rect};
use crate::sprite::CursorSpriteLibrary;

pub use action::{execute_action, Timing, DOUBLE_CLICK_GAP_MS, MS_PER_FRAME};
pub use keylog::{segment_by_keylog, EventKind, KeyEvent, Keylog, Payload, Segment};
pub use layout::{random_script, standard_scene};
pub use render::{context_menu_rect, render_scene, Overlay, CONTEXT_MENU_ITEMS};
pub use template::caption_template;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SceneError {
    #[error("cursor position ({x}, {y}) is outside the {width}x{height} screen")]
    CursorOutOfBounds {
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },
    #[error("unknown widget `{0}`")]
    UnknownWidget(String),
    #[error("unsupported action: {0}")]
    UnsupportedAction(String),
    #[error("malformed keylog: {0}")]
    MalformedKeylog(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidgetKind {
    Button,
    Icon,
    MenuItem,
    TextField,
    Handle,
}

impl WidgetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            WidgetKind::Button => "button",
            WidgetKind::Icon => "icon",
            WidgetKind::MenuItem => "menu_item",
            WidgetKind::TextField => "text_field",
            WidgetKind::Handle => "handle",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Widget {
    pub id: String,
    pub label: String,
    pub kind: WidgetKind,
    pub rect: Rect,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Panel {
    pub name: String,
    pub rect: Rect,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fill {
    Solid([u8; 3]),
    VerticalGradient { top: [u8; 3], bottom: [u8; 3] },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuiScene {
    pub width: u32,
    pub height: u32,
    pub widgets: Vec<Widget>,
    pub panels: Vec<Panel>,
    pub cursor_sprite: String,
    pub background: Fill,
}

impl GuiScene {
    /// Check layout invariants: unique ids and names, everything on screen.
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |msg: String| Err(SceneError::InvalidScene(msg));
        if self.width == 0 || self.height == 0 {
            return bad("zero-sized screen".into());
        }
        if self.widgets.is_empty() {
            return bad("scene has no widgets".into());
        }
        let mut ids = std::collections::HashSet::new();
        for w in &self.widgets {
            if !ids.insert(w.id.as_str()) {
                return bad(format!("duplicate widget id `{}`", w.id));
            }
            if w.rect.w == 0 || w.rect.h == 0 {
                return bad(format!("widget `{}` has an empty rect", w.id));
            }
            if w.label.trim().is_empty() {
                return bad(format!("widget `{}` has an empty label", w.id));
            }
            if !w.rect.fits_in(self.width, self.height) {
                return bad(format!("widget `{}` is off screen", w.id));
            }
        }
        let mut names = std::collections::HashSet::new();
        for p in &self.panels {
            if !names.insert(p.name.as_str()) {
                return bad(format!("duplicate panel `{}`", p.name));
            }
            if !p.rect.fits_in(self.width, self.height) {
                return bad(format!("panel `{}` is off screen", p.name));
            }
        }
        if CursorSpriteLibrary::builtin().get(&self.cursor_sprite).is_none() {
            return bad(format!("unknown cursor sprite `{}`", self.cursor_sprite));
        }
        Ok(())
    }

    pub fn widget(&self, id: &str) -> Option<&Widget> {
        self.widgets.iter().find(|w| w.id == id)
    }

    pub fn panel(&self, name: &str) -> Option<&Panel> {
        self.panels.iter().find(|p| p.name == name)
    }

    /// The first panel containing `p`.
    pub fn panel_at(&self, p: Point) -> Option<&Panel> {
        self.panels.iter().find(|panel| panel.rect.contains(p))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionKind {
    LeftClick,
    RightClick,
    DoubleClick,
    Drag,
    Type,
}

impl ActionKind {
    pub const ALL: [ActionKind; 5] = [
        ActionKind::LeftClick,
        ActionKind::RightClick,
        ActionKind::DoubleClick,
        ActionKind::Drag,
        ActionKind::Type,
    ];

    /// Caption spelling of the action.
    pub fn caption_name(self) -> &'static str {
        match self {
            ActionKind::LeftClick => "Left-Click",
            ActionKind::RightClick => "Right-Click",
            ActionKind::DoubleClick => "Double-Click",
            ActionKind::Drag => "Drag",
            ActionKind::Type => "Type",
        }
    }
}

/// One scripted atomic action.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionScript {
    pub action: ActionKind,
    pub target_widget: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drag_from: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drag_to: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purpose: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub typed_text: Option<String>,
    pub seed: u64,
}

impl ActionScript {
    pub fn click(action: ActionKind, target: &str, seed: u64) -> Self {
        Self {
            action,
            target_widget: target.to_string(),
            drag_from: None,
            drag_to: None,
            purpose: None,
            typed_text: None,
            seed,
        }
    }

    pub fn drag(target: &str, from: &str, to: &str, purpose: &str, seed: u64) -> Self {
        Self {
            action: ActionKind::Drag,
            target_widget: target.to_string(),
            drag_from: Some(from.to_string()),
            drag_to: Some(to.to_string()),
            purpose: Some(purpose.to_string()),
            typed_text: None,
            seed,
        }
    }

    pub fn type_text(target: &str, text: &str, seed: u64) -> Self {
        Self {
            action: ActionKind::Type,
            target_widget: target.to_string(),
            drag_from: None,
            drag_to: None,
            purpose: None,
            typed_text: Some(text.to_string()),
            seed,
        }
    }

    /// Drag fields present iff the action is a drag; text present iff typing.
    pub fn validate(&self) -> Result<(), SceneError> {
        let is_drag = self.action == ActionKind::Drag;
        let drag_fields = [&self.drag_from, &self.drag_to, &self.purpose];
        if is_drag && drag_fields.iter().any(|f| f.as_deref().is_none_or(str::is_empty)) {
            return Err(SceneError::UnsupportedAction(
                "drag requires drag_from, drag_to and purpose".into(),
            ));
        }
        if !is_drag && drag_fields.iter().any(|f| f.is_some()) {
            return Err(SceneError::UnsupportedAction(format!(
                "{:?} does not take drag fields",
                self.action
            )));
        }
        match (&self.typed_text, self.action) {
            (Some(t), ActionKind::Type) => {
                if t.is_empty() || !t.chars().all(|c| c.is_ascii_graphic() || c == ' ') {
                    return Err(SceneError::UnsupportedAction(
                        "typed text must be non-empty printable ASCII".into(),
                    ));
                }
                if t.contains('\'') {
                    return Err(SceneError::UnsupportedAction(
                        "typed text may not contain single quotes".into(),
                    ));
                }
            }
            (None, ActionKind::Type) => {
                return Err(SceneError::UnsupportedAction("type requires typed_text".into()))
            }
            (Some(_), a) => {
                return Err(SceneError::UnsupportedAction(format!(
                    "{a:?} does not take typed_text"
                )))
            }
            (None, _) => {}
        }
        Ok(())
    }
}

/// Output of [`execute_action`].
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedSample {
    pub frames: Vec<Frame>,
    pub keylog: Keylog,
    pub gt_caption: String,
    /// `(s, e)`: last frame before the first state change, first frame after the last.
    pub gt_keyframes: (usize, usize),
    pub action_class: ActionKind,
    pub scene_snapshot: GuiScene,
    /// Pointer position in every frame.
    pub cursor_track: Vec<Point>,
}
