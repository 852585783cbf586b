use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::render::{render_scene, Overlay, CONTEXT_MENU_ITEMS};
use super::{
    caption_template, ActionKind, ActionScript, EventKind, GeneratedSample, GuiScene, KeyEvent,
    Keylog, SceneError, WidgetKind,
};
use crate::geometry::{Point, Rect};

/// Keylog timestamps map to frames at a fixed rate.
pub const MS_PER_FRAME: u64 = 100;
/// Release-to-press gap inside a simulated double-click.
pub const DOUBLE_CLICK_GAP_MS: u64 = 30;

/// Furthest the pointer starts from its target, per axis.
const START_SPREAD: i64 = 260;
const MIN_START_OFFSET: i64 = 40;
/// Start positions are redrawn until one lies this far from the target on some axis.
const FAR_START: i64 = 160;
const START_ATTEMPTS: usize = 8;

/// Frame schedule of one simulated action.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Timing {
    /// Frames the pointer rests at its start position before moving.
    pub delay: usize,
    /// Frames spent travelling to the target.
    pub travel: usize,
    /// Frame on which the pointer reaches the target; nothing has changed yet.
    pub arrive: usize,
}

impl Timing {
    fn new(num_frames: usize, rng: &mut ChaCha8Rng) -> Self {
        let delay = rng.random_range(0..(num_frames / 3).max(1));
        let travel = (num_frames / 5).max(1);
        Self {
            delay,
            travel,
            arrive: delay + travel,
        }
    }

    /// Frames left after arrival, excluding the arrival frame itself.
    fn budget(&self, num_frames: usize) -> usize {
        num_frames - 1 - self.arrive
    }
}

struct Track {
    cursor: Vec<Point>,
    overlays: Vec<Vec<Overlay>>,
}

impl Track {
    fn set_from(&mut self, start: usize, cursor: Point, overlays: Vec<Overlay>) {
        for i in start..self.cursor.len() {
            self.cursor[i] = cursor;
            self.overlays[i] = overlays.clone();
        }
    }
}

/// Run `script` against `scene`, recording `num_frames` frames.
///
/// The pointer rests at a seeded random start for a random delay within the
/// first third of the video, travels linearly to the target, performs the
/// action and then holds still until the end. `gt_keyframes` is
/// `(arrive, first frame of the final state)`.
pub fn execute_action(
    scene: &GuiScene,
    script: &ActionScript,
    num_frames: usize,
) -> Result<GeneratedSample, SceneError> {
    scene.validate()?;
    script.validate()?;
    if num_frames < 4 {
        return Err(SceneError::UnsupportedAction(format!(
            "need at least 4 frames, got {num_frames}"
        )));
    }
    let widget = scene
        .widget(&script.target_widget)
        .ok_or_else(|| SceneError::UnknownWidget(script.target_widget.clone()))?
        .clone();

    let mut rng = ChaCha8Rng::seed_from_u64(script.seed);
    let timing = Timing::new(num_frames, &mut rng);
    let budget = timing.budget(num_frames);
    debug_assert!(budget >= 2);
    let target = widget.rect.center();
    let start = start_position(target, scene, &mut rng);

    let mut track = Track {
        cursor: vec![start; num_frames],
        overlays: vec![Vec::new(); num_frames],
    };
    for step in 1..=timing.travel {
        let t = step as f64 / timing.travel as f64;
        track.set_from(timing.delay + step, start.lerp(target, t), Vec::new());
    }

    let arrive = timing.arrive;
    let base = arrive as u64 * MS_PER_FRAME;
    let mut events = Vec::new();
    let end_state = match script.action {
        ActionKind::LeftClick => {
            events.push(KeyEvent::mouse(base + 20, EventKind::MouseDown, target));
            events.push(KeyEvent::mouse(base + 60, EventKind::MouseUp, target));
            let hold = (num_frames / 6).clamp(1, budget - 1);
            let lit = vec![Overlay::Highlight {
                widget: widget.id.clone(),
            }];
            track.set_from(arrive + 1, target, lit);
            track.set_from(arrive + hold + 1, target, Vec::new());
            arrive + hold + 1
        }
        ActionKind::RightClick => {
            events.push(KeyEvent::mouse(base + 20, EventKind::MouseDown, target));
            events.push(KeyEvent::mouse(base + 60, EventKind::MouseUp, target));
            let menu = Overlay::ContextMenu {
                at: target,
                items: CONTEXT_MENU_ITEMS.iter().map(|s| s.to_string()).collect(),
            };
            track.set_from(arrive + 1, target, vec![menu]);
            arrive + 1
        }
        ActionKind::DoubleClick => {
            let first_up = base + 30;
            events.push(KeyEvent::mouse(base + 10, EventKind::MouseDown, target));
            events.push(KeyEvent::mouse(first_up, EventKind::MouseUp, target));
            events.push(KeyEvent::mouse(
                first_up + DOUBLE_CLICK_GAP_MS,
                EventKind::MouseDown,
                target,
            ));
            events.push(KeyEvent::mouse(
                first_up + DOUBLE_CLICK_GAP_MS + 20,
                EventKind::MouseUp,
                target,
            ));
            let swap = Overlay::PanelSwap {
                rect: swap_rect(target, scene),
                title: format!("{} opened", widget.label),
            };
            track.set_from(arrive + 1, target, vec![swap]);
            arrive + 1
        }
        ActionKind::Drag => {
            let (from, to) = (
                script.drag_from.as_deref().unwrap_or_default(),
                script.drag_to.as_deref().unwrap_or_default(),
            );
            let from_panel = scene
                .panel(from)
                .ok_or_else(|| SceneError::UnsupportedAction(format!("unknown panel `{from}`")))?;
            let to_panel = scene
                .panel(to)
                .ok_or_else(|| SceneError::UnsupportedAction(format!("unknown panel `{to}`")))?;
            if !from_panel.rect.contains(target) {
                return Err(SceneError::UnsupportedAction(format!(
                    "`{}` is not inside panel `{from}`",
                    widget.id
                )));
            }
            let dest = to_panel.rect.center();
            let steps = (num_frames / 4).clamp(1, budget - 1);
            events.push(KeyEvent::mouse(base + 50, EventKind::MouseDown, target));
            for j in 1..=steps {
                let p = target.lerp(dest, j as f64 / steps as f64);
                let lifted = Overlay::MoveWidget {
                    widget: widget.id.clone(),
                    rect: rect_at(&widget.rect, p, scene),
                    lifted: true,
                };
                track.set_from(arrive + j, p, vec![lifted]);
                events.push(KeyEvent::mouse(
                    (arrive + j) as u64 * MS_PER_FRAME,
                    EventKind::MouseMove,
                    p,
                ));
            }
            events.push(KeyEvent::mouse(
                (arrive + steps) as u64 * MS_PER_FRAME + 50,
                EventKind::MouseUp,
                dest,
            ));
            let dropped = Overlay::MoveWidget {
                widget: widget.id.clone(),
                rect: rect_at(&widget.rect, dest, scene),
                lifted: false,
            };
            track.set_from(arrive + steps + 1, dest, vec![dropped]);
            arrive + steps + 1
        }
        ActionKind::Type => {
            if widget.kind != WidgetKind::TextField {
                return Err(SceneError::UnsupportedAction(format!(
                    "cannot type into {} `{}`",
                    widget.kind.as_str(),
                    widget.id
                )));
            }
            let text: Vec<char> = script.typed_text.as_deref().unwrap_or_default().chars().collect();
            let n = text.len();
            let typing_frames = n.min(num_frames / 4).clamp(1, budget - 1);
            // char i becomes visible on frame arrive + 1 + slot(i)
            let slot = |i: usize| i * typing_frames / n;
            for f in 0..typing_frames {
                let shown: String = (0..n).filter(|&i| slot(i) <= f).map(|i| text[i]).collect();
                let entry = Overlay::TextEntry {
                    widget: widget.id.clone(),
                    text: shown,
                    focused: true,
                };
                track.set_from(arrive + 1 + f, target, vec![entry]);
            }
            for f in 0..typing_frames {
                let in_frame: Vec<usize> = (0..n).filter(|&i| slot(i) == f).collect();
                let frame_base = (arrive + f) as u64 * MS_PER_FRAME;
                for (rank, &i) in in_frame.iter().enumerate() {
                    let offset = 10 + (rank as u64 * 80) / in_frame.len() as u64;
                    events.push(KeyEvent::key(frame_base + offset, text[i]));
                }
            }
            let done = Overlay::TextEntry {
                widget: widget.id.clone(),
                text: text.iter().collect(),
                focused: false,
            };
            track.set_from(arrive + typing_frames + 1, target, vec![done]);
            arrive + typing_frames + 1
        }
    };
    debug_assert!(end_state < num_frames);

    let frames = track
        .cursor
        .iter()
        .zip(&track.overlays)
        .enumerate()
        .map(|(i, (&c, o))| {
            render_scene(scene, c, o).map(|mut f| {
                f.index = i;
                f
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(GeneratedSample {
        frames,
        keylog: Keylog::new(events),
        gt_caption: caption_template(&widget, script),
        gt_keyframes: (arrive, end_state),
        action_class: script.action,
        scene_snapshot: scene.clone(),
        cursor_track: track.cursor,
    })
}

fn start_position(target: Point, scene: &GuiScene, rng: &mut ChaCha8Rng) -> Point {
    // the whole sprite stays on screen at the start position
    let (tail_x, tail_y) = super::render::cursor_library()
        .get(&scene.cursor_sprite)
        .map_or((0, 0), |s| {
            (
                (s.width - s.hotspot.x) as i64,
                (s.height - s.hotspot.y) as i64,
            )
        });
    let max_x = (scene.width as i64 - tail_x).max(0);
    let max_y = (scene.height as i64 - tail_y).max(0);
    let mut best = target;
    let mut best_gap = -1;
    for _ in 0..START_ATTEMPTS {
        let mut offset = || {
            let mag = rng.random_range(MIN_START_OFFSET..=START_SPREAD);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        };
        let (dx, dy) = (offset(), offset());
        let x = (target.x as i64 + dx).clamp(0, max_x);
        let y = (target.y as i64 + dy).clamp(0, max_y);
        let gap = (x - target.x as i64).abs().max((y - target.y as i64).abs());
        if gap > best_gap {
            best = Point::new(x as u32, y as u32);
            best_gap = gap;
        }
        if gap >= FAR_START {
            break;
        }
    }
    best
}

/// `template`'s size, centred on `p` and kept on screen.
fn rect_at(template: &Rect, p: Point, scene: &GuiScene) -> Rect {
    Rect::centered_within(p, template.w, template.h, scene.width, scene.height)
}

fn swap_rect(target: Point, scene: &GuiScene) -> Rect {
    let w = (scene.width * 2 / 5).max(1);
    let h = (scene.height * 9 / 20).max(1);
    Rect::centered_within(target, w, h, scene.width, scene.height)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_sim::{standard_scene, Payload};

    fn scene() -> GuiScene {
        standard_scene(1280, 800, 1)
    }

    fn point_of(e: &KeyEvent) -> Point {
        match e.payload {
            Payload::Point(p) => p,
            _ => panic!("not a mouse event"),
        }
    }

    #[test]
    fn left_click_logs_one_press_inside_the_target() {
        let s = scene();
        let script = ActionScript::click(ActionKind::LeftClick, "export", 7);
        let sample = execute_action(&s, &script, 20).unwrap();
        let downs: Vec<_> = sample.keylog.entries.iter().filter(|e| e.kind == EventKind::MouseDown).collect();
        let ups: Vec<_> = sample.keylog.entries.iter().filter(|e| e.kind == EventKind::MouseUp).collect();
        assert_eq!((downs.len(), ups.len()), (1, 1));
        assert_eq!(point_of(downs[0]), point_of(ups[0]));
        assert!(s.widget("export").unwrap().rect.contains(point_of(downs[0])));
        assert_eq!(sample.gt_caption, "Left-Click on Export button");
        assert_eq!(sample.frames.len(), 20);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let s = scene();
        let script = ActionScript::type_text("search_box", "hello", 42);
        assert_eq!(execute_action(&s, &script, 20).unwrap(), execute_action(&s, &script, 20).unwrap());
    }

    #[test]
    fn unknown_widget_and_bad_scripts() {
        let s = scene();
        let err = execute_action(&s, &ActionScript::click(ActionKind::LeftClick, "nope", 1), 10);
        assert_eq!(err.unwrap_err(), SceneError::UnknownWidget("nope".into()));
        let mut drag = ActionScript::click(ActionKind::Drag, "keyframe_marker", 1);
        drag.drag_from = Some("timeline".into());
        assert!(matches!(
            execute_action(&s, &drag, 10),
            Err(SceneError::UnsupportedAction(_))
        ));
        let typed = ActionScript::type_text("export", "x", 1);
        assert!(matches!(
            execute_action(&s, &typed, 10),
            Err(SceneError::UnsupportedAction(_))
        ));
        let short = ActionScript::click(ActionKind::LeftClick, "export", 1);
        assert!(execute_action(&s, &short, 3).is_err());
    }

    #[test]
    fn double_click_has_two_pairs_with_fixed_gap() {
        let s = scene();
        let sample = execute_action(&s, &ActionScript::click(ActionKind::DoubleClick, "export", 3), 20).unwrap();
        let e = &sample.keylog.entries;
        assert_eq!(sample.keylog.count(EventKind::MouseDown), 2);
        assert_eq!(sample.keylog.count(EventKind::MouseUp), 2);
        assert_eq!(e[2].timestamp_ms - e[1].timestamp_ms, DOUBLE_CLICK_GAP_MS);
    }

    #[test]
    fn typing_logs_one_key_per_char() {
        let s = scene();
        let sample = execute_action(&s, &ActionScript::type_text("search_box", "two words", 9), 20).unwrap();
        assert_eq!(sample.keylog.count(EventKind::KeyPress), 9);
        assert_eq!(sample.gt_caption, "Type 'two words' in search box text_field");
        sample.keylog.validate().unwrap();
    }

    #[test]
    fn every_action_fits_in_four_frames() {
        let s = scene();
        for script in [
            ActionScript::click(ActionKind::LeftClick, "export", 1),
            ActionScript::click(ActionKind::RightClick, "export", 1),
            ActionScript::click(ActionKind::DoubleClick, "export", 1),
            ActionScript::drag("keyframe_marker", "timeline", "effect panel", "apply the effect", 1),
            ActionScript::type_text("search_box", "abc", 1),
        ] {
            for n in 4..12 {
                let sample = execute_action(&s, &script, n).unwrap();
                let (a, e) = sample.gt_keyframes;
                assert!(a < e && e < n, "{script:?} n={n}");
            }
        }
    }
}
