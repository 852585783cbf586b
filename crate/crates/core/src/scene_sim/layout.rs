use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ActionKind, ActionScript, Fill, GuiScene, Panel, Widget, WidgetKind};
use crate::geometry::Rect;

const TOOLBAR_EXTRA: [&str; 7] = ["Import", "Save", "Render", "Undo", "Redo", "Share", "Publish"];
const MENU_LABELS: [&str; 7] = [
    "New Sequence",
    "Open Project",
    "Import Media",
    "Save As",
    "Close Project",
    "Recent Files",
    "Open Folder",
];
const PREVIEW_ICONS: [&str; 6] = ["Play", "Pause", "Loop", "Mute", "Snap", "Crop"];
const EFFECTS: [&str; 6] = ["Blur", "Fade", "Glow", "Sharpen", "Tint", "Warp"];
const HANDLES: [&str; 3] = ["keyframe marker", "clip handle", "audio marker"];
const TYPED: [&str; 8] = [
    "hello",
    "intro",
    "final cut",
    "draft 2",
    "title card",
    "summer trip",
    "scene 4",
    "credits",
];
const DROP_PURPOSES: [(&str, [&str; 2]); 3] = [
    ("effect panel", ["apply the effect", "add a transition"]),
    ("preview", ["preview the clip", "inspect the frame"]),
    ("project panel", ["store the clip", "save the marker"]),
];

fn slug(label: &str) -> String {
    label.to_lowercase().replace(' ', "_")
}

struct Builder {
    widgets: Vec<Widget>,
    width: u32,
    height: u32,
}

impl Builder {
    fn add(&mut self, label: &str, kind: WidgetKind, rect: Rect, within: &Rect) {
        if rect.w > 0 && rect.h > 0 && within.encloses(&rect) && rect.fits_in(self.width, self.height)
        {
            self.widgets.push(Widget {
                id: slug(label),
                label: label.to_string(),
                kind,
                rect,
            });
        }
    }
}

/// A seeded editor-like layout: toolbar, project panel, preview, effect panel
/// and timeline.
///
/// Every layout contains the `export` button, the `search_box` text field and
/// the `keyframe_marker` handle; the remaining widgets and their jitter vary
/// with `seed`.
///
/// # Panics
///
/// If the screen is smaller than 480x300.
pub fn standard_scene(width: u32, height: u32, seed: u64) -> GuiScene {
    assert!(width >= 480 && height >= 300, "screen too small: {width}x{height}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let toolbar_h = 56;
    let mid = height * 62 / 100;
    let col_a = width * 22 / 100;
    let col_b = width * 72 / 100;
    let panels = vec![
        Panel { name: "toolbar".into(), rect: Rect::new(0, 0, width, toolbar_h) },
        Panel { name: "project panel".into(), rect: Rect::new(0, toolbar_h, col_a, mid - toolbar_h) },
        Panel { name: "preview".into(), rect: Rect::new(col_a, toolbar_h, col_b - col_a, mid - toolbar_h) },
        Panel { name: "effect panel".into(), rect: Rect::new(col_b, toolbar_h, width - col_b, mid - toolbar_h) },
        Panel { name: "timeline".into(), rect: Rect::new(0, mid, width, height - mid) },
    ];
    let mut b = Builder { widgets: Vec::new(), width, height };

    // toolbar
    let tb = panels[0].rect;
    let n_buttons = ((width - 24) / 140).min(5) as usize;
    let mut labels: Vec<&str> = TOOLBAR_EXTRA.choose_multiple(&mut rng, n_buttons - 1).copied().collect();
    labels.push("Export");
    labels.shuffle(&mut rng);
    let x0 = 12 + rng.random_range(0..=8);
    for (i, label) in labels.iter().enumerate() {
        b.add(label, WidgetKind::Button, Rect::new(x0 + i as u32 * 140, 8, 128, 40), &tb);
    }

    // project panel
    let pp = panels[1].rect;
    let inner_w = pp.w.saturating_sub(20);
    b.add("search box", WidgetKind::TextField, Rect::new(pp.x + 10, pp.y + 24, inner_w, 34), &pp);
    let rows = (pp.h.saturating_sub(80) / 42) as usize;
    for (i, label) in MENU_LABELS.choose_multiple(&mut rng, rows.min(5)).enumerate() {
        let y = pp.y + 70 + i as u32 * 42;
        b.add(label, WidgetKind::MenuItem, Rect::new(pp.x + 10, y, inner_w, 32), &pp);
    }

    // preview
    let pv = panels[2].rect;
    let field_w = 260.min(pv.w.saturating_sub(40));
    let fx = pv.x + 20 + rng.random_range(0..=20);
    b.add("title field", WidgetKind::TextField, Rect::new(fx, pv.y + 28, field_w, 36), &pv);
    let n_icons = (pv.w.saturating_sub(40) / 84).min(3) as usize;
    for (i, label) in PREVIEW_ICONS.choose_multiple(&mut rng, n_icons).enumerate() {
        let x = pv.x + 20 + i as u32 * 84;
        b.add(label, WidgetKind::Icon, Rect::new(x, pv.bottom() - 76, 64, 56), &pv);
    }

    // effect panel
    let ep = panels[3].rect;
    let n_fx = (ep.h.saturating_sub(40) / 60).min(3) as usize;
    let fx_w = 96.min(ep.w.saturating_sub(20));
    for (i, label) in EFFECTS.choose_multiple(&mut rng, n_fx).enumerate() {
        let y = ep.y + 30 + i as u32 * 60;
        b.add(label, WidgetKind::Icon, Rect::new(ep.x + 10, y, fx_w, 44), &ep);
    }

    // timeline
    let tl = panels[4].rect;
    let n_handles = (tl.h.saturating_sub(20) / 56).clamp(1, 3) as usize;
    for (i, label) in HANDLES.iter().take(n_handles).enumerate() {
        let x = rng.random_range(40..width / 2);
        let y = tl.y + 20 + i as u32 * 56;
        b.add(label, WidgetKind::Handle, Rect::new(x, y, 28, 48), &tl);
    }

    GuiScene {
        width,
        height,
        widgets: b.widgets,
        panels,
        cursor_sprite: "arrow".into(),
        background: Fill::Solid([238, 238, 240]),
    }
}

/// A valid script of class `action` against a random compatible widget.
pub fn random_script(scene: &GuiScene, action: ActionKind, seed: u64) -> ActionScript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a11c);
    let of_kind = |kinds: &[WidgetKind]| -> Vec<&Widget> {
        scene.widgets.iter().filter(|w| kinds.contains(&w.kind)).collect()
    };
    match action {
        ActionKind::LeftClick | ActionKind::RightClick | ActionKind::DoubleClick => {
            let pool = of_kind(&[WidgetKind::Button, WidgetKind::Icon, WidgetKind::MenuItem]);
            let w = pool.choose(&mut rng).expect("standard scenes have clickable widgets");
            ActionScript::click(action, &w.id, seed)
        }
        ActionKind::Type => {
            let pool = of_kind(&[WidgetKind::TextField]);
            let w = pool.choose(&mut rng).expect("standard scenes have text fields");
            let text = TYPED.choose(&mut rng).expect("non-empty");
            ActionScript::type_text(&w.id, text, seed)
        }
        ActionKind::Drag => {
            let pool = of_kind(&[WidgetKind::Handle]);
            let w = pool.choose(&mut rng).expect("standard scenes have handles");
            let from = scene.panel_at(w.rect.center()).expect("handles sit in the timeline");
            let (to, purposes) = DROP_PURPOSES.choose(&mut rng).expect("non-empty");
            let purpose = purposes.choose(&mut rng).expect("non-empty");
            ActionScript::drag(&w.id, &from.name, to, purpose, seed)
        }
    }
}
