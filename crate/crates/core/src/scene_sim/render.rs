use std::sync::OnceLock;

use font8x8::UnicodeFonts;
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{Fill, GuiScene, SceneError, Widget, WidgetKind};
use crate::frame::Frame;
use crate::geometry::{Point, Rect};
use crate::sprite::CursorSpriteLibrary;

const PANEL_SHADES: [[u8; 3]; 3] = [[232, 233, 236], [226, 228, 232], [236, 236, 238]];
const PANEL_TITLE: [u8; 3] = [150, 152, 160];
const BORDER: [u8; 3] = [160, 162, 170];
const TEXT: [u8; 3] = [40, 40, 48];
const PLACEHOLDER: [u8; 3] = [165, 165, 170];
const HIGHLIGHT: [u8; 3] = [0, 90, 255];
const LIFTED: [u8; 3] = [255, 140, 0];
const DRAG_SHADOW: [u8; 3] = [40, 40, 48];
/// Offset of the shadow under a lifted widget.
const SHADOW_OFFSET: u32 = 8;
const FOCUS_FILL: [u8; 3] = [255, 246, 190];
const FOCUS_BORDER: [u8; 3] = [30, 100, 230];
const MENU_FILL: [u8; 3] = [252, 252, 252];
const SWAP_FILL: [u8; 3] = [44, 46, 62];
const SWAP_HEADER: [u8; 3] = [80, 84, 130];
const SWAP_ROW: [u8; 3] = [70, 74, 96];

/// Entries of the context menu a right-click opens.
pub const CONTEXT_MENU_ITEMS: [&str; 5] = ["Cut", "Copy", "Paste", "Rename", "Properties"];

const MENU_WIDTH: u32 = 200;
const MENU_ROW: u32 = 26;

/// Transient visual state layered over the static scene.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overlay {
    /// Solid highlight over a clicked widget.
    Highlight { widget: String },
    /// Popup menu anchored at a point.
    ContextMenu { at: Point, items: Vec<String> },
    /// Large window that replaces part of the layout.
    PanelSwap { rect: Rect, title: String },
    /// Text field content; `focused` fields get a focus ring.
    TextEntry {
        widget: String,
        text: String,
        focused: bool,
    },
    /// Widget drawn at a different place; `lifted` while being dragged.
    MoveWidget {
        widget: String,
        rect: Rect,
        lifted: bool,
    },
}

/// Screen rectangle a context menu anchored at `at` occupies.
pub fn context_menu_rect(at: Point, n_items: usize, width: u32, height: u32) -> Rect {
    let w = MENU_WIDTH.min(width);
    let h = (8 + MENU_ROW * n_items as u32).min(height);
    Rect::new(at.x.min(width - w), at.y.min(height - h), w, h)
}

pub(super) fn cursor_library() -> &'static CursorSpriteLibrary {
    static LIB: OnceLock<CursorSpriteLibrary> = OnceLock::new();
    LIB.get_or_init(CursorSpriteLibrary::builtin)
}

/// Rasterize `scene` with its overlays and the cursor sprite on top.
///
/// The sprite's hotspot is placed on `cursor`; parts falling off screen are clipped.
pub fn render_scene(
    scene: &GuiScene,
    cursor: Point,
    overlays: &[Overlay],
) -> Result<Frame, SceneError> {
    if cursor.x >= scene.width || cursor.y >= scene.height {
        return Err(SceneError::CursorOutOfBounds {
            x: cursor.x,
            y: cursor.y,
            width: scene.width,
            height: scene.height,
        });
    }
    let sprite = cursor_library()
        .get(&scene.cursor_sprite)
        .ok_or_else(|| SceneError::InvalidScene(format!("unknown sprite {}", scene.cursor_sprite)))?;

    let mut canvas = Canvas::new(scene.width, scene.height);
    canvas.background(scene.background);

    for (i, panel) in scene.panels.iter().enumerate() {
        canvas.fill(panel.rect, PANEL_SHADES[i % PANEL_SHADES.len()]);
        canvas.outline(panel.rect, 1, BORDER);
        canvas.text(
            &panel.name.to_uppercase(),
            panel.rect.x + 6,
            panel.rect.y + 4,
            1,
            PANEL_TITLE,
            panel.rect,
        );
    }

    for widget in &scene.widgets {
        let moved = overlays.iter().find_map(|o| match o {
            Overlay::MoveWidget { widget: id, rect, lifted } if *id == widget.id => {
                Some((*rect, *lifted))
            }
            _ => None,
        });
        let entry = overlays.iter().find_map(|o| match o {
            Overlay::TextEntry { widget: id, text, focused } if *id == widget.id => {
                Some((text.as_str(), *focused))
            }
            _ => None,
        });
        let highlighted = overlays
            .iter()
            .any(|o| matches!(o, Overlay::Highlight { widget: id } if *id == widget.id));

        match (moved, entry) {
            (Some((rect, lifted)), _) => {
                let moved_widget = Widget { rect, ..widget.clone() };
                if lifted {
                    let shadow = Rect::new(rect.x + SHADOW_OFFSET, rect.y + SHADOW_OFFSET, rect.w, rect.h);
                    canvas.fill(shadow, DRAG_SHADOW);
                }
                canvas.widget(&moved_widget, lifted.then_some(LIFTED));
            }
            (None, Some((text, focused))) => canvas.text_entry(widget, text, focused),
            (None, None) => canvas.widget(widget, None),
        }
        if highlighted {
            let r = widget.rect.inflate(4, scene.width, scene.height);
            canvas.fill(r, HIGHLIGHT);
            canvas.text_centered(&widget.label, r, 1, [255, 255, 255]);
        }
    }

    for overlay in overlays {
        match overlay {
            Overlay::ContextMenu { at, items } => {
                let r = context_menu_rect(*at, items.len(), scene.width, scene.height);
                canvas.fill(r, MENU_FILL);
                canvas.outline(r, 1, BORDER);
                for (i, item) in items.iter().enumerate() {
                    let y = r.y + 4 + MENU_ROW * i as u32;
                    canvas.text(item, r.x + 12, y + 9, 1, TEXT, r);
                    if i + 1 < items.len() {
                        canvas.fill(Rect::new(r.x + 6, y + MENU_ROW - 1, r.w - 12, 1), BORDER);
                    }
                }
            }
            Overlay::PanelSwap { rect, title } => {
                let r = clip(*rect, scene.width, scene.height);
                canvas.fill(r, SWAP_FILL);
                let header = Rect::new(r.x, r.y, r.w, 28.min(r.h));
                canvas.fill(header, SWAP_HEADER);
                canvas.text(title, r.x + 10, r.y + 10, 1, [255, 255, 255], header);
                let mut y = r.y + 44;
                while y + 20 < r.bottom() {
                    canvas.fill(Rect::new(r.x + 16, y, r.w.saturating_sub(32), 14), SWAP_ROW);
                    y += 30;
                }
            }
            _ => {}
        }
    }

    let origin_x = cursor.x as i64 - sprite.hotspot.x as i64;
    let origin_y = cursor.y as i64 - sprite.hotspot.y as i64;
    for sy in 0..sprite.height {
        for sx in 0..sprite.width {
            if let Some(v) = sprite.at(sx, sy) {
                canvas.put(origin_x + sx as i64, origin_y + sy as i64, [v, v, v]);
            }
        }
    }

    Ok(Frame::new(0, canvas.img))
}

fn clip(r: Rect, width: u32, height: u32) -> Rect {
    let x = r.x.min(width);
    let y = r.y.min(height);
    Rect::new(x, y, r.w.min(width - x), r.h.min(height - y))
}

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn new(width: u32, height: u32) -> Self {
        Self {
            img: RgbImage::new(width, height),
        }
    }

    fn background(&mut self, fill: Fill) {
        let h = self.img.height().max(2) - 1;
        for (_, y, px) in self.img.enumerate_pixels_mut() {
            *px = Rgb(match fill {
                Fill::Solid(c) => c,
                Fill::VerticalGradient { top, bottom } => {
                    let t = y as f64 / h as f64;
                    std::array::from_fn(|i| {
                        (top[i] as f64 + (bottom[i] as f64 - top[i] as f64) * t).round() as u8
                    })
                }
            });
        }
    }

    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, Rgb(c));
        }
    }

    fn fill(&mut self, r: Rect, c: [u8; 3]) {
        let r = clip(r, self.img.width(), self.img.height());
        for y in r.y..r.bottom() {
            for x in r.x..r.right() {
                self.img.put_pixel(x, y, Rgb(c));
            }
        }
    }

    fn outline(&mut self, r: Rect, stroke: u32, c: [u8; 3]) {
        let s = stroke.min(r.w / 2).min(r.h / 2).max(1);
        self.fill(Rect::new(r.x, r.y, r.w, s), c);
        self.fill(Rect::new(r.x, r.bottom() - s, r.w, s), c);
        self.fill(Rect::new(r.x, r.y, s, r.h), c);
        self.fill(Rect::new(r.right() - s, r.y, s, r.h), c);
    }

    /// 8x8 bitmap text, clipped to `bounds`.
    fn text(&mut self, s: &str, x: u32, y: u32, scale: u32, c: [u8; 3], bounds: Rect) {
        for (i, ch) in s.chars().enumerate() {
            let Some(glyph) = font8x8::BASIC_FONTS.get(ch) else {
                continue;
            };
            let gx = x + i as u32 * 8 * scale;
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..8u32 {
                    if bits >> col & 1 == 0 {
                        continue;
                    }
                    for dy in 0..scale {
                        for dx in 0..scale {
                            let p = Point::new(gx + col * scale + dx, y + row as u32 * scale + dy);
                            if bounds.contains(p) {
                                self.put(p.x as i64, p.y as i64, c);
                            }
                        }
                    }
                }
            }
        }
    }

    fn text_centered(&mut self, s: &str, r: Rect, scale: u32, c: [u8; 3]) {
        let tw = s.chars().count() as u32 * 8 * scale;
        let x = r.x + r.w.saturating_sub(tw) / 2;
        let y = r.y + r.h.saturating_sub(8 * scale) / 2;
        self.text(s, x, y, scale, c, r);
    }

    fn widget(&mut self, w: &Widget, fill_override: Option<[u8; 3]>) {
        let (fill, bordered) = match w.kind {
            WidgetKind::Button => ([205, 208, 214], true),
            WidgetKind::Icon => ([190, 200, 215], true),
            WidgetKind::MenuItem => ([220, 221, 226], false),
            WidgetKind::TextField => ([255, 255, 255], true),
            WidgetKind::Handle => ([110, 120, 145], true),
        };
        self.fill(w.rect, fill_override.unwrap_or(fill));
        if bordered {
            self.outline(w.rect, 1, BORDER);
        }
        match w.kind {
            WidgetKind::MenuItem => {
                let y = w.rect.y + w.rect.h.saturating_sub(8) / 2;
                self.text(&w.label, w.rect.x + 10, y, 1, TEXT, w.rect);
            }
            WidgetKind::TextField => {
                let y = w.rect.y + w.rect.h.saturating_sub(8) / 2;
                self.text(&w.label, w.rect.x + 8, y, 1, PLACEHOLDER, w.rect);
            }
            WidgetKind::Handle => {}
            _ => self.text_centered(&w.label, w.rect, 1, TEXT),
        }
    }

    fn text_entry(&mut self, w: &Widget, text: &str, focused: bool) {
        if focused {
            self.fill(w.rect, FOCUS_FILL);
            self.outline(w.rect, 3, FOCUS_BORDER);
        } else {
            self.fill(w.rect, [255, 255, 255]);
            self.outline(w.rect, 1, BORDER);
        }
        if text.is_empty() {
            let y = w.rect.y + w.rect.h.saturating_sub(8) / 2;
            self.text(&w.label, w.rect.x + 8, y, 1, PLACEHOLDER, w.rect);
        } else {
            let y = w.rect.y + w.rect.h.saturating_sub(16) / 2;
            self.text(text, w.rect.x + 8, y, 2, TEXT, w.rect);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_sim::{standard_scene, Panel};

    fn tiny_scene() -> GuiScene {
        GuiScene {
            width: 320,
            height: 200,
            widgets: vec![Widget {
                id: "export".into(),
                label: "Export".into(),
                kind: WidgetKind::Button,
                rect: Rect::new(20, 20, 100, 32),
            }],
            panels: vec![Panel {
                name: "toolbar".into(),
                rect: Rect::new(0, 0, 320, 60),
            }],
            cursor_sprite: "arrow".into(),
            background: Fill::Solid([240, 240, 240]),
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let s = standard_scene(640, 400, 11);
        let a = render_scene(&s, Point::new(100, 100), &[]).unwrap();
        let b = render_scene(&s, Point::new(100, 100), &[]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cursor_outside_screen_is_rejected() {
        let s = tiny_scene();
        let err = render_scene(&s, Point::new(320, 10), &[]).unwrap_err();
        assert!(matches!(err, SceneError::CursorOutOfBounds { .. }));
    }

    #[test]
    fn cursor_at_origin_is_drawn_at_top_left() {
        let s = tiny_scene();
        let f = render_scene(&s, Point::new(0, 0), &[]).unwrap();
        // arrow tip is dark, its fill light
        assert_eq!(f.pixel(0, 0), [0, 0, 0]);
        assert_eq!(f.pixel(1, 2), [255, 255, 255]);
        // the crosshair's hotspot is mid-sprite, so it clips at the corner
        let mut c = s.clone();
        c.cursor_sprite = "crosshair".into();
        let f = render_scene(&c, Point::new(0, 0), &[]).unwrap();
        assert_eq!(f.pixel(0, 0), [0, 0, 0]);
        assert_eq!(f.pixel(7, 0), [0, 0, 0]);
        assert_eq!(f.pixel(8, 0), render_scene(&s, Point::new(300, 180), &[]).unwrap().pixel(8, 0));
    }

    #[test]
    fn context_menu_changes_only_its_rect() {
        let s = standard_scene(640, 400, 5);
        let at = Point::new(100, 100);
        let menu = Overlay::ContextMenu {
            at,
            items: CONTEXT_MENU_ITEMS.iter().map(|s| s.to_string()).collect(),
        };
        let plain = render_scene(&s, at, &[]).unwrap();
        let with = render_scene(&s, at, &[menu]).unwrap();
        let r = context_menu_rect(at, CONTEXT_MENU_ITEMS.len(), s.width, s.height);
        let mut changed = 0;
        for (x, y, px) in plain.image.enumerate_pixels() {
            if px != with.image.get_pixel(x, y) {
                assert!(r.contains(Point::new(x, y)), "pixel ({x},{y}) changed outside menu");
                changed += 1;
            }
        }
        assert!(changed > 1000);
    }

    #[test]
    fn highlight_stays_near_widget() {
        let s = tiny_scene();
        let cursor = Point::new(300, 180);
        let a = render_scene(&s, cursor, &[]).unwrap();
        let b = render_scene(&s, cursor, &[Overlay::Highlight { widget: "export".into() }]).unwrap();
        let r = s.widgets[0].rect.inflate(4, 320, 200);
        for (x, y, px) in a.image.enumerate_pixels() {
            if px != b.image.get_pixel(x, y) {
                assert!(r.contains(Point::new(x, y)));
            }
        }
        assert_eq!(b.pixel(22, 22), HIGHLIGHT);
    }
}
