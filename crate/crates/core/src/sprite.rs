//! Cursor sprites: the renderer composites them, the template matcher searches for them.

use crate::geometry::Point;

/// A grayscale cursor template with a transparency mask and a hotspot.
#[derive(Clone, Debug, PartialEq)]
pub struct CursorSprite {
    pub id: String,
    pub width: u32,
    pub height: u32,
    /// Row-major luma values; only meaningful where `mask` is set.
    pub luma: Vec<u8>,
    pub mask: Vec<bool>,
    /// The pixel that sits on the pointer position.
    pub hotspot: Point,
}

impl CursorSprite {
    /// Parse ASCII art: `X` dark, `o` light, anything else transparent.
    pub fn from_ascii(id: &str, rows: &[&str], hotspot: Point) -> Self {
        let height = rows.len() as u32;
        let width = rows.iter().map(|r| r.len()).max().unwrap_or(0) as u32;
        let mut luma = vec![0u8; (width * height) as usize];
        let mut mask = vec![false; (width * height) as usize];
        for (y, row) in rows.iter().enumerate() {
            for (x, c) in row.bytes().enumerate() {
                let i = y * width as usize + x;
                match c {
                    b'X' => {
                        luma[i] = 0;
                        mask[i] = true;
                    }
                    b'o' => {
                        luma[i] = 255;
                        mask[i] = true;
                    }
                    _ => {}
                }
            }
        }
        Self {
            id: id.to_string(),
            width,
            height,
            luma,
            mask,
            hotspot,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.width > 0
            && self.height > 0
            && self.mask.iter().any(|&m| m)
            && self.hotspot.x < self.width
            && self.hotspot.y < self.height
    }

    /// Opaque pixel at `(x, y)`, if any.
    pub fn at(&self, x: u32, y: u32) -> Option<u8> {
        let i = (y * self.width + x) as usize;
        self.mask[i].then_some(self.luma[i])
    }

    /// Nearest-neighbour rescale; the hotspot scales with the sprite.
    pub fn scaled(&self, scale: f64) -> CursorSprite {
        let width = ((self.width as f64 * scale).round() as u32).max(1);
        let height = ((self.height as f64 * scale).round() as u32).max(1);
        let mut luma = Vec::with_capacity((width * height) as usize);
        let mut mask = Vec::with_capacity((width * height) as usize);
        for y in 0..height {
            let sy = ((y as f64 / scale) as u32).min(self.height - 1);
            for x in 0..width {
                let sx = ((x as f64 / scale) as u32).min(self.width - 1);
                let i = (sy * self.width + sx) as usize;
                luma.push(self.luma[i]);
                mask.push(self.mask[i]);
            }
        }
        let hotspot = Point::new(
            ((self.hotspot.x as f64 * scale).round() as u32).min(width - 1),
            ((self.hotspot.y as f64 * scale).round() as u32).min(height - 1),
        );
        CursorSprite {
            id: self.id.clone(),
            width,
            height,
            luma,
            mask,
            hotspot,
        }
    }
}

const ARROW: [&str; 19] = [
    "X           ",
    "XX          ",
    "XoX         ",
    "XooX        ",
    "XoooX       ",
    "XooooX      ",
    "XoooooX     ",
    "XooooooX    ",
    "XoooooooX   ",
    "XooooooooX  ",
    "XoooooooooX ",
    "XooooooXXXXX",
    "XoooXooX    ",
    "XooX XooX   ",
    "XoX  XooX   ",
    "XX    XooX  ",
    "X     XooX  ",
    "       XooX ",
    "        XX  ",
];

fn crosshair() -> CursorSprite {
    let size = 15usize;
    let mid = size / 2;
    let rows: Vec<String> = (0..size)
        .map(|y| {
            (0..size)
                .map(|x| {
                    let on_v = x == mid;
                    let on_h = y == mid;
                    let near_v = x.abs_diff(mid) == 1;
                    let near_h = y.abs_diff(mid) == 1;
                    if on_v || on_h {
                        'X'
                    } else if near_v || near_h {
                        'o'
                    } else {
                        ' '
                    }
                })
                .collect()
        })
        .collect();
    let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
    CursorSprite::from_ascii("crosshair", &refs, Point::new(mid as u32, mid as u32))
}

/// The set of cursor looks the detector knows about.
#[derive(Clone, Debug, PartialEq)]
pub struct CursorSpriteLibrary {
    pub sprites: Vec<CursorSprite>,
}

impl CursorSpriteLibrary {
    /// Returns `None` if the list is empty or any sprite is malformed.
    pub fn new(sprites: Vec<CursorSprite>) -> Option<Self> {
        (!sprites.is_empty() && sprites.iter().all(CursorSprite::is_valid))
            .then_some(Self { sprites })
    }

    /// The arrow and crosshair cursors used by the scene renderer.
    pub fn builtin() -> Self {
        Self {
            sprites: vec![
                CursorSprite::from_ascii("arrow", &ARROW, Point::new(0, 0)),
                crosshair(),
            ],
        }
    }

    pub fn get(&self, id: &str) -> Option<&CursorSprite> {
        self.sprites.iter().find(|s| s.id == id)
    }
}
