//! Integer pixel geometry shared by the renderer, the detector and the prompter.

use serde::{Deserialize, Serialize};

/// A pixel position, origin at the top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Point {
    pub x: u32,
    pub y: u32,
}

impl Point {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    /// Linear interpolation towards `to`, rounded to the nearest pixel.
    pub fn lerp(self, to: Point, t: f64) -> Point {
        let x = self.x as f64 + (to.x as f64 - self.x as f64) * t;
        let y = self.y as f64 + (to.y as f64 - self.y as f64) * t;
        Point::new(x.round() as u32, y.round() as u32)
    }
}

/// An axis-aligned rectangle `(x, y, w, h)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn center(&self) -> Point {
        Point::new(self.x + self.w / 2, self.y + self.h / 2)
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x && p.x < self.right() && p.y >= self.y && p.y < self.bottom()
    }

    /// True when `other` lies entirely within `self`.
    pub fn encloses(&self, other: &Rect) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.right() <= width && self.bottom() <= height
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x < other.right()
            && other.x < self.right()
            && self.y < other.bottom()
            && other.y < self.bottom()
    }

    /// Grow by `by` pixels on every side, clipped to `width x height`.
    pub fn inflate(&self, by: u32, width: u32, height: u32) -> Rect {
        let x = self.x.saturating_sub(by);
        let y = self.y.saturating_sub(by);
        let right = (self.right() + by).min(width);
        let bottom = (self.bottom() + by).min(height);
        Rect::new(x, y, right - x, bottom - y)
    }

    /// Rect of size `w x h` centred on `c`, shifted so it stays inside the image.
    pub fn centered_within(c: Point, w: u32, h: u32, width: u32, height: u32) -> Rect {
        let w = w.min(width);
        let h = h.min(height);
        let x = c.x.saturating_sub(w / 2).min(width - w);
        let y = c.y.saturating_sub(h / 2).min(height - h);
        Rect::new(x, y, w, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_within_shifts_at_edges() {
        let r = Rect::centered_within(Point::new(5, 5), 20, 10, 100, 50);
        assert_eq!(r, Rect::new(0, 0, 20, 10));
        let r = Rect::centered_within(Point::new(99, 49), 20, 10, 100, 50);
        assert_eq!(r, Rect::new(80, 40, 20, 10));
    }

    #[test]
    fn lerp_endpoints() {
        let a = Point::new(10, 20);
        let b = Point::new(110, 0);
        assert_eq!(a.lerp(b, 0.0), a);
        assert_eq!(a.lerp(b, 1.0), b);
        assert_eq!(a.lerp(b, 0.5), Point::new(60, 10));
    }
}
