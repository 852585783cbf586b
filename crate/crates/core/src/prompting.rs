//! Cursor-centred visual prompts.
//!
//! A [`PromptBox`] is a fixed-size square placed on the detected pointer. It is
//! drawn as a green outline on the full screenshot ([`annotate`]) and cut out
//! as a full-resolution crop ([`crop`]). Near the screen edges the box is
//! shifted, never shrunk, so every crop has the same size.

use image::{Rgb, RgbImage};
use thiserror::Error;

use crate::frame::Frame;
use crate::geometry::{Point, Rect};

/// Default box side in pixels.
pub const DEFAULT_BOX_SIZE: u32 = 256;
/// Box sizes the command line accepts.
pub const BOX_SIZE_PRESETS: [u32; 4] = [128, 256, 512, 768];
/// Outline width, drawn inward from the box border.
pub const STROKE_PX: u32 = 4;
pub const PROMPT_GREEN: [u8; 3] = [0, 255, 0];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("box side {size} does not fit in a {width}x{height} image")]
    BoxExceedsImage { size: u32, width: u32, height: u32 },
    #[error("centre ({x}, {y}) lies outside the {width}x{height} image")]
    CenterOutsideImage { x: u32, y: u32, width: u32, height: u32 },
    #[error("box side must be positive")]
    EmptyBox,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PromptBox {
    /// Square of side `size`.
    pub rect: Rect,
    pub source_center: Point,
    pub size: u32,
}

/// The two views of one prompted screenshot, plus the screenshot itself.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptedFrame {
    pub original: Frame,
    pub annotated: Frame,
    pub cropped: Frame,
    pub prompt: PromptBox,
}

/// Place a `size x size` box on `center`, shifted to stay inside the image.
///
/// `left = clamp(x - size/2, 0, width - size)` with integer halving; `top`
/// likewise.
pub fn prompt_box(center: Point, width: u32, height: u32, size: u32) -> Result<PromptBox, PromptError> {
    if size == 0 {
        return Err(PromptError::EmptyBox);
    }
    if size > width || size > height {
        return Err(PromptError::BoxExceedsImage { size, width, height });
    }
    if center.x >= width || center.y >= height {
        return Err(PromptError::CenterOutsideImage {
            x: center.x,
            y: center.y,
            width,
            height,
        });
    }
    let half = size / 2;
    let left = center.x.saturating_sub(half).min(width - size);
    let top = center.y.saturating_sub(half).min(height - size);
    Ok(PromptBox {
        rect: Rect::new(left, top, size, size),
        source_center: center,
        size,
    })
}

/// True for pixels covered by the outline of `rect` with the given stroke.
pub fn on_stroke(rect: &Rect, stroke: u32, x: u32, y: u32) -> bool {
    rect.contains(Point::new(x, y))
        && (x < rect.x + stroke
            || x + stroke >= rect.right()
            || y < rect.y + stroke
            || y + stroke >= rect.bottom())
}

/// Draw the green outline of `bx` onto a copy of `frame`.
pub fn annotate(frame: &Frame, bx: &PromptBox, stroke: u32) -> Frame {
    let mut out = frame.clone();
    let r = bx.rect;
    for y in r.y..r.bottom().min(frame.height()) {
        for x in r.x..r.right().min(frame.width()) {
            if on_stroke(&r, stroke, x, y) {
                out.image.put_pixel(x, y, Rgb(PROMPT_GREEN));
            }
        }
    }
    out
}

/// Cut `bx` out of `frame`; pixel `(i, j)` of the crop is `frame(left + i, top + j)`.
pub fn crop(frame: &Frame, bx: &PromptBox) -> Frame {
    let r = bx.rect;
    let img = image::imageops::crop_imm(&frame.image, r.x, r.y, r.w, r.h).to_image();
    Frame::new(frame.index, img)
}

/// Annotated full frame plus crop for one pointer position.
pub fn prompt_frame(frame: &Frame, center: Point, size: u32) -> Result<PromptedFrame, PromptError> {
    let bx = prompt_box(center, frame.width(), frame.height(), size)?;
    Ok(PromptedFrame {
        original: frame.clone(),
        annotated: annotate(frame, &bx, STROKE_PX),
        cropped: crop(frame, &bx),
        prompt: bx,
    })
}

/// Bilinear resize with pixel-centre alignment; same-size input is returned unchanged.
pub fn resize_for_backend(frame: &Frame, target_w: u32, target_h: u32) -> Frame {
    assert!(target_w > 0 && target_h > 0, "target dimensions must be positive");
    let (sw, sh) = frame.image.dimensions();
    if (sw, sh) == (target_w, target_h) {
        return frame.clone();
    }
    let src = &frame.image;
    let map = |dst: u32, dst_len: u32, src_len: u32| -> (u32, u32, f64) {
        let s = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as u32).min(src_len - 1);
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, s - i0 as f64)
    };
    let xs: Vec<_> = (0..target_w).map(|x| map(x, target_w, sw)).collect();
    let ys: Vec<_> = (0..target_h).map(|y| map(y, target_h, sh)).collect();
    let mut out = RgbImage::new(target_w, target_h);
    for (y, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
            let p = |xx, yy| src.get_pixel(xx, yy).0;
            let (a, b, c, d) = (p(x0, y0), p(x1, y0), p(x0, y1), p(x1, y1));
            let px = std::array::from_fn(|ch| {
                let top = a[ch] as f64 * (1.0 - fx) + b[ch] as f64 * fx;
                let bottom = c[ch] as f64 * (1.0 - fx) + d[ch] as f64 * fx;
                (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8
            });
            out.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    Frame::new(frame.index, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_examples() {
        let r = |x, y| prompt_box(Point::new(x, y), 1920, 1080, 256).unwrap().rect;
        assert_eq!(r(960, 540), Rect::new(832, 412, 256, 256));
        assert_eq!(r(10, 10), Rect::new(0, 0, 256, 256));
        assert_eq!(r(1919, 540), Rect::new(1664, 412, 256, 256));
    }

    #[test]
    fn oversized_box_is_an_error() {
        assert_eq!(
            prompt_box(Point::new(10, 10), 640, 400, 512),
            Err(PromptError::BoxExceedsImage { size: 512, width: 640, height: 400 })
        );
        assert_eq!(prompt_box(Point::new(1, 1), 10, 10, 0), Err(PromptError::EmptyBox));
    }

    fn noisy(w: u32, h: u32) -> Frame {
        let img = RgbImage::from_fn(w, h, |x, y| {
            Rgb([(x * 7 + y * 3) as u8, (x ^ y) as u8, (x * y) as u8])
        });
        Frame::new(0, img)
    }

    #[test]
    fn annotate_draws_outline_only() {
        let f = noisy(400, 300);
        let bx = prompt_box(Point::new(200, 150), 400, 300, 128).unwrap();
        let a = annotate(&f, &bx, STROKE_PX);
        let r = bx.rect;
        assert_eq!(a.pixel(r.x, r.y), PROMPT_GREEN);
        assert_eq!(a.pixel(r.right() - 1, r.bottom() - 1), PROMPT_GREEN);
        assert_eq!(a.pixel(r.x + 3, r.y + 60), PROMPT_GREEN);
        assert_eq!(a.pixel(r.x + 4, r.y + 60), f.pixel(r.x + 4, r.y + 60));
        assert_eq!(a.pixel(r.x + 64, r.y + 64), f.pixel(r.x + 64, r.y + 64));
        assert_eq!(a.pixel(r.x - 1, r.y), f.pixel(r.x - 1, r.y));
        assert_eq!(annotate(&a, &bx, STROKE_PX), a);
    }

    #[test]
    fn crop_offsets_and_round_trip() {
        let mut f = Frame::filled(0, 1920, 1080, [9, 9, 9]);
        f.image.put_pixel(900, 500, Rgb([255, 0, 0]));
        let bx = prompt_box(Point::new(960, 540), 1920, 1080, 256).unwrap();
        let c = crop(&f, &bx);
        assert_eq!(c.image.dimensions(), (256, 256));
        assert_eq!(c.pixel(68, 88), [255, 0, 0]);

        let g = noisy(500, 400);
        let bx = prompt_box(Point::new(123, 321), 500, 400, 128).unwrap();
        let c = crop(&g, &bx);
        let mut pasted = Frame::filled(0, 500, 400, [0, 0, 0]);
        pasted.image.clone_from(&g.image);
        image::imageops::replace(&mut pasted.image, &c.image, bx.rect.x as i64, bx.rect.y as i64);
        assert_eq!(pasted, g);

        let u = Frame::filled(0, 300, 300, [1, 2, 3]);
        let bx = prompt_box(Point::new(5, 290), 300, 300, 128).unwrap();
        assert!(crop(&u, &bx).image.pixels().all(|p| p.0 == [1, 2, 3]));
    }

    #[test]
    fn resize_examples() {
        let f = noisy(1920, 1080);
        assert_eq!(resize_for_backend(&f, 960, 512).image.dimensions(), (960, 512));
        assert_eq!(resize_for_backend(&f, 1920, 1080), f);
        // 2x2 checkerboard of 0 and 200 collapses to the mean, 100
        let mut cb = Frame::filled(0, 2, 2, [0, 0, 0]);
        cb.image.put_pixel(1, 0, Rgb([200, 200, 200]));
        cb.image.put_pixel(0, 1, Rgb([200, 200, 200]));
        assert_eq!(resize_for_backend(&cb, 1, 1).pixel(0, 0), [100, 100, 100]);
    }

    proptest! {
        #[test]
        fn box_is_square_inside_and_centred_when_clamp_free(
            w in 1u32..3000, h in 1u32..3000, s in 1u32..1000, fx in 0.0f64..1.0, fy in 0.0f64..1.0
        ) {
            prop_assume!(s <= w && s <= h);
            let c = Point::new((fx * w as f64) as u32, (fy * h as f64) as u32);
            let b = prompt_box(c, w, h, s).unwrap();
            prop_assert_eq!((b.rect.w, b.rect.h), (s, s));
            prop_assert!(b.rect.fits_in(w, h));
            let half = s / 2;
            if c.x >= half && c.x + (s - half) <= w && c.y >= half && c.y + (s - half) <= h {
                prop_assert_eq!((b.rect.x, b.rect.y), (c.x - half, c.y - half));
                prop_assert!(b.rect.contains(c));
            }
        }

        #[test]
        fn crop_of_annotation_differs_only_on_stroke(cx in 0u32..400, cy in 0u32..300) {
            let f = noisy(400, 300);
            let b = prompt_box(Point::new(cx, cy), 400, 300, 96).unwrap();
            let raw = crop(&f, &b);
            let ann = crop(&annotate(&f, &b, STROKE_PX), &b);
            let local = Rect::new(0, 0, 96, 96);
            for (x, y, p) in raw.image.enumerate_pixels() {
                if !on_stroke(&local, STROKE_PX, x, y) {
                    prop_assert_eq!(p, ann.image.get_pixel(x, y));
                }
            }
        }
    }
}
