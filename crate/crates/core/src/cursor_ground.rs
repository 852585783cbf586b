//! Spatial grounding: where is the pointer in each frame?
//!
//! The built-in [`TemplateMatcher`] scores every sprite of a
//! [`CursorSpriteLibrary`] at scales 1.0, 1.5 and 2.0 with masked zero-mean
//! normalized cross-correlation (only the sprite's opaque pixels take part, so
//! the score does not depend on what lies under the transparent corners).
//!
//! The search runs coarse-to-fine: each template is first correlated against a
//! box-filtered pyramid level where it is still at least a few pixels across,
//! the best coarse peaks are kept, and the exact full-resolution score is then
//! maximised in a small window around each peak. The reported confidence is
//! always the full-resolution score.
//!
//! [`RemoteDetector`] forwards frames to an external detection service instead.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::Frame;
use crate::geometry::Point;
use crate::http::{HttpClient, HttpError};
use crate::sprite::{CursorSprite, CursorSpriteLibrary};

/// Acceptance threshold on the correlation score.
pub const DEFAULT_THRESHOLD: f64 = 0.85;
/// Sprite scales searched by the template matcher.
pub const SCALES: [f64; 3] = [1.0, 1.5, 2.0];

/// Coarse peaks kept per template before refinement.
const COARSE_PEAKS: usize = 8;
/// Frame area granted [`COARSE_PEAKS`] coarse peaks; larger frames keep proportionally more.
const COARSE_PEAK_AREA: u32 = 640 * 400;
/// Smallest template side allowed at a coarse level.
const MIN_COARSE_SIDE: u32 = 6;

#[derive(Debug, Error)]
pub enum GroundingError {
    #[error("no frame produced a cursor fix")]
    AllFramesUndetected,
    #[error("threshold must lie in (0, 1], got {0}")]
    BadThreshold(f64),
    #[error("external detector: {0}")]
    Remote(#[from] HttpError),
    #[error("external detector sent an unreadable reply: {0:?}")]
    BadReply(String),
    #[error("encoding frame: {0}")]
    Encode(#[from] image::ImageError),
}

/// Pointer location in one frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CursorFix {
    pub frame_idx: usize,
    pub center: Point,
    /// Match score in `[0, 1]`; zero marks a fix filled in from a neighbour.
    pub confidence: f64,
}

/// Anything that can find the pointer in a single frame.
pub trait CursorDetector: Send + Sync {
    /// `Ok(None)` means no cursor was found.
    fn detect(&self, frame: &Frame) -> Result<Option<CursorFix>, GroundingError>;
}

/// Grayscale pixels as `f32`, row-major.
struct Gray {
    width: u32,
    height: u32,
    px: Vec<f32>,
}

impl Gray {
    fn from_frame(frame: &Frame) -> Self {
        let px = frame
            .image
            .pixels()
            .map(|p| {
                let [r, g, b] = p.0;
                0.299 * r as f32 + 0.587 * g as f32 + 0.114 * b as f32
            })
            .collect();
        Self {
            width: frame.width(),
            height: frame.height(),
            px,
        }
    }

    /// 2x2 box average; odd trailing rows/columns are dropped.
    fn half(&self) -> Self {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut px = Vec::with_capacity((w * h) as usize);
        let stride = self.width as usize;
        for y in 0..h as usize {
            for x in 0..w as usize {
                let i = 2 * y * stride + 2 * x;
                px.push(0.25 * (self.px[i] + self.px[i + 1] + self.px[i + stride] + self.px[i + stride + 1]));
            }
        }
        Self { width: w, height: h, px }
    }
}

/// Zero-mean masked template ready for correlation.
#[derive(Clone, Debug)]
struct Template {
    width: u32,
    height: u32,
    /// (dx, dy, zero-mean value) of each opaque pixel
    taps: Vec<(u32, u32, f32)>,
    norm: f32,
}

impl Template {
    fn new(width: u32, height: u32, values: &[Option<f32>]) -> Option<Self> {
        let opaque: Vec<(u32, u32, f32)> = values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (i as u32 % width, i as u32 / width, v)))
            .collect();
        if opaque.len() < 2 {
            return None;
        }
        let mean = opaque.iter().map(|t| t.2).sum::<f32>() / opaque.len() as f32;
        let taps: Vec<_> = opaque.iter().map(|&(x, y, v)| (x, y, v - mean)).collect();
        let norm = taps.iter().map(|t| t.2 * t.2).sum::<f32>().sqrt();
        (norm > 0.0).then_some(Self { width, height, taps, norm })
    }

    fn from_sprite(sprite: &CursorSprite) -> Option<Self> {
        let values: Vec<Option<f32>> = (0..sprite.height)
            .flat_map(|y| (0..sprite.width).map(move |x| (x, y)))
            .map(|(x, y)| sprite.at(x, y).map(f32::from))
            .collect();
        Self::new(sprite.width, sprite.height, &values)
    }

    /// Block-average the opaque pixels of `sprite` by `factor`; a block is
    /// opaque when at least half of its pixels are.
    fn coarse(sprite: &CursorSprite, factor: u32) -> Option<Self> {
        let (w, h) = (sprite.width / factor, sprite.height / factor);
        let mut values = Vec::with_capacity((w * h) as usize);
        for by in 0..h {
            for bx in 0..w {
                let mut sum = 0.0;
                let mut n = 0;
                for y in by * factor..(by + 1) * factor {
                    for x in bx * factor..(bx + 1) * factor {
                        if let Some(v) = sprite.at(x, y) {
                            sum += v as f32;
                            n += 1;
                        }
                    }
                }
                values.push((2 * n >= factor * factor).then(|| sum / n as f32));
            }
        }
        Self::new(w, h, &values)
    }

    /// Masked zero-mean NCC with the template's top-left at `(x, y)`.
    fn score(&self, img: &Gray, x: u32, y: u32) -> f32 {
        let stride = img.width as usize;
        let base = y as usize * stride + x as usize;
        let (mut cross, mut sum, mut sumsq) = (0.0f32, 0.0f32, 0.0f32);
        for &(dx, dy, t) in &self.taps {
            let v = img.px[base + dy as usize * stride + dx as usize];
            cross += t * v;
            sum += v;
            sumsq += v * v;
        }
        let n = self.taps.len() as f32;
        let var = sumsq - sum * sum / n;
        if var <= 1e-3 {
            return 0.0;
        }
        cross / (self.norm * var.sqrt())
    }

    fn fits(&self, img: &Gray) -> bool {
        self.width <= img.width && self.height <= img.height
    }
}

struct Candidate {
    fine: Template,
    coarse: Option<(usize, Template)>,
    hotspot: Point,
}

/// Masked NCC template matcher over a sprite library.
pub struct TemplateMatcher {
    candidates: Vec<Candidate>,
    threshold: f64,
}

/// Best-scoring placement regardless of the threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemplateMatch {
    /// Template top-left in the frame.
    pub position: Point,
    pub center: Point,
    pub score: f64,
}

impl TemplateMatcher {
    pub fn new(library: &CursorSpriteLibrary, threshold: f64) -> Result<Self, GroundingError> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(GroundingError::BadThreshold(threshold));
        }
        let mut candidates = Vec::new();
        for sprite in &library.sprites {
            for &scale in &SCALES {
                let s = sprite.scaled(scale);
                let Some(fine) = Template::from_sprite(&s) else {
                    continue;
                };
                let mut level = 0;
                while (s.width.min(s.height) >> (level + 1)) >= MIN_COARSE_SIDE {
                    level += 1;
                }
                let coarse = (level > 0)
                    .then(|| Template::coarse(&s, 1 << level).map(|t| (level, t)))
                    .flatten();
                candidates.push(Candidate {
                    fine,
                    coarse,
                    hotspot: s.hotspot,
                });
            }
        }
        Ok(Self { candidates, threshold })
    }

    pub fn with_default_threshold(library: &CursorSpriteLibrary) -> Self {
        Self::new(library, DEFAULT_THRESHOLD).expect("default threshold is valid")
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// The highest-scoring placement over all sprites and scales.
    pub fn best_match(&self, frame: &Frame) -> Option<TemplateMatch> {
        let full = Gray::from_frame(frame);
        let budget = COARSE_PEAKS * ((full.width * full.height).div_ceil(COARSE_PEAK_AREA) as usize);
        let mut pyramid = vec![full];
        let mut best: Option<TemplateMatch> = None;
        for cand in &self.candidates {
            if !cand.fine.fits(&pyramid[0]) {
                continue;
            }
            let seeds: Vec<(u32, u32, u32)> = match &cand.coarse {
                Some((level, coarse)) => {
                    while pyramid.len() <= *level {
                        let next = pyramid.last().expect("non-empty").half();
                        pyramid.push(next);
                    }
                    let img = &pyramid[*level];
                    if !coarse.fits(img) {
                        continue;
                    }
                    let factor = 1u32 << level;
                    coarse_peaks(coarse, img, budget)
                        .into_iter()
                        .map(|(x, y)| (x * factor, y * factor, factor))
                        .collect()
                }
                None => vec![],
            };
            let img = &pyramid[0];
            let max_x = img.width - cand.fine.width;
            let max_y = img.height - cand.fine.height;
            let mut consider = |x: u32, y: u32| {
                let score = cand.fine.score(img, x, y) as f64;
                if best.is_none_or(|b| score > b.score) {
                    best = Some(TemplateMatch {
                        position: Point::new(x, y),
                        center: Point::new(
                            (x + cand.hotspot.x).min(img.width - 1),
                            (y + cand.hotspot.y).min(img.height - 1),
                        ),
                        score,
                    });
                }
            };
            if cand.coarse.is_none() {
                for y in 0..=max_y {
                    for x in 0..=max_x {
                        consider(x, y);
                    }
                }
                continue;
            }
            for (cx, cy, r) in seeds {
                for y in cy.saturating_sub(r)..=(cy + r).min(max_y) {
                    for x in cx.saturating_sub(r)..=(cx + r).min(max_x) {
                        consider(x, y);
                    }
                }
            }
        }
        best.map(|mut b| {
            b.score = b.score.clamp(0.0, 1.0);
            b
        })
    }
}

/// Top `budget` coarse placements with non-maximum suppression over the template size.
fn coarse_peaks(t: &Template, img: &Gray, budget: usize) -> Vec<(u32, u32)> {
    let w = img.width - t.width + 1;
    let h = img.height - t.height + 1;
    let mut scores = vec![0f32; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            scores[(y * w + x) as usize] = t.score(img, x, y);
        }
    }
    let mut peaks = Vec::with_capacity(budget);
    for _ in 0..budget {
        let Some((i, &s)) = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        else {
            break;
        };
        if s <= 0.0 {
            break;
        }
        let (px, py) = (i as u32 % w, i as u32 / w);
        peaks.push((px, py));
        for y in py.saturating_sub(t.height / 2)..(py + t.height / 2 + 1).min(h) {
            for x in px.saturating_sub(t.width / 2)..(px + t.width / 2 + 1).min(w) {
                scores[(y * w + x) as usize] = f32::NEG_INFINITY;
            }
        }
    }
    peaks
}

impl CursorDetector for TemplateMatcher {
    fn detect(&self, frame: &Frame) -> Result<Option<CursorFix>, GroundingError> {
        Ok(self
            .best_match(frame)
            .filter(|m| m.score >= self.threshold)
            .map(|m| CursorFix {
                frame_idx: frame.index,
                center: m.center,
                confidence: m.score,
            }))
    }
}

/// Template-match `frame` against `library`; `None` when the best score is below `threshold`.
pub fn detect(
    frame: &Frame,
    library: &CursorSpriteLibrary,
    threshold: f64,
) -> Result<Option<CursorFix>, GroundingError> {
    TemplateMatcher::new(library, threshold)?.detect(frame)
}

/// One fix per frame. Misses take the centre of the nearest detected frame
/// (the earlier one on ties) with confidence 0.
pub fn detect_sequence(
    frames: &[Frame],
    detector: &dyn CursorDetector,
) -> Result<Vec<CursorFix>, GroundingError> {
    let found = frames
        .par_iter()
        .map(|f| detector.detect(f))
        .collect::<Result<Vec<_>, _>>()?;
    fill_missing(frames, &found)
}

fn fill_missing(frames: &[Frame], found: &[Option<CursorFix>]) -> Result<Vec<CursorFix>, GroundingError> {
    let hits: Vec<usize> = (0..found.len()).filter(|&i| found[i].is_some()).collect();
    if hits.is_empty() {
        return Err(GroundingError::AllFramesUndetected);
    }
    Ok(frames
        .iter()
        .enumerate()
        .map(|(i, f)| match found[i] {
            Some(mut fix) => {
                fix.center = clamp_to(fix.center, f);
                fix
            }
            None => {
                let nearest = *hits
                    .iter()
                    .min_by_key(|&&h| (h.abs_diff(i), h))
                    .expect("hits is non-empty");
                CursorFix {
                    frame_idx: f.index,
                    center: clamp_to(found[nearest].expect("hit").center, f),
                    confidence: 0.0,
                }
            }
        })
        .collect())
}

fn clamp_to(p: Point, f: &Frame) -> Point {
    Point::new(p.x.min(f.width() - 1), p.y.min(f.height() - 1))
}

/// Detector behind an HTTP endpoint.
///
/// Each frame is POSTed as a PNG body; the reply is one line, either
/// `"x y confidence"` or `"NONE"`.
pub struct RemoteDetector {
    url: String,
    client: HttpClient,
}

impl RemoteDetector {
    pub fn new(url: impl Into<String>, client: HttpClient) -> Self {
        Self {
            url: url.into(),
            client,
        }
    }
}

/// Parse a detector reply line.
pub fn parse_detector_reply(body: &str) -> Result<Option<(f64, f64, f64)>, GroundingError> {
    let line = body.trim();
    if line == "NONE" {
        return Ok(None);
    }
    let nums: Vec<f64> = line
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|_| GroundingError::BadReply(line.to_string()))?;
    match nums[..] {
        [x, y, c] if x.is_finite() && y.is_finite() && (0.0..=1.0).contains(&c) => Ok(Some((x, y, c))),
        _ => Err(GroundingError::BadReply(line.to_string())),
    }
}

impl CursorDetector for RemoteDetector {
    fn detect(&self, frame: &Frame) -> Result<Option<CursorFix>, GroundingError> {
        let body = frame.to_png_bytes()?;
        let reply = self.client.post(&self.url, "image/png", &body)?;
        Ok(parse_detector_reply(&reply)?.map(|(x, y, c)| CursorFix {
            frame_idx: frame.index,
            center: clamp_to(
                Point::new(x.round().max(0.0) as u32, y.round().max(0.0) as u32),
                frame,
            ),
            confidence: c,
        }))
    }
}
