//! Temporal grounding: pick the before/after frames of the action.
//!
//! A video is first thinned to `N` uniformly spaced frames
//! ([`sample_uniform`]). Each cursor crop is embedded ([`embed`]), the
//! resulting `N x d_v` matrix is scored by a small self-attention head
//! ([`ScoringHead`]) and the two best frames become `(s, e)`
//! ([`select_keyframes`]). [`heuristic_keyframes`] and
//! [`start_end_keyframes`] are training-free baselines.

mod embed;
mod head;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::Frame;

pub use embed::{embed, EmbeddingProvider, PixelEmbedder, RemoteEmbedder, EMBED_GRID};
pub use head::{
    score_frames, train_head, HeadConfig, ScoringHead, TrainConfig, TrainOutcome, WEIGHTS_MAGIC,
    WEIGHTS_VERSION,
};

/// Frames kept per video.
pub const DEFAULT_SAMPLES: usize = 10;
/// Relative change threshold of [`heuristic_keyframes`].
pub const HEURISTIC_TAU: f64 = 0.3;

#[derive(Debug, Error)]
pub enum KeyframeError {
    #[error("feature dimension {got} does not match the head's {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("feature matrix holds a non-finite value")]
    NonFinite,
    #[error("invalid head configuration: {0}")]
    BadConfig(String),
    #[error("no training samples")]
    NoSamples,
    #[error("keyframes ({s}, {e}) are not ordered inside {n} frames")]
    BadTarget { s: usize, e: usize, n: usize },
    #[error("weights file: {0}")]
    BadWeights(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("embedding service: {0}")]
    Remote(#[from] crate::http::HttpError),
    #[error("embedding service reply: {0}")]
    BadReply(String),
    #[error("encoding crop: {0}")]
    Encode(#[from] image::ImageError),
}

/// `N x d_v` matrix of per-frame embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameFeatures {
    matrix: Array2<f64>,
}

impl FrameFeatures {
    pub fn new(matrix: Array2<f64>) -> Result<Self, KeyframeError> {
        if matrix.nrows() < 2 {
            return Err(KeyframeError::TooFewFrames(matrix.nrows()));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(KeyframeError::NonFinite);
        }
        Ok(Self { matrix })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, KeyframeError> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(KeyframeError::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let matrix = Array2::from_shape_vec((n, d), flat).expect("rows have equal length");
        Self::new(matrix)
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn frames(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyframeStrategy {
    Model,
    Heuristic,
    StartEnd,
    GroundTruth,
}

impl KeyframeStrategy {
    pub const ALL: [KeyframeStrategy; 4] = [
        KeyframeStrategy::Model,
        KeyframeStrategy::Heuristic,
        KeyframeStrategy::StartEnd,
        KeyframeStrategy::GroundTruth,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            KeyframeStrategy::Model => "model",
            KeyframeStrategy::Heuristic => "heuristic",
            KeyframeStrategy::StartEnd => "start_end",
            KeyframeStrategy::GroundTruth => "ground_truth",
        }
    }
}

impl fmt::Display for KeyframeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KeyframeStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown keyframe strategy `{s}` (expected model, heuristic, start_end or ground_truth)"))
    }
}

/// Chosen `(s, e)` in sampled-frame indices, `s < e`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyframeSelection {
    pub s: usize,
    pub e: usize,
    pub strategy: KeyframeStrategy,
}

/// Indices `round(i * (raw - 1) / (n - 1))` for `i in 0..n`.
pub fn sample_indices(raw: usize, n: usize) -> Vec<usize> {
    assert!(raw >= 1 && n >= 2, "need raw >= 1 and n >= 2");
    (0..n)
        .map(|i| {
            // round-half-up in integers: floor((2 i (R-1) + (N-1)) / (2 (N-1)))
            (2 * i * (raw - 1) + (n - 1)) / (2 * (n - 1))
        })
        .collect()
}

/// `n` uniformly spaced frames and their raw indices.
pub fn sample_uniform<T: Clone>(frames: &[T], n: usize) -> (Vec<T>, Vec<usize>) {
    let idx = sample_indices(frames.len(), n);
    (idx.iter().map(|&i| frames[i].clone()).collect(), idx)
}

/// Raw keyframes expressed in sampled indices: the last sample at or before
/// `s` and the first sample at or after `e`.
pub fn raw_to_sampled(raw: (usize, usize), indices: &[usize]) -> (usize, usize) {
    let s = indices.iter().rposition(|&i| i <= raw.0).unwrap_or(0);
    let e = indices
        .iter()
        .position(|&i| i >= raw.1)
        .unwrap_or(indices.len() - 1);
    (s, e.max(s + 1).min(indices.len() - 1))
}

/// The two highest scores, returned in index order; ties favour lower indices.
pub fn select_keyframes(scores: &[f64]) -> Result<KeyframeSelection, KeyframeError> {
    if scores.len() < 2 {
        return Err(KeyframeError::TooFewFrames(scores.len()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let (a, b) = (order[0], order[1]);
    Ok(KeyframeSelection {
        s: a.min(b),
        e: a.max(b),
        strategy: KeyframeStrategy::Model,
    })
}

/// Frame-differencing baseline.
///
/// With `d_t` the mean absolute difference of frames `t` and `t + 1`, the
/// change window is every `t` with `d_t > tau * max d`; the result is
/// `(first t, last t + 1)`, or `(0, N - 1)` when nothing changes.
pub fn heuristic_keyframes(frames: &[Frame]) -> Result<KeyframeSelection, KeyframeError> {
    heuristic_with_tau(frames, HEURISTIC_TAU)
}

pub fn heuristic_with_tau(frames: &[Frame], tau: f64) -> Result<KeyframeSelection, KeyframeError> {
    let n = frames.len();
    if n < 2 {
        return Err(KeyframeError::TooFewFrames(n));
    }
    let diffs: Vec<f64> = frames.windows(2).map(|w| w[0].mean_abs_diff(&w[1])).collect();
    Ok(window_from_diffs(&diffs, tau))
}

fn window_from_diffs(diffs: &[f64], tau: f64) -> KeyframeSelection {
    let n = diffs.len() + 1;
    let max = diffs.iter().copied().fold(0.0, f64::max);
    let above = |d: &f64| *d > tau * max;
    let (s, e) = if max <= 0.0 {
        (0, n - 1)
    } else {
        let first = diffs.iter().position(above).expect("max is above tau * max");
        let last = diffs.iter().rposition(above).expect("max is above tau * max");
        (first, last + 1)
    };
    KeyframeSelection {
        s,
        e,
        strategy: KeyframeStrategy::Heuristic,
    }
}

/// First and last sampled frame.
pub fn start_end_keyframes(n: usize) -> Result<KeyframeSelection, KeyframeError> {
    if n < 2 {
        return Err(KeyframeError::TooFewFrames(n));
    }
    Ok(KeyframeSelection {
        s: 0,
        e: n - 1,
        strategy: KeyframeStrategy::StartEnd,
    })
}
