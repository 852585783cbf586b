//! Per-sample glue between the stages: synthetic generation, sampling,
//! grounding, keyframe choice and query assembly.

use thiserror::Error;

use crate::caption::{build_query, CaptionError, CaptionQuery, QueryConfig, QueryMeta};
use crate::cursor_ground::{detect_sequence, CursorDetector, CursorFix, GroundingError};
use crate::frame::Frame;
use crate::geometry::Point;
use crate::keyframe::{
    heuristic_keyframes, raw_to_sampled, sample_uniform, score_frames, select_keyframes,
    start_end_keyframes, EmbeddingProvider, FrameFeatures, KeyframeError, KeyframeSelection,
    KeyframeStrategy, ScoringHead,
};
use crate::prompting::{crop, prompt_box, prompt_frame, PromptError, PromptedFrame};
use crate::scene_sim::{execute_action, random_script, standard_scene, ActionKind, GeneratedSample, SceneError};

/// Side of the cursor crops fed to the keyframe embedder.
pub const DEFAULT_FEATURE_CROP: u32 = 64;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("scene: {0}")]
    Scene(#[from] SceneError),
    #[error("cursor grounding: {0}")]
    Grounding(#[from] GroundingError),
    #[error("keyframes: {0}")]
    Keyframe(#[from] KeyframeError),
    #[error("prompting: {0}")]
    Prompt(#[from] PromptError),
    #[error("caption: {0}")]
    Caption(#[from] CaptionError),
    #[error("strategy ground_truth needs ground-truth keyframes")]
    MissingGroundTruth,
    #[error("strategy model needs a scoring head")]
    MissingModel,
    #[error("{0} frames but {1} cursor positions")]
    LengthMismatch(usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthConfig {
    pub width: u32,
    pub height: u32,
    pub frames: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 640,
            height: 400,
            frames: 10,
            seed: 0,
        }
    }
}

/// Seed of the `i`-th sample of a run (splitmix64 of `seed + i`).
pub fn sample_seed(seed: u64, i: usize) -> u64 {
    let mut z = seed.wrapping_add((i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The `i`-th synthetic sample; classes cycle through [`ActionKind::ALL`].
pub fn synth_sample(cfg: &SynthConfig, i: usize) -> Result<GeneratedSample, SceneError> {
    let seed = sample_seed(cfg.seed, i);
    let scene = standard_scene(cfg.width, cfg.height, seed);
    let script = random_script(&scene, ActionKind::ALL[i % ActionKind::ALL.len()], seed);
    execute_action(&scene, &script, cfg.frames)
}

/// Uniformly sampled frames, their raw indices and one cursor fix per sample.
pub struct Grounded {
    pub frames: Vec<Frame>,
    pub indices: Vec<usize>,
    pub fixes: Vec<CursorFix>,
}

impl Grounded {
    pub fn centers(&self) -> Vec<Point> {
        self.fixes.iter().map(|f| f.center).collect()
    }
}

pub fn ground(raw: &[Frame], n: usize, detector: &dyn CursorDetector) -> Result<Grounded, PipelineError> {
    let (frames, indices) = sample_uniform(raw, n);
    let fixes = detect_sequence(&frames, detector)?;
    Ok(Grounded { frames, indices, fixes })
}

/// Embeddings of `size`-pixel crops around each cursor position.
pub fn crop_features(
    frames: &[Frame],
    centers: &[Point],
    size: u32,
    embedder: &dyn EmbeddingProvider,
) -> Result<FrameFeatures, PipelineError> {
    if frames.len() != centers.len() {
        return Err(PipelineError::LengthMismatch(frames.len(), centers.len()));
    }
    let rows = frames
        .iter()
        .zip(centers)
        .map(|(f, &c)| {
            let bx = prompt_box(c, f.width(), f.height(), size)?;
            Ok(embedder.embed(&crop(f, &bx))?)
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(FrameFeatures::from_rows(&rows)?)
}

/// Crop features and sampled-index keyframe targets built from the
/// generator's own cursor track.
pub fn synthetic_feature_set(
    sample: &GeneratedSample,
    n: usize,
    size: u32,
    embedder: &dyn EmbeddingProvider,
) -> Result<(FrameFeatures, (usize, usize)), PipelineError> {
    let (frames, idx) = sample_uniform(&sample.frames, n);
    let centers: Vec<Point> = idx.iter().map(|&i| sample.cursor_track[i]).collect();
    let feats = crop_features(&frames, &centers, size, embedder)?;
    Ok((feats, raw_to_sampled(sample.gt_keyframes, &idx)))
}

/// Scoring head plus the embedder and crop size it was trained with.
pub struct KeyframeModel<'a> {
    pub head: &'a ScoringHead,
    pub embedder: &'a dyn EmbeddingProvider,
    pub crop_size: u32,
}

/// Applies `strategy` to sampled frames. `gt_raw` is in raw-frame indices.
pub fn choose_keyframes(
    strategy: KeyframeStrategy,
    grounded: &Grounded,
    gt_raw: Option<(usize, usize)>,
    model: Option<&KeyframeModel<'_>>,
) -> Result<KeyframeSelection, PipelineError> {
    let n = grounded.frames.len();
    match strategy {
        KeyframeStrategy::Heuristic => Ok(heuristic_keyframes(&grounded.frames)?),
        KeyframeStrategy::StartEnd => Ok(start_end_keyframes(n)?),
        KeyframeStrategy::GroundTruth => {
            let (s, e) = raw_to_sampled(gt_raw.ok_or(PipelineError::MissingGroundTruth)?, &grounded.indices);
            Ok(KeyframeSelection { s, e, strategy })
        }
        KeyframeStrategy::Model => {
            let m = model.ok_or(PipelineError::MissingModel)?;
            let feats = crop_features(&grounded.frames, &grounded.centers(), m.crop_size, m.embedder)?;
            Ok(select_keyframes(&score_frames(m.head, &feats)?)?)
        }
    }
}

/// Prompted start and end frames of `selection`.
pub fn prompt_pair(
    grounded: &Grounded,
    selection: &KeyframeSelection,
    s_box: u32,
) -> Result<(PromptedFrame, PromptedFrame), PipelineError> {
    let at = |i: usize| prompt_frame(&grounded.frames[i], grounded.fixes[i].center, s_box);
    Ok((at(selection.s)?, at(selection.e)?))
}

/// Query for one sample from its grounding and keyframes.
pub fn assemble_query(
    sample_id: &str,
    grounded: &Grounded,
    selection: &KeyframeSelection,
    s_box: u32,
    config: &QueryConfig,
) -> Result<CaptionQuery, PipelineError> {
    let (s, e) = prompt_pair(grounded, selection, s_box)?;
    let mut meta = QueryMeta::new(sample_id, s_box);
    meta.strategy = Some(selection.strategy);
    Ok(build_query(&s, &e, config, meta))
}
