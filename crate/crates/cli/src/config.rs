//! TOML pipeline configuration and its content hashes.

use std::path::Path;

use anyhow::{bail, Context};
use narrator::caption::{parse_resize, Ablation, QueryConfig, DEFAULT_IN_FLIGHT};
use narrator::cursor_ground::DEFAULT_THRESHOLD;
use narrator::keyframe::{KeyframeStrategy, DEFAULT_SAMPLES};
use narrator::pipeline::DEFAULT_FEATURE_CROP;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Prompt sizes accepted on the command line.
pub const S_BOX_CHOICES: [u32; 4] = [128, 256, 512, 768];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub generate: GenerateConfig,
    pub detector: DetectorConfig,
    pub prompt: PromptConfig,
    pub keyframe: KeyframeConfig,
    pub train: TrainSection,
    pub backend: BackendConfig,
    pub matcher: MatcherConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            generate: GenerateConfig::default(),
            detector: DetectorConfig::default(),
            prompt: PromptConfig::default(),
            keyframe: KeyframeConfig::default(),
            train: TrainSection::default(),
            backend: BackendConfig::default(),
            matcher: MatcherConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub count: usize,
    pub width: u32,
    pub height: u32,
    pub frames: usize,
    /// Share of samples assigned to the train split.
    pub train_fraction: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            count: 20,
            width: 640,
            height: 400,
            frames: 10,
            train_fraction: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Template,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    pub threshold: f64,
    pub url: String,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            kind: DetectorKind::Template,
            threshold: DEFAULT_THRESHOLD,
            url: String::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub s_box: u32,
    pub annotate: bool,
    pub crop: bool,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            s_box: 256,
            annotate: true,
            crop: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    Pixel,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeyframeConfig {
    pub strategy: KeyframeStrategy,
    pub samples: usize,
    pub crop_size: u32,
    /// Head weights, relative to the manifest directory.
    pub weights: String,
    pub embedder: EmbedderKind,
    pub embed_url: String,
    pub embed_dim: usize,
}

impl Default for KeyframeConfig {
    fn default() -> Self {
        Self {
            strategy: KeyframeStrategy::Heuristic,
            samples: DEFAULT_SAMPLES,
            crop_size: DEFAULT_FEATURE_CROP,
            weights: "keyframe_head.akfh".into(),
            embedder: EmbedderKind::Pixel,
            embed_url: String::new(),
            embed_dim: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub layers: usize,
    pub heads: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 40,
            learning_rate: 6e-4,
            batch_size: 16,
            layers: 2,
            heads: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    Oracle,
    Stub,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: String,
    pub resize: String,
    /// Fixed answer of the stub backend.
    pub reply: String,
    pub max_in_flight: usize,
    pub retries: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Stub,
            url: String::new(),
            model: String::new(),
            auth_env: String::new(),
            resize: "960x512".into(),
            reply: "Left-Click on Export button".into(),
            max_in_flight: DEFAULT_IN_FLIGHT,
            retries: 3,
            backoff_ms: 1000,
            timeout_secs: 120,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatcherKind {
    Builtin,
    Judge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatcherConfig {
    pub kind: MatcherKind,
    pub url: String,
    pub model: String,
    pub auth_env: String,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            kind: MatcherKind::Builtin,
            url: String::new(),
            model: String::new(),
            auth_env: String::new(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.prompt.s_box == 0 {
            bail!("prompt.s_box must be positive");
        }
        if self.keyframe.samples < 2 {
            bail!("keyframe.samples must be at least 2");
        }
        if self.keyframe.crop_size == 0 {
            bail!("keyframe.crop_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.generate.train_fraction) {
            bail!("generate.train_fraction must lie in [0, 1]");
        }
        if !(self.detector.threshold > 0.0 && self.detector.threshold <= 1.0) {
            bail!("detector.threshold must lie in (0, 1]");
        }
        if !self.backend.resize.is_empty() && parse_resize(&self.backend.resize).is_none() {
            bail!("backend.resize must look like 960x512, got {:?}", self.backend.resize);
        }
        Ok(())
    }

    pub fn query_config(&self) -> QueryConfig {
        QueryConfig {
            resize: parse_resize(&self.backend.resize),
            ablation: Ablation::from_flags(self.prompt.annotate, self.prompt.crop),
        }
    }

    /// Hash of the whole effective configuration.
    pub fn hash(&self) -> String {
        hash_json(&serde_json::to_value(self).expect("config serializes"))
    }

    /// Hash of the settings that determine a stage's artifacts, chained over
    /// the earlier stages. `weights` is the digest of the head file when the
    /// model strategy is active.
    pub fn stage_hash(&self, stage: Stage, weights: Option<&str>) -> String {
        let detect = serde_json::json!({ "detector": self.detector, "samples": self.keyframe.samples });
        let value = match stage {
            Stage::Detect => detect,
            Stage::Keyframes => serde_json::json!({
                "detect": self.stage_hash(Stage::Detect, weights),
                "keyframe": self.keyframe,
                "weights": weights,
            }),
            Stage::Caption => serde_json::json!({
                "keyframes": self.stage_hash(Stage::Keyframes, weights),
                "prompt": self.prompt,
                "backend": self.backend,
            }),
            Stage::Evaluate => serde_json::json!({
                "caption": self.stage_hash(Stage::Caption, weights),
                "matcher": self.matcher,
            }),
        };
        hash_json(&value)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Detect,
    Keyframes,
    Caption,
    Evaluate,
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_json(value: &serde_json::Value) -> String {
    hex_digest(value.to_string().as_bytes())
}
