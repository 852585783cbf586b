//! Caption query assembly and pluggable caption backends.

use std::collections::HashMap;
use std::io::Cursor;
use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::frame::Frame;
use crate::http::{HttpClient, HttpError, InFlight};
use crate::keyframe::KeyframeStrategy;
use crate::prompting::{resize_for_backend, PromptedFrame};
use crate::scene_sim::GeneratedSample;

/// Image semantics sentence sent with the full four-image query.
pub const QUERY_TEMPLATE: &str = "The cursor is located in the annotated green bounding box. The third and fourth image shows the cropped detailed image around the cursor before and after the action.";

/// Output request appended to every query.
pub const INSTRUCTION: &str =
    "Describe the single GUI action shown, naming the action type and the GUI element.";

const PROMPT_ONLY_TEXT: &str = "The first and second image show the screen before and after the action. The cursor is located in the annotated green bounding box.";
const CROP_ONLY_TEXT: &str = "The first and second image show the screen before and after the action. The third and fourth image are close-ups around the cursor before and after the action.";
const RAW_TEXT: &str = "The first and second image show the screen before and after the action.";

pub const DEFAULT_RESIZE: (u32, u32) = (960, 512);
pub const DEFAULT_IN_FLIGHT: usize = 4;

#[derive(Debug, Error)]
pub enum CaptionError {
    #[error("backend unavailable after {attempts} attempts: {last}")]
    BackendUnavailable { attempts: u32, last: String },
    #[error("backend rejected the request: {0}")]
    BackendRejected(String),
    #[error("invalid backend configuration: {0}")]
    BadConfig(String),
}

/// Which visual aids reach the backend.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    NoCrop,
    NoAnnotate,
    NoAnnotateNoCrop,
}

impl Ablation {
    pub fn from_flags(annotate: bool, crop: bool) -> Self {
        match (annotate, crop) {
            (true, true) => Ablation::Full,
            (true, false) => Ablation::NoCrop,
            (false, true) => Ablation::NoAnnotate,
            (false, false) => Ablation::NoAnnotateNoCrop,
        }
    }

    pub fn annotate(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoCrop)
    }

    pub fn crop(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoAnnotate)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoCrop => "no_crop",
            Ablation::NoAnnotate => "no_annotate",
            Ablation::NoAnnotateNoCrop => "no_annotate_no_crop",
        }
    }

    fn text(self) -> String {
        let lead = match self {
            Ablation::Full => QUERY_TEMPLATE,
            Ablation::NoCrop => PROMPT_ONLY_TEXT,
            Ablation::NoAnnotate => CROP_ONLY_TEXT,
            Ablation::NoAnnotateNoCrop => RAW_TEXT,
        };
        format!("{lead} {INSTRUCTION}")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryConfig {
    /// Target size of the full frames; `None` keeps them as captured.
    pub resize: Option<(u32, u32)>,
    pub ablation: Ablation,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            resize: Some(DEFAULT_RESIZE),
            ablation: Ablation::Full,
        }
    }
}

/// Parses `"WxH"`.
pub fn parse_resize(text: &str) -> Option<(u32, u32)> {
    let (w, h) = text.trim().split_once(['x', 'X'])?;
    let (w, h) = (w.trim().parse().ok()?, h.trim().parse().ok()?);
    (w > 0 && h > 0).then_some((w, h))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryMeta {
    pub sample_id: String,
    pub s_box: u32,
    pub strategy: Option<KeyframeStrategy>,
    pub ablation: Ablation,
}

impl QueryMeta {
    pub fn new(sample_id: &str, s_box: u32) -> Self {
        Self {
            sample_id: sample_id.to_string(),
            s_box,
            strategy: None,
            ablation: Ablation::Full,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptionQuery {
    pub images: Vec<Frame>,
    pub text: String,
    pub meta: QueryMeta,
}

/// Assembles `[full_s, full_e, crop_s, crop_e]`, dropping or swapping views
/// per the configured ablation. Full frames are annotated unless the ablation
/// removes the prompt.
pub fn build_query(
    start: &PromptedFrame,
    end: &PromptedFrame,
    config: &QueryConfig,
    mut meta: QueryMeta,
) -> CaptionQuery {
    let ablation = config.ablation;
    let full = |p: &PromptedFrame| {
        let f = if ablation.annotate() { &p.annotated } else { &p.original };
        match config.resize {
            Some((w, h)) => resize_for_backend(f, w, h),
            None => f.clone(),
        }
    };
    let mut images = vec![full(start), full(end)];
    if ablation.crop() {
        images.push(start.cropped.clone());
        images.push(end.cropped.clone());
    }
    meta.ablation = ablation;
    CaptionQuery {
        images,
        text: ablation.text(),
        meta,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionResult {
    pub text: String,
    pub backend_id: String,
    pub latency_ms: u64,
}

/// Outcome of one backend attempt.
#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum AttemptError {
    #[error("transient: {0}")]
    Transient(String),
    #[error("rejected: {0}")]
    Rejected(String),
}

impl From<HttpError> for AttemptError {
    fn from(e: HttpError) -> Self {
        if e.is_transient() {
            AttemptError::Transient(e.to_string())
        } else {
            AttemptError::Rejected(e.to_string())
        }
    }
}

pub trait CaptionBackend: Send + Sync {
    fn id(&self) -> String;
    /// One attempt, no retries.
    fn complete(&self, query: &CaptionQuery) -> Result<String, AttemptError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retries: u32,
    /// Delay before retry `k` (0-based) is `base * 2^k`.
    pub base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            base: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        self.base.saturating_mul(1u32 << retry.min(16))
    }

    /// Runs `attempt` until it succeeds, is rejected, or retries run out.
    pub fn run<T>(
        &self,
        mut attempt: impl FnMut() -> Result<T, AttemptError>,
    ) -> Result<T, CaptionError> {
        let mut last = String::new();
        for k in 0..=self.retries {
            if k > 0 {
                std::thread::sleep(self.delay(k - 1));
            }
            match attempt() {
                Ok(v) => return Ok(v),
                Err(AttemptError::Rejected(m)) => return Err(CaptionError::BackendRejected(m)),
                Err(AttemptError::Transient(m)) => last = m,
            }
        }
        Err(CaptionError::BackendUnavailable {
            attempts: self.retries + 1,
            last,
        })
    }
}

/// Sends `query` to `backend` under `policy`. Empty replies count as rejections.
pub fn caption(
    backend: &dyn CaptionBackend,
    query: &CaptionQuery,
    policy: &RetryPolicy,
) -> Result<CaptionResult, CaptionError> {
    let started = Instant::now();
    let text = policy.run(|| {
        let reply = backend.complete(query)?;
        let reply = reply.trim();
        if reply.is_empty() {
            Err(AttemptError::Rejected("empty caption".into()))
        } else {
            Ok(reply.to_string())
        }
    })?;
    Ok(CaptionResult {
        text,
        backend_id: backend.id(),
        latency_ms: started.elapsed().as_millis() as u64,
    })
}

pub fn oracle_caption(sample: &GeneratedSample) -> String {
    sample.gt_caption.clone()
}

/// Always answers with a fixed reply.
pub struct StubBackend {
    pub reply: String,
}

impl CaptionBackend for StubBackend {
    fn id(&self) -> String {
        "stub".into()
    }

    fn complete(&self, _: &CaptionQuery) -> Result<String, AttemptError> {
        Ok(self.reply.clone())
    }
}

/// Answers with the ground-truth caption keyed by `meta.sample_id`.
pub struct OracleBackend {
    captions: HashMap<String, String>,
}

impl OracleBackend {
    pub fn new(captions: HashMap<String, String>) -> Self {
        Self { captions }
    }
}

impl CaptionBackend for OracleBackend {
    fn id(&self) -> String {
        "oracle".into()
    }

    fn complete(&self, query: &CaptionQuery) -> Result<String, AttemptError> {
        self.captions
            .get(&query.meta.sample_id)
            .cloned()
            .ok_or_else(|| AttemptError::Rejected(format!("no caption for {}", query.meta.sample_id)))
    }
}

/// Chat-completions client shared by the caption and judge backends.
#[derive(Clone)]
pub struct ChatClient {
    pub url: String,
    pub model: String,
    client: HttpClient,
    gate: Arc<InFlight>,
}

impl ChatClient {
    pub fn new(url: &str, model: &str, client: HttpClient, gate: Arc<InFlight>) -> Self {
        Self {
            url: url.to_string(),
            model: model.to_string(),
            client,
            gate,
        }
    }

    /// Reads the bearer token from the environment variable `auth_env`, if set.
    pub fn from_env(
        url: &str,
        model: &str,
        auth_env: Option<&str>,
        timeout: Duration,
        gate: Arc<InFlight>,
    ) -> Result<Self, CaptionError> {
        if url.is_empty() {
            return Err(CaptionError::BadConfig("backend.url is empty".into()));
        }
        let token = match auth_env {
            Some(var) if !var.is_empty() => Some(std::env::var(var).map_err(|_| {
                CaptionError::BadConfig(format!("environment variable {var} is not set"))
            })?),
            _ => None,
        };
        Ok(Self::new(url, model, HttpClient::new(timeout).with_bearer(token), gate))
    }

    pub fn send(&self, messages: Value) -> Result<String, AttemptError> {
        let body = json!({ "model": self.model, "messages": messages });
        let reply = {
            let _permit = self.gate.acquire();
            self.client.post_json(&self.url, &body)?
        };
        parse_chat_reply(&reply).map_err(AttemptError::Rejected)
    }
}

/// `data:image/png;base64,...` for `frame`.
pub fn png_data_url(frame: &Frame) -> Result<String, image::ImageError> {
    let mut buf = Cursor::new(Vec::new());
    frame.image.write_to(&mut buf, image::ImageFormat::Png)?;
    Ok(format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(buf.into_inner())
    ))
}

/// One user message: every image part, then the text part.
pub fn query_messages(query: &CaptionQuery) -> Result<Value, image::ImageError> {
    let mut parts = Vec::with_capacity(query.images.len() + 1);
    for img in &query.images {
        parts.push(json!({ "type": "image_url", "image_url": { "url": png_data_url(img)? } }));
    }
    parts.push(json!({ "type": "text", "text": query.text }));
    Ok(json!([{ "role": "user", "content": parts }]))
}

/// Extracts `choices[0].message.content`, which may be a string or a list of
/// text parts.
pub fn parse_chat_reply(body: &str) -> Result<String, String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("reply is not JSON: {e}"))?;
    let content = v
        .pointer("/choices/0/message/content")
        .ok_or_else(|| "reply has no choices[0].message.content".to_string())?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        other => Err(format!("unexpected content: {other}")),
    }
}

pub struct RemoteBackend {
    chat: ChatClient,
}

impl RemoteBackend {
    pub fn new(chat: ChatClient) -> Self {
        Self { chat }
    }
}

impl CaptionBackend for RemoteBackend {
    fn id(&self) -> String {
        format!("remote:{}", self.chat.model)
    }

    fn complete(&self, query: &CaptionQuery) -> Result<String, AttemptError> {
        let messages = query_messages(query).map_err(|e| AttemptError::Rejected(e.to_string()))?;
        self.chat.send(messages)
    }
}
