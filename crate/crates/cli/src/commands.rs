use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use narrator::caption::{
    caption, CaptionBackend, ChatClient, OracleBackend, RemoteBackend, RetryPolicy, StubBackend,
};
use narrator::cursor_ground::{CursorDetector, CursorFix, RemoteDetector, TemplateMatcher};
use narrator::datasets::{
    load_manifest, manifest_root, persist_sample, stats, update_manifest, validate, write_manifest,
    Artifact, SampleRecord, Split,
};
use narrator::frame::{load_frames, Frame};
use narrator::http::{HttpClient, InFlight};
use narrator::keyframe::{
    heuristic_keyframes, raw_to_sampled, sample_indices, score_frames, select_keyframes, train_head,
    EmbeddingProvider, HeadConfig, KeyframeSelection, KeyframeStrategy, PixelEmbedder, RemoteEmbedder,
    ScoringHead, TrainConfig,
};
use narrator::metric::{aggregate, llm_judge, match_elements, decompose, BuiltinMatcher, MatchVector, ScoreReport};
use narrator::pipeline::{
    assemble_query, choose_keyframes, crop_features, ground, synth_sample, Grounded, KeyframeModel,
    SynthConfig,
};
use narrator::sprite::CursorSpriteLibrary;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{
    hex_digest, BackendKind, DetectorKind, EmbedderKind, MatcherKind, PipelineConfig, Stage,
};
use crate::{Command, Common};

/// Failure of a command, tagged with the stage that raised it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CliFailure {
    pub stage: String,
    pub message: String,
}

impl CliFailure {
    pub fn new(stage: &str, message: impl Into<String>) -> Self {
        Self {
            stage: stage.to_string(),
            message: message.into(),
        }
    }

    /// Single-line JSON form written to stderr.
    pub fn to_line(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl fmt::Display for CliFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage, self.message)
    }
}

impl std::error::Error for CliFailure {}

trait StageContext<T> {
    fn stage(self, stage: &str) -> Result<T, CliFailure>;
}

impl<T> StageContext<T> for anyhow::Result<T> {
    fn stage(self, stage: &str) -> Result<T, CliFailure> {
        self.map_err(|e| CliFailure::new(stage, format!("{e:#}")))
    }
}

/// What a successful command reports.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub samples: usize,
    /// Artifacts recomputed, per stage.
    pub computed: HashMap<String, usize>,
    pub report: Option<ScoreReport>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CursorArtifact {
    pub stage_hash: String,
    pub sample_indices: Vec<usize>,
    pub fixes: Vec<CursorFix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeArtifact {
    pub stage_hash: String,
    pub strategy: KeyframeStrategy,
    pub s: usize,
    pub e: usize,
    pub raw_s: usize,
    pub raw_e: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionArtifact {
    pub stage_hash: String,
    pub text: String,
    pub backend_id: String,
    pub latency_ms: u64,
    pub s_box: u32,
    pub ablation: String,
    pub strategy: KeyframeStrategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreArtifact {
    pub stage_hash: String,
    pub prediction: String,
    pub gt_caption: String,
    pub bits: Vec<u8>,
    pub union_size: usize,
    pub iou: f64,
}

trait Hashed {
    fn stage_hash(&self) -> &str;
}

macro_rules! hashed {
    ($($t:ty),*) => {$(impl Hashed for $t { fn stage_hash(&self) -> &str { &self.stage_hash } })*};
}
hashed!(CursorArtifact, KeyframeArtifact, PredictionArtifact, ScoreArtifact);

struct Ctx {
    cfg: PipelineConfig,
    manifest: PathBuf,
    root: PathBuf,
    pool: rayon::ThreadPool,
    force: bool,
    dump_prompts: bool,
    config_hash: String,
}

impl Ctx {
    fn new(common: &Common) -> anyhow::Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        if let Some(s) = common.s_box {
            cfg.prompt.s_box = s;
        }
        if let Some(k) = common.keyframe_strategy {
            cfg.keyframe.strategy = k;
        }
        if let Some(b) = common.backend {
            cfg.backend.kind = b;
        }
        if common.no_crop {
            cfg.prompt.crop = false;
        }
        if common.no_annotate {
            cfg.prompt.annotate = false;
        }
        cfg.validate()?;
        let jobs = common
            .jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
        Ok(Self {
            config_hash: cfg.hash(),
            root: manifest_root(&common.manifest),
            manifest: common.manifest.clone(),
            cfg,
            pool,
            force: common.force,
            dump_prompts: common.dump_prompts,
        })
    }

    fn weights_path(&self) -> PathBuf {
        self.root.join(&self.cfg.keyframe.weights)
    }

    fn weights_digest(&self) -> anyhow::Result<Option<String>> {
        if self.cfg.keyframe.strategy != KeyframeStrategy::Model {
            return Ok(None);
        }
        let path = self.weights_path();
        let bytes = std::fs::read(&path).with_context(|| {
            format!("keyframe head weights {} not readable; run train-head first", path.display())
        })?;
        Ok(Some(hex_digest(&bytes)))
    }

    fn stage_hash(&self, stage: Stage) -> anyhow::Result<String> {
        Ok(self.cfg.stage_hash(stage, self.weights_digest()?.as_deref()))
    }

    fn load(&self) -> anyhow::Result<Vec<SampleRecord>> {
        Ok(load_manifest(&self.manifest)?)
    }

    fn per_sample<T: Send>(
        &self,
        records: &[SampleRecord],
        f: impl Fn(&SampleRecord) -> anyhow::Result<T> + Sync,
    ) -> anyhow::Result<Vec<T>> {
        self.pool.install(|| {
            records
                .par_iter()
                .map(|r| f(r).with_context(|| format!("sample {}", r.id)))
                .collect()
        })
    }

    fn read_artifact<T: DeserializeOwned>(&self, rec: &SampleRecord, kind: Artifact) -> anyhow::Result<Option<T>> {
        let Some(rel) = rec.artifact(kind) else { return Ok(None) };
        let path = self.root.join(rel);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?))
    }

    fn require<T: DeserializeOwned>(&self, rec: &SampleRecord, kind: Artifact, producer: &str) -> anyhow::Result<T> {
        self.read_artifact(rec, kind)?.ok_or_else(|| {
            anyhow!("sample {} has no {} artifact; run {producer} first", rec.id, kind.file_name())
        })
    }

    /// Whether `rec` already holds a `kind` artifact produced under `hash`.
    fn current<T: DeserializeOwned + Hashed>(&self, rec: &SampleRecord, kind: Artifact, hash: &str) -> bool {
        !self.force
            && self
                .read_artifact::<T>(rec, kind)
                .ok()
                .flatten()
                .is_some_and(|a| a.stage_hash() == hash)
    }

    fn write_artifact<T: Serialize>(&self, id: &str, kind: Artifact, value: &T) -> anyhow::Result<String> {
        let rel = kind.relative_path(id);
        let path = self.root.join(&rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(rel)
    }

    fn record_artifacts(&self, kind: Artifact, written: &[(String, String)]) -> anyhow::Result<()> {
        if written.is_empty() {
            return Ok(());
        }
        let by_id: HashMap<&str, &str> = written.iter().map(|(id, p)| (id.as_str(), p.as_str())).collect();
        update_manifest(&self.manifest, |records| {
            for r in records.iter_mut() {
                if let Some(p) = by_id.get(r.id.as_str()) {
                    r.set_artifact(kind, Some(p.to_string()));
                }
            }
        })?;
        Ok(())
    }

    fn log_run(&self, command: &str) -> anyhow::Result<()> {
        let entry = serde_json::json!({
            "command": command,
            "config_hash": self.config_hash,
            "seed": self.cfg.seed,
            "config": self.cfg,
        });
        std::fs::create_dir_all(&self.root)?;
        std::fs::write(self.root.join("run.json"), serde_json::to_string_pretty(&entry)? + "\n")?;
        use std::io::Write;
        let mut log = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.root.join("runs.jsonl"))?;
        writeln!(log, "{entry}")?;
        Ok(())
    }

    fn summary(&self, command: &str, samples: usize) -> Summary {
        Summary {
            command: command.to_string(),
            config_hash: self.config_hash.clone(),
            seed: self.cfg.seed,
            samples,
            computed: HashMap::new(),
            report: None,
            text: String::new(),
        }
    }

    fn detector(&self) -> anyhow::Result<Box<dyn CursorDetector>> {
        Ok(match self.cfg.detector.kind {
            DetectorKind::Template => Box::new(TemplateMatcher::new(
                &CursorSpriteLibrary::builtin(),
                self.cfg.detector.threshold,
            )?),
            DetectorKind::Remote => {
                if self.cfg.detector.url.is_empty() {
                    bail!("detector.url is empty");
                }
                Box::new(RemoteDetector::new(
                    self.cfg.detector.url.clone(),
                    HttpClient::new(Duration::from_secs(self.cfg.backend.timeout_secs)),
                ))
            }
        })
    }

    fn embedder(&self) -> anyhow::Result<Box<dyn EmbeddingProvider>> {
        Ok(match self.cfg.keyframe.embedder {
            EmbedderKind::Pixel => Box::new(PixelEmbedder),
            EmbedderKind::Remote => {
                if self.cfg.keyframe.embed_url.is_empty() {
                    bail!("keyframe.embed_url is empty");
                }
                Box::new(RemoteEmbedder::new(
                    self.cfg.keyframe.embed_url.clone(),
                    self.cfg.keyframe.embed_dim,
                    HttpClient::new(Duration::from_secs(self.cfg.backend.timeout_secs)),
                ))
            }
        })
    }

    fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            retries: self.cfg.backend.retries,
            base: Duration::from_millis(self.cfg.backend.backoff_ms),
        }
    }

    fn chat(&self, url: &str, model: &str, auth_env: &str) -> anyhow::Result<ChatClient> {
        let gate = Arc::new(InFlight::new(self.cfg.backend.max_in_flight));
        let auth = (!auth_env.is_empty()).then_some(auth_env);
        Ok(ChatClient::from_env(
            url,
            model,
            auth,
            Duration::from_secs(self.cfg.backend.timeout_secs),
            gate,
        )?)
    }

    fn backend(&self, records: &[SampleRecord]) -> anyhow::Result<Box<dyn CaptionBackend>> {
        let b = &self.cfg.backend;
        Ok(match b.kind {
            BackendKind::Stub => Box::new(StubBackend { reply: b.reply.clone() }),
            BackendKind::Oracle => Box::new(OracleBackend::new(
                records.iter().map(|r| (r.id.clone(), r.gt_caption.clone())).collect(),
            )),
            BackendKind::Remote => Box::new(RemoteBackend::new(self.chat(&b.url, &b.model, &b.auth_env)?)),
        })
    }
}

fn raw_frames(ctx: &Ctx, rec: &SampleRecord) -> anyhow::Result<Vec<Frame>> {
    let dir = ctx.root.join(&rec.frames_dir);
    let frames = load_frames(&dir).with_context(|| format!("loading frames from {}", dir.display()))?;
    if frames.is_empty() {
        bail!("no frames in {}", dir.display());
    }
    Ok(frames)
}

fn grounded_from(raw: &[Frame], art: &CursorArtifact) -> anyhow::Result<Grounded> {
    if art.sample_indices.iter().any(|&i| i >= raw.len()) || art.sample_indices.len() != art.fixes.len() {
        bail!("cursor artifact does not match the frames on disk");
    }
    Ok(Grounded {
        frames: art.sample_indices.iter().map(|&i| raw[i].clone()).collect(),
        indices: art.sample_indices.clone(),
        fixes: art.fixes.clone(),
    })
}

/// Runs `command`.
pub fn execute(command: &Command) -> Result<Summary, CliFailure> {
    let name = command.name();
    let ctx = Ctx::new(command.common()).stage("config")?;
    match command {
        Command::Generate { count, width, height, frames, .. } => {
            let mut ctx = ctx;
            let g = &mut ctx.cfg.generate;
            g.count = count.unwrap_or(g.count);
            g.width = width.unwrap_or(g.width);
            g.height = height.unwrap_or(g.height);
            g.frames = frames.unwrap_or(g.frames);
            ctx.config_hash = ctx.cfg.hash();
            if ctx.manifest.exists() && !ctx.force {
                return Err(CliFailure::new(
                    "generate",
                    format!("{} exists; pass --force to overwrite", ctx.manifest.display()),
                ));
            }
            ctx.log_run(name).stage("generate")?;
            let n = generate(&ctx).stage("generate")?;
            let mut s = ctx.summary(name, n);
            s.text = format!("generated {n} samples into {}", ctx.manifest.display());
            Ok(s)
        }
        Command::Pipeline { count, .. } => {
            let mut ctx = ctx;
            if let Some(c) = count {
                ctx.cfg.generate.count = *c;
                ctx.config_hash = ctx.cfg.hash();
            }
            ctx.log_run(name).stage("pipeline")?;
            let mut computed = HashMap::new();
            if !ctx.manifest.exists() {
                computed.insert("generate".into(), generate(&ctx).stage("generate")?);
            }
            let resume = !ctx.force;
            computed.insert("detect".into(), detect_stage(&ctx, resume).stage("detect")?);
            computed.insert("keyframes".into(), keyframe_stage(&ctx, resume).stage("keyframes")?);
            computed.insert("caption".into(), caption_stage(&ctx, resume).stage("caption")?);
            let (report, scored, text) = evaluate_stage(&ctx, resume).stage("evaluate")?;
            computed.insert("evaluate".into(), scored);
            let mut s = ctx.summary(name, report.per_category.iter().map(|c| c.n_samples).sum());
            s.computed = computed;
            s.text = text;
            s.report = Some(report);
            Ok(s)
        }
        Command::DetectCursor { .. } => single(&ctx, name, "detect", detect_stage),
        Command::Keyframes { .. } => single(&ctx, name, "keyframes", keyframe_stage),
        Command::Caption { .. } => single(&ctx, name, "caption", caption_stage),
        Command::Evaluate { .. } => {
            ctx.log_run(name).stage("evaluate")?;
            let (report, scored, text) = evaluate_stage(&ctx, false).stage("evaluate")?;
            let mut s = ctx.summary(name, scored);
            s.computed.insert("evaluate".into(), scored);
            s.text = text;
            s.report = Some(report);
            Ok(s)
        }
        Command::TrainHead { epochs, .. } => {
            let mut ctx = ctx;
            if let Some(e) = epochs {
                ctx.cfg.train.epochs = *e;
                ctx.config_hash = ctx.cfg.hash();
            }
            ctx.log_run(name).stage("train-head")?;
            let (n, text) = train(&ctx).stage("train-head")?;
            let mut s = ctx.summary(name, n);
            s.text = text;
            Ok(s)
        }
        Command::Stats { .. } => {
            let records = ctx.load().stage("stats")?;
            let st = stats(&records);
            let violations = validate(&records, &ctx.root);
            let json = serde_json::json!({ "stats": st, "violations": violations });
            std::fs::write(ctx.root.join("stats.json"), format!("{json:#}\n"))
                .map_err(|e| CliFailure::new("stats", e.to_string()))?;
            let mut s = ctx.summary(name, records.len());
            s.text = format!("{}violations: {}\n", st.to_table(), violations.len());
            for v in &violations {
                s.text.push_str(&format!("  {}: {}\n", v.id, v.problem));
            }
            Ok(s)
        }
    }
}

fn single(
    ctx: &Ctx,
    name: &str,
    stage: &str,
    f: fn(&Ctx, bool) -> anyhow::Result<usize>,
) -> Result<Summary, CliFailure> {
    ctx.log_run(name).stage(stage)?;
    let n = f(ctx, false).stage(stage)?;
    let mut s = ctx.summary(name, n);
    s.computed.insert(stage.into(), n);
    s.text = format!("{stage}: wrote {n} artifacts");
    Ok(s)
}

fn generate(ctx: &Ctx) -> anyhow::Result<usize> {
    let g = &ctx.cfg.generate;
    let synth = SynthConfig {
        width: g.width,
        height: g.height,
        frames: g.frames,
        seed: ctx.cfg.seed,
    };
    let n_train = (g.count as f64 * g.train_fraction).round() as usize;
    let records = ctx.pool.install(|| {
        (0..g.count)
            .into_par_iter()
            .map(|i| {
                let sample = synth_sample(&synth, i)?;
                let split = if i < n_train { Split::Train } else { Split::Test };
                Ok(persist_sample(&ctx.root, &format!("syn_{i:05}"), split, &sample)?)
            })
            .collect::<anyhow::Result<Vec<_>>>()
    })?;
    write_manifest(&ctx.manifest, &records)?;
    Ok(records.len())
}

fn detect_stage(ctx: &Ctx, resume: bool) -> anyhow::Result<usize> {
    let records = ctx.load()?;
    let hash = ctx.stage_hash(Stage::Detect)?;
    let detector = ctx.detector()?;
    let n = ctx.cfg.keyframe.samples;
    let written = ctx.per_sample(&records, |rec| {
        if resume && ctx.current::<CursorArtifact>(rec, Artifact::CursorFixes, &hash) {
            return Ok(None);
        }
        let g = ground(&raw_frames(ctx, rec)?, n, detector.as_ref())?;
        let art = CursorArtifact {
            stage_hash: hash.clone(),
            sample_indices: g.indices,
            fixes: g.fixes,
        };
        Ok(Some((rec.id.clone(), ctx.write_artifact(&rec.id, Artifact::CursorFixes, &art)?)))
    })?;
    let written: Vec<_> = written.into_iter().flatten().collect();
    ctx.record_artifacts(Artifact::CursorFixes, &written)?;
    Ok(written.len())
}

fn keyframe_stage(ctx: &Ctx, resume: bool) -> anyhow::Result<usize> {
    let records = ctx.load()?;
    let hash = ctx.stage_hash(Stage::Keyframes)?;
    let strategy = ctx.cfg.keyframe.strategy;
    let head = match strategy {
        KeyframeStrategy::Model => Some(ScoringHead::load(ctx.weights_path())?),
        _ => None,
    };
    let embedder = ctx.embedder()?;
    let model = head.as_ref().map(|head| KeyframeModel {
        head,
        embedder: embedder.as_ref(),
        crop_size: ctx.cfg.keyframe.crop_size,
    });
    if let Some(m) = &model {
        if m.head.config().dim != m.embedder.dim() {
            bail!(
                "head expects {}-dim features but the embedder yields {}",
                m.head.config().dim,
                m.embedder.dim()
            );
        }
    }
    let written = ctx.per_sample(&records, |rec| {
        if resume && ctx.current::<KeyframeArtifact>(rec, Artifact::Keyframes, &hash) {
            return Ok(None);
        }
        let raw = raw_frames(ctx, rec)?;
        let grounded = if strategy == KeyframeStrategy::Model {
            grounded_from(&raw, &ctx.require(rec, Artifact::CursorFixes, "detect-cursor")?)?
        } else {
            let indices = sample_indices(raw.len(), ctx.cfg.keyframe.samples);
            Grounded {
                frames: indices.iter().map(|&i| raw[i].clone()).collect(),
                indices,
                fixes: Vec::new(),
            }
        };
        let sel = choose_keyframes(strategy, &grounded, rec.gt_keyframes, model.as_ref())?;
        let art = KeyframeArtifact {
            stage_hash: hash.clone(),
            strategy,
            s: sel.s,
            e: sel.e,
            raw_s: grounded.indices[sel.s],
            raw_e: grounded.indices[sel.e],
        };
        Ok(Some((rec.id.clone(), ctx.write_artifact(&rec.id, Artifact::Keyframes, &art)?)))
    })?;
    let written: Vec<_> = written.into_iter().flatten().collect();
    ctx.record_artifacts(Artifact::Keyframes, &written)?;
    Ok(written.len())
}

fn dump_prompt(ctx: &Ctx, id: &str, query: &narrator::caption::CaptionQuery) -> anyhow::Result<()> {
    let dir = ctx.root.join(format!("artifacts/{id}/prompt"));
    std::fs::create_dir_all(&dir)?;
    for (k, img) in query.images.iter().enumerate() {
        img.save_png(dir.join(format!("image_{k}.png")))?;
    }
    std::fs::write(dir.join("text.txt"), format!("{}\n", query.text))?;
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&query.meta)? + "\n")?;
    Ok(())
}

fn caption_stage(ctx: &Ctx, resume: bool) -> anyhow::Result<usize> {
    let records = ctx.load()?;
    let hash = ctx.stage_hash(Stage::Caption)?;
    let backend = ctx.backend(&records)?;
    let policy = ctx.retry();
    let qcfg = ctx.cfg.query_config();
    let s_box = ctx.cfg.prompt.s_box;
    let written = ctx.per_sample(&records, |rec| {
        if resume && ctx.current::<PredictionArtifact>(rec, Artifact::Prediction, &hash) {
            return Ok(None);
        }
        let fixes: CursorArtifact = ctx.require(rec, Artifact::CursorFixes, "detect-cursor")?;
        let kf: KeyframeArtifact = ctx.require(rec, Artifact::Keyframes, "keyframes")?;
        let grounded = grounded_from(&raw_frames(ctx, rec)?, &fixes)?;
        if kf.e >= grounded.frames.len() || kf.s >= kf.e {
            bail!("keyframes ({}, {}) do not fit {} sampled frames", kf.s, kf.e, grounded.frames.len());
        }
        let sel = KeyframeSelection { s: kf.s, e: kf.e, strategy: kf.strategy };
        let query = assemble_query(&rec.id, &grounded, &sel, s_box, &qcfg)?;
        if ctx.dump_prompts {
            dump_prompt(ctx, &rec.id, &query)?;
        }
        let out = caption(backend.as_ref(), &query, &policy)?;
        let art = PredictionArtifact {
            stage_hash: hash.clone(),
            text: out.text,
            backend_id: out.backend_id,
            latency_ms: out.latency_ms,
            s_box,
            ablation: query.meta.ablation.as_str().to_string(),
            strategy: kf.strategy,
        };
        Ok(Some((rec.id.clone(), ctx.write_artifact(&rec.id, Artifact::Prediction, &art)?)))
    })?;
    let written: Vec<_> = written.into_iter().flatten().collect();
    ctx.record_artifacts(Artifact::Prediction, &written)?;
    Ok(written.len())
}

#[derive(Serialize)]
struct Results<'a> {
    config_hash: &'a str,
    seed: u64,
    report: &'a ScoreReport,
    samples: Vec<SampleResult<'a>>,
}

#[derive(Serialize)]
struct SampleResult<'a> {
    id: &'a str,
    action_class: narrator::scene_sim::ActionKind,
    prediction: &'a str,
    gt_caption: &'a str,
    bits: &'a [u8],
    union_size: usize,
    iou: f64,
}

fn evaluate_stage(ctx: &Ctx, resume: bool) -> anyhow::Result<(ScoreReport, usize, String)> {
    let records = ctx.load()?;
    if records.is_empty() {
        bail!("manifest has no samples");
    }
    let hash = ctx.stage_hash(Stage::Evaluate)?;
    let judge = match ctx.cfg.matcher.kind {
        MatcherKind::Judge => {
            let m = &ctx.cfg.matcher;
            Some(ctx.chat(&m.url, &m.model, &m.auth_env)?)
        }
        MatcherKind::Builtin => None,
    };
    let policy = ctx.retry();
    let preds: Vec<PredictionArtifact> = records
        .iter()
        .map(|r| ctx.require(r, Artifact::Prediction, "caption"))
        .collect::<anyhow::Result<_>>()?;
    let scored = ctx.per_sample(&records, |rec| {
        let pred = &preds[records.iter().position(|r| r.id == rec.id).expect("own record")];
        if resume && ctx.current::<ScoreArtifact>(rec, Artifact::Score, &hash) {
            let art: ScoreArtifact = ctx.require(rec, Artifact::Score, "evaluate")?;
            return Ok((art, None));
        }
        let m: MatchVector = match &judge {
            Some(j) => llm_judge(&pred.text, &rec.gt_caption, j, &policy)?,
            None => match_elements(&decompose(&pred.text), &decompose(&rec.gt_caption), &BuiltinMatcher),
        };
        let art = ScoreArtifact {
            stage_hash: hash.clone(),
            prediction: pred.text.clone(),
            gt_caption: rec.gt_caption.clone(),
            iou: m.iou(),
            bits: m.bits,
            union_size: m.union_size,
        };
        let path = ctx.write_artifact(&rec.id, Artifact::Score, &art)?;
        Ok((art, Some((rec.id.clone(), path))))
    })?;
    let written: Vec<_> = scored.iter().filter_map(|(_, w)| w.clone()).collect();
    ctx.record_artifacts(Artifact::Score, &written)?;

    let items: Vec<_> = records
        .iter()
        .zip(&scored)
        .map(|(r, (a, _))| {
            (
                Some(r.action_class),
                MatchVector {
                    bits: a.bits.clone(),
                    union_size: a.union_size,
                },
            )
        })
        .collect();
    let report = aggregate(&items);
    let results = Results {
        config_hash: &ctx.config_hash,
        seed: ctx.cfg.seed,
        report: &report,
        samples: records
            .iter()
            .zip(&scored)
            .map(|(r, (a, _))| SampleResult {
                id: &r.id,
                action_class: r.action_class,
                prediction: &a.prediction,
                gt_caption: &r.gt_caption,
                bits: &a.bits,
                union_size: a.union_size,
                iou: a.iou,
            })
            .collect(),
    };
    let table = format!("config {}\n{}", ctx.config_hash, report.to_table());
    std::fs::write(ctx.root.join("report.txt"), &table)?;
    std::fs::write(ctx.root.join("results.json"), serde_json::to_string_pretty(&results)? + "\n")?;
    Ok((report, written.len(), table))
}

#[derive(Serialize)]
struct TrainReport {
    config_hash: String,
    seed: u64,
    train_samples: usize,
    test_samples: usize,
    initial_loss: f64,
    final_loss: f64,
    model_exact: Option<f64>,
    heuristic_exact: Option<f64>,
    weights: String,
}

fn train(ctx: &Ctx) -> anyhow::Result<(usize, String)> {
    let records = ctx.load()?;
    let embedder = ctx.embedder()?;
    let detector = ctx.detector()?;
    let n = ctx.cfg.keyframe.samples;
    let crop = ctx.cfg.keyframe.crop_size;
    let with_gt = |split: Split| -> Vec<SampleRecord> {
        records.iter().filter(|r| r.split == split && r.gt_keyframes.is_some()).cloned().collect()
    };
    let (train_recs, test_recs) = (with_gt(Split::Train), with_gt(Split::Test));
    if train_recs.is_empty() {
        bail!("no train-split samples with ground-truth keyframes");
    }
    let featurize = |recs: &[SampleRecord]| {
        ctx.per_sample(recs, |rec| {
            let raw = raw_frames(ctx, rec)?;
            let grounded = match ctx.read_artifact::<CursorArtifact>(rec, Artifact::CursorFixes)? {
                Some(a) if a.sample_indices.len() == n => grounded_from(&raw, &a)?,
                _ => ground(&raw, n, detector.as_ref())?,
            };
            let feats = crop_features(&grounded.frames, &grounded.centers(), crop, embedder.as_ref())?;
            let gt = raw_to_sampled(rec.gt_keyframes.expect("filtered"), &grounded.indices);
            Ok((feats, gt, grounded.frames))
        })
    };
    let train_set = featurize(&train_recs)?;
    let t = &ctx.cfg.train;
    let config = TrainConfig {
        head: HeadConfig {
            layers: t.layers,
            heads: t.heads,
            dim: embedder.dim(),
        },
        epochs: t.epochs,
        learning_rate: t.learning_rate,
        batch_size: t.batch_size,
        positive_weight: None,
        seed: ctx.cfg.seed,
    };
    let pairs: Vec<_> = train_set.iter().map(|(f, gt, _)| (f.clone(), *gt)).collect();
    let outcome = train_head(&pairs, &config)?;
    outcome.head.save(ctx.weights_path())?;

    let test_set = featurize(&test_recs)?;
    let (mut model_hits, mut heur_hits) = (0usize, 0usize);
    for (f, gt, frames) in &test_set {
        let sel = select_keyframes(&score_frames(&outcome.head, f)?)?;
        model_hits += usize::from((sel.s, sel.e) == *gt);
        let h = heuristic_keyframes(frames)?;
        heur_hits += usize::from((h.s, h.e) == *gt);
    }
    let pct = |k: usize| (!test_set.is_empty()).then(|| 100.0 * k as f64 / test_set.len() as f64);
    let report = TrainReport {
        config_hash: ctx.config_hash.clone(),
        seed: ctx.cfg.seed,
        train_samples: train_set.len(),
        test_samples: test_set.len(),
        initial_loss: outcome.initial_loss,
        final_loss: outcome.final_loss,
        model_exact: pct(model_hits),
        heuristic_exact: pct(heur_hits),
        weights: ctx.cfg.keyframe.weights.clone(),
    };
    std::fs::write(ctx.root.join("train_report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    let fmt_pct = |p: Option<f64>| p.map_or("n/a".to_string(), |v| format!("{v:.1}%"));
    let text = format!(
        "trained on {} samples: loss {:.4} -> {:.4}\nheld-out exact top-2: model {} / heuristic {} ({} samples)\nweights: {}\n",
        report.train_samples,
        report.initial_loss,
        report.final_loss,
        fmt_pct(report.model_exact),
        fmt_pct(report.heuristic_exact),
        report.test_samples,
        ctx.weights_path().display()
    );
    Ok((train_set.len(), text))
}
