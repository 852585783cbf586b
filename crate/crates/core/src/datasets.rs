//! JSONL sample manifests, artifact bookkeeping, validation and split counts.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{count_frames, save_frames};
use crate::metric::decompose;
use crate::scene_sim::{ActionKind, GeneratedSample};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("manifest corrupt at line {line}: {reason}")]
    ManifestCorrupt { line: usize, reason: String },
    #[error("i/o error on {path}: {err}")]
    Io { path: PathBuf, err: std::io::Error },
    #[error("failed to write frames: {0}")]
    Image(#[from] image::ImageError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |err| DatasetError::Io {
        path: path.to_path_buf(),
        err,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Auto,
    Manual,
    Synthetic,
}

/// Per-sample artifact files, stored under `artifacts/<id>/`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Artifact {
    CursorFixes,
    Keyframes,
    Prediction,
    Score,
}

impl Artifact {
    pub const ALL: [Artifact; 4] = [
        Artifact::CursorFixes,
        Artifact::Keyframes,
        Artifact::Prediction,
        Artifact::Score,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            Artifact::CursorFixes => "cursor_fixes.json",
            Artifact::Keyframes => "keyframes.json",
            Artifact::Prediction => "prediction.json",
            Artifact::Score => "score.json",
        }
    }

    /// Manifest-relative path of this artifact for sample `id`.
    pub fn relative_path(self, id: &str) -> String {
        format!("artifacts/{id}/{}", self.file_name())
    }
}

/// One manifest line. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub split: Split,
    pub frames_dir: String,
    pub keylog_path: String,
    pub gt_caption: String,
    pub action_class: ActionKind,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_keyframes: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cursor_fixes: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyframes: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<String>,
}

impl SampleRecord {
    pub fn artifact(&self, kind: Artifact) -> Option<&str> {
        match kind {
            Artifact::CursorFixes => self.cursor_fixes.as_deref(),
            Artifact::Keyframes => self.keyframes.as_deref(),
            Artifact::Prediction => self.prediction.as_deref(),
            Artifact::Score => self.score.as_deref(),
        }
        .filter(|p| !p.is_empty())
    }

    /// Records an artifact path; ground-truth fields are untouched.
    pub fn set_artifact(&mut self, kind: Artifact, path: Option<String>) {
        let slot = match kind {
            Artifact::CursorFixes => &mut self.cursor_fixes,
            Artifact::Keyframes => &mut self.keyframes,
            Artifact::Prediction => &mut self.prediction,
            Artifact::Score => &mut self.score,
        };
        *slot = path;
    }

    fn paths(&self) -> impl Iterator<Item = (&'static str, &str)> {
        [("frames_dir", self.frames_dir.as_str()), ("keylog_path", self.keylog_path.as_str())]
            .into_iter()
            .chain(
                Artifact::ALL
                    .into_iter()
                    .filter_map(|k| self.artifact(k).map(|p| (k.file_name(), p))),
            )
    }
}

/// Directory that manifest-relative paths resolve against.
pub fn manifest_root(manifest: &Path) -> PathBuf {
    manifest
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

pub fn to_jsonl(records: &[SampleRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records always serialize"));
        out.push('\n');
    }
    out
}

/// Parses JSONL; blank lines are skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<SampleRecord>, DatasetError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| DatasetError::ManifestCorrupt {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Replaces the manifest contents under an exclusive lock.
pub fn write_manifest(path: &Path, records: &[SampleRecord]) -> Result<(), DatasetError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut file = OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(path)
        .map_err(io_err(path))?;
    file.lock().map_err(io_err(path))?;
    file.set_len(0).map_err(io_err(path))?;
    file.write_all(to_jsonl(records).as_bytes()).map_err(io_err(path))?;
    file.sync_data().map_err(io_err(path))
}

/// Applies `f` to the manifest while holding its exclusive lock.
pub fn update_manifest<T>(
    path: &Path,
    f: impl FnOnce(&mut Vec<SampleRecord>) -> T,
) -> Result<T, DatasetError> {
    let mut file = OpenOptions::new().read(true).write(true).open(path).map_err(io_err(path))?;
    file.lock().map_err(io_err(path))?;
    let mut text = String::new();
    file.read_to_string(&mut text).map_err(io_err(path))?;
    let mut records = parse_manifest(&text)?;
    let out = f(&mut records);
    file.set_len(0).map_err(io_err(path))?;
    file.seek(SeekFrom::Start(0)).map_err(io_err(path))?;
    file.write_all(to_jsonl(&records).as_bytes()).map_err(io_err(path))?;
    file.sync_data().map_err(io_err(path))?;
    Ok(out)
}

fn read_locked(path: &Path) -> Result<String, DatasetError> {
    let mut file = File::open(path).map_err(io_err(path))?;
    file.lock_shared().map_err(io_err(path))?;
    let mut text = String::new();
    file.read_to_string(&mut text).map_err(io_err(path))?;
    Ok(text)
}

/// Parses the manifest and checks that every referenced file exists.
pub fn load_manifest(path: &Path) -> Result<Vec<SampleRecord>, DatasetError> {
    let text = read_locked(path)?;
    let root = manifest_root(path);
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |reason: String| DatasetError::ManifestCorrupt { line: i + 1, reason };
        let rec: SampleRecord = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
        for (field, rel) in rec.paths() {
            if !root.join(rel).exists() {
                return Err(corrupt(format!("{}: {field} {rel} does not exist", rec.id)));
            }
        }
        records.push(rec);
    }
    Ok(records)
}

/// Writes frames and keylog under `root/samples/<id>/` and returns its record.
pub fn persist_sample(
    root: &Path,
    id: &str,
    split: Split,
    sample: &GeneratedSample,
) -> Result<SampleRecord, DatasetError> {
    let frames_rel = format!("samples/{id}/frames");
    let keylog_rel = format!("samples/{id}/keylog.txt");
    save_frames(&sample.frames, &root.join(&frames_rel))?;
    let keylog = root.join(&keylog_rel);
    std::fs::write(&keylog, sample.keylog.to_text()).map_err(io_err(&keylog))?;
    Ok(SampleRecord {
        id: id.to_string(),
        split,
        frames_dir: frames_rel,
        keylog_path: keylog_rel,
        gt_caption: sample.gt_caption.clone(),
        action_class: sample.action_class,
        source: Source::Synthetic,
        gt_keyframes: Some(sample.gt_keyframes),
        cursor_fixes: None,
        keyframes: None,
        prediction: None,
        score: None,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatCell {
    pub split: Split,
    pub action_class: ActionKind,
    pub source: Source,
    pub count: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    /// Non-zero cells, sorted by (split, class, source).
    pub cells: Vec<StatCell>,
    pub train: usize,
    pub test: usize,
    pub total: usize,
}

impl SplitStats {
    pub fn cell(&self, split: Split, class: ActionKind, source: Source) -> usize {
        self.cells
            .iter()
            .find(|c| c.split == split && c.action_class == class && c.source == source)
            .map_or(0, |c| c.count)
    }

    pub fn by_split_source(&self, split: Split, source: Source) -> usize {
        self.cells
            .iter()
            .filter(|c| c.split == split && c.source == source)
            .map(|c| c.count)
            .sum()
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<6} {:<12} {:<10} {:>6}\n", "split", "action", "source", "count");
        for c in &self.cells {
            out.push_str(&format!(
                "{:<6} {:<12} {:<10} {:>6}\n",
                format!("{:?}", c.split).to_lowercase(),
                c.action_class.caption_name(),
                format!("{:?}", c.source).to_lowercase(),
                c.count
            ));
        }
        out.push_str(&format!("train {} / test {} / total {}\n", self.train, self.test, self.total));
        out
    }
}

pub fn stats(records: &[SampleRecord]) -> SplitStats {
    let mut cells: BTreeMap<(Split, ActionKind, Source), usize> = BTreeMap::new();
    for r in records {
        *cells.entry((r.split, r.action_class, r.source)).or_default() += 1;
    }
    let split_total = |s: Split| records.iter().filter(|r| r.split == s).count();
    SplitStats {
        cells: cells
            .into_iter()
            .map(|((split, action_class, source), count)| StatCell {
                split,
                action_class,
                source,
                count,
            })
            .collect(),
        train: split_total(Split::Train),
        test: split_total(Split::Test),
        total: records.len(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub id: String,
    pub problem: String,
}

/// Checks files, keyframe bounds, caption grammar of synthetic records,
/// duplicate ids and train/test overlap.
pub fn validate(records: &[SampleRecord], root: &Path) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |id: &str, problem: String| {
        out.push(Violation {
            id: id.to_string(),
            problem,
        })
    };
    let mut seen: HashMap<&str, Split> = HashMap::new();
    let mut reported: HashSet<&str> = HashSet::new();
    for r in records {
        for (field, rel) in r.paths() {
            if !root.join(rel).exists() {
                push(&r.id, format!("{field} {rel} does not exist"));
            }
        }
        if let Some((s, e)) = r.gt_keyframes {
            let n = count_frames(&root.join(&r.frames_dir));
            if !(s < e && e < n) {
                push(&r.id, format!("keyframes ({s}, {e}) out of bounds for {n} frames"));
            }
        }
        if r.source == Source::Synthetic {
            let v = decompose(&r.gt_caption);
            if v.action_class != Some(r.action_class) || v.slots.iter().any(|(_, s)| s.is_empty()) {
                push(&r.id, format!("caption does not parse as {:?}: {}", r.action_class, r.gt_caption));
            }
        }
        match seen.get(r.id.as_str()) {
            Some(&split) if split != r.split => {
                if reported.insert(&r.id) {
                    push(&r.id, "id appears in both train and test".into());
                }
            }
            Some(_) => push(&r.id, "duplicate id".into()),
            None => {
                seen.insert(&r.id, r.split);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_sim::{execute_action, random_script, standard_scene};

    pub(crate) fn record(id: &str, split: Split, class: ActionKind, source: Source) -> SampleRecord {
        SampleRecord {
            id: id.into(),
            split,
            frames_dir: "f".into(),
            keylog_path: "k".into(),
            gt_caption: "Left-Click on Export button".into(),
            action_class: class,
            source,
            gt_keyframes: None,
            cursor_fixes: None,
            keyframes: None,
            prediction: None,
            score: None,
        }
    }

    fn on_disk(dir: &Path, n: usize) -> Vec<SampleRecord> {
        let scene = standard_scene(640, 400, 1);
        (0..n)
            .map(|i| {
                let kind = ActionKind::ALL[i % 5];
                let s = execute_action(&scene, &random_script(&scene, kind, i as u64), 10).unwrap();
                persist_sample(dir, &format!("s{i}"), Split::Test, &s).unwrap()
            })
            .collect()
    }

    #[test]
    fn round_trip_three_records() {
        let dir = tempfile::tempdir().unwrap();
        let recs = on_disk(dir.path(), 3);
        let path = dir.path().join("manifest.jsonl");
        write_manifest(&path, &recs).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), recs);
        assert!(validate(&recs, dir.path()).is_empty());
    }

    #[test]
    fn empty_manifest_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load_manifest(&path).unwrap().is_empty());
    }

    #[test]
    fn missing_frames_dir_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let mut recs = on_disk(dir.path(), 2);
        recs[1].frames_dir = "samples/nope".into();
        let path = dir.path().join("m.jsonl");
        write_manifest(&path, &recs).unwrap();
        match load_manifest(&path) {
            Err(DatasetError::ManifestCorrupt { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_manifest("\n{\"id\":1}\n").unwrap_err();
        assert!(matches!(err, DatasetError::ManifestCorrupt { line: 2, .. }));
    }

    #[test]
    fn update_touches_only_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let recs = on_disk(dir.path(), 2);
        let path = dir.path().join("m.jsonl");
        write_manifest(&path, &recs).unwrap();
        let rel = Artifact::Prediction.relative_path("s0");
        std::fs::create_dir_all(dir.path().join("artifacts/s0")).unwrap();
        std::fs::write(dir.path().join(&rel), "{}").unwrap();
        update_manifest(&path, |rs| rs[0].set_artifact(Artifact::Prediction, Some(rel.clone()))).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(back[0].prediction.as_deref(), Some(rel.as_str()));
        let mut expect = recs[0].clone();
        expect.prediction = Some(rel);
        assert_eq!(back[0], expect);
        assert_eq!(back[1], recs[1]);
    }

    #[test]
    fn stats_counts() {
        assert_eq!(stats(&[]), SplitStats::default());
        let recs: Vec<_> =
            (0..10).map(|i| record(&i.to_string(), Split::Train, ActionKind::LeftClick, Source::Synthetic)).collect();
        let s = stats(&recs);
        assert_eq!(s.cell(Split::Train, ActionKind::LeftClick, Source::Synthetic), 10);
        assert_eq!((s.train, s.test, s.total), (10, 0, 10));
    }

    #[test]
    fn validation_findings() {
        let dir = tempfile::tempdir().unwrap();
        let mut recs = on_disk(dir.path(), 3);
        recs[0].gt_keyframes = Some((1, 10));
        let mut dup = recs[1].clone();
        dup.split = Split::Train;
        recs.push(dup);
        let v = validate(&recs, dir.path());
        assert_eq!(v.len(), 2, "{v:?}");
        assert!(v[0].problem.contains("out of bounds"));
        assert!(v[1].problem.contains("both train and test"));
    }

    #[test]
    fn synthetic_caption_grammar_checked() {
        let dir = tempfile::tempdir().unwrap();
        let mut recs = on_disk(dir.path(), 1);
        recs[0].gt_caption = "something happened".into();
        assert_eq!(validate(&recs, dir.path()).len(), 1);
    }
}
