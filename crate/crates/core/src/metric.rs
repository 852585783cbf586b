//! Element-wise IoU scoring of action captions.
//!
//! A caption is decomposed into a class-dependent list of slots: two for
//! clicks and typing, five for drags. Slots of a prediction and a ground truth
//! are compared pairwise and the score is matched slots over the union.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::caption::{AttemptError, CaptionError, ChatClient, RetryPolicy};
use crate::scene_sim::ActionKind;

pub const CLICK_SLOTS: [&str; 2] = ["specific_action", "gui_element"];
pub const DRAG_SLOTS: [&str; 5] = ["specific_action", "start", "end", "gui_element", "purpose"];

/// Column order of the report table.
pub const CATEGORIES: [ActionKind; 5] = [
    ActionKind::LeftClick,
    ActionKind::DoubleClick,
    ActionKind::RightClick,
    ActionKind::Drag,
    ActionKind::Type,
];

/// Evaluation prompt for the LLM judge; `<gt>` and `<output>` are replaced.
pub const JUDGE_PROMPT: &str = "\
# Character Definition
You are an assistant to judge whether the given answer and the ground truth have the same Semantics meanings.

# Guidelines
Action types are leftlick, rightclick, doubleclick, type write, drag.
If the action is 'click' or 'keyboard type', split the description into [action type, element].
If the action is 'Drag' split the description into [ action type, element, start(from), destination(to), purpose ].
Return the metric whether the each have the same semantic meaning: 0 for false, 1 for true.
If the name of the element matches, the value will be 1.

# Output Constraints
Only return a list 0 or 1 for each element in the format of [ , , , , ] for drag action and [ , ] for the click or type in actions. Don't provide the reason.

# Get started
The given ground truth: <gt>.
The given answer: <output>.";

pub const JUDGE_TURN: &str = "Assistant Justification:";

/// Slot schema family; unknown captions use the click schema.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SchemaGroup {
    Click,
    Type,
    Drag,
}

pub fn schema_group(class: Option<ActionKind>) -> SchemaGroup {
    match class {
        Some(ActionKind::Drag) => SchemaGroup::Drag,
        Some(ActionKind::Type) => SchemaGroup::Type,
        _ => SchemaGroup::Click,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementVector {
    /// `None` when no action verb was recognised.
    pub action_class: Option<ActionKind>,
    pub slots: Vec<(String, String)>,
}

impl ElementVector {
    fn build(class: Option<ActionKind>, values: &[&str]) -> Self {
        let names: &[&str] = if schema_group(class) == SchemaGroup::Drag { &DRAG_SLOTS } else { &CLICK_SLOTS };
        let slots = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.to_string(), values.get(i).map_or("", |v| clean(v)).to_string()))
            .collect();
        Self { action_class: class, slots }
    }

    pub fn group(&self) -> SchemaGroup {
        schema_group(self.action_class)
    }

    pub fn value(&self, slot: &str) -> Option<&str> {
        self.slots.iter().find(|(n, _)| n == slot).map(|(_, v)| v.as_str())
    }
}

fn clean(s: &str) -> &str {
    s.trim_matches(|c: char| c.is_whitespace() || matches!(c, ',' | ';' | ':' | '.' | '!'))
}

const TYPE_VERBS: [&str; 10] = [
    "type", "typed", "types", "typing", "enter", "entered", "enters", "input", "write", "wrote",
];
const DRAG_VERBS: [&str; 4] = ["drag", "dragged", "drags", "dragging"];

fn click_word(w: &str) -> bool {
    w.starts_with("click")
}

/// Earliest action verb: its class and the byte offset just past it.
fn detect_class(lower: &str) -> Option<(ActionKind, usize)> {
    let words: Vec<(usize, &str)> = lower
        .split(|c: char| !c.is_ascii_alphanumeric())
        .scan(0usize, |pos, w| {
            let start = *pos;
            *pos += w.len() + 1;
            Some((start, w))
        })
        .filter(|(_, w)| !w.is_empty())
        .collect();
    for (i, &(start, w)) in words.iter().enumerate() {
        let next = words.get(i + 1).filter(|(_, n)| click_word(n));
        let end_of = |(s, w): (usize, &str)| s + w.len();
        let found = match w {
            "double" | "right" | "left" if next.is_some() => {
                let kind = match w {
                    "double" => ActionKind::DoubleClick,
                    "right" => ActionKind::RightClick,
                    _ => ActionKind::LeftClick,
                };
                Some((kind, end_of(*next.unwrap())))
            }
            _ if w.starts_with("doubleclick") => Some((ActionKind::DoubleClick, end_of((start, w)))),
            _ if w.starts_with("rightclick") => Some((ActionKind::RightClick, end_of((start, w)))),
            _ if w.starts_with("leftclick") || w.starts_with("leftlick") || click_word(w) => {
                Some((ActionKind::LeftClick, end_of((start, w))))
            }
            _ if DRAG_VERBS.contains(&w) => Some((ActionKind::Drag, end_of((start, w)))),
            _ if TYPE_VERBS.contains(&w) => Some((ActionKind::Type, end_of((start, w)))),
            _ => None,
        };
        if found.is_some() {
            return found;
        }
    }
    None
}

/// Text after the first of `markers` in `rest` (ASCII case-insensitive).
fn after_any<'a>(rest: &'a str, markers: &[&str]) -> Option<&'a str> {
    let lower = rest.to_ascii_lowercase();
    markers
        .iter()
        .filter_map(|m| lower.find(m).map(|i| (i, m.len())))
        .min()
        .map(|(i, n)| &rest[i + n..])
}

/// Splits at the earliest of `markers`.
fn split_any<'a>(text: &'a str, markers: &[&str]) -> Option<(&'a str, &'a str)> {
    let lower = text.to_ascii_lowercase();
    markers
        .iter()
        .filter_map(|m| lower.find(m).map(|i| (i, m.len())))
        .min()
        .map(|(i, n)| (&text[..i], &text[i + n..]))
}

fn quoted(text: &str) -> Option<&str> {
    for (open, close) in [('\'', '\''), ('"', '"'), ('\u{2018}', '\u{2019}'), ('\u{201c}', '\u{201d}')] {
        if let Some(i) = text.find(open) {
            let body = &text[i + open.len_utf8()..];
            if let Some(j) = body.find(close) {
                return Some(&body[..j]);
            }
        }
    }
    None
}

fn strip_article(s: &str) -> &str {
    let t = s.trim_start();
    for a in ["the ", "a ", "an "] {
        if t.len() > a.len() && t[..a.len()].eq_ignore_ascii_case(a) {
            return &t[a.len()..];
        }
    }
    t
}

/// Splits a caption into its slot vector. Never fails: unrecognised captions
/// yield the click schema with empty slots.
pub fn decompose(caption: &str) -> ElementVector {
    let text = caption.split_whitespace().collect::<Vec<_>>().join(" ");
    let text = text.trim_end_matches(['.', '!']);
    let Some((class, verb_end)) = detect_class(&text.to_ascii_lowercase()) else {
        return ElementVector::build(None, &[]);
    };
    let rest = &text[verb_end..];
    let action = class.caption_name();
    match class {
        ActionKind::LeftClick | ActionKind::RightClick | ActionKind::DoubleClick => {
            let element = after_any(rest, &[" on ", " at "]).unwrap_or(rest);
            ElementVector::build(Some(class), &[action, strip_article(clean(element))])
        }
        ActionKind::Type => {
            let typed = quoted(rest).unwrap_or_else(|| {
                split_any(rest, &[" in ", " into ", " on ", " at "]).map_or(rest, |(t, _)| t)
            });
            ElementVector::build(Some(class), &[action, typed])
        }
        ActionKind::Drag => {
            let (element, tail) = split_any(rest, &[" from "]).unwrap_or((rest, ""));
            let (element, start, tail) = if tail.is_empty() {
                let (e, t) = split_any(element, &[" to ", " onto ", " into "]).unwrap_or((element, ""));
                (e, "", t)
            } else {
                let (s, t) = split_any(tail, &[" to ", " onto ", " into "]).unwrap_or((tail, ""));
                (element, s, t)
            };
            let (end, purpose) =
                split_any(tail, &[" in order to ", " so as to ", " to ", " for "]).unwrap_or((tail, ""));
            ElementVector::build(
                Some(class),
                &[action, start, strip_article(end), strip_article(element), purpose],
            )
        }
    }
}

/// Per-slot equivalence test.
pub trait ElementMatcher: Sync {
    fn same(&self, slot: &str, pred: &str, gt: &str) -> bool;
}

/// Normalised comparison with synonym classes and phrase containment.
#[derive(Clone, Copy, Debug, Default)]
pub struct BuiltinMatcher;

const ARTICLES: [&str; 3] = ["the", "a", "an"];
const KIND_WORDS: [&str; 6] = ["button", "menu", "item", "text", "field", "handle"];

fn canonical_word(w: &str) -> &str {
    match w {
        "button" | "buttons" | "icon" | "icons" => "button",
        "folder" | "folders" | "file" | "files" => "file",
        other => other,
    }
}

/// Lowercased words with punctuation, articles and synonyms folded.
pub fn normalize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty() && !ARTICLES.contains(w))
        .map(|w| canonical_word(w).to_string())
        .collect()
}

fn contains_run(long: &[String], short: &[String]) -> bool {
    short.len() <= long.len() && long.windows(short.len()).any(|w| w == short)
}

impl ElementMatcher for BuiltinMatcher {
    fn same(&self, _slot: &str, pred: &str, gt: &str) -> bool {
        let (a, b) = (normalize(pred), normalize(gt));
        if a.is_empty() || b.is_empty() {
            return false;
        }
        if a == b {
            return true;
        }
        let (long, short) = if a.len() >= b.len() { (&a, &b) } else { (&b, &a) };
        // A bare widget kind ("button") does not identify an element.
        let informative = short.iter().any(|w| !KIND_WORDS.contains(&w.as_str()));
        informative && contains_run(long, short)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchVector {
    pub bits: Vec<u8>,
    pub union_size: usize,
}

impl MatchVector {
    pub fn matched(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn iou(&self) -> f64 {
        if self.union_size == 0 {
            0.0
        } else {
            self.matched() as f64 / self.union_size as f64
        }
    }
}

/// Slot-aligned comparison on `gt`'s schema. Different schema groups share no
/// slots: every bit is 0 and the union is the sum of both slot counts.
pub fn match_elements(pred: &ElementVector, gt: &ElementVector, matcher: &dyn ElementMatcher) -> MatchVector {
    if pred.group() != gt.group() {
        return MatchVector {
            bits: vec![0; gt.slots.len()],
            union_size: pred.slots.len() + gt.slots.len(),
        };
    }
    let bits = gt
        .slots
        .iter()
        .zip(&pred.slots)
        .map(|((name, g), (_, p))| matcher.same(name, p, g) as u8)
        .collect::<Vec<_>>();
    MatchVector {
        union_size: bits.len(),
        bits,
    }
}

pub fn score_sample(pred: &str, gt: &str, matcher: &dyn ElementMatcher) -> (MatchVector, f64) {
    let m = match_elements(&decompose(pred), &decompose(gt), matcher);
    let iou = m.iou();
    (m, iou)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub category: ActionKind,
    pub n_samples: usize,
    pub matched: usize,
    pub union: usize,
    /// Percentage in `[0, 100]`.
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    /// Non-empty categories in table order.
    pub per_category: Vec<CategoryScore>,
    /// Unweighted mean over the non-empty categories.
    pub average: f64,
    /// Pairs whose ground truth has no recognisable action.
    pub uncategorized: usize,
}

impl ScoreReport {
    pub fn category(&self, kind: ActionKind) -> Option<&CategoryScore> {
        self.per_category.iter().find(|c| c.category == kind)
    }

    /// Plain-text table: one column per category plus the average.
    pub fn to_table(&self) -> String {
        let headers: Vec<&str> = CATEGORIES
            .iter()
            .map(|k| match k {
                ActionKind::Type => "Keyboard Type",
                k => k.caption_name(),
            })
            .chain(["Average score"])
            .collect();
        let cell = |k: &ActionKind, f: &dyn Fn(&CategoryScore) -> String| {
            self.category(*k).map_or("-".to_string(), f)
        };
        let scores: Vec<String> = CATEGORIES
            .iter()
            .map(|k| cell(k, &|c| format!("{:.1}", c.iou)))
            .chain([format!("{:.1}", self.average)])
            .collect();
        let counts: Vec<String> = CATEGORIES
            .iter()
            .map(|k| cell(k, &|c| c.n_samples.to_string()))
            .chain([self.per_category.iter().map(|c| c.n_samples).sum::<usize>().to_string()])
            .collect();
        let widths: Vec<usize> = headers.iter().map(|h| h.len().max(6)).collect();
        let mut out = String::new();
        for (label, row) in [("", headers.iter().map(|s| s.to_string()).collect::<Vec<_>>()), ("IoU", scores), ("n", counts)] {
            let _ = write!(out, "{label:<5}");
            for (v, w) in row.iter().zip(&widths) {
                let _ = write!(out, " | {v:>w$}");
            }
            out.push('\n');
        }
        out
    }
}

/// Micro IoU within each ground-truth category, macro mean across them.
pub fn aggregate(items: &[(Option<ActionKind>, MatchVector)]) -> ScoreReport {
    let mut per_category = Vec::new();
    for kind in CATEGORIES {
        let mine: Vec<&MatchVector> = items.iter().filter(|(k, _)| *k == Some(kind)).map(|(_, m)| m).collect();
        if mine.is_empty() {
            continue;
        }
        let matched = mine.iter().map(|m| m.matched()).sum::<usize>();
        let union = mine.iter().map(|m| m.union_size).sum::<usize>();
        per_category.push(CategoryScore {
            category: kind,
            n_samples: mine.len(),
            matched,
            union,
            iou: if union == 0 { 0.0 } else { 100.0 * matched as f64 / union as f64 },
        });
    }
    let average = if per_category.is_empty() {
        0.0
    } else {
        per_category.iter().map(|c| c.iou).sum::<f64>() / per_category.len() as f64
    };
    ScoreReport {
        per_category,
        average,
        uncategorized: items.iter().filter(|(k, _)| k.is_none()).count(),
    }
}

/// Scores `(pred, gt)` pairs, categorised by the ground truth's action.
pub fn score_dataset(pairs: &[(String, String)], matcher: &dyn ElementMatcher) -> ScoreReport {
    let items: Vec<_> = pairs
        .iter()
        .map(|(pred, gt)| {
            let gt = decompose(gt);
            (gt.action_class, match_elements(&decompose(pred), &gt, matcher))
        })
        .collect();
    aggregate(&items)
}

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("judge reply is not a valid 0/1 list after {attempts} attempts: {last}")]
    JudgeUnparseable { attempts: u32, last: String },
    #[error("judge unavailable: {0}")]
    JudgeUnavailable(String),
}

pub trait JudgeClient: Send + Sync {
    /// One request with the filled evaluation prompt.
    fn ask(&self, prompt: &str) -> Result<String, AttemptError>;
}

impl JudgeClient for ChatClient {
    fn ask(&self, prompt: &str) -> Result<String, AttemptError> {
        self.send(json!([
            { "role": "system", "content": prompt },
            { "role": "user", "content": JUDGE_TURN },
        ]))
    }
}

pub fn judge_prompt(pred: &str, gt: &str) -> String {
    JUDGE_PROMPT.replace("<gt>", gt).replace("<output>", pred)
}

/// Parses the first bracketed list of 0/1 entries.
pub fn parse_judge_bits(reply: &str) -> Option<Vec<u8>> {
    let open = reply.find('[')?;
    let close = open + reply[open..].find(']')?;
    reply[open + 1..close]
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| match t {
            "0" => Some(0),
            "1" => Some(1),
            _ => None,
        })
        .collect()
}

pub const JUDGE_ATTEMPTS: u32 = 3;

/// Asks the judge for per-element bits on `gt`'s schema. The judge lists drag
/// elements as [action, element, start, destination, purpose]; the result is
/// reordered to the slot schema.
pub fn llm_judge(
    pred: &str,
    gt: &str,
    judge: &dyn JudgeClient,
    policy: &RetryPolicy,
) -> Result<MatchVector, JudgeError> {
    let expected = decompose(gt).slots.len();
    let prompt = judge_prompt(pred, gt);
    let mut last = String::new();
    for _ in 0..JUDGE_ATTEMPTS {
        let reply = policy.run(|| judge.ask(&prompt)).map_err(|e| match e {
            CaptionError::BackendUnavailable { .. } | CaptionError::BackendRejected(_) | CaptionError::BadConfig(_) => {
                JudgeError::JudgeUnavailable(e.to_string())
            }
        })?;
        match parse_judge_bits(&reply) {
            Some(bits) if bits.len() == expected => {
                let bits = if expected == DRAG_SLOTS.len() {
                    vec![bits[0], bits[2], bits[3], bits[1], bits[4]]
                } else {
                    bits
                };
                return Ok(MatchVector {
                    union_size: bits.len(),
                    bits,
                });
            }
            _ => last = reply,
        }
    }
    Err(JudgeError::JudgeUnparseable {
        attempts: JUDGE_ATTEMPTS,
        last,
    })
}
