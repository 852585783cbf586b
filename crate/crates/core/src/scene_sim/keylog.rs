use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{SceneError, DOUBLE_CLICK_GAP_MS, MS_PER_FRAME};
use crate::frame::Frame;
use crate::geometry::Point;

/// Longest release-to-press gap for two clicks to count as one double-click.
const DOUBLE_CLICK_MERGE_MS: u64 = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    #[serde(rename = "MOUSE_DOWN")]
    MouseDown,
    #[serde(rename = "MOUSE_UP")]
    MouseUp,
    #[serde(rename = "MOUSE_MOVE")]
    MouseMove,
    #[serde(rename = "KEY_PRESS")]
    KeyPress,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::MouseDown => "MOUSE_DOWN",
            EventKind::MouseUp => "MOUSE_UP",
            EventKind::MouseMove => "MOUSE_MOVE",
            EventKind::KeyPress => "KEY_PRESS",
        }
    }
}

impl FromStr for EventKind {
    type Err = SceneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "MOUSE_DOWN" => EventKind::MouseDown,
            "MOUSE_UP" => EventKind::MouseUp,
            "MOUSE_MOVE" => EventKind::MouseMove,
            "KEY_PRESS" => EventKind::KeyPress,
            other => return Err(SceneError::MalformedKeylog(format!("unknown event `{other}`"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Payload {
    Point(Point),
    Key(String),
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payload::Point(p) => write!(f, "{},{}", p.x, p.y),
            Payload::Key(k) => f.write_str(k),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEvent {
    pub timestamp_ms: u64,
    pub kind: EventKind,
    pub payload: Payload,
}

impl KeyEvent {
    pub fn mouse(timestamp_ms: u64, kind: EventKind, at: Point) -> Self {
        Self {
            timestamp_ms,
            kind,
            payload: Payload::Point(at),
        }
    }

    pub fn key(timestamp_ms: u64, c: char) -> Self {
        Self {
            timestamp_ms,
            kind: EventKind::KeyPress,
            payload: Payload::Key(key_name(c)),
        }
    }

    pub fn frame(&self) -> usize {
        (self.timestamp_ms / MS_PER_FRAME) as usize
    }
}

fn key_name(c: char) -> String {
    match c {
        ' ' => "space".to_string(),
        c => c.to_string(),
    }
}

/// A timestamped input trace.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keylog {
    pub entries: Vec<KeyEvent>,
}

impl Keylog {
    pub fn new(entries: Vec<KeyEvent>) -> Self {
        Self { entries }
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.entries.iter().filter(|e| e.kind == kind).count()
    }

    /// Timestamps are non-decreasing and every press has a matching release.
    pub fn validate(&self) -> Result<(), SceneError> {
        gestures(self).map(|_| ())
    }

    /// Line-oriented text: `timestamp_ms<TAB>kind<TAB>payload`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\n", e.timestamp_ms, e.kind.as_str(), e.payload));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, SceneError> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |what: &str| SceneError::MalformedKeylog(format!("line {}: {what}", n + 1));
            let mut cols = line.split('\t');
            let (Some(ts), Some(kind), Some(payload), None) =
                (cols.next(), cols.next(), cols.next(), cols.next())
            else {
                return Err(bad("expected three tab-separated columns"));
            };
            let timestamp_ms = ts.parse().map_err(|_| bad("bad timestamp"))?;
            let kind: EventKind = kind.parse()?;
            let payload = if kind == EventKind::KeyPress {
                Payload::Key(payload.to_string())
            } else {
                let (x, y) = payload.split_once(',').ok_or_else(|| bad("bad point"))?;
                Payload::Point(Point::new(
                    x.parse().map_err(|_| bad("bad x"))?,
                    y.parse().map_err(|_| bad("bad y"))?,
                ))
            };
            entries.push(KeyEvent {
                timestamp_ms,
                kind,
                payload,
            });
        }
        Ok(Self { entries })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum GestureKind {
    /// press/release pairs without drag movement
    Click { pairs: usize, last_up: u64 },
    Drag,
    Keys,
}

#[derive(Debug, Clone)]
struct Gesture {
    kind: GestureKind,
    /// indices into the keylog entries
    events: Vec<usize>,
}

/// Group events into complete gestures; stray pointer moves are not part of any.
fn gestures(log: &Keylog) -> Result<Vec<Gesture>, SceneError> {
    let mut out: Vec<Gesture> = Vec::new();
    let mut held: Option<Gesture> = None;
    let mut last_ts = 0u64;
    // true when a mouse event happened after the last key gesture
    let mut broke_key_run = true;
    for (i, e) in log.entries.iter().enumerate() {
        if e.timestamp_ms < last_ts {
            return Err(SceneError::MalformedKeylog(format!(
                "timestamp {} after {}",
                e.timestamp_ms, last_ts
            )));
        }
        last_ts = e.timestamp_ms;
        match e.kind {
            EventKind::MouseDown => {
                if held.is_some() {
                    return Err(SceneError::MalformedKeylog(format!(
                        "MOUSE_DOWN at {} while a button is already held",
                        e.timestamp_ms
                    )));
                }
                broke_key_run = true;
                let merge = matches!(
                    out.last(),
                    Some(Gesture { kind: GestureKind::Click { pairs: 1, last_up }, .. })
                        if e.timestamp_ms - last_up <= DOUBLE_CLICK_MERGE_MS
                );
                let mut g = if merge {
                    out.pop().expect("checked above")
                } else {
                    Gesture {
                        kind: GestureKind::Click { pairs: 0, last_up: 0 },
                        events: Vec::new(),
                    }
                };
                g.events.push(i);
                held = Some(g);
            }
            EventKind::MouseMove => {
                if let Some(g) = held.as_mut() {
                    g.kind = GestureKind::Drag;
                    g.events.push(i);
                }
                broke_key_run = true;
            }
            EventKind::MouseUp => {
                let Some(mut g) = held.take() else {
                    return Err(SceneError::MalformedKeylog(format!(
                        "MOUSE_UP at {} without MOUSE_DOWN",
                        e.timestamp_ms
                    )));
                };
                g.events.push(i);
                if let GestureKind::Click { pairs, .. } = g.kind {
                    g.kind = GestureKind::Click {
                        pairs: pairs + 1,
                        last_up: e.timestamp_ms,
                    };
                }
                out.push(g);
                broke_key_run = true;
            }
            EventKind::KeyPress => {
                if let Some(g) = held.as_mut() {
                    g.events.push(i);
                    continue;
                }
                match out.last_mut() {
                    Some(g) if g.kind == GestureKind::Keys && !broke_key_run => g.events.push(i),
                    _ => out.push(Gesture {
                        kind: GestureKind::Keys,
                        events: vec![i],
                    }),
                }
                broke_key_run = false;
            }
        }
    }
    if let Some(g) = held {
        let ts = log.entries[g.events[0]].timestamp_ms;
        return Err(SceneError::MalformedKeylog(format!(
            "MOUSE_DOWN at {ts} is never released"
        )));
    }
    Ok(out)
}

/// One sub-video holding a single complete gesture.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    /// Raw index of the first frame in `frames`.
    pub first_frame: usize,
    pub frames: Vec<Frame>,
    /// Events with timestamps rebased to the segment's first frame.
    pub keylog: Keylog,
}

/// Split a recording into single-gesture sub-videos.
///
/// Boundaries fall midway between the last frame of one gesture and the first
/// frame of the next; the segments are disjoint and cover every frame.
pub fn segment_by_keylog(frames: &[Frame], keylog: &Keylog) -> Result<Vec<Segment>, SceneError> {
    let groups = gestures(keylog)?;
    if groups.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(e) = keylog.entries.iter().find(|e| e.frame() >= frames.len()) {
        return Err(SceneError::MalformedKeylog(format!(
            "timestamp {} maps past the last of {} frames",
            e.timestamp_ms,
            frames.len()
        )));
    }
    let span = |g: &Gesture| {
        let first = keylog.entries[g.events[0]].frame();
        let last = keylog.entries[*g.events.last().expect("non-empty")].frame();
        (first, last)
    };
    let mut bounds = vec![0usize];
    for pair in groups.windows(2) {
        let (_, last) = span(&pair[0]);
        let (first, _) = span(&pair[1]);
        let cut = (last + first) / 2 + 1;
        if cut > first {
            return Err(SceneError::MalformedKeylog(format!(
                "gestures share frame {first} and cannot be separated"
            )));
        }
        bounds.push(cut);
    }
    bounds.push(frames.len());

    let segments = bounds
        .windows(2)
        .map(|w| {
            let (start, end) = (w[0], w[1]);
            let offset = start as u64 * MS_PER_FRAME;
            let entries = keylog
                .entries
                .iter()
                .filter(|e| (start..end).contains(&e.frame()))
                .map(|e| KeyEvent {
                    timestamp_ms: e.timestamp_ms - offset,
                    ..e.clone()
                })
                .collect();
            Segment {
                first_frame: start,
                frames: frames[start..end].to_vec(),
                keylog: Keylog::new(entries),
            }
        })
        .collect();
    Ok(segments)
}

// double-click pairs produced by the simulator must merge under the segmenter's rule
const _: () = assert!(DOUBLE_CLICK_GAP_MS <= DOUBLE_CLICK_MERGE_MS);

#[cfg(test)]
mod tests {
    use super::*;

    fn blank_frames(n: usize) -> Vec<Frame> {
        (0..n).map(|i| Frame::filled(i, 4, 4, [0, 0, 0])).collect()
    }

    fn click(t: u64, x: u32) -> Vec<KeyEvent> {
        vec![
            KeyEvent::mouse(t, EventKind::MouseDown, Point::new(x, 5)),
            KeyEvent::mouse(t + 40, EventKind::MouseUp, Point::new(x, 5)),
        ]
    }

    /// Independent grouping: pair each press with the next release.
    fn naive_click_spans(log: &Keylog) -> Vec<(u64, u64)> {
        let mut spans = Vec::new();
        let mut down = None;
        for e in &log.entries {
            match e.kind {
                EventKind::MouseDown => down = Some(e.timestamp_ms),
                EventKind::MouseUp => spans.push((down.take().unwrap(), e.timestamp_ms)),
                _ => {}
            }
        }
        spans
    }

    #[test]
    fn two_clicks_make_two_segments() {
        let mut entries = click(100, 1);
        entries.extend(click(900, 2));
        let log = Keylog::new(entries);
        let frames = blank_frames(12);
        let segs = segment_by_keylog(&frames, &log).unwrap();
        let spans = naive_click_spans(&log);
        assert_eq!(segs.len(), spans.len());
        assert_eq!(segs.len(), 2);
        // boundary lies strictly between the gestures
        let cut = segs[1].first_frame;
        assert!(cut > (spans[0].1 / MS_PER_FRAME) as usize);
        assert!(cut <= (spans[1].0 / MS_PER_FRAME) as usize);
        assert_eq!(segs[0].frames.len() + segs[1].frames.len(), 12);
        assert_eq!(segs[0].keylog.count(EventKind::MouseDown), 1);
        assert_eq!(segs[1].keylog.count(EventKind::MouseDown), 1);
        // rebased to the segment start
        assert_eq!(segs[1].keylog.entries[0].timestamp_ms, 900 - cut as u64 * 100);
    }

    #[test]
    fn no_gestures_no_segments() {
        let log = Keylog::new(vec![KeyEvent::mouse(50, EventKind::MouseMove, Point::new(1, 1))]);
        assert!(segment_by_keylog(&blank_frames(5), &log).unwrap().is_empty());
        assert!(segment_by_keylog(&blank_frames(5), &Keylog::default()).unwrap().is_empty());
    }

    #[test]
    fn unreleased_press_is_malformed() {
        let log = Keylog::new(vec![KeyEvent::mouse(50, EventKind::MouseDown, Point::new(1, 1))]);
        assert!(matches!(
            segment_by_keylog(&blank_frames(5), &log),
            Err(SceneError::MalformedKeylog(_))
        ));
        let log = Keylog::new(vec![KeyEvent::mouse(50, EventKind::MouseUp, Point::new(1, 1))]);
        assert!(log.validate().is_err());
    }

    #[test]
    fn double_click_is_one_gesture_and_typing_is_another() {
        let mut entries = vec![
            KeyEvent::mouse(100, EventKind::MouseDown, Point::new(3, 3)),
            KeyEvent::mouse(120, EventKind::MouseUp, Point::new(3, 3)),
            KeyEvent::mouse(150, EventKind::MouseDown, Point::new(3, 3)),
            KeyEvent::mouse(170, EventKind::MouseUp, Point::new(3, 3)),
        ];
        for (i, c) in "hi there".chars().enumerate() {
            entries.push(KeyEvent::key(600 + i as u64 * 10, c));
        }
        let log = Keylog::new(entries);
        let segs = segment_by_keylog(&blank_frames(10), &log).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].keylog.count(EventKind::MouseUp), 2);
        assert_eq!(segs[1].keylog.count(EventKind::KeyPress), 8);
    }

    #[test]
    fn text_round_trip() {
        let mut entries = click(100, 7);
        entries.push(KeyEvent::key(300, ' '));
        entries.push(KeyEvent::key(310, 'a'));
        let log = Keylog::new(entries);
        let text = log.to_text();
        assert!(text.starts_with("100\tMOUSE_DOWN\t7,5\n"));
        assert!(text.contains("300\tKEY_PRESS\tspace\n"));
        assert_eq!(Keylog::parse(&text).unwrap(), log);
        assert!(Keylog::parse("12\tMOUSE_DOWN").is_err());
    }

    #[test]
    fn events_past_the_video_are_rejected() {
        let log = Keylog::new(click(900, 1));
        assert!(segment_by_keylog(&blank_frames(5), &log).is_err());
    }
}
