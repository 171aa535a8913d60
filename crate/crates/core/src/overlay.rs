//! Anchor-relative placement of AR overlay components.
//!
//! A rule positions its component relative to the bounding box of a detected
//! anchor object: `origin = bbox.origin + offset * bbox.size` and, for
//! fractional sizes, `size = size * bbox.size`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::ObjectDetection;
use crate::geometry::BBox;
use crate::vocab::{ObjectLabel, Vocabulary};

pub const RULES_VERSION: u32 = 1;
pub const DEFAULT_STALENESS_FRAMES: u32 = 15;

#[derive(Debug, Error)]
pub enum OverlayError {
    #[error("reading anchor rules: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed anchor rules: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported anchor rule version {0}")]
    Version(u32),
    #[error("rule {rule}: {msg}")]
    Invalid { rule: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComponentKind {
    HighlightBox,
    Arrow,
    TextHint,
    AnimationRef,
}

/// Component size, relative to the anchor box unless absolute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "unit", rename_all = "snake_case")]
pub enum ComponentSize {
    Fraction { w: f64, h: f64 },
    Pixels { w: f64, h: f64 },
}

fn default_staleness() -> u32 {
    DEFAULT_STALENESS_FRAMES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorRule {
    pub id: String,
    pub anchor: ObjectLabel,
    pub kind: ComponentKind,
    /// Fractions of the anchor box width and height.
    pub offset: [f64; 2],
    pub size: ComponentSize,
    #[serde(default)]
    pub payload: String,
    #[serde(default = "default_staleness")]
    pub staleness_timeout_frames: u32,
}

impl AnchorRule {
    /// Component rectangle for an anchor box, before clamping.
    pub fn place(&self, anchor: &BBox) -> BBox {
        let x = anchor.x + self.offset[0] * anchor.w;
        let y = anchor.y + self.offset[1] * anchor.h;
        let (w, h) = match self.size {
            ComponentSize::Fraction { w, h } => (w * anchor.w, h * anchor.h),
            ComponentSize::Pixels { w, h } => (w, h),
        };
        BBox::new(x, y, w, h)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFile {
    version: u32,
    #[serde(default)]
    rules: Vec<AnchorRule>,
}

/// Validated rules keyed by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuleSet {
    rules: BTreeMap<String, AnchorRule>,
}

impl RuleSet {
    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn get(&self, id: &str) -> Option<&AnchorRule> {
        self.rules.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.rules.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &AnchorRule> {
        self.rules.values()
    }

    /// Rules for the given ids, in the order given; unknown ids are skipped.
    pub fn select<'a>(&'a self, ids: &'a [String]) -> impl Iterator<Item = &'a AnchorRule> + 'a {
        ids.iter().filter_map(|id| self.rules.get(id))
    }
}

/// Parses and validates an anchor rule file. An empty document yields an empty set.
pub fn load_anchor_rules(text: &str, vocabulary: &Vocabulary) -> Result<RuleSet, OverlayError> {
    if text.trim().is_empty() {
        return Ok(RuleSet::default());
    }
    let file: RuleFile = serde_json::from_str(text)?;
    if file.version != RULES_VERSION {
        return Err(OverlayError::Version(file.version));
    }
    let mut rules = BTreeMap::new();
    for rule in file.rules {
        let invalid = |msg: String| OverlayError::Invalid { rule: rule.id.clone(), msg };
        if !vocabulary.has_object(rule.anchor.as_str()) {
            return Err(invalid(format!("unknown anchor label {:?}", rule.anchor.0)));
        }
        let (w, h) = match rule.size {
            ComponentSize::Fraction { w, h } | ComponentSize::Pixels { w, h } => (w, h),
        };
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
            return Err(invalid("size must be positive".into()));
        }
        if !rule.offset.iter().all(|v| v.is_finite()) {
            return Err(invalid("offset must be finite".into()));
        }
        if rules.contains_key(&rule.id) {
            return Err(invalid("duplicate rule id".into()));
        }
        rules.insert(rule.id.clone(), rule);
    }
    Ok(RuleSet { rules })
}

pub fn load_anchor_rules_file(path: &Path, vocabulary: &Vocabulary) -> Result<RuleSet, OverlayError> {
    load_anchor_rules(&std::fs::read_to_string(path)?, vocabulary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayInstance {
    pub rule: String,
    pub kind: ComponentKind,
    pub rect: BBox,
    /// Anchor not detected this frame; placed at its last known box.
    pub stale: bool,
    pub payload: String,
}

/// Last-seen anchor boxes for one session.
#[derive(Debug, Clone, Default)]
pub struct AnchorCache {
    seen: BTreeMap<ObjectLabel, (BBox, u64)>,
}

impl AnchorCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.seen.clear();
    }

    /// Places every rule against the frame's detections, falling back to the
    /// last known anchor box within the rule's staleness timeout.
    pub fn place_overlays<'r>(
        &mut self,
        frame_id: u64,
        frame_size: (u32, u32),
        detections: &[ObjectDetection],
        rules: impl IntoIterator<Item = &'r AnchorRule>,
    ) -> Vec<OverlayInstance> {
        for d in detections {
            self.seen.insert(d.label.clone(), (d.bbox, frame_id));
        }
        let (fw, fh) = (frame_size.0 as f64, frame_size.1 as f64);
        let mut out = Vec::new();
        for rule in rules {
            let Some(&(anchor, seen_at)) = self.seen.get(&rule.anchor) else { continue };
            let stale = seen_at != frame_id;
            if stale && frame_id.saturating_sub(seen_at) > rule.staleness_timeout_frames as u64 {
                continue;
            }
            if stale && rule.staleness_timeout_frames == 0 {
                continue;
            }
            let Some(rect) = rule.place(&anchor).clamped(fw, fh) else { continue };
            out.push(OverlayInstance {
                rule: rule.id.clone(),
                kind: rule.kind,
                rect,
                stale,
                payload: rule.payload.clone(),
            });
        }
        out
    }
}
