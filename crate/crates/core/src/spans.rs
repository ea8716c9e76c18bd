//! Default-span geometry: tiling over the temporal feature hierarchy, temporal
//! IoU, ground-truth matching and the center/length offset parameterisation.
//!
//! All coordinates are window-normalised: the input window spans `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Matching threshold on IoU. A default span is positive only when its best
/// IoU is strictly greater than this value.
pub const MATCH_IOU_THRESHOLD: f64 = 0.5;

/// A temporal interval stored as `(center, length)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span {
    center: f64,
    length: f64,
}

impl Span {
    pub fn new(center: f64, length: f64) -> Result<Self> {
        if !(length > 0.0) || !length.is_finite() || !center.is_finite() {
            return Err(Error::input(format!(
                "span needs finite center and positive length, got ({center}, {length})"
            )));
        }
        Ok(Span { center, length })
    }

    pub fn from_bounds(start: f64, end: f64) -> Result<Self> {
        Span::new(0.5 * (start + end), end - start)
    }

    /// Skips validation; callers guarantee `length > 0`.
    pub(crate) fn new_unchecked(center: f64, length: f64) -> Self {
        debug_assert!(length > 0.0);
        Span { center, length }
    }

    #[inline]
    pub fn center(&self) -> f64 {
        self.center
    }

    #[inline]
    pub fn length(&self) -> f64 {
        self.length
    }

    #[inline]
    pub fn start(&self) -> f64 {
        self.center - 0.5 * self.length
    }

    #[inline]
    pub fn end(&self) -> f64 {
        self.center + 0.5 * self.length
    }

    /// Returns the span clipped to `[0, 1]`, or `None` if nothing remains.
    pub fn clipped_unit(&self) -> Option<Span> {
        let start = self.start().max(0.0);
        let end = self.end().min(1.0);
        (end > start).then(|| Span::new_unchecked(0.5 * (start + end), end - start))
    }
}

/// Tiling configuration: per-layer temporal lengths `L_f` and scale ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanGridConfig {
    pub layer_lengths: Vec<usize>,
    pub ratios: Vec<f64>,
}

impl SpanGridConfig {
    pub fn new(layer_lengths: Vec<usize>, ratios: Vec<f64>) -> Result<Self> {
        let cfg = SpanGridConfig {
            layer_lengths,
            ratios,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_lengths.is_empty() {
            return Err(Error::config("span grid needs at least one feature layer"));
        }
        if self.layer_lengths.iter().any(|&l| l == 0) {
            return Err(Error::config("feature layer lengths must be positive"));
        }
        if self.layer_lengths.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::config(format!(
                "feature layer lengths must be strictly decreasing, got {:?}",
                self.layer_lengths
            )));
        }
        if self.ratios.is_empty() {
            return Err(Error::config("span grid needs at least one ratio"));
        }
        if self.ratios.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return Err(Error::config(format!(
                "ratios must lie in (0, 1], got {:?}",
                self.ratios
            )));
        }
        if self.ratios.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config(format!(
                "ratios must be strictly increasing, got {:?}",
                self.ratios
            )));
        }
        Ok(())
    }

    pub fn span_count(&self) -> usize {
        self.ratios.len() * self.layer_lengths.iter().sum::<usize>()
    }
}

/// Where a default span comes from in the feature hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpanOrigin {
    pub layer: usize,
    pub cell: usize,
    pub ratio: usize,
}

#[derive(Debug, Clone)]
pub struct DefaultSpanGrid {
    pub spans: Vec<Span>,
    pub origins: Vec<SpanOrigin>,
}

impl DefaultSpanGrid {
    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }
}

/// Lays default spans over every feature cell, ordered by (layer, cell, ratio).
pub fn tile_default_spans(config: &SpanGridConfig) -> Result<DefaultSpanGrid> {
    config.validate()?;
    let n = config.span_count();
    let mut spans = Vec::with_capacity(n);
    let mut origins = Vec::with_capacity(n);
    for (layer, &len) in config.layer_lengths.iter().enumerate() {
        let scale = 1.0 / len as f64;
        for cell in 0..len {
            let center = (cell as f64 + 0.5) / len as f64;
            for (ratio, &r) in config.ratios.iter().enumerate() {
                spans.push(Span::new_unchecked(center, scale * r));
                origins.push(SpanOrigin { layer, cell, ratio });
            }
        }
    }
    Ok(DefaultSpanGrid { spans, origins })
}

pub fn temporal_iou(a: &Span, b: &Span) -> f64 {
    let inter = (a.end().min(b.end()) - a.start().max(b.start())).max(0.0);
    let union = a.length + b.length - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Regression targets relative to a default span.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Offsets {
    pub center: f64,
    pub length: f64,
}

impl Offsets {
    pub fn new(center: f64, length: f64) -> Self {
        Offsets { center, length }
    }
}

pub fn encode_offsets(gt: &Span, default: &Span) -> Offsets {
    Offsets {
        center: (gt.center - default.center) / default.length,
        length: (gt.length / default.length).ln(),
    }
}

/// Inverse of [`encode_offsets`]. No clipping is applied.
pub fn decode_offsets(offsets: &Offsets, default: &Span) -> Span {
    Span {
        center: default.center + offsets.center * default.length,
        length: default.length * offsets.length.exp(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub span: Span,
    /// 1-based class id.
    pub class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignment {
    pub ground_truth: usize,
    pub class: usize,
}

/// Per-default-span matching outcome, indexed like the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub assignment: Vec<Option<Assignment>>,
    pub soft_labels: Vec<f64>,
    pub target_offsets: Vec<Option<Offsets>>,
}

impl MatchResult {
    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn num_positives(&self) -> usize {
        self.assignment.iter().filter(|a| a.is_some()).count()
    }

    pub fn is_positive(&self, i: usize) -> bool {
        self.assignment[i].is_some()
    }
}

/// Matches every default span to its best-IoU ground truth, keeping the pair
/// when the IoU is strictly above [`MATCH_IOU_THRESHOLD`]. Ties go to the
/// lowest ground-truth index.
pub fn match_spans(
    grid: &DefaultSpanGrid,
    ground_truths: &[GroundTruth],
    num_classes: usize,
) -> Result<MatchResult> {
    if let Some(gt) = ground_truths
        .iter()
        .find(|gt| gt.class == 0 || gt.class > num_classes)
    {
        return Err(Error::input(format!(
            "ground-truth class {} outside [1, {num_classes}]",
            gt.class
        )));
    }

    let n = grid.len();
    let mut result = MatchResult {
        assignment: vec![None; n],
        soft_labels: vec![0.0; n],
        target_offsets: vec![None; n],
    };
    for (i, d) in grid.spans.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (j, gt) in ground_truths.iter().enumerate() {
            let iou = temporal_iou(d, &gt.span);
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        let Some((j, iou)) = best else { continue };
        result.soft_labels[i] = iou;
        if iou > MATCH_IOU_THRESHOLD {
            let gt = &ground_truths[j];
            result.assignment[i] = Some(Assignment {
                ground_truth: j,
                class: gt.class,
            });
            result.target_offsets[i] = Some(encode_offsets(&gt.span, d));
        }
    }
    Ok(result)
}
