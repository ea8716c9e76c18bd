//! Single-pass prediction: activity-score filtering, offset decoding,
//! class-agnostic temporal NMS, labelling, and merging of overlapping windows
//! into absolute-time detections.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{pad_noise_seed, slice_window, window_offsets};
use crate::error::{Error, Result};
use crate::loss::softmax;
use crate::net::{Network, PredictionVector};
use crate::spans::{decode_offsets, temporal_iou, tile_default_spans, DefaultSpanGrid, Span};
use crate::tensor::Tensor;

/// A detection in absolute time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub start_sec: f64,
    pub end_sec: f64,
    /// 1-based class id.
    pub label: usize,
    pub score: f64,
}

impl Detection {
    pub fn iou(&self, other: &Detection) -> f64 {
        interval_iou((self.start_sec, self.end_sec), (other.start_sec, other.end_sec))
    }
}

pub fn interval_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowPlacement {
    pub window_start_sec: f64,
    pub window_duration_sec: f64,
    pub fps: f64,
}

impl WindowPlacement {
    pub fn new(window_start_sec: f64, window_duration_sec: f64, fps: f64) -> Result<Self> {
        if !(window_duration_sec > 0.0) || !(fps > 0.0) || !window_start_sec.is_finite() {
            return Err(Error::input(format!(
                "invalid window placement: start {window_start_sec}, duration {window_duration_sec}, fps {fps}"
            )));
        }
        Ok(WindowPlacement {
            window_start_sec,
            window_duration_sec,
            fps,
        })
    }

    /// Placement of a window of `len` frames starting at frame `offset`.
    pub fn from_frames(offset: usize, len: usize, fps: f64) -> Self {
        WindowPlacement {
            window_start_sec: offset as f64 / fps,
            window_duration_sec: len as f64 / fps,
            fps,
        }
    }

    pub fn end_sec(&self) -> f64 {
        self.window_start_sec + self.window_duration_sec
    }

    pub fn to_seconds(&self, t: f64) -> f64 {
        self.window_start_sec + t * self.window_duration_sec
    }

    pub fn to_window(&self, sec: f64) -> f64 {
        (sec - self.window_start_sec) / self.window_duration_sec
    }
}

/// A detection in window-normalised coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowDetection {
    pub span: Span,
    pub label: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    /// Spans with activity probability below this are dropped before NMS.
    pub score_threshold: f64,
    /// Class-agnostic NMS threshold inside a window.
    pub nms_threshold: f64,
    /// Per-class NMS threshold when merging windows.
    pub merge_nms_threshold: f64,
    /// Window stride in frames; `None` means half the window.
    #[serde(default)]
    pub window_stride: Option<usize>,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            score_threshold: 0.05,
            nms_threshold: 0.5,
            merge_nms_threshold: 0.5,
            window_stride: None,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("score_threshold", self.score_threshold),
            ("nms_threshold", self.nms_threshold),
            ("merge_nms_threshold", self.merge_nms_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.window_stride == Some(0) {
            return Err(Error::config("window stride must be >= 1"));
        }
        Ok(())
    }
}

/// Greedy NMS returning kept indices in output order. Candidates are visited
/// by descending score (lower index first on ties); anything with IoU above
/// `threshold` against a kept candidate is removed.
pub fn nms_indices(spans: &[Span], scores: &[f64], threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut suppressed = vec![false; spans.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[pos + 1..] {
            if !suppressed[j] && temporal_iou(&spans[i], &spans[j]) > threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

pub fn temporal_nms(candidates: &[(Span, f64)], threshold: f64) -> Vec<(Span, f64)> {
    let spans: Vec<Span> = candidates.iter().map(|c| c.0).collect();
    let scores: Vec<f64> = candidates.iter().map(|c| c.1).collect();
    nms_indices(&spans, &scores, threshold)
        .into_iter()
        .map(|i| candidates[i])
        .collect()
}

/// Turns one window's predictions into labelled detections, sorted by score.
/// The final score is `act_score * softmax(class_scores)[label]`.
pub fn detect_window(
    predictions: &[PredictionVector],
    grid: &DefaultSpanGrid,
    score_threshold: f64,
    nms_threshold: f64,
) -> Result<Vec<WindowDetection>> {
    if predictions.len() != grid.len() {
        return Err(Error::input(format!(
            "{} predictions for a grid of {} default spans",
            predictions.len(),
            grid.len()
        )));
    }
    let candidates: Vec<usize> = (0..predictions.len())
        .filter(|&i| predictions[i].act_score >= score_threshold)
        .collect();
    let spans: Vec<Span> = candidates
        .iter()
        .map(|&i| decode_offsets(&predictions[i].offsets, &grid.spans[i]))
        .collect();
    let scores: Vec<f64> = candidates.iter().map(|&i| predictions[i].act_score).collect();
    let keep = nms_indices(&spans, &scores, nms_threshold);

    let mut out: Vec<WindowDetection> = keep
        .into_iter()
        .map(|c| {
            let p = &predictions[candidates[c]];
            let probs = softmax(&p.class_scores);
            let (k, prob) = probs
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best });
            WindowDetection {
                span: spans[c],
                label: k + 1,
                score: p.act_score * prob,
            }
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(out)
}

/// Maps a window detection to seconds, clipped to the window's extent.
/// Returns `None` if nothing remains after clipping.
pub fn to_absolute(det: &WindowDetection, placement: &WindowPlacement) -> Option<Detection> {
    let start = placement
        .to_seconds(det.span.start())
        .max(placement.window_start_sec);
    let end = placement.to_seconds(det.span.end()).min(placement.end_sec());
    (end > start).then_some(Detection {
        start_sec: start,
        end_sec: end,
        label: det.label,
        score: det.score,
    })
}

/// Concatenates per-window detections and applies per-class NMS.
pub fn merge_windows(per_window: &[Vec<Detection>], nms_threshold: f64) -> Vec<Detection> {
    let all: Vec<Detection> = per_window.iter().flatten().copied().collect();
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, d) in all.iter().enumerate() {
        by_label.entry(d.label).or_default().push(i);
    }
    let mut kept = Vec::new();
    for idx in by_label.values() {
        let mut order = idx.clone();
        order.sort_by(|&a, &b| all[b].score.total_cmp(&all[a].score).then(a.cmp(&b)));
        let mut suppressed = vec![false; order.len()];
        for p in 0..order.len() {
            if suppressed[p] {
                continue;
            }
            kept.push(order[p]);
            for q in p + 1..order.len() {
                if !suppressed[q] && all[order[p]].iou(&all[order[q]]) > nms_threshold {
                    suppressed[q] = true;
                }
            }
        }
    }
    kept.sort_by(|&a, &b| all[b].score.total_cmp(&all[a].score).then(a.cmp(&b)));
    kept.into_iter().map(|i| all[i]).collect()
}

/// Sliding-window inference over a whole video `[N, H, W, C]`.
pub fn detect_video(net: &Network, frames: &Tensor, fps: f64, cfg: &InferenceConfig) -> Result<Vec<Detection>> {
    cfg.validate()?;
    let [window_len, ..] = net.input_shape();
    let n_frames = frames.shape().first().copied().unwrap_or(0);
    let stride = cfg.window_stride.unwrap_or((window_len / 2).max(1));
    let grid = tile_default_spans(&net.span_grid())?;
    let duration = n_frames as f64 / fps;

    let per_window: Vec<Vec<Detection>> = window_offsets(n_frames, window_len, stride)
        .into_par_iter()
        .map(|offset| {
            let window = slice_window(frames, offset, window_len, pad_noise_seed(offset))?;
            let preds = net.forward(&window)?;
            let placement = WindowPlacement::from_frames(offset, window_len, fps);
            Ok(detect_window(&preds, &grid, cfg.score_threshold, cfg.nms_threshold)?
                .iter()
                .filter_map(|d| to_absolute(d, &placement))
                .filter_map(|mut d| {
                    d.end_sec = d.end_sec.min(duration);
                    (d.end_sec > d.start_sec).then_some(d)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(merge_windows(&per_window, cfg.merge_nms_threshold))
}

/// Detection record of the output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDetection {
    pub label: String,
    pub start_sec: f64,
    pub end_sec: f64,
    pub score: f64,
}

/// Detection output file for one video, detections sorted by score descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoDetections {
    pub video_id: String,
    pub detections: Vec<LabeledDetection>,
}

impl VideoDetections {
    /// Names labels with `class_names[label - 1]`.
    pub fn new(video_id: &str, detections: &[Detection], class_names: &[String]) -> Result<Self> {
        let mut out: Vec<LabeledDetection> = detections
            .iter()
            .map(|d| {
                let label = class_names
                    .get(d.label.wrapping_sub(1))
                    .ok_or_else(|| Error::input(format!("class id {} has no name", d.label)))?;
                Ok(LabeledDetection {
                    label: label.clone(),
                    start_sec: d.start_sec,
                    end_sec: d.end_sec,
                    score: d.score,
                })
            })
            .collect::<Result<_>>()?;
        out.sort_by(|a, b| b.score.total_cmp(&a.score));
        Ok(VideoDetections {
            video_id: video_id.to_string(),
            detections: out,
        })
    }
}
