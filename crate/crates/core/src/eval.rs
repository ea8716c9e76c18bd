//! Per-class average precision with all-point interpolation and mAP over a
//! set of temporal IoU thresholds.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infer::{interval_iou, VideoDetections};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub label: String,
    pub start_sec: f64,
    pub end_sec: f64,
}

/// Ground-truth annotation file for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAnnotations {
    pub video_id: String,
    pub fps: f64,
    pub num_frames: usize,
    pub annotations: Vec<Annotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_thresholds: vec![0.3, 0.4, 0.5, 0.6, 0.7],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iou_thresholds.is_empty() {
            return Err(Error::config("at least one IoU threshold is required"));
        }
        if self.iou_thresholds.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
            return Err(Error::config(format!(
                "IoU thresholds must lie in (0, 1], got {:?}",
                self.iou_thresholds
            )));
        }
        if self.iou_thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("IoU thresholds must be strictly increasing"));
        }
        Ok(())
    }
}

/// A single-class detection used for AP.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSegment {
    pub video_id: String,
    pub start_sec: f64,
    pub end_sec: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub video_id: String,
    pub start_sec: f64,
    pub end_sec: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// One point per ranked detection.
    pub points: Vec<PrPoint>,
    /// True-positive flag per ranked detection.
    pub true_positive: Vec<bool>,
    pub ap: f64,
}

/// Greedy score-order matching and all-point interpolated AP. Returns `None`
/// when there are neither detections nor ground truths.
pub fn average_precision(detections: &[ScoredSegment], ground_truths: &[Segment], iou_threshold: f64) -> Option<PrCurve> {
    if detections.is_empty() && ground_truths.is_empty() {
        return None;
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score).then(a.cmp(&b)));

    let mut by_video: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, g) in ground_truths.iter().enumerate() {
        by_video.entry(g.video_id.as_str()).or_default().push(j);
    }
    let mut consumed = vec![false; ground_truths.len()];
    let n_gt = ground_truths.len();
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(order.len());
    let mut flags = Vec::with_capacity(order.len());

    for (rank, &i) in order.iter().enumerate() {
        let d = &detections[i];
        let mut best: Option<(usize, f64)> = None;
        for &j in by_video.get(d.video_id.as_str()).map(Vec::as_slice).unwrap_or(&[]) {
            if consumed[j] {
                continue;
            }
            let g = &ground_truths[j];
            let iou = interval_iou((d.start_sec, d.end_sec), (g.start_sec, g.end_sec));
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        let hit = best.is_some();
        if let Some((j, _)) = best {
            consumed[j] = true;
            tp += 1;
        }
        flags.push(hit);
        points.push(PrPoint {
            recall: if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 },
            precision: tp as f64 / (rank + 1) as f64,
        });
    }

    let ap = if n_gt == 0 {
        0.0
    } else {
        // Precision envelope from the right, then sum over recall steps.
        let mut envelope = vec![0.0; points.len()];
        let mut running: f64 = 0.0;
        for r in (0..points.len()).rev() {
            running = running.max(points[r].precision);
            envelope[r] = running;
        }
        flags
            .iter()
            .zip(&envelope)
            .filter(|(&hit, _)| hit)
            .map(|(_, &p)| p / n_gt as f64)
            .fold(0.0, |acc, x| acc + x)
    };
    Some(PrCurve {
        points,
        true_positive: flags,
        ap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    /// Per class, AP at every threshold; `None` for classes without ground truth.
    pub per_class: BTreeMap<String, Vec<Option<f64>>>,
    /// mAP per threshold; `None` when no class has ground truth.
    pub map: Vec<Option<f64>>,
}

impl EvalReport {
    pub fn map_at(&self, threshold: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&t| (t - threshold).abs() < 1e-12)
            .and_then(|i| self.map[i])
    }
}

/// mAP at every configured threshold over classes that have at least one
/// ground truth. Detection labels outside the vocabulary are rejected. When
/// `vocabulary` is `None` it is the set of annotated labels.
pub fn mean_ap(
    detections: &[VideoDetections],
    annotations: &[VideoAnnotations],
    vocabulary: Option<&[String]>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    let vocab: BTreeSet<String> = match vocabulary {
        Some(v) => v.iter().cloned().collect(),
        None => annotations
            .iter()
            .flat_map(|v| v.annotations.iter().map(|a| a.label.clone()))
            .collect(),
    };

    let mut gts: BTreeMap<&str, Vec<Segment>> = vocab.iter().map(|c| (c.as_str(), Vec::new())).collect();
    for video in annotations {
        for a in &video.annotations {
            let entry = gts.get_mut(a.label.as_str()).ok_or_else(|| {
                Error::input(format!("annotation label {:?} is not in the class vocabulary", a.label))
            })?;
            entry.push(Segment {
                video_id: video.video_id.clone(),
                start_sec: a.start_sec,
                end_sec: a.end_sec,
            });
        }
    }
    let mut dets: BTreeMap<&str, Vec<ScoredSegment>> = vocab.iter().map(|c| (c.as_str(), Vec::new())).collect();
    for video in detections {
        for d in &video.detections {
            let entry = dets
                .get_mut(d.label.as_str())
                .ok_or_else(|| Error::input(format!("unknown detection label {:?}", d.label)))?;
            entry.push(ScoredSegment {
                video_id: video.video_id.clone(),
                start_sec: d.start_sec,
                end_sec: d.end_sec,
                score: d.score,
            });
        }
    }

    let mut per_class = BTreeMap::new();
    let mut map = Vec::with_capacity(cfg.iou_thresholds.len());
    for class in &vocab {
        let g = &gts[class.as_str()];
        let d = &dets[class.as_str()];
        let aps = cfg
            .iou_thresholds
            .iter()
            .map(|&t| {
                if g.is_empty() {
                    None
                } else {
                    average_precision(d, g, t).map(|c| c.ap)
                }
            })
            .collect();
        per_class.insert(class.clone(), aps);
    }
    for ti in 0..cfg.iou_thresholds.len() {
        let aps: Vec<f64> = per_class.values().filter_map(|v: &Vec<Option<f64>>| v[ti]).collect();
        map.push((!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64));
    }
    Ok(EvalReport {
        thresholds: cfg.iou_thresholds.clone(),
        per_class,
        map,
    })
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    Many(Vec<T>),
    One(T),
}

/// Reads JSON records from a file holding one object or an array, or from
/// every `*.json` file of a directory in name order.
pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    let mut out = Vec::new();
    for f in files {
        let text = fs::read_to_string(&f)?;
        match serde_json::from_str::<OneOrMany<T>>(&text)
            .map_err(|e| Error::format(format!("{}: {e}", f.display())))?
        {
            OneOrMany::Many(v) => out.extend(v),
            OneOrMany::One(x) => out.push(x),
        }
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text)?;
    Ok(())
}
