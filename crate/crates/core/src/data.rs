//! Synthetic untrimmed videos, on-disk dataset layout, training-window
//! construction and temporal/spatial jitter.
//!
//! Every class renders as a bright square of side `H/4` that moves one pixel
//! per frame in a class-specific direction and blinks with a period of `k`
//! frames (class `k`, 1-based), over uniform background noise.

use std::f64::consts::TAU;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{read_records, write_json, Annotation, VideoAnnotations};
use crate::infer::WindowPlacement;
use crate::net::io::{read_f64s, read_header, read_u64};
use crate::spans::{GroundTruth, Span};
use crate::tensor::Tensor;

pub const VIDEO_MAGIC: &[u8; 4] = b"S3DV";

/// Fraction of an instance that must stay inside a window for it to be kept.
pub const RETENTION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    /// Defaults to `activity_1 .. activity_K`.
    pub class_names: Option<Vec<String>>,
    pub train_videos: usize,
    pub test_videos: usize,
    pub duration_range_sec: [f64; 2],
    pub fps: f64,
    /// `[H, W]`
    pub frame_size: [usize; 2],
    pub instance_length_range_sec: [f64; 2],
    pub instances_per_video: [usize; 2],
    pub noise_amplitude: f64,
    /// Network window length in frames; instance lengths must fit in it.
    pub window_frames: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 3,
            class_names: None,
            train_videos: 40,
            test_videos: 10,
            duration_range_sec: [60.0, 180.0],
            fps: 8.0,
            frame_size: [16, 16],
            instance_length_range_sec: [2.0, 6.0],
            instances_per_video: [1, 8],
            noise_amplitude: 0.5,
            window_frames: 64,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn class_names(&self) -> Vec<String> {
        self.class_names
            .clone()
            .unwrap_or_else(|| (1..=self.num_classes).map(|k| format!("activity_{k}")).collect())
    }

    pub fn num_videos(&self) -> usize {
        self.train_videos + self.test_videos
    }

    pub fn validate(&self) -> Result<()> {
        let gen = |m: String| Err(Error::Generation(m));
        if self.num_classes == 0 {
            return gen("num_classes must be >= 1".into());
        }
        if self.class_names().len() != self.num_classes {
            return gen(format!("{} class names for {} classes", self.class_names().len(), self.num_classes));
        }
        if !(self.fps > 0.0) {
            return gen(format!("fps must be positive, got {}", self.fps));
        }
        let [h, w] = self.frame_size;
        if h < 4 || w < 4 {
            return gen(format!("frame size {h}x{w} too small, need at least 4x4"));
        }
        let [dmin, dmax] = self.duration_range_sec;
        if !(dmin > 0.0 && dmin <= dmax) {
            return gen(format!("invalid duration range {:?}", self.duration_range_sec));
        }
        let [lmin, lmax] = self.instance_length_range_sec;
        if !(lmin > 0.0 && lmin <= lmax) {
            return gen(format!("invalid instance length range {:?}", self.instance_length_range_sec));
        }
        let window_sec = self.window_frames as f64 / self.fps;
        if lmax > window_sec {
            return gen(format!(
                "instance length up to {lmax}s exceeds the {window_sec}s window"
            ));
        }
        let [nmin, nmax] = self.instances_per_video;
        if nmin > nmax {
            return gen(format!("invalid instances-per-video range {:?}", self.instances_per_video));
        }
        if nmax as f64 * lmax > dmin {
            return gen(format!(
                "infeasible placement: {nmax} instances of up to {lmax}s do not fit in a {dmin}s video"
            ));
        }
        if !(self.noise_amplitude >= 0.0 && self.noise_amplitude < 1.0) {
            return gen(format!("noise amplitude must lie in [0, 1), got {}", self.noise_amplitude));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// An activity instance in absolute time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Instance {
    /// 1-based class id.
    pub class: usize,
    pub start_sec: f64,
    pub end_sec: f64,
}

#[derive(Debug, Clone)]
pub struct GeneratedVideo {
    pub video_id: String,
    pub split: Split,
    pub fps: f64,
    /// `[N, H, W, 3]`
    pub frames: Tensor,
    pub instances: Vec<Instance>,
}

impl GeneratedVideo {
    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn annotations(&self, class_names: &[String]) -> VideoAnnotations {
        VideoAnnotations {
            video_id: self.video_id.clone(),
            fps: self.fps,
            num_frames: self.num_frames(),
            annotations: self
                .instances
                .iter()
                .map(|i| Annotation {
                    label: class_names[i.class - 1].clone(),
                    start_sec: i.start_sec,
                    end_sec: i.end_sec,
                })
                .collect(),
        }
    }
}

/// Per-video RNG: one ChaCha stream per (seed, index) pair.
pub fn video_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

fn fill_noise(data: &mut [f64], amplitude: f64, rng: &mut impl Rng) {
    if amplitude == 0.0 {
        data.fill(0.0);
        return;
    }
    for v in data {
        *v = rng.random::<f64>() * amplitude;
    }
}

/// Frames during which class `k` shows its square inside a blink period of `k`.
fn blink_on(class: usize, t: usize) -> bool {
    t % class < class.div_ceil(2)
}

pub fn generate_video(spec: &SyntheticSpec, index: usize) -> Result<GeneratedVideo> {
    spec.validate()?;
    let mut rng = video_rng(spec.seed, index);
    let fps = spec.fps;
    let [h, w] = spec.frame_size;
    let duration = rng.random_range(spec.duration_range_sec[0]..=spec.duration_range_sec[1]);
    let n_frames = ((duration * fps).round() as usize).max(1);

    let n_inst = rng.random_range(spec.instances_per_video[0]..=spec.instances_per_video[1]);
    let lmin = (spec.instance_length_range_sec[0] * fps).round().max(1.0) as usize;
    let lmax = ((spec.instance_length_range_sec[1] * fps).round() as usize).max(lmin);
    let lengths: Vec<usize> = (0..n_inst).map(|_| rng.random_range(lmin..=lmax)).collect();
    let classes: Vec<usize> = (0..n_inst).map(|_| rng.random_range(1..=spec.num_classes)).collect();
    let total: usize = lengths.iter().sum();
    if total > n_frames {
        return Err(Error::Generation(format!(
            "infeasible placement: {total} instance frames in a {n_frames}-frame video"
        )));
    }
    // Uniform non-overlapping placement: random gaps from sorted uniform cuts.
    let free = n_frames - total;
    let mut cuts: Vec<usize> = (0..n_inst).map(|_| rng.random_range(0..=free)).collect();
    cuts.sort_unstable();
    let mut order: Vec<usize> = (0..n_inst).collect();
    order.shuffle(&mut rng);
    let mut placed = Vec::with_capacity(n_inst);
    let mut used = 0;
    for (slot, &cut) in cuts.iter().enumerate() {
        let i = order[slot];
        let start = cut + used;
        used += lengths[i];
        placed.push((start, start + lengths[i], classes[i]));
    }

    let mut frames = Tensor::zeros(&[n_frames, h, w, 3]);
    fill_noise(frames.data_mut(), spec.noise_amplitude, &mut rng);
    let side = (h / 4).max(1);
    let frame_len = h * w * 3;
    for &(start, end, class) in &placed {
        let theta = TAU * (class - 1) as f64 / spec.num_classes as f64;
        let (dy, dx) = theta.sin_cos();
        let y0 = rng.random_range(0.0..h as f64);
        let x0 = rng.random_range(0.0..w as f64);
        for t in start..end {
            let rel = t - start;
            if !blink_on(class, rel) {
                continue;
            }
            let y = (y0 + dy * rel as f64).rem_euclid(h as f64) as usize;
            let x = (x0 + dx * rel as f64).rem_euclid(w as f64) as usize;
            let frame = &mut frames.data_mut()[t * frame_len..(t + 1) * frame_len];
            for sy in 0..side {
                for sx in 0..side {
                    let p = (((y + sy) % h) * w + (x + sx) % w) * 3;
                    frame[p..p + 3].fill(1.0);
                }
            }
        }
    }

    let instances = placed
        .iter()
        .map(|&(s, e, class)| Instance {
            class,
            start_sec: s as f64 / fps,
            end_sec: e as f64 / fps,
        })
        .collect();
    Ok(GeneratedVideo {
        video_id: format!("video_{index:04}"),
        split: if index < spec.train_videos {
            Split::Train
        } else {
            Split::Test
        },
        fps,
        frames,
        instances,
    })
}

pub fn generate_synthetic_dataset(spec: &SyntheticSpec) -> Result<Vec<GeneratedVideo>> {
    spec.validate()?;
    (0..spec.num_videos())
        .into_par_iter()
        .map(|i| generate_video(spec, i))
        .collect()
}

pub fn write_video(path: &Path, frames: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(VIDEO_MAGIC)?;
    w.write_all(&[1])?;
    let shape = frames.shape();
    if shape.len() != 4 {
        return Err(Error::input(format!("video tensor must be rank 4, got {shape:?}")));
    }
    for &d in shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    w.write_all(&(frames.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(frames.len() * 8);
    for v in frames.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_video(path: &Path) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path)?);
    read_header(&mut r, VIDEO_MAGIC, 1)?;
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = read_u64(&mut r, "video dims")? as usize;
    }
    let n: usize = dims.iter().product();
    let data = read_f64s(&mut r, n, "video frames")?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::format("trailing bytes after video frames"));
    }
    Tensor::from_vec(&dims, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub split: Split,
    /// Relative to the dataset directory.
    pub video_path: String,
    pub annotation_path: String,
    pub duration_sec: f64,
    pub num_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub fps: f64,
    pub frame_size: [usize; 2],
    pub noise_amplitude: f64,
    pub seed: u64,
    pub videos: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn load(dataset_dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dataset_dir.join(MANIFEST_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn entries(&self, split: Option<Split>) -> impl Iterator<Item = &ManifestEntry> {
        self.videos.iter().filter(move |v| split.is_none_or(|s| v.split == s))
    }
}

/// Writes `videos/<id>.s3dv`, `annotations/<split>/<id>.json` and
/// `manifest.json` under `out_dir`.
pub fn write_dataset(spec: &SyntheticSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    let names = spec.class_names();
    for sub in ["videos", "annotations/train", "annotations/test"] {
        fs::create_dir_all(out_dir.join(sub))?;
    }
    let entries: Vec<ManifestEntry> = (0..spec.num_videos())
        .into_par_iter()
        .map(|i| {
            let v = generate_video(spec, i)?;
            let split = match v.split {
                Split::Train => "train",
                Split::Test => "test",
            };
            let video_path = format!("videos/{}.s3dv", v.video_id);
            let annotation_path = format!("annotations/{split}/{}.json", v.video_id);
            write_video(&out_dir.join(&video_path), &v.frames)?;
            write_json(&out_dir.join(&annotation_path), &v.annotations(&names))?;
            Ok(ManifestEntry {
                video_id: v.video_id.clone(),
                split: v.split,
                video_path,
                annotation_path,
                duration_sec: v.num_frames() as f64 / v.fps,
                num_frames: v.num_frames(),
            })
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest {
        num_classes: spec.num_classes,
        class_names: names,
        fps: spec.fps,
        frame_size: spec.frame_size,
        noise_amplitude: spec.noise_amplitude,
        seed: spec.seed,
        videos: entries,
    };
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// A video loaded back from a dataset directory.
#[derive(Debug, Clone)]
pub struct LoadedVideo {
    pub video_id: String,
    pub fps: f64,
    pub frames: Tensor,
    pub instances: Vec<Instance>,
}

pub fn load_video(dataset_dir: &Path, manifest: &Manifest, entry: &ManifestEntry) -> Result<LoadedVideo> {
    let frames = read_video(&dataset_dir.join(&entry.video_path))?;
    let anns: Vec<VideoAnnotations> = read_records(&dataset_dir.join(&entry.annotation_path))?;
    let mut instances = Vec::new();
    for a in anns.iter().flat_map(|v| &v.annotations) {
        let class = manifest
            .class_names
            .iter()
            .position(|n| *n == a.label)
            .ok_or_else(|| Error::input(format!("label {:?} not in manifest classes", a.label)))?
            + 1;
        instances.push(Instance {
            class,
            start_sec: a.start_sec,
            end_sec: a.end_sec,
        });
    }
    Ok(LoadedVideo {
        video_id: entry.video_id.clone(),
        fps: manifest.fps,
        frames,
        instances,
    })
}

pub fn annotation_dir(dataset_dir: &Path, split: Split) -> PathBuf {
    dataset_dir.join("annotations").join(match split {
        Split::Train => "train",
        Split::Test => "test",
    })
}

/// Window start frames `0, stride, 2*stride, ...`, continuing until a window
/// reaches the last frame.
pub fn window_offsets(n_frames: usize, window_len: usize, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let mut out = vec![0];
    let mut o = 0;
    while o + window_len < n_frames {
        o += stride;
        out.push(o);
    }
    out
}

/// Seed for the noise that pads a window starting at `offset`.
pub fn pad_noise_seed(offset: usize) -> u64 {
    0x5EED_0000 ^ offset as u64
}

/// Default amplitude of padding noise, equal to the generator default.
pub const PAD_NOISE_AMPLITUDE: f64 = 0.5;

/// Copies `len` frames starting at `offset`, tail-padding with uniform noise.
pub fn slice_window(frames: &Tensor, offset: usize, len: usize, pad_seed: u64) -> Result<Tensor> {
    slice_window_with(frames, offset, len, PAD_NOISE_AMPLITUDE, pad_seed)
}

pub fn slice_window_with(frames: &Tensor, offset: usize, len: usize, amplitude: f64, pad_seed: u64) -> Result<Tensor> {
    let shape = frames.shape();
    if shape.len() != 4 {
        return Err(Error::input(format!("video tensor must be rank 4, got {shape:?}")));
    }
    let n = shape[0];
    let frame_len = shape[1] * shape[2] * shape[3];
    let mut out = Tensor::zeros(&[len, shape[1], shape[2], shape[3]]);
    let avail = n.saturating_sub(offset).min(len);
    out.data_mut()[..avail * frame_len]
        .copy_from_slice(&frames.data()[offset * frame_len..(offset + avail) * frame_len]);
    if avail < len {
        let mut rng = ChaCha8Rng::seed_from_u64(pad_seed);
        fill_noise(&mut out.data_mut()[avail * frame_len..], amplitude, &mut rng);
    }
    Ok(out)
}

/// Instances clipped to the window and kept when at least [`RETENTION`] of
/// their length remains, in window-normalised coordinates.
pub fn window_annotations(instances: &[Instance], placement: &WindowPlacement) -> Vec<GroundTruth> {
    instances
        .iter()
        .filter_map(|inst| {
            let len = inst.end_sec - inst.start_sec;
            let s = inst.start_sec.max(placement.window_start_sec);
            let e = inst.end_sec.min(placement.end_sec());
            if e <= s || e - s < RETENTION * len - 1e-9 {
                return None;
            }
            let span = Span::from_bounds(placement.to_window(s), placement.to_window(e)).ok()?;
            Some(GroundTruth {
                span,
                class: inst.class,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainingWindow {
    /// `[L, H, W, 3]`
    pub frames: Tensor,
    /// Start frame in the source video.
    pub offset: usize,
    pub placement: WindowPlacement,
    pub annotations: Vec<GroundTruth>,
}

impl TrainingWindow {
    pub fn build(frames: &Tensor, instances: &[Instance], offset: usize, window_len: usize, fps: f64) -> Result<Self> {
        let placement = WindowPlacement::from_frames(offset, window_len, fps);
        Ok(TrainingWindow {
            frames: slice_window(frames, offset, window_len, pad_noise_seed(offset))?,
            offset,
            placement,
            annotations: window_annotations(instances, &placement),
        })
    }
}

pub fn make_windows(
    frames: &Tensor,
    instances: &[Instance],
    window_len: usize,
    stride: usize,
    fps: f64,
) -> Result<Vec<TrainingWindow>> {
    let n = frames.shape().first().copied().unwrap_or(0);
    window_offsets(n, window_len, stride)
        .into_iter()
        .map(|o| TrainingWindow::build(frames, instances, o, window_len, fps))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterConfig {
    /// Window start moves by a uniform integer in `[-max, max]` frames.
    pub max_shift_frames: usize,
    /// The crop is `(H - margin) x (W - margin)`, resized back.
    pub crop_margin: usize,
    pub flip_prob: f64,
}

impl JitterConfig {
    /// Shift of a quarter stride, a 2-pixel crop margin and 50% flips.
    pub fn for_stride(stride: usize) -> Self {
        JitterConfig {
            max_shift_frames: stride / 4,
            crop_margin: 2,
            flip_prob: 0.5,
        }
    }

    pub fn none() -> Self {
        JitterConfig {
            max_shift_frames: 0,
            crop_margin: 0,
            flip_prob: 0.0,
        }
    }
}

/// Temporal shift (annotations re-derived from `instances`) followed by a
/// random crop, nearest-neighbour resize and optional horizontal flip.
pub fn jitter(
    window: &TrainingWindow,
    video: &Tensor,
    instances: &[Instance],
    cfg: &JitterConfig,
    rng: &mut impl Rng,
) -> Result<TrainingWindow> {
    let len = window.frames.shape()[0];
    let max = cfg.max_shift_frames as i64;
    let shift = if max > 0 { rng.random_range(-max..=max) } else { 0 };
    let n = video.shape()[0] as i64;
    let last_start = (n - len as i64).max(0);
    let offset = (window.offset as i64 + shift).clamp(0, last_start.max(window.offset as i64)) as usize;
    let mut out = if offset == window.offset {
        window.clone()
    } else {
        TrainingWindow::build(video, instances, offset, len, window.placement.fps)?
    };

    let [_, h, w, c] = [len, out.frames.shape()[1], out.frames.shape()[2], out.frames.shape()[3]];
    let m = cfg.crop_margin.min(h.min(w).saturating_sub(1));
    let flip = cfg.flip_prob > 0.0 && rng.random::<f64>() < cfg.flip_prob;
    if m == 0 && !flip {
        return Ok(out);
    }
    let (y0, x0) = if m > 0 {
        (rng.random_range(0..=m), rng.random_range(0..=m))
    } else {
        (0, 0)
    };
    let (ch, cw) = (h - m, w - m);
    let src = out.frames.data();
    let mut dst = vec![0.0; src.len()];
    for t in 0..len {
        for y in 0..h {
            let sy = y0 + y * ch / h;
            for x in 0..w {
                let xx = if flip { w - 1 - x } else { x };
                let sx = x0 + xx * cw / w;
                let si = ((t * h + sy) * w + sx) * c;
                let di = ((t * h + y) * w + x) * c;
                dst[di..di + c].copy_from_slice(&src[si..si + c]);
            }
        }
    }
    out.frames = Tensor::from_vec(out.frames.shape(), dst)?;
    Ok(out)
}
