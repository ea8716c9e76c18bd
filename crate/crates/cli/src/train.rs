//! Epoch loop over jittered training windows, checkpointing and the
//! single-window overfit mode.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use s3d_core::data::{jitter, load_video, window_offsets, LoadedVideo, Manifest, Split, TrainingWindow};
use s3d_core::net::io::{load_model, save_model};
use s3d_core::{match_spans, tile_default_spans, train_step, DefaultSpanGrid, LossReport, MatchResult, Network, Sgd, TrainSample};

use crate::config::RunConfig;

pub fn load_split(data_dir: &Path, manifest: &Manifest, split: Split) -> Result<Vec<LoadedVideo>> {
    let entries: Vec<_> = manifest.entries(Some(split)).collect();
    entries
        .par_iter()
        .map(|e| load_video(data_dir, manifest, e).with_context(|| format!("loading {}", e.video_id)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub report: LossReport,
}

pub fn write_loss_csv(path: &Path, records: &[StepRecord], append: bool) -> Result<()> {
    use std::io::Write;
    let exists = append && path.exists();
    let mut f = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(exists)
        .truncate(!exists)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    if !exists {
        writeln!(f, "step,epoch,loc,conf,act,total")?;
    }
    for r in records {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            r.step, r.epoch, r.report.loc, r.report.conf, r.report.act, r.report.total
        )?;
    }
    Ok(())
}

/// Progress saved after every completed epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointState {
    pub epochs_done: usize,
    pub steps_done: usize,
    pub config_hash: String,
}

pub struct Checkpoint {
    pub net: Network,
    pub opt: Sgd,
    pub state: CheckpointState,
}

const CKPT_MODEL: &str = "model.s3d";
const CKPT_OPT: &str = "optimizer.s3do";
const CKPT_STATE: &str = "state.json";

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_model(&self.net, &dir.join(CKPT_MODEL))?;
        self.opt.save(&dir.join(CKPT_OPT))?;
        fs::write(dir.join(CKPT_STATE), serde_json::to_string_pretty(&self.state)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let net = load_model(&dir.join(CKPT_MODEL)).with_context(|| format!("loading checkpoint {}", dir.display()))?;
        let opt = Sgd::load(&dir.join(CKPT_OPT), &net)?;
        let state = serde_json::from_str(&fs::read_to_string(dir.join(CKPT_STATE))?)?;
        Ok(Checkpoint { net, opt, state })
    }
}

#[derive(Debug, Clone, Copy)]
struct WindowRef {
    video: usize,
    offset: usize,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Jitter stream for one window position of one epoch.
fn window_rng(seed: u64, epoch: usize, position: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A_0F0F_F0F0);
    rng.set_stream(((epoch as u64) << 32) | position as u64);
    rng
}

pub struct Trainer<'a> {
    pub cfg: &'a RunConfig,
    pub videos: &'a [LoadedVideo],
    grid: DefaultSpanGrid,
    windows: Vec<WindowRef>,
    window_len: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a RunConfig, net: &Network, videos: &'a [LoadedVideo]) -> Result<Self> {
        let grid = tile_default_spans(&net.span_grid())?;
        let window_len = net.input_shape()[0];
        let windows = videos
            .iter()
            .enumerate()
            .flat_map(|(v, video)| {
                window_offsets(video.frames.shape()[0], window_len, cfg.training.window_stride)
                    .into_iter()
                    .map(move |offset| WindowRef { video: v, offset })
            })
            .collect::<Vec<_>>();
        if windows.is_empty() {
            bail!("no training windows");
        }
        Ok(Trainer {
            cfg,
            videos,
            grid,
            windows,
            window_len,
        })
    }

    pub fn num_windows(&self) -> usize {
        self.windows.len()
    }

    fn materialize(&self, w: WindowRef, rng: Option<&mut ChaCha8Rng>) -> Result<(TrainingWindow, MatchResult)> {
        let v = &self.videos[w.video];
        let base = TrainingWindow::build(&v.frames, &v.instances, w.offset, self.window_len, v.fps)?;
        let window = match rng {
            Some(rng) => jitter(&base, &v.frames, &v.instances, &self.cfg.training.jitter, rng)?,
            None => base,
        };
        let matched = match_spans(&self.grid, &window.annotations, self.cfg.synthetic.num_classes)?;
        Ok((window, matched))
    }

    /// Runs epochs `[first_epoch, last_epoch)`, calling `on_epoch` after each
    /// with the records of that epoch.
    pub fn run(
        &self,
        net: &mut Network,
        opt: &mut Sgd,
        first_epoch: usize,
        last_epoch: usize,
        mut step: usize,
        mut on_epoch: impl FnMut(usize, &Network, &Sgd, &[StepRecord]) -> Result<()>,
    ) -> Result<usize> {
        let seed = self.cfg.seed;
        let bs = self.cfg.training.batch_size;
        for epoch in first_epoch..last_epoch {
            opt.config.learning_rate = self.cfg.training.learning_rate_at(self.cfg.optimizer.learning_rate, epoch);
            let mut order: Vec<usize> = (0..self.windows.len()).collect();
            order.shuffle(&mut epoch_rng(seed, epoch));
            let mut records = Vec::with_capacity(order.len().div_ceil(bs));
            for (chunk_idx, chunk) in order.chunks(bs).enumerate() {
                let built: Vec<(TrainingWindow, MatchResult)> = chunk
                    .par_iter()
                    .enumerate()
                    .map(|(j, &wi)| {
                        let mut rng = window_rng(seed, epoch, chunk_idx * bs + j);
                        self.materialize(self.windows[wi], Some(&mut rng))
                    })
                    .collect::<Result<_>>()?;
                let batch: Vec<TrainSample> = built
                    .iter()
                    .map(|(w, m)| TrainSample {
                        frames: &w.frames,
                        matched: m,
                    })
                    .collect();
                step += 1;
                let report = train_step(net, opt, &batch).with_context(|| format!("epoch {epoch}, step {step}"))?;
                records.push(StepRecord { step, epoch, report });
            }
            on_epoch(epoch, net, opt, &records)?;
        }
        Ok(step)
    }

    /// Repeated steps on the first window that contains an annotation.
    pub fn overfit_one_window(&self, net: &mut Network, opt: &mut Sgd, steps: usize) -> Result<Vec<StepRecord>> {
        let (window, matched) = self
            .windows
            .iter()
            .map(|&w| self.materialize(w, None))
            .find(|r| r.as_ref().map_or(true, |(_, m)| m.num_positives() > 0))
            .context("no training window contains an activity")??;
        let batch = [TrainSample {
            frames: &window.frames,
            matched: &matched,
        }];
        (1..=steps)
            .map(|step| {
                let report = train_step(net, opt, &batch).with_context(|| format!("overfit step {step}"))?;
                Ok(StepRecord { step, epoch: 0, report })
            })
            .collect()
    }
}
