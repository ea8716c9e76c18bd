use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{loss_gradients, total_loss, BatchTargets, LossReport};
use crate::net::io::{read_f64s, read_header, read_u64, write_f64s};
use crate::net::{ConvParams, ForwardCache, Network, PredictionVector};
use crate::spans::MatchResult;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-2,
            momentum: 0.9,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::config(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// SGD with classical momentum: `v = mu * v + g; p -= lr * v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub config: OptimizerConfig,
    velocity: Vec<ConvParams>,
}

const OPT_MAGIC: &[u8; 4] = b"S3DO";

impl Sgd {
    pub fn new(net: &Network, config: OptimizerConfig) -> Self {
        Sgd {
            config,
            velocity: net.param_specs().iter().map(ConvParams::zeros_for).collect(),
        }
    }

    pub fn velocity(&self) -> &[ConvParams] {
        &self.velocity
    }

    pub fn apply(&mut self, net: &mut Network, grads: &[ConvParams]) {
        let lr = self.config.learning_rate;
        let mu = self.config.momentum;
        for ((p, v), g) in net.params_mut().iter_mut().zip(&mut self.velocity).zip(grads) {
            for (t, vt, gt) in [
                (&mut p.weight, &mut v.weight, &g.weight),
                (&mut p.bias, &mut v.bias, &g.bias),
            ] {
                for ((x, vx), gx) in t.data_mut().iter_mut().zip(vt.data_mut()).zip(gt.data()) {
                    *vx = mu * *vx + gx;
                    *x -= lr * *vx;
                }
            }
        }
    }

    /// Writes the momentum buffers in the same layout as model parameters.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(OPT_MAGIC)?;
        w.write_all(&[1])?;
        w.write_all(&self.config.learning_rate.to_le_bytes())?;
        w.write_all(&self.config.momentum.to_le_bytes())?;
        w.write_all(&(self.velocity.len() as u64).to_le_bytes())?;
        for v in &self.velocity {
            write_f64s(&mut w, v.weight.data())?;
            write_f64s(&mut w, v.bias.data())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path, net: &Network) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        read_header(&mut r, OPT_MAGIC, 1)?;
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf).map_err(|_| Error::format("truncated optimizer state"))?;
        let learning_rate = f64::from_le_bytes(buf);
        r.read_exact(&mut buf).map_err(|_| Error::format("truncated optimizer state"))?;
        let momentum = f64::from_le_bytes(buf);
        let n = read_u64(&mut r, "optimizer layer count")? as usize;
        if n != net.param_specs().len() {
            return Err(Error::format(format!(
                "optimizer state has {n} layers, network has {}",
                net.param_specs().len()
            )));
        }
        let mut velocity = Vec::with_capacity(n);
        for spec in net.param_specs() {
            let z = ConvParams::zeros_for(spec);
            let w = read_f64s(&mut r, z.weight.len(), &spec.name)?;
            let b = read_f64s(&mut r, z.bias.len(), &spec.name)?;
            velocity.push(ConvParams {
                weight: Tensor::from_vec(z.weight.shape(), w)?,
                bias: Tensor::from_vec(z.bias.shape(), b)?,
            });
        }
        Ok(Sgd {
            config: OptimizerConfig {
                learning_rate,
                momentum,
            },
            velocity,
        })
    }
}

/// One training window: frames and their matching against the default grid.
#[derive(Debug, Clone, Copy)]
pub struct TrainSample<'a> {
    pub frames: &'a Tensor,
    pub matched: &'a MatchResult,
}

fn forward_batch(net: &Network, frames: &[&Tensor]) -> Result<Vec<(Vec<PredictionVector>, ForwardCache)>> {
    frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            f.check_finite(&format!("batch[{i}].frames"))?;
            net.forward_cached(f)
        })
        .collect()
}

/// Loss and parameter gradients for fixed targets. Per-window gradients are
/// summed in batch order so the result does not depend on the thread count.
fn gradients_for(
    net: &Network,
    forwards: &[(Vec<PredictionVector>, ForwardCache)],
    targets: &BatchTargets,
) -> Result<(LossReport, Vec<ConvParams>)> {
    let predictions: Vec<PredictionVector> = forwards.iter().flat_map(|(p, _)| p.iter().cloned()).collect();
    let report = total_loss(&predictions, targets, &net.config().loss)?;
    if !report.is_finite() {
        return Err(Error::NonFinite {
            tensor: format!(
                "loss (loc {}, conf {}, act {})",
                report.loc, report.conf, report.act
            ),
        });
    }
    let pred_grads = loss_gradients(&predictions, targets, &net.config().loss);
    let per_window = net.num_predictions();
    let window_grads: Vec<Vec<ConvParams>> = forwards
        .par_iter()
        .zip(pred_grads.par_chunks(per_window))
        .map(|((_, cache), g)| net.backward(cache, g))
        .collect::<Result<_>>()?;

    let mut iter = window_grads.into_iter();
    let mut total = iter.next().ok_or_else(|| Error::input("empty batch"))?;
    for g in iter {
        for (acc, x) in total.iter_mut().zip(&g) {
            acc.add_assign(x);
        }
    }
    for (spec, g) in net.param_specs().iter().zip(&total) {
        g.weight.check_finite(&format!("{}.weight gradient", spec.name))?;
        g.bias.check_finite(&format!("{}.bias gradient", spec.name))?;
    }
    Ok((report, total))
}

/// Loss and gradients of a batch against precomputed targets (mining already
/// applied). Used directly by gradient checks.
pub fn batch_loss_and_gradients(
    net: &Network,
    frames: &[&Tensor],
    targets: &BatchTargets,
) -> Result<(LossReport, Vec<ConvParams>)> {
    if frames.is_empty() {
        return Err(Error::input("empty batch"));
    }
    let forwards = forward_batch(net, frames)?;
    gradients_for(net, &forwards, targets)
}

/// Mines negatives from the current activity scores, then applies one
/// momentum-SGD update. Returns the loss measured before the update.
pub fn train_step(net: &mut Network, opt: &mut Sgd, batch: &[TrainSample<'_>]) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(Error::input("empty batch"));
    }
    let frames: Vec<&Tensor> = batch.iter().map(|s| s.frames).collect();
    let forwards = forward_batch(net, &frames)?;
    let act: Vec<Vec<f64>> = forwards
        .iter()
        .map(|(p, _)| p.iter().map(|v| v.act_score).collect())
        .collect();
    for s in batch {
        if s.matched.len() != net.num_predictions() {
            return Err(Error::input(format!(
                "match result covers {} spans, network predicts {}",
                s.matched.len(),
                net.num_predictions()
            )));
        }
    }
    let targets = BatchTargets::mine_and_concat(batch.iter().zip(&act).map(|(s, a)| (s.matched, a.as_slice())));
    let (report, grads) = gradients_for(net, &forwards, &targets)?;
    opt.apply(net, &grads);
    for (spec, p) in net.param_specs().iter().zip(net.params()) {
        p.weight.check_finite(&format!("{}.weight", spec.name))?;
        p.bias.check_finite(&format!("{}.bias", spec.name))?;
    }
    Ok(report)
}
