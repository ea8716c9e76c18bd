use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use s3d_core::data::{JitterConfig, SyntheticSpec};
use s3d_core::{EvalConfig, InferenceConfig, LossWeights, NetworkConfig, OptimizerConfig, SpanGridConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    S3dTiny,
    FullScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Stride between training windows in frames.
    pub window_stride: usize,
    pub jitter: JitterConfig,
    /// Steps used by the single-window overfit mode.
    pub overfit_steps: usize,
    /// Epochs at which the learning rate is multiplied by `lr_decay`.
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
}

impl TrainingConfig {
    /// Step schedule: `base * lr_decay^m`, with `m` the milestones at or before `epoch`.
    pub fn learning_rate_at(&self, base: f64, epoch: usize) -> f64 {
        let m = self.lr_milestones.iter().filter(|&&e| e <= epoch).count();
        base * self.lr_decay.powi(m as i32)
    }
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 42,
            batch_size: 8,
            window_stride: 32,
            jitter: JitterConfig::for_stride(32),
            overfit_steps: 200,
            lr_milestones: vec![30, 38],
            lr_decay: 0.1,
        }
    }
}

/// Every tunable of the pipeline. Loaded from a JSON file; missing fields take
/// their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub synthetic: SyntheticSpec,
    pub architecture: Architecture,
    pub span_grid: SpanGridConfig,
    pub loss: LossWeights,
    pub optimizer: OptimizerConfig,
    pub training: TrainingConfig,
    pub inference: InferenceConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            synthetic: SyntheticSpec::default(),
            architecture: Architecture::S3dTiny,
            span_grid: SpanGridConfig {
                layer_lengths: vec![8, 4, 2, 1],
                ratios: vec![0.25, 0.5, 0.75, 1.0],
            },
            loss: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            training: TrainingConfig::default(),
            inference: InferenceConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Sets the run seed and the dataset seed together.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.synthetic.seed = seed;
        self
    }

    pub fn network_config(&self) -> NetworkConfig {
        let k = self.synthetic.num_classes;
        let mut net = match self.architecture {
            Architecture::S3dTiny => NetworkConfig::s3d_tiny(k),
            Architecture::FullScale => NetworkConfig::full_scale(k),
        };
        net.ratios = self.span_grid.ratios.clone();
        net.loss = self.loss;
        net.optimizer = self.optimizer;
        net
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic.validate()?;
        self.span_grid.validate()?;
        self.loss.validate()?;
        self.optimizer.validate()?;
        self.inference.validate()?;
        self.eval.validate()?;
        let net = self.network_config();
        net.validate()?;
        check_grid_matches(&net, &self.span_grid)?;
        let t = &self.training;
        if t.batch_size == 0 {
            bail!("training.batch_size must be >= 1");
        }
        if t.window_stride == 0 {
            bail!("training.window_stride must be >= 1");
        }
        if !(t.lr_decay.is_finite() && t.lr_decay > 0.0) {
            bail!("training.lr_decay must be finite and > 0, got {}", t.lr_decay);
        }
        if !(0.0..=1.0).contains(&t.jitter.flip_prob) {
            bail!("training.jitter.flip_prob must lie in [0, 1]");
        }
        if net.input[0] != self.synthetic.window_frames {
            bail!(
                "network window is {} frames but synthetic.window_frames is {}",
                net.input[0],
                self.synthetic.window_frames
            );
        }
        if [net.input[1], net.input[2]] != self.synthetic.frame_size {
            bail!(
                "network input is {}x{} but synthetic frames are {:?}",
                net.input[1],
                net.input[2],
                self.synthetic.frame_size
            );
        }
        Ok(())
    }

    /// Short SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// The network's feature lengths and ratios must equal the configured grid.
pub fn check_grid_matches(net: &NetworkConfig, grid: &SpanGridConfig) -> Result<()> {
    let lengths: Vec<usize> = net.feature_layers()?.iter().map(|f| f.shape[0]).collect();
    if lengths != grid.layer_lengths {
        bail!(
            "network feature lengths {lengths:?} do not match span grid layer lengths {:?}",
            grid.layer_lengths
        );
    }
    if net.ratios != grid.ratios {
        bail!("network ratios {:?} do not match span grid ratios {:?}", net.ratios, grid.ratios);
    }
    Ok(())
}

pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    let digest = Sha256::digest(&json);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}
