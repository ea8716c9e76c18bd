//! Differentiable Conv3D detector: a base feature stack, auxiliary temporal
//! layers, and one convolutional predictor per feature layer.

pub mod conv;
pub mod io;
pub mod pool;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{LossWeights, PredictionGrad};
use crate::spans::{Offsets, SpanGridConfig};
use crate::tensor::Tensor;

pub use conv::{conv3d_backward, conv3d_forward, Conv3dGrads, Window3d};
pub use pool::{maxpool3d_backward, maxpool3d_forward, Pooled};
pub use train::{train_step, OptimizerConfig, Sgd, TrainSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv3d,
    MaxPool3d,
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    #[serde(default)]
    pub in_channels: usize,
    #[serde(default)]
    pub out_channels: usize,
    #[serde(default = "ones3")]
    pub kernel: [usize; 3],
    #[serde(default = "ones3")]
    pub stride: [usize; 3],
    #[serde(default)]
    pub padding: [usize; 3],
    /// Output of this layer feeds a predictor.
    #[serde(default)]
    pub is_feature_layer: bool,
}

fn ones3() -> [usize; 3] {
    [1, 1, 1]
}

impl LayerSpec {
    pub fn conv(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::Conv3d,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            is_feature_layer: false,
        }
    }

    pub fn max_pool(name: &str, kernel: [usize; 3], stride: [usize; 3]) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::MaxPool3d,
            in_channels: 0,
            out_channels: 0,
            kernel,
            stride,
            padding: [0; 3],
            is_feature_layer: false,
        }
    }

    pub fn relu(name: &str) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::Relu,
            in_channels: 0,
            out_channels: 0,
            kernel: [1; 3],
            stride: [1; 3],
            padding: [0; 3],
            is_feature_layer: false,
        }
    }

    pub fn sigmoid(name: &str) -> Self {
        LayerSpec {
            kind: LayerKind::Sigmoid,
            ..LayerSpec::relu(name)
        }
    }

    pub fn feature(mut self) -> Self {
        self.is_feature_layer = true;
        self
    }

    pub fn window(&self) -> Window3d {
        Window3d {
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
        }
    }

    /// Output shape `[L, H, W, C]` for an input shape, or a configuration error.
    pub fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        let [l, h, w, c] = input;
        match self.kind {
            LayerKind::Relu | LayerKind::Sigmoid => Ok(input),
            LayerKind::Conv3d | LayerKind::MaxPool3d => {
                if self.kernel.contains(&0) || self.stride.contains(&0) {
                    return Err(Error::config(format!(
                        "layer {}: kernel and stride must be >= 1",
                        self.name
                    )));
                }
                if self.kind == LayerKind::Conv3d && self.in_channels != c {
                    return Err(Error::config(format!(
                        "layer {}: expects {} input channels, previous layer gives {c}",
                        self.name, self.in_channels
                    )));
                }
                if self.kind == LayerKind::Conv3d && self.out_channels == 0 {
                    return Err(Error::config(format!("layer {}: zero output channels", self.name)));
                }
                let [lo, ho, wo] = self.window().output_dims([l, h, w]).ok_or_else(|| {
                    Error::config(format!(
                        "layer {}: kernel {:?} does not fit input {:?}",
                        self.name,
                        self.kernel,
                        [l, h, w]
                    ))
                })?;
                let c_out = if self.kind == LayerKind::Conv3d {
                    self.out_channels
                } else {
                    c
                };
                Ok([lo, ho, wo, c_out])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Input `[L, H, W]` in frames and pixels.
    pub input: [usize; 3],
    #[serde(default = "three")]
    pub input_channels: usize,
    pub num_classes: usize,
    pub ratios: Vec<f64>,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

fn three() -> usize {
    3
}

/// A layer whose output feeds a predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayer {
    pub layer: usize,
    pub shape: [usize; 4],
}

impl NetworkConfig {
    /// Desk-scale reference network: 64x16x16x3 input, four conv/pool blocks
    /// down to an 8x1x1x32 base feature, three temporal stride-2 layers.
    pub fn s3d_tiny(num_classes: usize) -> Self {
        let k3 = [3, 3, 3];
        let mut layers = Vec::new();
        let widths = [3, 8, 16, 32, 32];
        let pools = [[1, 2, 2], [2, 2, 2], [2, 2, 2], [2, 2, 2]];
        for (b, pool) in pools.iter().enumerate() {
            let i = b + 1;
            layers.push(LayerSpec::conv(&format!("conv{i}"), widths[b], widths[b + 1], k3, [1; 3], [1; 3]));
            layers.push(LayerSpec::relu(&format!("relu{i}")));
            layers.push(LayerSpec::max_pool(&format!("pool{i}"), *pool, *pool));
        }
        layers.last_mut().unwrap().is_feature_layer = true;
        for i in 6..=8 {
            layers.push(LayerSpec::conv(&format!("conv{i}"), 32, 32, [3, 1, 1], [2, 1, 1], [1, 0, 0]));
            layers.push(LayerSpec::relu(&format!("relu{i}")).feature());
        }
        NetworkConfig {
            input: [64, 16, 16],
            input_channels: 3,
            num_classes,
            ratios: vec![0.25, 0.5, 0.75, 1.0],
            layers,
            loss: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
        }
    }

    /// Full-resolution layout: C3D conv1a..conv5b on 256x112x112 input, a 2x
    /// pool, then conv6..conv10 with 1x1x1 bottlenecks. Feature layers are
    /// conv5..conv10 with temporal lengths 32, 16, 8, 4, 2, 1.
    pub fn full_scale(num_classes: usize) -> Self {
        let k3 = [3, 3, 3];
        let p1 = [1, 1, 1];
        let mut layers = Vec::new();
        let conv = |layers: &mut Vec<LayerSpec>, name: &str, cin, cout, kernel, stride, pad| {
            layers.push(LayerSpec::conv(name, cin, cout, kernel, stride, pad));
            layers.push(LayerSpec::relu(&format!("{name}_relu")));
        };
        conv(&mut layers, "conv1a", 3, 64, k3, [1; 3], p1);
        layers.push(LayerSpec::max_pool("pool1", [1, 2, 2], [1, 2, 2]));
        conv(&mut layers, "conv2a", 64, 128, k3, [1; 3], p1);
        layers.push(LayerSpec::max_pool("pool2", [2; 3], [2; 3]));
        conv(&mut layers, "conv3a", 128, 256, k3, [1; 3], p1);
        conv(&mut layers, "conv3b", 256, 256, k3, [1; 3], p1);
        layers.push(LayerSpec::max_pool("pool3", [2; 3], [2; 3]));
        conv(&mut layers, "conv4a", 256, 512, k3, [1; 3], p1);
        conv(&mut layers, "conv4b", 512, 512, k3, [1; 3], p1);
        layers.push(LayerSpec::max_pool("pool4", [2; 3], [2; 3]));
        conv(&mut layers, "conv5a", 512, 512, k3, [1; 3], p1);
        conv(&mut layers, "conv5b", 512, 512, k3, [1; 3], p1);
        layers.last_mut().unwrap().is_feature_layer = true;
        layers.push(LayerSpec::max_pool("pool5", [2; 3], [2; 3]));
        conv(&mut layers, "conv6", 512, 512, k3, [1; 3], p1);
        layers.last_mut().unwrap().is_feature_layer = true;
        for (i, name) in ["conv7", "conv8", "conv9", "conv10"].iter().enumerate() {
            let cin = if i == 0 { 512 } else { 256 };
            conv(&mut layers, &format!("{name}_bottleneck"), cin, 128, [1; 3], [1; 3], [0; 3]);
            conv(&mut layers, name, 128, 256, k3, [2, 1, 1], p1);
            layers.last_mut().unwrap().is_feature_layer = true;
        }
        NetworkConfig {
            input: [256, 112, 112],
            input_channels: 3,
            num_classes,
            ratios: vec![0.25, 0.5, 0.75, 1.0],
            layers,
            loss: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
        }
    }

    /// Shape algebra over the layer list. Returns every feature layer with
    /// its output shape and checks them against the span-grid invariants.
    pub fn feature_layers(&self) -> Result<Vec<FeatureLayer>> {
        if self.num_classes == 0 {
            return Err(Error::config("num_classes must be >= 1"));
        }
        let mut shape = [self.input[0], self.input[1], self.input[2], self.input_channels];
        if shape.contains(&0) {
            return Err(Error::config(format!("input dims must be positive, got {shape:?}")));
        }
        let mut features = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer.output_shape(shape)?;
            if layer.is_feature_layer {
                features.push(FeatureLayer { layer: i, shape });
            }
        }
        if features.is_empty() {
            return Err(Error::config("network has no feature layers"));
        }
        self.span_grid_from(&features).validate()?;
        Ok(features)
    }

    fn span_grid_from(&self, features: &[FeatureLayer]) -> SpanGridConfig {
        SpanGridConfig {
            layer_lengths: features.iter().map(|f| f.shape[0]).collect(),
            ratios: self.ratios.clone(),
        }
    }

    pub fn span_grid(&self) -> Result<SpanGridConfig> {
        let features = self.feature_layers()?;
        Ok(self.span_grid_from(&features))
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.optimizer.validate()?;
        self.feature_layers().map(|_| ())
    }

    /// Channels per temporal cell emitted by each predictor: `(K + 3) * R`.
    pub fn predictor_channels(&self) -> usize {
        (self.num_classes + 3) * self.ratios.len()
    }

    fn predictor_spec(&self, index: usize, feature: &FeatureLayer) -> LayerSpec {
        let [_, h, w, c] = feature.shape;
        LayerSpec::conv(
            &format!("predictor{index}"),
            c,
            self.predictor_channels(),
            [3, h, w],
            [1; 3],
            [1, 0, 0],
        )
    }

    /// Every parameterised layer, backbone convs in order then predictors.
    pub fn conv_layers(&self) -> Result<Vec<LayerSpec>> {
        let features = self.feature_layers()?;
        let mut specs: Vec<LayerSpec> = self
            .layers
            .iter()
            .filter(|l| l.kind == LayerKind::Conv3d)
            .cloned()
            .collect();
        specs.extend(features.iter().enumerate().map(|(i, f)| self.predictor_spec(i, f)));
        Ok(specs)
    }
}

/// Per-default-span network output.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionVector {
    /// Pre-softmax logits, one per class.
    pub class_scores: Vec<f64>,
    /// Post-sigmoid activity probability in (0, 1).
    pub act_score: f64,
    pub offsets: Offsets,
}

pub fn sigmoid(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    // keep strictly inside (0, 1)
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvParams {
    pub fn zeros_for(spec: &LayerSpec) -> Self {
        let [kt, kh, kw] = spec.kernel;
        ConvParams {
            weight: Tensor::zeros(&[kt, kh, kw, spec.in_channels, spec.out_channels]),
            bias: Tensor::zeros(&[spec.out_channels]),
        }
    }

    fn he_normal(spec: &LayerSpec, rng: &mut ChaCha8Rng) -> Self {
        let mut p = ConvParams::zeros_for(spec);
        let fan_in = (spec.kernel.iter().product::<usize>() * spec.in_channels) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        for v in p.weight.data_mut() {
            *v = normal.sample(rng);
        }
        p
    }

    pub fn add_assign(&mut self, other: &ConvParams) {
        self.weight.add_assign(&other.weight);
        self.bias.add_assign(&other.bias);
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    features: Vec<FeatureLayer>,
    specs: Vec<LayerSpec>,
    params: Vec<ConvParams>,
}

/// Intermediate values kept by the forward pass for backpropagation.
#[derive(Debug)]
pub struct ForwardCache {
    /// `activations[i]` is the input of layer `i`; the last entry is the
    /// output of the final layer.
    activations: Vec<Tensor>,
    pool_argmax: Vec<Option<Vec<usize>>>,
}

impl Network {
    /// He-initialised network. Fails if the configuration is inconsistent.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        let specs = config.conv_layers()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = specs.iter().map(|s| ConvParams::he_normal(s, &mut rng)).collect();
        Network::from_params(config, params)
    }

    pub fn from_params(config: NetworkConfig, params: Vec<ConvParams>) -> Result<Self> {
        config.validate()?;
        let features = config.feature_layers()?;
        let specs = config.conv_layers()?;
        if params.len() != specs.len() {
            return Err(Error::config(format!(
                "network has {} parameterised layers, got {} parameter sets",
                specs.len(),
                params.len()
            )));
        }
        for (spec, p) in specs.iter().zip(&params) {
            let expected = ConvParams::zeros_for(spec);
            if p.weight.shape() != expected.weight.shape() || p.bias.shape() != expected.bias.shape() {
                return Err(Error::config(format!(
                    "layer {}: parameter shapes {:?}/{:?} do not match {:?}/{:?}",
                    spec.name,
                    p.weight.shape(),
                    p.bias.shape(),
                    expected.weight.shape(),
                    expected.bias.shape()
                )));
            }
        }
        Ok(Network {
            config,
            features,
            specs,
            params,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &[ConvParams] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ConvParams] {
        &mut self.params
    }

    /// Parameterised layers, aligned with [`Network::params`].
    pub fn param_specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn feature_layers(&self) -> &[FeatureLayer] {
        &self.features
    }

    pub fn span_grid(&self) -> SpanGridConfig {
        self.config.span_grid_from(&self.features)
    }

    pub fn num_predictions(&self) -> usize {
        self.span_grid().span_count()
    }

    pub fn input_shape(&self) -> [usize; 4] {
        let [l, h, w] = self.config.input;
        [l, h, w, self.config.input_channels]
    }

    fn zero_grads(&self) -> Vec<ConvParams> {
        self.specs.iter().map(ConvParams::zeros_for).collect()
    }

    pub fn forward(&self, video: &Tensor) -> Result<Vec<PredictionVector>> {
        self.forward_cached(video).map(|(p, _)| p)
    }

    /// Forward pass returning predictions in grid order plus the cache needed
    /// by [`Network::backward`].
    pub fn forward_cached(&self, video: &Tensor) -> Result<(Vec<PredictionVector>, ForwardCache)> {
        if video.shape() != self.input_shape() {
            return Err(Error::input(format!(
                "network expects input {:?}, got {:?}",
                self.input_shape(),
                video.shape()
            )));
        }
        let n_layers = self.config.layers.len();
        let mut activations = Vec::with_capacity(n_layers + 1);
        let mut pool_argmax = Vec::with_capacity(n_layers);
        activations.push(video.clone());
        let mut conv_idx = 0;
        for layer in &self.config.layers {
            let x = activations.last().unwrap();
            let (y, argmax) = match layer.kind {
                LayerKind::Conv3d => {
                    let p = &self.params[conv_idx];
                    conv_idx += 1;
                    (conv3d_forward(x, &p.weight, &p.bias, &layer.window())?, None)
                }
                LayerKind::MaxPool3d => {
                    let pooled = maxpool3d_forward(x, &layer.window())?;
                    (pooled.output, Some(pooled.argmax))
                }
                LayerKind::Relu => {
                    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
                    (Tensor::from_vec(x.shape(), data)?, None)
                }
                LayerKind::Sigmoid => {
                    let data = x.data().iter().map(|&v| sigmoid(v)).collect();
                    (Tensor::from_vec(x.shape(), data)?, None)
                }
            };
            activations.push(y);
            pool_argmax.push(argmax);
        }

        let k = self.config.num_classes;
        let r = self.config.ratios.len();
        let mut predictions = Vec::with_capacity(self.num_predictions());
        for (fi, feature) in self.features.iter().enumerate() {
            let p = &self.params[conv_idx + fi];
            let spec = &self.specs[conv_idx + fi];
            let raw = conv3d_forward(&activations[feature.layer + 1], &p.weight, &p.bias, &spec.window())?;
            for cell in raw.data().chunks_exact(self.config.predictor_channels()) {
                for chunk in cell.chunks_exact(k + 3) {
                    predictions.push(PredictionVector {
                        class_scores: chunk[..k].to_vec(),
                        act_score: sigmoid(chunk[k]),
                        offsets: Offsets::new(chunk[k + 1], chunk[k + 2]),
                    });
                }
            }
            debug_assert_eq!(raw.shape()[0] * r, raw.data().len() / (k + 3));
        }
        Ok((
            predictions,
            ForwardCache {
                activations,
                pool_argmax,
            },
        ))
    }

    /// Backpropagates per-prediction gradients to every parameter.
    pub fn backward(&self, cache: &ForwardCache, grads: &[PredictionGrad]) -> Result<Vec<ConvParams>> {
        if grads.len() != self.num_predictions() {
            return Err(Error::input(format!(
                "{} prediction gradients for {} predictions",
                grads.len(),
                self.num_predictions()
            )));
        }
        let k = self.config.num_classes;
        let n_backbone = self.specs.len() - self.features.len();
        let mut out = self.zero_grads();

        // Gradient arriving at each feature layer's output from its predictor.
        let mut feature_grads: Vec<Option<Tensor>> = vec![None; self.config.layers.len()];
        let mut offset = 0;
        for (fi, feature) in self.features.iter().enumerate() {
            let spec = &self.specs[n_backbone + fi];
            let p = &self.params[n_backbone + fi];
            let lf = feature.shape[0];
            let n_pred = lf * self.config.ratios.len();
            let mut raw_grad = Vec::with_capacity(n_pred * (k + 3));
            for g in &grads[offset..offset + n_pred] {
                raw_grad.extend_from_slice(&g.class_scores);
                raw_grad.push(g.act_logit);
                raw_grad.push(g.offsets.center);
                raw_grad.push(g.offsets.length);
            }
            offset += n_pred;
            let raw_grad = Tensor::from_vec(&[lf, 1, 1, self.config.predictor_channels()], raw_grad)?;
            let g = conv3d_backward(&raw_grad, &cache.activations[feature.layer + 1], &p.weight, &spec.window(), true)?;
            out[n_backbone + fi] = ConvParams {
                weight: g.weight,
                bias: g.bias,
            };
            feature_grads[feature.layer] = g.input;
        }

        let first_conv = self
            .config
            .layers
            .iter()
            .position(|l| l.kind == LayerKind::Conv3d)
            .unwrap_or(usize::MAX);
        let mut conv_idx = n_backbone;
        let mut grad: Option<Tensor> = None;
        for (i, layer) in self.config.layers.iter().enumerate().rev() {
            if layer.kind == LayerKind::Conv3d {
                conv_idx -= 1;
            }
            if let Some(fg) = feature_grads[i].take() {
                match grad.as_mut() {
                    Some(g) => g.add_assign(&fg),
                    None => grad = Some(fg),
                }
            }
            let Some(g) = grad.take() else { continue };
            let x = &cache.activations[i];
            let need_input = i > first_conv;
            grad = match layer.kind {
                LayerKind::Conv3d => {
                    let p = &self.params[conv_idx];
                    let cg = conv3d_backward(&g, x, &p.weight, &layer.window(), need_input)?;
                    out[conv_idx] = ConvParams {
                        weight: cg.weight,
                        bias: cg.bias,
                    };
                    cg.input
                }
                LayerKind::MaxPool3d => {
                    let argmax = cache.pool_argmax[i].as_ref().expect("pool argmax cached");
                    Some(maxpool3d_backward(&g, argmax, x.shape()))
                }
                LayerKind::Relu => {
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect();
                    Some(Tensor::from_vec(x.shape(), data)?)
                }
                LayerKind::Sigmoid => {
                    let y = &cache.activations[i + 1];
                    let data = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&gv, &yv)| gv * yv * (1.0 - yv))
                        .collect();
                    Some(Tensor::from_vec(x.shape(), data)?)
                }
            };
            if !need_input {
                break;
            }
        }
        Ok(out)
    }
}
