//! Single-shot temporal activity detection over untrimmed video.
//!
//! A 3D-convolutional network predicts, for every default span tiled over a
//! fixed-length window, class scores, an activity score and span offsets.
//! Detections from overlapping windows are merged with non-maximum suppression
//! and scored with interpolated average precision.

pub mod data;
pub mod error;
pub mod eval;
pub mod infer;
pub mod loss;
pub mod net;
pub mod spans;
pub mod tensor;

pub use error::{Error, Result};
pub use eval::{mean_ap, Annotation, EvalConfig, EvalReport, VideoAnnotations};
pub use infer::{detect_video, Detection, InferenceConfig, LabeledDetection, VideoDetections};
pub use loss::{total_loss, BatchTargets, LossReport, LossWeights};
pub use net::{train_step, Network, NetworkConfig, OptimizerConfig, PredictionVector, Sgd, TrainSample};
pub use spans::{
    match_spans, temporal_iou, tile_default_spans, DefaultSpanGrid, GroundTruth, MatchResult, Offsets, Span,
    SpanGridConfig,
};
pub use tensor::Tensor;
