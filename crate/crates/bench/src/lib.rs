//! Seeded inputs for the criterion benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s3d_core::eval::{ScoredSegment, Segment};
use s3d_core::{Span, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values in `[0, 1)`.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.random::<f64>()).collect()).expect("shape matches data")
}

/// `n` scored spans inside the unit window.
pub fn candidates(n: usize, seed: u64) -> Vec<(Span, f64)> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let span = Span::new(r.random_range(0.0..1.0), r.random_range(0.01..0.5)).expect("valid span");
            (span, r.random::<f64>())
        })
        .collect()
}

/// Ground truths spread over `videos` videos and detections near half of them.
pub fn ap_fixture(videos: usize, per_video: usize, seed: u64) -> (Vec<ScoredSegment>, Vec<Segment>) {
    let mut r = rng(seed);
    let mut gts = Vec::new();
    let mut dets = Vec::new();
    for v in 0..videos {
        let video_id = format!("video_{v:04}");
        for i in 0..per_video {
            let start = i as f64 * 20.0 + r.random_range(0.0..10.0);
            let end = start + r.random_range(2.0..6.0);
            gts.push(Segment {
                video_id: video_id.clone(),
                start_sec: start,
                end_sec: end,
            });
            for _ in 0..3 {
                let shift = if r.random_bool(0.5) { r.random_range(-1.0..1.0) } else { 8.0 };
                dets.push(ScoredSegment {
                    video_id: video_id.clone(),
                    start_sec: start + shift,
                    end_sec: end + shift,
                    score: r.random::<f64>(),
                });
            }
        }
    }
    (dets, gts)
}
