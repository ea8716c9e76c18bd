//! Oracle comparisons shared by the unit-level tests and the acceptance
//! harness. Every check panics with a diagnostic on the first mismatch.
#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s3d_core::eval::{average_precision, ScoredSegment, Segment};
use s3d_core::infer::{nms_indices, temporal_nms};
use s3d_core::loss::{hard_negative_mining, loss_gradients, PROB_EPS};
use s3d_core::loss::{activity_confidence_loss, class_confidence_loss, localization_loss};
use s3d_core::net::conv::{conv3d_backward, conv3d_forward, Window3d};
use s3d_core::net::pool::{maxpool3d_backward, maxpool3d_forward};
use s3d_core::net::train::batch_loss_and_gradients;
use s3d_core::net::LayerSpec;
use s3d_core::spans::{decode_offsets, encode_offsets};
use s3d_core::{
    match_spans, mean_ap, temporal_iou, tile_default_spans, total_loss, Annotation, BatchTargets, EvalConfig,
    GroundTruth, LabeledDetection, LossWeights, Network, NetworkConfig, Offsets, PredictionVector, Span,
    SpanGridConfig, Tensor, VideoAnnotations, VideoDetections,
};

use super::oracles::{self, rel_err, richardson_diff, Seg};

// ---------------------------------------------------------------- geometry

/// Random (ground truth, default) pairs survive encode then decode.
pub fn encode_decode_round_trip(pairs: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..pairs {
        let g = Span::new(rng.random_range(-0.5..1.5), rng.random_range(1e-3..2.0)).unwrap();
        let d = Span::new(rng.random_range(0.0..1.0), rng.random_range(1e-3..1.0)).unwrap();
        let back = decode_offsets(&encode_offsets(&g, &d), &d);
        assert!((back.center() - g.center()).abs() < 1e-9, "{g:?} {d:?} {back:?}");
        assert!((back.length() - g.length()).abs() < 1e-9, "{g:?} {d:?} {back:?}");
    }
}

pub fn temporal_iou_matches_interval_oracle(pairs: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..pairs {
        let a = Span::new(rng.random_range(0.0..1.0), rng.random_range(1e-3..1.0)).unwrap();
        let b = Span::new(rng.random_range(0.0..1.0), rng.random_range(1e-3..1.0)).unwrap();
        let expected = oracles::interval_iou(a.start(), a.end(), b.start(), b.end());
        let got = temporal_iou(&a, &b);
        assert!((got - expected).abs() < 1e-12, "{a:?} {b:?}: {got} vs {expected}");
    }
}

// ---------------------------------------------------------------- matching

/// A grid of dyadic spans (power-of-two layer lengths, quarter ratios) so
/// every IoU below is computed exactly.
fn random_grid(rng: &mut ChaCha8Rng) -> SpanGridConfig {
    loop {
        let mut lengths: Vec<usize> = [16, 8, 4, 2, 1].into_iter().filter(|_| rng.random_bool(0.5)).collect();
        if lengths.is_empty() {
            lengths.push(1 << rng.random_range(0..5));
        }
        let mut ratios: Vec<f64> = [0.25, 0.5, 0.75, 1.0].into_iter().filter(|_| rng.random_bool(0.5)).collect();
        if ratios.is_empty() {
            ratios.push(1.0);
        }
        let cfg = SpanGridConfig::new(lengths, ratios).unwrap();
        if cfg.span_count() <= 100 {
            return cfg;
        }
    }
}

fn random_ground_truths(rng: &mut ChaCha8Rng, defaults: &[Span], k: usize) -> Vec<(f64, f64, usize)> {
    let n = rng.random_range(0..=10);
    (0..n)
        .map(|_| {
            let class = rng.random_range(1..=k);
            let d = defaults.choose(rng).unwrap();
            match rng.random_range(0..4) {
                // Half of a default span: IoU exactly 0.5 with it.
                0 => (d.start(), d.start() + d.length() / 2.0, class),
                // Twice a default span: IoU exactly 0.5 with it.
                1 => (d.start(), d.start() + 2.0 * d.length(), class),
                2 => (d.start(), d.end(), class),
                _ => {
                    let s = rng.random_range(0..64) as f64 / 64.0;
                    let len = rng.random_range(1..=32) as f64 / 64.0;
                    (s, s + len, class)
                }
            }
        })
        .collect()
}

/// Compares `match_spans` with the exhaustive oracle on random grids and
/// returns how many spans sat exactly at IoU 0.5.
pub fn match_spans_equals_exhaustive_oracle(cases: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k = 4;
    let mut boundary_cases = 0;
    for case in 0..cases {
        let cfg = random_grid(&mut rng);
        let grid = tile_default_spans(&cfg).unwrap();
        let gts = random_ground_truths(&mut rng, &grid.spans, k);
        let gt_spans: Vec<GroundTruth> = gts
            .iter()
            .map(|&(s, e, class)| GroundTruth {
                span: Span::from_bounds(s, e).unwrap(),
                class,
            })
            .collect();
        let got = match_spans(&grid, &gt_spans, k).unwrap();
        let defaults: Vec<(f64, f64)> = grid.spans.iter().map(|s| (s.start(), s.end())).collect();
        let want = oracles::match_exhaustive(&defaults, &gts);
        let got_assign: Vec<Option<(usize, usize)>> =
            got.assignment.iter().map(|a| a.map(|a| (a.ground_truth, a.class))).collect();
        assert_eq!(got_assign, want.assignment, "case {case}");
        assert_eq!(got.soft_labels, want.soft_labels, "case {case}");
        for (i, a) in got.assignment.iter().enumerate() {
            assert_eq!(a.is_some(), got.target_offsets[i].is_some());
            if want.soft_labels[i] == 0.5 {
                boundary_cases += 1;
                assert!(a.is_none(), "case {case}: IoU 0.5 span {i} must be negative");
            }
        }
    }
    boundary_cases
}

// ---------------------------------------------------------------- loss

pub const K: usize = 3;

pub fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> (Vec<PredictionVector>, BatchTargets) {
    let mut preds = Vec::new();
    let mut t = BatchTargets::default();
    for _ in 0..n {
        preds.push(PredictionVector {
            class_scores: (0..K).map(|_| rng.random_range(-3.0..3.0)).collect(),
            act_score: rng.random_range(0.02..0.98),
            offsets: Offsets::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
        });
        if rng.random_bool(0.3) {
            t.classes.push(Some(rng.random_range(1..=K)));
            t.offsets.push(Some(Offsets::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))));
            t.soft_labels.push(rng.random_range(0.5001..1.0));
            t.mined.push(false);
        } else {
            t.classes.push(None);
            t.offsets.push(None);
            t.soft_labels.push(rng.random_range(0.0..0.5));
            t.mined.push(rng.random_bool(0.4));
        }
    }
    if t.num_positives() == 0 {
        t.classes[0] = Some(1);
        t.offsets[0] = Some(Offsets::new(0.1, -0.2));
        t.soft_labels[0] = 0.8;
        t.mined[0] = false;
    }
    (preds, t)
}

/// Uniform logits give ln 3, act 0.5 against label 0.5 gives ln 2, an offset
/// error of 0.5 gives 0.125, and a saturated act score gives ~0.
pub fn loss_hand_values() {
    let p = |act: f64, off: f64| PredictionVector {
        class_scores: vec![0.0; 3],
        act_score: act,
        offsets: Offsets::new(off, 0.0),
    };
    let one_pos = |soft: f64| BatchTargets {
        classes: vec![Some(1)],
        offsets: vec![Some(Offsets::new(0.0, 0.0))],
        soft_labels: vec![soft],
        mined: vec![false],
    };
    let conf = class_confidence_loss(&[p(0.5, 0.0)], &one_pos(1.0));
    assert!((conf - 3f64.ln()).abs() < 1e-6, "conf {conf}");
    let act = activity_confidence_loss(&[p(0.5, 0.0)], &one_pos(0.5));
    assert!((act - 2f64.ln()).abs() < 1e-6, "act {act}");
    let loc = localization_loss(&[p(0.5, 0.5)], &one_pos(1.0));
    assert!((loc - 0.125).abs() < 1e-6, "loc {loc}");
    let saturated = activity_confidence_loss(&[p(1.0 - PROB_EPS, 0.0)], &one_pos(1.0));
    assert!(saturated <= 1e-6, "saturated act {saturated}");
}

/// Scalar loss as a function of one perturbed prediction field.
fn loss_with(preds: &[PredictionVector], t: &BatchTargets, w: &LossWeights, i: usize, field: usize, v: f64) -> f64 {
    let mut p = preds.to_vec();
    match field {
        f if f < K => p[i].class_scores[f] = v,
        f if f == K => p[i].act_score = v,
        f if f == K + 1 => p[i].offsets.center = v,
        _ => p[i].offsets.length = v,
    }
    total_loss(&p, t, w).unwrap().total
}

/// Every analytic loss gradient against central differences.
pub fn loss_gradients_match_finite_differences(seeds: u64) {
    let w = LossWeights { alpha: 0.7, beta: 1.3 };
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (preds, t) = random_batch(&mut rng, 25);
        let grads = loss_gradients(&preds, &t, &w);
        for (i, p) in preds.iter().enumerate() {
            let analytic: Vec<f64> = grads[i]
                .class_scores
                .iter()
                .copied()
                .chain([grads[i].act_score, grads[i].offsets.center, grads[i].offsets.length])
                .collect();
            let values: Vec<f64> = p
                .class_scores
                .iter()
                .copied()
                .chain([p.act_score, p.offsets.center, p.offsets.length])
                .collect();
            for (field, (&a, &x)) in analytic.iter().zip(&values).enumerate() {
                if field > K {
                    if let Some(o) = t.offsets[i] {
                        let target = if field == K + 1 { o.center } else { o.length };
                        // Skip the smooth-L1 kink.
                        if ((x - target).abs() - 1.0).abs() < 1e-3 {
                            continue;
                        }
                    }
                }
                let numeric = richardson_diff(|v| loss_with(&preds, &t, &w, i, field, v), x, 1e-5);
                let err = rel_err(a, numeric, 1e-6);
                assert!(err < 1e-6, "seed {seed} span {i} field {field}: analytic {a} numeric {numeric}");
            }
        }
    }
}

// ---------------------------------------------------------------- network

/// Two convolutions over a 4x4x4x2 input with feature lengths {4, 2}.
pub fn micro_config() -> NetworkConfig {
    NetworkConfig {
        input: [4, 4, 4],
        input_channels: 2,
        num_classes: 3,
        ratios: vec![0.5, 1.0],
        layers: vec![
            LayerSpec::conv("conv1", 2, 3, [3, 3, 3], [1, 1, 1], [1, 1, 1]),
            LayerSpec::relu("relu1").feature(),
            LayerSpec::conv("conv2", 3, 3, [3, 1, 1], [2, 1, 1], [1, 0, 0]),
            LayerSpec::relu("relu2").feature(),
        ],
        loss: Default::default(),
        optimizer: Default::default(),
    }
}

fn random_input(rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_vec(&[4, 4, 4, 2], (0..128).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Sets one parameter and returns its previous value.
fn set_param(net: &mut Network, layer: usize, which: usize, k: usize, v: f64) -> f64 {
    let p = &mut net.params_mut()[layer];
    let t = if which == 0 { &mut p.weight } else { &mut p.bias };
    std::mem::replace(&mut t.data_mut()[k], v)
}

fn vec_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na.max(nb) == 0.0 {
        0.0
    } else {
        diff / na.max(nb)
    }
}

/// End-to-end parameter gradients of the micro network against central
/// differences; returns the worst per-tensor relative error.
pub fn micro_network_gradcheck(seeds: u64) -> f64 {
    let cfg = micro_config();
    assert_eq!(
        cfg.feature_layers().unwrap().iter().map(|f| f.shape[0]).collect::<Vec<_>>(),
        vec![4, 2]
    );
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Network::new(cfg.clone(), seed).unwrap();
        // Nonzero biases keep pre-activations off the ReLU kink at zero.
        for p in net.params_mut() {
            for b in p.bias.data_mut() {
                *b = rng.random_range(-0.2..0.2);
            }
        }
        let x1 = random_input(&mut rng);
        let x2 = random_input(&mut rng);
        let grid = tile_default_spans(&net.span_grid()).unwrap();
        let windows = [
            vec![GroundTruth {
                span: Span::from_bounds(0.0, 0.5).unwrap(),
                class: 1,
            }],
            vec![
                GroundTruth {
                    span: Span::from_bounds(0.25, 0.75).unwrap(),
                    class: 3,
                },
                GroundTruth {
                    span: Span::from_bounds(0.5, 1.0).unwrap(),
                    class: 2,
                },
            ],
        ];
        // Targets (including mined negatives) are fixed before differencing.
        let mut targets = BatchTargets::default();
        for (x, gts) in [&x1, &x2].into_iter().zip(&windows) {
            let m = match_spans(&grid, gts, 3).unwrap();
            assert!(m.num_positives() > 0);
            let act: Vec<f64> = net.forward(x).unwrap().iter().map(|p| p.act_score).collect();
            targets.extend(BatchTargets::new(&m, &hard_negative_mining(&act, &m)));
        }
        let loss_of = |net: &Network| {
            let mut preds = net.forward(&x1).unwrap();
            preds.extend(net.forward(&x2).unwrap());
            total_loss(&preds, &targets, &net.config().loss).unwrap().total
        };
        let (_, grads) = batch_loss_and_gradients(&net, &[&x1, &x2], &targets).unwrap();

        let h = 1e-5;
        for layer in 0..net.params().len() {
            for which in 0..2 {
                let n = if which == 0 {
                    net.params()[layer].weight.len()
                } else {
                    net.params()[layer].bias.len()
                };
                let mut numeric = Vec::with_capacity(n);
                for k in 0..n {
                    let orig = set_param(&mut net, layer, which, k, 0.0);
                    set_param(&mut net, layer, which, k, orig + h);
                    let up = loss_of(&net);
                    set_param(&mut net, layer, which, k, orig - h);
                    let down = loss_of(&net);
                    set_param(&mut net, layer, which, k, orig + h / 2.0);
                    let up2 = loss_of(&net);
                    set_param(&mut net, layer, which, k, orig - h / 2.0);
                    let down2 = loss_of(&net);
                    set_param(&mut net, layer, which, k, orig);
                    // Richardson-extrapolated central difference.
                    let d1 = (up - down) / (2.0 * h);
                    let d2 = (up2 - down2) / h;
                    numeric.push((4.0 * d2 - d1) / 3.0);
                }
                let analytic = if which == 0 {
                    grads[layer].weight.data()
                } else {
                    grads[layer].bias.data()
                };
                let err = vec_rel_err(analytic, &numeric);
                let name = &net.param_specs()[layer].name;
                assert!(err < 1e-5, "seed {seed} {name} {}: rel err {err:e}", ["weight", "bias"][which]);
                worst = worst.max(err);
            }
        }
    }
    worst
}

// ---------------------------------------------------------------- conv / pool

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn assert_close(a: &[f64], b: &[f64], what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0), "{what}[{i}]: {x} vs {y}");
    }
}

pub fn conv_matches_nested_loops(cases: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut done = 0;
    while done < cases {
        let input = [
            rng.random_range(1..=6),
            rng.random_range(1..=6),
            rng.random_range(1..=6),
            rng.random_range(1..=4),
        ];
        let kernel = [rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3)];
        let stride = [rng.random_range(1..=2), rng.random_range(1..=2), rng.random_range(1..=2)];
        let pad = [rng.random_range(0..=1), rng.random_range(0..=1), rng.random_range(0..=1)];
        if (0..3).any(|d| input[d] + 2 * pad[d] < kernel[d]) {
            continue;
        }
        let cout = rng.random_range(1..=4);
        let [kt, kh, kw] = kernel;
        let x = random_tensor(&input, &mut rng);
        let w = random_tensor(&[kt, kh, kw, input[3], cout], &mut rng);
        let b = random_tensor(&[cout], &mut rng);
        let win = Window3d {
            kernel,
            stride,
            padding: pad,
        };
        let y = conv3d_forward(&x, &w, &b, &win).unwrap();
        let (y_ref, dims) = oracles::conv3d(x.data(), input, w.data(), [kt, kh, kw, cout], b.data(), stride, pad);
        assert_eq!(y.shape(), &dims, "case {done}");
        assert_close(y.data(), &y_ref, &format!("case {done} forward"));

        let gy = random_tensor(y.shape(), &mut rng);
        let grads = conv3d_backward(&gy, &x, &w, &win, true).unwrap();
        let (gx, gw, gb) = oracles::conv3d_backward(gy.data(), x.data(), input, w.data(), [kt, kh, kw, cout], stride, pad);
        assert_close(grads.input.unwrap().data(), &gx, &format!("case {done} input grad"));
        assert_close(grads.weight.data(), &gw, &format!("case {done} weight grad"));
        assert_close(grads.bias.data(), &gb, &format!("case {done} bias grad"));
        done += 1;
    }
}

pub fn maxpool_matches_nested_loops(cases: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut done = 0;
    while done < cases {
        let input = [
            rng.random_range(1..=6),
            rng.random_range(1..=6),
            rng.random_range(1..=6),
            rng.random_range(1..=3),
        ];
        let kernel = [rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3)];
        let stride = [rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3)];
        if (0..3).any(|d| input[d] < kernel[d]) {
            continue;
        }
        // Quantised values make ties common.
        let n: usize = input.iter().product();
        let x = Tensor::from_vec(&input, (0..n).map(|_| rng.random_range(0..4) as f64).collect()).unwrap();
        let win = Window3d {
            kernel,
            stride,
            padding: [0; 3],
        };
        let pooled = maxpool3d_forward(&x, &win).unwrap();
        let (y_ref, arg_ref, dims) = oracles::maxpool3d(x.data(), input, kernel, stride, [0; 3]);
        assert_eq!(pooled.output.shape(), &dims);
        assert_close(pooled.output.data(), &y_ref, "pool forward");
        assert_eq!(pooled.argmax, arg_ref, "pool argmax");

        let gy = random_tensor(pooled.output.shape(), &mut rng);
        let gx = maxpool3d_backward(&gy, &pooled.argmax, x.shape());
        assert_close(gx.data(), &oracles::maxpool3d_backward(gy.data(), &arg_ref, n), "pool backward");
        done += 1;
    }
}

// ---------------------------------------------------------------- NMS / AP

pub fn nms_matches_quadratic_oracle(cases: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..cases {
        let n = rng.random_range(0..40);
        let spans: Vec<Span> = (0..n)
            .map(|_| Span::new(rng.random_range(0.0..1.0), rng.random_range(0.01..0.5)).unwrap())
            .collect();
        // Coarse scores so ties occur.
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..10) as f64 / 10.0).collect();
        let threshold = [0.3, 0.5, 0.7][case % 3];
        let intervals: Vec<(f64, f64)> = spans.iter().map(|s| (s.start(), s.end())).collect();
        let want = oracles::nms_quadratic(&intervals, &scores, threshold);
        assert_eq!(nms_indices(&spans, &scores, threshold), want, "case {case}");

        let candidates: Vec<(Span, f64)> = spans.iter().copied().zip(scores.iter().copied()).collect();
        let kept = temporal_nms(&candidates, threshold);
        assert_eq!(kept.len(), want.len(), "case {case}");
        for (k, &i) in kept.iter().zip(&want) {
            assert_eq!(*k, candidates[i], "case {case}");
        }
    }
}

pub fn random_fixture(rng: &mut ChaCha8Rng) -> (Vec<(Seg, f64)>, Vec<Seg>) {
    let videos = rng.random_range(1..=3);
    let n_gt = rng.random_range(0..8);
    let gts: Vec<Seg> = (0..n_gt)
        .map(|_| {
            let s = rng.random_range(0.0..50.0);
            Seg {
                video: rng.random_range(0..videos),
                start: s,
                end: s + rng.random_range(1.0..8.0),
            }
        })
        .collect();
    let n_det = rng.random_range(0..15);
    let dets = (0..n_det)
        .map(|_| {
            let seg = if !gts.is_empty() && rng.random_bool(0.6) {
                let g = &gts[rng.random_range(0..gts.len())];
                let jitter = rng.random_range(-1.5..1.5);
                Seg {
                    video: g.video,
                    start: g.start + jitter,
                    end: (g.end + jitter * rng.random_range(0.0..1.0)).max(g.start + jitter + 0.1),
                }
            } else {
                let s = rng.random_range(0.0..50.0);
                Seg {
                    video: rng.random_range(0..videos),
                    start: s,
                    end: s + rng.random_range(1.0..8.0),
                }
            };
            (seg, rng.random_range(0..20) as f64 / 20.0)
        })
        .collect();
    (dets, gts)
}

pub fn average_precision_matches_staircase_oracle(cases: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for case in 0..cases {
        let (dets, gts) = random_fixture(&mut rng);
        let scored: Vec<ScoredSegment> = dets
            .iter()
            .map(|(s, score)| ScoredSegment {
                video_id: format!("v{}", s.video),
                start_sec: s.start,
                end_sec: s.end,
                score: *score,
            })
            .collect();
        let segments: Vec<Segment> = gts
            .iter()
            .map(|s| Segment {
                video_id: format!("v{}", s.video),
                start_sec: s.start,
                end_sec: s.end,
            })
            .collect();
        for thr in [0.3, 0.5, 0.7] {
            let got = average_precision(&scored, &segments, thr);
            if dets.is_empty() && gts.is_empty() {
                assert!(got.is_none());
                continue;
            }
            let want = oracles::ap_staircase(&dets, &gts, thr);
            let ap = got.unwrap().ap;
            assert!((ap - want).abs() < 1e-10, "case {case} thr {thr}: {ap} vs {want}");
        }
    }
}

/// Spreads a fixture over three videos with two class labels drawn from
/// `labels`.
pub fn to_records(dets: &[(Seg, f64)], gts: &[Seg], labels: &[usize]) -> (Vec<VideoDetections>, Vec<VideoAnnotations>) {
    let mut vd: Vec<VideoDetections> = (0..3)
        .map(|v| VideoDetections {
            video_id: format!("v{v}"),
            detections: vec![],
        })
        .collect();
    let mut va: Vec<VideoAnnotations> = (0..3)
        .map(|v| VideoAnnotations {
            video_id: format!("v{v}"),
            fps: 8.0,
            num_frames: 800,
            annotations: vec![],
        })
        .collect();
    for (i, (s, score)) in dets.iter().enumerate() {
        vd[s.video].detections.push(LabeledDetection {
            label: format!("c{}", labels[i % labels.len()] % 2),
            start_sec: s.start,
            end_sec: s.end,
            score: *score,
        });
    }
    for (i, s) in gts.iter().enumerate() {
        va[s.video].annotations.push(Annotation {
            label: format!("c{}", labels[(i + 1) % labels.len()] % 2),
            start_sec: s.start,
            end_sec: s.end,
        });
    }
    (vd, va)
}

/// mAP over increasing IoU thresholds never rises.
pub fn map_is_monotone_in_threshold(vd: &[VideoDetections], va: &[VideoAnnotations]) {
    let cfg = EvalConfig {
        iou_thresholds: vec![0.1, 0.3, 0.4, 0.5, 0.6, 0.7, 0.9],
    };
    let report = mean_ap(vd, va, Some(&["c0".to_string(), "c1".to_string()]), &cfg).unwrap();
    let maps: Vec<f64> = report.map.iter().map(|m| m.unwrap_or(0.0)).collect();
    for w in maps.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{maps:?}");
    }
}

/// Monotonicity on the same fixtures the AP oracle uses.
pub fn map_monotone_on_fixtures(cases: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for case in 0..cases {
        let (dets, gts) = random_fixture(&mut rng);
        let labels = [case, case / 2 + 1, case / 3];
        let (vd, va) = to_records(&dets, &gts, &labels);
        map_is_monotone_in_threshold(&vd, &va);
    }
}
