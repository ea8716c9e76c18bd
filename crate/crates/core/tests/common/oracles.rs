//! Naive reference implementations, written directly from the definitions.
#![allow(dead_code, clippy::too_many_arguments)]

/// Channels-last 3D convolution with zero padding, seven nested loops.
pub fn conv3d(
    x: &[f64],
    [l, h, w, cin]: [usize; 4],
    wt: &[f64],
    [kt, kh, kw, cout]: [usize; 4],
    bias: &[f64],
    stride: [usize; 3],
    pad: [usize; 3],
) -> (Vec<f64>, [usize; 4]) {
    let lo = (l + 2 * pad[0] - kt) / stride[0] + 1;
    let ho = (h + 2 * pad[1] - kh) / stride[1] + 1;
    let wo = (w + 2 * pad[2] - kw) / stride[2] + 1;
    let mut y = vec![0.0; lo * ho * wo * cout];
    for t in 0..lo {
        for i in 0..ho {
            for j in 0..wo {
                for co in 0..cout {
                    let mut acc = bias[co];
                    for a in 0..kt {
                        for b in 0..kh {
                            for c in 0..kw {
                                let ti = (t * stride[0] + a) as isize - pad[0] as isize;
                                let ii = (i * stride[1] + b) as isize - pad[1] as isize;
                                let ji = (j * stride[2] + c) as isize - pad[2] as isize;
                                if ti < 0 || ii < 0 || ji < 0 || ti >= l as isize || ii >= h as isize || ji >= w as isize {
                                    continue;
                                }
                                for ci in 0..cin {
                                    let xv = x[(((ti as usize * h) + ii as usize) * w + ji as usize) * cin + ci];
                                    let wv = wt[(((a * kh + b) * kw + c) * cin + ci) * cout + co];
                                    acc += xv * wv;
                                }
                            }
                        }
                    }
                    y[((t * ho + i) * wo + j) * cout + co] = acc;
                }
            }
        }
    }
    (y, [lo, ho, wo, cout])
}

/// Gradients of `sum(gy * conv3d(x))` with respect to input, weight and bias.
pub fn conv3d_backward(
    gy: &[f64],
    x: &[f64],
    [l, h, w, cin]: [usize; 4],
    wt: &[f64],
    [kt, kh, kw, cout]: [usize; 4],
    stride: [usize; 3],
    pad: [usize; 3],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let lo = (l + 2 * pad[0] - kt) / stride[0] + 1;
    let ho = (h + 2 * pad[1] - kh) / stride[1] + 1;
    let wo = (w + 2 * pad[2] - kw) / stride[2] + 1;
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; wt.len()];
    let mut gb = vec![0.0; cout];
    for t in 0..lo {
        for i in 0..ho {
            for j in 0..wo {
                for co in 0..cout {
                    let g = gy[((t * ho + i) * wo + j) * cout + co];
                    gb[co] += g;
                    for a in 0..kt {
                        for b in 0..kh {
                            for c in 0..kw {
                                let ti = (t * stride[0] + a) as isize - pad[0] as isize;
                                let ii = (i * stride[1] + b) as isize - pad[1] as isize;
                                let ji = (j * stride[2] + c) as isize - pad[2] as isize;
                                if ti < 0 || ii < 0 || ji < 0 || ti >= l as isize || ii >= h as isize || ji >= w as isize {
                                    continue;
                                }
                                for ci in 0..cin {
                                    let xi = (((ti as usize * h) + ii as usize) * w + ji as usize) * cin + ci;
                                    let wi = (((a * kh + b) * kw + c) * cin + ci) * cout + co;
                                    gx[xi] += g * wt[wi];
                                    gw[wi] += g * x[xi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

/// Max pooling with padding treated as -inf; ties resolve to the first
/// element in (t, h, w) scan order. Returns outputs and flat argmax indices.
pub fn maxpool3d(
    x: &[f64],
    [l, h, w, c]: [usize; 4],
    k: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
) -> (Vec<f64>, Vec<usize>, [usize; 4]) {
    let lo = (l + 2 * pad[0] - k[0]) / stride[0] + 1;
    let ho = (h + 2 * pad[1] - k[1]) / stride[1] + 1;
    let wo = (w + 2 * pad[2] - k[2]) / stride[2] + 1;
    let mut y = Vec::with_capacity(lo * ho * wo * c);
    let mut arg = Vec::with_capacity(lo * ho * wo * c);
    for t in 0..lo {
        for i in 0..ho {
            for j in 0..wo {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = usize::MAX;
                    for a in 0..k[0] {
                        for b in 0..k[1] {
                            for cc in 0..k[2] {
                                let ti = (t * stride[0] + a) as isize - pad[0] as isize;
                                let ii = (i * stride[1] + b) as isize - pad[1] as isize;
                                let ji = (j * stride[2] + cc) as isize - pad[2] as isize;
                                if ti < 0 || ii < 0 || ji < 0 || ti >= l as isize || ii >= h as isize || ji >= w as isize {
                                    continue;
                                }
                                let idx = (((ti as usize * h) + ii as usize) * w + ji as usize) * c + ch;
                                if x[idx] > best {
                                    best = x[idx];
                                    best_i = idx;
                                }
                            }
                        }
                    }
                    y.push(best);
                    arg.push(best_i);
                }
            }
        }
    }
    (y, arg, [lo, ho, wo, c])
}

pub fn maxpool3d_backward(gy: &[f64], argmax: &[usize], input_len: usize) -> Vec<f64> {
    let mut gx = vec![0.0; input_len];
    for (g, &i) in gy.iter().zip(argmax) {
        gx[i] += g;
    }
    gx
}

/// IoU of `[s1, e1]` and `[s2, e2]` from endpoints.
pub fn interval_iou(s1: f64, e1: f64, s2: f64, e2: f64) -> f64 {
    let inter = (e1.min(e2) - s1.max(s2)).max(0.0);
    let union = (e1 - s1) + (e2 - s2) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleMatch {
    /// `(ground truth index, class)` for positives.
    pub assignment: Vec<Option<(usize, usize)>>,
    pub soft_labels: Vec<f64>,
}

/// Every default span against every ground truth; positive iff best IoU
/// strictly exceeds one half, first ground truth wins ties.
pub fn match_exhaustive(defaults: &[(f64, f64)], gts: &[(f64, f64, usize)]) -> OracleMatch {
    let mut assignment = Vec::new();
    let mut soft = Vec::new();
    for &(ds, de) in defaults {
        let mut best = 0.0;
        let mut who = None;
        for (j, &(gs, ge, class)) in gts.iter().enumerate() {
            let iou = interval_iou(ds, de, gs, ge);
            if who.is_none() || iou > best {
                best = iou;
                who = Some((j, class));
            }
        }
        soft.push(if gts.is_empty() { 0.0 } else { best });
        assignment.push(if best > 0.5 { who } else { None });
    }
    OracleMatch {
        assignment,
        soft_labels: soft,
    }
}

/// Quadratic greedy NMS: walk candidates by descending score (earlier index
/// first on ties) and keep each one that overlaps no kept candidate by more
/// than `threshold`. Returns kept indices in keep order.
pub fn nms_quadratic(intervals: &[(f64, f64)], scores: &[f64], threshold: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    let mut remaining: Vec<usize> = (0..intervals.len()).collect();
    while !remaining.is_empty() {
        let mut pick = 0;
        for (p, &i) in remaining.iter().enumerate() {
            let j = remaining[pick];
            if scores[i] > scores[j] || (scores[i] == scores[j] && i < j) {
                pick = p;
            }
        }
        let i = remaining.remove(pick);
        let (s, e) = intervals[i];
        if kept
            .iter()
            .all(|&k| interval_iou(s, e, intervals[k].0, intervals[k].1) <= threshold)
        {
            kept.push(i);
        }
    }
    kept
}

#[derive(Debug, Clone)]
pub struct Seg {
    pub video: usize,
    pub start: f64,
    pub end: f64,
}

/// AP as the area under the interpolated precision staircase. Matching:
/// detections in descending score order (input order on ties) each take the
/// highest-IoU still-unmatched ground truth of their video with IoU at least
/// `threshold`.
pub fn ap_staircase(dets: &[(Seg, f64)], gts: &[Seg], threshold: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].1.partial_cmp(&dets[a].1).unwrap().then(a.cmp(&b)));
    let mut used = vec![false; gts.len()];
    let mut recall = Vec::new();
    let mut precision = Vec::new();
    let mut tp = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        let d = &dets[i].0;
        let mut best: Option<usize> = None;
        let mut best_iou = -1.0;
        for (j, g) in gts.iter().enumerate() {
            if used[j] || g.video != d.video {
                continue;
            }
            let iou = interval_iou(d.start, d.end, g.start, g.end);
            if iou >= threshold && iou > best_iou {
                best_iou = iou;
                best = Some(j);
            }
        }
        if let Some(j) = best {
            used[j] = true;
            tp += 1.0;
        }
        recall.push(tp / gts.len() as f64);
        precision.push(tp / (rank + 1) as f64);
    }
    // Staircase: for each recall level reached, the best precision at any
    // recall at or beyond it, times the width of that recall step.
    let mut levels: Vec<f64> = recall.clone();
    levels.dedup();
    let mut area = 0.0;
    let mut prev = 0.0;
    for &r in &levels {
        if r <= prev {
            continue;
        }
        let p = recall
            .iter()
            .zip(&precision)
            .filter(|(&rr, _)| rr >= r)
            .map(|(_, &p)| p)
            .fold(0.0, f64::max);
        area += (r - prev) * p;
        prev = r;
    }
    area
}

/// Central finite-difference derivative of `f` at `x`.
pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Central differences at steps `h` and `h/2` combined to cancel the
/// second-order truncation term.
pub fn richardson_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    let d1 = central_diff(&f, x, h);
    let d2 = central_diff(&f, x, h / 2.0);
    (4.0 * d2 - d1) / 3.0
}

/// `|a - b| / max(|a|, |b|)`, with an absolute floor for near-zero pairs.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
