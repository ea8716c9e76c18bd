//! Channels-last 3-D cross-correlation.
//!
//! Input `[L, H, W, C_in]`, weights `[k_t, k_h, k_w, C_in, C_out]`, bias
//! `[C_out]`, output `[L_out, H_out, W_out, C_out]`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `floor((n + 2p - k) / s) + 1`, or `None` when the padded input is shorter
/// than the kernel.
pub fn output_len(n: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || n + 2 * padding < kernel {
        return None;
    }
    Some((n + 2 * padding - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window3d {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Window3d {
    pub fn output_dims(&self, dims: [usize; 3]) -> Option<[usize; 3]> {
        Some([
            output_len(dims[0], self.kernel[0], self.stride[0], self.padding[0])?,
            output_len(dims[1], self.kernel[1], self.stride[1], self.padding[1])?,
            output_len(dims[2], self.kernel[2], self.stride[2], self.padding[2])?,
        ])
    }

    /// Input coordinate for output `o` and kernel tap `k` on `axis`, if in bounds.
    #[inline(always)]
    pub(crate) fn input_coord(&self, axis: usize, o: usize, k: usize, n: usize) -> Option<usize> {
        (o * self.stride[axis] + k)
            .checked_sub(self.padding[axis])
            .filter(|&i| i < n)
    }
}

fn dims4(t: &Tensor, what: &str) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        ref s => Err(Error::config(format!("{what} must be rank 4, got shape {s:?}"))),
    }
}

struct ConvShapes {
    input: [usize; 4],
    kernel: [usize; 3],
    out: [usize; 3],
    c_out: usize,
}

fn check_shapes(input: &Tensor, weight: &Tensor, bias: &Tensor, win: &Window3d) -> Result<ConvShapes> {
    let input_dims = dims4(input, "conv input")?;
    let wshape = weight.shape();
    if wshape.len() != 5 {
        return Err(Error::config(format!("conv weight must be rank 5, got {wshape:?}")));
    }
    let kernel = [wshape[0], wshape[1], wshape[2]];
    if kernel != win.kernel {
        return Err(Error::config(format!(
            "conv weight kernel {kernel:?} does not match layer kernel {:?}",
            win.kernel
        )));
    }
    if wshape[3] != input_dims[3] {
        return Err(Error::config(format!(
            "conv expects {} input channels, got {}",
            wshape[3], input_dims[3]
        )));
    }
    let c_out = wshape[4];
    if bias.shape() != [c_out] {
        return Err(Error::config(format!(
            "conv bias shape {:?} does not match {c_out} output channels",
            bias.shape()
        )));
    }
    let out = win
        .output_dims([input_dims[0], input_dims[1], input_dims[2]])
        .ok_or_else(|| {
            Error::config(format!(
                "conv kernel {:?} with padding {:?} does not fit input {:?}",
                win.kernel, win.padding, input_dims
            ))
        })?;
    Ok(ConvShapes {
        input: input_dims,
        kernel,
        out,
        c_out,
    })
}

/// Unrolls every receptive field into one row of a `[L_out*H_out*W_out,
/// k_t*k_h*k_w*C_in]` matrix, with zeros where the kernel covers padding. The
/// column order matches the weight layout, so the weights act as a
/// `[k_t*k_h*k_w*C_in, C_out]` matrix.
fn im2col(x: &[f64], s: &ConvShapes, win: &Window3d) -> Vec<f64> {
    let mut cols = Vec::with_capacity(s.rows() * s.patch());
    for_each_row(s, win, |seg| match seg {
        Segment::Zeros(n) => cols.resize(cols.len() + n, 0.0),
        Segment::Input(src, n) => cols.extend_from_slice(&x[src..src + n]),
    });
    debug_assert_eq!(cols.len(), s.rows() * s.patch());
    cols
}

/// Adjoint of [`im2col`]: scatter-adds patch rows back onto the input grid.
fn col2im_add(cols: &[f64], s: &ConvShapes, win: &Window3d, gx: &mut [f64]) {
    let mut pos = 0;
    for_each_row(s, win, |seg| match seg {
        Segment::Zeros(n) => pos += n,
        Segment::Input(src, n) => {
            for (g, &c) in gx[src..src + n].iter_mut().zip(&cols[pos..pos + n]) {
                *g += c;
            }
            pos += n;
        }
    });
}

/// A run of consecutive patch entries: padding, or a contiguous input range.
enum Segment {
    Zeros(usize),
    Input(usize, usize),
}

/// Walks the patch matrix in row-major order as runs of padding and input.
/// Kernel taps along W address consecutive input pixels, so each (t, h) tap
/// row is at most one input run.
fn for_each_row(s: &ConvShapes, win: &Window3d, mut f: impl FnMut(Segment)) {
    let [l, h, w, c_in] = s.input;
    let [lo, ho, wo] = s.out;
    let [kt, kh, kw] = s.kernel;
    let tap_row = kw * c_in;
    for ot in 0..lo {
        for oh in 0..ho {
            for ow in 0..wo {
                let w0 = (ow * win.stride[2]) as isize - win.padding[2] as isize;
                // Valid taps along W are dw in [a, b).
                let a = (-w0).clamp(0, kw as isize) as usize;
                let b = (w as isize - w0).clamp(a as isize, kw as isize) as usize;
                for dt in 0..kt {
                    let Some(it) = win.input_coord(0, ot, dt, l) else {
                        f(Segment::Zeros(kh * tap_row));
                        continue;
                    };
                    for dh in 0..kh {
                        let Some(ih) = win.input_coord(1, oh, dh, h) else {
                            f(Segment::Zeros(tap_row));
                            continue;
                        };
                        if a > 0 {
                            f(Segment::Zeros(a * c_in));
                        }
                        if b > a {
                            let iw = (w0 + a as isize) as usize;
                            f(Segment::Input(((it * h + ih) * w + iw) * c_in, (b - a) * c_in));
                        }
                        if b < kw {
                            f(Segment::Zeros((kw - b) * c_in));
                        }
                    }
                }
            }
        }
    }
}

impl ConvShapes {
    fn rows(&self) -> usize {
        self.out.iter().product()
    }

    fn patch(&self) -> usize {
        self.kernel.iter().product::<usize>() * self.input[3]
    }
}

/// Row/column strides of a matrix operand.
type Strides = (isize, isize);

/// `c = a * b + beta * c` for an `m x k` by `k x n` product; `c` is row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: Strides, b: &[f64], sb: Strides, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() == m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the strides address at most `m*k`, `k*n` and `m*n` elements of
    // the respective slices, whose lengths are checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0,
            sa.1,
            b.as_ptr(),
            sb.0,
            sb.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn conv3d_forward(input: &Tensor, weight: &Tensor, bias: &Tensor, win: &Window3d) -> Result<Tensor> {
    let s = check_shapes(input, weight, bias, win)?;
    let (m, k, n) = (s.rows(), s.patch(), s.c_out);
    let cols = im2col(input.data(), &s, win);
    let mut out: Vec<f64> = bias.data().iter().copied().cycle().take(m * n).collect();
    gemm(m, k, n, &cols, (k as isize, 1), weight.data(), (n as isize, 1), 1.0, &mut out);
    let [lo, ho, wo] = s.out;
    Tensor::from_vec(&[lo, ho, wo, n], out)
}

#[derive(Debug, Clone)]
pub struct Conv3dGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Exact gradients of [`conv3d_forward`]. The input gradient is skipped when
/// `need_input_grad` is false.
pub fn conv3d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weight: &Tensor,
    win: &Window3d,
    need_input_grad: bool,
) -> Result<Conv3dGrads> {
    let c_out = *weight.shape().last().unwrap_or(&0);
    let zero_bias = Tensor::zeros(&[c_out]);
    let s = check_shapes(input, weight, &zero_bias, win)?;
    let [lo, ho, wo] = s.out;
    if grad_out.shape() != [lo, ho, wo, c_out] {
        return Err(Error::config(format!(
            "conv grad_out shape {:?} does not match output {:?}",
            grad_out.shape(),
            [lo, ho, wo, c_out]
        )));
    }
    let (m, k, n) = (s.rows(), s.patch(), c_out);
    let go = grad_out.data();

    let mut gb = vec![0.0; n];
    for g in go.chunks_exact(n) {
        for (b, &v) in gb.iter_mut().zip(g) {
            *b += v;
        }
    }
    // dW = cols^T * dY
    let cols = im2col(input.data(), &s, win);
    let mut gw = vec![0.0; k * n];
    gemm(k, m, n, &cols, (1, k as isize), go, (n as isize, 1), 0.0, &mut gw);
    // dX = col2im(dY * W^T)
    let gx = if need_input_grad {
        let mut gcols = vec![0.0; m * k];
        gemm(m, n, k, go, (n as isize, 1), weight.data(), (1, n as isize), 0.0, &mut gcols);
        let mut gx = vec![0.0; input.len()];
        col2im_add(&gcols, &s, win, &mut gx);
        Some(Tensor::from_vec(input.shape(), gx)?)
    } else {
        None
    };

    Ok(Conv3dGrads {
        input: gx,
        weight: Tensor::from_vec(weight.shape(), gw)?,
        bias: Tensor::from_vec(&[n], gb)?,
    })
}
