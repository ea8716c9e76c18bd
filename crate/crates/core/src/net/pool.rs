use crate::error::{Error, Result};
use crate::net::conv::Window3d;
use crate::tensor::Tensor;

/// Max-pooled output plus, for every output element, the flat input index
/// it was taken from.
#[derive(Debug, Clone)]
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

/// Channel-wise 3-D max pooling over `[L, H, W, C]`. Padded taps are skipped;
/// ties resolve to the first element in (t, h, w) scan order.
pub fn maxpool3d_forward(input: &Tensor, win: &Window3d) -> Result<Pooled> {
    let [l, h, w, c] = match *input.shape() {
        [a, b, cc, d] => [a, b, cc, d],
        ref s => return Err(Error::config(format!("pool input must be rank 4, got {s:?}"))),
    };
    if (0..3).any(|a| win.padding[a] >= win.kernel[a]) {
        return Err(Error::config("pool padding must be smaller than the kernel"));
    }
    let [lo, ho, wo] = win.output_dims([l, h, w]).ok_or_else(|| {
        Error::config(format!(
            "pool kernel {:?} larger than input {:?}",
            win.kernel,
            [l, h, w]
        ))
    })?;
    let [kt, kh, kw] = win.kernel;
    let x = input.data();
    let n_out = lo * ho * wo * c;
    let mut out = vec![f64::NEG_INFINITY; n_out];
    let mut argmax = vec![usize::MAX; n_out];

    for ot in 0..lo {
        for oh in 0..ho {
            for ow in 0..wo {
                let o_base = ((ot * ho + oh) * wo + ow) * c;
                for dt in 0..kt {
                    let Some(it) = win.input_coord(0, ot, dt, l) else { continue };
                    for dh in 0..kh {
                        let Some(ih) = win.input_coord(1, oh, dh, h) else { continue };
                        for dw in 0..kw {
                            let Some(iw) = win.input_coord(2, ow, dw, w) else { continue };
                            let x_base = ((it * h + ih) * w + iw) * c;
                            for ch in 0..c {
                                let v = x[x_base + ch];
                                if argmax[o_base + ch] == usize::MAX || v > out[o_base + ch] {
                                    out[o_base + ch] = v;
                                    argmax[o_base + ch] = x_base + ch;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Pooled {
        output: Tensor::from_vec(&[lo, ho, wo, c], out)?,
        argmax,
    })
}

/// Routes each output gradient to the input element recorded in `argmax`.
pub fn maxpool3d_backward(grad_out: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Tensor {
    debug_assert_eq!(grad_out.len(), argmax.len());
    let mut grad = Tensor::zeros(input_shape);
    let g = grad.data_mut();
    for (&src, &gv) in argmax.iter().zip(grad_out.data()) {
        g[src] += gv;
    }
    grad
}
