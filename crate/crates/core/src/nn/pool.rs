use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Winning input offset for each output cell; `None` when the maximum came
/// from bottom/right zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolRouting {
    in_shape: [usize; 3],
    argmax: Vec<Option<usize>>,
}

impl PoolRouting {
    /// Flat input offsets `c·H·W + y·W + x` of each window's winner.
    pub fn winners(&self) -> &[Option<usize>] {
        &self.argmax
    }
}

/// Max pooling over `k×k` windows. Extents not divisible by `stride` are
/// zero-padded on the bottom/right up to the next multiple. Ties go to the
/// first position in row-major window order.
pub fn maxpool2d(input: &Tensor, k: usize, stride: usize) -> Result<(Tensor, PoolRouting)> {
    if k == 0 || stride == 0 {
        return Err(Error::param(format!("pool kernel and stride must be positive (k={k}, stride={stride})")));
    }
    let s = input.shape();
    if s.len() != 3 {
        return Err(Error::shape(format!("pool input must be [C, H, W], got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let ph = h.div_ceil(stride) * stride;
    let pw = w.div_ceil(stride) * stride;
    if k > ph || k > pw {
        return Err(Error::param(format!("pool kernel {k} exceeds padded extent {ph}x{pw}")));
    }
    let oh = (ph - k) / stride + 1;
    let ow = (pw - k) / stride + 1;
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut at = None;
                for dy in 0..k {
                    for dx in 0..k {
                        let (y, xx) = (oy * stride + dy, ox * stride + dx);
                        let (v, pos) =
                            if y < h && xx < w { (x[base + y * w + xx], Some(base + y * w + xx)) } else { (0.0, None) };
                        if v > best {
                            best = v;
                            at = pos;
                        }
                    }
                }
                out.push(best);
                argmax.push(at);
            }
        }
    }
    Ok((Tensor::new(&[c, oh, ow], out)?, PoolRouting { in_shape: [c, h, w], argmax }))
}

pub fn maxpool2d_backward(routing: &PoolRouting, d_output: &Tensor) -> Result<Tensor> {
    if d_output.len() != routing.argmax.len() {
        return Err(Error::shape(format!(
            "pool d_output has {} cells, forward produced {}",
            d_output.len(),
            routing.argmax.len()
        )));
    }
    let [c, h, w] = routing.in_shape;
    let mut dx = vec![0.0; c * h * w];
    for (g, at) in d_output.data().iter().zip(&routing.argmax) {
        if let Some(i) = at {
            dx[*i] += g;
        }
    }
    Tensor::new(&[c, h, w], dx)
}
