use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        *v = v.max(0.0);
    }
    out
}

/// Passes `d_output` where the forward input was strictly positive; the
/// subgradient at zero is zero.
pub fn relu_backward(input: &Tensor, d_output: &Tensor) -> Result<Tensor> {
    if input.shape() != d_output.shape() {
        return Err(Error::shape(format!(
            "relu d_output {:?} does not match input {:?}",
            d_output.shape(),
            input.shape()
        )));
    }
    let data = input.data().iter().zip(d_output.data()).map(|(&x, &g)| if x > 0.0 { g } else { 0.0 }).collect();
    Tensor::new(input.shape(), data)
}

/// In-place ReLU on a slice; used on the hot path.
pub(crate) fn relu_inplace(x: &mut [f64]) {
    for v in x {
        *v = v.max(0.0);
    }
}

/// In-place mask of `grad` by the sign of the activated output.
pub(crate) fn relu_mask_inplace(activated: &[f64], grad: &mut [f64]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}
