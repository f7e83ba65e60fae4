use super::LayerGradients;
use crate::error::{Error, Result};
use crate::tensor::{dot4, Tensor};
use rand::Rng;

/// Fully connected layer, weights `[D_out, D_in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let ws = weight.shape();
        if ws.len() != 2 {
            return Err(Error::shape(format!("linear weight must be 2-D, got {ws:?}")));
        }
        bias.expect_shape(&[ws[0]], "linear bias")?;
        Ok(Self { weight, bias })
    }

    pub(crate) fn init<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Self { weight: Tensor::he_normal(&[d_out, d_in], d_in, rng), bias: Tensor::zeros(&[d_out]) }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        if input.len() != self.in_dim() {
            return Err(Error::shape(format!(
                "linear input has {} values, layer expects {}",
                input.len(),
                self.in_dim()
            )));
        }
        let d_in = self.in_dim();
        let w = self.weight.data();
        let out = self
            .bias
            .data()
            .iter()
            .enumerate()
            .map(|(o, b)| b + dot4(&w[o * d_in..(o + 1) * d_in], input.data()))
            .collect();
        Ok(Tensor::from_vec(out))
    }

    pub fn backward(&self, input: &Tensor, d_output: &Tensor) -> Result<LayerGradients> {
        if d_output.len() != self.out_dim() || input.len() != self.in_dim() {
            return Err(Error::shape(format!(
                "linear backward: input {} / d_output {} vs layer {}->{}",
                input.len(),
                d_output.len(),
                self.in_dim(),
                self.out_dim()
            )));
        }
        let d_in = self.in_dim();
        let w = self.weight.data();
        let x = input.data();
        let mut d_input = vec![0.0; d_in];
        let mut d_weight = vec![0.0; w.len()];
        for (o, &g) in d_output.data().iter().enumerate() {
            let row = &w[o * d_in..(o + 1) * d_in];
            for (di, &wi) in d_input.iter_mut().zip(row) {
                *di += wi * g;
            }
            for (dw, &xi) in d_weight[o * d_in..(o + 1) * d_in].iter_mut().zip(x) {
                *dw = g * xi;
            }
        }
        Ok(LayerGradients {
            d_input: Some(Tensor::new(input.shape(), d_input)?),
            d_params: vec![Tensor::new(self.weight.shape(), d_weight)?, Tensor::from_vec(d_output.data().to_vec())],
        })
    }
}

pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    Linear::new(weight.clone(), bias.clone())?.forward(input)
}

pub fn linear_backward(input: &Tensor, weight: &Tensor, bias: &Tensor, d_output: &Tensor) -> Result<LayerGradients> {
    Linear::new(weight.clone(), bias.clone())?.backward(input, d_output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{numeric_gradient, relative_error};
    use crate::rng::rng_for;
    use rand::Rng;

    #[test]
    fn hand_matvec() {
        let w = Tensor::new(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let y = linear(&Tensor::from_vec(vec![1., 1.]), &w, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(y.data(), &[3., 7.]);
    }

    #[test]
    fn identity() {
        let w = Tensor::new(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let x = Tensor::from_vec(vec![0.5, -2.0, 9.0]);
        assert_eq!(linear(&x, &w, &Tensor::zeros(&[3])).unwrap(), x);
    }

    #[test]
    fn dimension_mismatch() {
        let w = Tensor::zeros(&[2, 3]);
        assert!(matches!(linear(&Tensor::zeros(&[2]), &w, &Tensor::zeros(&[2])), Err(Error::Shape(_))));
    }

    #[test]
    fn finite_differences() {
        for seed in 0..5 {
            let mut rng = rng_for(seed, "linear-fd", 0);
            let mut rand_t = |shape: &[usize]| {
                let len = shape.iter().product();
                Tensor::new(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
            };
            let (x, w, b, cot) = (rand_t(&[4]), rand_t(&[3, 4]), rand_t(&[3]), rand_t(&[3]));
            let g = linear_backward(&x, &w, &b, &cot).unwrap();
            let nx = numeric_gradient(|t| linear(t, &w, &b).unwrap().dot(&cot), &x, 1e-5);
            let nw = numeric_gradient(|t| linear(&x, t, &b).unwrap().dot(&cot), &w, 1e-5);
            let nb = numeric_gradient(|t| linear(&x, &w, t).unwrap().dot(&cot), &b, 1e-5);
            assert!(relative_error(g.d_input.as_ref().unwrap(), &nx) < 1e-6);
            assert!(relative_error(&g.d_params[0], &nw) < 1e-6);
            assert!(relative_error(&g.d_params[1], &nb) < 1e-6);
        }
    }
}
