use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Momentum buffers plus hyperparameters for SGD.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<Tensor>,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl OptimizerState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>, learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::param(format!("learning rate must be positive, got {learning_rate}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::param(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(Self { velocity: params.into_iter().map(|p| Tensor::zeros(p.shape())).collect(), learning_rate, momentum })
    }
}

/// `v ← momentum·v − lr·g; w ← w + v` for every parameter.
pub fn sgd_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut OptimizerState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::shape(format!(
            "sgd: {} params, {} grads, {} velocity buffers",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for ((p, g), v) in params.iter().zip(grads).zip(&state.velocity) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::shape(format!(
                "sgd: param {:?}, grad {:?}, velocity {:?}",
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
    }
    let (lr, mu) = (state.learning_rate, state.momentum);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = mu * *vi - lr * gi;
            *w += *vi;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(w: &mut Tensor, g: f64, state: &mut OptimizerState) {
        let grads = [Tensor::full(w.shape(), g)];
        sgd_step(&mut [w], &grads, state).unwrap();
    }

    #[test]
    fn plain_sgd() {
        let mut w = Tensor::from_vec(vec![1.0]);
        let mut st = OptimizerState::new([&w], 0.1, 0.0).unwrap();
        step(&mut w, 2.0, &mut st);
        assert!((w.data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut w = Tensor::from_vec(vec![0.3, -4.0]);
        let before = w.clone();
        let mut st = OptimizerState::new([&w], 0.1, 0.9).unwrap();
        step(&mut w, 0.0, &mut st);
        assert_eq!(w, before);
    }

    #[test]
    fn momentum_iteration() {
        let mut w = Tensor::from_vec(vec![0.0]);
        let mut st = OptimizerState::new([&w], 0.1, 0.9).unwrap();
        step(&mut w, 1.0, &mut st);
        assert!((w.data()[0] + 0.1).abs() < 1e-15);
        step(&mut w, 1.0, &mut st);
        assert!((w.data()[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let w = Tensor::zeros(&[1]);
        assert!(OptimizerState::new([&w], 0.0, 0.5).is_err());
        assert!(OptimizerState::new([&w], 0.1, 1.0).is_err());
    }
}
