use crate::tensor::Tensor;

/// Central-difference gradient of `f` at `point`, one coordinate at a time.
pub fn numeric_gradient<F>(mut f: F, point: &Tensor, h: f64) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = point.clone();
    let mut grad = Tensor::zeros(point.shape());
    for i in 0..point.len() {
        let x0 = point.data()[i];
        probe.data_mut()[i] = x0 + h;
        let plus = f(&probe);
        probe.data_mut()[i] = x0 - h;
        let minus = f(&probe);
        probe.data_mut()[i] = x0;
        grad.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "relative_error on mismatched shapes");
    let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
