#![allow(dead_code)]

use num::{BigInt, BigRational, Zero};
use scriptor::models::LocalFeatureMap;
use scriptor::Tensor;

pub fn maps(values: &[Vec<f64>], side: usize, depth: usize) -> Vec<LocalFeatureMap> {
    values
        .iter()
        .map(|v| LocalFeatureMap::new(side, depth, Tensor::new(&[side, side, depth], v.clone()).unwrap()).unwrap())
        .collect()
}

/// Brute-force Otsu over all 256 thresholds in exact rational arithmetic.
pub fn otsu_oracle(px: &[u8]) -> u8 {
    let total = BigRational::from_integer(BigInt::from(px.len()));
    let mut best: Option<BigRational> = None;
    let mut best_t = 0u8;
    for t in 0..=255u16 {
        let (lo, hi): (Vec<u8>, Vec<u8>) = px.iter().partition(|&&p| u16::from(p) < t);
        if lo.is_empty() || hi.is_empty() {
            continue;
        }
        let stats = |c: &[u8]| {
            let n = BigRational::from_integer(BigInt::from(c.len()));
            let s = BigRational::from_integer(c.iter().map(|&p| BigInt::from(p)).sum());
            (n.clone() / total.clone(), s / n)
        };
        let (w0, m0) = stats(&lo);
        let (w1, m1) = stats(&hi);
        let d = m0 - m1;
        let var = w0 * w1 * d.clone() * d;
        if var.is_zero() {
            continue;
        }
        if best.as_ref().is_none_or(|b| var > *b) {
            best = Some(var);
            best_t = t as u8;
        }
    }
    best_t
}
