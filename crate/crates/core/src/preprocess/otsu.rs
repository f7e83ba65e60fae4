use super::GrayImage;
use std::cmp::Ordering;

/// Ink mask: 1 where the page is ink, 0 for background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryImage {
    pub width: usize,
    pub height: usize,
    pub ink: Vec<u8>,
}

impl BinaryImage {
    pub fn ink_count(&self) -> usize {
        self.ink.iter().filter(|&&v| v == 1).count()
    }

    /// Back to a grayscale page: ink black, background white.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.ink.iter().map(|&v| if v == 1 { 0 } else { 255 }).collect(),
        }
    }
}

/// Between-class variance of the split `{< t} | {≥ t}`, up to the constant
/// factor `1/N²`, as an exact fraction `numerator / denominator`.
///
/// With `N0, S0` the count and intensity sum below `t` (and `N1, S1` above),
/// `w0·w1·(μ0 − μ1)² = (S0·N1 − S1·N0)² / (N² · N0 · N1)`.
/// Returns `None` when one class is empty (zero variance).
pub fn between_class_score(n0: u64, s0: u64, n1: u64, s1: u64) -> Option<(u128, u128)> {
    if n0 == 0 || n1 == 0 {
        return None;
    }
    let diff = (s0 as i128 * n1 as i128 - s1 as i128 * n0 as i128).unsigned_abs();
    Some((diff * diff, n0 as u128 * n1 as u128))
}

/// Exact comparison of two non-negative fractions `a/b` and `c/d`.
fn cmp_fraction((a, b): (u128, u128), (c, d): (u128, u128)) -> Ordering {
    let (qa, ra) = (a / b, a % b);
    let (qc, rc) = (c / d, c % d);
    // remainders are below the denominators (< 2^64 each), so the products fit
    qa.cmp(&qc).then_with(|| (ra * d).cmp(&(rc * b)))
}

/// Threshold `t ∈ 0..=255` maximizing between-class variance, with pixels
/// `< t` as ink. Ties (including the all-zero variance of a single-valued
/// image) resolve to the lowest `t`.
pub fn otsu_threshold(img: &GrayImage) -> u8 {
    let mut hist = [0u64; 256];
    for &p in &img.pixels {
        hist[p as usize] += 1;
    }
    let n: u64 = hist.iter().sum();
    let s: u64 = hist.iter().enumerate().map(|(v, &c)| v as u64 * c).sum();
    let (mut n0, mut s0) = (0u64, 0u64);
    let mut best_t = 0u8;
    let mut best: Option<(u128, u128)> = None;
    for t in 0..=255u32 {
        if t > 0 {
            n0 += hist[t as usize - 1];
            s0 += (t as u64 - 1) * hist[t as usize - 1];
        }
        if let Some(score) = between_class_score(n0, s0, n - n0, s - s0) {
            let better = match best {
                None => score.0 > 0,
                Some(b) => cmp_fraction(score, b) == Ordering::Greater,
            };
            if better {
                best = Some(score);
                best_t = t as u8;
            }
        }
    }
    best_t
}

/// Otsu binarization; returns the ink mask and the threshold.
pub fn binarize_otsu(img: &GrayImage) -> (BinaryImage, u8) {
    let t = otsu_threshold(img);
    let ink = img.pixels.iter().map(|&p| u8::from(p < t)).collect();
    (BinaryImage { width: img.width, height: img.height, ink }, t)
}
