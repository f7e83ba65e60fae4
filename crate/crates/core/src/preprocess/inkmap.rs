use super::BinaryImage;

/// Box-filtered ink density scaled so its maximum is 1 (all zeros on a blank page).
#[derive(Clone, Debug, PartialEq)]
pub struct InkProbabilityMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl InkProbabilityMap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// Mean of the ink mask over a `window × window` box (rows/cols
/// `c − window/2 ..= c − window/2 + window − 1`, zero outside the page),
/// divided by the global maximum.
pub fn ink_probability_map(binary: &BinaryImage, window: usize) -> InkProbabilityMap {
    assert!(window >= 1, "filter window must be positive");
    let (w, h) = (binary.width, binary.height);
    // summed-area table with a zero border row/column
    let mut sat = vec![0u64; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0u64;
        for x in 0..w {
            row += u64::from(binary.ink[y * w + x]);
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    let span = |c: usize, len: usize| {
        let lo = c as isize - (window / 2) as isize;
        let hi = lo + window as isize;
        (lo.clamp(0, len as isize) as usize, hi.clamp(0, len as isize) as usize)
    };
    let area = (window * window) as f64;
    let mut values = vec![0.0; w * h];
    for y in 0..h {
        let (y0, y1) = span(y, h);
        for x in 0..w {
            let (x0, x1) = span(x, w);
            let s = sat[y1 * (w + 1) + x1] + sat[y0 * (w + 1) + x0] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0];
            values[y * w + x] = s as f64 / area;
        }
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        for v in &mut values {
            *v /= max;
        }
    }
    InkProbabilityMap { width: w, height: h, values }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn page(w: usize, h: usize, ink: &[(usize, usize)]) -> BinaryImage {
        let mut v = vec![0u8; w * h];
        for &(x, y) in ink {
            v[y * w + x] = 1;
        }
        BinaryImage { width: w, height: h, ink: v }
    }

    /// Direct box sum, no summed-area table.
    fn brute(b: &BinaryImage, window: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for y in 0..b.height as isize {
            for x in 0..b.width as isize {
                let mut s = 0u32;
                for yy in y - (window / 2) as isize..y - (window / 2) as isize + window as isize {
                    for xx in x - (window / 2) as isize..x - (window / 2) as isize + window as isize {
                        if yy >= 0 && xx >= 0 && (yy as usize) < b.height && (xx as usize) < b.width {
                            s += u32::from(b.ink[yy as usize * b.width + xx as usize]);
                        }
                    }
                }
                out.push(s as f64 / (window * window) as f64);
            }
        }
        out
    }

    #[test]
    fn blank_and_full_pages() {
        let m = ink_probability_map(&page(40, 30, &[]), 32);
        assert!(m.values.iter().all(|&v| v == 0.0));
        let full = BinaryImage { width: 20, height: 20, ink: vec![1; 400] };
        let m = ink_probability_map(&full, 1);
        assert!(m.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn single_ink_pixel() {
        let b = page(80, 80, &[(40, 40)]);
        let raw = brute(&b, 32);
        let m = ink_probability_map(&b, 32);
        let covered = raw.iter().filter(|&&v| v > 0.0).count();
        assert_eq!(covered, 32 * 32);
        for (r, v) in raw.iter().zip(&m.values) {
            if *r > 0.0 {
                assert_eq!(*r, 1.0 / 1024.0);
                assert_eq!(*v, 1.0);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn matches_brute_force_box_sum() {
        let ink: Vec<(usize, usize)> = (0..60).map(|i| ((i * 7) % 37, (i * 11) % 23)).collect();
        let b = page(37, 23, &ink);
        for window in [1, 4, 5, 32] {
            let raw = brute(&b, window);
            let max = raw.iter().copied().fold(0.0, f64::max);
            let m = ink_probability_map(&b, window);
            for (r, v) in raw.iter().zip(&m.values) {
                assert!((r / max - v).abs() < 1e-12);
            }
        }
    }
}
