use super::{binarize_otsu, ink_probability_map, GrayImage, InkProbabilityMap};
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::tensor::Tensor;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchExtractionConfig {
    /// patches per page
    pub count: usize,
    /// patch side in pixels
    pub side: usize,
    /// box-filter window for the ink-probability map
    pub filter_window: usize,
    pub seed: u64,
}

impl Default for PatchExtractionConfig {
    fn default() -> Self {
        Self { count: 500, side: 64, filter_window: 32, seed: 0 }
    }
}

/// A patch cut from a page, with the page coordinates of its center.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PagePatch {
    pub center_x: usize,
    pub center_y: usize,
    pub image: GrayImage,
}

/// Samples `cfg.count` patches with replacement, choosing centers with
/// probability proportional to the map. Only centers whose `side × side`
/// box (top-left at `center − side/2`) fits inside the page are eligible.
pub fn sample_patches(img: &GrayImage, map: &InkProbabilityMap, cfg: &PatchExtractionConfig) -> Result<Vec<PagePatch>> {
    if (map.width, map.height) != (img.width, img.height) {
        return Err(Error::shape(format!(
            "probability map {}x{} does not match page {}x{}",
            map.width, map.height, img.width, img.height
        )));
    }
    let k = cfg.side;
    if k == 0 || k > img.width.min(img.height) {
        return Err(Error::param(format!("patch side {k} does not fit a {}x{} page", img.width, img.height)));
    }
    if cfg.count == 0 {
        return Err(Error::param("patch count must be at least 1"));
    }
    let half = k / 2;
    let (nx, ny) = (img.width - k + 1, img.height - k + 1);
    let weights: Vec<f64> =
        (0..ny).flat_map(|y| (0..nx).map(move |x| (x + half, y + half))).map(|(cx, cy)| map.get(cx, cy)).collect();
    let dist = WeightedIndex::new(&weights).map_err(|_| Error::data("no ink found"))?;
    let mut rng = rng_for(cfg.seed, "patch-centers", 0);
    (0..cfg.count)
        .map(|_| {
            let i = dist.sample(&mut rng);
            let (x0, y0) = (i % nx, i / nx);
            Ok(PagePatch { center_x: x0 + half, center_y: y0 + half, image: img.crop(x0, y0, k, k)? })
        })
        .collect()
}

/// Otsu → ink-probability map → patches cut from the binarized page.
pub fn extract_page_patches(page: &GrayImage, cfg: &PatchExtractionConfig) -> Result<Vec<PagePatch>> {
    let (binary, _) = binarize_otsu(page);
    let map = ink_probability_map(&binary, cfg.filter_window);
    sample_patches(&binary.to_gray(), &map, cfg)
}

/// `[1, 64, 64]` tensor with ink ≈ 1 and paper ≈ 0: `(255 − v) / 255`.
pub fn normalize_patch(patch: &GrayImage) -> Result<Tensor> {
    if (patch.width, patch.height) != (64, 64) {
        return Err(Error::shape(format!(
            "patch must be 64x64, got {}x{} (resize isolated characters first)",
            patch.width, patch.height
        )));
    }
    Tensor::new(&[1, 64, 64], patch.pixels.iter().map(|&v| f64::from(255 - v) / 255.0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_from(w: usize, h: usize, values: Vec<f64>) -> InkProbabilityMap {
        InkProbabilityMap { width: w, height: h, values }
    }

    #[test]
    fn single_valid_center() {
        let img = GrayImage::filled(10, 10, 255);
        let mut v = vec![0.0; 100];
        v[5 * 10 + 5] = 1.0;
        // an ineligible center (patch would leave the page) carries mass too
        v[0] = 1.0;
        let cfg = PatchExtractionConfig { count: 20, side: 6, filter_window: 3, seed: 1 };
        let patches = sample_patches(&img, &map_from(10, 10, v), &cfg).unwrap();
        assert_eq!(patches.len(), 20);
        assert!(patches.iter().all(|p| (p.center_x, p.center_y) == (5, 5)));
    }

    #[test]
    fn empty_map_is_an_error() {
        let img = GrayImage::filled(10, 10, 255);
        let cfg = PatchExtractionConfig { count: 1, side: 4, filter_window: 3, seed: 1 };
        let err = sample_patches(&img, &map_from(10, 10, vec![0.0; 100]), &cfg).unwrap_err();
        assert!(matches!(err, Error::Data(m) if m.contains("no ink")));
    }

    #[test]
    fn frequencies_follow_the_map() {
        // 4 eligible centers on a 5x5 page with 4x4 patches
        let img = GrayImage::filled(5, 5, 255);
        let mut v = vec![0.0; 25];
        let probs = [(2, 2, 0.1), (3, 2, 0.2), (2, 3, 0.3), (3, 3, 0.4)];
        for &(x, y, p) in &probs {
            v[y * 5 + x] = p;
        }
        let cfg = PatchExtractionConfig { count: 100_000, side: 4, filter_window: 1, seed: 5 };
        let patches = sample_patches(&img, &map_from(5, 5, v), &cfg).unwrap();
        let mut tv = 0.0;
        for &(x, y, p) in &probs {
            let f = patches.iter().filter(|q| (q.center_x, q.center_y) == (x, y)).count() as f64 / 1e5;
            tv += (f - p).abs();
        }
        assert!(tv / 2.0 < 0.02, "total variation {tv}");
    }

    #[test]
    fn patches_stay_inside_and_are_seeded() {
        let mut img = GrayImage::filled(120, 90, 255);
        for x in 10..110 {
            img.set(x, 45, 0);
            img.set(x, 46, 0);
        }
        let cfg = PatchExtractionConfig { count: 50, side: 64, filter_window: 32, seed: 3 };
        let a = extract_page_patches(&img, &cfg).unwrap();
        assert_eq!(a, extract_page_patches(&img, &cfg).unwrap());
        for p in &a {
            assert!(p.center_x >= 32 && p.center_x + 32 <= 120);
            assert!(p.center_y >= 32 && p.center_y + 32 <= 90);
            assert_eq!((p.image.width, p.image.height), (64, 64));
        }
    }

    #[test]
    fn normalization() {
        assert!(normalize_patch(&GrayImage::filled(64, 64, 255)).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(normalize_patch(&GrayImage::filled(64, 64, 0)).unwrap().data().iter().all(|&v| v == 1.0));
        let t = normalize_patch(&GrayImage::filled(64, 64, 127)).unwrap();
        assert!((t.data()[0] - 0.50196).abs() < 1e-5);
        assert!(matches!(normalize_patch(&GrayImage::filled(32, 64, 0)), Err(Error::Shape(_))));
        let resized = GrayImage::filled(40, 50, 0).resize(64);
        assert_eq!((resized.width, resized.height), (64, 64));
    }
}
