//! Synthetic writers.
//!
//! A writer is a handful of style parameters (slant, pen width, curvature
//! bias, jitter, loop tendency). Glyphs are fixed stroke skeletons shared by
//! every writer; rendering a glyph bends, slants, loops and jitters its
//! skeleton according to the style and strokes it with an anti-aliased pen.

use crate::data::{Dataset, ManifestRecord};
use crate::error::{Error, Result};
use crate::preprocess::{normalize_patch, GrayImage};
use crate::rng::{rng_for, subseed};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::fs;
use std::path::Path;

pub const PATCH_SIDE: usize = 64;

/// Skeletons do not depend on the corpus seed: glyph `g` is the same shape in every corpus.
const GLYPH_KEY: u64 = 0x5eed_91f0;

#[derive(Clone, Debug, PartialEq)]
pub struct WriterStyle {
    /// degrees, −30..30; positive leans right
    pub slant: f64,
    /// pen width in pixels, 1..4
    pub thickness: f64,
    /// −1..1; bows strokes to one side
    pub curvature: f64,
    /// per-instance control point noise in pixels, 0..1.5
    pub jitter: f64,
    /// 0..1; size of the loops drawn at stroke ends
    pub loop_tendency: f64,
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Style of writer `id`: a Halton point (bases 2, 3, 5, 7, 11) rotated by a
/// seed-dependent shift, so consecutive ids spread evenly over the style box.
pub fn make_writer_style(id: u64, corpus_seed: u64) -> WriterStyle {
    let mut rng = rng_for(corpus_seed, "style-shift", 0);
    let mut u = [0.0; 5];
    for (k, base) in [2u64, 3, 5, 7, 11].into_iter().enumerate() {
        let shift: f64 = rng.random();
        u[k] = (radical_inverse(id + 1, base) + shift).fract();
    }
    WriterStyle {
        slant: -30.0 + 60.0 * u[0],
        thickness: 1.0 + 3.0 * u[1],
        curvature: -1.0 + 2.0 * u[2],
        jitter: 1.5 * u[3],
        loop_tendency: u[4],
    }
}

type Pt = (f64, f64);

/// Control polygons (cubic Béziers) of glyph `id` in the unit box.
fn glyph_skeleton(id: u64) -> Vec<[Pt; 4]> {
    let mut rng = rng_for(GLYPH_KEY, "glyph", id);
    let strokes = rng.random_range(3..=4);
    (0..strokes)
        .map(|_| {
            let mut p = [(0.0, 0.0); 4];
            // endpoints at least 0.5 apart so no stroke degenerates to a dot
            loop {
                for q in &mut p {
                    *q = (rng.random_range(0.1..0.9), rng.random_range(0.1..0.9));
                }
                let (dx, dy) = (p[3].0 - p[0].0, p[3].1 - p[0].1);
                if dx * dx + dy * dy >= 0.25 {
                    break p;
                }
            }
        })
        .collect()
}

fn bezier(c: &[Pt; 4], t: f64) -> Pt {
    let s = 1.0 - t;
    let (a, b, cc, d) = (s * s * s, 3.0 * s * s * t, 3.0 * s * t * t, t * t * t);
    (a * c[0].0 + b * c[1].0 + cc * c[2].0 + d * c[3].0, a * c[0].1 + b * c[1].1 + cc * c[2].1 + d * c[3].1)
}

/// Polylines (pixel coordinates) for one rendering of a glyph.
fn styled_polylines(style: &WriterStyle, glyph: u64, instance_seed: u64) -> Vec<Vec<Pt>> {
    let mut rng = rng_for(instance_seed, "instance", 0);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let shear = style.slant.to_radians().tan();
    let scale = 48.0;
    let margin = (PATCH_SIDE as f64 - scale) / 2.0;
    let to_px = |(x, y): Pt| {
        // y grows downwards; slant shears about the vertical center
        let xs = x + shear * (0.5 - y) * 0.8;
        (margin + scale * xs, margin + scale * y)
    };
    let mut lines = Vec::new();
    for ctrl in glyph_skeleton(glyph) {
        let mut c = ctrl;
        let (dx, dy) = (c[3].0 - c[0].0, c[3].1 - c[0].1);
        let len = (dx * dx + dy * dy).sqrt().max(1e-6);
        let (nx, ny) = (-dy / len, dx / len);
        for q in &mut c[1..3] {
            q.0 += nx * style.curvature * 0.25;
            q.1 += ny * style.curvature * 0.25;
        }
        let jitter = style.jitter / scale;
        if jitter > 0.0 {
            for q in &mut c {
                q.0 += jitter * noise.sample(&mut rng);
                q.1 += jitter * noise.sample(&mut rng);
            }
        }
        let mut pts: Vec<Pt> = (0..=24).map(|i| bezier(&c, i as f64 / 24.0)).collect();
        let r = 0.09 * style.loop_tendency;
        if r > 0.01 {
            // closed loop hanging off the stroke end, turning with the curvature sign
            let end = c[3];
            let (tx, ty) = (c[3].0 - c[2].0, c[3].1 - c[2].1);
            let tl = (tx * tx + ty * ty).sqrt().max(1e-6);
            let side = if style.curvature >= 0.0 { 1.0 } else { -1.0 };
            let (ox, oy) = (end.0 - side * ty / tl * r, end.1 + side * tx / tl * r);
            let a0 = (end.1 - oy).atan2(end.0 - ox);
            for i in 1..=16 {
                let a = a0 + side * std::f64::consts::TAU * i as f64 / 16.0;
                pts.push((ox + r * a.cos(), oy + r * a.sin()));
            }
        }
        lines.push(pts.into_iter().map(to_px).collect::<Vec<Pt>>());
    }
    fit_to_patch(&mut lines);
    lines
}

/// Centers the drawing and shrinks it if needed so it lies within a 4 px margin.
fn fit_to_patch(lines: &mut [Vec<Pt>]) {
    let pts = lines.iter().flatten();
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let c = PATCH_SIDE as f64 / 2.0;
    let room = PATCH_SIDE as f64 - 8.0;
    let s = (room / (x1 - x0).max(y1 - y0).max(1e-9)).min(1.0);
    let (mx, my) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    for p in lines.iter_mut().flatten() {
        *p = (c + (p.0 - mx) * s, c + (p.1 - my) * s);
    }
}

fn segment_distance(p: Pt, a: Pt, b: Pt) -> f64 {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let l2 = abx * abx + aby * aby;
    let t = if l2 == 0.0 { 0.0 } else { (((p.0 - a.0) * abx + (p.1 - a.1) * aby) / l2).clamp(0.0, 1.0) };
    let (dx, dy) = (p.0 - a.0 - t * abx, p.1 - a.1 - t * aby);
    (dx * dx + dy * dy).sqrt()
}

/// Renders glyph `glyph` in `style` as a 64×64 page patch.
pub fn render_patch(style: &WriterStyle, glyph: u64, instance_seed: u64) -> GrayImage {
    let side = PATCH_SIDE;
    let radius = style.thickness / 2.0;
    let mut coverage = vec![0.0f64; side * side];
    for line in styled_polylines(style, glyph, instance_seed) {
        for seg in line.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let reach = radius + 1.0;
            let x0 = (a.0.min(b.0) - reach).floor().max(0.0) as usize;
            let x1 = ((a.0.max(b.0) + reach).ceil() as usize).min(side - 1);
            let y0 = (a.1.min(b.1) - reach).floor().max(0.0) as usize;
            let y1 = ((a.1.max(b.1) + reach).ceil() as usize).min(side - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let d = segment_distance((x as f64 + 0.5, y as f64 + 0.5), a, b);
                    let c = (radius + 0.5 - d).clamp(0.0, 1.0);
                    let slot = &mut coverage[y * side + x];
                    if c > *slot {
                        *slot = c;
                    }
                }
            }
        }
    }
    GrayImage {
        width: side,
        height: side,
        pixels: coverage.into_iter().map(|c| (255.0 * (1.0 - c)).round() as u8).collect(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpusSpec {
    pub num_writers: usize,
    pub patches_per_writer: usize,
    pub vocabulary: usize,
    pub seed: u64,
    /// train / validation / test fractions of the glyph vocabulary
    pub split: [f64; 3],
}

impl Default for SynthCorpusSpec {
    fn default() -> Self {
        Self { num_writers: 10, patches_per_writer: 100, vocabulary: 100, seed: 0, split: [0.55, 0.15, 0.30] }
    }
}

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

impl SynthCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_writers == 0 || self.patches_per_writer == 0 || self.vocabulary == 0 {
            return Err(Error::param("writers, patches per writer and vocabulary must be positive"));
        }
        if self.split.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::param(format!("split fractions {:?} must lie in [0,1] and sum to 1", self.split)));
        }
        Ok(())
    }

    /// Split index (0 train, 1 val, 2 test) of glyph `g`.
    pub fn split_of(&self, glyph: usize) -> usize {
        let v = self.vocabulary as f64;
        let train_end = (self.split[0] * v).round() as usize;
        let val_end = ((self.split[0] + self.split[1]) * v).round() as usize;
        if glyph < train_end {
            0
        } else if glyph < val_end {
            1
        } else {
            2
        }
    }

    pub fn writer_name(w: usize) -> String {
        format!("w{w:03}")
    }
}

/// One rendered patch with its provenance.
#[derive(Clone, Debug)]
pub struct SynthPatch {
    pub writer: usize,
    pub glyph: usize,
    pub instance: usize,
    pub image: GrayImage,
}

/// Renders every patch, grouped by split.
pub fn render_corpus(spec: &SynthCorpusSpec) -> Result<[Vec<SynthPatch>; 3]> {
    spec.validate()?;
    let mut splits: [Vec<SynthPatch>; 3] = Default::default();
    for w in 0..spec.num_writers {
        let style = make_writer_style(w as u64, spec.seed);
        for j in 0..spec.patches_per_writer {
            let glyph = j % spec.vocabulary;
            let instance = j / spec.vocabulary;
            let seed = subseed(spec.seed, "patch", (w * spec.patches_per_writer + j) as u64);
            splits[spec.split_of(glyph)].push(SynthPatch {
                writer: w,
                glyph,
                instance,
                image: render_patch(&style, glyph as u64, seed),
            });
        }
    }
    Ok(splits)
}

/// In-memory train / validation / test datasets.
pub fn synth_datasets(spec: &SynthCorpusSpec) -> Result<[Dataset; 3]> {
    let splits = render_corpus(spec)?;
    let writers: Vec<String> = (0..spec.num_writers).map(SynthCorpusSpec::writer_name).collect();
    let build = |patches: &[SynthPatch]| -> Result<Dataset> {
        let mut samples = vec![Vec::new(); spec.num_writers];
        for p in patches {
            samples[p.writer].push(normalize_patch(&p.image)?);
        }
        Dataset::new(writers.clone(), samples)
    };
    Ok([build(&splits[0])?, build(&splits[1])?, build(&splits[2])?])
}

/// Writes `<dest>/<split>/<page_id>_patch<idx>.pgm` plus a `manifest.tsv` per split.
pub fn generate_corpus(spec: &SynthCorpusSpec, dest: &Path) -> Result<[usize; 3]> {
    let splits = render_corpus(spec)?;
    let mut counts = [0usize; 3];
    for (s, patches) in splits.iter().enumerate() {
        let dir = dest.join(SPLIT_NAMES[s]);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut records = Vec::with_capacity(patches.len());
        for p in patches {
            let page_id = format!("{}_g{:03}", SynthCorpusSpec::writer_name(p.writer), p.glyph);
            let file = format!("{page_id}_patch{}.pgm", p.instance);
            p.image.save_pgm(&dir.join(&file))?;
            records.push(ManifestRecord {
                file: file.into(),
                center_x: PATCH_SIDE / 2,
                center_y: PATCH_SIDE / 2,
                writer: SynthCorpusSpec::writer_name(p.writer),
            });
        }
        crate::data::write_manifest(&dir.join(crate::data::MANIFEST_NAME), &records)?;
        counts[s] = patches.len();
    }
    Ok(counts)
}
