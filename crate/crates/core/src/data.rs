//! Labeled patch collections and the tab-separated patch manifest.
//!
//! A manifest has one record per line and no header:
//! `<patch file>\t<center x>\t<center y>\t<writer id>`, where the patch file
//! is relative to the manifest's directory.

use crate::error::{Error, Result};
use crate::preprocess::{normalize_patch, GrayImage};
use crate::rng::rng_for;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

pub const MANIFEST_NAME: &str = "manifest.tsv";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub file: PathBuf,
    pub center_x: usize,
    pub center_y: usize,
    pub writer: String,
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        if r.writer.contains(['\t', '\n']) {
            return Err(Error::Format(format!("writer id `{}` contains a tab or newline", r.writer)));
        }
        out.push_str(&format!("{}\t{}\t{}\t{}\n", r.file.display(), r.center_x, r.center_y, r.writer));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if row.len() != 4 {
            return Err(Error::Format(format!(
                "{}:{}: expected 4 tab-separated fields, got {}",
                path.display(),
                line + 1,
                row.len()
            )));
        }
        let num = |i: usize| -> Result<usize> {
            row[i]
                .parse()
                .map_err(|_| Error::Format(format!("{}:{}: bad coordinate `{}`", path.display(), line + 1, &row[i])))
        };
        records.push(ManifestRecord {
            file: PathBuf::from(&row[0]),
            center_x: num(1)?,
            center_y: num(2)?,
            writer: row[3].to_string(),
        });
    }
    Ok(records)
}

/// Every `manifest.tsv` at or below `root`, in sorted path order.
pub fn find_manifests(root: &Path) -> Result<Vec<PathBuf>> {
    if root.is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == MANIFEST_NAME) {
                found.push(path);
            }
        }
    }
    found.sort();
    Ok(found)
}

/// Patches grouped by writer, ready for the network (`[1, 64, 64]` each).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub writers: Vec<String>,
    pub samples: Vec<Vec<Tensor>>,
}

impl Dataset {
    pub fn new(writers: Vec<String>, samples: Vec<Vec<Tensor>>) -> Result<Self> {
        if writers.len() != samples.len() {
            return Err(Error::data(format!("{} writer names for {} sample groups", writers.len(), samples.len())));
        }
        Ok(Self { writers, samples })
    }

    /// Loads every manifest under `root` (a manifest file or a directory).
    /// Writers are ordered by id; patches keep manifest order.
    pub fn load(root: &Path) -> Result<Self> {
        let manifests = find_manifests(root)?;
        if manifests.is_empty() {
            return Err(Error::data(format!("no {MANIFEST_NAME} found under {}", root.display())));
        }
        let mut by_writer: BTreeMap<String, Vec<Tensor>> = BTreeMap::new();
        for m in manifests {
            let base = m.parent().unwrap_or(Path::new("."));
            for r in read_manifest(&m)? {
                let img = GrayImage::load(&base.join(&r.file))?.resize(64);
                by_writer.entry(r.writer).or_default().push(normalize_patch(&img)?);
            }
        }
        let (writers, samples) = by_writer.into_iter().unzip();
        Self::new(writers, samples)
    }

    pub fn num_writers(&self) -> usize {
        self.writers.len()
    }

    pub fn num_patches(&self) -> usize {
        self.samples.iter().map(Vec::len).sum()
    }

    pub fn min_patches(&self) -> usize {
        self.samples.iter().map(Vec::len).min().unwrap_or(0)
    }

    /// Local patch ids `0..len` per writer.
    pub fn patch_ids(&self) -> Vec<Vec<usize>> {
        self.samples.iter().map(|s| (0..s.len()).collect()).collect()
    }

    /// Fails with a data error naming the first writer holding fewer than `n` patches.
    pub fn require_patches(&self, n: usize, what: &str) -> Result<()> {
        for (w, s) in self.writers.iter().zip(&self.samples) {
            if s.len() < n {
                return Err(Error::data(format!("writer {w} has {} {what} patches, needs at least {n}", s.len())));
            }
        }
        Ok(())
    }

    pub fn select_writers(&self, idx: &[usize]) -> Self {
        Self {
            writers: idx.iter().map(|&i| self.writers[i].clone()).collect(),
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// Reorders to the given writer list; every listed writer must be present.
    pub fn align_to(&self, writers: &[String]) -> Result<Self> {
        let idx = writers
            .iter()
            .map(|name| {
                self.writers
                    .iter()
                    .position(|w| w == name)
                    .ok_or_else(|| Error::data(format!("writer {name} missing from dataset")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select_writers(&idx))
    }

    /// Keeps a seeded random `per_writer` patches of each writer.
    pub fn subsample(&self, per_writer: usize, seed: u64) -> Result<Self> {
        self.require_patches(per_writer, "available")?;
        let samples = self
            .samples
            .iter()
            .enumerate()
            .map(|(w, s)| {
                let mut ids: Vec<usize> = (0..s.len()).collect();
                ids.shuffle(&mut rng_for(seed, "subsample", w as u64));
                ids[..per_writer].iter().map(|&i| s[i].clone()).collect()
            })
            .collect();
        Self::new(self.writers.clone(), samples)
    }
}
