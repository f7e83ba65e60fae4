//! Experiment configuration files (TOML, one section per pipeline stage).

use anyhow::{bail, Context, Result};
use scriptor::aggregation::Aggregation;
use scriptor::eval::Fusion;
use scriptor::models::{NetworkSpec, Variant};
use scriptor::preprocess::PatchExtractionConfig;
use scriptor::sweep::{EvalSettings, SweepGrid};
use scriptor::synth::SynthCorpusSpec;
use scriptor::train::TrainingConfig;
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// master seed
    #[serde(default)]
    pub seed: u64,
    /// directory for command outputs, relative to the config file
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub preprocess: PreprocessSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub eval: EvalSection,
    pub sweep: Option<SweepSection>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub writers: usize,
    pub patches_per_writer: usize,
    pub vocabulary: usize,
    /// train / validation / test fractions of the glyph vocabulary
    pub split: [f64; 3],
}

impl Default for CorpusSection {
    fn default() -> Self {
        let d = SynthCorpusSpec::default();
        Self {
            writers: d.num_writers,
            patches_per_writer: d.patches_per_writer,
            vocabulary: d.vocabulary,
            split: d.split,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessSection {
    pub pages: Option<PathBuf>,
    /// sub-images per page
    pub count: usize,
    pub side: usize,
    /// box-filter window of the ink probability map
    pub filter_window: usize,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        let d = PatchExtractionConfig::default();
        Self { pages: None, count: d.count, side: d.side, filter_window: d.filter_window }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub variant: String,
    /// filters per block; empty means the full-depth default
    pub filters: Vec<usize>,
    /// character-level FC width; 0 means the default
    pub fc_width: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self { variant: "sub_region".into(), filters: Vec::new(), fc_width: 0 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    /// `aa`, `ma` or `kma`
    pub aggregation: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub n: usize,
    pub p: usize,
    pub lr: f64,
    pub momentum: f64,
    /// per-tuple gradient norm cap; 0 disables clipping
    pub clip_norm: f64,
    pub patience: usize,
    pub max_epochs: usize,
    /// trials per epoch validation
    pub validation_trials: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let d = TrainingConfig::default();
        Self {
            aggregation: "aa".into(),
            k: 0,
            n: d.tuple_size,
            p: d.iterations_per_epoch,
            lr: d.learning_rate,
            momentum: d.momentum,
            clip_norm: d.clip_norm.unwrap_or(0.0),
            patience: d.patience,
            max_epochs: d.max_epochs,
            validation_trials: d.validation_trials,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub checkpoint: Option<PathBuf>,
    pub trials: usize,
    pub k_list: Vec<usize>,
    /// tuples fused per query
    pub t: usize,
    /// `mean_prob` or `vote`
    pub fusion: String,
    /// tuple sizes to evaluate; empty means the training n
    pub n: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let d = EvalSettings::default();
        Self {
            checkpoint: None,
            trials: d.trials,
            k_list: d.k_list,
            t: d.tuples,
            fusion: d.fusion.to_string(),
            n: Vec::new(),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub n: Vec<usize>,
    #[serde(rename = "N_s")]
    pub patches_per_writer: Vec<usize>,
    pub writers: Vec<usize>,
    /// entries like `aa`, `ma`, `kma:50`
    pub aggregations: Vec<String>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Resolves a configured input path and checks that it exists.
    pub fn existing(&self, p: Option<&PathBuf>, key: &str) -> Result<PathBuf> {
        let Some(p) = p else { bail!("config is missing `{key}`") };
        let full = self.resolve(p);
        if !full.exists() {
            bail!("`{key}` points to {}, which does not exist", full.display());
        }
        Ok(full)
    }

    pub fn out_dir(&self, cli_out: Option<&Path>) -> PathBuf {
        match (cli_out, &self.out) {
            (Some(o), _) => o.to_path_buf(),
            (None, Some(o)) => self.resolve(o),
            (None, None) => self.base_dir.join("out"),
        }
    }

    pub fn corpus_spec(&self) -> SynthCorpusSpec {
        SynthCorpusSpec {
            num_writers: self.corpus.writers,
            patches_per_writer: self.corpus.patches_per_writer,
            vocabulary: self.corpus.vocabulary,
            seed: self.seed,
            split: self.corpus.split,
        }
    }

    pub fn extraction(&self) -> PatchExtractionConfig {
        PatchExtractionConfig {
            count: self.preprocess.count,
            side: self.preprocess.side,
            filter_window: self.preprocess.filter_window,
            seed: self.seed,
        }
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        let variant: Variant = self.network.variant.parse()?;
        let mut spec = match variant {
            Variant::SubRegion => NetworkSpec::sub_region(),
            Variant::CharLevel => NetworkSpec::char_level(),
        };
        if !self.network.filters.is_empty() {
            spec = spec.with_filters(&self.network.filters);
        }
        if self.network.fc_width > 0 {
            spec = spec.with_fc_width(self.network.fc_width);
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn aggregation(&self) -> Result<Aggregation> {
        Ok(Aggregation::from_parts(&self.training.aggregation, self.training.k)?)
    }

    pub fn training(&self) -> Result<TrainingConfig> {
        let t = &self.training;
        let cfg = TrainingConfig {
            spec: self.network_spec()?,
            aggregation: self.aggregation()?,
            tuple_size: t.n,
            iterations_per_epoch: t.p,
            learning_rate: t.lr,
            momentum: t.momentum,
            clip_norm: (t.clip_norm != 0.0).then_some(t.clip_norm),
            patience: t.patience,
            max_epochs: t.max_epochs,
            validation_trials: t.validation_trials,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn eval_settings(&self) -> Result<EvalSettings> {
        let fusion: Fusion = self.eval.fusion.parse()?;
        if self.eval.t == 0 || self.eval.trials == 0 {
            bail!("eval.t and eval.trials must be at least 1");
        }
        if self.eval.k_list.is_empty() || self.eval.k_list.contains(&0) {
            bail!("eval.k_list must hold positive ranks");
        }
        Ok(EvalSettings {
            k_list: self.eval.k_list.clone(),
            trials: self.eval.trials,
            tuples: self.eval.t,
            fusion,
            seed: scriptor::rng::subseed(self.seed, "evaluation", 0),
        })
    }

    pub fn sweep_grid(&self) -> Result<Option<SweepGrid>> {
        let Some(s) = &self.sweep else { return Ok(None) };
        let aggregations =
            s.aggregations.iter().map(|a| a.parse::<Aggregation>()).collect::<scriptor::Result<Vec<_>>>()?;
        Ok(Some(SweepGrid {
            tuple_sizes: s.n.clone(),
            patches_per_writer: s.patches_per_writer.clone(),
            writer_counts: s.writers.clone(),
            aggregations,
        }))
    }
}
