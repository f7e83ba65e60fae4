//! Single-tuple top-k evaluation with repeated trials, and multi-tuple fusion.

use crate::aggregation::aggregate_values;
use crate::checkpoint::WriterModel;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::models::{argmax, classify, rank_of, LocalFeatureMap};
use crate::nn::softmax;
use crate::rng::rng_for;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use std::collections::BTreeMap;

/// Anything that can score an n-tuple of one writer's patches against all writers.
pub trait TupleScorer: Sync {
    fn num_writers(&self) -> usize;
    /// Writer logits for the given patches of `writer`.
    fn score(&self, writer: usize, patches: &[usize]) -> Result<Tensor>;
}

/// How the `t` tuples of a multi-tuple query are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Fusion {
    #[default]
    MeanProbability,
    Vote,
}

impl std::str::FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_prob" => Ok(Fusion::MeanProbability),
            "vote" => Ok(Fusion::Vote),
            _ => Err(Error::param(format!("unknown fusion `{s}` (expected mean_prob or vote)"))),
        }
    }
}

impl std::fmt::Display for Fusion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Fusion::MeanProbability => "mean_prob",
            Fusion::Vote => "vote",
        })
    }
}

/// Top-k accuracies (percent) over repeated trials.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub k_list: Vec<usize>,
    /// `[trial][k index]`
    pub per_trial: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// sample variance across trials (0 for a single trial)
    pub variance: Vec<f64>,
    /// `[trial][writer]` → predicted writer
    pub predictions: Vec<Vec<usize>>,
}

impl EvalReport {
    fn from_ranks(k_list: &[usize], ranks: &[Vec<usize>], predictions: Vec<Vec<usize>>) -> Self {
        let per_trial: Vec<Vec<f64>> = ranks
            .iter()
            .map(|r| {
                k_list.iter().map(|&k| 100.0 * r.iter().filter(|&&x| x <= k).count() as f64 / r.len() as f64).collect()
            })
            .collect();
        let trials = per_trial.len() as f64;
        let mean: Vec<f64> = (0..k_list.len()).map(|i| per_trial.iter().map(|t| t[i]).sum::<f64>() / trials).collect();
        let variance = (0..k_list.len())
            .map(|i| {
                if per_trial.len() < 2 {
                    return 0.0;
                }
                let ss: f64 = per_trial.iter().map(|t| (t[i] - mean[i]).powi(2)).sum();
                ss / (trials - 1.0)
            })
            .collect();
        Self { k_list: k_list.to_vec(), per_trial, mean, variance, predictions }
    }

    /// Mean top-k accuracy, if `k` was requested.
    pub fn mean_top(&self, k: usize) -> Option<f64> {
        self.k_list.iter().position(|&x| x == k).map(|i| self.mean[i])
    }

    pub fn trials(&self) -> usize {
        self.per_trial.len()
    }
}

/// Draws `t` disjoint n-tuples for every writer from one seeded permutation per
/// (trial, writer). The first tuple is the single-tuple draw for that trial.
pub fn draw_tuples(pool_sizes: &[usize], n: usize, t: usize, seed: u64, trial: usize) -> Result<Vec<Vec<Vec<usize>>>> {
    if n == 0 || t == 0 {
        return Err(Error::param(format!("tuple size and tuple count must be positive (n={n}, t={t})")));
    }
    pool_sizes
        .iter()
        .enumerate()
        .map(|(w, &size)| {
            if size < n * t {
                return Err(Error::data(format!(
                    "writer {w} has {size} patches, needs {} for {t} disjoint {n}-tuples",
                    n * t
                )));
            }
            let mut perm: Vec<usize> = (0..size).collect();
            let index = (trial * pool_sizes.len() + w) as u64;
            perm.shuffle(&mut rng_for(seed, "eval-trial", index));
            Ok(perm[..n * t].chunks(n).map(<[usize]>::to_vec).collect())
        })
        .collect()
}

fn validate_k(k_list: &[usize], trials: usize) -> Result<()> {
    if k_list.is_empty() || k_list.contains(&0) {
        return Err(Error::param(format!("k list must be non-empty and positive, got {k_list:?}")));
    }
    if trials == 0 {
        return Err(Error::param("at least one trial is required"));
    }
    Ok(())
}

/// Top-k evaluation of a scorer: one n-tuple per writer per trial.
pub fn evaluate_scorer(
    scorer: &dyn TupleScorer,
    pool_sizes: &[usize],
    n: usize,
    k_list: &[usize],
    trials: usize,
    seed: u64,
    exec: Exec,
) -> Result<EvalReport> {
    evaluate_fused(scorer, pool_sizes, n, 1, Fusion::MeanProbability, k_list, trials, seed, exec)
}

/// Multi-tuple evaluation: `t` disjoint n-tuples per writer, fused before ranking.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_fused(
    scorer: &dyn TupleScorer,
    pool_sizes: &[usize],
    n: usize,
    t: usize,
    fusion: Fusion,
    k_list: &[usize],
    trials: usize,
    seed: u64,
    exec: Exec,
) -> Result<EvalReport> {
    validate_k(k_list, trials)?;
    if pool_sizes.len() != scorer.num_writers() {
        return Err(Error::data(format!(
            "evaluation set has {} writers, model knows {}",
            pool_sizes.len(),
            scorer.num_writers()
        )));
    }
    let outcomes = exec.map_range(trials, |trial| -> Result<(Vec<usize>, Vec<usize>)> {
        let draws = draw_tuples(pool_sizes, n, t, seed, trial)?;
        let mut ranks = Vec::with_capacity(draws.len());
        let mut preds = Vec::with_capacity(draws.len());
        for (w, tuples) in draws.iter().enumerate() {
            let fused =
                if t == 1 { scorer.score(w, &tuples[0])?.into_data() } else { fuse(scorer, w, tuples, fusion)? };
            ranks.push(rank_of(&fused, w));
            preds.push(argmax(&fused));
        }
        Ok((ranks, preds))
    });
    let mut ranks = Vec::with_capacity(trials);
    let mut preds = Vec::with_capacity(trials);
    for o in outcomes {
        let (r, p) = o?;
        ranks.push(r);
        preds.push(p);
    }
    Ok(EvalReport::from_ranks(k_list, &ranks, preds))
}

fn fuse(scorer: &dyn TupleScorer, writer: usize, tuples: &[Vec<usize>], fusion: Fusion) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; scorer.num_writers()];
    for tuple in tuples {
        let logits = scorer.score(writer, tuple)?;
        match fusion {
            Fusion::MeanProbability => {
                for (a, p) in acc.iter_mut().zip(softmax(&logits).data()) {
                    *a += p;
                }
            }
            Fusion::Vote => acc[argmax(logits.data())] += 1.0,
        }
    }
    if fusion == Fusion::MeanProbability {
        let t = tuples.len() as f64;
        acc.iter_mut().for_each(|a| *a /= t);
    }
    Ok(acc)
}

/// Softmax probabilities averaged over tuples, then argmax.
pub fn fuse_probabilities(probabilities: &[Tensor]) -> Result<(Tensor, usize)> {
    let first = probabilities.first().ok_or_else(|| Error::param("no probability vectors to fuse"))?;
    let mut acc = vec![0.0; first.len()];
    for p in probabilities {
        if p.len() != acc.len() {
            return Err(Error::shape("probability vectors differ in length"));
        }
        acc.iter_mut().zip(p.data()).for_each(|(a, v)| *a += v);
    }
    let t = probabilities.len() as f64;
    acc.iter_mut().for_each(|a| *a /= t);
    let pred = argmax(&acc);
    Ok((Tensor::from_vec(acc), pred))
}

/// Cached local feature maps for a model over a set of patches.
///
/// The extractor only runs on patches that some trial actually draws.
pub struct FeatureBank<'a> {
    model: &'a WriterModel,
    maps: BTreeMap<(usize, usize), LocalFeatureMap>,
}

impl<'a> FeatureBank<'a> {
    pub fn build(
        model: &'a WriterModel,
        data: &Dataset,
        needed: impl IntoIterator<Item = (usize, usize)>,
        exec: Exec,
    ) -> Result<Self> {
        let keys: Vec<(usize, usize)> =
            needed.into_iter().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        let maps = exec.map(&keys, |&(w, p)| model.network.features(&data.samples[w][p], Exec::Sequential));
        let maps = keys.into_iter().zip(maps).map(|(k, m)| m.map(|m| (k, m))).collect::<Result<_>>()?;
        Ok(Self { model, maps })
    }
}

impl TupleScorer for FeatureBank<'_> {
    fn num_writers(&self) -> usize {
        self.model.head.num_writers()
    }

    fn score(&self, writer: usize, patches: &[usize]) -> Result<Tensor> {
        let locals: Vec<LocalFeatureMap> = patches
            .iter()
            .map(|&p| {
                self.maps
                    .get(&(writer, p))
                    .cloned()
                    .ok_or_else(|| Error::data(format!("patch {p} of writer {writer} not in feature bank")))
            })
            .collect::<Result<_>>()?;
        let global = aggregate_values(&locals, self.model.aggregation)?;
        classify(&global, &self.model.head)
    }
}

fn bank_for<'a>(
    model: &'a WriterModel,
    data: &Dataset,
    n: usize,
    t: usize,
    trials: usize,
    seed: u64,
    exec: Exec,
) -> Result<FeatureBank<'a>> {
    if data.num_writers() != model.head.num_writers() {
        return Err(Error::data(format!(
            "evaluation set has {} writers, model knows {}",
            data.num_writers(),
            model.head.num_writers()
        )));
    }
    let sizes: Vec<usize> = data.samples.iter().map(Vec::len).collect();
    let mut needed = Vec::new();
    for trial in 0..trials {
        for (w, tuples) in draw_tuples(&sizes, n, t, seed, trial)?.into_iter().enumerate() {
            needed.extend(tuples.into_iter().flatten().map(|p| (w, p)));
        }
    }
    FeatureBank::build(model, data, needed, exec)
}

/// Single-tuple top-k accuracy of a trained model on `data` (writers aligned with the model).
pub fn evaluate_topk(
    model: &WriterModel,
    data: &Dataset,
    n: usize,
    k_list: &[usize],
    trials: usize,
    seed: u64,
    exec: Exec,
) -> Result<EvalReport> {
    validate_k(k_list, trials)?;
    let bank = bank_for(model, data, n, 1, trials, seed, exec)?;
    let sizes: Vec<usize> = data.samples.iter().map(Vec::len).collect();
    evaluate_scorer(&bank, &sizes, n, k_list, trials, seed, exec)
}

/// Fused `t`-tuple accuracy of a trained model; per-writer predictions are in the report.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_multi_tuple(
    model: &WriterModel,
    data: &Dataset,
    n: usize,
    t: usize,
    fusion: Fusion,
    k_list: &[usize],
    trials: usize,
    seed: u64,
    exec: Exec,
) -> Result<EvalReport> {
    validate_k(k_list, trials)?;
    let bank = bank_for(model, data, n, t, trials, seed, exec)?;
    let sizes: Vec<usize> = data.samples.iter().map(Vec::len).collect();
    evaluate_fused(&bank, &sizes, n, t, fusion, k_list, trials, seed, exec)
}
