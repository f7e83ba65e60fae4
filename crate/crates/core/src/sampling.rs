//! Random n-tuple sampling for training.
//!
//! Every iteration permutes each writer's `N_s` patches and cuts the
//! permutation into `m = ⌊N_s / n⌋` tuples; the leftover `N_s mod n` patches
//! sit out that iteration. An epoch is `p` such iterations per writer.

use crate::error::{Error, Result};
use crate::rng::rng_for;
use rand::seq::SliceRandom;

/// One training unit: `n` patch ids from a single writer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TupleBatch {
    pub writer: usize,
    pub patches: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WriterPlan {
    pub patches_per_writer: usize,
    pub tuples_per_iteration: usize,
    /// `[iteration][tuple]` → patch ids
    pub iterations: Vec<Vec<Vec<usize>>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpochPlan {
    pub tuple_size: usize,
    pub iterations_per_epoch: usize,
    pub seed: u64,
    /// Indexed by writer label.
    pub writers: Vec<WriterPlan>,
}

impl EpochPlan {
    pub fn total_tuples(&self) -> usize {
        self.writers.iter().map(|w| w.tuples_per_iteration * self.iterations_per_epoch).sum()
    }
}

/// Draws `p` independent permutations per writer and partitions each into n-tuples.
///
/// `writer_patches[w]` lists the patch ids available for writer `w`.
pub fn make_epoch_plan(writer_patches: &[Vec<usize>], n: usize, p: usize, seed: u64) -> Result<EpochPlan> {
    if n == 0 || p == 0 {
        return Err(Error::param(format!("tuple size and iterations must be positive (n={n}, p={p})")));
    }
    let mut writers = Vec::with_capacity(writer_patches.len());
    for (w, ids) in writer_patches.iter().enumerate() {
        if ids.len() < n {
            return Err(Error::data(format!("writer {w} has {} patches, fewer than the tuple size {n}", ids.len())));
        }
        let m = ids.len() / n;
        let iterations = (0..p)
            .map(|it| {
                let mut rng = rng_for(seed, "permutation", (w * p + it) as u64);
                let mut perm = ids.clone();
                perm.shuffle(&mut rng);
                perm[..m * n].chunks(n).map(<[usize]>::to_vec).collect()
            })
            .collect();
        writers.push(WriterPlan { patches_per_writer: ids.len(), tuples_per_iteration: m, iterations });
    }
    Ok(EpochPlan { tuple_size: n, iterations_per_epoch: p, seed, writers })
}

/// All writers' tuples for one iteration, in a seeded shuffled interleaving.
pub fn next_batches(plan: &EpochPlan, iteration: usize) -> Result<Vec<TupleBatch>> {
    if iteration >= plan.iterations_per_epoch {
        return Err(Error::param(format!("iteration {iteration} out of range 0..{}", plan.iterations_per_epoch)));
    }
    let mut batches: Vec<TupleBatch> = plan
        .writers
        .iter()
        .enumerate()
        .flat_map(|(w, wp)| wp.iterations[iteration].iter().map(move |t| TupleBatch { writer: w, patches: t.clone() }))
        .collect();
    let mut rng = rng_for(plan.seed, "interleave", iteration as u64);
    batches.shuffle(&mut rng);
    Ok(batches)
}
