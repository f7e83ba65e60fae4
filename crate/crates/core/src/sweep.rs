//! Grids of train-and-evaluate experiments.

use crate::aggregation::Aggregation;
use crate::checkpoint::WriterModel;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate_multi_tuple, EvalReport, Fusion};
use crate::exec::Exec;
use crate::report::ResultsEntry;
use crate::rng::subseed;
use crate::train::{train, TrainingConfig, TrainingHistory};

/// Evaluation protocol shared by every cell.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub k_list: Vec<usize>,
    pub trials: usize,
    /// tuples fused per query (1 = single-tuple evaluation)
    pub tuples: usize,
    pub fusion: Fusion,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { k_list: vec![1, 5, 10], trials: 20, tuples: 1, fusion: Fusion::MeanProbability, seed: 0 }
    }
}

/// Lists to cross. Empty `patches_per_writer` / `writer_counts` mean "everything available".
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepGrid {
    pub tuple_sizes: Vec<usize>,
    pub patches_per_writer: Vec<usize>,
    pub writer_counts: Vec<usize>,
    pub aggregations: Vec<Aggregation>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub index: usize,
    pub tuple_size: usize,
    pub patches_per_writer: Option<usize>,
    pub writers: Option<usize>,
    pub aggregation: Aggregation,
}

impl SweepGrid {
    /// Cells in row-major order over (writers, N_s, aggregation, n).
    pub fn cells(&self, base: &TrainingConfig) -> Vec<SweepCell> {
        let or_default = |v: &[usize]| -> Vec<Option<usize>> {
            if v.is_empty() {
                vec![None]
            } else {
                v.iter().copied().map(Some).collect()
            }
        };
        let ns = if self.tuple_sizes.is_empty() { vec![base.tuple_size] } else { self.tuple_sizes.clone() };
        let aggs = if self.aggregations.is_empty() { vec![base.aggregation] } else { self.aggregations.clone() };
        let mut cells = Vec::new();
        for writers in or_default(&self.writer_counts) {
            for per in or_default(&self.patches_per_writer) {
                for &aggregation in &aggs {
                    for &tuple_size in &ns {
                        cells.push(SweepCell {
                            index: cells.len(),
                            tuple_size,
                            patches_per_writer: per,
                            writers,
                            aggregation,
                        });
                    }
                }
            }
        }
        cells
    }
}

#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub model: WriterModel,
    pub history: TrainingHistory,
    pub report: EvalReport,
    pub writers: usize,
    pub patches_per_writer: usize,
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub cell: SweepCell,
    pub seed: u64,
    pub outcome: std::result::Result<CellOutcome, String>,
}

impl CellResult {
    pub fn entry<'a>(&'a self, experiment: &'a str) -> ResultsEntry<'a> {
        let (writers, per, epochs) = match &self.outcome {
            Ok(o) => (o.writers, o.patches_per_writer, o.model.epochs),
            Err(_) => (self.cell.writers.unwrap_or(0), self.cell.patches_per_writer.unwrap_or(0), 0),
        };
        ResultsEntry {
            experiment,
            writers,
            tuple_size: self.cell.tuple_size,
            patches_per_writer: per,
            aggregation: self.cell.aggregation,
            epochs,
            seed: self.seed,
            outcome: match &self.outcome {
                Ok(o) => Ok(&o.report),
                Err(e) => Err(e.as_str()),
            },
        }
    }
}

/// Train, validation and test sets with identical writer lists.
#[derive(Clone, Copy, Debug)]
pub struct Splits<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub test: &'a Dataset,
}

/// Trains with `seed` on the cell's slice of the data and evaluates on the test split.
pub fn run_cell(
    base: &TrainingConfig,
    cell: &SweepCell,
    splits: Splits<'_>,
    eval: &EvalSettings,
    seed: u64,
    exec: Exec,
) -> Result<CellOutcome> {
    let total = splits.train.num_writers();
    let count = cell.writers.unwrap_or(total);
    if count == 0 || count > total {
        return Err(Error::data(format!("cell asks for {count} writers, corpus has {total}")));
    }
    let idx: Vec<usize> = (0..count).collect();
    let mut train_set = splits.train.select_writers(&idx);
    if let Some(per) = cell.patches_per_writer {
        train_set = train_set.subsample(per, subseed(seed, "subsample", 0))?;
    }
    let val = splits.val.align_to(&train_set.writers)?;
    let test = splits.test.align_to(&train_set.writers)?;
    let cfg = TrainingConfig { tuple_size: cell.tuple_size, aggregation: cell.aggregation, seed, ..base.clone() };
    let (model, history) = train(&cfg, &train_set, &val, exec)?;
    let report = evaluate_multi_tuple(
        &model,
        &test,
        cell.tuple_size,
        eval.tuples,
        eval.fusion,
        &eval.k_list,
        eval.trials,
        eval.seed,
        exec,
    )?;
    Ok(CellOutcome { model, history, report, writers: count, patches_per_writer: train_set.min_patches() })
}

/// Runs every cell with seed `subseed(base.seed, "sweep-cell", index)`.
/// A failing cell is recorded and the remaining cells still run.
pub fn sweep(
    base: &TrainingConfig,
    grid: &SweepGrid,
    splits: Splits<'_>,
    eval: &EvalSettings,
    exec: Exec,
    mut on_cell: impl FnMut(&CellResult),
) -> Vec<CellResult> {
    grid.cells(base)
        .into_iter()
        .map(|cell| {
            let seed = subseed(base.seed, "sweep-cell", cell.index as u64);
            let outcome = run_cell(base, &cell, splits, eval, seed, exec).map_err(|e| e.to_string());
            let r = CellResult { cell, seed, outcome };
            on_cell(&r);
            r
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::NetworkSpec;
    use crate::tensor::Tensor;

    fn tiny() -> (TrainingConfig, Dataset) {
        let mut spec = NetworkSpec::sub_region().with_filters(&[2, 3]);
        spec.input_side = 8;
        spec.kernel = 3;
        spec.pad = 1;
        let cfg = TrainingConfig {
            spec,
            tuple_size: 2,
            iterations_per_epoch: 1,
            max_epochs: 2,
            patience: 1,
            seed: 5,
            ..Default::default()
        };
        let samples =
            (0..3).map(|w| (0..6).map(|i| Tensor::full(&[1, 8, 8], (w * 6 + i) as f64 / 20.0)).collect()).collect();
        (cfg, Dataset::new(vec!["a".into(), "b".into(), "c".into()], samples).unwrap())
    }

    #[test]
    fn cell_counts_and_failures() {
        let (cfg, ds) = tiny();
        let grid = SweepGrid { tuple_sizes: vec![1, 2, 9], ..Default::default() };
        let splits = Splits { train: &ds, val: &ds, test: &ds };
        let eval = EvalSettings { trials: 2, ..Default::default() };
        let rows = sweep(&cfg, &grid, splits, &eval, Exec::Sequential, |_| {});
        assert_eq!(rows.len(), 3);
        assert!(rows[0].outcome.is_ok() && rows[1].outcome.is_ok());
        assert!(rows[2].outcome.as_ref().unwrap_err().contains("writer a"));
        assert_eq!(rows[1].outcome.as_ref().unwrap().report.trials(), 2);
    }

    #[test]
    fn single_cell_matches_direct_run() {
        let (cfg, ds) = tiny();
        let grid = SweepGrid { writer_counts: vec![2], ..Default::default() };
        let splits = Splits { train: &ds, val: &ds, test: &ds };
        let eval = EvalSettings { trials: 3, ..Default::default() };
        let rows = sweep(&cfg, &grid, splits, &eval, Exec::Sequential, |_| {});
        let direct =
            run_cell(&cfg, &grid.cells(&cfg)[0], splits, &eval, subseed(cfg.seed, "sweep-cell", 0), Exec::Sequential)
                .unwrap();
        let swept = rows[0].outcome.as_ref().unwrap();
        assert_eq!(swept.report, direct.report);
        assert_eq!(swept.model.to_bytes(), direct.model.to_bytes());
        assert_eq!(swept.writers, 2);
    }
}
