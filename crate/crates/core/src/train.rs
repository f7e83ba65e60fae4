//! SGD training over random n-tuples with validation-based early stopping.

use crate::aggregation::{aggregate, Aggregation};
use crate::checkpoint::WriterModel;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::evaluate_topk;
use crate::exec::Exec;
use crate::models::{build_network, classify, ClassifierHead, NetworkSpec};
use crate::nn::{sgd_step, softmax_cross_entropy, OptimizerState};
use crate::rng::subseed;
use crate::sampling::{make_epoch_plan, next_batches, TupleBatch};
use crate::tensor::Tensor;
use std::time::Instant;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub spec: NetworkSpec,
    pub aggregation: Aggregation,
    /// tuple size n
    pub tuple_size: usize,
    /// iterations per epoch p
    pub iterations_per_epoch: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// rescale each tuple's gradient to at most this global L2 norm
    pub clip_norm: Option<f64>,
    /// epochs without a validation improvement before stopping
    pub patience: usize,
    pub max_epochs: usize,
    /// trials averaged into each epoch's validation top-1
    pub validation_trials: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            spec: NetworkSpec::sub_region(),
            aggregation: Aggregation::Average,
            tuple_size: 20,
            iterations_per_epoch: 20,
            learning_rate: 0.01,
            momentum: 0.9,
            clip_norm: None,
            patience: 20,
            max_epochs: 200,
            validation_trials: 1,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.tuple_size == 0 {
            return Err(Error::param("tuple size n must be at least 1"));
        }
        if self.iterations_per_epoch == 0 {
            return Err(Error::param("iterations per epoch p must be at least 1"));
        }
        if self.patience == 0 {
            return Err(Error::param("patience must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::param("max_epochs must be at least 1"));
        }
        if self.validation_trials == 0 {
            return Err(Error::param("validation_trials must be at least 1"));
        }
        if let Aggregation::TopKAverage(k) = self.aggregation {
            let positions = self.tuple_size * self.spec.local_side().pow(2);
            if k == 0 || k > positions {
                return Err(Error::param(format!("K={k} outside 1..={positions} (n·L² for n={})", self.tuple_size)));
            }
        }
        OptimizerState::new(std::iter::empty(), self.learning_rate, self.momentum)?;
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::param(format!("clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based
    pub epoch: usize,
    /// mean training loss over the epoch's tuples
    pub loss: f64,
    pub val_top1: f64,
    /// wall time of the epoch
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
    /// epoch whose parameters were kept (0 if none improved on chance)
    pub best_epoch: usize,
}

impl TrainingHistory {
    pub fn best_val_top1(&self) -> Option<f64> {
        self.records.iter().find(|r| r.epoch == self.best_epoch).map(|r| r.val_top1)
    }

    /// `epoch,loss,val_top1,seconds`
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "loss", "val_top1", "seconds"]).expect("in-memory write");
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                r.loss.to_string(),
                r.val_top1.to_string(),
                format!("{:.3}", r.seconds),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is UTF-8")
    }
}

/// Trains a fresh model; see [`train_with`].
pub fn train(
    cfg: &TrainingConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    exec: Exec,
) -> Result<(WriterModel, TrainingHistory)> {
    train_with(cfg, train_set, val_set, exec, |_| {})
}

/// Trains with a per-epoch callback. Returns the parameters from the epoch
/// with the best validation top-1 (latest on ties).
pub fn train_with(
    cfg: &TrainingConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    exec: Exec,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(WriterModel, TrainingHistory)> {
    cfg.validate()?;
    if train_set.num_writers() == 0 {
        return Err(Error::data("training set has no writers"));
    }
    let val_set = val_set.align_to(&train_set.writers)?;
    train_set.require_patches(cfg.tuple_size, "training")?;
    val_set.require_patches(cfg.tuple_size, "validation")?;

    let mut model = WriterModel {
        network: build_network(&cfg.spec, subseed(cfg.seed, "network", 0))?,
        head: ClassifierHead::init(cfg.spec.depth(), train_set.num_writers(), subseed(cfg.seed, "head", 0)),
        aggregation: cfg.aggregation,
        writers: train_set.writers.clone(),
        epochs: 0,
    };
    let mut opt = {
        let mut params = model.network.params();
        params.push(&model.head.linear.weight);
        params.push(&model.head.linear.bias);
        OptimizerState::new(params, cfg.learning_rate, cfg.momentum)?
    };

    let ids = train_set.patch_ids();
    let mut history = TrainingHistory::default();
    let mut best: Option<(f64, WriterModel)> = None;
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let plan =
            make_epoch_plan(&ids, cfg.tuple_size, cfg.iterations_per_epoch, subseed(cfg.seed, "epoch", epoch as u64))?;
        let mut loss_sum = 0.0;
        let mut tuples = 0usize;
        for it in 0..plan.iterations_per_epoch {
            for batch in next_batches(&plan, it)? {
                loss_sum += train_step(&mut model, &mut opt, train_set, &batch, cfg.clip_norm, exec)?;
                tuples += 1;
            }
        }
        model.epochs = epoch;
        let val = evaluate_topk(
            &model,
            &val_set,
            cfg.tuple_size,
            &[1],
            cfg.validation_trials,
            subseed(cfg.seed, "validation", epoch as u64),
            exec,
        )?;
        let record = EpochRecord {
            epoch,
            loss: loss_sum / tuples as f64,
            val_top1: val.mean[0],
            seconds: start.elapsed().as_secs_f64(),
        };
        if !record.loss.is_finite() {
            return Err(Error::param(format!("training diverged at epoch {epoch} (loss {})", record.loss)));
        }
        on_epoch(&record);
        let improved = best.as_ref().is_none_or(|(b, _)| record.val_top1 >= *b);
        if improved {
            best = Some((record.val_top1, model.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        history.records.push(record);
        if since_best >= cfg.patience {
            break;
        }
    }
    let (_, mut kept) = best.expect("at least one epoch ran");
    kept.epochs = history.records.len();
    Ok((kept, history))
}

/// One forward/backward/update on a single tuple; returns its loss.
pub fn train_step(
    model: &mut WriterModel,
    opt: &mut OptimizerState,
    data: &Dataset,
    batch: &TupleBatch,
    clip_norm: Option<f64>,
    exec: Exec,
) -> Result<f64> {
    let (loss, mut grads) = tuple_gradients(model, data, batch, exec)?;
    if let Some(max) = clip_norm {
        clip_global_norm(&mut grads, max);
    }
    let mut params = model.network.params_mut();
    params.push(&mut model.head.linear.weight);
    params.push(&mut model.head.linear.bias);
    sgd_step(&mut params, &grads, opt)?;
    Ok(loss)
}

/// Scales all gradients by `max / ‖g‖` when the global norm exceeds `max`.
pub fn clip_global_norm(grads: &mut [Tensor], max: f64) -> f64 {
    let norm = grads.iter().map(|g| g.dot(g)).sum::<f64>().sqrt();
    if norm > max {
        let s = max / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Loss and parameter gradients (network then head) for one tuple.
pub fn tuple_gradients(
    model: &WriterModel,
    data: &Dataset,
    batch: &TupleBatch,
    exec: Exec,
) -> Result<(f64, Vec<Tensor>)> {
    let samples =
        data.samples.get(batch.writer).ok_or_else(|| Error::data(format!("writer {} out of range", batch.writer)))?;
    let inner = if batch.patches.len() > 1 { Exec::Sequential } else { exec };
    let passes = exec.map(&batch.patches, |&p| match samples.get(p) {
        Some(patch) => model.network.forward_local(patch, inner),
        None => Err(Error::data(format!("patch {p} out of range for writer {}", batch.writer))),
    });
    let (maps, caches): (Vec<_>, Vec<_>) = passes.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();

    let (global, ctx) = aggregate(&maps, model.aggregation)?;
    let logits = classify(&global.values, &model.head)?;
    let (loss, d_logits) = softmax_cross_entropy(&logits, batch.writer)?;
    let head_grads = model.head.linear.backward(&global.values, &d_logits)?;
    let d_global = head_grads.d_input.expect("linear backward yields an input gradient");
    let d_maps = ctx.backward(&d_global)?;

    let members: Vec<usize> = (0..caches.len()).collect();
    let per_member = exec.map(&members, |&i| model.network.backward(&caches[i], &d_maps[i], inner));
    let mut grads: Option<Vec<Tensor>> = None;
    for g in per_member {
        let g = g?;
        match grads.as_mut() {
            None => grads = Some(g),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    a.add_assign(b)?;
                }
            }
        }
    }
    let mut grads = grads.expect("tuple has at least one patch");
    grads.extend(head_grads.d_params);
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{numeric_gradient, relative_error};
    use crate::rng::rng_for;
    use rand_distr::{Distribution, Uniform};

    fn tiny_spec() -> NetworkSpec {
        let mut s = NetworkSpec::sub_region().with_filters(&[3, 4]);
        s.input_side = 8;
        s.kernel = 3;
        s.pad = 1;
        s
    }

    fn random_data(writers: usize, per: usize, side: usize, seed: u64) -> Dataset {
        let mut rng = rng_for(seed, "test-data", 0);
        let u = Uniform::new(0.0, 1.0).unwrap();
        let samples = (0..writers)
            .map(|_| {
                (0..per)
                    .map(|_| {
                        Tensor::new(&[1, side, side], (0..side * side).map(|_| u.sample(&mut rng)).collect()).unwrap()
                    })
                    .collect()
            })
            .collect();
        Dataset::new((0..writers).map(|w| format!("w{w}")).collect(), samples).unwrap()
    }

    #[test]
    fn tuple_gradient_matches_finite_differences() {
        let data = random_data(3, 4, 8, 1);
        for (agg, seed) in [(Aggregation::Average, 2), (Aggregation::TopKAverage(5), 3)] {
            let cfg = TrainingConfig { spec: tiny_spec(), aggregation: agg, seed, ..Default::default() };
            let model = WriterModel {
                network: build_network(&cfg.spec, seed).unwrap(),
                head: ClassifierHead::init(cfg.spec.depth(), 3, seed),
                aggregation: agg,
                writers: data.writers.clone(),
                epochs: 0,
            };
            let batch = TupleBatch { writer: 1, patches: vec![0, 2, 3] };
            let (_, grads) = tuple_gradients(&model, &data, &batch, Exec::Sequential).unwrap();
            // first conv weight
            let w0 = model.network.params()[0].clone();
            let numeric = numeric_gradient(
                |w| {
                    let mut params: Vec<Tensor> = model.network.params().into_iter().cloned().collect();
                    params[0] = w.clone();
                    let mut m = model.clone();
                    m.network = crate::models::Network::from_params(&cfg.spec, params).unwrap();
                    tuple_gradients(&m, &data, &batch, Exec::Sequential).unwrap().0
                },
                &w0,
                1e-5,
            );
            assert!(relative_error(&grads[0], &numeric) < 1e-4, "{agg}");
        }
    }

    #[test]
    fn rejects_short_writers() {
        let data = random_data(2, 3, 8, 2);
        let cfg = TrainingConfig { spec: tiny_spec(), tuple_size: 4, ..Default::default() };
        let err = train(&cfg, &data, &data, Exec::Sequential).unwrap_err();
        assert!(matches!(err, Error::Data(m) if m.contains("writer w0")));
    }

    #[test]
    fn patience_keeps_best_epoch() {
        let data = random_data(2, 6, 8, 3);
        let cfg = TrainingConfig {
            spec: tiny_spec(),
            tuple_size: 2,
            iterations_per_epoch: 2,
            patience: 1,
            max_epochs: 8,
            ..Default::default()
        };
        let (model, hist) = train(&cfg, &data, &data, Exec::Sequential).unwrap();
        assert!(hist.records.len() <= 8);
        let best = hist.best_val_top1().unwrap();
        assert!(hist.records.iter().all(|r| r.val_top1 <= best));
        let last_best = hist.records.iter().rfind(|r| r.val_top1 == best).unwrap().epoch;
        assert_eq!(hist.best_epoch, last_best);
        assert_eq!(model.epochs, hist.records.len());
        let (again, _) = train(&cfg, &data, &data, Exec::Sequential).unwrap();
        assert_eq!(again.to_bytes(), model.to_bytes());
    }

    #[test]
    fn history_csv_header() {
        let h = TrainingHistory {
            records: vec![EpochRecord { epoch: 1, loss: 0.5, val_top1: 50.0, seconds: 1.23456 }],
            best_epoch: 1,
        };
        assert_eq!(h.to_csv(), "epoch,loss,val_top1,seconds\n1,0.5,50,1.235\n");
    }
}
