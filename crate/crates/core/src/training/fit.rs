use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step_tensors, clip_grad_norm, OptimizerState};
use super::data::{EncodedExample, EncodedSet};
use super::{TrainConfig, TrainError};
use crate::autodiff::Tape;
use crate::losses::{graph_batch_loss, GraphItem, LossBreakdown};
use crate::metrics::EvalReport;
use crate::model::{forward_graph, predict_label, register, LogitRows, ModelConfig, ModelParams};

/// Classification probabilities for every example of `set`.
pub fn score_set(params: &ModelParams, set: &EncodedSet) -> Result<Vec<f64>, TrainError> {
    set.examples
        .iter()
        .map(|e| Ok(params.predict_proba(&e.classification_seq())?))
        .collect()
}

/// Metrics of `set` at the model's threshold.
pub fn evaluate_set(params: &ModelParams, set: &EncodedSet) -> Result<EvalReport, TrainError> {
    let scores = score_set(params, set)?;
    let preds: Vec<u8> = scores.iter().map(|&p| predict_label(p, params.config.threshold)).collect();
    Ok(EvalReport::build(&set.labels(), &scores, &preds, &set.word_counts())?)
}

/// Loss of the whole set in one value-only pass.
pub fn set_loss(params: &ModelParams, set: &EncodedSet, lambda: f64) -> Result<LossBreakdown, TrainError> {
    let examples: Vec<&EncodedExample> = set.examples.iter().collect();
    let mut tape = Tape::new();
    let w = register(&mut tape, params, false);
    let (_, breakdown) = record_batch(&mut tape, &w, &params.config, lambda, &examples)?;
    Ok(breakdown)
}

fn record_batch(
    tape: &mut Tape,
    w: &crate::model::ParamSet<crate::autodiff::Var>,
    cfg: &ModelConfig,
    lambda: f64,
    batch: &[&EncodedExample],
) -> Result<(crate::autodiff::Var, LossBreakdown), TrainError> {
    let mut items = Vec::with_capacity(batch.len());
    for ex in batch {
        let rows = if ex.explained { LogitRows::Explanation } else { LogitRows::None };
        items.push(GraphItem {
            output: forward_graph(tape, w, cfg, &ex.seq, rows)?,
            label: ex.record.label,
            seq: &ex.seq,
            explained: ex.explained,
        });
    }
    Ok(graph_batch_loss(tape, lambda, &items)?)
}

/// Stateful mini-batch trainer; [`fit`] drives it epoch by epoch.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub params: ModelParams,
    pub state: OptimizerState,
    pub cfg: TrainConfig,
    /// Epochs completed so far.
    pub epoch: usize,
}

impl Trainer {
    /// Fresh parameters initialized from `cfg.seed`.
    pub fn new(model_cfg: ModelConfig, cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let params = ModelParams::init(model_cfg, cfg.seed)?;
        Ok(Trainer {
            state: OptimizerState::for_model(&params),
            params,
            cfg,
            epoch: 0,
        })
    }

    /// One pass over `train` in a shuffled order derived from the seed and
    /// the epoch number. Returns example-weighted epoch averages.
    pub fn run_epoch(&mut self, train: &EncodedSet) -> Result<LossBreakdown, TrainError> {
        if train.is_empty() {
            return Err(TrainError::EmptyTrain);
        }
        let epoch = self.epoch + 1;
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let (mut cls_sum, mut gen_sum) = (0.0, 0.0);
        let (mut n, mut n_pos, mut n_gen) = (0, 0, 0);
        for (b, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let batch: Vec<&EncodedExample> = chunk.iter().map(|&i| &train.examples[i]).collect();
            let loss = self.train_batch(&batch).map_err(|e| match e {
                TrainError::Divergence { detail, .. } => TrainError::Divergence { epoch, batch: b, detail },
                other => other,
            })?;
            cls_sum += loss.l_cls * loss.n_examples as f64;
            gen_sum += loss.l_gen * loss.n_explained as f64;
            n += loss.n_examples;
            n_pos += loss.n_positive;
            n_gen += loss.n_explained;
        }
        self.epoch = epoch;
        let l_gen = if n_gen == 0 { 0.0 } else { gen_sum / n_gen as f64 };
        Ok(LossBreakdown::combine(self.cfg.lambda, cls_sum / n as f64, l_gen, n, n_pos, n_gen))
    }

    /// Forward, backward, optional clipping and one Adam step. Divergence is
    /// reported with batch index 0; [`Trainer::run_epoch`] fills in the real
    /// position.
    pub fn train_batch(&mut self, batch: &[&EncodedExample]) -> Result<LossBreakdown, TrainError> {
        let mut tape = Tape::new();
        let w = register(&mut tape, &self.params, true);
        let (loss, breakdown) = record_batch(&mut tape, &w, &self.params.config, self.cfg.lambda, batch)?;
        let diverged = |detail: String| TrainError::Divergence {
            epoch: self.epoch + 1,
            batch: 0,
            detail,
        };
        if !breakdown.l_total.is_finite() {
            return Err(diverged(format!(
                "loss is {} (l_cls={}, l_gen={})",
                breakdown.l_total, breakdown.l_cls, breakdown.l_gen
            )));
        }
        tape.backward(loss).map_err(crate::model::ModelError::from)?;

        let handles: Vec<_> = w.entries().into_iter().map(|(_, v)| *v).collect();
        let mut tensors = self.params.weights.values_mut();
        for (t, v) in tensors.iter_mut().zip(&handles) {
            let g = tape.take_grad(*v).expect("trainable parameters receive gradients");
            t.set_grad(g).map_err(crate::model::ModelError::from)?;
        }
        let norm = match self.cfg.clip_norm {
            Some(max) => clip_grad_norm(&mut tensors, max),
            None => clip_grad_norm(&mut tensors, f64::INFINITY),
        };
        if !norm.is_finite() {
            for t in tensors.iter_mut() {
                t.clear_grad();
            }
            return Err(diverged(format!("gradient norm is {norm}")));
        }
        adam_step_tensors(&mut tensors, &mut self.state, &self.cfg)?;
        Ok(breakdown)
    }
}

/// One epoch of [`TrainHistory`].
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val: EvalReport,
    pub val_auprc: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best_val_auprc(&self) -> f64 {
        self.epochs.iter().map(|e| e.val_auprc).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    /// `epoch,l_cls,l_gen,l_total,val_auprc,seconds`, one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,l_cls,l_gen,l_total,val_auprc,seconds\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{:.3}\n",
                e.epoch, e.train.l_cls, e.train.l_gen, e.train.l_total, e.val_auprc, e.seconds
            ));
        }
        out
    }
}

/// [`fit_with`] without a progress callback.
pub fn fit(
    train: &EncodedSet,
    val: &EncodedSet,
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
) -> Result<(ModelParams, TrainHistory), TrainError> {
    fit_with(train, val, cfg, model_cfg, |_| {})
}

/// Trains for up to `cfg.epochs` epochs and returns the parameters of the
/// epoch with the highest validation AUPRC (the earliest on ties). Stops once
/// `patience + 1` consecutive epochs fail to improve on the best.
pub fn fit_with(
    train: &EncodedSet,
    val: &EncodedSet,
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelParams, TrainHistory), TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    if val.n_positive() == 0 {
        return Err(TrainError::NoValidationPositives);
    }
    let mut trainer = Trainer::new(*model_cfg, cfg.clone())?;
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut stale = 0;
    for _ in 0..cfg.epochs {
        let start = Instant::now();
        let loss = trainer.run_epoch(train)?;
        let report = evaluate_set(&trainer.params, val)?;
        let val_auprc = report.auprc.ok_or(TrainError::NoValidationPositives)?;
        let record = EpochRecord {
            epoch: trainer.epoch,
            train: loss,
            val: report,
            val_auprc,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.epochs.push(record);
        if best.as_ref().is_none_or(|(b, _)| val_auprc > *b) {
            best = Some((val_auprc, trainer.params.clone()));
            history.best_epoch = trainer.epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.patience {
                break;
            }
        }
    }
    let (_, params) = best.expect("at least one epoch ran");
    Ok((params, history))
}

/// One model trained for one λ of the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaRun {
    pub lambda: f64,
    pub seed: u64,
    pub best_val_auprc: f64,
    pub history: TrainHistory,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LambdaSelection {
    pub best_lambda: f64,
    pub best_index: usize,
    pub runs: Vec<LambdaRun>,
    /// Best checkpoint of the selected run.
    pub params: ModelParams,
}

/// Trains one model per grid value (seed `cfg.seed + index`) and keeps the λ
/// with the highest validation AUPRC, preferring the larger λ on ties.
pub fn select_lambda(
    grid: &[f64],
    train: &EncodedSet,
    val: &EncodedSet,
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    mut on_epoch: impl FnMut(f64, &EpochRecord),
) -> Result<LambdaSelection, TrainError> {
    if grid.is_empty() {
        return Err(TrainError::EmptyGrid);
    }
    let mut runs = Vec::with_capacity(grid.len());
    let mut chosen: Option<(usize, ModelParams)> = None;
    for (i, &lambda) in grid.iter().enumerate() {
        let run_cfg = TrainConfig {
            lambda,
            seed: cfg.seed.wrapping_add(i as u64),
            ..cfg.clone()
        };
        let (params, history) = fit_with(train, val, &run_cfg, model_cfg, |r| on_epoch(lambda, r))?;
        let auprc = history.best_val_auprc();
        let better = match &chosen {
            None => true,
            Some((j, _)) => {
                let prev: &LambdaRun = &runs[*j];
                auprc > prev.best_val_auprc || (auprc == prev.best_val_auprc && lambda > prev.lambda)
            }
        };
        if better {
            chosen = Some((i, params));
        }
        runs.push(LambdaRun {
            lambda,
            seed: run_cfg.seed,
            best_val_auprc: auprc,
            history,
        });
    }
    let (best_index, params) = chosen.expect("grid is nonempty");
    Ok(LambdaSelection {
        best_lambda: grid[best_index],
        best_index,
        runs,
        params,
    })
}
