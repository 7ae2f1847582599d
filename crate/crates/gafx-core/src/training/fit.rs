//! The training loop and evaluation.
//!
//! One optimizer step per batch: preprocess (on workers) -> extract ->
//! classify -> cross-entropy -> Adam at the scheduled rate. Batches are
//! shuffled under the config seed and the step itself is single-threaded,
//! so a fixed seed reproduces every number bit for bit. A non-finite loss
//! aborts the run with a divergence report naming the step and epoch.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{ops, Adam, AdamConfig, Tape, TensorError};

use super::dataset::{DatasetIndex, Split};
use super::metrics::{DivergenceReport, EpochRecord, EvalReport, Metrics, MetricsSink};
use super::schedule::lr_at;
use super::workers::parallel_map;
use super::{argmax, PipelineConfig, PipelineModel, PreparedInput, Result, TrainConfig, TrainError};

/// Parameter budget above which full-width runs must be opted into.
const DESK_PARAM_BUDGET: usize = 30_000_000;

#[derive(Debug, Clone, PartialEq)]
pub enum FitOutcome {
    Completed,
    Diverged(DivergenceReport),
}

pub struct FitRun {
    pub model: PipelineModel<f32>,
    pub metrics: Metrics,
    pub outcome: FitOutcome,
    /// Training RNG at the end of the run (persisted in checkpoints).
    pub rng: ChaCha8Rng,
}

/// Builds the pipeline for `cfg` and trains it on the index's train split.
pub fn fit(index: &DatasetIndex, cfg: &TrainConfig, sink: &mut MetricsSink<'_>) -> Result<FitRun> {
    cfg.validate()?;
    let model = PipelineModel::new(PipelineConfig::from_train(cfg, index.genres.clone()))?;
    fit_model(model, index, cfg, sink)
}

/// Trains an already-built model (entry point for pretrained extractors and
/// fault-injection tests).
pub fn fit_model(
    model: PipelineModel<f32>,
    index: &DatasetIndex,
    cfg: &TrainConfig,
    sink: &mut MetricsSink<'_>,
) -> Result<FitRun> {
    cfg.validate()?;
    let params = model.parameter_count();
    if params > DESK_PARAM_BUDGET && !cfg.allow_full_width {
        return Err(TrainError::Budget(format!(
            "{params} parameters exceeds the desk-tier budget of {DESK_PARAM_BUDGET}; \
             raise width_scale or set allow_full_width"
        )));
    }
    let train_entries: Vec<_> = index.split_entries(Split::Train).cloned().collect();
    if train_entries.is_empty() {
        return Err(TrainError::Config("no train entries in the index".into()));
    }
    if let Some(bad) = train_entries.iter().find(|e| e.label >= index.num_classes()) {
        return Err(TrainError::Config(format!(
            "label {} out of range for {} genres",
            bad.label,
            index.num_classes()
        )));
    }

    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Adam::new(
        model.trainable_params(cfg.joint_finetune),
        AdamConfig::default(),
    );
    let mut metrics = Metrics::default();
    let mut step: u64 = 0;
    let kind = model.config.extractor_kind();
    let canvas = model.config.canvas_seconds;

    for epoch in 0..cfg.epochs {
        let epoch_started = Instant::now();
        let mut order: Vec<usize> = (0..train_entries.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        let mut correct = 0usize;
        let mut seen = 0usize;

        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let lr = lr_at(step, epoch, cfg);
            metrics.lr_trace.push(lr);

            let entries: Vec<_> = chunk.iter().map(|&i| &train_entries[i]).collect();
            let prepared: Vec<Result<PreparedInput>> = parallel_map(entries.clone(), |e| {
                let clip = index.load_clip(e)?;
                super::preprocess_clip(&clip, kind, canvas)
            });
            let labels: Vec<usize> = entries.iter().map(|e| e.label).collect();

            let step_result = (|| -> Result<(f64, usize)> {
                let tape = Tape::new();
                let mut rows = Vec::with_capacity(prepared.len());
                for p in &prepared {
                    let input = match p {
                        Ok(i) => i,
                        Err(e) => {
                            return Err(TrainError::Config(format!("preprocessing failed: {e}")))
                        }
                    };
                    let logits = model.forward_prepared(&tape, input, cfg.joint_finetune)?;
                    rows.push(ops::reshape(
                        &tape,
                        &logits,
                        &[1, model.config.classifier.num_classes],
                    )?);
                }
                let refs: Vec<_> = rows.iter().collect();
                let batch_logits = ops::concat(&tape, &refs, 0)?;
                let loss = ops::softmax_cross_entropy(&tape, &batch_logits, &labels)?;
                tape.backward(&loss)?;
                optimizer.step(lr)?;
                optimizer.zero_grads();
                let values = batch_logits.to_vec();
                let k = model.config.classifier.num_classes;
                let hits = labels
                    .iter()
                    .enumerate()
                    .filter(|(i, &l)| argmax(&values[i * k..(i + 1) * k]) == l)
                    .count();
                Ok((loss.item() as f64, hits))
            })();

            match step_result {
                Ok((loss, hits)) => {
                    loss_sum += loss;
                    batches += 1;
                    correct += hits;
                    seen += labels.len();
                }
                Err(TrainError::Tensor(TensorError::NonFinite(context))) => {
                    let report = DivergenceReport {
                        epoch,
                        step,
                        loss: format!("non-finite in {context}"),
                    };
                    metrics.diverged = Some(report.clone());
                    metrics.total_wall_secs = started.elapsed().as_secs_f64();
                    sink.summary(&metrics)?;
                    return Ok(FitRun {
                        model,
                        metrics,
                        outcome: FitOutcome::Diverged(report),
                        rng,
                    });
                }
                Err(e) => return Err(e),
            }
        }

        let record = EpochRecord {
            epoch,
            steps: step,
            mean_loss: loss_sum / batches.max(1) as f64,
            train_accuracy: correct as f64 / seen.max(1) as f64,
            lr_last: *metrics.lr_trace.last().expect("at least one step"),
            wall_secs: epoch_started.elapsed().as_secs_f64(),
        };
        sink.epoch(&record)?;
        metrics.epochs.push(record);
    }

    if index.eval_count() > 0 {
        let report = evaluate(&model, index)?;
        metrics.eval_accuracy = Some(report.accuracy);
        metrics.confusion = Some(report.confusion);
    }
    metrics.total_wall_secs = started.elapsed().as_secs_f64();
    sink.summary(&metrics)?;
    Ok(FitRun {
        model,
        metrics,
        outcome: FitOutcome::Completed,
        rng,
    })
}

/// Deterministic evaluation over the eval split: argmax accuracy plus the
/// full confusion matrix.
pub fn evaluate(model: &PipelineModel<f32>, index: &DatasetIndex) -> Result<EvalReport> {
    let entries: Vec<_> = index.split_entries(Split::Eval).cloned().collect();
    if entries.is_empty() {
        return Err(TrainError::Config("no eval entries in the index".into()));
    }
    let k = index.num_classes();
    let mut confusion = vec![vec![0usize; k]; k];
    let kind = model.config.extractor_kind();
    let canvas = model.config.canvas_seconds;
    let prepared: Vec<Result<PreparedInput>> = parallel_map(entries.iter().collect(), |e| {
        let clip = index.load_clip(e)?;
        super::preprocess_clip(&clip, kind, canvas)
    });
    for (entry, input) in entries.iter().zip(prepared) {
        let input = input?;
        let tape = Tape::inference();
        let logits = model.forward_prepared(&tape, &input, false)?;
        let predicted = argmax(&logits.to_vec());
        confusion[entry.label][predicted] += 1;
    }
    EvalReport::from_confusion(confusion)
}

/// Convenience wrapper writing JSONL metrics to a file.
pub fn fit_to_files(
    index: &DatasetIndex,
    cfg: &TrainConfig,
    metrics_path: &std::path::Path,
) -> Result<FitRun> {
    let mut file = std::fs::File::create(metrics_path)?;
    let mut out: &mut dyn Write = &mut file;
    let mut sink = MetricsSink::new(Some(&mut out));
    fit(index, cfg, &mut sink)
}
