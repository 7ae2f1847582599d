//! Waveform-to-spectrogram pretraining.
//!
//! The extractor plus a per-frame linear head regress the 16 kHz log-mel
//! target of shape `(1024, 128)`, min-max normalized to `[0, 1]` with
//! corpus-level statistics, under BCE-with-logits. The extractor's feature
//! is linearly resampled to 1024 rows before the head.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::feature::FEATURE_BINS;
use crate::dsp::{load_wav, mel_spectrogram, wav_info, MelProfile};
use crate::extractors::{Extractor, ExtractorConfig};
use crate::layers::{Linear, StateDict};
use crate::tensor::{ops, Adam, AdamConfig, Tape, Tensor, TensorError};

use super::checkpoint::CheckpointStats;
use super::metrics::{DivergenceReport, EpochRecord, Metrics, MetricsSink};
use super::schedule::lr_at;
use super::workers::parallel_map;
use super::{preprocess_clip, FitOutcome, PreparedInput, Result, TrainConfig, TrainError};

pub const PRETRAIN_TARGET_ROWS: usize = 1024;
const PRETRAIN_SECONDS: f64 = 10.0;

/// Rebuild recipe for a pretrain checkpoint.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PretrainPipelineConfig {
    pub extractor: ExtractorConfig,
    pub seed: u64,
}

pub struct PretrainRun {
    pub extractor: Extractor<f32>,
    pub head: Linear<f32>,
    pub config: PretrainPipelineConfig,
    pub stats: CheckpointStats,
    pub metrics: Metrics,
    pub outcome: FitOutcome,
    pub rng: ChaCha8Rng,
}

impl PretrainRun {
    pub fn state(&self) -> StateDict<f32> {
        let mut out = StateDict::new();
        self.extractor.state_into("extractor", &mut out);
        self.head.state_into("head", &mut out);
        out
    }
}

pub(crate) fn build_pretrain_model<E: crate::tensor::Element>(
    config: &PretrainPipelineConfig,
) -> Result<(Extractor<E>, Linear<E>)> {
    let extractor = Extractor::new(&config.extractor, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9EAD);
    let head = Linear::new(&mut rng, FEATURE_BINS, FEATURE_BINS);
    Ok((extractor, head))
}

fn list_corpus(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| TrainError::Ingestion(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|r| r.ok())
        .map(|d| d.path())
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(TrainError::Ingestion(format!(
            "no wav files under {}",
            dir.display()
        )));
    }
    let mut short = Vec::new();
    for f in &files {
        let info = wav_info(f)?;
        if (info.frames as f64) < PRETRAIN_SECONDS * info.sample_rate as f64 {
            short.push(format!("{} ({} samples)", f.display(), info.frames));
        }
    }
    if !short.is_empty() {
        return Err(TrainError::Ingestion(format!(
            "pretraining needs >= 10 s clips; too short:\n  {}",
            short.join("\n  ")
        )));
    }
    Ok(files)
}

/// Pretrains `cfg.extractor` (required) on every wav under `corpus_dir`.
pub fn pretrain_fit(
    corpus_dir: &Path,
    cfg: &TrainConfig,
    sink: &mut MetricsSink<'_>,
) -> Result<PretrainRun> {
    cfg.validate()?;
    let kind = cfg
        .extractor
        .ok_or_else(|| TrainError::Config("pretraining requires an extractor".into()))?;
    let files = list_corpus(corpus_dir)?;

    // Targets first: corpus-level min/max normalization to [0, 1] is part
    // of the target definition, so both passes are needed up front.
    let raw_targets: Vec<Result<Vec<f32>>> = parallel_map(files.clone(), |path| {
        let clip = load_wav(&path)?;
        let mono16 = crate::dsp::resample(&clip.to_mono(), 16000)?;
        let fm = mel_spectrogram(&mono16, MelProfile::Pretrain16k)?;
        Ok(fm.values)
    });
    let mut targets = Vec::with_capacity(files.len());
    for t in raw_targets {
        targets.push(t?);
    }
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for t in &targets {
        for &v in t {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let range = (hi - lo).max(1e-6);
    let targets: Vec<Tensor<f32>> = targets
        .into_iter()
        .map(|t| {
            let norm: Vec<f32> = t.iter().map(|&v| (v - lo) / range).collect();
            Tensor::new(norm, &[PRETRAIN_TARGET_ROWS, FEATURE_BINS]).expect("target shape")
        })
        .collect();

    let config = PretrainPipelineConfig {
        extractor: ExtractorConfig::for_kind(kind, cfg.width_scale),
        seed: cfg.seed,
    };
    let (extractor, head) = build_pretrain_model::<f32>(&config)?;
    let mut state = StateDict::new();
    extractor.state_into("extractor", &mut state);
    head.state_into("head", &mut state);
    let mut optimizer = Adam::new(crate::layers::trainable(&state), AdamConfig::default());

    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut metrics = Metrics::default();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let epoch_started = Instant::now();
        let mut order: Vec<usize> = (0..files.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let lr = lr_at(step, epoch, cfg);
            metrics.lr_trace.push(lr);
            let inputs: Vec<Result<PreparedInput>> =
                parallel_map(chunk.iter().map(|&i| files[i].clone()).collect(), |path| {
                    let clip = load_wav(&path)?;
                    preprocess_clip(&clip, Some(kind), PRETRAIN_SECONDS)
                });
            let step_result = (|| -> Result<f64> {
                let tape = Tape::new();
                let mut predictions = Vec::with_capacity(chunk.len());
                let mut wanted = Vec::with_capacity(chunk.len());
                for (&i, input) in chunk.iter().zip(&inputs) {
                    let input = match input {
                        Ok(v) => v,
                        Err(e) => {
                            return Err(TrainError::Config(format!("preprocessing failed: {e}")))
                        }
                    };
                    let clip = match input {
                        PreparedInput::Wave(c) => c,
                        PreparedInput::Feature(_) => unreachable!("extractor path"),
                    };
                    let (feature, _) = extractor.forward_clip(&tape, clip, true)?;
                    let resampled = ops::time_resample_linear(&tape, &feature, PRETRAIN_TARGET_ROWS)?;
                    predictions.push(head.forward(&tape, &resampled)?);
                    wanted.push(&targets[i]);
                }
                let refs: Vec<_> = predictions.iter().collect();
                let stacked = ops::concat(&tape, &refs, 0)?;
                let target_refs: Vec<_> = wanted.to_vec();
                let target = ops::concat(&tape, &target_refs, 0)?;
                let loss = ops::bce_with_logits(&tape, &stacked, &target)?;
                tape.backward(&loss)?;
                optimizer.step(lr)?;
                optimizer.zero_grads();
                Ok(loss.item() as f64)
            })();
            match step_result {
                Ok(loss) => {
                    loss_sum += loss;
                    batches += 1;
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
                    return Ok(PretrainRun {
                        extractor,
                        head,
                        config,
                        stats: CheckpointStats {
                            pretrain_min: Some(lo),
                            pretrain_max: Some(hi),
                        },
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
            train_accuracy: 0.0, // regression task: no accuracy
            lr_last: *metrics.lr_trace.last().expect("at least one step"),
            wall_secs: epoch_started.elapsed().as_secs_f64(),
        };
        sink.epoch(&record)?;
        metrics.epochs.push(record);
    }
    metrics.total_wall_secs = started.elapsed().as_secs_f64();
    sink.summary(&metrics)?;
    Ok(PretrainRun {
        extractor,
        head,
        config,
        stats: CheckpointStats {
            pretrain_min: Some(lo),
            pretrain_max: Some(hi),
        },
        metrics,
        outcome: FitOutcome::Completed,
        rng,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn perfect_logits_beat_zero_logits() {
        // logit(target) reproduces the target through the sigmoid, so its
        // BCE must undercut the all-zero predictor
        let tape = Tape::<f64>::inference();
        let target_vals: Vec<f64> = (0..64).map(|i| (i as f64 + 0.5) / 64.5).collect();
        let clamped: Vec<f64> = target_vals
            .iter()
            .map(|&t| t.clamp(1e-4, 1.0 - 1e-4))
            .collect();
        let logits: Vec<f64> = clamped.iter().map(|&t| (t / (1.0 - t)).ln()).collect();
        let target = Tensor::new(target_vals, &[64]).unwrap();
        let perfect = Tensor::new(logits, &[64]).unwrap();
        let zeros = Tensor::zeros(&[64]);
        let l_perfect = ops::bce_with_logits(&tape, &perfect, &target).unwrap().item();
        let l_zero = ops::bce_with_logits(&tape, &zeros, &target).unwrap().item();
        assert!(l_perfect < l_zero, "{l_perfect} vs {l_zero}");
    }

    #[test]
    fn target_shape_is_always_1024_rows() {
        let dir = tempfile::tempdir().unwrap();
        let clip = crate::dsp::AudioClip::new(vec![vec![0.1; 11 * 22050]], 22050).unwrap();
        crate::dsp::save_wav(dir.path().join("c.wav"), &clip).unwrap();
        let mono16 = crate::dsp::resample(&clip, 16000).unwrap();
        let fm = mel_spectrogram(&mono16, MelProfile::Pretrain16k).unwrap();
        assert_eq!((fm.time_steps, fm.freq_bins), (1024, 128));
    }

    #[test]
    fn short_clips_are_rejected_listing_offenders() {
        let dir = tempfile::tempdir().unwrap();
        let clip = crate::dsp::AudioClip::new(vec![vec![0.0; 1000]], 22050).unwrap();
        crate::dsp::save_wav(dir.path().join("short.wav"), &clip).unwrap();
        let err = list_corpus(dir.path()).unwrap_err();
        assert!(err.to_string().contains("short.wav"));
    }
}
