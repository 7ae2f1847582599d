//! Dataset ingestion, the optimization schedule, end-to-end training and
//! evaluation, the pretraining task, and checkpointing.

pub mod checkpoint;
pub mod dataset;
pub mod fit;
pub mod metrics;
pub mod pretrain;
pub mod schedule;
pub mod synth;
pub mod workers;

pub use checkpoint::{
    load_classify_checkpoint, load_pretrain_checkpoint, read_checkpoint, save_checkpoint,
    CheckpointConfig, CheckpointStats,
};
pub use dataset::{augment_split, build_index, ClipEntry, DatasetIndex, Split};
pub use fit::{evaluate, fit, fit_model, FitOutcome, FitRun};
pub use metrics::{DivergenceReport, EpochRecord, EvalReport, Metrics, MetricsSink};
pub use pretrain::{pretrain_fit, PretrainPipelineConfig, PretrainRun};
pub use schedule::lr_at;

use crate::classifier::{Ast, AstConfig};
use crate::dsp::{mel_spectrogram, resample, AudioClip, DspError, FeatureMap, MelProfile};
use crate::extractors::{Extractor, ExtractorConfig, ExtractorKind};
use crate::layers::StateDict;
use crate::tensor::{ops, Element, Tape, Tensor, TensorError};

/// Errors across the training surface.
#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("ingestion error: {0}")]
    Ingestion(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("budget error: {0}")]
    Budget(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Training hyperparameters. Defaults are the published recipe; toy runs
/// override the scale knobs.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    pub epochs: usize,
    pub warmup_steps: u64,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub seed: u64,
    /// `None` routes the mel-spectrogram baseline straight to the classifier.
    pub extractor: Option<ExtractorKind>,
    pub classifier: AstConfig,
    pub width_scale: usize,
    /// Fine-tune the extractor jointly with the classifier (default); when
    /// false the extractor is frozen.
    pub joint_finetune: bool,
    /// Every clip is zero-padded/truncated to this many seconds before the
    /// model sees it, fixing the feature time extent per path.
    pub canvas_seconds: f64,
    /// Full-width extractor training is rejected unless explicitly allowed.
    pub allow_full_width: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            base_lr: 5e-5,
            epochs: 80,
            warmup_steps: 800,
            decay_epochs: vec![12, 24, 50, 65],
            decay_factor: 0.5,
            seed: 0,
            extractor: None,
            classifier: AstConfig::deit_tiny(),
            width_scale: 1,
            joint_finetune: true,
            canvas_seconds: 30.0,
            allow_full_width: false,
        }
    }
}

impl TrainConfig {
    /// Published pretraining recipe: same optimizer, higher base rate.
    pub fn pretrain_defaults() -> Self {
        TrainConfig {
            base_lr: 5e-4,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(TrainError::Config("batch size and epochs must be >= 1".into()));
        }
        if !(self.base_lr > 0.0) || !(self.canvas_seconds > 0.0) {
            return Err(TrainError::Config(
                "learning rate and canvas seconds must be positive".into(),
            ));
        }
        if !self.decay_epochs.windows(2).all(|w| w[0] < w[1]) {
            return Err(TrainError::Config("decay epochs must be strictly increasing".into()));
        }
        if self.decay_epochs.iter().any(|&d| d >= self.epochs) {
            return Err(TrainError::Config(format!(
                "decay epochs {:?} must all precede the last epoch {}",
                self.decay_epochs, self.epochs
            )));
        }
        Ok(())
    }
}

/// Everything needed to rebuild a classify pipeline: saved inside
/// checkpoints and authoritative over caller-supplied configs on load.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PipelineConfig {
    pub extractor: Option<ExtractorConfig>,
    pub classifier: AstConfig,
    pub canvas_seconds: f64,
    pub seed: u64,
    pub genres: Vec<String>,
}

impl PipelineConfig {
    pub fn from_train(cfg: &TrainConfig, genres: Vec<String>) -> Self {
        let mut classifier = cfg.classifier.clone();
        classifier.num_classes = genres.len();
        PipelineConfig {
            extractor: cfg
                .extractor
                .map(|k| ExtractorConfig::for_kind(k, cfg.width_scale)),
            classifier,
            canvas_seconds: cfg.canvas_seconds,
            seed: cfg.seed,
            genres,
        }
    }

    pub fn extractor_kind(&self) -> Option<ExtractorKind> {
        self.extractor.as_ref().map(|e| e.kind())
    }

    /// Canvas length in samples at the path's input rate.
    pub fn canvas_samples(&self) -> usize {
        let rate = self
            .extractor_kind()
            .map(|k| k.required_rate())
            .unwrap_or(22050);
        (self.canvas_seconds * rate as f64).round() as usize
    }

    /// Feature time extent the classifier is sized for.
    pub fn feature_time_steps(&self) -> usize {
        let len = self.canvas_samples();
        match self.extractor_kind() {
            Some(ExtractorKind::GafxU) => {
                crate::extractors::GafxUConfig::new(1).feature_rows(len)
            }
            Some(ExtractorKind::GafxR) | Some(ExtractorKind::GafxA) => {
                crate::extractors::GafxR::<f32>::time_rows(len)
            }
            None => MelProfile::Baseline22k.stft_config().frames(len),
        }
    }
}

/// A clip after deterministic preprocessing, ready for the model. The mel
/// baseline precomputes its feature here so workers can do the heavy part.
pub enum PreparedInput {
    Wave(AudioClip),
    Feature(FeatureMap),
}

/// Resamples/channel-converts/pads a raw clip for the given path. Binding
/// this to the extractor kind keeps callers from mismatching rates.
pub fn preprocess_clip(
    clip: &AudioClip,
    kind: Option<ExtractorKind>,
    canvas_seconds: f64,
) -> Result<PreparedInput> {
    match kind {
        Some(ExtractorKind::GafxU) => {
            let rate = ExtractorKind::GafxU.required_rate();
            let len = (canvas_seconds * rate as f64).round() as usize;
            let clip = resample(clip, rate)?.to_stereo().fit_length(len);
            Ok(PreparedInput::Wave(clip))
        }
        Some(k) => {
            let rate = k.required_rate();
            let len = (canvas_seconds * rate as f64).round() as usize;
            let clip = resample(clip, rate)?.to_mono().fit_length(len);
            Ok(PreparedInput::Wave(clip))
        }
        None => {
            let len = (canvas_seconds * 22050.0).round() as usize;
            let clip = resample(clip, 22050)?.to_mono().fit_length(len);
            Ok(PreparedInput::Feature(mel_spectrogram(
                &clip,
                MelProfile::Baseline22k,
            )?))
        }
    }
}

/// The classify pipeline: optional extractor plus the patch transformer.
pub struct PipelineModel<E: Element> {
    pub config: PipelineConfig,
    pub extractor: Option<Extractor<E>>,
    pub classifier: Ast<E>,
}

impl<E: Element> PipelineModel<E> {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        if config.genres.is_empty() {
            return Err(TrainError::Config("pipeline needs at least one genre".into()));
        }
        if config.classifier.num_classes != config.genres.len() {
            return Err(TrainError::Config(format!(
                "classifier has {} classes for {} genres",
                config.classifier.num_classes,
                config.genres.len()
            )));
        }
        let extractor = match &config.extractor {
            Some(e) => Some(Extractor::new(e, config.seed)?),
            None => None,
        };
        let classifier = Ast::new(
            config.classifier.clone(),
            config.feature_time_steps(),
            config.seed ^ 0xC1A5_51F1_E400_0000,
        )?;
        Ok(PipelineModel {
            config,
            extractor,
            classifier,
        })
    }

    pub fn preprocess(&self, clip: &AudioClip) -> Result<PreparedInput> {
        preprocess_clip(clip, self.config.extractor_kind(), self.config.canvas_seconds)
    }

    /// Feature extraction on an already-prepared input; the result is the
    /// standardized `[T, 128]` classifier input on the tape.
    pub fn feature(
        &self,
        tape: &Tape<E>,
        input: &PreparedInput,
        training: bool,
    ) -> Result<Tensor<E>> {
        let feature = match (&self.extractor, input) {
            (Some(ex), PreparedInput::Wave(clip)) => ex.forward_clip(tape, clip, training)?.0,
            (None, PreparedInput::Feature(fm)) => fm.to_tensor(),
            _ => {
                return Err(TrainError::Config(
                    "prepared input does not match the pipeline's extractor".into(),
                ))
            }
        };
        Ok(ops::standardize(tape, &feature))
    }

    pub fn forward_prepared(
        &self,
        tape: &Tape<E>,
        input: &PreparedInput,
        training: bool,
    ) -> Result<Tensor<E>> {
        let feature = self.feature(tape, input, training)?;
        Ok(self.classifier.forward(tape, &feature)?)
    }

    /// Preprocess + forward in one go (inference convenience).
    pub fn forward_clip(&self, tape: &Tape<E>, clip: &AudioClip) -> Result<Tensor<E>> {
        let prepared = self.preprocess(clip)?;
        self.forward_prepared(tape, &prepared, false)
    }

    pub fn predict(&self, clip: &AudioClip) -> Result<usize> {
        let tape = Tape::inference();
        let logits = self.forward_clip(&tape, clip)?;
        Ok(argmax(&logits.to_vec()))
    }

    pub fn state(&self) -> StateDict<E> {
        let mut out = StateDict::new();
        if let Some(ex) = &self.extractor {
            ex.state_into("extractor", &mut out);
        }
        self.classifier.state_into("classifier", &mut out);
        out
    }

    /// Trainable parameters honoring the freeze flag.
    pub fn trainable_params(&self, include_extractor: bool) -> Vec<Tensor<E>> {
        let mut out = StateDict::new();
        if include_extractor {
            if let Some(ex) = &self.extractor {
                ex.state_into("extractor", &mut out);
            }
        }
        self.classifier.state_into("classifier", &mut out);
        crate::layers::trainable(&out)
    }

    pub fn parameter_count(&self) -> usize {
        crate::layers::parameter_count(&self.state())
    }
}

pub(crate) fn argmax<E: Element>(values: &[E]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_time_steps_per_path() {
        let genres = vec!["a".into(), "b".into()];
        let mut cfg = TrainConfig {
            classifier: AstConfig::mini(16, 2, 1, 2),
            ..TrainConfig::default()
        };
        cfg.extractor = None;
        assert_eq!(PipelineConfig::from_train(&cfg, genres.clone()).feature_time_steps(), 3308);
        cfg.extractor = Some(ExtractorKind::GafxR);
        cfg.width_scale = 16;
        assert_eq!(PipelineConfig::from_train(&cfg, genres.clone()).feature_time_steps(), 3308);
        cfg.extractor = Some(ExtractorKind::GafxU);
        assert_eq!(PipelineConfig::from_train(&cfg, genres).feature_time_steps(), 1876);
    }

    #[test]
    fn config_validation_catches_bad_decay() {
        let mut cfg = TrainConfig::default();
        cfg.decay_epochs = vec![12, 12];
        assert!(cfg.validate().is_err());
        cfg.decay_epochs = vec![90];
        assert!(cfg.validate().is_err());
        cfg.decay_epochs = vec![12, 24];
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn preprocess_binds_rates_to_extractor_kind() {
        let clip = AudioClip::new(vec![vec![0.1; 22050]], 22050).unwrap();
        match preprocess_clip(&clip, Some(ExtractorKind::GafxU), 1.0).unwrap() {
            PreparedInput::Wave(w) => {
                assert_eq!(w.sample_rate(), 16000);
                assert_eq!(w.channels(), 2);
                assert_eq!(w.len(), 16000);
            }
            _ => panic!("expected a wave"),
        }
        match preprocess_clip(&clip, None, 1.0).unwrap() {
            PreparedInput::Feature(fm) => {
                assert_eq!(fm.freq_bins, 128);
                assert_eq!(fm.time_steps, 22050 / 200 + 1);
            }
            _ => panic!("expected a feature"),
        }
    }
}
