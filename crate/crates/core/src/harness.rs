//! Training loop and checkpoints.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetSplit, EventStream};
use crate::error::{NecError, Result};
use crate::evaluation::{evaluate, LabeledSequence};
use crate::features::{FeaturePipeline, DEFAULT_TEXT_DIM};
use crate::model::{backward, forward, ModelParams};
use crate::numerics::{adam_step, AdamConfig, AdamState};
use crate::objective::{sequence_loss, Horizon, LossConfig, WeightingMode};
use crate::rng::SeedStream;
use crate::streaming::StoppingConfig;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub tau: usize,
    pub alpha: f64,
    pub hidden_dim: usize,
    pub text_dim: usize,
    pub seed: u64,
    pub weighting: WeightingMode,
    pub horizon: Horizon,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 0.01,
            tau: 100,
            alpha: 0.7,
            hidden_dim: 32,
            text_dim: DEFAULT_TEXT_DIM,
            seed: 0,
            weighting: WeightingMode::EarlinessWeighted,
            horizon: Horizon::Global,
            patience: 25,
            batch_size: 16,
            clip_norm: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau", self.tau),
            ("hidden_dim", self.hidden_dim),
            ("text_dim", self.text_dim),
            ("patience", self.patience),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(NecError::Domain(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NecError::Domain("learning rate must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(NecError::Domain("clip norm must be positive".into()));
            }
        }
        self.stopping().validate()
    }

    pub fn stopping(&self) -> StoppingConfig {
        StoppingConfig {
            alpha: self.alpha,
            tau: self.tau,
            force_decide_at_tau: true,
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            tau: self.tau,
            weighting: self.weighting,
            horizon: self.horizon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub validation_earliness: f64,
    pub validation_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    /// Metrics of the initialized model, before any update (epoch 0).
    pub initial: EpochRecord,
    /// One record per epoch actually run.
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept; 0 means the initialization.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainingHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,train_loss,validation_loss,validation_earliness,validation_accuracy\n",
        );
        for r in std::iter::once(&self.initial).chain(&self.epochs) {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.validation_loss, r.validation_earliness, r.validation_accuracy
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: TrainConfig,
    pub params: ModelParams,
    pub pipeline: FeaturePipeline,
    pub split: DatasetSplit,
    pub history: TrainingHistory,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let header: Header = serde_json::from_str(text)?;
        if header.format_version != FORMAT_VERSION {
            return Err(NecError::Version(header.format_version));
        }
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        ckpt.params.validate()?;
        if ckpt.params.input_dim != ckpt.pipeline.input_dim() {
            return Err(NecError::shape(
                "checkpoint input dimension",
                ckpt.pipeline.input_dim(),
                ckpt.params.input_dim,
            ));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn stopping(&self) -> StoppingConfig {
        self.config.stopping()
    }

    /// Model inputs for each event, truncated at τ.
    pub fn prepare<'a, I>(&self, events: I) -> Result<Vec<LabeledSequence>>
    where
        I: IntoIterator<Item = &'a EventStream>,
    {
        prepare_sequences(&self.pipeline, events, self.config.tau)
    }
}

pub fn prepare_sequences<'a, I>(
    pipeline: &FeaturePipeline,
    events: I,
    tau: usize,
) -> Result<Vec<LabeledSequence>>
where
    I: IntoIterator<Item = &'a EventStream>,
{
    events
        .into_iter()
        .map(|e| {
            Ok(LabeledSequence {
                event_id: e.event_id.clone(),
                label: e.label,
                inputs: pipeline.event_inputs(e, tau)?,
            })
        })
        .collect()
}

struct EventGradient {
    loss: f64,
    grads: ModelParams,
}

fn event_gradient(
    params: &ModelParams,
    seq: &LabeledSequence,
    loss_cfg: &LossConfig,
    epoch: usize,
) -> Result<EventGradient> {
    let diverged = |loss: f64| NecError::Divergence {
        epoch,
        event: seq.event_id.clone(),
        loss,
    };
    let trace = forward(params, &seq.inputs)?;
    let (loss, dlogits) =
        sequence_loss(&trace.probabilities(), seq.label, loss_cfg).map_err(|_| diverged(f64::NAN))?;
    if !loss.is_finite() {
        return Err(diverged(loss));
    }
    let grads = backward(params, &trace, &dlogits).map_err(|_| diverged(loss))?;
    Ok(EventGradient { loss, grads })
}

fn mean_loss(params: &ModelParams, seqs: &[LabeledSequence], loss_cfg: &LossConfig) -> Result<f64> {
    let losses = seqs
        .par_iter()
        .map(|s| {
            let trace = forward(params, &s.inputs)?;
            Ok(sequence_loss(&trace.probabilities(), s.label, loss_cfg)?.0)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

fn epoch_record(
    epoch: usize,
    train_loss: f64,
    params: &ModelParams,
    validation: &[LabeledSequence],
    config: &TrainConfig,
) -> Result<EpochRecord> {
    let report = evaluate(params, &config.stopping(), validation)?;
    Ok(EpochRecord {
        epoch,
        train_loss,
        validation_loss: mean_loss(params, validation, &config.loss())?,
        validation_earliness: report.earliness,
        validation_accuracy: report.accuracy,
    })
}

/// Trains on the split's training events and keeps the parameters with the
/// lowest validation loss.
pub fn train(corpus: &[EventStream], split: &DatasetSplit, config: &TrainConfig) -> Result<Checkpoint> {
    config.validate()?;
    let train_events = DatasetSplit::select(corpus, &split.train);
    let val_events = DatasetSplit::select(corpus, &split.validation);
    if train_events.is_empty() {
        return Err(NecError::EmptyInput("train: training split"));
    }
    if val_events.is_empty() {
        return Err(NecError::EmptyInput("train: validation split"));
    }

    let pipeline = FeaturePipeline::fit(&train_events, config.text_dim)?;
    let train_seqs = prepare_sequences(&pipeline, train_events.iter().copied(), config.tau)?;
    let val_seqs = prepare_sequences(&pipeline, val_events.iter().copied(), config.tau)?;

    let seeds = SeedStream::new(config.seed);
    let mut params = ModelParams::init(pipeline.input_dim(), config.hidden_dim, &seeds);
    let mut adam = AdamState::new(&params, AdamConfig::with_learning_rate(config.learning_rate));
    let loss_cfg = config.loss();

    let initial_train = mean_loss(&params, &train_seqs, &loss_cfg)?;
    let initial = epoch_record(0, initial_train, &params, &val_seqs, config)?;
    let mut best = (initial.validation_loss, 0usize, params.clone());
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train_seqs.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut seeds.derive(&format!("train/epoch/{epoch}")));
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| event_gradient(&params, &train_seqs[i], &loss_cfg, epoch))
                .collect::<Result<Vec<_>>>()?;
            let mut grads = params.zeros_like();
            for r in &results {
                loss_sum += r.loss;
                grads.add_assign(&r.grads);
            }
            grads.scale(1.0 / batch.len() as f64);
            if let Some(cap) = config.clip_norm {
                let norm = grads.global_norm();
                if norm > cap {
                    grads.scale(cap / norm);
                }
            }
            adam_step(&mut params, &grads, &mut adam)?;
        }
        let record = epoch_record(
            epoch,
            loss_sum / train_seqs.len() as f64,
            &params,
            &val_seqs,
            config,
        )?;
        if record.validation_loss < best.0 {
            best = (record.validation_loss, epoch, params.clone());
        }
        epochs.push(record);
        if epoch - best.1 >= config.patience {
            stopped_early = epoch < config.epochs;
            break;
        }
    }

    Ok(Checkpoint {
        format_version: FORMAT_VERSION,
        config: config.clone(),
        params: best.2,
        pipeline,
        split: split.clone(),
        history: TrainingHistory {
            initial,
            epochs,
            best_epoch: best.1,
            stopped_early,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, split, SyntheticConfig};

    fn small_corpus() -> Vec<EventStream> {
        generate_synthetic(&SyntheticConfig {
            n_events: 60,
            min_length: 4,
            max_length: 12,
            ..Default::default()
        })
        .unwrap()
    }

    fn small_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            tau: 10,
            hidden_dim: 4,
            text_dim: 8,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { alpha: 0.4, ..Default::default() },
            TrainConfig { tau: 0, ..Default::default() },
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { clip_norm: Some(-1.0), ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn zero_epochs_keeps_initialization_and_full_earliness() {
        let corpus = small_corpus();
        let s = split(&corpus, 1).unwrap();
        let cfg = small_config(0);
        let ckpt = train(&corpus, &s, &cfg).unwrap();
        assert!(ckpt.history.epochs.is_empty());
        assert_eq!(ckpt.history.best_epoch, 0);
        assert_eq!(ckpt.history.initial.validation_earliness, 1.0);
        let init = ModelParams::init(ckpt.pipeline.input_dim(), 4, &SeedStream::new(3));
        assert_eq!(ckpt.params, init);
    }

    #[test]
    fn training_is_deterministic_and_history_complete() {
        let corpus = small_corpus();
        let s = split(&corpus, 1).unwrap();
        let cfg = small_config(3);
        let a = train(&corpus, &s, &cfg).unwrap();
        let b = train(&corpus, &s, &cfg).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.history.epochs.len(), 3);
        assert_eq!(a.history.to_csv().lines().count(), 5);
    }

    #[test]
    fn checkpoint_json_round_trip() {
        let corpus = small_corpus();
        let s = split(&corpus, 1).unwrap();
        let ckpt = train(&corpus, &s, &small_config(1)).unwrap();
        let back = Checkpoint::from_json(&ckpt.to_json().unwrap()).unwrap();
        assert_eq!(back, ckpt);

        let bumped = ckpt.to_json().unwrap().replacen(
            "\"format_version\": 1",
            "\"format_version\": 99",
            1,
        );
        assert!(matches!(Checkpoint::from_json(&bumped), Err(NecError::Version(99))));
    }

    #[test]
    fn empty_validation_split_is_rejected() {
        let corpus = small_corpus();
        let mut s = split(&corpus, 1).unwrap();
        s.validation.clear();
        assert!(matches!(
            train(&corpus, &s, &small_config(1)),
            Err(NecError::EmptyInput(_))
        ));
    }
}
