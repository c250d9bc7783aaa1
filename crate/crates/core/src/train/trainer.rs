use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{macro_f1, MetricsReport};
use super::optim::{clip_grad_norm, AdamW, LrSchedule, OptimizerConfig};
use super::synth::SynthExample;
use crate::dsp::{featurize, AudioWave};
use crate::model::{Label, Model, ModelConfig};
use crate::nn::{Module, NnRng, Scalar};
use crate::text::{tokenize, TokenSequence, Tokenizer};
use crate::{Error, Result};

/// A featurized, tokenized training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub spectrogram: Array2<f32>,
    pub tokens: TokenSequence,
    pub label: Label,
}

impl Example {
    pub fn prepare<T: Tokenizer + ?Sized>(
        audio: &AudioWave,
        transcript: &str,
        label: Label,
        config: &ModelConfig,
        tokenizer: &T,
    ) -> Result<Self> {
        let spectrogram = featurize(audio, &config.mel)?.values;
        let tokens = tokenize(transcript, tokenizer, config.max_length);
        Ok(Self { spectrogram, tokens, label })
    }
}

pub fn prepare_synthetic<T: Tokenizer + ?Sized>(
    data: &[SynthExample],
    config: &ModelConfig,
    tokenizer: &T,
) -> Result<Vec<Example>> {
    data.iter()
        .map(|e| Example::prepare(&e.audio, &e.transcript, e.label, config, tokenizer))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub schedule: LrSchedule,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Weight the loss by inverse class frequency.
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            epochs: 20,
            seed: 0,
            optimizer: OptimizerConfig::default(),
            schedule: LrSchedule::default(),
            clip_norm: Some(1.0),
            class_weighting: true,
        }
    }
}

/// `N / (2 * n_c)` per class; a class with no examples gets 1.
pub fn class_weights(labels: &[Label]) -> [f64; 2] {
    let mut counts = [0usize; 2];
    for l in labels {
        counts[l.index()] += 1;
    }
    let n = labels.len() as f64;
    counts.map(|c| if c == 0 { 1.0 } else { n / (2.0 * c as f64) })
}

/// `-weight * ln p[target]` and its gradient with respect to the logits.
pub fn cross_entropy<F: Scalar>(probs: &Array1<F>, target: Label, weight: f64) -> (f64, Array1<F>) {
    let p = probs[target.index()].to_f64().unwrap().max(1e-30);
    let w = F::from_f64(weight).unwrap();
    let mut grad = probs.mapv(|x| x * w);
    grad[target.index()] -= w;
    (-weight * p.ln(), grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: MetricsReport,
    /// Unweighted mean cross-entropy.
    pub mean_loss: f64,
    pub predictions: Vec<Label>,
    pub probabilities: Vec<[f64; 2]>,
}

/// Inference over `examples` with dropout off. Leaves the model untouched.
pub fn evaluate(model: &Model<f32>, examples: &[Example]) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::Metrics("cannot evaluate an empty dataset".into()));
    }
    let mut predictions = Vec::with_capacity(examples.len());
    let mut probabilities = Vec::with_capacity(examples.len());
    let mut loss = 0.0;
    for e in examples {
        let (p, _) = model.forward_features(e.spectrogram.view(), &e.tokens, None)?;
        loss += cross_entropy(&p.probs, e.label, 1.0).0;
        predictions.push(p.label);
        probabilities.push(p.probs_f64());
    }
    let labels: Vec<Label> = examples.iter().map(|e| e.label).collect();
    let report = macro_f1(&predictions, &labels)?;
    Ok(Evaluation { report, mean_loss: loss / examples.len() as f64, predictions, probabilities })
}

/// Summary of one epoch. Epoch 0 describes the initial parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    /// Weighted training loss averaged over the epoch; absent for epoch 0.
    pub train_loss: Option<f64>,
    pub learning_rate: Option<f64>,
    /// Which split drove model selection: "dev" or "train".
    pub selection_split: String,
    pub selection: MetricsReport,
    pub selection_loss: f64,
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the best selection score.
    pub best: Model<f32>,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub steps: u64,
}

impl TrainOutcome {
    pub fn best_record(&self) -> &EpochRecord {
        &self.history[self.best_epoch]
    }
}

fn better(candidate: &EpochRecord, incumbent: &EpochRecord) -> bool {
    let (c, i) = (candidate.selection.macro_f1, incumbent.selection.macro_f1);
    c > i || (c == i && candidate.selection_loss < incumbent.selection_loss)
}

/// Mini-batch AdamW training with per-epoch evaluation.
///
/// Model selection uses `dev` when given and the training set otherwise,
/// ranking by macro F1 and then by lower loss. Shuffling and dropout draw
/// from separate streams of a generator seeded by `config.seed`.
pub fn train(
    mut model: Model<f32>,
    train_set: &[Example],
    dev_set: Option<&[Example]>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let (selection_set, selection_split) = match dev_set {
        Some(d) if !d.is_empty() => (d, "dev"),
        _ => (train_set, "train"),
    };
    let labels: Vec<Label> = train_set.iter().map(|e| e.label).collect();
    let weights = if config.class_weighting { class_weights(&labels) } else { [1.0, 1.0] };

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = NnRng::seed_from_u64(config.seed);
    dropout_rng.set_stream(2);
    let mut optimizer = AdamW::<f32>::new(config.optimizer)?;

    let record = |model: &Model<f32>, epoch, steps, train_loss, learning_rate| -> Result<EpochRecord> {
        let eval = evaluate(model, selection_set)?;
        Ok(EpochRecord {
            epoch,
            steps,
            train_loss,
            learning_rate,
            selection_split: selection_split.to_string(),
            selection: eval.report,
            selection_loss: eval.mean_loss,
        })
    };

    let initial = record(&model, 0, 0, None, None)?;
    on_epoch(&initial);
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut history = vec![initial];
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut steps = 0u64;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut weight_sum) = (0.0, 0.0);
        let mut lr = 0.0;
        for batch in order.chunks(config.batch_size) {
            model.zero_grad();
            let batch_weight: f64 = batch.iter().map(|&i| weights[train_set[i].label.index()]).sum();
            for &i in batch {
                let e = &train_set[i];
                let w = weights[e.label.index()];
                let (p, cache) =
                    model.forward_features(e.spectrogram.view(), &e.tokens, Some(&mut dropout_rng))?;
                let (loss, dlogits) = cross_entropy(&p.probs, e.label, w / batch_weight);
                if !loss.is_finite() {
                    return Err(Error::Numerical(format!("loss became {loss} at step {}", steps + 1)));
                }
                loss_sum += loss * batch_weight;
                weight_sum += w;
                model.backward(&cache, &dlogits);
            }
            steps += 1;
            lr = config.schedule.rate(steps)?;
            let mut params = model.params_mut();
            if let Some(max_norm) = config.clip_norm {
                clip_grad_norm(&mut params, max_norm);
            }
            optimizer.step(&mut params, lr)?;
        }
        let rec = record(&model, epoch, steps, Some(loss_sum / weight_sum), Some(lr))?;
        on_epoch(&rec);
        if better(&rec, &history[best_epoch]) {
            best = model.clone();
            best_epoch = epoch;
        }
        history.push(rec);
    }
    Ok(TrainOutcome { best, best_epoch, history, steps })
}
