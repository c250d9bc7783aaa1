//! The full classifier: speech and text sampling, two cross-modal
//! pipelines, a fusion layer and a two-way softmax head.
//!
//! ```text
//! speech ─┬─ Pipeline 1: enc(speech) → dec(text)   → LSTM → x1 ─┐
//!         │                                                    ├─ fusion → Linear → softmax
//! text  ──┴─ Pipeline 2: enc(text)   → dec(speech) → LSTM → x2 ─┘
//! ```

mod fusion;
mod pipeline;

pub use fusion::{concat_fusion, AttentiveFusion, FusionCache, FusionWeights, DEFAULT_FUSION_EPS};
pub use pipeline::{Pipeline, PipelineCache, PipelineOutput};

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::dsp::{featurize, AudioWave, MelConfig};
use crate::nn::{
    ensure_finite, join, softmax, EmbeddingCache, Linear, LinearCache, Module, NnRng, ParamsMut,
    ParamsRef, Scalar, TransformerConfig,
};
use crate::sampling::{SpeechSampling, SpeechSamplingCache, SpeechSamplingConfig, TextSampling};
use crate::text::{TokenSequence, DEFAULT_MAX_LENGTH, VOCAB_CAPACITY};
use crate::{Error, Result};

/// Binary target. The discriminants are the class indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    NotHate = 0,
    Hate = 1,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::NotHate, Label::Hate];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::NotHate),
            1 => Some(Label::Hate),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::NotHate => "NotHate",
            Label::Hate => "Hate",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "Hate" => Ok(Label::Hate),
            "NotHate" => Ok(Label::NotHate),
            other => Err(format!("unknown label {other:?} (expected Hate or NotHate)")),
        }
    }
}

/// How the pipeline outputs reach the classifier head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "attentive")]
    Attentive,
    #[serde(rename = "concat")]
    Concat,
    #[serde(rename = "pipeline1")]
    Pipeline1Only,
    #[serde(rename = "pipeline2")]
    Pipeline2Only,
}

impl Variant {
    pub const ALL: [Variant; 4] =
        [Variant::Attentive, Variant::Concat, Variant::Pipeline1Only, Variant::Pipeline2Only];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Attentive => "attentive",
            Variant::Concat => "concat",
            Variant::Pipeline1Only => "pipeline1",
            Variant::Pipeline2Only => "pipeline2",
        }
    }

    pub fn uses_pipeline1(self) -> bool {
        self != Variant::Pipeline2Only
    }

    pub fn uses_pipeline2(self) -> bool {
        self != Variant::Pipeline1Only
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Variant::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| {
            format!("unknown variant {s:?} (allowed: attentive, concat, pipeline1, pipeline2)")
        })
    }
}

/// Every size the model needs. `Default` is the full-scale configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub mel: MelConfig,
    pub speech: SpeechSamplingConfig,
    pub transformer: TransformerConfig,
    pub vocab_size: usize,
    pub max_length: usize,
    pub lstm_units: usize,
    pub lstm_dropout: f64,
    pub fusion_dim: usize,
    pub fusion_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mel: MelConfig::default(),
            speech: SpeechSamplingConfig::default(),
            transformer: TransformerConfig::default(),
            vocab_size: VOCAB_CAPACITY,
            max_length: DEFAULT_MAX_LENGTH,
            lstm_units: 512,
            lstm_dropout: 0.3,
            fusion_dim: 512,
            fusion_eps: DEFAULT_FUSION_EPS,
        }
    }
}

impl ModelConfig {
    /// Desk-scale configuration: 1 s chunks, width 32, one layer, one head.
    pub fn toy() -> Self {
        let d_model = 32;
        Self {
            mel: MelConfig::default().with_chunk_seconds(1),
            speech: SpeechSamplingConfig {
                conv1_filters: 64,
                conv2_filters: 32,
                lstm_units: d_model,
                d_model,
                ..SpeechSamplingConfig::default()
            },
            transformer: TransformerConfig {
                n_heads: 1,
                n_layers: 1,
                d_model,
                ff_dim: 4 * d_model,
                dropout: 0.3,
            },
            max_length: 16,
            lstm_units: d_model,
            fusion_dim: d_model,
            ..Self::default()
        }
    }

    /// Sets every dropout rate to zero.
    pub fn without_dropout(mut self) -> Self {
        self.transformer.dropout = 0.0;
        self.lstm_dropout = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.mel.validate()?;
        self.speech.validate()?;
        self.transformer.validate()?;
        if self.speech.n_mels != self.mel.n_mels {
            return Err(Error::Config(format!(
                "speech sampling expects {} mel channels but the front end produces {}",
                self.speech.n_mels, self.mel.n_mels
            )));
        }
        if self.speech.d_model != self.transformer.d_model {
            return Err(Error::Config(format!(
                "speech sampling width {} differs from d_model {}",
                self.speech.d_model, self.transformer.d_model
            )));
        }
        if self.vocab_size == 0 || self.max_length < 2 {
            return Err(Error::Config("vocab_size must be positive and max_length at least 2".into()));
        }
        if self.lstm_units == 0 || self.fusion_dim == 0 {
            return Err(Error::Config("lstm_units and fusion_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.lstm_dropout) {
            return Err(Error::Config(format!("lstm_dropout {} outside [0, 1)", self.lstm_dropout)));
        }
        if !(self.fusion_eps > 0.0) {
            return Err(Error::Config("fusion_eps must be positive".into()));
        }
        Ok(())
    }

    /// Number of speech positions after sampling.
    pub fn speech_len(&self) -> usize {
        self.speech.output_len(self.mel.n_frames())
    }

    /// Width of the vector the classifier head reads for `variant`.
    pub fn head_input_dim(&self, variant: Variant) -> usize {
        match variant {
            Variant::Attentive => self.fusion_dim,
            Variant::Concat => 2 * self.lstm_units,
            Variant::Pipeline1Only | Variant::Pipeline2Only => self.lstm_units,
        }
    }
}

/// Head output.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrediction<F> {
    pub logits: Array1<F>,
    pub probs: Array1<F>,
    pub label: Label,
}

impl<F: Scalar> ClassPrediction<F> {
    /// Probabilities as `f64`, indexed by `Label::index`.
    pub fn probs_f64(&self) -> [f64; 2] {
        [self.probs[0].to_f64().unwrap(), self.probs[1].to_f64().unwrap()]
    }
}

/// Linear head plus softmax. Fails with `Numerical` on non-finite input.
pub fn classify<F: Scalar>(
    head: &Linear<F>,
    fused: &Array1<F>,
) -> Result<(ClassPrediction<F>, LinearCache<F>)> {
    ensure_finite("classifier input", fused)?;
    let (logits, cache) = head.forward(fused.view().insert_axis(Axis(0)))?;
    let logits = logits.index_axis_move(Axis(0), 0);
    if logits.len() != 2 {
        return Err(Error::shape(format!("classifier head has {} outputs, expected 2", logits.len())));
    }
    let probs = softmax(logits.view());
    let label = if probs[1] > probs[0] { Label::Hate } else { Label::NotHate };
    Ok((ClassPrediction { logits, probs, label }, cache))
}

/// Everything the backward pass needs, plus the intermediate vectors for
/// inspection.
pub struct ModelCache<F> {
    speech: SpeechSamplingCache<F>,
    text: EmbeddingCache,
    speech_shape: (usize, usize),
    text_shape: (usize, usize),
    pipeline1: Option<(PipelineOutput<F>, PipelineCache<F>)>,
    pipeline2: Option<(PipelineOutput<F>, PipelineCache<F>)>,
    fusion: Option<FusionCache<F>>,
    fused: Array1<F>,
    head: LinearCache<F>,
}

impl<F> ModelCache<F> {
    pub fn pipeline1(&self) -> Option<&PipelineOutput<F>> {
        self.pipeline1.as_ref().map(|(o, _)| o)
    }

    pub fn pipeline2(&self) -> Option<&PipelineOutput<F>> {
        self.pipeline2.as_ref().map(|(o, _)| o)
    }

    pub fn fusion_weights(&self) -> Option<&FusionWeights<F>> {
        self.fusion.as_ref().map(|c| c.weights())
    }

    /// `(positions, d_model)` of the sampled speech sequence.
    pub fn speech_shape(&self) -> (usize, usize) {
        self.speech_shape
    }

    pub fn text_shape(&self) -> (usize, usize) {
        self.text_shape
    }

    /// The vector fed to the classifier head.
    pub fn fused(&self) -> &Array1<F> {
        &self.fused
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<F: Scalar> {
    config: ModelConfig,
    variant: Variant,
    pub speech: SpeechSampling<F>,
    pub text: TextSampling<F>,
    pub pipeline1: Pipeline<F>,
    pub pipeline2: Pipeline<F>,
    /// Present only for the attentive variant.
    pub fusion: Option<AttentiveFusion<F>>,
    pub head: Linear<F>,
}

impl<F: Scalar> Model<F> {
    /// Builds and initializes every component from `seed`. Both pipelines
    /// always exist so every variant shares one parameter layout up to the
    /// fusion layer and head.
    pub fn new(config: ModelConfig, variant: Variant, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = NnRng::seed_from_u64(seed);
        let t = &config.transformer;
        let speech = SpeechSampling::new(&config.speech, &mut rng)?;
        let text = TextSampling::new(config.vocab_size, t.d_model, &mut rng);
        let pipeline1 = Pipeline::new(t, config.lstm_units, config.lstm_dropout, &mut rng)?;
        let pipeline2 = Pipeline::new(t, config.lstm_units, config.lstm_dropout, &mut rng)?;
        let fusion = (variant == Variant::Attentive).then(|| {
            AttentiveFusion::new(config.lstm_units, config.fusion_dim, config.fusion_eps, &mut rng)
        });
        let head = Linear::new(config.head_input_dim(variant), 2, &mut rng);
        Ok(Self { config, variant, speech, text, pipeline1, pipeline2, fusion, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// Forward pass from a `[n_mels, n_frames]` spectrogram and a padded
    /// token sequence. Dropout is active only when `rng` is given.
    pub fn forward_features(
        &self,
        spectrogram: ArrayView2<F>,
        tokens: &TokenSequence,
        mut rng: Option<&mut NnRng>,
    ) -> Result<(ClassPrediction<F>, ModelCache<F>)> {
        let want = (self.config.mel.n_mels, self.config.mel.n_frames());
        if spectrogram.dim() != want {
            return Err(Error::shape(format!(
                "spectrogram is {:?}, model expects {want:?}",
                spectrogram.dim()
            )));
        }
        if tokens.len() != self.config.max_length {
            return Err(Error::shape(format!(
                "token sequence has length {}, model expects {}",
                tokens.len(),
                self.config.max_length
            )));
        }
        let (speech, speech_cache) = self.speech.forward(spectrogram)?;
        let (text, text_cache) = self.text.forward(tokens)?;

        let pipeline1 = if self.variant.uses_pipeline1() {
            Some(self.pipeline1.forward(
                speech.values.view(),
                None,
                text.values.view(),
                Some(&text.valid),
                rng.as_deref_mut(),
            )?)
        } else {
            None
        };
        let pipeline2 = if self.variant.uses_pipeline2() {
            Some(self.pipeline2.forward(
                text.values.view(),
                Some(&text.valid),
                speech.values.view(),
                None,
                rng,
            )?)
        } else {
            None
        };

        let x1 = pipeline1.as_ref().map(|(o, _)| &o.pooled);
        let x2 = pipeline2.as_ref().map(|(o, _)| &o.pooled);
        let (fused, fusion) = match (self.variant, x1, x2) {
            (Variant::Attentive, Some(x1), Some(x2)) => {
                let layer = self.fusion.as_ref().ok_or_else(|| {
                    Error::Config("attentive variant built without a fusion layer".into())
                })?;
                let (out, cache) = layer.forward(x1.view(), x2.view())?;
                (out, Some(cache))
            }
            (Variant::Concat, Some(x1), Some(x2)) => (concat_fusion(x1.view(), x2.view())?, None),
            (Variant::Pipeline1Only, Some(x1), _) => (x1.clone(), None),
            (Variant::Pipeline2Only, _, Some(x2)) => (x2.clone(), None),
            _ => unreachable!("variant routing always computes the pipelines it reads"),
        };
        let (prediction, head) = classify(&self.head, &fused)?;
        let cache = ModelCache {
            speech: speech_cache,
            text: text_cache,
            speech_shape: speech.values.dim(),
            text_shape: text.values.dim(),
            pipeline1,
            pipeline2,
            fusion,
            fused,
            head,
        };
        Ok((prediction, cache))
    }

    /// Inference from raw audio: featurize with the model's front-end
    /// settings, no dropout.
    pub fn predict(&self, audio: &AudioWave, tokens: &TokenSequence) -> Result<ClassPrediction<F>> {
        let spec = featurize(audio, &self.config.mel)?;
        let spec = spec.values.mapv(|v| F::from_f32(v).expect("f32 fits"));
        Ok(self.forward_features(spec.view(), tokens, None)?.0)
    }

    /// Accumulates parameter gradients given `dL/dlogits`.
    pub fn backward(&mut self, cache: &ModelCache<F>, dlogits: &Array1<F>) {
        let dfused = self
            .head
            .backward(&cache.head, dlogits.view().insert_axis(Axis(0)))
            .index_axis_move(Axis(0), 0);
        let units = self.config.lstm_units;
        let (dx1, dx2) = match self.variant {
            Variant::Attentive => {
                let fusion = self.fusion.as_mut().expect("attentive model has a fusion layer");
                let fc = cache.fusion.as_ref().expect("attentive cache has a fusion entry");
                let (a, b) = fusion.backward(fc, dfused.view());
                (Some(a), Some(b))
            }
            Variant::Concat => (
                Some(dfused.slice(s![..units]).to_owned()),
                Some(dfused.slice(s![units..]).to_owned()),
            ),
            Variant::Pipeline1Only => (Some(dfused), None),
            Variant::Pipeline2Only => (None, Some(dfused)),
        };

        let mut dspeech = Array2::<F>::zeros(cache.speech_shape);
        let mut dtext = Array2::<F>::zeros(cache.text_shape);
        if let (Some(d), Some((_, pc))) = (dx1, &cache.pipeline1) {
            let (denc, ddec) = self.pipeline1.backward(pc, &d);
            dspeech += &denc;
            dtext += &ddec;
        }
        if let (Some(d), Some((_, pc))) = (dx2, &cache.pipeline2) {
            let (denc, ddec) = self.pipeline2.backward(pc, &d);
            dtext += &denc;
            dspeech += &ddec;
        }
        self.speech.backward(&cache.speech, dspeech.view());
        self.text.backward(&cache.text, &dtext);
    }
}

impl<F: Scalar> Module<F> for Model<F> {
    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, F>) {
        self.speech.collect_params_mut(&join(prefix, "speech_sampling"), out);
        self.text.collect_params_mut(&join(prefix, "text_sampling"), out);
        self.pipeline1.collect_params_mut(&join(prefix, "pipeline1"), out);
        self.pipeline2.collect_params_mut(&join(prefix, "pipeline2"), out);
        if let Some(f) = self.fusion.as_mut() {
            f.collect_params_mut(&join(prefix, "fusion"), out);
        }
        self.head.collect_params_mut(&join(prefix, "head"), out);
    }

    fn collect_params<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, F>) {
        self.speech.collect_params(&join(prefix, "speech_sampling"), out);
        self.text.collect_params(&join(prefix, "text_sampling"), out);
        self.pipeline1.collect_params(&join(prefix, "pipeline1"), out);
        self.pipeline2.collect_params(&join(prefix, "pipeline2"), out);
        if let Some(f) = self.fusion.as_ref() {
            f.collect_params(&join(prefix, "fusion"), out);
        }
        self.head.collect_params(&join(prefix, "head"), out);
    }
}
