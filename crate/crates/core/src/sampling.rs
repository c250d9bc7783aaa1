//! Input-adaptation blocks that bring both modalities to `[time, d_model]`.
//!
//! Speech: `conv(s=1) -> GELU -> conv(s=2) -> GELU -> Linear` gives `z`;
//! the block emits `(z + PE) + LSTM(z)`.
//!
//! Text: masked word embedding plus sinusoidal positional encoding.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::nn::{
    gelu, gelu_backward, join, positional_encoding, Conv1d, Conv1dCache, Embedding,
    EmbeddingCache, Linear, LinearCache, Lstm, LstmCache, Module, NnRng, ParamsMut, ParamsRef,
    Scalar,
};
use crate::text::{TokenSequence, PAD_ID};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeechSamplingConfig {
    pub n_mels: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub kernel: usize,
    pub stride1: usize,
    pub stride2: usize,
    pub lstm_units: usize,
    pub d_model: usize,
}

impl Default for SpeechSamplingConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            conv1_filters: 4096,
            conv2_filters: 1024,
            kernel: 3,
            stride1: 1,
            stride2: 2,
            lstm_units: 512,
            d_model: 512,
        }
    }
}

impl SpeechSamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lstm_units != self.d_model {
            return Err(Error::Config(format!(
                "speech LSTM units ({}) must equal d_model ({}) since the paths are summed",
                self.lstm_units, self.d_model
            )));
        }
        if self.kernel.is_multiple_of(2) || self.stride1 == 0 || self.stride2 == 0 {
            return Err(Error::Config("speech convs need an odd kernel and positive strides".into()));
        }
        Ok(())
    }

    /// Convolution padding that keeps `T -> ceil(T / stride)`.
    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    /// Sampled length for `frames` spectrogram columns.
    pub fn output_len(&self, frames: usize) -> usize {
        frames.div_ceil(self.stride1).div_ceil(self.stride2)
    }
}

/// Speech branch output, `[T_s, d_model]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSpeech<F> {
    pub values: Array2<F>,
}

/// Text branch output, `[max_length, d_model]`, plus which rows are real.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledText<F> {
    pub values: Array2<F>,
    pub valid: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeechSampling<F: Scalar> {
    pub conv1: Conv1d<F>,
    pub conv2: Conv1d<F>,
    pub proj: Linear<F>,
    pub lstm: Lstm<F>,
}

pub struct SpeechSamplingCache<F> {
    conv1: Conv1dCache<F>,
    pre1: Array2<F>,
    conv2: Conv1dCache<F>,
    pre2: Array2<F>,
    proj: LinearCache<F>,
    lstm: LstmCache<F>,
}

impl<F: Scalar> SpeechSampling<F> {
    pub fn new(cfg: &SpeechSamplingConfig, rng: &mut NnRng) -> Result<Self> {
        cfg.validate()?;
        let pad = cfg.padding();
        Ok(Self {
            conv1: Conv1d::new(cfg.n_mels, cfg.conv1_filters, cfg.kernel, cfg.stride1, pad, rng),
            conv2: Conv1d::new(cfg.conv1_filters, cfg.conv2_filters, cfg.kernel, cfg.stride2, pad, rng),
            proj: Linear::new(cfg.conv2_filters, cfg.d_model, rng),
            lstm: Lstm::new(cfg.d_model, cfg.lstm_units, rng),
        })
    }

    /// `spec` is `[n_mels, frames]`.
    pub fn forward(&self, spec: ArrayView2<F>) -> Result<(SampledSpeech<F>, SpeechSamplingCache<F>)> {
        if spec.nrows() != self.conv1.in_channels() {
            return Err(Error::shape(format!(
                "speech sampling expects {} mel rows, got {}",
                self.conv1.in_channels(),
                spec.nrows()
            )));
        }
        let (pre1, conv1) = self.conv1.forward(spec)?;
        let (pre2, conv2) = self.conv2.forward(pre1.mapv(gelu).view())?;
        // [channels, T] -> [T, channels]
        let act2 = pre2.t().mapv(gelu);
        let (z, proj) = self.proj.forward(act2.view())?;
        let (recurrent, lstm) = self.lstm.forward(z.view())?;
        let pe = positional_encoding::<F>(z.nrows(), z.ncols());
        let values = z + pe + recurrent;
        Ok((SampledSpeech { values }, SpeechSamplingCache { conv1, pre1, conv2, pre2, proj, lstm }))
    }

    /// Accumulates gradients; the spectrogram gradient is discarded.
    pub fn backward(&mut self, cache: &SpeechSamplingCache<F>, dy: ArrayView2<F>) {
        let dz = &dy + &self.lstm.backward(&cache.lstm, dy);
        let dact2 = self.proj.backward(&cache.proj, dz.view());
        let dpre2 = gelu_backward(cache.pre2.view(), dact2.t());
        let dact1 = self.conv2.backward(&cache.conv2, dpre2.view());
        let dpre1 = gelu_backward(cache.pre1.view(), dact1.view());
        self.conv1.backward(&cache.conv1, dpre1.view());
    }
}

impl<F: Scalar> Module<F> for SpeechSampling<F> {
    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, F>) {
        self.conv1.collect_params_mut(&join(prefix, "conv1"), out);
        self.conv2.collect_params_mut(&join(prefix, "conv2"), out);
        self.proj.collect_params_mut(&join(prefix, "proj"), out);
        self.lstm.collect_params_mut(&join(prefix, "lstm"), out);
    }

    fn collect_params<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, F>) {
        self.conv1.collect_params(&join(prefix, "conv1"), out);
        self.conv2.collect_params(&join(prefix, "conv2"), out);
        self.proj.collect_params(&join(prefix, "proj"), out);
        self.lstm.collect_params(&join(prefix, "lstm"), out);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextSampling<F: Scalar> {
    pub embedding: Embedding<F>,
}

impl<F: Scalar> TextSampling<F> {
    pub fn new(vocab_size: usize, d_model: usize, rng: &mut NnRng) -> Self {
        Self { embedding: Embedding::new(vocab_size, d_model, PAD_ID, rng) }
    }

    pub fn forward(&self, seq: &TokenSequence) -> Result<(SampledText<F>, EmbeddingCache)> {
        let (emb, cache) = self.embedding.forward(&seq.ids)?;
        let values = emb + positional_encoding::<F>(seq.len(), self.embedding.dim());
        Ok((SampledText { values, valid: seq.valid() }, cache))
    }

    pub fn backward(&mut self, cache: &EmbeddingCache, dy: &Array2<F>) {
        self.embedding.backward(cache, dy);
    }
}

impl<F: Scalar> Module<F> for TextSampling<F> {
    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, F>) {
        self.embedding.collect_params_mut(&join(prefix, "embedding"), out);
    }

    fn collect_params<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, F>) {
        self.embedding.collect_params(&join(prefix, "embedding"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{random_array, sigmoid};
    use crate::text::{BOS_ID, EOS_ID};
    use ndarray::{s, Array1, Ix2};
    use rand::SeedableRng;

    fn toy_cfg() -> SpeechSamplingConfig {
        SpeechSamplingConfig {
            n_mels: 80,
            conv1_filters: 6,
            conv2_filters: 5,
            kernel: 3,
            stride1: 1,
            stride2: 2,
            lstm_units: 4,
            d_model: 4,
        }
    }

    #[test]
    fn time_axis_is_halved() {
        let cfg = toy_cfg();
        let block = SpeechSampling::<f32>::new(&cfg, &mut NnRng::seed_from_u64(0)).unwrap();
        for frames in [1, 2, 7, 8, 100] {
            let (out, _) = block.forward(Array2::zeros((80, frames)).view()).unwrap();
            assert_eq!(out.values.dim(), (frames.div_ceil(2), 4));
            assert_eq!(cfg.output_len(frames), frames.div_ceil(2));
        }
        assert_eq!(SpeechSamplingConfig::default().output_len(3000), 1500);
    }

    #[test]
    fn zero_weights_leave_positional_encoding() {
        let mut block = SpeechSampling::<f64>::new(&toy_cfg(), &mut NnRng::seed_from_u64(1)).unwrap();
        for (name, p) in block.params_mut() {
            if !name.starts_with("lstm") {
                let mut v = p.value;
                v.fill(0.0);
            }
        }
        let (out, _) = block.forward(Array2::zeros((80, 8)).view()).unwrap();
        let pe = positional_encoding::<f64>(4, 4);
        assert_eq!(out.values, pe);
        assert_eq!(out.values.row(0).to_vec(), vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn matches_composed_layer_oracles() {
        let cfg = toy_cfg();
        let mut rng = NnRng::seed_from_u64(2);
        let block = SpeechSampling::<f64>::new(&cfg, &mut rng).unwrap();
        let spec: Array2<f64> = random_array(Ix2(80, 8), &mut rng);
        let (out, _) = block.forward(spec.view()).unwrap();

        // Straight-line recomputation with loops.
        let conv = |c: &Conv1d<f64>, x: &Array2<f64>| {
            let (o, i, k) = c.weight.value.dim();
            let t_out = (x.ncols() + 2 * c.padding - k) / c.stride + 1;
            Array2::from_shape_fn((o, t_out), |(oc, t)| {
                let mut acc = c.bias.value[oc];
                for ic in 0..i {
                    for j in 0..k {
                        let src = (t * c.stride + j) as isize - c.padding as isize;
                        if src >= 0 && (src as usize) < x.ncols() {
                            acc += c.weight.value[[oc, ic, j]] * x[[ic, src as usize]];
                        }
                    }
                }
                acc
            })
        };
        let a1 = conv(&block.conv1, &spec).mapv(gelu);
        let a2 = conv(&block.conv2, &a1).mapv(gelu);
        let steps = a2.ncols();
        let d = cfg.d_model;
        let z = Array2::from_shape_fn((steps, d), |(t, o)| {
            (0..a2.nrows()).map(|c| a2[[c, t]] * block.proj.weight.value[[c, o]]).sum::<f64>()
                + block.proj.bias.value[o]
        });
        let u = cfg.lstm_units;
        let (mut h, mut c) = (Array1::<f64>::zeros(u), Array1::<f64>::zeros(u));
        let mut want = Array2::<f64>::zeros((steps, d));
        for t in 0..steps {
            let gate = |g: usize, j: usize| {
                let col = g * u + j;
                let mut acc = block.lstm.bias.value[col];
                for i in 0..d {
                    acc += z[[t, i]] * block.lstm.w_input.value[[i, col]];
                }
                for i in 0..u {
                    acc += h[i] * block.lstm.w_hidden.value[[i, col]];
                }
                acc
            };
            let mut h_new = Array1::zeros(u);
            for j in 0..u {
                let (ig, fg, gg, og) =
                    (sigmoid(gate(0, j)), sigmoid(gate(1, j)), gate(2, j).tanh(), sigmoid(gate(3, j)));
                c[j] = fg * c[j] + ig * gg;
                h_new[j] = og * c[j].tanh();
            }
            h = h_new;
            for j in 0..d {
                let i2 = (j - j % 2) as f64;
                let angle = t as f64 / 10_000f64.powf(i2 / d as f64);
                let pe = if j % 2 == 0 { angle.sin() } else { angle.cos() };
                want[[t, j]] = z[[t, j]] + pe + h[j];
            }
        }
        let diff = (&out.values - &want).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(diff < 1e-5, "{diff}");
    }

    #[test]
    fn wrong_mel_count() {
        let block = SpeechSampling::<f32>::new(&toy_cfg(), &mut NnRng::seed_from_u64(0)).unwrap();
        assert!(matches!(block.forward(Array2::zeros((64, 8)).view()), Err(Error::Shape(_))));
    }

    #[test]
    fn text_pads_are_pure_positional_encoding() {
        let mut rng = NnRng::seed_from_u64(3);
        let block = TextSampling::<f64>::new(50, 8, &mut rng);
        let seq = TokenSequence { ids: vec![0; 6], attention_mask: vec![0; 6] };
        let (out, _) = block.forward(&seq).unwrap();
        assert_eq!(out.values, positional_encoding::<f64>(6, 8));
        assert_eq!(out.values.dim(), (6, 8));

        let seq = TokenSequence { ids: vec![BOS_ID, 17, EOS_ID, 0], attention_mask: vec![1, 1, 1, 0] };
        let (out, _) = block.forward(&seq).unwrap();
        let pe1 = positional_encoding::<f64>(4, 8).row(1).to_owned();
        let want = &block.embedding.table.value.row(17) + &pe1;
        assert_eq!(out.values.row(1), want);
        assert_eq!(out.valid, vec![true, true, true, false]);
        assert_eq!(out.values.slice(s![3, ..]), positional_encoding::<f64>(4, 8).row(3));
    }

    #[test]
    fn text_id_out_of_range() {
        let block = TextSampling::<f32>::new(10, 4, &mut NnRng::seed_from_u64(0));
        let seq = TokenSequence { ids: vec![1, 12], attention_mask: vec![1, 1] };
        assert!(matches!(block.forward(&seq), Err(Error::Index(_))));
    }

    #[test]
    fn lstm_units_must_match_width() {
        let cfg = SpeechSamplingConfig { lstm_units: 256, ..SpeechSamplingConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
