use ndarray::{s, Array1, Array2, ArrayView2, Ix2};

use crate::nn::{
    join, AttentionMask, Decoder, DecoderCache, Dropout, DropoutCache, Encoder, EncoderCache,
    Lstm, LstmCache, Module, NnRng, ParamsMut, ParamsRef, Scalar, TransformerConfig,
};
use crate::{Error, Result};

/// Pooled summary of one pipeline: the LSTM state at the last real
/// decoder position.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput<F> {
    pub pooled: Array1<F>,
}

/// Cross-modal Transformer followed by an LSTM.
///
/// The encoder reads one modality; the decoder reads the other with a causal
/// self-mask and attends to the encoding. Which modality goes where is decided
/// by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline<F: Scalar> {
    pub encoder: Encoder<F>,
    pub decoder: Decoder<F>,
    pub lstm: Lstm<F>,
    pub lstm_dropout: Dropout,
}

pub struct PipelineCache<F> {
    encoder: EncoderCache<F>,
    decoder: DecoderCache<F>,
    dropout: DropoutCache<F, Ix2>,
    lstm: LstmCache<F>,
    hidden: Array2<F>,
    pooled_at: usize,
}

impl<F> PipelineCache<F> {
    /// Full LSTM output sequence, `[T_dec, units]`.
    pub fn hidden(&self) -> &Array2<F> {
        &self.hidden
    }

    pub fn pooled_at(&self) -> usize {
        self.pooled_at
    }
}

/// Index of the last `true`, or the last index when no mask is given.
fn last_valid(len: usize, valid: Option<&[bool]>) -> Result<usize> {
    match valid {
        None if len > 0 => Ok(len - 1),
        None => Err(Error::shape("pipeline decoder input is empty")),
        Some(v) => v
            .iter()
            .rposition(|&b| b)
            .ok_or_else(|| Error::shape("pipeline decoder input has no real positions")),
    }
}

impl<F: Scalar> Pipeline<F> {
    pub fn new(
        cfg: &TransformerConfig,
        lstm_units: usize,
        lstm_dropout: f64,
        rng: &mut NnRng,
    ) -> Result<Self> {
        Ok(Self {
            encoder: Encoder::new(cfg, rng)?,
            decoder: Decoder::new(cfg, rng)?,
            lstm: Lstm::new(cfg.d_model, lstm_units, rng),
            lstm_dropout: Dropout::new(lstm_dropout),
        })
    }

    pub fn units(&self) -> usize {
        self.lstm.units()
    }

    /// `enc_valid` / `dec_valid` mark real rows; `None` means every row is real.
    pub fn forward(
        &self,
        enc_in: ArrayView2<F>,
        enc_valid: Option<&[bool]>,
        dec_in: ArrayView2<F>,
        dec_valid: Option<&[bool]>,
        mut rng: Option<&mut NnRng>,
    ) -> Result<(PipelineOutput<F>, PipelineCache<F>)> {
        for (what, rows, valid) in [("encoder", enc_in.nrows(), enc_valid), ("decoder", dec_in.nrows(), dec_valid)] {
            if let Some(v) = valid {
                if v.len() != rows {
                    return Err(Error::shape(format!(
                        "{what} mask has {} entries for {rows} rows",
                        v.len()
                    )));
                }
            }
        }
        let pooled_at = last_valid(dec_in.nrows(), dec_valid)?;
        let enc_mask = match enc_valid {
            Some(v) => AttentionMask::padding(v.to_vec()),
            None => AttentionMask::none(),
        };
        let (memory, encoder) = self.encoder.forward(enc_in, &enc_mask, rng.as_deref_mut())?;
        let (decoded, decoder) = self.decoder.forward(
            dec_in,
            dec_valid.map(<[bool]>::to_vec),
            memory.view(),
            &enc_mask,
            rng.as_deref_mut(),
        )?;
        let (dropped, dropout) = self.lstm_dropout.forward(decoded.view(), rng);
        let (hidden, lstm) = self.lstm.forward(dropped.view())?;
        let pooled = hidden.row(pooled_at).to_owned();
        Ok((
            PipelineOutput { pooled },
            PipelineCache { encoder, decoder, dropout, lstm, hidden, pooled_at },
        ))
    }

    /// Returns `(dL/d enc_in, dL/d dec_in)`.
    pub fn backward(
        &mut self,
        cache: &PipelineCache<F>,
        dpooled: &Array1<F>,
    ) -> (Array2<F>, Array2<F>) {
        let mut dh = Array2::zeros(cache.hidden.raw_dim());
        dh.slice_mut(s![cache.pooled_at, ..]).assign(dpooled);
        let ddropped = self.lstm.backward(&cache.lstm, dh.view());
        let ddecoded = self.lstm_dropout.backward(&cache.dropout, ddropped.view());
        let (ddec_in, dmemory) = self.decoder.backward(&cache.decoder, ddecoded.view());
        let denc_in = self.encoder.backward(&cache.encoder, dmemory.view());
        (denc_in, ddec_in)
    }
}

impl<F: Scalar> Module<F> for Pipeline<F> {
    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, F>) {
        self.encoder.collect_params_mut(&join(prefix, "encoder"), out);
        self.decoder.collect_params_mut(&join(prefix, "decoder"), out);
        self.lstm.collect_params_mut(&join(prefix, "lstm"), out);
    }

    fn collect_params<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, F>) {
        self.encoder.collect_params(&join(prefix, "encoder"), out);
        self.decoder.collect_params(&join(prefix, "decoder"), out);
        self.lstm.collect_params(&join(prefix, "lstm"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::random_array;
    use rand::SeedableRng;

    fn toy(d_model: usize, seed: u64) -> Pipeline<f64> {
        let cfg = TransformerConfig { n_heads: 1, n_layers: 1, d_model, ff_dim: 4 * d_model, dropout: 0.3 };
        Pipeline::new(&cfg, d_model, 0.3, &mut NnRng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn pooled_width_matches_units() {
        let p = toy(8, 0);
        let mut rng = NnRng::seed_from_u64(9);
        let a: Array2<f64> = random_array(Ix2(6, 8), &mut rng);
        let b: Array2<f64> = random_array(Ix2(4, 8), &mut rng);
        let (out, _) = p.forward(a.view(), None, b.view(), None, None).unwrap();
        assert_eq!(out.pooled.len(), 8);
        assert!(out.pooled.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn inference_is_repeatable() {
        let p = toy(8, 1);
        let mut rng = NnRng::seed_from_u64(2);
        let a: Array2<f64> = random_array(Ix2(5, 8), &mut rng);
        let b: Array2<f64> = random_array(Ix2(3, 8), &mut rng);
        let first = p.forward(a.view(), None, b.view(), None, None).unwrap().0;
        let second = p.forward(a.view(), None, b.view(), None, None).unwrap().0;
        assert_eq!(first, second);
    }

    #[test]
    fn pools_last_real_position() {
        let p = toy(8, 3);
        let mut rng = NnRng::seed_from_u64(4);
        let a: Array2<f64> = random_array(Ix2(5, 8), &mut rng);
        let b: Array2<f64> = random_array(Ix2(6, 8), &mut rng);
        let valid = [true, true, true, true, false, false];
        let (out, cache) = p.forward(a.view(), None, b.view(), Some(&valid), None).unwrap();
        assert_eq!(cache.pooled_at(), 3);
        assert_eq!(out.pooled, cache.hidden().row(3));
        assert_ne!(out.pooled, cache.hidden().row(5));
    }

    #[test]
    fn trailing_pads_do_not_change_pooled_state() {
        // Causal decoder + LSTM: rows after the last real one cannot influence it.
        let p = toy(8, 5);
        let mut rng = NnRng::seed_from_u64(6);
        let a: Array2<f64> = random_array(Ix2(5, 8), &mut rng);
        let mut b: Array2<f64> = random_array(Ix2(6, 8), &mut rng);
        let valid = [true, true, true, false, false, false];
        let (before, _) = p.forward(a.view(), None, b.view(), Some(&valid), None).unwrap();
        b.slice_mut(s![3.., ..]).fill(42.0);
        let (after, _) = p.forward(a.view(), None, b.view(), Some(&valid), None).unwrap();
        for (x, y) in before.pooled.iter().zip(after.pooled.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn encoder_padding_is_ignored() {
        let p = toy(8, 7);
        let mut rng = NnRng::seed_from_u64(8);
        let mut a: Array2<f64> = random_array(Ix2(5, 8), &mut rng);
        let b: Array2<f64> = random_array(Ix2(3, 8), &mut rng);
        let valid = [true, true, false, false, false];
        let (before, _) = p.forward(a.view(), Some(&valid), b.view(), None, None).unwrap();
        a.slice_mut(s![2.., ..]).fill(-3.0);
        let (after, _) = p.forward(a.view(), Some(&valid), b.view(), None, None).unwrap();
        for (x, y) in before.pooled.iter().zip(after.pooled.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn all_padding_is_shape_error() {
        let p = toy(8, 0);
        let a = Array2::<f64>::zeros((2, 8));
        let r = p.forward(a.view(), None, a.view(), Some(&[false, false]), None);
        assert!(matches!(r, Err(Error::Shape(_))));
        let r = p.forward(a.view(), Some(&[true]), a.view(), None, None);
        assert!(matches!(r, Err(Error::Shape(_))));
    }
}
