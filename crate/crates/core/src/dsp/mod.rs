//! Audio front end: waveform container, resampling, chunking and the
//! log-mel spectrogram.

mod mel;
mod wav;

pub use mel::{
    log_mel_spectrogram, mel_center_frequencies, mel_filterbank, mel_to_hz, hz_to_mel,
    LogMelSpectrogram, MelConfig, SPECTROGRAM_MAGIC, SPECTROGRAM_VERSION,
};
pub use wav::{read_wav, write_wav};

use std::f64::consts::PI;

use crate::{Error, Result};

/// Canonical sample rate of the whole front end.
pub const SAMPLE_RATE: u32 = 16_000;

/// Mono PCM signal.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioWave {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioWave {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidAudio("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidAudio(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Multiplies every sample by `gain`.
    pub fn scaled(&self, gain: f32) -> Result<Self> {
        Self::new(self.samples.iter().map(|s| s * gain).collect(), self.sample_rate)
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }
}

/// Zero crossings of the sinc kernel kept on each side of the output instant.
const SINC_ZERO_CROSSINGS: f64 = 16.0;

/// Band-limited resampling with a Hann-windowed sinc kernel.
///
/// The cutoff sits at the lower of the two Nyquist frequencies. Kernel taps
/// are renormalised per output sample, so constant signals stay constant
/// all the way to the edges.
pub fn resample(wave: &AudioWave, target_rate: u32) -> Result<AudioWave> {
    if wave.is_empty() {
        return Err(Error::InvalidAudio("cannot resample an empty wave".into()));
    }
    if target_rate == 0 {
        return Err(Error::InvalidAudio("target rate must be positive".into()));
    }
    if wave.sample_rate == target_rate {
        return Ok(wave.clone());
    }

    let ratio = target_rate as f64 / wave.sample_rate as f64;
    let n_in = wave.samples.len();
    let n_out = ((n_in as f64 * ratio).round() as usize).max(1);
    let cutoff = ratio.min(1.0);
    let half_width = SINC_ZERO_CROSSINGS / cutoff;

    let mut out = Vec::with_capacity(n_out);
    for j in 0..n_out {
        let center = j as f64 / ratio;
        let lo = ((center - half_width).ceil().max(0.0)) as usize;
        let hi = ((center + half_width).floor() as usize).min(n_in - 1);
        let mut acc = 0.0f64;
        let mut norm = 0.0f64;
        for i in lo..=hi {
            let dt = i as f64 - center;
            let window = 0.5 + 0.5 * (PI * dt / half_width).cos();
            let arg = cutoff * dt;
            let sinc = if arg.abs() < 1e-12 { 1.0 } else { (PI * arg).sin() / (PI * arg) };
            let weight = window * sinc;
            acc += weight * wave.samples[i] as f64;
            norm += weight;
        }
        out.push(if norm.abs() > 1e-12 { (acc / norm) as f32 } else { 0.0 });
    }
    AudioWave::new(out, target_rate)
}

/// Pads with trailing zeros or truncates so the result holds exactly
/// `n_samples` samples. Audio beyond the first chunk is dropped.
pub fn pad_or_trim(wave: &AudioWave, n_samples: usize) -> AudioWave {
    let mut samples = wave.samples.clone();
    samples.resize(n_samples, 0.0);
    AudioWave { samples, sample_rate: wave.sample_rate }
}

/// Resamples to the configured rate if needed, fits the chunk length and
/// computes the log-mel spectrogram.
pub fn featurize(wave: &AudioWave, config: &MelConfig) -> Result<LogMelSpectrogram> {
    let wave = if wave.sample_rate() == config.sample_rate {
        pad_or_trim(wave, config.n_samples())
    } else {
        pad_or_trim(&resample(wave, config.sample_rate)?, config.n_samples())
    };
    log_mel_spectrogram(&wave, config)
}
