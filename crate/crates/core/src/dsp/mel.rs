use std::io::{Read, Write};
use std::sync::Arc;

use ndarray::Array2;
use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::AudioWave;
use crate::{Error, Result};

pub const SPECTROGRAM_MAGIC: [u8; 4] = *b"LMEL";
pub const SPECTROGRAM_VERSION: u32 = 1;

/// Log-mel feature extraction parameters.
///
/// Defaults: 16 kHz, 400-point FFT, 80 mel channels, hop 160, 30 s chunks
/// (480,000 samples, 3,000 frames).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub n_mels: usize,
    pub hop_length: usize,
    pub chunk_length_s: usize,
    pub f_min: f64,
    /// Upper edge of the filterbank; `None` means Nyquist.
    pub f_max: Option<f64>,
    /// Power floor applied before `log10`.
    pub log_floor: f64,
    /// Values more than this many decades below the maximum are clamped.
    pub dynamic_range: f64,
    /// Apply the dynamic-range clamp and the `(x + 4) / 4` affine map.
    pub normalize: bool,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            n_fft: 400,
            n_mels: 80,
            hop_length: 160,
            chunk_length_s: 30,
            f_min: 0.0,
            f_max: None,
            log_floor: 1e-10,
            dynamic_range: 8.0,
            normalize: true,
        }
    }
}

impl MelConfig {
    pub fn with_chunk_seconds(mut self, seconds: usize) -> Self {
        self.chunk_length_s = seconds;
        self
    }

    pub fn n_samples(&self) -> usize {
        self.sample_rate as usize * self.chunk_length_s
    }

    pub fn n_frames(&self) -> usize {
        self.n_samples() / self.hop_length
    }

    pub fn n_freqs(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn f_max(&self) -> f64 {
        self.f_max.unwrap_or(self.sample_rate as f64 / 2.0)
    }

    /// Seconds between consecutive frames.
    pub fn frame_period(&self) -> f64 {
        self.hop_length as f64 / self.sample_rate as f64
    }

    /// Value every cell takes for silent input.
    pub fn floor_value(&self) -> f64 {
        let floor = self.log_floor.log10();
        if self.normalize {
            (floor + 4.0) / 4.0
        } else {
            floor
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("mel config: {m}")));
        if self.sample_rate == 0 || self.n_fft < 2 || self.n_mels == 0 || self.hop_length == 0 {
            return bad("sample_rate, n_fft, n_mels and hop_length must be positive");
        }
        if self.chunk_length_s == 0 {
            return bad("chunk_length_s must be positive");
        }
        if self.n_samples() <= self.n_fft / 2 {
            return bad("chunk too short for reflect padding");
        }
        if !(self.f_min >= 0.0 && self.f_max() > self.f_min) {
            return bad("need 0 <= f_min < f_max");
        }
        if !(self.log_floor > 0.0) || !(self.dynamic_range > 0.0) {
            return bad("log_floor and dynamic_range must be positive");
        }
        Ok(())
    }
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Edge frequencies of the filterbank: `n_mels + 2` points equally spaced
/// in mel between `f_min` and `f_max`.
fn mel_edges(cfg: &MelConfig) -> Vec<f64> {
    let lo = hz_to_mel(cfg.f_min);
    let hi = hz_to_mel(cfg.f_max());
    let n = cfg.n_mels + 2;
    (0..n)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect()
}

/// Center frequency (Hz) of every mel filter, ascending.
pub fn mel_center_frequencies(cfg: &MelConfig) -> Vec<f64> {
    let edges = mel_edges(cfg);
    edges[1..=cfg.n_mels].to_vec()
}

/// Triangular filters, shape `(n_mels, n_fft / 2 + 1)`, unnormalised.
pub fn mel_filterbank(cfg: &MelConfig) -> Array2<f64> {
    let edges = mel_edges(cfg);
    let n_freqs = cfg.n_freqs();
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
    Array2::from_shape_fn((cfg.n_mels, n_freqs), |(m, k)| {
        let f = k as f64 * bin_hz;
        let (lower, center, upper) = (edges[m], edges[m + 1], edges[m + 2]);
        let rising = (f - lower) / (center - lower);
        let falling = (upper - f) / (upper - center);
        rising.min(falling).max(0.0)
    })
}

fn periodic_hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Reflect index into `[0, n)` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i as usize
}

/// `n_mels x n_frames` matrix of log-compressed mel energies.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram {
    pub values: Array2<f32>,
    pub config: MelConfig,
}

impl LogMelSpectrogram {
    pub fn n_mels(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }

    /// Writes the flat container: magic, version, `n_mels`, `n_frames`
    /// (little-endian `u32`) followed by row-major little-endian `f32`s.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&SPECTROGRAM_MAGIC)?;
        w.write_all(&SPECTROGRAM_VERSION.to_le_bytes())?;
        w.write_all(&(self.n_mels() as u32).to_le_bytes())?;
        w.write_all(&(self.n_frames() as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.values.len() * 4);
        for v in self.values.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Reads the matrix back. The container carries no mel config.
    pub fn read_from<R: Read>(mut r: R) -> Result<Array2<f32>> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if header[..4] != SPECTROGRAM_MAGIC {
            return Err(Error::shape("not a log-mel container (bad magic)"));
        }
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != SPECTROGRAM_VERSION {
            return Err(Error::shape(format!("unsupported container version {version}")));
        }
        let (rows, cols) = (word(8) as usize, word(12) as usize);
        let mut data = vec![0u8; rows * cols * 4];
        r.read_exact(&mut data)?;
        let values = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::shape(e.to_string()))
    }
}

struct Stft {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

impl Stft {
    fn new(n_fft: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Self { fft, window: periodic_hann(n_fft) }
    }

    /// Power spectrum of every frame, shape `(n_freqs, n_frames)`.
    fn power(&self, samples: &[f32], cfg: &MelConfig) -> Array2<f64> {
        let n_fft = cfg.n_fft;
        let pad = (n_fft / 2) as isize;
        let n_frames = cfg.n_frames();
        let n_freqs = cfg.n_freqs();
        let mut power = Array2::<f64>::zeros((n_freqs, n_frames));
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        for frame in 0..n_frames {
            let start = (frame * cfg.hop_length) as isize - pad;
            for (j, slot) in buf.iter_mut().enumerate() {
                let idx = reflect(start + j as isize, samples.len());
                *slot = Complex::new(samples[idx] as f64 * self.window[j], 0.0);
            }
            self.fft.process(&mut buf);
            for k in 0..n_freqs {
                power[[k, frame]] = buf[k].norm_sqr();
            }
        }
        power
    }
}

/// Hann-windowed STFT (reflect padding of `n_fft / 2`) -> power spectrum ->
/// mel projection -> `log10` with a floor -> optional dynamic-range clamp
/// and affine normalisation.
pub fn log_mel_spectrogram(wave: &AudioWave, cfg: &MelConfig) -> Result<LogMelSpectrogram> {
    cfg.validate()?;
    if wave.len() != cfg.n_samples() {
        return Err(Error::shape(format!(
            "expected {} samples, got {} (pad or trim first)",
            cfg.n_samples(),
            wave.len()
        )));
    }
    if wave.sample_rate() != cfg.sample_rate {
        return Err(Error::shape(format!(
            "wave is {} Hz, config expects {} Hz",
            wave.sample_rate(),
            cfg.sample_rate
        )));
    }
    let power = Stft::new(cfg.n_fft).power(wave.samples(), cfg);
    let mel = mel_filterbank(cfg).dot(&power);
    let mut logmel = mel.mapv(|v| v.max(cfg.log_floor).log10());
    if cfg.normalize {
        let max = logmel.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = max - cfg.dynamic_range;
        logmel.mapv_inplace(|v| (v.max(lo) + 4.0) / 4.0);
    }
    Ok(LogMelSpectrogram { values: logmel.mapv(|v| v as f32), config: cfg.clone() })
}
