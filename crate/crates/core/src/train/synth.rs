//! Small separable audio/text task for smoke tests and acceptance runs.
//!
//! Class `Hate` pairs a high tone burst with a marker word; class `NotHate`
//! pairs a low tone with a neutral word. Both share the same filler words,
//! so either modality alone separates the classes.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{AudioWave, SAMPLE_RATE};
use crate::model::Label;
use crate::text::Vocabulary;
use crate::{Error, Result};

pub const HIGH_TONE_HZ: f64 = 3000.0;
pub const LOW_TONE_HZ: f64 = 300.0;
pub const HATE_MARKER: &str = "vexlor";
pub const NEUTRAL_MARKER: &str = "calmen";
pub const SYNTH_SECONDS: usize = 1;

const FILLERS: [&str; 10] =
    ["the", "a", "video", "said", "people", "today", "we", "they", "about", "news"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthExample {
    pub audio: AudioWave,
    pub transcript: String,
    pub label: Label,
}

/// Every word the task can emit.
pub fn synth_vocabulary() -> Vocabulary {
    let words = FILLERS.iter().copied().chain([HATE_MARKER, NEUTRAL_MARKER]);
    Vocabulary::from_tokens(words).expect("fixed word list is valid")
}

fn tone(freq: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = SAMPLE_RATE as usize * SYNTH_SECONDS;
    let freq = freq * rng.random_range(0.97..1.03);
    let amp = rng.random_range(0.3..0.6);
    let len = rng.random_range(n * 6 / 10..=n * 9 / 10);
    let start = rng.random_range(0..=n - len);
    let phase = rng.random_range(0.0..2.0 * PI);
    (0..n)
        .map(|i| {
            let noise = rng.random_range(-0.01..0.01);
            let signal = if (start..start + len).contains(&i) {
                let t = i as f64 / SAMPLE_RATE as f64;
                amp * (2.0 * PI * freq * t + phase).sin()
            } else {
                0.0
            };
            (signal + noise) as f32
        })
        .collect()
}

fn transcript(marker: &str, rng: &mut ChaCha8Rng) -> String {
    let n_fill = rng.random_range(3..=6);
    let mut words: Vec<&str> = (0..n_fill).map(|_| FILLERS[rng.random_range(0..FILLERS.len())]).collect();
    let at = rng.random_range(0..=words.len());
    words.insert(at, marker);
    words.join(" ")
}

/// `n` examples, exactly half per class, in seed-determined order.
pub fn synth_task(n: usize, seed: u64) -> Result<Vec<SynthExample>> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::Config(format!("synthetic task size must be even and >= 2, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<Label> =
        (0..n).map(|i| if i < n / 2 { Label::Hate } else { Label::NotHate }).collect();
    labels.shuffle(&mut rng);
    labels
        .into_iter()
        .map(|label| {
            let (freq, marker) = match label {
                Label::Hate => (HIGH_TONE_HZ, HATE_MARKER),
                Label::NotHate => (LOW_TONE_HZ, NEUTRAL_MARKER),
            };
            let audio = AudioWave::new(tone(freq, &mut rng), SAMPLE_RATE)?;
            let transcript = transcript(marker, &mut rng);
            Ok(SynthExample { audio, transcript, label })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{featurize, mel_center_frequencies, MelConfig};
    use crate::text::{tokenize, Tokenizer, WordTokenizer, UNK_ID};

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(synth_task(32, 7).unwrap(), synth_task(32, 7).unwrap());
        assert_ne!(synth_task(32, 7).unwrap(), synth_task(32, 8).unwrap());
    }

    #[test]
    fn exactly_balanced() {
        let data = synth_task(32, 7).unwrap();
        let hate = data.iter().filter(|e| e.label == Label::Hate).count();
        assert_eq!(hate, 16);
        assert_eq!(data.len(), 32);
    }

    #[test]
    fn odd_or_tiny_sizes_rejected() {
        assert!(synth_task(3, 0).is_err());
        assert!(synth_task(0, 0).is_err());
    }

    #[test]
    fn markers_identify_the_class_and_every_word_is_known() {
        let tok = WordTokenizer::new(synth_vocabulary());
        for e in synth_task(20, 1).unwrap() {
            let has_marker = e.transcript.split(' ').any(|w| w == HATE_MARKER);
            assert_eq!(has_marker, e.label == Label::Hate);
            let seq = tokenize(&e.transcript, &tok, 16);
            assert!(!seq.ids.contains(&UNK_ID));
            assert_eq!(seq.ids.len(), 16);
            assert!(tok.vocab().len() == 16);
        }
    }

    #[test]
    fn classes_peak_in_the_expected_mel_rows() {
        let cfg = MelConfig::default().with_chunk_seconds(SYNTH_SECONDS);
        let centers = mel_center_frequencies(&cfg);
        let nearest = |f: f64| {
            (0..centers.len())
                .min_by(|&a, &b| (centers[a] - f).abs().total_cmp(&(centers[b] - f).abs()))
                .unwrap()
        };
        for e in synth_task(6, 3).unwrap() {
            let spec = featurize(&e.audio, &cfg).unwrap();
            let energy = spec.values.sum_axis(ndarray::Axis(1));
            let peak = (0..energy.len()).max_by(|&a, &b| energy[a].total_cmp(&energy[b])).unwrap();
            let freq = if e.label == Label::Hate { HIGH_TONE_HZ } else { LOW_TONE_HZ };
            let want = nearest(freq) as i64;
            assert!((peak as i64 - want).abs() <= 2, "peak row {peak}, expected near {want}");
        }
    }
}
