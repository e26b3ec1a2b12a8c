//! Turning rendered or recorded utterances into normalized training examples.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{self, AudioConfig, AudioError, FeatureNormalizer, Spectrogram};
use crate::phoneme::{PhonemeError, PhonemeTable};
use crate::synthlang::Utterance;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Phoneme(#[from] PhonemeError),
    #[error("corpus sample rate {corpus} Hz does not match audio config {config} Hz")]
    SampleRate { corpus: u32, config: u32 },
}

/// Mel and linear normalizers fitted on one corpus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mel: FeatureNormalizer,
    pub linear: FeatureNormalizer,
}

/// One training pair: phoneme ids (EOS-terminated) and normalized `[T, bins]` features.
#[derive(Clone, Debug)]
pub struct Example<T> {
    pub id: String,
    pub speaker: usize,
    pub lang: String,
    pub phonemes: Vec<String>,
    pub ids: Vec<usize>,
    pub mel: Tensor<T>,
    pub linear: Tensor<T>,
}

/// Raw (unnormalized) spectrograms of one utterance.
pub struct RawFeatures<T> {
    pub mel: Spectrogram<T>,
    pub linear: Spectrogram<T>,
}

pub fn extract<T: Scalar>(waveform: &[f32], config: &AudioConfig) -> Result<RawFeatures<T>, AudioError> {
    let wave: Vec<T> = waveform.iter().map(|&v| T::of(v as f64)).collect();
    let linear = audio::stft_magnitude(&wave, config)?;
    let mel = audio::mel_spectrogram(&linear, config)?;
    Ok(RawFeatures { mel, linear })
}

/// Extracts features for every utterance and fits normalizers over all of them.
pub fn prepare<T: Scalar>(
    utterances: &[Utterance],
    sample_rate: u32,
    table: &PhonemeTable,
    config: &AudioConfig,
    stats: Option<FeatureStats>,
) -> Result<(Vec<Example<T>>, FeatureStats), DatasetError> {
    if sample_rate != config.sample_rate {
        return Err(DatasetError::SampleRate {
            corpus: sample_rate,
            config: config.sample_rate,
        });
    }
    let raw: Vec<RawFeatures<T>> = utterances
        .iter()
        .map(|u| extract(&u.waveform, config))
        .collect::<Result<_, _>>()?;
    let stats = stats.unwrap_or_else(|| FeatureStats {
        mel: FeatureNormalizer::fit(raw.iter().map(|r| &r.mel)),
        linear: FeatureNormalizer::fit(raw.iter().map(|r| &r.linear)),
    });
    let examples = utterances
        .iter()
        .zip(raw)
        .map(|(u, r)| {
            Ok(Example {
                id: u.id.clone(),
                speaker: u.speaker,
                lang: u.lang.clone(),
                phonemes: u.phonemes.clone(),
                ids: table.encode(&u.lang, &u.phonemes)?,
                mel: stats.mel.apply(&r.mel).to_tensor(),
                linear: stats.linear.apply(&r.linear).to_tensor(),
            })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    Ok((examples, stats))
}

/// Holds out `fraction` of each speaker's examples (at least one when the speaker has two or
/// more), chosen by a seeded shuffle. Order within each split follows the input order.
pub fn split_validation<T: Clone>(examples: &[Example<T>], fraction: f64, seed: u64) -> (Vec<Example<T>>, Vec<Example<T>>) {
    let mut by_speaker: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, e) in examples.iter().enumerate() {
        by_speaker.entry(e.speaker).or_default().push(i);
    }
    let mut held = vec![false; examples.len()];
    for (speaker, mut idx) in by_speaker {
        let n = idx.len();
        let k = if n < 2 { 0 } else { ((n as f64 * fraction).round() as usize).clamp(1, n - 1) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (speaker as u64).wrapping_mul(0x9E37_79B9));
        idx.shuffle(&mut rng);
        for &i in &idx[..k] {
            held[i] = true;
        }
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (e, h) in examples.iter().zip(held) {
        if h {
            val.push(e.clone());
        } else {
            train.push(e.clone());
        }
    }
    (train, val)
}
