//! Waveform ↔ spectrogram conversions: STFT magnitude, mel features, Griffin-Lim inversion,
//! feature normalization and 16-bit WAV I/O.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("invalid audio config: {0}")]
    Config(String),
    #[error("waveform of {len} samples is shorter than one frame ({frame} samples)")]
    TooShort { len: usize, frame: usize },
    #[error("expected a {expected:?} spectrogram, got {got:?}")]
    WrongKind { expected: SpecKind, got: SpecKind },
    #[error("spectrogram has {got} bins, config expects {expected}")]
    Bins { expected: usize, got: usize },
    #[error("spectrogram contains NaN")]
    NaN,
    #[error("wav {path}: {message}")]
    Wav { path: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AudioConfig {
    pub sample_rate: u32,
    pub frame_length: usize,
    pub frame_shift: usize,
    pub fft_size: usize,
    pub mel_bins: usize,
    pub preemphasis: f64,
    pub griffin_lim_iters: usize,
    pub magnitude_power: f64,
}

impl Default for AudioConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            frame_length: 800,
            frame_shift: 200,
            fft_size: 1024,
            mel_bins: 80,
            preemphasis: 0.97,
            griffin_lim_iters: 60,
            magnitude_power: 1.5,
        }
    }
}

impl AudioConfig {
    pub fn linear_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self) -> Result<(), AudioError> {
        let bad = |m: &str| Err(AudioError::Config(m.to_string()));
        if self.sample_rate == 0 || self.frame_shift == 0 || self.fft_size < 2 {
            return bad("sample_rate, frame_shift and fft_size must be positive");
        }
        if !(self.frame_shift <= self.frame_length && self.frame_length <= self.fft_size) {
            return bad("need frame_shift <= frame_length <= fft_size");
        }
        if self.mel_bins == 0 || self.mel_bins >= self.linear_bins() {
            return bad("need 0 < mel_bins < fft_size/2 + 1");
        }
        if self.magnitude_power <= 0.0 {
            return bad("magnitude_power must be positive");
        }
        Ok(())
    }

    /// Frames produced for a waveform of `n` samples: 1 + ⌊(n − frame_length)/frame_shift⌋.
    pub fn frame_count(&self, n: usize) -> usize {
        if n < self.frame_length {
            0
        } else {
            1 + (n - self.frame_length) / self.frame_shift
        }
    }

    /// Frequency in Hz of linear bin `k`.
    pub fn bin_hz(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.fft_size as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpecKind {
    Mel,
    Linear,
}

/// Nonnegative `[frames, bins]` magnitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram<T> {
    pub kind: SpecKind,
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Spectrogram<T> {
    pub fn new(kind: SpecKind, frames: usize, bins: usize, data: Vec<T>) -> Self {
        assert_eq!(frames * bins, data.len(), "spectrogram data length");
        Self {
            kind,
            frames,
            bins,
            data,
        }
    }

    pub fn frame(&self, t: usize) -> &[T] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(vec![self.frames, self.bins], self.data.clone()).expect("consistent spectrogram")
    }

    pub fn from_tensor(kind: SpecKind, t: &Tensor<T>) -> Self {
        Self::new(kind, t.rows(), t.cols(), t.data().to_vec())
    }

    /// Per-bin magnitude summed over frames.
    pub fn bin_totals(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.bins];
        for t in 0..self.frames {
            for (o, &v) in out.iter_mut().zip(self.frame(t)) {
                *o += v;
            }
        }
        out
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Periodic Hann window.
pub fn hann<T: Scalar>(len: usize) -> Vec<T> {
    (0..len)
        .map(|n| T::of(0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos()))
        .collect()
}

pub fn preemphasize<T: Scalar>(x: &[T], coef: f64) -> Vec<T> {
    let c = T::of(coef);
    let mut out = Vec::with_capacity(x.len());
    for (i, &v) in x.iter().enumerate() {
        out.push(if i == 0 { v } else { v - c * x[i - 1] });
    }
    out
}

pub fn deemphasize<T: Scalar>(x: &[T], coef: f64) -> Vec<T> {
    let c = T::of(coef);
    let mut out: Vec<T> = Vec::with_capacity(x.len());
    for (i, &v) in x.iter().enumerate() {
        let prev = if i == 0 { T::zero() } else { out[i - 1] };
        out.push(v + c * prev);
    }
    out
}

/// Framed FFT analysis and least-squares overlap-add synthesis for one configuration.
pub struct Stft<T: Scalar> {
    frame_length: usize,
    frame_shift: usize,
    fft_size: usize,
    window: Vec<T>,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Scalar> Stft<T> {
    pub fn new(config: &AudioConfig) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            frame_length: config.frame_length,
            frame_shift: config.frame_shift,
            fft_size: config.fft_size,
            window: hann(config.frame_length),
            forward: planner.plan_fft_forward(config.fft_size),
            inverse: planner.plan_fft_inverse(config.fft_size),
        }
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Half spectra `[frames][fft_size/2 + 1]` of Hann-windowed, zero-padded frames.
    pub fn analyze(&self, signal: &[T]) -> Vec<Vec<Complex<T>>> {
        let frames = if signal.len() < self.frame_length {
            0
        } else {
            1 + (signal.len() - self.frame_length) / self.frame_shift
        };
        let mut buf = vec![Complex::new(T::zero(), T::zero()); self.fft_size];
        (0..frames)
            .map(|t| {
                let start = t * self.frame_shift;
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = if i < self.frame_length {
                        Complex::new(signal[start + i] * self.window[i], T::zero())
                    } else {
                        Complex::new(T::zero(), T::zero())
                    };
                }
                self.forward.process(&mut buf);
                buf[..self.bins()].to_vec()
            })
            .collect()
    }

    /// Signal minimizing Σ‖STFT(x) − Y‖² over the full Hermitian spectrum.
    pub fn synthesize(&self, spectra: &[Vec<Complex<T>>]) -> Vec<T> {
        if spectra.is_empty() {
            return Vec::new();
        }
        let len = (spectra.len() - 1) * self.frame_shift + self.frame_length;
        let mut out = vec![T::zero(); len];
        let mut wsum = vec![T::zero(); len];
        let n = self.fft_size;
        let half = self.bins();
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        let scale = T::one() / T::of(n as f64);
        for (t, spec) in spectra.iter().enumerate() {
            buf[..half].copy_from_slice(&spec[..half]);
            for k in half..n {
                buf[k] = spec[n - k].conj();
            }
            self.inverse.process(&mut buf);
            let start = t * self.frame_shift;
            for i in 0..self.frame_length {
                let w = self.window[i];
                out[start + i] += w * buf[i].re * scale;
                wsum[start + i] += w * w;
            }
        }
        let floor = T::of(1e-10);
        for (o, &w) in out.iter_mut().zip(&wsum) {
            *o = if w > floor { *o / w } else { T::zero() };
        }
        out
    }
}

/// Pre-emphasized, Hann-windowed magnitude spectrogram.
pub fn stft_magnitude<T: Scalar>(waveform: &[T], config: &AudioConfig) -> Result<Spectrogram<T>, AudioError> {
    config.validate()?;
    if waveform.len() < config.frame_length {
        return Err(AudioError::TooShort {
            len: waveform.len(),
            frame: config.frame_length,
        });
    }
    let stft = Stft::new(config);
    let emphasized = preemphasize(waveform, config.preemphasis);
    let spectra = stft.analyze(&emphasized);
    let bins = stft.bins();
    let data = spectra.iter().flat_map(|f| f.iter().map(|c| c.norm())).collect();
    Ok(Spectrogram::new(SpecKind::Linear, spectra.len(), bins, data))
}

/// Triangular HTK-mel filterbank `[mel_bins][fft_size/2 + 1]` spanning 0 Hz to Nyquist.
pub fn mel_filterbank(config: &AudioConfig) -> Vec<Vec<f64>> {
    let nyquist = config.sample_rate as f64 / 2.0;
    let (lo, hi) = (hz_to_mel(0.0), hz_to_mel(nyquist));
    let points: Vec<f64> = (0..config.mel_bins + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (config.mel_bins + 1) as f64))
        .collect();
    (0..config.mel_bins)
        .map(|m| {
            let (left, center, right) = (points[m], points[m + 1], points[m + 2]);
            (0..config.linear_bins())
                .map(|k| {
                    let f = config.bin_hz(k);
                    let up = (f - left) / (center - left);
                    let down = (right - f) / (right - center);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Center frequency in Hz of each mel filter.
pub fn mel_center_frequencies(config: &AudioConfig) -> Vec<f64> {
    let nyquist = config.sample_rate as f64 / 2.0;
    let (lo, hi) = (hz_to_mel(0.0), hz_to_mel(nyquist));
    (1..=config.mel_bins)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (config.mel_bins + 1) as f64))
        .collect()
}

pub fn mel_spectrogram<T: Scalar>(linear: &Spectrogram<T>, config: &AudioConfig) -> Result<Spectrogram<T>, AudioError> {
    if linear.kind != SpecKind::Linear {
        return Err(AudioError::WrongKind {
            expected: SpecKind::Linear,
            got: linear.kind,
        });
    }
    if linear.bins != config.linear_bins() {
        return Err(AudioError::Bins {
            expected: config.linear_bins(),
            got: linear.bins,
        });
    }
    let bank: Vec<Vec<T>> = mel_filterbank(config)
        .into_iter()
        .map(|row| row.into_iter().map(T::of).collect())
        .collect();
    let mut data = Vec::with_capacity(linear.frames * bank.len());
    for t in 0..linear.frames {
        let frame = linear.frame(t);
        for row in &bank {
            data.push(crate::tensor::kernels::dot(row, frame));
        }
    }
    Ok(Spectrogram::new(SpecKind::Mel, linear.frames, bank.len(), data))
}

/// Squared Frobenius norm over the full (Hermitian) spectrum: interior bins count twice.
fn full_spectrum_weight(k: usize, bins: usize) -> f64 {
    if k == 0 || k == bins - 1 {
        1.0
    } else {
        2.0
    }
}

/// Spectral convergence ‖|X| − M‖ / ‖M‖ over the full spectrum.
pub fn spectral_convergence<T: Scalar>(spectra: &[Vec<Complex<T>>], target: &Spectrogram<T>) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, frame) in spectra.iter().enumerate().take(target.frames) {
        for (k, c) in frame.iter().enumerate() {
            let w = full_spectrum_weight(k, target.bins);
            let m = target.frame(t)[k].as_f64();
            num += w * (c.norm().as_f64() - m).powi(2);
            den += w * m * m;
        }
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

/// Reconstruction result with the spectral convergence measured at every iteration.
pub struct GriffinLimOutput<T> {
    pub waveform: Vec<T>,
    pub convergence: Vec<f64>,
}

/// Griffin-Lim phase recovery from a linear magnitude spectrogram.
///
/// Magnitudes are raised to `magnitude_power` and rescaled so the peak magnitude is kept.
/// Phases start uniformly random from `seed`.
pub fn griffin_lim<T: Scalar>(linear: &Spectrogram<T>, config: &AudioConfig, seed: u64) -> Result<Vec<T>, AudioError> {
    Ok(griffin_lim_traced(linear, config, seed)?.waveform)
}

pub fn griffin_lim_traced<T: Scalar>(
    linear: &Spectrogram<T>,
    config: &AudioConfig,
    seed: u64,
) -> Result<GriffinLimOutput<T>, AudioError> {
    config.validate()?;
    if linear.kind != SpecKind::Linear {
        return Err(AudioError::WrongKind {
            expected: SpecKind::Linear,
            got: linear.kind,
        });
    }
    if linear.bins != config.linear_bins() {
        return Err(AudioError::Bins {
            expected: config.linear_bins(),
            got: linear.bins,
        });
    }
    if linear.data.iter().any(|v| v.is_nan()) {
        return Err(AudioError::NaN);
    }
    let peak = linear.data.iter().fold(0.0f64, |a, v| a.max(v.abs().as_f64()));
    let power = config.magnitude_power;
    let rescale = if peak > 0.0 { peak.powf(1.0 - power) } else { 1.0 };
    let target = Spectrogram::new(
        SpecKind::Linear,
        linear.frames,
        linear.bins,
        linear
            .data
            .iter()
            .map(|v| T::of(v.abs().as_f64().powf(power) * rescale))
            .collect(),
    );
    let stft = Stft::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spectra: Vec<Vec<Complex<T>>> = (0..target.frames)
        .map(|t| {
            target
                .frame(t)
                .iter()
                .enumerate()
                .map(|(k, &m)| {
                    // DC and Nyquist stay real so the spectrum is Hermitian-consistent.
                    let phase = if k == 0 || k == target.bins - 1 {
                        if rng.gen_bool(0.5) { 0.0 } else { PI }
                    } else {
                        rng.gen_range(0.0..2.0 * PI)
                    };
                    Complex::from_polar(m, T::of(phase))
                })
                .collect()
        })
        .collect();
    let mut signal = stft.synthesize(&spectra);
    let mut convergence = Vec::with_capacity(config.griffin_lim_iters + 1);
    for _ in 0..config.griffin_lim_iters {
        let estimate = stft.analyze(&signal);
        convergence.push(spectral_convergence(&estimate, &target));
        for (t, frame) in estimate.iter().enumerate() {
            for (k, c) in frame.iter().enumerate() {
                let m = target.frame(t)[k];
                let norm = c.norm();
                spectra[t][k] = if norm > T::zero() {
                    *c * (m / norm)
                } else {
                    Complex::new(m, T::zero())
                };
            }
        }
        signal = stft.synthesize(&spectra);
    }
    convergence.push(spectral_convergence(&stft.analyze(&signal), &target));
    let one = T::one();
    let waveform = deemphasize(&signal, config.preemphasis)
        .into_iter()
        .map(|v| v.max(-one).min(one))
        .collect();
    Ok(GriffinLimOutput {
        waveform,
        convergence,
    })
}

/// Log compression plus min-max scaling to [0, 1], fitted per corpus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    pub log_min: f64,
    pub log_max: f64,
}

pub const LOG_FLOOR: f64 = 1e-5;

impl FeatureNormalizer {
    /// Fits the log range over every value of every spectrogram.
    pub fn fit<'a, T: Scalar + 'a>(specs: impl IntoIterator<Item = &'a Spectrogram<T>>) -> Self {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in specs {
            for v in &s.data {
                let l = v.as_f64().max(LOG_FLOOR).ln();
                lo = lo.min(l);
                hi = hi.max(l);
            }
        }
        if !lo.is_finite() {
            lo = LOG_FLOOR.ln();
            hi = 0.0;
        }
        if hi - lo < 1e-6 {
            hi = lo + 1.0;
        }
        Self {
            log_min: lo,
            log_max: hi,
        }
    }

    pub fn normalize<T: Scalar>(&self, v: T) -> T {
        let l = v.as_f64().max(LOG_FLOOR).ln();
        T::of(((l - self.log_min) / (self.log_max - self.log_min)).clamp(0.0, 1.0))
    }

    pub fn denormalize<T: Scalar>(&self, v: T) -> T {
        let x = v.as_f64().clamp(0.0, 1.0);
        T::of((x * (self.log_max - self.log_min) + self.log_min).exp())
    }

    pub fn apply<T: Scalar>(&self, s: &Spectrogram<T>) -> Spectrogram<T> {
        Spectrogram::new(s.kind, s.frames, s.bins, s.data.iter().map(|&v| self.normalize(v)).collect())
    }

    pub fn invert<T: Scalar>(&self, s: &Spectrogram<T>) -> Spectrogram<T> {
        Spectrogram::new(s.kind, s.frames, s.bins, s.data.iter().map(|&v| self.denormalize(v)).collect())
    }
}

/// Writes 16-bit PCM mono; samples are clipped to [−1, 1].
pub fn write_wav<T: Scalar>(path: impl AsRef<Path>, samples: &[T], sample_rate: u32) -> Result<(), AudioError> {
    let path = path.as_ref();
    let err = |e: hound::Error| AudioError::Wav {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(err)?;
    for &s in samples {
        let v = (s.as_f64().clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(err)?;
    }
    w.finalize().map_err(err)
}

/// Reads 16-bit PCM mono as floats in [−1, 1] plus the sample rate.
pub fn read_wav<T: Scalar>(path: impl AsRef<Path>) -> Result<(Vec<T>, u32), AudioError> {
    let path = path.as_ref();
    let err = |m: String| AudioError::Wav {
        path: path.display().to_string(),
        message: m,
    };
    let mut r = hound::WavReader::open(path).map_err(|e| err(e.to_string()))?;
    let spec = r.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(err(format!("expected 16-bit PCM mono, got {spec:?}")));
    }
    let samples = r
        .samples::<i16>()
        .map(|s| s.map(|v| T::of(v as f64 / 32767.0)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| err(e.to_string()))?;
    Ok((samples, spec.sample_rate))
}

/// Quantizes samples the same way a 16-bit WAV round trip would.
pub fn quantize_pcm16<T: Scalar>(samples: &[T]) -> Vec<T> {
    samples
        .iter()
        .map(|s| T::of((s.as_f64().clamp(-1.0, 1.0) * 32767.0).round() / 32767.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, amp: f64, n: usize, sr: f64) -> Vec<f64> {
        (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / sr).sin()).collect()
    }

    fn argmax(v: &[f64]) -> usize {
        v.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
            .0
    }

    #[test]
    fn frame_count_of_one_second_silence() {
        let cfg = AudioConfig::default();
        let s = stft_magnitude(&vec![0.0f64; 16_000], &cfg).unwrap();
        assert_eq!(s.frames, 1 + (16_000 - 800) / 200);
        assert_eq!(s.frames, 77);
        assert_eq!(s.bins, 513);
        assert!(s.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let cfg = AudioConfig::default();
        let s = stft_magnitude(&sine(440.0, 1.0, 16_000, 16_000.0), &cfg).unwrap();
        let expected = (440.0f64 * 1024.0 / 16_000.0).round() as usize;
        assert_eq!(expected, 28);
        for t in 0..s.frames {
            assert_eq!(argmax(s.frame(t)), expected, "frame {t}");
        }
    }

    #[test]
    fn impulse_only_touches_first_frame() {
        let cfg = AudioConfig::default();
        let mut x = vec![0.0f64; 4000];
        x[0] = 1.0;
        let s = stft_magnitude(&x, &cfg).unwrap();
        assert!(s.frame(0).iter().all(|&v| v > 0.0));
        for t in 1..s.frames {
            assert!(s.frame(t).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn short_waveform_rejected() {
        let cfg = AudioConfig::default();
        assert!(matches!(stft_magnitude(&[0.0f32; 799], &cfg), Err(AudioError::TooShort { .. })));
    }

    #[test]
    fn filterbank_rows_are_contiguous_triangles() {
        for cfg in [
            AudioConfig::default(),
            AudioConfig {
                sample_rate: 8000,
                fft_size: 256,
                frame_length: 200,
                frame_shift: 100,
                mel_bins: 40,
                ..Default::default()
            },
        ] {
            for row in mel_filterbank(&cfg) {
                assert!(row.iter().all(|&w| w >= 0.0));
                let support: Vec<usize> = row.iter().enumerate().filter(|(_, &w)| w > 0.0).map(|(i, _)| i).collect();
                assert!(!support.is_empty());
                assert_eq!(support.last().unwrap() - support[0] + 1, support.len());
            }
        }
    }

    #[test]
    fn mel_of_zero_is_zero_and_preserves_frames() {
        let cfg = AudioConfig::default();
        let lin = Spectrogram::new(SpecKind::Linear, 5, 513, vec![0.0f32; 5 * 513]);
        let mel = mel_spectrogram(&lin, &cfg).unwrap();
        assert_eq!(mel.frames, 5);
        assert_eq!(mel.bins, 80);
        assert!(mel.data.iter().all(|&v| v == 0.0));
        assert!(matches!(mel_spectrogram(&mel, &cfg), Err(AudioError::WrongKind { .. })));
    }

    #[test]
    fn mel_argmax_matches_nearest_center() {
        let cfg = AudioConfig::default();
        let lin = stft_magnitude(&sine(440.0, 1.0, 16_000, 16_000.0), &cfg).unwrap();
        let mel = mel_spectrogram(&lin, &cfg).unwrap();
        let centers = mel_center_frequencies(&cfg);
        let nearest = argmax(&centers.iter().map(|c| -(c - 440.0).abs()).collect::<Vec<_>>());
        for t in 0..mel.frames {
            assert_eq!(argmax(mel.frame(t)), nearest);
        }
    }

    #[test]
    fn griffin_lim_zero_is_silent_and_nan_rejected() {
        let cfg = AudioConfig {
            griffin_lim_iters: 5,
            ..Default::default()
        };
        let zero = Spectrogram::new(SpecKind::Linear, 4, 513, vec![0.0f64; 4 * 513]);
        let w = griffin_lim(&zero, &cfg, 1).unwrap();
        assert_eq!(w.len(), 3 * 200 + 800);
        assert!(w.iter().all(|&v| v == 0.0));
        let mut bad = zero.clone();
        bad.data[7] = f64::NAN;
        assert!(matches!(griffin_lim(&bad, &cfg, 1), Err(AudioError::NaN)));
    }

    #[test]
    fn griffin_lim_deterministic_per_seed() {
        let cfg = AudioConfig {
            griffin_lim_iters: 4,
            ..Default::default()
        };
        let lin = stft_magnitude(&sine(300.0, 0.5, 4000, 16_000.0), &cfg).unwrap();
        let a: Vec<f32> = griffin_lim(&Spectrogram::new(SpecKind::Linear, lin.frames, lin.bins, lin.data.iter().map(|&v| v as f32).collect()), &cfg, 9).unwrap();
        let b: Vec<f32> = griffin_lim(&Spectrogram::new(SpecKind::Linear, lin.frames, lin.bins, lin.data.iter().map(|&v| v as f32).collect()), &cfg, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stft_synthesis_inverts_analysis() {
        let cfg = AudioConfig::default();
        let x = sine(523.0, 0.3, 4000, 16_000.0);
        let stft = Stft::<f64>::new(&cfg);
        let y = stft.synthesize(&stft.analyze(&x));
        // sample 0 sits under a zero window value and cannot be recovered
        for i in 1..y.len() {
            assert!((x[i] - y[i]).abs() < 1e-9, "sample {i}");
        }
    }

    #[test]
    fn normalizer_round_trip() {
        let s = Spectrogram::new(SpecKind::Mel, 1, 3, vec![1e-6f64, 0.5, 20.0]);
        let n = FeatureNormalizer::fit([&s]);
        let z = n.apply(&s);
        assert_eq!(z.data[0], 0.0);
        assert_eq!(z.data[2], 1.0);
        let back = n.invert(&z);
        assert!((back.data[1] - 0.5).abs() < 1e-9);
        assert!((back.data[0] - LOG_FLOOR).abs() < 1e-12);
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        let x: Vec<f32> = vec![0.0, 0.5, -0.5, 1.0, -1.0];
        write_wav(&p, &x, 8000).unwrap();
        let (y, sr) = read_wav::<f32>(&p).unwrap();
        assert_eq!(sr, 8000);
        assert_eq!(y, quantize_pcm16(&x));
    }
}
