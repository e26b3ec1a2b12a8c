//! Synthetic bilingual corpora with known phoneme pronunciations, and a template-matching
//! oracle recognizer for them.
//!
//! Each phoneme is a steady harmonic stack (base frequency plus two overtones). Phonemes
//! declared as shared between languages carry identical pronunciation specs, so their renders
//! are bitwise identical for a given speaker and duration.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{self, AudioConfig, AudioError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{lang}: phonemes {a} and {b} are {gap:.1} Hz apart (minimum {min} Hz)")]
    Spacing {
        lang: String,
        a: String,
        b: String,
        gap: f64,
        min: f64,
    },
    #[error("invalid spec: {0}")]
    Invalid(String),
    #[error("waveform of {len} samples is shorter than one minimum phoneme duration ({min} samples)")]
    TooShort { len: usize, min: usize },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Audio(#[from] AudioError),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> SynthError {
    SynthError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub const MIN_SPACING_HZ: f64 = 40.0;
pub const SENTENCE_LEN: (usize, usize) = (4, 12);
pub const CROSSFADE_MS: f64 = 10.0;
pub const EDGE_SILENCE_MS: f64 = 30.0;
pub const MIN_COVERAGE: usize = 20;
const PEAK_AMPLITUDE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pronunciation {
    pub base_hz: f64,
    pub harmonics: [f64; 3],
    pub duration_ms: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Counterpart {
    pub lang: String,
    pub symbol: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhonemeSpec {
    pub symbol: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ipa: Option<String>,
    #[serde(flatten)]
    pub pronunciation: Pronunciation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared_with: Option<Counterpart>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageSpec {
    pub lang: String,
    pub phonemes: Vec<PhonemeSpec>,
}

impl LanguageSpec {
    pub fn symbols(&self) -> Vec<String> {
        self.phonemes.iter().map(|p| p.symbol.clone()).collect()
    }

    pub fn get(&self, symbol: &str) -> Option<&PhonemeSpec> {
        self.phonemes.iter().find(|p| p.symbol == symbol)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerSpec {
    pub name: String,
    /// Native language; the corpus generator only renders this language for the speaker.
    pub lang: String,
    pub freq_scale: f64,
    /// Harmonic k is scaled by `tilt^k`.
    #[serde(default = "one")]
    pub tilt: f64,
}

fn one() -> f64 {
    1.0
}

/// A full generator configuration: languages, speakers and sample rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub sample_rate: u32,
    #[serde(rename = "language")]
    pub languages: Vec<LanguageSpec>,
    #[serde(rename = "speaker")]
    pub speakers: Vec<SpeakerSpec>,
}

impl SynthSpec {
    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let spec: SynthSpec = toml::from_str(text).map_err(|e| SynthError::Invalid(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("spec serializes")
    }

    pub fn language(&self, lang: &str) -> Option<&LanguageSpec> {
        self.languages.iter().find(|l| l.lang == lang)
    }

    pub fn speakers_of(&self, lang: &str) -> Vec<usize> {
        (0..self.speakers.len()).filter(|&s| self.speakers[s].lang == lang).collect()
    }

    /// Inventories in declaration order, ready for a phoneme table.
    pub fn inventories(&self) -> Vec<(String, Vec<String>)> {
        self.languages.iter().map(|l| (l.lang.clone(), l.symbols())).collect()
    }

    /// All declared (lang, symbol) ↔ (lang, symbol) shared pairs, each listed once.
    pub fn shared_pairs(&self) -> Vec<(Counterpart, Counterpart)> {
        let mut out = Vec::new();
        for l in &self.languages {
            for p in &l.phonemes {
                if let Some(c) = &p.shared_with {
                    let here = Counterpart {
                        lang: l.lang.clone(),
                        symbol: p.symbol.clone(),
                    };
                    let flipped = (c.clone(), here.clone());
                    if !out.contains(&flipped) {
                        out.push((here, c.clone()));
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let invalid = |m: String| Err(SynthError::Invalid(m));
        if self.sample_rate == 0 {
            return invalid("sample_rate must be positive".into());
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        let max_scale = self.speakers.iter().map(|s| s.freq_scale).fold(1.0, f64::max);
        let mut langs = HashSet::new();
        for l in &self.languages {
            if !langs.insert(&l.lang) {
                return invalid(format!("language {:?} declared twice", l.lang));
            }
            if l.phonemes.is_empty() {
                return invalid(format!("language {:?} has no phonemes", l.lang));
            }
            let mut syms = HashSet::new();
            for p in &l.phonemes {
                if !syms.insert(&p.symbol) {
                    return invalid(format!("{}: symbol {:?} declared twice", l.lang, p.symbol));
                }
                let pr = &p.pronunciation;
                if pr.base_hz.is_nan() || pr.base_hz <= 0.0 || pr.harmonics.iter().any(|h| h.is_nan() || *h < 0.0) {
                    return invalid(format!("{}:{} needs a positive base frequency and nonnegative harmonics", l.lang, p.symbol));
                }
                if 3.0 * pr.base_hz * max_scale >= nyquist {
                    return invalid(format!("{}:{} third harmonic exceeds Nyquist", l.lang, p.symbol));
                }
                if !(pr.duration_ms[0] > 2.0 * CROSSFADE_MS && pr.duration_ms[0] <= pr.duration_ms[1]) {
                    return invalid(format!("{}:{} duration range must start above twice the cross-fade", l.lang, p.symbol));
                }
            }
            let mut sorted: Vec<&PhonemeSpec> = l.phonemes.iter().collect();
            sorted.sort_by(|a, b| a.pronunciation.base_hz.total_cmp(&b.pronunciation.base_hz));
            for w in sorted.windows(2) {
                let gap = w[1].pronunciation.base_hz - w[0].pronunciation.base_hz;
                if gap < MIN_SPACING_HZ {
                    return Err(SynthError::Spacing {
                        lang: l.lang.clone(),
                        a: w[0].symbol.clone(),
                        b: w[1].symbol.clone(),
                        gap,
                        min: MIN_SPACING_HZ,
                    });
                }
            }
        }
        for l in &self.languages {
            for p in &l.phonemes {
                let Some(c) = &p.shared_with else { continue };
                let Some(other) = self.language(&c.lang).and_then(|o| o.get(&c.symbol)) else {
                    return invalid(format!("{}:{} shares with unknown {}:{}", l.lang, p.symbol, c.lang, c.symbol));
                };
                if other.pronunciation != p.pronunciation {
                    return invalid(format!(
                        "{}:{} and {}:{} are shared but their pronunciations differ",
                        l.lang, p.symbol, c.lang, c.symbol
                    ));
                }
            }
        }
        for s in &self.speakers {
            if s.freq_scale.is_nan() || s.freq_scale <= 0.0 || s.tilt.is_nan() || s.tilt <= 0.0 {
                return invalid(format!("speaker {:?} needs positive freq_scale and tilt", s.name));
            }
            if !langs.contains(&s.lang) {
                return invalid(format!("speaker {:?} uses unknown language {:?}", s.name, s.lang));
            }
        }
        Ok(())
    }
}

/// Two 10-phoneme languages sharing 6 pronunciations, with 3 native speakers each.
///
/// `a0..a5` share their pronunciations with `b0..b5`. Base frequencies sit 60 Hz apart.
pub fn default_bilingual(sample_rate: u32) -> SynthSpec {
    let shapes: [[f64; 3]; 4] = [[1.0, 0.6, 0.3], [1.0, 0.3, 0.6], [0.8, 1.0, 0.4], [1.0, 0.5, 0.5]];
    let pron = |i: usize| Pronunciation {
        base_hz: 160.0 + 60.0 * i as f64,
        harmonics: shapes[i % shapes.len()],
        duration_ms: [70.0, 110.0],
    };
    // Sound ids 0..5 are shared, 6..9 belong to a, 10..13 to b. Interleave the private
    // sounds so neither language sits in one frequency band.
    let a_sounds = [0, 1, 2, 3, 4, 5, 6, 8, 10, 12];
    let b_sounds = [0, 1, 2, 3, 4, 5, 7, 9, 11, 13];
    let language = |tag: &str, other: &str, sounds: &[usize]| LanguageSpec {
        lang: tag.to_string(),
        phonemes: sounds
            .iter()
            .enumerate()
            .map(|(i, &s)| PhonemeSpec {
                symbol: format!("{tag}{i}"),
                ipa: Some(format!("s{s}")),
                pronunciation: pron(s),
                shared_with: (i < 6).then(|| Counterpart {
                    lang: other.to_string(),
                    symbol: format!("{other}{i}"),
                }),
            })
            .collect(),
    };
    let speaker = |name: &str, lang: &str, freq_scale: f64, tilt: f64| SpeakerSpec {
        name: name.into(),
        lang: lang.into(),
        freq_scale,
        tilt,
    };
    SynthSpec {
        sample_rate,
        languages: vec![language("a", "b", &a_sounds), language("b", "a", &b_sounds)],
        speakers: vec![
            speaker("a-low", "a", 0.92, 0.9),
            speaker("a-mid", "a", 1.0, 1.0),
            speaker("a-high", "a", 1.08, 0.8),
            speaker("b-low", "b", 0.95, 1.0),
            speaker("b-mid", "b", 1.03, 0.85),
            speaker("b-high", "b", 1.12, 0.95),
        ],
    }
}

/// Renders one phoneme of `len` samples. Identical inputs give identical samples.
pub fn render_phoneme(pron: &Pronunciation, speaker: &SpeakerSpec, len: usize, sample_rate: u32) -> Vec<f32> {
    let f0 = pron.base_hz * speaker.freq_scale;
    let amps: Vec<f64> = (0..3).map(|k| pron.harmonics[k] * speaker.tilt.powi(k as i32)).collect();
    let norm = amps.iter().sum::<f64>().max(1e-9);
    (0..len)
        .map(|n| {
            let t = n as f64 / sample_rate as f64;
            let v: f64 = amps
                .iter()
                .enumerate()
                .map(|(k, a)| a * (2.0 * PI * (k + 1) as f64 * f0 * t).sin())
                .sum();
            (PEAK_AMPLITUDE * v / norm) as f32
        })
        .collect()
}

fn ms_to_samples(ms: f64, sample_rate: u32) -> usize {
    (ms * sample_rate as f64 / 1000.0).round() as usize
}

/// One rendered utterance; `boundaries[i]` is the first sample of phoneme `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    pub waveform: Vec<f32>,
    pub boundaries: Vec<usize>,
}

/// Concatenates phoneme renders with raised-cosine cross-fades, between short silences.
pub fn render_utterance(
    spec: &SynthSpec,
    lang: &str,
    speaker: usize,
    phonemes: &[String],
    rng: &mut impl Rng,
) -> Result<Rendered, SynthError> {
    let language = spec
        .language(lang)
        .ok_or_else(|| SynthError::Invalid(format!("unknown language {lang:?}")))?;
    let sp = spec
        .speakers
        .get(speaker)
        .ok_or_else(|| SynthError::Invalid(format!("unknown speaker {speaker}")))?;
    let sr = spec.sample_rate;
    let fade = ms_to_samples(CROSSFADE_MS, sr);
    let edge = ms_to_samples(EDGE_SILENCE_MS, sr);
    let mut out = vec![0.0f32; edge];
    let mut boundaries = Vec::with_capacity(phonemes.len());
    for sym in phonemes {
        let p = language
            .get(sym)
            .ok_or_else(|| SynthError::Invalid(format!("{lang}:{sym} not in inventory")))?;
        let [lo, hi] = p.pronunciation.duration_ms;
        let dur = ms_to_samples(rng.gen_range(lo..=hi), sr);
        let mut seg = render_phoneme(&p.pronunciation, sp, dur + fade, sr);
        for i in 0..fade {
            let w = (0.5 - 0.5 * (PI * (i as f64 + 0.5) / fade as f64).cos()) as f32;
            seg[i] *= w;
            let j = seg.len() - 1 - i;
            seg[j] *= w;
        }
        // Each segment starts `fade` samples before its nominal boundary and overlaps the
        // previous segment's fade-out.
        let start = out.len() - fade.min(out.len());
        boundaries.push(start + fade / 2);
        out.resize(start + seg.len(), 0.0);
        for (o, s) in out[start..].iter_mut().zip(&seg) {
            *o += s;
        }
    }
    out.extend(std::iter::repeat_n(0.0, edge));
    Ok(Rendered {
        waveform: out,
        boundaries,
    })
}

/// Uniform random sentences of 4–12 phonemes with no immediate repeats.
pub fn random_sentence(symbols: &[String], rng: &mut impl Rng) -> Vec<String> {
    let len = rng.gen_range(SENTENCE_LEN.0..=SENTENCE_LEN.1);
    let mut out: Vec<String> = Vec::with_capacity(len);
    while out.len() < len {
        let s = symbols.choose(rng).expect("non-empty inventory");
        if out.last() != Some(s) || symbols.len() == 1 {
            out.push(s.clone());
        }
    }
    out
}

/// Draws `n` distinct sentences not in `exclude`, then rebalances so every phoneme appears at
/// least `min(MIN_COVERAGE, tokens / inventory)` times.
pub fn sentences(symbols: &[String], n: usize, exclude: &HashSet<Vec<String>>, rng: &mut impl Rng) -> Vec<Vec<String>> {
    let mut seen: HashSet<Vec<String>> = HashSet::new();
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        let s = random_sentence(symbols, rng);
        attempts += 1;
        let fresh = !exclude.contains(&s) && seen.insert(s.clone());
        if fresh || attempts > 1000 * n.max(1) {
            out.push(s);
        }
    }
    rebalance(&mut out, symbols, rng);
    out
}

fn rebalance(sents: &mut [Vec<String>], symbols: &[String], rng: &mut impl Rng) {
    let tokens: usize = sents.iter().map(Vec::len).sum();
    let target = MIN_COVERAGE.min(tokens / symbols.len().max(1) / 2);
    for _ in 0..tokens {
        let mut counts: BTreeMap<&String, usize> = symbols.iter().map(|s| (s, 0)).collect();
        for s in sents.iter().flatten() {
            *counts.get_mut(s).expect("inventory symbol") += 1;
        }
        let Some((&rare, _)) = counts.iter().filter(|(_, &c)| c < target).min_by_key(|(_, &c)| c) else {
            return;
        };
        let (&common, _) = counts.iter().max_by_key(|(_, &c)| c).expect("non-empty");
        let rare = rare.clone();
        let common = common.clone();
        // Replace one random occurrence of the most frequent symbol where no repeat results.
        let mut spots: Vec<(usize, usize)> = Vec::new();
        for (i, s) in sents.iter().enumerate() {
            for j in 0..s.len() {
                let ok_left = j == 0 || s[j - 1] != rare;
                let ok_right = j + 1 == s.len() || s[j + 1] != rare;
                if s[j] == common && ok_left && ok_right {
                    spots.push((i, j));
                }
            }
        }
        let Some(&(i, j)) = spots.choose(rng) else { return };
        sents[i][j] = rare;
    }
}

/// Per-utterance RNG keyed by the corpus seed, a stream tag and an index.
fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(tag.wrapping_mul(0x1_0000_0001).wrapping_add(index));
    r
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker: usize,
    pub lang: String,
    pub phonemes: Vec<String>,
    pub waveform: Vec<f32>,
    pub boundaries: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub sample_rate: u32,
    pub utterances: Vec<Utterance>,
}

/// What to generate for one speaker.
#[derive(Clone, Debug)]
pub struct SpeakerRequest {
    pub speaker: usize,
    pub count: usize,
}

/// Renders `count` utterances per requested speaker in the speaker's native language.
///
/// Sentences are drawn per language so coverage is balanced across the language's speakers;
/// sentences in `exclude` are never produced. `tag` separates independent draws (e.g. train
/// versus test) under one seed.
pub fn generate(
    spec: &SynthSpec,
    requests: &[SpeakerRequest],
    seed: u64,
    tag: u64,
    exclude: &HashSet<Vec<String>>,
) -> Result<Corpus, SynthError> {
    spec.validate()?;
    let mut utterances = Vec::new();
    for (li, lang) in spec.languages.iter().enumerate() {
        let reqs: Vec<&SpeakerRequest> = requests
            .iter()
            .filter(|r| spec.speakers.get(r.speaker).map(|s| &s.lang) == Some(&lang.lang))
            .collect();
        let total: usize = reqs.iter().map(|r| r.count).sum();
        if total == 0 {
            continue;
        }
        let mut rng = stream(seed, tag * 1024 + li as u64, u64::MAX >> 1);
        let sents = sentences(&lang.symbols(), total, exclude, &mut rng);
        let mut next = 0;
        for r in reqs {
            for k in 0..r.count {
                let phonemes = sents[next].clone();
                next += 1;
                let mut urng = stream(seed, tag * 1024 + li as u64, (r.speaker * 1_000_000 + k) as u64);
                let rendered = render_utterance(spec, &lang.lang, r.speaker, &phonemes, &mut urng)?;
                utterances.push(Utterance {
                    id: format!("{}_{}_{:04}", lang.lang, spec.speakers[r.speaker].name, k),
                    speaker: r.speaker,
                    lang: lang.lang.clone(),
                    phonemes,
                    waveform: rendered.waveform,
                    boundaries: rendered.boundaries,
                });
            }
        }
    }
    for r in requests {
        if r.speaker >= spec.speakers.len() {
            return Err(SynthError::Invalid(format!("unknown speaker {}", r.speaker)));
        }
    }
    Ok(Corpus {
        sample_rate: spec.sample_rate,
        utterances,
    })
}

/// `utterances_per_speaker` renders for every speaker in the spec.
pub fn generate_corpus(spec: &SynthSpec, utterances_per_speaker: usize, seed: u64) -> Result<Corpus, SynthError> {
    let reqs: Vec<SpeakerRequest> = (0..spec.speakers.len())
        .map(|speaker| SpeakerRequest {
            speaker,
            count: utterances_per_speaker,
        })
        .collect();
    generate(spec, &reqs, seed, 0, &HashSet::new())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub audio_path: PathBuf,
    pub speaker: usize,
    pub lang: String,
    pub phonemes: Vec<String>,
}

pub fn format_manifest(rows: &[ManifestRow]) -> String {
    rows.iter()
        .map(|r| format!("{}\t{}\t{}\t{}\n", r.audio_path.display(), r.speaker, r.lang, r.phonemes.join(" ")))
        .collect()
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRow>, SynthError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let cols: Vec<&str> = l.split('\t').collect();
            if cols.len() != 4 {
                return Err(SynthError::Invalid(format!("manifest line {}: expected 4 columns", i + 1)));
            }
            let speaker = cols[1]
                .parse()
                .map_err(|_| SynthError::Invalid(format!("manifest line {}: bad speaker {:?}", i + 1, cols[1])))?;
            Ok(ManifestRow {
                audio_path: PathBuf::from(cols[0]),
                speaker,
                lang: cols[2].to_string(),
                phonemes: cols[3].split_whitespace().map(String::from).collect(),
            })
        })
        .collect()
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>, SynthError> {
    let path = path.as_ref();
    parse_manifest(&fs::read_to_string(path).map_err(|e| io_err(path, e))?)
}

impl Corpus {
    /// Writes `wav/<id>.wav` plus one `manifest_<lang>.tsv` per language; returns manifest paths.
    /// Audio paths in manifests are relative to `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, SynthError> {
        let dir = dir.as_ref();
        let wav_dir = dir.join("wav");
        fs::create_dir_all(&wav_dir).map_err(|e| io_err(&wav_dir, e))?;
        let mut by_lang: BTreeMap<&str, Vec<ManifestRow>> = BTreeMap::new();
        for u in &self.utterances {
            let rel = PathBuf::from("wav").join(format!("{}.wav", u.id));
            audio::write_wav(dir.join(&rel), &u.waveform, self.sample_rate)?;
            by_lang.entry(&u.lang).or_default().push(ManifestRow {
                audio_path: rel,
                speaker: u.speaker,
                lang: u.lang.clone(),
                phonemes: u.phonemes.clone(),
            });
        }
        let mut paths = Vec::new();
        for (lang, rows) in by_lang {
            let p = dir.join(format!("manifest_{lang}.tsv"));
            fs::write(&p, format_manifest(&rows)).map_err(|e| io_err(&p, e))?;
            paths.push(p);
        }
        Ok(paths)
    }

    /// Loads the utterances listed in a manifest; audio paths resolve against the manifest's directory.
    pub fn read(manifest: impl AsRef<Path>) -> Result<Self, SynthError> {
        let manifest = manifest.as_ref();
        let base = manifest.parent().unwrap_or(Path::new("."));
        let mut sample_rate = 0;
        let mut utterances = Vec::new();
        for row in read_manifest(manifest)? {
            let (waveform, sr) = audio::read_wav::<f32>(base.join(&row.audio_path))?;
            if sample_rate != 0 && sr != sample_rate {
                return Err(SynthError::Invalid(format!("mixed sample rates {sample_rate} and {sr}")));
            }
            sample_rate = sr;
            let id = row
                .audio_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            utterances.push(Utterance {
                id,
                speaker: row.speaker,
                lang: row.lang,
                phonemes: row.phonemes,
                waveform,
                boundaries: Vec::new(),
            });
        }
        Ok(Corpus {
            sample_rate,
            utterances,
        })
    }
}

/// A small random lexicon (`WORD PH1 PH2 ...`) per language, for exercising text input.
pub fn generate_lexicon(lang: &LanguageSpec, words: usize, seed: u64) -> String {
    let mut rng = stream(seed, 0xABCD, lang.lang.len() as u64);
    let symbols = lang.symbols();
    let consonants = ['k', 't', 'm', 'n', 's', 'l', 'v', 'r'];
    let vowels = ['a', 'e', 'i', 'o', 'u'];
    let mut out = format!("# generated lexicon for language {}\n", lang.lang);
    let mut used = HashSet::new();
    while used.len() < words {
        let syll = rng.gen_range(2..=3);
        let word: String = (0..syll)
            .flat_map(|_| [*consonants.choose(&mut rng).unwrap(), *vowels.choose(&mut rng).unwrap()])
            .collect();
        if !used.insert(word.clone()) {
            continue;
        }
        let len = rng.gen_range(2..=4);
        let mut phones: Vec<&String> = Vec::with_capacity(len);
        while phones.len() < len {
            let s = symbols.choose(&mut rng).unwrap();
            if phones.last() != Some(&s) {
                phones.push(s);
            }
        }
        let phones: Vec<&str> = phones.iter().map(|s| s.as_str()).collect();
        out.push_str(&format!("{} {}\n", word, phones.join(" ")));
    }
    out
}

/// One recognition hypothesis under a single language.
#[derive(Clone, Debug, PartialEq)]
pub struct Recognition {
    pub lang: String,
    /// Spec speaker closest to the best-matching voice.
    pub speaker: usize,
    /// Frequency scale and spectral tilt of the best-matching voice.
    pub voice: Voice,
    pub phonemes: Vec<String>,
    /// Mean template similarity over each recognized segment, in [0, 1].
    pub confidence: Vec<f64>,
    /// First frame of each recognized phoneme segment.
    pub start_frames: Vec<usize>,
    pub cost: f64,
}

/// Speaker-dependent rendering parameters, as searched by the recognizer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Voice {
    pub freq_scale: f64,
    pub tilt: f64,
}

/// Frequency-scale search range beyond the spec's speakers, and its step.
const WARP_MARGIN: f64 = 0.06;
const WARP_STEP: f64 = 0.01;

/// Voices the recognizer tries: every spec speaker plus, for each speaker tilt, a grid of
/// frequency scales covering the speakers' range (a vocal-tract-length search).
fn search_voices(spec: &SynthSpec) -> Vec<Voice> {
    let mut voices: Vec<Voice> = spec
        .speakers
        .iter()
        .map(|s| Voice {
            freq_scale: s.freq_scale,
            tilt: s.tilt,
        })
        .collect();
    let mut tilts: Vec<f64> = spec.speakers.iter().map(|s| s.tilt).collect();
    tilts.sort_by(f64::total_cmp);
    tilts.dedup();
    let lo = spec.speakers.iter().map(|s| s.freq_scale).fold(f64::INFINITY, f64::min) - WARP_MARGIN;
    let hi = spec.speakers.iter().map(|s| s.freq_scale).fold(0.0, f64::max) + WARP_MARGIN;
    let steps = ((hi - lo) / WARP_STEP).round() as usize;
    for &tilt in &tilts {
        for i in 0..=steps {
            let freq_scale = lo + i as f64 * WARP_STEP;
            if !voices.iter().any(|v| v.tilt == tilt && (v.freq_scale - freq_scale).abs() < 1e-9) {
                voices.push(Voice { freq_scale, tilt });
            }
        }
    }
    voices
}

/// Template-matching recognizer for a [`SynthSpec`] family of renders. It is speaker
/// independent: each utterance is decoded under every searched voice and the cheapest wins.
pub struct Oracle {
    config: AudioConfig,
    languages: Vec<(String, Vec<String>)>,
    voices: Vec<Voice>,
    /// Spec speaker nearest to each voice.
    nearest: Vec<usize>,
    /// `templates[lang][voice][phoneme]`: unit-norm mel vectors.
    templates: Vec<Vec<Vec<Vec<f64>>>>,
    min_frames: usize,
}

pub const SILENCE: &str = "<sil>";
/// Frames below this fraction of the loudest frame's energy count as silence.
const SILENCE_RATIO: f64 = 1e-3;

/// Recognizer front end at `sample_rate`: 25 ms Hann window, 10 ms shift, 40 mel bands.
/// Independent of the feature configuration of any model being scored.
pub fn recognizer_frontend(sample_rate: u32) -> AudioConfig {
    let frame_length = (sample_rate as usize * 25).div_ceil(1000);
    AudioConfig {
        sample_rate,
        frame_length,
        frame_shift: (sample_rate as usize).div_ceil(100),
        fft_size: frame_length.next_power_of_two(),
        mel_bins: 40,
        ..AudioConfig::default()
    }
}

impl Oracle {
    /// Oracle with the standard [`recognizer_frontend`].
    pub fn for_spec(spec: &SynthSpec) -> Result<Self, SynthError> {
        Self::new(spec, &recognizer_frontend(spec.sample_rate))
    }

    pub fn new(spec: &SynthSpec, config: &AudioConfig) -> Result<Self, SynthError> {
        spec.validate()?;
        if config.sample_rate != spec.sample_rate {
            return Err(SynthError::Invalid(format!(
                "oracle audio config runs at {} Hz but the spec renders at {} Hz",
                config.sample_rate, spec.sample_rate
            )));
        }
        config.validate()?;
        let steady = ms_to_samples(200.0, spec.sample_rate).max(config.frame_length * 2);
        let voices = search_voices(spec);
        let nearest: Vec<usize> = voices
            .iter()
            .map(|v| {
                (0..spec.speakers.len())
                    .min_by(|&a, &b| {
                        let d = |s: &SpeakerSpec| (s.freq_scale - v.freq_scale).abs() + (s.tilt - v.tilt).abs();
                        d(&spec.speakers[a]).total_cmp(&d(&spec.speakers[b]))
                    })
                    .expect("spec has speakers")
            })
            .collect();
        let mut templates = Vec::new();
        for lang in &spec.languages {
            let mut per_voice = Vec::new();
            for v in &voices {
                let sp = SpeakerSpec {
                    name: String::new(),
                    lang: lang.lang.clone(),
                    freq_scale: v.freq_scale,
                    tilt: v.tilt,
                };
                let mut per_phone = Vec::new();
                for p in &lang.phonemes {
                    let wave: Vec<f64> = render_phoneme(&p.pronunciation, &sp, steady, spec.sample_rate)
                        .iter()
                        .map(|&v| v as f64)
                        .collect();
                    let mel = audio::mel_spectrogram(&audio::stft_magnitude(&wave, config)?, config)?;
                    let mut mean = vec![0.0; mel.bins];
                    for t in 0..mel.frames {
                        for (m, v) in mean.iter_mut().zip(mel.frame(t)) {
                            *m += v;
                        }
                    }
                    per_phone.push(unit(&mean));
                }
                per_voice.push(per_phone);
            }
            templates.push(per_voice);
        }
        let shortest = spec
            .languages
            .iter()
            .flat_map(|l| l.phonemes.iter().map(|p| p.pronunciation.duration_ms[0]))
            .fold(f64::INFINITY, f64::min);
        let frame_ms = config.frame_shift as f64 * 1000.0 / config.sample_rate as f64;
        let min_frames = ((shortest - CROSSFADE_MS) / frame_ms / 2.0).floor().max(1.0) as usize;
        Ok(Self {
            config: config.clone(),
            languages: spec.languages.iter().map(|l| (l.lang.clone(), l.symbols())).collect(),
            voices,
            nearest,
            templates,
            min_frames,
        })
    }

    pub fn min_frames(&self) -> usize {
        self.min_frames
    }

    pub fn config(&self) -> &AudioConfig {
        &self.config
    }

    /// Unit-norm mel frames, `None` for silent ones.
    fn frames(&self, waveform: &[f32]) -> Result<Vec<Option<Vec<f64>>>, SynthError> {
        let min_samples = self.config.frame_length + (self.min_frames - 1) * self.config.frame_shift;
        if waveform.len() < min_samples {
            return Err(SynthError::TooShort {
                len: waveform.len(),
                min: min_samples,
            });
        }
        let wave: Vec<f64> = waveform.iter().map(|&v| v as f64).collect();
        let mel = audio::mel_spectrogram(&audio::stft_magnitude(&wave, &self.config)?, &self.config)?;
        let energies: Vec<f64> = (0..mel.frames).map(|t| mel.frame(t).iter().map(|v| v * v).sum()).collect();
        let peak = energies.iter().cloned().fold(0.0, f64::max);
        Ok((0..mel.frames)
            .map(|t| (peak > 0.0 && energies[t] > SILENCE_RATIO * peak).then(|| unit(mel.frame(t))))
            .collect())
    }

    fn best_voice(&self, frames: &[Option<Vec<f64>>], li: usize) -> Recognition {
        let (lang, symbols) = &self.languages[li];
        let mut best: Option<Recognition> = None;
        for (vi, temps) in self.templates[li].iter().enumerate() {
            let rec = self.decode(frames, temps, symbols, lang, vi);
            if best.as_ref().is_none_or(|b| rec.cost < b.cost) {
                best = Some(rec);
            }
        }
        best.expect("at least one voice")
    }

    /// Best hypothesis per language, each under its best-matching voice.
    pub fn recognize(&self, waveform: &[f32]) -> Result<Vec<Recognition>, SynthError> {
        let frames = self.frames(waveform)?;
        Ok((0..self.languages.len()).map(|li| self.best_voice(&frames, li)).collect())
    }

    /// Recognition under one language.
    pub fn recognize_lang(&self, waveform: &[f32], lang: &str) -> Result<Recognition, SynthError> {
        let li = self
            .languages
            .iter()
            .position(|(l, _)| l == lang)
            .ok_or_else(|| SynthError::Invalid(format!("unknown language {lang:?}")))?;
        Ok(self.best_voice(&self.frames(waveform)?, li))
    }

    /// Viterbi over (label, run length capped at min_frames): a label may only be left after
    /// it has lasted `min_frames` frames. Label 0 is silence.
    fn decode(&self, frames: &[Option<Vec<f64>>], temps: &[Vec<f64>], symbols: &[String], lang: &str, voice: usize) -> Recognition {
        let labels = temps.len() + 1;
        let d = self.min_frames;
        let n = frames.len();
        let cost = |t: usize, l: usize| -> f64 {
            match (&frames[t], l) {
                (None, 0) => 0.0,
                (None, _) => 1.0,
                (Some(_), 0) => 1.0,
                (Some(f), l) => 1.0 - crate::tensor::kernels::dot(f, &temps[l - 1]).max(0.0),
            }
        };
        let states = labels * d;
        let idx = |l: usize, c: usize| l * d + (c - 1);
        let inf = f64::INFINITY;
        let mut score = vec![inf; states];
        let mut back: Vec<Vec<u32>> = Vec::with_capacity(n);
        for l in 0..labels {
            score[idx(l, 1)] = cost(0, l);
        }
        back.push(vec![u32::MAX; states]);
        for t in 1..n {
            let mut next = vec![inf; states];
            let mut bp = vec![u32::MAX; states];
            // Best finished state (run length == d) per label, and the two best overall so a
            // label can switch to the best *other* label.
            let mut finished: Vec<(f64, usize)> = (0..labels).map(|l| (score[idx(l, d)], idx(l, d))).collect();
            let mut order: Vec<usize> = (0..labels).collect();
            order.sort_by(|&a, &b| finished[a].0.total_cmp(&finished[b].0).then(a.cmp(&b)));
            for l in 0..labels {
                let c = cost(t, l);
                // continue the same label
                for run in 1..=d {
                    let prev = score[idx(l, run)];
                    if prev == inf {
                        continue;
                    }
                    let to = idx(l, (run + 1).min(d));
                    if prev + c < next[to] {
                        next[to] = prev + c;
                        bp[to] = idx(l, run) as u32;
                    }
                }
                // switch from the best finished other label
                let from = if order[0] != l { order[0] } else { order[1.min(labels - 1)] };
                if from != l && finished[from].0 < inf {
                    let v = finished[from].0 + c;
                    let to = idx(l, 1);
                    if v < next[to] {
                        next[to] = v;
                        bp[to] = finished[from].1 as u32;
                    }
                }
            }
            finished.clear();
            score = next;
            back.push(bp);
        }
        // Must end on a completed run.
        let (mut state, total) = (0..labels)
            .map(|l| (idx(l, d), score[idx(l, d)]))
            .chain((0..labels).flat_map(|l| (1..d).map(move |c| (l, c))).map(|(l, c)| (idx(l, c), score[idx(l, c)] + 1e6)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let mut path = vec![0usize; n];
        for t in (0..n).rev() {
            path[t] = state / d;
            if t > 0 {
                state = back[t][state] as usize;
            }
        }
        let mut phonemes = Vec::new();
        let mut confidence = Vec::new();
        let mut start_frames = Vec::new();
        let mut t = 0;
        while t < n {
            let l = path[t];
            let mut e = t;
            let mut sim = 0.0;
            while e < n && path[e] == l {
                sim += 1.0 - cost(e, l);
                e += 1;
            }
            if l != 0 {
                phonemes.push(symbols[l - 1].clone());
                confidence.push(sim / (e - t) as f64);
                start_frames.push(t);
            }
            t = e;
        }
        Recognition {
            lang: lang.to_string(),
            speaker: self.nearest[voice],
            voice: self.voices[voice],
            phonemes,
            confidence,
            start_frames,
            cost: total,
        }
    }
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// Symbol → counterpart lookup for every shared phoneme, in both directions.
pub fn counterpart_map(spec: &SynthSpec) -> HashMap<(String, String), (String, String)> {
    let mut m = HashMap::new();
    for (a, b) in spec.shared_pairs() {
        m.insert((a.lang.clone(), a.symbol.clone()), (b.lang.clone(), b.symbol.clone()));
        m.insert((b.lang, b.symbol), (a.lang, a.symbol));
    }
    m
}
