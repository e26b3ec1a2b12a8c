//! Low-resource strategy comparison on a synthetic bilingual corpus.
//!
//! One target speaker of the low-resource language supplies a small set of text-speech pairs;
//! the other language supplies plenty. Every strategy starts from the same initialization,
//! pre-trains according to its definition, fine-tunes on the target speaker's pairs and is
//! scored on unseen sentences with the oracle recognizer.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioConfig;
use crate::dataset::{prepare, DatasetError, Example, FeatureStats};
use crate::evaluation::{EvalError, EvaluationReport, Evaluator, TestItem};
use crate::model::{ModelConfig, ModelError, ModelParams};
use crate::phoneme::{IpaTable, PhonemeError, PhonemeTable};
use crate::synthlang::{counterpart_map, generate, random_sentence, Oracle, SpeakerRequest, SynthError, SynthSpec, Utterance};
use crate::tensor::Scalar;
use crate::training::{run_finetune, run_pretrain, History, Strategy, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment setup: {0}")]
    Setup(String),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Phoneme(#[from] PhonemeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Which speakers and languages play which role.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LowResourceSetup {
    pub low_lang: String,
    pub high_lang: String,
    /// Speaker name whose low-resource pairs are used for fine-tuning and testing.
    pub target_speaker: String,
    /// Text-speech pairs per high-resource speaker.
    pub high_per_speaker: usize,
    /// Utterances per other low-language speaker, used only as speech by PD-E.
    pub extra_per_speaker: usize,
    pub test_size: usize,
}

impl Default for LowResourceSetup {
    fn default() -> Self {
        Self {
            low_lang: "a".into(),
            high_lang: "b".into(),
            target_speaker: "a-mid".into(),
            high_per_speaker: 100,
            extra_per_speaker: 100,
            test_size: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub setup: LowResourceSetup,
    pub sizes: Vec<usize>,
    pub strategies: Vec<Strategy>,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    /// A cell is reported as failed when more than this fraction of test utterances fail.
    pub failed_cell_fraction: f64,
    pub seed: u64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            setup: LowResourceSetup::default(),
            sizes: vec![20, 100, 500],
            strategies: Strategy::ALL.to_vec(),
            pretrain: TrainConfig::default(),
            finetune: TrainConfig::default(),
            failed_cell_fraction: 0.5,
            seed: 1,
        }
    }
}

/// Laptop-scale settings: 8 kHz audio and default model dims.
#[derive(Clone, Debug, PartialEq)]
pub struct DeskPreset {
    pub audio: AudioConfig,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
}

impl DeskPreset {
    pub const SAMPLE_RATE: u32 = 8000;

    pub fn new() -> Self {
        let audio = AudioConfig {
            sample_rate: Self::SAMPLE_RATE,
            frame_length: 400,
            frame_shift: 200,
            fft_size: 512,
            mel_bins: 40,
            ..AudioConfig::default()
        };
        let model = ModelConfig {
            max_decoder_steps: 120,
            ..ModelConfig::default()
        };
        // Pre-training runs until validation stops improving; fine-tuning on a few pairs
        // overfits quickly, so it gets a shorter, faster-decaying schedule.
        let pretrain = TrainConfig {
            adam: crate::tensor::AdamConfig {
                lr: 4e-3,
                ..Default::default()
            },
            max_steps: 12_000,
            eval_every: 200,
            patience: 8,
            val_limit: 20,
            decay_start: 3000,
            decay_half_life: 2000,
            ..TrainConfig::default()
        };
        let finetune = TrainConfig {
            max_steps: 2000,
            patience: 5,
            decay_start: 1000,
            decay_half_life: 1000,
            ..pretrain.clone()
        };
        Self {
            audio,
            model,
            pretrain,
            finetune,
        }
    }
}

impl Default for DeskPreset {
    fn default() -> Self {
        Self::new()
    }
}

/// Phoneme table over every language of `spec`, annotated with the spec's IPA labels.
pub fn phoneme_table(spec: &SynthSpec) -> Result<PhonemeTable, PhonemeError> {
    let mut table = PhonemeTable::build(&spec.inventories())?;
    for l in &spec.languages {
        let mut ipa = IpaTable::default();
        for p in &l.phonemes {
            if let Some(v) = &p.ipa {
                ipa.insert(&p.symbol, v);
            }
        }
        table.annotate(&l.lang, &ipa);
    }
    Ok(table)
}

/// Anchor symbol to counterpart symbol for the phonemes `anchor_lang` shares with `target_lang`.
pub fn counterparts(spec: &SynthSpec, anchor_lang: &str, target_lang: &str) -> HashMap<String, String> {
    counterpart_map(spec)
        .into_iter()
        .filter(|((al, _), (tl, _))| al == anchor_lang && tl == target_lang)
        .map(|((_, a), (_, t))| (a, t))
        .collect()
}

/// `model` with the data-dependent sizes filled in from the spec, phoneme table and features.
pub fn sized_model(model: &ModelConfig, spec: &SynthSpec, table: &PhonemeTable, audio: &AudioConfig) -> ModelConfig {
    ModelConfig {
        num_speakers: spec.speakers.len(),
        phoneme_table_size: table.len(),
        mel_bins: audio.mel_bins,
        linear_bins: audio.linear_bins(),
        ..model.clone()
    }
}

/// `n` distinct random sentences of `lang` for `speaker`, none of them in `exclude`.
pub fn test_items(
    spec: &SynthSpec,
    lang: &str,
    speaker: usize,
    n: usize,
    exclude: &HashSet<Vec<String>>,
    seed: u64,
) -> Result<Vec<TestItem>, ExperimentError> {
    let symbols = spec
        .language(lang)
        .ok_or_else(|| ExperimentError::Setup(format!("unknown language {lang}")))?
        .symbols();
    let mut taken = exclude.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e57_5e47_e9ce);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > 1000 * (n + 1) {
            return Err(ExperimentError::Setup(format!("cannot draw {n} unseen {lang} sentences")));
        }
        let p = random_sentence(&symbols, &mut rng);
        if taken.insert(p.clone()) {
            out.push(TestItem {
                id: format!("test_{:04}", out.len()),
                speaker,
                lang: lang.to_string(),
                phonemes: p,
            });
        }
    }
    Ok(out)
}

/// Features and test sentences for one seed.
pub struct CompareData<T> {
    pub table: PhonemeTable,
    pub stats: FeatureStats,
    pub target: usize,
    /// Pairs of the high-resource language.
    pub high: Vec<Example<T>>,
    /// Target-speaker pairs, ordered so that every size is a prefix.
    pub low: Vec<Example<T>>,
    /// Low-language speech from the other speakers of that language.
    pub extra: Vec<Example<T>>,
    pub test: Vec<TestItem>,
}

impl<T: Scalar> CompareData<T> {
    pub fn generate(spec: &SynthSpec, audio: &AudioConfig, cfg: &CompareConfig) -> Result<Self, ExperimentError> {
        let s = &cfg.setup;
        let target = spec
            .speakers
            .iter()
            .position(|sp| sp.name == s.target_speaker)
            .ok_or_else(|| ExperimentError::Setup(format!("unknown target speaker {:?}", s.target_speaker)))?;
        if spec.speakers[target].lang != s.low_lang {
            return Err(ExperimentError::Setup(format!("{} does not speak {}", s.target_speaker, s.low_lang)));
        }
        let high_speakers = spec.speakers_of(&s.high_lang);
        if high_speakers.is_empty() {
            return Err(ExperimentError::Setup(format!("no speakers of {}", s.high_lang)));
        }
        let max_size = cfg.sizes.iter().copied().max().unwrap_or(0);
        if max_size == 0 {
            return Err(ExperimentError::Setup("no low-resource sizes".into()));
        }
        let none = HashSet::new();
        let req = |speakers: &[usize], count: usize| -> Vec<SpeakerRequest> {
            speakers.iter().map(|&speaker| SpeakerRequest { speaker, count }).collect()
        };
        let high = generate(spec, &req(&high_speakers, s.high_per_speaker), cfg.seed, 1, &none)?;
        let low = generate(spec, &req(&[target], max_size), cfg.seed, 2, &none)?;
        let others: Vec<usize> = spec.speakers_of(&s.low_lang).into_iter().filter(|&i| i != target).collect();
        let extra = if cfg.strategies.contains(&Strategy::PdE) {
            generate(spec, &req(&others, s.extra_per_speaker), cfg.seed, 3, &none)?
        } else {
            generate(spec, &[], cfg.seed, 3, &none)?
        };
        let table = phoneme_table(spec)?;
        let all: Vec<Utterance> = high.utterances.iter().chain(&low.utterances).chain(&extra.utterances).cloned().collect();
        let (_, stats) = prepare::<T>(&all, spec.sample_rate, &table, audio, None)?;
        let prep = |u: &[Utterance]| prepare::<T>(u, spec.sample_rate, &table, audio, Some(stats)).map(|(e, _)| e);
        let (high_ex, low_ex, extra_ex) = (prep(&high.utterances)?, prep(&low.utterances)?, prep(&extra.utterances)?);

        let exclude: HashSet<Vec<String>> = low.utterances.iter().map(|u| u.phonemes.clone()).collect();
        let test = test_items(spec, &s.low_lang, target, s.test_size, &exclude, cfg.seed)?;
        Ok(Self {
            table,
            stats,
            target,
            high: high_ex,
            low: low_ex,
            extra: extra_ex,
            test,
        })
    }

    pub fn low_items(&self, size: usize) -> Vec<TestItem> {
        self.low[..size.min(self.low.len())]
            .iter()
            .map(|e| TestItem {
                id: e.id.clone(),
                speaker: e.speaker,
                lang: e.lang.clone(),
                phonemes: e.phonemes.clone(),
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Cell {
    pub strategy: Strategy,
    pub size: usize,
    pub per: f64,
    pub focus: f64,
    pub monotonicity: f64,
    pub failed_fraction: f64,
    pub failed: bool,
    pub pretrain: History,
    pub finetune: History,
    pub report: EvaluationReport,
}

/// Strategy × size results in the order they were run.
#[derive(Clone, Debug, Default)]
pub struct Comparison {
    pub sizes: Vec<usize>,
    pub strategies: Vec<Strategy>,
    pub cells: Vec<Cell>,
}

impl Comparison {
    pub fn cell(&self, strategy: Strategy, size: usize) -> Option<&Cell> {
        self.cells.iter().find(|c| c.strategy == strategy && c.size == size)
    }

    /// PER (%) by strategy and fine-tune size; failed cells read `n/a`. PD-E sits below a rule.
    pub fn matrix(&self) -> String {
        let mut out = String::from("model");
        for s in &self.sizes {
            let _ = write!(out, "\t{s}");
        }
        out.push('\n');
        let main: Vec<Strategy> = self.strategies.iter().copied().filter(|s| *s != Strategy::PdE).collect();
        let write_row = |out: &mut String, st: Strategy| {
            out.push_str(st.label());
            for &size in &self.sizes {
                match self.cell(st, size) {
                    Some(c) if c.failed => out.push_str("\tn/a"),
                    Some(c) => {
                        let _ = write!(out, "\t{:.1}", 100.0 * c.per);
                    }
                    None => out.push_str("\t-"),
                }
            }
            out.push('\n');
        };
        for st in main {
            write_row(&mut out, st);
        }
        if self.strategies.contains(&Strategy::PdE) {
            out.push_str("--\n");
            write_row(&mut out, Strategy::PdE);
        }
        out
    }

    /// One line per cell with the raw numbers behind the matrix.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("strategy\tsize\tper\tfocus\tmonotonicity\tfailed_fraction\tfailed\tpretrain_steps\tfinetune_steps\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}",
                c.strategy.tag(),
                c.size,
                c.per,
                c.focus,
                c.monotonicity,
                c.failed_fraction,
                u8::from(c.failed),
                c.pretrain.steps,
                c.finetune.steps
            );
        }
        out
    }
}

/// Everything fixed across the cells of one comparison.
pub struct Harness<'a> {
    pub spec: &'a SynthSpec,
    pub audio: &'a AudioConfig,
    pub model: &'a ModelConfig,
    pub config: &'a CompareConfig,
}

impl Harness<'_> {
    fn fresh<T: Scalar>(&self, data: &CompareData<T>) -> Result<ModelParams<T>, ExperimentError> {
        Ok(ModelParams::new(sized_model(self.model, self.spec, &data.table, self.audio), self.config.seed)?)
    }

    fn seeded(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            seed: self.config.seed,
            ..base.clone()
        }
    }

    /// Runs every (size, strategy) cell; `on_cell` sees each result as soon as it exists.
    pub fn run<T: Scalar>(&self, data: &CompareData<T>, mut on_cell: impl FnMut(&Cell)) -> Result<Comparison, ExperimentError> {
        let cfg = self.config;
        let oracle = Oracle::for_spec(self.spec)?;
        let evaluator = Evaluator {
            table: &data.table,
            stats: &data.stats,
            audio: self.audio,
            oracle: &oracle,
            thresholds: cfg.finetune.thresholds,
            seed: cfg.seed,
        };
        let pre_cfg = self.seeded(&cfg.pretrain);
        let fine_cfg = self.seeded(&cfg.finetune);
        // Decoder-only pre-training does not depend on the fine-tune size: run it once.
        let mut decoder_pretrained: Vec<(Strategy, ModelParams<T>, History)> = Vec::new();
        for &st in &cfg.strategies {
            let speech = match st {
                Strategy::PdH => &data.high,
                Strategy::PdE => &data.extra,
                _ => continue,
            };
            let mut p = self.fresh(data)?;
            let h = run_pretrain(st, speech, &[], &mut p, &pre_cfg)?;
            decoder_pretrained.push((st, p, h));
        }
        let mut comparison = Comparison {
            sizes: cfg.sizes.clone(),
            strategies: cfg.strategies.clone(),
            cells: Vec::new(),
        };
        for &size in &cfg.sizes {
            let low = &data.low[..size.min(data.low.len())];
            let train_items = data.low_items(size);
            for &st in &cfg.strategies {
                let (mut params, pretrain) = match st {
                    Strategy::TBase => (self.fresh(data)?, History::default()),
                    Strategy::PaHl => {
                        let mut p = self.fresh(data)?;
                        let h = run_pretrain(st, &data.high, low, &mut p, &pre_cfg)?;
                        (p, h)
                    }
                    Strategy::PdH | Strategy::PdE => {
                        let (_, p, h) = decoder_pretrained.iter().find(|(s, _, _)| *s == st).expect("pre-trained above");
                        (p.clone(), h.clone())
                    }
                };
                let finetune = run_finetune(&mut params, low, &fine_cfg)?;
                let report = evaluator.evaluate(&params, &data.test, &train_items)?;
                let failed_fraction = report.failed_fraction();
                let cell = Cell {
                    strategy: st,
                    size,
                    per: report.mean_per(),
                    focus: report.mean_focus(),
                    monotonicity: report.mean_monotonicity(),
                    failed_fraction,
                    failed: failed_fraction > cfg.failed_cell_fraction,
                    pretrain,
                    finetune,
                    report,
                };
                on_cell(&cell);
                comparison.cells.push(cell);
            }
        }
        Ok(comparison)
    }
}
