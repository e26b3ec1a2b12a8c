//! Error rates, spectrogram distance and end-to-end model evaluation against the oracle.

use std::collections::HashSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::audio::{AudioConfig, Spectrogram};
use crate::dataset::FeatureStats;
use crate::model::{ModelError, ModelParams, StopReason};
use crate::phoneme::{PhonemeError, PhonemeTable};
use crate::synthlang::{Oracle, SynthError};
use crate::tensor::Scalar;
use crate::training::{attention_diagnostics, AttentionDiagnostics, DiagnosticThresholds, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("reference sequence is empty")]
    EmptyReference,
    #[error("spectrogram has no frames")]
    EmptySpectrogram,
    #[error("spectrograms have {0} and {1} bins")]
    Bins(usize, usize),
    #[error("test utterance {id} repeats a training sentence")]
    Overlap { id: String },
    #[error("empty test set")]
    EmptyTestSet,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Phoneme(#[from] PhonemeError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorRateResult {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub reference_length: usize,
    pub rate: f64,
}

impl ErrorRateResult {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

/// Unit-cost Levenshtein distance.
pub fn edit_distance<S: PartialEq>(a: &[S], b: &[S]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Minimal edit alignment of `hypothesis` against `reference`. Ties in the traceback prefer
/// substitution, then deletion, then insertion.
pub fn error_rate<S: PartialEq>(reference: &[S], hypothesis: &[S]) -> Result<ErrorRateResult, EvalError> {
    if reference.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    let (n, m) = (reference.len(), hypothesis.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let (mut i, mut j) = (n, m);
    let (mut s, mut del, mut ins) = (0, 0, 0);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if d[i][j] == d[i - 1][j - 1] + usize::from(!same) {
                s += usize::from(!same);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            del += 1;
            i -= 1;
        } else {
            ins += 1;
            j -= 1;
        }
    }
    Ok(ErrorRateResult {
        substitutions: s,
        insertions: ins,
        deletions: del,
        reference_length: n,
        rate: (s + ins + del) as f64 / n as f64,
    })
}

/// Mean per-frame L2 distance along the cheapest DTW path, restricted to a Sakoe-Chiba band of
/// 20% of the longer sequence (widened to cover any length difference).
pub fn mel_distance<T: Scalar>(reference: &Spectrogram<T>, hypothesis: &Spectrogram<T>) -> Result<f64, EvalError> {
    if reference.frames == 0 || hypothesis.frames == 0 {
        return Err(EvalError::EmptySpectrogram);
    }
    if reference.bins != hypothesis.bins {
        return Err(EvalError::Bins(reference.bins, hypothesis.bins));
    }
    let (n, m) = (reference.frames, hypothesis.frames);
    let band = ((0.2 * n.max(m) as f64).ceil() as usize).max(n.abs_diff(m));
    let cost = |i: usize, j: usize| -> f64 {
        reference
            .frame(i)
            .iter()
            .zip(hypothesis.frame(j))
            .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    // Each cell keeps (total cost, path length); paths compare by total cost, then length.
    let inf = (f64::INFINITY, 0usize);
    let mut acc = vec![vec![inf; m]; n];
    for i in 0..n {
        for j in i.saturating_sub(band)..(i + band + 1).min(m) {
            let c = cost(i, j);
            let best = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut cands = Vec::with_capacity(3);
                if i > 0 && j > 0 {
                    cands.push(acc[i - 1][j - 1]);
                }
                if i > 0 {
                    cands.push(acc[i - 1][j]);
                }
                if j > 0 {
                    cands.push(acc[i][j - 1]);
                }
                cands
                    .into_iter()
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                    .unwrap_or(inf)
            };
            acc[i][j] = (best.0 + c, best.1 + 1);
        }
    }
    let (total, len) = acc[n - 1][m - 1];
    Ok(total / len as f64)
}

/// One sentence to synthesize and score.
#[derive(Clone, Debug, PartialEq)]
pub struct TestItem {
    pub id: String,
    pub speaker: usize,
    pub lang: String,
    pub phonemes: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct UtteranceResult {
    pub id: String,
    pub hypothesis: Vec<String>,
    pub per: ErrorRateResult,
    /// Word-level score; `None` because synthetic transcripts carry no word boundaries.
    pub wer: Option<ErrorRateResult>,
    pub diagnostics: AttentionDiagnostics,
    pub stopped_by: StopReason,
}

#[derive(Clone, Debug)]
pub struct EvaluationReport {
    pub rows: Vec<UtteranceResult>,
}

impl EvaluationReport {
    fn mean(&self, f: impl Fn(&UtteranceResult) -> f64) -> f64 {
        self.rows.iter().map(f).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn mean_per(&self) -> f64 {
        self.mean(|r| r.per.rate)
    }

    pub fn mean_focus(&self) -> f64 {
        self.mean(|r| r.diagnostics.focus)
    }

    pub fn mean_monotonicity(&self) -> f64 {
        self.mean(|r| r.diagnostics.monotonicity)
    }

    pub fn failed_fraction(&self) -> f64 {
        self.mean(|r| f64::from(u8::from(r.diagnostics.failed)))
    }

    /// `utterance  per  wer  focus  monotonicity  failed`
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("utterance\tper\twer\tfocus\tmonotonicity\tfailed\n");
        for r in &self.rows {
            let wer = r.wer.map_or("-".to_string(), |w| format!("{:.6}", w.rate));
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{wer}\t{:.6}\t{:.6}\t{}",
                r.id,
                r.per.rate,
                r.diagnostics.focus,
                r.diagnostics.monotonicity,
                u8::from(r.diagnostics.failed)
            );
        }
        out
    }

    pub fn summary(&self) -> String {
        let eos = self.rows.iter().filter(|r| r.stopped_by == StopReason::Eos).count();
        format!(
            "utterances\t{}\nmean_per\t{:.6}\nmean_focus\t{:.6}\nmean_monotonicity\t{:.6}\nfailed_fraction\t{:.6}\nstopped_by_eos\t{}\n",
            self.rows.len(),
            self.mean_per(),
            self.mean_focus(),
            self.mean_monotonicity(),
            self.failed_fraction(),
            eos
        )
    }
}

/// Errors when any test sentence (language + transcript) also occurs in `train`.
pub fn check_disjoint(test: &[TestItem], train: &[TestItem]) -> Result<(), EvalError> {
    let seen: HashSet<(&str, &[String])> = train.iter().map(|t| (t.lang.as_str(), t.phonemes.as_slice())).collect();
    match test.iter().find(|t| seen.contains(&(t.lang.as_str(), t.phonemes.as_slice()))) {
        Some(t) => Err(EvalError::Overlap { id: t.id.clone() }),
        None => Ok(()),
    }
}

/// Everything needed to turn model output into oracle transcripts.
pub struct Evaluator<'a> {
    pub table: &'a PhonemeTable,
    pub stats: &'a FeatureStats,
    pub audio: &'a AudioConfig,
    pub oracle: &'a Oracle,
    pub thresholds: DiagnosticThresholds,
    pub seed: u64,
}

impl Evaluator<'_> {
    /// Recognizes `waveform` as `lang`; audio too short for the oracle counts as silence.
    pub fn transcribe(&self, waveform: &[f32], lang: &str) -> Result<Vec<String>, EvalError> {
        match self.oracle.recognize_lang(waveform, lang) {
            Ok(r) => Ok(r.phonemes),
            Err(SynthError::TooShort { .. }) => Ok(Vec::new()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn evaluate_item<T: Scalar>(&self, params: &ModelParams<T>, item: &TestItem, index: usize) -> Result<UtteranceResult, EvalError> {
        let ids = self.table.encode(&item.lang, &item.phonemes)?;
        let seed = self.seed.wrapping_add(index as u64);
        let speech = params.speak(&ids, item.speaker, self.stats, self.audio, seed)?;
        let hypothesis = self.transcribe(&speech.waveform, &item.lang)?;
        Ok(UtteranceResult {
            id: item.id.clone(),
            per: error_rate(&item.phonemes, &hypothesis)?,
            wer: None,
            diagnostics: attention_diagnostics(&speech.output.alignment, &self.thresholds)?,
            stopped_by: speech.output.stopped_by,
            hypothesis,
        })
    }

    /// Synthesizes and scores every test item in order, after checking test/train disjointness.
    pub fn evaluate<T: Scalar>(&self, params: &ModelParams<T>, test: &[TestItem], train: &[TestItem]) -> Result<EvaluationReport, EvalError> {
        if test.is_empty() {
            return Err(EvalError::EmptyTestSet);
        }
        check_disjoint(test, train)?;
        let rows = test
            .iter()
            .enumerate()
            .map(|(i, t)| self.evaluate_item(params, t, i))
            .collect::<Result<_, _>>()?;
        Ok(EvaluationReport { rows })
    }
}
