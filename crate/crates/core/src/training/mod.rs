//! Losses with per-speaker reweighting, early stopping, attention diagnostics and the
//! pre-training strategies.

pub mod checkpoint;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{split_validation, Example};
use crate::model::{Bound, Group, ModelError, ModelParams};
use crate::tensor::{AdamConfig, AdamState, Graph, Scalar, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("speaker {0} has no loss weight")]
    UnknownSpeaker(usize),
    #[error("{0}")]
    Data(String),
    #[error("empty alignment")]
    EmptyAlignment,
    #[error("non-finite loss at step {0}")]
    Diverged(u64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Per-speaker loss weight proportional to `1 / N_s`, `N_s` being the speaker's utterance count in the active set.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerWeights {
    weights: BTreeMap<usize, f64>,
}

impl SpeakerWeights {
    /// Weight `n_max / n_s`: proportional to `1 / n_s`, and exactly 1 for every speaker of a
    /// balanced corpus, so the weighted mean then reduces to the plain mean bit for bit.
    pub fn from_counts(counts: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let counts: Vec<(usize, usize)> = counts.into_iter().filter(|&(_, n)| n > 0).collect();
        let most = counts.iter().map(|&(_, n)| n).max().unwrap_or(1) as f64;
        Self {
            weights: counts.into_iter().map(|(s, n)| (s, most / n as f64)).collect(),
        }
    }

    pub fn from_examples<T>(examples: &[Example<T>]) -> Self {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for e in examples {
            *counts.entry(e.speaker).or_default() += 1;
        }
        Self::from_counts(counts)
    }

    pub fn get(&self, speaker: usize) -> Result<f64, TrainError> {
        self.weights.get(&speaker).copied().ok_or(TrainError::UnknownSpeaker(speaker))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights.iter().map(|(&s, &w)| (s, w))
    }
}

/// `Σ w_s(i) · loss_i / Σ w_s(i)`.
pub fn weighted_mean(losses: &[f64], speakers: &[usize], weights: &SpeakerWeights) -> Result<f64, TrainError> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (&l, &s) in losses.iter().zip(speakers) {
        let w = weights.get(s)?;
        num += w * l;
        den += w;
    }
    if den == 0.0 {
        return Err(TrainError::Data("weighted mean of an empty batch".into()));
    }
    Ok(num / den)
}

/// Patience-based early stopping on a validation loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub patience: usize,
    pub best_val: f64,
    pub evals_since_best: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStop {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_val: f64::INFINITY,
            evals_since_best: 0,
        }
    }

    /// Records one evaluation; stop is signalled exactly when `evals_since_best == patience`.
    pub fn observe(&mut self, val: f64) -> Observation {
        let improved = val < self.best_val;
        if improved {
            self.best_val = val;
            self.evals_since_best = 0;
        } else {
            self.evals_since_best += 1;
        }
        Observation {
            improved,
            stop: self.evals_since_best == self.patience,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticThresholds {
    pub focus: f64,
    pub monotonicity: f64,
}

impl Default for DiagnosticThresholds {
    fn default() -> Self {
        Self {
            focus: 0.3,
            monotonicity: 0.6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionDiagnostics {
    pub focus: f64,
    pub monotonicity: f64,
    pub failed: bool,
}

/// Focus is the mean per-step peak weight; monotonicity the fraction of adjacent steps whose
/// argmax does not move backwards.
pub fn attention_diagnostics<T: Scalar>(
    alignment: &Tensor<T>,
    thresholds: &DiagnosticThresholds,
) -> Result<AttentionDiagnostics, TrainError> {
    let (steps, s) = (alignment.rows(), alignment.cols());
    if alignment.is_empty() || steps == 0 || s == 0 {
        return Err(TrainError::EmptyAlignment);
    }
    let mut focus = 0.0;
    let mut argmax = Vec::with_capacity(steps);
    for r in 0..steps {
        let row = alignment.row_slice(r);
        let (mut bi, mut bv) = (0, f64::NEG_INFINITY);
        for (i, v) in row.iter().enumerate() {
            if v.as_f64() > bv {
                bi = i;
                bv = v.as_f64();
            }
        }
        focus += bv;
        argmax.push(bi);
    }
    focus /= steps as f64;
    let monotonicity = if steps < 2 {
        1.0
    } else {
        argmax.windows(2).filter(|w| w[1] >= w[0]).count() as f64 / (steps - 1) as f64
    };
    Ok(AttentionDiagnostics {
        focus,
        monotonicity,
        failed: focus < thresholds.focus || monotonicity < thresholds.monotonicity,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub max_steps: usize,
    pub val_fraction: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub stop_loss_weight: f64,
    /// Step after which the learning rate decays; 0 keeps it constant.
    pub decay_start: usize,
    pub decay_half_life: usize,
    /// Cap on validation utterances scored per evaluation; 0 scores all.
    pub val_limit: usize,
    pub seed: u64,
    pub thresholds: DiagnosticThresholds,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 8,
            eval_every: 200,
            patience: 5,
            max_steps: 20_000,
            val_fraction: 0.1,
            grad_clip: 1.0,
            stop_loss_weight: 0.1,
            decay_start: 0,
            decay_half_life: 2000,
            val_limit: 0,
            seed: 1,
            thresholds: DiagnosticThresholds::default(),
        }
    }
}

impl TrainConfig {
    pub fn learning_rate(&self, step: usize) -> f64 {
        if self.decay_start == 0 || step <= self.decay_start {
            self.adam.lr
        } else {
            let k = (step - self.decay_start) as f64 / self.decay_half_life.max(1) as f64;
            self.adam.lr * 0.5f64.powf(k)
        }
    }
}

/// Per-item losses recorded on a graph.
pub struct ItemLoss {
    /// `[1, 1]`: L1 mel + L1 linear + weighted stop BCE.
    pub raw: Var,
    pub alignment: Option<Var>,
}

/// Teacher-forced forward pass and loss for one example.
pub fn item_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    b: &Bound,
    params: &ModelParams<T>,
    ex: &Example<T>,
    decoder_only: bool,
    stop_weight: f64,
) -> Result<ItemLoss, TrainError> {
    let memory = if decoder_only {
        None
    } else {
        Some(params.encode(g, b, &ex.ids, ex.speaker)?)
    };
    let d = params.decode(g, b, memory, ex.speaker, Some(&ex.mel), usize::MAX, decoder_only)?;
    let [frames, _] = g.shape(d.mel);
    let tm = g.constant(frames, ex.mel.cols(), padded(&ex.mel, frames))?;
    let tl = g.constant(frames, ex.linear.cols(), padded(&ex.linear, frames))?;
    let l_mel = g.l1_loss(d.mel, tm)?;
    let l_lin = g.l1_loss(d.linear, tl)?;
    let steps = g.shape(d.stop_logits)[0];
    let mut stop_target = vec![T::zero(); steps];
    stop_target[steps - 1] = T::one();
    let st = g.constant(steps, 1, stop_target)?;
    let l_stop = g.bce_with_logits(d.stop_logits, st)?;
    let l_stop = g.scale(l_stop, T::of(stop_weight));
    let raw = g.add(l_mel, l_lin)?;
    let raw = g.add(raw, l_stop)?;
    Ok(ItemLoss {
        raw,
        alignment: d.alignment,
    })
}

fn padded<T: Scalar>(t: &Tensor<T>, rows: usize) -> Vec<T> {
    let mut v = t.data().to_vec();
    v.resize(rows * t.cols(), T::zero());
    v
}

/// Reweighted batch loss `Σ w_i · raw_i / Σ w_i` as a graph node.
pub fn batch_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    b: &Bound,
    params: &ModelParams<T>,
    batch: &[&Example<T>],
    weights: &SpeakerWeights,
    decoder_only: bool,
    stop_weight: f64,
) -> Result<Var, TrainError> {
    let ws: Vec<f64> = batch.iter().map(|e| weights.get(e.speaker)).collect::<Result<_, _>>()?;
    let total: f64 = ws.iter().sum();
    if batch.is_empty() {
        return Err(TrainError::Data("empty batch".into()));
    }
    let mut acc: Option<Var> = None;
    for (ex, w) in batch.iter().zip(ws) {
        let item = item_loss(g, b, params, ex, decoder_only, stop_weight)?;
        let term = g.scale(item.raw, T::of(w));
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    Ok(g.scale(acc.expect("non-empty batch"), T::of(1.0 / total)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: u64,
    pub split: String,
    pub loss: f64,
    pub focus: Option<f64>,
    pub monotonicity: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub rows: Vec<HistoryRow>,
    /// Steps actually taken.
    pub steps: u64,
    pub initial_val: Option<f64>,
    pub best_val: Option<f64>,
}

impl History {
    pub fn to_tsv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
        let mut s = String::from("step\tsplit\tloss\tfocus\tmonotonicity\n");
        for r in &self.rows {
            s.push_str(&format!("{}\t{}\t{:.6}\t{}\t{}\n", r.step, r.split, r.loss, opt(r.focus), opt(r.monotonicity)));
        }
        s
    }

    pub fn extend(&mut self, other: History) {
        self.rows.extend(other.rows);
        self.steps += other.steps;
        if self.initial_val.is_none() {
            self.initial_val = other.initial_val;
        }
        self.best_val = other.best_val.or(self.best_val);
    }
}

/// Validation summary: weighted loss plus mean attention diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Validation {
    pub loss: f64,
    pub focus: Option<f64>,
    pub monotonicity: Option<f64>,
    pub failed_fraction: Option<f64>,
}

const VALIDATION_SEED: u64 = 0x5641_4c49_4441_5445;

pub fn validate<T: Scalar>(
    params: &ModelParams<T>,
    val: &[Example<T>],
    decoder_only: bool,
    cfg: &TrainConfig,
) -> Result<Validation, TrainError> {
    let items: Vec<&Example<T>> = if cfg.val_limit > 0 {
        val.iter().take(cfg.val_limit).collect()
    } else {
        val.iter().collect()
    };
    if items.is_empty() {
        return Err(TrainError::Data("empty validation split".into()));
    }
    let weights = SpeakerWeights::from_examples(val);
    let mut losses = Vec::with_capacity(items.len());
    let mut speakers = Vec::with_capacity(items.len());
    let mut diags = Vec::new();
    for (i, ex) in items.iter().enumerate() {
        // Same prenet regime as synthesis, with masks fixed across evaluations.
        let mut g = if params.config.inference_dropout {
            Graph::training(cfg.seed ^ VALIDATION_SEED, i as u64)
        } else {
            Graph::new()
        };
        let b = params.bind(&mut g);
        let item = item_loss(&mut g, &b, params, ex, decoder_only, cfg.stop_loss_weight)?;
        losses.push(g.scalar(item.raw).as_f64());
        speakers.push(ex.speaker);
        if let Some(a) = item.alignment {
            diags.push(attention_diagnostics(&g.tensor(a), &cfg.thresholds)?);
        }
    }
    let n = diags.len() as f64;
    let mean = |f: fn(&AttentionDiagnostics) -> f64| (!diags.is_empty()).then(|| diags.iter().map(f).sum::<f64>() / n);
    Ok(Validation {
        loss: weighted_mean(&losses, &speakers, &weights)?,
        focus: mean(|d| d.focus),
        monotonicity: mean(|d| d.monotonicity),
        failed_fraction: mean(|d| if d.failed { 1.0 } else { 0.0 }),
    })
}

fn global_norm<T: Scalar>(grads: &[Option<Vec<T>>]) -> f64 {
    grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// One optimizer step on `batch`; returns the batch loss.
#[allow(clippy::too_many_arguments)]
pub fn train_step<T: Scalar>(
    params: &mut ModelParams<T>,
    adam: &mut AdamState<T>,
    batch: &[&Example<T>],
    weights: &SpeakerWeights,
    decoder_only: bool,
    cfg: &TrainConfig,
    graph_seed: u64,
    step: u64,
) -> Result<f64, TrainError> {
    let (loss, mut grads) = {
        let mut g = Graph::training(graph_seed, step);
        let b = params.bind(&mut g);
        let loss = batch_loss(&mut g, &b, params, batch, weights, decoder_only, cfg.stop_loss_weight)?;
        g.backward(loss)?;
        let grads: Vec<Option<Vec<T>>> = params
            .tensors
            .iter()
            .zip(&b.vars)
            .map(|(t, &v)| {
                t.requires_grad()
                    .then(|| g.grad(v).map_or_else(|| vec![T::zero(); t.len()], <[T]>::to_vec))
            })
            .collect();
        (g.scalar(loss).as_f64(), grads)
    };
    if !loss.is_finite() {
        return Err(TrainError::Diverged(step));
    }
    if cfg.grad_clip > 0.0 {
        let norm = global_norm(&grads);
        if norm > cfg.grad_clip {
            let s = T::of(cfg.grad_clip / norm);
            for g in grads.iter_mut().flatten() {
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    for (t, g) in params.tensors.iter_mut().zip(grads) {
        match g {
            Some(g) => t.set_grad(g)?,
            None => t.zero_grad(),
        }
    }
    adam.config.lr = cfg.learning_rate(step as usize);
    adam.step(&mut params.tensors)?;
    // A frozen table is already on the sphere; rescaling it again would still perturb its bits.
    if params.phoneme_embedding().requires_grad() {
        params.renormalize_embeddings();
    }
    debug_assert!(embedding_norm_deviation(params) < 1e-4);
    Ok(loss)
}

/// Largest |‖row‖ − target| over non-PAD phoneme embedding rows.
pub fn embedding_norm_deviation<T: Scalar>(params: &ModelParams<T>) -> f64 {
    let e = params.phoneme_embedding();
    let target = params.config.embed_norm_target;
    (1..e.rows())
        .map(|r| {
            let n = e.row_slice(r).iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
            (n - target).abs()
        })
        .fold(0.0, f64::max)
}

/// Trains on `train` with early stopping on `val` and returns the best parameters seen.
///
/// Validation runs before the first step and then every `eval_every` steps; training ends when
/// early stopping fires or after `max_steps`.
pub fn fit<T: Scalar>(
    params: &mut ModelParams<T>,
    train: &[Example<T>],
    val: &[Example<T>],
    decoder_only: bool,
    cfg: &TrainConfig,
    phase: &str,
) -> Result<History, TrainError> {
    if train.is_empty() {
        return Err(TrainError::Data(format!("{phase}: empty training set")));
    }
    let phase_tag = phase.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    let graph_seed = cfg.seed ^ phase_tag;
    let weights = SpeakerWeights::from_examples(train);
    let mut history = History::default();
    let mut early = EarlyStop::new(cfg.patience);
    let record = |h: &mut History, step: u64, v: &Validation| {
        h.rows.push(HistoryRow {
            step,
            split: format!("{phase}/val"),
            loss: v.loss,
            focus: v.focus,
            monotonicity: v.monotonicity,
        })
    };
    let v0 = validate(params, val, decoder_only, cfg)?;
    record(&mut history, 0, &v0);
    history.initial_val = Some(v0.loss);
    history.best_val = Some(v0.loss);
    if early.observe(v0.loss).stop {
        return Ok(history);
    }
    let mut best = params.tensors.clone();
    let mut adam = AdamState::new(&params.tensors, cfg.adam.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(graph_seed);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut running = 0.0;
    let mut running_n = 0usize;
    for step in 1..=cfg.max_steps as u64 {
        let bs = cfg.batch_size.min(train.len());
        if cursor + bs > order.len() {
            order = (0..train.len()).collect();
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let batch: Vec<&Example<T>> = order[cursor..cursor + bs].iter().map(|&i| &train[i]).collect();
        cursor += bs;
        let loss = train_step(params, &mut adam, &batch, &weights, decoder_only, cfg, graph_seed, step)?;
        history.steps = step;
        running += loss;
        running_n += 1;
        if step % cfg.eval_every.max(1) as u64 == 0 || step == cfg.max_steps as u64 {
            history.rows.push(HistoryRow {
                step,
                split: format!("{phase}/train"),
                loss: running / running_n as f64,
                focus: None,
                monotonicity: None,
            });
            running = 0.0;
            running_n = 0;
            let v = validate(params, val, decoder_only, cfg)?;
            record(&mut history, step, &v);
            log::info!("{phase} step {step}: val {:.5} focus {:?}", v.loss, v.focus);
            let obs = early.observe(v.loss);
            if obs.improved {
                best = params.tensors.clone();
                history.best_val = Some(v.loss);
            }
            if obs.stop {
                break;
            }
        }
    }
    for (t, b) in params.tensors.iter_mut().zip(best) {
        *t = b;
    }
    Ok(history)
}

/// Pre-training strategy for the low-resource comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    /// No pre-training.
    #[serde(rename = "t-base")]
    TBase,
    /// Decoder-only pre-training on high-resource speech.
    #[serde(rename = "pd-h")]
    PdH,
    /// Decoder-only pre-training on speech of the low-resource language.
    #[serde(rename = "pd-e")]
    PdE,
    /// Whole-model pre-training on high-resource pairs plus the low-resource pairs.
    #[serde(rename = "pa-hl")]
    PaHl,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::TBase, Strategy::PdH, Strategy::PdE, Strategy::PaHl];

    pub fn tag(self) -> &'static str {
        match self {
            Strategy::TBase => "T_BASE",
            Strategy::PdH => "PD_H",
            Strategy::PdE => "PD_E",
            Strategy::PaHl => "PA_HL",
        }
    }

    /// Row label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Strategy::TBase => "T-base",
            Strategy::PdH => "PD-H",
            Strategy::PdE => "PD-E",
            Strategy::PaHl => "PA-HL",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::TBase => "t-base",
            Strategy::PdH => "pd-h",
            Strategy::PdE => "pd-e",
            Strategy::PaHl => "pa-hl",
        }
    }

    pub fn is_decoder_only(self) -> bool {
        matches!(self, Strategy::PdH | Strategy::PdE)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s.to_ascii_lowercase() || st.tag() == s.to_ascii_uppercase())
            .ok_or_else(|| format!("unknown strategy {s:?} (expected t-base, pd-h, pd-e or pa-hl)"))
    }
}

/// Runs the pre-training phase of `strategy`.
///
/// `speech_or_pairs` is the high-resource pair set for PA-HL, or the speech used for decoder
/// pre-training for PD-H / PD-E (its phoneme ids are ignored). Decoder-only runs freeze the
/// embedding, encoder and attention groups.
pub fn run_pretrain<T: Scalar>(
    strategy: Strategy,
    speech_or_pairs: &[Example<T>],
    low_resource: &[Example<T>],
    params: &mut ModelParams<T>,
    cfg: &TrainConfig,
) -> Result<History, TrainError> {
    match strategy {
        Strategy::TBase => Ok(History::default()),
        Strategy::PdH | Strategy::PdE => {
            if speech_or_pairs.is_empty() {
                return Err(TrainError::Data(format!("{}: no speech data for decoder pre-training", strategy.tag())));
            }
            let (train, val) = split_validation(speech_or_pairs, cfg.val_fraction, cfg.seed);
            params.set_trainable(&[Group::Decoder, Group::Postnet]);
            let result = fit(params, &train, &val, true, cfg, "pretrain");
            params.set_trainable(&[Group::Embedding, Group::Encoder, Group::Attention, Group::Decoder, Group::Postnet]);
            result
        }
        Strategy::PaHl => {
            if low_resource.is_empty() {
                return Err(TrainError::Data("PA_HL: no low-resource pairs to pool".into()));
            }
            let pooled: Vec<Example<T>> = speech_or_pairs.iter().chain(low_resource).cloned().collect();
            let (train, val) = split_validation(&pooled, cfg.val_fraction, cfg.seed);
            fit(params, &train, &val, false, cfg, "pretrain")
        }
    }
}

/// Fine-tunes every module on the low-resource pairs.
pub fn run_finetune<T: Scalar>(
    params: &mut ModelParams<T>,
    low_resource: &[Example<T>],
    cfg: &TrainConfig,
) -> Result<History, TrainError> {
    if low_resource.is_empty() {
        return Err(TrainError::Data("fine-tune set is empty".into()));
    }
    let (train, val) = split_validation(low_resource, cfg.val_fraction, cfg.seed);
    fit(params, &train, &val, false, cfg, "finetune")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_mean_examples() {
        let w = SpeakerWeights::from_counts([(0, 10), (1, 5)]);
        assert_eq!(weighted_mean(&[2.0, 2.0], &[0, 1], &w).unwrap(), 2.0);
        let w = SpeakerWeights::from_counts([(0, 100), (1, 1)]);
        let v = weighted_mean(&[1.0, 3.0], &[0, 1], &w).unwrap();
        assert!((v - 3.01 / 1.01).abs() < 1e-12);
        assert!((v - 2.980).abs() < 1e-3);
        assert!(matches!(weighted_mean(&[1.0], &[7], &w), Err(TrainError::UnknownSpeaker(7))));
    }

    #[test]
    fn early_stop_follows_patience() {
        let mut e = EarlyStop::new(2);
        let seq = [5.0, 4.0, 4.5, 3.0, 3.5, 3.2, 1.0];
        let stops: Vec<bool> = seq.iter().map(|&v| e.observe(v).stop).collect();
        assert_eq!(stops, vec![false, false, false, false, false, true, false]);
        let mut zero = EarlyStop::new(0);
        assert!(zero.observe(1.0).stop);
    }

    #[test]
    fn diagnostics_examples() {
        let t = DiagnosticThresholds::default();
        let eye = Tensor::<f64>::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let d = attention_diagnostics(&eye, &t).unwrap();
        assert_eq!((d.focus, d.monotonicity, d.failed), (1.0, 1.0, false));
        let uni = Tensor::<f64>::full(vec![4, 10], 0.1);
        let d = attention_diagnostics(&uni, &t).unwrap();
        assert!((d.focus - 0.1).abs() < 1e-12 && d.failed);
        let rows: Vec<Vec<f64>> = [0usize, 1, 2, 1, 3]
            .iter()
            .map(|&a| (0..4).map(|i| if i == a { 1.0 } else { 0.0 }).collect())
            .collect();
        let d = attention_diagnostics(&Tensor::from_rows(&rows).unwrap(), &t).unwrap();
        assert_eq!(d.monotonicity, 0.75);
        assert!(matches!(attention_diagnostics(&Tensor::<f64>::zeros(vec![0, 3]), &t), Err(TrainError::EmptyAlignment)));
    }

    #[test]
    fn strategy_names_parse() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
            assert_eq!(s.tag().parse::<Strategy>().unwrap(), s);
        }
        assert!("xx".parse::<Strategy>().is_err());
    }

    #[test]
    fn learning_rate_schedule() {
        let c = TrainConfig {
            decay_start: 100,
            decay_half_life: 50,
            ..Default::default()
        };
        assert_eq!(c.learning_rate(100), 1e-3);
        assert!((c.learning_rate(150) - 5e-4).abs() < 1e-15);
    }
}
