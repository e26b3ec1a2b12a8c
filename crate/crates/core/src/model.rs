//! Simplified multilingual multi-speaker Tacotron.
//!
//! phoneme ids → embedding → prenet → BiGRU encoder, with the speaker embedding appended to
//! every encoder frame. An attention GRU drives additive attention over the encoder states;
//! two residual GRUs emit `r` mel frames per step plus a stop logit. A BiGRU post-net maps
//! the mel sequence to linear frames.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{self, AudioConfig, AudioError, SpecKind, Spectrogram};
use crate::dataset::FeatureStats;
use crate::phoneme::PAD;
use crate::tensor::{Graph, GruVars, Scalar, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("phoneme id {id} out of range for table of {size}")]
    PhonemeId { id: usize, size: usize },
    #[error("speaker id {id} out of range for {count} speakers")]
    SpeakerId { id: usize, count: usize },
    #[error("empty phoneme sequence")]
    EmptyInput,
    #[error("encoder states are required unless decoding in decoder-only mode")]
    MissingEncoder,
    #[error("teacher mel has {got} bins, model expects {expected}")]
    TeacherBins { expected: usize, got: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub embed_norm_target: f64,
    pub encoder_hidden: usize,
    pub attention_dim: usize,
    pub decoder_hidden: usize,
    pub prenet_dims: [usize; 2],
    pub postnet_hidden: usize,
    pub reduction_factor: usize,
    pub speaker_embed_dim: usize,
    pub num_speakers: usize,
    pub phoneme_table_size: usize,
    pub mel_bins: usize,
    pub linear_bins: usize,
    pub max_decoder_steps: usize,
    /// Dropout rate of the decoder prenet.
    pub dropout: f64,
    /// Dropout rate of the encoder prenet.
    pub encoder_dropout: f64,
    /// Also append the speaker embedding to the decoder prenet output.
    pub speaker_in_decoder: bool,
    /// Keep prenet dropout active during free-running synthesis.
    pub inference_dropout: bool,
    pub stop_threshold: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            embed_norm_target: 1.0,
            encoder_hidden: 64,
            attention_dim: 64,
            decoder_hidden: 128,
            prenet_dims: [64, 32],
            postnet_hidden: 64,
            reduction_factor: 2,
            speaker_embed_dim: 32,
            num_speakers: 1,
            phoneme_table_size: 2,
            mel_bins: 80,
            linear_bins: 513,
            max_decoder_steps: 400,
            dropout: 0.5,
            encoder_dropout: 0.0,
            speaker_in_decoder: true,
            inference_dropout: true,
            stop_threshold: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            self.embed_dim,
            self.encoder_hidden,
            self.attention_dim,
            self.decoder_hidden,
            self.prenet_dims[0],
            self.prenet_dims[1],
            self.postnet_hidden,
            self.reduction_factor,
            self.speaker_embed_dim,
            self.num_speakers,
            self.mel_bins,
            self.linear_bins,
            self.max_decoder_steps,
        ];
        if dims.contains(&0) {
            return Err(ModelError::Config("all dimensions must be positive".into()));
        }
        if self.phoneme_table_size < 3 {
            return Err(ModelError::Config("phoneme table needs specials plus at least one phoneme".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.encoder_dropout) {
            return Err(ModelError::Config("dropout must be in [0, 1)".into()));
        }
        if self.embed_norm_target.is_nan() || self.embed_norm_target <= 0.0 {
            return Err(ModelError::Config("embed_norm_target must be positive".into()));
        }
        Ok(())
    }

    /// Width of an encoder state: BiGRU outputs plus the speaker embedding.
    pub fn memory_dim(&self) -> usize {
        2 * self.encoder_hidden + self.speaker_embed_dim
    }
}

/// Parameter groups used to freeze or select parts of the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Group {
    Embedding,
    Encoder,
    Attention,
    Decoder,
    Postnet,
}

#[derive(Clone, Copy, Debug)]
struct Dense {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct Gru {
    w_ih: usize,
    w_hh: usize,
    b_ih: usize,
    b_hh: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    phoneme_embedding: usize,
    speaker_embedding: usize,
    enc_prenet: [Dense; 2],
    enc_fwd: Gru,
    enc_bwd: Gru,
    att_memory: usize,
    att_query: usize,
    att_v: usize,
    dec_prenet: [Dense; 2],
    att_rnn: Gru,
    dec_proj: Dense,
    dec_rnn: [Gru; 2],
    frame_out: Dense,
    stop_out: Dense,
    post_fwd: Gru,
    post_bwd: Gru,
    post_out: Dense,
}

/// All trainable tensors with their names and groups.
#[derive(Clone, Debug)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub tensors: Vec<Tensor<T>>,
    names: Vec<String>,
    groups: Vec<Group>,
    layout: Layout,
    /// Seed behind initialization; also re-seeds degenerate embedding rows.
    pub seed: u64,
}

struct Builder<'r, T> {
    tensors: Vec<Tensor<T>>,
    names: Vec<String>,
    groups: Vec<Group>,
    rng: &'r mut ChaCha8Rng,
}

impl<T: Scalar> Builder<'_, T> {
    fn push(&mut self, name: &str, group: Group, t: Tensor<T>) -> usize {
        self.tensors.push(t.with_requires_grad(true));
        self.names.push(name.to_string());
        self.groups.push(group);
        self.tensors.len() - 1
    }

    fn dense(&mut self, name: &str, group: Group, fan_in: usize, fan_out: usize) -> Dense {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Tensor::uniform(vec![fan_in, fan_out], bound, self.rng);
        Dense {
            w: self.push(&format!("{name}.weight"), group, w),
            b: self.push(&format!("{name}.bias"), group, Tensor::zeros(vec![1, fan_out])),
        }
    }

    fn matrix(&mut self, name: &str, group: Group, fan_in: usize, fan_out: usize) -> usize {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Tensor::uniform(vec![fan_in, fan_out], bound, self.rng);
        self.push(name, group, w)
    }

    fn gru(&mut self, name: &str, group: Group, input: usize, hidden: usize) -> Gru {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_ih = Tensor::uniform(vec![input, 3 * hidden], bound, self.rng);
        let w_hh = Tensor::uniform(vec![hidden, 3 * hidden], bound, self.rng);
        Gru {
            w_ih: self.push(&format!("{name}.w_ih"), group, w_ih),
            w_hh: self.push(&format!("{name}.w_hh"), group, w_hh),
            b_ih: self.push(&format!("{name}.b_ih"), group, Tensor::zeros(vec![1, 3 * hidden])),
            b_hh: self.push(&format!("{name}.b_hh"), group, Tensor::zeros(vec![1, 3 * hidden])),
        }
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            tensors: Vec::new(),
            names: Vec::new(),
            groups: Vec::new(),
            rng: &mut rng,
        };
        use Group::*;
        let emb_std = 0.5 / (c.embed_dim as f64).sqrt();
        let t = Tensor::randn(vec![c.phoneme_table_size, c.embed_dim], emb_std, b.rng);
        let phoneme_embedding = b.push("phoneme_embedding", Embedding, t);
        let t = Tensor::randn(vec![c.num_speakers, c.speaker_embed_dim], 0.3, b.rng);
        let speaker_embedding = b.push("speaker_embedding", Embedding, t);
        let [p1, p2] = c.prenet_dims;
        let enc_prenet = [
            b.dense("encoder.prenet.0", Encoder, c.embed_dim, p1),
            b.dense("encoder.prenet.1", Encoder, p1, p2),
        ];
        let enc_fwd = b.gru("encoder.gru_fwd", Encoder, p2, c.encoder_hidden);
        let enc_bwd = b.gru("encoder.gru_bwd", Encoder, p2, c.encoder_hidden);
        let dm = c.memory_dim();
        let att_memory = b.matrix("attention.memory", Attention, dm, c.attention_dim);
        let att_query = b.matrix("attention.query", Attention, c.decoder_hidden, c.attention_dim);
        let att_v = b.matrix("attention.v", Attention, c.attention_dim, 1);
        let dec_prenet = [
            b.dense("decoder.prenet.0", Decoder, c.mel_bins, p1),
            b.dense("decoder.prenet.1", Decoder, p1, p2),
        ];
        let spk_in = if c.speaker_in_decoder { c.speaker_embed_dim } else { 0 };
        let att_rnn = b.gru("decoder.attention_rnn", Decoder, p2 + spk_in + dm, c.decoder_hidden);
        let dec_proj = b.dense("decoder.proj", Decoder, c.decoder_hidden + dm, c.decoder_hidden);
        let dec_rnn = [
            b.gru("decoder.rnn.0", Decoder, c.decoder_hidden, c.decoder_hidden),
            b.gru("decoder.rnn.1", Decoder, c.decoder_hidden, c.decoder_hidden),
        ];
        let frame_out = b.dense("decoder.frames", Decoder, c.decoder_hidden, c.reduction_factor * c.mel_bins);
        let stop_out = b.dense("decoder.stop", Decoder, c.decoder_hidden + dm, 1);
        let post_fwd = b.gru("postnet.gru_fwd", Postnet, c.mel_bins, c.postnet_hidden);
        let post_bwd = b.gru("postnet.gru_bwd", Postnet, c.mel_bins, c.postnet_hidden);
        let post_out = b.dense("postnet.out", Postnet, 2 * c.postnet_hidden, c.linear_bins);
        let Builder {
            tensors, names, groups, ..
        } = b;
        let mut params = Self {
            config,
            tensors,
            names,
            groups,
            layout: Layout {
                phoneme_embedding,
                speaker_embedding,
                enc_prenet,
                enc_fwd,
                enc_bwd,
                att_memory,
                att_query,
                att_v,
                dec_prenet,
                att_rnn,
                dec_proj,
                dec_rnn,
                frame_out,
                stop_out,
                post_fwd,
                post_bwd,
                post_out,
            },
            seed,
        };
        params.renormalize_embeddings();
        Ok(params)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn phoneme_embedding(&self) -> &Tensor<T> {
        &self.tensors[self.layout.phoneme_embedding]
    }

    pub fn speaker_embedding(&self) -> &Tensor<T> {
        &self.tensors[self.layout.speaker_embedding]
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Marks exactly the tensors in `groups` as trainable.
    pub fn set_trainable(&mut self, groups: &[Group]) {
        for (t, g) in self.tensors.iter_mut().zip(&self.groups) {
            t.set_requires_grad(groups.contains(g));
        }
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Rescales every non-PAD phoneme embedding row to the target L2 norm and zeroes PAD.
    /// A row whose norm has collapsed is redrawn from a Gaussian seeded by the row index.
    pub fn renormalize_embeddings(&mut self) {
        let target = self.config.embed_norm_target;
        let seed = self.seed;
        let emb = &mut self.tensors[self.layout.phoneme_embedding];
        let d = emb.cols();
        let rows = emb.rows();
        let data = emb.data_mut();
        for r in 0..rows {
            let row = &mut data[r * d..(r + 1) * d];
            if r == PAD {
                row.fill(T::zero());
                continue;
            }
            let mut norm = row.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
            if norm < 1e-12 {
                log::warn!("phoneme embedding row {r} collapsed to zero; re-initializing");
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x5EED_0000 + r as u64));
                let fresh = Tensor::<T>::randn(vec![d], 1.0, &mut rng);
                row.copy_from_slice(fresh.data());
                norm = row.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
            }
            let s = T::of(target / norm);
            for v in row.iter_mut() {
                *v *= s;
            }
        }
    }

    /// Registers every tensor on `g` as a leaf.
    pub fn bind<'a>(&'a self, g: &mut Graph<'a, T>) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| g.param(t)).collect(),
        }
    }

    fn gru_vars(b: &Bound, gru: Gru) -> GruVars {
        GruVars {
            w_ih: b.vars[gru.w_ih],
            w_hh: b.vars[gru.w_hh],
            b_ih: b.vars[gru.b_ih],
            b_hh: b.vars[gru.b_hh],
        }
    }

    fn dense_fwd(&self, g: &mut Graph<'_, T>, b: &Bound, x: Var, d: Dense) -> Result<Var, TensorError> {
        let y = g.matmul(x, b.vars[d.w])?;
        g.add_bias(y, b.vars[d.b])
    }

    fn prenet(&self, g: &mut Graph<'_, T>, b: &Bound, x: Var, layers: [Dense; 2], rate: f64) -> Result<Var, TensorError> {
        let mut h = x;
        for d in layers {
            h = self.dense_fwd(g, b, h, d)?;
            h = g.relu(h);
            h = g.dropout(h, rate);
        }
        Ok(h)
    }

    fn check_speaker(&self, speaker: usize) -> Result<(), ModelError> {
        if speaker >= self.config.num_speakers {
            return Err(ModelError::SpeakerId {
                id: speaker,
                count: self.config.num_speakers,
            });
        }
        Ok(())
    }

    /// Encoder states `[S, 2·encoder_hidden + speaker_embed_dim]`.
    pub fn encode(&self, g: &mut Graph<'_, T>, b: &Bound, ids: &[usize], speaker: usize) -> Result<Var, ModelError> {
        if ids.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= self.config.phoneme_table_size) {
            return Err(ModelError::PhonemeId {
                id,
                size: self.config.phoneme_table_size,
            });
        }
        self.check_speaker(speaker)?;
        let l = &self.layout;
        let emb = g.gather_rows(b.vars[l.phoneme_embedding], ids)?;
        let x = self.prenet(g, b, emb, l.enc_prenet, self.config.encoder_dropout)?;
        let h = bigru(g, x, Self::gru_vars(b, l.enc_fwd), Self::gru_vars(b, l.enc_bwd), self.config.encoder_hidden)?;
        let spk = g.gather_rows(b.vars[l.speaker_embedding], &vec![speaker; ids.len()])?;
        Ok(g.concat(&[h, spk], 1)?)
    }

    /// Runs the decoder and post-net.
    ///
    /// With `teacher` (`[T, mel_bins]`) the previous frame fed at each step is the ground
    /// truth, zero-padded up to a multiple of `r`; otherwise decoding is free-running until the
    /// stop probability reaches the threshold or `max_steps` is hit. In decoder-only mode
    /// `memory` is ignored, every context vector is zero and no attention is computed.
    #[allow(clippy::too_many_arguments)]
    pub fn decode(
        &self,
        g: &mut Graph<'_, T>,
        b: &Bound,
        memory: Option<Var>,
        speaker: usize,
        teacher: Option<&Tensor<T>>,
        max_steps: usize,
        decoder_only: bool,
    ) -> Result<Decoded, ModelError> {
        self.check_speaker(speaker)?;
        let memory = if decoder_only {
            None
        } else {
            Some(memory.ok_or(ModelError::MissingEncoder)?)
        };
        let c = &self.config;
        let l = &self.layout;
        let (r, m, dm) = (c.reduction_factor, c.mel_bins, c.memory_dim());
        if let Some(t) = teacher {
            if t.cols() != m {
                return Err(ModelError::TeacherBins {
                    expected: m,
                    got: t.cols(),
                });
            }
        }
        let steps = match teacher {
            Some(t) => t.rows().div_ceil(r).max(1),
            None => max_steps,
        };
        let keys = match memory {
            Some(mem) => Some(g.matmul(mem, b.vars[l.att_memory])?),
            None => None,
        };
        let spk = if c.speaker_in_decoder {
            Some(g.gather_rows(b.vars[l.speaker_embedding], &[speaker])?)
        } else {
            None
        };
        let hd = c.decoder_hidden;
        let mut h_att = g.zeros(1, hd);
        let mut h_dec = [g.zeros(1, hd), g.zeros(1, hd)];
        let mut context = g.zeros(1, dm);
        let mut prev = g.zeros(1, m);
        let mut frames = Vec::with_capacity(steps);
        let mut stops = Vec::with_capacity(steps);
        let mut alignment = Vec::with_capacity(steps);
        let mut stopped_by = StopReason::MaxSteps;
        for step in 0..steps {
            let mut x = self.prenet(g, b, prev, l.dec_prenet, self.config.dropout)?;
            if let Some(s) = spk {
                x = g.concat(&[x, s], 1)?;
            }
            let att_in = g.concat(&[x, context], 1)?;
            h_att = g.gru_cell(att_in, h_att, Self::gru_vars(b, l.att_rnn))?;
            if let (Some(mem), Some(keys)) = (memory, keys) {
                let q = g.matmul(h_att, b.vars[l.att_query])?;
                let e = g.add_bias(keys, q)?;
                let e = g.tanh(e);
                let e = g.matmul(e, b.vars[l.att_v])?;
                let e = g.transpose(e);
                let alpha = g.softmax(e);
                alignment.push(alpha);
                context = g.matmul(alpha, mem)?;
            } else {
                context = g.zeros(1, dm);
            }
            let dec_in = g.concat(&[h_att, context], 1)?;
            let mut y = self.dense_fwd(g, b, dec_in, l.dec_proj)?;
            for (k, gru) in l.dec_rnn.iter().enumerate() {
                h_dec[k] = g.gru_cell(y, h_dec[k], Self::gru_vars(b, *gru))?;
                y = g.add(y, h_dec[k])?;
            }
            let out = self.dense_fwd(g, b, y, l.frame_out)?;
            let out = g.reshape(out, r, m)?;
            frames.push(out);
            let stop_in = g.concat(&[y, context], 1)?;
            let stop = self.dense_fwd(g, b, stop_in, l.stop_out)?;
            stops.push(stop);
            prev = match teacher {
                Some(t) => {
                    let row = (step + 1) * r - 1;
                    let data = if row < t.rows() {
                        t.row_slice(row).to_vec()
                    } else {
                        vec![T::zero(); m]
                    };
                    g.constant(1, m, data)?
                }
                None => {
                    let p = kernels_sigmoid(g.scalar(stop));
                    if p.as_f64() >= c.stop_threshold {
                        stopped_by = StopReason::Eos;
                        break;
                    }
                    g.slice(out, 0, r - 1, 1)?
                }
            };
        }
        if teacher.is_some() {
            stopped_by = StopReason::Teacher;
        }
        let mel = g.concat(&frames, 0)?;
        let stop_logits = g.concat(&stops, 0)?;
        let alignment = if alignment.is_empty() {
            None
        } else {
            Some(g.concat(&alignment, 0)?)
        };
        let h = bigru(g, mel, Self::gru_vars(b, l.post_fwd), Self::gru_vars(b, l.post_bwd), c.postnet_hidden)?;
        let linear = self.dense_fwd(g, b, h, l.post_out)?;
        Ok(Decoded {
            mel,
            linear,
            stop_logits,
            alignment,
            stopped_by,
        })
    }

    /// Free-running synthesis from phoneme ids.
    pub fn synthesize(&self, ids: &[usize], speaker: usize, seed: u64) -> Result<SynthesisOutput<T>, ModelError> {
        self.synthesize_with(ids, speaker, seed, self.config.max_decoder_steps)
    }

    pub fn synthesize_with(&self, ids: &[usize], speaker: usize, seed: u64, max_steps: usize) -> Result<SynthesisOutput<T>, ModelError> {
        let mut g = if self.config.inference_dropout {
            Graph::training(seed, 0)
        } else {
            Graph::new()
        };
        let b = self.bind(&mut g);
        let mem = self.encode(&mut g, &b, ids, speaker)?;
        let d = self.decode(&mut g, &b, Some(mem), speaker, None, max_steps, false)?;
        Ok(SynthesisOutput {
            mel: g.tensor(d.mel),
            linear: g.tensor(d.linear),
            alignment: g.tensor(d.alignment.expect("attention mode")),
            stopped_by: d.stopped_by,
        })
    }

    /// Free-running synthesis followed by denormalization and Griffin-Lim.
    pub fn speak(
        &self,
        ids: &[usize],
        speaker: usize,
        stats: &FeatureStats,
        audio_config: &AudioConfig,
        seed: u64,
    ) -> Result<Speech<T>, ModelError> {
        if audio_config.linear_bins() != self.config.linear_bins {
            return Err(ModelError::Config(format!(
                "audio config yields {} linear bins, model emits {}",
                audio_config.linear_bins(),
                self.config.linear_bins
            )));
        }
        let output = self.synthesize(ids, speaker, seed)?;
        let linear = stats.linear.invert(&Spectrogram::from_tensor(SpecKind::Linear, &output.linear));
        let waveform = audio::griffin_lim(&linear, audio_config, seed)?
            .into_iter()
            .map(|v| v.as_f64() as f32)
            .collect();
        Ok(Speech { waveform, output })
    }
}

fn kernels_sigmoid<T: Scalar>(x: T) -> T {
    crate::tensor::kernels::sigmoid(x)
}

/// Bidirectional GRU over the rows of `x [S, I]` → `[S, 2H]`.
fn bigru<T: Scalar>(g: &mut Graph<'_, T>, x: Var, fwd: GruVars, bwd: GruVars, hidden: usize) -> Result<Var, TensorError> {
    let s = g.shape(x)[0];
    let rows: Vec<Var> = (0..s).map(|t| g.slice(x, 0, t, 1)).collect::<Result<_, _>>()?;
    let mut h = g.zeros(1, hidden);
    let mut out_f = Vec::with_capacity(s);
    for &row in &rows {
        h = g.gru_cell(row, h, fwd)?;
        out_f.push(h);
    }
    let mut h = g.zeros(1, hidden);
    let mut out_b = vec![h; s];
    for t in (0..s).rev() {
        h = g.gru_cell(rows[t], h, bwd)?;
        out_b[t] = h;
    }
    let f = g.concat(&out_f, 0)?;
    let bw = g.concat(&out_b, 0)?;
    g.concat(&[f, bw], 1)
}

/// Graph handles for every parameter tensor, index-aligned with [`ModelParams::tensors`].
pub struct Bound {
    pub vars: Vec<Var>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Eos,
    MaxSteps,
    Teacher,
}

/// Graph nodes produced by [`ModelParams::decode`].
pub struct Decoded {
    pub mel: Var,
    pub linear: Var,
    /// `[steps, 1]`
    pub stop_logits: Var,
    /// `[steps, S]`; absent in decoder-only mode.
    pub alignment: Option<Var>,
    pub stopped_by: StopReason,
}

#[derive(Clone, Debug)]
pub struct SynthesisOutput<T> {
    pub mel: Tensor<T>,
    pub linear: Tensor<T>,
    pub alignment: Tensor<T>,
    pub stopped_by: StopReason,
}

/// A vocoded utterance with the model outputs it came from.
#[derive(Clone, Debug)]
pub struct Speech<T> {
    pub waveform: Vec<f32>,
    pub output: SynthesisOutput<T>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phoneme::EOS;

    fn tiny() -> ModelConfig {
        ModelConfig {
            embed_dim: 8,
            encoder_hidden: 6,
            attention_dim: 5,
            decoder_hidden: 10,
            prenet_dims: [8, 6],
            postnet_hidden: 4,
            speaker_embed_dim: 32,
            num_speakers: 3,
            phoneme_table_size: 12,
            mel_bins: 7,
            linear_bins: 9,
            max_decoder_steps: 20,
            ..Default::default()
        }
    }

    #[test]
    fn encode_shape_and_speaker_concat() {
        let p = ModelParams::<f64>::new(tiny(), 1).unwrap();
        let run = |spk: usize| {
            let mut g = Graph::new();
            let b = p.bind(&mut g);
            let v = p.encode(&mut g, &b, &[3, 4, 5, EOS], spk).unwrap();
            (g.shape(v), g.tensor(v))
        };
        let (shape, a) = run(0);
        assert_eq!(shape, [4, 2 * 6 + 32]);
        let (_, b) = run(2);
        for r in 0..4 {
            assert_eq!(a.row_slice(r)[..12], b.row_slice(r)[..12]);
            assert_ne!(a.row_slice(r)[12..], b.row_slice(r)[12..]);
        }
        let mut g = Graph::new();
        let bd = p.bind(&mut g);
        let v = p.encode(&mut g, &bd, &[EOS], 0).unwrap();
        assert_eq!(g.shape(v)[0], 1);
        assert!(matches!(p.encode(&mut g, &bd, &[12], 0), Err(ModelError::PhonemeId { .. })));
        assert!(matches!(p.encode(&mut g, &bd, &[2], 3), Err(ModelError::SpeakerId { .. })));
    }

    #[test]
    fn teacher_forced_shapes() {
        let p = ModelParams::<f64>::new(tiny(), 2).unwrap();
        let mut g = Graph::training(1, 0);
        let b = p.bind(&mut g);
        let mem = p.encode(&mut g, &b, &[2, 3, EOS], 1).unwrap();
        let teacher = Tensor::zeros(vec![10, 7]);
        let d = p.decode(&mut g, &b, Some(mem), 1, Some(&teacher), 400, false).unwrap();
        assert_eq!(g.shape(d.mel), [10, 7]);
        assert_eq!(g.shape(d.linear), [10, 9]);
        assert_eq!(g.shape(d.alignment.unwrap()), [5, 3]);
        assert_eq!(g.shape(d.stop_logits), [5, 1]);
        // odd length pads up to a whole step
        let teacher = Tensor::zeros(vec![9, 7]);
        let d = p.decode(&mut g, &b, Some(mem), 1, Some(&teacher), 400, false).unwrap();
        assert_eq!(g.shape(d.mel), [10, 7]);
    }

    #[test]
    fn alignment_rows_are_distributions() {
        let p = ModelParams::<f64>::new(tiny(), 3).unwrap();
        let out = p.synthesize(&[2, 5, 7, EOS], 0, 4).unwrap();
        for r in 0..out.alignment.rows() {
            let row = out.alignment.row_slice(r);
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn untrained_model_runs_to_max_steps() {
        let p = ModelParams::<f32>::new(tiny(), 4).unwrap();
        let out = p.synthesize(&[EOS], 0, 0).unwrap();
        assert_eq!(out.stopped_by, StopReason::MaxSteps);
        assert_eq!(out.mel.rows(), 20 * 2);
        assert_eq!(out.alignment.shape(), &[20, 1]);
    }

    #[test]
    fn decoder_only_ignores_encoder_states() {
        let p = ModelParams::<f64>::new(tiny(), 5).unwrap();
        let teacher = Tensor::randn(vec![8, 7], 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        let run = |enc_seed: u64| {
            let mut g = Graph::training(9, 3);
            let b = p.bind(&mut g);
            let states = Tensor::randn(vec![4, p.config.memory_dim()], 1.0, &mut ChaCha8Rng::seed_from_u64(enc_seed));
            let mem = g.input(states);
            let d = p.decode(&mut g, &b, Some(mem), 0, Some(&teacher), 400, true).unwrap();
            assert!(d.alignment.is_none());
            (g.tensor(d.mel), g.tensor(d.linear))
        };
        let a = run(1);
        let b = run(2);
        assert!(a.0.bitwise_eq(&b.0) && a.1.bitwise_eq(&b.1));
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        assert!(matches!(p.decode(&mut g, &b, None, 0, Some(&teacher), 400, false), Err(ModelError::MissingEncoder)));
    }

    #[test]
    fn renormalize_examples() {
        let mut p = ModelParams::<f64>::new(
            ModelConfig {
                embed_dim: 2,
                phoneme_table_size: 4,
                ..tiny()
            },
            6,
        )
        .unwrap();
        let emb = p.layout.phoneme_embedding;
        p.tensors[emb].data_mut().copy_from_slice(&[5.0, 5.0, 0.6, 0.8, 3.0, 4.0, 0.0, 0.0]);
        p.renormalize_embeddings();
        let d = p.tensors[emb].data().to_vec();
        assert_eq!(&d[..2], &[0.0, 0.0]);
        assert!((d[2] - 0.6).abs() < 1e-7 && (d[3] - 0.8).abs() < 1e-7);
        assert!((d[4] - 0.6).abs() < 1e-12 && (d[5] - 0.8).abs() < 1e-12);
        let n = (d[6] * d[6] + d[7] * d[7]).sqrt();
        assert!((n - 1.0).abs() < 1e-12, "degenerate row re-drawn and normalized");
    }

    #[test]
    fn names_are_unique_and_grouped() {
        let p = ModelParams::<f32>::new(tiny(), 7).unwrap();
        let mut names = p.names().to_vec();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), p.tensors.len());
        assert_eq!(p.groups()[p.index_of("attention.v").unwrap()], Group::Attention);
        assert_eq!(p.groups()[p.index_of("decoder.attention_rnn.w_ih").unwrap()], Group::Decoder);
        assert_eq!(p.groups()[p.index_of("speaker_embedding").unwrap()], Group::Embedding);
    }
}
