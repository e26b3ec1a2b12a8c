use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use log::info;
use polytone::audio::write_wav;
use polytone::dataset::{prepare as prepare_features, Example, FeatureStats};
use polytone::evaluation::{Evaluator, TestItem};
use polytone::experiment::{counterparts, phoneme_table, sized_model, test_items, CompareConfig, CompareData, Harness};
use polytone::model::ModelConfig;
use polytone::phoneme::{phonemize, Lexicon, PhonemeTable, EOS};
use polytone::synthlang::{default_bilingual, generate_corpus, generate_lexicon, Corpus, Oracle, SynthSpec, Utterance};
use polytone::training::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use polytone::training::{attention_diagnostics, run_finetune, run_pretrain, Strategy};
use polytone::{analysis, Params};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::{Common, Failure};

/// Tags an error with the exit class it maps to.
trait Classify<T> {
    fn usage(self) -> Result<T>;
    fn data(self) -> Result<T>;
    fn training(self) -> Result<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for std::result::Result<T, E> {
    fn usage(self) -> Result<T> {
        self.map_err(|e| e.into().context(Failure::Usage))
    }
    fn data(self) -> Result<T> {
        self.map_err(|e| e.into().context(Failure::Data))
    }
    fn training(self) -> Result<T> {
        self.map_err(|e| e.into().context(Failure::Training))
    }
}

fn usage_error(msg: String) -> anyhow::Error {
    anyhow!(msg).context(Failure::Usage)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).data()?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display())).data()
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let cfg = RunConfig::load(common.config.as_deref(), &common.overrides).usage()?;
    write(&cfg.out("run_config.toml"), cfg.to_toml())?;
    Ok(cfg)
}

const SPEC_FILE: &str = "spec.toml";
const PREPARED_FILE: &str = "prepared.json";

fn load_spec(cfg: &RunConfig) -> Result<SynthSpec> {
    let path = cfg.data.corpus_dir.join(SPEC_FILE);
    let spec = SynthSpec::load(&path)
        .context("loading corpus spec (run `polytone synthlang` first?)")
        .data()?;
    if spec.sample_rate != cfg.audio.sample_rate {
        return Err(usage_error(format!(
            "corpus is {} Hz but audio.sample_rate is {}",
            spec.sample_rate, cfg.audio.sample_rate
        )));
    }
    Ok(spec)
}

fn load_utterances(cfg: &RunConfig, spec: &SynthSpec) -> Result<Vec<Utterance>> {
    let mut all = Vec::new();
    for l in &spec.languages {
        let path = cfg.data.corpus_dir.join(format!("manifest_{}.tsv", l.lang));
        if path.exists() {
            all.extend(Corpus::read(&path).data()?.utterances);
        }
    }
    if all.is_empty() {
        bail!(anyhow!("no manifests found in {}", cfg.data.corpus_dir.display()).context(Failure::Data));
    }
    Ok(all)
}

/// What `prepare` records: normalizer statistics and the phoneme inventory behind the table.
#[derive(Serialize, Deserialize)]
struct Prepared {
    audio: polytone::audio::AudioConfig,
    stats: FeatureStats,
    inventories: Vec<(String, Vec<String>)>,
    utterances: usize,
    frames: usize,
}

/// Corpus split into the roles of the low-resource setup.
struct Roles {
    high: Vec<Example<f32>>,
    low: Vec<Example<f32>>,
    extra: Vec<Example<f32>>,
}

struct Workspace {
    spec: SynthSpec,
    table: PhonemeTable,
    stats: FeatureStats,
    target: usize,
    roles: Roles,
}

fn speaker_index(spec: &SynthSpec, name: &str) -> Result<usize> {
    spec.speakers
        .iter()
        .position(|s| s.name == name)
        .or_else(|| name.parse().ok().filter(|&i: &usize| i < spec.speakers.len()))
        .ok_or_else(|| {
            let known: Vec<&str> = spec.speakers.iter().map(|s| s.name.as_str()).collect();
            usage_error(format!("unknown speaker {name:?} (known: {})", known.join(", ")))
        })
}

fn prepare_workspace(cfg: &RunConfig) -> Result<Workspace> {
    let spec = load_spec(cfg)?;
    let table = phoneme_table(&spec).usage()?;
    let utterances = load_utterances(cfg, &spec)?;
    let stats_path = cfg.out(PREPARED_FILE);
    let cached = fs::read_to_string(&stats_path)
        .ok()
        .and_then(|t| serde_json::from_str::<Prepared>(&t).ok())
        .filter(|p| p.audio == cfg.audio && p.inventories == spec.inventories());
    let (examples, stats) = prepare_features::<f32>(&utterances, spec.sample_rate, &table, &cfg.audio, cached.as_ref().map(|p| p.stats)).data()?;
    if cached.is_none() {
        let prepared = Prepared {
            audio: cfg.audio.clone(),
            stats,
            inventories: spec.inventories(),
            utterances: examples.len(),
            frames: examples.iter().map(|e| e.mel.rows()).sum(),
        };
        write(&stats_path, serde_json::to_string_pretty(&prepared)?)?;
        info!("prepared {} utterances ({} frames)", prepared.utterances, prepared.frames);
    }
    let target = speaker_index(&spec, &cfg.setup.target_speaker)?;
    let mut roles = Roles {
        high: Vec::new(),
        low: Vec::new(),
        extra: Vec::new(),
    };
    for e in examples {
        if e.lang == cfg.setup.high_lang {
            roles.high.push(e);
        } else if e.lang == cfg.setup.low_lang && e.speaker == target {
            roles.low.push(e);
        } else if e.lang == cfg.setup.low_lang {
            roles.extra.push(e);
        }
    }
    if cfg.data.low_size > 0 {
        roles.low.truncate(cfg.data.low_size);
    }
    Ok(Workspace {
        spec,
        table,
        stats,
        target,
        roles,
    })
}

#[derive(Serialize, Deserialize)]
struct Provenance {
    run: RunConfig,
    stats: FeatureStats,
    strategy: Strategy,
}

fn save(path: &Path, params: &Params, cfg: &RunConfig, stats: FeatureStats, strategy: Strategy, steps: u64) -> Result<()> {
    let extra = serde_json::to_value(Provenance {
        run: cfg.clone(),
        stats,
        strategy,
    })?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).data()?;
    }
    save_checkpoint(params, extra, steps, path).data()
}

/// Loads a checkpoint; with an explicit config the stored model must match it, otherwise the
/// run configuration stored in the checkpoint is used.
fn load_model(common: &Common, checkpoint: &Path) -> Result<(Params, RunConfig, FeatureStats)> {
    let (params, meta): (Params, CheckpointMeta) = load_checkpoint(checkpoint, None).data()?;
    let prov: Provenance = serde_json::from_value(meta.extra)
        .context("checkpoint lacks run provenance")
        .data()?;
    let cfg = if common.config.is_some() || !common.overrides.is_empty() {
        let cfg = load_config(common)?;
        let spec = load_spec(&cfg)?;
        let expected = sized_model(&cfg.model, &spec, &phoneme_table(&spec).usage()?, &cfg.audio);
        if expected != params.config {
            return Err(usage_error(format!("checkpoint {} was trained with a different model config", checkpoint.display())));
        }
        cfg
    } else {
        prov.run
    };
    Ok((params, cfg, prov.stats))
}

#[derive(Args)]
pub struct SynthlangArgs {
    /// Generator spec (TOML); the built-in bilingual spec when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    per_speaker: usize,
    /// Sample rate for the built-in spec.
    #[arg(long, default_value_t = 16_000)]
    sample_rate: u32,
    /// Words per generated lexicon.
    #[arg(long, default_value_t = 200)]
    lexicon_words: usize,
}

pub fn synthlang(a: SynthlangArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => SynthSpec::load(p).usage()?,
        None => default_bilingual(a.sample_rate),
    };
    spec.validate().usage()?;
    let corpus = generate_corpus(&spec, a.per_speaker, a.seed).data()?;
    let manifests = corpus.write(&a.out).data()?;
    write(&a.out.join(SPEC_FILE), spec.to_toml())?;
    for l in &spec.languages {
        write(&a.out.join(format!("lexicon_{}.txt", l.lang)), generate_lexicon(l, a.lexicon_words, a.seed))?;
    }
    for m in &manifests {
        let name = m.file_name().unwrap_or_default().to_string_lossy();
        let lang = name.trim_start_matches("manifest_").trim_end_matches(".tsv");
        let utts: Vec<&Utterance> = corpus.utterances.iter().filter(|u| u.lang == lang).collect();
        let speakers: HashSet<usize> = utts.iter().map(|u| u.speaker).collect();
        let seconds: f64 = utts.iter().map(|u| u.waveform.len() as f64).sum::<f64>() / spec.sample_rate as f64;
        println!("{}\t{} utterances\t{} speakers\t{:.1} s", m.display(), utts.len(), speakers.len(), seconds);
    }
    Ok(())
}

#[derive(Args)]
pub struct PrepareArgs {
    #[command(flatten)]
    common: Common,
}

pub fn prepare(a: PrepareArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    // Force a refit so the recorded statistics match the current corpus.
    let _ = fs::remove_file(cfg.out(PREPARED_FILE));
    let ws = prepare_workspace(&cfg)?;
    println!(
        "{}: {} phonemes, {} high / {} target / {} extra utterances",
        cfg.out(PREPARED_FILE).display(),
        ws.table.len(),
        ws.roles.high.len(),
        ws.roles.low.len(),
        ws.roles.extra.len()
    );
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Phase {
    Pretrain,
    Finetune,
    Both,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_parser = |s: &str| s.parse::<Strategy>())]
    strategy: Strategy,
    #[arg(long, value_enum, default_value_t = Phase::Both)]
    phase: Phase,
}

pub fn train(a: TrainArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    let st = a.strategy;
    if st == Strategy::TBase && a.phase == Phase::Pretrain {
        return Err(usage_error("t-base has no pre-training phase".into()));
    }
    let ws = prepare_workspace(&cfg)?;
    let roles = &ws.roles;
    let pretraining = a.phase != Phase::Finetune && st != Strategy::TBase;
    let finetuning = a.phase != Phase::Pretrain;
    // Check every input before any training starts.
    let need = |ok: bool, what: &str| -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(anyhow!("{st}: {what}").context(Failure::Data))
        }
    };
    if st == Strategy::PaHl || finetuning {
        need(!roles.low.is_empty(), "no target-speaker pairs in the low-resource language")?;
    }
    if pretraining {
        match st {
            Strategy::PdH | Strategy::PaHl => need(!roles.high.is_empty(), "no high-resource data")?,
            Strategy::PdE => need(!roles.extra.is_empty(), "no extra low-resource speech")?,
            Strategy::TBase => {}
        }
    }
    let pre_path = cfg.out("pretrain.ckpt");
    let mut params = if pretraining || st == Strategy::TBase {
        Params::new(sized_model(&cfg.model, &ws.spec, &ws.table, &cfg.audio), cfg.seed).usage()?
    } else {
        let (p, _, _) = load_model(&Common { config: None, overrides: vec![] }, &pre_path)
            .with_context(|| format!("{st}: fine-tuning needs {}", pre_path.display()))?;
        let expected = sized_model(&cfg.model, &ws.spec, &ws.table, &cfg.audio);
        if p.config != expected {
            return Err(usage_error(format!("{} does not match the model config", pre_path.display())));
        }
        p
    };
    let pre_cfg = polytone::training::TrainConfig {
        seed: cfg.seed,
        ..cfg.pretrain.clone()
    };
    if pretraining {
        let data = match st {
            Strategy::PdE => &roles.extra,
            _ => &roles.high,
        };
        info!("{st}: pre-training on {} utterances", data.len() + if st == Strategy::PaHl { roles.low.len() } else { 0 });
        let h = run_pretrain(st, data, &roles.low, &mut params, &pre_cfg).training()?;
        write(&cfg.out("history_pretrain.tsv"), h.to_tsv())?;
        save(&pre_path, &params, &cfg, ws.stats, st, h.steps)?;
        println!("{}: {} steps, best val {}", pre_path.display(), h.steps, fmt_opt(h.best_val));
    }
    if finetuning {
        let fine_cfg = polytone::training::TrainConfig {
            seed: cfg.seed,
            ..cfg.finetune.clone()
        };
        info!("{st}: fine-tuning on {} target-speaker pairs", roles.low.len());
        let h = run_finetune(&mut params, &roles.low, &fine_cfg).training()?;
        write(&cfg.out("history_finetune.tsv"), h.to_tsv())?;
        let path = cfg.out("final.ckpt");
        save(&path, &params, &cfg, ws.stats, st, h.steps)?;
        println!("{}: {} steps, best val {}", path.display(), h.steps, fmt_opt(h.best_val));
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.5}"))
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["text", "phonemes"])))]
pub struct SynthesizeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Words looked up in the language's lexicon.
    #[arg(long)]
    text: Option<String>,
    /// Space-separated phoneme symbols.
    #[arg(long)]
    phonemes: Option<String>,
    /// Lexicon for --text; defaults to `lexicon_<lang>.txt` in the corpus directory.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    lang: String,
    /// Speaker name or index; any language may be paired with any speaker.
    #[arg(long)]
    speaker: String,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn synthesize(a: SynthesizeArgs) -> Result<()> {
    let (params, cfg, stats) = load_model(&a.common, &a.checkpoint)?;
    let spec = load_spec(&cfg)?;
    let table = phoneme_table(&spec).usage()?;
    let speaker = speaker_index(&spec, &a.speaker)?;
    if spec.language(&a.lang).is_none() {
        return Err(usage_error(format!("unknown language {:?}", a.lang)));
    }
    let ids = match (&a.phonemes, &a.text) {
        (Some(p), _) => table.encode(&a.lang, &p.split_whitespace().collect::<Vec<_>>()).usage()?,
        (None, Some(text)) => {
            let path = a.lexicon.clone().unwrap_or_else(|| cfg.data.corpus_dir.join(format!("lexicon_{}.txt", a.lang)));
            let lex = Lexicon::load(&path, &a.lang).data()?;
            phonemize(text, &lex, &table).usage()?
        }
        (None, None) => unreachable!("clap requires one input"),
    };
    let speech = params.speak(&ids, speaker, &stats, &cfg.audio, a.seed).data()?;
    write_wav(&a.out, &speech.waveform, cfg.audio.sample_rate).data()?;
    let align = &speech.output.alignment;
    let mut tsv = String::from("step");
    for &id in &ids {
        let sym = table.symbol(id).map_or("?", |s| if id == EOS { "<eos>" } else { s.symbol.as_str() });
        let _ = write!(tsv, "\t{sym}");
    }
    tsv.push('\n');
    for t in 0..align.rows() {
        let _ = write!(tsv, "{t}");
        for v in align.row_slice(t) {
            let _ = write!(tsv, "\t{v:.4}");
        }
        tsv.push('\n');
    }
    let align_path = a.out.with_extension("alignment.tsv");
    write(&align_path, tsv)?;
    let d = attention_diagnostics(align, &cfg.finetune.thresholds).data()?;
    let rms = (speech.waveform.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / speech.waveform.len().max(1) as f64).sqrt();
    println!(
        "{}\tframes {}\tstop {:?}\tfocus {:.3}\tmonotonicity {:.3}\tfailed {}\trms {:.5}",
        a.out.display(),
        speech.output.mel.rows(),
        speech.output.stopped_by,
        d.focus,
        d.monotonicity,
        d.failed,
        rms
    );
    Ok(())
}

#[derive(Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    anchor_lang: String,
    #[arg(long)]
    target_lang: String,
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// File listing anchor symbols (whitespace separated) to restrict the report to.
    #[arg(long)]
    subset: Option<PathBuf>,
}

pub fn analyze(a: AnalyzeArgs) -> Result<()> {
    let (params, cfg, _) = load_model(&a.common, &a.checkpoint)?;
    let spec = load_spec(&cfg)?;
    let table = phoneme_table(&spec).usage()?;
    let subset: Option<Vec<String>> = match &a.subset {
        Some(p) => Some(
            fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))
                .data()?
                .split_whitespace()
                .map(String::from)
                .collect(),
        ),
        None => None,
    };
    let report = analysis::nearest_cross_lingual(
        params.phoneme_embedding(),
        &table,
        &a.anchor_lang,
        &a.target_lang,
        a.k,
        subset.as_deref(),
        &counterparts(&spec, &a.anchor_lang, &a.target_lang),
    )
    .usage()?;
    let stem = format!("neighbors_{}_{}", a.anchor_lang, a.target_lang);
    write(&cfg.out(&format!("{stem}.tsv")), report.to_tsv())?;
    write(&cfg.out(&format!("{stem}.txt")), report.to_text())?;
    print!("{}", report.to_text());
    for k in [1, a.k] {
        if let Some(r) = report.hit_rate(k) {
            println!("counterpart within top {k}: {:.1}%", 100.0 * r);
        }
    }
    Ok(())
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let (params, cfg, stats) = load_model(&a.common, &a.checkpoint)?;
    let ws = prepare_workspace(&cfg)?;
    let train: Vec<TestItem> = ws
        .roles
        .low
        .iter()
        .map(|e| TestItem {
            id: e.id.clone(),
            speaker: e.speaker,
            lang: e.lang.clone(),
            phonemes: e.phonemes.clone(),
        })
        .collect();
    let exclude: HashSet<Vec<String>> = train.iter().map(|t| t.phonemes.clone()).collect();
    let test = test_items(&ws.spec, &cfg.setup.low_lang, ws.target, cfg.setup.test_size, &exclude, cfg.seed).usage()?;
    let oracle = Oracle::for_spec(&ws.spec).usage()?;
    let evaluator = Evaluator {
        table: &ws.table,
        stats: &stats,
        audio: &cfg.audio,
        oracle: &oracle,
        thresholds: cfg.finetune.thresholds,
        seed: cfg.seed,
    };
    let report = evaluator.evaluate(&params, &test, &train).data()?;
    write(&cfg.out("eval.tsv"), report.to_tsv())?;
    write(&cfg.out("eval_summary.txt"), report.summary())?;
    print!("{}", report.summary());
    Ok(())
}

#[derive(Args)]
pub struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated target-speaker pair counts; overrides `compare.sizes`.
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
}

pub fn compare(a: CompareArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    let spec_path = cfg.data.corpus_dir.join(SPEC_FILE);
    let spec = if spec_path.exists() {
        load_spec(&cfg)?
    } else {
        default_bilingual(cfg.audio.sample_rate)
    };
    let cc = CompareConfig {
        setup: cfg.setup.clone(),
        sizes: if a.sizes.is_empty() { cfg.compare.sizes.clone() } else { a.sizes.clone() },
        strategies: cfg.compare.strategies.clone(),
        pretrain: cfg.pretrain.clone(),
        finetune: cfg.finetune.clone(),
        failed_cell_fraction: cfg.compare.failed_cell_fraction,
        seed: cfg.seed,
    };
    if cc.sizes.is_empty() || cc.sizes.contains(&0) {
        return Err(usage_error("sizes must be positive".into()));
    }
    let data = CompareData::<f32>::generate(&spec, &cfg.audio, &cc).usage()?;
    let model: ModelConfig = cfg.model.clone();
    let harness = Harness {
        spec: &spec,
        audio: &cfg.audio,
        model: &model,
        config: &cc,
    };
    let cells_path = cfg.out("compare_cells.tsv");
    write(&cells_path, "strategy\tsize\tper\tfocus\tmonotonicity\tfailed_fraction\tfailed\n")?;
    let mut flush_error = None;
    let comparison = harness
        .run(&data, |c| {
            info!("{} @ {}: PER {:.3}, failed {:.2}", c.strategy, c.size, c.per, c.failed_fraction);
            let res = (|| -> Result<()> {
                let mut f = fs::OpenOptions::new().append(true).open(&cells_path)?;
                writeln!(
                    f,
                    "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
                    c.strategy.tag(),
                    c.size,
                    c.per,
                    c.focus,
                    c.monotonicity,
                    c.failed_fraction,
                    u8::from(c.failed)
                )?;
                let stem = format!("{}_{}", c.strategy.name(), c.size);
                write(&cfg.out(&format!("eval_{stem}.tsv")), c.report.to_tsv())?;
                write(&cfg.out(&format!("history_{stem}_pretrain.tsv")), c.pretrain.to_tsv())?;
                write(&cfg.out(&format!("history_{stem}_finetune.tsv")), c.finetune.to_tsv())?;
                Ok(())
            })();
            if let Err(e) = res {
                flush_error.get_or_insert(e);
            }
        })
        .training()?;
    if let Some(e) = flush_error {
        return Err(e.context(Failure::Data));
    }
    write(&cfg.out("compare_matrix.txt"), comparison.matrix())?;
    write(&cfg.out("compare.tsv"), comparison.to_tsv())?;
    print!("{}", comparison.matrix());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn class(e: &anyhow::Error) -> Option<Failure> {
        e.downcast_ref::<Failure>().copied()
    }

    fn corpus(dir: &Path, seed: u64) {
        synthlang(SynthlangArgs {
            spec: None,
            out: dir.to_path_buf(),
            seed,
            per_speaker: 3,
            sample_rate: 8000,
            lexicon_words: 10,
        })
        .unwrap();
    }

    /// Tiny model and a handful of steps, writing into `out`.
    fn common(corpus: &Path, out: &Path) -> Common {
        let set = [
            format!("data.corpus_dir={:?}", corpus.display().to_string()),
            format!("out_dir={:?}", out.display().to_string()),
            "audio.sample_rate=8000".into(),
            "audio.frame_length=400".into(),
            "audio.frame_shift=200".into(),
            "audio.fft_size=512".into(),
            "audio.mel_bins=20".into(),
            "audio.griffin_lim_iters=4".into(),
            "model.embed_dim=8".into(),
            "model.encoder_hidden=8".into(),
            "model.attention_dim=8".into(),
            "model.decoder_hidden=8".into(),
            "model.prenet_dims=[8, 8]".into(),
            "model.postnet_hidden=8".into(),
            "model.speaker_embed_dim=4".into(),
            "model.max_decoder_steps=20".into(),
            "pretrain.max_steps=4".into(),
            "pretrain.eval_every=2".into(),
            "finetune.max_steps=4".into(),
            "finetune.eval_every=2".into(),
            "setup.high_per_speaker=3".into(),
            "setup.extra_per_speaker=2".into(),
            "setup.test_size=2".into(),
        ];
        Common {
            config: None,
            overrides: set.to_vec(),
        }
    }

    /// Every file under `dir` as (relative path, bytes), sorted by path.
    fn read_dir_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
        fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
            for entry in fs::read_dir(dir).unwrap() {
                let p = entry.unwrap().path();
                if p.is_dir() {
                    walk(root, &p, out);
                } else {
                    out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
                }
            }
        }
        let mut out = Vec::new();
        walk(dir, dir, &mut out);
        out.sort();
        out
    }

    #[test]
    fn synthlang_is_byte_deterministic() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        corpus(a.path(), 4);
        corpus(b.path(), 4);
        let (x, y) = (read_dir_bytes(a.path()), read_dir_bytes(b.path()));
        assert!(x.iter().any(|(p, _)| p.extension().is_some_and(|e| e == "wav")));
        assert_eq!(x, y);
    }

    #[test]
    fn failures_map_to_exit_classes() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nowhere");
        let train_args = |st, phase, c: Common| TrainArgs { common: c, strategy: st, phase };
        let e = train(train_args(Strategy::TBase, Phase::Pretrain, common(&missing, dir.path()))).unwrap_err();
        assert_eq!(class(&e), Some(Failure::Usage));
        let e = train(train_args(Strategy::PaHl, Phase::Both, common(&missing, dir.path()))).unwrap_err();
        assert_eq!(class(&e), Some(Failure::Data));
        let mut bad = common(&missing, dir.path());
        bad.overrides.push("model.no_such=1".into());
        let e = prepare(PrepareArgs { common: bad }).unwrap_err();
        assert_eq!(class(&e), Some(Failure::Usage));
    }

    #[test]
    fn split_phases_match_a_single_run() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("corpus");
        corpus(&data, 2);
        let (split, whole) = (dir.path().join("split"), dir.path().join("whole"));
        for phase in [Phase::Pretrain, Phase::Finetune] {
            train(TrainArgs { common: common(&data, &split), strategy: Strategy::PdH, phase }).unwrap();
        }
        train(TrainArgs { common: common(&data, &whole), strategy: Strategy::PdH, phase: Phase::Both }).unwrap();
        assert_eq!(fs::read(split.join("final.ckpt")).unwrap().len(), fs::read(whole.join("final.ckpt")).unwrap().len());
        let (a, _) = load_checkpoint::<f32>(split.join("final.ckpt"), None).unwrap();
        let (b, _) = load_checkpoint::<f32>(whole.join("final.ckpt"), None).unwrap();
        assert!(a.tensors.iter().zip(&b.tensors).all(|(x, y)| x.bitwise_eq(y)));
    }

    #[test]
    fn compare_reruns_are_identical() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("no-corpus");
        let run = |name: &str| {
            let out = dir.path().join(name);
            compare(CompareArgs { common: common(&missing, &out), sizes: vec![2, 3] }).unwrap();
            (fs::read(out.join("compare_matrix.txt")).unwrap(), fs::read(out.join("compare.tsv")).unwrap())
        };
        let a = run("one");
        assert!(String::from_utf8_lossy(&a.0).starts_with("model\t2\t3\n"));
        assert_eq!(a, run("two"));
    }
}
