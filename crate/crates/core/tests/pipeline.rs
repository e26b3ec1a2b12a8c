//! Whole-model checks: gradients through the full network, and corpus to transcript end to end.

use std::collections::HashSet;

use polytone::audio::AudioConfig;
use polytone::dataset::{prepare, Example};
use polytone::evaluation::Evaluator;
use polytone::experiment::{phoneme_table, sized_model, test_items};
use polytone::model::{ModelConfig, ModelParams};
use polytone::phoneme::PhonemeTable;
use polytone::synthlang::{default_bilingual, generate_corpus, Oracle, SynthSpec};
use polytone::tensor::{Graph, Scalar};
use polytone::training::{item_loss, run_finetune, run_pretrain, Strategy, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn audio() -> AudioConfig {
    AudioConfig {
        sample_rate: 8000,
        frame_length: 400,
        frame_shift: 200,
        fft_size: 512,
        mel_bins: 20,
        griffin_lim_iters: 8,
        ..Default::default()
    }
}

fn tiny(spec: &SynthSpec, table: &PhonemeTable) -> ModelConfig {
    let base = ModelConfig {
        embed_dim: 8,
        encoder_hidden: 8,
        attention_dim: 8,
        decoder_hidden: 8,
        prenet_dims: [8, 8],
        postnet_hidden: 8,
        speaker_embed_dim: 4,
        max_decoder_steps: 30,
        ..Default::default()
    };
    sized_model(&base, spec, table, &audio())
}

fn corpus<T: Scalar>(per_speaker: usize, seed: u64) -> (SynthSpec, PhonemeTable, Vec<Example<T>>, polytone::dataset::FeatureStats) {
    let spec = default_bilingual(8000);
    let table = phoneme_table(&spec).unwrap();
    let c = generate_corpus(&spec, per_speaker, seed).unwrap();
    let (ex, stats) = prepare::<T>(&c.utterances, c.sample_rate, &table, &audio(), None).unwrap();
    (spec, table, ex, stats)
}

fn loss_and_grads(p: &ModelParams<f64>, e: &Example<f64>, decoder_only: bool) -> (f64, Vec<Option<Vec<f64>>>) {
    let mut g = Graph::new();
    let b = p.bind(&mut g);
    let l = item_loss(&mut g, &b, p, e, decoder_only, 0.5).unwrap().raw;
    let v = g.scalar(l);
    g.backward(l).unwrap();
    (v, b.vars.iter().map(|&x| g.grad(x).map(<[f64]>::to_vec)).collect())
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let (spec, table, ex, _) = corpus::<f64>(1, 3);
    let mut p = ModelParams::<f64>::new(tiny(&spec, &table), 2).unwrap();
    // Zero-initialized biases meet the all-zero go frame exactly at the relu kink; move off it.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for t in &mut p.tensors {
        t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.05..0.05));
    }
    let e = &ex[0];
    let (_, grads) = loss_and_grads(&p, e, false);
    let names = p.names().to_vec();
    for (i, name) in names.iter().enumerate() {
        let analytic = grads[i].clone().unwrap_or_else(|| vec![0.0; p.tensors[i].len()]);
        let len = p.tensors[i].len();
        let probes: Vec<usize> = (0..len).step_by((len / 5).max(1)).take(5).collect();
        for k in probes {
            let orig = p.tensors[i].data()[k];
            p.tensors[i].data_mut()[k] = orig + 1e-6;
            let (plus, _) = loss_and_grads(&p, e, false);
            p.tensors[i].data_mut()[k] = orig - 1e-6;
            let (minus, _) = loss_and_grads(&p, e, false);
            p.tensors[i].data_mut()[k] = orig;
            let fd = (plus - minus) / 2e-6;
            let an = analytic[k];
            let err = (fd - an).abs() / (fd.abs().max(an.abs()).max(1e-3));
            assert!(err < 1e-4, "{name}[{k}]: finite difference {fd:e}, analytic {an:e}");
        }
    }
}

#[test]
fn every_group_receives_gradient() {
    let (spec, table, ex, _) = corpus::<f64>(1, 4);
    let p = ModelParams::<f64>::new(tiny(&spec, &table), 5).unwrap();
    let (_, grads) = loss_and_grads(&p, &ex[0], false);
    for (name, g) in p.names().iter().zip(&grads) {
        let g = g.as_ref().unwrap_or_else(|| panic!("{name}: no gradient"));
        assert!(g.iter().any(|&v| v != 0.0), "{name}: gradient identically zero");
    }
    // Decoder-only loss never reaches the text side.
    let (_, grads) = loss_and_grads(&p, &ex[0], true);
    for (name, g) in p.names().iter().zip(&grads) {
        if name.starts_with("encoder") || name.starts_with("attention") || name == "phoneme_embedding" {
            assert!(g.as_ref().is_none_or(|g| g.iter().all(|&v| v == 0.0)), "{name} got decoder-only gradient");
        }
    }
}

#[test]
fn corpus_to_transcripts() {
    let (spec, table, ex, stats) = corpus::<f32>(3, 6);
    let (low, high): (Vec<_>, Vec<_>) = ex.into_iter().partition(|e| e.lang == "a" && e.speaker == 1);
    let mut p = ModelParams::<f32>::new(tiny(&spec, &table), 6).unwrap();
    let cfg = TrainConfig {
        max_steps: 6,
        eval_every: 3,
        batch_size: 4,
        ..Default::default()
    };
    let pre = run_pretrain(Strategy::PaHl, &high, &low, &mut p, &cfg).unwrap();
    let fine = run_finetune(&mut p, &low, &cfg).unwrap();
    assert!(pre.steps > 0 && fine.steps > 0);
    let oracle = Oracle::for_spec(&spec).unwrap();
    let a = audio();
    let ev = Evaluator {
        table: &table,
        stats: &stats,
        audio: &a,
        oracle: &oracle,
        thresholds: cfg.thresholds,
        seed: 1,
    };
    let exclude: HashSet<Vec<String>> = low.iter().map(|e| e.phonemes.clone()).collect();
    let test = test_items(&spec, "a", 1, 3, &exclude, 1).unwrap();
    let report = ev.evaluate(&p, &test, &[]).unwrap();
    assert_eq!(report.rows.len(), 3);
    assert!(report.mean_per().is_finite() && report.mean_per() >= 0.0);
    assert_eq!(report.to_tsv(), ev.evaluate(&p, &test, &[]).unwrap().to_tsv());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn attention_rows_are_distributions(seed in 0u64..1000, len in 1usize..8, speaker in 0usize..6) {
        let spec = default_bilingual(8000);
        let table = phoneme_table(&spec).unwrap();
        let p = ModelParams::<f32>::new(tiny(&spec, &table), seed).unwrap();
        let mut ids: Vec<usize> = (0..len).map(|i| 2 + (seed as usize + 3 * i) % (table.len() - 2)).collect();
        ids.push(polytone::phoneme::EOS);
        let out = p.synthesize(&ids, speaker, seed).unwrap();
        for r in 0..out.alignment.rows() {
            let row = out.alignment.row_slice(r);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-5);
        }
    }
}
