//! Structural properties of the models: loss identities, causality,
//! padding neutrality, frozen parameters.

mod common;

use common::{random_tensor, random_tokens, randomize_head, tiny_model, tiny_text_config};
use slu_core::data::{Batch, Utterance};
use slu_core::models::{masked_token_loss, pretrain_text_encoder, TextPretrainOptions, BOS, EOS, PAD};
use slu_core::train::epoch_seed;
use slu_core::{
    AdamConfig, AdamState, Ctx, FeatureMatrix, ModelConfig, Objective, SeededRng, SluModel, Tape, Tensor, TrainOptions,
};

const INPUT_DIM: usize = 6;
const VOCAB: usize = 12;
const INTENTS: usize = 5;

fn losses(m: &SluModel<f64>, x: &Tensor<f64>, tokens: &[usize], intent: usize, lambda: f64) -> (f64, f64, f64) {
    let mut tape = Tape::new();
    let xv = m.input(&mut tape, x).unwrap();
    let mut ctx = Ctx::new(&mut tape, &m.params);
    let l = m.multitask_loss(&mut ctx, xv, tokens, intent, lambda).unwrap();
    (tape.value(l.slu)[0], tape.value(l.asr)[0], tape.value(l.total)[0])
}

#[test]
fn multitask_loss_is_affine_in_lambda_with_asr_slope() {
    for seed in 0..5 {
        let m = tiny_model(INPUT_DIM, VOCAB, INTENTS, seed);
        let mut rng = SeededRng::derived(seed, "x");
        let x = random_tensor(&[7, INPUT_DIM], &mut rng);
        let tokens = random_tokens(4, VOCAB, &mut rng);
        let (slu, asr, l0) = losses(&m, &x, &tokens, 2, 0.0);
        let (_, _, lh) = losses(&m, &x, &tokens, 2, 0.5);
        let (_, _, l1) = losses(&m, &x, &tokens, 2, 1.0);
        assert_eq!(l0, slu, "λ=0 is the intent loss exactly");
        assert_eq!(l1, slu + asr);
        assert_eq!(lh, slu + 0.5 * asr);
        let tol = 4.0 * f64::EPSILON * (slu.abs() + asr.abs());
        assert!(((l1 - l0) - asr).abs() <= tol, "slope {} vs asr {asr}", l1 - l0);
        assert!(((lh - l0) - 0.5 * asr).abs() <= tol);
    }
}

#[test]
fn lambda_zero_matches_baseline_gradients_bit_exactly() {
    let m = tiny_model(INPUT_DIM, VOCAB, INTENTS, 3);
    let mut rng = SeededRng::new(4);
    let x = random_tensor(&[6, INPUT_DIM], &mut rng);
    let tokens = random_tokens(5, VOCAB, &mut rng);

    let mut mt = m.params.clone();
    mt.zero_grad();
    let mut tape = Tape::new();
    let xv = m.input(&mut tape, &x).unwrap();
    let mut ctx = Ctx::new(&mut tape, &m.params);
    let l = m.multitask_loss(&mut ctx, xv, &tokens, 1, 0.0).unwrap();
    tape.backward(l.total, &mut mt).unwrap();

    let mut base = m.params.clone();
    base.zero_grad();
    let mut tape = Tape::new();
    let xv = m.input(&mut tape, &x).unwrap();
    let mut ctx = Ctx::new(&mut tape, &m.params);
    let enc = m.encode(&mut ctx, xv).unwrap();
    let l = m.slu_loss(&mut ctx, enc, 1).unwrap();
    tape.backward(l, &mut base).unwrap();

    for ((name, a), (_, b)) in mt.iter().zip(base.iter()) {
        let (ga, gb) = (a.grad().unwrap_or(&[]), b.grad().unwrap_or(&[]));
        if name.starts_with("decoder.") {
            assert!(ga.iter().all(|&g| g == 0.0), "{name} receives gradient at λ=0");
        } else {
            assert_eq!(ga, gb, "{name}");
        }
    }
}

fn utterance(i: usize, frames: usize, rng: &mut SeededRng) -> Utterance {
    let data = (0..frames * INPUT_DIM).map(|_| rng.normal(0.0, 1.0) as f32).collect();
    let mut tokens = vec![BOS];
    tokens.extend((0..1 + i % 4).map(|_| 4 + rng.below(VOCAB - 4)));
    tokens.push(EOS);
    Utterance {
        id: format!("u{i}"),
        features: FeatureMatrix::new(frames, INPUT_DIM, data).unwrap(),
        tokens,
        intent: i % INTENTS,
    }
}

fn toy_set(n: usize, seed: u64) -> Vec<Utterance> {
    let mut rng = SeededRng::new(seed);
    (0..n).map(|i| utterance(i, 3 + i % 5, &mut rng)).collect()
}

#[test]
fn lambda_zero_training_equals_baseline_training() {
    let train = toy_set(24, 1);
    let valid = toy_set(8, 2);
    let cfg = ModelConfig::tiny(INPUT_DIM, VOCAB, INTENTS);
    let run = |objective| {
        let mut m = SluModel::<f32>::new(cfg.clone(), 9).unwrap();
        let opts = TrainOptions {
            epochs: 4,
            batch_size: 5,
            seed: 9,
            objective,
            ..Default::default()
        };
        let r = slu_core::train(&mut m, &train, &valid, &opts).unwrap();
        (m, r)
    };
    let (base, rb) = run(Objective::Slu);
    let (mt, rm) = run(Objective::MultiTask { lambda: 0.0 });
    assert_eq!(rb.rows.len(), rm.rows.len());
    for (a, b) in rb.rows.iter().zip(&rm.rows) {
        assert_eq!(
            (
                a.epoch,
                &a.split,
                a.intent_accuracy.to_bits(),
                a.slu_loss.to_bits(),
                a.total_loss.to_bits()
            ),
            (
                b.epoch,
                &b.split,
                b.intent_accuracy.to_bits(),
                b.slu_loss.to_bits(),
                b.total_loss.to_bits()
            )
        );
        assert!(b.asr_loss.is_some(), "multi-task rows report the ASR term");
    }
    for ((name, a), (_, b)) in base.params.iter().zip(mt.params.iter()) {
        assert_eq!(a.data(), b.data(), "{name}");
    }
}

#[test]
fn identical_training_is_bit_identical() {
    let train = toy_set(12, 3);
    let cfg = ModelConfig::tiny(INPUT_DIM, VOCAB, INTENTS);
    let run = || {
        let mut m = SluModel::<f32>::new(cfg.clone(), 5).unwrap();
        let opts = TrainOptions {
            epochs: 2,
            batch_size: 4,
            seed: 5,
            objective: Objective::MultiTask { lambda: 0.5 },
            ..Default::default()
        };
        let r = slu_core::train(&mut m, &train, &[], &opts).unwrap();
        (m.params.fingerprint(|_, _| true), format!("{:?}", r.rows))
    };
    assert_eq!(run(), run());
}

fn decoder_logits(m: &SluModel<f64>, x: &Tensor<f64>, tokens: &[usize]) -> Vec<f64> {
    let mut tape = Tape::new();
    let xv = m.input(&mut tape, x).unwrap();
    let mut ctx = Ctx::new(&mut tape, &m.params);
    let enc = m.encode(&mut ctx, xv).unwrap();
    let l = m.decode_logits(&mut ctx, tokens, enc).unwrap();
    tape.value(l).to_vec()
}

#[test]
fn decoder_is_causal_with_and_without_fusion() {
    for seed in 0..6 {
        let mut m = tiny_model(INPUT_DIM, VOCAB, INTENTS, seed);
        if seed % 2 == 1 {
            m.attach_text_encoder(&tiny_text_config(VOCAB)).unwrap();
        }
        let mut rng = SeededRng::derived(seed, "causal");
        let x = random_tensor(&[5, INPUT_DIM], &mut rng);
        let tokens = random_tokens(6, VOCAB, &mut rng);
        let base = decoder_logits(&m, &x, &tokens);
        assert_eq!(base.len(), tokens.len() * VOCAB);
        for t in 0..tokens.len() - 1 {
            let mut perturbed = tokens.clone();
            let tok = perturbed[t + 1];
            perturbed[t + 1] = if tok >= 4 { 4 + (tok - 3) % (VOCAB - 4) } else { 4 };
            let p = decoder_logits(&m, &x, &perturbed);
            let prefix = (t + 1) * VOCAB;
            assert_eq!(
                &p[..prefix],
                &base[..prefix],
                "seed {seed}: position ≤ {t} saw token {}",
                t + 1
            );
            assert_ne!(&p[prefix..], &base[prefix..]);
        }
    }
}

#[test]
fn every_position_depends_on_the_encoder_output() {
    let m = tiny_model(INPUT_DIM, VOCAB, INTENTS, 21);
    let mut rng = SeededRng::new(22);
    let x = random_tensor(&[5, INPUT_DIM], &mut rng);
    let tokens = random_tokens(4, VOCAB, &mut rng);
    let base = decoder_logits(&m, &x, &tokens);
    let mut x2 = x.clone();
    for v in x2.data_mut().iter_mut().take(INPUT_DIM) {
        *v += 0.5;
    }
    let moved = decoder_logits(&m, &x2, &tokens);
    for (pos, (a, b)) in base.chunks(VOCAB).zip(moved.chunks(VOCAB)).enumerate() {
        assert_ne!(a, b, "position {pos} ignores the encoder");
    }
}

fn asr_loss(m: &SluModel<f64>, x: &Tensor<f64>, tokens: &[usize]) -> f64 {
    let mut tape = Tape::new();
    let xv = m.input(&mut tape, x).unwrap();
    let mut ctx = Ctx::new(&mut tape, &m.params);
    let enc = m.encode(&mut ctx, xv).unwrap();
    let l = m.asr_loss(&mut ctx, enc, tokens).unwrap();
    tape.value(l)[0]
}

#[test]
fn pad_extension_leaves_the_asr_loss_bit_unchanged() {
    for seed in 0..5 {
        let m = tiny_model(INPUT_DIM, VOCAB, INTENTS, seed);
        let mut rng = SeededRng::derived(seed, "pad");
        let x = random_tensor(&[4, INPUT_DIM], &mut rng);
        let tokens = random_tokens(3, VOCAB, &mut rng);
        let base = asr_loss(&m, &x, &tokens);
        for extra in [1, 2, 7] {
            let mut padded = tokens.clone();
            padded.extend(std::iter::repeat_n(PAD, extra));
            assert_eq!(asr_loss(&m, &x, &padded).to_bits(), base.to_bits());
        }
    }
}

/// Mean over batch items of the multi-task loss, each item evaluated on its
/// own (unpadded) slice of the batch.
fn batch_loss(m: &SluModel<f64>, b: &Batch) -> f64 {
    let mut total = 0.0;
    for i in 0..b.len() {
        let mut tape = Tape::new();
        let x = m.input(&mut tape, &b.item_features(i)).unwrap();
        let mut ctx = Ctx::new(&mut tape, &m.params);
        let l = m
            .multitask_loss(&mut ctx, x, b.item_tokens(i), b.intents[i], 0.5)
            .unwrap();
        total += tape.value(l.total)[0];
    }
    total / b.len() as f64
}

#[test]
fn batch_padding_is_neutral_and_batch_loss_is_the_item_mean() {
    let utts = toy_set(6, 31);
    let m = tiny_model(INPUT_DIM, VOCAB, INTENTS, 32);
    let refs: Vec<&Utterance> = utts.iter().collect();
    let batch = Batch::from_utterances(&refs).unwrap();
    let base = batch_loss(&m, &batch);
    for (f, t) in [(1, 0), (0, 3), (5, 5)] {
        assert_eq!(
            batch_loss(&m, &batch.with_extra_padding(f, t)).to_bits(),
            base.to_bits()
        );
    }
    let mut individual = 0.0;
    for u in &utts {
        let one = Batch::from_utterances(&[u]).unwrap();
        individual += batch_loss(&m, &one);
    }
    assert_eq!((individual / utts.len() as f64).to_bits(), base.to_bits());
}

#[test]
fn posterior_is_a_distribution_and_max_pool_ignores_duplication() {
    let mut cfg = ModelConfig::tiny(INPUT_DIM, VOCAB, INTENTS);
    cfg.use_positions = false;
    let mut m = SluModel::<f64>::new(cfg, 41).unwrap();
    randomize_head(&mut m, 41);
    let mut rng = SeededRng::new(42);
    for frames in [1, 3, 8] {
        let x = random_tensor::<f64>(&[frames, INPUT_DIM], &mut rng);
        let p = m.slu_forward(&x).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(p.iter().all(|&v| v >= 0.0));
        let doubled: Vec<f64> = x
            .data()
            .chunks(INPUT_DIM)
            .flat_map(|r| r.iter().chain(r))
            .copied()
            .collect();
        let x2 = Tensor::new(vec![2 * frames, INPUT_DIM], doubled).unwrap();
        let p2 = m.slu_forward(&x2).unwrap();
        for (a, b) in p.iter().zip(&p2) {
            assert!((a - b).abs() < 1e-12, "{p:?} vs {p2:?}");
        }
    }
}

#[test]
fn untrained_posterior_entropy_is_near_ln_i() {
    let mut rng = SeededRng::new(51);
    let ln8 = 8f64.ln();
    for seed in 0..5 {
        let m = SluModel::<f64>::new(ModelConfig::tiny(INPUT_DIM, VOCAB, 8), seed).unwrap();
        let x = random_tensor(&[6, INPUT_DIM], &mut rng);
        let p = m.slu_forward(&x).unwrap();
        let h: f64 = -p.iter().map(|&v| v * v.ln()).sum::<f64>();
        assert!((h - ln8).abs() <= 0.05 * ln8, "entropy {h}");
    }
}

#[test]
fn zero_text_side_fusion_reproduces_plain_decoding() {
    for seed in 0..3 {
        let plain = tiny_model(INPUT_DIM, VOCAB, INTENTS, seed);
        let mut fused = plain.clone();
        fused.attach_text_encoder(&tiny_text_config(VOCAB)).unwrap();
        let d = plain.cfg.d_model;
        let w = fused.params.by_name_mut("fusion.proj.w").unwrap();
        let cols = w.shape()[1];
        assert_eq!(w.shape()[0], d + tiny_text_config(VOCAB).d_model);
        for (i, v) in w.data_mut().iter_mut().enumerate() {
            let (r, c) = (i / cols, i % cols);
            *v = if r == c { 1.0 } else { 0.0 };
        }
        for v in fused.params.by_name_mut("fusion.proj.b").unwrap().data_mut() {
            *v = 0.0;
        }
        let mut rng = SeededRng::derived(seed, "fusion");
        let x = random_tensor(&[5, INPUT_DIM], &mut rng);
        let tokens = random_tokens(4, VOCAB, &mut rng);
        assert_eq!(decoder_logits(&fused, &x, &tokens), decoder_logits(&plain, &x, &tokens));
    }
}

#[test]
fn text_encoder_is_unchanged_by_fusion_training() {
    let train = toy_set(10, 61);
    let mut m = SluModel::<f32>::new(ModelConfig::tiny(INPUT_DIM, VOCAB, INTENTS), 62).unwrap();
    m.attach_text_encoder(&tiny_text_config(VOCAB)).unwrap();
    let text = |m: &SluModel<f32>| m.params.fingerprint(|n, _| n.starts_with("text_encoder."));
    let before = (text(&m), m.params.frozen_fingerprint());
    let fusion_before = m.params.fingerprint(|n, _| n.starts_with("fusion."));
    let opts = TrainOptions {
        epochs: 34,
        batch_size: 3,
        seed: 62,
        objective: Objective::MultiTask { lambda: 1.0 },
        eval_train: false,
        ..Default::default()
    };
    let r = slu_core::train(&mut m, &train, &[], &opts).unwrap();
    assert!(r.steps >= 100);
    assert_eq!((text(&m), m.params.frozen_fingerprint()), before);
    assert_ne!(m.params.fingerprint(|n, _| n.starts_with("fusion.")), fusion_before);
}

#[test]
fn overfitting_one_utterance_recovers_its_transcript() {
    let mut rng = SeededRng::new(71);
    let u = utterance(3, 6, &mut rng);
    let mut m = SluModel::<f64>::new(ModelConfig::tiny(INPUT_DIM, VOCAB, INTENTS), 72).unwrap();
    let x: Tensor<f64> = u.feature_tensor();
    let mut adam = AdamState::new(AdamConfig {
        lr: 1e-2,
        ..AdamConfig::default()
    });
    let mut curve = Vec::new();
    for _ in 0..100 {
        m.params.zero_grad();
        let mut tape = Tape::new();
        let xv = m.input(&mut tape, &x).unwrap();
        let mut ctx = Ctx::new(&mut tape, &m.params);
        let enc = m.encode(&mut ctx, xv).unwrap();
        let l = m.asr_loss(&mut ctx, enc, &u.tokens).unwrap();
        curve.push(tape.value(l)[0]);
        tape.backward(l, &mut m.params).unwrap();
        adam.step(&mut m.params).unwrap();
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    for w in curve.chunks(20).collect::<Vec<_>>().windows(2) {
        assert!(mean(w[1]) < mean(w[0]), "loss trend is not decreasing: {curve:?}");
    }
    let decoded = m.greedy_decode(&x, 20).unwrap();
    assert_eq!(decoded, u.tokens[1..].to_vec());
}

#[test]
fn masked_token_pretraining_beats_uniform() {
    let mut rng = SeededRng::new(81);
    // Two-token "words" make the masked position predictable from context.
    let corpus: Vec<Vec<usize>> = (0..40)
        .map(|_| {
            let mut t = vec![BOS];
            for _ in 0..3 {
                let w = rng.below(4);
                t.extend([4 + 2 * w, 5 + 2 * w]);
            }
            t.push(EOS);
            t
        })
        .collect();
    let v = 12;
    let mut opts = TextPretrainOptions::new(v, 3);
    opts.cfg = tiny_text_config(v);
    opts.epochs = 30;
    opts.batch_size = 8;
    opts.adam.lr = 3e-3;
    let pre = pretrain_text_encoder(&corpus, &opts).unwrap();
    let loss = masked_token_loss(&pre.encoder, &pre.params, &corpus, 0.15, 5).unwrap();
    assert!(loss < (v as f64).ln(), "masked loss {loss} vs ln V {}", (v as f64).ln());
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(&mut tape, &pre.params);
    let h = pre.encoder.hidden(&mut ctx, &corpus[0], false).unwrap();
    assert_eq!(tape.shape(h), &[corpus[0].len(), opts.cfg.d_model]);
    assert!(pretrain_text_encoder(&[], &opts).is_err());
}

#[test]
fn batching_is_seeded_and_covers_every_utterance() {
    let utts = toy_set(23, 91);
    for epoch in 1..4 {
        let seed = epoch_seed(7, epoch);
        let a = slu_core::data::make_batches(&utts, 5, seed).unwrap();
        let b = slu_core::data::make_batches(&utts, 5, seed).unwrap();
        assert_eq!(a, b);
        let mut ids: Vec<String> = a.iter().flat_map(|b| b.ids.clone()).collect();
        ids.sort();
        let mut all: Vec<String> = utts.iter().map(|u| u.id.clone()).collect();
        all.sort();
        assert_eq!(ids, all);
    }
}
