mod common;

use common::*;
use dxplain::corpus::{generate_synthetic, PostRecord, SyntheticSpec};
use dxplain::losses::{batch_loss, LossBreakdown};
use dxplain::model::{Checkpoint, ModelConfig, ModelParams};
use dxplain::tokenizer::{SequenceBuilder, Vocabulary, DEFAULT_PROMPT};
use dxplain::training::{
    classification_only_preset, fit, fit_with, select_lambda, set_loss, split_dataset, EncodedSet, TrainConfig,
    TrainError, Trainer,
};

#[test]
fn loss_combination_is_exact_for_each_lambda() {
    let v = vocab();
    let b = builder(&v, 24);
    let p = perturbed(tiny_config(v.len()), 1, 0.3);
    let batch = mixed_batch(&b);
    for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let (l, _) = loss_and_grads(&p, &batch, lambda, true);
        assert_eq!(l.l_total - (lambda * l.l_cls + (1.0 - lambda) * l.l_gen), 0.0);
        assert!(l.l_cls >= 0.0 && l.l_gen >= 0.0);
    }
    let (one, _) = loss_and_grads(&p, &batch, 1.0, false);
    assert_eq!(one.l_total, one.l_cls);
    let (zero, _) = loss_and_grads(&p, &batch, 0.0, false);
    assert_eq!(zero.l_total, zero.l_gen);
}

#[test]
fn value_and_graph_paths_agree() {
    let v = vocab();
    let b = builder(&v, 24);
    let p = perturbed(tiny_config(v.len()), 2, 0.3);
    let batch = mixed_batch(&b);
    let records = [
        record("a", "x", 1, Some("feel hopeless")),
        record("b", "x", 0, None),
        record("c", "x", 1, Some("tired and hopeless today")),
    ];
    let outputs: Vec<_> = batch.iter().map(|e| p.forward(&e.seq).unwrap()).collect();
    let triples: Vec<_> = outputs
        .into_iter()
        .zip(&records)
        .zip(&batch)
        .map(|((o, r), e)| (o, r, &e.seq))
        .collect();
    let value = batch_loss(0.5, &triples).unwrap();
    let (graph, _) = loss_and_grads(&p, &batch, 0.5, false);
    assert!((value.l_cls - graph.l_cls).abs() < 1e-12);
    assert!((value.l_gen - graph.l_gen).abs() < 1e-12);
    assert_eq!((value.n_examples, value.n_positive, value.n_explained), (3, 2, 2));
}

#[test]
fn all_negative_batch_has_zero_generation_loss() {
    let v = vocab();
    let b = builder(&v, 24);
    let p = perturbed(tiny_config(v.len()), 3, 0.3);
    let batch: Vec<Example> = ["the sun was nice", "we went out"]
        .iter()
        .map(|t| Example {
            seq: b.training(t, None),
            label: 0,
            explained: false,
        })
        .collect();
    let (l, _) = loss_and_grads(&p, &batch, 0.3, false);
    assert_eq!(l.l_gen, 0.0);
    assert_eq!(l.l_total, 0.3 * l.l_cls);
}

#[test]
fn generation_path_contributes_nothing_at_lambda_one() {
    let v = vocab();
    let b = builder(&v, 24);
    let p = perturbed(tiny_config(v.len()), 4, 0.3);
    let batch = mixed_batch(&b);
    let (_, with_gen) = loss_and_grads(&p, &batch, 1.0, true);
    let cls_only: Vec<Example> = mixed_batch(&b)
        .into_iter()
        .map(|e| Example { explained: false, ..e })
        .collect();
    let (_, without_gen) = loss_and_grads(&p, &cls_only, 1.0, true);
    assert_eq!(with_gen, without_gen);

    // embedding rows of tokens that never appear as inputs are reachable only
    // through the tied output projection, i.e. through the generation loss
    let used: std::collections::HashSet<usize> = batch.iter().flat_map(|e| e.seq.ids.iter().copied()).collect();
    let d = p.config.d_model;
    let unused: Vec<usize> = (0..v.len()).filter(|t| !used.contains(t)).collect();
    assert!(!unused.is_empty());
    for t in unused {
        assert!(with_gen[0][t * d..(t + 1) * d].iter().all(|g| *g == 0.0), "token {t}");
    }
    let (_, mixed) = loss_and_grads(&p, &batch, 0.5, true);
    assert_ne!(mixed[0], with_gen[0]);
}

fn small_corpus(n: usize, seed: u64) -> Vec<PostRecord> {
    generate_synthetic(&SyntheticSpec {
        n_records: n,
        positive_fraction: 0.4,
        length_mix: [1.0, 0.0, 0.0],
        noise_rate: 0.0,
        seed,
    })
    .unwrap()
}

struct Fixture {
    vocab: Vocabulary,
    train: Vec<PostRecord>,
    val: Vec<PostRecord>,
}

fn fixture() -> Fixture {
    let records = small_corpus(40, 3);
    let split = split_dataset(&records, 3).unwrap();
    let mut texts: Vec<String> = split.train.iter().map(|r| r.text.clone()).collect();
    texts.extend(split.train.iter().filter_map(|r| r.explanation.clone()));
    texts.push(DEFAULT_PROMPT.into());
    let mut val = split.val;
    val.extend(split.test);
    Fixture {
        vocab: Vocabulary::build(&texts, 1).unwrap(),
        train: split.train,
        val,
    }
}

fn small_model(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        vocab_size,
        max_len: 64,
        threshold: 0.5,
    }
}

fn quick_cfg() -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        epochs: 4,
        batch_size: 4,
        patience: 10,
        seed: 5,
        ..TrainConfig::default()
    }
}

fn encode(f: &Fixture) -> (EncodedSet, EncodedSet) {
    let b = SequenceBuilder::for_model(&f.vocab, 64).unwrap();
    (EncodedSet::encode(&f.train, &b), EncodedSet::encode(&f.val, &b))
}

fn ckpt_bytes(p: &ModelParams, v: &Vocabulary) -> Vec<u8> {
    Checkpoint {
        params: p.clone(),
        vocab_fingerprint: v.fingerprint(),
    }
    .to_bytes()
}

#[test]
fn same_seed_gives_identical_checkpoint() {
    let f = fixture();
    let (train, val) = encode(&f);
    let mc = small_model(f.vocab.len());
    let (a, ha) = fit(&train, &val, &quick_cfg(), &mc).unwrap();
    let (b, hb) = fit(&train, &val, &quick_cfg(), &mc).unwrap();
    assert_eq!(ckpt_bytes(&a, &f.vocab), ckpt_bytes(&b, &f.vocab));
    assert_eq!(ha.epochs.len(), hb.epochs.len());
    let other = TrainConfig { seed: 6, ..quick_cfg() };
    let (c, _) = fit(&train, &val, &other, &mc).unwrap();
    assert_ne!(a.checksum(), c.checksum());
}

#[test]
fn preset_equals_lambda_one_byte_for_byte() {
    let f = fixture();
    let (train, val) = encode(&f);
    let mc = small_model(f.vocab.len());
    let explicit = TrainConfig { lambda: 1.0, ..quick_cfg() };
    let (a, _) = fit(&train, &val, &explicit, &mc).unwrap();
    let (b, _) = fit(&train, &val, &classification_only_preset(&quick_cfg()), &mc).unwrap();
    assert_eq!(ckpt_bytes(&a, &f.vocab), ckpt_bytes(&b, &f.vocab));
}

#[test]
fn best_checkpoint_matches_best_epoch() {
    let f = fixture();
    let (train, val) = encode(&f);
    let mc = small_model(f.vocab.len());
    let (params, history) = fit(&train, &val, &quick_cfg(), &mc).unwrap();
    assert!(history.epochs.len() <= 4);
    let best = history.best().unwrap();
    assert_eq!(best.val_auprc, history.best_val_auprc());
    let report = dxplain::training::evaluate_set(&params, &val).unwrap();
    assert_eq!(report.auprc, Some(history.best_val_auprc()));
    let csv = history.to_csv();
    assert!(csv.starts_with("epoch,l_cls,l_gen,l_total,val_auprc,seconds\n"));
    assert_eq!(csv.lines().count(), history.epochs.len() + 1);
}

#[test]
fn patience_zero_stops_after_first_non_improvement() {
    let f = fixture();
    let (train, val) = encode(&f);
    let mc = small_model(f.vocab.len());
    let cfg = TrainConfig {
        patience: 0,
        epochs: 30,
        lr: 1e-6,
        ..quick_cfg()
    };
    let (_, h) = fit(&train, &val, &cfg, &mc).unwrap();
    let first_stale = h
        .epochs
        .iter()
        .enumerate()
        .skip(1)
        .find(|(i, e)| e.val_auprc <= h.epochs[..*i].iter().map(|x| x.val_auprc).fold(f64::MIN, f64::max))
        .map(|(i, _)| i);
    match first_stale {
        Some(i) => assert_eq!(h.epochs.len(), i + 1, "ran past the first non-improving epoch"),
        None => assert_eq!(h.epochs.len(), 30),
    }
}

#[test]
fn epoch_losses_are_example_weighted() {
    let f = fixture();
    let (train, _) = encode(&f);
    let mut t = Trainer::new(small_model(f.vocab.len()), quick_cfg()).unwrap();
    let l = t.run_epoch(&train).unwrap();
    assert_eq!(l.n_examples, train.len());
    assert_eq!(l.n_positive, train.n_positive());
    assert_eq!(l.l_total, LossBreakdown::combine(l.lambda, l.l_cls, l.l_gen, 0, 0, 0).l_total);
    assert_eq!(t.epoch, 1);
    assert_eq!(t.state.step as usize, train.len().div_ceil(4));
}

#[test]
fn divergence_names_the_batch() {
    let f = fixture();
    let (train, _) = encode(&f);
    let mut t = Trainer::new(small_model(f.vocab.len()), quick_cfg()).unwrap();
    t.params.weights.cls_bias.data_mut()[0] = f64::NAN;
    match t.run_epoch(&train) {
        Err(e @ TrainError::Divergence { epoch: 1, batch: 0, .. }) => {
            assert!(e.to_string().contains("batch 0"), "{e}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn lambda_selection_matches_reported_histories() {
    let f = fixture();
    let (train, val) = encode(&f);
    let mc = small_model(f.vocab.len());
    let cfg = TrainConfig { epochs: 2, ..quick_cfg() };
    let sel = select_lambda(&[0.3, 0.5, 0.7], &train, &val, &cfg, &mc, |_, _| {}).unwrap();
    let best = sel
        .runs
        .iter()
        .map(|r| r.best_val_auprc)
        .fold(f64::NEG_INFINITY, f64::max);
    let winners: Vec<f64> = sel.runs.iter().filter(|r| r.best_val_auprc == best).map(|r| r.lambda).collect();
    assert_eq!(sel.best_lambda, *winners.last().unwrap());
    assert_eq!(sel.runs[sel.best_index].lambda, sel.best_lambda);
    assert_eq!(sel.runs.iter().map(|r| r.seed).collect::<Vec<_>>(), [5, 6, 7]);
    let rerun = fit(&train, &val, &TrainConfig { lambda: sel.best_lambda, seed: 5 + sel.best_index as u64, ..cfg.clone() }, &mc)
        .unwrap()
        .0;
    assert_eq!(rerun, sel.params);

    let single = select_lambda(&[1.0], &train, &val, &cfg, &mc, |_, _| {}).unwrap();
    assert_eq!(single.best_lambda, 1.0);
    let zero = select_lambda(&[0.0], &train, &val, &cfg, &mc, |_, _| {}).unwrap();
    assert_eq!(zero.best_lambda, 0.0);
    assert!(matches!(select_lambda(&[], &train, &val, &cfg, &mc, |_, _| {}), Err(TrainError::EmptyGrid)));
}

#[test]
fn lambda_zero_leaves_classifier_head_untouched() {
    let f = fixture();
    let (train, val) = encode(&f);
    let mc = small_model(f.vocab.len());
    let cfg = TrainConfig { lambda: 0.0, epochs: 2, ..quick_cfg() };
    let init = ModelParams::init(mc, cfg.seed).unwrap();
    let (p, _) = fit(&train, &val, &cfg, &mc).unwrap();
    assert_eq!(p.weights.cls_weight, init.weights.cls_weight);
    assert_eq!(p.weights.cls_bias, init.weights.cls_bias);
}

#[test]
fn validation_without_positives_is_rejected() {
    let f = fixture();
    let (train, mut val) = encode(&f);
    val.examples.retain(|e| e.record.label == 0);
    let r = fit(&train, &val, &quick_cfg(), &small_model(f.vocab.len()));
    assert!(matches!(r, Err(TrainError::NoValidationPositives)));
}

#[test]
fn progress_callback_sees_every_epoch() {
    let f = fixture();
    let (train, val) = encode(&f);
    let mut seen = Vec::new();
    let (_, h) = fit_with(&train, &val, &quick_cfg(), &small_model(f.vocab.len()), |r| seen.push(r.epoch)).unwrap();
    assert_eq!(seen, (1..=h.epochs.len()).collect::<Vec<_>>());
    let l = set_loss(&ModelParams::init(small_model(f.vocab.len()), 0).unwrap(), &train, 0.5).unwrap();
    assert!(l.l_gen > 0.0 && l.n_explained > 0);
}
