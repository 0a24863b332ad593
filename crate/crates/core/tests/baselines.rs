use dxplain::baselines::{
    fit_tfidf, train_linear_svm, train_with_checkpoints, SparseVec, SvmBaseline, SvmConfig, TfIdfModel,
};
use dxplain::corpus::{generate_synthetic, PostRecord, SyntheticSpec};
use dxplain::training::split_dataset;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn keyword_corpus(n: usize, seed: u64) -> Vec<PostRecord> {
    let pos = ["sad", "empty", "numb", "alone", "crying"];
    let neg = ["sunny", "party", "pizza", "beach", "concert"];
    let shared = ["today", "went", "the", "and", "with", "my", "friend", "home"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = u8::from(rng.gen_bool(0.3));
            let bank = if label == 1 { &pos } else { &neg };
            let mut words: Vec<&str> = (0..8).map(|_| shared[rng.gen_range(0..shared.len())]).collect();
            for _ in 0..2 {
                words.insert(rng.gen_range(0..words.len()), bank[rng.gen_range(0..bank.len())]);
            }
            PostRecord {
                id: format!("k{i}"),
                text: words.join(" "),
                label,
                explanation: None,
            }
        })
        .collect()
}

fn accuracy(model: &SvmBaseline, records: &[PostRecord]) -> f64 {
    records.iter().filter(|r| model.predict(&r.text) == r.label).count() as f64 / records.len() as f64
}

#[test]
fn separable_keyword_corpus_is_learned() {
    let recs = keyword_corpus(600, 1);
    let split = split_dataset(&recs, 1).unwrap();
    let model = SvmBaseline::fit(&split.train, &split.val, &SvmConfig::default()).unwrap();
    assert!(accuracy(&model, &split.test) >= 0.95);
}

#[test]
fn synthetic_corpus_without_noise_is_learned() {
    let recs = generate_synthetic(&SyntheticSpec {
        n_records: 600,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let split = split_dataset(&recs, 2).unwrap();
    let model = SvmBaseline::fit(&split.train, &split.val, &SvmConfig::default()).unwrap();
    assert!(accuracy(&model, &split.test) >= 0.9);
}

#[test]
fn tfidf_ignores_documents_outside_the_fit_corpus() {
    let recs = keyword_corpus(100, 3);
    let split = split_dataset(&recs, 3).unwrap();
    let mut test = split.test.clone();
    test[0].text.push_str(" zyzzyva");
    let model = SvmBaseline::fit(&split.train, &split.val, &SvmConfig::default()).unwrap();
    assert!(model.tfidf.term_index("zyzzyva").is_none());
    assert_eq!(model.tfidf.n_docs, split.train.len());
}

#[test]
fn averaged_objective_does_not_increase() {
    let recs = keyword_corpus(300, 4);
    let m = fit_tfidf(&recs.iter().map(|r| r.text.as_str()).collect::<Vec<_>>(), 1).unwrap();
    let xs: Vec<SparseVec> = recs.iter().map(|r| m.transform(&r.text)).collect();
    let ys: Vec<u8> = recs.iter().map(|r| r.label).collect();
    for reg in [1e-3, 1e-2, 1e-1] {
        let mut objectives = Vec::new();
        train_with_checkpoints(&xs, &ys, m.len(), reg, 15, 9, |c| objectives.push(c.objective(&xs, &ys))).unwrap();
        for w in objectives.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "reg {reg}: {objectives:?}");
        }
    }
}

#[test]
fn duplicating_the_corpus_keeps_vocabulary_and_idf_order() {
    let docs = ["the cat sat", "the dog sat", "a bird", "the cat ran"];
    let doubled: Vec<&str> = docs.iter().chain(docs.iter()).copied().collect();
    let a = fit_tfidf(&docs, 1).unwrap();
    let b = fit_tfidf(&doubled, 1).unwrap();
    assert_eq!(a.terms, b.terms);
    // smoothing shifts idf values slightly, but their order is unchanged
    for i in 0..a.len() {
        for j in 0..a.len() {
            assert_eq!(a.idf[i] < a.idf[j], b.idf[i] < b.idf[j]);
        }
    }
    // transform depends only on (terms, idf): a model rebuilt from its file
    // gives identical vectors
    let back = TfIdfModel::from_file_str(&a.to_file_string()).unwrap();
    assert_eq!(back.transform("the cat and the dog"), a.transform("the cat and the dog"));
}

#[test]
fn svm_file_round_trip_preserves_predictions() {
    let recs = keyword_corpus(120, 5);
    let split = split_dataset(&recs, 5).unwrap();
    let model = SvmBaseline::fit(&split.train, &split.val, &SvmConfig::default()).unwrap();
    let text = model.classifier.to_file_string(&model.tfidf.terms);
    let clf = dxplain::baselines::LinearClassifier::from_file_str(&text, &model.tfidf.terms).unwrap();
    for r in &split.test {
        let x = model.tfidf.transform(&r.text);
        assert_eq!(clf.score(&x), model.classifier.score(&x));
    }
    assert_eq!(train_linear_svm(&[], &[], 1, 0.1, 1, 0).unwrap_err().to_string(), "empty corpus");
}

proptest! {
    #[test]
    fn nonzero_transforms_have_unit_norm(words in proptest::collection::vec("[a-e]{1,2}", 0..30)) {
        let m = fit_tfidf(&["a b c", "a d", "e e b", "ab cd"], 1).unwrap();
        let v = m.transform(&words.join(" "));
        prop_assert!(v.is_zero() || (v.norm() - 1.0).abs() < 1e-12);
    }
}
