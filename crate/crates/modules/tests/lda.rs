use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use multicat_core::Categorical;
use multicat_modules::lda::{LdaHyper, LdaState, TopicGranularity};

fn corpus(seed: u64, docs: usize, vocab: usize) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..docs)
        .map(|_| (0..rng.gen_range(1..8)).map(|_| format!("w{}", rng.gen_range(0..vocab))).collect())
        .collect()
}

fn disjoint(per_class: usize) -> (Vec<Vec<String>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut docs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..3 * per_class {
        let c = i % 3;
        docs.push((0..8).map(|_| format!("c{c}_{}", rng.gen_range(0..4))).collect());
        labels.push(c);
    }
    (docs, labels)
}

fn purity(assign: &[usize], labels: &[usize], k: usize) -> f64 {
    let mut hits = 0;
    for c in 0..3 {
        let mut counts = vec![0usize; k];
        for (a, l) in assign.iter().zip(labels) {
            if *l == c {
                counts[*a] += 1;
            }
        }
        hits += counts.iter().max().unwrap();
    }
    hits as f64 / assign.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn counts_are_histograms_of_assignments(seed in any::<u64>(), sweeps in 0usize..6, doc_mode in any::<bool>()) {
        let docs = corpus(seed, 15, 9);
        let hyper = LdaHyper {
            granularity: if doc_mode { TopicGranularity::Document } else { TopicGranularity::Token },
            ..LdaHyper::default()
        };
        let mut lda = LdaState::new(4, hyper, seed).unwrap();
        lda.fit(&docs, None, sweeps).unwrap();
        let v = lda.vocab_size();
        let mut tw = vec![vec![0u32; v]; 4];
        let mut dt = vec![vec![0u32; 4]; docs.len()];
        for (d, (toks, tops)) in lda.tokens.iter().zip(&lda.topics).enumerate() {
            for (w, k) in toks.iter().zip(tops) {
                tw[*k][*w] += 1;
                dt[d][*k] += 1;
            }
            if doc_mode {
                prop_assert!(tops.iter().all(|k| *k == tops[0]));
            }
        }
        prop_assert_eq!(&lda.topic_word, &tw);
        prop_assert_eq!(&lda.doc_topic, &dt);
        let totals: Vec<u32> = tw.iter().map(|r| r.iter().sum()).collect();
        prop_assert_eq!(&lda.topic_total, &totals);
    }

    #[test]
    fn word_importance_is_the_topic_mixture(seed in any::<u64>()) {
        let docs = corpus(seed, 10, 6);
        let mut lda = LdaState::new(3, LdaHyper::default(), seed).unwrap();
        lda.fit(&docs, None, 4).unwrap();
        let hyper = LdaHyper::default();
        let v = lda.vocab_size() as f64;
        for d in 0..docs.len() {
            for word in ["w0", "w3", "never-seen"] {
                let len: u32 = lda.doc_topic[d].iter().sum();
                let want: f64 = (0..3)
                    .map(|k| {
                        let count = lda.vocab.get_index_of(word).map_or(0, |w| lda.topic_word[k][w]);
                        let phi = (count as f64 + hyper.beta) / (lda.topic_total[k] as f64 + v * hyper.beta);
                        let theta = (lda.doc_topic[d][k] as f64 + hyper.alpha) / (len as f64 + 3.0 * hyper.alpha);
                        phi * theta
                    })
                    .sum();
                let got = lda.word_importance(word, d).unwrap();
                prop_assert!((got - want).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn separates_disjoint_vocabularies() {
    let (docs, labels) = disjoint(30);
    for seed in 0..3 {
        let mut lda = LdaState::new(3, LdaHyper::default(), seed).unwrap();
        lda.fit(&docs, None, 100).unwrap();
        let assign: Vec<usize> = (0..docs.len())
            .map(|d| lda.doc_topic_posterior(d).unwrap().argmax())
            .collect();
        assert!(purity(&assign, &labels, 3) >= 0.99, "seed {seed}");
    }
}

#[test]
fn document_granularity_separates_disjoint_vocabularies() {
    let (docs, labels) = disjoint(30);
    let hyper = LdaHyper {
        granularity: TopicGranularity::Document,
        ..LdaHyper::default()
    };
    let mut lda = LdaState::new(3, hyper, 0).unwrap();
    lda.fit(&docs, None, 50).unwrap();
    let assign: Vec<usize> = (0..docs.len())
        .map(|d| lda.doc_topic_posterior(d).unwrap().argmax())
        .collect();
    assert!(purity(&assign, &labels, 3) >= 0.99);
}

#[test]
fn uniform_external_equals_no_external() {
    let docs = corpus(5, 20, 8);
    let uniform = vec![Categorical::uniform(4); docs.len()];
    let mut a = LdaState::new(4, LdaHyper::default(), 3).unwrap();
    let mut b = a.clone();
    a.fit(&docs, None, 10).unwrap();
    b.fit(&docs, Some(&uniform), 10).unwrap();
    assert_eq!(a.topics, b.topics);
}

#[test]
fn one_hot_external_forces_every_token() {
    let docs = corpus(6, 20, 8);
    let forced: Vec<Categorical> = (0..docs.len()).map(|d| Categorical::one_hot(4, d % 4)).collect();
    let mut lda = LdaState::new(4, LdaHyper::default(), 1).unwrap();
    lda.fit(&docs, Some(&forced), 1).unwrap();
    for (d, tops) in lda.topics.iter().enumerate() {
        assert!(tops.iter().all(|k| *k == d % 4));
    }
}

#[test]
fn vocabulary_persists_across_fits() {
    let mut lda = LdaState::new(2, LdaHyper::default(), 0).unwrap();
    lda.fit(&[vec!["a".into(), "b".into()]], None, 1).unwrap();
    lda.fit(&[vec!["c".into()]], None, 1).unwrap();
    assert_eq!(lda.vocab_size(), 3);
    assert_eq!(lda.vocab.get_index_of("a"), Some(0));
}
