use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use kgcir::bm25::{Bm25Index, Bm25Params};
use kgcir::corpus::{chunk_article, DocId, MAX_CHUNK_TOKENS};
use kgcir::dense::EmbeddingStore;
use kgcir::encoder::{batch_loss, ContrastiveBatch, DualEncoder, TextEncoder, Vocab};
use kgcir::eval::evaluate;
use kgcir::kg::{f_label, f_label_alias, load_dataset, save_dataset, Entity, KgDataset, Relation, Split, Triple};
use kgcir::reader::{doc_posterior, RankedPrediction, ReaderInput, RetrievedDoc};
use kgcir::text::tokenize;

const WORDS: [&str; 8] = ["ant", "bee", "cat", "dog", "eel", "fox", "gnu", "hen"];

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(&WORDS[..]), 1..8).prop_map(|w| w.join(" "))
}

fn small_kg(aliases: usize) -> KgDataset {
    let alias = |p: &str| (0..aliases).map(|i| format!("{p} alias {i}")).collect::<Vec<_>>();
    let entities =
        (0..6).map(|i| Entity { id: format!("Q{i}"), label: format!("thing {i}"), aliases: alias(&format!("t{i}")) }).collect();
    let relations = vec![Relation::forward("P1", "part of", alias("p1")), Relation::forward("P2", "near", vec![])];
    let train = vec![Triple::new("Q0", "P1", "Q1"), Triple::new("Q1", "P2", "Q2"), Triple::new("Q3", "P1", "Q4")];
    let valid = vec![Triple::new("Q2", "P1", "Q3")];
    let test = vec![Triple::new("Q4", "P2", "Q5"), Triple::new("Q0", "P1", "Q5")];
    KgDataset::new(entities, relations, train, valid, test).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bm25_is_order_free_in_query_terms(docs in prop::collection::vec(sentence(), 1..8), query in sentence(), seed: u64) {
        let index = Bm25Index::<f64>::from_texts(
            docs.iter().enumerate().map(|(i, t)| (DocId::new(format!("d{i}"), 0), t.as_str())),
            Bm25Params::default(),
        ).unwrap();
        let mut terms: Vec<&str> = query.split(' ').collect();
        use rand::seq::SliceRandom;
        terms.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = index.score(&query, docs.len());
        let b = index.score(&terms.join(" "), docs.len());
        prop_assert_eq!(a.len(), b.len());
        for ((ia, sa), (ib, sb)) in a.iter().zip(&b) {
            prop_assert_eq!(ia, ib);
            prop_assert!((sa - sb).abs() < 1e-12);
            prop_assert!(*sa > 0.0);
        }
    }

    #[test]
    fn chunking_round_trips(n in 0usize..450) {
        let text: String = (0..n).map(|i| WORDS[i % WORDS.len()]).collect::<Vec<_>>().join("  ");
        let docs = chunk_article("A", &text, &[]).unwrap();
        let rejoined: Vec<String> = docs.iter().flat_map(|d| tokenize(&d.text)).collect();
        prop_assert_eq!(rejoined, tokenize(&text));
        prop_assert_eq!(docs.iter().map(|d| d.tokens).sum::<usize>(), n);
        prop_assert!(docs.iter().rev().skip(1).all(|d| d.tokens == MAX_CHUNK_TOKENS));
    }

    #[test]
    fn contrastive_loss_is_positive_and_permutation_invariant(
        rows in prop::collection::vec((sentence(), sentence(), sentence()), 1..6),
        table_seed: u64,
        rotate in 0usize..6,
    ) {
        let vocab = Vocab::build(WORDS.iter().copied());
        let model = DualEncoder::<f64>::new_random(vocab, 4, table_seed);
        let batch = |rows: &[(String, String, String)]| {
            ContrastiveBatch::new(
                rows.iter().map(|r| r.0.clone()).collect(),
                rows.iter().map(|r| r.1.clone()).collect(),
                rows.iter().map(|r| r.2.clone()).collect(),
            ).unwrap()
        };
        let loss = batch_loss(&model, &batch(&rows));
        let mut moved = rows.clone();
        moved.rotate_left(rotate % rows.len());
        prop_assert!(loss > 0.0);
        prop_assert!((loss - batch_loss(&model, &batch(&moved))).abs() < 1e-9);
    }

    #[test]
    fn encoding_ignores_token_order(text in sentence(), seed: u64) {
        let vocab = Arc::new(Vocab::build(WORDS.iter().copied()));
        let table = DualEncoder::<f64>::new_random((*vocab).clone(), 3, seed).query_encoder().table().to_vec();
        let enc = TextEncoder::from_table(vocab, 3, table).unwrap();
        let reversed: Vec<&str> = text.split(' ').rev().collect();
        for (a, b) in enc.encode(&text).iter().zip(enc.encode(&reversed.join(" "))) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_search_scores_are_non_increasing(vectors in prop::collection::vec(-1.0f64..1.0, 3..90), q in prop::collection::vec(-1.0f64..1.0, 3)) {
        let n = vectors.len() / 3;
        let ids = (0..n).map(|i| DocId::new(format!("d{i:03}"), 0)).collect();
        let store = EmbeddingStore::new(3, ids, vectors[..n * 3].to_vec()).unwrap();
        let all = store.search_exact(&q, n).unwrap();
        prop_assert!(all.windows(2).all(|w| w[0].1 >= w[1].1));
        for k in 0..=n {
            prop_assert_eq!(&store.search_exact(&q, k).unwrap()[..], &all[..k]);
        }
    }

    #[test]
    fn posterior_sums_to_one_and_ignores_shifts(scores in prop::collection::vec(-50.0f64..50.0, 1..10), shift in -100.0f64..100.0) {
        let input = |shift: f64| ReaderInput {
            search_query: "q".into(),
            head: "Q0".into(),
            documents: scores
                .iter()
                .enumerate()
                .map(|(i, s)| RetrievedDoc { id: DocId::new("A", i as u32), position: i, text: String::new(), mentions: vec![], score: s + shift })
                .collect(),
        };
        let p = doc_posterior(&input(0.0));
        let shifted = doc_posterior(&input(shift));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (a, b) in p.iter().zip(&shifted) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn metrics_are_rank_based(order in Just((0..6).map(|i| format!("Q{i}")).collect::<Vec<_>>()).prop_shuffle(), scale in 0.1f64..10.0, offset in -5.0f64..5.0) {
        let kg = small_kg(0);
        let preds = |f: &dyn Fn(f64) -> f64| -> Vec<RankedPrediction<f64>> {
            kg.queries(Split::Test)
                .into_iter()
                .map(|query| RankedPrediction {
                    query,
                    ranking: order.iter().enumerate().map(|(i, e)| (e.clone(), f(-(i as f64)))).collect(),
                })
                .collect()
        };
        let base = preds(&|s| s);
        let moved = preds(&|s| (scale * s + offset).exp());
        let raw = evaluate(&base, &kg, false).unwrap();
        let filtered = evaluate(&base, &kg, true).unwrap();
        prop_assert_eq!(&filtered, &evaluate(&moved, &kg, true).unwrap());
        prop_assert!(filtered.mrr >= raw.mrr);
        for k in [1, 3, 10] {
            prop_assert!(filtered.hits[&k] >= raw.hits[&k]);
        }
        prop_assert!(raw.hits[&1] <= raw.hits[&3] && raw.hits[&3] <= raw.hits[&10]);
    }

    #[test]
    fn alias_queries_stay_in_the_label_product(aliases in 0usize..3, seed: u64) {
        let kg = small_kg(aliases);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for tq in kg.queries(Split::Train) {
            let head = kg.entity(&tq.head).unwrap();
            let rel = kg.relation(&tq.relation).unwrap();
            let heads: BTreeSet<String> = std::iter::once(head.label.clone()).chain(head.aliases.iter().cloned()).collect();
            let rels: BTreeSet<String> = std::iter::once(rel.label.clone()).chain(kg.relation_aliases(rel)).collect();
            let product: BTreeSet<String> = heads.iter().flat_map(|h| rels.iter().map(move |r| format!("{h} {r}"))).collect();
            prop_assert!(product.contains(&f_label_alias(&tq, &kg, &mut rng).unwrap()));
            prop_assert!(product.contains(&f_label(&tq, &kg).unwrap()));
        }
    }
}

#[test]
fn dataset_round_trips_through_files() {
    let kg = small_kg(2);
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&kg, dir.path()).unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded, kg);
    save_dataset(&loaded, dir.path()).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), kg);
}

#[test]
fn inverse_query_asks_for_the_head() {
    let kg = small_kg(0);
    for t in kg.split(Split::Train) {
        let q = t.inverse_query();
        assert_eq!(q.head, t.tail);
        assert_eq!(q.answer.as_deref(), Some(t.head.as_str()));
        assert_eq!(kg.relation(&q.relation).unwrap().base(), t.relation);
    }
}
