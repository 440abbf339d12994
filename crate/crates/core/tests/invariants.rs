use std::collections::HashSet;

use corpus_explore::agent::clipped_surrogate;
use corpus_explore::corpus::{build_vocabulary, featurize, segment_document, Document, SparseVector};
use corpus_explore::embed::tsne::{high_dim_affinities, TsneConfig};
use corpus_explore::embed::{normalize_embedding, Embedding};
use corpus_explore::eval::{evaluate_session, MetricConfig};
use corpus_explore::sim::{give_feedback, reward, Rating, TopicGroundTruth};
use corpus_explore::state::{build_global_rep, pool_state, SearchState, SENTINEL};
use proptest::collection::vec;
use proptest::prelude::*;

fn topic(grades: &[(i32, u32)]) -> TopicGroundTruth {
    let ratings = grades
        .iter()
        .enumerate()
        .map(|(d, &(g, s))| Rating {
            doc_id: format!("d{d}"),
            rating: g,
            subtopics: if g > 0 { vec![s] } else { vec![] },
            passage: None,
        })
        .collect();
    TopicGroundTruth::new("t".into(), "q".into(), vec![1, 2, 3], ratings).unwrap()
}

fn grades() -> impl Strategy<Value = Vec<(i32, u32)>> {
    (1i32..=4, vec((-1i32..=4, 1u32..=3), 0..11)).prop_map(|(first, rest)| {
        let mut g = vec![(first, 1)];
        g.extend(rest);
        g
    })
}

fn lists(max_doc: usize) -> impl Strategy<Value = Vec<Vec<String>>> {
    vec(vec((0..max_doc + 2).prop_map(|d| format!("d{d}")), 0..5), 1..8)
}

proptest! {
    #[test]
    fn session_reward_is_bounded_by_positive_mass(g in grades(), ls in lists(12)) {
        let t = topic(&g);
        let mut history = HashSet::new();
        let mut total = 0.0;
        for batch in &ls {
            let r = reward(&give_feedback(&t, batch), &history);
            prop_assert!(r >= 0.0);
            total += r;
            history.extend(batch.iter().cloned());
        }
        prop_assert!(total <= t.positive_mass() + 1e-12);
    }

    #[test]
    fn session_metrics_are_bounded_and_recall_monotone(g in grades(), ls in lists(12)) {
        let t = topic(&g);
        let m = evaluate_session(&ls, &t, &MetricConfig::default()).unwrap();
        for series in [&m.precision, &m.recall, &m.aspect_recall, &m.nsdcg, &m.duplicate_rate, &m.batch_precision] {
            prop_assert!(series.iter().all(|x| (0.0..=1.0).contains(x)), "{series:?}");
        }
        prop_assert!(m.recall.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(m.aspect_recall.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn clipped_surrogate_is_a_pessimistic_bound(rho in 0.0f64..3.0, adv in -5.0f64..5.0, eps in 0.01f64..0.5) {
        let s = clipped_surrogate(rho, adv, eps);
        prop_assert!(s <= rho * adv + 1e-12);
        if (1.0 - eps..=1.0 + eps).contains(&rho) {
            prop_assert!((s - rho * adv).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_embeddings_fill_the_unit_box(coords in vec(-50.0f64..50.0, 3..60)) {
        let rows = coords.len() / 3;
        let emb = Embedding::new(3, coords[..rows * 3].to_vec()).unwrap();
        let n = normalize_embedding(&emb);
        prop_assert!(n.coords().iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn repeating_every_token_keeps_features(words in vec("[a-e]{1,3}", 1..30)) {
        let text = words.join(" ");
        let doubled: String = words.iter().flat_map(|w| [w.as_str(), w.as_str()]).collect::<Vec<_>>().join(" ");
        let docs = [Document::from_text("a", &text), Document::from_text("b", &doubled)];
        let seg: Vec<_> = docs.iter().map(|d| segment_document(d, 1).unwrap()).collect();
        let vocab = build_vocabulary(&seg).unwrap();
        let fa = featurize(&docs[0].tokens, &vocab, 2).to_dense();
        let fb = featurize(&docs[1].tokens, &vocab, 2).to_dense();
        for (x, y) in fa.iter().zip(&fb) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn affinities_are_a_symmetric_distribution(points in vec(vec(-2.0f64..2.0, 4), 4..12)) {
        let pts: Vec<SparseVector> = points.iter().map(|p| SparseVector::from_dense(p)).collect();
        let config = TsneConfig { perplexity: 2.0, ..Default::default() };
        let p = high_dim_affinities(&pts, &config).unwrap();
        prop_assert!(p.is_symmetric());
        prop_assert!((p.sum() - 1.0).abs() < 1e-9);
        prop_assert!((0..p.len()).all(|i| p.get(i, i) == 0.0));
    }

    #[test]
    fn pooling_a_fully_visited_state_gives_the_sentinel(docs in 1usize..40, rows in 1usize..40, cols in 1usize..25) {
        let segments = 3;
        let emb = Embedding::new(2, vec![0.5; docs * segments * 2]).unwrap();
        let order: Vec<usize> = (0..docs).collect();
        let state = SearchState::new(build_global_rep(&emb, docs, segments, &order).unwrap());
        let fresh = pool_state(&state, rows, cols).unwrap();
        prop_assert!(fresh.values.iter().all(|&v| (v - 0.5).abs() < 1e-12));
        let visited = state.mark_visited(&order).unwrap();
        let pooled = pool_state(&visited, rows, cols).unwrap();
        prop_assert_eq!(pooled.values.len(), rows * cols * 2);
        prop_assert!(pooled.values.iter().all(|&v| v == SENTINEL));
    }
}
