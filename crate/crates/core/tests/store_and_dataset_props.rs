use proptest::prelude::*;
use qimrag_core::dataset::{
    chunk_text, parse_guanaco, reassemble, split_dataset, to_guanaco_text, PairOrigin, QAPair,
};
use qimrag_core::similarity::cosine_similarity;
use qimrag_core::store::{filter_by_distance, load, persist, ChunkRecord, Collection, RankedResult};
use qimrag_core::Embedding;

fn record(i: usize, v: Vec<f64>) -> ChunkRecord {
    ChunkRecord {
        chunk_id: format!("c{i:04}"),
        doc_id: format!("d{}", i % 3),
        ordinal: i as u64,
        text: format!("chunk {i}"),
        embedding: Embedding::new(v).unwrap(),
    }
}

fn nonzero_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim).prop_filter("nonzero", |v| v.iter().any(|&x| x != 0.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn top1_is_linear_scan_max(vs in prop::collection::vec(nonzero_vec(8), 1..40), query in nonzero_vec(8)) {
        let col = Collection::new("p", 8).unwrap();
        col.upsert(vs.iter().cloned().enumerate().map(|(i, v)| record(i, v)).collect()).unwrap();
        let top = col.query_topk(&query, 1).unwrap();
        let best = vs
            .iter()
            .map(|v| cosine_similarity(&query, v).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(top[0].cosine, best);

        let all = col.query_topk(&query, vs.len() + 5).unwrap();
        prop_assert_eq!(all.len(), vs.len());
        for w in all.windows(2) {
            prop_assert!(w[0].cosine >= w[1].cosine);
            if w[0].cosine == w[1].cosine {
                prop_assert!(w[0].chunk.chunk_id < w[1].chunk.chunk_id);
            }
        }
        for r in &all {
            prop_assert!((r.distance - (1.0 - r.cosine)).abs() < 1e-15);
        }
    }

    #[test]
    fn persist_load_round_trip(vs in prop::collection::vec(nonzero_vec(5), 0..20)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.qvs");
        let col = Collection::new("round", 5).unwrap();
        col.upsert(vs.into_iter().enumerate().map(|(i, v)| record(i, v)).collect()).unwrap();
        persist(&col, &path).unwrap();
        let back = load(&path).unwrap();
        prop_assert_eq!(back.name(), "round");
        prop_assert_eq!(back.dimension(), 5);
        prop_assert_eq!(back.records(), col.records());
    }

    #[test]
    fn distance_filter_keeps_exactly_the_close_ones(cosines in prop::collection::vec(-1.0f64..=1.0, 0..30), threshold in 0.0f64..2.0) {
        let results: Vec<RankedResult> = cosines
            .iter()
            .enumerate()
            .map(|(i, &c)| RankedResult::new(record(i, vec![1.0, 0.0]), c))
            .collect();
        let expected = results.iter().filter(|r| r.distance <= threshold).count();
        let kept = filter_by_distance(results, threshold);
        prop_assert_eq!(kept.len(), expected);
        prop_assert!(kept.iter().all(|r| r.distance <= threshold));
    }

    #[test]
    fn chunks_reassemble_to_source(text in "[a-z ]{0,600}", max in 20usize..200, overlap_frac in 0.0f64..0.5) {
        let overlap = (max as f64 * overlap_frac) as usize;
        let chunks = chunk_text("d", &text, max, overlap).unwrap();
        prop_assert_eq!(reassemble(&chunks, overlap), text.clone());
        for (i, c) in chunks.iter().enumerate() {
            prop_assert_eq!(c.ordinal, i);
            prop_assert!(c.text.chars().count() <= max);
        }
    }

    #[test]
    fn guanaco_round_trip(qa in prop::collection::vec(("[A-Za-z][A-Za-z ?,.]{0,40}", "[A-Za-z][A-Za-z ,.]{0,60}"), 1..60)) {
        let pairs: Vec<QAPair> = qa
            .iter()
            .map(|(q, a)| QAPair::new(q, a, "d", PairOrigin::Generated).unwrap())
            .collect();
        let text = to_guanaco_text(&pairs);
        let line_re = regex::Regex::new(r"^### Human: .+ ### Assistant: .+$").unwrap();
        for line in text.lines() {
            prop_assert!(line_re.is_match(line), "{line:?}");
        }
        let parsed = parse_guanaco(&text).unwrap();
        let want: Vec<(String, String)> = pairs.iter().map(|p| (p.question.clone(), p.answer.clone())).collect();
        prop_assert_eq!(parsed, want);
    }

    #[test]
    fn split_partitions_without_overlap(n in 2usize..80, seed in any::<u64>(), ratio in 0.05f64..0.95) {
        let pairs: Vec<QAPair> = (0..n)
            .map(|i| QAPair::new(&format!("q{i}"), &format!("a{i}"), "d", PairOrigin::Generated).unwrap())
            .collect();
        let b = split_dataset(pairs.clone(), ratio, seed).unwrap();
        prop_assert_eq!(b.train.len() + b.test.len(), n);
        prop_assert_eq!(b.train.len(), ((ratio * n as f64) - 1e-9).ceil() as usize);
        let mut all: Vec<_> = b.train.iter().chain(&b.test).map(|p| p.question.clone()).collect();
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(split_dataset(pairs, ratio, seed).unwrap(), b);
    }
}
