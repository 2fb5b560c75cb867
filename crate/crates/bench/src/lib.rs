//! Benchmark inputs shared by the criterion benches.

use qimrag_core::rng::SplitMix64;
use qimrag_core::store::{ChunkRecord, Collection};
use qimrag_core::Embedding;

pub fn random_vector(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    (0..n).map(|_| rng.next_signed_unit()).collect()
}

pub fn random_collection(count: usize, dimension: usize) -> Collection {
    let c = Collection::new("bench", dimension).expect("valid dimension");
    let records = (0..count)
        .map(|i| ChunkRecord {
            chunk_id: format!("c{i:06}"),
            doc_id: format!("d{}", i / 10),
            ordinal: (i % 10) as u64,
            text: String::new(),
            embedding: Embedding::new(random_vector(i as u64 + 1, dimension)).expect("finite"),
        })
        .collect();
    c.upsert(records).expect("upsert");
    c
}
