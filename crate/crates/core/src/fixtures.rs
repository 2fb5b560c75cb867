//! Reference data: the seven-document corpus, published per-model answer
//! scores and the recorded fine-tuning losses.

use crate::tuner::{lookup_objective, Objective, ParamPoint, SearchRanges};

/// `(doc_id, name)` for the corpus documents.
pub const DOC_NAMES: [(&str, &str); 7] = [
    ("1", "About YSA"),
    ("2", "Board of Directors"),
    ("3", "Definition of Homeless"),
    ("4", "Our Team"),
    ("5", "Programs"),
    ("6", "Application Process"),
    ("7", "Overview"),
];

const CORPUS_TEXT: [&str; 7] = [
    include_str!("../fixtures/corpus/1.txt"),
    include_str!("../fixtures/corpus/2.txt"),
    include_str!("../fixtures/corpus/3.txt"),
    include_str!("../fixtures/corpus/4.txt"),
    include_str!("../fixtures/corpus/5.txt"),
    include_str!("../fixtures/corpus/6.txt"),
    include_str!("../fixtures/corpus/7.txt"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusDoc {
    pub doc_id: &'static str,
    pub name: &'static str,
    pub text: &'static str,
}

pub fn corpus() -> Vec<CorpusDoc> {
    DOC_NAMES
        .iter()
        .zip(CORPUS_TEXT)
        .map(|(&(doc_id, name), text)| CorpusDoc { doc_id, name, text })
        .collect()
}

/// Writes the corpus as `<doc_id>.txt` files into `dir`.
pub fn write_corpus(dir: &std::path::Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for doc in corpus() {
        std::fs::write(dir.join(format!("{}.txt", doc.doc_id)), doc.text)?;
    }
    Ok(())
}

/// Per-document answer scores, documents 1..=7 in order.
pub const SCORES_DAVINCI: [f64; 7] = [0.744, 0.757, 0.779, 0.784, 0.752, 0.617, 0.724];
pub const SCORES_LLAMA2: [f64; 7] = [0.950, 0.860, 0.880, 0.870, 0.860, 0.830, 0.850];
pub const SCORES_RAG_L: [f64; 7] = [0.920, 0.930, 0.950, 0.920, 0.940, 0.960, 0.920];
pub const SCORES_RAG_L_QIM: [f64; 7] = [0.940, 0.950, 0.970, 0.930, 0.950, 0.970, 0.940];

/// Recorded validation losses, `r,alpha,dropout,loss`.
pub const FINE_TUNING_LOSSES_CSV: &str = "\
r,alpha,dropout,loss
64,16,0.001,0.316
64,16,0.01,0.3169
64,16,0.1,0.3212
64,8,0.001,0.5904
64,32,0.001,0.1585
64,64,0.001,0.1122
8,64,0.001,0.1127
16,64,0.001,0.1145
32,64,0.001,0.1122
";

pub const FINE_TUNING_INITIAL: ParamPoint = ParamPoint {
    r: 64,
    alpha: 16.0,
    dropout: 0.01,
};

pub const FINE_TUNING_THRESHOLD: f64 = 0.12;

pub fn fine_tuning_ranges() -> SearchRanges {
    SearchRanges {
        r: vec![8, 16, 32, 64],
        alpha: vec![8.0, 16.0, 32.0, 64.0],
        dropout: vec![0.001, 0.01, 0.1],
    }
}

pub fn fine_tuning_objective() -> Objective {
    lookup_objective(FINE_TUNING_LOSSES_CSV.as_bytes()).expect("embedded table parses")
}
