use serde::{Deserialize, Serialize};

use crate::{bleu, check_corpus, cider, meteor_lite, rouge_l, CorpusIdf, EvalPair, Result};

/// The seven numbers of a caption evaluation table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider: f64,
}

impl ScoreReport {
    pub const COLUMNS: [&'static str; 7] =
        ["BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "ROUGE", "METEOR", "CIDEr"];

    pub fn values(&self) -> [f64; 7] {
        [
            self.bleu1,
            self.bleu2,
            self.bleu3,
            self.bleu4,
            self.rouge_l,
            self.meteor,
            self.cider,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

/// Scores a corpus with every metric; CIDEr document frequencies come from
/// the corpus' own references.
pub fn evaluate_corpus(pairs: &[EvalPair]) -> Result<ScoreReport> {
    check_corpus(pairs)?;
    let idf = CorpusIdf::from_references(pairs);
    Ok(ScoreReport {
        bleu1: bleu(pairs, 1)?,
        bleu2: bleu(pairs, 2)?,
        bleu3: bleu(pairs, 3)?,
        bleu4: bleu(pairs, 4)?,
        rouge_l: rouge_l(pairs)?,
        meteor: meteor_lite(pairs)?,
        cider: cider(pairs, &idf)?,
    })
}

pub struct TableRow<'a> {
    pub method: &'a str,
    pub scores: &'a ScoreReport,
}

/// Aligned plain-text table with one row per method. `notes` are printed
/// above the header.
pub fn render_table(rows: &[TableRow<'_>], notes: &[String]) -> String {
    let width = rows
        .iter()
        .map(|r| r.method.len())
        .chain(std::iter::once("Method".len()))
        .max()
        .unwrap_or(6);
    let mut out = String::new();
    for n in notes {
        out.push_str(&format!("# {n}\n"));
    }
    out.push_str("# METEOR column is METEOR-lite (exact unigram matches only)\n");
    let mut header = format!("{:<width$}", "Method");
    for c in ScoreReport::COLUMNS {
        header.push_str(&format!(" | {c:>6}"));
    }
    out.push_str(&header);
    out.push('\n');
    out.push_str(&"-".repeat(header.len()));
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{:<width$}", r.method));
        for v in r.scores.values() {
            out.push_str(&format!(" | {v:>6.3}"));
        }
        out.push('\n');
    }
    out
}

/// JSON input record for the scorer: raw sentences, tokenized by the caller.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub candidate: String,
    pub references: Vec<String>,
}

pub fn pairs_from_records(
    records: &[ScoreRecord],
    tokenize: impl Fn(&str) -> Vec<String>,
) -> Result<Vec<EvalPair>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            EvalPair::new(
                tokenize(&r.candidate),
                r.references.iter().map(|s| tokenize(s)).collect(),
            )
            .map_err(|_| crate::MetricsError::NoReferences(i))
        })
        .collect()
}
