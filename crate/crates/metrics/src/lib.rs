//! Caption evaluation metrics.
//!
//! All scores are corpus-level and operate on already-tokenized text. The
//! METEOR variant here uses exact unigram matches only (no stemming or
//! synonymy), so its numbers are not comparable with canonical METEOR.

mod bleu;
mod cider;
mod meteor;
mod ngram;
mod report;
mod rouge;

use thiserror::Error;

pub use bleu::{bleu, bleu_with, BleuOptions};
pub use cider::{cider, CorpusIdf, CIDER_MAX_ORDER, CIDER_SCALE};
pub use meteor::{align, meteor_lite, meteor_pair, Alignment};
pub use report::{evaluate_corpus, pairs_from_records, render_table, ScoreReport, ScoreRecord, TableRow};
pub use rouge::{lcs_len, rouge_l, rouge_l_pair, ROUGE_BETA};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("cannot score an empty corpus")]
    EmptyCorpus,
    #[error("pair {0} has no reference sentences")]
    NoReferences(usize),
    #[error("n-gram order must be in 1..=4, got {0}")]
    InvalidOrder(usize),
    #[error("CIDEr document frequencies were built from an empty corpus")]
    EmptyIdf,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// One candidate caption with its reference captions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalPair {
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl EvalPair {
    pub fn new(candidate: Vec<String>, references: Vec<Vec<String>>) -> Result<Self> {
        if references.is_empty() {
            return Err(MetricsError::NoReferences(0));
        }
        Ok(EvalPair {
            candidate,
            references,
        })
    }

    /// Convenience constructor from whitespace-separated strings.
    pub fn from_text(candidate: &str, references: &[&str]) -> Result<Self> {
        let split = |s: &str| s.split_whitespace().map(str::to_string).collect();
        Self::new(split(candidate), references.iter().map(|r| split(r)).collect())
    }
}

pub(crate) fn check_corpus(pairs: &[EvalPair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    if let Some(i) = pairs.iter().position(|p| p.references.is_empty()) {
        return Err(MetricsError::NoReferences(i));
    }
    Ok(())
}

/// Mean that does not depend on the order of `values`.
pub(crate) fn order_free_mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}
