use std::collections::HashMap;

use crate::{check_corpus, ngram, order_free_mean, EvalPair, MetricsError, Result};

pub const CIDER_MAX_ORDER: usize = 4;
pub const CIDER_SCALE: f64 = 10.0;

/// Document frequencies of reference n-grams, one document per pair.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusIdf {
    doc_freq: [HashMap<Vec<String>, usize>; CIDER_MAX_ORDER],
    docs: usize,
}

impl CorpusIdf {
    pub fn from_references(pairs: &[EvalPair]) -> Self {
        let mut idf = CorpusIdf::default();
        for pair in pairs {
            idf.docs += 1;
            for n in 1..=CIDER_MAX_ORDER {
                let mut seen: Vec<&[String]> = pair
                    .references
                    .iter()
                    .flat_map(|r| ngram::counts(r, n).into_keys())
                    .collect();
                seen.sort();
                seen.dedup();
                for g in seen {
                    *idf.doc_freq[n - 1].entry(g.to_vec()).or_insert(0) += 1;
                }
            }
        }
        idf
    }

    pub fn documents(&self) -> usize {
        self.docs
    }

    pub fn document_frequency(&self, gram: &[String]) -> usize {
        let n = gram.len();
        if n == 0 || n > CIDER_MAX_ORDER {
            return 0;
        }
        self.doc_freq[n - 1].get(gram).copied().unwrap_or(0)
    }

    fn idf(&self, gram: &[String]) -> f64 {
        (self.docs as f64 / self.document_frequency(gram).max(1) as f64).ln()
    }

    fn vector<'a>(&self, tokens: &'a [String], n: usize) -> HashMap<&'a [String], f64> {
        let counts = ngram::counts(tokens, n);
        let total: usize = counts.values().sum();
        counts
            .into_iter()
            .map(|(g, c)| (g, c as f64 / total as f64 * self.idf(g)))
            .collect()
    }
}

fn norm(v: &HashMap<&[String], f64>) -> f64 {
    let mut sq: Vec<f64> = v.values().map(|x| x * x).collect();
    sq.sort_by(f64::total_cmp);
    sq.iter().sum::<f64>().sqrt()
}

/// Cosine similarity with candidate weights clipped to the reference
/// weights in the numerator.
fn clipped_cosine(cand: &HashMap<&[String], f64>, reference: &HashMap<&[String], f64>) -> f64 {
    let (nc, nr) = (norm(cand), norm(reference));
    if nc == 0.0 || nr == 0.0 {
        return 0.0;
    }
    let mut terms: Vec<f64> = cand
        .iter()
        .filter_map(|(g, &c)| reference.get(g).map(|&r| c.min(r) * r))
        .collect();
    terms.sort_by(f64::total_cmp);
    terms.iter().sum::<f64>() / (nc * nr)
}

fn cider_pair(pair: &EvalPair, idf: &CorpusIdf) -> f64 {
    let mut per_order = 0.0;
    for n in 1..=CIDER_MAX_ORDER {
        let cand = idf.vector(&pair.candidate, n);
        let sum: f64 = pair
            .references
            .iter()
            .map(|r| CIDER_SCALE * clipped_cosine(&cand, &idf.vector(r, n)))
            .sum();
        per_order += sum / pair.references.len() as f64;
    }
    per_order / CIDER_MAX_ORDER as f64
}

/// Mean CIDEr over the corpus (uniform weights over n = 1..=4, scaled by 10).
pub fn cider(pairs: &[EvalPair], idf: &CorpusIdf) -> Result<f64> {
    check_corpus(pairs)?;
    if idf.docs == 0 {
        return Err(MetricsError::EmptyIdf);
    }
    Ok(order_free_mean(pairs.iter().map(|p| cider_pair(p, idf)).collect()))
}
