use std::collections::HashMap;

use crate::{check_corpus, ngram, EvalPair, MetricsError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BleuOptions {
    /// Add-one smoothing of the 2..n-gram precisions. Off by default, so
    /// any order without overlap scores the corpus 0.
    pub smoothing: bool,
}

/// Corpus BLEU-`n` without smoothing.
pub fn bleu(pairs: &[EvalPair], n: usize) -> Result<f64> {
    bleu_with(pairs, n, BleuOptions::default())
}

/// Corpus BLEU: clipped i-gram precisions pooled over the corpus, geometric
/// mean over i = 1..=n, times the brevity penalty against the closest
/// reference length of every pair.
pub fn bleu_with(pairs: &[EvalPair], n: usize, opts: BleuOptions) -> Result<f64> {
    if !(1..=4).contains(&n) {
        return Err(MetricsError::InvalidOrder(n));
    }
    check_corpus(pairs)?;

    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for pair in pairs {
        let c = pair.candidate.len();
        cand_len += c;
        ref_len += closest_ref_len(c, &pair.references);
        for order in 1..=n {
            let cand = ngram::counts(&pair.candidate, order);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in &pair.references {
                for (g, k) in ngram::counts(r, order) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(k);
                }
            }
            for (g, k) in &cand {
                matched[order - 1] += (*k).min(max_ref.get(g).copied().unwrap_or(0));
            }
            total[order - 1] += c.saturating_sub(order - 1);
        }
    }
    if cand_len == 0 {
        return Ok(0.0);
    }

    let mut log_sum = 0.0;
    for order in 1..=n {
        let (m, t) = (matched[order - 1] as f64, total[order - 1] as f64);
        let p = if opts.smoothing && order > 1 {
            (m + 1.0) / (t + 1.0)
        } else if t == 0.0 {
            0.0
        } else {
            m / t
        };
        if p == 0.0 {
            return Ok(0.0);
        }
        log_sum += p.ln();
    }
    let bp = (1.0 - ref_len as f64 / cand_len as f64).min(0.0).exp();
    Ok(bp * (log_sum / n as f64).exp())
}

/// Reference length closest to `cand_len`; ties go to the shorter one.
fn closest_ref_len(cand_len: usize, refs: &[Vec<String>]) -> usize {
    refs.iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(cand_len), r))
        .unwrap_or(0)
}
