use crate::{check_corpus, order_free_mean, EvalPair, Result};

pub const ROUGE_BETA: f64 = 1.2;

/// Length of the longest common subsequence.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L F-measure of one pair, best over its references.
pub fn rouge_l_pair(pair: &EvalPair) -> f64 {
    if pair.candidate.is_empty() {
        return 0.0;
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    pair.references
        .iter()
        .map(|r| {
            let lcs = lcs_len(&pair.candidate, r) as f64;
            if lcs == 0.0 {
                return 0.0;
            }
            let p = lcs / pair.candidate.len() as f64;
            let rec = lcs / r.len() as f64;
            (1.0 + b2) * p * rec / (rec + b2 * p)
        })
        .fold(0.0, f64::max)
}

/// Mean ROUGE-L over the corpus.
pub fn rouge_l(pairs: &[EvalPair]) -> Result<f64> {
    check_corpus(pairs)?;
    Ok(order_free_mean(pairs.iter().map(rouge_l_pair).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(c: &str, r: &str) -> EvalPair {
        EvalPair::from_text(c, &[r]).unwrap()
    }

    #[test]
    fn examples() {
        assert_eq!(rouge_l_pair(&pair("a b c", "a b c")), 1.0);
        let f = rouge_l_pair(&pair("a b c", "a c"));
        let want = (2.44 * 2.0 / 3.0) / (1.0 + 1.44 * 2.0 / 3.0);
        assert!((f - want).abs() < 1e-12);
        assert!((f - 0.8299).abs() < 1e-4);
        assert_eq!(rouge_l_pair(&pair("x y", "a b")), 0.0);
        assert_eq!(rouge_l_pair(&pair("", "a b")), 0.0);
    }
}
