use std::collections::HashMap;

use crate::{check_corpus, order_free_mean, EvalPair, Result};

/// A maximum-cardinality exact-match alignment with the fewest chunks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Alignment {
    pub matches: usize,
    pub chunks: usize,
}

/// Aligns candidate and reference unigrams one-to-one on exact matches.
///
/// The number of matches is fixed at its maximum (per word, the smaller of
/// the two occurrence counts); among those alignments the one with the
/// fewest chunks is found by depth-first search with pruning. A chunk is a
/// run of matches adjacent in both sentences.
pub fn align(candidate: &[String], reference: &[String]) -> Alignment {
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let cand = intern(candidate, &mut ids);
    let refr = intern(reference, &mut ids);
    let vocab = ids.len();

    let mut cand_count = vec![0usize; vocab];
    let mut ref_count = vec![0usize; vocab];
    cand.iter().for_each(|&w| cand_count[w] += 1);
    refr.iter().for_each(|&w| ref_count[w] += 1);
    let need: Vec<usize> = (0..vocab).map(|w| cand_count[w].min(ref_count[w])).collect();
    let matches: usize = need.iter().sum();
    if matches == 0 {
        return Alignment {
            matches: 0,
            chunks: 0,
        };
    }

    let mut positions: Vec<Vec<usize>> = vec![Vec::new(); vocab];
    for (j, &w) in refr.iter().enumerate() {
        positions[w].push(j);
    }
    let mut search = Search {
        cand: &cand,
        positions: &positions,
        used: vec![false; refr.len()],
        need,
        left: cand_count,
        best: usize::MAX,
    };
    search.run(0, None, 0);
    Alignment {
        matches,
        chunks: search.best,
    }
}

fn intern<'a>(words: &'a [String], ids: &mut HashMap<&'a str, usize>) -> Vec<usize> {
    words
        .iter()
        .map(|w| {
            let n = ids.len();
            *ids.entry(w.as_str()).or_insert(n)
        })
        .collect()
}

struct Search<'a> {
    cand: &'a [usize],
    positions: &'a [Vec<usize>],
    used: Vec<bool>,
    /// Matches still required per word.
    need: Vec<usize>,
    /// Candidate occurrences per word at or after the current position.
    left: Vec<usize>,
    best: usize,
}

impl Search<'_> {
    fn run(&mut self, i: usize, prev: Option<usize>, chunks: usize) {
        if chunks >= self.best || self.best == 1 {
            return;
        }
        if i == self.cand.len() {
            self.best = chunks;
            return;
        }
        let w = self.cand[i];
        self.left[w] -= 1;
        if self.need[w] > 0 {
            // Extending the current chunk first finds good bounds early.
            let cont = prev.map(|j| j + 1);
            let mut order: Vec<usize> = self.positions[w]
                .iter()
                .copied()
                .filter(|&j| !self.used[j])
                .collect();
            order.sort_by_key(|&j| Some(j) != cont);
            for j in order {
                self.used[j] = true;
                self.need[w] -= 1;
                let extra = usize::from(Some(j) != cont);
                self.run(i + 1, Some(j), chunks + extra);
                self.need[w] += 1;
                self.used[j] = false;
            }
        }
        if self.left[w] >= self.need[w] {
            self.run(i + 1, None, chunks);
        }
        self.left[w] += 1;
    }
}

/// METEOR-lite score of one pair, best over its references.
pub fn meteor_pair(pair: &EvalPair) -> f64 {
    pair.references
        .iter()
        .map(|r| {
            let a = align(&pair.candidate, r);
            if a.matches == 0 {
                return 0.0;
            }
            let m = a.matches as f64;
            let p = m / pair.candidate.len() as f64;
            let rec = m / r.len() as f64;
            let f = 10.0 * p * rec / (rec + 9.0 * p);
            let penalty = 0.5 * (a.chunks as f64 / m).powi(3);
            f * (1.0 - penalty)
        })
        .fold(0.0, f64::max)
}

/// Mean METEOR-lite over the corpus.
pub fn meteor_lite(pairs: &[EvalPair]) -> Result<f64> {
    check_corpus(pairs)?;
    Ok(order_free_mean(pairs.iter().map(meteor_pair).collect()))
}
