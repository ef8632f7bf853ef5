//! Brute-force reference implementations of the caption metrics, written
//! independently of the library code: n-grams by linear scan, LCS by the
//! full quadratic table, METEOR alignments by exhaustive enumeration and
//! CIDEr over dense vectors.
#![allow(dead_code)]

use mabn_metrics::EvalPair;
use rand::Rng;

fn grams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    if tokens.len() >= n {
        for i in 0..=tokens.len() - n {
            out.push(tokens[i..i + n].to_vec());
        }
    }
    out
}

fn count(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

fn distinct(list: &[Vec<String>]) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = Vec::new();
    for g in list {
        if !out.contains(g) {
            out.push(g.clone());
        }
    }
    out
}

pub fn bleu(pairs: &[EvalPair], n: usize) -> f64 {
    let mut c_total = 0usize;
    let mut r_total = 0usize;
    let mut log_p = 0.0;
    for order in 1..=n {
        let mut clipped = 0usize;
        let mut total = 0usize;
        for p in pairs {
            let cg = grams(&p.candidate, order);
            total += cg.len();
            for g in distinct(&cg) {
                let max_ref = p
                    .references
                    .iter()
                    .map(|r| count(&grams(r, order), &g))
                    .max()
                    .unwrap();
                clipped += count(&cg, &g).min(max_ref);
            }
        }
        if clipped == 0 {
            return 0.0;
        }
        log_p += (clipped as f64 / total as f64).ln();
    }
    for p in pairs {
        let c = p.candidate.len();
        c_total += c;
        let mut best = p.references[0].len();
        for r in &p.references {
            let (d, bd) = (r.len().abs_diff(c), best.abs_diff(c));
            if d < bd || (d == bd && r.len() < best) {
                best = r.len();
            }
        }
        r_total += best;
    }
    let bp = if c_total >= r_total {
        1.0
    } else {
        (1.0 - r_total as f64 / c_total as f64).exp()
    };
    bp * (log_p / n as f64).exp()
}

pub fn lcs(a: &[String], b: &[String]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t[a.len()][b.len()]
}

pub fn rouge_l(pairs: &[EvalPair]) -> f64 {
    let mut sum = 0.0;
    for p in pairs {
        let mut best: f64 = 0.0;
        for r in &p.references {
            let l = lcs(&p.candidate, r) as f64;
            if l > 0.0 {
                let prec = l / p.candidate.len() as f64;
                let rec = l / r.len() as f64;
                let b2 = 1.2f64 * 1.2;
                best = best.max((1.0 + b2) * prec * rec / (rec + b2 * prec));
            }
        }
        sum += best;
    }
    sum / pairs.len() as f64
}

/// Every one-to-one exact-match alignment; returns (max matches, min chunks
/// among maximal alignments).
pub fn exhaustive_alignment(c: &[String], r: &[String]) -> (usize, usize) {
    fn rec(
        i: usize,
        c: &[String],
        r: &[String],
        used: &mut Vec<bool>,
        map: &mut Vec<Option<usize>>,
        best: &mut (usize, usize),
    ) {
        if i == c.len() {
            let m = map.iter().flatten().count();
            let mut chunks = 0;
            for k in 0..c.len() {
                if let Some(j) = map[k] {
                    let continues = k > 0 && j > 0 && map[k - 1] == Some(j - 1);
                    if !continues {
                        chunks += 1;
                    }
                }
            }
            if m > best.0 || (m == best.0 && chunks < best.1) {
                *best = (m, chunks);
            }
            return;
        }
        map[i] = None;
        rec(i + 1, c, r, used, map, best);
        for j in 0..r.len() {
            if !used[j] && r[j] == c[i] {
                used[j] = true;
                map[i] = Some(j);
                rec(i + 1, c, r, used, map, best);
                used[j] = false;
                map[i] = None;
            }
        }
    }
    let mut best = (0, 0);
    rec(0, c, r, &mut vec![false; r.len()], &mut vec![None; c.len()], &mut best);
    best
}

pub fn meteor(pairs: &[EvalPair]) -> f64 {
    let mut sum = 0.0;
    for p in pairs {
        let mut best: f64 = 0.0;
        for r in &p.references {
            let (m, ch) = exhaustive_alignment(&p.candidate, r);
            if m > 0 {
                let m = m as f64;
                let prec = m / p.candidate.len() as f64;
                let rec = m / r.len() as f64;
                let f = 10.0 * prec * rec / (rec + 9.0 * prec);
                best = best.max(f * (1.0 - 0.5 * (ch as f64 / m).powi(3)));
            }
        }
        sum += best;
    }
    sum / pairs.len() as f64
}

pub fn cider(pairs: &[EvalPair]) -> f64 {
    let docs = pairs.len() as f64;
    let mut total = 0.0;
    for p in pairs {
        let mut score = 0.0;
        for n in 1..=4 {
            // dense vocabulary of every n-gram in the corpus references and this candidate
            let mut vocab: Vec<Vec<String>> = Vec::new();
            for q in pairs {
                for r in &q.references {
                    vocab.extend(grams(r, n));
                }
            }
            vocab.extend(grams(&p.candidate, n));
            let vocab = distinct(&vocab);
            let df = |g: &[String]| {
                pairs
                    .iter()
                    .filter(|q| q.references.iter().any(|r| count(&grams(r, n), g) > 0))
                    .count()
            };
            let vec_of = |toks: &[String]| -> Vec<f64> {
                let gs = grams(toks, n);
                vocab
                    .iter()
                    .map(|g| {
                        if gs.is_empty() {
                            return 0.0;
                        }
                        let tf = count(&gs, g) as f64 / gs.len() as f64;
                        tf * (docs / df(g).max(1) as f64).ln()
                    })
                    .collect()
            };
            let vc = vec_of(&p.candidate);
            let nc = vc.iter().map(|x| x * x).sum::<f64>().sqrt();
            let mut acc = 0.0;
            for r in &p.references {
                let vr = vec_of(r);
                let nr = vr.iter().map(|x| x * x).sum::<f64>().sqrt();
                if nc > 0.0 && nr > 0.0 {
                    let dot: f64 = vc.iter().zip(&vr).map(|(a, b)| a.min(*b) * b).sum();
                    acc += 10.0 * dot / (nc * nr);
                }
            }
            score += acc / p.references.len() as f64;
        }
        total += score / 4.0;
    }
    total / docs
}

/// Random pairs over a small vocabulary so that overlaps and repeated words
/// are common. Sentences have 1..=8 tokens.
pub fn random_fixture<R: Rng>(rng: &mut R, count: usize) -> Vec<EvalPair> {
    const WORDS: [&str; 7] = ["the", "ball", "red", "on", "shelf", "bring", "me"];
    let sentence = |rng: &mut R| -> Vec<String> {
        let len = rng.gen_range(1..=8);
        (0..len).map(|_| WORDS[rng.gen_range(0..WORDS.len())].to_string()).collect()
    };
    (0..count)
        .map(|_| {
            let cand = sentence(rng);
            let nrefs = rng.gen_range(1..=3);
            let refs = (0..nrefs).map(|_| sentence(rng)).collect();
            EvalPair::new(cand, refs).unwrap()
        })
        .collect()
}
