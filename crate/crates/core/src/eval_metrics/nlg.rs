use std::collections::{HashMap, HashSet};

use crate::text::porter_stem;

use super::MetricError;

pub const BLEU_EPS: f64 = 1e-9;
pub const ROUGE_BETA: f64 = 1.2;

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for g in tokens.windows(n) {
            *m.entry(g).or_insert(0) += 1;
        }
    }
    m
}

/// Sentence BLEU with clipped precisions smoothed as (m+ε)/(c+ε) and the
/// closest-reference brevity penalty. Orders longer than the candidate are
/// left out of the geometric mean.
pub fn bleu(candidate: &[String], references: &[Vec<String>], n: usize) -> Result<f64, MetricError> {
    if candidate.is_empty() {
        return Err(MetricError::EmptyCandidate);
    }
    if references.is_empty() || !(1..=4).contains(&n) {
        return Err(MetricError::InvalidInput("bleu needs n in 1..=4 and at least one reference".into()));
    }
    let order = n.min(candidate.len());
    let mut log_sum = 0.0;
    for k in 1..=order {
        let cand = ngrams(candidate, k);
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in references {
            for (g, c) in ngrams(r, k) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let matched: usize = cand.iter().map(|(g, c)| (*c).min(max_ref.get(g).copied().unwrap_or(0))).sum();
        let total: usize = cand.values().sum();
        log_sum += ((matched as f64 + BLEU_EPS) / (total as f64 + BLEU_EPS)).ln();
    }
    let c = candidate.len();
    let r = references
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("non-empty");
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok(bp * (log_sum / order as f64).exp())
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

/// LCS-based F-measure with recall weighted by β = 1.2.
pub fn rouge_l(candidate: &[String], reference: &[String]) -> Result<f64, MetricError> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(MetricError::EmptyCandidate);
    }
    let l = lcs(candidate, reference) as f64;
    if l == 0.0 {
        return Ok(0.0);
    }
    let p = l / candidate.len() as f64;
    let r = l / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    Ok((1.0 + b2) * p * r / (r + b2 * p))
}

/// Best ROUGE-L over several references.
pub fn rouge_l_multi(candidate: &[String], references: &[Vec<String>]) -> Result<f64, MetricError> {
    references
        .iter()
        .map(|r| rouge_l(candidate, r))
        .try_fold(0.0f64, |acc, x| x.map(|v| acc.max(v)))
}

/// Document frequencies over reference sets for plain CIDEr.
#[derive(Debug, Clone)]
pub struct CiderCorpus {
    doc_freq: [HashMap<Vec<String>, usize>; 4],
    n_docs: usize,
}

impl CiderCorpus {
    /// One entry per item: all references for that item.
    pub fn new(references: &[Vec<Vec<String>>]) -> Result<Self, MetricError> {
        if references.len() < 2 {
            return Err(MetricError::CorpusTooSmall(references.len()));
        }
        let mut doc_freq: [HashMap<Vec<String>, usize>; 4] = Default::default();
        for refs in references {
            for (k, df) in doc_freq.iter_mut().enumerate() {
                let seen: HashSet<&[String]> = refs.iter().flat_map(|r| ngrams(r, k + 1).into_keys()).collect();
                for g in seen {
                    *df.entry(g.to_vec()).or_insert(0) += 1;
                }
            }
        }
        Ok(Self {
            doc_freq,
            n_docs: references.len(),
        })
    }

    fn vector<'a>(&self, tokens: &'a [String], n: usize) -> HashMap<&'a [String], f64> {
        let counts = ngrams(tokens, n);
        let df = &self.doc_freq[n - 1];
        counts
            .into_iter()
            .map(|(g, c)| {
                let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
                (g, c as f64 * (self.n_docs as f64 / d).ln())
            })
            .collect()
    }

    /// 10 × mean over n = 1..4 of the mean cosine to each reference.
    pub fn score(&self, candidate: &[String], references: &[Vec<String>]) -> f64 {
        if references.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        for n in 1..=4 {
            let vc = self.vector(candidate, n);
            let norm_c = vc.values().map(|v| v * v).sum::<f64>().sqrt();
            let mut acc = 0.0;
            for r in references {
                let vr = self.vector(r, n);
                let norm_r = vr.values().map(|v| v * v).sum::<f64>().sqrt();
                if norm_c == 0.0 || norm_r == 0.0 {
                    continue;
                }
                let dot: f64 = vc.iter().filter_map(|(g, a)| vr.get(g).map(|b| a * b)).sum();
                acc += dot / (norm_c * norm_r);
            }
            total += acc / references.len() as f64;
        }
        10.0 * total / 4.0
    }
}

/// Per-candidate CIDEr; IDF from the reference sets.
pub fn cider(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<Vec<f64>, MetricError> {
    if candidates.len() != references.len() {
        return Err(MetricError::InvalidInput("one reference set per candidate".into()));
    }
    let corpus = CiderCorpus::new(references)?;
    Ok(candidates.iter().zip(references).map(|(c, r)| corpus.score(c, r)).collect())
}

/// Unigram alignment: exact matches first, then Porter-stem matches, each
/// pass greedy left to right. Returns (candidate index, reference index)
/// pairs sorted by candidate index.
fn align(candidate: &[String], reference: &[String]) -> Vec<(usize, usize)> {
    let mut used_c = vec![false; candidate.len()];
    let mut used_r = vec![false; reference.len()];
    let mut pairs = Vec::new();
    let stems_c: Vec<String> = candidate.iter().map(|w| porter_stem(w)).collect();
    let stems_r: Vec<String> = reference.iter().map(|w| porter_stem(w)).collect();
    for pass in 0..2 {
        for i in 0..candidate.len() {
            if used_c[i] {
                continue;
            }
            let hit = (0..reference.len()).find(|&j| {
                !used_r[j] && if pass == 0 { candidate[i] == reference[j] } else { stems_c[i] == stems_r[j] }
            });
            if let Some(j) = hit {
                used_c[i] = true;
                used_r[j] = true;
                pairs.push((i, j));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

/// METEOR without synonym tables: Fmean = 10PR/(R+9P) with the
/// fragmentation penalty 0.5·(chunks/matches)³.
pub fn meteor_simplified(candidate: &[String], reference: &[String]) -> Result<f64, MetricError> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(MetricError::EmptyCandidate);
    }
    let pairs = align(candidate, reference);
    let m = pairs.len();
    if m == 0 {
        return Ok(0.0);
    }
    let chunks = 1 + pairs.windows(2).filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1)).count();
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    Ok(fmean * (1.0 - penalty))
}

pub fn meteor_multi(candidate: &[String], references: &[Vec<String>]) -> Result<f64, MetricError> {
    references
        .iter()
        .map(|r| meteor_simplified(candidate, r))
        .try_fold(0.0f64, |acc, x| x.map(|v| acc.max(v)))
}
