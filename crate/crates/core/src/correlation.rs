//! Chain assembly from per-trip probabilities and pairwise co-occurrence.
//!
//! Score(A) = mean_{i in A} p(i) + lambda * mean_{{i,j} in A} f*(i, j)

use serde::{Deserialize, Serialize};

use crate::model::TripVocabulary;

/// Scores closer than this are treated as tied.
pub const SCORE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    /// f* = f(i,j) / sum of f over all unordered pairs.
    #[default]
    #[serde(rename = "global")]
    Global,
    /// f* = f(i,j) / (0.5 * (sum_k f(k,j) + sum_k f(i,k))).
    #[serde(rename = "eq6-literal", alias = "marginal")]
    Eq6Literal,
}

impl std::str::FromStr for Normalization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "global" => Ok(Self::Global),
            "eq6-literal" | "marginal" => Ok(Self::Eq6Literal),
            other => Err(format!("unknown normalization '{other}' (global | marginal)")),
        }
    }
}

impl std::fmt::Display for Normalization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Global => "global",
            Self::Eq6Literal => "eq6-literal",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceTable {
    n: usize,
    raw: Vec<u32>,
    normalized: Vec<f64>,
    pub mode: Normalization,
}

impl CooccurrenceTable {
    /// Table from a dense symmetric count matrix (zero diagonal).
    pub fn from_counts(n: usize, raw: Vec<u32>, mode: Normalization) -> Self {
        assert_eq!(raw.len(), n * n);
        let mut normalized = vec![0.0; n * n];
        match mode {
            Normalization::Global => {
                let mut total = 0u64;
                for i in 0..n {
                    for j in i + 1..n {
                        total += raw[i * n + j] as u64;
                    }
                }
                if total > 0 {
                    for i in 0..n {
                        for j in 0..n {
                            if i != j {
                                normalized[i * n + j] = raw[i * n + j] as f64 / total as f64;
                            }
                        }
                    }
                }
            }
            Normalization::Eq6Literal => {
                let marg: Vec<u64> = (0..n)
                    .map(|i| raw[i * n..(i + 1) * n].iter().map(|&v| v as u64).sum())
                    .collect();
                for i in 0..n {
                    for j in 0..n {
                        let denom = 0.5 * (marg[i] + marg[j]) as f64;
                        if i != j && denom > 0.0 {
                            normalized[i * n + j] = raw[i * n + j] as f64 / denom;
                        }
                    }
                }
            }
        }
        Self {
            n,
            raw,
            normalized,
            mode,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn raw(&self, i: usize, j: usize) -> u32 {
        self.raw[i * self.n + j]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.normalized[i * self.n + j]
    }
}

pub fn normalize_cooccurrence(vocab: &TripVocabulary, mode: Normalization) -> CooccurrenceTable {
    let n = vocab.len();
    let mut raw = vec![0u32; n * n];
    for i in 0..n {
        for j in 0..n {
            raw[i * n + j] = vocab.cooccurrence(i, j);
        }
    }
    CooccurrenceTable::from_counts(n, raw, mode)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainLimits {
    pub p_min: f64,
    pub max_candidates: usize,
    pub empty_score: f64,
}

impl Default for ChainLimits {
    fn default() -> Self {
        Self {
            p_min: 0.2,
            max_candidates: 12,
            empty_score: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainScore {
    /// Selected trip labels, ascending.
    pub labels: Vec<usize>,
    pub score: f64,
    pub mean_probability: f64,
    pub mean_pair: f64,
}

impl ChainScore {
    fn evaluate(labels: Vec<usize>, probs: &[f64], table: &CooccurrenceTable, lambda: f64, empty: f64) -> Self {
        if labels.is_empty() {
            return Self {
                labels,
                score: empty,
                mean_probability: 0.0,
                mean_pair: 0.0,
            };
        }
        let mean_probability = labels.iter().map(|&l| probs[l]).sum::<f64>() / labels.len() as f64;
        let mut pair_sum = 0.0;
        for (a, &i) in labels.iter().enumerate() {
            for &j in &labels[a + 1..] {
                pair_sum += table.get(i, j);
            }
        }
        let pairs = labels.len() * (labels.len() - 1) / 2;
        let mean_pair = if pairs == 0 { 0.0 } else { pair_sum / pairs as f64 };
        Self {
            labels,
            score: mean_probability + lambda * mean_pair,
            mean_probability,
            mean_pair,
        }
    }
}

/// Candidate labels: p >= p_min, best `max_candidates` by probability
/// (ties to the smaller label), returned ascending.
pub fn candidates(probs: &[f64], limits: &ChainLimits) -> Vec<usize> {
    let mut c: Vec<usize> = (0..probs.len()).filter(|&l| probs[l] >= limits.p_min).collect();
    c.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    c.truncate(limits.max_candidates);
    c.sort_unstable();
    c
}

/// Highest-scoring subset of the candidate trips. Among subsets within
/// `SCORE_EPS` of the best score the smallest wins, then the
/// lexicographically smallest label list.
pub fn assemble_chain(
    probs: &[f64],
    table: &CooccurrenceTable,
    lambda: f64,
    limits: &ChainLimits,
) -> ChainScore {
    let cand = candidates(probs, limits);
    let m = cand.len();
    let size = 1usize << m;
    // per-mask sums of probabilities and pair weights, built from the mask
    // without its lowest bit
    let mut psum = vec![0.0; size];
    let mut fsum = vec![0.0; size];
    let mut scores = vec![limits.empty_score; size];
    let mut best = limits.empty_score;
    for mask in 1..size {
        let low = mask.trailing_zeros() as usize;
        let rest = mask & (mask - 1);
        psum[mask] = psum[rest] + probs[cand[low]];
        let mut add = 0.0;
        let mut r = rest;
        while r != 0 {
            let j = r.trailing_zeros() as usize;
            add += table.get(cand[low], cand[j]);
            r &= r - 1;
        }
        fsum[mask] = fsum[rest] + add;
        let k = mask.count_ones() as usize;
        let pairs = k * (k - 1) / 2;
        let pair_term = if pairs == 0 { 0.0 } else { fsum[mask] / pairs as f64 };
        scores[mask] = psum[mask] / k as f64 + lambda * pair_term;
        if scores[mask] > best {
            best = scores[mask];
        }
    }
    let labels_of = |mask: usize| -> Vec<usize> {
        (0..m).filter(|&b| mask >> b & 1 == 1).map(|b| cand[b]).collect()
    };
    let mut chosen: Option<(usize, Vec<usize>)> = None;
    for (mask, &s) in scores.iter().enumerate() {
        if s < best - SCORE_EPS {
            continue;
        }
        let labels = labels_of(mask);
        let better = match &chosen {
            None => true,
            Some((_, cur)) => (labels.len(), &labels) < (cur.len(), cur),
        };
        if better {
            chosen = Some((mask, labels));
        }
    }
    let (_, labels) = chosen.expect("the empty set is always scored");
    ChainScore::evaluate(labels, probs, table, lambda, limits.empty_score)
}

/// Ablation path: every trip with probability strictly above one half.
pub fn disable_correlation_predict(probs: &[f64]) -> Vec<usize> {
    (0..probs.len()).filter(|&l| probs[l] > 0.5).collect()
}
