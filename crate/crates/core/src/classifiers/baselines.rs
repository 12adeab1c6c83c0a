//! Reference predictors: occurrence-frequency coin flips, last-week tiling,
//! and a greedy n-gram over the day token stream.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{TripChain, TripVocabulary};

/// Most trips a generated n-gram day may hold.
pub const NGRAM_TRIP_CAP: usize = 10;

/// Include every trip on every horizon day with probability n1 / n_train.
pub fn baseline_random_guess(
    vocab: &TripVocabulary,
    n_train: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<TripChain>> {
    if n_train == 0 {
        return Err(Error::Input("random guess needs at least one training day".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probs: Vec<f64> = (0..vocab.len())
        .map(|l| (vocab.occurrences(l) as f64 / n_train as f64).min(1.0))
        .collect();
    Ok((0..horizon)
        .map(|_| {
            let picked: Vec<usize> = probs
                .iter()
                .enumerate()
                .filter(|&(_, &p)| rng.random::<f64>() < p)
                .map(|(l, _)| l)
                .collect();
            vocab.chain_of(picked)
        })
        .collect())
}

/// Tile the last seven known chains across the horizon.
pub fn baseline_last_week(known: &[TripChain], horizon: usize) -> Result<Vec<TripChain>> {
    let n = known.len();
    if n < 7 {
        return Err(Error::Input(format!(
            "last-week baseline needs 7 known days, got {n}"
        )));
    }
    Ok((0..horizon).map(|h| known[n - 7 + h % 7].clone()).collect())
}

/// Greedy Markov chain of the given order over trips plus day delimiters.
///
/// Days are serialised as START, trips in sorted order, END and
/// concatenated, so contexts may span day boundaries. Add-one smoothing
/// does not change the argmax, so prediction picks the most frequent
/// continuation; ties go to END, then to the smallest trip label. A trip
/// is never emitted twice in one day.
pub fn baseline_ngram(known: &[TripChain], horizon: usize, order: usize) -> Result<Vec<TripChain>> {
    if order == 0 {
        return Err(Error::Input("n-gram order must be >= 1".into()));
    }
    let vocab = TripVocabulary::from_chains(known);
    let t = vocab.len() as u32;
    let (start, end) = (t, t + 1);

    let mut stream: Vec<u32> = Vec::new();
    for chain in known {
        stream.push(start);
        stream.extend(chain.iter().map(|trip| vocab.label_of(trip).unwrap() as u32));
        stream.push(end);
    }
    let mut counts: HashMap<&[u32], HashMap<u32, u32>> = HashMap::new();
    for w in order..stream.len() {
        *counts
            .entry(&stream[w - order..w])
            .or_default()
            .entry(stream[w])
            .or_default() += 1;
    }

    let mut history: Vec<u32> = stream.clone();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        history.push(start);
        let mut used = vec![false; t as usize];
        let mut labels = Vec::new();
        loop {
            if labels.len() >= NGRAM_TRIP_CAP {
                break;
            }
            let ctx_start = history.len().saturating_sub(order);
            let next = counts.get(&history[ctx_start..]).and_then(|c| {
                let mut best: Option<(u32, u32)> = None;
                for (&tok, &cnt) in c {
                    if tok == start || (tok < t && used[tok as usize]) {
                        continue;
                    }
                    let rank = |tok: u32| if tok == end { 0 } else { tok + 1 };
                    let better = match best {
                        None => true,
                        Some((bt, bc)) => cnt > bc || (cnt == bc && rank(tok) < rank(bt)),
                    };
                    if better {
                        best = Some((tok, cnt));
                    }
                }
                best.map(|b| b.0)
            });
            match next {
                Some(tok) if tok < t => {
                    used[tok as usize] = true;
                    labels.push(tok as usize);
                    history.push(tok);
                }
                _ => break,
            }
        }
        history.push(end);
        out.push(vocab.chain_of(labels));
    }
    Ok(out)
}
