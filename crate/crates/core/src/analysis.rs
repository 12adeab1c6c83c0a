//! Traveller regimes from calibrated weights, hyperparameter distributions,
//! and day-by-day chain similarity matrices.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::UserHistory;
use crate::similarity::{chain_similarity, write_matrix_csv, SimilarityParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    RepeatDominated,
    Balanced,
    EvolveDominated,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Self::RepeatDominated => "repeat-dominated",
            Self::Balanced => "balanced",
            Self::EvolveDominated => "evolve-dominated",
        }
    }
}

/// Class by the ratio a2 / a3: above one, exactly one, below one.
pub fn classify_regime(p: &SimilarityParams) -> Regime {
    match p.a2.partial_cmp(&p.a3) {
        Some(std::cmp::Ordering::Greater) => Regime::RepeatDominated,
        Some(std::cmp::Ordering::Less) => Regime::EvolveDominated,
        _ => Regime::Balanced,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub parameter: String,
    pub value: f64,
    pub users: usize,
    pub percent: f64,
}

/// Share of users at each value of a1, a2 and a3.
pub fn distribution_table(params: &[SimilarityParams]) -> Vec<DistributionRow> {
    let mut rows = Vec::new();
    let n = params.len();
    for (name, get) in [
        ("a1", (|p: &SimilarityParams| p.a1) as fn(&SimilarityParams) -> f64),
        ("a2", |p| p.a2),
        ("a3", |p| p.a3),
    ] {
        let mut counts: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
        for p in params {
            let v = get(p);
            // order by value; total_cmp-compatible key for nonnegative floats
            counts.entry(v.to_bits()).or_insert((v, 0)).1 += 1;
        }
        for (_, (value, users)) in counts {
            rows.push(DistributionRow {
                parameter: name.to_string(),
                value,
                users,
                percent: 100.0 * users as f64 / n as f64,
            });
        }
    }
    rows
}

pub fn write_distribution_csv<W: Write>(out: W, rows: &[DistributionRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["parameter", "value", "users", "percent"])?;
    for r in rows {
        w.write_record([
            r.parameter.clone(),
            r.value.to_string(),
            r.users.to_string(),
            r.percent.to_string(),
        ])?;
    }
    w.flush().map_err(|e| crate::error::Error::io("<distribution csv>", e))?;
    Ok(())
}

/// Chain similarity between every two days of a history, row-major.
pub fn chain_similarity_matrix(history: &UserHistory) -> Vec<f64> {
    let n = history.len();
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
        for j in i + 1..n {
            let s = chain_similarity(&history.chains[i], &history.chains[j]);
            m[i * n + j] = s;
            m[j * n + i] = s;
        }
    }
    m
}

pub fn write_similarity_matrix<W: Write>(out: W, n: usize, matrix: &[f64]) -> Result<()> {
    write_matrix_csv(out, n, matrix)
}

/// Mean of the off-diagonal band at distance `lag`.
pub fn lag_band_mean(n: usize, matrix: &[f64], lag: usize) -> f64 {
    if lag == 0 || lag >= n {
        return f64::NAN;
    }
    let sum: f64 = (0..n - lag).map(|i| matrix[i * n + i + lag]).sum();
    sum / (n - lag) as f64
}
