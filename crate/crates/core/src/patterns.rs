//! Sampled similarity sets for weekly, workday and recency patterns, with
//! one-sided Welch tests against the unconstrained baseline set.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifiers::forest::mix_seed;
use crate::error::{Error, Result};
use crate::model::UserHistory;
use crate::similarity::chain_similarity;
use crate::stats::{summarize, welch_t_test, Summary, TTestResult};

/// Day-pair constraint of a sample set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairConstraint {
    /// Any two distinct days (A0).
    Any,
    /// Both days on weekday 1..=7 (A1..A7).
    Weekday(u8),
    /// Both workdays.
    Workday,
    /// Both holidays.
    Holiday,
    /// Days exactly `d` apart.
    Gap(usize),
}

impl PairConstraint {
    pub fn label(&self) -> String {
        match self {
            Self::Any => "A0".into(),
            Self::Weekday(w) => format!("A{w}"),
            Self::Workday => "W".into(),
            Self::Holiday => "H".into(),
            Self::Gap(d) => format!("gap({d})"),
        }
    }

    pub fn admits(&self, h: &UserHistory, i: usize, j: usize) -> bool {
        let (a, b) = (h.calendar.day(i), h.calendar.day(j));
        i != j
            && match *self {
                Self::Any => true,
                Self::Weekday(w) => a.weekday == w && b.weekday == w,
                Self::Workday => a.is_workday && b.is_workday,
                Self::Holiday => !a.is_workday && !b.is_workday,
                Self::Gap(d) => i.abs_diff(j) == d,
            }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSampleSet {
    pub label: String,
    pub constraint: PairConstraint,
    pub pairs: Vec<(usize, usize, usize)>,
    pub scores: Vec<f64>,
    pub count: usize,
    pub seed: u64,
}

/// Per-user candidate days (or gap start days) for a constraint.
fn eligible(h: &UserHistory, c: PairConstraint, exclude_empty: bool) -> (Vec<usize>, u128) {
    let ok = |d: usize| !exclude_empty || !h.chains[d].is_empty();
    match c {
        PairConstraint::Gap(g) => {
            let starts: Vec<usize> = (0..h.len().saturating_sub(g))
                .filter(|&i| g > 0 && ok(i) && ok(i + g))
                .collect();
            let n = starts.len() as u128;
            (starts, n)
        }
        _ => {
            let days: Vec<usize> = (0..h.len())
                .filter(|&d| {
                    let day = h.calendar.day(d);
                    ok(d)
                        && match c {
                            PairConstraint::Weekday(w) => day.weekday == w,
                            PairConstraint::Workday => day.is_workday,
                            PairConstraint::Holiday => !day.is_workday,
                            _ => true,
                        }
                })
                .collect();
            let m = days.len() as u128;
            let pairs = if m < 2 { 0 } else { m * (m - 1) / 2 };
            (days, pairs)
        }
    }
}

/// `count` uniformly drawn (user, day, day) triples satisfying `constraint`,
/// each scored by chain similarity. A user is picked with probability
/// proportional to its number of admissible unordered pairs.
pub fn sample_pairs(
    histories: &[UserHistory],
    constraint: PairConstraint,
    count: usize,
    seed: u64,
    exclude_empty: bool,
) -> Result<PairSampleSet> {
    if count < 2 {
        return Err(Error::Input("pair sample needs count >= 2".into()));
    }
    let per_user: Vec<(Vec<usize>, u128)> = histories
        .iter()
        .map(|h| eligible(h, constraint, exclude_empty))
        .collect();
    let total: u128 = per_user.iter().map(|u| u.1).sum();
    if total == 0 {
        return Err(Error::Input(format!(
            "no user has a day pair satisfying {}",
            constraint.label()
        )));
    }
    let cumulative: Vec<u128> = per_user
        .iter()
        .scan(0u128, |acc, u| {
            *acc += u.1;
            Some(*acc)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(count);
    let mut scores = Vec::with_capacity(count);
    for _ in 0..count {
        let r = rng.random_range(0..total);
        let user = cumulative.partition_point(|&c| c <= r);
        let (days, _) = &per_user[user];
        let (i, j) = match constraint {
            PairConstraint::Gap(g) => {
                let i = days[rng.random_range(0..days.len())];
                (i, i + g)
            }
            _ => {
                let a = rng.random_range(0..days.len());
                let mut b = rng.random_range(0..days.len() - 1);
                if b >= a {
                    b += 1;
                }
                (days[a], days[b])
            }
        };
        let h = &histories[user];
        scores.push(chain_similarity(&h.chains[i], &h.chains[j]));
        pairs.push((user, i, j));
    }
    Ok(PairSampleSet {
        label: constraint.label(),
        constraint,
        pairs,
        scores,
        count,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternConfig {
    pub pairs: usize,
    pub seed: u64,
    pub gaps: Vec<usize>,
    pub exclude_empty: bool,
}

impl Default for PatternConfig {
    fn default() -> Self {
        Self {
            pairs: 20_000,
            seed: 0,
            gaps: default_gaps(),
            exclude_empty: false,
        }
    }
}

/// 1, 20, 40, ..., 200.
pub fn default_gaps() -> Vec<usize> {
    std::iter::once(1).chain((20..=200).step_by(20)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetSummary {
    pub label: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl SetSummary {
    fn of(set: &PairSampleSet) -> Self {
        let Summary { mean, std, n } = summarize(&set.scores);
        Self {
            label: set.label.clone(),
            mean,
            std,
            n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternTest {
    /// e.g. "A1 vs A0".
    pub name: String,
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub gap: usize,
    pub mean_similarity: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternReport {
    pub sets: Vec<SetSummary>,
    pub tests: Vec<PatternTest>,
    pub gap_curve: Vec<GapPoint>,
    pub config: PatternConfig,
}

impl PatternReport {
    pub fn rejections(&self, level: f64) -> usize {
        self.tests.iter().filter(|t| t.p < level).count()
    }

    pub fn write_gap_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["gap", "mean_similarity"])?;
        for g in &self.gap_curve {
            w.write_record([g.gap.to_string(), g.mean_similarity.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<gap csv>", e))?;
        Ok(())
    }
}

/// The nine tests (A1..A7, W, H against A0) plus the gap curve.
pub fn verify_patterns(histories: &[UserHistory], config: &PatternConfig) -> Result<PatternReport> {
    if histories.is_empty() {
        return Err(Error::Input("pattern verification needs at least one user".into()));
    }
    let mut constraints = vec![PairConstraint::Any];
    constraints.extend((1..=7).map(PairConstraint::Weekday));
    constraints.push(PairConstraint::Workday);
    constraints.push(PairConstraint::Holiday);
    let sets = constraints
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            sample_pairs(
                histories,
                c,
                config.pairs,
                mix_seed(config.seed, k as u64),
                config.exclude_empty,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let baseline = &sets[0];
    let tests = sets[1..]
        .iter()
        .map(|s| {
            let TTestResult { t, df, p } = welch_t_test(&s.scores, &baseline.scores)?;
            Ok(PatternTest {
                name: format!("{} vs {}", s.label, baseline.label),
                t,
                df,
                p,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    // gaps no history is long enough for are left off the curve
    let gap_curve = config
        .gaps
        .iter()
        .enumerate()
        .filter(|(_, &g)| histories.iter().any(|h| h.len() > g))
        .map(|(k, &g)| {
            let s = sample_pairs(
                histories,
                PairConstraint::Gap(g),
                config.pairs,
                mix_seed(config.seed, 1000 + k as u64),
                config.exclude_empty,
            )?;
            Ok(GapPoint {
                gap: g,
                mean_similarity: summarize(&s.scores).mean,
                n: s.scores.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PatternReport {
        sets: sets.iter().map(SetSummary::of).collect(),
        tests,
        gap_curve,
        config: config.clone(),
    })
}
