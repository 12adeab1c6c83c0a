//! Chain accuracy, token edit distance, and method comparison reports.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::calibration::{grid_search, CalibrationResult, GridSpec};
use crate::classifiers::forest::mix_seed;
use crate::classifiers::{baseline_last_week, baseline_ngram, baseline_random_guess};
use crate::error::{Error, Result};
use crate::model::{TripChain, TripVocabulary, UserHistory};
use crate::pipeline::{par_map, predict_days, Ablation, GraphCache, ModelSettings, Pipeline};
use crate::stats::summarize;

/// 2|A ∩ B| / (|A| + |B|), one when both chains are empty.
pub fn accuracy(pred: &TripChain, truth: &TripChain) -> f64 {
    let total = pred.len() + truth.len();
    if total == 0 {
        return 1.0;
    }
    2.0 * pred.intersection_len(truth) as f64 / total as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Hour(u8),
    Station(u32),
}

/// Trips in (hour, origin, destination) order, three tokens each.
pub fn chain_tokens(chain: &TripChain) -> Vec<Token> {
    chain
        .iter()
        .flat_map(|t| {
            [
                Token::Hour(t.hour),
                Token::Station(t.origin.0),
                Token::Station(t.destination.0),
            ]
        })
        .collect()
}

/// Unit-cost Levenshtein distance.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + (x != y) as usize;
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn edit_distance(pred: &TripChain, truth: &TripChain) -> usize {
    levenshtein(&chain_tokens(pred), &chain_tokens(truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayScore {
    pub accuracy: f64,
    pub edit_distance: usize,
}

pub fn score_day(pred: &TripChain, truth: &TripChain) -> DayScore {
    DayScore {
        accuracy: accuracy(pred, truth),
        edit_distance: edit_distance(pred, truth),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Aggregate {
    pub fn of(xs: &[f64]) -> Self {
        let s = summarize(xs);
        Self {
            mean: s.mean,
            stderr: if s.n == 0 { f64::NAN } else { s.std / (s.n as f64).sqrt() },
            n: s.n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonEvaluation {
    pub days: Vec<DayScore>,
    pub accuracy: Aggregate,
    pub edit_distance: Aggregate,
}

pub fn evaluate_horizon(predictions: &[TripChain], truths: &[TripChain]) -> Result<HorizonEvaluation> {
    if predictions.len() != truths.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} true days",
            predictions.len(),
            truths.len()
        )));
    }
    let days: Vec<DayScore> = predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| score_day(p, t))
        .collect();
    let acc: Vec<f64> = days.iter().map(|d| d.accuracy).collect();
    let ed: Vec<f64> = days.iter().map(|d| d.edit_distance as f64).collect();
    Ok(HorizonEvaluation {
        accuracy: Aggregate::of(&acc),
        edit_distance: Aggregate::of(&ed),
        days,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    RandomGuess,
    LastWeek,
    Ngram,
    Lp,
    Embed,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::RandomGuess,
        Method::LastWeek,
        Method::Ngram,
        Method::Lp,
        Method::Embed,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::RandomGuess => "random_guess",
            Self::LastWeek => "last_week",
            Self::Ngram => "ngram",
            Self::Lp => "lp",
            Self::Embed => "embed",
        }
    }

    pub fn pipeline(&self) -> Option<Pipeline> {
        match self {
            Self::Lp => Some(Pipeline::Lp),
            Self::Embed => Some(Pipeline::Embed),
            _ => None,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                format!("unknown method '{s}' (random_guess, last_week, ngram, lp, embed)")
            })
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub grid: GridSpec,
    pub settings: ModelSettings,
    pub ablation: Ablation,
    pub validation_days: usize,
    pub ngram_order: usize,
    pub seed: u64,
    pub workers: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            settings: ModelSettings::default(),
            ablation: Ablation::none(),
            validation_days: 30,
            ngram_order: 2,
            seed: 0,
            workers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserMethodScore {
    pub method: Method,
    pub horizon: usize,
    pub accuracy: f64,
    pub edit_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserEvaluation {
    pub user_id: String,
    pub scores: Vec<UserMethodScore>,
    pub calibration: Vec<CalibrationSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub pipeline: Pipeline,
    pub best: crate::pipeline::HyperParams,
    pub validation_accuracy: f64,
    pub validation_edit_distance: f64,
}

impl From<&CalibrationResult> for CalibrationSummary {
    fn from(c: &CalibrationResult) -> Self {
        Self {
            pipeline: c.pipeline,
            best: c.best,
            validation_accuracy: c.best_accuracy,
            validation_edit_distance: c.best_edit_distance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub horizon: usize,
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub normalization: String,
    pub ablation: String,
    pub rows: Vec<ReportRow>,
    pub users: Vec<UserEvaluation>,
}

impl Report {
    pub fn row(&self, method: Method, horizon: usize, metric: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.horizon == horizon && r.metric == metric)
    }

    pub fn mean_accuracy(&self, method: Method, horizon: usize) -> Option<f64> {
        self.row(method, horizon, "accuracy").map(|r| r.mean)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "horizon", "metric", "mean", "stderr", "n"])?;
        for r in &self.rows {
            w.write_record([
                r.method.name().to_string(),
                r.horizon.to_string(),
                r.metric.clone(),
                r.mean.to_string(),
                r.stderr.to_string(),
                r.n.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<report csv>", e))?;
        Ok(())
    }

    /// One row per user, method and horizon.
    pub fn write_user_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user_id", "method", "horizon", "accuracy", "edit_distance"])?;
        for u in &self.users {
            for s in &u.scores {
                w.write_record([
                    u.user_id.clone(),
                    s.method.name().to_string(),
                    s.horizon.to_string(),
                    s.accuracy.to_string(),
                    s.edit_distance.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<user csv>", e))?;
        Ok(())
    }
}

/// Stable 64-bit hash of a user id, for per-user seeds.
pub fn user_seed(seed: u64, user_id: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in user_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix_seed(seed, h)
}

/// Calibrate, predict every horizon with every method, and score one user.
pub fn evaluate_user(
    history: &UserHistory,
    methods: &[Method],
    horizons: &[usize],
    config: &EvalConfig,
    cache: &GraphCache,
) -> Result<UserEvaluation> {
    let known = history.split.known();
    let n_known = known.end;
    let longest = horizons.iter().copied().max().unwrap_or(0);
    if n_known + longest > history.len() {
        return Err(Error::Input(format!(
            "user {}: {n_known} known days plus horizon {longest} exceed {} days",
            history.user_id,
            history.len()
        )));
    }
    let known_chains = &history.chains[..n_known];
    let mut scores = Vec::new();
    let mut calibration = Vec::new();
    for &method in methods {
        let horizon_preds: Vec<(usize, Vec<TripChain>)> = match method {
            Method::Lp | Method::Embed => {
                let pipeline = method.pipeline().unwrap();
                let cal = grid_search(
                    known_chains,
                    config.validation_days,
                    &config.grid,
                    pipeline,
                    config.ablation,
                    &config.settings,
                    cache,
                )?;
                calibration.push(CalibrationSummary::from(&cal));
                horizons
                    .iter()
                    .map(|&h| {
                        let preds = predict_days(known_chains, n_known + h, &cal.best, &config.settings, cache)?;
                        Ok((h, preds.into_iter().map(|p| p.chain).collect()))
                    })
                    .collect::<Result<_>>()?
            }
            Method::RandomGuess => {
                let vocab = TripVocabulary::from_chains(known_chains);
                let seed = user_seed(config.seed, &history.user_id);
                horizons
                    .iter()
                    .map(|&h| Ok((h, baseline_random_guess(&vocab, n_known, h, seed)?)))
                    .collect::<Result<_>>()?
            }
            Method::LastWeek => horizons
                .iter()
                .map(|&h| Ok((h, baseline_last_week(known_chains, h)?)))
                .collect::<Result<_>>()?,
            Method::Ngram => horizons
                .iter()
                .map(|&h| Ok((h, baseline_ngram(known_chains, h, config.ngram_order)?)))
                .collect::<Result<_>>()?,
        };
        for (h, preds) in horizon_preds {
            let eval = evaluate_horizon(&preds, &history.chains[n_known..n_known + h])?;
            scores.push(UserMethodScore {
                method,
                horizon: h,
                accuracy: eval.accuracy.mean,
                edit_distance: eval.edit_distance.mean,
            });
        }
    }
    Ok(UserEvaluation {
        user_id: history.user_id.clone(),
        scores,
        calibration,
    })
}

/// Two-stage aggregation: days within a user, then users with equal weight.
pub fn compare_methods(
    histories: &[UserHistory],
    methods: &[Method],
    horizons: &[usize],
    config: &EvalConfig,
) -> Result<Report> {
    let mut caches: Vec<Arc<GraphCache>> = Vec::new();
    let mut assigned = Vec::with_capacity(histories.len());
    for h in histories {
        let idx = match caches.iter().position(|c| c.serves(&h.calendar)) {
            Some(i) => i,
            None => {
                caches.push(Arc::new(GraphCache::new(h.calendar.clone())));
                caches.len() - 1
            }
        };
        assigned.push(idx);
    }
    let jobs: Vec<usize> = (0..histories.len()).collect();
    let users = par_map(&jobs, config.workers, |&i| {
        evaluate_user(&histories[i], methods, horizons, config, &caches[assigned[i]])
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for &method in methods {
        for &h in horizons {
            for metric in ["accuracy", "edit_distance"] {
                let xs: Vec<f64> = users
                    .iter()
                    .filter_map(|u| {
                        u.scores
                            .iter()
                            .find(|s| s.method == method && s.horizon == h)
                            .map(|s| if metric == "accuracy" { s.accuracy } else { s.edit_distance })
                    })
                    .collect();
                let agg = Aggregate::of(&xs);
                rows.push(ReportRow {
                    method,
                    horizon: h,
                    metric: metric.to_string(),
                    mean: agg.mean,
                    stderr: agg.stderr,
                    n: agg.n,
                });
            }
        }
    }
    Ok(Report {
        normalization: config.settings.normalization.to_string(),
        ablation: config.ablation.names(),
        rows,
        users,
    })
}
