//! Per-user grid search over a train / validation split.

use std::io::Write;
use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::correlation::normalize_cooccurrence;
use crate::error::{Error, Result};
use crate::evaluation::score_day;
use crate::model::{TripChain, TripVocabulary};
use crate::pipeline::{
    assemble_predictions, trip_probabilities, Ablation, GraphCache, HyperParams, ModelSettings,
    Pipeline,
};
use crate::similarity::SimilarityParams;

/// Ties in validation accuracy closer than this fall through to edit distance.
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub a3: Vec<f64>,
    #[serde(rename = "K")]
    pub neighbors: Vec<usize>,
    pub alpha: Vec<f64>,
    #[serde(rename = "k")]
    pub embed_dim: Vec<usize>,
    pub lambda: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            a1: vec![0.1, 1.0, 10.0],
            a2: vec![0.1, 1.0, 10.0],
            a3: vec![0.1, 1.0, 10.0],
            neighbors: vec![1, 2, 4],
            alpha: vec![0.1, 0.2],
            embed_dim: vec![8, 16, 32],
            lambda: vec![0.5, 1.0, 2.0],
        }
    }
}

fn sorted_f(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn sorted_u(v: &[usize]) -> Vec<usize> {
    let mut v = v.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

impl GridSpec {
    /// One-point grid.
    pub fn single(p: &HyperParams) -> Self {
        Self {
            a1: vec![p.similarity.a1],
            a2: vec![p.similarity.a2],
            a3: vec![p.similarity.a3],
            neighbors: vec![p.neighbors],
            alpha: vec![p.alpha],
            embed_dim: vec![p.embed_dim],
            lambda: vec![p.lambda],
        }
    }

    pub fn validate(&self, pipeline: Pipeline) -> Result<()> {
        let empty = |name: &str, len: usize| -> Result<()> {
            if len == 0 {
                Err(Error::Input(format!("grid list '{name}' is empty")))
            } else {
                Ok(())
            }
        };
        empty("a1", self.a1.len())?;
        empty("a2", self.a2.len())?;
        empty("a3", self.a3.len())?;
        empty("lambda", self.lambda.len())?;
        match pipeline {
            Pipeline::Lp => {
                empty("K", self.neighbors.len())?;
                empty("alpha", self.alpha.len())?;
            }
            Pipeline::Embed => empty("k", self.embed_dim.len())?,
        }
        for &v in self.a1.iter().chain(&self.a2).chain(&self.a3) {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Input(format!("grid similarity weight {v} must be >= 0")));
            }
        }
        for &v in &self.lambda {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Input(format!("grid lambda {v} must be >= 0")));
            }
        }
        Ok(())
    }

    /// Every configuration in lexicographic (a1, a2, a3, K, alpha, k, lambda)
    /// order. Parameters a pipeline ignores are pinned to their first value;
    /// ablated weights collapse to zero and a disabled correlation module
    /// collapses the lambda list.
    pub fn configs(&self, pipeline: Pipeline, ablation: Ablation) -> Vec<HyperParams> {
        let zero_or = |drop: bool, v: &[f64]| if drop { vec![0.0] } else { sorted_f(v) };
        let a1 = zero_or(ablation.drop_weekday, &self.a1);
        let a2 = zero_or(ablation.drop_workday, &self.a2);
        let a3 = zero_or(ablation.drop_recency, &self.a3);
        let (ks, alphas, dims) = match pipeline {
            Pipeline::Lp => (
                sorted_u(&self.neighbors),
                sorted_f(&self.alpha),
                vec![self.embed_dim.first().copied().unwrap_or(16)],
            ),
            Pipeline::Embed => (
                vec![self.neighbors.first().copied().unwrap_or(2)],
                vec![self.alpha.first().copied().unwrap_or(0.2)],
                sorted_u(&self.embed_dim),
            ),
        };
        let lambdas = if ablation.disable_correlation {
            vec![sorted_f(&self.lambda)[0]]
        } else {
            sorted_f(&self.lambda)
        };
        let mut out = Vec::new();
        for &x1 in &a1 {
            for &x2 in &a2 {
                for &x3 in &a3 {
                    for &k in &ks {
                        for &alpha in &alphas {
                            for &dim in &dims {
                                for &lambda in &lambdas {
                                    out.push(HyperParams {
                                        similarity: SimilarityParams { a1: x1, a2: x2, a3: x3 },
                                        pipeline,
                                        neighbors: k,
                                        alpha,
                                        embed_dim: dim,
                                        lambda,
                                        ablation,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Train range and validation suffix for `n` known days.
pub fn split_history(n: usize, validation_days: usize) -> Result<(Range<usize>, Range<usize>)> {
    if n <= validation_days {
        return Err(Error::Input(format!(
            "history of {n} days is too short for {validation_days} validation days"
        )));
    }
    let cut = n - validation_days;
    Ok((0..cut, cut..n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub params: HyperParams,
    pub accuracy: f64,
    pub edit_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub pipeline: Pipeline,
    pub best: HyperParams,
    pub best_accuracy: f64,
    pub best_edit_distance: f64,
    pub trace: Vec<TraceRow>,
}

impl CalibrationResult {
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "pipeline", "a1", "a2", "a3", "K", "alpha", "k", "lambda", "accuracy", "edit_distance",
        ])?;
        for r in &self.trace {
            let p = &r.params;
            let (k_nn, alpha, dim) = match p.pipeline {
                Pipeline::Lp => (p.neighbors.to_string(), p.alpha.to_string(), String::new()),
                Pipeline::Embed => (String::new(), String::new(), p.embed_dim.to_string()),
            };
            w.write_record([
                p.pipeline.to_string(),
                p.similarity.a1.to_string(),
                p.similarity.a2.to_string(),
                p.similarity.a3.to_string(),
                k_nn,
                alpha,
                dim,
                p.lambda.to_string(),
                r.accuracy.to_string(),
                r.edit_distance.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<trace csv>", e))?;
        Ok(())
    }
}

/// Validation accuracy and edit distance of every configuration in
/// `configs`, which must share one pipeline. Probabilities are computed once
/// per classifier setting and reused across lambda values.
pub fn evaluate_configs(
    known: &[TripChain],
    validation_days: usize,
    configs: &[HyperParams],
    settings: &ModelSettings,
    cache: &GraphCache,
) -> Result<Vec<TraceRow>> {
    let (train, valid) = split_history(known.len(), validation_days)?;
    let train_chains = &known[train];
    let truths = &known[valid];
    let vocab = Arc::new(TripVocabulary::from_chains(train_chains));
    let co = normalize_cooccurrence(&vocab, settings.normalization);

    let mut rows = Vec::with_capacity(configs.len());
    let mut i = 0;
    while i < configs.len() {
        // consecutive configs differing only in lambda share probabilities
        let base = configs[i];
        let mut j = i + 1;
        while j < configs.len() && same_classifier(&configs[j], &base) {
            j += 1;
        }
        let probs = trip_probabilities(train_chains, &vocab, known.len(), &base, settings, cache)?;
        for p in &configs[i..j] {
            let preds = assemble_predictions(
                &probs,
                &co,
                p.lambda,
                p.ablation.disable_correlation,
                &settings.limits,
            );
            let (mut acc, mut ed) = (0.0, 0.0);
            for (pred, truth) in preds.iter().zip(truths) {
                let s = score_day(&pred.chain, truth);
                acc += s.accuracy;
                ed += s.edit_distance as f64;
            }
            let n = truths.len() as f64;
            rows.push(TraceRow {
                params: *p,
                accuracy: acc / n,
                edit_distance: ed / n,
            });
        }
        i = j;
    }
    Ok(rows)
}

fn same_classifier(a: &HyperParams, b: &HyperParams) -> bool {
    HyperParams { lambda: 0.0, ..*a } == HyperParams { lambda: 0.0, ..*b }
}

/// Highest accuracy; ties to lower edit distance, then to trace order.
pub fn select_best(trace: &[TraceRow]) -> Option<&TraceRow> {
    let mut best: Option<&TraceRow> = None;
    for r in trace {
        let better = match best {
            None => true,
            Some(b) => {
                r.accuracy > b.accuracy + TIE_EPS
                    || ((r.accuracy - b.accuracy).abs() <= TIE_EPS
                        && r.edit_distance < b.edit_distance - TIE_EPS)
            }
        };
        if better {
            best = Some(r);
        }
    }
    best
}

/// Grid search on `known` days with the last `validation_days` held out.
pub fn grid_search(
    known: &[TripChain],
    validation_days: usize,
    grid: &GridSpec,
    pipeline: Pipeline,
    ablation: Ablation,
    settings: &ModelSettings,
    cache: &GraphCache,
) -> Result<CalibrationResult> {
    grid.validate(pipeline)?;
    let configs = grid.configs(pipeline, ablation);
    let trace = evaluate_configs(known, validation_days, &configs, settings, cache)?;
    let best = *select_best(&trace).ok_or_else(|| Error::Input("empty grid".into()))?;
    Ok(CalibrationResult {
        pipeline,
        best: best.params,
        best_accuracy: best.accuracy,
        best_edit_distance: best.edit_distance,
        trace,
    })
}
