//! End-to-end prediction for one user: day graph, per-trip probabilities,
//! chain assembly.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::forest::mix_seed;
use crate::classifiers::{
    forest_fit, forest_predict, propagate, EigenOrder, ForestParams, LabelMatrix,
    LaplacianSpectrum, NeighborTable, PropagationSettings,
};
use crate::correlation::{
    assemble_chain, disable_correlation_predict, normalize_cooccurrence, ChainLimits, ChainScore,
    CooccurrenceTable, Normalization,
};
use crate::error::{Error, Result};
use crate::model::{Calendar, Trip, TripChain, TripVocabulary};
use crate::similarity::{build_graph, DayGraph, SimilarityParams};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    /// Label propagation.
    #[default]
    Lp,
    /// Spectral embedding followed by a random forest per trip.
    Embed,
}

impl std::str::FromStr for Pipeline {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "lp" => Ok(Self::Lp),
            "embed" => Ok(Self::Embed),
            other => Err(format!("unknown pipeline '{other}' (lp | embed)")),
        }
    }
}

impl std::fmt::Display for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Lp => "lp",
            Self::Embed => "embed",
        })
    }
}

/// Feature and module switches for ablation runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ablation {
    /// Force a1 = 0 (same weekday).
    pub drop_weekday: bool,
    /// Force a2 = 0 (same workday flag).
    pub drop_workday: bool,
    /// Force a3 = 0 (time gap).
    pub drop_recency: bool,
    /// Replace chain assembly by the p > 0.5 rule.
    pub disable_correlation: bool,
}

impl Ablation {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn apply(&self, p: SimilarityParams) -> SimilarityParams {
        SimilarityParams {
            a1: if self.drop_weekday { 0.0 } else { p.a1 },
            a2: if self.drop_workday { 0.0 } else { p.a2 },
            a3: if self.drop_recency { 0.0 } else { p.a3 },
        }
    }

    pub fn is_none(&self) -> bool {
        *self == Self::default()
    }

    /// Comma-separated names, e.g. "f2,corr"; empty when nothing is ablated.
    pub fn names(&self) -> String {
        let mut v = Vec::new();
        if self.drop_weekday {
            v.push("f1");
        }
        if self.drop_workday {
            v.push("f2");
        }
        if self.drop_recency {
            v.push("f3");
        }
        if self.disable_correlation {
            v.push("corr");
        }
        v.join(",")
    }
}

impl std::str::FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let mut a = Self::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "f1" => a.drop_weekday = true,
                "f2" => a.drop_workday = true,
                "f3" => a.drop_recency = true,
                "corr" => a.disable_correlation = true,
                other => return Err(format!("unknown ablation '{other}' (f1, f2, f3, corr)")),
            }
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub similarity: SimilarityParams,
    pub pipeline: Pipeline,
    /// Neighbour count K (propagation only).
    pub neighbors: usize,
    /// Refresh rate (propagation only).
    pub alpha: f64,
    /// Embedding dimension k (embedding only).
    pub embed_dim: usize,
    pub lambda: f64,
    pub ablation: Ablation,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            similarity: SimilarityParams {
                a1: 1.0,
                a2: 1.0,
                a3: 1.0,
            },
            pipeline: Pipeline::Lp,
            neighbors: 2,
            alpha: 0.2,
            embed_dim: 16,
            lambda: 1.0,
            ablation: Ablation::none(),
        }
    }
}

impl HyperParams {
    /// Similarity weights after ablation.
    pub fn effective_similarity(&self) -> SimilarityParams {
        self.ablation.apply(self.similarity)
    }

    pub fn validate(&self) -> Result<()> {
        self.similarity.validate()?;
        match self.pipeline {
            Pipeline::Lp => {
                if self.neighbors == 0 {
                    return Err(Error::Input("neighbour count K must be >= 1".into()));
                }
                if !(self.alpha > 0.0 && self.alpha < 1.0) {
                    return Err(Error::Input(format!(
                        "refresh rate {} must lie in (0, 1)",
                        self.alpha
                    )));
                }
            }
            Pipeline::Embed => {
                if self.embed_dim < 2 {
                    return Err(Error::Input("embedding dimension must be >= 2".into()));
                }
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Input(format!("lambda {} must be >= 0", self.lambda)));
        }
        Ok(())
    }
}

/// Settings that are not searched over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub normalization: Normalization,
    pub limits: ChainLimits,
    pub eigen_order: EigenOrder,
    pub forest: ForestParams,
    pub lp_tol: f64,
    pub lp_max_iter: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            normalization: Normalization::Global,
            limits: ChainLimits::default(),
            eigen_order: EigenOrder::Smallest,
            forest: ForestParams::default(),
            lp_tol: 1e-6,
            lp_max_iter: 100,
        }
    }
}

/// Graph over the first `n` calendar days plus lazily derived structures.
#[derive(Debug)]
pub struct GraphEntry {
    pub graph: DayGraph,
    neighbors: Mutex<HashMap<usize, Arc<NeighborTable>>>,
    spectrum: OnceLock<std::result::Result<Arc<LaplacianSpectrum>, f64>>,
}

impl GraphEntry {
    pub fn new(graph: DayGraph) -> Self {
        Self {
            graph,
            neighbors: Mutex::new(HashMap::new()),
            spectrum: OnceLock::new(),
        }
    }

    pub fn neighbors(&self, k: usize) -> Result<Arc<NeighborTable>> {
        if let Some(t) = self.neighbors.lock().unwrap().get(&k) {
            return Ok(t.clone());
        }
        let table = Arc::new(NeighborTable::build(&self.graph, k)?);
        Ok(self
            .neighbors
            .lock()
            .unwrap()
            .entry(k)
            .or_insert(table)
            .clone())
    }

    pub fn spectrum(&self) -> Result<Arc<LaplacianSpectrum>> {
        self.spectrum
            .get_or_init(|| match LaplacianSpectrum::compute(&self.graph) {
                Ok(s) => Ok(Arc::new(s)),
                Err(Error::EigenConvergence { residual }) => Err(residual),
                Err(_) => Err(f64::NAN),
            })
            .clone()
            .map_err(|residual| Error::EigenConvergence { residual })
    }
}

type CacheKey = ([u64; 3], usize);

/// Day graphs keyed by similarity weights and day count, shared by every
/// user on the same calendar.
#[derive(Debug)]
pub struct GraphCache {
    calendar: Arc<Calendar>,
    enabled: bool,
    entries: Mutex<HashMap<CacheKey, Arc<GraphEntry>>>,
}

impl GraphCache {
    pub fn new(calendar: Arc<Calendar>) -> Self {
        Self {
            calendar,
            enabled: true,
            entries: Mutex::new(HashMap::new()),
        }
    }

    /// A cache that rebuilds every graph on request.
    pub fn uncached(calendar: Arc<Calendar>) -> Self {
        Self {
            enabled: false,
            ..Self::new(calendar)
        }
    }

    pub fn calendar(&self) -> &Arc<Calendar> {
        &self.calendar
    }

    pub fn serves(&self, calendar: &Arc<Calendar>) -> bool {
        Arc::ptr_eq(&self.calendar, calendar) || *self.calendar == **calendar
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, p: &SimilarityParams, n: usize) -> Result<Arc<GraphEntry>> {
        if n > self.calendar.len() {
            return Err(Error::Input(format!(
                "graph over {n} days exceeds the {}-day calendar",
                self.calendar.len()
            )));
        }
        let build = || -> Result<Arc<GraphEntry>> {
            let cal = self.calendar.prefix(n);
            Ok(Arc::new(GraphEntry::new(build_graph(&cal, p)?)))
        };
        if !self.enabled {
            return build();
        }
        let key = (p.key(), n);
        if let Some(e) = self.entries.lock().unwrap().get(&key) {
            return Ok(e.clone());
        }
        let entry = build()?;
        Ok(self
            .entries
            .lock()
            .unwrap()
            .entry(key)
            .or_insert(entry)
            .clone())
    }
}

/// Per-trip probabilities for the unknown days `n_known..n_known + rows`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityTable {
    pub vocab: Arc<TripVocabulary>,
    pub first_day: usize,
    /// `probs[d][label]` for unknown day `first_day + d`.
    pub probs: Vec<Vec<f64>>,
}

/// Classifier stage: per-trip probabilities for days `known.len()..n_total`.
pub fn trip_probabilities(
    known: &[TripChain],
    vocab: &Arc<TripVocabulary>,
    n_total: usize,
    params: &HyperParams,
    settings: &ModelSettings,
    cache: &GraphCache,
) -> Result<ProbabilityTable> {
    let n_known = known.len();
    if n_known == 0 {
        return Err(Error::Input("prediction needs at least one known day".into()));
    }
    if n_total <= n_known {
        return Err(Error::Input(format!(
            "nothing to predict: {n_total} total days, {n_known} known"
        )));
    }
    params.validate()?;
    let t = vocab.len();
    let horizon = n_total - n_known;
    if t == 0 {
        return Ok(ProbabilityTable {
            vocab: vocab.clone(),
            first_day: n_known,
            probs: vec![Vec::new(); horizon],
        });
    }
    let entry = cache.get(&params.effective_similarity(), n_total)?;
    let probs = match params.pipeline {
        Pipeline::Lp => {
            let prior: Vec<f64> = (0..t).map(|l| vocab.prior(l)).collect();
            let mut labels = LabelMatrix::new(n_total, &prior)?;
            let mut row = vec![false; t];
            for (d, chain) in known.iter().enumerate() {
                row.iter_mut().for_each(|v| *v = false);
                for trip in chain.iter() {
                    if let Some(l) = vocab.label_of(trip) {
                        row[l] = true;
                    }
                }
                labels.set_known(d, &row);
            }
            let table = entry.neighbors(params.neighbors)?;
            let out = propagate(
                &table,
                labels,
                PropagationSettings {
                    alpha: params.alpha,
                    tol: settings.lp_tol,
                    max_iter: settings.lp_max_iter,
                },
            )?;
            (n_known..n_total)
                .map(|d| out.labels.row(d).to_vec())
                .collect::<Vec<_>>()
        }
        Pipeline::Embed => {
            let embedding = entry.spectrum()?.embed(params.embed_dim, settings.eigen_order)?;
            let x_known = embedding.rows(0..n_known);
            let x_future = embedding.rows(n_known..n_total);
            let d = embedding.dim();
            let per_trip: Vec<Vec<f64>> = (0..t)
                .map(|l| {
                    let trip = vocab.trip(l);
                    let y: Vec<bool> = known.iter().map(|c| c.contains(&trip)).collect();
                    let fp = ForestParams {
                        seed: mix_seed(settings.forest.seed, l as u64),
                        ..settings.forest
                    };
                    let model = forest_fit(&x_known, d, &y, fp)?;
                    forest_predict(&model, &x_future)
                })
                .collect::<Result<_>>()?;
            (0..horizon)
                .map(|h| per_trip.iter().map(|p| p[h]).collect())
                .collect()
        }
    };
    Ok(ProbabilityTable {
        vocab: vocab.clone(),
        first_day: n_known,
        probs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayPrediction {
    pub day: usize,
    pub chain: TripChain,
    /// (trip, probability) for every vocabulary trip.
    pub probabilities: Vec<(Trip, f64)>,
    /// Absent when correlation is disabled.
    pub score: Option<ChainScore>,
}

/// Assembly stage: one chain per unknown day.
pub fn assemble_predictions(
    table: &ProbabilityTable,
    cooccurrence: &CooccurrenceTable,
    lambda: f64,
    disable_correlation: bool,
    limits: &ChainLimits,
) -> Vec<DayPrediction> {
    table
        .probs
        .iter()
        .enumerate()
        .map(|(h, probs)| {
            let (labels, score) = if disable_correlation {
                (disable_correlation_predict(probs), None)
            } else {
                let s = assemble_chain(probs, cooccurrence, lambda, limits);
                (s.labels.clone(), Some(s))
            };
            DayPrediction {
                day: table.first_day + h,
                chain: table.vocab.chain_of(labels),
                probabilities: probs
                    .iter()
                    .enumerate()
                    .map(|(l, &p)| (table.vocab.trip(l), p))
                    .collect(),
                score,
            }
        })
        .collect()
}

/// Predict days `known.len()..n_total` from the known prefix.
pub fn predict_days(
    known: &[TripChain],
    n_total: usize,
    params: &HyperParams,
    settings: &ModelSettings,
    cache: &GraphCache,
) -> Result<Vec<DayPrediction>> {
    let vocab = Arc::new(TripVocabulary::from_chains(known));
    let probs = trip_probabilities(known, &vocab, n_total, params, settings, cache)?;
    let co = normalize_cooccurrence(&vocab, settings.normalization);
    Ok(assemble_predictions(
        &probs,
        &co,
        params.lambda,
        params.ablation.disable_correlation,
        &settings.limits,
    ))
}

/// Parallel map over items with an optional cap on worker threads.
pub fn par_map<T, R, F>(items: &[T], workers: Option<usize>, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match workers {
        Some(w) if w >= 1 => match rayon::ThreadPoolBuilder::new().num_threads(w).build() {
            Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            Err(_) => items.iter().map(f).collect(),
        },
        _ => items.par_iter().map(f).collect(),
    }
}
