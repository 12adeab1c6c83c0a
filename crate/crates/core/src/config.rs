//! Run configuration: a flat TOML file overlaid by command-line flags.
//! Precedence is flag, then file, then built-in default.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::calibration::GridSpec;
use crate::classifiers::EigenOrder;
use crate::correlation::Normalization;
use crate::error::{Error, Result};
use crate::evaluation::{EvalConfig, Method};
use crate::pipeline::{Ablation, ModelSettings, Pipeline};

pub const DEFAULT_HORIZONS: [usize; 4] = [1, 7, 14, 28];
pub const MAX_HORIZON: usize = 365;

/// Every optional setting; one layer per source.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub records: Option<PathBuf>,
    pub calendar: Option<PathBuf>,
    pub archive: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub pipeline: Option<Pipeline>,
    pub horizons: Option<Vec<usize>>,
    pub normalization: Option<Normalization>,
    pub eigen_order: Option<EigenOrder>,
    pub ablate: Option<Vec<String>>,
    pub methods: Option<Vec<String>>,
    pub min_active_days: Option<usize>,
    pub validation_days: Option<usize>,
    pub known_days: Option<usize>,
    pub pairs: Option<usize>,
    pub exclude_empty: Option<bool>,
    pub a1: Option<Vec<f64>>,
    pub a2: Option<Vec<f64>>,
    pub a3: Option<Vec<f64>>,
    #[serde(rename = "K")]
    pub neighbors: Option<Vec<usize>>,
    pub alpha: Option<Vec<f64>>,
    #[serde(rename = "k")]
    pub embed_dim: Option<Vec<usize>>,
    pub lambda: Option<Vec<f64>>,
}

macro_rules! overlay {
    ($top:expr, $base:expr, $($f:ident),*) => {
        ConfigLayer { $($f: $top.$f.or($base.$f)),* }
    };
}

impl ConfigLayer {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text)
            .map_err(|e| Error::Input(format!("config {}: {}", origin.display(), e.message())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// `self` wins wherever it is set.
    pub fn over(self, base: ConfigLayer) -> ConfigLayer {
        overlay!(
            self, base, records, calendar, archive, out, seed, workers, pipeline, horizons,
            normalization, eigen_order, ablate, methods, min_active_days, validation_days, known_days, pairs,
            exclude_empty, a1, a2, a3, neighbors, alpha, embed_dim, lambda
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub records: Option<PathBuf>,
    pub calendar: Option<PathBuf>,
    pub archive: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub workers: Option<usize>,
    pub pipeline: Pipeline,
    pub horizons: Vec<usize>,
    pub normalization: Normalization,
    pub eigen_order: EigenOrder,
    pub ablation: Ablation,
    pub methods: Vec<Method>,
    pub min_active_days: usize,
    pub validation_days: usize,
    /// Days treated as known; None means "all but the longest horizon".
    pub known_days: Option<usize>,
    pub pairs: usize,
    pub exclude_empty: bool,
    pub grid: GridSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::resolve(ConfigLayer::default()).expect("defaults are valid")
    }
}

impl RunConfig {
    pub fn resolve(layer: ConfigLayer) -> Result<Self> {
        let d = GridSpec::default();
        let grid = GridSpec {
            a1: layer.a1.unwrap_or(d.a1),
            a2: layer.a2.unwrap_or(d.a2),
            a3: layer.a3.unwrap_or(d.a3),
            neighbors: layer.neighbors.unwrap_or(d.neighbors),
            alpha: layer.alpha.unwrap_or(d.alpha),
            embed_dim: layer.embed_dim.unwrap_or(d.embed_dim),
            lambda: layer.lambda.unwrap_or(d.lambda),
        };
        let ablation = layer
            .ablate
            .unwrap_or_default()
            .join(",")
            .parse::<Ablation>()
            .map_err(Error::Input)?;
        let methods = match layer.methods {
            Some(ms) => ms
                .iter()
                .map(|m| m.parse::<Method>().map_err(Error::Input))
                .collect::<Result<Vec<_>>>()?,
            None => Method::ALL.to_vec(),
        };
        let cfg = Self {
            records: layer.records,
            calendar: layer.calendar,
            archive: layer.archive,
            out: layer.out,
            seed: layer.seed.unwrap_or(0),
            workers: layer.workers,
            pipeline: layer.pipeline.unwrap_or_default(),
            horizons: layer.horizons.unwrap_or_else(|| DEFAULT_HORIZONS.to_vec()),
            normalization: layer.normalization.unwrap_or_default(),
            eigen_order: layer.eigen_order.unwrap_or_default(),
            ablation,
            methods,
            min_active_days: layer.min_active_days.unwrap_or(50),
            validation_days: layer.validation_days.unwrap_or(30),
            known_days: layer.known_days,
            pairs: layer.pairs.unwrap_or(20_000),
            exclude_empty: layer.exclude_empty.unwrap_or(false),
            grid,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() {
            return Err(Error::Input("at least one horizon is required".into()));
        }
        if let Some(h) = self.horizons.iter().find(|&&h| h == 0 || h > MAX_HORIZON) {
            return Err(Error::Input(format!("horizon {h} outside 1..={MAX_HORIZON}")));
        }
        if self.workers == Some(0) {
            return Err(Error::Input("--workers must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Input("at least one method is required".into()));
        }
        if self.pairs < 2 {
            return Err(Error::Input("pairs must be >= 2".into()));
        }
        self.grid.validate(self.pipeline)?;
        for p in [&self.records, &self.calendar, &self.archive].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::io(p, std::io::Error::from(std::io::ErrorKind::NotFound)));
            }
        }
        Ok(())
    }

    pub fn max_horizon(&self) -> usize {
        self.horizons.iter().copied().max().unwrap_or(1)
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| Error::Input(format!("missing required --{name}")))
    }

    pub fn settings(&self) -> ModelSettings {
        ModelSettings {
            normalization: self.normalization,
            eigen_order: self.eigen_order,
            ..ModelSettings::default()
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            grid: self.grid.clone(),
            settings: self.settings(),
            ablation: self.ablation,
            validation_days: self.validation_days,
            seed: self.seed,
            workers: self.workers,
            ..EvalConfig::default()
        }
    }
}
