//! Per-trip probability estimators over the day graph, plus baselines.

pub mod baselines;
pub mod embedding;
pub mod forest;
pub mod propagation;

pub use baselines::{baseline_last_week, baseline_ngram, baseline_random_guess};
pub use embedding::{laplacian, spectral_embed, EigenOrder, Embedding, LaplacianSpectrum};
pub use forest::{forest_fit, forest_predict, ForestModel, ForestParams};
pub use propagation::{
    label_propagation, propagate, LabelMatrix, NeighborTable, PropagationSettings, Propagated,
};
