//! Spectral embedding of the day graph from eigenvectors of L = D - W.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::DayGraph;

/// Which end of the Laplacian spectrum supplies the coordinates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EigenOrder {
    #[default]
    Smallest,
    Largest,
}

impl std::str::FromStr for EigenOrder {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "smallest" => Ok(Self::Smallest),
            "largest" => Ok(Self::Largest),
            other => Err(format!("unknown eigen order '{other}' (smallest | largest)")),
        }
    }
}

pub const RESIDUAL_TOL: f64 = 1e-8;

/// Unnormalised graph Laplacian.
pub fn laplacian(graph: &DayGraph) -> DMatrix<f64> {
    let n = graph.n();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        let row = graph.row(i);
        let degree: f64 = row.iter().sum();
        for (j, &w) in row.iter().enumerate() {
            if i != j {
                l[(i, j)] = -w;
            }
        }
        l[(i, i)] = degree;
    }
    l
}

/// Full eigendecomposition of the Laplacian, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct LaplacianSpectrum {
    pub eigenvalues: Vec<f64>,
    /// Column `c` is the unit eigenvector of `eigenvalues[c]`.
    pub eigenvectors: DMatrix<f64>,
    pub max_residual: f64,
}

fn residual(l: &DMatrix<f64>, v: &nalgebra::DVectorView<f64>, lambda: f64) -> f64 {
    let lv = l * v;
    (lv - v * lambda).norm() / v.norm().max(f64::MIN_POSITIVE)
}

impl LaplacianSpectrum {
    pub fn compute(graph: &DayGraph) -> Result<Self> {
        let l = laplacian(graph);
        let n = l.nrows();
        let eig = SymmetricEigen::try_new(l.clone(), 1e-15, 10_000)
            .ok_or(Error::EigenConvergence {
                residual: f64::INFINITY,
            })?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
        let mut vectors = DMatrix::zeros(n, n);
        let mut values = Vec::with_capacity(n);
        let mut max_residual = 0.0f64;
        for (c, &src) in order.iter().enumerate() {
            let mut v = eig.eigenvectors.column(src).into_owned();
            // sign convention: the largest-magnitude component is positive
            let pivot = v
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap_or(0);
            if v[pivot] < 0.0 {
                v.neg_mut();
            }
            let lambda = eig.eigenvalues[src];
            max_residual = max_residual.max(residual(&l, &v.as_view(), lambda));
            vectors.set_column(c, &v);
            values.push(lambda);
        }
        if max_residual > RESIDUAL_TOL {
            return Err(Error::EigenConvergence {
                residual: max_residual,
            });
        }
        Ok(Self {
            eigenvalues: values,
            eigenvectors: vectors,
            max_residual,
        })
    }

    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn embed(&self, k: usize, order: EigenOrder) -> Result<Embedding> {
        let n = self.n();
        if k < 2 || k > n {
            return Err(Error::Input(format!(
                "embedding dimension {k} must satisfy 2 <= k <= {n}"
            )));
        }
        let cols: Vec<usize> = match order {
            EigenOrder::Smallest => (0..k).collect(),
            EigenOrder::Largest => (n - k..n).rev().collect(),
        };
        let mut coords = Vec::with_capacity(n * k);
        for day in 0..n {
            coords.extend(cols.iter().map(|&c| self.eigenvectors[(day, c)]));
        }
        Ok(Embedding {
            n,
            k,
            coords,
            eigenvalues: cols.iter().map(|&c| self.eigenvalues[c]).collect(),
        })
    }
}

/// Day coordinates: row `d` holds the `k` eigenvector entries of day `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    n: usize,
    k: usize,
    coords: Vec<f64>,
    pub eigenvalues: Vec<f64>,
}

impl Embedding {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn row(&self, day: usize) -> &[f64] {
        &self.coords[day * self.k..(day + 1) * self.k]
    }

    /// Rows of `days`, concatenated.
    pub fn rows(&self, days: impl IntoIterator<Item = usize>) -> Vec<f64> {
        days.into_iter().flat_map(|d| self.row(d).iter().copied()).collect()
    }
}

pub fn spectral_embed(graph: &DayGraph, k: usize, order: EigenOrder) -> Result<Embedding> {
    LaplacianSpectrum::compute(graph)?.embed(k, order)
}
