//! Label propagation over the K-nearest-neighbour day graph.
//!
//! Each sweep replaces every day's score with a mix of its own previous
//! score and the weight-averaged scores of its K nearest days, then resets
//! known days to their ground truth. Sweeps are synchronous: all updates
//! read the previous iterate.

use crate::error::{Error, Result};
use crate::similarity::{k_nearest, DayGraph};

/// Day x label score matrix with clamped known rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    n_days: usize,
    n_labels: usize,
    values: Vec<f64>,
    known: Vec<bool>,
    truth: Vec<bool>,
}

impl LabelMatrix {
    /// All days unknown, every score at `init[label]`.
    pub fn new(n_days: usize, init: &[f64]) -> Result<Self> {
        if init.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Contract("label initialisation outside [0, 1]".into()));
        }
        let n_labels = init.len();
        let mut values = Vec::with_capacity(n_days * n_labels);
        for _ in 0..n_days {
            values.extend_from_slice(init);
        }
        Ok(Self {
            n_days,
            n_labels,
            values,
            known: vec![false; n_days],
            truth: vec![false; n_days * n_labels],
        })
    }

    /// Mark `day` as known with the given binary labels.
    pub fn set_known(&mut self, day: usize, labels: &[bool]) {
        assert_eq!(labels.len(), self.n_labels);
        self.known[day] = true;
        let row = day * self.n_labels;
        self.truth[row..row + self.n_labels].copy_from_slice(labels);
        for (v, &t) in self.values[row..row + self.n_labels].iter_mut().zip(labels) {
            *v = t as u8 as f64;
        }
    }

    pub fn n_days(&self) -> usize {
        self.n_days
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn is_known(&self, day: usize) -> bool {
        self.known[day]
    }

    pub fn get(&self, day: usize, label: usize) -> f64 {
        self.values[day * self.n_labels + label]
    }

    pub fn row(&self, day: usize) -> &[f64] {
        &self.values[day * self.n_labels..(day + 1) * self.n_labels]
    }

    pub fn truth(&self, day: usize, label: usize) -> bool {
        self.truth[day * self.n_labels + label]
    }

    fn clamp_known(&mut self) {
        for day in 0..self.n_days {
            if self.known[day] {
                let row = day * self.n_labels;
                for l in 0..self.n_labels {
                    self.values[row + l] = self.truth[row + l] as u8 as f64;
                }
            }
        }
    }
}

/// K nearest neighbours of every day over the whole graph.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    k: usize,
    lists: Vec<Vec<(usize, f64)>>,
}

impl NeighborTable {
    pub fn build(graph: &DayGraph, k: usize) -> Result<Self> {
        let all: Vec<usize> = (0..graph.n()).collect();
        let lists = (0..graph.n())
            .map(|i| k_nearest(graph, i, k, &all))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { k, lists })
    }

    /// Keep only the first `k` neighbours of each list. Valid because the
    /// neighbour order is a total order, so the top-k is a prefix of the top-K.
    pub fn truncated(&self, k: usize) -> Self {
        Self {
            k: k.min(self.k),
            lists: self
                .lists
                .iter()
                .map(|l| l[..k.min(l.len())].to_vec())
                .collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn neighbors(&self, day: usize) -> &[(usize, f64)] {
        &self.lists[day]
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationSettings {
    pub alpha: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl PropagationSettings {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            tol: 1e-6,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Propagated {
    pub labels: LabelMatrix,
    pub sweeps: usize,
    pub converged: bool,
}

pub fn propagate(
    neighbors: &NeighborTable,
    labels: LabelMatrix,
    settings: PropagationSettings,
) -> Result<Propagated> {
    let alpha = settings.alpha;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Input(format!("refresh rate {alpha} must lie in (0, 1)")));
    }
    if neighbors.len() != labels.n_days {
        return Err(Error::Contract(format!(
            "neighbour table covers {} days, label matrix {}",
            neighbors.len(),
            labels.n_days
        )));
    }
    let t = labels.n_labels;
    let mut cur = labels;
    cur.clamp_known();
    let mut next = cur.values.clone();
    let mut acc = vec![0.0; t];
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < settings.max_iter {
        sweeps += 1;
        let mut max_delta = 0.0f64;
        for day in 0..cur.n_days {
            let row = day * t;
            if cur.known[day] {
                next[row..row + t].copy_from_slice(&cur.values[row..row + t]);
                continue;
            }
            let nbrs = neighbors.neighbors(day);
            let total: f64 = nbrs.iter().map(|&(_, w)| w).sum();
            if total <= 0.0 {
                // no usable neighbour weight: the score keeps its value
                next[row..row + t].copy_from_slice(&cur.values[row..row + t]);
                continue;
            }
            acc.iter_mut().for_each(|a| *a = 0.0);
            for &(j, w) in nbrs {
                let other = &cur.values[j * t..(j + 1) * t];
                for (a, &f) in acc.iter_mut().zip(other) {
                    *a += w * f;
                }
            }
            for l in 0..t {
                let old = cur.values[row + l];
                let new = alpha * (acc[l] / total) + (1.0 - alpha) * old;
                let new = new.clamp(0.0, 1.0);
                max_delta = max_delta.max((new - old).abs());
                next[row + l] = new;
            }
        }
        std::mem::swap(&mut cur.values, &mut next);
        cur.clamp_known();
        if max_delta < settings.tol {
            converged = true;
            break;
        }
    }
    Ok(Propagated {
        labels: cur,
        sweeps,
        converged,
    })
}

/// Label propagation with neighbour sets computed from `graph`.
pub fn label_propagation(
    graph: &DayGraph,
    labels: LabelMatrix,
    k: usize,
    settings: PropagationSettings,
) -> Result<Propagated> {
    if k == 0 {
        return Err(Error::Input("neighbour count K must be >= 1".into()));
    }
    let table = NeighborTable::build(graph, k)?;
    propagate(&table, labels, settings)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n: usize) -> DayGraph {
        let mut w = vec![1.0; n * n];
        for i in 0..n {
            w[i * n + i] = 0.0;
        }
        DayGraph::from_weights(n, w).unwrap()
    }

    #[test]
    fn three_day_example() {
        let g = uniform(3);
        let mut m = LabelMatrix::new(3, &[0.0]).unwrap();
        m.set_known(0, &[true]);
        m.set_known(1, &[true]);
        let one = label_propagation(
            &g,
            m.clone(),
            2,
            PropagationSettings {
                alpha: 0.2,
                tol: 0.0,
                max_iter: 1,
            },
        )
        .unwrap();
        assert!((one.labels.get(2, 0) - 0.2).abs() < 1e-15);

        let fix = label_propagation(
            &g,
            m,
            2,
            PropagationSettings {
                alpha: 0.2,
                tol: 1e-12,
                max_iter: 10_000,
            },
        )
        .unwrap();
        assert!(fix.converged);
        assert!((fix.labels.get(2, 0) - 1.0).abs() < 1e-10);
        assert_eq!(fix.labels.get(0, 0), 1.0);
    }

    #[test]
    fn negatives_absorb_to_zero() {
        let g = uniform(5);
        let mut m = LabelMatrix::new(5, &[0.0, 0.0]).unwrap();
        for d in 0..3 {
            m.set_known(d, &[false, false]);
        }
        let out = label_propagation(&g, m, 4, PropagationSettings::new(0.1)).unwrap();
        for d in 0..5 {
            assert_eq!(out.labels.row(d), &[0.0, 0.0]);
        }
    }

    #[test]
    fn zero_weight_neighbourhood_keeps_init() {
        let g = DayGraph::from_weights(3, vec![0.0; 9]).unwrap();
        let mut m = LabelMatrix::new(3, &[0.3]).unwrap();
        m.set_known(0, &[true]);
        let out = label_propagation(&g, m, 2, PropagationSettings::new(0.5)).unwrap();
        assert_eq!(out.labels.get(1, 0), 0.3);
        assert_eq!(out.labels.get(2, 0), 0.3);
    }

    #[test]
    fn rejects_bad_alpha() {
        let g = uniform(3);
        let m = LabelMatrix::new(3, &[0.0]).unwrap();
        assert!(label_propagation(&g, m.clone(), 1, PropagationSettings::new(1.0)).is_err());
        assert!(label_propagation(&g, m, 1, PropagationSettings::new(0.0)).is_err());
    }

    #[test]
    fn monotone_toward_consensus() {
        // unknown day 3 with identical known neighbours at 1: scores rise monotonically
        let g = uniform(4);
        let mut m = LabelMatrix::new(4, &[0.0]).unwrap();
        for d in 0..3 {
            m.set_known(d, &[true]);
        }
        let mut last = 0.0;
        let mut cur = m;
        for _ in 0..20 {
            let step = label_propagation(
                &g,
                cur,
                3,
                PropagationSettings {
                    alpha: 0.05,
                    tol: 0.0,
                    max_iter: 1,
                },
            )
            .unwrap();
            let v = step.labels.get(3, 0);
            assert!(v > last && v <= 1.0);
            last = v;
            cur = step.labels;
        }
    }

    #[test]
    fn truncated_table_is_prefix() {
        let mut w = vec![0.0; 36];
        let mut x = 1.0;
        for i in 0..6 {
            for j in i + 1..6 {
                x = (x * 7.3) % 5.0 + 0.1;
                w[i * 6 + j] = x;
                w[j * 6 + i] = x;
            }
        }
        let g = DayGraph::from_weights(6, w).unwrap();
        let four = NeighborTable::build(&g, 4).unwrap();
        let two = NeighborTable::build(&g, 2).unwrap();
        assert_eq!(four.truncated(2), two);
    }
}
