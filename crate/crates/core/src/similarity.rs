//! Chain similarity, parametric day similarity, and the day graph.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Calendar, TripChain};

/// Fraction of shared trips, averaged over both chains.
///
/// Two empty chains score 1 and an empty chain against a nonempty one
/// scores 0, mirroring the accuracy metric's no-trip rule.
pub fn chain_similarity(a: &TripChain, b: &TripChain) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        (false, false) => {
            let shared = a.intersection_len(b) as f64;
            0.5 * (shared / a.len() as f64 + shared / b.len() as f64)
        }
    }
}

/// Weights of the three day-similarity features: same weekday, same
/// workday flag, and inverse day gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityParams {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl SimilarityParams {
    pub fn new(a1: f64, a2: f64, a3: f64) -> Result<Self> {
        let p = Self { a1, a2, a3 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("a1", self.a1), ("a2", self.a2), ("a3", self.a3)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Input(format!("similarity weight {name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.a1 + self.a2 + self.a3
    }

    /// Bit-exact cache key.
    pub fn key(&self) -> [u64; 3] {
        [self.a1.to_bits(), self.a2.to_bits(), self.a3.to_bits()]
    }
}

fn feature_weight(cal: &Calendar, i: usize, j: usize, p: &SimilarityParams) -> f64 {
    let (di, dj) = (cal.day(i), cal.day(j));
    let same_weekday = (di.weekday == dj.weekday) as u8 as f64;
    let same_flag = (di.is_workday == dj.is_workday) as u8 as f64;
    let gap = cal.gap(i, j) as f64;
    p.a1 * same_weekday + p.a2 * same_flag + p.a3 / (gap + 1.0)
}

/// Similarity of two distinct days under `p`.
pub fn day_similarity(i: usize, j: usize, cal: &Calendar, p: &SimilarityParams) -> Result<f64> {
    if i == j {
        return Err(Error::Contract(format!("day_similarity called with i = j = {i}")));
    }
    if i >= cal.len() || j >= cal.len() {
        return Err(Error::Contract(format!(
            "day index ({i}, {j}) outside a {}-day calendar",
            cal.len()
        )));
    }
    Ok(feature_weight(cal, i, j, p))
}

/// Dense symmetric similarity matrix over days, zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DayGraph {
    n: usize,
    weights: Vec<f64>,
}

impl DayGraph {
    /// Wrap an explicit weight matrix (row-major). Used by tests and tools
    /// that bring their own similarity.
    pub fn from_weights(n: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != n * n {
            return Err(Error::Contract(format!(
                "{} weights for a {n}x{n} graph",
                weights.len()
            )));
        }
        for i in 0..n {
            if weights[i * n + i] != 0.0 {
                return Err(Error::Contract(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let w = weights[i * n + j];
                if !(w.is_finite() && w >= 0.0) || w != weights[j * n + i] {
                    return Err(Error::Contract(format!(
                        "weight ({i}, {j}) = {w} must be finite, nonnegative, symmetric"
                    )));
                }
            }
        }
        Ok(Self { n, weights })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n..(i + 1) * self.n]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Headerless row-major CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_matrix_csv(out, self.n, &self.weights)
    }
}

pub(crate) fn write_matrix_csv<W: Write>(out: W, n: usize, values: &[f64]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for row in values.chunks(n.max(1)) {
        w.write_record(row.iter().map(|v| format!("{v}")))?;
    }
    w.flush().map_err(|e| Error::io("<matrix>", e))?;
    Ok(())
}

pub fn build_graph(cal: &Calendar, p: &SimilarityParams) -> Result<DayGraph> {
    p.validate()?;
    let n = cal.len();
    if n < 2 {
        return Err(Error::Contract(format!("day graph needs >= 2 days, got {n}")));
    }
    let mut weights = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let w = feature_weight(cal, i, j, p);
            weights[i * n + j] = w;
            weights[j * n + i] = w;
        }
    }
    Ok(DayGraph { n, weights })
}

/// The `k` heaviest neighbours of `i` among `restrict` (excluding `i`).
///
/// Ties go to the smaller day gap, then the smaller day index.
pub fn k_nearest(graph: &DayGraph, i: usize, k: usize, restrict: &[usize]) -> Result<Vec<(usize, f64)>> {
    if restrict.is_empty() {
        return Err(Error::Contract("k_nearest: empty candidate set".into()));
    }
    if k == 0 {
        return Err(Error::Contract("k_nearest: K must be >= 1".into()));
    }
    let mut cands: Vec<(usize, f64)> = restrict
        .iter()
        .copied()
        .filter(|&j| j != i)
        .map(|j| (j, graph.weight(i, j)))
        .collect();
    cands.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| a.0.abs_diff(i).cmp(&b.0.abs_diff(i)))
            .then_with(|| a.0.cmp(&b.0))
    });
    cands.dedup_by_key(|c| c.0);
    cands.truncate(k);
    Ok(cands)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Calendar, StationId, Trip};
    use chrono::NaiveDate;

    fn t(h: u8, o: u32, d: u32) -> Trip {
        Trip::new(h, StationId(o), StationId(d)).unwrap()
    }

    fn cal(n: usize) -> Calendar {
        let start = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap();
        Calendar::from_start(start, n, |d| crate::model::iso_weekday(d) <= 5)
    }

    #[test]
    fn chain_similarity_examples() {
        let a: TripChain = [t(7, 0, 1), t(18, 1, 0)].into_iter().collect();
        let b: TripChain = [t(7, 0, 1), t(19, 1, 2)].into_iter().collect();
        assert_eq!(chain_similarity(&a, &a), 1.0);
        assert_eq!(chain_similarity(&a, &b), 0.5);
        let c: TripChain = [t(7, 0, 1)].into_iter().collect();
        let d: TripChain = [t(8, 0, 1)].into_iter().collect();
        assert_eq!(chain_similarity(&c, &d), 0.0);
        let e = TripChain::new();
        assert_eq!(chain_similarity(&e, &e), 1.0);
        assert_eq!(chain_similarity(&e, &c), 0.0);
        // uneven sizes: 0.5 * (1/1 + 1/2)
        assert_eq!(chain_similarity(&c, &a), 0.75);
    }

    #[test]
    fn day_similarity_examples() {
        let c = cal(30);
        // Monday 2018-01-01 and Monday 2018-01-08, both workdays.
        let p = SimilarityParams::new(0.1, 1.0, 10.0).unwrap();
        let w = day_similarity(0, 7, &c, &p).unwrap();
        assert!((w - 2.35).abs() < 1e-12);
        // Friday (workday) vs Saturday (holiday), gap 1.
        let ones = SimilarityParams::new(1.0, 1.0, 1.0).unwrap();
        assert!((day_similarity(4, 5, &c, &ones).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(day_similarity(3, 3, &c, &p), Err(Error::Contract(_))));
    }

    #[test]
    fn recency_weight_decays() {
        let c = cal(300);
        let p = SimilarityParams::new(0.0, 0.0, 1.0).unwrap();
        let ws: Vec<f64> = (1..300).map(|j| day_similarity(0, j, &c, &p).unwrap()).collect();
        assert!(ws.windows(2).all(|w| w[1] < w[0]));
        assert!(ws[ws.len() - 1] < 0.004);
    }

    #[test]
    fn graph_shape_and_edge_cases() {
        let p = SimilarityParams::new(0.1, 1.0, 10.0).unwrap();
        let g = build_graph(&cal(300), &p).unwrap();
        assert_eq!(g.n(), 300);
        assert_eq!(g.weights().len(), 300 * 300);
        for i in 0..300 {
            assert_eq!(g.weight(i, i), 0.0);
            for j in 0..300 {
                assert_eq!(g.weight(i, j), g.weight(j, i));
                assert!(g.weight(i, j) <= p.total());
            }
        }
        // Two consecutive workdays cannot share a weekday.
        let two = build_graph(&cal(2), &p).unwrap();
        assert!((two.weight(0, 1) - (1.0 + 10.0 / 2.0)).abs() < 1e-12);

        let zero = build_graph(&cal(20), &SimilarityParams::new(0.0, 0.0, 0.0).unwrap()).unwrap();
        assert!(zero.weights().iter().all(|&w| w == 0.0));
        assert!(build_graph(&cal(1), &p).is_err());
        assert!(SimilarityParams::new(-1.0, 0.0, 0.0).is_err());
    }

    fn manual(n: usize, entries: &[(usize, usize, f64)]) -> DayGraph {
        let mut w = vec![0.0; n * n];
        for &(i, j, v) in entries {
            w[i * n + j] = v;
            w[j * n + i] = v;
        }
        DayGraph::from_weights(n, w).unwrap()
    }

    #[test]
    fn k_nearest_examples() {
        let g = manual(3, &[(0, 1, 3.0), (0, 2, 2.0)]);
        assert_eq!(k_nearest(&g, 0, 1, &[1, 2]).unwrap(), vec![(1, 3.0)]);

        // tie at weight 2: j = 1 (gap 1) before k = 3 (gap 1, larger index)
        let g = manual(5, &[(2, 1, 2.0), (2, 3, 2.0), (2, 0, 2.0)]);
        let nn = k_nearest(&g, 2, 3, &[0, 1, 3, 4]).unwrap();
        assert_eq!(nn.iter().map(|x| x.0).collect::<Vec<_>>(), vec![1, 3, 0]);

        let g = manual(3, &[(0, 1, 1.0), (0, 2, 1.0)]);
        assert_eq!(k_nearest(&g, 0, 4, &[1, 2]).unwrap().len(), 2);
        assert!(k_nearest(&g, 0, 1, &[]).is_err());
        assert!(k_nearest(&g, 0, 0, &[1]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn chain() -> impl Strategy<Value = TripChain> {
            prop::collection::vec((6u8..10, 0u32..3, 0u32..3), 0..6)
                .prop_map(|v| v.into_iter().map(|(h, o, d)| t(h, o, d)).collect())
        }

        proptest! {
            #[test]
            fn chain_similarity_symmetric_bounded(a in chain(), b in chain()) {
                let s = chain_similarity(&a, &b);
                prop_assert!((0.0..=1.0).contains(&s));
                prop_assert_eq!(s, chain_similarity(&b, &a));
            }

            #[test]
            fn monotone_in_each_weight(
                a1 in 0.0f64..5.0, a2 in 0.0f64..5.0, a3 in 0.0f64..5.0,
                bump in 0.01f64..3.0, which in 0usize..3,
            ) {
                let c = cal(40);
                let base = SimilarityParams::new(a1, a2, a3).unwrap();
                let mut up = base;
                match which { 0 => up.a1 += bump, 1 => up.a2 += bump, _ => up.a3 += bump }
                let g0 = build_graph(&c, &base).unwrap();
                let g1 = build_graph(&c, &up).unwrap();
                for (x, y) in g0.weights().iter().zip(g1.weights()) {
                    prop_assert!(y >= x);
                }
            }

            #[test]
            fn scale_covariance(
                a1 in 0.0f64..5.0, a2 in 0.0f64..5.0, a3 in 0.01f64..5.0,
                scale in prop::sample::select(vec![0.5f64, 2.0, 4.0, 8.0]), i in 0usize..40, k in 1usize..6,
            ) {
                let c = cal(40);
                let p = SimilarityParams::new(a1, a2, a3).unwrap();
                let q = SimilarityParams::new(a1 * scale, a2 * scale, a3 * scale).unwrap();
                let g = build_graph(&c, &p).unwrap();
                let h = build_graph(&c, &q).unwrap();
                for (x, y) in g.weights().iter().zip(h.weights()) {
                    prop_assert!((x * scale - y).abs() <= 1e-12 * y.abs().max(1.0));
                }
                let all: Vec<usize> = (0..40).collect();
                let ng: Vec<usize> = k_nearest(&g, i, k, &all).unwrap().into_iter().map(|x| x.0).collect();
                let nh: Vec<usize> = k_nearest(&h, i, k, &all).unwrap().into_iter().map(|x| x.0).collect();
                prop_assert_eq!(ng, nh);
            }

            #[test]
            fn strictly_decreasing_in_gap(a3 in 0.01f64..10.0) {
                // Mondays only: features 1 and 2 fixed, gap grows by one week each step.
                let c = cal(200);
                let p = SimilarityParams::new(1.0, 1.0, a3).unwrap();
                let ws: Vec<f64> = (1..28).map(|w| day_similarity(0, 7 * w, &c, &p).unwrap()).collect();
                prop_assert!(ws.windows(2).all(|w| w[1] < w[0]));
            }
        }
    }
}
