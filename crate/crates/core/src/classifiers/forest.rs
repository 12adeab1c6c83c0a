//! Bagged binary decision trees (Gini splits, feature subsampling).
//!
//! The forest probability is the fraction of trees whose leaf votes
//! positive.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub seed: u64,
    /// Features tried per split; `None` means floor(sqrt(d)).
    pub max_features: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 8,
            seed: 0,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(bool),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn vote(&self, x: &[f64]) -> bool {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    fn depth(&self) -> usize {
        fn go(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    trees: Vec<Tree>,
    n_features: usize,
    pub params: ForestParams,
}

impl ForestModel {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn max_depth(&self) -> usize {
        self.trees.iter().map(Tree::depth).max().unwrap_or(0)
    }
}

/// splitmix64 finaliser, used to derive independent per-tree seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Row indices and values of each feature column in ascending value order.
struct Presorted {
    n: usize,
    rows: Vec<u32>,
    vals: Vec<f64>,
}

impl Presorted {
    fn new(x: &[f64], n: usize, d: usize) -> Self {
        let mut rows = Vec::with_capacity(n * d);
        let mut vals = Vec::with_capacity(n * d);
        let mut idx: Vec<u32> = Vec::with_capacity(n);
        for f in 0..d {
            idx.clear();
            idx.extend(0..n as u32);
            idx.sort_by(|&a, &b| x[a as usize * d + f].total_cmp(&x[b as usize * d + f]));
            rows.extend_from_slice(&idx);
            vals.extend(idx.iter().map(|&r| x[r as usize * d + f]));
        }
        Self { n, rows, vals }
    }
}

struct Builder<'a> {
    x: &'a [f64],
    y: &'a [bool],
    d: usize,
    max_depth: usize,
    mtry: usize,
    pre: &'a Presorted,
    /// Bootstrap multiplicity of each row in the current tree.
    weight: Vec<f64>,
    /// Node membership marks, one per row.
    stamp: Vec<u32>,
    next_stamp: u32,
    nodes: Vec<Node>,
    buf: Vec<(f64, f64, f64)>,
}

fn gini_sum(pos: f64, total: f64) -> f64 {
    // total * gini impurity
    if total <= 0.0 {
        0.0
    } else {
        let p = pos / total;
        total * 2.0 * p * (1.0 - p)
    }
}

impl Builder<'_> {
    fn value(&self, sample: usize, feature: usize) -> f64 {
        self.x[sample * self.d + feature]
    }

    /// `samples` holds (row, bootstrap multiplicity).
    fn build(&mut self, samples: &mut [(usize, u32)], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let total: f64 = samples.iter().map(|s| s.1 as f64).sum();
        let pos: f64 = samples
            .iter()
            .filter(|s| self.y[s.0])
            .map(|s| s.1 as f64)
            .sum();
        let id = self.nodes.len();
        let leaf = Node::Leaf(2.0 * pos > total);
        self.nodes.push(leaf.clone());
        if pos == 0.0 || pos == total || depth >= self.max_depth || samples.len() < 2 {
            return id;
        }

        let parent = gini_sum(pos, total);
        let mut best: Option<(f64, usize, f64)> = None;
        let features = sample(rng, self.d, self.mtry);
        // large nodes scan the presorted columns, small ones sort a copy
        let scan = samples.len() * 8 > self.pre.n;
        if scan {
            self.next_stamp += 1;
            for &(r, _) in samples.iter() {
                self.stamp[r] = self.next_stamp;
            }
        }
        for feature in features.iter() {
            let (mut lt, mut lp) = (0.0, 0.0);
            let mut consider = |here: f64, next: f64, lt: f64, lp: f64| {
                let score = gini_sum(lp, lt) + gini_sum(pos - lp, total - lt);
                if best.map_or(true, |b| score < b.0) {
                    best = Some((score, feature, 0.5 * (here + next)));
                }
            };
            if scan {
                let base = feature * self.pre.n;
                let rows = &self.pre.rows[base..base + self.pre.n];
                let vals = &self.pre.vals[base..base + self.pre.n];
                let mut prev: Option<f64> = None;
                for (&r, &v) in rows.iter().zip(vals) {
                    let r = r as usize;
                    if self.stamp[r] != self.next_stamp {
                        continue;
                    }
                    if let Some(pv) = prev {
                        if v != pv {
                            consider(pv, v, lt, lp);
                        }
                    }
                    let w = self.weight[r];
                    lt += w;
                    if self.y[r] {
                        lp += w;
                    }
                    prev = Some(v);
                }
            } else {
                // (value, weight, positive weight) by value; equal values
                // never straddle a split, so their relative order is irrelevant
                self.buf.clear();
                self.buf.extend(samples.iter().map(|&(r, c)| {
                    let w = c as f64;
                    (self.x[r * self.d + feature], w, if self.y[r] { w } else { 0.0 })
                }));
                self.buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
                for w in 0..self.buf.len() - 1 {
                    let (here, wt, wp) = self.buf[w];
                    lt += wt;
                    lp += wp;
                    let next = self.buf[w + 1].0;
                    if here != next {
                        consider(here, next, lt, lp);
                    }
                }
            }
        }
        let Some((score, feature, threshold)) = best else {
            return id;
        };
        if score >= parent - 1e-12 {
            return id;
        }

        // partition in place: left = value <= threshold
        let mut mid = 0;
        for i in 0..samples.len() {
            if self.value(samples[i].0, feature) <= threshold {
                samples.swap(i, mid);
                mid += 1;
            }
        }
        let (l, r) = samples.split_at_mut(mid);
        let left = self.build(l, depth + 1, rng);
        let right = self.build(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

/// Fit a forest on `x` (row-major, `d` columns) against binary `y`.
pub fn forest_fit(x: &[f64], d: usize, y: &[bool], params: ForestParams) -> Result<ForestModel> {
    let n = y.len();
    if n == 0 {
        return Err(Error::Input("forest_fit: no training rows".into()));
    }
    if d == 0 || x.len() != n * d {
        return Err(Error::Contract(format!(
            "forest_fit: {} values for {n} rows of dimension {d}",
            x.len()
        )));
    }
    if params.n_trees == 0 {
        return Err(Error::Input("forest needs at least one tree".into()));
    }
    let mtry = params
        .max_features
        .unwrap_or_else(|| (d as f64).sqrt().floor() as usize)
        .clamp(1, d);

    let single_class = y.iter().all(|&v| v == y[0]);
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut counts = vec![0u32; n];
    let pre = if single_class { None } else { Some(Presorted::new(x, n, d)) };
    let mut stamp = vec![0u32; n];
    let mut next_stamp = 0;
    for t in 0..params.n_trees {
        if single_class {
            trees.push(Tree {
                nodes: vec![Node::Leaf(y[0])],
            });
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(params.seed, t as u64));
        counts.iter_mut().for_each(|c| *c = 0);
        for _ in 0..n {
            counts[rng.random_range(0..n)] += 1;
        }
        let mut samples: Vec<(usize, u32)> = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (i, c))
            .collect();
        let mut b = Builder {
            x,
            y,
            d,
            max_depth: params.max_depth,
            mtry,
            pre: pre.as_ref().expect("presorted for two classes"),
            weight: counts.iter().map(|&c| c as f64).collect(),
            stamp: std::mem::take(&mut stamp),
            next_stamp,
            nodes: Vec::new(),
            buf: Vec::with_capacity(samples.len()),
        };
        b.build(&mut samples, 0, &mut rng);
        stamp = b.stamp;
        next_stamp = b.next_stamp;
        trees.push(Tree { nodes: b.nodes });
    }
    Ok(ForestModel {
        trees,
        n_features: d,
        params,
    })
}

/// Positive-vote fraction for each row of `x`.
pub fn forest_predict(model: &ForestModel, x: &[f64]) -> Result<Vec<f64>> {
    let d = model.n_features;
    if x.len() % d != 0 {
        return Err(Error::Contract(format!(
            "forest_predict: {} values is not a multiple of dimension {d}",
            x.len()
        )));
    }
    let n_trees = model.trees.len() as f64;
    Ok(x
        .chunks(d)
        .map(|row| model.trees.iter().filter(|t| t.vote(row)).count() as f64 / n_trees)
        .collect())
}
