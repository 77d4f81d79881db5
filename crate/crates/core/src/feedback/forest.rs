//! Randomised regression forest used as a stochastic relevance oracle.
//!
//! Trees are grown greedily on bootstrap resamples, each node scoring `mtry`
//! features at within-node quantile cut points. Splits must clear both a
//! fraction of the root sum of squares and a multiple of the node variance,
//! so pure-noise variables are rarely used. A variable counts as "used" when
//! at least one split in the ensemble is on it.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataContext, FeedbackRule};
use crate::arms::{RewardVector, SuperArm};
use crate::error::{Result, TvsError};

/// Number of features scored at each node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mtry {
    Sqrt,
    All,
    Count(usize),
}

impl Mtry {
    /// Features to try when `m` are available; always in `1..=m` for `m > 0`.
    pub fn resolve(&self, m: usize) -> usize {
        let k = match self {
            Mtry::Sqrt => (m as f64).sqrt().round() as usize,
            Mtry::All => m,
            Mtry::Count(k) => *k,
        };
        k.clamp(1, m.max(1))
    }
}

impl fmt::Display for Mtry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mtry::Sqrt => f.write_str("sqrt"),
            Mtry::All => f.write_str("all"),
            Mtry::Count(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for Mtry {
    type Err = TvsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt" => Ok(Mtry::Sqrt),
            "all" => Ok(Mtry::All),
            other => match other.parse::<usize>() {
                Ok(k) if k > 0 => Ok(Mtry::Count(k)),
                _ => Err(TvsError::param(format!(
                    "mtry must be 'sqrt', 'all' or a positive integer, got '{other}'"
                ))),
            },
        }
    }
}

impl Serialize for Mtry {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Mtry::Count(k) => s.serialize_u64(*k as u64),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Mtry {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(k) => Mtry::from_str(&k.to_string()),
            Raw::Str(s) => Mtry::from_str(&s),
        }
        .map_err(serde::de::Error::custom)
    }
}

/// Forest shape and the importance cut for the streaming reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub num_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub mtry: Mtry,
    pub split_candidates: usize,
    pub bootstrap: bool,
    /// Average splits per tree a variable needs in streaming mode.
    pub importance_threshold: f64,
    /// A split must remove at least this fraction of the root sum of squares.
    pub min_gain: f64,
    /// A split must also remove this many multiples of the node's
    /// per-observation variance, which keeps deep nodes from fitting noise.
    pub split_significance: f64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            num_trees: 10,
            max_depth: 6,
            min_leaf: 5,
            mtry: Mtry::All,
            split_candidates: 32,
            bootstrap: true,
            importance_threshold: 1.0,
            min_gain: 0.02,
            split_significance: 25.0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TvsError::param(m.to_string()));
        if self.num_trees == 0 {
            return bad("forest needs at least one tree");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be positive");
        }
        if self.min_leaf == 0 {
            return bad("min_leaf must be positive");
        }
        if self.split_candidates == 0 {
            return bad("split_candidates must be positive");
        }
        if let Mtry::Count(0) = self.mtry {
            return bad("mtry must be positive");
        }
        if !(self.importance_threshold >= 0.0) {
            return bad("importance_threshold must be non-negative");
        }
        if !(self.min_gain >= 0.0) {
            return bad("min_gain must be non-negative");
        }
        if !(self.split_significance >= 0.0) {
            return bad("split_significance must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf {
        value: f64,
    },
    Split {
        /// Position within the fitted subset.
        feature: usize,
        cut: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, features: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    cut,
                    left,
                    right,
                } => k = if features[*feature] <= *cut { *left } else { *right },
            }
        }
    }
}

/// A fitted forest together with per-variable split counts.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedForest {
    subset: SuperArm,
    trees: Vec<Tree>,
    split_counts: Vec<u32>,
}

impl FittedForest {
    pub fn subset(&self) -> &SuperArm {
        &self.subset
    }

    /// Split counts aligned with `subset()`.
    pub fn split_counts(&self) -> &[u32] {
        &self.split_counts
    }

    pub fn split_count(&self, arm: usize) -> Option<u32> {
        self.subset
            .members()
            .binary_search(&arm)
            .ok()
            .map(|k| self.split_counts[k])
    }

    pub fn total_splits(&self) -> u32 {
        self.split_counts.iter().sum()
    }

    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    /// Mean of the tree predictions for a full-width row of the dataset.
    pub fn predict(&self, row: &[f64]) -> f64 {
        let features: Vec<f64> = self.subset.iter().map(|j| row[j]).collect();
        self.trees.iter().map(|t| t.predict(&features)).sum::<f64>() / self.trees.len() as f64
    }
}

struct Grower<'a> {
    cols: &'a [Vec<f64>],
    y: &'a [f64],
    params: &'a ForestParams,
    min_gain_abs: f64,
    counts: Vec<u32>,
    nodes: Vec<Node>,
    scratch: Vec<(f64, f64)>,
}

struct BestSplit {
    feature: usize,
    cut: f64,
    gain: f64,
}

fn sse(y: &[f64], idx: &[usize]) -> f64 {
    let n = idx.len() as f64;
    let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / n;
    idx.iter().map(|&i| (y[i] - mean).powi(2)).sum()
}

impl Grower<'_> {
    fn grow(&mut self, idx: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        let mean = idx.iter().map(|&i| self.y[i]).sum::<f64>() / idx.len() as f64;
        self.nodes.push(Node::Leaf { value: mean });
        if depth >= self.params.max_depth || idx.len() < 2 * self.params.min_leaf {
            return id;
        }
        let node_sse = sse(self.y, idx);
        if node_sse <= 0.0 {
            return id;
        }
        let Some(best) = self.best_split(idx, node_sse, rng) else {
            return id;
        };
        let col = &self.cols[best.feature];
        let mut split = 0;
        for k in 0..idx.len() {
            if col[idx[k]] <= best.cut {
                idx.swap(k, split);
                split += 1;
            }
        }
        self.counts[best.feature] += 1;
        let (lo, hi) = idx.split_at_mut(split);
        let left = self.grow(lo, depth + 1, rng);
        let right = self.grow(hi, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            cut: best.cut,
            left,
            right,
        };
        id
    }

    fn best_split(&mut self, idx: &[usize], node_sse: f64, rng: &mut ChaCha8Rng) -> Option<BestSplit> {
        let m = self.cols.len();
        let tries = self.params.mtry.resolve(m);
        // partial Fisher-Yates over feature positions
        let mut features: Vec<usize> = (0..m).collect();
        for k in 0..tries {
            let j = rng.random_range(k..m);
            features.swap(k, j);
        }
        let min_leaf = self.params.min_leaf;
        let n = idx.len();
        let n_f = n as f64;
        let mut best: Option<BestSplit> = None;
        for &f in &features[..tries] {
            let col = &self.cols[f];
            self.scratch.clear();
            self.scratch.extend(idx.iter().map(|&i| (col[i], self.y[i])));
            self.scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if self.scratch[0].0 == self.scratch[n - 1].0 {
                continue;
            }
            let mut prefix = Vec::with_capacity(n + 1);
            let (mut s, mut s2) = (0.0, 0.0);
            prefix.push((0.0, 0.0));
            for &(_, yv) in &self.scratch {
                s += yv;
                s2 += yv * yv;
                prefix.push((s, s2));
            }
            let (tot, tot2) = prefix[n];
            let mut last_left = 0;
            for q in 1..=self.params.split_candidates {
                let pos = (q * n) / (self.params.split_candidates + 1);
                let cut = self.scratch[pos.min(n - 1)].0;
                // left child: every observation with value <= cut
                let left = self.scratch.partition_point(|e| e.0 <= cut);
                if left == last_left || left < min_leaf || n - left < min_leaf {
                    continue;
                }
                last_left = left;
                let (ls, ls2) = prefix[left];
                let (nl, nr) = (left as f64, n_f - left as f64);
                let sse_l = ls2 - ls * ls / nl;
                let sse_r = (tot2 - ls2) - (tot - ls).powi(2) / nr;
                let gain = node_sse - sse_l - sse_r;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(BestSplit { feature: f, cut, gain });
                }
            }
        }
        let noise_floor = self.params.split_significance * node_sse / n_f;
        best.filter(|b| b.gain > self.min_gain_abs && b.gain > noise_floor && b.gain > 1e-12 * node_sse)
    }
}

/// Fits `params.num_trees` trees on the columns of `subset` visible through
/// `ctx` and counts the splits made on each variable.
pub fn forest_fit(
    subset: &SuperArm,
    ctx: &DataContext<'_>,
    params: &ForestParams,
    rng: &mut dyn RngCore,
) -> Result<FittedForest> {
    params.validate()?;
    if subset.is_empty() {
        return Err(TvsError::param("cannot fit a forest on an empty subset"));
    }
    let n = ctx.n();
    if n < 2 * params.min_leaf {
        return Err(TvsError::param(format!(
            "forest needs at least {} observations, got {n}",
            2 * params.min_leaf
        )));
    }
    let all: Vec<usize> = (0..n).collect();
    let (cols, y) = ctx.gather(subset, &all, "forest")?;
    let root_sse = sse(&y, &all);
    let mut grower = Grower {
        cols: &cols,
        y: &y,
        params,
        min_gain_abs: params.min_gain * root_sse,
        counts: vec![0; subset.len()],
        nodes: Vec::new(),
        scratch: Vec::with_capacity(n),
    };
    // one substream per tree, seeded up front from the caller's stream
    let seeds: Vec<u64> = (0..params.num_trees).map(|_| rng.next_u64()).collect();
    let mut trees = Vec::with_capacity(params.num_trees);
    for seed in seeds {
        let mut tree_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = if params.bootstrap {
            (0..n).map(|_| tree_rng.random_range(0..n)).collect()
        } else {
            all.clone()
        };
        grower.nodes = Vec::new();
        grower.grow(&mut idx, 0, &mut tree_rng);
        trees.push(Tree {
            nodes: std::mem::take(&mut grower.nodes),
        });
    }
    Ok(FittedForest {
        subset: subset.clone(),
        trees,
        split_counts: grower.counts,
    })
}

/// How split counts become rewards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForestMode {
    /// Reward every variable split on at least once (full-data, refit randomness).
    Offline,
    /// Reward variables whose splits per tree reach the importance threshold.
    Online,
}

/// Forest-based feedback rule.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestRule {
    pub params: ForestParams,
    pub mode: ForestMode,
}

impl ForestRule {
    pub fn new(params: ForestParams, mode: ForestMode) -> Result<Self> {
        params.validate()?;
        Ok(ForestRule { params, mode })
    }

    pub fn rewards_from(&self, forest: &FittedForest) -> Result<RewardVector> {
        let trees = forest.num_trees() as f64;
        let bits = forest
            .split_counts()
            .iter()
            .map(|&c| match self.mode {
                ForestMode::Offline => c >= 1,
                ForestMode::Online => c as f64 / trees >= self.params.importance_threshold,
            })
            .collect();
        RewardVector::new(forest.subset(), bits)
    }
}

impl FeedbackRule for ForestRule {
    fn evaluate(
        &self,
        subset: &SuperArm,
        ctx: &DataContext<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<RewardVector> {
        if subset.is_empty() {
            return Ok(RewardVector::default());
        }
        let forest = forest_fit(subset, ctx, &self.params, rng)?;
        self.rewards_from(&forest)
    }

    fn name(&self) -> &'static str {
        "forest"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_friedman, Dataset, Setup};
    use ndarray::Array2;
    use rand_distr::StandardNormal;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn dataset(x: Array2<f64>, y: Vec<f64>) -> Dataset {
        Dataset::new(x, y, SuperArm::empty(), 1.0, Setup::Linear).unwrap()
    }

    fn uniform_design(n: usize, p: usize, r: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((n, p), |_| r.random::<f64>())
    }

    #[test]
    fn mtry_parsing_and_resolution() {
        assert_eq!("sqrt".parse::<Mtry>().unwrap(), Mtry::Sqrt);
        assert_eq!("7".parse::<Mtry>().unwrap(), Mtry::Count(7));
        assert!("0".parse::<Mtry>().is_err());
        assert_eq!(Mtry::Sqrt.resolve(500), 22);
        assert_eq!(Mtry::Count(9).resolve(4), 4);
        assert_eq!(Mtry::All.resolve(3), 3);
    }

    #[test]
    fn constant_response_never_splits() {
        let mut r = rng(0);
        let d = dataset(uniform_design(100, 4, &mut r), vec![3.0; 100]);
        let f = forest_fit(&SuperArm::range(4), &DataContext::full(&d), &ForestParams::default(), &mut r)
            .unwrap();
        assert_eq!(f.total_splits(), 0);
        let rule = ForestRule::new(ForestParams::default(), ForestMode::Offline).unwrap();
        let rw = rule.evaluate(&SuperArm::range(4), &DataContext::full(&d), &mut r).unwrap();
        assert_eq!(rw.hits(), 0);
    }

    #[test]
    fn depth_one_tree_splits_once() {
        let mut r = rng(1);
        let x = uniform_design(200, 3, &mut r);
        let y = x.column(0).iter().map(|v| 5.0 * v).collect();
        let d = dataset(x, y);
        let params = ForestParams {
            num_trees: 1,
            max_depth: 1,
            ..ForestParams::default()
        };
        let f = forest_fit(&SuperArm::range(3), &DataContext::full(&d), &params, &mut r).unwrap();
        assert!(f.total_splits() <= 1);
    }

    #[test]
    fn signal_column_dominates_noise() {
        let mut wins = 0;
        for seed in 0..100 {
            let mut r = rng(seed);
            let x = uniform_design(500, 8, &mut r);
            let y = x
                .column(1)
                .iter()
                .map(|v| 10.0 * v + 0.1 * r.sample::<f64, _>(StandardNormal))
                .collect();
            let d = dataset(x, y);
            let s = SuperArm::from_indices([1, 7]);
            let f = forest_fit(&s, &DataContext::full(&d), &ForestParams::default(), &mut r).unwrap();
            if f.split_count(1).unwrap() > f.split_count(7).unwrap() {
                wins += 1;
            }
        }
        assert!(wins >= 95, "{wins}/100");
    }

    #[test]
    fn forest_predicts_signal() {
        let mut r = rng(2);
        let x = uniform_design(400, 2, &mut r);
        let y: Vec<f64> = x.column(0).iter().map(|v| if *v > 0.5 { 4.0 } else { 0.0 }).collect();
        let d = dataset(x, y);
        let f = forest_fit(&SuperArm::range(2), &DataContext::full(&d), &ForestParams::default(), &mut r)
            .unwrap();
        assert!((f.predict(&[0.9, 0.1]) - 4.0).abs() < 0.5);
        assert!(f.predict(&[0.1, 0.9]).abs() < 0.5);
    }

    #[test]
    fn zero_threshold_rewards_everything_online() {
        let mut r = rng(3);
        let d = gen_friedman(120, 12, 1.0, false, &mut r).unwrap();
        let params = ForestParams {
            importance_threshold: 0.0,
            ..ForestParams::default()
        };
        let rule = ForestRule::new(params, ForestMode::Online).unwrap();
        let s = SuperArm::range(12);
        let rw = rule.evaluate(&s, &DataContext::full(&d), &mut r).unwrap();
        assert_eq!(rw.hits(), 12);
    }

    #[test]
    fn friedman_signals_outscore_noise() {
        let mut r = rng(4);
        let d = gen_friedman(300, 10, 1.0, false, &mut r).unwrap();
        let rule = ForestRule::new(ForestParams::default(), ForestMode::Offline).unwrap();
        let s = SuperArm::range(10);
        let mut hits = [0u32; 10];
        for _ in 0..200 {
            for (i, h) in rule.evaluate(&s, &DataContext::full(&d), &mut r).unwrap().iter() {
                hits[i] += h as u32;
            }
        }
        let worst_signal = hits[..5].iter().min().unwrap();
        let best_noise = hits[5..].iter().max().unwrap();
        assert!(worst_signal > best_noise, "{hits:?}");
    }

    #[test]
    fn too_few_rows_rejected() {
        let mut r = rng(5);
        let d = dataset(uniform_design(8, 2, &mut r), vec![0.0; 8]);
        let err = forest_fit(&SuperArm::range(2), &DataContext::full(&d), &ForestParams::default(), &mut r);
        assert!(matches!(err, Err(TvsError::Parameter(_))));
        let err = forest_fit(&SuperArm::empty(), &DataContext::full(&d), &ForestParams::default(), &mut r);
        assert!(err.is_err());
    }

    #[test]
    fn refit_is_reproducible() {
        let d = gen_friedman(150, 20, 1.0, false, &mut rng(6)).unwrap();
        let rule = ForestRule::new(ForestParams::default(), ForestMode::Offline).unwrap();
        let s = SuperArm::from_indices([0, 3, 9, 14, 19]);
        let a = rule.evaluate(&s, &DataContext::full(&d), &mut rng(7)).unwrap();
        let b = rule.evaluate(&s, &DataContext::full(&d), &mut rng(7)).unwrap();
        assert_eq!(a, b);
    }
}
