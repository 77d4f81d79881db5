//! Combinatorial Beta–Bernoulli bandit core.
//!
//! Every candidate variable is an arm with a Beta posterior over its reward
//! probability. One iteration samples a yield probability per arm, plays the
//! subset chosen by the computational oracle, and feeds the binary rewards of
//! the played arms back into their posteriors.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::beta;
use crate::error::{Result, TvsError};

/// The cost `(sqrt(5) - 1) / 2`, under which false positives and false
/// negatives cost the same and the oracle threshold is exactly one half.
pub fn golden_cost() -> f64 {
    (5f64.sqrt() - 1.0) / 2.0
}

/// Cost parameter `C` of the log global reward and the constants derived from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    cost: f64,
    threshold: f64,
    gain: f64,
    penalty: f64,
}

impl CostParams {
    pub fn new(cost: f64) -> Result<Self> {
        if !(cost > 0.0 && cost < 1.0) {
            return Err(TvsError::param(format!("cost C must lie in (0,1), got {cost}")));
        }
        let penalty = (1.0 / cost).ln();
        let gain = ((cost + 1.0) / cost).ln();
        Ok(CostParams {
            cost,
            threshold: penalty / gain,
            gain,
            penalty,
        })
    }

    pub fn golden() -> Self {
        CostParams::new(golden_cost()).expect("golden cost lies in (0,1)")
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    /// Smallest yield probability that still earns a non-negative expected reward.
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// `log((C + 1) / C)`, the spread between a hit and a miss.
    pub fn gain(&self) -> f64 {
        self.gain
    }

    /// `log(1 / C)`, the cost of playing an arm that misses.
    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    /// Expected contribution `theta * gain - penalty` of one played arm.
    pub fn contribution(&self, theta: f64) -> f64 {
        theta * self.gain - self.penalty
    }
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams::golden()
    }
}

/// Lookup of the cost parameters that apply to a given arm.
pub trait ArmCosts {
    fn for_arm(&self, arm: usize) -> &CostParams;

    /// True when every arm shares the same parameters.
    fn is_shared(&self) -> bool;
}

impl ArmCosts for CostParams {
    fn for_arm(&self, _arm: usize) -> &CostParams {
        self
    }

    fn is_shared(&self) -> bool {
        true
    }
}

/// Shared or per-arm (measurement cost) parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CostModel {
    Shared(CostParams),
    PerArm(Vec<CostParams>),
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel::Shared(CostParams::golden())
    }
}

impl ArmCosts for CostModel {
    fn for_arm(&self, arm: usize) -> &CostParams {
        match self {
            CostModel::Shared(c) => c,
            CostModel::PerArm(cs) => &cs[arm],
        }
    }

    fn is_shared(&self) -> bool {
        matches!(self, CostModel::Shared(_))
    }
}

/// Posterior counts for one arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    a: f64,
    b: f64,
    a0: f64,
    b0: f64,
    pulls: u64,
    successes: u64,
}

impl ArmState {
    pub fn new(a0: f64, b0: f64) -> Result<Self> {
        if !(a0 > 0.0 && b0 > 0.0 && a0.is_finite() && b0.is_finite()) {
            return Err(TvsError::param(format!(
                "Beta prior counts must be positive and finite, got ({a0}, {b0})"
            )));
        }
        Ok(ArmState {
            a: a0,
            b: b0,
            a0,
            b0,
            pulls: 0,
            successes: 0,
        })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn prior(&self) -> (f64, f64) {
        (self.a0, self.b0)
    }

    pub fn pulls(&self) -> u64 {
        self.pulls
    }

    pub fn successes(&self) -> u64 {
        self.successes
    }

    pub fn record(&mut self, success: bool) {
        self.pulls += 1;
        if success {
            self.successes += 1;
            self.a += 1.0;
        } else {
            self.b += 1.0;
        }
    }

    /// Posterior mean `a / (a + b)`.
    pub fn inclusion_probability(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    /// Fraction of pulls that paid out; `None` before the first pull.
    pub fn empirical_mean(&self) -> Option<f64> {
        (self.pulls > 0).then(|| self.successes as f64 / self.pulls as f64)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        beta::beta(rng, self.a, self.b)
    }
}

/// A played subset of arms, kept sorted and free of duplicates.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SuperArm(Vec<usize>);

impl SuperArm {
    pub fn empty() -> Self {
        SuperArm(Vec::new())
    }

    /// Sorts and de-duplicates `indices`.
    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I) -> Self {
        let mut v: Vec<usize> = indices.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        SuperArm(v)
    }

    /// Like [`SuperArm::from_indices`] but rejects indices `>= p`.
    pub fn checked<I: IntoIterator<Item = usize>>(indices: I, p: usize) -> Result<Self> {
        let s = SuperArm::from_indices(indices);
        match s.0.last() {
            Some(&last) if last >= p => Err(TvsError::structural(format!(
                "arm index {last} out of range for p = {p}"
            ))),
            _ => Ok(s),
        }
    }

    /// `{0, 1, ..., n - 1}`.
    pub fn range(n: usize) -> Self {
        SuperArm((0..n).collect())
    }

    pub fn members(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, arm: usize) -> bool {
        self.0.binary_search(&arm).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn intersection_len(&self, other: &SuperArm) -> usize {
        self.iter().filter(|&i| other.contains(i)).count()
    }

    /// Members of `self` that are not in `other`.
    pub fn difference(&self, other: &SuperArm) -> SuperArm {
        SuperArm(self.iter().filter(|&i| !other.contains(i)).collect())
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }
}

impl fmt::Display for SuperArm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, i) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{i}")?;
        }
        Ok(())
    }
}

impl FromIterator<usize> for SuperArm {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        SuperArm::from_indices(iter)
    }
}

/// Binary rewards of the arms played in one iteration, sorted by arm index.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardVector {
    entries: Vec<(usize, bool)>,
}

impl RewardVector {
    /// Pairs `bits[k]` with the `k`-th member of `subset`.
    pub fn new(subset: &SuperArm, bits: Vec<bool>) -> Result<Self> {
        if subset.len() != bits.len() {
            return Err(TvsError::structural(format!(
                "{} rewards for a subset of {} arms",
                bits.len(),
                subset.len()
            )));
        }
        Ok(RewardVector {
            entries: subset.iter().zip(bits).collect(),
        })
    }

    pub fn from_pairs<I: IntoIterator<Item = (usize, bool)>>(pairs: I) -> Result<Self> {
        let mut entries: Vec<(usize, bool)> = pairs.into_iter().collect();
        entries.sort_unstable_by_key(|e| e.0);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(TvsError::structural("duplicate arm in reward vector"));
        }
        Ok(RewardVector { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, arm: usize) -> Option<bool> {
        self.entries
            .binary_search_by_key(&arm, |e| e.0)
            .ok()
            .map(|k| self.entries[k].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, bool)> + '_ {
        self.entries.iter().copied()
    }

    pub fn arms(&self) -> SuperArm {
        SuperArm(self.entries.iter().map(|e| e.0).collect())
    }

    pub fn hits(&self) -> usize {
        self.entries.iter().filter(|e| e.1).count()
    }

    /// Fails unless the key set equals `subset`.
    pub fn check_keys(&self, subset: &SuperArm) -> Result<()> {
        let same = self.entries.len() == subset.len()
            && self.entries.iter().zip(subset.iter()).all(|(e, i)| e.0 == i);
        if same {
            Ok(())
        } else {
            Err(TvsError::structural(format!(
                "reward arms {{{}}} do not match played subset {{{subset}}}",
                self.arms()
            )))
        }
    }
}

/// Vector state of a Thompson variable-selection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditState {
    arms: Vec<ArmState>,
    iteration: u64,
    costs: CostModel,
}

impl BanditState {
    /// `p` arms sharing the prior `Beta(a0, b0)`.
    pub fn new(p: usize, a0: f64, b0: f64, costs: CostModel) -> Result<Self> {
        let arm = ArmState::new(a0, b0)?;
        BanditState::from_arms(vec![arm; p], costs)
    }

    pub fn from_arms(arms: Vec<ArmState>, costs: CostModel) -> Result<Self> {
        if let CostModel::PerArm(cs) = &costs {
            if cs.len() != arms.len() {
                return Err(TvsError::structural(format!(
                    "{} per-arm costs for {} arms",
                    cs.len(),
                    arms.len()
                )));
            }
        }
        Ok(BanditState {
            arms,
            iteration: 0,
            costs,
        })
    }

    pub fn p(&self) -> usize {
        self.arms.len()
    }

    pub fn arms(&self) -> &[ArmState] {
        &self.arms
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn costs(&self) -> &CostModel {
        &self.costs
    }

    /// One independent `Beta(a_i, b_i)` draw per arm.
    pub fn sample_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.arms.iter().map(|arm| arm.sample(rng)).collect()
    }

    /// Posterior means `pi_i = a_i / (a_i + b_i)`.
    pub fn inclusion_probabilities(&self) -> Vec<f64> {
        self.arms.iter().map(ArmState::inclusion_probability).collect()
    }

    /// Credits each played arm with its reward and advances the iteration
    /// counter. Arms outside `subset` are untouched.
    pub fn update(&mut self, subset: &SuperArm, rewards: &RewardVector) -> Result<()> {
        rewards.check_keys(subset)?;
        if let Some(&last) = subset.members().last() {
            if last >= self.arms.len() {
                return Err(TvsError::structural(format!(
                    "arm index {last} out of range for p = {}",
                    self.arms.len()
                )));
            }
        }
        for (i, hit) in rewards.iter() {
            self.arms[i].record(hit);
        }
        self.iteration += 1;
        Ok(())
    }
}

/// `{i : theta_i >= threshold_i}`, the maximiser of the expected reward.
pub fn oracle_unconstrained<K: ArmCosts + ?Sized>(theta: &[f64], costs: &K) -> SuperArm {
    SuperArm(
        theta
            .iter()
            .enumerate()
            .filter(|&(i, &t)| t >= costs.for_arm(i).threshold())
            .map(|(i, _)| i)
            .collect(),
    )
}

/// Threshold-passing arms among the top `q_star` by sampled probability.
///
/// Ties in the ranking go to the lower arm index. With per-arm costs the
/// ranking uses each arm's expected contribution instead of raw `theta`.
pub fn oracle_constrained<K: ArmCosts + ?Sized>(
    theta: &[f64],
    costs: &K,
    q_star: usize,
) -> SuperArm {
    let key = |i: usize| {
        if costs.is_shared() {
            theta[i]
        } else {
            costs.for_arm(i).contribution(theta[i])
        }
    };
    let mut passing: Vec<usize> = oracle_unconstrained(theta, costs).into_vec();
    if passing.len() > q_star {
        // stable sort keeps index order among equal keys
        passing.sort_by(|&i, &j| key(j).total_cmp(&key(i)));
        passing.truncate(q_star);
    }
    SuperArm::from_indices(passing)
}

/// Realised reward `sum_{i in S} log(C + gamma_i)`.
pub fn global_reward<K: ArmCosts + ?Sized>(
    subset: &SuperArm,
    rewards: &RewardVector,
    costs: &K,
) -> Result<f64> {
    rewards.check_keys(subset)?;
    Ok(rewards
        .iter()
        .map(|(i, hit)| {
            let c = costs.for_arm(i).cost();
            (c + if hit { 1.0 } else { 0.0 }).ln()
        })
        .sum())
}

/// Expected reward of `subset` when arm `i` pays out with probability `theta[i]`.
pub fn expected_reward<K: ArmCosts + ?Sized>(subset: &SuperArm, theta: &[f64], costs: &K) -> f64 {
    subset
        .iter()
        .map(|i| costs.for_arm(i).contribution(theta[i]))
        .sum()
}

/// Expected reward when arm probabilities depend on the played set.
pub fn expected_reward_setdep<K, F>(subset: &SuperArm, theta_fn: F, costs: &K) -> f64
where
    K: ArmCosts + ?Sized,
    F: Fn(usize, &SuperArm) -> f64,
{
    subset
        .iter()
        .map(|i| costs.for_arm(i).contribution(theta_fn(i, subset)))
        .sum()
}
