use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{DataContext, FeedbackRule};
use crate::arms::{RewardVector, SuperArm};
use crate::error::{Result, TvsError};

/// Gap kept between the clamp bounds of a constructed instance and the
/// identifiability margin, so the strict inequalities hold.
const CLAMP_SLACK: f64 = 0.01;

/// Synthetic arms whose payout probability may depend on the played set:
/// `theta_i(S) = clamp(base_i + sum_{j in S, j != i} W_ij, lo_i, hi_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SetDependentBernoulli {
    base: Vec<f64>,
    /// Row-major `p x p`, symmetric with zero diagonal.
    interaction: Option<Vec<f64>>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    signals: Option<SuperArm>,
}

fn check_probs(base: &[f64]) -> Result<()> {
    match base.iter().position(|t| !(0.0..=1.0).contains(t)) {
        Some(i) => Err(TvsError::param(format!(
            "arm {i} has mean reward {} outside [0,1]",
            base[i]
        ))),
        None => Ok(()),
    }
}

impl SetDependentBernoulli {
    /// Independent arms with fixed payout probabilities.
    pub fn independent(base: Vec<f64>) -> Result<Self> {
        check_probs(&base)?;
        let p = base.len();
        Ok(SetDependentBernoulli {
            base,
            interaction: None,
            lo: vec![0.0; p],
            hi: vec![1.0; p],
            signals: None,
        })
    }

    /// `num_signals` arms at `signal_theta` followed by noise arms at `noise_theta`.
    pub fn two_level(p: usize, num_signals: usize, signal_theta: f64, noise_theta: f64) -> Result<Self> {
        if num_signals > p {
            return Err(TvsError::param(format!(
                "{num_signals} signals exceed p = {p}"
            )));
        }
        let base = (0..p)
            .map(|i| if i < num_signals { signal_theta } else { noise_theta })
            .collect();
        SetDependentBernoulli::independent(base)
    }

    /// Arms coupled through a symmetric interaction matrix `w` (row-major).
    pub fn with_interaction(base: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        let mut rule = SetDependentBernoulli::independent(base)?;
        let p = rule.p();
        if w.len() != p * p {
            return Err(TvsError::structural(format!(
                "interaction has {} entries, expected {}",
                w.len(),
                p * p
            )));
        }
        for i in 0..p {
            if w[i * p + i] != 0.0 {
                return Err(TvsError::param(format!("interaction diagonal at {i} is nonzero")));
            }
            for j in 0..i {
                if w[i * p + j] != w[j * p + i] {
                    return Err(TvsError::param(format!(
                        "interaction is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        rule.interaction = Some(w);
        Ok(rule)
    }

    /// Random instance in which `signals` is strongly identifiable with margin
    /// `alpha`: every signal arm pays out with probability above `0.5 + alpha`
    /// in every subset, noise arms below `0.5 - alpha`, and each signal arm is
    /// best off when played together with exactly the signal set.
    ///
    /// Signal-signal couplings are non-negative, signal-noise couplings
    /// non-positive, noise-noise couplings of either sign, all bounded by
    /// `coupling` in magnitude.
    pub fn strongly_identifiable<R: Rng + ?Sized>(
        p: usize,
        signals: &SuperArm,
        alpha: f64,
        coupling: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha + CLAMP_SLACK < 0.5) {
            return Err(TvsError::param(format!(
                "margin must lie in (0, {}), got {alpha}",
                0.5 - CLAMP_SLACK
            )));
        }
        if signals.iter().any(|i| i >= p) {
            return Err(TvsError::structural(format!("signals exceed p = {p}")));
        }
        let upper_noise = 0.5 - alpha - CLAMP_SLACK;
        let lower_signal = 0.5 + alpha + CLAMP_SLACK;
        let mut base = vec![0.0; p];
        let mut lo = vec![0.0; p];
        let mut hi = vec![1.0; p];
        for i in 0..p {
            if signals.contains(i) {
                base[i] = rng.random_range(lower_signal..=1.0);
                lo[i] = lower_signal;
            } else {
                base[i] = rng.random_range(0.0..=upper_noise);
                hi[i] = upper_noise;
            }
        }
        let mut w = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..i {
                let mag = coupling * rng.random::<f64>();
                let v = match (signals.contains(i), signals.contains(j)) {
                    (true, true) => mag,
                    (false, false) => {
                        if rng.random::<bool>() {
                            mag
                        } else {
                            -mag
                        }
                    }
                    _ => -mag,
                };
                w[i * p + j] = v;
                w[j * p + i] = v;
            }
        }
        Ok(SetDependentBernoulli {
            base,
            interaction: Some(w),
            lo,
            hi,
            signals: Some(signals.clone()),
        })
    }

    pub fn p(&self) -> usize {
        self.base.len()
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn has_interaction(&self) -> bool {
        self.interaction.is_some()
    }

    /// Signal set the instance was constructed around, if any.
    pub fn declared_signals(&self) -> Option<&SuperArm> {
        self.signals.as_ref()
    }

    /// Realised payout probability of `arm` when `subset` is played.
    pub fn theta(&self, arm: usize, subset: &SuperArm) -> f64 {
        let mut t = self.base[arm];
        if let Some(w) = &self.interaction {
            let p = self.p();
            t += subset
                .iter()
                .filter(|&j| j != arm)
                .map(|j| w[arm * p + j])
                .sum::<f64>();
        }
        t.clamp(self.lo[arm], self.hi[arm])
    }

    /// One Bernoulli draw per played arm.
    pub fn sample(&self, subset: &SuperArm, rng: &mut dyn RngCore) -> Result<RewardVector> {
        if let Some(&last) = subset.members().last() {
            if last >= self.p() {
                return Err(TvsError::structural(format!(
                    "arm {last} out of range for p = {}",
                    self.p()
                )));
            }
        }
        let bits = subset
            .iter()
            .map(|i| {
                let t = self.theta(i, subset);
                rng.random::<f64>() < t
            })
            .collect();
        RewardVector::new(subset, bits)
    }
}

impl FeedbackRule for SetDependentBernoulli {
    fn evaluate(
        &self,
        subset: &SuperArm,
        _ctx: &DataContext<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<RewardVector> {
        self.sample(subset, rng)
    }

    fn mean_reward(&self, arm: usize, subset: &SuperArm) -> Option<f64> {
        Some(self.theta(arm, subset))
    }

    fn name(&self) -> &'static str {
        "bernoulli"
    }
}

/// Outcome of checking strong identifiability of a signal set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentifiabilityReport {
    pub passed: bool,
    pub alpha: f64,
    /// Smallest distance from one half, on the correct side, over every
    /// (arm, subset) pair examined. Negative when an arm sits on the wrong side.
    pub worst_margin: f64,
    pub worst_arm: Option<usize>,
    pub worst_subset: Option<SuperArm>,
    /// Signal arms that pay out more in some subset than in the signal set.
    pub dominance_violations: usize,
    pub subsets_checked: u64,
    pub exhaustive: bool,
}

/// Checks that every signal arm pays out above `0.5 + alpha` and every noise
/// arm below `0.5 - alpha` in every subset containing it, and that signal
/// arms peak at the signal set. Enumerates all subsets when `p <= 20`,
/// otherwise samples `budget` random subsets from `seed`.
pub fn validate_strong_identifiability(
    rule: &SetDependentBernoulli,
    signals: &SuperArm,
    alpha: f64,
    budget: usize,
    seed: u64,
) -> IdentifiabilityReport {
    let p = rule.p();
    let at_star: Vec<f64> = (0..p).map(|i| rule.theta(i, signals)).collect();
    let mut report = IdentifiabilityReport {
        passed: true,
        alpha,
        worst_margin: f64::INFINITY,
        worst_arm: None,
        worst_subset: None,
        dominance_violations: 0,
        subsets_checked: 0,
        exhaustive: p <= 20,
    };
    let check = |subset: &SuperArm, report: &mut IdentifiabilityReport| {
        report.subsets_checked += 1;
        for i in subset.iter() {
            let t = rule.theta(i, subset);
            let margin = if signals.contains(i) {
                if t > at_star[i] {
                    report.dominance_violations += 1;
                }
                t - 0.5
            } else {
                0.5 - t
            };
            if margin < report.worst_margin {
                report.worst_margin = margin;
                report.worst_arm = Some(i);
                report.worst_subset = Some(subset.clone());
            }
        }
    };
    if report.exhaustive {
        for mask in 1u64..(1u64 << p) {
            let subset = SuperArm::from_indices((0..p).filter(|&i| mask >> i & 1 == 1));
            check(&subset, &mut report);
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for k in 0..budget {
            // every arm appears in at least budget / p subsets
            let anchor = k % p;
            let subset = SuperArm::from_indices(
                (0..p).filter(|&i| i == anchor || rng.random::<bool>()),
            );
            check(&subset, &mut report);
        }
    }
    if report.worst_margin.is_infinite() {
        report.worst_margin = 0.5;
    }
    report.passed = report.worst_margin > alpha && report.dominance_violations == 0;
    report
}
