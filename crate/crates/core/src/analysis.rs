//! Regret accounting, regret-bound evaluators and selection metrics.

use serde::{Deserialize, Serialize};

use crate::arms::{expected_reward, expected_reward_setdep, ArmCosts, CostParams, SuperArm};
use crate::error::{Result, TvsError};

/// Largest `p` for which subset enumeration is attempted.
pub const MAX_EXHAUSTIVE_P: usize = 20;

/// `r(S*) - r(S_t)` under set-dependent mean rewards.
pub fn per_step_regret<K, F>(s_star: &SuperArm, s_t: &SuperArm, theta_fn: F, costs: &K) -> f64
where
    K: ArmCosts + ?Sized,
    F: Fn(usize, &SuperArm) -> f64,
{
    expected_reward_setdep(s_star, &theta_fn, costs) - expected_reward_setdep(s_t, &theta_fn, costs)
}

/// Symmetric-cost form `D sum_i (2 theta_i - 1)[i in S*\S_t] - [i in S_t\S*]`
/// with `D = log(1 + C)`. Agrees with [`per_step_regret`] for independent
/// arms at the golden cost.
pub fn per_step_regret_dform(theta: &[f64], s_star: &SuperArm, s_t: &SuperArm, cost: &CostParams) -> f64 {
    let d = (1.0 + cost.cost()).ln();
    let missed: f64 = s_star.difference(s_t).iter().map(|i| 2.0 * theta[i] - 1.0).sum();
    let extra: f64 = s_t.difference(s_star).iter().map(|i| 2.0 * theta[i] - 1.0).sum();
    d * (missed - extra)
}

/// Optimal subset, its reward and the largest reward gap, by enumerating all
/// `2^p` subsets. Ties keep the first subset in mask order.
pub fn exhaustive_optimum<K, F>(p: usize, theta_fn: F, costs: &K) -> Result<(SuperArm, f64, f64)>
where
    K: ArmCosts + ?Sized,
    F: Fn(usize, &SuperArm) -> f64,
{
    if p > MAX_EXHAUSTIVE_P {
        return Err(TvsError::param(format!(
            "exhaustive search limited to p <= {MAX_EXHAUSTIVE_P}, got {p}"
        )));
    }
    let mut best = (SuperArm::empty(), 0.0);
    let mut worst = 0.0f64;
    for mask in 1u64..(1u64 << p) {
        let s = SuperArm::from_indices((0..p).filter(|&i| mask >> i & 1 == 1));
        let r = expected_reward_setdep(&s, &theta_fn, costs);
        if r > best.1 {
            best = (s, r);
        }
        worst = worst.min(r);
    }
    let (s, r) = best;
    Ok((s, r, r - worst))
}

/// Largest gap `max_S r(S*) - r(S)` for independent arms: every arm with a
/// positive contribution missed and every arm with a negative one played.
pub fn max_gap_independent<K: ArmCosts + ?Sized>(theta: &[f64], costs: &K) -> f64 {
    theta
        .iter()
        .enumerate()
        .map(|(i, &t)| costs.for_arm(i).contribution(t).abs())
        .sum()
}

/// Per-step and cumulative regret of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretLedger {
    pub per_step: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub delta_max: f64,
    pub optimal: SuperArm,
}

impl RegretLedger {
    pub fn new(optimal: SuperArm, delta_max: f64) -> Self {
        RegretLedger {
            per_step: Vec::new(),
            cumulative: Vec::new(),
            delta_max,
            optimal,
        }
    }

    pub fn push(&mut self, regret: f64) {
        let total = self.cumulative.last().copied().unwrap_or(0.0) + regret;
        self.per_step.push(regret);
        self.cumulative.push(total);
    }

    /// `Reg(t)` after `t` iterations; `Reg(0) = 0`.
    pub fn at(&self, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.cumulative[t - 1]
        }
    }

    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }
}

/// Pointwise mean and standard error across equally long curves.
pub fn mean_and_se(curves: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let Some(len) = curves.iter().map(Vec::len).min() else {
        return (Vec::new(), Vec::new());
    };
    let k = curves.len() as f64;
    (0..len)
        .map(|t| {
            let m = curves.iter().map(|c| c[t]).sum::<f64>() / k;
            let se = if curves.len() > 1 {
                let v = curves.iter().map(|c| (c[t] - m).powi(2)).sum::<f64>() / (k - 1.0);
                (v / k).sqrt()
            } else {
                0.0
            };
            (m, se)
        })
        .unzip()
}

/// Least-squares fit of `y` against `ln(t)`; returns (slope, intercept, R^2).
pub fn log_fit(ts: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = ts.len() as f64;
    let xs: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, intercept, r2)
}

/// Gaps `min{theta_j : theta_j > theta_i, j in S*}` for arms outside `S*`
/// that have a larger optimal arm.
pub fn known_size_gaps(theta: &[f64], s_star: &SuperArm) -> Vec<(usize, f64)> {
    (0..theta.len())
        .filter(|&i| !s_star.contains(i))
        .filter_map(|i| {
            s_star
                .iter()
                .map(|j| theta[j])
                .filter(|&t| t > theta[i])
                .min_by(f64::total_cmp)
                .map(|g| (i, g))
        })
        .collect()
}

/// Regret bound for the known-size oracle:
/// `sum_i (D_i - e) ln T / (D_i - 2e)^2 + const_c p / e^4 + p^2`.
pub fn bound_lemma2(gaps: &[(usize, f64)], horizon: f64, epsilon: f64, const_c: f64, p: usize) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(TvsError::param(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(horizon >= 1.0) {
        return Err(TvsError::param(format!("horizon must be >= 1, got {horizon}")));
    }
    if let Some(&(arm, gap)) = gaps.iter().find(|g| !(g.1 > 2.0 * epsilon)) {
        return Err(TvsError::param(format!(
            "arm {arm} has gap {gap} <= 2 epsilon = {}",
            2.0 * epsilon
        )));
    }
    let log_t = horizon.ln();
    let pf = p as f64;
    let sum: f64 = gaps
        .iter()
        .map(|&(_, d)| (d - epsilon) * log_t / (d - 2.0 * epsilon).powi(2))
        .sum();
    Ok(sum + const_c * pf / epsilon.powi(4) + pf * pf)
}

/// Every subset other than `S*` paired with its reward gap, for independent arms.
pub fn enumerate_gaps<K: ArmCosts + ?Sized>(theta: &[f64], s_star: &SuperArm, costs: &K) -> Result<Vec<(SuperArm, f64)>> {
    let p = theta.len();
    if p > MAX_EXHAUSTIVE_P {
        return Err(TvsError::param(format!(
            "gap enumeration limited to p <= {MAX_EXHAUSTIVE_P}, got {p}"
        )));
    }
    let best = expected_reward(s_star, theta, costs);
    Ok((0u64..(1u64 << p))
        .map(|mask| SuperArm::from_indices((0..p).filter(|&i| mask >> i & 1 == 1)))
        .filter(|s| s != s_star)
        .map(|s| {
            let gap = best - expected_reward(&s, theta, costs);
            (s, gap)
        })
        .collect())
}

/// Inputs of the independent-arm, unknown-size regret bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma3Params {
    pub q_star: usize,
    pub epsilon: f64,
    pub const_c: f64,
    pub horizon: f64,
    pub delta_max: f64,
    pub p: usize,
}

/// Per-arm factors `eta_i = max_{S : i in S} 8 B^2 |S| / (D_S - 2B(q*^2 + 2)e)`
/// over the supplied gap map; arms in no supplied subset get zero.
pub fn lemma3_etas(gaps: &[(SuperArm, f64)], params: &Lemma3Params, cost: &CostParams) -> Result<Vec<f64>> {
    let b = cost.gain();
    let q = params.q_star as f64;
    let shift = 2.0 * b * (q * q + 2.0) * params.epsilon;
    let mut etas = vec![0.0f64; params.p];
    for (s, gap) in gaps {
        if !(*gap > shift) {
            return Err(TvsError::param(format!(
                "subset {{{s}}} has gap {gap} <= 2B(q*^2+2)eps = {shift}"
            )));
        }
        let eta = 8.0 * b * b * s.len() as f64 / (gap - shift);
        for i in s.iter() {
            if i >= params.p {
                return Err(TvsError::structural(format!(
                    "subset {{{s}}} exceeds p = {}",
                    params.p
                )));
            }
            etas[i] = etas[i].max(eta);
        }
    }
    Ok(etas)
}

/// `ln T sum eta_i + p (p^2/e^2 + 3) D_max + C (8 D_max / e^2)(4/e^2 + 1)^q* ln(q*/e^2)`.
pub fn bound_lemma3(gaps: &[(SuperArm, f64)], params: &Lemma3Params, cost: &CostParams) -> Result<f64> {
    let eps = params.epsilon;
    if !(eps > 0.0) {
        return Err(TvsError::param(format!("epsilon must be positive, got {eps}")));
    }
    if !(params.horizon >= 1.0) {
        return Err(TvsError::param(format!("horizon must be >= 1, got {}", params.horizon)));
    }
    if params.q_star == 0 {
        return Err(TvsError::param("q_star must be positive"));
    }
    let etas = lemma3_etas(gaps, params, cost)?;
    let pf = params.p as f64;
    let e2 = eps * eps;
    let q = params.q_star as f64;
    Ok(params.horizon.ln() * etas.iter().sum::<f64>()
        + pf * (pf * pf / e2 + 3.0) * params.delta_max
        + params.const_c
            * (8.0 * params.delta_max / e2)
            * (4.0 / e2 + 1.0).powi(params.q_star as i32)
            * (q / e2).ln())
}

/// The constant `c(alpha)` of the correlated-arm bound.
pub fn theorem1_constant(alpha: f64, c1: f64, c2: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(TvsError::param(format!("alpha must lie in (0, 1/2), got {alpha}")));
    }
    let c_tilde = c1 + c2 * (1.0 - 2.0 * alpha) / (32.0 * alpha);
    let a2 = alpha * alpha;
    Ok(c_tilde * (-4.0 * alpha).exp() / -(-a2 / 2.0).exp_m1()
        + (8.0 / a2) / (2.0 * alpha).exp_m1()
        + (-1.0f64).exp() / -(-alpha / 8.0).exp_m1()
        + (8.0 / alpha).ceil() * (3.0 + 1.0 / alpha))
}

/// `D_max [8 p ln T / a^2 + c(a) q* + (2 + 4/a^2) p]`.
pub fn bound_theorem1(
    alpha: f64,
    p: usize,
    q_star: usize,
    horizon: f64,
    delta_max: f64,
    c1: f64,
    c2: f64,
) -> Result<f64> {
    if !(c1 > 0.0 && c2 > 0.0) {
        return Err(TvsError::param(format!("C1 and C2 must be positive, got {c1}, {c2}")));
    }
    if !(horizon >= 1.0) {
        return Err(TvsError::param(format!("horizon must be >= 1, got {horizon}")));
    }
    let c = theorem1_constant(alpha, c1, c2)?;
    let a2 = alpha * alpha;
    let pf = p as f64;
    Ok(delta_max * (8.0 * pf * horizon.ln() / a2 + c * q_star as f64 + (2.0 + 4.0 / a2) * pf))
}

/// Bernoulli Kullback–Leibler divergence `d(a, b)` with `0 ln 0 = 0`;
/// infinite when `b` is 0 or 1 and differs from `a`.
pub fn kl_divergence(a: f64, b: f64) -> f64 {
    fn term(x: f64, y: f64) -> f64 {
        if x == 0.0 {
            0.0
        } else if y == 0.0 {
            f64::INFINITY
        } else {
            x * (x / y).ln()
        }
    }
    term(a, b) + term(1.0 - a, 1.0 - b)
}

/// False discovery proportion, power and Hamming distance of a selected model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub fdp: f64,
    pub power: f64,
    pub hamming: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

pub fn selection_metrics(selected: &SuperArm, truth: &SuperArm, p: usize) -> Result<SelectionMetrics> {
    if selected.iter().chain(truth.iter()).any(|i| i >= p) {
        return Err(TvsError::structural(format!(
            "selected {{{selected}}} or truth {{{truth}}} exceeds p = {p}"
        )));
    }
    let hits = selected.intersection_len(truth);
    let fp = selected.len() - hits;
    let fn_ = truth.len() - hits;
    Ok(SelectionMetrics {
        fdp: fp as f64 / selected.len().max(1) as f64,
        power: if truth.is_empty() {
            1.0
        } else {
            hits as f64 / truth.len() as f64
        },
        hamming: fp + fn_,
        false_positives: fp,
        false_negatives: fn_,
    })
}
