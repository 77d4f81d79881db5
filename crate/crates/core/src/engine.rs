//! The TVS loops: offline iterations over the full data and online passes over
//! mini-batches, with trajectory recording and the stabilisation rule.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::RegretLedger;
use crate::arms::{
    expected_reward_setdep, oracle_constrained, oracle_unconstrained, ArmCosts, ArmState, BanditState, CostModel,
    RewardVector, SuperArm,
};
use crate::datagen::{make_batches, Dataset};
use crate::error::{Result, TvsError};
use crate::feedback::{DataContext, FeedbackRule};

/// Longest trajectory (arms times iterations) written without thinning.
pub const MAX_TRAJECTORY_ENTRIES: usize = 10_000_000;

/// Independent random streams derived from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Bandit = 0,
    Feedback = 1,
    Batches = 2,
    Data = 3,
    Instance = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Loop settings shared by offline and online runs.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineParams {
    pub horizon: usize,
    pub costs: CostModel,
    pub a0: f64,
    pub b0: f64,
    pub q_star: Option<usize>,
    pub stop_window: usize,
    pub early_stop: bool,
    /// Play at most this many arms on the first iteration (largest draws first).
    pub first_iteration_cap: Option<usize>,
    pub seed: u64,
}

impl Default for EngineParams {
    fn default() -> Self {
        EngineParams {
            horizon: 1000,
            costs: CostModel::default(),
            a0: 1.0,
            b0: 1.0,
            q_star: None,
            stop_window: 100,
            early_stop: false,
            first_iteration_cap: None,
            seed: 0,
        }
    }
}

impl EngineParams {
    pub fn validate(&self, p: usize) -> Result<()> {
        if self.stop_window == 0 {
            return Err(TvsError::param("stop_window must be at least 1"));
        }
        if self.q_star == Some(0) {
            return Err(TvsError::param("q_star must be at least 1"));
        }
        if let CostModel::PerArm(v) = &self.costs {
            if v.len() != p {
                return Err(TvsError::param(format!(
                    "{} per-arm costs given for p = {p}",
                    v.len()
                )));
            }
        }
        ArmState::new(self.a0, self.b0)?;
        Ok(())
    }
}

/// Known optimum used to score each played subset.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretOracle {
    pub optimal: SuperArm,
    pub optimal_reward: f64,
    pub delta_max: f64,
}

impl RegretOracle {
    /// Optimum of a rule with known mean rewards: the threshold oracle for
    /// data-free independent arms, exhaustive search for small `p`.
    pub fn for_rule<F: FeedbackRule + ?Sized>(
        rule: &F,
        p: usize,
        costs: &CostModel,
        q_star: Option<usize>,
        independent: bool,
    ) -> Result<Self> {
        let theta_fn = |i: usize, s: &SuperArm| rule.mean_reward(i, s).unwrap_or(f64::NAN);
        if rule.mean_reward(0, &SuperArm::empty()).is_none() {
            return Err(TvsError::param(format!(
                "{} feedback has no known mean rewards",
                rule.name()
            )));
        }
        if independent {
            let theta: Vec<f64> = (0..p).map(|i| theta_fn(i, &SuperArm::empty())).collect();
            let optimal = match q_star {
                Some(q) => oracle_constrained(&theta, costs, q),
                None => oracle_unconstrained(&theta, costs),
            };
            let optimal_reward = expected_reward_setdep(&optimal, theta_fn, costs);
            let worst: f64 = (0..p)
                .map(|i| costs.for_arm(i).contribution(theta[i]).min(0.0))
                .sum();
            return Ok(RegretOracle {
                optimal,
                optimal_reward,
                delta_max: optimal_reward - worst,
            });
        }
        if q_star.is_some() {
            return Err(TvsError::param(
                "regret with a size cap needs independent arms",
            ));
        }
        let (optimal, optimal_reward, delta_max) = crate::analysis::exhaustive_optimum(p, theta_fn, costs)?;
        Ok(RegretOracle {
            optimal,
            optimal_reward,
            delta_max,
        })
    }
}

/// One TVS iteration as recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub played: SuperArm,
    pub rewards: RewardVector,
    /// Model extracted from the posterior means after the update.
    pub selected: SuperArm,
    pub regret: Option<f64>,
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub p: usize,
    pub priors: Vec<(f64, f64)>,
    /// Model extracted from the prior, before any iteration.
    pub initial_selected: SuperArm,
    pub steps: Vec<Step>,
    pub final_state: BanditState,
    /// First iteration from which the selected model stayed fixed for a full window.
    pub converged_at: Option<usize>,
    pub stopped_early: bool,
    pub regret: Option<RegretLedger>,
    pub wall_time: Duration,
}

impl RunRecord {
    pub fn iterations(&self) -> usize {
        self.steps.len()
    }

    /// Selected models `S_0, S_1, ...`, starting with the prior model.
    pub fn selected_models(&self) -> impl Iterator<Item = &SuperArm> {
        std::iter::once(&self.initial_selected).chain(self.steps.iter().map(|s| &s.selected))
    }

    pub fn final_selected(&self) -> &SuperArm {
        self.steps.last().map_or(&self.initial_selected, |s| &s.selected)
    }

    pub fn final_pi(&self) -> Vec<f64> {
        self.final_state.inclusion_probabilities()
    }

    /// Iterations between written trajectory snapshots.
    pub fn trajectory_stride(&self) -> usize {
        let entries = self.p.max(1) * (self.steps.len() + 1);
        entries.div_ceil(MAX_TRAJECTORY_ENTRIES).max(1)
    }

    /// Long-format trajectory `t,arm,a,b,pi,in_S,reward`, rebuilt by replaying
    /// rewards from the priors. Row `t = 0` is the prior; the final iteration
    /// is always written even when thinned.
    pub fn write_trajectory<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| TvsError::Config(format!("writing trajectory: {e}"));
        w.write_record(["t", "arm", "a", "b", "pi", "in_S", "reward"])
            .map_err(csv_err)?;
        let mut ab: Vec<(f64, f64)> = self.priors.clone();
        let stride = self.trajectory_stride();
        let last = self.steps.len();
        let mut bits: Vec<Option<bool>> = vec![None; self.p];
        for t in 0..=last {
            bits.iter_mut().for_each(|b| *b = None);
            if t > 0 {
                for (i, hit) in self.steps[t - 1].rewards.iter() {
                    if hit {
                        ab[i].0 += 1.0;
                    } else {
                        ab[i].1 += 1.0;
                    }
                    bits[i] = Some(hit);
                }
            }
            if t % stride != 0 && t != last {
                continue;
            }
            for (i, &(a, b)) in ab.iter().enumerate() {
                let played = t > 0 && self.steps[t - 1].played.contains(i);
                w.write_record([
                    t.to_string(),
                    i.to_string(),
                    a.to_string(),
                    b.to_string(),
                    (a / (a + b)).to_string(),
                    u8::from(played).to_string(),
                    bits[i].map_or(String::new(), |h| u8::from(h).to_string()),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| TvsError::Config(format!("writing trajectory: {e}")))?;
        Ok(())
    }

    pub fn save_trajectory(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| TvsError::io(path, e))?;
        self.write_trajectory(std::io::BufWriter::new(file))
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            iterations: self.steps.len(),
            p: self.p,
            selected: self.final_selected().clone(),
            pi: self.final_pi(),
            converged_at: self.converged_at,
            stopped_early: self.stopped_early,
            total_regret: self.regret.as_ref().map(RegretLedger::total),
            optimal: self.regret.as_ref().map(|r| r.optimal.clone()),
            wall_time_secs: self.wall_time.as_secs_f64(),
        }
    }
}

/// Compact description of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub iterations: usize,
    pub p: usize,
    pub selected: SuperArm,
    pub pi: Vec<f64>,
    pub converged_at: Option<usize>,
    pub stopped_early: bool,
    pub total_regret: Option<f64>,
    pub optimal: Option<SuperArm>,
    pub wall_time_secs: f64,
}

/// The median-probability model `{i : pi_i >= threshold_i}`.
pub fn extract_model<K: ArmCosts + ?Sized>(pi: &[f64], costs: &K) -> SuperArm {
    oracle_unconstrained(pi, costs)
}

/// First `t` with `S_t = S_{t+1} = ... = S_{t+window-1}`.
pub fn check_stabilized<'a, I>(models: I, window: usize) -> Option<usize>
where
    I: IntoIterator<Item = &'a SuperArm>,
{
    let window = window.max(1);
    let mut start = 0;
    let mut run = 0;
    let mut prev: Option<&SuperArm> = None;
    for (t, m) in models.into_iter().enumerate() {
        if prev == Some(m) {
            run += 1;
        } else {
            start = t;
            run = 1;
        }
        if run >= window {
            return Some(start);
        }
        prev = Some(m);
    }
    None
}

struct Loop<'a, F: ?Sized> {
    params: &'a EngineParams,
    rule: &'a F,
    state: BanditState,
    bandit_rng: ChaCha8Rng,
    feedback_rng: ChaCha8Rng,
    regret: Option<(&'a RegretOracle, RegretLedger)>,
    steps: Vec<Step>,
    initial_selected: SuperArm,
    run_start: usize,
    run_len: usize,
}

impl<'a, F: FeedbackRule + ?Sized> Loop<'a, F> {
    fn new(params: &'a EngineParams, rule: &'a F, p: usize, oracle: Option<&'a RegretOracle>) -> Result<Self> {
        params.validate(p)?;
        let state = BanditState::new(p, params.a0, params.b0, params.costs.clone())?;
        let initial_selected = extract_model(&state.inclusion_probabilities(), &params.costs);
        Ok(Loop {
            params,
            rule,
            state,
            bandit_rng: stream_rng(params.seed, Stream::Bandit),
            feedback_rng: stream_rng(params.seed, Stream::Feedback),
            regret: oracle.map(|o| (o, RegretLedger::new(o.optimal.clone(), o.delta_max))),
            steps: Vec::new(),
            initial_selected,
            run_start: 0,
            run_len: 1,
        })
    }

    fn choose(&mut self) -> SuperArm {
        let theta = self.state.sample_theta(&mut self.bandit_rng);
        let chosen = match self.params.q_star {
            Some(q) => oracle_constrained(&theta, &self.params.costs, q),
            None => oracle_unconstrained(&theta, &self.params.costs),
        };
        match self.params.first_iteration_cap {
            Some(cap) if self.steps.is_empty() && chosen.len() > cap => {
                let mut ranked = chosen.into_vec();
                ranked.sort_by(|&i, &j| theta[j].total_cmp(&theta[i]).then(i.cmp(&j)));
                ranked.truncate(cap);
                SuperArm::from_indices(ranked)
            }
            _ => chosen,
        }
    }

    /// Runs one iteration; returns true when the stopping rule fires.
    fn step(&mut self, ctx: &DataContext<'_>) -> Result<bool> {
        let played = self.choose();
        let rewards = if played.is_empty() {
            RewardVector::default()
        } else {
            self.rule.evaluate(&played, ctx, &mut self.feedback_rng)?
        };
        self.state.update(&played, &rewards)?;
        let selected = extract_model(&self.state.inclusion_probabilities(), &self.params.costs);
        let regret = self.regret.as_mut().map(|(oracle, ledger)| {
            let r = oracle.optimal_reward
                - expected_reward_setdep(
                    &played,
                    |i, s| self.rule.mean_reward(i, s).unwrap_or(f64::NAN),
                    &self.params.costs,
                );
            ledger.push(r);
            r
        });
        let prev = self.steps.last().map_or(&self.initial_selected, |s| &s.selected);
        if *prev == selected {
            self.run_len += 1;
        } else {
            self.run_start = self.steps.len() + 1;
            self.run_len = 1;
        }
        self.steps.push(Step {
            played,
            rewards,
            selected,
            regret,
        });
        Ok(self.params.early_stop && self.run_len >= self.params.stop_window)
    }

    fn finish(self, stopped_early: bool, started: Instant) -> RunRecord {
        let converged_at = (self.run_len >= self.params.stop_window).then_some(self.run_start);
        let p = self.state.p();
        RunRecord {
            p,
            priors: self.state.arms().iter().map(ArmState::prior).collect(),
            initial_selected: self.initial_selected,
            steps: self.steps,
            final_state: self.state,
            converged_at,
            stopped_early,
            regret: self.regret.map(|(_, l)| l),
            wall_time: started.elapsed(),
        }
    }
}

/// Offline TVS: every iteration evaluates the rule on the full dataset (or on
/// no data at all for data-free rules).
pub fn run_offline<F: FeedbackRule + ?Sized>(
    params: &EngineParams,
    rule: &F,
    p: usize,
    data: Option<&Dataset>,
    oracle: Option<&RegretOracle>,
) -> Result<RunRecord> {
    let started = Instant::now();
    if let Some(d) = data {
        if d.p() != p {
            return Err(TvsError::structural(format!(
                "dataset has p = {} but the run expects p = {p}",
                d.p()
            )));
        }
    }
    let ctx = data.map_or_else(DataContext::none, DataContext::full);
    let mut lp = Loop::new(params, rule, p, oracle)?;
    let mut stopped = false;
    for _ in 0..params.horizon {
        if lp.step(&ctx)? {
            stopped = true;
            break;
        }
    }
    log::info!("offline run finished after {} iterations", lp.steps.len());
    Ok(lp.finish(stopped, started))
}

/// Online TVS: one iteration per mini-batch, `rounds` passes over the data,
/// the posterior of each batch serving as the prior of the next.
pub fn run_online<F: FeedbackRule + ?Sized>(
    params: &EngineParams,
    rule: &F,
    data: &Dataset,
    batch_size: usize,
    rounds: usize,
    oracle: Option<&RegretOracle>,
) -> Result<RunRecord> {
    let started = Instant::now();
    if rounds == 0 {
        return Err(TvsError::param("rounds must be at least 1"));
    }
    let batches = make_batches(data.n(), batch_size, rounds, &mut stream_rng(params.seed, Stream::Batches))?;
    if batches.len() < params.stop_window {
        log::info!(
            "{} batches is fewer than the stopping window {}; the run will not stop early",
            batches.len(),
            params.stop_window
        );
    }
    let mut lp = Loop::new(params, rule, data.p(), oracle)?;
    let mut stopped = false;
    for batch in &batches {
        if lp.step(&DataContext::batch(data, &batch.rows))? {
            stopped = true;
            break;
        }
    }
    log::info!("online run finished after {} batches", lp.steps.len());
    Ok(lp.finish(stopped, started))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arms::CostParams;
    use crate::feedback::{LassoRule, SetDependentBernoulli};
    use crate::datagen::gen_linear;

    fn bern(p: usize, k: usize, hi: f64, lo: f64) -> SetDependentBernoulli {
        SetDependentBernoulli::two_level(p, k, hi, lo).unwrap()
    }

    #[test]
    fn extract_model_examples() {
        let g = CostParams::golden();
        assert_eq!(extract_model(&[0.7, 0.49, 0.51], &g), SuperArm::from_indices([0, 2]));
        assert_eq!(extract_model(&[0.5; 4], &g), SuperArm::range(4));
        let c = CostParams::new(0.9).unwrap();
        assert_eq!(extract_model(&[0.2, 0.1], &c), SuperArm::from_indices([0]));
    }

    #[test]
    fn stabilization_examples() {
        let a = SuperArm::from_indices([1]);
        let b = SuperArm::from_indices([2]);
        let constant = vec![a.clone(); 150];
        assert_eq!(check_stabilized(&constant, 100), Some(0));
        let alt: Vec<SuperArm> = (0..300).map(|t| if t % 2 == 0 { a.clone() } else { b.clone() }).collect();
        assert_eq!(check_stabilized(&alt, 100), None);
        let mut change = alt[..37].to_vec();
        change.extend(std::iter::repeat_n(if alt[36] == a { b.clone() } else { a.clone() }, 120));
        assert_eq!(check_stabilized(&change, 100), Some(37));
        assert_eq!(check_stabilized(&change, 121), None);
    }

    #[test]
    fn zero_horizon_keeps_prior() {
        let params = EngineParams {
            horizon: 0,
            ..EngineParams::default()
        };
        let rec = run_offline(&params, &bern(6, 2, 0.9, 0.1), 6, None, None).unwrap();
        assert_eq!(rec.iterations(), 0);
        assert_eq!(rec.final_pi(), vec![0.5; 6]);
        assert_eq!(rec.final_selected(), &SuperArm::range(6));
    }

    #[test]
    fn recorded_models_match_posterior() {
        let params = EngineParams {
            horizon: 200,
            seed: 3,
            ..EngineParams::default()
        };
        let rule = bern(12, 3, 0.8, 0.2);
        let rec = run_offline(&params, &rule, 12, None, None).unwrap();
        let mut state = BanditState::new(12, 1.0, 1.0, CostModel::default()).unwrap();
        for s in &rec.steps {
            state.update(&s.played, &s.rewards).unwrap();
            assert_eq!(s.selected, extract_model(&state.inclusion_probabilities(), &CostParams::golden()));
        }
        assert_eq!(state.arms(), rec.final_state.arms());
        assert_eq!(rec.final_selected(), &SuperArm::range(3));
    }

    #[test]
    fn runs_are_deterministic() {
        let params = EngineParams {
            horizon: 100,
            seed: 11,
            ..EngineParams::default()
        };
        let rule = bern(20, 4, 0.7, 0.3);
        let a = run_offline(&params, &rule, 20, None, None).unwrap();
        let b = run_offline(&params, &rule, 20, None, None).unwrap();
        assert_eq!(a.steps, b.steps);
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        a.write_trajectory(&mut ca).unwrap();
        b.write_trajectory(&mut cb).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn early_stop_fires_after_window() {
        let params = EngineParams {
            horizon: 5000,
            early_stop: true,
            stop_window: 50,
            seed: 1,
            ..EngineParams::default()
        };
        let rec = run_offline(&params, &bern(8, 2, 0.99, 0.01), 8, None, None).unwrap();
        assert!(rec.stopped_early);
        let t0 = rec.converged_at.unwrap();
        assert_eq!(rec.iterations(), t0 + 49);
        assert_eq!(check_stabilized(rec.selected_models(), 50), Some(t0));
    }

    #[test]
    fn trajectory_layout() {
        let params = EngineParams {
            horizon: 3,
            seed: 2,
            ..EngineParams::default()
        };
        let rec = run_offline(&params, &bern(4, 1, 0.9, 0.1), 4, None, None).unwrap();
        let mut buf = Vec::new();
        rec.write_trajectory(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,arm,a,b,pi,in_S,reward");
        assert_eq!(lines.len(), 1 + 4 * 4);
        assert_eq!(lines[1], "0,0,1,1,0.5,0,");
        for line in &lines[5..] {
            let f: Vec<&str> = line.split(',').collect();
            assert_eq!(f[5] == "1", !f[6].is_empty(), "{line}");
        }
    }

    #[test]
    fn first_iteration_cap_limits_initial_play() {
        let params = EngineParams {
            horizon: 2,
            first_iteration_cap: Some(3),
            seed: 4,
            ..EngineParams::default()
        };
        let rec = run_offline(&params, &bern(100, 5, 0.9, 0.1), 100, None, None).unwrap();
        assert!(rec.steps[0].played.len() <= 3);
        assert!(rec.steps[1].played.len() > 3);
    }

    #[test]
    fn regret_is_zero_once_optimal() {
        let rule = bern(6, 2, 1.0, 0.0);
        let costs = CostModel::default();
        let oracle = RegretOracle::for_rule(&rule, 6, &costs, None, true).unwrap();
        assert_eq!(oracle.optimal, SuperArm::range(2));
        let params = EngineParams {
            horizon: 300,
            ..EngineParams::default()
        };
        let rec = run_offline(&params, &rule, 6, None, Some(&oracle)).unwrap();
        let ledger = rec.regret.unwrap();
        assert!(ledger.per_step.iter().all(|&r| r >= -1e-12));
        assert!(ledger.per_step[250..].iter().all(|&r| r.abs() < 1e-12));
        let ex = RegretOracle::for_rule(&rule, 6, &costs, None, false).unwrap();
        assert_eq!(ex, oracle);
    }

    #[test]
    fn online_single_batch_matches_offline_iteration() {
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let d = gen_linear(200, 8, 5.0, &mut r).unwrap();
        let rule = LassoRule::default();
        let params = EngineParams {
            horizon: 1,
            seed: 21,
            ..EngineParams::default()
        };
        let off = run_offline(&params, &rule, 8, Some(&d), None).unwrap();
        let on = run_online(&params, &rule, &d, 200, 1, None).unwrap();
        assert_eq!(off.steps, on.steps);
        assert_eq!(off.final_state, on.final_state);
    }

    #[test]
    fn online_counts_are_conserved() {
        let mut r = ChaCha8Rng::seed_from_u64(10);
        let d = gen_linear(400, 10, 5.0, &mut r).unwrap();
        let params = EngineParams {
            a0: 2.0,
            b0: 3.0,
            seed: 5,
            ..EngineParams::default()
        };
        let rec = run_online(&params, &LassoRule::default(), &d, 20, 2, None).unwrap();
        assert_eq!(rec.iterations(), 40);
        for arm in rec.final_state.arms() {
            assert_eq!(arm.a() + arm.b(), 5.0 + arm.pulls() as f64);
            assert!(arm.pulls() <= 40);
        }
    }

    #[test]
    fn mismatched_dataset_is_rejected() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let d = gen_linear(50, 8, 5.0, &mut r).unwrap();
        let err = run_offline(&EngineParams::default(), &LassoRule::default(), 9, Some(&d), None).unwrap_err();
        assert!(matches!(err, TvsError::Structural(_)));
    }
}
