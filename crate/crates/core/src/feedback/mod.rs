//! Feedback rules: maps from a played subset and data to binary relevance rewards.

mod bernoulli;
mod forest;
mod lasso;

pub use bernoulli::{
    validate_strong_identifiability, IdentifiabilityReport, SetDependentBernoulli,
};
pub use forest::{forest_fit, FittedForest, ForestMode, ForestParams, ForestRule, Mtry};
pub use lasso::{lasso_fit, Lambda, LassoFit, LassoRule};

use rand::RngCore;

use crate::arms::{RewardVector, SuperArm};
use crate::datagen::Dataset;
use crate::error::{Result, TvsError};

/// The data a feedback rule sees in one iteration: nothing, a whole dataset,
/// or a mini-batch of its rows.
#[derive(Debug, Clone, Copy, Default)]
pub struct DataContext<'a> {
    data: Option<&'a Dataset>,
    rows: Option<&'a [usize]>,
}

impl<'a> DataContext<'a> {
    pub fn none() -> Self {
        DataContext::default()
    }

    pub fn full(data: &'a Dataset) -> Self {
        DataContext {
            data: Some(data),
            rows: None,
        }
    }

    pub fn batch(data: &'a Dataset, rows: &'a [usize]) -> Self {
        DataContext {
            data: Some(data),
            rows: Some(rows),
        }
    }

    pub fn dataset(&self) -> Option<&'a Dataset> {
        self.data
    }

    /// Number of observations visible to the rule.
    pub fn n(&self) -> usize {
        match (self.rows, self.data) {
            (Some(r), _) => r.len(),
            (None, Some(d)) => d.n(),
            (None, None) => 0,
        }
    }

    /// Dataset row index of local observation `k`.
    pub fn row_id(&self, k: usize) -> usize {
        match self.rows {
            Some(r) => r[k],
            None => k,
        }
    }

    fn require(&self, rule: &str) -> Result<&'a Dataset> {
        self.data
            .ok_or_else(|| TvsError::structural(format!("{rule} feedback needs a dataset")))
    }

    /// Columns of `subset` and the response, restricted to the local rows
    /// given by `local` (indices into this context).
    pub(crate) fn gather(
        &self,
        subset: &SuperArm,
        local: &[usize],
        rule: &str,
    ) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let data = self.require(rule)?;
        if let Some(&last) = subset.members().last() {
            if last >= data.p() {
                return Err(TvsError::structural(format!(
                    "arm {last} out of range for a dataset with p = {}",
                    data.p()
                )));
            }
        }
        let rows: Vec<usize> = local.iter().map(|&k| self.row_id(k)).collect();
        let x = data.x();
        let cols = subset
            .iter()
            .map(|j| rows.iter().map(|&r| x[[r, j]]).collect())
            .collect();
        let y = rows.iter().map(|&r| data.y()[r]).collect();
        Ok((cols, y))
    }
}

/// A rule `r(S, D)` producing one bit per played arm.
///
/// Implementations must return rewards keyed exactly by `subset` and must be
/// deterministic given the subset, the data and the state of `rng`.
pub trait FeedbackRule: Send + Sync {
    fn evaluate(
        &self,
        subset: &SuperArm,
        ctx: &DataContext<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<RewardVector>;

    /// Probability that `arm` pays out when `subset` is played, if known.
    fn mean_reward(&self, _arm: usize, _subset: &SuperArm) -> Option<f64> {
        None
    }

    fn name(&self) -> &'static str;
}

impl<T: FeedbackRule + ?Sized> FeedbackRule for Box<T> {
    fn evaluate(
        &self,
        subset: &SuperArm,
        ctx: &DataContext<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<RewardVector> {
        (**self).evaluate(subset, ctx, rng)
    }

    fn mean_reward(&self, arm: usize, subset: &SuperArm) -> Option<f64> {
        (**self).mean_reward(arm, subset)
    }

    fn name(&self) -> &'static str {
        (**self).name()
    }
}
