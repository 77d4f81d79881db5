//! Lasso support indicators via cyclic coordinate descent.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{DataContext, FeedbackRule};
use crate::arms::{RewardVector, SuperArm};
use crate::error::{Result, TvsError};

/// Penalty level; `Auto` is half of the smallest penalty that zeroes every coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    Auto,
    Fixed(f64),
}

impl fmt::Display for Lambda {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lambda::Auto => f.write_str("auto"),
            Lambda::Fixed(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for Lambda {
    type Err = TvsError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Lambda::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v >= 0.0 => Ok(Lambda::Fixed(v)),
            _ => Err(TvsError::param(format!(
                "lambda must be 'auto' or a non-negative number, got '{s}'"
            ))),
        }
    }
}

impl Serialize for Lambda {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Lambda::Auto => s.serialize_str("auto"),
            Lambda::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Lambda {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Lambda::from_str(&v.to_string()),
            Raw::Str(s) => Lambda::from_str(&s),
        }
        .map_err(serde::de::Error::custom)
    }
}

/// Coefficients on the standardised scale plus solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub coef: Vec<f64>,
    pub lambda: f64,
    pub lambda_max: f64,
    pub sweeps: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Minimises `||y - X b||^2 / (2n) + lambda ||b||_1` over standardised columns
/// of `cols` and centred `y`. Constant columns keep a zero coefficient.
pub fn lasso_fit(cols: &[Vec<f64>], y: &[f64], lambda: Lambda, tol: f64, max_sweeps: usize) -> LassoFit {
    let n = y.len();
    let nf = n as f64;
    let y_mean = y.iter().sum::<f64>() / nf;
    let mut resid: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let xs: Vec<Option<Vec<f64>>> = cols
        .iter()
        .map(|c| {
            let m = c.iter().sum::<f64>() / nf;
            let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / nf).sqrt();
            (sd > 0.0).then(|| c.iter().map(|v| (v - m) / sd).collect())
        })
        .collect();
    let lambda_max = xs
        .iter()
        .flatten()
        .map(|x| (dot(x, &resid) / nf).abs())
        .fold(0.0, f64::max);
    let lambda = match lambda {
        Lambda::Auto => 0.5 * lambda_max,
        Lambda::Fixed(v) => v,
    };
    let mut coef = vec![0.0; cols.len()];
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for (j, x) in xs.iter().enumerate() {
            let Some(x) = x else { continue };
            let rho = dot(x, &resid) / nf + coef[j];
            let new = soft_threshold(rho, lambda);
            let delta = new - coef[j];
            if delta != 0.0 {
                resid.iter_mut().zip(x).for_each(|(r, xv)| *r -= delta * xv);
                coef[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < tol {
            converged = true;
            break;
        }
    }
    LassoFit {
        coef,
        lambda,
        lambda_max,
        sweeps,
        converged,
    }
}

/// Rewards the played variables that keep a nonzero lasso coefficient on a
/// bootstrap replicate of the visible data.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoRule {
    pub lambda: Lambda,
    pub bootstrap: bool,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoRule {
    fn default() -> Self {
        LassoRule {
            lambda: Lambda::Auto,
            bootstrap: true,
            tol: 1e-7,
            max_sweeps: 10_000,
        }
    }
}

impl LassoRule {
    pub fn new(lambda: Lambda) -> Self {
        LassoRule {
            lambda,
            ..LassoRule::default()
        }
    }

    /// Fits the lasso on (a bootstrap replicate of) the rows in `ctx`.
    pub fn fit(&self, subset: &SuperArm, ctx: &DataContext<'_>, rng: &mut dyn RngCore) -> Result<LassoFit> {
        if subset.is_empty() {
            return Err(TvsError::param("cannot fit a lasso on an empty subset"));
        }
        let n = ctx.n();
        if n < 2 {
            return Err(TvsError::param(format!("lasso needs at least 2 observations, got {n}")));
        }
        let rows: Vec<usize> = if self.bootstrap {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        let (cols, y) = ctx.gather(subset, &rows, "lasso")?;
        let fit = lasso_fit(&cols, &y, self.lambda, self.tol, self.max_sweeps);
        if !fit.converged {
            log::warn!(
                "lasso hit the {}-sweep cap on {} variables; using the last iterate",
                self.max_sweeps,
                subset.len()
            );
        }
        Ok(fit)
    }
}

impl FeedbackRule for LassoRule {
    fn evaluate(
        &self,
        subset: &SuperArm,
        ctx: &DataContext<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<RewardVector> {
        if subset.is_empty() {
            return Ok(RewardVector::default());
        }
        let fit = self.fit(subset, ctx, rng)?;
        RewardVector::new(subset, fit.coef.iter().map(|&b| b != 0.0).collect())
    }

    fn name(&self) -> &'static str {
        "lasso"
    }
}
