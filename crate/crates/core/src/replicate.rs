//! Replication driver: many independent runs with derived seeds, executed on
//! a worker pool. Results are gathered in replication order, so the number of
//! workers never changes any output.

use std::path::Path;

use rayon::prelude::*;

use crate::analysis::mean_and_se;
use crate::config::{csv_io, execute, write_regret_curve, RunConfig, RunOutput};
use crate::error::{Result, TvsError};

/// Child seed for replication `index` (splitmix64 of the mixed pair).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs `f(index)` for every index on a pool of `workers` threads
/// (0 = rayon's default) and returns results in index order.
pub fn par_map<T, F>(count: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| TvsError::Config(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| (0..count).into_par_iter().map(&f).collect())
}

/// Runs `replications` copies of `base`, each with seed
/// `derive_seed(base.seed, k)`.
pub fn replicate(base: &RunConfig, replications: usize, workers: usize, track_regret: bool) -> Result<Vec<RunOutput>> {
    par_map(replications, workers, |k| {
        let mut cfg = base.clone();
        cfg.seed = derive_seed(base.seed, k as u64);
        execute(&cfg, track_regret)
    })
}

/// Cumulative-regret curves of a regret simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretSimulation {
    pub seeds: Vec<u64>,
    pub curves: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

impl RegretSimulation {
    /// Writes `reg_XXXX.csv` per replication and `regret_mean.csv` with
    /// header `t,mean,se`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| TvsError::io(dir, e))?;
        for (k, curve) in self.curves.iter().enumerate() {
            write_regret_curve(&dir.join(format!("reg_{k:04}.csv")), curve)?;
        }
        let path = dir.join("regret_mean.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_io(&path, e))?;
        w.write_record(["t", "mean", "se"]).map_err(|e| csv_io(&path, e))?;
        for (t, (m, s)) in self.mean.iter().zip(&self.se).enumerate() {
            w.write_record([(t + 1).to_string(), m.to_string(), s.to_string()])
                .map_err(|e| csv_io(&path, e))?;
        }
        w.flush().map_err(|e| TvsError::io(&path, e))
    }
}

/// Regret experiment over the full horizon: early stopping is switched off
/// and trajectories are not kept.
pub fn regret_sim(base: &RunConfig, replications: usize, workers: usize) -> Result<RegretSimulation> {
    let mut cfg = base.clone();
    cfg.early_stop = false;
    cfg.write_trajectory = false;
    let runs = par_map(replications, workers, |k| {
        let mut c = cfg.clone();
        c.seed = derive_seed(cfg.seed, k as u64);
        let out = execute(&c, true)?;
        let curve = out.record.regret.map(|l| l.cumulative).unwrap_or_default();
        Ok((c.seed, curve))
    })?;
    let (seeds, curves): (Vec<u64>, Vec<Vec<f64>>) = runs.into_iter().unzip();
    let (mean, se) = mean_and_se(&curves);
    Ok(RegretSimulation { seeds, curves, mean, se })
}
