//! Synthetic regression setups, mini-batch plans and the dataset file format.
//!
//! Every generator draws `Y = f0(x) + N(0, sigma2)` with the signal confined
//! to the first five columns, so the true support is always `{0, ..., 4}`.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::arms::SuperArm;
use crate::error::{Result, TvsError};

/// Number of active columns in every synthetic setup.
pub const SIGNALS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setup {
    Linear,
    Friedman,
    Forest,
    Liang,
}

impl Setup {
    pub fn as_str(&self) -> &'static str {
        match self {
            Setup::Linear => "linear",
            Setup::Friedman => "friedman",
            Setup::Forest => "forest",
            Setup::Liang => "liang",
        }
    }

    /// Noise variance used for the setup unless overridden.
    pub fn default_sigma2(&self) -> f64 {
        match self {
            Setup::Linear => 5.0,
            Setup::Friedman => 1.0,
            Setup::Forest | Setup::Liang => 0.5,
        }
    }
}

impl fmt::Display for Setup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setup {
    type Err = TvsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Setup::Linear),
            "friedman" => Ok(Setup::Friedman),
            "forest" => Ok(Setup::Forest),
            "liang" => Ok(Setup::Liang),
            other => Err(TvsError::param(format!(
                "unknown setup '{other}' (expected linear, friedman, forest or liang)"
            ))),
        }
    }
}

/// Design matrix, response and ground truth of one regression problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Vec<f64>,
    true_support: SuperArm,
    sigma2: f64,
    setup: Setup,
    /// Noise-free mean `f0(x_i)`, known only for freshly generated data.
    mean: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(
        x: Array2<f64>,
        y: Vec<f64>,
        true_support: SuperArm,
        sigma2: f64,
        setup: Setup,
    ) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(TvsError::structural(format!(
                "design has {} rows but response has {}",
                x.nrows(),
                y.len()
            )));
        }
        if true_support.iter().any(|i| i >= x.ncols()) {
            return Err(TvsError::structural(format!(
                "true support {{{true_support}}} exceeds p = {}",
                x.ncols()
            )));
        }
        Ok(Dataset {
            x,
            y,
            true_support,
            sigma2,
            setup,
            mean: None,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.x.row(i)
    }

    pub fn true_support(&self) -> &SuperArm {
        &self.true_support
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn setup(&self) -> Setup {
        self.setup
    }

    pub fn mean(&self) -> Option<&[f64]> {
        self.mean.as_deref()
    }

    /// Writes the header line `n,p,sigma2,setup,support=<list>` followed by
    /// one CSV row per observation: the `p` features, then `y`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut out = BufWriter::new(out);
        let io = |e| TvsError::io("<dataset>", e);
        writeln!(
            out,
            "{},{},{},{},support={}",
            self.n(),
            self.p(),
            self.sigma2,
            self.setup,
            self.true_support
        )
        .map_err(io)?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        let mut record = Vec::with_capacity(self.p() + 1);
        for (row, y) in self.x.rows().into_iter().zip(&self.y) {
            record.clear();
            record.extend(row.iter().map(|v| v.to_string()));
            record.push(y.to_string());
            w.write_record(&record)
                .map_err(|e| TvsError::io("<dataset>", e.into()))?;
        }
        w.flush().map_err(io)?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| TvsError::io(path, e))?;
        self.write_csv(file).map_err(|e| match e {
            TvsError::Io { source, .. } => TvsError::io(path, source),
            other => other,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| TvsError::io(path, e))?;
        Dataset::read_csv(BufReader::new(file), path)
    }

    pub fn read_csv<R: BufRead>(mut input: R, origin: &Path) -> Result<Self> {
        let bad = |msg: String| TvsError::Parse {
            path: origin.to_path_buf(),
            msg,
        };
        let mut header = String::new();
        input
            .read_line(&mut header)
            .map_err(|e| TvsError::io(origin, e))?;
        let header = header.trim_end();
        let (head, support) = header
            .split_once(",support=")
            .ok_or_else(|| bad(format!("header '{header}' lacks a support= field")))?;
        let fields: Vec<&str> = head.split(',').collect();
        if fields.len() != 4 {
            return Err(bad(format!("header '{header}' should have 5 fields")));
        }
        let n: usize = fields[0].parse().map_err(|_| bad(format!("bad n '{}'", fields[0])))?;
        let p: usize = fields[1].parse().map_err(|_| bad(format!("bad p '{}'", fields[1])))?;
        let sigma2: f64 = fields[2]
            .parse()
            .map_err(|_| bad(format!("bad sigma2 '{}'", fields[2])))?;
        let setup: Setup = fields[3].parse().map_err(|e: TvsError| bad(e.to_string()))?;
        let support = if support.is_empty() {
            SuperArm::empty()
        } else {
            let idx = support
                .split(',')
                .map(|s| s.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad(format!("bad support list '{support}'")))?;
            SuperArm::checked(idx, p).map_err(|e| bad(e.to_string()))?
        };

        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(input);
        let mut values = Vec::with_capacity(n * p);
        let mut y = Vec::with_capacity(n);
        for (k, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| bad(format!("row {}: {e}", k + 1)))?;
            if rec.len() != p + 1 {
                return Err(bad(format!(
                    "row {} has {} fields, expected {}",
                    k + 1,
                    rec.len(),
                    p + 1
                )));
            }
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| bad(format!("row {} column {j}: '{field}'", k + 1)))?;
                if j < p {
                    values.push(v);
                } else {
                    y.push(v);
                }
            }
        }
        if y.len() != n {
            return Err(bad(format!("header declares {n} rows, found {}", y.len())));
        }
        let x = Array2::from_shape_vec((n, p), values).map_err(|e| bad(e.to_string()))?;
        Dataset::new(x, y, support, sigma2, setup)
    }
}

/// `10 sin(pi x1 x2) + 20 (x3 - 0.5)^2 + 10 x4 + 5 x5`.
pub fn friedman_mean(x: &[f64]) -> f64 {
    10.0 * (std::f64::consts::PI * x[0] * x[1]).sin()
        + 20.0 * (x[2] - 0.5).powi(2)
        + 10.0 * x[3]
        + 5.0 * x[4]
}

/// `x1 + 2 x2 + 3 x3 - 2 x4 - x5`.
pub fn linear_mean(x: &[f64]) -> f64 {
    x[0] + 2.0 * x[1] + 3.0 * x[2] - 2.0 * x[3] - x[4]
}

/// `10 x2 / (1 + x1^2) + 5 sin(x3 x4) + 2 x5`.
pub fn liang_mean(x: &[f64]) -> f64 {
    10.0 * x[1] / (1.0 + x[0] * x[0]) + 5.0 * (x[2] * x[3]).sin() + 2.0 * x[4]
}

fn require_p(p: usize) -> Result<()> {
    if p < SIGNALS {
        return Err(TvsError::param(format!(
            "synthetic setups need p >= {SIGNALS}, got {p}"
        )));
    }
    Ok(())
}

fn require_sigma2(sigma2: f64) -> Result<()> {
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(TvsError::param(format!("sigma2 must be >= 0, got {sigma2}")));
    }
    Ok(())
}

/// Rows of `N(0, Sigma)` with `Sigma_jk = rho^|j-k|`, via the AR(1) recursion.
fn ar1_design<R: Rng + ?Sized>(n: usize, p: usize, rho: f64, rng: &mut R) -> Array2<f64> {
    let innov = (1.0 - rho * rho).sqrt();
    let mut x = Array2::zeros((n, p));
    for mut row in x.rows_mut() {
        let mut prev: f64 = rng.sample(StandardNormal);
        row[0] = prev;
        for j in 1..p {
            let z: f64 = rng.sample(StandardNormal);
            prev = rho * prev + innov * z;
            row[j] = prev;
        }
    }
    x
}

fn finish<R: Rng + ?Sized>(
    x: Array2<f64>,
    mean: Vec<f64>,
    sigma2: f64,
    setup: Setup,
    rng: &mut R,
) -> Result<Dataset> {
    let sd = sigma2.sqrt();
    let y = mean
        .iter()
        .map(|m| m + sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut ds = Dataset::new(x, y, SuperArm::range(SIGNALS), sigma2, setup)?;
    ds.mean = Some(mean);
    Ok(ds)
}

fn apply_rows(x: &Array2<f64>, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    x.rows()
        .into_iter()
        .map(|r| f(r.as_slice().expect("row-major design")))
        .collect()
}

/// Friedman benchmark on `[0,1]^p`. With `correlated`, columns come from an
/// equicorrelated (rho = 0.3) Gaussian latent pushed through the normal CDF.
pub fn gen_friedman<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    sigma2: f64,
    correlated: bool,
    rng: &mut R,
) -> Result<Dataset> {
    require_p(p)?;
    require_sigma2(sigma2)?;
    let mut x = Array2::zeros((n, p));
    if correlated {
        const RHO: f64 = 0.3;
        let phi = Normal::standard();
        let (shared, own) = (RHO.sqrt(), (1.0 - RHO).sqrt());
        for mut row in x.rows_mut() {
            let e: f64 = rng.sample(StandardNormal);
            for v in row.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = phi.cdf(shared * e + own * z);
            }
        }
    } else {
        for v in x.iter_mut() {
            *v = rng.random::<f64>();
        }
    }
    let mean = apply_rows(&x, friedman_mean);
    finish(x, mean, sigma2, Setup::Friedman, rng)
}

/// Linear mean on AR(1) Gaussian rows with correlation `0.9^|j-k|`.
pub fn gen_linear<R: Rng + ?Sized>(n: usize, p: usize, sigma2: f64, rng: &mut R) -> Result<Dataset> {
    require_p(p)?;
    require_sigma2(sigma2)?;
    let x = ar1_design(n, p, 0.9, rng);
    let mean = apply_rows(&x, linear_mean);
    finish(x, mean, sigma2, Setup::Linear, rng)
}

/// `x_ij = (e_i + z_ij) / 2`, giving correlation 0.5 between every pair of columns.
pub fn gen_liang<R: Rng + ?Sized>(n: usize, p: usize, sigma2: f64, rng: &mut R) -> Result<Dataset> {
    require_p(p)?;
    require_sigma2(sigma2)?;
    let mut x = Array2::zeros((n, p));
    for mut row in x.rows_mut() {
        let e: f64 = rng.sample(StandardNormal);
        for v in row.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = 0.5 * (e + z);
        }
    }
    let mean = apply_rows(&x, liang_mean);
    finish(x, mean, sigma2, Setup::Liang, rng)
}

#[derive(Debug, Clone, PartialEq)]
enum GenNode {
    Leaf(f64),
    Split {
        var: usize,
        cut: f64,
        left: Box<GenNode>,
        right: Box<GenNode>,
    },
}

impl GenNode {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            GenNode::Leaf(v) => *v,
            GenNode::Split {
                var,
                cut,
                left,
                right,
            } => {
                if x[*var] <= *cut {
                    left.eval(x)
                } else {
                    right.eval(x)
                }
            }
        }
    }

    fn scale(&mut self, k: f64) {
        match self {
            GenNode::Leaf(v) => *v *= k,
            GenNode::Split { left, right, .. } => {
                left.scale(k);
                right.scale(k);
            }
        }
    }
}

/// A sum of random trees splitting only on the first five columns.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeSumFunction {
    trees: Vec<GenNode>,
}

impl TreeSumFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.eval(x)).sum()
    }

    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }
}

// Depth prior of Bayesian regression trees: P(split at depth d) = 0.95 (1 + d)^-2.
fn grow_gen_tree<R: Rng + ?Sized>(
    x: &Array2<f64>,
    depth: u32,
    leaf_sd: f64,
    rng: &mut R,
) -> GenNode {
    let p_split = 0.95 * (1.0 + depth as f64).powi(-2);
    if rng.random::<f64>() < p_split {
        let var = rng.random_range(0..SIGNALS);
        let row = rng.random_range(0..x.nrows());
        GenNode::Split {
            var,
            cut: x[[row, var]],
            left: Box::new(grow_gen_tree(x, depth + 1, leaf_sd, rng)),
            right: Box::new(grow_gen_tree(x, depth + 1, leaf_sd, rng)),
        }
    } else {
        GenNode::Leaf(leaf_sd * rng.sample::<f64, _>(StandardNormal))
    }
}

/// Draws a tree-sum mean function and rescales it to unit sample variance on `x`.
pub fn draw_tree_sum<R: Rng + ?Sized>(
    x: &Array2<f64>,
    num_trees: usize,
    rng: &mut R,
) -> TreeSumFunction {
    if num_trees == 0 || x.nrows() == 0 {
        return TreeSumFunction { trees: Vec::new() };
    }
    let leaf_sd = 1.0 / (num_trees as f64).sqrt();
    let mut trees: Vec<GenNode> = (0..num_trees)
        .map(|_| grow_gen_tree(x, 0, leaf_sd, rng))
        .collect();
    let f = TreeSumFunction { trees: trees.clone() };
    let vals = apply_rows(x, |r| f.eval(r));
    let n = vals.len() as f64;
    let m = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    if var > 0.0 {
        let k = var.sqrt().recip();
        trees.iter_mut().for_each(|t| t.scale(k));
    }
    TreeSumFunction { trees }
}

/// Tree-sum mean on AR(1) Gaussian rows with correlation `0.3^|j-k|`.
/// Returns the dataset together with the drawn mean function.
pub fn gen_forest<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    sigma2: f64,
    num_gen_trees: usize,
    rng: &mut R,
) -> Result<(Dataset, TreeSumFunction)> {
    require_p(p)?;
    require_sigma2(sigma2)?;
    let x = ar1_design(n, p, 0.3, rng);
    let f0 = draw_tree_sum(&x, num_gen_trees, rng);
    let mean = apply_rows(&x, |r| f0.eval(r));
    Ok((finish(x, mean, sigma2, Setup::Forest, rng)?, f0))
}

/// Generates one of the four setups with its default extras.
pub fn generate<R: Rng + ?Sized>(
    setup: Setup,
    n: usize,
    p: usize,
    sigma2: f64,
    correlated: bool,
    rng: &mut R,
) -> Result<Dataset> {
    match setup {
        Setup::Linear => gen_linear(n, p, sigma2, rng),
        Setup::Friedman => gen_friedman(n, p, sigma2, correlated, rng),
        Setup::Forest => gen_forest(n, p, sigma2, 200, rng).map(|(d, _)| d),
        Setup::Liang => gen_liang(n, p, sigma2, rng),
    }
}

/// One mini-batch: a set of row indices consumed by one iteration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    /// Pass over the data, starting at 1.
    pub round: usize,
    /// Position of the batch within its round.
    pub index: usize,
    pub rows: Vec<usize>,
}

/// Partition of one pass over the data into equal mini-batches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub num_batches: usize,
    pub order: Vec<usize>,
    pub round: usize,
}

impl BatchPlan {
    pub fn batches(&self) -> impl Iterator<Item = Batch> + '_ {
        self.order
            .chunks_exact(self.batch_size)
            .take(self.num_batches)
            .enumerate()
            .map(move |(index, rows)| Batch {
                round: self.round,
                index,
                rows: rows.to_vec(),
            })
    }
}

/// Plans `rounds` passes over `n` rows in batches of `s`. The first pass keeps
/// the original row order; later passes re-partition a bootstrap resample.
pub fn make_batch_plans<R: Rng + ?Sized>(
    n: usize,
    s: usize,
    rounds: usize,
    rng: &mut R,
) -> Result<Vec<BatchPlan>> {
    if s == 0 || s > n {
        return Err(TvsError::param(format!(
            "batch size must lie in 1..={n}, got {s}"
        )));
    }
    let num_batches = n / s;
    Ok((1..=rounds)
        .map(|round| {
            let order = if round == 1 {
                (0..n).collect()
            } else {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            };
            BatchPlan {
                batch_size: s,
                num_batches,
                order,
                round,
            }
        })
        .collect())
}

/// All batches of all rounds, in consumption order.
pub fn make_batches<R: Rng + ?Sized>(
    n: usize,
    s: usize,
    rounds: usize,
    rng: &mut R,
) -> Result<Vec<Batch>> {
    Ok(make_batch_plans(n, s, rounds, rng)?
        .iter()
        .flat_map(|plan| plan.batches().collect::<Vec<_>>())
        .collect())
}

/// Shuffled copy of `0..n`, handy for permutation checks.
pub fn permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v
}
