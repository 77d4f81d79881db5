//! `tvs`: generate data, run Thompson Variable Selection, simulate regret and
//! evaluate the regret bounds.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use tvs::analysis::{
    bound_lemma2, bound_lemma3, bound_theorem1, enumerate_gaps, kl_divergence, selection_metrics, Lemma3Params,
};
use tvs::config::{execute, Mode, RunConfig, RunOutput};
use tvs::datagen::generate;
use tvs::engine::{stream_rng, Stream};
use tvs::replicate::{regret_sim, replicate};
use tvs::{oracle_constrained, CostParams, Result, Setup, SuperArm, TvsError};

#[derive(Parser)]
#[command(name = "tvs", version, about = "Thompson Variable Selection")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    /// Output directory.
    #[arg(long, env = "TVS_OUT_DIR", default_value = "tvs-out", global = true)]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write `data.csv`.
    GenData(GenDataArgs),
    /// Run offline TVS on the full dataset.
    RunOffline(RunArgs),
    /// Run online TVS over mini-batches.
    RunOnline(RunArgs),
    /// Replicated cumulative-regret simulation with Bernoulli arms.
    RegretSim(SimArgs),
    /// FDP, power and Hamming distance of a selected model.
    Metrics(MetricsArgs),
    /// Evaluate a regret bound or the Bernoulli divergence.
    Bounds {
        #[command(subcommand)]
        which: BoundCommand,
    },
}

#[derive(Args)]
struct GenDataArgs {
    /// Config file; its setup, n, p, sigma2, correlated and seed keys are used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    setup: Option<Setup>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    correlated: bool,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset CSV; overrides `data_path`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Independent runs with derived seeds, written to `rep_XXXX` subdirectories.
    #[arg(long, default_value_t = 1)]
    replications: usize,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 50)]
    replications: usize,
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct MetricsArgs {
    /// Comma-separated selected indices.
    #[arg(long, value_parser = parse_set, default_value = "")]
    selected: SuperArm,
    /// Comma-separated true indices.
    #[arg(long, value_parser = parse_set, default_value = "")]
    truth: SuperArm,
    #[arg(long)]
    p: usize,
}

#[derive(Subcommand)]
enum BoundCommand {
    /// Correlated-arm bound under strong identifiability.
    Theorem1 {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        p: usize,
        #[arg(long)]
        q_star: usize,
        #[arg(long)]
        horizon: f64,
        #[arg(long)]
        delta_max: f64,
        #[arg(long, default_value_t = 1.0)]
        c1: f64,
        #[arg(long, default_value_t = 1.0)]
        c2: f64,
    },
    /// Known-size bound from per-arm gaps given as `arm:gap,...`.
    Lemma2 {
        #[arg(long, value_parser = parse_gaps)]
        gaps: Gaps,
        #[arg(long)]
        horizon: f64,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.0)]
        const_c: f64,
        #[arg(long)]
        p: usize,
    },
    /// Independent-arm bound with the gap map enumerated from `theta`
    /// over all subsets of size at most `q_star`.
    Lemma3 {
        #[arg(long, value_parser = parse_reals)]
        theta: Reals,
        #[arg(long)]
        q_star: usize,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.0)]
        const_c: f64,
        #[arg(long)]
        horizon: f64,
        #[arg(long)]
        cost: Option<f64>,
    },
    /// Bernoulli divergence d(a, b).
    Kl {
        #[arg(long)]
        a: f64,
        #[arg(long)]
        b: f64,
    },
}

#[derive(Clone)]
struct Gaps(Vec<(usize, f64)>);

#[derive(Clone)]
struct Reals(Vec<f64>);

fn parse_set(s: &str) -> std::result::Result<SuperArm, String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<usize>().map_err(|e| format!("'{t}': {e}")))
        .collect()
}

fn parse_reals(s: &str) -> std::result::Result<Reals, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}")))
        .collect::<std::result::Result<_, _>>()
        .map(Reals)
}

fn parse_gaps(s: &str) -> std::result::Result<Gaps, String> {
    s.split(',')
        .map(|pair| {
            let (arm, gap) = pair
                .split_once(':')
                .ok_or_else(|| format!("expected arm:gap, got '{pair}'"))?;
            Ok((
                arm.trim().parse().map_err(|e| format!("'{arm}': {e}"))?,
                gap.trim().parse().map_err(|e| format!("'{gap}': {e}"))?,
            ))
        })
        .collect::<std::result::Result<_, String>>()
        .map(Gaps)
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn gen_data(args: &GenDataArgs, out: &Path) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let setup = args.setup.unwrap_or(cfg.setup);
    let n = args.n.unwrap_or(cfg.n);
    let p = args
        .p
        .or(cfg.p)
        .ok_or_else(|| TvsError::Config("gen-data needs p (--p or the config)".into()))?;
    let sigma2 = args.sigma2.or(cfg.sigma2).unwrap_or_else(|| setup.default_sigma2());
    let seed = args.seed.unwrap_or(cfg.seed);
    let correlated = args.correlated || cfg.correlated;
    let data = generate(setup, n, p, sigma2, correlated, &mut stream_rng(seed, Stream::Data))?;
    std::fs::create_dir_all(out).map_err(|e| TvsError::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let path = out.join("data.csv");
    data.save(&path)?;
    println!("wrote {} ({n} x {p}, {setup}, support {{{}}})", path.display(), data.true_support());
    Ok(())
}

fn report(out: &RunOutput, dir: &Path) {
    let rec = &out.record;
    let mut line = format!(
        "{}: {} iterations, selected {{{}}}",
        dir.display(),
        rec.iterations(),
        rec.final_selected()
    );
    if let Some(m) = &out.metrics {
        line.push_str(&format!(", fdp {:.3}, power {:.3}, hamming {}", m.fdp, m.power, m.hamming));
    }
    if let Some(t) = rec.converged_at {
        line.push_str(&format!(", stable from t = {t}"));
    }
    println!("{line}");
}

fn run(args: &RunArgs, mode: Mode, out: &Path) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    cfg.mode = mode;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(data) = &args.data {
        cfg.data_path = Some(data.clone());
    }
    if args.replications <= 1 {
        let output = execute(&cfg, false)?;
        output.write(out)?;
        report(&output, out);
        return Ok(());
    }
    let outputs = replicate(&cfg, args.replications, args.workers, false)?;
    for (k, output) in outputs.iter().enumerate() {
        let dir = out.join(format!("rep_{k:04}"));
        output.write(&dir)?;
        report(output, &dir);
    }
    Ok(())
}

fn simulate(args: &SimArgs, out: &Path) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let sim = regret_sim(&cfg, args.replications, args.workers)?;
    sim.write(out)?;
    let mut used = cfg.clone();
    used.early_stop = false;
    used.write_trajectory = false;
    let path = out.join("config.used.toml");
    std::fs::write(&path, used.to_toml()).map_err(|e| TvsError::Io { path, source: e })?;
    if let (Some(m), Some(s)) = (sim.mean.last(), sim.se.last()) {
        println!(
            "{} replications x {} steps: mean Reg(T) = {m:.4} (se {s:.4}); wrote {}",
            sim.curves.len(),
            sim.mean.len(),
            out.display()
        );
    }
    Ok(())
}

fn bounds(which: &BoundCommand) -> Result<f64> {
    match which {
        BoundCommand::Theorem1 {
            alpha,
            p,
            q_star,
            horizon,
            delta_max,
            c1,
            c2,
        } => bound_theorem1(*alpha, *p, *q_star, *horizon, *delta_max, *c1, *c2),
        BoundCommand::Lemma2 {
            gaps,
            horizon,
            epsilon,
            const_c,
            p,
        } => bound_lemma2(&gaps.0, *horizon, *epsilon, *const_c, *p),
        BoundCommand::Lemma3 {
            theta,
            q_star,
            epsilon,
            const_c,
            horizon,
            cost,
        } => {
            let cost = cost.map_or_else(|| Ok(CostParams::golden()), CostParams::new)?;
            let theta = &theta.0;
            let optimal = oracle_constrained(theta, &cost, (*q_star).max(1));
            let gaps: Vec<(SuperArm, f64)> = enumerate_gaps(theta, &optimal, &cost)?
                .into_iter()
                .filter(|(s, _)| s.len() <= *q_star)
                .collect();
            let delta_max = gaps.iter().map(|g| g.1).fold(0.0, f64::max);
            let params = Lemma3Params {
                q_star: *q_star,
                epsilon: *epsilon,
                const_c: *const_c,
                horizon: *horizon,
                delta_max,
                p: theta.len(),
            };
            bound_lemma3(&gaps, &params, &cost)
        }
        BoundCommand::Kl { a, b } => {
            if !((0.0..=1.0).contains(a) && (0.0..=1.0).contains(b)) {
                return Err(TvsError::Parameter(format!("a and b must lie in [0, 1], got {a}, {b}")));
            }
            Ok(kl_divergence(*a, *b))
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(args) => gen_data(args, &cli.out),
        Command::RunOffline(args) => run(args, Mode::Offline, &cli.out),
        Command::RunOnline(args) => run(args, Mode::Online, &cli.out),
        Command::RegretSim(args) => simulate(args, &cli.out),
        Command::Metrics(args) => {
            let m = selection_metrics(&args.selected, &args.truth, args.p)?;
            println!("{}", serde_json::to_string(&m).expect("metrics serialise"));
            Ok(())
        }
        Command::Bounds { which } => {
            println!("{}", bounds(which)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
