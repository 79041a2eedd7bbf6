//! Command-line pipeline: dataset generation, model training, metric
//! visualization export, and penalized offline RL runs.
//!
//! Every command resolves its parameters as defaults < config file <
//! `GELATO_*` environment variables < flags, echoes the fully-resolved
//! config, and writes a log file alongside its artifacts. Exit codes:
//! 0 success, 2 usage or input error, 3 numerical failure.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use gelato_core::dataset::Dataset;
use gelato_core::error::{Error, Result};
use gelato_core::geometry::{
    estimate_geodesic, volume_measure, DecoderField, GeodesicConfig, MetricField,
};
use gelato_core::gridworld::{BehaviorPolicy, Cell, FourRooms};
use gelato_core::latent::{train, LatentModelBundle, ModelConfig, PhaseTwoMode, TrainConfig};
use gelato_core::rl::{
    metrics_csv, run_gelato_with_bundle, GelatoConfig, GelatoVariant, PenaltyConfig, PolicyConfig,
};

#[derive(Parser)]
#[command(name = "gelato", version, about = "Latent geodesic offline RL pipeline")]
struct Cli {
    /// Flat key=value config file; flags and GELATO_* env vars override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an offline dataset from the grid world.
    GenData(GenDataArgs),
    /// Train the latent dynamics model on a dataset.
    Train(TrainArgs),
    /// Export per-cell metric volume and distance CSV grids.
    Visualize(VisualizeArgs),
    /// Run the penalized model-based RL loop.
    Gelato(GelatoArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Environment name (only `four-rooms`).
    #[arg(long)]
    env: Option<String>,
    /// Number of transitions to collect.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Behavior policy: `uniform` or `eps-greedy`.
    #[arg(long)]
    behavior: Option<String>,
    /// Exploration rate for `eps-greedy`.
    #[arg(long)]
    eps: Option<f64>,
    /// Step cap per episode.
    #[arg(long)]
    episode_cap: Option<usize>,
    /// Output dataset path.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Input dataset path.
    #[arg(long)]
    data: Option<String>,
    /// Latent dimension.
    #[arg(long)]
    dz: Option<usize>,
    /// Comma-separated hidden layer widths.
    #[arg(long)]
    hidden: Option<String>,
    /// Phase-1 (ELBO) steps.
    #[arg(long)]
    steps1: Option<usize>,
    /// Phase-2 (sigma fit) steps.
    #[arg(long)]
    steps2: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// ELBO window length.
    #[arg(long)]
    horizon: Option<usize>,
    /// Phase-2 mode: `network` or `rbf`.
    #[arg(long)]
    phase_two: Option<String>,
    #[arg(long)]
    rbf_clusters: Option<usize>,
    #[arg(long)]
    log_every: Option<usize>,
    /// Output checkpoint path.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct VisualizeArgs {
    /// Model checkpoint path.
    #[arg(long)]
    model: Option<String>,
    /// Output directory for the three CSV grids.
    #[arg(long)]
    out_dir: Option<String>,
    /// Source cell row for the distance panels.
    #[arg(long)]
    source_row: Option<usize>,
    /// Source cell column for the distance panels.
    #[arg(long)]
    source_col: Option<usize>,
}

#[derive(Args)]
struct GelatoArgs {
    /// Input dataset path.
    #[arg(long)]
    data: Option<String>,
    /// Model checkpoint path.
    #[arg(long)]
    model: Option<String>,
    /// Output directory for policy checkpoint, metrics, and log.
    #[arg(long)]
    out_dir: Option<String>,
    /// Penalty preset: `gelato`, `unc`, or `prox`.
    #[arg(long)]
    variant: Option<String>,
    /// Penalty coefficient override.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Soft Q-learning steps per epoch.
    #[arg(long)]
    policy_steps: Option<usize>,
    /// Neighbor count for the penalty.
    #[arg(long)]
    k: Option<usize>,
    /// Rollout horizon.
    #[arg(long)]
    horizon: Option<usize>,
    /// Rollouts per epoch.
    #[arg(long)]
    rollout_batch: Option<usize>,
    /// Synthetic replay capacity.
    #[arg(long)]
    capacity: Option<usize>,
    /// Euclidean shortlist size for neighbor queries.
    #[arg(long)]
    shortlist: Option<usize>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long)]
    eval_step_cap: Option<usize>,
}

/// Layered key resolution with an echo of every resolved value.
struct Resolver {
    file: BTreeMap<String, String>,
    requested: BTreeSet<String>,
    echo: Vec<(String, String)>,
}

impl Resolver {
    fn load(path: Option<&Path>) -> Result<Self> {
        let mut file = BTreeMap::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path)?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    Error::invalid(format!(
                        "config line {}: expected key=value, got {line:?}",
                        lineno + 1
                    ))
                })?;
                file.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(Resolver {
            file,
            requested: BTreeSet::new(),
            echo: Vec::new(),
        })
    }

    /// Resolves one key: flag beats `GELATO_*` env beats file beats default.
    fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.requested.insert(key.to_string());
        let value = if let Some(v) = flag {
            v
        } else if let Some(raw) = self.env_value(key) {
            parse_value(key, &raw, "environment")?
        } else if let Some(raw) = self.file.get(key).cloned() {
            parse_value(key, &raw, "config file")?
        } else {
            default
        };
        self.echo.push((key.to_string(), value.to_string()));
        Ok(value)
    }

    fn get_required<T>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.requested.insert(key.to_string());
        let value = if let Some(v) = flag {
            v
        } else if let Some(raw) = self.env_value(key) {
            parse_value(key, &raw, "environment")?
        } else if let Some(raw) = self.file.get(key).cloned() {
            parse_value(key, &raw, "config file")?
        } else {
            return Err(Error::invalid(format!("missing required value --{key}")));
        };
        self.echo.push((key.to_string(), value.to_string()));
        Ok(value)
    }

    fn env_value(&self, key: &str) -> Option<String> {
        let name = format!("GELATO_{}", key.to_uppercase().replace('-', "_"));
        std::env::var(name).ok()
    }

    fn note(&mut self, key: &str, value: impl Display) {
        self.echo.push((key.to_string(), value.to_string()));
    }

    /// Rejects config-file keys no command parameter asked for.
    fn finish(&self) -> Result<()> {
        for key in self.file.keys() {
            if !self.requested.contains(key) {
                return Err(Error::invalid(format!("unknown config key {key:?}")));
            }
        }
        Ok(())
    }

    fn echo_block(&self, command: &str) -> String {
        let mut out = String::from("resolved config:\n");
        out.push_str(&format!("  command = {command}\n"));
        for (k, v) in &self.echo {
            out.push_str(&format!("  {k} = {v}\n"));
        }
        out
    }
}

fn parse_value<T>(key: &str, raw: &str, source: &str) -> Result<T>
where
    T: FromStr,
    T::Err: Display,
{
    raw.parse().map_err(|e| {
        Error::invalid(format!("bad value for {key} from {source}: {raw:?} ({e})"))
    })
}

fn parse_widths(raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|p| parse_value(p.trim(), p.trim(), "hidden widths"))
        .collect::<Result<Vec<usize>>>()
        .map_err(|_| Error::invalid(format!("bad hidden widths {raw:?}")))
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_numerical() {
                3
            } else {
                2
            }
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<()> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::GenData(args) => cmd_gen_data(args, config),
        Command::Train(args) => cmd_train(args, config),
        Command::Visualize(args) => cmd_visualize(args, config),
        Command::Gelato(args) => cmd_gelato(args, config),
    }
}

fn cmd_gen_data(args: GenDataArgs, config: Option<&Path>) -> Result<()> {
    let mut r = Resolver::load(config)?;
    let env_name = r.get("env", args.env, "four-rooms".to_string())?;
    let n = r.get("n", args.n, 10_000)?;
    let seed = r.get("seed", args.seed, 0)?;
    let behavior = r.get("behavior", args.behavior, "uniform".to_string())?;
    let eps = r.get("eps", args.eps, 0.5)?;
    let episode_cap = r.get("episode-cap", args.episode_cap, 100)?;
    let out = r.get_required("out", args.out)?;
    r.finish()?;
    if env_name != "four-rooms" {
        return Err(Error::invalid(format!("unknown environment {env_name:?}")));
    }
    if n == 0 {
        return Err(Error::invalid("--n must be positive"));
    }
    let policy = match behavior.as_str() {
        "uniform" => BehaviorPolicy::UniformRandom,
        "eps-greedy" => BehaviorPolicy::EpsGreedyBfs { eps },
        other => return Err(Error::invalid(format!("unknown behavior {other:?}"))),
    };
    let mut log = r.echo_block("gen-data");
    let env = FourRooms::default_layout();
    let dataset = env.generate_dataset(n, policy, episode_cap, seed)?;
    dataset.save(&out)?;
    let mut lo = vec![f64::INFINITY; dataset.d_s];
    let mut hi = vec![f64::NEG_INFINITY; dataset.d_s];
    for tr in &dataset.transitions {
        for (d, &v) in tr.state.iter().enumerate() {
            lo[d] = lo[d].min(v);
            hi[d] = hi[d].max(v);
        }
    }
    log.push_str(&format!("rows = {}\n", dataset.len()));
    for d in 0..dataset.d_s {
        log.push_str(&format!("state bounds dim {d} = [{}, {}]\n", lo[d], hi[d]));
    }
    print!("{log}");
    fs::write(format!("{out}.log"), log)?;
    Ok(())
}

fn cmd_train(args: TrainArgs, config: Option<&Path>) -> Result<()> {
    let defaults = TrainConfig::default();
    let mut r = Resolver::load(config)?;
    let data = r.get_required("data", args.data)?;
    let dz = r.get("dz", args.dz, 2)?;
    let hidden = r.get("hidden", args.hidden, "256,256".to_string())?;
    let steps1 = r.get("steps1", args.steps1, defaults.steps_phase1)?;
    let steps2 = r.get("steps2", args.steps2, defaults.steps_phase2)?;
    let seed = r.get("seed", args.seed, defaults.seed)?;
    let batch_size = r.get("batch-size", args.batch_size, defaults.batch_size)?;
    let lr = r.get("lr", args.lr, defaults.learning_rate)?;
    let horizon = r.get("horizon", args.horizon, defaults.horizon)?;
    let phase_two = r.get("phase-two", args.phase_two, "network".to_string())?;
    let rbf_clusters = r.get("rbf-clusters", args.rbf_clusters, defaults.rbf_clusters)?;
    let log_every = r.get("log-every", args.log_every, defaults.log_every)?;
    let out = r.get_required("out", args.out)?;
    r.finish()?;
    let phase_two = match phase_two.as_str() {
        "network" => PhaseTwoMode::SigmaNetwork,
        "rbf" => PhaseTwoMode::Rbf,
        other => return Err(Error::invalid(format!("unknown phase-two mode {other:?}"))),
    };
    let mut log = r.echo_block("train");
    let dataset = Dataset::load(&data)?;
    let model_cfg = ModelConfig {
        d_s: dataset.d_s,
        d_a: dataset.d_a,
        d_z: dz,
        hidden: parse_widths(&hidden)?,
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig {
        seed,
        batch_size,
        steps_phase1: steps1,
        steps_phase2: steps2,
        horizon,
        learning_rate: lr,
        phase_two,
        rbf_clusters,
        log_every,
        ..TrainConfig::default()
    };
    let mut bundle = LatentModelBundle::new(model_cfg, seed)?;
    let report = train(&mut bundle, &dataset, &train_cfg)?;
    bundle.save(&out)?;
    let mut curve = String::from("phase,step,loss\n");
    for (step, breakdown) in &report.phase1 {
        curve.push_str(&format!("1,{step},{}\n", breakdown.total()));
    }
    for (step, nll) in &report.phase2 {
        curve.push_str(&format!("2,{step},{nll}\n"));
    }
    fs::write(format!("{out}.curve.csv"), curve)?;
    if let Some((step, breakdown)) = report.phase1.last() {
        log.push_str(&format!("final phase-1 loss = {} (step {step})\n", breakdown.total()));
    }
    if let Some((step, nll)) = report.phase2.last() {
        log.push_str(&format!("final phase-2 loss = {nll} (step {step})\n"));
    }
    log.push_str(&format!("checkpoint fingerprint = {:016x}\n", bundle.fingerprint()));
    print!("{log}");
    fs::write(format!("{out}.log"), log)?;
    Ok(())
}

fn cmd_visualize(args: VisualizeArgs, config: Option<&Path>) -> Result<()> {
    let mut r = Resolver::load(config)?;
    let model = r.get_required("model", args.model)?;
    let out_dir = r.get("out-dir", args.out_dir, "viz".to_string())?;
    let source_row = r.get("source-row", args.source_row, 2)?;
    let source_col = r.get("source-col", args.source_col, 2)?;
    r.finish()?;
    let env = FourRooms::default_layout();
    let source = Cell {
        row: source_row,
        col: source_col,
    };
    if !env.is_free(source) {
        return Err(Error::invalid(format!(
            "source cell ({source_row}, {source_col}) is not a free cell"
        )));
    }
    let mut log = r.echo_block("visualize");
    let bundle = LatentModelBundle::load(&model)?;
    let field = DecoderField::new(&bundle);
    let geo_cfg = GeodesicConfig::default();
    let z_source = bundle.embed_state(&env.to_ambient(source))?.mu;
    let cells = env.free_cells();
    let d_z = bundle.config.d_z;
    let mut header = String::from("row,col");
    for d in 0..d_z {
        header.push_str(&format!(",z{d}"));
    }
    header.push_str(",value\n");
    let mut volume = header.clone();
    let mut geodesic = header.clone();
    let mut euclidean = header;
    for &cell in &cells {
        let z = bundle.embed_state(&env.to_ambient(cell))?.mu;
        let mut prefix = format!("{},{}", cell.row, cell.col);
        for v in &z {
            prefix.push_str(&format!(",{v}"));
        }
        let vol = volume_measure(&field.metric_at(&z)?);
        let geo = estimate_geodesic(&z_source, &z, &field, &geo_cfg)?.distance;
        let euc = z
            .iter()
            .zip(&z_source)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        volume.push_str(&format!("{prefix},{vol}\n"));
        geodesic.push_str(&format!("{prefix},{geo}\n"));
        euclidean.push_str(&format!("{prefix},{euc}\n"));
    }
    fs::create_dir_all(&out_dir)?;
    let dir = Path::new(&out_dir);
    fs::write(dir.join("metric_volume.csv"), volume)?;
    fs::write(dir.join("geodesic_distance.csv"), geodesic)?;
    fs::write(dir.join("euclidean_distance.csv"), euclidean)?;
    log.push_str(&format!("free cells = {}\n", cells.len()));
    print!("{log}");
    fs::write(dir.join("run.log"), log)?;
    Ok(())
}

fn cmd_gelato(args: GelatoArgs, config: Option<&Path>) -> Result<()> {
    let penalty_defaults = PenaltyConfig::default();
    let gelato_defaults = GelatoConfig::default();
    let mut r = Resolver::load(config)?;
    let data = r.get_required("data", args.data)?;
    let model = r.get_required("model", args.model)?;
    let out_dir = r.get("out-dir", args.out_dir, "gelato-run".to_string())?;
    let variant = r.get("variant", args.variant, "gelato".to_string())?;
    let seed = r.get("seed", args.seed, gelato_defaults.seed)?;
    let epochs = r.get("epochs", args.epochs, gelato_defaults.epochs)?;
    let policy_steps = r.get("policy-steps", args.policy_steps, gelato_defaults.policy_steps)?;
    let k = r.get("k", args.k, penalty_defaults.k)?;
    let horizon = r.get("horizon", args.horizon, penalty_defaults.horizon)?;
    let rollout_batch = r.get("rollout-batch", args.rollout_batch, penalty_defaults.rollout_batch)?;
    let capacity = r.get("capacity", args.capacity, penalty_defaults.model_capacity)?;
    let shortlist = r.get("shortlist", args.shortlist, gelato_defaults.shortlist)?;
    let eval_episodes = r.get("eval-episodes", args.eval_episodes, gelato_defaults.eval_episodes)?;
    let eval_step_cap = r.get("eval-step-cap", args.eval_step_cap, gelato_defaults.eval_step_cap)?;
    let variant = match variant.as_str() {
        "gelato" => GelatoVariant::Gelato,
        "unc" => GelatoVariant::Uncertainty,
        "prox" => GelatoVariant::Proximity,
        other => return Err(Error::invalid(format!("unknown variant {other:?}"))),
    };
    let mut penalty = PenaltyConfig {
        k,
        horizon,
        rollout_batch,
        model_capacity: capacity,
        ..PenaltyConfig::default()
    };
    variant.apply(&mut penalty);
    if let Some(lambda) = args.lambda {
        penalty.lambda = lambda;
    } else if let Some(raw) = r.env_value("lambda") {
        penalty.lambda = parse_value("lambda", &raw, "environment")?;
    } else if let Some(raw) = r.file.get("lambda").cloned() {
        penalty.lambda = parse_value("lambda", &raw, "config file")?;
    }
    r.requested.insert("lambda".to_string());
    r.note("lambda", penalty.lambda);
    r.note(
        "alpha_prox",
        penalty
            .alpha_prox
            .map_or("none".to_string(), |a| a.to_string()),
    );
    r.finish()?;
    let mut log = r.echo_block("gelato");
    let dataset = Dataset::load(&data)?;
    let bundle = LatentModelBundle::load(&model)?;
    let env = FourRooms::default_layout();
    let cfg = GelatoConfig {
        seed,
        epochs,
        policy_steps,
        eval_episodes,
        eval_step_cap,
        shortlist,
        model: bundle.config.clone(),
        penalty,
        policy: PolicyConfig {
            d_z: bundle.config.d_z,
            num_actions: bundle.config.d_a,
            ..PolicyConfig::default()
        },
        ..GelatoConfig::default()
    };
    let run = run_gelato_with_bundle(bundle, &env, &dataset, &cfg)?;
    fs::create_dir_all(&out_dir)?;
    let dir = Path::new(&out_dir);
    fs::write(dir.join("metrics.csv"), metrics_csv(&run.metrics))?;
    run.policy.save(dir.join("policy.ckpt"))?;
    let mean_penalty = run.metrics.iter().map(|m| m.mean_penalty).sum::<f64>()
        / run.metrics.len() as f64;
    let last = run.metrics.last().expect("at least one epoch");
    log.push_str(&format!("epochs = {}\n", run.metrics.len()));
    log.push_str(&format!("mean penalty = {mean_penalty}\n"));
    log.push_str(&format!("final eval return = {}\n", last.eval_return));
    print!("{log}");
    fs::write(dir.join("run.log"), log)?;
    Ok(())
}
