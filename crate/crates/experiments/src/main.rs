use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mafe_core::config::MafeConfig;
use mafe_core::envs::{make_env, EnvKind};
use mafe_core::trainer::TrainConfig;
use mafe_core::{MafeError, Result};
use mafe_experiments::studies::{self, Arm, BaselineOptions};
use mafe_experiments::{catalog, output};

#[derive(Parser)]
#[command(name = "mafe", about = "Experiments on the fair multi-agent environments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// loan, healthcare or education
    #[arg(long)]
    env: String,
    /// TOML config file; missing keys take their defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated master seeds
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Config override, e.g. --set loan.horizon=24 (repeatable)
    #[arg(long = "set")]
    overrides: Vec<String>,
}

#[derive(Args, Clone)]
struct Training {
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    /// Sampled parameter vectors per epoch
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, default_value_t = 0.2)]
    elite_fraction: f64,
}

impl Training {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            episodes_per_epoch: self.episodes,
            elite_fraction: self.elite_fraction,
            ..TrainConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Episodes with the reference policies
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        episodes: usize,
    },
    /// Train all agents jointly
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        training: Training,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        /// Resume from / save to this checkpoint
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Paired baseline and intervened runs
    Intervene {
        #[command(flatten)]
        common: Common,
        /// Intervention name; all of the env's interventions when omitted
        #[arg(long)]
        name: Option<String>,
    },
    /// Direct / Direct+Fair / Direct+Fair+Rate objectives
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        training: Training,
    },
    /// Reward and fairness reached per lambda
    Frontier {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        training: Training,
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
        lambdas: Vec<f64>,
        #[arg(long, default_value_t = 30)]
        eval_episodes: usize,
    },
    /// Fixed, single-agent and multi-agent policies on the loan env
    Baselines {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        training: Training,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[arg(long, default_value_t = 30)]
        eval_episodes: usize,
        /// Replace the fixed actions by a grid search at this resolution
        #[arg(long)]
        grid: Option<usize>,
        /// Per-group offset of the second grid tier
        #[arg(long, default_value_t = 0.06)]
        grid_step: f64,
    },
}

fn setup(common: &Common) -> Result<(EnvKind, MafeConfig)> {
    let kind: EnvKind = common.env.parse()?;
    let cfg = MafeConfig::load(common.config.as_deref(), &common.overrides)?;
    if common.seeds.is_empty() {
        return Err(MafeError::Config("at least one seed is required".into()));
    }
    std::fs::create_dir_all(&common.out)?;
    Ok((kind, cfg))
}

fn agent_names(kind: EnvKind, cfg: &MafeConfig) -> Result<Vec<String>> {
    Ok(make_env(kind, cfg)?.agent_specs().iter().map(|s| s.name.clone()).collect())
}

fn json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| MafeError::Io(e.into()))?;
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize)]
struct InterventionRow<'a> {
    intervention: &'a str,
    seed: u64,
    target: &'a str,
    baseline: f64,
    intervened: f64,
    direction_holds: bool,
}

#[derive(Serialize)]
struct BaselineCsvRow<'a> {
    name: &'a str,
    seed: u64,
    success: f64,
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { common, episodes } => {
            let (kind, cfg) = setup(&common)?;
            let spec = studies::lambda_spec(kind, &cfg, 0.5)?;
            let policies = catalog::reference_policies(kind, &cfg);
            let mut arms = Vec::new();
            for &seed in &common.seeds {
                for i in 0..episodes {
                    let s = if episodes == 1 { seed } else { studies::eval_seed(seed, i) };
                    let (result, trace) = studies::run_policies(kind, &cfg, &policies, s, &spec)?;
                    arms.push((s, Arm { result, indicators: trace.indicators }));
                }
            }
            let results: Vec<_> = arms.iter().map(|(_, a)| a.result.clone()).collect();
            output::write_jsonl(&common.out.join("episodes.jsonl"), &results)?;
            let labelled: Vec<_> = arms.iter().map(|(s, a)| (*s, "reference", a)).collect();
            output::write_indicators(&common.out.join("indicators.csv"), &labelled)?;
        }
        Command::Train { common, training, lambda, checkpoint } => {
            let (kind, cfg) = setup(&common)?;
            let names = agent_names(kind, &cfg)?;
            for &seed in &common.seeds {
                let spec = studies::lambda_spec(kind, &cfg, lambda)?;
                let tc = TrainConfig { seed, ..training.config() };
                let out = studies::train(kind, &cfg, &tc, spec, checkpoint.clone())?;
                let label = format!("seed{seed}");
                output::write_jsonl(&common.out.join(format!("history_{label}.jsonl")), &out.history)?;
                output::export_actions(&common.out, &label, &out.history, &names)?;
                json(&common.out.join(format!("dist_{label}.json")), &out.dist)?;
            }
        }
        Command::Intervene { common, name } => {
            let (kind, cfg) = setup(&common)?;
            let ivs = match name {
                Some(n) => vec![catalog::lookup(kind, &n)?],
                None => catalog::names(kind).into_iter().map(|n| catalog::lookup(kind, n)).collect::<Result<_>>()?,
            };
            let mut rows = Vec::new();
            for iv in &ivs {
                let runs = studies::intervene(iv, &cfg, &common.seeds)?;
                output::write_indicators(
                    &common.out.join(format!("indicators_{}.csv", iv.name)),
                    &output::paired_arms(&runs),
                )?;
                for r in &runs {
                    rows.push(InterventionRow {
                        intervention: iv.name,
                        seed: r.seed,
                        target: iv.target,
                        baseline: r.baseline.terminal(iv.target).unwrap_or(f64::NAN),
                        intervened: r.intervened.terminal(iv.target).unwrap_or(f64::NAN),
                        direction_holds: r.direction_holds(iv),
                    });
                }
            }
            output::write_csv(&common.out.join("interventions.csv"), &rows)?;
        }
        Command::Ablate { common, training } => {
            let (kind, cfg) = setup(&common)?;
            let names = agent_names(kind, &cfg)?;
            let runs = studies::ablate(kind, &cfg, &training.config(), &common.seeds)?;
            for r in &runs {
                let label = format!("{}_seed{}", r.label.replace('+', "-"), r.seed);
                output::write_jsonl(&common.out.join(format!("history_{label}.jsonl")), &r.history)?;
                output::export_actions(&common.out, &label, &r.history, &names)?;
            }
        }
        Command::Frontier { common, training, lambdas, eval_episodes } => {
            let (kind, cfg) = setup(&common)?;
            let points =
                studies::frontier(kind, &cfg, &training.config(), &lambdas, &common.seeds, eval_episodes)?;
            output::write_csv(&common.out.join("frontier.csv"), &points)?;
        }
        Command::Baselines { common, training, lambda, eval_episodes, grid, grid_step } => {
            let (kind, cfg) = setup(&common)?;
            if kind != EnvKind::Loan {
                return Err(MafeError::Config("baselines are defined for the loan env only".into()));
            }
            let mut opts = BaselineOptions { train: training.config(), lambda, eval_episodes, ..Default::default() };
            if let Some(res) = grid {
                let g = studies::grid_baseline(&cfg, res, grid_step, lambda, common.seeds[0], eval_episodes)?;
                json(&common.out.join("grid.json"), &g)?;
                opts.thresholds = g.thresholds;
                opts.debt = g.debt;
            }
            let rows = studies::baselines(&cfg, &opts, &common.seeds)?;
            output::write_jsonl(&common.out.join("baselines.jsonl"), &rows)?;
            let flat: Vec<_> =
                rows.iter().map(|r| BaselineCsvRow { name: &r.name, seed: r.seed, success: r.success }).collect();
            output::write_csv(&common.out.join("baselines.csv"), &flat)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("MAFE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Only fails if the pool was already built.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(mafe_experiments::exit_code(&e))
        }
    }
}
