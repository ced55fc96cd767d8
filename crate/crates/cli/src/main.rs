use std::path::PathBuf;
use std::process::ExitCode;

use bits_cli::config::RunConfig;
use bits_cli::pipeline::{cmd_eval, cmd_gen, cmd_sim, cmd_sweep, cmd_train, SweepAxis};
use bits_cli::plot::render_svg;
use bits_cli::Result;
use bits_core::io::write_atomic;
use bits_core::simengine::{PolicyKind, Rollout};
use bits_core::world::gen_map;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bits", version, about = "Bi-level imitation traffic simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Use only the first N test scenes.
    #[arg(long)]
    scenes: Option<usize>,
    /// Rollouts per scene.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_parser = parse_policy)]
    policy: Option<PolicyKind>,
    /// Root for simulation, evaluation and sweep outputs.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_policy(s: &str) -> std::result::Result<PolicyKind, String> {
    s.parse::<PolicyKind>().map_err(|e| e.to_string())
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.jobs {
            cfg.jobs = v;
        }
        if let Some(v) = self.scenes {
            cfg.scenes = Some(v);
        }
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if let Some(v) = self.policy {
            cfg.policy = v;
        }
        if let Some(v) = &self.out {
            cfg.paths.outputs = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate train and test scene logs.
    Gen(Common),
    /// Train the goal, policy/predictor and occupancy networks.
    Train(Common),
    /// Roll out the selected policy on the test scenes.
    Sim(Common),
    /// Compute the metric report of a simulation.
    Eval(Common),
    /// Run an ablation sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// cost_weights, horizon or ou_sigma
        #[arg(long)]
        axis: SweepAxis,
    },
    /// Render a rollout file as SVG.
    Plot {
        rollout: PathBuf,
        /// Output SVG path; defaults to the rollout path with an .svg extension.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the resolved configuration.
    Config(Common),
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(c) => println!("{}", cmd_gen(&c.resolve()?)?.display()),
        Command::Train(c) => {
            let cfg = c.resolve()?;
            cmd_gen(&cfg)?;
            println!("{}", cmd_train(&cfg)?.display());
        }
        Command::Sim(c) => println!("{}", cmd_sim(&c.resolve()?)?.display()),
        Command::Eval(c) => {
            let (dir, ev) = cmd_eval(&c.resolve()?)?;
            print!("{}", bits_core::metrics::MetricReport::to_csv(&[ev.report]));
            println!("{}", dir.display());
        }
        Command::Sweep { common, axis } => {
            let (dir, points) = cmd_sweep(&common.resolve()?, axis)?;
            print!("{}", bits_cli::pipeline::sweep_csv(&points));
            println!("{}", dir.display());
        }
        Command::Plot { rollout, out } => {
            let r = Rollout::load(&rollout)?;
            let (_, grid) = gen_map(&r.map)?;
            let path = out.unwrap_or_else(|| rollout.with_extension("svg"));
            write_atomic(&path, render_svg(&r, &grid).as_bytes())?;
            println!("{}", path.display());
        }
        Command::Config(c) => print!("{}", c.resolve()?.to_toml()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
