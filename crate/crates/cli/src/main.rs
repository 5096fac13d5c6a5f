//! `predprey`: batch runs of the stochastic predator-prey toolkit.

mod commands;
mod config;
mod manifest;

use clap::{Args, Parser, Subcommand};
use commands::{Context, Failure, Success};
use manifest::{digest_outputs, sha256_hex, unix_now, RunManifest, WallClock};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "predprey", version, about = "Stochastic predator-prey analyses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Threshold, regime and literature conditions for one parameter set.
    Classify(Common),
    /// Write simulated paths as CSV.
    Simulate(Common),
    /// Long-run averages, growth rates and occupation over many paths.
    Ergodic(Common),
    /// Support of the stationary law under shared noise.
    Support(Common),
    /// Bracket rank over a grid of log-states.
    LieRank(Common),
    /// Regime map over coefficient grids.
    Sweep(Common),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Classify(_) => "classify",
            Command::Simulate(_) => "simulate",
            Command::Ergodic(_) => "ergodic",
            Command::Support(_) => "support",
            Command::LieRank(_) => "lie-rank",
            Command::Sweep(_) => "sweep",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Classify(c)
            | Command::Simulate(c)
            | Command::Ergodic(c)
            | Command::Support(c)
            | Command::LieRank(c)
            | Command::Sweep(c) => c,
        }
    }
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, env = "PREDPREY_WORKERS")]
    workers: Option<usize>,
    /// Overrides eps_critical in the config.
    #[arg(long)]
    eps_critical: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = run(&cli.command);
    ExitCode::from(code as u8)
}

fn run(cmd: &Command) -> i32 {
    let started = unix_now();
    let clock = Instant::now();
    let common = cmd.common();
    let loaded = match config::load(&common.config) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("config error: {e}");
            return 2;
        }
    };
    let seed = common.seed.unwrap_or(loaded.config.seed);
    let eps_critical = common.eps_critical.unwrap_or(loaded.config.eps_critical);
    if !(eps_critical >= 0.0 && eps_critical.is_finite()) {
        eprintln!("config error: --eps-critical must be finite and >= 0");
        return 2;
    }
    let workers = match common.workers {
        Some(0) => {
            eprintln!("config error: --workers must be at least 1");
            return 2;
        }
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("cannot start worker pool: {e}");
            return 1;
        }
    };
    if let Err(e) = std::fs::create_dir_all(&common.out) {
        eprintln!("cannot create {}: {e}", common.out.display());
        return 1;
    }

    let mut snapshot = loaded.config.clone();
    snapshot.seed = seed;
    snapshot.eps_critical = eps_critical;
    let config_sha256 = sha256_hex(loaded.text.as_bytes());
    let config_path = loaded.path.clone();
    let mut ctx = Context {
        loaded,
        seed,
        eps_critical,
        out: common.out.clone(),
        files: Vec::new(),
    };
    let result: Result<Success, Failure> = pool.install(|| match cmd {
        Command::Classify(_) => commands::classify(&mut ctx),
        Command::Simulate(_) => commands::simulate(&mut ctx),
        Command::Ergodic(_) => commands::ergodic(&mut ctx),
        Command::Support(_) => commands::support(&mut ctx),
        Command::LieRank(_) => commands::lie_rank(&mut ctx),
        Command::Sweep(_) => commands::sweep_cmd(&mut ctx),
    });
    let code = match &result {
        Ok(s) => {
            if let Some(line) = &s.summary {
                println!("{line}");
            }
            s.exit_code
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    };

    let outputs = match digest_outputs(&ctx.out, &ctx.files) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("cannot digest outputs: {e}");
            return 1;
        }
    };
    let manifest = RunManifest {
        tool: "predprey",
        version: env!("CARGO_PKG_VERSION"),
        subcommand: cmd.name().to_string(),
        seed,
        workers,
        config_path,
        config_sha256,
        config: serde_json::to_value(&snapshot).unwrap_or(serde_json::Value::Null),
        wall_clock: WallClock {
            started_unix: started,
            elapsed_seconds: clock.elapsed().as_secs_f64(),
        },
        exit_code: code,
        outputs,
    };
    if let Err(e) = manifest.write(&ctx.out) {
        eprintln!("cannot write manifest: {e}");
        return 1;
    }
    code
}
