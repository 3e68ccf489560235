use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use smpc::bench::{run_benchmark, BenchReport, BenchSpec};
use smpc::nodes::{default_workers, ControllerSettings, SimulatorSettings, Stack, StackSettings};
use smpc::registry::{load_yaml, PluginCatalog, Registry, StackConfig};

/// Sampling-based MPC stack: simulator, controller and websocket GUI bridge.
#[derive(Parser, Debug)]
#[command(name = "smpc", version, args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Time controller updates.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Directory holding the YAML config (`-cp`).
    #[arg(long = "config-path", value_name = "DIR")]
    config_path: Option<PathBuf>,
    /// Config file name without extension (`-cn`).
    #[arg(long = "config-name", value_name = "NAME")]
    config_name: Option<String>,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Run without the websocket bridge.
    #[arg(long)]
    headless: bool,
    /// Stop after this many seconds instead of waiting for Ctrl-C.
    #[arg(long, value_name = "SECS")]
    duration: Option<f64>,
    /// Rollout worker threads (defaults to the number of cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Task names, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "cartpole")]
    task: Vec<String>,
    /// Optimizer names, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "ps")]
    optimizer: Vec<String>,
    /// Worker thread counts, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "10")]
    threads: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long)]
    num_rollouts: Option<usize>,
    /// Planning horizon in seconds.
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print CSV instead of a table.
    #[arg(long)]
    csv: bool,
    #[arg(long = "config-path", value_name = "DIR")]
    config_path: Option<PathBuf>,
    #[arg(long = "config-name", value_name = "NAME")]
    config_name: Option<String>,
}

/// Rewrites the short `-cp`/`-cn` spellings, which clap cannot express as
/// two-letter short flags.
fn expand_short_flags(args: impl IntoIterator<Item = String>) -> Vec<String> {
    args.into_iter()
        .map(|a| match a.as_str() {
            "-cp" => "--config-path".to_string(),
            "-cn" => "--config-name".to_string(),
            _ => {
                if let Some(v) = a.strip_prefix("-cp=") {
                    format!("--config-path={v}")
                } else if let Some(v) = a.strip_prefix("-cn=") {
                    format!("--config-name={v}")
                } else {
                    a
                }
            }
        })
        .collect()
}

fn config_file(dir: Option<&Path>, name: &str) -> PathBuf {
    let dir = dir.unwrap_or(Path::new("."));
    let direct = dir.join(name);
    if direct.extension().is_some_and(|e| e == "yaml" || e == "yml") {
        return direct;
    }
    let yml = dir.join(format!("{name}.yml"));
    if yml.exists() && !dir.join(format!("{name}.yaml")).exists() {
        return yml;
    }
    dir.join(format!("{name}.yaml"))
}

fn load_stack(dir: Option<&Path>, name: Option<&str>) -> anyhow::Result<StackConfig> {
    match (dir, name) {
        (_, Some(name)) => {
            let path = config_file(dir, name);
            load_yaml(&path, &PluginCatalog::builtin(), Registry::builtin())
                .with_context(|| format!("{}", path.display()))
        }
        (Some(_), None) => bail!("-cp needs a config name (-cn)"),
        (None, None) => Ok(StackConfig::default()),
    }
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let config = load_stack(args.config_path.as_deref(), args.config_name.as_deref())?;
    let (task, optimizer) = (config.task.clone(), config.optimizer.clone());
    let settings = StackSettings {
        port: (!args.headless).then_some(args.port),
        host: args.host.clone(),
        simulator: SimulatorSettings { seed: args.seed, ..Default::default() },
        controller: ControllerSettings {
            workers: args.threads.unwrap_or_else(default_workers),
            seed: args.seed,
            ..Default::default()
        },
    };

    let interrupted = Arc::new(AtomicBool::new(false));
    let flag = interrupted.clone();
    ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)).context("installing Ctrl-C handler")?;

    let mut stack = Stack::spawn(config, settings).context("starting stack")?;
    match &stack.bridge {
        Some(b) => println!("GUI bridge listening on {}", b.url()),
        None => println!("running headless"),
    }
    println!("task: {task}, optimizer: {optimizer}");

    let started = Instant::now();
    let mut last_report = Instant::now();
    while !interrupted.load(Ordering::SeqCst) {
        if args.duration.is_some_and(|d| started.elapsed().as_secs_f64() >= d) {
            break;
        }
        std::thread::sleep(Duration::from_millis(50));
        if last_report.elapsed() >= Duration::from_secs(5) {
            last_report = Instant::now();
            if let Some((_, s)) = stack.bus.stats.latest() {
                log::info!(
                    "{}/{} iteration {}: update {:.2} ± {:.2} ms",
                    s.task,
                    s.optimizer,
                    s.iteration,
                    s.update_ms_mean,
                    s.update_ms_std
                );
            }
        }
    }
    stack.shutdown();
    let iterations = stack.bus.stats.latest().map_or(0, |(_, s)| s.iteration);
    println!("stopped after {iterations} controller updates");
    Ok(())
}

fn bench(args: BenchArgs) -> anyhow::Result<()> {
    let registry = load_stack(args.config_path.as_deref(), args.config_name.as_deref())?.registry;
    if args.csv {
        println!("{}", BenchReport::CSV_HEADER);
    } else {
        println!("{}", BenchReport::table_header());
    }
    for task in &args.task {
        for optimizer in &args.optimizer {
            for &threads in &args.threads {
                let spec = BenchSpec {
                    task: task.clone(),
                    optimizer: optimizer.clone(),
                    threads,
                    iters: args.iters,
                    seed: args.seed,
                    num_rollouts: args.num_rollouts,
                    horizon: args.horizon,
                };
                let report = run_benchmark(&registry, &spec)?;
                if args.csv {
                    println!("{}", report.csv_row());
                } else {
                    println!("{}", report.table_row());
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse_from(expand_short_flags(std::env::args()));
    let result = match cli.command {
        Some(Command::Bench(args)) => bench(args),
        None => run(cli.run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("smpc: {e:#}");
            ExitCode::FAILURE
        }
    }
}
