//! Control-update timing.

use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use crate::controller::Controller;
use crate::error::{Error, Result};
use crate::nodes::mean_std;
use crate::registry::Registry;

/// Updates run and discarded before timing starts.
pub const WARMUP_ITERS: usize = 5;

#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub task: String,
    pub optimizer: String,
    pub threads: usize,
    pub iters: usize,
    pub seed: u64,
    pub num_rollouts: Option<usize>,
    pub horizon: Option<f64>,
}

impl BenchSpec {
    pub fn new(task: &str, optimizer: &str, threads: usize) -> Self {
        Self {
            task: task.into(),
            optimizer: optimizer.into(),
            threads,
            iters: 100,
            seed: 0,
            num_rollouts: None,
            horizon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub task: String,
    pub optimizer: String,
    pub threads: usize,
    pub num_rollouts: usize,
    pub horizon_s: f64,
    pub steps: usize,
    pub iters: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub rollouts_per_s: f64,
    pub rollout_steps_per_s: f64,
    pub total_rollouts: usize,
}

impl BenchReport {
    pub const CSV_HEADER: &'static str = "task,optimizer,threads,num_rollouts,horizon_s,mean_ms,std_ms,rollouts_per_s";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.4},{:.4},{:.1}",
            self.task,
            self.optimizer,
            self.threads,
            self.num_rollouts,
            self.horizon_s,
            self.mean_ms,
            self.std_ms,
            self.rollouts_per_s
        )
    }

    pub fn table_header() -> String {
        format!(
            "{:<18} {:<10} {:>7} {:>8} {:>9} {:>18} {:>12} {:>16}",
            "task", "optimizer", "threads", "rollouts", "horizon_s", "update (ms)", "rollouts/s", "steps/s"
        )
    }

    pub fn table_row(&self) -> String {
        let mut s = String::new();
        let timing = format!("{:.2} ± {:.2}", self.mean_ms, self.std_ms);
        let _ = write!(
            s,
            "{:<18} {:<10} {:>7} {:>8} {:>9} {:>18} {:>12.0} {:>16.0}",
            self.task,
            self.optimizer,
            self.threads,
            self.num_rollouts,
            self.horizon_s,
            timing,
            self.rollouts_per_s,
            self.rollout_steps_per_s
        );
        s
    }
}

/// Times `spec.iters` controller updates, each from a freshly reset state,
/// after [`WARMUP_ITERS`] untimed ones. Only the update call is timed.
pub fn run_benchmark(registry: &Registry, spec: &BenchSpec) -> Result<BenchReport> {
    if spec.iters < 10 {
        return Err(Error::InvalidConfig(format!("benchmark needs at least 10 iterations, got {}", spec.iters)));
    }
    let mut resolved = registry.resolve_config(&spec.task, &spec.optimizer)?;
    if let Some(n) = spec.num_rollouts {
        resolved.optimizer.set_json("num_rollouts", &json!(n))?;
    }
    if let Some(h) = spec.horizon {
        crate::config::DynConfig::set_json(&mut resolved.controller, "horizon", &json!(h))?;
    }
    let task = registry.build_task(&spec.task, &*resolved.task)?;
    let optimizer = registry.build_optimizer(&spec.optimizer, &*resolved.optimizer)?;
    let settings = resolved.controller.rollout_settings();
    let steps = settings.steps()?;
    let mut controller = Controller::new(task, optimizer, resolved.controller.clone(), spec.threads, spec.seed)?;
    let num_rollouts = controller.optimizer().num_rollouts();

    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(spec.seed ^ 0x5eed);
    let mut times = Vec::with_capacity(spec.iters);
    for i in 0..WARMUP_ITERS + spec.iters {
        let x0 = controller.task().reset(&mut rng);
        let start = Instant::now();
        controller.update(&x0)?;
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        if i >= WARMUP_ITERS {
            times.push(elapsed);
        }
    }
    let (mean_ms, std_ms) = mean_std(times.iter().copied());
    let rollouts_per_s = num_rollouts as f64 / (mean_ms / 1e3);
    Ok(BenchReport {
        task: spec.task.clone(),
        optimizer: spec.optimizer.clone(),
        threads: spec.threads,
        num_rollouts,
        horizon_s: resolved.controller.horizon,
        steps,
        iters: spec.iters,
        mean_ms,
        std_ms,
        rollouts_per_s,
        rollout_steps_per_s: rollouts_per_s * steps as f64,
        total_rollouts: num_rollouts * spec.iters,
    })
}
