//! The running stack: a simulator node, a controller node and a websocket
//! bridge, each on its own thread, talking only through a [`Bus`].
//!
//! The simulator is the only node that touches the "system". A hardware
//! driver can take its place by publishing [`StateMsg`]s and reading
//! [`PlanMsg`]s from the same bus.

mod bridge;
mod bus;
mod messages;

pub use bridge::{spawn_bridge, BridgeHandle};
pub use bus::{Bus, Topic};
pub use messages::{
    CommandMsg, ErrorMsg, Inbound, NodeMessage, ParamScope, ParamUpdateMsg, PlanMsg, SchemaMsg, SchemaScope,
    Sequenced, StateMsg, StatsMsg, Trace, TracesMsg,
};

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::controller::{Controller, ControllerConfig};
use crate::error::{Error, Result};
use crate::registry::{ConfigScope, Registry, StackConfig};
use crate::rollout::top_traces;
use crate::spline::ControlPlan;
use crate::tasks::{AnyTask, TaskState};

/// A running node thread.
pub struct NodeHandle {
    name: &'static str,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<()>>,
}

impl NodeHandle {
    fn spawn(name: &'static str, body: impl FnOnce(Arc<AtomicBool>) + Send + 'static) -> Result<Self> {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let join = thread::Builder::new().name(name.to_string()).spawn(move || body(flag))?;
        Ok(Self { name, stop, join: Some(join) })
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn is_running(&self) -> bool {
        self.join.as_ref().is_some_and(|j| !j.is_finished())
    }

    /// Asks the node to stop without waiting for it.
    pub fn request_stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
    }

    /// Stops the node and waits for its thread to exit.
    pub fn stop(&mut self) {
        self.request_stop();
        if let Some(j) = self.join.take() {
            if j.join().is_err() {
                log::error!("{} node panicked", self.name);
            }
        }
    }
}

impl Drop for NodeHandle {
    fn drop(&mut self) {
        self.request_stop();
    }
}

#[derive(Debug, Clone)]
pub struct SimulatorSettings {
    pub dt_sim: f64,
    pub seed: u64,
    /// Sleep to keep simulated time in step with the wall clock.
    pub realtime: bool,
}

impl Default for SimulatorSettings {
    fn default() -> Self {
        Self { dt_sim: 0.01, seed: 0, realtime: true }
    }
}

struct Simulator {
    registry: Arc<Registry>,
    bus: Arc<Bus>,
    task_name: String,
    task: Box<dyn AnyTask>,
    rng: ChaCha8Rng,
    state: TaskState,
    paused: bool,
    plan: Option<(u64, ControlPlan)>,
    u: Vec<f64>,
    inbound: u64,
}

impl Simulator {
    fn new(registry: Arc<Registry>, bus: Arc<Bus>, task_name: &str, seed: u64) -> Result<Self> {
        let cfg = registry.resolve_task_config(task_name)?;
        let task = registry.build_task(task_name, &*cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = task.reset(&mut rng);
        let nu = task.info().nu;
        Ok(Self {
            registry,
            bus,
            task_name: task_name.to_string(),
            task,
            rng,
            state,
            paused: false,
            plan: None,
            u: vec![0.0; nu],
            inbound: 0,
        })
    }

    fn report(&self, msg: String) {
        log::warn!("simulator: {msg}");
        self.bus.errors.publish(ErrorMsg::new(msg));
    }

    fn handle_inbound(&mut self) {
        for (seq, msg) in self.bus.inbound.since(self.inbound) {
            self.inbound = seq;
            match &*msg {
                Inbound::Command(CommandMsg::Pause) => self.paused = true,
                Inbound::Command(CommandMsg::Resume) => self.paused = false,
                Inbound::Command(CommandMsg::Reset) => self.reset(),
                Inbound::Command(CommandMsg::SwitchTask { task }) => {
                    if let Err(e) = self.switch(task) {
                        self.report(format!("cannot switch to task `{task}`: {e}"));
                    }
                }
                Inbound::Param(p) if p.scope == ParamScope::Task => {
                    // Errors are reported by the controller, which owns the
                    // authoritative copy.
                    let _ = self.task.config_mut().set_json(&p.path, &p.value);
                }
                _ => {}
            }
        }
    }

    fn reset(&mut self) {
        let t = self.state.t;
        self.state = self.task.reset(&mut self.rng);
        self.state.t = t;
    }

    fn switch(&mut self, name: &str) -> Result<()> {
        let cfg = self.registry.resolve_task_config(name)?;
        self.task = self.registry.build_task(name, &*cfg)?;
        self.task_name = name.to_string();
        self.u = vec![0.0; self.task.info().nu];
        self.plan = None;
        self.reset();
        Ok(())
    }

    fn refresh_plan(&mut self) {
        let Some((seq, msg)) = self.bus.plan.latest() else { return };
        if self.plan.as_ref().is_some_and(|(s, _)| *s == seq) {
            return;
        }
        if msg.nu != self.task.info().nu {
            return;
        }
        match msg.to_plan() {
            Ok(p) => self.plan = Some((seq, p)),
            Err(e) => self.report(format!("ignoring malformed plan: {e}")),
        }
    }

    fn step(&mut self, dt: f64) {
        if self.paused {
            self.state.t += dt;
            return;
        }
        self.refresh_plan();
        match &self.plan {
            Some((_, plan)) => plan.interpolate_into(self.state.t, &mut self.u),
            None => self.u.iter_mut().for_each(|u| *u = 0.0),
        }
        match self.task.step(&self.state, &self.u, dt) {
            Ok(next) if next.is_finite() => self.state = next,
            Ok(_) | Err(_) => {
                self.report(format!("{} diverged; resetting", self.task_name));
                self.state.t += dt;
                self.reset();
            }
        }
    }

    fn publish(&self) {
        self.bus.state.publish(StateMsg {
            seq: 0,
            t: self.state.t,
            q: self.state.q.clone(),
            v: self.state.v.clone(),
            task: self.task_name.clone(),
        });
    }
}

/// Starts the simulator for `task`. Applies the latest plan (zero control
/// before the first one) and publishes a state after every step.
pub fn spawn_simulator(
    bus: Arc<Bus>,
    registry: Arc<Registry>,
    task: &str,
    settings: SimulatorSettings,
) -> Result<NodeHandle> {
    if !(settings.dt_sim > 0.0) {
        return Err(Error::NonPositiveStep(settings.dt_sim));
    }
    let mut sim = Simulator::new(registry, bus, task, settings.seed)?;
    sim.publish();
    let dt = settings.dt_sim;
    NodeHandle::spawn("simulator", move |stop| {
        let period = Duration::from_secs_f64(dt);
        let mut next = Instant::now();
        while !stop.load(Ordering::SeqCst) {
            sim.handle_inbound();
            sim.step(dt);
            sim.publish();
            if settings.realtime {
                next += period;
                let now = Instant::now();
                if next > now {
                    thread::sleep(next - now);
                } else if now - next > 10 * period {
                    // Far behind (e.g. the host was suspended); don't try to catch up.
                    next = now;
                }
            } else {
                thread::yield_now();
            }
        }
    })
}

#[derive(Debug, Clone)]
pub struct ControllerSettings {
    pub workers: usize,
    pub seed: u64,
    /// How long to wait for a fresh state before replanning from the last one.
    pub state_wait: Duration,
}

impl Default for ControllerSettings {
    fn default() -> Self {
        Self { workers: default_workers(), seed: 0, state_wait: Duration::from_millis(10) }
    }
}

pub fn default_workers() -> usize {
    thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

struct ControllerNode {
    registry: Arc<Registry>,
    bus: Arc<Bus>,
    controller: Controller,
    task: String,
    optimizer: String,
    timings: VecDeque<f64>,
    inbound: u64,
}

impl ControllerNode {
    fn new(registry: Arc<Registry>, bus: Arc<Bus>, task: &str, optimizer: &str, s: &ControllerSettings) -> Result<Self> {
        let (t, o, resolved) = registry.build(task, optimizer)?;
        let controller = Controller::new(t, o, resolved.controller, s.workers, s.seed)?;
        Ok(Self {
            registry,
            bus,
            controller,
            task: task.to_string(),
            optimizer: optimizer.to_string(),
            timings: VecDeque::new(),
            inbound: 0,
        })
    }

    fn report(&self, msg: String) {
        log::warn!("controller: {msg}");
        self.bus.errors.publish(ErrorMsg::new(msg));
    }

    fn publish_schema(&self, scope: SchemaScope) {
        let schema = match scope {
            SchemaScope::Stack => Ok(self.registry.stack_schema(&self.task, &self.optimizer)),
            SchemaScope::Task => self.registry.schema_for(
                &self.task,
                &self.optimizer,
                &ConfigScope::Task,
                self.controller.task().config(),
            ),
            SchemaScope::Optimizer => self.registry.schema_for(
                &self.task,
                &self.optimizer,
                &ConfigScope::Optimizer(self.optimizer.clone()),
                self.controller.optimizer().config(),
            ),
            SchemaScope::Controller => self.registry.schema_for(
                &self.task,
                &self.optimizer,
                &ConfigScope::Controller,
                self.controller.config(),
            ),
        };
        match schema {
            Ok(s) => {
                self.bus.schema(scope).publish(SchemaMsg { seq: 0, scope, fields: s.fields });
            }
            Err(e) => self.report(format!("cannot build {scope:?} schema: {e}")),
        }
    }

    fn publish_schemas(&self) {
        for scope in SchemaScope::ALL {
            self.publish_schema(scope);
        }
    }

    fn switch(&mut self, task: &str, optimizer: &str) -> Result<()> {
        let (t, o, resolved) = self.registry.build(task, optimizer)?;
        self.controller.replace(t, o, resolved.controller)?;
        self.task = task.to_string();
        self.optimizer = optimizer.to_string();
        self.timings.clear();
        self.publish_schemas();
        Ok(())
    }

    fn apply_param(&mut self, p: &ParamUpdateMsg) -> Result<()> {
        match p.scope {
            ParamScope::Task => {
                self.controller.task_mut().config_mut().set_json(&p.path, &p.value)?;
                self.publish_schema(SchemaScope::Task);
            }
            ParamScope::Optimizer => {
                // Rebuilt rather than edited in place so that size changes
                // (rollouts, knots) start from consistent optimizer state.
                let mut cfg = self.controller.optimizer().config().clone_box();
                cfg.set_json(&p.path, &p.value)?;
                let opt = self.registry.build_optimizer(&self.optimizer, &*cfg)?;
                self.controller.set_optimizer(opt);
                self.publish_schema(SchemaScope::Optimizer);
            }
            ParamScope::Controller => {
                let mut cfg: ControllerConfig = self.controller.config().clone();
                crate::config::DynConfig::set_json(&mut cfg, &p.path, &p.value)?;
                self.controller.set_config(cfg)?;
                self.publish_schema(SchemaScope::Controller);
            }
        }
        Ok(())
    }

    fn handle_inbound(&mut self) {
        for (seq, msg) in self.bus.inbound.since(self.inbound) {
            self.inbound = seq;
            let result = match &*msg {
                Inbound::Param(p) => self
                    .apply_param(p)
                    .map_err(|e| format!("rejected {:?} update of `{}`: {e}", p.scope, p.path)),
                Inbound::Command(CommandMsg::SwitchTask { task }) => {
                    let opt = self.optimizer.clone();
                    self.switch(task, &opt).map_err(|e| format!("cannot switch to task `{task}`: {e}"))
                }
                Inbound::Command(CommandMsg::SwitchOptimizer { optimizer }) => {
                    let task = self.task.clone();
                    self.switch(&task, optimizer)
                        .map_err(|e| format!("cannot switch to optimizer `{optimizer}`: {e}"))
                }
                Inbound::Command(CommandMsg::Reset) => {
                    self.controller.reset().map_err(|e| format!("reset failed: {e}"))
                }
                Inbound::Command(CommandMsg::Pause | CommandMsg::Resume) => Ok(()),
            };
            if let Err(msg) = result {
                self.report(msg);
            }
        }
    }

    fn iterate(&mut self, x0: &TaskState) {
        let batch = match self.controller.update(x0) {
            Ok(b) => b,
            Err(e) => {
                self.report(format!("update failed: {e}"));
                return;
            }
        };
        self.bus.plan.publish(PlanMsg::from_plan(&self.controller.plan()));

        let task = self.controller.task();
        let mut traces = Vec::new();
        for i in top_traces(&batch, self.controller.config().max_num_traces) {
            let reward = batch.rewards[i];
            for points in batch.trace(task, i) {
                traces.push(Trace { points, reward: reward.is_finite().then_some(reward), nominal: i == 0 });
            }
        }
        self.bus.traces.publish(TracesMsg { seq: 0, traces });

        if self.timings.len() == 100 {
            self.timings.pop_front();
        }
        self.timings.push_back(self.controller.last_update().as_secs_f64() * 1e3);
        let (mean, std) = mean_std(self.timings.iter().copied());
        self.bus.stats.publish(StatsMsg {
            seq: 0,
            update_ms_mean: mean,
            update_ms_std: std,
            iteration: self.controller.iteration(),
            task: self.task.clone(),
            optimizer: self.optimizer.clone(),
        });
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(xs: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let xs: Vec<f64> = xs.into_iter().collect();
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Starts the controller node. It replans from the newest state of the
/// active task, or from the last one it saw if no new state arrives.
pub fn spawn_controller(
    bus: Arc<Bus>,
    registry: Arc<Registry>,
    task: &str,
    optimizer: &str,
    settings: ControllerSettings,
) -> Result<NodeHandle> {
    let mut node = ControllerNode::new(registry, bus, task, optimizer, &settings)?;
    node.publish_schemas();
    NodeHandle::spawn("controller", move |stop| {
        let mut last: Option<(u64, Arc<StateMsg>)> = None;
        while !stop.load(Ordering::SeqCst) {
            node.handle_inbound();
            let cursor = last.as_ref().map_or(0, |(s, _)| *s);
            if let Some(fresh) = node.bus.state.wait_newer(cursor, settings.state_wait) {
                last = Some(fresh);
            }
            let Some((_, msg)) = &last else { continue };
            if msg.task != node.task || msg.q.len() != node.controller.task().info().nq {
                // Simulator has not caught up with a task switch yet.
                thread::sleep(settings.state_wait);
                continue;
            }
            let x0 = TaskState::new(msg.t, msg.q.clone(), msg.v.clone());
            node.iterate(&x0);
        }
    })
}

#[derive(Debug, Clone)]
pub struct StackSettings {
    /// Websocket port; `None` runs headless.
    pub port: Option<u16>,
    pub host: String,
    pub simulator: SimulatorSettings,
    pub controller: ControllerSettings,
}

impl Default for StackSettings {
    fn default() -> Self {
        Self {
            port: Some(8080),
            host: "127.0.0.1".into(),
            simulator: SimulatorSettings::default(),
            controller: ControllerSettings::default(),
        }
    }
}

/// All three nodes of a running stack.
pub struct Stack {
    pub bus: Arc<Bus>,
    pub simulator: NodeHandle,
    pub controller: NodeHandle,
    pub bridge: Option<BridgeHandle>,
}

impl Stack {
    pub fn spawn(config: StackConfig, settings: StackSettings) -> Result<Self> {
        let bus = Bus::shared();
        let registry = Arc::new(config.registry);
        // Bind first so a busy port fails before any thread starts.
        let bridge = match settings.port {
            Some(port) => Some(spawn_bridge(bus.clone(), (settings.host.as_str(), port))?),
            None => None,
        };
        let simulator = spawn_simulator(bus.clone(), registry.clone(), &config.task, settings.simulator)?;
        let controller = spawn_controller(bus.clone(), registry, &config.task, &config.optimizer, settings.controller)?;
        Ok(Self { bus, simulator, controller, bridge })
    }

    /// Stops every node; safe to call more than once.
    pub fn shutdown(&mut self) {
        self.simulator.stop();
        self.controller.stop();
        if let Some(b) = &mut self.bridge {
            b.stop();
        }
    }
}

impl Drop for Stack {
    fn drop(&mut self) {
        self.shutdown();
    }
}
