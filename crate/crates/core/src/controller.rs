//! The receding-horizon loop: shift the nominal plan to the current state,
//! sample candidate knots, roll them out, fold the results back into the
//! nominal and publish it for asynchronous action queries.

use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ensure, FieldSpec, Reflect};
use crate::error::{Error, Result};
use crate::optimizers::Optimizer;
use crate::rollout::{RolloutBatch, RolloutPool, RolloutSettings};
use crate::spline::{uniform_knot_times, ControlPlan, InterpolationKind};
use crate::tasks::{AnyTask, TaskState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    /// Planning horizon in seconds.
    pub horizon: f64,
    pub spline: InterpolationKind,
    /// Number of best non-nominal rollouts published as traces.
    pub max_num_traces: usize,
    pub dt_rollout: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self { horizon: 0.75, spline: InterpolationKind::ZeroOrderHold, max_num_traces: 3, dt_rollout: 0.02 }
    }
}

impl ControllerConfig {
    pub fn rollout_settings(&self) -> RolloutSettings {
        RolloutSettings { horizon: self.horizon, dt: self.dt_rollout, kind: self.spline }
    }
}

impl Reflect for ControllerConfig {
    fn fields(&self) -> Vec<FieldSpec> {
        let kinds: Vec<&str> = InterpolationKind::ALL.iter().map(|k| k.as_str()).collect();
        vec![
            FieldSpec::float("horizon", self.horizon),
            FieldSpec::choice("spline", self.spline.as_str(), &kinds),
            FieldSpec::int("max_num_traces", self.max_num_traces),
            FieldSpec::float("dt_rollout", self.dt_rollout),
        ]
    }

    fn validate(&self) -> Result<()> {
        ensure(self.horizon > 0.0, || format!("horizon must be positive, got {}", self.horizon))?;
        ensure(self.dt_rollout > 0.0, || format!("dt_rollout must be positive, got {}", self.dt_rollout))?;
        ensure(self.horizon >= 0.5 * self.dt_rollout, || "horizon must cover at least one rollout step".into())
    }
}

/// Shared read handle on the installed nominal plan.
///
/// Installation swaps an `Arc`, so readers always see one whole plan.
#[derive(Clone)]
pub struct PlanHandle {
    plan: Arc<RwLock<Arc<ControlPlan>>>,
    bounds: Arc<RwLock<Vec<(f64, f64)>>>,
}

impl PlanHandle {
    fn new(plan: ControlPlan, bounds: Vec<(f64, f64)>) -> Self {
        Self { plan: Arc::new(RwLock::new(Arc::new(plan))), bounds: Arc::new(RwLock::new(bounds)) }
    }

    pub fn load(&self) -> Arc<ControlPlan> {
        self.plan.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn install(&self, plan: ControlPlan) {
        *self.plan.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(plan);
    }

    /// Nominal control at time `t`, clamped to the control bounds.
    pub fn action(&self, t: f64) -> Vec<f64> {
        let plan = self.load();
        let mut u = vec![0.0; plan.nu()];
        plan.interpolate_into(t, &mut u);
        let bounds = self.bounds.read().unwrap_or_else(|e| e.into_inner());
        for (x, &(lo, hi)) in u.iter_mut().zip(bounds.iter()) {
            *x = x.clamp(lo, hi);
        }
        u
    }
}

pub struct Controller {
    task: Box<dyn AnyTask>,
    optimizer: Box<dyn Optimizer>,
    config: ControllerConfig,
    pool: RolloutPool,
    rng: ChaCha8Rng,
    plan: PlanHandle,
    iteration: u64,
    last_update: Duration,
}

impl Controller {
    pub fn new(
        task: Box<dyn AnyTask>,
        optimizer: Box<dyn Optimizer>,
        config: ControllerConfig,
        workers: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let plan = Self::zero_plan(&*task, &*optimizer, &config, 0.0)?;
        let bounds = task.info().control_bounds.clone();
        Ok(Self {
            task,
            optimizer,
            config,
            pool: RolloutPool::new(workers)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
            plan: PlanHandle::new(plan, bounds),
            iteration: 0,
            last_update: Duration::ZERO,
        })
    }

    fn zero_plan(
        task: &dyn AnyTask,
        optimizer: &dyn Optimizer,
        config: &ControllerConfig,
        t_start: f64,
    ) -> Result<ControlPlan> {
        ControlPlan::zeros(optimizer.num_nodes(), task.info().nu, t_start, config.horizon, config.spline)
    }

    pub fn task(&self) -> &dyn AnyTask {
        &*self.task
    }

    pub fn task_mut(&mut self) -> &mut dyn AnyTask {
        &mut *self.task
    }

    pub fn optimizer(&self) -> &dyn Optimizer {
        &*self.optimizer
    }

    pub fn optimizer_mut(&mut self) -> &mut dyn Optimizer {
        &mut *self.optimizer
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn set_config(&mut self, config: ControllerConfig) -> Result<()> {
        config.validate()?;
        self.config = config;
        Ok(())
    }

    pub fn pool(&self) -> &RolloutPool {
        &self.pool
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn last_update(&self) -> Duration {
        self.last_update
    }

    pub fn plan(&self) -> Arc<ControlPlan> {
        self.plan.load()
    }

    pub fn plan_handle(&self) -> PlanHandle {
        self.plan.clone()
    }

    pub fn action(&self, t: f64) -> Vec<f64> {
        self.plan.action(t)
    }

    /// Swaps in a new task and optimizer and restarts from a zero plan.
    pub fn replace(&mut self, task: Box<dyn AnyTask>, optimizer: Box<dyn Optimizer>, config: ControllerConfig) -> Result<()> {
        config.validate()?;
        let plan = Self::zero_plan(&*task, &*optimizer, &config, self.plan.load().t_start())?;
        *self.plan.bounds.write().unwrap_or_else(|e| e.into_inner()) = task.info().control_bounds.clone();
        self.task = task;
        self.optimizer = optimizer;
        self.config = config;
        self.plan.install(plan);
        Ok(())
    }

    /// Swaps the optimizer, keeping the nominal plan. The next update
    /// resamples it onto the new optimizer's knot grid.
    pub fn set_optimizer(&mut self, optimizer: Box<dyn Optimizer>) {
        self.optimizer = optimizer;
    }

    /// Resets the nominal to zeros and clears optimizer state.
    pub fn reset(&mut self) -> Result<()> {
        self.optimizer.reset();
        let plan = Self::zero_plan(&*self.task, &*self.optimizer, &self.config, self.plan.load().t_start())?;
        self.plan.install(plan);
        Ok(())
    }

    /// Installs `knots` on a uniform grid starting at `t_start`.
    pub fn set_nominal(&mut self, knots: ndarray::Array2<f64>, t_start: f64) -> Result<()> {
        let plan = ControlPlan::uniform(knots, t_start, self.config.horizon, self.config.spline)?;
        if plan.nu() != self.task.info().nu {
            return Err(Error::Shape("nominal knots do not match the task's actuators".into()));
        }
        self.plan.install(plan);
        Ok(())
    }

    /// The current nominal resampled onto the grid an update from `x0` uses.
    pub fn shifted_nominal(&self, x0: &TaskState) -> Result<ControlPlan> {
        let current = self.plan.load();
        let times = uniform_knot_times(self.optimizer.num_nodes(), x0.t, self.config.horizon)?;
        current.resample(times, self.config.spline)
    }

    /// Reward of the shifted nominal plan rolled out from `x0`.
    pub fn evaluate_nominal(&self, x0: &TaskState) -> Result<f64> {
        let nominal = self.shifted_nominal(x0)?;
        let knots = nominal.knots().to_owned();
        crate::rollout::evaluate_plan(&self.pool, &*self.task, x0, &knots, &self.config.rollout_settings())
    }

    /// One planning iteration from state `x0`.
    pub fn update(&mut self, x0: &TaskState) -> Result<RolloutBatch> {
        if !x0.is_finite() {
            return Err(Error::NonFinite(self.task.info().name.to_string()));
        }
        let start = Instant::now();
        let nominal = self.shifted_nominal(x0)?;
        let bounds = self.task.info().control_bounds.clone();
        let samples = self.optimizer.sample_control_knots(nominal.knots(), &bounds, &mut self.rng);
        let batch =
            self.pool.evaluate_batch(&*self.task, x0, samples.view(), &self.config.rollout_settings())?;
        let knots = self.optimizer.update_nominal_knots(batch.knots.view(), &batch.rewards)?;
        self.plan.install(nominal.with_knots(knots)?);
        self.last_update = start.elapsed();
        self.iteration += 1;
        Ok(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizers::{PredictiveSampling, PredictiveSamplingConfig};
    use crate::tasks::{Cartpole, CartpoleConfig, Configured};
    use ndarray::array;

    fn controller(sigma: f64) -> Controller {
        Controller::new(
            Box::new(Configured::new(Cartpole::default(), CartpoleConfig::default())),
            Box::new(PredictiveSampling::new(PredictiveSamplingConfig { sigma, ..Default::default() })),
            ControllerConfig::default(),
            2,
            5,
        )
        .unwrap()
    }

    fn upright() -> TaskState {
        TaskState::new(0.0, vec![0.0, 0.0], vec![0.0, 0.0])
    }

    #[test]
    fn zero_noise_keeps_nominal() {
        let mut c = controller(0.0);
        c.set_nominal(array![[0.1], [0.2], [0.3], [0.4]], 0.0).unwrap();
        c.update(&upright()).unwrap();
        assert_eq!(c.plan().knots(), array![[0.1], [0.2], [0.3], [0.4]]);
        assert_eq!(c.iteration(), 1);
    }

    #[test]
    fn action_queries() {
        let mut c = controller(0.05);
        assert_eq!(c.action(0.3), vec![0.0]);
        assert_eq!(c.action(100.0), vec![0.0]);
        c.set_nominal(array![[1.0], [1.0], [1.0], [1.0]], 0.0).unwrap();
        assert_eq!(c.action(0.0), vec![1.0]);
        assert_eq!(c.action(0.6), vec![1.0]);
        assert_eq!(c.action(9.0), vec![1.0]);
        c.set_nominal(array![[3.0], [3.0], [3.0], [3.0]], 0.0).unwrap();
        assert_eq!(c.action(0.1), vec![1.0]);
    }

    #[test]
    fn update_does_not_lose_reward_at_fixed_state() {
        let mut c = controller(0.05);
        let x0 = upright();
        let before = c.evaluate_nominal(&x0).unwrap();
        c.update(&x0).unwrap();
        assert!(c.evaluate_nominal(&x0).unwrap() >= before);
    }

    #[test]
    fn deterministic_given_seed() {
        let x0 = TaskState::new(0.0, vec![0.2, 2.5], vec![0.1, 0.0]);
        let (mut a, mut b) = (controller(0.05), controller(0.05));
        for _ in 0..3 {
            a.update(&x0).unwrap();
            b.update(&x0).unwrap();
        }
        assert_eq!(*a.plan(), *b.plan());
    }

    #[test]
    fn rejects_non_finite_state() {
        let mut c = controller(0.05);
        assert!(c.update(&TaskState::new(0.0, vec![f64::NAN, 0.0], vec![0.0, 0.0])).is_err());
    }
}
