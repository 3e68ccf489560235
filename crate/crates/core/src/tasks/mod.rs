//! Tasks: dynamics, reward and reset for the systems being controlled.
//!
//! A [`Task`] is written against its own config type; [`Configured`] pairs a
//! task with a config value and erases both behind [`AnyTask`], which is what
//! the controller, rollout workers and nodes hold.

mod cartpole;
mod cylinder_push;
mod double_integrator;

pub use cartpole::{Cartpole, CartpoleConfig, CartpoleParams};
pub use cylinder_push::{CylinderPush, CylinderPushConfig, CylinderPushParams};
pub use double_integrator::{DoubleIntegrator, DoubleIntegratorConfig};

use ndarray::{Array1, ArrayView3};
use rand::RngCore;
use serde::de::DeserializeOwned;

use crate::config::{DynConfig, Reflect};
use crate::error::{Error, Result};

/// Simulation time plus generalized positions and velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskState {
    pub t: f64,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
}

impl TaskState {
    pub fn new(t: f64, q: Vec<f64>, v: Vec<f64>) -> Self {
        Self { t, q, v }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.q.iter().chain(&self.v).all(|x| x.is_finite())
    }

    /// `[q..., v...]`, the row layout used in rollout state tensors.
    pub fn flat(&self) -> Vec<f64> {
        self.q.iter().chain(&self.v).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskInfo {
    pub name: &'static str,
    pub nq: usize,
    pub nv: usize,
    pub nu: usize,
    pub control_bounds: Vec<(f64, f64)>,
    /// Labels of the points returned by [`Task::trace_points`].
    pub trace_labels: Vec<&'static str>,
}

impl TaskInfo {
    pub fn nx(&self) -> usize {
        self.nq + self.nv
    }

    pub fn clamp_control(&self, u: &mut [f64]) {
        for (x, &(lo, hi)) in u.iter_mut().zip(&self.control_bounds) {
            *x = x.clamp(lo, hi);
        }
    }
}

pub trait Task: Send + Sync + 'static {
    type Config: DynConfig + Reflect + DeserializeOwned + Clone + 'static;

    fn info(&self) -> &TaskInfo;

    /// One semi-implicit Euler step in place. `u` is already within bounds.
    fn integrate(&self, q: &mut [f64], v: &mut [f64], u: &[f64], dt: f64);

    /// Batched reward. `states` is `[N, T+1, nq+nv]`, `controls` is
    /// `[N, T, nu]`; shapes are checked by the caller.
    fn reward(&self, states: ArrayView3<'_, f64>, controls: ArrayView3<'_, f64>, config: &Self::Config)
        -> Array1<f64>;

    fn reset(&self, rng: &mut dyn RngCore) -> TaskState;

    /// Points traced in the visualizer, one per entry of `trace_labels`.
    fn trace_points(&self, q: &[f64]) -> Vec<[f64; 3]>;
}

/// Object-safe task with its config attached.
pub trait AnyTask: Send + Sync {
    fn info(&self) -> &TaskInfo;

    /// Clamps `u` into `u_buf`, then steps `q`/`v` in place.
    fn step_in_place(&self, q: &mut [f64], v: &mut [f64], u: &[f64], u_buf: &mut [f64], dt: f64) -> Result<()>;

    fn reward(&self, states: ArrayView3<'_, f64>, controls: ArrayView3<'_, f64>) -> Result<Array1<f64>>;

    fn reset(&self, rng: &mut dyn RngCore) -> TaskState;

    fn trace_points(&self, q: &[f64]) -> Vec<[f64; 3]>;

    fn config(&self) -> &dyn DynConfig;

    fn config_mut(&mut self) -> &mut dyn DynConfig;

    fn step(&self, state: &TaskState, u: &[f64], dt: f64) -> Result<TaskState> {
        let info = self.info();
        if state.q.len() != info.nq || state.v.len() != info.nv || u.len() != info.nu {
            return Err(Error::Shape(format!(
                "{} expects nq={}, nv={}, nu={}",
                info.name, info.nq, info.nv, info.nu
            )));
        }
        let mut next = state.clone();
        let mut u_buf = vec![0.0; info.nu];
        self.step_in_place(&mut next.q, &mut next.v, u, &mut u_buf, dt)?;
        next.t = state.t + dt;
        Ok(next)
    }
}

pub struct Configured<T: Task> {
    pub task: T,
    pub config: T::Config,
}

impl<T: Task> Configured<T> {
    pub fn new(task: T, config: T::Config) -> Self {
        Self { task, config }
    }
}

impl<T: Task> AnyTask for Configured<T> {
    fn info(&self) -> &TaskInfo {
        self.task.info()
    }

    fn step_in_place(&self, q: &mut [f64], v: &mut [f64], u: &[f64], u_buf: &mut [f64], dt: f64) -> Result<()> {
        let info = self.task.info();
        if !(dt > 0.0) {
            return Err(Error::NonPositiveStep(dt));
        }
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        if !finite(u) || !finite(q) || !finite(v) {
            return Err(Error::NonFinite(info.name.to_string()));
        }
        u_buf.copy_from_slice(u);
        info.clamp_control(u_buf);
        self.task.integrate(q, v, u_buf, dt);
        if !finite(q) || !finite(v) {
            return Err(Error::NonFinite(info.name.to_string()));
        }
        Ok(())
    }

    fn reward(&self, states: ArrayView3<'_, f64>, controls: ArrayView3<'_, f64>) -> Result<Array1<f64>> {
        let info = self.task.info();
        let (n, t1, nx) = states.dim();
        let (nc, t, nu) = controls.dim();
        if nx != info.nx() || nu != info.nu || nc != n || t1 != t + 1 {
            return Err(Error::Shape(format!(
                "{}: states {:?} and controls {:?} do not match nx={}, nu={}",
                info.name,
                states.dim(),
                controls.dim(),
                info.nx(),
                info.nu
            )));
        }
        Ok(self.task.reward(states, controls, &self.config))
    }

    fn reset(&self, rng: &mut dyn RngCore) -> TaskState {
        self.task.reset(rng)
    }

    fn trace_points(&self, q: &[f64]) -> Vec<[f64; 3]> {
        self.task.trace_points(q)
    }

    fn config(&self) -> &dyn DynConfig {
        &self.config
    }

    fn config_mut(&mut self) -> &mut dyn DynConfig {
        &mut self.config
    }
}

/// Elementwise `sqrt(x² + δ²) − δ`.
pub fn smooth_l1_norm(x: &[f64], delta: f64) -> Result<Vec<f64>> {
    if !(delta > 0.0) {
        return Err(Error::NonPositiveDelta(delta));
    }
    Ok(x.iter().map(|&v| smooth_l1(v, delta)).collect())
}

/// Elementwise `0.5·x²`.
pub fn quadratic_norm(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| quadratic(v)).collect()
}

#[inline]
pub(crate) fn smooth_l1(x: f64, delta: f64) -> f64 {
    (x * x + delta * delta).sqrt() - delta
}

#[inline]
pub(crate) fn quadratic(x: f64) -> f64 {
    0.5 * x * x
}

/// `Σ quadratic(·)` over every entry of a rollout's controls.
pub(crate) fn control_effort(controls: ndarray::ArrayView2<'_, f64>) -> f64 {
    controls.iter().map(|&u| quadratic(u)).sum()
}

pub(crate) fn standard_normals<const N: usize>(rng: &mut dyn RngCore) -> [f64; N] {
    use rand_distr::{Distribution, StandardNormal};
    std::array::from_fn(|_| StandardNormal.sample(rng))
}
