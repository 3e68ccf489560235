//! Parallel rollout evaluation.
//!
//! Every sampled knot array is turned into a control plan over the horizon
//! starting at the shared initial state, the task is stepped forward under
//! that plan and the resulting trajectory is scored. Rollouts are split into
//! one contiguous chunk per worker, so results never depend on the worker
//! count.

use ndarray::{s, Array2, Array3, ArrayView3, ArrayViewMut2, Axis};
use rayon::{ThreadPool, ThreadPoolBuilder};

use crate::error::{Error, Result};
use crate::optimizers::KnotBatch;
use crate::spline::{interpolate_into, uniform_knot_times, ControlPlan, InterpolationKind};
use crate::tasks::{AnyTask, TaskState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutSettings {
    pub horizon: f64,
    pub dt: f64,
    pub kind: InterpolationKind,
}

impl RolloutSettings {
    /// Number of integration steps, `round(horizon / dt)`.
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0) {
            return Err(Error::NonPositiveStep(self.dt));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::NonPositiveHorizon(self.horizon));
        }
        let t = (self.horizon / self.dt).round();
        if t < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "horizon {} is shorter than one rollout step of {}",
                self.horizon, self.dt
            )));
        }
        Ok(t as usize)
    }
}

#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub x0: TaskState,
    /// `[N, num_nodes, nu]`
    pub knots: KnotBatch,
    pub knot_times: Vec<f64>,
    pub kind: InterpolationKind,
    /// `[N, T+1, nq+nv]`; rows after a failure are NaN.
    pub states: Array3<f64>,
    /// Controls actually applied, `[N, T, nu]`.
    pub controls: Array3<f64>,
    /// `−∞` marks a failed rollout.
    pub rewards: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn failed(&self, i: usize) -> bool {
        self.rewards[i] == f64::NEG_INFINITY
    }

    pub fn plan(&self, i: usize) -> ControlPlan {
        ControlPlan::new(self.knots.index_axis(Axis(0), i).to_owned(), self.knot_times.clone(), self.kind)
            .expect("batch knot grid was validated on construction")
    }

    /// One polyline per trace point of `task`, following rollout `i`.
    pub fn trace(&self, task: &dyn AnyTask, i: usize) -> Vec<Vec<[f64; 3]>> {
        let nq = task.info().nq;
        let mut paths = vec![Vec::new(); task.info().trace_labels.len()];
        for state in self.states.index_axis(Axis(0), i).outer_iter() {
            let q = state.slice(s![..nq]);
            if q.iter().any(|x| !x.is_finite()) {
                break;
            }
            for (path, p) in paths.iter_mut().zip(task.trace_points(q.as_slice().unwrap())) {
                path.push(p);
            }
        }
        paths
    }
}

/// A fixed-size worker pool reused across updates.
pub struct RolloutPool {
    pool: ThreadPool,
    workers: usize,
}

impl RolloutPool {
    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::InvalidConfig("worker count must be at least 1".into()));
        }
        let pool = ThreadPoolBuilder::new()
            .num_threads(workers)
            .thread_name(|i| format!("rollout-{i}"))
            .build()
            .map_err(|e| Error::ThreadPool(e.to_string()))?;
        Ok(Self { pool, workers })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn evaluate_batch(
        &self,
        task: &dyn AnyTask,
        x0: &TaskState,
        knots: ArrayView3<'_, f64>,
        settings: &RolloutSettings,
    ) -> Result<RolloutBatch> {
        let info = task.info();
        let (n, num_nodes, nu) = knots.dim();
        if nu != info.nu {
            return Err(Error::Shape(format!("knots have {nu} actuators, task {} has {}", info.name, info.nu)));
        }
        if x0.q.len() != info.nq || x0.v.len() != info.nv {
            return Err(Error::Shape(format!("initial state does not match task {}", info.name)));
        }
        if n == 0 {
            return Err(Error::Shape("empty knot batch".into()));
        }
        let steps = settings.steps()?;
        let knot_times = uniform_knot_times(num_nodes, x0.t, settings.horizon)?;

        let mut states = Array3::<f64>::zeros((n, steps + 1, info.nx()));
        let mut controls = Array3::<f64>::zeros((n, steps, nu));
        let mut rewards = vec![0.0; n];

        let chunk = n.div_ceil(self.workers);
        let job = RolloutJob { task, x0, knot_times: &knot_times, kind: settings.kind, dt: settings.dt };
        self.pool.scope(|scope| {
            let parts = states
                .axis_chunks_iter_mut(Axis(0), chunk)
                .zip(controls.axis_chunks_iter_mut(Axis(0), chunk))
                .zip(rewards.chunks_mut(chunk))
                .zip(knots.axis_chunks_iter(Axis(0), chunk));
            for (((mut st, mut ct), rw), kn) in parts {
                let job = &job;
                scope.spawn(move |_| {
                    for (i, r) in rw.iter_mut().enumerate() {
                        *r = job.run(
                            kn.index_axis(Axis(0), i),
                            st.index_axis_mut(Axis(0), i),
                            ct.index_axis_mut(Axis(0), i),
                        );
                    }
                });
            }
        });

        if rewards.iter().all(|r| *r == f64::NEG_INFINITY) {
            return Err(Error::AllRolloutsFailed(n));
        }
        Ok(RolloutBatch {
            x0: x0.clone(),
            knots: knots.to_owned(),
            knot_times,
            kind: settings.kind,
            states,
            controls,
            rewards,
        })
    }
}

struct RolloutJob<'a> {
    task: &'a dyn AnyTask,
    x0: &'a TaskState,
    knot_times: &'a [f64],
    kind: InterpolationKind,
    dt: f64,
}

impl RolloutJob<'_> {
    /// Simulates one rollout into the given rows and returns its reward.
    fn run(
        &self,
        knots: ndarray::ArrayView2<'_, f64>,
        mut states: ArrayViewMut2<'_, f64>,
        mut controls: ArrayViewMut2<'_, f64>,
    ) -> f64 {
        let info = self.task.info();
        let (nq, nu) = (info.nq, info.nu);
        let mut q = self.x0.q.clone();
        let mut v = self.x0.v.clone();
        let mut u = vec![0.0; nu];
        let mut u_applied = vec![0.0; nu];
        write_state(states.row_mut(0).as_slice_mut().unwrap(), &q, &v);

        for k in 0..controls.nrows() {
            let t = self.x0.t + k as f64 * self.dt;
            interpolate_into(knots, self.knot_times, self.kind, t, &mut u);
            if self.task.step_in_place(&mut q, &mut v, &u, &mut u_applied, self.dt).is_err() {
                states.slice_mut(s![k + 1.., ..]).fill(f64::NAN);
                controls.slice_mut(s![k.., ..]).fill(f64::NAN);
                return f64::NEG_INFINITY;
            }
            controls.row_mut(k).as_slice_mut().unwrap().copy_from_slice(&u_applied);
            let row = states.row_mut(k + 1);
            write_state(row.into_slice().unwrap(), &q, &v);
        }
        debug_assert_eq!(q.len(), nq);

        let reward = self
            .task
            .reward(states.view().insert_axis(Axis(0)), controls.view().insert_axis(Axis(0)))
            .map(|r| r[0])
            .unwrap_or(f64::NAN);
        if reward.is_nan() {
            f64::NEG_INFINITY
        } else {
            reward
        }
    }
}

fn write_state(row: &mut [f64], q: &[f64], v: &[f64]) {
    row[..q.len()].copy_from_slice(q);
    row[q.len()..].copy_from_slice(v);
}

/// One-shot evaluation on a temporary pool of `workers` threads.
pub fn evaluate_batch(
    task: &dyn AnyTask,
    x0: &TaskState,
    knots: ArrayView3<'_, f64>,
    settings: &RolloutSettings,
    workers: usize,
) -> Result<RolloutBatch> {
    RolloutPool::new(workers)?.evaluate_batch(task, x0, knots, settings)
}

/// Nominal rollout (row 0) first, then up to `k` of the best other
/// successful rollouts in descending reward order.
pub fn top_traces(batch: &RolloutBatch, k: usize) -> Vec<usize> {
    let mut others: Vec<usize> = (1..batch.len()).filter(|&i| !batch.failed(i)).collect();
    others.sort_by(|&a, &b| batch.rewards[b].total_cmp(&batch.rewards[a]).then(a.cmp(&b)));
    others.truncate(k);
    std::iter::once(0).chain(others).collect()
}

/// Convenience: evaluates a single plan and returns its reward.
pub fn evaluate_plan(
    pool: &RolloutPool,
    task: &dyn AnyTask,
    x0: &TaskState,
    knots: &Array2<f64>,
    settings: &RolloutSettings,
) -> Result<f64> {
    let batch = pool.evaluate_batch(task, x0, knots.view().insert_axis(Axis(0)), settings)?;
    Ok(batch.rewards[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{Cartpole, CartpoleConfig, Configured, DoubleIntegrator, DoubleIntegratorConfig};
    use ndarray::Array3;

    fn settings(horizon: f64) -> RolloutSettings {
        RolloutSettings { horizon, dt: 0.1, kind: InterpolationKind::ZeroOrderHold }
    }

    #[test]
    fn ballistic_double_integrator_matches_closed_form() {
        let task = Configured::new(DoubleIntegrator::default(), DoubleIntegratorConfig::default());
        let x0 = TaskState::new(0.0, vec![0.5], vec![1.0]);
        let knots = Array3::zeros((1, 4, 1));
        let b = evaluate_batch(&task, &x0, knots.view(), &settings(1.0), 1).unwrap();
        assert_eq!(b.states.dim(), (1, 11, 2));

        // closed form: q_k = 0.5 + 0.1 k, v_k = 1
        let mut expected = 0.0;
        for k in 0..=10 {
            let q = 0.5 + 0.1 * k as f64;
            assert!((b.states[[0, k, 0]] - q).abs() < 1e-12);
            assert_eq!(b.states[[0, k, 1]], 1.0);
            expected -= 0.5 * q * q + 0.1 * 0.5;
        }
        assert!((b.rewards[0] - expected).abs() < 1e-12, "{} vs {expected}", b.rewards[0]);
    }

    #[test]
    fn duplicated_rows_score_identically_and_start_at_x0() {
        let task = Configured::new(Cartpole::default(), CartpoleConfig::default());
        let x0 = TaskState::new(0.3, vec![0.1, 3.0], vec![0.0, 0.2]);
        let mut knots = Array3::zeros((3, 4, 1));
        knots[[0, 1, 0]] = 0.4;
        knots[[2, 1, 0]] = 0.4;
        let b = evaluate_batch(&task, &x0, knots.view(), &settings(0.8), 2).unwrap();
        assert_eq!(b.rewards[0].to_bits(), b.rewards[2].to_bits());
        for i in 0..3 {
            assert_eq!(b.states.slice(s![i, 0, ..]).to_vec(), x0.flat());
        }
        assert_eq!(b.knot_times[0], 0.3);
    }

    #[test]
    fn failed_rollouts_are_marked() {
        let task = Configured::new(DoubleIntegrator::default(), DoubleIntegratorConfig::default());
        let x0 = TaskState::new(0.0, vec![0.0], vec![0.0]);
        let mut knots = Array3::zeros((2, 2, 1));
        knots[[1, 0, 0]] = f64::NAN;
        let b = evaluate_batch(&task, &x0, knots.view(), &settings(0.5), 1).unwrap();
        assert!(!b.failed(0));
        assert!(b.failed(1));
        assert!(b.states[[1, 1, 0]].is_nan());

        let mut bad = Array3::zeros((1, 2, 1));
        bad[[0, 0, 0]] = f64::INFINITY;
        bad[[0, 1, 0]] = f64::NAN;
        let err = evaluate_batch(&task, &x0, bad.view(), &settings(0.5), 1).unwrap_err();
        assert!(matches!(err, Error::AllRolloutsFailed(1)));
    }

    #[test]
    fn rejects_too_short_horizon() {
        let task = Configured::new(DoubleIntegrator::default(), DoubleIntegratorConfig::default());
        let x0 = TaskState::new(0.0, vec![0.0], vec![0.0]);
        let knots = Array3::zeros((1, 2, 1));
        assert!(evaluate_batch(&task, &x0, knots.view(), &settings(0.01), 1).is_err());
        assert!(RolloutPool::new(0).is_err());
    }

    fn batch_with_rewards(rewards: &[f64]) -> RolloutBatch {
        let n = rewards.len();
        RolloutBatch {
            x0: TaskState::new(0.0, vec![0.0], vec![0.0]),
            knots: Array3::zeros((n, 2, 1)),
            knot_times: vec![0.0, 1.0],
            kind: InterpolationKind::Linear,
            states: Array3::zeros((n, 2, 2)),
            controls: Array3::zeros((n, 1, 1)),
            rewards: rewards.to_vec(),
        }
    }

    #[test]
    fn top_traces_order() {
        let b = batch_with_rewards(&[2.0, 9.0, 1.0, 5.0]);
        assert_eq!(top_traces(&b, 0), vec![0]);
        assert_eq!(top_traces(&b, 2), vec![0, 1, 3]);
        assert_eq!(top_traces(&b, 99), vec![0, 1, 3, 2]);
        let b = batch_with_rewards(&[2.0, f64::NEG_INFINITY, 1.0]);
        assert_eq!(top_traces(&b, 5), vec![0, 2]);
    }
}
