use ndarray::{Array1, ArrayView3, Axis};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{control_effort, quadratic, standard_normals, Task, TaskInfo, TaskState};
use crate::config::{ensure, FieldSpec, Reflect, Slider};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoubleIntegratorConfig {
    pub w_pos: f64,
    pub w_vel: f64,
    pub w_ctrl: f64,
    pub target: f64,
}

impl Default for DoubleIntegratorConfig {
    fn default() -> Self {
        Self { w_pos: 1.0, w_vel: 0.1, w_ctrl: 0.1, target: 0.0 }
    }
}

impl Reflect for DoubleIntegratorConfig {
    fn fields(&self) -> Vec<FieldSpec> {
        vec![
            FieldSpec::float("w_pos", self.w_pos),
            FieldSpec::float("w_vel", self.w_vel),
            FieldSpec::float("w_ctrl", self.w_ctrl),
            FieldSpec::float("target", self.target),
        ]
    }

    fn sliders(&self) -> Vec<Slider> {
        vec![Slider::new("target", -2.0, 2.0, 0.01)]
    }

    fn validate(&self) -> Result<()> {
        ensure(
            [self.w_pos, self.w_vel, self.w_ctrl].iter().all(|w| *w >= 0.0) && self.target.is_finite(),
            || "double_integrator weights must be non-negative".into(),
        )
    }
}

/// A unit point mass on a line: `q̈ = u`.
pub struct DoubleIntegrator {
    info: TaskInfo,
}

impl Default for DoubleIntegrator {
    fn default() -> Self {
        Self {
            info: TaskInfo {
                name: "double_integrator",
                nq: 1,
                nv: 1,
                nu: 1,
                control_bounds: vec![(-1.0, 1.0)],
                trace_labels: vec!["mass_trace"],
            },
        }
    }
}

impl Task for DoubleIntegrator {
    type Config = DoubleIntegratorConfig;

    fn info(&self) -> &TaskInfo {
        &self.info
    }

    fn integrate(&self, q: &mut [f64], v: &mut [f64], u: &[f64], dt: f64) {
        v[0] += dt * u[0];
        q[0] += dt * v[0];
    }

    fn reward(
        &self,
        states: ArrayView3<'_, f64>,
        controls: ArrayView3<'_, f64>,
        config: &DoubleIntegratorConfig,
    ) -> Array1<f64> {
        states
            .outer_iter()
            .zip(controls.outer_iter())
            .map(|(traj, ctrl)| {
                let (mut pos, mut vel) = (0.0, 0.0);
                for s in traj.axis_iter(Axis(0)) {
                    pos += quadratic(s[0] - config.target);
                    vel += quadratic(s[1]);
                }
                -config.w_pos * pos - config.w_vel * vel - config.w_ctrl * control_effort(ctrl)
            })
            .collect()
    }

    fn reset(&self, rng: &mut dyn RngCore) -> TaskState {
        let [n] = standard_normals::<1>(rng);
        TaskState::new(0.0, vec![n], vec![0.0])
    }

    fn trace_points(&self, q: &[f64]) -> Vec<[f64; 3]> {
        vec![[q[0], 0.0, 0.0]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{AnyTask, Configured};

    #[test]
    fn ballistic_step() {
        let t = Configured::new(DoubleIntegrator::default(), DoubleIntegratorConfig::default());
        let s = t.step(&TaskState::new(0.0, vec![0.0], vec![1.0]), &[0.0], 0.1).unwrap();
        assert!((s.q[0] - 0.1).abs() < 1e-15);
        assert_eq!(s.v, vec![1.0]);
    }

    #[test]
    fn step_is_deterministic_and_clamped() {
        let t = Configured::new(DoubleIntegrator::default(), DoubleIntegratorConfig::default());
        let s = TaskState::new(0.3, vec![0.2], vec![-0.4]);
        assert_eq!(t.step(&s, &[0.7], 0.02).unwrap(), t.step(&s, &[0.7], 0.02).unwrap());
        assert_eq!(t.step(&s, &[9.0], 0.02).unwrap(), t.step(&s, &[1.0], 0.02).unwrap());
    }
}
