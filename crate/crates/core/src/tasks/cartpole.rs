use std::f64::consts::PI;

use ndarray::{Array1, ArrayView3, Axis};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{control_effort, quadratic, smooth_l1, standard_normals, Task, TaskInfo, TaskState};
use crate::config::{ensure, FieldSpec, Reflect};
use crate::error::Result;

/// Reward weights for the cart-pole swing-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CartpoleConfig {
    pub w_vert: f64,
    pub w_ctr: f64,
    pub w_vel: f64,
    pub w_ctrl: f64,
}

impl Default for CartpoleConfig {
    fn default() -> Self {
        Self { w_vert: 10.0, w_ctr: 10.0, w_vel: 0.1, w_ctrl: 0.1 }
    }
}

impl Reflect for CartpoleConfig {
    fn fields(&self) -> Vec<FieldSpec> {
        vec![
            FieldSpec::float("w_vert", self.w_vert),
            FieldSpec::float("w_ctr", self.w_ctr),
            FieldSpec::float("w_vel", self.w_vel),
            FieldSpec::float("w_ctrl", self.w_ctrl),
        ]
    }

    fn validate(&self) -> Result<()> {
        ensure(
            [self.w_vert, self.w_ctr, self.w_vel, self.w_ctrl].iter().all(|w| *w >= 0.0),
            || "cartpole weights must be non-negative".into(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CartpoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Distance from the hinge to the pole's center of mass.
    pub half_length: f64,
    pub gravity: f64,
    /// Newtons of cart force per unit of control.
    pub gear: f64,
}

impl Default for CartpoleParams {
    fn default() -> Self {
        Self { cart_mass: 1.0, pole_mass: 0.1, half_length: 0.5, gravity: 9.81, gear: 10.0 }
    }
}

/// Cart on a rail with a free pole; `q = [x, θ]` with `θ = 0` upright.
pub struct Cartpole {
    params: CartpoleParams,
    info: TaskInfo,
}

impl Default for Cartpole {
    fn default() -> Self {
        Self::new(CartpoleParams::default())
    }
}

impl Cartpole {
    pub fn new(params: CartpoleParams) -> Self {
        let info = TaskInfo {
            name: "cartpole",
            nq: 2,
            nv: 2,
            nu: 1,
            control_bounds: vec![(-1.0, 1.0)],
            trace_labels: vec!["pole_tip_trace"],
        };
        Self { params, info }
    }

    pub fn params(&self) -> &CartpoleParams {
        &self.params
    }

    /// Cart and pole accelerations `(ẍ, θ̈)`.
    pub fn accelerations(&self, theta: f64, theta_dot: f64, u: f64) -> (f64, f64) {
        let p = &self.params;
        let total = p.cart_mass + p.pole_mass;
        let (sin, cos) = theta.sin_cos();
        let force = p.gear * u;
        let temp = (force + p.pole_mass * p.half_length * theta_dot * theta_dot * sin) / total;
        let theta_acc = (p.gravity * sin - cos * temp)
            / (p.half_length * (4.0 / 3.0 - p.pole_mass * cos * cos / total));
        let x_acc = temp - p.pole_mass * p.half_length * theta_acc * cos / total;
        (x_acc, theta_acc)
    }

    /// Mechanical energy with the pole modelled as a uniform rod.
    pub fn energy(&self, q: &[f64], v: &[f64]) -> f64 {
        let p = &self.params;
        let (x_dot, theta_dot) = (v[0], v[1]);
        let cos = q[1].cos();
        let l = p.half_length;
        let kinetic = 0.5 * (p.cart_mass + p.pole_mass) * x_dot * x_dot
            + p.pole_mass * l * x_dot * theta_dot * cos
            + 0.5 * (4.0 / 3.0) * p.pole_mass * l * l * theta_dot * theta_dot;
        kinetic + p.pole_mass * p.gravity * l * cos
    }

    /// Reset state for the given standard-normal draws `[n_x, n_θ, n_ẋ, n_θ̇]`.
    pub fn reset_with_noise(noise: [f64; 4]) -> TaskState {
        TaskState::new(0.0, vec![1.0 + noise[0], PI + noise[1]], vec![0.1 * noise[2], 0.1 * noise[3]])
    }
}

impl Task for Cartpole {
    type Config = CartpoleConfig;

    fn info(&self) -> &TaskInfo {
        &self.info
    }

    fn integrate(&self, q: &mut [f64], v: &mut [f64], u: &[f64], dt: f64) {
        let (x_acc, theta_acc) = self.accelerations(q[1], v[1], u[0]);
        v[0] += dt * x_acc;
        v[1] += dt * theta_acc;
        q[0] += dt * v[0];
        q[1] += dt * v[1];
    }

    fn reward(&self, states: ArrayView3<'_, f64>, controls: ArrayView3<'_, f64>, config: &CartpoleConfig) -> Array1<f64> {
        states
            .outer_iter()
            .zip(controls.outer_iter())
            .map(|(traj, ctrl)| {
                let (mut vertical, mut centered, mut velocity) = (0.0, 0.0, 0.0);
                for s in traj.axis_iter(Axis(0)) {
                    vertical += smooth_l1(s[1].cos() - 1.0, 0.01);
                    centered += smooth_l1(s[0], 0.1);
                    velocity += quadratic(s[2]) + quadratic(s[3]);
                }
                -config.w_vert * vertical - config.w_ctr * centered - config.w_vel * velocity
                    - config.w_ctrl * control_effort(ctrl)
            })
            .collect()
    }

    fn reset(&self, rng: &mut dyn RngCore) -> TaskState {
        Self::reset_with_noise(standard_normals::<4>(rng))
    }

    fn trace_points(&self, q: &[f64]) -> Vec<[f64; 3]> {
        let l = 2.0 * self.params.half_length;
        vec![[q[0] + l * q[1].sin(), 0.0, l * q[1].cos()]]
    }
}
