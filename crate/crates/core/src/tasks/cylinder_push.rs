use ndarray::{Array1, ArrayView3, Axis};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{control_effort, quadratic, smooth_l1, Task, TaskInfo, TaskState};
use crate::config::{ensure, ArrayField, FieldSpec, FieldValue, Reflect};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CylinderPushConfig {
    pub w_pusher: f64,
    pub w_goal: f64,
    pub w_vel: f64,
    pub w_ctrl: f64,
    pub goal: [f64; 2],
}

impl Default for CylinderPushConfig {
    fn default() -> Self {
        Self { w_pusher: 0.1, w_goal: 10.0, w_vel: 0.1, w_ctrl: 0.1, goal: [0.5, 0.0] }
    }
}

impl Reflect for CylinderPushConfig {
    fn fields(&self) -> Vec<FieldSpec> {
        vec![
            FieldSpec::float("w_pusher", self.w_pusher),
            FieldSpec::float("w_goal", self.w_goal),
            FieldSpec::float("w_vel", self.w_vel),
            FieldSpec::float("w_ctrl", self.w_ctrl),
            FieldSpec::new(
                "goal",
                FieldValue::Array(ArrayField {
                    values: self.goal.to_vec(),
                    names: vec!["x".into(), "y".into()],
                    mins: vec![-1.0, -1.0],
                    maxs: vec![1.0, 1.0],
                    steps: vec![0.01, 0.01],
                }),
            ),
        ]
    }

    fn validate(&self) -> Result<()> {
        ensure(
            [self.w_pusher, self.w_goal, self.w_vel, self.w_ctrl].iter().all(|w| *w >= 0.0),
            || "cylinder_push weights must be non-negative".into(),
        )?;
        ensure(self.goal.iter().all(|g| g.is_finite()), || "goal must be finite".into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CylinderPushParams {
    pub pusher_radius: f64,
    pub target_radius: f64,
    pub pusher_mass: f64,
    pub target_mass: f64,
    /// Half-width of the square the target is reset into.
    pub spawn_half_width: f64,
}

impl Default for CylinderPushParams {
    fn default() -> Self {
        Self {
            pusher_radius: 0.15,
            target_radius: 0.2,
            pusher_mass: 1.0,
            target_mass: 1.0,
            spawn_half_width: 0.5,
        }
    }
}

/// Two planar disks: an actuated pusher and a free target.
///
/// `q = [pusher_x, pusher_y, target_x, target_y]`, `u` is the force on the
/// pusher.
pub struct CylinderPush {
    params: CylinderPushParams,
    info: TaskInfo,
}

impl Default for CylinderPush {
    fn default() -> Self {
        Self::new(CylinderPushParams::default())
    }
}

impl CylinderPush {
    pub fn new(params: CylinderPushParams) -> Self {
        assert!(params.pusher_radius > 0.0 && params.target_radius > 0.0);
        let info = TaskInfo {
            name: "cylinder_push",
            nq: 4,
            nv: 4,
            nu: 2,
            control_bounds: vec![(-2.0, 2.0), (-2.0, 2.0)],
            trace_labels: vec!["pusher_trace", "target_trace"],
        };
        Self { params, info }
    }

    pub fn params(&self) -> &CylinderPushParams {
        &self.params
    }

    pub fn contact_distance(&self) -> f64 {
        self.params.pusher_radius + self.params.target_radius
    }

    /// Inelastic impulse along the contact normal, then overlap removal
    /// split by mass ratio.
    fn resolve_contact(&self, q: &mut [f64], v: &mut [f64]) {
        let p = &self.params;
        let (dx, dy) = (q[2] - q[0], q[3] - q[1]);
        let dist = dx.hypot(dy);
        let reach = self.contact_distance();
        if dist >= reach {
            return;
        }
        let (nx, ny) = if dist > 0.0 { (dx / dist, dy / dist) } else { (1.0, 0.0) };
        let (inv_p, inv_t) = (1.0 / p.pusher_mass, 1.0 / p.target_mass);

        let closing = (v[2] - v[0]) * nx + (v[3] - v[1]) * ny;
        if closing < 0.0 {
            let j = -closing / (inv_p + inv_t);
            v[0] -= j * inv_p * nx;
            v[1] -= j * inv_p * ny;
            v[2] += j * inv_t * nx;
            v[3] += j * inv_t * ny;
        }

        let overlap = reach - dist;
        let share_p = inv_p / (inv_p + inv_t);
        let share_t = 1.0 - share_p;
        q[0] -= overlap * share_p * nx;
        q[1] -= overlap * share_p * ny;
        q[2] += overlap * share_t * nx;
        q[3] += overlap * share_t * ny;
    }
}

impl Task for CylinderPush {
    type Config = CylinderPushConfig;

    fn info(&self) -> &TaskInfo {
        &self.info
    }

    fn integrate(&self, q: &mut [f64], v: &mut [f64], u: &[f64], dt: f64) {
        v[0] += dt * u[0] / self.params.pusher_mass;
        v[1] += dt * u[1] / self.params.pusher_mass;
        for (qi, vi) in q.iter_mut().zip(v.iter()) {
            *qi += dt * vi;
        }
        self.resolve_contact(q, v);
    }

    fn reward(
        &self,
        states: ArrayView3<'_, f64>,
        controls: ArrayView3<'_, f64>,
        config: &CylinderPushConfig,
    ) -> Array1<f64> {
        let reach = self.contact_distance();
        states
            .outer_iter()
            .zip(controls.outer_iter())
            .map(|(traj, ctrl)| {
                let (mut pusher, mut goal, mut velocity) = (0.0, 0.0, 0.0);
                for s in traj.axis_iter(Axis(0)) {
                    let gap = (s[2] - s[0]).hypot(s[3] - s[1]) - reach;
                    pusher += smooth_l1(gap, 0.01);
                    goal += smooth_l1((s[2] - config.goal[0]).hypot(s[3] - config.goal[1]), 0.05);
                    velocity += (4..8).map(|j| quadratic(s[j])).sum::<f64>();
                }
                -config.w_pusher * pusher - config.w_goal * goal - config.w_vel * velocity
                    - config.w_ctrl * control_effort(ctrl)
            })
            .collect()
    }

    fn reset(&self, rng: &mut dyn RngCore) -> TaskState {
        let w = self.params.spawn_half_width;
        let reach = self.contact_distance();
        let target = loop {
            let x: f64 = rng.random_range(-w..=w);
            let y: f64 = rng.random_range(-w..=w);
            if x.hypot(y) > reach {
                break [x, y];
            }
        };
        TaskState::new(0.0, vec![0.0, 0.0, target[0], target[1]], vec![0.0; 4])
    }

    fn trace_points(&self, q: &[f64]) -> Vec<[f64; 3]> {
        vec![[q[0], q[1], 0.0], [q[2], q[3], 0.0]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{AnyTask, Configured};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn task() -> Configured<CylinderPush> {
        Configured::new(CylinderPush::default(), CylinderPushConfig::default())
    }

    #[test]
    fn pushing_moves_the_target() {
        let t = task();
        let mut s = TaskState::new(0.0, vec![0.0, 0.0, 0.5, 0.0], vec![0.0; 4]);
        for _ in 0..100 {
            s = t.step(&s, &[2.0, 0.0], 0.02).unwrap();
        }
        assert!(s.q[2] > 0.5, "target did not move: {:?}", s.q);
        assert!(s.v[2] > 0.0);
    }

    #[test]
    fn reset_keeps_disks_apart() {
        let t = task();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let s = t.reset(&mut rng);
            assert_eq!(&s.q[..2], &[0.0, 0.0]);
            assert!(s.q[2].hypot(s.q[3]) > 0.35);
            assert!(s.q[2].abs() <= 0.5 && s.q[3].abs() <= 0.5);
        }
    }

    proptest! {
        #[test]
        fn never_penetrates(
            px in -1.0..1.0f64, py in -1.0..1.0f64, tx in -1.0..1.0f64, ty in -1.0..1.0f64,
            vs in proptest::array::uniform4(-3.0..3.0f64),
            ux in -5.0..5.0f64, uy in -5.0..5.0f64,
        ) {
            let t = task();
            let mut s = TaskState::new(0.0, vec![px, py, tx, ty], vs.to_vec());
            for _ in 0..20 {
                s = t.step(&s, &[ux, uy], 0.02).unwrap();
                let d = (s.q[2] - s.q[0]).hypot(s.q[3] - s.q[1]);
                prop_assert!(d >= 0.35 - 1e-9, "distance {}", d);
            }
        }

        #[test]
        fn control_is_clamped(ux in -10.0..10.0f64, uy in -10.0..10.0f64) {
            let t = task();
            let s = TaskState::new(0.0, vec![0.0, 0.0, 0.4, 0.1], vec![0.1, 0.0, 0.0, 0.0]);
            let a = t.step(&s, &[ux, uy], 0.02).unwrap();
            let b = t.step(&s, &[ux.clamp(-2.0, 2.0), uy.clamp(-2.0, 2.0)], 0.02).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
