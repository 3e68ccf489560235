//! Control splines.
//!
//! A [`ControlPlan`] holds the knots that parameterize the nominal policy,
//! one row per knot and one column per actuator, together with the time of
//! each knot. Queries outside the knot span clamp to the boundary knots.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpolationKind {
    #[default]
    ZeroOrderHold,
    Linear,
    /// Catmull-Rom tangents (one-sided at the ends) on a cubic Hermite basis.
    Cubic,
}

impl InterpolationKind {
    pub const ALL: [InterpolationKind; 3] = [Self::ZeroOrderHold, Self::Linear, Self::Cubic];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ZeroOrderHold => "zero_order_hold",
            Self::Linear => "linear",
            Self::Cubic => "cubic",
        }
    }
}

impl std::fmt::Display for InterpolationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for InterpolationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Unknown { kind: "interpolation kind", name: s.to_string() })
    }
}

/// Knot times spaced uniformly over `[t_start, t_start + horizon]`.
///
/// The last entry is pinned to `t_start + horizon` exactly.
pub fn uniform_knot_times(num_nodes: usize, t_start: f64, horizon: f64) -> Result<Vec<f64>> {
    if !(horizon > 0.0) {
        return Err(Error::NonPositiveHorizon(horizon));
    }
    if num_nodes < 2 {
        return Err(Error::TooFewKnots(num_nodes));
    }
    let last = (num_nodes - 1) as f64;
    let mut times: Vec<f64> = (0..num_nodes).map(|i| t_start + horizon * (i as f64 / last)).collect();
    times[num_nodes - 1] = t_start + horizon;
    Ok(times)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlPlan {
    knots: Array2<f64>,
    knot_times: Vec<f64>,
    kind: InterpolationKind,
}

impl ControlPlan {
    pub fn new(knots: Array2<f64>, knot_times: Vec<f64>, kind: InterpolationKind) -> Result<Self> {
        let (num_nodes, nu) = knots.dim();
        if num_nodes < 2 {
            return Err(Error::TooFewKnots(num_nodes));
        }
        if nu == 0 {
            return Err(Error::Shape("control plans need at least one actuator".into()));
        }
        if knot_times.len() != num_nodes || knot_times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::BadKnotTimes);
        }
        Ok(Self { knots, knot_times, kind })
    }

    /// Builds a plan whose knots are spread uniformly over the horizon.
    pub fn uniform(knots: Array2<f64>, t_start: f64, horizon: f64, kind: InterpolationKind) -> Result<Self> {
        let times = uniform_knot_times(knots.nrows(), t_start, horizon)?;
        Self::new(knots, times, kind)
    }

    pub fn zeros(num_nodes: usize, nu: usize, t_start: f64, horizon: f64, kind: InterpolationKind) -> Result<Self> {
        Self::uniform(Array2::zeros((num_nodes, nu)), t_start, horizon, kind)
    }

    pub fn knots(&self) -> ArrayView2<'_, f64> {
        self.knots.view()
    }

    pub fn knot_times(&self) -> &[f64] {
        &self.knot_times
    }

    pub fn kind(&self) -> InterpolationKind {
        self.kind
    }

    pub fn num_nodes(&self) -> usize {
        self.knots.nrows()
    }

    pub fn nu(&self) -> usize {
        self.knots.ncols()
    }

    pub fn t_start(&self) -> f64 {
        self.knot_times[0]
    }

    pub fn t_end(&self) -> f64 {
        self.knot_times[self.knot_times.len() - 1]
    }

    pub fn horizon(&self) -> f64 {
        self.t_end() - self.t_start()
    }

    pub fn interpolate(&self, t: f64) -> Array1<f64> {
        let mut out = Array1::zeros(self.nu());
        interpolate_into(self.knots.view(), &self.knot_times, self.kind, t, out.as_slice_mut().unwrap());
        out
    }

    pub fn interpolate_into(&self, t: f64, out: &mut [f64]) {
        interpolate_into(self.knots.view(), &self.knot_times, self.kind, t, out);
    }

    /// Same knot grid and kind, new knot values.
    pub fn with_knots(&self, knots: Array2<f64>) -> Result<Self> {
        if knots.dim() != self.knots.dim() {
            return Err(Error::Shape(format!(
                "expected knots of shape {:?}, got {:?}",
                self.knots.dim(),
                knots.dim()
            )));
        }
        Ok(Self { knots, knot_times: self.knot_times.clone(), kind: self.kind })
    }

    /// Evaluates this plan on an arbitrary strictly increasing grid.
    pub fn resample(&self, knot_times: Vec<f64>, kind: InterpolationKind) -> Result<Self> {
        let mut knots = Array2::zeros((knot_times.len(), self.nu()));
        for (mut row, &t) in knots.rows_mut().into_iter().zip(&knot_times) {
            self.interpolate_into(t, row.as_slice_mut().unwrap());
        }
        Self::new(knots, knot_times, kind)
    }

    /// Warm start for the next replan: the same spline evaluated on a fresh
    /// uniform grid starting at `new_t_start`.
    pub fn shift(&self, new_t_start: f64, horizon: f64) -> Result<Self> {
        debug_assert!(new_t_start >= self.t_start());
        self.resample(uniform_knot_times(self.num_nodes(), new_t_start, horizon)?, self.kind)
    }
}

/// Evaluates the spline defined by `knots` at `knot_times` into `out`.
///
/// `knot_times` must be strictly increasing with one entry per knot row.
pub fn interpolate_into(
    knots: ArrayView2<'_, f64>,
    knot_times: &[f64],
    kind: InterpolationKind,
    t: f64,
    out: &mut [f64],
) {
    let n = knot_times.len();
    debug_assert_eq!(n, knots.nrows());
    debug_assert_eq!(out.len(), knots.ncols());

    if !(t > knot_times[0]) {
        out.iter_mut().zip(knots.row(0)).for_each(|(o, &k)| *o = k);
        return;
    }
    if t >= knot_times[n - 1] {
        out.iter_mut().zip(knots.row(n - 1)).for_each(|(o, &k)| *o = k);
        return;
    }
    // knot_times[i] <= t < knot_times[i + 1]
    let i = knot_times.partition_point(|&kt| kt <= t) - 1;
    let (t0, t1) = (knot_times[i], knot_times[i + 1]);
    let a = knots.row(i);
    let b = knots.row(i + 1);

    match kind {
        InterpolationKind::ZeroOrderHold => {
            out.iter_mut().zip(a).for_each(|(o, &k)| *o = k);
        }
        InterpolationKind::Linear => {
            let s = (t - t0) / (t1 - t0);
            for ((o, &pa), &pb) in out.iter_mut().zip(a).zip(b) {
                *o = pa + s * (pb - pa);
            }
        }
        InterpolationKind::Cubic => {
            let h = t1 - t0;
            let s = (t - t0) / h;
            let (s2, s3) = (s * s, s * s * s);
            let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
            let h10 = s3 - 2.0 * s2 + s;
            let h01 = -2.0 * s3 + 3.0 * s2;
            let h11 = s3 - s2;
            for (j, o) in out.iter_mut().enumerate() {
                let m0 = tangent(knots, knot_times, i, j);
                let m1 = tangent(knots, knot_times, i + 1, j);
                *o = h00 * a[j] + h10 * h * m0 + h01 * b[j] + h11 * h * m1;
            }
        }
    }
}

fn tangent(knots: ArrayView2<'_, f64>, knot_times: &[f64], i: usize, j: usize) -> f64 {
    let last = knot_times.len() - 1;
    let (lo, hi) = match i {
        0 => (0, 1),
        i if i == last => (last - 1, last),
        i => (i - 1, i + 1),
    };
    (knots[[hi, j]] - knots[[lo, j]]) / (knot_times[hi] - knot_times[lo])
}
