//! Sampling optimizers: draw candidate knots around the nominal, then fold
//! the evaluated candidates back into a new nominal.
//!
//! All three optimizers maximize reward. Row 0 of every sampled batch is the
//! unperturbed nominal; the remaining rows are Gaussian perturbations drawn
//! i.i.d. per knot and per actuator and clamped to the control bounds.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{ensure, DynConfig, FieldSpec, Reflect};
use crate::error::{Error, Result};

/// Sampled knots, `[num_rollouts, num_nodes, nu]`.
pub type KnotBatch = Array3<f64>;

pub trait Optimizer: Send {
    fn config(&self) -> &dyn DynConfig;

    /// Mutable config access; changes take effect on the next sample.
    fn config_mut(&mut self) -> &mut dyn DynConfig;

    fn num_rollouts(&self) -> usize;

    fn num_nodes(&self) -> usize;

    fn sample_control_knots(
        &mut self,
        nominal: ArrayView2<'_, f64>,
        bounds: &[(f64, f64)],
        rng: &mut dyn RngCore,
    ) -> KnotBatch;

    fn update_nominal_knots(&mut self, samples: ArrayView3<'_, f64>, rewards: &[f64]) -> Result<Array2<f64>>;

    /// Drops any state carried between iterations.
    fn reset(&mut self) {}
}

fn validate_base(num_rollouts: usize, num_nodes: usize) -> Result<()> {
    ensure(num_rollouts >= 2, || format!("num_rollouts must be at least 2, got {num_rollouts}"))?;
    ensure(num_nodes >= 2, || format!("num_nodes must be at least 2, got {num_nodes}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictiveSamplingConfig {
    pub num_rollouts: usize,
    pub num_nodes: usize,
    pub sigma: f64,
}

impl Default for PredictiveSamplingConfig {
    fn default() -> Self {
        Self { num_rollouts: 32, num_nodes: 4, sigma: 0.05 }
    }
}

impl Reflect for PredictiveSamplingConfig {
    fn fields(&self) -> Vec<FieldSpec> {
        vec![
            FieldSpec::int("num_rollouts", self.num_rollouts),
            FieldSpec::int("num_nodes", self.num_nodes),
            FieldSpec::float("sigma", self.sigma),
        ]
    }

    fn validate(&self) -> Result<()> {
        validate_base(self.num_rollouts, self.num_nodes)?;
        ensure(self.sigma >= 0.0, || "sigma must be non-negative".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CemConfig {
    pub num_rollouts: usize,
    pub num_nodes: usize,
    pub sigma_init: f64,
    pub sigma_min: f64,
    pub num_elites: usize,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self { num_rollouts: 32, num_nodes: 4, sigma_init: 0.3, sigma_min: 0.05, num_elites: 4 }
    }
}

impl Reflect for CemConfig {
    fn fields(&self) -> Vec<FieldSpec> {
        vec![
            FieldSpec::int("num_rollouts", self.num_rollouts),
            FieldSpec::int("num_nodes", self.num_nodes),
            FieldSpec::float("sigma_init", self.sigma_init),
            FieldSpec::float("sigma_min", self.sigma_min),
            FieldSpec::int("num_elites", self.num_elites),
        ]
    }

    fn validate(&self) -> Result<()> {
        validate_base(self.num_rollouts, self.num_nodes)?;
        ensure(self.num_elites >= 1 && self.num_elites < self.num_rollouts, || {
            format!("num_elites must be in [1, num_rollouts), got {}", self.num_elites)
        })?;
        ensure(self.sigma_min >= 0.0 && self.sigma_min <= self.sigma_init, || {
            "sigma_min must satisfy 0 <= sigma_min <= sigma_init".into()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MppiConfig {
    pub num_rollouts: usize,
    pub num_nodes: usize,
    pub sigma: f64,
    pub temperature: f64,
}

impl Default for MppiConfig {
    fn default() -> Self {
        Self { num_rollouts: 32, num_nodes: 4, sigma: 0.1, temperature: 0.1 }
    }
}

impl Reflect for MppiConfig {
    fn fields(&self) -> Vec<FieldSpec> {
        vec![
            FieldSpec::int("num_rollouts", self.num_rollouts),
            FieldSpec::int("num_nodes", self.num_nodes),
            FieldSpec::float("sigma", self.sigma),
            FieldSpec::float("temperature", self.temperature),
        ]
    }

    fn validate(&self) -> Result<()> {
        validate_base(self.num_rollouts, self.num_nodes)?;
        ensure(self.sigma >= 0.0, || "sigma must be non-negative".into())?;
        ensure(self.temperature > 0.0, || "temperature must be positive".into())
    }
}

/// `[nominal; clamp(nominal + scale ∘ G_i) for i in 1..n]`.
fn perturb(
    nominal: ArrayView2<'_, f64>,
    n: usize,
    bounds: &[(f64, f64)],
    rng: &mut dyn RngCore,
    scale: impl Fn(usize, usize) -> f64,
) -> KnotBatch {
    let (nn, nu) = nominal.dim();
    debug_assert_eq!(bounds.len(), nu);
    let mut batch = Array3::zeros((n, nn, nu));
    batch.slice_mut(s![0, .., ..]).assign(&nominal);
    for i in 1..n {
        for k in 0..nn {
            for j in 0..nu {
                let g: f64 = StandardNormal.sample(rng);
                let (lo, hi) = bounds[j];
                batch[[i, k, j]] = (nominal[[k, j]] + scale(k, j) * g).clamp(lo, hi);
            }
        }
    }
    batch
}

fn check_rewards(samples: ArrayView3<'_, f64>, rewards: &[f64]) -> Result<()> {
    if samples.len_of(Axis(0)) != rewards.len() {
        return Err(Error::Shape(format!(
            "{} samples but {} rewards",
            samples.len_of(Axis(0)),
            rewards.len()
        )));
    }
    if rewards.iter().any(|r| r.is_nan()) {
        return Err(Error::NanReward);
    }
    if !rewards.iter().any(|r| *r > f64::NEG_INFINITY) {
        return Err(Error::AllRolloutsFailed(rewards.len()));
    }
    Ok(())
}

/// Index of the largest reward; the lowest index wins ties.
pub fn argmax(rewards: &[f64]) -> usize {
    let mut best = 0;
    for (i, &r) in rewards.iter().enumerate().skip(1) {
        if r > rewards[best] {
            best = i;
        }
    }
    best
}

/// Softmax weights `exp((J_i − max J)/λ) / Σ_j exp((J_j − max J)/λ)`.
///
/// Failed rollouts (`−∞`) get weight 0.
pub fn mppi_weights(rewards: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if rewards.iter().any(|r| r.is_nan()) {
        return Err(Error::NanReward);
    }
    let max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::AllRolloutsFailed(rewards.len()));
    }
    let mut w: Vec<f64> = rewards.iter().map(|&r| ((r - max) / temperature).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    Ok(w)
}

/// Indices of the `k` best finite rewards, best first, ties by index.
pub fn elite_indices(rewards: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..rewards.len()).filter(|&i| rewards[i] > f64::NEG_INFINITY).collect();
    idx.sort_by(|&a, &b| rewards[b].total_cmp(&rewards[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

#[derive(Debug, Clone)]
pub struct PredictiveSampling {
    config: PredictiveSamplingConfig,
}

impl PredictiveSampling {
    pub fn new(config: PredictiveSamplingConfig) -> Self {
        Self { config }
    }
}

impl Optimizer for PredictiveSampling {
    fn config(&self) -> &dyn DynConfig {
        &self.config
    }

    fn config_mut(&mut self) -> &mut dyn DynConfig {
        &mut self.config
    }

    fn num_rollouts(&self) -> usize {
        self.config.num_rollouts
    }

    fn num_nodes(&self) -> usize {
        self.config.num_nodes
    }

    fn sample_control_knots(
        &mut self,
        nominal: ArrayView2<'_, f64>,
        bounds: &[(f64, f64)],
        rng: &mut dyn RngCore,
    ) -> KnotBatch {
        let sigma = self.config.sigma;
        perturb(nominal, self.config.num_rollouts, bounds, rng, |_, _| sigma)
    }

    fn update_nominal_knots(&mut self, samples: ArrayView3<'_, f64>, rewards: &[f64]) -> Result<Array2<f64>> {
        check_rewards(samples, rewards)?;
        Ok(samples.index_axis(Axis(0), argmax(rewards)).to_owned())
    }
}

/// Cross-entropy method with a per-knot, per-actuator standard deviation
/// carried between iterations.
#[derive(Debug, Clone)]
pub struct Cem {
    config: CemConfig,
    std: Option<Array2<f64>>,
}

impl Cem {
    pub fn new(config: CemConfig) -> Self {
        Self { config, std: None }
    }

    pub fn std(&self) -> Option<ArrayView2<'_, f64>> {
        self.std.as_ref().map(|s| s.view())
    }
}

impl Optimizer for Cem {
    fn config(&self) -> &dyn DynConfig {
        &self.config
    }

    fn config_mut(&mut self) -> &mut dyn DynConfig {
        &mut self.config
    }

    fn num_rollouts(&self) -> usize {
        self.config.num_rollouts
    }

    fn num_nodes(&self) -> usize {
        self.config.num_nodes
    }

    fn sample_control_knots(
        &mut self,
        nominal: ArrayView2<'_, f64>,
        bounds: &[(f64, f64)],
        rng: &mut dyn RngCore,
    ) -> KnotBatch {
        let floor = self.config.sigma_min;
        let init = self.config.sigma_init;
        let std = match &self.std {
            Some(s) if s.dim() == nominal.dim() => s,
            _ => self.std.insert(Array2::from_elem(nominal.dim(), init)),
        };
        perturb(nominal, self.config.num_rollouts, bounds, rng, |k, j| std[[k, j]].max(floor))
    }

    fn update_nominal_knots(&mut self, samples: ArrayView3<'_, f64>, rewards: &[f64]) -> Result<Array2<f64>> {
        check_rewards(samples, rewards)?;
        let elites = elite_indices(rewards, self.config.num_elites);
        let k = elites.len() as f64;
        let (_, nn, nu) = samples.dim();

        let mut mean = Array2::<f64>::zeros((nn, nu));
        for &i in &elites {
            mean += &samples.index_axis(Axis(0), i);
        }
        mean /= k;

        let mut var = Array2::<f64>::zeros((nn, nu));
        for &i in &elites {
            let d = &samples.index_axis(Axis(0), i) - &mean;
            var += &(&d * &d);
        }
        let floor = self.config.sigma_min;
        self.std = Some(var.mapv(|v| (v / k).sqrt().max(floor)));
        Ok(mean)
    }

    fn reset(&mut self) {
        self.std = None;
    }
}

#[derive(Debug, Clone)]
pub struct Mppi {
    config: MppiConfig,
}

impl Mppi {
    pub fn new(config: MppiConfig) -> Self {
        Self { config }
    }
}

impl Optimizer for Mppi {
    fn config(&self) -> &dyn DynConfig {
        &self.config
    }

    fn config_mut(&mut self) -> &mut dyn DynConfig {
        &mut self.config
    }

    fn num_rollouts(&self) -> usize {
        self.config.num_rollouts
    }

    fn num_nodes(&self) -> usize {
        self.config.num_nodes
    }

    fn sample_control_knots(
        &mut self,
        nominal: ArrayView2<'_, f64>,
        bounds: &[(f64, f64)],
        rng: &mut dyn RngCore,
    ) -> KnotBatch {
        let sigma = self.config.sigma;
        perturb(nominal, self.config.num_rollouts, bounds, rng, |_, _| sigma)
    }

    fn update_nominal_knots(&mut self, samples: ArrayView3<'_, f64>, rewards: &[f64]) -> Result<Array2<f64>> {
        check_rewards(samples, rewards)?;
        let weights = mppi_weights(rewards, self.config.temperature)?;
        let (_, nn, nu) = samples.dim();
        let mut out = Array2::<f64>::zeros((nn, nu));
        let mut lo = Array2::from_elem((nn, nu), f64::INFINITY);
        let mut hi = Array2::from_elem((nn, nu), f64::NEG_INFINITY);
        for (w, sample) in weights.iter().zip(samples.outer_iter()) {
            if *w == 0.0 {
                continue;
            }
            out.scaled_add(*w, &sample);
            lo.zip_mut_with(&sample, |a, &b| *a = a.min(b));
            hi.zip_mut_with(&sample, |a, &b| *a = a.max(b));
        }
        // rounding can push a weighted mean a few ulps outside the samples
        ndarray::Zip::from(&mut out).and(&lo).and(&hi).for_each(|o, &l, &h| *o = o.clamp(l, h));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    fn scalar_batch(values: &[f64]) -> KnotBatch {
        Array::from_shape_vec((values.len(), 1, 1), values.to_vec()).unwrap()
    }

    #[test]
    fn ps_zero_noise_repeats_nominal() {
        let mut ps = PredictiveSampling::new(PredictiveSamplingConfig { sigma: 0.0, ..Default::default() });
        let nominal = array![[0.1], [0.2], [-0.3], [0.4]];
        let batch = ps.sample_control_knots(nominal.view(), &[(-1.0, 1.0)], &mut rng());
        assert_eq!(batch.dim(), (32, 4, 1));
        for row in batch.outer_iter() {
            assert_eq!(row, nominal);
        }
    }

    #[test]
    fn ps_row_zero_is_nominal_and_rest_clamped() {
        let mut ps = PredictiveSampling::new(PredictiveSamplingConfig { sigma: 5.0, ..Default::default() });
        let nominal = array![[0.9, -0.9], [0.0, 0.5], [0.2, 0.1], [1.0, -1.0]];
        let batch = ps.sample_control_knots(nominal.view(), &[(-1.0, 1.0), (-1.0, 1.0)], &mut rng());
        assert_eq!(batch.index_axis(Axis(0), 0), nominal);
        assert!(batch.iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn ps_noise_std() {
        let mut ps = PredictiveSampling::new(PredictiveSamplingConfig {
            num_rollouts: 10_001,
            num_nodes: 2,
            sigma: 0.05,
        });
        let nominal = Array2::zeros((1, 1));
        let batch = ps.sample_control_knots(nominal.view(), &[(-10.0, 10.0)], &mut rng());
        let xs: Vec<f64> = batch.iter().skip(1).copied().collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((var.sqrt() - 0.05).abs() < 0.03 * 0.05, "std {}", var.sqrt());
    }

    #[test]
    fn ps_argmax_with_ties() {
        let mut ps = PredictiveSampling::new(PredictiveSamplingConfig::default());
        let b = scalar_batch(&[10.0, 20.0, 30.0]);
        assert_eq!(ps.update_nominal_knots(b.view(), &[1.0, 5.0, 3.0]).unwrap()[[0, 0]], 20.0);
        assert_eq!(ps.update_nominal_knots(b.view(), &[5.0, 5.0, 3.0]).unwrap()[[0, 0]], 10.0);
        assert!(matches!(ps.update_nominal_knots(b.view(), &[1.0, f64::NAN, 3.0]), Err(Error::NanReward)));
        assert!(matches!(ps.update_nominal_knots(b.view(), &[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn mppi_equal_rewards_average() {
        let mut m = Mppi::new(MppiConfig::default());
        let b = scalar_batch(&[1.0, 2.0, 6.0]);
        let out = m.update_nominal_knots(b.view(), &[4.0; 3]).unwrap();
        assert!((out[[0, 0]] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn mppi_ignores_failed_rollouts() {
        let mut m = Mppi::new(MppiConfig::default());
        let b = scalar_batch(&[1.0, 100.0, 3.0]);
        let out = m.update_nominal_knots(b.view(), &[0.0, f64::NEG_INFINITY, 0.0]).unwrap();
        assert!((out[[0, 0]] - 2.0).abs() < 1e-12);
        let all_failed = [f64::NEG_INFINITY; 3];
        assert!(matches!(m.update_nominal_knots(b.view(), &all_failed), Err(Error::AllRolloutsFailed(3))));
    }

    #[test]
    fn cem_elite_mean_and_std() {
        let mut c = Cem::new(CemConfig { num_rollouts: 4, num_elites: 2, ..Default::default() });
        let (a, b, cc, d) = (0.3, -0.7, 0.1, 0.5);
        let batch = scalar_batch(&[a, b, cc, d]);
        let out = c.update_nominal_knots(batch.view(), &[0.0, 10.0, 3.0, 7.0]).unwrap();
        assert_eq!(out[[0, 0]], (b + d) / 2.0);
        assert!((c.std().unwrap()[[0, 0]] - 0.6).abs() < 1e-12);

        // the floor applies once elites collapse
        let same = scalar_batch(&[0.2; 4]);
        c.update_nominal_knots(same.view(), &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(c.std().unwrap()[[0, 0]], 0.05);
        c.reset();
        assert!(c.std().is_none());
    }

    #[test]
    fn cem_skips_failed_rollouts() {
        let mut c = Cem::new(CemConfig { num_rollouts: 4, num_elites: 3, ..Default::default() });
        let batch = scalar_batch(&[1.0, 2.0, 3.0, 4.0]);
        let r = [f64::NEG_INFINITY, 1.0, f64::NEG_INFINITY, 2.0];
        assert_eq!(c.update_nominal_knots(batch.view(), &r).unwrap()[[0, 0]], 3.0);
    }

    #[test]
    fn cem_samples_use_internal_std() {
        let mut c = Cem::new(CemConfig { sigma_init: 0.0, sigma_min: 0.0, ..Default::default() });
        let nominal = array![[0.5], [0.5], [0.5], [0.5]];
        let batch = c.sample_control_knots(nominal.view(), &[(-1.0, 1.0)], &mut rng());
        assert!(batch.iter().all(|&x| x == 0.5));
    }

    #[test]
    fn config_invariants() {
        let mut cfg = CemConfig::default();
        assert!(cfg.set_json("num_elites", &serde_json::json!(32)).is_err());
        assert!(cfg.set_json("sigma_min", &serde_json::json!(1.0)).is_err());
        let mut m = MppiConfig::default();
        assert!(m.set_json("temperature", &serde_json::json!(0.0)).is_err());
        let mut p = PredictiveSamplingConfig::default();
        assert!(p.set_json("num_rollouts", &serde_json::json!(1)).is_err());
        assert!(p.set_json("sigma", &serde_json::json!(0.0)).is_ok());
    }

    proptest! {
        #[test]
        fn mppi_weights_are_a_distribution(rewards in proptest::collection::vec(-50.0..50.0f64, 2..40), lambda in 0.01..10.0f64) {
            let w = mppi_weights(&rewards, lambda).unwrap();
            prop_assert!(w.iter().all(|&x| x > 0.0 || x == 0.0) && w.iter().all(|&x| x <= 1.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(w.iter().any(|&x| x > 0.0));
        }

        #[test]
        fn mppi_stays_in_convex_hull(values in proptest::collection::vec(-1.0..1.0f64, 2..30), seed in 0u64..1000) {
            let mut m = Mppi::new(MppiConfig::default());
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let rewards: Vec<f64> = values.iter().map(|_| StandardNormal.sample(&mut r)).collect();
            let out = m.update_nominal_knots(scalar_batch(&values).view(), &rewards).unwrap()[[0, 0]];
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= out && out <= hi);
        }

        #[test]
        fn permutation_invariance(values in proptest::collection::vec(-1.0..1.0f64, 4..20), seed in 0u64..1000) {
            let n = values.len();
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let rewards: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
            // reverse permutation; rewards are distinct with probability one
            let pv: Vec<f64> = values.iter().rev().copied().collect();
            let pr: Vec<f64> = rewards.iter().rev().copied().collect();
            let (b, pb) = (scalar_batch(&values), scalar_batch(&pv));

            let mut ps = PredictiveSampling::new(PredictiveSamplingConfig::default());
            prop_assert_eq!(ps.update_nominal_knots(b.view(), &rewards).unwrap(), ps.update_nominal_knots(pb.view(), &pr).unwrap());

            let mut m = Mppi::new(MppiConfig::default());
            let x = m.update_nominal_knots(b.view(), &rewards).unwrap()[[0, 0]];
            let y = m.update_nominal_knots(pb.view(), &pr).unwrap()[[0, 0]];
            prop_assert!((x - y).abs() <= 1e-12);

            let cfg = CemConfig { num_rollouts: n, num_elites: 2, ..Default::default() };
            let mut c = Cem::new(cfg);
            let x = c.update_nominal_knots(b.view(), &rewards).unwrap()[[0, 0]];
            let y = c.update_nominal_knots(pb.view(), &pr).unwrap()[[0, 0]];
            prop_assert_eq!(x, y);
        }
    }
}
