//! Mask diffusion: linear noise schedules, forward corruption, training
//! pair synthesis and the recursive reverse process.
//!
//! The default `Additive` mode corrupts the mask embedding by pure noise
//! addition, M_t = M_{t−1} + ε with ε ~ N(0, β_t I), so the reverse
//! process is a telescoping subtraction of predicted increments. `Ddpm`
//! mode keeps the classical √(1−β_t) shrinkage and its closed-form
//! marginal for comparison.

use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::Tensor;
use crate::{config_err, contract_err, dim_err, index_err};

pub const DEFAULT_BETA_MIN: f64 = 1e-4;
pub const DEFAULT_BETA_MAX: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionMode {
    Additive,
    Ddpm,
}

/// Per-step variances β_t on a linear ramp, with the cumulative
/// quantities needed for closed-form marginals. Time steps are 1-based:
/// `beta(1)` is the first step's variance.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    mode: DiffusionMode,
    betas: Vec<f64>,
    cum_var: Vec<f64>,
    alphas_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// β_t = beta_min + (t−1)/(T−1)·(beta_max−beta_min) for t = 1..T.
    pub fn build(steps: usize, beta_min: f64, beta_max: f64, mode: DiffusionMode) -> Result<Self> {
        if steps == 0 {
            return Err(config_err!("schedule needs at least one step"));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(config_err!(
                "need 0 < beta_min ≤ beta_max < 1, got {beta_min} and {beta_max}"
            ));
        }
        let mut betas = Vec::with_capacity(steps);
        for t in 1..=steps {
            let frac = if steps == 1 { 0.0 } else { (t - 1) as f64 / (steps - 1) as f64 };
            betas.push(beta_min + frac * (beta_max - beta_min));
        }
        let mut cum_var = Vec::with_capacity(steps);
        let mut alphas_bar = Vec::with_capacity(steps);
        let mut sum = 0.0;
        let mut prod = 1.0;
        for &b in &betas {
            sum += b;
            prod *= 1.0 - b;
            cum_var.push(sum);
            alphas_bar.push(prod);
        }
        Ok(Self { mode, betas, cum_var, alphas_bar })
    }

    /// Linear schedule with the conventional 1e-4..0.02 endpoints.
    pub fn default_linear(steps: usize, mode: DiffusionMode) -> Result<Self> {
        Self::build(steps, DEFAULT_BETA_MIN, DEFAULT_BETA_MAX, mode)
    }

    pub fn mode(&self) -> DiffusionMode {
        self.mode
    }

    /// Number of steps T.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn cum_vars(&self) -> &[f64] {
        &self.cum_var
    }

    pub fn alphas_bar(&self) -> &[f64] {
        &self.alphas_bar
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t < 1 || t > self.steps() {
            return Err(index_err!("step {} outside 1..={}", t, self.steps()));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.betas[t - 1])
    }

    /// Σ_{i≤t} β_i, the additive-mode marginal variance at step t.
    pub fn cum_var(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.cum_var[t - 1])
    }

    /// Π_{i≤t} (1−β_i), the ddpm-mode signal retention at step t.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.alphas_bar[t - 1])
    }
}

/// A mask embedding part-way through the forward chain.
#[derive(Debug, Clone)]
pub struct DiffusionState {
    pub mask: Tensor,
    pub t: usize,
}

impl DiffusionState {
    pub fn start(mask: Tensor) -> Self {
        Self { mask, t: 0 }
    }
}

/// Elementwise N(0, std²) draw shaped like `shape`.
pub fn gaussian(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor {
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::from_vec(shape.to_vec(), data).expect("shape/data agree by construction")
}

/// One forward step: corrupt M_{t} into M_{t+1}.
pub fn forward_step(
    state: &DiffusionState,
    sched: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<DiffusionState> {
    if state.t >= sched.steps() {
        return Err(crate::error::Error::step_exhausted(format_args!(
            "state is at t={} of T={}",
            state.t,
            sched.steps()
        )));
    }
    let t_next = state.t + 1;
    let beta = sched.beta(t_next)?;
    let noise = gaussian(state.mask.shape(), Float::sqrt(beta), rng);
    let mask = match sched.mode() {
        DiffusionMode::Additive => state
            .mask
            .data()
            .iter()
            .zip(noise.data())
            .map(|(m, n)| m + n)
            .collect::<Vec<_>>(),
        DiffusionMode::Ddpm => {
            let keep = Float::sqrt(1.0 - beta);
            state
                .mask
                .data()
                .iter()
                .zip(noise.data())
                .map(|(m, n)| keep * m + n)
                .collect()
        }
    };
    Ok(DiffusionState {
        mask: Tensor::from_vec(state.mask.shape().to_vec(), mask)?,
        t: t_next,
    })
}

/// Closed-form draw of M_t given M_0, composing t forward steps.
pub fn forward_marginal(
    m0: &Tensor,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    sched.check_t(t)?;
    match sched.mode() {
        DiffusionMode::Additive => {
            let std = Float::sqrt(sched.cum_var(t)?);
            let noise = gaussian(m0.shape(), std, rng);
            let data = m0.data().iter().zip(noise.data()).map(|(m, n)| m + n).collect();
            Tensor::from_vec(m0.shape().to_vec(), data)
        }
        DiffusionMode::Ddpm => {
            let ab = sched.alpha_bar(t)?;
            let keep = Float::sqrt(ab);
            let std = Float::sqrt(1.0 - ab);
            let noise = gaussian(m0.shape(), std, rng);
            let data = m0.data().iter().zip(noise.data()).map(|(m, n)| keep * m + n).collect();
            Tensor::from_vec(m0.shape().to_vec(), data)
        }
    }
}

/// Draw (M_t, M_t − M_{t−1}): the noised mask and the single-step
/// increment the denoiser is trained to predict. M_{t−1} comes from the
/// closed-form marginal (M_0 itself when t = 1), then one forward step
/// produces M_t.
pub fn make_training_pair(
    m0: &Tensor,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<(Tensor, Tensor)> {
    sched.check_t(t)?;
    let m_prev = if t == 1 {
        m0.clone()
    } else {
        forward_marginal(m0, t - 1, sched, rng)?
    };
    let stepped = forward_step(&DiffusionState { mask: m_prev.clone(), t: t - 1 }, sched, rng)?;
    let target = stepped
        .mask
        .data()
        .iter()
        .zip(m_prev.data())
        .map(|(a, b)| a - b)
        .collect();
    let target = Tensor::from_vec(m0.shape().to_vec(), target)?;
    Ok((stepped.mask, target))
}

/// One reverse update M_t → M_{t−1} given the predicted increment.
///
/// Both modes subtract the prediction; in ddpm mode this is the posterior
/// mean and [`sample`] adds the β_t-variance posterior noise for t > 1.
pub fn reverse_step(m_t: &Tensor, predicted_increment: &Tensor, sched: &NoiseSchedule, t: usize) -> Result<Tensor> {
    sched.check_t(t)?;
    if m_t.shape() != predicted_increment.shape() {
        return Err(dim_err!(
            "mask {:?} vs predicted increment {:?}",
            m_t.shape(),
            predicted_increment.shape()
        ));
    }
    let data = m_t
        .data()
        .iter()
        .zip(predicted_increment.data())
        .map(|(m, d)| m - d)
        .collect();
    Tensor::from_vec(m_t.shape().to_vec(), data)
}

/// Run the full reverse chain from pure noise to a predicted M̂_0.
///
/// `model(img, m_t, t)` predicts the step-t increment. The chain starts
/// from N(0, cum_var[T]·I) in additive mode and N(0, I) in ddpm mode.
pub fn sample<M>(
    mut model: M,
    img: &Tensor,
    mask_shape: &[usize],
    sched: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<Tensor>
where
    M: FnMut(&Tensor, &Tensor, usize) -> Result<Tensor>,
{
    let steps = sched.steps();
    let init_std = match sched.mode() {
        DiffusionMode::Additive => Float::sqrt(sched.cum_var(steps)?),
        DiffusionMode::Ddpm => 1.0,
    };
    let mut mask = gaussian(mask_shape, init_std, rng);
    for t in (1..=steps).rev() {
        let pred = model(img, &mask, t)?;
        if pred.shape() != mask.shape() {
            return Err(contract_err!(
                "model produced shape {:?}, expected {:?}",
                pred.shape(),
                mask.shape()
            ));
        }
        mask = reverse_step(&mask, &pred, sched, t)?;
        if sched.mode() == DiffusionMode::Ddpm && t > 1 {
            let noise = gaussian(mask_shape, Float::sqrt(sched.beta(t)?), rng);
            let data = mask.data().iter().zip(noise.data()).map(|(m, n)| m + n).collect();
            mask = Tensor::from_vec(mask_shape.to_vec(), data)?;
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::rng::stream;
    use alloc::vec;

    #[test]
    fn degenerate_schedule_is_beta_min() {
        let s = NoiseSchedule::build(1, 0.05, 0.3, DiffusionMode::Additive).unwrap();
        assert_eq!(s.betas(), &[0.05]);
    }

    #[test]
    fn three_step_schedule_arithmetic() {
        let s = NoiseSchedule::build(3, 0.1, 0.3, DiffusionMode::Additive).unwrap();
        let expect_b = [0.1, 0.2, 0.3];
        let expect_c = [0.1, 0.3, 0.6];
        for i in 0..3 {
            assert!((s.betas()[i] - expect_b[i]).abs() < 1e-12);
            assert!((s.cum_vars()[i] - expect_c[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn default_endpoints_are_monotone() {
        let s = NoiseSchedule::default_linear(128, DiffusionMode::Ddpm).unwrap();
        assert_eq!(s.betas()[0], DEFAULT_BETA_MIN);
        assert_eq!(s.betas()[127], DEFAULT_BETA_MAX);
        for t in 1..128 {
            assert!(s.betas()[t] >= s.betas()[t - 1]);
            assert!(s.cum_vars()[t] > s.cum_vars()[t - 1]);
            assert!(s.alphas_bar()[t] < s.alphas_bar()[t - 1]);
        }
    }

    #[test]
    fn bad_bounds_are_config_errors() {
        assert!(matches!(
            NoiseSchedule::build(0, 0.1, 0.2, DiffusionMode::Additive),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            NoiseSchedule::build(4, 0.0, 0.2, DiffusionMode::Additive),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            NoiseSchedule::build(4, 0.3, 0.2, DiffusionMode::Additive),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            NoiseSchedule::build(4, 0.3, 1.0, DiffusionMode::Additive),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn near_zero_beta_is_near_identity() {
        for mode in [DiffusionMode::Additive, DiffusionMode::Ddpm] {
            let s = NoiseSchedule::build(2, 1e-12, 1e-12, mode).unwrap();
            let m0 = Tensor::full([2, 3], 1.5);
            let next = forward_step(&DiffusionState::start(m0.clone()), &s, &mut stream(0, "fs", 0))
                .unwrap();
            assert!(next.mask.max_abs_diff(&m0).unwrap() < 1e-5);
            assert_eq!(next.t, 1);
        }
    }

    #[test]
    fn forward_step_is_deterministic_under_seed() {
        let s = NoiseSchedule::default_linear(8, DiffusionMode::Additive).unwrap();
        let m0 = Tensor::zeros([4]);
        let a = forward_step(&DiffusionState::start(m0.clone()), &s, &mut stream(5, "fs", 1)).unwrap();
        let b = forward_step(&DiffusionState::start(m0), &s, &mut stream(5, "fs", 1)).unwrap();
        assert_eq!(a.mask, b.mask);
    }

    #[test]
    fn forward_step_past_end_is_exhausted() {
        let s = NoiseSchedule::default_linear(2, DiffusionMode::Additive).unwrap();
        let state = DiffusionState { mask: Tensor::zeros([1]), t: 2 };
        assert!(matches!(
            forward_step(&state, &s, &mut stream(0, "fs", 2)),
            Err(Error::StepExhausted(_))
        ));
    }

    #[test]
    fn step_noise_variance_matches_beta() {
        let s = NoiseSchedule::build(8, 0.05, 0.3, DiffusionMode::Additive).unwrap();
        let mut rng = stream(6, "mc", 0);
        let m0 = Tensor::zeros([4]);
        let state = DiffusionState { mask: m0, t: 3 };
        let beta = s.beta(4).unwrap();
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        let n = 10_000 * 4;
        for _ in 0..10_000 {
            let next = forward_step(&state, &s, &mut rng).unwrap();
            for (a, b) in next.mask.data().iter().zip(state.mask.data()) {
                let d = a - b;
                acc += d;
                acc2 += d * d;
            }
        }
        let mean = acc / n as f64;
        let var = acc2 / n as f64 - mean * mean;
        assert!((var - beta).abs() / beta < 0.05, "var {var} vs beta {beta}");
    }

    #[test]
    fn marginal_out_of_range_is_index_error() {
        let s = NoiseSchedule::default_linear(4, DiffusionMode::Additive).unwrap();
        let m0 = Tensor::zeros([2]);
        assert!(matches!(
            forward_marginal(&m0, 0, &s, &mut stream(0, "m", 0)),
            Err(Error::Index(_))
        ));
        assert!(matches!(
            forward_marginal(&m0, 5, &s, &mut stream(0, "m", 0)),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn marginal_variance_matches_cumulative() {
        let s = NoiseSchedule::build(8, 0.05, 0.3, DiffusionMode::Additive).unwrap();
        let t = 5;
        let cv = s.cum_var(t).unwrap();
        let m0 = Tensor::zeros([4]);
        let mut rng = stream(7, "mc", 1);
        let mut acc2 = 0.0;
        let n = 10_000 * 4;
        for _ in 0..10_000 {
            let m_t = forward_marginal(&m0, t, &s, &mut rng).unwrap();
            for v in m_t.data() {
                acc2 += v * v;
            }
        }
        let var = acc2 / n as f64;
        assert!((var - cv).abs() / cv < 0.05, "var {var} vs cum {cv}");
    }

    #[test]
    fn marginal_matches_chained_steps_in_moments() {
        // Gaussian composition: the closed-form marginal at t must agree
        // with t chained forward steps, for both modes.
        for mode in [DiffusionMode::Additive, DiffusionMode::Ddpm] {
            let s = NoiseSchedule::build(8, 0.05, 0.3, mode).unwrap();
            let m0 = Tensor::full([4], 0.7);
            let t = 8;
            let mut rng = stream(8, "mc", 2);
            let n = 10_000;
            let mut stats = |draw: &mut dyn FnMut(&mut rand_chacha::ChaCha8Rng) -> Tensor| {
                let mut acc = 0.0;
                let mut acc2 = 0.0;
                for _ in 0..n {
                    let m = draw(&mut rng);
                    for v in m.data() {
                        acc += v;
                        acc2 += v * v;
                    }
                }
                let count = (n * 4) as f64;
                let mean = acc / count;
                (mean, acc2 / count - mean * mean)
            };
            let (mean_marginal, var_marginal) =
                stats(&mut |rng| forward_marginal(&m0, t, &s, rng).unwrap());
            let (mean_chain, var_chain) = stats(&mut |rng| {
                let mut state = DiffusionState::start(m0.clone());
                for _ in 0..t {
                    state = forward_step(&state, &s, rng).unwrap();
                }
                state.mask
            });
            assert!(
                (mean_marginal - mean_chain).abs() <= 0.02,
                "{mode:?}: means {mean_marginal} vs {mean_chain}"
            );
            assert!(
                (var_marginal - var_chain).abs() / var_chain <= 0.05,
                "{mode:?}: vars {var_marginal} vs {var_chain}"
            );
        }
    }

    #[test]
    fn ddpm_endpoint_is_pure_noise() {
        let s = NoiseSchedule::build(8, 0.5, 0.9, DiffusionMode::Ddpm).unwrap();
        assert!(s.alpha_bar(8).unwrap() < 1e-3);
        let m0 = Tensor::full([4], 10.0);
        let mut rng = stream(9, "mc", 3);
        let mut acc = 0.0;
        for _ in 0..10_000 {
            let m_t = forward_marginal(&m0, 8, &s, &mut rng).unwrap();
            acc += m_t.data().iter().sum::<f64>();
        }
        let mean = acc / (10_000.0 * 4.0);
        assert!(mean.abs() < 0.1, "mean {mean} should forget M0=10");
    }

    #[test]
    fn training_pair_target_is_step_noise() {
        let s = NoiseSchedule::build(8, 0.05, 0.3, DiffusionMode::Additive).unwrap();
        let m0 = Tensor::zeros([4]);
        let t = 6;
        let beta = s.beta(t).unwrap();
        let mut rng = stream(10, "pair", 0);
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        let n = 10_000 * 4;
        for _ in 0..10_000 {
            let (m_t, target) = make_training_pair(&m0, t, &s, &mut rng).unwrap();
            // Algebra: M_{t−1} = M_t − target, bit-exactly.
            let recon = reverse_step(&m_t, &target, &s, t).unwrap();
            let direct: Vec<f64> = m_t.data().iter().zip(target.data()).map(|(a, b)| a - b).collect();
            assert_eq!(recon.data(), direct.as_slice());
            for v in target.data() {
                acc += v;
                acc2 += v * v;
            }
        }
        let mean = acc / n as f64;
        let var = acc2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - beta).abs() / beta < 0.05, "var {var} vs beta {beta}");
    }

    #[test]
    fn reverse_zero_prediction_is_identity() {
        let s = NoiseSchedule::default_linear(4, DiffusionMode::Additive).unwrap();
        let m = Tensor::randn([3, 2], &mut stream(11, "rev", 0));
        let out = reverse_step(&m, &Tensor::zeros([3, 2]), &s, 2).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn reverse_subtraction_is_linear() {
        let s = NoiseSchedule::default_linear(4, DiffusionMode::Additive).unwrap();
        let mut rng = stream(12, "rev", 1);
        let m = Tensor::randn([5], &mut rng);
        let a = Tensor::randn([5], &mut rng);
        let b = Tensor::randn([5], &mut rng);
        let ab = Tensor::from_vec(vec![5], a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect()).unwrap();
        let joint = reverse_step(&m, &ab, &s, 3).unwrap();
        let chained = reverse_step(&reverse_step(&m, &a, &s, 3).unwrap(), &b, &s, 3).unwrap();
        assert!(joint.max_abs_diff(&chained).unwrap() < 1e-15);
    }

    #[test]
    fn reverse_shape_mismatch_is_dimension_error() {
        let s = NoiseSchedule::default_linear(4, DiffusionMode::Additive).unwrap();
        assert!(matches!(
            reverse_step(&Tensor::zeros([2]), &Tensor::zeros([3]), &s, 1),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn recorded_chain_replays_back_to_m0() {
        let s = NoiseSchedule::build(8, 0.05, 0.3, DiffusionMode::Additive).unwrap();
        let m0 = Tensor::randn([2, 4, 4], &mut stream(13, "replay", 0));
        let mut rng = stream(13, "replay", 1);
        let mut state = DiffusionState::start(m0.clone());
        let mut increments = Vec::new();
        for _ in 0..8 {
            let next = forward_step(&state, &s, &mut rng).unwrap();
            let inc = Tensor::from_vec(
                m0.shape().to_vec(),
                next.mask.data().iter().zip(state.mask.data()).map(|(a, b)| a - b).collect(),
            )
            .unwrap();
            increments.push(inc);
            state = next;
        }
        let mut m = state.mask;
        for t in (1..=8).rev() {
            m = reverse_step(&m, &increments[t - 1], &s, t).unwrap();
        }
        assert!(m.max_abs_diff(&m0).unwrap() <= 1e-9);
    }

    #[test]
    fn sample_with_replay_oracle_recovers_m0() {
        let s = NoiseSchedule::build(8, 0.05, 0.3, DiffusionMode::Additive).unwrap();
        let m0 = Tensor::randn([2, 4, 4], &mut stream(14, "sam", 0));
        let mut rng = stream(14, "sam", 1);
        let mut state = DiffusionState::start(m0.clone());
        let mut chain = vec![m0.clone()];
        for _ in 0..8 {
            state = forward_step(&state, &s, &mut rng).unwrap();
            chain.push(state.mask.clone());
        }
        // Oracle: predict exactly the increment that lands on the recorded
        // M_{t−1}, regardless of the current estimate.
        let oracle = |_img: &Tensor, m: &Tensor, t: usize| {
            let prev = &chain[t - 1];
            Tensor::from_vec(
                m.shape().to_vec(),
                m.data().iter().zip(prev.data()).map(|(a, b)| a - b).collect(),
            )
        };
        let img = Tensor::zeros([3, 4, 4]);
        let out = sample(oracle, &img, &[2, 4, 4], &s, &mut stream(14, "sam", 2)).unwrap();
        assert!(out.max_abs_diff(&m0).unwrap() <= 1e-9);
    }

    #[test]
    fn sample_is_deterministic_under_seed() {
        let s = NoiseSchedule::build(4, 0.05, 0.3, DiffusionMode::Ddpm).unwrap();
        let img = Tensor::zeros([3, 2, 2]);
        let model = |_: &Tensor, m: &Tensor, _t: usize| Ok(m.map(|v| v * 0.5));
        let a = sample(model, &img, &[2, 2, 2], &s, &mut stream(15, "det", 0)).unwrap();
        let b = sample(model, &img, &[2, 2, 2], &s, &mut stream(15, "det", 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_single_step_is_one_subtraction() {
        let s = NoiseSchedule::build(1, 0.2, 0.2, DiffusionMode::Additive).unwrap();
        let img = Tensor::zeros([3, 2, 2]);
        let pred = Tensor::full([1, 2, 2], 0.25);
        let model = |_: &Tensor, _: &Tensor, _: usize| Ok(pred.clone());
        let mut rng_a = stream(16, "one", 0);
        let got = sample(model, &img, &[1, 2, 2], &s, &mut rng_a).unwrap();
        let mut rng_b = stream(16, "one", 0);
        let start = gaussian(&[1, 2, 2], s.cum_var(1).unwrap().sqrt(), &mut rng_b);
        let expect = reverse_step(&start, &pred, &s, 1).unwrap();
        assert_eq!(got, expect);
    }

    #[test]
    fn sample_rejects_bad_model_shape() {
        let s = NoiseSchedule::build(2, 0.1, 0.2, DiffusionMode::Additive).unwrap();
        let img = Tensor::zeros([3, 2, 2]);
        let model = |_: &Tensor, _: &Tensor, _: usize| Ok(Tensor::zeros([5]));
        let err = sample(model, &img, &[1, 2, 2], &s, &mut stream(17, "bad", 0));
        assert!(matches!(err, Err(Error::Contract(_))));
    }
}
