//! Conv4 backbone blocks and cross-task interpolation.
//!
//! Each block is conv(3x3, pad 1) -> batchnorm -> ReLU -> maxpool(2x2),
//! taking 84x84 inputs through the spatial path 84 -> 42 -> 21 -> 10 -> 5.
//! Interpolation mixes the hidden states of two same-label-space tasks at a
//! uniformly chosen layer (0 = input space) with a Beta-distributed
//! coefficient.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::ops::BnStats;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use std::fmt;
use std::str::FromStr;

pub const NUM_BLOCKS: usize = 4;
pub const BN_EPS: f64 = 1e-5;
/// running = momentum * running + (1 - momentum) * batch
pub const BN_MOMENTUM: f64 = 0.9;
/// Spatial side after each block for 84x84 inputs (index 0 = input).
pub const SPATIAL: [usize; 5] = [84, 42, 21, 10, 5];

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    /// Width of all four blocks (the paper's configs use 64 or 640).
    pub channels: usize,
    /// Optional hidden-state capture point, 0..=4 (0 = input).
    pub capture_layer: Option<usize>,
    /// Layers shared across tasks; the metric-based regime shares all of them.
    pub shared_layers: usize,
}

impl EncoderConfig {
    pub fn new(channels: usize) -> Self {
        EncoderConfig {
            channels,
            capture_layer: None,
            shared_layers: NUM_BLOCKS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InterpolationMode {
    TaskInterpolation,
    Mixup,
    Off,
}

impl fmt::Display for InterpolationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            InterpolationMode::TaskInterpolation => "task_interpolation",
            InterpolationMode::Mixup => "mixup",
            InterpolationMode::Off => "off",
        };
        f.write_str(s)
    }
}

impl FromStr for InterpolationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "task_interpolation" => Ok(InterpolationMode::TaskInterpolation),
            "mixup" => Ok(InterpolationMode::Mixup),
            "off" => Ok(InterpolationMode::Off),
            other => Err(Error::Config(format!(
                "unknown interpolation mode {other:?} (task_interpolation|mixup|off)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterpolationConfig {
    pub alpha: f64,
    pub beta: f64,
    pub enabled: bool,
    pub mode: InterpolationMode,
}

impl Default for InterpolationConfig {
    fn default() -> Self {
        InterpolationConfig {
            alpha: 2.0,
            beta: 2.0,
            enabled: true,
            mode: InterpolationMode::TaskInterpolation,
        }
    }
}

impl InterpolationConfig {
    pub fn effective_mode(&self) -> InterpolationMode {
        if self.enabled {
            self.mode
        } else {
            InterpolationMode::Off
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite() && self.beta > 0.0 && self.beta.is_finite())
        {
            return Err(Error::Config(format!(
                "interpolation alpha/beta must be finite and positive, got {}/{}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// Draw the mixing coefficient from Beta(alpha, beta).
pub fn sample_lambda<R: Rng>(cfg: &InterpolationConfig, rng: &mut R) -> f64 {
    let dist = Beta::new(cfg.alpha, cfg.beta).expect("validated alpha/beta");
    dist.sample(rng)
}

/// Uniform layer choice over {0,..,NUM_BLOCKS} (0 = input space). Mixup
/// always mixes in input space.
pub fn sample_layer<R: Rng>(mode: InterpolationMode, rng: &mut R) -> usize {
    match mode {
        InterpolationMode::Mixup => 0,
        _ => rng.gen_range(0..=NUM_BLOCKS),
    }
}

/// Random derangement (no fixed points) by rejection sampling.
pub fn derangement<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    assert!(n >= 2, "derangement needs at least two elements");
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return perm;
        }
    }
}

/// Support/query hidden states of one task at some layer.
#[derive(Clone, Copy, Debug)]
pub struct HiddenPair {
    pub support: Var,
    pub query: Var,
}

/// Convex combination of two tasks' hidden states, applied to support and
/// query separately: `lambda * task_i + (1 - lambda) * task_j`.
pub fn interpolate_tasks<E: Scalar>(
    tape: &mut Tape<E>,
    task_i: HiddenPair,
    task_j: HiddenPair,
    lambda: f64,
) -> Result<HiddenPair> {
    let l = E::from_f64(lambda);
    Ok(HiddenPair {
        support: tape.lerp(task_i.support, task_j.support, l)?,
        query: tape.lerp(task_i.query, task_j.query, l)?,
    })
}

/// Tape handles for one block's trainable parameters.
#[derive(Clone, Copy, Debug)]
pub struct BlockVars {
    pub conv_w: Var,
    pub conv_b: Var,
    pub bn_gamma: Var,
    pub bn_beta: Var,
}

/// One conv-bn-relu-pool block. Training mode returns the batchnorm batch
/// statistics so the caller can fold them into the running estimates.
pub fn conv_block<E: Scalar>(
    tape: &mut Tape<E>,
    x: Var,
    vars: &BlockVars,
    running_mean: &Tensor<E>,
    running_var: &Tensor<E>,
    train: bool,
) -> Result<(Var, Option<BnStats<E>>)> {
    let conv = tape.conv2d(x, vars.conv_w, vars.conv_b, 1, 1)?;
    let (bn, stats) = if train {
        let (bn, stats) = tape.batchnorm2d_train(conv, vars.bn_gamma, vars.bn_beta, BN_EPS)?;
        (bn, Some(stats))
    } else {
        let bn = tape.batchnorm2d_eval(
            conv,
            vars.bn_gamma,
            vars.bn_beta,
            running_mean,
            running_var,
            BN_EPS,
        )?;
        (bn, None)
    };
    let act = tape.relu(bn);
    let pooled = tape.maxpool2x2(act)?;
    Ok((pooled, stats))
}

/// Fold batch statistics into running estimates.
pub fn update_running<E: Scalar>(running: &mut Tensor<E>, batch: &[E], momentum: f64) {
    let m = E::from_f64(momentum);
    let one_minus = E::from_f64(1.0 - momentum);
    for (r, &b) in running.data_mut().iter_mut().zip(batch) {
        *r = *r * m + b * one_minus;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lambda_stays_in_unit_interval() {
        let cfg = InterpolationConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let l = sample_lambda(&cfg, &mut rng);
            assert!((0.0..=1.0).contains(&l));
        }
    }

    #[test]
    fn beta_2_2_mean_close_to_half() {
        let cfg = InterpolationConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let mean: f64 = (0..n).map(|_| sample_lambda(&cfg, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() <= 0.02, "mean {mean}");
    }

    #[test]
    fn beta_1_1_is_uniform_by_ks_distance() {
        let cfg = InterpolationConfig {
            alpha: 1.0,
            beta: 1.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let mut draws: Vec<f64> = (0..n).map(|_| sample_lambda(&cfg, &mut rng)).collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let ks = draws
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let lo = i as f64 / n as f64;
                let hi = (i + 1) as f64 / n as f64;
                (x - lo).abs().max((x - hi).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks <= 0.02, "KS distance {ks}");
    }

    #[test]
    fn layer_choice_is_uniform_over_0_to_4() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 5];
        let n = 10_000;
        for _ in 0..n {
            counts[sample_layer(InterpolationMode::TaskInterpolation, &mut rng)] += 1;
        }
        for &c in &counts {
            let f = c as f64 / n as f64;
            assert!((f - 0.2).abs() < 0.03, "layer frequency {f}");
        }
        assert_eq!(sample_layer(InterpolationMode::Mixup, &mut rng), 0);
    }

    #[test]
    fn derangement_has_no_fixed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in 2..6 {
            for _ in 0..20 {
                let d = derangement(n, &mut rng);
                assert!(d.iter().enumerate().all(|(i, &p)| i != p));
                let mut sorted = d.clone();
                sorted.sort_unstable();
                assert_eq!(sorted, (0..n).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn interpolation_endpoints_and_affinity() {
        let mut tape = Tape::<f64>::new();
        let a_s = tape.leaf(Tensor::new(vec![2], vec![2.0, 0.0]).unwrap());
        let a_q = tape.leaf(Tensor::new(vec![2], vec![1.0, 5.0]).unwrap());
        let b_s = tape.leaf(Tensor::new(vec![2], vec![4.0, 8.0]).unwrap());
        let b_q = tape.leaf(Tensor::new(vec![2], vec![3.0, -1.0]).unwrap());
        let a = HiddenPair { support: a_s, query: a_q };
        let b = HiddenPair { support: b_s, query: b_q };

        let at1 = interpolate_tasks(&mut tape, a, b, 1.0).unwrap();
        assert_eq!(tape.value(at1.support).data(), &[2.0, 0.0]);
        assert_eq!(tape.value(at1.query).data(), &[1.0, 5.0]);

        let at0 = interpolate_tasks(&mut tape, a, b, 0.0).unwrap();
        assert_eq!(tape.value(at0.support).data(), &[4.0, 8.0]);

        let mid = interpolate_tasks(&mut tape, a, b, 0.5).unwrap();
        assert_eq!(tape.value(mid.support).data(), &[3.0, 4.0]);

        // interpolate(a, a, lambda) = a
        let same = interpolate_tasks(&mut tape, a, a, 0.37).unwrap();
        assert_eq!(tape.value(same.support).data(), &[2.0, 0.0]);

        // interpolate(a,b,l) + interpolate(b,a,l) = a + b
        let ab = interpolate_tasks(&mut tape, a, b, 0.37).unwrap();
        let ba = interpolate_tasks(&mut tape, b, a, 0.37).unwrap();
        let lhs = tape.add(ab.support, ba.support).unwrap();
        let rhs = tape.add(a.support, b.support).unwrap();
        assert!(tape.value(lhs).max_abs_diff(tape.value(rhs)) < 1e-12);
    }

    #[test]
    fn spatial_path_constants() {
        // four stride-2 halvings of 84 with floor at 21 -> 10
        assert_eq!(SPATIAL, [84, 42, 21, 10, 5]);
        let mut side = 84;
        for s in &SPATIAL[1..] {
            side /= 2;
            assert_eq!(side, *s);
        }
    }
}
