//! Finite-difference verification of backward rules.
//!
//! The analytic side runs at the precision under test; the central
//! differences run in f64 so the comparison noise floor stays far below
//! the pass tolerances (1e-4 at 32-bit, 1e-6 at 64-bit). Sample points are
//! snapped to the tested precision first so both sides see the same point.

use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::Result;
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_error: f64,
    pub pass: bool,
    /// Degenerate sample points that were re-drawn before this check ran.
    pub resamples: usize,
}

impl GradCheckReport {
    pub fn line(&self) -> String {
        format!(
            "{:<24} max_rel_error {:>12.3e}  resamples {:>2}  {}",
            self.name,
            self.max_rel_error,
            self.resamples,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

/// Elementwise relative error with the symmetric denominator guard.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// Compare analytic gradients (precision `E`) against f64 central
/// differences for every element of every input.
///
/// `build_e` and `build_64` must describe the same computation; they are the
/// two precision instantiations of one generic builder and must end in a
/// scalar loss.
pub fn check_gradients<E, BE, B64>(
    name: &str,
    inputs: &[Tensor<f64>],
    build_e: BE,
    build_64: B64,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    E: Scalar,
    BE: Fn(&mut Tape<E>, &[Var]) -> Result<Var>,
    B64: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    // Snap the sample point to the tested precision's grid.
    let snapped: Vec<Tensor<f64>> = inputs.iter().map(|t| t.cast::<E>().cast::<f64>()).collect();

    // Analytic gradients at precision E.
    let mut tape = Tape::<E>::new();
    let vars: Vec<Var> = snapped
        .iter()
        .map(|t| tape.leaf(t.cast::<E>().requires_grad(true)))
        .collect();
    let loss = build_e(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(&snapped)
        .map(|(&v, t)| {
            tape.grad(v)
                .map(|g| g.iter().map(|x| x.as_f64()).collect())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let eval = |point: &[Tensor<f64>]| -> Result<f64> {
        let mut t = Tape::<f64>::new();
        let vs: Vec<Var> = point.iter().map(|x| t.leaf(x.clone())).collect();
        let l = build_64(&mut t, &vs)?;
        Ok(t.value(l).data()[0])
    };

    let mut max_rel = 0.0f64;
    for (ti, t) in snapped.iter().enumerate() {
        for j in 0..t.numel() {
            let mut plus = snapped.to_vec();
            plus[ti].data_mut()[j] += epsilon;
            let mut minus = snapped.to_vec();
            minus[ti].data_mut()[j] -= epsilon;
            let h = plus[ti].data()[j] - minus[ti].data()[j];
            let numeric = (eval(&plus)? - eval(&minus)?) / h;
            let rel = relative_error(analytic[ti][j], numeric);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }

    Ok(GradCheckReport {
        name: name.to_string(),
        max_rel_error: max_rel,
        pass: max_rel <= tolerance,
        resamples: 0,
    })
}

/// Random-weight scalar reduction: `sum(w .* y) / ~O(1)`. A nonuniform
/// weighting catches transposed/misrouted gradients that an all-ones sum
/// would miss.
pub fn weighted_loss<E: Scalar>(
    tape: &mut Tape<E>,
    y: Var,
    weights: &Tensor<f64>,
) -> Result<Var> {
    let w = tape.constant(weights.cast::<E>());
    let prod = tape.mul(y, w)?;
    Ok(tape.sum_all(prod))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_output_reports_zero_error() {
        let x = Tensor::<f64>::new(vec![3], vec![0.4, -1.2, 2.0]).unwrap();
        let report = check_gradients::<f64, _, _>(
            "constant",
            &[x],
            |t, v| {
                let y = t.mul_scalar(v[0], 0.0);
                Ok(t.sum_all(y))
            },
            |t, v| {
                let y = t.mul_scalar(v[0], 0.0);
                Ok(t.sum_all(y))
            },
            1e-5,
            1e-6,
        )
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
        assert!(report.pass);
    }

    #[test]
    fn doubled_backward_rule_gives_one_third() {
        // A backward rule that is exactly 2x the truth: emulate by scaling
        // the analytic path by 2 while the numeric path stays at 1.
        let x = Tensor::<f64>::new(vec![2], vec![0.7, -0.3]).unwrap();
        let report = check_gradients::<f64, _, _>(
            "doubled",
            &[x],
            |t, v| {
                let y = t.mul_scalar(v[0], 2.0);
                Ok(t.sum_all(y))
            },
            |t, v| {
                let y = t.mul_scalar(v[0], 1.0);
                Ok(t.sum_all(y))
            },
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!((report.max_rel_error - 1.0 / 3.0).abs() < 1e-6);
        assert!(!report.pass);
    }

    #[test]
    fn softmax_passes_at_1e6_in_f64() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::<f64>::randn(&[3, 5], 1.0, &mut rng);
        let w = Tensor::<f64>::randn(&[3, 5], 0.3, &mut rng);
        let wc = w.clone();
        let report = check_gradients::<f64, _, _>(
            "softmax",
            &[x],
            |t, v| {
                let y = t.softmax(v[0], 1)?;
                weighted_loss(t, y, &w)
            },
            |t, v| {
                let y = t.softmax(v[0], 1)?;
                weighted_loss(t, y, &wc)
            },
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.pass, "{}", report.line());
    }
}
