//! Central finite differences for verifying reverse-mode gradients.
//!
//! The numeric side never touches the tape: it only re-evaluates a scalar
//! loss closure at perturbed inputs, so it stays an independent oracle for
//! whatever the backward pass produced.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};

/// Default perturbation for central differences.
pub const DEFAULT_EPS: f64 = 1e-5;

/// d(loss)/dx estimated as (f(x+eps) - f(x-eps)) / (2 eps), one coordinate
/// at a time. `f` must be a pure function of its argument.
pub fn finite_diff_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut work = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = work[i];
        work[i] = orig + eps;
        let up = f(&work);
        work[i] = orig - eps;
        let down = f(&work);
        work[i] = orig;
        grad[i] = (up - down) / (2.0 * eps);
    }
    grad
}

/// Worst-case relative disagreement between two gradient vectors. The
/// denominator is floored so that finite-difference noise on near-zero
/// entries does not dominate.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-4))
        .fold(0.0, f64::max)
}

/// One named comparison between autodiff and finite differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// Runs a finite-difference comparison for one parameter vector.
pub fn check(
    name: impl Into<String>,
    f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    eps: f64,
    tolerance: f64,
) -> GradCheck {
    let numeric = finite_diff_gradient(f, x, eps);
    GradCheck {
        name: name.into(),
        max_rel_err: max_rel_err(analytic, &numeric),
        tolerance,
    }
}

/// Compares autodiff with finite differences for an op chain built from one
/// input tensor. The op output is reduced with fixed random coefficients so
/// transposition mistakes cannot cancel.
pub fn check_tape_op(
    name: &str,
    input_shape: &[usize],
    seed: u64,
    tolerance: f64,
    build: impl Fn(&mut Tape, Var) -> Var,
) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let numel: usize = input_shape.iter().product();
    let x0: Vec<f64> = (0..numel).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let out_len = {
        let mut tape = Tape::new();
        let x = tape.constant(input_shape.to_vec(), x0.clone()).expect("input shape");
        let out = build(&mut tape, x);
        tape.value(out).len()
    };
    let weights: Vec<f64> = (0..out_len).map(|_| rng.gen_range(-2.0..2.0)).collect();

    let loss_fn = |data: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let x = tape.constant(input_shape.to_vec(), data.to_vec()).expect("input shape");
        let out = build(&mut tape, x);
        let w = tape.constant(vec![out_len], weights.clone()).expect("weights");
        let flat = tape.reshape(out, vec![out_len]).expect("flatten");
        let prod = tape.mul(flat, w).expect("weighting");
        let loss = tape.sum_all(prod);
        tape.value(loss)[0]
    };

    let analytic = {
        let mut tape = Tape::new();
        let xt = Tensor::new(input_shape.to_vec(), x0.clone()).expect("input").with_grad();
        let x = tape.leaf(&xt);
        let out = build(&mut tape, x);
        let w = tape.constant(vec![out_len], weights.clone()).expect("weights");
        let flat = tape.reshape(out, vec![out_len]).expect("flatten");
        let prod = tape.mul(flat, w).expect("weighting");
        let loss = tape.sum_all(prod);
        tape.backward(loss).expect("backward");
        tape.grad(x).expect("input gradient").to_vec()
    };

    check(name, loss_fn, &x0, &analytic, DEFAULT_EPS, tolerance)
}
