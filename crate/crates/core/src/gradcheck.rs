//! Central-finite-difference gradient verification.
//!
//! These helpers are the independent oracle for every analytic derivative in
//! the crate: a scalar-valued function of a parameter list is evaluated at
//! `x ± h` per entry and the two-sided slope is compared against the tape
//! gradient under a guarded relative error.

use alloc::vec::Vec;

use crate::fmath;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Relative error with the denominator clamped at 1 so that comparisons near
/// zero do not explode: `|a - b| / max(1, |a|, |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let denom = fmath::abs(a).max(fmath::abs(b)).max(1.0);
    fmath::abs(a - b) / denom
}

/// Evaluates `build` (which must assemble a `1 x 1` output from leaves bound
/// to `params`) and returns the maximum guarded relative error between the
/// tape gradient and the central difference `(f(x+h) - f(x-h)) / 2h`, taken
/// over every entry of every parameter.
pub fn max_param_gradient_error(
    params: &[Tensor],
    h: f64,
    build: impl Fn(&mut Tape, &[Var]) -> Var,
) -> f64 {
    let eval = |ps: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let root = build(&mut tape, &vars);
        tape.value(root).item()
    };

    // Analytic gradients in one pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let root = build(&mut tape, &vars);
    let grads = tape.backward(root);

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        let zero = Tensor::zeros(param.rows(), param.cols());
        let analytic = grads.get(vars[pi]).unwrap_or(&zero);
        for idx in 0..param.data().len() {
            let original = param.data()[idx];
            work[pi].data_mut()[idx] = original + h;
            let plus = eval(&work);
            work[pi].data_mut()[idx] = original - h;
            let minus = eval(&work);
            work[pi].data_mut()[idx] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic.data()[idx], numeric);
            if err > worst {
                worst = err;
            }
        }
    }
    worst
}
