//! Reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive with its input indices and local partials
//! during the forward pass; [`Tape::backward`] sweeps it once in reverse. Heavy
//! kernels (network layers, the rasterizer) enter the tape as [`CustomOp`]s with
//! hand-written vector-Jacobian products. Gradients for parameters are reported
//! per [`ParamBlock`](crate::params::ParamBlock); frozen blocks come back as
//! exact zeros.

mod tape;

pub use tape::{CustomOp, GradSink, Gradients, OpKind, Tape, Var};

use alloc::vec::Vec;

use crate::params::BlockSet;

/// Finite-difference step used by [`grad_check`] by default.
pub const FD_STEP: f64 = 1e-5;

/// Relative error with an absolute floor so that vanishing gradients compare sanely.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = libm::fmax(libm::fmax(libm::fabs(analytic), libm::fabs(numeric)), floor);
    libm::fabs(analytic - numeric) / scale
}

/// Reverse-mode gradient of `f` at `params` and the central-difference estimate
/// with step `eps`. Returns `(analytic, numeric)`.
pub fn gradients_vs_differences<F>(f: F, params: &[f64], eps: f64) -> (Vec<f64>, Vec<f64>)
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params.iter().map(|&p| tape.var(p)).collect();
    let out = f(&tape, &vars);
    let grads = tape.backward(out, BlockSet::EMPTY);
    let analytic: Vec<f64> = vars.iter().map(|v| grads.wrt(*v)).collect();

    let eval = |x: &[f64]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = x.iter().map(|&p| tape.var(p)).collect();
        f(&tape, &vars).value()
    };
    let mut x = params.to_vec();
    let numeric = (0..params.len())
        .map(|k| {
            let orig = x[k];
            x[k] = orig + eps;
            let hi = eval(&x);
            x[k] = orig - eps;
            let lo = eval(&x);
            x[k] = orig;
            (hi - lo) / (2.0 * eps)
        })
        .collect();
    (analytic, numeric)
}

/// Maximum relative error between backward and central differences over all
/// parameters. Gradients below `1e-10` in magnitude are compared absolutely.
pub fn grad_check<F>(f: F, params: &[f64], eps: f64) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let (a, n) = gradients_vs_differences(f, params, eps);
    a.iter()
        .zip(&n)
        .map(|(a, n)| relative_error(*a, *n, 1e-10))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::Real;

    #[test]
    fn linear_function_is_exact() {
        let err = grad_check(
            |_, x| x[0] * 3.0 - x[1] * 0.5 + x[2],
            &[0.3, -1.2, 4.0],
            FD_STEP,
        );
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn transcendental_chain() {
        let err = grad_check(
            |_, x| (x[0].sin() * x[1].exp()).sqrt() + x[1].ln() * x[0].cos(),
            &[0.7, 1.3],
            FD_STEP,
        );
        assert!(err < 1e-8, "{err}");
    }
}
