//! Finite-difference gradient checking.

use super::{Tape, Var};
use crate::par::Exec;
use crate::tensor::Tensor;

/// Central differences `(f(θ + h·e_i) − f(θ − h·e_i)) / 2h` for every coordinate.
pub fn central_difference<F>(f: F, theta: &Tensor, h: f64, exec: Exec) -> Tensor
where
    F: Fn(&Tensor) -> f64 + Sync + Send,
{
    let values = exec.map_range(theta.len(), |i| {
        let mut plus = theta.clone();
        plus.data_mut()[i] += h;
        let mut minus = theta.clone();
        minus.data_mut()[i] -= h;
        (f(&plus) - f(&minus)) / (2.0 * h)
    });
    Tensor::from_vec(theta.shape(), values)
}

/// `max_i |analytic_i − numeric_i| / max(1, |analytic_i|)`.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Compares the recorded gradient of a scalar function with central
/// differences at `theta`; returns the max relative error.
///
/// `f` builds the scalar on the given tape from the parameter variable.
pub fn grad_check<F>(f: F, theta: &Tensor, h: f64) -> f64
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Var<'t> + Sync + Send,
{
    let tape = Tape::new();
    let x = tape.leaf(theta.clone());
    let root = f(&tape, x);
    let analytic = tape
        .grad_values(root, &[x])
        .expect("grad_check: function must return a scalar")
        .remove(0);
    let numeric = central_difference(
        |t| {
            let tape = Tape::new();
            let x = tape.constant(t.clone());
            f(&tape, x).item()
        },
        theta,
        h,
        Exec::default(),
    );
    max_relative_error(&analytic, &numeric)
}
