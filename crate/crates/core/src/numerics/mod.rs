//! Dense tensors, the differentiation tape, and finite-difference checks.

pub mod kernels;
mod scalar;
mod tape;
mod tensor;

pub use scalar::Scalar;
pub(crate) use scalar::c;
pub use tape::{GradFault, SparseRows, Tape, Var};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Max over every coordinate of every input of
/// `|analytic − numeric| / max(1, |analytic|)`, where the numeric derivative
/// is a central difference of the scalar produced by `f`.
///
/// `fault` injects a deliberate backward corruption into the analytic pass.
pub fn max_gradient_error<F>(inputs: &[Tensor<f64>], f: F, h: f64, fault: Option<GradFault>) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        scalar_value(&tape, out)
    };

    let mut tape = match fault {
        Some(fault) => Tape::with_fault(fault),
        None => Tape::new(),
    };
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    scalar_value(&tape, out)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; tape.value(v).numel()]))
        .collect();

    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = inputs[k].data()[i];
            let plus = orig + h;
            let minus = orig - h;
            probe[k].data_mut()[i] = plus;
            let fp = eval(&probe)?;
            probe[k].data_mut()[i] = minus;
            let fm = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (fp - fm) / (plus - minus);
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if err.is_nan() {
                return Err(Error::Numeric(format!("gradient check produced NaN at input {k}, coordinate {i}")));
            }
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Single-input form of [`max_gradient_error`].
pub fn finite_diff_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    max_gradient_error(std::slice::from_ref(x), |tape, vars| f(tape, vars[0]), h, None)
}

fn scalar_value(tape: &Tape<f64>, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.numel() != 1 {
        return Err(Error::Contract(format!("gradient check needs a scalar function, got shape {:?}", t.shape())));
    }
    Ok(t.data()[0])
}
