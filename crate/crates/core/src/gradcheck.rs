//! Central-difference gradient checking.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Worst per-component relative error between the tape gradient of a scalar
/// function and central differences, for a single input tensor.
pub fn grad_check<S, F>(f: F, x: &Tensor<S>, h: S) -> Result<S>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, Var) -> Result<Var>,
{
    grad_check_many(|tape, xs| f(tape, xs[0]), std::slice::from_ref(x), h)
}

/// Same as [`grad_check`] over several inputs; the error is
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)` maximized over
/// every component of every input.
pub fn grad_check_many<S, F>(f: F, inputs: &[Tensor<S>], h: S) -> Result<S>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &[Var]) -> Result<Var>,
{
    if !(h >= S::lit(1e-6) && h <= S::lit(1e-4)) {
        return Err(Error::Input(format!("step {h} outside [1e-6, 1e-4]")));
    }
    let eval = |xs: &[Tensor<S>], with_grad: bool| -> Result<(S, Vec<Tensor<S>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone(), with_grad)).collect();
        let out = f(&mut tape, &vars)?;
        if tape.value(out).len() != 1 {
            return Err(Error::Rank {
                op: "grad_check",
                expected: 0,
                shape: tape.shape(out).to_vec(),
            });
        }
        let y = tape.value(out).data()[0];
        if !y.is_finite() {
            return Err(Error::NonFinite("grad_check objective".into()));
        }
        let grads = if with_grad {
            tape.backward(out)?;
            vars.iter().map(|&v| tape.grad(v)).collect()
        } else {
            Vec::new()
        };
        Ok((y, grads))
    };

    let (_, analytic) = eval(inputs, true)?;
    let mut work: Vec<Tensor<S>> = inputs.to_vec();
    let two = S::lit(2.0);
    let mut worst = S::zero();
    for (t, grad) in analytic.iter().enumerate() {
        for i in 0..work[t].len() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + h;
            let (fp, _) = eval(&work, false)?;
            work[t].data_mut()[i] = orig - h;
            let (fm, _) = eval(&work, false)?;
            work[t].data_mut()[i] = orig;
            let numeric = (fp - fm) / (two * h);
            let a = grad.data()[i];
            let denom = S::one().max(a.abs()).max(numeric.abs());
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_step_outside_range() {
        let x = Tensor::<f64>::ones(&[2]);
        let f = |t: &mut Tape<f64>, v: Var| Ok(t.sum(v));
        assert!(grad_check(f, &x, 1e-2).is_err());
        assert!(grad_check(f, &x, 1e-8).is_err());
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let x = Tensor::<f64>::ones(&[2]);
        let f = |t: &mut Tape<f64>, v: Var| Ok(t.scale(v, f64::INFINITY)).map(|y| t.sum(y));
        assert!(matches!(grad_check(f, &x, 1e-5), Err(Error::NonFinite(_))));
    }
}
