use rand::Rng;

use crate::error::Result;
use crate::nn::params::{Binding, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `y = x·W + b` with `W: d_in×d_out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// `W ~ uniform(-s, s)` with `s = sqrt(1/d_in)`, `b = 0`.
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, d_in: usize, d_out: usize) -> Self {
        let bound = (1.0 / d_in as f64).sqrt();
        let w = store.add_uniform(format!("{name}.w"), &[d_in, d_out], bound);
        let b = store.add_zeros(format!("{name}.b"), &[d_out]);
        Self { w, b, d_in, d_out }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, p: &Binding, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p.var(self.w))?;
        tape.add_row(y, p.var(self.b))
    }
}

/// Linear → ReLU → linear.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, d_in: usize, hidden: usize, d_out: usize) -> Self {
        Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), d_in, hidden),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, d_out),
        }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, p: &Binding, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, p, x)?;
        let h = tape.relu(h);
        self.fc2.forward(tape, p, h)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, d: usize) -> Self {
        Self {
            gamma: store.add_ones(format!("{name}.gamma"), &[d]),
            beta: store.add_zeros(format!("{name}.beta"), &[d]),
        }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, p: &Binding, x: Var) -> Result<Var> {
        tape.layer_norm(x, p.var(self.gamma), p.var(self.beta), S::lit(LN_EPS))
    }
}

/// Inverted dropout. Identity when `p == 0` or when no RNG is supplied
/// (evaluation mode).
pub fn dropout<S: Scalar, R: Rng + ?Sized>(tape: &mut Tape<S>, x: Var, p: f64, rng: Option<&mut R>) -> Result<Var> {
    let Some(rng) = rng else {
        return Ok(x);
    };
    if p <= 0.0 {
        return Ok(x);
    }
    let keep = S::lit(1.0 / (1.0 - p));
    let shape = tape.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let mask = (0..n)
        .map(|_| if rng.gen::<f64>() < p { S::zero() } else { keep })
        .collect();
    let m = tape.constant(Tensor::new(shape, mask)?);
    tape.mul(x, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_bounds_and_zero_bias() {
        let mut store = ParamStore::<f64>::new(3);
        let l = Linear::new(&mut store, "l", 16, 4);
        let s = 0.25;
        assert!(store.get(l.w).data().iter().all(|w| w.abs() <= s));
        assert!(store.get(l.b).data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut store = ParamStore::<f64>::new(3);
        let mlp = Mlp::new(&mut store, "m", 5, 3, 2);
        store.zero_prefix("m");
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let x = tape.constant(Tensor::from_f64(&[2, 5], &[1.0, -2.0, 3.0, 4.0, 5.0, 0.1, 0.2, 0.3, 0.4, 0.5]).unwrap());
        let y = mlp.forward(&mut tape, &p, x).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dropout_zero_is_identity() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(&[3, 3]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = dropout(&mut tape, x, 0.0, Some(&mut rng)).unwrap();
        assert_eq!(x, y);
        let z = dropout::<f64, ChaCha8Rng>(&mut tape, x, 0.5, None).unwrap();
        assert_eq!(x, z);
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(&[100_000]));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y = dropout(&mut tape, x, 0.1, Some(&mut rng)).unwrap();
        let mean = tape.value(y).data().iter().sum::<f64>() / 1e5;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }
}
