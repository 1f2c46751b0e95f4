use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Ordered, named collection of trainable tensors.
///
/// Random initialization draws from a stream keyed by `(seed, name)`, so two
/// stores built with the same seed agree on every parameter they share by
/// name regardless of which other parameters exist.
#[derive(Clone, Debug)]
pub struct ParamStore<S> {
    seed: u64,
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn add_ones(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::ones(shape))
    }

    /// Parameter drawn from `uniform(-bound, bound)`.
    pub fn add_uniform(&mut self, name: impl Into<String>, shape: &[usize], bound: f64) -> ParamId {
        let name = name.into();
        let mut rng = self.rng_for(&name);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| S::lit(rng.gen_range(-bound..=bound))).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("shape matches count"))
    }

    fn rng_for(&self, name: &str) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(name.as_bytes());
        let digest = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(key)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Zeroes every parameter whose name starts with `prefix`; returns how many matched.
    pub fn zero_prefix(&mut self, prefix: &str) -> usize {
        let mut n = 0;
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            if name.starts_with(prefix) {
                t.data_mut().iter_mut().for_each(|x| *x = S::zero());
                n += 1;
            }
        }
        n
    }

    /// Replaces all tensors, checking names and shapes line up.
    pub fn load_from(&mut self, entries: Vec<(String, Tensor<S>)>) -> Result<()> {
        if entries.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.tensors.len(),
                entries.len()
            )));
        }
        for (i, (name, t)) in entries.into_iter().enumerate() {
            if name != self.names[i] || t.shape() != self.tensors[i].shape() {
                return Err(Error::Checkpoint(format!(
                    "entry {i}: got {name} {:?}, expected {} {:?}",
                    t.shape(),
                    self.names[i],
                    self.tensors[i].shape()
                )));
            }
            self.tensors[i] = t;
        }
        Ok(())
    }

    /// Puts every parameter on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape<S>, requires_grad: bool) -> Binding {
        Binding {
            vars: self.tensors.iter().map(|t| tape.leaf(t.clone(), requires_grad)).collect(),
        }
    }
}

/// Tape handles for the parameters of one forward pass.
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    #[inline]
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Collects gradients in store order after `tape.backward`.
    pub fn grads<S: Scalar>(&self, tape: &Tape<S>) -> Vec<Tensor<S>> {
        self.vars.iter().map(|&v| tape.grad(v)).collect()
    }
}
