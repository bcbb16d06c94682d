//! Named learnable parameters and their gradient buffers.

use rand::Rng;

use crate::rng::stream_for;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// One learnable tensor with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }
}

/// Flat, ordered collection of all model parameters. The order is the
/// model's construction traversal and is stable across runs; the optimizer
/// and the checkpoint format both rely on it.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Append a parameter, returning its slot index. Names must be unique.
    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        let name = name.into();
        debug_assert!(
            self.by_name(&name).is_none(),
            "duplicate parameter name {}",
            name
        );
        self.params.push(Parameter::new(name, value));
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, i: usize) -> &Parameter {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Parameter {
        &mut self.params[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            for g in p.grad.data_mut() {
                *g = 0.0;
            }
        }
    }

    /// Record every parameter value as a tape leaf, in slot order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.value.clone()))
            .collect()
    }

    /// Add `scale` times the tape gradients of the bound leaves into the
    /// stored gradient buffers. Leaves the loss did not reach contribute
    /// nothing.
    pub fn accumulate_grads(&mut self, vars: &[Var], grads: &Gradients, scale: f64) {
        assert_eq!(vars.len(), self.params.len());
        for (p, &v) in self.params.iter_mut().zip(vars) {
            if let Some(g) = grads.get(v) {
                for (dst, src) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *dst += scale * src;
                }
            }
        }
    }

    pub fn snapshot(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor]) {
        assert_eq!(snapshot.len(), self.params.len());
        for (p, s) in self.params.iter_mut().zip(snapshot) {
            assert_eq!(p.value.shape(), s.shape());
            p.value = s.clone();
        }
    }
}

/// Uniform init in ±sqrt(1/fan_in), seeded per parameter name so the draw
/// does not depend on what other parameters exist.
pub fn init_uniform(seed: u64, name: &str, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (1.0 / fan_in.max(1) as f64).sqrt();
    let mut rng = stream_for(seed, name);
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data)
}

/// Identity matrix plus small uniform noise; used for transforms that
/// should start as a near-noop.
pub fn init_identity_noise(seed: u64, name: &str, n: usize, noise: f64) -> Tensor {
    let mut rng = stream_for(seed, name);
    let mut t = Tensor::eye(n);
    for v in t.data_mut() {
        *v += rng.random_range(-noise..noise);
    }
    t
}
