//! Named trainable parameters and their gradient accumulators.
//!
//! Parameters live outside the tape: each forward pass copies the values it
//! needs onto the tape, and the backward pass accumulates gradients back into
//! the store. One optimizer step then consumes and clears the accumulators.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Frozen parameters keep accumulating gradients but are skipped by the
    /// optimizer.
    pub trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

/// Initialization scheme for a fresh parameter.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Const(f64),
    /// Zero-mean Gaussian with the given standard deviation.
    Normal(f64),
    /// Gaussian with std `sqrt(1 / fan_in)`, the usual dense-layer scaling.
    FanIn(usize),
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, init: Init, rng: &mut ChaCha8Rng) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Const(c) => vec![c; n],
            Init::Normal(std) => (0..n).map(|_| gaussian(rng) * std).collect(),
            Init::FanIn(fan_in) => {
                let std = (1.0 / fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| gaussian(rng) * std).collect()
            }
        };
        self.add_tensor(name, Tensor::new(shape, data))
    }

    pub fn add_tensor(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape.clone());
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad,
            trainable: true,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn accumulate_grad(&mut self, id: ParamId, grad: &[f64]) {
        let g = &mut self.params[id.0].grad.data;
        debug_assert_eq!(g.len(), grad.len());
        for (dst, src) in g.iter_mut().zip(grad) {
            *dst += src;
        }
    }

    pub(crate) fn accumulate_grad_rows(&mut self, id: ParamId, rows: &[usize], grad: &[f64]) {
        let p = &mut self.params[id.0];
        let cols = p.value.cols();
        for (k, &r) in rows.iter().enumerate() {
            let dst = &mut p.grad.data[r * cols..(r + 1) * cols];
            let src = &grad[k * cols..(k + 1) * cols];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub(crate) fn accumulate_grad_at(&mut self, id: ParamId, index: usize, grad: f64) {
        self.params[id.0].grad.data[index] += grad;
    }

    /// Errors if any accumulated gradient is non-finite, naming the parameter.
    pub fn ensure_finite_grads(&self) -> Result<()> {
        for p in &self.params {
            if !p.grad.is_finite() {
                return Err(Error::NonFinite {
                    what: "gradient",
                    context: p.name.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Box–Muller transform; two uniform draws per normal sample keeps the
/// consumption pattern deterministic.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
