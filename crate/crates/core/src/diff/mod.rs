//! Differentiable compute kernel: named parameter tensors with gradient
//! slots, a reverse-mode tape, the Adam update, a finite-difference
//! gradient checker, and checkpoint I/O.
//!
//! Everything is double precision. Tensors are flat `f64` buffers with an
//! explicit shape; the only consumers are the two policy networks, so there
//! is no broadcasting and no op beyond what they need.

mod checkpoint;
mod gradcheck;
mod tape;

pub use checkpoint::{load_checkpoint, peek_config_hash, save_checkpoint};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use tape::{Tape, Var};

use indexmap::IndexMap;
use rand::Rng as _;

use crate::error::{CplError, Result};
use crate::rng::Rng;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
struct AdamSlot {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Named differentiable tensors with gradient accumulators and Adam state.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    tensors: IndexMap<String, Tensor>,
    grads: IndexMap<String, Vec<f64>>,
    opt: IndexMap<String, AdamSlot>,
    step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a tensor initialized uniformly in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`
    /// where `fan_in` is the trailing dimension.
    pub fn add_uniform(&mut self, name: &str, shape: &[usize], rng: &mut Rng) {
        let fan_in = *shape.last().unwrap_or(&1) as f64;
        let bound = 1.0 / fan_in.sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.insert(name, Tensor {
            shape: shape.to_vec(),
            data,
        });
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) {
        self.insert(name, Tensor::zeros(shape));
    }

    fn insert(&mut self, name: &str, tensor: Tensor) {
        let n = tensor.len();
        self.grads.insert(name.to_string(), vec![0.0; n]);
        self.opt.insert(
            name.to_string(),
            AdamSlot {
                m: vec![0.0; n],
                v: vec![0.0; n],
            },
        );
        self.tensors.insert(name.to_string(), tensor);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.tensors[name]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self.tensors[name]
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn grad(&self, name: &str) -> &[f64] {
        &self.grads[name]
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub(crate) fn accumulate_grad(&mut self, name: &str, offset: usize, grad: &[f64]) {
        let slot = &mut self.grads[name];
        for (dst, g) in slot[offset..offset + grad.len()].iter_mut().zip(grad) {
            *dst += g;
        }
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.values_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn has_nonzero_grad(&self) -> bool {
        self.grads.values().any(|g| g.iter().any(|&x| x != 0.0))
    }

    /// One bias-corrected Adam step over all tensors; gradients are zeroed
    /// afterwards.
    pub fn adam_update(&mut self, lr: f64, betas: (f64, f64), eps: f64) -> Result<()> {
        if lr <= 0.0 {
            return Err(CplError::Config(format!("learning rate {lr} must be > 0")));
        }
        self.step += 1;
        let t = self.step as f64;
        let (b1, b2) = betas;
        let bc1 = 1.0 - b1.powf(t);
        let bc2 = 1.0 - b2.powf(t);
        for (name, tensor) in &mut self.tensors {
            let grad = &mut self.grads[name];
            let slot = &mut self.opt[name];
            for i in 0..tensor.data.len() {
                let g = grad[i];
                slot.m[i] = b1 * slot.m[i] + (1.0 - b1) * g;
                slot.v[i] = b2 * slot.v[i] + (1.0 - b2) * g * g;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                tensor.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                if !tensor.data[i].is_finite() {
                    return Err(CplError::Numeric(format!(
                        "non-finite value in '{name}' after update"
                    )));
                }
                grad[i] = 0.0;
            }
        }
        Ok(())
    }

    /// Content hash of all tensor values; used to assert freeze invariants.
    pub fn value_hash(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for (name, tensor) in &self.tensors {
            hasher.update(name.as_bytes());
            for &x in &tensor.data {
                hasher.update(x.to_le_bytes());
            }
        }
        hasher.finalize().into()
    }

    pub(crate) fn iter_tensors(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub(crate) fn opt_state(&self, name: &str) -> (&[f64], &[f64]) {
        let slot = &self.opt[name];
        (&slot.m, &slot.v)
    }

    pub(crate) fn restore(
        &mut self,
        name: &str,
        tensor: Tensor,
        m: Vec<f64>,
        v: Vec<f64>,
    ) {
        let n = tensor.len();
        self.grads.insert(name.to_string(), vec![0.0; n]);
        self.opt.insert(name.to_string(), AdamSlot { m, v });
        self.tensors.insert(name.to_string(), tensor);
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut store = ParameterStore::new();
        store.add_zeros("w", &[1]);
        store.accumulate_grad("w", 0, &[1.0]);
        store
            .adam_update(0.001, (ADAM_BETA1, ADAM_BETA2), ADAM_EPS)
            .unwrap();
        // Bias-corrected first step: m_hat = 1, v_hat = 1, so delta ≈ -lr.
        let w = store.get("w").data[0];
        assert!((w + 0.001).abs() < 1e-9, "w = {w}");
        assert!(!store.has_nonzero_grad());
    }

    #[test]
    fn zero_grad_leaves_param_unchanged() {
        let mut store = ParameterStore::new();
        store.add_zeros("w", &[2]);
        store.get_mut("w").data[0] = 0.5;
        store
            .adam_update(0.001, (ADAM_BETA1, ADAM_BETA2), ADAM_EPS)
            .unwrap();
        assert_eq!(store.get("w").data[0], 0.5);
        assert_eq!(store.step_count(), 1);
    }

    #[test]
    fn bad_lr_rejected() {
        let mut store = ParameterStore::new();
        store.add_zeros("w", &[1]);
        assert!(store.adam_update(0.0, (0.9, 0.999), 1e-8).is_err());
    }

    #[test]
    fn uniform_init_within_bound() {
        let mut rng = Rng::seed_from_u64(1);
        let mut store = ParameterStore::new();
        store.add_uniform("w", &[3, 16], &mut rng);
        let bound = 1.0 / 4.0;
        assert!(store.get("w").data.iter().all(|x| x.abs() <= bound));
    }

    #[test]
    fn value_hash_tracks_changes() {
        let mut rng = Rng::seed_from_u64(2);
        let mut store = ParameterStore::new();
        store.add_uniform("w", &[4], &mut rng);
        let h1 = store.value_hash();
        assert_eq!(h1, store.value_hash());
        store.get_mut("w").data[0] += 1e-12;
        assert_ne!(h1, store.value_hash());
    }
}
