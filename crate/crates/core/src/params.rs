//! Named learned tensors with gradient slots and Adam moments.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub moment1: Tensor,
    pub moment2: Tensor,
}

impl Parameter {
    fn new(name: String, value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Self {
            name,
            value,
            grad: Tensor::zeros(&shape),
            moment1: Tensor::zeros(&shape),
            moment2: Tensor::zeros(&shape),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub l2_weight: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            l2_weight: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    params: Vec<Parameter>,
    index: BTreeMap<String, ParamId>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.params.push(Parameter::new(name.to_string(), value));
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Glorot-uniform matrix in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn insert_glorot<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        self.insert(name, Tensor::matrix(rows, cols, data)?)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.index.get(name).map(|id| &self.params[id.0])
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &Tensor) {
        self.params[id.0].grad.add_assign(grad);
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Parameter with the largest L2 norm, for divergence diagnostics.
    pub fn largest_norm(&self) -> Option<(String, f64)> {
        self.params
            .iter()
            .map(|p| {
                let n = p.value.norm();
                (p.name.clone(), if n.is_nan() { f64::INFINITY } else { n })
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// One Adam update with bias correction. The L2 term `l2_weight * θ` is
    /// added to the gradient before the moments. Gradients are zeroed after.
    pub fn adam_step(&mut self, cfg: &AdamConfig, step: u64) {
        assert!(step >= 1, "adam step index starts at 1");
        let bc1 = 1.0 - cfg.beta1.powf(step as f64);
        let bc2 = 1.0 - cfg.beta2.powf(step as f64);
        for p in &mut self.params {
            let value = p.value.data_mut();
            let grad = p.grad.data_mut();
            let m1 = p.moment1.data_mut();
            let m2 = p.moment2.data_mut();
            for i in 0..value.len() {
                let g = grad[i] + cfg.l2_weight * value[i];
                m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * g;
                m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * g * g;
                let mhat = m1[i] / bc1;
                let vhat = m2[i] / bc2;
                value[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
                grad[i] = 0.0;
            }
        }
    }
}
