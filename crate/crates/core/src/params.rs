//! Named parameter storage with paired gradients and optimizer state.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to one entry of a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a fresh parameter is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in ±√(6/(fan_in+fan_out)).
    Glorot { fan_in: usize, fan_out: usize },
    /// Uniform in ±limit.
    Uniform(f64),
    Constant(f64),
}

/// Ordered collection of model weights. Insertion order is the iteration
/// order everywhere (optimizer, checkpoints, gradient checks).
#[derive(Debug, Clone)]
pub struct ParamStore<F> {
    pub(crate) names: Vec<String>,
    pub(crate) values: Vec<Tensor<F>>,
    pub(crate) grads: Vec<Tensor<F>>,
    pub(crate) rms: Vec<Tensor<F>>,
    pub(crate) trainable: Vec<bool>,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            rms: Vec::new(),
            trainable: Vec::new(),
        }
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        let shape = value.shape().to_vec();
        self.names.push(name);
        self.values.push(value);
        self.grads.push(Tensor::zeros(&shape));
        self.rms.push(Tensor::zeros(&shape));
        self.trainable.push(true);
        ParamId(self.names.len() - 1)
    }

    pub fn add_init<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: Init,
        rng: &mut R,
    ) -> ParamId {
        let len: usize = shape.iter().product();
        let data = match init {
            Init::Glorot { fan_in, fan_out } => {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..len)
                    .map(|_| F::from_f64(rng.gen_range(-limit..=limit)))
                    .collect()
            }
            Init::Uniform(limit) => (0..len)
                .map(|_| F::from_f64(rng.gen_range(-limit..=limit)))
                .collect(),
            Init::Constant(c) => vec![F::from_f64(c); len],
        };
        self.add(name, Tensor::from_vec(shape, data).expect("shape/len agree"))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<F> {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.grads[id.0]
    }

    pub fn rms(&self, id: ParamId) -> &Tensor<F> {
        &self.rms[id.0]
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    /// Frozen parameters receive no gradient and are skipped by the optimizer.
    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.trainable[id.0] = trainable;
    }

    /// Replaces a value, keeping the shape fixed.
    pub fn set_value(&mut self, id: ParamId, value: Tensor<F>) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::dim(format!(
                "parameter {}: shape {:?} != {:?}",
                self.names[id.0],
                value.shape(),
                self.values[id.0].shape()
            )));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(F::zero());
        }
    }

    pub fn num_values(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Global L2 norm over the gradients of trainable parameters.
    pub fn grad_norm(&self) -> f64 {
        self.grads
            .iter()
            .zip(&self.trainable)
            .filter(|(_, &t)| t)
            .flat_map(|(g, _)| g.data().iter())
            .map(|v| {
                let v = v.as_f64();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, s: F) {
        for g in &mut self.grads {
            g.scale(s);
        }
    }

    /// Copy of this store converted to another precision (values and
    /// trainability only; gradients and accumulators start at zero).
    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        let mut out = ParamStore::new();
        for (i, name) in self.names.iter().enumerate() {
            let id = out.add(name.clone(), self.values[i].cast());
            out.set_trainable(id, self.trainable[i]);
        }
        out
    }
}
