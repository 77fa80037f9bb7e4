use ndarray::Array2;

use super::adam::AdamState;
use super::TensorError;

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// A trainable grid together with its gradient buffer and optimizer state.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
    pub adam: AdamState,
}

/// Owns every trainable parameter of a model. Graphs borrow values from it
/// and hand gradients back after the backward sweep.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let dim = value.dim();
        self.params.push(Param {
            name: name.into(),
            grad: Array2::zeros(dim),
            adam: AdamState::new(dim),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of scalar weights.
    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// One Adam update of every parameter. Nothing is modified when any
    /// gradient is non-finite.
    pub fn adam_step(&mut self, lr: f64) -> Result<(), TensorError> {
        if let Some(p) = self
            .params
            .iter()
            .find(|p| p.grad.iter().any(|g| !g.is_finite()))
        {
            return Err(TensorError::NonFiniteGradient {
                name: p.name.clone(),
            });
        }
        for p in &mut self.params {
            p.adam.step(&mut p.value, &p.grad, lr, &p.name)?;
        }
        Ok(())
    }
}
