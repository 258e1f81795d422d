use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A trainable matrix and its gradient accumulator.
#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub name: String,
    pub data: Array2<f64>,
    pub grad: Array2<f64>,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, data: Array2<f64>) -> Self {
        let grad = Array2::zeros(data.raw_dim());
        ParamTensor {
            name: name.into(),
            data,
            grad,
        }
    }
}

/// Owns every trainable tensor of a model. Tensor order is creation order and
/// is the order used by the optimizer and by checkpoints.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    tensors: Vec<ParamTensor>,
}

/// Per-parameter gradients produced by one backward pass; `None` where the
/// loss does not depend on the parameter.
#[derive(Debug, Clone)]
pub struct Gradients(pub Vec<Option<Array2<f64>>>);

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.0.get(id.0).and_then(Option::as_ref)
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, data: Array2<f64>) -> ParamId {
        self.tensors.push(ParamTensor::new(name, data));
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.tensors[id.0]
    }

    pub fn data(&self, id: ParamId) -> &Array2<f64> {
        &self.tensors[id.0].data
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.tensors.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Adds a backward pass's gradients into the accumulators.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        if grads.0.len() > self.tensors.len() {
            return Err(Error::Shape("gradient list longer than parameter list".into()));
        }
        for (t, g) in self.tensors.iter_mut().zip(&grads.0) {
            if let Some(g) = g {
                if g.dim() != t.data.dim() {
                    return Err(Error::Shape(format!("gradient for {} has shape {:?}", t.name, g.dim())));
                }
                t.grad += g;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad.fill(0.0);
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        for t in &self.tensors {
            if t.data.iter().any(|x| !x.is_finite()) {
                return Err(Error::numeric(format!("parameter {}", t.name)));
            }
        }
        Ok(())
    }

    /// Copies of the current parameter values, in store order.
    pub fn snapshot(&self) -> Vec<Array2<f64>> {
        self.tensors.iter().map(|t| t.data.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Array2<f64>]) -> Result<()> {
        if snapshot.len() != self.tensors.len() {
            return Err(Error::Shape("snapshot does not match the parameter store".into()));
        }
        for (t, s) in self.tensors.iter_mut().zip(snapshot) {
            if t.data.dim() != s.dim() {
                return Err(Error::Shape(format!("snapshot shape mismatch for {}", t.name)));
            }
            t.data.assign(s);
        }
        Ok(())
    }
}
