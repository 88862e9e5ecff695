use super::{Gradients, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a parameter inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<F> {
    pub name: String,
    pub tensor: Tensor<F>,
    /// Frozen parameters get tape gradients but never accumulate or update.
    pub trainable: bool,
}

/// Ordered, named collection of learned tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<F> {
    params: Vec<Param<F>>,
}

impl<F: Real> ParamSet<F> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param {
            name,
            tensor,
            trainable: true,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<F> {
        &mut self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.params[id.0].tensor
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<F>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<F>> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Adds every gradient recorded in `grads` into the buffers of trainable parameters.
    pub fn accumulate(&mut self, grads: &Gradients<F>) {
        for (id, g) in grads.param_grads() {
            let p = &mut self.params[id.0];
            if p.trainable {
                p.tensor.accumulate_grad(g);
            }
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Global 2-norm over the gradients of every parameter, accumulated in f64.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.tensor.grad())
            .flat_map(|g| g.iter())
            .map(|g| {
                let g = g.as_f64();
                g * g
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Finds the first parameter whose values or gradient are not finite.
    pub fn first_non_finite(&self) -> Option<String> {
        for p in &self.params {
            if !p.tensor.is_finite() {
                return Some(p.name.clone());
            }
            if let Some(g) = p.tensor.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Some(format!("{} (gradient)", p.name));
                }
            }
        }
        None
    }

    pub fn cast<G: Real>(&self) -> ParamSet<G> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                    trainable: p.trainable,
                })
                .collect(),
        }
    }

    /// Replaces a parameter's values, checking the shape against the existing tensor.
    pub fn load_values(&mut self, name: &str, tensor: Tensor<F>) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::Integrity(format!("unknown tensor `{name}`")))?;
        let existing = &mut self.params[id.0].tensor;
        if existing.shape() != tensor.shape() {
            return Err(Error::TensorShape {
                name: name.to_string(),
                expected: existing.shape().to_vec(),
                found: tensor.shape().to_vec(),
            });
        }
        *existing = tensor;
        Ok(())
    }
}
