//! Dense tensors, reverse-mode differentiation, Adam and parameter
//! checkpoints.

mod checkpoint;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use optim::{AdamConfig, AdamState, LrSchedule};
pub use tape::{
    conv_out_len, cross_entropy_value, l1_weights, softmax_in_place, Conv2dSpec, Gradients, Tape,
    Var,
};
pub use tensor::Tensor;

use indexmap::IndexMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("{op}: dimension mismatch: {msg}")]
    Shape { op: &'static str, msg: String },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("checkpoint io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

impl NumericsError {
    pub(crate) fn shape(op: &'static str, msg: String) -> Self {
        Self::Shape { op, msg }
    }
}

/// Named trainable tensors in a fixed insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: IndexMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|k| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    /// `self += scale * other`, matching by name.
    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) -> Result<(), NumericsError> {
        for (name, t) in &mut self.params {
            let o = other.get(name).ok_or_else(|| {
                NumericsError::shape("add_scaled", format!("missing parameter {name}"))
            })?;
            if o.shape() != t.shape() {
                return Err(NumericsError::shape(
                    "add_scaled",
                    format!("{name}: {:?} vs {:?}", t.shape(), o.shape()),
                ));
            }
            for (a, b) in t.data_mut().iter_mut().zip(o.data()) {
                *a += scale * b;
            }
        }
        Ok(())
    }
}

/// Tape handles of a [`ParamSet`] registered as leaves.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    vars: IndexMap<String, Var>,
}

impl Bindings {
    /// Registers every parameter on `tape`, trainable or constant.
    pub fn bind(params: &ParamSet, tape: &mut Tape, trainable: bool) -> Self {
        let vars = params
            .iter()
            .map(|(name, t)| {
                let var = if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.to_string(), var)
            })
            .collect();
        Self { vars }
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn var(&self, name: &str) -> Result<Var, NumericsError> {
        self.get(name)
            .ok_or_else(|| NumericsError::shape("bindings", format!("missing parameter {name}")))
    }

    /// Gradients of every bound parameter, in binding order.
    pub fn gradients(&self, grads: &mut Gradients, tape: &Tape) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, &var) in &self.vars {
            let g = grads
                .take(var)
                .unwrap_or_else(|| Tensor::zeros(tape.value(var).shape()));
            out.insert(name.clone(), g);
        }
        out
    }
}
