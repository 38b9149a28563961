use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Named model parameters, iterated in lexicographic name order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<S> {
    tensors: BTreeMap<String, Tensor<S>>,
}

/// Gradients keyed like the [`ParamSet`] they were computed against.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct GradSet<S> {
    tensors: BTreeMap<String, Tensor<S>>,
}

macro_rules! tensor_map_common {
    ($ty:ident) => {
        impl<S: Scalar> $ty<S> {
            pub fn new() -> Self {
                Self {
                    tensors: BTreeMap::new(),
                }
            }

            /// Inserts a tensor; names must be unique.
            pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<S>) -> Result<()> {
                let name = name.into();
                if self.tensors.contains_key(&name) {
                    return Err(Error::shape(name, "duplicate parameter name"));
                }
                self.tensors.insert(name, tensor);
                Ok(())
            }

            pub fn with(mut self, name: impl Into<String>, tensor: Tensor<S>) -> Result<Self> {
                self.insert(name, tensor)?;
                Ok(self)
            }

            pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
                self.tensors.get(name)
            }

            pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
                self.tensors.iter().map(|(k, v)| (k.as_str(), v))
            }

            pub fn names(&self) -> impl Iterator<Item = &str> {
                self.tensors.keys().map(String::as_str)
            }

            pub fn len(&self) -> usize {
                self.tensors.len()
            }

            pub fn is_empty(&self) -> bool {
                self.tensors.is_empty()
            }

            /// Total number of scalar entries.
            pub fn num_values(&self) -> usize {
                self.tensors.values().map(Tensor::len).sum()
            }

            pub(crate) fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
                self.tensors.get_mut(name)
            }

            /// Names and shapes match `other` exactly.
            pub fn check_compatible<O>(&self, other: &O) -> Result<()>
            where
                O: ShapeView,
            {
                let mine: Vec<(&str, &[usize])> =
                    self.iter().map(|(n, t)| (n, t.shape())).collect();
                let theirs = other.shapes();
                for (name, shape) in &mine {
                    match theirs.iter().find(|(n, _)| n == name) {
                        None => {
                            return Err(Error::shape(*name, "parameter missing from counterpart"))
                        }
                        Some((_, s)) if s != shape => {
                            return Err(Error::shape(*name, format!("shape {shape:?} vs {s:?}")))
                        }
                        _ => {}
                    }
                }
                if let Some((name, _)) = theirs.iter().find(|(n, _)| !self.tensors.contains_key(*n))
                {
                    return Err(Error::shape(*name, "unexpected parameter in counterpart"));
                }
                Ok(())
            }
        }

        impl<S: Scalar> ShapeView for $ty<S> {
            fn shapes(&self) -> Vec<(&str, &[usize])> {
                self.iter().map(|(n, t)| (n, t.shape())).collect()
            }
        }
    };
}

/// Anything exposing `(name, shape)` pairs for compatibility checks.
pub trait ShapeView {
    fn shapes(&self) -> Vec<(&str, &[usize])>;
}

tensor_map_common!(ParamSet);
tensor_map_common!(GradSet);

impl<S: Scalar> GradSet<S> {
    /// All-zero gradients shaped like `params`.
    pub fn zeros_like(params: &ParamSet<S>) -> Self {
        Self {
            tensors: params
                .iter()
                .map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    pub fn scaled(&self, factor: S) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| (n.clone(), t.map(|v| v * factor)))
                .collect(),
        }
    }

    /// Element-wise `self + other`.
    pub fn add(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.accumulate(other)?;
        Ok(out)
    }

    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        self.check_compatible(other)?;
        for (name, t) in self.tensors.iter_mut() {
            t.add_assign(&other.tensors[name]);
        }
        Ok(())
    }

    /// Euclidean norm over every entry.
    pub fn norm(&self) -> S {
        self.tensors
            .values()
            .map(Tensor::sum_squares)
            .sum::<S>()
            .sqrt()
    }

    pub fn max_abs(&self) -> S {
        self.tensors
            .values()
            .flat_map(|t| t.data().iter())
            .fold(S::zero(), |m, v| m.max(v.abs()))
    }
}

/// One gradient-descent step `p - lr * g`; returns a new set.
pub fn sgd_step<S: Scalar>(params: &ParamSet<S>, grads: &GradSet<S>, lr: S) -> Result<ParamSet<S>> {
    params.check_compatible(grads)?;
    let tensors = params
        .tensors
        .iter()
        .map(|(name, p)| {
            let g = &grads.tensors[name];
            (name.clone(), p.zip_map(g, |pv, gv| pv - lr * gv))
        })
        .collect();
    Ok(ParamSet { tensors })
}
