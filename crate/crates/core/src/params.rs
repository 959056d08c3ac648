//! Named parameter storage.
//!
//! Parameter values live in a [`ParamStore`] (plain `Vec<f64>`s, `Send +
//! Sync`). Each forward pass binds them as fresh leaf tensors through
//! [`ParamStore::bind`]; the gradients collected on those leaves are read
//! back after `backward` and handed to the optimizer.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

/// Optimizer group a parameter belongs to; groups get separate learning
/// rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// ViT and ResNet weights.
    Backbone,
    /// Cutoffs, fusion scores and the classification head.
    Head,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub group: ParamGroup,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], value: Vec<f64>, group: ParamGroup) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::Invariant(format!("duplicate parameter name {name}")));
        }
        if numel(shape) != value.len() {
            return Err(Error::shape(format!(
                "parameter {name}: shape {shape:?} vs {} values",
                value.len()
            )));
        }
        let id = self.params.len();
        self.params.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            value,
            group,
            trainable: true,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.id(name).map(|id| &mut self.params[id.0])
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let p = self
            .by_name_mut(name)
            .ok_or_else(|| Error::Invariant(format!("no parameter named {name}")))?;
        p.trainable = trainable;
        Ok(())
    }

    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Leaf tensors for one forward pass. With `with_grad`, trainable
    /// parameters collect gradients; frozen ones never do.
    pub fn bind(&self, with_grad: bool) -> Bound {
        let tensors = self
            .params
            .iter()
            .map(|p| {
                let t = Tensor::new(p.value.clone(), &p.shape).expect("validated shape");
                if with_grad && p.trainable {
                    t.detach_with_grad(true)
                } else {
                    t
                }
            })
            .collect();
        Bound { tensors }
    }

    /// Replaces every value from `(name, shape, values)` triples. Names and
    /// shapes must match this store exactly.
    pub fn load_named(&mut self, named: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
        let mine: BTreeSet<&str> = self.params.iter().map(|p| p.name.as_str()).collect();
        let theirs: BTreeSet<&str> = named.iter().map(|(n, _, _)| n.as_str()).collect();
        let missing: Vec<&str> = mine.difference(&theirs).copied().collect();
        let extra: Vec<&str> = theirs.difference(&mine).copied().collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(Error::Format {
                offset: 0,
                msg: format!(
                    "tensor names differ: missing from checkpoint [{}]; unexpected in checkpoint [{}]",
                    missing.join(", "),
                    extra.join(", ")
                ),
            });
        }
        for (name, shape, values) in named {
            let idx = self.by_name[name.as_str()];
            let p = &self.params[idx];
            if &p.shape != shape || values.len() != p.value.len() {
                return Err(Error::Format {
                    offset: 0,
                    msg: format!(
                        "tensor {name}: checkpoint shape {shape:?}, model shape {:?}",
                        p.shape
                    ),
                });
            }
        }
        for (name, _, values) in named {
            let idx = self.by_name[name.as_str()];
            self.params[idx].value.clone_from(values);
        }
        Ok(())
    }
}

/// Parameter values bound as tensors for one graph.
#[derive(Debug, Clone)]
pub struct Bound {
    tensors: Vec<Tensor>,
}

impl Bound {
    pub fn from_tensors(tensors: Vec<Tensor>) -> Self {
        Self { tensors }
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    /// Accumulated gradients in store order; `None` where a parameter did
    /// not collect one.
    pub fn grads(&self) -> Vec<Option<Vec<f64>>> {
        self.tensors.iter().map(Tensor::grad).collect()
    }
}
