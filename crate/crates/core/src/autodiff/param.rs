use super::graph::{Gradients, Graph};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.dims().to_vec()).expect("value dims are valid");
        Self {
            name: name.into(),
            value,
            grad,
        }
    }
}

/// Ordered parameter collection. Order is creation order and fixes the
/// reduction and checkpoint order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Param::new(name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, dims: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(dims.to_vec()).expect("non-empty parameter dims"))
    }

    /// Normal initialization with standard deviation `std`.
    pub fn add_normal(&mut self, name: impl Into<String>, dims: &[usize], std: f64, rng: &mut Rng) -> ParamId {
        let mut t = Tensor::zeros(dims.to_vec()).expect("non-empty parameter dims");
        for v in t.data_mut() {
            *v = (rng.normal() * std) as f32;
        }
        self.add(name, t)
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

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Overwrite every parameter gradient with `buf`.
    pub fn set_grads(&mut self, buf: &GradBuffer) -> Result<()> {
        if buf.per_param.len() != self.params.len() {
            return Err(Error::shape(format!(
                "{} gradient buffers for {} parameters",
                buf.per_param.len(),
                self.params.len()
            )));
        }
        for (p, g) in self.params.iter_mut().zip(&buf.per_param) {
            for (d, &s) in p.grad.data_mut().iter_mut().zip(g) {
                *d = s as f32;
            }
        }
        Ok(())
    }
}

/// Per-parameter `f64` gradient sums, for reducing across graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    per_param: Vec<Vec<f64>>,
}

impl GradBuffer {
    pub fn zeros(store: &ParamStore) -> Self {
        Self {
            per_param: store.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    /// Gradients of every parameter node of `graph`; parameters the graph
    /// never touched stay zero.
    pub fn from_graph(store: &ParamStore, graph: &Graph, grads: &Gradients) -> Self {
        let mut buf = Self::zeros(store);
        for (id, var) in graph.param_vars() {
            if let Some(g) = grads.get(var) {
                buf.per_param[id.0].copy_from_slice(g);
            }
        }
        buf
    }

    pub fn add_assign(&mut self, other: &GradBuffer) {
        for (a, b) in self.per_param.iter_mut().zip(&other.per_param) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.per_param.iter_mut().flatten() {
            *v *= s;
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.per_param[id.0]
    }
}
