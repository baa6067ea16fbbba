use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::init::init_he_normal;
use crate::ops::Padding;
use crate::rng::RngState;
use crate::tensor::{Element, Tensor};

/// Index of a tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameters in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: String, tensor: Tensor<T>) -> Result<ParamId> {
        if self.names.contains(&name) {
            return Err(Error::invalid(
                "param_store",
                format!("duplicate parameter `{name}`"),
            ));
        }
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Total number of scalar parameters.
    pub fn element_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Puts every parameter on the tape as a gradient-tracking leaf.
    pub fn bind(&self, graph: &mut Graph<T>) -> Bound {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|t| graph.param(t.clone()))
                .collect(),
        }
    }
}

/// Parameters of one forward pass, as tape variables.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Uses graph nodes already holding the parameters, in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Moves the parameter gradients out of `grads`, in store order.
    pub fn collect<T: Element>(&self, grads: &mut Gradients<T>) -> Vec<Tensor<T>> {
        self.vars
            .iter()
            .map(|&v| {
                grads
                    .take(v)
                    .expect("backward fills every parameter gradient")
            })
            .collect()
    }
}

/// Registers parameters under a dotted name prefix.
pub struct ParamBuilder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut RngState,
    prefix: String,
}

impl<'a, T: Element> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut RngState) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn scope(&mut self, name: &str) -> ParamBuilder<'_, T> {
        let prefix = self.path(name);
        ParamBuilder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    /// He-normal `k×k×in_c×out_c` kernel and zero bias.
    pub fn conv(&mut self, name: &str, kernel: usize, in_c: usize, out_c: usize) -> Result<Conv2d> {
        let path = self.path(name);
        let w = init_he_normal(&[kernel, kernel, in_c, out_c], self.rng)?;
        let b = Tensor::zeros(vec![out_c])?;
        let weight = self.store.insert(format!("{path}.weight"), w)?;
        let bias = self.store.insert(format!("{path}.bias"), b)?;
        Ok(Conv2d {
            weight,
            bias,
            kernel,
            in_c,
            out_c,
        })
    }
}

/// Stride-1, same-padded convolution layer.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub in_c: usize,
    pub out_c: usize,
}

impl Conv2d {
    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.conv2d(x, p.var(self.weight), p.var(self.bias), 1, Padding::Same)
    }

    pub fn param_count(&self) -> usize {
        conv_params(self.kernel, self.in_c, self.out_c)
    }
}

/// Weights plus biases of a `k×k` convolution.
pub const fn conv_params(kernel: usize, in_c: usize, out_c: usize) -> usize {
    kernel * kernel * in_c * out_c + out_c
}
