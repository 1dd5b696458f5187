use super::{DiffError, Gradients, Scalar, Tape, Tensor, Var};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<S> {
    names: Vec<String>,
    values: Vec<Tensor<S>>,
}

/// Tape variables for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wrap variables already on a tape, in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor<S>> {
        self.values.iter_mut()
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Bind every parameter as a trainable leaf.
    pub fn bind(&self, tape: &Tape<S>) -> Result<Bound, DiffError> {
        let vars = self.values.iter().map(|v| tape.leaf(v.clone())).collect::<Result<_, _>>()?;
        Ok(Bound { vars })
    }

    /// Bind every parameter as a constant (frozen).
    pub fn bind_frozen(&self, tape: &Tape<S>) -> Bound {
        Bound { vars: self.values.iter().map(|v| tape.constant(v.clone())).collect() }
    }

    /// Pull the gradients of a bound store out of a gradient map, in store order.
    pub fn collect_grads(&self, bound: &Bound, grads: &mut Gradients<S>) -> Vec<Tensor<S>> {
        bound
            .vars
            .iter()
            .zip(&self.values)
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros_like(p)))
            .collect()
    }

    /// Same parameters converted to another scalar width.
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore { names: self.names.clone(), values: self.values.iter().map(Tensor::cast).collect() }
    }
}
