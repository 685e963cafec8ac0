use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::numerics::{Gradients, Graph, SeededRng, Tensor, Var};

/// How a parameter is initialised the first time it is declared.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    Const(f32),
    Normal(f32),
}

/// Named parameter tensors, ordered by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor<f32>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        self.tensors.get_mut(name)
    }

    pub fn insert(&mut self, name: String, t: Tensor<f32>) {
        self.tensors.insert(name, t);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<f32>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<f32>)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.numel()).sum()
    }

    /// Scalar count of parameters whose name starts with `prefix`.
    pub fn num_scalars_with_prefix(&self, prefix: &str) -> usize {
        self.tensors.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(_, t)| t.numel()).sum()
    }

    /// Splits off every parameter whose name starts with `prefix`.
    pub fn split_prefix(&self, prefix: &str) -> (ParamStore, ParamStore) {
        let (a, b): (BTreeMap<_, _>, BTreeMap<_, _>) =
            self.tensors.clone().into_iter().partition(|(k, _)| k.starts_with(prefix));
        (ParamStore { tensors: a }, ParamStore { tensors: b })
    }

    pub fn merge(&mut self, other: ParamStore) {
        self.tensors.extend(other.tensors);
    }
}

enum Source<'a> {
    Frozen(&'a ParamStore),
    Init { store: &'a mut ParamStore, seed: u64 },
}

/// One forward pass: a graph plus the parameters bound into it.
pub struct Ctx<'a> {
    pub g: Graph<f32>,
    src: Source<'a>,
    bound: HashMap<String, Var>,
    order: Vec<String>,
    track: bool,
}

impl<'a> Ctx<'a> {
    /// Forward over existing parameters; `track` makes them differentiable leaves.
    pub fn new(store: &'a ParamStore, track: bool) -> Self {
        Ctx { g: Graph::new(), src: Source::Frozen(store), bound: HashMap::new(), order: Vec::new(), track }
    }

    /// Forward that creates missing parameters, seeding each from `(seed, name)`.
    pub fn initializing(store: &'a mut ParamStore, seed: u64) -> Self {
        Ctx {
            g: Graph::new(),
            src: Source::Init { store, seed },
            bound: HashMap::new(),
            order: Vec::new(),
            track: false,
        }
    }

    pub fn tracking(&self) -> bool {
        self.track
    }

    /// Binds parameter `name`, checking (or, when initialising, creating) its shape.
    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let value = match &mut self.src {
            Source::Frozen(store) => store
                .get(name)
                .ok_or_else(|| Error::Data(format!("missing parameter `{name}`")))?
                .clone(),
            Source::Init { store, seed } => {
                if store.get(name).is_none() {
                    store.insert(name.to_string(), init_tensor(shape, init, *seed, name));
                }
                store.get(name).unwrap().clone()
            }
        };
        if value.shape() != shape {
            return Err(Error::Data(format!(
                "parameter `{name}` has shape {:?}, model expects {:?}",
                value.shape(),
                shape
            )));
        }
        let v = self.g.leaf(value, self.track);
        self.bound.insert(name.to_string(), v);
        self.order.push(name.to_string());
        Ok(v)
    }

    /// Binds every tensor of `store` as a constant; later `param` calls for
    /// those names return the constants and never receive gradients.
    pub fn bind_frozen(&mut self, store: &ParamStore) {
        for (name, t) in store.iter() {
            let v = self.g.constant(t.clone());
            self.bound.insert(name.clone(), v);
        }
    }

    /// Constant input tensor.
    pub fn input(&mut self, t: Tensor<f32>) -> Var {
        self.g.constant(t)
    }

    pub fn bound_names(&self) -> &[String] {
        &self.order
    }

    /// Gradients of the bound parameters, by name.
    pub fn param_grads(&self, grads: &mut Gradients<f32>) -> BTreeMap<String, Tensor<f32>> {
        let mut out = BTreeMap::new();
        for name in &self.order {
            let v = self.bound[name];
            if let Some(g) = grads.take(v) {
                out.insert(name.clone(), g);
            }
        }
        out
    }

    pub fn var_of(&self, name: &str) -> Option<Var> {
        self.bound.get(name).copied()
    }
}

fn init_tensor(shape: &[usize], init: Init, seed: u64, name: &str) -> Tensor<f32> {
    match init {
        Init::Zeros => Tensor::zeros(shape),
        Init::Ones => Tensor::full(shape, 1.0),
        Init::Const(c) => Tensor::full(shape, c),
        Init::Normal(std) => {
            let mut rng = SeededRng::derived(seed, name);
            Tensor::from_fn(shape, |_| (rng.normal() as f32) * std)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_name_seeded_and_order_free() {
        let mut a = ParamStore::new();
        let mut b = ParamStore::new();
        {
            let mut c = Ctx::initializing(&mut a, 9);
            c.param("x", &[3], Init::Normal(1.0)).unwrap();
            c.param("y", &[2], Init::Normal(1.0)).unwrap();
        }
        {
            let mut c = Ctx::initializing(&mut b, 9);
            c.param("y", &[2], Init::Normal(1.0)).unwrap();
            c.param("x", &[3], Init::Normal(1.0)).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut s = ParamStore::new();
        s.insert("w".into(), Tensor::zeros(&[2, 2]));
        let mut c = Ctx::new(&s, false);
        assert!(c.param("w", &[2, 3], Init::Zeros).is_err());
        assert!(c.param("missing", &[1], Init::Zeros).is_err());
    }
}
