//! Named parameter storage and a builder that either initializes fresh
//! parameters or reads existing ones, so one module definition serves the
//! trainable student, the frozen teacher and manifest verification.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use candle_core::{Device, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal(0, std) resampled outside two standard deviations.
    TruncNormal(f64),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Ordered set of trainable variables.
#[derive(Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore").field("names", &self.names).finish()
    }
}

impl ParamStore {
    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<Var> {
        if self.index.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter {name}")));
        }
        let var = Var::from_tensor(&tensor)?;
        self.index.insert(name.to_string(), self.vars.len());
        self.names.push(name.to_string());
        self.vars.push(var.clone());
        Ok(var)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.index.get(name).map(|&i| &self.vars[i])
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.names.iter().map(String::as_str).zip(self.vars.iter())
    }

    /// Plain (non-variable) copies of every parameter.
    pub fn snapshot(&self) -> Result<TensorMap> {
        let mut map = TensorMap::default();
        for (name, var) in self.iter() {
            map.insert(name, var.as_tensor().detach().copy()?);
        }
        Ok(map)
    }

    /// A fresh store holding deep copies, independent of this one.
    pub fn deep_clone(&self) -> Result<ParamStore> {
        let mut out = ParamStore::default();
        for (name, var) in self.iter() {
            out.insert(name, var.as_tensor().detach().copy()?)?;
        }
        Ok(out)
    }

    pub fn values(&self, name: &str) -> Result<Vec<f64>> {
        let var = self
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))?;
        Ok(var.as_tensor().flatten_all()?.to_vec1::<f64>()?)
    }

    pub fn set_values(&self, name: &str, values: &[f64]) -> Result<()> {
        let var = self
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))?;
        let shape = var.as_tensor().dims().to_vec();
        var.set(&Tensor::from_slice(values, shape, &Device::Cpu)?)?;
        Ok(())
    }

    /// Concatenation of all parameter values in store order.
    pub fn flat(&self) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for name in &self.names {
            out.extend(self.values(name)?);
        }
        Ok(out)
    }

    /// Order-sensitive FNV-1a hash of every parameter's bit pattern.
    pub fn checksum(&self) -> Result<u64> {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.flat()? {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        Ok(h)
    }
}

/// Name → tensor lookup for parameters that are read, not trained.
#[derive(Debug, Clone, Default)]
pub struct TensorMap {
    names: Vec<String>,
    tensors: HashMap<String, Tensor>,
}

impl TensorMap {
    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        if self.tensors.insert(name.to_string(), tensor).is_none() {
            self.names.push(name.to_string());
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| (n.as_str(), &self.tensors[n]))
    }

    /// Sub-map of entries whose name starts with `prefix`.
    pub fn filter_prefix(&self, prefix: &str) -> TensorMap {
        let mut out = TensorMap::default();
        for (n, t) in self.iter().filter(|(n, _)| n.starts_with(prefix)) {
            out.insert(n, t.clone());
        }
        out
    }
}

enum Backend {
    Init { store: ParamStore, rng: ChaCha8Rng },
    Store(ParamStore),
    Map(TensorMap),
    Record(Vec<ParamSpec>),
}

/// Hands out parameters by dotted name.
#[derive(Clone)]
pub struct Builder {
    prefix: String,
    backend: Rc<RefCell<Backend>>,
}

impl Builder {
    fn with(backend: Backend) -> Self {
        Self {
            prefix: String::new(),
            backend: Rc::new(RefCell::new(backend)),
        }
    }

    /// Creates fresh variables, drawing initial values from `rng`.
    pub fn init(rng: ChaCha8Rng) -> Self {
        Self::with(Backend::Init {
            store: ParamStore::default(),
            rng,
        })
    }

    /// Reads existing trainable variables.
    pub fn from_store(store: &ParamStore) -> Self {
        Self::with(Backend::Store(store.clone()))
    }

    /// Reads plain tensors (no gradient tracking).
    pub fn from_map(map: &TensorMap) -> Self {
        Self::with(Backend::Map(map.clone()))
    }

    /// Records requested names and shapes, returning zero tensors.
    pub fn record() -> Self {
        Self::with(Backend::Record(Vec::new()))
    }

    pub fn pp(&self, name: impl std::fmt::Display) -> Self {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Self {
            prefix,
            backend: self.backend.clone(),
        }
    }

    pub fn get(&self, shape: &[usize], name: &str, init: Init) -> Result<Tensor> {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        let mut backend = self.backend.borrow_mut();
        let tensor = match &mut *backend {
            Backend::Init { store, rng } => {
                let t = sample_init(shape, init, rng)?;
                store.insert(&full, t)?.as_tensor().clone()
            }
            Backend::Store(store) => store
                .get(&full)
                .ok_or_else(|| Error::invalid(format!("missing parameter {full}")))?
                .as_tensor()
                .clone(),
            Backend::Map(map) => map
                .get(&full)
                .ok_or_else(|| Error::invalid(format!("missing parameter {full}")))?
                .clone(),
            Backend::Record(specs) => {
                specs.push(ParamSpec {
                    name: full.clone(),
                    shape: shape.to_vec(),
                    init,
                });
                Tensor::zeros(shape, candle_core::DType::F64, &Device::Cpu)?
            }
        };
        if tensor.dims() != shape {
            return Err(Error::ShapeMismatch {
                expected: format!("{full} {shape:?}"),
                actual: format!("{:?}", tensor.dims()),
            });
        }
        Ok(tensor)
    }

    /// The initialized store, when this builder was created with [`Builder::init`].
    pub fn into_store(self) -> Option<ParamStore> {
        match &*self.backend.borrow() {
            Backend::Init { store, .. } => Some(store.clone()),
            _ => None,
        }
    }

    pub fn into_specs(self) -> Option<Vec<ParamSpec>> {
        match &*self.backend.borrow() {
            Backend::Record(specs) => Some(specs.clone()),
            _ => None,
        }
    }
}

fn sample_init(shape: &[usize], init: Init, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let values: Vec<f64> = match init {
        Init::Zeros => vec![0.0; n],
        Init::Ones => vec![1.0; n],
        Init::TruncNormal(std) => (0..n)
            .map(|_| loop {
                let z: f64 = rng.sample(StandardNormal);
                if z.abs() <= 2.0 {
                    break z * std;
                }
            })
            .collect(),
    };
    Ok(Tensor::from_vec(values, shape, &Device::Cpu)?)
}
