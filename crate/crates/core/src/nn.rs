//! Named parameter storage and the small layers shared by every model part.

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numeric::{linear, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named model parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Arc<Tensor>>,
    lookup: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(Error::Internal(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.names.len());
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(Arc::new(value));
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v.as_ref()))
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(|v| v.numel()).sum()
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::dim(
                "param_set",
                format!(
                    "`{}` has shape {:?}, got {:?}",
                    self.names[id.0],
                    self.values[id.0].shape(),
                    value.shape()
                ),
            ));
        }
        self.values[id.0] = Arc::new(value);
        Ok(())
    }

    /// Mutable access to the raw values (copy-on-write if a tape still holds them).
    pub fn data_mut(&mut self, id: ParamId) -> &mut [f64] {
        Arc::make_mut(&mut self.values[id.0]).data_mut()
    }

    /// Record every parameter as a tape leaf; those selected by `trainable`
    /// participate in differentiation.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: impl Fn(ParamId) -> bool) -> Binding<'t> {
        let vars = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| tape.leaf(Arc::clone(v), trainable(ParamId(i))))
            .collect();
        Binding { vars }
    }

    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Binding<'t> {
        self.bind(tape, |_| false)
    }
}

/// Parameters recorded on one tape.
pub struct Binding<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Binding<'t> {
    /// Binding over caller-supplied vars, in [`ParamStore`] order.
    pub fn from_vars(vars: Vec<Var<'t>>) -> Self {
        Binding { vars }
    }

    pub fn get(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }
}

/// Finite-difference check of `f` with respect to `extra` inputs and every
/// parameter in `store`. `max_coords` samples at most that many coordinates
/// per tensor.
pub fn gradcheck_params<F>(
    store: &ParamStore,
    extra: &[Tensor],
    f: F,
    eps: f64,
    max_coords: Option<usize>,
) -> Result<f64>
where
    F: for<'t> Fn(&Binding<'t>, &[Var<'t>]) -> Result<Var<'t>>,
{
    let n = extra.len();
    let mut inputs = extra.to_vec();
    inputs.extend(store.values.iter().map(|v| (**v).clone()));
    crate::numeric::finite_difference_check_sampled(
        |_, v| f(&Binding::from_vars(v[n..].to_vec()), &v[..n]),
        &inputs,
        eps,
        max_coords,
    )
}

/// Initialization schemes. Each parameter draws from its own stream keyed
/// by (seed, name), so adding a parameter never shifts another's values.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Glorot uniform.
    Glorot { fan_in: usize, fan_out: usize },
    Const(f64),
}

pub fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Registers parameters under a dotted name prefix.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    seed: u64,
    prefix: String,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        ParamBuilder {
            store,
            seed,
            prefix: String::new(),
        }
    }

    pub fn sub(&mut self, name: &str) -> ParamBuilder<'_> {
        let prefix = self.full_name(name);
        ParamBuilder {
            store: self.store,
            seed: self.seed,
            prefix,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn tensor(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        let full = self.full_name(name);
        let value = match init {
            Init::Glorot { fan_in, fan_out } => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Tensor::uniform(shape, bound, &mut param_rng(self.seed, &full))
            }
            Init::Const(c) => Tensor::full(shape, c),
        };
        self.store.insert(full, value)
    }

    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<Linear> {
        let mut sub = self.sub(name);
        let weight = sub.tensor("weight", &[fan_in, fan_out], Init::Glorot { fan_in, fan_out })?;
        let bias = sub.tensor("bias", &[fan_out], Init::Const(0.0))?;
        Ok(Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        })
    }

    pub fn layer_norm(&mut self, name: &str, width: usize) -> Result<LayerNorm> {
        let mut sub = self.sub(name);
        let gain = sub.tensor("gain", &[width], Init::Const(1.0))?;
        let bias = sub.tensor("bias", &[width], Init::Const(0.0))?;
        Ok(LayerNorm { gain, bias, width })
    }
}

/// Affine map over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn forward<'t>(&self, p: &Binding<'t>, x: Var<'t>) -> Result<Var<'t>> {
        linear(x, p.get(self.weight), p.get(self.bias))
    }

    pub fn numel(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }
}

/// Layer normalization over the last axis with learned gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub width: usize,
}

impl LayerNorm {
    pub fn forward<'t>(&self, p: &Binding<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.layer_norm()?.mul(p.get(self.gain))?.add(p.get(self.bias))
    }
}
