//! Named parameter storage and the canonical naming scheme.
//!
//! ```text
//! embeddings.token.weight        [vocab, d]
//! embeddings.position.weight     [max_seq_len, d]
//! embeddings.ln.{gamma,beta}     [d]
//! layer.{i}.attn.{query,key,value,output}.weight   [d, d]      (1 <= i <= N)
//! layer.{i}.attn.{query,key,value,output}.bias     [d]
//! layer.{i}.attn.ln.{gamma,beta}                   [d]
//! layer.{i}.ffn.intermediate.{weight,bias}         [d, ffn], [ffn]
//! layer.{i}.ffn.output.{weight,bias}               [ffn, d], [d]
//! layer.{i}.ffn.ln.{gamma,beta}                    [d]
//! pooler.{weight,bias}           [d, d], [d]
//! head.{weight,bias}             [d, k], [k]    (k = 1 for regression)
//! ```

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const EMBEDDING_PARAMS: [&str; 4] =
    ["embeddings.token.weight", "embeddings.position.weight", "embeddings.ln.gamma", "embeddings.ln.beta"];

/// Per-layer components, appended to `layer.{i}.`.
pub const LAYER_COMPONENTS: [&str; 16] = [
    "attn.query.weight",
    "attn.query.bias",
    "attn.key.weight",
    "attn.key.bias",
    "attn.value.weight",
    "attn.value.bias",
    "attn.output.weight",
    "attn.output.bias",
    "attn.ln.gamma",
    "attn.ln.beta",
    "ffn.intermediate.weight",
    "ffn.intermediate.bias",
    "ffn.output.weight",
    "ffn.output.bias",
    "ffn.ln.gamma",
    "ffn.ln.beta",
];

pub const POOLER_PARAMS: [&str; 2] = ["pooler.weight", "pooler.bias"];
pub const HEAD_PARAMS: [&str; 2] = ["head.weight", "head.bias"];

pub fn layer_param(layer: usize, component: &str) -> String {
    format!("layer.{layer}.{component}")
}

/// Which part of the network a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ParamGroup {
    Embeddings,
    Layer(usize),
    Pooler,
    Head,
}

impl ParamGroup {
    pub fn of(name: &str) -> Option<ParamGroup> {
        if EMBEDDING_PARAMS.contains(&name) {
            return Some(ParamGroup::Embeddings);
        }
        if POOLER_PARAMS.contains(&name) {
            return Some(ParamGroup::Pooler);
        }
        if HEAD_PARAMS.contains(&name) {
            return Some(ParamGroup::Head);
        }
        let rest = name.strip_prefix("layer.")?;
        let (idx, component) = rest.split_once('.')?;
        let i: usize = idx.parse().ok()?;
        if i == 0 || idx.starts_with('0') || !LAYER_COMPONENTS.contains(&component) {
            return None;
        }
        Some(ParamGroup::Layer(i))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub trainable: bool,
}

/// Name → tensor map with per-tensor trainable flags.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn insert(&mut self, name: &str, value: Tensor, trainable: bool) {
        self.entries.insert(name.to_string(), Param { value, trainable });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|p| &p.value)
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Param> {
        self.entries.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.get(name).is_some_and(|p| p.trainable)
    }

    /// Swaps the tensor under `name`, keeping its trainable flag and shape.
    pub fn replace_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self.entries.get_mut(name).ok_or_else(|| Error::MissingParam(name.to_string()))?;
        if p.value.shape() != value.shape() {
            return Err(Error::InvalidShape {
                shape: value.shape().to_vec(),
                reason: format!("`{name}` has shape {:?}", p.value.shape()),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn remove(&mut self, name: &str) -> Option<Param> {
        self.entries.remove(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().filter(|(_, p)| p.trainable).map(|(k, _)| k.as_str())
    }

    /// Highest layer index present.
    pub fn layer_count(&self) -> usize {
        self.names()
            .filter_map(|n| match ParamGroup::of(n) {
                Some(ParamGroup::Layer(i)) => Some(i),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// Keeps only the parameters whose group satisfies `keep`.
    pub fn filtered(&self, mut keep: impl FnMut(ParamGroup) -> bool) -> ParamStore {
        let entries = self
            .entries
            .iter()
            .filter(|(k, _)| ParamGroup::of(k).is_some_and(&mut keep))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        ParamStore { entries }
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        self.entries.values_mut().for_each(|p| p.trainable = trainable);
    }

    /// Freezes layers `1..=f` (and the embeddings when `f >= 1`); everything
    /// above, including pooler and head, becomes trainable.
    pub fn set_frozen_depth(&mut self, f: usize) -> Result<()> {
        let n = self.layer_count();
        if f > n {
            return Err(Error::config(format!("frozen depth {f} exceeds {n} layers")));
        }
        for (name, p) in self.entries.iter_mut() {
            p.trainable = match ParamGroup::of(name) {
                Some(ParamGroup::Embeddings) => f == 0,
                Some(ParamGroup::Layer(i)) => i > f,
                _ => true,
            };
        }
        Ok(())
    }

    /// Recovers the frozen depth from the flags, checking that they form a
    /// contiguous frozen prefix.
    pub fn frozen_depth(&self) -> Result<usize> {
        let n = self.layer_count();
        let layer_frozen = |i: usize| {
            let name = layer_param(i, LAYER_COMPONENTS[0]);
            self.entries.get(&name).map(|p| !p.trainable)
        };
        let f = (1..=n).take_while(|&i| layer_frozen(i) == Some(true)).count();
        for (name, p) in &self.entries {
            let expected_trainable = match ParamGroup::of(name) {
                Some(ParamGroup::Embeddings) => f == 0,
                Some(ParamGroup::Layer(i)) => i > f,
                Some(_) => true,
                None => return Err(Error::input(format!("non-canonical parameter name `{name}`"))),
            };
            if p.trainable != expected_trainable {
                return Err(Error::input(format!("trainable flags do not form a frozen prefix (at `{name}`, depth {f})")));
            }
        }
        Ok(f)
    }

    /// Checks that every name is canonical with `1 <= i <= layers`.
    pub fn validate_names(&self, layers: usize) -> Result<()> {
        for name in self.names() {
            match ParamGroup::of(name) {
                Some(ParamGroup::Layer(i)) if i > layers => {
                    return Err(Error::input(format!("`{name}` beyond layer {layers}")));
                }
                Some(_) => {}
                None => return Err(Error::input(format!("non-canonical parameter name `{name}`"))),
            }
        }
        Ok(())
    }

    /// Per-tensor content hashes.
    pub fn tensor_hashes(&self) -> BTreeMap<String, String> {
        self.entries.iter().map(|(k, p)| (k.clone(), p.value.content_hash())).collect()
    }
}
