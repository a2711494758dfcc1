use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use rgbd_tensor::{Real, Tensor, Var};
use serde::{Deserialize, Serialize};

/// Parameter groups; each has its own optimizer and is updated by its own phases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    /// Depth path `G_d` (mapping, angle encoder, depth synthesis).
    DepthGen,
    /// Appearance path `G_rgb` (mapping, synthesis, fusion).
    RgbGen,
    /// Discriminator, including the depth branch.
    Disc,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::DepthGen, Group::RgbGen, Group::Disc];

    pub fn key(self) -> &'static str {
        match self {
            Group::DepthGen => "g_depth",
            Group::RgbGen => "g_rgb",
            Group::Disc => "disc",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry<T: Real> {
    name: String,
    group: Group,
    value: Tensor<T>,
}

/// Named parameter tensors. Names are hierarchical (`g_depth.synth.4.conv0.weight`).
#[derive(Clone, Debug)]
pub struct ParamStore<T: Real = f32> {
    entries: Vec<Entry<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self { entries: Vec::new(), by_name: HashMap::new() }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: Group, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter name {name}");
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id.0);
        self.entries.push(Entry { name, group, value });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn ids_in(&self, group: Group) -> Vec<ParamId> {
        self.ids().filter(|&id| self.group(id) == group).collect()
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) {
        let e = &mut self.entries[id.0];
        assert_eq!(e.value.shape(), value.shape(), "shape change for {}", e.name);
        e.value = value;
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn group(&self, id: ParamId) -> Group {
        self.entries[id.0].group
    }

    pub fn numel(&self, group: Group) -> usize {
        self.entries.iter().filter(|e| e.group == group).map(|e| e.value.numel()).sum()
    }

    /// Same names and groups in another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry { name: e.name.clone(), group: e.group, value: e.value.cast() })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Graph handles for every parameter; only `trainable` groups accumulate gradients.
    pub fn bind(&self, trainable: &[Group]) -> Bound<T> {
        let vars = self
            .entries
            .iter()
            .map(|e| {
                if trainable.contains(&e.group) {
                    Var::leaf(e.value.clone())
                } else {
                    Var::constant(e.value.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Constants everywhere except the given handles.
    pub fn bind_with(&self, overrides: &[(ParamId, Var<T>)]) -> Bound<T> {
        let mut b = self.bind(&[]);
        for (id, v) in overrides {
            assert_eq!(v.shape(), self.get(*id).shape(), "override shape for {}", self.name(*id));
            b.vars[id.0] = v.clone();
        }
        b
    }

    /// FNV-1a over names and the exact bit patterns of one group's values.
    pub fn group_hash(&self, group: Group) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        let mut buf = Vec::new();
        for e in self.entries.iter().filter(|e| e.group == group) {
            eat(e.name.as_bytes());
            buf.clear();
            for &v in e.value.data() {
                v.write_le(&mut buf);
            }
            eat(&buf);
        }
        h
    }

    /// True when every tensor is bit-identical.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.name == b.name
                    && a.group == b.group
                    && a.value.shape() == b.value.shape()
                    && a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits_u64() == y.to_bits_u64())
            })
    }
}

/// Bit pattern of a float, for exact comparisons.
pub trait ToBits {
    fn to_bits_u64(self) -> u64;
}

impl<T: Real> ToBits for T {
    fn to_bits_u64(self) -> u64 {
        let mut buf = Vec::with_capacity(8);
        self.write_le(&mut buf);
        buf.resize(8, 0);
        u64::from_le_bytes(buf.try_into().expect("8 bytes"))
    }
}

/// One forward pass's view of the parameters.
#[derive(Clone)]
pub struct Bound<T: Real> {
    vars: Vec<Var<T>>,
}

impl<T: Real> Bound<T> {
    pub fn get(&self, id: ParamId) -> &Var<T> {
        &self.vars[id.0]
    }

    /// Handles that will receive gradients.
    pub fn trainable(&self) -> Vec<(ParamId, Var<T>)> {
        self.vars
            .iter()
            .enumerate()
            .filter(|(_, v)| v.requires_grad())
            .map(|(i, v)| (ParamId(i), v.clone()))
            .collect()
    }
}

/// Registers parameters under a name prefix, drawing initial values from `rng`.
pub struct ParamBuilder<'a, R: Rng> {
    pub store: &'a mut ParamStore<f32>,
    pub rng: &'a mut R,
    pub group: Group,
    pub prefix: String,
}

impl<'a, R: Rng> ParamBuilder<'a, R> {
    pub fn new(store: &'a mut ParamStore<f32>, rng: &'a mut R, group: Group) -> Self {
        Self { store, rng, group, prefix: group.key().to_string() }
    }

    /// Runs `f` with `.name` appended to the prefix.
    pub fn scope<Out>(&mut self, name: impl fmt::Display, f: impl FnOnce(&mut Self) -> Out) -> Out {
        let saved = self.prefix.clone();
        self.prefix = format!("{saved}.{name}");
        let out = f(self);
        self.prefix = saved;
        out
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> ParamId {
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape.to_vec(), |_| (rng.sample::<f64, _>(StandardNormal) * std) as f32);
        self.store.add(format!("{}.{name}", self.prefix), self.group, t)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f32) -> ParamId {
        self.store.add(format!("{}.{name}", self.prefix), self.group, Tensor::full(shape.to_vec(), value))
    }
}
