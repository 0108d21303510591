//! Named parameter registry, deterministic initialization and the `SFW1`
//! weights file format.
//!
//! `SFW1` layout (all integers little-endian):
//!
//! ```text
//! "SFW1" | version u32 | entry count u32
//! per entry: name length u16 | name UTF-8 | rank u8 | dims u32 × rank | f32 × Π dims
//! checksum u64 = wrapping sum of every tensor-data byte
//! ```

use std::cell::RefCell;
use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tape::{Grads, Tape, Var};
use crate::tensor::{numel, Real, Tensor};

pub const MAGIC: &[u8; 4] = b"SFW1";
pub const VERSION: u32 = 1;
/// Bytes of the file header (magic, version, entry count).
pub const HEADER_BYTES: usize = 12;
pub const CHECKSUM_BYTES: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T: Real = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

#[derive(Clone, Debug, Default)]
pub struct ModelWeights<T: Real = f32> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> PartialEq for ModelWeights<T> {
    fn eq(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.value == b.value)
    }
}

impl<T: Real> ModelWeights<T> {
    pub fn new() -> Self {
        ModelWeights {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Format(format!("duplicate parameter name `{name}`")));
        }
        self.index.insert(name.clone(), self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name, value, grad });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar weights.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<T>> {
        self.position(name).map(|i| &self.params[i])
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Format(format!("missing parameter `{name}`")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        let i = self
            .position(name)
            .ok_or_else(|| Error::Format(format!("missing parameter `{name}`")))?;
        Ok(&mut self.params[i].value)
    }

    /// Replaces a parameter's value, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self.value_mut(name)?;
        value.expect_shape(slot.shape())?;
        *slot = value;
        Ok(())
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(T::zero());
        }
    }

    pub fn accumulate(&mut self, grads: &[(usize, Tensor<T>)]) {
        for (i, g) in grads {
            self.params[*i].grad.add_assign(g);
        }
    }

    pub fn cast<U: Real>(&self) -> ModelWeights<U> {
        ModelWeights {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Checks that `other` has exactly the same names and shapes.
    pub fn expect_layout(&self, other: &ModelWeights<T>) -> Result<()> {
        for p in &self.params {
            let q = other
                .get(&p.name)
                .ok_or_else(|| Error::Format(format!("weights lack parameter `{}`", p.name)))?;
            if q.value.shape() != p.value.shape() {
                return Err(Error::dim(format!(
                    "parameter `{}` has shape {:?}, model expects {:?}",
                    p.name,
                    q.value.shape(),
                    p.value.shape()
                )));
            }
        }
        if let Some(extra) = other.names().find(|n| self.position(n).is_none()) {
            return Err(Error::Format(format!("unexpected parameter `{extra}`")));
        }
        Ok(())
    }
}

/// Seeded weight initializer; draws happen in registration order.
pub struct Initializer {
    rng: ChaCha8Rng,
    slope: f64,
}

/// Default negative slope of [`Initializer::kaiming_uniform`].
pub const KAIMING_SLOPE: f64 = 2.236_067_977_499_79;

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
            slope: KAIMING_SLOPE,
        }
    }

    /// Same stream with a different leaky-ReLU slope; `0` gives the plain
    /// ReLU gain, `bound = √(6/fan_in)`.
    pub fn with_slope(mut self, slope: f64) -> Self {
        self.slope = slope;
        self
    }

    /// Kaiming-uniform, `bound = √(6 / ((1 + a²)·fan_in))`; the default slope
    /// `a = √5` gives `1/√fan_in`.
    pub fn kaiming_uniform<T: Real>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let gain_sq = 2.0 / (1.0 + self.slope * self.slope);
        let bound = (3.0 * gain_sq / fan_in.max(1) as f64).sqrt();
        Tensor::from_fn(shape, |_| T::lit(self.rng.random_range(-bound..bound)))
    }

    pub fn normal<T: Real>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        let dist = Normal::new(0.0, std).expect("finite std");
        Tensor::from_fn(shape, |_| T::lit(dist.sample(&mut self.rng)))
    }
}

/// Binds registry parameters onto a tape as leaves, once per name.
pub struct Binder<'a, T: Real> {
    tape: &'a Tape<T>,
    weights: &'a ModelWeights<T>,
    bound: RefCell<Vec<(usize, Var)>>,
    trainable: bool,
}

impl<'a, T: Real> Binder<'a, T> {
    /// Parameters become differentiable leaves.
    pub fn new(tape: &'a Tape<T>, weights: &'a ModelWeights<T>) -> Self {
        Binder {
            tape,
            weights,
            bound: RefCell::new(Vec::new()),
            trainable: true,
        }
    }

    /// Parameters become constants (inference).
    pub fn frozen(tape: &'a Tape<T>, weights: &'a ModelWeights<T>) -> Self {
        Binder {
            trainable: false,
            ..Self::new(tape, weights)
        }
    }

    pub fn tape(&self) -> &'a Tape<T> {
        self.tape
    }

    pub fn weights(&self) -> &'a ModelWeights<T> {
        self.weights
    }

    pub fn has(&self, name: &str) -> bool {
        self.weights.position(name).is_some()
    }

    pub fn param(&self, name: &str) -> Result<Var> {
        let i = self
            .weights
            .position(name)
            .ok_or_else(|| Error::Format(format!("missing parameter `{name}`")))?;
        if let Some(&(_, v)) = self.bound.borrow().iter().find(|(j, _)| *j == i) {
            return Ok(v);
        }
        let value = self.weights.params[i].value.clone();
        let v = if self.trainable {
            self.tape.leaf(value)
        } else {
            self.tape.constant(value)
        };
        self.bound.borrow_mut().push((i, v));
        Ok(v)
    }

    /// Extracts per-parameter gradients (registry index, gradient).
    pub fn collect(&self, grads: &mut Grads<T>) -> Vec<(usize, Tensor<T>)> {
        self.bound
            .borrow()
            .iter()
            .filter_map(|&(i, v)| grads.take(v).map(|g| (i, g)))
            .collect()
    }
}

fn checksum(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0u64, |acc, &b| acc.wrapping_add(b as u64))
}

/// Serialized size of a registry in bytes.
pub fn encoded_len(w: &ModelWeights<f32>) -> usize {
    HEADER_BYTES
        + w.params
            .iter()
            .map(|p| 2 + p.name.len() + 1 + 4 * p.value.rank() + 4 * p.value.numel())
            .sum::<usize>()
        + CHECKSUM_BYTES
}

pub fn encode(w: &ModelWeights<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(encoded_len(w));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(w.params.len() as u32).to_le_bytes());
    let mut sum = 0u64;
    for p in &w.params {
        let name = p.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Format(format!("parameter name `{}` too long", p.name)))?;
        let rank = u8::try_from(p.value.rank())
            .map_err(|_| Error::Format(format!("parameter `{}` has too many dims", p.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(rank);
        for &d in p.value.shape() {
            let d = u32::try_from(d)
                .map_err(|_| Error::Format(format!("parameter `{}` dim too large", p.name)))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        let start = out.len();
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        sum = sum.wrapping_add(checksum(&out[start..]));
    }
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated file: needed {n} bytes for {what} at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ModelWeights<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic (expected SFW1)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = r.u32("entry count")? as usize;
    let mut w = ModelWeights::new();
    let mut sum = 0u64;
    for e in 0..count {
        let ctx = |m: String| Error::Format(format!("entry {e}: {m}"));
        let name_len = u16::from_le_bytes(
            r.take(2, "name length")
                .map_err(|err| ctx(err.to_string()))?
                .try_into()
                .expect("2 bytes"),
        ) as usize;
        let name = std::str::from_utf8(r.take(name_len, "name").map_err(|err| ctx(err.to_string()))?)
            .map_err(|_| ctx("name is not UTF-8".into()))?
            .to_string();
        let ctx = |m: String| Error::Format(format!("entry {e} (`{name}`): {m}"));
        let rank = r.take(1, "rank").map_err(|err| ctx(err.to_string()))?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dim").map_err(|err| ctx(err.to_string()))? as usize);
        }
        let n = numel(&shape);
        let raw = r
            .take(n.checked_mul(4).ok_or_else(|| ctx("size overflow".into()))?, "data")
            .map_err(|err| ctx(err.to_string()))?;
        sum = sum.wrapping_add(checksum(raw));
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let value = Tensor::new(shape, data).map_err(|err| ctx(err.to_string()))?;
        w.insert(name.clone(), value).map_err(|err| ctx(err.to_string()))?;
    }
    let stored = u64::from_le_bytes(r.take(8, "checksum")?.try_into().expect("8 bytes"));
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checksum",
            bytes.len() - r.pos
        )));
    }
    if stored != sum {
        return Err(Error::Format(format!(
            "checksum mismatch (stored {stored:#x}, computed {sum:#x})"
        )));
    }
    Ok(w)
}

pub fn save_weights(w: &ModelWeights<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(w)?).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelWeights<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
