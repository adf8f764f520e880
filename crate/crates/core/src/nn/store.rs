use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::Real;
use crate::error::{Error, Result};

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

/// Location of one parameter tensor inside the flat store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId {
    pub offset: usize,
    pub len: usize,
}

impl ParamId {
    #[inline]
    pub fn range(self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
    pub grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::Shape(format!("shape {shape:?} needs {n} values, got {}", values.len())));
        }
        Ok(Self { shape, values, grad: None })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f32),
    /// Uniform in ±1/sqrt(fan_in), scaled by `gain`.
    FanIn { fan_in: usize, gain: f32 },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub id: ParamId,
}

/// Named parameter tensors in one flat `f32` buffer, with AdamW moments.
#[derive(Debug, Clone)]
pub struct ParamStore {
    pub(crate) entries: Vec<Entry>,
    index: HashMap<String, usize>,
    pub(crate) values: Vec<f32>,
    pub(crate) grads: Option<Vec<f32>>,
    pub(crate) m: Vec<f32>,
    pub(crate) v: Vec<f32>,
    pub(crate) step: u64,
    version: u64,
    uid: u64,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
            values: Vec::new(),
            grads: None,
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
            version: 0,
            uid: NEXT_UID.fetch_add(1, Ordering::Relaxed),
        }
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut impl Rng) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        let len: usize = shape.iter().product();
        if len == 0 {
            return Err(Error::Shape(format!("parameter `{name}` has empty shape {shape:?}")));
        }
        let id = ParamId { offset: self.values.len(), len };
        match init {
            Init::Zeros => self.values.extend(std::iter::repeat_n(0.0, len)),
            Init::Constant(c) => self.values.extend(std::iter::repeat_n(c, len)),
            Init::FanIn { fan_in, gain } => {
                let bound = gain / (fan_in.max(1) as f32).sqrt();
                self.values.extend((0..len).map(|_| rng.random_range(-bound..=bound)));
            }
        }
        self.m.extend(std::iter::repeat_n(0.0, len));
        self.v.extend(std::iter::repeat_n(0.0, len));
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(Entry { name: name.to_string(), shape: shape.to_vec(), id });
        self.version += 1;
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn param(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| self.entries[i].id)
    }

    pub fn names(&self) -> impl Iterator<Item = (&str, &[usize], ParamId)> {
        self.entries.iter().map(|e| (e.name.as_str(), e.shape.as_slice(), e.id))
    }

    pub fn tensor(&self, name: &str) -> Option<Tensor> {
        let e = &self.entries[*self.index.get(name)?];
        Some(Tensor {
            shape: e.shape.clone(),
            values: self.values[e.id.range()].to_vec(),
            grad: self.grads.as_ref().map(|g| g[e.id.range()].to_vec()),
        })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Mutable access to the raw values; bumps the version.
    pub fn values_mut(&mut self) -> &mut [f32] {
        self.version += 1;
        &mut self.values
    }

    pub fn get(&self, id: ParamId) -> &[f32] {
        &self.values[id.range()]
    }

    pub fn set(&mut self, id: ParamId, values: &[f32]) -> Result<()> {
        if values.len() != id.len {
            return Err(Error::Shape(format!("expected {} values, got {}", id.len, values.len())));
        }
        self.values[id.range()].copy_from_slice(values);
        self.version += 1;
        Ok(())
    }

    /// Changes whenever the values change. Together with [`Self::uid`] it
    /// identifies a parameter state.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn bump_version(&mut self) {
        self.version += 1;
    }

    pub fn snapshot<T: Real>(&self) -> Weights<T> {
        Weights {
            data: self.values.iter().map(|&x| T::from_f32(x)).collect(),
            version: self.version,
            uid: self.uid,
        }
    }

    pub fn zero_grads<T: Real>(&self) -> Grads<T> {
        Grads { data: vec![T::zero(); self.values.len()] }
    }

    /// Stores gradients for the next optimizer step, replacing any present.
    pub fn set_grads<T: Real>(&mut self, grads: &Grads<T>) -> Result<()> {
        if grads.data.len() != self.values.len() {
            return Err(Error::Shape(format!(
                "gradient length {} for {} parameters",
                grads.data.len(),
                self.values.len()
            )));
        }
        self.grads = Some(grads.data.iter().map(|g| g.as_f64() as f32).collect());
        Ok(())
    }

    pub fn grads(&self) -> Option<&[f32]> {
        self.grads.as_deref()
    }

    pub fn clear_grads(&mut self) {
        self.grads = None;
    }
}

/// Read-only parameter snapshot in compute precision.
#[derive(Debug, Clone)]
pub struct Weights<T> {
    pub(crate) data: Vec<T>,
    version: u64,
    uid: u64,
}

impl<T: Real> Weights<T> {
    #[inline]
    pub fn get(&self, id: ParamId) -> &[T] {
        &self.data[id.range()]
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// Copy with one raw coordinate replaced; the copy gets a version no
    /// real store state can have.
    pub fn with_value(&self, index: usize, value: T) -> Self {
        let mut data = self.data.clone();
        data[index] = value;
        Self { data, version: u64::MAX, uid: self.uid }
    }
}

/// Flat gradient buffer with the same layout as the store.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub(crate) data: Vec<T>,
}

impl<T: Real> Grads<T> {
    pub fn zeros(len: usize) -> Self {
        Self { data: vec![T::zero(); len] }
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.data[id.range()]
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[T] {
        &self.data[id.range()]
    }

    pub fn add_assign(&mut self, other: &Grads<T>) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|g| g.as_f64() * g.as_f64()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|g| g.is_finite())
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }
}
