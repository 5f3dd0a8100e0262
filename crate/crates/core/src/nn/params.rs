//! Named parameter tensors and their gradients.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Ordered collection of named matrices. Insertion order is the slot order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    index: BTreeMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct TensorFile {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter `{name}`");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        self.names.len() - 1
    }

    /// Weight matrix with entries drawn from N(0, 1/fan_in).
    pub fn insert_linear_weight(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> usize {
        let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("valid std");
        self.insert(name, Mat::from_fn(fan_in, fan_out, |_, _| normal.sample(rng)))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.index(name).map(|i| &self.values[i])
    }

    pub fn get_at(&self, idx: usize) -> &Mat {
        &self.values[idx]
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.index(name).map(move |i| &mut self.values[i])
    }

    pub fn get_at_mut(&mut self, idx: usize) -> &mut Mat {
        &mut self.values[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn digest(&self) -> String {
        self.digest_filtered(|_| true)
    }

    pub fn digest_filtered(&self, keep: impl Fn(&str) -> bool) -> String {
        let mut h = Sha256::new();
        for (name, m) in self.iter().filter(|(n, _)| keep(n)) {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update((m.rows() as u64).to_le_bytes());
            h.update((m.cols() as u64).to_le_bytes());
            for v in m.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// `θ ← θ − lr·g` for every slot where `update` holds.
    pub fn sgd_step(&mut self, grads: &Grads, lr: f64, update: impl Fn(&str) -> bool) {
        for (i, g) in grads.slots.iter().enumerate() {
            if let Some(g) = g {
                if update(&self.names[i]) {
                    self.values[i].axpy(-lr, g);
                }
            }
        }
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let files: Vec<TensorFile> = self
            .iter()
            .map(|(n, m)| TensorFile { name: n.to_string(), rows: m.rows(), cols: m.cols(), data: m.data().to_vec() })
            .collect();
        serde_json::to_value(files).expect("tensor list serialises")
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<Self> {
        let files: Vec<TensorFile> = serde_json::from_value(value)?;
        let mut store = Self::new();
        for f in files {
            if store.index(&f.name).is_some() {
                return Err(Error::Schema(format!("duplicate tensor `{}`", f.name)));
            }
            store.insert(f.name, Mat::from_vec(f.rows, f.cols, f.data)?);
        }
        Ok(store)
    }

    /// Check that every name in `other` exists here with the same shape.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.names == other.names && self.values.iter().zip(&other.values).all(|(a, b)| a.shape() == b.shape())
    }
}

/// Per-slot accumulated gradients.
#[derive(Clone, Debug)]
pub struct Grads {
    slots: Vec<Option<Mat>>,
}

impl Grads {
    pub fn new(num_params: usize) -> Self {
        Self { slots: vec![None; num_params] }
    }

    pub fn get(&self, idx: usize) -> Option<&Mat> {
        self.slots.get(idx).and_then(Option::as_ref)
    }

    pub fn accumulate(&mut self, idx: usize, g: &Mat) {
        match &mut self.slots[idx] {
            Some(acc) => acc.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub fn merge(&mut self, other: &Grads) {
        for (i, g) in other.slots.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(i, g);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.slots.iter_mut().flatten() {
            *g = g.scale(s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.slots.iter().flatten().map(Mat::frobenius_sq).sum::<f64>().sqrt()
    }

    /// Rescale so the global norm does not exceed `max_norm`.
    pub fn clip(&mut self, max_norm: f64) {
        let n = self.global_norm();
        if n > max_norm && n.is_finite() {
            self.scale(max_norm / n);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slots.iter().flatten().all(Mat::all_finite)
    }
}


/// Adam with bias correction over the slots selected at each step.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Option<Mat>>,
    v: Vec<Option<Mat>>,
}

impl Adam {
    pub fn new(lr: f64, num_params: usize) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![None; num_params], v: vec![None; num_params] }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, update: impl Fn(&str) -> bool) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, g) in grads.slots.iter().enumerate() {
            let Some(g) = g else { continue };
            if !update(&store.names[i]) {
                continue;
            }
            let m = self.m[i].get_or_insert_with(|| Mat::zeros(g.rows(), g.cols()));
            let v = self.v[i].get_or_insert_with(|| Mat::zeros(g.rows(), g.cols()));
            let p = &mut store.values[i];
            for (((pv, mv), vv), gv) in p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                *pv -= self.lr * (*mv / c1) / ((*vv / c2).sqrt() + self.eps);
            }
        }
    }
}
