use std::collections::BTreeMap;

use super::model::Params;
use crate::error::{Error, Result};
use crate::snapshot::{sha256_hex, Snapshot};
use crate::tensor::Tensor;

/// Step counter, parameters and optimizer auxiliaries.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub t: usize,
    pub params: Params,
    pub aux: Params,
}

impl OptimizerState {
    pub fn to_snapshot(&self) -> Snapshot {
        let mut tensors = Vec::with_capacity(self.params.len() + self.aux.len());
        for (k, v) in &self.params {
            tensors.push((format!("param/{k}"), v.clone()));
        }
        for (k, v) in &self.aux {
            tensors.push((format!("aux/{k}"), v.clone()));
        }
        Snapshot { t: self.t as u64, tensors, meta: BTreeMap::new() }
    }

    pub fn from_snapshot(s: &Snapshot) -> Result<Self> {
        let mut params = Params::new();
        let mut aux = Params::new();
        for (name, t) in &s.tensors {
            if let Some(k) = name.strip_prefix("param/") {
                params.insert(k.to_string(), t.clone());
            } else if let Some(k) = name.strip_prefix("aux/") {
                aux.insert(k.to_string(), t.clone());
            } else {
                return Err(Error::Format(format!("unexpected tensor {name} in state snapshot")));
            }
        }
        Ok(OptimizerState { t: s.t as usize, params, aux })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_snapshot().to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_snapshot(&Snapshot::from_bytes(bytes)?)
    }

    /// Hex sha256 of the serialized state.
    pub fn checksum(&self) -> String {
        sha256_hex(&self.to_bytes())
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().chain(self.aux.values()).all(Tensor::all_finite)
    }

    /// Bitwise equality of every tensor.
    pub fn bit_eq(&self, other: &Self) -> bool {
        fn maps_eq(a: &Params, b: &Params) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|((ka, va), (kb, vb))| ka == kb && va.bit_eq(vb))
        }
        self.t == other.t && maps_eq(&self.params, &other.params) && maps_eq(&self.aux, &other.aux)
    }
}

/// Adjoint of an [`OptimizerState`]: one tensor per parameter and auxiliary.
#[derive(Debug, Clone, PartialEq)]
pub struct StateCotangent {
    pub params: Params,
    pub aux: Params,
}

impl StateCotangent {
    pub fn zeros_like(state: &OptimizerState) -> Self {
        let z = |m: &Params| m.iter().map(|(k, v)| (k.clone(), Tensor::zeros(v.shape()))).collect();
        StateCotangent { params: z(&state.params), aux: z(&state.aux) }
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().chain(self.aux.values()).all(Tensor::all_finite)
    }

    pub fn max_abs(&self) -> f64 {
        self.params.values().chain(self.aux.values()).fold(0.0, |m, t| m.max(t.max_abs()))
    }

    /// Clamps every entry into `[-bound, bound]`; returns whether anything
    /// changed.
    pub fn clip(&mut self, bound: f64) -> bool {
        let mut changed = false;
        for t in self.params.values_mut().chain(self.aux.values_mut()) {
            for x in t.data_mut() {
                let c = x.clamp(-bound, bound);
                if c != *x {
                    *x = c;
                    changed = true;
                }
            }
        }
        changed
    }
}
