//! FIFO memory banks of negative key embeddings and their hidden values.
//!
//! A [`BankGroup`] keeps one bank per (modality, branch) pair on a shared
//! write schedule, so slot i refers to the same source instance in every
//! bank. That slot synchronization is what lets a teacher's anchor indices
//! be re-read in another modality's bank.

use crate::data::Modality;
use crate::tensor::{Result, Tensor, TensorError};

fn contract(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Contract {
        op,
        msg: msg.into(),
    }
}

/// Discrimination branch a bank belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    /// Instance-level branch: plain encoder output.
    Instance,
    /// Cluster-level branch: encoder with cross-attention over neighbors.
    Cluster,
}

impl Branch {
    pub const ALL: [Branch; 2] = [Branch::Instance, Branch::Cluster];

    pub fn name(self) -> &'static str {
        match self {
            Branch::Instance => "idb",
            Branch::Cluster => "cdb",
        }
    }
}

/// Exact top-K retrieval result, similarity-descending.
#[derive(Debug, Clone)]
pub struct TopK {
    pub indices: Vec<usize>,
    pub similarities: Vec<f64>,
}

/// Fixed-capacity ring buffer of unit-norm key embeddings, optionally paired
/// with hidden-value embeddings at the same slots.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    capacity: usize,
    key_dim: usize,
    value_dim: Option<usize>,
    keys: Vec<f64>,
    values: Vec<f64>,
    instance_ids: Vec<u64>,
    cursor: usize,
    fill: usize,
}

impl MemoryBank {
    pub fn new(capacity: usize, key_dim: usize, value_dim: Option<usize>) -> Self {
        MemoryBank {
            capacity,
            key_dim,
            value_dim,
            keys: vec![0.0; capacity * key_dim],
            values: vec![0.0; capacity * value_dim.unwrap_or(0)],
            instance_ids: vec![0; capacity],
            cursor: 0,
            fill: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn fill_count(&self) -> usize {
        self.fill
    }

    pub fn is_full(&self) -> bool {
        self.fill == self.capacity
    }

    pub fn key_dim(&self) -> usize {
        self.key_dim
    }

    pub fn value_dim(&self) -> Option<usize> {
        self.value_dim
    }

    pub fn write_cursor(&self) -> usize {
        self.cursor
    }

    pub fn key(&self, slot: usize) -> &[f64] {
        &self.keys[slot * self.key_dim..(slot + 1) * self.key_dim]
    }

    pub fn instance_id(&self, slot: usize) -> u64 {
        self.instance_ids[slot]
    }

    fn write(&mut self, slot: usize, key: &[f64], value: Option<&[f64]>, instance_id: u64) {
        self.keys[slot * self.key_dim..(slot + 1) * self.key_dim].copy_from_slice(key);
        if let Some(dim) = self.value_dim {
            let v = value.expect("value-bearing bank requires values");
            self.values[slot * dim..(slot + 1) * dim].copy_from_slice(v);
        }
        self.instance_ids[slot] = instance_id;
    }

    /// All filled keys as a `fill x key_dim` matrix in slot order.
    pub fn keys_matrix(&self) -> Tensor {
        Tensor::matrix(self.fill, self.key_dim, self.keys[..self.fill * self.key_dim].to_vec())
            .expect("bank layout")
    }

    /// Exact top-K by dot product, ties broken by lower slot index.
    pub fn top_k(&self, query: &[f64], k: usize) -> Result<TopK> {
        self.top_k_filtered(query, k, None)
    }

    /// Top-K skipping slots that hold `exclude_instance`. Used by neighbor
    /// retrieval so a sample cannot aggregate its own stored embedding.
    pub fn top_k_excluding(
        &self,
        query: &[f64],
        k: usize,
        exclude_instance: u64,
    ) -> Result<TopK> {
        self.top_k_filtered(query, k, Some(exclude_instance))
    }

    fn top_k_filtered(&self, query: &[f64], k: usize, exclude: Option<u64>) -> Result<TopK> {
        if query.len() != self.key_dim {
            return Err(TensorError::DimMismatch {
                op: "top_k",
                lhs: vec![query.len()],
                rhs: vec![self.key_dim],
            });
        }
        let mut scored: Vec<(f64, usize)> = (0..self.fill)
            .filter(|&slot| exclude != Some(self.instance_ids[slot]))
            .map(|slot| (crate::tensor::dot_slices(query, self.key(slot)), slot))
            .collect();
        if k > scored.len() {
            return Err(contract(
                "top_k",
                format!("k={k} exceeds eligible slot count {}", scored.len()),
            ));
        }
        scored.sort_unstable_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        });
        scored.truncate(k);
        Ok(TopK {
            indices: scored.iter().map(|s| s.1).collect(),
            similarities: scored.iter().map(|s| s.0).collect(),
        })
    }

    /// Stored keys at `indices`, row per index, detached from any graph.
    pub fn gather_keys(&self, indices: &[usize]) -> Result<Tensor> {
        self.gather(indices, self.key_dim, &self.keys)
    }

    /// Stored hidden values at `indices`. Errors on banks without values.
    pub fn gather_values(&self, indices: &[usize]) -> Result<Tensor> {
        let dim = self
            .value_dim
            .ok_or_else(|| contract("gather", "bank stores no hidden values"))?;
        self.gather(indices, dim, &self.values)
    }

    fn gather(&self, indices: &[usize], dim: usize, store: &[f64]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            if i >= self.fill {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather",
                    index: i,
                    len: self.fill,
                });
            }
            data.extend_from_slice(&store[i * dim..(i + 1) * dim]);
        }
        Tensor::matrix(indices.len(), dim, data)
    }

    /// Full bank assembled directly from unit-norm key rows; slot i holds
    /// `keys[i]` with `instance_ids[i]`. Used by toy states in the
    /// verification suites.
    pub(crate) fn from_keys(keys: Vec<Vec<f64>>, instance_ids: Vec<u64>) -> Self {
        let n = keys.len();
        assert_eq!(n, instance_ids.len());
        let dim = keys.first().map(|k| k.len()).unwrap_or(0);
        let mut bank = MemoryBank::new(n, dim, None);
        for (i, k) in keys.iter().enumerate() {
            bank.write(i, k, None, instance_ids[i]);
        }
        bank.fill = n;
        bank
    }

    #[cfg(test)]
    fn debug_enqueue(&mut self, key: &[f64], value: Option<&[f64]>, instance_id: u64) {
        let slot = self.cursor;
        self.write(slot, key, value, instance_id);
        self.cursor = (self.cursor + 1) % self.capacity;
        self.fill = (self.fill + 1).min(self.capacity);
    }
}

/// Per-bank payload for one enqueued batch: `batch x dim` keys, plus values
/// for banks that store them.
#[derive(Debug, Clone)]
pub struct BankBatch {
    pub keys: Vec<Vec<f64>>,
    pub values: Option<Vec<Vec<f64>>>,
}

/// Banks for every (modality, branch) pair, written in lock step.
#[derive(Debug, Clone, PartialEq)]
pub struct BankGroup {
    modalities: Vec<Modality>,
    banks: Vec<MemoryBank>,
    cursor: usize,
    fill: usize,
}

impl BankGroup {
    /// Instance-branch banks store (key, hidden value) pairs; cluster-branch
    /// banks store keys only.
    pub fn new(modalities: &[Modality], capacity: usize, key_dim: usize, value_dim: usize) -> Self {
        let mut banks = Vec::new();
        for _ in modalities {
            banks.push(MemoryBank::new(capacity, key_dim, Some(value_dim)));
            banks.push(MemoryBank::new(capacity, key_dim, None));
        }
        BankGroup {
            modalities: modalities.to_vec(),
            banks,
            cursor: 0,
            fill: 0,
        }
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.modalities
    }

    pub fn capacity(&self) -> usize {
        self.banks[0].capacity
    }

    pub fn fill_count(&self) -> usize {
        self.fill
    }

    pub fn is_warm(&self) -> bool {
        self.fill == self.capacity()
    }

    fn index_of(&self, modality: Modality, branch: Branch) -> usize {
        let m = self
            .modalities
            .iter()
            .position(|&x| x == modality)
            .unwrap_or_else(|| panic!("modality {} not in group", modality.name()));
        m * 2 + if branch == Branch::Instance { 0 } else { 1 }
    }

    pub fn bank(&self, modality: Modality, branch: Branch) -> &MemoryBank {
        &self.banks[self.index_of(modality, branch)]
    }

    pub fn banks(&self) -> &[MemoryBank] {
        &self.banks
    }

    /// Bank layout order used by `enqueue_batch` payloads: per modality in
    /// group order, instance bank then cluster bank.
    pub fn bank_order(&self) -> Vec<(Modality, Branch)> {
        self.modalities
            .iter()
            .flat_map(|&m| [(m, Branch::Instance), (m, Branch::Cluster)])
            .collect()
    }

    /// Writes one batch into every bank at the shared cursor. All banks must
    /// receive the same batch size in the same instance order.
    pub fn enqueue_batch(
        &mut self,
        instance_ids: &[u64],
        per_bank: &[BankBatch],
    ) -> Result<()> {
        let batch = instance_ids.len();
        if per_bank.len() != self.banks.len() {
            return Err(contract(
                "enqueue_batch",
                format!("expected {} bank payloads, got {}", self.banks.len(), per_bank.len()),
            ));
        }
        if batch > self.capacity() {
            return Err(contract(
                "enqueue_batch",
                format!("batch {batch} exceeds capacity {}", self.capacity()),
            ));
        }
        for (b, payload) in per_bank.iter().enumerate() {
            if payload.keys.len() != batch {
                return Err(contract(
                    "enqueue_batch",
                    format!(
                        "bank {b} batch size {} != {batch} of the group",
                        payload.keys.len()
                    ),
                ));
            }
            let bank = &self.banks[b];
            if bank.value_dim.is_some() {
                match &payload.values {
                    Some(vs) if vs.len() == batch => {}
                    _ => {
                        return Err(contract(
                            "enqueue_batch",
                            format!("bank {b} stores values but payload has none for the batch"),
                        ))
                    }
                }
            }
            for key in &payload.keys {
                let n: f64 = key.iter().map(|v| v * v).sum::<f64>().sqrt();
                if (n - 1.0).abs() > 1e-6 {
                    return Err(contract(
                        "enqueue_batch",
                        format!("key norm {n} not unit within 1e-6"),
                    ));
                }
            }
        }
        let capacity = self.capacity();
        for i in 0..batch {
            let slot = (self.cursor + i) % capacity;
            for (b, payload) in per_bank.iter().enumerate() {
                let value = payload.values.as_ref().map(|vs| vs[i].as_slice());
                self.banks[b].write(slot, &payload.keys[i], value, instance_ids[i]);
            }
        }
        self.cursor = (self.cursor + batch) % capacity;
        self.fill = (self.fill + batch).min(capacity);
        for b in &mut self.banks {
            b.cursor = self.cursor;
            b.fill = self.fill;
        }
        Ok(())
    }

    pub(crate) fn restore(
        modalities: Vec<Modality>,
        banks: Vec<MemoryBank>,
        cursor: usize,
        fill: usize,
    ) -> Self {
        BankGroup {
            modalities,
            banks,
            cursor,
            fill,
        }
    }

    pub(crate) fn raw_parts(&self) -> (usize, usize) {
        (self.cursor, self.fill)
    }
}

pub(crate) mod raw {
    //! Field access for checkpoint serialization.
    use super::MemoryBank;

    pub struct BankState<'a> {
        pub capacity: usize,
        pub key_dim: usize,
        pub value_dim: Option<usize>,
        pub keys: &'a [f64],
        pub values: &'a [f64],
        pub instance_ids: &'a [u64],
        pub cursor: usize,
        pub fill: usize,
    }

    pub fn state(bank: &MemoryBank) -> BankState<'_> {
        BankState {
            capacity: bank.capacity,
            key_dim: bank.key_dim,
            value_dim: bank.value_dim,
            keys: &bank.keys,
            values: &bank.values,
            instance_ids: &bank.instance_ids,
            cursor: bank.cursor,
            fill: bank.fill,
        }
    }

    pub fn build(
        capacity: usize,
        key_dim: usize,
        value_dim: Option<usize>,
        keys: Vec<f64>,
        values: Vec<f64>,
        instance_ids: Vec<u64>,
        cursor: usize,
        fill: usize,
    ) -> MemoryBank {
        MemoryBank {
            capacity,
            key_dim,
            value_dim,
            keys,
            values,
            instance_ids,
            cursor,
            fill,
        }
    }
}
