use std::collections::HashMap;

use crate::error::{Error, Result};

/// Embeddings for layers `1..num_layers`, keyed by global node ID.
/// Layer 0 (the raw features) is never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    layers: Vec<HashMap<u64, Vec<f32>>>,
}

impl EmbeddingStore {
    /// A store for an `num_layers`-layer model whose hidden width is `dim`.
    pub fn new(num_layers: usize, dim: usize) -> Self {
        EmbeddingStore { dim, layers: vec![HashMap::new(); num_layers.saturating_sub(1)] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored layers (`L - 1`).
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    fn slot(&self, layer: usize) -> Result<usize> {
        if layer == 0 || layer > self.layers.len() {
            return Err(Error::Validation(format!(
                "layer {layer} is outside 1..={}",
                self.layers.len()
            )));
        }
        Ok(layer - 1)
    }

    pub fn check_layer(&self, layer: usize) -> Result<()> {
        self.slot(layer).map(|_| ())
    }

    /// Upserts `ids.len()` rows of width `dim` from `data`.
    pub fn set(&mut self, layer: usize, ids: &[u64], dim: usize, data: &[f32]) -> Result<usize> {
        let slot = self.slot(layer)?;
        if dim != self.dim || data.len() != ids.len() * dim {
            return Err(Error::Shape(format!(
                "{} ids with width {dim} and {} values; store width is {}",
                ids.len(),
                data.len(),
                self.dim
            )));
        }
        let map = &mut self.layers[slot];
        for (id, row) in ids.iter().zip(data.chunks_exact(dim.max(1))) {
            map.insert(*id, row.to_vec());
        }
        Ok(ids.len())
    }

    /// Present rows in request order, plus the IDs that were absent.
    pub fn get(&self, layer: usize, ids: &[u64]) -> Result<(Vec<u64>, Vec<f32>, Vec<u64>)> {
        let map = &self.layers[self.slot(layer)?];
        let mut found = Vec::new();
        let mut data = Vec::new();
        let mut missing = Vec::new();
        for &id in ids {
            match map.get(&id) {
                Some(row) => {
                    found.push(id);
                    data.extend_from_slice(row);
                }
                None => missing.push(id),
            }
        }
        Ok((found, data, missing))
    }

    /// All entries of `layer` by ascending ID; empty for an invalid layer.
    pub fn entries(&self, layer: usize) -> Vec<(u64, Vec<f32>)> {
        let Ok(slot) = self.slot(layer) else { return Vec::new() };
        let mut out: Vec<(u64, Vec<f32>)> = self.layers[slot].iter().map(|(k, v)| (*k, v.clone())).collect();
        out.sort_unstable_by_key(|e| e.0);
        out
    }

    pub fn len(&self, layer: usize) -> usize {
        self.slot(layer).map_or(0, |s| self.layers[s].len())
    }

    pub fn is_empty(&self) -> bool {
        self.layers.iter().all(HashMap::is_empty)
    }

    pub fn bytes(&self) -> usize {
        self.layers.iter().map(|m| m.len() * self.dim * 4).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_overwrite() {
        let mut s = EmbeddingStore::new(3, 2);
        assert_eq!(s.num_layers(), 2);
        s.set(1, &[7, 9], 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        s.set(1, &[7], 2, &[5.0, 6.0]).unwrap();
        let (found, data, missing) = s.get(1, &[9, 7, 8]).unwrap();
        assert_eq!(found, vec![9, 7]);
        assert_eq!(data, vec![3.0, 4.0, 5.0, 6.0]);
        assert_eq!(missing, vec![8]);
        assert_eq!(s.len(1), 2);
        assert_eq!(s.len(2), 0);
        assert_eq!(s.bytes(), 16);
    }

    #[test]
    fn layer_and_width_errors() {
        let mut s = EmbeddingStore::new(3, 2);
        assert!(s.set(0, &[1], 2, &[0.0, 0.0]).is_err());
        assert!(s.set(3, &[1], 2, &[0.0, 0.0]).is_err());
        assert!(s.set(1, &[1], 3, &[0.0; 3]).is_err());
        assert!(s.set(1, &[1, 2], 2, &[0.0; 2]).is_err());
        assert!(s.get(0, &[]).is_err());
        assert_eq!(s.get(2, &[]).unwrap(), (vec![], vec![], vec![]));
    }
}
