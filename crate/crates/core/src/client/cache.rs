use std::collections::HashMap;

use crate::embed::Fetched;
use crate::error::{Error, Result};

/// Remote embeddings pulled this round, per layer `1..L`, keyed by global ID.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingCache {
    layers: Vec<HashMap<usize, Vec<f64>>>,
    pub hits: u64,
    pub misses: u64,
    pub bytes_pulled: u64,
}

impl EmbeddingCache {
    pub fn new(num_layers: usize) -> Self {
        EmbeddingCache { layers: vec![HashMap::new(); num_layers.saturating_sub(1)], ..Default::default() }
    }

    pub fn clear(&mut self) {
        for l in &mut self.layers {
            l.clear();
        }
    }

    fn slot(&self, layer: usize) -> Option<usize> {
        (layer >= 1 && layer <= self.layers.len()).then(|| layer - 1)
    }

    pub fn contains(&self, layer: usize, node: usize) -> bool {
        self.slot(layer).is_some_and(|s| self.layers[s].contains_key(&node))
    }

    /// Looks up one row, counting the hit or miss.
    pub fn lookup(&mut self, layer: usize, node: usize) -> Option<&[f64]> {
        let s = self.slot(layer)?;
        match self.layers[s].get(&node) {
            Some(r) => {
                self.hits += 1;
                Some(r.as_slice())
            }
            None => {
                self.misses += 1;
                None
            }
        }
    }

    pub fn get(&self, layer: usize, node: usize) -> Option<&[f64]> {
        self.slot(layer).and_then(|s| self.layers[s].get(&node)).map(Vec::as_slice)
    }

    /// Stores the rows of a GET response; any missing ID is an error.
    pub fn fill(&mut self, layer: usize, fetched: &Fetched) -> Result<usize> {
        if !fetched.missing.is_empty() {
            return Err(Error::CacheMiss { missing: fetched.missing.iter().map(|&n| (n as usize, layer)).collect() });
        }
        let s = self
            .slot(layer)
            .ok_or_else(|| Error::Validation(format!("no cache slot for layer {layer}")))?;
        let dim = fetched.dim.max(1);
        for (id, row) in fetched.found.iter().zip(fetched.data.chunks_exact(dim)) {
            self.layers[s].insert(*id as usize, row.iter().map(|&x| x as f64).collect());
        }
        self.bytes_pulled += 4 * fetched.data.len() as u64;
        Ok(fetched.found.len())
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_lookup_clear() {
        let mut c = EmbeddingCache::new(3);
        let f = Fetched { dim: 2, found: vec![4, 9], data: vec![1.0, 2.0, 3.0, 4.0], missing: vec![] };
        assert_eq!(c.fill(2, &f).unwrap(), 2);
        assert_eq!(c.lookup(2, 9), Some(&[3.0, 4.0][..]));
        assert!(c.lookup(1, 9).is_none());
        assert_eq!((c.hits, c.misses, c.bytes_pulled), (1, 1, 16));
        assert!(!c.contains(0, 4) && !c.contains(3, 4));
        c.clear();
        assert!(c.is_empty());
        let bad = Fetched { dim: 2, found: vec![], data: vec![], missing: vec![7] };
        assert!(matches!(c.fill(1, &bad), Err(Error::CacheMiss { .. })));
    }
}
