//! Flat vector index over unit-norm embeddings.
//!
//! At cache capacities in the tens of entries an exact scan with a bounded
//! heap is the right nearest-neighbour structure; callers only rely on the
//! top-k contract, which is checked against a naive full sort in tests.

use alloc::collections::BinaryHeap;
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::EntryId;

/// Row-major store of embeddings keyed by entry id.
#[derive(Debug, Clone, Default)]
pub struct FlatIndex {
    dim: usize,
    ids: Vec<EntryId>,
    rows: Vec<f32>,
}

#[derive(Debug, Clone, Copy)]
struct Scored {
    id: EntryId,
    sim: f64,
}

// Ordering puts the *worst* candidate on top of the max-heap: lower
// similarity is greater, and among equal similarity the larger id is greater.
impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .sim
            .total_cmp(&self.sim)
            .then_with(|| self.id.cmp(&other.id))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Scored {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scored {}

impl FlatIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Panics if `embedding.len() != dim`.
    pub fn insert(&mut self, id: EntryId, embedding: &[f32]) {
        assert_eq!(embedding.len(), self.dim, "embedding dimension mismatch");
        self.ids.push(id);
        self.rows.extend_from_slice(embedding);
    }

    pub fn remove(&mut self, id: EntryId) -> bool {
        let Some(pos) = self.ids.iter().position(|&x| x == id) else {
            return false;
        };
        let last = self.ids.len() - 1;
        self.ids.swap_remove(pos);
        if pos != last {
            let (head, tail) = self.rows.split_at_mut(last * self.dim);
            head[pos * self.dim..(pos + 1) * self.dim].copy_from_slice(&tail[..self.dim]);
        }
        self.rows.truncate(last * self.dim);
        true
    }

    /// Up to `k` entries by descending cosine, ties broken by ascending id.
    pub fn top_k(&self, query: &[f32], k: usize) -> Vec<(EntryId, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Scored> = BinaryHeap::with_capacity(k + 1);
        for (i, &id) in self.ids.iter().enumerate() {
            let row = &self.rows[i * self.dim..(i + 1) * self.dim];
            let cand = Scored {
                id,
                sim: dot(row, query),
            };
            if heap.len() < k {
                heap.push(cand);
            } else if let Some(worst) = heap.peek() {
                if cand < *worst {
                    heap.pop();
                    heap.push(cand);
                }
            }
        }
        let mut out: Vec<Scored> = heap.into_vec();
        out.sort();
        out.into_iter().map(|s| (s.id, s.sim)).collect()
    }
}

/// Dot product accumulated in f64. Equals cosine for unit vectors.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}
