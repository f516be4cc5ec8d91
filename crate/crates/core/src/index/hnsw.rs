//! Hierarchical navigable small-world graph over unit vectors.
//!
//! Similarity is the dot product, which equals cosine similarity because every
//! stored vector is L2-normalised before insertion. Layer assignment is a pure
//! function of `(seed, node id)`, so construction is reproducible and needs no
//! RNG state in snapshots.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};

use super::IndexError;

const MAX_LEVEL: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HnswParams {
    /// Maximum neighbours per node on layers above 0; layer 0 allows `2 * m`.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    0x005e_ed0f_4a5e
}

impl Default for HnswParams {
    fn default() -> Self {
        Self { m: 16, ef_construction: 200, ef_search: 100, seed: default_seed() }
    }
}

impl HnswParams {
    pub fn validate(&self) -> Result<(), IndexError> {
        if self.m < 2 || self.ef_construction == 0 || self.ef_search == 0 {
            return Err(IndexError::InvalidParams(format!(
                "hnsw m={} ef_construction={} ef_search={}",
                self.m, self.ef_construction, self.ef_search
            )));
        }
        Ok(())
    }

    pub fn max_neighbors(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.m
        } else {
            self.m
        }
    }

    fn level_mult(&self) -> f64 {
        1.0 / (self.m as f64).ln()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[derive(Debug, Clone, Copy)]
struct Scored {
    sim: f64,
    id: u32,
}

impl PartialEq for Scored {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scored {}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scored {
    /// Higher similarity first; equal similarity prefers the lower id.
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim.total_cmp(&other.sim).then_with(|| other.id.cmp(&self.id))
    }
}

#[derive(Debug, Clone)]
pub struct HnswGraph {
    pub(crate) params: HnswParams,
    pub(crate) dim: usize,
    pub(crate) vectors: Vec<f64>,
    /// `links[node][layer]` holds neighbour ids; `links[node].len() - 1` is the node's level.
    pub(crate) links: Vec<Vec<Vec<u32>>>,
    pub(crate) entry: Option<u32>,
    pub(crate) max_level: usize,
}

impl HnswGraph {
    pub fn new(params: HnswParams, dim: usize) -> Self {
        Self { params, dim, vectors: Vec::new(), links: Vec::new(), entry: None, max_level: 0 }
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    pub fn vector(&self, id: u32) -> &[f64] {
        let start = id as usize * self.dim;
        &self.vectors[start..start + self.dim]
    }

    pub fn neighbors(&self, id: u32, layer: usize) -> &[u32] {
        self.links[id as usize].get(layer).map_or(&[], Vec::as_slice)
    }

    pub fn level_of(&self, id: u32) -> usize {
        self.links[id as usize].len() - 1
    }

    pub fn entry_point(&self) -> Option<u32> {
        self.entry
    }

    fn assign_level(&self, id: u32) -> usize {
        let bits = splitmix64(self.params.seed ^ splitmix64(id as u64));
        // Uniform in (0, 1].
        let u = ((bits >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
        ((-u.ln() * self.params.level_mult()).floor() as usize).min(MAX_LEVEL)
    }

    /// Inserts a unit vector and returns its node id (dense, insertion order).
    pub fn insert(&mut self, vector: &[f64]) -> u32 {
        debug_assert_eq!(vector.len(), self.dim);
        let id = self.links.len() as u32;
        let level = self.assign_level(id);
        self.vectors.extend_from_slice(vector);
        self.links.push(vec![Vec::new(); level + 1]);

        let Some(mut ep) = self.entry else {
            self.entry = Some(id);
            self.max_level = level;
            return id;
        };

        let mut ep_sim = dot(vector, self.vector(ep));
        for layer in (level + 1..=self.max_level).rev() {
            (ep, ep_sim) = self.greedy_closest(vector, ep, ep_sim, layer);
        }

        let mut entry_points = vec![Scored { sim: ep_sim, id: ep }];
        for layer in (0..=level.min(self.max_level)).rev() {
            let found = self.search_layer(vector, &entry_points, self.params.ef_construction, layer);
            let selected: Vec<u32> = found.iter().take(self.params.m).map(|s| s.id).collect();
            for &nb in &selected {
                self.links[nb as usize][layer].push(id);
                if self.links[nb as usize][layer].len() > self.params.max_neighbors(layer) {
                    self.prune(nb, layer);
                }
            }
            self.links[id as usize][layer] = selected;
            entry_points = found;
        }

        if level > self.max_level {
            self.max_level = level;
            self.entry = Some(id);
        }
        id
    }

    /// Keeps the closest `max_neighbors(layer)` links of `node`.
    fn prune(&mut self, node: u32, layer: usize) {
        let base = self.vector(node).to_vec();
        let mut scored: Vec<Scored> = self.links[node as usize][layer]
            .iter()
            .map(|&nb| Scored { sim: dot(&base, self.vector(nb)), id: nb })
            .collect();
        scored.sort_unstable_by(|a, b| b.cmp(a));
        scored.truncate(self.params.max_neighbors(layer));
        self.links[node as usize][layer] = scored.into_iter().map(|s| s.id).collect();
    }

    fn greedy_closest(&self, query: &[f64], mut ep: u32, mut ep_sim: f64, layer: usize) -> (u32, f64) {
        loop {
            let mut improved = false;
            for &nb in self.neighbors(ep, layer) {
                let sim = dot(query, self.vector(nb));
                let cand = Scored { sim, id: nb };
                if cand > (Scored { sim: ep_sim, id: ep }) {
                    ep = nb;
                    ep_sim = sim;
                    improved = true;
                }
            }
            if !improved {
                return (ep, ep_sim);
            }
        }
    }

    /// Best-first beam search on one layer. Returns up to `ef` nodes, best first.
    fn search_layer(&self, query: &[f64], entry_points: &[Scored], ef: usize, layer: usize) -> Vec<Scored> {
        let mut visited: HashSet<u32> = entry_points.iter().map(|s| s.id).collect();
        let mut candidates: BinaryHeap<Scored> = entry_points.iter().copied().collect();
        let mut results: BinaryHeap<Reverse<Scored>> = entry_points.iter().copied().map(Reverse).collect();
        while results.len() > ef {
            results.pop();
        }
        while let Some(current) = candidates.pop() {
            let worst = results.peek().map(|r| r.0);
            if let Some(worst) = worst {
                if results.len() >= ef && current < worst {
                    break;
                }
            }
            for &nb in self.neighbors(current.id, layer) {
                if !visited.insert(nb) {
                    continue;
                }
                let cand = Scored { sim: dot(query, self.vector(nb)), id: nb };
                let admit = results.len() < ef || results.peek().is_some_and(|w| cand > w.0);
                if admit {
                    candidates.push(cand);
                    results.push(Reverse(cand));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        let mut out: Vec<Scored> = results.into_iter().map(|r| r.0).collect();
        out.sort_unstable_by(|a, b| b.cmp(a));
        out
    }

    /// Approximate `k` nearest nodes by similarity, best first.
    pub fn search(&self, query: &[f64], k: usize, ef: usize) -> Vec<(u32, f64)> {
        let Some(mut ep) = self.entry else { return Vec::new() };
        if k == 0 {
            return Vec::new();
        }
        let mut ep_sim = dot(query, self.vector(ep));
        for layer in (1..=self.max_level).rev() {
            (ep, ep_sim) = self.greedy_closest(query, ep, ep_sim, layer);
        }
        let found = self.search_layer(query, &[Scored { sim: ep_sim, id: ep }], ef.max(k), 0);
        found.into_iter().take(k).map(|s| (s.id, s.sim)).collect()
    }

    /// Ids reachable from the entry point following links on any layer.
    pub fn reachable_from_entry(&self) -> usize {
        let Some(entry) = self.entry else { return 0 };
        let mut seen = vec![false; self.len()];
        let mut stack = vec![entry];
        seen[entry as usize] = true;
        let mut count = 1;
        while let Some(node) = stack.pop() {
            for layer in &self.links[node as usize] {
                for &nb in layer {
                    if !seen[nb as usize] {
                        seen[nb as usize] = true;
                        count += 1;
                        stack.push(nb);
                    }
                }
            }
        }
        count
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = dot(v, v).sqrt();
        v.iter().map(|x| x / n).collect()
    }

    fn pseudo_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let v: Vec<f64> = (0..dim)
                    .map(|j| {
                        let bits = splitmix64(seed ^ ((i * dim + j) as u64).wrapping_mul(0x1000_0001));
                        (bits >> 11) as f64 / (1u64 << 53) as f64 - 0.5
                    })
                    .collect();
                unit(&v)
            })
            .collect()
    }

    #[test]
    fn empty_graph_returns_nothing() {
        let g = HnswGraph::new(HnswParams::default(), 4);
        assert!(g.search(&[1.0, 0.0, 0.0, 0.0], 3, 10).is_empty());
        assert_eq!(g.reachable_from_entry(), 0);
    }

    #[test]
    fn self_query_ranks_first() {
        let vecs = pseudo_vectors(300, 16, 7);
        let mut g = HnswGraph::new(HnswParams::default(), 16);
        for v in &vecs {
            g.insert(v);
        }
        for (i, v) in vecs.iter().enumerate().step_by(17) {
            let hits = g.search(v, 5, 50);
            assert_eq!(hits[0].0, i as u32);
            assert!((hits[0].1 - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn degree_bounds_and_connectivity() {
        let params = HnswParams { m: 4, ef_construction: 40, ef_search: 20, seed: 3 };
        let mut g = HnswGraph::new(params, 8);
        for v in pseudo_vectors(500, 8, 11) {
            g.insert(&v);
        }
        for id in 0..g.len() as u32 {
            for layer in 0..=g.level_of(id) {
                assert!(g.neighbors(id, layer).len() <= params.max_neighbors(layer));
                assert!(!g.neighbors(id, layer).contains(&id));
            }
        }
        assert_eq!(g.reachable_from_entry(), g.len());
    }

    #[test]
    fn level_assignment_is_deterministic_and_geometric() {
        let g = HnswGraph::new(HnswParams::default(), 2);
        let levels: Vec<usize> = (0..20_000).map(|i| g.assign_level(i)).collect();
        let again: Vec<usize> = (0..20_000).map(|i| g.assign_level(i)).collect();
        assert_eq!(levels, again);
        let above_zero = levels.iter().filter(|&&l| l > 0).count() as f64 / levels.len() as f64;
        // P(level >= 1) = 1/m for the 1/ln(m) normalisation.
        assert!((above_zero - 1.0 / 16.0).abs() < 0.01, "{above_zero}");
    }

    #[test]
    fn results_sorted_descending() {
        let vecs = pseudo_vectors(200, 8, 5);
        let mut g = HnswGraph::new(HnswParams::default(), 8);
        for v in &vecs {
            g.insert(v);
        }
        let hits = g.search(&vecs[3], 20, 40);
        assert_eq!(hits.len(), 20);
        for w in hits.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
    }
}
