//! Undirected interaction graphs between agents.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    OutOfRange(usize, usize, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("edge probability must lie in [0, 1], got {0}")]
    Probability(f64),
}

/// Symmetric adjacency without self-loops, stored as a sorted list of
/// `(i, j)` pairs with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGraph", into = "RawGraph")]
pub struct InteractionGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    n: usize,
    edges: Vec<[usize; 2]>,
}

impl TryFrom<RawGraph> for InteractionGraph {
    type Error = GraphError;

    fn try_from(raw: RawGraph) -> Result<Self, Self::Error> {
        Self::new(raw.n, raw.edges.iter().map(|e| (e[0], e[1])))
    }
}

impl From<InteractionGraph> for RawGraph {
    fn from(g: InteractionGraph) -> Self {
        RawGraph {
            n: g.n,
            edges: g.edges.iter().map(|&(i, j)| [i, j]).collect(),
        }
    }
}

impl InteractionGraph {
    /// Builds a graph from undirected edges in any orientation; duplicates
    /// collapse.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, GraphError> {
        let mut out = Vec::new();
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(GraphError::OutOfRange(i, j, n));
            }
            if i == j {
                return Err(GraphError::SelfLoop(i));
            }
            out.push((i.min(j), i.max(j)));
        }
        out.sort_unstable();
        out.dedup();
        Ok(Self { n, edges: out })
    }

    pub fn empty(n: usize) -> Self {
        Self { n, edges: Vec::new() }
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        Self { n, edges }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.binary_search(&(i.min(j), i.max(j))).is_ok()
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| match (a == i, b == i) {
                (true, _) => Some(b),
                (_, true) => Some(a),
                _ => None,
            })
            .collect()
    }

    /// Both orientations of every edge as `(source, target)`.
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        self.edges.iter().flat_map(|&(i, j)| [(i, j), (j, i)]).collect()
    }

    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        let mut a = vec![vec![false; self.n]; self.n];
        for &(i, j) in &self.edges {
            a[i][j] = true;
            a[j][i] = true;
        }
        a
    }

    /// Same graph with agents relabeled so that old agent `i` becomes
    /// `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, GraphError> {
        Self::new(self.n, self.edges.iter().map(|&(i, j)| (perm[i], perm[j])))
    }
}

/// Includes each of the `n(n-1)/2` pairs independently with probability
/// `edge_prob`.
pub fn sample_graph(n: usize, edge_prob: f64, seed: u64) -> Result<InteractionGraph, GraphError> {
    if !(0.0..=1.0).contains(&edge_prob) {
        return Err(GraphError::Probability(edge_prob));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(edge_prob) {
                edges.push((i, j));
            }
        }
    }
    Ok(InteractionGraph { n, edges })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probability_extremes() {
        assert_eq!(sample_graph(5, 0.0, 1).unwrap().n_edges(), 0);
        assert_eq!(sample_graph(5, 1.0, 1).unwrap(), InteractionGraph::complete(5));
        assert_eq!(InteractionGraph::complete(5).n_edges(), 10);
    }

    #[test]
    fn sampling_is_seeded() {
        assert_eq!(sample_graph(8, 0.5, 42).unwrap(), sample_graph(8, 0.5, 42).unwrap());
    }

    #[test]
    fn adjacency_is_symmetric_without_diagonal() {
        let g = sample_graph(7, 0.5, 3).unwrap();
        let a = g.adjacency();
        for i in 0..7 {
            assert!(!a[i][i]);
            for j in 0..7 {
                assert_eq!(a[i][j], a[j][i]);
            }
        }
    }

    #[test]
    fn serde_rejects_self_loop() {
        let err = serde_json::from_str::<InteractionGraph>(r#"{"n":3,"edges":[[1,1]]}"#);
        assert!(err.is_err());
        let ok: InteractionGraph = serde_json::from_str(r#"{"n":3,"edges":[[2,0]]}"#).unwrap();
        assert!(ok.has_edge(0, 2));
    }
}
