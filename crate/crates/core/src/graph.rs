//! Directed graphs over marks, with explicit self-loops.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphJson", into = "GraphJson")]
pub struct DirectedGraph {
    d: usize,
    edges: BTreeSet<(usize, usize)>,
}

/// Wire form: `{"d": .., "edges": [[j, k], ...]}`.
#[derive(Serialize, Deserialize)]
struct GraphJson {
    d: usize,
    edges: Vec<[usize; 2]>,
}

impl TryFrom<GraphJson> for DirectedGraph {
    type Error = Error;

    fn try_from(g: GraphJson) -> Result<Self> {
        let mut graph = DirectedGraph::empty(g.d);
        for [j, k] in g.edges {
            graph.try_add_edge(j, k)?;
        }
        Ok(graph)
    }
}

impl From<DirectedGraph> for GraphJson {
    fn from(g: DirectedGraph) -> Self {
        GraphJson {
            d: g.d,
            edges: g.edges.iter().map(|&(j, k)| [j, k]).collect(),
        }
    }
}

impl DirectedGraph {
    pub fn empty(d: usize) -> Self {
        Self {
            d,
            edges: BTreeSet::new(),
        }
    }

    /// Complete graph on `d` vertices including all self-loops.
    pub fn complete(d: usize) -> Self {
        let edges = (0..d).flat_map(|j| (0..d).map(move |k| (j, k))).collect();
        Self { d, edges }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn try_add_edge(&mut self, j: usize, k: usize) -> Result<bool> {
        if j >= self.d || k >= self.d {
            return Err(Error::MarkOutOfRange {
                mark: j.max(k),
                d: self.d,
            });
        }
        Ok(self.edges.insert((j, k)))
    }

    /// # Panics
    /// If either endpoint is out of range.
    pub fn add_edge(&mut self, j: usize, k: usize) -> bool {
        self.try_add_edge(j, k).expect("edge endpoint out of range")
    }

    pub fn remove_edge(&mut self, j: usize, k: usize) -> bool {
        self.edges.remove(&(j, k))
    }

    pub fn has_edge(&self, j: usize, k: usize) -> bool {
        self.edges.contains(&(j, k))
    }

    /// Edges in lexicographic `(j, k)` order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// All `j` with `j -> k`, including `k` itself when it has a self-loop.
    pub fn parents(&self, k: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|&&(_, b)| b == k)
            .map(|&(a, _)| a)
            .collect()
    }

    pub fn is_subgraph_of(&self, other: &DirectedGraph) -> bool {
        self.d == other.d && self.edges.is_subset(&other.edges)
    }

    /// Maps vertex `v` to `perm[v]`.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        Self {
            d: self.d,
            edges: self.edges.iter().map(|&(j, k)| (perm[j], perm[k])).collect(),
        }
    }

    pub fn to_dot(&self, names: Option<&[String]>) -> String {
        let name = |v: usize| match names {
            Some(n) if v < n.len() => n[v].clone(),
            _ => v.to_string(),
        };
        let mut out = String::from("digraph G {\n");
        for v in 0..self.d {
            let _ = writeln!(out, "  \"{}\";", name(v));
        }
        for (j, k) in self.edges() {
            let _ = writeln!(out, "  \"{}\" -> \"{}\";", name(j), name(k));
        }
        out.push_str("}\n");
        out
    }
}

/// Structural Hamming distance between two graphs on the same vertex set.
///
/// Self-loops are ignored. Each unordered pair `{j, k}` contributes the
/// number of ordered edges whose presence differs, except that a pair where
/// one graph has only `j -> k` and the other only `k -> j` counts as a
/// single flip.
pub fn shd(g1: &DirectedGraph, g2: &DirectedGraph) -> Result<usize> {
    if g1.d != g2.d {
        return Err(Error::DimensionMismatch(format!(
            "graphs have {} and {} vertices",
            g1.d, g2.d
        )));
    }
    let mut dist = 0;
    for j in 0..g1.d {
        for k in (j + 1)..g1.d {
            let a = (g1.has_edge(j, k), g1.has_edge(k, j));
            let b = (g2.has_edge(j, k), g2.has_edge(k, j));
            dist += match (a, b) {
                _ if a == b => 0,
                ((true, false), (false, true)) | ((false, true), (true, false)) => 1,
                _ => usize::from(a.0 != b.0) + usize::from(a.1 != b.1),
            };
        }
    }
    Ok(dist)
}
