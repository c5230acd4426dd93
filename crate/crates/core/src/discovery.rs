//! Constraint-based graph learning from local-independence tests.
//!
//! Starts from the complete graph and, for conditioning sets of growing
//! size drawn from the current parents of the target, deletes `j -> k` as
//! soon as one test fails to reject. Self-loops are never tested.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::MarkedEventSequence;
use crate::graph::DirectedGraph;
use crate::litest::{LITestConfig, PreparedSequence, TestFlag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CAConfig {
    pub test: LITestConfig,
    /// Largest conditioning set size; `d - 2` when absent.
    pub max_conditioning: Option<usize>,
    /// An edge is removed when a test has `p >= alpha`.
    pub alpha: f64,
    /// Run the targets of one level concurrently. Gives the same graph and
    /// trace as the sequential scan.
    pub parallel: bool,
}

impl Default for CAConfig {
    fn default() -> Self {
        Self {
            test: LITestConfig::default(),
            max_conditioning: None,
            alpha: 0.05,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceAction {
    Removed,
    Kept,
    /// The fit failed; the edge stays.
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub level: usize,
    pub j: usize,
    pub k: usize,
    pub conditioning: Vec<usize>,
    pub p_value: Option<f64>,
    pub statistic: Option<f64>,
    pub flag: Option<TestFlag>,
    pub action: TraceAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryTrace {
    pub records: Vec<TraceRecord>,
    pub graph: DirectedGraph,
}

impl DiscoveryTrace {
    /// Applies the recorded removals to the complete graph.
    pub fn replay(&self) -> DirectedGraph {
        let mut g = DirectedGraph::complete(self.graph.d());
        for r in self.records.iter().filter(|r| r.action == TraceAction::Removed) {
            g.remove_edge(r.j, r.k);
        }
        g
    }

    pub fn num_tests(&self) -> usize {
        self.records.len()
    }
}

/// Lexicographic `size`-subsets of `items` (assumed sorted).
pub fn subsets(items: &[usize], size: usize) -> Vec<Vec<usize>> {
    let n = items.len();
    if size > n {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..size).collect();
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        let Some(i) = (0..size).rev().find(|&i| idx[i] != i + n - size) else {
            return out;
        };
        idx[i] += 1;
        for l in i + 1..size {
            idx[l] = idx[l - 1] + 1;
        }
    }
}

fn candidates(parents: &[usize], j: usize, k: usize) -> Vec<usize> {
    parents.iter().copied().filter(|&m| m != j && m != k).collect()
}

/// One level for one target. Only edges into `k` change, so targets are
/// independent within a level.
fn scan_target(
    data: &PreparedSequence,
    parents: &mut Vec<usize>,
    k: usize,
    level: usize,
    config: &CAConfig,
) -> Vec<TraceRecord> {
    let mut records = Vec::new();
    let sources: Vec<usize> = parents.iter().copied().filter(|&j| j != k).collect();
    for j in sources {
        let cand = candidates(parents, j, k);
        for cond in subsets(&cand, level) {
            let mut record = TraceRecord {
                level,
                j,
                k,
                conditioning: cond.clone(),
                p_value: None,
                statistic: None,
                flag: None,
                action: TraceAction::Kept,
            };
            match data.test(j, k, &cond, &config.test) {
                Ok(r) => {
                    record.p_value = Some(r.p_value);
                    record.statistic = Some(r.statistic);
                    record.flag = r.flag;
                    if r.p_value >= config.alpha {
                        record.action = TraceAction::Removed;
                    }
                }
                Err(e) => {
                    warn!("test {j} -/-> {k} | {cond:?} failed: {e}; keeping the edge");
                    record.action = TraceAction::Failed(e.to_string());
                }
            }
            let removed = record.action == TraceAction::Removed;
            records.push(record);
            if removed {
                parents.retain(|&m| m != j);
                break;
            }
        }
    }
    records
}

pub fn learn_graph_ca(seq: &MarkedEventSequence, config: &CAConfig) -> Result<DiscoveryTrace> {
    let data = PreparedSequence::for_config(seq, &config.test)?;
    learn_graph_ca_prepared(&data, config)
}

pub fn learn_graph_ca_prepared(data: &PreparedSequence, config: &CAConfig) -> Result<DiscoveryTrace> {
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha {} must lie in (0, 1)", config.alpha)));
    }
    config.test.validate()?;
    let d = data.d();
    if d < 2 {
        return Err(Error::InvalidConfig("structure learning needs at least two marks".into()));
    }
    let max_level = config.max_conditioning.unwrap_or(d - 2);
    let mut graph = DirectedGraph::complete(d);
    let mut records = Vec::new();
    for level in 0..=max_level {
        // stop once no edge has enough other parents to condition on
        let testable = graph
            .edges()
            .any(|(j, k)| j != k && candidates(&graph.parents(k), j, k).len() >= level);
        if !testable {
            break;
        }
        let mut parent_sets: Vec<Vec<usize>> = (0..d).map(|k| graph.parents(k)).collect();
        let per_target: Vec<Vec<TraceRecord>> = if config.parallel {
            parent_sets
                .par_iter_mut()
                .enumerate()
                .map(|(k, parents)| scan_target(data, parents, k, level, config))
                .collect()
        } else {
            parent_sets
                .iter_mut()
                .enumerate()
                .map(|(k, parents)| scan_target(data, parents, k, level, config))
                .collect()
        };
        // merge into the order of a lexicographic (j, k) edge scan
        let mut level_records: Vec<TraceRecord> = per_target.into_iter().flatten().collect();
        level_records.sort_by_key(|r| (r.j, r.k));
        for r in &level_records {
            if r.action == TraceAction::Removed {
                graph.remove_edge(r.j, r.k);
            }
        }
        records.extend(level_records);
    }
    Ok(DiscoveryTrace { records, graph })
}
