//! Hashtag co-occurrence graphs, label-propagation communities and
//! per-node statistics.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::SuspectIdte;

const MAX_SWEEPS: usize = 100;

/// Undirected weighted graph over hashtags. Node ids are dense indices into
/// the tag list, which is sorted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CooccurrenceGraph {
    tags: Vec<String>,
    index: BTreeMap<String, usize>,
    adj: Vec<BTreeMap<usize, u64>>,
}

impl CooccurrenceGraph {
    /// Builds a graph from explicit nodes and weighted edges. Self-loops and
    /// zero weights are rejected; repeated edges add up.
    pub fn from_edges<S: AsRef<str>>(nodes: &[S], edges: &[(S, S, u64)]) -> Result<Self> {
        let mut tags: BTreeSet<String> = nodes.iter().map(|s| s.as_ref().to_string()).collect();
        for (a, b, _) in edges {
            tags.insert(a.as_ref().to_string());
            tags.insert(b.as_ref().to_string());
        }
        let mut g = Self::with_nodes(tags);
        for (a, b, w) in edges {
            let (a, b) = (a.as_ref(), b.as_ref());
            if a == b {
                return Err(Error::contract(format!("self-loop on {a}")));
            }
            if *w == 0 {
                return Err(Error::contract(format!("zero weight on {a}-{b}")));
            }
            let (i, j) = (g.index[a], g.index[b]);
            g.bump(i, j, *w);
        }
        Ok(g)
    }

    fn with_nodes(tags: BTreeSet<String>) -> Self {
        let tags: Vec<String> = tags.into_iter().collect();
        let index = tags
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        let adj = vec![BTreeMap::new(); tags.len()];
        CooccurrenceGraph { tags, index, adj }
    }

    fn bump(&mut self, i: usize, j: usize, w: u64) {
        *self.adj[i].entry(j).or_insert(0) += w;
        *self.adj[j].entry(i).or_insert(0) += w;
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn node(&self, tag: &str) -> Option<usize> {
        self.index.get(tag).copied()
    }

    /// Neighbours of node `i` with edge weights.
    pub fn neighbors(&self, i: usize) -> &BTreeMap<usize, u64> {
        &self.adj[i]
    }

    pub fn weight(&self, a: &str, b: &str) -> u64 {
        match (self.node(a), self.node(b)) {
            (Some(i), Some(j)) => self.adj[i].get(&j).copied().unwrap_or(0),
            _ => 0,
        }
    }

    /// Each undirected edge once, as `(i, j, weight)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        self.adj.iter().enumerate().flat_map(|(i, nb)| {
            nb.iter()
                .filter(move |(&j, _)| j > i)
                .map(move |(&j, &w)| (i, j, w))
        })
    }

    pub fn total_weight(&self) -> u64 {
        self.edges().map(|(_, _, w)| w).sum()
    }
}

/// One node per distinct hashtag; each post adds 1 to every unordered pair of
/// its distinct hashtags.
pub fn build_cooccurrence_graph(posts: &[SuspectIdte]) -> CooccurrenceGraph {
    let tags: BTreeSet<String> = posts
        .iter()
        .flat_map(|p| p.hashtags.iter().cloned())
        .collect();
    let mut g = CooccurrenceGraph::with_nodes(tags);
    for p in posts {
        let ids: BTreeSet<usize> = p.hashtags.iter().map(|t| g.index[t.as_str()]).collect();
        let ids: Vec<usize> = ids.into_iter().collect();
        for (k, &i) in ids.iter().enumerate() {
            for &j in &ids[k + 1..] {
                g.bump(i, j, 1);
            }
        }
    }
    g
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommunityPartition {
    /// Community of each node, indexed like [`CooccurrenceGraph::tags`].
    pub assignment: Vec<usize>,
    pub count: usize,
    pub sweeps: usize,
    pub converged: bool,
}

impl CommunityPartition {
    pub fn members(&self, community: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == community)
            .collect()
    }
}

fn tag_hash(seed: u64, tag: &str) -> u64 {
    // FNV-1a over the seed bytes then the tag.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(tag.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Asynchronous label propagation.
///
/// Nodes are visited in an order fixed by a seeded hash of their tag, and a
/// node's initial label is its rank in that order, so the result does not
/// depend on how tags happen to be numbered. Each node adopts the label with
/// the largest total vote among its neighbours, taking the smallest such
/// label on ties. A neighbour's vote is the edge weight times one plus the
/// number of neighbours the two nodes share, so edges inside dense groups
/// outvote the odd bridge between them. Sweeps repeat until nothing changes or 100 sweeps
/// have run. Community ids are then renumbered densely by first node.
pub fn detect_communities(graph: &CooccurrenceGraph, seed: u64) -> Result<CommunityPartition> {
    if graph.is_empty() {
        return Err(Error::contract("community detection on an empty graph"));
    }
    let mut order: Vec<usize> = (0..graph.len()).collect();
    order.sort_by_key(|&i| (tag_hash(seed, &graph.tags[i]), i));
    Ok(propagate(graph, &order))
}

/// Label propagation visiting nodes in `order`, which must be a permutation
/// of the node ids.
fn propagate(graph: &CooccurrenceGraph, order: &[usize]) -> CommunityPartition {
    let n = graph.len();
    let mut label = vec![0usize; n];
    for (rank, &i) in order.iter().enumerate() {
        label[i] = rank;
    }

    let strength: Vec<BTreeMap<usize, u64>> = (0..n)
        .map(|i| {
            graph.adj[i]
                .keys()
                .map(|&j| {
                    let common = graph.adj[i]
                        .keys()
                        .filter(|k| graph.adj[j].contains_key(k))
                        .count();
                    (j, 1 + common as u64)
                })
                .collect()
        })
        .collect();
    let mut sweeps = 0;
    let mut converged = false;
    let mut tally: BTreeMap<usize, u64> = BTreeMap::new();
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut changed = false;
        for &i in order {
            tally.clear();
            for (&j, &w) in &graph.adj[i] {
                *tally.entry(label[j]).or_insert(0) += w * strength[i][&j];
            }
            let Some(best) = tally.values().copied().max() else {
                continue;
            };
            let pick = tally
                .iter()
                .filter(|(_, &w)| w == best)
                .map(|(&l, _)| l)
                .min()
                .expect("tally holds the max");
            if pick != label[i] {
                label[i] = pick;
                changed = true;
            }
        }
        if !changed {
            converged = true;
            break;
        }
    }

    let mut dense: BTreeMap<usize, usize> = BTreeMap::new();
    let assignment: Vec<usize> = label
        .iter()
        .map(|l| {
            let next = dense.len();
            *dense.entry(*l).or_insert(next)
        })
        .collect();
    CommunityPartition {
        assignment,
        count: dense.len(),
        sweeps,
        converged,
    }
}

/// Share of nodes whose community matches their true block under a
/// one-to-one pairing of communities with blocks. Pairs are chosen greedily
/// by overlap, which never exceeds the best pairing.
pub fn partition_accuracy(assignment: &[usize], truth: &[usize]) -> Result<f64> {
    if assignment.len() != truth.len() || truth.is_empty() {
        return Err(Error::contract(
            "partition and truth must be equal and non-empty",
        ));
    }
    let mut overlap: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&c, &t) in assignment.iter().zip(truth) {
        *overlap.entry((c, t)).or_insert(0) += 1;
    }
    let mut cells: Vec<((usize, usize), usize)> = overlap.into_iter().collect();
    cells.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let (mut used_c, mut used_t) = (BTreeSet::new(), BTreeSet::new());
    let mut hits = 0;
    for ((c, t), k) in cells {
        if !used_c.contains(&c) && !used_t.contains(&t) {
            used_c.insert(c);
            used_t.insert(t);
            hits += k;
        }
    }
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    pub degree: usize,
    pub clustering: f64,
    pub betweenness: f64,
}

fn bfs_order(graph: &CooccurrenceGraph, s: usize) -> (Vec<usize>, Vec<Vec<usize>>, Vec<usize>) {
    let n = graph.len();
    let mut dist = vec![usize::MAX; n];
    let mut preds = vec![Vec::new(); n];
    let mut stack = Vec::with_capacity(n);
    let mut queue = VecDeque::from([s]);
    dist[s] = 0;
    while let Some(v) = queue.pop_front() {
        stack.push(v);
        for &w in graph.adj[v].keys() {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
            if dist[w] == dist[v] + 1 {
                preds[w].push(v);
            }
        }
    }
    (stack, preds, dist)
}

/// Raw betweenness in floating point (Brandes, unweighted, each unordered
/// pair counted once).
pub fn betweenness(graph: &CooccurrenceGraph) -> Vec<f64> {
    let n = graph.len();
    let mut cb = vec![0.0; n];
    for s in 0..n {
        let (stack, preds, _) = bfs_order(graph, s);
        let mut sigma = vec![0.0f64; n];
        sigma[s] = 1.0;
        for &v in &stack {
            for &p in &preds[v] {
                sigma[v] += sigma[p];
            }
        }
        let mut delta = vec![0.0f64; n];
        for &w in stack.iter().rev() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                cb[w] += delta[w];
            }
        }
    }
    cb.iter().map(|c| c / 2.0).collect()
}

/// Same quantity as [`betweenness`] in exact rational arithmetic.
pub fn betweenness_exact(graph: &CooccurrenceGraph) -> Vec<BigRational> {
    let n = graph.len();
    let mut cb = vec![BigRational::zero(); n];
    for s in 0..n {
        let (stack, preds, _) = bfs_order(graph, s);
        let mut sigma = vec![BigInt::zero(); n];
        sigma[s] = BigInt::from(1);
        for &v in &stack {
            for &p in &preds[v] {
                let add = sigma[p].clone();
                sigma[v] += add;
            }
        }
        let mut delta = vec![BigRational::zero(); n];
        for &w in stack.iter().rev() {
            let carry = BigRational::from_integer(BigInt::from(1)) + &delta[w];
            for &v in &preds[w] {
                let share = BigRational::new(sigma[v].clone(), sigma[w].clone()) * &carry;
                delta[v] += share;
            }
            if w != s {
                cb[w] += &delta[w];
            }
        }
    }
    let two = BigRational::from_integer(BigInt::from(2));
    cb.into_iter().map(|c| c / &two).collect()
}

fn clustering(graph: &CooccurrenceGraph, i: usize) -> f64 {
    let nb: Vec<usize> = graph.adj[i].keys().copied().collect();
    let k = nb.len();
    if k < 2 {
        return 0.0;
    }
    let mut links = 0usize;
    for (a, &u) in nb.iter().enumerate() {
        for &v in &nb[a + 1..] {
            if graph.adj[u].contains_key(&v) {
                links += 1;
            }
        }
    }
    links as f64 / (k * (k - 1) / 2) as f64
}

/// Degree, local clustering coefficient and raw betweenness per node.
pub fn graph_stats(graph: &CooccurrenceGraph) -> Vec<NodeStats> {
    let bc = betweenness(graph);
    (0..graph.len())
        .map(|i| NodeStats {
            degree: graph.adj[i].len(),
            clustering: clustering(graph, i),
            betweenness: bc[i],
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportNode {
    pub tag: String,
    pub degree: usize,
    pub clustering: f64,
    pub betweenness: f64,
    pub community: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportEdge {
    pub source: String,
    pub target: String,
    pub weight: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphExport {
    pub nodes: Vec<ExportNode>,
    pub edges: Vec<ExportEdge>,
}

pub fn export_graph(
    graph: &CooccurrenceGraph,
    stats: &[NodeStats],
    partition: &CommunityPartition,
) -> Result<GraphExport> {
    if stats.len() != graph.len() || partition.assignment.len() != graph.len() {
        return Err(Error::contract("stats or partition do not match the graph"));
    }
    let nodes = graph
        .tags
        .iter()
        .zip(stats)
        .zip(&partition.assignment)
        .map(|((tag, s), &community)| ExportNode {
            tag: tag.clone(),
            degree: s.degree,
            clustering: s.clustering,
            betweenness: s.betweenness,
            community,
        })
        .collect();
    let edges = graph
        .edges()
        .map(|(i, j, weight)| ExportEdge {
            source: graph.tags[i].clone(),
            target: graph.tags[j].clone(),
            weight,
        })
        .collect();
    Ok(GraphExport { nodes, edges })
}
