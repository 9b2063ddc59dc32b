use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::CooccurrenceGraph;

/// A stochastic block model over tags `#b{block}_{i}`. Returns the graph and
/// the planted block of each node in graph order.
pub fn planted_blocks(
    sizes: &[usize],
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> Result<(CooccurrenceGraph, Vec<usize>)> {
    if !(0.0..=1.0).contains(&p_in) || !(0.0..=1.0).contains(&p_out) {
        return Err(Error::contract(format!(
            "edge probabilities ({p_in}, {p_out}) outside [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes: Vec<(String, usize)> = sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &n)| (0..n).map(move |i| (format!("#b{b}_{i:04}"), b)))
        .collect();
    let mut edges = Vec::new();
    for (x, (a, ba)) in nodes.iter().enumerate() {
        for (b, bb) in &nodes[x + 1..] {
            let p = if ba == bb { p_in } else { p_out };
            if rng.random_bool(p) {
                edges.push((a.clone(), b.clone(), 1));
            }
        }
    }
    let names: Vec<String> = nodes.iter().map(|(t, _)| t.clone()).collect();
    let graph = CooccurrenceGraph::from_edges(&names, &edges)?;
    let truth = graph
        .tags()
        .iter()
        .map(|t| {
            nodes
                .iter()
                .find(|(n, _)| n == t)
                .map(|(_, b)| *b)
                .expect("planted tag")
        })
        .collect();
    Ok((graph, truth))
}
