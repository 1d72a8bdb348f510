//! Support-graph helpers over `petgraph`.

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};

/// Strongly connected components of the directed graph on `0..n`.
pub fn strongly_connected_components(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut g: DiGraph<(), ()> = DiGraph::with_capacity(n, edges.len());
    for _ in 0..n {
        g.add_node(());
    }
    for &(a, b) in edges {
        g.add_edge(NodeIndex::new(a), NodeIndex::new(b), ());
    }
    tarjan_scc(&g)
        .into_iter()
        .map(|c| {
            let mut v: Vec<usize> = c.into_iter().map(|i| i.index()).collect();
            v.sort_unstable();
            v
        })
        .collect()
}

pub fn is_strongly_connected(n: usize, edges: &[(usize, usize)]) -> bool {
    n > 0 && strongly_connected_components(n, edges).len() == 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cycle_is_strongly_connected() {
        assert!(is_strongly_connected(3, &[(0, 1), (1, 2), (2, 0)]));
        assert!(!is_strongly_connected(3, &[(0, 1), (1, 2)]));
    }
}
