//! Graph generators for synthetic networks and tests.
//!
//! Node ids are zero-padded so lexicographic order matches construction order.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::rng_from_seed;

fn width(n: usize) -> usize {
    n.max(1).to_string().len().max(2)
}

pub fn grid_node_id(row: usize, col: usize, h: usize, w: usize) -> String {
    let (wr, wc) = (width(h), width(w));
    format!("r{row:0wr$}c{col:0wc$}")
}

/// 4-neighbour lattice with `w` columns and `h` rows.
pub fn grid_graph(w: usize, h: usize) -> Graph {
    grid_edges(w, h, "").map(|e| Graph::from_edges(&e)).unwrap().expect("grid has edges")
}

pub(crate) fn grid_edges(w: usize, h: usize, prefix: &str) -> Result<Vec<(String, String)>> {
    if w * h < 2 {
        return Err(Error::config("grid needs at least two nodes"));
    }
    let id = |r, c| format!("{prefix}{}", grid_node_id(r, c, h, w));
    let mut edges = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if c + 1 < w {
                edges.push((id(r, c), id(r, c + 1)));
            }
            if r + 1 < h {
                edges.push((id(r, c), id(r + 1, c)));
            }
        }
    }
    Ok(edges)
}

/// Random spanning tree over `n` nodes plus about `n/2` extra chords.
pub fn random_connected_graph(n: usize, seed: u64) -> Graph {
    assert!(n >= 2);
    let mut rng = rng_from_seed(seed);
    let w = width(n);
    let id = |i: usize| format!("v{i:0w$}");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut edges = Vec::new();
    for i in 1..n {
        let parent = order[rng.random_range(0..i)];
        edges.push((id(parent), id(order[i])));
    }
    for _ in 0..n / 2 {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            edges.push((id(a), id(b)));
        }
    }
    Graph::from_edges(&edges).expect("spanning tree is non-empty")
}

/// Two circulant communities (each node linked to its next two ring
/// neighbours) joined by `bridges` random cross edges.
pub fn two_community_edges(n1: usize, n2: usize, bridges: usize, seed: u64) -> Result<Vec<(String, String)>> {
    if n1 < 3 || n2 < 3 || bridges == 0 {
        return Err(Error::config("two_community needs n1, n2 >= 3 and at least one bridge"));
    }
    let mut rng = rng_from_seed(seed);
    let (w1, w2) = (width(n1), width(n2));
    let a = |i: usize| format!("a{i:0w1$}");
    let b = |i: usize| format!("b{i:0w2$}");
    let mut edges = Vec::new();
    for (n, name) in [(n1, &a as &dyn Fn(usize) -> String), (n2, &b)] {
        for i in 0..n {
            edges.push((name(i), name((i + 1) % n)));
            if n > 4 {
                edges.push((name(i), name((i + 2) % n)));
            }
        }
    }
    for _ in 0..bridges {
        edges.push((a(rng.random_range(0..n1)), b(rng.random_range(0..n2))));
    }
    Ok(edges)
}

pub fn highway_node_id(i: usize, len: usize) -> String {
    let w = width(len);
    format!("h{i:0w$}")
}

/// Urban grid (`g` prefix) with a highway corridor running along its first
/// row; every second highway node has a ramp into the grid.
pub fn hybrid_highway_grid_edges(w: usize, h: usize) -> Result<Vec<(String, String)>> {
    if w < 2 || h < 2 {
        return Err(Error::config("hybrid_highway_grid needs w, h >= 2"));
    }
    let mut edges = grid_edges(w, h, "g")?;
    let hw = |i| highway_node_id(i, w);
    for i in 0..w {
        if i + 1 < w {
            edges.push((hw(i), hw(i + 1)));
        }
        if i % 2 == 0 {
            edges.push((hw(i), format!("g{}", grid_node_id(0, i, h, w))));
        }
    }
    Ok(edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::LaplacianKind;

    #[test]
    fn grid_counts() {
        let g = grid_graph(6, 8);
        assert_eq!(g.n(), 48);
        // undirected edges: h*(w-1) + w*(h-1)
        assert_eq!(g.edges().len(), 2 * (8 * 5 + 6 * 7));
        assert_eq!(g.node_ids()[0], "r00c00");
        assert_eq!(g.node_ids()[1], "r00c01");
    }

    #[test]
    fn generated_graphs_are_connected() {
        for n in [5, 17, 50] {
            let g = random_connected_graph(n, n as u64);
            assert_eq!(g.n(), n);
            let l = g.laplacian(LaplacianKind::Combinatorial).unwrap();
            let ev = crate::spectral::eig_sym(&l).unwrap();
            assert!(ev.eigenvalues()[1] > 1e-9, "graph disconnected");
        }
        let tc = Graph::from_edges(&two_community_edges(8, 6, 2, 1).unwrap()).unwrap();
        assert_eq!(tc.n(), 14);
        let hy = Graph::from_edges(&hybrid_highway_grid_edges(4, 3).unwrap()).unwrap();
        assert_eq!(hy.n(), 16);
        assert!(hy.laplacian(LaplacianKind::SymmetricNormalized).is_ok());
    }
}
