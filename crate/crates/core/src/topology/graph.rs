use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::Rng as _;

use crate::error::{DflError, Result};
use crate::rng::{self, domain};

/// Communication topology over `K` nodes.
///
/// Undirected graphs store each edge once as `(min, max)`. In a directed
/// graph the edge `(j, i)` means node `i` receives messages from `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    nodes: usize,
    directed: bool,
    edges: BTreeSet<(usize, usize)>,
    /// Sorted neighbors each node receives from.
    incoming: Vec<Vec<usize>>,
}

/// Retries allowed before a random generator gives up on connectivity.
pub const MAX_REGENERATIONS: usize = 100;

impl Graph {
    pub fn empty(nodes: usize, directed: bool) -> Self {
        Graph {
            nodes,
            directed,
            edges: BTreeSet::new(),
            incoming: vec![Vec::new(); nodes],
        }
    }

    pub fn from_edges(
        nodes: usize,
        directed: bool,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut g = Graph::empty(nodes, directed);
        for (u, v) in edges {
            if !g.add_edge(u, v)? {
                return Err(DflError::config(format!("duplicate edge ({u}, {v})")));
            }
        }
        Ok(g)
    }

    fn key(&self, u: usize, v: usize) -> (usize, usize) {
        if self.directed {
            (u, v)
        } else {
            (u.min(v), u.max(v))
        }
    }

    /// Insert an edge; returns false if it already existed.
    pub fn add_edge(&mut self, u: usize, v: usize) -> Result<bool> {
        if u >= self.nodes || v >= self.nodes {
            return Err(DflError::config(format!(
                "edge ({u}, {v}) out of range for {} nodes",
                self.nodes
            )));
        }
        if u == v {
            return Err(DflError::config(format!("self-loop at node {u}")));
        }
        let key = self.key(u, v);
        if !self.edges.insert(key) {
            return Ok(false);
        }
        insert_sorted(&mut self.incoming[v], u);
        if !self.directed {
            insert_sorted(&mut self.incoming[u], v);
        }
        Ok(true)
    }

    fn remove_edge(&mut self, u: usize, v: usize) -> bool {
        let key = self.key(u, v);
        if !self.edges.remove(&key) {
            return false;
        }
        self.incoming[v].retain(|&x| x != u);
        if !self.directed {
            self.incoming[u].retain(|&x| x != v);
        }
        true
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.nodes && v < self.nodes && self.edges.contains(&self.key(u, v))
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    /// Nodes that `i` receives from (all neighbors when undirected).
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.incoming[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.incoming[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.incoming.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Single component, ignoring edge direction.
    pub fn is_connected(&self) -> bool {
        if self.nodes <= 1 {
            return true;
        }
        let mut adj = vec![Vec::new(); self.nodes];
        for (u, v) in self.edges() {
            adj[u].push(v);
            adj[v].push(u);
        }
        reach_count(&adj, 0) == self.nodes
    }

    /// Every node reaches every other node along edge directions. Same as
    /// [`Graph::is_connected`] for undirected graphs.
    pub fn is_strongly_connected(&self) -> bool {
        if !self.directed || self.nodes <= 1 {
            return self.is_connected();
        }
        let mut fwd = vec![Vec::new(); self.nodes];
        let mut rev = vec![Vec::new(); self.nodes];
        for (u, v) in self.edges() {
            fwd[u].push(v);
            rev[v].push(u);
        }
        reach_count(&fwd, 0) == self.nodes && reach_count(&rev, 0) == self.nodes
    }

    /// One `u v` line per edge, 0-indexed.
    pub fn to_edge_list(&self) -> String {
        let mut s = String::new();
        for (u, v) in self.edges() {
            let _ = writeln!(s, "{u} {v}");
        }
        s
    }

    /// Dense combinatorial Laplacian `D - A` of an undirected graph.
    pub fn laplacian(&self) -> Result<Vec<Vec<f64>>> {
        if self.directed {
            return Err(DflError::Unsupported(
                "Laplacian spectrum of a directed graph".into(),
            ));
        }
        let n = self.nodes;
        let mut l = vec![vec![0.0; n]; n];
        for (u, v) in self.edges() {
            l[u][v] -= 1.0;
            l[v][u] -= 1.0;
            l[u][u] += 1.0;
            l[v][v] += 1.0;
        }
        Ok(l)
    }
}

fn insert_sorted(v: &mut Vec<usize>, x: usize) {
    if let Err(pos) = v.binary_search(&x) {
        v.insert(pos, x);
    }
}

fn reach_count(adj: &[Vec<usize>], start: usize) -> usize {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count
}

fn require_nodes(k: usize) -> Result<()> {
    if k < 2 {
        return Err(DflError::config(format!("need at least 2 nodes, got {k}")));
    }
    Ok(())
}

/// Node `i` linked to `i ± 1, ..., i ± k/2` (mod `K`).
pub fn ring_lattice(nodes: usize, k: usize) -> Result<Graph> {
    require_nodes(nodes)?;
    if k == 0 || !k.is_multiple_of(2) || k >= nodes {
        return Err(DflError::config(format!(
            "ring lattice needs an even k with 0 < k < K (k = {k}, K = {nodes})"
        )));
    }
    let mut g = Graph::empty(nodes, false);
    for i in 0..nodes {
        for j in 1..=k / 2 {
            g.add_edge(i, (i + j) % nodes)?;
        }
    }
    Ok(g)
}

pub fn cycle(nodes: usize) -> Result<Graph> {
    require_nodes(nodes)?;
    if nodes == 2 {
        return Graph::from_edges(2, false, [(0, 1)]);
    }
    ring_lattice(nodes, 2)
}

pub fn complete(nodes: usize) -> Result<Graph> {
    require_nodes(nodes)?;
    let mut g = Graph::empty(nodes, false);
    for u in 0..nodes {
        for v in u + 1..nodes {
            g.add_edge(u, v)?;
        }
    }
    Ok(g)
}

/// Server at node 0 linked to `clients` leaves `1..=clients`.
pub fn star(clients: usize) -> Result<Graph> {
    require_nodes(clients)?;
    let mut g = Graph::empty(clients + 1, false);
    for c in 1..=clients {
        g.add_edge(0, c)?;
    }
    Ok(g)
}

/// Watts-Strogatz small world.
///
/// Every lattice edge `(i, i + j)` is visited once and, with probability `p`,
/// its far endpoint is replaced by a uniformly chosen node that is neither
/// `i` nor already adjacent to `i`. The edge count never changes. Graphs that
/// come out disconnected are regenerated from the next stream, up to
/// [`MAX_REGENERATIONS`] times.
pub fn watts_strogatz(nodes: usize, k: usize, p: f64, seed: u64) -> Result<Graph> {
    if !(0.0..=1.0).contains(&p) {
        return Err(DflError::config(format!("rewiring probability {p} outside [0, 1]")));
    }
    let lattice = ring_lattice(nodes, k)?;
    for attempt in 0..MAX_REGENERATIONS {
        let mut rng = rng::stream(seed, &[domain::TOPOLOGY, attempt as u64]);
        let mut g = lattice.clone();
        for j in 1..=k / 2 {
            for i in 0..nodes {
                if rng.random::<f64>() >= p {
                    continue;
                }
                let old = (i + j) % nodes;
                if !g.has_edge(i, old) {
                    // already rewired away by an earlier step
                    continue;
                }
                let candidates: Vec<usize> =
                    (0..nodes).filter(|&u| u != i && !g.has_edge(i, u)).collect();
                if let Some(&new) = candidates.choose(&mut rng) {
                    g.remove_edge(i, old);
                    g.add_edge(i, new)?;
                }
            }
        }
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(DflError::Generation(format!(
        "no connected small-world graph for K={nodes}, k={k}, p={p} after {MAX_REGENERATIONS} tries"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_lattice_k2_is_the_cycle() {
        let g = ring_lattice(10, 2).unwrap();
        assert_eq!(g.edge_count(), 10);
        for i in 0..10 {
            assert_eq!(g.neighbors(i).len(), 2);
            assert!(g.has_edge(i, (i + 1) % 10));
        }
        assert_eq!(g, cycle(10).unwrap());
    }

    #[test]
    fn ring_lattice_k4_is_regular() {
        let g = ring_lattice(10, 4).unwrap();
        assert_eq!(g.edge_count(), 20);
        assert!((0..10).all(|i| g.degree(i) == 4));
        assert!(g.is_connected());
    }

    #[test]
    fn ring_lattice_rejects_bad_k() {
        assert!(matches!(ring_lattice(10, 3), Err(DflError::Config(_))));
        assert!(ring_lattice(10, 10).is_err());
        assert!(ring_lattice(10, 0).is_err());
    }

    #[test]
    fn small_constructions() {
        assert_eq!(complete(4).unwrap().edge_count(), 6);
        let s = star(10).unwrap();
        assert_eq!(s.nodes(), 11);
        assert_eq!(s.edge_count(), 10);
        assert_eq!(s.degree(0), 10);
        assert_eq!(cycle(3).unwrap(), complete(3).unwrap());
        assert!(complete(1).is_err());
        assert!(star(1).is_err());
    }

    #[test]
    fn ws_with_p_zero_is_the_lattice() {
        assert_eq!(watts_strogatz(12, 4, 0.0, 3).unwrap(), ring_lattice(12, 4).unwrap());
    }

    #[test]
    fn ws_preserves_edges_and_connectivity() {
        for seed in 0..30 {
            let g = watts_strogatz(20, 4, 0.5, seed).unwrap();
            assert_eq!(g.edge_count(), 40);
            assert!(g.is_connected());
        }
    }

    #[test]
    fn ws_is_deterministic() {
        assert_eq!(
            watts_strogatz(20, 4, 0.3, 9).unwrap(),
            watts_strogatz(20, 4, 0.3, 9).unwrap()
        );
    }

    #[test]
    fn connectivity_checks() {
        let two_triangles =
            Graph::from_edges(6, false, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]).unwrap();
        assert!(!two_triangles.is_connected());
        let chain = Graph::from_edges(3, true, [(0, 1), (1, 2)]).unwrap();
        assert!(chain.is_connected());
        assert!(!chain.is_strongly_connected());
        let ring = Graph::from_edges(3, true, [(0, 1), (1, 2), (2, 0)]).unwrap();
        assert!(ring.is_strongly_connected());
        assert_eq!(ring.neighbors(1), &[0]);
    }

    #[test]
    fn rejects_loops_and_duplicates() {
        assert!(Graph::from_edges(3, false, [(1, 1)]).is_err());
        assert!(Graph::from_edges(3, false, [(0, 1), (1, 0)]).is_err());
        assert!(Graph::from_edges(3, true, [(0, 1), (1, 0)]).is_ok());
    }

    #[test]
    fn edge_list_export() {
        let g = cycle(3).unwrap();
        assert_eq!(g.to_edge_list(), "0 1\n0 2\n1 2\n");
    }
}
