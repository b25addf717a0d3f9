use crate::data::NUM_JOINTS;
use crate::numerics::Tensor;

/// COCO-17 bones. The nose is tied to both shoulders so the graph is
/// connected.
pub const COCO_EDGES: [(usize, usize); 18] = [
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (0, 5),
    (0, 6),
    (5, 6),
    (5, 7),
    (7, 9),
    (6, 8),
    (8, 10),
    (5, 11),
    (6, 12),
    (11, 12),
    (11, 13),
    (13, 15),
    (12, 14),
    (14, 16),
];

/// Left/right joint pairs of the COCO-17 layout.
pub const COCO_MIRROR_PAIRS: [(usize, usize); 8] = [(1, 2), (3, 4), (5, 6), (7, 8), (9, 10), (11, 12), (13, 14), (15, 16)];

#[derive(Clone, Debug)]
pub struct SkeletonGraph {
    pub nodes: usize,
    pub edges: Vec<(usize, usize)>,
    /// `D⁻¹(A + I)`.
    pub adjacency: Tensor,
}

impl Default for SkeletonGraph {
    fn default() -> Self {
        Self::new(NUM_JOINTS, &COCO_EDGES)
    }
}

impl SkeletonGraph {
    pub fn new(nodes: usize, edges: &[(usize, usize)]) -> Self {
        let raw = Self::raw_adjacency(nodes, edges);
        let mut adj = raw.clone();
        for i in 0..nodes {
            let deg: f64 = (0..nodes).map(|j| raw.get(&[i, j])).sum();
            for j in 0..nodes {
                adj.set(&[i, j], raw.get(&[i, j]) / deg);
            }
        }
        Self {
            nodes,
            edges: edges.to_vec(),
            adjacency: adj,
        }
    }

    /// Symmetric 0/1 adjacency with self-loops.
    pub fn raw_adjacency(nodes: usize, edges: &[(usize, usize)]) -> Tensor {
        let mut a = Tensor::zeros(&[nodes, nodes]);
        for i in 0..nodes {
            a.set(&[i, i], 1.0);
        }
        for &(u, v) in edges {
            a.set(&[u, v], 1.0);
            a.set(&[v, u], 1.0);
        }
        a
    }

    /// Path graph over the first `nodes` joints, for reduced-size tests.
    pub fn chain(nodes: usize) -> Self {
        let edges: Vec<_> = (1..nodes).map(|i| (i - 1, i)).collect();
        Self::new(nodes, &edges)
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.nodes];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &(a, b) in &self.edges {
                for (x, y) in [(a, b), (b, a)] {
                    if x == u && !seen[y] {
                        seen[y] = true;
                        stack.push(y);
                    }
                }
            }
        }
        seen.iter().all(|&s| s)
    }
}
