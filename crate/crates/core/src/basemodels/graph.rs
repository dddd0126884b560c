use ndarray::{Array2, ArrayView2};

/// Symmetric-normalized user-item adjacency `D^-1/2 A D^-1/2` in CSR form.
///
/// Nodes `0..n_users` are users and `n_users..n_users + n_items` are items.
#[derive(Clone, Debug)]
pub struct NormalizedGraph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    weights: Vec<f32>,
}

impl NormalizedGraph {
    pub fn new(n_users: usize, n_items: usize, edges: &[(usize, usize)]) -> Self {
        let n = n_users + n_items;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(u, i) in edges {
            adj[u].push(n_users + i);
            adj[n_users + i].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        let degree: Vec<f32> = adj.iter().map(|l| l.len() as f32).collect();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for (a, list) in adj.iter().enumerate() {
            for &b in list {
                neighbors.push(b);
                weights.push(1.0 / (degree[a] * degree[b]).sqrt());
            }
            offsets.push(neighbors.len());
        }
        NormalizedGraph {
            offsets,
            neighbors,
            weights,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    /// One propagation step `Â x`.
    pub fn apply(&self, x: ArrayView2<'_, f32>) -> Array2<f32> {
        let mut out = Array2::zeros(x.dim());
        for a in 0..self.num_nodes() {
            let mut row = out.row_mut(a);
            for e in self.offsets[a]..self.offsets[a + 1] {
                row.scaled_add(self.weights[e], &x.row(self.neighbors[e]));
            }
        }
        out
    }

    /// Layer average `(x + Âx + ... + Â^L x) / (L + 1)`.
    ///
    /// `Â` is symmetric, so the same map is its own adjoint and serves for
    /// the backward pass.
    pub fn layer_mean(&self, x: ArrayView2<'_, f32>, layers: usize) -> Array2<f32> {
        let mut acc = x.to_owned();
        let mut cur = x.to_owned();
        for _ in 0..layers {
            cur = self.apply(cur.view());
            acc += &cur;
        }
        acc / (layers as f32 + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn weights_follow_degrees() {
        // users 0,1; items 0,1; user0-item0, user0-item1, user1-item1
        let g = NormalizedGraph::new(2, 2, &[(0, 0), (0, 1), (1, 1)]);
        assert_eq!(g.degree(0), 2);
        assert_eq!(g.degree(3), 2);
        let x = array![[1.0f32], [0.0], [0.0], [0.0]];
        let y = g.apply(x.view());
        // item0 (node 2) has degree 1, user0 degree 2
        assert!((y[[2, 0]] - 1.0 / 2f32.sqrt()).abs() < 1e-6);
        assert!((y[[3, 0]] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn isolated_node_keeps_scaled_layer0() {
        let g = NormalizedGraph::new(3, 1, &[(0, 0), (1, 0)]);
        let x = array![[1.0f32, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]];
        let y = g.layer_mean(x.view(), 2);
        assert_eq!(y.row(2).to_vec(), vec![5.0 / 3.0, 2.0]);
    }

    #[test]
    fn propagation_is_self_adjoint() {
        let g = NormalizedGraph::new(3, 2, &[(0, 0), (1, 0), (1, 1), (2, 1)]);
        let a = array![[1.0f32], [-2.0], [0.5], [3.0], [1.5]];
        let b = array![[0.3f32], [0.7], [-1.0], [2.0], [0.1]];
        let lhs = (&g.layer_mean(a.view(), 2) * &b).sum();
        let rhs = (&a * &g.layer_mean(b.view(), 2)).sum();
        assert!((lhs - rhs).abs() < 1e-5);
    }
}
