//! Sparse bipartite linear operator used by graph propagation.

use super::matrix::Matrix;
use super::real::Real;

/// Weighted bipartite graph between a "left" node set (users) and a "right"
/// node set (items), stored as CSR in both directions so products with dense
/// embedding matrices run in O(edges * dim) either way.
pub struct SparseBipartite<R: Real> {
    left_count: usize,
    right_count: usize,
    // left -> (right, coeff)
    left_offsets: Vec<usize>,
    left_entries: Vec<(u32, R)>,
    // right -> (left, coeff)
    right_offsets: Vec<usize>,
    right_entries: Vec<(u32, R)>,
}

impl<R: Real> SparseBipartite<R> {
    /// Builds the operator from `(left, right, coefficient)` edges.
    pub fn from_edges(left_count: usize, right_count: usize, edges: &[(u32, u32, R)]) -> Self {
        let mut left_degree = vec![0usize; left_count];
        let mut right_degree = vec![0usize; right_count];
        for &(l, r, _) in edges {
            left_degree[l as usize] += 1;
            right_degree[r as usize] += 1;
        }
        let left_offsets = prefix_sum(&left_degree);
        let right_offsets = prefix_sum(&right_degree);

        let mut left_entries = vec![(0u32, R::zero()); edges.len()];
        let mut right_entries = vec![(0u32, R::zero()); edges.len()];
        let mut left_cursor = left_offsets.clone();
        let mut right_cursor = right_offsets.clone();
        for &(l, r, c) in edges {
            let li = l as usize;
            let ri = r as usize;
            left_entries[left_cursor[li]] = (r, c);
            left_cursor[li] += 1;
            right_entries[right_cursor[ri]] = (l, c);
            right_cursor[ri] += 1;
        }
        SparseBipartite {
            left_count,
            right_count,
            left_offsets,
            left_entries,
            right_offsets,
            right_entries,
        }
    }

    pub fn left_count(&self) -> usize {
        self.left_count
    }

    pub fn right_count(&self) -> usize {
        self.right_count
    }

    pub fn edge_count(&self) -> usize {
        self.left_entries.len()
    }

    /// Iterates `(left, right, coeff)` grouped by left node.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32, R)> + '_ {
        (0..self.left_count).flat_map(move |l| {
            self.left_entries[self.left_offsets[l]..self.left_offsets[l + 1]]
                .iter()
                .map(move |&(r, c)| (l as u32, r, c))
        })
    }

    /// out[l, :] = sum over edges (l, r) of coeff * right_values[r, :].
    pub fn apply_left(&self, right_values: &Matrix<R>) -> Matrix<R> {
        assert_eq!(right_values.rows(), self.right_count, "shape mismatch");
        let dim = right_values.cols();
        let mut out = Matrix::zeros(self.left_count, dim);
        for l in 0..self.left_count {
            let row = out.row_mut(l);
            for &(r, c) in &self.left_entries[self.left_offsets[l]..self.left_offsets[l + 1]] {
                let src = right_values.row(r as usize);
                for j in 0..dim {
                    row[j] = row[j] + c * src[j];
                }
            }
        }
        out.debug_check_finite();
        out
    }

    /// out[r, :] = sum over edges (l, r) of coeff * left_values[l, :].
    pub fn apply_right(&self, left_values: &Matrix<R>) -> Matrix<R> {
        assert_eq!(left_values.rows(), self.left_count, "shape mismatch");
        let dim = left_values.cols();
        let mut out = Matrix::zeros(self.right_count, dim);
        for r in 0..self.right_count {
            let row = out.row_mut(r);
            for &(l, c) in &self.right_entries[self.right_offsets[r]..self.right_offsets[r + 1]] {
                let src = left_values.row(l as usize);
                for j in 0..dim {
                    row[j] = row[j] + c * src[j];
                }
            }
        }
        out.debug_check_finite();
        out
    }
}

fn prefix_sum(degrees: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(degrees.len() + 1);
    let mut total = 0usize;
    offsets.push(0);
    for &d in degrees {
        total += d;
        offsets.push(total);
    }
    offsets
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apply_matches_dense_product() {
        // 2 left, 3 right, edges with distinct coefficients.
        let edges = vec![(0u32, 0u32, 2.0f64), (0, 2, 3.0), (1, 1, 5.0)];
        let op = SparseBipartite::from_edges(2, 3, &edges);
        let x = Matrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let left = op.apply_left(&x);
        assert_eq!(left.row(0), &[2.0 + 3.0, 3.0]);
        assert_eq!(left.row(1), &[0.0, 5.0]);

        let y = Matrix::from_vec(2, 1, vec![1.0, 2.0]);
        let right = op.apply_right(&y);
        assert_eq!(right.data(), &[2.0, 10.0, 3.0]);
    }
}
