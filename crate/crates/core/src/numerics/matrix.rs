//! Dense row-major matrices.

use super::real::Real;

/// Dense matrix with row-major storage.
///
/// Debug builds verify that no public operation produces NaN or infinite
/// entries; release builds skip the scan.
#[derive(Clone, PartialEq)]
pub struct Matrix<R: Real> {
    rows: usize,
    cols: usize,
    data: Vec<R>,
}

impl<R: Real> Matrix<R> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![R::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: R) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Builds a matrix from row-major data; `data.len()` must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<R>) -> Self {
        assert_eq!(
            rows * cols,
            data.len(),
            "matrix {}x{} needs {} values, got {}",
            rows,
            cols,
            rows * cols,
            data.len()
        );
        let m = Matrix { rows, cols, data };
        m.debug_check_finite();
        m
    }

    pub fn from_rows(rows: &[Vec<R>]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            assert_eq!(row.len(), cols, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix::from_vec(rows.len(), cols, data)
    }

    /// 1x1 matrix holding a scalar.
    pub fn scalar(value: R) -> Self {
        Matrix::from_vec(1, 1, vec![value])
    }

    /// Column vector (n x 1) from a slice.
    pub fn column(values: &[R]) -> Self {
        Matrix::from_vec(values.len(), 1, values.to_vec())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> R {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: R) {
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[R] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [R] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn data(&self) -> &[R] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    /// Scalar payload of a 1x1 matrix.
    pub fn scalar_value(&self) -> R {
        assert_eq!(self.shape(), (1, 1), "not a scalar matrix");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    #[inline]
    pub fn debug_check_finite(&self) {
        debug_assert!(self.is_finite(), "matrix contains NaN or infinite entries");
    }

    pub fn map(&self, f: impl Fn(R) -> R) -> Matrix<R> {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn add(&self, other: &Matrix<R>) -> Matrix<R> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix<R>) -> Matrix<R> {
        self.zip(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix<R>) -> Matrix<R> {
        self.zip(other, |a, b| a * b)
    }

    pub fn scale(&self, factor: R) -> Matrix<R> {
        self.map(|v| v * factor)
    }

    fn zip(&self, other: &Matrix<R>, f: impl Fn(R, R) -> R) -> Matrix<R> {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    /// In-place `self += factor * other`.
    pub fn axpy(&mut self, factor: R, other: &Matrix<R>) {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a + factor * b;
        }
    }

    pub fn transpose(&self) -> Matrix<R> {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Dense product `self * rhs`.
    pub fn matmul(&self, rhs: &Matrix<R>) -> Matrix<R> {
        assert_eq!(
            self.cols, rhs.rows,
            "matmul shape mismatch: {}x{} * {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        let n = rhs.cols;
        for i in 0..self.rows {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                let rhs_row = &rhs.data[k * n..(k + 1) * n];
                for j in 0..n {
                    out_row[j] = out_row[j] + a * rhs_row[j];
                }
            }
        }
        out.debug_check_finite();
        out
    }

    /// Sum of all entries.
    pub fn sum(&self) -> R {
        self.data.iter().copied().fold(R::zero(), |a, b| a + b)
    }

    /// Squared Frobenius norm.
    pub fn squared_norm(&self) -> R {
        self.data.iter().map(|&v| v * v).sum()
    }

    /// Lossy conversion to the 32-bit storage scalar.
    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.data.iter().map(|v| v.as_f32()).collect()
    }

    pub fn from_f32_slice(rows: usize, cols: usize, values: &[f32]) -> Self {
        let data = values.iter().map(|&v| R::from_f32(v)).collect();
        Matrix::from_vec(rows, cols, data)
    }
}

impl<R: Real> std::fmt::Debug for Matrix<R> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Matrix<{}x{}>", self.rows, self.cols)?;
        if self.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Matrix::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b);
        assert_eq!(c.shape(), (2, 2));
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transpose_roundtrip() {
        let a = Matrix::from_vec(2, 3, vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(a.transpose().transpose().data(), a.data());
    }

    #[test]
    #[should_panic(expected = "matmul shape mismatch")]
    fn matmul_rejects_bad_shapes() {
        let a = Matrix::<f64>::zeros(2, 3);
        let b = Matrix::<f64>::zeros(2, 3);
        let _ = a.matmul(&b);
    }
}
