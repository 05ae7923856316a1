use serde::{Deserialize, Serialize};

use super::{Rng, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major matrix of `f64`, one sample per row.
///
/// Every public constructor and arithmetic operation either returns a matrix
/// whose entries are all finite or reports [`TensorError::NonFinite`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self> {
        check_finite("filled", &[value])?;
        Ok(Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(TensorError::Length {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        check_finite("from_vec", &data)?;
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally long rows. An empty slice gives a 0×0 matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(TensorError::Length {
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    /// I.i.d. normal samples drawn row by row from `rng`.
    pub fn gaussian(rng: &mut Rng, rows: usize, cols: usize, mean: f64, std: f64) -> Result<Self> {
        if !(std >= 0.0) || !std.is_finite() || !mean.is_finite() {
            return Err(TensorError::Argument(format!(
                "gaussian needs finite mean and std >= 0, got mean={mean} std={std}"
            )));
        }
        let data = (0..rows * cols).map(|_| mean + std * rng.standard_normal()).collect();
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        assert!(row < self.rows && col < self.cols, "index ({row}, {col}) out of bounds");
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) -> Result<()> {
        if row >= self.rows || col >= self.cols {
            return Err(TensorError::Index {
                index: row.max(col),
                bound: if row >= self.rows { self.rows } else { self.cols },
            });
        }
        check_finite("set", &[value])?;
        self.data[row * self.cols + col] = value;
        Ok(())
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |r| self.row(r))
    }

    fn same_shape(&self, op: &'static str, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(TensorError::Shape {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    fn checked(self, op: &'static str) -> Result<Self> {
        check_finite(op, &self.data)?;
        Ok(self)
    }

    /// Standard product `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(TensorError::Shape {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out.checked("matmul")
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn matmul_tn(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(TensorError::Shape {
                op: "matmul_tn",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for n in 0..self.rows {
            let b_row = other.row(n);
            for (i, &a) in self.row(n).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out.checked("matmul_tn")
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_nt(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(TensorError::Shape {
                op: "matmul_nt",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = a_row.iter().zip(other.row(j)).map(|(a, b)| a * b).sum();
            }
        }
        out.checked("matmul_nt")
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with("sub", other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with("hadamard", other, |a, b| a * b)
    }

    pub fn zip_with(&self, op: &'static str, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        self.same_shape(op, other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
        .checked(op)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.same_shape("add_assign", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        check_finite("add_assign", &self.data)
    }

    pub fn scale(&self, factor: f64) -> Result<Matrix> {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Matrix> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
        .checked("map")
    }

    /// Adds a `1 × cols` row vector to every row.
    pub fn add_row_broadcast(&self, row: &Matrix) -> Result<Matrix> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(TensorError::Shape {
                op: "add_row_broadcast",
                left: self.shape(),
                right: row.shape(),
            });
        }
        let mut out = self.clone();
        for r in 0..out.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(&row.data) {
                *o += b;
            }
        }
        out.checked("add_row_broadcast")
    }

    /// `1 × cols` vector of column sums.
    pub fn column_sums(&self) -> Matrix {
        let mut out = Matrix::zeros(1, self.cols);
        for r in self.row_iter() {
            for (o, v) in out.data.iter_mut().zip(r) {
                *o += v;
            }
        }
        out
    }

    /// `1 × cols` vector of column means; zero rows give zeros.
    pub fn column_means(&self) -> Matrix {
        let mut out = self.column_sums();
        if self.rows > 0 {
            let n = self.rows as f64;
            out.data.iter_mut().for_each(|v| *v /= n);
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Copies the listed rows (repeats allowed) into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(TensorError::Index {
                    index: i,
                    bound: self.rows,
                });
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        })
    }

    /// Adds row `k` of `src` into row `indices[k]` of `self`.
    pub fn scatter_add_rows(&mut self, indices: &[usize], src: &Matrix) -> Result<()> {
        if indices.len() != src.rows || src.cols != self.cols {
            return Err(TensorError::Shape {
                op: "scatter_add_rows",
                left: self.shape(),
                right: src.shape(),
            });
        }
        for (k, &i) in indices.iter().enumerate() {
            if i >= self.rows {
                return Err(TensorError::Index {
                    index: i,
                    bound: self.rows,
                });
            }
            let cols = self.cols;
            let dst = &mut self.data[i * cols..(i + 1) * cols];
            for (d, s) in dst.iter_mut().zip(src.row(k)) {
                *d += s;
            }
        }
        check_finite("scatter_add_rows", &self.data)
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(parts: &[&Matrix]) -> Result<Matrix> {
        let cols = parts.iter().find(|m| m.rows > 0).map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for m in parts {
            if m.rows == 0 {
                continue;
            }
            if m.cols != cols {
                return Err(TensorError::Shape {
                    op: "vstack",
                    left: (rows, cols),
                    right: m.shape(),
                });
            }
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Index of the largest entry in each row; ties go to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        self.row_iter()
            .map(|r| {
                let mut best = 0;
                for (j, &v) in r.iter().enumerate().skip(1) {
                    if v > r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        self.same_shape("max_abs_diff", other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, Strategy};

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_cases() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(a.matmul(&Matrix::identity(2)).unwrap(), a);
        let col = m(&[&[5.0], &[7.0]]);
        assert_eq!(Matrix::identity(2).matmul(&col).unwrap(), col);
        let ones = m(&[&[1.0], &[1.0]]);
        assert_eq!(a.matmul(&ones).unwrap(), m(&[&[3.0], &[7.0]]));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(a.matmul(&a), Err(TensorError::Shape { .. })));
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let mut rng = Rng::new(3);
        let a = Matrix::gaussian(&mut rng, 5, 3, 0.0, 1.0).unwrap();
        let b = Matrix::gaussian(&mut rng, 5, 4, 0.0, 1.0).unwrap();
        let c = Matrix::gaussian(&mut rng, 6, 3, 0.0, 1.0).unwrap();
        let tn = a.matmul_tn(&b).unwrap();
        assert!(tn.max_abs_diff(&a.transpose().matmul(&b).unwrap()).unwrap() < 1e-12);
        let nt = a.matmul_nt(&c).unwrap();
        assert!(nt.max_abs_diff(&a.matmul(&c.transpose()).unwrap()).unwrap() < 1e-12);
    }

    #[test]
    fn non_finite_is_rejected() {
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        let big = Matrix::filled(1, 1, f64::MAX).unwrap();
        assert!(matches!(big.scale(10.0), Err(TensorError::NonFinite { .. })));
        assert!(matches!(big.add(&big), Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn gaussian_with_zero_std_is_constant() {
        let mut rng = Rng::new(1);
        let g = Matrix::gaussian(&mut rng, 3, 4, 2.5, 0.0).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn gaussian_rejects_negative_std() {
        let mut rng = Rng::new(1);
        assert!(matches!(
            Matrix::gaussian(&mut rng, 1, 1, 0.0, -1.0),
            Err(TensorError::Argument(_))
        ));
    }

    #[test]
    fn gaussian_is_deterministic_per_seed() {
        let a = Matrix::gaussian(&mut Rng::new(42), 8, 8, 0.0, 1.0).unwrap();
        let b = Matrix::gaussian(&mut Rng::new(42), 8, 8, 0.0, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_moments_over_a_million_samples() {
        let g = Matrix::gaussian(&mut Rng::new(2024), 1000, 1000, 0.0, 1.0).unwrap();
        let n = g.len() as f64;
        let mean = g.sum() / n;
        let var = g.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((0.99..=1.01).contains(&var), "var {var}");
    }

    #[test]
    fn argmax_ties_go_low() {
        let x = m(&[&[0.1, 2.0, 0.3], &[1.0, 1.0, 1.0]]);
        assert_eq!(x.argmax_rows(), vec![1, 0]);
    }

    #[test]
    fn scatter_add_accumulates_repeats() {
        let mut dst = Matrix::zeros(3, 2);
        let src = m(&[&[1.0, 1.0], &[2.0, 2.0], &[3.0, 3.0]]);
        dst.scatter_add_rows(&[0, 2, 0], &src).unwrap();
        assert_eq!(dst, m(&[&[4.0, 4.0], &[0.0, 0.0], &[2.0, 2.0]]));
    }

    fn arb_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(-10.0f64..10.0, rows * cols)
            .prop_map(move |d| Matrix::from_vec(rows, cols, d).unwrap())
    }

    proptest! {
        #[test]
        fn matmul_is_associative(
            a in arb_matrix(3, 4),
            b in arb_matrix(4, 5),
            c in arb_matrix(5, 2),
        ) {
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let scale = left.frobenius_norm().max(right.frobenius_norm()).max(1e-300);
            let diff = left.sub(&right).unwrap().frobenius_norm();
            prop_assert!(diff / scale < 1e-9, "relative error {}", diff / scale);
        }

        #[test]
        fn transpose_is_an_involution(a in arb_matrix(4, 7)) {
            prop_assert_eq!(a.transpose().transpose(), a);
        }
    }
}
