//! Minimal dense row-major matrices over a floating scalar, with exactly
//! the operations the sequence model needs.

use num_traits::Float;

/// Scalar constraint for model numerics.
pub trait Scalar:
    Float + num_traits::NumAssignOps + Send + Sync + std::fmt::Debug + 'static
{
}

impl<T> Scalar for T where
    T: Float + num_traits::NumAssignOps + Send + Sync + std::fmt::Debug + 'static
{
}

/// Converts an f64 constant into the working scalar.
pub fn s<S: Scalar>(x: f64) -> S {
    S::from(x).expect("scalar conversion")
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Mat<S> {
        Mat { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<S>) -> Mat<S> {
        assert_eq!(data.len(), rows * cols);
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.cols + j] += v;
    }

    /// self += other, elementwise.
    pub fn add_assign(&mut self, other: &Mat<S>) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
    }

    /// C = A · B.
    pub fn matmul(&self, b: &Mat<S>) -> Mat<S> {
        assert_eq!(self.cols, b.rows);
        let mut out = Mat::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            let arow = self.row(i);
            for (p, &a) in arow.iter().enumerate() {
                if a == S::zero() {
                    continue;
                }
                let brow = b.row(p);
                let orow = out.row_mut(i);
                for (o, &bb) in orow.iter_mut().zip(brow.iter()) {
                    *o += a * bb;
                }
            }
        }
        out
    }

    /// C = A · Bᵀ.
    pub fn matmul_nt(&self, b: &Mat<S>) -> Mat<S> {
        assert_eq!(self.cols, b.cols);
        let mut out = Mat::zeros(self.rows, b.rows);
        for i in 0..self.rows {
            let arow = self.row(i);
            for j in 0..b.rows {
                let brow = b.row(j);
                let mut acc = S::zero();
                for (&a, &bb) in arow.iter().zip(brow.iter()) {
                    acc += a * bb;
                }
                out.data[i * b.rows + j] = acc;
            }
        }
        out
    }

    /// C = Aᵀ · B.
    pub fn matmul_tn(&self, b: &Mat<S>) -> Mat<S> {
        assert_eq!(self.rows, b.rows);
        let mut out = Mat::zeros(self.cols, b.cols);
        for p in 0..self.rows {
            let arow = self.row(p);
            let brow = b.row(p);
            for (i, &a) in arow.iter().enumerate() {
                if a == S::zero() {
                    continue;
                }
                let orow = out.row_mut(i);
                for (o, &bb) in orow.iter_mut().zip(brow.iter()) {
                    *o += a * bb;
                }
            }
        }
        out
    }

    /// Adds a row vector to every row.
    pub fn add_row_vec(&mut self, v: &[S]) {
        assert_eq!(self.cols, v.len());
        for i in 0..self.rows {
            for (x, &b) in self.row_mut(i).iter_mut().zip(v.iter()) {
                *x += b;
            }
        }
    }

    /// Column sums as a vector.
    pub fn col_sums(&self) -> Vec<S> {
        let mut out = vec![S::zero(); self.cols];
        for i in 0..self.rows {
            for (o, &x) in out.iter_mut().zip(self.row(i).iter()) {
                *o += x;
            }
        }
        out
    }
}
