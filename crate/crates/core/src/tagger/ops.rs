//! Dense row-major matrices and the layer primitives the taggers are built
//! from, each with its backward pass.

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Matrix<T>) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Columns `start..start + width` as a new contiguous matrix.
    pub fn columns(&self, start: usize, width: usize) -> Matrix<T> {
        let mut out = Matrix::zeros(self.rows, width);
        for i in 0..self.rows {
            out.row_mut(i).copy_from_slice(&self.row(i)[start..start + width]);
        }
        out
    }

    pub fn set_columns(&mut self, start: usize, block: &Matrix<T>) {
        for i in 0..self.rows {
            self.row_mut(i)[start..start + block.cols].copy_from_slice(block.row(i));
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// `a · b` with optional transposes; shapes refer to the stored matrices.
pub fn matmul<T: Scalar>(a: &Matrix<T>, trans_a: bool, b: &Matrix<T>, trans_b: bool) -> Matrix<T> {
    let (m, k) = if trans_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if trans_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, k2, "matmul inner dimension");
    let mut out = Matrix::zeros(m, n);
    T::gemm(m, k, n, T::one(), &a.data, trans_a, &b.data, trans_b, T::zero(), &mut out.data);
    out
}

/// `y = x W + b` with `W` stored `in x out`.
pub fn linear<T: Scalar>(x: &Matrix<T>, w: &[T], b: &[T]) -> Matrix<T> {
    let out_dim = b.len();
    assert_eq!(w.len(), x.cols * out_dim, "linear weight shape");
    let mut y = Matrix::zeros(x.rows, out_dim);
    for i in 0..x.rows {
        y.row_mut(i).copy_from_slice(b);
    }
    T::gemm(x.rows, x.cols, out_dim, T::one(), &x.data, false, w, false, T::one(), &mut y.data);
    y
}

/// Accumulates `dW += xᵀ dy` and `db += Σ dy`; returns `dx = dy Wᵀ` when
/// `need_dx`.
pub fn linear_backward<T: Scalar>(
    x: &Matrix<T>,
    w: &[T],
    dy: &Matrix<T>,
    dw: &mut [T],
    db: &mut [T],
    need_dx: bool,
) -> Option<Matrix<T>> {
    let out_dim = dy.cols;
    T::gemm(x.cols, x.rows, out_dim, T::one(), &x.data, true, &dy.data, false, T::one(), dw);
    for i in 0..dy.rows {
        for (acc, &g) in db.iter_mut().zip(dy.row(i)) {
            *acc += g;
        }
    }
    need_dx.then(|| {
        let mut dx = Matrix::zeros(dy.rows, x.cols);
        T::gemm(dy.rows, out_dim, x.cols, T::one(), &dy.data, false, w, true, T::zero(), &mut dx.data);
        dx
    })
}

pub const LN_EPS: f64 = 1e-5;

pub struct LayerNormCache<T> {
    pub xhat: Matrix<T>,
    pub inv_std: Vec<T>,
}

pub fn layer_norm<T: Scalar>(x: &Matrix<T>, gain: &[T], bias: &[T]) -> (Matrix<T>, LayerNormCache<T>) {
    let d = x.cols;
    let dn = T::c(d as f64);
    let eps = T::c(LN_EPS);
    let mut y = Matrix::zeros(x.rows, d);
    let mut xhat = Matrix::zeros(x.rows, d);
    let mut inv_std = Vec::with_capacity(x.rows);
    for i in 0..x.rows {
        let row = x.row(i);
        let mean = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let is = T::one() / (var + eps).sqrt();
        inv_std.push(is);
        let xh = xhat.row_mut(i);
        for j in 0..d {
            xh[j] = (row[j] - mean) * is;
        }
        let yr = y.row_mut(i);
        for j in 0..d {
            yr[j] = gain[j] * xhat.data[i * d + j] + bias[j];
        }
    }
    (y, LayerNormCache { xhat, inv_std })
}

pub fn layer_norm_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    gain: &[T],
    dy: &Matrix<T>,
    dgain: &mut [T],
    dbias: &mut [T],
) -> Matrix<T> {
    let d = dy.cols;
    let dn = T::c(d as f64);
    let mut dx = Matrix::zeros(dy.rows, d);
    let mut dxhat = vec![T::zero(); d];
    for i in 0..dy.rows {
        let g = dy.row(i);
        let xh = cache.xhat.row(i);
        for j in 0..d {
            dgain[j] += g[j] * xh[j];
            dbias[j] += g[j];
            dxhat[j] = g[j] * gain[j];
        }
        let mean_d = dxhat.iter().copied().sum::<T>() / dn;
        let mean_dx = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / dn;
        let is = cache.inv_std[i];
        let out = dx.row_mut(i);
        for j in 0..d {
            out[j] = is * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Tanh-approximated GELU.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::c(0.5);
    let inner = T::c(GELU_C) * (x + T::c(GELU_A) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::c(0.5);
    let inner = T::c(GELU_C) * (x + T::c(GELU_A) * x * x * x);
    let t = inner.tanh();
    let dinner = T::c(GELU_C) * (T::one() + T::c(3.0 * GELU_A) * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}

/// Row-wise softmax.
pub fn softmax_rows<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    let mut out = x.clone();
    for i in 0..out.rows {
        softmax_in_place(out.row_mut(i));
    }
    out
}

pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `log Σ exp(row)`, stable.
pub fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln()
}

/// Cross-entropy of `softmax(row)` against class `target`.
pub fn cross_entropy<T: Scalar>(row: &[T], target: usize) -> T {
    log_sum_exp(row) - row[target]
}
