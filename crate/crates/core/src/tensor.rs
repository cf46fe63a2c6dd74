//! Dense third-order tensors and the matrix algebra the ALS solver needs.
//!
//! Linearization is first-index-fastest everywhere: tensor entry `(i, j, k)` of a
//! `d1 x d2 x d3` tensor lives at offset `i + j*d1 + k*d1*d2`, and matrices are
//! stored column-major (`(r, c)` at `r + c*rows`). Mode-n unfoldings follow from
//! that single rule:
//!
//! | mode | shape            | column of `(i, j, k)` |
//! |------|------------------|-----------------------|
//! | 1    | `d1 x (d2*d3)`   | `j + k*d2`            |
//! | 2    | `d2 x (d1*d3)`   | `i + k*d1`            |
//! | 3    | `d3 x (d1*d2)`   | `i + j*d1`            |
//!
//! With these conventions the mode-1 unfolding shares its buffer layout with the
//! tensor itself, and `T_(1) = X diag(λ) (Z ⊙ Y)^T` for the Khatri-Rao product `⊙`.

use std::ops::{Add, Mul};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type C64 = Complex64;

/// Scalars the tensor and matrix types can hold.
pub trait Scalar: Copy + PartialEq + Add<Output = Self> + Mul<Output = Self> + Send + Sync {
    const ZERO: Self;
    const ONE: Self;
    fn abs_sq(self) -> f64;
    fn is_finite(self) -> bool;
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn abs_sq(self) -> f64 {
        self * self
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

impl Scalar for C64 {
    const ZERO: Self = C64::new(0.0, 0.0);
    const ONE: Self = C64::new(1.0, 0.0);
    fn abs_sq(self) -> f64 {
        self.norm_sqr()
    }
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

/// Tensor dimensions `(d1, d2, d3)`.
pub type Dims = [usize; 3];

/// Dense third-order tensor, first index fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3<T> {
    dims: Dims,
    data: Vec<T>,
}

/// Complex channel records and correlation tensors.
pub type ComplexTensor3 = Tensor3<C64>;
/// Real tensors fed to the CP decomposition.
pub type RealTensor3 = Tensor3<f64>;

fn check_dims(dims: Dims) -> Result<usize> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::contract(format!("tensor dims must be positive, got {dims:?}")));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::contract(format!("tensor dims {dims:?} overflow")))
}

impl<T: Scalar> Tensor3<T> {
    pub fn zeros(dims: Dims) -> Result<Self> {
        let len = check_dims(dims)?;
        Ok(Self { dims, data: vec![T::ZERO; len] })
    }

    /// Wraps an existing buffer; rejects a wrong length or any non-finite entry.
    pub fn from_vec(dims: Dims, data: Vec<T>) -> Result<Self> {
        let len = check_dims(dims)?;
        if data.len() != len {
            return Err(Error::contract(format!(
                "tensor {dims:?} needs {len} entries, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("tensor entries must be finite"));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> T) -> Result<Self> {
        let len = check_dims(dims)?;
        let mut data = Vec::with_capacity(len);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    data.push(f(i, j, k));
                }
            }
        }
        Self::from_vec(dims, data)
    }

    pub(crate) fn from_vec_unchecked(dims: Dims, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), dims.iter().product::<usize>());
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.offset(i, j, k)]
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Tensor3<U> {
        Tensor3 { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&self, alpha: T) -> Self {
        self.map(|v| v * alpha)
    }

    /// Frontal slice `(:, :, k)` as a `d1 x d2` column-major matrix.
    pub fn frontal_slice(&self, k: usize) -> Matrix<T> {
        let n = self.dims[0] * self.dims[1];
        Matrix::from_vec_unchecked(self.dims[0], self.dims[1], self.data[k * n..(k + 1) * n].to_vec())
    }

    /// Keeps the first `n` indices of the third mode (a contiguous prefix).
    pub fn truncate_mode3(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.dims[2] {
            return Err(Error::contract(format!(
                "cannot keep {n} of {} mode-3 indices",
                self.dims[2]
            )));
        }
        let dims = [self.dims[0], self.dims[1], n];
        Ok(Self { dims, data: self.data[..dims.iter().product()].to_vec() })
    }

    /// Sub-tensor covering first-mode indices `start..start + len`.
    pub fn slice_mode1(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.dims[0] {
            return Err(Error::contract(format!(
                "mode-1 range {start}..{} out of bounds for {}",
                start + len,
                self.dims[0]
            )));
        }
        let d1 = self.dims[0];
        let mut data = Vec::with_capacity(len * self.dims[1] * self.dims[2]);
        for col in self.data.chunks_exact(d1) {
            data.extend_from_slice(&col[start..start + len]);
        }
        Ok(Self { dims: [len, self.dims[1], self.dims[2]], data })
    }
}

impl Tensor3<f64> {
    /// Entrywise difference `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::contract(format!(
                "dims mismatch: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self { dims: self.dims, data })
    }
}

impl Tensor3<C64> {
    /// Entrywise magnitude `|t|`.
    pub fn abs(&self) -> RealTensor3 {
        self.map(|z| z.norm())
    }
}

/// Dense column-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

pub type RealMatrix = Matrix<f64>;
pub type ComplexMatrix = Matrix<C64>;

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::contract(format!("matrix shape {rows}x{cols} must be positive")));
        }
        Ok(Self { rows, cols, data: vec![T::ZERO; rows * cols] })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::contract(format!(
                "matrix {rows}x{cols} cannot hold {} entries",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds from row slices (convenient for hand-written literals).
    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::contract("ragged matrix rows"));
        }
        Self::from_fn(r, c, |i, j| rows[i][j])
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut m = Self::zeros(rows, cols)?;
        for c in 0..cols {
            for r in 0..rows {
                m.data[r + c * rows] = f(r, c);
            }
        }
        Ok(m)
    }

    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r + c * self.rows]
    }

    pub fn column(&self, c: usize) -> &[T] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }
}

/// Mode of an unfolding (1-based, as in the usual tensor notation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    One,
    Two,
    Three,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::One, Mode::Two, Mode::Three];

    pub fn index(self) -> usize {
        match self {
            Mode::One => 0,
            Mode::Two => 1,
            Mode::Three => 2,
        }
    }

    fn unfolded_shape(self, dims: Dims) -> (usize, usize) {
        let [d1, d2, d3] = dims;
        match self {
            Mode::One => (d1, d2 * d3),
            Mode::Two => (d2, d1 * d3),
            Mode::Three => (d3, d1 * d2),
        }
    }
}

impl TryFrom<usize> for Mode {
    type Error = Error;

    fn try_from(n: usize) -> Result<Self> {
        match n {
            1 => Ok(Mode::One),
            2 => Ok(Mode::Two),
            3 => Ok(Mode::Three),
            _ => Err(Error::contract(format!("unfolding mode must be 1, 2 or 3, got {n}"))),
        }
    }
}

/// Mode-n unfolding (matricization) of a tensor.
pub fn unfold<T: Scalar>(t: &Tensor3<T>, mode: Mode) -> Matrix<T> {
    let [d1, d2, d3] = t.dims;
    let (rows, cols) = mode.unfolded_shape(t.dims);
    if mode == Mode::One {
        return Matrix::from_vec_unchecked(rows, cols, t.data.clone());
    }
    let mut out = vec![T::ZERO; rows * cols];
    for k in 0..d3 {
        for j in 0..d2 {
            for i in 0..d1 {
                let v = t.data[i + d1 * (j + d2 * k)];
                let (r, c) = match mode {
                    Mode::Two => (j, i + k * d1),
                    Mode::Three => (k, i + j * d1),
                    Mode::One => unreachable!(),
                };
                out[r + c * rows] = v;
            }
        }
    }
    Matrix::from_vec_unchecked(rows, cols, out)
}

/// Inverse of [`unfold`].
pub fn fold<T: Scalar>(m: &Matrix<T>, mode: Mode, dims: Dims) -> Result<Tensor3<T>> {
    check_dims(dims)?;
    let expected = mode.unfolded_shape(dims);
    if m.shape() != expected {
        return Err(Error::contract(format!(
            "mode-{} fold of {dims:?} needs a {}x{} matrix, got {}x{}",
            mode.index() + 1,
            expected.0,
            expected.1,
            m.rows,
            m.cols
        )));
    }
    let [d1, d2, d3] = dims;
    if mode == Mode::One {
        return Ok(Tensor3 { dims, data: m.data.clone() });
    }
    let mut data = vec![T::ZERO; d1 * d2 * d3];
    for k in 0..d3 {
        for j in 0..d2 {
            for i in 0..d1 {
                let (r, c) = match mode {
                    Mode::Two => (j, i + k * d1),
                    Mode::Three => (k, i + j * d1),
                    Mode::One => unreachable!(),
                };
                data[i + d1 * (j + d2 * k)] = m.data[r + c * m.rows];
            }
        }
    }
    Ok(Tensor3 { dims, data })
}

/// Frobenius norm: square root of the summed squared magnitudes.
pub trait FrobeniusNorm {
    fn frobenius_norm(&self) -> f64;
}

fn frob<T: Scalar>(data: &[T]) -> f64 {
    data.iter().map(|v| v.abs_sq()).sum::<f64>().sqrt()
}

impl<T: Scalar> FrobeniusNorm for Tensor3<T> {
    fn frobenius_norm(&self) -> f64 {
        frob(&self.data)
    }
}

impl<T: Scalar> FrobeniusNorm for Matrix<T> {
    fn frobenius_norm(&self) -> f64 {
        frob(&self.data)
    }
}

pub fn frobenius_norm<X: FrobeniusNorm + ?Sized>(x: &X) -> f64 {
    x.frobenius_norm()
}

/// Entrywise (Hadamard) product.
pub fn hadamard<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.shape() != b.shape() {
        return Err(Error::contract(format!(
            "hadamard shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| x * y).collect();
    Ok(Matrix::from_vec_unchecked(a.rows, a.cols, data))
}

/// Column-wise Kronecker product: column `l` of the result is `kron(a[:, l], b[:, l])`,
/// so row `ia * b.rows + ib` holds `a[ia, l] * b[ib, l]`.
pub fn khatri_rao<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.cols {
        return Err(Error::contract(format!(
            "khatri-rao needs equal column counts, got {} and {}",
            a.cols, b.cols
        )));
    }
    let rows = a.rows * b.rows;
    let mut data = Vec::with_capacity(rows * a.cols);
    for l in 0..a.cols {
        for &x in a.column(l) {
            data.extend(b.column(l).iter().map(|&y| x * y));
        }
    }
    Ok(Matrix::from_vec_unchecked(rows, a.cols, data))
}

/// Plain matrix product, used by tests and small helpers.
pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return Err(Error::contract(format!(
            "matmul inner dims differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![T::ZERO; a.rows * b.cols];
    for c in 0..b.cols {
        for p in 0..a.cols {
            let w = b.data[p + c * b.rows];
            let col = &a.data[p * a.rows..(p + 1) * a.rows];
            for (o, &x) in out[c * a.rows..(c + 1) * a.rows].iter_mut().zip(col) {
                *o = *o + x * w;
            }
        }
    }
    Ok(Matrix::from_vec_unchecked(a.rows, b.cols, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index_tensor() -> RealTensor3 {
        Tensor3::from_fn([2, 3, 4], |i, j, k| (i + 10 * j + 100 * k) as f64).unwrap()
    }

    #[test]
    fn degenerate_unfold() {
        let t = Tensor3::from_vec([1, 1, 1], vec![5.0]).unwrap();
        let m = unfold(&t, Mode::One);
        assert_eq!(m.shape(), (1, 1));
        assert_eq!(m.get(0, 0), 5.0);
    }

    #[test]
    fn mode2_index_map_matches_brute_force() {
        let t = index_tensor();
        let m = unfold(&t, Mode::Two);
        assert_eq!(m.shape(), (3, 8));
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    assert_eq!(m.get(j, i + k * 2), (i + 10 * j + 100 * k) as f64);
                }
            }
        }
        assert_eq!(fold(&m, Mode::Two, [2, 3, 4]).unwrap(), t);
    }

    #[test]
    fn mode1_and_mode3_columns() {
        let t = index_tensor();
        let m1 = unfold(&t, Mode::One);
        let m3 = unfold(&t, Mode::Three);
        assert_eq!(m1.shape(), (2, 12));
        assert_eq!(m3.shape(), (4, 6));
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    let v = (i + 10 * j + 100 * k) as f64;
                    assert_eq!(m1.get(i, j + k * 3), v);
                    assert_eq!(m3.get(k, i + j * 2), v);
                }
            }
        }
    }

    #[test]
    fn fold_single_entry() {
        let m = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        let t = fold(&m, Mode::Three, [1, 1, 1]).unwrap();
        assert_eq!(t.data(), &[2.0]);
    }

    #[test]
    fn fold_rejects_wrong_shape() {
        let m = Matrix::<f64>::zeros(3, 7).unwrap();
        assert!(matches!(fold(&m, Mode::Two, [2, 3, 4]), Err(Error::Contract(_))));
    }

    #[test]
    fn invalid_mode_is_contract_error() {
        assert!(matches!(Mode::try_from(0), Err(Error::Contract(_))));
        assert!(matches!(Mode::try_from(4), Err(Error::Contract(_))));
        assert_eq!(Mode::try_from(2).unwrap(), Mode::Two);
    }

    #[test]
    fn norms() {
        let z = RealTensor3::zeros([2, 2, 2]).unwrap();
        assert_eq!(frobenius_norm(&z), 0.0);
        let m = ComplexMatrix::from_rows(&[&[C64::new(3.0, 0.0), C64::new(0.0, 4.0)]]).unwrap();
        assert!((frobenius_norm(&m) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn hadamard_examples() {
        let a = RealMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let b = RealMatrix::from_rows(&[&[2.0, 0.0], &[0.0, 2.0]]).unwrap();
        let expected = RealMatrix::from_rows(&[&[2.0, 0.0], &[0.0, 8.0]]).unwrap();
        assert_eq!(hadamard(&a, &b).unwrap(), expected);
        let ones = RealMatrix::from_fn(2, 2, |_, _| 1.0).unwrap();
        assert_eq!(hadamard(&a, &ones).unwrap(), a);
        let c = RealMatrix::zeros(2, 3).unwrap();
        assert!(hadamard(&a, &c).is_err());
    }

    #[test]
    fn khatri_rao_examples() {
        let a = RealMatrix::from_vec(1, 1, vec![2.0]).unwrap();
        let b = RealMatrix::from_vec(1, 1, vec![3.0]).unwrap();
        assert_eq!(khatri_rao(&a, &b).unwrap().data(), &[6.0]);
        let a = RealMatrix::from_vec(2, 1, vec![1.0, 2.0]).unwrap();
        let b = RealMatrix::from_vec(2, 1, vec![3.0, 4.0]).unwrap();
        assert_eq!(khatri_rao(&a, &b).unwrap().data(), &[3.0, 4.0, 6.0, 8.0]);
        let c = RealMatrix::zeros(2, 2).unwrap();
        assert!(khatri_rao(&a, &c).is_err());
    }

    #[test]
    fn time_slicing_and_truncation() {
        let t = index_tensor();
        let s = t.slice_mode1(1, 1).unwrap();
        assert_eq!(s.dims(), [1, 3, 4]);
        assert_eq!(s.get(0, 2, 3), 1.0 + 20.0 + 300.0);
        let tr = t.truncate_mode3(2).unwrap();
        assert_eq!(tr.dims(), [2, 3, 2]);
        assert_eq!(tr.get(1, 2, 1), t.get(1, 2, 1));
        assert!(t.slice_mode1(1, 2).is_err());
        assert!(t.truncate_mode3(5).is_err());
    }

    #[test]
    fn from_vec_rejects_non_finite() {
        assert!(RealTensor3::from_vec([1, 1, 2], vec![1.0, f64::NAN]).is_err());
        assert!(RealTensor3::from_vec([1, 1, 2], vec![1.0]).is_err());
        assert!(RealTensor3::zeros([0, 1, 1]).is_err());
    }
}
