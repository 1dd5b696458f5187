use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar type usable on the tape. Implemented for `f32` (training)
/// and `f64` (gradient checks).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Width in bytes of the little-endian encoding.
    const WIDTH: u8;

    /// `c = alpha * a·b + beta * c` for row/column-strided matrices.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-overlapping (for `c`)
    /// `m×k`, `k×n` and `m×n` matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    #[inline]
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("scalar conversion")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("scalar conversion")
    }
}

impl Scalar for f32 {
    const WIDTH: u8 = 4;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> f32 {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const WIDTH: u8 = 8;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> f64 {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

/// Strided view of a row-major matrix inside a flat buffer.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a, S> {
    pub data: &'a [S],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
    pub offset: usize,
}

impl<'a, S: Scalar> MatRef<'a, S> {
    /// Dense row-major `rows×cols` view.
    pub fn new(data: &'a [S], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        Self { data, rows, cols, row_stride: cols, col_stride: 1, offset: 0 }
    }

    /// Column block `[col0, col0+width)` of a dense row-major matrix.
    pub fn cols(data: &'a [S], rows: usize, total_cols: usize, col0: usize, width: usize) -> Self {
        debug_assert!(col0 + width <= total_cols);
        debug_assert!(data.len() >= rows * total_cols);
        Self { data, rows, cols: width, row_stride: total_cols, col_stride: 1, offset: col0 }
    }

    /// Row block `[row0, row0+count)`.
    pub fn rows_slice(self, row0: usize, count: usize) -> Self {
        debug_assert!(row0 + count <= self.rows);
        Self { rows: count, offset: self.offset + row0 * self.row_stride, ..self }
    }

    pub fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
            ..self
        }
    }

    fn check(&self) {
        if self.rows == 0 || self.cols == 0 {
            return;
        }
        let last = self.offset + (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride;
        assert!(last < self.data.len(), "matrix view out of bounds");
    }
}

/// Mutable strided matrix view.
pub struct MatMut<'a, S> {
    pub data: &'a mut [S],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub offset: usize,
}

impl<'a, S: Scalar> MatMut<'a, S> {
    pub fn new(data: &'a mut [S], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        Self { data, rows, cols, row_stride: cols, offset: 0 }
    }

    pub fn cols(data: &'a mut [S], rows: usize, total_cols: usize, col0: usize, width: usize) -> Self {
        debug_assert!(col0 + width <= total_cols);
        Self { data, rows, cols: width, row_stride: total_cols, offset: col0 }
    }
}

/// `c = alpha * a·b + beta * c`.
pub fn gemm<S: Scalar>(alpha: S, a: MatRef<'_, S>, b: MatRef<'_, S>, beta: S, c: MatMut<'_, S>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!(a.rows, c.rows, "gemm output rows");
    assert_eq!(b.cols, c.cols, "gemm output cols");
    a.check();
    b.check();
    if c.rows > 0 && c.cols > 0 {
        let last = c.offset + (c.rows - 1) * c.row_stride + (c.cols - 1);
        assert!(last < c.data.len(), "output view out of bounds");
    }
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    if a.cols == 0 {
        // Empty inner dimension: only the beta scaling applies.
        for r in 0..c.rows {
            for col in 0..c.cols {
                let v = &mut c.data[c.offset + r * c.row_stride + col];
                *v = if beta == S::zero() { S::zero() } else { *v * beta };
            }
        }
        return;
    }
    // SAFETY: bounds of all three views were checked above; `c` is a unique
    // borrow so it cannot alias `a` or `b`.
    unsafe {
        S::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr().add(b.offset),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.row_stride as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_with_transpose_and_column_blocks() {
        let a: Vec<f64> = (0..12).map(|i| i as f64 * 0.5 - 2.0).collect(); // 3x4
        let b: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect(); // 2x4
        let mut c = vec![0.0; 6];
        gemm(1.0, MatRef::new(&a, 3, 4), MatRef::new(&b, 2, 4).t(), 0.0, MatMut::new(&mut c, 3, 2));
        for i in 0..3 {
            for j in 0..2 {
                let want: f64 = (0..4).map(|k| a[i * 4 + k] * b[j * 4 + k]).sum();
                assert!((c[i * 2 + j] - want).abs() < 1e-12);
            }
        }
        // columns 1..3 of a times a 2x1 vector
        let v = [2.0, -1.0];
        let mut out = vec![0.0; 3];
        gemm(1.0, MatRef::cols(&a, 3, 4, 1, 2), MatRef::new(&v, 2, 1), 0.0, MatMut::new(&mut out, 3, 1));
        for i in 0..3 {
            assert!((out[i] - (2.0 * a[i * 4 + 1] - a[i * 4 + 2])).abs() < 1e-12);
        }
    }
}
