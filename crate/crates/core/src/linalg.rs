//! Small dense/banded kernels shared across modules.

/// Row-major strided matrix view used by [`gemm`].
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatRef<'a> {
    pub fn rows(data: &'a [f64], cols: usize) -> Self {
        MatRef {
            data,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Transposed view of a row-major `rows x cols` buffer.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        MatRef {
            data,
            row_stride: 1,
            col_stride: cols,
        }
    }
}

/// `c = alpha * a(m x k) * b(k x n) + beta * c`, with `c` row-major `m x n`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n, "gemm output buffer too small");
    if k > 0 {
        let a_last = (m - 1) * a.row_stride + (k - 1) * a.col_stride;
        let b_last = (k - 1) * b.row_stride + (n - 1) * b.col_stride;
        assert!(a_last < a.data.len(), "gemm lhs out of bounds");
        assert!(b_last < b.data.len(), "gemm rhs out of bounds");
    }
    // SAFETY: the bounds of every strided access were checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Cholesky factorization of a symmetric positive-definite band matrix.
///
/// Input storage is `n x (bw + 1)`: entry `[i][d]` holds `A[i][i - d]` for the lower band.
pub(crate) struct BandCholesky {
    n: usize,
    bw: usize,
    /// Row `i` holds `L[i][i-bw..=i]` in ascending column order (out-of-range columns are zero).
    l: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl BandCholesky {
    /// Returns the row index of the first non-positive pivot on failure.
    pub fn factor(n: usize, bw: usize, band: Vec<f64>) -> Result<Self, usize> {
        let w = bw + 1;
        debug_assert_eq!(band.len(), n * w);
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            for d in 0..w.min(i + 1) {
                l[i * w + bw - d] = band[i * w + d];
            }
        }
        // column k of row i sits at i*w + bw - i + k
        for i in 0..n {
            let jmin = i.saturating_sub(bw);
            for j in jmin..=i {
                let kmin = jmin.max(j.saturating_sub(bw));
                let (ri, rj) = (i * w + bw - i, j * w + bw - j);
                let s = l[ri + j] - dot(&l[ri + kmin..ri + j], &l[rj + kmin..rj + j]);
                if j == i {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(i);
                    }
                    l[ri + i] = s.sqrt();
                } else {
                    l[ri + j] = s / l[rj + j];
                }
            }
        }
        Ok(BandCholesky { n, bw, l })
    }

    pub fn solve(&self, rhs: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let k0 = i.saturating_sub(bw);
            let ri = i * w + bw - i;
            let s = rhs[i] - dot(&self.l[ri + k0..ri + i], &rhs[k0..i]);
            rhs[i] = s / self.l[ri + i];
        }
        for i in (0..n).rev() {
            let ri = i * w + bw - i;
            let x = rhs[i] / self.l[ri + i];
            rhs[i] = x;
            let k0 = i.saturating_sub(bw);
            for (r, lv) in rhs[k0..i].iter_mut().zip(&self.l[ri + k0..ri + i]) {
                *r -= lv * x;
            }
        }
    }
}
