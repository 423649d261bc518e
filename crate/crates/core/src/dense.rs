//! Small dense kernels on row-major slices.
//!
//! These operate on the b×b blocks of a [`BlockMatrix`](crate::blockcore::BlockMatrix)
//! and on the M×N well blocks. Loop orders are fixed so that every caller
//! gets the same rounding for the same inputs.

/// Smallest determinant magnitude accepted for an invertible block.
pub const SINGULAR_DET: f64 = 1e-300;

/// `y += A·x` for an `rows × cols` row-major `a`.
#[inline]
pub fn matvec_add(a: &[f64], x: &[f64], y: &mut [f64], rows: usize, cols: usize) {
    debug_assert_eq!(a.len(), rows * cols);
    for (r, yr) in y.iter_mut().enumerate().take(rows) {
        let row = &a[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (aij, xj) in row.iter().zip(x) {
            acc += aij * xj;
        }
        *yr += acc;
    }
}

/// `y -= A·x`.
#[inline]
pub fn matvec_sub(a: &[f64], x: &[f64], y: &mut [f64], rows: usize, cols: usize) {
    debug_assert_eq!(a.len(), rows * cols);
    for (r, yr) in y.iter_mut().enumerate().take(rows) {
        let row = &a[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (aij, xj) in row.iter().zip(x) {
            acc += aij * xj;
        }
        *yr -= acc;
    }
}

/// `y -= Aᵀ·x` for an `rows × cols` row-major `a`; `x` has `rows` entries and
/// `y` has `cols` entries.
#[inline]
pub fn matvec_transpose_sub(a: &[f64], x: &[f64], y: &mut [f64], rows: usize, cols: usize) {
    debug_assert_eq!(a.len(), rows * cols);
    for (c, yc) in y.iter_mut().enumerate().take(cols) {
        let mut acc = 0.0;
        for (r, xr) in x.iter().enumerate().take(rows) {
            acc += a[r * cols + c] * xr;
        }
        *yc -= acc;
    }
}

/// `C = A·B` with `A: m×k`, `B: k×n`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    matmul_into(a, b, &mut c, m, k, n);
    c
}

#[inline]
pub fn matmul_into(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for l in 0..k {
                acc += a[i * k + l] * b[l * n + j];
            }
            c[i * n + j] = acc;
        }
    }
}

/// `C -= A·B` for square `n × n` blocks. Each entry of the product is summed
/// completely before it is subtracted.
#[inline]
pub fn matmul_sub(a: &[f64], b: &[f64], c: &mut [f64], n: usize) {
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for l in 0..n {
                acc += a[i * n + l] * b[l * n + j];
            }
            c[i * n + j] -= acc;
        }
    }
}

/// Transpose of an `rows × cols` row-major matrix.
pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

/// LU factorization with partial pivoting of a dense `n × n` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    pivots: Vec<usize>,
    det: f64,
}

impl DenseLu {
    /// Factor `a`. Returns `None` when a zero pivot is met.
    pub fn factor(a: &[f64], n: usize) -> Option<Self> {
        assert_eq!(a.len(), n * n);
        let mut lu = a.to_vec();
        let mut pivots = vec![0; n];
        let mut det = 1.0;
        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].abs();
            for i in k + 1..n {
                let v = lu[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            pivots[k] = p;
            if best == 0.0 || !best.is_finite() {
                return None;
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                det = -det;
            }
            let pivot = lu[k * n + k];
            det *= pivot;
            for i in k + 1..n {
                let factor = lu[i * n + k] / pivot;
                lu[i * n + k] = factor;
                if factor != 0.0 {
                    for j in k + 1..n {
                        lu[i * n + j] -= factor * lu[k * n + j];
                    }
                }
            }
        }
        Some(DenseLu { n, lu, pivots, det })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn determinant(&self) -> f64 {
        self.det
    }

    /// Solve `A·x = rhs` in place.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(rhs.len(), n);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                rhs.swap(k, p);
            }
        }
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            let acc = rhs[i] - row.iter().zip(&rhs[..i]).map(|(l, x)| l * x).sum::<f64>();
            rhs[i] = acc;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n + i + 1..(i + 1) * n];
            let acc = rhs[i]
                - row
                    .iter()
                    .zip(&rhs[i + 1..])
                    .map(|(u, x)| u * x)
                    .sum::<f64>();
            rhs[i] = acc / self.lu[i * n + i];
        }
    }

    /// Explicit inverse, row-major.
    pub fn inverse(&self) -> Vec<f64> {
        let n = self.n;
        let mut inv = vec![0.0; n * n];
        let mut col = vec![0.0; n];
        for c in 0..n {
            col.iter_mut().for_each(|v| *v = 0.0);
            col[c] = 1.0;
            self.solve_in_place(&mut col);
            for r in 0..n {
                inv[r * n + c] = col[r];
            }
        }
        inv
    }
}

/// Inverse of a square block, or `None` if the block is singular: its
/// determinant magnitude is below [`SINGULAR_DET`] or the inverse has
/// non-finite entries.
pub fn invert(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let lu = DenseLu::factor(a, n)?;
    let det = lu.determinant().abs();
    if det.is_nan() || det < SINGULAR_DET {
        return None;
    }
    let inv = lu.inverse();
    inv.iter().all(|v| v.is_finite()).then_some(inv)
}
