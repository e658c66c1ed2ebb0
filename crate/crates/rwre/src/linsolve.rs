//! Sparse linear algebra for exact exit-law computations: compressed-row
//! matrices and a BiCGSTAB solver. Absorbing-chain systems (I - P^T) mu = b
//! are nonsymmetric, which rules out plain conjugate gradients.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SolveError {
    #[error("matrix is not square: {rows} x {cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("rhs length {got} does not match matrix size {expected}")]
    RhsMismatch { expected: usize, got: usize },
    #[error("solver stalled (rho breakdown) at iteration {0}")]
    Breakdown(usize),
    #[error("no convergence within {max_iter} iterations, residual {residual:.3e}")]
    NoConvergence { max_iter: usize, residual: f64 },
}

/// Compressed sparse row matrix built from triplets. Duplicate entries are
/// summed; explicit zeros are kept.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub rows: usize,
    pub cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &mut Vec<(usize, usize, f64)>,
    ) -> Self {
        triplets.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in triplets.iter() {
            assert!(r < rows && c < cols, "triplet ({r},{c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                last = Some((r, c));
            }
            row_ptr[r + 1] = col_idx.len();
        }
        // Rows with no entries inherit the previous pointer.
        for r in 1..=rows {
            if row_ptr[r] < row_ptr[r - 1] {
                row_ptr[r] = row_ptr[r - 1];
            }
        }
        CsrMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// y = A x
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for r in 0..self.rows {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[r] = acc;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solve A x = b with BiCGSTAB. Converges when the residual drops below
/// `tol * max(|b|, 1)`. Unpreconditioned; the absorbing-chain systems here
/// are diagonally dominant enough for that to suffice.
pub fn bicgstab(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>, SolveError> {
    if a.rows != a.cols {
        return Err(SolveError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    let n = a.rows;
    if b.len() != n {
        return Err(SolveError::RhsMismatch {
            expected: n,
            got: b.len(),
        });
    }
    let threshold = tol * norm2(b).max(1.0);
    let mut x = vec![0.0; n];
    let mut r: Vec<f64> = b.to_vec();
    if norm2(&r) <= threshold {
        return Ok(x);
    }
    let r_hat = r.clone();
    let mut rho = 1.0f64;
    let mut alpha = 1.0f64;
    let mut omega = 1.0f64;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];

    for it in 1..=max_iter {
        let rho_next = dot(&r_hat, &r);
        if rho_next.abs() < 1e-300 {
            return Err(SolveError::Breakdown(it));
        }
        let beta = (rho_next / rho) * (alpha / omega);
        rho = rho_next;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        a.mul_vec(&p, &mut v);
        let denom = dot(&r_hat, &v);
        if denom.abs() < 1e-300 {
            return Err(SolveError::Breakdown(it));
        }
        alpha = rho / denom;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm2(&s) <= threshold {
            for i in 0..n {
                x[i] += alpha * p[i];
            }
            return Ok(x);
        }
        a.mul_vec(&s, &mut t);
        let tt = dot(&t, &t);
        if tt.abs() < 1e-300 {
            return Err(SolveError::Breakdown(it));
        }
        omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * p[i] + omega * s[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm2(&r) <= threshold {
            return Ok(x);
        }
    }
    Err(SolveError::NoConvergence {
        max_iter,
        residual: norm2(&r),
    })
}
