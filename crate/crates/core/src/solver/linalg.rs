//! Compressed sparse rows and Jacobi-preconditioned conjugate gradients.

/// Square CSR matrix with a fixed sparsity pattern.
#[derive(Clone, Debug)]
pub(crate) struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
    /// Position of the diagonal entry of each row.
    pub diag: Vec<usize>,
}

impl Csr {
    /// Pattern from `(row, col)` pairs; the diagonal is always included.
    pub fn pattern(n: usize, mut pairs: Vec<(usize, usize)>) -> Self {
        pairs.extend((0..n).map(|i| (i, i)));
        pairs.sort_unstable();
        pairs.dedup();
        let mut row_ptr = vec![0; n + 1];
        for &(r, _) in &pairs {
            row_ptr[r + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let cols: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let diag = (0..n)
            .map(|i| row_ptr[i] + cols[row_ptr[i]..row_ptr[i + 1]].binary_search(&i).unwrap())
            .collect();
        Self {
            n,
            vals: vec![0.0; cols.len()],
            row_ptr,
            cols,
            diag,
        }
    }

    /// Slot of entry `(r, c)`, which must be in the pattern.
    pub fn slot(&self, r: usize, c: usize) -> usize {
        let row = &self.cols[self.row_ptr[r]..self.row_ptr[r + 1]];
        self.row_ptr[r]
            + row
                .binary_search(&c)
                .expect("entry outside sparsity pattern")
    }

    pub fn clear(&mut self) {
        self.vals.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        for (i, out) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *out = acc;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` for symmetric positive definite `A`, starting from `x = 0`.
pub(crate) fn pcg(a: &Csr, b: &[f64], x: &mut [f64], rtol: f64, max_iter: usize) -> CgOutcome {
    let n = a.n;
    x.iter_mut().for_each(|v| *v = 0.0);
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return CgOutcome {
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        };
    }
    let inv_diag: Vec<f64> = a.diag.iter().map(|&k| 1.0 / a.vals[k]).collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut res = 1.0;
    for it in 1..=max_iter {
        a.mul(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return CgOutcome {
                iterations: it,
                relative_residual: res,
                converged: false,
            };
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = dot(&r, &r).sqrt() / b_norm;
        if res <= rtol {
            return CgOutcome {
                iterations: it,
                relative_residual: res,
                converged: true,
            };
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    CgOutcome {
        iterations: max_iter,
        relative_residual: res,
        converged: false,
    }
}
