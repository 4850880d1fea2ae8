//! Thin wrapper over faer's LU factorizations (dense for small systems, sparse otherwise).

use faer::linalg::solvers::PartialPivLu;
use faer::prelude::*;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::error::{Error, Result};

/// Systems at or below this size are factored densely.
const DENSE_LIMIT: usize = 96;

enum Factor {
    Dense(PartialPivLu<f64>),
    Sparse(Lu<usize, f64>),
}

/// Factorization of a square matrix given as triplets; the sparsity pattern's symbolic
/// analysis is cached so refactoring with new values reuses it.
pub(crate) struct LinearSolver {
    n: usize,
    symbolic: Option<(Vec<(usize, usize)>, SymbolicLu<usize>)>,
    factor: Option<Factor>,
}

impl LinearSolver {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            symbolic: None,
            factor: None,
        }
    }

    pub fn factor(&mut self, triplets: &[(usize, usize, f64)]) -> Result<()> {
        let n = self.n;
        if n <= DENSE_LIMIT {
            let mut m = Mat::<f64>::zeros(n, n);
            for &(i, j, v) in triplets {
                m[(i, j)] += v;
            }
            self.factor = Some(Factor::Dense(m.partial_piv_lu()));
            return Ok(());
        }
        let entries: Vec<Triplet<usize, usize, f64>> =
            triplets.iter().map(|&(i, j, v)| Triplet::new(i, j, v)).collect();
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &entries)
            .map_err(|e| Error::Linalg(format!("sparse assembly: {e:?}")))?;
        let pattern: Vec<(usize, usize)> = {
            let sym = mat.symbolic();
            (0..n)
                .flat_map(|j| sym.row_idx_of_col(j).map(move |i| (i, j)))
                .collect()
        };
        let symbolic = match &self.symbolic {
            Some((p, s)) if *p == pattern => s.clone(),
            _ => {
                let s = SymbolicLu::try_new(mat.symbolic())
                    .map_err(|e| Error::Linalg(format!("symbolic LU: {e:?}")))?;
                self.symbolic = Some((pattern, s.clone()));
                s
            }
        };
        let lu = Lu::try_new_with_symbolic(symbolic, mat.as_ref())
            .map_err(|e| Error::Linalg(format!("numeric LU: {e:?}")))?;
        self.factor = Some(Factor::Sparse(lu));
        Ok(())
    }

    pub fn solve(&self, rhs: &mut [f64]) -> Result<()> {
        let factor = self
            .factor
            .as_ref()
            .ok_or_else(|| Error::Linalg("solve called before factor".into()))?;
        let mut b = Mat::<f64>::from_fn(self.n, 1, |i, _| rhs[i]);
        match factor {
            Factor::Dense(lu) => lu.solve_in_place(b.as_mut()),
            Factor::Sparse(lu) => lu.solve_in_place(b.as_mut()),
        }
        for (i, r) in rhs.iter_mut().enumerate() {
            *r = b[(i, 0)];
        }
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Linalg("solution is not finite (singular system)".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize) -> Vec<(usize, usize, f64)> {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        t
    }

    fn check(n: usize) {
        let t = tridiag(n);
        let mut s = LinearSolver::new(n);
        s.factor(&t).unwrap();
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut b = vec![0.0; n];
        for &(i, j, v) in &t {
            b[i] += v * x[j];
        }
        s.solve(&mut b).unwrap();
        for (a, e) in b.iter().zip(&x) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_and_sparse_paths_agree_with_known_solution() {
        check(10);
        check(500);
    }

    #[test]
    fn refactor_reuses_pattern() {
        let n = 300;
        let mut s = LinearSolver::new(n);
        s.factor(&tridiag(n)).unwrap();
        let t2: Vec<_> = tridiag(n).into_iter().map(|(i, j, v)| (i, j, if i == j { v + 1.0 } else { v })).collect();
        s.factor(&t2).unwrap();
        let mut b = vec![1.0; n];
        s.solve(&mut b).unwrap();
        // interior rows of 5x - 2x = 1 give x ≈ 1/3
        assert!((b[n / 2] - 1.0 / 3.0).abs() < 1e-10);
    }
}
