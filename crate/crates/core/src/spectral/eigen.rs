//! Cyclic Jacobi eigensolver for dense symmetric matrices.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

const MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-10;
const OFF_DIAGONAL_TOL: f64 = 1e-12;

/// Eigenvalues in ascending order with orthonormal eigenvectors stored as the
/// columns of `eigenvectors`.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    eigenvalues: Vec<f64>,
    eigenvectors: DenseMatrix,
}

impl EigenSystem {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DenseMatrix {
        &self.eigenvectors
    }

    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `U diag(f(λ)) Uᵀ`.
    pub fn spectral_function(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        let d: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        self.eigenvectors
            .sandwich(&d, &self.eigenvectors.transpose())
            .expect("square eigenvector matrix")
    }
}

fn off_diagonal_norm(a: &DenseMatrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Diagonalizes a symmetric matrix with cyclic Jacobi rotations.
///
/// Sweeps stop once the off-diagonal Frobenius norm drops below
/// `1e-12 * ‖m‖_F`.
pub fn eig_sym(m: &DenseMatrix) -> Result<EigenSystem> {
    if !m.is_square() {
        return Err(Error::NonSquare { rows: m.rows(), cols: m.cols() });
    }
    let n = m.rows();
    let scale = m.max_abs().max(1.0);
    let asym = m.asymmetry();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let mut a = m.clone();
    // work on the exactly symmetric part
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    let mut v = DenseMatrix::identity(n);
    let target = OFF_DIAGONAL_TOL * m.frobenius_sq().sqrt();

    let mut converged = off_diagonal_norm(&a) <= target;
    let mut sweep = 0;
    while !converged {
        if sweep == MAX_SWEEPS {
            return Err(Error::NoConvergence(MAX_SWEEPS));
        }
        sweep += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                a[(p, p)] -= t * apq;
                a[(q, q)] += t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for r in 0..n {
                    if r != p && r != q {
                        let arp = a[(r, p)];
                        let arq = a[(r, q)];
                        let new_rp = c * arp - s * arq;
                        let new_rq = s * arp + c * arq;
                        a[(r, p)] = new_rp;
                        a[(p, r)] = new_rp;
                        a[(r, q)] = new_rq;
                        a[(q, r)] = new_rq;
                    }
                    let vrp = v[(r, p)];
                    let vrq = v[(r, q)];
                    v[(r, p)] = c * vrp - s * vrq;
                    v[(r, q)] = s * vrp + c * vrq;
                }
            }
        }
        converged = off_diagonal_norm(&a) <= target;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let eigenvalues = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, new)] = v[(r, old)];
        }
    }
    Ok(EigenSystem { eigenvalues, eigenvectors: vectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Graph, LaplacianKind};

    fn check_decomposition(m: &DenseMatrix, es: &EigenSystem) {
        let u = es.eigenvectors();
        let utu = u.transpose().matmul(u).unwrap();
        assert!(utu.max_abs_diff(&DenseMatrix::identity(m.rows())) < 1e-8);
        for (i, &lam) in es.eigenvalues().iter().enumerate() {
            let col: Vec<f64> = (0..m.rows()).map(|r| u[(r, i)]).collect();
            let lu = m.mat_vec(&col).unwrap();
            for (a, b) in lu.iter().zip(&col) {
                assert!((a - lam * b).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn identity_eigenvalues() {
        let es = eig_sym(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(es.eigenvalues(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn p2_normalized() {
        let g = Graph::from_edges(&[("a", "b")]).unwrap();
        let l = g.laplacian(LaplacianKind::SymmetricNormalized).unwrap();
        let es = eig_sym(&l).unwrap();
        assert!((es.eigenvalues()[0]).abs() < 1e-14);
        assert!((es.eigenvalues()[1] - 2.0).abs() < 1e-14);
        check_decomposition(&l, &es);
    }

    #[test]
    fn p3_combinatorial_matches_characteristic_polynomial() {
        // det(L - xI) for the 3-path is -x(x-1)(x-3); its roots are the oracle.
        let g = Graph::from_edges(&[("a", "b"), ("b", "c")]).unwrap();
        let l = g.laplacian(LaplacianKind::Combinatorial).unwrap();
        let charpoly = |x: f64| -x * (x - 1.0) * (x - 3.0);
        let det = |x: f64| {
            let m = l.add_scaled(-x, &DenseMatrix::identity(3)).unwrap();
            m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
                - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
                + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)])
        };
        for x in [-1.0, 0.5, 2.0, 4.0] {
            assert!((det(x) - charpoly(x)).abs() < 1e-12);
        }
        let es = eig_sym(&l).unwrap();
        for (got, want) in es.eigenvalues().iter().zip([0.0, 1.0, 3.0]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        check_decomposition(&l, &es);
    }

    #[test]
    fn rejects_asymmetric() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(eig_sym(&m), Err(Error::NotSymmetric(_))));
        let r = DenseMatrix::zeros(2, 3);
        assert!(matches!(eig_sym(&r), Err(Error::NonSquare { .. })));
    }

    #[test]
    fn dense_random_symmetric() {
        use rand::Rng;
        let mut rng = crate::rng::rng_from_seed(11);
        let n = 25;
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v: f64 = rng.random_range(-1.0..1.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        let es = eig_sym(&m).unwrap();
        assert!(es.eigenvalues().windows(2).all(|w| w[0] <= w[1]));
        check_decomposition(&m, &es);
        let trace: f64 = m.diagonal().iter().sum();
        assert!((es.eigenvalues().iter().sum::<f64>() - trace).abs() < 1e-10);
    }
}
