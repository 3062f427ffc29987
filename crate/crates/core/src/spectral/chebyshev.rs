//! Chebyshev-polynomial approximation of heat-kernel wavelets.
//!
//! `h(λ) = e^{-sign·s·λ}` on `[0, λ_max]` is expanded as `Σ_j c_j T_j(x)` with
//! `λ = (λ_max/2)(x + 1)`; the matrix version evaluates the same series on
//! `L̃ = (2/λ_max) L - I` with the three-term recurrence, so no
//! eigendecomposition is needed.

use super::wavelet::{check_scale, sparsify, WaveletBasis, WaveletMethod};
use crate::error::{Error, Result};
use crate::graph::LaplacianKind;
use crate::linalg::DenseMatrix;

const MIN_QUADRATURE_NODES: usize = 64;

/// Coefficients `c_0..=c_k` of the expansion; `c_0` already carries the ½
/// weight so the series is a plain sum.
pub fn chebyshev_coeffs(s: f64, lambda_max: f64, k: usize, sign: f64) -> Vec<f64> {
    if s == 0.0 {
        // constant kernel: skip the quadrature and its round-off
        let mut c = vec![0.0; k + 1];
        c[0] = 1.0;
        return c;
    }
    let m = (k + 1).max(MIN_QUADRATURE_NODES);
    let thetas: Vec<f64> = (0..m)
        .map(|i| std::f64::consts::PI * (i as f64 + 0.5) / m as f64)
        .collect();
    let samples: Vec<f64> = thetas
        .iter()
        .map(|th| {
            let lambda = 0.5 * lambda_max * (th.cos() + 1.0);
            (-sign * s * lambda).exp()
        })
        .collect();
    (0..=k)
        .map(|j| {
            let weight = if j == 0 { 1.0 } else { 2.0 };
            let sum: f64 = thetas
                .iter()
                .zip(&samples)
                .map(|(th, h)| h * (j as f64 * th).cos())
                .sum();
            weight * sum / m as f64
        })
        .collect()
}

/// Evaluates the truncated series at a scalar `λ ∈ [0, λ_max]`.
pub fn chebyshev_eval(coeffs: &[f64], lambda: f64, lambda_max: f64) -> f64 {
    let x = 2.0 * lambda / lambda_max - 1.0;
    let (mut t_prev, mut t_cur) = (1.0, x);
    let mut acc = 0.0;
    for (j, c) in coeffs.iter().enumerate() {
        let t = match j {
            0 => 1.0,
            1 => x,
            _ => {
                let next = 2.0 * x * t_cur - t_prev;
                t_prev = t_cur;
                t_cur = next;
                next
            }
        };
        acc += c * t;
    }
    acc
}

/// Upper bound on the Laplacian spectrum: exactly 2 for the normalized
/// kind, the largest Gershgorin disk edge otherwise.
pub fn spectrum_upper_bound(l: &DenseMatrix, kind: LaplacianKind) -> f64 {
    match kind {
        LaplacianKind::SymmetricNormalized => 2.0,
        LaplacianKind::Combinatorial => (0..l.rows())
            .map(|i| {
                let row = l.row(i);
                row[i] + row.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v.abs()).sum::<f64>()
            })
            .fold(0.0, f64::max),
    }
}

/// Order-`k` Chebyshev wavelet pair; entries below `threshold` are zeroed.
pub fn chebyshev_wavelet(
    l: &DenseMatrix,
    s: f64,
    k: usize,
    lambda_max: f64,
    threshold: f64,
) -> Result<WaveletBasis> {
    check_scale(s)?;
    if !l.is_square() {
        return Err(Error::NonSquare { rows: l.rows(), cols: l.cols() });
    }
    if !(lambda_max > 0.0) || !lambda_max.is_finite() {
        return Err(Error::config(format!("lambda_max must be positive, got {lambda_max}")));
    }
    if threshold < 0.0 {
        return Err(Error::config("sparsify threshold must be >= 0"));
    }
    let n = l.rows();
    let fwd = chebyshev_coeffs(s, lambda_max, k, 1.0);
    let inv = chebyshev_coeffs(s, lambda_max, k, -1.0);

    let ident = DenseMatrix::identity(n);
    let lt = l.scale(2.0 / lambda_max).add_scaled(-1.0, &ident)?;
    let mut psi = ident.scale(fwd[0]);
    let mut psi_inv = ident.scale(inv[0]);
    if k >= 1 {
        psi = psi.add_scaled(fwd[1], &lt)?;
        psi_inv = psi_inv.add_scaled(inv[1], &lt)?;
        let mut t_prev = ident;
        let mut t_cur = lt.clone();
        for j in 2..=k {
            let t_next = lt.matmul(&t_cur)?.scale(2.0).add_scaled(-1.0, &t_prev)?;
            psi = psi.add_scaled(fwd[j], &t_next)?;
            psi_inv = psi_inv.add_scaled(inv[j], &t_next)?;
            t_prev = t_cur;
            t_cur = t_next;
        }
    }
    let (psi, _) = sparsify(&psi, threshold);
    let (psi_inv, _) = sparsify(&psi_inv, threshold);
    Ok(WaveletBasis {
        scale: s,
        psi,
        psi_inv,
        method: WaveletMethod::Chebyshev { order: k },
        sparsify_threshold: threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::spectral::{eig_sym, exact_wavelet_from};
    use crate::topology::random_connected_graph;

    /// Max error of the reconstructed series on a dense grid of λ.
    fn grid_error(coeffs: &[f64], s: f64, lambda_max: f64, sign: f64) -> f64 {
        (0..=2000)
            .map(|i| {
                let lam = lambda_max * i as f64 / 2000.0;
                (chebyshev_eval(coeffs, lam, lambda_max) - (-sign * s * lam).exp()).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn constant_function_coefficients() {
        let c = chebyshev_coeffs(0.0, 2.0, 6, 1.0);
        assert!((c[0] - 1.0).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn truncation_error_shrinks_with_order() {
        for s in [0.85, 3.85, 5.85] {
            let errs: Vec<f64> = (3..=30)
                .map(|k| grid_error(&chebyshev_coeffs(s, 2.0, k, 1.0), s, 2.0, 1.0))
                .collect();
            for w in errs.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "s={s}: {errs:?}");
            }
            assert!(errs[0] > errs[27]);
        }
    }

    #[test]
    fn growing_exponential_inverts_decaying_one() {
        let (s, k) = (1.5, 20);
        let fwd = chebyshev_coeffs(s, 2.0, k, 1.0);
        let inv = chebyshev_coeffs(s, 2.0, k, -1.0);
        assert!(grid_error(&inv, s, 2.0, -1.0) < 1e-9);
        for i in 0..=200 {
            let lam = 2.0 * i as f64 / 200.0;
            let prod = chebyshev_eval(&fwd, lam, 2.0) * chebyshev_eval(&inv, lam, 2.0);
            assert!((prod - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_scale_gives_identity() {
        let g = random_connected_graph(12, 1);
        let l = g.laplacian(LaplacianKind::SymmetricNormalized).unwrap();
        for k in [0, 1, 3, 10] {
            let b = chebyshev_wavelet(&l, 0.0, k, 2.0, 1e-4).unwrap();
            assert_eq!(b.psi, DenseMatrix::identity(12));
            assert_eq!(b.psi_inv, DenseMatrix::identity(12));
        }
    }

    #[test]
    fn p2_matches_exact_at_high_order() {
        let g = Graph::from_edges(&[("a", "b")]).unwrap();
        let l = g.laplacian(LaplacianKind::SymmetricNormalized).unwrap();
        let exact = exact_wavelet_from(&eig_sym(&l).unwrap(), 1.0).unwrap();
        let cheb = chebyshev_wavelet(&l, 1.0, 30, 2.0, 0.0).unwrap();
        assert!(cheb.psi.max_abs_diff(&exact.psi) < 1e-8);
        assert!(cheb.psi_inv.max_abs_diff(&exact.psi_inv) < 1e-8);
    }

    #[test]
    fn higher_order_is_closer_on_random_graph() {
        let g = random_connected_graph(30, 9);
        let l = g.laplacian(LaplacianKind::SymmetricNormalized).unwrap();
        let exact = exact_wavelet_from(&eig_sym(&l).unwrap(), 3.85).unwrap();
        let err = |k| chebyshev_wavelet(&l, 3.85, k, 2.0, 0.0).unwrap().psi.max_abs_diff(&exact.psi);
        assert!(err(20) < err(3));
    }

    #[test]
    fn gershgorin_bounds_combinatorial_spectrum() {
        let g = random_connected_graph(15, 4);
        let l = g.laplacian(LaplacianKind::Combinatorial).unwrap();
        let bound = spectrum_upper_bound(&l, LaplacianKind::Combinatorial);
        let top = *eig_sym(&l).unwrap().eigenvalues().last().unwrap();
        assert!(top <= bound + 1e-12);
        let exact = exact_wavelet_from(&eig_sym(&l).unwrap(), 0.5).unwrap();
        let cheb = chebyshev_wavelet(&l, 0.5, 30, bound, 0.0).unwrap();
        assert!(cheb.psi.max_abs_diff(&exact.psi) < 1e-8);
    }

    #[test]
    fn rejects_bad_inputs() {
        let l = DenseMatrix::identity(3);
        assert!(chebyshev_wavelet(&l, 1.0, 3, 0.0, 0.0).is_err());
        assert!(chebyshev_wavelet(&l, 1.0, 3, 2.0, -1.0).is_err());
        assert!(chebyshev_wavelet(&DenseMatrix::zeros(2, 3), 1.0, 3, 2.0, 0.0).is_err());
    }
}
