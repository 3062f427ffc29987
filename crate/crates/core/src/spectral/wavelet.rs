use serde::{Deserialize, Serialize};

use super::eigen::{eig_sym, EigenSystem};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Default magnitude below which wavelet entries are dropped.
pub const DEFAULT_SPARSIFY_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveletMethod {
    Exact,
    Chebyshev { order: usize },
}

/// Wavelet basis `Ψ_s` and its inverse at one diffusion scale.
#[derive(Debug, Clone)]
pub struct WaveletBasis {
    pub scale: f64,
    pub psi: DenseMatrix,
    pub psi_inv: DenseMatrix,
    pub method: WaveletMethod,
    pub sparsify_threshold: f64,
}

impl WaveletBasis {
    pub fn n(&self) -> usize {
        self.psi.rows()
    }

    /// `max |Ψ Ψ⁻¹ - I|`, the reconstruction error of this pair.
    pub fn identity_error(&self) -> f64 {
        let prod = self.psi.matmul(&self.psi_inv).expect("square basis");
        prod.max_abs_diff(&DenseMatrix::identity(self.n()))
    }

    /// `Ψ diag(gamma) Ψ⁻¹`.
    pub fn weight_matrix(&self, gamma: &[f64]) -> Result<DenseMatrix> {
        self.psi.sandwich(gamma, &self.psi_inv)
    }
}

pub(crate) fn check_scale(s: f64) -> Result<()> {
    if !s.is_finite() || s < 0.0 {
        return Err(Error::config(format!("wavelet scale must be finite and >= 0, got {s}")));
    }
    Ok(())
}

/// Heat kernel `e^{-sλ}` applied elementwise.
pub fn heat_kernel(s: f64, lambdas: &[f64]) -> Vec<f64> {
    lambdas.iter().map(|&l| (-s * l).exp()).collect()
}

/// `Ψ_s = U e^{-sΛ} Uᵀ` and `Ψ_s⁻¹ = U e^{sΛ} Uᵀ` from an existing eigensystem.
pub fn exact_wavelet_from(es: &EigenSystem, s: f64) -> Result<WaveletBasis> {
    check_scale(s)?;
    let psi = es.spectral_function(|l| (-s * l).exp());
    let psi_inv = es.spectral_function(|l| (s * l).exp());
    Ok(WaveletBasis { scale: s, psi, psi_inv, method: WaveletMethod::Exact, sparsify_threshold: 0.0 })
}

/// Exact wavelet pair via a full eigendecomposition of `l`.
pub fn exact_wavelet(l: &DenseMatrix, s: f64) -> Result<WaveletBasis> {
    check_scale(s)?;
    exact_wavelet_from(&eig_sym(l)?, s)
}

/// Zeroes entries with `|v| < threshold` and reports the remaining density.
pub fn sparsify(m: &DenseMatrix, threshold: f64) -> (DenseMatrix, f64) {
    let mut out = m.clone();
    for v in out.as_mut_slice() {
        if v.abs() < threshold {
            *v = 0.0;
        }
    }
    let total = (m.rows() * m.cols()).max(1);
    let density = out.count_nonzero() as f64 / total as f64;
    (out, density)
}

/// `U diag(kernel) Uᵀ x`.
pub fn graph_fourier_convolve(x: &[f64], kernel_diag: &[f64], es: &EigenSystem) -> Result<Vec<f64>> {
    if x.len() != es.n() || kernel_diag.len() != es.n() {
        return Err(Error::shape(format!(
            "signal {} / kernel {} against {} eigenpairs",
            x.len(),
            kernel_diag.len(),
            es.n()
        )));
    }
    let u = es.eigenvectors();
    let mut spectral = u.transpose().mat_vec(x)?;
    spectral.iter_mut().zip(kernel_diag).for_each(|(v, k)| *v *= k);
    u.mat_vec(&spectral)
}

/// `Ψ diag(gamma) Ψ⁻¹ x`.
pub fn wavelet_convolve(x: &[f64], gamma: &[f64], basis: &WaveletBasis) -> Result<Vec<f64>> {
    if x.len() != basis.n() || gamma.len() != basis.n() {
        return Err(Error::shape(format!(
            "signal {} / gamma {} against basis of size {}",
            x.len(),
            gamma.len(),
            basis.n()
        )));
    }
    let mut hat = basis.psi_inv.mat_vec(x)?;
    hat.iter_mut().zip(gamma).for_each(|(v, g)| *v *= g);
    basis.psi.mat_vec(&hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Graph, LaplacianKind};
    use crate::topology::{grid_graph, random_connected_graph};

    fn p2() -> DenseMatrix {
        Graph::from_edges(&[("a", "b")]).unwrap().laplacian(LaplacianKind::SymmetricNormalized).unwrap()
    }

    #[test]
    fn heat_kernel_values() {
        assert_eq!(heat_kernel(3.7, &[0.0]), vec![1.0]);
        assert_eq!(heat_kernel(0.0, &[0.5, 2.0, 9.0]), vec![1.0; 3]);
        assert!((heat_kernel(1.0, &[2.0])[0] - 0.135335283236613).abs() < 1e-12);
    }

    #[test]
    fn zero_scale_is_identity() {
        let b = exact_wavelet(&p2(), 0.0).unwrap();
        assert!(b.psi.max_abs_diff(&DenseMatrix::identity(2)) < 1e-15);
        assert!(b.psi_inv.max_abs_diff(&DenseMatrix::identity(2)) < 1e-15);
        assert!(exact_wavelet(&p2(), -1.0).is_err());
    }

    #[test]
    fn p2_closed_form() {
        // eigenpairs of the normalized P2 Laplacian: 0 with (1,1)/√2 and 2 with (1,-1)/√2
        let e = (-2.0f64).exp();
        let want = DenseMatrix::from_rows(&[
            vec![0.5 * (1.0 + e), 0.5 * (1.0 - e)],
            vec![0.5 * (1.0 - e), 0.5 * (1.0 + e)],
        ])
        .unwrap();
        let b = exact_wavelet(&p2(), 1.0).unwrap();
        assert!(b.psi.max_abs_diff(&want) < 1e-14);
        assert!((b.psi[(0, 0)] - 0.5677).abs() < 1e-4);
        assert!((b.psi[(0, 1)] - 0.4323).abs() < 1e-4);
        assert!(b.identity_error() < 1e-8);
    }

    #[test]
    fn identity_and_symmetry_on_random_graphs() {
        for seed in 0..5 {
            let g = random_connected_graph(20 + seed as usize * 5, seed);
            let l = g.laplacian(LaplacianKind::SymmetricNormalized).unwrap();
            let es = eig_sym(&l).unwrap();
            for s in [0.001, 0.85, 3.85, 6.0] {
                let b = exact_wavelet_from(&es, s).unwrap();
                assert!(b.identity_error() < 1e-8, "s={s} err={}", b.identity_error());
                assert!(b.psi.asymmetry() < 1e-10);
            }
        }
    }

    #[test]
    fn sparsify_cases() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 1e-5], vec![-3e-3, 0.2]]).unwrap();
        let (same, d0) = sparsify(&m, 0.0);
        assert_eq!(same, m);
        assert_eq!(d0, 1.0);
        let (z, dz) = sparsify(&m, 2.0);
        assert_eq!(z.count_nonzero(), 0);
        assert_eq!(dz, 0.0);
        let densities: Vec<f64> = [0.0, 1e-6, 1e-4, 1e-2].iter().map(|&t| sparsify(&m, t).1).collect();
        assert!(densities.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(densities, vec![1.0, 1.0, 0.75, 0.5]);
    }

    #[test]
    fn fourier_convolution_cases() {
        let g = random_connected_graph(10, 3);
        let l = g.laplacian(LaplacianKind::SymmetricNormalized).unwrap();
        let es = eig_sym(&l).unwrap();
        let x: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).cos()).collect();
        let same = graph_fourier_convolve(&x, &[1.0; 10], &es).unwrap();
        assert!(same.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-12));
        let zero = graph_fourier_convolve(&x, &[0.0; 10], &es).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
        assert!(graph_fourier_convolve(&x[..3], &[1.0; 10], &es).is_err());

        let s = 1.3;
        let heat = graph_fourier_convolve(&x, &heat_kernel(s, es.eigenvalues()), &es).unwrap();
        let direct = exact_wavelet_from(&es, s).unwrap().psi.mat_vec(&x).unwrap();
        assert!(heat.iter().zip(&direct).all(|(a, b)| (a - b).abs() < 1e-8));
    }

    #[test]
    fn wavelet_convolution_cases() {
        let g = random_connected_graph(10, 5);
        let l = g.laplacian(LaplacianKind::SymmetricNormalized).unwrap();
        let es = eig_sym(&l).unwrap();
        let s = 0.9;
        let basis = exact_wavelet_from(&es, s).unwrap();
        let x: Vec<f64> = (0..10).map(|i| 1.0 + (i as f64).sin()).collect();

        let same = wavelet_convolve(&x, &[1.0; 10], &basis).unwrap();
        assert!(same.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-8));
        let zero = wavelet_convolve(&x, &[0.0; 10], &basis).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
        assert!(wavelet_convolve(&x, &[1.0; 3], &basis).is_err());

        // Fourier basis as a wavelet pair with γ = e^{-2sλ}: three routes to double diffusion.
        let u = es.eigenvectors().clone();
        let fourier = WaveletBasis {
            scale: s,
            psi: u.clone(),
            psi_inv: u.transpose(),
            method: WaveletMethod::Exact,
            sparsify_threshold: 0.0,
        };
        let via_gamma = wavelet_convolve(&x, &heat_kernel(2.0 * s, es.eigenvalues()), &fourier).unwrap();
        let twice = basis.psi.mat_vec(&basis.psi.mat_vec(&x).unwrap()).unwrap();
        let oracle = graph_fourier_convolve(&x, &heat_kernel(2.0 * s, es.eigenvalues()), &es).unwrap();
        assert!(twice.iter().zip(&oracle).all(|(a, b)| (a - b).abs() < 1e-8));
        assert!(via_gamma.iter().zip(&oracle).all(|(a, b)| (a - b).abs() < 1e-8));
    }

    #[test]
    fn locality_shrinks_with_scale() {
        let g = grid_graph(10, 10);
        let l = g.laplacian(LaplacianKind::SymmetricNormalized).unwrap();
        let es = eig_sym(&l).unwrap();
        let ratios: Vec<f64> = [0.85, 3.85, 5.85]
            .iter()
            .map(|&s| exact_wavelet_from(&es, s).unwrap().psi.diagonal_mass_ratio())
            .collect();
        assert!(ratios[0] > ratios[1] && ratios[1] > ratios[2], "{ratios:?}");
    }
}
