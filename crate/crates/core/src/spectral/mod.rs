//! Graph Fourier and heat-kernel graph wavelet transforms.

mod chebyshev;
mod eigen;
mod wavelet;

pub use chebyshev::{chebyshev_coeffs, chebyshev_eval, chebyshev_wavelet, spectrum_upper_bound};
pub use eigen::{eig_sym, EigenSystem};
pub use wavelet::{
    exact_wavelet, exact_wavelet_from, graph_fourier_convolve, heat_kernel, sparsify,
    wavelet_convolve, WaveletBasis, WaveletMethod, DEFAULT_SPARSIFY_THRESHOLD,
};
