use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::LaplacianKind;
use crate::spectral::DEFAULT_SPARSIFY_THRESHOLD;

/// How per-scale spatial outputs are merged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Sum,
    /// Concatenate along channels, then a linear map back to `F`.
    ConcatLinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: usize,
    /// Repeated over the layers: `[1, 2]` gives `1, 2, 1, 2, ...`.
    pub dilation_cycle: Vec<usize>,
    pub temporal_kernel_width: usize,
    pub hidden_channels: usize,
    pub scales: Vec<f64>,
    pub chebyshev_order: usize,
    /// Use eigendecomposition instead of the Chebyshev series.
    pub exact_wavelets: bool,
    pub sparsify_threshold: f64,
    pub dropout: f64,
    pub aggregation: Aggregation,
    pub laplacian: LaplacianKind,
    /// Input window length P.
    pub history: usize,
    /// Steps predicted T.
    pub horizon: usize,
    pub channels: usize,
    /// Hold every Γ at exactly one and exclude it from training.
    pub freeze_gamma: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_layers: 8,
            dilation_cycle: vec![1, 2],
            temporal_kernel_width: 2,
            hidden_channels: 32,
            scales: vec![0.85, 3.85, 5.85],
            chebyshev_order: 3,
            exact_wavelets: false,
            sparsify_threshold: DEFAULT_SPARSIFY_THRESHOLD,
            dropout: 0.5,
            aggregation: Aggregation::Sum,
            laplacian: LaplacianKind::SymmetricNormalized,
            history: 12,
            horizon: 1,
            channels: 1,
            freeze_gamma: false,
        }
    }
}

impl ModelConfig {
    /// Dilation of every layer in order.
    pub fn dilations(&self) -> Vec<usize> {
        if self.dilation_cycle.is_empty() {
            return Vec::new();
        }
        (0..self.num_layers)
            .map(|i| self.dilation_cycle[i % self.dilation_cycle.len()])
            .collect()
    }

    /// `1 + (width - 1) · Σ d`.
    pub fn receptive_field(&self) -> usize {
        1 + self.temporal_kernel_width.saturating_sub(1) * self.dilations().iter().sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if self.num_layers == 0 {
            return bad("num_layers must be at least 1");
        }
        if self.dilation_cycle.is_empty() || self.dilation_cycle.contains(&0) {
            return bad("dilation_cycle must be non-empty with entries >= 1");
        }
        if self.temporal_kernel_width == 0 || self.hidden_channels == 0 {
            return bad("temporal_kernel_width and hidden_channels must be >= 1");
        }
        if self.scales.is_empty() {
            return bad("at least one wavelet scale is required");
        }
        if let Some(s) = self.scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::config(format!("scale {s} is not a positive number")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.sparsify_threshold >= 0.0) {
            return bad("sparsify_threshold must be >= 0");
        }
        if self.history == 0 || self.horizon == 0 || self.channels == 0 {
            return bad("history, horizon and channels must be >= 1");
        }
        Ok(())
    }

    /// Message when the receptive field does not cover the history window.
    pub fn receptive_field_warning(&self) -> Option<String> {
        let rf = self.receptive_field();
        (rf < self.history).then(|| {
            format!(
                "receptive field {rf} is shorter than the history window {}; early inputs are ignored",
                self.history
            )
        })
    }
}
