//! The multi-scale graph-wavelet temporal convolutional network.
//!
//! Layout is channels-last throughout: inputs are `[B, P, N, C]`, hidden
//! activations `[B, t, N, F]`. Each layer runs a gated dilated causal
//! convolution over time, mixes nodes with `Σ_s Ψ_s diag(Γ_s) Ψ_s⁻¹`, and
//! feeds both a residual path and a skip sum read by the output head.

mod checkpoint;
mod config;

pub use checkpoint::{load_checkpoint, load_checkpoint_for_graph, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{Aggregation, ModelConfig};

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::{rng_for, stream, Rng};
use crate::spectral::{chebyshev_wavelet, eig_sym, exact_wavelet_from, spectrum_upper_bound, WaveletBasis};
use crate::tensor::{Tape, Tensor, Var};

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

#[derive(Clone, Copy, Debug)]
enum Init {
    /// uniform(±1/√fan_in)
    FanIn(usize),
    /// 1 + uniform(±0.01)
    Gamma,
}

#[derive(Clone, Debug)]
struct LayerIdx {
    dilation: usize,
    filter: (usize, usize),
    gate: (usize, usize),
    gammas: Vec<usize>,
    agg: Option<(usize, usize)>,
    residual: (usize, usize),
    skip: (usize, usize),
}

#[derive(Clone, Debug)]
struct Layout {
    lift: (usize, usize),
    layers: Vec<LayerIdx>,
    head1: (usize, usize),
    head2: (usize, usize),
}

struct Specs(Vec<(String, Vec<usize>, Init)>);

impl Specs {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.0.push((name, shape, init));
        self.0.len() - 1
    }

    /// Weight `shape` plus a bias of length `shape[0]`.
    fn pair(&mut self, name: &str, shape: Vec<usize>, fan_in: usize) -> (usize, usize) {
        let out = shape[0];
        let w = self.add(format!("{name}.weight"), shape, Init::FanIn(fan_in));
        let b = self.add(format!("{name}.bias"), vec![out], Init::FanIn(fan_in));
        (w, b)
    }
}

impl Layout {
    fn build(cfg: &ModelConfig, n: usize) -> (Layout, Vec<(String, Vec<usize>, Init)>) {
        let f = cfg.hidden_channels;
        let w = cfg.temporal_kernel_width;
        let e = cfg.scales.len();
        let mut sp = Specs(Vec::new());
        let lift = sp.pair("lift", vec![f, cfg.channels], cfg.channels);
        let layers = cfg
            .dilations()
            .into_iter()
            .enumerate()
            .map(|(i, dilation)| {
                let filter = sp.pair(&format!("layer{i}.filter"), vec![f, f, w], f * w);
                let gate = sp.pair(&format!("layer{i}.gate"), vec![f, f, w], f * w);
                let gammas = (0..e)
                    .map(|s| sp.add(format!("layer{i}.gamma{s}"), vec![n], Init::Gamma))
                    .collect();
                let agg = (cfg.aggregation == Aggregation::ConcatLinear)
                    .then(|| sp.pair(&format!("layer{i}.aggregate"), vec![f, e * f], e * f));
                let residual = sp.pair(&format!("layer{i}.residual"), vec![f, f], f);
                let skip = sp.pair(&format!("layer{i}.skip"), vec![f, f], f);
                LayerIdx { dilation, filter, gate, gammas, agg, residual, skip }
            })
            .collect();
        let head1 = sp.pair("head1", vec![f, f], f);
        let head2 = sp.pair("head2", vec![cfg.horizon * cfg.channels, f], f);
        (Layout { lift, layers, head1, head2 }, sp.0)
    }
}

/// Trained or freshly initialised network bound to one graph.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    graph: Graph,
    bases: Vec<WaveletBasis>,
    params: Vec<Param>,
    layout: Layout,
}

/// Wavelet pair for every configured scale, in config order.
pub fn build_bases(cfg: &ModelConfig, graph: &Graph) -> Result<Vec<WaveletBasis>> {
    let l = graph.laplacian(cfg.laplacian)?;
    if cfg.exact_wavelets {
        let es = eig_sym(&l)?;
        cfg.scales
            .iter()
            .map(|&s| {
                let mut b = exact_wavelet_from(&es, s)?;
                if cfg.sparsify_threshold > 0.0 {
                    b.psi = crate::spectral::sparsify(&b.psi, cfg.sparsify_threshold).0;
                    b.psi_inv = crate::spectral::sparsify(&b.psi_inv, cfg.sparsify_threshold).0;
                    b.sparsify_threshold = cfg.sparsify_threshold;
                }
                Ok(b)
            })
            .collect()
    } else {
        let lambda_max = spectrum_upper_bound(&l, cfg.laplacian);
        cfg.scales
            .iter()
            .map(|&s| chebyshev_wavelet(&l, s, cfg.chebyshev_order, lambda_max, cfg.sparsify_threshold))
            .collect()
    }
}

/// Builds a model with fresh parameters drawn from `seed`.
pub fn new_model(cfg: ModelConfig, graph: Graph, seed: u64) -> Result<Model> {
    cfg.validate()?;
    let bases = build_bases(&cfg, &graph)?;
    let (layout, specs) = Layout::build(&cfg, graph.n());
    let mut rng = rng_for(seed, stream::MODEL_INIT);
    let params = specs
        .into_iter()
        .map(|(name, shape, init)| {
            let len: usize = shape.iter().product();
            let data = match init {
                Init::FanIn(fan_in) => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
                }
                Init::Gamma if cfg.freeze_gamma => vec![1.0; len],
                Init::Gamma => (0..len).map(|_| 1.0 + rng.random_range(-0.01..0.01)).collect(),
            };
            Ok(Param { name, value: Tensor::new(shape, data)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Model { config: cfg, graph, bases, params, layout })
}

/// `tanh(conv_f(x)) ⊙ σ(conv_g(x))` with dilated causal convolutions
/// producing output slots `out_start..`.
pub fn gated_tcn(
    tape: &mut Tape,
    x: Var,
    filter: (Var, Option<Var>),
    gate: (Var, Option<Var>),
    dilation: usize,
    out_start: usize,
) -> Result<Var> {
    let f = tape.temporal_conv(x, filter.0, filter.1, dilation, out_start)?;
    let g = tape.temporal_conv(x, gate.0, gate.1, dilation, out_start)?;
    let f = tape.tanh(f)?;
    let g = tape.sigmoid(g)?;
    tape.mul(f, g)
}

/// `Ψ diag(Γ) Ψ⁻¹` as a differentiable `[N, N]` operator.
pub fn scale_operator(tape: &mut Tape, psi: Var, psi_inv: Var, gamma: Var) -> Result<Var> {
    let scaled = tape.scale_rows(psi_inv, gamma)?;
    tape.matmul(psi, scaled)
}

/// `ReLU(AGG_s(W_s · u))` over the node axis of `u [B, t, N, F]`. With one
/// operator (or a pre-summed one) AGG is the identity; with several and an
/// aggregation map `(w, b)` the per-scale outputs are concatenated along
/// channels and mapped back; without it they are summed.
pub fn ms_spatial(tape: &mut Tape, u: Var, operators: &[Var], aggregate: Option<(Var, Var)>) -> Result<Var> {
    let parts = operators.iter().map(|&m| tape.node_mix(u, m)).collect::<Result<Vec<_>>>()?;
    let merged = match aggregate {
        Some((w, b)) => {
            let cat = tape.concat_last(&parts)?;
            tape.linear(cat, w, Some(b))?
        }
        None => {
            let mut acc = *parts.first().ok_or_else(|| Error::config("no spatial operators"))?;
            for &p in &parts[1..] {
                acc = tape.add(acc, p)?;
            }
            acc
        }
    };
    tape.relu(merged)
}

/// Output-slot counts per layer so that only slots feeding the last
/// output are computed.
fn trimmed_lengths(dilations: &[usize], width: usize, history: usize) -> Vec<usize> {
    let k = dilations.len();
    let mut n_out = vec![1; k];
    for l in (0..k.saturating_sub(1)).rev() {
        n_out[l] = (n_out[l + 1] + dilations[l + 1] * (width - 1)).min(history);
    }
    n_out
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn bases(&self) -> &[WaveletBasis] {
        &self.bases
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    /// Whether parameter `i` is updated by training.
    pub fn is_trainable(&self, i: usize) -> bool {
        !(self.config.freeze_gamma && self.layout.layers.iter().any(|l| l.gammas.contains(&i)))
    }

    /// Γ vectors of `layer`, one per scale.
    pub fn gammas(&self, layer: usize) -> Vec<&Tensor> {
        self.layout.layers[layer].gammas.iter().map(|&i| &self.params[i].value).collect()
    }

    /// Replaces all parameter values; shapes must match.
    pub fn set_params(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::shape(format!("{} tensors for {} parameters", values.len(), self.params.len())));
        }
        for (p, v) in self.params.iter().zip(&values) {
            if p.value.shape() != v.shape() {
                return Err(Error::shape(format!("{}: {:?} vs {:?}", p.name, v.shape(), p.value.shape())));
            }
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            p.value = v;
        }
        Ok(())
    }

    /// Records every parameter on `tape`; frozen ones become constants.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| tape.leaf(p.value.clone(), self.is_trainable(i)))
            .collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let c = &self.config;
        let want = [c.history, self.graph.n(), c.channels];
        if x.ndim() != 4 || x.shape()[1..] != want {
            return Err(Error::shape(format!(
                "input {:?}, expected [batch, {}, {}, {}]",
                x.shape(),
                want[0],
                want[1],
                want[2]
            )));
        }
        Ok(())
    }

    /// Per-layer node-mixing operators, built on the tape so Γ receives
    /// gradients. One matrix for sum aggregation, one per scale otherwise.
    fn mixers(&self, tape: &mut Tape, p: &[Var]) -> Result<Vec<Vec<Var>>> {
        let pairs: Vec<(Var, Var)> = self
            .bases
            .iter()
            .map(|b| {
                let psi = Tensor::from_parts(vec![b.n(), b.n()], b.psi.as_slice().to_vec())?;
                let inv = Tensor::from_parts(vec![b.n(), b.n()], b.psi_inv.as_slice().to_vec())?;
                Ok((tape.constant(psi), tape.constant(inv)))
            })
            .collect::<Result<_>>()?;
        self.layout
            .layers
            .iter()
            .map(|layer| {
                let per_scale = layer
                    .gammas
                    .iter()
                    .zip(&pairs)
                    .map(|(&g, &(psi, inv))| scale_operator(tape, psi, inv, p[g]))
                    .collect::<Result<Vec<_>>>()?;
                match self.config.aggregation {
                    Aggregation::Sum => {
                        let mut acc = per_scale[0];
                        for &m in &per_scale[1..] {
                            acc = tape.add(acc, m)?;
                        }
                        Ok(vec![acc])
                    }
                    Aggregation::ConcatLinear => Ok(per_scale),
                }
            })
            .collect()
    }

    fn run(
        &self,
        tape: &mut Tape,
        p: &[Var],
        x: Var,
        mut dropout_rng: Option<&mut Rng>,
        trim: bool,
    ) -> Result<Var> {
        self.check_input(tape.value(x))?;
        let cfg = &self.config;
        let width = cfg.temporal_kernel_width;
        let dilations: Vec<usize> = self.layout.layers.iter().map(|l| l.dilation).collect();
        let n_out = if trim {
            trimmed_lengths(&dilations, width, cfg.history)
        } else {
            vec![cfg.history; dilations.len()]
        };
        let mixers = self.mixers(tape, p)?;
        let last = self.layout.layers.len() - 1;

        let mut h = tape.linear(x, p[self.layout.lift.0], Some(p[self.layout.lift.1]))?;
        let mut skip: Option<Var> = None;
        for (l, layer) in self.layout.layers.iter().enumerate() {
            let len_in = tape.value(h).shape()[1];
            let start = len_in - n_out[l];
            let filter = (p[layer.filter.0], Some(p[layer.filter.1]));
            let gate = (p[layer.gate.0], Some(p[layer.gate.1]));
            let u = gated_tcn(tape, h, filter, gate, layer.dilation, start)?;
            let agg = layer.agg.map(|(w, b)| (p[w], p[b]));
            let v = ms_spatial(tape, u, &mixers[l], agg)?;
            let v = match dropout_rng.as_deref_mut() {
                Some(rng) => tape.dropout(v, cfg.dropout, true, rng)?,
                None => v,
            };
            let v_skip = if trim { tape.slice_time(v, n_out[l] - 1)? } else { v };
            let s = tape.linear(v_skip, p[layer.skip.0], Some(p[layer.skip.1]))?;
            skip = Some(match skip {
                Some(acc) => tape.add(acc, s)?,
                None => s,
            });
            if l < last {
                let res = tape.linear(v, p[layer.residual.0], Some(p[layer.residual.1]))?;
                let kept = tape.slice_time(h, start)?;
                h = tape.add(kept, res)?;
            }
        }
        let skip = skip.expect("at least one layer");
        let y = tape.relu(skip)?;
        let y = tape.linear(y, p[self.layout.head1.0], Some(p[self.layout.head1.1]))?;
        let y = tape.relu(y)?;
        tape.linear(y, p[self.layout.head2.0], Some(p[self.layout.head2.1]))
    }

    /// Prediction `[B, T, N, C]` from `x [B, P, N, C]`. Dropout is active
    /// only when `dropout_rng` is given.
    pub fn forward_on(&self, tape: &mut Tape, params: &[Var], x: Var, dropout_rng: Option<&mut Rng>) -> Result<Var> {
        let y = self.run(tape, params, x, dropout_rng, true)?;
        let s = tape.value(y).shape().to_vec();
        let (b, n) = (s[0], s[2]);
        let y = tape.reshape(y, &[b, n, self.config.horizon, self.config.channels])?;
        tape.swap_axes(y, 1, 2)
    }

    /// Head applied at every time slot: `[B, P, N, T·C]`, where slot `t`
    /// depends only on inputs at slots `<= t`. The last slot equals
    /// [`Model::forward_on`].
    pub fn forward_all_slots_on(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        self.run(tape, params, x, None, false)
    }

    /// Evaluation-mode forward pass.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p: Vec<Var> = self.params.iter().map(|q| tape.constant(q.value.clone())).collect();
        let xv = tape.constant(x.clone());
        let y = self.forward_on(&mut tape, &p, xv, None)?;
        Ok(tape.value(y).clone())
    }

    pub fn forward_all_slots(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p: Vec<Var> = self.params.iter().map(|q| tape.constant(q.value.clone())).collect();
        let xv = tape.constant(x.clone());
        let y = self.forward_all_slots_on(&mut tape, &p, xv)?;
        Ok(tape.value(y).clone())
    }

    /// Effective node-mixing matrix `Σ_s Ψ_s diag(Γ_s) Ψ_s⁻¹` of one scale
    /// in one layer, for analysis.
    pub fn weight_matrix(&self, layer: usize, scale: usize) -> Result<crate::linalg::DenseMatrix> {
        let l = self
            .layout
            .layers
            .get(layer)
            .ok_or_else(|| Error::shape(format!("layer {layer} out of range")))?;
        let gi = *l
            .gammas
            .get(scale)
            .ok_or_else(|| Error::shape(format!("scale index {scale} out of range")))?;
        self.bases[scale].weight_matrix(self.params[gi].value.data())
    }

    pub fn num_layers(&self) -> usize {
        self.layout.layers.len()
    }

    /// One message per scale whose pair is far from inverse,
    /// `max|Ψ Ψ⁻¹ − I| > tol`.
    pub fn conditioning_warnings(&self, tol: f64) -> Vec<String> {
        self.bases
            .iter()
            .filter_map(|b| {
                let err = b.identity_error();
                (err > tol).then(|| {
                    format!(
                        "wavelet pair at scale {} is far from inverse (max |psi psi_inv - I| = {err:.3e}); consider a higher chebyshev_order or exact_wavelets",
                        b.scale
                    )
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trimming_lengths_for_default_stack() {
        let d = ModelConfig::default().dilations();
        assert_eq!(trimmed_lengths(&d, 2, 12), vec![12, 10, 9, 7, 6, 4, 3, 1]);
        assert_eq!(trimmed_lengths(&[1], 2, 12), vec![1]);
    }
}
