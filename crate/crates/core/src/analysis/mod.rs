//! Metrics, weight-matrix analysis, link ranking, scale scans and ablation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, NormMode, SpeedSeries};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::DenseMatrix;
use crate::model::{new_model, Model, ModelConfig};
use crate::par;
use crate::rng::{split_seed, stream};
use crate::training::{evaluate, train, Metrics, TrainConfig, TrainHistory};

fn check_pair(pred: &[f64], obs: &[f64]) -> Result<()> {
    if pred.len() != obs.len() {
        return Err(Error::shape(format!("{} predictions against {} observations", pred.len(), obs.len())));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// `(1/n) Σ |obs − pred|`.
pub fn mae(pred: &[f64], obs: &[f64]) -> Result<f64> {
    check_pair(pred, obs)?;
    Ok(pred.iter().zip(obs).map(|(p, o)| (o - p).abs()).sum::<f64>() / pred.len() as f64)
}

/// `√((1/n) Σ (obs − pred)²)`.
pub fn rmse(pred: &[f64], obs: &[f64]) -> Result<f64> {
    check_pair(pred, obs)?;
    Ok((pred.iter().zip(obs).map(|(p, o)| (o - p) * (o - p)).sum::<f64>() / pred.len() as f64).sqrt())
}

/// Median; mean of the middle pair for even counts.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Ok(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// `Ψ_s diag(Γ_s) Ψ_s⁻¹` of one layer.
#[derive(Clone, Debug)]
pub struct WaveletWeightMatrix {
    /// 1-based layer number.
    pub layer: usize,
    pub scale_index: usize,
    pub scale: f64,
    pub matrix: DenseMatrix,
}

/// One matrix per (layer, scale), layer-major.
pub fn extract_weight_matrices(model: &Model) -> Result<Vec<WaveletWeightMatrix>> {
    let scales = &model.config().scales;
    let mut out = Vec::with_capacity(model.num_layers() * scales.len());
    for layer in 0..model.num_layers() {
        for (si, &s) in scales.iter().enumerate() {
            out.push(WaveletWeightMatrix {
                layer: layer + 1,
                scale_index: si,
                scale: s,
                matrix: model.weight_matrix(layer, si)?,
            });
        }
    }
    Ok(out)
}

fn check_square(w: &DenseMatrix) -> Result<()> {
    if w.is_square() {
        Ok(())
    } else {
        Err(Error::NonSquare { rows: w.rows(), cols: w.cols() })
    }
}

/// `Σ_ij W_ij²`.
pub fn frobenius_sq(w: &DenseMatrix) -> Result<f64> {
    check_square(w)?;
    Ok(w.frobenius_sq())
}

/// Copy of `w` with the diagonal set to zero.
pub fn zero_diagonal(w: &DenseMatrix) -> Result<DenseMatrix> {
    check_square(w)?;
    let mut out = w.clone();
    for i in 0..w.rows() {
        out[(i, i)] = 0.0;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagonalRow {
    pub layer: usize,
    pub scale: f64,
    pub norm_before: f64,
    pub norm_after: f64,
}

impl DiagonalRow {
    /// `(before − after) / before`, 0 for a zero matrix.
    pub fn relative_drop(&self) -> f64 {
        if self.norm_before == 0.0 {
            0.0
        } else {
            (self.norm_before - self.norm_after) / self.norm_before
        }
    }
}

/// Squared Frobenius norm of every weight matrix before and after its
/// diagonal is zeroed.
pub fn diagonal_contribution_report(model: &Model) -> Result<Vec<DiagonalRow>> {
    extract_weight_matrices(model)?
        .into_iter()
        .map(|w| {
            Ok(DiagonalRow {
                layer: w.layer,
                scale: w.scale,
                norm_before: frobenius_sq(&w.matrix)?,
                norm_after: frobenius_sq(&zero_diagonal(&w.matrix)?)?,
            })
        })
        .collect()
}

pub fn write_diagonal_csv<W: Write>(rows: &[DiagonalRow], mut w: W) -> Result<()> {
    writeln!(w, "layer,scale,norm_before,norm_after,relative_drop")?;
    for r in rows {
        writeln!(w, "{},{},{:e},{:e},{:e}", r.layer, r.scale, r.norm_before, r.norm_after, r.relative_drop())?;
    }
    Ok(())
}

/// Median relative drop per configured scale, in config order.
pub fn median_drop_by_scale(rows: &[DiagonalRow], scales: &[f64]) -> Result<Vec<f64>> {
    scales
        .iter()
        .map(|&s| {
            let drops: Vec<f64> = rows.iter().filter(|r| r.scale == s).map(DiagonalRow::relative_drop).collect();
            median(&drops)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinkScore {
    pub node_id: String,
    pub scale: f64,
    pub score: f64,
    /// 1 is the highest score.
    pub rank: usize,
    pub top_flag: bool,
}

/// Per scale: squared row norms of the weight matrices summed over layers,
/// ranked descending with ties in node order; the top
/// `ceil(N · percentile / 100)` nodes are flagged. Rows are grouped by scale
/// and ordered by rank.
pub fn link_importance(model: &Model, percentile: f64) -> Result<Vec<LinkScore>> {
    if !(percentile > 0.0 && percentile < 100.0) {
        return Err(Error::config(format!("percentile {percentile} must lie in (0, 100)")));
    }
    let n = model.graph().n();
    let flagged = ((n as f64) * percentile / 100.0 - 1e-9).ceil().max(1.0) as usize;
    let mats = extract_weight_matrices(model)?;
    let mut out = Vec::new();
    for (si, &s) in model.config().scales.iter().enumerate() {
        let mut scores = vec![0.0; n];
        for w in mats.iter().filter(|w| w.scale_index == si) {
            for (i, sc) in scores.iter_mut().enumerate() {
                *sc += w.matrix.row(i).iter().map(|v| v * v).sum::<f64>();
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        out.extend(order.into_iter().enumerate().map(|(r, i)| LinkScore {
            node_id: model.graph().node_ids()[i].clone(),
            scale: s,
            score: scores[i],
            rank: r + 1,
            top_flag: r < flagged,
        }));
    }
    Ok(out)
}

pub fn write_link_csv<W: Write>(rows: &[LinkScore], mut w: W) -> Result<()> {
    writeln!(w, "node_id,scale,score,rank,top_flag")?;
    for r in rows {
        writeln!(w, "{},{},{:e},{},{}", r.node_id, r.scale, r.score, r.rank, r.top_flag as u8)?;
    }
    Ok(())
}

/// Shared settings of repeated training experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Number of seeded replicates per configuration.
    pub replicates: usize,
    pub split: [f64; 3],
    pub norm_mode: NormMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            replicates: 3,
            split: [0.7, 0.1, 0.2],
            norm_mode: NormMode::PerNode,
        }
    }
}

/// Seed of replicate `r`; depends only on the base seed and `r`, so two
/// configurations compared side by side see the same seeds.
pub fn replicate_seed(base: u64, r: usize) -> u64 {
    split_seed(split_seed(base, stream::REPLICATE), r as u64)
}

/// Result of one seeded training run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub seed: u64,
    pub model: Model,
    pub history: TrainHistory,
    pub val: Metrics,
    pub test: Metrics,
    /// MAE of the last-value forecast on the test split, raw units.
    pub persistence_test_mae: f64,
}

/// Builds, trains and tests one model; model init and training both derive
/// from `seed`.
pub fn train_and_test(graph: &Graph, data: &Dataset, model_cfg: &ModelConfig, train_cfg: &TrainConfig, seed: u64) -> Result<RunOutcome> {
    let mut model = new_model(model_cfg.clone(), graph.clone(), seed)?;
    let cfg = TrainConfig { seed, ..train_cfg.clone() };
    let history = train(&mut model, data, &cfg)?;
    let val = evaluate(&model, &data.val, &data.normalizer)?;
    let test = evaluate(&model, &data.test, &data.normalizer)?;
    let persistence_test_mae = mae(data.test.persistence().data(), data.test.raw_targets.data())?;
    Ok(RunOutcome { seed, model, history, val, test, persistence_test_mae })
}

/// Runs every (job, replicate) pair in parallel; results are grouped per job
/// in replicate order.
fn run_grid<J: Sync>(jobs: &[J], replicates: usize, f: impl Fn(&J, usize) -> Result<RunOutcome> + Sync) -> Result<Vec<Vec<RunOutcome>>> {
    let flat = par::map(jobs.len() * replicates, |k| f(&jobs[k / replicates], k % replicates));
    let mut out: Vec<Vec<RunOutcome>> = (0..jobs.len()).map(|_| Vec::with_capacity(replicates)).collect();
    for (k, r) in flat.into_iter().enumerate() {
        out[k / replicates].push(r?);
    }
    Ok(out)
}

fn prepare(series: &SpeedSeries, exp: &ExperimentConfig) -> Result<Dataset> {
    Dataset::prepare(series, exp.model.history, exp.model.horizon, exp.split, exp.norm_mode)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanRow {
    pub scale: f64,
    pub median_val_mae: f64,
    pub val_mae: Vec<f64>,
}

/// Trains a single-scale model per grid point and replicate; reports the
/// median validation MAE per point.
pub fn scale_scan(graph: &Graph, series: &SpeedSeries, grid: &[f64], exp: &ExperimentConfig, base_seed: u64) -> Result<Vec<ScanRow>> {
    if grid.is_empty() || exp.replicates == 0 {
        return Err(Error::EmptyInput);
    }
    if let Some(s) = grid.iter().find(|s| !(**s > 0.0 && **s <= 6.0)) {
        return Err(Error::config(format!("scan scale {s} outside (0, 6]")));
    }
    let data = prepare(series, exp)?;
    let runs = run_grid(grid, exp.replicates, |&s, r| {
        let cfg = ModelConfig { scales: vec![s], ..exp.model.clone() };
        train_and_test(graph, &data, &cfg, &exp.train, replicate_seed(base_seed, r))
    })?;
    grid.iter()
        .zip(runs)
        .map(|(&scale, rs)| {
            let val_mae: Vec<f64> = rs.iter().map(|o| o.val.mae).collect();
            Ok(ScanRow { scale, median_val_mae: median(&val_mae)?, val_mae })
        })
        .collect()
}

pub fn write_scan_csv<W: Write>(rows: &[ScanRow], mut w: W) -> Result<()> {
    writeln!(w, "scale,median_val_mae")?;
    for r in rows {
        writeln!(w, "{},{:e}", r.scale, r.median_val_mae)?;
    }
    Ok(())
}

/// Named node subset of the full graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSubset {
    pub name: String,
    pub node_ids: Vec<String>,
}

/// Median test MAE, rows = scale sets, columns = subsets.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationTable {
    pub scale_sets: Vec<Vec<f64>>,
    pub subsets: Vec<String>,
    pub median_test_mae: Vec<Vec<f64>>,
}

impl AblationTable {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "scales,{}", self.subsets.join(","))?;
        for (set, row) in self.scale_sets.iter().zip(&self.median_test_mae) {
            let label: Vec<String> = set.iter().map(f64::to_string).collect();
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{},{}", label.join(";"), cells.join(","))?;
        }
        Ok(())
    }
}

/// Retrains on every (scale set, subset) pair with shared replicate seeds.
pub fn ablation_run(
    graph: &Graph,
    series: &SpeedSeries,
    subsets: &[NodeSubset],
    scale_sets: &[Vec<f64>],
    exp: &ExperimentConfig,
    base_seed: u64,
) -> Result<AblationTable> {
    if subsets.is_empty() || scale_sets.is_empty() || exp.replicates == 0 {
        return Err(Error::EmptyInput);
    }
    let prepared = subsets
        .iter()
        .map(|sub| {
            let (g, _) = graph.subgraph(&sub.node_ids)?;
            let data = prepare(&series.restrict_to_graph(&g)?, exp)?;
            Ok((g, data))
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..scale_sets.len()).flat_map(|i| (0..subsets.len()).map(move |j| (i, j))).collect();
    let runs = run_grid(&jobs, exp.replicates, |&(i, j), r| {
        let cfg = ModelConfig { scales: scale_sets[i].clone(), ..exp.model.clone() };
        let (g, data) = &prepared[j];
        train_and_test(g, data, &cfg, &exp.train, replicate_seed(base_seed, r))
    })?;
    let mut table = vec![vec![0.0; subsets.len()]; scale_sets.len()];
    for (&(i, j), rs) in jobs.iter().zip(runs) {
        let maes: Vec<f64> = rs.iter().map(|o| o.test.mae).collect();
        table[i][j] = median(&maes)?;
    }
    Ok(AblationTable {
        scale_sets: scale_sets.to_vec(),
        subsets: subsets.iter().map(|s| s.name.clone()).collect(),
        median_test_mae: table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        assert_eq!(mae(&[3.0, 4.0], &[0.0, 0.0]).unwrap(), 3.5);
        assert!((rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[0.5, 0.5], &[0.0, 1.0]).unwrap(), 0.5);
        assert!(matches!(mae(&[], &[]), Err(Error::EmptyInput)));
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]).unwrap(), 2.5);
        assert!(median(&[]).is_err());
    }

    #[test]
    fn frobenius_and_diagonal() {
        let w = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(frobenius_sq(&w).unwrap(), 30.0);
        assert_eq!(frobenius_sq(&zero_diagonal(&w).unwrap()).unwrap(), 13.0);
        let d = DenseMatrix::from_diag(&[2.0, -1.0]);
        assert_eq!(zero_diagonal(&d).unwrap(), DenseMatrix::zeros(2, 2));
        assert!(matches!(frobenius_sq(&DenseMatrix::zeros(2, 3)), Err(Error::NonSquare { .. })));
        assert!(zero_diagonal(&DenseMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn replicate_seeds_depend_on_index_only() {
        assert_eq!(replicate_seed(5, 1), replicate_seed(5, 1));
        assert_ne!(replicate_seed(5, 0), replicate_seed(5, 1));
    }
}
