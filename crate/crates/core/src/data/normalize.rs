use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::SpeedSeries;
use crate::error::{Error, Result};

/// Bounds applied to normalized values outside the fitted range.
pub const CLIP_LOW: f64 = -0.5;
pub const CLIP_HIGH: f64 = 1.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    #[default]
    PerNode,
    Global,
}

/// Min-max scaling to `[0, 1]`, per node or with one global range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mode: NormMode,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalizer {
    /// Fits on the finite values of `rows` of `series`.
    pub fn fit(series: &SpeedSeries, rows: Range<usize>, mode: NormMode) -> Result<Self> {
        let n = series.n();
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for t in rows.start..rows.end.min(series.len()) {
            for (j, &v) in series.row(t).iter().enumerate() {
                if v.is_finite() {
                    lo[j] = lo[j].min(v);
                    hi[j] = hi[j].max(v);
                }
            }
        }
        Self::from_bounds(series.node_ids(), lo, hi, mode)
    }

    pub(crate) fn from_bounds(ids: &[String], mut lo: Vec<f64>, mut hi: Vec<f64>, mode: NormMode) -> Result<Self> {
        if mode == NormMode::Global {
            let (l, h) = lo.iter().zip(&hi).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (l, h)| (a.min(*l), b.max(*h)));
            lo.iter_mut().for_each(|v| *v = l);
            hi.iter_mut().for_each(|v| *v = h);
        }
        for (j, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(h > l) {
                let who = if mode == NormMode::Global { "all nodes".to_string() } else { ids[j].clone() };
                return Err(Error::ConstantNode(who));
            }
        }
        Ok(Normalizer { mode, min: lo, max: hi })
    }

    pub fn n(&self) -> usize {
        self.min.len()
    }

    /// `(v - min) / (max - min)` clipped to `[CLIP_LOW, CLIP_HIGH]`.
    pub fn apply(&self, v: f64, node: usize) -> f64 {
        ((v - self.min[node]) / (self.max[node] - self.min[node])).clamp(CLIP_LOW, CLIP_HIGH)
    }

    /// Inverse of the unclipped map.
    pub fn invert(&self, u: f64, node: usize) -> f64 {
        u * (self.max[node] - self.min[node]) + self.min[node]
    }

    /// Applies `f(value, node)` to data laid out `[.., N, C]`.
    fn map_nodes(&self, data: &[f64], channels: usize, f: impl Fn(f64, usize) -> f64) -> Vec<f64> {
        let n = self.n();
        data.iter()
            .enumerate()
            .map(|(i, &v)| f(v, (i / channels) % n))
            .collect()
    }

    pub fn apply_slice(&self, data: &[f64], channels: usize) -> Vec<f64> {
        self.map_nodes(data, channels, |v, j| self.apply(v, j))
    }

    pub fn invert_slice(&self, data: &[f64], channels: usize) -> Vec<f64> {
        self.map_nodes(data, channels, |v, j| self.invert(v, j))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(lo: f64, hi: f64) -> Normalizer {
        Normalizer::from_bounds(&["a".into()], vec![lo], vec![hi], NormMode::PerNode).unwrap()
    }

    #[test]
    fn affine_map_and_clipping() {
        let z = norm(10.0, 30.0);
        let got: Vec<f64> = [10.0, 20.0, 30.0].iter().map(|&v| z.apply(v, 0)).collect();
        assert_eq!(got, vec![0.0, 0.5, 1.0]);
        assert_eq!(z.apply(35.0, 0), 1.25);
        assert_eq!(z.apply(100.0, 0), CLIP_HIGH);
        assert_eq!(z.apply(-100.0, 0), CLIP_LOW);
        for v in [10.0, 13.7, 29.99] {
            assert!((z.invert(z.apply(v, 0), 0) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_node_is_named() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let e = Normalizer::from_bounds(&ids, vec![0.0, 5.0], vec![1.0, 5.0], NormMode::PerNode);
        assert!(matches!(e, Err(Error::ConstantNode(id)) if id == "b"));
        let g = Normalizer::from_bounds(&ids, vec![0.0, 5.0], vec![1.0, 5.0], NormMode::Global).unwrap();
        assert_eq!((g.min.clone(), g.max.clone()), (vec![0.0, 0.0], vec![5.0, 5.0]));
    }
}
