use serde::{Deserialize, Serialize};

use super::{Normalizer, SpeedSeries};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    All,
    Train,
    Val,
    Test,
}

/// Supervised windows: `inputs [S, P, N, C]`, `targets [S, T, N, C]`.
///
/// `inputs`/`targets` are in model space (normalized once a normalizer is
/// applied); `raw_inputs`/`raw_targets` always keep the original units.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub inputs: Tensor,
    pub targets: Tensor,
    pub raw_inputs: Tensor,
    pub raw_targets: Tensor,
    /// Series row of each sample's first input step.
    pub start_rows: Vec<usize>,
    pub split: Split,
}

/// Stride-1 windows inside each contiguous segment of `series`.
/// Segments shorter than `history + horizon` yield nothing.
pub fn window(series: &SpeedSeries, history: usize, horizon: usize) -> Result<SampleSet> {
    let span = history + horizon;
    if history == 0 || horizon == 0 {
        return Err(Error::config("history and horizon must be >= 1"));
    }
    let starts: Vec<usize> = series
        .segments()
        .iter()
        .filter(|s| s.len() >= span)
        .flat_map(|s| s.start..=s.end - span)
        .collect();
    if starts.is_empty() {
        let longest = series.segments().iter().map(|s| s.len()).max().unwrap_or(0);
        return Err(Error::TooShort { len: longest, needed: span });
    }
    let n = series.n();
    let mut x = Vec::with_capacity(starts.len() * history * n);
    let mut y = Vec::with_capacity(starts.len() * horizon * n);
    for &s in &starts {
        x.extend_from_slice(&series.values()[s * n..(s + history) * n]);
        y.extend_from_slice(&series.values()[(s + history) * n..(s + span) * n]);
    }
    let inputs = Tensor::new(vec![starts.len(), history, n, 1], x)?;
    let targets = Tensor::new(vec![starts.len(), horizon, n, 1], y)?;
    Ok(SampleSet {
        raw_inputs: inputs.clone(),
        raw_targets: targets.clone(),
        inputs,
        targets,
        start_rows: starts,
        split: Split::All,
    })
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.start_rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start_rows.is_empty()
    }

    pub fn history(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn horizon(&self) -> usize {
        self.targets.shape()[1]
    }

    pub fn n(&self) -> usize {
        self.inputs.shape()[2]
    }

    pub fn channels(&self) -> usize {
        self.inputs.shape()[3]
    }

    /// Samples `idx` in the given order.
    pub fn gather(&self, idx: &[usize]) -> SampleSet {
        let pick = |t: &Tensor| {
            let per: usize = t.shape()[1..].iter().product();
            let mut data = Vec::with_capacity(idx.len() * per);
            for &i in idx {
                data.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
            }
            let mut shape = t.shape().to_vec();
            shape[0] = idx.len();
            Tensor::from_parts(shape, data).expect("gathered shape")
        };
        SampleSet {
            inputs: pick(&self.inputs),
            targets: pick(&self.targets),
            raw_inputs: pick(&self.raw_inputs),
            raw_targets: pick(&self.raw_targets),
            start_rows: idx.iter().map(|&i| self.start_rows[i]).collect(),
            split: self.split,
        }
    }

    fn range(&self, r: std::ops::Range<usize>, split: Split) -> SampleSet {
        let idx: Vec<usize> = r.collect();
        SampleSet { split, ..self.gather(&idx) }
    }

    /// Model-space copy with `norm` applied to raw values.
    pub fn normalized(&self, norm: &Normalizer) -> SampleSet {
        let c = self.channels();
        let apply = |t: &Tensor| Tensor::from_parts(t.shape().to_vec(), norm.apply_slice(t.data(), c)).expect("same shape");
        SampleSet {
            inputs: apply(&self.raw_inputs),
            targets: apply(&self.raw_targets),
            ..self.clone()
        }
    }

    /// Persistence forecast in raw units: the last input repeated for every
    /// horizon step.
    pub fn persistence(&self) -> Tensor {
        let (p, t) = (self.history(), self.horizon());
        let per = self.n() * self.channels();
        let mut out = Vec::with_capacity(self.len() * t * per);
        for s in 0..self.len() {
            let base = (s * p + p - 1) * per;
            for _ in 0..t {
                out.extend_from_slice(&self.raw_inputs.data()[base..base + per]);
            }
        }
        Tensor::from_parts(self.raw_targets.shape().to_vec(), out).expect("target shape")
    }
}

/// Contiguous train/val/test split. Counts are `floor(n · f)` for train
/// and val; test takes the remainder.
pub fn chronological_split(set: &SampleSet, fractions: [f64; 3]) -> Result<[SampleSet; 3]> {
    if fractions.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
        return Err(Error::Fraction(format!("fractions {fractions:?} must each lie in (0, 1)")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Fraction(format!("fractions {fractions:?} sum to {total}, not 1")));
    }
    let n = set.len();
    let count = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
    let n_train = count(fractions[0]);
    let n_val = count(fractions[1]).min(n - n_train);
    Ok([
        set.range(0..n_train, Split::Train),
        set.range(n_train..n_train + n_val, Split::Val),
        set.range(n_train + n_val..n, Split::Test),
    ])
}
