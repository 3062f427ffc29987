//! Speed series ingestion, normalization, windowing and synthetic data.

mod normalize;
mod series;
mod synth;
mod window;

pub use normalize::{NormMode, Normalizer, CLIP_HIGH, CLIP_LOW};
pub use series::{SpeedSeries, MAX_INTERPOLATED_GAP};
pub use synth::{synth_generate, DiffusionSim, SynthParams, Topology, MIN_SYNTH_STEPS, STEPS_PER_DAY};
pub use window::{chronological_split, window, SampleSet, Split};

use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Reads a speed CSV; see [`SpeedSeries::read_csv`].
pub fn load_speed_csv(path: impl AsRef<Path>) -> Result<SpeedSeries> {
    SpeedSeries::load_csv(path)
}

/// Normalized train/val/test windows of one series.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub normalizer: Normalizer,
    pub train: SampleSet,
    pub val: SampleSet,
    pub test: SampleSet,
}

impl Dataset {
    /// Windows `series`, splits chronologically and fits the normalizer on
    /// the rows covered by training windows.
    pub fn prepare(
        series: &SpeedSeries,
        history: usize,
        horizon: usize,
        fractions: [f64; 3],
        mode: NormMode,
    ) -> Result<Dataset> {
        let [train, val, test] = Self::split(series, history, horizon, fractions)?;
        let first = train.start_rows[0];
        let last = *train.start_rows.last().expect("non-empty") + history + horizon;
        let normalizer = Normalizer::fit(series, first..last, mode)?;
        Ok(Self::assemble([train, val, test], normalizer))
    }

    /// Same windows and split as [`Dataset::prepare`] under a previously
    /// fitted normalizer, e.g. one stored in a checkpoint.
    pub fn with_normalizer(
        series: &SpeedSeries,
        history: usize,
        horizon: usize,
        fractions: [f64; 3],
        normalizer: Normalizer,
    ) -> Result<Dataset> {
        if normalizer.n() != series.n() {
            return Err(Error::shape(format!(
                "normalizer covers {} nodes, series has {}",
                normalizer.n(),
                series.n()
            )));
        }
        let parts = Self::split(series, history, horizon, fractions)?;
        Ok(Self::assemble(parts, normalizer))
    }

    fn split(series: &SpeedSeries, history: usize, horizon: usize, fractions: [f64; 3]) -> Result<[SampleSet; 3]> {
        let all = window(series, history, horizon)?;
        let parts = chronological_split(&all, fractions)?;
        if parts.iter().any(SampleSet::is_empty) {
            return Err(Error::EmptyDataset);
        }
        Ok(parts)
    }

    fn assemble([train, val, test]: [SampleSet; 3], normalizer: Normalizer) -> Dataset {
        Dataset {
            train: train.normalized(&normalizer),
            val: val.normalized(&normalizer),
            test: test.normalized(&normalizer),
            normalizer,
        }
    }

    pub fn split_set(&self, split: Split) -> Option<&SampleSet> {
        match split {
            Split::Train => Some(&self.train),
            Split::Val => Some(&self.val),
            Split::Test => Some(&self.test),
            Split::All => None,
        }
    }

    /// Loads graph and series from CSV files and aligns their node order.
    pub fn load(
        graph_csv: impl AsRef<Path>,
        speed_csv: impl AsRef<Path>,
    ) -> Result<(Graph, SpeedSeries)> {
        let graph = Graph::load_csv(graph_csv)?;
        let series = load_speed_csv(speed_csv)?.align_to_graph(&graph)?;
        Ok((graph, series))
    }
}
