use chrono::{NaiveDate, TimeDelta};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::SpeedSeries;
use crate::error::{Error, Result};
use crate::graph::{Graph, LaplacianKind};
use crate::linalg::DenseMatrix;
use crate::rng::{rng_for, stream, Rng};
use crate::spectral::eig_sym;
use crate::topology::{grid_graph, hybrid_highway_grid_edges, two_community_edges};

pub const MIN_SYNTH_STEPS: usize = 500;
/// Steps per simulated day at 5-minute resolution.
pub const STEPS_PER_DAY: usize = 288;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Topology {
    Grid { width: usize, height: usize },
    TwoCommunity { n1: usize, n2: usize, bridges: usize },
    HybridHighwayGrid { width: usize, height: usize },
}

impl Default for Topology {
    fn default() -> Self {
        Topology::Grid { width: 6, height: 8 }
    }
}

impl Topology {
    pub fn build(&self, seed: u64) -> Result<Graph> {
        match *self {
            Topology::Grid { width, height } => {
                if width * height < 2 {
                    return Err(Error::config("grid needs at least two nodes"));
                }
                Ok(grid_graph(width, height))
            }
            Topology::TwoCommunity { n1, n2, bridges } => Graph::from_edges(&two_community_edges(n1, n2, bridges, seed)?),
            Topology::HybridHighwayGrid { width, height } => Graph::from_edges(&hybrid_highway_grid_edges(width, height)?),
        }
    }
}

/// Parameters of the congestion diffusion process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    /// Diffusion rate α.
    pub alpha: f64,
    /// Decay rate β.
    pub beta: f64,
    /// Per-node, per-step injection probability.
    pub injection_prob: f64,
    pub injection_magnitude: f64,
    /// Amplitude of the daily speed sinusoid.
    pub daily_amplitude: f64,
    pub free_speed: [f64; 2],
    /// Free-flow range for highway nodes (ids starting with `h`).
    pub highway_free_speed: [f64; 2],
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            alpha: 0.3,
            beta: 0.05,
            injection_prob: 0.01,
            injection_magnitude: 20.0,
            daily_amplitude: 3.0,
            free_speed: [45.0, 65.0],
            highway_free_speed: [55.0, 70.0],
        }
    }
}

/// Step-by-step congestion simulator:
/// `c ← (1-β)(I - αL)c + injections`, speed `clamp(v_free - c + a·sin(2πt/288), 0, v_free)`.
pub struct DiffusionSim {
    op: DenseMatrix,
    congestion: Vec<f64>,
    free_speed: Vec<f64>,
    params: SynthParams,
    t: usize,
    rng: Rng,
}

impl DiffusionSim {
    pub fn new(graph: &Graph, params: SynthParams, seed: u64) -> Result<Self> {
        let p = &params;
        if !(0.0..=1.0).contains(&p.injection_prob) || !(0.0..=1.0).contains(&p.beta) || p.alpha < 0.0 {
            return Err(Error::config("need alpha >= 0 and beta, injection_prob in [0, 1]"));
        }
        for r in [p.free_speed, p.highway_free_speed] {
            if !(r[0] > 0.0 && r[1] >= r[0]) {
                return Err(Error::config(format!("bad free-speed range {r:?}")));
            }
        }
        let n = graph.n();
        let l = graph.laplacian(LaplacianKind::SymmetricNormalized)?;
        let op = DenseMatrix::identity(n).add_scaled(-p.alpha, &l)?.scale(1.0 - p.beta);
        let radius = eig_sym(&op)?.eigenvalues().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if radius > 1.0 {
            return Err(Error::config(format!("diffusion operator has spectral radius {radius:.4} > 1")));
        }
        let mut rng = rng_for(seed, stream::SYNTH);
        let free_speed = graph
            .node_ids()
            .iter()
            .map(|id| {
                let [lo, hi] = if id.starts_with('h') { p.highway_free_speed } else { p.free_speed };
                if hi > lo { rng.random_range(lo..hi) } else { lo }
            })
            .collect();
        Ok(DiffusionSim { op, congestion: vec![0.0; n], free_speed, params, t: 0, rng })
    }

    pub fn congestion(&self) -> &[f64] {
        &self.congestion
    }

    pub fn free_speed(&self) -> &[f64] {
        &self.free_speed
    }

    /// Adds congestion at one node before the next step.
    pub fn inject(&mut self, node: usize, magnitude: f64) {
        self.congestion[node] += magnitude;
    }

    /// Speeds at the current step.
    pub fn speeds(&self) -> Vec<f64> {
        let phase = 2.0 * std::f64::consts::PI * (self.t % STEPS_PER_DAY) as f64 / STEPS_PER_DAY as f64;
        let wave = self.params.daily_amplitude * phase.sin();
        self.free_speed
            .iter()
            .zip(&self.congestion)
            .map(|(&v, &c)| (v - c + wave).clamp(0.0, v))
            .collect()
    }

    /// Diffuses, decays and draws new injections.
    pub fn step(&mut self) {
        let mut next = self.op.mat_vec(&self.congestion).expect("square operator");
        for c in next.iter_mut() {
            if self.rng.random::<f64>() < self.params.injection_prob {
                *c += self.params.injection_magnitude;
            }
        }
        self.congestion = next;
        self.t += 1;
    }
}

/// Simulated dataset on `topology`, 5-minute steps from 2020-01-01.
pub fn synth_generate(topology: &Topology, steps: usize, seed: u64, params: &SynthParams) -> Result<(Graph, SpeedSeries)> {
    if steps < MIN_SYNTH_STEPS {
        return Err(Error::config(format!("need at least {MIN_SYNTH_STEPS} steps, got {steps}")));
    }
    let graph = topology.build(seed)?;
    let mut sim = DiffusionSim::new(&graph, params.clone(), seed)?;
    let t0 = NaiveDate::from_ymd_opt(2020, 1, 1).and_then(|d| d.and_hms_opt(0, 0, 0)).expect("valid date");
    let mut timestamps = Vec::with_capacity(steps);
    let mut values = Vec::with_capacity(steps * graph.n());
    for t in 0..steps {
        timestamps.push(t0 + TimeDelta::minutes(5 * t as i64));
        values.extend(sim.speeds());
        sim.step();
    }
    let series = SpeedSeries::new(timestamps, graph.node_ids().to_vec(), values)?;
    Ok((graph, series))
}
