//! Teacher-student problem instances: ground truth X*, spreading factors F,
//! clean signals π*, and channel observations y.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::channels::{
    channel_forward, sample_prior, sample_spreading, ChannelKind, PriorKind, SpreadingKind,
};
use crate::error::{Error, Result};
use crate::hypergraph::FactorGraph;
use crate::rng::{sub_rng, Stream};

pub const INSTANCE_FORMAT_VERSION: u32 = 1;

/// Spreading factors F_{∎μ}. The deterministic kind is all ones and stored
/// implicitly; random kinds store the full edge-major (edge·M + μ) table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Spreading {
    Ones,
    Dense(Vec<f64>),
}

impl Spreading {
    #[inline]
    pub fn get(&self, edge: usize, mu: usize, m_dim: usize) -> f64 {
        match self {
            Spreading::Ones => 1.0,
            Spreading::Dense(v) => v[edge * m_dim + mu],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub format_version: u32,
    pub graph: FactorGraph,
    pub m_dim: usize,
    pub lambda: f64,
    pub prior: PriorKind,
    pub channel: ChannelKind,
    pub spreading_kind: SpreadingKind,
    pub spreading: Spreading,
    /// Ground truth, variable-major: truth[i·M + μ].
    pub truth: Vec<f64>,
    /// Clean signal π* per edge, stored at generation time.
    pub clean: Vec<f64>,
    /// Observation per edge.
    pub observations: Vec<f64>,
    pub seed: u64,
}

impl Instance {
    #[inline]
    pub fn truth_at(&self, var: usize, mu: usize) -> f64 {
        self.truth[var * self.m_dim + mu]
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Instance> {
        let inst: Instance = serde_json::from_reader(r)?;
        if inst.format_version != INSTANCE_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported instance format version {} (expected {})",
                inst.format_version, INSTANCE_FORMAT_VERSION
            )));
        }
        Ok(inst)
    }
}

/// π*_∎ = (λ/√M) Σ_μ F_∎μ Π_{i∈∂∎} x*_{iμ}, with compensated summation over μ
/// so the same code path is bit-reproducible at any M.
fn clean_signal_from(
    graph: &FactorGraph,
    m_dim: usize,
    lambda: f64,
    spreading: &Spreading,
    truth: &[f64],
    edge: usize,
) -> f64 {
    let vars = &graph.edges[edge].vars;
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for mu in 0..m_dim {
        let mut prod = spreading.get(edge, mu, m_dim);
        for &i in vars {
            prod *= truth[i as usize * m_dim + mu];
        }
        // Kahan step
        let y = prod - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    lambda / (m_dim as f64).sqrt() * sum
}

pub fn generate_instance(
    graph: FactorGraph,
    m_dim: usize,
    lambda: f64,
    prior: PriorKind,
    channel: ChannelKind,
    spreading_kind: SpreadingKind,
    seed: u64,
) -> Result<Instance> {
    if m_dim == 0 {
        return Err(Error::Domain("m_dim must be >= 1".into()));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::Domain(format!("lambda must be finite and positive, got {lambda}")));
    }
    channel.validate()?;

    let mut truth_rng = sub_rng(seed, Stream::Truth);
    let truth = sample_prior(prior, graph.n_vars * m_dim, &mut truth_rng);

    let n_edges = graph.n_edges();
    let spreading = match spreading_kind {
        SpreadingKind::Deterministic => Spreading::Ones,
        kind => {
            let mut rng = sub_rng(seed, Stream::Spreading);
            Spreading::Dense((0..n_edges * m_dim).map(|_| sample_spreading(kind, &mut rng)).collect())
        }
    };

    let clean: Vec<f64> = (0..n_edges)
        .map(|e| clean_signal_from(&graph, m_dim, lambda, &spreading, &truth, e))
        .collect();

    let mut noise_rng = sub_rng(seed, Stream::Noise);
    let observations: Vec<f64> = clean
        .iter()
        .map(|&pi| {
            let w: f64 = rand::Rng::sample(&mut noise_rng, rand_distr::StandardNormal);
            channel_forward(channel, pi, w)
        })
        .collect();

    Ok(Instance {
        format_version: INSTANCE_FORMAT_VERSION,
        graph,
        m_dim,
        lambda,
        prior,
        channel,
        spreading_kind,
        spreading,
        truth,
        clean,
        observations,
        seed,
    })
}

/// Recompute π*_∎ from stored truth and spreading; matches the stored value
/// bit-for-bit because the same summation routine is used.
pub fn clean_signal(instance: &Instance, edge_index: usize) -> Result<f64> {
    if edge_index >= instance.graph.n_edges() {
        return Err(Error::IndexOutOfRange { index: edge_index, len: instance.graph.n_edges() });
    }
    Ok(clean_signal_from(
        &instance.graph,
        instance.m_dim,
        instance.lambda,
        &instance.spreading,
        &instance.truth,
        edge_index,
    ))
}
