//! Degree-regular p-uniform (and mixed-species) random hypergraphs describing
//! which p-plets are observed.
//!
//! Sampling uses a configuration model: each variable contributes c stubs, the
//! stub list is shuffled and cut into blocks of p, and conflicts (a variable
//! repeated inside an edge, or two identical edges) are repaired by random
//! member swaps under a fixed budget. The result is near-uniform over the
//! constrained ensemble, which is all the dense-limit analysis needs; failures
//! are reported, never silently degraded.

use std::collections::HashSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{sub_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeciesInfo {
    /// Edge cardinality p of this species.
    pub p: usize,
    /// Number of edges of this species.
    pub edge_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub species: usize,
    /// Sorted, distinct member indices; length = species p.
    pub vars: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorGraph {
    pub n_vars: usize,
    pub species: Vec<SpeciesInfo>,
    pub edges: Vec<Edge>,
    /// Per-variable incident edge indices (merged across species).
    pub adjacency: Vec<Vec<u32>>,
    /// Per-species, per-variable incident edge indices.
    pub adjacency_by_species: Vec<Vec<Vec<u32>>>,
}

impl FactorGraph {
    fn from_edges(n_vars: usize, species: Vec<SpeciesInfo>, edges: Vec<Edge>) -> Self {
        let mut adjacency = vec![Vec::new(); n_vars];
        let mut adjacency_by_species = vec![vec![Vec::new(); n_vars]; species.len()];
        for (e, edge) in edges.iter().enumerate() {
            for &v in &edge.vars {
                adjacency[v as usize].push(e as u32);
                adjacency_by_species[edge.species][v as usize].push(e as u32);
            }
        }
        FactorGraph { n_vars, species, edges, adjacency, adjacency_by_species }
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Text dump: one line per edge, `species_id p v1 v2 … vp`.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        for edge in &self.edges {
            write!(w, "{} {}", edge.species, edge.vars.len())?;
            for v in &edge.vars {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Validation report; all counts are zero for sampler output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostics {
    /// (degree, number of variables with that degree), merged over species.
    pub degree_histogram: Vec<(usize, usize)>,
    pub duplicate_edge_count: usize,
    pub within_edge_repeat_count: usize,
    /// Variables whose per-species degree deviates from that species'
    /// regular degree c = p·edge_count/n.
    pub degree_violations: usize,
}

impl Diagnostics {
    pub fn violations(&self) -> usize {
        self.duplicate_edge_count + self.within_edge_repeat_count + self.degree_violations
    }
}

fn check_feasible(n_vars: usize, p: usize, c: usize) -> Result<()> {
    if p < 2 {
        return Err(Error::Infeasible(format!("p must be >= 2, got {p}")));
    }
    if c < 1 {
        return Err(Error::Infeasible(format!("c must be >= 1, got {c}")));
    }
    if n_vars < p {
        return Err(Error::Infeasible(format!("need n_vars >= p, got n={n_vars}, p={p}")));
    }
    if (n_vars * c) % p != 0 {
        return Err(Error::Infeasible(format!("n·c = {} not divisible by p = {p}", n_vars * c)));
    }
    // Each variable needs at least c distinct p-subsets containing it.
    let mut subsets: u128 = 1;
    for k in 1..p {
        subsets = subsets.saturating_mul((n_vars - k) as u128) / k as u128;
        if subsets > (10 * c) as u128 {
            break; // plenty of room, no need for the exact count
        }
    }
    if subsets < c as u128 {
        return Err(Error::Infeasible(format!(
            "only {subsets} distinct {p}-subsets contain each variable; degree {c} forces duplicates"
        )));
    }
    Ok(())
}

/// Configuration-model sampler for one species. Returns unsorted edge member
/// lists repaired to be conflict-free.
fn sample_species(
    n_vars: usize,
    p: usize,
    c: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Vec<Vec<u32>>> {
    check_feasible(n_vars, p, c)?;
    let n_edges = n_vars * c / p;
    let mut stubs: Vec<u32> = (0..n_vars as u32).flat_map(|v| std::iter::repeat(v).take(c)).collect();
    stubs.shuffle(rng);
    let mut edges: Vec<Vec<u32>> = stubs.chunks(p).map(|ch| ch.to_vec()).collect();

    let budget = 100 * n_edges;
    let mut swaps = 0usize;
    loop {
        // An edge is bad if it repeats a member or duplicates an earlier edge.
        let mut seen: HashSet<Vec<u32>> = HashSet::with_capacity(n_edges);
        let mut bad: Vec<usize> = Vec::new();
        for (i, e) in edges.iter().enumerate() {
            let mut key = e.clone();
            key.sort_unstable();
            let repeat = key.windows(2).any(|w| w[0] == w[1]);
            if repeat || !seen.insert(key) {
                bad.push(i);
            }
        }
        if bad.is_empty() {
            break;
        }
        for &i in &bad {
            if swaps >= budget {
                return Err(Error::Sampling(format!(
                    "repair budget exhausted after {swaps} swaps ({} conflicted edges remain)",
                    bad.len()
                )));
            }
            let j = rng.gen_range(0..n_edges);
            if j == i {
                continue;
            }
            let si = rng.gen_range(0..p);
            let sj = rng.gen_range(0..p);
            let tmp = edges[i][si];
            edges[i][si] = edges[j][sj];
            edges[j][sj] = tmp;
            swaps += 1;
        }
    }
    Ok(edges)
}

/// Sample a single-species degree-regular p-uniform hypergraph.
pub fn sample_regular(n_vars: usize, p: usize, c: usize, seed: u64) -> Result<FactorGraph> {
    let mut rng = sub_rng(seed, Stream::Graph);
    let members = sample_species(n_vars, p, c, &mut rng)?;
    let edges = members
        .into_iter()
        .map(|mut vars| {
            vars.sort_unstable();
            Edge { species: 0, vars }
        })
        .collect::<Vec<_>>();
    let species = vec![SpeciesInfo { p, edge_count: edges.len() }];
    Ok(FactorGraph::from_edges(n_vars, species, edges))
}

/// Sample a mixed-species graph: each species i independently degree-regular
/// with degree c_i = α_i·m_dim (rounded to nearest when not integral).
pub fn sample_mixed(
    n_vars: usize,
    m_dim: usize,
    species: &[(usize, f64)],
    seed: u64,
) -> Result<FactorGraph> {
    let mut all_edges = Vec::new();
    let mut infos = Vec::new();
    for (s, &(p, alpha)) in species.iter().enumerate() {
        if alpha < 0.0 {
            return Err(Error::Infeasible(format!("alpha must be >= 0, got {alpha}")));
        }
        let c = (alpha * m_dim as f64).round() as usize;
        if c == 0 {
            infos.push(SpeciesInfo { p, edge_count: 0 });
            continue;
        }
        let mut rng = sub_rng(seed ^ ((s as u64 + 1) << 32), Stream::Graph);
        let members = sample_species(n_vars, p, c, &mut rng)
            .map_err(|e| Error::Sampling(format!("species {s} (p={p}): {e}")))?;
        infos.push(SpeciesInfo { p, edge_count: members.len() });
        all_edges.extend(members.into_iter().map(|mut vars| {
            vars.sort_unstable();
            Edge { species: s, vars }
        }));
    }
    Ok(FactorGraph::from_edges(n_vars, infos, all_edges))
}

/// Recount degrees and conflicts from scratch.
pub fn validate(graph: &FactorGraph) -> Diagnostics {
    let mut within = 0usize;
    let mut dup = 0usize;
    let mut seen: HashSet<(usize, &[u32])> = HashSet::new();
    for e in &graph.edges {
        if e.vars.windows(2).any(|w| w[0] == w[1]) {
            within += 1;
        }
        if !seen.insert((e.species, &e.vars)) {
            dup += 1;
        }
    }
    let mut degree_violations = 0usize;
    for (s, info) in graph.species.iter().enumerate() {
        if info.edge_count == 0 {
            continue;
        }
        let c = info.p * info.edge_count / graph.n_vars;
        for v in 0..graph.n_vars {
            if graph.adjacency_by_species[s][v].len() != c {
                degree_violations += 1;
            }
        }
    }
    let mut hist = std::collections::BTreeMap::new();
    for adj in &graph.adjacency {
        *hist.entry(adj.len()).or_insert(0usize) += 1;
    }
    Diagnostics {
        degree_histogram: hist.into_iter().collect(),
        duplicate_edge_count: dup,
        within_edge_repeat_count: within,
        degree_violations,
    }
}
