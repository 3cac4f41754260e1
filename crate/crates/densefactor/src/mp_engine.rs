//! Finite-size solvers on a concrete instance: the relaxed message-passing
//! sweep with per-directed-message cavity fields (r-BP) and its dense-limit
//! reduction with per-variable means and one-step memory (G-AMP).
//!
//! Both sweeps are organized as two barrier-separated phases — factor-side
//! quantities first, then variable-side — each phase reading only the frozen
//! output of the previous one. Within a phase every write target is owned by
//! exactly one edge or one variable, so the phases parallelize over edges and
//! variables respectively; all floating-point reductions that feed recorded
//! numbers (convergence measure, order parameters) are performed sequentially
//! in a fixed order, making trajectories independent of the thread count.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{input_moments_nat, output_score, PriorKind};
use crate::error::{Error, Result};
use crate::instance::{Instance, Spreading};
use crate::rng::{sub_rng, Stream};
use crate::trajectory::{error_metrics, Trajectory, TrajectoryRecord};

/// Variance / inverse-cavity-width floor.
const CLAMP_FLOOR: f64 = 1e-12;
/// A convergence measure above this terminates a run as diverged.
const DIVERGENCE_CEILING: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    Rbp,
    Gamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitScheme {
    /// Messages start at the ground truth.
    Informative,
    /// m⁰ = a·x* + √(a−a²)·N(0,1); targets (m,q,Q) = (a,a,1).
    Uninformative { a: f64 },
    /// m⁰ = √a·N(0,1); targets (0,a,1) — slightly off the m=q surface.
    TrulyRandom { a: f64 },
    /// m⁰ = x*(a + √(a−a²)·N(0,1)), v⁰ = m⁰²/a; keeps every factor-side
    /// variance strictly positive, which the sign channel needs at start-up.
    SignInformative { a: f64 },
}

impl InitScheme {
    pub fn validate(&self) -> Result<()> {
        match *self {
            InitScheme::Informative => Ok(()),
            InitScheme::Uninformative { a }
            | InitScheme::TrulyRandom { a }
            | InitScheme::SignInformative { a } => {
                if a > 0.0 && a < 1.0 {
                    Ok(())
                } else {
                    Err(Error::Config(format!("init overlap a = {a} outside (0,1)")))
                }
            }
        }
    }
}

/// Precomputed indexing shared by the r-BP message layout.
///
/// Directed messages are variable-major: message (i, k-th incident edge)
/// occupies directed index i·deg + k, and its per-μ values live in a flat
/// array at (i·deg + k)·M + μ. `edge_dir` lists, per edge and member slot,
/// the directed index pointing at that edge.
#[derive(Debug, Clone)]
struct Topology {
    n_vars: usize,
    deg: usize,
    /// Prefix offsets into `edge_dir` / flattened member lists, length E+1.
    edge_off: Vec<u32>,
    edge_dir: Vec<u32>,
}

impl Topology {
    fn build(instance: &Instance) -> Result<Topology> {
        let graph = &instance.graph;
        let n_vars = graph.n_vars;
        let deg = graph.adjacency.first().map(|a| a.len()).unwrap_or(0);
        if deg == 0 {
            return Err(Error::Config("instance graph has no edges".into()));
        }
        for (i, adj) in graph.adjacency.iter().enumerate() {
            if adj.len() != deg {
                return Err(Error::Config(format!(
                    "variable {i} has degree {} but the layout requires regular degree {deg}",
                    adj.len()
                )));
            }
        }
        let mut edge_off = Vec::with_capacity(graph.n_edges() + 1);
        let mut off = 0u32;
        edge_off.push(0);
        for edge in &graph.edges {
            off += edge.vars.len() as u32;
            edge_off.push(off);
        }
        let mut edge_dir = vec![u32::MAX; off as usize];
        for (i, adj) in graph.adjacency.iter().enumerate() {
            for (k, &e) in adj.iter().enumerate() {
                let vars = &graph.edges[e as usize].vars;
                let slot = vars
                    .binary_search(&(i as u32))
                    .map_err(|_| Error::Config(format!("adjacency lists variable {i} for edge {e} but the edge does not contain it")))?;
                edge_dir[edge_off[e as usize] as usize + slot] = (i * deg + k) as u32;
            }
        }
        Ok(Topology { n_vars, deg, edge_off, edge_dir })
    }

    #[inline]
    fn members(&self, e: usize) -> &[u32] {
        &self.edge_dir[self.edge_off[e] as usize..self.edge_off[e + 1] as usize]
    }
}

#[derive(Debug, Clone)]
pub struct MessageStateRBP {
    topo: Topology,
    /// Cavity means / second moments per directed message × μ.
    m_msg: Vec<f64>,
    v_msg: Vec<f64>,
    /// Double buffers for the synchronous update.
    m_next: Vec<f64>,
    v_next: Vec<f64>,
    /// Output scores per (edge, μ).
    g: Vec<f64>,
    dg: Vec<f64>,
    /// Full-sum marginal mean / second moment per (variable, μ).
    pub marg_m: Vec<f64>,
    pub marg_v: Vec<f64>,
    /// Number of variance / cavity-width floor events so far.
    pub clamp_events: u64,
}

#[derive(Debug, Clone)]
pub struct MessageStateGAMP {
    /// Per (variable, μ): current mean / second moment and one-step memory.
    pub m_cur: Vec<f64>,
    pub v_cur: Vec<f64>,
    pub m_prev: Vec<f64>,
    /// Raw input-function outputs of the last sweep (pre-damping).
    f_new: Vec<f64>,
    fii_new: Vec<f64>,
    /// Per edge: belief mean/variance and output scores with memory.
    omega: Vec<f64>,
    v_fac: Vec<f64>,
    g_cur: Vec<f64>,
    g_prev: Vec<f64>,
    dg: Vec<f64>,
    pub clamp_events: u64,
}

#[derive(Debug, Clone)]
pub enum MessageState {
    Rbp(MessageStateRBP),
    Gamp(MessageStateGAMP),
}

impl MessageState {
    pub fn clamp_events(&self) -> u64 {
        match self {
            MessageState::Rbp(s) => s.clamp_events,
            MessageState::Gamp(s) => s.clamp_events,
        }
    }
}

fn draw_init(scheme: InitScheme, prior: PriorKind, x_star: f64, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let normal = |rng: &mut ChaCha8Rng| rng.sample::<f64, _>(rand_distr::StandardNormal);
    let (m, v) = match scheme {
        InitScheme::Informative => {
            let v = match prior {
                PriorKind::Ising => 1.0,
                PriorKind::Gaussian => x_star * x_star,
            };
            (x_star, v)
        }
        InitScheme::Uninformative { a } => (a * x_star + (a - a * a).sqrt() * normal(rng), 1.0),
        InitScheme::TrulyRandom { a } => (a.sqrt() * normal(rng), 1.0),
        InitScheme::SignInformative { a } => {
            let m = x_star * (a + (a - a * a).sqrt() * normal(rng));
            (m, m * m / a)
        }
    };
    match prior {
        PriorKind::Ising => (m, 1.0),
        PriorKind::Gaussian => (m, v),
    }
}

/// Fill message state from an initialization scheme. The per-(i,μ) base values
/// are drawn once and shared by all outgoing r-BP messages of that component,
/// so both algorithms start from the same measured order parameters.
pub fn init_messages(
    scheme: InitScheme,
    instance: &Instance,
    algorithm: Algorithm,
    seed: u64,
) -> Result<MessageState> {
    scheme.validate()?;
    let n = instance.graph.n_vars;
    let m_dim = instance.m_dim;
    let nm = n * m_dim;
    let mut rng = sub_rng(seed, Stream::Init);
    let mut base_m = vec![0.0; nm];
    let mut base_v = vec![0.0; nm];
    for i in 0..n {
        for mu in 0..m_dim {
            let (m0, v0) = draw_init(scheme, instance.prior, instance.truth_at(i, mu), &mut rng);
            base_m[i * m_dim + mu] = m0;
            base_v[i * m_dim + mu] = v0;
        }
    }
    match algorithm {
        Algorithm::Rbp => {
            let topo = Topology::build(instance)?;
            let n_dir = n * topo.deg;
            let mut m_msg = vec![0.0; n_dir * m_dim];
            let mut v_msg = vec![0.0; n_dir * m_dim];
            for i in 0..n {
                for k in 0..topo.deg {
                    let d = (i * topo.deg + k) * m_dim;
                    m_msg[d..d + m_dim].copy_from_slice(&base_m[i * m_dim..(i + 1) * m_dim]);
                    v_msg[d..d + m_dim].copy_from_slice(&base_v[i * m_dim..(i + 1) * m_dim]);
                }
            }
            let n_edges = instance.graph.n_edges();
            Ok(MessageState::Rbp(MessageStateRBP {
                m_next: m_msg.clone(),
                v_next: v_msg.clone(),
                m_msg,
                v_msg,
                g: vec![0.0; n_edges * m_dim],
                dg: vec![0.0; n_edges * m_dim],
                marg_m: base_m,
                marg_v: base_v,
                clamp_events: 0,
                topo,
            }))
        }
        Algorithm::Gamp => {
            let n_edges = instance.graph.n_edges();
            Ok(MessageState::Gamp(MessageStateGAMP {
                m_prev: base_m.clone(),
                f_new: base_m.clone(),
                fii_new: base_v.clone(),
                m_cur: base_m,
                v_cur: base_v,
                omega: vec![0.0; n_edges],
                v_fac: vec![0.0; n_edges],
                g_cur: vec![0.0; n_edges],
                g_prev: vec![0.0; n_edges],
                dg: vec![0.0; n_edges],
                clamp_events: 0,
            }))
        }
    }
}

/// The ν-contiguous row of a per-(variable, ν) table.
#[inline]
fn row_slice(buf: &[f64], j: usize, m_dim: usize) -> &[f64] {
    &buf[j * m_dim..(j + 1) * m_dim]
}

#[inline]
fn spread_coeff(instance: &Instance, e: usize, mu: usize) -> f64 {
    instance.lambda / (instance.m_dim as f64).sqrt() * instance.spreading.get(e, mu, instance.m_dim)
}

/// One synchronous r-BP pass. Returns the convergence measure
/// D = ⟨|f_input − m|⟩ over all directed messages and components.
pub fn rbp_sweep(state: &mut MessageStateRBP, instance: &Instance, damping: f64) -> Result<f64> {
    let m_dim = instance.m_dim;
    let deg = state.topo.deg;
    let n_vars = state.topo.n_vars;
    let n_edges = instance.graph.n_edges();

    // Factor phase: per-edge cavity belief (ω, V) for each μ, then scores.
    // Writes only the edge's own g/dg rows.
    let topo = &state.topo;
    let m_msg = &state.m_msg;
    let v_msg = &state.v_msg;
    let clamps = std::sync::atomic::AtomicU64::new(0);
    let factor_body = |(e, (g_row, dg_row)): (usize, (&mut [f64], &mut [f64]))| -> Result<()> {
        let members = topo.members(e);
        let y = instance.observations[e];
        let mut tu = vec![(0.0f64, 0.0f64); m_dim];
        let mut sum_t = 0.0;
        let mut sum_u = 0.0;
        for nu in 0..m_dim {
            let lf = spread_coeff(instance, e, nu);
            let mut pm = 1.0;
            let mut pv = 1.0;
            for &d in members {
                pm *= m_msg[d as usize * m_dim + nu];
                pv *= v_msg[d as usize * m_dim + nu];
            }
            let t = lf * pm;
            let u = lf * lf * (pv - pm * pm);
            tu[nu] = (t, u);
            sum_t += t;
            sum_u += u;
        }
        for mu in 0..m_dim {
            let omega = sum_t - tu[mu].0;
            let mut v = sum_u - tu[mu].1;
            if v < CLAMP_FLOOR {
                v = CLAMP_FLOOR;
                clamps.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            }
            let (gv, dgv) = output_score(instance.channel, omega, y, v).map_err(|_| {
                Error::Divergence {
                    context: "rbp_sweep factor phase",
                    detail: format!("non-finite belief at edge {e}, component {mu}"),
                }
            })?;
            g_row[mu] = gv;
            dg_row[mu] = dgv;
        }
        Ok(())
    };
    {
        let g_chunks = state.g.chunks_mut(m_dim);
        let dg_chunks = state.dg.chunks_mut(m_dim);
        #[cfg(feature = "parallel")]
        {
            let pairs: Vec<_> = g_chunks.zip(dg_chunks).collect();
            pairs
                .into_par_iter()
                .enumerate()
                .try_for_each(|(e, pair)| factor_body((e, pair)))?;
        }
        #[cfg(not(feature = "parallel"))]
        g_chunks.zip(dg_chunks).enumerate().try_for_each(|(e, pair)| factor_body((e, pair)))?;
    }
    let _ = n_edges;

    // Variable phase: full cavity sums per (i,μ) minus the own-edge term give
    // each outgoing message; the full sums themselves give the marginals.
    // Leave-one-out products are computed explicitly, never by division.
    let g = &state.g;
    let dg = &state.dg;
    let graph = &instance.graph;
    let mut d_part = vec![0.0f64; n_vars];
    let var_body = |(i, (((mn, vn), mm), mv), d_acc): (
        usize,
        (((&mut [f64], &mut [f64]), &mut [f64]), &mut [f64]),
        &mut f64,
    )|
     -> Result<()> {
        let mut sa = vec![0.0f64; m_dim];
        let mut sb = vec![0.0f64; m_dim];
        let mut ab = vec![(0.0f64, 0.0f64); deg * m_dim];
        for (k, &e) in graph.adjacency[i].iter().enumerate() {
            let e = e as usize;
            let members = topo.members(e);
            for mu in 0..m_dim {
                let lf = spread_coeff(instance, e, mu);
                // Leave-one-out product over members, skipping this variable.
                let mut rho = 1.0;
                for &d in members {
                    let var_of_d = d as usize / deg;
                    if var_of_d != i {
                        rho *= m_msg[d as usize * m_dim + mu];
                    }
                }
                let a = lf * lf * (-dg[e * m_dim + mu]) * rho * rho;
                let b = lf * g[e * m_dim + mu] * rho;
                sa[mu] += a;
                sb[mu] += b;
                ab[k * m_dim + mu] = (a, b);
            }
        }
        for k in 0..deg {
            for mu in 0..m_dim {
                let (a_own, b_own) = ab[k * m_dim + mu];
                let a = (sa[mu] - a_own).max(CLAMP_FLOOR);
                let b = sb[mu] - b_own;
                let (f, fii) = input_moments_nat(instance.prior, a, b);
                let idx = k * m_dim + mu;
                let old_m = m_msg[(i * deg + k) * m_dim + mu];
                let old_v = v_msg[(i * deg + k) * m_dim + mu];
                if !f.is_finite() || !fii.is_finite() {
                    return Err(Error::Divergence {
                        context: "rbp_sweep variable phase",
                        detail: format!("non-finite update at variable {i}, edge slot {k}, component {mu}"),
                    });
                }
                *d_acc += (f - old_m).abs();
                mn[idx] = old_m + damping * (f - old_m);
                vn[idx] = old_v + damping * (fii - old_v);
            }
        }
        for mu in 0..m_dim {
            let a = sa[mu].max(CLAMP_FLOOR);
            let (f, fii) = input_moments_nat(instance.prior, a, sb[mu]);
            mm[mu] = f;
            mv[mu] = fii;
        }
        Ok(())
    };
    {
        let iter = state
            .m_next
            .chunks_mut(deg * m_dim)
            .zip(state.v_next.chunks_mut(deg * m_dim))
            .zip(state.marg_m.chunks_mut(m_dim))
            .zip(state.marg_v.chunks_mut(m_dim));
        #[cfg(feature = "parallel")]
        {
            let items: Vec<_> = iter.zip(d_part.iter_mut()).collect();
            items
                .into_par_iter()
                .enumerate()
                .try_for_each(|(i, (chunks, d_acc))| var_body((i, chunks, d_acc)))?;
        }
        #[cfg(not(feature = "parallel"))]
        iter.zip(d_part.iter_mut())
            .enumerate()
            .try_for_each(|(i, (chunks, d_acc))| var_body((i, chunks, d_acc)))?;
    }
    std::mem::swap(&mut state.m_msg, &mut state.m_next);
    std::mem::swap(&mut state.v_msg, &mut state.v_next);
    state.clamp_events += clamps.into_inner();
    // Deterministic sequential reduction of the per-variable partials.
    let total: f64 = d_part.iter().sum();
    Ok(total / (n_vars * deg * m_dim) as f64)
}

/// One G-AMP pass with one-step memory. Returns D = ⟨|f_input − m|⟩.
pub fn gamp_sweep(state: &mut MessageStateGAMP, instance: &Instance, damping: f64) -> Result<f64> {
    let m_dim = instance.m_dim;
    let graph = &instance.graph;
    let n_vars = graph.n_vars;

    // Rotate output-score memory: the scores written last sweep become t−1.
    std::mem::swap(&mut state.g_cur, &mut state.g_prev);

    let clamps = std::sync::atomic::AtomicU64::new(0);
    let m_cur = &state.m_cur;
    let v_cur = &state.v_cur;
    let m_prev = &state.m_prev;
    let g_prev = &state.g_prev;
    let scale = instance.lambda / (m_dim as f64).sqrt();
    // Per-sweep tables shared by both phases: posterior variance v − m² and
    // the one-step memory product m ⊙ m^{t−1}, laid out ν-contiguously like
    // the moments themselves so edge bodies can work on slices.
    let mut wvar_buf = vec![0.0f64; n_vars * m_dim];
    let mut ap_buf = vec![0.0f64; n_vars * m_dim];
    for idx in 0..n_vars * m_dim {
        wvar_buf[idx] = v_cur[idx] - m_cur[idx] * m_cur[idx];
        ap_buf[idx] = m_cur[idx] * m_prev[idx];
    }
    let wvar = &wvar_buf;
    let ap = &ap_buf;
    let row = |buf, j| row_slice(buf, j, m_dim);
    let lf_row = |e: usize| -> Option<&[f64]> {
        match &instance.spreading {
            Spreading::Ones => None,
            Spreading::Dense(v) => Some(&v[e * m_dim..(e + 1) * m_dim]),
        }
    };
    // Factor phase.
    let factor_body = |(e, (((om, vf), gc), dgc)): (
        usize,
        (((&mut f64, &mut f64), &mut f64), &mut f64),
    )|
     -> Result<()> {
        let vars = &graph.edges[e].vars;
        let y = instance.observations[e];
        let gp = g_prev[e];
        let lfr = lf_row(e);
        let mut omega = 0.0;
        let mut v = 0.0;
        // Belief mean/variance plus the memory (reaction) term
        // Σ_j (v_j − m_j²) Π_{k≠j} m_k m_k^{t−1}, accumulated over ν.
        // The pair and triplet cases carry almost all the work and get
        // unrolled leave-one-out products over ν-contiguous member rows.
        match vars.len() {
            2 => {
                let (j0, j1) = (vars[0] as usize, vars[1] as usize);
                let (m0, m1) = (row(m_cur, j0), row(m_cur, j1));
                let (v0, v1) = (row(v_cur, j0), row(v_cur, j1));
                let (w0, w1) = (row(wvar, j0), row(wvar, j1));
                let (a0, a1) = (row(ap, j0), row(ap, j1));
                for nu in 0..m_dim {
                    let lf = scale * lfr.map_or(1.0, |r| r[nu]);
                    let pm = m0[nu] * m1[nu];
                    let pv = v0[nu] * v1[nu];
                    let mem = w0[nu] * a1[nu] + w1[nu] * a0[nu];
                    omega += lf * (pm - lf * gp * mem);
                    v += lf * lf * (pv - pm * pm);
                }
            }
            3 => {
                let (j0, j1, j2) = (vars[0] as usize, vars[1] as usize, vars[2] as usize);
                let (m0, m1, m2) = (row(m_cur, j0), row(m_cur, j1), row(m_cur, j2));
                let (v0, v1, v2) = (row(v_cur, j0), row(v_cur, j1), row(v_cur, j2));
                let (w0, w1, w2) = (row(wvar, j0), row(wvar, j1), row(wvar, j2));
                let (a0, a1, a2) = (row(ap, j0), row(ap, j1), row(ap, j2));
                for nu in 0..m_dim {
                    let lf = scale * lfr.map_or(1.0, |r| r[nu]);
                    let pm = m0[nu] * m1[nu] * m2[nu];
                    let pv = v0[nu] * v1[nu] * v2[nu];
                    let mem = w0[nu] * a1[nu] * a2[nu]
                        + w1[nu] * a0[nu] * a2[nu]
                        + w2[nu] * a0[nu] * a1[nu];
                    omega += lf * (pm - lf * gp * mem);
                    v += lf * lf * (pv - pm * pm);
                }
            }
            _ => {
                for nu in 0..m_dim {
                    let lf = scale * lfr.map_or(1.0, |r| r[nu]);
                    let mut pm = 1.0;
                    let mut pv = 1.0;
                    for &j in vars {
                        pm *= m_cur[j as usize * m_dim + nu];
                        pv *= v_cur[j as usize * m_dim + nu];
                    }
                    let mut mem = 0.0;
                    for (sj, &j) in vars.iter().enumerate() {
                        let mut prod = wvar[j as usize * m_dim + nu];
                        for (sk, &k) in vars.iter().enumerate() {
                            if sk != sj {
                                prod *= ap[k as usize * m_dim + nu];
                            }
                        }
                        mem += prod;
                    }
                    omega += lf * (pm - lf * gp * mem);
                    v += lf * lf * (pv - pm * pm);
                }
            }
        }
        if v < CLAMP_FLOOR {
            v = CLAMP_FLOOR;
            clamps.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        }
        let (gv, dgv) = output_score(instance.channel, omega, y, v).map_err(|_| Error::Divergence {
            context: "gamp_sweep factor phase",
            detail: format!("non-finite belief at edge {e}"),
        })?;
        *om = omega;
        *vf = v;
        *gc = gv;
        *dgc = dgv;
        Ok(())
    };
    {
        let iter = state
            .omega
            .iter_mut()
            .zip(state.v_fac.iter_mut())
            .zip(state.g_cur.iter_mut())
            .zip(state.dg.iter_mut());
        #[cfg(feature = "parallel")]
        {
            let items: Vec<_> = iter.collect();
            items.into_par_iter().enumerate().try_for_each(|(e, t)| factor_body((e, t)))?;
        }
        #[cfg(not(feature = "parallel"))]
        iter.enumerate().try_for_each(|(e, t)| factor_body((e, t)))?;
    }

    // Variable phase: local cavity parameters with the Onsager correction.
    let g_cur = &state.g_cur;
    let dg = &state.dg;
    let mut d_part = vec![0.0f64; n_vars];
    let var_body = |(i, (fm, fv), d_acc): (usize, (&mut [f64], &mut [f64]), &mut f64)| -> Result<()> {
        let mi = row(m_cur, i);
        let mpi = row(m_prev, i);
        // Accumulate the cavity precision and field over adjacent edges for
        // all ν at once; edges are visited in adjacency order so the
        // reduction order is fixed regardless of threading.
        let mut inv_sigma = vec![0.0f64; m_dim];
        let mut rhs = vec![0.0f64; m_dim];
        for &e in &graph.adjacency[i] {
            let e = e as usize;
            let vars = &graph.edges[e].vars;
            let lfr = lf_row(e);
            let (gce, gpe, dge) = (g_cur[e], g_prev[e], dg[e]);
            // ρ = Π_{k∈∂e\i} m_k and the memory term over j ∈ ∂e\i with
            // pair leave-one-out products, per ν.
            match vars.len() {
                2 => {
                    let o = vars.iter().map(|&k| k as usize).find(|&k| k != i).unwrap();
                    let (mo, wo) = (row(m_cur, o), row(wvar, o));
                    for nu in 0..m_dim {
                        let lf = scale * lfr.map_or(1.0, |r| r[nu]);
                        let rho = mo[nu];
                        inv_sigma[nu] += lf * lf * (-dge) * rho * rho;
                        rhs[nu] += lf * gce * (rho - lf * gpe * mpi[nu] * wo[nu]);
                    }
                }
                3 => {
                    let mut others = vars.iter().map(|&k| k as usize).filter(|&k| k != i);
                    let o1 = others.next().unwrap();
                    let o2 = others.next().unwrap();
                    let (m1, m2) = (row(m_cur, o1), row(m_cur, o2));
                    let (w1, w2) = (row(wvar, o1), row(wvar, o2));
                    let (a1, a2) = (row(ap, o1), row(ap, o2));
                    for nu in 0..m_dim {
                        let lf = scale * lfr.map_or(1.0, |r| r[nu]);
                        let rho = m1[nu] * m2[nu];
                        inv_sigma[nu] += lf * lf * (-dge) * rho * rho;
                        let mem = w1[nu] * a2[nu] + w2[nu] * a1[nu];
                        rhs[nu] += lf * gce * (rho - lf * gpe * mpi[nu] * mem);
                    }
                }
                _ => {
                    for nu in 0..m_dim {
                        let lf = scale * lfr.map_or(1.0, |r| r[nu]);
                        let mut rho = 1.0;
                        for &k in vars {
                            if k as usize != i {
                                rho *= m_cur[k as usize * m_dim + nu];
                            }
                        }
                        inv_sigma[nu] += lf * lf * (-dge) * rho * rho;
                        let mut mem = 0.0;
                        for &j in vars {
                            let j = j as usize;
                            if j == i {
                                continue;
                            }
                            let mut prod = wvar[j * m_dim + nu];
                            for &k in vars {
                                let k = k as usize;
                                if k != i && k != j {
                                    prod *= ap[k * m_dim + nu];
                                }
                            }
                            mem += prod;
                        }
                        rhs[nu] += lf * gce * (rho - lf * gpe * mpi[nu] * mem);
                    }
                }
            }
        }
        for mu in 0..m_dim {
            let a = inv_sigma[mu].max(CLAMP_FLOOR);
            let b = mi[mu] * a + rhs[mu];
            let (f, fii) = input_moments_nat(instance.prior, a, b);
            if !f.is_finite() || !fii.is_finite() {
                return Err(Error::Divergence {
                    context: "gamp_sweep variable phase",
                    detail: format!("non-finite update at variable {i}, component {mu}"),
                });
            }
            *d_acc += (f - mi[mu]).abs();
            fm[mu] = f;
            fv[mu] = fii;
        }
        Ok(())
    };
    {
        let iter = state.f_new.chunks_mut(m_dim).zip(state.fii_new.chunks_mut(m_dim));
        #[cfg(feature = "parallel")]
        {
            let items: Vec<_> = iter.zip(d_part.iter_mut()).collect();
            items
                .into_par_iter()
                .enumerate()
                .try_for_each(|(i, (chunks, d_acc))| var_body((i, chunks, d_acc)))?;
        }
        #[cfg(not(feature = "parallel"))]
        iter.zip(d_part.iter_mut())
            .enumerate()
            .try_for_each(|(i, (chunks, d_acc))| var_body((i, chunks, d_acc)))?;
    }

    // Damped update and memory rotation (sequential; owns all arrays).
    std::mem::swap(&mut state.m_prev, &mut state.m_cur);
    for idx in 0..n_vars * m_dim {
        // m_prev now holds the pre-update means.
        state.m_cur[idx] = state.m_prev[idx] + damping * (state.f_new[idx] - state.m_prev[idx]);
        state.v_cur[idx] += damping * (state.fii_new[idx] - state.v_cur[idx]);
    }
    state.clamp_events += clamps.into_inner();
    let total: f64 = d_part.iter().sum();
    Ok(total / (n_vars * m_dim) as f64)
}

/// Empirical order parameters (m, q, Q) from the current marginals.
pub fn measure_order_params(state: &MessageState, instance: &Instance) -> (f64, f64, f64) {
    let (mm, vv): (&[f64], &[f64]) = match state {
        MessageState::Rbp(s) => (&s.marg_m, &s.marg_v),
        MessageState::Gamp(s) => (&s.m_cur, &s.v_cur),
    };
    let nm = mm.len();
    let mut m = 0.0;
    let mut q = 0.0;
    let mut big_q = 0.0;
    for idx in 0..nm {
        let i = idx / instance.m_dim;
        let mu = idx % instance.m_dim;
        m += instance.truth_at(i, mu) * mm[idx];
        q += mm[idx] * mm[idx];
        big_q += vv[idx];
    }
    let norm = nm as f64;
    (m / norm, q / norm, big_q / norm)
}

/// Sign-insensitive magnetization (1/M) Σ_μ |(1/N) Σ_i x*_{iμ} m_{iμ}|,
/// which ignores a global sign flip of each μ-plane.
pub fn corrected_magnetization(state: &MessageState, instance: &Instance) -> f64 {
    let mm: &[f64] = match state {
        MessageState::Rbp(s) => &s.marg_m,
        MessageState::Gamp(s) => &s.m_cur,
    };
    let m_dim = instance.m_dim;
    let n = instance.graph.n_vars;
    let mut total = 0.0;
    for mu in 0..m_dim {
        let mut plane = 0.0;
        for i in 0..n {
            plane += instance.truth_at(i, mu) * mm[i * m_dim + mu];
        }
        total += (plane / n as f64).abs();
    }
    total / m_dim as f64
}

/// Iterate sweeps until D ≤ conv_tol, divergence, or max_t, recording order
/// parameters each step. Initialization draws from the instance seed.
pub fn run_mp(
    algorithm: Algorithm,
    instance: &Instance,
    scheme: InitScheme,
    damping: f64,
    max_t: usize,
    conv_tol: f64,
) -> Result<Trajectory> {
    run_mp_full(algorithm, instance, scheme, damping, max_t, conv_tol).map(|r| r.trajectory)
}

/// Everything a finite-size run produces beyond the bare trajectory.
#[derive(Debug)]
pub struct MpRun {
    pub trajectory: Trajectory,
    /// Plane-sign-corrected magnetization per recorded step (index-aligned
    /// with the trajectory records). This is the magnetization to compare
    /// against the macroscopic recursion: individual μ-planes may converge
    /// sign-flipped relative to the truth, which lowers the plain overlap
    /// but not the recovery quality.
    pub corrected_m: Vec<f64>,
    pub state: MessageState,
}

/// Like [`run_mp`] but also returns the per-step corrected magnetization and
/// the final message state, so callers can audit plane signs or marginals.
pub fn run_mp_full(
    algorithm: Algorithm,
    instance: &Instance,
    scheme: InitScheme,
    damping: f64,
    max_t: usize,
    conv_tol: f64,
) -> Result<MpRun> {
    if max_t < 1 {
        return Err(Error::Config("max_t must be >= 1".into()));
    }
    let mut state = init_messages(scheme, instance, algorithm, instance.seed)?;
    let p = instance.graph.species[0].p;
    let record = |t: usize, state: &MessageState, d: f64| {
        let (m, q, big_q) = measure_order_params(state, instance);
        let (mi, mo) = error_metrics(m, q, instance.lambda, p);
        TrajectoryRecord { t, m, q, big_q, d, mse_in: mi, mse_out: mo }
    };
    let mut records = vec![record(0, &state, 0.0)];
    let mut corrected_m = vec![corrected_magnetization(&state, instance)];
    let mut converged = false;
    let mut diverged = false;
    let mut steps = 0;
    for t in 1..=max_t {
        let swept = match &mut state {
            MessageState::Rbp(s) => rbp_sweep(s, instance, damping),
            MessageState::Gamp(s) => gamp_sweep(s, instance, damping),
        };
        let d = match swept {
            Ok(d) => d,
            Err(Error::Divergence { .. }) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        steps = t;
        records.push(record(t, &state, d));
        corrected_m.push(corrected_magnetization(&state, instance));
        if !d.is_finite() || d > DIVERGENCE_CEILING {
            diverged = true;
            break;
        }
        if d <= conv_tol {
            converged = true;
            break;
        }
    }
    Ok(MpRun {
        trajectory: Trajectory { records, converged, diverged, steps },
        corrected_m,
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{ChannelKind, SpreadingKind};
    use crate::hypergraph::{sample_mixed, sample_regular};
    use crate::instance::generate_instance;
    use crate::numerics::adaptive_simpson;

    fn small_instance(
        n: usize,
        p: usize,
        c: usize,
        m_dim: usize,
        lambda: f64,
        prior: PriorKind,
        channel: ChannelKind,
        spreading: SpreadingKind,
        seed: u64,
    ) -> Instance {
        let graph = sample_regular(n, p, c, seed).unwrap();
        generate_instance(graph, m_dim, lambda, prior, channel, spreading, seed).unwrap()
    }

    fn awgn() -> ChannelKind {
        ChannelKind::AdditiveGaussian { noise_std: 1.0 }
    }

    #[test]
    fn informative_ising_measures_ones() {
        let inst = small_instance(
            40,
            2,
            4,
            6,
            1.5,
            PriorKind::Ising,
            awgn(),
            SpreadingKind::Rademacher,
            7,
        );
        for algo in [Algorithm::Rbp, Algorithm::Gamp] {
            let state = init_messages(InitScheme::Informative, &inst, algo, 7).unwrap();
            let (m, q, big_q) = measure_order_params(&state, &inst);
            assert_eq!((m, q, big_q), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn init_scheme_targets() {
        let inst = small_instance(
            500,
            2,
            4,
            200,
            1.5,
            PriorKind::Gaussian,
            awgn(),
            SpreadingKind::Rademacher,
            3,
        );
        // Uninformative(a): (a, a, 1) up to CLT noise; N·M = 1e5.
        let state = init_messages(InitScheme::Uninformative { a: 0.01 }, &inst, Algorithm::Gamp, 3)
            .unwrap();
        let (m, q, big_q) = measure_order_params(&state, &inst);
        assert!((m - 0.01).abs() < 0.004, "m0 = {m}");
        assert!((q - 0.01).abs() < 0.004, "q0 = {q}");
        assert_eq!(big_q, 1.0);
        // TrulyRandom(a): (0, a, 1).
        let state =
            init_messages(InitScheme::TrulyRandom { a: 0.01 }, &inst, Algorithm::Gamp, 3).unwrap();
        let (m, q, big_q) = measure_order_params(&state, &inst);
        assert!(m.abs() < 0.004, "m0 = {m}");
        assert!((q - 0.01).abs() < 0.004, "q0 = {q}");
        assert_eq!(big_q, 1.0);
        assert!(init_messages(InitScheme::Uninformative { a: 1.5 }, &inst, Algorithm::Gamp, 3)
            .is_err());
    }

    #[test]
    fn sign_informative_keeps_variances_positive() {
        let inst = small_instance(
            60,
            2,
            6,
            20,
            1.0,
            PriorKind::Gaussian,
            ChannelKind::Sign,
            SpreadingKind::Rademacher,
            11,
        );
        let state =
            init_messages(InitScheme::SignInformative { a: 0.99 }, &inst, Algorithm::Rbp, 11)
                .unwrap();
        let MessageState::Rbp(s) = &state else { panic!() };
        for (m, v) in s.m_msg.iter().zip(&s.v_msg) {
            assert!(v - m * m > 0.0, "v = {v}, m² = {}", m * m);
        }
        let (m, q, big_q) = measure_order_params(&state, &inst);
        // N·M = 1200 samples of x*² carry ~√2/√1200 ≈ 4% fluctuations.
        assert!((m - 0.99).abs() < 0.15 && (q - 0.99).abs() < 0.15, "m={m} q={q}");
        assert!((big_q - 1.0).abs() < 0.15, "Q0 = {big_q}");
    }

    #[test]
    fn zero_damping_leaves_messages_unchanged() {
        let inst = small_instance(
            30,
            3,
            3,
            8,
            1.2,
            PriorKind::Gaussian,
            awgn(),
            SpreadingKind::Deterministic,
            5,
        );
        let state =
            init_messages(InitScheme::Uninformative { a: 0.3 }, &inst, Algorithm::Rbp, 5).unwrap();
        let MessageState::Rbp(mut s) = state else { panic!() };
        let before_m = s.m_msg.clone();
        let before_v = s.v_msg.clone();
        rbp_sweep(&mut s, &inst, 0.0).unwrap();
        assert_eq!(s.m_msg, before_m);
        assert_eq!(s.v_msg, before_v);
    }

    /// Single factor (N = p, c = 1, M = 1): one r-BP sweep must reproduce the
    /// exact conditional posterior mean of each variable given the single
    /// observation and point beliefs at the truth for the other members.
    #[test]
    fn single_factor_matches_brute_force_posterior() {
        // Ising prior: enumerate x_i = ±1 under the additive likelihood.
        let inst = small_instance(
            2,
            2,
            1,
            1,
            1.3,
            PriorKind::Ising,
            awgn(),
            SpreadingKind::Deterministic,
            21,
        );
        let y = inst.observations[0];
        let lam = inst.lambda;
        let state = init_messages(InitScheme::Informative, &inst, Algorithm::Rbp, 21).unwrap();
        let MessageState::Rbp(mut s) = state else { panic!() };
        rbp_sweep(&mut s, &inst, 1.0).unwrap();
        for i in 0..2 {
            let other = inst.truth_at(1 - i, 0);
            let wp = (-(y - lam * other).powi(2) / 2.0).exp();
            let wm = (-(y + lam * other).powi(2) / 2.0).exp();
            let oracle = (wp - wm) / (wp + wm);
            assert!((s.marg_m[i] - oracle).abs() < 1e-6, "var {i}: {} vs {oracle}", s.marg_m[i]);
        }

        // Gaussian prior: quadrature of x·N(x;0,1)·N(y; λ·x·x_other, 1).
        let inst = small_instance(
            2,
            2,
            1,
            1,
            0.9,
            PriorKind::Gaussian,
            awgn(),
            SpreadingKind::Deterministic,
            22,
        );
        let y = inst.observations[0];
        let lam = inst.lambda;
        let state = init_messages(InitScheme::Informative, &inst, Algorithm::Rbp, 22).unwrap();
        let MessageState::Rbp(mut s) = state else { panic!() };
        rbp_sweep(&mut s, &inst, 1.0).unwrap();
        for i in 0..2 {
            let other = inst.truth_at(1 - i, 0);
            let weight = |x: f64| (-x * x / 2.0 - (y - lam * x * other).powi(2) / 2.0).exp();
            let num = adaptive_simpson(|x| x * weight(x), -12.0, 12.0, 1e-12).unwrap();
            let den = adaptive_simpson(weight, -12.0, 12.0, 1e-12).unwrap();
            let oracle = num / den;
            assert!((s.marg_m[i] - oracle).abs() < 1e-6, "var {i}: {} vs {oracle}", s.marg_m[i]);
        }
    }

    #[test]
    fn single_factor_gamp_smoke() {
        let inst = small_instance(
            2,
            2,
            1,
            1,
            1.3,
            PriorKind::Ising,
            awgn(),
            SpreadingKind::Deterministic,
            21,
        );
        let rbp = run_mp(Algorithm::Rbp, &inst, InitScheme::Informative, 1.0, 1, 0.0).unwrap();
        let gamp = run_mp(Algorithm::Gamp, &inst, InitScheme::Informative, 1.0, 1, 0.0).unwrap();
        let (mr, mg) = (rbp.last().unwrap().m, gamp.last().unwrap().m);
        assert!(mr.is_finite() && mg.is_finite());
        assert_eq!(mr.signum(), mg.signum());
    }

    #[test]
    fn gamp_first_sweep_is_memory_free() {
        // With g_prev = 0 the factor belief must reduce to the plain sum
        // Σ_ν (λF/√M) Π m, checked against a direct recomputation.
        let inst = small_instance(
            30,
            3,
            3,
            8,
            1.2,
            PriorKind::Gaussian,
            awgn(),
            SpreadingKind::Deterministic,
            9,
        );
        let state =
            init_messages(InitScheme::Uninformative { a: 0.2 }, &inst, Algorithm::Gamp, 9).unwrap();
        let MessageState::Gamp(mut s) = state else { panic!() };
        let m0 = s.m_cur.clone();
        gamp_sweep(&mut s, &inst, 1.0).unwrap();
        for e in 0..inst.graph.n_edges() {
            let mut expect = 0.0;
            for nu in 0..inst.m_dim {
                let lf = spread_coeff(&inst, e, nu);
                let mut pm = 1.0;
                for &j in &inst.graph.edges[e].vars {
                    pm *= m0[j as usize * inst.m_dim + nu];
                }
                expect += lf * pm;
            }
            assert!((s.omega[e] - expect).abs() < 1e-12, "edge {e}");
        }
    }

    #[test]
    fn measure_matches_naive_recomputation() {
        let inst = small_instance(
            40,
            2,
            4,
            10,
            1.5,
            PriorKind::Ising,
            awgn(),
            SpreadingKind::Rademacher,
            13,
        );
        let state =
            run_mp_full(Algorithm::Rbp, &inst, InitScheme::Uninformative { a: 0.4 }, 0.5, 3, 0.0)
                .unwrap()
                .state;
        let (m, q, big_q) = measure_order_params(&state, &inst);
        let MessageState::Rbp(s) = &state else { panic!() };
        let mut nm = 0.0;
        let mut nq = 0.0;
        let mut nbq = 0.0;
        for i in 0..inst.graph.n_vars {
            for mu in 0..inst.m_dim {
                let v = s.marg_m[i * inst.m_dim + mu];
                nm += inst.truth_at(i, mu) * v;
                nq += v * v;
                nbq += s.marg_v[i * inst.m_dim + mu];
            }
        }
        let norm = (inst.graph.n_vars * inst.m_dim) as f64;
        assert_eq!(m, nm / norm);
        assert_eq!(q, nq / norm);
        assert_eq!(big_q, nbq / norm);
    }

    #[test]
    fn corrected_magnetization_handles_plane_flips() {
        let inst = small_instance(
            40,
            2,
            4,
            6,
            1.5,
            PriorKind::Ising,
            awgn(),
            SpreadingKind::Rademacher,
            17,
        );
        let state = init_messages(InitScheme::Informative, &inst, Algorithm::Gamp, 17).unwrap();
        let (m, _, _) = measure_order_params(&state, &inst);
        assert!((corrected_magnetization(&state, &inst) - m).abs() < 1e-15);
        // Flip every μ-plane: plain m negates, corrected is unchanged.
        let MessageState::Gamp(mut s) = state else { panic!() };
        for v in s.m_cur.iter_mut() {
            *v = -*v;
        }
        let state = MessageState::Gamp(s);
        let (m_flipped, _, _) = measure_order_params(&state, &inst);
        assert!((m_flipped + m).abs() < 1e-15);
        assert!((corrected_magnetization(&state, &inst) - m).abs() < 1e-15);
    }

    #[test]
    fn run_mp_basics() {
        let inst = small_instance(
            40,
            2,
            4,
            6,
            1.5,
            PriorKind::Ising,
            awgn(),
            SpreadingKind::Rademacher,
            19,
        );
        // Huge tolerance: exactly one sweep.
        let traj =
            run_mp(Algorithm::Rbp, &inst, InitScheme::Uninformative { a: 0.1 }, 0.5, 50, 1e9)
                .unwrap();
        assert!(traj.converged);
        assert_eq!(traj.steps, 1);
        assert_eq!(traj.records.len(), 2);
        // Determinism.
        let a = run_mp(Algorithm::Gamp, &inst, InitScheme::Uninformative { a: 0.1 }, 1.0, 5, 0.0)
            .unwrap();
        let b = run_mp(Algorithm::Gamp, &inst, InitScheme::Uninformative { a: 0.1 }, 1.0, 5, 0.0)
            .unwrap();
        assert_eq!(a, b);
        // Ising runs keep Q = 1 exactly.
        for r in &a.records {
            assert_eq!(r.big_q, 1.0);
        }
    }

    #[test]
    fn paramagnetic_below_alpha_one() {
        // α = c·p/M... with c = α·M: α = 0.9 via c = 45, M = 50, p = 2.
        let inst = small_instance(
            300,
            2,
            45,
            50,
            2.0,
            PriorKind::Ising,
            awgn(),
            SpreadingKind::Rademacher,
            23,
        );
        let traj =
            run_mp(Algorithm::Rbp, &inst, InitScheme::Uninformative { a: 0.01 }, 0.5, 100, 1e-7)
                .unwrap();
        let m = traj.last().unwrap().m;
        assert!(m.abs() < 0.02, "m = {m}");
    }

    #[test]
    fn rbp_reaches_se_fixed_point_ising_p2() {
        // α = 1.6, λ = 2 is deep in the recoverable phase; the SE fixed point
        // is the finite-size target within a 0.05 band. Finite-M corrections
        // at M < 100 push the plateau outside the band, so this runs at the
        // full N = 1000, M = 100 scale.
        let m_dim = 100;
        let c = (1.6 * m_dim as f64).round() as usize; // 160
        let inst = small_instance(
            1000,
            2,
            c,
            m_dim,
            2.0,
            PriorKind::Ising,
            awgn(),
            SpreadingKind::Rademacher,
            29,
        );
        let traj =
            run_mp(Algorithm::Rbp, &inst, InitScheme::Informative, 0.5, 200, 1e-8).unwrap();
        let fam = crate::replica::ModelFamily::IsingGauss { p: 2 };
        let se = crate::state_evolution::run_se((1.0, 1.0, 1.0), &fam, 1.6, 2.0, 10_000, 1e-12)
            .unwrap();
        let m_se = se.last().unwrap().m;
        let m_mp = traj.last().unwrap().m;
        assert!((m_mp - m_se).abs() < 0.05, "mp {m_mp} vs se {m_se}");
        // Nishimori tracking on the recorded trajectory.
        for r in &traj.records {
            assert!((r.m - r.q).abs() <= 0.05, "t={}: m={} q={}", r.t, r.m, r.q);
        }
    }

    #[test]
    fn sign_runs_invariant_under_lambda_rescaling() {
        let mk = |lambda: f64| {
            small_instance(
                80,
                2,
                10,
                30,
                lambda,
                PriorKind::Gaussian,
                ChannelKind::Sign,
                SpreadingKind::Rademacher,
                31,
            )
        };
        let a = run_mp(
            Algorithm::Rbp,
            &mk(1.0),
            InitScheme::SignInformative { a: 0.99 },
            0.5,
            15,
            0.0,
        )
        .unwrap();
        let b = run_mp(
            Algorithm::Rbp,
            &mk(2.0),
            InitScheme::SignInformative { a: 0.99 },
            0.5,
            15,
            0.0,
        )
        .unwrap();
        assert_eq!(a.records.len(), b.records.len());
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.m, rb.m);
            assert_eq!(ra.q, rb.q);
            assert_eq!(ra.big_q, rb.big_q);
            assert_eq!(ra.d, rb.d);
            assert_eq!(ra.mse_in, rb.mse_in);
            assert_eq!(rb.mse_out, 4.0 * ra.mse_out);
        }
    }

    #[test]
    fn mixed_species_instance_runs() {
        let graph = sample_mixed(120, 20, &[(2, 1.0), (3, 2.0)], 41).unwrap();
        let inst = generate_instance(
            graph,
            20,
            1.5,
            PriorKind::Gaussian,
            awgn(),
            SpreadingKind::Rademacher,
            41,
        )
        .unwrap();
        for algo in [Algorithm::Rbp, Algorithm::Gamp] {
            let traj = run_mp(algo, &inst, InitScheme::Informative, 0.5, 10, 0.0).unwrap();
            assert!(!traj.diverged);
            assert!(traj.last().unwrap().m.is_finite());
        }
    }
}
