//! Per-step order-parameter records shared by the finite-size solvers and the
//! macroscopic (state-evolution) iteration, plus the common CSV schema.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: usize,
    pub m: f64,
    pub q: f64,
    pub big_q: f64,
    /// Convergence measure: mean absolute update of the means for the
    /// finite-size solvers, max order-parameter change for state evolution.
    pub d: f64,
    pub mse_in: f64,
    pub mse_out: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    pub converged: bool,
    pub diverged: bool,
    pub steps: usize,
}

impl Trajectory {
    pub fn last(&self) -> Option<&TrajectoryRecord> {
        self.records.last()
    }

    /// CSV with a `#`-prefixed metadata preamble, 12 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W, metadata: &[(String, String)]) -> Result<()> {
        for (k, v) in metadata {
            writeln!(w, "# {k} = {v}")?;
        }
        writeln!(w, "# converged = {}", self.converged)?;
        writeln!(w, "# diverged = {}", self.diverged)?;
        writeln!(w, "# steps = {}", self.steps)?;
        writeln!(w, "t,m,q,Q,D,mse_in,mse_out")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.t,
                sig12(r.m),
                sig12(r.q),
                sig12(r.big_q),
                sig12(r.d),
                sig12(r.mse_in),
                sig12(r.mse_out)
            )?;
        }
        Ok(())
    }
}

/// Per-step mean over a batch of trajectories; `count` is the number of
/// trajectories that reached the step (shorter runs drop out of later rows).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragedRecord {
    pub t: usize,
    pub m: f64,
    pub q: f64,
    pub big_q: f64,
    pub d: f64,
    pub mse_in: f64,
    pub mse_out: f64,
    pub count: usize,
}

pub fn average_trajectories(trajectories: &[Trajectory]) -> Vec<AveragedRecord> {
    let max_len = trajectories.iter().map(|t| t.records.len()).max().unwrap_or(0);
    let mut rows = Vec::with_capacity(max_len);
    for step in 0..max_len {
        let mut acc = AveragedRecord {
            t: step,
            m: 0.0,
            q: 0.0,
            big_q: 0.0,
            d: 0.0,
            mse_in: 0.0,
            mse_out: 0.0,
            count: 0,
        };
        for traj in trajectories {
            if let Some(r) = traj.records.get(step) {
                acc.m += r.m;
                acc.q += r.q;
                acc.big_q += r.big_q;
                acc.d += r.d;
                acc.mse_in += r.mse_in;
                acc.mse_out += r.mse_out;
                acc.count += 1;
            }
        }
        let n = acc.count as f64;
        acc.m /= n;
        acc.q /= n;
        acc.big_q /= n;
        acc.d /= n;
        acc.mse_in /= n;
        acc.mse_out /= n;
        rows.push(acc);
    }
    rows
}

/// Same schema as the per-run CSV plus a trailing instance-count column.
pub fn write_averaged_csv<W: Write>(
    rows: &[AveragedRecord],
    mut w: W,
    metadata: &[(String, String)],
) -> Result<()> {
    for (k, v) in metadata {
        writeln!(w, "# {k} = {v}")?;
    }
    writeln!(w, "t,m,q,Q,D,mse_in,mse_out,count")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.t,
            sig12(r.m),
            sig12(r.q),
            sig12(r.big_q),
            sig12(r.d),
            sig12(r.mse_in),
            sig12(r.mse_out),
            r.count
        )?;
    }
    Ok(())
}

/// 12 significant digits.
pub fn sig12(x: f64) -> String {
    format!("{x:.11e}")
}

/// (mse_input, mse_output) = (1 − 2m + q, λ²(1 − 2m^p + q^p)).
pub fn error_metrics(m: f64, q: f64, lambda: f64, p: usize) -> (f64, f64) {
    let pi = p as i32;
    (1.0 - 2.0 * m + q, lambda * lambda * (1.0 - 2.0 * m.powi(pi) + q.powi(pi)))
}
