//! Per-iteration solver traces and their CSV form.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;
use std::time::Instant;

pub const TRACE_HEADER: &str = "run_id,iter,wall_ns,K,lambda,outcome,batch_cost,full_cost,evals_cum";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Failure,
    Insufficient,
    Success,
    GncLevelAdvance,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Failure => "failure",
            Outcome::Insufficient => "insufficient",
            Outcome::Success => "success",
            Outcome::GncLevelAdvance => "gnc-level-advance",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "failure" => Ok(Outcome::Failure),
            "insufficient" => Ok(Outcome::Insufficient),
            "success" => Ok(Outcome::Success),
            "gnc-level-advance" => Ok(Outcome::GncLevelAdvance),
            other => Err(format!("unknown outcome `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub run_id: u64,
    pub iter: usize,
    pub wall_ns: u64,
    /// Batch size in effect after this iteration.
    pub batch_size: usize,
    /// Damping after this iteration's update.
    pub lambda: f64,
    pub outcome: Outcome,
    /// Cost of the batch at the iterate kept after this iteration.
    pub batch_cost: f64,
    /// Full cost at the kept iterate, present only when auditing.
    pub full_cost: Option<f64>,
    /// Cumulative residual-block Jacobian evaluations.
    pub evals_cum: u64,
    /// GNC level, 0 outside of GNC.
    pub level: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    Budget,
    /// A step failed with λ already at its upper clamp.
    DampingExhausted,
}

#[derive(Debug, Clone)]
pub struct SolveReport<P> {
    pub params: P,
    /// Full cost `f(θ*)`, evaluated once at the end.
    pub final_cost: f64,
    pub trace: Vec<TraceRecord>,
    pub termination: Termination,
    pub iterations: usize,
    /// Residual-block Jacobian evaluations.
    pub evals: u64,
    /// Residual-block cost-only evaluations (trial points), excluding audits.
    pub cost_evals: u64,
    pub final_batch_size: usize,
}

impl<P> SolveReport<P> {
    /// Costs at accepted iterates, in order.
    pub fn accepted_costs(&self) -> Vec<f64> {
        self.trace
            .iter()
            .filter(|r| r.outcome == Outcome::Success)
            .map(|r| r.batch_cost)
            .collect()
    }
}

/// Clock and record buffer for one run.
pub(crate) struct Recorder {
    run_id: u64,
    start: Instant,
    pub(crate) records: Vec<TraceRecord>,
    pub(crate) level: usize,
}

impl Recorder {
    pub(crate) fn new(run_id: u64) -> Self {
        Self {
            run_id,
            start: Instant::now(),
            records: Vec::new(),
            level: 0,
        }
    }

    pub(crate) fn elapsed(&self) -> std::time::Duration {
        self.start.elapsed()
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn push(
        &mut self,
        iter: usize,
        batch_size: usize,
        lambda: f64,
        outcome: Outcome,
        batch_cost: f64,
        full_cost: Option<f64>,
        evals_cum: u64,
    ) {
        let wall_ns = self.start.elapsed().as_nanos() as u64;
        let wall_ns = self.records.last().map_or(wall_ns, |r| r.wall_ns.max(wall_ns));
        self.records.push(TraceRecord {
            run_id: self.run_id,
            iter,
            wall_ns,
            batch_size,
            lambda,
            outcome,
            batch_cost,
            full_cost,
            evals_cum,
            level: self.level,
        });
    }
}

/// Writes the trace as CSV. With `zero_timing` every `wall_ns` is written as
/// 0 so identical runs produce identical bytes.
pub fn write_trace_csv<W: Write>(
    mut out: W,
    records: &[TraceRecord],
    zero_timing: bool,
) -> io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in records {
        let wall = if zero_timing { 0 } else { r.wall_ns };
        let full = r.full_cost.map(|c| c.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.run_id, r.iter, wall, r.batch_size, r.lambda, r.outcome, r.batch_cost, full, r.evals_cum
        )?;
    }
    Ok(())
}

/// Parses a trace CSV. Errors name the offending line.
pub fn read_trace_csv<R: BufRead>(input: R) -> Result<Vec<TraceRecord>, String> {
    let mut lines = input.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h.trim_end() == TRACE_HEADER => {}
        Some((_, Ok(h))) => return Err(format!("line 1: unexpected header `{h}`")),
        Some((_, Err(e))) => return Err(e.to_string()),
        None => return Err("empty trace file".into()),
    }
    let mut records = Vec::new();
    for (n, line) in lines {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| format!("line {}: bad {what}", n + 1);
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 9 {
            return Err(format!("line {}: expected 9 fields, found {}", n + 1, f.len()));
        }
        records.push(TraceRecord {
            run_id: f[0].parse().map_err(|_| bad("run_id"))?,
            iter: f[1].parse().map_err(|_| bad("iter"))?,
            wall_ns: f[2].parse().map_err(|_| bad("wall_ns"))?,
            batch_size: f[3].parse().map_err(|_| bad("K"))?,
            lambda: f[4].parse().map_err(|_| bad("lambda"))?,
            outcome: f[5].parse().map_err(|_| bad("outcome"))?,
            batch_cost: f[6].parse().map_err(|_| bad("batch_cost"))?,
            full_cost: if f[7].is_empty() {
                None
            } else {
                Some(f[7].parse().map_err(|_| bad("full_cost"))?)
            },
            evals_cum: f[8].parse().map_err(|_| bad("evals_cum"))?,
            level: 0,
        });
    }
    Ok(records)
}
