//! Loss gaps, fluctuation and consensus norms, variance reduction,
//! time-to-threshold and communication accounting over run traces.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::InteractionGraph;
use crate::mirror::MirrorMap;
use crate::objective::Objective;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("burn-in step {burn_in} is beyond the last recorded step {last}")]
    BurnInTooLong { burn_in: u64, last: u64 },
    #[error("trace is empty")]
    EmptyTrace,
    #[error("particle range {start}..{end} exceeds {n} particles")]
    ParticleRange { start: usize, end: usize, n: usize },
    #[error("baseline variance is zero")]
    ZeroBaseline,
    #[error("extra column `{name}` has {got} values for {rows} rows")]
    ColumnLength { name: String, got: usize, rows: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One recorded step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: u64,
    pub t: f64,
    pub eta: f64,
    pub sigma: f64,
    pub loss_gap_mean: f64,
    /// `f(xᵢ) − f*` per particle.
    pub loss_gaps: Vec<f64>,
    /// Mean over particles of `‖z̃ᵢ‖₂²`.
    pub fluct_mean_sq: f64,
    pub fluct_mean: f64,
    pub fluct_max: f64,
    /// Mean over particles of `‖xᵢ − x̄‖₂`.
    pub consensus_mean: f64,
    /// `f(∇Φ*(z̄)) − f*`.
    pub loss_at_mean: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub n_particles: usize,
    pub f_star: f64,
    pub rows: Vec<TraceRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluctuationStats {
    pub mean_sq: f64,
    pub mean: f64,
    pub max: f64,
}

/// `f(∇Φ*(zᵢ)) − f*` for every row of `z`.
pub fn loss_gap(obj: &dyn Objective, map: &MirrorMap, z: &[f64], f_star: f64) -> Vec<f64> {
    let d = obj.dim();
    let mut x = vec![0.0; z.len()];
    for (zr, xr) in z.chunks_exact(d).zip(x.chunks_exact_mut(d)) {
        map.grad_conjugate_into(zr, xr);
    }
    let mut out = vec![0.0; z.len() / d];
    obj.values_rows(&x, &mut out);
    out.iter_mut().for_each(|v| *v -= f_star);
    out
}

/// Row mean of a row-major buffer, summed in ascending row order.
pub fn row_mean(rows: &[f64], d: usize) -> Vec<f64> {
    let n = rows.len() / d;
    let mut mean = vec![0.0; d];
    for r in rows.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    mean
}

/// Norms of `zᵢ − z̄` in ‖·‖₂.
pub fn fluctuation_stats(z: &[f64], d: usize) -> FluctuationStats {
    let n = z.len() / d;
    let first = &z[..d];
    if z.chunks_exact(d).all(|r| r == first) {
        return FluctuationStats { mean_sq: 0.0, mean: 0.0, max: 0.0 };
    }
    let mean = row_mean(z, d);
    let (mut sq, mut norm, mut max) = (0.0, 0.0, 0.0f64);
    for r in z.chunks_exact(d) {
        let s: f64 = r.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum();
        sq += s;
        norm += s.sqrt();
        max = max.max(s.sqrt());
    }
    FluctuationStats { mean_sq: sq / n as f64, mean: norm / n as f64, max }
}

/// Mean over particles of `‖xᵢ − x̄‖₂`.
pub fn consensus_error(x: &[f64], d: usize) -> f64 {
    fluctuation_stats(x, d).mean
}

/// Builds a [`TraceRow`] from a particle state.
pub struct TraceRecorder<'a> {
    obj: &'a dyn Objective,
    map: &'a MirrorMap,
    f_star: f64,
    values: Vec<f64>,
    ybuf: Vec<f64>,
}

impl<'a> TraceRecorder<'a> {
    pub fn new(obj: &'a dyn Objective, map: &'a MirrorMap, f_star: f64) -> Self {
        let d = obj.dim();
        Self { obj, map, f_star, values: Vec::new(), ybuf: vec![0.0; d] }
    }

    pub fn f_star(&self) -> f64 {
        self.f_star
    }

    /// `z`, `x` are row-major `N × d` mirror and primal states.
    pub fn row(&mut self, k: u64, t: f64, eta: f64, sigma: f64, z: &[f64], x: &[f64]) -> TraceRow {
        let d = self.obj.dim();
        let n = z.len() / d;
        self.values.resize(n, 0.0);
        self.obj.values_rows(x, &mut self.values);
        let loss_gaps: Vec<f64> = self.values.iter().map(|v| v - self.f_star).collect();
        let loss_gap_mean = loss_gaps.iter().sum::<f64>() / n as f64;
        let fl = fluctuation_stats(z, d);
        let zbar = row_mean(z, d);
        self.map.grad_conjugate_into(&zbar, &mut self.ybuf);
        let loss_at_mean = self.obj.value(&self.ybuf) - self.f_star;
        TraceRow {
            k,
            t,
            eta,
            sigma,
            loss_gap_mean,
            loss_gaps,
            fluct_mean_sq: fl.mean_sq,
            fluct_mean: fl.mean,
            fluct_max: fl.max,
            consensus_mean: consensus_error(x, d),
            loss_at_mean,
        }
    }
}

impl RunTrace {
    pub fn new(n_particles: usize, f_star: f64) -> Self {
        Self { n_particles, f_star, rows: Vec::new() }
    }

    pub fn last_step(&self) -> Option<u64> {
        self.rows.last().map(|r| r.k)
    }

    fn post_burn_in(&self, burn_in: u64) -> Result<&[TraceRow], MetricsError> {
        let last = self.last_step().ok_or(MetricsError::EmptyTrace)?;
        if burn_in > last {
            return Err(MetricsError::BurnInTooLong { burn_in, last });
        }
        let start = self.rows.partition_point(|r| r.k < burn_in);
        Ok(&self.rows[start..])
    }

    /// Per-particle loss gaps of the given particles, pooled over every
    /// recorded step with `k ≥ burn_in`.
    pub fn pooled_losses(&self, burn_in: u64, particles: std::ops::Range<usize>) -> Result<Vec<f64>, MetricsError> {
        if particles.end > self.n_particles || particles.start >= particles.end {
            return Err(MetricsError::ParticleRange { start: particles.start, end: particles.end, n: self.n_particles });
        }
        Ok(self.post_burn_in(burn_in)?.iter().flat_map(|r| r.loss_gaps[particles.clone()].iter().copied()).collect())
    }

    /// Variance of the pooled post-burn-in per-particle losses.
    pub fn pooled_loss_variance(&self, burn_in: u64) -> Result<f64, MetricsError> {
        self.pooled_loss_variance_of(burn_in, 0..self.n_particles)
    }

    pub fn pooled_loss_variance_of(&self, burn_in: u64, particles: std::ops::Range<usize>) -> Result<f64, MetricsError> {
        Ok(variance(&self.pooled_losses(burn_in, particles)?))
    }

    /// Mean of the pooled post-burn-in per-particle losses.
    pub fn stationary_loss_gap(&self, burn_in: u64) -> Result<f64, MetricsError> {
        let v = self.pooled_losses(burn_in, 0..self.n_particles)?;
        Ok(v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Time average of a row statistic over `k ≥ burn_in`.
    pub fn post_burn_in_mean(&self, burn_in: u64, f: impl Fn(&TraceRow) -> f64) -> Result<f64, MetricsError> {
        let rows = self.post_burn_in(burn_in)?;
        Ok(rows.iter().map(f).sum::<f64>() / rows.len() as f64)
    }
}

/// Population variance.
pub fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// `(σ²_iid − σ²_int) / σ²_iid` for pooled post-burn-in per-particle losses.
pub fn variance_reduction_ratio(trace_iid: &RunTrace, trace_int: &RunTrace, burn_in: u64) -> Result<f64, MetricsError> {
    let base = trace_iid.pooled_loss_variance(burn_in)?;
    let int = trace_int.pooled_loss_variance(burn_in)?;
    if base == 0.0 {
        return if int == 0.0 { Ok(0.0) } else { Err(MetricsError::ZeroBaseline) };
    }
    Ok((base - int) / base)
}

/// First recorded step whose mean loss gap is below `level`.
pub fn time_to_threshold(trace: &RunTrace, level: f64) -> Option<u64> {
    trace.rows.iter().find(|r| r.loss_gap_mean < level).map(|r| r.k)
}

/// `k` rounds times the number of off-diagonal nonzeros of `A`.
pub fn communication_cost(g: &InteractionGraph, k: u64) -> u64 {
    k * g.messages_per_round() as u64
}

/// Appended column, one value per trace row.
pub struct ExtraColumn<'a> {
    pub name: &'a str,
    pub values: &'a [f64],
}

/// Fixed column order: `k,t,eta,sigma,loss_gap_mean,[loss_gap_pXX…],
/// fluct_mean_sq,consensus_mean,loss_at_mean,[extra…]`.
pub fn write_trace_csv<W: Write>(trace: &RunTrace, out: W, wide: bool, extra: &[ExtraColumn]) -> Result<(), MetricsError> {
    for c in extra {
        if c.values.len() != trace.rows.len() {
            return Err(MetricsError::ColumnLength { name: c.name.to_string(), got: c.values.len(), rows: trace.rows.len() });
        }
    }
    let width = if trace.n_particles > 100 { 3 } else { 2 };
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["k", "t", "eta", "sigma", "loss_gap_mean"].iter().map(|s| s.to_string()).collect();
    if wide {
        header.extend((0..trace.n_particles).map(|i| format!("loss_gap_p{i:0width$}")));
    }
    header.extend(["fluct_mean_sq", "consensus_mean", "loss_at_mean"].iter().map(|s| s.to_string()));
    header.extend(extra.iter().map(|c| c.name.to_string()));
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(header.len());
    for (i, r) in trace.rows.iter().enumerate() {
        rec.clear();
        rec.push(r.k.to_string());
        rec.extend([r.t, r.eta, r.sigma, r.loss_gap_mean].iter().map(|v| format!("{v:e}")));
        if wide {
            rec.extend(r.loss_gaps.iter().map(|v| format!("{v:e}")));
        }
        rec.extend([r.fluct_mean_sq, r.consensus_mean, r.loss_at_mean].iter().map(|v| format!("{v:e}")));
        rec.extend(extra.iter().map(|c| format!("{:e}", c.values[i])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-run summary written next to the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub n_particles: usize,
    pub steps: u64,
    pub f_star: f64,
    pub final_loss_gap_mean: f64,
    pub final_loss_at_mean: f64,
    pub final_fluct_mean_sq: f64,
    pub final_consensus_mean: f64,
    pub burn_in: u64,
    pub stationary_loss_gap: Option<f64>,
    pub stationary_loss_variance: Option<f64>,
    pub stationary_consensus_mean: Option<f64>,
    pub threshold: Option<f64>,
    pub time_to_threshold: Option<u64>,
    pub communication_cost: Option<u64>,
    pub messages_per_round: usize,
}

impl RunSummary {
    pub fn from_trace(trace: &RunTrace, seed: u64, burn_in: u64, threshold: Option<f64>, g: &InteractionGraph) -> Result<Self, MetricsError> {
        let last = trace.rows.last().ok_or(MetricsError::EmptyTrace)?;
        let post = burn_in <= last.k;
        let ttt = threshold.and_then(|l| time_to_threshold(trace, l));
        Ok(Self {
            seed,
            n_particles: trace.n_particles,
            steps: last.k,
            f_star: trace.f_star,
            final_loss_gap_mean: last.loss_gap_mean,
            final_loss_at_mean: last.loss_at_mean,
            final_fluct_mean_sq: last.fluct_mean_sq,
            final_consensus_mean: last.consensus_mean,
            burn_in,
            stationary_loss_gap: post.then(|| trace.stationary_loss_gap(burn_in)).transpose()?,
            stationary_loss_variance: post.then(|| trace.pooled_loss_variance(burn_in)).transpose()?,
            stationary_consensus_mean: post.then(|| trace.post_burn_in_mean(burn_in, |r| r.consensus_mean)).transpose()?,
            threshold,
            time_to_threshold: ttt,
            communication_cost: ttt.map(|k| communication_cost(g, k)),
            messages_per_round: g.messages_per_round(),
        })
    }
}
