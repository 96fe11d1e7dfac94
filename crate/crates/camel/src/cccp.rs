//! Outer loop for the full objective: repeatedly linearize the convex sepset
//! entropy terms around the current tables and re-solve the concave inner
//! problem. Each linearized subproblem minorizes the objective and touches it
//! at the expansion point, so the objective value never decreases across
//! outer iterations.

use crate::dual::{
    solve_inner, DualParams, InnerDiagnostics, Linearization, Marginals, SolverConfig, TrainProblem,
};
use crate::error::Result;
use crate::marginals::{sepset_marginal, PseudoMarginals};
use crate::model::{DataMode, Dataset};

/// Floor inside the logarithms of the linearization; keeps zero sepset cells
/// from producing infinite offsets. Clamped, never renormalized.
const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearizationStyle {
    /// Offsets land on each edge's source cluster, the endpoint whose
    /// projection defines the sepset marginal.
    SourceOnly,
    /// Sepset marginals from both endpoints are averaged and the offset is
    /// split evenly between the two clusters.
    SplitHalf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearizationInit {
    Zero,
    /// Expand around smoothed empirical cluster marginals of the data.
    Empirical,
}

#[derive(Debug, Clone)]
pub struct CccpConfig {
    /// Outer convergence threshold on the largest offset change.
    pub epsilon: f64,
    pub max_outer: usize,
    pub style: LinearizationStyle,
    pub init: LinearizationInit,
    pub inner: SolverConfig,
}

impl Default for CccpConfig {
    fn default() -> Self {
        CccpConfig {
            epsilon: 1e-4,
            max_outer: 50,
            style: LinearizationStyle::SourceOnly,
            init: LinearizationInit::Zero,
            inner: SolverConfig::default(),
        }
    }
}

fn edge_offset(mu: &[f64]) -> Vec<f64> {
    mu.iter().map(|&m| -1.0 - m.max(LOG_FLOOR).ln()).collect()
}

/// Linearization of the sepset entropy terms around the given tables.
pub fn relinearize(problem: &TrainProblem, marginals: &Marginals, style: LinearizationStyle) -> Linearization {
    let offsets = marginals
        .per_context
        .iter()
        .enumerate()
        .map(|(c, pi)| {
            let view = problem.context_view(c);
            let mut g: Vec<Vec<f64>> =
                (0..view.num_clusters()).map(|ci| vec![0.0; view.table_size(ci)]).collect();
            for e in 0..view.num_edges() {
                let edge = view.edge(e);
                match style {
                    LinearizationStyle::SourceOnly => {
                        let per_sep = edge_offset(&sepset_marginal(view, pi, e, true));
                        let block = &mut g[edge.source];
                        for (a, slot) in block.iter_mut().enumerate() {
                            *slot += per_sep[edge.proj_source[a] as usize];
                        }
                    }
                    LinearizationStyle::SplitHalf => {
                        let src = sepset_marginal(view, pi, e, true);
                        let tgt = sepset_marginal(view, pi, e, false);
                        let bar: Vec<f64> = src.iter().zip(tgt).map(|(a, b)| 0.5 * (a + b)).collect();
                        let per_sep = edge_offset(&bar);
                        for (a, slot) in g[edge.source].iter_mut().enumerate() {
                            *slot += 0.5 * per_sep[edge.proj_source[a] as usize];
                        }
                        for (a, slot) in g[edge.target].iter_mut().enumerate() {
                            *slot += 0.5 * per_sep[edge.proj_target[a] as usize];
                        }
                    }
                }
            }
            g
        })
        .collect();
    Linearization { offsets }
}

/// Smoothed per-context empirical tables: counts plus a pseudo-count of
/// 1/(instances × table size) per cell, normalized.
fn empirical_tables(problem: &TrainProblem, data: &Dataset) -> Marginals {
    let per_context = match data.mode() {
        DataMode::Generative => {
            let model = problem.model();
            let counts = crate::model::assignment_counts(model, data);
            let m = data.len() as f64;
            let tables = counts
                .iter()
                .map(|table| {
                    let pseudo = 1.0 / (m * table.len() as f64);
                    let total = m + pseudo * table.len() as f64;
                    table.iter().map(|&c| (c as f64 + pseudo) / total).collect()
                })
                .collect();
            vec![PseudoMarginals::from_tables_unchecked(tables)]
        }
        DataMode::Conditional { target, .. } => {
            let mut target = target.clone();
            target.sort_unstable();
            data.instances()
                .iter()
                .enumerate()
                .map(|(m, x)| {
                    let view = problem.context_view(m);
                    let reduced: Vec<usize> = target.iter().map(|&v| x[v]).collect();
                    let tables = (0..view.num_clusters())
                        .map(|ci| {
                            let size = view.table_size(ci);
                            let hit = view.shape(ci).restrict_full(&reduced);
                            let pseudo = 1.0 / size as f64;
                            (0..size)
                                .map(|a| ((if a == hit { 1.0 } else { 0.0 }) + pseudo) / 2.0)
                                .collect()
                        })
                        .collect();
                    PseudoMarginals::from_tables_unchecked(tables)
                })
                .collect()
        }
    };
    Marginals { per_context }
}

pub fn init_linearization(
    problem: &TrainProblem,
    data: &Dataset,
    init: LinearizationInit,
    style: LinearizationStyle,
) -> Linearization {
    match init {
        LinearizationInit::Zero => Linearization::zeros(problem),
        LinearizationInit::Empirical => relinearize(problem, &empirical_tables(problem, data), style),
    }
}

#[derive(Debug, Clone)]
pub struct OuterRecord {
    pub outer: usize,
    /// Objective value of this iteration's tables.
    pub objective: f64,
    pub max_moment_residual: f64,
    pub max_consistency_residual: f64,
    /// Largest offset change produced by relinearizing at these tables.
    pub lin_change: f64,
    pub seconds: f64,
    pub inner: InnerDiagnostics,
}

#[derive(Debug, Clone)]
pub struct CccpOutput {
    pub params: DualParams,
    pub marginals: Marginals,
    /// The linearization the final parameters were solved at.
    pub lin: Linearization,
    /// Piecewise bootstrap diagnostics.
    pub bootstrap: InnerDiagnostics,
    pub outer: Vec<OuterRecord>,
    /// Outer loop reached its threshold and the final inner solve converged.
    pub converged: bool,
}

/// Full training loop: piecewise bootstrap, then constrained solves with
/// relinearization until the offsets stop moving. With zero initialization
/// the first outer iteration follows the exact code path of the single-solve
/// constrained trainer. Inner non-convergence is recorded in the trace and
/// the loop continues with the returned parameters.
pub fn cccp_train(problem: &TrainProblem, data: &Dataset, cfg: &CccpConfig) -> Result<CccpOutput> {
    let boot = solve_inner(problem, &Linearization::zeros(problem), false, None, &cfg.inner)?;
    let bootstrap = boot.diagnostics;
    let mut g = init_linearization(problem, data, cfg.init, cfg.style);
    let mut warm = boot.params;
    let mut outer = Vec::new();
    let mut converged = false;
    let mut best: Option<(DualParams, Marginals)> = None;

    for t in 1..=cfg.max_outer {
        let started = std::time::Instant::now();
        let sol = solve_inner(problem, &g, true, Some(&warm), &cfg.inner)?;
        let g_new = relinearize(problem, &sol.marginals, cfg.style);
        let change = g_new.max_abs_diff(&g);
        outer.push(OuterRecord {
            outer: t,
            objective: problem.objective(&sol.marginals),
            max_moment_residual: problem.max_moment_residual(&sol.marginals),
            max_consistency_residual: problem.max_consistency_residual(&sol.marginals),
            lin_change: change,
            seconds: started.elapsed().as_secs_f64(),
            inner: sol.diagnostics.clone(),
        });
        warm = sol.params.clone();
        best = Some((sol.params, sol.marginals));
        if change <= cfg.epsilon {
            converged = sol.diagnostics.converged;
            break;
        }
        g = g_new;
    }

    let (params, marginals) = match best {
        Some(pair) => pair,
        None => {
            // zero outer budget: promote the bootstrap weights
            let mut p = DualParams::zeros(problem, true);
            p.weights = warm.weights;
            let m = problem.marginals(&p, &g);
            (p, m)
        }
    };
    Ok(CccpOutput { params, marginals, lin: g, bootstrap, outer, converged })
}
