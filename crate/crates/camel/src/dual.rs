//! The smooth dual of the constrained entropy problem: a sum of per-cluster
//! local log-likelihoods over shared weights `w`, consistency multipliers
//! `δ`, and a fixed linearization offset `g`.
//!
//! One training run works on a [`TrainProblem`]: a set of contexts, each a
//! model view paired with target statistics and a weight. Generative data
//! gives a single context (the full model, instance-averaged statistics);
//! conditional data gives one context per instance (the model conditioned on
//! that instance's observed variables, weight 1/M). Within a context `c`,
//! cluster tables follow
//!
//! ```text
//! π_i(a) ∝ exp( w·f_i(a) + Σ_e sign(i,e)·δ_c[e][proj_e(a)] − g_c[i][a] )
//! ```
//!
//! with sign +1 when `i` is the edge's source and −1 when it is the target.
//! The dual value Σ_c ω_c (w·ê_c − Σ_i ln Z_{c,i}) − ‖w‖²/(2σ²M) is concave
//! and is maximized by limited-memory BFGS; piecewise training (no
//! consistency multipliers, zero offsets) and the constrained variant share
//! this one code path.

use crate::error::{Error, Result};
use crate::lbfgs::{minimize, IterRecord, LbfgsOptions};
use crate::marginals::{feature_expectations, PseudoMarginals};
use crate::model::{empirical_expectations, DataMode, Dataset, Model};
use crate::par;

/// One training context: a model view, its target statistics, its weight in
/// the pooled objective.
struct Context {
    view: Model,
    weight: f64,
    stats: Vec<f64>,
}

pub struct TrainProblem {
    model: Model,
    contexts: Vec<Context>,
    num_instances: usize,
}

impl TrainProblem {
    pub fn new(model: &Model, data: &Dataset) -> Result<TrainProblem> {
        let contexts = match data.mode() {
            DataMode::Generative => {
                let stats = empirical_expectations(model, data)?;
                vec![Context { view: model.clone(), weight: 1.0, stats }]
            }
            DataMode::Conditional { target, .. } => {
                let weight = 1.0 / data.len() as f64;
                data.instances()
                    .iter()
                    .map(|x| {
                        let view = model.condition(target, x)?;
                        let mut stats = vec![0.0; model.num_features()];
                        for ci in 0..model.num_clusters() {
                            let idx = model.shape(ci).restrict_full(x);
                            for &(l, v) in &model.features().rows(ci)[idx] {
                                stats[l] += v;
                            }
                        }
                        Ok(Context { view, weight, stats })
                    })
                    .collect::<Result<_>>()?
            }
        };
        Ok(TrainProblem { model: model.clone(), contexts, num_instances: data.len() })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn num_contexts(&self) -> usize {
        self.contexts.len()
    }

    pub fn num_instances(&self) -> usize {
        self.num_instances
    }

    /// The model this context's tables are defined over. Context 0 is the
    /// full model for generative problems.
    pub fn context_view(&self, ctx: usize) -> &Model {
        &self.contexts[ctx].view
    }

    pub fn context_weight(&self, ctx: usize) -> f64 {
        self.contexts[ctx].weight
    }

    /// Target feature statistics ê for one context.
    pub fn context_stats(&self, ctx: usize) -> &[f64] {
        &self.contexts[ctx].stats
    }

    /// Cluster tables for every context at the given parameters.
    pub fn marginals(&self, params: &DualParams, lin: &Linearization) -> Marginals {
        let per_context = par::map_indexed(self.contexts.len(), |c| {
            let deltas = params.multipliers.as_ref().map(|m| m[c].as_slice());
            let (_, tables) = context_tables(&self.contexts[c].view, &params.weights, deltas, Some(&lin.offsets[c]));
            PseudoMarginals::from_tables_unchecked(tables)
        });
        Marginals { per_context }
    }

    /// Weighted moment residuals Σ_c ω_c (E_{π_c}[f] − ê_c).
    pub fn pooled_moment_residuals(&self, marginals: &Marginals) -> Vec<f64> {
        let mut out = vec![0.0; self.model.num_features()];
        for (ctx, pi) in self.contexts.iter().zip(&marginals.per_context) {
            for (o, (e, s)) in out.iter_mut().zip(feature_expectations(&ctx.view, pi).iter().zip(&ctx.stats)) {
                *o += ctx.weight * (e - s);
            }
        }
        out
    }

    pub fn max_moment_residual(&self, marginals: &Marginals) -> f64 {
        self.pooled_moment_residuals(marginals).iter().fold(0.0f64, |m, r| m.max(r.abs()))
    }

    /// Largest sepset disagreement across all contexts and edges.
    pub fn max_consistency_residual(&self, marginals: &Marginals) -> f64 {
        self.contexts
            .iter()
            .zip(&marginals.per_context)
            .map(|(ctx, pi)| crate::marginals::max_consistency_residual(&ctx.view, pi))
            .fold(0.0f64, f64::max)
    }

    /// Weighted objective value Σ_c ω_c (Σ_i H(π_i) − Σ_e H(μ_e)) of the tables.
    pub fn objective(&self, marginals: &Marginals) -> f64 {
        self.contexts
            .iter()
            .zip(&marginals.per_context)
            .map(|(ctx, pi)| ctx.weight * crate::marginals::bethe_entropy(&ctx.view, pi))
            .sum()
    }

    fn delta_len(&self) -> usize {
        self.contexts
            .iter()
            .map(|c| (0..c.view.num_edges()).map(|e| c.view.sepset_size(e)).sum::<usize>())
            .sum()
    }
}

/// Per-context cluster tables for each context, aligned with the problem's
/// context order.
#[derive(Debug, Clone)]
pub struct Marginals {
    pub per_context: Vec<PseudoMarginals>,
}

impl Marginals {
    /// The only context of a generative problem.
    pub fn single(&self) -> &PseudoMarginals {
        &self.per_context[0]
    }
}

/// Dual variables: feature weights, plus one multiplier per (context,
/// directed edge, sepset assignment) when the consistency constraints are
/// active. `multipliers` being present is what "consistency on" means.
#[derive(Debug, Clone, PartialEq)]
pub struct DualParams {
    pub weights: Vec<f64>,
    pub multipliers: Option<Vec<Vec<Vec<f64>>>>,
}

impl DualParams {
    pub fn zeros(problem: &TrainProblem, consistency: bool) -> Self {
        let weights = vec![0.0; problem.model.num_features()];
        let multipliers = consistency.then(|| {
            problem
                .contexts
                .iter()
                .map(|c| (0..c.view.num_edges()).map(|e| vec![0.0; c.view.sepset_size(e)]).collect())
                .collect()
        });
        DualParams { weights, multipliers }
    }

    pub fn consistency_enabled(&self) -> bool {
        self.multipliers.is_some()
    }
}

/// Fixed offsets subtracted from the cluster log-potentials, per context,
/// cluster, and assignment. Zero offsets are represented explicitly so every
/// trainer shares one evaluation path.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub offsets: Vec<Vec<Vec<f64>>>,
}

impl Linearization {
    pub fn zeros(problem: &TrainProblem) -> Self {
        let offsets = problem
            .contexts
            .iter()
            .map(|c| (0..c.view.num_clusters()).map(|ci| vec![0.0; c.view.table_size(ci)]).collect())
            .collect();
        Linearization { offsets }
    }

    pub fn max_abs_diff(&self, other: &Linearization) -> f64 {
        let mut m = 0.0f64;
        for (a, b) in self.offsets.iter().zip(&other.offsets) {
            for (x, y) in a.iter().zip(b) {
                for (p, q) in x.iter().zip(y) {
                    m = m.max((p - q).abs());
                }
            }
        }
        m
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Infinity-norm gradient tolerance.
    pub tol: f64,
    pub max_iters: usize,
    /// Quasi-Newton memory.
    pub memory: usize,
    /// Gaussian prior variance on the weights; `None` trains unregularized.
    /// Multipliers are never regularized.
    pub sigma2: Option<f64>,
    /// Box cap on |w_l|, guarding against unbounded weights when a moment
    /// target sits on the boundary of its achievable range.
    pub weight_cap: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { tol: 1e-6, max_iters: 1000, memory: 10, sigma2: None, weight_cap: Some(30.0) }
    }
}

#[derive(Debug, Clone)]
pub struct InnerDiagnostics {
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub records: Vec<IterRecord>,
    /// Feature indices whose weights hit the cap.
    pub capped: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub params: DualParams,
    pub marginals: Marginals,
    pub diagnostics: InnerDiagnostics,
}

/// Log-potential tables, their normalizers, and the normalized tables for one
/// context. Overflow is guarded by max-subtraction inside the normalizer.
fn context_tables(
    view: &Model,
    weights: &[f64],
    deltas: Option<&[Vec<f64>]>,
    offsets: Option<&[Vec<f64>]>,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let nc = view.num_clusters();
    let mut log_zs = Vec::with_capacity(nc);
    let mut tables = Vec::with_capacity(nc);
    for ci in 0..nc {
        let size = view.table_size(ci);
        let mut theta: Vec<f64> = (0..size).map(|a| view.log_score(ci, a, weights)).collect();
        if let Some(deltas) = deltas {
            for &(e, is_source) in view.incident(ci) {
                let edge = view.edge(e);
                let proj = if is_source { &edge.proj_source } else { &edge.proj_target };
                let sign = if is_source { 1.0 } else { -1.0 };
                for (a, t) in theta.iter_mut().enumerate() {
                    *t += sign * deltas[e][proj[a] as usize];
                }
            }
        }
        if let Some(offsets) = offsets {
            for (t, g) in theta.iter_mut().zip(&offsets[ci]) {
                *t -= g;
            }
        }
        let max = theta.iter().fold(f64::NEG_INFINITY, |m, &t| m.max(t));
        let sum: f64 = theta.iter().map(|t| (t - max).exp()).sum();
        let log_z = max + sum.ln();
        log_zs.push(log_z);
        tables.push(theta.iter().map(|t| (t - log_z).exp()).collect());
    }
    (log_zs, tables)
}

/// Normalized cluster tables for one context at the given variables; the
/// public face of the stationarity formula in the module docs.
pub fn cluster_potentials(
    view: &Model,
    weights: &[f64],
    deltas: Option<&[Vec<f64>]>,
    offsets: Option<&[Vec<f64>]>,
) -> PseudoMarginals {
    PseudoMarginals::from_tables_unchecked(context_tables(view, weights, deltas, offsets).1)
}

/// Dual value and its gradient blocks. The multiplier gradient is present iff
/// the params carry multipliers; it equals minus the weighted sepset
/// disagreement, so it vanishes exactly at consistent tables.
pub fn dual_value_and_gradient(
    problem: &TrainProblem,
    params: &DualParams,
    lin: &Linearization,
    sigma2: Option<f64>,
) -> (f64, Vec<f64>, Option<Vec<Vec<Vec<f64>>>>) {
    let l = problem.model.num_features();
    let with_deltas = params.multipliers.is_some();
    let per_ctx = par::map_indexed(problem.contexts.len(), |c| {
        let ctx = &problem.contexts[c];
        let deltas = params.multipliers.as_ref().map(|m| m[c].as_slice());
        let (log_zs, tables) = context_tables(&ctx.view, &params.weights, deltas, Some(&lin.offsets[c]));
        let pi = PseudoMarginals::from_tables_unchecked(tables);
        let expect = feature_expectations(&ctx.view, &pi);
        let mut value = -log_zs.iter().sum::<f64>();
        for (w, s) in params.weights.iter().zip(&ctx.stats) {
            value += w * s;
        }
        let grad_delta = with_deltas.then(|| {
            (0..ctx.view.num_edges())
                .map(|e| {
                    let src = crate::marginals::sepset_marginal(&ctx.view, &pi, e, true);
                    let tgt = crate::marginals::sepset_marginal(&ctx.view, &pi, e, false);
                    src.iter().zip(tgt).map(|(a, b)| -ctx.weight * (a - b)).collect::<Vec<f64>>()
                })
                .collect::<Vec<Vec<f64>>>()
        });
        (value, expect, grad_delta)
    });

    let mut value = 0.0;
    let mut grad_w = vec![0.0; l];
    let mut grad_delta = with_deltas.then(Vec::new);
    for (ctx, (v, expect, gd)) in problem.contexts.iter().zip(per_ctx) {
        value += ctx.weight * v;
        for (g, (s, e)) in grad_w.iter_mut().zip(ctx.stats.iter().zip(expect)) {
            *g += ctx.weight * (s - e);
        }
        if let (Some(all), Some(gd)) = (grad_delta.as_mut(), gd) {
            all.push(gd);
        }
    }
    if let Some(s2) = sigma2 {
        let m = problem.num_instances as f64;
        for (g, &w) in grad_w.iter_mut().zip(&params.weights) {
            value -= w * w / (2.0 * s2 * m);
            *g -= w / (s2 * m);
        }
    }
    (value, grad_w, grad_delta)
}

/// Lagrangian of the constrained inner problem at the given tables: negated
/// linearized entropy plus each constraint gap weighted by its multiplier,
/// minus the prior term. When the tables solve the inner problem at these
/// parameters the value equals the dual, which is how the duality gap is
/// audited.
pub fn lagrangian_value(
    problem: &TrainProblem,
    marginals: &Marginals,
    params: &DualParams,
    lin: &Linearization,
    sigma2: Option<f64>,
) -> f64 {
    let mut total = 0.0;
    for (c, (ctx, pi)) in problem.contexts.iter().zip(&marginals.per_context).enumerate() {
        let mut v = 0.0;
        for ci in 0..ctx.view.num_clusters() {
            v -= crate::marginals::entropy(pi.table(ci));
            for (g, p) in lin.offsets[c][ci].iter().zip(pi.table(ci)) {
                v += g * p;
            }
        }
        let expect = feature_expectations(&ctx.view, pi);
        for ((w, e), s) in params.weights.iter().zip(expect).zip(&ctx.stats) {
            v += w * (s - e);
        }
        if let Some(mult) = &params.multipliers {
            for e in 0..ctx.view.num_edges() {
                let src = crate::marginals::sepset_marginal(&ctx.view, pi, e, true);
                let tgt = crate::marginals::sepset_marginal(&ctx.view, pi, e, false);
                for ((d, a), b) in mult[c][e].iter().zip(src).zip(tgt) {
                    v += d * (b - a);
                }
            }
        }
        total += ctx.weight * v;
    }
    if let Some(s2) = sigma2 {
        let m = problem.num_instances as f64;
        total -= params.weights.iter().map(|w| w * w).sum::<f64>() / (2.0 * s2 * m);
    }
    total
}

fn flatten(params: &DualParams) -> Vec<f64> {
    let mut x = params.weights.clone();
    if let Some(m) = &params.multipliers {
        for ctx in m {
            for edge in ctx {
                x.extend_from_slice(edge);
            }
        }
    }
    x
}

fn unflatten(problem: &TrainProblem, consistency: bool, x: &[f64]) -> DualParams {
    let l = problem.model.num_features();
    let weights = x[..l].to_vec();
    let multipliers = consistency.then(|| {
        let mut at = l;
        problem
            .contexts
            .iter()
            .map(|c| {
                (0..c.view.num_edges())
                    .map(|e| {
                        let n = c.view.sepset_size(e);
                        let block = x[at..at + n].to_vec();
                        at += n;
                        block
                    })
                    .collect()
            })
            .collect()
    });
    DualParams { weights, multipliers }
}

/// Maximizes the dual at a fixed linearization. `consistency: false` is
/// piecewise training; `true` activates the multiplier block. Warm starts
/// must carry multipliers compatible with `consistency`. Budget exhaustion is
/// reported through the `converged` flag, not an error.
pub fn solve_inner(
    problem: &TrainProblem,
    lin: &Linearization,
    consistency: bool,
    warm: Option<&DualParams>,
    cfg: &SolverConfig,
) -> Result<InnerSolution> {
    let l = problem.model.num_features();
    let x0 = match warm {
        None => flatten(&DualParams::zeros(problem, consistency)),
        Some(p) => {
            if p.weights.len() != l {
                return Err(Error::Invalid {
                    what: "warm start",
                    detail: format!("expected {} weights, got {}", l, p.weights.len()),
                });
            }
            if p.consistency_enabled() != consistency {
                let mut q = DualParams::zeros(problem, consistency);
                q.weights.copy_from_slice(&p.weights);
                flatten(&q)
            } else {
                let x = flatten(p);
                let expected = l + if consistency { problem.delta_len() } else { 0 };
                if x.len() != expected {
                    return Err(Error::Invalid {
                        what: "warm start",
                        detail: format!("expected {} variables, got {}", expected, x.len()),
                    });
                }
                x
            }
        }
    };

    let objective = |x: &[f64]| {
        let p = unflatten(problem, consistency, x);
        let (v, gw, gd) = dual_value_and_gradient(problem, &p, lin, cfg.sigma2);
        let mut grad: Vec<f64> = gw.iter().map(|g| -g).collect();
        if let Some(gd) = gd {
            for ctx in gd {
                for edge in ctx {
                    grad.extend(edge.iter().map(|g| -g));
                }
            }
        }
        (-v, grad)
    };
    let opts = LbfgsOptions {
        memory: cfg.memory,
        tol_grad: cfg.tol,
        max_iters: cfg.max_iters,
        clamp: cfg.weight_cap.map(|cap| (l, cap)),
        ..Default::default()
    };
    let out = minimize(objective, x0, &opts)?;

    let params = unflatten(problem, consistency, &out.x);
    let marginals = problem.marginals(&params, lin);
    let records = out
        .records
        .into_iter()
        .map(|r| IterRecord { iter: r.iter, value: -r.value, grad_norm: r.grad_norm, step: r.step })
        .collect();
    Ok(InnerSolution {
        params,
        marginals,
        diagnostics: InnerDiagnostics {
            value: -out.value,
            grad_norm: out.grad_norm,
            iterations: out.iterations,
            converged: out.converged,
            records,
            capped: out.clamped,
        },
    })
}

/// Per-cluster maximum entropy under pooled moment constraints only: the
/// consistency constraints are never imposed, so the tables may disagree
/// across shared variables.
pub fn piecewise_train(problem: &TrainProblem, cfg: &SolverConfig) -> Result<InnerSolution> {
    solve_inner(problem, &Linearization::zeros(problem), false, None, cfg)
}

#[derive(Debug, Clone)]
pub struct Camel0Output {
    /// Final consistency-constrained solution.
    pub solution: InnerSolution,
    /// Diagnostics of the piecewise bootstrap stage.
    pub bootstrap: InnerDiagnostics,
}

/// Piecewise bootstrap, then one consistency-constrained solve at zero
/// linearization, warm-started from the piecewise weights.
pub fn camel0_train(problem: &TrainProblem, cfg: &SolverConfig) -> Result<Camel0Output> {
    let lin = Linearization::zeros(problem);
    let boot = solve_inner(problem, &lin, false, None, cfg)?;
    let solution = solve_inner(problem, &lin, true, Some(&boot.params), cfg)?;
    Ok(Camel0Output { solution, bootstrap: boot.diagnostics })
}
