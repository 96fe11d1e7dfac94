//! Loopy sum-product on the cluster graph with residual scheduling.
//!
//! Messages are log-space tables over edge sepsets, one per direction,
//! normalized so their exponentials sum to one. Updates are applied
//! largest-residual-first from a lazy max-heap: popped entries are hints,
//! re-checked against a freshly computed candidate before anything changes,
//! so outdated priorities never corrupt the fixed point. Exact on trees;
//! on loopy graphs the fixed point is a stationary point of the Bethe
//! free energy.

use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::lbfgs::{self, IterRecord, LbfgsOptions};
use crate::marginals::{feature_expectations, PseudoMarginals};
use crate::model::Model;
use crate::par;

#[derive(Debug, Clone)]
pub struct LbpConfig {
    /// Convergence threshold on the max-norm message residual.
    pub threshold: f64,
    /// Cap on applied message updates per run.
    pub max_updates: usize,
    /// Weight of the new message when mixing in log space; 1 replaces outright.
    pub damping: f64,
}

impl Default for LbpConfig {
    fn default() -> Self {
        LbpConfig { threshold: 1e-6, max_updates: 1_000_000, damping: 1.0 }
    }
}

/// Directed message tables, reusable across runs for warm starts.
/// Slot `2e` carries source-to-target on edge `e`, slot `2e+1` the reverse.
#[derive(Debug, Clone)]
pub struct MessageState {
    msgs: Vec<Vec<f64>>,
}

impl MessageState {
    pub fn uniform(model: &Model) -> Self {
        let msgs = (0..2 * model.num_edges())
            .map(|slot| {
                let len = model.edge(slot / 2).sepset_size;
                vec![-(len as f64).ln(); len]
            })
            .collect();
        MessageState { msgs }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LbpRun {
    pub updates: usize,
    pub converged: bool,
    /// Residual of the update pending when the budget ran out; 0 when drained.
    pub max_residual: f64,
}

#[derive(Debug, Clone)]
pub struct LbpOutcome {
    pub beliefs: PseudoMarginals,
    pub updates: usize,
    pub converged: bool,
    pub max_residual: f64,
}

fn check_weights(model: &Model, weights: &[f64]) -> Result<()> {
    if weights.len() != model.num_features() {
        return Err(Error::Invalid {
            what: "weights",
            detail: format!("expected {} entries, got {}", model.num_features(), weights.len()),
        });
    }
    Ok(())
}

fn theta_tables(model: &Model, weights: &[f64]) -> Vec<Vec<f64>> {
    (0..model.num_clusters())
        .map(|ci| (0..model.table_size(ci)).map(|a| model.log_score(ci, a, weights)).collect())
        .collect()
}

fn inf_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let mx = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    mx + xs.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln()
}

/// Log potential plus every incoming message, per assignment of `cluster`.
fn pre_table(model: &Model, thetas: &[Vec<f64>], msgs: &[Vec<f64>], cluster: usize) -> Vec<f64> {
    let mut pre = thetas[cluster].clone();
    for &(e, is_source) in model.incident(cluster) {
        let in_slot = if is_source { 2 * e + 1 } else { 2 * e };
        let edge = model.edge(e);
        let proj = if is_source { &edge.proj_source } else { &edge.proj_target };
        let m = &msgs[in_slot];
        for (a, p) in pre.iter_mut().enumerate() {
            *p += m[proj[a] as usize];
        }
    }
    pre
}

/// Fresh normalized candidate for one directed slot.
fn candidate(model: &Model, thetas: &[Vec<f64>], msgs: &[Vec<f64>], slot: usize) -> Vec<f64> {
    let edge = model.edge(slot / 2);
    let (sender, proj) =
        if slot % 2 == 0 { (edge.source, &edge.proj_source) } else { (edge.target, &edge.proj_target) };
    let mut pre = pre_table(model, thetas, msgs, sender);
    let rev = &msgs[slot ^ 1];
    for (a, p) in pre.iter_mut().enumerate() {
        *p -= rev[proj[a] as usize];
    }
    let s_len = msgs[slot].len();
    let mut mx = vec![f64::NEG_INFINITY; s_len];
    for (a, &p) in pre.iter().enumerate() {
        let s = proj[a] as usize;
        if p > mx[s] {
            mx[s] = p;
        }
    }
    let mut sum = vec![0.0; s_len];
    for (a, &p) in pre.iter().enumerate() {
        let s = proj[a] as usize;
        sum[s] += (p - mx[s]).exp();
    }
    let mut out: Vec<f64> = (0..s_len).map(|s| mx[s] + sum[s].ln()).collect();
    let z = log_sum_exp(&out);
    for o in &mut out {
        *o -= z;
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    residual: f64,
    slot: usize,
    version: u64,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // ties pop the lower slot first so runs are reproducible
        self.residual
            .total_cmp(&other.residual)
            .then_with(|| other.slot.cmp(&self.slot))
            .then_with(|| self.version.cmp(&other.version))
    }
}

fn run_bp(model: &Model, thetas: &[Vec<f64>], state: &mut MessageState, cfg: &LbpConfig) -> LbpRun {
    let n_slots = 2 * model.num_edges();
    let mut versions = vec![0u64; n_slots];
    let mut heap = BinaryHeap::with_capacity(2 * n_slots);
    for slot in 0..n_slots {
        let cand = candidate(model, thetas, &state.msgs, slot);
        let r = inf_diff(&cand, &state.msgs[slot]);
        if r > cfg.threshold {
            heap.push(Pending { residual: r, slot, version: 0 });
        }
    }
    let mut updates = 0usize;
    while let Some(p) = heap.pop() {
        if p.version < versions[p.slot] {
            continue;
        }
        let cand = candidate(model, thetas, &state.msgs, p.slot);
        let r = inf_diff(&cand, &state.msgs[p.slot]);
        if r <= cfg.threshold {
            continue;
        }
        if updates == cfg.max_updates {
            return LbpRun { updates, converged: false, max_residual: r };
        }
        {
            let stored = &mut state.msgs[p.slot];
            for (s, c) in stored.iter_mut().zip(&cand) {
                *s = cfg.damping * c + (1.0 - cfg.damping) * *s;
            }
            let z = log_sum_exp(stored);
            for s in stored.iter_mut() {
                *s -= z;
            }
        }
        versions[p.slot] += 1;
        updates += 1;
        let r_self = inf_diff(&cand, &state.msgs[p.slot]);
        if r_self > cfg.threshold {
            heap.push(Pending { residual: r_self, slot: p.slot, version: versions[p.slot] });
        }
        // re-queue every slot whose inputs changed: the receiver's outgoing
        // messages, except the reply on this same edge, which excludes this
        // message from its product
        let edge = model.edge(p.slot / 2);
        let receiver = if p.slot % 2 == 0 { edge.target } else { edge.source };
        for &(e, is_source) in model.incident(receiver) {
            let out_slot = if is_source { 2 * e } else { 2 * e + 1 };
            if out_slot == (p.slot ^ 1) {
                continue;
            }
            let c2 = candidate(model, thetas, &state.msgs, out_slot);
            let r2 = inf_diff(&c2, &state.msgs[out_slot]);
            if r2 > cfg.threshold {
                heap.push(Pending { residual: r2, slot: out_slot, version: versions[out_slot] });
            }
        }
    }
    LbpRun { updates, converged: true, max_residual: 0.0 }
}

fn beliefs_from(model: &Model, thetas: &[Vec<f64>], state: &MessageState) -> PseudoMarginals {
    let tables = (0..model.num_clusters())
        .map(|ci| {
            let pre = pre_table(model, thetas, &state.msgs, ci);
            let z = log_sum_exp(&pre);
            pre.iter().map(|&p| (p - z).exp()).collect()
        })
        .collect();
    PseudoMarginals::from_tables_unchecked(tables)
}

/// Free energy as a function of raw messages: minus the sum of cluster
/// normalizers plus the sum of edge normalizers, in log space. Stationary in
/// the messages at every fixed point, where its negation is the log-partition
/// estimate implied by the beliefs.
fn message_free_energy(model: &Model, thetas: &[Vec<f64>], state: &MessageState) -> f64 {
    let mut f = 0.0;
    for ci in 0..model.num_clusters() {
        f -= log_sum_exp(&pre_table(model, thetas, &state.msgs, ci));
    }
    for e in 0..model.num_edges() {
        let fwd = &state.msgs[2 * e];
        let rev = &state.msgs[2 * e + 1];
        let joint: Vec<f64> = fwd.iter().zip(rev).map(|(a, b)| a + b).collect();
        f += log_sum_exp(&joint);
    }
    f
}

/// One-shot inference from uniform messages.
pub fn lbp_infer(model: &Model, weights: &[f64], cfg: &LbpConfig) -> Result<LbpOutcome> {
    let mut state = MessageState::uniform(model);
    let run = lbp_with_state(model, weights, &mut state, cfg)?;
    let thetas = theta_tables(model, weights);
    Ok(LbpOutcome {
        beliefs: beliefs_from(model, &thetas, &state),
        updates: run.updates,
        converged: run.converged,
        max_residual: run.max_residual,
    })
}

/// Inference that reuses (and advances) an existing message state.
pub fn lbp_with_state(
    model: &Model,
    weights: &[f64],
    state: &mut MessageState,
    cfg: &LbpConfig,
) -> Result<LbpRun> {
    check_weights(model, weights)?;
    if state.msgs.len() != 2 * model.num_edges() {
        return Err(Error::Invalid {
            what: "message state",
            detail: format!("expected {} slots, got {}", 2 * model.num_edges(), state.msgs.len()),
        });
    }
    let thetas = theta_tables(model, weights);
    Ok(run_bp(model, &thetas, state, cfg))
}

/// Beliefs implied by a message state at the given weights.
pub fn lbp_beliefs(model: &Model, weights: &[f64], state: &MessageState) -> Result<PseudoMarginals> {
    check_weights(model, weights)?;
    let thetas = theta_tables(model, weights);
    Ok(beliefs_from(model, &thetas, state))
}

/// Log-partition estimate implied by a message state (exact on trees at
/// convergence).
pub fn lbp_log_partition(model: &Model, weights: &[f64], state: &MessageState) -> Result<f64> {
    check_weights(model, weights)?;
    let thetas = theta_tables(model, weights);
    Ok(-message_free_energy(model, &thetas, state))
}

#[derive(Debug, Clone)]
pub struct LbpMlConfig {
    /// Gradient norm target for the outer quasi-Newton loop.
    pub tol: f64,
    pub max_iters: usize,
    /// Gaussian prior variance; None trains unregularized.
    pub sigma2: Option<f64>,
    pub bp: LbpConfig,
}

impl Default for LbpMlConfig {
    fn default() -> Self {
        LbpMlConfig { tol: 1e-5, max_iters: 500, sigma2: None, bp: LbpConfig::default() }
    }
}

#[derive(Debug, Clone)]
pub struct LbpMlOutcome {
    pub weights: Vec<f64>,
    /// Surrogate likelihood at the final weights.
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub records: Vec<IterRecord>,
    /// Contexts whose propagation missed its threshold on the final
    /// evaluation. Training continues through these; callers decide whether
    /// to trust the result.
    pub bp_unconverged: usize,
}

/// Likelihood training with the log partition replaced by its Bethe estimate
/// at a propagation fixed point. Message states persist per context across
/// line-search evaluations, so later evaluations start near their fixed
/// points.
pub fn lbp_ml_train(
    problem: &crate::dual::TrainProblem,
    cfg: &LbpMlConfig,
) -> Result<LbpMlOutcome> {
    let n = problem.model().num_features();
    let nctx = problem.num_contexts();
    let mut states: Vec<MessageState> =
        (0..nctx).map(|c| MessageState::uniform(problem.context_view(c))).collect();
    let mut bp_fail = 0usize;

    let opts = LbfgsOptions {
        tol_grad: cfg.tol,
        max_iters: cfg.max_iters,
        ..Default::default()
    };
    let outcome = lbfgs::minimize(
        |w| {
            let results: Vec<(f64, Vec<f64>, MessageState, bool)> = par::map_indexed(nctx, |c| {
                let view = problem.context_view(c);
                let thetas = theta_tables(view, w);
                let mut st = states[c].clone();
                let run = run_bp(view, &thetas, &mut st, &cfg.bp);
                let logz = -message_free_energy(view, &thetas, &st);
                let beliefs = beliefs_from(view, &thetas, &st);
                let stats = problem.context_stats(c);
                let val = w.iter().zip(stats).map(|(a, b)| a * b).sum::<f64>() - logz;
                (val, feature_expectations(view, &beliefs), st, run.converged)
            });
            let mut value = 0.0;
            let mut grad = vec![0.0; n];
            bp_fail = 0;
            for (c, (val, expect, st, ok)) in results.into_iter().enumerate() {
                let wgt = problem.context_weight(c);
                value += wgt * val;
                let stats = problem.context_stats(c);
                for k in 0..n {
                    grad[k] += wgt * (stats[k] - expect[k]);
                }
                states[c] = st;
                if !ok {
                    bp_fail += 1;
                }
            }
            if let Some(s2) = cfg.sigma2 {
                let denom = s2 * problem.num_instances() as f64;
                value -= w.iter().map(|x| x * x).sum::<f64>() / (2.0 * denom);
                for k in 0..n {
                    grad[k] -= w[k] / denom;
                }
            }
            (-value, grad.iter().map(|g| -g).collect())
        },
        vec![0.0; n],
        &opts,
    )?;

    Ok(LbpMlOutcome {
        weights: outcome.x,
        value: -outcome.value,
        grad_norm: outcome.grad_norm,
        iterations: outcome.iterations,
        converged: outcome.converged,
        records: outcome
            .records
            .into_iter()
            .map(|r| IterRecord { value: -r.value, ..r })
            .collect(),
        bp_unconverged: bp_fail,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::TrainProblem;
    use crate::exact;
    use crate::marginals::{bethe_entropy, max_consistency_residual};
    use crate::synth::{self, GenKind, Tying};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tight() -> LbpConfig {
        LbpConfig { threshold: 1e-10, ..Default::default() }
    }

    #[test]
    fn zero_weights_need_no_updates() {
        let model = synth::gen_model(GenKind::Loop, 4, 3, Tying::FullTableUntied, 0).unwrap();
        let w = vec![0.0; model.num_features()];
        let out = lbp_infer(&model, &w, &LbpConfig::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.updates, 0);
        for ci in 0..model.num_clusters() {
            let t = out.beliefs.table(ci);
            let want = 1.0 / t.len() as f64;
            assert!(t.iter().all(|&p| (p - want).abs() < 1e-12));
        }
    }

    #[test]
    fn chain_beliefs_match_exact_marginals() {
        let model = synth::gen_model(GenKind::Chain, 5, 3, Tying::FullTableUntied, 0).unwrap();
        let w = synth::random_weights(model.num_features(), 1.0, 5);
        let cfg = LbpConfig { threshold: 1e-8, ..Default::default() };
        let out = lbp_infer(&model, &w, &cfg).unwrap();
        assert!(out.converged);
        let oracle = exact::marginals(&model, &w).unwrap();
        for ci in 0..model.num_clusters() {
            for (a, b) in out.beliefs.table(ci).iter().zip(oracle.table(ci)) {
                assert!((a - b).abs() <= 1e-6, "cluster {ci}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn star_beliefs_match_exact_marginals() {
        let model = synth::gen_model(GenKind::Star, 6, 2, Tying::PairwiseTied, 0).unwrap();
        let w = synth::random_weights(model.num_features(), 1.2, 9);
        let cfg = LbpConfig { threshold: 1e-8, ..Default::default() };
        let out = lbp_infer(&model, &w, &cfg).unwrap();
        assert!(out.converged);
        let oracle = exact::marginals(&model, &w).unwrap();
        for ci in 0..model.num_clusters() {
            for (a, b) in out.beliefs.table(ci).iter().zip(oracle.table(ci)) {
                assert!((a - b).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn loop_beliefs_are_edge_consistent_at_convergence() {
        let model = synth::gen_model(GenKind::Loop, 4, 2, Tying::PairwiseTied, 0).unwrap();
        let w = synth::random_weights(model.num_features(), 1.0, 17);
        let out = lbp_infer(&model, &w, &LbpConfig::default()).unwrap();
        assert!(out.converged);
        assert!(max_consistency_residual(&model, &out.beliefs) <= 1e-5);
    }

    #[test]
    fn free_energy_matches_exact_log_partition_on_trees() {
        let model = synth::gen_model(GenKind::Chain, 5, 2, Tying::FullTableUntied, 0).unwrap();
        let w = synth::random_weights(model.num_features(), 1.0, 21);
        let mut state = MessageState::uniform(&model);
        let run = lbp_with_state(&model, &w, &mut state, &tight()).unwrap();
        assert!(run.converged);
        let got = lbp_log_partition(&model, &w, &state).unwrap();
        let want = exact::log_partition(&model, &w).unwrap();
        assert!((got - want).abs() <= 1e-8, "{got} vs {want}");
    }

    #[test]
    fn free_energy_is_stationary_at_fixed_points() {
        let model = synth::gen_model(GenKind::Loop, 3, 2, Tying::PairwiseTied, 0).unwrap();
        let w = synth::random_weights(model.num_features(), 1.0, 33);
        let mut state = MessageState::uniform(&model);
        let run = lbp_with_state(&model, &w, &mut state, &tight()).unwrap();
        assert!(run.converged);
        let thetas = theta_tables(&model, &w);
        let base = message_free_energy(&model, &thetas, &state);

        // the log-partition estimate agrees with the belief-space form
        let beliefs = beliefs_from(&model, &thetas, &state);
        let energy: f64 = (0..model.num_clusters())
            .map(|ci| beliefs.table(ci).iter().zip(&thetas[ci]).map(|(p, t)| p * t).sum::<f64>())
            .sum();
        let belief_form = energy + bethe_entropy(&model, &beliefs);
        assert!((-base - belief_form).abs() <= 1e-8, "{} vs {belief_form}", -base);

        // first-order insensitivity to message perturbations
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let mut bumped = state.clone();
            for m in &mut bumped.msgs {
                for x in m.iter_mut() {
                    *x += rng.gen_range(-1e-6..1e-6);
                }
            }
            let shifted = message_free_energy(&model, &thetas, &bumped);
            assert!((shifted - base).abs() <= 1e-9, "{shifted} vs {base}");
        }
    }

    #[test]
    fn damped_and_undamped_reach_the_same_fixed_point() {
        let model = synth::gen_model(GenKind::Loop, 4, 2, Tying::PairwiseTied, 0).unwrap();
        let w = synth::random_weights(model.num_features(), 1.0, 25);
        let plain = lbp_infer(&model, &w, &LbpConfig::default()).unwrap();
        let damped = lbp_infer(&model, &w, &LbpConfig { damping: 0.5, ..Default::default() }).unwrap();
        assert!(plain.converged && damped.converged);
        for ci in 0..model.num_clusters() {
            for (a, b) in plain.beliefs.table(ci).iter().zip(damped.beliefs.table(ci)) {
                assert!((a - b).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn warm_start_needs_no_more_updates_than_cold() {
        let model = synth::gen_model(GenKind::Loop, 4, 2, Tying::PairwiseTied, 0).unwrap();
        let w = synth::random_weights(model.num_features(), 1.0, 29);
        let cfg = LbpConfig::default();
        let mut warm = MessageState::uniform(&model);
        lbp_with_state(&model, &w, &mut warm, &cfg).unwrap();

        // same weights again: the state is already a fixed point
        let again = lbp_with_state(&model, &w, &mut warm.clone(), &cfg).unwrap();
        assert_eq!(again.updates, 0);

        // nearby weights: warm restart does no worse than from uniform
        let w2: Vec<f64> = w.iter().map(|x| x + 0.01).collect();
        let from_warm = lbp_with_state(&model, &w2, &mut warm, &cfg).unwrap();
        let from_cold = lbp_with_state(&model, &w2, &mut MessageState::uniform(&model), &cfg).unwrap();
        assert!(from_warm.converged && from_cold.converged);
        assert!(from_warm.updates <= from_cold.updates, "{} > {}", from_warm.updates, from_cold.updates);
    }

    #[test]
    fn update_budget_exhaustion_is_flagged() {
        let model = synth::gen_model(GenKind::Loop, 4, 2, Tying::PairwiseTied, 0).unwrap();
        let w = synth::random_weights(model.num_features(), 1.5, 31);
        let cfg = LbpConfig { max_updates: 3, ..Default::default() };
        let out = lbp_infer(&model, &w, &cfg).unwrap();
        assert!(!out.converged);
        assert_eq!(out.updates, 3);
        assert!(out.max_residual > cfg.threshold);
    }

    #[test]
    fn runs_are_bitwise_repeatable() {
        let model = synth::gen_model(GenKind::Grid, 3, 2, Tying::PairwiseTied, 0).unwrap();
        let w = synth::random_weights(model.num_features(), 0.8, 37);
        let a = lbp_infer(&model, &w, &LbpConfig::default()).unwrap();
        let b = lbp_infer(&model, &w, &LbpConfig::default()).unwrap();
        assert_eq!(a.updates, b.updates);
        for ci in 0..model.num_clusters() {
            assert_eq!(a.beliefs.table(ci), b.beliefs.table(ci));
        }
    }

    #[test]
    fn rejects_wrong_weight_count() {
        let model = synth::abc_model();
        assert!(lbp_infer(&model, &[0.0], &LbpConfig::default()).is_err());
    }

    #[test]
    fn likelihood_training_moment_matches_on_trees() {
        let model = synth::gen_model(GenKind::Chain, 4, 2, Tying::FullTableUntied, 0).unwrap();
        let w_true = synth::random_weights(model.num_features(), 1.0, 41);
        let data = synth::gen_data(&model, &w_true, 120, 43).unwrap();
        let problem = TrainProblem::new(&model, &data).unwrap();
        let cfg = LbpMlConfig { tol: 1e-6, ..Default::default() };
        let out = lbp_ml_train(&problem, &cfg).unwrap();
        assert!(out.converged, "stopped after {} iterations at {}", out.iterations, out.grad_norm);
        assert_eq!(out.bp_unconverged, 0);
        // on a tree the surrogate is exact, so the fit matches the moments
        let hat = crate::model::empirical_expectations(&model, &data).unwrap();
        let fitted = exact::marginals(&model, &out.weights).unwrap();
        let expect = feature_expectations(&model, &fitted);
        for (e, h) in expect.iter().zip(&hat) {
            assert!((e - h).abs() <= 1e-4, "{e} vs {h}");
        }
    }

    #[test]
    fn conditional_likelihood_training_converges() {
        let model = synth::gen_model(GenKind::Chain, 3, 2, Tying::FullTableUntied, 0).unwrap();
        let w_true = synth::random_weights(model.num_features(), 1.0, 47);
        let full = synth::gen_data(&model, &w_true, 40, 53).unwrap();
        let data = full.with_observed(model.space(), &[0]).unwrap();
        let problem = TrainProblem::new(&model, &data).unwrap();
        let out = lbp_ml_train(&problem, &LbpMlConfig::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.bp_unconverged, 0);
        assert!(out.grad_norm <= 1e-5);
    }

    #[test]
    fn regularization_shrinks_trained_weights() {
        let model = synth::gen_model(GenKind::Loop, 3, 2, Tying::PairwiseTied, 0).unwrap();
        let w_true = synth::random_weights(model.num_features(), 1.0, 59);
        let data = synth::gen_data(&model, &w_true, 60, 61).unwrap();
        let problem = TrainProblem::new(&model, &data).unwrap();
        let free = lbp_ml_train(&problem, &LbpMlConfig::default()).unwrap();
        let tamed =
            lbp_ml_train(&problem, &LbpMlConfig { sigma2: Some(0.5), ..Default::default() }).unwrap();
        let norm = |w: &[f64]| w.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm(&tamed.weights) < norm(&free.weights));
    }
}
