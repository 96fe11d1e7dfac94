//! Prediction accuracy of trained weights on a dataset.
//!
//! A variable's belief is the average of its single-variable marginals over
//! every cluster containing it; the prediction is the belief's argmax with
//! ties broken toward the lower state. Generative data is scored on the
//! model's unconditional beliefs (the same prediction for every instance);
//! conditional data is scored per instance on the model conditioned on that
//! instance's observed values, predicting target variables only. Multipliers
//! and linearization offsets are training artifacts, so evaluation sees
//! weights alone.

use crate::error::Result;
use crate::exact;
use crate::lbp::{lbp_infer, LbpConfig};
use crate::marginals::PseudoMarginals;
use crate::model::{DataMode, Dataset, Model};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferenceKind {
    Lbp,
    Exact,
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub inference: InferenceKind,
    pub lbp: LbpConfig,
    /// Joint-space cap guarding exact inference.
    pub cap: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { inference: InferenceKind::Lbp, lbp: LbpConfig::default(), cap: exact::DEFAULT_JOINT_CAP }
    }
}

#[derive(Debug, Clone)]
pub struct VariableAccuracy {
    pub name: String,
    pub correct: usize,
    pub total: usize,
}

impl VariableAccuracy {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            return f64::NAN;
        }
        self.correct as f64 / self.total as f64
    }
}

#[derive(Debug, Clone)]
pub struct EvalMetrics {
    /// One entry per predicted variable; observed variables are not scored.
    pub per_variable: Vec<VariableAccuracy>,
    /// Mean of the per-variable accuracies.
    pub macro_accuracy: f64,
    /// Pooled accuracy over every (instance, variable) prediction.
    pub micro_accuracy: f64,
    /// False when any propagation run missed its threshold.
    pub inference_converged: bool,
}

/// Per-variable state distributions implied by cluster tables: each
/// variable's single-variable marginal averaged over the clusters whose
/// scope contains it.
pub fn variable_beliefs(model: &Model, pi: &PseudoMarginals) -> Vec<Vec<f64>> {
    let space = model.space();
    let mut sums: Vec<Vec<f64>> = (0..space.len()).map(|v| vec![0.0; space.card(v)]).collect();
    let mut hits = vec![0usize; space.len()];
    for ci in 0..model.num_clusters() {
        let shape = model.shape(ci);
        let table = pi.table(ci);
        for (k, &v) in shape.scope.iter().enumerate() {
            for (a, &p) in table.iter().enumerate() {
                let state = (a / shape.strides[k]) % shape.cards[k];
                sums[v][state] += p;
            }
            hits[v] += 1;
        }
    }
    for (v, table) in sums.iter_mut().enumerate() {
        if hits[v] > 0 {
            for x in table.iter_mut() {
                *x /= hits[v] as f64;
            }
        }
    }
    sums
}

/// Argmax with ties resolved toward the lower state index.
pub fn predict_state(belief: &[f64]) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (s, &p) in belief.iter().enumerate() {
        if p > best_val {
            best = s;
            best_val = p;
        }
    }
    best
}

fn infer(model: &Model, weights: &[f64], cfg: &EvalConfig) -> Result<(PseudoMarginals, bool)> {
    match cfg.inference {
        InferenceKind::Exact => Ok((exact::marginals_capped(model, weights, cfg.cap)?, true)),
        InferenceKind::Lbp => {
            let out = lbp_infer(model, weights, &cfg.lbp)?;
            Ok((out.beliefs, out.converged))
        }
    }
}

pub fn evaluate(model: &Model, weights: &[f64], data: &Dataset, cfg: &EvalConfig) -> Result<EvalMetrics> {
    let space = model.space();
    let (scored_vars, preds_per_instance, converged) = match data.mode() {
        DataMode::Generative => {
            let (pi, ok) = infer(model, weights, cfg)?;
            let beliefs = variable_beliefs(model, &pi);
            let preds: Vec<usize> = beliefs.iter().map(|b| predict_state(b)).collect();
            let vars: Vec<usize> = (0..space.len()).collect();
            (vars, vec![preds; data.len()], ok)
        }
        DataMode::Conditional { target, .. } => {
            let mut target = target.clone();
            target.sort_unstable();
            let per_instance: Vec<Result<(Vec<usize>, bool)>> = par::map_indexed(data.len(), |m| {
                let x = &data.instances()[m];
                let view = model.condition(&target, x)?;
                let (pi, ok) = infer(&view, weights, cfg)?;
                let beliefs = variable_beliefs(&view, &pi);
                Ok((beliefs.iter().map(|b| predict_state(b)).collect(), ok))
            });
            let mut preds = Vec::with_capacity(data.len());
            let mut all_ok = true;
            for r in per_instance {
                let (p, ok) = r?;
                preds.push(p);
                all_ok &= ok;
            }
            (target, preds, all_ok)
        }
    };

    let mut per_variable: Vec<VariableAccuracy> = scored_vars
        .iter()
        .map(|&v| VariableAccuracy { name: space.name(v).to_string(), correct: 0, total: 0 })
        .collect();
    for (inst, preds) in data.instances().iter().zip(&preds_per_instance) {
        for (slot, (&v, &pred)) in scored_vars.iter().zip(preds).enumerate() {
            per_variable[slot].total += 1;
            if inst[v] == pred {
                per_variable[slot].correct += 1;
            }
        }
    }
    let macro_accuracy =
        per_variable.iter().map(VariableAccuracy::accuracy).sum::<f64>() / per_variable.len() as f64;
    let correct: usize = per_variable.iter().map(|a| a.correct).sum();
    let total: usize = per_variable.iter().map(|a| a.total).sum();
    Ok(EvalMetrics {
        per_variable,
        macro_accuracy,
        micro_accuracy: correct as f64 / total as f64,
        inference_converged: converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marginals::PseudoMarginals;
    use crate::synth::{self, GenKind, Tying};

    #[test]
    fn uniform_weights_predict_the_zero_state_everywhere() {
        let model = synth::abc_model();
        let data = synth::abc_dataset(model.space());
        let w = vec![0.0; model.num_features()];
        for kind in [InferenceKind::Lbp, InferenceKind::Exact] {
            let cfg = EvalConfig { inference: kind, ..Default::default() };
            let m = evaluate(&model, &w, &data, &cfg).unwrap();
            // six of the nine states in the example data are zero
            assert!((m.micro_accuracy - 2.0 / 3.0).abs() < 1e-12);
            assert!((m.macro_accuracy - 2.0 / 3.0).abs() < 1e-12);
            for v in &m.per_variable {
                assert_eq!((v.correct, v.total), (2, 3));
            }
        }
    }

    #[test]
    fn lbp_and_exact_agree_on_trees() {
        let model = synth::gen_model(GenKind::Chain, 4, 3, Tying::FullTableUntied, 0).unwrap();
        let w = synth::random_weights(model.num_features(), 1.0, 7);
        let data = synth::gen_data(&model, &w, 50, 9).unwrap();
        let a = evaluate(&model, &w, &data, &EvalConfig { inference: InferenceKind::Lbp, ..Default::default() })
            .unwrap();
        let b =
            evaluate(&model, &w, &data, &EvalConfig { inference: InferenceKind::Exact, ..Default::default() })
                .unwrap();
        assert_eq!(a.micro_accuracy, b.micro_accuracy);
        assert_eq!(a.macro_accuracy, b.macro_accuracy);
    }

    #[test]
    fn conditional_evaluation_scores_targets_only() {
        let model = synth::gen_model(GenKind::Chain, 4, 2, Tying::FullTableUntied, 0).unwrap();
        let w = synth::random_weights(model.num_features(), 1.5, 11);
        let full = synth::gen_data(&model, &w, 60, 13).unwrap();
        let data = full.with_observed(model.space(), &[0, 2]).unwrap();
        let m = evaluate(&model, &w, &data, &EvalConfig::default()).unwrap();
        assert_eq!(m.per_variable.len(), 2);
        let names: Vec<&str> = m.per_variable.iter().map(|v| v.name.as_str()).collect();
        assert_eq!(names, vec![model.space().name(1), model.space().name(3)]);
        for v in &m.per_variable {
            assert_eq!(v.total, 60);
        }
        assert!(m.inference_converged);

        // conditioning on the observed half beats the unconditional predictor
        let uncond = evaluate(&model, &w, &full, &EvalConfig::default()).unwrap();
        let pooled_uncond = (uncond.per_variable[1].correct + uncond.per_variable[3].correct) as f64 / 120.0;
        assert!(m.micro_accuracy >= pooled_uncond - 1e-12);
    }

    #[test]
    fn trained_weights_match_the_bayes_predictor_on_trees() {
        // decisive per-variable margins keep the argmax stable under the
        // sampling noise separating learned weights from true ones
        let model = synth::gen_model(GenKind::Chain, 3, 2, Tying::FullTableUntied, 0).unwrap();
        let w_true = vec![-0.5, 0.1, 0.2, 1.0, -0.5, 0.1, 0.2, 1.0];
        assert_eq!(w_true.len(), model.num_features());
        let data = synth::gen_data(&model, &w_true, 400, 19).unwrap();
        let ml = exact::exact_ml_train(&model, &data, &exact::MlConfig::default()).unwrap();
        let cfg = EvalConfig { inference: InferenceKind::Exact, ..Default::default() };
        let learned = evaluate(&model, &ml.weights, &data, &cfg).unwrap();
        let bayes = evaluate(&model, &w_true, &data, &cfg).unwrap();
        assert_eq!(learned.micro_accuracy, bayes.micro_accuracy);
        assert_eq!(learned.macro_accuracy, bayes.macro_accuracy);
    }

    #[test]
    fn beliefs_average_across_containing_clusters() {
        let model = synth::abc_model();
        // deliberately inconsistent tables: AB says B=0 with 0.8, BC with 0.4
        let tables = vec![
            vec![0.5, 0.1, 0.3, 0.1],
            vec![0.2, 0.2, 0.3, 0.3],
            vec![0.25, 0.25, 0.25, 0.25],
        ];
        let pi = PseudoMarginals::from_tables_unchecked(tables);
        let vb = variable_beliefs(&model, &pi);
        let b_idx = model.space().index_of("B").unwrap();
        assert!((vb[b_idx][0] - 0.6).abs() < 1e-12);
        assert!((vb[b_idx][1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn tie_break_points_at_the_lower_state() {
        assert_eq!(predict_state(&[0.5, 0.5]), 0);
        assert_eq!(predict_state(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(predict_state(&[f64::NAN, f64::NAN]), 0);
    }
}
