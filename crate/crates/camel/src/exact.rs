//! Exact inference and training by enumeration of the joint assignment space.
//!
//! Everything here is exponential in the number of variables and guarded by a
//! cap on the joint size. The enumeration is chunked; chunk partials are
//! combined in a fixed order, so results are bit-identical across thread
//! counts.

use crate::error::{Error, Result};
use crate::lbfgs::{minimize, IterRecord, LbfgsOptions};
use crate::marginals::{feature_expectations, PseudoMarginals};
use crate::model::{empirical_expectations, DataMode, Dataset, Model, TableShape};
use crate::par;

/// Joint spaces larger than this are refused unless a caller raises the cap.
pub const DEFAULT_JOINT_CAP: u64 = 1 << 24;

const CHUNK: usize = 4096;

fn checked_joint_size(model: &Model, cap: u64) -> Result<usize> {
    let size = model.joint_size().ok_or(Error::JointSpaceCap { size: u128::MAX, cap })?;
    if size > cap as u128 {
        return Err(Error::JointSpaceCap { size, cap });
    }
    Ok(size as usize)
}

fn check_weights(model: &Model, weights: &[f64]) -> Result<()> {
    if weights.len() != model.num_features() {
        return Err(Error::Invalid {
            what: "weight vector",
            detail: format!("expected {} entries, got {}", model.num_features(), weights.len()),
        });
    }
    Ok(())
}

/// Walks joint indices `range` in order, calling `visit(full_states, log_score)`.
fn scan<F: FnMut(&[usize], f64)>(model: &Model, scores: &[Vec<f64>], range: std::ops::Range<usize>, mut visit: F) {
    let all: Vec<usize> = (0..model.num_variables()).collect();
    let shape = TableShape::new(&all, model.space());
    let mut full = shape.decode(range.start);
    for _ in range {
        let s: f64 = (0..model.num_clusters()).map(|ci| scores[ci][model.shape(ci).restrict_full(&full)]).sum();
        visit(&full, s);
        for k in (0..full.len()).rev() {
            full[k] += 1;
            if full[k] < shape.cards[k] {
                break;
            }
            full[k] = 0;
        }
    }
}

fn score_tables(model: &Model, weights: &[f64]) -> Vec<Vec<f64>> {
    (0..model.num_clusters())
        .map(|ci| (0..model.table_size(ci)).map(|a| model.log_score(ci, a, weights)).collect())
        .collect()
}

pub fn log_partition(model: &Model, weights: &[f64]) -> Result<f64> {
    log_partition_capped(model, weights, DEFAULT_JOINT_CAP)
}

pub fn log_partition_capped(model: &Model, weights: &[f64], cap: u64) -> Result<f64> {
    check_weights(model, weights)?;
    let n = checked_joint_size(model, cap)?;
    let scores = score_tables(model, weights);
    // (running max, sum of exp relative to it) per chunk, merged pairwise
    let (m, s) = par::fold_chunked(
        n,
        CHUNK,
        |range| {
            let mut m = f64::NEG_INFINITY;
            let mut s = 0.0f64;
            scan(model, &scores, range, |_, score| {
                if score <= m {
                    s += (score - m).exp();
                } else {
                    s = s * (m - score).exp() + 1.0;
                    m = score;
                }
            });
            (m, s)
        },
        (f64::NEG_INFINITY, 0.0),
        |(m1, s1), (m2, s2)| {
            let m = m1.max(m2);
            if m == f64::NEG_INFINITY {
                (m, 0.0)
            } else {
                (m, s1 * (m1 - m).exp() + s2 * (m2 - m).exp())
            }
        },
    );
    Ok(m + s.ln())
}

/// Exact cluster marginals of the distribution with the given weights.
pub fn marginals(model: &Model, weights: &[f64]) -> Result<PseudoMarginals> {
    marginals_capped(model, weights, DEFAULT_JOINT_CAP)
}

pub fn marginals_capped(model: &Model, weights: &[f64], cap: u64) -> Result<PseudoMarginals> {
    Ok(partition_and_marginals(model, weights, cap)?.1)
}

pub(crate) fn partition_and_marginals(model: &Model, weights: &[f64], cap: u64) -> Result<(f64, PseudoMarginals)> {
    let log_z = log_partition_capped(model, weights, cap)?;
    let n = checked_joint_size(model, cap)?;
    let scores = score_tables(model, weights);
    let zero: Vec<Vec<f64>> = (0..model.num_clusters()).map(|ci| vec![0.0; model.table_size(ci)]).collect();
    let chunks = n.div_ceil(CHUNK);
    let partials = par::map_indexed(chunks, |c| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(n);
        let mut tables = zero.clone();
        scan(model, &scores, lo..hi, |full, score| {
            let p = (score - log_z).exp();
            for (ci, t) in tables.iter_mut().enumerate() {
                t[model.shape(ci).restrict_full(full)] += p;
            }
        });
        tables
    });
    let mut tables = zero;
    for part in partials {
        for (t, p) in tables.iter_mut().zip(part) {
            for (a, b) in t.iter_mut().zip(p) {
                *a += b;
            }
        }
    }
    Ok((log_z, PseudoMarginals::from_tables(model, tables)?))
}

/// Dense joint distribution, only for very small models.
#[derive(Debug, Clone)]
pub struct JointTable {
    shape: TableShape,
    probs: Vec<f64>,
}

impl JointTable {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Full assignment for a joint index, ordered by variable index.
    pub fn states(&self, idx: usize) -> Vec<usize> {
        self.shape.decode(idx)
    }

    pub fn entropy(&self) -> f64 {
        -self.probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
    }
}

pub fn joint(model: &Model, weights: &[f64], cap: u64) -> Result<JointTable> {
    let log_z = log_partition_capped(model, weights, cap)?;
    let n = checked_joint_size(model, cap)?;
    let scores = score_tables(model, weights);
    let chunks = n.div_ceil(CHUNK);
    let parts = par::map_indexed(chunks, |c| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(n);
        let mut probs = Vec::with_capacity(hi - lo);
        scan(model, &scores, lo..hi, |_, score| probs.push((score - log_z).exp()));
        probs
    });
    let all: Vec<usize> = (0..model.num_variables()).collect();
    Ok(JointTable { shape: TableShape::new(&all, model.space()), probs: parts.concat() })
}

#[derive(Debug, Clone)]
pub struct MlConfig {
    pub tol: f64,
    pub max_iters: usize,
    /// Gaussian prior variance; `None` trains unregularized.
    pub sigma2: Option<f64>,
    pub cap: u64,
}

impl Default for MlConfig {
    fn default() -> Self {
        MlConfig { tol: 1e-7, max_iters: 2000, sigma2: None, cap: DEFAULT_JOINT_CAP }
    }
}

#[derive(Debug, Clone)]
pub struct MlOutcome {
    pub weights: Vec<f64>,
    /// Mean log-likelihood of the data at the trained weights (without the prior term).
    pub log_likelihood: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub records: Vec<IterRecord>,
}

/// Pooled per-instance feature values, averaged over the dataset. Unlike
/// `empirical_expectations` this does not reject conditional data.
pub(crate) fn pooled_stats(model: &Model, data: &Dataset) -> Vec<f64> {
    let counts = crate::model::assignment_counts(model, data);
    let mut out = vec![0.0; model.num_features()];
    for ci in 0..model.num_clusters() {
        for (a, &c) in counts[ci].iter().enumerate() {
            if c > 0 {
                for &(l, v) in &model.features().rows(ci)[a] {
                    out[l] += c as f64 * v;
                }
            }
        }
    }
    let m = data.len() as f64;
    for o in &mut out {
        *o /= m;
    }
    out
}

/// Exact maximum-likelihood training. Maximizes the mean log-likelihood
/// (joint for generative data, of the targets given the observed variables
/// for conditional data), optionally with a Gaussian prior. Errors when the
/// iteration budget runs out before the gradient tolerance is met.
pub fn exact_ml_train(model: &Model, data: &Dataset, cfg: &MlConfig) -> Result<MlOutcome> {
    let m = data.len() as f64;
    let reg = |w: &[f64], g: &mut [f64]| -> f64 {
        match cfg.sigma2 {
            None => 0.0,
            Some(s2) => {
                let mut r = 0.0;
                for (gi, &wi) in g.iter_mut().zip(w) {
                    r += wi * wi;
                    *gi -= wi / (s2 * m);
                }
                r / (2.0 * s2 * m)
            }
        }
    };

    let objective: Box<dyn FnMut(&[f64]) -> (f64, Vec<f64>)> = match data.mode() {
        DataMode::Generative => {
            checked_joint_size(model, cfg.cap)?;
            let stats = empirical_expectations(model, data)?;
            let model = model.clone();
            Box::new(move |w: &[f64]| {
                let (log_z, pi) = match partition_and_marginals(&model, w, cfg.cap) {
                    Ok(t) => t,
                    Err(_) => return (f64::NAN, vec![0.0; w.len()]),
                };
                let expect = feature_expectations(&model, &pi);
                let mut value = -log_z;
                let mut grad: Vec<f64> = Vec::with_capacity(w.len());
                for l in 0..w.len() {
                    value += w[l] * stats[l];
                    grad.push(stats[l] - expect[l]);
                }
                value -= reg(w, &mut grad);
                (-value, grad.into_iter().map(|g| -g).collect())
            })
        }
        DataMode::Conditional { target, .. } => {
            let stats = pooled_stats(model, data);
            let views: Vec<Model> =
                data.instances().iter().map(|x| model.condition(target, x)).collect::<Result<_>>()?;
            for v in &views {
                checked_joint_size(v, cfg.cap)?;
            }
            let inv_m = 1.0 / m;
            Box::new(move |w: &[f64]| {
                let per_view = par::map_indexed(views.len(), |i| partition_and_marginals(&views[i], w, cfg.cap));
                let mut value = 0.0;
                let mut expect = vec![0.0; w.len()];
                for (view, r) in views.iter().zip(per_view) {
                    let Ok((log_z, pi)) = r else {
                        return (f64::NAN, vec![0.0; w.len()]);
                    };
                    value -= inv_m * log_z;
                    for (e, x) in expect.iter_mut().zip(feature_expectations(view, &pi)) {
                        *e += inv_m * x;
                    }
                }
                let mut grad: Vec<f64> = Vec::with_capacity(w.len());
                for l in 0..w.len() {
                    value += w[l] * stats[l];
                    grad.push(stats[l] - expect[l]);
                }
                value -= reg(w, &mut grad);
                (-value, grad.into_iter().map(|g| -g).collect())
            })
        }
    };

    let opts = LbfgsOptions { tol_grad: cfg.tol, max_iters: cfg.max_iters, ..Default::default() };
    let out = minimize(objective, vec![0.0; model.num_features()], &opts)?;
    if !out.converged {
        return Err(Error::NotConverged { tol: cfg.tol, budget: cfg.max_iters, grad_norm: out.grad_norm });
    }
    let penalty = match cfg.sigma2 {
        None => 0.0,
        Some(s2) => out.x.iter().map(|w| w * w).sum::<f64>() / (2.0 * s2 * m),
    };
    let records =
        out.records.into_iter().map(|r| IterRecord { value: -r.value, ..r }).collect();
    Ok(MlOutcome {
        log_likelihood: -out.value + penalty,
        grad_norm: out.grad_norm,
        iterations: out.iterations,
        records,
        weights: out.x,
    })
}
