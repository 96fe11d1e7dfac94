//! Pseudo-marginal tables and the functionals defined on them: entropy,
//! feature expectations, and the two constraint residuals.

use crate::error::{Error, Result};
use crate::model::Model;

/// One probability table per cluster, in cluster order. Each table is
/// normalized on its own; nothing requires the collection to be the marginals
/// of a single joint distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoMarginals {
    tables: Vec<Vec<f64>>,
}

impl PseudoMarginals {
    pub fn uniform(model: &Model) -> Self {
        let tables = (0..model.num_clusters())
            .map(|ci| {
                let n = model.table_size(ci);
                vec![1.0 / n as f64; n]
            })
            .collect();
        PseudoMarginals { tables }
    }

    /// Validates shape, non-negativity, and normalization to 1e-6.
    pub fn from_tables(model: &Model, tables: Vec<Vec<f64>>) -> Result<Self> {
        if tables.len() != model.num_clusters() {
            return Err(Error::Invalid {
                what: "marginal tables",
                detail: format!("expected {} tables, got {}", model.num_clusters(), tables.len()),
            });
        }
        for (ci, t) in tables.iter().enumerate() {
            if t.len() != model.table_size(ci) {
                return Err(Error::Invalid {
                    what: "marginal tables",
                    detail: format!("cluster {ci}: expected {} entries, got {}", model.table_size(ci), t.len()),
                });
            }
            let mut sum = 0.0;
            for &p in t {
                if !(p >= 0.0) || !p.is_finite() {
                    return Err(Error::Invalid {
                        what: "marginal tables",
                        detail: format!("cluster {ci} holds a negative or non-finite entry"),
                    });
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Invalid {
                    what: "marginal tables",
                    detail: format!("cluster {ci} sums to {sum}"),
                });
            }
        }
        Ok(PseudoMarginals { tables })
    }

    pub(crate) fn from_tables_unchecked(tables: Vec<Vec<f64>>) -> Self {
        PseudoMarginals { tables }
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn table(&self, cluster_idx: usize) -> &[f64] {
        &self.tables[cluster_idx]
    }

    pub fn tables(&self) -> &[Vec<f64>] {
        &self.tables
    }
}

/// Shannon entropy with the 0 ln 0 = 0 convention.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Distribution over one edge's sepset assignments, projected from the source
/// or the target endpoint.
pub fn sepset_marginal(model: &Model, pi: &PseudoMarginals, edge_idx: usize, source_side: bool) -> Vec<f64> {
    let e = model.edge(edge_idx);
    let (ci, proj) = if source_side { (e.source, &e.proj_source) } else { (e.target, &e.proj_target) };
    let mut out = vec![0.0; e.sepset_size];
    for (a, &p) in pi.table(ci).iter().enumerate() {
        out[proj[a] as usize] += p;
    }
    out
}

/// Cluster entropies minus sepset entropies; every sepset term is counted
/// once, projected from the edge's source endpoint.
pub fn bethe_entropy(model: &Model, pi: &PseudoMarginals) -> f64 {
    let clusters: f64 = (0..model.num_clusters()).map(|ci| entropy(pi.table(ci))).sum();
    let sepsets: f64 = (0..model.num_edges()).map(|e| entropy(&sepset_marginal(model, pi, e, true))).sum();
    clusters - sepsets
}

/// The objective value maximized by the constrained trainers. Identical to
/// the entropy approximation; feasibility is tracked separately through the
/// residual functions.
pub fn camel_objective(model: &Model, pi: &PseudoMarginals) -> f64 {
    bethe_entropy(model, pi)
}

/// Expected feature values under the tables, summed over clusters.
pub fn feature_expectations(model: &Model, pi: &PseudoMarginals) -> Vec<f64> {
    let mut out = vec![0.0; model.num_features()];
    for ci in 0..model.num_clusters() {
        let rows = model.features().rows(ci);
        for (a, &p) in pi.table(ci).iter().enumerate() {
            if p != 0.0 {
                for &(l, v) in &rows[a] {
                    out[l] += p * v;
                }
            }
        }
    }
    out
}

/// Per-edge signed sepset disagreement (source projection minus target
/// projection), indexed by sepset assignment.
pub fn consistency_residuals(model: &Model, pi: &PseudoMarginals) -> Vec<Vec<f64>> {
    (0..model.num_edges())
        .map(|e| {
            let src = sepset_marginal(model, pi, e, true);
            let tgt = sepset_marginal(model, pi, e, false);
            src.iter().zip(tgt).map(|(a, b)| a - b).collect()
        })
        .collect()
}

pub fn max_consistency_residual(model: &Model, pi: &PseudoMarginals) -> f64 {
    consistency_residuals(model, pi)
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, &x| m.max(x.abs()))
}

/// Expected feature values minus the target statistics.
pub fn moment_residuals(model: &Model, pi: &PseudoMarginals, stats: &[f64]) -> Vec<f64> {
    feature_expectations(model, pi).iter().zip(stats).map(|(e, s)| e - s).collect()
}
