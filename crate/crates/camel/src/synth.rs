//! Synthetic model layouts and exact samplers for experiments and tests.

use crate::error::{Error, Result};
use crate::exact;
use crate::model::{
    Cluster, ClusterGraph, DataMode, Dataset, EdgeSpec, FeatureEntry, Model, Variable, VariableSpace,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenKind {
    /// Path over `size` variables, one pair cluster per adjacent pair.
    Chain,
    /// Variable 0 paired with each other variable; clusters chained through
    /// the hub so the cluster graph stays a tree.
    Star,
    /// Cycle over `size` variables; edge k links cluster k to cluster k+1 mod n.
    Loop,
    /// `size` x `size` lattice with a cluster per adjacent pair and an edge
    /// between every two clusters sharing a variable.
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tying {
    /// One indicator feature per cluster assignment, nothing shared.
    FullTableUntied,
    /// Symmetric pair features shared by all clusters, plus per-variable bias
    /// indicators on the lowest-id cluster containing the variable.
    PairwiseTied,
}

/// Builds one of the fixed layouts. The structure depends only on the kind,
/// size, cardinality, and tying; the seed is accepted for interface symmetry
/// with the data sampler and is not consumed.
pub fn gen_model(kind: GenKind, size: usize, cardinality: usize, tying: Tying, _seed: u64) -> Result<Model> {
    if cardinality < 2 {
        return Err(Error::Invalid { what: "cardinality", detail: format!("need at least 2, got {cardinality}") });
    }
    let min = match kind {
        GenKind::Chain | GenKind::Star => 2,
        GenKind::Loop => 3,
        GenKind::Grid => 2,
    };
    if size < min {
        return Err(Error::Invalid { what: "size", detail: format!("{kind:?} needs at least {min}, got {size}") });
    }

    let (names, pairs): (Vec<String>, Vec<(usize, usize)>) = match kind {
        GenKind::Chain => {
            let names = (0..size).map(|i| format!("v{i}")).collect();
            let pairs = (0..size - 1).map(|i| (i, i + 1)).collect();
            (names, pairs)
        }
        GenKind::Star => {
            let names = (0..size).map(|i| format!("v{i}")).collect();
            let pairs = (1..size).map(|i| (0, i)).collect();
            (names, pairs)
        }
        GenKind::Loop => {
            let names = (0..size).map(|i| format!("v{i}")).collect();
            let pairs = (0..size).map(|i| (i, (i + 1) % size)).collect();
            (names, pairs)
        }
        GenKind::Grid => {
            let k = size;
            let names = (0..k * k).map(|i| format!("v{}_{}", i / k, i % k)).collect();
            let mut pairs = Vec::new();
            for r in 0..k {
                for c in 0..k - 1 {
                    pairs.push((r * k + c, r * k + c + 1));
                }
            }
            for r in 0..k - 1 {
                for c in 0..k {
                    pairs.push((r * k + c, (r + 1) * k + c));
                }
            }
            (names, pairs)
        }
    };

    let space = VariableSpace::new(names.into_iter().map(|name| Variable { name, card: cardinality }).collect())?;
    let clusters: Vec<Cluster> = pairs
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| Cluster { id: i as u32, scope: vec![a.min(b), a.max(b)] })
        .collect();

    let edges: Vec<EdgeSpec> = match kind {
        GenKind::Chain => (0..clusters.len().saturating_sub(1))
            .map(|i| EdgeSpec { source: i as u32, target: i as u32 + 1, sepset: vec![i + 1] })
            .collect(),
        GenKind::Star => (0..clusters.len().saturating_sub(1))
            .map(|i| EdgeSpec { source: i as u32, target: i as u32 + 1, sepset: vec![0] })
            .collect(),
        GenKind::Loop => (0..size)
            .map(|i| EdgeSpec { source: i as u32, target: ((i + 1) % size) as u32, sepset: vec![(i + 1) % size] })
            .collect(),
        GenKind::Grid => {
            // chain each variable's incident clusters; the edges carrying any
            // one variable must form a path, never a cycle, or propagation
            // feeds a message back into itself undamped
            let mut edges = Vec::new();
            for v in 0..space.len() {
                let members: Vec<usize> =
                    clusters.iter().enumerate().filter(|(_, c)| c.scope.contains(&v)).map(|(i, _)| i).collect();
                for pair in members.windows(2) {
                    edges.push(EdgeSpec { source: pair[0] as u32, target: pair[1] as u32, sepset: vec![v] });
                }
            }
            edges
        }
    };

    let mut entries = Vec::new();
    match tying {
        Tying::FullTableUntied => {
            let d = cardinality;
            for c in &clusters {
                for a in 0..d * d {
                    entries.push(FeatureEntry {
                        feature: format!("c{}_a{}", c.id, a),
                        cluster: c.id,
                        pattern: vec![Some(a / d), Some(a % d)],
                        value: 1.0,
                    });
                }
            }
        }
        Tying::PairwiseTied => {
            for a in 0..cardinality {
                for b in a..cardinality {
                    let name = format!("sym_{a}_{b}");
                    for c in &clusters {
                        entries.push(FeatureEntry {
                            feature: name.clone(),
                            cluster: c.id,
                            pattern: vec![Some(a), Some(b)],
                            value: 1.0,
                        });
                        if a != b {
                            entries.push(FeatureEntry {
                                feature: name.clone(),
                                cluster: c.id,
                                pattern: vec![Some(b), Some(a)],
                                value: 1.0,
                            });
                        }
                    }
                }
            }
            for v in 0..space.len() {
                let host = clusters.iter().find(|c| c.scope.contains(&v)).expect("every variable is covered");
                let pos = host.scope.iter().position(|&s| s == v).unwrap();
                for s in 1..cardinality {
                    let mut pattern = vec![None; host.scope.len()];
                    pattern[pos] = Some(s);
                    entries.push(FeatureEntry {
                        feature: format!("bias_{}_{s}", space.name(v)),
                        cluster: host.id,
                        pattern,
                        value: 1.0,
                    });
                }
            }
        }
    }

    Model::new(space, ClusterGraph::new(clusters, edges)?, &entries)
}

/// Uniform weights in `(-scale, scale)` from a fixed-seed generator.
pub fn random_weights(len: usize, scale: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Samples full assignments from the exact joint at the given weights.
/// Only valid for models under the joint-size cap.
pub fn gen_data(model: &Model, weights: &[f64], count: usize, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::Invalid { what: "sample count", detail: "need at least one instance".into() });
    }
    let joint = exact::joint(model, weights, exact::DEFAULT_JOINT_CAP)?;
    let mut cum = Vec::with_capacity(joint.len());
    let mut acc = 0.0;
    for &p in joint.probs() {
        acc += p;
        cum.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instances = (0..count)
        .map(|_| {
            let u: f64 = rng.gen();
            let idx = cum.partition_point(|&c| c <= u).min(joint.len() - 1);
            joint.states(idx)
        })
        .collect();
    Dataset::new(model.space(), DataMode::Generative, instances)
}

/// Three binary variables A, B, C with pair clusters 1:{A,B}, 2:{B,C},
/// 3:{A,C} in a cycle, and two tied features: `f00` fires on (0,0) in every
/// cluster, `f11` on (1,1). The worked example used across the tests.
pub fn abc_model() -> Model {
    let space = VariableSpace::new(
        ["A", "B", "C"].iter().map(|&n| Variable { name: n.into(), card: 2 }).collect(),
    )
    .unwrap();
    let clusters = vec![
        Cluster { id: 1, scope: vec![0, 1] },
        Cluster { id: 2, scope: vec![1, 2] },
        Cluster { id: 3, scope: vec![0, 2] },
    ];
    let edges = vec![
        EdgeSpec { source: 1, target: 2, sepset: vec![1] },
        EdgeSpec { source: 1, target: 3, sepset: vec![0] },
        EdgeSpec { source: 2, target: 3, sepset: vec![2] },
    ];
    let mut entries = Vec::new();
    for id in 1..=3u32 {
        entries.push(FeatureEntry { feature: "f00".into(), cluster: id, pattern: vec![Some(0), Some(0)], value: 1.0 });
        entries.push(FeatureEntry { feature: "f11".into(), cluster: id, pattern: vec![Some(1), Some(1)], value: 1.0 });
    }
    Model::new(space, ClusterGraph::new(clusters, edges).unwrap(), &entries).unwrap()
}

/// The three instances paired with [`abc_model`]: exactly one variable is 1
/// in each, so `f00` averages to 1 and `f11` to 0.
pub fn abc_dataset(space: &VariableSpace) -> Dataset {
    Dataset::new(space, DataMode::Generative, vec![vec![0, 0, 1], vec![0, 1, 0], vec![1, 0, 0]]).unwrap()
}
