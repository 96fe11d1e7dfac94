//! Cross-checks the brute-force joint enumeration against an independent
//! variable-elimination implementation kept local to this test.

use camel::exact;
use camel::model::Model;
use camel::synth::{self, GenKind, Tying};

/// Log-space factor over a sorted variable scope, last variable fastest.
struct Factor {
    scope: Vec<usize>,
    cards: Vec<usize>,
    table: Vec<f64>,
}

impl Factor {
    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1usize; self.cards.len()];
        for i in (0..self.cards.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.cards[i + 1];
        }
        s
    }

    fn index_of(&self, states: &dyn Fn(usize) -> usize) -> usize {
        self.scope.iter().zip(self.strides()).map(|(&v, st)| states(v) * st).sum()
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn multiply(model: &Model, a: &Factor, b: &Factor) -> Factor {
    let mut scope: Vec<usize> = a.scope.iter().chain(&b.scope).copied().collect();
    scope.sort_unstable();
    scope.dedup();
    let cards: Vec<usize> = scope.iter().map(|&v| model.space().card(v)).collect();
    let size: usize = cards.iter().product();
    let out = Factor { scope, cards, table: vec![0.0; size] };
    let strides = out.strides();
    let mut table = vec![0.0; size];
    for (idx, slot) in table.iter_mut().enumerate() {
        let state = |v: usize| -> usize {
            let p = out.scope.iter().position(|&u| u == v).unwrap();
            (idx / strides[p]) % out.cards[p]
        };
        *slot = a.table[a.index_of(&state)] + b.table[b.index_of(&state)];
    }
    Factor { table, ..out }
}

fn sum_out(model: &Model, f: &Factor, var: usize) -> Factor {
    let pos = f.scope.iter().position(|&v| v == var).expect("var in scope");
    let scope: Vec<usize> = f.scope.iter().copied().filter(|&v| v != var).collect();
    let cards: Vec<usize> = scope.iter().map(|&v| model.space().card(v)).collect();
    let size: usize = cards.iter().product::<usize>().max(1);
    let out = Factor { scope, cards, table: vec![0.0; size] };
    let strides = out.strides();
    let in_strides = f.strides();
    let mut table = vec![0.0; size];
    for (idx, slot) in table.iter_mut().enumerate() {
        let state = |v: usize| -> usize {
            let p = out.scope.iter().position(|&u| u == v).unwrap();
            (idx / strides[p]) % out.cards[p]
        };
        let base: usize = f
            .scope
            .iter()
            .zip(&in_strides)
            .filter(|(&v, _)| v != var)
            .map(|(&v, st)| state(v) * st)
            .sum();
        let vals: Vec<f64> =
            (0..f.cards[pos]).map(|s| f.table[base + s * in_strides[pos]]).collect();
        *slot = log_sum_exp(&vals);
    }
    Factor { table, ..out }
}

fn cluster_factors(model: &Model, weights: &[f64]) -> Vec<Factor> {
    (0..model.num_clusters())
        .map(|ci| {
            let scope = model.graph().clusters[ci].scope.clone();
            let cards: Vec<usize> = scope.iter().map(|&v| model.space().card(v)).collect();
            let table: Vec<f64> =
                (0..model.table_size(ci)).map(|a| model.log_score(ci, a, weights)).collect();
            Factor { scope, cards, table }
        })
        .collect()
}

/// Eliminates every variable not in `keep`, in ascending index order, then
/// multiplies the survivors into one factor.
fn eliminate(model: &Model, weights: &[f64], keep: &[usize]) -> Factor {
    let mut factors = cluster_factors(model, weights);
    for v in 0..model.num_variables() {
        if keep.contains(&v) {
            continue;
        }
        let (touching, rest): (Vec<Factor>, Vec<Factor>) =
            factors.into_iter().partition(|f| f.scope.contains(&v));
        factors = rest;
        if touching.is_empty() {
            continue;
        }
        let mut product = touching
            .into_iter()
            .reduce(|a, b| multiply(model, &a, &b))
            .expect("nonempty");
        product = sum_out(model, &product, v);
        factors.push(product);
    }
    factors
        .into_iter()
        .reduce(|a, b| multiply(model, &a, &b))
        .unwrap_or(Factor { scope: vec![], cards: vec![], table: vec![0.0] })
}

fn ve_log_partition(model: &Model, weights: &[f64]) -> f64 {
    let f = eliminate(model, weights, &[]);
    assert!(f.scope.is_empty());
    log_sum_exp(&f.table)
}

fn ve_cluster_marginal(model: &Model, weights: &[f64], ci: usize) -> Vec<f64> {
    let scope = &model.graph().clusters[ci].scope;
    let f = eliminate(model, weights, scope);
    assert_eq!(&f.scope, scope);
    let log_z = log_sum_exp(&f.table);
    // reindex through assignment_states so the layouts need not agree
    (0..model.table_size(ci))
        .map(|a| {
            let states = model.assignment_states(ci, a);
            let idx = f.index_of(&|v: usize| {
                let p = scope.iter().position(|&u| u == v).unwrap();
                states[p]
            });
            (f.table[idx] - log_z).exp()
        })
        .collect()
}

fn fixture_models() -> Vec<Model> {
    vec![
        synth::gen_model(GenKind::Chain, 5, 3, Tying::FullTableUntied, 0).unwrap(),
        synth::gen_model(GenKind::Loop, 4, 2, Tying::PairwiseTied, 1).unwrap(),
        synth::gen_model(GenKind::Grid, 3, 2, Tying::PairwiseTied, 2).unwrap(),
        synth::gen_model(GenKind::Star, 6, 2, Tying::FullTableUntied, 3).unwrap(),
        synth::abc_model(),
    ]
}

#[test]
fn log_partition_agrees_with_variable_elimination() {
    for (mi, model) in fixture_models().iter().enumerate() {
        for seed in 0..4u64 {
            let w = synth::random_weights(model.num_features(), 1.5, 100 * mi as u64 + seed);
            let got = exact::log_partition(model, &w).unwrap();
            let want = ve_log_partition(model, &w);
            assert!(
                (got - want).abs() <= 1e-9 * want.abs().max(1.0),
                "model {mi} seed {seed}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn cluster_marginals_agree_with_variable_elimination() {
    for (mi, model) in fixture_models().iter().enumerate() {
        let w = synth::random_weights(model.num_features(), 1.5, 7 + mi as u64);
        let pi = exact::marginals(model, &w).unwrap();
        for ci in 0..model.num_clusters() {
            let want = ve_cluster_marginal(model, &w, ci);
            for (s, (got, ve)) in pi.table(ci).iter().zip(&want).enumerate() {
                assert!(
                    (got - ve).abs() <= 1e-10,
                    "model {mi} cluster {ci} state {s}: {got} vs {ve}"
                );
            }
        }
    }
}

#[test]
fn conditioned_views_agree_with_variable_elimination() {
    let model = synth::gen_model(GenKind::Chain, 5, 3, Tying::FullTableUntied, 0).unwrap();
    let w = synth::random_weights(model.num_features(), 1.2, 11);
    let data = synth::gen_data(&model, &w, 3, 5).unwrap();
    let target = [1usize, 3];
    for inst in data.instances() {
        let view = model.condition(&target, inst).unwrap();
        let got = exact::marginals(&view, &w).unwrap();
        for ci in 0..view.num_clusters() {
            let want = ve_cluster_marginal(&view, &w, ci);
            for (got, ve) in got.table(ci).iter().zip(&want) {
                assert!((got - ve).abs() <= 1e-10);
            }
        }
    }
}
