//! Model and dataset types.
//!
//! A model couples three pieces: a [`VariableSpace`] of named discrete
//! variables, a [`ClusterGraph`] of clusters (scopes over variables) joined by
//! directed sepset edges, and a [`FeatureModel`] of sparse log-linear feature
//! tables over cluster assignments. [`Model::new`] compiles them into dense
//! enumeration tables and per-edge projection maps so that inference and
//! training loops never touch names or maps.
//!
//! Assignments to a scope are enumerated lexicographically with the scope's
//! first variable most significant; scopes and sepsets are kept in ascending
//! variable-index order. Edge direction is whatever the caller (or the model
//! file) states; it fixes which endpoint a sepset marginal is read from and
//! the sign convention of consistency terms.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variable {
    pub name: String,
    pub card: usize,
}

/// Ordered set of named discrete variables; the position in the list is the
/// variable index used everywhere else.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableSpace {
    vars: Vec<Variable>,
}

impl VariableSpace {
    pub fn new(vars: Vec<Variable>) -> Result<Self> {
        if vars.is_empty() {
            return Err(Error::Structure("variable list is empty".into()));
        }
        let mut seen = BTreeMap::new();
        for (i, v) in vars.iter().enumerate() {
            if v.card < 1 {
                return Err(Error::Invalid {
                    what: "cardinality",
                    detail: format!("variable `{}` has cardinality 0", v.name),
                });
            }
            if seen.insert(v.name.clone(), i).is_some() {
                return Err(Error::Duplicate { line: 0, what: "variable", name: v.name.clone() });
            }
        }
        Ok(VariableSpace { vars })
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn card(&self, var: usize) -> usize {
        self.vars[var].card
    }

    pub fn name(&self, var: usize) -> &str {
        &self.vars[var].name
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }

    pub fn vars(&self) -> &[Variable] {
        &self.vars
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub id: u32,
    /// Variable indices, strictly ascending.
    pub scope: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSpec {
    pub source: u32,
    pub target: u32,
    /// Variable indices, strictly ascending, contained in both scopes.
    pub sepset: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterGraph {
    pub clusters: Vec<Cluster>,
    pub edges: Vec<EdgeSpec>,
}

impl ClusterGraph {
    pub fn new(clusters: Vec<Cluster>, edges: Vec<EdgeSpec>) -> Result<Self> {
        let g = ClusterGraph { clusters, edges };
        g.validate(false)?;
        Ok(g)
    }

    fn validate(&self, relaxed: bool) -> Result<()> {
        if self.clusters.is_empty() {
            return Err(Error::Structure("cluster list is empty".into()));
        }
        let mut ids = BTreeMap::new();
        for (i, c) in self.clusters.iter().enumerate() {
            if ids.insert(c.id, i).is_some() {
                return Err(Error::Duplicate { line: 0, what: "cluster id", name: c.id.to_string() });
            }
            if !relaxed && c.scope.is_empty() {
                return Err(Error::Structure(format!("cluster {} has an empty scope", c.id)));
            }
            if !c.scope.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::Structure(format!(
                    "scope of cluster {} is not in ascending variable order",
                    c.id
                )));
            }
        }
        for e in &self.edges {
            if e.source == e.target {
                return Err(Error::Structure(format!("edge {} -> {} joins a cluster to itself", e.source, e.target)));
            }
            let (si, ti) = match (ids.get(&e.source), ids.get(&e.target)) {
                (Some(&s), Some(&t)) => (s, t),
                _ => {
                    return Err(Error::Structure(format!(
                        "edge {} -> {} references an unknown cluster id",
                        e.source, e.target
                    )))
                }
            };
            if !relaxed && e.sepset.is_empty() {
                return Err(Error::Structure(format!("edge {} -> {} has an empty sepset", e.source, e.target)));
            }
            if !e.sepset.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::Structure(format!(
                    "sepset of edge {} -> {} is not in ascending variable order",
                    e.source, e.target
                )));
            }
            let contained = |scope: &[usize]| e.sepset.iter().all(|v| scope.contains(v));
            if !contained(&self.clusters[si].scope) || !contained(&self.clusters[ti].scope) {
                return Err(Error::SepsetNotContained { line: 0, source_id: e.source, target_id: e.target });
            }
        }
        Ok(())
    }

    pub fn cluster_index(&self, id: u32) -> Option<usize> {
        self.clusters.iter().position(|c| c.id == id)
    }

    /// True when the undirected cluster graph is connected and acyclic.
    pub fn is_tree(&self) -> bool {
        let n = self.clusters.len();
        if self.edges.len() + 1 != n {
            return false;
        }
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for e in &self.edges {
            let s = find(&mut parent, self.cluster_index(e.source).unwrap());
            let t = find(&mut parent, self.cluster_index(e.target).unwrap());
            if s == t {
                return false;
            }
            parent[s] = t;
        }
        true
    }
}

/// One row of a feature table before compilation. `pattern` is aligned with
/// the cluster's scope; `None` is a wildcard matching every state of that
/// variable. Rows hitting the same (feature, cluster, assignment) accumulate.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEntry {
    pub feature: String,
    pub cluster: u32,
    pub pattern: Vec<Option<usize>>,
    pub value: f64,
}

/// Compiled feature tables: per cluster, per assignment, a sparse list of
/// (feature index, value) pairs sorted by feature index.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureModel {
    names: Vec<String>,
    rows: Vec<Vec<Vec<(usize, f64)>>>,
}

impl FeatureModel {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Sparse rows of one cluster's table, indexed by assignment.
    pub fn rows(&self, cluster_idx: usize) -> &[Vec<(usize, f64)>] {
        &self.rows[cluster_idx]
    }
}

/// Dense enumeration data for one cluster scope.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct TableShape {
    pub scope: Vec<usize>,
    pub cards: Vec<usize>,
    pub strides: Vec<usize>,
    pub size: usize,
}

impl TableShape {
    pub fn new(scope: &[usize], space: &VariableSpace) -> Self {
        let cards: Vec<usize> = scope.iter().map(|&v| space.card(v)).collect();
        let mut strides = vec![1usize; scope.len()];
        for k in (0..scope.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * cards[k + 1];
        }
        let size = cards.iter().product::<usize>().max(1);
        TableShape { scope: scope.to_vec(), cards, strides, size }
    }

    pub fn index_of(&self, states: &[usize]) -> usize {
        debug_assert_eq!(states.len(), self.scope.len());
        states.iter().zip(&self.strides).map(|(s, st)| s * st).sum()
    }

    pub fn decode(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0usize; self.scope.len()];
        for k in 0..self.scope.len() {
            out[k] = idx / self.strides[k];
            idx %= self.strides[k];
        }
        out
    }

    /// Index of this scope's restriction of a full assignment over all variables.
    pub fn restrict_full(&self, full: &[usize]) -> usize {
        self.scope.iter().zip(&self.strides).map(|(&v, st)| full[v] * st).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct CompiledEdge {
    pub source: usize,
    pub target: usize,
    pub sepset_size: usize,
    /// Cluster assignment index -> sepset assignment index, per endpoint.
    pub proj_source: Vec<u32>,
    pub proj_target: Vec<u32>,
}

/// A compiled model: structure plus feature tables, ready for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    space: VariableSpace,
    graph: ClusterGraph,
    features: FeatureModel,
    shapes: Vec<TableShape>,
    compiled_edges: Vec<CompiledEdge>,
    /// Per cluster: incident (edge index, cluster is the source end).
    incident: Vec<Vec<(usize, bool)>>,
}

fn projection_map(cluster: &TableShape, sepset: &[usize], space: &VariableSpace) -> (usize, Vec<u32>) {
    let sep_shape = TableShape::new(sepset, space);
    let positions: Vec<usize> = sepset.iter().map(|v| cluster.scope.iter().position(|s| s == v).unwrap()).collect();
    let mut map = vec![0u32; cluster.size];
    for (idx, slot) in map.iter_mut().enumerate() {
        let states = cluster.decode(idx);
        let sep_idx: usize = positions.iter().zip(&sep_shape.strides).map(|(&p, st)| states[p] * st).sum();
        *slot = sep_idx as u32;
    }
    (sep_shape.size, map)
}

impl Model {
    pub fn new(space: VariableSpace, graph: ClusterGraph, entries: &[FeatureEntry]) -> Result<Self> {
        Self::build(space, graph, entries, false)
    }

    pub(crate) fn build(
        space: VariableSpace,
        graph: ClusterGraph,
        entries: &[FeatureEntry],
        relaxed: bool,
    ) -> Result<Self> {
        graph.validate(relaxed)?;
        for c in &graph.clusters {
            if let Some(&v) = c.scope.iter().find(|&&v| v >= space.len()) {
                return Err(Error::OutOfRange {
                    line: 0,
                    what: "variable index",
                    detail: format!("cluster {} references variable {}", c.id, v),
                });
            }
        }
        if !relaxed {
            for v in 0..space.len() {
                if !graph.clusters.iter().any(|c| c.scope.contains(&v)) {
                    return Err(Error::Structure(format!(
                        "variable `{}` appears in no cluster scope",
                        space.name(v)
                    )));
                }
            }
        }

        let shapes: Vec<TableShape> = graph.clusters.iter().map(|c| TableShape::new(&c.scope, &space)).collect();

        let mut names: Vec<String> = Vec::new();
        let mut name_idx: BTreeMap<&str, usize> = BTreeMap::new();
        let mut rows: Vec<Vec<Vec<(usize, f64)>>> = shapes.iter().map(|s| vec![Vec::new(); s.size]).collect();
        for entry in entries {
            if !entry.value.is_finite() {
                return Err(Error::Invalid {
                    what: "feature value",
                    detail: format!("feature `{}` on cluster {} is not finite", entry.feature, entry.cluster),
                });
            }
            let ci = graph.cluster_index(entry.cluster).ok_or_else(|| Error::Unknown {
                line: 0,
                what: "cluster id",
                name: entry.cluster.to_string(),
            })?;
            let shape = &shapes[ci];
            if entry.pattern.len() != shape.scope.len() {
                return Err(Error::Invalid {
                    what: "assignment pattern",
                    detail: format!(
                        "feature `{}` on cluster {}: pattern has {} entries, scope has {}",
                        entry.feature,
                        entry.cluster,
                        entry.pattern.len(),
                        shape.scope.len()
                    ),
                });
            }
            for (k, p) in entry.pattern.iter().enumerate() {
                if let Some(s) = p {
                    if *s >= shape.cards[k] {
                        return Err(Error::OutOfRange {
                            line: 0,
                            what: "state index",
                            detail: format!(
                                "feature `{}` on cluster {}: state {} for variable `{}` (cardinality {})",
                                entry.feature,
                                entry.cluster,
                                s,
                                space.name(shape.scope[k]),
                                shape.cards[k]
                            ),
                        });
                    }
                }
            }
            let fi = match name_idx.get(entry.feature.as_str()) {
                Some(&i) => i,
                None => {
                    names.push(entry.feature.clone());
                    let i = names.len() - 1;
                    // names owns the string; the map key borrows from entries
                    name_idx.insert(entry.feature.as_str(), i);
                    i
                }
            };
            // expand wildcards over the matching assignments
            let mut stack = vec![(0usize, 0usize)]; // (scope position, partial index)
            while let Some((k, partial)) = stack.pop() {
                if k == shape.scope.len() {
                    rows[ci][partial].push((fi, entry.value));
                    continue;
                }
                match entry.pattern[k] {
                    Some(s) => stack.push((k + 1, partial + s * shape.strides[k])),
                    None => {
                        for s in 0..shape.cards[k] {
                            stack.push((k + 1, partial + s * shape.strides[k]));
                        }
                    }
                }
            }
        }
        // merge duplicate hits and fix the evaluation order
        for table in &mut rows {
            for row in table.iter_mut() {
                row.sort_by_key(|&(f, _)| f);
                let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
                for &(f, v) in row.iter() {
                    match merged.last_mut() {
                        Some(last) if last.0 == f => last.1 += v,
                        _ => merged.push((f, v)),
                    }
                }
                *row = merged;
            }
        }

        let compiled_edges: Vec<CompiledEdge> = graph
            .edges
            .iter()
            .map(|e| {
                let si = graph.cluster_index(e.source).unwrap();
                let ti = graph.cluster_index(e.target).unwrap();
                let (sep_size, proj_source) = projection_map(&shapes[si], &e.sepset, &space);
                let (_, proj_target) = projection_map(&shapes[ti], &e.sepset, &space);
                CompiledEdge { source: si, target: ti, sepset_size: sep_size, proj_source, proj_target }
            })
            .collect();

        let mut incident = vec![Vec::new(); graph.clusters.len()];
        for (ei, e) in compiled_edges.iter().enumerate() {
            incident[e.source].push((ei, true));
            incident[e.target].push((ei, false));
        }

        Ok(Model {
            space,
            graph,
            features: FeatureModel { names, rows },
            shapes,
            compiled_edges,
            incident,
        })
    }

    pub fn space(&self) -> &VariableSpace {
        &self.space
    }

    pub fn graph(&self) -> &ClusterGraph {
        &self.graph
    }

    pub fn features(&self) -> &FeatureModel {
        &self.features
    }

    pub fn num_variables(&self) -> usize {
        self.space.len()
    }

    pub fn num_clusters(&self) -> usize {
        self.graph.clusters.len()
    }

    pub fn num_edges(&self) -> usize {
        self.graph.edges.len()
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    pub fn table_size(&self, cluster_idx: usize) -> usize {
        self.shapes[cluster_idx].size
    }

    pub fn sepset_size(&self, edge_idx: usize) -> usize {
        self.compiled_edges[edge_idx].sepset_size
    }

    pub(crate) fn shape(&self, cluster_idx: usize) -> &TableShape {
        &self.shapes[cluster_idx]
    }

    pub(crate) fn edge(&self, edge_idx: usize) -> &CompiledEdge {
        &self.compiled_edges[edge_idx]
    }

    pub(crate) fn incident(&self, cluster_idx: usize) -> &[(usize, bool)] {
        &self.incident[cluster_idx]
    }

    /// Decoded states (in scope order) of one cluster assignment.
    pub fn assignment_states(&self, cluster_idx: usize, assignment_idx: usize) -> Vec<usize> {
        self.shapes[cluster_idx].decode(assignment_idx)
    }

    /// All assignments of a cluster in enumeration order: lexicographic, the
    /// scope's first variable most significant.
    pub fn cluster_assignments(&self, cluster_id: u32) -> Result<Vec<Assignment>> {
        let ci = self.graph.cluster_index(cluster_id).ok_or_else(|| Error::Unknown {
            line: 0,
            what: "cluster id",
            name: cluster_id.to_string(),
        })?;
        let shape = &self.shapes[ci];
        Ok((0..shape.size)
            .map(|idx| {
                let states = shape.decode(idx);
                Assignment { states: shape.scope.iter().copied().zip(states).collect() }
            })
            .collect())
    }

    /// w . f for one cluster assignment.
    pub fn log_score(&self, cluster_idx: usize, assignment_idx: usize, weights: &[f64]) -> f64 {
        self.features.rows[cluster_idx][assignment_idx]
            .iter()
            .map(|&(f, v)| weights[f] * v)
            .sum()
    }

    /// Total joint assignment count over all variables, None on overflow.
    pub fn joint_size(&self) -> Option<u128> {
        let mut total: u128 = 1;
        for v in self.space.vars() {
            total = total.checked_mul(v.card as u128)?;
            if total > u128::from(u64::MAX) {
                return None;
            }
        }
        Some(total)
    }

    /// Conditional view for one instance: variables in `target` stay free, all
    /// others are pinned to their states in `full`. Cluster ids, edge order and
    /// the feature list are preserved, so weight vectors carry over unchanged.
    pub fn condition(&self, target: &[usize], full: &[usize]) -> Result<Model> {
        if full.len() != self.space.len() {
            return Err(Error::Invalid {
                what: "assignment",
                detail: format!("expected {} states, got {}", self.space.len(), full.len()),
            });
        }
        let mut is_target = vec![false; self.space.len()];
        for &v in target {
            if v >= self.space.len() {
                return Err(Error::OutOfRange {
                    line: 0,
                    what: "variable index",
                    detail: format!("target variable {}", v),
                });
            }
            is_target[v] = true;
        }
        let mut new_index = vec![usize::MAX; self.space.len()];
        let mut vars = Vec::new();
        for v in 0..self.space.len() {
            if is_target[v] {
                new_index[v] = vars.len();
                vars.push(self.space.vars()[v].clone());
            }
        }
        if vars.is_empty() {
            return Err(Error::Invalid { what: "target set", detail: "no target variables".into() });
        }
        let space = VariableSpace::new(vars)?;

        let clusters: Vec<Cluster> = self
            .graph
            .clusters
            .iter()
            .map(|c| Cluster {
                id: c.id,
                scope: c.scope.iter().filter(|&&v| is_target[v]).map(|&v| new_index[v]).collect(),
            })
            .collect();
        let edges: Vec<EdgeSpec> = self
            .graph
            .edges
            .iter()
            .map(|e| EdgeSpec {
                source: e.source,
                target: e.target,
                sepset: e.sepset.iter().filter(|&&v| is_target[v]).map(|&v| new_index[v]).collect(),
            })
            .collect();
        let graph = ClusterGraph { clusters, edges };

        // Reduced tables: enumerate free states, look features up in the full row.
        let mut entries: Vec<FeatureEntry> = Vec::new();
        for (ci, c) in self.graph.clusters.iter().enumerate() {
            let shape = &self.shapes[ci];
            let free_positions: Vec<usize> =
                (0..shape.scope.len()).filter(|&k| is_target[shape.scope[k]]).collect();
            let reduced_shape = TableShape::new(&graph.clusters[ci].scope, &space);
            let base: usize = (0..shape.scope.len())
                .filter(|&k| !is_target[shape.scope[k]])
                .map(|k| full[shape.scope[k]] * shape.strides[k])
                .sum();
            for ridx in 0..reduced_shape.size {
                let states = reduced_shape.decode(ridx);
                let full_idx: usize = base
                    + free_positions.iter().zip(&states).map(|(&k, &s)| s * shape.strides[k]).sum::<usize>();
                for &(f, v) in &self.features.rows[ci][full_idx] {
                    entries.push(FeatureEntry {
                        feature: self.features.names[f].clone(),
                        cluster: c.id,
                        pattern: states.iter().map(|&s| Some(s)).collect(),
                        value: v,
                    });
                }
            }
        }
        // Register every feature so the reduced model's weight indices match.
        let mut model = Model::build(space, graph, &[], true)?;
        let mut names = self.features.names.clone();
        let mut rows: Vec<Vec<Vec<(usize, f64)>>> =
            model.shapes.iter().map(|s| vec![Vec::new(); s.size]).collect();
        for entry in &entries {
            let ci = model.graph.cluster_index(entry.cluster).unwrap();
            let fi = self.features.index_of(&entry.feature).unwrap();
            let idx = model.shapes[ci].index_of(&entry.pattern.iter().map(|p| p.unwrap()).collect::<Vec<_>>());
            rows[ci][idx].push((fi, entry.value));
        }
        for table in &mut rows {
            for row in table.iter_mut() {
                row.sort_by_key(|&(f, _)| f);
                let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
                for &(f, v) in row.iter() {
                    match merged.last_mut() {
                        Some(last) if last.0 == f => last.1 += v,
                        _ => merged.push((f, v)),
                    }
                }
                *row = merged;
            }
        }
        model.features = FeatureModel { names: std::mem::take(&mut names), rows };
        Ok(model)
    }
}

/// A (partial) assignment: variable index -> state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub states: BTreeMap<usize, usize>,
}

/// Restriction of an assignment to a sepset. Errors when the sepset mentions a
/// variable the assignment does not cover.
pub fn project(assignment: &Assignment, sepset: &[usize]) -> Result<Assignment> {
    let mut states = BTreeMap::new();
    for &v in sepset {
        match assignment.states.get(&v) {
            Some(&s) => {
                states.insert(v, s);
            }
            None => {
                return Err(Error::Invalid {
                    what: "projection",
                    detail: format!("variable {} is not assigned", v),
                })
            }
        }
    }
    Ok(Assignment { states })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataMode {
    Generative,
    /// Conditional data: `observed` variables are inputs, `target` variables
    /// are predicted. Together they cover every variable exactly once.
    Conditional { observed: Vec<usize>, target: Vec<usize> },
}

/// A dataset of full assignments, one state per variable per instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    mode: DataMode,
    instances: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(space: &VariableSpace, mode: DataMode, instances: Vec<Vec<usize>>) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::Structure("dataset has no instances".into()));
        }
        if let DataMode::Conditional { observed, target } = &mode {
            let mut role = vec![0u8; space.len()];
            for &v in observed {
                if v >= space.len() {
                    return Err(Error::OutOfRange { line: 0, what: "variable index", detail: format!("observed {}", v) });
                }
                role[v] += 1;
            }
            for &v in target {
                if v >= space.len() {
                    return Err(Error::OutOfRange { line: 0, what: "variable index", detail: format!("target {}", v) });
                }
                role[v] += 1;
            }
            if role.iter().any(|&r| r != 1) {
                return Err(Error::Structure(
                    "conditional data must assign every variable to exactly one of observed/target".into(),
                ));
            }
            if target.is_empty() {
                return Err(Error::Structure("conditional data has no target variables".into()));
            }
        }
        for (m, inst) in instances.iter().enumerate() {
            if inst.len() != space.len() {
                return Err(Error::Structure(format!(
                    "instance {} assigns {} variables, expected {}",
                    m,
                    inst.len(),
                    space.len()
                )));
            }
            for (v, &s) in inst.iter().enumerate() {
                if s >= space.card(v) {
                    return Err(Error::OutOfRange {
                        line: 0,
                        what: "state index",
                        detail: format!("instance {}: variable `{}` state {}", m, space.name(v), s),
                    });
                }
            }
        }
        Ok(Dataset { mode, instances })
    }

    pub fn mode(&self) -> &DataMode {
        &self.mode
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instances(&self) -> &[Vec<usize>] {
        &self.instances
    }

    pub fn is_conditional(&self) -> bool {
        matches!(self.mode, DataMode::Conditional { .. })
    }

    /// Re-labels a generative dataset as conditional with the given observed set.
    pub fn with_observed(&self, space: &VariableSpace, observed: &[usize]) -> Result<Dataset> {
        let mut obs = observed.to_vec();
        obs.sort_unstable();
        obs.dedup();
        let target: Vec<usize> = (0..space.len()).filter(|v| !obs.contains(v)).collect();
        Dataset::new(space, DataMode::Conditional { observed: obs, target }, self.instances.clone())
    }
}

/// Pooled empirical feature expectations of a generative dataset:
/// the per-instance feature sums over all clusters, averaged over instances.
pub fn empirical_expectations(model: &Model, data: &Dataset) -> Result<Vec<f64>> {
    if data.is_conditional() {
        return Err(Error::Invalid {
            what: "dataset mode",
            detail: "empirical expectations pool over full assignments; got conditional data".into(),
        });
    }
    let counts = assignment_counts(model, data);
    let mut acc = vec![0.0; model.num_features()];
    for ci in 0..model.num_clusters() {
        for (idx, &count) in counts[ci].iter().enumerate() {
            if count == 0 {
                continue;
            }
            for &(f, v) in &model.features().rows(ci)[idx] {
                acc[f] += count as f64 * v;
            }
        }
    }
    let m = data.len() as f64;
    for a in &mut acc {
        *a /= m;
    }
    Ok(acc)
}

/// Per-cluster assignment counts over a dataset's full assignments.
pub(crate) fn assignment_counts(model: &Model, data: &Dataset) -> Vec<Vec<u64>> {
    let mut counts: Vec<Vec<u64>> = (0..model.num_clusters()).map(|ci| vec![0u64; model.table_size(ci)]).collect();
    for inst in data.instances() {
        for ci in 0..model.num_clusters() {
            counts[ci][model.shape(ci).restrict_full(inst)] += 1;
        }
    }
    counts
}

/// Per-cluster empirical marginals with `pseudo` added to every cell count
/// before normalizing. `pseudo = 0` gives the raw relative frequencies.
pub fn empirical_cluster_marginals(model: &Model, data: &Dataset, pseudo: f64) -> Vec<Vec<f64>> {
    let counts = assignment_counts(model, data);
    let m = data.len() as f64;
    counts
        .iter()
        .map(|table| {
            let total = m + pseudo * table.len() as f64;
            table.iter().map(|&c| (c as f64 + pseudo) / total).collect()
        })
        .collect()
}
