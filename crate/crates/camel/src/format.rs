//! Versioned text formats for models, datasets, and trained parameters.
//!
//! Model and parameter files share one lexical shape: UTF-8 lines, `#`
//! comments, a required leading `format: 1` line, unindented `name:` section
//! headers, items opened by `  - key: value` and continued by four-space
//! `key: value` fields, arrays written `[a, b]`. Data files carry one
//! instance per line as whitespace-separated `var=state` pairs, preceded by
//! `observed:`/`target:` role headers when the data is conditional.
//!
//! Scopes and sepsets are written as variable names in ascending index
//! order, and parsers reject any other order, since assignment enumeration
//! is defined by it. Floats print through `{}`, the shortest decimal that
//! parses back to identical bits, so serialize-parse cycles are exact.

use std::fmt::Write as _;

use crate::dual::{DualParams, Linearization, TrainProblem};
use crate::error::{Error, Result};
use crate::model::{
    Cluster, ClusterGraph, DataMode, Dataset, EdgeSpec, FeatureEntry, Model, Variable, VariableSpace,
};

pub const FORMAT_VERSION: u32 = 1;

fn syntax(line: usize, message: impl Into<String>) -> Error {
    Error::Syntax { line, message: message.into() }
}

fn strip_comment(raw: &str) -> &str {
    match raw.find('#') {
        Some(i) => &raw[..i],
        None => raw,
    }
}

/// Names are bare tokens in arrays and `var=state` pairs, so they must avoid
/// the structural characters.
fn valid_name(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace() || matches!(c, ':' | ',' | '[' | ']' | '#' | '=' | '*'))
}

fn split_kv(s: &str, line: usize) -> Result<(&str, &str)> {
    let (k, v) = s.split_once(':').ok_or_else(|| syntax(line, "expected `key: value`"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(syntax(line, "empty key"));
    }
    Ok((k, v.trim()))
}

fn parse_array(s: &str, line: usize) -> Result<Vec<&str>> {
    let inner = s
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or_else(|| syntax(line, "expected `[a, b, ...]`"))?
        .trim();
    if inner.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for part in inner.split(',') {
        let p = part.trim();
        if p.is_empty() {
            return Err(syntax(line, "empty array element"));
        }
        out.push(p);
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
    s.parse::<T>().map_err(|_| syntax(line, format!("cannot parse `{s}` as {what}")))
}

#[derive(Debug)]
struct Item {
    line: usize,
    fields: Vec<(String, String, usize)>,
}

impl Item {
    fn get(&self, key: &str) -> Result<Option<(&str, usize)>> {
        let mut found = None;
        for (k, v, line) in &self.fields {
            if k == key {
                if found.is_some() {
                    return Err(syntax(*line, format!("duplicate field `{key}`")));
                }
                found = Some((v.as_str(), *line));
            }
        }
        Ok(found)
    }

    fn require(&self, key: &str) -> Result<(&str, usize)> {
        self.get(key)?.ok_or_else(|| syntax(self.line, format!("missing field `{key}`")))
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for (k, _, line) in &self.fields {
            if !allowed.contains(&k.as_str()) {
                return Err(syntax(*line, format!("unknown field `{k}`")));
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
enum Node {
    KeyValue { line: usize, key: String, value: String },
    Section { line: usize, name: String, items: Vec<Item> },
}

fn parse_nodes(text: &str) -> Result<Vec<Node>> {
    let mut nodes: Vec<Node> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = strip_comment(raw).trim_end();
        if s.trim().is_empty() {
            continue;
        }
        let body = s.trim_start();
        let indent = s.len() - body.len();
        if indent == 0 {
            let (key, value) = split_kv(body, line)?;
            if value.is_empty() {
                nodes.push(Node::Section { line, name: key.to_string(), items: Vec::new() });
            } else {
                nodes.push(Node::KeyValue { line, key: key.to_string(), value: value.to_string() });
            }
        } else if indent == 2 && body.starts_with("- ") {
            let (key, value) = split_kv(&body[2..], line)?;
            match nodes.last_mut() {
                Some(Node::Section { items, .. }) => {
                    items.push(Item { line, fields: vec![(key.to_string(), value.to_string(), line)] })
                }
                _ => return Err(syntax(line, "list item outside any section")),
            }
        } else if indent == 4 {
            let (key, value) = split_kv(body, line)?;
            match nodes.last_mut() {
                Some(Node::Section { items, .. }) if !items.is_empty() => {
                    items.last_mut().unwrap().fields.push((key.to_string(), value.to_string(), line))
                }
                _ => return Err(syntax(line, "field outside any list item")),
            }
        } else {
            return Err(syntax(line, "unexpected indentation"));
        }
    }
    Ok(nodes)
}

/// Splits off and checks the leading `format: 1` node.
fn expect_format(nodes: Vec<Node>) -> Result<Vec<Node>> {
    let mut it = nodes.into_iter();
    match it.next() {
        Some(Node::KeyValue { line, key, value }) if key == "format" => {
            let v: u32 = parse_num(&value, line, "a format version")?;
            if v != FORMAT_VERSION {
                return Err(syntax(line, format!("unsupported format version {v}")));
            }
        }
        Some(Node::KeyValue { line, .. }) | Some(Node::Section { line, .. }) => {
            return Err(syntax(line, "file must start with `format: 1`"));
        }
        None => return Err(syntax(1, "file must start with `format: 1`")),
    }
    Ok(it.collect())
}

fn resolve_vars(space: &VariableSpace, names: &[&str], line: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(names.len());
    for &n in names {
        let idx = space
            .index_of(n)
            .ok_or_else(|| Error::Unknown { line, what: "variable", name: n.to_string() })?;
        out.push(idx);
    }
    if !out.windows(2).all(|w| w[0] < w[1]) {
        return Err(syntax(line, "variables must be listed in ascending index order, without repeats"));
    }
    Ok(out)
}

pub fn parse_model(text: &str) -> Result<Model> {
    let nodes = expect_format(parse_nodes(text)?)?;
    let mut sections: [Option<Vec<Item>>; 4] = [None, None, None, None];
    const NAMES: [&str; 4] = ["variables", "clusters", "edges", "features"];
    for node in nodes {
        match node {
            Node::Section { line, name, items } => {
                let slot = NAMES
                    .iter()
                    .position(|&n| n == name)
                    .ok_or_else(|| Error::Unknown { line, what: "section", name: name.clone() })?;
                if sections[slot].is_some() {
                    return Err(Error::Duplicate { line, what: "section", name });
                }
                sections[slot] = Some(items);
            }
            Node::KeyValue { line, key, .. } => {
                return Err(syntax(line, format!("unexpected entry `{key}` in a model file")))
            }
        }
    }
    let [vars_s, clusters_s, edges_s, features_s] = sections;

    let mut vars = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for item in vars_s.ok_or_else(|| Error::Structure("model file has no `variables` section".into()))? {
        item.check_keys(&["name", "card"])?;
        let (name, nline) = item.require("name")?;
        if !valid_name(name) {
            return Err(syntax(nline, format!("invalid variable name `{name}`")));
        }
        if !seen.insert(name.to_string()) {
            return Err(Error::Duplicate { line: nline, what: "variable", name: name.to_string() });
        }
        let (card, cline) = item.require("card")?;
        vars.push(Variable { name: name.to_string(), card: parse_num(card, cline, "a cardinality")? });
    }
    let space = VariableSpace::new(vars)?;

    let mut clusters = Vec::new();
    let mut ids = std::collections::BTreeSet::new();
    for item in clusters_s.ok_or_else(|| Error::Structure("model file has no `clusters` section".into()))? {
        item.check_keys(&["id", "scope"])?;
        let (id, iline) = item.require("id")?;
        let id: u32 = parse_num(id, iline, "a cluster id")?;
        if !ids.insert(id) {
            return Err(Error::Duplicate { line: iline, what: "cluster id", name: id.to_string() });
        }
        let (scope, sline) = item.require("scope")?;
        let scope = resolve_vars(&space, &parse_array(scope, sline)?, sline)?;
        clusters.push(Cluster { id, scope });
    }

    let mut edges = Vec::new();
    for item in edges_s.unwrap_or_default() {
        item.check_keys(&["source", "target", "sepset"])?;
        let (src, sl) = item.require("source")?;
        let (tgt, tl) = item.require("target")?;
        let source: u32 = parse_num(src, sl, "a cluster id")?;
        let target: u32 = parse_num(tgt, tl, "a cluster id")?;
        for (id, line) in [(source, sl), (target, tl)] {
            if !ids.contains(&id) {
                return Err(Error::Unknown { line, what: "cluster id", name: id.to_string() });
            }
        }
        let (sep, pline) = item.require("sepset")?;
        let sepset = resolve_vars(&space, &parse_array(sep, pline)?, pline)?;
        edges.push(EdgeSpec { source, target, sepset });
    }

    let mut entries = Vec::new();
    for item in features_s.unwrap_or_default() {
        item.check_keys(&["id", "cluster", "pattern", "value"])?;
        let (fname, fline) = item.require("id")?;
        if !valid_name(fname) {
            return Err(syntax(fline, format!("invalid feature name `{fname}`")));
        }
        let (cid, cline) = item.require("cluster")?;
        let cluster: u32 = parse_num(cid, cline, "a cluster id")?;
        if !ids.contains(&cluster) {
            return Err(Error::Unknown { line: cline, what: "cluster id", name: cluster.to_string() });
        }
        let (pat, pline) = item.require("pattern")?;
        let pattern = parse_array(pat, pline)?
            .iter()
            .map(|&p| if p == "*" { Ok(None) } else { parse_num(p, pline, "a state index").map(Some) })
            .collect::<Result<Vec<_>>>()?;
        let (val, vline) = item.require("value")?;
        entries.push(FeatureEntry {
            feature: fname.to_string(),
            cluster,
            pattern,
            value: parse_num(val, vline, "a number")?,
        });
    }

    Model::new(space, ClusterGraph::new(clusters, edges)?, &entries)
}

pub fn serialize_model(model: &Model) -> Result<String> {
    let space = model.space();
    for v in space.vars() {
        if !valid_name(&v.name) {
            return Err(Error::Invalid { what: "variable name", detail: format!("`{}` is not serializable", v.name) });
        }
    }
    for n in model.features().names() {
        if !valid_name(n) {
            return Err(Error::Invalid { what: "feature name", detail: format!("`{n}` is not serializable") });
        }
    }
    let name_list = |vars: &[usize]| vars.iter().map(|&v| space.name(v)).collect::<Vec<_>>().join(", ");

    let mut out = String::from("format: 1\n");
    out.push_str("variables:\n");
    for v in space.vars() {
        let _ = writeln!(out, "  - name: {}\n    card: {}", v.name, v.card);
    }
    out.push_str("clusters:\n");
    for c in &model.graph().clusters {
        let _ = writeln!(out, "  - id: {}\n    scope: [{}]", c.id, name_list(&c.scope));
    }
    if !model.graph().edges.is_empty() {
        out.push_str("edges:\n");
        for e in &model.graph().edges {
            let _ = writeln!(
                out,
                "  - source: {}\n    target: {}\n    sepset: [{}]",
                e.source,
                e.target,
                name_list(&e.sepset)
            );
        }
    }
    if !model.features().is_empty() {
        // group compiled rows by feature so names re-register in index order
        let mut per_feature: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); model.num_features()];
        for ci in 0..model.num_clusters() {
            for (a, row) in model.features().rows(ci).iter().enumerate() {
                for &(f, v) in row {
                    per_feature[f].push((ci, a, v));
                }
            }
        }
        out.push_str("features:\n");
        for (f, hits) in per_feature.iter().enumerate() {
            let name = &model.features().names()[f];
            for &(ci, a, v) in hits {
                let states = model
                    .shape(ci)
                    .decode(a)
                    .iter()
                    .map(|s| s.to_string())
                    .collect::<Vec<_>>()
                    .join(", ");
                let _ = writeln!(
                    out,
                    "  - id: {}\n    cluster: {}\n    pattern: [{}]\n    value: {}",
                    name,
                    model.graph().clusters[ci].id,
                    states,
                    v
                );
            }
        }
    }
    Ok(out)
}

pub fn parse_data(text: &str, space: &VariableSpace) -> Result<Dataset> {
    let mut saw_format = false;
    let mut roles: [Option<(Vec<usize>, usize)>; 2] = [None, None];
    let mut instances = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = strip_comment(raw).trim();
        if s.is_empty() {
            continue;
        }
        if !saw_format {
            let (k, v) = split_kv(s, line)?;
            if k != "format" {
                return Err(syntax(line, "file must start with `format: 1`"));
            }
            let v: u32 = parse_num(v, line, "a format version")?;
            if v != FORMAT_VERSION {
                return Err(syntax(line, format!("unsupported format version {v}")));
            }
            saw_format = true;
            continue;
        }
        let role = match s.split_once(':') {
            Some(("observed", rest)) => Some((0, rest.trim())),
            Some(("target", rest)) => Some((1, rest.trim())),
            _ => None,
        };
        if let Some((slot, rest)) = role {
            if !instances.is_empty() {
                return Err(syntax(line, "role header after the first instance"));
            }
            if roles[slot].is_some() {
                let name = if slot == 0 { "observed" } else { "target" };
                return Err(Error::Duplicate { line, what: "role header", name: name.to_string() });
            }
            let mut vars = Vec::new();
            for n in parse_array(rest, line)? {
                let idx = space
                    .index_of(n)
                    .ok_or_else(|| Error::Unknown { line, what: "variable", name: n.to_string() })?;
                vars.push(idx);
            }
            vars.sort_unstable();
            if vars.windows(2).any(|w| w[0] == w[1]) {
                return Err(syntax(line, "repeated variable in role header"));
            }
            roles[slot] = Some((vars, line));
            continue;
        }
        let mut states: Vec<Option<usize>> = vec![None; space.len()];
        for tok in s.split_whitespace() {
            let (name, st) =
                tok.split_once('=').ok_or_else(|| syntax(line, format!("expected `var=state`, got `{tok}`")))?;
            let v = space
                .index_of(name)
                .ok_or_else(|| Error::Unknown { line, what: "variable", name: name.to_string() })?;
            if states[v].is_some() {
                return Err(Error::Duplicate { line, what: "variable", name: name.to_string() });
            }
            let st: usize = parse_num(st, line, "a state index")?;
            if st >= space.card(v) {
                return Err(Error::OutOfRange {
                    line,
                    what: "state index",
                    detail: format!("variable `{}` has cardinality {}", name, space.card(v)),
                });
            }
            states[v] = Some(st);
        }
        let mut inst = Vec::with_capacity(space.len());
        for (v, st) in states.into_iter().enumerate() {
            match st {
                Some(s) => inst.push(s),
                None => {
                    return Err(syntax(line, format!("instance does not assign variable `{}`", space.name(v))))
                }
            }
        }
        instances.push(inst);
    }
    if !saw_format {
        return Err(syntax(1, "file must start with `format: 1`"));
    }
    let [observed, target] = roles;
    let mode = match (observed, target) {
        (None, None) => DataMode::Generative,
        (Some((observed, _)), Some((target, _))) => DataMode::Conditional { observed, target },
        (Some((_, line)), None) | (None, Some((_, line))) => {
            return Err(syntax(line, "conditional data needs both `observed` and `target` headers"))
        }
    };
    Dataset::new(space, mode, instances)
}

pub fn serialize_data(space: &VariableSpace, data: &Dataset) -> Result<String> {
    for v in space.vars() {
        if !valid_name(&v.name) {
            return Err(Error::Invalid { what: "variable name", detail: format!("`{}` is not serializable", v.name) });
        }
    }
    let name_list = |vars: &[usize]| {
        let mut sorted = vars.to_vec();
        sorted.sort_unstable();
        sorted.iter().map(|&v| space.name(v)).collect::<Vec<_>>().join(", ")
    };
    let mut out = String::from("format: 1\n");
    if let DataMode::Conditional { observed, target } = data.mode() {
        let _ = writeln!(out, "observed: [{}]", name_list(observed));
        let _ = writeln!(out, "target: [{}]", name_list(target));
    }
    for inst in data.instances() {
        let line = inst
            .iter()
            .enumerate()
            .map(|(v, s)| format!("{}={}", space.name(v), s))
            .collect::<Vec<_>>()
            .join(" ");
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

/// Multiplier values for one (context, edge) pair, indexed by sepset
/// assignment of that context's view.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaBlock {
    pub context: usize,
    pub source: u32,
    pub target: u32,
    pub values: Vec<f64>,
}

/// Linearization offsets for one (context, cluster) pair, indexed by cluster
/// assignment of that context's view.
#[derive(Debug, Clone, PartialEq)]
pub struct LinBlock {
    pub context: usize,
    pub cluster: u32,
    pub values: Vec<f64>,
}

/// Trained parameters as stored on disk. Weights are keyed by feature name;
/// block shapes are validated against a concrete training problem only when
/// resolved, since conditional views change table sizes per context.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamsFile {
    pub method: String,
    pub mode: String,
    pub weights: Vec<(String, f64)>,
    pub deltas: Option<Vec<DeltaBlock>>,
    pub linearization: Option<Vec<LinBlock>>,
}

impl ParamsFile {
    pub fn from_training(
        model: &Model,
        method: &str,
        mode: &DataMode,
        params: &DualParams,
        lin: Option<&Linearization>,
    ) -> ParamsFile {
        let weights = model
            .features()
            .names()
            .iter()
            .zip(&params.weights)
            .map(|(n, &w)| (n.clone(), w))
            .collect();
        let edge_ids =
            |e: usize| -> (u32, u32) { let s = &model.graph().edges[e]; (s.source, s.target) };
        let deltas = params.multipliers.as_ref().map(|m| {
            m.iter()
                .enumerate()
                .flat_map(|(ctx, per_edge)| {
                    per_edge.iter().enumerate().map(move |(e, values)| {
                        let (source, target) = edge_ids(e);
                        DeltaBlock { context: ctx, source, target, values: values.clone() }
                    })
                })
                .collect()
        });
        let linearization = lin.map(|l| {
            l.offsets
                .iter()
                .enumerate()
                .flat_map(|(ctx, per_cluster)| {
                    per_cluster.iter().enumerate().map(move |(ci, values)| LinBlock {
                        context: ctx,
                        cluster: model.graph().clusters[ci].id,
                        values: values.clone(),
                    })
                })
                .collect()
        });
        ParamsFile {
            method: method.to_string(),
            mode: mode_name(mode).to_string(),
            weights,
            deltas,
            linearization,
        }
    }

    /// Weight vector alone, for consumers without a training problem.
    /// Absent features keep weight zero.
    pub fn resolve_weights(&self, model: &Model) -> Result<Vec<f64>> {
        let mut weights = vec![0.0; model.num_features()];
        let mut seen = vec![false; model.num_features()];
        for (name, w) in &self.weights {
            let idx = model.features().index_of(name).ok_or_else(|| Error::Invalid {
                what: "params",
                detail: format!("unknown feature `{name}`"),
            })?;
            if seen[idx] {
                return Err(Error::Invalid { what: "params", detail: format!("feature `{name}` listed twice") });
            }
            seen[idx] = true;
            weights[idx] = *w;
        }
        Ok(weights)
    }

    /// Maps names and ids back onto a training problem, validating every
    /// block against the context views. Absent blocks stay zero; absent
    /// features keep weight zero.
    pub fn resolve(&self, problem: &TrainProblem) -> Result<(DualParams, Linearization)> {
        let model = problem.model();
        let weights = self.resolve_weights(model)?;

        let edge_index = |source: u32, target: u32| -> Result<usize> {
            model
                .graph()
                .edges
                .iter()
                .position(|e| e.source == source && e.target == target)
                .ok_or_else(|| Error::Invalid {
                    what: "params",
                    detail: format!("no edge {source} -> {target} in the model"),
                })
        };
        let check_context = |ctx: usize| -> Result<()> {
            if ctx >= problem.num_contexts() {
                return Err(Error::Invalid {
                    what: "params",
                    detail: format!("context {ctx} out of range ({} contexts)", problem.num_contexts()),
                });
            }
            Ok(())
        };

        let multipliers = match &self.deltas {
            None => None,
            Some(blocks) => {
                let mut m = match DualParams::zeros(problem, true).multipliers {
                    Some(m) => m,
                    None => unreachable!(),
                };
                let mut filled = vec![vec![false; model.num_edges()]; problem.num_contexts()];
                for b in blocks {
                    check_context(b.context)?;
                    let e = edge_index(b.source, b.target)?;
                    if filled[b.context][e] {
                        return Err(Error::Invalid {
                            what: "params",
                            detail: format!("duplicate multiplier block for context {} edge {} -> {}", b.context, b.source, b.target),
                        });
                    }
                    filled[b.context][e] = true;
                    if b.values.len() != m[b.context][e].len() {
                        return Err(Error::Invalid {
                            what: "params",
                            detail: format!(
                                "multiplier block for context {} edge {} -> {} has {} values, expected {}",
                                b.context,
                                b.source,
                                b.target,
                                b.values.len(),
                                m[b.context][e].len()
                            ),
                        });
                    }
                    m[b.context][e].copy_from_slice(&b.values);
                }
                Some(m)
            }
        };

        let mut lin = Linearization::zeros(problem);
        if let Some(blocks) = &self.linearization {
            let mut filled = vec![vec![false; model.num_clusters()]; problem.num_contexts()];
            for b in blocks {
                check_context(b.context)?;
                let ci = model.graph().cluster_index(b.cluster).ok_or_else(|| Error::Invalid {
                    what: "params",
                    detail: format!("no cluster {} in the model", b.cluster),
                })?;
                if filled[b.context][ci] {
                    return Err(Error::Invalid {
                        what: "params",
                        detail: format!("duplicate linearization block for context {} cluster {}", b.context, b.cluster),
                    });
                }
                filled[b.context][ci] = true;
                if b.values.len() != lin.offsets[b.context][ci].len() {
                    return Err(Error::Invalid {
                        what: "params",
                        detail: format!(
                            "linearization block for context {} cluster {} has {} values, expected {}",
                            b.context,
                            b.cluster,
                            b.values.len(),
                            lin.offsets[b.context][ci].len()
                        ),
                    });
                }
                lin.offsets[b.context][ci].copy_from_slice(&b.values);
            }
        }

        Ok((DualParams { weights, multipliers }, lin))
    }
}

pub fn mode_name(mode: &DataMode) -> &'static str {
    match mode {
        DataMode::Generative => "generative",
        DataMode::Conditional { .. } => "conditional",
    }
}

pub fn parse_params(text: &str) -> Result<ParamsFile> {
    let nodes = expect_format(parse_nodes(text)?)?;
    let mut method: Option<String> = None;
    let mut mode: Option<String> = None;
    let mut weights: Option<Vec<(String, f64)>> = None;
    let mut deltas: Option<Vec<DeltaBlock>> = None;
    let mut linearization: Option<Vec<LinBlock>> = None;
    for node in nodes {
        match node {
            Node::KeyValue { line, key, value } => match key.as_str() {
                "method" => {
                    if method.replace(value).is_some() {
                        return Err(Error::Duplicate { line, what: "entry", name: key });
                    }
                }
                "mode" => {
                    if !matches!(value.as_str(), "generative" | "conditional") {
                        return Err(syntax(line, format!("mode must be generative or conditional, got `{value}`")));
                    }
                    if mode.replace(value).is_some() {
                        return Err(Error::Duplicate { line, what: "entry", name: key });
                    }
                }
                _ => return Err(Error::Unknown { line, what: "entry", name: key }),
            },
            Node::Section { line, name, items } => match name.as_str() {
                "weights" => {
                    if weights.is_some() {
                        return Err(Error::Duplicate { line, what: "section", name });
                    }
                    let mut ws = Vec::new();
                    for item in items {
                        item.check_keys(&["feature", "value"])?;
                        let (f, fl) = item.require("feature")?;
                        if !valid_name(f) {
                            return Err(syntax(fl, format!("invalid feature name `{f}`")));
                        }
                        let (v, vl) = item.require("value")?;
                        ws.push((f.to_string(), parse_num(v, vl, "a number")?));
                    }
                    weights = Some(ws);
                }
                "deltas" => {
                    if deltas.is_some() {
                        return Err(Error::Duplicate { line, what: "section", name });
                    }
                    let mut blocks = Vec::new();
                    for item in items {
                        item.check_keys(&["context", "source", "target", "values"])?;
                        let (c, cl) = item.require("context")?;
                        let (s, sl) = item.require("source")?;
                        let (t, tl) = item.require("target")?;
                        let (vals, vl) = item.require("values")?;
                        blocks.push(DeltaBlock {
                            context: parse_num(c, cl, "a context index")?,
                            source: parse_num(s, sl, "a cluster id")?,
                            target: parse_num(t, tl, "a cluster id")?,
                            values: parse_array(vals, vl)?
                                .iter()
                                .map(|v| parse_num(v, vl, "a number"))
                                .collect::<Result<_>>()?,
                        });
                    }
                    deltas = Some(blocks);
                }
                "linearization" => {
                    if linearization.is_some() {
                        return Err(Error::Duplicate { line, what: "section", name });
                    }
                    let mut blocks = Vec::new();
                    for item in items {
                        item.check_keys(&["context", "cluster", "values"])?;
                        let (c, cl) = item.require("context")?;
                        let (cid, il) = item.require("cluster")?;
                        let (vals, vl) = item.require("values")?;
                        blocks.push(LinBlock {
                            context: parse_num(c, cl, "a context index")?,
                            cluster: parse_num(cid, il, "a cluster id")?,
                            values: parse_array(vals, vl)?
                                .iter()
                                .map(|v| parse_num(v, vl, "a number"))
                                .collect::<Result<_>>()?,
                        });
                    }
                    linearization = Some(blocks);
                }
                _ => return Err(Error::Unknown { line, what: "section", name }),
            },
        }
    }
    Ok(ParamsFile {
        method: method.ok_or_else(|| Error::Structure("params file has no `method` entry".into()))?,
        mode: mode.ok_or_else(|| Error::Structure("params file has no `mode` entry".into()))?,
        weights: weights.ok_or_else(|| Error::Structure("params file has no `weights` section".into()))?,
        deltas,
        linearization,
    })
}

pub fn serialize_params(params: &ParamsFile) -> Result<String> {
    for (name, _) in &params.weights {
        if !valid_name(name) {
            return Err(Error::Invalid { what: "feature name", detail: format!("`{name}` is not serializable") });
        }
    }
    let join = |vals: &[f64]| vals.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ");
    let mut out = String::from("format: 1\n");
    let _ = writeln!(out, "method: {}", params.method);
    let _ = writeln!(out, "mode: {}", params.mode);
    out.push_str("weights:\n");
    for (name, w) in &params.weights {
        let _ = writeln!(out, "  - feature: {}\n    value: {}", name, w);
    }
    if let Some(blocks) = &params.deltas {
        out.push_str("deltas:\n");
        for b in blocks {
            let _ = writeln!(
                out,
                "  - context: {}\n    source: {}\n    target: {}\n    values: [{}]",
                b.context,
                b.source,
                b.target,
                join(&b.values)
            );
        }
    }
    if let Some(blocks) = &params.linearization {
        out.push_str("linearization:\n");
        for b in blocks {
            let _ = writeln!(
                out,
                "  - context: {}\n    cluster: {}\n    values: [{}]",
                b.context,
                b.cluster,
                join(&b.values)
            );
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::{camel0_train, SolverConfig};
    use crate::synth::{self, GenKind, Tying};

    #[test]
    fn model_round_trip_is_exact() {
        for model in [
            synth::abc_model(),
            synth::gen_model(GenKind::Chain, 4, 3, Tying::FullTableUntied, 0).unwrap(),
            synth::gen_model(GenKind::Grid, 3, 2, Tying::PairwiseTied, 0).unwrap(),
        ] {
            let text = serialize_model(&model).unwrap();
            let back = parse_model(&text).unwrap();
            assert_eq!(back, model);
            // and a second cycle is byte-stable
            assert_eq!(serialize_model(&back).unwrap(), text);
        }
    }

    #[test]
    fn wildcard_patterns_expand_over_matching_assignments() {
        let text = "\
format: 1
variables:
  - name: A
    card: 2
  - name: B
    card: 3
clusters:
  - id: 0
    scope: [A, B]
features:
  - id: all
    cluster: 0
    pattern: [*, *]
    value: 0.5
  - id: b2
    cluster: 0
    pattern: [*, 2]
    value: 1
";
        let m = parse_model(text).unwrap();
        assert_eq!(m.num_features(), 2);
        let w = [1.0, 0.0];
        for a in 0..m.table_size(0) {
            assert!((m.log_score(0, a, &w) - 0.5).abs() < 1e-15);
        }
        let w2 = [0.0, 1.0];
        let hits: Vec<usize> = (0..6).filter(|&a| m.log_score(0, a, &w2) > 0.5).collect();
        assert_eq!(hits, vec![2, 5]);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "\
# header comment
format: 1

variables:
  - name: A   # trailing comment
    card: 2
clusters:
  - id: 7
    scope: [A]
";
        let m = parse_model(text).unwrap();
        assert_eq!(m.num_clusters(), 1);
        assert_eq!(m.graph().clusters[0].id, 7);
    }

    #[test]
    fn model_errors_carry_line_numbers() {
        let missing = parse_model("variables:\n");
        assert_eq!(missing.unwrap_err().line(), Some(1));

        let bad_scope = "\
format: 1
variables:
  - name: A
    card: 2
clusters:
  - id: 0
    scope: [Q]
";
        match parse_model(bad_scope).unwrap_err() {
            Error::Unknown { line, what, name } => {
                assert_eq!((line, what, name.as_str()), (7, "variable", "Q"));
            }
            e => panic!("unexpected error {e}"),
        }

        let unordered = "\
format: 1
variables:
  - name: A
    card: 2
  - name: B
    card: 2
clusters:
  - id: 0
    scope: [B, A]
";
        assert_eq!(parse_model(unordered).unwrap_err().line(), Some(9));

        let stray_field = "\
format: 1
variables:
  - name: A
    card: 2
    color: red
clusters:
  - id: 0
    scope: [A]
";
        assert_eq!(parse_model(stray_field).unwrap_err().line(), Some(5));
    }

    #[test]
    fn data_round_trip_generative_and_conditional() {
        let model = synth::gen_model(GenKind::Chain, 3, 2, Tying::FullTableUntied, 0).unwrap();
        let w = synth::random_weights(model.num_features(), 1.0, 3);
        let data = synth::gen_data(&model, &w, 25, 5).unwrap();
        let text = serialize_data(model.space(), &data).unwrap();
        let back = parse_data(&text, model.space()).unwrap();
        assert_eq!(back, data);

        let cond = data.with_observed(model.space(), &[1]).unwrap();
        let text = serialize_data(model.space(), &cond).unwrap();
        let back = parse_data(&text, model.space()).unwrap();
        assert_eq!(back, cond);
        assert_eq!(serialize_data(model.space(), &back).unwrap(), text);
    }

    #[test]
    fn data_parser_rejects_malformed_instances() {
        let model = synth::abc_model();
        let sp = model.space();
        let ok = "format: 1\nA=0 B=1 C=0\n";
        assert_eq!(parse_data(ok, sp).unwrap().len(), 1);

        for (text, line) in [
            ("format: 1\nA=0 B=1\n", 2),                   // missing variable
            ("format: 1\nA=0 B=1 C=0 A=1\n", 2),           // duplicate
            ("format: 1\nA=0 B=1 C=9\n", 2),               // state out of range
            ("format: 1\nA=0 B=1 D=0\n", 2),               // unknown variable
            ("format: 1\nA=0 B=1 C\n", 2),                 // no `=`
            ("A=0 B=1 C=0\n", 1),                          // missing format line
            ("format: 1\nA=0 B=1 C=0\nobserved: [A]\n", 3), // late header
            ("format: 1\nobserved: [A]\nA=0 B=1 C=0\n", 2), // observed without target
        ] {
            let err = parse_data(text, sp).unwrap_err();
            assert_eq!(err.line(), Some(line), "for {text:?} got {err}");
        }
    }

    #[test]
    fn params_round_trip_with_multipliers_and_offsets() {
        let model = synth::gen_model(GenKind::Loop, 3, 2, Tying::PairwiseTied, 0).unwrap();
        let w = synth::random_weights(model.num_features(), 1.0, 11);
        let data = synth::gen_data(&model, &w, 30, 13).unwrap();
        let problem = TrainProblem::new(&model, &data).unwrap();
        let out = camel0_train(&problem, &SolverConfig::default()).unwrap();
        let lin = Linearization::zeros(&problem);

        let pf = ParamsFile::from_training(&model, "camel0", data.mode(), &out.solution.params, Some(&lin));
        let text = serialize_params(&pf).unwrap();
        let back = parse_params(&text).unwrap();
        assert_eq!(back, pf);

        let (params, lin2) = back.resolve(&problem).unwrap();
        assert_eq!(params.weights, out.solution.params.weights);
        assert_eq!(params.multipliers, out.solution.params.multipliers);
        assert_eq!(lin2.offsets, lin.offsets);
    }

    #[test]
    fn params_resolution_validates_blocks() {
        let model = synth::abc_model();
        let data = synth::abc_dataset(model.space());
        let problem = TrainProblem::new(&model, &data).unwrap();

        let base = ParamsFile {
            method: "camel0".into(),
            mode: "generative".into(),
            weights: vec![("f00".into(), 1.0)],
            deltas: None,
            linearization: None,
        };
        let (p, _) = base.resolve(&problem).unwrap();
        assert_eq!(p.weights, vec![1.0, 0.0]);
        assert!(p.multipliers.is_none());

        let bad_feature = ParamsFile { weights: vec![("nope".into(), 1.0)], ..base.clone() };
        assert!(bad_feature.resolve(&problem).is_err());

        let bad_edge = ParamsFile {
            deltas: Some(vec![DeltaBlock { context: 0, source: 2, target: 1, values: vec![0.0, 0.0] }]),
            ..base.clone()
        };
        assert!(bad_edge.resolve(&problem).is_err());

        let bad_len = ParamsFile {
            deltas: Some(vec![DeltaBlock { context: 0, source: 1, target: 2, values: vec![0.0] }]),
            ..base.clone()
        };
        assert!(bad_len.resolve(&problem).is_err());

        let bad_ctx = ParamsFile {
            linearization: Some(vec![LinBlock { context: 3, cluster: 1, values: vec![0.0; 4] }]),
            ..base.clone()
        };
        assert!(bad_ctx.resolve(&problem).is_err());

        let dup = ParamsFile {
            deltas: Some(vec![
                DeltaBlock { context: 0, source: 1, target: 2, values: vec![0.0, 0.0] },
                DeltaBlock { context: 0, source: 1, target: 2, values: vec![0.0, 0.0] },
            ]),
            ..base.clone()
        };
        assert!(dup.resolve(&problem).is_err());
    }

    #[test]
    fn floats_survive_the_round_trip_bitwise() {
        let values = [0.1, -1.0 / 3.0, 1e-300, -2.5e300, 13.0 / 20.0, f64::MIN_POSITIVE];
        let pf = ParamsFile {
            method: "piecewise".into(),
            mode: "generative".into(),
            weights: values.iter().enumerate().map(|(i, &v)| (format!("w{i}"), v)).collect(),
            deltas: None,
            linearization: None,
        };
        let back = parse_params(&serialize_params(&pf).unwrap()).unwrap();
        for ((_, a), &b) in back.weights.iter().zip(&values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn params_file_is_stable_under_reserialization() {
        let pf = ParamsFile {
            method: "cccp".into(),
            mode: "conditional".into(),
            weights: vec![("a".into(), 1.5), ("b".into(), -0.25)],
            deltas: Some(vec![DeltaBlock { context: 1, source: 0, target: 2, values: vec![0.125, -3.0] }]),
            linearization: Some(vec![LinBlock { context: 0, cluster: 2, values: vec![-0.3068528194400547] }]),
        };
        let t1 = serialize_params(&pf).unwrap();
        let t2 = serialize_params(&parse_params(&t1).unwrap()).unwrap();
        assert_eq!(t1, t2);
    }
}
