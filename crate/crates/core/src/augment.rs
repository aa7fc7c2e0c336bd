//! Graph view generators used by the contrastive objectives.
//!
//! All functions are pure in `(graph, parameters, seed)`.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::CsrMatrix;
use crate::error::{Error, Result};
use crate::graph::{sym_norm_adj, Graph};
use crate::seed;

/// Largest graph for which diffusion uses an exact dense solve.
pub const DENSE_DIFFUSION_MAX_N: usize = 4000;
/// Truncation tolerance of the series expansion used above that size.
pub const DIFFUSION_TOL: f64 = 1e-6;
/// Restart probability of the subgraph random walk.
pub const WALK_RESTART: f64 = 0.2;

pub const DEFAULT_ALPHA: f64 = 0.2;
pub const DEFAULT_TOP_K: usize = 64;

fn check_prob(p: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Augment(format!("{what} = {p} is not a probability")))
    }
}

/// Removes each undirected edge independently with probability `p`.
pub fn drop_edges(g: &Graph, p: f64, seed: u64) -> Result<Graph> {
    check_prob(p, "drop_edges p")?;
    let mut rng = seed::rng(seed);
    let kept: Vec<(usize, usize)> = g.edges().filter(|_| !rng.random_bool(p)).collect();
    Ok(g.with_edges(kept))
}

/// Like [`drop_edges`] with a separate drop probability per edge, in `g.edges()` order.
pub fn drop_edges_weighted(g: &Graph, probs: &[f64], seed: u64) -> Result<Graph> {
    if probs.len() != g.n_edges() {
        return Err(Error::Augment(format!("{} probabilities for {} edges", probs.len(), g.n_edges())));
    }
    let mut rng = seed::rng(seed);
    let mut kept = Vec::with_capacity(probs.len());
    for (e, &p) in g.edges().zip(probs) {
        check_prob(p, "edge drop probability")?;
        if !rng.random_bool(p) {
            kept.push(e);
        }
    }
    Ok(g.with_edges(kept))
}

/// Zeroes `round(p·d)` feature columns chosen without replacement.
pub fn mask_features(g: &Graph, p: f64, seed: u64) -> Result<Graph> {
    check_prob(p, "mask_features p")?;
    let d = g.n_features();
    if d == 0 {
        return Err(Error::contract("mask_features needs at least one feature column"));
    }
    let k = (p * d as f64).round() as usize;
    let cols = sample(&mut seed::rng(seed), d, k).into_vec();
    let mut x = g.features().clone();
    for v in 0..g.n() {
        let row = x.row_mut(v);
        for &c in &cols {
            row[c] = 0.0;
        }
    }
    g.clone().with_features(x)
}

/// Removes `round(p·n)` nodes chosen without replacement and keeps the induced
/// subgraph on the survivors, preserving their relative order.
pub fn drop_nodes(g: &Graph, p: f64, seed: u64) -> Result<Graph> {
    check_prob(p, "drop_nodes p")?;
    let n = g.n();
    let k = (p * n as f64).round() as usize;
    if k >= n {
        return Err(Error::Augment(format!("dropping {k} of {n} nodes leaves an empty graph")));
    }
    let mut dropped = vec![false; n];
    for i in sample(&mut seed::rng(seed), n, k) {
        dropped[i] = true;
    }
    let keep: Vec<usize> = (0..n).filter(|&v| !dropped[v]).collect();
    Ok(g.induced(&keep))
}

/// Permutes feature rows uniformly at random, keeping the structure. This is the
/// negative-sample corruption for local-global discrimination.
pub fn shuffle_features(g: &Graph, seed: u64) -> Result<Graph> {
    if g.n_features() == 0 {
        return Err(Error::contract("shuffle_features needs at least one feature column"));
    }
    let mut perm: Vec<usize> = (0..g.n()).collect();
    perm.shuffle(&mut seed::rng(seed));
    g.clone().with_features(g.features().gather_rows(&perm))
}

/// Personalized-PageRank diffusion `α (I − (1−α) Â)^{-1}` with per-row top-k
/// sparsification; each kept row is rescaled to its pre-sparsification sum.
pub fn ppr_diffusion(g: &Graph, alpha: f64, top_k: usize) -> Result<CsrMatrix> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::config("/method/alpha", format!("diffusion alpha {alpha} must be in (0, 1]")));
    }
    if top_k == 0 {
        return Err(Error::config("/method/top_k", "top_k must be at least 1"));
    }
    let n = g.n();
    let rows = if n <= DENSE_DIFFUSION_MAX_N { ppr_dense(g, alpha) } else { ppr_series(g, alpha) };
    let mut trip = Vec::new();
    for (r, row) in rows.into_iter().enumerate() {
        trip.extend(sparsify_row(row, top_k).into_iter().map(|(c, v)| (r, c, v)));
    }
    CsrMatrix::from_triplets(n, n, trip)
}

fn ppr_dense(g: &Graph, alpha: f64) -> Vec<Vec<(usize, f64)>> {
    let n = g.n();
    let a = sym_norm_adj(g);
    let mut m = DMatrix::<f64>::identity(n, n);
    for (r, c, v) in a.triplets() {
        m[(r, c)] -= (1.0 - alpha) * v;
    }
    // (1−α)Â has spectral radius < 1 for α > 0, so m is invertible.
    let inv = m.lu().try_inverse().expect("I - (1-alpha) A_hat is nonsingular for alpha > 0");
    (0..n).map(|r| (0..n).map(|c| (c, alpha * inv[(r, c)])).filter(|&(_, v)| v > 0.0).collect()).collect()
}

/// Row `r` of `α Σ_k ((1−α)Â)^k`, accumulated until the remaining mass is below
/// [`DIFFUSION_TOL`]. `Â` is symmetric so rows equal columns.
fn ppr_series(g: &Graph, alpha: f64) -> Vec<Vec<(usize, f64)>> {
    let a = sym_norm_adj(g);
    let n = g.n();
    (0..n)
        .into_par_iter()
        .map(|r| {
            let mut acc = std::collections::BTreeMap::<usize, f64>::new();
            let mut frontier = vec![(r, 1.0f64)];
            let mut scale = alpha;
            while !frontier.is_empty() {
                let mass: f64 = frontier.iter().map(|&(_, v)| v.abs()).sum();
                for &(c, v) in &frontier {
                    *acc.entry(c).or_default() += scale * v;
                }
                if scale * mass < DIFFUSION_TOL {
                    break;
                }
                let mut next = std::collections::BTreeMap::<usize, f64>::new();
                for &(u, v) in &frontier {
                    let (cols, vals) = a.row(u);
                    for (&c, &w) in cols.iter().zip(vals) {
                        *next.entry(c).or_default() += v * w;
                    }
                }
                scale *= 1.0 - alpha;
                let floor = DIFFUSION_TOL / n as f64;
                frontier = next.into_iter().filter(|&(_, v)| v * scale > floor * 1e-3).collect();
            }
            acc.into_iter().filter(|&(_, v)| v > 0.0).collect()
        })
        .collect()
}

fn sparsify_row(mut row: Vec<(usize, f64)>, top_k: usize) -> Vec<(usize, f64)> {
    if row.len() <= top_k {
        return row;
    }
    let total: f64 = row.iter().map(|&(_, v)| v).sum();
    row.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    row.truncate(top_k);
    let kept: f64 = row.iter().map(|&(_, v)| v).sum();
    let s = total / kept;
    row.iter_mut().for_each(|(_, v)| *v *= s);
    row.sort_by_key(|&(c, _)| c);
    row
}

/// Random walk with restart from a uniformly chosen start node until `size`
/// distinct nodes are visited (or the start's component is exhausted). Returns
/// the induced subgraph and, for each of its nodes, the original node id.
pub fn sample_subgraph(g: &Graph, size: usize, seed: u64) -> Result<(Graph, Vec<usize>)> {
    let n = g.n();
    if size == 0 || size > n {
        return Err(Error::contract(format!("subgraph size {size} outside 1..={n}")));
    }
    let mut rng = seed::rng(seed);
    let start = rng.random_range(0..n);

    // size of the start node's component bounds what the walk can reach
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    let mut comp = 0;
    while let Some(v) = queue.pop_front() {
        comp += 1;
        for &u in g.neighbors(v) {
            if !std::mem::replace(&mut seen[u], true) {
                queue.push_back(u);
            }
        }
    }
    let target = size.min(comp);

    let mut visited = vec![false; n];
    visited[start] = true;
    let mut count = 1;
    let mut cur = start;
    while count < target {
        let nb = g.neighbors(cur);
        cur = if nb.is_empty() || rng.random_bool(WALK_RESTART) { start } else { nb[rng.random_range(0..nb.len())] };
        if !visited[cur] {
            visited[cur] = true;
            count += 1;
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&v| visited[v]).collect();
    Ok((g.induced(&keep), keep))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    DropEdges,
    MaskFeatures,
    DropNodes,
    ShuffleFeatures,
    PprDiffusion,
    Subgraph,
    Identity,
    Compose,
}

/// Serializable description of an augmentation.
///
/// `subgraph` takes an absolute `size`, or keeps `round((1−p)·n)` nodes when only `p` is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSpec {
    pub kind: AugmentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<AugmentSpec>,
}

impl AugmentSpec {
    fn of(kind: AugmentKind) -> Self {
        AugmentSpec { kind, p: None, alpha: None, top_k: None, size: None, children: Vec::new() }
    }

    pub fn identity() -> Self {
        Self::of(AugmentKind::Identity)
    }

    pub fn drop_edges(p: f64) -> Self {
        AugmentSpec { p: Some(p), ..Self::of(AugmentKind::DropEdges) }
    }

    pub fn mask_features(p: f64) -> Self {
        AugmentSpec { p: Some(p), ..Self::of(AugmentKind::MaskFeatures) }
    }

    pub fn drop_nodes(p: f64) -> Self {
        AugmentSpec { p: Some(p), ..Self::of(AugmentKind::DropNodes) }
    }

    pub fn shuffle_features() -> Self {
        Self::of(AugmentKind::ShuffleFeatures)
    }

    pub fn ppr_diffusion(alpha: f64, top_k: usize) -> Self {
        AugmentSpec { alpha: Some(alpha), top_k: Some(top_k), ..Self::of(AugmentKind::PprDiffusion) }
    }

    pub fn subgraph_fraction(p: f64) -> Self {
        AugmentSpec { p: Some(p), ..Self::of(AugmentKind::Subgraph) }
    }

    pub fn compose(children: Vec<AugmentSpec>) -> Self {
        AugmentSpec { children, ..Self::of(AugmentKind::Compose) }
    }

    /// Checks parameter ranges; `pointer` locates this augmentation in a config document.
    pub fn validate(&self, pointer: &str) -> Result<()> {
        let need_p = |s: &AugmentSpec| -> Result<f64> {
            let p = s.p.ok_or_else(|| Error::config(format!("{pointer}/p"), "missing drop/mask rate"))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{pointer}/p"), format!("{p} is not in [0, 1]")));
            }
            Ok(p)
        };
        match self.kind {
            AugmentKind::DropEdges | AugmentKind::MaskFeatures => {
                need_p(self)?;
            }
            AugmentKind::DropNodes => {
                if need_p(self)? >= 1.0 {
                    return Err(Error::config(format!("{pointer}/p"), "drop_nodes needs p < 1"));
                }
            }
            AugmentKind::PprDiffusion => {
                let a = self.alpha.unwrap_or(DEFAULT_ALPHA);
                if !(a > 0.0 && a <= 1.0) {
                    return Err(Error::config(format!("{pointer}/alpha"), format!("{a} is not in (0, 1]")));
                }
                if self.top_k == Some(0) {
                    return Err(Error::config(format!("{pointer}/top_k"), "top_k must be at least 1"));
                }
            }
            AugmentKind::Subgraph => match (self.size, self.p) {
                (Some(0), _) => return Err(Error::config(format!("{pointer}/size"), "size must be at least 1")),
                (Some(_), _) => {}
                (None, Some(_)) => {
                    if need_p(self)? >= 1.0 {
                        return Err(Error::config(format!("{pointer}/p"), "subgraph needs p < 1"));
                    }
                }
                (None, None) => return Err(Error::config(pointer.to_string(), "subgraph needs size or p")),
            },
            AugmentKind::Compose => {
                for (i, c) in self.children.iter().enumerate() {
                    c.validate(&format!("{pointer}/children/{i}"))?;
                }
            }
            AugmentKind::Identity | AugmentKind::ShuffleFeatures => {}
        }
        Ok(())
    }
}

/// An augmented view: a graph plus, for diffusion views, the propagation
/// operator that replaces the normalized adjacency.
#[derive(Clone, Debug)]
pub struct View {
    pub graph: Graph,
    pub propagation: Option<CsrMatrix>,
}

impl View {
    /// The operator an encoder should propagate with.
    pub fn propagation_or_norm(&self) -> CsrMatrix {
        self.propagation.clone().unwrap_or_else(|| sym_norm_adj(&self.graph))
    }
}

/// Applies a spec. `compose` runs its children left to right, child `i`
/// drawing from `seed::derive(seed, i)`.
pub fn apply_spec(g: &Graph, spec: &AugmentSpec, seed: u64) -> Result<View> {
    let graph_only = |graph| Ok(View { graph, propagation: None });
    match spec.kind {
        AugmentKind::Identity => graph_only(g.clone()),
        AugmentKind::DropEdges => graph_only(drop_edges(g, spec.p.unwrap_or(0.0), seed)?),
        AugmentKind::MaskFeatures => graph_only(mask_features(g, spec.p.unwrap_or(0.0), seed)?),
        AugmentKind::DropNodes => graph_only(drop_nodes(g, spec.p.unwrap_or(0.0), seed)?),
        AugmentKind::ShuffleFeatures => graph_only(shuffle_features(g, seed)?),
        AugmentKind::PprDiffusion => Ok(View {
            graph: g.clone(),
            propagation: Some(ppr_diffusion(g, spec.alpha.unwrap_or(DEFAULT_ALPHA), spec.top_k.unwrap_or(DEFAULT_TOP_K))?),
        }),
        AugmentKind::Subgraph => {
            let size = match (spec.size, spec.p) {
                (Some(s), _) => s.min(g.n()),
                (None, p) => ((1.0 - p.unwrap_or(0.0)) * g.n() as f64).round().max(1.0) as usize,
            };
            graph_only(sample_subgraph(g, size, seed)?.0)
        }
        AugmentKind::Compose => {
            let mut view = View { graph: g.clone(), propagation: None };
            for (i, child) in spec.children.iter().enumerate() {
                if view.propagation.is_some() {
                    return Err(Error::Augment("diffusion must be the last step of a compose".into()));
                }
                view = apply_spec(&view.graph, child, seed::derive(seed, i as u64))?;
            }
            Ok(view)
        }
    }
}
