use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hardmax, mat_vec_mul_add, truncated_relu, RMatrix, RVector};
use crate::rational::Rational;

/// Undirected graph with per-node feature vectors. Edges are stored as
/// ordered pairs (lo, hi); self-loops are rejected at construction because
/// aggregation ranges over N(u) together with u itself.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturedGraph {
    pub nodes: BTreeSet<String>,
    pub edges: BTreeSet<(String, String)>,
    /// Bit vectors for classification graphs; the transformer encoding
    /// stores position-shifted rational vectors here as well.
    pub features: BTreeMap<String, RVector>,
}

impl FeaturedGraph {
    pub fn new(
        nodes: impl IntoIterator<Item = String>,
        edges: impl IntoIterator<Item = (String, String)>,
        features: BTreeMap<String, RVector>,
    ) -> Result<Self> {
        let nodes: BTreeSet<String> = nodes.into_iter().collect();
        let mut norm = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::Structure(format!("self-loop at {a}")));
            }
            if !nodes.contains(&a) || !nodes.contains(&b) {
                return Err(Error::Structure(format!("edge ({a}, {b}) leaves the node set")));
            }
            let pair = if a < b { (a, b) } else { (b, a) };
            norm.insert(pair);
        }
        let g = FeaturedGraph {
            nodes,
            edges: norm,
            features,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let mut dim = None;
        for u in &self.nodes {
            let f = self
                .features
                .get(u)
                .ok_or_else(|| Error::Structure(format!("node {u} has no feature vector")))?;
            match dim {
                None => dim = Some(f.dim()),
                Some(d) if d != f.dim() => {
                    return Err(Error::dim(
                        "graph features",
                        format!("node {u} has dim {} but others {d}", f.dim()),
                    ));
                }
                _ => {}
            }
        }
        for (a, b) in &self.edges {
            if a == b {
                return Err(Error::Structure(format!("self-loop at {a}")));
            }
            if !self.nodes.contains(a) || !self.nodes.contains(b) {
                return Err(Error::Structure(format!("edge ({a}, {b}) leaves the node set")));
            }
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.features.values().next().map(|f| f.dim()).unwrap_or(0)
    }

    pub fn neighbors(&self, u: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for (a, b) in &self.edges {
            if a == u {
                out.insert(b.clone());
            } else if b == u {
                out.insert(a.clone());
            }
        }
        out
    }

    pub fn degree(&self, u: &str) -> usize {
        self.neighbors(u).len()
    }
}

/// Message-passing weights: per layer t, an aggregation matrix A^t, a self
/// matrix B^t (both d_t x d_{t-1}), and a bias b^t.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GnnInstance {
    pub dims: Vec<usize>,
    #[serde(rename = "A")]
    pub a_mats: Vec<RMatrix>,
    #[serde(rename = "B")]
    pub b_mats: Vec<RMatrix>,
    #[serde(rename = "b")]
    pub biases: Vec<RVector>,
}

impl GnnInstance {
    pub fn new(
        dims: Vec<usize>,
        a_mats: Vec<RMatrix>,
        b_mats: Vec<RMatrix>,
        biases: Vec<RVector>,
    ) -> Result<Self> {
        let g = GnnInstance {
            dims,
            a_mats,
            b_mats,
            biases,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 {
            return Err(Error::Shape("message passing needs at least one layer".into()));
        }
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape("zero layer dimension".into()));
        }
        let layers = self.layer_count();
        if self.a_mats.len() != layers || self.b_mats.len() != layers || self.biases.len() != layers
        {
            return Err(Error::Shape(format!(
                "{layers} layers but {}/{}/{} A/B/bias entries",
                self.a_mats.len(),
                self.b_mats.len(),
                self.biases.len()
            )));
        }
        for t in 1..=layers {
            let (rows, cols) = (self.dims[t], self.dims[t - 1]);
            for (name, m) in [("A", &self.a_mats[t - 1]), ("B", &self.b_mats[t - 1])] {
                if m.rows != rows || m.cols != cols {
                    return Err(Error::dim(
                        "graph layer",
                        format!(
                            "{name}^{t} is {}x{}, expected {rows}x{cols}",
                            m.rows, m.cols
                        ),
                    ));
                }
            }
            if self.biases[t - 1].dim() != rows {
                return Err(Error::dim(
                    "graph layer",
                    format!("b^{t} has dim {}, expected {rows}", self.biases[t - 1].dim()),
                ));
            }
        }
        Ok(())
    }

    pub fn layer_count(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("dims nonempty")
    }
}

/// GNN weights plus one attention vector a^t of length 2*d_t per layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatInstance {
    #[serde(flatten)]
    pub gnn: GnnInstance,
    #[serde(rename = "a")]
    pub attention: Vec<RVector>,
}

impl GatInstance {
    pub fn new(gnn: GnnInstance, attention: Vec<RVector>) -> Result<Self> {
        let g = GatInstance { gnn, attention };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        self.gnn.validate()?;
        if self.attention.len() != self.gnn.layer_count() {
            return Err(Error::Shape(format!(
                "{} layers but {} attention vectors",
                self.gnn.layer_count(),
                self.attention.len()
            )));
        }
        for t in 1..=self.gnn.layer_count() {
            let want = 2 * self.gnn.dims[t];
            if self.attention[t - 1].dim() != want {
                return Err(Error::dim(
                    "attention vector",
                    format!("a^{t} has dim {}, expected {want}", self.attention[t - 1].dim()),
                ));
            }
        }
        Ok(())
    }
}

/// Layer-by-layer record of a forward pass: h[t-1][u] is the pre-activation
/// h^t_u, x[t][u] the activated vector x^t_u (x[0] holds the features).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphTrace {
    pub h: Vec<BTreeMap<String, RVector>>,
    pub x: Vec<BTreeMap<String, RVector>>,
}

impl GraphTrace {
    pub fn h_final(&self, u: &str) -> Result<&RVector> {
        self.h
            .last()
            .and_then(|m| m.get(u))
            .ok_or_else(|| Error::Structure(format!("no final h for node {u}")))
    }

    pub fn x_final(&self, u: &str) -> Result<&RVector> {
        self.x
            .last()
            .and_then(|m| m.get(u))
            .ok_or_else(|| Error::Structure(format!("no final x for node {u}")))
    }
}

fn check_features(dims0: usize, graph: &FeaturedGraph) -> Result<()> {
    for (u, f) in &graph.features {
        if f.dim() != dims0 {
            return Err(Error::dim(
                "graph forward",
                format!("node {u} feature dim {} but d_0 = {dims0}", f.dim()),
            ));
        }
    }
    Ok(())
}

/// h^t_u = B^t x^{t-1}_u + sum over neighbors v of A^t x^{t-1}_v + b^t,
/// then x^t = truncated ReLU of h^t.
pub fn gnn_forward(inst: &GnnInstance, graph: &FeaturedGraph) -> Result<GraphTrace> {
    inst.validate()?;
    graph.validate()?;
    check_features(inst.input_dim(), graph)?;
    let mut x_layers = vec![graph.features.clone()];
    let mut h_layers = Vec::new();
    for t in 1..=inst.layer_count() {
        let prev = &x_layers[t - 1];
        let mut h_t = BTreeMap::new();
        for u in &graph.nodes {
            let mut h = mat_vec_mul_add(&inst.b_mats[t - 1], &prev[u], &inst.biases[t - 1])?;
            for v in graph.neighbors(u) {
                let av = mat_vec_mul_add(
                    &inst.a_mats[t - 1],
                    &prev[&v],
                    &RVector::zeros(inst.dims[t]),
                )?;
                h = h.add(&av)?;
            }
            h_t.insert(u.clone(), h);
        }
        let x_t = h_t
            .iter()
            .map(|(u, h)| (u.clone(), truncated_relu(h)))
            .collect();
        h_layers.push(h_t);
        x_layers.push(x_t);
    }
    Ok(GraphTrace {
        h: h_layers,
        x: x_layers,
    })
}

/// Attention coefficients at (layer t, node u): hardmax over the scores
/// a^t . (A^t x_w ++ B^t x_u) for w in N(u) together with u, taken in
/// ascending node-id order.
pub fn gat_attention_coeffs(
    inst: &GatInstance,
    graph: &FeaturedGraph,
    layer: usize,
    u: &str,
    x: &BTreeMap<String, RVector>,
) -> Result<BTreeMap<String, Rational>> {
    if layer < 1 || layer > inst.gnn.layer_count() {
        return Err(Error::Shape(format!("layer {layer} out of range")));
    }
    let mut candidates: BTreeSet<String> = graph.neighbors(u);
    candidates.insert(u.to_string());
    let a_vec = &inst.attention[layer - 1];
    let x_u = x
        .get(u)
        .ok_or_else(|| Error::Structure(format!("no vector for node {u}")))?;
    let bu = mat_vec_mul_add(
        &inst.gnn.b_mats[layer - 1],
        x_u,
        &RVector::zeros(inst.gnn.dims[layer]),
    )?;
    let mut scores = Vec::with_capacity(candidates.len());
    for w in &candidates {
        let x_w = x
            .get(w)
            .ok_or_else(|| Error::Structure(format!("no vector for node {w}")))?;
        let aw = mat_vec_mul_add(
            &inst.gnn.a_mats[layer - 1],
            x_w,
            &RVector::zeros(inst.gnn.dims[layer]),
        )?;
        scores.push(a_vec.dot(&RVector::concat(&[&aw, &bu]))?);
    }
    let alpha = hardmax(&RVector(scores))?;
    Ok(candidates
        .into_iter()
        .zip(alpha.0)
        .collect())
}

/// GAT update: h^t_u = alpha_uu B^t x_u + sum over v of alpha_uv A^t x_v
/// + b^t with hardmax attention; x^t = truncated ReLU of h^t.
pub fn gat_forward(inst: &GatInstance, graph: &FeaturedGraph) -> Result<GraphTrace> {
    inst.validate()?;
    graph.validate()?;
    check_features(inst.gnn.input_dim(), graph)?;
    let mut x_layers = vec![graph.features.clone()];
    let mut h_layers = Vec::new();
    for t in 1..=inst.gnn.layer_count() {
        let prev = &x_layers[t - 1];
        let mut h_t = BTreeMap::new();
        for u in &graph.nodes {
            let alpha = gat_attention_coeffs(inst, graph, t, u, prev)?;
            let mut h = inst.gnn.biases[t - 1].clone();
            let self_part = mat_vec_mul_add(
                &inst.gnn.b_mats[t - 1],
                &prev[u],
                &RVector::zeros(inst.gnn.dims[t]),
            )?;
            h = h.add(&self_part.scale(&alpha[u]))?;
            for v in graph.neighbors(u) {
                let av = mat_vec_mul_add(
                    &inst.gnn.a_mats[t - 1],
                    &prev[&v],
                    &RVector::zeros(inst.gnn.dims[t]),
                )?;
                h = h.add(&av.scale(&alpha[&v]))?;
            }
            h_t.insert(u.clone(), h);
        }
        let x_t = h_t
            .iter()
            .map(|(u, h)| (u.clone(), truncated_relu(h)))
            .collect();
        h_layers.push(h_t);
        x_layers.push(x_t);
    }
    Ok(GraphTrace {
        h: h_layers,
        x: x_layers,
    })
}

/// Positional encoding: the default maps position t of s to the constant
/// vector with every coordinate t/(s+1); a table pins one vector per
/// position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosSpec {
    Default,
    Table(Vec<RVector>),
}

/// Token sequence: tokens at positions 0..s-1, a token-to-bit-vector table,
/// and a positional encoding. Features are x = vec(token) + pos(t, s).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub vec_table: BTreeMap<String, RVector>,
    pub pos: PosSpec,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> Result<usize> {
        self.vec_table
            .values()
            .next()
            .map(|v| v.dim())
            .ok_or_else(|| Error::Structure("empty token vector table".into()))
    }

    pub fn token_vec(&self, t: usize) -> Result<&RVector> {
        let tok = self
            .tokens
            .get(t)
            .ok_or_else(|| Error::Structure(format!("no token at position {t}")))?;
        self.vec_table
            .get(tok)
            .ok_or_else(|| Error::Structure(format!("token {tok} missing from vec table")))
    }

    pub fn pos_at(&self, t: usize) -> Result<RVector> {
        let s = self.len();
        if t >= s {
            return Err(Error::Structure(format!("position {t} beyond length {s}")));
        }
        match &self.pos {
            PosSpec::Default => {
                let d = self.dim()?;
                let c = Rational::new(t as i64, (s + 1) as i64);
                Ok(RVector(vec![c; d]))
            }
            PosSpec::Table(rows) => rows
                .get(t)
                .cloned()
                .ok_or_else(|| Error::Structure(format!("pos table has no entry {t}"))),
        }
    }

    pub fn feature(&self, t: usize) -> Result<RVector> {
        self.token_vec(t)?.add(&self.pos_at(t)?)
    }

    /// Position node name in the encoded complete graph.
    pub fn position_node(t: usize) -> String {
        format!("t{t}")
    }

    /// Complete graph over positions with encoded features.
    pub fn encode(&self) -> Result<FeaturedGraph> {
        if self.is_empty() {
            return Err(Error::Structure("empty token sequence".into()));
        }
        let s = self.len();
        let nodes: Vec<String> = (0..s).map(Self::position_node).collect();
        let mut edges = Vec::new();
        for i in 0..s {
            for j in i + 1..s {
                edges.push((nodes[i].clone(), nodes[j].clone()));
            }
        }
        let mut features = BTreeMap::new();
        for t in 0..s {
            features.insert(nodes[t].clone(), self.feature(t)?);
        }
        FeaturedGraph::new(nodes, edges, features)
    }
}

/// Transformer encoder: hardmax-attention GAT on the complete token graph.
pub fn transformer_forward(inst: &GatInstance, seq: &TokenSequence) -> Result<GraphTrace> {
    gat_forward(inst, &seq.encode()?)
}

fn classify_final(trace: &GraphTrace, out_dim: usize, u: &str) -> Result<bool> {
    if out_dim != 1 {
        return Err(Error::Shape(format!(
            "node classifier needs output dim 1, got {out_dim}"
        )));
    }
    Ok(trace.x_final(u)?[0].is_positive())
}

/// True iff x^L_u > 0 (equivalently h^L_u > 0; truncation preserves sign).
pub fn classify_gnn(inst: &GnnInstance, graph: &FeaturedGraph, u: &str) -> Result<bool> {
    classify_final(&gnn_forward(inst, graph)?, inst.output_dim(), u)
}

pub fn classify_gat(inst: &GatInstance, graph: &FeaturedGraph, u: &str) -> Result<bool> {
    classify_final(&gat_forward(inst, graph)?, inst.gnn.output_dim(), u)
}

pub fn classify_transformer(inst: &GatInstance, seq: &TokenSequence, t: usize) -> Result<bool> {
    classify_final(
        &transformer_forward(inst, seq)?,
        inst.gnn.output_dim(),
        &TokenSequence::position_node(t),
    )
}
