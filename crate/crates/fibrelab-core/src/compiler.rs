use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::compatible::cube_points;
use crate::error::{Error, Result};
use crate::feedforward::{classify, NetworkInstance, NeuralArchitecture};
use crate::fibred::{
    EdgeLabel, FibredNetwork, FibringArchitecture, FibringRule, GatGadgetData, NodeId,
};
use crate::graph::{FeaturedGraph, GatInstance, GnnInstance, TokenSequence};
use crate::linalg::{ActivationSpec, RMatrix, RVector};
use crate::modal::{ComponentId, Formula, LayerTag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompileMode {
    Gnn,
    Gat,
    Transformer,
}

impl CompileMode {
    pub fn uses_attention(self) -> bool {
        !matches!(self, CompileMode::Gnn)
    }
}

/// Message-passing weights accepted by the compiler.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceInstance {
    Gnn(GnnInstance),
    Gat(GatInstance),
}

impl SourceInstance {
    pub fn gnn(&self) -> &GnnInstance {
        match self {
            SourceInstance::Gnn(g) => g,
            SourceInstance::Gat(g) => &g.gnn,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SourceInstance::Gnn(g) => g.validate(),
            SourceInstance::Gat(g) => g.validate(),
        }
    }
}

/// Tree of lazy walks from a start vertex: each step either stays put or
/// crosses an edge. Walk children are stored in splice-block order (the
/// vertex itself first, then neighbors ascending). In attention modes each
/// non-leaf walk node also owns one attention child.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnravelTree {
    pub root: NodeId,
    pub vertex_of: BTreeMap<NodeId, String>,
    pub walk_children: BTreeMap<NodeId, Vec<NodeId>>,
    pub attention_child: BTreeMap<NodeId, NodeId>,
    pub depth_of: BTreeMap<NodeId, usize>,
}

impl UnravelTree {
    pub fn node_count(&self) -> usize {
        self.vertex_of.len() + self.attention_child.len()
    }

    pub fn walk_count(&self) -> usize {
        self.vertex_of.len()
    }
}

fn check_vertex_name(v: &str) -> Result<()> {
    if v.is_empty() || v == "att" || v.contains([',', ']', '/']) {
        return Err(Error::Structure(format!(
            "vertex name {v:?} clashes with tree node or formula syntax"
        )));
    }
    Ok(())
}

/// Unravel `depth` lazy-walk steps from `u`.
pub fn lazy_unravel(
    graph: &FeaturedGraph,
    u: &str,
    depth: usize,
    mode: CompileMode,
) -> Result<UnravelTree> {
    graph.validate()?;
    if !graph.nodes.contains(u) {
        return Err(Error::Structure(format!("start vertex {u} not in graph")));
    }
    for v in &graph.nodes {
        check_vertex_name(v)?;
    }
    let mut tree = UnravelTree {
        root: u.to_string(),
        vertex_of: BTreeMap::new(),
        walk_children: BTreeMap::new(),
        attention_child: BTreeMap::new(),
        depth_of: BTreeMap::new(),
    };
    let mut frontier = vec![(u.to_string(), u.to_string(), 0usize)];
    while let Some((id, vertex, d)) = frontier.pop() {
        tree.vertex_of.insert(id.clone(), vertex.clone());
        tree.depth_of.insert(id.clone(), d);
        if d == depth {
            continue;
        }
        // Block order: lazy self step first, then neighbors ascending.
        let mut kids = Vec::new();
        for w in std::iter::once(vertex.clone()).chain(graph.neighbors(&vertex)) {
            let child_id = format!("{id}/{w}");
            kids.push(child_id.clone());
            frontier.push((child_id, w, d + 1));
        }
        tree.walk_children.insert(id.clone(), kids);
        if mode.uses_attention() {
            tree.attention_child.insert(id.clone(), format!("{id}/att"));
        }
    }
    Ok(tree)
}

fn stacked_identities(copies: usize, n: usize) -> RMatrix {
    let blocks: Vec<RMatrix> = (0..copies).map(|_| RMatrix::identity(n)).collect();
    let refs: Vec<&RMatrix> = blocks.iter().collect();
    RMatrix::vstack(&refs).expect("uniform identity widths")
}

fn row_of_copies(b: &RMatrix, a: &RMatrix, copies: usize) -> Result<RMatrix> {
    let mut parts = vec![b];
    for _ in 0..copies {
        parts.push(a);
    }
    RMatrix::hstack(&parts)
}

/// Splice-site activation: children hand over raw pre-activations that the
/// parent truncates, except at layer 1 where the spliced vectors are input
/// features and must pass through unchanged.
fn splice_activation(t: usize, dim: usize) -> ActivationSpec {
    if t == 1 {
        ActivationSpec::identity(dim)
    } else {
        ActivationSpec::truncated_relu(dim)
    }
}

fn gnn_root_instance(inst: &GnnInstance, deg: usize) -> Result<NetworkInstance> {
    let ll = inst.layer_count();
    let n = inst.input_dim();
    let d_prev = inst.dims[ll - 1];
    let splice = (deg + 1) * d_prev;
    let arch = NeuralArchitecture::new(
        vec![n, splice, inst.output_dim()],
        vec![ActivationSpec::identity(splice)],
    )?;
    let w1 = if d_prev == n {
        stacked_identities(deg + 1, n)
    } else {
        RMatrix::zeros(splice, n)
    };
    let w2 = row_of_copies(&inst.b_mats[ll - 1], &inst.a_mats[ll - 1], deg)?;
    NetworkInstance::new(
        arch,
        vec![w1, w2],
        vec![RVector::zeros(splice), inst.biases[ll - 1].clone()],
    )
}

/// Interior node, two layers: splice site then one affine update. Output is
/// the raw pre-activation of the handled layer.
fn gnn_mid_instance(inst: &GnnInstance, t: usize, deg: usize) -> Result<NetworkInstance> {
    let d_prev = inst.dims[t - 1];
    let splice = (deg + 1) * d_prev;
    let arch = NeuralArchitecture::new(
        vec![1, splice, inst.dims[t]],
        vec![splice_activation(t, splice)],
    )?;
    let w2 = row_of_copies(&inst.b_mats[t - 1], &inst.a_mats[t - 1], deg)?;
    NetworkInstance::new(
        arch,
        vec![RMatrix::zeros(splice, 1), w2],
        vec![RVector::zeros(splice), inst.biases[t - 1].clone()],
    )
}

/// Depth-one node, three layers: the extra truncation plus identity layer
/// hands the root an activated vector, keeping the root linear.
fn gnn_depth1_instance(inst: &GnnInstance, t: usize, deg: usize) -> Result<NetworkInstance> {
    let d_prev = inst.dims[t - 1];
    let d_t = inst.dims[t];
    let splice = (deg + 1) * d_prev;
    let arch = NeuralArchitecture::new(
        vec![1, splice, d_t, d_t],
        vec![splice_activation(t, splice), ActivationSpec::truncated_relu(d_t)],
    )?;
    let w2 = row_of_copies(&inst.b_mats[t - 1], &inst.a_mats[t - 1], deg)?;
    NetworkInstance::new(
        arch,
        vec![RMatrix::zeros(splice, 1), w2, RMatrix::identity(d_t)],
        vec![
            RVector::zeros(splice),
            inst.biases[t - 1].clone(),
            RVector::zeros(d_t),
        ],
    )
}

/// Attention node, three layers: splice site, then a block map laying out
/// (B x_u ++ A x_u ++ A x_w1 ++ ...) for the attention child that overwrites
/// block zero, then a projection back to the handled dimension.
fn gat_node_instance(
    inst: &GatInstance,
    t: usize,
    deg: usize,
    input_dim: usize,
) -> Result<(NetworkInstance, GatGadgetData)> {
    let d_prev = inst.gnn.dims[t - 1];
    let d_t = inst.gnn.dims[t];
    let splice = (deg + 1) * d_prev;
    let combined = (deg + 2) * d_t;
    let arch = NeuralArchitecture::new(
        vec![input_dim, splice, combined, d_t],
        vec![splice_activation(t, splice), ActivationSpec::identity(combined)],
    )?;
    let a = &inst.gnn.a_mats[t - 1];
    let b = &inst.gnn.b_mats[t - 1];
    let mut w2 = RMatrix::zeros(combined, splice);
    w2.set_block(0, 0, b);
    w2.set_block(d_t, 0, a);
    for j in 1..=deg {
        w2.set_block((j + 1) * d_t, j * d_prev, a);
    }
    let mut w3 = RMatrix::zeros(d_t, combined);
    for i in 0..d_t {
        w3.set(i, i, crate::rational::Rational::one());
    }
    let node = NetworkInstance::new(
        arch,
        vec![RMatrix::zeros(splice, input_dim), w2, w3],
        vec![
            RVector::zeros(splice),
            RVector::zeros(combined),
            RVector::zeros(d_t),
        ],
    )?;
    let gadget = GatGadgetData {
        block_count: deg + 2,
        block_dim: d_t,
        attention_vector: inst.attention[t - 1].clone(),
        bias: inst.gnn.biases[t - 1].clone(),
    };
    Ok((node, gadget))
}

/// Compiled form of one message-passing classifier run at a chosen vertex:
/// a feature-independent tree of instances plus a rule family that pins the
/// leaf constants per feature assignment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompiledFibring {
    pub mode: CompileMode,
    pub tree: UnravelTree,
    pub architecture: FibringArchitecture,
    pub root_instance: NetworkInstance,
    pub instances: BTreeMap<NodeId, NetworkInstance>,
    pub base_rules: BTreeMap<NodeId, BTreeMap<NodeId, FibringRule>>,
    /// (parent, leaf, graph vertex): the only feature-dependent edges.
    pub leaf_edges: Vec<(NodeId, NodeId, String)>,
}

impl CompiledFibring {
    /// Rules for one feature assignment. Only leaf constants vary with the
    /// assignment; every other rule is shared.
    pub fn rules_for(
        &self,
        features: &BTreeMap<String, RVector>,
    ) -> Result<BTreeMap<NodeId, BTreeMap<NodeId, FibringRule>>> {
        let mut rules = self.base_rules.clone();
        for (parent, leaf, vertex) in &self.leaf_edges {
            let x = features
                .get(vertex)
                .ok_or_else(|| Error::Structure(format!("no feature vector for vertex {vertex}")))?;
            let d0 = self.instances[leaf].architecture.dims[0];
            if x.dim() != d0 {
                return Err(Error::dim(
                    "rule family",
                    format!("vertex {vertex} feature dim {} but d_0 = {d0}", x.dim()),
                ));
            }
            rules
                .entry(parent.clone())
                .or_default()
                .insert(leaf.clone(), FibringRule::Constant(self.instances[leaf].clone(), x.clone()));
        }
        Ok(rules)
    }

    pub fn fibred_for(&self, features: &BTreeMap<String, RVector>) -> Result<FibredNetwork> {
        Ok(FibredNetwork {
            root_instance: self.root_instance.clone(),
            architecture: self.architecture.clone(),
            rules: self.rules_for(features)?,
        })
    }
}

/// Compile a message-passing run into an equivalent fibred network skeleton.
pub fn compile(
    source: &SourceInstance,
    graph: &FeaturedGraph,
    u: &str,
    mode: CompileMode,
) -> Result<CompiledFibring> {
    source.validate()?;
    match (mode, source) {
        (CompileMode::Gnn, SourceInstance::Gnn(_)) => {}
        (CompileMode::Gat | CompileMode::Transformer, SourceInstance::Gat(_)) => {}
        _ => {
            return Err(Error::Structure(
                "compile mode does not match the weight family".into(),
            ));
        }
    }
    let gnn = source.gnn();
    let ll = gnn.layer_count();
    let n = gnn.input_dim();
    let tree = lazy_unravel(graph, u, ll, mode)?;
    let mut instances: BTreeMap<NodeId, NetworkInstance> = BTreeMap::new();
    let mut gadgets: BTreeMap<NodeId, GatGadgetData> = BTreeMap::new();
    for (id, vertex) in &tree.vertex_of {
        let depth = tree.depth_of[id];
        let deg = graph.degree(vertex);
        let inst = if depth == ll {
            NetworkInstance::identity(n)
        } else {
            let t = ll - depth;
            match source {
                SourceInstance::Gnn(g) => {
                    if depth == 0 {
                        gnn_root_instance(g, deg)?
                    } else if depth == 1 {
                        gnn_depth1_instance(g, t, deg)?
                    } else {
                        gnn_mid_instance(g, t, deg)?
                    }
                }
                SourceInstance::Gat(g) => {
                    let input_dim = if depth == 0 { n } else { 1 };
                    let (node, gadget) = gat_node_instance(g, t, deg, input_dim)?;
                    gadgets.insert(id.clone(), gadget);
                    node
                }
            }
        };
        instances.insert(id.clone(), inst);
    }

    let root = tree.root.clone();
    let mut architecture = FibringArchitecture::single(
        root.clone(),
        instances[&root].architecture.clone(),
    );
    let mut base_rules: BTreeMap<NodeId, BTreeMap<NodeId, FibringRule>> = BTreeMap::new();
    let mut leaf_edges = Vec::new();
    // Parents are shorter ids than children, so ascending map order visits
    // every parent before its children.
    for (id, kids) in &tree.walk_children {
        let depth = tree.depth_of[id];
        let t = ll - depth;
        let d_prev = gnn.dims[t - 1];
        for (j, child) in kids.iter().enumerate() {
            let label = EdgeLabel {
                layer: 1,
                positions: (j * d_prev..(j + 1) * d_prev).collect(),
            };
            architecture.add_node(
                id,
                child.clone(),
                instances[child].architecture.clone(),
                label,
            );
            if tree.depth_of[child] == ll {
                leaf_edges.push((id.clone(), child.clone(), tree.vertex_of[child].clone()));
            } else {
                base_rules.entry(id.clone()).or_default().insert(
                    child.clone(),
                    FibringRule::Constant(instances[child].clone(), RVector::zeros(1)),
                );
            }
        }
        if let Some(att) = tree.attention_child.get(id) {
            let gadget = gadgets[id].clone();
            let att_inst = gadget.attention_instance()?;
            let d_t = gadget.block_dim;
            architecture.add_node(
                id,
                att.clone(),
                att_inst.architecture.clone(),
                EdgeLabel {
                    layer: 2,
                    positions: (0..d_t).collect(),
                },
            );
            instances.insert(att.clone(), att_inst);
            base_rules
                .entry(id.clone())
                .or_default()
                .insert(att.clone(), FibringRule::GatGadget(gadget));
        }
    }

    Ok(CompiledFibring {
        mode,
        tree,
        root_instance: instances[&root].clone(),
        architecture,
        instances,
        base_rules,
        leaf_edges,
    })
}

/// Compile a transformer run at one position: attention compilation over the
/// complete position graph with shifted features.
pub fn compile_transformer(
    inst: &GatInstance,
    seq: &TokenSequence,
    t: usize,
) -> Result<CompiledFibring> {
    let graph = seq.encode()?;
    compile(
        &SourceInstance::Gat(inst.clone()),
        &graph,
        &TokenSequence::position_node(t),
        CompileMode::Transformer,
    )
}

/// Full DNF of a scalar-output instance over the (optionally shifted) input
/// cube: one disjunct per accepted corner, corners enumerated from the
/// all-ones corner down so the accepted literals appear high-to-low.
pub fn characteristic_formula(
    inst: &NetworkInstance,
    offset: Option<&RVector>,
    max_cube: usize,
) -> Result<Formula> {
    let n = inst.architecture.input_dim();
    if inst.architecture.output_dim() != 1 {
        return Err(Error::Shape(format!(
            "characteristic formula needs output dim 1, got {}",
            inst.architecture.output_dim()
        )));
    }
    if n > max_cube {
        return Err(Error::CubeGuard { n, max: max_cube });
    }
    let zero;
    let offset = match offset {
        Some(c) => c,
        None => {
            zero = RVector::zeros(n);
            &zero
        }
    };
    if offset.dim() != n {
        return Err(Error::dim(
            "characteristic formula",
            format!("offset dim {} but input dim {n}", offset.dim()),
        ));
    }
    let points = cube_points(offset);
    let mut disjuncts = Vec::new();
    for k in (0..points.len()).rev() {
        let z = &points[k];
        if classify(inst, z)? {
            let lits = (0..n)
                .map(|i| {
                    if (k >> i) & 1 == 1 {
                        Formula::prop(i + 1)
                    } else {
                        Formula::not(Formula::prop(i + 1))
                    }
                })
                .collect();
            disjuncts.push(Formula::big_and(lits));
        }
    }
    Ok(Formula::big_or(disjuncts))
}

/// Modal unfolding of a root property along a fibring tree: a leaf keeps the
/// property, an interior node demands it boxed through every child at that
/// child's last spliced layer (or its input component for leaf children).
pub fn psi_formula(phi: &Formula, arch: &FibringArchitecture) -> Formula {
    psi_at(phi, arch, &arch.root)
}

fn psi_at(phi: &Formula, arch: &FibringArchitecture, node: &NodeId) -> Formula {
    let kids = arch.children(node);
    if kids.is_empty() {
        return phi.clone();
    }
    let mut parts = Vec::with_capacity(kids.len());
    for (child, _) in kids {
        let grand = arch.children(&child);
        let tag = if grand.is_empty() {
            LayerTag::In
        } else {
            let last = grand
                .iter()
                .map(|(_, label)| label.layer)
                .max()
                .expect("nonempty children");
            LayerTag::Layer(last)
        };
        let inner = psi_at(phi, arch, &child);
        parts.push(Formula::boxed(
            ComponentId {
                node: child.clone(),
                layer: tag,
            },
            inner,
        ));
    }
    Formula::big_and(parts)
}

/// The checkable formula of a compiled run: the root instance's cube DNF
/// pushed through the unravelled tree.
pub fn extracted_formula(
    compiled: &CompiledFibring,
    offset: Option<&RVector>,
    max_cube: usize,
) -> Result<Formula> {
    let phi = characteristic_formula(&compiled.root_instance, offset, max_cube)?;
    Ok(psi_formula(&phi, &compiled.architecture))
}
