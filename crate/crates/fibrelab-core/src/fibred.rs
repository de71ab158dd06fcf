use std::collections::BTreeMap;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::feedforward::{run_network, run_span, LayerSpan, NetworkInstance, NeuralArchitecture};
use crate::linalg::{ActivationSpec, RMatrix, RVector, SegmentKind};

pub type NodeId = String;

/// Edge label: the parent layer whose vector is spliced, and the positions
/// (strictly increasing indices into that layer) receiving the child output.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeLabel {
    pub layer: usize,
    pub positions: Vec<usize>,
}

/// Directed tree of neural architectures. Edges are stored parent -> child.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FibringArchitecture {
    pub root: NodeId,
    pub node_arch: BTreeMap<NodeId, NeuralArchitecture>,
    pub edges: BTreeMap<NodeId, BTreeMap<NodeId, EdgeLabel>>,
}

impl FibringArchitecture {
    pub fn single(root: impl Into<NodeId>, arch: NeuralArchitecture) -> Self {
        let root = root.into();
        let mut node_arch = BTreeMap::new();
        node_arch.insert(root.clone(), arch);
        FibringArchitecture {
            root,
            node_arch,
            edges: BTreeMap::new(),
        }
    }

    pub fn add_node(&mut self, parent: &str, child: impl Into<NodeId>, arch: NeuralArchitecture, label: EdgeLabel) {
        let child = child.into();
        self.node_arch.insert(child.clone(), arch);
        self.edges
            .entry(parent.to_string())
            .or_default()
            .insert(child, label);
    }

    /// Children of `node` in canonical stage order: ascending edge layer,
    /// then position set, then child id.
    pub fn children(&self, node: &str) -> Vec<(NodeId, EdgeLabel)> {
        let mut out: Vec<(NodeId, EdgeLabel)> = self
            .edges
            .get(node)
            .map(|m| m.iter().map(|(c, l)| (c.clone(), l.clone())).collect())
            .unwrap_or_default();
        out.sort_by(|a, b| {
            (a.1.layer, &a.1.positions, &a.0).cmp(&(b.1.layer, &b.1.positions, &b.0))
        });
        out
    }

    pub fn is_leaf(&self, node: &str) -> bool {
        self.edges.get(node).map(|m| m.is_empty()).unwrap_or(true)
    }

    /// child -> parent map.
    pub fn parents(&self) -> BTreeMap<NodeId, NodeId> {
        let mut out = BTreeMap::new();
        for (p, cs) in &self.edges {
            for c in cs.keys() {
                out.insert(c.clone(), p.clone());
            }
        }
        out
    }

    /// Nodes in breadth-first order from the root (parents before children).
    pub fn bfs_order(&self) -> Vec<NodeId> {
        let mut order = vec![self.root.clone()];
        let mut i = 0;
        while i < order.len() {
            let node = order[i].clone();
            for (c, _) in self.children(&node) {
                order.push(c);
            }
            i += 1;
        }
        order
    }

    /// Hard structural validation: errors on anything that is not a directed
    /// tree covering exactly the declared nodes.
    fn validate_structure(&self) -> Result<()> {
        if !self.node_arch.contains_key(&self.root) {
            return Err(Error::Structure(format!(
                "root {} has no architecture",
                self.root
            )));
        }
        let mut seen_child: BTreeMap<&NodeId, &NodeId> = BTreeMap::new();
        for (p, cs) in &self.edges {
            if !self.node_arch.contains_key(p) {
                return Err(Error::Structure(format!("edge parent {p} is not a node")));
            }
            for c in cs.keys() {
                if !self.node_arch.contains_key(c) {
                    return Err(Error::Structure(format!("edge child {c} is not a node")));
                }
                if c == &self.root {
                    return Err(Error::Structure("root cannot be a child".into()));
                }
                if let Some(other) = seen_child.insert(c, p) {
                    return Err(Error::Structure(format!(
                        "node {c} has two parents: {other} and {p}"
                    )));
                }
            }
        }
        let reach = self.bfs_order();
        if reach.len() != self.node_arch.len() {
            return Err(Error::Structure(format!(
                "{} of {} nodes reachable from root (orphans or cycle)",
                reach.len(),
                self.node_arch.len()
            )));
        }
        Ok(())
    }
}

/// Soft findings from `validate_architecture`, plus the root-class flag:
/// `in_class_f` is true when the root architecture has exactly two layers,
/// identity-only hidden activations, scalar output, and every edge leaving
/// the root carries one common layer number.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<String>,
    pub in_class_f: bool,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

pub fn validate_architecture(f: &FibringArchitecture) -> Result<ValidationReport> {
    f.validate_structure()?;
    let mut issues = Vec::new();
    for (node, arch) in &f.node_arch {
        if let Err(e) = arch.validate() {
            issues.push(format!("node {node}: {e}"));
        }
    }
    for (p, cs) in &f.edges {
        let parch = &f.node_arch[p];
        let mut by_layer: BTreeMap<usize, Vec<(usize, &NodeId)>> = BTreeMap::new();
        for (c, label) in cs {
            if label.layer < 1 || label.layer > parch.layer_count() {
                issues.push(format!(
                    "edge {p}->{c}: layer {} outside 1..={}",
                    label.layer,
                    parch.layer_count()
                ));
                continue;
            }
            let dim = parch.dims[label.layer];
            if label.positions.windows(2).any(|w| w[0] >= w[1]) {
                issues.push(format!(
                    "edge {p}->{c}: positions must be strictly increasing"
                ));
            }
            if label.positions.iter().any(|&i| i >= dim) {
                issues.push(format!(
                    "edge {p}->{c}: position beyond layer {} dim {}",
                    label.layer, dim
                ));
            }
            let child_out = f.node_arch[c].output_dim();
            if label.positions.len() != child_out {
                issues.push(format!(
                    "edge {p}->{c}: {} positions for child output dim {}",
                    label.positions.len(),
                    child_out
                ));
            }
            for &i in &label.positions {
                by_layer.entry(label.layer).or_default().push((i, c));
            }
        }
        for (layer, mut poss) in by_layer {
            poss.sort();
            for w in poss.windows(2) {
                if w[0].0 == w[1].0 {
                    issues.push(format!(
                        "node {p} layer {layer}: position {} claimed by both {} and {}",
                        w[0].0, w[0].1, w[1].1
                    ));
                }
            }
        }
    }
    let root_arch = &f.node_arch[f.root.as_str()];
    let root_edges: Vec<&EdgeLabel> = f
        .edges
        .get(&f.root)
        .map(|m| m.values().collect())
        .unwrap_or_default();
    let uniform_root_layer = root_edges
        .windows(2)
        .all(|w| w[0].layer == w[1].layer);
    let in_class_f = root_arch.layer_count() == 2
        && root_arch
            .activations
            .iter()
            .all(|a| a.is_identity_only())
        && root_arch.output_dim() == 1
        && uniform_root_layer;
    Ok(ValidationReport { issues, in_class_f })
}

/// Compact attention-gadget payload: expands on demand into a self-fibring
/// child instance whose hidden activation performs the hardmax-weighted
/// block combination.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GatGadgetData {
    pub block_count: usize,
    pub block_dim: usize,
    pub attention_vector: RVector,
    pub bias: RVector,
}

impl GatGadgetData {
    /// 2-layer instance on dimension block_count·block_dim: identity affine
    /// into an AttentionCombine activation, then projection of the first
    /// block_dim coordinates.
    pub fn attention_instance(&self) -> Result<NetworkInstance> {
        let full = self.block_count * self.block_dim;
        let spec = ActivationSpec::single(
            full,
            SegmentKind::AttentionCombine {
                block_count: self.block_count,
                block_dim: self.block_dim,
                attention_vector: self.attention_vector.clone(),
                bias: self.bias.clone(),
            },
        );
        let arch = NeuralArchitecture::new(vec![full, full, self.block_dim], vec![spec])?;
        let mut proj = RMatrix::zeros(self.block_dim, full);
        for i in 0..self.block_dim {
            proj.set(i, i, crate::rational::Rational::one());
        }
        NetworkInstance::new(
            arch,
            vec![RMatrix::identity(full), proj],
            vec![RVector::zeros(full), RVector::zeros(self.block_dim)],
        )
    }
}

/// Closed datatype of fibring rules, so fibred networks stay serializable
/// and model construction can enumerate rule behavior.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FibringRule {
    /// Exact-match lookup table; inputs outside the table are errors.
    Table(BTreeMap<RVector, (NetworkInstance, RVector)>),
    /// Ignores the input and always produces the same (instance, input).
    Constant(NetworkInstance, RVector),
    /// Produces a fixed instance and passes the incoming vector through.
    SelfFibre(NetworkInstance),
    /// Self-fibring with the instance built from compact attention data.
    GatGadget(GatGadgetData),
}

pub fn apply_rule(rule: &FibringRule, x: &RVector) -> Result<(NetworkInstance, RVector)> {
    match rule {
        FibringRule::Table(map) => map
            .get(x)
            .cloned()
            .ok_or_else(|| Error::RuleDomain { vector: x.clone() }),
        FibringRule::Constant(n, y) => Ok((n.clone(), y.clone())),
        FibringRule::SelfFibre(n) => Ok((n.clone(), x.clone())),
        FibringRule::GatGadget(g) => Ok((g.attention_instance()?, x.clone())),
    }
}

// Serde form: { "table": { "<vector key>": {"instance":..,"input":..} } }
// | { "constant": {"instance":..,"input":..} }
// | { "self_fibre": {"instance":..} }
// | { "gat_gadget": {..} }
#[derive(Serialize, Deserialize)]
struct InstanceInput {
    instance: NetworkInstance,
    input: RVector,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RuleRepr {
    Table(BTreeMap<String, InstanceInput>),
    Constant(InstanceInput),
    SelfFibre { instance: NetworkInstance },
    GatGadget(GatGadgetData),
}

impl Serialize for FibringRule {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = match self {
            FibringRule::Table(map) => RuleRepr::Table(
                map.iter()
                    .map(|(k, (n, y))| {
                        (
                            k.key(),
                            InstanceInput {
                                instance: n.clone(),
                                input: y.clone(),
                            },
                        )
                    })
                    .collect(),
            ),
            FibringRule::Constant(n, y) => RuleRepr::Constant(InstanceInput {
                instance: n.clone(),
                input: y.clone(),
            }),
            FibringRule::SelfFibre(n) => RuleRepr::SelfFibre {
                instance: n.clone(),
            },
            FibringRule::GatGadget(g) => RuleRepr::GatGadget(g.clone()),
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FibringRule {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        Ok(match RuleRepr::deserialize(deserializer)? {
            RuleRepr::Table(map) => {
                let mut out = BTreeMap::new();
                for (k, v) in map {
                    let key = RVector::from_key(&k)
                        .map_err(|e| de::Error::custom(format!("table key {k:?}: {e}")))?;
                    out.insert(key, (v.instance, v.input));
                }
                FibringRule::Table(out)
            }
            RuleRepr::Constant(v) => FibringRule::Constant(v.instance, v.input),
            RuleRepr::SelfFibre { instance } => FibringRule::SelfFibre(instance),
            RuleRepr::GatGadget(g) => FibringRule::GatGadget(g),
        })
    }
}

/// A network instance at the root of a fibring architecture, plus one rule
/// per edge.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FibredNetwork {
    pub root_instance: NetworkInstance,
    pub architecture: FibringArchitecture,
    pub rules: BTreeMap<NodeId, BTreeMap<NodeId, FibringRule>>,
}

impl FibredNetwork {
    pub fn rule(&self, parent: &str, child: &str) -> Result<&FibringRule> {
        self.rules
            .get(parent)
            .and_then(|m| m.get(child))
            .ok_or_else(|| Error::Structure(format!("no rule for edge {parent}->{child}")))
    }

    pub fn validate(&self) -> Result<ValidationReport> {
        let report = validate_architecture(&self.architecture)?;
        self.root_instance.validate()?;
        if self.root_instance.architecture != self.architecture.node_arch[&self.architecture.root]
        {
            return Err(Error::Structure(
                "root instance does not match the root architecture".into(),
            ));
        }
        for (p, cs) in &self.architecture.edges {
            for c in cs.keys() {
                self.rule(p, c)?;
            }
        }
        Ok(report)
    }
}

/// Stage tuple recorded while evaluating one node's children.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub child: NodeId,
    pub layer: usize,
    pub positions: Vec<usize>,
    pub x: RVector,
    pub instance: NetworkInstance,
    pub y: RVector,
    pub child_output: RVector,
    pub h: RVector,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeTrace {
    /// Input handed to this node's instance (the fibred input at the root).
    pub input: RVector,
    /// Instance used at this node (root instance, or rule-produced).
    pub instance: NetworkInstance,
    pub stages: Vec<StageRecord>,
    pub output: RVector,
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalTrace {
    pub nodes: BTreeMap<NodeId, NodeTrace>,
}

fn eval_node(
    net: &FibredNetwork,
    node: &str,
    instance: &NetworkInstance,
    input: &RVector,
    trace: &mut EvalTrace,
) -> Result<RVector> {
    let mut inner = || -> Result<RVector> {
        let arch = &net.architecture.node_arch[node];
        if instance.architecture != *arch {
            return Err(Error::Structure(format!(
                "instance at {node} does not match the node architecture"
            )));
        }
        let children = net.architecture.children(node);
        if children.is_empty() {
            let output = run_network(instance, input)?;
            trace.nodes.insert(
                node.to_string(),
                NodeTrace {
                    input: input.clone(),
                    instance: instance.clone(),
                    stages: Vec::new(),
                    output: output.clone(),
                },
            );
            return Ok(output);
        }
        let layers = instance.architecture.layer_count();
        let mut stages = Vec::with_capacity(children.len());
        let mut prev_h: Option<RVector> = None;
        let mut prev_layer = 0usize;
        for (child, label) in &children {
            let x_i = match &prev_h {
                None => run_span(instance, LayerSpan::new(0, label.layer), input)?,
                Some(h) => run_span(instance, LayerSpan::new(prev_layer, label.layer), h)?,
            };
            let (child_instance, y_i) = apply_rule(net.rule(node, child)?, &x_i)?;
            let child_output = eval_node(net, child, &child_instance, &y_i, trace)?;
            if child_output.dim() != label.positions.len() {
                return Err(Error::dim(
                    "splice",
                    format!(
                        "child {child} produced dim {} for {} positions",
                        child_output.dim(),
                        label.positions.len()
                    ),
                ));
            }
            let mut h_i = x_i.clone();
            for (k, &pos) in label.positions.iter().enumerate() {
                h_i.0[pos] = child_output[k].clone();
            }
            stages.push(StageRecord {
                child: child.clone(),
                layer: label.layer,
                positions: label.positions.clone(),
                x: x_i,
                instance: child_instance,
                y: y_i,
                child_output,
                h: h_i.clone(),
            });
            prev_layer = label.layer;
            prev_h = Some(h_i);
        }
        let h_k = prev_h.expect("at least one stage");
        let output = run_span(instance, LayerSpan::new(prev_layer, layers), &h_k)?;
        trace.nodes.insert(
            node.to_string(),
            NodeTrace {
                input: input.clone(),
                instance: instance.clone(),
                stages,
                output: output.clone(),
            },
        );
        Ok(output)
    };
    inner().map_err(|e| e.at_node(node))
}

/// Evaluate the subtree rooted at `node`, using `instance` at that node.
/// Every child edge applies its rule to the stage vector afresh.
pub fn evaluate_subtree(
    net: &FibredNetwork,
    node: &str,
    instance: &NetworkInstance,
    input: &RVector,
) -> Result<(RVector, EvalTrace)> {
    let mut trace = EvalTrace::default();
    let out = eval_node(net, node, instance, input, &mut trace)?;
    Ok((out, trace))
}

/// Evaluate the fibred network from its root on `x`.
pub fn evaluate_fibred(net: &FibredNetwork, x: &RVector) -> Result<(RVector, EvalTrace)> {
    evaluate_subtree(net, &net.architecture.root, &net.root_instance, x)
}

/// Strict-positivity classification of the scalar root output.
pub fn classify_fibred(net: &FibredNetwork, x: &RVector) -> Result<bool> {
    let root_out = net.root_instance.architecture.output_dim();
    if root_out != 1 {
        return Err(Error::Shape(format!(
            "fibred classifier needs scalar root output, got dim {root_out}"
        )));
    }
    let (out, _) = evaluate_fibred(net, x)?;
    Ok(out[0].is_positive())
}

/// DOT rendering of the fibring tree with "(layer, positions)" edge labels.
pub fn architecture_dot(f: &FibringArchitecture) -> String {
    let mut out = String::from("digraph fibring {\n  rankdir=TB;\n");
    for (node, arch) in &f.node_arch {
        let dims: Vec<String> = arch.dims.iter().map(|d| d.to_string()).collect();
        out.push_str(&format!(
            "  \"{}\" [label=\"{}\\n[{}]\"];\n",
            node,
            node,
            dims.join(",")
        ));
    }
    for (p, cs) in &f.edges {
        for (c, label) in cs {
            let pos: Vec<String> = label.positions.iter().map(|p| p.to_string()).collect();
            out.push_str(&format!(
                "  \"{}\" -> \"{}\" [label=\"({}, {{{}}})\"];\n",
                p,
                c,
                label.layer,
                pos.join(",")
            ));
        }
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedforward::NeuralArchitecture;

    fn identity_2layer(n: usize) -> NetworkInstance {
        let arch =
            NeuralArchitecture::new(vec![n, n, n], vec![ActivationSpec::identity(n)]).unwrap();
        NetworkInstance::new(
            arch,
            vec![RMatrix::identity(n), RMatrix::identity(n)],
            vec![RVector::zeros(n), RVector::zeros(n)],
        )
        .unwrap()
    }

    fn single_node_net(instance: NetworkInstance) -> FibredNetwork {
        let architecture =
            FibringArchitecture::single("u", instance.architecture.clone());
        FibredNetwork {
            root_instance: instance,
            architecture,
            rules: BTreeMap::new(),
        }
    }

    /// Root 2-layer identity with one constant child spliced at layer 1.
    fn constant_child_net() -> FibredNetwork {
        let root = identity_2layer(1);
        let mut architecture = FibringArchitecture::single("u", root.architecture.clone());
        architecture.add_node(
            "u",
            "c",
            NetworkInstance::identity(1).architecture.clone(),
            EdgeLabel {
                layer: 1,
                positions: vec![0],
            },
        );
        let mut rules: BTreeMap<NodeId, BTreeMap<NodeId, FibringRule>> = BTreeMap::new();
        rules.entry("u".into()).or_default().insert(
            "c".into(),
            FibringRule::Constant(NetworkInstance::identity(1), RVector::from_ints(&[7])),
        );
        FibredNetwork {
            root_instance: root,
            architecture,
            rules,
        }
    }

    #[test]
    fn single_node_is_run_network() {
        let net = single_node_net(identity_2layer(2));
        let x = RVector::from_ints(&[3, -1]);
        let (out, trace) = evaluate_fibred(&net, &x).unwrap();
        assert_eq!(out, run_network(&net.root_instance, &x).unwrap());
        assert_eq!(trace.nodes.len(), 1);
        assert!(trace.nodes["u"].stages.is_empty());
    }

    #[test]
    fn constant_child_overrides_position() {
        let net = constant_child_net();
        let (out, trace) = evaluate_fibred(&net, &RVector::from_ints(&[3])).unwrap();
        assert_eq!(out, RVector::from_ints(&[7]));
        let stage = &trace.nodes["u"].stages[0];
        assert_eq!(stage.x, RVector::from_ints(&[3]));
        assert_eq!(stage.h, RVector::from_ints(&[7]));
    }

    #[test]
    fn child_at_output_layer_passes_through() {
        // Child spliced over the whole output layer: fibred output equals the
        // child output verbatim.
        let root = identity_2layer(1);
        let mut architecture = FibringArchitecture::single("u", root.architecture.clone());
        architecture.add_node(
            "u",
            "c",
            NetworkInstance::identity(1).architecture.clone(),
            EdgeLabel {
                layer: 2,
                positions: vec![0],
            },
        );
        let mut rules: BTreeMap<NodeId, BTreeMap<NodeId, FibringRule>> = BTreeMap::new();
        rules.entry("u".into()).or_default().insert(
            "c".into(),
            FibringRule::Constant(NetworkInstance::identity(1), RVector::from_ints(&[9])),
        );
        let net = FibredNetwork {
            root_instance: root,
            architecture,
            rules,
        };
        let (out, _) = evaluate_fibred(&net, &RVector::from_ints(&[3])).unwrap();
        assert_eq!(out, RVector::from_ints(&[9]));
    }

    #[test]
    fn self_fibre_passes_vector() {
        let n = NetworkInstance::identity(2);
        let x = RVector::from_ints(&[4, 5]);
        let (inst, y) = apply_rule(&FibringRule::SelfFibre(n.clone()), &x).unwrap();
        assert_eq!(inst, n);
        assert_eq!(y, x);
    }

    #[test]
    fn table_missing_key_is_rule_domain_error() {
        let mut table = BTreeMap::new();
        table.insert(
            RVector::from_ints(&[0, 1]),
            (NetworkInstance::identity(1), RVector::from_ints(&[1])),
        );
        let rule = FibringRule::Table(table);
        let err = apply_rule(&rule, &RVector::from_ints(&[1, 0])).unwrap_err();
        assert!(matches!(err, Error::RuleDomain { .. }));
    }

    #[test]
    fn rule_errors_carry_tree_path() {
        let mut net = constant_child_net();
        net.rules.get_mut("u").unwrap().insert(
            "c".into(),
            FibringRule::Table(BTreeMap::new()),
        );
        let err = evaluate_fibred(&net, &RVector::from_ints(&[3])).unwrap_err();
        assert_eq!(err.trace_path(), &["u".to_string()]);
        assert!(matches!(err.root(), Error::RuleDomain { .. }));
    }

    #[test]
    fn equal_layer_children_are_order_independent() {
        // Two children at layer 1 with disjoint positions; renaming the
        // children flips the canonical order but not the result.
        let build = |first: &str, second: &str| {
            let root = identity_2layer(2);
            let mut architecture = FibringArchitecture::single("u", root.architecture.clone());
            architecture.add_node(
                "u",
                first,
                NetworkInstance::identity(1).architecture.clone(),
                EdgeLabel {
                    layer: 1,
                    positions: vec![0],
                },
            );
            architecture.add_node(
                "u",
                second,
                NetworkInstance::identity(1).architecture.clone(),
                EdgeLabel {
                    layer: 1,
                    positions: vec![1],
                },
            );
            let mut rules: BTreeMap<NodeId, BTreeMap<NodeId, FibringRule>> = BTreeMap::new();
            rules.entry("u".into()).or_default().insert(
                first.into(),
                FibringRule::Constant(NetworkInstance::identity(1), RVector::from_ints(&[5])),
            );
            rules.entry("u".into()).or_default().insert(
                second.into(),
                FibringRule::Constant(NetworkInstance::identity(1), RVector::from_ints(&[6])),
            );
            FibredNetwork {
                root_instance: root,
                architecture,
                rules,
            }
        };
        let x = RVector::from_ints(&[0, 0]);
        let (out_ab, _) = evaluate_fibred(&build("a", "b"), &x).unwrap();
        let (out_ba, _) = evaluate_fibred(&build("b", "a"), &x).unwrap();
        // First child writes position 0 in both nets.
        assert_eq!(out_ab, RVector::from_ints(&[5, 6]));
        assert_eq!(out_ba, RVector::from_ints(&[5, 6]));
    }

    #[test]
    fn trace_h_and_x_agree_off_positions() {
        let net = constant_child_net();
        let (_, trace) = evaluate_fibred(&net, &RVector::from_ints(&[3])).unwrap();
        for node in trace.nodes.values() {
            for stage in &node.stages {
                for i in 0..stage.x.dim() {
                    if !stage.positions.contains(&i) {
                        assert_eq!(stage.x[i], stage.h[i]);
                    }
                }
            }
        }
    }

    #[test]
    fn evaluation_is_deterministic() {
        let net = constant_child_net();
        let x = RVector::from_ints(&[3]);
        let a = evaluate_fibred(&net, &x).unwrap();
        let b = evaluate_fibred(&net, &x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn validate_single_linear_root_is_class_f() {
        let arch = NeuralArchitecture::linear(vec![3, 4, 1]).unwrap();
        let f = FibringArchitecture::single("u", arch);
        let report = validate_architecture(&f).unwrap();
        assert!(report.is_valid());
        assert!(report.in_class_f);
    }

    #[test]
    fn validate_flags_overlapping_positions() {
        let root = identity_2layer(2);
        let mut f = FibringArchitecture::single("u", root.architecture.clone());
        let leaf = NetworkInstance::identity(1).architecture.clone();
        f.add_node(
            "u",
            "a",
            leaf.clone(),
            EdgeLabel {
                layer: 1,
                positions: vec![0],
            },
        );
        f.add_node(
            "u",
            "b",
            leaf,
            EdgeLabel {
                layer: 1,
                positions: vec![0],
            },
        );
        let report = validate_architecture(&f).unwrap();
        assert!(!report.is_valid());
        assert!(report.issues.iter().any(|i| i.contains("claimed by both")));
    }

    #[test]
    fn validate_rejects_two_parents() {
        let root = identity_2layer(1);
        let mut f = FibringArchitecture::single("u", root.architecture.clone());
        let leaf = NetworkInstance::identity(1).architecture.clone();
        f.add_node(
            "u",
            "a",
            leaf.clone(),
            EdgeLabel {
                layer: 1,
                positions: vec![0],
            },
        );
        f.add_node(
            "u",
            "b",
            leaf,
            EdgeLabel {
                layer: 2,
                positions: vec![0],
            },
        );
        // Second parent for "a".
        f.edges.entry("b".into()).or_default().insert(
            "a".into(),
            EdgeLabel {
                layer: 1,
                positions: vec![0],
            },
        );
        assert!(matches!(
            validate_architecture(&f),
            Err(Error::Structure(_))
        ));
    }

    #[test]
    fn gat_gadget_matches_manual_attention_instance() {
        let gadget = GatGadgetData {
            block_count: 3,
            block_dim: 1,
            attention_vector: RVector::zeros(2),
            bias: RVector::zeros(1),
        };
        let inst = gadget.attention_instance().unwrap();
        // Blocks (5, 9, 3): ties, so output is (5 + 3) / 2 = 4.
        let out = run_network(&inst, &RVector::from_ints(&[5, 9, 3])).unwrap();
        assert_eq!(out, RVector::from_ints(&[4]));
        // The rule behaves as self-fibring with that instance.
        let x = RVector::from_ints(&[5, 9, 3]);
        let (gi, gy) = apply_rule(&FibringRule::GatGadget(gadget), &x).unwrap();
        assert_eq!(gi, inst);
        assert_eq!(gy, x);
    }

    #[test]
    fn fibred_json_round_trip() {
        let mut net = constant_child_net();
        let mut table = BTreeMap::new();
        table.insert(
            RVector::from_ints(&[3]),
            (NetworkInstance::identity(1), RVector::from_ints(&[7])),
        );
        net.rules
            .get_mut("u")
            .unwrap()
            .insert("c".into(), FibringRule::Table(table));
        let j = serde_json::to_string(&net).unwrap();
        let back: FibredNetwork = serde_json::from_str(&j).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn classify_fibred_strict() {
        let affine = |w: i64, b: i64| {
            NetworkInstance::affine(
                RMatrix::from_ints(&[&[w]]),
                RVector::from_ints(&[b]),
            )
            .unwrap()
        };
        let net = single_node_net(affine(1, 0));
        assert!(classify_fibred(&net, &RVector(vec![crate::rational::Rational::new(1, 2)])).unwrap());
        assert!(!classify_fibred(&net, &RVector::from_ints(&[0])).unwrap());
        assert!(!classify_fibred(&net, &RVector::from_ints(&[-1])).unwrap());
    }
}
