use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedforward::{run_span, LayerSpan, NetworkInstance};
use crate::fibred::{evaluate_subtree, FibredNetwork, NodeId};
use crate::linalg::RVector;
use crate::modal::{ComponentId, FibredModel, KripkeComponent, LayerTag, WorldId};
use crate::rational::Rational;

pub const DEFAULT_MAX_CUBE: usize = 16;

/// Bijection between one component's worlds and the vectors they stand for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MapRepr", into = "MapRepr")]
pub struct WorldVectorMap {
    pub component: ComponentId,
    pub world_to_vec: BTreeMap<WorldId, RVector>,
    pub vec_to_world: BTreeMap<RVector, WorldId>,
}

#[derive(Serialize, Deserialize)]
struct MapRepr {
    component: ComponentId,
    pairs: BTreeMap<WorldId, RVector>,
}

impl From<WorldVectorMap> for MapRepr {
    fn from(m: WorldVectorMap) -> Self {
        MapRepr {
            component: m.component,
            pairs: m.world_to_vec,
        }
    }
}

impl TryFrom<MapRepr> for WorldVectorMap {
    type Error = Error;

    fn try_from(r: MapRepr) -> Result<Self> {
        let mut m = WorldVectorMap::new(r.component);
        for (w, v) in r.pairs {
            m.insert(w, v)?;
        }
        Ok(m)
    }
}

impl WorldVectorMap {
    pub fn new(component: ComponentId) -> Self {
        WorldVectorMap {
            component,
            world_to_vec: BTreeMap::new(),
            vec_to_world: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, world: WorldId, vec: RVector) -> Result<()> {
        if self.world_to_vec.contains_key(&world) || self.vec_to_world.contains_key(&vec) {
            return Err(Error::Structure(format!(
                "world/vector pair ({world}, {vec}) breaks bijectivity in {}",
                self.component
            )));
        }
        self.vec_to_world.insert(vec.clone(), world.clone());
        self.world_to_vec.insert(world, vec);
        Ok(())
    }

    pub fn vector_of(&self, world: &str) -> Option<&RVector> {
        self.world_to_vec.get(world)
    }

    pub fn world_of(&self, vec: &RVector) -> Option<&WorldId> {
        self.vec_to_world.get(vec)
    }
}

/// A fibred Kripke model together with the world/vector bijections, the
/// per-node instances that fix the relations, and the cube base point.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompatibleModel {
    pub model: FibredModel,
    pub maps: BTreeMap<ComponentId, WorldVectorMap>,
    pub instances: BTreeMap<NodeId, NetworkInstance>,
    /// Base point c of the input cube {c_i, c_i + 1}^n; all zero in the
    /// Boolean case.
    pub offset: RVector,
}

impl CompatibleModel {
    pub fn root_input_component(&self) -> ComponentId {
        ComponentId::input(self.model.root.clone())
    }

    /// Root-In world standing for input vector z.
    pub fn root_world(&self, z: &RVector) -> Option<&WorldId> {
        self.maps
            .get(&self.root_input_component())
            .and_then(|m| m.world_of(z))
    }
}

#[derive(Clone, Debug)]
pub struct BuildOptions {
    /// Cube base point; zeros when absent.
    pub offset: Option<RVector>,
    /// Guard on the root input dimension n (the builder enumerates 2^n).
    pub max_cube: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            offset: None,
            max_cube: DEFAULT_MAX_CUBE,
        }
    }
}

/// All 2^n points of {c_i, c_i + 1}^n in counting order: point k has
/// coordinate i equal to c_i plus bit i of k.
pub fn cube_points(offset: &RVector) -> Vec<RVector> {
    let n = offset.dim();
    (0..1usize << n)
        .map(|k| {
            RVector(
                (0..n)
                    .map(|i| {
                        if (k >> i) & 1 == 1 {
                            &offset[i] + &Rational::one()
                        } else {
                            offset[i].clone()
                        }
                    })
                    .collect(),
            )
        })
        .collect()
}

/// Layer span whose kernel defines a component's relation: inputs run the
/// whole network, pre-activations at layer l run l -> L.
fn component_span(cid: &ComponentId, instance: &NetworkInstance) -> Result<LayerSpan> {
    let layers = instance.architecture.layer_count();
    match cid.layer {
        LayerTag::In => Ok(LayerSpan::new(0, layers)),
        LayerTag::Layer(l) => {
            if l < 1 || l > layers {
                return Err(Error::Structure(format!(
                    "component {cid} names layer {l} outside 1..={layers}"
                )));
            }
            Ok(LayerSpan::new(l, layers))
        }
    }
}

pub fn build_compatible(net: &FibredNetwork, x: &RVector) -> Result<CompatibleModel> {
    build_compatible_with(net, x, &BuildOptions::default())
}

/// Construct the explicit compatible model for (net, x).
///
/// The root input component holds one world per cube point. Running the
/// network on every cube point collects the stage vectors h_i at (v, l_i)
/// and y_i at (child, In); running it on x fixes the per-node instances.
/// Each node's input worlds are then replayed through its subtree with
/// that fixed instance to lay down jumps, provenance, and the recursive
/// valuations; replay vectors missing from the first sweep become worlds
/// of their own.
pub fn build_compatible_with(
    net: &FibredNetwork,
    x: &RVector,
    opts: &BuildOptions,
) -> Result<CompatibleModel> {
    let report = net.validate()?;
    if !report.is_valid() {
        return Err(Error::Structure(format!(
            "fibred network is malformed: {}",
            report.issues.join("; ")
        )));
    }
    let n = net.root_instance.architecture.input_dim();
    if n > opts.max_cube {
        return Err(Error::CubeGuard {
            n,
            max: opts.max_cube,
        });
    }
    let offset = match &opts.offset {
        Some(c) => {
            if c.dim() != n {
                return Err(Error::dim(
                    "cube offset",
                    format!("offset dim {} but root input dim {n}", c.dim()),
                ));
            }
            c.clone()
        }
        None => RVector::zeros(n),
    };
    let cube = cube_points(&offset);
    if !cube.contains(x) {
        return Err(Error::Shape(format!(
            "x = {x} is not a point of the input cube with base {offset}"
        )));
    }

    let root = net.architecture.root.clone();
    let bfs = net.architecture.bfs_order();

    // Sweep 1: run the fibred network on every cube point, collecting the
    // de-duplicated stage vectors per component and, on x, the instances.
    let mut comp_vecs: BTreeMap<ComponentId, BTreeSet<RVector>> = BTreeMap::new();
    let root_in = ComponentId::input(root.clone());
    comp_vecs.insert(root_in.clone(), cube.iter().cloned().collect());
    let mut instances: BTreeMap<NodeId, NetworkInstance> = BTreeMap::new();
    for z in &cube {
        let (_, trace) = evaluate_subtree(net, &root, &net.root_instance, z)
            .map_err(|e| e.at_node(&format!("x={}", z.key())))?;
        for (node, nt) in &trace.nodes {
            for st in &nt.stages {
                comp_vecs
                    .entry(ComponentId::layer(node.clone(), st.layer))
                    .or_default()
                    .insert(st.h.clone());
                comp_vecs
                    .entry(ComponentId::input(st.child.clone()))
                    .or_default()
                    .insert(st.y.clone());
            }
        }
        if z == x {
            for (node, nt) in &trace.nodes {
                instances.insert(node.clone(), nt.instance.clone());
            }
        }
    }

    // Sweep 2: per node in tree order, replay every input vector through
    // the subtree with the fixed instance, recording (at the vector level)
    // jumps, provenance generators, and valuation links. Replays can mint
    // vectors the first sweep never reached; they join the world sets.
    type VecJumpMap = BTreeMap<RVector, BTreeMap<ComponentId, RVector>>;
    let mut jumps_of: BTreeMap<NodeId, VecJumpMap> = BTreeMap::new();
    // (component, h vector) -> generating input vectors of the same node.
    let mut gens_of: BTreeMap<(ComponentId, RVector), BTreeSet<RVector>> = BTreeMap::new();
    // (child In component, y vector) -> (parent last-stage component, h_k).
    let mut links_of: BTreeMap<(ComponentId, RVector), BTreeSet<(ComponentId, RVector)>> =
        BTreeMap::new();
    // (node, input vector) -> that replay's last stage, for anchored runs.
    let mut run_last: BTreeMap<(NodeId, RVector), (ComponentId, RVector)> = BTreeMap::new();
    for node in &bfs {
        if net.architecture.is_leaf(node) {
            continue;
        }
        let inputs: Vec<RVector> = comp_vecs
            .get(&ComponentId::input(node.clone()))
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_default();
        let instance = instances
            .get(node)
            .ok_or_else(|| Error::Structure(format!("no instance collected at {node}")))?
            .clone();
        for vec in inputs {
            let (_, trace) = evaluate_subtree(net, node, &instance, &vec)
                .map_err(|e| e.at_node(&format!("input={}", vec.key())))?;
            let nt = &trace.nodes[node.as_str()];
            let last = nt.stages.last().expect("non-leaf node has stages");
            let last_cid = ComponentId::layer(node.clone(), last.layer);
            let last_h = last.h.clone();
            run_last.insert(
                (node.clone(), vec.clone()),
                (last_cid.clone(), last_h.clone()),
            );
            for st in &nt.stages {
                let hcid = ComponentId::layer(node.clone(), st.layer);
                let ycid = ComponentId::input(st.child.clone());
                comp_vecs.entry(hcid.clone()).or_default().insert(st.h.clone());
                comp_vecs.entry(ycid.clone()).or_default().insert(st.y.clone());
                let tgts = jumps_of
                    .entry(node.clone())
                    .or_default()
                    .entry(vec.clone())
                    .or_default();
                // Same-layer siblings share a jump slot; the later stage
                // in canonical order wins.
                tgts.insert(hcid.clone(), st.h.clone());
                tgts.insert(ycid.clone(), st.y.clone());
                gens_of
                    .entry((hcid, st.h.clone()))
                    .or_default()
                    .insert(vec.clone());
                links_of
                    .entry((ycid, st.y.clone()))
                    .or_default()
                    .insert((last_cid.clone(), last_h.clone()));
            }
        }
    }

    // World ids: per component, ascending vector order.
    let mut maps: BTreeMap<ComponentId, WorldVectorMap> = BTreeMap::new();
    let mut model = FibredModel::new(root.clone());
    model.tree = net.architecture.parents();
    for (cid, vecs) in &comp_vecs {
        let mut wm = WorldVectorMap::new(cid.clone());
        let comp = model.component_mut(cid);
        for (idx, vec) in vecs.iter().enumerate() {
            let id = format!("{}:{}:{:06}", cid.node, cid.layer, idx);
            comp.worlds.insert(id.clone());
            comp.valuation.insert(id.clone(), BTreeSet::new());
            wm.insert(id, vec.clone())?;
        }
        maps.insert(cid.clone(), wm);
    }

    // Relations: kernel of the fixed instance's span over each component.
    for (cid, wm) in &maps {
        let instance = instances
            .get(&cid.node)
            .ok_or_else(|| Error::Structure(format!("no instance collected at {}", cid.node)))?;
        let span = component_span(cid, instance)?;
        let mut classes: BTreeMap<RVector, Vec<WorldId>> = BTreeMap::new();
        for (w, vec) in &wm.world_to_vec {
            let out = run_span(instance, span, vec).map_err(|e| e.at_node(&cid.to_string()))?;
            classes.entry(out).or_default().push(w.clone());
        }
        let comp = model.component_mut(cid);
        for members in classes.values() {
            for a in members {
                for b in members {
                    comp.relation.insert((a.clone(), b.clone()));
                }
            }
        }
    }

    // Materialize jumps and provenance at the world level.
    for (node, by_vec) in &jumps_of {
        let src = ComponentId::input(node.clone());
        for (vec, tgts) in by_vec {
            let w = maps[&src].world_of(vec).expect("input vector has a world").clone();
            for (tgt, tvec) in tgts {
                let tw = maps[tgt].world_of(tvec).expect("stage vector has a world").clone();
                model.add_jump(&src, &w, tgt, &tw);
            }
        }
    }
    for ((cid, hvec), gen_vecs) in &gens_of {
        let w = maps[cid].world_of(hvec).expect("h vector has a world").clone();
        let in_cid = ComponentId::input(cid.node.clone());
        for gvec in gen_vecs {
            let gw = maps[&in_cid].world_of(gvec).expect("generator has a world").clone();
            model.add_generator(cid, &w, gvec.key(), gw);
        }
    }

    // Valuations, recursively from the root input component.
    {
        let comp = model.component_mut(&root_in);
        for (w, z) in &maps[&root_in].world_to_vec {
            let bits: BTreeSet<usize> = (0..n)
                .filter(|&i| z[i] == &offset[i] + &Rational::one())
                .map(|i| i + 1)
                .collect();
            comp.valuation.insert(w.clone(), bits);
        }
    }
    // The run anchored at the build input gets valuation precedence on its
    // child input worlds: those are the worlds the anchored compatibility
    // conditions compare against the run's final pre-activation world.
    let mut anchored: BTreeMap<NodeId, RVector> = BTreeMap::new();
    anchored.insert(root.clone(), x.clone());
    for node in &bfs {
        // Pre-activation worlds of this node: union over their generators'
        // input-world valuations.
        let in_cid = ComponentId::input(node.clone());
        let in_vals = model.components[&in_cid].valuation.clone();
        let layer_cids: Vec<ComponentId> = model
            .components
            .keys()
            .filter(|c| c.node == *node && c.layer != LayerTag::In)
            .cloned()
            .collect();
        for cid in &layer_cids {
            let worlds: Vec<WorldId> =
                model.components[cid].worlds.iter().cloned().collect();
            for w in worlds {
                let mut val = BTreeSet::new();
                if let Some(gens) = model.provenance.get(cid).and_then(|m| m.get(&w)) {
                    for g in gens {
                        if let Some(v) = in_vals.get(&g.world) {
                            val.extend(v.iter().copied());
                        }
                    }
                }
                model
                    .component_mut(cid)
                    .valuation
                    .insert(w, val);
            }
        }
        // Child input worlds: union over linked last-stage h_k worlds.
        for (child, _) in net.architecture.children(node) {
            let ycid = ComponentId::input(child.clone());
            let worlds: Vec<(WorldId, RVector)> = maps[&ycid]
                .world_to_vec
                .iter()
                .map(|(w, v)| (w.clone(), v.clone()))
                .collect();
            for (w, yvec) in worlds {
                let mut val = BTreeSet::new();
                if let Some(sources) = links_of.get(&(ycid.clone(), yvec)) {
                    for (hcid, hvec) in sources {
                        let hw = maps[hcid].world_of(hvec).expect("linked h has a world");
                        if let Some(v) = model.components[hcid].valuation.get(hw) {
                            val.extend(v.iter().copied());
                        }
                    }
                }
                model.component_mut(&ycid).valuation.insert(w, val);
            }
        }
        // Anchored overwrite: the child input worlds reached from this
        // node's anchored replay inherit exactly the valuation of that
        // replay's last pre-activation world.
        if let Some(a_in) = anchored.get(node).cloned() {
            if let Some((lcid, lh)) = run_last.get(&(node.clone(), a_in.clone())) {
                let hw = maps[lcid].world_of(lh).expect("anchored h has a world");
                let hval = model.components[lcid].valuation[hw].clone();
                let slots = jumps_of[node][&a_in].clone();
                for (child, _) in net.architecture.children(node) {
                    let ycid = ComponentId::input(child.clone());
                    if let Some(yvec) = slots.get(&ycid) {
                        anchored.insert(child.clone(), yvec.clone());
                        let yw = maps[&ycid].world_of(yvec).expect("anchored y has a world").clone();
                        model.component_mut(&ycid).valuation.insert(yw, hval.clone());
                    }
                }
            }
        }
    }

    Ok(CompatibleModel {
        model,
        maps,
        instances,
        offset,
    })
}

/// True iff the world/vector map is injective and worlds are related
/// exactly when the span maps their vectors to equal outputs.
pub fn check_admissible(
    m: &KripkeComponent,
    n: &NetworkInstance,
    span: LayerSpan,
    map: &WorldVectorMap,
) -> Result<bool> {
    Ok(admissibility_witness(m, n, span, map)?.is_none())
}

/// None when admissible, otherwise a description of the first violation.
fn admissibility_witness(
    m: &KripkeComponent,
    n: &NetworkInstance,
    span: LayerSpan,
    map: &WorldVectorMap,
) -> Result<Option<String>> {
    let mut outs: BTreeMap<&WorldId, RVector> = BTreeMap::new();
    let mut seen: BTreeMap<&RVector, &WorldId> = BTreeMap::new();
    for w in &m.worlds {
        let vec = match map.vector_of(w) {
            Some(v) => v,
            None => return Ok(Some(format!("world {w} has no vector"))),
        };
        if let Some(other) = seen.insert(vec, w) {
            return Ok(Some(format!("worlds {other} and {w} share vector {vec}")));
        }
        outs.insert(w, run_span(n, span, vec)?);
    }
    for a in &m.worlds {
        for b in &m.worlds {
            let related = m.relation.contains(&(a.clone(), b.clone()));
            let equal = outs[a] == outs[b];
            if related != equal {
                return Ok(Some(format!(
                    "pair ({a}, {b}): related={related} but equal-output={equal}"
                )));
            }
        }
    }
    Ok(None)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub condition: String,
    pub pass: bool,
    pub witness: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CompatibilityReport {
    pub entries: Vec<ConditionResult>,
}

impl CompatibilityReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn failures(&self) -> Vec<&ConditionResult> {
        self.entries.iter().filter(|e| !e.pass).collect()
    }

    fn push(&mut self, condition: impl Into<String>, witness: Option<String>) {
        self.entries.push(ConditionResult {
            condition: condition.into(),
            pass: witness.is_none(),
            witness,
        });
    }
}

/// Brute-force verification of the compatibility conditions of (net, x)
/// against a candidate model. Structural gaps are failure entries, never
/// panics or errors.
pub fn check_compatibility(
    c: &CompatibleModel,
    net: &FibredNetwork,
    x: &RVector,
) -> CompatibilityReport {
    let mut report = CompatibilityReport::default();
    let root = &net.architecture.root;
    let root_in = ComponentId::input(root.clone());

    // C0: root instance pinned, root-In worlds biject with the cube, and
    // valuations spell out the cube bits.
    {
        let mut witness = None;
        if c.model.root != *root {
            witness = Some(format!("model root {} is not {root}", c.model.root));
        }
        if witness.is_none() {
            match c.instances.get(root) {
                None => witness = Some("no root instance".into()),
                Some(inst) if *inst != net.root_instance => {
                    witness = Some("root instance differs from the network's".into())
                }
                _ => {}
            }
        }
        if witness.is_none() {
            let n = net.root_instance.architecture.input_dim();
            if c.offset.dim() != n {
                witness = Some(format!(
                    "offset dim {} but root input dim {n}",
                    c.offset.dim()
                ));
            } else {
                let cube: BTreeSet<RVector> = cube_points(&c.offset).into_iter().collect();
                match (c.maps.get(&root_in), c.model.components.get(&root_in)) {
                    (Some(wm), Some(comp)) => {
                        let have: BTreeSet<RVector> =
                            wm.vec_to_world.keys().cloned().collect();
                        if have != cube {
                            witness = Some("root-In vectors are not exactly the cube".into());
                        } else if wm.world_to_vec.len() != comp.worlds.len()
                            || !wm.world_to_vec.keys().all(|w| comp.worlds.contains(w))
                        {
                            witness = Some("root-In map does not cover the worlds".into());
                        } else {
                            'bits: for (w, z) in &wm.world_to_vec {
                                for i in 0..n {
                                    let bit = z[i] == &c.offset[i] + &Rational::one();
                                    let holds = comp.holds(w, i + 1);
                                    if bit != holds {
                                        witness = Some(format!(
                                            "world {w}: bit {} is {bit} but p{} is {holds}",
                                            i,
                                            i + 1
                                        ));
                                        break 'bits;
                                    }
                                }
                            }
                        }
                    }
                    _ => witness = Some("missing root-In component or map".into()),
                }
            }
        }
        report.push("C0", witness);
    }

    // C1: every component admissible for its node instance and span.
    for (cid, comp) in &c.model.components {
        let witness = (|| -> Option<String> {
            let instance = match c.instances.get(&cid.node) {
                Some(i) => i,
                None => return Some(format!("no instance for node {}", cid.node)),
            };
            let wm = match c.maps.get(cid) {
                Some(m) => m,
                None => return Some("no world/vector map".into()),
            };
            if wm.world_to_vec.len() != comp.worlds.len()
                || !comp.worlds.iter().all(|w| wm.world_to_vec.contains_key(w))
            {
                return Some("map does not cover exactly the worlds".into());
            }
            let span = match component_span(cid, instance) {
                Ok(s) => s,
                Err(e) => return Some(e.to_string()),
            };
            match admissibility_witness(comp, instance, span, wm) {
                Ok(w) => w,
                Err(e) => Some(e.to_string()),
            }
        })();
        report.push(format!("C1 {cid}"), witness);
    }

    // C2: per node with children, anchored at the world reached from x by
    // composing stored jumps down the tree.
    let mut anchors: BTreeMap<NodeId, WorldId> = BTreeMap::new();
    let mut anchor_fail: BTreeMap<NodeId, String> = BTreeMap::new();
    match c.root_world(x) {
        Some(w) => {
            anchors.insert(root.clone(), w.clone());
        }
        None => {
            anchor_fail.insert(root.clone(), format!("x = {x} has no root-In world"));
        }
    }
    for node in net.architecture.bfs_order() {
        for (child, _) in net.architecture.children(&node) {
            if let Some(w) = anchors.get(&node) {
                let src = ComponentId::input(node.clone());
                let tgt = ComponentId::input(child.clone());
                match c
                    .model
                    .jumps
                    .get(&src)
                    .and_then(|m| m.get(w))
                    .and_then(|m| m.get(&tgt))
                {
                    Some(tw) => {
                        anchors.insert(child.clone(), tw.clone());
                    }
                    None => {
                        anchor_fail.insert(
                            child.clone(),
                            format!("no stored jump {src}:{w} -> {tgt}"),
                        );
                    }
                }
            } else if let Some(reason) = anchor_fail.get(&node) {
                anchor_fail.insert(child.clone(), format!("anchor of parent missing: {reason}"));
            }
        }
    }
    for node in net.architecture.bfs_order() {
        let children = net.architecture.children(&node);
        if children.is_empty() {
            continue;
        }
        let mut w21 = None;
        let mut w22 = None;
        let mut w23 = None;
        (|| {
            let w = match anchors.get(&node) {
                Some(w) => w.clone(),
                None => {
                    let reason = anchor_fail
                        .get(&node)
                        .cloned()
                        .unwrap_or_else(|| "anchor missing".into());
                    w21 = Some(reason.clone());
                    w22 = Some(reason.clone());
                    w23 = Some(reason);
                    return;
                }
            };
            let src = ComponentId::input(node.clone());
            let instance = match c.instances.get(&node) {
                Some(i) => i.clone(),
                None => {
                    w21 = Some(format!("no instance for node {node}"));
                    return;
                }
            };
            let in_vec = match c.maps.get(&src).and_then(|m| m.vector_of(&w)) {
                Some(v) => v.clone(),
                None => {
                    w21 = Some(format!("anchor world {w} has no vector"));
                    return;
                }
            };
            let trace = match evaluate_subtree(net, &node, &instance, &in_vec) {
                Ok((_, t)) => t,
                Err(e) => {
                    w21 = Some(format!("subtree run failed: {e}"));
                    return;
                }
            };
            let stages = &trace.nodes[node.as_str()].stages;
            let jump_of = |tgt: &ComponentId| -> Option<WorldId> {
                c.model
                    .jumps
                    .get(&src)
                    .and_then(|m| m.get(&w))
                    .and_then(|m| m.get(tgt))
                    .cloned()
            };
            let vec_at = |cid: &ComponentId, wid: &WorldId| -> Option<RVector> {
                c.maps.get(cid).and_then(|m| m.vector_of(wid)).cloned()
            };
            for st in stages {
                // C2.1: rule-produced child instance and input.
                if w21.is_none() {
                    if c.instances.get(&st.child) != Some(&st.instance) {
                        w21 = Some(format!(
                            "child {}: model instance differs from the stage instance",
                            st.child
                        ));
                    } else {
                        let tgt = ComponentId::input(st.child.clone());
                        match jump_of(&tgt).and_then(|tw| vec_at(&tgt, &tw)) {
                            Some(v) if v == st.y => {}
                            Some(v) => {
                                w21 = Some(format!(
                                    "child {}: jump image {v} but y = {}",
                                    st.child, st.y
                                ))
                            }
                            None => {
                                w21 = Some(format!(
                                    "child {}: no stored jump or vector for y",
                                    st.child
                                ))
                            }
                        }
                    }
                }
                // C2.2: spliced vector image.
                if w22.is_none() {
                    let tgt = ComponentId::layer(node.clone(), st.layer);
                    match jump_of(&tgt).and_then(|tw| vec_at(&tgt, &tw)) {
                        Some(v) if v == st.h => {}
                        Some(v) => {
                            w22 = Some(format!(
                                "stage at layer {}: jump image {v} but h = {}",
                                st.layer, st.h
                            ))
                        }
                        None => {
                            w22 = Some(format!(
                                "stage at layer {}: no stored jump or vector for h",
                                st.layer
                            ))
                        }
                    }
                }
            }
            // C2.3: valuation at the last h world agrees with every child's
            // y world valuation.
            if w23.is_none() {
                let last = stages.last().expect("non-leaf has stages");
                let hcid = ComponentId::layer(node.clone(), last.layer);
                let hval = jump_of(&hcid).and_then(|hw| {
                    c.model
                        .components
                        .get(&hcid)
                        .and_then(|comp| comp.valuation.get(&hw).cloned())
                });
                match hval {
                    None => w23 = Some("no valuation at the last-stage h world".into()),
                    Some(hval) => {
                        for st in stages {
                            let ycid = ComponentId::input(st.child.clone());
                            let yval = jump_of(&ycid).and_then(|yw| {
                                c.model
                                    .components
                                    .get(&ycid)
                                    .and_then(|comp| comp.valuation.get(&yw).cloned())
                            });
                            match yval {
                                Some(yv) if yv == hval => {}
                                Some(yv) => {
                                    w23 = Some(format!(
                                        "child {}: valuation {:?} differs from h_k valuation {:?}",
                                        st.child, yv, hval
                                    ));
                                    break;
                                }
                                None => {
                                    w23 = Some(format!(
                                        "child {}: no valuation at the y world",
                                        st.child
                                    ));
                                    break;
                                }
                            }
                        }
                    }
                }
            }
        })();
        report.push(format!("C2.1 {node}"), w21);
        report.push(format!("C2.2 {node}"), w22);
        report.push(format!("C2.3 {node}"), w23);
    }
    report
}

/// Rebuild the model with one component's worlds renamed by a bijection.
/// Jumps, provenance references, valuations, relations, and the
/// world/vector map are all composed with the renaming.
pub fn transport_iso(
    c: &CompatibleModel,
    comp: &ComponentId,
    relabel: &BTreeMap<WorldId, WorldId>,
) -> Result<CompatibleModel> {
    let kc = c
        .model
        .components
        .get(comp)
        .ok_or_else(|| Error::Structure(format!("no component {comp}")))?;
    let keys: BTreeSet<&WorldId> = relabel.keys().collect();
    let worlds: BTreeSet<&WorldId> = kc.worlds.iter().collect();
    if keys != worlds {
        return Err(Error::Structure(
            "relabeling domain is not exactly the component's worlds".into(),
        ));
    }
    let values: BTreeSet<&WorldId> = relabel.values().collect();
    if values.len() != relabel.len() {
        return Err(Error::Structure("relabeling is not injective".into()));
    }
    for (cid, other) in &c.model.components {
        if cid != comp {
            if let Some(w) = relabel.values().find(|w| other.worlds.contains(*w)) {
                return Err(Error::Structure(format!(
                    "relabeled id {w} collides with component {cid}"
                )));
            }
        }
    }
    let r = |w: &WorldId| -> WorldId { relabel.get(w).cloned().unwrap_or_else(|| w.clone()) };

    let mut out = c.clone();
    {
        let kc_new = out.model.component_mut(comp);
        kc_new.worlds = kc.worlds.iter().map(&r).collect();
        kc_new.relation = kc.relation.iter().map(|(a, b)| (r(a), r(b))).collect();
        kc_new.valuation = kc.valuation.iter().map(|(w, v)| (r(w), v.clone())).collect();
    }
    let mut jumps = BTreeMap::new();
    for (src, by_world) in &c.model.jumps {
        let mut new_by_world = BTreeMap::new();
        for (w, tgts) in by_world {
            let new_w = if src == comp { r(w) } else { w.clone() };
            let mut new_tgts = BTreeMap::new();
            for (tgt, tw) in tgts {
                let new_tw = if tgt == comp { r(tw) } else { tw.clone() };
                new_tgts.insert(tgt.clone(), new_tw);
            }
            new_by_world.insert(new_w, new_tgts);
        }
        jumps.insert(src.clone(), new_by_world);
    }
    out.model.jumps = jumps;
    let gen_comp_matches = |cid: &ComponentId| -> bool {
        // Generators reference input worlds of the same node.
        comp.layer == LayerTag::In && cid.node == comp.node
    };
    let mut provenance = BTreeMap::new();
    for (cid, by_world) in &c.model.provenance {
        let mut new_by_world = BTreeMap::new();
        for (w, gens) in by_world {
            let new_w = if cid == comp { r(w) } else { w.clone() };
            let new_gens = gens
                .iter()
                .map(|g| {
                    let mut g = g.clone();
                    if gen_comp_matches(cid) {
                        g.world = r(&g.world);
                    }
                    g
                })
                .collect();
            new_by_world.insert(new_w, new_gens);
        }
        provenance.insert(cid.clone(), new_by_world);
    }
    out.model.provenance = provenance;
    if let Some(wm) = c.maps.get(comp) {
        let mut new_wm = WorldVectorMap::new(comp.clone());
        for (w, v) in &wm.world_to_vec {
            new_wm.insert(r(w), v.clone())?;
        }
        out.maps.insert(comp.clone(), new_wm);
    }
    Ok(out)
}
