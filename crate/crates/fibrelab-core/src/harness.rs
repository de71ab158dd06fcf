use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compatible::{
    build_compatible, build_compatible_with, check_compatibility, cube_points, transport_iso,
    BuildOptions, DEFAULT_MAX_CUBE,
};
use crate::compiler::{
    characteristic_formula, compile, extracted_formula, psi_formula, CompileMode, CompiledFibring,
    SourceInstance,
};
use crate::error::{Error, Result};
use crate::feedforward::{NetworkInstance, NeuralArchitecture};
use crate::fibred::{
    classify_fibred, validate_architecture, EdgeLabel, FibredNetwork, FibringArchitecture,
    FibringRule, NodeId,
};
use crate::graph::{classify_gat, classify_gnn, gat_forward, gnn_forward, FeaturedGraph,
    GatInstance, GnnInstance, PosSpec, TokenSequence};
use crate::linalg::{ActivationSpec, RMatrix, RVector};
use crate::modal::{check_satisfaction, ComponentId, Formula, TieBreak};
use crate::rational::Rational;

/// Bounds and seed for the random case generators. Cube enumeration and
/// model building stay tractable under the default caps.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceGenConfig {
    pub seed: u64,
    pub max_layers: usize,
    pub max_dim: usize,
    pub max_vertices: usize,
    pub max_root_inputs: usize,
    pub max_sequence: usize,
    pub fibred_depth: usize,
    pub max_numerator: i64,
    pub max_denominator: i64,
}

impl Default for InstanceGenConfig {
    fn default() -> Self {
        InstanceGenConfig {
            seed: 0,
            max_layers: 3,
            max_dim: 3,
            max_vertices: 5,
            max_root_inputs: 4,
            max_sequence: 4,
            fibred_depth: 2,
            max_numerator: 2,
            max_denominator: 2,
        }
    }
}

impl InstanceGenConfig {
    pub fn with_seed(seed: u64) -> Self {
        InstanceGenConfig {
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_root_inputs == 0 || self.max_root_inputs > 16 {
            return Err(Error::Structure("root input bound must be in 1..=16".into()));
        }
        if self.max_vertices == 0 || self.max_vertices > 8 {
            return Err(Error::Structure("vertex bound must be in 1..=8".into()));
        }
        if self.max_layers == 0 || self.max_layers > 3 {
            return Err(Error::Structure("layer bound must be in 1..=3".into()));
        }
        if self.max_dim == 0 || self.max_sequence == 0 || self.max_denominator < 1 {
            return Err(Error::Structure("bounds must be positive".into()));
        }
        Ok(())
    }
}

/// One recorded mismatch: what ran, what was expected, what came out, and a
/// self-contained JSON value that `replay` re-executes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub case_id: String,
    pub inputs: serde_json::Value,
    pub expected: String,
    pub got: String,
    pub repro: serde_json::Value,
}

/// Outcome of one verification sweep. Wall time is measured but excluded
/// from serialization so same-seed reports are byte-identical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub claim: String,
    pub cases: usize,
    pub failures: Vec<Failure>,
    /// Tie-break order disagreements, reported apart from failures.
    pub divergences: Vec<String>,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl VerificationReport {
    pub fn new(claim: &str) -> Self {
        VerificationReport {
            claim: claim.to_string(),
            cases: 0,
            failures: Vec::new(),
            divergences: Vec::new(),
            wall_time: Duration::ZERO,
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Independent per-case stream so cases can be replayed in isolation.
pub fn case_rng(seed: u64, case: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ case.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn rat(rng: &mut ChaCha8Rng, cfg: &InstanceGenConfig) -> Rational {
    let p = rng.random_range(-cfg.max_numerator..=cfg.max_numerator);
    let q = rng.random_range(1..=cfg.max_denominator);
    Rational::new(p, q)
}

fn rvec(rng: &mut ChaCha8Rng, cfg: &InstanceGenConfig, dim: usize) -> RVector {
    RVector((0..dim).map(|_| rat(rng, cfg)).collect())
}

fn rmat(rng: &mut ChaCha8Rng, cfg: &InstanceGenConfig, rows: usize, cols: usize) -> RMatrix {
    let mut m = RMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            m.set(r, c, rat(rng, cfg));
        }
    }
    m
}

fn bitvec(rng: &mut ChaCha8Rng, dim: usize) -> RVector {
    RVector(
        (0..dim)
            .map(|_| Rational::int(if rng.random_bool(0.5) { 1 } else { 0 }))
            .collect(),
    )
}

/// Random undirected graph on v0..v{k-1} with Boolean features.
pub fn random_graph(
    rng: &mut ChaCha8Rng,
    max_vertices: usize,
    d0: usize,
) -> FeaturedGraph {
    let v = rng.random_range(1..=max_vertices);
    let nodes: Vec<String> = (0..v).map(|i| format!("v{i}")).collect();
    let mut edges = Vec::new();
    for i in 0..v {
        for j in i + 1..v {
            if rng.random_bool(0.5) {
                edges.push((nodes[i].clone(), nodes[j].clone()));
            }
        }
    }
    let features = nodes
        .iter()
        .map(|u| (u.clone(), bitvec(rng, d0)))
        .collect();
    FeaturedGraph::new(nodes, edges, features).expect("generated graph is well formed")
}

pub fn random_gnn(
    rng: &mut ChaCha8Rng,
    cfg: &InstanceGenConfig,
    d0: usize,
    classifier: bool,
) -> GnnInstance {
    let layers = rng.random_range(1..=cfg.max_layers);
    let mut dims = vec![d0];
    for t in 1..=layers {
        if t == layers && classifier {
            dims.push(1);
        } else {
            dims.push(rng.random_range(1..=cfg.max_dim));
        }
    }
    let mut a_mats = Vec::new();
    let mut b_mats = Vec::new();
    let mut biases = Vec::new();
    for t in 1..=layers {
        a_mats.push(rmat(rng, cfg, dims[t], dims[t - 1]));
        b_mats.push(rmat(rng, cfg, dims[t], dims[t - 1]));
        biases.push(rvec(rng, cfg, dims[t]));
    }
    GnnInstance::new(dims, a_mats, b_mats, biases).expect("generated weights are well shaped")
}

pub fn random_gat(
    rng: &mut ChaCha8Rng,
    cfg: &InstanceGenConfig,
    d0: usize,
    classifier: bool,
) -> GatInstance {
    let gnn = random_gnn(rng, cfg, d0, classifier);
    let attention = (1..=gnn.layer_count())
        .map(|t| rvec(rng, cfg, 2 * gnn.dims[t]))
        .collect();
    GatInstance::new(gnn, attention).expect("generated attention is well shaped")
}

pub fn random_tokens(rng: &mut ChaCha8Rng, cfg: &InstanceGenConfig, d0: usize) -> TokenSequence {
    let s = rng.random_range(1..=cfg.max_sequence);
    let alphabet = rng.random_range(1..=2.min(s).max(1));
    let names: Vec<String> = (0..alphabet).map(|i| format!("g{i}")).collect();
    let vec_table: BTreeMap<String, RVector> = names
        .iter()
        .map(|t| (t.clone(), bitvec(rng, d0)))
        .collect();
    let tokens = (0..s)
        .map(|_| names[rng.random_range(0..names.len())].clone())
        .collect();
    TokenSequence {
        tokens,
        vec_table,
        pos: PosSpec::Default,
    }
}

/// Random formula over p1..p{max_prop} and boxes into the given components.
pub fn random_formula(
    rng: &mut ChaCha8Rng,
    depth: usize,
    max_prop: usize,
    comps: &[ComponentId],
) -> Formula {
    let leaf = depth == 0 || rng.random_bool(0.3);
    if leaf {
        if rng.random_bool(0.2) {
            Formula::top()
        } else {
            Formula::prop(rng.random_range(1..=max_prop.max(1)))
        }
    } else {
        match rng.random_range(0..3) {
            0 => Formula::not(random_formula(rng, depth - 1, max_prop, comps)),
            1 => Formula::and(
                random_formula(rng, depth - 1, max_prop, comps),
                random_formula(rng, depth - 1, max_prop, comps),
            ),
            _ if !comps.is_empty() => {
                let c = comps[rng.random_range(0..comps.len())].clone();
                Formula::boxed(c, random_formula(rng, depth - 1, max_prop, comps))
            }
            _ => Formula::not(random_formula(rng, depth - 1, max_prop, comps)),
        }
    }
}

struct FibredGen<'a> {
    rng: &'a mut ChaCha8Rng,
    cfg: &'a InstanceGenConfig,
    arch: FibringArchitecture,
    rules: BTreeMap<NodeId, BTreeMap<NodeId, FibringRule>>,
    /// Shared table instance and candidate outputs per table edge.
    pools: BTreeMap<(NodeId, NodeId), (NetworkInstance, Vec<RVector>)>,
}

impl FibredGen<'_> {
    fn instance(&mut self, dims: Vec<usize>) -> NetworkInstance {
        let mut activations = Vec::new();
        for d in &dims[1..dims.len() - 1] {
            activations.push(if self.rng.random_bool(0.5) {
                ActivationSpec::identity(*d)
            } else {
                ActivationSpec::truncated_relu(*d)
            });
        }
        let arch = NeuralArchitecture::new(dims.clone(), activations).expect("generated dims");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for t in 1..dims.len() {
            weights.push(rmat(self.rng, self.cfg, dims[t], dims[t - 1]));
            biases.push(rvec(self.rng, self.cfg, dims[t]));
        }
        NetworkInstance::new(arch, weights, biases).expect("generated instance")
    }

    fn node(&mut self, id: &str, depth: usize, in_dim: usize, out_dim: usize) -> NetworkInstance {
        let layers = self.rng.random_range(1..=self.cfg.max_layers);
        let mut dims = vec![in_dim];
        for _ in 1..layers {
            dims.push(self.rng.random_range(1..=self.cfg.max_dim));
        }
        dims.push(out_dim);
        let inst = self.instance(dims.clone());
        if depth >= self.cfg.fibred_depth {
            return inst;
        }
        // Children sit at pairwise distinct layers: each stored jump slot
        // at a given layer then belongs to exactly one splice.
        let mut layer_pool: Vec<usize> = (1..=layers).collect();
        layer_pool.shuffle(self.rng);
        let count = self.rng.random_range(0..=layers.min(2));
        let mut chosen: Vec<usize> = layer_pool.into_iter().take(count).collect();
        chosen.sort_unstable();
        for (k, layer) in chosen.into_iter().enumerate() {
            let pos_dim = dims[layer];
            let child_out = self.rng.random_range(1..=pos_dim);
            let mut idx: Vec<usize> = (0..pos_dim).collect();
            idx.shuffle(self.rng);
            let mut positions: Vec<usize> = idx.into_iter().take(child_out).collect();
            positions.sort_unstable();
            let child_id = format!("{id}.{k}");
            let kind = self.rng.random_range(0..3);
            let child_in = if kind == 1 {
                dims[layer]
            } else {
                self.rng.random_range(1..=self.cfg.max_dim)
            };
            let child_inst = self.node(&child_id, depth + 1, child_in, child_out);
            self.arch.add_node(
                id,
                child_id.clone(),
                child_inst.architecture.clone(),
                EdgeLabel {
                    layer,
                    positions,
                },
            );
            let rule = match kind {
                0 => {
                    let y = rvec(self.rng, self.cfg, child_in);
                    FibringRule::Constant(child_inst, y)
                }
                1 => FibringRule::SelfFibre(child_inst),
                _ => {
                    let pool: Vec<RVector> =
                        (0..4).map(|_| rvec(self.rng, self.cfg, child_in)).collect();
                    self.pools
                        .insert((id.to_string(), child_id.clone()), (child_inst, pool));
                    FibringRule::Table(BTreeMap::new())
                }
            };
            self.rules
                .entry(id.to_string())
                .or_default()
                .insert(child_id, rule);
        }
        inst
    }
}

fn pool_pick(pool: &[RVector], key: &RVector) -> RVector {
    let sum: usize = key.key().bytes().map(|b| b as usize).sum();
    pool[sum % pool.len()].clone()
}

/// Fill table rules until a full build over the input cube stops hitting
/// domain misses. Tables draw outputs from a fixed candidate pool, so the
/// reachable input set is finite and the loop terminates.
fn totalize_tables(
    net: &mut FibredNetwork,
    pools: &BTreeMap<(NodeId, NodeId), (NetworkInstance, Vec<RVector>)>,
) -> Result<()> {
    let n = net.root_instance.architecture.input_dim();
    let probe = RVector::zeros(n);
    for _ in 0..4096 {
        let err = match build_compatible(net, &probe) {
            Ok(_) => return Ok(()),
            Err(e) => e,
        };
        let parent = err.trace_path().last().cloned();
        let vector = match err.root() {
            Error::RuleDomain { vector } => vector.clone(),
            _ => return Err(err),
        };
        let mut inserted = false;
        if let Some(parent) = parent {
            for ((p, c), (inst, pool)) in pools {
                if *p != parent {
                    continue;
                }
                if let Some(FibringRule::Table(t)) =
                    net.rules.get_mut(p).and_then(|m| m.get_mut(c))
                {
                    if !t.contains_key(&vector) {
                        t.insert(vector.clone(), (inst.clone(), pool_pick(pool, &vector)));
                        inserted = true;
                    }
                }
            }
        }
        if !inserted {
            break;
        }
    }
    // Fall back to constants, which are total by construction.
    for ((p, c), (inst, pool)) in pools {
        if let Some(r) = net.rules.get_mut(p).and_then(|m| m.get_mut(c)) {
            *r = FibringRule::Constant(inst.clone(), pool[0].clone());
        }
    }
    build_compatible(net, &probe).map(|_| ())
}

/// Random fibred network: root input within bounds, scalar root output,
/// children at distinct layers, rules mixing constants, self-fibrings, and
/// cube-total tables.
pub fn random_fibred(rng: &mut ChaCha8Rng, cfg: &InstanceGenConfig) -> Result<FibredNetwork> {
    let n = rng.random_range(1..=cfg.max_root_inputs);
    let placeholder = FibringArchitecture::single("r", NeuralArchitecture::linear(vec![1, 1])?);
    let mut gen = FibredGen {
        rng,
        cfg,
        arch: placeholder,
        rules: BTreeMap::new(),
        pools: BTreeMap::new(),
    };
    // The root instance is generated before its children, so the tree
    // under "r" is rebuilt once the real root architecture is known.
    let root_inst = {
        let layers = gen.rng.random_range(1..=gen.cfg.max_layers);
        let mut dims = vec![n];
        for _ in 1..layers {
            dims.push(gen.rng.random_range(1..=gen.cfg.max_dim));
        }
        dims.push(1);
        let inst = gen.instance(dims);
        gen.arch = FibringArchitecture::single("r", inst.architecture.clone());
        let layers = inst.architecture.layer_count();
        // Re-run child generation against the actual root dims.
        let dims = inst.architecture.dims.clone();
        let mut layer_pool: Vec<usize> = (1..=layers).collect();
        layer_pool.shuffle(gen.rng);
        let count = gen.rng.random_range(0..=layers.min(2));
        let mut chosen: Vec<usize> = layer_pool.into_iter().take(count).collect();
        chosen.sort_unstable();
        for (k, layer) in chosen.into_iter().enumerate() {
            let pos_dim = dims[layer];
            let child_out = gen.rng.random_range(1..=pos_dim);
            let mut idx: Vec<usize> = (0..pos_dim).collect();
            idx.shuffle(gen.rng);
            let mut positions: Vec<usize> = idx.into_iter().take(child_out).collect();
            positions.sort_unstable();
            let child_id = format!("r.{k}");
            let kind = gen.rng.random_range(0..3);
            let child_in = if kind == 1 {
                dims[layer]
            } else {
                gen.rng.random_range(1..=gen.cfg.max_dim)
            };
            let child_inst = gen.node(&child_id, 1, child_in, child_out);
            gen.arch.add_node(
                "r",
                child_id.clone(),
                child_inst.architecture.clone(),
                EdgeLabel { layer, positions },
            );
            let rule = match kind {
                0 => {
                    let y = rvec(gen.rng, gen.cfg, child_in);
                    FibringRule::Constant(child_inst, y)
                }
                1 => FibringRule::SelfFibre(child_inst),
                _ => {
                    let pool: Vec<RVector> =
                        (0..4).map(|_| rvec(gen.rng, gen.cfg, child_in)).collect();
                    gen.pools
                        .insert(("r".to_string(), child_id.clone()), (child_inst, pool));
                    FibringRule::Table(BTreeMap::new())
                }
            };
            gen.rules
                .entry("r".to_string())
                .or_default()
                .insert(child_id, rule);
        }
        inst
    };
    let mut net = FibredNetwork {
        root_instance: root_inst,
        architecture: gen.arch,
        rules: gen.rules,
    };
    let pools = gen.pools;
    totalize_tables(&mut net, &pools)?;
    Ok(net)
}

/// Mutation hook: perturb the first rule payload (or the root bias when the
/// tree has no edges) and describe what changed.
pub fn corrupt_network(net: &mut FibredNetwork) -> String {
    fn bump(v: &mut RVector) {
        let next = &v.0[0] + &Rational::one();
        v.0[0] = next;
    }
    for (parent, edges) in net.rules.iter_mut() {
        for (child, rule) in edges.iter_mut() {
            match rule {
                FibringRule::Constant(_, y) => {
                    bump(y);
                    return format!("bumped constant output on edge {parent}->{child}");
                }
                FibringRule::SelfFibre(inst) => {
                    bump(&mut inst.biases[0]);
                    return format!("bumped self-fibre bias on edge {parent}->{child}");
                }
                FibringRule::Table(t) => {
                    if let Some((_, (_, y))) = t.iter_mut().next() {
                        bump(y);
                        return format!("bumped table output on edge {parent}->{child}");
                    }
                }
                FibringRule::GatGadget(g) => {
                    bump(&mut g.bias);
                    return format!("bumped attention bias on edge {parent}->{child}");
                }
            }
        }
    }
    bump(&mut net.root_instance.biases[0]);
    "bumped root bias".to_string()
}

fn outcome(r: Result<bool>) -> String {
    match r {
        Ok(true) => "true".into(),
        Ok(false) => "false".into(),
        Err(_) => "unreachable".into(),
    }
}

/// Exact-equality check of one compiled case against the direct forward
/// pass. Returns None on agreement.
fn thm2_single(
    source: &SourceInstance,
    graph: &FeaturedGraph,
    vertex: &str,
    mode: CompileMode,
) -> Result<Option<(String, String)>> {
    let compiled = compile(source, graph, vertex, mode)?;
    let net = compiled.fibred_for(&graph.features)?;
    let (got, _) = crate::fibred::evaluate_fibred(&net, &graph.features[vertex])?;
    let expected = match source {
        SourceInstance::Gnn(g) => gnn_forward(g, graph)?.h_final(vertex)?.clone(),
        SourceInstance::Gat(g) => gat_forward(g, graph)?.h_final(vertex)?.clone(),
    };
    if got == expected {
        Ok(None)
    } else {
        Ok(Some((expected.to_string(), got.to_string())))
    }
}

/// Compiled-equivalence sweep for one mode.
pub fn verify_thm2(cfg: &InstanceGenConfig, cases: usize, mode: CompileMode) -> VerificationReport {
    let start = Instant::now();
    let mut report = VerificationReport::new("thm2");
    report.cases = cases;
    for i in 0..cases {
        let mut rng = case_rng(cfg.seed, i as u64);
        let (source, graph, vertex) = match mode {
            CompileMode::Gnn => {
                let d0 = rng.random_range(1..=cfg.max_dim);
                let graph = random_graph(&mut rng, cfg.max_vertices, d0);
                let source = SourceInstance::Gnn(random_gnn(&mut rng, cfg, d0, false));
                let nodes: Vec<&String> = graph.nodes.iter().collect();
                let vertex = nodes[rng.random_range(0..nodes.len())].clone();
                (source, graph, vertex)
            }
            CompileMode::Gat => {
                let d0 = rng.random_range(1..=cfg.max_dim);
                let graph = random_graph(&mut rng, cfg.max_vertices, d0);
                let source = SourceInstance::Gat(random_gat(&mut rng, cfg, d0, false));
                let nodes: Vec<&String> = graph.nodes.iter().collect();
                let vertex = nodes[rng.random_range(0..nodes.len())].clone();
                (source, graph, vertex)
            }
            CompileMode::Transformer => {
                let d0 = rng.random_range(1..=cfg.max_dim);
                let seq = random_tokens(&mut rng, cfg, d0);
                let graph = seq.encode().expect("generated sequence encodes");
                let source = SourceInstance::Gat(random_gat(&mut rng, cfg, d0, false));
                let position = rng.random_range(0..seq.len());
                (source, graph, TokenSequence::position_node(position))
            }
        };
        let case_id = format!("case{i:04}");
        let inputs = serde_json::json!({
            "mode": mode,
            "source": source,
            "graph": graph,
            "vertex": vertex,
        });
        match thm2_single(&source, &graph, &vertex, mode) {
            Ok(None) => {}
            Ok(Some((expected, got))) => {
                let mut repro = inputs.clone();
                repro["claim"] = "thm2".into();
                report.failures.push(Failure {
                    case_id,
                    inputs,
                    expected,
                    got,
                    repro,
                });
            }
            Err(e) => {
                let mut repro = inputs.clone();
                repro["claim"] = "thm2".into();
                report.failures.push(Failure {
                    case_id,
                    inputs,
                    expected: "exact forward equality".into(),
                    got: format!("error: {e}"),
                    repro,
                });
            }
        }
    }
    report.wall_time = start.elapsed();
    report
}

fn prop1_single(
    net: &FibredNetwork,
    x: &RVector,
    rng: &mut ChaCha8Rng,
) -> Result<Option<(String, String)>> {
    let model = build_compatible(net, x)?;
    let report = check_compatibility(&model, net, x);
    if !report.passed() {
        let witness = report
            .failures()
            .iter()
            .map(|e| format!("{}: {}", e.condition, e.witness.clone().unwrap_or_default()))
            .collect::<Vec<_>>()
            .join("; ");
        return Ok(Some(("all compatibility conditions pass".into(), witness)));
    }
    // Closure under isomorphism: permute one component's worlds.
    let comps: Vec<ComponentId> = model.model.components.keys().cloned().collect();
    let target = comps[rng.random_range(0..comps.len())].clone();
    let worlds: Vec<String> = model.model.components[&target].worlds.iter().cloned().collect();
    let mut shuffled = worlds.clone();
    shuffled.shuffle(rng);
    let relabel: BTreeMap<String, String> =
        worlds.iter().cloned().zip(shuffled.into_iter()).collect();
    let moved = transport_iso(&model, &target, &relabel)?;
    let after = check_compatibility(&moved, net, x);
    if !after.passed() {
        let witness = after
            .failures()
            .iter()
            .map(|e| e.condition.clone())
            .collect::<Vec<_>>()
            .join("; ");
        return Ok(Some((
            "compatibility preserved under world relabeling".into(),
            witness,
        )));
    }
    // Truth of random formulas is preserved at corresponding worlds.
    let n = net.root_instance.architecture.input_dim();
    for _ in 0..20 {
        let f = random_formula(rng, 3, n, &comps);
        let w = &worlds[rng.random_range(0..worlds.len())];
        let before = outcome(check_satisfaction(
            &model.model,
            &target,
            w,
            &f,
            TieBreak::Least,
        ));
        let after = outcome(check_satisfaction(
            &moved.model,
            &target,
            &relabel[w],
            &f,
            TieBreak::Least,
        ));
        if before != after {
            return Ok(Some((
                format!("{f} stays {before} at {w}"),
                format!("{after} after relabeling"),
            )));
        }
    }
    Ok(None)
}

/// Build-and-check sweep: the constructed model satisfies every
/// compatibility condition and stays satisfied under world relabeling.
pub fn verify_prop1(cfg: &InstanceGenConfig, cases: usize) -> VerificationReport {
    let start = Instant::now();
    let mut report = VerificationReport::new("prop1");
    report.cases = cases;
    for i in 0..cases {
        let mut rng = case_rng(cfg.seed, i as u64);
        let case_id = format!("case{i:04}");
        let net = match random_fibred(&mut rng, cfg) {
            Ok(net) => net,
            Err(e) => {
                report.failures.push(Failure {
                    case_id,
                    inputs: serde_json::Value::Null,
                    expected: "generator yields a buildable network".into(),
                    got: format!("error: {e}"),
                    repro: serde_json::Value::Null,
                });
                continue;
            }
        };
        let n = net.root_instance.architecture.input_dim();
        let x = bitvec(&mut rng, n);
        let inputs = serde_json::json!({ "net": net, "x": x });
        let mut repro = inputs.clone();
        repro["claim"] = "prop1".into();
        match prop1_single(&net, &x, &mut rng) {
            Ok(None) => {}
            Ok(Some((expected, got))) => {
                report.failures.push(Failure {
                    case_id,
                    inputs,
                    expected,
                    got,
                    repro,
                });
            }
            Err(e) => {
                report.failures.push(Failure {
                    case_id,
                    inputs,
                    expected: "build and check succeed".into(),
                    got: format!("error: {e}"),
                    repro,
                });
            }
        }
    }
    report.wall_time = start.elapsed();
    report
}

struct Thm1Case {
    classify: bool,
    least: Result<bool>,
    greatest: Result<bool>,
}

fn thm1_point(net: &FibredNetwork, x: &RVector) -> Result<Thm1Case> {
    let phi = characteristic_formula(&net.root_instance, None, DEFAULT_MAX_CUBE)?;
    let psi = psi_formula(&phi, &net.architecture);
    let model = build_compatible(net, x)?;
    let at = model.root_input_component();
    let w = model
        .root_world(x)
        .ok_or_else(|| Error::Structure(format!("no root world for {x}")))?
        .clone();
    Ok(Thm1Case {
        classify: classify_fibred(net, x)?,
        least: check_satisfaction(&model.model, &at, &w, &psi, TieBreak::Least),
        greatest: check_satisfaction(&model.model, &at, &w, &psi, TieBreak::Greatest),
    })
}

/// Does the satisfaction verdict still disagree with the classifier?
fn thm1_mismatch(net: &FibredNetwork, x: &RVector) -> bool {
    match thm1_point(net, x) {
        Ok(c) => matches!(c.least, Ok(b) if b != c.classify),
        Err(_) => false,
    }
}

fn subtree_nodes(arch: &FibringArchitecture, node: &NodeId) -> Vec<NodeId> {
    let mut out = vec![node.clone()];
    let mut stack = vec![node.clone()];
    while let Some(cur) = stack.pop() {
        for (child, _) in arch.children(&cur) {
            out.push(child.clone());
            stack.push(child);
        }
    }
    out
}

fn drop_subtree(net: &FibredNetwork, victim: &NodeId) -> FibredNetwork {
    let doomed: BTreeSet<NodeId> = subtree_nodes(&net.architecture, victim).into_iter().collect();
    let mut out = net.clone();
    for d in &doomed {
        out.architecture.node_arch.remove(d);
        out.architecture.edges.remove(d);
        out.rules.remove(d);
    }
    for edges in out.architecture.edges.values_mut() {
        edges.retain(|c, _| !doomed.contains(c));
    }
    for edges in out.rules.values_mut() {
        edges.retain(|c, _| !doomed.contains(c));
    }
    out.rules.retain(|_, m| !m.is_empty());
    out
}

fn json_string_slots(v: &serde_json::Value, path: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
    match v {
        serde_json::Value::String(s) => {
            if let Ok(r) = s.parse::<Rational>() {
                if !r.is_zero() {
                    out.push(path.clone());
                }
            }
        }
        serde_json::Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                path.push(i.to_string());
                json_string_slots(item, path, out);
                path.pop();
            }
        }
        serde_json::Value::Object(map) => {
            for (k, item) in map {
                path.push(format!("k:{k}"));
                json_string_slots(item, path, out);
                path.pop();
            }
        }
        _ => {}
    }
}

fn json_set(v: &mut serde_json::Value, path: &[String], new: serde_json::Value) {
    let mut cur = v;
    for step in &path[..path.len() - 1] {
        cur = if let Some(key) = step.strip_prefix("k:") {
            &mut cur[key]
        } else {
            &mut cur[step.parse::<usize>().expect("array index")]
        };
    }
    let last = &path[path.len() - 1];
    if let Some(key) = last.strip_prefix("k:") {
        cur[key] = new;
    } else {
        cur[last.parse::<usize>().expect("array index")] = new;
    }
}

/// Greedy shrink of a disagreement witness: drop subtrees, then clear cube
/// bits, then zero coefficients, keeping the mismatch alive throughout.
fn minimize_thm1(net: &FibredNetwork, x: &RVector) -> (FibredNetwork, RVector) {
    let mut net = net.clone();
    let mut x = x.clone();
    // Subtrees, repeated until no single drop keeps the mismatch.
    loop {
        let mut candidates: Vec<NodeId> = net.architecture.node_arch.keys().cloned().collect();
        candidates.retain(|c| *c != net.architecture.root);
        let mut progressed = false;
        for victim in candidates {
            let slim = drop_subtree(&net, &victim);
            if thm1_mismatch(&slim, &x) {
                net = slim;
                progressed = true;
                break;
            }
        }
        if !progressed {
            break;
        }
    }
    // Cube bits high-to-low.
    for i in 0..x.dim() {
        if !x[i].is_zero() {
            let mut flat = x.clone();
            flat.0[i] = Rational::zero();
            if thm1_mismatch(&net, &flat) {
                x = flat;
            }
        }
    }
    // Coefficients via the serialized form: every rational is a string.
    if let Ok(mut value) = serde_json::to_value(&net) {
        let mut slots = Vec::new();
        json_string_slots(&value, &mut Vec::new(), &mut slots);
        for path in slots.into_iter().take(100) {
            let mut candidate = value.clone();
            json_set(&mut candidate, &path, serde_json::Value::String("0".into()));
            if let Ok(slim) = serde_json::from_value::<FibredNetwork>(candidate.clone()) {
                if thm1_mismatch(&slim, &x) {
                    net = slim;
                    value = candidate;
                }
            }
        }
    }
    (net, x)
}

/// For every cube point, the extracted formula's truth at the root input
/// world must match the network classification. Both tie-break orders run;
/// disagreements between them are reported separately.
pub fn verify_thm1(cfg: &InstanceGenConfig, cases: usize) -> VerificationReport {
    let start = Instant::now();
    let mut report = VerificationReport::new("thm1");
    report.cases = cases;
    for i in 0..cases {
        let mut rng = case_rng(cfg.seed, i as u64);
        let case_id = format!("case{i:04}");
        let net = match random_fibred(&mut rng, cfg) {
            Ok(net) => net,
            Err(e) => {
                report.failures.push(Failure {
                    case_id,
                    inputs: serde_json::Value::Null,
                    expected: "generator yields a buildable network".into(),
                    got: format!("error: {e}"),
                    repro: serde_json::Value::Null,
                });
                continue;
            }
        };
        let in_class_f = validate_architecture(&net.architecture)
            .map(|r| r.in_class_f)
            .unwrap_or(false);
        let n = net.root_instance.architecture.input_dim();
        let mut case_failure: Option<(RVector, Thm1Case)> = None;
        for x in cube_points(&RVector::zeros(n)) {
            let point = match thm1_point(&net, &x) {
                Ok(p) => p,
                Err(e) => {
                    report.failures.push(Failure {
                        case_id: case_id.clone(),
                        inputs: serde_json::json!({ "net": net, "x": x, "in_class_f": in_class_f }),
                        expected: "satisfaction check runs".into(),
                        got: format!("error: {e}"),
                        repro: serde_json::json!({ "claim": "thm1", "net": net, "x": x }),
                    });
                    break;
                }
            };
            if outcome(point.least.clone()) != outcome(point.greatest.clone()) {
                report.divergences.push(format!(
                    "{case_id}: x={}: least={} greatest={}",
                    x.key(),
                    outcome(point.least.clone()),
                    outcome(point.greatest.clone()),
                ));
            }
            if matches!(point.least, Ok(b) if b != point.classify) {
                case_failure = Some((x, point));
                break;
            }
        }
        if let Some((x, point)) = case_failure {
            let (min_net, min_x) = minimize_thm1(&net, &x);
            report.failures.push(Failure {
                case_id,
                inputs: serde_json::json!({ "net": net, "x": x, "in_class_f": in_class_f }),
                expected: format!("classification {}", point.classify),
                got: format!("satisfaction {}", outcome(point.least)),
                repro: serde_json::json!({ "claim": "thm1", "net": min_net, "x": min_x }),
            });
        }
    }
    report.wall_time = start.elapsed();
    report
}

fn all_feature_maps(vertices: &[String], d0: usize) -> Vec<BTreeMap<String, RVector>> {
    let bits = vertices.len() * d0;
    let mut out = Vec::with_capacity(1 << bits);
    for k in 0..(1u32 << bits) {
        let mut features = BTreeMap::new();
        for (vi, v) in vertices.iter().enumerate() {
            let vec = RVector(
                (0..d0)
                    .map(|j| Rational::int(((k >> (vi * d0 + j)) & 1) as i64))
                    .collect(),
            );
            features.insert(v.clone(), vec);
        }
        out.push(features);
    }
    out
}

/// One feature assignment against an already-compiled instance. Features
/// arrive final (positional shifts already added in transformer mode).
fn thm3_check(
    compiled: &CompiledFibring,
    psi: &Formula,
    source: &SourceInstance,
    graph: &FeaturedGraph,
    vertex: &str,
    features: &BTreeMap<String, RVector>,
    offset: Option<&RVector>,
) -> Result<Option<(String, String)>> {
    let net = compiled.fibred_for(features)?;
    let run_graph = FeaturedGraph {
        nodes: graph.nodes.clone(),
        edges: graph.edges.clone(),
        features: features.clone(),
    };
    let classify = match source {
        SourceInstance::Gnn(g) => classify_gnn(g, &run_graph, vertex)?,
        SourceInstance::Gat(g) => classify_gat(g, &run_graph, vertex)?,
    };
    let x_u = features[vertex].clone();
    let opts = BuildOptions {
        offset: offset.cloned(),
        max_cube: DEFAULT_MAX_CUBE,
    };
    let model = build_compatible_with(&net, &x_u, &opts)?;
    let at = model.root_input_component();
    let w = model
        .root_world(&x_u)
        .ok_or_else(|| Error::Structure(format!("no root world for {x_u}")))?
        .clone();
    let truth = check_satisfaction(&model.model, &at, &w, psi, TieBreak::Least);
    let got = outcome(truth);
    let want = classify.to_string();
    if got == want {
        Ok(None)
    } else {
        Ok(Some((format!("classification {want}"), format!("satisfaction {got}"))))
    }
}

fn thm3_single(
    source: &SourceInstance,
    graph: &FeaturedGraph,
    vertex: &str,
    features: &BTreeMap<String, RVector>,
    offset: Option<&RVector>,
    mode: CompileMode,
) -> Result<Option<(String, String)>> {
    let compiled = compile(source, graph, vertex, mode)?;
    let psi = extracted_formula(&compiled, offset, DEFAULT_MAX_CUBE)?;
    thm3_check(&compiled, &psi, source, graph, vertex, features, offset)
}

fn thm3_failure(case_id: &str, inputs: serde_json::Value, expected: String, got: String) -> Failure {
    let mut repro = inputs.clone();
    repro["claim"] = "thm3".into();
    Failure {
        case_id: case_id.to_string(),
        inputs,
        expected,
        got,
        repro,
    }
}

/// Exhaustive feature sweeps: per compiled instance, the extracted formula
/// checked on the built model must match the direct classification for
/// every assignment. The first mismatch per case is recorded.
pub fn verify_thm3(cfg: &InstanceGenConfig, cases: usize, mode: CompileMode) -> VerificationReport {
    let start = Instant::now();
    let mut report = VerificationReport::new("thm3");
    report.cases = cases;
    for i in 0..cases {
        let mut rng = case_rng(cfg.seed, i as u64);
        let case_id = format!("case{i:04}");
        let mut fail: Option<Failure> = None;
        match mode {
            CompileMode::Gnn => {
                let d0 = rng.random_range(1..=2usize);
                let max_v = (8 / d0).min(cfg.max_vertices);
                let graph = random_graph(&mut rng, max_v, d0);
                let source = SourceInstance::Gnn(random_gnn(&mut rng, cfg, d0, true));
                let nodes: Vec<String> = graph.nodes.iter().cloned().collect();
                let vertex = nodes[rng.random_range(0..nodes.len())].clone();
                let inputs_of = |features: &BTreeMap<String, RVector>| {
                    serde_json::json!({
                        "mode": mode, "source": source, "graph": graph,
                        "vertex": vertex, "features": features,
                        "offset": serde_json::Value::Null,
                    })
                };
                let prepared = compile(&source, &graph, &vertex, mode).and_then(|compiled| {
                    let psi = extracted_formula(&compiled, None, DEFAULT_MAX_CUBE)?;
                    Ok((compiled, psi))
                });
                match prepared {
                    Err(e) => {
                        fail = Some(thm3_failure(
                            &case_id,
                            inputs_of(&graph.features),
                            "compilation and extraction succeed".into(),
                            format!("error: {e}"),
                        ));
                    }
                    Ok((compiled, psi)) => {
                        for features in all_feature_maps(&nodes, d0) {
                            let res = thm3_check(
                                &compiled, &psi, &source, &graph, &vertex, &features, None,
                            );
                            match res {
                                Ok(None) => {}
                                Ok(Some((expected, got))) => {
                                    fail = Some(thm3_failure(
                                        &case_id,
                                        inputs_of(&features),
                                        expected,
                                        got,
                                    ));
                                    break;
                                }
                                Err(e) => {
                                    fail = Some(thm3_failure(
                                        &case_id,
                                        inputs_of(&features),
                                        "check runs".into(),
                                        format!("error: {e}"),
                                    ));
                                    break;
                                }
                            }
                        }
                    }
                }
            }
            CompileMode::Gat | CompileMode::Transformer => {
                let d0 = 1usize;
                let s = rng.random_range(1..=cfg.max_sequence.min(4));
                let source = SourceInstance::Gat(random_gat(&mut rng, cfg, d0, true));
                let position = rng.random_range(0..s);
                let vertex = TokenSequence::position_node(position);
                let nodes: Vec<String> = (0..s).map(TokenSequence::position_node).collect();
                let mut edges = Vec::new();
                for a in 0..s {
                    for b in a + 1..s {
                        edges.push((nodes[a].clone(), nodes[b].clone()));
                    }
                }
                // Per-position shift: the default positional encoding.
                let shift: Vec<RVector> = (0..s)
                    .map(|t| RVector(vec![Rational::new(t as i64, (s + 1) as i64); d0]))
                    .collect();
                let offset = shift[position].clone();
                let base_features: BTreeMap<String, RVector> = nodes
                    .iter()
                    .enumerate()
                    .map(|(t, v)| (v.clone(), shift[t].clone()))
                    .collect();
                let graph =
                    FeaturedGraph::new(nodes.clone(), edges.clone(), base_features.clone())
                        .expect("token graph");
                let inputs_of = |features: &BTreeMap<String, RVector>| {
                    serde_json::json!({
                        "mode": "transformer", "source": source, "graph": graph,
                        "vertex": vertex, "features": features, "offset": offset,
                    })
                };
                let prepared = compile(&source, &graph, &vertex, CompileMode::Transformer)
                    .and_then(|compiled| {
                        let psi = extracted_formula(&compiled, Some(&offset), DEFAULT_MAX_CUBE)?;
                        Ok((compiled, psi))
                    });
                match prepared {
                    Err(e) => {
                        fail = Some(thm3_failure(
                            &case_id,
                            inputs_of(&base_features),
                            "compilation and extraction succeed".into(),
                            format!("error: {e}"),
                        ));
                    }
                    Ok((compiled, psi)) => {
                        for raw in all_feature_maps(&nodes, d0) {
                            let features: BTreeMap<String, RVector> = raw
                                .iter()
                                .map(|(v, bits)| {
                                    let t: usize = v[1..].parse().expect("position node name");
                                    (v.clone(), bits.add(&shift[t]).expect("dims match"))
                                })
                                .collect();
                            let res = thm3_check(
                                &compiled,
                                &psi,
                                &source,
                                &graph,
                                &vertex,
                                &features,
                                Some(&offset),
                            );
                            match res {
                                Ok(None) => {}
                                Ok(Some((expected, got))) => {
                                    fail = Some(thm3_failure(
                                        &case_id,
                                        inputs_of(&features),
                                        expected,
                                        got,
                                    ));
                                    break;
                                }
                                Err(e) => {
                                    fail = Some(thm3_failure(
                                        &case_id,
                                        inputs_of(&features),
                                        "check runs".into(),
                                        format!("error: {e}"),
                                    ));
                                    break;
                                }
                            }
                        }
                    }
                }
            }
        }
        if let Some(f) = fail {
            report.failures.push(f);
        }
    }
    report.wall_time = start.elapsed();
    report
}

/// Re-execute a repro value produced by one of the verification sweeps.
pub fn replay(repro: &serde_json::Value) -> Result<VerificationReport> {
    let claim = repro
        .get("claim")
        .and_then(|c| c.as_str())
        .ok_or_else(|| Error::Structure("repro lacks a claim field".into()))?
        .to_string();
    let mut report = VerificationReport::new(&claim);
    report.cases = 1;
    let parse = |key: &str| -> Result<serde_json::Value> {
        repro
            .get(key)
            .cloned()
            .ok_or_else(|| Error::Structure(format!("repro lacks {key}")))
    };
    match claim.as_str() {
        "thm2" => {
            let source: SourceInstance = serde_json::from_value(parse("source")?)?;
            let graph: FeaturedGraph = serde_json::from_value(parse("graph")?)?;
            let vertex: String = serde_json::from_value(parse("vertex")?)?;
            let mode: CompileMode = serde_json::from_value(parse("mode")?)?;
            if let Some((expected, got)) = thm2_single(&source, &graph, &vertex, mode)? {
                report.failures.push(Failure {
                    case_id: "replay".into(),
                    inputs: repro.clone(),
                    expected,
                    got,
                    repro: repro.clone(),
                });
            }
        }
        "thm1" => {
            let net: FibredNetwork = serde_json::from_value(parse("net")?)?;
            let x: RVector = serde_json::from_value(parse("x")?)?;
            let point = thm1_point(&net, &x)?;
            if matches!(point.least, Ok(b) if b != point.classify) || point.least.is_err() {
                report.failures.push(Failure {
                    case_id: "replay".into(),
                    inputs: repro.clone(),
                    expected: format!("classification {}", point.classify),
                    got: format!("satisfaction {}", outcome(point.least)),
                    repro: repro.clone(),
                });
            }
        }
        "thm3" => {
            let source: SourceInstance = serde_json::from_value(parse("source")?)?;
            let graph: FeaturedGraph = serde_json::from_value(parse("graph")?)?;
            let vertex: String = serde_json::from_value(parse("vertex")?)?;
            let mode: CompileMode = serde_json::from_value(parse("mode")?)?;
            let features: BTreeMap<String, RVector> = serde_json::from_value(parse("features")?)?;
            let offset: Option<RVector> = match repro.get("offset") {
                Some(serde_json::Value::Null) | None => None,
                Some(v) => Some(serde_json::from_value(v.clone())?),
            };
            if let Some((expected, got)) =
                thm3_single(&source, &graph, &vertex, &features, offset.as_ref(), mode)?
            {
                report.failures.push(Failure {
                    case_id: "replay".into(),
                    inputs: repro.clone(),
                    expected,
                    got,
                    repro: repro.clone(),
                });
            }
        }
        "prop1" => {
            let net: FibredNetwork = serde_json::from_value(parse("net")?)?;
            let x: RVector = serde_json::from_value(parse("x")?)?;
            let mut rng = case_rng(0, 0);
            if let Some((expected, got)) = prop1_single(&net, &x, &mut rng)? {
                report.failures.push(Failure {
                    case_id: "replay".into(),
                    inputs: repro.clone(),
                    expected,
                    got,
                    repro: repro.clone(),
                });
            }
        }
        other => {
            return Err(Error::Structure(format!("unknown claim {other}")));
        }
    }
    Ok(report)
}

/// Sampled stream of every instance family the verifiers consume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GeneratedInstance {
    Fibred {
        net: FibredNetwork,
        x: RVector,
    },
    GnnCase {
        graph: FeaturedGraph,
        source: GnnInstance,
        vertex: String,
    },
    GatCase {
        graph: FeaturedGraph,
        source: GatInstance,
        vertex: String,
    },
    TokenCase {
        sequence: TokenSequence,
        position: usize,
    },
}

pub fn generate_instances(
    cfg: &InstanceGenConfig,
    cases: usize,
) -> Result<Vec<GeneratedInstance>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cases);
    for i in 0..cases {
        let mut rng = case_rng(cfg.seed, i as u64);
        let inst = match i % 4 {
            0 => {
                let net = random_fibred(&mut rng, cfg)?;
                let n = net.root_instance.architecture.input_dim();
                let x = bitvec(&mut rng, n);
                GeneratedInstance::Fibred { net, x }
            }
            1 => {
                let d0 = rng.random_range(1..=cfg.max_dim);
                let graph = random_graph(&mut rng, cfg.max_vertices, d0);
                let source = random_gnn(&mut rng, cfg, d0, false);
                let nodes: Vec<&String> = graph.nodes.iter().collect();
                let vertex = nodes[rng.random_range(0..nodes.len())].clone();
                GeneratedInstance::GnnCase {
                    graph,
                    source,
                    vertex,
                }
            }
            2 => {
                let d0 = rng.random_range(1..=cfg.max_dim);
                let graph = random_graph(&mut rng, cfg.max_vertices, d0);
                let source = random_gat(&mut rng, cfg, d0, false);
                let nodes: Vec<&String> = graph.nodes.iter().collect();
                let vertex = nodes[rng.random_range(0..nodes.len())].clone();
                GeneratedInstance::GatCase {
                    graph,
                    source,
                    vertex,
                }
            }
            _ => {
                let d0 = rng.random_range(1..=cfg.max_dim);
                let seq = random_tokens(&mut rng, cfg, d0);
                let position = rng.random_range(0..seq.len());
                GeneratedInstance::TokenCase {
                    sequence: seq,
                    position,
                }
            }
        };
        out.push(inst);
    }
    Ok(out)
}
