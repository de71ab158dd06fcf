use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fibred::NodeId;

pub type WorldId = String;

/// Which part of a node a Kripke component describes: the input vector
/// space, or the pre-activation vector space of one layer.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LayerTag {
    In,
    Layer(usize),
}

impl fmt::Display for LayerTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerTag::In => write!(f, "in"),
            LayerTag::Layer(l) => write!(f, "{l}"),
        }
    }
}

/// Address of one Kripke component: (node, layer tag). Printed "node,in"
/// or "node,3"; that string form is also the serde and map-key encoding.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ComponentId {
    pub node: NodeId,
    pub layer: LayerTag,
}

impl ComponentId {
    pub fn input(node: impl Into<NodeId>) -> Self {
        ComponentId {
            node: node.into(),
            layer: LayerTag::In,
        }
    }

    pub fn layer(node: impl Into<NodeId>, l: usize) -> Self {
        ComponentId {
            node: node.into(),
            layer: LayerTag::Layer(l),
        }
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.node, self.layer)
    }
}

impl FromStr for ComponentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (node, tag) = s.rsplit_once(',').ok_or_else(|| {
            Error::Structure(format!("component id {s:?} has no ',' separator"))
        })?;
        if node.is_empty() {
            return Err(Error::Structure(format!("component id {s:?} has empty node")));
        }
        let layer = if tag == "in" {
            LayerTag::In
        } else {
            LayerTag::Layer(tag.parse::<usize>().map_err(|_| {
                Error::Structure(format!("component id {s:?} has bad layer tag {tag:?}"))
            })?)
        };
        Ok(ComponentId {
            node: node.to_string(),
            layer,
        })
    }
}

impl Serialize for ComponentId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ComponentId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(de::Error::custom)
    }
}

/// Modal formulas over indexed propositions with component-indexed boxes.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Formula {
    Top,
    Prop(usize),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Box(ComponentId, Box<Formula>),
}

impl Formula {
    pub fn top() -> Self {
        Formula::Top
    }

    /// Proposition index, 1-based.
    pub fn prop(k: usize) -> Self {
        debug_assert!(k >= 1, "proposition indices are 1-based");
        Formula::Prop(k)
    }

    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Self {
        Formula::And(Box::new(a), Box::new(b))
    }

    /// Disjunction as the derived connective ~(~a & ~b).
    pub fn or(a: Formula, b: Formula) -> Self {
        Formula::not(Formula::and(Formula::not(a), Formula::not(b)))
    }

    pub fn boxed(at: ComponentId, f: Formula) -> Self {
        Formula::Box(at, Box::new(f))
    }

    /// Left-nested conjunction of all parts; empty input is Top.
    pub fn big_and(parts: Vec<Formula>) -> Self {
        let mut it = parts.into_iter();
        match it.next() {
            None => Formula::Top,
            Some(first) => it.fold(first, Formula::and),
        }
    }

    /// Left-nested derived disjunction; empty input is ~T.
    pub fn big_or(parts: Vec<Formula>) -> Self {
        let mut it = parts.into_iter();
        match it.next() {
            None => Formula::not(Formula::Top),
            Some(first) => it.fold(first, Formula::or),
        }
    }

    /// Number of AST nodes.
    pub fn size(&self) -> usize {
        match self {
            Formula::Top | Formula::Prop(_) => 1,
            Formula::Not(f) | Formula::Box(_, f) => 1 + f.size(),
            Formula::And(a, b) => 1 + a.size() + b.size(),
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Top => write!(f, "T"),
            Formula::Prop(k) => write!(f, "p{k}"),
            Formula::Not(inner) => write!(f, "~{inner}"),
            Formula::And(a, b) => write!(f, "({a} & {b})"),
            Formula::Box(at, inner) => write!(f, "[{at}]{inner}"),
        }
    }
}

impl Serialize for Formula {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Formula {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_formula(&s).map_err(de::Error::custom)
    }
}

pub fn print_formula(f: &Formula) -> String {
    f.to_string()
}

/// Recursive-descent parser for the printed formula syntax:
/// `T`, `pK` (K >= 1), `~f`, `(f & f)`, `[node,layer]f` with layer `in`
/// or a layer number. Whitespace is allowed between tokens.
pub fn parse_formula(src: &str) -> Result<Formula> {
    let mut p = Parser {
        src: src.as_bytes(),
        pos: 0,
    };
    let f = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.err("trailing input after formula"));
    }
    Ok(f)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            pos: self.pos,
            msg: msg.into(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ') | Some(b'\t') | Some(b'\n') | Some(b'\r')) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected {:?}", c as char)))
        }
    }

    fn digits(&mut self) -> Result<usize> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err("expected a digit"));
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .expect("digits are ascii")
            .parse::<usize>()
            .map_err(|_| Error::Parse {
                pos: start,
                msg: "number out of range".into(),
            })
    }

    fn expr(&mut self) -> Result<Formula> {
        self.skip_ws();
        match self.peek() {
            Some(b'T') => {
                self.pos += 1;
                Ok(Formula::Top)
            }
            Some(b'p') => {
                self.pos += 1;
                let start = self.pos;
                let k = self.digits()?;
                if k == 0 {
                    return Err(Error::Parse {
                        pos: start,
                        msg: "proposition index must be at least 1".into(),
                    });
                }
                Ok(Formula::Prop(k))
            }
            Some(b'~') => {
                self.pos += 1;
                Ok(Formula::not(self.expr()?))
            }
            Some(b'(') => {
                self.pos += 1;
                let a = self.expr()?;
                self.expect(b'&')?;
                let b = self.expr()?;
                self.expect(b')')?;
                Ok(Formula::and(a, b))
            }
            Some(b'[') => {
                self.pos += 1;
                let start = self.pos;
                while !matches!(self.peek(), Some(b',') | Some(b']') | None) {
                    self.pos += 1;
                }
                let node = std::str::from_utf8(&self.src[start..self.pos])
                    .map_err(|_| self.err("node name is not utf-8"))?
                    .to_string();
                if node.is_empty() {
                    return Err(self.err("expected a node name"));
                }
                if self.peek() != Some(b',') {
                    return Err(self.err("expected ','"));
                }
                self.pos += 1;
                let layer = if self.src[self.pos..].starts_with(b"in") {
                    self.pos += 2;
                    LayerTag::In
                } else {
                    LayerTag::Layer(self.digits()?)
                };
                self.expect(b']')?;
                let inner = self.expr()?;
                Ok(Formula::boxed(
                    ComponentId {
                        node,
                        layer,
                    },
                    inner,
                ))
            }
            _ => Err(self.err("expected formula")),
        }
    }
}

/// One Kripke component: worlds, an accessibility relation over them, and
/// a valuation assigning each world the set of true proposition indices.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KripkeComponent {
    pub worlds: BTreeSet<WorldId>,
    pub relation: BTreeSet<(WorldId, WorldId)>,
    pub valuation: BTreeMap<WorldId, BTreeSet<usize>>,
}

impl KripkeComponent {
    pub fn successors<'a>(&'a self, w: &'a str) -> impl Iterator<Item = &'a WorldId> + 'a {
        self.relation
            .range((w.to_string(), String::new())..)
            .take_while(move |(a, _)| a == w)
            .map(|(_, b)| b)
    }

    pub fn holds(&self, w: &str, prop: usize) -> bool {
        self.valuation.get(w).map(|s| s.contains(&prop)).unwrap_or(false)
    }
}

/// Provenance record at a pre-activation world: the stage vector that
/// produced it, keyed by the vector's canonical serialization, and the
/// input world of the same node that the stage run started from.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Generator {
    pub key: String,
    pub world: WorldId,
}

/// Which provenance generator wins when a world has several: the one whose
/// vector key is least in canonical serialization order, or greatest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    Least,
    Greatest,
}

/// A fibred Kripke model: one component per (node, layer tag), stored
/// jump functions between component worlds, provenance for routing jumps
/// out of pre-activation components, and the fibring tree shape.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FibredModel {
    pub root: NodeId,
    /// child -> parent edges of the fibring tree.
    pub tree: BTreeMap<NodeId, NodeId>,
    pub components: BTreeMap<ComponentId, KripkeComponent>,
    /// src component -> src world -> tgt component -> tgt world.
    pub jumps: BTreeMap<ComponentId, BTreeMap<WorldId, BTreeMap<ComponentId, WorldId>>>,
    /// Pre-activation component -> world -> generators.
    pub provenance: BTreeMap<ComponentId, BTreeMap<WorldId, BTreeSet<Generator>>>,
}

impl FibredModel {
    pub fn new(root: impl Into<NodeId>) -> Self {
        FibredModel {
            root: root.into(),
            tree: BTreeMap::new(),
            components: BTreeMap::new(),
            jumps: BTreeMap::new(),
            provenance: BTreeMap::new(),
        }
    }

    pub fn component(&self, id: &ComponentId) -> Result<&KripkeComponent> {
        self.components
            .get(id)
            .ok_or_else(|| Error::Structure(format!("no component {id}")))
    }

    pub fn component_mut(&mut self, id: &ComponentId) -> &mut KripkeComponent {
        self.components.entry(id.clone()).or_default()
    }

    pub fn add_jump(&mut self, src: &ComponentId, world: &str, tgt: &ComponentId, tgt_world: &str) {
        self.jumps
            .entry(src.clone())
            .or_default()
            .entry(world.to_string())
            .or_default()
            .insert(tgt.clone(), tgt_world.to_string());
    }

    pub fn add_generator(&mut self, at: &ComponentId, world: &str, key: String, from: WorldId) {
        self.provenance
            .entry(at.clone())
            .or_default()
            .entry(world.to_string())
            .or_default()
            .insert(Generator { key, world: from });
    }

    fn stored_jump(&self, src: &ComponentId, world: &str, tgt: &ComponentId) -> Option<&WorldId> {
        self.jumps.get(src)?.get(world)?.get(tgt)
    }

    /// Tree path from `from` down to `to`, excluding `from`, or None when
    /// `to` is not in the subtree below `from`.
    fn path_down(&self, from: &str, to: &str) -> Option<Vec<NodeId>> {
        let mut rev = Vec::new();
        let mut cur = to.to_string();
        while cur != from {
            rev.push(cur.clone());
            cur = self.tree.get(&cur)?.clone();
        }
        rev.reverse();
        Some(rev)
    }
}

/// Resolve a jump from (src, world) to component tgt.
///
/// A directly stored jump wins. Otherwise the jump is composed: out of a
/// pre-activation component via the tie-broken provenance generator back
/// to the node's input component, then along stored input-to-input jumps
/// down the unique tree path, then one stored hop into the target layer
/// component if the target is not an input component.
pub fn resolve_jump(
    model: &FibredModel,
    src: &ComponentId,
    world: &str,
    tgt: &ComponentId,
    tie: TieBreak,
) -> Result<WorldId> {
    if let Some(w) = model.stored_jump(src, world, tgt) {
        return Ok(w.clone());
    }
    let unreachable = || Error::UnreachableJump {
        src: src.to_string(),
        world: world.to_string(),
        tgt: tgt.to_string(),
    };
    // Step out of a pre-activation component to the node's own input.
    let (node, mut cur) = match &src.layer {
        LayerTag::In => (src.node.clone(), world.to_string()),
        LayerTag::Layer(_) => {
            let gens = model
                .provenance
                .get(src)
                .and_then(|m| m.get(world))
                .filter(|g| !g.is_empty())
                .ok_or_else(unreachable)?;
            let gen = match tie {
                TieBreak::Least => gens.iter().next(),
                TieBreak::Greatest => gens.iter().next_back(),
            }
            .expect("nonempty generator set");
            (src.node.clone(), gen.world.clone())
        }
    };
    let path = model.path_down(&node, &tgt.node).ok_or_else(unreachable)?;
    let mut at = ComponentId::input(node);
    for step in path {
        let next = ComponentId::input(step);
        cur = model
            .stored_jump(&at, &cur, &next)
            .ok_or_else(unreachable)?
            .clone();
        at = next;
    }
    match &tgt.layer {
        LayerTag::In => Ok(cur),
        LayerTag::Layer(_) => model
            .stored_jump(&at, &cur, tgt)
            .cloned()
            .ok_or_else(unreachable),
    }
}

/// Satisfaction at (component, world). A box indexed by the current
/// component quantifies over relation successors; a box indexed by another
/// component first resolves the jump there and re-checks the same box.
pub fn check_satisfaction(
    model: &FibredModel,
    at: &ComponentId,
    world: &str,
    formula: &Formula,
    tie: TieBreak,
) -> Result<bool> {
    let comp = model.component(at)?;
    if !comp.worlds.contains(world) {
        return Err(Error::Structure(format!("component {at} has no world {world}")));
    }
    match formula {
        Formula::Top => Ok(true),
        Formula::Prop(k) => Ok(comp.holds(world, *k)),
        Formula::Not(f) => Ok(!check_satisfaction(model, at, world, f, tie)?),
        Formula::And(a, b) => Ok(check_satisfaction(model, at, world, a, tie)?
            && check_satisfaction(model, at, world, b, tie)?),
        Formula::Box(j, inner) => {
            if j == at {
                for succ in comp.successors(world) {
                    if !check_satisfaction(model, at, succ, inner, tie)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            } else {
                let landed = resolve_jump(model, at, world, j, tie)?;
                check_satisfaction(model, j, &landed, formula, tie)
            }
        }
    }
}

/// DOT rendering: one cluster per component (worlds labeled with their true
/// propositions, relation edges solid), jump edges dashed across clusters.
pub fn model_dot(model: &FibredModel) -> String {
    let mut out = String::from("digraph fibred_model {\n  compound=true;\n");
    for (i, (cid, comp)) in model.components.iter().enumerate() {
        out.push_str(&format!("  subgraph cluster_{i} {{\n    label=\"{cid}\";\n"));
        for w in &comp.worlds {
            let props: Vec<String> = comp
                .valuation
                .get(w)
                .map(|s| s.iter().map(|k| format!("p{k}")).collect())
                .unwrap_or_default();
            out.push_str(&format!(
                "    \"{cid}|{w}\" [label=\"{w}\\n{{{}}}\"];\n",
                props.join(",")
            ));
        }
        for (a, b) in &comp.relation {
            out.push_str(&format!("    \"{cid}|{a}\" -> \"{cid}|{b}\";\n"));
        }
        out.push_str("  }\n");
    }
    for (src, by_world) in &model.jumps {
        for (w, tgts) in by_world {
            for (tgt, tw) in tgts {
                out.push_str(&format!(
                    "  \"{src}|{w}\" -> \"{tgt}|{tw}\" [style=dashed];\n"
                ));
            }
        }
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rt(s: &str) -> Formula {
        let f = parse_formula(s).unwrap();
        assert_eq!(print_formula(&f), s);
        f
    }

    #[test]
    fn print_parse_round_trips() {
        rt("T");
        rt("p1");
        rt("p12");
        rt("~T");
        rt("(p1 & ~p2)");
        rt("[u,in]p1");
        rt("[u,2](T & [v,in]~p3)");
        rt("~[a.b,in](p1 & (p2 & T))");
    }

    #[test]
    fn parse_is_whitespace_tolerant() {
        let f = parse_formula(" ( p1 &  ~ p2 ) ").unwrap();
        assert_eq!(print_formula(&f), "(p1 & ~p2)");
    }

    #[test]
    fn parse_rejects_bad_input() {
        for bad in [
            "", "p", "p0", "q1", "(p1)", "(p1 | p2)", "(p1 & p2", "[u]p1", "[,in]p1",
            "[u,inx]p1", "[u,]p1", "T T", "~", "[u,in]",
        ] {
            let err = parse_formula(bad).unwrap_err();
            assert!(matches!(err, Error::Parse { .. }), "input {bad:?} gave {err:?}");
        }
    }

    #[test]
    fn parse_error_positions() {
        match parse_formula("p0").unwrap_err() {
            Error::Parse { pos, .. } => assert_eq!(pos, 1),
            e => panic!("unexpected {e:?}"),
        }
        match parse_formula("(p1 & p2").unwrap_err() {
            Error::Parse { pos, .. } => assert_eq!(pos, 8),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn component_id_string_forms() {
        let a = ComponentId::input("u");
        let b = ComponentId::layer("u", 2);
        assert_eq!(a.to_string(), "u,in");
        assert_eq!(b.to_string(), "u,2");
        assert!(a < b);
        assert_eq!("u,in".parse::<ComponentId>().unwrap(), a);
        assert_eq!("u,2".parse::<ComponentId>().unwrap(), b);
        assert_eq!("a.b,7".parse::<ComponentId>().unwrap(), ComponentId::layer("a.b", 7));
        assert!("u".parse::<ComponentId>().is_err());
        assert!(",in".parse::<ComponentId>().is_err());
        assert!("u,x".parse::<ComponentId>().is_err());
    }

    fn two_component_model() -> FibredModel {
        // (u,in): w0. (c,in): wc0, wc1 forming one equivalence class;
        // p1 holds only at wc1. Jump (u,in,w0) -> (c,in,wc0).
        let mut m = FibredModel::new("u");
        m.tree.insert("c".into(), "u".into());
        let uin = ComponentId::input("u");
        let cin = ComponentId::input("c");
        {
            let comp = m.component_mut(&uin);
            comp.worlds.insert("w0".into());
            comp.relation.insert(("w0".into(), "w0".into()));
            comp.valuation.insert("w0".into(), BTreeSet::new());
        }
        {
            let comp = m.component_mut(&cin);
            for w in ["wc0", "wc1"] {
                comp.worlds.insert(w.into());
            }
            for a in ["wc0", "wc1"] {
                for b in ["wc0", "wc1"] {
                    comp.relation.insert((a.into(), b.into()));
                }
            }
            comp.valuation.insert("wc0".into(), BTreeSet::new());
            comp.valuation.insert("wc1".into(), BTreeSet::from([1]));
        }
        m.add_jump(&uin, "w0", &cin, "wc0");
        m
    }

    #[test]
    fn local_box_quantifies_over_successors() {
        let m = two_component_model();
        let cin = ComponentId::input("c");
        // wc0 sees wc0 and wc1; p1 fails at wc0.
        let boxed = Formula::boxed(cin.clone(), Formula::prop(1));
        assert!(!check_satisfaction(&m, &cin, "wc0", &boxed, TieBreak::Least).unwrap());
        let boxed_top = Formula::boxed(cin.clone(), Formula::Top);
        assert!(check_satisfaction(&m, &cin, "wc0", &boxed_top, TieBreak::Least).unwrap());
        // Disjunction p1 or ~p1 holds everywhere.
        let taut = Formula::boxed(
            cin.clone(),
            Formula::or(Formula::prop(1), Formula::not(Formula::prop(1))),
        );
        assert!(check_satisfaction(&m, &cin, "wc1", &taut, TieBreak::Least).unwrap());
    }

    #[test]
    fn cross_component_box_follows_jump() {
        let m = two_component_model();
        let uin = ComponentId::input("u");
        let cin = ComponentId::input("c");
        let boxed_p1 = Formula::boxed(cin.clone(), Formula::prop(1));
        // Jump lands at wc0 whose class contains a ~p1 world.
        assert!(!check_satisfaction(&m, &uin, "w0", &boxed_p1, TieBreak::Least).unwrap());
        let boxed_top = Formula::boxed(cin, Formula::Top);
        assert!(check_satisfaction(&m, &uin, "w0", &boxed_top, TieBreak::Least).unwrap());
    }

    #[test]
    fn resolve_direct_and_identity() {
        let m = two_component_model();
        let uin = ComponentId::input("u");
        let cin = ComponentId::input("c");
        assert_eq!(resolve_jump(&m, &uin, "w0", &cin, TieBreak::Least).unwrap(), "wc0");
        // Empty path: input component to itself.
        assert_eq!(resolve_jump(&m, &uin, "w0", &uin, TieBreak::Least).unwrap(), "w0");
    }

    #[test]
    fn resolve_routes_through_provenance_with_tie_break() {
        let mut m = two_component_model();
        let u1 = ComponentId::layer("u", 1);
        let uin = ComponentId::input("u");
        let cin = ComponentId::input("c");
        {
            let comp = m.component_mut(&uin);
            comp.worlds.insert("w1".into());
        }
        {
            let comp = m.component_mut(&u1);
            comp.worlds.insert("h0".into());
        }
        {
            let comp = m.component_mut(&cin);
            comp.worlds.insert("wc9".into());
        }
        m.add_jump(&uin, "w1", &cin, "wc9");
        // Two generators at the same pre-activation world.
        m.add_generator(&u1, "h0", "0".into(), "w0".into());
        m.add_generator(&u1, "h0", "1".into(), "w1".into());
        assert_eq!(
            resolve_jump(&m, &u1, "h0", &cin, TieBreak::Least).unwrap(),
            "wc0"
        );
        assert_eq!(
            resolve_jump(&m, &u1, "h0", &cin, TieBreak::Greatest).unwrap(),
            "wc9"
        );
    }

    #[test]
    fn resolve_rejects_unreachable_targets() {
        let mut m = two_component_model();
        // Sibling d of c.
        m.tree.insert("d".into(), "u".into());
        let din = ComponentId::input("d");
        m.component_mut(&din).worlds.insert("wd0".into());
        let cin = ComponentId::input("c");
        // c -> d is a sibling hop, not a downward path.
        let err = resolve_jump(&m, &cin, "wc0", &din, TieBreak::Least).unwrap_err();
        assert!(matches!(err, Error::UnreachableJump { .. }));
        // Upward jump c -> u.
        let uin = ComponentId::input("u");
        let err = resolve_jump(&m, &cin, "wc0", &uin, TieBreak::Least).unwrap_err();
        assert!(matches!(err, Error::UnreachableJump { .. }));
        // Downward path whose stored jump is missing: u -> d.
        let err = resolve_jump(&m, &uin, "w0", &din, TieBreak::Least).unwrap_err();
        assert!(matches!(err, Error::UnreachableJump { .. }));
    }

    #[test]
    fn satisfaction_propagates_unreachable_jump() {
        let m = two_component_model();
        let cin = ComponentId::input("c");
        let uin = ComponentId::input("u");
        let f = Formula::boxed(uin, Formula::Top);
        let err = check_satisfaction(&m, &cin, "wc0", &f, TieBreak::Least).unwrap_err();
        assert!(matches!(err, Error::UnreachableJump { .. }));
    }

    #[test]
    fn model_json_round_trip() {
        let mut m = two_component_model();
        m.add_generator(&ComponentId::layer("u", 1), "h0", "1/2,0".into(), "w0".into());
        m.component_mut(&ComponentId::layer("u", 1)).worlds.insert("h0".into());
        let j = serde_json::to_string(&m).unwrap();
        let back: FibredModel = serde_json::from_str(&j).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn dot_contains_clusters_and_dashed_jumps() {
        let m = two_component_model();
        let dot = model_dot(&m);
        assert!(dot.contains("cluster_0"));
        assert!(dot.contains("label=\"c,in\""));
        assert!(dot.contains("style=dashed"));
    }

    #[test]
    fn formula_size_and_builders() {
        let f = Formula::big_and(vec![]);
        assert_eq!(f, Formula::Top);
        let g = Formula::big_or(vec![]);
        assert_eq!(print_formula(&g), "~T");
        let h = Formula::big_and(vec![Formula::prop(1), Formula::prop(2), Formula::prop(3)]);
        assert_eq!(print_formula(&h), "((p1 & p2) & p3)");
        assert_eq!(h.size(), 5);
    }
}
