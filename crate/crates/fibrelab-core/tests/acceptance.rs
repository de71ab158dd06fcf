//! Acceptance gate: nine numbered criteria, each printing one pass/FAIL
//! line. Budgets and seeds are pinned here so reruns are comparable.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fibrelab_core::harness::{
    case_rng, generate_instances, random_fibred, random_formula, InstanceGenConfig,
};
use fibrelab_core::{
    build_compatible, check_compatibility, check_satisfaction, gat_forward, gnn_forward, hardmax,
    parse_formula, replay, run_network, run_span, transport_iso, truncated_relu, verify_prop1,
    verify_thm1, verify_thm2, verify_thm3, ComponentId, CompileMode, FeaturedGraph, GatInstance,
    GnnInstance, LayerSpan, NetworkInstance, NeuralArchitecture, RMatrix, RVector, Rational,
    TieBreak,
};

const AC1_BUDGET: Duration = Duration::from_secs(10);
const AC2_BUDGET: Duration = Duration::from_secs(30);
const AC3_BUDGET: Duration = Duration::from_secs(30);
const AC4_BUDGET: Duration = Duration::from_secs(30);
const AC5_BUDGET: Duration = Duration::from_secs(60);
const AC6_BUDGET: Duration = Duration::from_secs(120);

const SEED_COMPILED: u64 = 0xF1B_0001;
const SEED_FIBRED: u64 = 0xF1B_0003;
const SEED_EXTRACT: u64 = 0xF1B_0006;

fn fibred_cfg() -> InstanceGenConfig {
    // Root input width <= 4 and fibring depth <= 2.
    InstanceGenConfig::with_seed(SEED_FIBRED)
}

fn line(ac: &str, pass: bool, detail: &str) {
    println!("{ac}: {}: {detail}", if pass { "pass" } else { "FAIL" });
}

#[test]
fn ac1_compiled_gnn_matches_forward_pass() {
    let start = Instant::now();
    let cfg = InstanceGenConfig::with_seed(SEED_COMPILED);
    let report = verify_thm2(&cfg, 200, CompileMode::Gnn);
    let elapsed = start.elapsed();
    let pass = report.passed() && elapsed < AC1_BUDGET;
    line(
        "AC1",
        pass,
        &format!(
            "200 graph-network cases, {} failures, {:.2?} (budget {:?})",
            report.failures.len(),
            elapsed,
            AC1_BUDGET
        ),
    );
    assert!(report.passed(), "first failure: {:?}", report.failures.first());
    assert!(elapsed < AC1_BUDGET, "took {elapsed:.2?}");
}

#[test]
fn ac2_compiled_attention_matches_forward_pass() {
    let start = Instant::now();
    let cfg = InstanceGenConfig::with_seed(SEED_COMPILED + 1);
    let gat = verify_thm2(&cfg, 200, CompileMode::Gat);
    let tra = verify_thm2(&cfg, 200, CompileMode::Transformer);
    let elapsed = start.elapsed();
    let pass = gat.passed() && tra.passed() && elapsed < AC2_BUDGET;
    line(
        "AC2",
        pass,
        &format!(
            "200 attention + 200 token cases, {}+{} failures, {:.2?} (budget {:?})",
            gat.failures.len(),
            tra.failures.len(),
            elapsed,
            AC2_BUDGET
        ),
    );
    assert!(gat.passed(), "first failure: {:?}", gat.failures.first());
    assert!(tra.passed(), "first failure: {:?}", tra.failures.first());
    assert!(elapsed < AC2_BUDGET, "took {elapsed:.2?}");
}

#[test]
fn ac3_built_models_satisfy_every_condition() {
    let start = Instant::now();
    let cfg = fibred_cfg();
    let mut violations = Vec::new();
    for i in 0..50u64 {
        let mut rng = case_rng(cfg.seed, i);
        let net = random_fibred(&mut rng, &cfg).expect("generator yields a buildable network");
        let n = net.root_instance.architecture.input_dim();
        let x = RVector(
            (0..n)
                .map(|_| Rational::int(if rng.random_bool(0.5) { 1 } else { 0 }))
                .collect(),
        );
        match build_compatible(&net, &x) {
            Ok(model) => {
                let report = check_compatibility(&model, &net, &x);
                for f in report.failures() {
                    violations.push(format!(
                        "case{i:04}: {}: {}",
                        f.condition,
                        f.witness.clone().unwrap_or_default()
                    ));
                }
            }
            Err(e) => violations.push(format!("case{i:04}: build error: {e}")),
        }
    }
    let elapsed = start.elapsed();
    let pass = violations.is_empty() && elapsed < AC3_BUDGET;
    line(
        "AC3",
        pass,
        &format!(
            "50 built models, {} violations, {:.2?} (budget {:?})",
            violations.len(),
            elapsed,
            AC3_BUDGET
        ),
    );
    assert!(violations.is_empty(), "first violation: {}", violations[0]);
    assert!(elapsed < AC3_BUDGET, "took {elapsed:.2?}");
}

#[test]
fn ac4_compatibility_is_closed_under_relabeling() {
    let start = Instant::now();
    let cfg = fibred_cfg();
    let mut breaks = Vec::new();
    for i in 0..50u64 {
        let mut rng = case_rng(cfg.seed, i);
        let net = random_fibred(&mut rng, &cfg).expect("generator yields a buildable network");
        let n = net.root_instance.architecture.input_dim();
        let x = RVector(
            (0..n)
                .map(|_| Rational::int(if rng.random_bool(0.5) { 1 } else { 0 }))
                .collect(),
        );
        let model = match build_compatible(&net, &x) {
            Ok(m) => m,
            Err(e) => {
                breaks.push(format!("case{i:04}: build error: {e}"));
                continue;
            }
        };
        let comps: Vec<ComponentId> = model.model.components.keys().cloned().collect();
        let target = comps[rng.random_range(0..comps.len())].clone();
        let worlds: Vec<String> = model.model.components[&target].worlds.iter().cloned().collect();
        let mut shuffled = worlds.clone();
        shuffled.shuffle(&mut rng);
        let relabel: BTreeMap<String, String> =
            worlds.iter().cloned().zip(shuffled.into_iter()).collect();
        let moved = match transport_iso(&model, &target, &relabel) {
            Ok(m) => m,
            Err(e) => {
                breaks.push(format!("case{i:04}: transport error: {e}"));
                continue;
            }
        };
        let verdict = check_compatibility(&moved, &net, &x);
        if !verdict.passed() {
            breaks.push(format!(
                "case{i:04}: relabeling broke {}",
                verdict.failures()[0].condition
            ));
            continue;
        }
        for k in 0..20 {
            let f = random_formula(&mut rng, 3, n, &comps);
            let w = &worlds[rng.random_range(0..worlds.len())];
            let before = check_satisfaction(&model.model, &target, w, &f, TieBreak::Least);
            let after =
                check_satisfaction(&moved.model, &target, &relabel[w], &f, TieBreak::Least);
            let same = match (&before, &after) {
                (Ok(a), Ok(b)) => a == b,
                (Err(_), Err(_)) => true,
                _ => false,
            };
            if !same {
                breaks.push(format!("case{i:04}: formula {k} changed truth at {w}: {f}"));
                break;
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = breaks.is_empty() && elapsed < AC4_BUDGET;
    line(
        "AC4",
        pass,
        &format!(
            "50 relabeled models x 20 formulas, {} breaks, {:.2?} (budget {:?})",
            breaks.len(),
            elapsed,
            AC4_BUDGET
        ),
    );
    assert!(breaks.is_empty(), "first break: {}", breaks[0]);
    assert!(elapsed < AC4_BUDGET, "took {elapsed:.2?}");
}

#[test]
fn ac5_extracted_formula_tracks_classification() {
    let start = Instant::now();
    let cfg = fibred_cfg();
    let report = verify_thm1(&cfg, 50);
    let elapsed = start.elapsed();
    // Every recorded mismatch must come with a replayable shrunk witness.
    for f in &report.failures {
        let again = replay(&f.repro).expect("repro replays");
        assert!(
            !again.passed(),
            "{}: minimized repro no longer reproduces",
            f.case_id
        );
    }
    let pass = report.passed() && elapsed < AC5_BUDGET;
    line(
        "AC5",
        pass,
        &format!(
            "50 networks, full cube sweeps: {} mismatches, {} tie-break divergences, {:.2?} (budget {:?})",
            report.failures.len(),
            report.divergences.len(),
            elapsed,
            AC5_BUDGET
        ),
    );
    if let Some(f) = report.failures.first() {
        println!(
            "AC5 minimized witness ({}): {}",
            f.case_id,
            serde_json::to_string(&f.repro).unwrap()
        );
    }
    assert!(elapsed < AC5_BUDGET, "took {elapsed:.2?}");
    assert!(
        report.passed(),
        "{} of 50 cases disagree; first: {} expected {} got {}",
        report.failures.len(),
        report.failures[0].case_id,
        report.failures[0].expected,
        report.failures[0].got
    );
}

#[test]
fn ac6_extraction_survives_compilation() {
    let start = Instant::now();
    let gnn_cfg = InstanceGenConfig {
        seed: SEED_EXTRACT,
        max_layers: 2,
        max_vertices: 8,
        ..Default::default()
    };
    let gnn = verify_thm3(&gnn_cfg, 30, CompileMode::Gnn);
    let tra_cfg = InstanceGenConfig {
        seed: SEED_EXTRACT + 1,
        max_layers: 2,
        ..Default::default()
    };
    let tra = verify_thm3(&tra_cfg, 10, CompileMode::Transformer);
    let elapsed = start.elapsed();
    for f in gnn.failures.iter().chain(tra.failures.iter()) {
        let again = replay(&f.repro).expect("repro replays");
        assert!(!again.passed(), "{}: repro no longer reproduces", f.case_id);
    }
    let pass = gnn.passed() && tra.passed() && elapsed < AC6_BUDGET;
    line(
        "AC6",
        pass,
        &format!(
            "30 graph + 10 token compilations, exhaustive features: {}+{} mismatches, {:.2?} (budget {:?})",
            gnn.failures.len(),
            tra.failures.len(),
            elapsed,
            AC6_BUDGET
        ),
    );
    if let Some(f) = gnn.failures.first().or(tra.failures.first()) {
        println!(
            "AC6 witness ({}): expected {}, got {}",
            f.case_id, f.expected, f.got
        );
    }
    assert!(elapsed < AC6_BUDGET, "took {elapsed:.2?}");
    assert!(
        gnn.passed() && tra.passed(),
        "{}+{} mismatches; first: {:?}",
        gnn.failures.len(),
        tra.failures.len(),
        gnn.failures.first().or(tra.failures.first()).map(|f| &f.case_id)
    );
}

#[test]
fn ac7_numeric_invariants_hold_randomized() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC7);
    let rat = |rng: &mut ChaCha8Rng| Rational::new(rng.random_range(-9..=9), rng.random_range(1..=5));
    let vec = |rng: &mut ChaCha8Rng, d: usize| RVector((0..d).map(|_| rat(rng)).collect());

    // Attention normalizer: sums to one, shares are 0 or 1/k, and uniform
    // shifts of the score vector change nothing.
    for _ in 0..1000 {
        let d = rng.random_range(1..=6);
        let v = vec(&mut rng, d);
        let h = hardmax(&v).unwrap();
        let sum = h.iter().fold(Rational::zero(), |a, b| &a + b);
        assert_eq!(sum, Rational::one());
        let max = v.iter().max().unwrap().clone();
        let k = v.iter().filter(|x| **x == max).count() as i64;
        for i in 0..d {
            let expect = if v[i] == max {
                Rational::new(1, k)
            } else {
                Rational::zero()
            };
            assert_eq!(h[i], expect);
        }
        let c = rat(&mut rng);
        let shifted = RVector(v.iter().map(|x| x + &c).collect());
        assert_eq!(hardmax(&shifted).unwrap(), h);
    }

    // Clamped activation: range [0, 1], strict sign preserved.
    for _ in 0..1000 {
        let d = rng.random_range(1..=6);
        let v = vec(&mut rng, d);
        let t = truncated_relu(&v);
        for i in 0..d {
            assert!(t[i] >= Rational::zero() && t[i] <= Rational::one());
            assert_eq!(t[i].is_positive(), v[i].is_positive());
        }
    }

    // Partial evaluation composes.
    for _ in 0..1000 {
        let layers = rng.random_range(1..=3usize);
        let dims: Vec<usize> = (0..=layers).map(|_| rng.random_range(1..=3)).collect();
        let acts = dims[1..layers]
            .iter()
            .map(|&d| {
                if rng.random_bool(0.5) {
                    fibrelab_core::ActivationSpec::identity(d)
                } else {
                    fibrelab_core::ActivationSpec::truncated_relu(d)
                }
            })
            .collect();
        let arch = NeuralArchitecture::new(dims.clone(), acts).unwrap();
        let weights = (1..dims.len())
            .map(|t| {
                let mut m = RMatrix::zeros(dims[t], dims[t - 1]);
                for r in 0..dims[t] {
                    for c in 0..dims[t - 1] {
                        m.set(r, c, rat(&mut rng));
                    }
                }
                m
            })
            .collect();
        let biases = (1..dims.len()).map(|t| vec(&mut rng, dims[t])).collect();
        let inst = NetworkInstance::new(arch, weights, biases).unwrap();
        let x = vec(&mut rng, dims[0]);
        let full = run_network(&inst, &x).unwrap();
        let k = rng.random_range(0..=layers);
        let front = run_span(&inst, LayerSpan::new(0, k), &x).unwrap();
        let back = run_span(&inst, LayerSpan::new(k, layers), &front).unwrap();
        assert_eq!(back, full);
    }

    // Zero scoring vector averages the one-layer aggregation.
    for _ in 0..1000 {
        let d0 = rng.random_range(1..=2usize);
        let d1 = rng.random_range(1..=2usize);
        let v = rng.random_range(1..=4usize);
        let nodes: Vec<String> = (0..v).map(|i| format!("v{i}")).collect();
        let mut edges = Vec::new();
        for i in 0..v {
            for j in i + 1..v {
                if rng.random_bool(0.5) {
                    edges.push((nodes[i].clone(), nodes[j].clone()));
                }
            }
        }
        let features: BTreeMap<String, RVector> = nodes
            .iter()
            .map(|u| (u.clone(), vec(&mut rng, d0)))
            .collect();
        let graph = FeaturedGraph::new(nodes.clone(), edges, features).unwrap();
        let mk = |rng: &mut ChaCha8Rng| {
            let mut m = RMatrix::zeros(d1, d0);
            for r in 0..d1 {
                for c in 0..d0 {
                    m.set(r, c, rat(rng));
                }
            }
            m
        };
        let gnn = GnnInstance::new(
            vec![d0, d1],
            vec![mk(&mut rng)],
            vec![mk(&mut rng)],
            vec![vec(&mut rng, d1)],
        )
        .unwrap();
        let gat = GatInstance::new(gnn.clone(), vec![RVector::zeros(2 * d1)]).unwrap();
        let plain = gnn_forward(&gnn, &graph).unwrap();
        let attended = gat_forward(&gat, &graph).unwrap();
        for u in &nodes {
            let share = Rational::new(1, (graph.degree(u) + 1) as i64);
            let b = &gnn.biases[0];
            let h_gnn = plain.h_final(u).unwrap();
            let h_gat = attended.h_final(u).unwrap();
            for i in 0..d1 {
                let expect = &(&(&h_gnn[i] - &b[i]) * &share) + &b[i];
                assert_eq!(h_gat[i], expect);
            }
        }
    }

    line("AC7", true, "4 invariant families x 1000 randomized checks");
}

#[test]
fn ac8_formulas_round_trip_print_and_parse() {
    let comps = vec![
        ComponentId {
            node: "r".into(),
            layer: fibrelab_core::LayerTag::In,
        },
        ComponentId {
            node: "r.0".into(),
            layer: fibrelab_core::LayerTag::Layer(1),
        },
        ComponentId {
            node: "r.1.0".into(),
            layer: fibrelab_core::LayerTag::Layer(3),
        },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC8);
    for k in 0..500 {
        let f = random_formula(&mut rng, 5, 8, &comps);
        let printed = f.to_string();
        let back = parse_formula(&printed)
            .unwrap_or_else(|e| panic!("formula {k} failed to parse back: {e}: {printed}"));
        assert_eq!(back, f, "formula {k} changed across print/parse: {printed}");
    }
    line("AC8", true, "500 formula ASTs round-tripped");
}

#[test]
fn ac9_reports_are_bytewise_deterministic() {
    let cfg = InstanceGenConfig::with_seed(0xAC9);
    let pairs = [
        (
            verify_thm2(&cfg, 5, CompileMode::Gnn).to_json(),
            verify_thm2(&cfg, 5, CompileMode::Gnn).to_json(),
        ),
        (
            verify_prop1(&cfg, 4).to_json(),
            verify_prop1(&cfg, 4).to_json(),
        ),
        (
            verify_thm1(&cfg, 3).to_json(),
            verify_thm1(&cfg, 3).to_json(),
        ),
        (
            verify_thm3(&cfg, 2, CompileMode::Gnn).to_json(),
            verify_thm3(&cfg, 2, CompileMode::Gnn).to_json(),
        ),
    ];
    for (i, (a, b)) in pairs.iter().enumerate() {
        assert_eq!(a.as_bytes(), b.as_bytes(), "report family {i} not byte-stable");
    }
    let g1 = generate_instances(&cfg, 12).unwrap();
    let g2 = generate_instances(&cfg, 12).unwrap();
    assert_eq!(
        serde_json::to_string(&g1).unwrap(),
        serde_json::to_string(&g2).unwrap()
    );
    line("AC9", true, "4 report families + instance stream byte-stable across reruns");
}
