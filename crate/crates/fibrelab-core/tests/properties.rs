use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fibrelab_core::{
    apply_activation, gat_forward, gnn_forward, hardmax, parse_formula, run_network, run_span,
    truncated_relu, ActivationSpec, ComponentId, FeaturedGraph, Formula, GatInstance, GnnInstance,
    LayerSpan, LayerTag, NetworkInstance, NeuralArchitecture, RMatrix, RVector, Rational,
};

fn rational_strategy() -> impl Strategy<Value = Rational> {
    (-8i64..=8, 1i64..=4).prop_map(|(p, q)| Rational::new(p, q))
}

fn rvec_strategy(dim: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = RVector> {
    prop::collection::vec(rational_strategy(), dim).prop_map(RVector)
}

fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_rational(rng: &mut ChaCha8Rng) -> Rational {
    Rational::new(rng.random_range(-3..=3), rng.random_range(1..=3))
}

fn rand_rvec(rng: &mut ChaCha8Rng, dim: usize) -> RVector {
    RVector((0..dim).map(|_| rand_rational(rng)).collect())
}

fn rand_rmat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> RMatrix {
    let mut m = RMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            m.set(r, c, rand_rational(rng));
        }
    }
    m
}

fn rand_instance(rng: &mut ChaCha8Rng) -> NetworkInstance {
    let layers = rng.random_range(1..=3usize);
    let dims: Vec<usize> = (0..=layers).map(|_| rng.random_range(1..=3usize)).collect();
    let activations = dims[1..dims.len() - 1]
        .iter()
        .map(|&d| {
            if rng.random_bool(0.5) {
                ActivationSpec::identity(d)
            } else {
                ActivationSpec::truncated_relu(d)
            }
        })
        .collect();
    let arch = NeuralArchitecture::new(dims.clone(), activations).unwrap();
    let weights = (1..dims.len()).map(|t| rand_rmat(rng, dims[t], dims[t - 1])).collect();
    let biases = (1..dims.len()).map(|t| rand_rvec(rng, dims[t])).collect();
    NetworkInstance::new(arch, weights, biases).unwrap()
}

fn rand_graph(rng: &mut ChaCha8Rng, d0: usize) -> FeaturedGraph {
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
        .map(|u| (u.clone(), rand_rvec(rng, d0)))
        .collect();
    FeaturedGraph::new(nodes, edges, features).unwrap()
}

fn component_strategy() -> impl Strategy<Value = ComponentId> {
    (
        "[a-z]{1,4}",
        prop_oneof![Just(LayerTag::In), (1usize..=3).prop_map(LayerTag::Layer)],
    )
        .prop_map(|(node, layer)| ComponentId { node, layer })
}

fn formula_strategy() -> impl Strategy<Value = Formula> {
    let leaf = prop_oneof![
        1 => Just(Formula::top()),
        3 => (1usize..=6).prop_map(Formula::prop),
    ];
    leaf.prop_recursive(4, 24, 3, |inner| {
        prop_oneof![
            inner.clone().prop_map(Formula::not),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::and(a, b)),
            (component_strategy(), inner).prop_map(|(c, f)| Formula::boxed(c, f)),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn hardmax_is_a_uniform_argmax_distribution(v in rvec_strategy(1..=6)) {
        let h = hardmax(&v).unwrap();
        let sum = h.iter().fold(Rational::zero(), |a, b| &a + b);
        prop_assert_eq!(sum, Rational::one());
        let max = v.iter().max().unwrap();
        let k = v.iter().filter(|x| *x == max).count() as i64;
        let share = Rational::new(1, k);
        for i in 0..v.dim() {
            if v[i] == *max {
                prop_assert_eq!(h[i].clone(), share.clone());
            } else {
                prop_assert_eq!(h[i].clone(), Rational::zero());
            }
        }
    }

    #[test]
    fn hardmax_ignores_uniform_shifts(v in rvec_strategy(1..=6), c in rational_strategy()) {
        let shifted = RVector(v.iter().map(|x| x + &c).collect());
        prop_assert_eq!(hardmax(&v).unwrap(), hardmax(&shifted).unwrap());
    }

    #[test]
    fn truncated_relu_clamps_and_keeps_strict_sign(v in rvec_strategy(1..=6)) {
        let t = truncated_relu(&v);
        for i in 0..v.dim() {
            prop_assert!(t[i] >= Rational::zero() && t[i] <= Rational::one());
            prop_assert_eq!(t[i].is_positive(), v[i].is_positive());
        }
    }

    #[test]
    fn activation_specs_apply_componentwise(v in rvec_strategy(1..=5)) {
        let id = apply_activation(&ActivationSpec::identity(v.dim()), &v).unwrap();
        prop_assert_eq!(id, v.clone());
        let tr = apply_activation(&ActivationSpec::truncated_relu(v.dim()), &v).unwrap();
        prop_assert_eq!(tr, truncated_relu(&v));
    }

    #[test]
    fn run_span_composes_at_every_split(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let inst = rand_instance(&mut rng);
        let x = rand_rvec(&mut rng, inst.architecture.input_dim());
        let layers = inst.architecture.layer_count();
        let full = run_network(&inst, &x).unwrap();
        for k in 0..=layers {
            let front = run_span(&inst, LayerSpan::new(0, k), &x).unwrap();
            let back = run_span(&inst, LayerSpan::new(k, layers), &front).unwrap();
            prop_assert_eq!(back, full.clone(), "split at {}", k);
        }
    }

    #[test]
    fn zero_attention_averages_the_aggregation(seed in any::<u64>()) {
        // With a zero scoring vector every candidate ties, so attention
        // hands each of the deg+1 participants an equal share:
        // h_gat = (h_gnn - b) / (deg + 1) + b for a single layer.
        let mut rng = seeded(seed);
        let d0 = rng.random_range(1..=2usize);
        let d1 = rng.random_range(1..=2usize);
        let graph = rand_graph(&mut rng, d0);
        let gnn = GnnInstance::new(
            vec![d0, d1],
            vec![rand_rmat(&mut rng, d1, d0)],
            vec![rand_rmat(&mut rng, d1, d0)],
            vec![rand_rvec(&mut rng, d1)],
        )
        .unwrap();
        let gat = GatInstance::new(gnn.clone(), vec![RVector::zeros(2 * d1)]).unwrap();
        let plain = gnn_forward(&gnn, &graph).unwrap();
        let attended = gat_forward(&gat, &graph).unwrap();
        for u in &graph.nodes {
            let share = Rational::new(1, (graph.degree(u) + 1) as i64);
            let b = &gnn.biases[0];
            let h_gnn = plain.h_final(u).unwrap();
            let h_gat = attended.h_final(u).unwrap();
            for i in 0..d1 {
                let expect = &(&(&h_gnn[i] - &b[i]) * &share) + &b[i];
                prop_assert_eq!(h_gat[i].clone(), expect);
            }
        }
    }

    #[test]
    fn formulas_round_trip_through_print_and_parse(f in formula_strategy()) {
        let printed = f.to_string();
        let back = parse_formula(&printed).unwrap();
        prop_assert_eq!(back, f, "{}", printed);
    }
}
