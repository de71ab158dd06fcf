//! Exact-arithmetic workbench for fibred neural networks: evaluation,
//! compatible Kripke model construction, graph/attention network compilation,
//! and modal formula extraction, with randomized verification harnesses.

pub mod error;
pub mod rational;
pub mod linalg;
pub mod feedforward;
pub mod compiler;
pub mod fibred;
pub mod graph;
pub mod modal;
pub mod compatible;
pub mod harness;

pub use error::{Error, Result};
pub use rational::Rational;
pub use linalg::{
    apply_activation, hardmax, mat_vec_mul_add, truncated_relu, ActivationSpec, RMatrix, RVector,
    Segment, SegmentKind,
};
pub use feedforward::{
    classify, run_network, run_span, LayerSpan, NetworkInstance, NeuralArchitecture,
};
pub use fibred::{
    apply_rule, architecture_dot, classify_fibred, evaluate_fibred, evaluate_subtree,
    validate_architecture, EdgeLabel, EvalTrace, FibredNetwork, FibringArchitecture, FibringRule,
    GatGadgetData, NodeId, NodeTrace, StageRecord, ValidationReport,
};
pub use compiler::{
    characteristic_formula, compile, compile_transformer, extracted_formula, lazy_unravel,
    psi_formula, CompileMode, CompiledFibring, SourceInstance, UnravelTree,
};
pub use graph::{
    classify_gat, classify_gnn, classify_transformer, gat_attention_coeffs, gat_forward,
    gnn_forward, transformer_forward, FeaturedGraph, GatInstance, GnnInstance, GraphTrace,
    PosSpec, TokenSequence,
};
pub use modal::{
    check_satisfaction, model_dot, parse_formula, print_formula, resolve_jump, ComponentId,
    FibredModel, Formula, Generator, KripkeComponent, LayerTag, TieBreak, WorldId,
};
pub use compatible::{
    build_compatible, build_compatible_with, check_admissible, check_compatibility, cube_points,
    transport_iso, BuildOptions, CompatibilityReport, CompatibleModel, ConditionResult,
    WorldVectorMap, DEFAULT_MAX_CUBE,
};
pub use harness::{
    case_rng, corrupt_network, generate_instances, random_fibred, random_formula, random_gat,
    random_gnn, random_graph, random_tokens, replay, verify_prop1, verify_thm1, verify_thm2,
    verify_thm3, Failure, GeneratedInstance, InstanceGenConfig, VerificationReport,
};
