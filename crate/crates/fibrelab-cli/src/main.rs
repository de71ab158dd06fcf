use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use fibrelab_core::harness::{
    replay, verify_prop1, verify_thm1, verify_thm2, verify_thm3, InstanceGenConfig,
    VerificationReport,
};
use fibrelab_core::{
    architecture_dot, build_compatible_with, check_compatibility, check_satisfaction,
    classify_fibred, compile, compile_transformer, evaluate_fibred, model_dot, parse_formula,
    BuildOptions, CompileMode, ComponentId, FeaturedGraph, FibredModel, FibredNetwork, RVector,
    SourceInstance, TieBreak, TokenSequence, DEFAULT_MAX_CUBE,
};

const MAX_CUBE_ENV: &str = "FIBRELAB_MAX_CUBE";

/// Exact-arithmetic workbench for fibred neural networks.
#[derive(Parser)]
#[command(name = "fibrelab", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evaluate a fibred network at an input vector.
    ///
    /// Config: {"net": <fibred network>, "x": ["1", "0", ...]}
    Eval {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compile a graph, attention, or token instance into a fibred network.
    ///
    /// Config: {"mode": "gnn"|"gat", "source": ..., "graph": ..., "vertex": "v0"}
    /// or {"mode": "transformer", "source": ..., "sequence": ..., "position": 0}
    Compile {
        #[arg(long)]
        config: PathBuf,
        /// Directory to write compiled.json (and architecture.dot) into.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Emit the fibring tree in dot format instead of JSON.
        #[arg(long)]
        emit_dot: bool,
        /// Emit the compiled artifact as JSON (the default).
        #[arg(long)]
        emit_json: bool,
    },
    /// Check a modal formula at a world of a fibred Kripke model.
    ///
    /// Config: {"model": ..., "at": "node,in", "world": "...",
    ///          "formula": "box((c,in), p1)", "tie": "least"|"greatest"}
    /// Exits 0 when satisfied, 1 when not.
    ModelCheck {
        #[arg(long)]
        config: PathBuf,
    },
    /// Build the compatible model for (net, x) and check every condition.
    ///
    /// Config: {"net": ..., "x": [...], "offset": [...]?}
    /// Exits 0 when all conditions pass, 1 otherwise.
    BuildCompatible {
        #[arg(long)]
        config: PathBuf,
        /// Directory to write model.json (and model.dot) into.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Include the model in dot format.
        #[arg(long)]
        emit_dot: bool,
        /// Include the full model JSON alongside the condition report.
        #[arg(long)]
        emit_json: bool,
        /// Input cube guard; overrides the FIBRELAB_MAX_CUBE variable.
        #[arg(long)]
        max_cube: Option<usize>,
    },
    /// Run a randomized verification sweep and report failures.
    ///
    /// Exits 0 when the sweep finds nothing, 1 when it records failures.
    Verify {
        #[arg(value_enum)]
        claim: Claim,
        /// Generator seed; overrides the seed in --config.
        #[arg(long)]
        seed: Option<u64>,
        /// Cases per sweep (thm3 runs cases/3 token cases as well).
        #[arg(long)]
        cases: Option<usize>,
        /// Instance generator bounds as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory to write the report files into.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replay a single recorded repro instead of sweeping.
        #[arg(long)]
        repro: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Claim {
    Thm1,
    Thm2,
    Thm3,
    Prop1,
}

impl Claim {
    fn name(self) -> &'static str {
        match self {
            Claim::Thm1 => "thm1",
            Claim::Thm2 => "thm2",
            Claim::Thm3 => "thm3",
            Claim::Prop1 => "prop1",
        }
    }
}

#[derive(Deserialize)]
struct EvalConfig {
    net: FibredNetwork,
    x: RVector,
}

#[derive(Deserialize)]
struct CompileConfig {
    mode: CompileMode,
    source: SourceInstance,
    graph: Option<FeaturedGraph>,
    vertex: Option<String>,
    sequence: Option<TokenSequence>,
    position: Option<usize>,
}

#[derive(Deserialize)]
struct ModelCheckConfig {
    model: FibredModel,
    at: ComponentId,
    world: String,
    formula: String,
    #[serde(default)]
    tie: TieChoice,
}

#[derive(Deserialize, Clone, Copy, Default)]
#[serde(rename_all = "snake_case")]
enum TieChoice {
    #[default]
    Least,
    Greatest,
}

#[derive(Deserialize)]
struct BuildConfig {
    net: FibredNetwork,
    x: RVector,
    offset: Option<RVector>,
}

fn fail(msg: impl std::fmt::Display) -> String {
    msg.to_string()
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, String> {
    let text = fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("bad config {}: {e}", path.display()))
}

fn resolve_max_cube(flag: Option<usize>) -> Result<usize, String> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var(MAX_CUBE_ENV) {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .map_err(|e| format!("bad {MAX_CUBE_ENV} value {s:?}: {e}")),
        Err(_) => Ok(DEFAULT_MAX_CUBE),
    }
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn run_eval(config: &Path) -> Result<u8, String> {
    let cfg: EvalConfig = read_config(config)?;
    let (output, _) = evaluate_fibred(&cfg.net, &cfg.x).map_err(fail)?;
    let classification = if output.dim() == 1 {
        Some(classify_fibred(&cfg.net, &cfg.x).map_err(fail)?)
    } else {
        None
    };
    let doc = serde_json::json!({ "output": output, "classification": classification });
    println!("{}", serde_json::to_string_pretty(&doc).map_err(fail)?);
    Ok(0)
}

fn run_compile(
    config: &Path,
    out: Option<&Path>,
    emit_dot: bool,
    emit_json: bool,
) -> Result<u8, String> {
    let cfg: CompileConfig = read_config(config)?;
    let compiled = match cfg.mode {
        CompileMode::Transformer => {
            let seq = cfg
                .sequence
                .ok_or("transformer mode needs a \"sequence\" field")?;
            let position = cfg
                .position
                .ok_or("transformer mode needs a \"position\" field")?;
            let source = match cfg.source {
                SourceInstance::Gat(g) => g,
                SourceInstance::Gnn(_) => {
                    return Err("transformer mode needs an attention source".into())
                }
            };
            compile_transformer(&source, &seq, position).map_err(fail)?
        }
        mode => {
            let graph = cfg.graph.ok_or("graph modes need a \"graph\" field")?;
            let vertex = cfg.vertex.ok_or("graph modes need a \"vertex\" field")?;
            compile(&cfg.source, &graph, &vertex, mode).map_err(fail)?
        }
    };
    let json = serde_json::to_string_pretty(&compiled).map_err(fail)?;
    let dot = architecture_dot(&compiled.architecture);
    if let Some(dir) = out {
        write_out(dir, "compiled.json", &json)?;
        if emit_dot {
            write_out(dir, "architecture.dot", &dot)?;
        }
        eprintln!("wrote {}", dir.join("compiled.json").display());
    } else if emit_dot && !emit_json {
        println!("{dot}");
    } else {
        println!("{json}");
    }
    Ok(0)
}

fn run_model_check(config: &Path) -> Result<u8, String> {
    let cfg: ModelCheckConfig = read_config(config)?;
    let formula = parse_formula(&cfg.formula).map_err(fail)?;
    let tie = match cfg.tie {
        TieChoice::Least => TieBreak::Least,
        TieChoice::Greatest => TieBreak::Greatest,
    };
    let verdict =
        check_satisfaction(&cfg.model, &cfg.at, &cfg.world, &formula, tie).map_err(fail)?;
    println!(
        "{}",
        serde_json::json!({ "satisfied": verdict, "formula": cfg.formula })
    );
    Ok(if verdict { 0 } else { 1 })
}

fn run_build(
    config: &Path,
    out: Option<&Path>,
    emit_dot: bool,
    emit_json: bool,
    max_cube: Option<usize>,
) -> Result<u8, String> {
    let cfg: BuildConfig = read_config(config)?;
    let opts = BuildOptions {
        offset: cfg.offset,
        max_cube: resolve_max_cube(max_cube)?,
    };
    let model = build_compatible_with(&cfg.net, &cfg.x, &opts).map_err(fail)?;
    let report = check_compatibility(&model, &cfg.net, &cfg.x);
    let mut doc = serde_json::json!({ "report": report });
    if emit_json {
        doc["model"] = serde_json::to_value(&model).map_err(fail)?;
    }
    if emit_dot {
        doc["dot"] = serde_json::Value::String(model_dot(&model.model));
    }
    if let Some(dir) = out {
        write_out(
            dir,
            "model.json",
            &serde_json::to_string_pretty(&model).map_err(fail)?,
        )?;
        if emit_dot {
            write_out(dir, "model.dot", &model_dot(&model.model))?;
        }
    }
    println!("{}", serde_json::to_string_pretty(&doc).map_err(fail)?);
    Ok(if report.passed() { 0 } else { 1 })
}

fn run_verify(
    claim: Claim,
    seed: Option<u64>,
    cases: Option<usize>,
    config: Option<&Path>,
    out: Option<&Path>,
    repro: Option<&Path>,
) -> Result<u8, String> {
    if let Some(path) = repro {
        let value: serde_json::Value = read_config(path)?;
        let found = value.get("claim").and_then(|c| c.as_str()).unwrap_or("");
        if found != claim.name() {
            return Err(format!(
                "repro claims {found:?} but the command asked for {:?}",
                claim.name()
            ));
        }
        let report = replay(&value).map_err(fail)?;
        println!("{}", report.to_json());
        return Ok(if report.passed() { 0 } else { 1 });
    }
    let mut cfg = match config {
        Some(path) => read_config::<InstanceGenConfig>(path)?,
        None => InstanceGenConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(fail)?;
    let reports: Vec<(String, VerificationReport)> = match claim {
        Claim::Thm1 => vec![("thm1".into(), verify_thm1(&cfg, cases.unwrap_or(50)))],
        Claim::Prop1 => vec![("prop1".into(), verify_prop1(&cfg, cases.unwrap_or(50)))],
        Claim::Thm2 => {
            let k = cases.unwrap_or(200);
            vec![
                ("thm2-gnn".into(), verify_thm2(&cfg, k, CompileMode::Gnn)),
                ("thm2-gat".into(), verify_thm2(&cfg, k, CompileMode::Gat)),
                (
                    "thm2-transformer".into(),
                    verify_thm2(&cfg, k, CompileMode::Transformer),
                ),
            ]
        }
        Claim::Thm3 => {
            let k = cases.unwrap_or(30);
            vec![
                ("thm3-gnn".into(), verify_thm3(&cfg, k, CompileMode::Gnn)),
                (
                    "thm3-transformer".into(),
                    verify_thm3(&cfg, (k / 3).max(1), CompileMode::Transformer),
                ),
            ]
        }
    };
    for (name, report) in &reports {
        eprintln!(
            "{name}: {} cases, {} failures, {:.2?}",
            report.cases,
            report.failures.len(),
            report.wall_time
        );
        if let Some(dir) = out {
            write_out(dir, &format!("{name}.json"), &report.to_json())?;
        }
    }
    if reports.len() == 1 {
        println!("{}", reports[0].1.to_json());
    } else {
        let all: Vec<&VerificationReport> = reports.iter().map(|(_, r)| r).collect();
        println!("{}", serde_json::to_string_pretty(&all).map_err(fail)?);
    }
    Ok(if reports.iter().all(|(_, r)| r.passed()) {
        0
    } else {
        1
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let outcome = match &cli.cmd {
        Cmd::Eval { config } => run_eval(config),
        Cmd::Compile {
            config,
            out,
            emit_dot,
            emit_json,
        } => run_compile(config, out.as_deref(), *emit_dot, *emit_json),
        Cmd::ModelCheck { config } => run_model_check(config),
        Cmd::BuildCompatible {
            config,
            out,
            emit_dot,
            emit_json,
            max_cube,
        } => run_build(config, out.as_deref(), *emit_dot, *emit_json, *max_cube),
        Cmd::Verify {
            claim,
            seed,
            cases,
            config,
            out,
            repro,
        } => run_verify(
            *claim,
            *seed,
            *cases,
            config.as_deref(),
            out.as_deref(),
            repro.as_deref(),
        ),
    };
    eprintln!("wall time {:.2?}", start.elapsed());
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
