//! Command-line entry points: synthesis, verification, simulation,
//! abstraction, and trace checking over model files.

use crate::abstraction::{
    build_abstraction, export_graph_dot, simulate_composite, solve_graph_game, CompositeStatus,
};
use crate::cegis::{
    cegis_run, compute_bq, diagnostics, encode_irws, encode_rws, Certificate, CegisError,
    CegisOutcome, SolverConfig, VerificationStatus, VerifyOutcome,
};
use crate::model::{check_init_in_interior, check_nondegeneracy, compute_jq, InitialSet};
use crate::modelfile::{load_model, LoadedModel};
use crate::runtime::{
    export_trace_csv, min_dwell_bound, simulate, validate_trace, SimOptions, SwitchingController,
    TerminalStatus,
};
use crate::cegis::verify_certificate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_DEGENERACY: i32 = 3;
pub const EXIT_NO_SOLUTION: i32 = 4;
pub const EXIT_BUDGET: i32 = 5;
pub const EXIT_INTERNAL: i32 = 10;

#[derive(Parser)]
#[command(
    name = "switchsynth",
    about = "Switching-controller synthesis for reach-while-stay specifications",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a control certificate for the model.
    Synth(SynthArgs),
    /// Re-check a stored certificate against the model's conditions.
    Verify(VerifyArgs),
    /// Simulate the closed loop under a stored certificate's controller.
    Simulate(SimulateArgs),
    /// Solve the region decomposition: subproblems, game, composite runs.
    Abstract(AbstractArgs),
    /// Validate an exported trace CSV against a certificate.
    TraceCheck(TraceCheckArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Model file (TOML).
    #[arg(long)]
    model: PathBuf,
    /// Override the delta-sat precision from the model.
    #[arg(long)]
    delta: Option<f64>,
    /// Override the CEGIS iteration cap from the model.
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DiagnosticEncoding {
    /// Facet-exact conditions (exponential facet enumeration).
    FacetExact,
    /// Equality-form barrier condition (tends to exhaust iterations).
    BarrierEquality,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output directory for the certificate bundle.
    #[arg(long)]
    out: PathBuf,
    /// Use a documented non-default encoder instead of the relaxations.
    #[arg(long, value_enum)]
    diagnostic_encoding: Option<DiagnosticEncoding>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Certificate document to check.
    #[arg(long)]
    certificate: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    certificate: PathBuf,
    /// Output directory for trace CSVs and the aggregate report.
    #[arg(long)]
    out: PathBuf,
    /// Number of random initial states.
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fixed initial state "x1,x2,..." instead of sampling.
    #[arg(long)]
    init: Option<String>,
    /// Initial mode id (defaults to the first mode).
    #[arg(long)]
    mode: Option<String>,
    /// Override the time budget.
    #[arg(long)]
    t_max: Option<f64>,
    /// Override the integration step.
    #[arg(long)]
    step: Option<f64>,
}

#[derive(Args)]
struct AbstractArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    out: PathBuf,
    /// Composite closed-loop runs after solving the game.
    #[arg(long, default_value_t = 0)]
    sim_count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Synthesize subproblems on parallel worker threads.
    #[arg(long, default_value_t = false)]
    parallel: bool,
}

#[derive(Args)]
struct TraceCheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    certificate: PathBuf,
    /// Trace CSV produced by `simulate`.
    #[arg(long)]
    trace: PathBuf,
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Abstract(args) => cmd_abstract(args),
        Command::TraceCheck(args) => cmd_trace_check(args),
    }
}

fn load(common: &CommonArgs) -> Result<(LoadedModel, String), i32> {
    let text = match std::fs::read_to_string(&common.model) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", common.model.display());
            return Err(EXIT_PARSE);
        }
    };
    let mut model = match load_model(&text) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return Err(EXIT_PARSE);
        }
    };
    if let Some(d) = common.delta {
        model.params.delta_sat_precision = d;
    }
    if let Some(m) = common.max_iter {
        model.params.max_iterations = m;
    }
    Ok((model, text))
}

fn sha256_hex(data: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(data.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_file(path: &Path, contents: &str) -> Result<(), i32> {
    if let Some(parent) = path.parent() {
        if let Err(e) = std::fs::create_dir_all(parent) {
            eprintln!("error: cannot create {}: {e}", parent.display());
            return Err(EXIT_INTERNAL);
        }
    }
    if let Err(e) = std::fs::write(path, contents) {
        eprintln!("error: cannot write {}: {e}", path.display());
        return Err(EXIT_INTERNAL);
    }
    Ok(())
}

#[derive(Serialize)]
struct RunManifest {
    model_name: String,
    model_hash: String,
    certificate_hash: Option<String>,
    seed: Option<u64>,
    params: crate::model::SynthesisParams,
    wall_time_s: f64,
}

#[derive(Serialize)]
struct SynthSummary {
    status: String,
    iterations: usize,
    verification: String,
    wall_time_s: f64,
}

fn cegis_error_exit(e: &CegisError) -> i32 {
    match e {
        CegisError::IcpBudget | CegisError::LraBudget => EXIT_BUDGET,
        CegisError::Encode(_) => EXIT_INTERNAL,
    }
}

fn cmd_synth(args: SynthArgs) -> i32 {
    let (model, text) = match load(&args.common) {
        Ok(m) => m,
        Err(code) => return code,
    };
    let config = SolverConfig::default();
    let params = model.params;
    let start = Instant::now();

    // Nondegeneracy gate for the safe set.
    let report = check_nondegeneracy(
        &model.spec.safe,
        &model.spec.enclosure,
        params.delta_sat_precision,
        &config.icp,
    );
    if report
        .boundary_pieces
        .iter()
        .any(|s| *s == crate::model::ConditionStatus::Violated)
        || report.interior == crate::model::ConditionStatus::Violated
    {
        eprintln!("error: safe set fails nondegeneracy: {report:?}");
        return EXIT_DEGENERACY;
    }
    if !report.all_hold() {
        eprintln!("warning: nondegeneracy not fully decided within delta: {report:?}");
    }
    if model.spec.is_initialized() {
        if let Err(e) = check_init_in_interior(&model.spec, params.delta_sat_precision, &config.icp)
        {
            eprintln!("error: {e}");
            return EXIT_DEGENERACY;
        }
    }

    let Some(template) = model.template.clone() else {
        eprintln!("error: model has no certificate template");
        return EXIT_PARSE;
    };
    let jq = compute_jq(
        &model.sys,
        &model.spec.safe,
        &model.spec.enclosure,
        params.delta_sat_precision,
        &config.icp,
    );

    let enc = match args.diagnostic_encoding {
        Some(DiagnosticEncoding::FacetExact) => diagnostics::encode_rws_facet_exact(
            &model.sys,
            &model.spec,
            &template,
            &params,
            &config.icp,
        ),
        Some(DiagnosticEncoding::BarrierEquality) => {
            let barrier = match model.barriers.iter().find_map(|b| match b {
                crate::cegis::BarrierSpec::Templated(t) => Some(t.clone()),
                _ => None,
            }) {
                Some(t) => t,
                None => {
                    eprintln!("error: barrier-equality encoding needs a templated barrier");
                    return EXIT_PARSE;
                }
            };
            diagnostics::encode_irws_barrier_equality(
                &model.sys,
                &model.spec,
                &template,
                &barrier,
                &params,
            )
        }
        None => {
            if model.spec.is_initialized() {
                let bq = compute_bq(
                    &model.sys,
                    &model.barriers,
                    &model.spec.enclosure,
                    params.delta_sat_precision,
                    &config.icp,
                );
                encode_irws(
                    &model.sys,
                    &model.spec,
                    &template,
                    &model.barriers,
                    &params,
                    &jq,
                    &bq,
                )
            } else {
                encode_rws(&model.sys, &model.spec, &template, &params, &jq)
            }
        }
    };
    let enc = match enc {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: encoding failed: {e}");
            return EXIT_PARSE;
        }
    };

    let (outcome, _log) = match cegis_run(&model.sys, &model.spec, &enc, &params, &config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return cegis_error_exit(&e);
        }
    };
    let wall = start.elapsed().as_secs_f64();

    let (status, iterations, cert) = match outcome {
        CegisOutcome::Found { mut certificate, iterations } => {
            let verdict =
                match verify_certificate(&model.sys, &model.spec, &certificate, &params, &config) {
                    Ok(v) => v,
                    Err(e) => {
                        eprintln!("error: {e}");
                        return cegis_error_exit(&e);
                    }
                };
            certificate.verification = match &verdict {
                VerifyOutcome::Valid => VerificationStatus::Valid,
                VerifyOutcome::CounterexampleFound(x) => {
                    VerificationStatus::CounterexampleFound(x.clone())
                }
                VerifyOutcome::Unknown => VerificationStatus::Unknown,
            };
            ("found", iterations, Some(certificate))
        }
        CegisOutcome::NoSolution { iterations, .. } => ("no-solution", iterations, None),
        CegisOutcome::IterationBudget { iterations } => ("budget", iterations, None),
    };

    let verification = cert
        .as_ref()
        .map(|c| match &c.verification {
            VerificationStatus::Valid => "valid".to_string(),
            VerificationStatus::CounterexampleFound(_) => "counterexample".to_string(),
            VerificationStatus::Unknown => "unknown".to_string(),
            VerificationStatus::Unchecked => "unchecked".to_string(),
        })
        .unwrap_or_else(|| "n/a".to_string());
    let summary = SynthSummary {
        status: status.to_string(),
        iterations,
        verification: verification.clone(),
        wall_time_s: wall,
    };
    let summary_json = serde_json::to_string_pretty(&summary).expect("summary json");
    if let Err(code) = write_file(&args.out.join("result.json"), &summary_json) {
        return code;
    }

    let mut cert_hash = None;
    if let Some(cert) = &cert {
        let json = cert.to_json(&model.sys);
        cert_hash = Some(sha256_hex(&json));
        if let Err(code) = write_file(&args.out.join("certificate.json"), &json) {
            return code;
        }
        let jq_table = serde_json::to_string_pretty(&cert.jq).expect("jq json");
        if let Err(code) = write_file(&args.out.join("jq.json"), &jq_table) {
            return code;
        }
    }
    let manifest = RunManifest {
        model_name: model.name.clone(),
        model_hash: sha256_hex(&text),
        certificate_hash: cert_hash,
        seed: None,
        params,
        wall_time_s: wall,
    };
    if let Err(code) = write_file(
        &args.out.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest).expect("manifest json"),
    ) {
        return code;
    }

    println!("synth: {status} after {iterations} iteration(s) in {wall:.2}s (verification: {verification})");
    match status {
        "found" => EXIT_OK,
        "no-solution" => EXIT_NO_SOLUTION,
        _ => EXIT_BUDGET,
    }
}

fn read_certificate(path: &Path, model: &LoadedModel) -> Result<Certificate, i32> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return Err(EXIT_PARSE);
        }
    };
    Certificate::from_json(&text, &model.sys, &model.spec).map_err(|e| {
        eprintln!("error: {e}");
        EXIT_PARSE
    })
}

fn cmd_verify(args: VerifyArgs) -> i32 {
    let (model, _) = match load(&args.common) {
        Ok(m) => m,
        Err(code) => return code,
    };
    let cert = match read_certificate(&args.certificate, &model) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let config = SolverConfig::default();
    match verify_certificate(&model.sys, &model.spec, &cert, &model.params, &config) {
        Ok(VerifyOutcome::Valid) => {
            println!("verify: valid");
            EXIT_OK
        }
        Ok(VerifyOutcome::CounterexampleFound(x)) => {
            println!("verify: counterexample at {x:?}");
            EXIT_NO_SOLUTION
        }
        Ok(VerifyOutcome::Unknown) => {
            println!("verify: unknown (solver budget)");
            EXIT_BUDGET
        }
        Err(e) => {
            eprintln!("error: {e}");
            cegis_error_exit(&e)
        }
    }
}

/// Rejection-sample a point of a semialgebraic set inside a box.
fn sample_in_set(
    rng: &mut ChaCha8Rng,
    set: &crate::model::SemialgebraicSet,
    enclosure: &crate::symexpr::IntervalBox,
) -> Option<Vec<f64>> {
    for _ in 0..100_000 {
        let unit: Vec<f64> = (0..enclosure.dim()).map(|_| rng.gen::<f64>()).collect();
        let x = enclosure.lerp(&unit);
        if set.contains(&x, 0.0) {
            return Some(x);
        }
    }
    None
}

#[derive(Serialize)]
struct SimAggregate {
    traces: usize,
    reached_goal: usize,
    reach_rate: f64,
    min_observed_switch_gap: Option<f64>,
    dwell_bound: f64,
    rate_bound: f64,
    max_v_increase: f64,
    all_validations_pass: bool,
}

fn cmd_simulate(args: SimulateArgs) -> i32 {
    let (model, text) = match load(&args.common) {
        Ok(m) => m,
        Err(code) => return code,
    };
    let cert = match read_certificate(&args.certificate, &model) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let ctrl = SwitchingController::from_certificate(&model.sys, &model.spec, &cert);
    let (rate_bound, dwell) = match min_dwell_bound(&ctrl, &model.sys, &model.spec.enclosure) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INTERNAL;
        }
    };
    let mut sim = model.sim;
    // Refine toward a tenth of the dwell bound, but not below 1e-4: the
    // interval Lambda is a worst-case over the whole enclosure and can make
    // the certified dwell microscopically small on polynomial dynamics.
    sim.step = args
        .step
        .unwrap_or_else(|| sim.step.min((dwell / 10.0).max(1e-4)));
    if let Some(t) = args.t_max {
        sim.t_max = t;
    }

    let q0 = match &args.mode {
        None => 0,
        Some(id) => match model.sys.mode_index(id) {
            Some(i) => i,
            None => {
                eprintln!("error: unknown mode '{id}'");
                return EXIT_PARSE;
            }
        },
    };

    let sample_set = match &model.spec.init {
        InitialSet::Set(s) => s.clone(),
        InitialSet::Uninitialized => model.spec.safe.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let starts: Vec<Vec<f64>> = match &args.init {
        Some(text) => {
            let parsed: Result<Vec<f64>, _> =
                text.split(',').map(|s| s.trim().parse::<f64>()).collect();
            match parsed {
                Ok(x) if x.len() == model.sys.dim() => vec![x],
                _ => {
                    eprintln!("error: --init must be {} comma-separated numbers", model.sys.dim());
                    return EXIT_PARSE;
                }
            }
        }
        None => {
            let mut v = Vec::with_capacity(args.count);
            for _ in 0..args.count {
                match sample_in_set(&mut rng, &sample_set, &model.spec.enclosure) {
                    Some(x) => v.push(x),
                    None => {
                        eprintln!("error: could not sample an initial state");
                        return EXIT_INTERNAL;
                    }
                }
            }
            v
        }
    };

    let vmap = crate::symexpr::CompiledExpr::compile(&cert.v);
    let mut reached = 0usize;
    let mut min_gap: Option<f64> = None;
    let mut max_v_increase = 0.0f64;
    let mut all_ok = true;
    let start = Instant::now();
    for (i, x0) in starts.iter().enumerate() {
        let trace = simulate(&model.sys, &model.spec, &ctrl, x0, q0, &sim);
        if matches!(trace.status, TerminalStatus::ReachedGoal(_)) {
            reached += 1;
        }
        let report = validate_trace(
            &trace,
            &model.spec,
            &cert,
            dwell,
            sim.step,
            sim.tol_goal,
            decrease_slack(&sim, rate_bound),
        );
        if let Some(g) = report.min_switch_gap {
            min_gap = Some(min_gap.map_or(g, |m| m.min(g)));
        }
        // Largest observed step-to-step V increase outside the goal.
        let mut scratch = Vec::new();
        for w in trace.points.windows(2) {
            if model.spec.goal.contains(&w[1].state, sim.tol_goal) {
                break;
            }
            if let (Ok(a), Ok(b)) = (
                vmap.eval_point_with(&w[0].state, &mut scratch),
                vmap.eval_point_with(&w[1].state, &mut scratch),
            ) {
                max_v_increase = max_v_increase.max(b - a);
            }
        }
        if !report.all_ok() {
            all_ok = false;
            eprintln!("warning: trace {i} failed validation: {report:?}");
        }
        let csv = export_trace_csv(&trace, &model.sys, &cert);
        if let Err(code) = write_file(&args.out.join(format!("trace_{i:04}.csv")), &csv) {
            return code;
        }
    }
    let wall = start.elapsed().as_secs_f64();

    let aggregate = SimAggregate {
        traces: starts.len(),
        reached_goal: reached,
        reach_rate: reached as f64 / starts.len().max(1) as f64,
        min_observed_switch_gap: min_gap,
        dwell_bound: dwell,
        rate_bound,
        max_v_increase,
        all_validations_pass: all_ok,
    };
    if let Err(code) = write_file(
        &args.out.join("report.json"),
        &serde_json::to_string_pretty(&aggregate).expect("report json"),
    ) {
        return code;
    }
    let manifest = RunManifest {
        model_name: model.name.clone(),
        model_hash: sha256_hex(&text),
        certificate_hash: Some(sha256_hex(&cert.to_json(&model.sys))),
        seed: Some(args.seed),
        params: model.params,
        wall_time_s: wall,
    };
    if let Err(code) = write_file(
        &args.out.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest).expect("manifest json"),
    ) {
        return code;
    }
    println!(
        "simulate: {}/{} traces reached the goal (dwell bound {dwell:.3e})",
        reached,
        starts.len()
    );
    if all_ok {
        EXIT_OK
    } else {
        EXIT_NO_SOLUTION
    }
}

fn decrease_slack(sim: &SimOptions, rate_bound: f64) -> f64 {
    // One step of switching latency lets the certificate grow at up to the
    // certified rate before the controller reacts, plus RK4 local error.
    1e-7 + sim.step * sim.step * rate_bound
}

#[derive(Serialize)]
struct AbstractSummary {
    regions: usize,
    subproblems_attempted: usize,
    subproblems_solved: usize,
    failures: Vec<String>,
    winning: Vec<String>,
    strategy: Vec<(String, String)>,
    composite_runs: usize,
    composite_reached: usize,
    wall_time_s: f64,
}

fn cmd_abstract(args: AbstractArgs) -> i32 {
    let (model, _text) = match load(&args.common) {
        Ok(m) => m,
        Err(code) => return code,
    };
    if model.regions.is_empty() {
        eprintln!("error: model has no regions section");
        return EXIT_PARSE;
    }
    let config = SolverConfig::default();
    let start = Instant::now();
    if let Err(e) =
        crate::abstraction::validate_regions(&model.regions, model.params.delta_sat_precision, &config)
    {
        eprintln!("error: {e}");
        return EXIT_DEGENERACY;
    }
    let graph = match build_abstraction(
        &model.sys,
        &model.regions,
        &model.spec.goal,
        &model.params,
        &config,
        args.parallel,
    ) {
        Ok(g) => g,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INTERNAL;
        }
    };
    let game = solve_graph_game(&graph);
    let wall = start.elapsed().as_secs_f64();

    let dot = export_graph_dot(&graph, &game);
    if let Err(code) = write_file(&args.out.join("abstraction.dot"), &dot) {
        return code;
    }
    for (i, edge) in graph.edges.iter().enumerate() {
        let json = edge.certificate.to_json(&model.sys);
        let name = format!(
            "certificates/{}_{}_{i}.json",
            graph.regions[edge.source].id, edge.action
        );
        if let Err(code) = write_file(&args.out.join(name), &json) {
            return code;
        }
    }
    for (r, t) in graph.terminal.iter().enumerate() {
        if let Some(edge) = t {
            let json = edge.certificate.to_json(&model.sys);
            let name = format!("certificates/{}_terminal.json", graph.regions[r].id);
            if let Err(code) = write_file(&args.out.join(name), &json) {
                return code;
            }
        }
    }

    // Composite simulations from random points of winning non-goal regions.
    let mut composite_reached = 0usize;
    let mut runs = 0usize;
    if args.sim_count > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        let candidates: Vec<usize> = (0..graph.regions.len())
            .filter(|&i| game.winning[i] && !graph.regions[i].is_goal)
            .collect();
        if candidates.is_empty() {
            eprintln!("warning: no winning non-goal regions to simulate from");
        } else {
            for i in 0..args.sim_count {
                let ri = candidates[rng.gen_range(0..candidates.len())];
                let Some(x0) =
                    sample_in_set(&mut rng, &graph.regions[ri].set, &graph.regions[ri].enclosure)
                else {
                    eprintln!("warning: sampling failed in region {}", graph.regions[ri].id);
                    continue;
                };
                runs += 1;
                let trace = simulate_composite(
                    &model.sys,
                    &graph,
                    &game,
                    &model.spec.goal,
                    &x0,
                    0,
                    model.sim.step,
                    model.sim.t_max,
                    model.sim.tol_goal,
                );
                if matches!(trace.status, CompositeStatus::ReachedGoal(_)) {
                    composite_reached += 1;
                } else {
                    eprintln!(
                        "warning: composite run {i} from {:?} ended with {:?}",
                        x0, trace.status
                    );
                }
                let mut csv = String::from("time,mode,");
                csv.push_str(&model.sys.vars.names().join(","));
                csv.push('\n');
                for p in &trace.points {
                    csv.push_str(&format!("{},{}", p.time, model.sys.modes[p.mode].id));
                    for v in &p.state {
                        csv.push_str(&format!(",{v}"));
                    }
                    csv.push('\n');
                }
                if let Err(code) =
                    write_file(&args.out.join(format!("composite_{i:04}.csv")), &csv)
                {
                    return code;
                }
            }
        }
    }

    let summary = AbstractSummary {
        regions: graph.regions.len(),
        subproblems_attempted: graph.edges.len()
            + graph.terminal.iter().flatten().count()
            + graph.failures.len(),
        subproblems_solved: graph.edges.len() + graph.terminal.iter().flatten().count(),
        failures: graph
            .failures
            .iter()
            .map(|f| format!("{}/{}: {}", f.region, f.action, f.reason))
            .collect(),
        winning: graph
            .regions
            .iter()
            .enumerate()
            .filter(|(i, _)| game.winning[*i])
            .map(|(_, r)| r.id.clone())
            .collect(),
        strategy: graph
            .regions
            .iter()
            .enumerate()
            .filter_map(|(i, r)| {
                game.strategy[i]
                    .map(|ei| (r.id.clone(), graph.edges[ei].action.clone()))
            })
            .collect(),
        composite_runs: runs,
        composite_reached,
        wall_time_s: wall,
    };
    if let Err(code) = write_file(
        &args.out.join("summary.json"),
        &serde_json::to_string_pretty(&summary).expect("summary json"),
    ) {
        return code;
    }
    println!(
        "abstract: {}/{} subproblems solved, winning set {:?}, {}s",
        summary.subproblems_solved,
        summary.subproblems_attempted,
        summary.winning,
        wall as u64
    );
    EXIT_OK
}

fn cmd_trace_check(args: TraceCheckArgs) -> i32 {
    let (model, _) = match load(&args.common) {
        Ok(m) => m,
        Err(code) => return code,
    };
    let cert = match read_certificate(&args.certificate, &model) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let text = match std::fs::read_to_string(&args.trace) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.trace.display());
            return EXIT_PARSE;
        }
    };
    let trace = match parse_trace_csv(&text, &model) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_PARSE;
        }
    };
    let ctrl = SwitchingController::from_certificate(&model.sys, &model.spec, &cert);
    let (rate, dwell) = match min_dwell_bound(&ctrl, &model.sys, &model.spec.enclosure) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INTERNAL;
        }
    };
    let report = validate_trace(
        &trace,
        &model.spec,
        &cert,
        dwell,
        model.sim.step,
        model.sim.tol_goal,
        decrease_slack(&model.sim, rate),
    );
    println!("{}", serde_json::json!({
        "reached_goal": report.reached_goal,
        "safe_ok": report.safe_ok,
        "violated_predicate": report.violated_predicate,
        "dwell_ok": report.dwell_ok,
        "min_switch_gap": report.min_switch_gap,
        "decrease_ok": report.decrease_ok,
    }));
    if report.all_ok() {
        EXIT_OK
    } else {
        EXIT_NO_SOLUTION
    }
}

fn parse_trace_csv(
    text: &str,
    model: &LoadedModel,
) -> Result<crate::runtime::Trace, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty trace file")?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 + model.sys.dim() || cols[0] != "time" || cols[1] != "mode" {
        return Err("trace header must start with time,mode,<state...>".into());
    }
    let mut points = Vec::new();
    let mut switch_times = Vec::new();
    let mut last_mode: Option<usize> = None;
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() < 2 + model.sys.dim() {
            return Err(format!("line {}: too few columns", lineno + 2));
        }
        let time: f64 = parts[0].parse().map_err(|_| format!("line {}: bad time", lineno + 2))?;
        let mode = model
            .sys
            .mode_index(parts[1])
            .ok_or_else(|| format!("line {}: unknown mode '{}'", lineno + 2, parts[1]))?;
        let state: Result<Vec<f64>, _> = parts[2..2 + model.sys.dim()]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect();
        let state = state.map_err(|_| format!("line {}: bad state", lineno + 2))?;
        if let Some(lm) = last_mode {
            if lm != mode {
                switch_times.push(time);
            }
        }
        last_mode = Some(mode);
        points.push(crate::runtime::TracePoint { time, mode, state });
    }
    if points.is_empty() {
        return Err("trace has no data rows".into());
    }
    // Terminal status is re-derived from the final state.
    let last = points.last().unwrap();
    let status = if model.spec.goal.contains(&last.state, model.sim.tol_goal) {
        TerminalStatus::ReachedGoal(last.time)
    } else if let Some(j) = model.spec.safe.violated_predicate(&last.state, 1e-9) {
        TerminalStatus::LeftSafe(last.time, j)
    } else {
        TerminalStatus::TimeBudget
    };
    Ok(crate::runtime::Trace { points, switch_times, status })
}
