//! `modelsel` command-line front end.
//!
//! Exit codes: 0 success, 1 error, 2 search stopped with a bound gap,
//! 3 the continuous program is not convex.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use modelsel::continuous::{
    build_canonical, check_assumption, default_epsilon_tilde, export_sdp, round_to_discrete, solve_qp, AssumptionReport,
    SdpProblem,
};
use modelsel::discrete::{encode, ChoiceSequence, Mode, SolveStatus, SolverKind};
use modelsel::evaluation::{
    grid, landing_scenario, monotonicity_violations, monte_carlo, pareto_sweep, plan, PlanStats, Policy,
};
use modelsel::scenario::Scenario;
use modelsel::verify::{run_checks, FaultInjection, Level};
use modelsel::Error;

const EXIT_ERROR: u8 = 1;
const EXIT_BOUND_GAP: u8 = 2;
const EXIT_NOT_CONVEX: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "modelsel", version, about = "Perception-model scheduling for linear-quadratic control")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Global {
    /// Scenario file (JSON).
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the scenario seed used by the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = Solver::Bnb)]
    solver: Solver,
    /// Monte-Carlo trials for `evaluate`.
    #[arg(long, global = true, default_value_t = 100)]
    trials: usize,
    /// Also write the SDP feasibility problem next to the `plan-continuous` output.
    #[arg(long, global = true)]
    export_sdp: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Solver {
    Bnb,
    Exhaustive,
}

impl From<Solver> for SolverKind {
    fn from(s: Solver) -> Self {
        match s {
            Solver::Bnb => SolverKind::Bnb,
            Solver::Exhaustive => SolverKind::Exhaustive,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum PlanMode {
    /// Plan against the error distributions.
    Expected,
    /// Plan against one draw of errors taken from the realized seed.
    Exact,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum VerifyLevel {
    Quick,
    Full,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optimal discrete schedule; writes `step,model_index` CSV and a JSON sidecar.
    Plan {
        #[arg(long, value_enum, default_value_t = PlanMode::Expected)]
        mode: PlanMode,
    },
    /// Continuous relaxation with two models.
    PlanContinuous,
    /// Monte-Carlo comparison of the optimal schedule against baselines.
    Evaluate,
    /// Optimal schedules over a grid of weights.
    Pareto {
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.25, 0.5, 1.0, 2.0])]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.25, 0.5, 1.0, 2.0])]
        betas: Vec<f64>,
    },
    /// Runs the invariant checks on random instances.
    Verify {
        #[arg(value_enum, default_value_t = VerifyLevel::Quick)]
        level: VerifyLevel,
        #[arg(long, hide = true)]
        inject_psi_asymmetry: Option<f64>,
    },
    /// Checks that the point stored in an SDP file satisfies every block.
    CheckSdp {
        file: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Writes the built-in drone-landing scenario.
    Init,
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::NotConvex { .. }) { EXIT_NOT_CONVEX } else { EXIT_ERROR };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn fail(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_ERROR,
        message: message.into(),
    }
}

type CmdResult = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    let g = cli.global;
    match cli.command {
        Command::Plan { mode } => cmd_plan(&g, mode),
        Command::PlanContinuous => cmd_plan_continuous(&g),
        Command::Evaluate => cmd_evaluate(&g),
        Command::Pareto { alphas, betas } => cmd_pareto(&g, &alphas, &betas),
        Command::Verify {
            level,
            inject_psi_asymmetry,
        } => cmd_verify(&g, level, inject_psi_asymmetry),
        Command::CheckSdp { file, tol } => cmd_check_sdp(&file, tol),
        Command::Init => {
            let out = g.out.unwrap_or_else(|| PathBuf::from("drone_landing.json"));
            landing_scenario().save(&out)?;
            println!("wrote {}", out.display());
            Ok(0)
        }
    }
}

fn load_scenario(g: &Global) -> Result<Scenario, Failure> {
    let path = g.scenario.as_ref().ok_or_else(|| fail("--scenario is required for this command"))?;
    Scenario::load(path).map_err(|e| fail(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| fail(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| fail(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn status_name(status: SolveStatus) -> &'static str {
    match status {
        SolveStatus::Optimal => "optimal",
        SolveStatus::Infeasible => "infeasible",
        SolveStatus::BoundGap(_) => "bound_gap",
    }
}

#[derive(Serialize)]
struct PlanFile<'a> {
    scenario_hash: String,
    mode: &'a str,
    solver: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    realized_seed: Option<u64>,
    objective: f64,
    lower_bound: f64,
    status: &'a str,
    nodes: usize,
    control_term: f64,
    perception_cost: f64,
    sequence: &'a ChoiceSequence,
}

fn cmd_plan(g: &Global, mode: PlanMode) -> CmdResult {
    let scenario = load_scenario(g)?;
    let suite = scenario.perception_suite()?;
    let (mode, realized_seed) = match mode {
        PlanMode::Expected => (Mode::Expected, None),
        PlanMode::Exact => (Mode::Exact, Some(g.seed.unwrap_or(scenario.seeds.realized))),
    };
    let realized = realized_seed.map(|s| suite.sample_realized(s)).transpose()?;
    let result = plan(&scenario, mode, g.solver.into(), realized.as_ref())?;
    if result.status == SolveStatus::Infeasible {
        return Err(fail("no feasible schedule"));
    }
    let qp = encode(
        &scenario.batch()?,
        &suite,
        scenario.weights.alpha,
        scenario.weights.beta,
        mode,
        realized.as_ref(),
    )?;
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("plan.csv"));
    let mut csv = String::from("step,model_index\n");
    for (t, w) in result.sequence.as_slice().iter().enumerate() {
        let _ = writeln!(csv, "{t},{w}");
    }
    write(&out, &csv)?;
    let sidecar = out.with_extension("json");
    let file = PlanFile {
        scenario_hash: scenario.hash(),
        mode: if mode == Mode::Expected { "expected" } else { "exact" },
        solver: if g.solver == Solver::Bnb { "bnb" } else { "exhaustive" },
        realized_seed,
        objective: result.objective,
        lower_bound: result.lower_bound,
        status: status_name(result.status),
        nodes: result.nodes_explored,
        control_term: qp.control_term(&result.sequence)?,
        perception_cost: suite.perception_cost(result.sequence.as_slice()),
        sequence: &result.sequence,
    };
    write(&sidecar, &to_json(&file))?;
    println!(
        "objective {:.10e}  lower bound {:.10e}  status {}  nodes {}",
        result.objective,
        result.lower_bound,
        file.status,
        result.nodes_explored
    );
    println!("wrote {} and {}", out.display(), sidecar.display());
    Ok(if matches!(result.status, SolveStatus::BoundGap(_)) { EXIT_BOUND_GAP } else { 0 })
}

#[derive(Serialize)]
struct AssumptionFields {
    epsilon_tilde: f64,
    lhs: f64,
    rhs: f64,
    holds: bool,
    psi_prime_min_eig: f64,
    psi_prime_is_psd: bool,
}

impl From<&AssumptionReport> for AssumptionFields {
    fn from(r: &AssumptionReport) -> Self {
        AssumptionFields {
            epsilon_tilde: r.epsilon_tilde,
            lhs: r.lhs,
            rhs: r.rhs,
            holds: r.holds,
            psi_prime_min_eig: r.psi_prime_min_eig,
            psi_prime_is_psd: r.psi_prime_is_psd,
        }
    }
}

#[derive(Serialize)]
struct ContinuousFile {
    scenario_hash: String,
    c: Vec<f64>,
    objective: f64,
    kkt_residual: f64,
    iterations: usize,
    rounded: ChoiceSequence,
    assumption: Option<AssumptionFields>,
}

fn cmd_plan_continuous(g: &Global) -> CmdResult {
    let scenario = load_scenario(g)?;
    let qp = build_canonical(
        &scenario.batch()?,
        &scenario.continuous_suite()?,
        scenario.weights.alpha,
        scenario.weights.beta,
    )?;
    let report = match check_assumption(&qp, default_epsilon_tilde(&qp)) {
        Ok(r) => Some(r),
        Err(e) => {
            eprintln!("warning: assumption check skipped: {e}");
            None
        }
    };
    let fields = report.as_ref().map(AssumptionFields::from);
    if let Some(r) = &report {
        if !r.holds {
            eprintln!("warning: convexity assumption does not hold (lhs {:e} > rhs {:e})", r.lhs, r.rhs);
        }
    }
    let not_convex = |e: Error| {
        let mut f = Failure::from(e);
        if f.code == EXIT_NOT_CONVEX {
            if let Some(fields) = &fields {
                f.message.push('\n');
                f.message.push_str(&to_json(fields));
            }
        }
        f
    };
    let sol = solve_qp(&qp, scenario.solver.qp_tol).map_err(not_convex)?;
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("plan_continuous.json"));
    if g.export_sdp {
        let mut sdp = export_sdp(&qp).map_err(not_convex)?;
        sdp.point = Some(SdpProblem::point_for(&qp, &sol.c, sol.objective));
        let path = out.with_extension("sdp");
        write(&path, &sdp.to_text())?;
        println!("wrote {}", path.display());
    }
    let file = ContinuousFile {
        scenario_hash: scenario.hash(),
        rounded: round_to_discrete(&sol.c),
        c: sol.c,
        objective: sol.objective,
        kkt_residual: sol.kkt_residual,
        iterations: sol.iterations,
        assumption: fields,
    };
    write(&out, &to_json(&file))?;
    println!(
        "objective {:.10e}  kkt residual {:.3e}  iterations {}",
        file.objective, file.kkt_residual, file.iterations
    );
    println!("wrote {}", out.display());
    Ok(0)
}

fn cmd_evaluate(g: &Global) -> CmdResult {
    let scenario = load_scenario(g)?;
    let master = g.seed.unwrap_or(scenario.seeds.evaluation);
    let planned = plan(&scenario, Mode::Expected, g.solver.into(), None)?;
    if let SolveStatus::BoundGap(gap) = planned.status {
        eprintln!("warning: schedule not proven optimal (gap {gap:e})");
    }
    let policies = [
        Policy::AllSmall,
        Policy::AllLarge,
        Policy::Random(master),
        Policy::Optimal(planned.sequence.clone()),
        Policy::Oracle,
    ];
    let mut report = monte_carlo(&scenario, &policies, g.trials, master)?;
    report.solver.plan = Some(PlanStats {
        objective: planned.objective,
        lower_bound: planned.lower_bound,
        status: status_name(planned.status).to_string(),
        nodes: planned.nodes_explored,
    });
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("results"));
    let csv = dir.join("trials.csv");
    let json = dir.join("summary.json");
    write(&csv, &report.to_csv())?;
    write(&json, &report.summary_json())?;
    print!("{}", report.ordering_summary());
    for baseline in ["all_small", "all_large", "random"] {
        if let Some(d) = report.paired_difference("optimal", baseline) {
            println!("optimal - {baseline:<9} {:.6} [{:.6}, {:.6}]", d.mean, d.ci_low, d.ci_high);
        }
    }
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(0)
}

fn cmd_pareto(g: &Global, alphas: &[f64], betas: &[f64]) -> CmdResult {
    let scenario = load_scenario(g)?;
    let weights: Vec<(f64, f64)> = grid(alphas, betas).into_iter().filter(|(a, b)| a + b > 0.0).collect();
    let points = pareto_sweep(&scenario, &weights, g.solver.into())?;
    let mut csv = String::from("alpha,beta,control_term,perception_cost,sequence\n");
    for p in &points {
        let seq: Vec<String> = p.sequence.as_slice().iter().map(|w| w.to_string()).collect();
        let _ = writeln!(
            csv,
            "{},{},{:.16e},{:.16e},{}",
            p.alpha,
            p.beta,
            p.control_term,
            p.perception_cost,
            seq.join(" ")
        );
    }
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("pareto.csv"));
    write(&out, &csv)?;
    for v in monotonicity_violations(&points, 1e-9) {
        eprintln!("warning: {v}");
    }
    println!("{} points, wrote {}", points.len(), out.display());
    Ok(0)
}

fn cmd_verify(g: &Global, level: VerifyLevel, asymmetry: Option<f64>) -> CmdResult {
    let scenario = match &g.scenario {
        Some(_) => Some(load_scenario(g)?),
        None => None,
    };
    let level = match level {
        VerifyLevel::Quick => Level::Quick,
        VerifyLevel::Full => Level::Full,
    };
    let fault = FaultInjection {
        psi_asymmetry: asymmetry,
    };
    let outcomes = run_checks(level, scenario.as_ref(), &fault);
    for o in &outcomes {
        println!("{o}");
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
    if failed.is_empty() {
        println!("all {} checks passed", outcomes.len());
        Ok(0)
    } else {
        Err(fail(format!("failed checks: {}", failed.join(", "))))
    }
}

fn cmd_check_sdp(file: &Path, tol: f64) -> CmdResult {
    let text = fs::read_to_string(file).map_err(|e| fail(format!("{}: {e}", file.display())))?;
    let sdp = SdpProblem::parse(&text)?;
    let point = sdp.point.as_ref().ok_or_else(|| fail("file has no stored point"))?;
    let mins = sdp.min_eigenvalues(point)?;
    let worst = mins.iter().copied().fold(f64::INFINITY, f64::min);
    if sdp.is_feasible(point, tol)? {
        println!("feasible: {} blocks, smallest eigenvalue {worst:.3e}", sdp.blocks.len());
        Ok(0)
    } else {
        Err(fail(format!("infeasible: smallest eigenvalue {worst:.3e}")))
    }
}
