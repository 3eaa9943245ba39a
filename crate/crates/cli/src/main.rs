//! `mixed-ocp`: solve, optimize and run convergence studies from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mixed_ocp::analysis::{contraction_constants, DiscreteConstants, EigenOptions};
use mixed_ocp::control::Relaxation;
use mixed_ocp::study::{self, StudyConfig, StudyContext};
use mixed_ocp::{ControlPair, Error, FixedPointOptions, Optimum, P1Space, Variant};

#[derive(Debug, Parser)]
#[command(name = "mixed-ocp", version, about = "Distributed and boundary optimal control of an elliptic problem with P1 elements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Study configuration (`key = value` lines); built-in defaults when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.dir`.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CaseArgs {
    #[command(flatten)]
    common: Common,
    /// Subdivisions per side; the first configured level when omitted.
    #[arg(long)]
    n: Option<usize>,
    /// Robin coefficient; the Dirichlet formulation when omitted.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    FixedPoint,
    Kkt,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the state and adjoint equations for zero controls.
    Solve {
        #[command(flatten)]
        case: CaseArgs,
        /// Also write the mesh in text form to this file.
        #[arg(long)]
        dump_mesh: Option<PathBuf>,
    },
    /// Compute the optimal controls.
    Optimize {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long, value_enum, default_value = "fixed-point")]
        method: Method,
        /// Step length of the fixed-point iteration: `none`, `auto` or a number in (0, 1].
        #[arg(long)]
        relaxation: Option<String>,
    },
    /// Discrete constants and contraction bounds on every level.
    Constants(Common),
    /// Errors of the discrete optima against the reference optimum.
    StudyH(Common),
    /// Robin optima against the Dirichlet optimum as the coefficient grows.
    StudyAlpha(Common),
    /// Robin optima along a joint refinement and coefficient sequence.
    StudyDiagonal(Common),
    /// Cost cross-evaluations between discrete and reference optima.
    CostGaps(Common),
    /// Audit of the uniform a-priori bounds.
    AuditBounds(Common),
    /// Run the built-in property checks.
    Verify,
}

/// Failures mapped to exit codes: 1 for bad input, 2 for numerics.
#[derive(Debug)]
enum Failure {
    Input(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Input(e.to_string())
        } else {
            Failure::Numerical(e.to_string())
        }
    }
}

type Outcome = Result<(), Failure>;

fn load_config(common: &Common) -> Result<StudyConfig, Failure> {
    let mut config = match &common.config {
        Some(path) => StudyConfig::from_file(path)?,
        None => StudyConfig::default(),
    };
    if let Some(dir) = &common.output {
        config.output_dir = dir.clone();
    }
    Ok(config)
}

fn write(dir: &Path, name: &str, contents: &str) -> Outcome {
    let path = study::write_output(dir, name, contents)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn case_variant(alpha: Option<f64>) -> Result<Variant, Failure> {
    match alpha {
        None => Ok(Variant::Dirichlet),
        Some(a) if a > 0.0 && a.is_finite() => Ok(Variant::Robin(a)),
        Some(a) => Err(Failure::Input(format!("alpha must be positive and finite, got {a}"))),
    }
}

fn nodal_table(space: &P1Space, columns: &[(&str, &[f64])]) -> String {
    let mut out = String::from("x,y");
    for (name, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, p) in space.mesh().vertices().iter().enumerate() {
        out.push_str(&format!("{},{}", study::num(p[0]), study::num(p[1])));
        for (_, values) in columns {
            out.push(',');
            out.push_str(&study::num(values[i]));
        }
        out.push('\n');
    }
    out
}

fn solve(case: &CaseArgs, dump_mesh: Option<&Path>) -> Outcome {
    let config = load_config(&case.common)?;
    let n = case.n.unwrap_or(config.levels[0]);
    let space = config.space(n)?;
    let problem = config.problem(&space, case_variant(case.alpha)?)?;
    let u = problem.state(&ControlPair::zeros(&space))?;
    let p = problem.adjoint(&u)?;
    if let Some(path) = dump_mesh {
        std::fs::write(path, space.mesh().to_text())
            .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        println!("wrote {}", path.display());
    }
    write(&config.output_dir, "solution.csv", &nodal_table(&space, &[("state", u.values()), ("adjoint", p.values())]))
}

fn parse_relaxation(text: Option<&str>) -> Result<Relaxation, Failure> {
    match text {
        None | Some("none") => Ok(Relaxation::None),
        Some("auto") => Ok(Relaxation::Auto),
        Some(w) => match w.parse::<f64>() {
            Ok(v) if v > 0.0 && v <= 1.0 => Ok(Relaxation::Fixed(v)),
            _ => Err(Failure::Input(format!("relaxation must be none, auto or a number in (0, 1], got `{w}`"))),
        },
    }
}

fn print_optimum(o: &Optimum) {
    println!("cost = {}", study::num(o.cost));
    println!("iterations = {}", o.iterations);
    println!("final_increment = {}", study::num(o.final_increment));
    println!("gradient_residual = {}", study::num(o.gradient_residual));
    if let Some(r) = o.max_increment_ratio() {
        println!("max_increment_ratio = {}", study::num(r));
    }
    if let Some(w) = &o.warning {
        eprintln!("warning: {w}");
    }
}

fn optimize(case: &CaseArgs, method: Method, relaxation: Option<&str>) -> Outcome {
    let config = load_config(&case.common)?;
    let n = case.n.unwrap_or(config.levels[0]);
    let variant = case_variant(case.alpha)?;
    let space = config.space(n)?;
    let problem = config.problem(&space, variant)?;
    let optimum = match method {
        Method::Kkt => problem.solve_kkt()?,
        Method::FixedPoint => {
            let consts = DiscreteConstants::estimate(&space, EigenOptions::default())?;
            let report = contraction_constants(&consts, config.m1, config.m2, case.alpha.unwrap_or(1.0));
            let bound = if case.alpha.is_some() { report.c0_alpha } else { report.c0 };
            let opts = FixedPointOptions {
                contraction_bound: Some(bound),
                relaxation: parse_relaxation(relaxation)?,
                ..config.fixed_point
            };
            problem.solve_fixed_point(opts)?
        }
    };
    print_optimum(&optimum);
    let q = optimum.control.q.extend_by_zero();
    write(
        &config.output_dir,
        "optimum.csv",
        &nodal_table(
            &space,
            &[("g", optimum.control.g.values()), ("q", &q), ("state", optimum.state.values()), ("adjoint", optimum.adjoint.values())],
        ),
    )
}

fn row_failures<'a>(failures: impl Iterator<Item = &'a Option<String>>) -> Outcome {
    let messages: Vec<&str> = failures.flatten().map(String::as_str).collect();
    if messages.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numerical(format!("{} case(s) failed: {}", messages.len(), messages.join("; "))))
    }
}

fn run(command: Command) -> Outcome {
    match command {
        Command::Solve { case, dump_mesh } => solve(&case, dump_mesh.as_deref()),
        Command::Optimize { case, method, relaxation } => optimize(&case, method, relaxation.as_deref()),
        Command::Constants(common) => {
            let config = load_config(&common)?;
            let rows = study::constants_table(&config)?;
            for r in rows.iter().filter(|r| r.c0 >= 1.0 || r.c0_alpha >= 1.0) {
                eprintln!("warning: contraction bound not below 1 at h = {:.4}, alpha = {} (C0 = {:.4}, C0_alpha = {:.4})", r.h, r.alpha, r.c0, r.c0_alpha);
            }
            write(&config.output_dir, "constants.csv", &study::constants_csv(&rows))
        }
        Command::StudyH(common) => {
            let ctx = StudyContext::new(load_config(&common)?)?;
            let (records, rates) = study::study_h(&ctx)?;
            let dir = &ctx.config().output_dir;
            write(dir, "study_h.csv", &study::study_h_csv(&records))?;
            write(dir, "rates_h.csv", &study::rates_csv(&rates))?;
            row_failures(records.iter().map(|r| &r.failure))
        }
        Command::StudyAlpha(common) => {
            let config = load_config(&common)?;
            let records = study::study_alpha(&config)?;
            write(&config.output_dir, "study_alpha.csv", &study::study_alpha_csv(&records))?;
            row_failures(records.iter().map(|r| &r.failure))
        }
        Command::StudyDiagonal(common) => {
            let ctx = StudyContext::new(load_config(&common)?)?;
            let records = study::study_diagonal(&ctx)?;
            write(&ctx.config().output_dir, "study_diagonal.csv", &study::study_diagonal_csv(&records))?;
            row_failures(records.iter().map(|r| &r.failure))
        }
        Command::CostGaps(common) => {
            let ctx = StudyContext::new(load_config(&common)?)?;
            let (records, rates) = study::study_cost_gaps(&ctx)?;
            let dir = &ctx.config().output_dir;
            write(dir, "cost_gaps.csv", &study::cost_gaps_csv(&records))?;
            write(dir, "rates_cost_gaps.csv", &study::rates_csv(&rates))?;
            row_failures(records.iter().map(|r| &r.failure))
        }
        Command::AuditBounds(common) => {
            let config = load_config(&common)?;
            let audits = study::bound_audits(&config)?;
            write(&config.output_dir, "bound_audit.csv", &study::bound_audit_csv(&audits))?;
            let violated: Vec<String> = audits
                .iter()
                .flat_map(|a| a.records.iter().filter(|r| !r.satisfied).map(move |r| format!("{} at h = {:.4}", r.name, a.h)))
                .collect();
            if violated.is_empty() {
                Ok(())
            } else {
                Err(Failure::Numerical(format!("bounds violated: {}", violated.join(", "))))
            }
        }
        Command::Verify => {
            let outcomes = mixed_ocp::verify::run_all();
            for o in &outcomes {
                println!("{} {}: {}", if o.passed { "ok  " } else { "FAIL" }, o.name, o.detail);
            }
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            if failed == 0 {
                Ok(())
            } else {
                Err(Failure::Numerical(format!("{failed} check(s) failed")))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
