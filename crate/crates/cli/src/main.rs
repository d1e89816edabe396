use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use optdoob::cone::{self, ConeSystem, Membership};
use optdoob::decomposition::{decompose_from_report, test_regularity, CellStatus, RegularityReport};
use optdoob::filtration::{check_condition_a, AtomId, TreeSpec};
use optdoob::fixtures::{self, PowerDensitySpec, TailMode};
use optdoob::gzero::{solve_g0, theorem12_representation};
use optdoob::harness::{verify_lemmas, HarnessConfig};
use optdoob::instance::InstanceFile;
use optdoob::measures::MeasureFamily;
use optdoob::process::{classify, AdaptedProcess};
use optdoob::{Error, Exec, Tolerances};

#[derive(Parser)]
#[command(name = "optdoob", version, about = "Optional Doob decompositions relative to finite families of measures")]
struct Cli {
    /// Report format.
    #[arg(long, value_enum, default_value_t = Format::Table, global = true)]
    output: Format,
    /// Slack for inequalities and feasibility equalities [default from
    /// OPTDOOB_TOLERANCE, else 1e-9].
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Structural checks: condition A, equivalence bounds, condition B, and the
    /// classification of stored processes.
    Check { instance: PathBuf },
    /// Regularity test and optional Doob decomposition of a process.
    Decompose {
        instance: PathBuf,
        /// Name of a stored process, or a JSON file holding one.
        #[arg(long)]
        process: String,
    },
    /// Normalized densities measurable with respect to one level.
    G0 {
        instance: PathBuf,
        #[arg(long)]
        level: usize,
    },
    /// Cone membership and solution family of `sum_j a_j x_j = a0`.
    ConeSolve {
        /// JSON file `{"a": [[...], ...], "a0": [...]}`.
        system: PathBuf,
        /// Also report a solution of the homogeneous system.
        #[arg(long)]
        homogeneous: bool,
    },
    /// Writes a nonnegative regular supermartingale as a density martingale
    /// minus a nondecreasing process.
    Represent {
        instance: PathBuf,
        #[arg(long)]
        process: String,
    },
    /// Runs the lemma and theorem checks on an instance.
    VerifyLemmas {
        instance: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Sampled mixtures per process in the deficit bound check.
        #[arg(long, default_value_t = 200)]
        mixtures: usize,
    },
    /// Writes a fixture instance.
    GenExample {
        #[command(subcommand)]
        example: Example,
    },
}

#[derive(Subcommand)]
enum Example {
    /// Densities `i x^(i-1)` on a truncated partition of [0, 1).
    PowerDensity {
        #[arg(long)]
        k: usize,
        /// Comma separated partition points starting at 0.
        #[arg(long, value_delimiter = ',', required = true)]
        points: Vec<f64>,
        #[arg(long)]
        depth: usize,
        #[arg(long, value_enum, default_value_t = Tail::Renormalize)]
        tail: Tail,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Two-level binary tree with two measures and its example processes.
    D1 {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Tail {
    Renormalize,
    Merge,
}

/// What a command produced: exit code plus both renderings.
struct Report {
    code: u8,
    json: Value,
    table: String,
}

impl Report {
    fn new(negative: bool, json: Value, table: String) -> Self {
        Self {
            code: u8::from(negative),
            json,
            table,
        }
    }
}

struct Context {
    tol: Tolerances,
    exec: Exec,
}

type CliResult = Result<Report, Error>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let tolerance = match cli.tolerance {
        Some(t) => Some(t),
        None => match std::env::var("OPTDOOB_TOLERANCE") {
            Ok(text) => match text.trim().parse::<f64>() {
                Ok(t) => Some(t),
                Err(_) => {
                    eprintln!("error: OPTDOOB_TOLERANCE is not a number: {text:?}");
                    return ExitCode::from(2);
                }
            },
            Err(_) => None,
        },
    };
    let tol = match tolerance {
        Some(t) if !(t > 0.0 && t.is_finite()) => {
            eprintln!("error: tolerance must be positive, got {t}");
            return ExitCode::from(2);
        }
        Some(t) => Tolerances::with_inequality(t),
        None => Tolerances::default(),
    };
    let ctx = Context {
        tol,
        exec: if cli.sequential { Exec::Sequential } else { Exec::default() },
    };
    match run(&ctx, cli.command) {
        Ok(report) => {
            match cli.output {
                Format::Json => println!("{}", serde_json::to_string_pretty(&report.json).expect("serializable")),
                Format::Table => print!("{}", report.table),
            }
            ExitCode::from(report.code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(ctx: &Context, command: Command) -> CliResult {
    match command {
        Command::Check { instance } => check(ctx, &instance),
        Command::Decompose { instance, process } => decompose(ctx, &instance, &process),
        Command::G0 { instance, level } => g0(ctx, &instance, level),
        Command::ConeSolve { system, homogeneous } => cone_solve(ctx, &system, homogeneous),
        Command::Represent { instance, process } => represent(ctx, &instance, &process),
        Command::VerifyLemmas {
            instance,
            seed,
            trials,
            mixtures,
        } => {
            let (_, family) = load(ctx, &instance)?;
            let report = verify_lemmas(&family, HarnessConfig { seed, trials, mixtures }, &ctx.tol, ctx.exec)?;
            Ok(Report::new(report.any_failed(), serde_json::to_value(&report)?, report.to_table()))
        }
        Command::GenExample { example } => gen_example(example),
    }
}

fn load(ctx: &Context, path: &Path) -> Result<(InstanceFile, MeasureFamily), Error> {
    let inst = InstanceFile::load(path)?;
    let family = inst.family(&ctx.tol)?;
    Ok((inst, family))
}

/// A stored process name, or else a JSON file holding the levels.
fn resolve_process(inst: &InstanceFile, family: &MeasureFamily, name: &str) -> Result<AdaptedProcess, Error> {
    let f = match inst.processes.get(name) {
        Some(p) => p.clone(),
        None if Path::new(name).is_file() => serde_json::from_str(&std::fs::read_to_string(name)?)?,
        None => {
            return Err(Error::Index(format!(
                "{name:?} is neither a stored process ({}) nor a file",
                inst.processes.keys().cloned().collect::<Vec<_>>().join(", ")
            )))
        }
    };
    f.check_shape(family.tree())?;
    Ok(f)
}

fn fmt_values(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{:.6}", x + 0.0)).collect();
    format!("[{}]", parts.join(", "))
}

fn fmt_process(out: &mut String, label: &str, p: &AdaptedProcess) {
    for (n, row) in p.levels.iter().enumerate() {
        let _ = writeln!(out, "  {label}_{n} = {}", fmt_values(row));
    }
}

fn check(ctx: &Context, path: &Path) -> CliResult {
    let raw: Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let spec: TreeSpec = serde_json::from_value(raw.get("tree").cloned().unwrap_or(Value::Null))?;
    let cond_a = check_condition_a(&spec);
    let mut table = String::new();
    let _ = writeln!(
        table,
        "condition A: {} ({} clauses checked)",
        if cond_a.passed { "pass" } else { "FAIL" },
        cond_a.clauses.len()
    );
    if !cond_a.passed {
        for c in cond_a.failed_clauses() {
            let _ = writeln!(table, "  {}: {}", c.clause, c.detail);
        }
        return Ok(Report::new(true, json!({ "condition_a": cond_a }), table));
    }
    let (inst, family) = load(ctx, path)?;
    let eq = family.equivalence_bounds();
    let _ = writeln!(
        table,
        "equivalence: l = {:.6}, L = {:.6}, eps_bar = {:.6}, deficit factor = {:.6}",
        eq.l, eq.upper, eq.eps_bar, eq.theorem1_factor
    );
    let cond_b = family.check_condition_b(&ctx.tol);
    match cond_b.i0 {
        Some(i0) => {
            let _ = writeln!(table, "condition B: pass with index {}", i0 + 1);
        }
        None => {
            let _ = writeln!(table, "condition B: violated for every candidate index");
            for cand in &cond_b.candidates {
                let _ = writeln!(table, "  candidate {}: {} violations", cand.i0 + 1, cand.violations.len());
                for v in &cand.violations {
                    let _ = writeln!(
                        table,
                        "    measure {} on {} within {}: {:.6} > {:.6}",
                        v.measure + 1,
                        v.child,
                        v.parent,
                        v.ratio,
                        v.candidate_ratio
                    );
                }
            }
        }
    }
    let mut processes = serde_json::Map::new();
    for (name, p) in &inst.processes {
        let c = classify(&family, p, &ctx.tol)?;
        let _ = writeln!(table, "process {name}: {:?}", c.classification);
        processes.insert(name.clone(), serde_json::to_value(&c)?);
    }
    let json = json!({
        "condition_a": cond_a,
        "equivalence": eq,
        "condition_b": cond_b,
        "processes": processes,
    });
    Ok(Report::new(false, json, table))
}

fn describe_cells(report: &RegularityReport, table: &mut String) {
    for cell in &report.cells {
        let what = match &cell.status {
            CellStatus::Feasible { xi, rule } => format!("feasible ({rule:?}) increments {}", fmt_values(xi)),
            CellStatus::Infeasible { l1_residual, .. } => format!("INFEASIBLE (L1 residual {l1_residual:.3e})"),
            CellStatus::NotSupermartingale { measures } => format!(
                "not a supermartingale under measures {:?}",
                measures.iter().map(|i| i + 1).collect::<Vec<_>>()
            ),
        };
        let _ = writeln!(table, "  step {} parent {}: {what}", cell.level, cell.parent);
    }
}

fn cell_list(cells: &[(usize, usize)]) -> String {
    cells
        .iter()
        .map(|&(level, parent)| format!("(level {level}, {})", AtomId::new(level - 1, parent)))
        .collect::<Vec<_>>()
        .join(", ")
}

fn decompose(ctx: &Context, path: &Path, name: &str) -> CliResult {
    let (inst, family) = load(ctx, path)?;
    let f = resolve_process(&inst, &family, name)?;
    let report = test_regularity(&family, &f, &ctx.tol, ctx.exec)?;
    let mut table = String::new();
    if !report.supermartingale {
        let _ = writeln!(table, "NotSupermartingale");
        describe_cells(&report, &mut table);
        return Ok(Report::new(true, json!({ "verdict": "not_supermartingale", "report": report }), table));
    }
    if !report.regular {
        let _ = writeln!(table, "NotRegular at {}", cell_list(&report.failing_cells()));
        describe_cells(&report, &mut table);
        return Ok(Report::new(
            true,
            json!({ "verdict": "not_regular", "failing_cells": report.failing_cells(), "report": report }),
            table,
        ));
    }
    let d = decompose_from_report(&family, &f, &report)?;
    let _ = writeln!(table, "regular; martingale defect {:.3e}", d.martingale_error);
    describe_cells(&report, &mut table);
    fmt_process(&mut table, "M", &d.martingale_part);
    fmt_process(&mut table, "dg", &d.increments);
    fmt_process(&mut table, "g", &d.cumulative);
    Ok(Report::new(
        false,
        json!({ "verdict": "regular", "decomposition": d, "report": report }),
        table,
    ))
}

fn g0(ctx: &Context, path: &Path, level: usize) -> CliResult {
    let (_, family) = load(ctx, path)?;
    let g = solve_g0(&family, level, &ctx.tol)?;
    let mut table = String::new();
    let _ = writeln!(table, "level {level}: {} atoms, rank {}", g.system.m(), g.rank);
    if let Some(sol) = &g.solutions {
        let _ = writeln!(table, "basis indices {:?}", sol.basis_indices);
    }
    if let Some(msg) = &g.failure {
        let _ = writeln!(table, "no basic solutions: {msg}");
    }
    for (n, e) in g.elements.iter().enumerate() {
        let _ = writeln!(
            table,
            "  xi[{n}] = {}  (moment error {:.2e})",
            fmt_values(&e.values),
            e.moment_error(&family)
        );
    }
    Ok(Report::new(g.solutions.is_none(), serde_json::to_value(&g)?, table))
}

fn cone_solve(ctx: &Context, path: &Path, homogeneous: bool) -> CliResult {
    let system: ConeSystem = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    system.validate()?;
    let membership = cone::cone_membership(&system, &ctx.tol)?;
    let mut table = String::new();
    let _ = writeln!(
        table,
        "{} vectors in R^{}, rank {}: target {:?}",
        system.m(),
        system.k(),
        system.rank(&ctx.tol),
        membership.membership
    );
    let mut json = json!({ "membership": membership });
    let mut negative = membership.membership != Membership::Interior;
    if membership.membership == Membership::Boundary {
        if let Some(x) = cone::nonnegative_solution(&system, &ctx.tol)? {
            let _ = writeln!(table, "nonnegative solution {}", fmt_values(&x));
            json["nonnegative_solution"] = serde_json::to_value(&x)?;
        }
    }
    if !negative {
        match cone::solve(&system, &ctx.tol) {
            Ok(sol) => {
                let _ = writeln!(table, "basis indices {:?}", sol.basis_indices);
                for (n, z) in sol.basic_solutions.iter().enumerate() {
                    let _ = writeln!(table, "  z[{n}] = {}  (residual {:.2e})", fmt_values(z), system.residual(z));
                }
                for c in &sol.gamma_constraints {
                    let _ = writeln!(
                        table,
                        "  constraint {}: {:.6} - {} . gamma > 0",
                        c.l,
                        c.constant,
                        fmt_values(&c.coefficients)
                    );
                }
                if !sol.unit_step_indices.is_empty() {
                    let _ = writeln!(table, "  unit step used for indices {:?}", sol.unit_step_indices);
                }
                json["solutions"] = serde_json::to_value(&sol)?;
            }
            Err(Error::ConeMembership(msg)) => {
                let _ = writeln!(table, "no interior basis: {msg}");
                json["failure"] = Value::String(msg);
                negative = true;
            }
            Err(e) => return Err(e),
        }
    }
    if homogeneous {
        match cone::homogeneous_solution(&system.vectors, Some(&system.target), &ctx.tol) {
            Ok(h) => {
                let _ = writeln!(table, "homogeneous solution u = {}", fmt_values(&h.u));
                json["homogeneous"] = serde_json::to_value(&h)?;
            }
            Err(e @ Error::NoKernel { .. }) => {
                let _ = writeln!(table, "homogeneous: {e}");
                json["homogeneous"] = Value::Null;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Report::new(negative, json, table))
}

fn represent(ctx: &Context, path: &Path, name: &str) -> CliResult {
    let (inst, family) = load(ctx, path)?;
    let f = resolve_process(&inst, &family, name)?;
    match theorem12_representation(&family, &f, &ctx.tol, ctx.exec) {
        Ok(r) => {
            let mut table = String::new();
            let _ = writeln!(
                table,
                "xi = {}  (moment error {:.2e}, reconstruction error {:.2e})",
                fmt_values(&r.xi.values),
                r.moment_error,
                r.reconstruction_error
            );
            fmt_process(&mut table, "f1", &r.martingale);
            fmt_process(&mut table, "f2", &r.nonincreasing);
            Ok(Report::new(false, serde_json::to_value(&r)?, table))
        }
        Err(Error::NotRegular { cells, report }) => Ok(Report::new(
            true,
            json!({ "verdict": "not_regular", "failing_cells": cells, "report": report }),
            format!("NotRegular at {}\n", cell_list(&cells)),
        )),
        Err(e) => Err(e),
    }
}

fn write_instance(inst: &InstanceFile, out: Option<PathBuf>) -> CliResult {
    match out {
        Some(path) => {
            inst.save(&path)?;
            Ok(Report::new(
                false,
                json!({ "written": path }),
                format!("wrote {}\n", path.display()),
            ))
        }
        None => {
            let text = inst.to_json()?;
            Ok(Report::new(false, serde_json::from_str(&text)?, text + "\n"))
        }
    }
}

fn gen_example(example: Example) -> CliResult {
    match example {
        Example::PowerDensity {
            k,
            points,
            depth,
            tail,
            out,
        } => {
            let spec = PowerDensitySpec {
                k,
                partition_points: points,
                depth,
                tail: match tail {
                    Tail::Renormalize => TailMode::Renormalize,
                    Tail::Merge => TailMode::Merge,
                },
            };
            let built = fixtures::build_power_density_instance(&spec)?;
            let mut inst = InstanceFile::from_family(&built.family);
            inst.metadata = Some(json!({
                "example": "power_density",
                "spec": spec,
                "leaf_intervals": built.leaf_intervals,
                "normalization": built.normalization,
                "condition_b": built.family.check_condition_b(&Tolerances::default()),
            }));
            write_instance(&inst, out)
        }
        Example::D1 { out } => {
            let family = fixtures::d1();
            let mut inst = InstanceFile::from_family(&family);
            inst.processes.insert("f".into(), fixtures::d1_supermartingale());
            inst.processes.insert("sup_indicator".into(), fixtures::d1_sup_indicator());
            let indicator = optdoob::conditional::RandomVariable::indicator(family.tree(), AtomId::new(2, 0))?;
            inst.random_variables.insert("indicator_c1".into(), indicator);
            inst.metadata = Some(json!({ "example": "d1" }));
            write_instance(&inst, out)
        }
    }
}
