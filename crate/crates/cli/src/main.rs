//! `rauc` command-line front end.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::{json, Value};

use rauc::analysis::{
    self, approx_almost, approx_final, results_csv, run_sweep, summarize, AnalysisError, BoundInputs, CellResult,
    SweepOptions, DEFAULT_EPSILONS, DEFAULT_LAMBDAS,
};
use rauc::instance::{validate_instance, Severity};
use rauc::milp::{solve, solve_with_start};
use rauc::policy::{rolling_horizon, PolicyError, RhOptions, RhSchedule};
use rauc::ucmodel::{build_ms, build_ts, extract_policy, start_from_policy, ModelArtifacts, ModelError};
use rauc::{build_tree, BackendKind, Instance, MilpError, RiskSpec, ScenarioTree, SolveOptions};

/// Column of a per-cell table.
type CellField = fn(&CellResult) -> f64;

const EXIT_USAGE: u8 = 1;
const EXIT_SOLVER: u8 = 2;
const EXIT_VALIDATION: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "rauc", version, about = "Risk-averse two-stage and multi-stage unit commitment")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Instance JSON; the bundled ten-unit instance when omitted.
    #[arg(long, global = true)]
    instance: Option<PathBuf>,
    /// Optional TOML run configuration. Flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// MILP backend: `highs` or `bnb`. Overrides RAUC_SOLVER and the config file.
    #[arg(long, global = true)]
    solver: Option<String>,
    /// Target relative optimality gap, in (0, 0.1].
    #[arg(long, global = true)]
    rel_gap: Option<f64>,
    /// Time limit in seconds for each MILP solve.
    #[arg(long, global = true)]
    time_limit: Option<f64>,
    /// Emit a single JSON object on stdout; human text goes to stderr.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the instance for internal consistency.
    Validate,
    /// Solve the two-stage model.
    SolveTs(SolveArgs),
    /// Solve the multi-stage model.
    SolveMs(SolveArgs),
    /// Build the rolling-horizon policy and compare it with the multi-stage optimum.
    RollingHorizon(RhArgs),
    /// Analytical VMS interval and approximations.
    Bounds(BoundsArgs),
    /// Run the (epsilon, lambda) grid and write the results CSV.
    Sweep(SweepArgs),
    /// Default grids on the bundled instance with a summary block.
    PaperRepro(SweepArgs),
}

#[derive(Args, Debug)]
struct CellArgs {
    /// Relative demand spread of the scenario tree.
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    /// Risk weight of the upper semideviation, in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    cell: CellArgs,
    /// Write the node-indexed policy (tab-separated) to this file.
    #[arg(long)]
    dump_policy: Option<PathBuf>,
    /// Write the model in LP format to this file, with a JSON symbol table next to it.
    #[arg(long)]
    dump_lp: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RhArgs {
    #[command(flatten)]
    cell: CellArgs,
    /// Known multi-stage optimum; solved afresh when omitted.
    #[arg(long)]
    z_ms: Option<f64>,
    /// Re-solve at every node instead of only where information arrives.
    #[arg(long)]
    every_period: bool,
    /// Write the node-indexed policy (tab-separated) to this file.
    #[arg(long)]
    dump_policy: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BoundsArgs {
    #[command(flatten)]
    cell: CellArgs,
    /// Fail unless the assumptions certifying the interval hold.
    #[arg(long)]
    enforce: bool,
    /// Half-width of a uniform demand perturbation for the closed-form approximation.
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Epsilon grid: `start:stop:step` or a comma list.
    #[arg(long = "eps")]
    eps: Option<String>,
    /// Lambda grid, same syntax.
    #[arg(long = "lambda")]
    lambda: Option<String>,
    /// Directory for the results CSV and per-cell records.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Cell cache directory; `<out-dir>/cells` by default.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Cells solved in parallel.
    #[arg(long)]
    workers: Option<usize>,
    /// Seconds for each two-stage solve.
    #[arg(long)]
    ts_time_limit: Option<f64>,
    /// Seconds for each rolling-horizon sub-solve.
    #[arg(long)]
    rh_time_limit: Option<f64>,
    /// Seconds for each multi-stage solve.
    #[arg(long)]
    ms_time_limit: Option<f64>,
}

#[derive(Deserialize, Default, Debug)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    instance: Option<PathBuf>,
    output_dir: Option<PathBuf>,
    cache_dir: Option<PathBuf>,
    workers: Option<usize>,
    #[serde(default)]
    solver: FileSolver,
    #[serde(default)]
    grid: FileGrid,
}

#[derive(Deserialize, Default, Debug)]
#[serde(deny_unknown_fields)]
struct FileSolver {
    backend: Option<String>,
    rel_gap: Option<f64>,
    time_limit_s: Option<f64>,
    ts_time_limit_s: Option<f64>,
    rh_time_limit_s: Option<f64>,
    ms_time_limit_s: Option<f64>,
}

#[derive(Deserialize, Default, Debug)]
#[serde(deny_unknown_fields)]
struct FileGrid {
    epsilon: Option<String>,
    lambda: Option<String>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Solver(String),
    Validation(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Solver(_) => EXIT_SOLVER,
            CliError::Validation(_) => EXIT_VALIDATION,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Solver(m) | CliError::Validation(m) => m,
        }
    }
}

impl From<MilpError> for CliError {
    fn from(e: MilpError) -> Self {
        match e {
            MilpError::UnknownBackend(_) | MilpError::BackendUnavailable(_) => CliError::Usage(e.to_string()),
            _ => CliError::Solver(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::HorizonMismatch { .. } | ModelError::NoSegments => CliError::Validation(e.to_string()),
            ModelError::Milp(m) => m.into(),
            _ => CliError::Solver(e.to_string()),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::Milp(m) => m.into(),
            PolicyError::Model(m) => m.into(),
            _ => CliError::Solver(e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::ZeroMinimumOutput(_) | AnalysisError::NoGenerators | AnalysisError::Assumption { .. } => {
                CliError::Validation(e.to_string())
            }
            AnalysisError::Risk(_) | AnalysisError::Tree(_) => CliError::Usage(e.to_string()),
            AnalysisError::Cache(_) => CliError::Usage(e.to_string()),
            AnalysisError::Model(m) => m.into(),
            AnalysisError::Milp(m) => m.into(),
            AnalysisError::Policy(p) => p.into(),
        }
    }
}

/// Parses `start:stop:step`, a comma list, or a single value.
fn parse_grid(text: &str) -> Result<Vec<f64>, String> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| format!("`{s}` is not a number in grid `{text}`"))
    };
    let grid: Vec<f64> = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        let [a, b, step] = parts[..] else {
            return Err(format!("range grid `{text}` must be start:stop:step"));
        };
        let (a, b, step) = (num(a)?, num(b)?, num(step)?);
        if step <= 0.0 || b < a {
            return Err(format!("range grid `{text}` needs step > 0 and stop >= start"));
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        // Rounded to suppress accumulation noise such as 0.30000000000000004.
        (0..=n).map(|k| ((a + k as f64 * step) * 1e12).round() / 1e12).collect()
    } else {
        text.split(',').map(num).collect::<Result<_, _>>()?
    };
    if grid.is_empty() {
        return Err(format!("grid `{text}` is empty"));
    }
    Ok(grid)
}

/// Effective settings after merging flags, environment and config file.
struct RunConfig {
    instance: Instance,
    solve: SolveOptions,
    json: bool,
    file: FileConfig,
}

fn load_config(global: &GlobalArgs) -> Result<RunConfig, CliError> {
    let file = match &global.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            toml::from_str::<FileConfig>(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => FileConfig::default(),
    };
    let instance_path = global.instance.clone().or_else(|| file.instance.clone());
    let instance = match instance_path {
        Some(p) => {
            if !p.exists() {
                return Err(CliError::Usage(format!("instance file {} does not exist", p.display())));
            }
            Instance::load(&p).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?
        }
        None => Instance::bundled(),
    };
    let backend_name = global
        .solver
        .clone()
        .or_else(|| std::env::var("RAUC_SOLVER").ok().filter(|s| !s.is_empty()))
        .or_else(|| file.solver.backend.clone());
    let backend = match backend_name {
        Some(name) => name.parse::<BackendKind>()?,
        None => BackendKind::default(),
    };
    if !backend.is_available() {
        return Err(CliError::Usage(format!("solver backend `{backend}` is not available in this build")));
    }
    let mut solve = SolveOptions::with_backend(backend);
    if let Some(g) = global.rel_gap.or(file.solver.rel_gap) {
        if !(g > 0.0 && g <= 0.1) {
            return Err(CliError::Usage(format!("rel_gap {g} must lie in (0, 0.1]")));
        }
        solve.rel_gap = g;
    }
    solve.time_limit_s = global.time_limit.or(file.solver.time_limit_s);
    if let Some(t) = solve.time_limit_s {
        if t.is_nan() || t <= 0.0 {
            return Err(CliError::Usage(format!("time limit {t} must be positive")));
        }
    }
    Ok(RunConfig {
        instance,
        solve,
        json: global.json,
        file,
    })
}

/// Human-readable output: stdout normally, stderr under `--json`.
struct Out {
    json: bool,
    text: String,
}

impl Out {
    fn new(json: bool) -> Self {
        Out { json, text: String::new() }
    }

    fn line(&mut self, s: impl AsRef<str>) {
        self.text.push_str(s.as_ref());
        self.text.push('\n');
    }

    fn finish(self, value: Value) {
        if self.json {
            eprint!("{}", self.text);
            println!("{value}");
        } else {
            print!("{}", self.text);
        }
        let _ = std::io::stdout().flush();
    }
}

fn checked_instance(cfg: &RunConfig) -> Result<(), CliError> {
    let report = validate_instance(&cfg.instance);
    if report.has_errors() {
        let lines: Vec<String> = report.entries.iter().map(|v| v.to_string()).collect();
        return Err(CliError::Validation(format!("instance is invalid:\n{}", lines.join("\n"))));
    }
    Ok(())
}

fn cell_inputs(cfg: &RunConfig, cell: &CellArgs) -> Result<(ScenarioTree, RiskSpec), CliError> {
    let tree = build_tree(&cfg.instance, cell.epsilon).map_err(|e| CliError::Usage(e.to_string()))?;
    let spec = RiskSpec::mean_upper_semideviation(cell.lambda).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((tree, spec))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Usage(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn dump_lp(art: &ModelArtifacts, path: &Path) -> Result<PathBuf, CliError> {
    let (lp, sidecar) = art.export();
    write_file(path, &lp)?;
    let side = path.with_extension("symbols.json");
    write_file(&side, &sidecar)?;
    Ok(side)
}

fn cmd_validate(cfg: &RunConfig) -> Result<(), CliError> {
    let report = validate_instance(&cfg.instance);
    let mut out = Out::new(cfg.json);
    for v in &report.entries {
        out.line(v.to_string());
    }
    let errors = report.entries.iter().filter(|v| v.severity == Severity::Error).count();
    out.line(format!(
        "{} generators, horizon {}, {} violations",
        cfg.instance.num_generators(),
        cfg.instance.horizon,
        report.len()
    ));
    let failed = report.has_errors();
    out.finish(json!({
        "generators": cfg.instance.num_generators(),
        "horizon": cfg.instance.horizon,
        "violations": report.len(),
        "errors": errors,
        "entries": report.entries,
        "instance_hash": cfg.instance.content_hash(),
    }));
    if failed {
        Err(CliError::Validation(format!("{errors} blocking violations")))
    } else {
        Ok(())
    }
}

fn cmd_solve(cfg: &RunConfig, args: &SolveArgs, multi: bool) -> Result<(), CliError> {
    checked_instance(cfg)?;
    let (tree, spec) = cell_inputs(cfg, &args.cell)?;
    let art = if multi {
        build_ms(&cfg.instance, &tree, &spec)?
    } else {
        build_ts(&cfg.instance, &tree, &spec)?
    };
    let sol = solve(&art.model, &cfg.solve)?;
    if !sol.has_solution() {
        return Err(CliError::Solver(format!("solver ended with status {:?} and no solution", sol.status)));
    }
    let mut out = Out::new(cfg.json);
    let label = if multi { "z_ms" } else { "z_ts" };
    out.line(format!(
        "{label} = {:.6}  ({:?}, rel gap {:.2e}, {:.1} s, {} binaries, {} rows, backend {})",
        sol.objective,
        sol.status,
        sol.rel_gap,
        sol.wall_time_s,
        art.num_binaries(),
        art.model.constraints().len(),
        sol.backend
    ));
    let mut extra = serde_json::Map::new();
    if let Some(p) = &args.dump_policy {
        let pol = extract_policy(&art, &sol)?;
        write_file(p, &pol.dump(&tree, &cfg.instance))?;
        out.line(format!("policy written to {}", p.display()));
        extra.insert("policy_path".into(), json!(p));
    }
    if let Some(p) = &args.dump_lp {
        let side = dump_lp(&art, p)?;
        out.line(format!("model written to {} (symbols in {})", p.display(), side.display()));
        extra.insert("lp_path".into(), json!(p));
        extra.insert("symbols_path".into(), json!(side));
    }
    let mut value = json!({
        "model": if multi { "ms" } else { "ts" },
        "epsilon": args.cell.epsilon,
        "lambda": args.cell.lambda,
        "objective": sol.objective,
        "status": format!("{:?}", sol.status),
        "rel_gap": sol.rel_gap,
        "wall_time_s": sol.wall_time_s,
        "binaries": art.num_binaries(),
        "rows": art.model.constraints().len(),
        "backend": sol.backend,
    });
    value.as_object_mut().expect("object").extend(extra);
    out.finish(value);
    Ok(())
}

fn cmd_rolling_horizon(cfg: &RunConfig, args: &RhArgs) -> Result<(), CliError> {
    checked_instance(cfg)?;
    let (tree, spec) = cell_inputs(cfg, &args.cell)?;
    let schedule = if args.every_period {
        RhSchedule::EveryPeriod
    } else {
        RhSchedule::Revelation
    };
    let rh = rolling_horizon(
        &cfg.instance,
        &tree,
        &spec,
        &RhOptions {
            solve: cfg.solve.clone(),
            schedule,
            root_policy: None,
        },
    )?;
    let mut out = Out::new(cfg.json);
    out.line(format!(
        "z_rh = {:.6}  ({} sub-solves, {:.1} s, worst sub-solve gap {:.2e})",
        rh.value, rh.solves, rh.wall_time_s, rh.max_rel_gap
    ));
    let (z_ms, ms_gap) = match args.z_ms {
        Some(z) => (z, None),
        None => {
            let art = build_ms(&cfg.instance, &tree, &spec)?;
            let start = start_from_policy(&art, &cfg.instance, &rh.policy)?;
            let sol = solve_with_start(&art.model, &cfg.solve, Some(&start))?;
            if !sol.has_solution() {
                return Err(CliError::Solver(format!("multi-stage solve ended {:?}", sol.status)));
            }
            out.line(format!(
                "z_ms = {:.6}  ({:?}, rel gap {:.2e}, {:.1} s)",
                sol.objective, sol.status, sol.rel_gap, sol.wall_time_s
            ));
            (sol.objective, Some(sol.rel_gap))
        }
    };
    let gap_abs = rh.value - z_ms;
    let gap_pct = 100.0 * gap_abs / z_ms;
    out.line(format!("GAP = {gap_abs:.6} ({gap_pct:.4}%)"));
    if let Some(p) = &args.dump_policy {
        write_file(p, &rh.policy.dump(&tree, &cfg.instance))?;
        out.line(format!("policy written to {}", p.display()));
    }
    out.finish(json!({
        "epsilon": args.cell.epsilon,
        "lambda": args.cell.lambda,
        "z_rh": rh.value,
        "z_ms": z_ms,
        "z_ms_rel_gap": ms_gap,
        "gap_abs": gap_abs,
        "gap_pct": gap_pct,
        "solves": rh.solves,
        "wall_time_s": rh.wall_time_s,
        "max_sub_rel_gap": rh.max_rel_gap,
    }));
    Ok(())
}

fn cmd_bounds(cfg: &RunConfig, args: &BoundsArgs) -> Result<(), CliError> {
    let (tree, spec) = cell_inputs(cfg, &args.cell)?;
    let assumptions = analysis::check_assumptions(&cfg.instance, &tree);
    if args.enforce {
        assumptions.as_ref().map_err(|e| CliError::Validation(e.to_string()))?;
    }
    let b = BoundInputs::compute(&cfg.instance, &tree, &spec)?;
    let (lo, hi) = b.interval();
    let (a_lo, a_mid, a_hi) = approx_almost(b.alpha_lo, b.alpha_hi, b.d_max, b.rho_d);
    let mut out = Out::new(cfg.json);
    out.line(format!("alpha_lo = {:.6}   alpha_hi = {:.6}", b.alpha_lo, b.alpha_hi));
    out.line(format!("D_max = {:.6}   rho(D) = {:.6}", b.d_max, b.rho_d));
    let certified = assumptions.is_ok();
    out.line(format!(
        "VMS interval [{lo:.6}, {hi:.6}] ({})",
        match &assumptions {
            Ok(()) => "certified".to_string(),
            Err(e) => format!("diagnostic only: {e}"),
        }
    ));
    out.line(format!("almost-identical approximation band: {a_lo:.6} / {a_mid:.6} / {a_hi:.6}"));
    let final_approx = args.delta.map(|delta| {
        let t = cfg.instance.horizon;
        let vals = [b.alpha_lo, 0.5 * (b.alpha_lo + b.alpha_hi), b.alpha_hi].map(|a| approx_final(a, t, args.cell.lambda, delta));
        out.line(format!(
            "uniform-perturbation approximation (delta {delta}): {:.6} / {:.6} / {:.6}",
            vals[0], vals[1], vals[2]
        ));
        vals
    });
    out.finish(json!({
        "epsilon": args.cell.epsilon,
        "lambda": args.cell.lambda,
        "alpha_lo": b.alpha_lo,
        "alpha_hi": b.alpha_hi,
        "d_max": b.d_max,
        "rho_d": b.rho_d,
        "bound_lo": lo,
        "bound_hi": hi,
        "certified": certified,
        "assumption_error": assumptions.err().map(|e| e.to_string()),
        "approx_almost": [a_lo, a_mid, a_hi],
        "approx_final": final_approx,
    }));
    Ok(())
}

struct SweepPlan {
    eps: Vec<f64>,
    lambda: Vec<f64>,
    opts: SweepOptions,
    out_dir: Option<PathBuf>,
}

fn sweep_plan(cfg: &RunConfig, args: &SweepArgs, repro: bool) -> Result<SweepPlan, CliError> {
    let grid = |flag: &Option<String>, file: &Option<String>, default: &[f64]| -> Result<Vec<f64>, CliError> {
        match flag.as_ref().or(file.as_ref()) {
            Some(text) => parse_grid(text).map_err(CliError::Usage),
            None => Ok(default.to_vec()),
        }
    };
    let eps = grid(&args.eps, &cfg.file.grid.epsilon, &DEFAULT_EPSILONS)?;
    let lambda = grid(&args.lambda, &cfg.file.grid.lambda, &DEFAULT_LAMBDAS)?;
    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| cfg.file.output_dir.clone())
        .or_else(|| repro.then(|| PathBuf::from("rauc-out")));
    let cache_dir = args
        .cache_dir
        .clone()
        .or_else(|| cfg.file.cache_dir.clone())
        .or_else(|| out_dir.as_ref().map(|d| d.join("cells")));
    let defaults = SweepOptions::default();
    let solver = &cfg.file.solver;
    let limit = |flag: Option<f64>, file: Option<f64>, default: Option<f64>| {
        flag.or(cfg.solve.time_limit_s).or(file).or(default)
    };
    let opts = SweepOptions {
        solve: SolveOptions {
            time_limit_s: None,
            ..cfg.solve.clone()
        },
        ts_time_limit_s: limit(args.ts_time_limit, solver.ts_time_limit_s, defaults.ts_time_limit_s),
        rh_time_limit_s: limit(args.rh_time_limit, solver.rh_time_limit_s, defaults.rh_time_limit_s),
        ms_time_limit_s: limit(args.ms_time_limit, solver.ms_time_limit_s, defaults.ms_time_limit_s),
        schedule: RhSchedule::Revelation,
        workers: args.workers.or(cfg.file.workers).unwrap_or(1).max(1),
        cache_dir,
    };
    Ok(SweepPlan {
        eps,
        lambda,
        opts,
        out_dir,
    })
}

/// `epsilon` rows by `lambda` columns of one per-cell quantity.
fn matrix_csv(cells: &[CellResult], eps: &[f64], lambda: &[f64], field: impl Fn(&CellResult) -> f64) -> String {
    let mut out = String::from("epsilon");
    for l in lambda {
        let _ = write!(out, ",lambda={l}");
    }
    out.push('\n');
    for &e in eps {
        let _ = write!(out, "{e}");
        for &l in lambda {
            let v = cells
                .iter()
                .find(|c| c.epsilon == e && c.lambda == l)
                .map_or(f64::NAN, &field);
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

fn cmd_sweep(cfg: &RunConfig, args: &SweepArgs, repro: bool) -> Result<(), CliError> {
    checked_instance(cfg)?;
    let plan = sweep_plan(cfg, args, repro)?;
    let total = plan.eps.len() * plan.lambda.len();
    let done = std::sync::atomic::AtomicUsize::new(0);
    let progress = |c: &CellResult, cached: bool| {
        let k = done.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
        let status = match &c.error {
            Some(e) => format!("failed: {e}"),
            None => format!("VMS {:.3}%  GAP {:.3}%", c.vms_pct, c.gap_pct),
        };
        eprintln!(
            "[{k}/{total}] eps {} lambda {}{}: {status}",
            c.epsilon,
            c.lambda,
            if cached { " (cached)" } else { "" }
        );
    };
    let report = run_sweep(&cfg.instance, &plan.eps, &plan.lambda, &plan.opts, &progress)?;
    let cells = &report.cells;
    let csv = results_csv(cells);
    let failed = cells.iter().filter(|c| c.error.is_some()).count();

    let mut out = Out::new(cfg.json);
    let mut files = Vec::new();
    if let Some(dir) = &plan.out_dir {
        let results = dir.join("results.csv");
        write_file(&results, &csv)?;
        files.push(results);
        let series: [(&str, CellField); 5] = [
            ("vms_pct.csv", |c| c.vms_pct),
            ("gap_pct.csv", |c| c.gap_pct),
            ("time_ts.csv", |c| c.time_ts_s),
            ("time_ms.csv", |c| c.time_ms_s),
            ("time_rh.csv", |c| c.time_rh_s),
        ];
        for (name, field) in series {
            let p = dir.join(name);
            write_file(&p, &matrix_csv(cells, &plan.eps, &plan.lambda, field))?;
            files.push(p);
        }
    }
    let summary = summarize(cells, &plan.eps, &plan.lambda, plan.opts.solve.rel_gap);
    if !repro {
        out.text.push_str(&csv);
    }
    if repro {
        out.line(format!("{} of {} cells reused from cache", report.from_cache, total));
        out.text.push_str(&summary.render());
        out.line("solution times (s), rows epsilon, columns lambda:");
        for (label, field) in [
            ("two-stage", (|c: &CellResult| c.time_ts_s) as fn(&CellResult) -> f64),
            ("multi-stage", |c| c.time_ms_s),
            ("rolling horizon", |c| c.time_rh_s),
        ] {
            out.line(format!("{label}:"));
            out.text.push_str(&matrix_csv(cells, &plan.eps, &plan.lambda, field));
        }
    }
    for f in &files {
        eprintln!("wrote {}", f.display());
    }
    out.finish(json!({
        "cells": cells,
        "from_cache": report.from_cache,
        "failed": failed,
        "summary": summary,
        "files": files,
    }));
    if failed > 0 {
        return Err(CliError::Solver(format!("{failed} of {total} cells failed")));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli.global)?;
    match &cli.command {
        Command::Validate => cmd_validate(&cfg),
        Command::SolveTs(a) => cmd_solve(&cfg, a, false),
        Command::SolveMs(a) => cmd_solve(&cfg, a, true),
        Command::RollingHorizon(a) => cmd_rolling_horizon(&cfg, a),
        Command::Bounds(a) => cmd_bounds(&cfg, a),
        Command::Sweep(a) => cmd_sweep(&cfg, a, false),
        Command::PaperRepro(a) => cmd_sweep(&cfg, a, true),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_grid() {
        assert_eq!(parse_grid("0.1:0.5:0.1").unwrap(), vec![0.1, 0.2, 0.3, 0.4, 0.5]);
        assert_eq!(parse_grid("0:0.5:0.1").unwrap(), vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]);
        assert_eq!(parse_grid("0.2").unwrap(), vec![0.2]);
        assert_eq!(parse_grid("0, 0.25,1").unwrap(), vec![0.0, 0.25, 1.0]);
    }

    #[test]
    fn bad_grids() {
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("0:1:0").is_err());
        assert!(parse_grid("a,b").is_err());
    }

    #[test]
    fn config_file_fields() {
        let cfg: FileConfig = toml::from_str(
            "workers = 2\n[solver]\nbackend = \"bnb\"\nrel_gap = 1e-4\n[grid]\nepsilon = \"0:0.2:0.1\"\n",
        )
        .unwrap();
        assert_eq!(cfg.workers, Some(2));
        assert_eq!(cfg.solver.backend.as_deref(), Some("bnb"));
        assert_eq!(cfg.grid.epsilon.as_deref(), Some("0:0.2:0.1"));
        assert!(toml::from_str::<FileConfig>("bogus = 1").is_err());
    }

    #[test]
    fn matrix_layout() {
        let text = matrix_csv(&[], &[0.1, 0.2], &[0.0], |c| c.vms_pct);
        assert_eq!(text, "epsilon,lambda=0\n0.1,NaN\n0.2,NaN\n");
    }
}
