//! The `sidar` command-line front end.

pub mod check;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::SidarError;
use crate::model::{random_instance, validate_instance, ProblemInstance, RandomDims};
use crate::multiplier::Solver;
use crate::policy::{fmt_num, simulate_partial, write_trajectory_csv, DisturbanceMode};
use crate::regions::{region_quadratic, write_region_csv};
use check::{run_suites, Status};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_BAD_INPUT: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "sidar", version, about = "Finite-horizon minmax regulator against an energy-bounded disturbance")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check shapes and report the standing assumptions.
    Validate { file: PathBuf },
    /// Print the feasibility bounds lambda_N .. lambda_1.
    Ladder { file: PathBuf },
    /// Solve for the optimal multiplier, value and first control at x0.
    Solve {
        file: PathBuf,
        /// Initial state, comma separated.
        #[arg(long, allow_hyphen_values = true)]
        x0: String,
        /// Emit a JSON record instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Run the closed loop and write the trajectory as CSV.
    Simulate {
        file: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        x0: String,
        /// adversarial, zero, random, or file:<path> with one disturbance per line
        #[arg(long, default_value = "adversarial")]
        mode: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the first stage over a grid of initial states and budgets.
    Sweep {
        file: PathBuf,
        /// lo:hi:count
        #[arg(long, allow_hyphen_values = true)]
        x0: String,
        /// lo:hi:count
        #[arg(long)]
        b0: String,
        /// State direction scaled by the x0 grid (needed when n > 1).
        #[arg(long, allow_hyphen_values = true)]
        direction: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify a list of states against the linear region.
    Region {
        file: PathBuf,
        /// Semicolon separated states, each comma separated.
        #[arg(long, allow_hyphen_values = true)]
        points: String,
        #[arg(long, default_value_t = 0)]
        stage: usize,
        /// Remaining budget; defaults to alpha.
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the property suites on one instance or on random ones.
    Check {
        file: Option<PathBuf>,
        #[arg(long, conflicts_with = "file")]
        random: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Parses arguments and runs the command, writing to the given streams.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_BAD_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(Failure { code, message }) => {
            let _ = writeln!(err, "error: {message}");
            code
        }
    }
}

struct Failure {
    code: i32,
    message: String,
}

fn bad_input(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_BAD_INPUT, message: message.into() }
}

fn solver_failure(e: SidarError) -> Failure {
    Failure { code: EXIT_SOLVER, message: e.to_string() }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    bad_input(format!("{}: {e}", path.display()))
}

type CmdResult = std::result::Result<i32, Failure>;

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    match cmd {
        Command::Validate { file } => cmd_validate(&file, out),
        Command::Ladder { file } => cmd_ladder(&file, out),
        Command::Solve { file, x0, json } => cmd_solve(&file, &x0, json, out),
        Command::Simulate { file, x0, mode, seed, out: path } => cmd_simulate(&file, &x0, &mode, seed, &path, out),
        Command::Sweep { file, x0, b0, direction, out: path } => {
            cmd_sweep(&file, &x0, &b0, direction.as_deref(), &path, out, err)
        }
        Command::Region { file, points, stage, budget, out: path } => cmd_region(&file, &points, stage, budget, &path),
        Command::Check { file, random, seed } => cmd_check(file.as_deref(), random, seed, out, err),
    }
}

fn load(file: &Path) -> std::result::Result<ProblemInstance, Failure> {
    ProblemInstance::from_json_file(file).map_err(|e| bad_input(e.to_string()))
}

fn parse_vector(text: &str, what: &str) -> std::result::Result<DVector<f64>, Failure> {
    let vals = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| bad_input(format!("{what}: {e}")))?;
    Ok(DVector::from_vec(vals))
}

fn parse_state(text: &str, inst: &ProblemInstance) -> std::result::Result<DVector<f64>, Failure> {
    let x = parse_vector(text, "x0")?;
    if x.len() != inst.state_dim() {
        return Err(bad_input(format!("x0 has {} entries, the state has {}", x.len(), inst.state_dim())));
    }
    Ok(x)
}

/// `lo:hi:count` to `count` evenly spaced points (endpoints included).
pub fn parse_range(text: &str) -> Option<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return None;
    }
    let lo: f64 = parts[0].trim().parse().ok()?;
    let hi: f64 = parts[1].trim().parse().ok()?;
    let count: usize = parts[2].trim().parse().ok()?;
    if count == 0 || !lo.is_finite() || !hi.is_finite() {
        return None;
    }
    if count == 1 {
        return Some(vec![lo]);
    }
    Some((0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect())
}

fn open_out(path: &Path) -> std::result::Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| io_failure(path, e))
}

fn cmd_validate(file: &Path, out: &mut dyn Write) -> CmdResult {
    let inst = load(file)?;
    let rep = validate_instance(&inst);
    let _ = write!(out, "{rep}");
    Ok(EXIT_OK)
}

fn cmd_ladder(file: &Path, out: &mut dyn Write) -> CmdResult {
    let inst = load(file)?;
    let solver = Solver::new(inst).map_err(solver_failure)?;
    let ladder = solver.ladder();
    for j in (1..=ladder.horizon()).rev() {
        let r = ladder.residuals[ladder.horizon() - j];
        let _ = writeln!(out, "lambda_{j} = {}  residual {r:.3e}", fmt_num(ladder.lambda(j)));
    }
    Ok(EXIT_OK)
}

#[derive(serde::Serialize)]
struct SolveRecord {
    x0: Vec<f64>,
    ladder: Vec<f64>,
    lambda_star: f64,
    value: f64,
    region: &'static str,
    z_norm_sq: f64,
    stationarity_gap: f64,
    gain: Vec<Vec<f64>>,
    u0: Vec<f64>,
}

fn cmd_solve(file: &Path, x0: &str, json: bool, out: &mut dyn Write) -> CmdResult {
    let inst = load(file)?;
    let x = parse_state(x0, &inst)?;
    let solver = Solver::new(inst.clone()).map_err(solver_failure)?;
    let sol = solver.solve_multiplier(&x, inst.alpha(), 0).map_err(solver_failure)?;
    let gain = &sol.sweep.stage(0).k;
    let u0 = gain * &x;
    let rec = SolveRecord {
        x0: x.iter().copied().collect(),
        ladder: solver.ladder().lambdas.clone(),
        lambda_star: sol.lambda_star,
        value: sol.value,
        region: if sol.at_lower_bound { "L" } else { "NL" },
        z_norm_sq: sol.z_norm_sq,
        stationarity_gap: sol.z_norm_sq - inst.alpha(),
        gain: (0..gain.nrows()).map(|i| gain.row(i).iter().copied().collect()).collect(),
        u0: u0.iter().copied().collect(),
    };
    if json {
        let _ = writeln!(out, "{}", serde_json::to_string_pretty(&rec).expect("record serializes"));
        return Ok(EXIT_OK);
    }
    let join = |v: &[f64]| v.iter().map(|x| fmt_num(*x)).collect::<Vec<_>>().join(",");
    let _ = writeln!(out, "ladder (lambda_N .. lambda_1): {}", join(&rec.ladder));
    let _ = writeln!(out, "lambda_star: {}", fmt_num(rec.lambda_star));
    let _ = writeln!(out, "value: {}", fmt_num(rec.value));
    let _ = writeln!(out, "region: {}", rec.region);
    let _ = writeln!(out, "z_norm_sq: {}", fmt_num(rec.z_norm_sq));
    let _ = writeln!(out, "z_norm_sq - alpha: {}", fmt_num(rec.stationarity_gap));
    for (i, row) in rec.gain.iter().enumerate() {
        let _ = writeln!(out, "gain row {i}: {}", join(row));
    }
    let _ = writeln!(out, "u0: {}", join(&rec.u0));
    Ok(EXIT_OK)
}

fn read_disturbances(path: &Path, q: usize) -> std::result::Result<Vec<DVector<f64>>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    let mut ws = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let w = parse_vector(line, &format!("{} line {}", path.display(), i + 1))?;
        if w.len() != q {
            return Err(bad_input(format!("{} line {}: expected {q} entries", path.display(), i + 1)));
        }
        ws.push(w);
    }
    Ok(ws)
}

fn cmd_simulate(file: &Path, x0: &str, mode: &str, seed: u64, path: &Path, out: &mut dyn Write) -> CmdResult {
    let inst = load(file)?;
    let x = parse_state(x0, &inst)?;
    let mode = match mode {
        "adversarial" => DisturbanceMode::Adversarial,
        "zero" => DisturbanceMode::Zero,
        "random" => DisturbanceMode::Random { seed },
        other => match other.strip_prefix("file:") {
            Some(p) => DisturbanceMode::Fixed(read_disturbances(Path::new(p), inst.disturbance_dim())?),
            None => return Err(bad_input(format!("unknown mode {other}"))),
        },
    };
    let solver = Solver::new(inst.clone()).map_err(solver_failure)?;
    let outcome = simulate_partial(&x, &solver, &mode).map_err(|e| bad_input(e.to_string()))?;
    let mut w = open_out(path)?;
    let traj = &outcome.trajectory;
    write_trajectory_csv(&mut w, traj, inst.input_dim(), inst.disturbance_dim()).map_err(|e| io_failure(path, e))?;
    if let Some(e) = &outcome.failure {
        let _ = writeln!(w, "# failed at stage {}: {e}", traj.records.len());
        w.flush().map_err(|e| io_failure(path, e))?;
        return Err(solver_failure(e.clone()));
    }
    w.flush().map_err(|e| io_failure(path, e))?;
    let _ = writeln!(out, "realized_cost: {}", fmt_num(traj.realized_cost));
    let _ = writeln!(out, "budget_used: {}", fmt_num(traj.budget_used));
    Ok(EXIT_OK)
}

/// One sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub x0: f64,
    pub b0: f64,
    pub lambda_star: f64,
    pub u_star: Vec<f64>,
    pub in_xl: bool,
}

/// Solves the first stage for every `(x0 * direction, b0)`; rows come back
/// sorted with `b0` outer and `x0` inner. Failed cells carry NaNs.
pub fn sweep(solver: &Solver, x0s: &[f64], b0s: &[f64], direction: &DVector<f64>) -> (Vec<SweepCell>, usize) {
    let m = solver.instance().input_dim();
    let cells: Vec<(f64, f64)> = b0s.iter().flat_map(|b| x0s.iter().map(move |x| (*x, *b))).collect();
    let results: Vec<Option<SweepCell>> = cells
        .par_iter()
        .map(|&(x0, b0)| {
            let x = direction * x0;
            let sol = solver.solve_multiplier(&x, b0, 0).ok()?;
            let u = &sol.sweep.stage(0).k * &x;
            Some(SweepCell {
                x0,
                b0,
                lambda_star: sol.lambda_star,
                u_star: u.iter().copied().collect(),
                in_xl: sol.at_lower_bound,
            })
        })
        .collect();
    let failures = results.iter().filter(|r| r.is_none()).count();
    let rows = results
        .into_iter()
        .zip(cells)
        .map(|(r, (x0, b0))| {
            r.unwrap_or(SweepCell {
                x0,
                b0,
                lambda_star: f64::NAN,
                u_star: vec![f64::NAN; m],
                in_xl: false,
            })
        })
        .collect();
    (rows, failures)
}

fn cmd_sweep(
    file: &Path,
    x0: &str,
    b0: &str,
    direction: Option<&str>,
    path: &Path,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> CmdResult {
    let inst = load(file)?;
    let x0s = parse_range(x0).ok_or_else(|| bad_input("--x0 expects lo:hi:count"))?;
    let b0s = parse_range(b0).ok_or_else(|| bad_input("--b0 expects lo:hi:count"))?;
    if let Some(b) = b0s.iter().find(|b| !(**b >= 0.0 && **b <= inst.alpha())) {
        return Err(bad_input(format!("budget {b} outside [0, alpha]")));
    }
    let dir = match direction {
        Some(d) => parse_state(d, &inst)?,
        None if inst.state_dim() == 1 => DVector::from_element(1, 1.0),
        None => return Err(bad_input("--direction is required when the state has more than one entry")),
    };
    let solver = Solver::new(inst.clone()).map_err(solver_failure)?;
    let (rows, failures) = sweep(&solver, &x0s, &b0s, &dir);
    let mut w = open_out(path)?;
    let m = inst.input_dim();
    let u_cols: Vec<String> = if m == 1 { vec!["u_star".into()] } else { (1..=m).map(|i| format!("u_star{i}")).collect() };
    let write = |w: &mut BufWriter<File>| -> io::Result<()> {
        writeln!(w, "x0,b0,lambda_star,{},in_XL", u_cols.join(","))?;
        for r in &rows {
            let us: Vec<String> = r.u_star.iter().map(|v| fmt_num(*v)).collect();
            writeln!(w, "{},{},{},{},{}", fmt_num(r.x0), fmt_num(r.b0), fmt_num(r.lambda_star), us.join(","), r.in_xl)?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| io_failure(path, e))?;
    let _ = writeln!(out, "{} cells, {failures} failed", rows.len());
    if failures > 0 {
        let _ = writeln!(err, "{failures} cells failed and were written as NaN rows");
        return Ok(EXIT_SOLVER);
    }
    Ok(EXIT_OK)
}

fn cmd_region(file: &Path, points: &str, stage: usize, budget: Option<f64>, path: &Path) -> CmdResult {
    let inst = load(file)?;
    if stage >= inst.horizon() {
        return Err(bad_input(format!("stage {stage} is past the horizon")));
    }
    let pts = points
        .split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| parse_state(p, &inst))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let solver = Solver::new(inst.clone()).map_err(solver_failure)?;
    let reg = region_quadratic(stage, budget.unwrap_or(inst.alpha()), &solver).map_err(solver_failure)?;
    let mut w = open_out(path)?;
    write_region_csv(&mut w, &reg, &pts)
        .and_then(|_| w.flush())
        .map_err(|e| io_failure(path, e))?;
    Ok(EXIT_OK)
}

fn cmd_check(file: Option<&Path>, random: Option<usize>, seed: u64, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let started = Instant::now();
    let instances: Vec<ProblemInstance> = match (file, random) {
        (Some(f), _) => vec![load(f)?],
        (None, Some(count)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count)
                .map(|_| {
                    let dims = RandomDims::sample(&mut rng, 3, 2, 2, 5);
                    random_instance(&mut rng, dims)
                })
                .collect()
        }
        (None, None) => return Err(bad_input("check needs an instance file or --random N")),
    };
    let results: Vec<Option<Vec<check::SuiteResult>>> = instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| run_suites(inst, seed.wrapping_add(i as u64)))
        .collect();

    let mut first_failure = None;
    let mut names: Vec<&'static str> = Vec::new();
    for (i, res) in results.iter().enumerate() {
        match res {
            None => {
                let _ = writeln!(err, "warning: instance {i}: range(G) is not contained in range(B) (A2); checks skipped");
            }
            Some(suites) => {
                for s in suites {
                    if !names.contains(&s.name) {
                        names.push(s.name);
                    }
                    if s.status == Status::Fail && first_failure.is_none() {
                        first_failure = Some((i, s.clone()));
                    }
                }
            }
        }
    }
    for name in &names {
        let mut pass = 0;
        let mut skipped = 0;
        let mut failed = 0;
        let mut worst: f64 = 0.0;
        for s in results.iter().flatten().flatten().filter(|s| s.name == *name) {
            match s.status {
                Status::Pass => pass += 1,
                Status::Skip => skipped += 1,
                Status::Fail => failed += 1,
            }
            if s.status != Status::Skip && s.tolerance > 0.0 {
                worst = worst.max(s.residual / s.tolerance);
            }
        }
        let tag = if failed > 0 { "FAIL" } else { "pass" };
        let _ = writeln!(
            out,
            "{tag} {name}: {pass} passed, {failed} failed, {skipped} skipped, worst residual/tolerance {worst:.3e}"
        );
    }
    let _ = writeln!(err, "checked {} instance(s) in {:.2?}", instances.len(), started.elapsed());
    if let Some((i, s)) = first_failure {
        let _ = writeln!(
            err,
            "first failure: {} on instance {i}: residual {:.3e} (tolerance {:.1e}) {}",
            s.name, s.residual, s.tolerance, s.detail
        );
        return Ok(EXIT_CHECK_FAILED);
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("0:1:3"), Some(vec![0.0, 0.5, 1.0]));
        assert_eq!(parse_range("-2:2:1"), Some(vec![-2.0]));
        assert_eq!(parse_range("0:1"), None);
        assert_eq!(parse_range("0:1:0"), None);
        let pts = parse_range("-2:2:201").unwrap();
        assert_eq!((pts[0], pts[100], pts[200]), (-2.0, 0.0, 2.0));
    }

    #[test]
    fn unknown_command_is_bad_input() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(run(["sidar", "frobnicate"], &mut o, &mut e), EXIT_BAD_INPUT);
    }
}
