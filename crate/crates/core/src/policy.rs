//! Online nonlinear feedback, the adversarial disturbance, budget
//! bookkeeping and the closed-loop simulator.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SidarError};
use crate::linalg::{pinv, sym_condition, sym_pinv};
use crate::multiplier::{MultiplierSolution, Solver};
use crate::model::ProblemInstance;
use crate::riccati::{gains, tail_sweep, SINGULAR_CONDITION};

const CLAMP_WARN: f64 = 1e-9;
const RECONSTRUCT_TOL: f64 = 1e-12;

/// Output of [`control`].
#[derive(Debug, Clone, PartialEq)]
pub struct Control {
    pub u: DVector<f64>,
    pub lambda_star: f64,
    pub in_xl: bool,
    pub solution: MultiplierSolution,
}

/// `u = K_k(lambda*) x` with `lambda*` optimal for `(x, b)` at stage `k`.
pub fn control(x: &DVector<f64>, b: f64, k: usize, solver: &Solver) -> Result<Control> {
    let solution = solver.solve_multiplier(x, b, k)?;
    let u = &solution.sweep.stage(k).k * x;
    Ok(Control {
        u,
        lambda_star: solution.lambda_star,
        in_xl: solution.at_lower_bound,
        solution,
    })
}

/// Stationary disturbance of the stage game given the applied control,
/// projected radially onto the ball of radius `sqrt(b)`.
pub fn adversarial_disturbance(
    x: &DVector<f64>,
    u: &DVector<f64>,
    b: f64,
    k: usize,
    lambda_star: f64,
    inst: &ProblemInstance,
) -> Result<DVector<f64>> {
    let sweep = tail_sweep(lambda_star, k + 1, inst)?;
    let pi_next = sweep.pi(k + 1);
    let (kg, jg, _) = gains(pi_next, lambda_star, inst).map_err(|e| e.at_stage(k))?;
    let w_bar = stationary_response(x, u, &kg, &jg, pi_next, lambda_star, k, inst)?;
    Ok(project(w_bar, b))
}

/// Solves `(G'PG - lambda I) w = -G'P(A x + B u)`.
///
/// Written as `w = J x + D^-1 (-G'PB (u - K x))` with `D = G'PG - lambda I`.
/// At a feasibility bound `D` can be exactly singular while the full stage
/// matrix is not; then `J x` is still the stationary point along the
/// policy, and only a deviation of `u` from `K x` needs `D` inverted.
#[allow(clippy::too_many_arguments)]
fn stationary_response(
    x: &DVector<f64>,
    u: &DVector<f64>,
    kg: &DMatrix<f64>,
    jg: &DMatrix<f64>,
    pi_next: &DMatrix<f64>,
    lambda: f64,
    k: usize,
    inst: &ProblemInstance,
) -> Result<DVector<f64>> {
    let g = inst.g();
    let q = inst.disturbance_dim();
    let d = g.transpose() * pi_next * g - DMatrix::identity(q, q) * lambda;
    let r = -(g.transpose() * pi_next * inst.b()) * (u - kg * x);
    let base = jg * x;
    if r.iter().all(|v| *v == 0.0) {
        return Ok(base);
    }
    let condition = sym_condition(&d);
    let delta = if condition <= SINGULAR_CONDITION {
        d.clone().lu().solve(&r).ok_or(SidarError::SingularBlock { stage: Some(k), condition })?
    } else {
        let delta = sym_pinv(&d, 1e-12) * &r;
        if (&d * &delta - &r).norm() > 1e-10 * (1.0 + r.norm()) {
            return Err(SidarError::SingularBlock { stage: Some(k), condition });
        }
        delta
    };
    Ok(base + delta)
}

fn project(w: DVector<f64>, b: f64) -> DVector<f64> {
    let sq = w.norm_squared();
    if sq <= b {
        w
    } else if b <= 0.0 {
        DVector::zeros(w.len())
    } else {
        let scale = b.sqrt() / sq.sqrt();
        w * scale
    }
}

/// Remaining budget after spending `w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetUpdate {
    pub remaining: f64,
    /// `|w|^2` exceeded `b` by more than rounding.
    pub clamped: bool,
}

pub fn budget_update(b: f64, w: &DVector<f64>) -> BudgetUpdate {
    let spent = w.norm_squared();
    BudgetUpdate {
        remaining: (b - spent).max(0.0),
        clamped: spent > b + CLAMP_WARN,
    }
}

/// How the simulator picks the disturbance at each stage.
#[derive(Debug, Clone, PartialEq)]
pub enum DisturbanceMode {
    /// Projected stationary disturbance of the stage game.
    Adversarial,
    Zero,
    /// One vector per stage; each is projected onto the remaining budget.
    Fixed(Vec<DVector<f64>>),
    /// Uniform direction, magnitude uniform in `[0, sqrt(b_k/(N-k))]`.
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub k: usize,
    pub x: DVector<f64>,
    pub b: f64,
    pub lambda_star: f64,
    pub u: DVector<f64>,
    pub w: DVector<f64>,
    pub in_xl: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<StageRecord>,
    pub x_final: DVector<f64>,
    pub final_budget: f64,
    pub realized_cost: f64,
    pub budget_used: f64,
    /// Some stage spent more than its remaining budget beyond rounding.
    pub clamped: bool,
}

/// A run that may have stopped early.
#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub trajectory: Trajectory,
    pub failure: Option<SidarError>,
}

/// Runs the closed loop from `x0` for the full horizon.
pub fn simulate(x0: &DVector<f64>, solver: &Solver, mode: &DisturbanceMode) -> Result<Trajectory> {
    let out = simulate_partial(x0, solver, mode)?;
    match out.failure {
        Some(e) => Err(e),
        None => Ok(out.trajectory),
    }
}

/// Like [`simulate`], but a solver failure mid-run returns the stages
/// completed so far together with the error. Input errors are still
/// returned directly.
pub fn simulate_partial(x0: &DVector<f64>, solver: &Solver, mode: &DisturbanceMode) -> Result<SimulationOutcome> {
    let inst = solver.instance();
    let (n, q, horizon) = (inst.state_dim(), inst.disturbance_dim(), inst.horizon());
    if x0.len() != n {
        return Err(SidarError::dimension("x0", format!("expected {n} entries, got {}", x0.len())));
    }
    if let DisturbanceMode::Fixed(ws) = mode {
        if ws.len() != horizon {
            return Err(SidarError::dimension("w", format!("expected {horizon} disturbances, got {}", ws.len())));
        }
        if let Some(i) = ws.iter().position(|w| w.len() != q) {
            return Err(SidarError::dimension("w", format!("disturbance {i} has {} entries, expected {q}", ws[i].len())));
        }
    }
    let mut rng = match mode {
        DisturbanceMode::Random { seed } => Some(ChaCha8Rng::seed_from_u64(*seed)),
        _ => None,
    };
    let g_pinv = pinv(inst.g(), RECONSTRUCT_TOL);

    let mut x = x0.clone();
    let mut b = inst.alpha();
    let mut records = Vec::with_capacity(horizon);
    let mut cost = 0.0;
    let mut used = 0.0;
    let mut clamped = false;
    let mut failure = None;
    for k in 0..horizon {
        let step = (|| -> Result<(Control, DVector<f64>)> {
            let ctl = control(&x, b, k, solver)?;
            let w = match mode {
                DisturbanceMode::Adversarial => {
                    let sweep = &ctl.solution.sweep;
                    let st = sweep.stage(k);
                    let w_bar =
                        stationary_response(&x, &ctl.u, &st.k, &st.j, sweep.pi(k + 1), ctl.lambda_star, k, inst)?;
                    project(w_bar, b)
                }
                DisturbanceMode::Zero => DVector::zeros(q),
                DisturbanceMode::Fixed(ws) => project(ws[k].clone(), b),
                DisturbanceMode::Random { .. } => {
                    let rng = rng.as_mut().expect("seeded");
                    random_disturbance(rng, q, b / (horizon - k) as f64)
                }
            };
            Ok((ctl, w))
        })();
        let (ctl, w) = match step {
            Ok(v) => v,
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        let drift = inst.a() * &x + inst.b() * &ctl.u;
        let generated = &drift + inst.g() * &w;
        let w_rec = &g_pinv * (generated - &drift);
        let x_next = drift + inst.g() * &w_rec;

        cost += 0.5 * ((x.transpose() * inst.q() * &x)[(0, 0)] + (ctl.u.transpose() * inst.r() * &ctl.u)[(0, 0)]);
        used += w_rec.norm_squared();
        let upd = budget_update(b, &w_rec);
        clamped |= upd.clamped;
        records.push(StageRecord {
            k,
            x: x.clone(),
            b,
            lambda_star: ctl.lambda_star,
            u: ctl.u,
            w: w_rec,
            in_xl: ctl.in_xl,
        });
        x = x_next;
        b = upd.remaining;
    }
    if failure.is_none() {
        cost += 0.5 * (x.transpose() * inst.pf() * &x)[(0, 0)];
    }
    Ok(SimulationOutcome {
        trajectory: Trajectory {
            records,
            x_final: x,
            final_budget: b,
            realized_cost: cost,
            budget_used: used,
            clamped,
        },
        failure,
    })
}

fn random_disturbance<R: Rng>(rng: &mut R, q: usize, cap: f64) -> DVector<f64> {
    let dir = loop {
        let v = DVector::<f64>::from_fn(q, |_, _| rng.sample(StandardNormal));
        let norm = v.norm();
        if norm > 1e-12 {
            break v / norm;
        }
    };
    let radius = rng.random_range(0.0..=1.0) * cap.max(0.0).sqrt();
    dir * radius
}

/// Formats a number with 17 significant digits.
pub fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

fn names(prefix: &str, len: usize) -> Vec<String> {
    if len == 1 {
        vec![prefix.to_string()]
    } else {
        (1..=len).map(|i| format!("{prefix}{i}")).collect()
    }
}

/// CSV header for an instance of the given dimensions.
pub fn csv_header(n: usize, m: usize, q: usize) -> String {
    let mut cols = vec!["k".to_string()];
    cols.extend(names("x", n));
    cols.push("b".into());
    cols.push("lambda_star".into());
    cols.extend(names("u", m));
    cols.extend(names("w", q));
    cols.push("in_XL".into());
    cols.join(",")
}

fn record_row(r: &StageRecord) -> String {
    let mut cols = vec![r.k.to_string()];
    cols.extend(r.x.iter().map(|v| fmt_num(*v)));
    cols.push(fmt_num(r.b));
    cols.push(fmt_num(r.lambda_star));
    cols.extend(r.u.iter().map(|v| fmt_num(*v)));
    cols.extend(r.w.iter().map(|v| fmt_num(*v)));
    cols.push(r.in_xl.to_string());
    cols.join(",")
}

/// Writes the header, one row per stage and a final row carrying
/// `x_N` and `b_N` with the stage-only columns left empty.
pub fn write_trajectory_csv<W: Write>(out: &mut W, traj: &Trajectory, m: usize, q: usize) -> io::Result<()> {
    let n = traj.x_final.len();
    writeln!(out, "{}", csv_header(n, m, q))?;
    for r in &traj.records {
        writeln!(out, "{}", record_row(r))?;
    }
    let mut cols = vec![traj.records.len().to_string()];
    cols.extend(traj.x_final.iter().map(|v| fmt_num(*v)));
    cols.push(fmt_num(traj.final_budget));
    cols.extend(std::iter::repeat_n(String::new(), 1 + m + q + 1));
    writeln!(out, "{}", cols.join(","))
}
