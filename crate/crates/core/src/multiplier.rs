//! The scalar dual problem in the multiplier: value, derivative and the
//! optimal multiplier for a state and a remaining budget.

use nalgebra::DVector;

use crate::error::{Result, SidarError};
use crate::feasibility::{lambda_ladder, FeasibilityLadder, LAMBDA_FLOOR};
use crate::model::ProblemInstance;
use crate::riccati::{tail_sweep, RiccatiSweep};

/// Derivative slack under which the lower bound counts as optimal.
pub const LOWER_BOUND_SLACK: f64 = 1e-9;

const BRACKET_LIMIT: f64 = 1e12;
const BISECTION_TOL: f64 = 1e-11;
const EXHAUSTED_SCALE: f64 = 1e9;

/// Solution of the stage-`k` multiplier problem.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierSolution {
    pub stage: usize,
    pub budget: f64,
    pub lambda_star: f64,
    /// Lower end of the admissible interval (ladder value, floored).
    pub lower_bound: f64,
    /// `true` when the state lies in the linear region.
    pub at_lower_bound: bool,
    /// `true` when the budget is spent and the multiplier was sent to its
    /// large-`lambda` limit.
    pub budget_exhausted: bool,
    pub z_star: DVector<f64>,
    pub z_norm_sq: f64,
    pub value: f64,
    pub derivative_at_lower: f64,
    /// Tail sweep from stage `k` at `lambda_star`.
    pub sweep: RiccatiSweep,
}

fn quad(x: &DVector<f64>, sweep: &RiccatiSweep, k: usize) -> f64 {
    (x.transpose() * sweep.pi(k) * x)[(0, 0)]
}

fn check_state(x: &DVector<f64>, inst: &ProblemInstance) -> Result<()> {
    if x.len() != inst.state_dim() {
        return Err(SidarError::dimension("x", format!("expected {} entries, got {}", inst.state_dim(), x.len())));
    }
    Ok(())
}

/// `x' Pi_k(lambda) x / (2 alpha) + budget lambda / (2 alpha)`.
pub fn value_l(x: &DVector<f64>, budget: f64, k: usize, lambda: f64, inst: &ProblemInstance) -> Result<f64> {
    check_state(x, inst)?;
    let sweep = tail_sweep(lambda, k, inst)?;
    Ok(value_from_sweep(x, budget, k, &sweep, inst))
}

fn value_from_sweep(x: &DVector<f64>, budget: f64, k: usize, sweep: &RiccatiSweep, inst: &ProblemInstance) -> f64 {
    (quad(x, sweep, k) + budget * sweep.lambda) / (2.0 * inst.alpha())
}

/// `z*(lambda) = Jtilde_k(lambda) x`, length `(N-k) q`.
pub fn stationary_disturbance(x: &DVector<f64>, k: usize, lambda: f64, inst: &ProblemInstance) -> Result<DVector<f64>> {
    check_state(x, inst)?;
    Ok(tail_sweep(lambda, k, inst)?.jtilde * x)
}

/// `budget/(2 alpha) - |z*(lambda)|^2/(2 alpha)`.
pub fn dl_dlambda(x: &DVector<f64>, budget: f64, k: usize, lambda: f64, inst: &ProblemInstance) -> Result<f64> {
    let z = stationary_disturbance(x, k, lambda, inst)?;
    Ok(derivative(budget, z.norm_squared(), inst))
}

fn derivative(budget: f64, z_norm_sq: f64, inst: &ProblemInstance) -> f64 {
    (budget - z_norm_sq) / (2.0 * inst.alpha())
}

/// An instance together with its feasibility ladder.
#[derive(Debug, Clone)]
pub struct Solver {
    instance: ProblemInstance,
    ladder: FeasibilityLadder,
}

impl Solver {
    pub fn new(instance: ProblemInstance) -> Result<Self> {
        let ladder = lambda_ladder(&instance)?;
        Ok(Solver { instance, ladder })
    }

    pub fn instance(&self) -> &ProblemInstance {
        &self.instance
    }

    pub fn ladder(&self) -> &FeasibilityLadder {
        &self.ladder
    }

    /// Smallest multiplier evaluated at stage `k`.
    pub fn lower_bound(&self, k: usize) -> f64 {
        self.ladder.stage_lower_bound(k).max(LAMBDA_FLOOR)
    }

    /// Minimizes `value_l` over `[lower_bound(k), inf)` by bisecting the
    /// nondecreasing derivative.
    pub fn solve_multiplier(&self, x: &DVector<f64>, budget: f64, k: usize) -> Result<MultiplierSolution> {
        let inst = &self.instance;
        check_state(x, inst)?;
        if k >= inst.horizon() {
            return Err(SidarError::Unsupported(format!("stage {k} is not before the horizon {}", inst.horizon())));
        }
        if !(budget >= 0.0) {
            return Err(SidarError::invalid("budget", "remaining budget must be nonnegative"));
        }
        let lower = self.lower_bound(k);
        let eval = |lam: f64| -> Result<(RiccatiSweep, DVector<f64>)> {
            let sweep = tail_sweep(lam, k, inst)?;
            let z = &sweep.jtilde * x;
            Ok((sweep, z))
        };
        let finish = |sweep: RiccatiSweep, z: DVector<f64>, at_lower: bool, exhausted: bool, d_lower: f64| {
            let z_norm_sq = z.norm_squared();
            MultiplierSolution {
                stage: k,
                budget,
                lambda_star: sweep.lambda,
                lower_bound: lower,
                at_lower_bound: at_lower,
                budget_exhausted: exhausted,
                value: value_from_sweep(x, budget, k, &sweep, inst),
                z_star: z,
                z_norm_sq,
                derivative_at_lower: d_lower,
                sweep,
            }
        };

        let (sweep_lo, z_lo) = eval(lower)?;
        let d_lower = derivative(budget, z_lo.norm_squared(), inst);
        if d_lower >= -LOWER_BOUND_SLACK {
            return Ok(finish(sweep_lo, z_lo, true, false, d_lower));
        }
        if budget == 0.0 {
            let (sweep, z) = eval(EXHAUSTED_SCALE * (1.0 + lower))?;
            return Ok(finish(sweep, z, false, true, d_lower));
        }

        let mut lo = lower;
        let mut hi = lower + 1.0;
        loop {
            let (_, z) = eval(hi)?;
            if derivative(budget, z.norm_squared(), inst) > 0.0 {
                break;
            }
            lo = hi;
            hi *= 2.0;
            if hi > BRACKET_LIMIT {
                return Err(SidarError::BracketFailure { what: "optimal multiplier", limit: BRACKET_LIMIT });
            }
        }
        while hi - lo > BISECTION_TOL * (1.0 + hi) {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let (_, z) = eval(mid)?;
            if derivative(budget, z.norm_squared(), inst) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let (sweep, z) = eval(0.5 * (lo + hi))?;
        Ok(finish(sweep, z, false, false, d_lower))
    }

    /// `V*(x)` at stage 0 with the full budget.
    pub fn optimal_value(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.solve_multiplier(x, self.instance.alpha(), 0)?.value)
    }
}

/// One-shot form of [`Solver::solve_multiplier`]; recomputes the ladder.
pub fn solve_multiplier(x: &DVector<f64>, budget: f64, k: usize, inst: &ProblemInstance) -> Result<MultiplierSolution> {
    Solver::new(inst.clone())?.solve_multiplier(x, budget, k)
}

/// One-shot form of [`Solver::optimal_value`].
pub fn optimal_value(x: &DVector<f64>, inst: &ProblemInstance) -> Result<f64> {
    Solver::new(inst.clone())?.optimal_value(x)
}
