//! Property suites behind `sidar check`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::feasibility::m_value;
use crate::linalg::{min_eigenvalue, sym_norm};
use crate::model::{validate_instance, ProblemInstance};
use crate::multiplier::{dl_dlambda, stationary_disturbance, value_l, Solver};
use crate::oracle::{build_stacked, stacked_stationary, stacked_value};
use crate::regions::{region_quadratic, Region};
use crate::riccati::{backward_sweep, riccati_step, riccati_step_bb, riccati_step_closed_loop};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

/// Outcome of one suite on one instance.
#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub status: Status,
    /// Worst residual seen, with the tolerance it was held to.
    pub residual: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Default)]
struct Tally {
    ratio: f64,
    residual: f64,
    tolerance: f64,
    detail: String,
}

impl Tally {
    fn record(&mut self, residual: f64, tolerance: f64, detail: impl FnOnce() -> String) {
        let ratio = if residual.is_nan() { f64::INFINITY } else { residual / tolerance };
        if ratio > self.ratio || (self.tolerance == 0.0 && ratio >= self.ratio) {
            self.ratio = ratio;
            self.residual = residual;
            self.tolerance = tolerance;
            self.detail = detail();
        }
    }

    fn finish(self, name: &'static str) -> SuiteResult {
        SuiteResult {
            name,
            status: if self.ratio <= 1.0 { Status::Pass } else { Status::Fail },
            residual: self.residual,
            tolerance: self.tolerance,
            detail: self.detail,
        }
    }
}

fn skip(name: &'static str, why: &str) -> SuiteResult {
    SuiteResult {
        name,
        status: Status::Skip,
        residual: 0.0,
        tolerance: 0.0,
        detail: why.to_string(),
    }
}

fn failed(name: &'static str, err: impl std::fmt::Display) -> SuiteResult {
    SuiteResult {
        name,
        status: Status::Fail,
        residual: f64::NAN,
        tolerance: 0.0,
        detail: format!("solver error: {err}"),
    }
}

fn random_state(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// Multipliers at and above the first-stage lower bound.
fn lambda_samples(lower: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| lower * (1.0 + 0.5 * i as f64) + 0.1 * i as f64).collect()
}

fn stacked_suites(inst: &ProblemInstance, solver: &Solver, rng: &mut ChaCha8Rng) -> Result<[SuiteResult; 2]> {
    if build_stacked(inst).is_err() {
        return Ok([skip("stacked-value", "instance too large for the lifted oracle"), skip("stacked-stationary", "instance too large for the lifted oracle")]);
    }
    let mut value = Tally::default();
    let mut stationary = Tally::default();
    for _ in 0..3 {
        let x0 = random_state(rng, inst.state_dim(), 2.0);
        for lam in lambda_samples(solver.lower_bound(0), 5) {
            let rec = value_l(&x0, inst.alpha(), 0, lam, inst)?;
            let lifted = stacked_value(lam, &x0, inst)?;
            value.record((rec - lifted).abs() / rec.abs().max(1.0), 1e-9, || format!("lambda {lam}"));
            let z_rec = stationary_disturbance(&x0, 0, lam, inst)?;
            let (_, z) = stacked_stationary(lam, &x0, inst)?;
            stationary.record((&z - z_rec).norm() / (1.0 + z.norm()), 1e-9, || format!("lambda {lam}"));
        }
    }
    Ok([value.finish("stacked-value"), stationary.finish("stacked-stationary")])
}

fn forms_suite(inst: &ProblemInstance, solver: &Solver) -> Result<SuiteResult> {
    let rep = validate_instance(inst);
    let strict = rep.a4_strict_pd.0 && rep.a4_strict_pd.1;
    let mut tally = Tally::default();
    let lower = solver.lower_bound(0);
    for lam in lambda_samples(lower, 5).into_iter().skip(1) {
        let sweep = backward_sweep(lam, inst)?;
        for k in 0..inst.horizon() {
            let next = sweep.pi(k + 1);
            let direct = riccati_step(next, lam, inst)?;
            let scale = 1.0 + direct.norm();
            let cl = riccati_step_closed_loop(next, lam, inst)?;
            tally.record((&direct - cl).norm() / scale, 1e-9, || format!("closed-loop form, stage {k}, lambda {lam}"));
            if strict {
                let bb = riccati_step_bb(next, lam, inst)?;
                tally.record((&direct - bb).norm() / scale, 1e-9, || format!("inverse form, stage {k}, lambda {lam}"));
            }
        }
    }
    Ok(tally.finish("riccati-forms"))
}

fn derivative_suite(inst: &ProblemInstance, solver: &Solver, rng: &mut ChaCha8Rng) -> Result<SuiteResult> {
    let mut tally = Tally::default();
    for _ in 0..5 {
        let k = rng.random_range(0..inst.horizon());
        let x = random_state(rng, inst.state_dim(), 3.0);
        let lam = solver.lower_bound(k) * rng.random_range(1.05..3.0) + 0.05;
        let budget = inst.alpha();
        let h = 1e-6 * (1.0 + lam);
        let fd = (value_l(&x, budget, k, lam + h, inst)? - value_l(&x, budget, k, lam - h, inst)?) / (2.0 * h);
        let an = dl_dlambda(&x, budget, k, lam, inst)?;
        tally.record((an - fd).abs() / (1.0 + an.abs()), 1e-5, || format!("stage {k}, lambda {lam}"));
    }
    Ok(tally.finish("derivative-fd"))
}

fn monotonicity_suites(inst: &ProblemInstance, solver: &Solver) -> Result<[SuiteResult; 2]> {
    let mut in_lambda = Tally::default();
    let mut in_stage = Tally::default();
    let mut dominated = true;
    let lams: Vec<f64> = (0..10).map(|i| solver.lower_bound(0) * (1.0 + 0.3 * i as f64) + 0.01 * i as f64).collect();
    let sweeps = lams.iter().map(|l| backward_sweep(*l, inst)).collect::<Result<Vec<_>>>()?;
    let horizon = inst.horizon();
    for (i, sw) in sweeps.iter().enumerate() {
        // decrease in k needs Pi_{N-1} >= Pf to start the induction
        let start = min_eigenvalue(&(sw.pi(horizon - 1) - inst.pf()));
        dominated &= start >= -1e-10 * (1.0 + sym_norm(sw.pi(horizon - 1)));
        for k in 0..horizon {
            let pk = sw.pi(k);
            let scale = 1e-10 * (1.0 + sym_norm(pk));
            if dominated {
                let gap = min_eigenvalue(&(pk - sw.pi(k + 1)));
                in_stage.record((-gap).max(0.0), scale, || format!("stage {k}, lambda {}", lams[i]));
            }
            if let Some(next) = sweeps.get(i + 1) {
                let gap = min_eigenvalue(&(pk - next.pi(k)));
                in_lambda.record((-gap).max(0.0), scale, || format!("stage {k}, lambda {} vs {}", lams[i], lams[i + 1]));
            }
        }
    }
    let stage = if dominated {
        in_stage.finish("monotone-in-stage")
    } else {
        skip("monotone-in-stage", "Pi_{N-1} does not dominate Pf, so no decrease in k is implied")
    };
    Ok([in_lambda.finish("monotone-in-lambda"), stage])
}

fn region_suite(inst: &ProblemInstance, solver: &Solver, rng: &mut ChaCha8Rng) -> Result<SuiteResult> {
    let budget = inst.alpha();
    let reg = region_quadratic(0, budget, solver)?;
    let mut tally = Tally::default();
    let mut disagreements = 0usize;
    for _ in 0..200 {
        let x = random_state(rng, inst.state_dim(), 4.0);
        let sol = solver.solve_multiplier(&x, budget, 0)?;
        let in_band = (reg.quadratic(&x) - budget).abs() <= 1e-6 * (1.0 + budget);
        if !in_band && (reg.classify(&x) == Region::Linear) != sol.at_lower_bound {
            disagreements += 1;
        }
    }
    tally.record(disagreements as f64, 0.5, || format!("{disagreements} of 200 states disagree"));
    let dir = random_state(rng, inst.state_dim(), 1.0);
    let t = reg.radius_along(&dir);
    if t.is_finite() {
        let z = stationary_disturbance(&(&dir * t), 0, reg.lambda_lower, inst)?;
        tally.record((z.norm_squared() - budget).abs() / budget, 1e-8, || "surface state".to_string());
    }
    Ok(tally.finish("region-agreement"))
}

fn ladder_suite(inst: &ProblemInstance, solver: &Solver) -> Result<SuiteResult> {
    let ladder = solver.ladder();
    let mut tally = Tally::default();
    for (i, r) in ladder.residuals.iter().enumerate() {
        tally.record(*r, 1e-10 * (1.0 + ladder.lambdas[i]), || format!("fixed point residual at entry {i}"));
    }
    for k in 0..inst.horizon() {
        let lo = ladder.stage_lower_bound(k).max(1e-6);
        for i in 0..20 {
            let lam = lo * (1.0 + 9.0 * i as f64 / 19.0);
            let excess = m_value(lam, k, inst)? - lam;
            tally.record(excess.max(0.0), 1e-9, || format!("stage {k}, lambda {lam}"));
        }
    }
    Ok(tally.finish("ladder-certificate"))
}

/// Runs every suite on one instance. Returns `None` when the instance
/// fails the range-inclusion precondition.
pub fn run_suites(inst: &ProblemInstance, seed: u64) -> Option<Vec<SuiteResult>> {
    if !validate_instance(inst).a2_range_inclusion {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let solver = match Solver::new(inst.clone()) {
        Ok(s) => s,
        Err(e) => return Some(vec![failed("ladder", e)]),
    };
    let mut out = Vec::new();
    match stacked_suites(inst, &solver, &mut rng) {
        Ok(rs) => out.extend(rs),
        Err(e) => out.push(failed("stacked-value", e)),
    }
    out.push(forms_suite(inst, &solver).unwrap_or_else(|e| failed("riccati-forms", e)));
    out.push(derivative_suite(inst, &solver, &mut rng).unwrap_or_else(|e| failed("derivative-fd", e)));
    match monotonicity_suites(inst, &solver) {
        Ok(rs) => out.extend(rs),
        Err(e) => out.push(failed("monotone-in-lambda", e)),
    }
    out.push(region_suite(inst, &solver, &mut rng).unwrap_or_else(|e| failed("region-agreement", e)));
    out.push(ladder_suite(inst, &solver).unwrap_or_else(|e| failed("ladder-certificate", e)));
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::damped_scalar;

    #[test]
    fn damped_scalar_passes() {
        let results = run_suites(&damped_scalar(), 0).unwrap();
        for r in &results {
            assert_ne!(r.status, Status::Fail, "{} {} {}", r.name, r.residual, r.detail);
        }
    }

    #[test]
    fn range_violation_is_gated() {
        let inst = ProblemInstance::scalar(0.5, 0.0, 1.0, 1.0, 1.0, 1.0, 2, 1.0).unwrap();
        assert!(run_suites(&inst, 0).is_none());
    }

    #[test]
    fn tally_keeps_the_worst_ratio() {
        let mut t = Tally::default();
        t.record(1e-12, 1e-10, || "a".into());
        t.record(5e-10, 1e-9, || "b".into());
        t.record(1e-11, 1e-9, || "c".into());
        let r = t.finish("x");
        assert_eq!((r.status, r.detail.as_str()), (Status::Pass, "b"));
        let mut t = Tally::default();
        t.record(2.0, 1.0, || "bad".into());
        assert_eq!(t.finish("x").status, Status::Fail);
    }
}
