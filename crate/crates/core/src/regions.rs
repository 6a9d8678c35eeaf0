//! The ellipsoid of states on which the optimal feedback is linear.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::linalg::symmetrize;
use crate::multiplier::Solver;
use crate::policy::fmt_num;
use crate::riccati::tail_sweep;

/// Relative slack that puts boundary states into the linear region.
pub const BOUNDARY_SLACK: f64 = 1e-9;

/// `{x : x' E x <= budget}` at stage `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionEllipsoid {
    pub e: DMatrix<f64>,
    pub budget: f64,
    pub stage: usize,
    pub lambda_lower: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Linear,
    Nonlinear,
}

impl RegionEllipsoid {
    pub fn quadratic(&self, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.e * x)[(0, 0)]
    }

    pub fn classify(&self, x: &DVector<f64>) -> Region {
        if self.quadratic(x) <= self.budget * (1.0 + BOUNDARY_SLACK) {
            Region::Linear
        } else {
            Region::Nonlinear
        }
    }

    /// Same ellipsoid shape with a different right-hand side.
    pub fn with_budget(&self, budget: f64) -> Self {
        RegionEllipsoid { budget, ..self.clone() }
    }

    /// Largest `t` with `t * dir` in the region; infinite along null
    /// directions of `E`.
    pub fn radius_along(&self, dir: &DVector<f64>) -> f64 {
        let qd = self.quadratic(dir);
        if qd <= 0.0 {
            f64::INFINITY
        } else {
            (self.budget / qd).sqrt()
        }
    }
}

/// `E = Jtilde_k' Jtilde_k` evaluated at the stage-`k` lower bound.
pub fn region_quadratic(k: usize, budget: f64, solver: &Solver) -> Result<RegionEllipsoid> {
    let lambda_lower = solver.lower_bound(k);
    let sweep = tail_sweep(lambda_lower, k, solver.instance())?;
    let e = symmetrize(&(sweep.jtilde.transpose() * &sweep.jtilde));
    Ok(RegionEllipsoid {
        e,
        budget,
        stage: k,
        lambda_lower,
    })
}

pub fn classify(x: &DVector<f64>, budget: f64, k: usize, solver: &Solver) -> Result<Region> {
    Ok(region_quadratic(k, budget, solver)?.classify(x))
}

/// The state-independent gain `K_k(lambda_{k+1})` used inside the region.
pub fn linear_gain(k: usize, solver: &Solver) -> Result<DMatrix<f64>> {
    let sweep = tail_sweep(solver.lower_bound(k), k, solver.instance())?;
    Ok(sweep.stage(k).k.clone())
}

/// Writes `x...,in_XL` rows for the given points.
pub fn write_region_csv<W: Write>(out: &mut W, region: &RegionEllipsoid, points: &[DVector<f64>]) -> io::Result<()> {
    let n = region.e.nrows();
    let mut header: Vec<String> = if n == 1 { vec!["x".into()] } else { (1..=n).map(|i| format!("x{i}")).collect() };
    header.push("in_XL".into());
    writeln!(out, "{}", header.join(","))?;
    for p in points {
        let mut cols: Vec<String> = p.iter().map(|v| fmt_num(*v)).collect();
        cols.push((region.classify(p) == Region::Linear).to_string());
        writeln!(out, "{}", cols.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;
    use crate::model::{random_instance, damped_scalar, ProblemInstance, RandomDims};
    use crate::multiplier::stationary_disturbance;
    use crate::policy::control;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn last_stage_without_terminal_weight_is_all_linear() {
        let solver = Solver::new(damped_scalar()).unwrap();
        let reg = region_quadratic(9, 1.0, &solver).unwrap();
        assert_eq!(reg.e, DMatrix::zeros(1, 1));
        assert_eq!(reg.classify(&v(&[1e6])), Region::Linear);
        assert_eq!(linear_gain(9, &solver).unwrap(), DMatrix::zeros(1, 1));
    }

    #[test]
    fn scalar_interval_matches_the_solver_flag() {
        let solver = Solver::new(damped_scalar()).unwrap();
        let reg = region_quadratic(0, 1.0, &solver).unwrap();
        assert!(reg.e[(0, 0)] > 0.0);
        let r = reg.radius_along(&v(&[1.0]));
        let flag = |x: f64| solver.solve_multiplier(&v(&[x]), 1.0, 0).unwrap().at_lower_bound;
        let (mut lo, mut hi) = (0.0, 4.0 * r);
        assert!(flag(lo) && !flag(hi));
        while hi - lo > 1e-9 {
            let mid = 0.5 * (lo + hi);
            if flag(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((lo - r).abs() <= 1e-6, "{lo} vs {r}");
        assert_eq!(reg.classify(&v(&[-0.999 * r])), Region::Linear);
        assert_eq!(reg.classify(&v(&[-1.001 * r])), Region::Nonlinear);
    }

    #[test]
    fn homogeneity_and_nesting() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let inst = random_instance(&mut rng, RandomDims { n: 2, m: 1, q: 1, horizon: 3 });
        let solver = Solver::new(inst).unwrap();
        let reg = region_quadratic(0, 1.0, &solver).unwrap();
        assert!(min_eigenvalue(&reg.e) >= -1e-10);
        assert_eq!(reg.e, reg.e.transpose());
        for _ in 0..200 {
            let x = DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
            let c: f64 = rng.random_range(0.1..5.0);
            let inside = reg.classify(&x) == Region::Linear;
            assert_eq!(inside, reg.with_budget(c * c).classify(&(&x * c)) == Region::Linear);
            if inside {
                assert_eq!(reg.with_budget(2.0).classify(&x), Region::Linear);
            }
        }
    }

    #[test]
    fn geometry_agrees_with_the_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..5 {
            let dims = RandomDims::sample(&mut rng, 3, 2, 2, 4);
            let inst = random_instance(&mut rng, dims);
            let solver = Solver::new(inst.clone()).unwrap();
            let budget = inst.alpha();
            let reg = region_quadratic(0, budget, &solver).unwrap();
            let gain = linear_gain(0, &solver).unwrap();
            for _ in 0..100 {
                let x = DVector::from_fn(inst.state_dim(), |_, _| rng.random_range(-4.0..4.0));
                let sol = solver.solve_multiplier(&x, budget, 0).unwrap();
                let band = (reg.quadratic(&x) - budget).abs() <= 1e-6 * (1.0 + budget);
                if !band {
                    assert_eq!(reg.classify(&x) == Region::Linear, sol.at_lower_bound);
                }
                if sol.at_lower_bound {
                    let ctl = control(&x, budget, 0, &solver).unwrap();
                    assert_eq!(ctl.u, &gain * &x);
                }
            }
            // surface states sit exactly on the stationarity boundary
            let dir = DVector::from_fn(inst.state_dim(), |_, _| rng.random_range(-1.0..1.0));
            let t = reg.radius_along(&dir);
            if t.is_finite() {
                let x = &dir * t;
                let z = stationary_disturbance(&x, 0, reg.lambda_lower, &inst).unwrap();
                assert!((z.norm_squared() - budget).abs() <= 1e-8 * budget);
            }
        }
    }

    #[test]
    fn points_twice_outside_are_nonlinear() {
        let inst = ProblemInstance::scalar(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2, 1.0).unwrap();
        let solver = Solver::new(inst).unwrap();
        let reg = region_quadratic(0, 1.0, &solver).unwrap();
        let x = v(&[reg.radius_along(&v(&[1.0])) * 2f64.sqrt()]);
        assert!((reg.quadratic(&x) - 2.0).abs() < 1e-12);
        assert_eq!(reg.classify(&x), Region::Nonlinear);
        let sol = solver.solve_multiplier(&x, 1.0, 0).unwrap();
        assert!(sol.lambda_star > sol.lower_bound);
    }

    #[test]
    fn region_csv() {
        let solver = Solver::new(damped_scalar()).unwrap();
        let reg = region_quadratic(0, 1.0, &solver).unwrap();
        let mut buf = Vec::new();
        write_region_csv(&mut buf, &reg, &[v(&[0.0]), v(&[100.0])]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("x,in_XL"));
        assert!(text.lines().nth(1).unwrap().ends_with("true"));
        assert!(text.lines().nth(2).unwrap().ends_with("false"));
    }
}
