//! Stagewise feasibility lower bounds on the multiplier.

use crate::error::{Result, SidarError};
use crate::linalg::sym_norm;
use crate::model::ProblemInstance;
use crate::riccati::tail_sweep;

/// Smallest multiplier used when a sweep is evaluated. Zero lower bounds
/// (zero terminal weight) would otherwise make the stage block singular.
pub const LAMBDA_FLOOR: f64 = 1e-12;

const BRACKET_LIMIT: f64 = 1e12;
const BISECTION_TOL: f64 = 1e-12;

/// The ladder `lambda_N, ..., lambda_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityLadder {
    /// `lambdas[i] = lambda_{N-i}`; the last entry is `lambda_1`.
    pub lambdas: Vec<f64>,
    /// `|lambda - m(lambda)|` where the fixed-point branch fired, else 0.
    pub residuals: Vec<f64>,
}

impl FeasibilityLadder {
    pub fn horizon(&self) -> usize {
        self.lambdas.len()
    }

    /// `lambda_j` for `1 <= j <= N`.
    pub fn lambda(&self, j: usize) -> f64 {
        assert!((1..=self.horizon()).contains(&j), "ladder index {j} out of range");
        self.lambdas[self.horizon() - j]
    }

    /// Lower end of the multiplier interval at stage `k`, i.e. `lambda_{k+1}`.
    pub fn stage_lower_bound(&self, k: usize) -> f64 {
        self.lambda(k + 1)
    }

    pub fn lambda_1(&self) -> f64 {
        self.lambda(1)
    }
}

/// `||G' Pi_{k+1}(lambda) G||`.
pub fn m_value(lambda: f64, k: usize, inst: &ProblemInstance) -> Result<f64> {
    let g = inst.g();
    if k + 1 >= inst.horizon() {
        return Ok(sym_norm(&(g.transpose() * inst.pf() * g)));
    }
    let sweep = tail_sweep(lambda.max(LAMBDA_FLOOR), k + 1, inst)?;
    Ok(sym_norm(&(g.transpose() * sweep.pi(k + 1) * g)))
}

/// Backward construction of the ladder: keep the previous bound when it is
/// already feasible one stage earlier, otherwise bisect `lambda - m(lambda)`.
pub fn lambda_ladder(inst: &ProblemInstance) -> Result<FeasibilityLadder> {
    let horizon = inst.horizon();
    let g = inst.g();
    let mut lambdas = vec![sym_norm(&(g.transpose() * inst.pf() * g))];
    let mut residuals = vec![0.0];
    // stage k's lower bound is the last pushed value
    for k in (0..horizon - 1).rev() {
        let prev = *lambdas.last().unwrap();
        let m_prev = m_value(prev, k, inst)?;
        if m_prev <= prev {
            lambdas.push(prev);
            residuals.push(0.0);
            continue;
        }
        let gap = |lam: f64| -> Result<f64> { Ok(lam - m_value(lam, k, inst)?) };
        let mut lo = prev;
        let mut hi = prev + 1.0;
        while gap(hi)? <= 0.0 {
            lo = hi;
            hi *= 2.0;
            if hi > BRACKET_LIMIT {
                return Err(SidarError::BracketFailure { what: "feasibility bound", limit: BRACKET_LIMIT });
            }
        }
        while hi - lo > BISECTION_TOL * (1.0 + hi) {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if gap(mid)? > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lambdas.push(hi);
        residuals.push(gap(hi)?.abs());
    }
    Ok(FeasibilityLadder { lambdas, residuals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{random_instance, damped_scalar, RandomDims};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn damped_scalar_ladder() {
        let inst = damped_scalar();
        let ladder = lambda_ladder(&inst).unwrap();
        assert_eq!(ladder.lambda(10), 0.0);
        assert_eq!(m_value(3.0, 9, &inst).unwrap(), 0.0);
        // Pi_9 = Q regardless of lambda, so lambda_9 is the fixed point 0.25
        assert!((ladder.lambda(9) - 0.25).abs() < 1e-11);
        for w in ladder.lambdas.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn scalar_m_value_is_the_weight() {
        let inst = ProblemInstance::scalar(1.0, 1.0, 1.0, 1.0, 1.0, 0.8, 1, 1.0).unwrap();
        assert_eq!(m_value(5.0, 0, &inst).unwrap(), 0.8);
    }

    #[test]
    fn blue_case_repeats_the_previous_bound() {
        // Pi_1 = Q + A^2 Pi_2 - ... stays below lambda_2 when A is small
        let inst = ProblemInstance::scalar(0.1, 1.0, 1.0, 0.01, 1.0, 0.5, 2, 1.0).unwrap();
        let ladder = lambda_ladder(&inst).unwrap();
        assert_eq!(ladder.lambda(2), 0.5);
        assert!(m_value(0.5, 0, &inst).unwrap() <= 0.5);
        assert_eq!(ladder.lambda(1), 0.5);
        assert_eq!(ladder.residuals, vec![0.0, 0.0]);
    }

    #[test]
    fn orange_case_lands_on_the_fixed_point() {
        let inst = ProblemInstance::scalar(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2, 1.0).unwrap();
        let ladder = lambda_ladder(&inst).unwrap();
        let l1 = ladder.lambda(1);
        assert!(l1 > ladder.lambda(2));
        assert!((l1 - (1.0 + 0.5f64.sqrt())).abs() < 1e-10);
        assert!((l1 - m_value(l1, 0, &inst).unwrap()).abs() <= 1e-10 * (1.0 + l1));
        assert!(l1 >= m_value(l1, 0, &inst).unwrap());
    }

    #[test]
    fn random_ladders_certify_feasibility() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..15 {
            let dims = RandomDims::sample(&mut rng, 3, 2, 2, 5);
            let inst = random_instance(&mut rng, dims);
            let ladder = lambda_ladder(&inst).unwrap();
            for (i, r) in ladder.residuals.iter().enumerate() {
                assert!(*r <= 1e-10 * (1.0 + ladder.lambdas[i]));
            }
            for w in ladder.lambdas.windows(2) {
                assert!(w[1] >= w[0]);
            }
            for k in 0..inst.horizon() {
                let lo = ladder.stage_lower_bound(k).max(1e-3);
                let mut prev_gap = f64::NEG_INFINITY;
                for i in 0..20 {
                    let lam = lo * (1.0 + 9.0 * i as f64 / 19.0);
                    let m = m_value(lam, k, &inst).unwrap();
                    assert!(lam >= m - 1e-9, "stage {k} lambda {lam} m {m}");
                    let gap = lam - m;
                    assert!(gap > prev_gap);
                    prev_gap = gap;
                }
                assert!(m_value(2.0 * lo, k, &inst).unwrap() <= m_value(lo, k, &inst).unwrap() + 1e-10);
            }
        }
    }
}
