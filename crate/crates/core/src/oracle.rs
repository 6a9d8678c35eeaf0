//! Verification paths that do not go through the backward recursion: the
//! horizon-lifted one-shot game and a brute-force discretized game for
//! scalar systems.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SidarError};
use crate::linalg::{sym_condition, symmetrize};
use crate::model::ProblemInstance;
use crate::riccati::SINGULAR_CONDITION;

/// Largest `N (m + q)` the stacked oracle accepts.
pub const STACKED_SIZE_CAP: usize = 64;

/// `x = cal_a x0 + cal_b u + cal_g w` with `x = [x_1; ...; x_N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedProblem {
    pub cal_a: DMatrix<f64>,
    pub cal_b: DMatrix<f64>,
    pub cal_g: DMatrix<f64>,
    /// `diag(Q, ..., Q, Pf)`
    pub cal_q: DMatrix<f64>,
    /// `diag(R, ..., R)`
    pub cal_r: DMatrix<f64>,
    q0: DMatrix<f64>,
    alpha: f64,
}

/// The lifted stationarity matrix at some multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedMultiplierMatrix {
    pub lambda: f64,
    pub m_big: DMatrix<f64>,
}

pub fn build_stacked(inst: &ProblemInstance) -> Result<StackedProblem> {
    let (n, m, q, horizon) = (inst.state_dim(), inst.input_dim(), inst.disturbance_dim(), inst.horizon());
    if horizon * (m + q) > STACKED_SIZE_CAP {
        return Err(SidarError::Unsupported(format!(
            "stacked oracle limited to N(m+q) <= {STACKED_SIZE_CAP}, got {}",
            horizon * (m + q)
        )));
    }
    let mut powers = vec![DMatrix::identity(n, n)];
    for i in 1..=horizon {
        let next = inst.a() * &powers[i - 1];
        powers.push(next);
    }
    let mut cal_a = DMatrix::zeros(horizon * n, n);
    let mut cal_b = DMatrix::zeros(horizon * n, horizon * m);
    let mut cal_g = DMatrix::zeros(horizon * n, horizon * q);
    let mut cal_q = DMatrix::zeros(horizon * n, horizon * n);
    let mut cal_r = DMatrix::zeros(horizon * m, horizon * m);
    for i in 0..horizon {
        cal_a.view_mut((i * n, 0), (n, n)).copy_from(&powers[i + 1]);
        for j in 0..=i {
            cal_b.view_mut((i * n, j * m), (n, m)).copy_from(&(&powers[i - j] * inst.b()));
            cal_g.view_mut((i * n, j * q), (n, q)).copy_from(&(&powers[i - j] * inst.g()));
        }
        let w = if i + 1 == horizon { inst.pf() } else { inst.q() };
        cal_q.view_mut((i * n, i * n), (n, n)).copy_from(w);
        cal_r.view_mut((i * m, i * m), (m, m)).copy_from(inst.r());
    }
    Ok(StackedProblem {
        cal_a,
        cal_b,
        cal_g,
        cal_q,
        cal_r,
        q0: inst.q().clone(),
        alpha: inst.alpha(),
    })
}

impl StackedProblem {
    fn horizon_inputs(&self) -> (usize, usize) {
        (self.cal_b.ncols(), self.cal_g.ncols())
    }

    /// `[cal_b cal_g]`
    fn inputs(&self) -> DMatrix<f64> {
        let (mb, mg) = self.horizon_inputs();
        let rows = self.cal_b.nrows();
        let mut out = DMatrix::zeros(rows, mb + mg);
        out.view_mut((0, 0), (rows, mb)).copy_from(&self.cal_b);
        out.view_mut((0, mb), (rows, mg)).copy_from(&self.cal_g);
        out
    }

    /// `[[B'QB + R, B'QG], [G'QB, G'QG - lambda I]]` in lifted form.
    pub fn multiplier_matrix(&self, lambda: f64) -> StackedMultiplierMatrix {
        let (mb, mg) = self.horizon_inputs();
        let bg = self.inputs();
        let mut m_big = bg.transpose() * &self.cal_q * &bg;
        let mut top = m_big.view_mut((0, 0), (mb, mb));
        top += &self.cal_r;
        let mut m_big = symmetrize(&m_big);
        for i in 0..mg {
            m_big[(mb + i, mb + i)] -= lambda;
        }
        StackedMultiplierMatrix { lambda, m_big }
    }

    fn solve(&self, lambda: f64, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mm = self.multiplier_matrix(lambda).m_big;
        let condition = sym_condition(&mm);
        if !(condition <= SINGULAR_CONDITION) {
            return Err(SidarError::SingularBlock { stage: None, condition });
        }
        mm.lu().solve(rhs).ok_or(SidarError::SingularBlock { stage: None, condition })
    }

    /// `Psi(lambda) = Q + A'QA - A'Q[B G] M(lambda)^-1 [B G]'QA` (lifted).
    pub fn psi(&self, lambda: f64) -> Result<DMatrix<f64>> {
        let cross = self.inputs().transpose() * &self.cal_q * &self.cal_a;
        let sol = self.solve(lambda, &cross)?;
        let aqa = self.cal_a.transpose() * &self.cal_q * &self.cal_a;
        Ok(symmetrize(&(&self.q0 + aqa - cross.transpose() * sol)))
    }
}

/// `x0' Psi(lambda) x0 / (2 alpha) + lambda / 2`.
pub fn stacked_value(lambda: f64, x0: &DVector<f64>, inst: &ProblemInstance) -> Result<f64> {
    let sp = build_stacked(inst)?;
    let psi = sp.psi(lambda)?;
    Ok((x0.transpose() * psi * x0)[(0, 0)] / (2.0 * sp.alpha) + lambda / 2.0)
}

/// Solves the lifted stationarity system for the stacked control and
/// disturbance sequences.
pub fn stacked_stationary(lambda: f64, x0: &DVector<f64>, inst: &ProblemInstance) -> Result<(DVector<f64>, DVector<f64>)> {
    let sp = build_stacked(inst)?;
    let rhs = -(sp.inputs().transpose() * &sp.cal_q * &sp.cal_a * x0);
    let sol = sp.solve(lambda, &DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice()))?;
    let (mb, mg) = sp.horizon_inputs();
    let u = DVector::from_iterator(mb, sol.column(0).rows(0, mb).iter().copied());
    let z = DVector::from_iterator(mg, sol.column(0).rows(mb, mg).iter().copied());
    Ok((u, z))
}

/// Uniform grid `lo, lo + step, ..., hi`.
fn grid(range: (f64, f64), step: f64) -> Result<Vec<f64>> {
    let (lo, hi) = range;
    if !(step > 0.0 && hi > lo) {
        return Err(SidarError::Unsupported("grid needs step > 0 and hi > lo".into()));
    }
    let count = ((hi - lo) / step).round() as usize + 1;
    Ok((0..count).map(|i| lo + step * i as f64).collect())
}

const GRID_SLACK: f64 = 1e-12;

struct Game<'a> {
    a: f64,
    b: f64,
    g: f64,
    q: f64,
    r: f64,
    pf: f64,
    horizon: usize,
    us: &'a [f64],
    ws: &'a [f64],
    step: f64,
}

impl Game<'_> {
    /// Disturbance grid points with `w^2 <= budget`, up to the rounding in
    /// the grid points themselves.
    fn admissible(&self, budget: f64) -> &[f64] {
        let r = (budget.max(0.0) + GRID_SLACK * (1.0 + budget)).sqrt();
        let lo = self.ws.partition_point(|w| *w < -r);
        let hi = self.ws.partition_point(|w| *w <= r);
        &self.ws[lo..hi]
    }

    /// Disturbances available at stage `k`. At the last stage only points
    /// within one grid step of the budget boundary are kept.
    fn moves(&self, k: usize, budget: f64) -> Result<[&[f64]; 2]> {
        let all = self.admissible(budget);
        let floor = budget.max(0.0).sqrt() - self.step * (1.0 + GRID_SLACK);
        let parts = if k + 1 < self.horizon || floor < 0.0 {
            [all, &[][..]]
        } else {
            let neg = all.partition_point(|w| *w < -floor);
            let pos = all.partition_point(|w| *w <= floor);
            [&all[..neg], &all[pos..]]
        };
        if parts.iter().all(|p| p.is_empty()) {
            return Err(SidarError::EmptyGrid { stage: k });
        }
        Ok(parts)
    }

    /// Max over `moves` of the continuation value. Stops as soon as the
    /// running max reaches `cutoff`; the returned value is then only a
    /// lower bound. `None` when every continuation spends no disturbance.
    #[allow(clippy::too_many_arguments)]
    fn max_stage(
        &self,
        k: usize,
        x: f64,
        u: f64,
        cost: f64,
        spent: f64,
        budget: f64,
        moves: &[&[f64]],
        cutoff: f64,
    ) -> Result<Option<f64>> {
        let cost = cost + 0.5 * (self.q * x * x + self.r * u * u);
        let drift = self.a * x + self.b * u;
        let last = k + 1 == self.horizon;
        let mut best: Option<f64> = None;
        for &w in moves.iter().flat_map(|p| p.iter()) {
            let x_next = drift + self.g * w;
            let spent_next = spent + w * w;
            let v = if last {
                if spent_next == 0.0 {
                    None
                } else {
                    Some((cost + 0.5 * self.pf * x_next * x_next) / spent_next)
                }
            } else {
                self.min_stage(k + 1, x_next, cost, spent_next, budget - w * w, false)?
            };
            if let Some(v) = v {
                let m = best.map_or(v, |b| b.max(v));
                best = Some(m);
                if m >= cutoff {
                    break;
                }
            }
        }
        Ok(best)
    }

    fn min_stage(&self, k: usize, x: f64, cost: f64, spent: f64, budget: f64, exhaustive: bool) -> Result<Option<f64>> {
        let moves = self.moves(k, budget)?;
        let eval = |i: usize| self.max_stage(k, x, self.us[i], cost, spent, budget, &moves, f64::INFINITY);
        if exhaustive {
            let mut best: Option<f64> = None;
            for i in 0..self.us.len() {
                if let Some(v) = eval(i)? {
                    best = Some(best.map_or(v, |b| b.min(v)));
                }
            }
            return Ok(best);
        }
        Ok(convex_argmin(self.us.len(), eval)?.1)
    }
}

/// Minimizes a discretely convex function over `0..len` by bisecting its
/// forward differences. `None` values count as `+inf`.
fn convex_argmin(len: usize, f: impl Fn(usize) -> Result<Option<f64>>) -> Result<(usize, Option<f64>)> {
    let key = |v: Option<f64>| v.unwrap_or(f64::INFINITY);
    let (mut lo, mut hi) = (0, len - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if key(f(mid + 1)?) < key(f(mid)?) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    Ok((lo, f(lo)?))
}

/// Brute-force value of the scalar game: nested min over control grids and
/// max over disturbance grids, with the objective the cost divided by the
/// spent disturbance energy and the last disturbance forced to use up the
/// budget to within one grid step.
///
/// Inner control levels are convex in the control and are searched by
/// bisection; the first control is scanned exhaustively, pruning any
/// candidate whose running max already exceeds the incumbent.
pub fn grid_game_value(
    x0: f64,
    inst: &ProblemInstance,
    u_range: (f64, f64),
    w_range: (f64, f64),
    step: f64,
) -> Result<f64> {
    if inst.state_dim() != 1 || inst.input_dim() != 1 || inst.disturbance_dim() != 1 {
        return Err(SidarError::Unsupported("the grid game needs a scalar instance".into()));
    }
    if inst.horizon() > 3 {
        return Err(SidarError::Unsupported("the grid game supports N <= 3".into()));
    }
    let us = grid(u_range, step)?;
    let ws = grid(w_range, step)?;
    let s = |m: &DMatrix<f64>| m[(0, 0)];
    let game = Game {
        a: s(inst.a()),
        b: s(inst.b()),
        g: s(inst.g()),
        q: s(inst.q()),
        r: s(inst.r()),
        pf: s(inst.pf()),
        horizon: inst.horizon(),
        us: &us,
        ws: &ws,
        step,
    };
    let alpha = inst.alpha();
    // large disturbances first: they tend to set the max, so pruning bites early
    let mut first: Vec<f64> = game.moves(0, alpha)?.iter().flat_map(|p| p.iter().copied()).collect();
    first.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
    let moves = [&first[..]];
    let eval = |i: usize, cutoff: f64| game.max_stage(0, x0, us[i], 0.0, 0.0, alpha, &moves, cutoff);

    let (start, start_val) = convex_argmin(us.len(), |i| eval(i, f64::INFINITY))?;
    let (mut arg, mut best) = (start, start_val.unwrap_or(f64::INFINITY));
    for i in 0..us.len() {
        if i == start {
            continue;
        }
        if let Some(v) = eval(i, best)? {
            if v < best {
                best = v;
                arg = i;
            }
        }
    }
    if !best.is_finite() {
        return Err(SidarError::EmptyGrid { stage: 0 });
    }
    if (arg == 0 || arg + 1 == us.len()) && us.len() > 2 {
        return Err(SidarError::Unsupported(format!("minimizing control {} sits on the grid edge", us[arg])));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multiplier::{stationary_disturbance, value_l, Solver};
    use crate::model::{random_instance, RandomDims};
    use crate::riccati::{gains, riccati_step};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(horizon: usize) -> ProblemInstance {
        ProblemInstance::scalar(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, horizon, 1.0).unwrap()
    }

    #[test]
    fn one_stage_blocks_are_the_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inst = random_instance(&mut rng, RandomDims { n: 2, m: 1, q: 2, horizon: 1 });
        let sp = build_stacked(&inst).unwrap();
        assert_eq!(&sp.cal_a, inst.a());
        assert_eq!(&sp.cal_b, inst.b());
        assert_eq!(&sp.cal_g, inst.g());
        assert_eq!(&sp.cal_q, inst.pf());
        assert_eq!(&sp.cal_r, inst.r());
    }

    #[test]
    fn two_stage_blocks() {
        let inst = ProblemInstance::scalar(2.0, 3.0, 5.0, 1.0, 1.0, 7.0, 2, 1.0).unwrap();
        let sp = build_stacked(&inst).unwrap();
        assert_eq!(sp.cal_a, DMatrix::from_row_slice(2, 1, &[2.0, 4.0]));
        assert_eq!(sp.cal_b, DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 6.0, 3.0]));
        assert_eq!(sp.cal_g, DMatrix::from_row_slice(2, 2, &[5.0, 0.0, 10.0, 5.0]));
        assert_eq!(sp.cal_q, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 7.0]));
    }

    #[test]
    fn lifted_propagation_matches_simulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inst = random_instance(&mut rng, RandomDims { n: 3, m: 2, q: 1, horizon: 4 });
        let sp = build_stacked(&inst).unwrap();
        let x0 = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let u = DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
        let w = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let lifted = &sp.cal_a * &x0 + &sp.cal_b * &u + &sp.cal_g * &w;
        let mut x = x0;
        for k in 0..4 {
            x = inst.a() * &x + inst.b() * u.rows(2 * k, 2) + inst.g() * w.rows(k, 1);
            assert!((lifted.rows(3 * k, 3) - &x).norm() < 1e-12 * (1.0 + x.norm()));
        }
    }

    #[test]
    fn multiplier_matrix_is_affine_in_lambda() {
        let sp = build_stacked(&unit(3)).unwrap();
        let m0 = sp.multiplier_matrix(0.0).m_big;
        let lam = 2.75;
        let mut shifted = m0.clone();
        for i in 3..6 {
            shifted[(i, i)] -= lam;
        }
        assert_eq!(sp.multiplier_matrix(lam).m_big, shifted);
    }

    #[test]
    fn size_cap() {
        let inst = ProblemInstance::scalar(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 33, 1.0).unwrap();
        assert!(matches!(build_stacked(&inst), Err(SidarError::Unsupported(_))));
    }

    #[test]
    fn single_stage_agrees_with_the_step() {
        let inst = unit(1);
        let x0 = DVector::from_element(1, 0.8);
        let pi = riccati_step(inst.pf(), 2.0, &inst).unwrap();
        let expected = 0.64 * pi[(0, 0)] / 2.0 + 1.0;
        assert!((stacked_value(2.0, &x0, &inst).unwrap() - expected).abs() < 1e-14);
        assert_eq!(stacked_value(2.0, &DVector::zeros(1), &inst).unwrap(), 1.0);
        let (u, z) = stacked_stationary(2.0, &x0, &inst).unwrap();
        let (k, j, _) = gains(inst.pf(), 2.0, &inst).unwrap();
        assert!((u[0] - k[(0, 0)] * 0.8).abs() < 1e-14);
        assert!((z[0] - j[(0, 0)] * 0.8).abs() < 1e-14);
        assert_eq!(stacked_stationary(2.0, &DVector::zeros(1), &inst).unwrap(), (DVector::zeros(1), DVector::zeros(1)));
    }

    #[test]
    fn lifted_and_recursive_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let dims = RandomDims::sample(&mut rng, 3, 2, 2, 5);
            let inst = random_instance(&mut rng, dims);
            let solver = Solver::new(inst.clone()).unwrap();
            let l1 = solver.lower_bound(0);
            let x0 = DVector::from_fn(inst.state_dim(), |_, _| rng.random_range(-2.0..2.0));
            for i in 0..5 {
                let lam = l1 * (1.0 + 0.5 * i as f64) + 0.1 * i as f64;
                let rec = value_l(&x0, inst.alpha(), 0, lam, &inst).unwrap();
                let lifted = stacked_value(lam, &x0, &inst).unwrap();
                assert!((rec - lifted).abs() <= 1e-9 * rec.abs().max(1.0), "{rec} vs {lifted}");
                let z_rec = stationary_disturbance(&x0, 0, lam, &inst).unwrap();
                let (_, z) = stacked_stationary(lam, &x0, &inst).unwrap();
                assert!((&z - z_rec).norm() <= 1e-9 * (1.0 + z.norm()));
            }
        }
    }

    #[test]
    fn scalar_two_stage_value_is_rational_in_lambda() {
        let inst = ProblemInstance::scalar(0.9, 1.2, 0.7, 0.5, 2.0, 1.5, 2, 1.0).unwrap();
        let l1 = Solver::new(inst.clone()).unwrap().lower_bound(0);
        let x0 = DVector::from_element(1, 1.3);
        // quadratic part = P(lam)/Q(lam), deg P = 2, Q monic of degree 2
        let lams: Vec<f64> = (0..12).map(|i| l1 + 0.1 + 0.4 * i as f64).collect();
        let rows: Vec<(f64, f64)> =
            lams.iter().map(|&l| (l, stacked_value(l, &x0, &inst).unwrap() - l / 2.0)).collect();
        let a = DMatrix::from_fn(rows.len(), 5, |i, j| {
            let (l, v) = rows[i];
            match j {
                0 => 1.0,
                1 => l,
                2 => l * l,
                3 => -v,
                _ => -v * l,
            }
        });
        let rhs = DVector::from_iterator(rows.len(), rows.iter().map(|(l, v)| v * l * l));
        let coef = a.clone().svd(true, true).solve(&rhs, 1e-14).unwrap();
        let resid = (&a * coef - &rhs).norm() / (1.0 + rhs.norm());
        assert!(resid < 1e-8, "{resid}");
    }

    #[test]
    fn grid_game_edges() {
        let inst = unit(2);
        assert!(grid_game_value(0.0, &unit(4), (-1.0, 1.0), (-1.0, 1.0), 0.1).is_err());
        // u range too narrow: the minimizer is pinned to the edge
        assert!(matches!(
            grid_game_value(1.0, &inst, (0.0, 0.1), (-3.0, 3.0), 0.05),
            Err(SidarError::Unsupported(_))
        ));
        // disturbance grid that cannot reach the budget boundary
        assert!(matches!(
            grid_game_value(1.0, &inst, (-3.0, 3.0), (5.0, 6.0), 0.5),
            Err(SidarError::EmptyGrid { .. })
        ));
    }

    #[test]
    fn grid_game_converges_to_the_analytic_value() {
        let inst = unit(2);
        let solver = Solver::new(inst.clone()).unwrap();
        for x0 in [0.0, 0.5] {
            let exact = solver.optimal_value(&DVector::from_element(1, x0)).unwrap();
            let coarse = grid_game_value(x0, &inst, (-3.0, 3.0), (-3.0, 3.0), 0.02).unwrap();
            let fine = grid_game_value(x0, &inst, (-3.0, 3.0), (-3.0, 3.0), 0.01).unwrap();
            assert!((fine - exact).abs() <= (coarse - exact).abs() + 1e-12);
            assert!((fine - exact).abs() < 5e-3, "x0 {x0}: {fine} vs {exact}");
        }
    }

    #[test]
    fn convex_search_matches_exhaustive_inner_minimum() {
        let us = grid((-3.0, 3.0), 0.05).unwrap();
        let ws = grid((-3.0, 3.0), 0.05).unwrap();
        let game = Game { a: 1.0, b: 1.0, g: 1.0, q: 1.0, r: 1.0, pf: 1.0, horizon: 2, us: &us, ws: &ws, step: 0.05 };
        for (x, w0) in [(0.7, 0.3), (-1.2, 0.0), (2.0, -0.9)] {
            let fast = game.min_stage(1, x, 0.4, w0 * w0, 1.0 - w0 * w0, false).unwrap();
            let slow = game.min_stage(1, x, 0.4, w0 * w0, 1.0 - w0 * w0, true).unwrap();
            assert_eq!(fast, slow);
        }
    }
}
