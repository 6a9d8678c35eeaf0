//! The multiplier-parametrized backward Riccati recursion and its
//! equivalent closed-loop and inverse forms.

use nalgebra::DMatrix;

use crate::error::{Result, SidarError};
use crate::linalg::{sym_condition, sym_pinv, symmetrize, SymmetricIndefinite};
use crate::model::ProblemInstance;

/// Condition number above which a stage block matrix counts as singular.
pub const SINGULAR_CONDITION: f64 = 1e14;

const BLOCK_PINV_TOL: f64 = 1e-12;

/// Everything computed at one stage of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct StageData {
    /// `Pi_{k+1}(lambda)`
    pub pi_next: DMatrix<f64>,
    /// `M_k(lambda)`, symmetric `(m+q)x(m+q)`
    pub m: DMatrix<f64>,
    /// `d_k(lambda) = [B' Pi A; G' Pi A]`
    pub d: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub j: DMatrix<f64>,
    /// `A + B K + G J`
    pub f: DMatrix<f64>,
}

/// A backward sweep at fixed `lambda`, covering stages `first_stage..N`.
///
/// A full sweep has `first_stage == 0`. Tail sweeps start later and are
/// what the stage-`k` multiplier problems need. All per-stage accessors
/// take the absolute stage index.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSweep {
    pub lambda: f64,
    pub first_stage: usize,
    /// `Pi_j` for `j = first_stage..=N`, ascending; the last entry is `Pf`.
    pub pis: Vec<DMatrix<f64>>,
    /// Stage data for `j = first_stage..N`, ascending.
    pub stages: Vec<StageData>,
    /// Rows `J_j Phi_{j,first_stage}` stacked for `j = first_stage..N`.
    pub jtilde: DMatrix<f64>,
    /// `Phi_{j,first_stage}` for `j = first_stage..=N`.
    pub phis: Vec<DMatrix<f64>>,
}

impl RiccatiSweep {
    pub fn horizon(&self) -> usize {
        self.first_stage + self.stages.len()
    }

    pub fn pi(&self, k: usize) -> &DMatrix<f64> {
        &self.pis[k - self.first_stage]
    }

    pub fn stage(&self, k: usize) -> &StageData {
        &self.stages[k - self.first_stage]
    }

    pub fn phi(&self, k: usize) -> &DMatrix<f64> {
        &self.phis[k - self.first_stage]
    }
}

/// Result of [`check_invertibility`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Invertibility {
    pub condition: f64,
    pub singular: bool,
}

pub fn check_invertibility(m: &DMatrix<f64>) -> Invertibility {
    let condition = sym_condition(m);
    Invertibility {
        condition,
        singular: !(condition <= SINGULAR_CONDITION),
    }
}

/// `[[B'PB + R, B'PG], [G'PB, G'PG - lambda I]]`, symmetrized.
pub fn block_matrix(pi_next: &DMatrix<f64>, lambda: f64, inst: &ProblemInstance) -> DMatrix<f64> {
    let (m, q) = (inst.input_dim(), inst.disturbance_dim());
    let bg = input_stack(inst);
    let mut out = bg.transpose() * pi_next * &bg;
    let mut top = out.view_mut((0, 0), (m, m));
    top += inst.r();
    for i in 0..q {
        out[(m + i, m + i)] -= lambda;
    }
    symmetrize(&out)
}

/// `[B G]`
fn input_stack(inst: &ProblemInstance) -> DMatrix<f64> {
    let (n, m, q) = (inst.state_dim(), inst.input_dim(), inst.disturbance_dim());
    let mut bg = DMatrix::zeros(n, m + q);
    bg.view_mut((0, 0), (n, m)).copy_from(inst.b());
    bg.view_mut((0, m), (n, q)).copy_from(inst.g());
    bg
}

fn rhs(pi_next: &DMatrix<f64>, inst: &ProblemInstance) -> DMatrix<f64> {
    input_stack(inst).transpose() * pi_next * inst.a()
}

/// One stage of the recursion: block matrix, gains and `Pi_k`.
pub fn stage(pi_next: &DMatrix<f64>, lambda: f64, inst: &ProblemInstance) -> Result<(StageData, DMatrix<f64>)> {
    let m_blk = block_matrix(pi_next, lambda, inst);
    let inv = check_invertibility(&m_blk);
    if inv.singular {
        return Err(SidarError::SingularBlock { stage: None, condition: inv.condition });
    }
    let fact = SymmetricIndefinite::new(&m_blk).map_err(|_| SidarError::SingularBlock {
        stage: None,
        condition: f64::INFINITY,
    })?;
    let d = rhs(pi_next, inst);
    let kj = -fact.solve(&d);
    let mdim = inst.input_dim();
    let k = kj.rows(0, mdim).into_owned();
    let j = kj.rows(mdim, inst.disturbance_dim()).into_owned();
    let f = inst.a() + inst.b() * &k + inst.g() * &j;
    let pi = symmetrize(&(inst.q() + inst.a().transpose() * pi_next * inst.a() + d.transpose() * &kj));
    Ok((
        StageData {
            pi_next: pi_next.clone(),
            m: m_blk,
            d,
            k,
            j,
            f,
        },
        pi,
    ))
}

/// `Pi_k(lambda)` from `Pi_{k+1}(lambda)`.
pub fn riccati_step(pi_next: &DMatrix<f64>, lambda: f64, inst: &ProblemInstance) -> Result<DMatrix<f64>> {
    stage(pi_next, lambda, inst).map(|(_, pi)| pi)
}

/// Control gain, disturbance gain and closed-loop map at one stage.
pub fn gains(
    pi_next: &DMatrix<f64>,
    lambda: f64,
    inst: &ProblemInstance,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let (s, _) = stage(pi_next, lambda, inst)?;
    Ok((s.k, s.j, s.f))
}

/// Sweep covering stages `first..N`. `first == N` yields the trivial sweep
/// holding only `Pf`.
pub fn tail_sweep(lambda: f64, first: usize, inst: &ProblemInstance) -> Result<RiccatiSweep> {
    let horizon = inst.horizon();
    assert!(first <= horizon, "stage {first} beyond horizon {horizon}");
    let len = horizon - first;
    let mut pis = vec![inst.pf().clone(); len + 1];
    let mut stages = Vec::with_capacity(len);
    for k in (first..horizon).rev() {
        let (data, pi) = stage(&pis[k + 1 - first], lambda, inst).map_err(|e| e.at_stage(k))?;
        pis[k - first] = pi;
        stages.push(data);
    }
    stages.reverse();

    let (n, q) = (inst.state_dim(), inst.disturbance_dim());
    let mut phis = Vec::with_capacity(len + 1);
    phis.push(DMatrix::identity(n, n));
    let mut jtilde = DMatrix::zeros(len * q, n);
    for (i, s) in stages.iter().enumerate() {
        jtilde.view_mut((i * q, 0), (q, n)).copy_from(&(&s.j * &phis[i]));
        let next = &s.f * &phis[i];
        phis.push(next);
    }
    Ok(RiccatiSweep {
        lambda,
        first_stage: first,
        pis,
        stages,
        jtilde,
        phis,
    })
}

pub fn backward_sweep(lambda: f64, inst: &ProblemInstance) -> Result<RiccatiSweep> {
    tail_sweep(lambda, 0, inst)
}

/// `Pi_k` written around the closed-loop matrix `A + B K`:
/// `Qbar + Abar' P Abar - Abar' P G (G'PG - lambda I)^+ G' P Abar`, with
/// `Qbar = Q + K'RK`. The gain comes from an LU solve of the stage system,
/// independent of the factorization used by [`riccati_step`].
pub fn riccati_step_closed_loop(pi_next: &DMatrix<f64>, lambda: f64, inst: &ProblemInstance) -> Result<DMatrix<f64>> {
    let m_blk = block_matrix(pi_next, lambda, inst);
    let inv = check_invertibility(&m_blk);
    if inv.singular {
        return Err(SidarError::SingularBlock { stage: None, condition: inv.condition });
    }
    let kj = m_blk
        .lu()
        .solve(&(-rhs(pi_next, inst)))
        .ok_or(SidarError::SingularBlock { stage: None, condition: inv.condition })?;
    let k = kj.rows(0, inst.input_dim());
    let a_bar = inst.a() + inst.b() * k;
    let q_bar = inst.q() + k.transpose() * inst.r() * k;
    let g = inst.g();
    let q = inst.disturbance_dim();
    let d22 = g.transpose() * pi_next * g - DMatrix::identity(q, q) * lambda;
    let cross = g.transpose() * pi_next * &a_bar;
    let pi = q_bar + a_bar.transpose() * pi_next * &a_bar - cross.transpose() * sym_pinv(&d22, BLOCK_PINV_TOL) * &cross;
    Ok(symmetrize(&pi))
}

/// `Q + A' P (I + (B R^-1 B' - G G'/lambda) P)^-1 A`.
pub fn riccati_step_bb(pi_next: &DMatrix<f64>, lambda: f64, inst: &ProblemInstance) -> Result<DMatrix<f64>> {
    if !(lambda > 0.0) {
        return Err(SidarError::Unsupported("the inverse form needs lambda > 0".into()));
    }
    let n = inst.state_dim();
    let r_inv = inst
        .r()
        .clone()
        .cholesky()
        .ok_or_else(|| SidarError::invalid("R", "not positive definite"))?
        .inverse();
    let g = inst.g();
    let coupling = inst.b() * r_inv * inst.b().transpose() - g * g.transpose() / lambda;
    let inner = DMatrix::identity(n, n) + coupling * pi_next;
    let sv = inner.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= SINGULAR_CONDITION) {
        return Err(SidarError::SingularInner { condition });
    }
    let solved = inner.lu().solve(inst.a()).ok_or(SidarError::SingularInner { condition })?;
    Ok(symmetrize(&(inst.q() + inst.a().transpose() * pi_next * solved)))
}
