//! Problem instances, the JSON instance format and the standing-assumption
//! checks.

use std::fmt;
use std::path::Path;

use nalgebra::{Complex, DMatrix};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SidarError};
use crate::linalg::{max_eigenvalue, min_eigenvalue, pinv, psd_sqrt, sym_norm, symmetrize};

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;
const PD_TOL: f64 = 1e-12;
const HAUTUS_TOL: f64 = 1e-10;
const RANGE_TOL: f64 = 1e-10;
const COUPLING_TOL: f64 = 1e-12;

/// The full game definition: `x+ = A x + B u + G w`, stage cost
/// `(x'Qx + u'Ru)/2`, terminal cost `x'Pf x/2`, horizon `N` and total
/// disturbance budget `alpha`.
///
/// Instances are immutable once built; the constructor enforces shapes,
/// symmetry, definiteness of the weights, `N >= 1` and `alpha > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    g: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    pf: DMatrix<f64>,
    horizon: usize,
    alpha: f64,
}

impl ProblemInstance {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        g: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        pf: DMatrix<f64>,
        horizon: usize,
        alpha: f64,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(SidarError::dimension("A", format!("expected a nonempty square matrix, got {}x{}", a.nrows(), a.ncols())));
        }
        let m = b.ncols();
        if b.nrows() != n || m == 0 {
            return Err(SidarError::dimension("B", format!("expected {n}xm with m >= 1, got {}x{}", b.nrows(), b.ncols())));
        }
        if g.nrows() != n || g.ncols() == 0 {
            return Err(SidarError::dimension("G", format!("expected {n}xq with q >= 1, got {}x{}", g.nrows(), g.ncols())));
        }
        for (name, mat, size) in [("Q", &q, n), ("R", &r, m), ("Pf", &pf, n)] {
            if mat.nrows() != size || mat.ncols() != size {
                return Err(SidarError::dimension(name, format!("expected {size}x{size}, got {}x{}", mat.nrows(), mat.ncols())));
            }
        }
        for (name, mat) in [("A", &a), ("B", &b), ("G", &g), ("Q", &q), ("R", &r), ("Pf", &pf)] {
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(SidarError::invalid(name, "entries must be finite"));
            }
        }
        if horizon == 0 {
            return Err(SidarError::invalid("N", "horizon must be at least 1"));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(SidarError::invalid("alpha", "budget must be positive and finite"));
        }
        for (name, mat) in [("Q", &q), ("R", &r), ("Pf", &pf)] {
            let asym = (mat - mat.transpose()).norm();
            if asym > SYMMETRY_TOL * (1.0 + mat.norm()) {
                return Err(SidarError::invalid(name, format!("not symmetric (asymmetry {asym:.3e})")));
            }
        }
        let (q, r, pf) = (symmetrize(&q), symmetrize(&r), symmetrize(&pf));
        for (name, mat) in [("Q", &q), ("Pf", &pf)] {
            let lo = min_eigenvalue(mat);
            if lo < -PSD_TOL * sym_norm(mat).max(1.0) {
                return Err(SidarError::invalid(name, format!("not positive semidefinite (min eigenvalue {lo:.3e})")));
            }
        }
        let r_lo = min_eigenvalue(&r);
        if r_lo <= PD_TOL * sym_norm(&r) {
            return Err(SidarError::invalid("R", format!("not positive definite (min eigenvalue {r_lo:.3e})")));
        }
        Ok(ProblemInstance { a, b, g, q, r, pf, horizon, alpha })
    }

    /// Scalar instance, convenient for the one-dimensional examples.
    #[allow(clippy::too_many_arguments)]
    pub fn scalar(a: f64, b: f64, g: f64, q: f64, r: f64, pf: f64, horizon: usize, alpha: f64) -> Result<Self> {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        Self::new(s(a), s(b), s(g), s(q), s(r), s(pf), horizon, alpha)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    pub fn pf(&self) -> &DMatrix<f64> {
        &self.pf
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    pub fn disturbance_dim(&self) -> usize {
        self.g.ncols()
    }

    /// Copy of the instance with a different budget.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(SidarError::invalid("alpha", "budget must be positive and finite"));
        }
        Ok(ProblemInstance { alpha, ..self.clone() })
    }

    /// Same instance with a different terminal weight.
    pub fn with_terminal_weight(&self, pf: DMatrix<f64>) -> Result<Self> {
        Self::new(
            self.a.clone(),
            self.b.clone(),
            self.g.clone(),
            self.q.clone(),
            self.r.clone(),
            pf,
            self.horizon,
            self.alpha,
        )
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text).map_err(|e| SidarError::Parse(e.to_string()))?;
        file.into_instance()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SidarError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&InstanceFile::from(self)).expect("instance serializes")
    }
}

/// On-disk layout of an instance: row-major nested arrays for every matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    #[serde(rename = "Pf")]
    pub pf: Vec<Vec<f64>>,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub alpha: f64,
}

fn matrix_from_rows(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
    if nrows == 0 || ncols == 0 {
        return Err(SidarError::dimension(field, "matrix must have at least one row and one column"));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(SidarError::dimension(field, format!("row {i} has {} entries, expected {ncols}", rows[i].len())));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl InstanceFile {
    pub fn into_instance(self) -> Result<ProblemInstance> {
        ProblemInstance::new(
            matrix_from_rows("A", &self.a)?,
            matrix_from_rows("B", &self.b)?,
            matrix_from_rows("G", &self.g)?,
            matrix_from_rows("Q", &self.q)?,
            matrix_from_rows("R", &self.r)?,
            matrix_from_rows("Pf", &self.pf)?,
            self.horizon,
            self.alpha,
        )
    }
}

impl From<&ProblemInstance> for InstanceFile {
    fn from(inst: &ProblemInstance) -> Self {
        InstanceFile {
            a: rows_of(&inst.a),
            b: rows_of(&inst.b),
            g: rows_of(&inst.g),
            q: rows_of(&inst.q),
            r: rows_of(&inst.r),
            pf: rows_of(&inst.pf),
            horizon: inst.horizon,
            alpha: inst.alpha,
        }
    }
}

/// Outcome of the four standing-assumption tests. Violations are reported,
/// never fatal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    /// (stabilizable (A,B), detectable (A,Q))
    pub a1_stabilizable_detectable: (bool, bool),
    /// range(G) within range(B)
    pub a2_range_inclusion: bool,
    /// G' Pf G nonzero
    pub a3_terminal_coupling: bool,
    /// (Q strictly positive definite, Pf strictly positive definite)
    pub a4_strict_pd: (bool, bool),
    pub diagnostics: Vec<String>,
}

impl ValidationReport {
    pub fn all_hold(&self) -> bool {
        self.a1_stabilizable_detectable.0
            && self.a1_stabilizable_detectable.1
            && self.a2_range_inclusion
            && self.a3_terminal_coupling
            && self.a4_strict_pd.0
            && self.a4_strict_pd.1
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flag = |b: bool| if b { "pass" } else { "FAIL" };
        writeln!(f, "A1 stabilizable (A,B):   {}", flag(self.a1_stabilizable_detectable.0))?;
        writeln!(f, "A1 detectable (A,Q):     {}", flag(self.a1_stabilizable_detectable.1))?;
        writeln!(f, "A2 range(G) in range(B): {}", flag(self.a2_range_inclusion))?;
        writeln!(f, "A3 G'PfG != 0:           {}", flag(self.a3_terminal_coupling))?;
        writeln!(f, "A4 Q > 0:                {}", flag(self.a4_strict_pd.0))?;
        writeln!(f, "A4 Pf > 0:               {}", flag(self.a4_strict_pd.1))?;
        for d in &self.diagnostics {
            writeln!(f, "warning: {d}")?;
        }
        Ok(())
    }
}

fn complex(m: &DMatrix<f64>) -> DMatrix<Complex<f64>> {
    m.map(|v| Complex::new(v, 0.0))
}

fn complex_rank(m: &DMatrix<Complex<f64>>, rel_tol: f64) -> usize {
    let sv = m.clone().singular_values();
    let smax = sv.iter().fold(0.0_f64, |a, s| a.max(*s));
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > rel_tol * smax).count()
}

/// Unstable or marginal eigenvalues of `A` (|mu| >= 1).
fn unstable_modes(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    a.complex_eigenvalues()
        .iter()
        .copied()
        .filter(|mu| mu.norm() >= 1.0 - 1e-12)
        .collect()
}

/// Runs the deterministic tests for the four standing assumptions.
pub fn validate_instance(inst: &ProblemInstance) -> ValidationReport {
    let n = inst.state_dim();
    let mut diagnostics = Vec::new();
    let modes = unstable_modes(&inst.a);
    let a_c = complex(&inst.a);
    let ident = DMatrix::<Complex<f64>>::identity(n, n);

    let mut stabilizable = true;
    let mut detectable = true;
    let b_c = complex(&inst.b);
    let q_root = complex(&psd_sqrt(&inst.q));
    for mu in &modes {
        let shifted = &ident * *mu - &a_c;
        let mut ctrl = DMatrix::<Complex<f64>>::zeros(n, n + inst.input_dim());
        ctrl.view_mut((0, 0), (n, n)).copy_from(&shifted);
        ctrl.view_mut((0, n), (n, inst.input_dim())).copy_from(&b_c);
        if complex_rank(&ctrl, HAUTUS_TOL) < n {
            stabilizable = false;
            diagnostics.push(format!("(A,B) not stabilizable: mode {mu:.6} fails the Hautus test"));
        }
        let mut obs = DMatrix::<Complex<f64>>::zeros(2 * n, n);
        obs.view_mut((0, 0), (n, n)).copy_from(&shifted);
        obs.view_mut((n, 0), (n, n)).copy_from(&q_root);
        if complex_rank(&obs, HAUTUS_TOL) < n {
            detectable = false;
            diagnostics.push(format!("(A,Q) not detectable: mode {mu:.6} fails the Hautus test"));
        }
    }

    let b_pinv = pinv(&inst.b, RANGE_TOL);
    let residual = (&inst.g - &inst.b * (&b_pinv * &inst.g)).norm();
    let range_ok = residual <= RANGE_TOL * (1.0 + inst.g.norm());
    if !range_ok {
        diagnostics.push(format!("range(G) is not contained in range(B): residual {residual:.3e}"));
    }

    let coupling = sym_norm(&(inst.g.transpose() * &inst.pf * &inst.g));
    let coupling_ok = coupling > COUPLING_TOL * (1.0 + sym_norm(&inst.pf));
    if !coupling_ok {
        diagnostics.push("G' Pf G vanishes: the terminal weight does not see the disturbance".to_string());
    }

    let strict = |m: &DMatrix<f64>| min_eigenvalue(m) > PD_TOL * max_eigenvalue(m).max(f64::MIN_POSITIVE);
    let q_pd = strict(&inst.q);
    let pf_pd = strict(&inst.pf);
    if !q_pd {
        diagnostics.push("Q is not strictly positive definite".to_string());
    }
    if !pf_pd {
        diagnostics.push("Pf is not strictly positive definite".to_string());
    }

    ValidationReport {
        a1_stabilizable_detectable: (stabilizable, detectable),
        a2_range_inclusion: range_ok,
        a3_terminal_coupling: coupling_ok,
        a4_strict_pd: (q_pd, pf_pd),
        diagnostics,
    }
}

/// Shape of a randomly generated instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomDims {
    pub n: usize,
    pub m: usize,
    pub q: usize,
    pub horizon: usize,
}

impl RandomDims {
    /// Draws `n <= max_n`, `m <= min(n, max_m)`, `q <= max_q`, `N <= max_horizon`.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, max_n: usize, max_m: usize, max_q: usize, max_horizon: usize) -> Self {
        let n = rng.random_range(1..=max_n);
        let m = rng.random_range(1..=max_m.min(n));
        let q = rng.random_range(1..=max_q);
        let horizon = rng.random_range(1..=max_horizon);
        RandomDims { n, m, q, horizon }
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn random_psd<R: Rng + ?Sized>(rng: &mut R, n: usize, shift: f64) -> DMatrix<f64> {
    let w = gaussian(rng, n, n);
    symmetrize(&(&w * w.transpose() / n as f64 + DMatrix::identity(n, n) * shift))
}

fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().fold(0.0_f64, |acc, mu| acc.max(mu.norm()))
}

/// Random instance satisfying the range-inclusion and coupling assumptions:
/// `A` rescaled to spectral radius in `[0.3, 1.2]`, `B` Gaussian (full
/// column rank almost surely), `G = B T`, and `Q`, `Pf`, `R` random
/// Gram matrices shifted by a multiple of the identity.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R, dims: RandomDims) -> ProblemInstance {
    let RandomDims { n, m, q, horizon } = dims;
    assert!(m <= n, "B must have full column rank");
    loop {
        let mut a = gaussian(rng, n, n);
        let rho = spectral_radius(&a);
        if rho < 1e-6 {
            continue;
        }
        let target = rng.random_range(0.3..=1.2);
        a *= target / rho;
        let b = gaussian(rng, n, m);
        if crate::linalg::rank(&b, 1e-6) < m {
            continue;
        }
        let t = gaussian(rng, m, q);
        let g = &b * t * rng.random_range(0.3..=1.0);
        let qw = random_psd(rng, n, 0.1);
        let pf = random_psd(rng, n, 0.1);
        let r = random_psd(rng, m, 0.2);
        let alpha = rng.random_range(0.5..=2.0);
        if let Ok(inst) = ProblemInstance::new(a, b, g, qw, r, pf, horizon, alpha) {
            if sym_norm(&(inst.g.transpose() * &inst.pf * &inst.g)) > 1e-6 {
                return inst;
            }
        }
    }
}

#[cfg(test)]
pub(crate) use tests::damped_scalar;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn damped_scalar() -> ProblemInstance {
        ProblemInstance::scalar(0.5, 1.0, 1.0, 0.25, 1.0, 0.0, 10, 1.0).unwrap()
    }

    #[test]
    fn damped_scalar_flags() {
        let rep = validate_instance(&damped_scalar());
        assert_eq!(rep.a1_stabilizable_detectable, (true, true));
        assert!(rep.a2_range_inclusion);
        assert!(!rep.a3_terminal_coupling);
        assert_eq!(rep.a4_strict_pd, (true, false));
        assert!(!rep.diagnostics.is_empty());
    }

    #[test]
    fn unstable_mode_without_input_is_not_stabilizable() {
        let inst = ProblemInstance::scalar(2.0, 0.0, 0.0, 1.0, 1.0, 1.0, 3, 1.0).unwrap();
        let rep = validate_instance(&inst);
        assert!(!rep.a1_stabilizable_detectable.0);
        assert!(rep.a1_stabilizable_detectable.1);
    }

    #[test]
    fn zero_input_column_breaks_range_inclusion() {
        let inst = ProblemInstance::scalar(0.5, 0.0, 1.0, 1.0, 1.0, 1.0, 3, 1.0).unwrap();
        assert!(!validate_instance(&inst).a2_range_inclusion);
    }

    #[test]
    fn undetectable_unstable_mode() {
        let inst = ProblemInstance::new(
            DMatrix::from_row_slice(2, 2, &[1.5, 0.0, 0.0, 0.5]),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            2,
            1.0,
        )
        .unwrap();
        let rep = validate_instance(&inst);
        assert_eq!(rep.a1_stabilizable_detectable, (true, false));
        assert_eq!(rep.a4_strict_pd, (false, true));
    }

    #[test]
    fn mismatched_b_rows_name_the_field() {
        let err = ProblemInstance::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(3, 1),
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
            DMatrix::identity(2, 2),
            2,
            1.0,
        )
        .unwrap_err();
        assert!(matches!(err, SidarError::Dimension { ref field, .. } if field == "B"));
    }

    #[test]
    fn rejects_bad_weights_and_scalars() {
        assert!(matches!(
            ProblemInstance::scalar(1.0, 1.0, 1.0, -1.0, 1.0, 0.0, 2, 1.0),
            Err(SidarError::InvalidInstance { ref field, .. }) if field == "Q"
        ));
        assert!(matches!(
            ProblemInstance::scalar(1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 2, 1.0),
            Err(SidarError::InvalidInstance { ref field, .. }) if field == "R"
        ));
        assert!(ProblemInstance::scalar(1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0, 1.0).is_err());
        assert!(ProblemInstance::scalar(1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 2, 0.0).is_err());
    }

    #[test]
    fn json_round_trip_and_errors() {
        let inst = damped_scalar();
        let back = ProblemInstance::from_json_str(&inst.to_json_string()).unwrap();
        assert_eq!(back, inst);
        assert!(matches!(ProblemInstance::from_json_str("{not json"), Err(SidarError::Parse(_))));
        let ragged = r#"{"A":[[1,0],[0]],"B":[[1],[0]],"G":[[1],[0]],"Q":[[1,0],[0,1]],"R":[[1]],"Pf":[[1,0],[0,1]],"N":2,"alpha":1}"#;
        assert!(matches!(ProblemInstance::from_json_str(ragged), Err(SidarError::Dimension { ref field, .. }) if field == "A"));
        let missing = r#"{"A":[[1]],"B":[[1]],"G":[[1]],"Q":[[1]],"R":[[1]],"N":2,"alpha":1}"#;
        assert!(matches!(ProblemInstance::from_json_str(missing), Err(SidarError::Parse(_))));
    }

    #[test]
    fn validation_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let dims = RandomDims::sample(&mut rng, 3, 2, 2, 4);
            let inst = random_instance(&mut rng, dims);
            assert_eq!(validate_instance(&inst), validate_instance(&inst));
        }
    }

    #[test]
    fn random_instances_meet_the_assumptions_they_are_built_for() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let dims = RandomDims::sample(&mut rng, 3, 2, 2, 5);
            let inst = random_instance(&mut rng, dims);
            let rep = validate_instance(&inst);
            assert!(rep.a2_range_inclusion, "{rep}");
            assert!(rep.a3_terminal_coupling);
            assert_eq!(rep.a4_strict_pd, (true, true));
            let rho = spectral_radius(inst.a());
            assert!((0.3 - 1e-9..=1.2 + 1e-9).contains(&rho));
        }
    }

    proptest::proptest! {
        #[test]
        fn range_test_ignores_column_scaling(sb in 0.01f64..100.0, sg in 0.01f64..100.0, flip in proptest::bool::ANY) {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let inst = random_instance(&mut rng, RandomDims { n: 3, m: 2, q: 2, horizon: 2 });
            let sign = if flip { -1.0 } else { 1.0 };
            let mut b = inst.b().clone();
            b.column_mut(0).scale_mut(sb * sign);
            let mut g = inst.g().clone();
            g.column_mut(1).scale_mut(sg);
            let scaled = ProblemInstance::new(inst.a().clone(), b, g, inst.q().clone(), inst.r().clone(), inst.pf().clone(), 2, 1.0).unwrap();
            proptest::prop_assert!(validate_instance(&scaled).a2_range_inclusion);
            // breaking the inclusion stays detected under scaling
            let mut g_bad = DMatrix::zeros(3, 1);
            let bbt = nalgebra::SymmetricEigen::new(inst.b() * inst.b().transpose());
            let null = bbt.eigenvectors.column(bbt.eigenvalues.imin()).into_owned();
            g_bad.set_column(0, &(null * sg));
            let broken = ProblemInstance::new(inst.a().clone(), inst.b().clone() * sb, g_bad, inst.q().clone(), inst.r().clone(), inst.pf().clone(), 2, 1.0).unwrap();
            proptest::prop_assert!(!validate_instance(&broken).a2_range_inclusion);
        }
    }
}

