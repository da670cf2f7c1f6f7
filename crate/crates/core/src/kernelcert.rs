//! Constructive positive-definiteness certificates.
//!
//! A symmetric matrix `S` with positive entries whose rows and columns are
//! monotone in the sense of
//!
//! * **P1** `S[i-1][j] >= S[i][j]` for `j < i`,
//! * **P2** `S[i][j-1] <  S[i][j]` for `1 <= j <= i` (0-based: `0 < j <= i`),
//! * **P3** `S[i-1][j-1] - S[i][j-1] <= S[i-1][j] - S[i][j]` for `0 < j < i`,
//!
//! is positive definite, and its Cholesky factor `L` has strictly positive
//! entries (**Q1**) that do not increase down each column (**Q2**).
//! [`monotone_cholesky`] builds that factor row by row (forward substitution
//! for the off-diagonal row, then the pivot) and records the Q1/Q2 outcome.
//!
//! On the kernel side, a symmetric `κ(x, y) > 0` with `∂ₓκ <= 0`, `∂ᵧκ > 0`
//! and `∂ₓᵧκ <= 0` for `x > y` produces such matrices on every sorted point
//! set. These conditions are sufficient only: a kernel that fails them may
//! still be positive definite (for instance `1/((1-x)^α (1-y)^α)`, which is
//! rank one). [`verify_kernel_conditions`] therefore reports raw sign
//! outcomes and never a verdict on definiteness.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::ser::SerializeSeq;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::energy::WeightFunction;
use crate::quadrature::beta;

/// Separation below which a singular kernel refuses to evaluate.
pub const DIAGONAL_GUARD: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("matrix entry ({row}, {col}) = {value:e} is not strictly positive")]
    NonPositiveEntry { row: usize, col: usize, value: f64 },
    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("matrix is empty or not square")]
    BadShape,
    #[error("monotone structure violated (P1 {p1}, P2 {p2}, P3 {p3})", p1 = .0.p1.holds, p2 = .0.p2.holds, p3 = .0.p3.holds)]
    PropertyViolation(Box<PropertyReport>),
    #[error("pivot {index} is {pivot:e}, not above tolerance {tolerance:e}")]
    PivotFailure {
        index: usize,
        pivot: f64,
        tolerance: f64,
    },
    #[error("kernel evaluated on its diagonal at ({x}, {y})")]
    DiagonalSingularity { x: f64, y: f64 },
    #[error("domain violation: {0}")]
    DomainViolation(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("weight integrates to {integral}, not 1")]
    NonNormalized { integral: f64 },
    #[error("weight is negative ({value:e}) at theta = {theta}")]
    NegativeWeight { theta: f64, value: f64 },
}

/// Dense symmetric matrix, lower triangle packed row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

fn packed(i: usize, j: usize) -> usize {
    let (i, j) = if i >= j { (i, j) } else { (j, i) };
    i * (i + 1) / 2 + j
}

impl SymMatrix {
    /// Builds from `f(i, j)` evaluated for `j <= i` only.
    pub fn from_lower(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..=i {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    /// Builds from full rows; symmetry is checked to `1e-12` relative.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, KernelError> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(KernelError::BadShape);
        }
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (rows[i][j], rows[j][i]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()) {
                    return Err(KernelError::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(Self::from_lower(n, |i, j| rows[i][j]))
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[packed(i, j)]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }
}

impl Serialize for SymMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.n))?;
        for row in self.to_rows() {
            seq.serialize_element(&row)?;
        }
        seq.end()
    }
}

/// Lower-triangular matrix, packed like [`SymMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular {
    n: usize,
    data: Vec<f64>,
}

impl LowerTriangular {
    fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * (n + 1) / 2],
        }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    /// Entry `(i, j)`; zero above the diagonal.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.data[i * (i + 1) / 2 + j]
        }
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j <= i);
        self.data[i * (i + 1) / 2 + j] = v;
    }

    /// Max-norm of `L Lᵀ - S`.
    pub fn reconstruction_residual(&self, s: &SymMatrix) -> f64 {
        assert_eq!(self.n, s.order());
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..=i {
                let v: f64 = (0..=j).map(|k| self.get(i, k) * self.get(j, k)).sum();
                worst = worst.max((v - s.get(i, j)).abs());
            }
        }
        worst
    }

    /// Row scaling `diag(d) L`.
    pub fn scale_rows(&self, d: &[f64]) -> Self {
        assert_eq!(d.len(), self.n);
        let mut out = self.clone();
        for i in 0..self.n {
            for j in 0..=i {
                out.set(i, j, d[i] * self.get(i, j));
            }
        }
        out
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }
}

impl Serialize for LowerTriangular {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.n))?;
        for row in self.to_rows() {
            seq.serialize_element(&row)?;
        }
        seq.end()
    }
}

/// Outcome of one inequality family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PropertyCheck {
    pub holds: bool,
    /// Smallest slack over the family; `None` when the family is vacuous.
    pub worst_margin: Option<f64>,
    pub tolerance: f64,
}

impl PropertyCheck {
    fn non_strict(worst_margin: Option<f64>, tolerance: f64) -> Self {
        Self {
            holds: worst_margin.is_none_or(|m| m >= -tolerance),
            worst_margin,
            tolerance,
        }
    }

    fn strict(worst_margin: Option<f64>, tolerance: f64) -> Self {
        Self {
            holds: worst_margin.is_none_or(|m| m > tolerance),
            worst_margin,
            tolerance,
        }
    }
}

/// P1/P2/P3 for matrices, or the three derivative sign conditions (in the
/// same order: `∂ₓ <= 0`, `∂ᵧ > 0`, `∂ₓᵧ <= 0`) for kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PropertyReport {
    pub p1: PropertyCheck,
    pub p2: PropertyCheck,
    pub p3: PropertyCheck,
}

impl PropertyReport {
    pub fn all_hold(&self) -> bool {
        self.p1.holds && self.p2.holds && self.p3.holds
    }
}

fn fold_min(acc: Option<f64>, v: f64) -> Option<f64> {
    Some(acc.map_or(v, |a| a.min(v)))
}

/// `1e-12 * max|S|`, the default slack for the P-checks.
pub fn default_tolerance(s: &SymMatrix) -> f64 {
    1e-12 * s.max_abs()
}

/// Checks P1–P3. P1 and P3 pass at margin `>= -tol`; P2 is strict and
/// needs margin `> tol`.
pub fn check_p_properties(s: &SymMatrix, tol: f64) -> Result<PropertyReport, KernelError> {
    let n = s.order();
    for i in 0..n {
        for j in 0..=i {
            let v = s.get(i, j);
            if !(v > 0.0) {
                return Err(KernelError::NonPositiveEntry {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
    }
    let mut m1 = None;
    let mut m2 = None;
    let mut m3 = None;
    for i in 1..n {
        for j in 0..i {
            m1 = fold_min(m1, s.get(i - 1, j) - s.get(i, j));
        }
    }
    for i in 1..n {
        for j in 1..=i {
            m2 = fold_min(m2, s.get(i, j) - s.get(i, j - 1));
        }
    }
    for i in 2..n {
        for j in 1..i {
            let lhs = s.get(i - 1, j - 1) - s.get(i, j - 1);
            let rhs = s.get(i - 1, j) - s.get(i, j);
            m3 = fold_min(m3, rhs - lhs);
        }
    }
    Ok(PropertyReport {
        p1: PropertyCheck::non_strict(m1, tol),
        p2: PropertyCheck::strict(m2, tol),
        p3: PropertyCheck::non_strict(m3, tol),
    })
}

/// Cholesky factor together with its Q1/Q2 verification.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PDCertificate {
    pub l_factor: LowerTriangular,
    /// Squared pivots `l_nn^2` in factorization order.
    pub pivots: Vec<f64>,
    pub q1_holds: bool,
    pub q2_holds: bool,
    /// Smallest `L[i-1][j] - L[i][j]` over `j < i`; `None` for order 1.
    pub q2_worst_margin: Option<f64>,
    pub reconstruction_residual: f64,
    pub tolerance: f64,
}

impl PDCertificate {
    pub fn is_valid(&self, s: &SymMatrix) -> bool {
        self.q1_holds && self.q2_holds && self.reconstruction_residual <= 1e-10 * s.max_abs()
    }

    pub fn min_pivot(&self) -> f64 {
        self.pivots.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Factors `S = L Lᵀ` in the order of the inductive construction: for each
/// new row `n`, solve `L_{n-1} l = b` with `b_j = S[n][j]` by forward
/// substitution, then take `l_nn = sqrt(S[n][n] - lᵀl)`.
///
/// Refuses input that fails P1–P3 (the certificate would prove nothing).
pub fn monotone_cholesky(s: &SymMatrix, tol: f64) -> Result<PDCertificate, KernelError> {
    let report = check_p_properties(s, tol)?;
    if !report.all_hold() {
        return Err(KernelError::PropertyViolation(Box::new(report)));
    }
    let n = s.order();
    let mut l = LowerTriangular::zeros(n);
    let mut pivots = Vec::with_capacity(n);
    for row in 0..n {
        let mut sq = 0.0;
        for j in 0..row {
            let dot: f64 = (0..j).map(|k| l.get(row, k) * l.get(j, k)).sum();
            let v = (s.get(row, j) - dot) / l.get(j, j);
            l.set(row, j, v);
            sq += v * v;
        }
        let pivot = s.get(row, row) - sq;
        if !(pivot > tol) {
            return Err(KernelError::PivotFailure {
                index: row,
                pivot,
                tolerance: tol,
            });
        }
        pivots.push(pivot);
        l.set(row, row, pivot.sqrt());
    }

    let q_tol = 1e-12 * (0..n).map(|i| l.get(i, i)).fold(0.0, f64::max).max(1.0) * n as f64;
    let q1_holds = (0..n).all(|i| (0..=i).all(|j| l.get(i, j) > 0.0));
    let mut q2_worst_margin = None;
    for i in 1..n {
        for j in 0..i {
            q2_worst_margin = fold_min(q2_worst_margin, l.get(i - 1, j) - l.get(i, j));
        }
    }
    let q2_holds = q2_worst_margin.is_none_or(|m| m >= -q_tol);
    let reconstruction_residual = l.reconstruction_residual(s);
    Ok(PDCertificate {
        l_factor: l,
        pivots,
        q1_holds,
        q2_holds,
        q2_worst_margin,
        reconstruction_residual,
        tolerance: tol,
    })
}

/// Random matrix with strict P1–P3 margins: a kernel satisfying the sign
/// conditions (Abel `A e^{-c|x-y|}` or rational `A / (1 + c|x-y|)^2`)
/// sampled on sorted points with gaps of at least `1e-2`.
///
/// # Panics
/// If `n < 2`.
pub fn generate_p_matrix(n: usize, seed: u64) -> SymMatrix {
    assert!(n >= 2, "order must be at least 2");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let abel = rng.gen_bool(0.5);
    let rate = rng.gen_range(0.2..3.0);
    let amplitude = rng.gen_range(0.5..2.0);
    let points = loop {
        let mut pts: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..4.0)).collect();
        pts.sort_by(f64::total_cmp);
        if pts.windows(2).all(|w| w[1] - w[0] >= 1e-2) {
            break pts;
        }
    };
    SymMatrix::from_lower(n, |i, j| {
        let d = points[i] - points[j];
        if abel {
            amplitude * (-rate * d).exp()
        } else {
            amplitude / (1.0 + rate * d).powi(2)
        }
    })
}

type Eval2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type Eval1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Symmetric positive kernel on an open interval.
///
/// `eval` is only ever called with `x > y`; symmetry comes from ordering
/// the arguments. Kernels with a separable factor
/// `κ(x, y) = r(x) r(y) ν(x, y)` carry it explicitly, since multiplying by a
/// rank-one positive kernel preserves definiteness while it may destroy the
/// monotone structure: certification then works on `ν` and rescales.
#[derive(Clone)]
pub struct KernelFn {
    name: String,
    eval: Eval2,
    factorization: Option<(Eval1, Eval2)>,
    domain: (f64, f64),
    singular_diagonal: bool,
}

impl fmt::Debug for KernelFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelFn")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("singular_diagonal", &self.singular_diagonal)
            .field("separable", &self.factorization.is_some())
            .finish()
    }
}

fn check_alpha(alpha: f64) -> Result<(), KernelError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(KernelError::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

impl KernelFn {
    /// Custom kernel. `eval` receives `x > y`.
    pub fn custom(
        name: impl Into<String>,
        domain: (f64, f64),
        singular_diagonal: bool,
        eval: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            eval: Arc::new(eval),
            factorization: None,
            domain,
            singular_diagonal,
        }
    }

    /// `e^{-|x-y|}`.
    pub fn abel() -> Self {
        Self::custom("abel", (f64::NEG_INFINITY, f64::INFINITY), false, |x, y| {
            (-(x - y)).exp()
        })
    }

    /// `1 / ((1-x)^α (1-y)^α)` on `(0, 1)`: positive definite (rank one) but
    /// increasing in `x`.
    pub fn inverse_power_product(alpha: f64) -> Result<Self, KernelError> {
        check_alpha(alpha)?;
        Ok(Self::custom("inverse-power-product", (0.0, 1.0), false, move |x, y| {
            1.0 / ((1.0 - x).powf(alpha) * (1.0 - y).powf(alpha))
        }))
    }

    /// `θ^α (1-η)^α / (θ-η)^α` for `θ > η` on `(0, 1)`.
    pub fn mu_weighted(alpha: f64) -> Result<Self, KernelError> {
        check_alpha(alpha)?;
        Ok(Self::custom("mu-weighted", (0.0, 1.0), true, move |t, e| {
            (t * (1.0 - e) / (t - e)).powf(alpha)
        }))
    }

    /// `(t-τ)^α / (s-τ)^α` for `s > τ` on `(0, t)`.
    pub fn mu_energy(alpha: f64, t: f64) -> Result<Self, KernelError> {
        check_alpha(alpha)?;
        check_horizon(t)?;
        Ok(Self::custom("mu-energy", (0.0, t), true, move |s, tau| {
            ((t - tau) / (s - tau)).powf(alpha)
        }))
    }

    /// The weighted-energy kernel `ω(θ)θ / (θ-η)^α`, carrying its
    /// factorization `r(θ) = (1-θ)^{-α}`,
    /// `ν(θ, η) = ω(θ)θ^{1-α}(1-θ)^α · θ^α(1-η)^α/(θ-η)^α`.
    pub fn kappa_weighted(omega: WeightFunction, alpha: f64) -> Result<Self, KernelError> {
        check_alpha(alpha)?;
        let w_full = omega.clone();
        let eval: Eval2 = Arc::new(move |t, e| w_full.eval(t) * t / (t - e).powf(alpha));
        let scale: Eval1 = Arc::new(move |t| (1.0 - t).powf(-alpha));
        let core: Eval2 = Arc::new(move |t, e| {
            let g = omega.eval(t) * t.powf(1.0 - alpha) * (1.0 - t).powf(alpha);
            g * (t * (1.0 - e) / (t - e)).powf(alpha)
        });
        Ok(Self {
            name: "kappa-weighted".into(),
            eval,
            factorization: Some((scale, core)),
            domain: (0.0, 1.0),
            singular_diagonal: true,
        })
    }

    /// The fractional-energy kernel `1 / ((t-s)^α (s-τ)^α)`, carrying its
    /// factorization `r(s) = (t-s)^{-α}`, `ν(s, τ) = (t-τ)^α/(s-τ)^α`.
    pub fn kappa_energy(alpha: f64, t: f64) -> Result<Self, KernelError> {
        check_alpha(alpha)?;
        check_horizon(t)?;
        let eval: Eval2 = Arc::new(move |s, tau| 1.0 / ((t - s).powf(alpha) * (s - tau).powf(alpha)));
        let scale: Eval1 = Arc::new(move |s| (t - s).powf(-alpha));
        let core: Eval2 = Arc::new(move |s, tau| ((t - tau) / (s - tau)).powf(alpha));
        Ok(Self {
            name: "kappa-energy".into(),
            eval,
            factorization: Some((scale, core)),
            domain: (0.0, t),
            singular_diagonal: true,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Open interval on which the kernel is defined.
    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn has_singular_diagonal(&self) -> bool {
        self.singular_diagonal
    }

    pub fn is_separable(&self) -> bool {
        self.factorization.is_some()
    }

    fn check_point(&self, x: f64) -> Result<(), KernelError> {
        let (lo, hi) = self.domain;
        if x.is_finite() && x > lo && x < hi {
            Ok(())
        } else {
            Err(KernelError::DomainViolation(format!(
                "{x} outside ({lo}, {hi}) for kernel {}",
                self.name
            )))
        }
    }

    fn ordered(&self, f: &Eval2, x: f64, y: f64) -> Result<f64, KernelError> {
        self.check_point(x)?;
        self.check_point(y)?;
        if (x - y).abs() < DIAGONAL_GUARD {
            if self.singular_diagonal {
                return Err(KernelError::DiagonalSingularity { x, y });
            }
            return Ok(f(x.max(y), x.min(y)));
        }
        Ok(if x > y { f(x, y) } else { f(y, x) })
    }

    /// `κ(x, y)`, symmetric by construction.
    pub fn eval(&self, x: f64, y: f64) -> Result<f64, KernelError> {
        self.ordered(&self.eval, x, y)
    }

    /// Gram matrix `[κ(x_i, x_j)]`; singular kernels need
    /// [`DiagonalRule::Dominant`].
    pub fn gram(&self, points: &[f64], rule: DiagonalRule) -> Result<SymMatrix, KernelError> {
        gram_with(self, &self.eval, points, rule)
    }
}

fn check_horizon(t: f64) -> Result<(), KernelError> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(KernelError::InvalidParameter(format!(
            "time horizon must be positive, got {t}"
        )))
    }
}

/// How Gram-matrix diagonals are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagonalRule {
    /// `κ(x_i, x_i)`; only for kernels that are finite on the diagonal.
    Evaluate,
    /// For kernels that blow up on the diagonal: twice the smallest value
    /// compatible with P1–P3 given the off-diagonal entries. Any finite
    /// diagonal at or above that bound lies below the kernel's (infinite)
    /// diagonal, and raising a diagonal keeps a matrix definite.
    Dominant,
}

fn gram_with(
    kernel: &KernelFn,
    f: &Eval2,
    points: &[f64],
    rule: DiagonalRule,
) -> Result<SymMatrix, KernelError> {
    let n = points.len();
    if n == 0 {
        return Err(KernelError::BadShape);
    }
    let mut rows = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..i {
            let v = kernel.ordered(f, points[i], points[j])?;
            rows[i][j] = v;
            rows[j][i] = v;
        }
    }
    match rule {
        DiagonalRule::Evaluate => {
            for i in 0..n {
                rows[i][i] = kernel.ordered(f, points[i], points[i])?;
            }
        }
        DiagonalRule::Dominant => {
            if n < 2 {
                return Err(KernelError::InvalidParameter(
                    "dominant diagonal needs at least two points".into(),
                ));
            }
            if points.windows(2).any(|w| w[1] <= w[0]) {
                return Err(KernelError::InvalidParameter(
                    "dominant diagonal needs strictly increasing points".into(),
                ));
            }
            for i in 0..n {
                let mut bound: f64 = 0.0;
                if i > 0 {
                    bound = bound.max(rows[i][i - 1]);
                }
                if i + 1 < n {
                    bound = bound.max(rows[i + 1][i]);
                }
                if i > 0 && i + 1 < n {
                    bound = bound.max(rows[i + 1][i] + rows[i][i - 1] - rows[i + 1][i - 1]);
                }
                rows[i][i] = 2.0 * bound;
            }
        }
    }
    SymMatrix::from_rows(&rows)
}

/// Result of certifying a kernel on a point set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelCertification {
    pub kernel: String,
    pub points: Vec<f64>,
    pub diagonal: DiagonalRule,
    /// `true` when the certificate is for the core factor `ν` of a
    /// separable kernel.
    pub separable: bool,
    /// Matrix that was checked and factorized (`ν` for separable kernels).
    pub matrix: SymMatrix,
    pub properties: Option<PropertyReport>,
    pub certificate: Option<PDCertificate>,
    /// Factor of the full kernel matrix, `diag(r) L_ν`, for separable kernels.
    pub kernel_factor: Option<LowerTriangular>,
    pub kernel_reconstruction_residual: Option<f64>,
    pub failure: Option<String>,
}

impl KernelCertification {
    pub fn is_certified(&self) -> bool {
        self.failure.is_none()
            && self
                .certificate
                .as_ref()
                .is_some_and(|c| c.is_valid(&self.matrix))
    }
}

/// Samples the kernel (or its core factor) on `points`, checks P1–P3 and
/// factorizes. Input errors (bad points, domain) are returned as `Err`;
/// property or pivot failures are recorded in the result.
pub fn certify_kernel(kernel: &KernelFn, points: &[f64]) -> Result<KernelCertification, KernelError> {
    let rule = if kernel.singular_diagonal {
        DiagonalRule::Dominant
    } else {
        DiagonalRule::Evaluate
    };
    let (matrix, scale) = match &kernel.factorization {
        Some((r, core)) => {
            let m = gram_with(kernel, core, points, rule)?;
            (m, Some(points.iter().map(|&x| r(x)).collect::<Vec<f64>>()))
        }
        None => (gram_with(kernel, &kernel.eval, points, rule)?, None),
    };
    let tol = default_tolerance(&matrix);
    let mut out = KernelCertification {
        kernel: kernel.name.clone(),
        points: points.to_vec(),
        diagonal: rule,
        separable: scale.is_some(),
        matrix: matrix.clone(),
        properties: None,
        certificate: None,
        kernel_factor: None,
        kernel_reconstruction_residual: None,
        failure: None,
    };
    match check_p_properties(&matrix, tol) {
        Ok(report) => out.properties = Some(report),
        Err(e) => {
            out.failure = Some(e.to_string());
            return Ok(out);
        }
    }
    match monotone_cholesky(&matrix, tol) {
        Ok(cert) => {
            if let Some(d) = &scale {
                let factor = cert.l_factor.scale_rows(d);
                let full = SymMatrix::from_lower(points.len(), |i, j| d[i] * d[j] * matrix.get(i, j));
                out.kernel_reconstruction_residual = Some(factor.reconstruction_residual(&full));
                out.kernel_factor = Some(factor);
            }
            if !cert.is_valid(&matrix) {
                out.failure = Some(format!(
                    "certificate checks failed (Q1 {}, Q2 {}, residual {:e})",
                    cert.q1_holds, cert.q2_holds, cert.reconstruction_residual
                ));
            }
            out.certificate = Some(cert);
        }
        Err(e) => out.failure = Some(e.to_string()),
    }
    Ok(out)
}

/// Default finite-difference step: `1e-5` times the domain width, or times
/// the span of the points for unbounded domains.
pub fn default_fd_step(kernel: &KernelFn, points: &[f64]) -> f64 {
    let (lo, hi) = kernel.domain;
    let width = if lo.is_finite() && hi.is_finite() {
        hi - lo
    } else {
        let span = points.last().copied().unwrap_or(1.0) - points.first().copied().unwrap_or(0.0);
        if span > 0.0 {
            span
        } else {
            1.0
        }
    };
    1e-5 * width
}

/// Central-difference check of `∂ₓκ <= 0`, `∂ᵧκ > 0`, `∂ₓᵧκ <= 0` at every
/// sampled pair `x > y`, reported as `p1`, `p2`, `p3` respectively.
///
/// These are sufficient conditions for definiteness. A failed condition
/// says nothing about whether the kernel is positive definite.
pub fn verify_kernel_conditions(
    kernel: &KernelFn,
    points: &[f64],
    h_fd: f64,
) -> Result<PropertyReport, KernelError> {
    if !(h_fd > 0.0) {
        return Err(KernelError::InvalidParameter(format!(
            "finite-difference step must be positive, got {h_fd}"
        )));
    }
    if points.windows(2).any(|w| w[1] <= w[0]) {
        return Err(KernelError::InvalidParameter(
            "points must be strictly increasing".into(),
        ));
    }
    let (lo, hi) = kernel.domain;
    for &x in points {
        if !(x - 2.0 * h_fd > lo && x + 2.0 * h_fd < hi) {
            return Err(KernelError::DomainViolation(format!(
                "stencil around {x} leaves ({lo}, {hi})"
            )));
        }
    }
    let h = h_fd;
    let k = |x: f64, y: f64| (kernel.eval)(x, y);
    let mut dx_min = None;
    let mut dy_min = None;
    let mut dxy_min = None;
    let mut scale: f64 = 0.0;
    for (i, &x) in points.iter().enumerate() {
        for &y in &points[..i] {
            if x - y <= 2.0 * h {
                return Err(KernelError::DomainViolation(format!(
                    "stencil at ({x}, {y}) crosses the diagonal"
                )));
            }
            let vals = [
                k(x + h, y),
                k(x - h, y),
                k(x, y + h),
                k(x, y - h),
                k(x + h, y + h),
                k(x + h, y - h),
                k(x - h, y + h),
                k(x - h, y - h),
            ];
            scale = vals.iter().fold(scale, |m, v| m.max(v.abs()));
            let dx = (vals[0] - vals[1]) / (2.0 * h);
            let dy = (vals[2] - vals[3]) / (2.0 * h);
            let dxy = (vals[4] - vals[5] - vals[6] + vals[7]) / (4.0 * h * h);
            dx_min = fold_min(dx_min, -dx);
            dy_min = fold_min(dy_min, dy);
            dxy_min = fold_min(dxy_min, -dxy);
        }
    }
    let first_tol = 64.0 * f64::EPSILON * scale / h;
    let mixed_tol = 64.0 * f64::EPSILON * scale / (h * h);
    Ok(PropertyReport {
        p1: PropertyCheck::non_strict(dx_min, first_tol),
        p2: PropertyCheck::strict(dy_min, first_tol),
        p3: PropertyCheck::non_strict(dxy_min, mixed_tol),
    })
}

/// `κ(θ, η) = ω(θ)θ/(θ-η)^α` for `θ > η`, symmetric extension otherwise.
pub fn kappa_weighted(theta: f64, eta: f64, omega: &WeightFunction, alpha: f64) -> Result<f64, KernelError> {
    check_alpha(alpha)?;
    for v in [theta, eta] {
        if !(v > 0.0 && v < 1.0) {
            return Err(KernelError::DomainViolation(format!("{v} outside (0, 1)")));
        }
    }
    if (theta - eta).abs() < DIAGONAL_GUARD {
        return Err(KernelError::DiagonalSingularity { x: theta, y: eta });
    }
    let (hi, lo) = if theta > eta { (theta, eta) } else { (eta, theta) };
    Ok(omega.eval(hi) * hi / (hi - lo).powf(alpha))
}

/// `κ(s, τ) = 1/((t-s)^α (s-τ)^α)` for `s > τ`, symmetric extension
/// otherwise.
pub fn kappa_energy(s: f64, tau: f64, t: f64, alpha: f64) -> Result<f64, KernelError> {
    check_alpha(alpha)?;
    check_horizon(t)?;
    for v in [s, tau] {
        if !(v > 0.0 && v < t) {
            return Err(KernelError::DomainViolation(format!("{v} outside (0, {t})")));
        }
    }
    if (s - tau).abs() < DIAGONAL_GUARD {
        return Err(KernelError::DiagonalSingularity { x: s, y: tau });
    }
    let (hi, lo) = if s > tau { (s, tau) } else { (tau, s) };
    Ok(1.0 / ((t - hi).powf(alpha) * (hi - lo).powf(alpha)))
}

/// Outcome of [`check_weight_admissible`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Admissibility {
    pub admissible: bool,
    /// `min_i g(θ_i) - g(θ_{i+1})` for `g(θ) = ω(θ)θ^{1-α}(1-θ)^α`.
    pub margin: f64,
    pub tolerance: f64,
    pub mass: f64,
}

/// Samples `g(θ) = ω(θ)θ^{1-α}(1-θ)^α` at `n_samples` interior points
/// `θ_i = i/(n_samples+1)` and tests that it is nonincreasing up to
/// `1e-12 · max|g|`; also checks `∫ω = 1` to `1e-6`.
pub fn check_weight_admissible(
    omega: &WeightFunction,
    alpha: f64,
    n_samples: usize,
) -> Result<Admissibility, KernelError> {
    check_alpha(alpha)?;
    if n_samples < 2 {
        return Err(KernelError::InvalidParameter(
            "need at least two samples".into(),
        ));
    }
    let mass = omega.total_mass(64);
    if (mass - 1.0).abs() > 1e-6 {
        return Err(KernelError::NonNormalized { integral: mass });
    }
    let mut g = Vec::with_capacity(n_samples);
    for i in 1..=n_samples {
        let theta = i as f64 / (n_samples + 1) as f64;
        let w = omega.eval(theta);
        if w < 0.0 {
            return Err(KernelError::NegativeWeight { theta, value: w });
        }
        g.push(w * theta.powf(1.0 - alpha) * (1.0 - theta).powf(alpha));
    }
    let tolerance = 1e-12 * g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let margin = g
        .windows(2)
        .map(|w| w[0] - w[1])
        .fold(f64::INFINITY, f64::min);
    Ok(Admissibility {
        admissible: margin >= -tolerance,
        margin,
        tolerance,
        mass,
    })
}

/// `1/B(α, 1-α)`, the constant value of `g` for the Beta weight.
pub fn beta_weight_level(alpha: f64) -> f64 {
    1.0 / beta(alpha, 1.0 - alpha)
}
