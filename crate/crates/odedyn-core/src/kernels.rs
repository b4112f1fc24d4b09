//! Closed-form Gaussian expectations for sigma(x) = erf(x / sqrt(2)) over
//! 2-, 3- and 4-dimensional local-field covariances, plus a Monte Carlo
//! oracle used to validate every formula.
//!
//! Conventions. `i3`, `i4_dsigma_dsigma` and the 4-point kernel return the
//! plain Gaussian moments. The pairwise kernel `i2_sigma_sigma` instead
//! returns the (1/pi) arcsine form, i.e. E[sigma sigma] / 2: the classic
//! normalisation for erf committee machines, which absorbs the one-half of
//! the squared loss so that risk contributions sum directly. The oracle
//! integrand for that kernel carries the same factor.

use libm::{asin, erf, exp, fabs, sqrt};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::overlap::{OverlapState, PSD_EIGEN_FLOOR, SYMMETRY_TOL};
use crate::rng::{stream, DOMAIN_COVARIANCE, DOMAIN_MC_ORACLE};

/// Radicands at or below this are treated as degenerate (0/0-ambiguous).
pub const RADICAND_FLOOR: f64 = 1e-14;
/// Arcsine arguments may exceed [-1, 1] by at most this much before the
/// silent clamp turns into an error.
pub const CLAMP_SLACK: f64 = 1e-9;
/// Jitter added to the diagonal when a semidefinite covariance fails to
/// factorize in the Monte Carlo oracle.
pub const CHOLESKY_JITTER: f64 = 1e-12;

const FRAC_1_PI: f64 = core::f64::consts::FRAC_1_PI;
const FRAC_2_PI: f64 = 2.0 * core::f64::consts::FRAC_1_PI;

/// The activation sigma(x) = erf(x / sqrt(2)).
#[inline]
pub fn sigma(x: f64) -> f64 {
    erf(x * core::f64::consts::FRAC_1_SQRT_2)
}

/// sigma'(x) = sqrt(2/pi) exp(-x^2 / 2).
#[inline]
pub fn sigma_prime(x: f64) -> f64 {
    const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
    SQRT_2_OVER_PI * exp(-0.5 * x * x)
}

/// Which side of the network a local field belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldSide {
    Student,
    Teacher,
}

/// Ordered list of 2 to 4 local fields selecting a covariance submatrix of
/// the parent overlap state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CovarianceSelector {
    entries: [(FieldSide, usize); 4],
    len: usize,
}

impl CovarianceSelector {
    pub fn new(fields: &[(FieldSide, usize)]) -> Result<Self> {
        if fields.len() < 2 || fields.len() > 4 {
            return Err(Error::InvalidParameter {
                name: "selector length",
                value: fields.len() as f64,
            });
        }
        let mut entries = [(FieldSide::Student, 0); 4];
        entries[..fields.len()].copy_from_slice(fields);
        Ok(Self {
            entries,
            len: fields.len(),
        })
    }

    pub fn pair(a: (FieldSide, usize), b: (FieldSide, usize)) -> Self {
        Self {
            entries: [a, b, a, a],
            len: 2,
        }
    }

    pub fn triple(a: (FieldSide, usize), b: (FieldSide, usize), c: (FieldSide, usize)) -> Self {
        Self {
            entries: [a, b, c, a],
            len: 3,
        }
    }

    pub fn quad(
        a: (FieldSide, usize),
        b: (FieldSide, usize),
        c: (FieldSide, usize),
        d: (FieldSide, usize),
    ) -> Self {
        Self {
            entries: [a, b, c, d],
            len: 4,
        }
    }

    pub fn fields(&self) -> &[(FieldSide, usize)] {
        &self.entries[..self.len]
    }

    pub fn order(&self) -> usize {
        self.len
    }
}

/// Small symmetric covariance of 2-4 local fields, stored inline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelCovariance {
    order: usize,
    e: [[f64; 4]; 4],
}

impl KernelCovariance {
    /// Validating constructor: symmetry to 1e-12, nonnegative diagonal,
    /// finite entries, PSD down to eigenvalue -1e-9.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let order = m.nrows();
        if m.ncols() != order || !(2..=4).contains(&order) {
            return Err(Error::DimensionMismatch {
                context: "kernel covariance",
                expected: (order, order),
                found: (m.nrows(), m.ncols()),
            });
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: "kernel covariance",
            });
        }
        let mut worst = 0.0f64;
        for i in 0..order {
            if m[(i, i)] < 0.0 {
                return Err(Error::NotPositiveSemidefinite {
                    min_eigenvalue: m[(i, i)],
                });
            }
            for j in (i + 1)..order {
                worst = worst.max(fabs(m[(i, j)] - m[(j, i)]));
            }
        }
        if worst > SYMMETRY_TOL {
            return Err(Error::NotSymmetric {
                max_asymmetry: worst,
            });
        }
        let min_eig = m
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        if min_eig < PSD_EIGEN_FLOOR {
            return Err(Error::NotPositiveSemidefinite {
                min_eigenvalue: min_eig,
            });
        }
        let mut e = [[0.0; 4]; 4];
        for i in 0..order {
            for j in 0..order {
                e[i][j] = m[(i, j)];
            }
        }
        Ok(Self { order, e })
    }

    /// Symmetric fill from the upper triangle, no PSD check. Used by
    /// [`assemble_covariance`], where validity is inherited from the state.
    pub(crate) fn from_upper_unchecked(order: usize, e: [[f64; 4]; 4]) -> Self {
        let mut full = e;
        for i in 0..order {
            for j in (i + 1)..order {
                full[j][i] = full[i][j];
            }
        }
        Self { order, e: full }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.order && j < self.order);
        self.e[i][j]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.order, self.order, |i, j| self.e[i][j])
    }
}

/// Pick the covariance submatrix of the selected local fields: entries come
/// from Q (student-student), M (student-teacher) or P (teacher-teacher).
pub fn assemble_covariance(
    state: &OverlapState,
    sel: &CovarianceSelector,
) -> Result<KernelCovariance> {
    let p = state.students();
    let k = state.teachers();
    for &(side, idx) in sel.fields() {
        let bound = match side {
            FieldSide::Student => p,
            FieldSide::Teacher => k,
        };
        if idx >= bound {
            return Err(Error::IndexOutOfRange {
                side: match side {
                    FieldSide::Student => "student",
                    FieldSide::Teacher => "teacher",
                },
                index: idx,
                bound,
            });
        }
    }
    let fields = sel.fields();
    let n = fields.len();
    let mut e = [[0.0; 4]; 4];
    for a in 0..n {
        for b in a..n {
            e[a][b] = overlap_entry(state, fields[a], fields[b]);
        }
    }
    Ok(KernelCovariance::from_upper_unchecked(n, e))
}

#[inline]
fn overlap_entry(state: &OverlapState, a: (FieldSide, usize), b: (FieldSide, usize)) -> f64 {
    match (a.0, b.0) {
        (FieldSide::Student, FieldSide::Student) => state.q()[(a.1, b.1)],
        (FieldSide::Student, FieldSide::Teacher) => state.m()[(a.1, b.1)],
        (FieldSide::Teacher, FieldSide::Student) => state.m()[(b.1, a.1)],
        (FieldSide::Teacher, FieldSide::Teacher) => state.rho()[(a.1, b.1)],
    }
}

/// Clamp an arcsine argument pushed marginally outside [-1, 1] by roundoff;
/// beyond the slack the input is genuinely invalid.
#[inline]
fn clamped_asin(arg: f64) -> Result<f64> {
    if !arg.is_finite() {
        return Err(Error::NonFinite {
            context: "arcsine argument",
        });
    }
    if fabs(arg) > 1.0 + CLAMP_SLACK {
        return Err(Error::ArcsinOutOfRange { argument: arg });
    }
    Ok(asin(arg.clamp(-1.0, 1.0)))
}

fn expect_order(cov: &KernelCovariance, order: usize) -> Result<()> {
    if cov.order() != order {
        return Err(Error::DimensionMismatch {
            context: "kernel order",
            expected: (order, order),
            found: (cov.order(), cov.order()),
        });
    }
    for i in 0..order {
        for j in 0..order {
            if !cov.entry(i, j).is_finite() {
                return Err(Error::NonFinite {
                    context: "kernel covariance",
                });
            }
        }
    }
    Ok(())
}

/// Pairwise arcsine kernel
/// (1/pi) asin(O12 / sqrt((1 + O11)(1 + O22))) = E[sigma sigma] / 2.
pub fn i2_sigma_sigma(cov: &KernelCovariance) -> Result<f64> {
    expect_order(cov, 2)?;
    let arg = cov.entry(0, 1) / sqrt((1.0 + cov.entry(0, 0)) * (1.0 + cov.entry(1, 1)));
    Ok(FRAC_1_PI * clamped_asin(arg)?)
}

/// E[sigma'(l1) l2 sigma(l3)] =
/// (2/pi) (O23 (1+O11) - O12 O13) / ((1+O11) sqrt((1+O11)(1+O33) - O13^2)).
pub fn i3_dsigma_lambda_sigma(cov: &KernelCovariance) -> Result<f64> {
    expect_order(cov, 3)?;
    let w0 = 1.0 + cov.entry(0, 0);
    let radicand = w0 * (1.0 + cov.entry(2, 2)) - cov.entry(0, 2) * cov.entry(0, 2);
    if radicand <= RADICAND_FLOOR {
        return Err(Error::DegenerateCovariance { radicand });
    }
    let numerator = cov.entry(1, 2) * w0 - cov.entry(0, 1) * cov.entry(0, 2);
    Ok(FRAC_2_PI * numerator / (w0 * sqrt(radicand)))
}

/// E[sigma'(l1) sigma'(l2)] = (2/pi) / sqrt(1 + O11 + O22 + O11 O22 - O12^2).
pub fn i4_dsigma_dsigma(cov: &KernelCovariance) -> Result<f64> {
    expect_order(cov, 2)?;
    let (o11, o12, o22) = (cov.entry(0, 0), cov.entry(0, 1), cov.entry(1, 1));
    let radicand = 1.0 + o11 + o22 + o11 * o22 - o12 * o12;
    if radicand <= RADICAND_FLOOR {
        return Err(Error::DegenerateCovariance { radicand });
    }
    Ok(FRAC_2_PI / sqrt(radicand))
}

/// E[sigma'(l1) sigma'(l2) sigma(l3) sigma(l4)] =
/// (4/pi^2) asin(B1 / sqrt(B2 B3)) / sqrt(B0) with
///
/// ```text
/// B0 = (1+O11)(1+O22) - O12^2
/// B1 = B0 O34 - O23 O24 (1+O11) - O13 O14 (1+O22) + O12 O13 O24 + O12 O14 O23
/// B2 = B0 (1+O33) - O23^2 (1+O11) - O13^2 (1+O22) + 2 O12 O13 O23
/// B3 = B0 (1+O44) - O24^2 (1+O11) - O14^2 (1+O22) + 2 O12 O14 O24
/// ```
///
/// B2 is the (1,2,3) analogue of B3; every term has been validated against
/// the Monte Carlo oracle (see the kernel oracle tests).
pub fn i4_dsigma_dsigma_sigma_sigma(cov: &KernelCovariance) -> Result<f64> {
    expect_order(cov, 4)?;
    let o = |i: usize, j: usize| cov.entry(i - 1, j - 1);
    let b0 = (1.0 + o(1, 1)) * (1.0 + o(2, 2)) - o(1, 2) * o(1, 2);
    if b0 <= RADICAND_FLOOR {
        return Err(Error::DegenerateCovariance { radicand: b0 });
    }
    let b1 = b0 * o(3, 4) - o(2, 3) * o(2, 4) * (1.0 + o(1, 1)) - o(1, 3) * o(1, 4) * (1.0 + o(2, 2))
        + o(1, 2) * o(1, 3) * o(2, 4)
        + o(1, 2) * o(1, 4) * o(2, 3);
    let b2 = b0 * (1.0 + o(3, 3)) - o(2, 3) * o(2, 3) * (1.0 + o(1, 1))
        - o(1, 3) * o(1, 3) * (1.0 + o(2, 2))
        + 2.0 * o(1, 2) * o(1, 3) * o(2, 3);
    let b3 = b0 * (1.0 + o(4, 4)) - o(2, 4) * o(2, 4) * (1.0 + o(1, 1))
        - o(1, 4) * o(1, 4) * (1.0 + o(2, 2))
        + 2.0 * o(1, 2) * o(1, 4) * o(2, 4);
    if b2 <= RADICAND_FLOOR {
        return Err(Error::DegenerateCovariance { radicand: b2 });
    }
    if b3 <= RADICAND_FLOOR {
        return Err(Error::DegenerateCovariance { radicand: b3 });
    }
    let arg = b1 / sqrt(b2 * b3);
    Ok(4.0 * FRAC_1_PI * FRAC_1_PI * clamped_asin(arg)? / sqrt(b0))
}

/// Identifies the integrand of a closed-form kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// sigma(l1) sigma(l2) / 2, matching [`i2_sigma_sigma`].
    SigmaSigma,
    /// sigma'(l1) l2 sigma(l3).
    DsigmaLambdaSigma,
    /// sigma'(l1) sigma'(l2).
    DsigmaDsigma,
    /// sigma'(l1) sigma'(l2) sigma(l3) sigma(l4).
    DsigmaDsigmaSigmaSigma,
}

impl KernelKind {
    pub fn expected_order(&self) -> usize {
        match self {
            KernelKind::SigmaSigma | KernelKind::DsigmaDsigma => 2,
            KernelKind::DsigmaLambdaSigma => 3,
            KernelKind::DsigmaDsigmaSigmaSigma => 4,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            KernelKind::SigmaSigma => "i2",
            KernelKind::DsigmaLambdaSigma => "i3",
            KernelKind::DsigmaDsigma => "i4p",
            KernelKind::DsigmaDsigmaSigmaSigma => "i4",
        }
    }

    /// Evaluate the matching closed form.
    pub fn closed_form(&self, cov: &KernelCovariance) -> Result<f64> {
        match self {
            KernelKind::SigmaSigma => i2_sigma_sigma(cov),
            KernelKind::DsigmaLambdaSigma => i3_dsigma_lambda_sigma(cov),
            KernelKind::DsigmaDsigma => i4_dsigma_dsigma(cov),
            KernelKind::DsigmaDsigmaSigmaSigma => i4_dsigma_dsigma_sigma_sigma(cov),
        }
    }

    #[inline]
    fn integrand(&self, x: &[f64; 4]) -> f64 {
        match self {
            KernelKind::SigmaSigma => 0.5 * sigma(x[0]) * sigma(x[1]),
            KernelKind::DsigmaLambdaSigma => sigma_prime(x[0]) * x[1] * sigma(x[2]),
            KernelKind::DsigmaDsigma => sigma_prime(x[0]) * sigma_prime(x[1]),
            KernelKind::DsigmaDsigmaSigmaSigma => {
                sigma_prime(x[0]) * sigma_prime(x[1]) * sigma(x[2]) * sigma(x[3])
            }
        }
    }
}

/// Sample mean and standard error of a Monte Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
}

impl McEstimate {
    /// Distance from a reference value in units of the standard error.
    pub fn z_score(&self, reference: f64) -> f64 {
        (reference - self.mean) / self.stderr
    }
}

/// Monte Carlo estimate of a kernel integrand over N(0, cov) draws.
///
/// Sampling goes through a Cholesky factor; semidefinite inputs get one
/// retry with 1e-12 I jitter so that oracle comparisons stay reproducible.
pub fn mc_kernel_oracle(
    kind: KernelKind,
    cov: &KernelCovariance,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    if cov.order() != kind.expected_order() {
        return Err(Error::DimensionMismatch {
            context: "oracle covariance",
            expected: (kind.expected_order(), kind.expected_order()),
            found: (cov.order(), cov.order()),
        });
    }
    if n < 1000 {
        return Err(Error::InvalidParameter {
            name: "oracle samples",
            value: n as f64,
        });
    }
    let order = cov.order();
    let mat = cov.to_matrix();
    let chol = match mat.clone().cholesky() {
        Some(c) => c,
        None => (mat + DMatrix::identity(order, order) * CHOLESKY_JITTER)
            .cholesky()
            .ok_or(Error::CholeskyFailed)?,
    };
    let l = chol.l();
    let mut rng = stream(seed, DOMAIN_MC_ORACLE, 0);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut z = [0.0f64; 4];
    let mut x = [0.0f64; 4];
    for _ in 0..n {
        for zi in z.iter_mut().take(order) {
            *zi = rng.sample(StandardNormal);
        }
        for i in 0..order {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += l[(i, j)] * z[j];
            }
            x[i] = acc;
        }
        let v = kind.integrand(&x);
        sum += v;
        sum_sq += v * v;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = (sum_sq - nf * mean * mean).max(0.0) / (nf - 1.0);
    Ok(McEstimate {
        mean,
        stderr: sqrt(var / nf),
    })
}

/// Random PSD covariance with prescribed diagonal range: B B^T / order,
/// rescaled so each diagonal entry is uniform in [diag_lo, diag_hi].
pub fn random_psd_covariance(
    order: usize,
    diag_lo: f64,
    diag_hi: f64,
    seed: u64,
    index: u64,
) -> KernelCovariance {
    assert!((2..=4).contains(&order));
    assert!(diag_lo > 0.0 && diag_hi >= diag_lo);
    let mut rng: Xoshiro256PlusPlus = stream(seed, DOMAIN_COVARIANCE, index);
    let mut b = [[0.0f64; 4]; 4];
    for row in b.iter_mut().take(order) {
        for v in row.iter_mut().take(order) {
            *v = rng.sample(StandardNormal);
        }
    }
    let mut c = [[0.0f64; 4]; 4];
    for i in 0..order {
        for j in 0..order {
            let mut acc = 0.0;
            for (bi, bj) in b[i].iter().zip(b[j].iter()).take(order) {
                acc += bi * bj;
            }
            c[i][j] = acc / order as f64;
        }
    }
    let mut scale = [0.0f64; 4];
    for i in 0..order {
        let target = diag_lo + (diag_hi - diag_lo) * rng.random::<f64>();
        scale[i] = sqrt(target / c[i][i]);
    }
    let mut e = [[0.0; 4]; 4];
    for i in 0..order {
        for j in i..order {
            e[i][j] = c[i][j] * scale[i] * scale[j];
        }
    }
    KernelCovariance::from_upper_unchecked(order, e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cov2(o11: f64, o12: f64, o22: f64) -> KernelCovariance {
        KernelCovariance::from_upper_unchecked(2, {
            let mut e = [[0.0; 4]; 4];
            e[0][0] = o11;
            e[0][1] = o12;
            e[1][1] = o22;
            e
        })
    }

    #[test]
    fn i2_exact_values() {
        // asin(1/2) = pi/6
        let v = i2_sigma_sigma(&cov2(1.0, 1.0, 1.0)).unwrap();
        assert!((v - 1.0 / 6.0).abs() < 1e-15, "{v}");
        // zero correlation
        let v = i2_sigma_sigma(&cov2(0.7, 0.0, 2.3)).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn i4p_exact_values() {
        let v = i4_dsigma_dsigma(&cov2(1.0, 0.0, 1.0)).unwrap();
        assert!((v - core::f64::consts::FRAC_1_PI).abs() < 1e-15);
        let v = i4_dsigma_dsigma(&cov2(1.0, 1.0, 1.0)).unwrap();
        assert!((v - 2.0 / core::f64::consts::PI / 3f64.sqrt()).abs() < 1e-15);
        // sigma'(0)^2 = 2/pi at zero fields
        let v = i4_dsigma_dsigma(&cov2(0.0, 0.0, 0.0)).unwrap();
        assert!((v - 2.0 * core::f64::consts::FRAC_1_PI).abs() < 1e-15);
    }

    #[test]
    fn i3_exact_values() {
        let mut e = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in i..3 {
                e[i][j] = 1.0;
            }
        }
        let ones = KernelCovariance::from_upper_unchecked(3, e);
        let v = i3_dsigma_lambda_sigma(&ones).unwrap();
        let expected = 1.0 / (core::f64::consts::PI * 3f64.sqrt());
        assert!((v - expected).abs() < 1e-15, "{v} vs {expected}");
        // diagonal covariance: numerator vanishes
        let mut e = [[0.0; 4]; 4];
        e[0][0] = 0.4;
        e[1][1] = 1.7;
        e[2][2] = 0.9;
        let diag = KernelCovariance::from_upper_unchecked(3, e);
        assert_eq!(i3_dsigma_lambda_sigma(&diag).unwrap(), 0.0);
    }

    #[test]
    fn i4_vanishes_without_cross_correlation() {
        // rows 3,4 independent of everything: B1 = 0
        let mut e = [[0.0; 4]; 4];
        e[0][0] = 1.0;
        e[0][1] = 0.3;
        e[1][1] = 0.8;
        e[2][2] = 1.1;
        e[3][3] = 0.6;
        let cov = KernelCovariance::from_upper_unchecked(4, e);
        assert_eq!(i4_dsigma_dsigma_sigma_sigma(&cov).unwrap(), 0.0);
        // identity: same cancellation
        let mut e = [[0.0; 4]; 4];
        for i in 0..4 {
            e[i][i] = 1.0;
        }
        let id = KernelCovariance::from_upper_unchecked(4, e);
        assert_eq!(i4_dsigma_dsigma_sigma_sigma(&id).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_covariance_is_rejected() {
        let mut e = [[0.0; 4]; 4];
        e[0][0] = -1.0; // (1+O11) = 0
        e[2][2] = 0.5;
        let cov = KernelCovariance::from_upper_unchecked(3, e);
        assert!(matches!(
            i3_dsigma_lambda_sigma(&cov),
            Err(Error::DegenerateCovariance { .. })
        ));
    }

    #[test]
    fn order_mismatch_is_rejected() {
        let c = cov2(1.0, 0.0, 1.0);
        assert!(i3_dsigma_lambda_sigma(&c).is_err());
        assert!(i4_dsigma_dsigma_sigma_sigma(&c).is_err());
    }
}
