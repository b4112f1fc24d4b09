//! Macroscopic overlap state (Q, M, P) and its construction from weights.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Max allowed |a_ij - a_ji| for matrices required to be symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Eigenvalue floor for accepting a block overlap matrix as PSD.
pub const PSD_EIGEN_FLOOR: f64 = -1e-9;

/// Sufficient statistic of the dynamics: student-student overlaps Q (p x p),
/// student-teacher overlaps M (p x k) and the fixed teacher-teacher overlaps
/// P (k x k). The population risk is a function of this state alone.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapState {
    q: DMatrix<f64>,
    m: DMatrix<f64>,
    rho: DMatrix<f64>,
}

impl OverlapState {
    /// Validating constructor: checks shapes, symmetry of Q and P to 1e-12,
    /// finiteness, and that the block matrix Omega = [[Q, M], [M^T, P]] is
    /// PSD down to eigenvalue -1e-9 (after symmetrization).
    pub fn new(q: DMatrix<f64>, m: DMatrix<f64>, rho: DMatrix<f64>) -> Result<Self> {
        let p = q.nrows();
        let k = rho.nrows();
        if q.ncols() != p {
            return Err(Error::DimensionMismatch {
                context: "OverlapState Q",
                expected: (p, p),
                found: (q.nrows(), q.ncols()),
            });
        }
        if rho.ncols() != k {
            return Err(Error::DimensionMismatch {
                context: "OverlapState P",
                expected: (k, k),
                found: (rho.nrows(), rho.ncols()),
            });
        }
        if m.nrows() != p || m.ncols() != k {
            return Err(Error::DimensionMismatch {
                context: "OverlapState M",
                expected: (p, k),
                found: (m.nrows(), m.ncols()),
            });
        }
        for mat in [&q, &m, &rho] {
            if mat.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    context: "overlap entries",
                });
            }
        }
        check_symmetry(&q)?;
        check_symmetry(&rho)?;
        let state = Self {
            q: symmetrized(q),
            m,
            rho: symmetrized(rho),
        };
        let min_eig = state.min_omega_eigenvalue();
        if min_eig < PSD_EIGEN_FLOOR {
            return Err(Error::NotPositiveSemidefinite {
                min_eigenvalue: min_eig,
            });
        }
        Ok(state)
    }

    /// Construction without the PSD eigenvalue check; used on hot paths where
    /// validity is maintained by the caller (e.g. the ODE step guard).
    pub fn from_parts_unchecked(q: DMatrix<f64>, m: DMatrix<f64>, rho: DMatrix<f64>) -> Self {
        debug_assert_eq!(q.nrows(), q.ncols());
        debug_assert_eq!(rho.nrows(), rho.ncols());
        debug_assert_eq!(m.nrows(), q.nrows());
        debug_assert_eq!(m.ncols(), rho.nrows());
        Self { q, m, rho }
    }

    /// Initial state of a combination-initialized student: Q = A A^T, M = A,
    /// P = I. Independent of the input dimension d by construction.
    pub fn from_combination(a: &DMatrix<f64>) -> Self {
        let k = a.ncols();
        Self {
            q: symmetrized(a * a.transpose()),
            m: a.clone(),
            rho: DMatrix::identity(k, k),
        }
    }

    /// State with Q = M = P: a student identical to the teacher (p = k).
    pub fn matched(rho: DMatrix<f64>) -> Self {
        Self {
            q: rho.clone(),
            m: rho.clone(),
            rho,
        }
    }

    /// Number of student units p.
    pub fn students(&self) -> usize {
        self.q.nrows()
    }

    /// Number of teacher units k.
    pub fn teachers(&self) -> usize {
        self.rho.nrows()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// Teacher-teacher overlap matrix P.
    pub fn rho(&self) -> &DMatrix<f64> {
        &self.rho
    }

    /// Assemble the full (p+k) x (p+k) block matrix Omega.
    pub fn omega(&self) -> DMatrix<f64> {
        let p = self.students();
        let k = self.teachers();
        let mut omega = DMatrix::zeros(p + k, p + k);
        omega.view_mut((0, 0), (p, p)).copy_from(&self.q);
        omega.view_mut((0, p), (p, k)).copy_from(&self.m);
        omega
            .view_mut((p, 0), (k, p))
            .copy_from(&self.m.transpose());
        omega.view_mut((p, p), (k, k)).copy_from(&self.rho);
        omega
    }

    /// Smallest eigenvalue of the symmetrized Omega.
    pub fn min_omega_eigenvalue(&self) -> f64 {
        let omega = symmetrized(self.omega());
        omega
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b))
    }
}

fn check_symmetry(m: &DMatrix<f64>) -> Result<()> {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max(libm::fabs(m[(i, j)] - m[(j, i)]));
        }
    }
    if worst > SYMMETRY_TOL {
        Err(Error::NotSymmetric {
            max_asymmetry: worst,
        })
    } else {
        Ok(())
    }
}

fn symmetrized(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Student (p x d) and teacher (k x d) weights of one finite-d configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrices {
    student: DMatrix<f64>,
    teacher: DMatrix<f64>,
}

impl WeightMatrices {
    pub fn new(student: DMatrix<f64>, teacher: DMatrix<f64>) -> Result<Self> {
        if student.ncols() != teacher.ncols() {
            return Err(Error::DimensionMismatch {
                context: "weight matrices",
                expected: (student.nrows(), student.ncols()),
                found: (teacher.nrows(), teacher.ncols()),
            });
        }
        Ok(Self { student, teacher })
    }

    pub fn student(&self) -> &DMatrix<f64> {
        &self.student
    }

    pub fn student_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.student
    }

    pub fn teacher(&self) -> &DMatrix<f64> {
        &self.teacher
    }

    pub fn input_dim(&self) -> usize {
        self.student.ncols()
    }

    pub fn overlaps(&self) -> Result<OverlapState> {
        overlap_from_weights(&self.student, &self.teacher)
    }
}

/// Q = W W^T / d, M = W W*^T / d, P = W* W*^T / d, symmetrized.
pub fn overlap_from_weights(student: &DMatrix<f64>, teacher: &DMatrix<f64>) -> Result<OverlapState> {
    if student.ncols() != teacher.ncols() {
        return Err(Error::DimensionMismatch {
            context: "overlap_from_weights",
            expected: (student.nrows(), student.ncols()),
            found: (teacher.nrows(), teacher.ncols()),
        });
    }
    let d = student.ncols() as f64;
    let q = symmetrized(student * student.transpose() / d);
    let m = student * teacher.transpose() / d;
    let rho = symmetrized(teacher * teacher.transpose() / d);
    Ok(OverlapState::from_parts_unchecked(q, m, rho))
}
