//! Population risk from the overlap state, decomposed into teacher, student
//! and cross contributions.

use crate::error::{Error, Result};
use crate::kernels::{assemble_covariance, i2_sigma_sigma, CovarianceSelector, FieldSide};
use crate::overlap::OverlapState;

/// Normalisation of the reported risk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RiskConvention {
    /// (1/2) E[(fhat - f)^2], the squared-loss population risk.
    #[default]
    Half,
    /// E[(fhat - f)^2], the plain mean squared deviation.
    Plain,
}

impl RiskConvention {
    pub fn as_str(&self) -> &'static str {
        match self {
            RiskConvention::Half => "half",
            RiskConvention::Plain => "plain",
        }
    }
}

/// Population risk and its decomposition
/// total = (1/2)(teacher_term + student_term + cross_term)
/// under the default half convention; the three terms are the plain second
/// moments E[f^2], E[fhat^2] and -2 E[fhat f].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskValue {
    pub total: f64,
    pub teacher_term: f64,
    pub student_term: f64,
    pub cross_term: f64,
}

/// Analytic population risk under the default half convention.
pub fn population_risk(state: &OverlapState) -> Result<RiskValue> {
    population_risk_with(state, RiskConvention::Half)
}

/// Analytic population risk. Each pairwise expectation is an arcsine kernel
/// of the corresponding 2x2 covariance block; the excluded noise floor
/// Delta/2 is not part of the reported value (the comparison is against the
/// clean teacher output).
pub fn population_risk_with(state: &OverlapState, convention: RiskConvention) -> Result<RiskValue> {
    let p = state.students();
    let k = state.teachers();
    for j in 0..p {
        if state.q()[(j, j)] < 0.0 {
            return Err(Error::NotPositiveSemidefinite {
                min_eigenvalue: state.q()[(j, j)],
            });
        }
    }
    for r in 0..k {
        if state.rho()[(r, r)] < 0.0 {
            return Err(Error::NotPositiveSemidefinite {
                min_eigenvalue: state.rho()[(r, r)],
            });
        }
    }

    // E[sigma sigma] = 2 * i2 (the kernel carries the loss's one-half).
    let moment = |a: (FieldSide, usize), b: (FieldSide, usize)| -> Result<f64> {
        let cov = assemble_covariance(state, &CovarianceSelector::pair(a, b))?;
        Ok(2.0 * i2_sigma_sigma(&cov)?)
    };

    let mut teacher_term = 0.0;
    for r in 0..k {
        for s in 0..k {
            teacher_term += moment((FieldSide::Teacher, r), (FieldSide::Teacher, s))?;
        }
    }
    teacher_term /= (k * k) as f64;

    let mut student_term = 0.0;
    for j in 0..p {
        for l in 0..p {
            student_term += moment((FieldSide::Student, j), (FieldSide::Student, l))?;
        }
    }
    student_term /= (p * p) as f64;

    let mut cross_term = 0.0;
    for j in 0..p {
        for r in 0..k {
            cross_term += moment((FieldSide::Student, j), (FieldSide::Teacher, r))?;
        }
    }
    cross_term *= -2.0 / (p * k) as f64;

    let sum = teacher_term + student_term + cross_term;
    let total = match convention {
        RiskConvention::Half => 0.5 * sum,
        RiskConvention::Plain => sum,
    };
    if !total.is_finite() {
        return Err(Error::NonFinite {
            context: "population risk",
        });
    }
    Ok(RiskValue {
        total,
        teacher_term,
        student_term,
        cross_term,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn matched_state_has_zero_risk() {
        let state = OverlapState::matched(DMatrix::identity(4, 4));
        let r = population_risk(&state).unwrap();
        assert!(r.total.abs() < 1e-15, "{}", r.total);
    }

    #[test]
    fn single_unit_orthogonal_student() {
        // p = k = 1, q = rho = 1, m = 0: both second moments are
        // 2 * asin(1/2) / pi = 1/3, the cross term vanishes.
        let state = OverlapState::from_parts_unchecked(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 0.0),
            DMatrix::from_element(1, 1, 1.0),
        );
        let r = population_risk(&state).unwrap();
        assert!((r.teacher_term - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.student_term - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.cross_term, 0.0);
        assert!((r.total - 1.0 / 3.0).abs() < 1e-15);
        let plain = population_risk_with(&state, RiskConvention::Plain).unwrap();
        assert!((plain.total - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn decomposition_identity_holds() {
        let a = DMatrix::from_fn(3, 2, |i, j| 0.3 * (i as f64) - 0.2 * (j as f64) + 0.1);
        let state = OverlapState::from_combination(&a);
        let r = population_risk(&state).unwrap();
        let sum = 0.5 * (r.teacher_term + r.student_term + r.cross_term);
        assert!((r.total - sum).abs() < 1e-14);
        assert!(r.total >= -1e-10);
    }
}
