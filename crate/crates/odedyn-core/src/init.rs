//! Teacher and student weight initialization.

use alloc::vec::Vec;
use libm::{pow, sqrt};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::rng::{stream, DOMAIN_STUDENT_INIT, DOMAIN_TEACHER};

/// How far P may deviate from the identity before combination init refuses.
pub const TEACHER_ORTHO_TOL: f64 = 1e-8;
/// Smallest singular value (relative to sqrt(d)) below which the sampled
/// teacher directions count as rank-deficient and are redrawn.
const TEACHER_RANK_TOL: f64 = 1e-8;

/// Uniform point in the unit ball of the given dimension: normalized
/// Gaussian direction scaled by U^(1/dim).
pub fn sample_unit_ball(dim: usize, rng: &mut Xoshiro256PlusPlus) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if norm > 0.0 && norm.is_finite() {
            let radius = pow(rng.random::<f64>(), 1.0 / dim as f64);
            return v.iter().map(|x| x / norm * radius).collect();
        }
    }
}

/// Teacher with exactly orthonormal rows: w*_r . w*_s / d = delta_rs.
///
/// Samples k vectors uniformly on the radius-sqrt(d) ball, orthonormalizes
/// the row space by SVD, and rescales every row to norm sqrt(d). Redraws on
/// the (probability-zero) event that the sample is numerically rank-deficient.
pub fn build_symmetric_teacher(k: usize, d: usize, seed: u64) -> Result<DMatrix<f64>> {
    if k > d {
        return Err(Error::TeacherRankExceedsDimension { k, d });
    }
    if k == 0 || d == 0 {
        return Err(Error::InvalidParameter {
            name: "teacher shape",
            value: 0.0,
        });
    }
    let mut rng = stream(seed, DOMAIN_TEACHER, 0);
    let sqrt_d = sqrt(d as f64);
    for _ in 0..64 {
        let mut b = DMatrix::zeros(k, d);
        for r in 0..k {
            let row = sample_unit_ball(d, &mut rng);
            for (c, v) in row.iter().enumerate() {
                b[(r, c)] = v * sqrt_d;
            }
        }
        let svd = b.svd(false, true);
        let smallest = svd
            .singular_values
            .iter()
            .fold(f64::INFINITY, |a, &s| a.min(s));
        if smallest < TEACHER_RANK_TOL * sqrt_d {
            continue;
        }
        let v_t = svd.v_t.expect("requested V^T");
        return Ok(v_t * sqrt_d);
    }
    Err(Error::NonFinite {
        context: "teacher sampling (persistent rank deficiency)",
    })
}

/// Combination coefficients: p rows sampled uniformly in the k-dimensional
/// unit ball.
pub fn combination_matrix(p: usize, k: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream(seed, DOMAIN_STUDENT_INIT, 0);
    let mut a = DMatrix::zeros(p, k);
    for j in 0..p {
        let row = sample_unit_ball(k, &mut rng);
        for (c, v) in row.iter().enumerate() {
            a[(j, c)] = *v;
        }
    }
    a
}

/// Student start W0 = A W* with ball-sampled rows of A. The resulting
/// overlaps are q0_jl = sum_r a_jr a_lr and m0_jr = a_jr, independent of d.
///
/// Returns (W0, A). Requires the teacher to satisfy P = I within 1e-8.
pub fn init_student_combination(
    teacher: &DMatrix<f64>,
    p: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let k = teacher.nrows();
    let d = teacher.ncols() as f64;
    let gram = teacher * teacher.transpose() / d;
    let mut worst = 0.0f64;
    for r in 0..k {
        for s in 0..k {
            let target = if r == s { 1.0 } else { 0.0 };
            worst = worst.max(libm::fabs(gram[(r, s)] - target));
        }
    }
    if worst > TEACHER_ORTHO_TOL {
        return Err(Error::TeacherNotOrthonormal {
            max_deviation: worst,
        });
    }
    let a = combination_matrix(p, k, seed);
    let w0 = &a * teacher;
    Ok((w0, a))
}

/// Unconstrained start: every entry i.i.d. standard normal (row-major fill).
pub fn init_student_gaussian(p: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream(seed, DOMAIN_STUDENT_INIT, 0);
    let mut w = DMatrix::zeros(p, d);
    for j in 0..p {
        for c in 0..d {
            w[(j, c)] = rng.sample(StandardNormal);
        }
    }
    w
}
