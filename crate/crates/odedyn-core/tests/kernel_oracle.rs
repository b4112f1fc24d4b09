//! Closed-form kernels against the Monte Carlo oracle, plus the algebraic
//! kernel properties (symmetry, odd parity, clamp margins).

use odedyn_core::kernels::{
    assemble_covariance, i2_sigma_sigma, i3_dsigma_lambda_sigma, i4_dsigma_dsigma,
    i4_dsigma_dsigma_sigma_sigma, mc_kernel_oracle, random_psd_covariance, CovarianceSelector,
    FieldSide, KernelCovariance, KernelKind,
};
use odedyn_core::overlap::OverlapState;

fn cov_from(entries: &[&[f64]]) -> KernelCovariance {
    let n = entries.len();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| entries[i][j]);
    KernelCovariance::from_matrix(&m).unwrap()
}

#[test]
fn i2_off_diagonal_value_and_oracle() {
    let cov = cov_from(&[&[0.5, 0.3], &[0.3, 2.0]]);
    let closed = i2_sigma_sigma(&cov).unwrap();
    assert!((closed - 0.04516723530086655).abs() < 1e-14, "{closed}");
    let mc = mc_kernel_oracle(KernelKind::SigmaSigma, &cov, 10_000_000, 11).unwrap();
    assert!(
        mc.z_score(closed).abs() < 3.0,
        "closed {closed} vs mc {} +- {}",
        mc.mean,
        mc.stderr
    );
}

#[test]
fn i3_random_psd_matches_oracle() {
    for trial in 0..4 {
        let cov = random_psd_covariance(3, 0.1, 3.0, 100, trial);
        let closed = i3_dsigma_lambda_sigma(&cov).unwrap();
        let mc = mc_kernel_oracle(KernelKind::DsigmaLambdaSigma, &cov, 1_000_000, trial).unwrap();
        assert!(
            mc.z_score(closed).abs() < 4.0,
            "trial {trial}: closed {closed} vs mc {} +- {}",
            mc.mean,
            mc.stderr
        );
    }
}

#[test]
fn i4_random_psd_matches_oracle() {
    // Guards the corrected B2 term: the as-published index pattern is tens
    // of sigma away from the sampled expectation on generic covariances.
    for trial in 0..4 {
        let cov = random_psd_covariance(4, 0.1, 3.0, 200, trial);
        let closed = i4_dsigma_dsigma_sigma_sigma(&cov).unwrap();
        let mc =
            mc_kernel_oracle(KernelKind::DsigmaDsigmaSigmaSigma, &cov, 1_000_000, trial).unwrap();
        assert!(
            mc.z_score(closed).abs() < 4.0,
            "trial {trial}: closed {closed} vs mc {} +- {}",
            mc.mean,
            mc.stderr
        );
    }
}

#[test]
fn i4p_oracle_at_identity() {
    let cov = cov_from(&[&[1.0, 0.0], &[0.0, 1.0]]);
    let mc = mc_kernel_oracle(KernelKind::DsigmaDsigma, &cov, 1_000_000, 5).unwrap();
    assert!(mc.z_score(1.0 / std::f64::consts::PI).abs() < 3.0);
}

#[test]
fn light_closed_vs_oracle_sweep() {
    // Reduced-sample version of the acceptance kernel suite for fast
    // feedback; the full 50 x 1e6 sweep runs in the acceptance tests.
    for (kind, order) in [
        (KernelKind::SigmaSigma, 2),
        (KernelKind::DsigmaLambdaSigma, 3),
        (KernelKind::DsigmaDsigma, 2),
        (KernelKind::DsigmaDsigmaSigmaSigma, 4),
    ] {
        let mut failures = 0;
        for trial in 0..20 {
            let cov = random_psd_covariance(order, 0.1, 3.0, 300 + trial, trial);
            let closed = kind.closed_form(&cov).unwrap();
            let mc = mc_kernel_oracle(kind, &cov, 200_000, trial).unwrap();
            if mc.z_score(closed).abs() > 3.5 {
                failures += 1;
            }
        }
        assert!(failures <= 2, "{}: {failures}/20 beyond 3.5 sigma", kind.as_str());
    }
}

#[test]
fn swap_symmetry_on_random_covariances() {
    for trial in 0..1000 {
        let c2 = random_psd_covariance(2, 0.1, 3.0, 400, trial);
        let swapped = cov_from(&[
            &[c2.entry(1, 1), c2.entry(0, 1)],
            &[c2.entry(0, 1), c2.entry(0, 0)],
        ]);
        let a = i2_sigma_sigma(&c2).unwrap();
        let b = i2_sigma_sigma(&swapped).unwrap();
        assert!((a - b).abs() <= 1e-12);
        let a = i4_dsigma_dsigma(&c2).unwrap();
        let b = i4_dsigma_dsigma(&swapped).unwrap();
        assert!((a - b).abs() <= 1e-12);

        let c4 = random_psd_covariance(4, 0.1, 3.0, 500, trial);
        let perm = |p: [usize; 4]| {
            let m = nalgebra::DMatrix::from_fn(4, 4, |i, j| c4.entry(p[i], p[j]));
            KernelCovariance::from_matrix(&m).unwrap()
        };
        let base = i4_dsigma_dsigma_sigma_sigma(&c4).unwrap();
        let s12 = i4_dsigma_dsigma_sigma_sigma(&perm([1, 0, 2, 3])).unwrap();
        let s34 = i4_dsigma_dsigma_sigma_sigma(&perm([0, 1, 3, 2])).unwrap();
        assert!((base - s12).abs() <= 1e-12);
        assert!((base - s34).abs() <= 1e-12);
    }
}

#[test]
fn i3_is_odd_in_the_sigma_slot() {
    for trial in 0..200 {
        let c = random_psd_covariance(3, 0.1, 3.0, 600, trial);
        let negated = cov_from(&[
            &[c.entry(0, 0), c.entry(0, 1), -c.entry(0, 2)],
            &[c.entry(0, 1), c.entry(1, 1), -c.entry(1, 2)],
            &[-c.entry(0, 2), -c.entry(1, 2), c.entry(2, 2)],
        ]);
        let a = i3_dsigma_lambda_sigma(&c).unwrap();
        let b = i3_dsigma_lambda_sigma(&negated).unwrap();
        assert!((a + b).abs() <= 1e-12, "trial {trial}: {a} vs {b}");
    }
}

#[test]
fn arcsine_arguments_stay_interior_for_strict_psd() {
    for trial in 0..500 {
        let c = random_psd_covariance(2, 0.1, 3.0, 700, trial);
        let min_eig = c
            .to_matrix()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        if min_eig < 1e-6 {
            continue;
        }
        let arg = c.entry(0, 1) / ((1.0 + c.entry(0, 0)) * (1.0 + c.entry(1, 1))).sqrt();
        assert!(arg.abs() <= 1.0 - 1e-12, "trial {trial}: {arg}");

        let c4 = random_psd_covariance(4, 0.1, 3.0, 800, trial);
        let min_eig = c4
            .to_matrix()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        if min_eig < 1e-6 {
            continue;
        }
        // reproduce the 4-point arcsine argument
        let o = |i: usize, j: usize| c4.entry(i - 1, j - 1);
        let b0 = (1.0 + o(1, 1)) * (1.0 + o(2, 2)) - o(1, 2) * o(1, 2);
        let b1 = b0 * o(3, 4)
            - o(2, 3) * o(2, 4) * (1.0 + o(1, 1))
            - o(1, 3) * o(1, 4) * (1.0 + o(2, 2))
            + o(1, 2) * o(1, 3) * o(2, 4)
            + o(1, 2) * o(1, 4) * o(2, 3);
        let b2 = b0 * (1.0 + o(3, 3))
            - o(2, 3) * o(2, 3) * (1.0 + o(1, 1))
            - o(1, 3) * o(1, 3) * (1.0 + o(2, 2))
            + 2.0 * o(1, 2) * o(1, 3) * o(2, 3);
        let b3 = b0 * (1.0 + o(4, 4))
            - o(2, 4) * o(2, 4) * (1.0 + o(1, 1))
            - o(1, 4) * o(1, 4) * (1.0 + o(2, 2))
            + 2.0 * o(1, 2) * o(1, 4) * o(2, 4);
        let arg = b1 / (b2 * b3).sqrt();
        assert!(arg.abs() <= 1.0 - 1e-12, "trial {trial}: {arg}");
    }
}

#[test]
fn assemble_covariance_picks_the_right_blocks() {
    let a = nalgebra::DMatrix::from_row_slice(3, 2, &[0.4, 0.1, -0.2, 0.5, 0.3, 0.3]);
    let state = OverlapState::from_combination(&a);
    // same student twice: [[q_jj, q_jj], [q_jj, q_jj]]
    let sel = CovarianceSelector::pair((FieldSide::Student, 1), (FieldSide::Student, 1));
    let cov = assemble_covariance(&state, &sel).unwrap();
    let qjj = state.q()[(1, 1)];
    for i in 0..2 {
        for j in 0..2 {
            assert_eq!(cov.entry(i, j), qjj);
        }
    }
    // student-teacher off-diagonal is m_jr
    let sel = CovarianceSelector::pair((FieldSide::Student, 2), (FieldSide::Teacher, 0));
    let cov = assemble_covariance(&state, &sel).unwrap();
    assert_eq!(cov.entry(0, 1), state.m()[(2, 0)]);
    assert_eq!(cov.entry(1, 1), state.rho()[(0, 0)]);
    // order-3 (j, l, r') block matches the written-out matrix
    let (j, l, rp) = (0usize, 2usize, 1usize);
    let sel = CovarianceSelector::triple(
        (FieldSide::Student, j),
        (FieldSide::Student, l),
        (FieldSide::Teacher, rp),
    );
    let cov = assemble_covariance(&state, &sel).unwrap();
    let expect = [
        [state.q()[(j, j)], state.q()[(j, l)], state.m()[(j, rp)]],
        [state.q()[(j, l)], state.q()[(l, l)], state.m()[(l, rp)]],
        [state.m()[(j, rp)], state.m()[(l, rp)], state.rho()[(rp, rp)]],
    ];
    for i in 0..3 {
        for jj in 0..3 {
            assert_eq!(cov.entry(i, jj), expect[i][jj]);
        }
    }
    // out-of-range index
    let sel = CovarianceSelector::pair((FieldSide::Teacher, 5), (FieldSide::Student, 0));
    assert!(assemble_covariance(&state, &sel).is_err());
}

#[test]
fn oracle_hits_known_targets() {
    let ones = cov_from(&[&[1.0, 1.0], &[1.0, 1.0]]);
    let mc = mc_kernel_oracle(KernelKind::SigmaSigma, &ones, 1_000_000, 3).unwrap();
    assert!(mc.z_score(1.0 / 6.0).abs() < 3.0);
    // n below the floor is rejected
    assert!(mc_kernel_oracle(KernelKind::SigmaSigma, &ones, 10, 3).is_err());
}
