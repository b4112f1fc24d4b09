//! Deterministic drift of the overlap dynamics and its fixed-step integrator.
//!
//! The drift splits into a learning part (the gradient-flow terms, linear in
//! the prediction error) and a noise part (the variance terms, quadratic in
//! it). Which parts enter, and with which dimension-dependent prefactor, is
//! selected by [`OdeMode`].

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernels::{
    assemble_covariance, i3_dsigma_lambda_sigma, i4_dsigma_dsigma, i4_dsigma_dsigma_sigma_sigma,
    CovarianceSelector, FieldSide,
};
use crate::overlap::OverlapState;
use crate::risk::{population_risk_with, RiskConvention};
use crate::scaling::{RegimeLabel, ScalingConfig};

/// Integration aborts once the state dips below this eigenvalue.
pub const ODE_PSD_GUARD: f64 = -1e-6;
/// Directional risk derivative along the noiseless drift must stay below
/// this for the gradient-flow consistency check to pass.
pub const GRADIENT_FLOW_TOL: f64 = 1e-10;

/// Which drift terms to integrate, in which regime time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdeMode {
    /// Learning + noise in t_0 time; exact on the kappa + delta = 0 line.
    PlateauFull,
    /// Learning only, in t_(kappa+delta) time; the kappa + delta > 0 limit.
    GreenLeading,
    /// Noise only, in t_2(kappa+delta) time, with M frozen; the
    /// -1/2 < kappa + delta < 0 limit.
    OrangeLeading,
    /// Both terms with the explicit finite-d prefactors of the rewritten
    /// update equations divided by the time step.
    FiniteD,
}

impl OdeMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            OdeMode::PlateauFull => "plateau",
            OdeMode::GreenLeading => "green",
            OdeMode::OrangeLeading => "orange",
            OdeMode::FiniteD => "finite-d",
        }
    }

    /// The regime whose scaling limit this mode describes.
    pub fn matches_regime(&self, regime: RegimeLabel) -> bool {
        match self {
            OdeMode::PlateauFull => regime == RegimeLabel::Plateau,
            OdeMode::GreenLeading => regime == RegimeLabel::PerfectLearning,
            OdeMode::OrangeLeading => regime == RegimeLabel::BadLearning,
            OdeMode::FiniteD => regime != RegimeLabel::NoOde,
        }
    }
}

/// Whether rhs/integrate enforce mode-regime consistency. `Override`
/// corresponds to an explicit user request to run a mode off its regime
/// (e.g. solving all three limits at one phase-diagram point).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModeGuard {
    #[default]
    Enforce,
    Override,
}

/// The three drift blocks, before mode prefactors.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftComponents {
    /// E[E_j l_l + E_l l_j], symmetric p x p.
    pub learning_q: DMatrix<f64>,
    /// E[E_j l*_r], p x k.
    pub learning_m: DMatrix<f64>,
    /// E[E_j E_l] including the Delta E[sigma' sigma'] term, symmetric p x p.
    pub noise_q: DMatrix<f64>,
}

fn drift_err(row: usize, col: usize) -> impl FnOnce(Error) -> Error {
    move |source| Error::Drift {
        row,
        col,
        source: Box::new(source),
    }
}

/// Learning (gradient-flow) terms of the q- and m-updates.
pub fn learning_drift(state: &OverlapState) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = state.students();
    let k = state.teachers();
    let inv_k = 1.0 / k as f64;
    let inv_p = 1.0 / p as f64;

    // e[j][l] = E[E_j lambda_l]
    let mut e = DMatrix::zeros(p, p);
    for j in 0..p {
        for l in 0..p {
            let mut teacher_sum = 0.0;
            for r in 0..k {
                let cov = assemble_covariance(
                    state,
                    &CovarianceSelector::triple(
                        (FieldSide::Student, j),
                        (FieldSide::Student, l),
                        (FieldSide::Teacher, r),
                    ),
                )
                .map_err(drift_err(j, l))?;
                teacher_sum += i3_dsigma_lambda_sigma(&cov).map_err(drift_err(j, l))?;
            }
            let mut student_sum = 0.0;
            for lp in 0..p {
                let cov = assemble_covariance(
                    state,
                    &CovarianceSelector::triple(
                        (FieldSide::Student, j),
                        (FieldSide::Student, l),
                        (FieldSide::Student, lp),
                    ),
                )
                .map_err(drift_err(j, l))?;
                student_sum += i3_dsigma_lambda_sigma(&cov).map_err(drift_err(j, l))?;
            }
            e[(j, l)] = inv_k * teacher_sum - inv_p * student_sum;
        }
    }
    let learning_q = &e + e.transpose();

    let mut learning_m = DMatrix::zeros(p, k);
    for j in 0..p {
        for r in 0..k {
            let mut teacher_sum = 0.0;
            for rp in 0..k {
                let cov = assemble_covariance(
                    state,
                    &CovarianceSelector::triple(
                        (FieldSide::Student, j),
                        (FieldSide::Teacher, r),
                        (FieldSide::Teacher, rp),
                    ),
                )
                .map_err(drift_err(j, r))?;
                teacher_sum += i3_dsigma_lambda_sigma(&cov).map_err(drift_err(j, r))?;
            }
            let mut student_sum = 0.0;
            for lp in 0..p {
                let cov = assemble_covariance(
                    state,
                    &CovarianceSelector::triple(
                        (FieldSide::Student, j),
                        (FieldSide::Teacher, r),
                        (FieldSide::Student, lp),
                    ),
                )
                .map_err(drift_err(j, r))?;
                student_sum += i3_dsigma_lambda_sigma(&cov).map_err(drift_err(j, r))?;
            }
            learning_m[(j, r)] = inv_k * teacher_sum - inv_p * student_sum;
        }
    }
    Ok((learning_q, learning_m))
}

/// Variance terms E[E_j E_l]: teacher-teacher, student-student and cross
/// four-point sums plus the label-noise contribution Delta E[sigma' sigma'].
pub fn noise_drift(state: &OverlapState, delta: f64) -> Result<DMatrix<f64>> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "noise",
            value: delta,
        });
    }
    let p = state.students();
    let k = state.teachers();
    let mut noise_q = DMatrix::zeros(p, p);
    for j in 0..p {
        for l in j..p {
            let sj = (FieldSide::Student, j);
            let sl = (FieldSide::Student, l);
            let wrap = drift_err(j, l);

            let mut tt = 0.0;
            for r in 0..k {
                for rp in 0..k {
                    let cov = assemble_covariance(
                        state,
                        &CovarianceSelector::quad(
                            sj,
                            sl,
                            (FieldSide::Teacher, r),
                            (FieldSide::Teacher, rp),
                        ),
                    )?;
                    tt += i4_dsigma_dsigma_sigma_sigma(&cov)?;
                }
            }
            let mut ss = 0.0;
            for a in 0..p {
                for b in 0..p {
                    let cov = assemble_covariance(
                        state,
                        &CovarianceSelector::quad(
                            sj,
                            sl,
                            (FieldSide::Student, a),
                            (FieldSide::Student, b),
                        ),
                    )?;
                    ss += i4_dsigma_dsigma_sigma_sigma(&cov)?;
                }
            }
            let mut ts = 0.0;
            for r in 0..k {
                for b in 0..p {
                    let cov = assemble_covariance(
                        state,
                        &CovarianceSelector::quad(
                            sj,
                            sl,
                            (FieldSide::Teacher, r),
                            (FieldSide::Student, b),
                        ),
                    )?;
                    ts += i4_dsigma_dsigma_sigma_sigma(&cov)?;
                }
            }
            let pair = assemble_covariance(state, &CovarianceSelector::pair(sj, sl))?;
            let label = delta * i4_dsigma_dsigma(&pair)?;

            let value = (tt / (k * k) as f64) + (ss / (p * p) as f64)
                - 2.0 * ts / (p * k) as f64
                + label;
            if !value.is_finite() {
                return Err(wrap(Error::NonFinite {
                    context: "noise drift entry",
                }));
            }
            noise_q[(j, l)] = value;
            noise_q[(l, j)] = value;
        }
    }
    Ok(noise_q)
}

/// Both drift blocks of a state.
pub fn drift_components(state: &OverlapState, delta: f64) -> Result<DriftComponents> {
    let (learning_q, learning_m) = learning_drift(state)?;
    let noise_q = noise_drift(state, delta)?;
    Ok(DriftComponents {
        learning_q,
        learning_m,
        noise_q,
    })
}

/// Time derivative (dQ/dt, dM/dt) of a state under the given mode, in that
/// mode's regime time. The learning term carries one factor gamma0/p0 and
/// the noise term two; `FiniteD` instead uses the exact finite-d
/// coefficients gamma/(p d dt) and gamma^2/(p^2 d dt).
pub fn rhs(
    state: &OverlapState,
    mode: OdeMode,
    config: &ScalingConfig,
    guard: ModeGuard,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_mode(mode, config, guard)?;
    if state.students() != config.width() || state.teachers() != config.k() {
        return Err(Error::DimensionMismatch {
            context: "rhs state vs config",
            expected: (config.width(), config.k()),
            found: (state.students(), state.teachers()),
        });
    }
    let g = config.gamma_ratio();
    match mode {
        OdeMode::GreenLeading => {
            let (lq, lm) = learning_drift(state)?;
            Ok((lq * g, lm * g))
        }
        OdeMode::OrangeLeading => {
            let nq = noise_drift(state, config.noise())?;
            let p = state.students();
            let k = state.teachers();
            Ok((nq * (g * g), DMatrix::zeros(p, k)))
        }
        OdeMode::PlateauFull => {
            let (lq, lm) = learning_drift(state)?;
            let nq = noise_drift(state, config.noise())?;
            Ok((lq * g + nq * (g * g), lm * g))
        }
        OdeMode::FiniteD => {
            let (lq, lm) = learning_drift(state)?;
            let nq = noise_drift(state, config.noise())?;
            let d = config.d() as f64;
            let gamma = config.learning_rate();
            let width = config.width() as f64;
            let dt = config.time_step();
            let c_learn = gamma / (width * d * dt);
            let c_noise = gamma * gamma / (width * width * d * dt);
            Ok((lq * c_learn + nq * c_noise, lm * c_learn))
        }
    }
}

fn check_mode(mode: OdeMode, config: &ScalingConfig, guard: ModeGuard) -> Result<()> {
    let regime = config.regime();
    match guard {
        ModeGuard::Override => {
            // Even overridden, the red region has no defined ODE.
            if regime == RegimeLabel::NoOde {
                return Err(Error::RegimeMismatch {
                    mode: mode.as_str(),
                    regime: regime.as_str(),
                });
            }
            Ok(())
        }
        ModeGuard::Enforce => {
            if mode.matches_regime(regime) {
                Ok(())
            } else {
                Err(Error::RegimeMismatch {
                    mode: mode.as_str(),
                    regime: regime.as_str(),
                })
            }
        }
    }
}

/// Time-indexed record of an integration.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeTrajectory {
    /// Regime-time instants of the recorded points, strictly increasing.
    pub times: Vec<f64>,
    pub risks: Vec<f64>,
    /// Full state snapshots at the recording stride, when requested.
    pub states: Option<Vec<OverlapState>>,
}

impl OdeTrajectory {
    pub fn terminal_risk(&self) -> f64 {
        *self.risks.last().expect("non-empty trajectory")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    pub t_end: f64,
    pub dt: f64,
    /// Record every this many steps (step 0 and the final step always).
    pub record_stride: usize,
    pub record_states: bool,
    pub guard: ModeGuard,
    pub convention: RiskConvention,
}

impl IntegrateOptions {
    pub fn new(t_end: f64, dt: f64, record_stride: usize) -> Self {
        Self {
            t_end,
            dt,
            record_stride,
            record_states: false,
            guard: ModeGuard::Enforce,
            convention: RiskConvention::Half,
        }
    }

    pub fn with_states(mut self) -> Self {
        self.record_states = true;
        self
    }

    pub fn with_guard(mut self, guard: ModeGuard) -> Self {
        self.guard = guard;
        self
    }
}

/// Classical fixed-step RK4 on (Q, M) with P frozen. Aborts if the state
/// leaves the PSD cone beyond [`ODE_PSD_GUARD`] or turns non-finite.
pub fn integrate(
    state0: &OverlapState,
    mode: OdeMode,
    config: &ScalingConfig,
    opts: &IntegrateOptions,
) -> Result<OdeTrajectory> {
    if !(opts.t_end > 0.0) || !(opts.dt > 0.0) {
        return Err(Error::InvalidParameter {
            name: "t_end/dt",
            value: opts.dt,
        });
    }
    if opts.record_stride == 0 {
        return Err(Error::InvalidParameter {
            name: "record_stride",
            value: 0.0,
        });
    }
    check_mode(mode, config, opts.guard)?;
    let p = state0.students();
    let k = state0.teachers();
    let rho = state0.rho().clone();
    let dim = p * p + p * k;
    let steps = libm::round(opts.t_end / opts.dt).max(1.0) as usize;

    let unpack = |y: &[f64]| -> OverlapState {
        let q = DMatrix::from_row_slice(p, p, &y[..p * p]);
        let m = DMatrix::from_row_slice(p, k, &y[p * p..]);
        OverlapState::from_parts_unchecked(q, m, rho.clone())
    };

    let mut y = vec![0.0f64; dim];
    pack(state0.q(), state0.m(), &mut y);

    let mut derivative = |yv: &[f64], out: &mut [f64]| -> Result<()> {
        let state = unpack(yv);
        let (dq, dm) = rhs(&state, mode, config, opts.guard)?;
        pack(&dq, &dm, out);
        Ok(())
    };

    let mut ws = Rk4Workspace::new(dim);
    let mut times = Vec::new();
    let mut risks = Vec::new();
    let mut states: Option<Vec<OverlapState>> = opts.record_states.then(Vec::new);

    for step in 0..=steps {
        let t = step as f64 * opts.dt;
        if step % opts.record_stride == 0 || step == steps {
            let state = unpack(&y);
            let risk = population_risk_with(&state, opts.convention)?.total;
            if !risk.is_finite() {
                return Err(Error::Blowup {
                    time: t,
                    context: "risk",
                });
            }
            times.push(t);
            risks.push(risk);
            if let Some(v) = states.as_mut() {
                v.push(state);
            }
        }
        if step == steps {
            break;
        }
        rk4_step(&mut derivative, &mut y, opts.dt, &mut ws)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Blowup {
                time: t + opts.dt,
                context: "overlap state",
            });
        }
        let min_eig = unpack(&y).min_omega_eigenvalue();
        if min_eig < ODE_PSD_GUARD {
            return Err(Error::PsdViolation {
                time: t + opts.dt,
                min_eigenvalue: min_eig,
            });
        }
    }
    Ok(OdeTrajectory {
        times,
        risks,
        states,
    })
}

fn pack(q: &DMatrix<f64>, m: &DMatrix<f64>, out: &mut [f64]) {
    let p = q.nrows();
    let k = m.ncols();
    for i in 0..p {
        for j in 0..p {
            out[i * p + j] = q[(i, j)];
        }
    }
    let base = p * p;
    for i in 0..p {
        for j in 0..k {
            out[base + i * k + j] = m[(i, j)];
        }
    }
}

/// Scratch buffers for [`rk4_step`].
pub struct Rk4Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Workspace {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }
}

/// One classical RK4 step of the autonomous system y' = f(y).
pub fn rk4_step<F>(f: &mut F, y: &mut [f64], dt: f64, ws: &mut Rk4Workspace) -> Result<()>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let n = y.len();
    f(y, &mut ws.k1)?;
    for i in 0..n {
        ws.tmp[i] = y[i] + 0.5 * dt * ws.k1[i];
    }
    f(&ws.tmp, &mut ws.k2)?;
    for i in 0..n {
        ws.tmp[i] = y[i] + 0.5 * dt * ws.k2[i];
    }
    f(&ws.tmp, &mut ws.k3)?;
    for i in 0..n {
        ws.tmp[i] = y[i] + dt * ws.k3[i];
    }
    f(&ws.tmp, &mut ws.k4)?;
    let w = dt / 6.0;
    for i in 0..n {
        y[i] += w * (ws.k1[i] + 2.0 * ws.k2[i] + 2.0 * ws.k3[i] + ws.k4[i]);
    }
    Ok(())
}

/// Result of the gradient-flow consistency probe at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientFlowReport {
    /// Central-difference directional derivative of the risk along the
    /// noiseless (learning) drift.
    pub directional_derivative: f64,
    /// Infinity norm of the learning drift used as the direction.
    pub drift_norm: f64,
    pub epsilon: f64,
    /// directional_derivative <= [`GRADIENT_FLOW_TOL`].
    pub non_increasing: bool,
}

/// The learning terms coincide with the gradient-flow drift, so the risk
/// cannot increase along them. Probes d/dt R by central differences with
/// step `epsilon` along (learning_q, learning_m).
pub fn gradient_flow_consistency_check(
    state: &OverlapState,
    epsilon: f64,
) -> Result<GradientFlowReport> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            value: epsilon,
        });
    }
    let (lq, lm) = learning_drift(state)?;
    let drift_norm = lq
        .iter()
        .chain(lm.iter())
        .fold(0.0f64, |a, &b| a.max(libm::fabs(b)));
    let shifted = |sign: f64| -> OverlapState {
        OverlapState::from_parts_unchecked(
            state.q() + &lq * (sign * epsilon),
            state.m() + &lm * (sign * epsilon),
            state.rho().clone(),
        )
    };
    let plus = population_risk_with(&shifted(1.0), RiskConvention::Half)?.total;
    let minus = population_risk_with(&shifted(-1.0), RiskConvention::Half)?.total;
    let directional_derivative = (plus - minus) / (2.0 * epsilon);
    Ok(GradientFlowReport {
        directional_derivative,
        drift_norm,
        epsilon,
        non_increasing: directional_derivative <= GRADIENT_FLOW_TOL,
    })
}

