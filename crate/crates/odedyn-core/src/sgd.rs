//! One-pass SGD in weight space at finite d, with overlap measurement and
//! analytic risk evaluation at recorded steps.

use alloc::vec;
use alloc::vec::Vec;
use libm::{ceil, exp, log, round, sqrt};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::init::{build_symmetric_teacher, init_student_combination, init_student_gaussian};
use crate::overlap::{overlap_from_weights, OverlapState};
use crate::risk::{population_risk_with, RiskConvention};
use crate::rng::{stream, DOMAIN_DATA};
use crate::scaling::ScalingConfig;

/// Student weight initialization of a simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudentInit {
    /// W0 = A W* with ball-sampled combination rows; the initial overlaps
    /// are then independent of d.
    Combination,
    /// I.i.d. standard normal entries.
    Gaussian,
}

impl StudentInit {
    pub fn as_str(&self) -> &'static str {
        match self {
            StudentInit::Combination => "combination",
            StudentInit::Gaussian => "gaussian",
        }
    }
}

/// Independent seeds of the three random ingredients of a run. Keeping them
/// separate lets studies fix the initialization while varying the data
/// stream (or vice versa).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub teacher: u64,
    pub init: u64,
    pub data: u64,
}

impl RunSeeds {
    pub fn from_master(seed: u64) -> Self {
        Self {
            teacher: seed,
            init: seed,
            data: seed,
        }
    }
}

/// State of one one-pass SGD run: configuration, weights, step counter and
/// the schedule of steps at which (t, risk) is recorded.
pub struct SimRun {
    config: ScalingConfig,
    seeds: RunSeeds,
    width: usize,
    k: usize,
    d: usize,
    gamma: f64,
    dt: f64,
    sqrt_noise: f64,
    step: u64,
    /// Row-major p x d student weights.
    w: Vec<f64>,
    /// Row-major k x d teacher weights.
    w_star: Vec<f64>,
    recorder: Vec<u64>,
    // scratch buffers of the update
    x: Vec<f64>,
    lambda: Vec<f64>,
    lambda_star: Vec<f64>,
}

impl SimRun {
    pub fn new(config: &ScalingConfig, init: StudentInit, seeds: RunSeeds) -> Result<Self> {
        let d = config.d();
        let k = config.k();
        let width = config.width();
        let teacher = build_symmetric_teacher(k, d, seeds.teacher)?;
        let student = match init {
            StudentInit::Combination => init_student_combination(&teacher, width, seeds.init)?.0,
            StudentInit::Gaussian => init_student_gaussian(width, d, seeds.init),
        };
        Ok(Self {
            gamma: config.learning_rate(),
            dt: config.time_step(),
            sqrt_noise: sqrt(config.noise()),
            config: config.clone(),
            seeds,
            width,
            k,
            d,
            step: 0,
            w: row_major(&student),
            w_star: row_major(&teacher),
            recorder: Vec::new(),
            x: vec![0.0; d],
            lambda: vec![0.0; width],
            lambda_star: vec![0.0; k],
        })
    }

    pub fn with_recorder(mut self, schedule: Vec<u64>) -> Self {
        self.recorder = schedule;
        self
    }

    pub fn config(&self) -> &ScalingConfig {
        &self.config
    }

    pub fn seeds(&self) -> RunSeeds {
        self.seeds
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Regime time t = nu * dt of the current step.
    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn time_step(&self) -> f64 {
        self.dt
    }

    pub fn recorder(&self) -> &[u64] {
        &self.recorder
    }

    pub fn student_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.width, self.d, &self.w)
    }

    pub fn teacher_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.k, self.d, &self.w_star)
    }

    /// Overlaps of the current weights, recomputed from scratch.
    pub fn overlap_state(&self) -> Result<OverlapState> {
        overlap_from_weights(&self.student_matrix(), &self.teacher_matrix())
    }

    /// Apply the update for a given sample; exposed so tests can drive the
    /// recursion with a known (x, zeta).
    pub fn sgd_step_with_sample(&mut self, x: &[f64], zeta: f64) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                context: "sgd sample",
                expected: (1, self.d),
                found: (1, x.len()),
            });
        }
        self.x.copy_from_slice(x);
        self.apply_current_sample(zeta)
    }

    fn apply_current_sample(&mut self, zeta: f64) -> Result<()> {
        let d = self.d;
        let inv_sqrt_d = 1.0 / sqrt(d as f64);
        for (j, lam) in self.lambda.iter_mut().enumerate() {
            *lam = dot(&self.w[j * d..(j + 1) * d], &self.x) * inv_sqrt_d;
        }
        for (r, lam) in self.lambda_star.iter_mut().enumerate() {
            *lam = dot(&self.w_star[r * d..(r + 1) * d], &self.x) * inv_sqrt_d;
        }
        let mut teacher_out = 0.0;
        for &l in &self.lambda_star {
            teacher_out += crate::kernels::sigma(l);
        }
        let mut student_out = 0.0;
        for &l in &self.lambda {
            student_out += crate::kernels::sigma(l);
        }
        let error = teacher_out / self.k as f64 - student_out / self.width as f64
            + self.sqrt_noise * zeta;
        if !error.is_finite() {
            return Err(Error::Blowup {
                time: self.time(),
                context: "prediction error",
            });
        }
        let base = self.gamma / (self.width as f64 * sqrt(d as f64));
        for j in 0..self.width {
            let coef = base * crate::kernels::sigma_prime(self.lambda[j]) * error;
            axpy(&mut self.w[j * d..(j + 1) * d], coef, &self.x);
        }
        self.step += 1;
        Ok(())
    }
}

/// One online update with a fresh sample: x ~ N(0, I_d) and zeta ~ N(0, 1)
/// drawn from the step's own stream (x first, then zeta), never reused.
pub fn sgd_step(run: &mut SimRun) -> Result<()> {
    let mut rng = stream(run.seeds.data, DOMAIN_DATA, run.step);
    for xi in run.x.iter_mut() {
        *xi = rng.sample(StandardNormal);
    }
    let zeta = rng.sample(StandardNormal);
    run.apply_current_sample(zeta)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        let base = 4 * i;
        acc[0] += a[base] * b[base];
        acc[1] += a[base + 1] * b[base + 1];
        acc[2] += a[base + 2] * b[base + 2];
        acc[3] += a[base + 3] * b[base + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..n {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += a * xi;
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Time-indexed record of a simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdTrajectory {
    pub steps: Vec<u64>,
    pub times: Vec<f64>,
    pub risks: Vec<f64>,
    pub states: Option<Vec<OverlapState>>,
}

impl SgdTrajectory {
    pub fn terminal_risk(&self) -> f64 {
        *self.risks.last().expect("non-empty trajectory")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdOptions {
    pub t_end: f64,
    pub record_points: usize,
    pub record_states: bool,
    pub convention: RiskConvention,
}

impl SgdOptions {
    pub fn new(t_end: f64, record_points: usize) -> Self {
        Self {
            t_end,
            record_points,
            record_states: false,
            convention: RiskConvention::Half,
        }
    }

    pub fn with_states(mut self) -> Self {
        self.record_states = true;
        self
    }
}

/// Hybrid geometric + linear recording schedule: dense early (the curves
/// span decades in t), evenly spaced late. Always contains 0 and n.
pub fn record_schedule(n: u64, points: usize) -> Vec<u64> {
    let points = points.max(2);
    let mut steps = vec![0u64, n];
    if n > 1 {
        let geo = (points / 2).max(2);
        let lnn = log(n as f64);
        for i in 0..geo {
            let s = round(exp(lnn * i as f64 / (geo - 1) as f64)) as u64;
            steps.push(s.min(n));
        }
        let lin = (points - points / 2).max(2);
        for i in 0..lin {
            steps.push((n as f64 * i as f64 / (lin - 1) as f64) as u64);
        }
    }
    steps.sort_unstable();
    steps.dedup();
    steps
}

/// Run one-pass SGD for t_end regime-time units, recording the analytic
/// risk of the measured overlaps at the scheduled steps.
pub fn run_sgd(
    config: &ScalingConfig,
    init: StudentInit,
    seeds: RunSeeds,
    opts: &SgdOptions,
) -> Result<SgdTrajectory> {
    if !(opts.t_end > 0.0) {
        return Err(Error::InvalidParameter {
            name: "t_end",
            value: opts.t_end,
        });
    }
    let dt = config.time_step();
    let steps_f = ceil(opts.t_end / dt);
    if !(steps_f >= 1.0) || steps_f > 9.0e15 {
        return Err(Error::InvalidParameter {
            name: "total steps",
            value: steps_f,
        });
    }
    let n = steps_f as u64;
    let schedule = record_schedule(n, opts.record_points);
    let mut run = SimRun::new(config, init, seeds)?.with_recorder(schedule.clone());

    let mut steps = Vec::with_capacity(schedule.len());
    let mut times = Vec::with_capacity(schedule.len());
    let mut risks = Vec::with_capacity(schedule.len());
    let mut states = opts.record_states.then(Vec::new);

    let mut next = 0usize;
    for nu in 0..=n {
        if next < schedule.len() && schedule[next] == nu {
            let state = run.overlap_state()?;
            let risk = population_risk_with(&state, opts.convention)?.total;
            if !risk.is_finite() {
                return Err(Error::Blowup {
                    time: run.time(),
                    context: "risk",
                });
            }
            steps.push(nu);
            times.push(nu as f64 * dt);
            risks.push(risk);
            if let Some(v) = states.as_mut() {
                v.push(state);
            }
            next += 1;
        }
        if nu == n {
            break;
        }
        sgd_step(&mut run)?;
    }
    Ok(SgdTrajectory {
        steps,
        times,
        risks,
        states,
    })
}

/// Plateau estimate over the final window of recorded points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauEstimate {
    pub mean: f64,
    pub std: f64,
    /// Relative spread below 1/2; when false the trajectory has visibly not
    /// plateaued and the estimate should be treated as suspect.
    pub plateaued: bool,
}

/// Mean and standard deviation of the risk over the final `window_fraction`
/// of recorded points.
pub fn asymptotic_risk(risks: &[f64], window_fraction: f64) -> Result<PlateauEstimate> {
    if risks.is_empty() {
        return Err(Error::InvalidParameter {
            name: "trajectory length",
            value: 0.0,
        });
    }
    if !(window_fraction > 0.0 && window_fraction <= 0.5) {
        return Err(Error::InvalidParameter {
            name: "window_fraction",
            value: window_fraction,
        });
    }
    let count = (ceil(risks.len() as f64 * window_fraction) as usize).clamp(1, risks.len());
    let window = &risks[risks.len() - count..];
    let mean = window.iter().sum::<f64>() / count as f64;
    let std = if count > 1 {
        let var = window.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (count - 1) as f64;
        sqrt(var)
    } else {
        0.0
    };
    let plateaued = mean != 0.0 && std / libm::fabs(mean) < 0.5;
    Ok(PlateauEstimate {
        mean,
        std,
        plateaued: plateaued || std == 0.0,
    })
}
