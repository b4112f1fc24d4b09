//! Learning-rate and width scalings, the regime map, and the time-step rule.

use libm::{pow, round};

use crate::error::{Error, Result};

/// Tolerance for deciding kappa + delta == 0 exactly.
pub const REGIME_SUM_TOL: f64 = 1e-12;

/// Learning regime of a (kappa, delta) point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegimeLabel {
    /// kappa + delta > 0: the noise term vanishes, zero asymptotic risk.
    PerfectLearning,
    /// kappa + delta = 0: both terms survive, noise-level plateau.
    Plateau,
    /// -1/2 < kappa + delta < 0: the noise term dominates.
    BadLearning,
    /// kappa + delta <= -1/2: no deterministic limit is guaranteed.
    NoOde,
}

impl RegimeLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            RegimeLabel::PerfectLearning => "perfect-learning",
            RegimeLabel::Plateau => "plateau",
            RegimeLabel::BadLearning => "bad-learning",
            RegimeLabel::NoOde => "no-ode",
        }
    }
}

/// Partition of the (kappa, delta) plane by the sum s = kappa + delta.
///
/// The boundary s = -1/2 is assigned to `NoOde` (the convergence guarantee
/// is strict) and s = 0 to `Plateau`, compared at tolerance 1e-12.
pub fn classify_regime(kappa: f64, delta: f64) -> RegimeLabel {
    let s = kappa + delta;
    if s > REGIME_SUM_TOL {
        RegimeLabel::PerfectLearning
    } else if s >= -REGIME_SUM_TOL {
        RegimeLabel::Plateau
    } else if s > -0.5 {
        RegimeLabel::BadLearning
    } else {
        RegimeLabel::NoOde
    }
}

/// Dimension-dependent scalings of a run: gamma = gamma0 d^-delta and
/// p = round(p0 d^kappa), with the time step tied to the regime.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingConfig {
    d: usize,
    p0: usize,
    k: usize,
    kappa: f64,
    delta: f64,
    gamma0: f64,
    noise: f64,
}

impl ScalingConfig {
    /// gamma0 defaults to p0, the conventional choice; override with
    /// [`ScalingConfig::with_gamma0`].
    pub fn new(d: usize, p0: usize, k: usize, kappa: f64, delta: f64, noise: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter { name: "d", value: 0.0 });
        }
        if p0 == 0 {
            return Err(Error::InvalidParameter { name: "p0", value: 0.0 });
        }
        if k == 0 {
            return Err(Error::InvalidParameter { name: "k", value: 0.0 });
        }
        if !kappa.is_finite() || kappa < 0.0 {
            return Err(Error::InvalidParameter { name: "kappa", value: kappa });
        }
        if !delta.is_finite() {
            return Err(Error::InvalidParameter { name: "delta", value: delta });
        }
        if !noise.is_finite() || noise < 0.0 {
            return Err(Error::InvalidParameter { name: "noise", value: noise });
        }
        Ok(Self {
            d,
            p0,
            k,
            kappa,
            delta,
            gamma0: p0 as f64,
            noise,
        })
    }

    pub fn with_gamma0(mut self, gamma0: f64) -> Result<Self> {
        if !gamma0.is_finite() || gamma0 <= 0.0 {
            return Err(Error::InvalidParameter { name: "gamma0", value: gamma0 });
        }
        self.gamma0 = gamma0;
        Ok(self)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn p0(&self) -> usize {
        self.p0
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }

    /// Label-noise variance.
    pub fn noise(&self) -> f64 {
        self.noise
    }

    /// s = kappa + delta, the exponent controlling the regime.
    pub fn exponent_sum(&self) -> f64 {
        self.kappa + self.delta
    }

    pub fn regime(&self) -> RegimeLabel {
        classify_regime(self.kappa, self.delta)
    }

    /// Hidden-layer width p = round(p0 d^kappa), clamped to at least k
    /// (realizability).
    pub fn width(&self) -> usize {
        let raw = round(self.p0 as f64 * pow(self.d as f64, self.kappa)) as usize;
        raw.max(self.k)
    }

    /// Learning rate gamma = gamma0 d^-delta.
    pub fn learning_rate(&self) -> f64 {
        self.gamma0 * pow(self.d as f64, -self.delta)
    }

    /// Ratio gamma0/p0 entering the limit ODEs: the learning term carries
    /// one factor, the noise term two.
    pub fn gamma_ratio(&self) -> f64 {
        self.gamma0 / self.p0 as f64
    }

    /// Time step dt = max(d^-(1+s), d^-(1+2s)) with s = kappa + delta.
    pub fn time_step(&self) -> f64 {
        time_step(self.d, self.kappa, self.delta)
    }
}

/// dt = max(d^-(1+s), d^-(1+2s)); the slower clock always wins so that both
/// update terms stay bounded.
pub fn time_step(d: usize, kappa: f64, delta: f64) -> f64 {
    let s = kappa + delta;
    let df = d as f64;
    f64::max(pow(df, -(1.0 + s)), pow(df, -(1.0 + 2.0 * s)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regime_examples() {
        assert_eq!(classify_regime(0.0, 0.0), RegimeLabel::Plateau);
        assert_eq!(classify_regime(0.301, 0.0), RegimeLabel::PerfectLearning);
        assert_eq!(classify_regime(0.0, -0.375), RegimeLabel::BadLearning);
        assert_eq!(classify_regime(0.0, -0.6), RegimeLabel::NoOde);
        // boundary: exactly -1/2 has no ODE guarantee
        assert_eq!(classify_regime(0.0, -0.5), RegimeLabel::NoOde);
    }

    #[test]
    fn time_step_examples() {
        assert!((time_step(1000, 0.0, 0.0) - 1e-3).abs() < 1e-18);
        assert!((time_step(100, 0.25, 0.25) - 1e-3).abs() < 1e-15);
        assert!((time_step(100, 0.0, -0.25) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn width_rounds_and_clamps() {
        let c = ScalingConfig::new(100, 8, 4, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(c.width(), 8);
        let c = ScalingConfig::new(100, 1, 4, 0.301, 0.0, 0.0).unwrap();
        // 1 * 100^0.301 = 4.0004... -> 4
        assert_eq!(c.width(), 4);
        let c = ScalingConfig::new(2, 1, 4, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(c.width(), 4); // clamped to k
    }

    #[test]
    fn gamma_defaults_to_p0() {
        let c = ScalingConfig::new(1000, 8, 4, 0.0, 0.5, 0.0).unwrap();
        assert!((c.gamma_ratio() - 1.0).abs() < 1e-15);
        assert!((c.learning_rate() - 8.0 / 1000f64.sqrt()).abs() < 1e-12);
        let c = c.with_gamma0(4.0).unwrap();
        assert!((c.gamma_ratio() - 0.5).abs() < 1e-15);
    }
}
