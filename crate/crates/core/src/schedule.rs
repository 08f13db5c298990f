//! Closed-form coefficient schedules and the discrete reverse-process grid.
//!
//! All three model variants share one parameter set:
//!
//! | variant | interpolation `λ(τ)` | scale `α(τ)`          | SD `G(τ)`            |
//! |---------|----------------------|-----------------------|----------------------|
//! | VPIDM   | `e^{−γτ}`            | `e^{−½∫β}`            | `√(1 − α²)`          |
//! | VPDM    | `1`                  | `e^{−½∫β}`            | `√(1 − α²)`          |
//! | VEIDM   | `e^{−γτ}`            | `1`                   | geometric σ schedule |
//!
//! with `β(τ) = (β_max − β_min)τ + β_min`. Derivatives are analytic.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Vpidm,
    Vpdm,
    Veidm,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vpidm" => Ok(Self::Vpidm),
            "vpdm" => Ok(Self::Vpdm),
            "veidm" => Ok(Self::Veidm),
            other => Err(Error::InvalidConfig(format!("unknown variant '{other}'"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Vpidm => "vpidm",
            Self::Vpdm => "vpdm",
            Self::Veidm => "veidm",
        })
    }
}

/// Geometric noise scale for the VE variant. The SD is
/// `G(τ) = √(σ(τ)² − σ_min²)` with `σ(τ) = σ_min·(σ_max/σ_min)^τ`, so that
/// `G(0) = 0` and the state starts at the clean spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VeSigma {
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for VeSigma {
    fn default() -> Self {
        Self {
            sigma_min: 0.05,
            sigma_max: 0.5,
        }
    }
}

impl VeSigma {
    fn sigma(&self, tau: f64) -> f64 {
        self.sigma_min * (self.sigma_max / self.sigma_min).powf(tau)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub gamma: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    #[serde(rename = "T")]
    pub t_max: f64,
    pub epsilon: f64,
    pub variant: Variant,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ve_sigma: Option<VeSigma>,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            gamma: 1.5,
            beta_min: 0.1,
            beta_max: 2.0,
            t_max: 1.0,
            epsilon: 0.04,
            variant: Variant::Vpidm,
            ve_sigma: None,
        }
    }
}

impl Schedule {
    pub fn vpdm() -> Self {
        Self {
            variant: Variant::Vpdm,
            ..Self::default()
        }
    }

    pub fn veidm() -> Self {
        Self {
            variant: Variant::Veidm,
            ve_sigma: Some(VeSigma::default()),
            ..Self::default()
        }
    }

    pub fn with_variant(self, variant: Variant) -> Self {
        let ve_sigma = match variant {
            Variant::Veidm => self.ve_sigma.or(Some(VeSigma::default())),
            _ => self.ve_sigma,
        };
        Self {
            variant,
            ve_sigma,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if !(self.beta_min >= 0.0 && self.beta_max >= self.beta_min && self.beta_max.is_finite()) {
            return bad(format!(
                "need 0 <= beta_min <= beta_max, got {} and {}",
                self.beta_min, self.beta_max
            ));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return bad(format!("T must be positive, got {}", self.t_max));
        }
        if !(self.epsilon > 0.0 && self.epsilon < self.t_max) {
            return bad(format!("epsilon must lie in (0, T), got {}", self.epsilon));
        }
        if let Some(ve) = self.ve_sigma {
            if !(ve.sigma_min > 0.0 && ve.sigma_max > ve.sigma_min) {
                return bad(format!(
                    "need 0 < sigma_min < sigma_max, got {} and {}",
                    ve.sigma_min, ve.sigma_max
                ));
            }
        }
        Ok(())
    }

    pub fn check_tau(&self, tau: f64) -> Result<()> {
        if !(0.0..=self.t_max).contains(&tau) {
            return Err(Error::TauOutOfRange {
                tau,
                lo: 0.0,
                hi: self.t_max,
            });
        }
        Ok(())
    }

    fn interpolates(&self) -> bool {
        self.variant != Variant::Vpdm
    }

    fn preserves_variance(&self) -> bool {
        self.variant != Variant::Veidm
    }

    fn ve(&self) -> Result<VeSigma> {
        self.ve_sigma.ok_or_else(|| {
            Error::InvalidConfig("VEIDM needs a configured ve_sigma schedule".into())
        })
    }

    pub fn beta(&self, tau: f64) -> f64 {
        (self.beta_max - self.beta_min) * tau + self.beta_min
    }

    /// `∫₀^τ β(s) ds`.
    pub fn beta_integral(&self, tau: f64) -> f64 {
        0.5 * (self.beta_max - self.beta_min) * tau * tau + self.beta_min * tau
    }

    pub fn lambda(&self, tau: f64) -> Result<f64> {
        self.check_tau(tau)?;
        Ok(if self.interpolates() {
            (-self.gamma * tau).exp()
        } else {
            1.0
        })
    }

    /// Interpolating coefficient `η = 1 − λ`.
    pub fn eta(&self, tau: f64) -> Result<f64> {
        self.check_tau(tau)?;
        Ok(if self.interpolates() {
            -(-self.gamma * tau).exp_m1()
        } else {
            0.0
        })
    }

    pub fn alpha(&self, tau: f64) -> Result<f64> {
        self.check_tau(tau)?;
        Ok(if self.preserves_variance() {
            (-0.5 * self.beta_integral(tau)).exp()
        } else {
            1.0
        })
    }

    /// Gaussian SD coefficient `G(τ)`.
    pub fn sd(&self, tau: f64) -> Result<f64> {
        self.check_tau(tau)?;
        if self.preserves_variance() {
            Ok((-(-self.beta_integral(tau)).exp_m1()).sqrt())
        } else {
            let ve = self.ve()?;
            Ok((ve.sigma(tau).powi(2) - ve.sigma_min.powi(2)).max(0.0).sqrt())
        }
    }

    pub fn dlog_alpha(&self, tau: f64) -> Result<f64> {
        self.check_tau(tau)?;
        Ok(if self.preserves_variance() {
            -0.5 * self.beta(tau)
        } else {
            0.0
        })
    }

    pub fn dlog_lambda(&self, tau: f64) -> Result<f64> {
        self.check_tau(tau)?;
        Ok(if self.interpolates() { -self.gamma } else { 0.0 })
    }

    /// `d ln(α·λ)/dτ`.
    pub fn dlog_alpha_lambda(&self, tau: f64) -> Result<f64> {
        Ok(self.dlog_alpha(tau)? + self.dlog_lambda(tau)?)
    }

    pub fn deta(&self, tau: f64) -> Result<f64> {
        self.check_tau(tau)?;
        Ok(if self.interpolates() {
            self.gamma * (-self.gamma * tau).exp()
        } else {
            0.0
        })
    }

    /// `dG²/dτ`.
    pub fn dsd_sqr(&self, tau: f64) -> Result<f64> {
        self.check_tau(tau)?;
        if self.preserves_variance() {
            Ok(self.beta(tau) * (-self.beta_integral(tau)).exp())
        } else {
            let ve = self.ve()?;
            Ok(2.0 * (ve.sigma_max / ve.sigma_min).ln() * ve.sigma(tau).powi(2))
        }
    }

    /// Evenly spaced reverse-process grid over `[ε, T]`.
    pub fn grid(&self, k: usize) -> Result<Grid> {
        Grid::new(self.epsilon, self.t_max, k)
    }

    /// Hex SHA-256 of the canonical JSON encoding, used to tie checkpoints to
    /// the schedule they were trained under.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("schedule serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    delta: f64,
    taus: Vec<f64>,
}

impl Grid {
    pub fn new(epsilon: f64, t_max: f64, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidConfig(format!("grid needs K >= 2, got {k}")));
        }
        if !(epsilon < t_max) {
            return Err(Error::InvalidConfig(format!(
                "grid needs epsilon < T, got {epsilon} and {t_max}"
            )));
        }
        let delta = (t_max - epsilon) / (k - 1) as f64;
        let mut taus: Vec<f64> = (0..k).map(|i| i as f64 * delta + epsilon).collect();
        taus[k - 1] = t_max;
        Ok(Self { delta, taus })
    }

    /// Number of grid points `K`.
    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `τ_k` for the 1-based index `k`.
    pub fn tau(&self, k: usize) -> f64 {
        self.taus[k - 1]
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }
}
