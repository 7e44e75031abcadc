//! Validated parameter sets shared by every stage of the pipeline.

use crate::error::{out_of_range, Error, Result};
use crate::units::{gamma_nv, TWO_PI};

pub trait Validate {
    fn validate(&self) -> Result<()>;
}

fn positive(field: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(out_of_range(
            field,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

fn rel_eq(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityParams {
    /// Resonance frequency (rad/s).
    pub omega_c: f64,
    /// Field damping rate (rad/s).
    pub kappa: f64,
    /// Q = omega_c / (2 kappa).
    pub quality_factor: f64,
    pub eta: f64,
    /// Characteristic impedance (Ohm).
    pub z0: f64,
}

impl CavityParams {
    pub fn from_q(omega_c: f64, q: f64, eta: f64, z0: f64) -> Self {
        Self {
            omega_c,
            kappa: omega_c / (2.0 * q),
            quality_factor: q,
            eta,
            z0,
        }
    }

    pub fn from_kappa(omega_c: f64, kappa: f64, eta: f64, z0: f64) -> Self {
        Self {
            omega_c,
            kappa,
            quality_factor: omega_c / (2.0 * kappa),
            eta,
            z0,
        }
    }

    pub fn nominal() -> Self {
        Self::from_q(TWO_PI * 2.88e9, 80.0, 0.29, 26.0)
    }
}

impl Validate for CavityParams {
    fn validate(&self) -> Result<()> {
        positive("cavity.omega_c", self.omega_c)?;
        positive("cavity.kappa", self.kappa)?;
        positive("cavity.Z0", self.z0)?;
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(out_of_range(
                "cavity.eta",
                "filling factor out of range (0, 1]",
            ));
        }
        if !rel_eq(
            self.quality_factor,
            self.omega_c / (2.0 * self.kappa),
            1e-12,
        ) {
            return Err(Error::Inconsistent(format!(
                "Q = {} but omega_c/(2 kappa) = {}",
                self.quality_factor,
                self.omega_c / (2.0 * self.kappa)
            )));
        }
        Ok(())
    }
}

/// The two orientation classes of NV axes relative to the applied field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    NonOrth,
    Orth,
    Combined,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::NonOrth => "non_orth",
            Family::Orth => "orth",
            Family::Combined => "combined",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "non_orth" | "nonorth" | "No" => Some(Family::NonOrth),
            "orth" | "o" => Some(Family::Orth),
            "combined" | "both" => Some(Family::Combined),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NvParams {
    /// Zero-field splitting (rad/s).
    pub d: f64,
    /// Axial hyperfine constant (rad/s).
    pub a_hf: f64,
    /// Nuclear quadrupole constant (rad/s).
    pub q_nuc: f64,
    /// g mu_B / hbar (rad/(s T)).
    pub gamma_e: f64,
    /// |A_hf| / gamma_e (T).
    pub b_hfs: f64,
    /// Angle between NV axis and applied field, [non-orth, orth] (rad).
    pub alpha: [f64; 2],
}

impl NvParams {
    pub fn new(d: f64, a_hf: f64, q_nuc: f64, gamma_e: f64, alpha: [f64; 2]) -> Self {
        Self {
            d,
            a_hf,
            q_nuc,
            gamma_e,
            b_hfs: a_hf.abs() / gamma_e,
            alpha,
        }
    }

    pub fn nominal() -> Self {
        Self::new(
            TWO_PI * 2.8775e9,
            -TWO_PI * 2.1e6,
            -TWO_PI * 5.0e6,
            gamma_nv(),
            [35.3f64.to_radians(), 90f64.to_radians()],
        )
    }

    pub fn alpha_of(&self, family: Family) -> f64 {
        match family {
            Family::Orth => self.alpha[1],
            _ => self.alpha[0],
        }
    }
}

impl Validate for NvParams {
    fn validate(&self) -> Result<()> {
        positive("nv.D", self.d)?;
        positive("nv.gamma_e", self.gamma_e)?;
        if !self.a_hf.is_finite() || !self.q_nuc.is_finite() {
            return Err(out_of_range("nv.A_hf", "non-finite hyperfine constants"));
        }
        if !rel_eq(self.b_hfs, self.a_hf.abs() / self.gamma_e, 1e-12) {
            return Err(Error::Inconsistent("B_hfs != |A_hf| / gamma_e".into()));
        }
        Ok(())
    }
}

/// How the inhomogeneous frequency density is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityScheme {
    /// Exact probability mass per frequency bin from the cumulative
    /// distribution of the splitting, convolved with rho_D.
    BinMass,
    /// rho_b(b) db / d_omega0 summed over tensor grids in (E, D).
    FieldStep,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributionSpec {
    /// Lorentzian HWHM of the local field distribution (T).
    pub db0: f64,
    /// Lorentzian HWHM of the zero-field splitting distribution (rad/s).
    pub dd0: f64,
    pub e1: f64,
    pub e2: f64,
    pub a1: f64,
    /// Discretization scale; `None` means the omega-grid spacing.
    pub d_omega0: Option<f64>,
    /// Quadrature cutoff in units of each width.
    pub truncation_widths: f64,
    pub scheme: DensityScheme,
}

impl DistributionSpec {
    pub fn nominal() -> Self {
        Self {
            db0: 0.21e-4,
            dd0: TWO_PI * 0.15e6,
            e1: TWO_PI * 0.5e6,
            e2: TWO_PI * 10e6,
            a1: 0.2,
            d_omega0: None,
            truncation_widths: 30.0,
            scheme: DensityScheme::BinMass,
        }
    }
}

impl Validate for DistributionSpec {
    fn validate(&self) -> Result<()> {
        positive("distributions.db0", self.db0)?;
        positive("distributions.dD0", self.dd0)?;
        positive("distributions.E1", self.e1)?;
        positive("distributions.E2", self.e2)?;
        if !(self.a1 >= 0.0 && self.a1.is_finite()) {
            return Err(out_of_range("distributions.A1", "must be >= 0"));
        }
        if let Some(d) = self.d_omega0 {
            positive("distributions.d_omega0", d)?;
        }
        if !(self.truncation_widths >= 3.0) {
            return Err(out_of_range(
                "distributions.truncation_widths",
                "must be >= 3",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiExp {
    pub t2a: f64,
    pub t2b: f64,
    pub weight_a: f64,
    pub weight_b: f64,
}

impl BiExp {
    pub fn nominal() -> Self {
        Self {
            t2a: 4.7e-6,
            t2b: 14.3e-6,
            weight_a: 0.78,
            weight_b: 0.22,
        }
    }

    /// f(tau) = A exp(-2 tau / T2A) + B exp(-2 tau / T2B).
    pub fn f(&self, tau: f64) -> f64 {
        self.weight_a * (-2.0 * tau / self.t2a).exp()
            + self.weight_b * (-2.0 * tau / self.t2b).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoherenceSpec {
    pub gamma_perp: f64,
    pub gamma_par: f64,
    pub biexp: Option<BiExp>,
}

impl DecoherenceSpec {
    pub fn from_t2(t2: f64) -> Self {
        Self {
            gamma_perp: 1.0 / t2,
            gamma_par: 0.0,
            biexp: None,
        }
    }

    pub fn lossless() -> Self {
        Self {
            gamma_perp: 0.0,
            gamma_par: 0.0,
            biexp: None,
        }
    }

    pub fn nominal() -> Self {
        let b = BiExp::nominal();
        Self {
            gamma_perp: 1.0 / b.t2a,
            gamma_par: 0.0,
            biexp: Some(b),
        }
    }
}

impl Validate for DecoherenceSpec {
    fn validate(&self) -> Result<()> {
        if !(self.gamma_perp >= 0.0 && self.gamma_perp.is_finite()) {
            return Err(out_of_range("decoherence.gamma_perp", "must be >= 0"));
        }
        if !(self.gamma_par >= 0.0 && self.gamma_par.is_finite()) {
            return Err(out_of_range("decoherence.gamma_par", "must be >= 0"));
        }
        if let Some(b) = self.biexp {
            positive("decoherence.T2A", b.t2a)?;
            positive("decoherence.T2B", b.t2b)?;
            if b.weight_a < 0.0 || b.weight_b < 0.0 {
                return Err(out_of_range("decoherence.weight_A", "weights must be >= 0"));
            }
            if (b.weight_a + b.weight_b - 1.0).abs() > 1e-12 {
                return Err(out_of_range(
                    "decoherence.weight_B",
                    format!("weight_A + weight_B = {} != 1", b.weight_a + b.weight_b),
                ));
            }
        }
        Ok(())
    }
}
