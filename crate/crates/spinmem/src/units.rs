//! Physical constants and unit conversion.
//!
//! Internally everything is SI with angular frequencies in rad/s. Config
//! files may carry a unit suffix on any number; conversion happens here.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const TWO_PI: f64 = 2.0 * PI;
/// Reduced Planck constant (J s).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Vacuum permeability (T m / A).
pub const MU0: f64 = 1.256_637_062_12e-6;
/// Bohr magneton over Planck constant (Hz/T).
pub const MU_B_OVER_H: f64 = 13.996_244_942e9;
/// NV electron g-factor.
pub const G_NV: f64 = 2.0028;
/// Carbon atom density of diamond (1/m^3).
pub const DIAMOND_CARBON_DENSITY: f64 = 1.7633e29;

/// Electron gyromagnetic constant g_NV mu_B / hbar in rad/(s T).
pub fn gamma_nv() -> f64 {
    TWO_PI * G_NV * MU_B_OVER_H
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dim {
    Frequency,
    Field,
    Power,
    Time,
    Length,
    Angle,
    Resistance,
    Concentration,
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    Hz,
    KHz,
    MHz,
    GHz,
    RadPerS,
    Tesla,
    MilliTesla,
    MicroTesla,
    Gauss,
    DBm,
    Watt,
    PhotonsPerS,
    Second,
    MilliSecond,
    MicroSecond,
    NanoSecond,
    Meter,
    MilliMeter,
    MicroMeter,
    NanoMeter,
    Degree,
    Radian,
    Ohm,
    PerCubicMeter,
    Ppm,
    One,
}

impl Unit {
    pub fn dim(self) -> Dim {
        use Unit::*;
        match self {
            Hz | KHz | MHz | GHz | RadPerS => Dim::Frequency,
            Tesla | MilliTesla | MicroTesla | Gauss => Dim::Field,
            DBm | Watt | PhotonsPerS => Dim::Power,
            Second | MilliSecond | MicroSecond | NanoSecond => Dim::Time,
            Meter | MilliMeter | MicroMeter | NanoMeter => Dim::Length,
            Degree | Radian => Dim::Angle,
            Ohm => Dim::Resistance,
            PerCubicMeter | Ppm => Dim::Concentration,
            One => Dim::Scalar,
        }
    }

    /// Multiplier to the SI base of the dimension (rad/s, T, s, m, rad,
    /// Ohm, 1/m^3). Power units are not linear and return None.
    fn scale(self) -> Option<f64> {
        use Unit::*;
        Some(match self {
            Hz => TWO_PI,
            KHz => TWO_PI * 1e3,
            MHz => TWO_PI * 1e6,
            GHz => TWO_PI * 1e9,
            RadPerS => 1.0,
            Tesla => 1.0,
            MilliTesla => 1e-3,
            MicroTesla => 1e-6,
            Gauss => 1e-4,
            Second => 1.0,
            MilliSecond => 1e-3,
            MicroSecond => 1e-6,
            NanoSecond => 1e-9,
            Meter => 1.0,
            MilliMeter => 1e-3,
            MicroMeter => 1e-6,
            NanoMeter => 1e-9,
            Degree => PI / 180.0,
            Radian => 1.0,
            Ohm => 1.0,
            PerCubicMeter => 1.0,
            Ppm => 1e-6 * DIAMOND_CARBON_DENSITY,
            One => 1.0,
            DBm | Watt | PhotonsPerS => return None,
        })
    }

    pub fn symbol(self) -> &'static str {
        use Unit::*;
        match self {
            Hz => "Hz",
            KHz => "kHz",
            MHz => "MHz",
            GHz => "GHz",
            RadPerS => "rad/s",
            Tesla => "T",
            MilliTesla => "mT",
            MicroTesla => "uT",
            Gauss => "Gs",
            DBm => "dBm",
            Watt => "W",
            PhotonsPerS => "photons/s",
            Second => "s",
            MilliSecond => "ms",
            MicroSecond => "us",
            NanoSecond => "ns",
            Meter => "m",
            MilliMeter => "mm",
            MicroMeter => "um",
            NanoMeter => "nm",
            Degree => "deg",
            Radian => "rad",
            Ohm => "Ohm",
            PerCubicMeter => "m^-3",
            Ppm => "ppm",
            One => "",
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Unit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        use Unit::*;
        Ok(match s {
            "Hz" => Hz,
            "kHz" => KHz,
            "MHz" => MHz,
            "GHz" => GHz,
            "rad/s" => RadPerS,
            "T" => Tesla,
            "mT" => MilliTesla,
            "uT" | "µT" => MicroTesla,
            "Gs" | "G" => Gauss,
            "dBm" => DBm,
            "W" => Watt,
            "mW" => return Err(Error::Unit("use W or dBm".into())),
            "photons/s" => PhotonsPerS,
            "s" => Second,
            "ms" => MilliSecond,
            "us" | "µs" => MicroSecond,
            "ns" => NanoSecond,
            "m" => Meter,
            "mm" => MilliMeter,
            "um" | "µm" => MicroMeter,
            "nm" => NanoMeter,
            "deg" => Degree,
            "rad" => Radian,
            "Ohm" | "ohm" => Ohm,
            "m^-3" => PerCubicMeter,
            "ppm" => Ppm,
            "" => One,
            other => return Err(Error::Unit(format!("unknown unit '{other}'"))),
        })
    }
}

fn to_watts(value: f64, unit: Unit, carrier: Option<f64>) -> Result<f64> {
    match unit {
        Unit::Watt => Ok(value),
        Unit::DBm => Ok(1e-3 * 10f64.powf(value / 10.0)),
        Unit::PhotonsPerS => Ok(value * HBAR * need_carrier(carrier)?),
        _ => unreachable!(),
    }
}

fn from_watts(w: f64, unit: Unit, carrier: Option<f64>) -> Result<f64> {
    match unit {
        Unit::Watt => Ok(w),
        Unit::DBm => Ok(10.0 * (w / 1e-3).log10()),
        Unit::PhotonsPerS => Ok(w / (HBAR * need_carrier(carrier)?)),
        _ => unreachable!(),
    }
}

fn need_carrier(carrier: Option<f64>) -> Result<f64> {
    match carrier {
        Some(w) if w > 0.0 => Ok(w),
        _ => Err(Error::Unit(
            "photon flux needs a positive carrier frequency".into(),
        )),
    }
}

/// Convert `value` between units of the same dimension. Power conversions
/// involving photon flux use |beta|^2 = P / (hbar omega) with `carrier` the
/// angular carrier frequency.
pub fn unit_convert(value: f64, from: Unit, to: Unit, carrier: Option<f64>) -> Result<f64> {
    if from.dim() != to.dim() {
        return Err(Error::Unit(format!("{from:?} -> {to:?}")));
    }
    if from == to {
        return Ok(value);
    }
    if from.dim() == Dim::Power {
        let w = to_watts(value, from, carrier)?;
        return from_watts(w, to, carrier);
    }
    let (a, b) = (from.scale().unwrap(), to.scale().unwrap());
    Ok(value * a / b)
}

/// Incident photon flux |beta|^2 for a power given in dBm.
pub fn dbm_to_flux(p_dbm: f64, omega: f64) -> f64 {
    1e-3 * 10f64.powf(p_dbm / 10.0) / (HBAR * omega)
}

pub fn flux_to_dbm(flux: f64, omega: f64) -> f64 {
    10.0 * (flux * HBAR * omega / 1e-3).log10()
}

/// A number with an optional unit suffix, e.g. `2.88 GHz` or `-40.6dBm`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantity {
    pub value: f64,
    pub unit: Unit,
}

impl Quantity {
    pub fn new(value: f64, unit: Unit) -> Self {
        Self { value, unit }
    }

    /// Value in the SI base of its dimension. Power maps to photons/s and
    /// needs the carrier.
    pub fn si(&self, carrier: Option<f64>) -> Result<f64> {
        match self.unit.dim() {
            Dim::Power => unit_convert(self.value, self.unit, Unit::PhotonsPerS, carrier),
            _ => Ok(self.value * self.unit.scale().unwrap()),
        }
    }
}

impl FromStr for Quantity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let split = s
            .char_indices()
            .find(|&(_, c)| c.is_alphabetic() || c == 'µ')
            .map(|(i, c)| {
                // an exponent marker followed by a digit or sign is part of the number
                if (c == 'e' || c == 'E')
                    && s[i + 1..]
                        .chars()
                        .next()
                        .is_some_and(|d| d.is_ascii_digit() || d == '-' || d == '+')
                {
                    s[i + 1..]
                        .char_indices()
                        .skip(1)
                        .find(|&(_, d)| !d.is_ascii_digit())
                        .map(|(j, _)| i + 1 + j)
                        .unwrap_or(s.len())
                } else {
                    i
                }
            })
            .unwrap_or(s.len());
        let (num, unit) = s.split_at(split);
        let value: f64 = num
            .trim()
            .parse()
            .map_err(|_| Error::Unit(format!("no number in '{}'", s.trim())))?;
        Ok(Quantity {
            value,
            unit: unit.trim().parse()?,
        })
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.unit {
            Unit::One => write!(f, "{}", self.value),
            u => write!(f, "{} {}", self.value, u),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_to_millitesla() {
        let v = unit_convert(0.21, Unit::Gauss, Unit::MilliTesla, None).unwrap();
        assert!((v - 0.021).abs() < 1e-15);
    }

    #[test]
    fn zero_dbm_is_one_milliwatt_of_photons() {
        let w = TWO_PI * 2.88e9;
        let v = unit_convert(0.0, Unit::DBm, Unit::PhotonsPerS, Some(w)).unwrap();
        assert!((v / (1e-3 / (HBAR * w)) - 1.0).abs() < 1e-14);
        assert!(unit_convert(0.0, Unit::DBm, Unit::PhotonsPerS, None).is_err());
    }

    #[test]
    fn angular_identity() {
        let v = unit_convert(TWO_PI * 18e6, Unit::RadPerS, Unit::MHz, None).unwrap();
        assert!((v - 18.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_dimensions_rejected() {
        assert!(unit_convert(1.0, Unit::MHz, Unit::Tesla, None).is_err());
    }

    #[test]
    fn parse_quantities() {
        let q: Quantity = "2.88 GHz".parse().unwrap();
        assert_eq!(q, Quantity::new(2.88, Unit::GHz));
        let q: Quantity = "-40.6dBm".parse().unwrap();
        assert_eq!(q, Quantity::new(-40.6, Unit::DBm));
        let q: Quantity = "1.5e-6 s".parse().unwrap();
        assert_eq!(q, Quantity::new(1.5e-6, Unit::Second));
        let q: Quantity = "2e3".parse().unwrap();
        assert_eq!(q, Quantity::new(2e3, Unit::One));
        let q: Quantity = "3E+2 rad/s".parse().unwrap();
        assert_eq!(q, Quantity::new(300.0, Unit::RadPerS));
        assert!("12 furlongs".parse::<Quantity>().is_err());
    }

    #[test]
    fn gyromagnetic_constant() {
        assert!((gamma_nv() / TWO_PI / 28.0317e9 - 1.0).abs() < 1e-5);
    }
}
