//! Piecewise drive waveforms.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::params::Validate;

/// Default raised-cosine edge length.
pub const DEFAULT_RAMP: f64 = 10e-9;

/// A pulse with complex amplitude beta = beta_R + i beta_I, in sqrt(photons/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub t_start: f64,
    pub duration: f64,
    pub beta: Complex64,
    /// Carrier detuning from the rotating frame (rad/s).
    pub detuning: f64,
    /// Raised-cosine edge length (s); clipped to half the duration.
    pub ramp: f64,
}

impl Segment {
    pub fn new(t_start: f64, duration: f64, amplitude: f64, phase: f64, detuning: f64) -> Self {
        Self {
            t_start,
            duration,
            beta: Complex64::from_polar(amplitude, phase),
            detuning,
            ramp: DEFAULT_RAMP,
        }
    }

    pub fn with_ramp(mut self, ramp: f64) -> Self {
        self.ramp = ramp;
        self
    }

    pub fn t_end(&self) -> f64 {
        self.t_start + self.duration
    }

    pub fn center(&self) -> f64 {
        self.t_start + 0.5 * self.duration
    }

    fn eff_ramp(&self) -> f64 {
        self.ramp.min(0.5 * self.duration).max(0.0)
    }

    pub fn envelope(&self, t: f64) -> f64 {
        let x = t - self.t_start;
        if x < 0.0 || x > self.duration {
            return 0.0;
        }
        let r = self.eff_ramp();
        if r == 0.0 {
            return 1.0;
        }
        let edge = x.min(self.duration - x);
        if edge >= r {
            1.0
        } else {
            0.5 * (1.0 - (PI * edge / r).cos())
        }
    }

    /// Field amplitude at absolute time t. The carrier phase is referenced to
    /// t = 0 so that all pulses share one phase-coherent source.
    pub fn beta_at(&self, t: f64) -> Complex64 {
        let e = self.envelope(t);
        if e == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        self.beta * e * Complex64::from_polar(1.0, -self.detuning * t)
    }

    /// Integral of |beta|^2 over the pulse (photons).
    pub fn energy(&self) -> f64 {
        let r = self.eff_ramp();
        self.beta.norm_sqr() * (self.duration - 1.25 * r)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DriveWaveform {
    pub segments: Vec<Segment>,
}

impl DriveWaveform {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let w = Self { segments };
        w.validate()?;
        Ok(w)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn beta_at(&self, t: f64) -> Complex64 {
        let mut b = Complex64::new(0.0, 0.0);
        for s in &self.segments {
            if t >= s.t_start && t <= s.t_end() {
                b += s.beta_at(t);
            }
        }
        b
    }

    pub fn t_end(&self) -> f64 {
        self.segments.iter().map(|s| s.t_end()).fold(0.0, f64::max)
    }

    pub fn max_amplitude(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| s.beta.norm())
            .fold(0.0, f64::max)
    }

    /// Multiply every amplitude by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            segments: self
                .segments
                .iter()
                .map(|g| Segment {
                    beta: g.beta * s,
                    ..*g
                })
                .collect(),
        }
    }
}

impl Validate for DriveWaveform {
    fn validate(&self) -> Result<()> {
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.duration > 0.0 && s.t_start.is_finite() && s.duration.is_finite()) {
                return Err(Error::Sequence(format!("segment {i}: bad timing")));
            }
            if !(s.beta.re.is_finite() && s.beta.im.is_finite() && s.detuning.is_finite()) {
                return Err(Error::Sequence(format!(
                    "segment {i}: non-finite amplitude"
                )));
            }
            if !(s.ramp >= 0.0) {
                return Err(Error::Sequence(format!("segment {i}: negative ramp")));
            }
        }
        for (i, w) in self.segments.windows(2).enumerate() {
            if w[1].t_start < w[0].t_end() {
                return Err(Error::Sequence(format!(
                    "segments {i} and {} overlap or are out of order",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_shape() {
        let s = Segment::new(1.0, 1.0, 2.0, 0.0, 0.0).with_ramp(0.1);
        assert_eq!(s.envelope(0.99), 0.0);
        assert_eq!(s.envelope(1.5), 1.0);
        assert!((s.envelope(1.05) - 0.5).abs() < 1e-12);
        assert!((s.envelope(1.95) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn energy_matches_quadrature() {
        let s = Segment::new(0.0, 1.0, 3.0, 0.4, 5.0).with_ramp(0.2);
        let n = 200_000;
        let h = 1.0 / n as f64;
        let mut acc = 0.0;
        for k in 0..=n {
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            acc += w * s.beta_at(k as f64 * h).norm_sqr();
        }
        assert!((acc * h - s.energy()).abs() < 1e-6);
    }

    #[test]
    fn overlapping_rejected() {
        let a = Segment::new(0.0, 1.0, 1.0, 0.0, 0.0);
        let b = Segment::new(0.5, 1.0, 1.0, 0.0, 0.0);
        assert!(DriveWaveform::new(vec![a, b]).is_err());
        assert!(DriveWaveform::new(vec![a, Segment { t_start: 1.0, ..b }]).is_ok());
    }
}
