//! Discretized inhomogeneous ensemble.

use crate::error::{out_of_range, Error, Result};
use crate::params::Validate;

/// One homogeneous sub-ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    /// Detuning from the rotating-frame reference (rad/s).
    pub delta: f64,
    /// Single-spin coupling (rad/s).
    pub g: f64,
    /// Spin count (real-valued).
    pub n: f64,
}

/// Bins stored frequency-major within each coupling class: index
/// `j * m_delta + k` for coupling bin `j` and frequency bin `k` when built
/// as an outer product.
#[derive(Debug, Clone, PartialEq)]
pub struct SubEnsembleGrid {
    pub bins: Vec<Bin>,
    /// Rotating-frame reference frequency (rad/s).
    pub omega_s: f64,
    pub m_delta: usize,
    pub m_g: usize,
    /// Sum of g^2 N over bins, stored redundantly.
    pub g_ens2: f64,
}

impl SubEnsembleGrid {
    pub fn new(bins: Vec<Bin>, omega_s: f64, m_delta: usize, m_g: usize) -> Self {
        let g_ens2 = bins.iter().map(|b| b.g * b.g * b.n).sum();
        Self {
            bins,
            omega_s,
            m_delta,
            m_g,
            g_ens2,
        }
    }

    /// Outer product of frequency bins (detuning, weight) and coupling bins
    /// (g, weight). Spin counts are set so that sum g^2 N = g_ens^2, with the
    /// g^2-weighted share of each coupling bin taken from `g_weights`.
    pub fn outer(
        deltas: &[f64],
        freq_weights: &[f64],
        gs: &[f64],
        g_weights: &[f64],
        g_ens: f64,
        omega_s: f64,
    ) -> Result<Self> {
        if deltas.len() != freq_weights.len() || gs.len() != g_weights.len() {
            return Err(Error::Axis("bin and weight lengths differ".into()));
        }
        if deltas.is_empty() || gs.is_empty() {
            return Err(Error::Empty("grid"));
        }
        let fw: f64 = freq_weights.iter().sum();
        let gw: f64 = g_weights.iter().sum();
        if !(fw > 0.0 && gw > 0.0) {
            return Err(out_of_range("grid", "weights must have positive total"));
        }
        let mut bins = Vec::with_capacity(deltas.len() * gs.len());
        for (&g, &wg) in gs.iter().zip(g_weights) {
            for (&d, &wf) in deltas.iter().zip(freq_weights) {
                let share = (wg / gw) * (wf / fw);
                let n = if g > 0.0 {
                    share * g_ens * g_ens / (g * g)
                } else {
                    0.0
                };
                bins.push(Bin { delta: d, g, n });
            }
        }
        let mut grid = Self::new(bins, omega_s, deltas.len(), gs.len());
        grid.g_ens2 = g_ens * g_ens;
        Ok(grid)
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn g_ens(&self) -> f64 {
        self.g_ens2.sqrt()
    }

    pub fn total_spins(&self) -> f64 {
        self.bins.iter().map(|b| b.n).sum()
    }

    pub fn max_abs_delta(&self) -> f64 {
        self.bins
            .iter()
            .filter(|b| b.n > 0.0)
            .map(|b| b.delta.abs())
            .fold(0.0, f64::max)
    }

    /// Spread each coupling class of an outer-product grid over `period`
    /// factors evenly spaced in log g across `ratio`^[-1/2, 1/2], cycling
    /// with the frequency index. N g^2 of every bin is kept, so the linear
    /// response is unchanged while nutation angles within a class are no
    /// longer one value. The periodic pattern puts its spurious images at
    /// multiples of 1/(period * bin spacing) from each echo.
    pub fn stratify_couplings(&self, ratio: f64, period: usize) -> Result<Self> {
        if !(ratio >= 1.0 && ratio.is_finite()) || period == 0 {
            return Err(out_of_range(
                "grid.g_stratify",
                "ratio must be >= 1 and period >= 1",
            ));
        }
        if self.bins.len() != self.m_delta * self.m_g {
            return Err(Error::Axis("not an outer-product grid".into()));
        }
        let lr = ratio.ln();
        let bins = self
            .bins
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let k = i % self.m_delta;
                let u = ((k % period) as f64 + 0.5) / period as f64 - 0.5;
                let f = (u * lr).exp();
                Bin {
                    g: b.g * f,
                    n: b.n / (f * f),
                    ..*b
                }
            })
            .collect();
        let mut out = Self::new(bins, self.omega_s, self.m_delta, self.m_g);
        out.g_ens2 = self.g_ens2;
        Ok(out)
    }

    /// Multiply every coupling by `s`, keeping spin counts.
    pub fn scale_couplings(&self, s: f64) -> Self {
        let bins = self.bins.iter().map(|b| Bin { g: b.g * s, ..*b }).collect();
        let mut out = Self::new(bins, self.omega_s, self.m_delta, self.m_g);
        out.g_ens2 = self.g_ens2 * s * s;
        out
    }

    /// Multiply every spin count by `s`.
    pub fn scale_spins(&self, s: f64) -> Self {
        let bins = self.bins.iter().map(|b| Bin { n: b.n * s, ..*b }).collect();
        let mut out = Self::new(bins, self.omega_s, self.m_delta, self.m_g);
        out.g_ens2 = self.g_ens2 * s;
        out
    }
}

impl Validate for SubEnsembleGrid {
    fn validate(&self) -> Result<()> {
        if self.bins.is_empty() {
            return Err(Error::Empty("grid"));
        }
        for (i, b) in self.bins.iter().enumerate() {
            if !(b.n >= 0.0 && b.n.is_finite()) {
                return Err(out_of_range("grid.N", format!("bin {i} has N = {}", b.n)));
            }
            if !(b.g >= 0.0 && b.g.is_finite() && b.delta.is_finite()) {
                return Err(out_of_range(
                    "grid.g",
                    format!("bin {i} is not finite or g < 0"),
                ));
            }
        }
        let s: f64 = self.bins.iter().map(|b| b.g * b.g * b.n).sum();
        if (s - self.g_ens2).abs() > 1e-9 * self.g_ens2.abs().max(s.abs()) {
            return Err(Error::Inconsistent(format!(
                "sum g^2 N = {s:e} but stored g_ens^2 = {:e}",
                self.g_ens2
            )));
        }
        Ok(())
    }
}
