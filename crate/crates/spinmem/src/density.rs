//! Inhomogeneous frequency density of the spin ensemble.
//!
//! Local field b, zero-field splitting D and strain E are independent with
//! Lorentzian, Lorentzian and bi-exponential distributions, each truncated at
//! `truncation_widths` times its width and renormalized. Every transition
//! frequency is omega = D +- Y with Y = sqrt(E^2 + gamma^2 u^2) and
//! u = B cos(alpha) + s B_hfs + b.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{out_of_range, Error, Result};
use crate::grid::SubEnsembleGrid;
use crate::par::{map_range, Exec};
use crate::params::{DensityScheme, DistributionSpec, Family, NvParams, Validate};
use crate::quad;
use crate::spectrum::{invert_local_field, local_field_step, Branch, TransitionLabel};
use crate::units::TWO_PI;

/// Weight of the non-orthogonal families relative to the orthogonal ones.
pub const NON_ORTH_WEIGHT: f64 = 0.6;

pub fn lorentzian_pdf(x: f64, hwhm: f64) -> f64 {
    hwhm / PI / (x * x + hwhm * hwhm)
}

pub fn lorentzian_cdf(x: f64, hwhm: f64) -> f64 {
    0.5 + (x / hwhm).atan() / PI
}

/// Mass of a Lorentzian inside +-t widths: (2/pi) atan(t).
pub fn lorentzian_core_mass(t: f64) -> f64 {
    2.0 / PI * t.atan()
}

/// rho_E(E) = [exp(-E/E1) + A1 exp(-E/E2)] / (E1 + A1 E2) for E >= 0.
pub fn biexp_strain_pdf(e: f64, e1: f64, e2: f64, a1: f64) -> f64 {
    if e < 0.0 {
        return 0.0;
    }
    ((-e / e1).exp() + a1 * (-e / e2).exp()) / (e1 + a1 * e2)
}

pub fn biexp_strain_cdf(e: f64, e1: f64, e2: f64, a1: f64) -> f64 {
    if e <= 0.0 {
        return 0.0;
    }
    (e1 * -(-e / e1).exp_m1() + a1 * e2 * -(-e / e2).exp_m1()) / (e1 + a1 * e2)
}

/// Lorentzian restricted to [-t w, t w] and renormalized.
#[derive(Debug, Clone, Copy)]
pub struct TruncLorentz {
    pub hwhm: f64,
    pub t: f64,
    at: f64,
}

impl TruncLorentz {
    pub fn new(hwhm: f64, t: f64) -> Self {
        Self {
            hwhm,
            t,
            at: t.atan(),
        }
    }

    pub fn cutoff(&self) -> f64 {
        self.t * self.hwhm
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x.abs() > self.cutoff() {
            return 0.0;
        }
        lorentzian_pdf(x, self.hwhm) * PI / (2.0 * self.at)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let c = self.cutoff();
        if x <= -c {
            0.0
        } else if x >= c {
            1.0
        } else {
            ((x / self.hwhm).atan() + self.at) / (2.0 * self.at)
        }
    }

    /// Antiderivative of the cdf, zero at the lower cutoff.
    pub fn cdf_integral(&self, x: f64) -> f64 {
        let c = self.cutoff();
        let w = self.hwhm;
        if x <= -c {
            return 0.0;
        }
        let inner = |x: f64| {
            let r = x / w;
            (x * r.atan() - 0.5 * w * r.mul_add(r, 1.0).ln()
                + x * self.at
                + 0.5 * w * (1.0 + self.t * self.t).ln())
                / (2.0 * self.at)
        };
        if x >= c {
            inner(c) + (x - c)
        } else {
            inner(x)
        }
    }

    /// Inverse cdf for u in [0, 1].
    pub fn quantile(&self, u: f64) -> f64 {
        self.hwhm * ((2.0 * u - 1.0) * self.at).tan()
    }
}

/// Bi-exponential strain distribution restricted to [0, e_max].
#[derive(Debug, Clone, Copy)]
pub struct TruncStrain {
    pub e1: f64,
    pub e2: f64,
    pub a1: f64,
    pub e_max: f64,
    mass: f64,
}

impl TruncStrain {
    pub fn new(e1: f64, e2: f64, a1: f64, e_max: f64) -> Self {
        Self {
            e1,
            e2,
            a1,
            e_max,
            mass: biexp_strain_cdf(e_max, e1, e2, a1),
        }
    }

    pub fn pdf(&self, e: f64) -> f64 {
        if e > self.e_max {
            return 0.0;
        }
        biexp_strain_pdf(e, self.e1, self.e2, self.a1) / self.mass
    }

    pub fn cdf(&self, e: f64) -> f64 {
        biexp_strain_cdf(e.min(self.e_max), self.e1, self.e2, self.a1) / self.mass
    }
}

/// The three truncated distributions of a [`DistributionSpec`].
#[derive(Debug, Clone, Copy)]
pub struct EnsembleModel {
    pub b: TruncLorentz,
    pub d: TruncLorentz,
    pub e: TruncStrain,
}

impl EnsembleModel {
    pub fn new(spec: &DistributionSpec) -> Self {
        let t = spec.truncation_widths;
        Self {
            b: TruncLorentz::new(spec.db0, t),
            d: TruncLorentz::new(spec.dd0, t),
            e: TruncStrain::new(spec.e1, spec.e2, spec.a1, t * spec.e1.max(spec.e2)),
        }
    }

    /// P(Y <= y) for Y = sqrt(E^2 + gamma^2 (c + b)^2).
    pub fn splitting_cdf(&self, y: f64, c: f64, gamma: f64) -> Result<f64> {
        if y <= 0.0 {
            return Ok(0.0);
        }
        let top = if y > self.e.e_max {
            (self.e.e_max / y).asin()
        } else {
            FRAC_PI_2
        };
        let f = |th: f64| {
            let (s, co) = th.sin_cos();
            let r = y * co / gamma;
            self.e.pdf(y * s) * y * co * (self.b.cdf(r - c) - self.b.cdf(-r - c))
        };
        quad::integrate(f, 0.0, top, 1e-13, 1e-11, 50)
    }
}

/// Uniform angular-frequency axis of bin centers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmegaAxis {
    pub start: f64,
    pub stop: f64,
    pub n: usize,
}

impl OmegaAxis {
    pub fn new(start: f64, stop: f64, n: usize) -> Result<Self> {
        if n < 2 || !(stop > start) {
            return Err(out_of_range(
                "grid.omega_axis",
                "need n >= 2 and stop > start",
            ));
        }
        Ok(Self { start, stop, n })
    }

    /// 2.80 - 2.96 GHz, 3001 points.
    pub fn nominal() -> Self {
        Self {
            start: TWO_PI * 2.80e9,
            stop: TWO_PI * 2.96e9,
            n: 3001,
        }
    }

    pub fn step(&self) -> f64 {
        (self.stop - self.start) / (self.n - 1) as f64
    }

    pub fn at(&self, k: usize) -> f64 {
        self.start + k as f64 * self.step()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.at(k)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyDensity {
    pub axis: OmegaAxis,
    /// Density per rad/s at each axis point (bin average).
    pub density: Vec<f64>,
    pub b_nv: f64,
    pub family: Family,
}

impl FrequencyDensity {
    pub fn omega(&self) -> Vec<f64> {
        self.axis.points()
    }

    /// Probability mass per bin.
    pub fn masses(&self) -> Vec<f64> {
        let h = self.axis.step();
        self.density.iter().map(|d| d * h).collect()
    }

    pub fn trapezoid(&self) -> f64 {
        let h = self.axis.step();
        let n = self.density.len();
        let s: f64 = self.density.iter().sum();
        h * (s - 0.5 * (self.density[0] + self.density[n - 1]))
    }

    pub fn mean(&self) -> f64 {
        let s: f64 = self.density.iter().sum();
        let m: f64 = self
            .density
            .iter()
            .enumerate()
            .map(|(k, d)| d * self.axis.at(k))
            .sum();
        m / s
    }

    fn normalized(mut self) -> Result<Self> {
        let h = self.axis.step();
        let total: f64 = self.density.iter().sum::<f64>() * h;
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Quadrature(
                "no spectral weight on the frequency axis".into(),
            ));
        }
        for d in &mut self.density {
            *d /= total;
        }
        Ok(self)
    }
}

/// Normalized density of transition frequencies for one family, or the
/// weighted combination of both for [`Family::Combined`].
pub fn frequency_density(
    b_nv: f64,
    spec: &DistributionSpec,
    nv: &NvParams,
    family: Family,
    axis: &OmegaAxis,
    exec: Exec,
) -> Result<FrequencyDensity> {
    spec.validate()?;
    if family == Family::Combined {
        let o = frequency_density(b_nv, spec, nv, Family::Orth, axis, exec)?;
        let no = frequency_density(b_nv, spec, nv, Family::NonOrth, axis, exec)?;
        return combine_families(&o, &no);
    }
    let alpha = nv.alpha_of(family);
    let raw = match spec.scheme {
        DensityScheme::BinMass => bin_mass_density(b_nv, alpha, spec, nv, axis, exec)?,
        DensityScheme::FieldStep => field_step_density(b_nv, alpha, spec, nv, axis, exec),
    };
    FrequencyDensity {
        axis: *axis,
        density: raw,
        b_nv,
        family,
    }
    .normalized()
}

fn bin_mass_density(
    b_nv: f64,
    alpha: f64,
    spec: &DistributionSpec,
    nv: &NvParams,
    axis: &OmegaAxis,
    exec: Exec,
) -> Result<Vec<f64>> {
    let model = EnsembleModel::new(spec);
    let h = axis.step();
    let lo = axis.start - 0.5 * h;
    let hi = axis.stop + 0.5 * h;
    let dcut = model.d.cutoff();
    let y_max = (hi - nv.d).abs().max((nv.d - lo).abs()) + dcut + h;
    let hy = spec.d_omega0.unwrap_or(h).min(h) / 8.0;
    let ny = (y_max / hy).ceil() as usize + 1;
    let mut density = vec![0.0; axis.n];
    for m_i in [-1i8, 0, 1] {
        let c = b_nv * alpha.cos() - (m_i as f64) * nv.b_hfs;
        let cdf: Vec<Result<f64>> = map_range(exec, ny, |j| {
            model.splitting_cdf(j as f64 * hy, c, nv.gamma_e)
        });
        let cdf: Vec<f64> = cdf.into_iter().collect::<Result<_>>()?;
        let slope: Vec<f64> = cdf.windows(2).map(|w| (w[1] - w[0]) / hy).collect();
        let d = model.d;
        let masses = map_range(exec, axis.n, |k| {
            let a = lo + k as f64 * h;
            let b = a + h;
            let mut m = 0.0;
            for sign in [1.0f64, -1.0] {
                // plus: D' - D in [edge - D - y]; minus: D' - D in [edge - D + y]
                let (ca, cb) = (a - nv.d, b - nv.d);
                let y_lo = if sign > 0.0 { ca - dcut } else { -cb - dcut };
                let y_hi = if sign > 0.0 { cb + dcut } else { -ca + dcut };
                let j0 = ((y_lo / hy).floor().max(0.0)) as usize;
                let j1 = ((y_hi / hy).ceil().max(0.0) as usize).min(slope.len());
                let lam = |edge: f64, y: f64| d.cdf_integral(edge - sign * y);
                for j in j0..j1 {
                    let (y0, y1) = (j as f64 * hy, (j + 1) as f64 * hy);
                    let seg = (lam(cb, y0) - lam(cb, y1)) - (lam(ca, y0) - lam(ca, y1));
                    m += slope[j] * sign * seg;
                }
            }
            m
        });
        for (dst, m) in density.iter_mut().zip(masses) {
            *dst += m / h;
        }
    }
    Ok(density)
}

fn field_step_density(
    b_nv: f64,
    alpha: f64,
    spec: &DistributionSpec,
    nv: &NvParams,
    axis: &OmegaAxis,
    exec: Exec,
) -> Vec<f64> {
    let model = EnsembleModel::new(spec);
    let d_omega0 = spec.d_omega0.unwrap_or_else(|| axis.step());
    // strain on a log grid, trapezoid weights in E
    let n_e = 192;
    let e_lo = 1e-4 * spec.e1.min(spec.e2);
    let e_hi = model.e.e_max;
    let r = (e_hi / e_lo).powf(1.0 / (n_e - 1) as f64);
    let es: Vec<f64> = (0..n_e).map(|i| e_lo * r.powi(i as i32)).collect();
    let mut we = vec![0.0; n_e];
    for i in 0..n_e - 1 {
        let w = 0.5 * (es[i + 1] - es[i]);
        we[i] += w;
        we[i + 1] += w;
    }
    // [0, e_lo] folded into the first node
    we[0] += e_lo;
    // splitting on a linear grid across the truncated support
    let n_d = 241;
    let cut = model.d.cutoff();
    let hd = 2.0 * cut / (n_d - 1) as f64;
    let ds: Vec<f64> = (0..n_d).map(|i| -cut + i as f64 * hd).collect();
    map_range(exec, axis.n, |k| {
        let w = axis.at(k);
        let mut acc = 0.0;
        for (&e, &wei) in es.iter().zip(&we) {
            let pe = model.e.pdf(e) * wei;
            for (i, &dd) in ds.iter().enumerate() {
                let wd = if i == 0 || i == n_d - 1 { 0.5 * hd } else { hd };
                let pd = model.d.pdf(dd) * wd;
                let dval = nv.d + dd;
                for label in TransitionLabel::ALL {
                    if let Some(bs) = invert_local_field(w, e, b_nv, alpha, dval, label, nv) {
                        for b in bs {
                            let db = local_field_step(e, b_nv, alpha, b, d_omega0, label, nv);
                            acc += pe * pd * model.b.pdf(b) * db / d_omega0;
                        }
                    }
                }
            }
        }
        acc
    })
}

/// 0.6 rho_non_orth + rho_orth, renormalized.
pub fn combine_families(
    orth: &FrequencyDensity,
    non_orth: &FrequencyDensity,
) -> Result<FrequencyDensity> {
    if orth.axis != non_orth.axis {
        return Err(Error::Axis("family densities on different axes".into()));
    }
    let density = orth
        .density
        .iter()
        .zip(&non_orth.density)
        .map(|(o, n)| (o + NON_ORTH_WEIGHT * n) / (1.0 + NON_ORTH_WEIGHT))
        .collect();
    FrequencyDensity {
        axis: orth.axis,
        density,
        b_nv: orth.b_nv,
        family: Family::Combined,
    }
    .normalized()
}

/// Resample `density` onto `m_delta` equal bins spanning the same range
/// and take the outer product with coupling bins `(g, N g^2 weight)`.
/// `omega_s` defaults to the density mean.
pub fn bin_to_grid(
    density: &FrequencyDensity,
    m_delta: usize,
    g_bins: &[(f64, f64)],
    g_ens: f64,
    omega_s: Option<f64>,
) -> Result<SubEnsembleGrid> {
    if m_delta == 0 {
        return Err(out_of_range("grid.M_delta", "must be >= 1"));
    }
    let h = density.axis.step();
    let lo = density.axis.start - 0.5 * h;
    let hi = density.axis.stop + 0.5 * h;
    let masses = density.masses();
    let (centers, weights) = if m_delta == density.axis.n {
        (density.axis.points(), masses)
    } else {
        let hn = (hi - lo) / m_delta as f64;
        let mut w = vec![0.0; m_delta];
        // overlap of each old bin with the new ones
        for (k, m) in masses.iter().enumerate() {
            let a = lo + k as f64 * h;
            let b = a + h;
            let i0 = ((a - lo) / hn).floor() as usize;
            let i1 = (((b - lo) / hn).ceil() as usize).min(m_delta);
            for (i, wi) in w.iter_mut().enumerate().take(i1).skip(i0) {
                let na = lo + i as f64 * hn;
                let ov = (b.min(na + hn) - a.max(na)).max(0.0);
                *wi += m * ov / h;
            }
        }
        (
            (0..m_delta).map(|i| lo + (i as f64 + 0.5) * hn).collect(),
            w,
        )
    };
    let omega_s = omega_s.unwrap_or_else(|| density.mean());
    let deltas: Vec<f64> = centers.iter().map(|w| w - omega_s).collect();
    let gs: Vec<f64> = g_bins.iter().map(|b| b.0).collect();
    let gw: Vec<f64> = g_bins.iter().map(|b| b.1).collect();
    SubEnsembleGrid::outer(&deltas, &weights, &gs, &gw, g_ens, omega_s)
}

/// Convenience: branch of a transition frequency relative to D.
pub fn branch_of(omega: f64, d: f64) -> Branch {
    if omega >= d {
        Branch::Plus
    } else {
        Branch::Minus
    }
}
