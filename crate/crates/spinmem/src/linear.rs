//! Linear response of the cavity-ensemble system in the low-excitation
//! limit: K(omega), steady-state field, reflection, susceptibility and
//! de-embedding of K from reflection ratios.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{out_of_range, Error, Result};
use crate::grid::SubEnsembleGrid;
use crate::par::{map_range, Exec};
use crate::params::CavityParams;
use crate::units::TWO_PI;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumKind {
    K,
    R,
    Chi,
    S11,
}

impl SpectrumKind {
    pub fn name(self) -> &'static str {
        match self {
            SpectrumKind::K => "K",
            SpectrumKind::R => "r",
            SpectrumKind::Chi => "chi",
            SpectrumKind::S11 => "S11",
        }
    }
}

/// Complex values on an angular-frequency axis (rad/s).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum {
    pub omega: Vec<f64>,
    pub values: Vec<Complex64>,
    pub kind: SpectrumKind,
}

impl ComplexSpectrum {
    pub fn new(omega: Vec<f64>, values: Vec<Complex64>, kind: SpectrumKind) -> Result<Self> {
        if omega.len() != values.len() {
            return Err(Error::Axis(format!(
                "{} axis points, {} values",
                omega.len(),
                values.len()
            )));
        }
        Ok(Self {
            omega,
            values,
            kind,
        })
    }

    fn same_axis(&self, other: &Self) -> Result<()> {
        if self.omega != other.omega {
            return Err(Error::Axis(format!(
                "{} and {} spectra on different axes",
                self.kind.name(),
                other.kind.name()
            )));
        }
        Ok(())
    }
}

/// Uniform axis helper.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n)
        .map(|k| a + (b - a) * k as f64 / (n - 1) as f64)
        .collect()
}

/// Sum N g^2 per distinct bin frequency, in ascending frequency order.
fn lines(grid: &SubEnsembleGrid) -> Vec<(f64, f64)> {
    let mut m: BTreeMap<u64, f64> = BTreeMap::new();
    for b in &grid.bins {
        let w = grid.omega_s + b.delta;
        // order-preserving key for finite floats
        let bits = w.to_bits();
        let key = if w >= 0.0 { bits ^ (1 << 63) } else { !bits };
        *m.entry(key).or_insert(0.0) += b.n * b.g * b.g;
    }
    m.into_iter()
        .map(|(k, v)| {
            let bits = if k >> 63 == 1 { k ^ (1 << 63) } else { !k };
            (f64::from_bits(bits), v)
        })
        .collect()
}

/// K(omega) = sum_m N_m g_m^2 / (omega - omega_m + i gamma_perp).
pub fn k_of_omega(
    grid: &SubEnsembleGrid,
    gamma_perp: f64,
    omega: &[f64],
    exec: Exec,
) -> Result<ComplexSpectrum> {
    if !(gamma_perp >= 0.0) {
        return Err(out_of_range("decoherence.gamma_perp", "must be >= 0"));
    }
    let ls = lines(grid);
    let values = map_range(exec, omega.len(), |k| {
        let w = omega[k];
        let mut acc = Complex64::new(0.0, 0.0);
        for &(wm, s) in &ls {
            acc += s / Complex64::new(w - wm, gamma_perp);
        }
        acc
    });
    ComplexSpectrum::new(omega.to_vec(), values, SpectrumKind::K)
}

/// <a_c> = i sqrt(2 kappa) beta0 / (omega - omega_c + i kappa - K).
pub fn steady_state_field(
    beta0: Complex64,
    omega: f64,
    cavity: &CavityParams,
    k: Complex64,
) -> Complex64 {
    I * (2.0 * cavity.kappa).sqrt() * beta0
        / (Complex64::new(omega - cavity.omega_c, cavity.kappa) - k)
}

pub fn reflection_at(omega: f64, cavity: &CavityParams, k: Complex64) -> Complex64 {
    2.0 * I * cavity.kappa / (Complex64::new(omega - cavity.omega_c, cavity.kappa) - k) - 1.0
}

/// r(omega) = 2 i kappa / (omega - omega_c + i kappa - K) - 1.
pub fn reflection_coeff(cavity: &CavityParams, k: &ComplexSpectrum) -> ComplexSpectrum {
    let values = k
        .omega
        .iter()
        .zip(&k.values)
        .map(|(&w, &kk)| reflection_at(w, cavity, kk))
        .collect();
    ComplexSpectrum {
        omega: k.omega.clone(),
        values,
        kind: SpectrumKind::R,
    }
}

/// Bare cavity r_c = (kappa + i (omega - omega_c)) / (kappa - i (omega - omega_c)).
pub fn bare_cavity_reflection(omega: f64, cavity: &CavityParams) -> Complex64 {
    let d = omega - cavity.omega_c;
    Complex64::new(cavity.kappa, d) / Complex64::new(cavity.kappa, -d)
}

/// chi = -K* / (2 pi eta omega_c).
pub fn susceptibility(k: &ComplexSpectrum, eta: f64, omega_c: f64) -> Result<ComplexSpectrum> {
    if !(eta > 0.0) {
        return Err(out_of_range(
            "cavity.eta",
            "filling factor out of range (0, 1]",
        ));
    }
    let s = 2.0 * PI * eta * omega_c;
    let values = k.values.iter().map(|v| -v.conj() / s).collect();
    Ok(ComplexSpectrum {
        omega: k.omega.clone(),
        values,
        kind: SpectrumKind::Chi,
    })
}

/// Inverse of [`susceptibility`].
pub fn k_from_susceptibility(chi: &ComplexSpectrum, eta: f64, omega_c: f64) -> ComplexSpectrum {
    let s = 2.0 * PI * eta * omega_c;
    let values = chi.values.iter().map(|v| -(v * s).conj()).collect();
    ComplexSpectrum {
        omega: chi.omega.clone(),
        values,
        kind: SpectrumKind::K,
    }
}

/// Measured-convention trace T(omega) r(omega)* for a line response T.
pub fn synthesize_s11(r: &ComplexSpectrum, line: impl Fn(f64) -> Complex64) -> ComplexSpectrum {
    let values = r
        .omega
        .iter()
        .zip(&r.values)
        .map(|(&w, v)| line(w) * v.conj())
        .collect();
    ComplexSpectrum {
        omega: r.omega.clone(),
        values,
        kind: SpectrumKind::S11,
    }
}

/// Result of [`deembed_k`]; flagged points carry NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct Deembedded {
    pub k: ComplexSpectrum,
    pub flagged: Vec<usize>,
}

/// K = omega - omega_c + i kappa - 2 i kappa / ((S11*/S11_sat*) r_c + 1),
/// both traces in the measured (conjugate) convention.
pub fn deembed_k(
    s11: &ComplexSpectrum,
    s11_sat: &ComplexSpectrum,
    cavity: &CavityParams,
) -> Result<Deembedded> {
    s11.same_axis(s11_sat)?;
    let mut flagged = Vec::new();
    let mut values = Vec::with_capacity(s11.values.len());
    for (i, ((&w, a), b)) in s11
        .omega
        .iter()
        .zip(&s11.values)
        .zip(&s11_sat.values)
        .enumerate()
    {
        if b.norm() == 0.0 {
            return Err(out_of_range("S11_sat", format!("zero at point {i}")));
        }
        let den = a.conj() / b.conj() * bare_cavity_reflection(w, cavity) + 1.0;
        if den.norm() < 1e-12 {
            flagged.push(i);
            values.push(Complex64::new(f64::NAN, f64::NAN));
            continue;
        }
        values
            .push(Complex64::new(w - cavity.omega_c, cavity.kappa) - 2.0 * I * cavity.kappa / den);
    }
    Ok(Deembedded {
        k: ComplexSpectrum {
            omega: s11.omega.clone(),
            values,
            kind: SpectrumKind::K,
        },
        flagged,
    })
}

/// Sign convention of a stored trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convention {
    /// exp(-i omega t), as used internally.
    Physics,
    /// exp(+i omega t), as delivered by network analyzers.
    Measured,
}

/// Trace CSV: comment header with convention, kappa and omega_c, then
/// `omega_MHz,re,im` rows. Frequencies are omega / 2 pi in MHz.
pub fn write_trace(
    path: &Path,
    s: &ComplexSpectrum,
    convention: Convention,
    cavity: &CavityParams,
) -> Result<()> {
    let mut out = String::new();
    let conv = match convention {
        Convention::Physics => "physics",
        Convention::Measured => "measured",
    };
    let _ = writeln!(out, "# kind = {}", s.kind.name());
    let _ = writeln!(out, "# convention = {conv}");
    let _ = writeln!(out, "# kappa_rad_s = {:e}", cavity.kappa);
    let _ = writeln!(out, "# omega_c_rad_s = {:e}", cavity.omega_c);
    let _ = writeln!(out, "omega_MHz,re,im");
    for (w, v) in s.omega.iter().zip(&s.values) {
        if !(v.re.is_finite() && v.im.is_finite()) {
            return Err(out_of_range("trace", "non-finite value"));
        }
        let _ = writeln!(out, "{:.17e},{:.17e},{:.17e}", w / TWO_PI / 1e6, v.re, v.im);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a trace, returning values in the physics convention.
pub fn read_trace(path: &Path, kind: SpectrumKind) -> Result<ComplexSpectrum> {
    let text = std::fs::read_to_string(path)?;
    let mut conj = false;
    let mut omega = Vec::new();
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("omega") {
            continue;
        }
        if let Some(h) = line.strip_prefix('#') {
            if let Some((k, v)) = h.split_once('=') {
                if k.trim() == "convention" {
                    conj = match v.trim() {
                        "measured" => true,
                        "physics" => false,
                        o => {
                            return Err(Error::Parse {
                                line: i + 1,
                                msg: format!("unknown convention '{o}'"),
                            })
                        }
                    };
                }
            }
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(Error::Parse {
                line: i + 1,
                msg: "expected omega_MHz,re,im".into(),
            });
        }
        let p = |s: &str| {
            s.parse::<f64>().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("bad number '{s}'"),
            })
        };
        omega.push(p(cols[0])? * 1e6 * TWO_PI);
        let v = Complex64::new(p(cols[1])?, p(cols[2])?);
        values.push(if conj { v.conj() } else { v });
    }
    if omega.is_empty() {
        return Err(Error::Empty("trace"));
    }
    ComplexSpectrum::new(omega, values, kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Bin;

    fn cav() -> CavityParams {
        CavityParams::nominal()
    }

    #[test]
    fn empty_grid_gives_zero() {
        let g = SubEnsembleGrid::new(vec![], 0.0, 0, 0);
        let k = k_of_omega(&g, 1.0, &[1.0, 2.0], Exec::Sequential).unwrap();
        assert!(k.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn single_bin_on_resonance() {
        let g = SubEnsembleGrid::new(
            vec![Bin {
                delta: 0.0,
                g: 3.0,
                n: 5.0,
            }],
            10.0,
            1,
            1,
        );
        let k = k_of_omega(&g, 2.0, &[10.0], Exec::Sequential).unwrap();
        assert!((k.values[0] - Complex64::new(0.0, -45.0 / 2.0)).norm() < 1e-12);
    }

    #[test]
    fn bare_cavity_limits() {
        let c = cav();
        let a = steady_state_field(
            Complex64::new(1.0, 0.0),
            c.omega_c,
            &c,
            Complex64::new(0.0, 0.0),
        );
        assert!((a - Complex64::new((2.0 / c.kappa).sqrt(), 0.0)).norm() < 1e-15);
        assert_eq!(
            steady_state_field(
                Complex64::new(0.0, 0.0),
                c.omega_c,
                &c,
                Complex64::new(0.0, 0.0)
            )
            .norm(),
            0.0
        );
        let r = reflection_at(c.omega_c, &c, Complex64::new(0.0, 0.0));
        assert!((r - 1.0).norm() < 1e-15);
        let far = reflection_at(c.omega_c + 1e6 * c.kappa, &c, Complex64::new(0.0, 0.0));
        assert!((far + 1.0).norm() < 1e-5);
        for w in [c.omega_c - 3.0 * c.kappa, c.omega_c + 0.5 * c.kappa] {
            let r = reflection_at(w, &c, Complex64::new(0.0, 0.0));
            assert!((r - bare_cavity_reflection(w, &c)).norm() < 1e-14);
        }
    }

    #[test]
    fn deembed_identity() {
        let c = cav();
        let w = linspace(c.omega_c - 1e8, c.omega_c + 1e8, 11);
        let s = ComplexSpectrum::new(
            w.clone(),
            vec![Complex64::new(0.3, 0.2); 11],
            SpectrumKind::S11,
        )
        .unwrap();
        let d = deembed_k(&s, &s, &c).unwrap();
        assert!(d.k.values.iter().all(|v| v.norm() < 1e-6));
    }

    #[test]
    fn chi_zero_and_inverse() {
        let k = ComplexSpectrum::new(
            vec![1.0, 2.0],
            vec![Complex64::new(0.0, 0.0), Complex64::new(3.0, -4.0)],
            SpectrumKind::K,
        )
        .unwrap();
        let chi = susceptibility(&k, 0.29, 1e10).unwrap();
        assert_eq!(chi.values[0].norm(), 0.0);
        assert!(chi.values[1].im != 0.0);
        let back = k_from_susceptibility(&chi, 0.29, 1e10);
        assert!((back.values[1] - k.values[1]).norm() < 1e-12);
        assert!(susceptibility(&k, 0.0, 1e10).is_err());
    }
}
