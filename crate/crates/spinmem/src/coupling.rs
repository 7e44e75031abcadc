//! Coupling-strength distribution from a resonator vacuum-field map.
//!
//! The meander is modelled as parallel straight conductors along z with
//! alternating current direction; the diamond occupies y > gap above the
//! conductor plane. Fields are per single-photon current
//! dI = omega_c sqrt(hbar / 2 Z0).

use std::f64::consts::{PI, SQRT_2};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{out_of_range, Error, Result};
use crate::par::{map_range, tree_sum1, Exec};
use crate::params::{CavityParams, NvParams};
use crate::units::{HBAR, MU0};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapSource {
    Imported,
    AnalyticWire,
}

/// Field samples on cells of equal volume. Positions are kept in
/// micrometres so that file round trips are exact.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMap {
    /// (x, y, z) in um and (dBx, dBy, dBz) in T.
    pub points: Vec<[f64; 6]>,
    /// m^3
    pub cell_volume: f64,
    /// Current the field is normalized to (A).
    pub current: f64,
    pub source: MapSource,
}

impl FieldMap {
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Empty("field map"));
        }
        if !(self.cell_volume > 0.0 && self.cell_volume.is_finite()) {
            return Err(out_of_range("field_map.cell_volume", "must be positive"));
        }
        if let Some(i) = self
            .points
            .iter()
            .position(|p| p.iter().any(|v| !v.is_finite()))
        {
            return Err(out_of_range(
                "field_map",
                format!("point {i} is not finite"),
            ));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = String::with_capacity(self.points.len() * 96);
        let src = match self.source {
            MapSource::Imported => "imported",
            MapSource::AnalyticWire => "analytic-wire",
        };
        let _ = writeln!(s, "# cell_volume_m3 = {:e}", self.cell_volume);
        let _ = writeln!(s, "# current_A = {:e}", self.current);
        let _ = writeln!(s, "# source = {src}");
        let _ = writeln!(s, "# x_um y_um z_um Bx_T By_T Bz_T");
        for p in &self.points {
            let _ = writeln!(
                s,
                "{} {} {} {:e} {:e} {:e}",
                p[0], p[1], p[2], p[3], p[4], p[5]
            );
        }
        std::fs::write(path, s)?;
        Ok(())
    }
}

/// Parse a field map. Header lines `# cell_volume_m3 = v` and
/// `# current_A = v` are required; data lines hold six columns.
pub fn load_field_map(path: &Path) -> Result<FieldMap> {
    let text = std::fs::read_to_string(path)?;
    parse_field_map(&text)
}

pub fn parse_field_map(text: &str) -> Result<FieldMap> {
    let mut cell_volume = None;
    let mut current = None;
    let mut source = MapSource::Imported;
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(h) = line.strip_prefix('#') {
            if let Some((k, v)) = h.split_once('=') {
                let v = v.trim();
                let num = || {
                    v.parse::<f64>().map_err(|_| Error::Parse {
                        line: i + 1,
                        msg: format!("bad header value '{v}'"),
                    })
                };
                match k.trim() {
                    "cell_volume_m3" => cell_volume = Some(num()?),
                    "current_A" => current = Some(num()?),
                    "source" if v == "analytic-wire" => source = MapSource::AnalyticWire,
                    _ => {}
                }
            }
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected 6 columns, found {}", cols.len()),
            });
        }
        let mut p = [0.0; 6];
        for (dst, c) in p.iter_mut().zip(&cols) {
            *dst = c.parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("bad number '{c}'"),
            })?;
        }
        points.push(p);
    }
    let map = FieldMap {
        points,
        cell_volume: cell_volume.ok_or(Error::Parse {
            line: 0,
            msg: "missing '# cell_volume_m3' header".into(),
        })?,
        current: current.ok_or(Error::Parse {
            line: 0,
            msg: "missing '# current_A' header".into(),
        })?,
        source,
    };
    map.validate()?;
    Ok(map)
}

/// Single-photon rms current of the resonator.
pub fn vacuum_current(cavity: &CavityParams) -> f64 {
    cavity.omega_c * (HBAR / (2.0 * cavity.z0)).sqrt()
}

/// Meander cross-section: `n_wires` strips of `width` at `pitch`, currents
/// alternating, sampled on square cells of side `cell` in the region
/// y in [gap, gap + depth] and |x| <= half span + margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireGeometry {
    pub n_wires: usize,
    pub width: f64,
    pub pitch: f64,
    pub gap: f64,
    /// Active length along the conductors (m).
    pub length: f64,
    pub depth: f64,
    pub margin: f64,
    pub cell: f64,
    /// 0 uses the closed-form thin-strip field; otherwise each strip is
    /// split into this many line currents.
    pub filaments: usize,
    /// Evaluate finite-length conductors at their mid-plane instead of
    /// infinite ones.
    pub finite_length: bool,
}

impl WireGeometry {
    pub fn nominal() -> Self {
        Self {
            n_wires: 8,
            width: 4e-6,
            pitch: 12e-6,
            gap: 0.7e-6,
            length: 100e-6,
            depth: 80e-6,
            margin: 60e-6,
            cell: 0.25e-6,
            filaments: 0,
            finite_length: false,
        }
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_wires)
            .map(|i| (i as f64 - 0.5 * (self.n_wires as f64 - 1.0)) * self.pitch)
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.n_wires == 0 {
            return Err(out_of_range("geometry.n_wires", "must be >= 1"));
        }
        for (f, v) in [
            ("geometry.length", self.length),
            ("geometry.depth", self.depth),
            ("geometry.cell", self.cell),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(out_of_range(f, "must be positive"));
            }
        }
        if !(self.gap > 0.0) || !(self.width >= 0.0) || !(self.margin >= 0.0) {
            return Err(out_of_range(
                "geometry.gap",
                "gap must be positive, width and margin >= 0",
            ));
        }
        if self.n_wires > 1 && self.pitch < self.width {
            return Err(out_of_range("geometry.pitch", "strips overlap"));
        }
        Ok(())
    }
}

/// Field of an infinite line current along +z through (0, 0) at (x, y).
pub fn line_current_field(x: f64, y: f64, current: f64) -> [f64; 2] {
    let r2 = x * x + y * y;
    let k = MU0 * current / (2.0 * PI * r2);
    [-k * y, k * x]
}

/// Field of an infinitely thin strip of width w centred at x = 0, y = 0,
/// total current along +z, at a point with y > 0.
pub fn thin_strip_field(x: f64, y: f64, w: f64, current: f64) -> [f64; 2] {
    if w == 0.0 {
        return line_current_field(x, y, current);
    }
    let k = MU0 * current / (2.0 * PI * w);
    let (a, b) = (x + 0.5 * w, x - 0.5 * w);
    let bx = -k * ((a / y).atan() - (b / y).atan());
    let by = 0.5 * k * ((a * a + y * y) / (b * b + y * y)).ln();
    [bx, by]
}

fn mid_plane_factor(rho: f64, length: f64) -> f64 {
    let h = 0.5 * length;
    h / (rho * rho + h * h).sqrt()
}

/// Biot-Savart field of the meander cross-section per single-photon current.
pub fn analytic_wire_field(geom: &WireGeometry, cavity: &CavityParams) -> Result<FieldMap> {
    geom.validate()?;
    let di = vacuum_current(cavity);
    let centers = geom.centers();
    let half = 0.5 * (centers.last().unwrap() - centers[0]) + 0.5 * geom.width + geom.margin;
    let nx = (2.0 * half / geom.cell).ceil() as usize;
    let ny = (geom.depth / geom.cell).ceil() as usize;
    let x0 = -0.5 * nx as f64 * geom.cell;
    let mut points = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        let y = geom.gap + (j as f64 + 0.5) * geom.cell;
        for i in 0..nx {
            let x = x0 + (i as f64 + 0.5) * geom.cell;
            let mut b = [0.0; 2];
            for (w, &xc) in centers.iter().enumerate() {
                let cur = if w % 2 == 0 { di } else { -di };
                let parts: Vec<(f64, f64)> = if geom.filaments == 0 {
                    vec![(xc, cur)]
                } else {
                    let k = geom.filaments;
                    (0..k)
                        .map(|f| {
                            (
                                xc - 0.5 * geom.width + (f as f64 + 0.5) * geom.width / k as f64,
                                cur / k as f64,
                            )
                        })
                        .collect()
                };
                for (xf, cf) in parts {
                    let f = if geom.filaments == 0 {
                        thin_strip_field(x - xf, y, geom.width, cf)
                    } else {
                        line_current_field(x - xf, y, cf)
                    };
                    let s = if geom.finite_length {
                        mid_plane_factor((x - xf).hypot(y), geom.length)
                    } else {
                        1.0
                    };
                    b[0] += s * f[0];
                    b[1] += s * f[1];
                }
            }
            points.push([x * 1e6, y * 1e6, 0.0, b[0], b[1], 0.0]);
        }
    }
    Ok(FieldMap {
        points,
        cell_volume: geom.cell * geom.cell * geom.length,
        current: di,
        source: MapSource::AnalyticWire,
    })
}

/// Magnitudes (|g_x|, |g_y|) of the two spin-1/2 transitions of an NV in
/// family 1 (non-orthogonal) or 3 (orthogonal) for in-plane field
/// (dBx, dBy) and azimuth psi of its local frame.
pub fn family_couplings(db: [f64; 2], psi: f64, family: u8, nv: &NvParams) -> (f64, f64) {
    let (s, c) = psi.sin_cos();
    couplings_sc(db, s, c, family, nv)
}

#[inline]
fn couplings_sc(db: [f64; 2], s: f64, c: f64, family: u8, nv: &NvParams) -> (f64, f64) {
    let g = nv.gamma_e;
    match family {
        1 | 2 => {
            let m = (db[0] - SQRT_2 * db[1]).abs() * g / 3f64.sqrt();
            (m * c.abs(), m * s.abs())
        }
        _ => {
            let r = (2.0f64 / 3.0).sqrt();
            (
                (g * (c * db[0] + r * s * db[1])).abs(),
                (g * (s * db[0] - r * c * db[1])).abs(),
            )
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GBin {
    /// rms coupling of the bin (rad/s).
    pub g: f64,
    /// Spin-1/2 count.
    pub n: f64,
    /// Share of the bin's N g^2 carried by the orthogonal families.
    pub orth_share: f64,
}

impl GBin {
    pub fn weight(&self) -> f64 {
        self.n * self.g * self.g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingDensity {
    pub bins: Vec<GBin>,
    /// Sum of N g^2 over bins.
    pub g_ens2: f64,
    /// [non-orthogonal, orthogonal] parts of g_ens^2.
    pub g_ens2_family: [f64; 2],
    /// Fraction of sum N g^2 dropped below the cutoff.
    pub dropped_fraction: f64,
}

impl CouplingDensity {
    pub fn g_ens(&self) -> f64 {
        self.g_ens2.sqrt()
    }

    pub fn orth_share(&self) -> f64 {
        self.g_ens2_family[1] / (self.g_ens2_family[0] + self.g_ens2_family[1])
    }

    /// (g, N g^2) pairs for grid construction.
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.bins.iter().map(|b| (b.g, b.weight())).collect()
    }

    /// Normalized N g^2 weights.
    pub fn shape(&self) -> Vec<f64> {
        let t: f64 = self.bins.iter().map(|b| b.weight()).sum();
        self.bins.iter().map(|b| b.weight() / t).collect()
    }
}

/// Relative cutoff below which cells are dropped.
pub const G_CUTOFF: f64 = 1e-3;

/// Histogram g over cells x families x psi samples into `m_g` log-spaced
/// bins on [G_CUTOFF g_max, g_max]. Each NV contributes two spin-1/2
/// transitions with couplings |g_x| and |g_y|; the four families hold a
/// quarter of the NVs each, families 2 and 4 mirroring 1 and 3.
pub fn coupling_density(
    map: &FieldMap,
    concentration: f64,
    nv: &NvParams,
    n_psi: usize,
    m_g: usize,
    exec: Exec,
) -> Result<CouplingDensity> {
    map.validate()?;
    if !(concentration > 0.0) {
        return Err(out_of_range("geometry.concentration", "must be positive"));
    }
    if n_psi == 0 || m_g == 0 {
        return Err(out_of_range("geometry.n_psi", "n_psi and M_g must be >= 1"));
    }
    let psis: Vec<(f64, f64)> = (0..n_psi)
        .map(|k| (2.0 * PI * k as f64 / n_psi as f64).sin_cos())
        .collect();
    let n_each = concentration * map.cell_volume * 0.5 / n_psi as f64;
    let coup = |p: &[f64; 6], fam: u8, k: usize| {
        let (s, c) = psis[k];
        couplings_sc([p[3], p[4]], s, c, fam, nv)
    };
    const CH: usize = 4096;
    let chunks = map.points.len().div_ceil(CH);
    let gmax_parts = map_range(exec, chunks, |i| {
        let mut m = 0.0f64;
        for p in &map.points[i * CH..((i + 1) * CH).min(map.points.len())] {
            for fam in [1u8, 3] {
                for k in 0..n_psi {
                    let (a, b) = coup(p, fam, k);
                    m = m.max(a).max(b);
                }
            }
        }
        m
    });
    let g_max = gmax_parts.iter().cloned().fold(0.0, f64::max);
    if !(g_max > 0.0) {
        return Err(Error::Empty("field map carries no coupling"));
    }
    let lo = G_CUTOFF * g_max;
    let lnr = (g_max / lo).ln();
    // per chunk: [n, n g^2, orth n g^2] per bin, then dropped and family totals
    let width = 3 * m_g + 3;
    let parts = map_range(exec, chunks, |i| {
        let mut h = vec![0.0; width];
        for p in &map.points[i * CH..((i + 1) * CH).min(map.points.len())] {
            for fam in [1u8, 3] {
                let orth = fam == 3;
                for k in 0..n_psi {
                    let (a, b) = coup(p, fam, k);
                    for g in [a, b] {
                        let w = n_each * g * g;
                        h[3 * m_g + 1 + orth as usize] += w;
                        if g < lo {
                            h[3 * m_g] += w;
                            continue;
                        }
                        let j = (((g / lo).ln() / lnr * m_g as f64) as usize).min(m_g - 1);
                        h[3 * j] += n_each;
                        h[3 * j + 1] += w;
                        if orth {
                            h[3 * j + 2] += w;
                        }
                    }
                }
            }
        }
        h
    });
    let col = |c: usize| tree_sum1(&parts.iter().map(|h| h[c]).collect::<Vec<_>>());
    let bins: Vec<GBin> = (0..m_g)
        .filter_map(|j| {
            let (n, w, o) = (col(3 * j), col(3 * j + 1), col(3 * j + 2));
            (n > 0.0).then(|| GBin {
                g: (w / n).sqrt(),
                n,
                orth_share: o / w,
            })
        })
        .collect();
    let dropped = col(3 * m_g);
    let fam = [col(3 * m_g + 1), col(3 * m_g + 2)];
    let total = fam[0] + fam[1];
    let g_ens2 = bins.iter().map(|b| b.weight()).sum();
    Ok(CouplingDensity {
        bins,
        g_ens2,
        g_ens2_family: fam,
        dropped_fraction: dropped / total,
    })
}

/// Scale spin counts so that g_ens = g_measured / sqrt(p).
pub fn rescale_to_measured(
    density: &CouplingDensity,
    g_measured: f64,
    p: f64,
) -> Result<CouplingDensity> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(out_of_range("nv.polarization", "must be in (0, 1]"));
    }
    if !(density.g_ens2 > 0.0) {
        return Err(Error::Empty("coupling density"));
    }
    let target = g_measured * g_measured / p;
    let s = target / density.g_ens2;
    Ok(CouplingDensity {
        bins: density
            .bins
            .iter()
            .map(|b| GBin { n: b.n * s, ..*b })
            .collect(),
        g_ens2: target,
        g_ens2_family: [density.g_ens2_family[0] * s, density.g_ens2_family[1] * s],
        dropped_fraction: density.dropped_fraction,
    })
}

/// psi-averaged <g_x^2> for family 1: (gamma^2 / 6) |dBx - sqrt2 dBy|^2.
pub fn family1_mean_square(db: [f64; 2], nv: &NvParams) -> f64 {
    let m = db[0] - SQRT_2 * db[1];
    nv.gamma_e * nv.gamma_e / 6.0 * m * m
}
