//! Sectioned `key = value` configuration.
//!
//! Grammar, one item per line:
//!
//! ```text
//! # comment            (also ';'; trailing comments after ' #' are stripped)
//! [section]            section names: letters, digits, '_' and '.'
//! key = value [unit]   any numeric field takes an optional unit suffix
//! key = a, b, c        lists are comma separated, each item with its own unit
//! ```
//!
//! Keys before the first section header are an error, as are duplicate
//! sections and duplicate keys. Drive pulses live in `[drive.1]`,
//! `[drive.2]`, ... and are ordered by their index. Serialization writes
//! every field in SI units with the shortest exact float representation, so
//! `parse(serialize(c)) == c` bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::coupling::WireGeometry;
use crate::echo::Baseline;
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::params::{
    BiExp, CavityParams, DecoherenceSpec, DensityScheme, DistributionSpec, Family, NvParams,
    Validate,
};
use crate::units::{gamma_nv, Dim, Quantity, Unit};

/// Raw parsed text: ordered sections of ordered `(key, value, line)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Document {
    pub sections: Vec<Section>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub entries: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

fn strip_comment(line: &str) -> &str {
    let mut end = line.len();
    for pat in [" #", "\t#", " ;", "\t;"] {
        if let Some(i) = line.find(pat) {
            end = end.min(i);
        }
    }
    &line[..end]
}

fn valid_name(s: &str, dots: bool) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || (dots && c == '.'))
}

impl Document {
    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = Document::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') || t.starts_with(';') {
                continue;
            }
            let t = strip_comment(t).trim();
            if let Some(rest) = t.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Parse {
                        line,
                        msg: "unterminated section header".into(),
                    })?
                    .trim();
                if !valid_name(name, true) {
                    return Err(Error::Parse {
                        line,
                        msg: format!("bad section name '{name}'"),
                    });
                }
                if doc.section(name).is_some() {
                    return Err(Error::Parse {
                        line,
                        msg: format!("duplicate section [{name}]"),
                    });
                }
                doc.sections.push(Section {
                    name: name.to_string(),
                    line,
                    entries: Vec::new(),
                });
                continue;
            }
            let (k, v) = t.split_once('=').ok_or_else(|| Error::Parse {
                line,
                msg: format!("expected 'key = value', got '{t}'"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if !valid_name(k, false) {
                return Err(Error::Parse {
                    line,
                    msg: format!("bad key '{k}'"),
                });
            }
            let sec = doc.sections.last_mut().ok_or_else(|| Error::Parse {
                line,
                msg: format!("key '{k}' outside any section"),
            })?;
            if sec.entries.iter().any(|e| e.key == k) {
                return Err(Error::Parse {
                    line,
                    msg: format!("duplicate key {}.{k}", sec.name),
                });
            }
            sec.entries.push(Entry {
                key: k.to_string(),
                value: v.to_string(),
                line,
            });
        }
        Ok(doc)
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.section(section)?.entries.iter().find(|e| e.key == key)
    }

    /// Apply `section.key=value`; the key is the text after the last dot.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let bad = || Error::Parse {
            line: 0,
            msg: format!("override '{assignment}' is not section.key=value"),
        };
        let (path, value) = assignment.split_once('=').ok_or_else(bad)?;
        let (section, key) = path.trim().rsplit_once('.').ok_or_else(bad)?;
        if !valid_name(section, true) || !valid_name(key, false) {
            return Err(bad());
        }
        let value = value.trim().to_string();
        let idx = match self.sections.iter().position(|s| s.name == section) {
            Some(i) => i,
            None => {
                self.sections.push(Section {
                    name: section.to_string(),
                    line: 0,
                    entries: Vec::new(),
                });
                self.sections.len() - 1
            }
        };
        let sec = &mut self.sections[idx];
        match sec.entries.iter_mut().find(|e| e.key == key) {
            Some(e) => e.value = value,
            None => sec.entries.push(Entry {
                key: key.to_string(),
                value,
                line: 0,
            }),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "[{}]", s.name);
            for e in &s.entries {
                let _ = writeln!(out, "{} = {}", e.key, e.value);
            }
        }
        out
    }
}

/// Role of a drive pulse in an echo sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PulseRole {
    Storage,
    Refocus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveSpec {
    pub role: PulseRole,
    pub center: f64,
    pub duration: f64,
    /// Incident photon flux |beta|^2 (photons/s).
    pub flux: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub omega_start: f64,
    pub omega_stop: f64,
    pub n_omega: usize,
    pub m_delta: usize,
    pub m_g: usize,
    /// Rotating-frame frequency; `None` uses the density mean.
    pub omega_s: Option<f64>,
    pub family: Family,
    /// Number of coupling values per log bin, cycled over frequency bins;
    /// 0 or 1 keeps one value per bin.
    pub g_stratify: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometrySpec {
    pub wire: WireGeometry,
    /// NV number density (1/m^3).
    pub concentration: f64,
    pub n_psi: usize,
    /// Rescale the simulated ensemble coupling to this value when present.
    pub g_measured: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EchoSpec {
    /// Drive carrier (rad/s).
    pub carrier: f64,
    pub ramp: f64,
    pub half_window: Option<f64>,
    pub subtract_reference: bool,
    pub bi_t2: bool,
    pub baseline: Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorSpec {
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub stride: usize,
    pub exec: Exec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    RefocusPower,
    Tau,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub kind: SweepKind,
    /// dBm for power sweeps, seconds for delay sweeps.
    pub values: Vec<f64>,
}

/// Complete validated parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub version: u32,
    pub cavity: CavityParams,
    pub nv: NvParams,
    /// Applied field magnitude (T).
    pub b_nv: f64,
    /// Initial polarization p'.
    pub polarization: f64,
    pub distributions: DistributionSpec,
    pub decoherence: DecoherenceSpec,
    pub drives: Vec<DriveSpec>,
    pub grid: GridSpec,
    pub geometry: GeometrySpec,
    pub echo: EchoSpec,
    pub integrator: IntegratorSpec,
    pub sweep: Option<SweepSpec>,
}

pub const CONFIG_VERSION: u32 = 1;

/// Field accessor that remembers which keys were consumed.
struct Reader<'a> {
    doc: &'a Document,
    used: BTreeMap<(String, String), ()>,
}

fn field_err(section: &str, key: &str, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse {
        line,
        msg: format!("{section}.{key}: {msg}"),
    }
}

impl<'a> Reader<'a> {
    fn raw(&mut self, section: &str, key: &str) -> Option<(&'a str, usize)> {
        let e = self.doc.get(section, key)?;
        self.used.insert((section.to_string(), key.to_string()), ());
        Some((e.value.as_str(), e.line))
    }

    fn quantity(
        &mut self,
        section: &str,
        key: &str,
        dim: Dim,
        carrier: Option<f64>,
    ) -> Result<Option<f64>> {
        let Some((v, line)) = self.raw(section, key) else {
            return Ok(None);
        };
        Ok(Some(
            convert(v, dim, carrier).map_err(|e| field_err(section, key, line, e))?,
        ))
    }

    fn req(&mut self, section: &str, key: &str, dim: Dim, carrier: Option<f64>) -> Result<f64> {
        self.quantity(section, key, dim, carrier)?
            .ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("{section}.{key}: missing required field"),
            })
    }

    fn or(&mut self, section: &str, key: &str, dim: Dim, default: f64) -> Result<f64> {
        Ok(self.quantity(section, key, dim, None)?.unwrap_or(default))
    }

    fn count(&mut self, section: &str, key: &str, default: usize) -> Result<usize> {
        let Some((v, line)) = self.raw(section, key) else {
            return Ok(default);
        };
        v.parse().map_err(|_| {
            field_err(
                section,
                key,
                line,
                format!("expected a non-negative integer, got '{v}'"),
            )
        })
    }

    fn flag(&mut self, section: &str, key: &str, default: bool) -> Result<bool> {
        let Some((v, line)) = self.raw(section, key) else {
            return Ok(default);
        };
        match v {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => Err(field_err(
                section,
                key,
                line,
                format!("expected true or false, got '{v}'"),
            )),
        }
    }

    fn word<T>(
        &mut self,
        section: &str,
        key: &str,
        default: T,
        f: impl Fn(&str) -> Option<T>,
    ) -> Result<T> {
        let Some((v, line)) = self.raw(section, key) else {
            return Ok(default);
        };
        f(v).ok_or_else(|| field_err(section, key, line, format!("unknown value '{v}'")))
    }

    fn list(&mut self, section: &str, key: &str, dim: Dim) -> Result<Option<Vec<f64>>> {
        let Some((v, line)) = self.raw(section, key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|item| convert(item, dim, None).map_err(|e| field_err(section, key, line, e)))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }
}

fn convert(text: &str, dim: Dim, carrier: Option<f64>) -> Result<f64> {
    let q: Quantity = text.parse()?;
    let d = q.unit.dim();
    // bare numbers are taken in the SI base of the expected dimension
    if d == Dim::Scalar {
        if !q.value.is_finite() {
            return Err(Error::Unit(format!("non-finite value '{text}'")));
        }
        return Ok(q.value);
    }
    if d != dim {
        return Err(Error::Unit(format!("unit '{}' is not a {dim:?}", q.unit)));
    }
    let v = if dim == Dim::Power {
        q.si(carrier)?
    } else {
        q.si(None)?
    };
    if !v.is_finite() {
        return Err(Error::Unit(format!("non-finite value '{text}'")));
    }
    Ok(v)
}

fn exec_name(e: Exec) -> &'static str {
    match e {
        Exec::Auto => "auto",
        Exec::Sequential => "sequential",
        Exec::Parallel => "parallel",
    }
}

fn baseline_name(b: Baseline) -> &'static str {
    match b {
        Baseline::None => "none",
        Baseline::PrePulse => "pre_pulse",
        Baseline::Edges => "edges",
    }
}

fn scheme_name(s: DensityScheme) -> &'static str {
    match s {
        DensityScheme::BinMass => "bin_mass",
        DensityScheme::FieldStep => "field_step",
    }
}

const SECTIONS: &[&str] = &[
    "meta",
    "cavity",
    "nv",
    "distributions",
    "decoherence",
    "grid",
    "geometry",
    "echo",
    "integrator",
    "sweep",
];

impl SimConfig {
    pub fn from_document(doc: &Document) -> Result<Self> {
        for s in &doc.sections {
            let known = SECTIONS.contains(&s.name.as_str())
                || s.name
                    .strip_prefix("drive.")
                    .is_some_and(|n| n.parse::<usize>().is_ok_and(|k| k >= 1));
            if !known {
                return Err(Error::Parse {
                    line: s.line,
                    msg: format!("unknown section [{}]", s.name),
                });
            }
        }
        let mut r = Reader {
            doc,
            used: BTreeMap::new(),
        };
        let version = r.count("meta", "version", CONFIG_VERSION as usize)? as u32;
        if version != CONFIG_VERSION {
            return Err(Error::Parse {
                line: 0,
                msg: format!("meta.version: unsupported version {version}"),
            });
        }

        let omega_c = r.req("cavity", "omega_c", Dim::Frequency, None)?;
        let q = r.quantity("cavity", "Q", Dim::Scalar, None)?;
        let kappa = r.quantity("cavity", "kappa", Dim::Frequency, None)?;
        let eta = r.req("cavity", "eta", Dim::Scalar, None)?;
        let z0 = r.req("cavity", "Z0", Dim::Resistance, None)?;
        let cavity = match (q, kappa) {
            (Some(q), None) => CavityParams::from_q(omega_c, q, eta, z0),
            (None, Some(k)) => CavityParams::from_kappa(omega_c, k, eta, z0),
            (Some(q), Some(k)) => CavityParams {
                omega_c,
                kappa: k,
                quality_factor: q,
                eta,
                z0,
            },
            (None, None) => {
                return Err(Error::Parse {
                    line: 0,
                    msg: "cavity.Q: one of Q or kappa is required".into(),
                })
            }
        };

        let p = NvParams::nominal();
        let nv = NvParams::new(
            r.or("nv", "D", Dim::Frequency, p.d)?,
            r.or("nv", "A_hf", Dim::Frequency, p.a_hf)?,
            r.or("nv", "Q_nuc", Dim::Frequency, p.q_nuc)?,
            r.or("nv", "gamma_e", Dim::Scalar, gamma_nv())?,
            [
                r.or("nv", "alpha_non_orth", Dim::Angle, p.alpha[0])?,
                r.or("nv", "alpha_orth", Dim::Angle, p.alpha[1])?,
            ],
        );
        let b_nv = r.or("nv", "B", Dim::Field, 0.0)?;
        let polarization = r.or("nv", "polarization", Dim::Scalar, 1.0)?;

        let d = DistributionSpec::nominal();
        let distributions = DistributionSpec {
            db0: r.or("distributions", "db0", Dim::Field, d.db0)?,
            dd0: r.or("distributions", "dD0", Dim::Frequency, d.dd0)?,
            e1: r.or("distributions", "E1", Dim::Frequency, d.e1)?,
            e2: r.or("distributions", "E2", Dim::Frequency, d.e2)?,
            a1: r.or("distributions", "A1", Dim::Scalar, d.a1)?,
            d_omega0: r.quantity("distributions", "d_omega0", Dim::Frequency, None)?,
            truncation_widths: r.or(
                "distributions",
                "truncation_widths",
                Dim::Scalar,
                d.truncation_widths,
            )?,
            scheme: r.word("distributions", "scheme", d.scheme, |s| match s {
                "bin_mass" => Some(DensityScheme::BinMass),
                "field_step" => Some(DensityScheme::FieldStep),
                _ => None,
            })?,
        };

        let t2 = r.quantity("decoherence", "T2", Dim::Time, None)?;
        let gp = r.quantity("decoherence", "gamma_perp", Dim::Frequency, None)?;
        let gamma_par = r.or("decoherence", "gamma_par", Dim::Frequency, 0.0)?;
        let t2a = r.quantity("decoherence", "T2A", Dim::Time, None)?;
        let t2b = r.quantity("decoherence", "T2B", Dim::Time, None)?;
        let wa = r.quantity("decoherence", "weight_A", Dim::Scalar, None)?;
        let wb = r.quantity("decoherence", "weight_B", Dim::Scalar, None)?;
        let biexp = match (t2a, t2b) {
            (Some(t2a), Some(t2b)) => {
                let weight_a = wa.unwrap_or_else(|| 1.0 - wb.unwrap_or(0.0));
                let weight_b = wb.unwrap_or(1.0 - weight_a);
                Some(BiExp {
                    t2a,
                    t2b,
                    weight_a,
                    weight_b,
                })
            }
            (None, None) => None,
            _ => {
                return Err(Error::Parse {
                    line: 0,
                    msg: "decoherence.T2B: T2A and T2B come as a pair".into(),
                })
            }
        };
        let gamma_perp = match (gp, t2, biexp) {
            (Some(g), _, _) => g,
            (None, Some(t), _) => 1.0 / t,
            (None, None, Some(b)) => 1.0 / b.t2a,
            (None, None, None) => 0.0,
        };
        let decoherence = DecoherenceSpec {
            gamma_perp,
            gamma_par,
            biexp,
        };

        let e = EchoSpec {
            carrier: r.or("echo", "carrier", Dim::Frequency, cavity.omega_c)?,
            ramp: r.or("echo", "ramp", Dim::Time, crate::drive::DEFAULT_RAMP)?,
            half_window: r.quantity("echo", "half_window", Dim::Time, None)?,
            subtract_reference: r.flag("echo", "subtract_reference", false)?,
            bi_t2: r.flag("echo", "bi_t2", true)?,
            baseline: r.word("echo", "baseline", Baseline::PrePulse, |s| match s {
                "none" => Some(Baseline::None),
                "pre_pulse" => Some(Baseline::PrePulse),
                "edges" => Some(Baseline::Edges),
                _ => None,
            })?,
        };

        let mut idx: Vec<(usize, String)> = doc
            .sections
            .iter()
            .filter_map(|s| {
                s.name
                    .strip_prefix("drive.")
                    .and_then(|n| n.parse().ok())
                    .map(|n| (n, s.name.clone()))
            })
            .collect();
        idx.sort();
        let mut drives = Vec::with_capacity(idx.len());
        for (_, name) in &idx {
            let n = name.as_str();
            drives.push(DriveSpec {
                role: r.word(n, "role", PulseRole::Storage, |s| match s {
                    "storage" => Some(PulseRole::Storage),
                    "refocus" => Some(PulseRole::Refocus),
                    _ => None,
                })?,
                center: r.req(n, "center", Dim::Time, None)?,
                duration: r.req(n, "duration", Dim::Time, None)?,
                flux: r.req(n, "power", Dim::Power, Some(e.carrier))?,
                phase: r.or(n, "phase", Dim::Angle, 0.0)?,
            });
        }

        let grid = GridSpec {
            omega_start: r.req("grid", "omega_start", Dim::Frequency, None)?,
            omega_stop: r.req("grid", "omega_stop", Dim::Frequency, None)?,
            n_omega: r.count("grid", "n_omega", 3001)?,
            m_delta: r.count("grid", "M_delta", 0)?,
            m_g: r.count("grid", "M_g", 21)?,
            omega_s: r.quantity("grid", "omega_s", Dim::Frequency, None)?,
            family: r.word("grid", "family", Family::Combined, Family::parse)?,
            g_stratify: r.count("grid", "g_stratify", 0)?,
        };
        let grid = GridSpec {
            m_delta: if grid.m_delta == 0 {
                grid.n_omega
            } else {
                grid.m_delta
            },
            ..grid
        };

        let w = WireGeometry::nominal();
        let wire = WireGeometry {
            n_wires: r.count("geometry", "n_wires", w.n_wires)?,
            width: r.or("geometry", "width", Dim::Length, w.width)?,
            pitch: r.or("geometry", "pitch", Dim::Length, w.pitch)?,
            gap: r.or("geometry", "gap", Dim::Length, w.gap)?,
            length: r.or("geometry", "length", Dim::Length, w.length)?,
            depth: r.or("geometry", "depth", Dim::Length, w.depth)?,
            margin: r.or("geometry", "margin", Dim::Length, w.margin)?,
            cell: r.or("geometry", "cell", Dim::Length, w.cell)?,
            filaments: r.count("geometry", "filaments", w.filaments)?,
            finite_length: r.flag("geometry", "finite_length", w.finite_length)?,
        };
        let geometry = GeometrySpec {
            wire,
            concentration: r.or(
                "geometry",
                "concentration",
                Dim::Concentration,
                2e-6 * crate::units::DIAMOND_CARBON_DENSITY,
            )?,
            n_psi: r.count("geometry", "n_psi", 64)?,
            g_measured: r.quantity("geometry", "g_measured", Dim::Frequency, None)?,
        };

        let integrator = IntegratorSpec {
            dt: r.quantity("integrator", "dt", Dim::Time, None)?,
            t_end: r.quantity("integrator", "t_end", Dim::Time, None)?,
            stride: r.count("integrator", "stride", 1)?,
            exec: r.word("integrator", "exec", Exec::Auto, |s| match s {
                "auto" => Some(Exec::Auto),
                "sequential" => Some(Exec::Sequential),
                "parallel" => Some(Exec::Parallel),
                _ => None,
            })?,
        };

        let sweep = match r.raw("sweep", "kind") {
            None => None,
            Some((k, line)) => {
                let (kind, dim) = match k {
                    "refocus_power" => (SweepKind::RefocusPower, Dim::Scalar),
                    "tau" => (SweepKind::Tau, Dim::Time),
                    _ => {
                        return Err(field_err(
                            "sweep",
                            "kind",
                            line,
                            format!("unknown value '{k}'"),
                        ))
                    }
                };
                let values = match kind {
                    SweepKind::RefocusPower => dbm_list(&mut r)?,
                    SweepKind::Tau => r.list("sweep", "values", dim)?.unwrap_or_default(),
                };
                Some(SweepSpec { kind, values })
            }
        };

        for s in &doc.sections {
            for en in &s.entries {
                if !r.used.contains_key(&(s.name.clone(), en.key.clone())) {
                    return Err(field_err(&s.name, &en.key, en.line, "unknown key"));
                }
            }
        }

        let c = SimConfig {
            version,
            cavity,
            nv,
            b_nv,
            polarization,
            distributions,
            decoherence,
            drives,
            grid,
            geometry,
            echo: e,
            integrator,
            sweep,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_document(&Document::parse(text)?)
    }

    /// Parse `text`, apply `section.key=value` overrides, then validate.
    pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc = Document::parse(text)?;
        for o in overrides {
            doc.set(o)?;
        }
        // Q and kappa are alternatives; an override of one drops the other
        for o in overrides {
            let key = o.split_once('=').map(|(k, _)| k.trim()).unwrap_or("");
            let drop = match key {
                "cavity.Q" => Some("kappa"),
                "cavity.kappa" => Some("Q"),
                "decoherence.T2" => Some("gamma_perp"),
                "decoherence.gamma_perp" => Some("T2"),
                _ => None,
            };
            if let (Some(d), Some(s)) = (
                drop,
                doc.sections
                    .iter_mut()
                    .find(|s| s.name == key.split('.').next().unwrap_or("")),
            ) {
                s.entries.retain(|e| e.key != d);
            }
        }
        Self::from_document(&doc)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_with_overrides(&text, overrides)
    }

    /// Canonical text in SI units.
    pub fn to_document(&self) -> Document {
        let mut doc = Document::default();
        let mut sec = |name: &str, entries: Vec<(&str, String)>| {
            doc.sections.push(Section {
                name: name.to_string(),
                line: 0,
                entries: entries
                    .into_iter()
                    .map(|(k, v)| Entry {
                        key: k.to_string(),
                        value: v,
                        line: 0,
                    })
                    .collect(),
            });
        };
        let f = |v: f64, u: Unit| match u {
            Unit::One => format!("{v:e}"),
            _ => format!("{v:e} {u}"),
        };
        let c = &self.cavity;
        sec("meta", vec![("version", self.version.to_string())]);
        sec(
            "cavity",
            vec![
                ("omega_c", f(c.omega_c, Unit::RadPerS)),
                ("Q", f(c.quality_factor, Unit::One)),
                ("kappa", f(c.kappa, Unit::RadPerS)),
                ("eta", f(c.eta, Unit::One)),
                ("Z0", f(c.z0, Unit::Ohm)),
            ],
        );
        let n = &self.nv;
        sec(
            "nv",
            vec![
                ("D", f(n.d, Unit::RadPerS)),
                ("A_hf", f(n.a_hf, Unit::RadPerS)),
                ("Q_nuc", f(n.q_nuc, Unit::RadPerS)),
                ("gamma_e", f(n.gamma_e, Unit::One)),
                ("alpha_non_orth", f(n.alpha[0], Unit::Radian)),
                ("alpha_orth", f(n.alpha[1], Unit::Radian)),
                ("B", f(self.b_nv, Unit::Tesla)),
                ("polarization", f(self.polarization, Unit::One)),
            ],
        );
        let d = &self.distributions;
        let mut dist = vec![
            ("db0", f(d.db0, Unit::Tesla)),
            ("dD0", f(d.dd0, Unit::RadPerS)),
            ("E1", f(d.e1, Unit::RadPerS)),
            ("E2", f(d.e2, Unit::RadPerS)),
            ("A1", f(d.a1, Unit::One)),
            ("truncation_widths", f(d.truncation_widths, Unit::One)),
            ("scheme", scheme_name(d.scheme).to_string()),
        ];
        if let Some(w) = d.d_omega0 {
            dist.push(("d_omega0", f(w, Unit::RadPerS)));
        }
        sec("distributions", dist);
        let dc = &self.decoherence;
        let mut dec = vec![
            ("gamma_perp", f(dc.gamma_perp, Unit::RadPerS)),
            ("gamma_par", f(dc.gamma_par, Unit::RadPerS)),
        ];
        if let Some(b) = dc.biexp {
            dec.push(("T2A", f(b.t2a, Unit::Second)));
            dec.push(("T2B", f(b.t2b, Unit::Second)));
            dec.push(("weight_A", f(b.weight_a, Unit::One)));
            dec.push(("weight_B", f(b.weight_b, Unit::One)));
        }
        sec("decoherence", dec);
        let g = &self.grid;
        let mut grid = vec![
            ("omega_start", f(g.omega_start, Unit::RadPerS)),
            ("omega_stop", f(g.omega_stop, Unit::RadPerS)),
            ("n_omega", g.n_omega.to_string()),
            ("M_delta", g.m_delta.to_string()),
            ("M_g", g.m_g.to_string()),
            ("family", g.family.name().to_string()),
            ("g_stratify", g.g_stratify.to_string()),
        ];
        if let Some(w) = g.omega_s {
            grid.push(("omega_s", f(w, Unit::RadPerS)));
        }
        sec("grid", grid);
        let w = &self.geometry.wire;
        let mut geo = vec![
            ("n_wires", w.n_wires.to_string()),
            ("width", f(w.width, Unit::Meter)),
            ("pitch", f(w.pitch, Unit::Meter)),
            ("gap", f(w.gap, Unit::Meter)),
            ("length", f(w.length, Unit::Meter)),
            ("depth", f(w.depth, Unit::Meter)),
            ("margin", f(w.margin, Unit::Meter)),
            ("cell", f(w.cell, Unit::Meter)),
            ("filaments", w.filaments.to_string()),
            ("finite_length", w.finite_length.to_string()),
            (
                "concentration",
                f(self.geometry.concentration, Unit::PerCubicMeter),
            ),
            ("n_psi", self.geometry.n_psi.to_string()),
        ];
        if let Some(gm) = self.geometry.g_measured {
            geo.push(("g_measured", f(gm, Unit::RadPerS)));
        }
        sec("geometry", geo);
        let e = &self.echo;
        let mut echo = vec![
            ("carrier", f(e.carrier, Unit::RadPerS)),
            ("ramp", f(e.ramp, Unit::Second)),
            ("subtract_reference", e.subtract_reference.to_string()),
            ("bi_t2", e.bi_t2.to_string()),
            ("baseline", baseline_name(e.baseline).to_string()),
        ];
        if let Some(h) = e.half_window {
            echo.push(("half_window", f(h, Unit::Second)));
        }
        sec("echo", echo);
        let it = &self.integrator;
        let mut integ = vec![
            ("stride", it.stride.to_string()),
            ("exec", exec_name(it.exec).to_string()),
        ];
        if let Some(dt) = it.dt {
            integ.push(("dt", f(dt, Unit::Second)));
        }
        if let Some(t) = it.t_end {
            integ.push(("t_end", f(t, Unit::Second)));
        }
        sec("integrator", integ);
        if let Some(s) = &self.sweep {
            let (kind, unit) = match s.kind {
                SweepKind::RefocusPower => ("refocus_power", Unit::DBm),
                SweepKind::Tau => ("tau", Unit::Second),
            };
            let values = s
                .values
                .iter()
                .map(|v| f(*v, unit))
                .collect::<Vec<_>>()
                .join(", ");
            sec(
                "sweep",
                vec![("kind", kind.to_string()), ("values", values)],
            );
        }
        for (i, p) in self.drives.iter().enumerate() {
            let role = match p.role {
                PulseRole::Storage => "storage",
                PulseRole::Refocus => "refocus",
            };
            sec(
                &format!("drive.{}", i + 1),
                vec![
                    ("role", role.to_string()),
                    ("center", f(p.center, Unit::Second)),
                    ("duration", f(p.duration, Unit::Second)),
                    ("power", f(p.flux, Unit::PhotonsPerS)),
                    ("phase", f(p.phase, Unit::Radian)),
                ],
            );
        }
        doc
    }

    pub fn to_text(&self) -> String {
        self.to_document().to_text()
    }

    pub fn storage_pulses(&self) -> impl Iterator<Item = &DriveSpec> {
        self.drives.iter().filter(|d| d.role == PulseRole::Storage)
    }

    pub fn refocus_pulse(&self) -> Option<&DriveSpec> {
        self.drives.iter().find(|d| d.role == PulseRole::Refocus)
    }
}

fn dbm_list(r: &mut Reader) -> Result<Vec<f64>> {
    let Some((v, line)) = r.raw("sweep", "values") else {
        return Ok(Vec::new());
    };
    v.split(',')
        .map(|item| {
            let q: Quantity = item
                .parse()
                .map_err(|e| field_err("sweep", "values", line, e))?;
            match q.unit {
                Unit::DBm | Unit::One if q.value.is_finite() => Ok(q.value),
                _ => Err(field_err(
                    "sweep",
                    "values",
                    line,
                    format!("power sweep values are in dBm, got '{}'", item.trim()),
                )),
            }
        })
        .collect()
}

impl Validate for SimConfig {
    fn validate(&self) -> Result<()> {
        use crate::error::out_of_range;
        self.cavity.validate()?;
        self.nv.validate()?;
        self.distributions.validate()?;
        self.decoherence.validate()?;
        if !self.b_nv.is_finite() {
            return Err(out_of_range("nv.B", "must be finite"));
        }
        if !(self.polarization > 0.0 && self.polarization <= 1.0) {
            return Err(out_of_range("nv.polarization", "must be in (0, 1]"));
        }
        let g = &self.grid;
        if !(g.omega_stop > g.omega_start && g.omega_start > 0.0) || g.n_omega < 2 {
            return Err(out_of_range(
                "grid.omega_stop",
                "need 0 < omega_start < omega_stop and n_omega >= 2",
            ));
        }
        if g.m_delta == 0 || g.m_g == 0 {
            return Err(out_of_range("grid.M_delta", "M_delta and M_g must be >= 1"));
        }
        let geo = &self.geometry;
        if !(geo.concentration > 0.0) || geo.n_psi == 0 {
            return Err(out_of_range(
                "geometry.concentration",
                "concentration and n_psi must be positive",
            ));
        }
        if geo.g_measured.is_some_and(|v| !(v > 0.0)) {
            return Err(out_of_range("geometry.g_measured", "must be positive"));
        }
        if !(self.echo.carrier > 0.0) {
            return Err(out_of_range("echo.carrier", "must be positive"));
        }
        if !(self.echo.ramp >= 0.0) {
            return Err(out_of_range("echo.ramp", "must be >= 0"));
        }
        if self.echo.half_window.is_some_and(|h| !(h > 0.0)) {
            return Err(out_of_range("echo.half_window", "must be positive"));
        }
        let it = &self.integrator;
        if it.dt.is_some_and(|v| !(v > 0.0)) {
            return Err(out_of_range("integrator.dt", "must be positive"));
        }
        if it.t_end.is_some_and(|v| !(v > 0.0)) {
            return Err(out_of_range("integrator.t_end", "must be positive"));
        }
        if it.stride == 0 {
            return Err(out_of_range("integrator.stride", "must be >= 1"));
        }
        for p in &self.drives {
            if !(p.duration > 0.0)
                || !(p.flux >= 0.0)
                || !p.center.is_finite()
                || !p.phase.is_finite()
            {
                return Err(out_of_range(
                    "drive.duration",
                    "pulses need positive duration and non-negative power",
                ));
            }
        }
        if self
            .drives
            .iter()
            .filter(|d| d.role == PulseRole::Refocus)
            .count()
            > 1
        {
            return Err(out_of_range("drive.role", "at most one refocusing pulse"));
        }
        Ok(())
    }
}
