//! Subcommand bodies. Each returns the paths it wrote.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use num_complex::Complex64;
use serde::Serialize;

use spinmem::config::{SimConfig, SweepKind};
use spinmem::coupling::rescale_to_measured;
use spinmem::density::{combine_families, frequency_density};
use spinmem::dynamics::integrate;
use spinmem::echo::{run_echo, saturation_onset, sweep_refocus_power, sweep_tau, EchoReport};
use spinmem::linear::{
    bare_cavity_reflection, deembed_k, k_of_omega, linspace, read_trace, reflection_coeff,
    susceptibility, synthesize_s11, write_trace, ComplexSpectrum, Convention, SpectrumKind,
};
use spinmem::params::Family;
use spinmem::presets::{build_grid, echo_setup, integration, omega_axis, waveform};
use spinmem::spectrum::{transition_freq_approx, transition_freq_exact, TransitionLabel};

use crate::output::{emit_csv, emit_json, Table};
use crate::UsageError;

pub struct Ctx<'a> {
    pub cfg: &'a SimConfig,
    pub out: &'a Path,
}

impl Ctx<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn exec(&self) -> spinmem::par::Exec {
        self.cfg.integrator.exec
    }
}

pub fn spectrum(ctx: &Ctx, e: Option<f64>, b_max: f64, n: usize) -> Result<Vec<PathBuf>> {
    let nv = &ctx.cfg.nv;
    let e = e.unwrap_or(ctx.cfg.distributions.e1);
    let mut cols = vec!["family".to_string(), "B_T".to_string()];
    for l in TransitionLabel::ALL {
        cols.push(format!("approx_{}_rad_s", l.name()));
    }
    for l in TransitionLabel::ALL {
        cols.push(format!("exact_{}_rad_s", l.name()));
    }
    let mut t = Table::new(cols);
    for (fi, fam) in [Family::NonOrth, Family::Orth].into_iter().enumerate() {
        let alpha = nv.alpha_of(fam);
        for b in linspace(0.0, b_max, n) {
            let mut row = vec![fi as f64, b];
            for l in TransitionLabel::ALL {
                row.push(transition_freq_approx(l, e, b, alpha, nv.d, 0.0, nv));
            }
            let ex = transition_freq_exact(nv, e, [b * alpha.sin(), 0.0, b * alpha.cos()])?;
            row.extend_from_slice(&ex);
            t.push(row);
        }
    }
    let p = ctx.path("spectrum.csv");
    emit_csv(&t, &p)?;
    Ok(vec![p])
}

pub fn density(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let c = ctx.cfg;
    let axis = omega_axis(c)?;
    let no = frequency_density(
        c.b_nv,
        &c.distributions,
        &c.nv,
        Family::NonOrth,
        &axis,
        ctx.exec(),
    )?;
    let o = frequency_density(
        c.b_nv,
        &c.distributions,
        &c.nv,
        Family::Orth,
        &axis,
        ctx.exec(),
    )?;
    let comb = combine_families(&o, &no)?;
    let mut t = Table::new(["omega_rad_s", "rho_non_orth", "rho_orth", "rho_combined"]);
    for (k, w) in axis.points().into_iter().enumerate() {
        t.push(vec![w, no.density[k], o.density[k], comb.density[k]]);
    }
    let p = ctx.path("density.csv");
    emit_csv(&t, &p)?;
    #[derive(Serialize)]
    struct Summary {
        integral_combined: f64,
        mean_rad_s: f64,
        n_omega: usize,
    }
    let j = ctx.path("density.json");
    emit_json(
        &Summary {
            integral_combined: comb.trapezoid(),
            mean_rad_s: comb.mean(),
            n_omega: axis.n,
        },
        &j,
    )?;
    Ok(vec![p, j])
}

pub fn coupling(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let c = ctx.cfg;
    let map = spinmem::coupling::analytic_wire_field(&c.geometry.wire, &c.cavity)?;
    let d = spinmem::coupling::coupling_density(
        &map,
        c.geometry.concentration,
        &c.nv,
        c.geometry.n_psi,
        c.grid.m_g,
        ctx.exec(),
    )?;
    let mut t = Table::new(["g_rad_s", "n", "n_g2", "orth_share"]);
    for b in &d.bins {
        t.push(vec![b.g, b.n, b.weight(), b.orth_share]);
    }
    let p = ctx.path("coupling.csv");
    emit_csv(&t, &p)?;
    let rescaled = match c.geometry.g_measured {
        Some(g) => Some(rescale_to_measured(&d, g, c.polarization)?.g_ens()),
        None => None,
    };
    #[derive(Serialize)]
    struct Summary {
        g_ens_rad_s: f64,
        g_ens_over_2pi_hz: f64,
        orth_share: f64,
        dropped_fraction: f64,
        rescaled_g_ens_rad_s: Option<f64>,
    }
    let j = ctx.path("coupling.json");
    emit_json(
        &Summary {
            g_ens_rad_s: d.g_ens(),
            g_ens_over_2pi_hz: d.g_ens() / spinmem::units::TWO_PI,
            orth_share: d.orth_share(),
            dropped_fraction: d.dropped_fraction,
            rescaled_g_ens_rad_s: rescaled,
        },
        &j,
    )?;
    Ok(vec![p, j])
}

pub fn reflect(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let c = ctx.cfg;
    let grid = build_grid(c, ctx.exec())?;
    let w = omega_axis(c)?.points();
    let k = k_of_omega(&grid, c.decoherence.gamma_perp, &w, ctx.exec())?;
    let r = reflection_coeff(&c.cavity, &k);
    let chi = susceptibility(&k, c.cavity.eta, c.cavity.omega_c)?;
    let mut t = Table::new([
        "omega_rad_s",
        "re_K",
        "im_K",
        "re_r",
        "im_r",
        "abs_r",
        "chi_re",
        "chi_im",
    ]);
    for i in 0..w.len() {
        let (kk, rr, x) = (k.values[i], r.values[i], chi.values[i]);
        t.push(vec![
            w[i],
            kk.re,
            kk.im,
            rr.re,
            rr.im,
            rr.norm(),
            x.re,
            x.im,
        ]);
    }
    let p = ctx.path("reflect.csv");
    emit_csv(&t, &p)?;
    // measured-convention traces for a de-embedding round trip
    let s11 = synthesize_s11(&r, |_| Complex64::new(1.0, 0.0));
    let sat = ComplexSpectrum::new(
        w.clone(),
        w.iter()
            .map(|&x| bare_cavity_reflection(x, &c.cavity).conj())
            .collect(),
        SpectrumKind::S11,
    )?;
    let (ps, pt) = (ctx.path("s11.trace"), ctx.path("s11_sat.trace"));
    write_trace(&ps, &s11, Convention::Measured, &c.cavity)?;
    write_trace(&pt, &sat, Convention::Measured, &c.cavity)?;
    Ok(vec![p, ps, pt])
}

pub fn deembed(ctx: &Ctx, s11: &Path, sat: &Path) -> Result<Vec<PathBuf>> {
    for f in [s11, sat] {
        if !f.exists() {
            return Err(UsageError(format!("input trace not found: {}", f.display())).into());
        }
    }
    // traces are read in the physics convention, de-embedding works on measured ones
    let measured = |p: &Path| -> Result<ComplexSpectrum> {
        let mut t = read_trace(p, SpectrumKind::S11)?;
        t.values.iter_mut().for_each(|v| *v = v.conj());
        Ok(t)
    };
    let (a, b) = (measured(s11)?, measured(sat)?);
    let d = deembed_k(&a, &b, &ctx.cfg.cavity)?;
    let mut t = Table::new(["omega_rad_s", "re_K", "im_K"]);
    for (w, k) in d.k.omega.iter().zip(&d.k.values) {
        if k.re.is_finite() && k.im.is_finite() {
            t.push(vec![*w, k.re, k.im]);
        }
    }
    let p = ctx.path("deembed.csv");
    emit_csv(&t, &p)?;
    #[derive(Serialize)]
    struct Summary {
        points: usize,
        flagged: Vec<usize>,
    }
    let j = ctx.path("deembed.json");
    emit_json(
        &Summary {
            points: d.k.omega.len(),
            flagged: d.flagged.clone(),
        },
        &j,
    )?;
    Ok(vec![p, j])
}

pub fn simulate(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let c = ctx.cfg;
    let grid = build_grid(c, ctx.exec())?;
    let wave = waveform(c, grid.omega_s)?;
    if wave.segments.is_empty() && c.integrator.t_end.is_none() {
        return Err(UsageError("simulate needs drive sections or integrator.t_end".into()).into());
    }
    let opts = integration(c, wave.t_end() + 5.0 / c.cavity.kappa);
    let tr = integrate(&wave, &grid, &c.cavity, &c.decoherence, &opts)?;
    let mut t = Table::new(["t_s", "re_a_R", "im_a_R", "re_a_c", "im_a_c"]);
    for i in 0..tr.len() {
        let ac = tr.a_c(i);
        t.push(vec![tr.t[i], tr.a_r[i].re, tr.a_r[i].im, ac.re, ac.im]);
    }
    let p = ctx.path("simulate.csv");
    emit_csv(&t, &p)?;
    #[derive(Serialize)]
    struct Summary {
        dt: f64,
        samples: usize,
        bins: usize,
        input_photons: f64,
        output_photons: f64,
    }
    let j = ctx.path("simulate.json");
    let t_last = tr.t[tr.len() - 1];
    emit_json(
        &Summary {
            dt: tr.dt,
            samples: tr.len(),
            bins: grid.len(),
            input_photons: wave.segments.iter().map(|s| s.energy()).sum(),
            output_photons: tr.energy(0.0, t_last),
        },
        &j,
    )?;
    Ok(vec![p, j])
}

#[derive(Serialize)]
struct EchoJson {
    report: ReportJson,
    delta_ac: Option<f64>,
    dt: f64,
    bins: usize,
}

#[derive(Serialize)]
struct ReportJson {
    tau: f64,
    phi_r: f64,
    half_window: f64,
    echoes: Vec<EchoJsonRow>,
}

#[derive(Serialize)]
struct EchoJsonRow {
    index: usize,
    t_in: f64,
    phi_in: f64,
    input_photons: f64,
    t_expected: f64,
    echo_time: f64,
    echo_photons: f64,
    echo_area: f64,
    echo_phase: f64,
    efficiency: f64,
}

fn report_json(r: &EchoReport) -> ReportJson {
    ReportJson {
        tau: r.tau,
        phi_r: r.phi_r,
        half_window: r.half_window,
        echoes: r
            .echoes
            .iter()
            .enumerate()
            .map(|(i, e)| EchoJsonRow {
                index: i + 1,
                t_in: e.t_in,
                phi_in: e.phi_in,
                input_photons: e.input_energy,
                t_expected: e.t_expected,
                echo_time: e.echo_time,
                echo_photons: e.echo_energy,
                echo_area: e.echo_area,
                echo_phase: e.echo_phase,
                efficiency: e.efficiency,
            })
            .collect(),
    }
}

pub fn echo2pe(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let c = ctx.cfg;
    let grid = build_grid(c, ctx.exec())?;
    let bins = grid.len();
    let setup = echo_setup(c, grid)?;
    let run = run_echo(&setup)?;
    let j = ctx.path("echo2pe.json");
    emit_json(
        &EchoJson {
            report: report_json(&run.report),
            delta_ac: run.delta_ac,
            dt: run.trace.dt,
            bins,
        },
        &j,
    )?;
    let mut t = Table::new(["t_s", "re_a_R", "im_a_R"]);
    for i in 0..run.trace.len() {
        t.push(vec![
            run.trace.t[i],
            run.trace.a_r[i].re,
            run.trace.a_r[i].im,
        ]);
    }
    let p = ctx.path("echo2pe.csv");
    emit_csv(&t, &p)?;
    Ok(vec![j, p])
}

pub fn sweep(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let c = ctx.cfg;
    let spec = c
        .sweep
        .clone()
        .ok_or_else(|| UsageError("sweep.kind: missing [sweep] section".into()))?;
    let grid = build_grid(c, ctx.exec())?;
    let setup = echo_setup(c, grid)?;
    let (p, j) = (ctx.path("sweep.csv"), ctx.path("sweep.json"));
    match spec.kind {
        SweepKind::RefocusPower => {
            let pts = sweep_refocus_power(&setup, &spec.values)?;
            let mut t = Table::new(["power_dBm", "echo_area", "echo_photons"]);
            for q in &pts {
                t.push(vec![q.dbm, q.area, q.energy]);
            }
            emit_csv(&t, &p)?;
            #[derive(Serialize)]
            struct Summary {
                kind: &'static str,
                onset_dbm: Option<f64>,
                points: usize,
            }
            emit_json(
                &Summary {
                    kind: "refocus_power",
                    onset_dbm: saturation_onset(&pts),
                    points: pts.len(),
                },
                &j,
            )?;
        }
        SweepKind::Tau => {
            let s = sweep_tau(&setup, &spec.values)?;
            let mut t = Table::new(["tau_s", "pulse", "delay_s", "efficiency"]);
            for row in &s.rows {
                for (k, (d, e)) in row.delay.iter().zip(&row.efficiency).enumerate() {
                    t.push(vec![row.tau, (k + 1) as f64, *d, *e]);
                }
            }
            emit_csv(&t, &p)?;
            #[derive(Serialize)]
            struct Summary {
                kind: &'static str,
                prefactor: f64,
                taus: usize,
            }
            emit_json(
                &Summary {
                    kind: "tau",
                    prefactor: s.prefactor,
                    taus: s.rows.len(),
                },
                &j,
            )?;
        }
    }
    Ok(vec![p, j])
}

/// Canonical config text; fails if it does not re-parse to the same value.
pub fn canonical(cfg: &SimConfig) -> Result<String> {
    let text = cfg.to_text();
    let back = SimConfig::parse(&text).context("canonical config does not re-parse")?;
    anyhow::ensure!(&back == cfg, "canonical config does not round-trip");
    Ok(text)
}
