//! Acceptance checks. One PASS/FAIL line per criterion; exits non-zero when
//! any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{compare, monte_carlo, narrow_config, setup, single_pulse, wrap};
use spinmem::config::SimConfig;
use spinmem::coupling::{analytic_wire_field, coupling_density, WireGeometry};
use spinmem::density::{frequency_density, OmegaAxis};
use spinmem::drive::{DriveWaveform, Segment};
use spinmem::dynamics::{auto_dt, init_state, integrate, integrate_from, Integration, TimeTrace};
use spinmem::echo::{decay_law, run_echo, saturation_onset, sweep_refocus_power, EchoSetup};
use spinmem::fit::fit_proportional;
use spinmem::grid::{Bin, SubEnsembleGrid};
use spinmem::linear::{
    deembed_k, k_of_omega, linspace, reflection_coeff, steady_state_field, synthesize_s11,
};
use spinmem::par::Exec;
use spinmem::params::{CavityParams, DecoherenceSpec, DistributionSpec, Family, NvParams};
use spinmem::presets::{build_grid, echo_setup, nominal_config, NOMINAL_CONF};
use spinmem::spectrum::{transition_freq_approx, transition_freq_exact, TransitionLabel};
use spinmem::units::{DIAMOND_CARBON_DENSITY, TWO_PI};

const STEADY_STATE_TOL: f64 = 1e-6;
const STEADY_STATE_SECONDS: f64 = 10.0;
const UNITARITY_TOL: f64 = 1e-9;
const ENERGY_BALANCE_TOL: f64 = 1e-4;
const SPLITTING_TOL: f64 = 1e-3;
const NORMALIZATION_TOL: f64 = 1e-3;
const MC_SAMPLES: usize = 1_000_000;
const MC_SIGMA: f64 = 3.0;
const DENSITY_SECONDS: f64 = 120.0;
const PHASE_TOL_DEG: f64 = 2.0;
const ECHO_SECONDS: f64 = 300.0;
const DECAY_TOL: f64 = 0.02;
const PREFACTOR_RANGE: (f64, f64) = (0.10, 0.40);
const ORTH_SHARE: f64 = 5.0 / 8.0;
const ORTH_SHARE_TOL: f64 = 0.10;
const G_ENS_MHZ: f64 = 4.4;
const G_ENS_TOL: f64 = 0.15;
const ONSET_SHIFT_DB: f64 = -6.0206;
const ONSET_TOL_DB: f64 = 1.0;
const NORM_TOL: f64 = 1e-9;
const DEEMBED_TOL: f64 = 1e-9;

type Check = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs())
}

fn small_grid(m_delta: usize, m_g: usize, span: f64, g_ens: f64) -> SubEnsembleGrid {
    let c = CavityParams::nominal();
    let d: Vec<f64> = (0..m_delta)
        .map(|k| -span + 2.0 * span * k as f64 / (m_delta - 1) as f64)
        .collect();
    let w: Vec<f64> = d
        .iter()
        .map(|x| 1.0 / (1.0 + (x / (0.4 * span)).powi(2)))
        .collect();
    let gs: Vec<f64> = (0..m_g).map(|j| TWO_PI * (5.0 + 10.0 * j as f64)).collect();
    let gw: Vec<f64> = (0..m_g).map(|j| 1.0 + j as f64).collect();
    SubEnsembleGrid::outer(&d, &w, &gs, &gw, g_ens, c.omega_c).unwrap()
}

fn linear_steady_state() -> Check {
    let t0 = Instant::now();
    let grid = small_grid(50, 5, TWO_PI * 20e6, TWO_PI * 4e6);
    let c = CavityParams::nominal();
    let dec = DecoherenceSpec::from_t2(0.3e-6);
    let mut worst = 0.0f64;
    for delta in [-3e6, 0.0, 1.5e6, 7e6].map(|f| TWO_PI * f) {
        let t_end = 8e-6;
        let beta = 1e3;
        let seq =
            DriveWaveform::new(vec![Segment::new(0.0, 2.0 * t_end, beta, 0.0, delta)]).unwrap();
        let opts = Integration::new(t_end).with_dt(0.25 * auto_dt(&grid, &c, &seq));
        let tr = integrate(&seq, &grid, &c, &dec, &opts).unwrap();
        let w = grid.omega_s + delta;
        let k = k_of_omega(&grid, dec.gamma_perp, &[w], Exec::Sequential).unwrap();
        let expect = steady_state_field(Complex64::new(beta, 0.0), w, &c, k.values[0]);
        let i = tr.len() - 1;
        let got = tr.a_c(i) * Complex64::from_polar(1.0, delta * tr.t[i]);
        worst = worst.max((got - expect).norm() / expect.norm());
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        worst < STEADY_STATE_TOL && secs < STEADY_STATE_SECONDS,
        format!("max rel error {worst:.2e} (tol {STEADY_STATE_TOL:e}), {secs:.1} s"),
    )
}

fn lossless_unitarity() -> Check {
    let c = CavityParams::nominal();
    let grid = build_grid(&nominal_config(), Exec::Auto).unwrap();
    // offset by half a step so no point sits on a pole of K
    let axis: Vec<f64> = linspace(TWO_PI * 2.80e9, TWO_PI * 2.96e9, 3001)
        .iter()
        .map(|w| w + 0.5 * TWO_PI * 2.7e3)
        .collect();
    let k = k_of_omega(&grid, 0.0, &axis, Exec::Auto).unwrap();
    let r = reflection_coeff(&c, &k);
    let worst_r = r
        .values
        .iter()
        .map(|v| (v.norm() - 1.0).abs())
        .fold(0.0, f64::max);

    let d = [-2.0, -1.0, 0.0, 1.0, 2.0].map(|x| TWO_PI * 4e6 * x);
    let few = SubEnsembleGrid::outer(
        &d,
        &[1.0; 5],
        &[TWO_PI * 10.0],
        &[1.0],
        TWO_PI * 6e6,
        c.omega_c,
    )
    .unwrap();
    let seq = DriveWaveform::new(vec![Segment::new(0.05e-6, 0.3e-6, 1e6, 0.0, 0.0)]).unwrap();
    let t_end = 25e-6;
    let opts = Integration::new(t_end).with_dt(0.2e-9);
    let tr = integrate(&seq, &few, &c, &DecoherenceSpec::lossless(), &opts).unwrap();
    let inp = TimeTrace {
        a_r: tr.t.iter().map(|&t| seq.beta_at(t)).collect(),
        ..tr.clone()
    };
    let (e_in, e_out) = (inp.energy(0.0, t_end), tr.energy(0.0, t_end));
    let bal = rel(e_in, e_out);
    verdict(
        worst_r < UNITARITY_TOL && bal < ENERGY_BALANCE_TOL,
        format!("max ||r|-1| {worst_r:.2e} (tol {UNITARITY_TOL:e}), energy balance {bal:.2e} (tol {ENERGY_BALANCE_TOL:e})"),
    )
}

fn spectrum_oracle() -> Check {
    let nv = NvParams::nominal();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut cases: Vec<(f64, f64, f64)> = Vec::new();
    for e in [0.0, 10e6] {
        for b in [0.0, 2e-3] {
            for a in [0.0, 35.26, 90.0] {
                cases.push((TWO_PI * e, b, f64::to_radians(a)));
            }
        }
    }
    for _ in 0..5000 {
        cases.push((
            TWO_PI * 10e6 * rng.random::<f64>(),
            2e-3 * rng.random::<f64>(),
            std::f64::consts::PI * rng.random::<f64>(),
        ));
    }
    for (e, b, alpha) in cases {
        let exact = transition_freq_exact(&nv, e, [b * alpha.sin(), 0.0, b * alpha.cos()]).unwrap();
        for (k, label) in TransitionLabel::ALL.into_iter().enumerate() {
            let w = transition_freq_approx(label, e, b, alpha, nv.d, 0.0, &nv);
            worst = worst.max((w - exact[k]).abs() / nv.d);
        }
    }
    verdict(
        worst < SPLITTING_TOL,
        format!("max |approx - exact| / D = {worst:.2e} (tol {SPLITTING_TOL:e})"),
    )
}

fn density_oracle() -> Check {
    let t0 = Instant::now();
    let nv = NvParams::nominal();
    let spec = DistributionSpec::nominal();
    let rho = frequency_density(
        0.0,
        &spec,
        &nv,
        Family::Combined,
        &OmegaAxis::nominal(),
        Exec::Auto,
    )
    .unwrap();
    let norm = (rho.trapezoid() - 1.0).abs();
    let axis = OmegaAxis::new(TWO_PI * 2.86e9, TWO_PI * 2.90e9, 801).unwrap();
    let mut worst_dev = 0.0f64;
    let mut detail = String::new();
    for (b_nv, family, seed) in [(0.0, Family::NonOrth, 1), (0.5e-3, Family::Orth, 2)] {
        let rho = frequency_density(b_nv, &spec, &nv, family, &axis, Exec::Auto).unwrap();
        let counts = monte_carlo(
            b_nv,
            nv.alpha_of(family),
            &spec,
            &nv,
            &axis,
            MC_SAMPLES,
            seed,
        );
        let (chi2, dof, zmax) = compare(&counts, &rho);
        let dev = (chi2 - dof as f64) / (2.0 * dof as f64).sqrt();
        worst_dev = worst_dev.max(dev.abs());
        detail += &format!(
            "; {family:?} B={b_nv}: chi2 {chi2:.0}/{dof} ({dev:+.2} sigma), max |z| {zmax:.2}"
        );
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        norm < NORMALIZATION_TOL && worst_dev < MC_SIGMA && secs < DENSITY_SECONDS,
        format!("|int rho - 1| {norm:.1e}{detail}, {secs:.0} s"),
    )
}

fn echo_structure() -> Check {
    let cfg = SimConfig::parse_with_overrides(NOMINAL_CONF, &["grid.g_stratify=0".into()]).unwrap();
    let grid = build_grid(&cfg, Exec::Auto).unwrap();
    let s = echo_setup(&cfg, grid).unwrap();
    let t0 = Instant::now();
    let run = run_echo(&s).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let r = &run.report;
    // every drive reaches the spins through the detuned cavity
    let cavity_phase = -((s.cavity.omega_c - cfg.echo.carrier) / s.cavity.kappa).atan();
    let mut ok = r.echoes.len() == 6 && secs < ECHO_SECONDS;
    for w in r.echoes.windows(2) {
        ok &= w[0].echo_time > w[1].echo_time;
    }
    let mut raw = Vec::new();
    let mut worst = 0.0f64;
    for e in &r.echoes {
        ok &= (e.echo_time - e.t_expected).abs() < r.half_window;
        let d = wrap(e.echo_phase + (e.phi_in - r.phi_r));
        raw.push(format!("{:+.2}", d.to_degrees()));
        worst = worst.max(wrap(d - cavity_phase).abs().to_degrees());
    }
    ok &= worst < PHASE_TOL_DEG;
    let timing = r
        .echoes
        .iter()
        .map(|e| (e.echo_time - e.t_expected).abs())
        .fold(0.0, f64::max);
    verdict(
        ok,
        format!(
            "{} echoes, reverse order, max |t - (2tau - t_i)| {:.0} ns (window {:.0} ns); phase - (-(phi_i - phi_r)) = [{}] deg, cavity phase {:+.2} deg, max residual {worst:.2} deg (tol {PHASE_TOL_DEG}); {secs:.0} s",
            r.echoes.len(),
            timing * 1e9,
            r.half_window * 1e9,
            raw.join(", "),
            cavity_phase.to_degrees()
        ),
    )
}

fn decay_law_check() -> Check {
    let cfg = narrow_config(11, &[]);
    let t2 = 14.3e-6;
    let lossy = EchoSetup {
        subtract_reference: true,
        ..setup(&cfg, DecoherenceSpec::from_t2(t2))
    };
    let clean = EchoSetup {
        dec: DecoherenceSpec::lossless(),
        ..lossy.clone()
    };
    let mut worst = 0.0f64;
    let mut rows = Vec::new();
    for tau in [2e-6, 5e-6, 10e-6, 15e-6] {
        let e = run_echo(&single_pulse(&lossy, 1.6e-6, tau))
            .unwrap()
            .report
            .echoes[0]
            .efficiency;
        let e0 = run_echo(&single_pulse(&clean, 1.6e-6, tau))
            .unwrap()
            .report
            .echoes[0]
            .efficiency;
        let want = (-4.0 * tau / t2).exp();
        let d = e / e0 / want - 1.0;
        worst = worst.max(d.abs());
        rows.push(format!("{:.0}us {:+.2}%", tau * 1e6, 100.0 * d));
    }
    verdict(
        worst < DECAY_TOL,
        format!(
            "deviation from exp(-4 tau/T2): {} (tol {:.0}%)",
            rows.join(", "),
            DECAY_TOL * 100.0
        ),
    )
}

fn prefactor_check() -> Check {
    let cfg = nominal_config();
    let s = echo_setup(&cfg, build_grid(&cfg, Exec::Auto).unwrap()).unwrap();
    let r = run_echo(&s).unwrap().report;
    let f = decay_law(&s.dec);
    let x: Vec<f64> = r
        .echoes
        .iter()
        .map(|e| f(0.5 * (e.t_expected - e.t_in)).powi(2))
        .collect();
    let y: Vec<f64> = r.echoes.iter().map(|e| e.efficiency).collect();
    let c = fit_proportional(&x, &y).unwrap();
    verdict(
        (PREFACTOR_RANGE.0..=PREFACTOR_RANGE.1).contains(&c),
        format!(
            "c = {c:.4} (range [{}, {}], reference value 0.21; the measured 0.031 lies outside the Markovian model)",
            PREFACTOR_RANGE.0, PREFACTOR_RANGE.1
        ),
    )
}

fn coupling_split() -> Check {
    let cav = CavityParams::nominal();
    let nv = NvParams::nominal();
    let map = analytic_wire_field(&WireGeometry::nominal(), &cav).unwrap();
    let d = coupling_density(&map, 2e-6 * DIAMOND_CARBON_DENSITY, &nv, 64, 21, Exec::Auto).unwrap();
    let share = d.orth_share();
    let g = d.g_ens() / TWO_PI / 1e6;
    verdict(
        (share / ORTH_SHARE - 1.0).abs() < ORTH_SHARE_TOL
            && (g / G_ENS_MHZ - 1.0).abs() < G_ENS_TOL,
        format!(
            "orthogonal share {share:.4} (5/8 +- 10%), g_ens/2pi = {g:.3} MHz (4.4 MHz +- 15%)"
        ),
    )
}

fn saturation() -> Check {
    let cfg = narrow_config(11, &[]);
    let s = EchoSetup {
        subtract_reference: true,
        ..setup(&cfg, DecoherenceSpec::from_t2(14.3e-6))
    };
    let powers: Vec<f64> = (0..8).map(|k| -76.6 + 4.0 * k as f64).collect();
    let base = sweep_refocus_power(&s, &powers).unwrap();
    let scaled = EchoSetup {
        grid: s.grid.scale_couplings(2.0).scale_spins(0.25),
        ..s.clone()
    };
    let shifted: Vec<f64> = powers.iter().map(|p| p + ONSET_SHIFT_DB).collect();
    let strong = sweep_refocus_power(&scaled, &shifted).unwrap();
    let top = base.iter().map(|p| p.area).fold(0.0, f64::max);
    let monotone = base.windows(2).all(|w| w[1].area > 0.98 * w[0].area);
    let plateau = base.iter().rev().take(2).all(|p| p.area > 0.85 * top);
    let (a, b) = (saturation_onset(&base), saturation_onset(&strong));
    let areas: Vec<String> = base
        .iter()
        .map(|p| format!("{:.2}", p.area / top))
        .collect();
    match (a, b) {
        (Some(a), Some(b)) => verdict(
            monotone && plateau && (b - a - ONSET_SHIFT_DB).abs() < ONSET_TOL_DB,
            format!(
                "area/max over {:.1}..{:.1} dBm: [{}]; onset {a:.2} dBm, with 2g at fixed N g^2 {b:.2} dBm, shift {:.2} dB (-6 +- 1)",
                powers[0],
                powers[powers.len() - 1],
                areas.join(" "),
                b - a
            ),
        ),
        _ => Err(format!("no half-maximum crossing: [{}]", areas.join(" "))),
    }
}

fn bloch_norm() -> Check {
    let grid = small_grid(12, 2, TWO_PI * 5e6, TWO_PI * 3e6);
    let c = CavityParams::nominal();
    let seq = DriveWaveform::new(vec![
        Segment::new(1e-6, 0.5e-6, 5e8, 0.0, 0.0),
        Segment::new(10e-6, 1e-6, 5e8, 1.0, 0.0),
        Segment::new(30e-6, 1e-6, 3e8, -0.5, TWO_PI * 1e6),
    ])
    .unwrap();
    let opts = Integration::new(50e-6).with_dt(0.05e-9);
    let s0 = init_state(&grid, 1.0).unwrap();
    let (_, s) = integrate_from(&s0, &seq, &grid, &c, &DecoherenceSpec::lossless(), &opts).unwrap();
    let worst = (0..grid.len())
        .map(|m| rel(s.bloch_norm(m), s0.bloch_norm(m)))
        .fold(0.0, f64::max);
    let moved = (0..grid.len())
        .map(|m| (s.sz[m] - s0.sz[m]).abs() / grid.bins[m].n)
        .fold(0.0, f64::max);
    verdict(
        worst < NORM_TOL && moved > 0.1,
        format!("max relative norm drift {worst:.2e} over 50 us (tol {NORM_TOL:e}), max |d S_z|/N {moved:.2}"),
    )
}

fn deembed_round_trip() -> Check {
    let c = CavityParams::nominal();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let axis = linspace(c.omega_c - TWO_PI * 60e6, c.omega_c + TWO_PI * 60e6, 601);
    let empty = SubEnsembleGrid::new(vec![], c.omega_c, 0, 0);
    let rc = reflection_coeff(
        &c,
        &k_of_omega(&empty, 1.0, &axis, Exec::Sequential).unwrap(),
    );
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..40);
        let bins = (0..n)
            .map(|_| Bin {
                delta: TWO_PI * 30e6 * rng.random_range(-1.0..1.0),
                g: TWO_PI * rng.random_range(1.0..11.0),
                n: 1e11 * rng.random::<f64>(),
            })
            .collect();
        let grid = SubEnsembleGrid::new(bins, c.omega_c, n, 1);
        let k = k_of_omega(
            &grid,
            TWO_PI * rng.random_range(0.01e6..2e6),
            &axis,
            Exec::Sequential,
        )
        .unwrap();
        let r = reflection_coeff(&c, &k);
        let (amp, delay, ripple): (f64, f64, f64) = (
            rng.random_range(0.05..3.0),
            rng.random_range(0.0..5e-8),
            rng.random_range(0.0..0.4),
        );
        let line =
            |w: f64| Complex64::from_polar(amp * (1.0 + ripple * (w * 1e-8).sin()), w * delay);
        let d = deembed_k(&synthesize_s11(&r, line), &synthesize_s11(&rc, line), &c).unwrap();
        for (a, b) in d.k.values.iter().zip(&k.values) {
            worst = worst.max((a - b).norm() / b.norm().max(c.kappa));
        }
    }
    verdict(worst < DEEMBED_TOL, format!("max |K - K_true| / max(|K|, kappa) = {worst:.2e} over 50 random ensembles (tol {DEEMBED_TOL:e})"))
}

fn run(n: usize, name: &str, f: impl FnOnce() -> Check) -> bool {
    let t0 = Instant::now();
    let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = t0.elapsed().as_secs_f64();
    let (tag, detail, ok) = match out {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    println!("{tag} {n:>2} {name}: {detail} [{secs:.1} s]");
    ok
}

fn main() -> ExitCode {
    let mut ok = true;
    ok &= run(1, "linear-response steady state", linear_steady_state);
    ok &= run(
        2,
        "lossless unitarity and energy balance",
        lossless_unitarity,
    );
    ok &= run(
        3,
        "approximate vs exact transition frequencies",
        spectrum_oracle,
    );
    ok &= run(
        4,
        "density normalization and Monte-Carlo oracle",
        density_oracle,
    );
    ok &= run(5, "six-pulse echo structure", echo_structure);
    ok &= run(6, "single-T2 echo decay law", decay_law_check);
    ok &= run(
        7,
        "efficiency prefactor of the nominal bundle",
        prefactor_check,
    );
    ok &= run(8, "coupling split and ensemble coupling", coupling_split);
    ok &= run(9, "refocusing-power saturation", saturation);
    ok &= run(10, "Bloch-norm conservation", bloch_norm);
    ok &= run(11, "de-embedding round trip", deembed_round_trip);
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
