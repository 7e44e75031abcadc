mod common;

use common::{line_fit, narrow_config, setup, single_pulse, wrap};
use spinmem::echo::{run_echo, saturation_onset, sweep_refocus_power, EchoSetup, PulseSpec};
use spinmem::params::DecoherenceSpec;

fn with_phases(s: &EchoSetup, phases_deg: &[f64]) -> EchoSetup {
    let thetas: Vec<PulseSpec> = s
        .seq
        .thetas
        .iter()
        .zip(phases_deg)
        .map(|(p, d)| PulseSpec {
            phase: d.to_radians(),
            ..*p
        })
        .collect();
    let seq = spinmem::echo::build_2pe(&thetas, s.seq.refocus, s.seq.detuning, s.seq.ramp).unwrap();
    EchoSetup { seq, ..s.clone() }
}

#[test]
fn echoes_reverse_order_and_phase() {
    let cfg = narrow_config(21, &["echo.carrier=2.88 GHz"]);
    let s = with_phases(
        &setup(&cfg, DecoherenceSpec::lossless()),
        &[-60.0, -30.0, 0.0, 30.0, 60.0, 90.0],
    );
    let r = run_echo(&s).unwrap().report;
    assert_eq!(r.echoes.len(), 6);
    for w in r.echoes.windows(2) {
        assert!(w[0].echo_time > w[1].echo_time);
    }
    let mut y = Vec::new();
    let mut x = Vec::new();
    for e in &r.echoes {
        assert!(
            (e.echo_time - e.t_expected).abs() < r.half_window,
            "{} vs {}",
            e.echo_time,
            e.t_expected
        );
        // on cavity resonance the echo carries -(phi_i - phi_r)
        let err = wrap(e.echo_phase + (e.phi_in - r.phi_r));
        assert!(
            err.to_degrees().abs() < 2.0,
            "phase error {}",
            err.to_degrees()
        );
        let prev = y.last().copied().unwrap_or(e.echo_phase);
        y.push(prev + wrap(e.echo_phase - prev));
        x.push(e.phi_in);
    }
    let (slope, _) = line_fit(&x, &y);
    assert!((slope + 1.0).abs() < 0.02, "slope {slope}");
}

#[test]
fn refocus_phase_enters_twice() {
    // the refocusing pulse mirrors the stored phase about its own axis
    let cfg = narrow_config(11, &["echo.carrier=2.88 GHz"]);
    let s = setup(&cfg, DecoherenceSpec::lossless());
    let a = run_echo(&s).unwrap().report;
    let shifted = EchoSetup {
        seq: s
            .seq
            .with_refocus(PulseSpec {
                phase: s.seq.refocus.phase + 0.5,
                ..s.seq.refocus
            })
            .unwrap(),
        ..s.clone()
    };
    let b = run_echo(&shifted).unwrap().report;
    for (p, q) in a.echoes.iter().zip(&b.echoes) {
        let d = wrap(q.echo_phase - p.echo_phase);
        assert!((d - 1.0).abs() < 0.02, "{d}");
    }
}

fn subtracted(cfg: &spinmem::config::SimConfig, dec: DecoherenceSpec) -> EchoSetup {
    EchoSetup {
        subtract_reference: true,
        ..setup(cfg, dec)
    }
}

fn single_efficiency(s: &EchoSetup, tau: f64) -> f64 {
    let r = run_echo(&single_pulse(s, 1.6e-6, tau)).unwrap().report;
    r.echoes[0].efficiency
}

#[test]
fn efficiency_follows_single_t2_decay() {
    let cfg = narrow_config(11, &[]);
    let t2 = 14.3e-6;
    let lossy = subtracted(&cfg, DecoherenceSpec::from_t2(t2));
    let clean = EchoSetup {
        dec: DecoherenceSpec::lossless(),
        ..lossy.clone()
    };
    let mut reference = None;
    for tau in [2e-6, 6e-6, 10e-6, 15e-6] {
        let e0 = single_efficiency(&clean, tau);
        let e = single_efficiency(&lossy, tau);
        let want = (-4.0 * tau / t2).exp();
        assert!(
            (e / e0 / want - 1.0).abs() < 0.02,
            "tau {tau}: {} vs {want}",
            e / e0
        );
        // without decoherence the efficiency does not depend on tau
        let r = *reference.get_or_insert(e0);
        assert!((e0 / r - 1.0).abs() < 0.01, "tau {tau}: {e0} vs {r}");
    }
}

#[test]
fn weak_storage_efficiency_is_amplitude_independent() {
    let cfg = narrow_config(11, &[]);
    let s = subtracted(&cfg, DecoherenceSpec::from_t2(14.3e-6));
    let a = run_echo(&s).unwrap().report;
    let thetas: Vec<PulseSpec> = s
        .seq
        .thetas
        .iter()
        .map(|p| PulseSpec {
            amplitude: 2.0 * p.amplitude,
            ..*p
        })
        .collect();
    let seq = spinmem::echo::build_2pe(&thetas, s.seq.refocus, s.seq.detuning, s.seq.ramp).unwrap();
    let b = run_echo(&EchoSetup { seq, ..s }).unwrap().report;
    for (p, q) in a.echoes.iter().zip(&b.echoes) {
        assert!(
            (q.efficiency / p.efficiency - 1.0).abs() < 0.01,
            "{} {}",
            p.efficiency,
            q.efficiency
        );
    }
}

#[test]
fn stronger_coupling_saturates_earlier() {
    let cfg = narrow_config(11, &[]);
    let s = subtracted(&cfg, DecoherenceSpec::from_t2(14.3e-6));
    let powers: Vec<f64> = (0..8).map(|k| -76.6 + 4.0 * k as f64).collect();
    let base = sweep_refocus_power(&s, &powers).unwrap();
    // twice the single-spin coupling at the same ensemble coupling
    let scaled = EchoSetup {
        grid: s.grid.scale_couplings(2.0).scale_spins(0.25),
        ..s.clone()
    };
    let shifted: Vec<f64> = powers.iter().map(|p| p - 6.0206).collect();
    let strong = sweep_refocus_power(&scaled, &shifted).unwrap();
    let a = saturation_onset(&base).unwrap();
    let b = saturation_onset(&strong).unwrap();
    assert!((b - a + 6.0206).abs() < 1.0, "shift {}", b - a);
    let top = base.iter().map(|p| p.area).fold(0.0, f64::max);
    for w in base.windows(2) {
        assert!(w[1].area > 0.98 * w[0].area, "{:?}", base);
    }
    assert!(
        base.iter().rev().take(2).all(|p| p.area > 0.85 * top),
        "{:?}",
        base
    );
}
