//! Two-pulse-echo sequences: construction, echo detection, efficiencies and
//! parameter sweeps.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::drive::{DriveWaveform, Segment, DEFAULT_RAMP};
use crate::dynamics::{bi_t2_run, integrate, Integration, TimeTrace};
use crate::error::{out_of_range, Error, Result};
use crate::fit::fit_proportional;
use crate::grid::SubEnsembleGrid;
use crate::params::{CavityParams, DecoherenceSpec};
use crate::units::dbm_to_flux;

/// One rectangular pulse, timed by its centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSpec {
    pub center: f64,
    pub duration: f64,
    /// sqrt(photons/s)
    pub amplitude: f64,
    pub phase: f64,
}

impl PulseSpec {
    pub fn new(center: f64, duration: f64, amplitude: f64, phase: f64) -> Self {
        Self {
            center,
            duration,
            amplitude,
            phase,
        }
    }

    fn segment(&self, detuning: f64, ramp: f64) -> Segment {
        Segment::new(
            self.center - 0.5 * self.duration,
            self.duration,
            self.amplitude,
            self.phase,
            detuning,
        )
        .with_ramp(ramp)
    }
}

/// Storage pulses followed by one refocusing pulse at tau.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoSequence {
    pub thetas: Vec<PulseSpec>,
    pub refocus: PulseSpec,
    /// Common carrier detuning from the rotating frame (rad/s).
    pub detuning: f64,
    pub ramp: f64,
    pub waveform: DriveWaveform,
    /// Expected echo centre 2 tau - t_i for every storage pulse.
    pub expected: Vec<f64>,
}

impl EchoSequence {
    pub fn tau(&self) -> f64 {
        self.refocus.center
    }

    /// The refocusing pulse alone, for reference subtraction.
    pub fn reference(&self) -> DriveWaveform {
        DriveWaveform {
            segments: vec![self.refocus.segment(self.detuning, self.ramp)],
        }
    }

    pub fn theta_segments(&self) -> Vec<Segment> {
        self.thetas
            .iter()
            .map(|p| p.segment(self.detuning, self.ramp))
            .collect()
    }

    /// Same storage pulses with the refocusing pulse moved or rescaled.
    pub fn with_refocus(&self, refocus: PulseSpec) -> Result<Self> {
        build_2pe(&self.thetas, refocus, self.detuning, self.ramp)
    }
}

/// Build a validated 2PE waveform.
pub fn build_2pe(
    thetas: &[PulseSpec],
    refocus: PulseSpec,
    detuning: f64,
    ramp: f64,
) -> Result<EchoSequence> {
    if thetas.is_empty() {
        return Err(Error::Sequence(
            "at least one storage pulse is required".into(),
        ));
    }
    let mut segs: Vec<Segment> = thetas.iter().map(|p| p.segment(detuning, ramp)).collect();
    let r = refocus.segment(detuning, ramp);
    if let Some(last) = segs.iter().map(|s| s.t_end()).reduce(f64::max) {
        if last > r.t_start {
            return Err(Error::Sequence(
                "storage pulses must precede the refocusing pulse".into(),
            ));
        }
    }
    if segs.first().is_some_and(|s| s.t_start < 0.0) {
        return Err(Error::Sequence("pulses must start at t >= 0".into()));
    }
    segs.push(r);
    let waveform = DriveWaveform::new(segs)?;
    let expected = thetas
        .iter()
        .map(|p| 2.0 * refocus.center - p.center)
        .collect();
    Ok(EchoSequence {
        thetas: thetas.to_vec(),
        refocus,
        detuning,
        ramp,
        waveform,
        expected,
    })
}

/// Per-pulse echo figures.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoRecord {
    pub t_in: f64,
    pub phi_in: f64,
    /// Incoming photons.
    pub input_energy: f64,
    pub t_expected: f64,
    /// |a_R|^2-weighted centroid inside the window.
    pub echo_time: f64,
    /// Photons emitted inside the window.
    pub echo_energy: f64,
    /// Integral of |a_R| over the window.
    pub echo_area: f64,
    /// Phase of the demodulated field integral (rad, in (-pi, pi]).
    pub echo_phase: f64,
    pub efficiency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EchoReport {
    pub tau: f64,
    pub phi_r: f64,
    pub half_window: f64,
    pub echoes: Vec<EchoRecord>,
}

impl EchoReport {
    pub fn total_area(&self) -> f64 {
        self.echoes.iter().map(|e| e.echo_area).sum()
    }
}

/// Baseline treatment inside each detection window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Baseline {
    None,
    /// Subtract the mean demodulated field recorded before the first pulse.
    #[default]
    PrePulse,
    /// Subtract the straight line through the mean field of the first and
    /// last tenth of the window.
    Edges,
}

/// Default half window: max(storage pulse duration, 3 / kappa).
pub fn default_half_window(seq: &EchoSequence, cavity: &CavityParams) -> f64 {
    let d = seq.thetas.iter().map(|p| p.duration).fold(0.0, f64::max);
    d.max(3.0 / cavity.kappa)
}

fn wrap(phi: f64) -> f64 {
    let mut p = phi.rem_euclid(2.0 * PI);
    if p > PI {
        p -= 2.0 * PI;
    }
    p
}

/// Integrate the demodulated reflected field around every expected echo.
pub fn detect_echoes(
    trace: &TimeTrace,
    seq: &EchoSequence,
    half_window: f64,
    baseline: Baseline,
) -> Result<EchoReport> {
    let dmax = seq.thetas.iter().map(|p| p.duration).fold(0.0, f64::max);
    if !(2.0 * half_window > dmax) {
        return Err(Error::Window(format!(
            "window {:e} s must exceed the storage pulse duration {dmax:e} s",
            2.0 * half_window
        )));
    }
    let t_last = trace.t.last().copied().unwrap_or(0.0);
    let demod = |i: usize| trace.a_r[i] * Complex64::from_polar(1.0, seq.detuning * trace.t[i]);
    let offset = match baseline {
        Baseline::PrePulse => {
            let t_first = seq
                .waveform
                .segments
                .iter()
                .map(|s| s.t_start)
                .fold(f64::INFINITY, f64::min);
            let r = trace.index_range(0.0, t_first.min(t_last));
            let n = r.len();
            if n > 0 {
                r.map(demod).sum::<Complex64>() / n as f64
            } else {
                Complex64::new(0.0, 0.0)
            }
        }
        _ => Complex64::new(0.0, 0.0),
    };
    let mut echoes = Vec::with_capacity(seq.thetas.len());
    for (p, &te) in seq.thetas.iter().zip(&seq.expected) {
        let (t0, t1) = (te - half_window, te + half_window);
        for s in &seq.waveform.segments {
            if t0 < s.t_end() && s.t_start < t1 {
                return Err(Error::Window(format!(
                    "echo window [{t0:e}, {t1:e}] s collides with a drive pulse at [{:e}, {:e}] s",
                    s.t_start,
                    s.t_end()
                )));
            }
        }
        if t1 > t_last + 0.5 * trace.dt || t0 < 0.0 {
            return Err(Error::Window(format!(
                "echo window ends at {t1:e} s beyond the trace ({t_last:e} s)"
            )));
        }
        let r = trace.index_range(t0, t1);
        let mut z: Vec<Complex64> = r.clone().map(|i| demod(i) - offset).collect();
        if baseline == Baseline::Edges && z.len() >= 20 {
            let k = z.len() / 10;
            let n = z.len();
            let head = z[..k].iter().sum::<Complex64>() / k as f64;
            let tail = z[n - k..].iter().sum::<Complex64>() / k as f64;
            let (ch, ct) = (
                (k as f64 - 1.0) / 2.0,
                n as f64 - 1.0 - (k as f64 - 1.0) / 2.0,
            );
            for (j, v) in z.iter_mut().enumerate() {
                let u = (j as f64 - ch) / (ct - ch);
                *v -= head + (tail - head) * u;
            }
        }
        let ts: Vec<f64> = r.map(|i| trace.t[i]).collect();
        let h = trace.dt;
        let energy = crate::dynamics::trapezoid(h, z.iter().map(|v| v.norm_sqr()));
        let area = crate::dynamics::trapezoid(h, z.iter().map(|v| v.norm()));
        let sum: Complex64 = z.iter().sum();
        let w: f64 = z.iter().map(|v| v.norm_sqr()).sum();
        let centroid = if w > 0.0 {
            z.iter()
                .zip(&ts)
                .map(|(v, t)| v.norm_sqr() * t)
                .sum::<f64>()
                / w
        } else {
            te
        };
        let input = p.segment(seq.detuning, seq.ramp).energy();
        echoes.push(EchoRecord {
            t_in: p.center,
            phi_in: p.phase,
            input_energy: input,
            t_expected: te,
            echo_time: centroid,
            echo_energy: energy,
            echo_area: area,
            echo_phase: if sum.norm() > 0.0 {
                wrap(sum.arg())
            } else {
                0.0
            },
            efficiency: if input > 0.0 {
                energy / input
            } else {
                f64::NAN
            },
        });
    }
    Ok(EchoReport {
        tau: seq.tau(),
        phi_r: seq.refocus.phase,
        half_window,
        echoes,
    })
}

/// E_i = echo energy / input energy.
pub fn retrieval_efficiency(report: &EchoReport) -> Result<Vec<f64>> {
    report
        .echoes
        .iter()
        .enumerate()
        .map(|(i, e)| {
            if e.input_energy > 0.0 {
                Ok(e.echo_energy / e.input_energy)
            } else {
                Err(out_of_range(
                    "echo.input_energy",
                    format!("pulse {i} carries no energy"),
                ))
            }
        })
        .collect()
}

/// Everything needed to simulate one echo experiment.
#[derive(Debug, Clone)]
pub struct EchoSetup {
    pub grid: SubEnsembleGrid,
    pub cavity: CavityParams,
    pub dec: DecoherenceSpec,
    pub seq: EchoSequence,
    /// `t_end` is replaced by the end of the last detection window.
    pub opts: Integration,
    pub half_window: Option<f64>,
    /// Subtract a run with the refocusing pulse alone.
    pub subtract_reference: bool,
    /// Combine runs at T2A and T2B when a bi-exponential spec is present.
    pub bi_t2: bool,
    pub baseline: Baseline,
}

#[derive(Debug, Clone)]
pub struct EchoRun {
    pub report: EchoReport,
    pub trace: TimeTrace,
    /// Bi-T2 validity diagnostic, when two runs were combined.
    pub delta_ac: Option<f64>,
}

fn simulate(
    setup: &EchoSetup,
    wave: &DriveWaveform,
    opts: &Integration,
) -> Result<(TimeTrace, Option<f64>)> {
    if setup.bi_t2 && setup.dec.biexp.is_some() {
        let window = (
            setup.seq.refocus.center - 0.5 * setup.seq.refocus.duration,
            setup.seq.refocus.center + 0.5 * setup.seq.refocus.duration,
        );
        let r = bi_t2_run(
            wave,
            &setup.grid,
            &setup.cavity,
            &setup.dec,
            opts,
            Some(window),
        )?;
        Ok((r.trace, Some(r.delta_ac)))
    } else {
        Ok((
            integrate(wave, &setup.grid, &setup.cavity, &setup.dec, opts)?,
            None,
        ))
    }
}

/// Simulate the sequence and analyse its echoes.
pub fn run_echo(setup: &EchoSetup) -> Result<EchoRun> {
    let hw = setup
        .half_window
        .unwrap_or_else(|| default_half_window(&setup.seq, &setup.cavity));
    let last = setup.seq.expected.iter().cloned().fold(0.0, f64::max);
    let mut opts = setup.opts.clone();
    opts.t_end = last + hw + 4.0 / setup.cavity.kappa;
    // a shared step keeps the reference and signal traces on one axis
    if opts.dt.is_none() {
        opts.dt = Some(crate::dynamics::auto_dt(
            &setup.grid,
            &setup.cavity,
            &setup.seq.waveform,
        ));
    }
    let (mut trace, delta_ac) = simulate(setup, &setup.seq.waveform, &opts)?;
    if setup.subtract_reference {
        let (r, _) = simulate(setup, &setup.seq.reference(), &opts)?;
        trace = trace.difference(&r)?;
    }
    let report = detect_echoes(&trace, &setup.seq, hw, setup.baseline)?;
    Ok(EchoRun {
        report,
        trace,
        delta_ac,
    })
}

/// One row of a refocusing-power sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerPoint {
    pub dbm: f64,
    /// Summed echo area, integral of |a_R| dt.
    pub area: f64,
    /// Summed echo energy.
    pub energy: f64,
}

/// Carrier frequency of the sequence (rad/s).
pub fn carrier(setup: &EchoSetup) -> f64 {
    setup.grid.omega_s + setup.seq.detuning
}

/// Echo area versus refocusing power in dBm.
pub fn sweep_refocus_power(setup: &EchoSetup, powers_dbm: &[f64]) -> Result<Vec<PowerPoint>> {
    if powers_dbm.len() < 3 {
        return Err(out_of_range(
            "sweep.powers",
            "at least three powers are required",
        ));
    }
    let w = carrier(setup);
    powers_dbm
        .iter()
        .map(|&p| {
            let amp = dbm_to_flux(p, w).sqrt();
            let seq = setup.seq.with_refocus(PulseSpec {
                amplitude: amp,
                ..setup.seq.refocus
            })?;
            let run = run_echo(&EchoSetup {
                seq,
                ..setup.clone()
            })?;
            Ok(PowerPoint {
                dbm: p,
                area: run.report.total_area(),
                energy: run.report.echoes.iter().map(|e| e.echo_energy).sum(),
            })
        })
        .collect()
}

/// Power where the echo area first reaches half its maximum, by linear
/// interpolation in dBm.
pub fn saturation_onset(points: &[PowerPoint]) -> Option<f64> {
    let top = points.iter().map(|p| p.area).fold(0.0, f64::max);
    if !(top > 0.0) {
        return None;
    }
    let half = 0.5 * top;
    if points.first()?.area >= half {
        return None;
    }
    for w in points.windows(2) {
        if w[0].area < half && w[1].area >= half {
            let u = (half - w[0].area) / (w[1].area - w[0].area);
            return Some(w[0].dbm + u * (w[1].dbm - w[0].dbm));
        }
    }
    None
}

/// Echo efficiencies for one refocusing delay.
#[derive(Debug, Clone, PartialEq)]
pub struct TauRow {
    pub tau: f64,
    /// Input-to-echo delay per storage pulse.
    pub delay: Vec<f64>,
    pub efficiency: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TauSweep {
    pub rows: Vec<TauRow>,
    /// Least-squares c in E = c f(delay/2)^2.
    pub prefactor: f64,
}

/// Decay law f(t) used to normalize efficiencies: the bi-exponential spec
/// when present, else exp(-2 t gamma_perp).
pub fn decay_law(dec: &DecoherenceSpec) -> impl Fn(f64) -> f64 {
    let d = *dec;
    move |tau: f64| match d.biexp {
        Some(b) => b.f(tau),
        None => (-2.0 * tau * d.gamma_perp).exp(),
    }
}

/// Move the refocusing pulse over `taus` and fit the efficiency prefactor.
pub fn sweep_tau(setup: &EchoSetup, taus: &[f64]) -> Result<TauSweep> {
    if taus.len() < 3 {
        return Err(out_of_range(
            "sweep.taus",
            "at least three delays are required",
        ));
    }
    let f = decay_law(&setup.dec);
    let mut rows = Vec::with_capacity(taus.len());
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for &tau in taus {
        let seq = setup.seq.with_refocus(PulseSpec {
            center: tau,
            ..setup.seq.refocus
        })?;
        let run = run_echo(&EchoSetup {
            seq,
            ..setup.clone()
        })?;
        let eff = retrieval_efficiency(&run.report)?;
        let delay: Vec<f64> = run
            .report
            .echoes
            .iter()
            .map(|e| e.t_expected - e.t_in)
            .collect();
        for (d, e) in delay.iter().zip(&eff) {
            xs.push(f(0.5 * d).powi(2));
            ys.push(*e);
        }
        rows.push(TauRow {
            tau,
            delay,
            efficiency: eff,
        });
    }
    let prefactor = fit_proportional(&xs, &ys)?;
    Ok(TauSweep { rows, prefactor })
}

/// Storage pulses of a multi-pulse train: centres t0 + k * spacing.
pub fn pulse_train(
    t0: f64,
    spacing: f64,
    duration: f64,
    amplitude: f64,
    phases: &[f64],
) -> Vec<PulseSpec> {
    phases
        .iter()
        .enumerate()
        .map(|(k, &phi)| PulseSpec::new(t0 + spacing * k as f64, duration, amplitude, phi))
        .collect()
}

pub const DEFAULT_ECHO_RAMP: f64 = DEFAULT_RAMP;

#[cfg(test)]
mod tests {
    use super::*;

    fn seq() -> EchoSequence {
        let thetas = pulse_train(1e-6, 1e-6, 0.3e-6, 1.0, &[0.1, 0.2]);
        build_2pe(&thetas, PulseSpec::new(5e-6, 0.5e-6, 10.0, 0.0), 0.0, 20e-9).unwrap()
    }

    #[test]
    fn expected_times_reverse_order() {
        let s = seq();
        assert!((s.expected[0] - 9e-6).abs() < 1e-18 && (s.expected[1] - 8e-6).abs() < 1e-18);
        assert_eq!(s.waveform.segments.len(), 3);
    }

    #[test]
    fn overlapping_pulses_rejected() {
        let thetas = pulse_train(1e-6, 0.2e-6, 0.3e-6, 1.0, &[0.0, 0.0]);
        assert!(build_2pe(&thetas, PulseSpec::new(5e-6, 0.5e-6, 1.0, 0.0), 0.0, 0.0).is_err());
        let late = [PulseSpec::new(6e-6, 0.3e-6, 1.0, 0.0)];
        assert!(build_2pe(&late, PulseSpec::new(5e-6, 0.5e-6, 1.0, 0.0), 0.0, 0.0).is_err());
    }

    fn flat_trace(t_end: f64, dt: f64, f: impl Fn(f64) -> Complex64) -> TimeTrace {
        let n = (t_end / dt).round() as usize + 1;
        let t: Vec<f64> = (0..n).map(|k| k as f64 * dt).collect();
        TimeTrace {
            dt,
            xc: vec![0.0; n],
            pc: vec![0.0; n],
            a_r: t.iter().map(|&x| f(x)).collect(),
            t,
            snapshots: Vec::new(),
        }
    }

    #[test]
    fn zero_trace_gives_zero_energy() {
        let s = seq();
        let tr = flat_trace(10e-6, 1e-9, |_| Complex64::new(0.0, 0.0));
        let r = detect_echoes(&tr, &s, 0.4e-6, Baseline::None).unwrap();
        assert!(r
            .echoes
            .iter()
            .all(|e| e.echo_energy == 0.0 && e.efficiency == 0.0));
    }

    #[test]
    fn mirror_copy_has_unit_efficiency() {
        let s = seq();
        // each echo is an exact copy of its input pulse, centred at 2 tau - t_i
        let segs = s.theta_segments();
        let tr = flat_trace(10e-6, 0.5e-9, |t| {
            segs.iter()
                .zip(&s.expected)
                .map(|(g, &te)| g.beta_at(t - te + g.center()))
                .sum()
        });
        let r = detect_echoes(&tr, &s, 0.4e-6, Baseline::None).unwrap();
        for e in retrieval_efficiency(&r).unwrap() {
            assert!((e - 1.0).abs() < 1e-6, "{e}");
        }
        for (e, p) in r.echoes.iter().zip(&s.thetas) {
            assert!((e.echo_phase - p.phase).abs() < 1e-9);
            assert!((e.echo_time - e.t_expected).abs() < 1e-9);
        }
    }

    #[test]
    fn window_errors() {
        let s = seq();
        let tr = flat_trace(10e-6, 1e-9, |_| Complex64::new(0.0, 0.0));
        assert!(matches!(
            detect_echoes(&tr, &s, 0.1e-6, Baseline::None),
            Err(Error::Window(_))
        ));
        // reaches into the refocusing pulse ending at 5.25 us
        let near = build_2pe(
            &[PulseSpec::new(4.0e-6, 0.3e-6, 1.0, 0.0)],
            PulseSpec::new(5e-6, 0.5e-6, 1.0, 0.0),
            0.0,
            0.0,
        )
        .unwrap();
        assert!(matches!(
            detect_echoes(&tr, &near, 0.8e-6, Baseline::None),
            Err(Error::Window(_))
        ));
        let short = flat_trace(8.5e-6, 1e-9, |_| Complex64::new(0.0, 0.0));
        assert!(matches!(
            detect_echoes(&short, &s, 0.4e-6, Baseline::None),
            Err(Error::Window(_))
        ));
    }

    #[test]
    fn onset_interpolation() {
        let pts: Vec<PowerPoint> = [(-10.0, 0.0), (0.0, 1.0), (10.0, 3.0), (20.0, 4.0)]
            .iter()
            .map(|&(dbm, area)| PowerPoint {
                dbm,
                area,
                energy: 0.0,
            })
            .collect();
        assert!((saturation_onset(&pts).unwrap() - 5.0).abs() < 1e-12);
    }
}
