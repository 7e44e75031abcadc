//! Shipped parameter bundles and builders from a [`SimConfig`] to the
//! objects the simulation stages consume.

use crate::config::{DriveSpec, SimConfig};
use crate::coupling::{
    analytic_wire_field, coupling_density, rescale_to_measured, CouplingDensity, G_CUTOFF,
};
use crate::density::{bin_to_grid, frequency_density, FrequencyDensity, OmegaAxis};
use crate::drive::{DriveWaveform, Segment};
use crate::dynamics::Integration;
use crate::echo::{build_2pe, EchoSequence, EchoSetup, PulseSpec};
use crate::error::{Error, Result};
use crate::grid::SubEnsembleGrid;
use crate::par::Exec;

/// The nominal parameter bundle, config format version 1.
pub const NOMINAL_CONF: &str = include_str!("../presets/nominal.conf");

pub fn nominal_config() -> SimConfig {
    SimConfig::parse(NOMINAL_CONF).expect("shipped preset parses")
}

pub fn omega_axis(cfg: &SimConfig) -> Result<OmegaAxis> {
    OmegaAxis::new(cfg.grid.omega_start, cfg.grid.omega_stop, cfg.grid.n_omega)
}

pub fn density(cfg: &SimConfig, exec: Exec) -> Result<FrequencyDensity> {
    frequency_density(
        cfg.b_nv,
        &cfg.distributions,
        &cfg.nv,
        cfg.grid.family,
        &omega_axis(cfg)?,
        exec,
    )
}

/// Coupling histogram from the analytic wire field, rescaled to the
/// measured ensemble coupling when one is configured.
pub fn couplings(cfg: &SimConfig, exec: Exec) -> Result<CouplingDensity> {
    let map = analytic_wire_field(&cfg.geometry.wire, &cfg.cavity)?;
    let d = coupling_density(
        &map,
        cfg.geometry.concentration,
        &cfg.nv,
        cfg.geometry.n_psi,
        cfg.grid.m_g,
        exec,
    )?;
    match cfg.geometry.g_measured {
        Some(g) => rescale_to_measured(&d, g, cfg.polarization),
        None => Ok(d),
    }
}

pub fn build_grid(cfg: &SimConfig, exec: Exec) -> Result<SubEnsembleGrid> {
    let rho = density(cfg, exec)?;
    let g = couplings(cfg, exec)?;
    let grid = bin_to_grid(
        &rho,
        cfg.grid.m_delta,
        &g.pairs(),
        g.g_ens(),
        cfg.grid.omega_s,
    )?;
    if cfg.grid.g_stratify > 1 {
        grid.stratify_couplings(
            G_CUTOFF.powf(-1.0 / cfg.grid.m_g as f64),
            cfg.grid.g_stratify,
        )
    } else {
        Ok(grid)
    }
}

fn pulse(d: &DriveSpec) -> PulseSpec {
    PulseSpec::new(d.center, d.duration, d.flux.sqrt(), d.phase)
}

/// All configured pulses as one waveform in the frame rotating at `omega_s`.
pub fn waveform(cfg: &SimConfig, omega_s: f64) -> Result<DriveWaveform> {
    let det = cfg.echo.carrier - omega_s;
    DriveWaveform::new(
        cfg.drives
            .iter()
            .map(|d| {
                Segment::new(
                    d.center - 0.5 * d.duration,
                    d.duration,
                    d.flux.sqrt(),
                    d.phase,
                    det,
                )
                .with_ramp(cfg.echo.ramp)
            })
            .collect(),
    )
}

pub fn echo_sequence(cfg: &SimConfig, omega_s: f64) -> Result<EchoSequence> {
    let thetas: Vec<PulseSpec> = cfg.storage_pulses().map(pulse).collect();
    let refocus = cfg
        .refocus_pulse()
        .ok_or_else(|| Error::Sequence("no drive section has role = refocus".into()))?;
    build_2pe(
        &thetas,
        pulse(refocus),
        cfg.echo.carrier - omega_s,
        cfg.echo.ramp,
    )
}

pub fn integration(cfg: &SimConfig, t_end: f64) -> Integration {
    Integration {
        dt: cfg.integrator.dt,
        t_end: cfg.integrator.t_end.unwrap_or(t_end),
        p_prime: cfg.polarization,
        exec: cfg.integrator.exec,
        stride: cfg.integrator.stride,
        snapshot_times: Vec::new(),
    }
}

pub fn echo_setup(cfg: &SimConfig, grid: SubEnsembleGrid) -> Result<EchoSetup> {
    let seq = echo_sequence(cfg, grid.omega_s)?;
    let mut opts = integration(cfg, seq.waveform.t_end());
    opts.t_end = seq.waveform.t_end();
    Ok(EchoSetup {
        grid,
        cavity: cfg.cavity,
        dec: cfg.decoherence,
        seq,
        opts,
        half_window: cfg.echo.half_window,
        subtract_reference: cfg.echo.subtract_reference,
        bi_t2: cfg.echo.bi_t2,
        baseline: cfg.echo.baseline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nominal_bundle_round_trips() {
        let c = nominal_config();
        assert_eq!(SimConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(c.storage_pulses().count(), 6);
        assert!((c.refocus_pulse().unwrap().center - 19.1e-6).abs() < 1e-18);
    }

    #[test]
    fn sequence_timing() {
        let c = nominal_config();
        let s = echo_sequence(&c, c.grid.omega_s.unwrap()).unwrap();
        assert!((s.tau() - 19.1e-6).abs() < 1e-15);
        assert!((s.expected[0] - (2.0 * 19.1e-6 - 1.6e-6)).abs() < 1e-15);
    }
}
