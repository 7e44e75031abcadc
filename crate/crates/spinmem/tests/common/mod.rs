#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spinmem::config::SimConfig;
use spinmem::density::{EnsembleModel, FrequencyDensity, OmegaAxis};
use spinmem::echo::{build_2pe, EchoSetup, PulseSpec};
use spinmem::par::Exec;
use spinmem::params::{DecoherenceSpec, DistributionSpec, NvParams};
use spinmem::presets::{build_grid, echo_setup, NOMINAL_CONF};
use spinmem::spectrum::{transition_freq_approx, TransitionLabel};

/// Nominal bundle on a 20 MHz axis (revival after 40 us), one run per echo.
pub fn narrow_config(m_g: usize, extra: &[&str]) -> SimConfig {
    let mut o: Vec<String> = [
        "grid.omega_start=2.870 GHz",
        "grid.omega_stop=2.890 GHz",
        "grid.n_omega=801",
        "grid.M_delta=0",
        "grid.g_stratify=0",
        "echo.subtract_reference=false",
        "echo.bi_t2=false",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    o.push(format!("grid.M_g={m_g}"));
    o.extend(extra.iter().map(|s| s.to_string()));
    SimConfig::parse_with_overrides(NOMINAL_CONF, &o).unwrap()
}

pub fn setup(cfg: &SimConfig, dec: DecoherenceSpec) -> EchoSetup {
    let grid = build_grid(cfg, Exec::Auto).unwrap();
    let mut s = echo_setup(cfg, grid).unwrap();
    s.dec = dec;
    s
}

/// Replace the storage pulses by one pulse at `t_in` and put the refocusing
/// pulse `tau` later.
pub fn single_pulse(s: &EchoSetup, t_in: f64, tau: f64) -> EchoSetup {
    let th = PulseSpec {
        center: t_in,
        ..s.seq.thetas[0]
    };
    let r = PulseSpec {
        center: t_in + tau,
        ..s.seq.refocus
    };
    EchoSetup {
        seq: build_2pe(&[th], r, s.seq.detuning, s.seq.ramp).unwrap(),
        ..s.clone()
    }
}

pub fn wrap(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y == -PI {
        PI
    } else {
        y
    }
}

/// Least-squares slope and intercept.
pub fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let s = sxy / sxx;
    (s, my - s * mx)
}

fn sample_strain(m: &EnsembleModel, rng: &mut impl Rng) -> f64 {
    let e = m.e;
    let w1 = e.e1 * -(-e.e_max / e.e1).exp_m1();
    let w2 = e.a1 * e.e2 * -(-e.e_max / e.e2).exp_m1();
    let scale = if rng.random::<f64>() * (w1 + w2) < w1 {
        e.e1
    } else {
        e.e2
    };
    let u: f64 = rng.random();
    // inverse cdf of an exponential truncated at e_max
    -scale * (u * (-e.e_max / scale).exp_m1()).ln_1p()
}

/// Histogram of transition frequencies from independent draws of (b, D, E),
/// one draw per transition per sample.
pub fn monte_carlo(
    b_nv: f64,
    alpha: f64,
    spec: &DistributionSpec,
    nv: &NvParams,
    axis: &OmegaAxis,
    n: usize,
    seed: u64,
) -> Vec<f64> {
    let m = EnsembleModel::new(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = axis.step();
    let lo = axis.start - 0.5 * h;
    let mut counts = vec![0.0; axis.n];
    for _ in 0..n {
        for label in TransitionLabel::ALL {
            let b = m.b.quantile(rng.random());
            let d = nv.d + m.d.quantile(rng.random());
            let e = sample_strain(&m, &mut rng);
            let w = transition_freq_approx(label, e, b_nv, alpha, d, b, nv);
            let k = ((w - lo) / h).floor();
            if k >= 0.0 && (k as usize) < axis.n {
                counts[k as usize] += 1.0;
            }
        }
    }
    counts
}

/// (chi^2, dof, max |z|) of a histogram against bin masses, pooling bins
/// with fewer than 20 expected counts.
pub fn compare(counts: &[f64], rho: &FrequencyDensity) -> (f64, usize, f64) {
    let total: f64 = counts.iter().sum();
    let masses = rho.masses();
    let (mut chi2, mut dof, mut zmax) = (0.0, 0usize, 0.0f64);
    let (mut pool_c, mut pool_e) = (0.0, 0.0);
    for (c, m) in counts.iter().zip(&masses) {
        let e = m * total;
        if e < 20.0 {
            pool_c += c;
            pool_e += e;
            continue;
        }
        let z = (c - e) / e.sqrt();
        chi2 += z * z;
        zmax = zmax.max(z.abs());
        dof += 1;
    }
    if pool_e > 0.0 {
        let z = (pool_c - pool_e) / pool_e.sqrt();
        chi2 += z * z;
        zmax = zmax.max(z.abs());
        dof += 1;
    }
    (chi2, dof - 1, zmax)
}
