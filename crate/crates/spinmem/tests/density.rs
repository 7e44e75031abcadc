mod common;

use common::{compare, monte_carlo};
use spinmem::density::{bin_to_grid, combine_families, frequency_density, OmegaAxis};
use spinmem::par::Exec;
use spinmem::params::{DensityScheme, DistributionSpec, Family, NvParams};
use spinmem::units::TWO_PI;

#[test]
fn nominal_density_normalized_and_peaked() {
    let nv = NvParams::nominal();
    let spec = DistributionSpec::nominal();
    let axis = OmegaAxis::nominal();
    let rho = frequency_density(0.0, &spec, &nv, Family::Combined, &axis, Exec::Auto).unwrap();
    assert!((rho.trapezoid() - 1.0).abs() < 1e-3);
    assert!(rho.density.iter().all(|&d| d >= 0.0));
    // maximum on the upper branch near 2.8795 GHz
    let (k, _) = rho
        .density
        .iter()
        .enumerate()
        .filter(|(k, _)| axis.at(*k) > nv.d)
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    let f = axis.at(k) / TWO_PI;
    assert!((f - 2.8795e9).abs() < 0.3e6, "peak at {f}");
}

#[test]
fn density_matches_monte_carlo() {
    let nv = NvParams::nominal();
    let spec = DistributionSpec::nominal();
    let axis = OmegaAxis::new(TWO_PI * 2.86e9, TWO_PI * 2.90e9, 801).unwrap();
    for (b_nv, family) in [
        (0.0, Family::NonOrth),
        (0.5e-3, Family::NonOrth),
        (0.5e-3, Family::Orth),
    ] {
        let rho = frequency_density(b_nv, &spec, &nv, family, &axis, Exec::Auto).unwrap();
        let counts = monte_carlo(b_nv, nv.alpha_of(family), &spec, &nv, &axis, 200_000, 7);
        let (chi2, dof, zmax) = compare(&counts, &rho);
        let dev = (chi2 - dof as f64) / (2.0 * dof as f64).sqrt();
        assert!(
            dev.abs() < 3.0 && zmax < 5.0,
            "B={b_nv} {family:?}: chi2={chi2} dof={dof} zmax={zmax}"
        );
    }
}

#[test]
fn field_step_scheme_close_to_bin_mass() {
    let nv = NvParams::nominal();
    let mut spec = DistributionSpec::nominal();
    spec.truncation_widths = 10.0;
    let axis = OmegaAxis::new(TWO_PI * 2.865e9, TWO_PI * 2.89e9, 251).unwrap();
    let a = frequency_density(0.0, &spec, &nv, Family::NonOrth, &axis, Exec::Auto).unwrap();
    spec.scheme = DensityScheme::FieldStep;
    let b = frequency_density(0.0, &spec, &nv, Family::NonOrth, &axis, Exec::Auto).unwrap();
    let l1: f64 = a
        .masses()
        .iter()
        .zip(b.masses())
        .map(|(x, y)| (x - y).abs())
        .sum();
    assert!(l1 < 0.1, "L1 distance {l1}");
}

#[test]
fn narrow_widths_concentrate_on_forward_lines() {
    let nv = NvParams::nominal();
    let e = TWO_PI * 4e6;
    let spec = DistributionSpec {
        db0: 1e-9,
        dd0: TWO_PI * 1e3,
        e1: e * 1e-4,
        e2: e * 1e-4,
        a1: 0.0,
        d_omega0: None,
        truncation_widths: 3.0,
        scheme: DensityScheme::BinMass,
    };
    let axis = OmegaAxis::new(TWO_PI * 2.865e9, TWO_PI * 2.89e9, 2501).unwrap();
    let rho = frequency_density(0.0, &spec, &nv, Family::NonOrth, &axis, Exec::Auto).unwrap();
    let hf = nv.a_hf.abs();
    let ey = 0.0f64;
    let lines = [nv.d + ey.hypot(hf), nv.d - ey.hypot(hf), nv.d];
    let masses = rho.masses();
    let near: f64 = masses
        .iter()
        .enumerate()
        .filter(|(k, _)| {
            lines
                .iter()
                .any(|l| (axis.at(*k) - l).abs() < 2.0 * axis.step())
        })
        .map(|(_, m)| m)
        .sum();
    assert!(near > 0.99, "{near}");
}

#[test]
fn symmetric_in_field_sign() {
    let nv = NvParams::nominal();
    let spec = DistributionSpec::nominal();
    let axis = OmegaAxis::new(TWO_PI * 2.85e9, TWO_PI * 2.91e9, 601).unwrap();
    let p = frequency_density(0.7e-3, &spec, &nv, Family::NonOrth, &axis, Exec::Auto).unwrap();
    let m = frequency_density(-0.7e-3, &spec, &nv, Family::NonOrth, &axis, Exec::Auto).unwrap();
    for (a, b) in p.density.iter().zip(&m.density) {
        assert!(
            (a - b).abs()
                <= 1e-8 * a.abs().max(1e-20)
                    + 1e-12 * p.density.iter().cloned().fold(0.0, f64::max)
        );
    }
}

#[test]
fn combine_weights() {
    let nv = NvParams::nominal();
    let spec = DistributionSpec::nominal();
    let axis = OmegaAxis::new(TWO_PI * 2.85e9, TWO_PI * 2.91e9, 601).unwrap();
    let o = frequency_density(1e-3, &spec, &nv, Family::Orth, &axis, Exec::Auto).unwrap();
    let no = frequency_density(1e-3, &spec, &nv, Family::NonOrth, &axis, Exec::Auto).unwrap();
    let same = combine_families(&o, &o).unwrap();
    for (a, b) in same.density.iter().zip(&o.density) {
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-30));
    }
    let c = combine_families(&o, &no).unwrap();
    // orth share of the combined area is 1/1.6
    let share: f64 = o.masses().iter().sum::<f64>() / 1.6 / c.masses().iter().sum::<f64>();
    assert!((share - 0.625).abs() < 1e-12);
}

#[test]
fn binning_conserves_coupling() {
    let nv = NvParams::nominal();
    let spec = DistributionSpec::nominal();
    let axis = OmegaAxis::nominal();
    let rho = frequency_density(0.0, &spec, &nv, Family::Combined, &axis, Exec::Auto).unwrap();
    let g_ens = TWO_PI * 6.25e6;
    let gb = [(TWO_PI * 10.0, 0.3), (TWO_PI * 30.0, 0.7)];
    for m in [1usize, 3, 1500, 3001] {
        let grid = bin_to_grid(&rho, m, &gb, g_ens, None).unwrap();
        let s: f64 = grid.bins.iter().map(|b| b.g * b.g * b.n).sum();
        assert!((s / (g_ens * g_ens) - 1.0).abs() < 1e-12, "M={m}");
    }
}
