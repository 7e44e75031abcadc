//! NV ground-state transition frequencies.
//!
//! Fast square-root formulas, an exact diagonalization of the secular
//! electron-spin-1 x nuclear-spin-1 Hamiltonian, and the inverse map from a
//! transition frequency back to the local field.

use nalgebra::{Matrix3, SMatrix};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::params::NvParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Branch {
    Minus,
    Plus,
}

impl Branch {
    pub fn sign(self) -> f64 {
        match self {
            Branch::Minus => -1.0,
            Branch::Plus => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TransitionLabel {
    pub m_i: i8,
    pub branch: Branch,
}

impl TransitionLabel {
    /// The six labels sorted by (m_I, branch).
    pub const ALL: [TransitionLabel; 6] = [
        TransitionLabel {
            m_i: -1,
            branch: Branch::Minus,
        },
        TransitionLabel {
            m_i: -1,
            branch: Branch::Plus,
        },
        TransitionLabel {
            m_i: 0,
            branch: Branch::Minus,
        },
        TransitionLabel {
            m_i: 0,
            branch: Branch::Plus,
        },
        TransitionLabel {
            m_i: 1,
            branch: Branch::Minus,
        },
        TransitionLabel {
            m_i: 1,
            branch: Branch::Plus,
        },
    ];

    /// Sign of the hyperfine field offset, s = -m_I.
    pub fn s(self) -> f64 {
        -(self.m_i as f64)
    }

    pub fn name(self) -> String {
        let b = match self.branch {
            Branch::Minus => "minus",
            Branch::Plus => "plus",
        };
        format!("mI{:+}_{b}", self.m_i)
    }
}

/// Effective axial field seen by a transition.
#[inline]
pub fn axial_field(label: TransitionLabel, b_nv: f64, alpha: f64, b: f64, nv: &NvParams) -> f64 {
    b_nv * alpha.cos() + label.s() * nv.b_hfs + b
}

/// omega = D +- sqrt(E^2 + gamma^2 (B cos(alpha) + s B_hfs + b)^2).
pub fn transition_freq_approx(
    label: TransitionLabel,
    e: f64,
    b_nv: f64,
    alpha: f64,
    d: f64,
    b: f64,
    nv: &NvParams,
) -> f64 {
    let u = axial_field(label, b_nv, alpha, b, nv);
    d + label.branch.sign() * e.hypot(nv.gamma_e * u)
}

/// True when the square-root formulas are expected to hold.
pub fn in_validity_regime(e: f64, b_abs: f64, nv: &NvParams) -> bool {
    e.abs() < 0.05 * nv.d && nv.gamma_e * b_abs < 0.05 * nv.d
}

fn spin1() -> [Matrix3<Complex64>; 3] {
    let c = |x: f64| Complex64::new(x, 0.0);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let z = c(0.0);
    // basis order m = +1, 0, -1
    let sx = Matrix3::new(z, c(s), z, c(s), z, c(s), z, c(s), z);
    let i = Complex64::new(0.0, s);
    let sy = Matrix3::new(z, -i, z, i, z, -i, z, i, z);
    let sz = Matrix3::new(c(1.0), z, z, z, z, z, z, z, c(-1.0));
    [sx, sy, sz]
}

/// Full 9x9 secular Hamiltonian (rad/s) in the basis |m_S> (x) |m_I>, both
/// ordered +1, 0, -1, with the electron index major.
pub fn hamiltonian(nv: &NvParams, e: f64, b_vec: [f64; 3]) -> SMatrix<Complex64, 9, 9> {
    let [sx, sy, sz] = spin1();
    let one = Matrix3::<Complex64>::identity();
    let kron = |a: &Matrix3<Complex64>, b: &Matrix3<Complex64>| a.kronecker(b);
    let g = nv.gamma_e;
    let c = |x: f64| Complex64::new(x, 0.0);
    let electron: Matrix3<Complex64> = sz * sz * c(nv.d)
        + (sx * sx - sy * sy) * c(e)
        + sx * c(g * b_vec[0])
        + sy * c(g * b_vec[1])
        + sz * c(g * b_vec[2]);
    let m =
        kron(&electron, &one) + kron(&one, &(sz * sz)) * c(nv.q_nuc) + kron(&sz, &sz) * c(nv.a_hf);
    SMatrix::<Complex64, 9, 9>::from_fn(|r, c| m[(r, c)])
}

/// The six |0, m_I> -> |+-, m_I> gaps (rad/s) in [`TransitionLabel::ALL`]
/// order. `b_vec` is in the NV frame (z along the NV axis).
///
/// The secular Hamiltonian commutes with I_z, so each nuclear sector is
/// diagonalized on its own; within a sector the |0>-like state is the one
/// with the largest m_S = 0 weight and the other two are ordered by energy.
pub fn transition_freq_exact(nv: &NvParams, e: f64, b_vec: [f64; 3]) -> Result<[f64; 6]> {
    let h = hamiltonian(nv, e, b_vec);
    let mut out = [0.0; 6];
    for (sector, m_i) in [(2usize, -1i8), (1, 0), (0, 1)] {
        let idx = [sector, 3 + sector, 6 + sector];
        let block = Matrix3::<Complex64>::from_fn(|r, c| h[(idx[r], idx[c])]);
        if block.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Eigen("non-finite Hamiltonian".into()));
        }
        let eig = block
            .try_symmetric_eigen(1e-15, 10_000)
            .ok_or_else(|| Error::Eigen(format!("sector m_I = {m_i}")))?;
        let mut states: Vec<(f64, f64)> = (0..3)
            .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(1, k)].norm_sqr()))
            .collect();
        let zero = (0..3)
            .max_by(|&a, &b| states[a].1.total_cmp(&states[b].1))
            .unwrap();
        let e0 = states.remove(zero).0;
        states.sort_by(|a, b| a.0.total_cmp(&b.0));
        let base = match m_i {
            -1 => 0,
            0 => 2,
            _ => 4,
        };
        out[base] = states[0].0 - e0;
        out[base + 1] = states[1].0 - e0;
    }
    Ok(out)
}

/// Local fields b reproducing `omega` on the given transition: zero or two
/// values. The plus branch needs omega >= D + E, the minus branch
/// omega <= D - E.
#[allow(clippy::too_many_arguments)]
pub fn invert_local_field(
    omega: f64,
    e: f64,
    b_nv: f64,
    alpha: f64,
    d: f64,
    label: TransitionLabel,
    nv: &NvParams,
) -> Option<[f64; 2]> {
    let x = label.branch.sign() * (omega - d);
    // rounding of omega - d at the band edge is not a missing solution
    let slack = 4.0 * f64::EPSILON * omega.abs().max(d.abs());
    if x < e - slack {
        return None;
    }
    let r = ((x - e).max(0.0) * (x + e)).sqrt() / nv.gamma_e;
    let c = b_nv * alpha.cos() + label.s() * nv.b_hfs;
    Some([r - c, -r - c])
}

/// Smallest positive db with |omega(b + db) - omega(b)| = d_omega0 moving
/// away from the stationary point. Finite where d omega / db = 0.
#[allow(clippy::too_many_arguments)]
pub fn local_field_step(
    e: f64,
    b_nv: f64,
    alpha: f64,
    b: f64,
    d_omega0: f64,
    label: TransitionLabel,
    nv: &NvParams,
) -> f64 {
    let gu = nv.gamma_e * axial_field(label, b_nv, alpha, b, nv).abs();
    let t = d_omega0 * (2.0 * e.hypot(gu) + d_omega0);
    // sqrt(gu^2 + t) - gu without cancellation
    t / (nv.gamma_e * ((gu * gu + t).sqrt() + gu))
}
