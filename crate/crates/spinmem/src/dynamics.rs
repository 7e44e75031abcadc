//! Mean-value dynamics of the cavity quadratures and sub-ensemble spins in
//! the frame rotating at the grid reference frequency.
//!
//! The integrator is classical RK4 at fixed step. Spins live in padded
//! blocks of structure-of-arrays storage; each step makes two sweeps over
//! the blocks. The first sweep only reduces the coupling sums needed by the
//! cavity at the second and third stages; the second recomputes the early
//! stages locally, finishes the step, and reduces the sums for the fourth
//! stage and the new state. Reductions use fixed lanes inside a block and a
//! fixed tree across blocks, so results do not depend on thread count or
//! vector width.

use std::f64::consts::SQRT_2;

use num_complex::Complex64;

use crate::drive::DriveWaveform;
use crate::error::{out_of_range, Error, Result};
use crate::grid::SubEnsembleGrid;
use crate::par::{map_mut, tree_sum, Exec};
use crate::params::{BiExp, CavityParams, DecoherenceSpec, Validate};

const LANES: usize = 8;
const BLOCK: usize = 1024;

/// Full mean-value state: cavity quadratures and per-bin spin components.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub xc: f64,
    pub pc: f64,
    pub sx: Vec<f64>,
    pub sy: Vec<f64>,
    pub sz: Vec<f64>,
}

impl SystemState {
    pub fn zeros(n: usize) -> Self {
        Self {
            xc: 0.0,
            pc: 0.0,
            sx: vec![0.0; n],
            sy: vec![0.0; n],
            sz: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.sx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sx.is_empty()
    }

    /// Intra-cavity field a_c = (X_c + i P_c) / sqrt 2.
    pub fn a_c(&self) -> Complex64 {
        Complex64::new(self.xc, self.pc) / SQRT_2
    }

    pub fn bloch_norm(&self, m: usize) -> f64 {
        (self.sx[m] * self.sx[m] + self.sy[m] * self.sy[m] + self.sz[m] * self.sz[m]).sqrt()
    }

    /// Polarization -sum S_z / sum N.
    pub fn polarization(&self, grid: &SubEnsembleGrid) -> f64 {
        let n = grid.total_spins();
        if n == 0.0 {
            return 0.0;
        }
        -self.sz.iter().sum::<f64>() / n
    }

    fn axpy(&self, h: f64, k: &Self) -> Self {
        let f = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + h * y).collect();
        Self {
            xc: self.xc + h * k.xc,
            pc: self.pc + h * k.pc,
            sx: f(&self.sx, &k.sx),
            sy: f(&self.sy, &k.sy),
            sz: f(&self.sz, &k.sz),
        }
    }
}

/// S_z = -N p', transverse components and cavity at zero.
pub fn init_state(grid: &SubEnsembleGrid, p_prime: f64) -> Result<SystemState> {
    if !(p_prime > 0.0 && p_prime <= 1.0) {
        return Err(out_of_range(
            "integrator.p_prime",
            "polarization must lie in (0, 1]",
        ));
    }
    let mut s = SystemState::zeros(grid.len());
    for (z, b) in s.sz.iter_mut().zip(&grid.bins) {
        *z = -b.n * p_prime;
    }
    Ok(s)
}

/// Time derivative of the mean values.
pub fn rhs(
    s: &SystemState,
    t: f64,
    drive: &DriveWaveform,
    grid: &SubEnsembleGrid,
    cavity: &CavityParams,
    dec: &DecoherenceSpec,
) -> SystemState {
    let beta = drive.beta_at(t);
    let dcs = cavity.omega_c - grid.omega_s;
    let k = cavity.kappa;
    let (mut gx, mut gy) = (0.0, 0.0);
    let mut d = SystemState::zeros(s.len());
    for (m, b) in grid.bins.iter().enumerate() {
        let (x, y, z) = (s.sx[m], s.sy[m], s.sz[m]);
        let c = SQRT_2 * b.g;
        gx += b.g / SQRT_2 * x;
        gy += b.g / SQRT_2 * y;
        d.sx[m] = -dec.gamma_perp * x - b.delta * y - c * z * s.pc;
        d.sy[m] = -dec.gamma_perp * y + b.delta * x - c * z * s.xc;
        d.sz[m] = c * (x * s.pc + y * s.xc) - dec.gamma_par * (z + b.n);
    }
    d.xc = -k * s.xc + dcs * s.pc - gy + 2.0 * k.sqrt() * beta.re;
    d.pc = -k * s.pc - dcs * s.xc - gx + 2.0 * k.sqrt() * beta.im;
    d
}

/// Directional derivative of [`rhs`] at `s` along `v` (drive-independent).
pub fn rhs_jvp(
    s: &SystemState,
    v: &SystemState,
    grid: &SubEnsembleGrid,
    cavity: &CavityParams,
    dec: &DecoherenceSpec,
) -> SystemState {
    let dcs = cavity.omega_c - grid.omega_s;
    let k = cavity.kappa;
    let (mut gx, mut gy) = (0.0, 0.0);
    let mut d = SystemState::zeros(s.len());
    for (m, b) in grid.bins.iter().enumerate() {
        let (x, y, z) = (s.sx[m], s.sy[m], s.sz[m]);
        let (vx, vy, vz) = (v.sx[m], v.sy[m], v.sz[m]);
        let c = SQRT_2 * b.g;
        gx += b.g / SQRT_2 * vx;
        gy += b.g / SQRT_2 * vy;
        d.sx[m] = -dec.gamma_perp * vx - b.delta * vy - c * (vz * s.pc + z * v.pc);
        d.sy[m] = -dec.gamma_perp * vy + b.delta * vx - c * (vz * s.xc + z * v.xc);
        d.sz[m] = c * (vx * s.pc + x * v.pc + vy * s.xc + y * v.xc) - dec.gamma_par * vz;
    }
    d.xc = -k * v.xc + dcs * v.pc - gy;
    d.pc = -k * v.pc - dcs * v.xc - gx;
    d
}

/// Largest step allowed by the stability rule:
/// min(0.1/kappa, 0.1/max|Delta|, 0.1/g_ens, 0.1/Omega_R), where max|Delta|
/// also covers the cavity and drive detunings and Omega_R bounds the
/// single-spin Rabi frequency for the strongest drive.
pub fn auto_dt(grid: &SubEnsembleGrid, cavity: &CavityParams, drive: &DriveWaveform) -> f64 {
    let mut det = grid
        .max_abs_delta()
        .max((cavity.omega_c - grid.omega_s).abs());
    for s in &drive.segments {
        det = det.max(s.detuning.abs());
    }
    let g_max = grid
        .bins
        .iter()
        .filter(|b| b.n > 0.0)
        .map(|b| b.g)
        .fold(0.0, f64::max);
    // resonant intra-cavity amplitude |a_c| = sqrt(2/kappa) |beta|
    let rabi = 2.0 * g_max * (2.0 / cavity.kappa).sqrt() * drive.max_amplitude();
    let mut dt = 0.1 / cavity.kappa;
    for r in [det, grid.g_ens(), rabi] {
        if r > 0.0 {
            dt = dt.min(0.1 / r);
        }
    }
    dt
}

/// Spin state of every bin at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub state: SystemState,
}

/// Uniformly sampled output of an integration.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeTrace {
    pub dt: f64,
    pub t: Vec<f64>,
    pub xc: Vec<f64>,
    pub pc: Vec<f64>,
    /// Reflected field in sqrt(photons/s).
    pub a_r: Vec<Complex64>,
    pub snapshots: Vec<Snapshot>,
}

impl TimeTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn a_c(&self, i: usize) -> Complex64 {
        Complex64::new(self.xc[i], self.pc[i]) / SQRT_2
    }

    fn check_axis(&self, o: &Self) -> Result<()> {
        if self.len() != o.len() || self.dt != o.dt || self.t.first() != o.t.first() {
            return Err(Error::Axis(
                "traces are sampled on different time axes".into(),
            ));
        }
        Ok(())
    }

    /// Weighted sum wa * self + wb * other of all field traces.
    pub fn combine(&self, wa: f64, other: &Self, wb: f64) -> Result<Self> {
        self.check_axis(other)?;
        let lin = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| wa * x + wb * y).collect();
        Ok(Self {
            dt: self.dt,
            t: self.t.clone(),
            xc: lin(&self.xc, &other.xc),
            pc: lin(&self.pc, &other.pc),
            a_r: self
                .a_r
                .iter()
                .zip(&other.a_r)
                .map(|(x, y)| x * wa + y * wb)
                .collect(),
            snapshots: Vec::new(),
        })
    }

    /// self - other, e.g. to remove the response to a reference sequence.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.combine(1.0, other, -1.0)
    }

    /// Sample indices with t in [t0, t1].
    pub fn index_range(&self, t0: f64, t1: f64) -> std::ops::Range<usize> {
        let lo = self.t.partition_point(|&t| t < t0);
        let hi = self.t.partition_point(|&t| t <= t1);
        lo..hi.max(lo)
    }

    /// Trapezoidal integral of |a_R|^2 over [t0, t1] (photons).
    pub fn energy(&self, t0: f64, t1: f64) -> f64 {
        let r = self.index_range(t0, t1);
        trapezoid(self.dt, r.map(|i| self.a_r[i].norm_sqr()))
    }
}

pub(crate) fn trapezoid(h: f64, v: impl Iterator<Item = f64>) -> f64 {
    let (mut acc, mut first, mut last, mut n) = (0.0, 0.0, 0.0, 0usize);
    for (i, x) in v.enumerate() {
        if i == 0 {
            first = x;
        }
        acc += x;
        last = x;
        n = i + 1;
    }
    if n < 2 {
        return 0.0;
    }
    h * (acc - 0.5 * (first + last))
}

/// Integration settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Integration {
    /// Step; `None` selects [`auto_dt`]. Shrunk so that an integer number of
    /// steps spans `t_end`.
    pub dt: Option<f64>,
    pub t_end: f64,
    pub p_prime: f64,
    pub exec: Exec,
    /// Record every `stride`-th step.
    pub stride: usize,
    pub snapshot_times: Vec<f64>,
}

impl Integration {
    pub fn new(t_end: f64) -> Self {
        Self {
            dt: None,
            t_end,
            p_prime: 1.0,
            exec: Exec::Auto,
            stride: 1,
            snapshot_times: Vec::new(),
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = Some(dt);
        self
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }
}

type Lane = [f64; LANES];

struct Block {
    /// sqrt 2 g
    c: Box<[f64; BLOCK]>,
    delta: Box<[f64; BLOCK]>,
    n: Box<[f64; BLOCK]>,
    x: Box<[f64; BLOCK]>,
    y: Box<[f64; BLOCK]>,
    z: Box<[f64; BLOCK]>,
}

fn zeros() -> Box<[f64; BLOCK]> {
    Box::new([0.0; BLOCK])
}

/// Cavity quadratures at each RK stage plus step constants.
#[derive(Clone, Copy)]
struct Stage {
    h: f64,
    gp: f64,
    gl: f64,
    xs: [f64; 4],
    ps: [f64; 4],
}

#[inline(always)]
fn spin_f(
    x: f64,
    y: f64,
    z: f64,
    c: f64,
    d: f64,
    n: f64,
    cx: f64,
    cp: f64,
    gp: f64,
    gl: f64,
) -> (f64, f64, f64) {
    (
        -gp * x - d * y - c * z * cp,
        -gp * y + d * x - c * z * cx,
        c * (x * cp + y * cx) - gl * (z + n),
    )
}

#[inline(always)]
fn lane_reduce(v: &[f64; BLOCK]) -> f64 {
    let mut l: Lane = [0.0; LANES];
    for ch in v.chunks_exact(LANES) {
        for j in 0..LANES {
            l[j] += ch[j];
        }
    }
    ((l[0] + l[1]) + (l[2] + l[3])) + ((l[4] + l[5]) + (l[6] + l[7]))
}

/// Sums of c*x, c*y at stages 2 and 3.
#[inline(always)]
fn sweep_a_body<const GL: bool>(b: &Block, s: &Stage) -> [f64; 4] {
    let h2 = 0.5 * s.h;
    let mut t = [[0.0; BLOCK]; 4];
    let [t0, t1, t2, t3] = &mut t;
    for k in 0..BLOCK {
        let (c, d) = (b.c[k], b.delta[k]);
        let n = if GL { b.n[k] } else { 0.0 };
        let (x, y, z) = (b.x[k], b.y[k], b.z[k]);
        let (ax, ay, az) = spin_f(x, y, z, c, d, n, s.xs[0], s.ps[0], s.gp, s.gl);
        let (x2, y2, z2) = (x + h2 * ax, y + h2 * ay, z + h2 * az);
        t0[k] = c * x2;
        t1[k] = c * y2;
        let (bx, by, _) = spin_f(x2, y2, z2, c, d, n, s.xs[1], s.ps[1], s.gp, s.gl);
        t2[k] = c * (x + h2 * bx);
        t3[k] = c * (y + h2 * by);
    }
    std::array::from_fn(|q| lane_reduce(&t[q]))
}

/// Advance the block and return sums of c*x, c*y at stage 4 and at the new
/// state.
#[inline(always)]
fn sweep_b_body<const GL: bool>(b: &mut Block, s: &Stage) -> [f64; 4] {
    let h = s.h;
    let h2 = 0.5 * h;
    let h6 = h / 6.0;
    let mut t = [[0.0; BLOCK]; 4];
    let [t0, t1, t2, t3] = &mut t;
    let Block {
        c: bc,
        delta: bd,
        n: bn,
        x: bxs,
        y: bys,
        z: bzs,
    } = b;
    for k in 0..BLOCK {
        let (c, d) = (bc[k], bd[k]);
        let n = if GL { bn[k] } else { 0.0 };
        let (x, y, z) = (bxs[k], bys[k], bzs[k]);
        let (ax, ay, az) = spin_f(x, y, z, c, d, n, s.xs[0], s.ps[0], s.gp, s.gl);
        let (bx, by, bz) = spin_f(
            x + h2 * ax,
            y + h2 * ay,
            z + h2 * az,
            c,
            d,
            n,
            s.xs[1],
            s.ps[1],
            s.gp,
            s.gl,
        );
        let (cx, cy, cz) = spin_f(
            x + h2 * bx,
            y + h2 * by,
            z + h2 * bz,
            c,
            d,
            n,
            s.xs[2],
            s.ps[2],
            s.gp,
            s.gl,
        );
        let (x4, y4, z4) = (x + h * cx, y + h * cy, z + h * cz);
        t0[k] = c * x4;
        t1[k] = c * y4;
        let (dx, dy, dz) = spin_f(x4, y4, z4, c, d, n, s.xs[3], s.ps[3], s.gp, s.gl);
        let xn = x + h6 * (ax + 2.0 * (bx + cx) + dx);
        let yn = y + h6 * (ay + 2.0 * (by + cy) + dy);
        bxs[k] = xn;
        bys[k] = yn;
        bzs[k] = z + h6 * (az + 2.0 * (bz + cz) + dz);
        t2[k] = c * xn;
        t3[k] = c * yn;
    }
    std::array::from_fn(|q| lane_reduce(&t[q]))
}

#[cfg(target_arch = "x86_64")]
mod simd {
    use super::*;

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn sweep_a_avx512<const GL: bool>(b: &Block, s: &Stage) -> [f64; 4] {
        sweep_a_body::<GL>(b, s)
    }

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn sweep_b_avx512<const GL: bool>(b: &mut Block, s: &Stage) -> [f64; 4] {
        sweep_b_body::<GL>(b, s)
    }

    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn sweep_a_avx2<const GL: bool>(b: &Block, s: &Stage) -> [f64; 4] {
        sweep_a_body::<GL>(b, s)
    }

    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn sweep_b_avx2<const GL: bool>(b: &mut Block, s: &Stage) -> [f64; 4] {
        sweep_b_body::<GL>(b, s)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Isa {
    Base,
    #[cfg(target_arch = "x86_64")]
    Avx2,
    #[cfg(target_arch = "x86_64")]
    Avx512,
}

impl Isa {
    fn detect() -> Self {
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx512f") {
                return Isa::Avx512;
            }
            if std::arch::is_x86_feature_detected!("avx2") {
                return Isa::Avx2;
            }
        }
        Isa::Base
    }

    // Both variants compile the same scalar code without FMA contraction,
    // so every ISA produces identical bits.
    fn sweep_a<const GL: bool>(self, b: &Block, s: &Stage) -> [f64; 4] {
        match self {
            Isa::Base => sweep_a_body::<GL>(b, s),
            #[cfg(target_arch = "x86_64")]
            Isa::Avx2 => unsafe { simd::sweep_a_avx2::<GL>(b, s) },
            #[cfg(target_arch = "x86_64")]
            Isa::Avx512 => unsafe { simd::sweep_a_avx512::<GL>(b, s) },
        }
    }

    fn sweep_b<const GL: bool>(self, b: &mut Block, s: &Stage) -> [f64; 4] {
        match self {
            Isa::Base => sweep_b_body::<GL>(b, s),
            #[cfg(target_arch = "x86_64")]
            Isa::Avx2 => unsafe { simd::sweep_b_avx2::<GL>(b, s) },
            #[cfg(target_arch = "x86_64")]
            Isa::Avx512 => unsafe { simd::sweep_b_avx512::<GL>(b, s) },
        }
    }
}

fn to_blocks(grid: &SubEnsembleGrid, s: &SystemState) -> Vec<Block> {
    let nb = grid.len().div_ceil(BLOCK);
    let mut blocks: Vec<Block> = (0..nb)
        .map(|_| Block {
            c: zeros(),
            delta: zeros(),
            n: zeros(),
            x: zeros(),
            y: zeros(),
            z: zeros(),
        })
        .collect();
    for (m, bin) in grid.bins.iter().enumerate() {
        let (b, k) = (&mut blocks[m / BLOCK], m % BLOCK);
        b.c[k] = SQRT_2 * bin.g;
        b.delta[k] = bin.delta;
        b.n[k] = bin.n;
        b.x[k] = s.sx[m];
        b.y[k] = s.sy[m];
        b.z[k] = s.sz[m];
    }
    blocks
}

fn from_blocks(blocks: &[Block], xc: f64, pc: f64, n: usize) -> SystemState {
    let mut s = SystemState::zeros(n);
    s.xc = xc;
    s.pc = pc;
    for m in 0..n {
        let (b, k) = (&blocks[m / BLOCK], m % BLOCK);
        s.sx[m] = b.x[k];
        s.sy[m] = b.y[k];
        s.sz[m] = b.z[k];
    }
    s
}

/// Integrate from the polarized initial state over [0, t_end].
pub fn integrate(
    seq: &DriveWaveform,
    grid: &SubEnsembleGrid,
    cavity: &CavityParams,
    dec: &DecoherenceSpec,
    opts: &Integration,
) -> Result<TimeTrace> {
    let s0 = init_state(grid, opts.p_prime)?;
    integrate_from(&s0, seq, grid, cavity, dec, opts).map(|(tr, _)| tr)
}

/// Integrate from an arbitrary state at t = 0; also returns the final state.
pub fn integrate_from(
    s0: &SystemState,
    seq: &DriveWaveform,
    grid: &SubEnsembleGrid,
    cavity: &CavityParams,
    dec: &DecoherenceSpec,
    opts: &Integration,
) -> Result<(TimeTrace, SystemState)> {
    seq.validate()?;
    cavity.validate()?;
    if s0.len() != grid.len() {
        return Err(Error::Axis(format!(
            "state has {} bins, grid {}",
            s0.len(),
            grid.len()
        )));
    }
    if !(dec.gamma_perp >= 0.0 && dec.gamma_par >= 0.0) {
        return Err(out_of_range("decoherence", "rates must be >= 0"));
    }
    if !(opts.t_end > 0.0 && opts.t_end.is_finite()) {
        return Err(out_of_range("integrator.t_end", "must be positive"));
    }
    if opts.stride == 0 {
        return Err(out_of_range("integrator.stride", "must be >= 1"));
    }
    let bound = auto_dt(grid, cavity, seq);
    let dt0 = match opts.dt {
        Some(dt) if !(dt > 0.0) => return Err(out_of_range("integrator.dt", "must be positive")),
        Some(dt) if dt > bound * (1.0 + 1e-9) => {
            return Err(out_of_range(
                "integrator.dt",
                format!("{dt:e} s exceeds stability bound {bound:e} s"),
            ))
        }
        Some(dt) => dt,
        None => bound,
    };
    let steps = ((opts.t_end / dt0) - 1e-9).ceil().max(1.0) as usize;
    let h = opts.t_end / steps as f64;

    let isa = Isa::detect();
    let gl = dec.gamma_par != 0.0;
    let mut blocks = to_blocks(grid, s0);
    let kappa = cavity.kappa;
    let sk = kappa.sqrt();
    let dcs = cavity.omega_c - grid.omega_s;
    let cav = |x: f64, p: f64, gx: f64, gy: f64, beta: Complex64| {
        (
            -kappa * x + dcs * p - gy + 2.0 * sk * beta.re,
            -kappa * p - dcs * x - gx + 2.0 * sk * beta.im,
        )
    };
    // coupling sums are of c * s = sqrt 2 g s; the cavity needs g s / sqrt 2
    let reduce = |parts: &[[f64; 4]]| {
        let r = tree_sum(parts);
        [0.5 * r[0], 0.5 * r[1], 0.5 * r[2], 0.5 * r[3]]
    };
    let initial = map_mut(opts.exec, &mut blocks, |b| {
        let mut a = [0.0; 4];
        for k in 0..BLOCK {
            a[0] += b.c[k] * b.x[k];
            a[1] += b.c[k] * b.y[k];
        }
        a
    });
    let g0 = reduce(&initial);
    let (mut gx, mut gy) = (g0[0], g0[1]);
    let (mut xc, mut pc) = (s0.xc, s0.pc);

    let n_rec = steps / opts.stride + 1;
    let mut tr = TimeTrace {
        dt: h * opts.stride as f64,
        t: Vec::with_capacity(n_rec),
        xc: Vec::with_capacity(n_rec),
        pc: Vec::with_capacity(n_rec),
        a_r: Vec::with_capacity(n_rec),
        snapshots: Vec::new(),
    };
    let mut snaps: Vec<f64> = opts.snapshot_times.clone();
    snaps.sort_by(f64::total_cmp);
    let mut next_snap = 0;
    let record = |tr: &mut TimeTrace, t: f64, x: f64, p: f64| {
        tr.t.push(t);
        tr.xc.push(x);
        tr.pc.push(p);
        tr.a_r.push(Complex64::new(x, p) * sk - seq.beta_at(t));
    };

    for step in 0..=steps {
        let t = step as f64 * h;
        if step % opts.stride == 0 {
            record(&mut tr, t, xc, pc);
        }
        while next_snap < snaps.len() && snaps[next_snap] <= t + 0.5 * h {
            if snaps[next_snap] >= t - 0.5 * h || step == 0 {
                tr.snapshots.push(Snapshot {
                    t,
                    state: from_blocks(&blocks, xc, pc, grid.len()),
                });
            }
            next_snap += 1;
        }
        if step == steps {
            break;
        }
        let b1 = seq.beta_at(t);
        let b2 = seq.beta_at(t + 0.5 * h);
        let b4 = seq.beta_at(t + h);

        let (k1x, k1p) = cav(xc, pc, gx, gy, b1);
        let (x2, p2) = (xc + 0.5 * h * k1x, pc + 0.5 * h * k1p);
        let mut st = Stage {
            h,
            gp: dec.gamma_perp,
            gl: dec.gamma_par,
            xs: [xc, x2, 0.0, 0.0],
            ps: [pc, p2, 0.0, 0.0],
        };
        let sa = {
            let st = st;
            if gl {
                reduce(&map_mut(opts.exec, &mut blocks, |b| {
                    isa.sweep_a::<true>(b, &st)
                }))
            } else {
                reduce(&map_mut(opts.exec, &mut blocks, |b| {
                    isa.sweep_a::<false>(b, &st)
                }))
            }
        };
        let (k2x, k2p) = cav(x2, p2, sa[0], sa[1], b2);
        let (x3, p3) = (xc + 0.5 * h * k2x, pc + 0.5 * h * k2p);
        let (k3x, k3p) = cav(x3, p3, sa[2], sa[3], b2);
        let (x4, p4) = (xc + h * k3x, pc + h * k3p);
        st.xs[2] = x3;
        st.ps[2] = p3;
        st.xs[3] = x4;
        st.ps[3] = p4;
        let sb = {
            let st = st;
            if gl {
                reduce(&map_mut(opts.exec, &mut blocks, |b| {
                    isa.sweep_b::<true>(b, &st)
                }))
            } else {
                reduce(&map_mut(opts.exec, &mut blocks, |b| {
                    isa.sweep_b::<false>(b, &st)
                }))
            }
        };
        let (k4x, k4p) = cav(x4, p4, sb[0], sb[1], b4);
        xc += h / 6.0 * (k1x + 2.0 * (k2x + k3x) + k4x);
        pc += h / 6.0 * (k1p + 2.0 * (k2p + k3p) + k4p);
        gx = sb[2];
        gy = sb[3];
        if !(xc.is_finite() && pc.is_finite() && gx.is_finite() && gy.is_finite()) {
            return Err(Error::NonFinite {
                step: step + 1,
                t: t + h,
            });
        }
    }
    let last = from_blocks(&blocks, xc, pc, grid.len());
    Ok((tr, last))
}

/// Reference RK4 over the plain [`rhs`], for cross-checks.
pub fn integrate_reference(
    s0: &SystemState,
    seq: &DriveWaveform,
    grid: &SubEnsembleGrid,
    cavity: &CavityParams,
    dec: &DecoherenceSpec,
    h: f64,
    steps: usize,
) -> SystemState {
    let mut s = s0.clone();
    for i in 0..steps {
        let t = i as f64 * h;
        let k1 = rhs(&s, t, seq, grid, cavity, dec);
        let k2 = rhs(&s.axpy(0.5 * h, &k1), t + 0.5 * h, seq, grid, cavity, dec);
        let k3 = rhs(&s.axpy(0.5 * h, &k2), t + 0.5 * h, seq, grid, cavity, dec);
        let k4 = rhs(&s.axpy(h, &k3), t + h, seq, grid, cavity, dec);
        s = s
            .axpy(h / 6.0, &k1)
            .axpy(h / 3.0, &k2)
            .axpy(h / 3.0, &k3)
            .axpy(h / 6.0, &k4);
    }
    s
}

/// Result of a two-coherence-time run.
#[derive(Debug, Clone, PartialEq)]
pub struct BiT2Run {
    /// A * run_a + B * run_b.
    pub trace: TimeTrace,
    pub run_a: TimeTrace,
    pub run_b: TimeTrace,
    /// max |a_c,a - a_c,b| / max |a_c,a| over the diagnostic window.
    pub delta_ac: f64,
    pub window: (f64, f64),
}

/// Run once with gamma_perp = 1/T2A and once with 1/T2B and combine the
/// fields with weights A and B. The diagnostic window defaults to the
/// strongest segment of the sequence.
pub fn bi_t2_run(
    seq: &DriveWaveform,
    grid: &SubEnsembleGrid,
    cavity: &CavityParams,
    dec: &DecoherenceSpec,
    opts: &Integration,
    window: Option<(f64, f64)>,
) -> Result<BiT2Run> {
    let bx: BiExp = dec
        .biexp
        .ok_or_else(|| out_of_range("decoherence.biexp", "bi-exponential spec required"))?;
    dec.validate()?;
    let dec_a = DecoherenceSpec {
        gamma_perp: 1.0 / bx.t2a,
        ..*dec
    };
    let dec_b = DecoherenceSpec {
        gamma_perp: 1.0 / bx.t2b,
        ..*dec
    };
    let run_a = integrate(seq, grid, cavity, &dec_a, opts)?;
    let run_b = if bx.weight_b == 0.0 {
        run_a.clone()
    } else {
        integrate(seq, grid, cavity, &dec_b, opts)?
    };
    let window = match window {
        Some(w) => w,
        None => seq
            .segments
            .iter()
            .max_by(|a, b| a.beta.norm().total_cmp(&b.beta.norm()))
            .map(|s| (s.t_start, s.t_end()))
            .unwrap_or((0.0, opts.t_end)),
    };
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for i in run_a.index_range(window.0, window.1) {
        num = num.max((run_a.a_c(i) - run_b.a_c(i)).norm());
        den = den.max(run_a.a_c(i).norm());
    }
    let delta_ac = if den > 0.0 { num / den } else { 0.0 };
    let trace = run_a.combine(bx.weight_a, &run_b, bx.weight_b)?;
    Ok(BiT2Run {
        trace,
        run_a,
        run_b,
        delta_ac,
        window,
    })
}
