//! Decay-law fits: f(tau) = S (A exp(-2 tau/T2A) + B exp(-2 tau/T2B)) with
//! A + B = 1, by Levenberg-Marquardt on relative residuals.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Fitted decay law. `cov` is the covariance of (S, A, T2A, T2B).
#[derive(Debug, Clone, PartialEq)]
pub struct BiExpFit {
    pub scale: f64,
    pub a: f64,
    pub b: f64,
    pub t2a: f64,
    pub t2b: f64,
    pub cov: [[f64; 4]; 4],
    /// Sum of squared relative residuals.
    pub chi2: f64,
    /// True when the single-exponential model was selected.
    pub single: bool,
}

impl BiExpFit {
    pub fn eval(&self, tau: f64) -> f64 {
        self.scale
            * (self.a * (-2.0 * tau / self.t2a).exp() + self.b * (-2.0 * tau / self.t2b).exp())
    }

    pub fn std_err(&self, k: usize) -> f64 {
        self.cov[k][k].max(0.0).sqrt()
    }
}

struct Lm {
    params: Vec<f64>,
    chi2: f64,
    jtj: DMatrix<f64>,
}

/// Minimize sum r_i(p)^2 with a forward-difference Jacobian.
fn levenberg_marquardt(r: &dyn Fn(&[f64]) -> Vec<f64>, p0: &[f64], max_iter: usize) -> Option<Lm> {
    let n = p0.len();
    let mut p = p0.to_vec();
    let mut res = r(&p);
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let mut chi2 = sq(&res);
    if !chi2.is_finite() {
        return None;
    }
    let mut lambda = 1e-3;
    let m = res.len();
    let jacobian = |p: &[f64], res: &[f64]| {
        let mut j = DMatrix::zeros(m, n);
        for k in 0..n {
            let h = 1e-7 * p[k].abs().max(1e-3);
            let mut q = p.to_vec();
            q[k] += h;
            let rq = r(&q);
            for i in 0..m {
                j[(i, k)] = (rq[i] - res[i]) / h;
            }
        }
        j
    };
    let mut j = jacobian(&p, &res);
    for _ in 0..max_iter {
        let jtj = j.transpose() * &j;
        let g = j.transpose() * DVector::from_column_slice(&res);
        let mut a = jtj.clone();
        for k in 0..n {
            a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
        }
        let Some(step) = a.lu().solve(&(-g)) else {
            lambda *= 10.0;
            continue;
        };
        let q: Vec<f64> = p.iter().zip(step.iter()).map(|(x, d)| x + d).collect();
        let rq = r(&q);
        let c = sq(&rq);
        if c.is_finite() && c < chi2 {
            let done = (chi2 - c) <= 1e-14 * chi2 + 1e-300;
            p = q;
            res = rq;
            chi2 = c;
            lambda = (lambda * 0.3).max(1e-12);
            j = jacobian(&p, &res);
            if done {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    let jtj = j.transpose() * &j;
    Some(Lm {
        params: p,
        chi2,
        jtj,
    })
}

fn check(tau: &[f64], y: &[f64], min: usize) -> Result<()> {
    if tau.len() != y.len() {
        return Err(Error::Fit(format!(
            "{} delays but {} amplitudes",
            tau.len(),
            y.len()
        )));
    }
    if tau.len() < min {
        return Err(Error::Fit(format!(
            "need at least {min} points, got {}",
            tau.len()
        )));
    }
    if y.iter().any(|v| !(*v > 0.0 && v.is_finite())) || tau.iter().any(|t| !t.is_finite()) {
        return Err(Error::Fit("amplitudes must be positive and finite".into()));
    }
    Ok(())
}

/// Log-linear least squares for S exp(-2 tau / T).
fn loglin(tau: &[f64], y: &[f64]) -> (f64, f64) {
    let n = tau.len() as f64;
    let mx = tau.iter().sum::<f64>() / n;
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = tau.iter().zip(&ly).map(|(x, l)| (x - mx) * (l - my)).sum();
    let sxx: f64 = tau.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { -1.0 };
    let t = if slope < 0.0 {
        -2.0 / slope
    } else {
        1e3 * tau.iter().cloned().fold(0.0, f64::max).max(1e-9)
    };
    ((my - slope * mx).exp(), t)
}

/// Fit S exp(-2 tau / T2); reported with A = 1, B = 0.
pub fn fit_single_exp(tau: &[f64], y: &[f64]) -> Result<BiExpFit> {
    check(tau, y, 3)?;
    let (s0, t0) = loglin(tau, y);
    let r = |p: &[f64]| -> Vec<f64> {
        let (s, t) = (p[0].exp(), p[1].exp());
        tau.iter()
            .zip(y)
            .map(|(x, v)| s * (-2.0 * x / t).exp() / v - 1.0)
            .collect()
    };
    let lm = levenberg_marquardt(&r, &[s0.ln(), t0.ln()], 200)
        .ok_or_else(|| Error::Fit("single exponential diverged".into()))?;
    let (s, t) = (lm.params[0].exp(), lm.params[1].exp());
    let dof = (tau.len() - 2).max(1) as f64;
    let mut cov = [[0.0; 4]; 4];
    if let Some(inv) = lm.jtj.clone().try_inverse() {
        let v = lm.chi2 / dof;
        let jac = [s, t];
        let map = [0usize, 2];
        for i in 0..2 {
            for k in 0..2 {
                cov[map[i]][map[k]] = inv[(i, k)] * v * jac[i] * jac[k];
            }
        }
        cov[3] = cov[2];
        for row in cov.iter_mut() {
            row[3] = row[2];
        }
    }
    Ok(BiExpFit {
        scale: s,
        a: 1.0,
        b: 0.0,
        t2a: t,
        t2b: t,
        cov,
        chi2: lm.chi2,
        single: true,
    })
}

/// Bi-exponential fit with bounded restarts. Falls back to the single
/// exponential when the extra parameters do not improve chi^2
/// significantly (F-test at the 1% level, approximated).
pub fn fit_biexp_decay(tau: &[f64], y: &[f64]) -> Result<BiExpFit> {
    check(tau, y, 6)?;
    let single = fit_single_exp(tau, y)?;
    let r = |p: &[f64]| -> Vec<f64> {
        let (s, a, ta, tb) = (p[0].exp(), p[1], p[2].exp(), p[3].exp());
        tau.iter()
            .zip(y)
            .map(|(x, v)| {
                s * (a * (-2.0 * x / ta).exp() + (1.0 - a) * (-2.0 * x / tb).exp()) / v - 1.0
            })
            .collect()
    };
    let mut best: Option<Lm> = None;
    for (fa, fb) in [
        (0.5, 2.0),
        (0.3, 3.0),
        (0.7, 1.5),
        (0.2, 5.0),
        (0.1, 1.2),
        (0.8, 10.0),
    ] {
        for a0 in [0.5, 0.8, 0.2] {
            let p0 = [
                single.scale.ln(),
                a0,
                (single.t2a * fa).ln(),
                (single.t2a * fb).ln(),
            ];
            if let Some(lm) = levenberg_marquardt(&r, &p0, 300) {
                if best.as_ref().is_none_or(|b| lm.chi2 < b.chi2) {
                    best = Some(lm);
                }
            }
        }
    }
    let lm = best
        .ok_or_else(|| Error::Fit("bi-exponential fit did not converge after restarts".into()))?;
    let n = tau.len() as f64;
    let f = (single.chi2 - lm.chi2) / 2.0 / (lm.chi2 / (n - 4.0)).max(1e-300);
    // F(2, n-4) 1% critical value is below 10 for n >= 8
    let f_crit = if n >= 8.0 { 10.0 } else { 30.0 };
    if !(lm.chi2 < single.chi2) || f < f_crit {
        return Ok(single);
    }
    let mut p = lm.params.clone();
    if p[2] > p[3] {
        p.swap(2, 3);
        p[1] = 1.0 - p[1];
    }
    let (s, a, ta, tb) = (p[0].exp(), p[1], p[2].exp(), p[3].exp());
    let mut cov = [[0.0; 4]; 4];
    let jtj = {
        let full = lm.jtj.clone();
        if lm.params[2] > lm.params[3] {
            // reorder to the swapped parametrization: a' = 1 - a
            let mut t = DMatrix::identity(4, 4);
            t[(1, 1)] = -1.0;
            t.swap_rows(2, 3);
            &t.transpose() * full * &t
        } else {
            full
        }
    };
    if let Some(inv) = jtj.try_inverse() {
        let v = lm.chi2 / (n - 4.0).max(1.0);
        let d = [s, 1.0, ta, tb];
        for i in 0..4 {
            for k in 0..4 {
                cov[i][k] = inv[(i, k)] * v * d[i] * d[k];
            }
        }
    }
    Ok(BiExpFit {
        scale: s,
        a,
        b: 1.0 - a,
        t2a: ta,
        t2b: tb,
        cov,
        chi2: lm.chi2,
        single: false,
    })
}

/// Least-squares prefactor c in y = c x.
pub fn fit_proportional(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Fit(
            "prefactor fit needs matching non-empty data".into(),
        ));
    }
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all regressors are zero".into()));
    }
    Ok(x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / sxx)
}
