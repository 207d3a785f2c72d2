//! Quantum Chernoff bounds tr(rho0^s rho1^(1-s)) for Gaussian hypotheses.
//!
//! Each Gaussian state is written in normal-mode form sigma = S diag(nu) S^T.
//! For 0 < s < 1 the overlap is
//!
//! Q_s = 2^n prod_k G_s(a_k) G_{1-s}(b_k) / sqrt(det M) * exp(-d^T M^{-1} d / 2),
//!
//! with M = S0 diag(Lambda_s(a)) S0^T + S1 diag(Lambda_{1-s}(b)) S1^T and d the
//! displacement difference. At s = 0 the power rho0^0 is the projector onto the
//! support of rho0, which is handled as an exact limit.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_param, Error, Result};
use crate::gaussian::{GaussianState, PURE_TOL};
use crate::target::{Probe, TargetParams, TmsvMoments};

/// Number of uniformly spaced s values evaluated before refinement.
pub const GRID_POINTS: usize = 201;
/// Width of the final golden-section bracket.
pub const S_TOL: f64 = 1e-8;
/// Distance from 0 or 1 at which the optimum counts as a boundary optimum.
pub const BOUNDARY_TOL: f64 = 1e-6;

/// Result of minimizing Q_s over s in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ChernoffResult {
    pub s_opt: f64,
    pub q: f64,
    /// Single-copy error bound q / 2.
    pub half_q: f64,
    pub at_boundary: bool,
    /// The (s, Q_s) grid samples.
    pub s_samples: Vec<(f64, f64)>,
}

impl ChernoffResult {
    /// Error bound after `m` copies, q^m / 2.
    pub fn half_q_m(&self, m: u32) -> f64 {
        0.5 * self.q.powi(m as i32)
    }
}

/// Coherent-minus-TMSV comparison at a fixed number of copies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvantageResult {
    pub delta_m: f64,
    pub m: u32,
    pub q_cs: f64,
    pub q_tmsv: f64,
}

fn check_p(p: f64) -> Result<()> {
    check_param("p", p, p > 0.0, "must be positive")
}

fn check_x(x: f64) -> Result<f64> {
    check_param("x", x, x >= 1.0 - 1e-9, "must be at least 1")?;
    Ok(x.max(1.0))
}

// ln((x+1)/(x-1)) and ((x+1)/(x-1))^p - 1, stable near p = 0 and x = 1.
fn odds_pow(p: f64, x: f64) -> f64 {
    (p * (2.0 / (x - 1.0)).ln_1p()).exp_m1()
}

pub(crate) fn g_raw(p: f64, x: f64) -> f64 {
    if x <= 1.0 {
        return 1.0;
    }
    2f64.powf(p) / ((x - 1.0).powf(p) * odds_pow(p, x))
}

pub(crate) fn lambda_raw(p: f64, x: f64) -> f64 {
    if x <= 1.0 {
        return 1.0;
    }
    1.0 + 2.0 / odds_pow(p, x)
}

/// G_p(x) = 2^p / ((x+1)^p - (x-1)^p), with G_p(1) = 1.
pub fn g_func(p: f64, x: f64) -> Result<f64> {
    check_p(p)?;
    Ok(g_raw(p, check_x(x)?))
}

/// Lambda_p(x) = ((x+1)^p + (x-1)^p) / ((x+1)^p - (x-1)^p), with Lambda_p(1) = 1.
pub fn lambda_func(p: f64, x: f64) -> Result<f64> {
    check_p(p)?;
    Ok(lambda_raw(p, check_x(x)?))
}

fn check_s(s: f64) -> Result<()> {
    check_param("s", s, (0.0..=1.0).contains(&s), "must lie in [0, 1]")
}

fn check_ns(ns: f64) -> Result<()> {
    check_param("ns", ns, ns >= 0.0, "must be non-negative")
}

// x^p with 0^p = 0 for every p, so that 0^0 is the support projector of a
// vacuum eigenvalue rather than 1.
fn spow(x: f64, p: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.powf(p)
    }
}

/// Q_s for the coherent probe in closed form.
pub fn q_s_coherent(s: f64, params: &TargetParams, ns: f64) -> Result<f64> {
    check_s(s)?;
    params.validate()?;
    check_ns(ns)?;
    Ok(q_coherent_raw(s, params, ns))
}

// Mean photon numbers this small give symplectic eigenvalues that are
// treated as exactly pure.
fn snap_photons(n: f64) -> f64 {
    if 2.0 * n <= PURE_TOL {
        0.0
    } else {
        n
    }
}

fn snap_nu(nu: f64) -> f64 {
    if nu <= 1.0 + PURE_TOL {
        1.0
    } else {
        nu
    }
}

fn q_coherent_raw(s: f64, params: &TargetParams, ns: f64) -> f64 {
    let nbar = snap_photons(params.nbar);
    let m = snap_photons(nbar * params.transmissivity());
    // Lambda_s(2 nbar + 1) = 1 + 2a, Lambda_{1-s}(2 m + 1) = 2b - 1
    let a = if nbar == 0.0 {
        0.0
    } else {
        1.0 / (s * (1.0 / nbar).ln_1p()).exp_m1()
    };
    let b = if m == 0.0 {
        1.0
    } else {
        1.0 / -(-(1.0 - s) * (1.0 / m).ln_1p()).exp_m1()
    };
    let den = (1.0 + nbar).powf(s) * (1.0 + m).powf(1.0 - s) - spow(nbar, s) * spow(m, 1.0 - s);
    (-params.kappa * params.t() * ns / (a + b)).exp() / den
}

/// Normal-mode data of the TMSV return-idler covariance under H1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TmsvNormalModes {
    pub nu1: f64,
    pub nu2: f64,
    /// Squared coefficients of the diagonalizing two-mode squeezer.
    pub x_plus2: f64,
    pub x_minus2: f64,
}

impl TmsvNormalModes {
    pub fn new(m: &TmsvMoments) -> Result<Self> {
        let disc = (m.a + m.s).powi(2) - 4.0 * m.kappa * m.cq * m.cq;
        // disc = (nu1 + nu2)^2 >= 4 for any physical state
        if disc.is_nan() || disc < 1e-14 {
            return Err(Error::NonPhysical(format!(
                "degenerate TMSV normal modes (discriminant {disc:e})"
            )));
        }
        let r = disc.sqrt();
        Ok(Self {
            nu1: snap_nu(0.5 * (m.a - m.s + r)),
            nu2: snap_nu(0.5 * (m.s - m.a + r)),
            x_plus2: (m.a + m.s + r) / (2.0 * r),
            x_minus2: (m.a + m.s - r) / (2.0 * r),
        })
    }
}

/// Q_s for the TMSV probe in closed form.
pub fn q_s_tmsv(s: f64, params: &TargetParams, ns: f64) -> Result<f64> {
    check_s(s)?;
    params.validate()?;
    check_ns(ns)?;
    let m = TmsvMoments::new(params, ns);
    let nm = TmsvNormalModes::new(&m)?;
    Ok(q_tmsv_raw(s, &m, &nm))
}

fn q_tmsv_raw(s: f64, m: &TmsvMoments, nm: &TmsvNormalModes) -> f64 {
    let (xp, xm) = (nm.x_plus2, nm.x_minus2);
    let (b0, sq) = (snap_nu(m.b0), snap_nu(m.s));
    if s == 0.0 {
        // projector onto the support of thermal(B0) x thermal(S)
        let kc2 = m.kappa * m.cq * m.cq;
        return match (b0 == 1.0, sq == 1.0) {
            (false, false) => 1.0,
            (true, false) => 2.0 / (m.a + 1.0),
            (false, true) => 2.0 / (m.s + 1.0),
            (true, true) => 4.0 / ((m.a + 1.0) * (m.s + 1.0) - kc2),
        };
    }
    if s == 1.0 {
        // projector onto the support of rho1, expressed in its normal modes
        return match (nm.nu1 == 1.0, nm.nu2 == 1.0) {
            (false, false) => 1.0,
            (true, false) => 2.0 / (1.0 + m.b0 * xp + m.s * xm),
            (false, true) => 2.0 / (1.0 + m.b0 * xm + m.s * xp),
            (true, true) => 4.0 / ((xp + xm + m.b0) * (xp + xm + m.s) - 4.0 * xp * xm),
        };
    }
    let u = 1.0 - s;
    let (l1, l2) = (lambda_raw(u, nm.nu1), lambda_raw(u, nm.nu2));
    let sig_p = xp * l1 + xm * l2;
    let sig_m = xm * l1 + xp * l2;
    let om = (xp * xm).sqrt() * (l1 + l2);
    let num = 4.0 * g_raw(s, b0) * g_raw(s, sq) * g_raw(u, nm.nu1) * g_raw(u, nm.nu2);
    num / ((sig_p + lambda_raw(s, b0)) * (sig_m + lambda_raw(s, sq)) - om * om)
}

/// Precomputed normal-mode data for evaluating Q_s between two Gaussian states.
#[derive(Debug, Clone)]
pub struct GaussianOverlap {
    n: usize,
    nu0: Vec<f64>,
    nu1: Vec<f64>,
    s0: DMatrix<f64>,
    s1: DMatrix<f64>,
    delta: DVector<f64>,
    q_at_0: f64,
    q_at_1: f64,
}

impl GaussianOverlap {
    pub fn new(rho0: &GaussianState, rho1: &GaussianState) -> Result<Self> {
        if rho0.n_modes() != rho1.n_modes() {
            return Err(Error::DimensionMismatch {
                expected: rho0.n_modes(),
                found: rho1.n_modes(),
            });
        }
        let w0 = rho0.williamson()?;
        let w1 = rho1.williamson()?;
        let delta = rho0.displacement() - rho1.displacement();
        let q_at_0 = support_overlap(&w0.symplectic, &w0.pure_modes(), rho1.covariance(), &delta)?;
        let q_at_1 = support_overlap(&w1.symplectic, &w1.pure_modes(), rho0.covariance(), &delta)?;
        Ok(Self {
            n: rho0.n_modes(),
            nu0: w0.nu,
            nu1: w1.nu,
            s0: w0.symplectic,
            s1: w1.symplectic,
            delta,
            q_at_0,
            q_at_1,
        })
    }

    /// tr(rho0^s rho1^(1-s)).
    pub fn q_s(&self, s: f64) -> Result<f64> {
        check_s(s)?;
        if s == 0.0 {
            return Ok(self.q_at_0);
        }
        if s == 1.0 {
            return Ok(self.q_at_1);
        }
        let u = 1.0 - s;
        let mut pref = 2f64.powi(self.n as i32);
        let mut d0 = DVector::zeros(2 * self.n);
        let mut d1 = DVector::zeros(2 * self.n);
        for k in 0..self.n {
            pref *= g_raw(s, self.nu0[k]) * g_raw(u, self.nu1[k]);
            let (a, b) = (lambda_raw(s, self.nu0[k]), lambda_raw(u, self.nu1[k]));
            d0[2 * k] = a;
            d0[2 * k + 1] = a;
            d1[2 * k] = b;
            d1[2 * k + 1] = b;
        }
        let m = &self.s0 * DMatrix::from_diagonal(&d0) * self.s0.transpose()
            + &self.s1 * DMatrix::from_diagonal(&d1) * self.s1.transpose();
        let m = (&m + m.transpose()) * 0.5;
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::NonPhysical("overlap matrix is not positive definite".into()))?;
        let det: f64 = chol.l().diagonal().iter().map(|v| v * v).product();
        let quad = self.delta.dot(&chol.solve(&self.delta));
        let q = pref / det.sqrt() * (-0.5 * quad).exp();
        if !q.is_finite() {
            return Err(Error::NonFinite { s, value: q });
        }
        Ok(q)
    }
}

/// tr(P rho) where P projects onto the support of a state with normal-mode
/// matrix `s_a` and pure modes `pure`, and rho has covariance `sigma_b` and
/// displacement offset `delta`.
fn support_overlap(s_a: &DMatrix<f64>, pure: &[usize], sigma_b: &DMatrix<f64>, delta: &DVector<f64>) -> Result<f64> {
    if pure.is_empty() {
        return Ok(1.0);
    }
    let inv = s_a
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NonPhysical("singular symplectic matrix".into()))?;
    let w = &inv * sigma_b * inv.transpose();
    let dt = &inv * delta;
    let idx: Vec<usize> = pure.iter().flat_map(|&k| [2 * k, 2 * k + 1]).collect();
    let k = idx.len();
    let mut m = DMatrix::from_fn(k, k, |i, j| w[(idx[i], idx[j])]);
    for i in 0..k {
        m[(i, i)] += 1.0;
    }
    let m = (&m + m.transpose()) * 0.5;
    let dp = DVector::from_iterator(k, idx.iter().map(|&i| dt[i]));
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::NonPhysical("support overlap matrix is not positive definite".into()))?;
    let det: f64 = chol.l().diagonal().iter().map(|v| v * v).product();
    let quad = dp.dot(&chol.solve(&dp));
    Ok(2f64.powi(pure.len() as i32) / det.sqrt() * (-0.5 * quad).exp())
}

/// Q_s between two arbitrary Gaussian states.
pub fn q_s_general(s: f64, rho0: &GaussianState, rho1: &GaussianState) -> Result<f64> {
    GaussianOverlap::new(rho0, rho1)?.q_s(s)
}

fn golden_section<F: FnMut(f64) -> Result<f64>>(f: &mut F, mut lo: f64, mut hi: f64) -> Result<(f64, f64)> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while hi - lo > S_TOL {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2)?;
        }
    }
    let mid = 0.5 * (lo + hi);
    let fm = f(mid)?;
    Ok([(x1, f1), (x2, f2), (mid, fm)]
        .into_iter()
        .fold((mid, fm), |best, c| if c.1 < best.1 { c } else { best }))
}

/// Minimizes `q_fn` over [0, 1]: a 201-point grid followed by golden-section
/// refinement around the best grid point.
pub fn minimize_s<F: FnMut(f64) -> Result<f64>>(mut q_fn: F) -> Result<ChernoffResult> {
    let mut eval = |s: f64| -> Result<f64> {
        let q = q_fn(s)?;
        if !q.is_finite() {
            return Err(Error::NonFinite { s, value: q });
        }
        Ok(q)
    };
    let last = GRID_POINTS - 1;
    let mut samples = Vec::with_capacity(GRID_POINTS);
    for i in 0..GRID_POINTS {
        let s = if i == last { 1.0 } else { i as f64 / last as f64 };
        samples.push((s, eval(s)?));
    }
    let imin = (0..GRID_POINTS).fold(0, |b, i| if samples[i].1 < samples[b].1 { i } else { b });
    let lo = samples[imin.saturating_sub(1)].0;
    let hi = samples[(imin + 1).min(last)].0;
    let (mut s_opt, mut q) = golden_section(&mut eval, lo, hi)?;
    if samples[imin].1 <= q {
        (s_opt, q) = samples[imin];
    }
    Ok(ChernoffResult {
        s_opt,
        q,
        half_q: q / 2.0,
        at_boundary: !(BOUNDARY_TOL..=1.0 - BOUNDARY_TOL).contains(&s_opt),
        s_samples: samples,
    })
}

pub fn chernoff_coherent(params: &TargetParams, ns: f64) -> Result<ChernoffResult> {
    params.validate()?;
    check_ns(ns)?;
    minimize_s(|s| Ok(q_coherent_raw(s, params, ns)))
}

pub fn chernoff_tmsv(params: &TargetParams, ns: f64) -> Result<ChernoffResult> {
    params.validate()?;
    check_ns(ns)?;
    let m = TmsvMoments::new(params, ns);
    let nm = TmsvNormalModes::new(&m)?;
    minimize_s(|s| Ok(q_tmsv_raw(s, &m, &nm)))
}

/// Chernoff bound between two Gaussian states.
pub fn chernoff_gaussian(rho0: &GaussianState, rho1: &GaussianState) -> Result<ChernoffResult> {
    let ov = GaussianOverlap::new(rho0, rho1)?;
    minimize_s(|s| ov.q_s(s))
}

/// Chernoff bound for a Gaussian probe family, using the closed forms.
pub fn chernoff_bound(params: &TargetParams, probe: &Probe) -> Result<ChernoffResult> {
    match probe {
        Probe::Coherent { ns } => chernoff_coherent(params, *ns),
        Probe::Tmsv { ns } => chernoff_tmsv(params, *ns),
        _ => Err(Error::InvalidModes(
            "Fock-coefficient probes are not Gaussian; use the Fock oracle".into(),
        )),
    }
}

/// Error bound after `m` copies, q^m / 2.
pub fn m_copy_error_bound(q: f64, m: u32) -> Result<f64> {
    check_param("q", q, q > 0.0 && q <= 1.0, "must lie in (0, 1]")?;
    if m == 0 {
        return Err(Error::InvalidParameter {
            name: "m",
            value: 0.0,
            reason: "at least one copy is required",
        });
    }
    Ok(0.5 * q.powi(m as i32))
}

/// Delta_M = Q_CS^M - Q_TMSV^M at equal signal strength.
pub fn quantum_advantage(params: &TargetParams, ns: f64, m: u32) -> Result<AdvantageResult> {
    if m == 0 {
        return Err(Error::InvalidParameter {
            name: "m",
            value: 0.0,
            reason: "at least one copy is required",
        });
    }
    let q_cs = chernoff_coherent(params, ns)?.q;
    let q_tmsv = chernoff_tmsv(params, ns)?.q;
    Ok(AdvantageResult {
        delta_m: q_cs.powi(m as i32) - q_tmsv.powi(m as i32),
        m,
        q_cs,
        q_tmsv,
    })
}

fn check_nbar_positive(params: &TargetParams) -> Result<()> {
    params.validate()?;
    check_param(
        "nbar",
        params.nbar,
        params.nbar > 0.0,
        "must be positive for this limit",
    )
}

/// Low-loss, bright-background approximation of the coherent bound.
pub fn limit_low_loss_cs(params: &TargetParams, ns: f64) -> Result<f64> {
    check_nbar_positive(params)?;
    check_ns(ns)?;
    let den = 2.0 * params.nbar * (2.0 - params.r - params.kappa);
    check_param("r", params.r, den > 0.0, "r + kappa must be below 2")?;
    Ok((-params.kappa * ns / den).exp())
}

/// Low-loss, weak-signal approximation of the TMSV bound.
pub fn limit_low_loss_tmsv(params: &TargetParams, ns: f64) -> Result<f64> {
    check_nbar_positive(params)?;
    check_ns(ns)?;
    let den = params.nbar * (1.0 - params.r - params.kappa);
    check_param("r", params.r, den > 0.0, "r + kappa must be below 1")?;
    Ok((-params.kappa * ns / den).exp())
}

/// Bound at complete absorption, 1 / (1 + nbar).
pub fn limit_full_absorption(nbar: f64) -> Result<f64> {
    check_param("nbar", nbar, nbar >= 0.0, "must be non-negative")?;
    Ok(1.0 / (1.0 + nbar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::target::{rho_pair_coherent_closed, rho_pair_tmsv_closed};
    use approx::assert_abs_diff_eq;

    fn params(r: f64, kappa: f64, nbar: f64) -> TargetParams {
        TargetParams::new(r, kappa, nbar).unwrap()
    }

    #[test]
    fn g_and_lambda_values() {
        assert_eq!(g_func(0.7, 1.0).unwrap(), 1.0);
        assert_abs_diff_eq!(g_func(0.5, 3.0).unwrap(), 1.0 + 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(g_func(1.0, 5.0).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(lambda_func(0.3, 1.0).unwrap(), 1.0);
        assert_abs_diff_eq!(lambda_func(0.5, 3.0).unwrap(), 3.0 + 2.0 * 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(lambda_func(1.0, 7.5).unwrap(), 7.5, epsilon = 1e-12);
        assert!(g_func(0.0, 2.0).is_err());
        assert!(lambda_func(0.5, 0.5).is_err());
    }

    #[test]
    fn coherent_closed_form_matches_general() {
        for &(r, k, n, ns) in &[(0.2, 0.01, 2.0, 0.5), (0.0, 0.3, 0.4, 2.0), (0.7, 0.05, 10.0, 0.1)] {
            let p = params(r, k, n);
            let pair = rho_pair_coherent_closed(&p, ns).unwrap();
            let ov = GaussianOverlap::new(&pair.rho0, &pair.rho1).unwrap();
            for &s in &[0.0, 1e-4, 0.1, 0.5, 0.83, 1.0 - 1e-4, 1.0] {
                assert_abs_diff_eq!(q_s_coherent(s, &p, ns).unwrap(), ov.q_s(s).unwrap(), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn tmsv_closed_form_matches_general() {
        for &(r, k, n, ns) in &[(0.2, 0.01, 2.0, 0.5), (0.0, 0.3, 0.4, 2.0), (0.9, 0.05, 1.0, 1.0)] {
            let p = params(r, k, n);
            let pair = rho_pair_tmsv_closed(&p, ns).unwrap();
            let ov = GaussianOverlap::new(&pair.rho0, &pair.rho1).unwrap();
            for &s in &[0.0, 1e-4, 0.1, 0.5, 0.83, 1.0 - 1e-4, 1.0] {
                assert_abs_diff_eq!(q_s_tmsv(s, &p, ns).unwrap(), ov.q_s(s).unwrap(), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn pure_endpoints_agree() {
        // dark background: every mode of rho0 pure except possibly the idler
        for &(r, k, n, ns) in &[
            (0.5, 0.2, 0.0, 0.6),
            (1.0, 0.2, 0.0, 0.6),
            (0.3, 0.2, 1.0, 0.0),
            (0.3, 0.2, 0.0, 0.0),
        ] {
            let p = params(r, k, n);
            let pair = rho_pair_tmsv_closed(&p, ns).unwrap();
            let ov = GaussianOverlap::new(&pair.rho0, &pair.rho1).unwrap();
            for &s in &[0.0, 0.4, 1.0] {
                assert_abs_diff_eq!(q_s_tmsv(s, &p, ns).unwrap(), ov.q_s(s).unwrap(), epsilon = 1e-10);
            }
            let pair = rho_pair_coherent_closed(&p, ns).unwrap();
            let ov = GaussianOverlap::new(&pair.rho0, &pair.rho1).unwrap();
            for &s in &[0.0, 0.4, 1.0] {
                assert_abs_diff_eq!(q_s_coherent(s, &p, ns).unwrap(), ov.q_s(s).unwrap(), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn identical_states_give_one() {
        let p = params(0.0, 0.0, 1.3);
        for &s in &[0.0, 0.5, 1.0] {
            assert_abs_diff_eq!(q_s_coherent(s, &p, 0.7).unwrap(), 1.0, epsilon = 1e-14);
        }
        let r = chernoff_tmsv(&p, 0.7).unwrap();
        assert_abs_diff_eq!(r.q, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn full_absorption() {
        for &n in &[0.5, 2.0, 200.0] {
            let p = params(1.0, 0.01, n);
            for res in [chernoff_coherent(&p, 0.5).unwrap(), chernoff_tmsv(&p, 0.5).unwrap()] {
                assert_abs_diff_eq!(res.q, limit_full_absorption(n).unwrap(), epsilon = 1e-12);
                assert_eq!(res.s_opt, 1.0);
                assert!(res.at_boundary);
            }
            assert_eq!(quantum_advantage(&p, 0.5, 10).unwrap().delta_m, 0.0);
        }
    }

    #[test]
    fn s_opt_grows_with_absorption() {
        let mut prev = 0.0;
        for i in 0..10 {
            let res = chernoff_coherent(&params(i as f64 / 10.0, 0.01, 2.0), 0.5).unwrap();
            assert!(res.s_opt > prev);
            prev = res.s_opt;
        }
    }

    #[test]
    fn m_copy() {
        assert_eq!(m_copy_error_bound(1.0, 7).unwrap(), 0.5);
        assert_abs_diff_eq!(
            m_copy_error_bound(0.9, 10).unwrap(),
            0.5 * 0.9f64.powi(10),
            epsilon = 1e-15
        );
        assert_eq!(m_copy_error_bound(0.4, 1).unwrap(), 0.2);
        assert!(m_copy_error_bound(0.4, 0).is_err());
        assert!(m_copy_error_bound(1.5, 2).is_err());
    }

    #[test]
    fn limiting_formulas() {
        let p = params(0.001, 0.01, 5.0);
        assert_abs_diff_eq!(
            limit_low_loss_cs(&p, 1.0).unwrap(),
            (-0.01f64 / (10.0 * 1.989)).exp(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(limit_low_loss_cs(&p, 1.0).unwrap(), 0.9994974, epsilon = 1e-7);
        assert_abs_diff_eq!(
            limit_low_loss_tmsv(&p, 1.0).unwrap(),
            (-0.01f64 / (5.0 * 0.989)).exp(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(limit_low_loss_tmsv(&p, 1.0).unwrap(), 0.9979798, epsilon = 1e-7);
        assert_eq!(limit_full_absorption(0.0).unwrap(), 1.0);
        assert_abs_diff_eq!(limit_full_absorption(2.0).unwrap(), 1.0 / 3.0);
        assert!(limit_low_loss_tmsv(&params(0.5, 0.5, 5.0), 1.0).is_err());
        assert!(limit_low_loss_cs(&params(0.1, 0.1, 0.0), 1.0).is_err());
    }

    #[test]
    fn advantage_positive_when_lossless() {
        let adv = quantum_advantage(&params(0.0, 0.01, 50.0), 0.05, 1).unwrap();
        assert!(adv.delta_m > 0.0);
        assert!(adv.q_tmsv < adv.q_cs);
    }

    #[test]
    fn minimizer_rejects_nan() {
        assert!(matches!(
            minimize_s(|s| Ok(if s > 0.5 { f64::NAN } else { 1.0 })),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn minimizer_finds_interior_minimum() {
        let res = minimize_s(|s| Ok((s - 0.3141592).powi(2) + 0.2)).unwrap();
        assert!((res.s_opt - 0.3141592).abs() < 1e-8);
        assert!(!res.at_boundary);
        assert_eq!(res.s_samples.len(), GRID_POINTS);
        assert_eq!(res.half_q, res.q / 2.0);
    }
}
