//! Perturbative Chernoff bound for weak reflection and weak absorption, and
//! the probe photon statistics that maximize it.
//!
//! To leading order the hypotheses differ by rho1 - rho0 = sqrt(kappa) d_a + r d_b,
//! where d_a comes from reflecting the probe into the return mode and d_b
//! from absorbing part of the background. The bound is then
//!
//! Q = 1 - 1/2 sum_jk |<j|rho1 - rho0|k>|^2 / (sqrt(chi_j) + sqrt(chi_k))^2
//!
//! with chi the eigenvalues of rho0. The first-order absorption term and the
//! mixed term are computed as well and checked to vanish.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check_param, Error, Result};
use crate::target::{check_normalized, TargetParams};

/// Thermal levels are kept until lambda_m (m+1)^2 drops below this.
pub const SERIES_EPS: f64 = 1e-16;
/// Largest accepted contribution of the last retained thermal level.
pub const TAIL_TOL: f64 = 1e-12;
/// Terms that must vanish identically are checked against this.
pub const VANISH_TOL: f64 = 1e-14;

/// Thermal populations lambda_m = n^m / (1+n)^(m+1), truncated for series use.
pub fn thermal_series(nbar: f64) -> Result<Vec<f64>> {
    check_param("nbar", nbar, nbar >= 0.0, "must be non-negative")?;
    let ratio = nbar / (1.0 + nbar);
    let mut lam = vec![1.0 / (1.0 + nbar)];
    if ratio == 0.0 {
        return Ok(lam);
    }
    loop {
        let m = lam.len();
        let next = lam[m - 1] * ratio;
        if next * ((m + 1) as f64).powi(2) < SERIES_EPS {
            break;
        }
        if m > 100_000 {
            return Err(Error::NoConvergence(format!(
                "thermal series for nbar = {nbar} does not truncate"
            )));
        }
        lam.push(next);
    }
    Ok(lam)
}

/// zeta = sum_n C_n C_{n+1} sqrt(n+1).
pub fn zeta(coeffs: &[f64]) -> Result<f64> {
    check_normalized(coeffs)?;
    Ok(coeffs
        .windows(2)
        .enumerate()
        .map(|(n, w)| w[0] * w[1] * ((n + 1) as f64).sqrt())
        .sum())
}

// Sparse operator on a few truncated modes; the joint index is row-major.
#[derive(Debug, Clone)]
struct SparseOp {
    dims: Vec<usize>,
    map: HashMap<(usize, usize), f64>,
}

#[derive(Clone, Copy)]
enum Side {
    // left multiplication
    Ket,
    // right multiplication
    Bra,
}

impl SparseOp {
    fn new(dims: Vec<usize>) -> Self {
        Self {
            dims,
            map: HashMap::new(),
        }
    }

    fn stride(&self, mode: usize) -> usize {
        self.dims[mode + 1..].iter().product()
    }

    fn occupation(&self, idx: usize, mode: usize) -> usize {
        (idx / self.stride(mode)) % self.dims[mode]
    }

    fn add_entry(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            *self.map.entry((i, j)).or_insert(0.0) += v;
        }
    }

    fn scaled_add(&mut self, other: &SparseOp, scale: f64) {
        for (&(i, j), &v) in &other.map {
            self.add_entry(i, j, scale * v);
        }
    }

    /// Multiplies by a (raise = false) or a^dag (raise = true) of `mode` on
    /// the given side. Entries pushed past a cutoff are dropped.
    fn ladder(&self, mode: usize, raise: bool, side: Side) -> SparseOp {
        let st = self.stride(mode);
        let d = self.dims[mode];
        let mut out = SparseOp::new(self.dims.clone());
        for (&(i, j), &v) in &self.map {
            let idx = match side {
                Side::Ket => i,
                Side::Bra => j,
            };
            let k = self.occupation(idx, mode);
            // X a^dag lowers the bra index, X a raises it
            let up = match side {
                Side::Ket => raise,
                Side::Bra => !raise,
            };
            let (nk, c) = if up {
                if k + 1 >= d {
                    continue;
                }
                (k + 1, ((k + 1) as f64).sqrt())
            } else {
                if k == 0 {
                    continue;
                }
                (k - 1, (k as f64).sqrt())
            };
            let nidx = idx - k * st + nk * st;
            match side {
                Side::Ket => out.add_entry(nidx, j, c * v),
                Side::Bra => out.add_entry(i, nidx, c * v),
            }
        }
        out
    }

    /// Multiplies by the beam-splitter generator a^dag b - a b^dag on (ma, mb).
    fn generator(&self, ma: usize, mb: usize, side: Side) -> SparseOp {
        let (first, second) = match side {
            // G X: apply the rightmost factor first
            Side::Ket => (
                self.ladder(mb, false, side).ladder(ma, true, side),
                self.ladder(mb, true, side).ladder(ma, false, side),
            ),
            // X G = X a^dag b - X a b^dag
            Side::Bra => (
                self.ladder(ma, true, side).ladder(mb, false, side),
                self.ladder(ma, false, side).ladder(mb, true, side),
            ),
        };
        let mut out = first;
        out.scaled_add(&second, -1.0);
        out
    }

    fn commutator_with_generator(&self, ma: usize, mb: usize) -> SparseOp {
        let mut out = self.generator(ma, mb, Side::Ket);
        out.scaled_add(&self.generator(ma, mb, Side::Bra), -1.0);
        out
    }

    fn trace_mode(&self, mode: usize) -> SparseOp {
        let st = self.stride(mode);
        let mut dims = self.dims.clone();
        dims.remove(mode);
        let d = self.dims[mode];
        let mut out = SparseOp::new(dims);
        for (&(i, j), &v) in &self.map {
            let (ki, kj) = ((i / st) % d, (j / st) % d);
            if ki == kj {
                let strip = |x: usize| (x / (st * d)) * st + x % st;
                out.add_entry(strip(i), strip(j), v);
            }
        }
        out
    }

    fn kron(&self, other: &SparseOp) -> SparseOp {
        let od: usize = other.dims.iter().product();
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        let mut out = SparseOp::new(dims);
        for (&(i, j), &v) in &self.map {
            for (&(k, l), &w) in &other.map {
                out.add_entry(i * od + k, j * od + l, v * w);
            }
        }
        out
    }

    /// Entries in index order, so sums are reproducible bit for bit.
    fn sorted(&self) -> Vec<((usize, usize), f64)> {
        let mut e: Vec<_> = self.map.iter().map(|(&k, &v)| (k, v)).collect();
        e.sort_unstable_by_key(|&(k, _)| k);
        e
    }

    fn max_abs(&self) -> f64 {
        self.map.values().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// First- and second-order terms in theta of the pure-loss channel on mode 0,
/// X -> Tr_e[U (X (x) |0><0|) U^dag] with U = exp(theta (a^dag e - a e^dag)).
fn loss_expansion(x: &SparseOp) -> (SparseOp, SparseOp) {
    let mut dims = x.dims.clone();
    dims.push(3);
    let n = x.dims.len();
    let mut y = SparseOp::new(dims);
    for (&(i, j), &v) in &x.map {
        y.add_entry(3 * i, 3 * j, v);
    }
    let first = y.commutator_with_generator(0, n).trace_mode(n);
    let second = y.commutator_with_generator(0, n).commutator_with_generator(0, n);
    let mut half = SparseOp::new(second.dims.clone());
    half.scaled_add(&second, 0.5);
    (first, half.trace_mode(n))
}

/// First-order term of reflecting `probe` (mode 0 = signal) into the return
/// mode carrying `background`: Tr_signal[G, background (x) probe].
fn reflection_term(background: &SparseOp, probe: &SparseOp) -> SparseOp {
    let joint = background.kron(probe);
    joint.commutator_with_generator(0, 1).trace_mode(1)
}

fn diag_op(values: &[f64]) -> SparseOp {
    let mut op = SparseOp::new(vec![values.len() + 2]);
    for (m, &v) in values.iter().enumerate() {
        op.add_entry(m, m, v);
    }
    op
}

/// Terms of the perturbative bound.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbativeBound {
    /// Subtracted quantity Xi.
    pub xi: f64,
    /// 1 - Xi.
    pub q_perturbative: f64,
    /// Order-kappa part of Xi.
    pub term_reflect: f64,
    /// Order-r^2 part of Xi.
    pub term_absorb: f64,
    /// Contribution of the last retained thermal level.
    pub series_tail: f64,
    /// Largest entry among the terms that vanish (first-order absorption,
    /// mixed absorption-reflection, and the reflect-absorb cross term).
    pub vanishing: f64,
    /// Perturbation strength; Xi scales as epsilon^2.
    pub epsilon: f64,
}

impl PerturbativeBound {
    /// The same bound at perturbation strength `epsilon`.
    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        let k = (epsilon / self.epsilon).powi(2);
        let (tr, ta) = (self.term_reflect * k, self.term_absorb * k);
        Self {
            xi: tr + ta,
            q_perturbative: 1.0 - tr - ta,
            term_reflect: tr,
            term_absorb: ta,
            series_tail: self.series_tail * k,
            vanishing: self.vanishing,
            epsilon,
        }
    }
}

// Xi contribution of a perturbation given in the eigenbasis of rho0.
fn xi_sum(delta: &SparseOp, chi: &[f64]) -> f64 {
    let mut total = 0.0;
    for ((j, k), v) in delta.sorted() {
        if chi[j] + chi[k] > 0.0 {
            let den = chi[j].sqrt() + chi[k].sqrt();
            total += 0.5 * v * v / (den * den);
        }
    }
    total
}

fn assemble(
    params: &TargetParams,
    d_a: &SparseOp,
    d_b: &SparseOp,
    chi: &[f64],
    tail_of: impl Fn(usize) -> bool,
    vanish: f64,
) -> Result<PerturbativeBound> {
    let reflect = xi_sum(d_a, chi);
    let absorb = xi_sum(d_b, chi);
    let (kappa, r) = (params.kappa, params.r);
    let term_reflect = kappa * reflect;
    let term_absorb = r * r * absorb;
    let mut cross = 0.0_f64;
    let mut tail = 0.0_f64;
    for (&(j, k), &va) in &d_a.map {
        if let Some(&vb) = d_b.map.get(&(j, k)) {
            cross = cross.max((va * vb).abs());
        }
    }
    for (delta, scale) in [(d_a, kappa), (d_b, r * r)] {
        for ((j, k), v) in delta.sorted() {
            if (tail_of(j) || tail_of(k)) && chi[j] + chi[k] > 0.0 {
                let den = chi[j].sqrt() + chi[k].sqrt();
                tail += scale * 0.5 * v * v / (den * den);
            }
        }
    }
    let vanishing = vanish.max(cross);
    if vanishing > VANISH_TOL {
        return Err(Error::NoConvergence(format!(
            "terms expected to vanish reach {vanishing:e}"
        )));
    }
    if tail > TAIL_TOL {
        return Err(Error::NoConvergence(format!("thermal series tail {tail:e} too large")));
    }
    Ok(PerturbativeBound {
        xi: term_reflect + term_absorb,
        q_perturbative: 1.0 - term_reflect - term_absorb,
        term_reflect,
        term_absorb,
        series_tail: tail,
        vanishing,
        epsilon: 1.0,
    })
}

/// Perturbative bound for a single-mode probe sum_n C_n |n>.
pub fn xi_single(coeffs: &[f64], params: &TargetParams) -> Result<PerturbativeBound> {
    check_normalized(coeffs)?;
    params.validate()?;
    let lam = thermal_series(params.nbar)?;
    let dt = lam.len();
    let rho_t = diag_op(&lam);
    let mut rho_s = SparseOp::new(vec![coeffs.len() + 2]);
    for (i, &a) in coeffs.iter().enumerate() {
        for (j, &b) in coeffs.iter().enumerate() {
            rho_s.add_entry(i, j, a * b);
        }
    }
    let d_a = reflection_term(&rho_t, &rho_s);
    let (d_b1, d_b) = loss_expansion(&rho_t);
    let (sig1, _) = loss_expansion(&rho_s);
    let mut d_c = reflection_term(&d_b1, &rho_s);
    d_c.scaled_add(&reflection_term(&rho_t, &sig1), 1.0);
    let vanish = d_b1.max_abs().max(d_c.max_abs());
    let mut chi = lam.clone();
    chi.resize(dt + 2, 0.0);
    assemble(params, &d_a, &d_b, &chi, |j| j == dt - 1, vanish)
}

/// Perturbative bound for a signal-idler probe sum_n C_n |n, n>.
///
/// rho0 = thermal (x) diag(C_n^2) has eigenvalues chi_(m,n) = lambda_m C_n^2.
pub fn xi_two(coeffs: &[f64], params: &TargetParams) -> Result<PerturbativeBound> {
    check_normalized(coeffs)?;
    params.validate()?;
    check_param(
        "nbar",
        params.nbar,
        params.nbar > 0.0,
        "must be positive for a two-mode probe",
    )?;
    let lam = thermal_series(params.nbar)?;
    let di = coeffs.len();
    let dt = lam.len() + 2;
    let rho_t = diag_op(&lam);
    let mut probe = SparseOp::new(vec![di + 2, di]);
    for (i, &a) in coeffs.iter().enumerate() {
        for (j, &b) in coeffs.iter().enumerate() {
            probe.add_entry(i * di + i, j * di + j, a * b);
        }
    }
    let idler = probe.trace_mode(0);
    let mut chi_i = vec![0.0; di];
    for (&(i, j), &v) in &idler.map {
        if i != j && v.abs() > VANISH_TOL {
            return Err(Error::InvalidModes("idler marginal is not diagonal".into()));
        }
        if i == j {
            chi_i[i] = v;
        }
    }
    let d_a = reflection_term(&rho_t, &probe);
    let (d_b1_t, d_b_t) = loss_expansion(&rho_t);
    let d_b = d_b_t.kron(&idler);
    let d_b1 = d_b1_t.kron(&idler);
    let (sig1, _) = loss_expansion(&probe);
    let mut d_c = reflection_term(&d_b1_t, &probe);
    d_c.scaled_add(&reflection_term(&rho_t, &sig1), 1.0);
    let vanish = d_b1.max_abs().max(d_c.max_abs());
    let mut chi = vec![0.0; dt * di];
    for (m, &l) in lam.iter().enumerate() {
        for n in 0..di {
            chi[m * di + n] = l * chi_i[n];
        }
    }
    let last = lam.len() - 1;
    assemble(params, &d_a, &d_b, &chi, |j| j / di == last, vanish)
}

/// Closed-form reflection term for a single-mode probe:
/// kappa zeta^2 sum_m (m+1) (lambda_m - lambda_{m+1})^2 / (sqrt(lambda_m) + sqrt(lambda_{m+1}))^2.
pub fn term_reflect_single_closed(zeta: f64, params: &TargetParams) -> Result<f64> {
    let lam = thermal_series(params.nbar)?;
    let mut sum = 0.0;
    for m in 0..lam.len() {
        let next = lam.get(m + 1).copied().unwrap_or(0.0);
        sum += (m + 1) as f64 * (lam[m] - next).powi(2) / (lam[m].sqrt() + next.sqrt()).powi(2);
    }
    Ok(params.kappa * zeta * zeta * sum)
}

/// Closed-form absorption term r^2/8 sum_m X_m^2 / lambda_m, X_m = (m+1) lambda_{m+1} - m lambda_m.
pub fn term_absorb_closed(params: &TargetParams) -> Result<f64> {
    let lam = thermal_series(params.nbar)?;
    let mut sum = 0.0;
    for m in 0..lam.len() {
        let next = lam.get(m + 1).copied().unwrap_or(0.0);
        let x = (m + 1) as f64 * next - m as f64 * lam[m];
        sum += x * x / lam[m];
    }
    Ok(params.r * params.r / 8.0 * sum)
}

/// M(x, y) = 4xy / (sqrt(x) + sqrt(y))^2, zero when x + y = 0.
pub fn harmonic_m(x: f64, y: f64) -> f64 {
    if x + y == 0.0 {
        0.0
    } else {
        4.0 * x * y / (x.sqrt() + y.sqrt()).powi(2)
    }
}

/// sum_n (n+1) M(p_n, q p_{n+1}) with q = nbar/(1+nbar), over populations p_n = C_n^2.
pub fn two_mode_objective(coeffs: &[f64], nbar: f64) -> f64 {
    let q = nbar / (1.0 + nbar);
    coeffs
        .windows(2)
        .enumerate()
        .map(|(n, w)| (n + 1) as f64 * harmonic_m(w[0] * w[0], q * w[1] * w[1]))
        .sum()
}

/// Closed-form reflection term for a signal-idler probe: kappa/(4 nbar) times the two-mode objective.
pub fn term_reflect_two_closed(coeffs: &[f64], params: &TargetParams) -> Result<f64> {
    check_param(
        "nbar",
        params.nbar,
        params.nbar > 0.0,
        "must be positive for a two-mode probe",
    )?;
    Ok(params.kappa / (4.0 * params.nbar) * two_mode_objective(coeffs, params.nbar))
}

/// Poisson amplitudes of a coherent state, truncated and renormalized.
pub fn poisson_amplitudes(ns: f64, cutoff: usize) -> Vec<f64> {
    let mut c = Vec::with_capacity(cutoff);
    let mut v = (-0.5 * ns).exp();
    for k in 0..cutoff {
        c.push(v);
        v *= (ns / (k + 1) as f64).sqrt();
    }
    normalize(c)
}

/// Schmidt coefficients sqrt(ns^n / (1+ns)^(n+1)), truncated and renormalized.
pub fn geometric_amplitudes(ns: f64, cutoff: usize) -> Vec<f64> {
    let ratio = (ns / (1.0 + ns)).sqrt();
    let mut c = Vec::with_capacity(cutoff);
    let mut v = 1.0 / (1.0 + ns).sqrt();
    for _ in 0..cutoff {
        c.push(v);
        v *= ratio;
    }
    normalize(c)
}

fn normalize(mut c: Vec<f64>) -> Vec<f64> {
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    c.iter_mut().for_each(|v| *v /= norm);
    c
}

/// Objective on photon-number populations p_n, as a sum of nearest-neighbour
/// terms w_n h(p_n, p_{n+1}).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProbeObjective {
    /// zeta = sum sqrt((n+1) p_n p_{n+1}).
    Single,
    /// sum (n+1) M(p_n, q p_{n+1}).
    Two { q: f64 },
}

// value, first and second partial derivatives of one neighbour term
struct PairTerm {
    f: f64,
    fx: f64,
    fy: f64,
    fxx: f64,
    fxy: f64,
    fyy: f64,
}

impl ProbeObjective {
    fn pair(&self, n: usize, x: f64, y: f64) -> PairTerm {
        let c = (n + 1) as f64;
        match *self {
            ProbeObjective::Single => {
                let sc = c.sqrt();
                let (sx, sy) = (x.sqrt(), y.sqrt());
                PairTerm {
                    f: sc * sx * sy,
                    fx: 0.5 * sc * sy / sx,
                    fy: 0.5 * sc * sx / sy,
                    fxx: -0.25 * sc * sy / (x * sx),
                    fxy: 0.25 * sc / (sx * sy),
                    fyy: -0.25 * sc * sx / (y * sy),
                }
            }
            ProbeObjective::Two { q } => {
                let (t, w) = (x.sqrt(), (q * y).sqrt());
                let s = t + w;
                let (s3, s4) = (s.powi(3), s.powi(4));
                PairTerm {
                    f: c * 4.0 * t * t * w * w / (s * s),
                    fx: c * 4.0 * w.powi(3) / s3,
                    fy: c * q * 4.0 * t.powi(3) / s3,
                    fxx: -c * 6.0 * w.powi(3) / (t * s4),
                    fxy: c * q * 6.0 * t * w / s4,
                    fyy: -c * q * q * 6.0 * t.powi(3) / (w * s4),
                }
            }
        }
    }

    pub fn value(&self, p: &[f64]) -> f64 {
        (0..p.len() - 1).map(|n| self.pair(n, p[n], p[n + 1]).f).sum()
    }

    fn gradient_hessian(&self, p: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let d = p.len();
        let mut g = DVector::zeros(d);
        let mut h = DMatrix::zeros(d, d);
        for n in 0..d - 1 {
            let t = self.pair(n, p[n], p[n + 1]);
            g[n] += t.fx;
            g[n + 1] += t.fy;
            h[(n, n)] += t.fxx;
            h[(n + 1, n + 1)] += t.fyy;
            h[(n, n + 1)] += t.fxy;
            h[(n + 1, n)] += t.fxy;
        }
        (g, h)
    }
}

/// Optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerOptions {
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Convergence threshold on the KKT residual.
    pub tol: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            restarts: 20,
            seed: 0x5eed,
            max_iter: 500,
            tol: 1e-12,
        }
    }
}

/// Maximizer of a probe objective under normalization and fixed mean photon number.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalProbe {
    /// Amplitudes C_n = sqrt(p_n).
    pub coeffs: Vec<f64>,
    /// Lagrange multipliers (mu1, mu2) of the amplitude-form stationarity
    /// condition dF/dC_n + 2 C_n (mu1 + n mu2) = 0.
    pub multipliers: (f64, f64),
    pub objective: f64,
    /// max_n |dF/dC_n + 2 C_n (mu1 + n mu2)|.
    pub residual: f64,
    pub converged_restarts: usize,
}

struct NewtonOutcome {
    p: Vec<f64>,
    nu: (f64, f64),
}

fn kkt_residual(obj: &ProbeObjective, y: &[f64], nu: (f64, f64), ns: f64) -> (DVector<f64>, Vec<f64>) {
    let d = y.len();
    let p: Vec<f64> = y.iter().map(|v| v.exp()).collect();
    let (g, _) = obj.gradient_hessian(&p);
    let mut r = DVector::zeros(d + 2);
    for n in 0..d {
        r[n] = g[n] - nu.0 - nu.1 * n as f64;
    }
    r[d] = p.iter().sum::<f64>() - 1.0;
    r[d + 1] = p.iter().enumerate().map(|(n, v)| n as f64 * v).sum::<f64>() - ns;
    (r, p)
}

// Damped Newton on the KKT system in log-population coordinates.
fn newton_kkt(obj: &ProbeObjective, ns: f64, p0: &[f64], opts: &OptimizerOptions) -> Option<NewtonOutcome> {
    let d = p0.len();
    let mut y: Vec<f64> = p0.iter().map(|v| v.ln()).collect();
    // least-squares multipliers for the starting point, weighted by p
    let (g, _) = obj.gradient_hessian(p0);
    let a = DMatrix::from_fn(d, 2, |n, k| p0[n].sqrt() * if k == 0 { 1.0 } else { n as f64 });
    let b = DVector::from_fn(d, |n, _| p0[n].sqrt() * g[n]);
    let sol = (a.transpose() * &a).lu().solve(&(a.transpose() * b))?;
    let mut nu = (sol[0], sol[1]);
    let (mut r, mut p) = kkt_residual(obj, &y, nu, ns);
    for _ in 0..opts.max_iter {
        let norm = r.norm();
        if !norm.is_finite() {
            return None;
        }
        if r.amax() < opts.tol {
            return Some(NewtonOutcome { p, nu });
        }
        let (_, h) = obj.gradient_hessian(&p);
        let mut j = DMatrix::zeros(d + 2, d + 2);
        for n in 0..d {
            for m in n.saturating_sub(1)..(n + 2).min(d) {
                j[(n, m)] = h[(n, m)] * p[m];
            }
            j[(n, d)] = -1.0;
            j[(n, d + 1)] = -(n as f64);
            j[(d, n)] = p[n];
            j[(d + 1, n)] = n as f64 * p[n];
        }
        let step = j.lu().solve(&(-&r))?;
        let big = (0..d).fold(0.0_f64, |m, n| m.max(step[n].abs()));
        let mut alpha = if big > 2.0 { 2.0 / big } else { 1.0 };
        loop {
            let yt: Vec<f64> = (0..d).map(|n| y[n] + alpha * step[n]).collect();
            let nut = (nu.0 + alpha * step[d], nu.1 + alpha * step[d + 1]);
            let (rt, pt) = kkt_residual(obj, &yt, nut, ns);
            if rt.norm() < (1.0 - 1e-4 * alpha) * norm {
                y = yt;
                nu = nut;
                r = rt;
                p = pt;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-12 {
                return None;
            }
        }
    }
    None
}

/// Distribution proportional to w_n e^{-beta n} with mean `ns`.
fn tilt_to_energy(w: &[f64], ns: f64) -> Option<Vec<f64>> {
    let tilted = |beta: f64| {
        // shift the exponent so the largest factor is 1
        let top = (0..w.len())
            .filter(|&n| w[n] > 0.0)
            .map(|n| -beta * n as f64)
            .fold(f64::MIN, f64::max);
        let p: Vec<f64> = w
            .iter()
            .enumerate()
            .map(|(n, v)| v * (-beta * n as f64 - top).exp())
            .collect();
        let z: f64 = p.iter().sum();
        p.into_iter().map(|v| v / z).collect::<Vec<f64>>()
    };
    let mean = |p: &[f64]| p.iter().enumerate().map(|(n, v)| n as f64 * v).sum::<f64>();
    let (mut lo, mut hi) = (-50.0, 50.0);
    if !(mean(&tilted(hi)) < ns && mean(&tilted(lo)) > ns) {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean(&tilted(mid)) > ns {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(tilted(0.5 * (lo + hi)))
}

fn start_weights(ns: f64, cutoff: usize, rng: Option<&mut ChaCha8Rng>) -> Vec<f64> {
    let flat = (4.0 * ns).ceil() as usize + 4;
    let mut w: Vec<f64> = (0..cutoff)
        .map(|n| {
            if n < flat {
                1.0
            } else {
                (-((n + 1 - flat) as f64)).exp()
            }
        })
        .collect();
    if let Some(rng) = rng {
        for v in w.iter_mut() {
            *v *= rng.random_range(0.3..3.0);
        }
    }
    w
}

/// Maximizes `obj` over populations with sum p = 1 and sum n p = ns.
pub fn optimize_probe(obj: ProbeObjective, ns: f64, cutoff: usize, opts: &OptimizerOptions) -> Result<OptimalProbe> {
    check_param("ns", ns, ns > 0.0, "must be positive")?;
    if cutoff < 3 || (cutoff - 1) as f64 <= ns {
        return Err(Error::InvalidParameter {
            name: "cutoff",
            value: cutoff as f64,
            reason: "too small for the requested mean photon number",
        });
    }
    let runs: Vec<Option<NewtonOutcome>> = (0..opts.restarts.max(1))
        .into_par_iter()
        .map(|k| {
            let w = if k == 0 {
                start_weights(ns, cutoff, None)
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(k as u64));
                start_weights(ns, cutoff, Some(&mut rng))
            };
            let p0 = tilt_to_energy(&w, ns)?;
            newton_kkt(&obj, ns, &p0, opts)
        })
        .collect();
    let converged = runs.iter().filter(|r| r.is_some()).count();
    let best =
        runs.into_iter()
            .flatten()
            .map(|o| (obj.value(&o.p), o))
            .fold(None::<(f64, NewtonOutcome)>, |best, cur| match best {
                Some(b) if b.0 >= cur.0 => Some(b),
                _ => Some(cur),
            });
    let (objective, out) =
        best.ok_or_else(|| Error::NoConvergence(format!("no restart converged (ns = {ns}, cutoff = {cutoff})")))?;
    let coeffs: Vec<f64> = out.p.iter().map(|v| v.sqrt()).collect();
    // amplitude form uses the opposite sign convention for the multipliers
    let multipliers = (-out.nu.0, -out.nu.1);
    let residual = amplitude_residual(obj, &coeffs, multipliers);
    Ok(OptimalProbe {
        coeffs,
        multipliers,
        objective,
        residual,
        converged_restarts: converged,
    })
}

/// max_n |dF/dC_n + 2 C_n (mu1 + n mu2)| for amplitudes C.
pub fn amplitude_residual(obj: ProbeObjective, coeffs: &[f64], mu: (f64, f64)) -> f64 {
    let d = coeffs.len();
    let p: Vec<f64> = coeffs.iter().map(|v| v * v).collect();
    let mut worst = 0.0_f64;
    for n in 0..d {
        let c = coeffs[n];
        // dF/dC_n = 2 C_n dF/dp_n, written without dividing by C_n
        let mut df = 0.0;
        match obj {
            ProbeObjective::Single => {
                if n + 1 < d {
                    df += coeffs[n + 1] * ((n + 1) as f64).sqrt();
                }
                if n > 0 {
                    df += coeffs[n - 1] * (n as f64).sqrt();
                }
            }
            ProbeObjective::Two { .. } => {
                if c > 0.0 {
                    if n + 1 < d {
                        df += 2.0 * c * obj.pair(n, p[n], p[n + 1]).fx;
                    }
                    if n > 0 {
                        df += 2.0 * c * obj.pair(n - 1, p[n - 1], p[n]).fy;
                    }
                }
            }
        }
        let r = df + 2.0 * c * (mu.0 + n as f64 * mu.1);
        worst = worst.max(r.abs());
    }
    worst
}

/// Single-mode optimum: maximizes zeta.
pub fn optimize_single(ns: f64, cutoff: usize, opts: &OptimizerOptions) -> Result<OptimalProbe> {
    optimize_probe(ProbeObjective::Single, ns, cutoff, opts)
}

/// Signal-idler optimum: maximizes the two-mode reflection term.
pub fn optimize_two(ns: f64, nbar: f64, cutoff: usize, opts: &OptimizerOptions) -> Result<OptimalProbe> {
    check_param("nbar", nbar, nbar > 0.0, "must be positive")?;
    optimize_probe(ProbeObjective::Two { q: nbar / (1.0 + nbar) }, ns, cutoff, opts)
}

/// A random amplitude vector with sum C^2 = 1 and sum n C^2 = ns on a random
/// support length.
pub fn random_competitor<R: Rng>(ns: f64, cutoff: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let min_len = (ns.floor() as usize + 2).min(cutoff);
        let len = rng.random_range(min_len..=cutoff);
        let mut w: Vec<f64> = (0..cutoff)
            .map(|n| if n < len { rng.random::<f64>() } else { 0.0 })
            .collect();
        if rng.random_bool(0.3) {
            // sparse candidates with gaps
            for v in w.iter_mut() {
                if rng.random_bool(0.3) {
                    *v = 0.0;
                }
            }
        }
        if w.iter().all(|&v| v == 0.0) {
            continue;
        }
        if let Some(p) = tilt_to_energy(&w, ns) {
            let mean: f64 = p.iter().enumerate().map(|(n, v)| n as f64 * v).sum();
            if (mean - ns).abs() < 1e-9 {
                return p.into_iter().map(f64::sqrt).collect();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params(r: f64, kappa: f64, nbar: f64) -> TargetParams {
        TargetParams::new(r, kappa, nbar).unwrap()
    }

    #[test]
    fn zeta_values() {
        assert_eq!(zeta(&[1.0, 0.0, 0.0]).unwrap(), 0.0);
        let h = 0.5f64.sqrt();
        assert_abs_diff_eq!(zeta(&[h, h]).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(
            zeta(&poisson_amplitudes(0.5, 40)).unwrap(),
            0.5f64.sqrt(),
            epsilon = 1e-10
        );
        assert!(zeta(&[0.5, 0.5]).is_err());
    }

    #[test]
    fn single_mode_terms_match_closed_forms() {
        let p = params(0.01, 0.02, 1.5);
        for c in [poisson_amplitudes(0.5, 30), vec![0.6, 0.0, 0.8], vec![1.0]] {
            let b = xi_single(&c, &p).unwrap();
            let z = zeta(&c).unwrap();
            assert_abs_diff_eq!(
                b.term_reflect,
                term_reflect_single_closed(z, &p).unwrap(),
                epsilon = 1e-15
            );
            assert_abs_diff_eq!(b.term_absorb, term_absorb_closed(&p).unwrap(), epsilon = 1e-16);
            assert_eq!(b.vanishing, 0.0);
            assert_eq!(b.q_perturbative, 1.0 - b.term_reflect - b.term_absorb);
        }
        // coherent probe: kappa ns (sqrt(n+1) - sqrt(n))^2
        let b = xi_single(&poisson_amplitudes(0.5, 30), &p).unwrap();
        assert_abs_diff_eq!(
            b.term_reflect,
            0.02 * 0.5 * (2.5f64.sqrt() - 1.5f64.sqrt()).powi(2),
            epsilon = 1e-12
        );
    }

    #[test]
    fn absorb_term_is_state_independent() {
        let p = params(0.02, 0.01, 2.0);
        let a = xi_single(&poisson_amplitudes(0.5, 30), &p).unwrap().term_absorb;
        let b = xi_single(&[0.6, 0.0, 0.8], &p).unwrap().term_absorb;
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn two_mode_terms_match_closed_forms() {
        let p = params(0.01, 0.02, 2.0);
        for c in [
            geometric_amplitudes(1.0, 25),
            poisson_amplitudes(1.0, 25),
            vec![1.0, 0.0],
        ] {
            let b = xi_two(&c, &p).unwrap();
            assert_abs_diff_eq!(
                b.term_reflect,
                term_reflect_two_closed(&c, &p).unwrap(),
                epsilon = 1e-14
            );
            assert_abs_diff_eq!(b.term_absorb, term_absorb_closed(&p).unwrap(), epsilon = 1e-16);
            assert_eq!(b.vanishing, 0.0);
        }
        assert_eq!(xi_two(&[1.0, 0.0], &p).unwrap().term_reflect, 0.0);
        assert!(xi_two(&[1.0], &params(0.0, 0.1, 0.0)).is_err());
    }

    #[test]
    fn epsilon_scaling() {
        let b = xi_single(&poisson_amplitudes(0.5, 30), &params(0.01, 0.01, 1.0)).unwrap();
        let h = b.with_epsilon(0.5);
        assert_abs_diff_eq!(h.xi, 0.25 * b.xi, epsilon = 1e-18);
    }

    fn exact_q(p: &TargetParams, ns: f64) -> f64 {
        crate::chernoff::chernoff_bound(p, &crate::target::Probe::Coherent { ns })
            .unwrap()
            .q
    }

    #[test]
    fn absorption_term_error_is_third_order() {
        // with kappa = 0 only the absorption term survives; a wrong prefactor
        // would leave an r^2 error
        let c = poisson_amplitudes(0.5, 30);
        let err = |r: f64| {
            let p = params(r, 0.0, 2.0);
            (exact_q(&p, 0.5) - xi_single(&c, &p).unwrap().q_perturbative).abs()
        };
        let slope = (err(2e-3) / err(1e-3)).log2();
        assert!(slope > 2.9, "slope {slope}");
    }

    #[test]
    fn reflection_term_matches_exact_bound() {
        let c = poisson_amplitudes(0.5, 30);
        let err = |kappa: f64| {
            let p = params(0.0, kappa, 1.0);
            (exact_q(&p, 0.5) - xi_single(&c, &p).unwrap().q_perturbative).abs()
        };
        let slope = (err(2e-4) / err(1e-4)).log2();
        assert!(slope > 1.9, "slope {slope}");
    }

    #[test]
    fn poisson_stationarity_with_quoted_multipliers() {
        let ns = 0.5f64;
        let c = poisson_amplitudes(ns, 40);
        let mu = (-ns.sqrt() / 2.0, -1.0 / (2.0 * ns.sqrt()));
        assert!(amplitude_residual(ProbeObjective::Single, &c, mu) < 1e-10);
    }

    #[test]
    fn single_optimum_is_poisson() {
        let opt = optimize_single(0.5, 40, &OptimizerOptions::default()).unwrap();
        let pois = poisson_amplitudes(0.5, 40);
        let dev = opt
            .coeffs
            .iter()
            .zip(&pois)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(dev < 1e-6, "deviation {dev:e}");
        assert!(opt.residual < 1e-8);
        assert_abs_diff_eq!(opt.multipliers.0, -0.5f64.sqrt() / 2.0, epsilon = 1e-8);
    }

    #[test]
    fn two_optimum_is_geometric() {
        let opt = optimize_two(1.0, 2.0, 60, &OptimizerOptions::default()).unwrap();
        let geo = geometric_amplitudes(1.0, 60);
        let dev = opt
            .coeffs
            .iter()
            .zip(&geo)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(dev < 1e-6, "deviation {dev:e}");
        assert!(opt.residual < 1e-8);
    }

    #[test]
    fn optimizer_rejects_bad_input() {
        assert!(optimize_single(0.0, 40, &OptimizerOptions::default()).is_err());
        assert!(optimize_two(1.0, 0.0, 40, &OptimizerOptions::default()).is_err());
        assert!(optimize_single(5.0, 4, &OptimizerOptions::default()).is_err());
    }

    #[test]
    fn competitors_satisfy_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let c = random_competitor(1.0, 30, &mut rng);
            let norm: f64 = c.iter().map(|v| v * v).sum();
            let mean: f64 = c.iter().enumerate().map(|(n, v)| n as f64 * v * v).sum();
            assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(mean, 1.0, epsilon = 1e-9);
        }
    }
}
