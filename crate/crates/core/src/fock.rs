//! Brute-force model of the experiment in a truncated Fock basis.
//!
//! All states and beam splitters used here have real matrix elements, so
//! density matrices are stored as real symmetric matrices. They are kept as a
//! direct sum of dense blocks: the channel conserves the photon-number
//! difference between return and idler modes, so the joint matrices are
//! block diagonal and exploiting that keeps the two-mode oracle at desk scale.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::chernoff::{minimize_s, ChernoffResult};
use crate::error::{check_param, Error, Result};
use crate::target::{Probe, TargetParams};

/// Geometric tail bound used to choose cutoffs.
pub const TAIL_TOL: f64 = 1e-10;
/// Extra levels added on top of the tail rule.
pub const HEADROOM: usize = 5;
/// Default tolerance on the trace deficit of oracle states.
pub const TRACE_TOL: f64 = 1e-10;
/// Eigenvalues at or below this are outside the support.
pub const SUPPORT_EPS: f64 = 1e-15;
/// Largest clamped negative eigenvalue mass tolerated by `s_overlap`.
pub const NEGATIVE_MASS_TOL: f64 = 1e-8;
/// Largest joint dimension handled by the oracle.
pub const MAX_DIM: usize = 160_000;

/// Smallest d with (n/(1+n))^d < 1e-10, plus headroom.
pub fn cutoff_for(mean_photons: f64) -> usize {
    if mean_photons <= 0.0 {
        return 1 + HEADROOM;
    }
    let ratio = mean_photons / (1.0 + mean_photons);
    let mut d = (TAIL_TOL.ln() / ratio.ln()).floor() as usize;
    while ratio.powi(d as i32) >= TAIL_TOL {
        d += 1;
    }
    d.max(1) + HEADROOM
}

/// Fock cutoffs for the thermal and return modes and for the probe modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FockCutoffs {
    pub thermal: usize,
    pub signal: usize,
}

impl FockCutoffs {
    pub fn for_params(params: &TargetParams, ns: f64) -> Self {
        Self {
            thermal: cutoff_for(params.nbar),
            signal: cutoff_for(ns),
        }
    }

    pub fn doubled(&self) -> Self {
        Self {
            thermal: 2 * self.thermal,
            signal: 2 * self.signal,
        }
    }

    /// Cutoff of the detected return mode.
    pub fn output(&self) -> usize {
        self.thermal.max(self.signal)
    }
}

/// One dense block of a block-diagonal density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FockBlock {
    /// Basis indices covered by the block, ascending.
    pub indices: Vec<usize>,
    pub matrix: DMatrix<f64>,
}

/// Truncated density matrix on modes with per-mode cutoffs `dims`.
///
/// The joint index of |n_0, n_1, ...> is row-major with mode 0 slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct FockDensityMatrix {
    dims: Vec<usize>,
    blocks: Vec<FockBlock>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

fn total_dim(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::InvalidModes(format!("invalid Fock dimensions {dims:?}")));
    }
    let dim = dims.iter().product();
    if dim > MAX_DIM {
        return Err(Error::Budget {
            requested: dim,
            budget: MAX_DIM,
        });
    }
    Ok(dim)
}

impl FockDensityMatrix {
    /// Builds a matrix from (row, col, value) entries; duplicates are summed.
    pub fn from_entries(dims: Vec<usize>, entries: &HashMap<(usize, usize), f64>) -> Result<Self> {
        let dim = total_dim(&dims)?;
        let mut uf = UnionFind::new(dim);
        let mut used = vec![false; dim];
        for &(i, j) in entries.keys() {
            if i >= dim || j >= dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: i.max(j) + 1,
                });
            }
            used[i] = true;
            used[j] = true;
            uf.union(i, j);
        }
        let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
        for i in (0..dim).filter(|&i| used[i]) {
            groups.entry(uf.find(i)).or_default().push(i);
        }
        let mut roots: Vec<usize> = groups.keys().copied().collect();
        roots.sort_unstable();
        let mut pos = vec![0usize; dim];
        let mut block_of = vec![0usize; dim];
        let mut blocks: Vec<FockBlock> = Vec::with_capacity(roots.len());
        for (b, root) in roots.iter().enumerate() {
            let indices = groups.remove(root).unwrap_or_default();
            for (p, &i) in indices.iter().enumerate() {
                pos[i] = p;
                block_of[i] = b;
            }
            let n = indices.len();
            blocks.push(FockBlock {
                indices,
                matrix: DMatrix::zeros(n, n),
            });
        }
        for (&(i, j), &v) in entries {
            let blk = &mut blocks[block_of[i]];
            blk.matrix[(pos[i], pos[j])] += v;
        }
        let out = Self { dims, blocks };
        out.check_symmetric()?;
        Ok(out)
    }

    pub fn from_dense(dims: Vec<usize>, matrix: &DMatrix<f64>) -> Result<Self> {
        let dim = total_dim(&dims)?;
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: matrix.nrows(),
            });
        }
        let mut entries = HashMap::new();
        for j in 0..dim {
            for i in 0..dim {
                if matrix[(i, j)] != 0.0 {
                    entries.insert((i, j), matrix[(i, j)]);
                }
            }
        }
        Self::from_entries(dims, &entries)
    }

    /// |psi><psi| for a real state vector.
    pub fn from_pure(dims: Vec<usize>, psi: &DVector<f64>) -> Result<Self> {
        let dim = total_dim(&dims)?;
        if psi.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: psi.len(),
            });
        }
        let indices: Vec<usize> = (0..dim).filter(|&i| psi[i] != 0.0).collect();
        let v = DVector::from_iterator(indices.len(), indices.iter().map(|&i| psi[i]));
        let matrix = &v * v.transpose();
        let blocks = if indices.is_empty() {
            Vec::new()
        } else {
            vec![FockBlock { indices, matrix }]
        };
        Ok(Self { dims, blocks })
    }

    fn check_symmetric(&self) -> Result<()> {
        for b in &self.blocks {
            let scale = b.matrix.amax().max(1.0);
            let asym = (&b.matrix - b.matrix.transpose()).amax();
            if asym > 1e-12 * scale || !asym.is_finite() {
                return Err(Error::NonPhysical(format!(
                    "density matrix is not symmetric (defect {asym:e})"
                )));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn blocks(&self) -> &[FockBlock] {
        &self.blocks
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let dim = self.dim();
        let mut m = DMatrix::zeros(dim, dim);
        for b in &self.blocks {
            for (p, &i) in b.indices.iter().enumerate() {
                for (q, &j) in b.indices.iter().enumerate() {
                    m[(i, j)] = b.matrix[(p, q)];
                }
            }
        }
        m
    }

    /// Iterates over all stored (row, col, value) entries.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.blocks.iter().flat_map(|b| {
            let n = b.indices.len();
            (0..n * n).filter_map(move |k| {
                let (p, q) = (k / n, k % n);
                let v = b.matrix[(p, q)];
                (v != 0.0).then(|| (b.indices[p], b.indices[q], v))
            })
        })
    }

    pub fn trace(&self) -> f64 {
        self.blocks.iter().map(|b| b.matrix.trace()).sum()
    }

    /// 1 - trace: probability lost past the cutoff.
    pub fn trace_deficit(&self) -> f64 {
        1.0 - self.trace()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let stored = self
            .blocks
            .iter()
            .map(|b| SymmetricEigen::new(b.matrix.clone()).eigenvalues.min())
            .fold(f64::INFINITY, f64::min);
        let covered: usize = self.blocks.iter().map(|b| b.indices.len()).sum();
        if covered < self.dim() {
            stored.min(0.0)
        } else {
            stored
        }
    }

    /// Errors if more than `tol` of the probability was lost to truncation.
    pub fn require_deficit(&self, tol: f64) -> Result<()> {
        let deficit = self.trace_deficit();
        if deficit > tol || !deficit.is_finite() {
            return Err(Error::Truncation {
                deficit,
                tolerance: tol,
            });
        }
        Ok(())
    }

    fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims.len()];
        for k in (0..self.dims.len()).rev() {
            out[k] = idx % self.dims[k];
            idx /= self.dims[k];
        }
        out
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dims.len()];
        for k in (0..self.dims.len().saturating_sub(1)).rev() {
            s[k] = s[k + 1] * self.dims[k + 1];
        }
        s
    }

    /// Reduced state on the listed modes, in the order given.
    pub fn partial_trace(&self, keep: &[usize]) -> Result<FockDensityMatrix> {
        let m = self.dims.len();
        if keep.is_empty() || keep.iter().any(|&k| k >= m) {
            return Err(Error::InvalidModes(format!("cannot keep modes {keep:?} of {m}")));
        }
        let traced: Vec<usize> = (0..m).filter(|k| !keep.contains(k)).collect();
        let new_dims: Vec<usize> = keep.iter().map(|&k| self.dims[k]).collect();
        let flatten = |mi: &[usize], modes: &[usize]| modes.iter().fold(0usize, |acc, &k| acc * self.dims[k] + mi[k]);
        let mut entries = HashMap::new();
        for (i, j, v) in self.entries() {
            let (mi, mj) = (self.multi_index(i), self.multi_index(j));
            if traced.iter().all(|&k| mi[k] == mj[k]) {
                *entries.entry((flatten(&mi, keep), flatten(&mj, keep))).or_insert(0.0) += v;
            }
        }
        FockDensityMatrix::from_entries(new_dims, &entries)
    }

    /// Tensor product with another density matrix (self on the leading modes).
    pub fn kron(&self, other: &FockDensityMatrix) -> Result<FockDensityMatrix> {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        total_dim(&dims)?;
        let od = other.dim();
        let oe: Vec<_> = other.entries().collect();
        let mut entries = HashMap::new();
        for (i, j, v) in self.entries() {
            for &(k, l, w) in &oe {
                entries.insert((i * od + k, j * od + l), v * w);
            }
        }
        FockDensityMatrix::from_entries(dims, &entries)
    }

    /// tr(rho O) for the operator product `ops` (applied right to left),
    /// each (mode, raise) with raise = true for a creation operator.
    fn expect(&self, ops: &[(usize, bool)]) -> f64 {
        let strides = self.strides();
        let mut total = 0.0;
        let mut lookup: HashMap<(usize, usize), f64> = HashMap::new();
        for (i, j, v) in self.entries() {
            lookup.insert((i, j), v);
        }
        for col in 0..self.dim() {
            let mut mi = self.multi_index(col);
            let mut coef = 1.0;
            let mut ok = true;
            for &(k, raise) in ops.iter().rev() {
                if raise {
                    if mi[k] + 1 >= self.dims[k] {
                        ok = false;
                        break;
                    }
                    mi[k] += 1;
                    coef *= (mi[k] as f64).sqrt();
                } else {
                    if mi[k] == 0 {
                        ok = false;
                        break;
                    }
                    coef *= (mi[k] as f64).sqrt();
                    mi[k] -= 1;
                }
            }
            if !ok {
                continue;
            }
            let row: usize = mi.iter().zip(&strides).map(|(a, s)| a * s).sum();
            // tr(rho O) = sum_{col} <col| rho O |col> = sum rho[col, row] O[row, col]
            if let Some(v) = lookup.get(&(col, row)) {
                total += v * coef;
            }
        }
        total
    }

    pub fn mean_photon_number(&self, mode: usize) -> f64 {
        self.expect(&[(mode, true), (mode, false)])
    }

    /// Quadrature displacement and covariance in the same convention as
    /// `GaussianState` (vacuum covariance = identity).
    pub fn gaussian_moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let m = self.dims.len();
        let mean: Vec<f64> = (0..m).map(|k| self.expect(&[(k, false)])).collect();
        let mut d = DVector::zeros(2 * m);
        for k in 0..m {
            d[2 * k] = 2.0 * mean[k];
        }
        let mut sigma = DMatrix::zeros(2 * m, 2 * m);
        for k in 0..m {
            for l in 0..m {
                let aa = self.expect(&[(k, false), (l, false)]);
                let nn = self.expect(&[(k, true), (l, false)]);
                let delta = if k == l { 1.0 } else { 0.0 };
                sigma[(2 * k, 2 * l)] = 2.0 * aa + 2.0 * nn + delta - 4.0 * mean[k] * mean[l];
                sigma[(2 * k + 1, 2 * l + 1)] = -2.0 * aa + 2.0 * nn + delta;
            }
        }
        (d, sigma)
    }
}

/// Thermal state diag(lambda_0, ..., lambda_{d-1}) with lambda_m = n^m / (1+n)^(m+1).
pub fn thermal_dm(nbar: f64, cutoff: usize) -> Result<FockDensityMatrix> {
    check_param("nbar", nbar, nbar >= 0.0, "must be non-negative")?;
    let mut entries = HashMap::new();
    let ratio = nbar / (1.0 + nbar);
    let mut lam = 1.0 / (1.0 + nbar);
    for m in 0..cutoff {
        if lam != 0.0 {
            entries.insert((m, m), lam);
        }
        lam *= ratio;
    }
    FockDensityMatrix::from_entries(vec![cutoff], &entries)
}

fn check_cutoff(cutoff: usize) -> Result<()> {
    if cutoff == 0 {
        return Err(Error::InvalidModes("cutoff must be at least 1".into()));
    }
    Ok(())
}

/// Poisson amplitudes e^{-n/2} n^{k/2} / sqrt(k!) of a real coherent state.
pub fn coherent_amplitudes(ns: f64, cutoff: usize) -> Result<Vec<f64>> {
    check_param("ns", ns, ns >= 0.0, "must be non-negative")?;
    check_cutoff(cutoff)?;
    let mut c = Vec::with_capacity(cutoff);
    let mut v = (-0.5 * ns).exp();
    for k in 0..cutoff {
        c.push(v);
        v *= (ns / (k + 1) as f64).sqrt();
    }
    Ok(c)
}

/// Schmidt coefficients C_k = sqrt(n^k / (1+n)^(k+1)) of a TMSV state.
pub fn tmsv_vector(ns: f64, cutoff: usize) -> Result<Vec<f64>> {
    check_param("ns", ns, ns >= 0.0, "must be non-negative")?;
    check_cutoff(cutoff)?;
    let ratio = (ns / (1.0 + ns)).sqrt();
    let mut c = Vec::with_capacity(cutoff);
    let mut v = 1.0 / (1.0 + ns).sqrt();
    for _ in 0..cutoff {
        c.push(v);
        v *= ratio;
    }
    Ok(c)
}

pub fn coherent_dm(ns: f64, cutoff: usize) -> Result<FockDensityMatrix> {
    single_mode_dm(&coherent_amplitudes(ns, cutoff)?)
}

pub fn tmsv_dm(ns: f64, cutoff: usize) -> Result<FockDensityMatrix> {
    two_mode_dm(&tmsv_vector(ns, cutoff)?)
}

/// Density matrix of sum_n C_n |n>.
pub fn single_mode_dm(coeffs: &[f64]) -> Result<FockDensityMatrix> {
    check_cutoff(coeffs.len())?;
    FockDensityMatrix::from_pure(vec![coeffs.len()], &DVector::from_column_slice(coeffs))
}

/// Density matrix of sum_n C_n |n, n>.
pub fn two_mode_dm(coeffs: &[f64]) -> Result<FockDensityMatrix> {
    let d = coeffs.len();
    check_cutoff(d)?;
    let mut psi = DVector::zeros(d * d);
    for (n, &c) in coeffs.iter().enumerate() {
        psi[n * d + n] = c;
    }
    FockDensityMatrix::from_pure(vec![d, d], &psi)
}

/// Beam splitter exp[theta (a^dag b - a b^dag)], stored per total photon number.
///
/// Block N acts on |k, N-k>, k = 0..=N, indexed by k. With this generator the
/// output first mode is cos(theta) a + sin(theta) b.
#[derive(Debug, Clone)]
pub struct BeamSplitter {
    theta: f64,
    blocks: Vec<DMatrix<f64>>,
}

impl BeamSplitter {
    pub fn new(theta: f64, max_total: usize) -> Self {
        let blocks = (0..=max_total)
            .map(|n| {
                let mut g = DMatrix::zeros(n + 1, n + 1);
                for k in 0..n {
                    let v = theta * (((k + 1) * (n - k)) as f64).sqrt();
                    g[(k + 1, k)] = v;
                    g[(k, k + 1)] = -v;
                }
                g.exp()
            })
            .collect();
        Self { theta, blocks }
    }

    /// Beam splitter keeping a fraction `t` of the first mode's photons in place.
    pub fn from_transmissivity(t: f64, max_total: usize) -> Result<Self> {
        check_param("transmissivity", t, (0.0..=1.0).contains(&t), "must lie in [0, 1]")?;
        Ok(Self::new(t.sqrt().acos(), max_total))
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn max_total(&self) -> usize {
        self.blocks.len() - 1
    }

    pub fn block(&self, total: usize) -> &DMatrix<f64> {
        &self.blocks[total]
    }

    /// Dense matrix on the truncated space with cutoffs (da, db).
    ///
    /// Columns whose total photon number reaches past either cutoff are not
    /// unitary, since part of their image lies outside the truncated space.
    pub fn unitary(&self, da: usize, db: usize) -> DMatrix<f64> {
        let mut u = DMatrix::zeros(da * db, da * db);
        for a in 0..da {
            for b in 0..db {
                let n = a + b;
                if n > self.max_total() {
                    continue;
                }
                let blk = &self.blocks[n];
                for k in 0..=n {
                    if k < da && n - k < db {
                        u[(k * db + (n - k), a * db + b)] = blk[(k, a)];
                    }
                }
            }
        }
        u
    }
}

/// Which output port of a beam splitter survives the partial trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Port {
    First,
    Second,
}

type Entries = Vec<(usize, usize, f64)>;

fn dense_entries(m: &DMatrix<f64>) -> Entries {
    let mut out = Vec::new();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if m[(i, j)] != 0.0 {
                out.push((i, j, m[(i, j)]));
            }
        }
    }
    out
}

/// Tr_other[U (X (x) Y) U^dag] for operators X, Y on the two input ports.
pub fn bs_reduce(
    x: &[(usize, usize, f64)],
    y: &[(usize, usize, f64)],
    bs: &BeamSplitter,
    keep: Port,
    out_dim: usize,
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(out_dim, out_dim);
    for &(a, a2, xv) in x {
        for &(b, b2, yv) in y {
            let (n, n2) = (a + b, a2 + b2);
            let (u, u2) = (bs.block(n), bs.block(n2));
            let w = xv * yv;
            match keep {
                Port::First => {
                    // traced second-mode occupation n - k must equal n2 - k2
                    let lo = n.saturating_sub(n2);
                    for k in lo..=n.min(out_dim - 1) {
                        let k2 = k + n2 - n;
                        if k2 >= out_dim {
                            break;
                        }
                        out[(k, k2)] += w * u[(k, a)] * u2[(k2, a2)];
                    }
                }
                Port::Second => {
                    // traced first-mode occupation k is shared by ket and bra
                    for k in 0..=n.min(n2) {
                        let (j, j2) = (n - k, n2 - k);
                        if j < out_dim && j2 < out_dim {
                            out[(j, j2)] += w * u[(k, a)] * u2[(k, a2)];
                        }
                    }
                }
            }
        }
    }
    out
}

/// The absorbing-target channel from the signal mode to the return mode,
/// with the thermal background folded in.
#[derive(Debug, Clone)]
pub struct TargetChannel {
    aux: BeamSplitter,
    primary: BeamSplitter,
    env: Entries,
    out_dim: usize,
    sig_dim: usize,
}

impl TargetChannel {
    pub fn new(params: &TargetParams, cut: &FockCutoffs) -> Result<Self> {
        params.validate()?;
        let out_dim = cut.output();
        let max_total = cut.thermal + cut.signal;
        let aux = BeamSplitter::from_transmissivity(params.t(), max_total)?;
        let primary = BeamSplitter::from_transmissivity(params.tau(), max_total)?;
        let thermal: Entries = thermal_dm(params.nbar, cut.thermal)?.entries().collect();
        let vac = [(0, 0, 1.0)];
        let env = dense_entries(&bs_reduce(&thermal, &vac, &aux, Port::First, cut.thermal));
        Ok(Self {
            aux,
            primary,
            env,
            out_dim,
            sig_dim: cut.signal,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Image of a signal-mode operator given by its nonzero entries.
    pub fn apply_entries(&self, x: &[(usize, usize, f64)]) -> DMatrix<f64> {
        let vac = [(0, 0, 1.0)];
        let lossy = dense_entries(&bs_reduce(x, &vac, &self.aux, Port::First, self.sig_dim));
        bs_reduce(&self.env, &lossy, &self.primary, Port::First, self.out_dim)
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() > self.sig_dim || x.ncols() > self.sig_dim {
            return Err(Error::DimensionMismatch {
                expected: self.sig_dim,
                found: x.nrows().max(x.ncols()),
            });
        }
        Ok(self.apply_entries(&dense_entries(x)))
    }
}

/// Return-mode state under H1 for a probe on modes (signal, spectators...).
///
/// The output has the return mode first, followed by the spectator modes.
pub fn channel_rho1(probe: &FockDensityMatrix, params: &TargetParams, cut: &FockCutoffs) -> Result<FockDensityMatrix> {
    let dims = probe.dims();
    if dims[0] > cut.signal {
        return Err(Error::DimensionMismatch {
            expected: cut.signal,
            found: dims[0],
        });
    }
    let rest: usize = dims[1..].iter().product();
    let channel = TargetChannel::new(params, cut)?;
    // group probe entries by spectator indices (i, i')
    let mut groups: HashMap<(usize, usize), Entries> = HashMap::new();
    for (p, q, v) in probe.entries() {
        groups
            .entry((p % rest, q % rest))
            .or_default()
            .push((p / rest, q / rest, v));
    }
    let mut keys: Vec<_> = groups.keys().copied().collect();
    keys.sort_unstable();
    let mut entries = HashMap::new();
    for key in keys {
        let img = channel.apply_entries(&groups[&key]);
        let (i, i2) = key;
        for (x, x2, v) in dense_entries(&img) {
            *entries.entry((x * rest + i, x2 * rest + i2)).or_insert(0.0) += v;
        }
    }
    let mut out_dims = vec![channel.out_dim()];
    out_dims.extend_from_slice(&dims[1..]);
    FockDensityMatrix::from_entries(out_dims, &entries)
}

/// Both hypotheses in the Fock basis.
#[derive(Debug, Clone)]
pub struct FockHypotheses {
    pub rho0: FockDensityMatrix,
    pub rho1: FockDensityMatrix,
    pub cutoffs: FockCutoffs,
}

fn probe_dm(probe: &Probe, cut: &FockCutoffs) -> Result<FockDensityMatrix> {
    probe.validate()?;
    match probe {
        Probe::Coherent { ns } => coherent_dm(*ns, cut.signal),
        Probe::Tmsv { ns } => tmsv_dm(*ns, cut.signal),
        Probe::FockSingle { coeffs } => single_mode_dm(coeffs),
        Probe::FockTwo { coeffs } => two_mode_dm(coeffs),
    }
}

/// Default cutoffs for a probe: the tail rule for Gaussian probes and the
/// coefficient length for Fock-coefficient probes.
pub fn default_cutoffs(params: &TargetParams, probe: &Probe) -> FockCutoffs {
    let mut cut = FockCutoffs::for_params(params, probe.mean_photons());
    if let Probe::FockSingle { coeffs } | Probe::FockTwo { coeffs } = probe {
        cut.signal = coeffs.len();
    }
    cut
}

pub fn fock_hypotheses(
    params: &TargetParams,
    probe: &Probe,
    cut: &FockCutoffs,
    trace_tol: f64,
) -> Result<FockHypotheses> {
    let pdm = probe_dm(probe, cut)?;
    pdm.require_deficit(trace_tol)?;
    let rho1 = channel_rho1(&pdm, params, cut)?;
    rho1.require_deficit(trace_tol)?;
    let mut rho0 = thermal_dm(params.nbar, cut.output())?;
    if pdm.dims().len() > 1 {
        let spectators: Vec<usize> = (1..pdm.dims().len()).collect();
        rho0 = rho0.kron(&pdm.partial_trace(&spectators)?)?;
    }
    rho0.require_deficit(trace_tol)?;
    Ok(FockHypotheses {
        rho0,
        rho1,
        cutoffs: *cut,
    })
}

#[derive(Debug, Clone)]
struct SpectralBlock {
    a: Vec<f64>,
    b: Vec<f64>,
    // squared overlaps |<u_i|v_j>|^2
    w: DMatrix<f64>,
}

/// Eigendecompositions of two density matrices on a shared block structure,
/// ready for evaluating tr(rho0^s rho1^(1-s)) at many s.
#[derive(Debug, Clone)]
pub struct FockOverlap {
    blocks: Vec<SpectralBlock>,
    clamped: f64,
}

fn spectrum(m: DMatrix<f64>, clamped: &mut f64) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let vals = eig
        .eigenvalues
        .iter()
        .map(|&v| {
            if v < 0.0 {
                *clamped += -v;
                0.0
            } else {
                v
            }
        })
        .collect();
    (vals, eig.eigenvectors)
}

fn support_pow(x: f64, p: f64) -> f64 {
    if x <= SUPPORT_EPS {
        0.0
    } else if p == 0.0 {
        1.0
    } else {
        x.powf(p)
    }
}

impl FockOverlap {
    pub fn new(rho0: &FockDensityMatrix, rho1: &FockDensityMatrix) -> Result<Self> {
        if rho0.dims() != rho1.dims() {
            return Err(Error::DimensionMismatch {
                expected: rho0.dim(),
                found: rho1.dim(),
            });
        }
        let dim = rho0.dim();
        let mut uf = UnionFind::new(dim);
        let mut used = vec![false; dim];
        for b in rho0.blocks().iter().chain(rho1.blocks()) {
            for &i in &b.indices {
                used[i] = true;
                uf.union(b.indices[0], i);
            }
        }
        let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
        for i in (0..dim).filter(|&i| used[i]) {
            groups.entry(uf.find(i)).or_default().push(i);
        }
        let mut pos = vec![0usize; dim];
        let mut group_of = vec![0usize; dim];
        let mut roots: Vec<usize> = groups.keys().copied().collect();
        roots.sort_unstable();
        let ordered: Vec<Vec<usize>> = roots.iter().map(|r| groups.remove(r).unwrap_or_default()).collect();
        for (g, idx) in ordered.iter().enumerate() {
            for (p, &i) in idx.iter().enumerate() {
                pos[i] = p;
                group_of[i] = g;
            }
        }
        let gather = |rho: &FockDensityMatrix| {
            let mut mats: Vec<DMatrix<f64>> = ordered.iter().map(|idx| DMatrix::zeros(idx.len(), idx.len())).collect();
            for b in rho.blocks() {
                let g = group_of[b.indices[0]];
                for (p, &i) in b.indices.iter().enumerate() {
                    for (q, &j) in b.indices.iter().enumerate() {
                        mats[g][(pos[i], pos[j])] = b.matrix[(p, q)];
                    }
                }
            }
            mats
        };
        let (m0, m1) = (gather(rho0), gather(rho1));
        let mut clamped = 0.0;
        let mut blocks = Vec::with_capacity(ordered.len());
        for (x, y) in m0.into_iter().zip(m1) {
            let (a, u) = spectrum(x, &mut clamped);
            let (b, v) = spectrum(y, &mut clamped);
            let w = (u.transpose() * v).map(|c| c * c);
            blocks.push(SpectralBlock { a, b, w });
        }
        if clamped > NEGATIVE_MASS_TOL {
            return Err(Error::NegativeMass(clamped));
        }
        Ok(Self { blocks, clamped })
    }

    /// Total magnitude of negative eigenvalues set to zero.
    pub fn clamped_mass(&self) -> f64 {
        self.clamped
    }

    pub fn q_s(&self, s: f64) -> Result<f64> {
        check_param("s", s, (0.0..=1.0).contains(&s), "must lie in [0, 1]")?;
        let mut total = 0.0;
        for blk in &self.blocks {
            let pa: Vec<f64> = blk.a.iter().map(|&x| support_pow(x, s)).collect();
            let pb: Vec<f64> = blk.b.iter().map(|&x| support_pow(x, 1.0 - s)).collect();
            for (j, &bj) in pb.iter().enumerate() {
                if bj == 0.0 {
                    continue;
                }
                let col = blk.w.column(j);
                let dot: f64 = pa.iter().zip(col.iter()).map(|(a, w)| a * w).sum();
                total += bj * dot;
            }
        }
        Ok(total)
    }
}

/// tr(rho0^s rho1^(1-s)) with rho^0 the support projector.
pub fn s_overlap(rho0: &FockDensityMatrix, rho1: &FockDensityMatrix, s: f64) -> Result<f64> {
    FockOverlap::new(rho0, rho1)?.q_s(s)
}

/// Chernoff bound between two Fock-basis states, with the same grid and
/// refinement as the Gaussian engine.
pub fn chernoff_oracle(rho0: &FockDensityMatrix, rho1: &FockDensityMatrix) -> Result<ChernoffResult> {
    let ov = FockOverlap::new(rho0, rho1)?;
    minimize_s(|s| ov.q_s(s))
}

/// Oracle bound for a probe at fixed cutoffs.
pub fn oracle_bound(params: &TargetParams, probe: &Probe, cut: &FockCutoffs) -> Result<ChernoffResult> {
    let h = fock_hypotheses(params, probe, cut, TRACE_TOL)?;
    chernoff_oracle(&h.rho0, &h.rho1)
}

/// Oracle bound with its cutoff-doubling convergence check.
#[derive(Debug, Clone)]
pub struct ConvergedOracle {
    pub result: ChernoffResult,
    /// Accepted cutoffs: doubling them changes q by less than the tolerance.
    pub cutoffs: FockCutoffs,
    /// q at the doubled cutoffs.
    pub q_doubled: f64,
}

/// Doubles the cutoffs from `start` until q changes by less than `tol`.
pub fn oracle_converged(params: &TargetParams, probe: &Probe, start: FockCutoffs, tol: f64) -> Result<ConvergedOracle> {
    // Fock-coefficient probes have exact finite support; only the background cutoff grows.
    let exact = matches!(probe, Probe::FockSingle { .. } | Probe::FockTwo { .. });
    let grow = |c: FockCutoffs| {
        if exact {
            FockCutoffs {
                thermal: 2 * c.thermal,
                signal: c.signal,
            }
        } else {
            c.doubled()
        }
    };
    let mut cut = start;
    let mut cur = oracle_bound(params, probe, &cut)?;
    loop {
        let next_cut = grow(cut);
        let next = oracle_bound(params, probe, &next_cut)?;
        if (next.q - cur.q).abs() < tol {
            return Ok(ConvergedOracle {
                q_doubled: next.q,
                result: cur,
                cutoffs: cut,
            });
        }
        cut = next_cut;
        cur = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::target::{rho_pair_coherent_closed, rho_pair_tmsv_closed};
    use approx::assert_abs_diff_eq;

    #[test]
    fn thermal_values() {
        let t = thermal_dm(2.0, 3).unwrap();
        let d = t.to_dense();
        assert_abs_diff_eq!(d[(0, 0)], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d[(1, 1)], 2.0 / 9.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d[(2, 2)], 4.0 / 27.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t.trace_deficit(), 8.0 / 27.0, epsilon = 1e-15);
        assert!(t.require_deficit(TRACE_TOL).is_err());
        assert_eq!(thermal_dm(0.0, 4).unwrap().to_dense()[(0, 0)], 1.0);
    }

    #[test]
    fn probe_coefficients() {
        let c = coherent_amplitudes(0.5, 10).unwrap();
        assert_abs_diff_eq!((c[1] / c[0]).powi(2), 0.5, epsilon = 1e-15);
        let t = tmsv_vector(1.0, 10).unwrap();
        for (n, v) in t.iter().enumerate() {
            assert_abs_diff_eq!(v * v, 0.5f64.powi(n as i32 + 1), epsilon = 1e-15);
        }
        assert_eq!(coherent_amplitudes(0.0, 3).unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn cutoff_rule() {
        // (2/3)^57 < 1e-10 <= (2/3)^56
        assert_eq!(cutoff_for(2.0), 57 + HEADROOM);
        assert_eq!(cutoff_for(0.0), 1 + HEADROOM);
    }

    #[test]
    fn beam_splitter_single_photon() {
        let theta = 0.4;
        let bs = BeamSplitter::new(theta, 10);
        assert!((BeamSplitter::new(0.0, 5).unitary(3, 3) - DMatrix::identity(9, 9)).amax() < 1e-15);
        let one = [(1, 1, 1.0)];
        let vac = [(0, 0, 1.0)];
        let first = bs_reduce(&one, &vac, &bs, Port::First, 3);
        let second = bs_reduce(&one, &vac, &bs, Port::Second, 3);
        assert_abs_diff_eq!(first[(1, 1)], theta.cos().powi(2), epsilon = 1e-14);
        assert_abs_diff_eq!(second[(1, 1)], theta.sin().powi(2), epsilon = 1e-14);
        // swap at theta = pi/2
        let swap = BeamSplitter::new(std::f64::consts::FRAC_PI_2, 2).unitary(2, 2);
        assert_abs_diff_eq!(swap[(1, 2)].abs(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn beam_splitter_unitary_on_occupied_subspace() {
        let d = 12;
        let u = BeamSplitter::new(1.1, 2 * d).unitary(d, d);
        let cols: Vec<usize> = (0..d * d).filter(|&c| c / d + c % d < d).collect();
        for &i in &cols {
            for &j in &cols {
                let v = u.column(i).dot(&u.column(j));
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn full_absorption_gives_vacuum() {
        let p = TargetParams::new(1.0, 0.3, 1.0).unwrap();
        let cut = FockCutoffs::for_params(&p, 0.5);
        let h = fock_hypotheses(&p, &Probe::Coherent { ns: 0.5 }, &cut, TRACE_TOL).unwrap();
        let d = h.rho1.to_dense();
        assert_abs_diff_eq!(d[(0, 0)], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(d.iter().map(|v| v.abs()).sum::<f64>(), 1.0, epsilon = 1e-10);
        let res = chernoff_oracle(&h.rho0, &h.rho1).unwrap();
        assert_abs_diff_eq!(res.q, 0.5, epsilon = 1e-9);
        assert_eq!(res.s_opt, 1.0);
    }

    #[test]
    fn lossless_unreflecting_is_thermal() {
        let p = TargetParams::new(0.0, 0.0, 1.5).unwrap();
        let cut = FockCutoffs::for_params(&p, 0.5);
        let h = fock_hypotheses(&p, &Probe::Coherent { ns: 0.5 }, &cut, TRACE_TOL).unwrap();
        assert!((h.rho1.to_dense() - h.rho0.to_dense()).amax() < 1e-14);
    }

    #[test]
    fn moments_match_closed_form() {
        let p = TargetParams::new(0.3, 0.01, 1.0).unwrap();
        let cut = FockCutoffs::for_params(&p, 0.5);
        let h = fock_hypotheses(&p, &Probe::Coherent { ns: 0.5 }, &cut, TRACE_TOL).unwrap();
        let (d, sigma) = h.rho1.gaussian_moments();
        let closed = rho_pair_coherent_closed(&p, 0.5).unwrap();
        assert!((d - closed.rho1.displacement()).amax() < 1e-8);
        assert!((sigma - closed.rho1.covariance()).amax() < 1e-8);

        let p = TargetParams::new(0.3, 0.05, 0.5).unwrap();
        let cut = FockCutoffs::for_params(&p, 0.25);
        let h = fock_hypotheses(&p, &Probe::Tmsv { ns: 0.25 }, &cut, TRACE_TOL).unwrap();
        let (_, sigma) = h.rho1.gaussian_moments();
        let closed = rho_pair_tmsv_closed(&p, 0.25).unwrap();
        assert!((sigma - closed.rho1.covariance()).amax() < 1e-8);
    }

    #[test]
    fn overlap_examples() {
        let t = thermal_dm(1.0, 40).unwrap();
        for &s in &[0.0, 0.3, 1.0] {
            assert_abs_diff_eq!(s_overlap(&t, &t, s).unwrap(), t.trace(), epsilon = 1e-12);
        }
        let mut vac = HashMap::new();
        vac.insert((0, 0), 1.0);
        let vac = FockDensityMatrix::from_entries(vec![40], &vac).unwrap();
        for &s in &[0.0, 0.3, 0.7, 1.0] {
            assert_abs_diff_eq!(s_overlap(&t, &vac, s).unwrap(), 0.5f64.powf(s), epsilon = 1e-12);
        }
        let res = chernoff_oracle(&t, &vac).unwrap();
        assert_eq!(res.s_opt, 1.0);
        assert_abs_diff_eq!(res.q, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn partial_trace_of_tmsv_is_thermal() {
        let dm = tmsv_dm(1.0, 45).unwrap();
        let idler = dm.partial_trace(&[1]).unwrap().to_dense();
        let t = thermal_dm(1.0, 45).unwrap().to_dense();
        assert!((idler - t).amax() < 1e-15);
    }

    #[test]
    fn rejects_mismatch() {
        let a = thermal_dm(1.0, 5).unwrap();
        let b = thermal_dm(1.0, 6).unwrap();
        assert!(s_overlap(&a, &b, 0.5).is_err());
        assert!(FockDensityMatrix::from_dense(vec![2], &DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.5])).is_err());
    }
}
