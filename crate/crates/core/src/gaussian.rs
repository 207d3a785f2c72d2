//! Gaussian states in the quadrature picture.
//!
//! Quadratures are interleaved as (x1, p1, x2, p2, ...) and scaled so that
//! the vacuum covariance is the identity. A coherent state |alpha> with real
//! alpha has displacement (2 alpha, 0).

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_param, Error, Result};

/// Relative tolerance for symmetry and symplectic-structure checks.
pub const STRUCTURE_TOL: f64 = 1e-12;
/// Smallest eigenvalue of sigma + i Omega that is still accepted.
pub const PHYSICALITY_TOL: f64 = 1e-9;
/// Symplectic eigenvalues below 1 by more than this are rejected.
pub const NONPHYSICAL_TOL: f64 = 1e-6;
/// Symplectic eigenvalues within this distance of 1 are treated as exactly pure.
pub const PURE_TOL: f64 = 1e-9;

/// Block-diagonal symplectic form for `n_modes` modes.
pub fn symplectic_form(n_modes: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(2 * n_modes, 2 * n_modes);
    for k in 0..n_modes {
        omega[(2 * k, 2 * k + 1)] = 1.0;
        omega[(2 * k + 1, 2 * k)] = -1.0;
    }
    omega
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn check_square_even(m: &DMatrix<f64>) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    if !m.nrows().is_multiple_of(2) || m.nrows() == 0 {
        return Err(Error::DimensionMismatch {
            expected: m.nrows() + 1,
            found: m.nrows(),
        });
    }
    Ok(m.nrows() / 2)
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonPhysical("covariance has non-finite entries".into()));
    }
    let asym = max_abs(&(m - m.transpose()));
    if asym > STRUCTURE_TOL * max_abs(m).max(1.0) {
        return Err(Error::NonPhysical(format!(
            "covariance is not symmetric (defect {asym:e})"
        )));
    }
    Ok(())
}

/// Smallest eigenvalue of the Hermitian matrix sigma + i Omega.
///
/// Computed through the real embedding [[sigma, -Omega], [Omega, sigma]],
/// which has the same spectrum with every eigenvalue doubled.
pub fn min_uncertainty_eigenvalue(sigma: &DMatrix<f64>) -> f64 {
    let n = sigma.nrows();
    let omega = symplectic_form(n / 2);
    let mut big = DMatrix::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(sigma);
    big.view_mut((n, n), (n, n)).copy_from(sigma);
    big.view_mut((0, n), (n, n)).copy_from(&(-&omega));
    big.view_mut((n, 0), (n, n)).copy_from(&omega);
    SymmetricEigen::new(big).eigenvalues.min()
}

/// A Gaussian state given by its first and second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    displacement: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl GaussianState {
    /// Builds a state after checking symmetry and the uncertainty principle.
    pub fn new(displacement: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = check_square_even(&covariance)?;
        if displacement.len() != 2 * n {
            return Err(Error::DimensionMismatch {
                expected: 2 * n,
                found: displacement.len(),
            });
        }
        if displacement.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonPhysical("displacement has non-finite entries".into()));
        }
        check_symmetric(&covariance)?;
        let min_eig = min_uncertainty_eigenvalue(&covariance);
        if min_eig < -PHYSICALITY_TOL {
            return Err(Error::NonPhysical(format!(
                "sigma + i Omega has eigenvalue {min_eig:e}"
            )));
        }
        Ok(Self {
            displacement,
            covariance,
        })
    }

    pub(crate) fn from_parts(displacement: DVector<f64>, covariance: DMatrix<f64>) -> Self {
        Self {
            displacement,
            covariance,
        }
    }

    /// Product of `n_modes` vacuum states.
    pub fn vacuum(n_modes: usize) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::InvalidModes("at least one mode is required".into()));
        }
        Ok(Self::from_parts(
            DVector::zeros(2 * n_modes),
            DMatrix::identity(2 * n_modes, 2 * n_modes),
        ))
    }

    /// Single-mode thermal state with mean photon number `nbar`.
    pub fn thermal(nbar: f64) -> Result<Self> {
        check_param("nbar", nbar, nbar >= 0.0, "must be non-negative")?;
        Ok(Self::from_parts(
            DVector::zeros(2),
            DMatrix::identity(2, 2) * (2.0 * nbar + 1.0),
        ))
    }

    /// Coherent state with real amplitude sqrt(ns).
    pub fn coherent(ns: f64) -> Result<Self> {
        check_param("ns", ns, ns >= 0.0, "must be non-negative")?;
        Ok(Self::from_parts(
            DVector::from_vec(vec![2.0 * ns.sqrt(), 0.0]),
            DMatrix::identity(2, 2),
        ))
    }

    /// Two-mode squeezed vacuum with `ns` mean photons per mode, modes (signal, idler).
    pub fn tmsv(ns: f64) -> Result<Self> {
        check_param("ns", ns, ns >= 0.0, "must be non-negative")?;
        let a = 2.0 * ns + 1.0;
        let c = 2.0 * (ns * (ns + 1.0)).sqrt();
        #[rustfmt::skip]
        let sigma = DMatrix::from_row_slice(4, 4, &[
            a, 0.0, c, 0.0,
            0.0, a, 0.0, -c,
            c, 0.0, a, 0.0,
            0.0, -c, 0.0, a,
        ]);
        Ok(Self::from_parts(DVector::zeros(4), sigma))
    }

    pub fn n_modes(&self) -> usize {
        self.displacement.len() / 2
    }

    pub fn displacement(&self) -> &DVector<f64> {
        &self.displacement
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Direct sum: the state of `self` and `other` side by side.
    pub fn tensor(&self, other: &GaussianState) -> GaussianState {
        let (n1, n2) = (self.displacement.len(), other.displacement.len());
        let mut d = DVector::zeros(n1 + n2);
        d.rows_mut(0, n1).copy_from(&self.displacement);
        d.rows_mut(n1, n2).copy_from(&other.displacement);
        let mut sigma = DMatrix::zeros(n1 + n2, n1 + n2);
        sigma.view_mut((0, 0), (n1, n1)).copy_from(&self.covariance);
        sigma.view_mut((n1, n1), (n2, n2)).copy_from(&other.covariance);
        GaussianState::from_parts(d, sigma)
    }

    /// Applies a symplectic map: d -> S d, sigma -> S sigma S^T.
    pub fn apply(&self, op: &SymplecticOp) -> Result<GaussianState> {
        if op.matrix.nrows() != self.displacement.len() {
            return Err(Error::DimensionMismatch {
                expected: self.displacement.len(),
                found: op.matrix.nrows(),
            });
        }
        let s = &op.matrix;
        let d = s * &self.displacement;
        let sigma = s * &self.covariance * s.transpose();
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        Ok(GaussianState::from_parts(d, sigma))
    }

    /// Reduced state on the listed modes, in the order given.
    pub fn partial_trace(&self, keep: &[usize]) -> Result<GaussianState> {
        let n = self.n_modes();
        if keep.is_empty() {
            return Err(Error::InvalidModes("no modes kept".into()));
        }
        for (i, &k) in keep.iter().enumerate() {
            if k >= n {
                return Err(Error::InvalidModes(format!("mode {k} out of range for {n} modes")));
            }
            if keep[..i].contains(&k) {
                return Err(Error::InvalidModes(format!("mode {k} listed twice")));
            }
        }
        let idx: Vec<usize> = keep.iter().flat_map(|&k| [2 * k, 2 * k + 1]).collect();
        let d = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.displacement[i]));
        let sigma = DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.covariance[(idx[a], idx[b])]);
        Ok(GaussianState::from_parts(d, sigma))
    }

    /// Mean photon number of one mode, (tr sigma_k + |d_k|^2)/4 - 1/2.
    pub fn mean_photon_number(&self, mode: usize) -> f64 {
        let (i, j) = (2 * mode, 2 * mode + 1);
        let tr = self.covariance[(i, i)] + self.covariance[(j, j)];
        let d2 = self.displacement[i].powi(2) + self.displacement[j].powi(2);
        (tr + d2) / 4.0 - 0.5
    }

    pub fn total_mean_photon_number(&self) -> f64 {
        (0..self.n_modes()).map(|k| self.mean_photon_number(k)).sum()
    }

    pub fn symplectic_eigenvalues(&self) -> Result<Vec<f64>> {
        symplectic_eigenvalues(&self.covariance)
    }

    pub fn williamson(&self) -> Result<Williamson> {
        williamson(&self.covariance)
    }

    /// Smallest eigenvalue of sigma + i Omega.
    pub fn physicality_margin(&self) -> f64 {
        min_uncertainty_eigenvalue(&self.covariance)
    }
}

/// A real symplectic matrix acting on 2n quadratures.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticOp {
    matrix: DMatrix<f64>,
}

impl SymplecticOp {
    /// Wraps a matrix after checking S Omega S^T = Omega.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let n = check_square_even(&matrix)?;
        let op = Self { matrix };
        let defect = op.symplectic_defect();
        if defect > 1e-10 * max_abs(&op.matrix).powi(2).max(1.0) || !defect.is_finite() {
            return Err(Error::NonPhysical(format!(
                "matrix on {n} modes is not symplectic (defect {defect:e})"
            )));
        }
        Ok(op)
    }

    pub fn identity(n_modes: usize) -> Self {
        Self {
            matrix: DMatrix::identity(2 * n_modes, 2 * n_modes),
        }
    }

    /// Beam splitter of transmissivity `t` mixing modes `i` and `j`.
    ///
    /// The output of mode i is sqrt(t) a_i + sqrt(1-t) a_j and the output of
    /// mode j is sqrt(t) a_j - sqrt(1-t) a_i.
    pub fn beamsplitter(t: f64, i: usize, j: usize, n_modes: usize) -> Result<Self> {
        check_param("transmissivity", t, (0.0..=1.0).contains(&t), "must lie in [0, 1]")?;
        if i >= n_modes || j >= n_modes || i == j {
            return Err(Error::InvalidModes(format!(
                "beam splitter on ({i}, {j}) with {n_modes} modes"
            )));
        }
        let (ct, st) = (t.sqrt(), (1.0 - t).sqrt());
        let mut m = DMatrix::identity(2 * n_modes, 2 * n_modes);
        for q in 0..2 {
            let (a, b) = (2 * i + q, 2 * j + q);
            m[(a, a)] = ct;
            m[(b, b)] = ct;
            m[(a, b)] = st;
            m[(b, a)] = -st;
        }
        Ok(Self { matrix: m })
    }

    /// The map that applies `self` first and then `next`.
    pub fn then(&self, next: &SymplecticOp) -> Result<SymplecticOp> {
        if self.matrix.nrows() != next.matrix.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.matrix.nrows(),
                found: next.matrix.nrows(),
            });
        }
        Ok(Self {
            matrix: &next.matrix * &self.matrix,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n_modes(&self) -> usize {
        self.matrix.nrows() / 2
    }

    /// max |S Omega S^T - Omega|.
    pub fn symplectic_defect(&self) -> f64 {
        let omega = symplectic_form(self.n_modes());
        max_abs(&(&self.matrix * &omega * self.matrix.transpose() - omega))
    }
}

/// Normal-mode decomposition sigma = S diag(nu_1, nu_1, ..., nu_n, nu_n) S^T.
#[derive(Debug, Clone, PartialEq)]
pub struct Williamson {
    /// Symplectic eigenvalues in ascending order, each >= 1.
    pub nu: Vec<f64>,
    /// Symplectic matrix whose column pairs are the normal modes.
    pub symplectic: DMatrix<f64>,
}

impl Williamson {
    /// Indices of normal modes that are pure (nu = 1 after snapping).
    pub fn pure_modes(&self) -> Vec<usize> {
        (0..self.nu.len()).filter(|&k| self.nu[k] == 1.0).collect()
    }

    pub fn is_pure(&self) -> bool {
        self.nu.iter().all(|&v| v == 1.0)
    }
}

fn sym_sqrt_pair(sigma: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let eig = SymmetricEigen::new(sigma.clone());
    let lo = eig.eigenvalues.min();
    if lo <= 0.0 || !lo.is_finite() {
        return Err(Error::NonPhysical(format!("covariance has eigenvalue {lo:e}")));
    }
    let q = &eig.eigenvectors;
    let sq = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    let isq = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
    Ok((q * sq * q.transpose(), q * isq * q.transpose()))
}

fn snap_nu(nu: f64) -> Result<f64> {
    if !nu.is_finite() || nu < 1.0 - NONPHYSICAL_TOL {
        return Err(Error::NonPhysical(format!("symplectic eigenvalue {nu} below 1")));
    }
    Ok(if nu <= 1.0 + PURE_TOL { 1.0 } else { nu })
}

/// Symplectic eigenvalues of a covariance matrix, ascending.
///
/// Values in [1 - 1e-6, 1 + 1e-9] are returned as exactly 1.
pub fn symplectic_eigenvalues(sigma: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = check_square_even(sigma)?;
    check_symmetric(sigma)?;
    let (sq, _) = sym_sqrt_pair(sigma)?;
    // sigma^{1/2} Omega sigma^{1/2} is similar to Omega sigma; its symmetric
    // square K^T K carries every nu^2 twice.
    let k = &sq * symplectic_form(n) * &sq;
    let mut ev: Vec<f64> = SymmetricEigen::new(k.transpose() * &k)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    (0..n)
        .map(|i| snap_nu((0.5 * (ev[2 * i] + ev[2 * i + 1])).max(0.0).sqrt()))
        .collect()
}

/// Williamson decomposition of a covariance matrix.
pub fn williamson(sigma: &DMatrix<f64>) -> Result<Williamson> {
    let n = check_square_even(sigma)?;
    check_symmetric(sigma)?;
    let (sq, isq) = sym_sqrt_pair(sigma)?;
    let a = &isq * symplectic_form(n) * &isq;
    // -A^2 = A^T A has eigenvalues 1/nu^2; largest first gives ascending nu.
    let eig = SymmetricEigen::new(a.transpose() * &a);
    let mut order: Vec<usize> = (0..2 * n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));

    let dim = 2 * n;
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(dim);
    let mut nu = Vec::with_capacity(n);
    for &idx in &order {
        if basis.len() == dim {
            break;
        }
        let mut u = eig.eigenvectors.column(idx).clone_owned();
        for b in &basis {
            let c = b.dot(&u);
            u -= b * c;
        }
        let norm = u.norm();
        if norm < 1e-6 {
            continue;
        }
        u /= norm;
        let au = &a * &u;
        let inv_nu = au.norm();
        if inv_nu <= 0.0 || !inv_nu.is_finite() {
            return Err(Error::NonPhysical("degenerate symplectic spectrum".into()));
        }
        let mut w = au * (-1.0 / inv_nu);
        for b in &basis {
            let c = b.dot(&w);
            w -= b * c;
        }
        let wn = w.norm();
        if wn < 1e-6 {
            continue;
        }
        w /= wn;
        basis.push(u);
        basis.push(w);
        nu.push(1.0 / inv_nu);
    }
    if basis.len() != dim {
        return Err(Error::NonPhysical("Williamson pairing failed".into()));
    }
    let o = DMatrix::from_columns(&basis);
    let raw_nu = nu.clone();
    let nu: Vec<f64> = nu.into_iter().map(snap_nu).collect::<Result<_>>()?;
    let dinv = DMatrix::from_diagonal(&DVector::from_iterator(
        dim,
        raw_nu.iter().flat_map(|&v| [1.0 / v.sqrt(), 1.0 / v.sqrt()]),
    ));
    Ok(Williamson {
        nu,
        symplectic: sq * o * dinv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn vacuum_is_pure() {
        let v = GaussianState::vacuum(2).unwrap();
        assert_eq!(v.symplectic_eigenvalues().unwrap(), vec![1.0, 1.0]);
        assert_abs_diff_eq!(v.total_mean_photon_number(), 0.0);
    }

    #[test]
    fn thermal_eigenvalue() {
        let t = GaussianState::thermal(2.0).unwrap();
        assert_abs_diff_eq!(t.symplectic_eigenvalues().unwrap()[0], 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.mean_photon_number(0), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn coherent_photon_number() {
        let c = GaussianState::coherent(0.5).unwrap();
        assert_abs_diff_eq!(c.displacement()[0], 2.0 * 0.5f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(c.mean_photon_number(0), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn tmsv_is_pure_with_mixed_marginals() {
        let t = GaussianState::tmsv(1.0).unwrap();
        assert_eq!(t.symplectic_eigenvalues().unwrap(), vec![1.0, 1.0]);
        let idler = t.partial_trace(&[1]).unwrap();
        assert_abs_diff_eq!(idler.symplectic_eigenvalues().unwrap()[0], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(GaussianState::thermal(-0.1).is_err());
        let sq = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.0]));
        assert!(matches!(
            GaussianState::new(DVector::zeros(2), sq),
            Err(Error::NonPhysical(_))
        ));
        let asym = DMatrix::from_row_slice(2, 2, &[2.0, 0.1, 0.0, 2.0]);
        assert!(GaussianState::new(DVector::zeros(2), asym).is_err());
        assert!(GaussianState::new(DVector::zeros(3), DMatrix::identity(2, 2)).is_err());
        assert!(SymplecticOp::beamsplitter(1.5, 0, 1, 2).is_err());
        assert!(SymplecticOp::beamsplitter(0.5, 0, 0, 2).is_err());
        assert!(GaussianState::vacuum(2).unwrap().partial_trace(&[2]).is_err());
    }

    #[test]
    fn beamsplitter_limits() {
        let id = SymplecticOp::beamsplitter(1.0, 0, 1, 2).unwrap();
        assert_eq!(id.matrix(), &DMatrix::<f64>::identity(4, 4));
        let swap = SymplecticOp::beamsplitter(0.0, 0, 1, 2).unwrap();
        let m = swap.matrix();
        assert_eq!(m[(0, 0)], 0.0);
        assert_eq!(m[(0, 2)], 1.0);
        assert_eq!(m[(2, 0)], -1.0);
        assert!(swap.symplectic_defect() < 1e-15);
    }

    #[test]
    fn beamsplitter_preserves_photon_number() {
        let s = GaussianState::thermal(3.0)
            .unwrap()
            .tensor(&GaussianState::coherent(1.0).unwrap());
        let out = s.apply(&SymplecticOp::beamsplitter(0.3, 0, 1, 2).unwrap()).unwrap();
        assert_abs_diff_eq!(out.total_mean_photon_number(), 4.0, epsilon = 1e-12);
        // output 0 carries sqrt(1-t) of mode 1's amplitude
        assert_abs_diff_eq!(out.displacement()[0], 2.0 * 0.7f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn williamson_reconstructs() {
        let s = GaussianState::tmsv(0.7)
            .unwrap()
            .tensor(&GaussianState::thermal(1.5).unwrap());
        let s = s.apply(&SymplecticOp::beamsplitter(0.4, 0, 2, 3).unwrap()).unwrap();
        let s = s.apply(&SymplecticOp::beamsplitter(0.8, 1, 2, 3).unwrap()).unwrap();
        let w = s.williamson().unwrap();
        let d = DMatrix::from_diagonal(&DVector::from_iterator(6, w.nu.iter().flat_map(|&v| [v, v])));
        let rec = &w.symplectic * d * w.symplectic.transpose();
        assert!(max_abs(&(rec - s.covariance())) < 1e-10);
        let op = SymplecticOp::new(w.symplectic.clone()).unwrap();
        assert!(op.symplectic_defect() < 1e-10);
        for (a, b) in w.nu.iter().zip(s.symplectic_eigenvalues().unwrap()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn eigenvalues_match_complex_spectrum() {
        let s = GaussianState::tmsv(0.3)
            .unwrap()
            .tensor(&GaussianState::thermal(0.9).unwrap());
        let s = s.apply(&SymplecticOp::beamsplitter(0.25, 1, 2, 3).unwrap()).unwrap();
        let nu = s.symplectic_eigenvalues().unwrap();
        let m = symplectic_form(3) * s.covariance();
        let mut im: Vec<f64> = m.complex_eigenvalues().iter().map(|z| z.im.abs()).collect();
        im.sort_by(|a, b| a.total_cmp(b));
        for k in 0..3 {
            assert_abs_diff_eq!(nu[k], im[2 * k], epsilon = 1e-9);
        }
    }

    #[test]
    fn near_pure_snapping() {
        let sigma = DMatrix::identity(2, 2) * (1.0 - 1e-8);
        assert_eq!(symplectic_eigenvalues(&sigma).unwrap(), vec![1.0]);
        let sigma = DMatrix::identity(2, 2) * (1.0 - 1e-5);
        assert!(symplectic_eigenvalues(&sigma).is_err());
    }
}
