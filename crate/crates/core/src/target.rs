//! The absorbing target and the two hypotheses it induces.
//!
//! Under H1 the probe's signal mode and the thermal background each pass an
//! auxiliary beam splitter of reflectivity r into vacuum device modes, then
//! meet on the primary beam splitter of reflectivity kappa. The detector sees
//! the output carrying sqrt(kappa) of the signal. Under H0 the detector sees
//! the thermal background alone.

use nalgebra::Matrix2;

use crate::error::{check_param, Error, Result};
use crate::gaussian::{GaussianState, SymplecticOp};

/// Tolerance for probe coefficient normalization.
pub const NORM_TOL: f64 = 1e-10;

/// Channel parameters: absorption `r`, primary reflectivity `kappa`, background `nbar`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetParams {
    pub r: f64,
    pub kappa: f64,
    pub nbar: f64,
}

impl TargetParams {
    pub fn new(r: f64, kappa: f64, nbar: f64) -> Result<Self> {
        let p = Self { r, kappa, nbar };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_param("r", self.r, (0.0..=1.0).contains(&self.r), "must lie in [0, 1]")?;
        check_param(
            "kappa",
            self.kappa,
            (0.0..=1.0).contains(&self.kappa),
            "must lie in [0, 1]",
        )?;
        check_param("nbar", self.nbar, self.nbar >= 0.0, "must be non-negative")
    }

    /// Auxiliary transmissivity t = 1 - r.
    pub fn t(&self) -> f64 {
        1.0 - self.r
    }

    /// Primary transmissivity tau = 1 - kappa.
    pub fn tau(&self) -> f64 {
        1.0 - self.kappa
    }

    /// Effective target reflectivity t kappa.
    pub fn reflectivity(&self) -> f64 {
        self.t() * self.kappa
    }

    /// Effective target transmissivity t tau.
    pub fn transmissivity(&self) -> f64 {
        self.t() * self.tau()
    }
}

/// Probe state sent towards the target.
#[derive(Debug, Clone, PartialEq)]
pub enum Probe {
    Coherent {
        ns: f64,
    },
    Tmsv {
        ns: f64,
    },
    /// Single-mode probe sum_n C_n |n>.
    FockSingle {
        coeffs: Vec<f64>,
    },
    /// Signal-idler probe sum_n C_n |n, n>.
    FockTwo {
        coeffs: Vec<f64>,
    },
}

impl Probe {
    pub fn validate(&self) -> Result<()> {
        match self {
            Probe::Coherent { ns } | Probe::Tmsv { ns } => check_param("ns", *ns, *ns >= 0.0, "must be non-negative"),
            Probe::FockSingle { coeffs } | Probe::FockTwo { coeffs } => check_normalized(coeffs),
        }
    }

    /// Mean photon number in the signal mode.
    pub fn mean_photons(&self) -> f64 {
        match self {
            Probe::Coherent { ns } | Probe::Tmsv { ns } => *ns,
            Probe::FockSingle { coeffs } | Probe::FockTwo { coeffs } => {
                coeffs.iter().enumerate().map(|(n, c)| n as f64 * c * c).sum()
            }
        }
    }

    pub fn has_idler(&self) -> bool {
        matches!(self, Probe::Tmsv { .. } | Probe::FockTwo { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Probe::Coherent { .. } => "coherent",
            Probe::Tmsv { .. } => "tmsv",
            Probe::FockSingle { .. } => "fock-single",
            Probe::FockTwo { .. } => "fock-two",
        }
    }
}

pub(crate) fn check_normalized(coeffs: &[f64]) -> Result<()> {
    if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::Unnormalized(f64::NAN));
    }
    let norm: f64 = coeffs.iter().map(|c| c * c).sum();
    if (norm - 1.0).abs() > NORM_TOL {
        return Err(Error::Unnormalized(norm));
    }
    Ok(())
}

/// Gaussian states for both hypotheses on the detected modes.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisPair {
    pub rho0: GaussianState,
    pub rho1: GaussianState,
    pub probe: Probe,
    pub params: TargetParams,
    pub mode_labels: Vec<&'static str>,
}

/// Closed-form hypotheses for a coherent probe.
pub fn rho_pair_coherent_closed(params: &TargetParams, ns: f64) -> Result<HypothesisPair> {
    params.validate()?;
    check_param("ns", ns, ns >= 0.0, "must be non-negative")?;
    let rho0 = GaussianState::thermal(params.nbar)?;
    let amp = GaussianState::coherent(ns * params.reflectivity())?;
    let noise = GaussianState::thermal(params.nbar * params.transmissivity())?;
    let rho1 = GaussianState::from_parts(amp.displacement().clone(), noise.covariance().clone());
    Ok(HypothesisPair {
        rho0,
        rho1,
        probe: Probe::Coherent { ns },
        params: *params,
        mode_labels: vec!["return"],
    })
}

/// Closed-form hypotheses for a TMSV probe, modes (return, idler).
pub fn rho_pair_tmsv_closed(params: &TargetParams, ns: f64) -> Result<HypothesisPair> {
    params.validate()?;
    check_param("ns", ns, ns >= 0.0, "must be non-negative")?;
    let m = TmsvMoments::new(params, ns);
    let rho0 = GaussianState::thermal(params.nbar)?.tensor(&GaussianState::thermal(ns)?);
    let c = m.correlation();
    #[rustfmt::skip]
    let sigma1 = nalgebra::DMatrix::from_row_slice(4, 4, &[
        m.a, 0.0, c, 0.0,
        0.0, m.a, 0.0, -c,
        c, 0.0, m.s, 0.0,
        0.0, -c, 0.0, m.s,
    ]);
    let rho1 = GaussianState::from_parts(nalgebra::DVector::zeros(4), sigma1);
    Ok(HypothesisPair {
        rho0,
        rho1,
        probe: Probe::Tmsv { ns },
        params: *params,
        mode_labels: vec!["return", "idler"],
    })
}

/// Scalars entering the TMSV covariance matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TmsvMoments {
    pub s: f64,
    pub b0: f64,
    pub b: f64,
    pub a: f64,
    pub cq: f64,
    pub kappa: f64,
}

impl TmsvMoments {
    pub fn new(params: &TargetParams, ns: f64) -> Self {
        let t = params.t();
        let b = 2.0 * params.nbar * params.transmissivity() + 1.0;
        Self {
            s: 2.0 * ns + 1.0,
            b0: 2.0 * params.nbar + 1.0,
            b,
            a: 2.0 * params.kappa * ns * t + b,
            cq: 2.0 * (t * ns * (ns + 1.0)).sqrt(),
            kappa: params.kappa,
        }
    }

    /// Return-idler correlation sqrt(kappa) C_q.
    pub fn correlation(&self) -> f64 {
        self.kappa.sqrt() * self.cq
    }
}

/// Propagates a probe through the absorbing target and returns the detected state.
///
/// The probe occupies its own modes; `signal_mode` selects the one sent to the
/// target. The output lists the return mode first, then the remaining probe
/// modes in their original order.
pub fn rho1_pipeline(probe: &GaussianState, signal_mode: usize, params: &TargetParams) -> Result<GaussianState> {
    params.validate()?;
    let k = probe.n_modes();
    if signal_mode >= k {
        return Err(Error::InvalidModes(format!(
            "signal mode {signal_mode} out of range for a {k}-mode probe"
        )));
    }
    // (thermal, device 1, device 2, probe...)
    let full = GaussianState::thermal(params.nbar)?
        .tensor(&GaussianState::vacuum(2)?)
        .tensor(probe);
    let n = full.n_modes();
    let sig = 3 + signal_mode;
    let aux =
        SymplecticOp::beamsplitter(params.t(), 0, 1, n)?.then(&SymplecticOp::beamsplitter(params.t(), sig, 2, n)?)?;
    let keep: Vec<usize> = std::iter::once(0).chain(3..n).collect();
    let lossy = full.apply(&aux)?.partial_trace(&keep)?;

    let n = lossy.n_modes();
    let sig = 1 + signal_mode;
    // output 0 = sqrt(tau) thermal' + sqrt(kappa) signal'
    let primary = SymplecticOp::beamsplitter(params.tau(), 0, sig, n)?;
    let keep: Vec<usize> = (0..n).filter(|&m| m != sig).collect();
    lossy.apply(&primary)?.partial_trace(&keep)
}

/// Hypotheses built by full propagation, for the Gaussian probe families.
pub fn hypothesis_pair_pipeline(params: &TargetParams, probe: &Probe) -> Result<HypothesisPair> {
    probe.validate()?;
    let (state, labels) = match probe {
        Probe::Coherent { ns } => (GaussianState::coherent(*ns)?, vec!["return"]),
        Probe::Tmsv { ns } => (GaussianState::tmsv(*ns)?, vec!["return", "idler"]),
        _ => {
            return Err(Error::InvalidModes(
                "Fock-coefficient probes are not Gaussian; use the Fock oracle".into(),
            ))
        }
    };
    let rho1 = rho1_pipeline(&state, 0, params)?;
    let mut rho0 = GaussianState::thermal(params.nbar)?;
    if state.n_modes() > 1 {
        let rest: Vec<usize> = (1..state.n_modes()).collect();
        rho0 = rho0.tensor(&state.partial_trace(&rest)?);
    }
    Ok(HypothesisPair {
        rho0,
        rho1,
        probe: probe.clone(),
        params: *params,
        mode_labels: labels,
    })
}

/// Mode-transfer matrices of the lossy beam splitter, (T, A) with T = sqrt(t) U, A = sqrt(r) U.
pub fn transmission_absorption_matrices(params: &TargetParams) -> Result<(Matrix2<f64>, Matrix2<f64>)> {
    params.validate()?;
    let (k, tau) = (params.kappa.sqrt(), params.tau().sqrt());
    let u = Matrix2::new(k, tau, tau, -k);
    Ok((u * params.t().sqrt(), u * params.r.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn max_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn coherent_closed_form_values() {
        let p = TargetParams::new(0.0, 0.01, 2.0).unwrap();
        let pair = rho_pair_coherent_closed(&p, 0.5).unwrap();
        assert_abs_diff_eq!(pair.rho1.displacement()[0], 2.0 * 0.005f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(pair.rho1.covariance()[(0, 0)], 4.96, epsilon = 1e-14);

        let p = TargetParams::new(1.0, 0.01, 2.0).unwrap();
        let pair = rho_pair_coherent_closed(&p, 0.5).unwrap();
        assert_eq!(pair.rho1, GaussianState::vacuum(1).unwrap());
    }

    #[test]
    fn tmsv_closed_form_values() {
        let p = TargetParams::new(0.3, 0.01, 5.0).unwrap();
        let m = TmsvMoments::new(&p, 1.0);
        assert_abs_diff_eq!(m.a, 2.0 * 0.01 * 0.7 + 2.0 * 5.0 * 0.7 * 0.99 + 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(m.cq, 2.0 * 1.4f64.sqrt(), epsilon = 1e-14);

        let p = TargetParams::new(1.0, 0.2, 3.0).unwrap();
        let pair = rho_pair_tmsv_closed(&p, 0.8).unwrap();
        let expect = GaussianState::vacuum(1)
            .unwrap()
            .tensor(&GaussianState::thermal(0.8).unwrap());
        assert!(max_diff(pair.rho1.covariance(), expect.covariance()) < 1e-15);
    }

    #[test]
    fn pipeline_matches_closed_forms() {
        let p = TargetParams::new(0.3, 0.01, 1.0).unwrap();
        let pipe = hypothesis_pair_pipeline(&p, &Probe::Coherent { ns: 0.5 }).unwrap();
        let closed = rho_pair_coherent_closed(&p, 0.5).unwrap();
        assert!(max_diff(pipe.rho1.covariance(), closed.rho1.covariance()) < 1e-12);
        assert!((pipe.rho1.displacement() - closed.rho1.displacement()).amax() < 1e-12);

        let pipe = hypothesis_pair_pipeline(&p, &Probe::Tmsv { ns: 1.0 }).unwrap();
        let closed = rho_pair_tmsv_closed(&p, 1.0).unwrap();
        assert!(max_diff(pipe.rho1.covariance(), closed.rho1.covariance()) < 1e-12);
        assert!(max_diff(pipe.rho0.covariance(), closed.rho0.covariance()) < 1e-12);
    }

    #[test]
    fn vacuum_probe_dark_background() {
        let p = TargetParams::new(0.4, 0.3, 0.0).unwrap();
        let out = rho1_pipeline(&GaussianState::vacuum(1).unwrap(), 0, &p).unwrap();
        assert_eq!(out.n_modes(), 1);
        assert!(max_diff(out.covariance(), &DMatrix::identity(2, 2)) < 1e-15);
    }

    #[test]
    fn detector_photon_number_drops_with_absorption() {
        let p0 = TargetParams::new(0.0, 0.05, 1.5).unwrap();
        let p1 = TargetParams::new(0.2, 0.05, 1.5).unwrap();
        let a = rho1_pipeline(&GaussianState::coherent(0.7).unwrap(), 0, &p0).unwrap();
        let b = rho1_pipeline(&GaussianState::coherent(0.7).unwrap(), 0, &p1).unwrap();
        let expect = p1.reflectivity() * 0.7 + p1.transmissivity() * 1.5;
        assert_abs_diff_eq!(b.mean_photon_number(0), expect, epsilon = 1e-12);
        assert!(b.mean_photon_number(0) < a.mean_photon_number(0));
    }

    #[test]
    fn transfer_matrices_conserve_photons() {
        let p = TargetParams::new(0.3, 0.01, 1.0).unwrap();
        let (t, a) = transmission_absorption_matrices(&p).unwrap();
        assert!((t.transpose() * t - Matrix2::identity() * 0.7).amax() < 1e-12);
        assert!((t.transpose() * t + a.transpose() * a - Matrix2::identity()).amax() < 1e-12);
        let p = TargetParams::new(0.0, 0.4, 1.0).unwrap();
        assert_eq!(transmission_absorption_matrices(&p).unwrap().1, Matrix2::zeros());
    }

    #[test]
    fn rejects_bad_params() {
        assert!(TargetParams::new(1.2, 0.1, 1.0).is_err());
        assert!(TargetParams::new(0.2, -0.1, 1.0).is_err());
        assert!(TargetParams::new(0.2, 0.1, f64::NAN).is_err());
        assert!(Probe::FockSingle { coeffs: vec![0.5, 0.5] }.validate().is_err());
        assert!(rho1_pipeline(
            &GaussianState::vacuum(1).unwrap(),
            1,
            &TargetParams::new(0.1, 0.1, 0.1).unwrap()
        )
        .is_err());
    }
}
