//! Polarization state of the biexciton–exciton photon pair when the exciton
//! eigenstates are elliptical (non-collinear dipoles).
//!
//! Basis order is |H_XX H_X⟩, |H_XX V_X⟩, |V_XX H_X⟩, |V_XX V_X⟩. Circular
//! states are R = (H − iV)/√2 and L = (H + iV)/√2, matching the Stokes
//! convention where R has V = +1.

use nalgebra::{Matrix4, SymmetricEigen, Vector2, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reduced Planck constant in μeV·ns.
pub const HBAR_UEV_NS: f64 = 0.658_211_956_9;

const I: Complex64 = Complex64::new(0.0, 1.0);

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Splitting of the hybridized pair, `sqrt(S² + S_c²)`.
pub fn hybridized_splitting(s_uev: f64, s_c_uev: f64) -> f64 {
    s_uev.hypot(s_c_uev)
}

/// Mixing coefficients with α² + β² = 1 and β/α = S_c / (S_r + S).
pub fn eigenstate_coefficients(s_uev: f64, s_c_uev: f64) -> Result<(f64, f64)> {
    if !(s_uev.is_finite() && s_c_uev.is_finite()) || s_uev < 0.0 || s_c_uev < 0.0 {
        return Err(Error::Domain(format!(
            "splittings must be finite and >= 0, got S={s_uev}, S_c={s_c_uev}"
        )));
    }
    if s_uev == 0.0 && s_c_uev == 0.0 {
        return Err(Error::Degenerate(
            "S = S_c = 0: the eigenstates are degenerate and any basis is valid".into(),
        ));
    }
    let a = hybridized_splitting(s_uev, s_c_uev) + s_uev;
    let norm = a.hypot(s_c_uev);
    Ok((a / norm, s_c_uev / norm))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonCollinearParams {
    pub s_uev: f64,
    pub s_c_uev: f64,
    pub s_r_uev: f64,
    pub alpha: f64,
    pub beta: f64,
    pub tau_ns: f64,
}

impl NonCollinearParams {
    pub fn new(s_uev: f64, s_c_uev: f64, tau_ns: f64) -> Result<Self> {
        if !(tau_ns.is_finite() && tau_ns >= 0.0) {
            return Err(Error::Domain(format!("tau must be finite and >= 0, got {tau_ns}")));
        }
        let (alpha, beta) = eigenstate_coefficients(s_uev, s_c_uev)?;
        Ok(Self {
            s_uev,
            s_c_uev,
            s_r_uev: hybridized_splitting(s_uev, s_c_uev),
            alpha,
            beta,
            tau_ns,
        })
    }

    /// Which-path phase Sτ/ħ in radians.
    pub fn phase_rad(&self) -> f64 {
        self.s_uev * self.tau_ns / HBAR_UEV_NS
    }
}

/// Single-photon eigenstates in the (H, V) basis.
///
/// The biexciton photon follows P = αH − iβV, Q = αV − iβH. The exciton
/// photon carries the conjugate ellipticity, P = αH + iβV, Q = αV + iβH, as
/// it must for the cascade to give cross-circular pairs in the circular limit
/// and Φ⁺ at zero delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenBasis {
    pub p_xx: Vector2<Complex64>,
    pub q_xx: Vector2<Complex64>,
    pub p_x: Vector2<Complex64>,
    pub q_x: Vector2<Complex64>,
}

impl EigenBasis {
    pub fn new(alpha: f64, beta: f64) -> Self {
        let (a, b) = (c(alpha), c(beta));
        Self {
            p_xx: Vector2::new(a, -I * b),
            q_xx: Vector2::new(-I * b, a),
            p_x: Vector2::new(a, I * b),
            q_x: Vector2::new(I * b, a),
        }
    }
}

fn kron(a: &Vector2<Complex64>, b: &Vector2<Complex64>) -> Vector4<Complex64> {
    Vector4::new(a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1])
}

/// Two-photon polarization density matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPhotonState {
    pub rho: Matrix4<Complex64>,
}

impl TwoPhotonState {
    pub fn from_pure(psi: &Vector4<Complex64>) -> Result<Self> {
        let n = psi.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::Domain("state vector has zero norm".into()));
        }
        let psi = psi / c(n);
        Ok(Self {
            rho: psi * psi.adjoint(),
        })
    }

    pub fn trace(&self) -> Complex64 {
        self.rho.trace()
    }

    pub fn purity(&self) -> f64 {
        (self.rho * self.rho).trace().re
    }

    /// Largest deviation from Hermiticity.
    pub fn hermiticity_error(&self) -> f64 {
        (self.rho - self.rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn eigenvalues(&self) -> [f64; 4] {
        let h = (self.rho + self.rho.adjoint()) * c(0.5);
        let e = SymmetricEigen::new(h).eigenvalues;
        let mut v = [e[0], e[1], e[2], e[3]];
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn validate(&self) -> Result<()> {
        if self.hermiticity_error() > 1e-12 {
            return Err(Error::Domain("density matrix is not Hermitian".into()));
        }
        if (self.trace() - c(1.0)).norm() > 1e-12 {
            return Err(Error::Domain("density matrix trace is not 1".into()));
        }
        if self.eigenvalues()[0] < -1e-10 {
            return Err(Error::Domain("density matrix is not positive semidefinite".into()));
        }
        Ok(())
    }

    /// ⟨ψ|ρ|ψ⟩ for a normalized ψ.
    pub fn expectation(&self, psi: &Vector4<Complex64>) -> f64 {
        (psi.adjoint() * self.rho * psi)[(0, 0)].re
    }
}

pub fn two_photon_state(p: &NonCollinearParams) -> TwoPhotonState {
    two_photon_state_with_phase(p.alpha, p.beta, p.phase_rad()).expect("validated parameters")
}

/// `(|P_XX P_X⟩ + e^{iφ}|Q_XX Q_X⟩)/√2` for explicit α, β and phase φ.
pub fn two_photon_state_with_phase(alpha: f64, beta: f64, phase_rad: f64) -> Result<TwoPhotonState> {
    if !(alpha.is_finite() && beta.is_finite() && phase_rad.is_finite()) {
        return Err(Error::Domain("state parameters must be finite".into()));
    }
    if ((alpha * alpha + beta * beta) - 1.0).abs() > 1e-12 {
        return Err(Error::Domain(format!("alpha² + beta² must be 1, got {}", alpha * alpha + beta * beta)));
    }
    let b = EigenBasis::new(alpha, beta);
    let psi = (kron(&b.p_xx, &b.p_x) + kron(&b.q_xx, &b.q_x) * Complex64::from_polar(1.0, phase_rad))
        * c(std::f64::consts::FRAC_1_SQRT_2);
    TwoPhotonState::from_pure(&psi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BellState {
    PhiPlus,
    PhiMinus,
    PsiPlus,
    PsiMinus,
}

impl BellState {
    pub const ALL: [BellState; 4] = [BellState::PhiPlus, BellState::PhiMinus, BellState::PsiPlus, BellState::PsiMinus];
}

impl std::str::FromStr for BellState {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phi_plus" => Ok(BellState::PhiPlus),
            "phi_minus" => Ok(BellState::PhiMinus),
            "psi_plus" => Ok(BellState::PsiPlus),
            "psi_minus" => Ok(BellState::PsiMinus),
            other => Err(Error::parse("bell", format!("unknown Bell state {other:?}"))),
        }
    }
}

/// Frame in which a Bell state is written.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BellBasis {
    Hv,
    /// H and V replaced by the P and Q eigenstates of each photon.
    Eigen { alpha: f64, beta: f64 },
}

pub fn bell_vector(bell: BellState, basis: BellBasis) -> Vector4<Complex64> {
    let h = Vector2::new(c(1.0), c(0.0));
    let v = Vector2::new(c(0.0), c(1.0));
    let (h1, v1, h2, v2) = match basis {
        BellBasis::Hv => (h, v, h, v),
        BellBasis::Eigen { alpha, beta } => {
            let b = EigenBasis::new(alpha, beta);
            (b.p_xx, b.q_xx, b.p_x, b.q_x)
        }
    };
    let (a, b, sign) = match bell {
        BellState::PhiPlus => (kron(&h1, &h2), kron(&v1, &v2), 1.0),
        BellState::PhiMinus => (kron(&h1, &h2), kron(&v1, &v2), -1.0),
        BellState::PsiPlus => (kron(&h1, &v2), kron(&v1, &h2), 1.0),
        BellState::PsiMinus => (kron(&h1, &v2), kron(&v1, &h2), -1.0),
    };
    (a + b * c(sign)) * c(std::f64::consts::FRAC_1_SQRT_2)
}

pub fn fidelity_to_bell(state: &TwoPhotonState, bell: BellState, basis: BellBasis) -> f64 {
    state.expectation(&bell_vector(bell, basis))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationBasis {
    Rectilinear,
    Diagonal,
    Circular,
}

impl CorrelationBasis {
    /// The two orthogonal single-photon states of the basis.
    pub fn states(&self) -> [Vector2<Complex64>; 2] {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            CorrelationBasis::Rectilinear => [Vector2::new(c(1.0), c(0.0)), Vector2::new(c(0.0), c(1.0))],
            CorrelationBasis::Diagonal => [Vector2::new(c(r), c(r)), Vector2::new(c(r), c(-r))],
            CorrelationBasis::Circular => [Vector2::new(c(r), -I * r), Vector2::new(c(r), I * r)],
        }
    }
}

/// `(P_co − P_cross)/(P_co + P_cross)` from coincidence probabilities.
pub fn degree_of_correlation(state: &TwoPhotonState, basis: CorrelationBasis) -> Result<f64> {
    let [a, b] = basis.states();
    let p = |x: &Vector2<Complex64>, y: &Vector2<Complex64>| state.expectation(&kron(x, y));
    let co = p(&a, &a) + p(&b, &b);
    let cross = p(&a, &b) + p(&b, &a);
    let total = co + cross;
    if total.abs() < 1e-300 {
        return Err(Error::Domain("zero coincidence probability".into()));
    }
    Ok((co - cross) / total)
}

/// One row of a parameter sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub s_uev: f64,
    pub s_c_uev: f64,
    pub tau_ns: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Fidelity to Φ⁺ written in H/V.
    pub fidelity: f64,
    pub c_rect: f64,
    pub c_diag: f64,
    pub c_circ: f64,
}

pub fn sweep_row(s_uev: f64, s_c_uev: f64, tau_ns: f64) -> Result<SweepRow> {
    let p = NonCollinearParams::new(s_uev, s_c_uev, tau_ns)?;
    let st = two_photon_state(&p);
    Ok(SweepRow {
        s_uev,
        s_c_uev,
        tau_ns,
        alpha: p.alpha,
        beta: p.beta,
        fidelity: fidelity_to_bell(&st, BellState::PhiPlus, BellBasis::Hv),
        c_rect: degree_of_correlation(&st, CorrelationBasis::Rectilinear)?,
        c_diag: degree_of_correlation(&st, CorrelationBasis::Diagonal)?,
        c_circ: degree_of_correlation(&st, CorrelationBasis::Circular)?,
    })
}
