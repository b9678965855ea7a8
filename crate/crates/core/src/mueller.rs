//! Mueller calculus for the polarimeter optics.
//!
//! Retarders follow the convention in which the slow axis acquires a phase
//! lag `exp(-iδ)` (fields written as `exp(i(ωt − kz))`). With that choice a
//! quarter-wave plate at χ followed by a horizontal polarizer transmits
//! ¼(2I + Q + Q·cos4χ + U·sin4χ + 2V·sin2χ).

use std::ops::Mul;

use nalgebra::{Matrix4, Vector4};

use crate::domain::StokesVector;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuellerMatrix(pub Matrix4<f64>);

impl MuellerMatrix {
    pub fn identity() -> Self {
        Self(Matrix4::identity())
    }

    pub fn apply(&self, s: &StokesVector) -> StokesVector {
        let out = self.0 * Vector4::new(s.i, s.q, s.u, s.v);
        StokesVector::new_unchecked(out[0], out[1], out[2], out[3])
    }

    /// `self` followed by `next` in the beam path.
    pub fn then(&self, next: &MuellerMatrix) -> MuellerMatrix {
        MuellerMatrix(next.0 * self.0)
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    /// The same element physically rotated by `deg` about the beam axis.
    pub fn rotated(&self, deg: f64) -> MuellerMatrix {
        MuellerMatrix(frame_rotation(-deg) * self.0 * frame_rotation(deg))
    }
}

impl Mul for MuellerMatrix {
    type Output = MuellerMatrix;

    fn mul(self, rhs: MuellerMatrix) -> MuellerMatrix {
        MuellerMatrix(self.0 * rhs.0)
    }
}

/// Stokes-space rotation of the reference frame by `deg`.
fn frame_rotation(deg: f64) -> Matrix4<f64> {
    let (s, c) = (2.0 * deg).to_radians().sin_cos();
    #[rustfmt::skip]
    let m = Matrix4::new(
        1.0, 0.0, 0.0, 0.0,
        0.0,   c,   s, 0.0,
        0.0,  -s,   c, 0.0,
        0.0, 0.0, 0.0, 1.0,
    );
    m
}

/// Ideal linear polarizer with transmission axis at `axis_deg`.
pub fn mueller_lp(axis_deg: f64) -> MuellerMatrix {
    let (s, c) = (2.0 * axis_deg).to_radians().sin_cos();
    #[rustfmt::skip]
    let m = Matrix4::new(
        1.0,   c,     s,     0.0,
          c,   c * c, c * s, 0.0,
          s,   c * s, s * s, 0.0,
        0.0, 0.0,   0.0,     0.0,
    ) * 0.5;
    MuellerMatrix(m)
}

/// Linear retarder with fast axis at `fast_axis_deg` and retardance `retardance_deg`.
pub fn mueller_retarder(fast_axis_deg: f64, retardance_deg: f64) -> MuellerMatrix {
    let (sd, cd) = retardance_deg.to_radians().sin_cos();
    #[rustfmt::skip]
    let aligned = Matrix4::new(
        1.0, 0.0, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0,
        0.0, 0.0,  cd, -sd,
        0.0, 0.0,  sd,  cd,
    );
    MuellerMatrix(aligned).rotated(fast_axis_deg)
}

pub fn mueller_qwp(chi_deg: f64) -> MuellerMatrix {
    mueller_retarder(chi_deg, 90.0)
}

pub fn mueller_hwp(theta_deg: f64) -> MuellerMatrix {
    mueller_retarder(theta_deg, 180.0)
}

/// Intensity behind a QWP at `chi_deg` and a horizontal polarizer.
pub fn polarimeter_intensity(s: &StokesVector, chi_deg: f64) -> Result<f64> {
    s.validate()?;
    let chi = chi_deg.to_radians();
    Ok(0.25
        * (2.0 * s.i
            + s.q
            + s.q * (4.0 * chi).cos()
            + s.u * (4.0 * chi).sin()
            + 2.0 * s.v * (2.0 * chi).sin()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;

    type Jones = [[Complex64; 2]; 2];

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn jmul(a: &Jones, b: &Jones) -> Jones {
        let mut out = [[c(0.0, 0.0); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        out
    }

    fn dagger(a: &Jones) -> Jones {
        [[a[0][0].conj(), a[1][0].conj()], [a[0][1].conj(), a[1][1].conj()]]
    }

    fn rot(deg: f64) -> Jones {
        let (s, co) = deg.to_radians().sin_cos();
        [[c(co, 0.0), c(s, 0.0)], [c(-s, 0.0), c(co, 0.0)]]
    }

    // Slow axis lags by exp(-iδ); fast axis at `theta`.
    fn jones_retarder(theta: f64, delta_deg: f64) -> Jones {
        let d = Complex64::from_polar(1.0, -delta_deg.to_radians());
        let diag = [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), d]];
        jmul(&rot(-theta), &jmul(&diag, &rot(theta)))
    }

    fn jones_lp(theta: f64) -> Jones {
        let diag = [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.0, 0.0)]];
        jmul(&rot(-theta), &jmul(&diag, &rot(theta)))
    }

    // Basis matching V = 2·Im(Ex·Ey*): s_k = E† σ_k E.
    fn sigmas() -> [Jones; 4] {
        let z = c(0.0, 0.0);
        let one = c(1.0, 0.0);
        [
            [[one, z], [z, one]],
            [[one, z], [z, -one]],
            [[z, one], [one, z]],
            [[z, c(0.0, 1.0)], [c(0.0, -1.0), z]],
        ]
    }

    /// M_ij = ½ Tr(J† σ_i J σ_j).
    fn lift(j: &Jones) -> Matrix4<f64> {
        let s = sigmas();
        let jd = dagger(j);
        Matrix4::from_fn(|i, k| {
            let m = jmul(&jd, &jmul(&s[i], &jmul(j, &s[k])));
            0.5 * (m[0][0] + m[1][1]).re
        })
    }

    fn stokes_of(e: [Complex64; 2]) -> StokesVector {
        let s = sigmas();
        let comp = |k: usize| {
            let se = [
                s[k][0][0] * e[0] + s[k][0][1] * e[1],
                s[k][1][0] * e[0] + s[k][1][1] * e[1],
            ];
            (e[0].conj() * se[0] + e[1].conj() * se[1]).re
        };
        StokesVector::new_unchecked(comp(0), comp(1), comp(2), comp(3))
    }

    fn close(a: &Matrix4<f64>, b: &Matrix4<f64>, tol: f64) -> bool {
        (a - b).abs().max() < tol
    }

    #[test]
    fn right_circular_has_positive_v() {
        let r = [c(1.0 / 2f64.sqrt(), 0.0), c(0.0, -1.0 / 2f64.sqrt())];
        let s = stokes_of(r);
        assert!((s.v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lp_examples() {
        let lp = mueller_lp(0.0);
        assert!((lp.apply(&StokesVector::new_unchecked(1.0, 1.0, 0.0, 0.0)).i - 1.0).abs() < 1e-15);
        assert!(lp.apply(&StokesVector::new_unchecked(1.0, -1.0, 0.0, 0.0)).i.abs() < 1e-15);
        assert!((lp.apply(&StokesVector::new_unchecked(1.0, 0.0, 0.0, 0.0)).i - 0.5).abs() < 1e-15);
    }

    #[test]
    fn qwp_examples() {
        let h = StokesVector::new_unchecked(1.0, 1.0, 0.0, 0.0);
        let out = mueller_qwp(0.0).apply(&h);
        assert!((out.q - 1.0).abs() < 1e-15 && out.u.abs() < 1e-15 && out.v.abs() < 1e-15);
        let out = mueller_qwp(45.0).apply(&h);
        assert!((out.v.abs() - 1.0).abs() < 1e-12);
        assert!((out.i - 1.0).abs() < 1e-15);
        // 30°: Jones oracle on an arbitrary partially polarized input
        let s = StokesVector::new_unchecked(1.0, 0.3, -0.4, 0.5);
        let want = lift(&jones_retarder(30.0, 90.0)) * Vector4::new(s.i, s.q, s.u, s.v);
        let got = mueller_qwp(30.0).apply(&s);
        for (g, w) in got.to_array().iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn hwp_examples() {
        let d = StokesVector::new_unchecked(1.0, 0.0, 1.0, 0.0);
        let out = mueller_hwp(0.0).apply(&d);
        assert!((out.u + 1.0).abs() < 1e-12 && out.q.abs() < 1e-12);
        let h = StokesVector::new_unchecked(1.0, 1.0, 0.0, 0.0);
        let out = mueller_hwp(45.0).apply(&h);
        assert!((out.q + 1.0).abs() < 1e-12);
        let out = mueller_hwp(22.5).apply(&h);
        assert!((out.u - 1.0).abs() < 1e-12 && out.q.abs() < 1e-12);
    }

    #[test]
    fn intensity_examples() {
        let unpol = StokesVector::new_unchecked(1.0, 0.0, 0.0, 0.0);
        for chi in [0.0, 13.0, 45.0, 90.0, 271.0] {
            assert!((polarimeter_intensity(&unpol, chi).unwrap() - 0.5).abs() < 1e-15);
        }
        let h = StokesVector::new_unchecked(1.0, 1.0, 0.0, 0.0);
        assert!((polarimeter_intensity(&h, 0.0).unwrap() - 1.0).abs() < 1e-15);
        let r = StokesVector::new_unchecked(1.0, 0.0, 0.0, 1.0);
        assert!((polarimeter_intensity(&r, 45.0).unwrap() - 1.0).abs() < 1e-15);
        let composed = mueller_qwp(45.0).then(&mueller_lp(0.0)).apply(&r);
        assert!((composed.i - 1.0).abs() < 1e-12);
        assert!(polarimeter_intensity(&StokesVector::new_unchecked(1.0, 1.0, 1.0, 0.0), 0.0).is_err());
    }

    #[test]
    fn qwp_four_times_is_identity_and_hwp_twice() {
        for a in [0.0, 17.0, 45.0, 123.4] {
            let q = mueller_qwp(a);
            assert!(close(&(q * q * q * q).0, &Matrix4::identity(), 1e-12));
            let h = mueller_hwp(a);
            assert!(close(&(h * h).0, &Matrix4::identity(), 1e-12));
            let lp = mueller_lp(a);
            assert!(close(&(lp * lp).0, &lp.0, 1e-12));
        }
    }

    proptest! {
        #[test]
        fn mueller_matches_jones_lift(theta in -360.0f64..360.0, delta in -360.0f64..360.0) {
            prop_assert!(close(&mueller_retarder(theta, delta).0, &lift(&jones_retarder(theta, delta)), 1e-12));
            prop_assert!(close(&mueller_qwp(theta).0, &lift(&jones_retarder(theta, 90.0)), 1e-12));
            prop_assert!(close(&mueller_hwp(theta).0, &lift(&jones_retarder(theta, 180.0)), 1e-12));
            prop_assert!(close(&mueller_lp(theta).0, &lift(&jones_lp(theta)), 1e-12));
        }

        #[test]
        fn polarimeter_formula_matches_composition(
            chi in -360.0f64..360.0,
            th in 0.0f64..180.0, ell in -1.0f64..1.0, dop in 0.0f64..1.0,
        ) {
            let pol = StokesVector::elliptical(1.0, th, ell).unwrap();
            let s = StokesVector::new_unchecked(1.0, dop * pol.q, dop * pol.u, dop * pol.v);
            let closed = polarimeter_intensity(&s, chi).unwrap();
            let composed = mueller_qwp(chi).then(&mueller_lp(0.0)).apply(&s).i;
            prop_assert!((closed - composed).abs() < 1e-12);
            // I0 + Ī0 = I
            let bar = polarimeter_intensity(&s.orthogonal(), chi).unwrap();
            prop_assert!((closed + bar - s.i).abs() < 1e-12);
            // 180° periodicity
            let shifted = polarimeter_intensity(&s, chi + 180.0).unwrap();
            prop_assert!((closed - shifted).abs() < 1e-12);
        }

        #[test]
        fn passive_elements_preserve_physicality(
            theta in -180.0f64..180.0, delta in 0.0f64..360.0,
            th in 0.0f64..180.0, ell in -1.0f64..1.0, dop in 0.0f64..1.0, i in 0.0f64..10.0,
        ) {
            let pol = StokesVector::elliptical(i, th, ell).unwrap();
            let s = StokesVector::new_unchecked(i, dop * pol.q, dop * pol.u, dop * pol.v);
            for m in [mueller_retarder(theta, delta), mueller_lp(theta), mueller_qwp(theta), mueller_hwp(theta)] {
                let out = m.apply(&s);
                prop_assert!(out.polarized_intensity() <= out.i * (1.0 + 1e-12) + 1e-12);
                prop_assert!(out.i <= s.i * (1.0 + 1e-12) + 1e-15);
            }
            for m in [mueller_retarder(theta, delta), mueller_qwp(theta), mueller_hwp(theta)] {
                let out = m.apply(&s);
                prop_assert!((out.i - s.i).abs() <= 1e-12 * (1.0 + s.i));
            }
        }
    }
}
